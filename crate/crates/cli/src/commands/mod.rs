pub mod gen_data;
pub mod predict;
pub mod report;
pub mod train;
