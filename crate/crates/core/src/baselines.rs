//! GCN and GIN graph-classification baselines sharing the window-graph
//! dataset and training harness.
//!
//! Both use two of their respective convolution layers, sum-pool node features
//! across the node dimension, and classify with two linear layers separated by
//! dropout and a final softmax. Node features are the flattened raw windows;
//! the GCN additionally L1-row-normalizes them.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{GradMap, GraphClassifier, ModelKind};
use crate::error::{Error, Result};
use crate::graph::LabeledGraph;
use crate::nn::{
    apply_buffer_updates, batch_norm, cross_entropy_loss, dropout, linear, normalize_adjacency,
    register_batch_norm, with_self_loops, xavier_uniform, BoundParams, BufferUpdates, Mode,
    ParameterStore,
};
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Gcn,
    Gin,
}

/// Baseline hyper-parameters; the per-kind constructors carry the reference
/// defaults (GCN hidden 32 with row normalization, GIN hidden 64).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub dropout_p: f64,
    pub num_classes: usize,
}

impl BaselineConfig {
    pub fn gcn(num_classes: usize) -> Self {
        Self {
            kind: BaselineKind::Gcn,
            hidden_dim: 32,
            num_layers: 2,
            dropout_p: 0.5,
            num_classes,
        }
    }

    pub fn gin(num_classes: usize) -> Self {
        Self {
            kind: BaselineKind::Gin,
            hidden_dim: 64,
            num_layers: 2,
            dropout_p: 0.5,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.num_layers == 0 || self.num_classes == 0 {
            return Err(Error::InvalidConfig(
                "hidden_dim, num_layers and num_classes must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::InvalidConfig("dropout_p must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// L1 row normalization with a zero-row guard.
pub fn row_normalize(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let norm: f64 = row.iter().map(|v| v.abs()).sum();
        if norm > 0.0 {
            row.mapv_inplace(|v| v / norm);
        }
    }
    out
}

#[derive(Clone)]
pub struct BaselineModel {
    config: BaselineConfig,
    window_size: usize,
    store: ParameterStore,
}

impl BaselineModel {
    pub fn new(config: BaselineConfig, window_size: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        if window_size == 0 {
            return Err(Error::InvalidConfig("window_size must be >= 1".into()));
        }
        let mut store = ParameterStore::new();
        let h = config.hidden_dim;
        let c = config.num_classes;
        for layer in 0..config.num_layers {
            let in_dim = if layer == 0 { window_size } else { h };
            match config.kind {
                BaselineKind::Gcn => {
                    store.insert_param(
                        &format!("gcn.l{layer}.w"),
                        xavier_uniform(rng, (in_dim, h), in_dim, h),
                    );
                    store.insert_param(&format!("gcn.l{layer}.b"), Array2::zeros((1, h)));
                }
                BaselineKind::Gin => {
                    register_batch_norm(&mut store, &format!("gin.l{layer}.bn"), in_dim);
                    store.insert_param(&format!("gin.l{layer}.eps"), Array2::zeros((1, 1)));
                    store.insert_param(
                        &format!("gin.l{layer}.mlp.w1"),
                        xavier_uniform(rng, (in_dim, h), in_dim, h),
                    );
                    store.insert_param(&format!("gin.l{layer}.mlp.b1"), Array2::zeros((1, h)));
                    store.insert_param(
                        &format!("gin.l{layer}.mlp.w2"),
                        xavier_uniform(rng, (h, h), h, h),
                    );
                    store.insert_param(&format!("gin.l{layer}.mlp.b2"), Array2::zeros((1, h)));
                }
            }
        }
        store.insert_param("cls.w1", xavier_uniform(rng, (h, h), h, h));
        store.insert_param("cls.b1", Array2::zeros((1, h)));
        store.insert_param("cls.w2", xavier_uniform(rng, (h, c), h, c));
        store.insert_param("cls.b2", Array2::zeros((1, c)));
        Ok(Self {
            config,
            window_size,
            store,
        })
    }

    pub fn seeded(config: BaselineConfig, window_size: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::new(config, window_size, &mut rng)
    }

    pub fn config(&self) -> &BaselineConfig {
        &self.config
    }

    fn check_input(&self, graph: &LabeledGraph) -> Result<()> {
        if graph.window_size() != self.window_size {
            return Err(Error::WindowLengthMismatch {
                expected: self.window_size,
                got: graph.window_size(),
            });
        }
        let d = graph.node_count();
        if graph.adjacency.dim() != (d, d) {
            return Err(Error::ShapeMismatch(format!(
                "adjacency {:?} for {d} nodes",
                graph.adjacency.dim()
            )));
        }
        Ok(())
    }

    fn forward(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        graph: &LabeledGraph,
        mode: &mut Mode,
        updates: &mut BufferUpdates,
    ) -> Result<Var> {
        self.check_input(graph)?;
        let d = graph.node_count();
        let hidden = match self.config.kind {
            BaselineKind::Gcn => self.gcn_layers(tape, bound, graph, d),
            BaselineKind::Gin => self.gin_layers(tape, bound, graph, d, mode, updates),
        };
        // sum nodes into a graph feature, then the two-linear classifier head
        let ones_row = tape.constant(Array2::ones((1, d)));
        let pooled = tape.matmul(ones_row, hidden);
        let z = linear(tape, pooled, bound.var("cls.w1"), bound.var("cls.b1"));
        let z = dropout(tape, z, self.config.dropout_p, mode);
        Ok(linear(tape, z, bound.var("cls.w2"), bound.var("cls.b2")))
    }

    fn gcn_layers(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        graph: &LabeledGraph,
        _d: usize,
    ) -> Var {
        let ahat = normalize_adjacency(&with_self_loops(&graph.adjacency));
        let ahat = tape.constant(ahat);
        let mut x = tape.constant(row_normalize(&graph.node_raw_windows));
        for layer in 0..self.config.num_layers {
            let spread = tape.matmul(ahat, x);
            x = linear(
                tape,
                spread,
                bound.var(&format!("gcn.l{layer}.w")),
                bound.var(&format!("gcn.l{layer}.b")),
            );
            if layer + 1 < self.config.num_layers {
                x = tape.relu(x);
            }
        }
        x
    }

    fn gin_layers(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        graph: &LabeledGraph,
        d: usize,
        mode: &Mode,
        updates: &mut BufferUpdates,
    ) -> Var {
        let adj = tape.constant(graph.adjacency.clone());
        let ones_col = tape.constant(Array2::ones((d, 1)));
        let mut x = tape.constant(graph.node_raw_windows.clone());
        for layer in 0..self.config.num_layers {
            let in_dim = tape.value(x).ncols();
            // batch-normalize the layer input (per feature, across nodes)
            let xt = tape.transpose(x);
            let normed = batch_norm(
                tape,
                xt,
                bound,
                &self.store,
                &format!("gin.l{layer}.bn"),
                in_dim,
                mode,
                updates,
            );
            let x_bn = tape.transpose(normed);
            // (1 + eps) * h + sum over neighbors of h
            let eps = bound.var(&format!("gin.l{layer}.eps"));
            let one_plus = tape.add_scalar(eps, 1.0);
            let scale_col = tape.matmul(ones_col, one_plus);
            let self_term = tape.mul_col_vec(x_bn, scale_col);
            let neighbor_sum = tape.matmul(adj, x_bn);
            let agg = tape.add(self_term, neighbor_sum);
            let z = linear(
                tape,
                agg,
                bound.var(&format!("gin.l{layer}.mlp.w1")),
                bound.var(&format!("gin.l{layer}.mlp.b1")),
            );
            let z = tape.relu(z);
            x = linear(
                tape,
                z,
                bound.var(&format!("gin.l{layer}.mlp.w2")),
                bound.var(&format!("gin.l{layer}.mlp.b2")),
            );
        }
        x
    }
}

impl GraphClassifier for BaselineModel {
    fn kind(&self) -> ModelKind {
        match self.config.kind {
            BaselineKind::Gcn => ModelKind::Gcn,
            BaselineKind::Gin => ModelKind::Gin,
        }
    }

    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn window_size(&self) -> usize {
        self.window_size
    }

    fn store(&self) -> &ParameterStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParameterStore {
        &mut self.store
    }

    fn config_value(&self) -> serde_json::Value {
        serde_json::to_value(&self.config).expect("config serializes")
    }

    fn predict_probs(&self, graph: &LabeledGraph) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = BoundParams::bind(&mut tape, &self.store);
        let mut mode = Mode::Eval;
        let mut updates = BufferUpdates::new();
        let logits = self.forward(&mut tape, &bound, graph, &mut mode, &mut updates)?;
        let probs = tape.row_softmax(logits);
        Ok(tape.value(probs).row(0).to_vec())
    }

    fn batch_loss_and_grads(
        &mut self,
        graphs: &[&LabeledGraph],
        targets: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, GradMap)> {
        assert_eq!(graphs.len(), targets.len());
        let scale = 1.0 / graphs.len() as f64;
        let mut total_loss = 0.0;
        let mut grads = GradMap::new();
        for (&graph, &target) in graphs.iter().zip(targets) {
            if target >= self.config.num_classes {
                return Err(Error::UnknownClass(format!("index {target}")));
            }
            let mut tape = Tape::new();
            let bound = BoundParams::bind(&mut tape, &self.store);
            let mut updates = BufferUpdates::new();
            let mut mode = Mode::Train(rng);
            let logits = self.forward(&mut tape, &bound, graph, &mut mode, &mut updates)?;
            let loss = cross_entropy_loss(&mut tape, logits, target);
            total_loss += tape.scalar(loss) * scale;
            let grad_vec = tape.backward(loss, scale);
            bound.accumulate_grads(&grad_vec, &self.store, &mut grads, 1.0);
            apply_buffer_updates(&mut self.store, updates)?;
        }
        Ok((total_loss, grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::full_adjacency;
    use crate::nn::BATCH_NORM_EPS;
    use ndarray::Axis;
    use rand::Rng;

    fn graph(d: usize, w: usize, seed: u64) -> LabeledGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LabeledGraph {
            node_raw_windows: Array2::from_shape_fn((d, w), |_| rng.gen_range(0.0..1.0)),
            adjacency: full_adjacency(d).unwrap(),
            label: "x".into(),
            window_end_t: w,
        }
    }

    #[test]
    fn both_baselines_output_distributions() {
        for cfg in [BaselineConfig::gcn(4), BaselineConfig::gin(4)] {
            let model = BaselineModel::seeded(cfg, 5, 1).unwrap();
            for d in [1, 3, 10] {
                let probs = model.predict_probs(&graph(d, 5, d as u64)).unwrap();
                let sum: f64 = probs.iter().sum();
                assert!((sum - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn eval_mode_is_deterministic() {
        for cfg in [BaselineConfig::gcn(3), BaselineConfig::gin(3)] {
            let model = BaselineModel::seeded(cfg, 5, 2).unwrap();
            let g = graph(4, 5, 3);
            assert_eq!(
                model.predict_probs(&g).unwrap(),
                model.predict_probs(&g).unwrap()
            );
        }
    }

    #[test]
    fn sum_pooling_is_permutation_invariant() {
        for cfg in [BaselineConfig::gcn(3), BaselineConfig::gin(3)] {
            let model = BaselineModel::seeded(cfg, 5, 4).unwrap();
            let g = graph(5, 5, 5);
            let probs = model.predict_probs(&g).unwrap();
            let perm = [4usize, 2, 0, 1, 3];
            let mut permuted = g.clone();
            for (new_row, &old_row) in perm.iter().enumerate() {
                for t in 0..5 {
                    permuted.node_raw_windows[[new_row, t]] = g.node_raw_windows[[old_row, t]];
                }
            }
            let probs_p = model.predict_probs(&permuted).unwrap();
            for (a, b) in probs.iter().zip(&probs_p) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn row_normalize_l1_with_zero_guard() {
        let x = ndarray::array![[1.0, -3.0], [0.0, 0.0]];
        let n = row_normalize(&x);
        assert_eq!(n.row(0).to_vec(), vec![0.25, -0.75]);
        assert_eq!(n.row(1).to_vec(), vec![0.0, 0.0]);
    }

    /// Independent dense-matrix reimplementation of the full GCN forward.
    fn gcn_oracle(model: &BaselineModel, g: &LabeledGraph) -> Vec<f64> {
        let store = model.store();
        let ahat = normalize_adjacency(&with_self_loops(&g.adjacency));
        let mut x = row_normalize(&g.node_raw_windows);
        for layer in 0..model.config().num_layers {
            x = ahat.dot(&x).dot(store.param(&format!("gcn.l{layer}.w")))
                + store.param(&format!("gcn.l{layer}.b"));
            if layer + 1 < model.config().num_layers {
                x.mapv_inplace(|v| v.max(0.0));
            }
        }
        let pooled = x.sum_axis(Axis(0)).insert_axis(Axis(0));
        let z = pooled.dot(store.param("cls.w1")) + store.param("cls.b1");
        let logits = z.dot(store.param("cls.w2")) + store.param("cls.b2");
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
        let denom: f64 = exps.iter().sum();
        exps.iter().map(|&e| e / denom).collect()
    }

    #[test]
    fn gcn_matches_dense_matrix_oracle() {
        let model = BaselineModel::seeded(BaselineConfig::gcn(3), 6, 7).unwrap();
        for d in [1, 3] {
            let g = graph(d, 6, 40 + d as u64);
            let got = model.predict_probs(&g).unwrap();
            let want = gcn_oracle(&model, &g);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-9, "d={d}: {a} vs {b}");
            }
        }
    }

    /// Independent reimplementation of the GIN forward in eval mode.
    fn gin_oracle(model: &BaselineModel, g: &LabeledGraph) -> Vec<f64> {
        let store = model.store();
        let mut x = g.node_raw_windows.clone();
        for layer in 0..model.config().num_layers {
            let rm = store.buffer(&format!("gin.l{layer}.bn.running_mean"));
            let rv = store.buffer(&format!("gin.l{layer}.bn.running_var"));
            let gamma = store.param(&format!("gin.l{layer}.bn.gamma"));
            let beta = store.param(&format!("gin.l{layer}.bn.beta"));
            let mut x_bn = x.clone();
            for mut row in x_bn.rows_mut() {
                for (f, v) in row.iter_mut().enumerate() {
                    let xhat = (*v - rm[[f, 0]]) / (rv[[f, 0]] + BATCH_NORM_EPS).sqrt();
                    *v = gamma[[f, 0]] * xhat + beta[[f, 0]];
                }
            }
            let eps = store.param(&format!("gin.l{layer}.eps"))[[0, 0]];
            let agg = &x_bn * (1.0 + eps) + &g.adjacency.dot(&x_bn);
            let z = agg.dot(store.param(&format!("gin.l{layer}.mlp.w1")))
                + store.param(&format!("gin.l{layer}.mlp.b1"));
            let z = z.mapv(|v| v.max(0.0));
            x = z.dot(store.param(&format!("gin.l{layer}.mlp.w2")))
                + store.param(&format!("gin.l{layer}.mlp.b2"));
        }
        let pooled = x.sum_axis(Axis(0)).insert_axis(Axis(0));
        let z = pooled.dot(store.param("cls.w1")) + store.param("cls.b1");
        let logits = z.dot(store.param("cls.w2")) + store.param("cls.b2");
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
        let denom: f64 = exps.iter().sum();
        exps.iter().map(|&e| e / denom).collect()
    }

    #[test]
    fn gin_matches_manual_aggregation_oracle() {
        let model = BaselineModel::seeded(BaselineConfig::gin(3), 6, 8).unwrap();
        for d in [1, 2] {
            let g = graph(d, 6, 50 + d as u64);
            let got = model.predict_probs(&g).unwrap();
            let want = gin_oracle(&model, &g);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-9, "d={d}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn gin_isolated_node_with_self_loop_doubles_features() {
        // eps = 0 and a single self-looped node: the pre-MLP aggregation is
        // (1 + 0) h + h = 2h
        let g = graph(1, 6, 9);
        let x_bn = ndarray::array![[1.0, 2.0, 3.0]];
        let agg = &x_bn * (1.0 + 0.0) + &ndarray::Array2::ones((1, 1)).dot(&x_bn);
        assert_eq!(agg, &x_bn * 2.0);
        // and the model accepts the graph end to end
        let model = BaselineModel::seeded(BaselineConfig::gin(3), 6, 10).unwrap();
        assert_eq!(model.predict_probs(&g).unwrap().len(), 3);
    }
}
