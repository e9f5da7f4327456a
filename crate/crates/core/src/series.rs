//! Multivariate KPI time series: representation, slicing and min-max normalization.
//!
//! A series holds `d` named KPI dimensions over `T` timestamps sampled at a fixed
//! rate, plus a per-timestamp system-state label. Slicing uses 1-based inclusive
//! bounds in the public API (internally everything is 0-based).

use ndarray::{Array2, ArrayView2, s};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label used for timestamps outside any labeled interval.
pub const NORMAL_LABEL: &str = "normal";

/// A `d x T` multivariate time series with sampling metadata and per-sample labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MultivariateSeries {
    values: Array2<f64>,
    series_names: Vec<String>,
    sample_rate_hz: f64,
    labels: Vec<String>,
}

impl MultivariateSeries {
    /// Builds a series from a `d x T` value matrix.
    ///
    /// Rejects empty input, non-finite samples, non-positive sample rates and
    /// label vectors that do not match `T`.
    pub fn new(
        values: Array2<f64>,
        series_names: Vec<String>,
        sample_rate_hz: f64,
        labels: Vec<String>,
    ) -> Result<Self> {
        let (d, t) = values.dim();
        if d == 0 || t == 0 {
            return Err(Error::EmptySeries(format!("got shape {d}x{t}")));
        }
        if series_names.len() != d {
            return Err(Error::LengthMismatch(format!(
                "{} series names for {} rows",
                series_names.len(),
                d
            )));
        }
        if !(sample_rate_hz > 0.0) {
            return Err(Error::LengthMismatch(format!(
                "sample_rate_hz must be positive, got {sample_rate_hz}"
            )));
        }
        if labels.len() != t {
            return Err(Error::LengthMismatch(format!(
                "{} labels for {} timestamps",
                labels.len(),
                t
            )));
        }
        for (i, row) in values.outer_iter().enumerate() {
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteInput {
                    series: series_names[i].clone(),
                    index: j,
                });
            }
        }
        Ok(Self {
            values,
            series_names,
            sample_rate_hz,
            labels,
        })
    }

    /// Number of dimensions `d`.
    pub fn dims(&self) -> usize {
        self.values.nrows()
    }

    /// Number of timestamps `T`.
    pub fn len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.ncols() == 0
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn series_names(&self) -> &[String] {
        &self.series_names
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Slices columns `a..=b` (1-based inclusive on both ends).
    pub fn slice(&self, a: usize, b: usize) -> Result<SeriesSlice<'_>> {
        let t = self.len();
        if a == 0 || b == 0 || a > b || b > t {
            return Err(Error::InvalidSlice { a, b, len: t });
        }
        Ok(SeriesSlice {
            parent: self,
            a,
            b,
        })
    }
}

/// A view of columns `a..=b` of a parent series (1-based inclusive bounds).
#[derive(Debug, Clone, Copy)]
pub struct SeriesSlice<'a> {
    parent: &'a MultivariateSeries,
    a: usize,
    b: usize,
}

impl<'a> SeriesSlice<'a> {
    /// Slice length `b - a + 1`.
    pub fn len(&self) -> usize {
        self.b - self.a + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn bounds(&self) -> (usize, usize) {
        (self.a, self.b)
    }

    /// Value view of shape `d x (b - a + 1)`.
    pub fn values(&self) -> ArrayView2<'a, f64> {
        self.parent.values.slice(s![.., self.a - 1..self.b])
    }

    pub fn labels(&self) -> &'a [String] {
        &self.parent.labels[self.a - 1..self.b]
    }

    /// Re-slices relative to this slice (1-based within the slice).
    pub fn slice(&self, a: usize, b: usize) -> Result<SeriesSlice<'a>> {
        let len = self.len();
        if a == 0 || b == 0 || a > b || b > len {
            return Err(Error::InvalidSlice { a, b, len });
        }
        Ok(SeriesSlice {
            parent: self.parent,
            a: self.a + a - 1,
            b: self.a + b - 1,
        })
    }
}

/// Per-dimension min/max bounds used for min-max rescaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationBounds {
    pub names: Vec<String>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormalizationBounds {
    pub fn dims(&self) -> usize {
        self.min.len()
    }

    /// True where `max == min` (constant dimension).
    pub fn degenerate(&self) -> Vec<bool> {
        self.min
            .iter()
            .zip(&self.max)
            .map(|(lo, hi)| lo == hi)
            .collect()
    }

    /// Fits bounds from per-dimension extrema, applying overrides where given.
    ///
    /// `observed` yields `(min, max)` per dimension in order; `overrides` pairs
    /// each dimension with an optional fixed `(min, max)` that wins over the
    /// observed extrema.
    pub fn from_extrema(
        names: &[String],
        observed: &[(f64, f64)],
        overrides: &[Option<(f64, f64)>],
    ) -> Result<Self> {
        if observed.len() != names.len() || overrides.len() != names.len() {
            return Err(Error::DimensionMismatch {
                expected: names.len(),
                got: observed.len().min(overrides.len()),
            });
        }
        let mut min = Vec::with_capacity(names.len());
        let mut max = Vec::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            let (lo, hi) = match overrides[i] {
                Some(pair) => pair,
                None => observed[i],
            };
            if !(lo.is_finite() && hi.is_finite()) || hi < lo {
                return Err(Error::InvalidBounds {
                    name: name.clone(),
                    min: lo,
                    max: hi,
                });
            }
            min.push(lo);
            max.push(hi);
        }
        Ok(Self {
            names: names.to_vec(),
            min,
            max,
        })
    }

    /// Maps a single value of dimension `i` into `[0, 1]`, clipping out-of-bound
    /// values and sending degenerate dimensions to 0.
    pub fn apply(&self, i: usize, value: f64) -> f64 {
        let (lo, hi) = (self.min[i], self.max[i]);
        if hi <= lo {
            return 0.0;
        }
        ((value - lo) / (hi - lo)).clamp(0.0, 1.0)
    }
}

/// Fits per-dimension normalization bounds on a training series.
///
/// Dimensions with a known-limit override (e.g. CPU percent) take the override;
/// all others use the observed min/max of the training split. Constant
/// dimensions produce equal bounds and are reported by
/// [`NormalizationBounds::degenerate`].
pub fn fit_bounds(
    train: &MultivariateSeries,
    known_bounds: &[Option<(f64, f64)>],
) -> Result<NormalizationBounds> {
    if known_bounds.len() != train.dims() {
        return Err(Error::DimensionMismatch {
            expected: train.dims(),
            got: known_bounds.len(),
        });
    }
    let observed: Vec<(f64, f64)> = train
        .values()
        .outer_iter()
        .map(|row| {
            row.iter().fold(
                (f64::INFINITY, f64::NEG_INFINITY),
                |(lo, hi), &v| (lo.min(v), hi.max(v)),
            )
        })
        .collect();
    NormalizationBounds::from_extrema(train.series_names(), &observed, known_bounds)
}

/// Rescales every sample to `[0, 1]` with the given per-dimension bounds.
///
/// Values outside the bounds are clipped; degenerate dimensions map to a
/// constant 0 so a flat KPI does not abort inference.
pub fn normalize_minmax(
    series: &MultivariateSeries,
    bounds: &NormalizationBounds,
) -> Result<MultivariateSeries> {
    if bounds.dims() != series.dims() {
        return Err(Error::DimensionMismatch {
            expected: series.dims(),
            got: bounds.dims(),
        });
    }
    let mut values = series.values().clone();
    for (i, mut row) in values.outer_iter_mut().enumerate() {
        row.mapv_inplace(|v| bounds.apply(i, v));
    }
    MultivariateSeries::new(
        values,
        series.series_names().to_vec(),
        series.sample_rate_hz(),
        series.labels().to_vec(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn named(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("kpi{i}")).collect()
    }

    fn make(values: Array2<f64>) -> MultivariateSeries {
        let d = values.nrows();
        let t = values.ncols();
        MultivariateSeries::new(values, named(d), 2.0, vec![NORMAL_LABEL.to_string(); t]).unwrap()
    }

    #[test]
    fn fit_bounds_observed_extrema() {
        let s = make(array![[2.0, 8.0, 5.0]]);
        let b = fit_bounds(&s, &[None]).unwrap();
        assert_eq!((b.min[0], b.max[0]), (2.0, 8.0));
        assert!(!b.degenerate()[0]);
    }

    #[test]
    fn fit_bounds_override_wins() {
        let s = make(array![[10.0, 35.0, 60.0]]);
        let b = fit_bounds(&s, &[Some((0.0, 100.0))]).unwrap();
        assert_eq!((b.min[0], b.max[0]), (0.0, 100.0));
    }

    #[test]
    fn fit_bounds_constant_dimension_flagged() {
        let s = make(array![[7.0, 7.0, 7.0]]);
        let b = fit_bounds(&s, &[None]).unwrap();
        assert_eq!((b.min[0], b.max[0]), (7.0, 7.0));
        assert!(b.degenerate()[0]);
    }

    #[test]
    fn fit_bounds_rejects_nan_at_ingestion() {
        let r = MultivariateSeries::new(
            array![[1.0, f64::NAN]],
            named(1),
            2.0,
            vec![NORMAL_LABEL.to_string(); 2],
        );
        assert!(matches!(r, Err(Error::NonFiniteInput { .. })));
    }

    #[test]
    fn normalize_linear_map_endpoints() {
        let s = make(array![[0.0, 5.0, 10.0]]);
        let b = fit_bounds(&s, &[Some((0.0, 10.0))]).unwrap();
        let n = normalize_minmax(&s, &b).unwrap();
        assert_eq!(n.values().row(0).to_vec(), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn normalize_clips_out_of_bounds() {
        let s = make(array![[12.0, -3.0]]);
        let b = NormalizationBounds::from_extrema(
            &named(1),
            &[(0.0, 10.0)],
            &[None],
        )
        .unwrap();
        let n = normalize_minmax(&s, &b).unwrap();
        assert_eq!(n.values().row(0).to_vec(), vec![1.0, 0.0]);
    }

    #[test]
    fn normalize_degenerate_maps_to_zero() {
        let s = make(array![[7.0, 7.0]]);
        let b = fit_bounds(&s, &[None]).unwrap();
        let n = normalize_minmax(&s, &b).unwrap();
        assert_eq!(n.values().row(0).to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn normalize_dimension_mismatch_errors() {
        let s = make(array![[1.0, 2.0], [3.0, 4.0]]);
        let b = NormalizationBounds::from_extrema(&named(1), &[(0.0, 1.0)], &[None]).unwrap();
        assert!(matches!(
            normalize_minmax(&s, &b),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn slice_full_is_identity() {
        let s = make(array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        let sl = s.slice(1, 3).unwrap();
        assert_eq!(sl.values(), s.values().view());
        assert_eq!(sl.labels().len(), 3);
    }

    #[test]
    fn slice_single_column() {
        let s = make(array![[1.0, 2.0, 3.0]]);
        let sl = s.slice(3, 3).unwrap();
        assert_eq!(sl.len(), 1);
        assert_eq!(sl.values()[[0, 0]], 3.0);
    }

    #[test]
    fn slice_inverted_bounds_error() {
        let s = make(array![[1.0, 2.0, 3.0]]);
        assert!(matches!(s.slice(5, 3), Err(Error::InvalidSlice { .. })));
        assert!(matches!(s.slice(0, 2), Err(Error::InvalidSlice { .. })));
        assert!(matches!(s.slice(1, 4), Err(Error::InvalidSlice { .. })));
    }

    #[test]
    fn slice_composition() {
        // slice(slice(s, a, b), 1, k) == slice(s, a, a + k - 1)
        let s = make(Array2::from_shape_fn((2, 10), |(i, j)| (i * 10 + j) as f64));
        let outer = s.slice(3, 8).unwrap();
        let inner = outer.slice(1, 4).unwrap();
        let direct = s.slice(3, 6).unwrap();
        assert_eq!(inner.values(), direct.values());
        assert_eq!(inner.labels(), direct.labels());
    }
}
