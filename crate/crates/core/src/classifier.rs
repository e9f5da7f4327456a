//! Common interface for all graph-classification models so the training
//! harness and checkpoint code stay model-agnostic.

use indexmap::IndexMap;
use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graph::LabeledGraph;
use crate::nn::ParameterStore;

/// Named gradient tensors matching the store's parameter shapes.
pub type GradMap = IndexMap<String, Array2<f64>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Telesto,
    Gcn,
    Gin,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ModelKind::Telesto => "telesto",
            ModelKind::Gcn => "gcn",
            ModelKind::Gin => "gin",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for ModelKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "telesto" => Ok(ModelKind::Telesto),
            "gcn" => Ok(ModelKind::Gcn),
            "gin" => Ok(ModelKind::Gin),
            other => Err(crate::Error::InvalidConfig(format!(
                "unknown model kind `{other}`"
            ))),
        }
    }
}

/// A differentiable graph classifier over labeled window graphs.
///
/// Parameters are read-only during inference; training mutates the store
/// (parameters, batch-norm statistics) through `&mut self` only.
pub trait GraphClassifier: Send {
    fn kind(&self) -> ModelKind;
    fn num_classes(&self) -> usize;
    fn window_size(&self) -> usize;
    fn store(&self) -> &ParameterStore;
    fn store_mut(&mut self) -> &mut ParameterStore;
    /// Model configuration as JSON for checkpointing.
    fn config_value(&self) -> serde_json::Value;

    /// Class probabilities in eval mode (deterministic).
    fn predict_probs(&self, graph: &LabeledGraph) -> Result<Vec<f64>>;

    /// Mean cross-entropy over the mini-batch plus accumulated parameter
    /// gradients; runs in training mode and updates batch-norm statistics.
    fn batch_loss_and_grads(
        &mut self,
        graphs: &[&LabeledGraph],
        targets: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, GradMap)>;
}

/// Predicted class index: argmax with ties resolved to the lowest index.
pub fn argmax_class(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_breaks_ties_to_lowest_index() {
        assert_eq!(argmax_class(&[0.25, 0.25, 0.25, 0.25]), 0);
        assert_eq!(argmax_class(&[0.1, 0.5, 0.4]), 1);
    }

    #[test]
    fn model_kind_round_trips_through_strings() {
        for kind in [ModelKind::Telesto, ModelKind::Gcn, ModelKind::Gin] {
            let s = kind.to_string();
            assert_eq!(s.parse::<ModelKind>().unwrap(), kind);
        }
        assert!("resnet".parse::<ModelKind>().is_err());
    }
}
