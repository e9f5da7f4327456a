//! The TELESTO graph classifier: a temporal node encoder (positional encoding,
//! 1D convolution, batch norm, linear projection), adjacency dropout, a stack
//! of TAGCN -> GAT transformation levels with pre-norm residual sublayers,
//! LSTM-based jumping-knowledge aggregation over level outputs, a feed-forward
//! block, global attention pooling and a convolutional classification head.
//!
//! Parameter shapes never depend on the node count, so one trained model
//! accepts graphs of any dimensionality.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{GradMap, GraphClassifier, ModelKind};
use crate::error::{Error, Result};
use crate::graph::LabeledGraph;
use crate::nn::{
    adjacency_dropout, adjacency_powers, apply_buffer_updates, batch_norm, bilstm_sequence,
    cross_entropy_loss, dropout, layer_norm, linear, normalize_adjacency, positional_encoding,
    register_batch_norm, register_bilstm, with_self_loops, xavier_uniform, BoundParams,
    BufferUpdates, Mode, ParameterStore,
};
use crate::tape::{Tape, Var};

const LAYER_NORM_EPS: f64 = 1e-5;
const LEAKY_RELU_SLOPE: f64 = 0.2;
const ELU_ALPHA: f64 = 1.0;
/// The embedding head convolution is fixed: ten filters of size nine.
pub const EMBEDDING_CONV_FILTERS: usize = 10;
pub const EMBEDDING_CONV_KERNEL: usize = 9;

/// Architecture hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelestoConfig {
    /// Feature maps extracted by the node encoder convolution.
    pub conv_filters: usize,
    /// Node feature width inside the graph transformation module.
    pub hidden_dim: usize,
    /// Number of stacked TAGCN -> GAT transformation levels.
    pub levels: usize,
    /// Polynomial filter hops per TAGCN layer.
    pub tagcn_hops: usize,
    /// Parallel attention heads per GAT layer.
    pub gat_heads: usize,
    /// Depth of the bidirectional jumping-knowledge LSTM stack.
    pub jk_lstm_layers: usize,
    pub adjacency_dropout_p: f64,
    pub dropout_p: f64,
    pub num_classes: usize,
}

impl TelestoConfig {
    /// Defaults matching the reference configuration: 16 conv filters, hidden
    /// width 64, 5 levels, 3 hops, 8 heads, a 7-layer JK LSTM and 50% dropout.
    pub fn defaults(num_classes: usize) -> Self {
        Self {
            conv_filters: 16,
            hidden_dim: 64,
            levels: 5,
            tagcn_hops: 3,
            gat_heads: 8,
            jk_lstm_layers: 7,
            adjacency_dropout_p: 0.5,
            dropout_p: 0.5,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels < 1 {
            return Err(Error::InvalidConfig("levels must be >= 1".into()));
        }
        if self.hidden_dim == 0 || self.hidden_dim % self.gat_heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "hidden_dim {} must be a positive multiple of gat_heads {}",
                self.hidden_dim, self.gat_heads
            )));
        }
        if self.hidden_dim % 2 != 0 {
            return Err(Error::InvalidConfig(
                "hidden_dim must be even for the bidirectional JK aggregator".into(),
            ));
        }
        if self.conv_filters == 0 || self.jk_lstm_layers == 0 || self.num_classes == 0 {
            return Err(Error::InvalidConfig(
                "conv_filters, jk_lstm_layers and num_classes must be positive".into(),
            ));
        }
        for (name, p) in [
            ("adjacency_dropout_p", self.adjacency_dropout_p),
            ("dropout_p", self.dropout_p),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("{name} must be in [0, 1)")));
            }
        }
        Ok(())
    }
}

/// Polynomial graph convolution `sum_j A_hat^j X W_j + b`.
///
/// `power_vars[j]` holds the j-th power of the degree-normalized adjacency
/// (hop 0 is the identity), `weights[j]` the per-hop filter.
pub fn tagcn_layer(
    tape: &mut Tape,
    x: Var,
    power_vars: &[Var],
    weights: &[Var],
    bias: Var,
) -> Var {
    assert_eq!(power_vars.len(), weights.len());
    let mut acc: Option<Var> = None;
    for (&power, &w) in power_vars.iter().zip(weights) {
        let spread = tape.matmul(power, x);
        let weighted = tape.matmul(spread, w);
        acc = Some(match acc {
            Some(a) => tape.add(a, weighted),
            None => weighted,
        });
    }
    let summed = acc.expect("at least hop 0");
    tape.add_row_vec(summed, bias)
}

/// Per-head projection and attention parameters of one GAT layer.
pub struct GatHeadVars {
    pub w: Var,
    pub a_src: Var,
    pub a_dst: Var,
}

/// Multi-head graph attention: per head, edge scores
/// `leaky_relu(a_src . W h_i + a_dst . W h_j)` are softmax-normalized over the
/// masked neighborhood and aggregate the projected features; head outputs pass
/// through an ELU and concatenate. Returns the output and per-head attention
/// matrices.
pub fn gat_layer(
    tape: &mut Tape,
    x: Var,
    neighbor_mask: &Array2<f64>,
    ones_row: Var,
    heads: &[GatHeadVars],
) -> (Var, Vec<Var>) {
    let mut outputs = Vec::with_capacity(heads.len());
    let mut attentions = Vec::with_capacity(heads.len());
    for head in heads {
        let hw = tape.matmul(x, head.w);
        let s_src = tape.matmul(hw, head.a_src);
        let s_dst = tape.matmul(hw, head.a_dst);
        let src_mat = tape.matmul(s_src, ones_row);
        let dst_row = tape.transpose(s_dst);
        let scores = tape.add_row_vec(src_mat, dst_row);
        let scores = tape.leaky_relu(scores, LEAKY_RELU_SLOPE);
        let alpha = tape.masked_row_softmax(scores, neighbor_mask);
        let agg = tape.matmul(alpha, hw);
        outputs.push(tape.elu(agg, ELU_ALPHA));
        attentions.push(alpha);
    }
    (tape.concat_cols(&outputs), attentions)
}

/// Intermediate softmax families captured during a forward pass, used by
/// invariant tests and diagnostics.
#[derive(Debug, Clone)]
pub struct TelestoTrace {
    /// Per level and head: the (d, d) attention matrix (rows sum to 1 over
    /// the node's neighborhood).
    pub attention: Vec<Array2<f64>>,
    /// Per node: softmax weights over the level outputs, shape (d, levels).
    pub level_weights: Array2<f64>,
    /// Pooling scores over nodes, shape (1, d).
    pub pool_scores: Array2<f64>,
    pub probs: Vec<f64>,
}

struct ForwardVars {
    logits: Var,
    attention: Vec<Var>,
    level_weights: Var,
    pool_scores: Var,
}

#[derive(Clone)]
pub struct TelestoModel {
    config: TelestoConfig,
    window_size: usize,
    store: ParameterStore,
}

impl TelestoModel {
    /// Builds a model with Xavier-initialized parameters.
    pub fn new(config: TelestoConfig, window_size: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        if window_size == 0 {
            return Err(Error::InvalidConfig("window_size must be >= 1".into()));
        }
        let mut store = ParameterStore::new();
        let n = config.conv_filters;
        let h = config.hidden_dim;
        let c = config.num_classes;

        store.insert_param(
            "encoder.conv.kernel",
            xavier_uniform(rng, (n, n * 3), n * 3, n * 3),
        );
        store.insert_param("encoder.conv.bias", Array2::zeros((n, 1)));
        register_batch_norm(&mut store, "encoder.bn", n);
        store.insert_param(
            "encoder.proj.w",
            xavier_uniform(rng, (n * window_size, h), n * window_size, h),
        );
        store.insert_param("encoder.proj.b", Array2::zeros((1, h)));

        let head_width = h / config.gat_heads;
        for level in 0..config.levels {
            let p = format!("level{level}");
            store.insert_param(&format!("{p}.tagcn.ln.gamma"), Array2::ones((1, h)));
            store.insert_param(&format!("{p}.tagcn.ln.beta"), Array2::zeros((1, h)));
            for hop in 0..=config.tagcn_hops {
                store.insert_param(
                    &format!("{p}.tagcn.w{hop}"),
                    xavier_uniform(rng, (h, h), h, h),
                );
            }
            store.insert_param(&format!("{p}.tagcn.bias"), Array2::zeros((1, h)));
            store.insert_param(&format!("{p}.gat.ln.gamma"), Array2::ones((1, h)));
            store.insert_param(&format!("{p}.gat.ln.beta"), Array2::zeros((1, h)));
            for head in 0..config.gat_heads {
                let ph = format!("{p}.gat.head{head}");
                store.insert_param(
                    &format!("{ph}.w"),
                    xavier_uniform(rng, (h, head_width), h, head_width),
                );
                store.insert_param(
                    &format!("{ph}.a_src"),
                    xavier_uniform(rng, (head_width, 1), head_width, 1),
                );
                store.insert_param(
                    &format!("{ph}.a_dst"),
                    xavier_uniform(rng, (head_width, 1), head_width, 1),
                );
            }
        }

        register_bilstm(&mut store, rng, "jk.lstm", config.jk_lstm_layers, h, h / 2);
        store.insert_param("jk.att.w", xavier_uniform(rng, (h, 1), h, 1));
        store.insert_param("jk.att.b", Array2::zeros((1, 1)));

        store.insert_param("fff.ln.gamma", Array2::ones((1, h)));
        store.insert_param("fff.ln.beta", Array2::zeros((1, h)));
        store.insert_param("fff.w1", xavier_uniform(rng, (h, h), h, h));
        store.insert_param("fff.b1", Array2::zeros((1, h)));
        store.insert_param("fff.w2", xavier_uniform(rng, (h, h), h, h));
        store.insert_param("fff.b2", Array2::zeros((1, h)));

        store.insert_param("pool.gate.w", xavier_uniform(rng, (h, 1), h, 1));
        store.insert_param("pool.gate.b", Array2::zeros((1, 1)));
        store.insert_param("pool.value.w", xavier_uniform(rng, (h, h), h, h));
        store.insert_param("pool.value.b", Array2::zeros((1, h)));

        store.insert_param(
            "head.conv.kernel",
            xavier_uniform(
                rng,
                (EMBEDDING_CONV_FILTERS, EMBEDDING_CONV_KERNEL),
                EMBEDDING_CONV_KERNEL,
                EMBEDDING_CONV_FILTERS * EMBEDDING_CONV_KERNEL,
            ),
        );
        store.insert_param(
            "head.conv.bias",
            Array2::zeros((EMBEDDING_CONV_FILTERS, 1)),
        );
        register_batch_norm(&mut store, "head.bn", EMBEDDING_CONV_FILTERS);
        store.insert_param("head.cls.w", xavier_uniform(rng, (h, c), h, c));
        store.insert_param("head.cls.b", Array2::zeros((1, c)));

        Ok(Self {
            config,
            window_size,
            store,
        })
    }

    /// Convenience constructor with a fixed seed.
    pub fn seeded(config: TelestoConfig, window_size: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::new(config, window_size, &mut rng)
    }

    pub fn config(&self) -> &TelestoConfig {
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

    /// Node encoder: positional lift, shared 1D convolution, batch norm and
    /// the linear projection into the transformation width. Output is (d, h).
    fn encode_nodes(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        graph: &LabeledGraph,
        mode: &Mode,
        updates: &mut BufferUpdates,
    ) -> Var {
        let d = graph.node_count();
        let w = self.window_size;
        let n = self.config.conv_filters;
        let pe = positional_encoding(w, n);
        let mut lifted = Array2::zeros((d * n, w));
        for node in 0..d {
            for ch in 0..n {
                for t in 0..w {
                    lifted[[node * n + ch, t]] = graph.node_raw_windows[[node, t]] + pe[[t, ch]];
                }
            }
        }
        let x = tape.constant(lifted);
        let kernel = bound.var("encoder.conv.kernel");
        let bias = bound.var("encoder.conv.bias");
        let conv = tape.conv1d(x, kernel, bias, n, n);
        let normed = batch_norm(tape, conv, bound, &self.store, "encoder.bn", n, mode, updates);
        let flat = tape.reshape(normed, d, n * w);
        linear(tape, flat, bound.var("encoder.proj.w"), bound.var("encoder.proj.b"))
    }

    /// Pre-norm residual sublayer: `x + dropout(f(layer_norm(x)))`.
    fn sublayer<F>(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        x: Var,
        ln_prefix: &str,
        mode: &mut Mode,
        f: F,
    ) -> Var
    where
        F: FnOnce(&mut Tape, Var, &mut Mode) -> Var,
    {
        let gamma = bound.var(&format!("{ln_prefix}.gamma"));
        let beta = bound.var(&format!("{ln_prefix}.beta"));
        let normed = layer_norm(tape, x, gamma, beta, LAYER_NORM_EPS);
        let fx = f(tape, normed, mode);
        let dropped = dropout(tape, fx, self.config.dropout_p, mode);
        tape.add(x, dropped)
    }

    fn tagcn(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        x: Var,
        power_vars: &[Var],
        level: usize,
    ) -> Var {
        let weights: Vec<Var> = (0..=self.config.tagcn_hops)
            .map(|hop| bound.var(&format!("level{level}.tagcn.w{hop}")))
            .collect();
        let bias = bound.var(&format!("level{level}.tagcn.bias"));
        tagcn_layer(tape, x, power_vars, &weights, bias)
    }

    fn gat(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        x: Var,
        neighbor_mask: &Array2<f64>,
        ones_row: Var,
        level: usize,
    ) -> (Var, Vec<Var>) {
        let heads: Vec<GatHeadVars> = (0..self.config.gat_heads)
            .map(|head| {
                let p = format!("level{level}.gat.head{head}");
                GatHeadVars {
                    w: bound.var(&format!("{p}.w")),
                    a_src: bound.var(&format!("{p}.a_src")),
                    a_dst: bound.var(&format!("{p}.a_dst")),
                }
            })
            .collect();
        gat_layer(tape, x, neighbor_mask, ones_row, &heads)
    }

    /// Jumping-knowledge aggregation: a bidirectional LSTM stack reads each
    /// node's level sequence, per-level scalar scores are softmax-normalized
    /// and the level outputs are convexly combined.
    fn jumping_knowledge(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        level_outputs: &[Var],
    ) -> (Var, Var) {
        let h = self.config.hidden_dim;
        let states = bilstm_sequence(
            tape,
            level_outputs,
            bound,
            "jk.lstm",
            self.config.jk_lstm_layers,
            h / 2,
        );
        let att_w = bound.var("jk.att.w");
        let att_b = bound.var("jk.att.b");
        let scores: Vec<Var> = states
            .iter()
            .map(|&s| {
                let raw = tape.matmul(s, att_w);
                tape.add_row_vec(raw, att_b)
            })
            .collect();
        let stacked = tape.concat_cols(&scores);
        let weights = tape.row_softmax(stacked);
        let mut combined: Option<Var> = None;
        for (t, &out) in level_outputs.iter().enumerate() {
            let w_t = tape.slice_cols(weights, t, 1);
            let term = tape.mul_col_vec(out, w_t);
            combined = Some(match combined {
                Some(a) => tape.add(a, term),
                None => term,
            });
        }
        (combined.expect("levels >= 1"), weights)
    }

    /// Softmax-gated global pooling to a (1, h) graph embedding.
    fn attention_pool(&self, tape: &mut Tape, bound: &BoundParams, x: Var) -> (Var, Var) {
        let raw = linear(tape, x, bound.var("pool.gate.w"), bound.var("pool.gate.b"));
        let row = tape.transpose(raw);
        let scores = tape.row_softmax(row);
        let values = linear(tape, x, bound.var("pool.value.w"), bound.var("pool.value.b"));
        (tape.matmul(scores, values), scores)
    }

    /// Embedding head: fixed-size 1D convolution over the embedding signal,
    /// batch norm, filter-mean and the final linear map to class logits.
    fn embedding_head(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        embedding: Var,
        mode: &Mode,
        updates: &mut BufferUpdates,
    ) -> Var {
        let conv = tape.conv1d(
            embedding,
            bound.var("head.conv.kernel"),
            bound.var("head.conv.bias"),
            1,
            EMBEDDING_CONV_FILTERS,
        );
        let normed = batch_norm(
            tape,
            conv,
            bound,
            &self.store,
            "head.bn",
            EMBEDDING_CONV_FILTERS,
            mode,
            updates,
        );
        let averaged = tape.mean_row_groups(normed, EMBEDDING_CONV_FILTERS);
        linear(tape, averaged, bound.var("head.cls.w"), bound.var("head.cls.b"))
    }

    fn forward(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        graph: &LabeledGraph,
        mode: &mut Mode,
        updates: &mut BufferUpdates,
    ) -> Result<ForwardVars> {
        self.check_input(graph)?;
        let d = graph.node_count();

        let x0 = self.encode_nodes(tape, bound, graph, mode, updates);

        let thinned = adjacency_dropout(&graph.adjacency, self.config.adjacency_dropout_p, mode);
        let powers = adjacency_powers(&normalize_adjacency(&thinned), self.config.tagcn_hops);
        let power_vars: Vec<Var> = powers.into_iter().map(|p| tape.constant(p)).collect();
        // the self-edge is restored before attention so every node keeps a
        // non-empty neighborhood after adjacency dropout
        let neighbor_mask = with_self_loops(&thinned);
        let ones_row = tape.constant(Array2::ones((1, d)));

        let mut current = x0;
        let mut level_outputs = Vec::with_capacity(self.config.levels);
        let mut attention = Vec::new();
        for level in 0..self.config.levels {
            current = self.sublayer(
                tape,
                bound,
                current,
                &format!("level{level}.tagcn.ln"),
                mode,
                |t, x, _| self.tagcn(t, bound, x, &power_vars, level),
            );
            let mut level_attention = Vec::new();
            let out = self.sublayer(
                tape,
                bound,
                current,
                &format!("level{level}.gat.ln"),
                mode,
                |t, x, _| {
                    let (y, alphas) = self.gat(t, bound, x, &neighbor_mask, ones_row, level);
                    level_attention = alphas;
                    y
                },
            );
            attention.extend(level_attention);
            level_outputs.push(out);
        }

        let (aggregated, level_weights) = self.jumping_knowledge(tape, bound, &level_outputs);

        let fff_out = self.sublayer(tape, bound, aggregated, "fff.ln", mode, |t, x, m| {
            let x = dropout(t, x, self.config.dropout_p, m);
            let x = linear(t, x, bound.var("fff.w1"), bound.var("fff.b1"));
            let x = t.elu(x, ELU_ALPHA);
            let x = dropout(t, x, self.config.dropout_p, m);
            linear(t, x, bound.var("fff.w2"), bound.var("fff.b2"))
        });

        let (embedding, pool_scores) = self.attention_pool(tape, bound, fff_out);
        let logits = self.embedding_head(tape, bound, embedding, mode, updates);

        Ok(ForwardVars {
            logits,
            attention,
            level_weights,
            pool_scores,
        })
    }

    /// Eval-mode forward returning probabilities plus all softmax internals.
    pub fn predict_traced(&self, graph: &LabeledGraph) -> Result<(Vec<f64>, TelestoTrace)> {
        let mut tape = Tape::new();
        let bound = BoundParams::bind(&mut tape, &self.store);
        let mut mode = Mode::Eval;
        let mut updates = BufferUpdates::new();
        let vars = self.forward(&mut tape, &bound, graph, &mut mode, &mut updates)?;
        let probs_var = tape.row_softmax(vars.logits);
        let probs = tape.value(probs_var).row(0).to_vec();
        let trace = TelestoTrace {
            attention: vars
                .attention
                .iter()
                .map(|&v| tape.value(v).clone())
                .collect(),
            level_weights: tape.value(vars.level_weights).clone(),
            pool_scores: tape.value(vars.pool_scores).clone(),
            probs: probs.clone(),
        };
        Ok((probs, trace))
    }

    /// Training-mode loss for a single graph; used by gradient tests.
    pub fn train_loss_single(
        &mut self,
        graph: &LabeledGraph,
        target: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<f64> {
        let (loss, _) = self.batch_loss_and_grads(&[graph], &[target], rng)?;
        Ok(loss)
    }
}

impl GraphClassifier for TelestoModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Telesto
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
        let vars = self.forward(&mut tape, &bound, graph, &mut mode, &mut updates)?;
        let probs = tape.row_softmax(vars.logits);
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
            let vars = self.forward(&mut tape, &bound, graph, &mut mode, &mut updates)?;
            let loss = cross_entropy_loss(&mut tape, vars.logits, target);
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

    fn small_config() -> TelestoConfig {
        TelestoConfig {
            conv_filters: 2,
            hidden_dim: 8,
            levels: 2,
            tagcn_hops: 2,
            gat_heads: 2,
            jk_lstm_layers: 2,
            adjacency_dropout_p: 0.0,
            dropout_p: 0.0,
            num_classes: 3,
        }
    }

    fn graph(d: usize, w: usize, seed: u64) -> LabeledGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::Rng;
        LabeledGraph {
            node_raw_windows: Array2::from_shape_fn((d, w), |_| rng.gen_range(0.0..1.0)),
            adjacency: full_adjacency(d).unwrap(),
            label: "x".into(),
            window_end_t: w,
        }
    }

    #[test]
    fn forward_is_valid_distribution_for_any_node_count() {
        let model = TelestoModel::seeded(small_config(), 6, 1).unwrap();
        for d in [1, 3, 10, 30] {
            let probs = model.predict_probs(&graph(d, 6, d as u64)).unwrap();
            assert_eq!(probs.len(), 3);
            let sum: f64 = probs.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6, "d={d}: sum {sum}");
            assert!(probs.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let model = TelestoModel::seeded(small_config(), 6, 2).unwrap();
        let g = graph(4, 6, 9);
        let p1 = model.predict_probs(&g).unwrap();
        let p2 = model.predict_probs(&g).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn window_length_mismatch_rejected() {
        let model = TelestoModel::seeded(small_config(), 6, 3).unwrap();
        let g = graph(3, 7, 1);
        assert!(matches!(
            model.predict_probs(&g),
            Err(Error::WindowLengthMismatch { .. })
        ));
    }

    #[test]
    fn softmax_families_normalize() {
        let model = TelestoModel::seeded(small_config(), 6, 4).unwrap();
        let (probs, trace) = model.predict_traced(&graph(5, 6, 11)).unwrap();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        for alpha in &trace.attention {
            for row in alpha.outer_iter() {
                let s: f64 = row.sum();
                assert!((s - 1.0).abs() < 1e-6, "attention row sum {s}");
            }
        }
        for row in trace.level_weights.outer_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
        }
        assert!((trace.pool_scores.sum() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn residual_identity_with_zero_transform_weights() {
        // zero TAGCN/GAT/FFF weights leave the pipeline at the projected
        // input: levels and the feed-forward block become exact identities
        let mut model = TelestoModel::seeded(small_config(), 6, 5).unwrap();
        let names: Vec<String> = model
            .store()
            .params()
            .map(|(n, _)| n.clone())
            .filter(|n| n.starts_with("level") || n.starts_with("fff."))
            .filter(|n| !n.contains(".ln."))
            .collect();
        for name in names {
            let shape = model.store().param(&name).dim();
            model.store_mut().set_param(&name, Array2::zeros(shape)).unwrap();
        }
        let g = graph(4, 6, 12);
        // with all transforms zeroed the level outputs all equal x0, so the
        // JK combination equals x0 as well (convex combination of equals)
        let (_, trace) = model.predict_traced(&g).unwrap();
        for row in trace.level_weights.outer_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn tagcn_hop_zero_identity() {
        // W_0 = I, other hops zero, zero bias: output equals input
        let mut tape = Tape::new();
        let x_val = Array2::from_shape_fn((3, 4), |(i, j)| (i * 4 + j) as f64 * 0.1);
        let x = tape.constant(x_val.clone());
        let a = full_adjacency(3).unwrap();
        let powers = adjacency_powers(&normalize_adjacency(&a), 2);
        let power_vars: Vec<Var> = powers.into_iter().map(|p| tape.constant(p)).collect();
        let w0 = tape.constant(Array2::eye(4));
        let wz1 = tape.constant(Array2::zeros((4, 4)));
        let wz2 = tape.constant(Array2::zeros((4, 4)));
        let bias = tape.constant(Array2::zeros((1, 4)));
        let y = tagcn_layer(&mut tape, x, &power_vars, &[w0, wz1, wz2], bias);
        for (a, b) in tape.value(y).iter().zip(x_val.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn tagcn_matches_matrix_power_oracle() {
        // 2-node path graph with self-loops, k = 1, hand-set weights: compare
        // against an explicit polynomial-filter computation
        let a = ndarray::array![[1.0, 1.0], [1.0, 1.0]];
        let ahat = normalize_adjacency(&a);
        let x_val = ndarray::array![[1.0, -2.0], [0.5, 3.0]];
        let w0_val = ndarray::array![[0.3, -0.1], [0.2, 0.4]];
        let w1_val = ndarray::array![[-0.5, 0.6], [0.1, 0.0]];
        let b_val = ndarray::array![[0.05, -0.05]];
        let mut tape = Tape::new();
        let x = tape.constant(x_val.clone());
        let powers = adjacency_powers(&ahat, 1);
        let power_vars: Vec<Var> = powers.clone().into_iter().map(|p| tape.constant(p)).collect();
        let w0 = tape.constant(w0_val.clone());
        let w1 = tape.constant(w1_val.clone());
        let bias = tape.constant(b_val.clone());
        let y = tagcn_layer(&mut tape, x, &power_vars, &[w0, w1], bias);
        // oracle: I x W0 + Ahat x W1 + b via direct dense products
        let want = x_val.dot(&w0_val) + ahat.dot(&x_val).dot(&w1_val) + &b_val;
        for (a, b) in tape.value(y).iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn tagcn_isolated_node_gets_no_hop_contributions() {
        // node 1 has zero row/column: hop >= 1 terms vanish for it
        let a = ndarray::array![[1.0, 0.0], [0.0, 0.0]];
        let ahat = normalize_adjacency(&a);
        let mut tape = Tape::new();
        let x = tape.constant(ndarray::array![[1.0], [1.0]]);
        let powers = adjacency_powers(&ahat, 1);
        let power_vars: Vec<Var> = powers.into_iter().map(|p| tape.constant(p)).collect();
        let w0 = tape.constant(Array2::zeros((1, 1)));
        let w1 = tape.constant(Array2::ones((1, 1)));
        let bias = tape.constant(Array2::zeros((1, 1)));
        let y = tagcn_layer(&mut tape, x, &power_vars, &[w0, w1], bias);
        assert!((tape.value(y)[[0, 0]] - 1.0).abs() < 1e-12);
        assert_eq!(tape.value(y)[[1, 0]], 0.0);
    }

    #[test]
    fn gat_attention_rows_normalize_and_equal_features_are_uniform() {
        let d = 4;
        let mask = full_adjacency(d).unwrap();
        let mut tape = Tape::new();
        // identical node features: attention must be uniform 1/d
        let x = tape.constant(Array2::from_elem((d, 2), 0.7));
        let ones_row = tape.constant(Array2::ones((1, d)));
        let heads = vec![GatHeadVars {
            w: tape.param(ndarray::array![[0.4, -0.2], [0.3, 0.9]]),
            a_src: tape.param(ndarray::array![[0.5], [-0.3]]),
            a_dst: tape.param(ndarray::array![[0.2], [0.1]]),
        }];
        let (_, alphas) = gat_layer(&mut tape, x, &mask, ones_row, &heads);
        let alpha = tape.value(alphas[0]);
        for row in alpha.outer_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
            for &v in row {
                assert!((v - 1.0 / d as f64).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn gat_matches_hand_computed_attention_oracle() {
        // 3-node graph, one head, hand-set W and attention vectors; the oracle
        // recomputes scores, softmax and aggregation with scalar arithmetic
        let x_val = ndarray::array![[1.0, 0.0], [0.0, 1.0], [0.5, -0.5]];
        let w_val = ndarray::array![[0.6, -0.4], [0.2, 0.8]];
        let a_src_val = ndarray::array![[0.7], [-0.1]];
        let a_dst_val = ndarray::array![[0.3], [0.5]];
        let mask = ndarray::array![[1.0, 1.0, 0.0], [1.0, 1.0, 1.0], [0.0, 1.0, 1.0]];

        let mut tape = Tape::new();
        let x = tape.constant(x_val.clone());
        let ones_row = tape.constant(Array2::ones((1, 3)));
        let heads = vec![GatHeadVars {
            w: tape.param(w_val.clone()),
            a_src: tape.param(a_src_val.clone()),
            a_dst: tape.param(a_dst_val.clone()),
        }];
        let (out, alphas) = gat_layer(&mut tape, x, &mask, ones_row, &heads);

        let hw = x_val.dot(&w_val);
        let leaky = |v: f64| if v > 0.0 { v } else { 0.2 * v };
        let elu = |v: f64| if v > 0.0 { v } else { v.exp() - 1.0 };
        for i in 0..3 {
            let s_i = hw[[i, 0]] * a_src_val[[0, 0]] + hw[[i, 1]] * a_src_val[[1, 0]];
            let mut exps = [0.0; 3];
            let mut max = f64::NEG_INFINITY;
            for j in 0..3 {
                if mask[[i, j] ] != 0.0 {
                    let d_j = hw[[j, 0]] * a_dst_val[[0, 0]] + hw[[j, 1]] * a_dst_val[[1, 0]];
                    max = max.max(leaky(s_i + d_j));
                }
            }
            let mut denom = 0.0;
            for j in 0..3 {
                if mask[[i, j]] != 0.0 {
                    let d_j = hw[[j, 0]] * a_dst_val[[0, 0]] + hw[[j, 1]] * a_dst_val[[1, 0]];
                    exps[j] = (leaky(s_i + d_j) - max).exp();
                    denom += exps[j];
                }
            }
            for j in 0..3 {
                let want = exps[j] / denom;
                let got = tape.value(alphas[0])[[i, j]];
                assert!((got - want).abs() < 1e-9, "alpha[{i},{j}]: {got} vs {want}");
            }
            for f in 0..2 {
                let agg: f64 = (0..3).map(|j| exps[j] / denom * hw[[j, f]]).sum();
                let got = tape.value(out)[[i, f]];
                assert!((got - elu(agg)).abs() < 1e-9, "out[{i},{f}]");
            }
        }
    }

    #[test]
    fn gat_uniform_attention_reduces_to_mean_aggregation() {
        // zero attention vectors force uniform weights; with W = I the head
        // aggregates the plain neighborhood mean
        let d = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        use rand::Rng;
        let x_val = Array2::from_shape_fn((d, 3), |_| rng.gen_range(-1.0..1.0));
        let mask = full_adjacency(d).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(x_val.clone());
        let ones_row = tape.constant(Array2::ones((1, d)));
        let heads = vec![GatHeadVars {
            w: tape.constant(Array2::eye(3)),
            a_src: tape.constant(Array2::zeros((3, 1))),
            a_dst: tape.constant(Array2::zeros((3, 1))),
        }];
        let (out, _) = gat_layer(&mut tape, x, &mask, ones_row, &heads);
        let elu = |v: f64| if v > 0.0 { v } else { v.exp() - 1.0 };
        for f in 0..3 {
            let mean: f64 = (0..d).map(|j| x_val[[j, f]]).sum::<f64>() / d as f64;
            for i in 0..d {
                assert!((tape.value(out)[[i, f]] - elu(mean)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn permutation_invariance_of_class_distribution() {
        let model = TelestoModel::seeded(small_config(), 6, 6).unwrap();
        let g = graph(5, 6, 13);
        let probs = model.predict_probs(&g).unwrap();
        // rotate node order by 2 (adjacency is all-ones, unchanged by
        // permutation)
        let perm = [2usize, 3, 4, 0, 1];
        let mut permuted = g.clone();
        for (new_row, &old_row) in perm.iter().enumerate() {
            for t in 0..6 {
                permuted.node_raw_windows[[new_row, t]] = g.node_raw_windows[[old_row, t]];
            }
        }
        let probs_p = model.predict_probs(&permuted).unwrap();
        for (a, b) in probs.iter().zip(&probs_p) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }
}
