//! Dual-view corruption, truncated-threshold graph convolution, contrastive
//! pair sampling, and the refinement loss that produces the embeddings fed
//! back into the structure inducer.

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::inducer::{threshold, LatentStructure};
use crate::numkit::{sym_normalize_sparse, Mat, NodeId, SparseStructure, Tape};
use crate::opt::{AdaMoment, Patience};
use crate::seeds;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::rc::Rc;

/// Random corruption applied to produce each contrastive view.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorruptionConfig {
    /// Probability of dropping each kept structure entry.
    pub edge_drop_rate: f64,
    /// Probability of zeroing each feature dimension of a node.
    pub feature_mask_rate: f64,
    pub seed: u64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        CorruptionConfig {
            edge_drop_rate: 0.2,
            feature_mask_rate: 0.4,
            seed: 0,
        }
    }
}

impl CorruptionConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, rate) in [
            ("edge_drop_rate", self.edge_drop_rate),
            ("feature_mask_rate", self.feature_mask_rate),
        ] {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be in [0, 1), got {rate}"
                )));
            }
        }
        Ok(())
    }
}

/// One corrupted view of the graph: a thinned structure and masked features.
#[derive(Debug, Clone)]
pub struct View {
    pub structure: SparseStructure,
    pub features: Mat,
}

/// Two-layer graph convolution weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GcnWeights {
    pub w0: Mat,
    pub w1: Mat,
    /// Negative-side slope of the activation; 0 is plain ReLU.
    pub prelu_slope: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    PRelu,
}

impl Activation {
    pub fn slope(self) -> f64 {
        match self {
            Activation::Relu => 0.0,
            Activation::PRelu => 0.25,
        }
    }
}

impl GcnWeights {
    /// Glorot-uniform initialization.
    pub fn init(in_dim: usize, hidden: usize, out_dim: usize, activation: Activation, seed: u64) -> Self {
        GcnWeights {
            w0: glorot(in_dim, hidden, seed, "gcn-w0"),
            w1: glorot(hidden, out_dim, seed, "gcn-w1"),
            prelu_slope: activation.slope(),
        }
    }
}

pub(crate) fn glorot(rows: usize, cols: usize, seed: u64, tag: &str) -> Mat {
    let mut rng = seeds::rng(seed, tag, 0);
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Mat::from_fn(rows, cols, |_, _| rng.gen_range(-bound..bound))
}

/// Labeled contrastive pairs drawn from the training split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairBatch {
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
}

impl PairBatch {
    pub fn empty() -> Self {
        PairBatch {
            positives: Vec::new(),
            negatives: Vec::new(),
        }
    }
}

/// Resolution of the pairwise term's printed sign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairTermVariant {
    /// Attract positives and repel negatives:
    /// -lambda2 [log sig(z_u.z_v) + log sig(-z_u.z_vn)].
    PushPull,
    /// Literal difference form:
    /// -lambda2 [log sig(z_u.z_v) - log sig(-z_u.z_vn)].
    SignedDifference,
}

/// Generate two independently corrupted views. Each kept structure entry is
/// dropped with `edge_drop_rate`; each feature dimension of each node is
/// zeroed with `feature_mask_rate`. The views differ only in randomness.
pub fn corrupt(
    graph: &Graph,
    structure: &SparseStructure,
    cfg: &CorruptionConfig,
) -> Result<(View, View)> {
    cfg.validate()?;
    let v1 = corrupt_one(graph, structure, cfg, 0);
    let v2 = corrupt_one(graph, structure, cfg, 1);
    Ok((v1, v2))
}

fn corrupt_one(
    graph: &Graph,
    structure: &SparseStructure,
    cfg: &CorruptionConfig,
    view_index: u64,
) -> View {
    let mut edge_rng = seeds::rng(cfg.seed, "corrupt-edges", view_index);
    let kept: Vec<(usize, usize, f64)> = structure
        .upper_entries()
        .into_iter()
        .filter(|_| edge_rng.gen::<f64>() >= cfg.edge_drop_rate)
        .collect();
    let mut feat_rng = seeds::rng(cfg.seed, "corrupt-features", view_index);
    let mut features = graph.features().clone();
    for i in 0..features.rows() {
        for v in features.row_mut(i) {
            if feat_rng.gen::<f64>() < cfg.feature_mask_rate {
                *v = 0.0;
            }
        }
    }
    View {
        structure: SparseStructure::from_upper_entries(structure.n(), &kept),
        features,
    }
}

/// Two-layer truncated-threshold graph convolution:
/// Z = A_hat act(A_hat X W0) W1 with A_hat the normalized self-looped
/// structure. An empty structure degenerates to a plain MLP.
pub fn truncated_gcn_forward(x: &Mat, s_sigma: &SparseStructure, w: &GcnWeights) -> Result<Mat> {
    check_gcn_shapes(x, s_sigma, w)?;
    let a_hat = sym_normalize_sparse(s_sigma);
    let h = a_hat.spmm(&x.matmul(&w.w0));
    let slope = w.prelu_slope;
    let h = h.map(|v| if v > 0.0 { v } else { slope * v });
    Ok(a_hat.spmm(&h.matmul(&w.w1)))
}

fn check_gcn_shapes(x: &Mat, s_sigma: &SparseStructure, w: &GcnWeights) -> Result<()> {
    if s_sigma.n() != x.rows() {
        return Err(Error::ShapeMismatch {
            expected: format!("structure over {} nodes", x.rows()),
            got: format!("{} nodes", s_sigma.n()),
        });
    }
    if x.cols() != w.w0.rows() || w.w0.cols() != w.w1.rows() {
        return Err(Error::ShapeMismatch {
            expected: format!("weights {}x? and ?x?", x.cols()),
            got: format!("{:?} and {:?}", w.w0.shape(), w.w1.shape()),
        });
    }
    Ok(())
}

/// Tape version of [`truncated_gcn_forward`] for training.
pub fn gcn_forward_tape(
    tape: &mut Tape,
    x: NodeId,
    a_hat: &Rc<SparseStructure>,
    w0: NodeId,
    w1: NodeId,
    slope: f64,
) -> NodeId {
    let xw = tape.matmul(x, w0);
    let agg = tape.spmm(Rc::clone(a_hat), xw);
    let act = tape.prelu(agg, slope);
    let hw = tape.matmul(act, w1);
    tape.spmm(Rc::clone(a_hat), hw)
}

/// Uniformly sample labeled training pairs without replacement.
///
/// Positives are same-class training pairs, negatives different-class pairs.
/// Requesting more pairs than exist returns the whole pool.
pub fn sample_pairs(graph: &Graph, n_pos: usize, n_neg: usize, seed: u64) -> Result<PairBatch> {
    let train = graph.train_nodes();
    let mut pos_pool = Vec::new();
    let mut neg_pool = Vec::new();
    for (a, &u) in train.iter().enumerate() {
        for &v in train.iter().skip(a + 1) {
            if graph.label(u) == graph.label(v) {
                pos_pool.push((u, v));
            } else {
                neg_pool.push((u, v));
            }
        }
    }
    if n_pos > 0 && pos_pool.is_empty() {
        return Err(Error::InsufficientLabels(
            "no same-class training pair exists".into(),
        ));
    }
    if n_neg > 0 && neg_pool.is_empty() {
        return Err(Error::InsufficientLabels(
            "no cross-class training pair exists".into(),
        ));
    }
    let mut rng = seeds::rng(seed, "sample-pairs", 0);
    Ok(PairBatch {
        positives: take_uniform(&mut pos_pool, n_pos, &mut rng),
        negatives: take_uniform(&mut neg_pool, n_neg, &mut rng),
    })
}

/// Partial Fisher-Yates: the first `n` slots become a uniform sample without
/// replacement.
fn take_uniform<R: Rng>(pool: &mut Vec<(usize, usize)>, n: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let take = n.min(pool.len());
    for i in 0..take {
        let j = rng.gen_range(i..pool.len());
        pool.swap(i, j);
    }
    pool[..take].to_vec()
}

/// Value and per-term breakdown of the refinement loss.
#[derive(Debug, Clone, Copy)]
pub struct RefineLossTerms {
    pub total: f64,
    /// Cross-view alignment of matching nodes (first term).
    pub alignment: f64,
    /// Log-partition over the negative set (second term).
    pub contrast: f64,
    /// Labeled pairwise constraint (third term).
    pub pairwise: f64,
    /// Set when the negative set was empty (single-node input).
    pub empty_negative_set: bool,
}

/// Eq-style contrastive refinement loss over two corrupted views and the
/// clean-view embeddings. See [`build_refine_loss`] for the exact terms.
pub fn refine_loss(
    z1: &Mat,
    z2: &Mat,
    z: &Mat,
    pairs: &PairBatch,
    tau: f64,
    lambda2: f64,
    variant: PairTermVariant,
) -> Result<RefineLossTerms> {
    let mut tape = Tape::new();
    let z1 = tape.constant(z1.clone());
    let z2 = tape.constant(z2.clone());
    let z = tape.constant(z.clone());
    let parts = build_refine_loss(&mut tape, z1, z2, z, pairs, tau, lambda2, variant)?;
    Ok(RefineLossTerms {
        total: tape.value(parts.total).scalar(),
        alignment: tape.value(parts.alignment).scalar(),
        contrast: tape.value(parts.contrast).scalar(),
        pairwise: parts
            .pairwise
            .map(|id| tape.value(id).scalar())
            .unwrap_or(0.0),
        empty_negative_set: parts.empty_negative_set,
    })
}

pub struct RefineLossNodes {
    pub total: NodeId,
    pub alignment: NodeId,
    pub contrast: NodeId,
    pub pairwise: Option<NodeId>,
    pub empty_negative_set: bool,
}

/// Record the refinement loss on a tape.
///
/// term 1: -(1/tau) sum_i cos(z1_i, z2_i)
/// term 2: sum_i log sum_{j != i} [exp(cos(z1_i, z1_j)/tau)
///                                 + exp(cos(z1_i, z2_j)/tau)]
/// term 3: the labeled pairwise constraint, averaged per pair, weighted by
///         lambda2, with the sign resolved per `variant`.
#[allow(clippy::too_many_arguments)]
pub fn build_refine_loss(
    tape: &mut Tape,
    z1: NodeId,
    z2: NodeId,
    z: NodeId,
    pairs: &PairBatch,
    tau: f64,
    lambda2: f64,
    variant: PairTermVariant,
) -> Result<RefineLossNodes> {
    if tau <= 0.0 {
        return Err(Error::InvalidArgument("tau must be positive".into()));
    }
    let n = tape.value(z1).rows();
    if tape.value(z2).shape() != tape.value(z1).shape() || tape.value(z).rows() != n {
        return Err(Error::ShapeMismatch {
            expected: format!("{n} aligned embedding rows"),
            got: format!(
                "{:?} / {:?} / {:?}",
                tape.value(z1).shape(),
                tape.value(z2).shape(),
                tape.value(z).shape()
            ),
        });
    }
    let z1n = tape.row_unit(z1);
    let z2n = tape.row_unit(z2);

    // term 1
    let prod = tape.hadamard(z1n, z2n);
    let cos_diag = tape.row_sum(prod);
    let sum_align = tape.sum_all(cos_diag);
    let alignment = tape.scale(sum_align, -1.0 / tau);

    // term 2
    let empty_negative_set = n == 1;
    let contrast = {
        let z1n_t = tape.transpose(z1n);
        let z2n_t = tape.transpose(z2n);
        let c11 = tape.matmul(z1n, z1n_t);
        let c12 = tape.matmul(z1n, z2n_t);
        let c11s = tape.scale(c11, 1.0 / tau);
        let c12s = tape.scale(c12, 1.0 / tau);
        let cat = tape.hcat(c11s, c12s);
        let mut mask = vec![true; n * 2 * n];
        for i in 0..n {
            mask[i * 2 * n + i] = false; // own entry in the first block
            mask[i * 2 * n + n + i] = false; // positive pair in the second block
        }
        let lse = tape.masked_row_lse(cat, mask);
        tape.sum_all(lse)
    };

    // term 3
    let pairwise = if lambda2 != 0.0 && (!pairs.positives.is_empty() || !pairs.negatives.is_empty())
    {
        let mut parts: Vec<NodeId> = Vec::new();
        if !pairs.positives.is_empty() {
            let us: Vec<usize> = pairs.positives.iter().map(|p| p.0).collect();
            let vs: Vec<usize> = pairs.positives.iter().map(|p| p.1).collect();
            let zu = tape.gather_rows(z, us);
            let zv = tape.gather_rows(z, vs);
            let dots = tape.hadamard(zu, zv);
            let scores = tape.row_sum(dots);
            let logsig = tape.log_sigmoid(scores);
            let total = tape.sum_all(logsig);
            parts.push(tape.scale(total, -lambda2 / pairs.positives.len() as f64));
        }
        if !pairs.negatives.is_empty() {
            let us: Vec<usize> = pairs.negatives.iter().map(|p| p.0).collect();
            let vs: Vec<usize> = pairs.negatives.iter().map(|p| p.1).collect();
            let zu = tape.gather_rows(z, us);
            let zv = tape.gather_rows(z, vs);
            let dots = tape.hadamard(zu, zv);
            let scores = tape.row_sum(dots);
            let neg_scores = tape.scale(scores, -1.0);
            let logsig = tape.log_sigmoid(neg_scores);
            let total = tape.sum_all(logsig);
            let weight = match variant {
                PairTermVariant::PushPull => -lambda2,
                PairTermVariant::SignedDifference => lambda2,
            };
            parts.push(tape.scale(total, weight / pairs.negatives.len() as f64));
        }
        let mut acc = parts[0];
        for &p in &parts[1..] {
            acc = tape.add(acc, p);
        }
        Some(acc)
    } else {
        None
    };

    let mut total = tape.add(alignment, contrast);
    if let Some(p) = pairwise {
        total = tape.add(total, p);
    }
    Ok(RefineLossNodes {
        total,
        alignment,
        contrast,
        pairwise,
        empty_negative_set,
    })
}

/// Settings for the contrastive refinement stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineConfig {
    pub tau: f64,
    pub lambda2: f64,
    pub sigma: f64,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub lr: f64,
    pub epochs: usize,
    pub patience: usize,
    /// Pair-sampling batch sizes for the labeled constraint.
    pub n_pos: usize,
    pub n_neg: usize,
    pub activation: Activation,
    pub pair_variant: PairTermVariant,
    pub corruption: CorruptionConfig,
    pub seed: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            tau: 0.5,
            lambda2: 1.0,
            sigma: 0.85,
            hidden_dim: 64,
            embed_dim: 32,
            lr: 0.001,
            epochs: 1000,
            patience: 40,
            n_pos: 256,
            n_neg: 256,
            activation: Activation::Relu,
            pair_variant: PairTermVariant::PushPull,
            corruption: CorruptionConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RefineOutcome {
    /// Embeddings of the uncorrupted view under the best weights.
    pub z: Mat,
    pub weights: GcnWeights,
    pub loss_history: Vec<f64>,
    pub epochs_run: usize,
}

/// Train the dual-view contrastive refiner over a thresholded structure and
/// return the clean-view embeddings.
pub fn refine(graph: &Graph, structure: &LatentStructure, cfg: &RefineConfig) -> Result<RefineOutcome> {
    cfg.corruption.validate()?;
    let s_sigma = threshold(structure, cfg.sigma)?;
    if s_sigma.is_empty_structure() {
        return Err(Error::InvalidArgument(
            "structure is empty after thresholding; nothing to refine".into(),
        ));
    }
    let f = graph.features().cols();
    let mut weights = GcnWeights::init(f, cfg.hidden_dim, cfg.embed_dim, cfg.activation, cfg.seed);
    let clean_a_hat = Rc::new(sym_normalize_sparse(&s_sigma));
    let mut opt = AdaMoment::new(cfg.lr, &[weights.w0.shape(), weights.w1.shape()]);
    let mut patience = Patience::minimizing(cfg.patience);
    let mut best_weights = weights.clone();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut epochs_run = 0;

    for epoch in 0..cfg.epochs {
        epochs_run = epoch + 1;
        let corruption = CorruptionConfig {
            seed: seeds::derive(cfg.seed, "refine-corrupt", epoch as u64),
            ..cfg.corruption.clone()
        };
        let (v1, v2) = corrupt(graph, &s_sigma, &corruption)?;
        let a1 = Rc::new(sym_normalize_sparse(&v1.structure));
        let a2 = Rc::new(sym_normalize_sparse(&v2.structure));
        let pairs = if cfg.lambda2 != 0.0 && (cfg.n_pos > 0 || cfg.n_neg > 0) {
            sample_pairs(
                graph,
                cfg.n_pos,
                cfg.n_neg,
                seeds::derive(cfg.seed, "refine-pairs", epoch as u64),
            )?
        } else {
            PairBatch::empty()
        };

        let mut tape = Tape::new();
        let w0 = tape.param(weights.w0.clone());
        let w1 = tape.param(weights.w1.clone());
        let x1 = tape.constant(v1.features);
        let x2 = tape.constant(v2.features);
        let x = tape.constant(graph.features().clone());
        let slope = weights.prelu_slope;
        let z1 = gcn_forward_tape(&mut tape, x1, &a1, w0, w1, slope);
        let z2 = gcn_forward_tape(&mut tape, x2, &a2, w0, w1, slope);
        let z = gcn_forward_tape(&mut tape, x, &clean_a_hat, w0, w1, slope);
        let loss_nodes = build_refine_loss(
            &mut tape,
            z1,
            z2,
            z,
            &pairs,
            cfg.tau,
            cfg.lambda2,
            cfg.pair_variant,
        )?;
        let loss = tape.value(loss_nodes.total).scalar();
        if !loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: format!("refinement loss became {loss}"),
            });
        }
        history.push(loss);
        if patience.observe(loss) {
            best_weights = weights.clone();
        }
        if patience.exhausted() {
            break;
        }
        let grads = tape.backward(loss_nodes.total)?;
        let g0 = grads.param_grad(&tape, w0);
        let g1 = grads.param_grad(&tape, w1);
        let mut params = [weights.w0.clone(), weights.w1.clone()];
        opt.apply(&mut params, &[g0, g1]);
        let [w0_new, w1_new] = params;
        weights.w0 = w0_new;
        weights.w1 = w1_new;
    }
    if cfg.epochs == 0 {
        best_weights = weights.clone();
    }
    let z = truncated_gcn_forward(graph.features(), &s_sigma, &best_weights)?;
    Ok(RefineOutcome {
        z,
        weights: best_weights,
        loss_history: history,
        epochs_run,
    })
}
