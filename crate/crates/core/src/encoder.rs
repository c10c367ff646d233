//! Masked-feature graph autoencoder, softmax classifier, joint training, and
//! the multi-round pipeline that ties structure induction, contrastive
//! refinement and training together.

use crate::error::{Error, Result};
use crate::graph::{edge_homophily_ratio_sparse, mean_node_heterophily_weighted, Graph};
use crate::inducer::{
    bootstrap, fit_self_expressive, generate_structure, threshold, InducerConfig, LatentStructure,
    Provenance,
};
use crate::numkit::{sym_normalize_sparse, Mat, NodeId, SparseStructure, Tape};
use crate::opt::{AdaMoment, Patience};
use crate::refiner::{
    gcn_forward_tape, glorot, refine, truncated_gcn_forward, Activation, GcnWeights, RefineConfig,
};
use crate::seeds;
use serde::{Deserialize, Serialize};
use std::rc::Rc;

/// Which nodes had their features replaced by the mask token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub masked_nodes: Vec<usize>,
    pub mask_rate: f64,
    pub seed: u64,
    /// Token row the masked features were replaced with.
    pub mask_token: Mat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskTokenMode {
    /// Learned token vectors, initialized at zero.
    Learned,
    /// Plain zero masking.
    Zeros,
}

/// Encoder, re-mask token and decoder of the masked autoencoder.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderWeights {
    pub gcn: GcnWeights,
    /// Decoder weight, latent -> feature space.
    pub decoder: Mat,
    pub mask_token: Mat,
    pub remask_token: Mat,
}

impl EncoderWeights {
    pub fn init(f: usize, hidden: usize, latent: usize, activation: Activation, seed: u64) -> Self {
        EncoderWeights {
            gcn: GcnWeights::init(f, hidden, latent, activation, seed),
            decoder: glorot(latent, f, seed, "decoder"),
            mask_token: Mat::zeros(1, f),
            remask_token: Mat::zeros(1, latent),
        }
    }
}

/// Linear classification head.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseHead {
    pub w: Mat,
    pub b: Mat,
}

impl DenseHead {
    pub fn init(latent: usize, classes: usize, seed: u64) -> Self {
        DenseHead {
            w: glorot(latent, classes, seed, "head"),
            b: Mat::zeros(1, classes),
        }
    }
}

/// Replace round(theta * N) feature rows with the token row.
pub fn mask_features(x: &Mat, theta: f64, seed: u64, token: &Mat) -> Result<(Mat, MaskPlan)> {
    if !(0.0..1.0).contains(&theta) {
        return Err(Error::InvalidArgument(format!(
            "mask rate must be in (0, 1), got {theta}"
        )));
    }
    if token.rows() != 1 || token.cols() != x.cols() {
        return Err(Error::ShapeMismatch {
            expected: format!("1x{} token", x.cols()),
            got: format!("{:?}", token.shape()),
        });
    }
    let n = x.rows();
    let k = (theta * n as f64).round() as usize;
    let masked_nodes = choose_k(n, k, seeds::derive(seed, "mask-features", 0));
    let mut out = x.clone();
    for &i in &masked_nodes {
        out.row_mut(i).copy_from_slice(token.row(0));
    }
    Ok((
        out,
        MaskPlan {
            masked_nodes,
            mask_rate: theta,
            seed,
            mask_token: token.clone(),
        },
    ))
}

/// Uniform k-subset of 0..n, sorted, via a partial shuffle.
pub(crate) fn choose_k(n: usize, k: usize, seed: u64) -> Vec<usize> {
    use rand::Rng;
    let mut rng = seeds::rng(seed, "choose-k", 0);
    let mut idx: Vec<usize> = (0..n).collect();
    let take = k.min(n);
    for i in 0..take {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    let mut chosen = idx[..take].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Encode masked features, re-mask the latent rows, decode back to feature
/// space.
pub fn reconstruct(
    x_masked: &Mat,
    plan: &MaskPlan,
    structure: &SparseStructure,
    weights: &EncoderWeights,
) -> Result<Mat> {
    let h = truncated_gcn_forward(x_masked, structure, &weights.gcn)?;
    if weights.remask_token.cols() != h.cols() || weights.decoder.rows() != h.cols() {
        return Err(Error::ShapeMismatch {
            expected: format!("latent dim {}", h.cols()),
            got: format!(
                "remask {:?}, decoder {:?}",
                weights.remask_token.shape(),
                weights.decoder.shape()
            ),
        });
    }
    let mut h = h;
    for &i in &plan.masked_nodes {
        h.row_mut(i).copy_from_slice(weights.remask_token.row(0));
    }
    let a_hat = sym_normalize_sparse(structure);
    Ok(a_hat.spmm(&h.matmul(&weights.decoder)))
}

/// Mean over the masked set of (1 - cos(x_i, x_hat_i))^gamma. Rows where
/// either side has zero norm have no defined cosine and are excluded; the
/// exclusion count is reported.
#[derive(Debug, Clone, Copy)]
pub struct ScaledCosineError {
    pub value: f64,
    pub excluded: usize,
}

pub fn scaled_cosine_error(
    x: &Mat,
    x_hat: &Mat,
    masked: &[usize],
    gamma: f64,
) -> Result<ScaledCosineError> {
    if gamma < 1.0 {
        return Err(Error::InvalidArgument("gamma must be at least 1".into()));
    }
    if masked.is_empty() {
        return Err(Error::InvalidArgument("masked set is empty".into()));
    }
    if x.shape() != x_hat.shape() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", x.shape()),
            got: format!("{:?}", x_hat.shape()),
        });
    }
    let mut acc = 0.0;
    let mut used = 0usize;
    let mut excluded = 0usize;
    for &i in masked {
        let nx = x.row_norm(i);
        let nh = x_hat.row_norm(i);
        if nx == 0.0 || nh == 0.0 {
            excluded += 1;
            continue;
        }
        let mut dot = 0.0;
        for (a, b) in x.row(i).iter().zip(x_hat.row(i)) {
            dot += a * b;
        }
        acc += (1.0 - dot / (nx * nh)).powf(gamma);
        used += 1;
    }
    if used == 0 {
        return Err(Error::EmptyDistribution(
            "every masked row had zero norm".into(),
        ));
    }
    Ok(ScaledCosineError {
        value: acc / used as f64,
        excluded,
    })
}

/// Row-stochastic class probabilities from latent features.
pub fn classify(h: &Mat, head: &DenseHead) -> Result<Mat> {
    if h.cols() != head.w.rows() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} latent columns", head.w.rows()),
            got: format!("{}", h.cols()),
        });
    }
    let mut logits = h.matmul(&head.w);
    for i in 0..logits.rows() {
        for (v, &b) in logits.row_mut(i).iter_mut().zip(head.b.row(0)) {
            *v += b;
        }
    }
    Ok(logits.row_softmax())
}

pub fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of nodes in `nodes` whose argmax prediction matches the label.
pub fn accuracy(probs: &Mat, labels: &[usize], nodes: &[usize]) -> f64 {
    if nodes.is_empty() {
        return 0.0;
    }
    let correct = nodes
        .iter()
        .filter(|&&i| argmax_row(probs.row(i)) == labels[i])
        .count();
    correct as f64 / nodes.len() as f64
}

/// Joint training configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Weight of the reconstruction loss in the joint objective.
    pub beta: f64,
    /// Cosine-error scale, at least 1.
    pub gamma: f64,
    /// Feature mask rate.
    pub theta: f64,
    pub lr: f64,
    pub epochs: usize,
    pub patience: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub activation: Activation,
    pub mask_token_mode: MaskTokenMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            beta: 1.2,
            gamma: 2.0,
            theta: 0.5,
            lr: 0.001,
            epochs: 1000,
            patience: 40,
            hidden_dim: 64,
            latent_dim: 32,
            activation: Activation::Relu,
            mask_token_mode: MaskTokenMode::Learned,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gamma < 1.0 {
            return Err(Error::InvalidArgument("gamma must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.theta) {
            return Err(Error::InvalidArgument("theta must be in (0, 1)".into()));
        }
        if self.beta < 0.0 {
            return Err(Error::InvalidArgument("beta must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub loss_pre: f64,
    pub loss_re: f64,
    pub loss_total: f64,
    pub val_acc: f64,
}

/// Trained encoder + head with its training history.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedCore {
    pub encoder: EncoderWeights,
    pub head: DenseHead,
    pub history: Vec<EpochRow>,
    pub best_val_acc: f64,
    pub best_epoch: usize,
}

/// Jointly minimize mean training cross-entropy plus beta times the scaled
/// cosine reconstruction error; early-stops on validation accuracy and
/// returns the best-validation weights.
pub fn joint_train(graph: &Graph, structure: &SparseStructure, cfg: &TrainConfig) -> Result<TrainedCore> {
    cfg.validate()?;
    let train_nodes = graph.train_nodes();
    if train_nodes.is_empty() {
        return Err(Error::InsufficientLabels("empty training mask".into()));
    }
    // Validation accuracy drives early stopping; without a validation split
    // the training accuracy stands in.
    let val_nodes = {
        let v = graph.val_nodes();
        if v.is_empty() {
            train_nodes.clone()
        } else {
            v
        }
    };
    let n = graph.n_nodes();
    let f = graph.features().cols();
    let d = graph.n_classes();
    let mut encoder = EncoderWeights::init(f, cfg.hidden_dim, cfg.latent_dim, cfg.activation, cfg.seed);
    let mut head = DenseHead::init(cfg.latent_dim, d, cfg.seed);
    let a_hat = Rc::new(sym_normalize_sparse(structure));
    let slope = cfg.activation.slope();

    let shapes = [
        encoder.gcn.w0.shape(),
        encoder.gcn.w1.shape(),
        encoder.decoder.shape(),
        encoder.mask_token.shape(),
        encoder.remask_token.shape(),
        head.w.shape(),
        head.b.shape(),
    ];
    let mut opt = AdaMoment::new(cfg.lr, &shapes);
    let mut patience = Patience::maximizing(cfg.patience);
    let mut best = TrainedCore {
        encoder: encoder.clone(),
        head: head.clone(),
        history: Vec::new(),
        best_val_acc: f64::NEG_INFINITY,
        best_epoch: 0,
    };
    let mut history: Vec<EpochRow> = Vec::with_capacity(cfg.epochs);

    let onehot_train = {
        let mut m = Mat::zeros(train_nodes.len(), d);
        for (k, &i) in train_nodes.iter().enumerate() {
            m[(k, graph.label(i))] = 1.0;
        }
        m
    };

    for epoch in 0..cfg.epochs {
        let mut tape = Tape::new();
        let w0 = tape.param(encoder.gcn.w0.clone());
        let w1 = tape.param(encoder.gcn.w1.clone());
        let wd = tape.param(encoder.decoder.clone());
        let mtok = match cfg.mask_token_mode {
            MaskTokenMode::Learned => tape.param(encoder.mask_token.clone()),
            MaskTokenMode::Zeros => tape.constant(Mat::zeros(1, f)),
        };
        let rtok = match cfg.mask_token_mode {
            MaskTokenMode::Learned => tape.param(encoder.remask_token.clone()),
            MaskTokenMode::Zeros => tape.constant(Mat::zeros(1, cfg.latent_dim)),
        };
        let wh = tape.param(head.w.clone());
        let bh = tape.param(head.b.clone());
        let x = tape.constant(graph.features().clone());

        // Clean pass for classification.
        let h_clean = gcn_forward_tape(&mut tape, x, &a_hat, w0, w1, slope);
        let h_train = tape.gather_rows(h_clean, train_nodes.clone());
        let logits_train = {
            let hw = tape.matmul(h_train, wh);
            tape.add_row_broadcast(hw, bh)
        };
        let loss_pre = cross_entropy_mean(&mut tape, logits_train, &onehot_train);

        // Masked pass for reconstruction.
        let (loss_re, masked_count) = if cfg.beta > 0.0 {
            let mask_seed = seeds::derive(cfg.seed, "train-mask", epoch as u64);
            let masked_nodes = choose_k(n, (cfg.theta * n as f64).round() as usize, mask_seed);
            if masked_nodes.is_empty() {
                (None, 0)
            } else {
                let keep = {
                    let mut m = Mat::from_fn(n, f, |_, _| 1.0);
                    for &i in &masked_nodes {
                        for v in m.row_mut(i) {
                            *v = 0.0;
                        }
                    }
                    m
                };
                let indicator = {
                    let mut m = Mat::zeros(n, 1);
                    for &i in &masked_nodes {
                        m[(i, 0)] = 1.0;
                    }
                    m
                };
                let keep_c = tape.constant(keep);
                let ind_c = tape.constant(indicator);
                let kept = tape.hadamard(x, keep_c);
                let token_rows = tape.matmul(ind_c, mtok);
                let x_tilde = tape.add(kept, token_rows);
                let h_m = gcn_forward_tape(&mut tape, x_tilde, &a_hat, w0, w1, slope);
                // re-mask the latent rows with the second token
                let keep_lat = {
                    let mut m = Mat::from_fn(n, cfg.latent_dim, |_, _| 1.0);
                    for &i in &masked_nodes {
                        for v in m.row_mut(i) {
                            *v = 0.0;
                        }
                    }
                    tape.constant(m)
                };
                let h_kept = tape.hadamard(h_m, keep_lat);
                let rtok_rows = tape.matmul(ind_c, rtok);
                let h_tilde = tape.add(h_kept, rtok_rows);
                let hd = tape.matmul(h_tilde, wd);
                let x_hat = tape.spmm(Rc::clone(&a_hat), hd);
                let compare: Vec<usize> = masked_nodes
                    .iter()
                    .cloned()
                    .filter(|&i| graph.features().row_norm(i) > 0.0)
                    .collect();
                if compare.is_empty() {
                    (None, 0)
                } else {
                    let count = compare.len();
                    let xh_rows = tape.gather_rows(x_hat, compare.clone());
                    let x_rows = {
                        let gathered = graph.features().gather_rows(&compare);
                        tape.constant(gathered)
                    };
                    let xh_u = tape.row_unit(xh_rows);
                    let x_u = tape.row_unit(x_rows);
                    let prod = tape.hadamard(xh_u, x_u);
                    let cos = tape.row_sum(prod);
                    let neg = tape.scale(cos, -1.0);
                    let one_minus = tape.add_scalar(neg, 1.0);
                    let powed = tape.powf(one_minus, cfg.gamma);
                    let total = tape.sum_all(powed);
                    (Some(tape.scale(total, 1.0 / count as f64)), count)
                }
            }
        } else {
            (None, 0)
        };
        let _ = masked_count;

        let total = match loss_re {
            Some(re) => {
                let scaled = tape.scale(re, cfg.beta);
                tape.add(loss_pre, scaled)
            }
            None => loss_pre,
        };

        let loss_pre_v = tape.value(loss_pre).scalar();
        let loss_re_v = loss_re.map(|id| tape.value(id).scalar()).unwrap_or(0.0);
        let loss_total_v = tape.value(total).scalar();
        if !loss_total_v.is_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: format!(
                    "joint loss became {loss_total_v} (pre {loss_pre_v}, re {loss_re_v}); \
                     {} epochs recorded",
                    history.len()
                ),
            });
        }

        // Validation accuracy from the clean pass.
        let probs = {
            let h = tape.value(h_clean);
            let mut logits = h.matmul(&head.w);
            for i in 0..logits.rows() {
                for (v, &b) in logits.row_mut(i).iter_mut().zip(head.b.row(0)) {
                    *v += b;
                }
            }
            logits.row_softmax()
        };
        let val_acc = accuracy(&probs, graph.labels(), &val_nodes);
        history.push(EpochRow {
            epoch,
            loss_pre: loss_pre_v,
            loss_re: loss_re_v,
            loss_total: loss_total_v,
            val_acc,
        });
        if patience.observe(val_acc) {
            best.encoder = encoder.clone();
            best.head = head.clone();
            best.best_val_acc = val_acc;
            best.best_epoch = epoch;
        }
        if patience.exhausted() {
            break;
        }

        let grads = tape.backward(total)?;
        let ids = [w0, w1, wd, mtok, rtok, wh, bh];
        let gs: Vec<Mat> = ids.iter().map(|&id| grads.param_grad(&tape, id)).collect();
        let mut params = vec![
            encoder.gcn.w0.clone(),
            encoder.gcn.w1.clone(),
            encoder.decoder.clone(),
            encoder.mask_token.clone(),
            encoder.remask_token.clone(),
            head.w.clone(),
            head.b.clone(),
        ];
        opt.apply(&mut params, &gs);
        encoder.gcn.w0 = params[0].clone();
        encoder.gcn.w1 = params[1].clone();
        encoder.decoder = params[2].clone();
        encoder.mask_token = params[3].clone();
        encoder.remask_token = params[4].clone();
        head.w = params[5].clone();
        head.b = params[6].clone();
    }
    if best.best_val_acc == f64::NEG_INFINITY {
        best.encoder = encoder;
        best.head = head;
        best.best_val_acc = 0.0;
    }
    best.history = history;
    Ok(best)
}

/// Mean cross-entropy of logits against one-hot labels, on the tape.
fn cross_entropy_mean(tape: &mut Tape, logits: NodeId, onehot: &Mat) -> NodeId {
    let k = onehot.rows();
    let cols = onehot.cols();
    let mask = vec![true; k * cols];
    let lse = tape.masked_row_lse(logits, mask);
    let oh = tape.constant(onehot.clone());
    let picked = tape.hadamard(logits, oh);
    let picked_sum = tape.row_sum(picked);
    let diff = tape.sub(lse, picked_sum);
    let total = tape.sum_all(diff);
    tape.scale(total, 1.0 / k as f64)
}

/// Latent representation and class probabilities for a trained model.
pub fn predict(
    graph: &Graph,
    structure: &SparseStructure,
    encoder: &EncoderWeights,
    head: &DenseHead,
) -> Result<Mat> {
    let h = truncated_gcn_forward(graph.features(), structure, &encoder.gcn)?;
    classify(&h, head)
}

/// Reconstruction error of a trained autoencoder under a fresh mask plan.
pub fn evaluate_reconstruction(
    graph: &Graph,
    structure: &SparseStructure,
    encoder: &EncoderWeights,
    theta: f64,
    gamma: f64,
    seed: u64,
) -> Result<f64> {
    let (x_masked, plan) = mask_features(graph.features(), theta, seed, &encoder.mask_token)?;
    let x_hat = reconstruct(&x_masked, &plan, structure, encoder)?;
    Ok(scaled_cosine_error(graph.features(), &x_hat, &plan.masked_nodes, gamma)?.value)
}

/// How a bundle derives its inference structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StructureSource {
    /// Structure learned by the inducer from features.
    Learned,
    /// The graph adjacency itself (plain GCN baseline).
    Adjacency,
}

/// Statistics and structure captured after each induction round.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Homophily ratio of the bootstrapped dense structure.
    pub ehr_bootstrapped: Option<f64>,
    /// Homophily ratio of the thresholded structure.
    pub ehr_thresholded: Option<f64>,
    /// Weighted mean node heterophily on the thresholded structure.
    pub mean_h_weighted: Option<f64>,
    pub nnz_thresholded: usize,
    pub refine_epochs: Option<usize>,
    pub refine_final_loss: Option<f64>,
    pub structure_sigma: SparseStructure,
}

/// Full pipeline configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub inducer: InducerConfig,
    pub refine: RefineConfig,
    pub train: TrainConfig,
}

/// Everything a trained run produces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelBundle {
    pub version: u32,
    pub config_hash: u64,
    pub seed: u64,
    pub structure_source: StructureSource,
    pub resolved_zeta: f64,
    pub config: PipelineConfig,
    pub rounds: Vec<RoundRecord>,
    /// Final thresholded structure used for training and inference.
    pub structure: SparseStructure,
    pub encoder: EncoderWeights,
    pub head: DenseHead,
    pub history: Vec<EpochRow>,
    pub best_val_acc: f64,
    pub test_accuracy: f64,
}

pub const BUNDLE_VERSION: u32 = 1;

/// Stable 64-bit hash of a serializable config.
pub fn config_hash<T: Serialize>(cfg: &T) -> u64 {
    let text = serde_json::to_string(cfg).expect("config serializes");
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Multi-round structure induction: fit the self-expressive coefficients,
/// generate and bootstrap the structure, refining the inputs between rounds.
/// Pure in (graph, config, zeta, seed), so re-running it at inference time
/// on the same graph reproduces the training structure exactly.
pub fn induce_structure(
    graph: &Graph,
    cfg: &PipelineConfig,
    zeta: f64,
    seed: u64,
) -> Result<(LatentStructure, Vec<RoundRecord>)> {
    cfg.inducer.validate(graph.n_nodes(), graph.n_classes())?;
    let hash = config_hash(cfg);
    let adjacency = graph.adjacency_matrix();
    let labels = graph.labels();
    let mut rounds: Vec<RoundRecord> = Vec::with_capacity(cfg.inducer.rounds);
    let mut input = graph.features().clone();
    let mut current: Option<LatentStructure> = None;

    for round in 1..=cfg.inducer.rounds {
        let fit = fit_self_expressive(&input, cfg.inducer.lambda1, cfg.inducer.solver)?;
        let mut s = generate_structure(
            &fit.coefficients,
            graph.n_classes(),
            cfg.inducer.subspace_dim_k,
        )?;
        s.provenance = Provenance {
            round,
            config_hash: hash,
            svd_path: s.provenance.svd_path,
        };
        let s = bootstrap(&s, &adjacency, zeta)?;
        let s_sigma = threshold(&s, cfg.inducer.sigma)?;
        let mut record = RoundRecord {
            round,
            ehr_bootstrapped: edge_homophily_ratio_sparse(
                &SparseStructure::from_dense_where(s.matrix(), |w| w > 0.0),
                labels,
            )
            .ok(),
            ehr_thresholded: edge_homophily_ratio_sparse(&s_sigma, labels).ok(),
            mean_h_weighted: mean_node_heterophily_weighted(
                &s_sigma,
                labels,
                &graph.all_nodes(),
            )
            .ok(),
            nnz_thresholded: s_sigma.nnz_undirected(),
            refine_epochs: None,
            refine_final_loss: None,
            structure_sigma: s_sigma,
        };
        if round < cfg.inducer.rounds {
            let refine_cfg = RefineConfig {
                sigma: cfg.inducer.sigma,
                seed: seeds::derive(seed, "pipeline-refine", round as u64),
                ..cfg.refine.clone()
            };
            let out = refine(graph, &s, &refine_cfg)?;
            record.refine_epochs = Some(out.epochs_run);
            record.refine_final_loss = out.loss_history.last().copied();
            input = out.z;
        }
        rounds.push(record);
        current = Some(s);
    }
    Ok((current.expect("at least one round"), rounds))
}

/// Run the full multi-round pipeline: induce the structure, then threshold
/// it and train the classifier-autoencoder jointly.
pub fn lhs_pipeline(graph: &Graph, cfg: &PipelineConfig, seed: u64) -> Result<ModelBundle> {
    cfg.train.validate()?;
    let hash = config_hash(cfg);
    let zeta = cfg.inducer.resolve_zeta(graph);
    let labels = graph.labels();
    let (final_structure, rounds) = induce_structure(graph, cfg, zeta, seed)?;
    let s_sigma = threshold(&final_structure, cfg.inducer.sigma)?;
    let train_cfg = TrainConfig {
        seed: seeds::derive(seed, "pipeline-train", 0),
        ..cfg.train.clone()
    };
    let trained = joint_train(graph, &s_sigma, &train_cfg)?;
    let probs = predict(graph, &s_sigma, &trained.encoder, &trained.head)?;
    let test_accuracy = accuracy(&probs, labels, &graph.test_nodes());
    Ok(ModelBundle {
        version: BUNDLE_VERSION,
        config_hash: hash,
        seed,
        structure_source: StructureSource::Learned,
        resolved_zeta: zeta,
        config: cfg.clone(),
        rounds,
        structure: s_sigma,
        encoder: trained.encoder,
        head: trained.head,
        history: trained.history,
        best_val_acc: trained.best_val_acc,
        test_accuracy,
    })
}

/// Train a plain GCN baseline over the graph's own adjacency (no structure
/// learning, no reconstruction loss).
pub fn vanilla_gcn_pipeline(graph: &Graph, cfg: &PipelineConfig, seed: u64) -> Result<ModelBundle> {
    let mut cfg = cfg.clone();
    cfg.train.beta = 0.0;
    let hash = config_hash(&cfg);
    let structure = graph.adjacency_structure();
    let train_cfg = TrainConfig {
        seed: seeds::derive(seed, "pipeline-train", 0),
        ..cfg.train.clone()
    };
    let trained = joint_train(graph, &structure, &train_cfg)?;
    let probs = predict(graph, &structure, &trained.encoder, &trained.head)?;
    let test_accuracy = accuracy(&probs, graph.labels(), &graph.test_nodes());
    Ok(ModelBundle {
        version: BUNDLE_VERSION,
        config_hash: hash,
        seed,
        structure_source: StructureSource::Adjacency,
        resolved_zeta: 1.0,
        config: cfg,
        rounds: Vec::new(),
        structure,
        encoder: trained.encoder,
        head: trained.head,
        history: trained.history,
        best_val_acc: trained.best_val_acc,
        test_accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Masks;
    use crate::numkit::svd::gaussian_mat;

    fn ring_graph(n: usize, classes: usize, seed: u64, with_splits: bool) -> Graph {
        let feats = gaussian_mat(n, 5, seed);
        let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        let mut edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
        edges.push((0, n - 1));
        let mut masks = Masks::empty(n);
        for i in 0..n {
            if !with_splits || i % 5 < 3 {
                masks.train[i] = true;
            } else if i % 5 == 3 {
                masks.val[i] = true;
            } else {
                masks.test[i] = true;
            }
        }
        Graph::new(feats, labels, edges, masks).unwrap()
    }

    #[test]
    fn mask_counts_are_exact() {
        let x = gaussian_mat(100, 3, 1);
        let token = Mat::zeros(1, 3);
        for seed in 0..5 {
            let (_, plan) = mask_features(&x, 0.5, seed, &token).unwrap();
            assert_eq!(plan.masked_nodes.len(), 50);
        }
        let (_, tiny) = mask_features(&gaussian_mat(10, 3, 2), 0.01, 0, &token).unwrap();
        assert!(tiny.masked_nodes.len() <= 1);
    }

    #[test]
    fn unmasked_rows_are_bit_identical() {
        let x = gaussian_mat(20, 4, 3);
        let token = Mat::from_fn(1, 4, |_, j| j as f64);
        let (xm, plan) = mask_features(&x, 0.3, 7, &token).unwrap();
        let masked: std::collections::HashSet<usize> = plan.masked_nodes.iter().cloned().collect();
        for i in 0..20 {
            if masked.contains(&i) {
                assert_eq!(xm.row(i), token.row(0));
            } else {
                assert_eq!(xm.row(i), x.row(i));
            }
        }
    }

    #[test]
    fn scaled_cosine_error_closed_forms() {
        let x = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]);
        let same = scaled_cosine_error(&x, &x, &[0, 1], 1.0).unwrap();
        assert!(same.value.abs() < 1e-15);
        let neg = x.scale(-1.0);
        let opposite = scaled_cosine_error(&x, &neg, &[0, 1], 1.0).unwrap();
        assert!((opposite.value - 2.0).abs() < 1e-12);
        // cos = 0.5 at gamma 2 -> 0.25
        let a = Mat::from_rows(&[vec![1.0, 0.0]]);
        let b = Mat::from_rows(&[vec![1.0, 3f64.sqrt()]]);
        let half = scaled_cosine_error(&a, &b, &[0], 2.0).unwrap();
        assert!((half.value - 0.25).abs() < 1e-12);
    }

    #[test]
    fn scaled_cosine_error_excludes_zero_rows() {
        let x = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]);
        let xh = Mat::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0]]);
        let out = scaled_cosine_error(&x, &xh, &[0, 1], 1.0).unwrap();
        assert_eq!(out.excluded, 1);
        assert!(out.value.abs() < 1e-15);
        assert!(scaled_cosine_error(&x, &xh, &[1], 1.0).is_err());
    }

    #[test]
    fn classify_uniform_shift_invariance_argmax() {
        let h = gaussian_mat(6, 4, 11);
        let zero_head = DenseHead {
            w: Mat::zeros(4, 3),
            b: Mat::zeros(1, 3),
        };
        let probs = classify(&h, &zero_head).unwrap();
        for i in 0..6 {
            for j in 0..3 {
                assert!((probs[(i, j)] - 1.0 / 3.0).abs() < 1e-12);
            }
        }
        let head = DenseHead {
            w: gaussian_mat(4, 3, 12),
            b: gaussian_mat(1, 3, 13),
        };
        let p1 = classify(&h, &head).unwrap();
        let shifted = DenseHead {
            w: head.w.clone(),
            b: head.b.map(|v| v + 5.0),
        };
        let p2 = classify(&h, &shifted).unwrap();
        assert!(p1.sub(&p2).max_abs() < 1e-9);
        for i in 0..6 {
            let row_sum: f64 = p1.row(i).iter().sum();
            assert!((row_sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn reconstruction_depends_on_neighbors_of_masked_nodes() {
        let g = ring_graph(10, 2, 21, false);
        let s = g.adjacency_structure();
        let enc = EncoderWeights::init(5, 6, 4, Activation::Relu, 3);
        let token = Mat::zeros(1, 5);
        let (xm, plan) = mask_features(g.features(), 0.3, 5, &token).unwrap();
        let base = reconstruct(&xm, &plan, &s, &enc).unwrap();
        // zero the features of a masked node's unmasked neighbor and re-run
        let masked: std::collections::HashSet<usize> = plan.masked_nodes.iter().cloned().collect();
        let (target, neighbor) = plan
            .masked_nodes
            .iter()
            .find_map(|&t| {
                g.neighbors(t)
                    .iter()
                    .find(|&&u| !masked.contains(&u))
                    .map(|&u| (t, u))
            })
            .expect("some masked node has an unmasked neighbor");
        let mut xm2 = xm.clone();
        for v in xm2.row_mut(neighbor) {
            *v = 0.0;
        }
        let changed = reconstruct(&xm2, &plan, &s, &enc).unwrap();
        let delta: f64 = base
            .row(target)
            .iter()
            .zip(changed.row(target))
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(delta > 1e-9, "masked reconstruction ignored neighbors");
    }

    #[test]
    fn reconstruction_shape_matches_input() {
        let g = ring_graph(8, 2, 31, false);
        let empty = SparseStructure::from_upper_entries(8, &[]);
        let enc = EncoderWeights::init(5, 4, 3, Activation::Relu, 9);
        let token = Mat::zeros(1, 5);
        let (xm, plan) = mask_features(g.features(), 0.25, 1, &token).unwrap();
        let xh = reconstruct(&xm, &plan, &empty, &enc).unwrap();
        assert_eq!(xh.shape(), g.features().shape());
    }

    #[test]
    fn joint_training_reduces_cross_entropy() {
        let g = ring_graph(30, 3, 41, true);
        let s = g.adjacency_structure();
        let cfg = TrainConfig {
            beta: 0.0,
            epochs: 20,
            patience: 50,
            hidden_dim: 8,
            latent_dim: 6,
            lr: 0.02,
            ..Default::default()
        };
        let out = joint_train(&g, &s, &cfg).unwrap();
        assert!(out.history.last().unwrap().loss_pre < out.history[0].loss_pre);
    }

    #[test]
    fn large_beta_drives_reconstruction_lower() {
        let g = ring_graph(24, 2, 51, true);
        let s = g.adjacency_structure();
        let base = TrainConfig {
            epochs: 60,
            patience: 100,
            hidden_dim: 8,
            latent_dim: 6,
            lr: 0.02,
            theta: 0.4,
            gamma: 1.0,
            ..Default::default()
        };
        let no_re = joint_train(
            &g,
            &s,
            &TrainConfig {
                beta: 0.0,
                ..base.clone()
            },
        )
        .unwrap();
        let heavy = joint_train(
            &g,
            &s,
            &TrainConfig {
                beta: 50.0,
                ..base.clone()
            },
        )
        .unwrap();
        let err_no = evaluate_reconstruction(&g, &s, &no_re.encoder, 0.4, 1.0, 99).unwrap();
        let err_heavy = evaluate_reconstruction(&g, &s, &heavy.encoder, 0.4, 1.0, 99).unwrap();
        assert!(
            err_heavy < err_no,
            "training the reconstruction should lower its error ({err_heavy} vs {err_no})"
        );
    }

    #[test]
    fn early_stopping_returns_best_validation_weights() {
        let g = ring_graph(25, 2, 61, true);
        let s = g.adjacency_structure();
        let cfg = TrainConfig {
            beta: 0.5,
            epochs: 40,
            patience: 10,
            hidden_dim: 8,
            latent_dim: 4,
            lr: 0.05,
            ..Default::default()
        };
        let out = joint_train(&g, &s, &cfg).unwrap();
        let best_seen = out
            .history
            .iter()
            .map(|r| r.val_acc)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((out.best_val_acc - best_seen).abs() < 1e-12);
        let probs = predict(&g, &s, &out.encoder, &out.head).unwrap();
        let val = accuracy(&probs, g.labels(), &g.val_nodes());
        assert!((val - out.best_val_acc).abs() < 1e-12);
    }

    #[test]
    fn identical_seeds_reproduce_identical_history() {
        let g = ring_graph(20, 2, 71, true);
        let s = g.adjacency_structure();
        let cfg = TrainConfig {
            epochs: 10,
            patience: 20,
            hidden_dim: 6,
            latent_dim: 4,
            seed: 5,
            ..Default::default()
        };
        let a = joint_train(&g, &s, &cfg).unwrap();
        let b = joint_train(&g, &s, &cfg).unwrap();
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn joint_loss_gradient_matches_finite_differences() {
        use crate::numkit::fdcheck;
        let g = ring_graph(8, 2, 81, true);
        let s = g.adjacency_structure();
        let a_hat = Rc::new(sym_normalize_sparse(&s));
        let train_nodes = g.train_nodes();
        let onehot = {
            let mut m = Mat::zeros(train_nodes.len(), g.n_classes());
            for (k, &i) in train_nodes.iter().enumerate() {
                m[(k, g.label(i))] = 1.0;
            }
            m
        };
        let masked_nodes = vec![1usize, 4, 6];
        let beta = 0.8;
        let gamma = 2.0;
        let build = |inputs: &[Mat]| -> (Tape, NodeId) {
            let mut t = Tape::new();
            let w0 = t.param(inputs[0].clone());
            let w1 = t.param(inputs[1].clone());
            let wd = t.param(inputs[2].clone());
            let mtok = t.param(inputs[3].clone());
            let rtok = t.param(inputs[4].clone());
            let wh = t.param(inputs[5].clone());
            let bh = t.param(inputs[6].clone());
            let x = t.constant(g.features().clone());
            let h_clean = gcn_forward_tape(&mut t, x, &a_hat, w0, w1, 0.0);
            let h_train = t.gather_rows(h_clean, train_nodes.clone());
            let hw = t.matmul(h_train, wh);
            let logits = t.add_row_broadcast(hw, bh);
            let loss_pre = cross_entropy_mean(&mut t, logits, &onehot);
            let n = g.n_nodes();
            let f = g.features().cols();
            let lat = inputs[1].cols();
            let keep = {
                let mut m = Mat::from_fn(n, f, |_, _| 1.0);
                for &i in &masked_nodes {
                    for v in m.row_mut(i) {
                        *v = 0.0;
                    }
                }
                t.constant(m)
            };
            let ind = {
                let mut m = Mat::zeros(n, 1);
                for &i in &masked_nodes {
                    m[(i, 0)] = 1.0;
                }
                t.constant(m)
            };
            let kept = t.hadamard(x, keep);
            let tok_rows = t.matmul(ind, mtok);
            let x_tilde = t.add(kept, tok_rows);
            let h_m = gcn_forward_tape(&mut t, x_tilde, &a_hat, w0, w1, 0.0);
            let keep_lat = {
                let mut m = Mat::from_fn(n, lat, |_, _| 1.0);
                for &i in &masked_nodes {
                    for v in m.row_mut(i) {
                        *v = 0.0;
                    }
                }
                t.constant(m)
            };
            let h_kept = t.hadamard(h_m, keep_lat);
            let r_rows = t.matmul(ind, rtok);
            let h_tilde = t.add(h_kept, r_rows);
            let hd = t.matmul(h_tilde, wd);
            let x_hat = t.spmm(Rc::clone(&a_hat), hd);
            let xh_rows = t.gather_rows(x_hat, masked_nodes.clone());
            let x_rows = t.constant(g.features().gather_rows(&masked_nodes));
            let xh_u = t.row_unit(xh_rows);
            let x_u = t.row_unit(x_rows);
            let prod = t.hadamard(xh_u, x_u);
            let cos = t.row_sum(prod);
            let neg = t.scale(cos, -1.0);
            let one_minus = t.add_scalar(neg, 1.0);
            let powed = t.powf(one_minus, gamma);
            let re_total = t.sum_all(powed);
            let loss_re = t.scale(re_total, 1.0 / masked_nodes.len() as f64);
            let re_scaled = t.scale(loss_re, beta);
            let total = t.add(loss_pre, re_scaled);
            (t, total)
        };
        let inputs = vec![
            gaussian_mat(5, 6, 201).scale(0.6),
            gaussian_mat(6, 4, 202).scale(0.6),
            gaussian_mat(4, 5, 203).scale(0.6),
            gaussian_mat(1, 5, 204).scale(0.3),
            gaussian_mat(1, 4, 205).scale(0.3),
            gaussian_mat(4, 2, 206).scale(0.6),
            gaussian_mat(1, 2, 207).scale(0.3),
        ];
        let (t, total) = build(&inputs);
        let grads = t.backward(total).unwrap();
        let numeric = fdcheck::central_differences(
            |xs| {
                let (t, l) = build(xs);
                t.value(l).scalar()
            },
            &inputs,
            1e-5,
        );
        for (k, &p) in t.params().iter().enumerate() {
            let ana = grads.param_grad(&t, p);
            let rel = fdcheck::relative_error(&ana, &numeric[k]);
            assert!(rel < 1e-4, "param {k} rel err {rel}");
        }
    }
}
