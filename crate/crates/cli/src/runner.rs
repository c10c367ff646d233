//! Experiment orchestration and artifact emission. Every artifact embeds the
//! config hash and seed; writes are atomic (temp file + rename).

use crate::config::{DatasetSource, ModelKind, RunConfig};
use crate::data::{load_dataset, save_dataset, DatasetBundle};
use crate::synth::{replacement_edges, synth_graph, SynthSpec};
use anyhow::{anyhow, Context};
use lhs_core::attack::{
    apply_attack, evaluate_under_attack, AttackReport, PipelineMode,
};
use lhs_core::encoder::{
    accuracy, config_hash, lhs_pipeline, predict, vanilla_gcn_pipeline, DenseHead, EncoderWeights,
    EpochRow, ModelBundle, PipelineConfig, StructureSource, BUNDLE_VERSION,
};
use lhs_core::graph::{
    h_distribution, layer_h_distribution, product_of_marginals, right_shift, Graph, HistogramH,
    DEFAULT_BINS,
};
use lhs_core::numkit::SparseStructure;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

/// Atomic text write: the target never holds a partial file.
pub fn write_atomic(path: &Path, contents: &str) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn load_source(source: &DatasetSource, split_seed: u64) -> anyhow::Result<DatasetBundle> {
    match source {
        DatasetSource::Path(dir) => load_dataset(dir, split_seed),
        DatasetSource::Synth(spec) => synth_graph(spec),
    }
}

/// On-disk checkpoint: self-describing JSON with the config hash, every
/// weight matrix with its shape, and the final structure in coordinate form.
#[derive(Debug, Serialize, Deserialize)]
pub struct CheckpointFile {
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub structure_source: StructureSource,
    pub resolved_zeta: f64,
    pub config: PipelineConfig,
    pub encoder: EncoderWeights,
    pub head: DenseHead,
    pub n_nodes: usize,
    /// (i, j, weight) triplets of the final thresholded structure.
    pub structure_coo: Vec<(usize, usize, f64)>,
    pub best_val_acc: f64,
    pub test_accuracy: f64,
    pub rounds: Vec<RoundSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub ehr_bootstrapped: Option<f64>,
    pub ehr_thresholded: Option<f64>,
    pub mean_h_weighted: Option<f64>,
    pub nnz_thresholded: usize,
    pub refine_epochs: Option<usize>,
    pub refine_final_loss: Option<f64>,
}

impl CheckpointFile {
    pub fn from_bundle(bundle: &ModelBundle) -> Self {
        CheckpointFile {
            version: bundle.version,
            config_hash: format!("{:016x}", bundle.config_hash),
            seed: bundle.seed,
            structure_source: bundle.structure_source,
            resolved_zeta: bundle.resolved_zeta,
            config: bundle.config.clone(),
            encoder: bundle.encoder.clone(),
            head: bundle.head.clone(),
            n_nodes: bundle.structure.n(),
            structure_coo: bundle.structure.upper_entries(),
            best_val_acc: bundle.best_val_acc,
            test_accuracy: bundle.test_accuracy,
            rounds: bundle
                .rounds
                .iter()
                .map(|r| RoundSummary {
                    round: r.round,
                    ehr_bootstrapped: r.ehr_bootstrapped,
                    ehr_thresholded: r.ehr_thresholded,
                    mean_h_weighted: r.mean_h_weighted,
                    nnz_thresholded: r.nnz_thresholded,
                    refine_epochs: r.refine_epochs,
                    refine_final_loss: r.refine_final_loss,
                })
                .collect(),
        }
    }

    pub fn into_bundle(self) -> anyhow::Result<ModelBundle> {
        if self.version != BUNDLE_VERSION {
            anyhow::bail!(
                "checkpoint version {} unsupported (expected {BUNDLE_VERSION})",
                self.version
            );
        }
        let structure = SparseStructure::from_upper_entries(self.n_nodes, &self.structure_coo);
        let hash = u64::from_str_radix(&self.config_hash, 16)
            .map_err(|_| anyhow!("malformed config hash {:?}", self.config_hash))?;
        Ok(ModelBundle {
            version: self.version,
            config_hash: hash,
            seed: self.seed,
            structure_source: self.structure_source,
            resolved_zeta: self.resolved_zeta,
            config: self.config,
            rounds: Vec::new(),
            structure,
            encoder: self.encoder,
            head: self.head,
            history: Vec::new(),
            best_val_acc: self.best_val_acc,
            test_accuracy: self.test_accuracy,
        })
    }
}

fn history_csv(rows: &[EpochRow], config_hash: &str, seed: u64) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# config_hash={config_hash} seed={seed}");
    let _ = writeln!(out, "epoch,loss_pre,loss_re,loss_total,val_acc");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.epoch, r.loss_pre, r.loss_re, r.loss_total, r.val_acc
        );
    }
    out
}

fn histogram_csv(h: &HistogramH, provenance: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {provenance}");
    let _ = writeln!(
        out,
        "# sample_mean={} sample_count={} excluded={}",
        h.sample_mean, h.sample_count, h.excluded
    );
    let _ = writeln!(out, "bin_start,bin_end,count");
    for i in 0..h.bins() {
        let _ = writeln!(out, "{},{},{}", h.bin_edges[i], h.bin_edges[i + 1], h.counts[i]);
    }
    out
}

/// Train one model per seed, writing a checkpoint and history CSV for each.
pub fn run_train(cfg: &RunConfig) -> anyhow::Result<Vec<PathBuf>> {
    let out_dir = cfg.resolved_output_dir();
    let hash = format!("{:016x}", config_hash(cfg));
    let mut written = Vec::new();
    for &seed in &cfg.seeds {
        let bundle = train_once(cfg, seed)?;
        let ckpt_path = out_dir.join(format!("checkpoint_{seed}.json"));
        let ckpt = CheckpointFile {
            config_hash: hash.clone(),
            ..CheckpointFile::from_bundle(&bundle)
        };
        write_atomic(&ckpt_path, &serde_json::to_string_pretty(&ckpt)?)?;
        let hist_path = out_dir.join(format!("history_{seed}.csv"));
        write_atomic(&hist_path, &history_csv(&bundle.history, &hash, seed))?;
        written.push(ckpt_path);
        written.push(hist_path);
    }
    Ok(written)
}

pub fn train_once(cfg: &RunConfig, seed: u64) -> anyhow::Result<ModelBundle> {
    let dataset = load_source(&cfg.dataset, seed)?;
    let bundle = match cfg.model {
        ModelKind::Lhs => lhs_pipeline(&dataset.graph, &cfg.pipeline, seed)?,
        ModelKind::VanillaGcn => vanilla_gcn_pipeline(&dataset.graph, &cfg.pipeline, seed)?,
    };
    Ok(bundle)
}

/// Reports for one attack spec under both inference modes.
#[derive(Debug, Serialize, Deserialize)]
pub struct AttackRunReport {
    pub config_hash: String,
    pub seed: u64,
    pub spec: lhs_core::attack::AttackSpec,
    pub refresh_structure: AttackReport,
    pub frozen_structure: AttackReport,
}

/// Evaluate a trained checkpoint against every attack in the config.
pub fn run_attack(cfg: &RunConfig, checkpoint: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let out_dir = cfg.resolved_output_dir();
    let hash = format!("{:016x}", config_hash(cfg));
    let text = fs::read_to_string(checkpoint)
        .with_context(|| format!("reading checkpoint {}", checkpoint.display()))?;
    let ckpt: CheckpointFile = serde_json::from_str(&text)
        .with_context(|| format!("parsing checkpoint {}", checkpoint.display()))?;
    let seed = ckpt.seed;
    let bundle = ckpt.into_bundle()?;
    let dataset = load_source(&cfg.dataset, seed)?;
    if dataset.graph.n_nodes() != bundle.structure.n() {
        anyhow::bail!(
            "checkpoint was trained on {} nodes but the dataset has {}",
            bundle.structure.n(),
            dataset.graph.n_nodes()
        );
    }
    let mut written = Vec::new();
    for (idx, spec) in cfg.attacks.iter().enumerate() {
        let perturbed = apply_attack(&dataset.graph, spec)?;
        let refresh = evaluate_under_attack(
            &bundle,
            &dataset.graph,
            &perturbed,
            PipelineMode::RefreshStructure,
        )?;
        let frozen = evaluate_under_attack(
            &bundle,
            &dataset.graph,
            &perturbed,
            PipelineMode::FrozenStructure,
        )?;
        let report = AttackRunReport {
            config_hash: hash.clone(),
            seed,
            spec: spec.clone(),
            refresh_structure: refresh,
            frozen_structure: frozen,
        };
        let kind = serde_json::to_value(spec.kind)?
            .as_str()
            .unwrap_or("attack")
            .to_string();
        let path = out_dir.join(format!("attack_{idx}_{kind}.json"));
        write_atomic(&path, &serde_json::to_string_pretty(&report)?)?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Serialize)]
struct AnalyzeSummary<'a> {
    provenance: String,
    dataset: &'a str,
    train_vs_test: lhs_core::graph::RightShift,
}

/// Heterophily-distribution analytics for a dataset directory: per-split
/// histograms, per-hop marginals, their independence product, and the
/// train-vs-test right shift.
pub fn run_analyze(dataset_dir: &Path, hops: usize, out_dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let dataset = load_dataset(dataset_dir, 0)?;
    let g = &dataset.graph;
    let prov = format!("dataset={} provenance={}", dataset.name, dataset.provenance.short());
    let mut written = Vec::new();
    let splits: [(&str, Vec<usize>); 4] = [
        ("all", g.all_nodes()),
        ("train", g.train_nodes()),
        ("val", g.val_nodes()),
        ("test", g.test_nodes()),
    ];
    let mut hists = std::collections::BTreeMap::new();
    for (name, nodes) in &splits {
        if nodes.is_empty() {
            continue;
        }
        let h = h_distribution(g, nodes, DEFAULT_BINS)?;
        let path = out_dir.join(format!("h_{name}.csv"));
        write_atomic(&path, &histogram_csv(&h, &prov))?;
        written.push(path);
        hists.insert(*name, h);
    }
    if let (Some(train), Some(test)) = (hists.get("train"), hists.get("test")) {
        let shift = right_shift(train, test)?;
        let summary = AnalyzeSummary {
            provenance: prov.clone(),
            dataset: &dataset.name,
            train_vs_test: shift,
        };
        let path = out_dir.join("right_shift.json");
        write_atomic(&path, &serde_json::to_string_pretty(&summary)?)?;
        written.push(path);
    }
    if hops >= 1 {
        let mut marginals = Vec::new();
        for k in 1..=hops {
            match layer_h_distribution(g, k) {
                Ok(h) => {
                    let path = out_dir.join(format!("layer_h_{k}.csv"));
                    write_atomic(&path, &histogram_csv(&h, &prov))?;
                    written.push(path);
                    marginals.push(h);
                }
                Err(lhs_core::Error::EmptyDistribution(_)) => break,
                Err(e) => return Err(e.into()),
            }
        }
        if marginals.len() > 1 {
            let joint = product_of_marginals(&marginals)?;
            let path = out_dir.join("layer_h_joint_product.csv");
            write_atomic(&path, &histogram_csv(&joint, &prov))?;
            written.push(path);
        }
    }
    Ok(written)
}

#[derive(Debug, Serialize)]
struct SynthReport {
    spec_hash: String,
    realized_homophily: f64,
    n_edges: usize,
    h_mean_all: f64,
}

/// Generate a synthetic dataset directory plus a generation report.
pub fn run_synth(spec: &SynthSpec, out_dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let bundle = synth_graph(spec)?;
    save_dataset(&bundle, out_dir)?;
    let g = &bundle.graph;
    let h_all = h_distribution(g, &g.all_nodes(), DEFAULT_BINS)?;
    let report = SynthReport {
        spec_hash: format!("{:016x}", config_hash(spec)),
        realized_homophily: lhs_core::graph::edge_homophily_ratio(g)?,
        n_edges: g.n_edges(),
        h_mean_all: h_all.sample_mean,
    };
    let path = out_dir.join("generation_report.json");
    write_atomic(&path, &serde_json::to_string_pretty(&report)?)?;
    Ok(vec![out_dir.to_path_buf()])
}

/// One cell of the structure-simulation sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SimulationRow {
    pub target_homophily: f64,
    pub realized_homophily: f64,
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
}

/// Replace the graph's structure with generated structures of prescribed
/// homophily (same node set, same edge count), train a plain GCN on each,
/// and record test accuracy.
pub fn structure_simulation(
    dataset: &DatasetBundle,
    homophily_grid: &[f64],
    pipeline: &PipelineConfig,
    seeds: &[u64],
) -> anyhow::Result<Vec<SimulationRow>> {
    let g = &dataset.graph;
    let n_edges = g.n_edges();
    let mut rows = Vec::new();
    for &target in homophily_grid {
        if !(0.0..=1.0).contains(&target) {
            anyhow::bail!("homophily grid value {target} outside [0, 1]");
        }
        let mut accuracies = Vec::new();
        let mut realized = 0.0;
        for &seed in seeds {
            let edges = replacement_edges(
                g.labels(),
                n_edges,
                target,
                lhs_core::seeds::derive(seed, "simulate", (target * 1000.0) as u64),
            )?;
            let sim_graph = g.with_edges(edges)?;
            realized = lhs_core::graph::edge_homophily_ratio(&sim_graph)?;
            let bundle = vanilla_gcn_pipeline(&sim_graph, pipeline, seed)?;
            let probs = predict(
                &sim_graph,
                &bundle.structure,
                &bundle.encoder,
                &bundle.head,
            )?;
            accuracies.push(accuracy(
                &probs,
                sim_graph.labels(),
                &sim_graph.test_nodes(),
            ));
        }
        let mean_accuracy = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
        rows.push(SimulationRow {
            target_homophily: target,
            realized_homophily: realized,
            accuracies,
            mean_accuracy,
        });
    }
    Ok(rows)
}

/// Recompute a graph's h-distribution; used to check that analyze output
/// matches generation-time statistics.
pub fn dataset_h_distribution(graph: &Graph) -> anyhow::Result<HistogramH> {
    Ok(h_distribution(graph, &graph.all_nodes(), DEFAULT_BINS)?)
}
