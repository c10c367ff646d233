//! Planted-partition generator with controlled edge homophily and
//! class-Gaussian features.

use crate::data::{stratified_split, DatasetBundle, DatasetProvenance};
use anyhow::bail;
use lhs_core::encoder::config_hash;
use lhs_core::graph::Graph;
use lhs_core::numkit::Mat;
use lhs_core::seeds;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_nodes: usize,
    pub classes: usize,
    pub feature_dim: usize,
    /// Fraction of edges placed inside a class.
    pub target_homophily: f64,
    pub mean_degree: f64,
    /// Scale of the class means relative to the unit within-class noise.
    pub feature_separation: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_nodes: 800,
            classes: 4,
            feature_dim: 16,
            target_homophily: 0.25,
            mean_degree: 10.0,
            feature_separation: 1.5,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> anyhow::Result<()> {
        if self.n_nodes < 2 || self.classes == 0 || self.feature_dim == 0 {
            bail!("n_nodes, classes and feature_dim must be positive");
        }
        if self.classes > self.n_nodes {
            bail!("more classes than nodes");
        }
        if !(0.0..=1.0).contains(&self.target_homophily) {
            bail!("target_homophily must be in [0, 1]");
        }
        if self.mean_degree <= 0.0 {
            bail!("mean_degree must be positive");
        }
        Ok(())
    }
}

/// Draw `count` distinct pairs uniformly from `pool` (consumed).
fn sample_pairs(pool: &mut Vec<(usize, usize)>, count: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = seeds::rng(seed, "synth-pairs", 0);
    let take = count.min(pool.len());
    for i in 0..take {
        let j = rng.gen_range(i..pool.len());
        pool.swap(i, j);
    }
    pool[..take].to_vec()
}

/// Generate a balanced planted-partition graph whose intra-class edge
/// fraction matches the target homophily, with Gaussian class features.
pub fn synth_graph(spec: &SynthSpec) -> anyhow::Result<DatasetBundle> {
    spec.validate()?;
    let n = spec.n_nodes;
    let d = spec.classes;
    let labels: Vec<usize> = (0..n).map(|i| i % d).collect();

    let total_edges = (spec.mean_degree * n as f64 / 2.0).round() as usize;
    let intra_target = (spec.target_homophily * total_edges as f64).round() as usize;
    let cross_target = total_edges - intra_target;

    let mut intra_pool = Vec::new();
    let mut cross_pool = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if labels[u] == labels[v] {
                intra_pool.push((u, v));
            } else {
                cross_pool.push((u, v));
            }
        }
    }
    if intra_target > intra_pool.len() {
        bail!(
            "infeasible: need {intra_target} intra-class edges, only {} pairs exist",
            intra_pool.len()
        );
    }
    if cross_target > cross_pool.len() {
        bail!(
            "infeasible: need {cross_target} cross-class edges, only {} pairs exist",
            cross_pool.len()
        );
    }
    let mut edges = sample_pairs(&mut intra_pool, intra_target, seeds::derive(spec.seed, "intra", 0));
    edges.extend(sample_pairs(
        &mut cross_pool,
        cross_target,
        seeds::derive(spec.seed, "cross", 0),
    ));

    // Class means drawn once, then unit Gaussian noise per node.
    let mut mean_rng = seeds::rng(spec.seed, "class-means", 0);
    let means: Vec<Vec<f64>> = (0..d)
        .map(|_| {
            (0..spec.feature_dim)
                .map(|_| {
                    let g: f64 = StandardNormal.sample(&mut mean_rng);
                    g * spec.feature_separation
                })
                .collect()
        })
        .collect();
    let mut feat_rng = seeds::rng(spec.seed, "features", 0);
    let features = Mat::from_fn(n, spec.feature_dim, |i, j| {
        let g: f64 = StandardNormal.sample(&mut feat_rng);
        means[labels[i]][j] + g
    });

    let masks = stratified_split(&labels, seeds::derive(spec.seed, "synth-split", 0));
    let graph = Graph::new(features, labels, edges, masks)
        .map_err(|e| anyhow::anyhow!("generator produced an invalid graph: {e}"))?;
    let spec_hash = format!("{:016x}", config_hash(spec));
    Ok(DatasetBundle {
        graph,
        name: format!("synth-h{:.2}-n{}", spec.target_homophily, n),
        provenance: DatasetProvenance {
            edges_sha256: format!("synthetic:{spec_hash}"),
            features_sha256: format!("synthetic:{spec_hash}"),
            labels_sha256: format!("synthetic:{spec_hash}"),
            splits_sha256: format!("synthetic:{spec_hash}"),
            split_seed: Some(spec.seed),
        },
    })
}

/// Fresh edge set over existing nodes/labels with a prescribed homophily and
/// the same edge count; used by the structure-simulation sweep.
pub fn replacement_edges(
    labels: &[usize],
    n_edges: usize,
    target_homophily: f64,
    seed: u64,
) -> anyhow::Result<Vec<(usize, usize)>> {
    let n = labels.len();
    let intra_target = (target_homophily * n_edges as f64).round() as usize;
    let cross_target = n_edges - intra_target;
    let mut intra_pool = Vec::new();
    let mut cross_pool = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if labels[u] == labels[v] {
                intra_pool.push((u, v));
            } else {
                cross_pool.push((u, v));
            }
        }
    }
    if intra_target > intra_pool.len() || cross_target > cross_pool.len() {
        bail!("infeasible homophily {target_homophily} for {n_edges} edges");
    }
    let mut edges = sample_pairs(&mut intra_pool, intra_target, seeds::derive(seed, "r-intra", 0));
    edges.extend(sample_pairs(
        &mut cross_pool,
        cross_target,
        seeds::derive(seed, "r-cross", 0),
    ));
    Ok(edges)
}
