//! Graph representation, node-level heterophily metrics, ego-graph
//! extraction, and heterophily-distribution analytics.

use crate::error::{Error, Result};
use crate::numkit::{Mat, SparseStructure};
use serde::{Deserialize, Serialize};

/// Disjoint train/validation/test node masks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Masks {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl Masks {
    pub fn empty(n: usize) -> Self {
        Masks {
            train: vec![false; n],
            val: vec![false; n],
            test: vec![false; n],
        }
    }

    pub fn indices(mask: &[bool]) -> Vec<usize> {
        mask.iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect()
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.train.len() != n || self.val.len() != n || self.test.len() != n {
            return Err(Error::InvalidGraph(format!(
                "mask length must equal node count {n}"
            )));
        }
        for i in 0..n {
            let c = self.train[i] as u8 + self.val[i] as u8 + self.test[i] as u8;
            if c > 1 {
                return Err(Error::InvalidGraph(format!(
                    "node {i} appears in more than one split"
                )));
            }
        }
        Ok(())
    }
}

/// Immutable labeled graph: undirected simple edges, per-node features,
/// class labels, and split masks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Graph {
    n_nodes: usize,
    /// Canonical edge list, each unordered pair stored once as (u, v), u < v.
    edges: Vec<(usize, usize)>,
    neighbor_index: Vec<Vec<usize>>,
    features: Mat,
    labels: Vec<usize>,
    n_classes: usize,
    masks: Masks,
}

impl Graph {
    pub fn new(
        features: Mat,
        labels: Vec<usize>,
        edges: Vec<(usize, usize)>,
        masks: Masks,
    ) -> Result<Self> {
        let n = labels.len();
        if features.rows() != n {
            return Err(Error::InvalidGraph(format!(
                "feature rows {} != label count {}",
                features.rows(),
                n
            )));
        }
        if !features.all_finite() {
            return Err(Error::InvalidGraph("non-finite feature value".into()));
        }
        masks.validate(n)?;
        let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
        let mut canon: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for &(u, v) in &edges {
            if u == v {
                return Err(Error::InvalidGraph(format!("self-loop at node {u}")));
            }
            if u >= n || v >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({u},{v}) out of range for {n} nodes"
                )));
            }
            canon.push((u.min(v), u.max(v)));
        }
        canon.sort_unstable();
        if canon.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidGraph("duplicate edge".into()));
        }
        let mut neighbor_index = vec![Vec::new(); n];
        for &(u, v) in &canon {
            neighbor_index[u].push(v);
            neighbor_index[v].push(u);
        }
        for nbrs in &mut neighbor_index {
            nbrs.sort_unstable();
        }
        Ok(Graph {
            n_nodes: n,
            edges: canon,
            neighbor_index,
            features,
            labels,
            n_classes,
            masks,
        })
    }

    /// Same nodes, features, labels and masks over a different edge set.
    pub fn with_edges(&self, edges: Vec<(usize, usize)>) -> Result<Self> {
        Graph::new(
            self.features.clone(),
            self.labels.clone(),
            edges,
            self.masks.clone(),
        )
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbor_index[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.neighbor_index[v].len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbor_index[u].binary_search(&v).is_ok()
    }

    pub fn features(&self) -> &Mat {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, v: usize) -> usize {
        self.labels[v]
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn masks(&self) -> &Masks {
        &self.masks
    }

    pub fn train_nodes(&self) -> Vec<usize> {
        Masks::indices(&self.masks.train)
    }

    pub fn val_nodes(&self) -> Vec<usize> {
        Masks::indices(&self.masks.val)
    }

    pub fn test_nodes(&self) -> Vec<usize> {
        Masks::indices(&self.masks.test)
    }

    pub fn all_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes).collect()
    }

    /// Dense 0/1 adjacency.
    pub fn adjacency_matrix(&self) -> Mat {
        let mut a = Mat::zeros(self.n_nodes, self.n_nodes);
        for &(u, v) in &self.edges {
            a[(u, v)] = 1.0;
            a[(v, u)] = 1.0;
        }
        a
    }

    /// Adjacency as a sparse structure with unit weights.
    pub fn adjacency_structure(&self) -> SparseStructure {
        let entries: Vec<(usize, usize, f64)> =
            self.edges.iter().map(|&(u, v)| (u, v, 1.0)).collect();
        SparseStructure::from_upper_entries(self.n_nodes, &entries)
    }
}

/// Binned distribution of node-level heterophily over [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramH {
    /// B+1 uniform edges over [0, 1]; bins are right-closed.
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub sample_mean: f64,
    pub sample_count: usize,
    /// Nodes excluded from the statistic (isolated, or empty hop sets).
    pub excluded: usize,
}

pub const DEFAULT_BINS: usize = 20;

impl HistogramH {
    /// Histogram of values in [0, 1] over `bins` uniform right-closed bins.
    pub fn from_values(values: &[f64], bins: usize, excluded: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::InvalidArgument("bins must be at least 1".into()));
        }
        if values.is_empty() {
            return Err(Error::EmptyDistribution(
                "no values left after exclusions".into(),
            ));
        }
        let mut counts = vec![0u64; bins];
        let mut sum = 0.0;
        for &v in values {
            debug_assert!((-1e-12..=1.0 + 1e-12).contains(&v));
            let idx = if v <= 0.0 {
                0
            } else {
                ((v * bins as f64).ceil() as usize - 1).min(bins - 1)
            };
            counts[idx] += 1;
            sum += v;
        }
        let bin_edges = (0..=bins).map(|i| i as f64 / bins as f64).collect();
        Ok(HistogramH {
            bin_edges,
            counts,
            sample_mean: sum / values.len() as f64,
            sample_count: values.len(),
            excluded,
        })
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    /// Normalized bin masses.
    pub fn masses(&self) -> Vec<f64> {
        let total = self.sample_count as f64;
        self.counts.iter().map(|&c| c as f64 / total).collect()
    }
}

/// Directional shift of one distribution relative to a reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RightShift {
    /// target mean minus reference mean.
    pub mean_shift: f64,
    /// 1-Wasserstein distance between the binned distributions, carrying the
    /// sign of `mean_shift` (positive when target mass sits to the right).
    pub w1: f64,
}

/// k-hop ego substructure around a center node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EgoGraph {
    pub center: usize,
    pub hops: usize,
    /// BFS layers 1..=k; layer 0 (the center) is not included.
    pub nodes_per_hop: Vec<Vec<usize>>,
    /// Edges of the graph with both endpoints inside the same hop layer.
    pub local_edges: Vec<Vec<(usize, usize)>>,
}

/// Fraction of a node's neighbors whose class differs from its own.
pub fn node_heterophily(graph: &Graph, node: usize) -> Result<f64> {
    let nbrs = graph.neighbors(node);
    if nbrs.is_empty() {
        return Err(Error::NoEdges { node });
    }
    let own = graph.label(node);
    let differing = nbrs.iter().filter(|&&u| graph.label(u) != own).count();
    Ok(differing as f64 / nbrs.len() as f64)
}

/// Heterophily histogram over a node subset. Isolated nodes are excluded and
/// counted in the histogram metadata.
pub fn h_distribution(graph: &Graph, nodes: &[usize], bins: usize) -> Result<HistogramH> {
    let mut values = Vec::with_capacity(nodes.len());
    let mut excluded = 0;
    for &v in nodes {
        match node_heterophily(graph, v) {
            Ok(h) => values.push(h),
            Err(Error::NoEdges { .. }) => excluded += 1,
            Err(e) => return Err(e),
        }
    }
    HistogramH::from_values(&values, bins, excluded)
}

/// Heterophilic fraction of each node's hop-k neighbor set, over all nodes
/// with a non-empty hop-k set.
pub fn layer_h_distribution(graph: &Graph, k: usize) -> Result<HistogramH> {
    if k == 0 {
        return Err(Error::InvalidArgument("hop index must be >= 1".into()));
    }
    let mut values = Vec::new();
    let mut excluded = 0;
    for v in 0..graph.n_nodes() {
        let ego = ego_graph(graph, v, k);
        let layer = &ego.nodes_per_hop[k - 1];
        if layer.is_empty() {
            excluded += 1;
            continue;
        }
        let own = graph.label(v);
        let differing = layer.iter().filter(|&&u| graph.label(u) != own).count();
        values.push(differing as f64 / layer.len() as f64);
    }
    if values.is_empty() {
        return Err(Error::EmptyDistribution(format!(
            "no node has a non-empty hop-{k} set"
        )));
    }
    HistogramH::from_values(&values, DEFAULT_BINS, excluded)
}

/// Product of per-layer marginals on a shared bin grid, renormalized; the
/// joint multi-hop distribution under the independence factorization.
pub fn product_of_marginals(marginals: &[HistogramH]) -> Result<HistogramH> {
    let first = marginals
        .first()
        .ok_or_else(|| Error::EmptyDistribution("no marginals".into()))?;
    let bins = first.bins();
    let mut mass = vec![1.0; bins];
    for m in marginals {
        if m.bin_edges != first.bin_edges {
            return Err(Error::IncompatibleHistograms);
        }
        for (acc, p) in mass.iter_mut().zip(m.masses()) {
            *acc *= p;
        }
    }
    let total: f64 = mass.iter().sum();
    if total == 0.0 {
        return Err(Error::EmptyDistribution(
            "marginals have disjoint support".into(),
        ));
    }
    // Represent the product as pseudo-counts over a common resolution.
    const RESOLUTION: f64 = 1e6;
    let counts: Vec<u64> = mass
        .iter()
        .map(|&m| (m / total * RESOLUTION).round() as u64)
        .collect();
    let centers: Vec<f64> = (0..bins)
        .map(|i| (first.bin_edges[i] + first.bin_edges[i + 1]) / 2.0)
        .collect();
    let mean: f64 = mass
        .iter()
        .zip(&centers)
        .map(|(&m, &c)| m / total * c)
        .sum();
    let sample_count = counts.iter().sum::<u64>() as usize;
    Ok(HistogramH {
        bin_edges: first.bin_edges.clone(),
        counts,
        sample_mean: mean,
        sample_count,
        excluded: 0,
    })
}

/// Mean shift and signed 1-Wasserstein distance between two histograms on
/// identical bins.
pub fn right_shift(reference: &HistogramH, target: &HistogramH) -> Result<RightShift> {
    if reference.bin_edges != target.bin_edges {
        return Err(Error::IncompatibleHistograms);
    }
    let mean_shift = target.sample_mean - reference.sample_mean;
    let ref_mass = reference.masses();
    let tgt_mass = target.masses();
    let mut w1 = 0.0;
    let mut cdf_ref = 0.0;
    let mut cdf_tgt = 0.0;
    for i in 0..reference.bins() {
        cdf_ref += ref_mass[i];
        cdf_tgt += tgt_mass[i];
        let width = reference.bin_edges[i + 1] - reference.bin_edges[i];
        w1 += (cdf_ref - cdf_tgt).abs() * width;
    }
    let w1 = if mean_shift < 0.0 { -w1 } else { w1 };
    Ok(RightShift { mean_shift, w1 })
}

/// Fraction of edge weight on same-class pairs for an unweighted graph.
pub fn edge_homophily_ratio(graph: &Graph) -> Result<f64> {
    if graph.n_edges() == 0 {
        return Err(Error::NoStructureEdges);
    }
    let intra = graph
        .edges()
        .iter()
        .filter(|&&(u, v)| graph.label(u) == graph.label(v))
        .count();
    Ok(intra as f64 / graph.n_edges() as f64)
}

/// Weighted homophily ratio over the strict upper triangle of a dense
/// symmetric structure.
pub fn edge_homophily_ratio_dense(structure: &Mat, labels: &[usize]) -> Result<f64> {
    structure.check_square()?;
    let n = structure.rows();
    assert_eq!(labels.len(), n);
    let mut intra = 0.0;
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let w = structure[(i, j)];
            if w != 0.0 {
                total += w;
                if labels[i] == labels[j] {
                    intra += w;
                }
            }
        }
    }
    if total == 0.0 {
        return Err(Error::NoStructureEdges);
    }
    Ok(intra / total)
}

/// Weighted homophily ratio of a sparse structure (diagonal entries ignored).
pub fn edge_homophily_ratio_sparse(structure: &SparseStructure, labels: &[usize]) -> Result<f64> {
    let mut intra = 0.0;
    let mut total = 0.0;
    for (i, j, w) in structure.upper_entries() {
        total += w;
        if labels[i] == labels[j] {
            intra += w;
        }
    }
    if total == 0.0 {
        return Err(Error::NoStructureEdges);
    }
    Ok(intra / total)
}

/// Weighted node-level heterophily on a sparse structure: the fraction of a
/// node's incident off-diagonal weight attached to differently-labeled
/// partners. Nodes without incident weight are skipped.
pub fn mean_node_heterophily_weighted(
    structure: &SparseStructure,
    labels: &[usize],
    nodes: &[usize],
) -> Result<f64> {
    let mut acc = 0.0;
    let mut counted = 0usize;
    for &v in nodes {
        let mut total = 0.0;
        let mut cross = 0.0;
        for (j, w) in structure.row_entries(v) {
            if j == v {
                continue;
            }
            total += w;
            if labels[j] != labels[v] {
                cross += w;
            }
        }
        if total > 0.0 {
            acc += cross / total;
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(Error::EmptyDistribution(
            "no node carries structure weight".into(),
        ));
    }
    Ok(acc / counted as f64)
}

/// BFS layers 1..=k around `center` with per-layer induced edges.
pub fn ego_graph(graph: &Graph, center: usize, k: usize) -> EgoGraph {
    assert!(k >= 1, "hop count must be >= 1");
    let n = graph.n_nodes();
    let mut depth = vec![usize::MAX; n];
    depth[center] = 0;
    let mut layers: Vec<Vec<usize>> = Vec::with_capacity(k);
    let mut frontier = vec![center];
    for hop in 1..=k {
        let mut next = Vec::new();
        for &u in &frontier {
            for &v in graph.neighbors(u) {
                if depth[v] == usize::MAX {
                    depth[v] = hop;
                    next.push(v);
                }
            }
        }
        next.sort_unstable();
        layers.push(next.clone());
        frontier = next;
    }
    let local_edges = layers
        .iter()
        .map(|layer| {
            let mut edges = Vec::new();
            for &u in layer {
                for &v in graph.neighbors(u) {
                    if v > u && depth[v] == depth[u] {
                        edges.push((u, v));
                    }
                }
            }
            edges
        })
        .collect();
    EgoGraph {
        center,
        hops: k,
        nodes_per_hop: layers,
        local_edges,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn star_graph(leaf_labels: &[usize], center_label: usize) -> Graph {
        let n = leaf_labels.len() + 1;
        let mut labels = vec![center_label];
        labels.extend_from_slice(leaf_labels);
        let edges: Vec<(usize, usize)> = (1..n).map(|v| (0, v)).collect();
        Graph::new(Mat::zeros(n, 1), labels, edges, Masks::empty(n)).unwrap()
    }

    #[test]
    fn heterophily_limits() {
        let homo = star_graph(&[0, 0, 0, 0], 0);
        assert_eq!(node_heterophily(&homo, 0).unwrap(), 0.0);
        let hetero = star_graph(&[1, 2, 3, 4], 0);
        assert_eq!(node_heterophily(&hetero, 0).unwrap(), 1.0);
    }

    #[test]
    fn heterophily_hand_count() {
        // Center class A with neighbors {A, B, B, B} -> 0.75.
        let g = star_graph(&[0, 1, 1, 1], 0);
        assert!((node_heterophily(&g, 0).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn isolated_node_errors() {
        let g = Graph::new(
            Mat::zeros(3, 1),
            vec![0, 0, 1],
            vec![(0, 1)],
            Masks::empty(3),
        )
        .unwrap();
        assert!(matches!(
            node_heterophily(&g, 2),
            Err(Error::NoEdges { node: 2 })
        ));
    }

    #[test]
    fn heterophily_equals_one_minus_star_homophily() {
        let g = star_graph(&[0, 1, 1, 2], 0);
        let h = node_heterophily(&g, 0).unwrap();
        let ehr = edge_homophily_ratio(&g).unwrap();
        assert!((h - (1.0 - ehr)).abs() < 1e-15);
    }

    #[test]
    fn distribution_two_node_cross_class() {
        let g = Graph::new(
            Mat::zeros(2, 1),
            vec![0, 1],
            vec![(0, 1)],
            Masks::empty(2),
        )
        .unwrap();
        let hist = h_distribution(&g, &[0, 1], DEFAULT_BINS).unwrap();
        assert_eq!(hist.sample_count, 2);
        assert!((hist.sample_mean - 1.0).abs() < 1e-15);
        assert_eq!(*hist.counts.last().unwrap(), 2);
    }

    #[test]
    fn distribution_same_class_clique() {
        let g = Graph::new(
            Mat::zeros(3, 1),
            vec![0, 0, 0],
            vec![(0, 1), (0, 2), (1, 2)],
            Masks::empty(3),
        )
        .unwrap();
        let hist = h_distribution(&g, &[0, 1, 2], DEFAULT_BINS).unwrap();
        assert_eq!(hist.sample_mean, 0.0);
        assert_eq!(hist.counts[0], 3);
    }

    #[test]
    fn distribution_counts_sum_and_single_bin() {
        let g = star_graph(&[0, 1, 1, 2], 0);
        let hist = h_distribution(&g, &[0, 1, 2, 3, 4], DEFAULT_BINS).unwrap();
        assert_eq!(hist.counts.iter().sum::<u64>() as usize, hist.sample_count);
        let one_bin = h_distribution(&g, &[0, 1, 2, 3, 4], 1).unwrap();
        assert_eq!(one_bin.counts, vec![one_bin.sample_count as u64]);
    }

    #[test]
    fn empty_subset_errors() {
        let g = Graph::new(Mat::zeros(2, 1), vec![0, 1], vec![], Masks::empty(2)).unwrap();
        assert!(matches!(
            h_distribution(&g, &[0, 1], DEFAULT_BINS),
            Err(Error::EmptyDistribution(_))
        ));
    }

    #[test]
    fn layer_one_matches_plain_distribution() {
        let g = star_graph(&[0, 1, 1, 2], 0);
        let by_layer = layer_h_distribution(&g, 1).unwrap();
        let all: Vec<usize> = g.all_nodes();
        let plain = h_distribution(&g, &all, DEFAULT_BINS).unwrap();
        assert_eq!(by_layer.counts, plain.counts);
        assert!((by_layer.sample_mean - plain.sample_mean).abs() < 1e-15);
    }

    #[test]
    fn layer_two_on_path() {
        // Path A - B - A: hop-2 of each end node is the far end, same class.
        let g = Graph::new(
            Mat::zeros(3, 1),
            vec![0, 1, 0],
            vec![(0, 1), (1, 2)],
            Masks::empty(3),
        )
        .unwrap();
        let ego = ego_graph(&g, 0, 2);
        assert_eq!(ego.nodes_per_hop[1], vec![2]);
        let hist = layer_h_distribution(&g, 2).unwrap();
        // End nodes see a same-class hop-2 node; the middle node has none.
        assert_eq!(hist.sample_count, 2);
        assert_eq!(hist.sample_mean, 0.0);
        assert_eq!(hist.excluded, 1);
    }

    #[test]
    fn layer_two_on_star_leaf() {
        let g = star_graph(&[0, 0, 0], 1);
        let ego = ego_graph(&g, 1, 2);
        assert_eq!(ego.nodes_per_hop[1], vec![2, 3]);
        let own = g.label(1);
        let differing = ego.nodes_per_hop[1]
            .iter()
            .filter(|&&u| g.label(u) != own)
            .count();
        assert_eq!(differing, 0);
    }

    #[test]
    fn beyond_diameter_is_empty_distribution() {
        let g = Graph::new(
            Mat::zeros(2, 1),
            vec![0, 1],
            vec![(0, 1)],
            Masks::empty(2),
        )
        .unwrap();
        assert!(matches!(
            layer_h_distribution(&g, 5),
            Err(Error::EmptyDistribution(_))
        ));
    }

    #[test]
    fn right_shift_identical_is_zero() {
        let h = HistogramH::from_values(&[0.1, 0.5, 0.9], 20, 0).unwrap();
        let rs = right_shift(&h, &h).unwrap();
        assert_eq!(rs.mean_shift, 0.0);
        assert_eq!(rs.w1, 0.0);
    }

    #[test]
    fn right_shift_point_masses() {
        let a = HistogramH::from_values(&[0.2; 10], 20, 0).unwrap();
        let b = HistogramH::from_values(&[0.7; 10], 20, 0).unwrap();
        let rs = right_shift(&a, &b).unwrap();
        assert!((rs.mean_shift - 0.5).abs() < 1e-12);
        assert!((rs.w1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn right_shift_is_antisymmetric() {
        let a = HistogramH::from_values(&[0.1, 0.3, 0.2], 20, 0).unwrap();
        let b = HistogramH::from_values(&[0.6, 0.9, 0.8], 20, 0).unwrap();
        let ab = right_shift(&a, &b).unwrap();
        let ba = right_shift(&b, &a).unwrap();
        assert!((ab.mean_shift + ba.mean_shift).abs() < 1e-15);
        assert!((ab.w1 + ba.w1).abs() < 1e-15);
    }

    #[test]
    fn right_shift_rejects_mismatched_bins() {
        let a = HistogramH::from_values(&[0.5], 10, 0).unwrap();
        let b = HistogramH::from_values(&[0.5], 20, 0).unwrap();
        assert!(matches!(
            right_shift(&a, &b),
            Err(Error::IncompatibleHistograms)
        ));
    }

    #[test]
    fn homophily_ratio_limits_and_mixture() {
        let intra = Graph::new(
            Mat::zeros(4, 1),
            vec![0, 0, 1, 1],
            vec![(0, 1), (2, 3)],
            Masks::empty(4),
        )
        .unwrap();
        assert_eq!(edge_homophily_ratio(&intra).unwrap(), 1.0);
        let cross = Graph::new(
            Mat::zeros(4, 1),
            vec![0, 1, 0, 1],
            vec![(0, 1), (2, 3)],
            Masks::empty(4),
        )
        .unwrap();
        assert_eq!(edge_homophily_ratio(&cross).unwrap(), 0.0);
        let half = Graph::new(
            Mat::zeros(4, 1),
            vec![0, 0, 1, 1],
            vec![(0, 1), (1, 2)],
            Masks::empty(4),
        )
        .unwrap();
        assert_eq!(edge_homophily_ratio(&half).unwrap(), 0.5);
    }

    #[test]
    fn weighted_ratio_matches_unweighted_on_unit_weights() {
        let g = star_graph(&[0, 1, 1, 2], 0);
        let dense = edge_homophily_ratio_dense(&g.adjacency_matrix(), g.labels()).unwrap();
        let sparse = edge_homophily_ratio_sparse(&g.adjacency_structure(), g.labels()).unwrap();
        let plain = edge_homophily_ratio(&g).unwrap();
        assert!((dense - plain).abs() < 1e-15);
        assert!((sparse - plain).abs() < 1e-15);
    }

    #[test]
    fn all_zero_structure_errors() {
        assert!(matches!(
            edge_homophily_ratio_dense(&Mat::zeros(3, 3), &[0, 1, 2]),
            Err(Error::NoStructureEdges)
        ));
    }

    #[test]
    fn ego_layers_are_disjoint_and_exclude_center() {
        // Path of 4 nodes, center at an end: layers of size 1, 1, 1.
        let g = Graph::new(
            Mat::zeros(4, 1),
            vec![0, 1, 0, 1],
            vec![(0, 1), (1, 2), (2, 3)],
            Masks::empty(4),
        )
        .unwrap();
        let ego = ego_graph(&g, 0, 3);
        assert_eq!(ego.nodes_per_hop[0], vec![1]);
        assert_eq!(ego.nodes_per_hop[1], vec![2]);
        assert_eq!(ego.nodes_per_hop[2], vec![3]);
        let mut seen = std::collections::HashSet::new();
        for layer in &ego.nodes_per_hop {
            for &v in layer {
                assert_ne!(v, 0);
                assert!(seen.insert(v), "layers overlap at {v}");
            }
        }
    }

    #[test]
    fn ego_of_isolated_node_is_empty() {
        let g = Graph::new(
            Mat::zeros(3, 1),
            vec![0, 0, 1],
            vec![(0, 1)],
            Masks::empty(3),
        )
        .unwrap();
        let ego = ego_graph(&g, 2, 2);
        assert!(ego.nodes_per_hop.iter().all(|l| l.is_empty()));
    }

    #[test]
    fn graph_rejects_bad_edges_and_masks() {
        assert!(Graph::new(Mat::zeros(2, 1), vec![0, 1], vec![(0, 0)], Masks::empty(2)).is_err());
        assert!(Graph::new(Mat::zeros(2, 1), vec![0, 1], vec![(0, 5)], Masks::empty(2)).is_err());
        assert!(Graph::new(
            Mat::zeros(2, 1),
            vec![0, 1],
            vec![(0, 1), (1, 0)],
            Masks::empty(2)
        )
        .is_err());
        let mut masks = Masks::empty(2);
        masks.train[0] = true;
        masks.test[0] = true;
        assert!(Graph::new(Mat::zeros(2, 1), vec![0, 1], vec![(0, 1)], masks).is_err());
    }
}
