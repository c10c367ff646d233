//! Dataset directory format and loader.
//!
//! A dataset directory holds:
//!   edges.tsv    two whitespace-separated node ids per line, one undirected
//!                edge per line, each pair once
//!   features.csv one row per node, comma-separated reals, node order = id
//!   labels.csv   one integer class id per line
//!   splits.csv   optional; one of train/val/test per line
//!
//! Without splits.csv a stratified 60/20/20 split is drawn from the run
//! seed.

use anyhow::{anyhow, bail, Context};
use lhs_core::graph::{Graph, Masks};
use lhs_core::numkit::Mat;
use lhs_core::seeds;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// A loaded dataset with content hashes for provenance.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub graph: Graph,
    pub name: String,
    pub provenance: DatasetProvenance,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetProvenance {
    pub edges_sha256: String,
    pub features_sha256: String,
    pub labels_sha256: String,
    /// Empty when the split was generated from the seed.
    pub splits_sha256: String,
    pub split_seed: Option<u64>,
}

impl DatasetProvenance {
    /// Short digest covering all files, embedded in emitted artifacts.
    pub fn short(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.edges_sha256.as_bytes());
        h.update(self.features_sha256.as_bytes());
        h.update(self.labels_sha256.as_bytes());
        h.update(self.splits_sha256.as_bytes());
        hex(&h.finalize())[..16].to_string()
    }
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// Load and validate a dataset directory.
pub fn load_dataset(dir: &Path, default_split_seed: u64) -> anyhow::Result<DatasetBundle> {
    let labels_path = dir.join("labels.csv");
    let labels_text = fs::read_to_string(&labels_path)
        .with_context(|| format!("reading {}", labels_path.display()))?;
    let mut labels = Vec::new();
    for (lineno, line) in labels_text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: usize = line.parse().map_err(|_| {
            anyhow!(
                "{}:{}: expected an integer class id, got {line:?}",
                labels_path.display(),
                lineno + 1
            )
        })?;
        labels.push(v);
    }
    if labels.is_empty() {
        bail!("{}: no labels", labels_path.display());
    }
    let n = labels.len();

    let features_path = dir.join("features.csv");
    let features_text = fs::read_to_string(&features_path)
        .with_context(|| format!("reading {}", features_path.display()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in features_text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| {
                anyhow!(
                    "{}:{}: expected a real number, got {field:?}",
                    features_path.display(),
                    lineno + 1
                )
            })?;
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                bail!(
                    "{}:{}: row has {} fields, first row has {}",
                    features_path.display(),
                    lineno + 1,
                    row.len(),
                    first.len()
                );
            }
        }
        rows.push(row);
    }
    if rows.len() != n {
        bail!(
            "feature row count {} does not match label count {}",
            rows.len(),
            n
        );
    }
    let features = Mat::from_rows(&rows);

    let edges_path = dir.join("edges.tsv");
    let edges_text = fs::read_to_string(&edges_path)
        .with_context(|| format!("reading {}", edges_path.display()))?;
    let mut edges = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (lineno, line) in edges_text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let parse = |s: Option<&str>| -> anyhow::Result<usize> {
            s.ok_or_else(|| {
                anyhow!(
                    "{}:{}: expected two node ids",
                    edges_path.display(),
                    lineno + 1
                )
            })?
            .parse()
            .map_err(|_| {
                anyhow!(
                    "{}:{}: expected an integer node id",
                    edges_path.display(),
                    lineno + 1
                )
            })
        };
        let u: usize = parse(parts.next())?;
        let v: usize = parse(parts.next())?;
        if parts.next().is_some() {
            bail!(
                "{}:{}: expected exactly two node ids",
                edges_path.display(),
                lineno + 1
            );
        }
        if u == v {
            bail!("{}:{}: self-loop {u}", edges_path.display(), lineno + 1);
        }
        if u >= n || v >= n {
            bail!(
                "{}:{}: node id out of range for {n} nodes",
                edges_path.display(),
                lineno + 1
            );
        }
        if !seen.insert((u.min(v), u.max(v))) {
            bail!(
                "{}:{}: duplicate edge ({u}, {v})",
                edges_path.display(),
                lineno + 1
            );
        }
        edges.push((u, v));
    }

    let splits_path = dir.join("splits.csv");
    let (masks, splits_sha, split_seed) = if splits_path.exists() {
        let text = fs::read_to_string(&splits_path)
            .with_context(|| format!("reading {}", splits_path.display()))?;
        let mut masks = Masks::empty(n);
        let mut count = 0;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if count >= n {
                bail!(
                    "{}:{}: more split rows than nodes ({n})",
                    splits_path.display(),
                    lineno + 1
                );
            }
            match line {
                "train" => masks.train[count] = true,
                "val" => masks.val[count] = true,
                "test" => masks.test[count] = true,
                other => bail!(
                    "{}:{}: expected train/val/test, got {other:?}",
                    splits_path.display(),
                    lineno + 1
                ),
            }
            count += 1;
        }
        if count != n {
            bail!(
                "split row count {count} does not match node count {n}",
                count = count
            );
        }
        (masks, hex(&Sha256::digest(text.as_bytes())), None)
    } else {
        (
            stratified_split(&labels, default_split_seed),
            String::new(),
            Some(default_split_seed),
        )
    };

    let graph = Graph::new(features, labels, edges, masks)
        .map_err(|e| anyhow!("invalid dataset: {e}"))?;
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    Ok(DatasetBundle {
        graph,
        name,
        provenance: DatasetProvenance {
            edges_sha256: hex(&Sha256::digest(edges_text.as_bytes())),
            features_sha256: hex(&Sha256::digest(features_text.as_bytes())),
            labels_sha256: hex(&Sha256::digest(labels_text.as_bytes())),
            splits_sha256: splits_sha,
            split_seed,
        },
    })
}

/// Stratified 60/20/20 split, deterministic in the seed.
pub fn stratified_split(labels: &[usize], seed: u64) -> Masks {
    let n = labels.len();
    let mut masks = Masks::empty(n);
    let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
    for c in 0..n_classes {
        let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
        shuffle_usize(&mut members, seeds::derive(seed, "split", c as u64));
        let n_c = members.len();
        let n_train = (0.6 * n_c as f64).round() as usize;
        let n_val = (0.2 * n_c as f64).round() as usize;
        for (k, &i) in members.iter().enumerate() {
            if k < n_train {
                masks.train[i] = true;
            } else if k < n_train + n_val {
                masks.val[i] = true;
            } else {
                masks.test[i] = true;
            }
        }
    }
    masks
}

/// Write a dataset directory in canonical form: edges sorted ascending,
/// shortest-round-trip float formatting. Loading and saving a canonical
/// directory is byte-identical.
pub fn save_dataset(bundle: &DatasetBundle, dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    let g = &bundle.graph;
    let mut edges = String::new();
    for &(u, v) in g.edges() {
        let _ = writeln!(edges, "{u}\t{v}");
    }
    fs::write(dir.join("edges.tsv"), edges)?;

    let mut feats = String::new();
    for i in 0..g.n_nodes() {
        let row: Vec<String> = g.features().row(i).iter().map(|v| format!("{v}")).collect();
        let _ = writeln!(feats, "{}", row.join(","));
    }
    fs::write(dir.join("features.csv"), feats)?;

    let mut labels = String::new();
    for &l in g.labels() {
        let _ = writeln!(labels, "{l}");
    }
    fs::write(dir.join("labels.csv"), labels)?;

    let mut splits = String::new();
    for i in 0..g.n_nodes() {
        let kind = if g.masks().train[i] {
            "train"
        } else if g.masks().val[i] {
            "val"
        } else {
            "test"
        };
        let _ = writeln!(splits, "{kind}");
    }
    fs::write(dir.join("splits.csv"), splits)?;
    Ok(())
}

fn shuffle_usize(items: &mut [usize], seed: u64) {
    let mut rng = seeds::rng(seed, "shuffle", 0);
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}
