//! Synthetic tasks, cluster-wise distribution shift and per-node splits.
//!
//! The base task is a Gaussian blob per class: in every consecutive
//! coordinate pair the class mean sits on a circle of the configured radius,
//! at angle 2*pi*c/L plus a fixed per-pair offset so that no plane rotation
//! maps one class exactly onto another. Clusters shift either the features
//! (plane rotation per cluster) or the label support (subset per cluster),
//! and nodes of a cluster partition that cluster's samples into disjoint
//! train/validation/test splits.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::Error;
use crate::rng::{normal, shuffle};
use crate::Result;

/// Decorrelates the class circles of different coordinate pairs.
const PAIR_OFFSET_STEP: f64 = 2.399963229728653;

/// A flat row-major feature matrix with one integer label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPool {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<u32>,
}

impl LabeledPool {
    pub fn new(dim: usize) -> Self {
        Self { dim, features: Vec::new(), labels: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, row: &[f64], label: u32) {
        debug_assert_eq!(row.len(), self.dim);
        self.features.extend_from_slice(row);
        self.labels.push(label);
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> u32 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }
}

/// Per-cluster distribution shift.
#[derive(Debug, Clone, PartialEq)]
pub enum ShiftKind {
    /// Degrees of plane rotation applied to each cluster's features.
    Rotation(Vec<f64>),
    /// Label subset each cluster's samples are restricted to.
    Labels(Vec<Vec<u32>>),
}

/// Ground-truth cluster structure: who belongs together and how their data
/// differs. Node ids are assigned to clusters contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterLayout {
    pub sizes: Vec<usize>,
    pub shift: ShiftKind,
}

impl ClusterLayout {
    pub fn total_nodes(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn num_clusters(&self) -> usize {
        self.sizes.len()
    }

    /// Cluster of a node id under contiguous assignment.
    pub fn cluster_of(&self, node: usize) -> usize {
        let mut start = 0;
        for (c, &size) in self.sizes.iter().enumerate() {
            if node < start + size {
                return c;
            }
            start += size;
        }
        panic!("node {node} beyond layout with {} nodes", start);
    }

    pub fn validate(&self, classes: u32) -> Result<()> {
        if self.sizes.is_empty() || self.sizes.iter().any(|&s| s == 0) {
            return Err(Error::Config("layout.cluster_sizes must be non-empty and positive".into()));
        }
        match &self.shift {
            ShiftKind::Rotation(angles) => {
                if angles.len() != self.sizes.len() {
                    return Err(Error::Config(
                        "layout.rotation_degrees must have one angle per cluster".into(),
                    ));
                }
                if angles.iter().any(|a| !a.is_finite() || !(0.0..360.0).contains(a)) {
                    return Err(Error::Config(
                        "layout.rotation_degrees entries must lie in [0, 360)".into(),
                    ));
                }
            }
            ShiftKind::Labels(subsets) => {
                if subsets.len() != self.sizes.len() {
                    return Err(Error::Config(
                        "layout.label_subsets must have one subset per cluster".into(),
                    ));
                }
                for (c, subset) in subsets.iter().enumerate() {
                    if subset.is_empty() {
                        return Err(Error::Config(format!(
                            "layout.label_subsets[{c}] must not be empty"
                        )));
                    }
                    let mut sorted = subset.clone();
                    sorted.sort_unstable();
                    sorted.dedup();
                    if sorted.len() != subset.len() {
                        return Err(Error::Config(format!(
                            "layout.label_subsets[{c}] contains duplicates"
                        )));
                    }
                    if let Some(&bad) = subset.iter().find(|&&l| l >= classes) {
                        return Err(Error::Config(format!(
                            "layout.label_subsets[{c}] label {bad} outside 0..{classes}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// One node's private data.
#[derive(Debug, Clone)]
pub struct NodeData {
    pub cluster: usize,
    pub train: LabeledPool,
    pub val: LabeledPool,
    pub test: LabeledPool,
}

/// Gaussian class blobs on per-pair circles.
pub fn make_base_task<R: Rng>(
    classes: u32,
    dim: usize,
    per_class: usize,
    radius: f64,
    sigma: f64,
    rng: &mut R,
) -> Result<LabeledPool> {
    if classes < 2 {
        return Err(Error::Domain("need at least two classes".into()));
    }
    if dim == 0 || per_class == 0 {
        return Err(Error::Domain("dim and per_class must be positive".into()));
    }
    if !(radius.is_finite() && sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::Domain("radius and sigma must be finite, sigma non-negative".into()));
    }
    let mut pool = LabeledPool::new(dim);
    let mut row = vec![0.0; dim];
    for c in 0..classes {
        for _ in 0..per_class {
            for p in 0..dim / 2 {
                let angle = std::f64::consts::TAU * c as f64 / classes as f64
                    + p as f64 * PAIR_OFFSET_STEP / classes as f64;
                row[2 * p] = radius * angle.cos() + sigma * normal(rng);
                row[2 * p + 1] = radius * angle.sin() + sigma * normal(rng);
            }
            if dim % 2 == 1 {
                row[dim - 1] = sigma * normal(rng);
            }
            pool.push(&row, c);
        }
    }
    Ok(pool)
}

/// Plane rotation by the given angle (degrees) applied to every consecutive
/// coordinate pair of every row. A trailing odd coordinate is untouched.
pub fn apply_rotation(pool: &LabeledPool, degrees: f64) -> LabeledPool {
    let theta = degrees.to_radians();
    let (cos, sin) = (theta.cos(), theta.sin());
    let mut out = LabeledPool::new(pool.dim());
    let mut row = vec![0.0; pool.dim()];
    for i in 0..pool.len() {
        row.copy_from_slice(pool.row(i));
        for p in 0..pool.dim() / 2 {
            let (x, y) = (row[2 * p], row[2 * p + 1]);
            row[2 * p] = x * cos - y * sin;
            row[2 * p + 1] = x * sin + y * cos;
        }
        out.push(&row, pool.label(i));
    }
    out
}

/// Distributes the base pool over nodes cluster by cluster and cuts each
/// node's chunk into train/validation/test.
pub fn partition<R: Rng>(
    base: &LabeledPool,
    layout: &ClusterLayout,
    samples_per_node: usize,
    split_fracs: (f64, f64, f64),
    rng: &mut R,
) -> Result<Vec<NodeData>> {
    let (n_train, n_val, n_test) = split_sizes(samples_per_node, split_fracs)?;
    let k = layout.total_nodes();
    let mut nodes = Vec::with_capacity(k);
    match &layout.shift {
        ShiftKind::Rotation(angles) => {
            if k * samples_per_node > base.len() {
                return Err(Error::Config(format!(
                    "data: {} nodes x {samples_per_node} samples exceed the {} available",
                    k,
                    base.len()
                )));
            }
            let mut order: Vec<usize> = (0..base.len()).collect();
            shuffle(rng, &mut order);
            let mut cursor = 0;
            for (cluster, &size) in layout.sizes.iter().enumerate() {
                for _ in 0..size {
                    let chunk = &order[cursor..cursor + samples_per_node];
                    cursor += samples_per_node;
                    let mut raw = LabeledPool::new(base.dim());
                    for &i in chunk {
                        raw.push(base.row(i), base.label(i));
                    }
                    let shifted = apply_rotation(&raw, angles[cluster]);
                    nodes.push(cut_node(&shifted, cluster, n_train, n_val, n_test));
                }
            }
        }
        ShiftKind::Labels(subsets) => {
            let mut used = vec![false; base.len()];
            for (cluster, &size) in layout.sizes.iter().enumerate() {
                let subset = &subsets[cluster];
                let mut eligible: Vec<usize> = (0..base.len())
                    .filter(|&i| !used[i] && subset.contains(&base.label(i)))
                    .collect();
                if size * samples_per_node > eligible.len() {
                    return Err(Error::Config(format!(
                        "data: cluster {cluster} needs {} samples with labels {subset:?}, only {} available",
                        size * samples_per_node,
                        eligible.len()
                    )));
                }
                shuffle(rng, &mut eligible);
                for node_in_cluster in 0..size {
                    let start = node_in_cluster * samples_per_node;
                    let chunk = &eligible[start..start + samples_per_node];
                    let mut raw = LabeledPool::new(base.dim());
                    for &i in chunk {
                        used[i] = true;
                        raw.push(base.row(i), base.label(i));
                    }
                    nodes.push(cut_node(&raw, cluster, n_train, n_val, n_test));
                }
            }
        }
    }
    Ok(nodes)
}

/// Train/validation/test sizes for one node: floor the first two fractions,
/// give the remainder to test, and reject any empty split.
pub fn split_sizes(samples_per_node: usize, fracs: (f64, f64, f64)) -> Result<(usize, usize, usize)> {
    let (a, b, c) = fracs;
    if !(a > 0.0 && b > 0.0 && c > 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::Config("data.split_fracs must be positive and sum to 1".into()));
    }
    let n_train = (samples_per_node as f64 * a).floor() as usize;
    let n_val = (samples_per_node as f64 * b).floor() as usize;
    let n_test = samples_per_node - n_train - n_val;
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::Config(format!(
            "data: samples_per_node {samples_per_node} leaves an empty split ({n_train}/{n_val}/{n_test})"
        )));
    }
    Ok((n_train, n_val, n_test))
}

fn cut_node(pool: &LabeledPool, cluster: usize, n_train: usize, n_val: usize, n_test: usize) -> NodeData {
    let mut parts = [LabeledPool::new(pool.dim()), LabeledPool::new(pool.dim()), LabeledPool::new(pool.dim())];
    for i in 0..pool.len() {
        let part = if i < n_train {
            0
        } else if i < n_train + n_val {
            1
        } else {
            2
        };
        parts[part].push(pool.row(i), pool.label(i));
    }
    debug_assert_eq!(parts[2].len(), n_test);
    let [train, val, test] = parts;
    NodeData { cluster, train, val, test }
}

/// Reads a pool from CSV with header `label,f0,...,f{d-1}`.
pub fn load_csv(path: &Path, classes: Option<u32>) -> Result<LabeledPool> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse { line: 1, msg: "file is empty".into() })?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 2 || cols[0] != "label" {
        return Err(Error::Parse { line: 1, msg: "header must be label,f0,...".into() });
    }
    for (i, col) in cols[1..].iter().enumerate() {
        if *col != format!("f{i}") {
            return Err(Error::Parse {
                line: 1,
                msg: format!("feature column {} named {col:?}, expected \"f{i}\"", i + 1),
            });
        }
    }
    let dim = cols.len() - 1;
    let mut pool = LabeledPool::new(dim);
    let mut row = vec![0.0; dim];
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != dim + 1 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected {} columns, found {}", dim + 1, cells.len()),
            });
        }
        let label: u32 = cells[0].trim().parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("label {:?} is not a non-negative integer", cells[0]),
        })?;
        if let Some(classes) = classes {
            if label >= classes {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("label {label} outside 0..{classes}"),
                });
            }
        }
        for (j, cell) in cells[1..].iter().enumerate() {
            row[j] = cell.trim().parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("feature {:?} is not a number", cell),
            })?;
        }
        pool.push(&row, label);
    }
    Ok(pool)
}

/// Writes a pool in the `load_csv` schema. Features print in the shortest
/// form that parses back to the same f64, so a round trip is lossless.
pub fn save_csv(pool: &LabeledPool, path: &Path) -> Result<()> {
    let mut out = String::from("label");
    for i in 0..pool.dim() {
        let _ = write!(out, ",f{i}");
    }
    out.push('\n');
    for i in 0..pool.len() {
        let _ = write!(out, "{}", pool.label(i));
        for v in pool.row(i) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
