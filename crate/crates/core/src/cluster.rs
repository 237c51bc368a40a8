//! K-means pseudo-labels for unlabeled target samples.
//!
//! Clusters are seeded at the per-class source centroids, refined with
//! Lloyd iterations over the target features, and the members closest to
//! each center are kept as temporarily labeled anchors.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterState {
    /// `[K, d]`
    pub centers: Tensor,
    pub assignments: Vec<usize>,
    /// Euclidean distance of each target sample to its assigned center.
    pub distances: Vec<f64>,
    pub iterations_run: usize,
    /// Inertia after every assignment step, starting with the initial centers.
    pub inertia_trace: Vec<f64>,
}

impl ClusterState {
    pub fn num_clusters(&self) -> usize {
        self.centers.rows()
    }

    pub fn inertia(&self) -> f64 {
        self.distances.iter().map(|d| d * d).sum()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_clusters()];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PseudoLabel {
    pub target_index: usize,
    pub label: usize,
    pub distance: f64,
}

/// Selected target samples with cluster-derived labels, grouped by cluster
/// and sorted by distance within each cluster.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PseudoLabelSet {
    pub entries: Vec<PseudoLabel>,
}

impl PseudoLabelSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn check_matrix(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    if t.dims().len() != 2 {
        return Err(Error::Shape(format!("{what} must be a matrix, got dims {:?}", t.dims())));
    }
    Ok((t.rows(), t.cols()))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Row `k` is the mean of the source rows labeled `k`.
pub fn source_centroids(features: &Tensor, labels: &[usize], k: usize) -> Result<Tensor> {
    let (n, d) = check_matrix(features, "source features")?;
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} source rows", labels.len())));
    }
    let mut sums = vec![0.0; k * d];
    let mut counts = vec![0usize; k];
    for (i, &label) in labels.iter().enumerate() {
        if label >= k {
            return Err(Error::Data(format!("source label {label} outside [0, {k})")));
        }
        counts[label] += 1;
        for (s, v) in sums[label * d..(label + 1) * d].iter_mut().zip(features.row(i)) {
            *s += v;
        }
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Data(format!("class {empty} has no source samples")));
    }
    for (c, &count) in counts.iter().enumerate() {
        sums[c * d..(c + 1) * d].iter_mut().for_each(|s| *s /= count as f64);
    }
    Tensor::new(vec![k, d], sums)
}

/// Nearest center per row; ties go to the lower index. Returns
/// assignments and squared distances.
fn assign(centers: &Tensor, feats: &Tensor) -> (Vec<usize>, Vec<f64>) {
    let k = centers.rows();
    (0..feats.rows())
        .map(|i| {
            let x = feats.row(i);
            let mut best = (0, sq_dist(x, centers.row(0)));
            for c in 1..k {
                let d = sq_dist(x, centers.row(c));
                if d < best.1 {
                    best = (c, d);
                }
            }
            best
        })
        .unzip()
}

/// Lloyd refinement from `init_centers`.
///
/// Stops once no center moves by `tol` or more, or after `max_iter`
/// updates. Empty clusters keep their previous center.
pub fn kmeans_refine(init_centers: &Tensor, targets: &Tensor, max_iter: usize, tol: f64) -> Result<ClusterState> {
    let (k, d) = check_matrix(init_centers, "initial centers")?;
    let (n, td) = check_matrix(targets, "target features")?;
    if k == 0 {
        return Err(Error::Argument("need at least one cluster".into()));
    }
    if n == 0 {
        return Err(Error::Argument("target set is empty".into()));
    }
    if d != td {
        return Err(Error::Shape(format!("centers have width {d}, targets have width {td}")));
    }
    let mut centers = init_centers.clone();
    let (mut assignments, mut sq) = assign(&centers, targets);
    let mut trace = vec![sq.iter().sum()];
    let mut iterations = 0;

    while iterations < max_iter {
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for (i, &a) in assignments.iter().enumerate() {
            counts[a] += 1;
            for (s, v) in sums[a * d..(a + 1) * d].iter_mut().zip(targets.row(i)) {
                *s += v;
            }
        }
        let mut next = centers.clone();
        let mut max_move = 0.0f64;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let row = &mut next.data_mut()[c * d..(c + 1) * d];
            for (dst, s) in row.iter_mut().zip(&sums[c * d..(c + 1) * d]) {
                *dst = s / counts[c] as f64;
            }
            max_move = max_move.max(sq_dist(next.row(c), centers.row(c)).sqrt());
        }
        centers = next;
        iterations += 1;
        (assignments, sq) = assign(&centers, targets);
        trace.push(sq.iter().sum());
        if max_move < tol {
            break;
        }
    }
    Ok(ClusterState {
        centers,
        assignments,
        distances: sq.into_iter().map(f64::sqrt).collect(),
        iterations_run: iterations,
        inertia_trace: trace,
    })
}

/// Keeps the `ceil(q · |cluster|)` members nearest to each center.
/// Distance ties go to the lower target index.
pub fn select_top_fraction(state: &ClusterState, q: f64) -> Result<PseudoLabelSet> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::Argument(format!("selection fraction must be in (0, 1], got {q}")));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); state.num_clusters()];
    for (i, &a) in state.assignments.iter().enumerate() {
        members[a].push(i);
    }
    let mut entries = Vec::new();
    for (label, mut idx) in members.into_iter().enumerate() {
        idx.sort_by(|&a, &b| state.distances[a].total_cmp(&state.distances[b]).then(a.cmp(&b)));
        let take = (q * idx.len() as f64).ceil() as usize;
        entries.extend(idx.into_iter().take(take).map(|i| PseudoLabel {
            target_index: i,
            label,
            distance: state.distances[i],
        }));
    }
    Ok(PseudoLabelSet { entries })
}

/// Convenience: centroids from labeled source features, Lloyd refinement on
/// the target, then top-fraction selection.
pub fn pseudo_label(
    source: &Tensor,
    source_labels: &[usize],
    target: &Tensor,
    num_classes: usize,
    q: f64,
) -> Result<(ClusterState, PseudoLabelSet)> {
    let init = source_centroids(source, source_labels, num_classes)?;
    let state = kmeans_refine(&init, target, 100, 1e-6)?;
    let selected = select_top_fraction(&state, q)?;
    Ok((state, selected))
}
