//! Complete-linkage (farthest point) agglomerative clustering of the sampled
//! rows on the distance 1 - |corr|, with two cut criteria: a fixed mode
//! count, or a cophenetic distance threshold.
//!
//! Anti-correlated rows are as close as correlated ones: the affine model
//! allows negative scale, so the distance uses the absolute correlation.

use serde::{Deserialize, Serialize};

use crate::correlation::{CorrMatrix, SampleSet};
use crate::error::{Error, Result};
use crate::trajectory::SnapshotMatrix;

/// Default number of sampled representative rows.
pub const DEFAULT_SAMPLE_SIZE: usize = 1000;
/// Default diagnostic correlation slack: a member counts as "well modeled"
/// when |corr| to its reference is at least 1 - epsilon.
pub const DEFAULT_EPSILON: f64 = 0.1;

/// How to cut the dendrogram into modes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cut", rename_all = "snake_case")]
pub enum Cut {
    /// Exactly this many modes (capped at K).
    FixedModes { modes: usize },
    /// Largest clusters whose internal cophenetic distance stays below the
    /// threshold, in (0, 1].
    Threshold { threshold: f64 },
    /// Threshold cut at half the maximal pairwise distance of the sample.
    HalfMaxDistance,
}

/// Clustering configuration carried through the pipeline and echoed in the
/// decomposition model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    /// Number of sampled representative weights (K).
    pub sample_size: usize,
    pub cut: Cut,
    /// Diagnostic threshold only; nothing is filtered on it.
    pub epsilon: f64,
    pub seed: u64,
}

impl ClusterConfig {
    pub fn new(cut: Cut, seed: u64) -> Self {
        Self { sample_size: DEFAULT_SAMPLE_SIZE, cut, epsilon: DEFAULT_EPSILON, seed }
    }

    pub fn with_sample_size(mut self, k: usize) -> Self {
        self.sample_size = k;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_size == 0 {
            return Err(Error::Config("sample size K must be positive".into()));
        }
        match self.cut {
            Cut::FixedModes { modes } => {
                if modes == 0 {
                    return Err(Error::Config("mode count must be positive".into()));
                }
                if modes > self.sample_size {
                    return Err(Error::Config(format!(
                        "mode count {modes} exceeds sample size {}",
                        self.sample_size
                    )));
                }
            }
            Cut::Threshold { threshold } => {
                if !(threshold > 0.0 && threshold <= 1.0) {
                    return Err(Error::Config(format!(
                        "threshold must lie in (0, 1], got {threshold}"
                    )));
                }
            }
            Cut::HalfMaxDistance => {}
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!(
                "epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// One agglomerative merge. Ids follow the usual stepwise convention:
/// 0..K-1 are leaves, K+s is the cluster created by merge step s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
}

/// Stepwise dendrogram over the K sampled rows: K-1 merges with
/// non-decreasing heights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub leaf_count: usize,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn validate(&self) -> Result<()> {
        if self.leaf_count == 0 {
            return Err(Error::Data("dendrogram has no leaves".into()));
        }
        if self.merges.len() + 1 != self.leaf_count {
            return Err(Error::Data(format!(
                "{} merges for {} leaves",
                self.merges.len(),
                self.leaf_count
            )));
        }
        if !self.merges.windows(2).all(|w| w[0].height <= w[1].height) {
            return Err(Error::Data("merge heights are not monotone".into()));
        }
        Ok(())
    }
}

/// Complete-linkage clustering of the correlation matrix on the distance
/// d(i,j) = 1 - |c(i,j)|.
///
/// The straightforward O(K^3) scheme: scan all active pairs for the minimum,
/// merge, update the merged row with the pairwise maximum. K is at most a
/// few thousand here, so this finishes in seconds at worst.
pub fn linkage(c: &CorrMatrix) -> Result<Dendrogram> {
    let k = c.size();
    let mut dist = vec![0.0f64; k * k];
    for i in 0..k {
        for j in 0..k {
            if i != j {
                dist[i * k + j] = 1.0 - c.get(i, j).abs();
            }
        }
    }
    // Slot state: cluster id under the stepwise convention, or usize::MAX
    // once merged away.
    let mut cluster_id: Vec<usize> = (0..k).collect();
    let mut active: Vec<bool> = vec![true; k];
    let mut merges = Vec::with_capacity(k.saturating_sub(1));

    for step in 0..k.saturating_sub(1) {
        // Lowest-index pair wins ties, keeping the dendrogram deterministic.
        let mut best = (usize::MAX, usize::MAX);
        let mut best_d = f64::INFINITY;
        for i in 0..k {
            if !active[i] {
                continue;
            }
            for j in i + 1..k {
                if !active[j] {
                    continue;
                }
                let d = dist[i * k + j];
                if d < best_d {
                    best_d = d;
                    best = (i, j);
                }
            }
        }
        let (i, j) = best;
        let (a, b) = (cluster_id[i].min(cluster_id[j]), cluster_id[i].max(cluster_id[j]));
        merges.push(Merge { left: a, right: b, height: best_d });
        // Complete linkage: distance to the merged cluster is the max.
        for l in 0..k {
            if l != i && l != j && active[l] {
                let d = dist[i * k + l].max(dist[j * k + l]);
                dist[i * k + l] = d;
                dist[l * k + i] = d;
            }
        }
        active[j] = false;
        cluster_id[i] = k + step;
    }

    let d = Dendrogram { leaf_count: k, merges };
    d.validate()?;
    Ok(d)
}

/// A cut with its threshold resolved against the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cut", rename_all = "snake_case")]
pub enum ResolvedCut {
    FixedModes { modes: usize },
    Threshold { threshold: f64 },
}

/// Resolve the half-max-distance default against the sampled correlations.
pub fn resolve_cut(cut: &Cut, c: &CorrMatrix) -> ResolvedCut {
    match *cut {
        Cut::FixedModes { modes } => ResolvedCut::FixedModes { modes },
        Cut::Threshold { threshold } => ResolvedCut::Threshold { threshold },
        Cut::HalfMaxDistance => ResolvedCut::Threshold {
            threshold: c.max_pairwise_distance() / 2.0,
        },
    }
}

/// Cut the dendrogram into flat cluster labels 0..M-1 for the K leaves.
///
/// Labels are renumbered so that clusters appear in order of their smallest
/// leaf index. A fixed-modes cut applies the first K-M merges; a threshold
/// cut applies every merge with height <= t (a prefix, by monotonicity).
pub fn cut(d: &Dendrogram, cut: &ResolvedCut) -> Vec<usize> {
    let k = d.leaf_count;
    let applied = match *cut {
        ResolvedCut::FixedModes { modes } => k - modes.min(k),
        ResolvedCut::Threshold { threshold } => {
            d.merges.iter().take_while(|m| m.height <= threshold).count()
        }
    };
    // Union-find over the stepwise ids.
    let mut parent: Vec<usize> = (0..k + applied).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (s, m) in d.merges.iter().take(applied).enumerate() {
        let ra = find(&mut parent, m.left);
        let rb = find(&mut parent, m.right);
        parent[ra] = k + s;
        parent[rb] = k + s;
    }
    let mut label_of_root = std::collections::HashMap::new();
    let mut labels = vec![0usize; k];
    for leaf in 0..k {
        let root = find(&mut parent, leaf);
        let next = label_of_root.len();
        labels[leaf] = *label_of_root.entry(root).or_insert(next);
    }
    labels
}

/// A chosen cluster center: the member with maximal total absolute
/// correlation to its cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub mode_id: usize,
    /// Row index in the snapshot matrix.
    pub row_index: usize,
    pub trajectory: Vec<f64>,
}

/// Pick each cluster's reference weight. Ties break toward the lowest row
/// index.
pub fn choose_references(
    m: &SnapshotMatrix,
    c: &CorrMatrix,
    labels: &[usize],
    sample: &SampleSet,
) -> Result<Vec<Reference>> {
    let k = sample.indices.len();
    if labels.len() != k || c.size() != k {
        return Err(Error::Data("labels, correlations and sample must agree on K".into()));
    }
    let mode_count = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); mode_count];
    for (leaf, &l) in labels.iter().enumerate() {
        members[l].push(leaf);
    }
    let mut refs = Vec::with_capacity(mode_count);
    for (mode_id, cluster) in members.iter().enumerate() {
        if cluster.is_empty() {
            return Err(Error::Degenerate(format!("cut produced empty mode {mode_id}")));
        }
        let mut best_leaf = cluster[0];
        let mut best_sum = f64::NEG_INFINITY;
        for &i in cluster {
            let sum: f64 = cluster.iter().map(|&j| c.get(i, j).abs()).sum();
            if sum > best_sum {
                best_sum = sum;
                best_leaf = i;
            }
        }
        let row_index = sample.indices[best_leaf];
        refs.push(Reference {
            mode_id,
            row_index,
            trajectory: m.row(row_index).to_vec(),
        });
    }
    Ok(refs)
}
