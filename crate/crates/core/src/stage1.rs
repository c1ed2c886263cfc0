//! Representative-sample extraction: DBSCAN over a precomputed distance
//! matrix, one medoid per cluster (the local effective samples), and the
//! medoids' nearest neighbours (the global effective samples).

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::gower::DistanceMatrix;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StageOneError {
    #[error("invalid DBSCAN parameters: {0}")]
    Params(String),
    #[error("malformed distance matrix: {0}")]
    Matrix(String),
    #[error("cluster has no members")]
    EmptyCluster,
    #[error("DBSCAN found no clusters; lower min_pts or raise eps")]
    NoClusters,
    #[error("k = {k} needs more than {n} rows")]
    KTooLarge { k: usize, n: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbscanParams {
    pub eps: f64,
    pub min_pts: usize,
}

impl Default for DbscanParams {
    fn default() -> Self {
        DbscanParams {
            eps: 0.15,
            min_pts: 4,
        }
    }
}

impl DbscanParams {
    pub fn new(eps: f64, min_pts: usize) -> Result<Self, StageOneError> {
        let p = DbscanParams { eps, min_pts };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), StageOneError> {
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return Err(StageOneError::Params(format!("eps {} outside (0, 1]", self.eps)));
        }
        if self.min_pts == 0 {
            return Err(StageOneError::Params("min_pts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Cluster(usize),
    Noise,
}

impl Label {
    pub fn cluster(self) -> Option<usize> {
        match self {
            Label::Cluster(c) => Some(c),
            Label::Noise => None,
        }
    }

    pub fn is_noise(self) -> bool {
        self == Label::Noise
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<Label>,
    pub k: usize,
}

impl ClusterAssignment {
    /// Row indices of cluster `c`, ascending.
    pub fn members(&self, c: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == Label::Cluster(c))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn noise(&self) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_noise())
            .map(|(i, _)| i)
            .collect()
    }
}

/// Classic DBSCAN. A point is core when at least `min_pts` points, itself
/// included, lie within `eps`. Points are scanned in ascending index order;
/// each unlabelled core point starts a new cluster that is expanded
/// breadth-first, and a border point joins the first cluster to reach it.
pub fn dbscan(dist: &DistanceMatrix, params: DbscanParams) -> Result<ClusterAssignment, StageOneError> {
    params.validate()?;
    dist.validate().map_err(StageOneError::Matrix)?;
    let n = dist.len();
    let neighbours: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| dist.get(i, j) <= params.eps).collect())
        .collect();
    let is_core: Vec<bool> = neighbours.iter().map(|nb| nb.len() >= params.min_pts).collect();

    let mut labels: Vec<Option<Label>> = vec![None; n];
    let mut k = 0;
    let mut queue = std::collections::VecDeque::new();
    for start in 0..n {
        if labels[start].is_some() {
            continue;
        }
        if !is_core[start] {
            labels[start] = Some(Label::Noise);
            continue;
        }
        let id = k;
        k += 1;
        labels[start] = Some(Label::Cluster(id));
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            for &q in &neighbours[p] {
                match labels[q] {
                    Some(Label::Cluster(_)) => {}
                    Some(Label::Noise) => labels[q] = Some(Label::Cluster(id)),
                    None => {
                        labels[q] = Some(Label::Cluster(id));
                        if is_core[q] {
                            queue.push_back(q);
                        }
                    }
                }
            }
        }
    }
    Ok(ClusterAssignment {
        labels: labels.into_iter().map(|l| l.expect("every row visited")).collect(),
        k,
    })
}

/// Member with the smallest summed distance to the other members; ties go to
/// the smaller row index.
pub fn medoid(cluster_rows: &[usize], dist: &DistanceMatrix) -> Result<usize, StageOneError> {
    let mut best: Option<(f64, usize)> = None;
    for &i in cluster_rows {
        let total: f64 = cluster_rows.iter().map(|&j| dist.get(i, j)).sum();
        best = match best {
            Some((b, bi)) if b < total || (b == total && bi < i) => Some((b, bi)),
            _ => Some((total, i)),
        };
    }
    best.map(|(_, i)| i).ok_or(StageOneError::EmptyCluster)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NeighbourOptions {
    /// Allow noise rows as neighbour candidates.
    pub include_noise: bool,
    /// Draw each medoid's neighbours only from its own cluster.
    pub within_cluster: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveSampleSet {
    /// Cluster medoids in cluster-id order.
    pub les: Vec<usize>,
    /// `les` followed by neighbour rows in discovery order, deduplicated.
    pub ges: Vec<usize>,
    pub t: usize,
}

pub fn build_effective_samples(
    assignment: &ClusterAssignment,
    dist: &DistanceMatrix,
    t: usize,
    options: NeighbourOptions,
) -> Result<EffectiveSampleSet, StageOneError> {
    if assignment.k == 0 {
        return Err(StageOneError::NoClusters);
    }
    if dist.len() != assignment.labels.len() {
        return Err(StageOneError::Matrix(format!(
            "{} labels for a {}-row matrix",
            assignment.labels.len(),
            dist.len()
        )));
    }
    let les = (0..assignment.k)
        .map(|c| medoid(&assignment.members(c), dist))
        .collect::<Result<Vec<_>, _>>()?;
    let mut ges = les.clone();
    let mut seen: HashSet<usize> = les.iter().copied().collect();
    for (c, &m) in les.iter().enumerate() {
        let mut candidates: Vec<usize> = (0..dist.len())
            .filter(|&j| j != m)
            .filter(|&j| match assignment.labels[j] {
                Label::Noise => options.include_noise && !options.within_cluster,
                Label::Cluster(cj) => !options.within_cluster || cj == c,
            })
            .collect();
        candidates.sort_by(|&a, &b| dist.get(m, a).total_cmp(&dist.get(m, b)).then(a.cmp(&b)));
        for j in candidates.into_iter().take(t) {
            if seen.insert(j) {
                ges.push(j);
            }
        }
    }
    Ok(EffectiveSampleSet { les, ges, t })
}

/// Distance from each row to its `k`-th nearest other row, sorted descending.
pub fn k_distances(dist: &DistanceMatrix, k: usize) -> Result<Vec<f64>, StageOneError> {
    let n = dist.len();
    if k == 0 || k >= n {
        return Err(StageOneError::KTooLarge { k, n });
    }
    let mut out: Vec<f64> = (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist.get(i, j)).collect();
            row.sort_by(f64::total_cmp);
            row[k - 1]
        })
        .collect();
    out.sort_by(|a, b| b.total_cmp(a));
    Ok(out)
}
