//! Feature dependency graph: absolute phi correlations between binary
//! features, prototype selection and the optimum-path forest that partitions
//! the features into prototype-rooted clusters.

use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::{Error, Result};

/// Path cost given to features that no prototype can reach through a
/// positive-weight edge.
pub const ISOLATED_COST: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationConfig {
    /// Largest `d` stored as a dense matrix.
    pub dense_cap: usize,
    /// Neighbors kept per feature above the cap.
    pub top_k: usize,
}

impl Default for CorrelationConfig {
    fn default() -> Self {
        CorrelationConfig {
            dense_cap: 4096,
            top_k: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Storage {
    Dense(Vec<f64>),
    /// Per-feature neighbor lists sorted by index; symmetric by construction.
    Sparse(Vec<Vec<(usize, f64)>>),
}

/// Symmetric matrix of correlation magnitudes in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    d: usize,
    storage: Storage,
}

impl CorrelationMatrix {
    /// Wraps a dense row-major matrix after checking symmetry and range.
    pub fn from_dense(d: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != d * d {
            return Err(Error::Shape {
                expected: d * d,
                got: values.len(),
            });
        }
        for i in 0..d {
            for j in 0..d {
                let v = values[i * d + j];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::config(
                        "correlation",
                        format!("entry ({i},{j}) = {v} outside [0,1]"),
                    ));
                }
                if v != values[j * d + i] {
                    return Err(Error::config(
                        "correlation",
                        format!("matrix not symmetric at ({i},{j})"),
                    ));
                }
            }
        }
        Ok(CorrelationMatrix {
            d,
            storage: Storage::Dense(values),
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.storage, Storage::Dense(_))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match &self.storage {
            Storage::Dense(v) => v[i * self.d + j],
            Storage::Sparse(adj) => {
                if i == j {
                    // diagonal is not stored; a feature with any neighbor is non-constant
                    return if adj[i].is_empty() { 0.0 } else { 1.0 };
                }
                adj[i]
                    .binary_search_by_key(&j, |&(k, _)| k)
                    .map(|pos| adj[i][pos].1)
                    .unwrap_or(0.0)
            }
        }
    }

    /// Off-diagonal positive entries as `(i, j, weight)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        match &self.storage {
            Storage::Dense(v) => {
                for i in 0..self.d {
                    for j in i + 1..self.d {
                        let w = v[i * self.d + j];
                        if w > 0.0 {
                            out.push((i, j, w));
                        }
                    }
                }
            }
            Storage::Sparse(adj) => {
                for (i, nbrs) in adj.iter().enumerate() {
                    out.extend(
                        nbrs.iter()
                            .filter(|&&(j, w)| j > i && w > 0.0)
                            .map(|&(j, w)| (i, j, w)),
                    );
                }
            }
        }
        out
    }

    /// Sum of off-diagonal correlations per feature.
    pub fn aggregate_scores(&self) -> Vec<f64> {
        match &self.storage {
            Storage::Dense(v) => (0..self.d)
                .map(|i| {
                    (0..self.d)
                        .filter(|&j| j != i)
                        .map(|j| v[i * self.d + j])
                        .sum()
                })
                .collect(),
            Storage::Sparse(adj) => adj
                .iter()
                .map(|nbrs| nbrs.iter().map(|&(_, w)| w).sum())
                .collect(),
        }
    }
}

/// Column-wise bitset view used to count co-occurrences.
struct Columns {
    words: usize,
    bits: Vec<u64>,
    counts: Vec<u64>,
}

impl Columns {
    fn new(ds: &Dataset) -> Self {
        let words = ds.len().div_ceil(64);
        let d = ds.n_features();
        let mut bits = vec![0u64; d * words];
        let mut counts = vec![0u64; d];
        for (r, row) in ds.rows().iter().enumerate() {
            for &j in row {
                bits[j * words + r / 64] |= 1 << (r % 64);
                counts[j] += 1;
            }
        }
        Columns {
            words,
            bits,
            counts,
        }
    }

    fn column(&self, j: usize) -> &[u64] {
        &self.bits[j * self.words..(j + 1) * self.words]
    }

    fn co_occurrences(&self, i: usize, j: usize) -> u64 {
        self.column(i)
            .iter()
            .zip(self.column(j))
            .map(|(a, b)| (a & b).count_ones() as u64)
            .sum()
    }
}

/// One row of |phi| against every other feature.
fn correlation_row(cols: &Columns, n: f64, spread: &[f64], i: usize) -> Vec<f64> {
    let d = spread.len();
    let mut row = vec![0.0; d];
    if spread[i] == 0.0 {
        return row;
    }
    row[i] = 1.0;
    let ci = cols.counts[i] as f64;
    for j in 0..d {
        if j == i || spread[j] == 0.0 {
            continue;
        }
        let n11 = cols.co_occurrences(i, j) as f64;
        let cj = cols.counts[j] as f64;
        let phi = (n * n11 - ci * cj) / (spread[i] * spread[j]).sqrt();
        row[j] = phi.abs().min(1.0);
    }
    row
}

#[cfg(feature = "parallel")]
fn map_rows<F>(d: usize, f: F) -> Vec<Vec<f64>>
where
    F: Fn(usize) -> Vec<f64> + Sync + Send,
{
    use rayon::prelude::*;
    (0..d).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_rows<F>(d: usize, f: F) -> Vec<Vec<f64>>
where
    F: Fn(usize) -> Vec<f64>,
{
    (0..d).map(f).collect()
}

pub fn pairwise_correlation(train: &Dataset) -> CorrelationMatrix {
    pairwise_correlation_with(train, &CorrelationConfig::default())
}

/// Absolute phi coefficient between every pair of features over the rows of
/// `train`. Constant features correlate 0 with everything, themselves included.
pub fn pairwise_correlation_with(train: &Dataset, cfg: &CorrelationConfig) -> CorrelationMatrix {
    let d = train.n_features();
    let n = train.len() as f64;
    let cols = Columns::new(train);
    // c * (n - c) per feature; zero for constant columns
    let spread: Vec<f64> = cols
        .counts
        .iter()
        .map(|&c| c as f64 * (n - c as f64))
        .collect();
    let rows = map_rows(d, |i| correlation_row(&cols, n, &spread, i));

    if d <= cfg.dense_cap {
        return CorrelationMatrix {
            d,
            storage: Storage::Dense(rows.concat()),
        };
    }

    let mut keep: Vec<Vec<bool>> = vec![vec![false; d]; d];
    for (i, row) in rows.iter().enumerate() {
        let mut cand: Vec<usize> = (0..d).filter(|&j| j != i && row[j] > 0.0).collect();
        cand.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        for &j in cand.iter().take(cfg.top_k) {
            keep[i][j] = true;
            keep[j][i] = true;
        }
    }
    let adj = (0..d)
        .map(|i| {
            (0..d)
                .filter(|&j| keep[i][j])
                .map(|j| (j, rows[i][j]))
                .collect()
        })
        .collect();
    CorrelationMatrix {
        d,
        storage: Storage::Sparse(adj),
    }
}

/// The `m` features with the largest aggregate correlation, best first.
/// Ties go to the lower feature index.
pub fn select_primaries(corr: &CorrelationMatrix, m: usize) -> Result<Vec<usize>> {
    if m == 0 || m > corr.d() {
        return Err(Error::config(
            "m",
            format!("number of primaries must lie in [1, {}], got {m}", corr.d()),
        ));
    }
    let scores = corr.aggregate_scores();
    let mut order: Vec<usize> = (0..corr.d()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(m);
    Ok(order)
}

/// Default number of clusters for a `d`-dimensional input: about twenty
/// features per cluster.
pub fn default_m(d: usize) -> usize {
    ((d as f64 / 20.0).round() as usize).max(2).min(d.max(1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub prototype: usize,
    /// Sorted member indices, prototype included.
    pub members: Vec<usize>,
    /// Path cost of each member, aligned with `members`.
    pub costs: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assignment {
    pub cluster: usize,
    pub cost: f64,
}

/// Partition of the features into optimum-path trees.
///
/// Clusters are ordered by ascending prototype index.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureForest {
    clusters: Vec<Cluster>,
    assignment: Vec<Assignment>,
}

#[derive(Serialize, Deserialize)]
struct ForestRepr {
    m: usize,
    clusters: Vec<Cluster>,
}

impl Serialize for FeatureForest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ForestRepr {
            m: self.m(),
            clusters: self.clusters.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for FeatureForest {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let repr = ForestRepr::deserialize(de)?;
        if repr.m != repr.clusters.len() {
            return Err(serde::de::Error::custom(format!(
                "m = {} but {} clusters present",
                repr.m,
                repr.clusters.len()
            )));
        }
        FeatureForest::from_clusters(repr.clusters).map_err(serde::de::Error::custom)
    }
}

impl FeatureForest {
    /// Rebuilds a forest from its clusters, checking the partition invariants.
    pub fn from_clusters(clusters: Vec<Cluster>) -> Result<Self> {
        let d: usize = clusters.iter().map(|c| c.members.len()).sum();
        let mut assignment: Vec<Option<Assignment>> = vec![None; d];
        for (ci, c) in clusters.iter().enumerate() {
            if c.members.len() != c.costs.len() {
                return Err(Error::Shape {
                    expected: c.members.len(),
                    got: c.costs.len(),
                });
            }
            let mut has_proto = false;
            for (&j, &cost) in c.members.iter().zip(&c.costs) {
                if j >= d || assignment[j].is_some() {
                    return Err(Error::config(
                        "clusters",
                        format!("feature {j} missing from or repeated in the partition"),
                    ));
                }
                if !(cost > 0.0 && cost <= 1.0) {
                    return Err(Error::config(
                        "clusters",
                        format!("path cost {cost} of feature {j} outside (0,1]"),
                    ));
                }
                if j == c.prototype {
                    has_proto = true;
                    if cost != 1.0 {
                        return Err(Error::config("clusters", "prototype path cost must be 1"));
                    }
                }
                assignment[j] = Some(Assignment { cluster: ci, cost });
            }
            if !has_proto {
                return Err(Error::config(
                    "clusters",
                    format!(
                        "cluster {ci} does not contain its prototype {}",
                        c.prototype
                    ),
                ));
            }
        }
        Ok(FeatureForest {
            clusters,
            assignment: assignment
                .into_iter()
                .map(|a| a.expect("checked"))
                .collect(),
        })
    }

    pub fn m(&self) -> usize {
        self.clusters.len()
    }

    pub fn d(&self) -> usize {
        self.assignment.len()
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn assignment(&self) -> &[Assignment] {
        &self.assignment
    }

    pub fn cluster_of(&self, feature: usize) -> usize {
        self.assignment[feature].cluster
    }

    pub fn cost_of(&self, feature: usize) -> f64 {
        self.assignment[feature].cost
    }

    pub fn prototypes(&self) -> Vec<usize> {
        self.clusters.iter().map(|c| c.prototype).collect()
    }
}

/// Union-find over non-prototype features. A component remembers the lowest
/// cluster id among prototypes attached to it and the members that have not
/// been assigned yet.
struct Components {
    parent: Vec<usize>,
    min_proto: Vec<Option<usize>>,
    pending: Vec<Vec<usize>>,
}

impl Components {
    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        let (big, small) = if self.pending[ra].len() >= self.pending[rb].len() {
            (ra, rb)
        } else {
            (rb, ra)
        };
        self.parent[small] = big;
        let moved = std::mem::take(&mut self.pending[small]);
        self.pending[big].extend(moved);
        self.min_proto[big] = match (self.min_proto[big], self.min_proto[small]) {
            (Some(x), Some(y)) => Some(x.min(y)),
            (x, y) => x.or(y),
        };
    }

    fn attach(&mut self, node: usize, cluster: usize) {
        let r = self.find(node);
        self.min_proto[r] = Some(self.min_proto[r].map_or(cluster, |c| c.min(cluster)));
    }
}

/// Builds the optimum-path forest rooted at `primaries`.
///
/// Every other feature joins the cluster whose prototype reaches it along the
/// path with the largest minimum edge weight; that bottleneck is its path
/// cost. Paths never pass through a second prototype. Among prototypes
/// achieving the same bottleneck the one with the lowest index wins. Features
/// no prototype reaches go to cluster 0 with cost [`ISOLATED_COST`].
///
/// Edges are processed in decreasing weight order (a maximum spanning forest
/// sweep); a feature is labelled by the first weight level at which its
/// component touches a prototype.
pub fn build_opf(corr: &CorrelationMatrix, primaries: &[usize]) -> Result<FeatureForest> {
    let d = corr.d();
    if primaries.is_empty() {
        return Err(Error::config(
            "primaries",
            "at least one prototype is required",
        ));
    }
    let mut protos = primaries.to_vec();
    protos.sort_unstable();
    if let Some(&bad) = protos.iter().find(|&&p| p >= d) {
        return Err(Error::config(
            "primaries",
            format!("prototype {bad} >= d={d}"),
        ));
    }
    if protos.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::config("primaries", "prototypes must be distinct"));
    }
    let mut proto_cluster = vec![None; d];
    for (c, &p) in protos.iter().enumerate() {
        proto_cluster[p] = Some(c);
    }

    let mut assigned: Vec<Option<Assignment>> = (0..d)
        .map(|j| proto_cluster[j].map(|cluster| Assignment { cluster, cost: 1.0 }))
        .collect();
    let mut comps = Components {
        parent: (0..d).collect(),
        min_proto: vec![None; d],
        pending: (0..d)
            .map(|j| {
                if proto_cluster[j].is_none() {
                    vec![j]
                } else {
                    Vec::new()
                }
            })
            .collect(),
    };

    let mut edges = corr.edges();
    edges.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));

    let mut touched = Vec::new();
    let mut start = 0;
    while start < edges.len() {
        let w = edges[start].2;
        let mut end = start;
        while end < edges.len() && edges[end].2 == w {
            let (u, v, _) = edges[end];
            match (proto_cluster[u], proto_cluster[v]) {
                (Some(_), Some(_)) => {}
                (Some(c), None) => {
                    comps.attach(v, c);
                    touched.push(v);
                }
                (None, Some(c)) => {
                    comps.attach(u, c);
                    touched.push(u);
                }
                (None, None) => {
                    comps.union(u, v);
                    touched.push(u);
                }
            }
            end += 1;
        }
        for node in touched.drain(..) {
            let r = comps.find(node);
            if let Some(cluster) = comps.min_proto[r] {
                for j in std::mem::take(&mut comps.pending[r]) {
                    assigned[j] = Some(Assignment { cluster, cost: w });
                }
            }
        }
        start = end;
    }

    let assignment: Vec<Assignment> = assigned
        .into_iter()
        .map(|a| {
            a.unwrap_or(Assignment {
                cluster: 0,
                cost: ISOLATED_COST,
            })
        })
        .collect();

    let mut clusters: Vec<Cluster> = protos
        .iter()
        .map(|&p| Cluster {
            prototype: p,
            members: Vec::new(),
            costs: Vec::new(),
        })
        .collect();
    for (j, a) in assignment.iter().enumerate() {
        clusters[a.cluster].members.push(j);
        clusters[a.cluster].costs.push(a.cost);
    }
    Ok(FeatureForest {
        clusters,
        assignment,
    })
}
