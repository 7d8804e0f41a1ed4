//! Addition-only evasion attacks in feature space.
//!
//! All attacks only ever switch features on: the adversarial vector is a
//! superset of the original, which is the feature-space image of injecting
//! code without removing functionality.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::classifier::{label_of, Pipeline, Variant};
use crate::corpus::{Label, TransformationLibrary};
use crate::rng;
use crate::transform::{activation_logit, RobustTransform};
use crate::{Error, Result};

/// Black-box access to a detector: a score per active set, nothing else.
pub trait ScoreOracle: Sync {
    fn score(&self, x: &[usize]) -> Result<f64>;

    fn label(&self, x: &[usize]) -> Result<Label> {
        Ok(label_of(self.score(x)?))
    }
}

impl ScoreOracle for Pipeline {
    fn score(&self, x: &[usize]) -> Result<f64> {
        Pipeline::score(self, x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub sample_id: usize,
    pub original: Vec<usize>,
    pub adversarial: Vec<usize>,
    /// Features switched on by the attack, in the order they were added.
    pub added_features: Vec<usize>,
    pub queries_used: usize,
    pub success: bool,
    pub transformations_applied: usize,
    /// Target score before the attack and after every committed step.
    pub score_trace: Vec<f64>,
}

impl AttackResult {
    fn start(sample_id: usize, x: &[usize], score: f64) -> Self {
        AttackResult {
            sample_id,
            original: x.to_vec(),
            adversarial: x.to_vec(),
            added_features: Vec::new(),
            queries_used: 0,
            success: false,
            transformations_applied: 0,
            score_trace: vec![score],
        }
    }

    /// Number of added features.
    pub fn nof(&self) -> usize {
        self.added_features.len()
    }

    /// Adds `features` (already known to be inactive) keeping `adversarial` sorted.
    fn add(&mut self, features: &[usize]) {
        for &j in features {
            if let Err(pos) = self.adversarial.binary_search(&j) {
                self.adversarial.insert(pos, j);
                self.added_features.push(j);
            }
        }
    }

    /// `adversarial` contains every feature of `original`.
    pub fn respects_addition_only(&self) -> bool {
        self.original
            .iter()
            .all(|j| self.adversarial.binary_search(j).is_ok())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackKind {
    /// Feature-level white-box greedy; adaptive over clusters for the robust pipeline.
    Greedy { budget: usize },
    /// White-box greedy over harvested bundles; `budget` counts bundles.
    PkGreedy { budget: usize },
    /// Query-limited random search over harvested bundles.
    EvadeDroid {
        q: usize,
        alpha: f64,
        n_candidates: usize,
    },
}

impl AttackKind {
    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::Greedy { .. } => "greedy",
            AttackKind::PkGreedy { .. } => "pk_greedy",
            AttackKind::EvadeDroid { .. } => "evadedroid",
        }
    }

    pub fn needs_library(&self) -> bool {
        !matches!(self, AttackKind::Greedy { .. })
    }
}

fn require_malware<O: ScoreOracle + ?Sized>(p: &O, x: &[usize]) -> Result<f64> {
    let s = p.score(x)?;
    if label_of(s) != Label::Malware {
        return Err(Error::Precondition(format!(
            "sample is already classified benign (score {s})"
        )));
    }
    Ok(s)
}

/// Greedy single-feature attack on a pipeline that is linear in the raw
/// space (original, Sec-SVM, feature-selection).
///
/// Adds inactive features in order of most negative weight until the sample
/// is classified benign, `budget` features were added, or no negative-weight
/// feature remains.
pub fn greedy_feature_attack(
    p: &Pipeline,
    x: &[usize],
    budget: usize,
    sample_id: usize,
) -> Result<AttackResult> {
    let weights = p.raw_weights().ok_or_else(|| {
        Error::Precondition("greedy feature attack needs a raw-space linear pipeline".into())
    })?;
    let s0 = require_malware(p, x)?;
    let mut res = AttackResult::start(sample_id, x, s0);

    let mut candidates: Vec<usize> = (0..weights.len())
        .filter(|&j| weights[j] < 0.0 && x.binary_search(&j).is_err())
        .collect();
    candidates.sort_by(|&a, &b| weights[a].total_cmp(&weights[b]).then(a.cmp(&b)));

    for j in candidates.into_iter().take(budget) {
        res.add(&[j]);
        let s = p.score(&res.adversarial)?;
        res.score_trace.push(s);
        if label_of(s) == Label::Benign {
            res.success = true;
            break;
        }
    }
    Ok(res)
}

/// Adaptive feature-level attack on the robust pipeline.
///
/// Output clusters are ranked by most negative model weight; for each
/// inactive one the attacker switches on its strongest inactive members until
/// the cluster fires, then re-scores. Clusters that cannot fire even with
/// every member present are skipped. The plan does not depend on `budget`,
/// so a smaller budget always yields a prefix of a larger one.
pub fn adaptive_feature_attack(
    p: &Pipeline,
    x: &[usize],
    budget: usize,
    sample_id: usize,
) -> Result<AttackResult> {
    let t = robust_parts(p)?;
    let w = &p.model().weights;
    let s0 = require_malware(p, x)?;
    let mut res = AttackResult::start(sample_id, x, s0);
    let mut sums = t.cluster_sums(x)?;

    for c in ranked_clusters(w) {
        if t.fires(sums[c]) {
            continue;
        }
        let cluster = &t.forest().clusters()[c];
        let mut members: Vec<(usize, f64)> = cluster
            .members
            .iter()
            .zip(&cluster.costs)
            .filter(|(j, _)| res.adversarial.binary_search(j).is_err())
            .map(|(&j, &w)| (j, w))
            .collect();
        members.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

        let mut needed = Vec::new();
        let mut s = sums[c];
        for &(j, wj) in &members {
            if t.fires(s) {
                break;
            }
            s += wj;
            needed.push(j);
        }
        if !t.fires(s) {
            continue;
        }
        let room = budget - res.nof();
        let take = needed.len().min(room);
        res.add(&needed[..take]);
        if take < needed.len() {
            break;
        }
        sums = t.cluster_sums(&res.adversarial)?;
        if !t.fires(sums[c]) {
            // summation order differed from the plan at the threshold
            continue;
        }
        let score = p.score(&res.adversarial)?;
        res.score_trace.push(score);
        res.transformations_applied += 1;
        if label_of(score) == Label::Benign {
            res.success = true;
            break;
        }
        if res.nof() == budget {
            break;
        }
    }
    Ok(res)
}

fn robust_parts(p: &Pipeline) -> Result<&RobustTransform> {
    p.transform()
        .filter(|_| p.variant() == Variant::Robust)
        .ok_or_else(|| Error::Precondition("adaptive attack needs the robust pipeline".into()))
}

/// Output features with negative weight, most negative first.
fn ranked_clusters(w: &[f64]) -> Vec<usize> {
    let mut ranked: Vec<usize> = (0..w.len()).filter(|&c| w[c] < 0.0).collect();
    ranked.sort_by(|&a, &b| w[a].total_cmp(&w[b]).then(a.cmp(&b)));
    ranked
}

/// Feature-level greedy for any pipeline: plain for linear pipelines,
/// adaptive for the robust one.
pub fn feature_attack(
    p: &Pipeline,
    x: &[usize],
    budget: usize,
    sample_id: usize,
) -> Result<AttackResult> {
    match p.variant() {
        Variant::Robust => adaptive_feature_attack(p, x, budget, sample_id),
        _ => greedy_feature_attack(p, x, budget, sample_id),
    }
}

/// Score change caused by switching on a bundle, computed incrementally.
struct DeltaModel<'a> {
    raw: Option<Vec<f64>>,
    robust: Option<(&'a RobustTransform, &'a [f64])>,
}

impl<'a> DeltaModel<'a> {
    fn new(p: &'a Pipeline) -> Self {
        match p.transform() {
            Some(t) => DeltaModel {
                raw: None,
                robust: Some((t, &p.model().weights)),
            },
            None => DeltaModel {
                raw: p.raw_weights(),
                robust: None,
            },
        }
    }

    fn delta(&self, present: &[usize], sums: &[f64], bundle: &[usize]) -> f64 {
        let new = bundle.iter().filter(|j| present.binary_search(j).is_err());
        if let Some(w) = &self.raw {
            return new.map(|&j| w[j]).sum();
        }
        let (t, w) = self.robust.expect("robust delta model");
        let mut mass: Vec<(usize, f64)> = Vec::new();
        for &j in new {
            let a = t.forest().assignment()[j];
            match mass.iter_mut().find(|(c, _)| *c == a.cluster) {
                Some(entry) => entry.1 += a.cost,
                None => mass.push((a.cluster, a.cost)),
            }
        }
        mass.into_iter()
            .filter(|&(c, m)| !t.fires(sums[c]) && t.fires(sums[c] + m))
            .map(|(c, _)| w[c])
            .sum()
    }
}

fn adds_something(present: &[usize], bundle: &[usize]) -> bool {
    bundle.iter().any(|j| present.binary_search(j).is_err())
}

fn check_library(lib: &TransformationLibrary, d: usize) -> Result<()> {
    if lib.is_empty() {
        return Err(Error::Precondition(
            "transformation library is empty".into(),
        ));
    }
    if lib.n_features != d {
        return Err(Error::Shape {
            expected: d,
            got: lib.n_features,
        });
    }
    Ok(())
}

/// White-box greedy over harvested bundles.
///
/// Linear pipelines: each step applies the unused bundle with the largest
/// score decrease. Robust pipeline: output clusters are ranked by most
/// negative weight and, for the first inactive cluster that admits one, the
/// score-decreasing bundle overlapping it most is applied (ties: larger
/// decrease, then lower bundle index). Stops at a benign prediction, after
/// `budget` bundles, or when no bundle decreases the score.
pub fn pk_greedy_transform_attack(
    p: &Pipeline,
    x: &[usize],
    lib: &TransformationLibrary,
    budget: usize,
    sample_id: usize,
) -> Result<AttackResult> {
    check_library(lib, p.d_raw())?;
    let s0 = require_malware(p, x)?;
    let mut res = AttackResult::start(sample_id, x, s0);
    let model = DeltaModel::new(p);
    let mut used = vec![false; lib.len()];
    let mut current = s0;

    while res.transformations_applied < budget {
        let sums = match p.transform() {
            Some(t) => t.cluster_sums(&res.adversarial)?,
            None => Vec::new(),
        };
        let deltas: Vec<Option<f64>> = lib
            .bundles
            .iter()
            .enumerate()
            .map(|(b, bundle)| {
                (!used[b] && adds_something(&res.adversarial, bundle))
                    .then(|| model.delta(&res.adversarial, &sums, bundle))
                    .filter(|&d| d < 0.0)
            })
            .collect();

        let choice = match p.transform() {
            None => deltas
                .iter()
                .enumerate()
                .filter_map(|(b, d)| d.map(|d| (b, d)))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                .map(|(b, _)| b),
            Some(t) => {
                let active = t.apply(&res.adversarial)?;
                ranked_clusters(&p.model().weights)
                    .into_iter()
                    .filter(|c| active.binary_search(c).is_err())
                    .find_map(|c| {
                        let members = &t.forest().clusters()[c].members;
                        deltas
                            .iter()
                            .enumerate()
                            .filter_map(|(b, d)| {
                                let overlap = lib.bundles[b]
                                    .iter()
                                    .filter(|j| members.binary_search(j).is_ok())
                                    .count();
                                d.filter(|_| overlap > 0).map(|d| (b, overlap, d))
                            })
                            .min_by(|a, b| {
                                b.1.cmp(&a.1).then(a.2.total_cmp(&b.2)).then(a.0.cmp(&b.0))
                            })
                            .map(|(b, _, _)| b)
                    })
            }
        };
        let Some(b) = choice else { break };
        used[b] = true;

        let mut candidate = res.clone();
        candidate.add(&lib.bundles[b]);
        let score = p.score(&candidate.adversarial)?;
        if score >= current {
            // rounding disagreed with the incremental estimate; drop the bundle
            continue;
        }
        res = candidate;
        current = score;
        res.score_trace.push(score);
        res.transformations_applied += 1;
        if label_of(score) == Label::Benign {
            res.success = true;
            break;
        }
    }
    Ok(res)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvadeDroidParams {
    pub q: usize,
    pub alpha: f64,
    pub n_candidates: usize,
}

/// Query-budgeted random search over bundles against an opaque oracle.
///
/// Each round samples up to `n_candidates` unused bundles (never more than
/// the remaining queries), scores each at one query apiece and commits the
/// best strictly score-decreasing one. Bundles that would grow the active
/// count past `(1 + alpha) * |x|` are skipped before querying. The initial
/// malware check is free.
pub fn evadedroid_attack(
    oracle: &dyn ScoreOracle,
    x: &[usize],
    lib: &TransformationLibrary,
    params: &EvadeDroidParams,
    rng: &mut rng::StreamRng,
    sample_id: usize,
) -> Result<AttackResult> {
    if lib.is_empty() {
        return Err(Error::Precondition(
            "transformation library is empty".into(),
        ));
    }
    if params.n_candidates == 0 {
        return Err(Error::config("n_candidates", "must be at least 1"));
    }
    if params.alpha.is_nan() || params.alpha < 0.0 {
        return Err(Error::config(
            "alpha",
            format!("must be non-negative, got {}", params.alpha),
        ));
    }
    let s0 = require_malware(oracle, x)?;
    let mut res = AttackResult::start(sample_id, x, s0);
    let limit = (1.0 + params.alpha) * x.len() as f64;
    let mut used = vec![false; lib.len()];
    let mut current = s0;

    while res.queries_used < params.q {
        let eligible: Vec<usize> = (0..lib.len())
            .filter(|&b| !used[b] && adds_something(&res.adversarial, &lib.bundles[b]))
            .filter(|&b| {
                let new = lib.bundles[b]
                    .iter()
                    .filter(|j| res.adversarial.binary_search(j).is_err())
                    .count();
                (res.adversarial.len() + new) as f64 <= limit
            })
            .collect();
        if eligible.is_empty() {
            break;
        }
        let k = params
            .n_candidates
            .min(params.q - res.queries_used)
            .min(eligible.len());
        let mut best: Option<(usize, f64, Vec<usize>)> = None;
        for pick in index::sample(rng, eligible.len(), k) {
            let b = eligible[pick];
            used[b] = true;
            let mut trial = res.adversarial.clone();
            for &j in &lib.bundles[b] {
                if let Err(pos) = trial.binary_search(&j) {
                    trial.insert(pos, j);
                }
            }
            let s = oracle.score(&trial)?;
            res.queries_used += 1;
            if s < current && best.as_ref().is_none_or(|(_, bs, _)| s < *bs) {
                best = Some((b, s, trial));
            }
        }
        if let Some((b, s, _)) = best {
            res.add(&lib.bundles[b]);
            current = s;
            res.score_trace.push(s);
            res.transformations_applied += 1;
            if label_of(s) == Label::Benign {
                res.success = true;
                break;
            }
        }
    }
    Ok(res)
}

/// Runs one attack of `kind` against `p`. EvadeDroid draws from a stream
/// derived from `(master_seed, sample_id)`.
pub fn run_attack(
    p: &Pipeline,
    x: &[usize],
    sample_id: usize,
    kind: &AttackKind,
    lib: Option<&TransformationLibrary>,
    master_seed: u64,
) -> Result<AttackResult> {
    let lib_or_err = || {
        lib.ok_or_else(|| {
            Error::Precondition(format!("{} needs a transformation library", kind.name()))
        })
    };
    match *kind {
        AttackKind::Greedy { budget } => feature_attack(p, x, budget, sample_id),
        AttackKind::PkGreedy { budget } => {
            pk_greedy_transform_attack(p, x, lib_or_err()?, budget, sample_id)
        }
        AttackKind::EvadeDroid {
            q,
            alpha,
            n_candidates,
        } => {
            let mut rng = rng::stream(master_seed, sample_id as u64);
            let params = EvadeDroidParams {
                q,
                alpha,
                n_candidates,
            };
            evadedroid_attack(p, x, lib_or_err()?, &params, &mut rng, sample_id)
        }
    }
}

/// Attacks every `(sample_id, row)` independently; output order follows input.
pub fn attack_all(
    p: &Pipeline,
    samples: &[(usize, Vec<usize>)],
    kind: &AttackKind,
    lib: Option<&TransformationLibrary>,
    master_seed: u64,
) -> Result<Vec<AttackResult>> {
    let one = |(id, x): &(usize, Vec<usize>)| run_attack(p, x, *id, kind, lib, master_seed);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        samples.par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        samples.iter().map(one).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferOutcome {
    /// Samples detected by the surrogate and every target.
    pub eligible: usize,
    pub surrogate_results: Vec<AttackResult>,
    /// One list per target, re-scored on the surrogate's successful AEs only.
    pub per_target: Vec<Vec<AttackResult>>,
}

/// Crafts AEs on `surrogate` and replays the successful ones on each target
/// without further queries.
pub fn transfer_attack(
    surrogate: &Pipeline,
    targets: &[&Pipeline],
    samples: &[(usize, Vec<usize>)],
    kind: &AttackKind,
    lib: Option<&TransformationLibrary>,
    master_seed: u64,
) -> Result<TransferOutcome> {
    let mut eligible = Vec::new();
    for (id, x) in samples {
        let mut detected = surrogate.predict(x)? == Label::Malware;
        for t in targets {
            detected &= t.predict(x)? == Label::Malware;
        }
        if detected {
            eligible.push((*id, x.clone()));
        }
    }
    if eligible.is_empty() {
        return Err(Error::Precondition(
            "no sample is detected by the surrogate and every target".into(),
        ));
    }
    let surrogate_results = attack_all(surrogate, &eligible, kind, lib, master_seed)?;
    let per_target = targets
        .iter()
        .map(|t| {
            surrogate_results
                .iter()
                .filter(|r| r.success)
                .map(|r| {
                    let score = t.score(&r.adversarial)?;
                    Ok(AttackResult {
                        success: label_of(score) == Label::Benign,
                        score_trace: vec![r.score_trace[0], score],
                        ..r.clone()
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TransferOutcome {
        eligible: eligible.len(),
        surrogate_results,
        per_target,
    })
}

/// Checks the flip bound on a robust-pipeline trace: every output feature
/// that switched on did so through a weighted sum above the activation logit,
/// and none switched off.
pub fn verify_robust_flips(t: &RobustTransform, r: &AttackResult) -> Result<bool> {
    let before = t.apply(&r.original)?;
    let after = t.apply(&r.adversarial)?;
    let sums = t.cluster_sums(&r.adversarial)?;
    let logit = activation_logit(t.theta());
    let no_off = before.iter().all(|c| after.binary_search(c).is_ok());
    let all_strong = after
        .iter()
        .filter(|c| before.binary_search(c).is_err())
        .all(|&c| sums[c] > logit);
    Ok(no_off && all_strong)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{Hyperparams, LinearModel};
    use crate::depgraph::{Cluster, FeatureForest};

    fn linear(weights: Vec<f64>, bias: f64) -> Pipeline {
        let d = weights.len();
        let model = LinearModel {
            weights,
            bias,
            hyperparams: Hyperparams::default(),
            box_bound: None,
        };
        Pipeline::from_parts(Variant::Original, d, None, None, model).unwrap()
    }

    fn lib(d: usize, bundles: Vec<Vec<usize>>) -> TransformationLibrary {
        let provenance = vec![0; bundles.len()];
        TransformationLibrary {
            n_features: d,
            bundles,
            provenance,
        }
    }

    #[test]
    fn greedy_hand_arithmetic() {
        // bias +1: adding feature 0 gives 1 + 1 - 2 = 0 -> still malware
        let p = linear(vec![-2.0, 1.0], 1.0);
        let r = greedy_feature_attack(&p, &[1], 1, 0).unwrap();
        assert!(!r.success);
        assert_eq!(r.added_features, vec![0]);
        assert_eq!(r.score_trace, vec![2.0, 0.0]);
        // bias +0.5: 0.5 + 1 - 2 = -0.5 -> benign with one feature
        let p = linear(vec![-2.0, 1.0], 0.5);
        let r = greedy_feature_attack(&p, &[1], 1, 0).unwrap();
        assert!(r.success);
        assert_eq!(r.nof(), 1);
        assert_eq!(r.score_trace, vec![1.5, -0.5]);
    }

    #[test]
    fn greedy_no_negative_weights() {
        let p = linear(vec![1.0, 0.5, 0.0], 0.5);
        let r = greedy_feature_attack(&p, &[0], 10, 3).unwrap();
        assert!(!r.success);
        assert_eq!(r.nof(), 0);
        assert_eq!(r.adversarial, r.original);
    }

    #[test]
    fn greedy_rejects_benign_input() {
        let p = linear(vec![-1.0], -0.5);
        assert!(matches!(
            greedy_feature_attack(&p, &[], 3, 0),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn bundle_union_counts_features() {
        // bundles of size 5 sharing 2 features -> 8 added
        let mut w = vec![-0.1; 10];
        w[9] = 5.0;
        let p = linear(w, 0.0);
        let l = lib(10, vec![vec![0, 1, 2, 3, 4], vec![3, 4, 5, 6, 7]]);
        let r = pk_greedy_transform_attack(&p, &[9], &l, 5, 0).unwrap();
        assert_eq!(r.transformations_applied, 2);
        assert_eq!(r.nof(), 8);
        assert!(!r.success);
        assert!(r.respects_addition_only());
    }

    fn robust_fixture() -> Pipeline {
        // cluster 0 = {0,1,2}, cluster 1 = {3,4}, cluster 2 = {5,6}
        let forest = FeatureForest::from_clusters(vec![
            Cluster {
                prototype: 0,
                members: vec![0, 1, 2],
                costs: vec![1.0, 0.9, 0.8],
            },
            Cluster {
                prototype: 3,
                members: vec![3, 4],
                costs: vec![1.0, 0.7],
            },
            Cluster {
                prototype: 5,
                members: vec![5, 6],
                costs: vec![1.0, 0.6],
            },
        ])
        .unwrap();
        let t = RobustTransform::new(forest, 0.8).unwrap();
        let model = LinearModel {
            weights: vec![-2.0, 1.5, -0.2],
            bias: 0.5,
            hyperparams: Hyperparams::default(),
            box_bound: None,
        };
        Pipeline::from_parts(Variant::Robust, 7, Some(t), None, model).unwrap()
    }

    #[test]
    fn adaptive_bundle_flips_top_cluster() {
        let p = robust_fixture();
        let x = vec![3, 4];
        assert_eq!(p.score(&x).unwrap(), 2.0);
        // bundle 0 fires cluster 0 (s = 1.9): score 2.0 - 2.0 = 0, still malware
        // bundle 1 overlaps cluster 0 more and also fires cluster 2: -0.2
        let l = lib(7, vec![vec![0, 1], vec![0, 1, 2, 5, 6], vec![5]]);
        let r = pk_greedy_transform_attack(&p, &x, &l, 3, 0).unwrap();
        assert!(r.success);
        assert_eq!(r.transformations_applied, 1);
        assert_eq!(r.adversarial, vec![0, 1, 2, 3, 4, 5, 6]);
        assert!(verify_robust_flips(p.transform().unwrap(), &r).unwrap());
    }

    #[test]
    fn adaptive_bundle_without_overlap_fails() {
        let p = robust_fixture();
        let l = lib(7, vec![vec![3], vec![4]]);
        let r = pk_greedy_transform_attack(&p, &[3, 4], &l, 3, 0).unwrap();
        assert!(!r.success);
        assert_eq!(r.score_trace, vec![2.0]);
    }

    #[test]
    fn adaptive_feature_attack_trace() {
        let p = robust_fixture();
        let r = adaptive_feature_attack(&p, &[3, 4], 10, 0).unwrap();
        // cluster 0 needs members 0 and 1 (s = 1.9 > ln 4); score 2.0 - 2.0 = 0 -> malware,
        // then cluster 2 needs both members: -0.2 -> benign
        assert!(r.success);
        assert_eq!(r.added_features, vec![0, 1, 5, 6]);
        assert_eq!(r.score_trace.len(), 3);
        assert!(verify_robust_flips(p.transform().unwrap(), &r).unwrap());

        let short = adaptive_feature_attack(&p, &[3, 4], 2, 0).unwrap();
        assert!(!short.success);
        assert_eq!(short.added_features, vec![0, 1]);
    }

    struct FlipOracle(Vec<usize>);

    impl ScoreOracle for FlipOracle {
        fn score(&self, x: &[usize]) -> Result<f64> {
            Ok(if x == self.0.as_slice() { 1.0 } else { -1.0 })
        }
    }

    #[test]
    fn evadedroid_benign_oracle_wins_first_round() {
        let x = vec![0, 1, 2, 3];
        let l = lib(10, vec![vec![4], vec![5, 6], vec![7]]);
        let params = EvadeDroidParams {
            q: 10,
            alpha: 0.5,
            n_candidates: 2,
        };
        let r = evadedroid_attack(
            &FlipOracle(x.clone()),
            &x,
            &l,
            &params,
            &mut rng::seeded(1),
            0,
        )
        .unwrap();
        assert!(r.success);
        assert_eq!(r.queries_used, 2);
        assert_eq!(r.transformations_applied, 1);
    }

    #[test]
    fn evadedroid_zero_budget_and_empty_library() {
        let x = vec![0, 1];
        let l = lib(10, vec![vec![4]]);
        let params = EvadeDroidParams {
            q: 0,
            alpha: 0.5,
            n_candidates: 5,
        };
        let r = evadedroid_attack(
            &FlipOracle(x.clone()),
            &x,
            &l,
            &params,
            &mut rng::seeded(1),
            0,
        )
        .unwrap();
        assert!(!r.success);
        assert_eq!(r.queries_used, 0);
        let empty = lib(10, vec![]);
        assert!(evadedroid_attack(
            &FlipOracle(x.clone()),
            &x,
            &empty,
            &params,
            &mut rng::seeded(1),
            0
        )
        .is_err());
    }

    #[test]
    fn evadedroid_size_limit_skips_before_query() {
        // |x| = 2, alpha 0.5 -> at most 3 active features; bundle {4,5} never fits
        let x = vec![0, 1];
        let l = lib(10, vec![vec![4, 5]]);
        let params = EvadeDroidParams {
            q: 10,
            alpha: 0.5,
            n_candidates: 5,
        };
        let r = evadedroid_attack(
            &FlipOracle(x.clone()),
            &x,
            &l,
            &params,
            &mut rng::seeded(1),
            0,
        )
        .unwrap();
        assert_eq!(r.queries_used, 0);
        assert!(!r.success);
    }

    #[test]
    fn transfer_to_itself_is_total() {
        let p = linear(vec![-1.0, -1.0, 2.0, -1.0], 0.5);
        let samples = vec![(0, vec![2]), (1, vec![2, 3])];
        let out = transfer_attack(
            &p,
            &[&p],
            &samples,
            &AttackKind::Greedy { budget: 4 },
            None,
            0,
        )
        .unwrap();
        assert_eq!(out.eligible, 2);
        assert!(!out.per_target[0].is_empty());
        assert!(out.per_target[0].iter().all(|r| r.success));
    }

    #[test]
    fn transfer_without_eligible_samples() {
        let p = linear(vec![-1.0, 2.0], -0.5);
        let samples = vec![(0, vec![0])];
        assert!(transfer_attack(
            &p,
            &[&p],
            &samples,
            &AttackKind::Greedy { budget: 1 },
            None,
            0
        )
        .is_err());
    }
}
