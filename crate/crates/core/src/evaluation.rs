//! Detection and robustness metrics, success-rate curves, the biased-feature
//! probe and the end-to-end experiment.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attacks::{self, AttackKind, AttackResult};
use crate::classifier::{Pipeline, Variant};
use crate::config::{DataSource, ExperimentConfig};
use crate::corpus::{self, Dataset, GroundTruth, Label};
use crate::rng::derive_seed;
use crate::transform::RobustTransform;
use crate::{Error, Result};

/// Directional thresholds checked on the default experiment.
pub const MIN_ROBUST_GAIN_PP: f64 = 20.0;
pub const MAX_CLEAN_GAP_PP: f64 = 5.0;

fn pct(num: usize, den: usize) -> f64 {
    100.0 * num as f64 / den as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CleanMetrics {
    pub accuracy: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

pub fn clean_metrics(p: &Pipeline, test: &Dataset) -> Result<CleanMetrics> {
    let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
    for (row, label) in test.iter() {
        match (label, p.predict(row)?) {
            (Label::Malware, Label::Malware) => tp += 1,
            (Label::Malware, Label::Benign) => fn_ += 1,
            (Label::Benign, Label::Malware) => fp += 1,
            (Label::Benign, Label::Benign) => tn += 1,
        }
    }
    if tp + fn_ == 0 || tn + fp == 0 {
        return Err(Error::config(
            "test",
            "clean metrics need both classes in the test set",
        ));
    }
    Ok(CleanMetrics {
        accuracy: pct(tp + tn, test.len()),
        tpr: pct(tp, tp + fn_),
        fpr: pct(fp, fp + tn),
        tp,
        tn,
        fp,
        fn_,
    })
}

/// Robust accuracy and evasion cost over one AE set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustSummary {
    pub total: usize,
    pub successes: usize,
    pub robust_accuracy: f64,
    /// Mean added features over successful AEs; absent when none succeeded.
    pub mean_nof: Option<f64>,
    pub mean_transformations: Option<f64>,
    pub mean_queries: f64,
    /// Set when `total == 0`; the accuracy is then a placeholder 100.
    pub degenerate: bool,
}

impl RobustSummary {
    pub fn evasion_rate(&self) -> f64 {
        100.0 - self.robust_accuracy
    }
}

pub fn robust_accuracy(results: &[AttackResult]) -> RobustSummary {
    let total = results.len();
    if total == 0 {
        return RobustSummary {
            total: 0,
            successes: 0,
            robust_accuracy: 100.0,
            mean_nof: None,
            mean_transformations: None,
            mean_queries: 0.0,
            degenerate: true,
        };
    }
    let wins: Vec<&AttackResult> = results.iter().filter(|r| r.success).collect();
    let mean = |f: fn(&AttackResult) -> usize| {
        (!wins.is_empty())
            .then(|| wins.iter().map(|r| f(r)).sum::<usize>() as f64 / wins.len() as f64)
    };
    RobustSummary {
        total,
        successes: wins.len(),
        robust_accuracy: pct(total - wins.len(), total),
        mean_nof: mean(AttackResult::nof),
        mean_transformations: mean(|r| r.transformations_applied),
        mean_queries: results.iter().map(|r| r.queries_used).sum::<usize>() as f64 / total as f64,
        degenerate: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub budget: usize,
    pub success_rate: f64,
}

/// Evasion success rate of the feature-level greedy attack at each budget.
/// One attack per sample at the largest budget gives the whole curve, since a
/// smaller budget always runs a prefix of the same plan.
pub fn success_curve(
    p: &Pipeline,
    samples: &[(usize, Vec<usize>)],
    budgets: &[usize],
) -> Result<Vec<CurvePoint>> {
    if budgets.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::config("budgets", "must be sorted ascending"));
    }
    let max = budgets.last().copied().unwrap_or(0);
    let runs = attacks::attack_all(p, samples, &AttackKind::Greedy { budget: max }, None, 0)?;
    Ok(curve_from_runs(&runs, budgets))
}

pub fn curve_from_runs(runs: &[AttackResult], budgets: &[usize]) -> Vec<CurvePoint> {
    budgets
        .iter()
        .map(|&k| {
            let hits = runs.iter().filter(|r| r.success && r.nof() <= k).count();
            CurvePoint {
                budget: k,
                success_rate: if runs.is_empty() {
                    0.0
                } else {
                    pct(hits, runs.len())
                },
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeEntry {
    pub pipeline: String,
    pub detection_before: f64,
    pub detection_after: f64,
    pub drop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasProbeReport {
    pub probed_feature: usize,
    pub feature_name: Option<String>,
    pub benign_prevalence: f64,
    pub malware_prevalence: f64,
    pub weight_in_original: f64,
    pub n_samples: usize,
    pub n_modified: usize,
    pub pipelines: Vec<ProbeEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ProbeOutcome {
    Applied(BiasProbeReport),
    Inapplicable { reason: String },
}

/// Finds the benign-prevalent, malware-rare feature with the most negative
/// weight in `original`, adds it to every test malware sample lacking it and
/// reports each pipeline's detection rate before and after.
pub fn bias_probe(
    original: &Pipeline,
    pipelines: &[(String, &Pipeline)],
    train: &Dataset,
    malware: &[Vec<usize>],
) -> Result<ProbeOutcome> {
    let Some(weights) = original.raw_weights() else {
        return Err(Error::config(
            "original",
            "probe needs a raw-space linear pipeline",
        ));
    };
    let benign_prev = train.prevalence(Label::Benign);
    let malware_prev = train.prevalence(Label::Malware);
    let qualifies = |j: usize| {
        weights[j] < 0.0
            && benign_prev[j] > 0.5
            && malware_prev[j] < 0.5
            && malware.iter().any(|r| r.binary_search(&j).is_err())
    };
    let pick = (0..weights.len())
        .filter(|&j| qualifies(j))
        .min_by(|&a, &b| weights[a].total_cmp(&weights[b]).then(a.cmp(&b)));
    let Some(j) = pick else {
        return Ok(ProbeOutcome::Inapplicable {
            reason: "no negative-weight feature is benign-prevalent, malware-rare and absent from a test malware sample"
                .into(),
        });
    };

    let modified: Vec<Vec<usize>> = malware
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if let Err(pos) = r.binary_search(&j) {
                r.insert(pos, j);
            }
            r
        })
        .collect();
    let detection = |p: &Pipeline, rows: &[Vec<usize>]| -> Result<f64> {
        let hits = rows
            .iter()
            .map(|r| p.predict(r))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .filter(|&l| l == Label::Malware)
            .count();
        Ok(pct(hits, rows.len().max(1)))
    };
    let entries = pipelines
        .iter()
        .map(|(name, p)| {
            let before = detection(p, malware)?;
            let after = detection(p, &modified)?;
            Ok(ProbeEntry {
                pipeline: name.clone(),
                detection_before: before,
                detection_after: after,
                drop: before - after,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProbeOutcome::Applied(BiasProbeReport {
        probed_feature: j,
        feature_name: train.feature_names().and_then(|n| n.get(&j).cloned()),
        benign_prevalence: 100.0 * benign_prev[j],
        malware_prevalence: 100.0 * malware_prev[j],
        weight_in_original: weights[j],
        n_samples: malware.len(),
        n_modified: malware
            .iter()
            .filter(|r| r.binary_search(&j).is_err())
            .count(),
        pipelines: entries,
    }))
}

/// Per-pipeline report; timings live in [`Timings`] so that this payload is
/// reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub pipeline: String,
    pub clean: CleanMetrics,
    pub eligible_sample_count: usize,
    /// Direct attacks keyed by attack name.
    pub direct: BTreeMap<String, RobustSummary>,
    /// Transfer attacks from the original pipeline, keyed by attack name.
    pub transfer: BTreeMap<String, RobustSummary>,
    pub curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferSummary {
    pub attack: String,
    pub eligible: usize,
    pub surrogate_successes: usize,
    /// Robust accuracy is computed only over AEs that fooled the surrogate.
    pub note: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub transform_fit_seconds: f64,
    pub training_seconds: BTreeMap<String, f64>,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionalChecks {
    pub robust_gain_pp: f64,
    pub clean_gap_pp: f64,
    pub curve_below_original: bool,
    pub probe_drop_original: Option<f64>,
    pub probe_drop_robust: Option<f64>,
    pub nof_original: Option<f64>,
    pub nof_robust: Option<f64>,
    /// `max|w| / median|w|` of the unconstrained and boxed linear models.
    pub uniformity_original: f64,
    pub uniformity_sec_svm: f64,
    pub min_robust_gain_pp: f64,
    pub max_clean_gap_pp: f64,
}

impl DirectionalChecks {
    pub fn robust_gain_ok(&self) -> bool {
        self.robust_gain_pp >= self.min_robust_gain_pp && self.clean_gap_pp <= self.max_clean_gap_pp
    }

    pub fn probe_ok(&self) -> bool {
        matches!((self.probe_drop_original, self.probe_drop_robust), (Some(o), Some(r)) if o > r)
    }

    pub fn nof_ok(&self) -> bool {
        matches!((self.nof_original, self.nof_robust), (Some(o), Some(r)) if r > o)
    }

    pub fn uniformity_ok(&self) -> bool {
        self.uniformity_sec_svm < self.uniformity_original
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub files: Vec<String>,
    pub checks: DirectionalChecks,
}

/// Everything one experiment produced, kept in memory for inspection.
pub struct ExperimentOutput {
    pub metrics: Vec<MetricsReport>,
    pub transfer: Vec<TransferSummary>,
    pub probe: ProbeOutcome,
    pub checks: DirectionalChecks,
    pub timings: Timings,
    pub pipelines: Vec<Pipeline>,
    pub train: Dataset,
    pub test: Dataset,
    pub ground_truth: Option<GroundTruth>,
    /// Attacked samples (detected by every pipeline).
    pub eligible: Vec<(usize, Vec<usize>)>,
    /// Direct attack results keyed by (pipeline, attack).
    pub direct_results: BTreeMap<(String, String), Vec<AttackResult>>,
    /// Transfer results keyed by (target pipeline, attack).
    pub transfer_results: BTreeMap<(String, String), Vec<AttackResult>>,
    pub config: ExperimentConfig,
}

impl ExperimentOutput {
    pub fn metrics_for(&self, v: Variant) -> &MetricsReport {
        self.metrics
            .iter()
            .find(|m| m.pipeline == v.name())
            .expect("every variant is reported")
    }

    pub fn pipeline(&self, v: Variant) -> &Pipeline {
        self.pipelines
            .iter()
            .find(|p| p.variant() == v)
            .expect("every variant is trained")
    }

    pub fn metrics_json(&self) -> String {
        serde_json::to_string_pretty(&self.metrics).expect("metrics serialize") + "\n"
    }

    pub fn curve_csv(&self) -> String {
        let mut out = String::from("budget,pipeline,success_rate\n");
        for m in &self.metrics {
            for pt in &m.curve {
                let _ = writeln!(out, "{},{},{}", pt.budget, m.pipeline, pt.success_rate);
            }
        }
        out
    }
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Option<GroundTruth>)> {
    match &cfg.data {
        DataSource::Synthetic(spec) => {
            let (ds, truth) = corpus::generate_synthetic(spec)?;
            Ok((ds, Some(truth)))
        }
        DataSource::File {
            path,
            format,
            n_features,
        } => Ok((Dataset::load(path, *format, *n_features)?, None)),
    }
}

/// Runs the full protocol in memory: split, fit the transform on the training
/// split, train the four detectors, attack the samples every detector catches
/// (direct and transferred from the original detector), then the curve and
/// the bias probe.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let started = Instant::now();
    stage("config", cfg.validate())?;
    let seed = cfg.master_seed;
    let (ds, ground_truth) = stage("data", load_data(cfg))?;
    let (train, test) = stage(
        "split",
        corpus::split(&ds, cfg.split.train_fraction, cfg.split.seed),
    )?;

    let mut timings = Timings::default();
    let t0 = Instant::now();
    let transform = stage(
        "fit-transform",
        RobustTransform::fit(&train, cfg.transform.m, cfg.transform.theta),
    )?;
    timings.transform_fit_seconds = t0.elapsed().as_secs_f64();

    let hp = |tag: u64| cfg.classifier.hyperparams(derive_seed(seed, tag));
    let mut pipelines = Vec::new();
    for v in Variant::ALL {
        let t0 = Instant::now();
        let p = match v {
            Variant::Original => Pipeline::original(&train, &hp(1)),
            Variant::SecSvm => Pipeline::sec_svm(&train, &hp(2), cfg.classifier.sec_svm_box),
            Variant::FeatureSelect => {
                Pipeline::feature_select(&train, cfg.classifier.feature_select_k, &hp(3))
            }
            Variant::Robust => Pipeline::robust(&train, transform.clone(), &hp(4)),
        };
        let p = stage(&format!("train {v}"), p)?;
        timings
            .training_seconds
            .insert(v.name().to_string(), t0.elapsed().as_secs_f64());
        pipelines.push(p);
    }

    let clean: Vec<CleanMetrics> = stage(
        "clean-metrics",
        pipelines.iter().map(|p| clean_metrics(p, &test)).collect(),
    )?;

    let mut eligible = Vec::new();
    for i in test.indices_of(Label::Malware) {
        let row = test.row(i);
        let caught = pipelines
            .iter()
            .map(|p| p.predict(row))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .all(|l| l == Label::Malware);
        if caught {
            eligible.push((i, row.to_vec()));
        }
    }
    if cfg.attacks.max_samples > 0 {
        eligible.truncate(cfg.attacks.max_samples);
    }
    if eligible.is_empty() {
        return Err(
            Error::Precondition("no test malware is detected by every pipeline".into())
                .in_stage("eligibility"),
        );
    }

    let a = &cfg.attacks;
    let lib = stage(
        "harvest",
        corpus::harvest_transformations(
            &train,
            a.library_size,
            a.bundle_size_range,
            derive_seed(seed, 10),
        ),
    )?;
    let curve_budget = a.budgets.last().copied().unwrap_or(0).max(a.greedy_budget);
    let kinds = [
        AttackKind::Greedy {
            budget: curve_budget,
        },
        AttackKind::PkGreedy {
            budget: a.pk_bundle_budget,
        },
        AttackKind::EvadeDroid {
            q: a.q,
            alpha: a.alpha,
            n_candidates: a.n_candidates,
        },
    ];

    let mut direct_results = BTreeMap::new();
    let mut metrics = Vec::new();
    for (p, clean) in pipelines.iter().zip(&clean) {
        let mut direct = BTreeMap::new();
        let mut curve = Vec::new();
        for kind in &kinds {
            let runs = stage(
                &format!("attack {} on {}", kind.name(), p.variant()),
                attacks::attack_all(p, &eligible, kind, Some(&lib), derive_seed(seed, 20)),
            )?;
            let summary = if let AttackKind::Greedy { .. } = kind {
                curve = curve_from_runs(&runs, &a.budgets);
                // the headline greedy number is the prefix at the configured budget
                let capped: Vec<AttackResult> = runs
                    .iter()
                    .map(|r| truncate_greedy(r, a.greedy_budget))
                    .collect();
                robust_accuracy(&capped)
            } else {
                robust_accuracy(&runs)
            };
            direct.insert(kind.name().to_string(), summary);
            direct_results.insert(
                (p.variant().name().to_string(), kind.name().to_string()),
                runs,
            );
        }
        metrics.push(MetricsReport {
            pipeline: p.variant().name().to_string(),
            clean: *clean,
            eligible_sample_count: eligible.len(),
            direct,
            transfer: BTreeMap::new(),
            curve,
        });
    }

    let surrogate = &pipelines[0];
    let targets: Vec<&Pipeline> = pipelines.iter().collect();
    let mut transfer = Vec::new();
    let mut transfer_results = BTreeMap::new();
    for kind in &kinds[1..] {
        let out = stage(
            &format!("transfer {}", kind.name()),
            attacks::transfer_attack(
                surrogate,
                &targets,
                &eligible,
                kind,
                Some(&lib),
                derive_seed(seed, 30),
            ),
        )?;
        transfer.push(TransferSummary {
            attack: kind.name().to_string(),
            eligible: out.eligible,
            surrogate_successes: out.surrogate_results.iter().filter(|r| r.success).count(),
            note: "robust accuracy over AEs that evaded the original detector".into(),
        });
        for (m, results) in metrics.iter_mut().zip(out.per_target) {
            m.transfer
                .insert(kind.name().to_string(), robust_accuracy(&results));
            transfer_results.insert((m.pipeline.clone(), kind.name().to_string()), results);
        }
    }

    let malware_rows: Vec<Vec<usize>> = test
        .indices_of(Label::Malware)
        .into_iter()
        .map(|i| test.row(i).to_vec())
        .collect();
    let named: Vec<(String, &Pipeline)> = pipelines
        .iter()
        .map(|p| (p.variant().name().to_string(), p))
        .collect();
    let probe = stage(
        "probe",
        bias_probe(surrogate, &named, &train, &malware_rows),
    )?;

    let checks = directional_checks(&metrics, &pipelines, &probe);
    timings.total_seconds = started.elapsed().as_secs_f64();
    Ok(ExperimentOutput {
        metrics,
        transfer,
        probe,
        checks,
        timings,
        pipelines,
        train,
        test,
        ground_truth,
        eligible,
        direct_results,
        transfer_results,
        config: cfg.clone(),
    })
}

/// The result the greedy attack would have returned with a smaller budget.
pub fn truncate_greedy(r: &AttackResult, budget: usize) -> AttackResult {
    if r.nof() <= budget {
        return r.clone();
    }
    let kept = &r.added_features[..budget];
    let mut adversarial = r.original.clone();
    adversarial.extend_from_slice(kept);
    adversarial.sort_unstable();
    AttackResult {
        adversarial,
        added_features: kept.to_vec(),
        success: false,
        ..r.clone()
    }
}

fn directional_checks(
    metrics: &[MetricsReport],
    pipelines: &[Pipeline],
    probe: &ProbeOutcome,
) -> DirectionalChecks {
    let uniformity = |v: Variant| {
        pipelines
            .iter()
            .find(|p| p.variant() == v)
            .expect("variant")
            .model()
            .uniformity_ratio()
    };
    let get = |v: Variant| {
        metrics
            .iter()
            .find(|m| m.pipeline == v.name())
            .expect("variant")
    };
    let orig = get(Variant::Original);
    let rob = get(Variant::Robust);
    let greedy = |m: &MetricsReport| m.direct["greedy"].clone();
    let drop = |name: &str| match probe {
        ProbeOutcome::Applied(r) => r
            .pipelines
            .iter()
            .find(|e| e.pipeline == name)
            .map(|e| e.drop),
        ProbeOutcome::Inapplicable { .. } => None,
    };
    DirectionalChecks {
        robust_gain_pp: greedy(rob).robust_accuracy - greedy(orig).robust_accuracy,
        clean_gap_pp: (rob.clean.accuracy - orig.clean.accuracy).abs(),
        curve_below_original: rob
            .curve
            .iter()
            .zip(&orig.curve)
            .all(|(r, o)| r.success_rate <= o.success_rate),
        probe_drop_original: drop(Variant::Original.name()),
        probe_drop_robust: drop(Variant::Robust.name()),
        nof_original: greedy(orig).mean_nof,
        nof_robust: greedy(rob).mean_nof,
        uniformity_original: uniformity(Variant::Original),
        uniformity_sec_svm: uniformity(Variant::SecSvm),
        min_robust_gain_pp: MIN_ROBUST_GAIN_PP,
        max_clean_gap_pp: MAX_CLEAN_GAP_PP,
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs the experiment and writes every artifact under `out_dir`.
pub fn run_experiment_to(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentOutput> {
    let out = run_experiment(cfg)?;
    write_artifacts(&out, out_dir).map_err(|e| e.in_stage("write"))?;
    Ok(out)
}

pub fn write_artifacts(out: &ExperimentOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir.join("attacks")).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    let mut put = |name: &str, text: &str| -> Result<()> {
        write(&dir.join(name), text)?;
        files.push(name.to_string());
        Ok(())
    };
    put("metrics.json", &out.metrics_json())?;
    put("curve.csv", &out.curve_csv())?;
    put(
        "transfer.json",
        &(serde_json::to_string_pretty(&out.transfer)? + "\n"),
    )?;
    put(
        "probe.json",
        &(serde_json::to_string_pretty(&out.probe)? + "\n"),
    )?;
    put(
        "timings.json",
        &(serde_json::to_string_pretty(&out.timings)? + "\n"),
    )?;
    put("config.toml", &out.config.to_toml())?;
    if let Some(truth) = &out.ground_truth {
        put(
            "ground_truth.json",
            &(serde_json::to_string_pretty(truth)? + "\n"),
        )?;
    }
    for p in &out.pipelines {
        put(&format!("pipeline_{}.json", p.variant()), &p.to_json()?)?;
    }
    for ((pipeline, attack), results) in &out.direct_results {
        put(
            &format!("attacks/{pipeline}_{attack}.jsonl"),
            &results_jsonl(results)?,
        )?;
    }
    for ((pipeline, attack), results) in &out.transfer_results {
        put(
            &format!("attacks/transfer_{pipeline}_{attack}.jsonl"),
            &results_jsonl(results)?,
        )?;
    }

    // H-space matrices of attacked malware and of the greedy AEs against the robust detector
    let robust = out.pipeline(Variant::Robust);
    let t = robust.transform().expect("robust pipeline has a transform");
    let malware = Dataset::new(
        t.d_in(),
        out.eligible.iter().map(|(_, r)| r.clone()).collect(),
        vec![Label::Malware; out.eligible.len()],
    )?;
    put("h_malware.txt", &t.apply_batch(&malware)?.to_sparse_text())?;
    let aes: Vec<Vec<usize>> = out.direct_results[&("robust".to_string(), "greedy".to_string())]
        .iter()
        .map(|r| r.adversarial.clone())
        .collect();
    let n = aes.len();
    let aes = Dataset::new(t.d_in(), aes, vec![Label::Malware; n])?;
    put("h_adversarial.txt", &t.apply_batch(&aes)?.to_sparse_text())?;

    files.push("manifest.json".into());
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: out.config.hash(),
        master_seed: out.config.master_seed,
        files,
        checks: out.checks.clone(),
    };
    write(
        &dir.join("manifest.json"),
        &(serde_json::to_string_pretty(&manifest)? + "\n"),
    )
}

pub fn results_jsonl(results: &[AttackResult]) -> Result<String> {
    let mut out = String::new();
    for r in results {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{Hyperparams, LinearModel};

    fn fixed(weights: Vec<f64>, bias: f64) -> Pipeline {
        let d = weights.len();
        let model = LinearModel {
            weights,
            bias,
            hyperparams: Hyperparams::default(),
            box_bound: None,
        };
        Pipeline::from_parts(Variant::Original, d, None, None, model).unwrap()
    }

    fn result(success: bool, nof: usize) -> AttackResult {
        AttackResult {
            sample_id: 0,
            original: vec![],
            adversarial: (0..nof).collect(),
            added_features: (0..nof).collect(),
            queries_used: 0,
            success,
            transformations_applied: 1,
            score_trace: vec![1.0],
        }
    }

    #[test]
    fn perfect_predictor() {
        let p = fixed(vec![2.0, -2.0], -1.0);
        let ds = Dataset::new(
            2,
            vec![vec![0], vec![1], vec![0], vec![]],
            vec![Label::Malware, Label::Benign, Label::Malware, Label::Benign],
        )
        .unwrap();
        let m = clean_metrics(&p, &ds).unwrap();
        assert_eq!((m.accuracy, m.tpr, m.fpr), (100.0, 100.0, 0.0));
    }

    #[test]
    fn constant_benign_predictor() {
        let p = fixed(vec![0.0], -1.0);
        let labels: Vec<Label> = (0..30_000)
            .map(|i| {
                if i < 25_000 {
                    Label::Benign
                } else {
                    Label::Malware
                }
            })
            .collect();
        let ds = Dataset::new(1, vec![vec![]; 30_000], labels).unwrap();
        let m = clean_metrics(&p, &ds).unwrap();
        assert!((m.accuracy - 83.333).abs() < 1e-3);
        assert_eq!((m.tpr, m.fpr), (0.0, 0.0));
        assert_eq!(m.tp + m.tn, m.tn);
        let one_class = Dataset::new(1, vec![vec![]], vec![Label::Benign]).unwrap();
        assert!(clean_metrics(&p, &one_class).is_err());
    }

    #[test]
    fn robust_accuracy_examples() {
        let s = robust_accuracy(&[result(true, 5), result(false, 3), result(false, 0)]);
        assert!((s.robust_accuracy - 66.666_666).abs() < 1e-3);
        assert_eq!(s.mean_nof, Some(5.0));
        let s = robust_accuracy(&[result(false, 2), result(false, 1)]);
        assert_eq!(s.robust_accuracy, 100.0);
        assert_eq!(s.mean_nof, None);
        let s = robust_accuracy(&[]);
        assert!(s.degenerate);
        assert_eq!(s.robust_accuracy, 100.0);
    }

    #[test]
    fn curve_prefix_semantics() {
        let runs = vec![result(true, 2), result(true, 5), result(false, 7)];
        let c = curve_from_runs(&runs, &[0, 2, 4, 5, 10]);
        let rates: Vec<f64> = c.iter().map(|p| p.success_rate).collect();
        assert_eq!(rates[0], 0.0);
        assert!((rates[1] - 100.0 / 3.0).abs() < 1e-9);
        assert!((rates[3] - 200.0 / 3.0).abs() < 1e-9);
        assert!(rates.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn curve_rejects_unsorted_budgets() {
        let p = fixed(vec![-1.0, 2.0], 0.0);
        assert!(success_curve(&p, &[(0, vec![1])], &[3, 1]).is_err());
    }

    #[test]
    fn probe_picks_most_negative_qualifier() {
        // feature 0: benign 3/4, malware 0/2, weight -2; feature 1: weight -3 but malware-prevalent
        let train = Dataset::new(
            3,
            vec![vec![0], vec![0], vec![0, 1], vec![], vec![1, 2], vec![1, 2]],
            vec![
                Label::Benign,
                Label::Benign,
                Label::Benign,
                Label::Benign,
                Label::Malware,
                Label::Malware,
            ],
        )
        .unwrap();
        let p = fixed(vec![-2.0, -3.0, 1.5], 0.0);
        let malware = vec![vec![2], vec![2]];
        let ProbeOutcome::Applied(r) =
            bias_probe(&p, &[("original".into(), &p)], &train, &malware).unwrap()
        else {
            panic!("probe should apply");
        };
        assert_eq!(r.probed_feature, 0);
        assert_eq!(r.n_modified, 2);
        assert_eq!(r.pipelines[0].detection_before, 100.0);
        assert_eq!(r.pipelines[0].detection_after, 0.0);

        let positive = fixed(vec![1.0, 1.0, 1.0], 0.0);
        assert!(matches!(
            bias_probe(&positive, &[], &train, &malware).unwrap(),
            ProbeOutcome::Inapplicable { .. }
        ));
    }

    #[test]
    fn truncation_is_a_prefix() {
        let r = AttackResult {
            sample_id: 1,
            original: vec![5],
            adversarial: vec![1, 2, 3, 5],
            added_features: vec![3, 1, 2],
            queries_used: 0,
            success: true,
            transformations_applied: 3,
            score_trace: vec![1.0, 0.5, 0.2, -0.1],
        };
        let t = truncate_greedy(&r, 2);
        assert!(!t.success);
        assert_eq!(t.adversarial, vec![1, 3, 5]);
        assert_eq!(truncate_greedy(&r, 3), r);
    }
}
