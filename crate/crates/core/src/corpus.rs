//! Binary sample matrices, their on-disk formats, the planted-structure
//! generator and harvesting of benign feature bundles.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Benign,
    Malware,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        match self {
            Label::Benign => 0,
            Label::Malware => 1,
        }
    }

    /// +1 for malware, -1 for benign.
    pub fn sign(self) -> f64 {
        match self {
            Label::Benign => -1.0,
            Label::Malware => 1.0,
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l.as_u8()
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Label::Benign),
            1 => Ok(Label::Malware),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetFormat {
    SparseText,
    Jsonl,
}

impl std::str::FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sparse-text" | "sparse" | "txt" => Ok(DatasetFormat::SparseText),
            "jsonl" => Ok(DatasetFormat::Jsonl),
            other => Err(Error::config(
                "format",
                format!("unknown dataset format `{other}` (expected sparse-text or jsonl)"),
            )),
        }
    }
}

/// Sparse binary sample matrix. Each row is the strictly increasing list of
/// active feature indices of one sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    n_features: usize,
    rows: Vec<Vec<usize>>,
    labels: Vec<Label>,
    feature_names: Option<BTreeMap<usize, String>>,
}

impl Dataset {
    /// Builds a dataset, sorting and deduplicating every row.
    pub fn new(n_features: usize, mut rows: Vec<Vec<usize>>, labels: Vec<Label>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::Shape {
                expected: rows.len(),
                got: labels.len(),
            });
        }
        for (i, row) in rows.iter_mut().enumerate() {
            row.sort_unstable();
            row.dedup();
            if let Some(&last) = row.last() {
                if last >= n_features {
                    return Err(Error::Bounds {
                        line: i + 1,
                        index: last,
                        dim: n_features,
                    });
                }
            }
        }
        Ok(Dataset {
            n_features,
            rows,
            labels,
            feature_names: None,
        })
    }

    pub fn empty(n_features: usize) -> Self {
        Dataset {
            n_features,
            rows: Vec::new(),
            labels: Vec::new(),
            feature_names: None,
        }
    }

    pub fn with_feature_names(mut self, names: BTreeMap<usize, String>) -> Self {
        self.feature_names = Some(names);
        self
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.rows[i]
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> Label {
        self.labels[i]
    }

    pub fn feature_names(&self) -> Option<&BTreeMap<usize, String>> {
        self.feature_names.as_ref()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[usize], Label)> + '_ {
        self.rows
            .iter()
            .map(Vec::as_slice)
            .zip(self.labels.iter().copied())
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Indices of the samples carrying `label`, in dataset order.
    pub fn indices_of(&self, label: Label) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.labels[i] == label)
            .collect()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            n_features: self.n_features,
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Fraction of `label` samples in which each feature is active.
    pub fn prevalence(&self, label: Label) -> Vec<f64> {
        let mut counts = vec![0usize; self.n_features];
        let mut n = 0usize;
        for (row, l) in self.iter() {
            if l == label {
                n += 1;
                for &j in row {
                    counts[j] += 1;
                }
            }
        }
        counts
            .into_iter()
            .map(|c| if n == 0 { 0.0 } else { c as f64 / n as f64 })
            .collect()
    }

    pub fn to_sparse_text(&self) -> String {
        let mut out = String::with_capacity(self.rows.len() * 64);
        let _ = writeln!(out, "#d={}", self.n_features);
        for (row, label) in self.iter() {
            out.push_str(if label == Label::Malware { "1" } else { "0" });
            for j in row {
                let _ = write!(out, " {j}:1");
            }
            out.push('\n');
        }
        out
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (row, label) in self.iter() {
            let line = serde_json::json!({ "label": label.as_u8(), "features": row });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out
    }

    pub fn parse_sparse_text(text: &str) -> Result<Self> {
        let mut n_features = None;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line_no = lineno + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if n_features.is_none() {
                    let value = rest.trim().strip_prefix("d=").ok_or_else(|| Error::Parse {
                        line: line_no,
                        reason: "header must be `#d=<n_features>`".into(),
                    })?;
                    n_features = Some(value.trim().parse::<usize>().map_err(|e| Error::Parse {
                        line: line_no,
                        reason: format!("bad feature count `{value}`: {e}"),
                    })?);
                }
                continue;
            }
            let d = n_features.ok_or_else(|| Error::Parse {
                line: line_no,
                reason: "missing `#d=<n_features>` header".into(),
            })?;
            let mut tokens = line.split_whitespace();
            let label = parse_label(tokens.next().unwrap_or_default(), line_no)?;
            let mut row = Vec::new();
            for tok in tokens {
                let (idx, val) = tok.split_once(':').ok_or_else(|| Error::Parse {
                    line: line_no,
                    reason: format!("expected `<idx>:1`, got `{tok}`"),
                })?;
                let idx: usize = idx.parse().map_err(|_| Error::Parse {
                    line: line_no,
                    reason: format!("bad feature index `{idx}`"),
                })?;
                let val: f64 = val.parse().map_err(|_| Error::Parse {
                    line: line_no,
                    reason: format!("bad feature value `{val}`"),
                })?;
                if val == 0.0 {
                    continue;
                }
                if val != 1.0 {
                    return Err(Error::Parse {
                        line: line_no,
                        reason: format!("binary features only, got value {val}"),
                    });
                }
                if idx >= d {
                    return Err(Error::Bounds {
                        line: line_no,
                        index: idx,
                        dim: d,
                    });
                }
                row.push(idx);
            }
            rows.push(row);
            labels.push(label);
        }
        let d = n_features.ok_or_else(|| Error::Parse {
            line: 1,
            reason: "missing `#d=<n_features>` header".into(),
        })?;
        Dataset::new(d, rows, labels)
    }

    pub fn parse_jsonl(text: &str, n_features: usize) -> Result<Self> {
        #[derive(Deserialize)]
        struct Line {
            label: u8,
            features: Vec<usize>,
        }
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line_no = lineno + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(raw).map_err(|e| Error::Parse {
                line: line_no,
                reason: e.to_string(),
            })?;
            let label = Label::try_from(parsed.label).map_err(|reason| Error::Parse {
                line: line_no,
                reason,
            })?;
            if let Some(&bad) = parsed.features.iter().find(|&&j| j >= n_features) {
                return Err(Error::Bounds {
                    line: line_no,
                    index: bad,
                    dim: n_features,
                });
            }
            rows.push(parsed.features);
            labels.push(label);
        }
        Dataset::new(n_features, rows, labels)
    }

    /// Loads a dataset. `n_features` is required for jsonl and ignored for
    /// sparse-text, whose header carries the dimension.
    pub fn load(path: &Path, format: DatasetFormat, n_features: Option<usize>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        match format {
            DatasetFormat::SparseText => Self::parse_sparse_text(&text),
            DatasetFormat::Jsonl => {
                let d = n_features.ok_or_else(|| {
                    Error::config("n_features", "jsonl datasets need the feature count (-d)")
                })?;
                Self::parse_jsonl(&text, d)
            }
        }
    }

    pub fn save(&self, path: &Path, format: DatasetFormat) -> Result<()> {
        let text = match format {
            DatasetFormat::SparseText => self.to_sparse_text(),
            DatasetFormat::Jsonl => self.to_jsonl(),
        };
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn parse_label(tok: &str, line: usize) -> Result<Label> {
    match tok {
        "0" => Ok(Label::Benign),
        "1" => Ok(Label::Malware),
        other => Err(Error::Parse {
            line,
            reason: format!("label must be 0 or 1, got `{other}`"),
        }),
    }
}

/// Reads a `<idx>\t<name>` feature dictionary.
pub fn load_feature_names(path: &Path) -> Result<BTreeMap<usize, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut names = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (idx, name) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: lineno + 1,
            reason: "expected `<idx>\\t<name>`".into(),
        })?;
        let idx = idx.trim().parse().map_err(|_| Error::Parse {
            line: lineno + 1,
            reason: format!("bad feature index `{idx}`"),
        })?;
        names.insert(idx, name.to_string());
    }
    Ok(names)
}

pub fn save_feature_names(names: &BTreeMap<usize, String>, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (idx, name) in names {
        let _ = writeln!(out, "{idx}\t{name}");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Parameters of the planted-structure generator.
///
/// Malware rows switch on malware-behavior bundles, benign rows switch on
/// benign-behavior bundles, and a handful of individually planted biased
/// features are common in benign rows but rare in malware rows. An active
/// bundle always sets its anchor (first) feature and each other member with
/// `member_prob`, the way a permission accompanies a varying subset of the
/// API calls it guards. Every feature is finally XOR-flipped with
/// `noise_flip_prob`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_benign: usize,
    pub n_malware: usize,
    pub d: usize,
    pub n_behaviors: usize,
    pub n_benign_behaviors: usize,
    pub bundle_size_range: (usize, usize),
    pub behavior_activation_prob: f64,
    /// Probability that a non-anchor member joins an active bundle.
    pub member_prob: f64,
    /// Probability that a benign row switches on a malware behavior.
    pub cross_activation_prob: f64,
    /// Probability that a malware row switches on a benign behavior, as when
    /// a payload is repackaged into a benign host app.
    pub repackaging_prob: f64,
    pub noise_flip_prob: f64,
    pub n_biased_features: usize,
    pub bias_benign_prob: f64,
    pub bias_malware_prob: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_benign: 5400,
            n_malware: 600,
            d: 800,
            n_behaviors: 12,
            n_benign_behaviors: 28,
            bundle_size_range: (6, 14),
            behavior_activation_prob: 0.35,
            member_prob: 0.4,
            cross_activation_prob: 0.02,
            repackaging_prob: 0.2,
            noise_flip_prob: 0.01,
            n_biased_features: 12,
            bias_benign_prob: 0.6,
            bias_malware_prob: 0.1,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("behavior_activation_prob", self.behavior_activation_prob),
            ("member_prob", self.member_prob),
            ("cross_activation_prob", self.cross_activation_prob),
            ("repackaging_prob", self.repackaging_prob),
            ("noise_flip_prob", self.noise_flip_prob),
            ("bias_benign_prob", self.bias_benign_prob),
            ("bias_malware_prob", self.bias_malware_prob),
        ];
        for (field, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(
                    field,
                    format!("probability {p} outside [0,1]"),
                ));
            }
        }
        if self.n_biased_features > 0 && self.bias_benign_prob <= self.bias_malware_prob {
            return Err(Error::config(
                "bias_benign_prob",
                "must exceed bias_malware_prob (planted feature is benign-prevalent)",
            ));
        }
        let (lo, hi) = self.bundle_size_range;
        if lo == 0 || lo > hi {
            return Err(Error::config(
                "bundle_size_range",
                format!("need 1 <= min <= max, got ({lo},{hi})"),
            ));
        }
        let needed = (self.n_behaviors + self.n_benign_behaviors) * hi + self.n_biased_features;
        if needed > self.d {
            return Err(Error::config(
                "d",
                format!("planted structure needs {needed} features but d={}", self.d),
            ));
        }
        if self.n_benign + self.n_malware == 0 {
            return Err(Error::config("n_benign", "no samples requested"));
        }
        Ok(())
    }
}

/// What the generator planted, kept for oracle checks. Each bundle lists its
/// anchor first, then the other members in ascending order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub malware_behaviors: Vec<Vec<usize>>,
    pub benign_behaviors: Vec<Vec<usize>>,
    pub biased_features: Vec<usize>,
    pub spec: SyntheticSpec,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, GroundTruth)> {
    spec.validate()?;
    let mut rng = rng::seeded(spec.seed);

    let mut slots: Vec<usize> = (0..spec.d).collect();
    slots.shuffle(&mut rng);
    let mut cursor = 0usize;
    let (lo, hi) = spec.bundle_size_range;
    let mut take_bundle = |rng: &mut rng::StreamRng| {
        let size = rng.random_range(lo..=hi);
        let mut b = slots[cursor..cursor + size].to_vec();
        cursor += size;
        b[1..].sort_unstable();
        b
    };
    let malware_behaviors: Vec<Vec<usize>> = (0..spec.n_behaviors)
        .map(|_| take_bundle(&mut rng))
        .collect();
    let benign_behaviors: Vec<Vec<usize>> = (0..spec.n_benign_behaviors)
        .map(|_| take_bundle(&mut rng))
        .collect();
    let mut biased_features = slots[cursor..cursor + spec.n_biased_features].to_vec();
    biased_features.sort_unstable();

    let mut labels: Vec<Label> = std::iter::repeat_n(Label::Benign, spec.n_benign)
        .chain(std::iter::repeat_n(Label::Malware, spec.n_malware))
        .collect();
    labels.shuffle(&mut rng);

    let own_rates =
        vec![spec.behavior_activation_prob; spec.n_behaviors.max(spec.n_benign_behaviors)];
    let cross_rates = vec![spec.cross_activation_prob; spec.n_behaviors];
    let repackaging = vec![spec.repackaging_prob; spec.n_benign_behaviors];

    let mut dense = vec![false; spec.d];
    let rows = labels
        .iter()
        .map(|&label| {
            dense.iter_mut().for_each(|v| *v = false);
            let (own, other, cross) = match label {
                Label::Malware => (&malware_behaviors, &benign_behaviors, &repackaging),
                Label::Benign => (&benign_behaviors, &malware_behaviors, &cross_rates),
            };
            for (bundles, rates) in [(own, &own_rates), (other, cross)] {
                for (b, &p) in bundles.iter().zip(rates.iter()) {
                    if rng.random_bool(p) {
                        dense[b[0]] = true;
                        for &j in &b[1..] {
                            if rng.random_bool(spec.member_prob) {
                                dense[j] = true;
                            }
                        }
                    }
                }
            }
            let bias_p = match label {
                Label::Benign => spec.bias_benign_prob,
                Label::Malware => spec.bias_malware_prob,
            };
            for &j in &biased_features {
                if rng.random_bool(bias_p) {
                    dense[j] = true;
                }
            }
            if spec.noise_flip_prob > 0.0 {
                for v in dense.iter_mut() {
                    if rng.random_bool(spec.noise_flip_prob) {
                        *v = !*v;
                    }
                }
            }
            (0..spec.d).filter(|&j| dense[j]).collect::<Vec<_>>()
        })
        .collect();

    let ds = Dataset::new(spec.d, rows, labels)?;
    let truth = GroundTruth {
        malware_behaviors,
        benign_behaviors,
        biased_features,
        spec: spec.clone(),
    };
    Ok((ds, truth))
}

/// Stratified split into (train, test). Each class contributes
/// `round(fraction * count)` samples to train, clamped so both sides keep at
/// least one sample of every class.
pub fn split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::config(
            "train_fraction",
            format!("must lie in (0,1), got {train_fraction}"),
        ));
    }
    let mut rng = rng::seeded(seed);
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for label in [Label::Benign, Label::Malware] {
        let mut idx = ds.indices_of(label);
        if idx.len() < 2 {
            return Err(Error::Stratification {
                label: label.as_u8(),
                count: idx.len(),
            });
        }
        idx.shuffle(&mut rng);
        let n_train =
            ((train_fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        train_idx.extend_from_slice(&idx[..n_train]);
        test_idx.extend_from_slice(&idx[n_train..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((ds.subset(&train_idx), ds.subset(&test_idx)))
}

/// Feature bundles harvested from benign samples: the feature-space shadow of
/// code snippets lifted out of benign apps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformationLibrary {
    pub n_features: usize,
    pub bundles: Vec<Vec<usize>>,
    /// Donor sample id for each bundle.
    pub provenance: Vec<usize>,
}

impl TransformationLibrary {
    pub fn len(&self) -> usize {
        self.bundles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bundles.is_empty()
    }
}

pub fn harvest_transformations(
    ds: &Dataset,
    n_bundles: usize,
    size_range: (usize, usize),
    seed: u64,
) -> Result<TransformationLibrary> {
    let (lo, hi) = size_range;
    if lo == 0 || lo > hi {
        return Err(Error::config(
            "bundle_size_range",
            format!("need 1 <= min <= max, got ({lo},{hi})"),
        ));
    }
    let donors: Vec<usize> = ds
        .indices_of(Label::Benign)
        .into_iter()
        .filter(|&i| ds.row(i).len() >= lo)
        .collect();
    if donors.is_empty() {
        return Err(Error::Harvest { min_size: lo });
    }
    let mut rng = rng::seeded(seed);
    let mut bundles = Vec::with_capacity(n_bundles);
    let mut provenance = Vec::with_capacity(n_bundles);
    for _ in 0..n_bundles {
        let donor = donors[rng.random_range(0..donors.len())];
        let row = ds.row(donor);
        let size = rng.random_range(lo..=hi.min(row.len()));
        let mut bundle: Vec<usize> = index::sample(&mut rng, row.len(), size)
            .into_iter()
            .map(|k| row[k])
            .collect();
        bundle.sort_unstable();
        bundles.push(bundle);
        provenance.push(donor);
    }
    Ok(TransformationLibrary {
        n_features: ds.n_features(),
        bundles,
        provenance,
    })
}
