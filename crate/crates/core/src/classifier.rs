//! Linear SVMs trained by averaged stochastic subgradient descent, and the
//! four detector pipelines built on them.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Label};
use crate::rng;
use crate::transform::RobustTransform;
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// Step-size schedule of the subgradient solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// `eta_t = 1 / (lambda * t)` with `lambda = 1 / (C * n)`.
    InverseT,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeight {
    /// Every sample weighs 1.
    Uniform,
    /// Sample weight `n / (2 * n_class)`.
    Balanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    pub c: f64,
    pub epochs: usize,
    pub schedule: Schedule,
    pub class_weight: ClassWeight,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            c: 1.0,
            epochs: 30,
            schedule: Schedule::InverseT,
            class_weight: ClassWeight::Balanced,
            seed: 0,
        }
    }
}

impl Hyperparams {
    fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::config(
                "c",
                format!("must be positive, got {}", self.c),
            ));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub hyperparams: Hyperparams,
    /// Sec-SVM box bound: every `|w_j| <= box_bound`.
    pub box_bound: Option<f64>,
}

impl LinearModel {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// `<w, x> + b` for an active set in model space.
    pub fn score(&self, x: &[usize]) -> f64 {
        x.iter().map(|&j| self.weights[j]).sum::<f64>() + self.bias
    }

    pub fn predict(&self, x: &[usize]) -> Label {
        label_of(self.score(x))
    }

    /// `max|w| / median|w|`, the upper median for even lengths. Infinite when
    /// the median weight is zero.
    pub fn uniformity_ratio(&self) -> f64 {
        let mut a: Vec<f64> = self.weights.iter().map(|w| w.abs()).collect();
        if a.is_empty() {
            return f64::NAN;
        }
        a.sort_by(f64::total_cmp);
        let median = a[a.len() / 2];
        if median == 0.0 {
            return f64::INFINITY;
        }
        a[a.len() - 1] / median
    }
}

/// Non-negative scores are malware; only a strictly negative score is benign.
pub fn label_of(score: f64) -> Label {
    if score < 0.0 {
        Label::Benign
    } else {
        Label::Malware
    }
}

fn sample_weights(ds: &Dataset, mode: ClassWeight) -> Vec<f64> {
    match mode {
        ClassWeight::Uniform => vec![1.0; ds.len()],
        ClassWeight::Balanced => {
            let n = ds.len() as f64;
            let nb = ds.count(Label::Benign) as f64;
            let nm = ds.count(Label::Malware) as f64;
            ds.labels()
                .iter()
                .map(|&l| match l {
                    Label::Benign => n / (2.0 * nb),
                    Label::Malware => n / (2.0 * nm),
                })
                .collect()
        }
    }
}

/// Regularized hinge objective minimized by the solver:
/// `lambda/2 (|w|^2 + b^2) + 1/n sum_i c_i max(0, 1 - y_i (<w,x_i> + b))`.
pub fn objective(ds: &Dataset, hp: &Hyperparams, weights: &[f64], bias: f64) -> f64 {
    let n = ds.len() as f64;
    let lambda = 1.0 / (hp.c * n);
    let cw = sample_weights(ds, hp.class_weight);
    let reg = 0.5 * lambda * (weights.iter().map(|w| w * w).sum::<f64>() + bias * bias);
    let loss: f64 = ds
        .iter()
        .zip(&cw)
        .map(|((row, label), c)| {
            let s: f64 = row.iter().map(|&j| weights[j]).sum::<f64>() + bias;
            c * (1.0 - label.sign() * s).max(0.0)
        })
        .sum();
    reg + loss / n
}

fn solve(ds: &Dataset, hp: &Hyperparams, box_bound: Option<f64>) -> Result<LinearModel> {
    hp.validate()?;
    if let Some(c) = box_bound {
        if c.is_nan() || c <= 0.0 {
            return Err(Error::config(
                "box_bound",
                format!("must be positive, got {c}"),
            ));
        }
    }
    if ds.count(Label::Benign) == 0 || ds.count(Label::Malware) == 0 {
        return Err(Error::Training("both classes must be present".into()));
    }
    let d = ds.n_features();
    let n = ds.len();
    let lambda = 1.0 / (hp.c * n as f64);
    let cw = sample_weights(ds, hp.class_weight);
    let total_steps = hp.epochs * n;
    let tail_start = total_steps / 2;

    let mut rng = rng::seeded(hp.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut w_sum = vec![0.0; d];
    let mut b_sum = 0.0;
    let mut t = 0usize;

    for _ in 0..hp.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = match hp.schedule {
                Schedule::InverseT => 1.0 / (lambda * t as f64),
            };
            let row = ds.row(i);
            let y = ds.label(i).sign();
            let margin = y * (row.iter().map(|&j| w[j]).sum::<f64>() + b);
            let shrink = 1.0 - eta * lambda;
            w.iter_mut().for_each(|v| *v *= shrink);
            b *= shrink;
            if margin < 1.0 {
                let step = eta * cw[i] * y;
                for &j in row {
                    w[j] += step;
                }
                b += step;
            }
            if let Some(c) = box_bound {
                w.iter_mut().for_each(|v| *v = v.clamp(-c, c));
            }
            if t > tail_start {
                w_sum.iter_mut().zip(&w).for_each(|(s, v)| *s += v);
                b_sum += b;
            }
        }
    }
    let count = (total_steps - tail_start) as f64;
    let mut weights: Vec<f64> = w_sum.into_iter().map(|s| s / count).collect();
    if let Some(c) = box_bound {
        // averaging a box-feasible sequence stays feasible; the clamp removes rounding
        weights.iter_mut().for_each(|v| *v = v.clamp(-c, c));
    }
    let bias = b_sum / count;
    if weights.iter().any(|v| !v.is_finite()) || !bias.is_finite() {
        return Err(Error::Training("solver diverged".into()));
    }
    Ok(LinearModel {
        weights,
        bias,
        hyperparams: *hp,
        box_bound,
    })
}

pub fn train_linear_svm(ds: &Dataset, hp: &Hyperparams) -> Result<LinearModel> {
    solve(ds, hp, None)
}

/// Projected subgradient descent onto the box `[-c, c]^d`.
pub fn train_sec_svm(ds: &Dataset, hp: &Hyperparams, c: f64) -> Result<LinearModel> {
    solve(ds, hp, Some(c))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Original,
    SecSvm,
    FeatureSelect,
    Robust,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Original,
        Variant::SecSvm,
        Variant::FeatureSelect,
        Variant::Robust,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Original => "original",
            Variant::SecSvm => "sec_svm",
            Variant::FeatureSelect => "feature_select",
            Variant::Robust => "robust",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "original" => Ok(Variant::Original),
            "sec_svm" => Ok(Variant::SecSvm),
            "feature_select" => Ok(Variant::FeatureSelect),
            "robust" => Ok(Variant::Robust),
            _ => Err(Error::config(
                "variant",
                format!("unknown variant `{s}` (original, sec_svm, feature_select, robust)"),
            )),
        }
    }
}

/// A trained detector: optional input map followed by a linear model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    version: u32,
    variant: Variant,
    d_raw: usize,
    transform: Option<RobustTransform>,
    mask: Option<Vec<usize>>,
    model: LinearModel,
}

fn mask_row(mask: &[usize], row: &[usize]) -> Vec<usize> {
    row.iter()
        .filter_map(|j| mask.binary_search(j).ok())
        .collect()
}

fn mask_dataset(mask: &[usize], ds: &Dataset) -> Result<Dataset> {
    let rows = ds.rows().iter().map(|r| mask_row(mask, r)).collect();
    Dataset::new(mask.len(), rows, ds.labels().to_vec())
}

impl Pipeline {
    fn assemble(
        variant: Variant,
        d_raw: usize,
        transform: Option<RobustTransform>,
        mask: Option<Vec<usize>>,
        model: LinearModel,
    ) -> Result<Self> {
        let expected = match (&transform, &mask) {
            (Some(t), None) if variant == Variant::Robust => t.d_out(),
            (None, Some(m)) if variant == Variant::FeatureSelect => m.len(),
            (None, None) if matches!(variant, Variant::Original | Variant::SecSvm) => d_raw,
            _ => {
                return Err(Error::config(
                    "pipeline",
                    format!("variant {variant} has inconsistent transform/mask"),
                ))
            }
        };
        if model.dim() != expected {
            return Err(Error::Shape {
                expected,
                got: model.dim(),
            });
        }
        if let Some(t) = &transform {
            if t.d_in() != d_raw {
                return Err(Error::Shape {
                    expected: d_raw,
                    got: t.d_in(),
                });
            }
        }
        if let Some(m) = &mask {
            if m.windows(2).any(|w| w[0] >= w[1]) || m.last().is_some_and(|&j| j >= d_raw) {
                return Err(Error::config("mask", "must be strictly increasing and < d"));
            }
        }
        Ok(Pipeline {
            version: FORMAT_VERSION,
            variant,
            d_raw,
            transform,
            mask,
            model,
        })
    }

    pub fn original(train: &Dataset, hp: &Hyperparams) -> Result<Self> {
        let model = train_linear_svm(train, hp)?;
        Self::assemble(Variant::Original, train.n_features(), None, None, model)
    }

    pub fn sec_svm(train: &Dataset, hp: &Hyperparams, box_bound: f64) -> Result<Self> {
        let model = train_sec_svm(train, hp, box_bound)?;
        Self::assemble(Variant::SecSvm, train.n_features(), None, None, model)
    }

    /// Trains on the full space, keeps the `k` largest-magnitude weights
    /// (ties to the lower index) and retrains on those features only.
    pub fn feature_select(train: &Dataset, k: usize, hp: &Hyperparams) -> Result<Self> {
        let d = train.n_features();
        if k == 0 || k > d {
            return Err(Error::config("k", format!("must lie in [1, {d}], got {k}")));
        }
        let full = train_linear_svm(train, hp)?;
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| {
            full.weights[b]
                .abs()
                .total_cmp(&full.weights[a].abs())
                .then(a.cmp(&b))
        });
        let mut mask = order[..k].to_vec();
        mask.sort_unstable();
        let model = train_linear_svm(&mask_dataset(&mask, train)?, hp)?;
        Self::assemble(Variant::FeatureSelect, d, None, Some(mask), model)
    }

    /// Trains a linear SVM on the transformed training rows.
    pub fn robust(train: &Dataset, transform: RobustTransform, hp: &Hyperparams) -> Result<Self> {
        let h = transform.apply_batch(train)?;
        let model = train_linear_svm(&h, hp)?;
        Self::assemble(
            Variant::Robust,
            train.n_features(),
            Some(transform),
            None,
            model,
        )
    }

    pub fn from_parts(
        variant: Variant,
        d_raw: usize,
        transform: Option<RobustTransform>,
        mask: Option<Vec<usize>>,
        model: LinearModel,
    ) -> Result<Self> {
        Self::assemble(variant, d_raw, transform, mask, model)
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn d_raw(&self) -> usize {
        self.d_raw
    }

    pub fn transform(&self) -> Option<&RobustTransform> {
        self.transform.as_ref()
    }

    pub fn mask(&self) -> Option<&[usize]> {
        self.mask.as_deref()
    }

    pub fn model(&self) -> &LinearModel {
        &self.model
    }

    /// Maps a raw active set into the model's input space.
    pub fn project(&self, x: &[usize]) -> Result<Vec<usize>> {
        if let Some(&bad) = x.iter().find(|&&j| j >= self.d_raw) {
            return Err(Error::Shape {
                expected: self.d_raw,
                got: bad + 1,
            });
        }
        Ok(match (&self.transform, &self.mask) {
            (Some(t), _) => t.apply(x)?,
            (None, Some(m)) => mask_row(m, x),
            (None, None) => x.to_vec(),
        })
    }

    pub fn score(&self, x: &[usize]) -> Result<f64> {
        Ok(self.model.score(&self.project(x)?))
    }

    pub fn predict(&self, x: &[usize]) -> Result<Label> {
        Ok(label_of(self.score(x)?))
    }

    /// Weight each raw feature contributes when switched on, for pipelines
    /// that are linear in the raw space. `None` for the robust pipeline.
    pub fn raw_weights(&self) -> Option<Vec<f64>> {
        match (&self.transform, &self.mask) {
            (Some(_), _) => None,
            (None, Some(m)) => {
                let mut w = vec![0.0; self.d_raw];
                for (pos, &j) in m.iter().enumerate() {
                    w[j] = self.model.weights[pos];
                }
                Some(w)
            }
            (None, None) => Some(self.model.weights.clone()),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Pipeline = serde_json::from_str(text)?;
        if p.version != FORMAT_VERSION {
            return Err(Error::Version {
                found: p.version,
                expected: FORMAT_VERSION,
            });
        }
        Self::assemble(p.variant, p.d_raw, p.transform, p.mask, p.model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Class 1 iff feature 0 is active; feature 1 is noise.
    fn separable() -> Dataset {
        let rows = [vec![], vec![1], vec![0], vec![0, 1]];
        let labels = [Label::Benign, Label::Benign, Label::Malware, Label::Malware];
        let rows: Vec<Vec<usize>> = rows.iter().cycle().take(40).cloned().collect();
        let labels: Vec<Label> = labels.iter().cycle().take(40).copied().collect();
        Dataset::new(2, rows, labels).unwrap()
    }

    #[test]
    fn separable_toy_is_learned() {
        let ds = separable();
        let m = train_linear_svm(&ds, &Hyperparams::default()).unwrap();
        assert!(m.weights[0] > 0.0);
        for (row, label) in ds.iter() {
            assert_eq!(m.predict(row), label);
        }
    }

    #[test]
    fn objective_not_worse_than_start() {
        let ds = separable();
        let hp = Hyperparams::default();
        let m = train_linear_svm(&ds, &hp).unwrap();
        assert!(objective(&ds, &hp, &m.weights, m.bias) <= objective(&ds, &hp, &[0.0, 0.0], 0.0));
    }

    #[test]
    fn deterministic_per_seed() {
        let ds = separable();
        let hp = Hyperparams {
            seed: 11,
            ..Hyperparams::default()
        };
        assert_eq!(
            train_linear_svm(&ds, &hp).unwrap(),
            train_linear_svm(&ds, &hp).unwrap()
        );
    }

    #[test]
    fn single_class_rejected() {
        let ds = Dataset::new(2, vec![vec![0], vec![1]], vec![Label::Malware; 2]).unwrap();
        assert!(matches!(
            train_linear_svm(&ds, &Hyperparams::default()),
            Err(Error::Training(_))
        ));
    }

    #[test]
    fn identical_rows_predict_majority() {
        let labels: Vec<Label> = (0..30)
            .map(|i| {
                if i < 20 {
                    Label::Benign
                } else {
                    Label::Malware
                }
            })
            .collect();
        let ds = Dataset::new(3, vec![vec![0, 2]; 30], labels).unwrap();
        let hp = Hyperparams {
            class_weight: ClassWeight::Uniform,
            ..Hyperparams::default()
        };
        let m = train_linear_svm(&ds, &hp).unwrap();
        assert_eq!(m.predict(&[0, 2]), Label::Benign);
    }

    #[test]
    fn loose_box_matches_unconstrained() {
        let ds = separable();
        let hp = Hyperparams::default();
        let free = train_linear_svm(&ds, &hp).unwrap();
        let boxed = train_sec_svm(&ds, &hp, 1e9).unwrap();
        for (a, b) in free.weights.iter().zip(&boxed.weights) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn tight_box_is_active() {
        let ds = separable();
        let m = train_sec_svm(&ds, &Hyperparams::default(), 0.05).unwrap();
        // averaged iterates sit at or just inside the bound
        assert!(m.weights[0].abs() > 0.045, "{}", m.weights[0]);
        assert!(m.weights.iter().all(|w| w.abs() <= 0.05));
        assert!(train_sec_svm(&ds, &Hyperparams::default(), 0.0).is_err());
    }

    #[test]
    fn uniformity_ratio_uses_upper_median() {
        let m = LinearModel {
            weights: vec![0.5, -4.0, 1.0, -2.0],
            bias: 0.0,
            hyperparams: Hyperparams::default(),
            box_bound: None,
        };
        assert_eq!(m.uniformity_ratio(), 2.0);
        let flat = LinearModel {
            weights: vec![0.0, 0.0, 1.0],
            ..m
        };
        assert_eq!(flat.uniformity_ratio(), f64::INFINITY);
    }

    #[test]
    fn feature_select_keeps_informative_feature() {
        let ds = separable();
        let p = Pipeline::feature_select(&ds, 1, &Hyperparams::default()).unwrap();
        assert_eq!(p.mask(), Some(&[0usize][..]));
        assert_eq!(p.predict(&[0, 1]).unwrap(), Label::Malware);
        assert_eq!(p.predict(&[1]).unwrap(), Label::Benign);
        assert!(Pipeline::feature_select(&ds, 3, &Hyperparams::default()).is_err());
        assert!(Pipeline::feature_select(&ds, 0, &Hyperparams::default()).is_err());
    }

    #[test]
    fn full_mask_equals_plain_retrain() {
        let ds = separable();
        let hp = Hyperparams::default();
        let p = Pipeline::feature_select(&ds, 2, &hp).unwrap();
        assert_eq!(p.mask(), Some(&[0usize, 1][..]));
        assert_eq!(
            p.model().weights,
            train_linear_svm(&ds, &hp).unwrap().weights
        );
    }

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

    #[test]
    fn scoring_and_tie_break() {
        let p = fixed(vec![0.0, 0.0], -1.0);
        assert_eq!(p.score(&[0, 1]).unwrap(), -1.0);
        assert_eq!(p.predict(&[0]).unwrap(), Label::Benign);
        assert_eq!(label_of(-0.1), Label::Benign);
        assert_eq!(label_of(0.1), Label::Malware);
        assert_eq!(label_of(0.0), Label::Malware);
        assert!(matches!(p.score(&[2]), Err(Error::Shape { .. })));
    }

    #[test]
    fn negative_weight_lowers_score() {
        let p = fixed(vec![0.5, -0.3, 0.2], 0.1);
        let before = p.score(&[0]).unwrap();
        let after = p.score(&[0, 1]).unwrap();
        assert!(after < before);
        assert!((after - before + 0.3).abs() < 1e-12);
    }

    #[test]
    fn inconsistent_parts_rejected() {
        let model = LinearModel {
            weights: vec![0.0; 2],
            bias: 0.0,
            hyperparams: Hyperparams::default(),
            box_bound: None,
        };
        assert!(Pipeline::from_parts(Variant::Robust, 2, None, None, model.clone()).is_err());
        assert!(Pipeline::from_parts(Variant::Original, 3, None, None, model).is_err());
    }

    #[test]
    fn pipeline_json_roundtrip() {
        let p = fixed(vec![0.5, -0.25], 0.125);
        let json = p.to_json().unwrap();
        assert!(json.contains("\"variant\":\"original\""));
        assert_eq!(Pipeline::from_json(&json).unwrap(), p);
        let bumped = json.replace("\"version\":1", "\"version\":2");
        assert!(matches!(
            Pipeline::from_json(&bumped),
            Err(Error::Version { .. })
        ));
    }
}
