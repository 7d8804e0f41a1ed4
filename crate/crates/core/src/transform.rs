//! The learned map from the raw feature space onto one binary activation per
//! cluster: a cluster fires when the sigmoid of its weighted member sum
//! exceeds `theta`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::depgraph::{self, Cluster, CorrelationConfig, FeatureForest};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_THETA: f64 = 0.8;

pub fn sigmoid(s: f64) -> f64 {
    1.0 / (1.0 + (-s).exp())
}

/// Smallest weighted sum strictly above which a cluster may fire,
/// `ln(theta / (1 - theta))`.
pub fn activation_logit(theta: f64) -> f64 {
    (theta / (1.0 - theta)).ln()
}

fn check_theta(theta: f64) -> Result<()> {
    if theta > 0.5 && theta < 1.0 {
        Ok(())
    } else {
        Err(Error::config(
            "theta",
            format!("threshold must lie in the open interval (0.5, 1), got {theta}"),
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    pub m: usize,
    pub theta: f64,
    #[serde(default)]
    pub correlation: CorrelationConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustTransform {
    forest: FeatureForest,
    theta: f64,
}

#[derive(Serialize, Deserialize)]
struct TransformRepr {
    version: u32,
    theta: f64,
    d_in: usize,
    m: usize,
    clusters: Vec<Cluster>,
}

impl RobustTransform {
    pub fn new(forest: FeatureForest, theta: f64) -> Result<Self> {
        check_theta(theta)?;
        Ok(RobustTransform { forest, theta })
    }

    /// Fits on training rows only: correlation graph, prototype selection,
    /// then the optimum-path forest.
    pub fn fit(train: &Dataset, m: usize, theta: f64) -> Result<Self> {
        Self::fit_with(
            train,
            &TransformParams {
                m,
                theta,
                correlation: CorrelationConfig::default(),
            },
        )
    }

    pub fn fit_with(train: &Dataset, params: &TransformParams) -> Result<Self> {
        check_theta(params.theta)?;
        if train.is_empty() {
            return Err(Error::config(
                "train",
                "cannot fit a transform on an empty dataset",
            ));
        }
        let corr = depgraph::pairwise_correlation_with(train, &params.correlation);
        let primaries = depgraph::select_primaries(&corr, params.m)?;
        let forest = depgraph::build_opf(&corr, &primaries)?;
        Self::new(forest, params.theta)
    }

    pub fn forest(&self) -> &FeatureForest {
        &self.forest
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn d_in(&self) -> usize {
        self.forest.d()
    }

    pub fn d_out(&self) -> usize {
        self.forest.m()
    }

    pub fn fires(&self, sum: f64) -> bool {
        sigmoid(sum) > self.theta
    }

    /// Weighted member sum of every cluster for the active set `x`.
    pub fn cluster_sums(&self, x: &[usize]) -> Result<Vec<f64>> {
        let d = self.d_in();
        let mut sums = vec![0.0; self.d_out()];
        for &j in x {
            if j >= d {
                return Err(Error::Shape {
                    expected: d,
                    got: j + 1,
                });
            }
            let a = self.forest.assignment()[j];
            sums[a.cluster] += a.cost;
        }
        Ok(sums)
    }

    /// Active output features for the active input set `x`.
    pub fn apply(&self, x: &[usize]) -> Result<Vec<usize>> {
        Ok(self
            .cluster_sums(x)?
            .into_iter()
            .enumerate()
            .filter(|&(_, s)| self.fires(s))
            .map(|(i, _)| i)
            .collect())
    }

    /// Dense convenience form: `x.len()` must equal `d_in`.
    pub fn apply_dense(&self, x: &[bool]) -> Result<Vec<bool>> {
        if x.len() != self.d_in() {
            return Err(Error::Shape {
                expected: self.d_in(),
                got: x.len(),
            });
        }
        let active: Vec<usize> = (0..x.len()).filter(|&j| x[j]).collect();
        let mut out = vec![false; self.d_out()];
        for i in self.apply(&active)? {
            out[i] = true;
        }
        Ok(out)
    }

    pub fn apply_batch(&self, ds: &Dataset) -> Result<Dataset> {
        if ds.n_features() != self.d_in() {
            return Err(Error::Shape {
                expected: self.d_in(),
                got: ds.n_features(),
            });
        }
        let rows = map_rows(ds.rows(), |row| self.apply(row))?;
        Dataset::new(self.d_out(), rows, ds.labels().to_vec())
    }

    /// Minimum number of inactive members an attacker has to switch on to make
    /// an empty cluster fire.
    pub fn flip_lower_bound(&self, cluster: usize) -> usize {
        let max_w = self.forest.clusters()[cluster]
            .costs
            .iter()
            .copied()
            .fold(0.0, f64::max);
        (activation_logit(self.theta) / max_w).ceil().max(1.0) as usize
    }

    pub fn to_json(&self) -> Result<String> {
        let repr = TransformRepr {
            version: FORMAT_VERSION,
            theta: self.theta,
            d_in: self.d_in(),
            m: self.d_out(),
            clusters: self.forest.clusters().to_vec(),
        };
        Ok(serde_json::to_string(&repr)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let repr: TransformRepr = serde_json::from_str(text)?;
        if repr.version != FORMAT_VERSION {
            return Err(Error::Version {
                found: repr.version,
                expected: FORMAT_VERSION,
            });
        }
        if repr.m != repr.clusters.len() {
            return Err(Error::Shape {
                expected: repr.m,
                got: repr.clusters.len(),
            });
        }
        let forest = FeatureForest::from_clusters(repr.clusters)?;
        if forest.d() != repr.d_in {
            return Err(Error::Shape {
                expected: repr.d_in,
                got: forest.d(),
            });
        }
        Self::new(forest, repr.theta)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

impl Serialize for RobustTransform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        TransformRepr {
            version: FORMAT_VERSION,
            theta: self.theta,
            d_in: self.d_in(),
            m: self.d_out(),
            clusters: self.forest.clusters().to_vec(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RobustTransform {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let value = serde_json::Value::deserialize(de)?;
        RobustTransform::from_json(&value.to_string()).map_err(serde::de::Error::custom)
    }
}

#[cfg(feature = "parallel")]
fn map_rows<F>(rows: &[Vec<usize>], f: F) -> Result<Vec<Vec<usize>>>
where
    F: Fn(&[usize]) -> Result<Vec<usize>> + Sync + Send,
{
    use rayon::prelude::*;
    rows.par_iter().map(|r| f(r)).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_rows<F>(rows: &[Vec<usize>], f: F) -> Result<Vec<Vec<usize>>>
where
    F: Fn(&[usize]) -> Result<Vec<usize>>,
{
    rows.iter().map(|r| f(r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;

    /// One cluster {0 (prototype, w=1), 1 (w=0.5)} and a second singleton {2}.
    fn two_member() -> RobustTransform {
        let forest = FeatureForest::from_clusters(vec![
            Cluster {
                prototype: 0,
                members: vec![0, 1],
                costs: vec![1.0, 0.5],
            },
            Cluster {
                prototype: 2,
                members: vec![2],
                costs: vec![1.0],
            },
        ])
        .unwrap();
        RobustTransform::new(forest, 0.8).unwrap()
    }

    #[test]
    fn theta_is_open_interval() {
        let t = two_member();
        for bad in [0.5, 1.0, 0.4, f64::NAN] {
            assert!(RobustTransform::new(t.forest().clone(), bad).is_err());
        }
        let ds = Dataset::new(3, vec![vec![0]], vec![Label::Benign]).unwrap();
        assert!(matches!(
            RobustTransform::fit(&ds, 1, 0.5),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn zero_input_gives_zero_output() {
        assert!(two_member().apply(&[]).unwrap().is_empty());
    }

    #[test]
    fn weighted_pair_fires_single_does_not() {
        let t = two_member();
        // s = 1.5 -> sigma ~ 0.8176 > 0.8
        assert!((sigmoid(1.5) - 0.817_574_476_193_643_7).abs() < 1e-12);
        assert_eq!(t.apply(&[0, 1]).unwrap(), vec![0]);
        // s = 1 -> sigma ~ 0.7311 <= 0.8
        assert!((sigmoid(1.0) - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!(t.apply(&[0]).unwrap().is_empty());
        assert_eq!(t.flip_lower_bound(0), 2);
    }

    #[test]
    fn boundary_is_strict() {
        // sigma(ln 4) = 0.8 exactly in exact arithmetic; whatever the rounding,
        // fires() must agree with the strict comparison
        let t = two_member();
        let s = activation_logit(0.8);
        assert_eq!(t.fires(s), sigmoid(s) > 0.8);
        assert!(!t.fires(s - 1e-9));
        assert!(t.fires(s + 1e-9));
    }

    #[test]
    fn shape_errors() {
        let t = two_member();
        assert!(matches!(t.apply(&[3]), Err(Error::Shape { .. })));
        assert!(matches!(
            t.apply_dense(&[true, false]),
            Err(Error::Shape { .. })
        ));
        let wrong = Dataset::empty(5);
        assert!(t.apply_batch(&wrong).is_err());
    }

    #[test]
    fn empty_batch_keeps_output_dimension() {
        let out = two_member().apply_batch(&Dataset::empty(3)).unwrap();
        assert!(out.is_empty());
        assert_eq!(out.n_features(), 2);
    }

    #[test]
    fn json_roundtrip_and_version_check() {
        let t = two_member();
        let json = t.to_json().unwrap();
        assert_eq!(RobustTransform::from_json(&json).unwrap(), t);
        let bumped = json.replace("\"version\":1", "\"version\":9");
        assert!(matches!(
            RobustTransform::from_json(&bumped),
            Err(Error::Version { found: 9, .. })
        ));
        assert!(RobustTransform::from_json("{not json").is_err());
    }
}
