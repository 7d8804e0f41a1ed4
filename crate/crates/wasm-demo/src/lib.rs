//! Browser demo. Each export takes plain numbers and returns a JSON string for
//! the page to draw. The `*_json` functions hold the logic so they can be
//! tested natively.

use rfs_core::attacks::{self, AttackKind};
use rfs_core::classifier::Hyperparams;
use rfs_core::corpus::{self, Label, SyntheticSpec};
use rfs_core::depgraph::{self, Cluster, FeatureForest};
use rfs_core::evaluation::{clean_metrics, curve_from_runs};
use rfs_core::transform::{activation_logit, sigmoid};
use rfs_core::{Pipeline, RobustTransform};
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Curve budgets shown by the evasion demo.
pub const BUDGETS: [usize; 12] = [0, 1, 2, 3, 4, 6, 8, 10, 15, 20, 25, 30];

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// One cluster with the given path costs (the first is the prototype and must
/// be 1) and the members switched on by `active` bits.
pub fn explore_transform_json(costs: &[f64], active: u32, theta: f64) -> Result<String, String> {
    if costs.is_empty() || costs.len() > 32 {
        return Err("between 1 and 32 members".into());
    }
    let n = costs.len();
    let cluster = Cluster {
        prototype: 0,
        members: (0..n).collect(),
        costs: costs.to_vec(),
    };
    let forest = FeatureForest::from_clusters(vec![cluster]).map_err(err)?;
    let t = RobustTransform::new(forest, theta).map_err(err)?;
    let x: Vec<usize> = (0..n).filter(|j| active >> j & 1 == 1).collect();
    let s = t.cluster_sums(&x).map_err(err)?[0];
    let fires = !t.apply(&x).map_err(err)?.is_empty();

    // fewest members an attacker must add to fire the cluster, heaviest first
    let logit = activation_logit(theta);
    let mut rest: Vec<f64> = (0..n)
        .filter(|j| !x.contains(j))
        .map(|j| costs[j])
        .collect();
    rest.sort_by(|a, b| b.total_cmp(a));
    let mut acc = s;
    let mut needed = None;
    if acc > logit {
        needed = Some(0);
    } else {
        for (k, w) in rest.iter().enumerate() {
            acc += w;
            if acc > logit {
                needed = Some(k + 1);
                break;
            }
        }
    }
    Ok(json!({
        "sum": s,
        "sigma": sigmoid(s),
        "logit": logit,
        "fires": fires,
        "additions_to_fire": needed,
    })
    .to_string())
}

fn small_spec(seed: u64, noise: f64) -> SyntheticSpec {
    SyntheticSpec {
        n_benign: 400,
        n_malware: 200,
        d: 36,
        n_behaviors: 3,
        n_benign_behaviors: 2,
        bundle_size_range: (4, 6),
        member_prob: 0.6,
        noise_flip_prob: noise,
        n_biased_features: 2,
        seed,
        ..SyntheticSpec::default()
    }
}

/// Correlation graph, prototypes and forest of a small synthetic corpus.
pub fn opf_demo_json(seed: u64, m: usize, noise: f64) -> Result<String, String> {
    let (ds, gt) = corpus::generate_synthetic(&small_spec(seed, noise)).map_err(err)?;
    let corr = depgraph::pairwise_correlation(&ds);
    let primaries = depgraph::select_primaries(&corr, m).map_err(err)?;
    let forest = depgraph::build_opf(&corr, &primaries).map_err(err)?;
    let nodes: Vec<_> = (0..ds.n_features())
        .map(|j| {
            json!({
                "cluster": forest.cluster_of(j),
                "cost": forest.cost_of(j),
                "primary": primaries.contains(&j),
            })
        })
        .collect();
    let edges: Vec<_> = corr
        .edges()
        .into_iter()
        .filter(|e| e.2 >= 0.15)
        .map(|(i, j, w)| json!([i, j, w]))
        .collect();
    Ok(json!({
        "d": ds.n_features(),
        "nodes": nodes,
        "edges": edges,
        "malware_bundles": gt.malware_behaviors,
        "benign_bundles": gt.benign_behaviors,
        "biased": gt.biased_features,
    })
    .to_string())
}

fn curve_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        n_benign: 1800,
        n_malware: 200,
        d: 300,
        n_behaviors: 6,
        n_benign_behaviors: 10,
        bundle_size_range: (6, 14),
        n_biased_features: 8,
        seed,
        ..SyntheticSpec::default()
    }
}

/// Greedy evasion success rate against the original and robust detectors.
pub fn evasion_curves_json(seed: u64, m: usize, theta: f64) -> Result<String, String> {
    let (ds, _) = corpus::generate_synthetic(&curve_spec(seed)).map_err(err)?;
    let (train, test) = corpus::split(&ds, 0.8, seed).map_err(err)?;
    let m = if m == 0 {
        depgraph::default_m(train.n_features())
    } else {
        m
    };
    let t = RobustTransform::fit(&train, m, theta).map_err(err)?;
    let hp = Hyperparams {
        seed,
        ..Hyperparams::default()
    };
    let original = Pipeline::original(&train, &hp).map_err(err)?;
    let robust = Pipeline::robust(&train, t, &hp).map_err(err)?;
    let mut samples = Vec::new();
    for i in test.indices_of(Label::Malware) {
        let x = test.row(i);
        if original.predict(x).map_err(err)? == Label::Malware
            && robust.predict(x).map_err(err)? == Label::Malware
        {
            samples.push((i, x.to_vec()));
        }
    }
    if samples.is_empty() {
        return Err("no test malware is detected by both detectors".into());
    }
    let kind = AttackKind::Greedy {
        budget: *BUDGETS.last().unwrap(),
    };
    let mut out = serde_json::Map::new();
    for (name, p) in [("original", &original), ("robust", &robust)] {
        let runs = attacks::attack_all(p, &samples, &kind, None, seed).map_err(err)?;
        let clean = clean_metrics(p, &test).map_err(err)?;
        let curve: Vec<f64> = curve_from_runs(&runs, &BUDGETS)
            .iter()
            .map(|c| c.success_rate)
            .collect();
        out.insert(
            name.into(),
            json!({ "clean_accuracy": clean.accuracy, "curve": curve }),
        );
    }
    out.insert("budgets".into(), json!(BUDGETS));
    out.insert("samples".into(), json!(samples.len()));
    out.insert("m".into(), json!(m));
    Ok(serde_json::Value::Object(out).to_string())
}

#[wasm_bindgen]
pub fn explore_transform(costs: Vec<f64>, active: u32, theta: f64) -> Result<String, JsError> {
    explore_transform_json(&costs, active, theta).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn opf_demo(seed: u32, m: u32, noise: f64) -> Result<String, JsError> {
    opf_demo_json(seed as u64, m as usize, noise).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn evasion_curves(seed: u32, m: u32, theta: f64) -> Result<String, JsError> {
    evasion_curves_json(seed as u64, m as usize, theta).map_err(|e| JsError::new(&e))
}
