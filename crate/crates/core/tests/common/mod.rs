#![allow(dead_code)]

use rand::Rng;
use rfs_core::depgraph::{self, CorrelationMatrix, ISOLATED_COST};
use rfs_core::rng::StreamRng;

/// Random symmetric graph with weights on a 0.1 grid so that ties are common.
pub fn random_graph(rng: &mut StreamRng, d: usize) -> CorrelationMatrix {
    let density = if d >= 10 {
        rng.random_range(0.15..0.35)
    } else {
        rng.random_range(0.2..0.7)
    };
    let mut w = vec![0.0; d * d];
    for i in 0..d {
        for j in i + 1..d {
            if rng.random_bool(density) {
                let v = rng.random_range(1..=10) as f64 / 10.0;
                w[i * d + j] = v;
                w[j * d + i] = v;
            }
        }
    }
    CorrelationMatrix::from_dense(d, w).unwrap()
}

pub fn random_primaries(rng: &mut StreamRng, d: usize) -> Vec<usize> {
    let m = rng.random_range(1..=d.min(4));
    let mut p = rand::seq::index::sample(rng, d, m).into_vec();
    p.sort_unstable();
    p
}

/// Widest simple path from `start` by exhaustive enumeration; prototypes other
/// than `start` may not be visited.
fn enumerate(
    corr: &CorrelationMatrix,
    blocked: &[bool],
    node: usize,
    bottleneck: f64,
    on_path: &mut Vec<bool>,
    best: &mut [f64],
) {
    for next in 0..corr.d() {
        let w = corr.get(node, next);
        if next == node || w <= 0.0 || on_path[next] || blocked[next] {
            continue;
        }
        let b = bottleneck.min(w);
        if b > best[next] {
            best[next] = b;
        }
        on_path[next] = true;
        enumerate(corr, blocked, next, b, on_path, best);
        on_path[next] = false;
    }
}

/// Expected (cluster, cost) for every feature.
pub fn brute_force_opf(corr: &CorrelationMatrix, primaries: &[usize]) -> Vec<(usize, f64)> {
    let d = corr.d();
    let mut result: Vec<Option<(usize, f64)>> = vec![None; d];
    for (c, &p) in primaries.iter().enumerate() {
        result[p] = Some((c, 1.0));
    }
    let mut reach: Vec<Vec<f64>> = Vec::new();
    for &p in primaries {
        let mut blocked = vec![false; d];
        for &q in primaries {
            blocked[q] = q != p;
        }
        let mut on_path = vec![false; d];
        on_path[p] = true;
        let mut best = vec![0.0; d];
        enumerate(corr, &blocked, p, f64::INFINITY, &mut on_path, &mut best);
        reach.push(best);
    }
    for f in 0..d {
        if result[f].is_some() {
            continue;
        }
        // strict comparison keeps the lowest cluster on ties
        let mut pick = (0, 0.0);
        for (c, best) in reach.iter().enumerate() {
            if best[f] > pick.1 {
                pick = (c, best[f]);
            }
        }
        result[f] = Some(if pick.1 > 0.0 {
            pick
        } else {
            (0, ISOLATED_COST)
        });
    }
    result.into_iter().map(Option::unwrap).collect()
}

/// Runs `n` random cases; returns a description of the first mismatch.
pub fn opf_oracle_check(n: usize, seed: u64) -> Result<(), String> {
    let mut rng = rfs_core::rng::seeded(seed);
    for case in 0..n {
        let d = rng.random_range(2..=12);
        let corr = random_graph(&mut rng, d);
        let primaries = random_primaries(&mut rng, d);
        let forest = depgraph::build_opf(&corr, &primaries).map_err(|e| e.to_string())?;
        let expected = brute_force_opf(&corr, &primaries);
        for (f, &(cluster, cost)) in expected.iter().enumerate() {
            let got = forest.assignment()[f];
            if got.cluster != cluster || got.cost != cost {
                return Err(format!(
                    "case {case} (d={d}, primaries {primaries:?}) feature {f}: expected cluster {cluster} cost {cost}, got cluster {} cost {}",
                    got.cluster, got.cost
                ));
            }
        }
    }
    Ok(())
}

/// Coverage of the random cases: (non-prototype features, isolated ones, ones
/// that at least two prototypes reach at the winning bottleneck on their own).
pub fn oracle_coverage(n: usize, seed: u64) -> (usize, usize, usize) {
    let mut rng = rfs_core::rng::seeded(seed);
    let (mut total, mut isolated, mut tied) = (0, 0, 0);
    for _ in 0..n {
        let d = rng.random_range(2..=12);
        let corr = random_graph(&mut rng, d);
        let primaries = random_primaries(&mut rng, d);
        let expected = brute_force_opf(&corr, &primaries);
        for (f, &(_, cost)) in expected.iter().enumerate() {
            if primaries.contains(&f) {
                continue;
            }
            total += 1;
            if cost == ISOLATED_COST {
                isolated += 1;
                continue;
            }
            let mut reach = 0;
            for &p in &primaries {
                let one = brute_force_opf(&corr, &[p]);
                if one[f].1 == cost {
                    reach += 1;
                }
            }
            if reach > 1 {
                tied += 1;
            }
        }
    }
    (total, isolated, tied)
}
