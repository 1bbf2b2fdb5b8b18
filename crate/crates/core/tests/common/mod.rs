//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use ndarray::Array2;

/// Seen/unseen accuracy when `bias` is added to every unseen column and the
/// plain argmax (lowest index on ties) is taken over `candidates`.
pub fn accuracies_at(
    scores: &Array2<f64>,
    labels: &[usize],
    seen: &[bool],
    candidates: &[bool],
    bias: f64,
) -> (f64, f64) {
    let (mut hs, mut ns, mut hu, mut nu) = (0.0, 0.0, 0.0, 0.0);
    for (i, &label) in labels.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..scores.ncols() {
            if !candidates[j] {
                continue;
            }
            let v = scores[[i, j]] + if seen[j] { 0.0 } else { bias };
            if best.is_none() || v > best.unwrap().1 {
                best = Some((j, v));
            }
        }
        let hit = best.map(|b| b.0) == Some(label);
        if seen[label] {
            ns += 1.0;
            hs += f64::from(u8::from(hit));
        } else {
            nu += 1.0;
            hu += f64::from(u8::from(hit));
        }
    }
    (hs / ns, hu / nu)
}

/// Curve points `(seen_acc, unseen_acc)` over a dense bias grid that
/// avoids rational breakpoints, plus two far endpoints.
pub fn dense_sweep(
    scores: &Array2<f64>,
    labels: &[usize],
    seen: &[bool],
    candidates: &[bool],
    n: usize,
) -> Vec<(f64, f64)> {
    let phase = (5f64.sqrt() - 1.0) / 2.0;
    let mut biases: Vec<f64> = (0..n).map(|i| -2.5 + 5.0 * (i as f64 + phase) / n as f64).collect();
    biases.push(-10.0);
    biases.push(10.0);
    biases
        .into_iter()
        .map(|b| accuracies_at(scores, labels, seen, candidates, b))
        .collect()
}

pub struct OracleMetrics {
    pub best_seen: f64,
    pub best_unseen: f64,
    pub best_hm: f64,
    pub auc: f64,
}

/// Metrics of a list of `(seen, unseen)` points. AUC integrates the
/// non-dominated points by trapezoids in unseen accuracy, starting flat at 0.
pub fn oracle_metrics(points: &[(f64, f64)]) -> OracleMetrics {
    let best_seen = points.iter().map(|p| p.0).fold(0.0, f64::max);
    let best_unseen = points.iter().map(|p| p.1).fold(0.0, f64::max);
    let best_hm = points
        .iter()
        .map(|&(s, u)| if s + u > 0.0 { 2.0 * s * u / (s + u) } else { 0.0 })
        .fold(0.0, f64::max);
    let mut frontier: Vec<(f64, f64)> = Vec::new();
    for &(s, u) in points {
        let dominated = points
            .iter()
            .any(|&(s2, u2)| (s2 >= s && u2 >= u) && (s2 > s || u2 > u));
        if !dominated && !frontier.contains(&(u, s)) {
            frontier.push((u, s));
        }
    }
    frontier.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut auc = frontier[0].0 * frontier[0].1;
    for w in frontier.windows(2) {
        auc += (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0;
    }
    OracleMetrics {
        best_seen,
        best_unseen,
        best_hm,
        auc,
    }
}

/// Norm-relative error between two gradient tensors.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na + nb < 1e-12 {
        0.0
    } else {
        diff / (na + nb)
    }
}

/// Line printed for every acceptance criterion.
pub fn report(id: &str, name: &str, pass: bool, detail: &str) {
    println!(
        "criterion {id} [{name}]: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
}
