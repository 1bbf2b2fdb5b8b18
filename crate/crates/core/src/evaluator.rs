//! Calibrated generalized evaluation.
//!
//! A scalar bias is added to every unseen column. As the bias grows, rows
//! switch from their best seen to their best unseen candidate; the sweep
//! visits each switching point of an unseen-labelled row plus both
//! infinite endpoints, which attains every optimum a dense sweep can.

use std::fmt::Write as _;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::dataio::{SampleSet, Vocabulary};
use crate::error::{Error, Result};
use crate::feasibility::FeasibilityTable;
use crate::graph::{CompositionalGraph, World};
use crate::network::{score_samples, ModelParams, ScoreMatrix};

mod bias_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) if t == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad bias '{t}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    #[serde(with = "bias_serde")]
    pub bias: f64,
    pub seen_acc: f64,
    pub unseen_acc: f64,
}

impl CurvePoint {
    pub fn harmonic_mean(&self) -> f64 {
        let (s, u) = (self.seen_acc, self.unseen_acc);
        if s + u > 0.0 {
            2.0 * s * u / (s + u)
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub world: World,
    pub curve: Vec<CurvePoint>,
    pub best_seen: f64,
    pub best_unseen: f64,
    pub best_hm: f64,
    #[serde(with = "bias_serde")]
    pub best_hm_bias: f64,
    pub auc: f64,
    /// Hard-mask threshold, if one was applied.
    pub tau: Option<f64>,
}

impl EvalReport {
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("bias,seen_acc,unseen_acc\n");
        for p in &self.curve {
            let _ = writeln!(out, "{},{},{}", p.bias, p.seen_acc, p.unseen_acc);
        }
        out
    }
}

struct RowChoice {
    /// Best seen and unseen candidate column, lowest index on ties.
    best_seen: Option<usize>,
    best_unseen: Option<usize>,
    /// Bias at and above which the unseen candidate wins.
    switch_at: f64,
}

fn row_choices(scores: ArrayView2<'_, f64>, seen_cols: &[bool], candidates: &[bool]) -> Vec<RowChoice> {
    scores
        .outer_iter()
        .map(|row| {
            let mut bs: Option<usize> = None;
            let mut bu: Option<usize> = None;
            for (j, &v) in row.iter().enumerate() {
                if !candidates[j] {
                    continue;
                }
                let slot = if seen_cols[j] { &mut bs } else { &mut bu };
                if slot.is_none_or(|b| v > row[b]) {
                    *slot = Some(j);
                }
            }
            let switch_at = match (bs, bu) {
                (Some(s), Some(u)) => row[s] - row[u],
                (None, _) => f64::NEG_INFINITY,
                (Some(_), None) => f64::INFINITY,
            };
            RowChoice {
                best_seen: bs,
                best_unseen: bu,
                switch_at,
            }
        })
        .collect()
}

fn predicted(choice: &RowChoice, bias: f64) -> Option<usize> {
    match (choice.best_seen, choice.best_unseen) {
        (s, None) => s,
        (None, u) => u,
        (Some(s), Some(u)) => Some(if bias >= choice.switch_at { u } else { s }),
    }
}

/// Seen/unseen accuracy at each candidate bias. `labels` are composition
/// columns; a label excluded from `candidates` is always counted wrong.
pub fn calibration_curve(
    scores: ArrayView2<'_, f64>,
    labels: &[usize],
    seen_cols: &[bool],
    candidates: &[bool],
) -> Result<Vec<CurvePoint>> {
    if labels.len() != scores.nrows() {
        return Err(Error::Dimension {
            context: "labels".into(),
            expected: scores.nrows(),
            found: labels.len(),
        });
    }
    let n_seen_rows = labels.iter().filter(|&&l| seen_cols[l]).count();
    let n_unseen_rows = labels.len() - n_seen_rows;
    if n_seen_rows == 0 || n_unseen_rows == 0 {
        return Err(Error::Validation(
            "evaluation needs both seen-labelled and unseen-labelled samples".into(),
        ));
    }
    let choices = row_choices(scores, seen_cols, candidates);

    let mut biases: Vec<f64> = labels
        .iter()
        .zip(&choices)
        .filter(|(&l, _)| !seen_cols[l])
        .map(|(_, c)| c.switch_at)
        .filter(|b| b.is_finite())
        .collect();
    biases.push(f64::NEG_INFINITY);
    biases.push(f64::INFINITY);
    biases.sort_by(f64::total_cmp);
    biases.dedup();

    Ok(biases
        .into_iter()
        .map(|bias| {
            let (mut hit_seen, mut hit_unseen) = (0usize, 0usize);
            for (&label, choice) in labels.iter().zip(&choices) {
                if predicted(choice, bias) == Some(label) {
                    if seen_cols[label] {
                        hit_seen += 1;
                    } else {
                        hit_unseen += 1;
                    }
                }
            }
            CurvePoint {
                bias,
                seen_acc: hit_seen as f64 / n_seen_rows as f64,
                unseen_acc: hit_unseen as f64 / n_unseen_rows as f64,
            }
        })
        .collect())
}

/// Area under the seen-vs-unseen accuracy curve: trapezoids over the
/// Pareto frontier of (unseen, seen) points, from unseen accuracy 0 (at the
/// seen accuracy of the leftmost frontier point) to its maximum.
pub fn auc(curve: &[CurvePoint]) -> f64 {
    let mut pts: Vec<(f64, f64)> = curve.iter().map(|p| (p.unseen_acc, p.seen_acc)).collect();
    if pts.is_empty() {
        return 0.0;
    }
    pts.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1)));
    let mut frontier: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for (u, s) in pts {
        if frontier.last().is_none_or(|&(_, best)| s > best) {
            frontier.push((u, s));
        }
    }
    frontier.reverse();
    let mut area = 0.0;
    let mut prev = (0.0, frontier[0].1);
    for &(u, s) in &frontier {
        area += (u - prev.0) * (s + prev.1) / 2.0;
        prev = (u, s);
    }
    area
}

/// Summarizes a curve into a report.
pub fn report_from_curve(curve: Vec<CurvePoint>, world: World, tau: Option<f64>) -> EvalReport {
    let best_seen = curve.iter().map(|p| p.seen_acc).fold(0.0, f64::max);
    let best_unseen = curve.iter().map(|p| p.unseen_acc).fold(0.0, f64::max);
    let (best_hm, best_hm_bias) = curve
        .iter()
        .map(|p| (p.harmonic_mean(), p.bias))
        .fold((0.0, f64::NEG_INFINITY), |acc, x| if x.0 > acc.0 { x } else { acc });
    EvalReport {
        auc: auc(&curve),
        world,
        curve,
        best_seen,
        best_unseen,
        best_hm,
        best_hm_bias,
        tau,
    }
}

/// Columns, labels and seen flags for scoring `samples` on `graph`.
pub struct EvalProblem {
    pub scores: ScoreMatrix,
    pub labels: Vec<usize>,
    pub seen_cols: Vec<bool>,
}

impl EvalProblem {
    pub fn new(scores: ScoreMatrix, samples: &SampleSet, vocab: &Vocabulary) -> Result<Self> {
        let labels = samples
            .labels
            .iter()
            .map(|&p| {
                scores.columns.iter().position(|&c| c == p).ok_or_else(|| {
                    Error::Validation(format!(
                        "label '{}' is not a candidate composition",
                        vocab.pair_name(p)
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let seen_cols = scores.columns.iter().map(|&p| vocab.is_seen(p)).collect();
        Ok(EvalProblem {
            scores,
            labels,
            seen_cols,
        })
    }

    /// Candidate mask after hard masking: unseen columns with `ρ <= tau`
    /// are dropped; `tau <= -1` keeps everything.
    pub fn candidates(&self, hard_mask: Option<(&FeasibilityTable, f64)>) -> Vec<bool> {
        match hard_mask {
            Some((table, tau)) if tau > -1.0 => self
                .scores
                .columns
                .iter()
                .zip(&self.seen_cols)
                .map(|(&p, &s)| s || table.score(p) > tau)
                .collect(),
            _ => vec![true; self.seen_cols.len()],
        }
    }

    pub fn report(&self, world: World, hard_mask: Option<(&FeasibilityTable, f64)>) -> Result<EvalReport> {
        let cands = self.candidates(hard_mask);
        let curve = calibration_curve(self.scores.scores.view(), &self.labels, &self.seen_cols, &cands)?;
        Ok(report_from_curve(curve, world, hard_mask.map(|(_, t)| t)))
    }
}

/// Scores `samples` with the model on `graph` and runs the calibrated
/// sweep, optionally hard-masking unseen columns.
pub fn evaluate(
    params: &ModelParams,
    graph: &CompositionalGraph,
    temperature: f64,
    samples: &SampleSet,
    vocab: &Vocabulary,
    hard_mask: Option<(&FeasibilityTable, f64)>,
) -> Result<EvalReport> {
    let scores = score_samples(params, graph, temperature, &samples.features)?;
    EvalProblem::new(scores, samples, vocab)?.report(graph.index.world(), hard_mask)
}

/// Threshold maximizing validation best-HM over -1 and the distinct
/// feasibility values of unseen columns; ties keep the smaller threshold.
pub fn select_tau(problem: &EvalProblem, feasibility: &FeasibilityTable) -> Result<f64> {
    let mut grid: Vec<f64> = problem
        .scores
        .columns
        .iter()
        .zip(&problem.seen_cols)
        .filter(|(_, &s)| !s)
        .map(|(&p, _)| feasibility.score(p))
        .collect();
    grid.push(-1.0);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let mut best = (f64::NEG_INFINITY, -1.0);
    for tau in grid {
        let hm = problem.report(World::Open, Some((feasibility, tau)))?.best_hm;
        if hm > best.0 {
            best = (hm, tau);
        }
    }
    Ok(best.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn pt(u: f64, s: f64) -> CurvePoint {
        CurvePoint {
            bias: 0.0,
            seen_acc: s,
            unseen_acc: u,
        }
    }

    #[test]
    fn perfect_scorer_reaches_the_corner() {
        // Columns 0,1 seen; 2,3 unseen. True column strictly max in each row.
        let scores = array![
            [0.9, 0.1, 0.2, 0.0],
            [0.1, 0.8, 0.3, 0.2],
            [0.1, 0.2, 0.9, 0.3],
            [0.0, 0.1, 0.2, 0.7]
        ];
        let curve =
            calibration_curve(scores.view(), &[0, 1, 2, 3], &[true, true, false, false], &[true; 4])
                .unwrap();
        assert!(curve.iter().any(|p| p.seen_acc == 1.0 && p.unseen_acc == 1.0));
        assert_eq!(auc(&curve), 1.0);
        let last = curve.last().unwrap();
        assert_eq!(last.bias, f64::INFINITY);
        assert_eq!(last.seen_acc, 0.0);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[pt(0.0, 1.0), pt(1.0, 1.0), pt(1.0, 0.0)]), 1.0);
        assert_eq!(auc(&[pt(0.0, 0.0), pt(0.5, 0.0)]), 0.0);
        // Hand-computed polygon: (0,0.8) -> (0.5,0.6) -> (1,0).
        let a = auc(&[pt(0.0, 0.8), pt(0.5, 0.6), pt(1.0, 0.0)]);
        assert!((a - (0.5 * 0.7 + 0.5 * 0.3)).abs() < 1e-15);
        // Dominated point and duplicates do not change the area.
        let b = auc(&[pt(0.0, 0.8), pt(0.5, 0.6), pt(0.5, 0.6), pt(0.25, 0.1), pt(1.0, 0.0)]);
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn needs_both_groups() {
        let scores = array![[0.9, 0.1]];
        assert!(calibration_curve(scores.view(), &[0], &[true, false], &[true; 2]).is_err());
    }

    #[test]
    fn masked_label_counts_as_error() {
        let scores = array![[0.9, 0.1, 0.5], [0.2, 0.1, 0.6]];
        let curve =
            calibration_curve(scores.view(), &[0, 2], &[true, false, false], &[true, true, false])
                .unwrap();
        assert!(curve.iter().all(|p| p.unseen_acc == 0.0));
    }

    #[test]
    fn report_json_round_trips_infinite_biases() {
        let scores = array![[0.9, 0.1], [0.3, 0.6]];
        let curve = calibration_curve(scores.view(), &[0, 1], &[true, false], &[true; 2]).unwrap();
        let r = report_from_curve(curve, World::Open, None);
        let back: EvalReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
        assert!(r.curve_csv().contains("-inf,"));
    }
}
