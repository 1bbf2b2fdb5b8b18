//! Cosine compatibility, prediction and retrieval.

use std::cmp::Ordering;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::dataio::Pair;
use crate::error::{Error, Result};

/// `yᵀz / (‖y‖ ‖z‖)`.
pub fn compatibility(y: ArrayView1<'_, f64>, z: ArrayView1<'_, f64>) -> Result<f64> {
    if y.len() != z.len() {
        return Err(Error::Dimension {
            context: "compatibility".into(),
            expected: y.len(),
            found: z.len(),
        });
    }
    let ny = y.dot(&y).sqrt();
    let nz = z.dot(&z).sqrt();
    if !(ny > 0.0 && nz > 0.0) {
        return Err(Error::Numeric("cosine of a zero-norm embedding".into()));
    }
    Ok((y.dot(&z) / (ny * nz)).clamp(-1.0, 1.0))
}

fn row_norms(m: ArrayView2<'_, f64>, what: &str) -> Result<Array1<f64>> {
    let norms = m.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    if let Some(i) = norms.iter().position(|&n| !(n > 0.0) || !n.is_finite()) {
        return Err(Error::Numeric(format!("{what} row {i} has zero norm")));
    }
    Ok(norms)
}

/// Cosine of every row of `images` against every row of `classes`.
pub fn cosine_scores(images: ArrayView2<'_, f64>, classes: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    cosine_forward(images, classes).map(|c| c.scores)
}

/// Normalized operands kept for [`cosine_backward`].
#[derive(Debug, Clone)]
pub struct CosineCache {
    pub scores: Array2<f64>,
    unit_images: Array2<f64>,
    unit_classes: Array2<f64>,
    image_norms: Array1<f64>,
    class_norms: Array1<f64>,
}

pub fn cosine_forward(images: ArrayView2<'_, f64>, classes: ArrayView2<'_, f64>) -> Result<CosineCache> {
    let image_norms = row_norms(images, "image embedding")?;
    let class_norms = row_norms(classes, "class embedding")?;
    let unit_images = &images / &image_norms.view().insert_axis(Axis(1));
    let unit_classes = &classes / &class_norms.view().insert_axis(Axis(1));
    let scores = unit_images.dot(&unit_classes.t());
    Ok(CosineCache {
        scores,
        unit_images,
        unit_classes,
        image_norms,
        class_norms,
    })
}

/// Gradients w.r.t. the unnormalized image and class rows.
pub fn cosine_backward(cache: &CosineCache, d_scores: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let through_unit = |unit: &Array2<f64>, d_unit: Array2<f64>, norms: &Array1<f64>| {
        let radial = (&d_unit * unit).sum_axis(Axis(1));
        (d_unit - &(unit * &radial.insert_axis(Axis(1)))) / &norms.view().insert_axis(Axis(1))
    };
    let d_img = d_scores.dot(&cache.unit_classes);
    let d_cls = d_scores.t().dot(&cache.unit_images);
    (
        through_unit(&cache.unit_images, d_img, &cache.image_norms),
        through_unit(&cache.unit_classes, d_cls, &cache.class_norms),
    )
}

/// Argmax over the candidate columns; ties go to the lowest column.
pub fn predict(row: ArrayView1<'_, f64>, candidates: &[bool]) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (j, (&v, &ok)) in row.iter().zip(candidates).enumerate() {
        if ok && best.is_none_or(|b| v > row[b]) {
            best = Some(j);
        }
    }
    best.ok_or_else(|| Error::Validation("no candidate composition to predict".into()))
}

/// Argmax restricted to seen columns and columns whose feasibility exceeds
/// `tau`. A threshold at or below -1 excludes nothing; an empty restriction
/// falls back to all candidates.
pub fn predict_hard(
    row: ArrayView1<'_, f64>,
    feasibility: &[f64],
    tau: f64,
    seen: &[bool],
    candidates: &[bool],
) -> Result<usize> {
    if tau <= -1.0 {
        return predict(row, candidates);
    }
    let kept: Vec<bool> = candidates
        .iter()
        .zip(seen)
        .zip(feasibility)
        .map(|((&c, &s), &rho)| c && (s || rho > tau))
        .collect();
    if kept.iter().any(|&k| k) {
        predict(row, &kept)
    } else {
        predict(row, candidates)
    }
}

/// The `k` images closest in cosine to `query`, best first, ties by index.
pub fn retrieve(query: ArrayView1<'_, f64>, images: ArrayView2<'_, f64>, k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let scores = cosine_scores(images, query.insert_axis(Axis(0)))?;
    let mut order: Vec<usize> = (0..images.nrows()).collect();
    order.sort_by(|&a, &b| {
        scores[[b, 0]]
            .partial_cmp(&scores[[a, 0]])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(k);
    Ok(order)
}

/// Scores of samples (rows) against composition columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub scores: Array2<f64>,
    pub columns: Vec<Pair>,
}

impl ScoreMatrix {
    pub fn predict_row(&self, i: usize, candidates: &[bool]) -> Result<Pair> {
        predict(self.scores.row(i), candidates).map(|j| self.columns[j])
    }
}
