use ndarray::Array2;
use rand::Rng;

use super::init_uniform;
use crate::error::{Error, Result};
use crate::graph::CompositionalGraph;

/// Weights of an `L`-layer graph convolution `V_{l+1} = σ(Â V_l W_l)`.
/// ReLU follows every layer but the last.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnParams {
    pub weights: Vec<Array2<f64>>,
}

impl GcnParams {
    /// `dims = [m, hidden..., d]`.
    pub fn init<R: Rng>(dims: &[usize], rng: &mut R) -> Self {
        GcnParams {
            weights: dims.windows(2).map(|w| init_uniform(w[0], w[1], rng)).collect(),
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims: Vec<usize> = self.weights.iter().map(|w| w.nrows()).collect();
        dims.extend(self.weights.last().map(|w| w.ncols()));
        dims
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().map_or(0, |w| w.ncols())
    }

    fn check_chain(&self, input_dim: usize) -> Result<()> {
        let mut d = input_dim;
        for (l, w) in self.weights.iter().enumerate() {
            if w.nrows() != d {
                return Err(Error::Dimension {
                    context: format!("gcn layer {l} input"),
                    expected: d,
                    found: w.nrows(),
                });
            }
            d = w.ncols();
        }
        Ok(())
    }
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GcnCache {
    /// `Â V_l` per layer.
    aggregated: Vec<Array2<f64>>,
    /// `Â V_l W_l` per layer, before activation.
    pre_activation: Vec<Array2<f64>>,
}

impl GcnCache {
    /// Inputs to each ReLU, one matrix per hidden layer.
    pub fn relu_inputs(&self) -> impl Iterator<Item = &Array2<f64>> {
        let n = self.pre_activation.len().saturating_sub(1);
        self.pre_activation.iter().take(n)
    }
}

pub fn gcn_forward(graph: &CompositionalGraph, params: &GcnParams) -> Result<Array2<f64>> {
    gcn_forward_cached(&graph.normalized, &graph.v0, params).map(|(out, _)| out)
}

pub fn gcn_forward_cached(
    a_hat: &Array2<f64>,
    v0: &Array2<f64>,
    params: &GcnParams,
) -> Result<(Array2<f64>, GcnCache)> {
    params.check_chain(v0.ncols())?;
    let n_layers = params.weights.len();
    let mut cache = GcnCache {
        aggregated: Vec::with_capacity(n_layers),
        pre_activation: Vec::with_capacity(n_layers),
    };
    let mut v = v0.clone();
    for (l, w) in params.weights.iter().enumerate() {
        let agg = a_hat.dot(&v);
        let h = agg.dot(w);
        if h.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("gcn layer {l} produced non-finite output")));
        }
        v = if l + 1 < n_layers {
            h.mapv(|x| x.max(0.0))
        } else {
            h.clone()
        };
        cache.aggregated.push(agg);
        cache.pre_activation.push(h);
    }
    Ok((v, cache))
}

/// Gradients of the GCN weights given the gradient of the output rows.
pub fn gcn_backward(
    a_hat: &Array2<f64>,
    params: &GcnParams,
    cache: &GcnCache,
    d_out: &Array2<f64>,
) -> Vec<Array2<f64>> {
    let n_layers = params.weights.len();
    let mut grads = vec![Array2::zeros((0, 0)); n_layers];
    let mut d_h = d_out.clone();
    for l in (0..n_layers).rev() {
        grads[l] = cache.aggregated[l].t().dot(&d_h);
        if l > 0 {
            let d_agg = d_h.dot(&params.weights[l].t());
            let d_v = a_hat.t().dot(&d_agg);
            let mask = &cache.pre_activation[l - 1];
            d_h = ndarray::Zip::from(&d_v)
                .and(mask)
                .map_collect(|&g, &h| if h > 0.0 { g } else { 0.0 });
        }
    }
    grads
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_single_node() {
        let a = array![[1.0]];
        let v0 = array![[2.0, 0.0]];
        let p = GcnParams {
            weights: vec![Array2::eye(2)],
        };
        let (out, _) = gcn_forward_cached(&a, &v0, &p).unwrap();
        assert_eq!(out, array![[2.0, 0.0]]);
    }

    #[test]
    fn relu_between_layers_only() {
        let a = array![[1.0]];
        let v0 = array![[1.0, 1.0]];
        // Layer 1 produces (-1, 2); ReLU zeroes the first entry; layer 2 negates.
        let p = GcnParams {
            weights: vec![array![[-1.0, 1.0], [0.0, 1.0]], array![[-1.0, 0.0], [0.0, -1.0]]],
        };
        let (out, cache) = gcn_forward_cached(&a, &v0, &p).unwrap();
        assert_eq!(cache.pre_activation[0], array![[-1.0, 2.0]]);
        assert_eq!(out, array![[0.0, -2.0]]);
    }

    #[test]
    fn matches_straight_line_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = 8;
        let a: Array2<f64> = Array2::from_shape_fn((k, k), |_| rng.random::<f64>());
        let v0: Array2<f64> = Array2::from_shape_fn((k, 3), |_| rng.random::<f64>() - 0.5);
        let p = GcnParams::init(&[3, 5, 4], &mut rng);
        let (out, _) = gcn_forward_cached(&a, &v0, &p).unwrap();

        // Oracle: explicit triple loops.
        let matmul = |x: &Vec<Vec<f64>>, y: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            (0..x.len())
                .map(|i| {
                    (0..y[0].len())
                        .map(|j| (0..y.len()).map(|t| x[i][t] * y[t][j]).sum())
                        .collect()
                })
                .collect()
        };
        let to_vec = |m: &Array2<f64>| m.outer_iter().map(|r| r.to_vec()).collect::<Vec<_>>();
        let av = to_vec(&a);
        let h1: Vec<Vec<f64>> = matmul(&matmul(&av, &to_vec(&v0)), &to_vec(&p.weights[0]))
            .into_iter()
            .map(|r| r.into_iter().map(|x| x.max(0.0)).collect())
            .collect();
        let h2 = matmul(&matmul(&av, &h1), &to_vec(&p.weights[1]));
        for i in 0..k {
            for j in 0..4 {
                assert!((out[[i, j]] - h2[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn broken_chain_is_dimension_error() {
        let a = array![[1.0]];
        let v0 = array![[1.0, 1.0]];
        let p = GcnParams {
            weights: vec![Array2::eye(3)],
        };
        assert!(matches!(
            gcn_forward_cached(&a, &v0, &p),
            Err(Error::Dimension { .. })
        ));
    }
}
