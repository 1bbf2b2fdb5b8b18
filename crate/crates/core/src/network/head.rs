//! Image embedder: affine → LayerNorm → ReLU → Dropout blocks followed by
//! a final affine map into the shared space.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;

use super::init_uniform;
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `in × out`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Array1<f64>,
    pub shift: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageHeadParams {
    pub linears: Vec<Linear>,
    /// One per hidden block, i.e. `linears.len() - 1`.
    pub norms: Vec<LayerNorm>,
    pub dropout: f64,
}

impl ImageHeadParams {
    /// `dims = [F, hidden..., d]`; three entries-long chains give the
    /// three-layer head.
    pub fn init<R: Rng>(dims: &[usize], dropout: f64, rng: &mut R) -> Self {
        let linears = dims
            .windows(2)
            .map(|w| Linear {
                weight: init_uniform(w[0], w[1], rng),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        let norms = dims[1..dims.len() - 1]
            .iter()
            .map(|&n| LayerNorm {
                gain: Array1::ones(n),
                shift: Array1::zeros(n),
            })
            .collect();
        ImageHeadParams {
            linears,
            norms,
            dropout,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.linears.first().map_or(0, |l| l.weight.nrows())
    }

    pub fn output_dim(&self) -> usize {
        self.linears.last().map_or(0, |l| l.weight.ncols())
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.linears.iter().map(|l| l.weight.ncols()));
        dims
    }
}

#[derive(Debug, Clone)]
struct BlockCache {
    input: Array2<f64>,
    normalized: Array2<f64>,
    inv_std: Array1<f64>,
    /// LayerNorm output before ReLU.
    pre_relu: Array2<f64>,
    /// Inverted-dropout multipliers (0 or 1/(1-p)); `None` when inactive.
    mask: Option<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    blocks: Vec<BlockCache>,
    last_input: Array2<f64>,
}

fn layer_norm(z: &Array2<f64>, ln: &LayerNorm) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    let n = z.ncols() as f64;
    let mean = z.sum_axis(Axis(1)) / n;
    let centred = z - &mean.view().insert_axis(Axis(1));
    let var = centred.mapv(|x| x * x).sum_axis(Axis(1)) / n;
    let inv_std = var.mapv(|v| 1.0 / (v + LAYER_NORM_EPS).sqrt());
    let normalized = &centred * &inv_std.view().insert_axis(Axis(1));
    let out = &normalized * &ln.gain + &ln.shift;
    (out, normalized, inv_std)
}

impl HeadCache {
    /// Inputs to each ReLU, one matrix per block.
    pub fn relu_inputs(&self) -> impl Iterator<Item = &Array2<f64>> {
        self.blocks.iter().map(|b| &b.pre_relu)
    }
}

/// Embeds a batch of features (rows). `rng` is only drawn from in
/// [`Phase::Train`] with positive dropout.
pub fn head_forward<R: Rng>(
    x: &Array2<f64>,
    params: &ImageHeadParams,
    phase: Phase,
    rng: &mut R,
) -> Result<(Array2<f64>, HeadCache)> {
    if x.ncols() != params.input_dim() {
        return Err(Error::Dimension {
            context: "image feature".into(),
            expected: params.input_dim(),
            found: x.ncols(),
        });
    }
    let p = params.dropout;
    let mut h = x.clone();
    let mut blocks = Vec::with_capacity(params.norms.len());
    let n_blocks = params.linears.len() - 1;
    for i in 0..n_blocks {
        let lin = &params.linears[i];
        let z = h.dot(&lin.weight) + &lin.bias;
        let (pre_relu, normalized, inv_std) = layer_norm(&z, &params.norms[i]);
        let mut out = pre_relu.mapv(|v| v.max(0.0));
        let mask = if phase == Phase::Train && p > 0.0 {
            let keep = 1.0 / (1.0 - p);
            let m = Array2::from_shape_fn(out.raw_dim(), |_| {
                if rng.random::<f64>() < p {
                    0.0
                } else {
                    keep
                }
            });
            out *= &m;
            Some(m)
        } else {
            None
        };
        blocks.push(BlockCache {
            input: h,
            normalized,
            inv_std,
            pre_relu,
            mask,
        });
        h = out;
    }
    let last = &params.linears[n_blocks];
    let y = h.dot(&last.weight) + &last.bias;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("image head produced non-finite output".into()));
    }
    Ok((
        y,
        HeadCache {
            blocks,
            last_input: h,
        },
    ))
}

/// Embeds one feature vector.
pub fn image_embed<R: Rng>(
    feature: ArrayView1<'_, f64>,
    params: &ImageHeadParams,
    phase: Phase,
    rng: &mut R,
) -> Result<Array1<f64>> {
    let x = feature.to_owned().insert_axis(Axis(0));
    let (y, _) = head_forward(&x, params, phase, rng)?;
    Ok(y.row(0).to_owned())
}

/// Parameter gradients of the head, shaped like [`ImageHeadParams`].
pub fn head_backward(
    params: &ImageHeadParams,
    cache: &HeadCache,
    d_out: &Array2<f64>,
) -> ImageHeadParams {
    let n_blocks = params.linears.len() - 1;
    let mut linears = Vec::with_capacity(params.linears.len());
    let mut norms = Vec::with_capacity(n_blocks);

    let last = &params.linears[n_blocks];
    linears.push(Linear {
        weight: cache.last_input.t().dot(d_out),
        bias: d_out.sum_axis(Axis(0)),
    });
    let mut d_h = d_out.dot(&last.weight.t());

    for i in (0..n_blocks).rev() {
        let b = &cache.blocks[i];
        if let Some(m) = &b.mask {
            d_h *= m;
        }
        let d_ln = ndarray::Zip::from(&d_h)
            .and(&b.pre_relu)
            .map_collect(|&g, &v| if v > 0.0 { g } else { 0.0 });
        let ln = &params.norms[i];
        let d_gain = (&d_ln * &b.normalized).sum_axis(Axis(0));
        let d_shift = d_ln.sum_axis(Axis(0));
        let d_norm = &d_ln * &ln.gain;
        let n = d_norm.ncols() as f64;
        let mean_d = d_norm.sum_axis(Axis(1)) / n;
        let mean_dx = (&d_norm * &b.normalized).sum_axis(Axis(1)) / n;
        let d_z = (&d_norm
            - &mean_d.insert_axis(Axis(1))
            - &(&b.normalized * &mean_dx.insert_axis(Axis(1))))
            * &b.inv_std.view().insert_axis(Axis(1));
        let lin = &params.linears[i];
        linears.push(Linear {
            weight: b.input.t().dot(&d_z),
            bias: d_z.sum_axis(Axis(0)),
        });
        norms.push(LayerNorm {
            gain: d_gain,
            shift: d_shift,
        });
        d_h = d_z.dot(&lin.weight.t());
    }
    linears.reverse();
    norms.reverse();
    ImageHeadParams {
        linears,
        norms,
        dropout: params.dropout,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_input_to_layer_norm_yields_shift() {
        let ln = LayerNorm {
            gain: array![2.0, 3.0, 4.0],
            shift: array![0.1, -0.2, 0.3],
        };
        let (out, normalized, _) = layer_norm(&array![[5.0, 5.0, 5.0]], &ln);
        assert!(normalized.iter().all(|&v| v == 0.0));
        assert_eq!(out, array![[0.1, -0.2, 0.3]]);
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ImageHeadParams::init(&[4, 6, 6, 3], 0.5, &mut rng);
        let x = array![0.3, -1.0, 2.0, 0.5];
        let a = image_embed(x.view(), &p, Phase::Eval, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = image_embed(x.view(), &p, Phase::Eval, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn train_mode_draws_dropout_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ImageHeadParams::init(&[4, 32, 32, 3], 0.5, &mut rng);
        let x = array![0.3, -1.0, 2.0, 0.5];
        let a = image_embed(x.view(), &p, Phase::Train, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = image_embed(x.view(), &p, Phase::Train, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn wrong_feature_width_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ImageHeadParams::init(&[4, 6, 6, 3], 0.0, &mut rng);
        let x = array![1.0, 2.0];
        assert!(matches!(
            image_embed(x.view(), &p, Phase::Eval, &mut rng),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn matches_straight_line_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = ImageHeadParams::init(&[3, 4, 4, 2], 0.0, &mut rng);
        for n in &mut p.norms {
            n.gain.mapv_inplace(|_| rng.random::<f64>() + 0.5);
            n.shift.mapv_inplace(|_| rng.random::<f64>() - 0.5);
        }
        for l in &mut p.linears {
            l.bias.mapv_inplace(|_| rng.random::<f64>() - 0.5);
        }
        let x = vec![0.7, -0.2, 1.3];
        let got = image_embed(ndarray::aview1(&x), &p, Phase::Eval, &mut rng).unwrap();

        // Oracle: scalar loops, one block at a time.
        let affine = |h: &[f64], l: &Linear| -> Vec<f64> {
            (0..l.weight.ncols())
                .map(|j| l.bias[j] + (0..h.len()).map(|i| h[i] * l.weight[[i, j]]).sum::<f64>())
                .collect()
        };
        let mut h = x.clone();
        for b in 0..2 {
            let z = affine(&h, &p.linears[b]);
            let n = z.len() as f64;
            let mu = z.iter().sum::<f64>() / n;
            let var = z.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
            h = z
                .iter()
                .enumerate()
                .map(|(j, v)| {
                    let y = p.norms[b].gain[j] * (v - mu) / (var + LAYER_NORM_EPS).sqrt()
                        + p.norms[b].shift[j];
                    y.max(0.0)
                })
                .collect();
        }
        let want = affine(&h, &p.linears[2]);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }
}
