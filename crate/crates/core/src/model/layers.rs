//! Building blocks of the forecaster, expressed as tape operations.

use log::warn;
use rand::Rng;

use crate::numeric::{Tape, Tensor, TensorError, Var};

/// Sinusoidal encoding `[len, d]`: even columns `sin(t·ω)`, odd columns `cos(t·ω)`,
/// with `ω = 1/10000^(2i/d)` shared by columns `2i` and `2i+1`.
pub fn positional_encoding(len: usize, d: usize) -> Tensor {
    let mut out = Tensor::zeros(&[len, d]);
    let data = out.data_mut();
    for t in 0..len {
        for i in (0..d).step_by(2) {
            let omega = 1.0 / 10000f64.powf(i as f64 / d as f64);
            let angle = t as f64 * omega;
            data[t * d + i] = angle.sin();
            if i + 1 < d {
                data[t * d + i + 1] = angle.cos();
            }
        }
    }
    out
}

/// Smallest multiple of `period` that is at least `total`.
pub fn padded_length(total: usize, period: usize) -> usize {
    total.div_ceil(period) * period
}

/// Folds `x: [B, total, d]` into `[B, d, p, L/p]` after zero-padding to `L`.
///
/// Entry `[b, c, j, n]` holds time step `n·p + j`: the axis of extent `p` is
/// the position within a period, the last axis counts periods.
pub fn pad_and_reshape(tape: &mut Tape, x: Var, period: usize) -> Result<Var, TensorError> {
    let shape = tape.shape(x).to_vec();
    let (b, total, d) = (shape[0], shape[1], shape[2]);
    let len = padded_length(total, period);
    let padded = tape.pad_zeros(x, 1, len - total)?;
    let cycles = tape.reshape(padded, &[b, len / period, period, d])?;
    tape.permute(cycles, &[0, 3, 2, 1])
}

/// Inverse of [`pad_and_reshape`], truncated back to `total` steps.
pub fn inverse_reshape(tape: &mut Tape, grid: Var, total: usize) -> Result<Var, TensorError> {
    let shape = tape.shape(grid).to_vec();
    let (b, d, p, n) = (shape[0], shape[1], shape[2], shape[3]);
    let back = tape.permute(grid, &[0, 3, 2, 1])?;
    let flat = tape.reshape(back, &[b, n * p, d])?;
    tape.narrow(flat, 1, 0, total)
}

/// Mean of same-padded convolutions of `grid` with each kernel.
pub fn inception_2d(tape: &mut Tape, grid: Var, kernels: &[Var]) -> Result<Var, TensorError> {
    let mut acc: Option<Var> = None;
    for &k in kernels {
        let y = tape.conv2d_same(grid, k)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, y)?,
            None => y,
        });
    }
    let sum = acc.ok_or(TensorError::ConvShape(tape.shape(grid).to_vec(), vec![]))?;
    Ok(tape.scale(sum, 1.0 / kernels.len() as f64))
}

/// Weight network of the branch fusion: `softmax(W2·relu(W1·u + b1) + b2)`.
#[derive(Debug, Clone, Copy)]
pub struct AggregatorVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// Fuses `branches` (`[B, L, d]` each) with weights `a ⊙ α` normalized per sample.
///
/// `amplitudes` is `[B, k]`. A sample whose total `Σ a·α` is below 1e-12 gets
/// uniform weights. Returns the fused tensor and the `[B, k]` weights.
pub fn adaptive_aggregate(
    tape: &mut Tape,
    branches: &[Var],
    amplitudes: Var,
    net: AggregatorVars,
) -> Result<(Var, Var), TensorError> {
    let k = branches.len();
    let shape = tape.shape(branches[0]).to_vec();
    let (b, len) = (shape[0], shape[1]);

    let mut summaries = Vec::with_capacity(k);
    for &y in branches {
        let last = tape.narrow(y, 1, len - 1, 1)?;
        let m = tape.mean_axis(last, 2)?;
        summaries.push(tape.reshape(m, &[b, 1])?);
    }
    let u = tape.concat(&summaries, 1)?;
    let hidden = tape.linear(u, net.w1, Some(net.b1))?;
    let hidden = tape.relu(hidden);
    let logits = tape.linear(hidden, net.w2, Some(net.b2))?;
    let alpha = tape.softmax(logits)?;

    let scores = tape.mul(amplitudes, alpha)?;
    let totals = tape.sum_axis(scores, 1)?;
    let keep: Vec<f64> = tape
        .value(totals)
        .data()
        .iter()
        .map(|&s| if s >= 1e-12 { 1.0 } else { 0.0 })
        .collect();
    let fallback = keep.iter().filter(|&&m| m == 0.0).count();
    let weights = if fallback == 0 {
        tape.div(scores, totals)?
    } else {
        warn!("{fallback} sample(s) with vanishing period weights, using uniform fusion");
        let mask = tape.constant(Tensor::new(vec![b, 1], keep.clone())?);
        let shift = tape.constant(Tensor::new(
            vec![b, 1],
            keep.iter().map(|m| 1.0 - m).collect(),
        )?);
        let uniform = tape.constant(Tensor::new(
            vec![b, 1],
            keep.iter().map(|m| (1.0 - m) / k as f64).collect(),
        )?);
        let safe = tape.add(totals, shift)?;
        let ratio = tape.div(scores, safe)?;
        let masked = tape.mul(ratio, mask)?;
        tape.add(masked, uniform)?
    };

    let mut out: Option<Var> = None;
    for (i, &y) in branches.iter().enumerate() {
        let wi = tape.narrow(weights, 1, i, 1)?;
        let wi = tape.reshape(wi, &[b, 1, 1])?;
        let term = tape.mul(y, wi)?;
        out = Some(match out {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
    }
    Ok((out.expect("at least one branch"), weights))
}

/// Additive attention mask: `0` on and below the diagonal, `−∞` above.
pub fn causal_mask(h: usize) -> Tensor {
    let mut m = Tensor::zeros(&[h, h]);
    for i in 0..h {
        for j in i + 1..h {
            m.set(&[i, j], f64::NEG_INFINITY);
        }
    }
    m
}

/// Projections of one masked self-attention sublayer.
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub bo: Var,
}

/// Causally masked multi-head self-attention over `x: [B, H, d]`.
pub fn masked_self_attention(
    tape: &mut Tape,
    x: Var,
    heads: usize,
    p: AttentionVars,
) -> Result<Var, TensorError> {
    let shape = tape.shape(x).to_vec();
    let (b, h, d) = (shape[0], shape[1], shape[2]);
    let dk = d / heads;
    let split = |tape: &mut Tape, v: Var, perm: &[usize]| -> Result<Var, TensorError> {
        let r = tape.reshape(v, &[b, h, heads, dk])?;
        tape.permute(r, perm)
    };
    let q = tape.matmul(x, p.wq)?;
    let k = tape.matmul(x, p.wk)?;
    let v = tape.matmul(x, p.wv)?;
    let q = split(tape, q, &[0, 2, 1, 3])?;
    let kt = split(tape, k, &[0, 2, 3, 1])?;
    let v = split(tape, v, &[0, 2, 1, 3])?;

    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / (dk as f64).sqrt());
    let mask = tape.constant(causal_mask(h));
    let scores = tape.add(scores, mask)?;
    let attn = tape.softmax(scores)?;
    let ctx = tape.matmul(attn, v)?;
    let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = tape.reshape(ctx, &[b, h, d])?;
    tape.linear(ctx, p.wo, Some(p.bo))
}

/// Inverted dropout with a mask drawn from `rng`; identity when `rng` is `None` or `rate` is 0.
pub fn dropout<R: Rng + ?Sized>(
    tape: &mut Tape,
    x: Var,
    rate: f64,
    rng: Option<&mut R>,
) -> Result<Var, TensorError> {
    let Some(rng) = rng else { return Ok(x) };
    if rate <= 0.0 {
        return Ok(x);
    }
    let shape = tape.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..n)
        .map(|_| {
            if rng.random::<f64>() < rate {
                0.0
            } else {
                keep
            }
        })
        .collect();
    let m = tape.constant(Tensor::new(shape, mask)?);
    tape.mul(x, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::conv2d_same;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq(shape: &[usize]) -> Tensor {
        let n = shape.iter().product::<usize>();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|i| i as f64 * 0.1 - 1.0).collect(),
        )
        .unwrap()
    }

    #[test]
    fn pe_first_row_alternates() {
        let pe = positional_encoding(4, 6);
        assert_eq!(&pe.data()[..6], &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert_eq!(pe.get(&[2, 0]), 2f64.sin());
        assert_eq!(pe.get(&[3, 3]), (3.0 / 10000f64.powf(2.0 / 6.0)).cos());
        let odd = positional_encoding(2, 3);
        assert_eq!(odd.get(&[1, 2]), (1.0 / 10000f64.powf(2.0 / 3.0)).sin());
    }

    #[test]
    fn reshape_grid_layout() {
        let mut tape = Tape::new();
        let x = tape.constant(seq(&[2, 50, 3]));
        let g = pad_and_reshape(&mut tape, x, 12).unwrap();
        assert_eq!(tape.shape(g), &[2, 3, 12, 5]);
        let xv = seq(&[2, 50, 3]);
        let gv = tape.value(g).clone();
        for b in 0..2 {
            for c in 0..3 {
                for j in 0..12 {
                    for n in 0..5 {
                        let t = n * 12 + j;
                        let want = if t < 50 { xv.get(&[b, t, c]) } else { 0.0 };
                        assert_eq!(gv.get(&[b, c, j, n]), want);
                    }
                }
            }
        }
        let back = inverse_reshape(&mut tape, g, 50).unwrap();
        assert_eq!(tape.value(back), &xv);
        assert_eq!(padded_length(48, 12), 48);
        assert_eq!(padded_length(50, 12), 60);
    }

    #[test]
    fn inception_identity_zero_and_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let grid = Tensor::randn(&[2, 3, 4, 5], 1.0, &mut rng);
        let mut ident = Tensor::zeros(&[3, 3, 1, 1]);
        for c in 0..3 {
            ident.set(&[c, c, 0, 0], 1.0);
        }
        let mut tape = Tape::new();
        let g = tape.constant(grid.clone());
        let k = tape.constant(ident);
        let y = inception_2d(&mut tape, g, &[k]).unwrap();
        assert_eq!(tape.value(y), &grid);

        let z = tape.constant(Tensor::zeros(&[3, 3, 3, 3]));
        let y = inception_2d(&mut tape, g, &[z]).unwrap();
        assert!(tape.value(y).data().iter().all(|v| *v == 0.0));

        let k1 = Tensor::randn(&[3, 3, 1, 1], 1.0, &mut rng);
        let k3 = Tensor::randn(&[3, 3, 3, 3], 1.0, &mut rng);
        let (v1, v3) = (tape.constant(k1.clone()), tape.constant(k3.clone()));
        let y = inception_2d(&mut tape, g, &[v1, v3]).unwrap();
        let oracle = conv2d_same(&grid, &k1)
            .unwrap()
            .zip_map(&conv2d_same(&grid, &k3).unwrap(), |a, b| (a + b) / 2.0);
        assert!(tape.value(y).max_abs_diff(&oracle) < 1e-12);
    }

    fn agg_vars(tape: &mut Tape, k: usize, rng: &mut ChaCha8Rng, zero: bool) -> AggregatorVars {
        let std = if zero { 0.0 } else { 1.0 };
        AggregatorVars {
            w1: tape.constant(Tensor::randn(&[k, k], std, rng)),
            b1: tape.constant(Tensor::zeros(&[k])),
            w2: tape.constant(Tensor::randn(&[k, k], std, rng)),
            b2: tape.constant(Tensor::zeros(&[k])),
        }
    }

    #[test]
    fn aggregation_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut tape = Tape::new();
        let y = Tensor::randn(&[2, 6, 3], 1.0, &mut rng);
        let yv = tape.constant(y.clone());

        // single branch
        let net = agg_vars(&mut tape, 1, &mut rng, false);
        let a = tape.constant(Tensor::new(vec![2, 1], vec![0.3, 7.0]).unwrap());
        let (out, w) = adaptive_aggregate(&mut tape, &[yv], a, net).unwrap();
        assert!(tape.value(out).max_abs_diff(&y) < 1e-15);
        assert!(tape
            .value(w)
            .data()
            .iter()
            .all(|v| (*v - 1.0).abs() < 1e-15));

        // identical branches
        let net = agg_vars(&mut tape, 3, &mut rng, false);
        let a = tape.constant(Tensor::uniform(&[2, 3], 0.1, 2.0, &mut rng));
        let (out, w) = adaptive_aggregate(&mut tape, &[yv, yv, yv], a, net).unwrap();
        assert!(tape.value(out).max_abs_diff(&y) < 1e-12);
        for row in tape.value(w).data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|v| *v >= 0.0));
        }

        // symmetric weights
        let net = agg_vars(&mut tape, 3, &mut rng, true);
        let other = tape.constant(Tensor::randn(&[2, 6, 3], 1.0, &mut rng));
        let a = tape.constant(Tensor::full(&[2, 3], 0.5));
        let (_, w) = adaptive_aggregate(&mut tape, &[yv, other, yv], a, net).unwrap();
        assert!(tape
            .value(w)
            .data()
            .iter()
            .all(|v| (*v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn aggregation_fallback_is_uniform_per_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tape = Tape::new();
        let b1 = tape.constant(Tensor::randn(&[2, 4, 2], 1.0, &mut rng));
        let b2 = tape.constant(Tensor::randn(&[2, 4, 2], 1.0, &mut rng));
        let net = agg_vars(&mut tape, 2, &mut rng, false);
        let a = tape.constant(Tensor::new(vec![2, 2], vec![0.0, 0.0, 1.0, 3.0]).unwrap());
        let (_, w) = adaptive_aggregate(&mut tape, &[b1, b2], a, net).unwrap();
        let w = tape.value(w).data().to_vec();
        assert_eq!(&w[..2], &[0.5, 0.5]);
        assert!((w[2] + w[3] - 1.0).abs() < 1e-12 && w[3] > w[2]);
    }

    #[test]
    fn mask_shape() {
        let m = causal_mask(3);
        let inf = f64::NEG_INFINITY;
        assert_eq!(m.data(), &[0.0, inf, inf, 0.0, 0.0, inf, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn uniform_attention_averages_prefix() {
        // zero query/key projections give uniform scores over the unmasked prefix
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::randn(&[1, 4, 2], 1.0, &mut rng);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let p = AttentionVars {
            wq: tape.constant(Tensor::zeros(&[2, 2])),
            wk: tape.constant(Tensor::zeros(&[2, 2])),
            wv: tape.constant(Tensor::eye(2)),
            wo: tape.constant(Tensor::eye(2)),
            bo: tape.constant(Tensor::zeros(&[2])),
        };
        let y = masked_self_attention(&mut tape, xv, 1, p).unwrap();
        let yv = tape.value(y);
        for i in 0..4 {
            for c in 0..2 {
                let avg = (0..=i).map(|j| x.get(&[0, j, c])).sum::<f64>() / (i + 1) as f64;
                assert!((yv.get(&[0, i, c]) - avg).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn dropout_scales_kept_entries() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[1000]));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = dropout(&mut tape, x, 0.2, Some(&mut rng)).unwrap();
        let v = tape.value(y).data();
        assert!(v.iter().all(|e| *e == 0.0 || (*e - 1.25).abs() < 1e-15));
        let kept = v.iter().filter(|e| **e > 0.0).count();
        assert!((700..900).contains(&kept));
        let same = dropout::<ChaCha8Rng>(&mut tape, x, 0.2, None).unwrap();
        assert_eq!(same, x);
    }
}
