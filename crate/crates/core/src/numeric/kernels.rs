//! Untaped forward and backward kernels shared by the tape and by tests.

use super::tensor::{broadcast_shapes, strides_of, Tensor};
use super::TensorError;

/// Layer-norm epsilon.
pub const LAYER_NORM_EPS: f64 = 1e-5;

pub(crate) struct MatmulPlan {
    pub out_shape: Vec<usize>,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    /// (out batch, a batch, b batch) triples.
    pub batches: Vec<(usize, usize, usize)>,
}

pub(crate) fn matmul_plan(a: &[usize], b: &[usize]) -> Result<MatmulPlan, TensorError> {
    let mismatch = || TensorError::MatmulShape(a.to_vec(), b.to_vec());
    if a.len() < 2 || b.len() < 2 {
        return Err(mismatch());
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != k2 {
        return Err(mismatch());
    }
    let ba = &a[..a.len() - 2];
    let bb = &b[..b.len() - 2];
    let batch = broadcast_shapes(ba, bb).map_err(|_| mismatch())?;
    let nb: usize = batch.iter().product();
    let sa = super::tensor::broadcast_strides(ba, &batch);
    let sb = super::tensor::broadcast_strides(bb, &batch);
    let mut batches = Vec::with_capacity(nb);
    if batch.is_empty() {
        batches.push((0, 0, 0));
    } else {
        super::tensor::for_each_broadcast(&batch, &sa, &sb, |o, ia, ib| batches.push((o, ia, ib)));
    }
    let mut out_shape = batch;
    out_shape.push(m);
    out_shape.push(n);
    Ok(MatmulPlan {
        out_shape,
        m,
        k,
        n,
        batches,
    })
}

/// Batched matrix product with broadcasting over leading axes.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    let plan = matmul_plan(a.shape(), b.shape())?;
    let (m, k, n) = (plan.m, plan.k, plan.n);
    let mut out = vec![0.0; plan.out_shape.iter().product()];
    let (ad, bd) = (a.data(), b.data());
    for &(o, ia, ib) in &plan.batches {
        let am = &ad[ia * m * k..(ia + 1) * m * k];
        let bm = &bd[ib * k * n..(ib + 1) * k * n];
        let om = &mut out[o * m * n..(o + 1) * m * n];
        gemm_acc(am, bm, om, m, k, n);
    }
    Tensor::new(plan.out_shape, out)
}

/// `c += a · b` for row-major `a: m×k`, `b: k×n`.
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
}

/// `c += a · bᵀ` for `a: m×n`, `b: k×n`, `c: m×k`.
pub(crate) fn gemm_abt_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            c[i * k + p] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `c += aᵀ · b` for `a: m×k`, `b: m×n`, `c: k×n`.
pub(crate) fn gemm_atb_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
}

fn conv_dims(
    x: &[usize],
    w: &[usize],
) -> Result<(usize, usize, usize, usize, usize, usize), TensorError> {
    if x.len() != 4 || w.len() != 4 || w[1] != x[1] || w[2] != w[3] {
        return Err(TensorError::ConvShape(x.to_vec(), w.to_vec()));
    }
    if w[2].is_multiple_of(2) {
        return Err(TensorError::EvenKernel(w[2]));
    }
    Ok((x[0], x[1], x[2], x[3], w[0], w[2]))
}

/// Stride-1 2D convolution with zero padding `(r-1)/2`, preserving spatial extents.
///
/// `x: [B, Cin, H, W]`, `kernel: [Cout, Cin, r, r]` → `[B, Cout, H, W]`.
pub fn conv2d_same(x: &Tensor, kernel: &Tensor) -> Result<Tensor, TensorError> {
    let (bsz, cin, h, w, cout, r) = conv_dims(x.shape(), kernel.shape())?;
    let pad = (r / 2) as isize;
    let (xd, kd) = (x.data(), kernel.data());
    let mut out = vec![0.0; bsz * cout * h * w];
    for b in 0..bsz {
        for co in 0..cout {
            let o_base = (b * cout + co) * h * w;
            for ci in 0..cin {
                let x_base = (b * cin + ci) * h * w;
                let k_base = (co * cin + ci) * r * r;
                for dy in 0..r {
                    let oy = dy as isize - pad;
                    let (y0, y1) = valid_range(oy, h);
                    for dx in 0..r {
                        let wv = kd[k_base + dy * r + dx];
                        if wv == 0.0 {
                            continue;
                        }
                        let ox = dx as isize - pad;
                        let (x0, x1) = valid_range(ox, w);
                        for y in y0..y1 {
                            let sy = (y as isize + oy) as usize;
                            let orow = &mut out[o_base + y * w..o_base + (y + 1) * w];
                            let xrow = &xd[x_base + sy * w..x_base + (sy + 1) * w];
                            for xo in x0..x1 {
                                orow[xo] += wv * xrow[(xo as isize + ox) as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![bsz, cout, h, w], out)
}

/// Output rows `y` for which `y + offset` lies in `[0, extent)`.
fn valid_range(offset: isize, extent: usize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (extent as isize - offset).min(extent as isize).max(0) as usize;
    (lo.min(hi), hi)
}

/// Gradients of [`conv2d_same`] with respect to input and kernel.
pub fn conv2d_same_backward(
    x: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor), TensorError> {
    let (bsz, cin, h, w, cout, r) = conv_dims(x.shape(), kernel.shape())?;
    let pad = (r / 2) as isize;
    let (xd, kd, gd) = (x.data(), kernel.data(), grad_out.data());
    let mut gx = vec![0.0; xd.len()];
    let mut gk = vec![0.0; kd.len()];
    for b in 0..bsz {
        for co in 0..cout {
            let o_base = (b * cout + co) * h * w;
            for ci in 0..cin {
                let x_base = (b * cin + ci) * h * w;
                let k_base = (co * cin + ci) * r * r;
                for dy in 0..r {
                    let oy = dy as isize - pad;
                    let (y0, y1) = valid_range(oy, h);
                    for dx in 0..r {
                        let ox = dx as isize - pad;
                        let (x0, x1) = valid_range(ox, w);
                        let wv = kd[k_base + dy * r + dx];
                        let mut acc = 0.0;
                        for y in y0..y1 {
                            let sy = (y as isize + oy) as usize;
                            let grow = &gd[o_base + y * w..o_base + (y + 1) * w];
                            let xs = x_base + sy * w;
                            for xo in x0..x1 {
                                let sx = (xo as isize + ox) as usize;
                                acc += grow[xo] * xd[xs + sx];
                                gx[xs + sx] += grow[xo] * wv;
                            }
                        }
                        gk[k_base + dy * r + dx] += acc;
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), gx)?,
        Tensor::new(kernel.shape().to_vec(), gk)?,
    ))
}

/// Softmax over the last axis. `-inf` entries map to exactly zero.
pub fn softmax_lastdim(x: &Tensor) -> Result<Tensor, TensorError> {
    let n = *x.shape().last().expect("tensor has at least one axis");
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(n) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(TensorError::DegenerateSoftmax);
        }
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = if *v == f64::NEG_INFINITY {
                0.0
            } else {
                (*v - max).exp()
            };
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Normalized values and per-slice inverse standard deviations.
pub(crate) fn layer_norm_stats(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let d = *x.shape().last().expect("tensor has at least one axis");
    let mut xhat = Vec::with_capacity(x.len());
    let mut inv_std = Vec::with_capacity(x.len() / d);
    for row in x.data().chunks(d) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        xhat.extend(row.iter().map(|v| (v - mean) * is));
        inv_std.push(is);
    }
    (xhat, inv_std)
}

/// Layer normalization over the last axis with affine `gain` and `bias` of length `d`.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<Tensor, TensorError> {
    let d = *x.shape().last().expect("tensor has at least one axis");
    if gain.len() != d || bias.len() != d {
        return Err(TensorError::Broadcast(
            x.shape().to_vec(),
            gain.shape().to_vec(),
        ));
    }
    let (xhat, _) = layer_norm_stats(x);
    let data = xhat
        .chunks(d)
        .flat_map(|row| {
            row.iter()
                .zip(gain.data().iter().zip(bias.data()))
                .map(|(v, (g, b))| v * g + b)
        })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Permutes axes: output axis `i` is input axis `perm[i]`.
pub fn permute(x: &Tensor, perm: &[usize]) -> Result<Tensor, TensorError> {
    let nd = x.ndim();
    let mut seen = vec![false; nd];
    if perm.len() != nd
        || perm
            .iter()
            .any(|&p| p >= nd || std::mem::replace(&mut seen[p], true))
    {
        return Err(TensorError::Permutation(perm.to_vec(), x.shape().to_vec()));
    }
    let in_strides = strides_of(x.shape());
    let out_shape: Vec<usize> = perm.iter().map(|&p| x.shape()[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let zero = vec![0; nd];
    let mut out = vec![0.0; x.len()];
    let xd = x.data();
    super::tensor::for_each_broadcast(&out_shape, &src_strides, &zero, |o, s, _| out[o] = xd[s]);
    Tensor::new(out_shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.get(&[i, p]) * b.get(&[p, j]);
                }
                out.set(&[i, j], s);
            }
        }
        out
    }

    fn naive_conv(x: &Tensor, w: &Tensor) -> Tensor {
        let (bs, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (cout, r) = (w.shape()[0], w.shape()[2]);
        let p = (r / 2) as isize;
        let mut out = Tensor::zeros(&[bs, cout, h, wd]);
        for b in 0..bs {
            for co in 0..cout {
                for y in 0..h {
                    for xx in 0..wd {
                        let mut s = 0.0;
                        for ci in 0..cin {
                            for dy in 0..r {
                                for dx in 0..r {
                                    let sy = y as isize + dy as isize - p;
                                    let sx = xx as isize + dx as isize - p;
                                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                        continue;
                                    }
                                    s += x.get(&[b, ci, sy as usize, sx as usize])
                                        * w.get(&[co, ci, dy, dx]);
                                }
                            }
                        }
                        out.set(&[b, co, y, xx], s);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn matmul_identity_and_selection() {
        let b = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(matmul(&Tensor::eye(2), &b).unwrap(), b);
        let a = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let c = Tensor::from_rows(&[vec![5.0], vec![7.0]]).unwrap();
        assert_eq!(matmul(&a, &c).unwrap().data(), &[5.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Tensor::randn(&[3, 4], 1.0, &mut rng);
        let b = Tensor::randn(&[4, 2], 1.0, &mut rng);
        assert!(matmul(&a, &b).unwrap().max_abs_diff(&naive_matmul(&a, &b)) < 1e-12);
    }

    #[test]
    fn matmul_broadcasts_leading_axes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = Tensor::randn(&[2, 3, 4], 1.0, &mut rng);
        let b = Tensor::randn(&[4, 5], 1.0, &mut rng);
        let out = matmul(&a, &b).unwrap();
        assert_eq!(out.shape(), &[2, 3, 5]);
        let second = naive_matmul(&a.index_axis0(1), &b);
        assert!(out.index_axis0(1).max_abs_diff(&second) < 1e-12);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[4, 2])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn conv_delta_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::randn(&[2, 1, 5, 4], 1.0, &mut rng);
        let mut k = Tensor::zeros(&[1, 1, 3, 3]);
        k.set(&[0, 0, 1, 1], 1.0);
        assert_eq!(conv2d_same(&x, &k).unwrap(), x);
    }

    #[test]
    fn conv_one_by_one_scales() {
        let x = Tensor::full(&[1, 1, 3, 3], 3.0);
        let k = Tensor::full(&[1, 1, 1, 1], 2.0);
        assert_eq!(
            conv2d_same(&x, &k).unwrap(),
            Tensor::full(&[1, 1, 3, 3], 6.0)
        );
    }

    #[test]
    fn conv_matches_sliding_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Tensor::randn(&[1, 1, 4, 4], 1.0, &mut rng);
        let k = Tensor::randn(&[1, 1, 3, 3], 1.0, &mut rng);
        assert!(
            conv2d_same(&x, &k)
                .unwrap()
                .max_abs_diff(&naive_conv(&x, &k))
                < 1e-12
        );
        let x = Tensor::randn(&[2, 3, 5, 2], 1.0, &mut rng);
        let k = Tensor::randn(&[4, 3, 5, 5], 1.0, &mut rng);
        assert!(
            conv2d_same(&x, &k)
                .unwrap()
                .max_abs_diff(&naive_conv(&x, &k))
                < 1e-12
        );
    }

    #[test]
    fn conv_rejects_even_kernel() {
        let err = conv2d_same(&Tensor::zeros(&[1, 1, 4, 4]), &Tensor::zeros(&[1, 1, 2, 2]));
        assert!(matches!(err, Err(TensorError::EvenKernel(2))));
    }

    #[test]
    fn softmax_cases() {
        let u = softmax_lastdim(&Tensor::zeros(&[3])).unwrap();
        for v in u.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = Tensor::new(vec![3], vec![0.0, f64::NEG_INFINITY, f64::NEG_INFINITY]).unwrap();
        assert_eq!(softmax_lastdim(&x).unwrap().data(), &[1.0, 0.0, 0.0]);
        let x = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        let s = softmax_lastdim(&x).unwrap();
        for (i, v) in [1.0f64, 2.0, 3.0].iter().enumerate() {
            assert!((s.data()[i] - v.exp() / z).abs() < 1e-12);
        }
        let all_masked = Tensor::full(&[2], f64::NEG_INFINITY);
        assert!(matches!(
            softmax_lastdim(&all_masked),
            Err(TensorError::DegenerateSoftmax)
        ));
    }

    #[test]
    fn layer_norm_cases() {
        let g = Tensor::ones(&[2]);
        let b = Tensor::zeros(&[2]);
        let c = layer_norm(&Tensor::full(&[2], 4.0), &g, &b).unwrap();
        assert_eq!(c.data(), &[0.0, 0.0]);
        let y = layer_norm(&Tensor::new(vec![2], vec![1.0, -1.0]).unwrap(), &g, &b).unwrap();
        let expected = 1.0 / (1.0 + LAYER_NORM_EPS).sqrt();
        assert!((y.data()[0] - expected).abs() < 1e-15);
        assert!((y.data()[1] + expected).abs() < 1e-15);
        let y = layer_norm(
            &Tensor::new(vec![2], vec![1.0, -1.0]).unwrap(),
            &Tensor::zeros(&[2]),
            &Tensor::full(&[2], 5.0),
        )
        .unwrap();
        assert_eq!(y.data(), &[5.0, 5.0]);
    }

    #[test]
    fn permute_transposes() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let t = permute(&x, &[1, 0]).unwrap();
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert!(permute(&x, &[0, 0]).is_err());
    }
}
