//! Forward and backward kernels for the tensor operations the network uses.
//!
//! Kernels parallelize over independent output planes only. Every output
//! element is accumulated by one thread in a fixed order, so results are
//! bitwise identical regardless of the rayon pool size.

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::scalar::Real;
use crate::tensor::{Shape, Tensor};

/// Output shape of a stride-1 convolution.
pub fn conv2d_output_shape(input: Shape, weight: Shape, padding: usize) -> Result<Shape> {
    if input.channels != weight.channels {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            left: input,
            right: weight,
        });
    }
    let (kh, kw) = (weight.height, weight.width);
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(invalid(
            "conv2d",
            format!("kernel size {kh}x{kw} must be odd"),
        ));
    }
    let h = input.height + 2 * padding;
    let w = input.width + 2 * padding;
    if h < kh || w < kw {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            left: input,
            right: weight,
        });
    }
    Ok(Shape::new(
        input.batch,
        weight.batch,
        h - (kh - 1),
        w - (kw - 1),
    ))
}

/// Valid output-column range for kernel column `k`: output `ox` reads input `ox + k - pad`.
#[inline]
fn col_range(k: usize, pad: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k);
    let hi = (in_len + pad).saturating_sub(k).min(out_len);
    (lo, hi.max(lo))
}

/// Stride-1 cross-correlation. `weight` is laid out (out_ch, in_ch, kh, kw);
/// `bias` holds one value per output channel.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &[T],
    padding: usize,
) -> Result<Tensor<T>> {
    let ws = weight.shape();
    let out_shape = conv2d_output_shape(input.shape(), ws, padding)?;
    if bias.len() != ws.batch {
        return Err(invalid(
            "conv2d",
            format!(
                "bias has {} entries for {} output channels",
                bias.len(),
                ws.batch
            ),
        ));
    }
    let is = input.shape();
    let (kh, kw) = (ws.height, ws.width);
    let (oh, ow) = (out_shape.height, out_shape.width);
    let out_ch = ws.batch;
    let wdata = weight.data();
    let idata = input.data();
    let mut out = Tensor::zeros(out_shape);
    out.data_mut()
        .par_chunks_mut(oh * ow)
        .enumerate()
        .for_each(|(plane_idx, out_plane)| {
            let n = plane_idx / out_ch;
            let o = plane_idx % out_ch;
            out_plane.fill(bias[o]);
            for c in 0..is.channels {
                let in_plane = &idata[(n * is.channels + c) * is.plane()..][..is.plane()];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = wdata[((o * is.channels + c) * kh + ky) * kw + kx];
                        let (x0, x1) = col_range(kx, padding, is.width, ow);
                        for oy in 0..oh {
                            let iy = oy + ky;
                            if iy < padding || iy - padding >= is.height {
                                continue;
                            }
                            let in_row = &in_plane[(iy - padding) * is.width..][..is.width];
                            let out_row = &mut out_plane[oy * ow..][..ow];
                            for ox in x0..x1 {
                                out_row[ox] += wv * in_row[ox + kx - padding];
                            }
                        }
                    }
                }
            }
        });
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    padding: usize,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Vec<T>) {
    let is = input.shape();
    let ws = weight.shape();
    let gs = grad_out.shape();
    let (kh, kw) = (ws.height, ws.width);
    let (oh, ow) = (gs.height, gs.width);
    let out_ch = ws.batch;
    let wdata = weight.data();
    let idata = input.data();
    let gdata = grad_out.data();

    let mut grad_in = Tensor::zeros(is);
    grad_in
        .data_mut()
        .par_chunks_mut(is.plane())
        .enumerate()
        .for_each(|(plane_idx, gin_plane)| {
            let n = plane_idx / is.channels;
            let c = plane_idx % is.channels;
            for o in 0..out_ch {
                let g_plane = &gdata[(n * out_ch + o) * oh * ow..][..oh * ow];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = wdata[((o * is.channels + c) * kh + ky) * kw + kx];
                        let (x0, x1) = col_range(kx, padding, is.width, ow);
                        for oy in 0..oh {
                            let iy = oy + ky;
                            if iy < padding || iy - padding >= is.height {
                                continue;
                            }
                            let gin_row = &mut gin_plane[(iy - padding) * is.width..][..is.width];
                            let g_row = &g_plane[oy * ow..][..ow];
                            for ox in x0..x1 {
                                gin_row[ox + kx - padding] += wv * g_row[ox];
                            }
                        }
                    }
                }
            }
        });

    let mut grad_w = Tensor::zeros(ws);
    let per_out = is.channels * kh * kw;
    grad_w
        .data_mut()
        .par_chunks_mut(per_out)
        .enumerate()
        .for_each(|(o, gw)| {
            for n in 0..is.batch {
                let g_plane = &gdata[(n * out_ch + o) * oh * ow..][..oh * ow];
                for c in 0..is.channels {
                    let in_plane = &idata[(n * is.channels + c) * is.plane()..][..is.plane()];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let (x0, x1) = col_range(kx, padding, is.width, ow);
                            let mut acc = T::zero();
                            for oy in 0..oh {
                                let iy = oy + ky;
                                if iy < padding || iy - padding >= is.height {
                                    continue;
                                }
                                let in_row = &in_plane[(iy - padding) * is.width..][..is.width];
                                let g_row = &g_plane[oy * ow..][..ow];
                                for ox in x0..x1 {
                                    acc += g_row[ox] * in_row[ox + kx - padding];
                                }
                            }
                            gw[(c * kh + ky) * kw + kx] += acc;
                        }
                    }
                }
            }
        });

    let grad_b = (0..out_ch)
        .map(|o| {
            let mut acc = T::zero();
            for n in 0..gs.batch {
                acc += gdata[(n * out_ch + o) * oh * ow..][..oh * ow]
                    .iter()
                    .copied()
                    .sum::<T>();
            }
            acc
        })
        .collect();

    (grad_in, grad_w, grad_b)
}

/// 2×2 max pooling with stride 2. Returns the pooled tensor and, for each
/// output element, the flat input index that supplied it (first max in scan order).
pub fn maxpool2d<T: Real>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let s = input.shape();
    if s.height % 2 != 0 || s.width % 2 != 0 {
        return Err(invalid(
            "maxpool2d",
            format!("spatial size {}x{} must be even", s.height, s.width),
        ));
    }
    let (oh, ow) = (s.height / 2, s.width / 2);
    let out_shape = Shape::new(s.batch, s.channels, oh, ow);
    let mut out = Tensor::zeros(out_shape);
    let mut argmax = vec![0usize; out_shape.numel()];
    let data = input.data();
    for nc in 0..s.batch * s.channels {
        let base = nc * s.plane();
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + (2 * oy) * s.width + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * s.width + 2 * ox + dx;
                    if data[i] > data[best] {
                        best = i;
                    }
                }
                let o = nc * oh * ow + oy * ow + ox;
                out.data_mut()[o] = data[best];
                argmax[o] = best;
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool2d_backward<T: Real>(
    input_shape: Shape,
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let mut g = Tensor::zeros(input_shape);
    let gd = g.data_mut();
    for (&src, &v) in argmax.iter().zip(grad_out.data()) {
        gd[src] += v;
    }
    g
}

/// Nearest-neighbour 2× spatial upsampling.
pub fn upsample2x<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    let s = input.shape();
    let out_shape = Shape::new(s.batch, s.channels, s.height * 2, s.width * 2);
    let mut out = Tensor::zeros(out_shape);
    let ow = out_shape.width;
    let src = input.data();
    let dst = out.data_mut();
    for nc in 0..s.batch * s.channels {
        let ib = nc * s.plane();
        let ob = nc * out_shape.plane();
        for y in 0..out_shape.height {
            for x in 0..ow {
                dst[ob + y * ow + x] = src[ib + (y / 2) * s.width + x / 2];
            }
        }
    }
    out
}

pub fn upsample2x_backward<T: Real>(input_shape: Shape, grad_out: &Tensor<T>) -> Tensor<T> {
    let mut g = Tensor::zeros(input_shape);
    let gs = grad_out.shape();
    let src = grad_out.data();
    let dst = g.data_mut();
    for nc in 0..input_shape.batch * input_shape.channels {
        let ib = nc * input_shape.plane();
        let ob = nc * gs.plane();
        for y in 0..gs.height {
            for x in 0..gs.width {
                dst[ib + (y / 2) * input_shape.width + x / 2] += src[ob + y * gs.width + x];
            }
        }
    }
    g
}

/// Concatenates along the channel axis; `a`'s channels come first.
pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if (sa.batch, sa.height, sa.width) != (sb.batch, sb.height, sb.width) {
        return Err(Error::ShapeMismatch {
            op: "concat_channels",
            left: sa,
            right: sb,
        });
    }
    let out_shape = Shape::new(sa.batch, sa.channels + sb.channels, sa.height, sa.width);
    let mut data = Vec::with_capacity(out_shape.numel());
    let (pa, pb) = (sa.channels * sa.plane(), sb.channels * sb.plane());
    for n in 0..sa.batch {
        data.extend_from_slice(&a.data()[n * pa..(n + 1) * pa]);
        data.extend_from_slice(&b.data()[n * pb..(n + 1) * pb]);
    }
    Tensor::from_vec(out_shape, data)
}

/// Splits a channel-concatenated gradient back into the two operand gradients.
pub fn concat_channels_backward<T: Real>(
    a_shape: Shape,
    b_shape: Shape,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let (pa, pb) = (
        a_shape.channels * a_shape.plane(),
        b_shape.channels * b_shape.plane(),
    );
    let mut ga = Vec::with_capacity(a_shape.numel());
    let mut gb = Vec::with_capacity(b_shape.numel());
    for n in 0..a_shape.batch {
        let base = n * (pa + pb);
        ga.extend_from_slice(&grad_out.data()[base..base + pa]);
        gb.extend_from_slice(&grad_out.data()[base + pa..base + pa + pb]);
    }
    (
        Tensor::from_vec(a_shape, ga).expect("concat grad a"),
        Tensor::from_vec(b_shape, gb).expect("concat grad b"),
    )
}

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| {
        if v > T::zero() || v.is_nan() {
            v
        } else {
            T::zero()
        }
    })
}

pub fn relu_backward<T: Real>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(input.shape(), data).expect("relu grad")
}

fn check_same(op: &'static str, a: &Tensor<impl Real>, b: &Tensor<impl Real>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

/// Mean Huber loss with transition point `delta`.
pub fn huber_loss<T: Real>(prediction: &Tensor<T>, target: &Tensor<T>, delta: T) -> Result<T> {
    check_same("huber_loss", prediction, target)?;
    let half = T::lit(0.5);
    let total: T = prediction
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let r = (p - t).abs();
            if r <= delta {
                half * r * r
            } else {
                delta * (r - half * delta)
            }
        })
        .sum();
    Ok(total / T::from_usize(prediction.numel()).unwrap())
}

/// d(mean Huber)/d(prediction), scaled by the upstream gradient `upstream`.
pub fn huber_loss_backward<T: Real>(
    prediction: &Tensor<T>,
    target: &Tensor<T>,
    delta: T,
    upstream: T,
) -> Tensor<T> {
    let scale = upstream / T::from_usize(prediction.numel()).unwrap();
    let data = prediction
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let r = p - t;
            r.max(-delta).min(delta) * scale
        })
        .collect();
    Tensor::from_vec(prediction.shape(), data).expect("huber grad")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Nested-loop cross-correlation with explicit zero padding.
    fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], pad: usize) -> Tensor<f64> {
        let xs = x.shape();
        let ws = w.shape();
        let oh = xs.height + 2 * pad + 1 - ws.height;
        let ow = xs.width + 2 * pad + 1 - ws.width;
        let mut out = Tensor::zeros(Shape::new(xs.batch, ws.batch, oh, ow));
        for n in 0..xs.batch {
            for o in 0..ws.batch {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut acc = b[o];
                        for c in 0..xs.channels {
                            for ky in 0..ws.height {
                                for kx in 0..ws.width {
                                    let iy = y as isize + ky as isize - pad as isize;
                                    let ix = xx as isize + kx as isize - pad as isize;
                                    if iy < 0
                                        || ix < 0
                                        || iy >= xs.height as isize
                                        || ix >= xs.width as isize
                                    {
                                        continue;
                                    }
                                    acc +=
                                        w.at(o, c, ky, kx) * x.at(n, c, iy as usize, ix as usize);
                                }
                            }
                        }
                        out.set(n, o, y, xx, acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_scaling_kernel() {
        let x = Tensor::full(Shape::new(1, 1, 3, 3), 1.0f64);
        let w = Tensor::full(Shape::new(1, 1, 1, 1), 2.0);
        let y = conv2d(&x, &w, &[0.0], 0).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 3, 3));
        assert!(y.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn conv_zero_kernel_gives_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f64>::uniform(Shape::new(2, 3, 6, 5), -1.0, 1.0, &mut rng);
        let w = Tensor::zeros(Shape::new(2, 3, 3, 3));
        let y = conv2d(&x, &w, &[0.25, -1.5], 1).unwrap();
        for n in 0..2 {
            assert!(y.plane(n, 0).iter().all(|&v| v == 0.25));
            assert!(y.plane(n, 1).iter().all(|&v| v == -1.5));
        }
    }

    #[test]
    fn conv_ramp_matches_loop_oracle() {
        let x = Tensor::from_vec(Shape::new(1, 1, 5, 5), (0..25).map(f64::from).collect()).unwrap();
        let w = Tensor::full(Shape::new(1, 1, 3, 3), 1.0);
        let y = conv2d(&x, &w, &[0.0], 1).unwrap();
        assert_eq!(y, conv_oracle(&x, &w, &[0.0], 1));
        // corner: 0 + 1 + 5 + 6
        assert_eq!(y.at(0, 0, 0, 0), 12.0);
        // centre: 9 × 12
        assert_eq!(y.at(0, 0, 2, 2), 108.0);
    }

    #[test]
    fn conv_random_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (pad, k) in [(0, 1), (1, 3), (0, 3), (2, 5), (2, 3)] {
            let x = Tensor::<f64>::uniform(Shape::new(2, 3, 7, 6), -1.0, 1.0, &mut rng);
            let w = Tensor::<f64>::uniform(Shape::new(4, 3, k, k), -1.0, 1.0, &mut rng);
            let b = [0.1, -0.2, 0.3, 0.0];
            let got = conv2d(&x, &w, &b, pad).unwrap();
            let want = conv_oracle(&x, &w, &b, pad);
            assert_eq!(got.shape(), want.shape());
            for (g, e) in got.data().iter().zip(want.data()) {
                assert!((g - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_channel_mismatch_names_both_shapes() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 2, 4, 4));
        let w = Tensor::<f64>::zeros(Shape::new(1, 3, 3, 3));
        let msg = conv2d(&x, &w, &[0.0], 1).unwrap_err().to_string();
        assert!(
            msg.contains("[1, 2, 4, 4]") && msg.contains("[1, 3, 3, 3]"),
            "{msg}"
        );
    }

    #[test]
    fn conv_rejects_even_kernel() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 1, 4, 4));
        let w = Tensor::<f64>::zeros(Shape::new(1, 1, 2, 2));
        assert!(conv2d(&x, &w, &[0.0], 0).is_err());
    }

    #[test]
    fn maxpool_basic() {
        let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let (y, idx) = maxpool2d(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(idx, vec![3]);
    }

    #[test]
    fn maxpool_constant_and_odd() {
        let x = Tensor::full(Shape::new(1, 2, 4, 6), 0.7f64);
        let (y, _) = maxpool2d(&x).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 2, 2, 3));
        assert!(y.data().iter().all(|&v| v == 0.7));
        assert!(maxpool2d(&Tensor::<f64>::zeros(Shape::new(1, 1, 3, 4))).is_err());
    }

    #[test]
    fn maxpool_matches_window_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::<f64>::uniform(Shape::new(1, 2, 8, 8), -1.0, 1.0, &mut rng);
        let (y, _) = maxpool2d(&x).unwrap();
        for c in 0..2 {
            for oy in 0..4 {
                for ox in 0..4 {
                    let mut m = f64::NEG_INFINITY;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            m = m.max(x.at(0, c, 2 * oy + dy, 2 * ox + dx));
                        }
                    }
                    assert_eq!(y.at(0, c, oy, ox), m);
                }
            }
        }
    }

    #[test]
    fn upsample_single_value_and_index_oracle() {
        let x = Tensor::full(Shape::new(1, 1, 1, 1), 7.0f64);
        let y = upsample2x(&x);
        assert_eq!(y.shape(), Shape::new(1, 1, 2, 2));
        assert!(y.data().iter().all(|&v| v == 7.0));

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::<f64>::uniform(Shape::new(1, 1, 4, 4), 0.0, 1.0, &mut rng);
        let y = upsample2x(&x);
        for i in 0..8 {
            for j in 0..8 {
                assert_eq!(y.at(0, 0, i, j), x.at(0, 0, i / 2, j / 2));
            }
        }
        let (p, _) = maxpool2d(&x).unwrap();
        assert_eq!(upsample2x(&p).shape(), x.shape());
    }

    #[test]
    fn concat_orders_and_checks() {
        let a = Tensor::full(Shape::new(2, 16, 3, 3), 1.0f64);
        let b = Tensor::full(Shape::new(2, 4, 3, 3), 2.0);
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.shape().channels, 20);
        for n in 0..2 {
            for k in 0..16 {
                assert_eq!(c.plane(n, k), a.plane(n, k));
            }
            for k in 0..4 {
                assert_eq!(c.plane(n, 16 + k), b.plane(n, k));
            }
        }
        let empty = Tensor::<f64>::zeros(Shape::new(2, 0, 3, 3));
        assert_eq!(concat_channels(&a, &empty).unwrap(), a);
        let bad = Tensor::<f64>::zeros(Shape::new(2, 4, 3, 4));
        assert!(concat_channels(&a, &bad).is_err());
    }

    #[test]
    fn relu_cases() {
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![-1.0f64, 0.0, 2.0]).unwrap();
        let y = relu(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        assert_eq!(relu(&y), y);
        let nan = Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![f64::NAN]).unwrap();
        assert!(relu(&nan).data()[0].is_nan());
    }

    #[test]
    fn huber_analytic_values() {
        let s = Shape::new(1, 2, 3, 3);
        let t = Tensor::<f64>::zeros(s);
        let half = Tensor::full(s, 0.5);
        let two = Tensor::full(s, 2.0);
        assert!((huber_loss(&half, &t, 1.0).unwrap() - 0.125).abs() < 1e-15);
        assert!((huber_loss(&two, &t, 1.0).unwrap() - 1.5).abs() < 1e-15);
        assert_eq!(huber_loss(&two, &two, 1.0).unwrap(), 0.0);
        assert!(huber_loss(&two, &Tensor::zeros(Shape::new(1, 1, 3, 3)), 1.0).is_err());
    }
}
