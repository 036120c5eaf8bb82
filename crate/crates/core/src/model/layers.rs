//! Layer primitives with explicit forward and backward passes.

use super::tensor::{Scalar, Tensor};

/// Instance-norm epsilon.
pub const NORM_EPS: f64 = 1e-5;

/// Geometry of a square-kernel convolution with `pad = k / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
}

impl ConvShape {
    #[inline]
    pub fn pad(&self) -> usize {
        self.k / 2
    }

    #[inline]
    pub fn out_size(&self, size: usize) -> usize {
        (size + 2 * self.pad() - self.k) / self.stride + 1
    }

    #[inline]
    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }
}

/// Unfold `x` into a `(cin * k * k) x (ho * wo)` matrix.
fn im2col<T: Scalar>(x: &Tensor<T>, s: &ConvShape, ho: usize, wo: usize) -> Vec<T> {
    let (k, pad, stride) = (s.k, s.pad() as isize, s.stride);
    let mut col = vec![T::zero(); s.cin * k * k * ho * wo];
    for ci in 0..s.cin {
        let plane = x.channel(ci);
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * stride) as isize + ky as isize - pad;
                    if iy < 0 || iy >= x.h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * x.w..(iy as usize + 1) * x.w];
                    let dst_row = &mut dst[oy * wo..(oy + 1) * wo];
                    if stride == 1 {
                        // Contiguous span of valid columns.
                        let lo = (pad - kx as isize).max(0) as usize;
                        let hi =
                            ((x.w as isize + pad - kx as isize).min(wo as isize)).max(0) as usize;
                        if lo < hi {
                            let start = (lo as isize + kx as isize - pad) as usize;
                            dst_row[lo..hi].copy_from_slice(&src_row[start..start + hi - lo]);
                        }
                    } else {
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            let ix = (ox * stride) as isize + kx as isize - pad;
                            if ix >= 0 && ix < x.w as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

/// Fold a column matrix back onto the input grid, accumulating overlaps.
fn col2im<T: Scalar>(
    col: &[T],
    s: &ConvShape,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
) -> Tensor<T> {
    let (k, pad, stride) = (s.k, s.pad() as isize, s.stride);
    let mut dx = Tensor::zeros(s.cin, h, w);
    for ci in 0..s.cin {
        let plane = &mut dx.data[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * stride) as isize + ky as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * stride) as isize + kx as isize - pad;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
    dx
}

fn is_pointwise(s: &ConvShape) -> bool {
    s.k == 1 && s.stride == 1
}

/// Convolution: weight `[cout, cin, k, k]`, bias `[cout]`.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, weight: &[T], bias: &[T], s: &ConvShape) -> Tensor<T> {
    assert_eq!(x.c, s.cin, "conv input channels");
    assert_eq!(weight.len(), s.weight_len(), "conv weight size");
    assert_eq!(bias.len(), s.cout, "conv bias size");
    let (ho, wo) = (s.out_size(x.h), s.out_size(x.w));
    let hw = ho * wo;
    let mut out = Tensor::zeros(s.cout, ho, wo);
    for (o, b) in bias.iter().enumerate() {
        out.data[o * hw..(o + 1) * hw].fill(*b);
    }
    let kk = s.cin * s.k * s.k;
    if is_pointwise(s) {
        T::gemm(
            s.cout,
            kk,
            hw,
            weight,
            false,
            &x.data,
            false,
            &mut out.data,
            T::one(),
        );
    } else {
        let col = im2col(x, s, ho, wo);
        T::gemm(
            s.cout,
            kk,
            hw,
            weight,
            false,
            &col,
            false,
            &mut out.data,
            T::one(),
        );
    }
    out
}

/// Accumulates weight and bias gradients; returns the input gradient when asked.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &[T],
    s: &ConvShape,
    d_out: &Tensor<T>,
    d_weight: &mut [T],
    d_bias: &mut [T],
    need_input_grad: bool,
) -> Option<Tensor<T>> {
    let (ho, wo) = (d_out.h, d_out.w);
    let hw = ho * wo;
    let kk = s.cin * s.k * s.k;
    for (o, db) in d_bias.iter_mut().enumerate() {
        let mut acc = T::zero();
        for &g in &d_out.data[o * hw..(o + 1) * hw] {
            acc += g;
        }
        *db += acc;
    }
    if is_pointwise(s) {
        T::gemm(
            s.cout,
            hw,
            kk,
            &d_out.data,
            false,
            &x.data,
            true,
            d_weight,
            T::one(),
        );
        if !need_input_grad {
            return None;
        }
        let mut dx = Tensor::zeros(s.cin, x.h, x.w);
        T::gemm(
            kk,
            s.cout,
            hw,
            weight,
            true,
            &d_out.data,
            false,
            &mut dx.data,
            T::zero(),
        );
        return Some(dx);
    }
    let col = im2col(x, s, ho, wo);
    T::gemm(
        s.cout,
        hw,
        kk,
        &d_out.data,
        false,
        &col,
        true,
        d_weight,
        T::one(),
    );
    if !need_input_grad {
        return None;
    }
    let mut d_col = col;
    T::gemm(
        kk,
        s.cout,
        hw,
        weight,
        true,
        &d_out.data,
        false,
        &mut d_col,
        T::zero(),
    );
    Some(col2im(&d_col, s, x.h, x.w, ho, wo))
}

/// Saved statistics of an instance-norm call.
#[derive(Debug, Clone)]
pub struct NormCache<T> {
    pub x_hat: Tensor<T>,
    pub inv_std: Vec<T>,
}

/// Per-channel normalization over the spatial plane, then `gamma * x_hat + beta`.
pub fn instance_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
) -> (Tensor<T>, NormCache<T>) {
    let p = x.plane();
    let n = T::of(p as f64);
    let eps = T::of(NORM_EPS);
    let mut x_hat = Tensor::zeros(x.c, x.h, x.w);
    let mut y = Tensor::zeros(x.c, x.h, x.w);
    let mut inv_std = Vec::with_capacity(x.c);
    for ch in 0..x.c {
        let src = x.channel(ch);
        let mut mean = T::zero();
        for &v in src {
            mean += v;
        }
        mean = mean / n;
        let mut var = T::zero();
        for &v in src {
            let d = v - mean;
            var += d * d;
        }
        var = var / n;
        let is = T::one() / (var + eps).sqrt();
        inv_std.push(is);
        let (g, b) = (gamma[ch], beta[ch]);
        let xh = &mut x_hat.data[ch * p..(ch + 1) * p];
        let yy = &mut y.data[ch * p..(ch + 1) * p];
        for i in 0..p {
            let v = (src[i] - mean) * is;
            xh[i] = v;
            yy[i] = g * v + b;
        }
    }
    (y, NormCache { x_hat, inv_std })
}

pub fn instance_norm_backward<T: Scalar>(
    cache: &NormCache<T>,
    gamma: &[T],
    d_y: &Tensor<T>,
    d_gamma: &mut [T],
    d_beta: &mut [T],
) -> Tensor<T> {
    let x_hat = &cache.x_hat;
    let p = x_hat.plane();
    let n = T::of(p as f64);
    let mut dx = Tensor::zeros(x_hat.c, x_hat.h, x_hat.w);
    for ch in 0..x_hat.c {
        let xh = x_hat.channel(ch);
        let dy = d_y.channel(ch);
        let (mut sum_dy, mut sum_dy_xh) = (T::zero(), T::zero());
        for i in 0..p {
            sum_dy += dy[i];
            sum_dy_xh += dy[i] * xh[i];
        }
        d_gamma[ch] += sum_dy_xh;
        d_beta[ch] += sum_dy;
        // With d_xhat = gamma * dy the usual three-term expression factors
        // gamma out of both sums.
        let g = gamma[ch];
        let scale = g * cache.inv_std[ch] / n;
        let dst = &mut dx.data[ch * p..(ch + 1) * p];
        for i in 0..p {
            dst[i] = scale * (n * dy[i] - sum_dy - xh[i] * sum_dy_xh);
        }
    }
    dx
}

/// ELU with `alpha = 1`.
#[inline]
pub fn elu<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        v.exp() - T::one()
    }
}

/// ELU derivative expressed through its output.
#[inline]
pub fn elu_grad_from_output<T: Scalar>(y: T) -> T {
    if y > T::zero() {
        T::one()
    } else {
        y + T::one()
    }
}

#[inline]
pub fn leaky_relu<T: Scalar>(v: T, slope: T) -> T {
    if v > T::zero() {
        v
    } else {
        v * slope
    }
}

/// LeakyReLU derivative expressed through its output (`slope > 0`).
#[inline]
pub fn leaky_relu_grad_from_output<T: Scalar>(y: T, slope: T) -> T {
    if y > T::zero() {
        T::one()
    } else {
        slope
    }
}

/// Nearest-neighbour upsampling by two.
pub fn upsample2<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (h2, w2) = (x.h * 2, x.w * 2);
    let mut out = Tensor::zeros(x.c, h2, w2);
    for ch in 0..x.c {
        let src = x.channel(ch);
        let dst = &mut out.data[ch * h2 * w2..(ch + 1) * h2 * w2];
        for y in 0..h2 {
            let s = &src[(y / 2) * x.w..(y / 2 + 1) * x.w];
            let d = &mut dst[y * w2..(y + 1) * w2];
            for (xx, v) in d.iter_mut().enumerate() {
                *v = s[xx / 2];
            }
        }
    }
    out
}

/// Adjoint of [`upsample2`]: sum each 2x2 tile.
pub fn upsample2_backward<T: Scalar>(d_out: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (d_out.h / 2, d_out.w / 2);
    let mut dx = Tensor::zeros(d_out.c, h, w);
    for ch in 0..d_out.c {
        let src = d_out.channel(ch);
        let dst = &mut dx.data[ch * h * w..(ch + 1) * h * w];
        for y in 0..d_out.h {
            for x in 0..d_out.w {
                dst[(y / 2) * w + x / 2] += src[y * d_out.w + x];
            }
        }
    }
    dx
}

/// Stack `a` then `b` along channels.
pub fn concat<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    assert_eq!((a.h, a.w), (b.h, b.w), "concat spatial mismatch");
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor::from_vec(a.c + b.c, a.h, a.w, data)
}

/// Split a gradient of [`concat`] back into its two parts.
pub fn split_channels<T: Scalar>(d: &Tensor<T>, first: usize) -> (Tensor<T>, Tensor<T>) {
    let cut = first * d.plane();
    (
        Tensor::from_vec(first, d.h, d.w, d.data[..cut].to_vec()),
        Tensor::from_vec(d.c - first, d.h, d.w, d.data[cut..].to_vec()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_vec(
            c,
            h,
            w,
            (0..c * h * w)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
    }

    /// Direct-loop convolution oracle.
    fn conv_naive(x: &Tensor<f64>, wt: &[f64], b: &[f64], s: &ConvShape) -> Tensor<f64> {
        let (ho, wo) = (s.out_size(x.h), s.out_size(x.w));
        let mut out = Tensor::zeros(s.cout, ho, wo);
        let pad = s.pad() as isize;
        for o in 0..s.cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b[o];
                    for ci in 0..s.cin {
                        for ky in 0..s.k {
                            for kx in 0..s.k {
                                let iy = (oy * s.stride + ky) as isize - pad;
                                let ix = (ox * s.stride + kx) as isize - pad;
                                if iy >= 0 && ix >= 0 && (iy as usize) < x.h && (ix as usize) < x.w
                                {
                                    acc += wt[((o * s.cin + ci) * s.k + ky) * s.k + kx]
                                        * x.data[(ci * x.h + iy as usize) * x.w + ix as usize];
                                }
                            }
                        }
                    }
                    out.data[(o * ho + oy) * wo + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for s in [
            ConvShape {
                cin: 3,
                cout: 4,
                k: 3,
                stride: 1,
            },
            ConvShape {
                cin: 2,
                cout: 5,
                k: 3,
                stride: 2,
            },
            ConvShape {
                cin: 6,
                cout: 1,
                k: 1,
                stride: 1,
            },
        ] {
            let x = random(s.cin, 6, 6, &mut rng);
            let wt: Vec<f64> = (0..s.weight_len())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let b: Vec<f64> = (0..s.cout).map(|_| rng.random_range(-1.0..1.0)).collect();
            let got = conv2d(&x, &wt, &b, &s);
            let want = conv_naive(&x, &wt, &b, &s);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data.iter().zip(&want.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stride_two_halves_and_pad_one_preserves() {
        let x = Tensor::<f64>::zeros(2, 8, 8);
        let s = ConvShape {
            cin: 2,
            cout: 3,
            k: 3,
            stride: 2,
        };
        assert_eq!(
            conv2d(&x, &vec![0.0; s.weight_len()], &[0.0; 3], &s).shape(),
            [3, 4, 4]
        );
        let s = ConvShape {
            cin: 2,
            cout: 3,
            k: 3,
            stride: 1,
        };
        assert_eq!(
            conv2d(&x, &vec![0.0; s.weight_len()], &[0.0; 3], &s).shape(),
            [3, 8, 8]
        );
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x), g> is linear in x and w, so its gradients are exact.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for s in [
            ConvShape {
                cin: 3,
                cout: 2,
                k: 3,
                stride: 1,
            },
            ConvShape {
                cin: 2,
                cout: 3,
                k: 3,
                stride: 2,
            },
            ConvShape {
                cin: 4,
                cout: 2,
                k: 1,
                stride: 1,
            },
        ] {
            let x = random(s.cin, 6, 6, &mut rng);
            let wt: Vec<f64> = (0..s.weight_len())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let zero_b = vec![0.0; s.cout];
            let y = conv2d(&x, &wt, &zero_b, &s);
            let g = random(y.c, y.h, y.w, &mut rng);
            let mut dw = vec![0.0; wt.len()];
            let mut db = vec![0.0; s.cout];
            let dx = conv2d_backward(&x, &wt, &s, &g, &mut dw, &mut db, true).unwrap();
            let inner = |a: &Tensor<f64>, b: &Tensor<f64>| {
                a.data.iter().zip(&b.data).map(|(p, q)| p * q).sum::<f64>()
            };
            let base = inner(&y, &g);
            // <dx, x> = <y, g> and <dw, w> = <y, g> for a bias-free linear map.
            assert!((inner(&dx, &x) - base).abs() < 1e-10);
            let wdot: f64 = dw.iter().zip(&wt).map(|(a, b)| a * b).sum();
            assert!((wdot - base).abs() < 1e-10);
            for (o, d) in db.iter().enumerate() {
                assert!((d - g.channel(o).iter().sum::<f64>()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn instance_norm_standardizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(3, 16, 16, &mut rng).map(|v| 3.0 * v + 2.0);
        let (y, cache) = instance_norm(&x, &[1.0; 3], &[0.0; 3]);
        for ch in 0..3 {
            let c = y.channel(ch);
            let mean = c.iter().sum::<f64>() / c.len() as f64;
            let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c.len() as f64;
            assert!(mean.abs() < 1e-4);
            assert!((var - 1.0).abs() < 1e-4);
        }
        assert_eq!(cache.inv_std.len(), 3);
    }

    #[test]
    fn activations() {
        assert_eq!(leaky_relu(-1.0f64, 0.01), -0.01);
        assert_eq!(leaky_relu(1.0f64, 0.01), 1.0);
        assert_eq!(elu(2.0f64), 2.0);
        assert!((elu(-1.0f64) - ((-1.0f64).exp() - 1.0)).abs() < 1e-15);
        assert!((elu_grad_from_output(elu(-0.5f64)) - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn nearest_upsampling() {
        let x = Tensor::from_vec(1, 2, 2, vec![1.0f64, 2.0, 3.0, 4.0]);
        let u = upsample2(&x);
        assert_eq!(
            u.data,
            vec![1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]
        );
        let c = Tensor::from_vec(2, 3, 3, vec![0.7f64; 18]);
        assert!(upsample2(&c).data.iter().all(|&v| v == 0.7));
        let back = upsample2_backward(&Tensor::from_vec(1, 4, 4, vec![1.0f64; 16]));
        assert_eq!(back.data, vec![4.0; 4]);
    }

    #[test]
    fn concat_and_split_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(2, 3, 3, &mut rng);
        let b = random(4, 3, 3, &mut rng);
        let c = concat(&a, &b);
        assert_eq!(c.shape(), [6, 3, 3]);
        let (a2, b2) = split_channels(&c, 2);
        assert_eq!((a2, b2), (a, b));
    }
}
