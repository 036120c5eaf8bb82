use super::layers::{
    concat, conv2d, conv2d_backward, elu, elu_grad_from_output, instance_norm,
    instance_norm_backward, leaky_relu, leaky_relu_grad_from_output, split_channels, upsample2,
    upsample2_backward, ConvShape, NormCache,
};
use super::tensor::{Scalar, Tensor};
use super::{Layout, UNetConfig, UNetParams, BLOCK_TENSORS, DEPTH};
use crate::error::{Error, Result};
use crate::types::{Frame, FrameWindow};

/// One stage of the forward shape trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub stage: String,
    pub shape: [usize; 3],
}

#[derive(Debug, Clone)]
struct BlockCache<T> {
    x: Tensor<T>,
    n1: NormCache<T>,
    a1: Tensor<T>,
    n2: NormCache<T>,
    a2: Tensor<T>,
}

#[derive(Debug, Clone)]
struct DownCache<T> {
    x: Tensor<T>,
    y: Tensor<T>,
}

/// Activations saved by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    enc: Vec<BlockCache<T>>,
    down: Vec<DownCache<T>>,
    up_in: Vec<Tensor<T>>,
    dec: Vec<BlockCache<T>>,
    pub trace: Vec<TraceEntry>,
}

fn conv3(cin: usize, cout: usize, stride: usize) -> ConvShape {
    ConvShape {
        cin,
        cout,
        k: 3,
        stride,
    }
}

fn block_forward<T: Scalar>(
    p: &UNetParams<T>,
    at: usize,
    x: Tensor<T>,
    cout: usize,
) -> BlockCache<T> {
    let z1 = conv2d(&x, p.data(at), p.data(at + 1), &conv3(x.c, cout, 1));
    let (y1, n1) = instance_norm(&z1, p.data(at + 2), p.data(at + 3));
    let a1 = y1.map(elu);
    let z2 = conv2d(&a1, p.data(at + 4), p.data(at + 5), &conv3(cout, cout, 1));
    let (y2, n2) = instance_norm(&z2, p.data(at + 6), p.data(at + 7));
    let a2 = y2.map(elu);
    BlockCache { x, n1, a1, n2, a2 }
}

fn block_backward<T: Scalar>(
    p: &UNetParams<T>,
    g: &mut UNetParams<T>,
    at: usize,
    c: &BlockCache<T>,
    d_out: Tensor<T>,
    need_input_grad: bool,
) -> Option<Tensor<T>> {
    let cout = c.a2.c;
    let mut d = d_out;
    for (v, &a) in d.data.iter_mut().zip(&c.a2.data) {
        *v = *v * elu_grad_from_output(a);
    }
    let d = {
        let (dg, db) = two_mut(g, at + 6, at + 7);
        instance_norm_backward(&c.n2, p.data(at + 6), &d, dg, db)
    };
    let mut d = {
        let (dw, db) = two_mut(g, at + 4, at + 5);
        conv2d_backward(
            &c.a1,
            p.data(at + 4),
            &conv3(cout, cout, 1),
            &d,
            dw,
            db,
            true,
        )
        .expect("input grad")
    };
    for (v, &a) in d.data.iter_mut().zip(&c.a1.data) {
        *v = *v * elu_grad_from_output(a);
    }
    let d = {
        let (dg, db) = two_mut(g, at + 2, at + 3);
        instance_norm_backward(&c.n1, p.data(at + 2), &d, dg, db)
    };
    let (dw, db) = two_mut(g, at, at + 1);
    conv2d_backward(
        &c.x,
        p.data(at),
        &conv3(c.x.c, cout, 1),
        &d,
        dw,
        db,
        need_input_grad,
    )
}

/// Mutable access to two distinct gradient tensors.
fn two_mut<T>(g: &mut UNetParams<T>, i: usize, j: usize) -> (&mut [T], &mut [T]) {
    debug_assert!(i < j);
    let (lo, hi) = g.tensors.split_at_mut(j);
    (&mut lo[i].data, &mut hi[0].data)
}

fn check_input<T: Scalar>(cfg: &UNetConfig, x: &Tensor<T>) -> Result<()> {
    let want = [cfg.in_channels(), cfg.grid, cfg.grid];
    if x.shape() != want {
        return Err(Error::Shape(format!(
            "network input {:?}, expected {:?}",
            x.shape(),
            want
        )));
    }
    Ok(())
}

/// Stack a window into the `3H x grid x grid` input tensor.
pub fn window_tensor<T: Scalar>(window: &FrameWindow, cfg: &UNetConfig) -> Result<Tensor<T>> {
    if window.len() != cfg.h {
        return Err(Error::Shape(format!(
            "window of {} frames, network expects {}",
            window.len(),
            cfg.h
        )));
    }
    stack_frames(window.frames(), cfg)
}

/// Stack frames oldest first, channel `3k + c` holding colour `c` of frame `k`.
///
/// Unlike [`window_tensor`] this accepts repeated frames, which the
/// streaming warm-up relies on.
pub fn stack_frames<T: Scalar>(frames: &[Frame], cfg: &UNetConfig) -> Result<Tensor<T>> {
    if frames.len() != cfg.h {
        return Err(Error::Shape(format!("{} frames, network expects {}", frames.len(), cfg.h)));
    }
    let plane = cfg.grid * cfg.grid;
    let mut data = vec![T::zero(); cfg.in_channels() * plane];
    for (k, f) in frames.iter().enumerate() {
        if f.grid() != cfg.grid {
            return Err(Error::Shape(format!("frame at grid {}, network expects {}", f.grid(), cfg.grid)));
        }
        for (i, px) in f.pixels().chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[(3 * k + c) * plane + i] = T::of(px[c] as f64);
            }
        }
    }
    Ok(Tensor::from_vec(cfg.in_channels(), cfg.grid, cfg.grid, data))
}

/// Raw (unclamped) output and the activations needed for backprop.
pub fn forward<T: Scalar>(p: &UNetParams<T>, x: Tensor<T>) -> Result<(Tensor<T>, ForwardCache<T>)> {
    let cfg = p.config;
    check_input(&cfg, &x)?;
    if p.tensors.len() != Layout::new(&cfg).specs.len() {
        return Err(Error::Shape(
            "parameter list does not match the configuration".into(),
        ));
    }
    let l = Layout::new(&cfg);
    let w = cfg.widths();
    let slope = T::of(cfg.leaky_slope);
    let mut trace = Vec::with_capacity(18);
    let mut rec = |stage: String, t: &Tensor<T>| {
        trace.push(TraceEntry {
            stage,
            shape: t.shape(),
        })
    };

    rec("input".into(), &x);
    let mut enc = Vec::with_capacity(DEPTH + 1);
    let mut down = Vec::with_capacity(DEPTH);
    let c = block_forward(p, l.enc[0], x, w[0]);
    rec("enc0".into(), &c.a2);
    enc.push(c);
    for i in 0..DEPTH {
        let xin = enc[i].a2.clone();
        let at = l.down[i];
        let y = conv2d(&xin, p.data(at), p.data(at + 1), &conv3(w[i], w[i + 1], 2))
            .map(|v| leaky_relu(v, slope));
        rec(format!("down{i}"), &y);
        let c = block_forward(p, l.enc[i + 1], y.clone(), w[i + 1]);
        rec(format!("enc{}", i + 1), &c.a2);
        down.push(DownCache { x: xin, y });
        enc.push(c);
    }

    let mut up_in = Vec::with_capacity(DEPTH);
    let mut dec: Vec<BlockCache<T>> = Vec::with_capacity(DEPTH);
    for i in 0..DEPTH {
        let lo = w[DEPTH - 1 - i];
        let below = if i == 0 {
            &enc[DEPTH].a2
        } else {
            &dec[i - 1].a2
        };
        let u = upsample2(below);
        let at = l.up[i];
        let up = conv2d(&u, p.data(at), p.data(at + 1), &conv3(u.c, lo, 1));
        rec(format!("up{i}"), &up);
        let cat = concat(&up, &enc[DEPTH - 1 - i].a2);
        rec(format!("cat{i}"), &cat);
        let c = block_forward(p, l.dec[i], cat, lo);
        rec(format!("dec{i}"), &c.a2);
        up_in.push(u);
        dec.push(c);
    }
    let last = &dec[DEPTH - 1].a2;
    let mut out = conv2d(
        last,
        p.data(l.head),
        p.data(l.head + 1),
        &ConvShape {
            cin: w[0],
            cout: 1,
            k: 1,
            stride: 1,
        },
    );
    if cfg.output_scale != 1.0 {
        let s = T::of(cfg.output_scale);
        out.data.iter_mut().for_each(|v| *v = *v * s);
    }
    rec("head".into(), &out);
    Ok((
        out,
        ForwardCache {
            enc,
            down,
            up_in,
            dec,
            trace,
        },
    ))
}

/// Gradient of the scalar loss with respect to every parameter, given its
/// gradient `d_out` with respect to the raw output.
pub fn backward<T: Scalar>(
    p: &UNetParams<T>,
    cache: &ForwardCache<T>,
    d_out: &Tensor<T>,
) -> UNetParams<T> {
    let cfg = p.config;
    let l = Layout::new(&cfg);
    let w = cfg.widths();
    let slope = T::of(cfg.leaky_slope);
    let mut g = p.zeros_like();

    let head_in = &cache.dec[DEPTH - 1].a2;
    let scaled;
    let d_out = if cfg.output_scale != 1.0 {
        scaled = d_out.map(|v| v * T::of(cfg.output_scale));
        &scaled
    } else {
        d_out
    };
    let mut d = {
        let (dw, db) = two_mut(&mut g, l.head, l.head + 1);
        conv2d_backward(
            head_in,
            p.data(l.head),
            &ConvShape {
                cin: w[0],
                cout: 1,
                k: 1,
                stride: 1,
            },
            d_out,
            dw,
            db,
            true,
        )
        .expect("input grad")
    };

    let mut d_skip: Vec<Option<Tensor<T>>> = vec![None; DEPTH];
    for i in (0..DEPTH).rev() {
        let lo = w[DEPTH - 1 - i];
        let d_cat =
            block_backward(p, &mut g, l.dec[i], &cache.dec[i], d, true).expect("input grad");
        let (d_up, d_sk) = split_channels(&d_cat, lo);
        d_skip[DEPTH - 1 - i] = Some(d_sk);
        let u = &cache.up_in[i];
        let d_u = {
            let (dw, db) = two_mut(&mut g, l.up[i], l.up[i] + 1);
            conv2d_backward(u, p.data(l.up[i]), &conv3(u.c, lo, 1), &d_up, dw, db, true)
                .expect("input grad")
        };
        d = upsample2_backward(&d_u);
    }

    for i in (0..DEPTH).rev() {
        let mut d_y = block_backward(p, &mut g, l.enc[i + 1], &cache.enc[i + 1], d, true)
            .expect("input grad");
        let dc = &cache.down[i];
        for (v, &y) in d_y.data.iter_mut().zip(&dc.y.data) {
            *v = *v * leaky_relu_grad_from_output(y, slope);
        }
        let mut d_x = {
            let (dw, db) = two_mut(&mut g, l.down[i], l.down[i] + 1);
            conv2d_backward(
                &dc.x,
                p.data(l.down[i]),
                &conv3(w[i], w[i + 1], 2),
                &d_y,
                dw,
                db,
                true,
            )
            .expect("input grad")
        };
        let skip = d_skip[i].take().expect("skip gradient");
        for (v, s) in d_x.data.iter_mut().zip(skip.data) {
            *v += s;
        }
        d = d_x;
    }
    block_backward(p, &mut g, l.enc[0], &cache.enc[0], d, false);
    debug_assert_eq!(l.enc[0] + BLOCK_TENSORS, l.down[0]);
    g
}

/// Forward pass returning only the raw output.
pub fn predict<T: Scalar>(p: &UNetParams<T>, x: Tensor<T>) -> Result<Tensor<T>> {
    forward(p, x).map(|(out, _)| out)
}

/// Raw output for a frame window, row-major `grid x grid`.
pub fn predict_window(p: &UNetParams<f32>, window: &FrameWindow) -> Result<Vec<f32>> {
    Ok(predict(p, window_tensor(window, &p.config)?)?.data)
}

/// Raw output for a stack of `H` frames.
pub fn predict_frames(p: &UNetParams<f32>, frames: &[Frame]) -> Result<Vec<f32>> {
    Ok(predict(p, stack_frames(frames, &p.config)?)?.data)
}

/// Shape trace of a forward pass.
pub fn forward_trace<T: Scalar>(
    p: &UNetParams<T>,
    x: Tensor<T>,
) -> Result<(Tensor<T>, Vec<TraceEntry>)> {
    forward(p, x).map(|(out, cache)| (out, cache.trace))
}

/// Relative gap between an analytic and a numeric derivative.
///
/// Pairs that are both below `1e-8` in magnitude agree at the finite
/// difference noise floor; conv biases feeding an instance norm have an
/// exactly zero gradient and land there.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-8 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Mean squared error, accumulated in f64.
pub fn mse_loss<T: Scalar>(pred: &[T], target: &[f32]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Shape(format!(
            "prediction {} vs target {}",
            pred.len(),
            target.len()
        )));
    }
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p.f64() - t as f64;
            d * d
        })
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Gradient of [`mse_loss`] with respect to the prediction, times `scale`.
pub fn loss_grad<T: Scalar>(pred: &Tensor<T>, target: &[f32], scale: f64) -> Tensor<T> {
    let k = T::of(2.0 * scale / pred.data.len() as f64);
    Tensor::from_vec(
        pred.c,
        pred.h,
        pred.w,
        pred.data
            .iter()
            .zip(target)
            .map(|(&p, &t)| k * (p - T::of(t as f64)))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> UNetConfig {
        UNetConfig::tiny(2, 16, 4)
    }

    fn random_input<T: Scalar>(cfg: &UNetConfig, seed: u64) -> Tensor<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = cfg.in_channels() * cfg.grid * cfg.grid;
        Tensor::from_vec(
            cfg.in_channels(),
            cfg.grid,
            cfg.grid,
            (0..n).map(|_| T::of(rng.random())).collect(),
        )
    }

    #[test]
    fn stacking_matches_window_channels() {
        let frames: Vec<Frame> = (0..2)
            .map(|k| {
                let px = (0..16 * 16 * 3).map(|i| ((i * 7 + k * 3) % 256) as f32 / 255.0).collect();
                Frame::new(16, px, k as f64).unwrap()
            })
            .collect();
        let w = FrameWindow::new(frames.clone(), 2).unwrap();
        let t: Tensor<f32> = stack_frames(&frames, &tiny()).unwrap();
        assert_eq!(t.data, w.to_channels());
    }

    #[test]
    fn minimal_config_runs_end_to_end() {
        let cfg = UNetConfig { h: 1, ..tiny() };
        let p = UNetParams::<f32>::init(cfg, 0).unwrap();
        let out = predict(&p, random_input(&cfg, 1)).unwrap();
        assert_eq!(out.shape(), [1, 16, 16]);
        assert!(out.data.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn forward_is_deterministic() {
        let p = UNetParams::<f32>::init(tiny(), 0).unwrap();
        let a = predict(&p, random_input(&tiny(), 1)).unwrap();
        let b = predict(&p, random_input(&tiny(), 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tiny_trace_follows_the_schedule() {
        let p = UNetParams::<f32>::init(tiny(), 0).unwrap();
        let (_, trace) = forward_trace(&p, random_input(&tiny(), 1)).unwrap();
        let shapes: Vec<[usize; 3]> = trace.iter().map(|e| e.shape).collect();
        assert_eq!(
            shapes,
            vec![
                [6, 16, 16],
                [4, 16, 16],
                [8, 8, 8],
                [8, 8, 8],
                [16, 4, 4],
                [16, 4, 4],
                [32, 2, 2],
                [32, 2, 2],
                [16, 4, 4],
                [32, 4, 4],
                [16, 4, 4],
                [8, 8, 8],
                [16, 8, 8],
                [8, 8, 8],
                [4, 16, 16],
                [8, 16, 16],
                [4, 16, 16],
                [1, 16, 16],
            ]
        );
        assert_eq!(trace[0].stage, "input");
        assert_eq!(trace[17].stage, "head");
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let p = UNetParams::<f32>::init(tiny(), 0).unwrap();
        assert!(matches!(
            predict(&p, Tensor::zeros(5, 16, 16)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn mse_examples() {
        let t = vec![1.0f32, -2.0, 3.5, 0.0];
        assert_eq!(mse_loss(&t, &t).unwrap(), 0.0);
        let shifted: Vec<f32> = t.iter().map(|v| v + 1.0).collect();
        assert!((mse_loss(&shifted, &t).unwrap() - 1.0).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (rows, cols) = (7, 9);
        let a: Vec<f32> = (0..rows * cols)
            .map(|_| rng.random_range(-5.0..5.0))
            .collect();
        let b: Vec<f32> = (0..rows * cols)
            .map(|_| rng.random_range(-5.0..5.0))
            .collect();
        let mut sum = 0.0f64;
        for r in 0..rows {
            for c in 0..cols {
                let d = a[r * cols + c] as f64 - b[r * cols + c] as f64;
                sum += d * d;
            }
        }
        assert!((mse_loss(&a, &b).unwrap() - sum / (rows * cols) as f64).abs() < 1e-6);
    }

    #[test]
    fn output_scale_multiplies_the_head() {
        let p = UNetParams::<f64>::init(tiny(), 2).unwrap();
        let mut q = p.clone();
        q.config.output_scale = 4.0;
        let a = predict(&p, random_input(&tiny(), 1)).unwrap();
        let b = predict(&q, random_input(&tiny(), 1)).unwrap();
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((4.0 * x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences_on_a_sample() {
        let cfg = UNetConfig {
            output_scale: 3.0,
            ..tiny()
        };
        let p = UNetParams::<f64>::init(cfg, 5).unwrap();
        let x = random_input::<f64>(&cfg, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let target: Vec<f32> = (0..256).map(|_| rng.random_range(0.0..2.0)).collect();
        let (out, cache) = forward(&p, x.clone()).unwrap();
        let g = backward(&p, &cache, &loss_grad(&out, &target, 1.0));
        let eps = 1e-5;
        for (ti, t) in p.tensors.iter().enumerate() {
            let idx = rng.random_range(0..t.data.len());
            let mut q = p.clone();
            q.tensors[ti].data[idx] += eps;
            let lp = mse_loss(&predict(&q, x.clone()).unwrap().data, &target).unwrap();
            q.tensors[ti].data[idx] -= 2.0 * eps;
            let lm = mse_loss(&predict(&q, x.clone()).unwrap().data, &target).unwrap();
            let num = (lp - lm) / (2.0 * eps);
            let ana = g.tensors[ti].data[idx];
            let rel = relative_error(ana, num);
            assert!(
                rel < 1e-4,
                "{}[{idx}]: analytic {ana} numeric {num}",
                t.name
            );
        }
    }
}
