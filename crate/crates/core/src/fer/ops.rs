//! Inference kernels. Weights are `f32` (the on-disk precision); all
//! arithmetic is `f64`.

use crate::fer::tensor::{Shape, Tensor};
use crate::fer::FerError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Padding {
    /// Zero padding so that `out = ceil(in / stride)`; any odd leftover goes
    /// after the input.
    Same,
    /// No padding; `out = (in - kernel) / stride + 1`.
    Valid,
}

impl Padding {
    pub fn code(self) -> u32 {
        match self {
            Padding::Same => 0,
            Padding::Valid => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Padding::Same),
            1 => Some(Padding::Valid),
            _ => None,
        }
    }
}

/// Output length and leading pad along one axis.
pub fn output_dim(input: usize, kernel: usize, stride: usize, padding: Padding) -> Option<(usize, usize)> {
    if stride == 0 || kernel == 0 || input == 0 {
        return None;
    }
    match padding {
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            Some((out, total / 2))
        }
        Padding::Valid => {
            if input < kernel {
                None
            } else {
                Some(((input - kernel) / stride + 1, 0))
            }
        }
    }
}

/// Output shape of a spatial window op, or `None` if it does not fit.
pub fn window_output(
    input: Shape,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Option<(usize, usize, usize, usize)> {
    let (oh, pt) = output_dim(input.0, kernel, stride, padding)?;
    let (ow, pl) = output_dim(input.1, kernel, stride, padding)?;
    Some((oh, ow, pt, pl))
}

fn geometry(
    input: &Tensor,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize, usize, usize), FerError> {
    window_output(input.shape(), kernel, stride, padding).ok_or_else(|| {
        FerError::ShapeMismatch(format!(
            "kernel {kernel} stride {stride} {padding:?} does not fit input {:?}",
            input.shape()
        ))
    })
}

fn check_bias(bias: Option<&[f32]>, n: usize) -> Result<(), FerError> {
    match bias {
        Some(b) if b.len() != n => Err(FerError::ShapeMismatch(format!(
            "bias has {} values, expected {n}",
            b.len()
        ))),
        _ => Ok(()),
    }
}

/// Full convolution (cross-correlation). `weights` is laid out
/// `[out][in][ky][kx]`.
pub fn conv2d(
    input: &Tensor,
    weights: &[f32],
    out_channels: usize,
    kernel: usize,
    bias: Option<&[f32]>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor, FerError> {
    let m = input.channels();
    if weights.len() != out_channels * m * kernel * kernel {
        return Err(FerError::ShapeMismatch(format!(
            "conv weights have {} values, expected {out_channels}x{m}x{kernel}x{kernel}",
            weights.len()
        )));
    }
    check_bias(bias, out_channels)?;
    let (oh, ow, pt, pl) = geometry(input, kernel, stride, padding)?;
    let (ih, iw) = (input.height() as isize, input.width() as isize);

    // Repack to [ky][kx][in][out] so the innermost loop is contiguous.
    let mut packed = vec![0.0f64; weights.len()];
    for n in 0..out_channels {
        for c in 0..m {
            for ky in 0..kernel {
                for kx in 0..kernel {
                    let src = ((n * m + c) * kernel + ky) * kernel + kx;
                    let dst = ((ky * kernel + kx) * m + c) * out_channels + n;
                    packed[dst] = f64::from(weights[src]);
                }
            }
        }
    }

    let data_in = input.data();
    let mut out = vec![0.0; oh * ow * out_channels];
    for oy in 0..oh {
        for ox in 0..ow {
            let acc = &mut out[(oy * ow + ox) * out_channels..(oy * ow + ox + 1) * out_channels];
            if let Some(b) = bias {
                for (a, &bv) in acc.iter_mut().zip(b) {
                    *a = f64::from(bv);
                }
            }
            for ky in 0..kernel {
                let iy = (oy * stride + ky) as isize - pt as isize;
                if iy < 0 || iy >= ih {
                    continue;
                }
                for kx in 0..kernel {
                    let ix = (ox * stride + kx) as isize - pl as isize;
                    if ix < 0 || ix >= iw {
                        continue;
                    }
                    let px = &data_in[(iy as usize * iw as usize + ix as usize) * m..][..m];
                    let wbase = (ky * kernel + kx) * m * out_channels;
                    for (c, &v) in px.iter().enumerate() {
                        let w = &packed[wbase + c * out_channels..wbase + (c + 1) * out_channels];
                        for (a, &wv) in acc.iter_mut().zip(w) {
                            *a += v * wv;
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts((oh, ow, out_channels), out))
}

/// Per-channel spatial convolution. `kernels` is `[channel][ky][kx]`.
pub fn depthwise_conv2d(
    input: &Tensor,
    kernels: &[f32],
    kernel: usize,
    bias: Option<&[f32]>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor, FerError> {
    let c = input.channels();
    if kernels.len() != c * kernel * kernel {
        return Err(FerError::ShapeMismatch(format!(
            "depthwise kernels have {} values, expected {c}x{kernel}x{kernel}",
            kernels.len()
        )));
    }
    check_bias(bias, c)?;
    let (oh, ow, pt, pl) = geometry(input, kernel, stride, padding)?;
    let (ih, iw) = (input.height() as isize, input.width() as isize);
    let mut packed = vec![0.0f64; kernels.len()];
    for ch in 0..c {
        for k in 0..kernel * kernel {
            packed[k * c + ch] = f64::from(kernels[ch * kernel * kernel + k]);
        }
    }
    let data_in = input.data();
    let mut out = vec![0.0; oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            let acc = &mut out[(oy * ow + ox) * c..(oy * ow + ox + 1) * c];
            if let Some(b) = bias {
                for (a, &bv) in acc.iter_mut().zip(b) {
                    *a = f64::from(bv);
                }
            }
            for ky in 0..kernel {
                let iy = (oy * stride + ky) as isize - pt as isize;
                if iy < 0 || iy >= ih {
                    continue;
                }
                for kx in 0..kernel {
                    let ix = (ox * stride + kx) as isize - pl as isize;
                    if ix < 0 || ix >= iw {
                        continue;
                    }
                    let px = &data_in[(iy as usize * iw as usize + ix as usize) * c..][..c];
                    let w = &packed[(ky * kernel + kx) * c..][..c];
                    for ((a, &v), &wv) in acc.iter_mut().zip(px).zip(w) {
                        *a += v * wv;
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts((oh, ow, c), out))
}

/// 1x1 convolution mixing `M` input channels into `N` outputs. `weights` is
/// `[out][in]`. Stride subsamples positions starting at the origin.
pub fn pointwise_conv2d(
    input: &Tensor,
    weights: &[f32],
    out_channels: usize,
    bias: Option<&[f32]>,
    stride: usize,
) -> Result<Tensor, FerError> {
    let m = input.channels();
    if weights.len() != m * out_channels {
        return Err(FerError::ShapeMismatch(format!(
            "pointwise weights have {} values, expected {out_channels}x{m}",
            weights.len()
        )));
    }
    check_bias(bias, out_channels)?;
    let (oh, ow, _, _) = geometry(input, 1, stride, Padding::Valid)?;
    let w: Vec<f64> = weights.iter().map(|&v| f64::from(v)).collect();
    let mut out = vec![0.0; oh * ow * out_channels];
    for oy in 0..oh {
        for ox in 0..ow {
            let px = &input.data()[((oy * stride) * input.width() + ox * stride) * m..][..m];
            let acc = &mut out[(oy * ow + ox) * out_channels..][..out_channels];
            for (n, a) in acc.iter_mut().enumerate() {
                let row = &w[n * m..(n + 1) * m];
                let mut s = bias.map_or(0.0, |b| f64::from(b[n]));
                for (&v, &wv) in px.iter().zip(row) {
                    s += v * wv;
                }
                *a = s;
            }
        }
    }
    Ok(Tensor::from_parts((oh, ow, out_channels), out))
}

/// Inference-mode batch normalisation parameters, one entry per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams<'a> {
    pub gamma: &'a [f32],
    pub beta: &'a [f32],
    pub mean: &'a [f32],
    pub var: &'a [f32],
    pub eps: f32,
}

/// `gamma * (x - mean) / sqrt(var + eps) + beta` per channel.
pub fn batch_norm(input: &Tensor, p: &BatchNormParams<'_>) -> Result<Tensor, FerError> {
    let c = input.channels();
    if [p.gamma.len(), p.beta.len(), p.mean.len(), p.var.len()]
        .iter()
        .any(|&l| l != c)
    {
        return Err(FerError::ShapeMismatch(format!(
            "batch norm parameters do not match {c} channels"
        )));
    }
    let (scale, shift): (Vec<f64>, Vec<f64>) = (0..c)
        .map(|i| {
            let s = f64::from(p.gamma[i]) / (f64::from(p.var[i]) + f64::from(p.eps)).sqrt();
            (s, f64::from(p.beta[i]) - s * f64::from(p.mean[i]))
        })
        .unzip();
    let mut out = input.clone();
    for px in out.data_mut().chunks_exact_mut(c) {
        for ((v, s), t) in px.iter_mut().zip(&scale).zip(&shift) {
            *v = *v * s + t;
        }
    }
    Ok(out)
}

pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        *v = v.max(0.0);
    }
    out
}

/// `h x w x c` to `1 x 1 x c` channel means.
pub fn global_avg_pool(input: &Tensor) -> Tensor {
    let c = input.channels();
    let mut sums = vec![0.0; c];
    for px in input.data().chunks_exact(c) {
        for (s, v) in sums.iter_mut().zip(px) {
            *s += v;
        }
    }
    let n = (input.height() * input.width()) as f64;
    Tensor::from_parts((1, 1, c), sums.into_iter().map(|s| s / n).collect())
}

/// Numerically stable softmax over the channel axis at every position.
pub fn softmax(input: &Tensor) -> Tensor {
    let c = input.channels();
    let mut out = input.clone();
    for px in out.data_mut().chunks_exact_mut(c) {
        let max = px.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in px.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in px.iter_mut() {
            *v /= sum;
        }
    }
    out
}

pub fn residual_add(a: &Tensor, b: &Tensor) -> Result<Tensor, FerError> {
    if a.shape() != b.shape() {
        return Err(FerError::ShapeMismatch(format!(
            "residual shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Ok(Tensor::from_parts(a.shape(), data))
}

/// Max pooling; padded positions never win.
pub fn max_pool(input: &Tensor, kernel: usize, stride: usize, padding: Padding) -> Result<Tensor, FerError> {
    let (oh, ow, pt, pl) = geometry(input, kernel, stride, padding)?;
    let c = input.channels();
    let (ih, iw) = (input.height() as isize, input.width() as isize);
    let mut out = vec![f64::NEG_INFINITY; oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            let acc = &mut out[(oy * ow + ox) * c..][..c];
            for ky in 0..kernel {
                let iy = (oy * stride + ky) as isize - pt as isize;
                if iy < 0 || iy >= ih {
                    continue;
                }
                for kx in 0..kernel {
                    let ix = (ox * stride + kx) as isize - pl as isize;
                    if ix < 0 || ix >= iw {
                        continue;
                    }
                    let px = &input.data()[(iy as usize * iw as usize + ix as usize) * c..][..c];
                    for (a, &v) in acc.iter_mut().zip(px) {
                        *a = a.max(v);
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts((oh, ow, c), out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones(h: usize, w: usize, c: usize) -> Tensor {
        Tensor::from_fn(h, w, c, |_, _, _| 1.0)
    }

    fn ramp(h: usize, w: usize, c: usize) -> Tensor {
        Tensor::from_fn(h, w, c, |y, x, ch| (y * 7 + x * 3 + ch) as f64 * 0.25 - 2.0)
    }

    #[test]
    fn conv_identity_and_sum() {
        let t = ramp(4, 5, 1);
        let id = conv2d(&t, &[1.0], 1, 1, None, 1, Padding::Same).unwrap();
        assert_eq!(id, t);

        let s = conv2d(&ones(3, 3, 1), &[1.0; 9], 1, 3, None, 1, Padding::Valid).unwrap();
        assert_eq!(s.shape(), (1, 1, 1));
        assert_eq!(s.data(), &[9.0]);
        assert!(conv2d(&ones(3, 3, 2), &[1.0; 9], 1, 3, None, 1, Padding::Valid).is_err());
    }

    #[test]
    fn depthwise_delta_and_independence() {
        let t = ramp(5, 4, 2);
        let mut delta = vec![0.0f32; 18];
        delta[4] = 1.0;
        delta[9 + 4] = 1.0;
        assert_eq!(depthwise_conv2d(&t, &delta, 3, None, 1, Padding::Same).unwrap(), t);

        let mut k = vec![0.0f32; 18];
        for v in &mut k[9..] {
            *v = 1.0;
        }
        let out = depthwise_conv2d(&t, &k, 3, None, 1, Padding::Same).unwrap();
        for px in out.data().chunks_exact(2) {
            assert_eq!(px[0], 0.0);
        }
        // Centre pixel of channel 1: sum of its 3x3 neighbourhood.
        let mut want = 0.0;
        for y in 1..4 {
            for x in 0..3 {
                want += t.at(y, x, 1);
            }
        }
        assert!((out.at(2, 1, 1) - want).abs() < 1e-12);
        assert!(depthwise_conv2d(&t, &k[..9], 3, None, 1, Padding::Same).is_err());
    }

    #[test]
    fn pointwise_identity_and_sum() {
        let t = ramp(3, 3, 2);
        assert_eq!(pointwise_conv2d(&t, &[1.0, 0.0, 0.0, 1.0], 2, None, 1).unwrap(), t);
        let s = pointwise_conv2d(&t, &[1.0, 1.0], 1, None, 1).unwrap();
        for (o, px) in s.data().iter().zip(t.data().chunks_exact(2)) {
            assert_eq!(*o, px[0] + px[1]);
        }
        assert!(pointwise_conv2d(&t, &[1.0; 3], 1, None, 1).is_err());
        let strided = pointwise_conv2d(&ramp(5, 5, 2), &[1.0, 0.0], 1, None, 2).unwrap();
        assert_eq!(strided.shape(), (3, 3, 1));
    }

    #[test]
    fn batch_norm_examples() {
        let t = ramp(2, 2, 1);
        let id = BatchNormParams {
            gamma: &[1.0],
            beta: &[0.0],
            mean: &[0.0],
            var: &[1.0],
            eps: 0.0,
        };
        assert_eq!(batch_norm(&t, &id).unwrap(), t);
        let x = Tensor::new(1, 1, 1, vec![3.0]).unwrap();
        let p = BatchNormParams {
            gamma: &[2.0],
            beta: &[1.0],
            mean: &[0.0],
            var: &[1.0],
            eps: 0.0,
        };
        assert_eq!(batch_norm(&x, &p).unwrap().data(), &[7.0]);
        let bad = BatchNormParams {
            gamma: &[1.0, 1.0],
            ..id
        };
        assert!(batch_norm(&t, &bad).is_err());
    }

    #[test]
    fn batch_norm_centres_matching_statistics() {
        // Channel with sample mean 4 and variance 2.25 normalises to mean beta.
        let vals = [1.0, 7.0, 2.5, 5.5, 4.0, 4.0];
        let mean = vals.iter().sum::<f64>() / 6.0;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
        let t = Tensor::new(2, 3, 1, vals.to_vec()).unwrap();
        let p = BatchNormParams {
            gamma: &[1.5],
            beta: &[0.25],
            mean: &[mean as f32],
            var: &[var as f32],
            eps: 0.0,
        };
        let out = batch_norm(&t, &p).unwrap();
        let m = out.data().iter().sum::<f64>() / 6.0;
        assert!((m - 0.25).abs() < 1e-6);
    }

    #[test]
    fn small_ops() {
        let logits = Tensor::new(1, 1, 7, vec![0.3; 7]).unwrap();
        for p in softmax(&logits).data() {
            assert!((p - 1.0 / 7.0).abs() < 1e-12);
        }
        let c = Tensor::from_fn(4, 3, 2, |_, _, ch| if ch == 0 { 2.5 } else { -1.0 });
        assert_eq!(global_avg_pool(&c).data(), &[2.5, -1.0]);
        let t = ramp(3, 2, 2);
        assert_eq!(residual_add(&t, &Tensor::zeros(3, 2, 2)).unwrap(), t);
        assert!(residual_add(&t, &Tensor::zeros(2, 3, 2)).is_err());
        assert!(relu(&t).data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn max_pool_same_stride_two() {
        let t = ramp(5, 5, 1);
        let p = max_pool(&t, 3, 2, Padding::Same).unwrap();
        assert_eq!(p.shape(), (3, 3, 1));
        // Window for output (2,2) covers rows/cols 3..=4 only.
        assert_eq!(p.at(2, 2, 0), t.at(4, 4, 0));
    }

    #[test]
    fn output_dims() {
        assert_eq!(output_dim(48, 3, 1, Padding::Same), Some((48, 1)));
        assert_eq!(output_dim(48, 3, 2, Padding::Same), Some((24, 0)));
        assert_eq!(output_dim(3, 3, 2, Padding::Same), Some((2, 1)));
        assert_eq!(output_dim(5, 3, 1, Padding::Valid), Some((3, 0)));
        assert_eq!(output_dim(2, 3, 1, Padding::Valid), None);
    }
}
