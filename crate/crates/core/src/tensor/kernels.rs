//! Forward and backward kernels.
//!
//! All reductions run in a fixed order, and each output row of `matmul` and
//! each image of `conv2d` is computed independently of the rest of the batch,
//! so a sample's result does not depend on which batch it was evaluated in.

use crate::error::{Error, Result};

use super::{Scalar, Tensor};

/// Probability floor applied before taking logs in the cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

#[inline]
fn axpy<T: Scalar>(y: &mut [T], alpha: T, x: &[T]) {
    for (y, &x) in y.iter_mut().zip(x) {
        *y += alpha * x;
    }
}

/// Dot product with eight fixed interleaved partial sums.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, n) = b.dims2("matmul")?;
    if k != k2 {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); m * n];
    for (i, row) in out.chunks_exact_mut(n).enumerate() {
        for t in 0..k {
            axpy(row, ad[i * k + t], &bd[t * n..(t + 1) * n]);
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Returns `(g·bᵀ, aᵀ·g)` for `c = a·b` with upstream gradient `g`.
pub fn matmul_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    g: &Tensor<T>,
    need_a: bool,
    need_b: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let (ad, bd, gd) = (a.data(), b.data(), g.data());
    let ga = need_a.then(|| {
        let mut out = vec![T::zero(); m * k];
        for i in 0..m {
            for t in 0..k {
                out[i * k + t] = dot(&gd[i * n..(i + 1) * n], &bd[t * n..(t + 1) * n]);
            }
        }
        Tensor {
            shape: vec![m, k],
            data: out,
        }
    });
    let gb = need_b.then(|| {
        let mut out = vec![T::zero(); k * n];
        for i in 0..m {
            let grow = &gd[i * n..(i + 1) * n];
            for t in 0..k {
                axpy(&mut out[t * n..(t + 1) * n], ad[i * k + t], grow);
            }
        }
        Tensor {
            shape: vec![k, n],
            data: out,
        }
    });
    (ga, gb)
}

/// `x[N×K] + b[K]`, the only broadcast supported.
pub fn add_bias<T: Scalar>(x: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, k) = x.dims2("add_bias")?;
    if bias.shape() != [k] {
        return Err(Error::ShapeMismatch {
            op: "add_bias",
            lhs: x.shape().to_vec(),
            rhs: bias.shape().to_vec(),
        });
    }
    let mut out = x.clone();
    for row in out.data_mut().chunks_exact_mut(k) {
        for (v, &b) in row.iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
    Ok(out)
}

/// Column sums of the upstream gradient.
pub fn add_bias_backward<T: Scalar>(g: &Tensor<T>) -> Tensor<T> {
    let k = g.shape()[1];
    let mut out = vec![T::zero(); k];
    for row in g.data().chunks_exact(k) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Tensor {
        shape: vec![k],
        data: out,
    }
}

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("add", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::new(a.shape().to_vec(), data)
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("mul", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    Tensor::new(a.shape().to_vec(), data)
}

pub fn scale<T: Scalar>(x: &Tensor<T>, c: T) -> Tensor<T> {
    x.map(|v| v * c)
}

pub fn sum<T: Scalar>(x: &Tensor<T>) -> T {
    x.data().iter().fold(T::zero(), |acc, &v| acc + v)
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Subgradient at zero is zero.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .zip(g.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor {
        shape: x.shape().to_vec(),
        data,
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvGeometry {
    channels: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeometry {
    fn patch(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

fn conv_geometry<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(usize, usize, ConvGeometry)> {
    let (n, c, h, w) = input.dims4("conv2d")?;
    let (f, c2, kh, kw) = kernel.dims4("conv2d")?;
    if c != c2 {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            lhs: input.shape().to_vec(),
            rhs: kernel.shape().to_vec(),
        });
    }
    if stride == 0 {
        return Err(Error::InvalidShape {
            op: "conv2d",
            detail: "stride must be positive".into(),
        });
    }
    if h + 2 * padding < kh || w + 2 * padding < kw {
        return Err(Error::InvalidShape {
            op: "conv2d",
            detail: format!(
                "kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * padding,
                w + 2 * padding
            ),
        });
    }
    let geo = ConvGeometry {
        channels: c,
        height: h,
        width: w,
        kh,
        kw,
        stride,
        padding,
        out_h: (h + 2 * padding - kh) / stride + 1,
        out_w: (w + 2 * padding - kw) / stride + 1,
    };
    Ok((n, f, geo))
}

/// Unfolds one image `[C×H×W]` into `[C·kh·kw × OH·OW]`.
fn im2col<T: Scalar>(img: &[T], geo: &ConvGeometry, cols: &mut [T]) {
    let p = geo.positions();
    for c in 0..geo.channels {
        let plane = &img[c * geo.height * geo.width..(c + 1) * geo.height * geo.width];
        for ky in 0..geo.kh {
            for kx in 0..geo.kw {
                let r = (c * geo.kh + ky) * geo.kw + kx;
                let dst = &mut cols[r * p..(r + 1) * p];
                for oy in 0..geo.out_h {
                    let iy = (oy * geo.stride + ky) as isize - geo.padding as isize;
                    let seg = &mut dst[oy * geo.out_w..(oy + 1) * geo.out_w];
                    if iy < 0 || iy >= geo.height as isize {
                        seg.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * geo.width..(iy as usize + 1) * geo.width];
                    for (ox, v) in seg.iter_mut().enumerate() {
                        let ix = (ox * geo.stride + kx) as isize - geo.padding as isize;
                        *v = if ix < 0 || ix >= geo.width as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the image.
fn col2im<T: Scalar>(cols: &[T], geo: &ConvGeometry, img: &mut [T]) {
    let p = geo.positions();
    for c in 0..geo.channels {
        let plane = &mut img[c * geo.height * geo.width..(c + 1) * geo.height * geo.width];
        for ky in 0..geo.kh {
            for kx in 0..geo.kw {
                let r = (c * geo.kh + ky) * geo.kw + kx;
                let src = &cols[r * p..(r + 1) * p];
                for oy in 0..geo.out_h {
                    let iy = (oy * geo.stride + ky) as isize - geo.padding as isize;
                    if iy < 0 || iy >= geo.height as isize {
                        continue;
                    }
                    let row = &mut plane[iy as usize * geo.width..(iy as usize + 1) * geo.width];
                    for ox in 0..geo.out_w {
                        let ix = (ox * geo.stride + kx) as isize - geo.padding as isize;
                        if ix >= 0 && ix < geo.width as isize {
                            row[ix as usize] += src[oy * geo.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `[N×C×H×W]` with `[F×C×kh×kw]`, zero padding.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, stride: usize, padding: usize) -> Result<Tensor<T>> {
    let (n, f, geo) = conv_geometry(input, kernel, stride, padding)?;
    let (patch, positions) = (geo.patch(), geo.positions());
    let img_len = geo.channels * geo.height * geo.width;
    let kd = kernel.data();
    let mut cols = vec![T::zero(); patch * positions];
    let mut out = vec![T::zero(); n * f * positions];
    for (img, out_img) in input
        .data()
        .chunks_exact(img_len)
        .zip(out.chunks_exact_mut(f * positions))
    {
        im2col(img, &geo, &mut cols);
        for (fi, orow) in out_img.chunks_exact_mut(positions).enumerate() {
            for r in 0..patch {
                axpy(orow, kd[fi * patch + r], &cols[r * positions..(r + 1) * positions]);
            }
        }
    }
    Tensor::new(vec![n, f, geo.out_h, geo.out_w], out)
}

/// Input and kernel gradients; either is `None` when not requested.
pub type GradPair<T> = (Option<Tensor<T>>, Option<Tensor<T>>);

/// Gradients of [`conv2d`] with respect to its input (when requested) and kernel.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    padding: usize,
    g: &Tensor<T>,
    need_input: bool,
    need_kernel: bool,
) -> Result<GradPair<T>> {
    let (_, f, geo) = conv_geometry(input, kernel, stride, padding)?;
    let (patch, positions) = (geo.patch(), geo.positions());
    let img_len = geo.channels * geo.height * geo.width;
    let kd = kernel.data();
    let mut cols = vec![T::zero(); patch * positions];
    let mut gcols = vec![T::zero(); patch * positions];
    let mut gk = need_kernel.then(|| vec![T::zero(); f * patch]);
    let mut gin = need_input.then(|| vec![T::zero(); input.len()]);
    for (idx, (img, gimg)) in input
        .data()
        .chunks_exact(img_len)
        .zip(g.data().chunks_exact(f * positions))
        .enumerate()
    {
        if let Some(gk) = gk.as_mut() {
            im2col(img, &geo, &mut cols);
            for fi in 0..f {
                let grow = &gimg[fi * positions..(fi + 1) * positions];
                for r in 0..patch {
                    gk[fi * patch + r] += dot(grow, &cols[r * positions..(r + 1) * positions]);
                }
            }
        }
        if let Some(gin) = gin.as_mut() {
            gcols.fill(T::zero());
            for fi in 0..f {
                let grow = &gimg[fi * positions..(fi + 1) * positions];
                for r in 0..patch {
                    axpy(&mut gcols[r * positions..(r + 1) * positions], kd[fi * patch + r], grow);
                }
            }
            col2im(&gcols, &geo, &mut gin[idx * img_len..(idx + 1) * img_len]);
        }
    }
    Ok((
        gin.map(|d| Tensor {
            shape: input.shape().to_vec(),
            data: d,
        }),
        gk.map(|d| Tensor {
            shape: kernel.shape().to_vec(),
            data: d,
        }),
    ))
}

/// Windowed maxima plus, for every output, the flat input index it came
/// from. Ties resolve to the lowest flat index.
pub fn max_pool2d<T: Scalar>(input: &Tensor<T>, window: usize, stride: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, c, h, w) = input.dims4("max_pool2d")?;
    if window == 0 || stride == 0 || window > h || window > w {
        return Err(Error::InvalidShape {
            op: "max_pool2d",
            detail: format!("window {window} stride {stride} on {h}x{w} input"),
        });
    }
    let (oh, ow) = ((h - window) / stride + 1, (w - window) / stride + 1);
    let d = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * stride * w + ox * stride;
                for ky in 0..window {
                    for kx in 0..window {
                        let idx = base + (oy * stride + ky) * w + ox * stride + kx;
                        if d[idx] > d[best] {
                            best = idx;
                        }
                    }
                }
                out.push(d[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, oh, ow], out)?, argmax))
}

pub fn max_pool2d_backward<T: Scalar>(input_shape: &[usize], argmax: &[usize], g: &Tensor<T>) -> Tensor<T> {
    let mut out = Tensor::zeros(input_shape);
    let od = out.data_mut();
    for (&idx, &gv) in argmax.iter().zip(g.data()) {
        od[idx] += gv;
    }
    out
}

/// Row-wise softmax with max subtraction.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, k) = logits.dims2("softmax")?;
    if k < 2 {
        return Err(Error::InvalidShape {
            op: "softmax",
            detail: format!("need at least 2 classes, got {k}"),
        });
    }
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(k) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
    Ok(out)
}

pub fn softmax_backward<T: Scalar>(probs: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let k = probs.shape()[1];
    let mut out = Vec::with_capacity(probs.len());
    for (p, gr) in probs.data().chunks_exact(k).zip(g.data().chunks_exact(k)) {
        let s = p.iter().zip(gr).fold(T::zero(), |acc, (&p, &g)| acc + p * g);
        out.extend(p.iter().zip(gr).map(|(&p, &g)| p * (g - s)));
    }
    Tensor {
        shape: probs.shape().to_vec(),
        data: out,
    }
}

fn check_labels<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> Result<(usize, usize)> {
    let (n, k) = probs.dims2("cross_entropy")?;
    if labels.len() != n {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy",
            lhs: probs.shape().to_vec(),
            rhs: vec![labels.len()],
        });
    }
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(Error::LabelOutOfRange {
            index,
            label,
            num_classes: k,
            origin: None,
        });
    }
    Ok((n, k))
}

/// Negative log-likelihood of one probability, floored at [`PROB_FLOOR`].
#[inline]
pub fn nll(p: f64) -> f64 {
    -p.max(PROB_FLOOR).ln()
}

/// Mean negative log-likelihood of the labelled classes.
pub fn cross_entropy<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> Result<T> {
    let (n, k) = check_labels(probs, labels)?;
    let d = probs.data();
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| nll(d[i * k + y].as_f64()))
        .sum();
    Ok(T::of(total / n as f64))
}

pub fn cross_entropy_backward<T: Scalar>(probs: &Tensor<T>, labels: &[usize], g: T) -> Tensor<T> {
    let (n, k) = (probs.shape()[0], probs.shape()[1]);
    let mut out = Tensor::zeros(probs.shape());
    let scale = g / T::of(n as f64);
    let floor = T::of(PROB_FLOOR);
    for (i, &y) in labels.iter().enumerate() {
        let p = probs.data()[i * k + y];
        if p >= floor {
            out.data_mut()[i * k + y] = -scale / p;
        }
    }
    out
}
