//! Forward and backward kernels for the handful of layers the segmentation
//! network is built from. Every kernel is a plain function over [`Tensor`]s;
//! the forward variants that return a context save exactly what the matching
//! backward needs.
//!
//! All loops run in a fixed order, so results are bitwise reproducible.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Batch-norm behaviour: batch statistics (`Train`) or running statistics (`Infer`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

fn same_shape<T: Scalar>(what: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::contract(format!(
            "{what}: shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// conv2d

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct ConvGeom {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn new<T: Scalar>(
        input: &Tensor<T>,
        weight: &Tensor<T>,
        bias: &Tensor<T>,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let (n, cin, h, w) = input.dims4()?;
        let (cout, wcin, kh, kw) = weight.dims4()?;
        if wcin != cin {
            return Err(Error::contract(format!(
                "conv2d: input has {cin} channels but weight expects {wcin}"
            )));
        }
        if kh != kw || kh == 0 {
            return Err(Error::contract(format!(
                "conv2d: kernel must be square and non-empty, got {kh}x{kw}"
            )));
        }
        if bias.shape() != [cout] {
            return Err(Error::contract(format!(
                "conv2d: bias shape {:?} does not match {cout} output channels",
                bias.shape()
            )));
        }
        if !(1..=2).contains(&stride) {
            return Err(Error::contract(format!("conv2d: stride {stride} not in {{1, 2}}")));
        }
        let k = kh;
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::contract(format!(
                "conv2d: padded input {}x{} smaller than kernel {k}",
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        Ok(ConvGeom {
            n,
            cin,
            h,
            w,
            cout,
            k,
            stride,
            pad,
            oh: (h + 2 * pad - k) / stride + 1,
            ow: (w + 2 * pad - k) / stride + 1,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Rows of the unfolded matrix: `cin * k * k`.
    fn patch_len(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn out_len(&self) -> usize {
        self.oh * self.ow
    }
}

/// Unfold one sample `(cin, h, w)` into `(cin*k*k, oh*ow)`.
fn im2col<T: Scalar>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let n_out = g.out_len();
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for dy in 0..g.k {
            for dx in 0..g.k {
                let row = (ci * g.k + dy) * g.k + dx;
                let dst = &mut cols[row * n_out..(row + 1) * n_out];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + dy) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + dx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
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

/// Fold `(cin*k*k, oh*ow)` column gradients back onto a `(cin, h, w)` sample.
fn col2im<T: Scalar>(g: &ConvGeom, cols: &[T], dx_out: &mut [T]) {
    let n_out = g.out_len();
    for ci in 0..g.cin {
        let plane = &mut dx_out[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for dy in 0..g.k {
            for dx in 0..g.k {
                let row = (ci * g.k + dy) * g.k + dx;
                let src = &cols[row * n_out..(row + 1) * n_out];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + dy) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &src[oy * g.ow..(oy + 1) * g.ow];
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, &v) in line.iter().enumerate() {
                        let ix = (ox * g.stride + dx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] = dst[ix as usize] + v;
                        }
                    }
                }
            }
        }
    }
}

/// `out[m×n] += a[m×k] · b[k×n]`, i-k-j order.
fn gemm_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for kk in 0..k {
            let av = a[i * k + kk];
            if av == T::zero() {
                continue;
            }
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + av * bv;
            }
        }
    }
}

/// `out[k×n] += aᵀ · b` with `a[m×k]`, `b[m×n]`.
fn gemm_at_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let b_row = &b[i * n..(i + 1) * n];
        for kk in 0..k {
            let av = a[i * k + kk];
            if av == T::zero() {
                continue;
            }
            let out_row = &mut out[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + av * bv;
            }
        }
    }
}

fn transpose<T: Scalar>(src: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

/// Saved state for [`conv2d_backward`].
#[derive(Clone, Debug)]
pub struct Conv2dCtx<T> {
    geom: ConvGeom,
    input: Tensor<T>,
    weight: Tensor<T>,
}

pub struct Conv2dGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// 2-D cross-correlation with zero padding.
///
/// `out[n,o,y,x] = bias[o] + Σ in[n,i,y·s+dy−p, x·s+dx−p] · w[o,i,dy,dx]`
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeom::new(input, weight, bias, stride, padding)?;
    Ok(conv_forward(&g, input, weight, bias))
}

pub fn conv2d_with_ctx<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, Conv2dCtx<T>)> {
    let g = ConvGeom::new(input, weight, bias, stride, padding)?;
    let out = conv_forward(&g, input, weight, bias);
    Ok((
        out,
        Conv2dCtx {
            geom: g,
            input: input.clone(),
            weight: weight.clone(),
        },
    ))
}

fn conv_forward<T: Scalar>(g: &ConvGeom, input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Tensor<T> {
    let n_out = g.out_len();
    let rows = g.patch_len();
    let mut out = Tensor::zeros(&[g.n, g.cout, g.oh, g.ow]);
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); rows * n_out]
    };
    let per_in = g.cin * g.h * g.w;
    let per_out = g.cout * n_out;
    for s in 0..g.n {
        let x = &input.data()[s * per_in..(s + 1) * per_in];
        let y = &mut out.data_mut()[s * per_out..(s + 1) * per_out];
        for (o, &b) in bias.data().iter().enumerate() {
            y[o * n_out..(o + 1) * n_out].fill(b);
        }
        let b_mat: &[T] = if g.is_pointwise() {
            x
        } else {
            im2col(g, x, &mut cols);
            &cols
        };
        gemm_acc(weight.data(), b_mat, y, g.cout, rows, n_out);
    }
    out
}

pub fn conv2d_backward<T: Scalar>(ctx: &Conv2dCtx<T>, grad_out: &Tensor<T>) -> Result<Conv2dGrads<T>> {
    let g = &ctx.geom;
    if grad_out.shape() != [g.n, g.cout, g.oh, g.ow] {
        return Err(Error::contract(format!(
            "conv2d_backward: grad_out shape {:?} does not match forward output {:?}",
            grad_out.shape(),
            [g.n, g.cout, g.oh, g.ow]
        )));
    }
    let n_out = g.out_len();
    let rows = g.patch_len();
    let per_in = g.cin * g.h * g.w;
    let per_out = g.cout * n_out;

    let mut grad_in = Tensor::zeros(ctx.input.shape());
    let mut grad_w = Tensor::zeros(ctx.weight.shape());
    let mut grad_b = Tensor::zeros(&[g.cout]);
    let mut cols = vec![T::zero(); rows * n_out];
    let mut gcols = vec![T::zero(); rows * n_out];

    for s in 0..g.n {
        let x = &ctx.input.data()[s * per_in..(s + 1) * per_in];
        let gy = &grad_out.data()[s * per_out..(s + 1) * per_out];

        for (o, gb) in grad_b.data_mut().iter_mut().enumerate() {
            *gb = *gb + gy[o * n_out..(o + 1) * n_out].iter().copied().sum::<T>();
        }

        // grad_w += gy · colsᵀ
        let cols_t = if g.is_pointwise() {
            transpose(x, rows, n_out)
        } else {
            im2col(g, x, &mut cols);
            transpose(&cols, rows, n_out)
        };
        gemm_acc(gy, &cols_t, grad_w.data_mut(), g.cout, n_out, rows);

        // grad_cols = wᵀ · gy
        gcols.fill(T::zero());
        gemm_at_acc(ctx.weight.data(), gy, &mut gcols, g.cout, rows, n_out);
        let gx = &mut grad_in.data_mut()[s * per_in..(s + 1) * per_in];
        if g.is_pointwise() {
            gx.copy_from_slice(&gcols);
        } else {
            col2im(g, &gcols, gx);
        }
    }
    Ok(Conv2dGrads {
        input: grad_in,
        weight: grad_w,
        bias: grad_b,
    })
}

// ---------------------------------------------------------------------------
// batch norm

/// Per-channel running mean/variance of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    /// False until a train-mode pass (or a weight load) has populated the stats.
    pub recorded: bool,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
            recorded: false,
        }
    }

    pub fn cast<U: Scalar>(&self) -> RunningStats<U> {
        RunningStats {
            mean: self.mean.iter().map(|v| U::lit(v.as_f64())).collect(),
            var: self.var.iter().map(|v| U::lit(v.as_f64())).collect(),
            recorded: self.recorded,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BatchNormCtx<T> {
    mode: Mode,
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    gamma: Vec<T>,
}

pub struct BatchNormGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

/// Channel-wise batch normalization followed by the affine transform.
///
/// Train mode normalizes with the biased batch variance and folds the batch
/// statistics into `stats` with the given momentum.
pub fn batchnorm2d<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &mut RunningStats<T>,
    mode: Mode,
    momentum: f64,
    eps: f64,
) -> Result<(Tensor<T>, BatchNormCtx<T>)> {
    let (n, c, h, w) = input.dims4()?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::contract(format!(
            "batchnorm2d: gamma {:?} / beta {:?} must both be [{c}]",
            gamma.shape(),
            beta.shape()
        )));
    }
    if stats.mean.len() != c || stats.var.len() != c {
        return Err(Error::contract(format!(
            "batchnorm2d: running stats sized {} for {c} channels",
            stats.mean.len()
        )));
    }
    if eps <= 0.0 {
        return Err(Error::contract("batchnorm2d: eps must be positive"));
    }
    let hw = h * w;
    let m = n * hw;
    let (mean, var) = match mode {
        Mode::Train => {
            if m < 2 {
                return Err(Error::contract(format!(
                    "batchnorm2d: train mode needs at least 2 values per channel, got {m}"
                )));
            }
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            let inv_m = T::lit(1.0 / m as f64);
            for ch in 0..c {
                let mut acc = T::zero();
                for s in 0..n {
                    let base = (s * c + ch) * hw;
                    acc = acc + input.data()[base..base + hw].iter().copied().sum::<T>();
                }
                let mu = acc * inv_m;
                let mut acc2 = T::zero();
                for s in 0..n {
                    let base = (s * c + ch) * hw;
                    for &v in &input.data()[base..base + hw] {
                        acc2 = acc2 + (v - mu) * (v - mu);
                    }
                }
                mean[ch] = mu;
                var[ch] = acc2 * inv_m;
            }
            let mo = T::lit(momentum);
            let keep = T::one() - mo;
            for ch in 0..c {
                stats.mean[ch] = keep * stats.mean[ch] + mo * mean[ch];
                stats.var[ch] = keep * stats.var[ch] + mo * var[ch];
            }
            stats.recorded = true;
            (mean, var)
        }
        Mode::Infer => {
            static WARNED: std::sync::Once = std::sync::Once::new();
            if !stats.recorded {
                WARNED.call_once(|| {
                    log::warn!("batchnorm2d: inference before any statistics were recorded; using mean 0 / var 1")
                });
            }
            (stats.mean.clone(), stats.var.clone())
        }
    };
    let eps_t = T::lit(eps);
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps_t).sqrt()).collect();
    let mut xhat = Tensor::zeros(input.shape());
    let mut out = Tensor::zeros(input.shape());
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * hw;
            let (mu, is, ga, be) = (mean[ch], inv_std[ch], gamma.data()[ch], beta.data()[ch]);
            for i in base..base + hw {
                let xh = (input.data()[i] - mu) * is;
                xhat.data_mut()[i] = xh;
                out.data_mut()[i] = ga * xh + be;
            }
        }
    }
    Ok((
        out,
        BatchNormCtx {
            mode,
            xhat,
            inv_std,
            gamma: gamma.data().to_vec(),
        },
    ))
}

pub fn batchnorm2d_backward<T: Scalar>(ctx: &BatchNormCtx<T>, grad_out: &Tensor<T>) -> Result<BatchNormGrads<T>> {
    if grad_out.shape() != ctx.xhat.shape() {
        return Err(Error::contract(format!(
            "batchnorm2d_backward: grad_out shape {:?} vs forward {:?}",
            grad_out.shape(),
            ctx.xhat.shape()
        )));
    }
    let (n, c, h, w) = grad_out.dims4()?;
    let hw = h * w;
    let m = T::lit((n * hw) as f64);
    let mut ggamma = Tensor::zeros(&[c]);
    let mut gbeta = Tensor::zeros(&[c]);
    for ch in 0..c {
        let mut sg = T::zero();
        let mut sgx = T::zero();
        for s in 0..n {
            let base = (s * c + ch) * hw;
            for i in base..base + hw {
                let dy = grad_out.data()[i];
                sg = sg + dy;
                sgx = sgx + dy * ctx.xhat.data()[i];
            }
        }
        gbeta.data_mut()[ch] = sg;
        ggamma.data_mut()[ch] = sgx;
    }
    let mut gin = Tensor::zeros(grad_out.shape());
    for ch in 0..c {
        let scale = ctx.gamma[ch] * ctx.inv_std[ch];
        let (sg, sgx) = (gbeta.data()[ch], ggamma.data()[ch]);
        for s in 0..n {
            let base = (s * c + ch) * hw;
            for i in base..base + hw {
                let dy = grad_out.data()[i];
                gin.data_mut()[i] = match ctx.mode {
                    Mode::Train => scale * (dy - sg / m - ctx.xhat.data()[i] * sgx / m),
                    Mode::Infer => scale * dy,
                };
            }
        }
    }
    Ok(BatchNormGrads {
        input: gin,
        gamma: ggamma,
        beta: gbeta,
    })
}

// ---------------------------------------------------------------------------
// pointwise ops

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes `grad_out` where the forward input was strictly positive.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("relu_backward", input, grad_out)?;
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

pub fn add_residual<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("add_residual", a, b)?;
    let mut out = a.clone();
    out.add_assign(b)?;
    Ok(out)
}

/// Both inputs receive `grad_out` unchanged.
pub fn add_residual_backward<T: Scalar>(grad_out: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    (grad_out.clone(), grad_out.clone())
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample2x<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    for p in 0..n * c {
        let src = &input.data()[p * h * w..(p + 1) * h * w];
        let dst = &mut out.data_mut()[p * oh * ow..(p + 1) * oh * ow];
        for y in 0..oh {
            let row = &src[(y / 2) * w..(y / 2 + 1) * w];
            for (x, v) in dst[y * ow..(y + 1) * ow].iter_mut().enumerate() {
                *v = row[x / 2];
            }
        }
    }
    Ok(out)
}

/// Sums each 2×2 block of `grad_out` into its parent cell.
pub fn upsample2x_backward<T: Scalar>(grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, oh, ow) = grad_out.dims4()?;
    if oh % 2 != 0 || ow % 2 != 0 {
        return Err(Error::contract(format!(
            "upsample2x_backward: odd gradient size {oh}x{ow}"
        )));
    }
    let (h, w) = (oh / 2, ow / 2);
    let mut out = Tensor::zeros(&[n, c, h, w]);
    for p in 0..n * c {
        let src = &grad_out.data()[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut out.data_mut()[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let i = 2 * y * ow + 2 * x;
                dst[y * w + x] = src[i] + src[i + 1] + src[i + ow] + src[i + ow + 1];
            }
        }
    }
    Ok(out)
}

pub fn sigmoid<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| {
        if x >= T::zero() {
            T::one() / (T::one() + (-x).exp())
        } else {
            let e = x.exp();
            e / (T::one() + e)
        }
    })
}

/// Backward from the saved forward *output* `y`: `y·(1−y)·grad_out`.
pub fn sigmoid_backward<T: Scalar>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("sigmoid_backward", output, grad_out)?;
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| y * (T::one() - y) * g)
        .collect();
    Tensor::from_vec(output.shape(), data)
}
