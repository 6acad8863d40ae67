//! Field dynamics models: a shallow U-Net and an MLP baseline, with full
//! reverse-mode gradients (parameters and inputs), training, sequential
//! rollout and checkpointing.
//!
//! Convolutions run as im2col + GEMM; transposed convolutions reuse the same
//! column machinery in reverse. Everything is generic over [`Real`] so the
//! finite-difference suites can verify the exact same code path in f64.

mod checkpoint;
mod mlp;
mod tensor;
mod train;
mod unet;

pub use checkpoint::{load_checkpoint, save_checkpoint, ModelCheckpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use mlp::{Mlp, MlpTape, MLP_SIDE};
pub use tensor::Tensor;
pub use train::{train_mlp, train_unet, Adam, PreparedData, TrainConfig};
pub use unet::{UNet, UNetTape, UNET_STRIDE};

use serde::{Deserialize, Serialize};

use crate::real::Real;

/// Padding behavior of every convolution in a model. Zero padding matches
/// workspace walls; circular padding makes stride-multiple translation
/// equivariance exactly assertable and exists for verification.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PadMode {
    Zero,
    Circular,
}

/// What the forward pass records for the backward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TapeMode {
    /// Keep layer inputs too: enables parameter gradients (training).
    Full,
    /// Keep only activation signs: input cotangents only (planning).
    InputGradOnly,
}

/// Production model handle; variants are registered by architecture name
/// (see [`arch_names`], [`checkpoint`]).
#[derive(Clone, Debug)]
pub enum Model {
    UNet(UNet<f32>),
    Mlp(Mlp<f32>),
}

impl Model {
    pub fn arch_name(&self) -> &'static str {
        match self {
            Model::UNet(_) => "unet",
            Model::Mlp(_) => "mlp",
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Model::UNet(m) => m.params.len(),
            Model::Mlp(m) => m.params.len(),
        }
    }

    /// Single-record prediction at the serving grid, optionally clamped to
    /// non-negative values (metrics mode).
    pub fn predict(
        &self,
        s: &crate::grid::DensityField,
        a0: &crate::grid::DensityField,
        a1: &crate::grid::DensityField,
        clamp: bool,
    ) -> crate::grid::DensityField {
        let out = match self {
            Model::UNet(m) => m.predict_field(s, a0, a1),
            Model::Mlp(m) => m.predict_field(s, a0, a1),
        };
        if clamp {
            crate::grid::Field {
                spec: out.spec,
                values: out.values.into_iter().map(|v| v.max(0.0)).collect(),
            }
        } else {
            out
        }
    }
}

/// Registered architecture names, selectable in configs and checkpoints.
pub fn arch_names() -> &'static [&'static str] {
    &["unet", "mlp"]
}

// ---------------------------------------------------------------------------
// Convolution primitives
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvShape {
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvShape {
    pub const K3S1: ConvShape = ConvShape { k: 3, stride: 1, pad: 1 };
    pub const K3S2: ConvShape = ConvShape { k: 3, stride: 2, pad: 1 };
    pub const K2S2: ConvShape = ConvShape { k: 2, stride: 2, pad: 0 };
    pub const K1S1: ConvShape = ConvShape { k: 1, stride: 1, pad: 0 };

    #[inline]
    pub fn out_dim(&self, d: usize) -> usize {
        (d + 2 * self.pad - self.k) / self.stride + 1
    }
}

/// Gather input patches into a [c_in*k*k, oh*ow] column matrix (one sample).
pub(crate) fn im2col<T: Real>(
    src: &[T],
    c_in: usize,
    h: usize,
    w: usize,
    sh: ConvShape,
    mode: PadMode,
    cols: &mut [T],
) {
    let (oh, ow) = (sh.out_dim(h), sh.out_dim(w));
    let plane = h * w;
    let n_cols = oh * ow;
    debug_assert_eq!(cols.len(), c_in * sh.k * sh.k * n_cols);
    let mut row = 0usize;
    for ci in 0..c_in {
        let splane = &src[ci * plane..(ci + 1) * plane];
        for ky in 0..sh.k {
            for kx in 0..sh.k {
                let dst = &mut cols[row * n_cols..(row + 1) * n_cols];
                row += 1;
                let mut di = 0usize;
                for oy in 0..oh {
                    let iy = (oy * sh.stride + ky) as isize - sh.pad as isize;
                    let iy = match mode {
                        PadMode::Zero => {
                            if iy < 0 || iy >= h as isize {
                                for slot in dst[di..di + ow].iter_mut() {
                                    *slot = T::zero();
                                }
                                di += ow;
                                continue;
                            }
                            iy as usize
                        }
                        PadMode::Circular => iy.rem_euclid(h as isize) as usize,
                    };
                    let base = iy * w;
                    for ox in 0..ow {
                        let ix = (ox * sh.stride + kx) as isize - sh.pad as isize;
                        dst[di] = match mode {
                            PadMode::Zero => {
                                if ix < 0 || ix >= w as isize {
                                    T::zero()
                                } else {
                                    splane[base + ix as usize]
                                }
                            }
                            PadMode::Circular => splane[base + ix.rem_euclid(w as isize) as usize],
                        };
                        di += 1;
                    }
                }
            }
        }
    }
}

/// Scatter-add a [c*k*k, oh*ow] column matrix back onto the input plane
/// (adjoint of [`im2col`]).
pub(crate) fn col2im_add<T: Real>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    sh: ConvShape,
    mode: PadMode,
    dst: &mut [T],
) {
    let (oh, ow) = (sh.out_dim(h), sh.out_dim(w));
    let plane = h * w;
    let n_cols = oh * ow;
    debug_assert_eq!(cols.len(), c * sh.k * sh.k * n_cols);
    let mut row = 0usize;
    for ci in 0..c {
        let dplane = &mut dst[ci * plane..(ci + 1) * plane];
        for ky in 0..sh.k {
            for kx in 0..sh.k {
                let srow = &cols[row * n_cols..(row + 1) * n_cols];
                row += 1;
                let mut si = 0usize;
                for oy in 0..oh {
                    let iy = (oy * sh.stride + ky) as isize - sh.pad as isize;
                    let iy = match mode {
                        PadMode::Zero => {
                            if iy < 0 || iy >= h as isize {
                                si += ow;
                                continue;
                            }
                            iy as usize
                        }
                        PadMode::Circular => iy.rem_euclid(h as isize) as usize,
                    };
                    let base = iy * w;
                    for ox in 0..ow {
                        let ix = (ox * sh.stride + kx) as isize - sh.pad as isize;
                        match mode {
                            PadMode::Zero => {
                                if ix >= 0 && ix < w as isize {
                                    dplane[base + ix as usize] += srow[si];
                                }
                            }
                            PadMode::Circular => {
                                dplane[base + ix.rem_euclid(w as isize) as usize] += srow[si];
                            }
                        }
                        si += 1;
                    }
                }
            }
        }
    }
}

/// Forward convolution: weights [c_out, c_in*k*k], bias [c_out].
pub(crate) fn conv_forward<T: Real>(
    x: &Tensor<T>,
    weight: &[T],
    bias: &[T],
    c_out: usize,
    sh: ConvShape,
    mode: PadMode,
) -> Tensor<T> {
    let (oh, ow) = (sh.out_dim(x.h), sh.out_dim(x.w));
    let n_cols = oh * ow;
    let kk = x.c * sh.k * sh.k;
    debug_assert_eq!(weight.len(), c_out * kk);
    let mut out = Tensor::zeros(x.n, c_out, oh, ow);
    let mut cols = vec![T::zero(); kk * n_cols];
    for i in 0..x.n {
        im2col(x.sample(i), x.c, x.h, x.w, sh, mode, &mut cols);
        let dst = out.sample_mut(i);
        T::gemm(c_out, kk, n_cols, T::one(), weight, &cols, T::zero(), dst);
        for co in 0..c_out {
            let b = bias[co];
            for v in dst[co * n_cols..(co + 1) * n_cols].iter_mut() {
                *v += b;
            }
        }
    }
    out
}

/// Input cotangent of [`conv_forward`].
pub(crate) fn conv_backward_input<T: Real>(
    up: &Tensor<T>,
    weight: &[T],
    c_in: usize,
    in_h: usize,
    in_w: usize,
    sh: ConvShape,
    mode: PadMode,
) -> Tensor<T> {
    let c_out = up.c;
    let kk = c_in * sh.k * sh.k;
    let n_cols = up.h * up.w;
    // transpose W once: [kk, c_out]
    let mut wt = vec![T::zero(); kk * c_out];
    for co in 0..c_out {
        for r in 0..kk {
            wt[r * c_out + co] = weight[co * kk + r];
        }
    }
    let mut din = Tensor::zeros(up.n, c_in, in_h, in_w);
    let mut cols = vec![T::zero(); kk * n_cols];
    for i in 0..up.n {
        T::gemm(kk, c_out, n_cols, T::one(), &wt, up.sample(i), T::zero(), &mut cols);
        col2im_add(&cols, c_in, in_h, in_w, sh, mode, din.sample_mut(i));
    }
    din
}

/// Parameter cotangents of [`conv_forward`]; accumulates into dw/db.
pub(crate) fn conv_backward_params<T: Real>(
    up: &Tensor<T>,
    x: &Tensor<T>,
    sh: ConvShape,
    mode: PadMode,
    dw: &mut [T],
    db: &mut [T],
) {
    let c_out = up.c;
    let kk = x.c * sh.k * sh.k;
    let n_cols = up.h * up.w;
    debug_assert_eq!(dw.len(), c_out * kk);
    let mut cols = vec![T::zero(); kk * n_cols];
    // dW[co, r] += sum_i up_i[co, :] . cols_i[r, :]^T
    let mut colst = vec![T::zero(); n_cols * kk];
    for i in 0..up.n {
        im2col(x.sample(i), x.c, x.h, x.w, sh, mode, &mut cols);
        for r in 0..kk {
            for q in 0..n_cols {
                colst[q * kk + r] = cols[r * n_cols + q];
            }
        }
        T::gemm(c_out, n_cols, kk, T::one(), up.sample(i), &colst, T::one(), dw);
        let usamp = up.sample(i);
        for co in 0..c_out {
            let mut acc = T::zero();
            for &v in &usamp[co * n_cols..(co + 1) * n_cols] {
                acc += v;
            }
            db[co] += acc;
        }
    }
}

/// Forward transposed convolution (k = stride = 2, exact 2x upsampling).
/// Weights [c_in, c_out*k*k] laid out as [ci][co][ky][kx]; bias [c_out].
pub(crate) fn tconv_forward<T: Real>(
    x: &Tensor<T>,
    weight: &[T],
    bias: &[T],
    c_out: usize,
) -> Tensor<T> {
    let sh = ConvShape::K2S2;
    let (oh, ow) = (x.h * 2, x.w * 2);
    let kk = c_out * 4;
    debug_assert_eq!(weight.len(), x.c * kk);
    // reorder W to [c_out*4, c_in] rows so one GEMM yields scatter columns
    let mut wr = vec![T::zero(); kk * x.c];
    for ci in 0..x.c {
        for r in 0..kk {
            wr[r * x.c + ci] = weight[ci * kk + r];
        }
    }
    let n_cols = x.h * x.w;
    let mut out = Tensor::zeros(x.n, c_out, oh, ow);
    let mut cols = vec![T::zero(); kk * n_cols];
    for i in 0..x.n {
        T::gemm(kk, x.c, n_cols, T::one(), &wr, x.sample(i), T::zero(), &mut cols);
        // columns are patches of the *output*: scatter with the output as the
        // "input" of the k2s2 window map
        col2im_add(&cols, c_out, oh, ow, sh, PadMode::Zero, out.sample_mut(i));
        let dst = out.sample_mut(i);
        for co in 0..c_out {
            let b = bias[co];
            for v in dst[co * oh * ow..(co + 1) * oh * ow].iter_mut() {
                *v += b;
            }
        }
    }
    out
}

/// Input cotangent of [`tconv_forward`].
pub(crate) fn tconv_backward_input<T: Real>(up: &Tensor<T>, weight: &[T], c_in: usize) -> Tensor<T> {
    let sh = ConvShape::K2S2;
    let (ih, iw) = (up.h / 2, up.w / 2);
    let kk = up.c * 4;
    let n_cols = ih * iw;
    let mut din = Tensor::zeros(up.n, c_in, ih, iw);
    let mut cols = vec![T::zero(); kk * n_cols];
    for i in 0..up.n {
        im2col(up.sample(i), up.c, up.h, up.w, sh, PadMode::Zero, &mut cols);
        // dIn[ci, :] = W[ci, kk] x cols[kk, n_cols]
        T::gemm(c_in, kk, n_cols, T::one(), weight, &cols, T::zero(), din.sample_mut(i));
    }
    din
}

/// Parameter cotangents of [`tconv_forward`].
pub(crate) fn tconv_backward_params<T: Real>(
    up: &Tensor<T>,
    x: &Tensor<T>,
    dw: &mut [T],
    db: &mut [T],
) {
    let sh = ConvShape::K2S2;
    let kk = up.c * 4;
    let n_cols = x.h * x.w;
    debug_assert_eq!(dw.len(), x.c * kk);
    let mut cols = vec![T::zero(); kk * n_cols];
    let mut colst = vec![T::zero(); n_cols * kk];
    for i in 0..up.n {
        im2col(up.sample(i), up.c, up.h, up.w, sh, PadMode::Zero, &mut cols);
        for r in 0..kk {
            for q in 0..n_cols {
                colst[q * kk + r] = cols[r * n_cols + q];
            }
        }
        // dW[ci, kk] += x_i[ci, n_cols] . cols^T[n_cols, kk]
        T::gemm(x.c, n_cols, kk, T::one(), x.sample(i), &colst, T::one(), dw);
        let usamp = up.sample(i);
        let ohw = up.h * up.w;
        for co in 0..up.c {
            let mut acc = T::zero();
            for &v in &usamp[co * ohw..(co + 1) * ohw] {
                acc += v;
            }
            db[co] += acc;
        }
    }
}

pub(crate) fn relu_inplace<T: Real>(x: &mut Tensor<T>) {
    for v in x.data.iter_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// upstream masked by the activation output sign.
pub(crate) fn relu_backward<T: Real>(up: &mut Tensor<T>, post: &Tensor<T>) {
    debug_assert_eq!(up.data.len(), post.data.len());
    for (g, &o) in up.data.iter_mut().zip(post.data.iter()) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

pub(crate) fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    debug_assert!(a.n == b.n && a.h == b.h && a.w == b.w);
    let mut out = Tensor::zeros(a.n, a.c + b.c, a.h, a.w);
    let plane = a.h * a.w;
    for i in 0..a.n {
        let dst = out.sample_mut(i);
        dst[..a.c * plane].copy_from_slice(a.sample(i));
        dst[a.c * plane..].copy_from_slice(b.sample(i));
    }
    out
}

pub(crate) fn split_channels<T: Real>(x: &Tensor<T>, c_a: usize) -> (Tensor<T>, Tensor<T>) {
    let c_b = x.c - c_a;
    let plane = x.h * x.w;
    let mut a = Tensor::zeros(x.n, c_a, x.h, x.w);
    let mut b = Tensor::zeros(x.n, c_b, x.h, x.w);
    for i in 0..x.n {
        let src = x.sample(i);
        a.sample_mut(i).copy_from_slice(&src[..c_a * plane]);
        b.sample_mut(i).copy_from_slice(&src[c_a * plane..]);
    }
    (a, b)
}
