//! The shallow U-Net field dynamics model f(s_t, a_t) -> s_{t+1}.
//!
//! Topology (3-channel input = state + rendered action pair):
//!
//! ```text
//! x0 -conv3x3-> e1(8) -conv3x3/2-> e2(16) -conv3x3/2-> e3(32)
//! e3 -tconv-> d2(16)  [concat e2] -conv3x3-> d2b(16)
//! d2b -tconv-> d1(8)  [concat e1] -conv3x3-> d1b(8) -conv1x1-> out(1)
//! ```
//!
//! ReLU follows every 3x3 convolution; the head is linear. Widths put the
//! parameter count at 14409.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use super::{
    concat_channels, conv_backward_input, conv_backward_params, conv_forward, relu_backward,
    relu_inplace, split_channels, tconv_backward_input, tconv_backward_params, tconv_forward,
    ConvShape, PadMode, TapeMode,
};
use crate::error::{Error, Result};
use crate::grid::{DensityField, Field, GridSpec};
use crate::real::Real;

/// Product of the encoder strides; grids must be divisible by this.
pub const UNET_STRIDE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Conv3x3,
    Conv3x3Stride2,
    TransposedConv,
    Conv1x1,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LayerDesc {
    pub kind: LayerKind,
    pub c_in: usize,
    pub c_out: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LayerMeta {
    pub desc: LayerDesc,
    pub w_off: usize,
    pub w_len: usize,
    pub b_off: usize,
}

impl LayerDesc {
    fn weight_len(&self) -> usize {
        let kk = match self.kind {
            LayerKind::Conv3x3 | LayerKind::Conv3x3Stride2 => 9,
            LayerKind::TransposedConv => 4,
            LayerKind::Conv1x1 => 1,
        };
        self.c_in * self.c_out * kk
    }

    fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Conv3x3 | LayerKind::Conv3x3Stride2 => self.c_in * 9,
            LayerKind::TransposedConv => self.c_in * 4,
            LayerKind::Conv1x1 => self.c_in,
        }
    }
}

/// Fixed 8-layer architecture.
pub fn unet_layers() -> Vec<LayerDesc> {
    use LayerKind::*;
    vec![
        LayerDesc { kind: Conv3x3, c_in: 3, c_out: 8 },
        LayerDesc { kind: Conv3x3Stride2, c_in: 8, c_out: 16 },
        LayerDesc { kind: Conv3x3Stride2, c_in: 16, c_out: 32 },
        LayerDesc { kind: TransposedConv, c_in: 32, c_out: 16 },
        LayerDesc { kind: Conv3x3, c_in: 32, c_out: 16 },
        LayerDesc { kind: TransposedConv, c_in: 16, c_out: 8 },
        LayerDesc { kind: Conv3x3, c_in: 16, c_out: 8 },
        LayerDesc { kind: Conv1x1, c_in: 8, c_out: 1 },
    ]
}

#[derive(Clone, Debug)]
pub struct UNet<T> {
    pub(crate) metas: Vec<LayerMeta>,
    pub params: Vec<T>,
    pub pad: PadMode,
}

/// Forward activations kept for the backward pass. Post-ReLU tensors double
/// as activation masks; x0/d2/d1 are only needed for parameter gradients.
#[derive(Clone, Debug)]
pub struct UNetTape<T> {
    e1: Tensor<T>,
    e2: Tensor<T>,
    e3: Tensor<T>,
    d2b: Tensor<T>,
    d1b: Tensor<T>,
    x0: Option<Tensor<T>>,
    d2: Option<Tensor<T>>,
    d1: Option<Tensor<T>>,
}

fn build_metas(descs: &[LayerDesc]) -> (Vec<LayerMeta>, usize) {
    let mut metas = Vec::with_capacity(descs.len());
    let mut off = 0usize;
    for d in descs {
        let w_len = d.weight_len();
        metas.push(LayerMeta { desc: *d, w_off: off, w_len, b_off: off + w_len });
        off += w_len + d.c_out;
    }
    (metas, off)
}

impl<T: Real> UNet<T> {
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization of weights
    /// and biases, reproducible from the seed.
    pub fn new(pad: PadMode, seed: u64) -> Self {
        let (metas, total) = build_metas(&unet_layers());
        let mut params = vec![T::zero(); total];
        let mut rng = crate::rng::stream_rng(seed, "unet-init");
        for m in &metas {
            let bound = 1.0 / (m.desc.fan_in() as f64).sqrt();
            for v in params[m.w_off..m.b_off + m.desc.c_out].iter_mut() {
                *v = T::from_f64(rng.gen_range(-bound..bound));
            }
        }
        UNet { metas, params, pad }
    }

    /// All parameters set to zero (the linear head then outputs zero).
    pub fn zeroed(pad: PadMode) -> Self {
        let (metas, total) = build_metas(&unet_layers());
        UNet { metas, params: vec![T::zero(); total], pad }
    }

    pub fn layer_descs(&self) -> Vec<LayerDesc> {
        self.metas.iter().map(|m| m.desc).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn weights(&self, i: usize) -> (&[T], &[T]) {
        let m = &self.metas[i];
        (
            &self.params[m.w_off..m.w_off + m.w_len],
            &self.params[m.b_off..m.b_off + m.desc.c_out],
        )
    }

    pub fn check_grid(&self, spec: &GridSpec) -> Result<()> {
        if spec.height % UNET_STRIDE != 0 || spec.width % UNET_STRIDE != 0 {
            return Err(Error::StrideConstraint {
                h: spec.height,
                w: spec.width,
                stride: UNET_STRIDE,
            });
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> UNet<U> {
        UNet {
            metas: self.metas.clone(),
            params: self.params.iter().map(|v| U::from_f64(v.as_f64())).collect(),
            pad: self.pad,
        }
    }

    /// Batched forward pass over stacked 3-channel inputs.
    pub fn forward_batch(&self, x0: &Tensor<T>, mode: TapeMode) -> (Tensor<T>, UNetTape<T>) {
        debug_assert_eq!(x0.c, 3);
        debug_assert!(x0.h % UNET_STRIDE == 0 && x0.w % UNET_STRIDE == 0);
        let pad = self.pad;
        let (w, b) = self.weights(0);
        let mut e1 = conv_forward(x0, w, b, 8, ConvShape::K3S1, pad);
        relu_inplace(&mut e1);
        let (w, b) = self.weights(1);
        let mut e2 = conv_forward(&e1, w, b, 16, ConvShape::K3S2, pad);
        relu_inplace(&mut e2);
        let (w, b) = self.weights(2);
        let mut e3 = conv_forward(&e2, w, b, 32, ConvShape::K3S2, pad);
        relu_inplace(&mut e3);
        let (w, b) = self.weights(3);
        let d2 = tconv_forward(&e3, w, b, 16);
        let c2 = concat_channels(&d2, &e2);
        let (w, b) = self.weights(4);
        let mut d2b = conv_forward(&c2, w, b, 16, ConvShape::K3S1, pad);
        relu_inplace(&mut d2b);
        let (w, b) = self.weights(5);
        let d1 = tconv_forward(&d2b, w, b, 8);
        let c1 = concat_channels(&d1, &e1);
        let (w, b) = self.weights(6);
        let mut d1b = conv_forward(&c1, w, b, 8, ConvShape::K3S1, pad);
        relu_inplace(&mut d1b);
        let (w, b) = self.weights(7);
        let out = conv_forward(&d1b, w, b, 1, ConvShape::K1S1, pad);

        let full = mode == TapeMode::Full;
        let tape = UNetTape {
            e1,
            e2,
            e3,
            d2b,
            d1b,
            x0: full.then(|| x0.clone()),
            d2: full.then_some(d2),
            d1: full.then_some(d1),
        };
        (out, tape)
    }

    /// Reverse-mode pass. Returns the input cotangent (3 channels) and,
    /// when requested (requires a Full tape), flat parameter cotangents.
    pub fn vjp_batch(
        &self,
        tape: &UNetTape<T>,
        upstream: &Tensor<T>,
        want_params: bool,
    ) -> (Tensor<T>, Option<Vec<T>>) {
        let pad = self.pad;
        let mut pg = want_params.then(|| vec![T::zero(); self.params.len()]);
        debug_assert!(!want_params || tape.x0.is_some(), "parameter gradients need a Full tape");

        // disjoint (dw, db) views into the flat cotangent vector for layer i
        macro_rules! layer_grads {
            ($pg:expr, $i:expr) => {{
                let m = &self.metas[$i];
                $pg[m.w_off..m.b_off + m.desc.c_out].split_at_mut(m.w_len)
            }};
        }

        // layer 7: conv1x1
        let (w7, _) = self.weights(7);
        let mut g = conv_backward_input(upstream, w7, 8, tape.d1b.h, tape.d1b.w, ConvShape::K1S1, pad);
        if let Some(pg) = pg.as_mut() {
            let (dw, db) = layer_grads!(pg, 7);
            conv_backward_params(upstream, &tape.d1b, ConvShape::K1S1, pad, dw, db);
        }
        relu_backward(&mut g, &tape.d1b);

        // layer 6: conv3x3 on c1 = concat(d1, e1)
        let (w6, _) = self.weights(6);
        let gc1 = conv_backward_input(&g, w6, 16, g.h, g.w, ConvShape::K3S1, pad);
        if let Some(pg) = pg.as_mut() {
            let c1 = concat_channels(tape.d1.as_ref().unwrap(), &tape.e1);
            let (dw, db) = layer_grads!(pg, 6);
            conv_backward_params(&g, &c1, ConvShape::K3S1, pad, dw, db);
        }
        let (gd1, mut ge1) = split_channels(&gc1, 8);

        // layer 5: tconv 16->8
        let (w5, _) = self.weights(5);
        let mut gd2b = tconv_backward_input(&gd1, w5, 16);
        if let Some(pg) = pg.as_mut() {
            let (dw, db) = layer_grads!(pg, 5);
            tconv_backward_params(&gd1, &tape.d2b, dw, db);
        }
        relu_backward(&mut gd2b, &tape.d2b);

        // layer 4: conv3x3 on c2 = concat(d2, e2)
        let (w4, _) = self.weights(4);
        let gc2 = conv_backward_input(&gd2b, w4, 32, gd2b.h, gd2b.w, ConvShape::K3S1, pad);
        if let Some(pg) = pg.as_mut() {
            let c2 = concat_channels(tape.d2.as_ref().unwrap(), &tape.e2);
            let (dw, db) = layer_grads!(pg, 4);
            conv_backward_params(&gd2b, &c2, ConvShape::K3S1, pad, dw, db);
        }
        let (gd2, mut ge2) = split_channels(&gc2, 16);

        // layer 3: tconv 32->16
        let (w3, _) = self.weights(3);
        let mut ge3 = tconv_backward_input(&gd2, w3, 32);
        if let Some(pg) = pg.as_mut() {
            let (dw, db) = layer_grads!(pg, 3);
            tconv_backward_params(&gd2, &tape.e3, dw, db);
        }
        relu_backward(&mut ge3, &tape.e3);

        // layer 2: conv3x3 stride 2, 16->32
        let (w2, _) = self.weights(2);
        let ge2_main = conv_backward_input(&ge3, w2, 16, tape.e2.h, tape.e2.w, ConvShape::K3S2, pad);
        if let Some(pg) = pg.as_mut() {
            let (dw, db) = layer_grads!(pg, 2);
            conv_backward_params(&ge3, &tape.e2, ConvShape::K3S2, pad, dw, db);
        }
        for (a, b) in ge2.data.iter_mut().zip(&ge2_main.data) {
            *a += *b;
        }
        relu_backward(&mut ge2, &tape.e2);

        // layer 1: conv3x3 stride 2, 8->16
        let (w1, _) = self.weights(1);
        let ge1_main = conv_backward_input(&ge2, w1, 8, tape.e1.h, tape.e1.w, ConvShape::K3S2, pad);
        if let Some(pg) = pg.as_mut() {
            let (dw, db) = layer_grads!(pg, 1);
            conv_backward_params(&ge2, &tape.e1, ConvShape::K3S2, pad, dw, db);
        }
        for (a, b) in ge1.data.iter_mut().zip(&ge1_main.data) {
            *a += *b;
        }
        relu_backward(&mut ge1, &tape.e1);

        // layer 0: conv3x3, 3->8
        let (w0, _) = self.weights(0);
        let gx0 = conv_backward_input(&ge1, w0, 3, tape.e1.h, tape.e1.w, ConvShape::K3S1, pad);
        if let Some(pg) = pg.as_mut() {
            let (dw, db) = layer_grads!(pg, 0);
            conv_backward_params(&ge1, tape.x0.as_ref().unwrap(), ConvShape::K3S1, pad, dw, db);
        }

        (gx0, pg)
    }

    /// Single-record convenience around [`Self::forward_batch`].
    pub fn predict_field(&self, s: &Field<T>, a0: &Field<T>, a1: &Field<T>) -> Field<T> {
        let spec = s.spec;
        let x0 = Tensor::from_planes(&[&s.values, &a0.values, &a1.values], spec.height, spec.width);
        let (out, _) = self.forward_batch(&x0, TapeMode::InputGradOnly);
        out.plane_field(0, 0, spec)
    }
}

/// Sequentially predict the fields along a pose schedule: each step feeds
/// the previous prediction back with the next rendered action pair.
/// Predictions stay unclamped unless `clamp` is set (metrics mode).
pub fn rollout_predict(
    model: &UNet<f32>,
    s0: &DensityField,
    poses: &[crate::raster::PusherPose<f32>],
    geom: &crate::raster::PusherGeom,
    clamp: bool,
) -> Result<Vec<DensityField>> {
    if poses.len() < 2 {
        return Err(Error::InvalidArgument("rollout needs at least 2 poses".into()));
    }
    model.check_grid(&s0.spec)?;
    let spec = s0.spec;
    let renders: Vec<Field<f32>> = poses
        .iter()
        .map(|p| crate::raster::render(p, geom, &spec))
        .collect();
    let mut cur = s0.clone();
    let mut out = Vec::with_capacity(poses.len() - 1);
    for k in 0..poses.len() - 1 {
        let mut pred = model.predict_field(&cur, &renders[k], &renders[k + 1]);
        if clamp {
            for v in pred.values.iter_mut() {
                *v = v.max(0.0);
            }
        }
        cur = pred.clone();
        out.push(pred);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rand_tensor(n: usize, c: usize, h: usize, w: usize, rng: &mut impl Rng) -> Tensor<f64> {
        let mut t = Tensor::zeros(n, c, h, w);
        for v in t.data.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        t
    }

    #[test]
    fn zero_params_give_zero_output() {
        let net = UNet::<f32>::zeroed(PadMode::Zero);
        let mut rng = crate::rng::stream_rng(0, "unet-zero");
        let mut x = Tensor::zeros(1, 3, 16, 16);
        for v in x.data.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        let (out, _) = net.forward_batch(&x, TapeMode::InputGradOnly);
        assert!(out.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_head_gives_zero_output() {
        // only the final conv1x1 zeroed
        let mut net = UNet::<f32>::new(PadMode::Zero, 1);
        let m = net.metas[7];
        for v in net.params[m.w_off..m.b_off + 1].iter_mut() {
            *v = 0.0;
        }
        let mut rng = crate::rng::stream_rng(1, "unet-head");
        let mut x = Tensor::zeros(2, 3, 16, 16);
        for v in x.data.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        let (out, _) = net.forward_batch(&x, TapeMode::InputGradOnly);
        assert!(out.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn param_count_is_14409() {
        let net = UNet::<f32>::new(PadMode::Zero, 0);
        assert_eq!(net.param_count(), 14409);
    }

    #[test]
    fn output_dims_match_input() {
        let net = UNet::<f32>::new(PadMode::Zero, 0);
        for (h, w) in [(16, 16), (32, 64), (64, 64)] {
            let x = Tensor::zeros(1, 3, h, w);
            let (out, _) = net.forward_batch(&x, TapeMode::InputGradOnly);
            assert_eq!((out.n, out.c, out.h, out.w), (1, 1, h, w));
        }
    }

    #[test]
    fn stride_constraint_rejected() {
        let net = UNet::<f32>::new(PadMode::Zero, 0);
        let bad = GridSpec::new(30, 64, 0.28).unwrap();
        assert!(matches!(net.check_grid(&bad), Err(Error::StrideConstraint { .. })));
    }

    #[test]
    fn circular_padding_equivariance() {
        let net = UNet::<f32>::new(PadMode::Circular, 7);
        let mut rng = crate::rng::stream_rng(2, "unet-equiv");
        let mut x = Tensor::zeros(1, 3, 32, 32);
        for v in x.data.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        // circular shift by the total stride (4 pixels in both axes)
        let mut xs = Tensor::zeros(1, 3, 32, 32);
        for ch in 0..3 {
            let src = x.plane(0, ch).to_vec();
            let dst = xs.plane_mut(0, ch);
            for r in 0..32 {
                for c in 0..32 {
                    dst[((r + 4) % 32) * 32 + (c + 4) % 32] = src[r * 32 + c];
                }
            }
        }
        let (out, _) = net.forward_batch(&x, TapeMode::InputGradOnly);
        let (outs, _) = net.forward_batch(&xs, TapeMode::InputGradOnly);
        let mut max_diff = 0.0f32;
        for r in 0..32 {
            for c in 0..32 {
                let a = out.plane(0, 0)[r * 32 + c];
                let b = outs.plane(0, 0)[((r + 4) % 32) * 32 + (c + 4) % 32];
                max_diff = max_diff.max((a - b).abs());
            }
        }
        assert!(max_diff < 1e-5, "equivariance violated: {max_diff}");
    }

    /// Finite-difference verification of every layer's parameter gradients
    /// and all input cotangents, in f64 where the oracle is trustworthy.
    #[test]
    fn gradients_match_finite_differences() {
        let net = UNet::<f64>::new(PadMode::Zero, 11).cast::<f64>();
        let mut rng = crate::rng::stream_rng(3, "unet-fd");
        let x = rand_tensor(1, 3, 16, 16, &mut rng);
        let up = rand_tensor(1, 1, 16, 16, &mut rng);

        let loss = |net: &UNet<f64>, x: &Tensor<f64>| -> f64 {
            let (out, _) = net.forward_batch(x, TapeMode::InputGradOnly);
            out.data.iter().zip(&up.data).map(|(a, b)| a * b).sum()
        };

        let (out, tape) = net.forward_batch(&x, TapeMode::Full);
        assert_eq!(out.data.len(), up.data.len());
        let (gin, pg) = net.vjp_batch(&tape, &up, true);
        let pg = pg.unwrap();

        // small step: ReLU kinks must stay outside the FD stencil, and in
        // f64 truncation/roundoff are both negligible at this h
        let h = 1e-6;
        // parameter gradients, norm-wise per layer
        for (li, m) in net.metas.iter().enumerate() {
            let lo = m.w_off;
            let hi = m.b_off + m.desc.c_out;
            let mut err2 = 0.0;
            let mut norm2 = 0.0;
            // probe a deterministic subset to keep runtime sane
            let stride = ((hi - lo) / 60).max(1);
            for p in (lo..hi).step_by(stride) {
                let mut nplus = net.clone();
                nplus.params[p] += h;
                let mut nminus = net.clone();
                nminus.params[p] -= h;
                let fd = (loss(&nplus, &x) - loss(&nminus, &x)) / (2.0 * h);
                err2 += (fd - pg[p]).powi(2);
                norm2 += fd.powi(2);
            }
            let rel = (err2 / norm2.max(1e-12)).sqrt();
            assert!(rel < 1e-3, "layer {li} param grad rel err {rel}");
        }

        // input cotangents for all 3 channels
        let mut err2 = 0.0;
        let mut norm2 = 0.0;
        for idx in (0..x.data.len()).step_by(7) {
            let mut xp = x.clone();
            xp.data[idx] += h;
            let mut xm = x.clone();
            xm.data[idx] -= h;
            let fd = (loss(&net, &xp) - loss(&net, &xm)) / (2.0 * h);
            err2 += (fd - gin.data[idx]).powi(2);
            norm2 += fd.powi(2);
        }
        let rel = (err2 / norm2.max(1e-12)).sqrt();
        assert!(rel < 1e-3, "input grad rel err {rel}");
    }

    #[test]
    fn zero_upstream_gives_zero_cotangents() {
        let net = UNet::<f32>::new(PadMode::Zero, 5);
        let mut rng = crate::rng::stream_rng(4, "unet-zup");
        let mut x = Tensor::zeros(1, 3, 16, 16);
        for v in x.data.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        let (_, tape) = net.forward_batch(&x, TapeMode::Full);
        let up = Tensor::zeros(1, 1, 16, 16);
        let (gin, pg) = net.vjp_batch(&tape, &up, true);
        assert!(gin.data.iter().all(|&v| v == 0.0));
        assert!(pg.unwrap().iter().all(|&v| v == 0.0));
    }
}
