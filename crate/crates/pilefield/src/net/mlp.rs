//! Fully connected baseline for the correlation study.
//!
//! The MLP operates on a 16x16 downsample of the three input channels,
//! flattened to one vector. Serving-grid predictions replicate the coarse
//! output back up, which is what makes its error comparable with the U-Net's
//! at the native resolution.

use rand::Rng;

use super::tensor::Tensor;
use super::TapeMode;
use crate::error::{Error, Result};
use crate::grid::{Field, GridSpec};
use crate::real::Real;

/// Fixed downsampled side length.
pub const MLP_SIDE: usize = 16;

#[derive(Clone, Debug)]
pub(crate) struct DenseMeta {
    pub in_w: usize,
    pub out_w: usize,
    pub w_off: usize,
    pub b_off: usize,
    pub relu: bool,
}

#[derive(Clone, Debug)]
pub struct Mlp<T> {
    pub(crate) layers: Vec<DenseMeta>,
    pub params: Vec<T>,
    /// Grid the model serves at (pooled by `factor` internally).
    pub grid: GridSpec,
    pub factor: usize,
}

#[derive(Clone, Debug)]
pub struct MlpTape<T> {
    /// Activation per layer boundary: input, then post-activation outputs.
    acts: Vec<Vec<T>>,
}

pub(crate) fn mlp_widths() -> Vec<(usize, bool)> {
    let n = MLP_SIDE * MLP_SIDE;
    // input 3*n -> hidden -> hidden -> n (linear head)
    vec![(256, true), (256, true), (n, false)]
}

impl<T: Real> Mlp<T> {
    pub fn new(grid: GridSpec, seed: u64) -> Result<Self> {
        if grid.height != grid.width || grid.width % MLP_SIDE != 0 {
            return Err(Error::InvalidArgument(format!(
                "mlp serves square grids divisible by {MLP_SIDE}, got {}x{}",
                grid.height, grid.width
            )));
        }
        let factor = grid.width / MLP_SIDE;
        let mut layers = Vec::new();
        let mut in_w = 3 * MLP_SIDE * MLP_SIDE;
        let mut off = 0usize;
        for (out_w, relu) in mlp_widths() {
            layers.push(DenseMeta { in_w, out_w, w_off: off, b_off: off + in_w * out_w, relu });
            off += in_w * out_w + out_w;
            in_w = out_w;
        }
        let mut params = vec![T::zero(); off];
        let mut rng = crate::rng::stream_rng(seed, "mlp-init");
        for l in &layers {
            let bound = 1.0 / (l.in_w as f64).sqrt();
            for v in params[l.w_off..l.b_off + l.out_w].iter_mut() {
                *v = T::from_f64(rng.gen_range(-bound..bound));
            }
        }
        Ok(Mlp { layers, params, grid, factor })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn cast<U: Real>(&self) -> Mlp<U> {
        Mlp {
            layers: self.layers.clone(),
            params: self.params.iter().map(|v| U::from_f64(v.as_f64())).collect(),
            grid: self.grid,
            factor: self.factor,
        }
    }

    pub fn layer_widths(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.out_w).collect()
    }

    /// Mean-pool one serving-grid plane down to the native 16x16.
    pub fn pool_plane(&self, src: &[T]) -> Vec<T> {
        let f = self.factor;
        let w = self.grid.width;
        let inv = T::from_f64(1.0 / (f * f) as f64);
        let mut out = vec![T::zero(); MLP_SIDE * MLP_SIDE];
        for (i, slot) in out.iter_mut().enumerate() {
            let (r0, c0) = ((i / MLP_SIDE) * f, (i % MLP_SIDE) * f);
            let mut acc = T::zero();
            for r in r0..r0 + f {
                for c in c0..c0 + f {
                    acc += src[r * w + c];
                }
            }
            *slot = acc * inv;
        }
        out
    }

    /// Replicate a native 16x16 plane up to the serving grid.
    pub fn upsample_plane(&self, src: &[T]) -> Vec<T> {
        let f = self.factor;
        let w = self.grid.width;
        let mut out = vec![T::zero(); self.grid.len()];
        for r in 0..self.grid.height {
            for c in 0..w {
                out[r * w + c] = src[(r / f) * MLP_SIDE + c / f];
            }
        }
        out
    }

    /// Flatten pooled (s, a0, a1) planes into one native input vector.
    pub fn pooled_input(&self, s: &[T], a0: &[T], a1: &[T]) -> Vec<T> {
        let mut x = self.pool_plane(s);
        x.extend(self.pool_plane(a0));
        x.extend(self.pool_plane(a1));
        x
    }

    /// Batched forward at the native resolution: `x` rows are flattened
    /// pooled inputs of width 3*256.
    pub fn forward_batch(&self, x: &Tensor<T>, _mode: TapeMode) -> (Tensor<T>, MlpTape<T>) {
        let n = x.n;
        let in_w = 3 * MLP_SIDE * MLP_SIDE;
        debug_assert_eq!(x.sample_len(), in_w);
        let mut acts: Vec<Vec<T>> = vec![x.data.clone()];
        let mut cur_w = in_w;
        let mut cur = x.data.clone();
        for l in &self.layers {
            let w = &self.params[l.w_off..l.w_off + l.in_w * l.out_w];
            let b = &self.params[l.b_off..l.b_off + l.out_w];
            let mut next = vec![T::zero(); n * l.out_w];
            // next[n, out] = cur[n, in] . W^T : gemm with B = W^T handled by
            // computing out^T? simplest: out = cur (n,in) x Wt (in,out)
            let mut wt = vec![T::zero(); l.in_w * l.out_w];
            for o in 0..l.out_w {
                for i in 0..l.in_w {
                    wt[i * l.out_w + o] = w[o * l.in_w + i];
                }
            }
            T::gemm(n, cur_w, l.out_w, T::one(), &cur, &wt, T::zero(), &mut next);
            for row in 0..n {
                for (o, bo) in b.iter().enumerate() {
                    next[row * l.out_w + o] += *bo;
                }
            }
            if l.relu {
                for v in next.iter_mut() {
                    if *v < T::zero() {
                        *v = T::zero();
                    }
                }
            }
            acts.push(next.clone());
            cur = next;
            cur_w = l.out_w;
        }
        let out = Tensor { n, c: 1, h: MLP_SIDE, w: MLP_SIDE, data: cur };
        (out, MlpTape { acts })
    }

    /// Reverse pass; returns input cotangents (n x 768) and optional flat
    /// parameter cotangents.
    pub fn vjp_batch(
        &self,
        tape: &MlpTape<T>,
        upstream: &Tensor<T>,
        want_params: bool,
    ) -> (Tensor<T>, Option<Vec<T>>) {
        let n = upstream.n;
        let mut pg = want_params.then(|| vec![T::zero(); self.params.len()]);
        let mut g = upstream.data.clone();
        for (li, l) in self.layers.iter().enumerate().rev() {
            let post = &tape.acts[li + 1];
            if l.relu {
                for (gv, &o) in g.iter_mut().zip(post.iter()) {
                    if o <= T::zero() {
                        *gv = T::zero();
                    }
                }
            }
            let input = &tape.acts[li];
            if let Some(pg) = pg.as_mut() {
                let (dw, db) = pg[l.w_off..l.b_off + l.out_w].split_at_mut(l.in_w * l.out_w);
                // dW[out, in] += g^T[out, n] x input[n, in]
                let mut gt = vec![T::zero(); l.out_w * n];
                for row in 0..n {
                    for o in 0..l.out_w {
                        gt[o * n + row] = g[row * l.out_w + o];
                    }
                }
                T::gemm(l.out_w, n, l.in_w, T::one(), &gt, input, T::one(), dw);
                for row in 0..n {
                    for o in 0..l.out_w {
                        db[o] += g[row * l.out_w + o];
                    }
                }
            }
            // dIn[n, in] = g[n, out] x W[out, in]
            let w = &self.params[l.w_off..l.w_off + l.in_w * l.out_w];
            let mut din = vec![T::zero(); n * l.in_w];
            T::gemm(n, l.out_w, l.in_w, T::one(), &g, w, T::zero(), &mut din);
            g = din;
        }
        let gin = Tensor { n, c: 3, h: MLP_SIDE, w: MLP_SIDE, data: g };
        (gin, pg)
    }

    /// Serving-grid prediction: pool inputs, run natively, replicate up.
    pub fn predict_field(&self, s: &Field<T>, a0: &Field<T>, a1: &Field<T>) -> Field<T> {
        let x = self.pooled_input(&s.values, &a0.values, &a1.values);
        let xt = Tensor { n: 1, c: 3, h: MLP_SIDE, w: MLP_SIDE, data: x };
        let (out, _) = self.forward_batch(&xt, TapeMode::InputGradOnly);
        Field { spec: self.grid, values: self.upsample_plane(&out.data) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn grid() -> GridSpec {
        GridSpec::new(64, 64, 0.28).unwrap()
    }

    #[test]
    fn zero_final_layer_zero_output() {
        let mut m = Mlp::<f32>::new(grid(), 0).unwrap();
        let l = m.layers.last().unwrap().clone();
        for v in m.params[l.w_off..l.b_off + l.out_w].iter_mut() {
            *v = 0.0;
        }
        let mut rng = crate::rng::stream_rng(0, "mlp-zero");
        let mut x = Tensor::zeros(2, 3, MLP_SIDE, MLP_SIDE);
        for v in x.data.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        let (out, _) = m.forward_batch(&x, TapeMode::InputGradOnly);
        assert!(out.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pooling_roundtrip_shapes_and_means() {
        let m = Mlp::<f32>::new(grid(), 0).unwrap();
        let src: Vec<f32> = (0..64 * 64).map(|i| (i % 7) as f32).collect();
        let pooled = m.pool_plane(&src);
        assert_eq!(pooled.len(), 256);
        let up = m.upsample_plane(&pooled);
        assert_eq!(up.len(), 64 * 64);
        // total mean preserved by mean-pool + replicate
        let mean_src: f32 = src.iter().sum::<f32>() / src.len() as f32;
        let mean_up: f32 = up.iter().sum::<f32>() / up.len() as f32;
        assert!((mean_src - mean_up).abs() < 1e-4);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let m = Mlp::<f64>::new(grid(), 3).unwrap();
        let mut rng = crate::rng::stream_rng(1, "mlp-fd");
        let mut x = Tensor::<f64>::zeros(1, 3, MLP_SIDE, MLP_SIDE);
        for v in x.data.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let up: Vec<f64> = (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let upt = Tensor { n: 1, c: 1, h: MLP_SIDE, w: MLP_SIDE, data: up.clone() };

        let loss = |m: &Mlp<f64>, x: &Tensor<f64>| -> f64 {
            let (out, _) = m.forward_batch(x, TapeMode::InputGradOnly);
            out.data.iter().zip(&up).map(|(a, b)| a * b).sum()
        };

        let (_, tape) = m.forward_batch(&x, TapeMode::Full);
        let (gin, pg) = m.vjp_batch(&tape, &upt, true);
        let pg = pg.unwrap();

        // small step keeps ReLU kinks outside the FD stencil
        let h = 1e-6;
        let mut err2 = 0.0;
        let mut norm2 = 0.0;
        for p in (0..m.params.len()).step_by(997) {
            let mut mp = m.clone();
            mp.params[p] += h;
            let mut mm = m.clone();
            mm.params[p] -= h;
            let fd = (loss(&mp, &x) - loss(&mm, &x)) / (2.0 * h);
            err2 += (fd - pg[p]).powi(2);
            norm2 += fd * fd;
        }
        assert!((err2 / norm2.max(1e-12)).sqrt() < 1e-3);

        let mut err2 = 0.0;
        let mut norm2 = 0.0;
        for i in (0..x.data.len()).step_by(13) {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            let fd = (loss(&m, &xp) - loss(&m, &xm)) / (2.0 * h);
            err2 += (fd - gin.data[i]).powi(2);
            norm2 += fd * fd;
        }
        assert!((err2 / norm2.max(1e-12)).sqrt() < 1e-3);
    }
}
