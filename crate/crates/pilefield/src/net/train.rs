//! Self-supervised training on random-push corpora.
//!
//! Loss per batch: mean over records of the squared Frobenius norm
//! `|| f(s_t, a_t) - s_{t+1} ||_F^2`, minimized by Adam. Deterministic given
//! a seed: single-threaded batched GEMMs and a seeded shuffle.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, MLP_SIDE};
use super::tensor::Tensor;
use super::unet::UNet;
use super::TapeMode;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::raster::render;

fn default_lr() -> f64 {
    1e-3
}
fn default_batch() -> usize {
    32
}
fn default_epochs() -> usize {
    50
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_holdout() -> f64 {
    0.1
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Clamp predictions to >= 0 between sequential rollout steps when
    /// computing metrics. Never applied inside the optimization graph.
    pub rollout_clamp: bool,
    /// Trailing fraction of the dataset excluded from training (held out).
    pub holdout_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: default_lr(),
            batch_size: default_batch(),
            epochs: default_epochs(),
            seed: 0,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            rollout_clamp: true,
            holdout_fraction: default_holdout(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::InvalidArgument("holdout fraction must be in [0,1)".into()));
        }
        Ok(())
    }

    /// Index where the held-out tail begins.
    pub fn train_len(&self, n_records: usize) -> usize {
        let holdout = (n_records as f64 * self.holdout_fraction).floor() as usize;
        (n_records - holdout).max(1)
    }
}

/// Adam moment tracker over one flat parameter vector.
#[derive(Clone, Debug)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0, lr, beta1, beta2, eps }
    }

    pub fn step_f32(&mut self, params: &mut [f32], grads: &[f32]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i] as f64;
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= (self.lr * mhat / (vhat.sqrt() + self.eps)) as f32;
        }
    }
}

/// Records expanded to model-ready planes (actions rendered once up front).
pub struct PreparedData {
    pub s: Vec<Vec<f32>>,
    pub a0: Vec<Vec<f32>>,
    pub a1: Vec<Vec<f32>>,
    pub target: Vec<Vec<f32>>,
    pub h: usize,
    pub w: usize,
}

impl PreparedData {
    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }
}

/// Render the action channels for records `[0, limit)` of a dataset.
pub fn prepare_records(ds: &Dataset, limit: usize) -> PreparedData {
    let geom = ds.provenance.scene.pusher;
    let spec = ds.grid;
    let n = limit.min(ds.records.len());
    let mut out = PreparedData {
        s: Vec::with_capacity(n),
        a0: Vec::with_capacity(n),
        a1: Vec::with_capacity(n),
        target: Vec::with_capacity(n),
        h: spec.height,
        w: spec.width,
    };
    for rec in &ds.records[..n] {
        out.s.push(rec.s_t.values.clone());
        out.a0.push(render(&rec.pose_t, &geom, &spec).values);
        out.a1.push(render(&rec.pose_t1, &geom, &spec).values);
        out.target.push(rec.s_t1.values.clone());
    }
    out
}

fn epoch_order(n: usize, epoch: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = crate::rng::indexed_rng(seed, "train-shuffle", epoch as u64);
    idx.shuffle(&mut rng);
    idx
}

/// Train the U-Net; returns per-epoch mean training loss.
pub fn train_unet(ds: &Dataset, cfg: &TrainConfig, mut net: UNet<f32>) -> Result<(UNet<f32>, Vec<f64>)> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::EmptyInput("training dataset is empty"));
    }
    net.check_grid(&ds.grid)?;
    let data = prepare_records(ds, cfg.train_len(ds.len()));
    let (h, w) = (data.h, data.w);
    let hw = h * w;
    let mut adam = Adam::new(net.params.len(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = epoch_order(data.len(), epoch, cfg.seed);
        let mut epoch_loss = 0.0f64;
        for chunk in order.chunks(cfg.batch_size) {
            let bn = chunk.len();
            let mut x = Tensor::zeros(bn, 3, h, w);
            for (bi, &ri) in chunk.iter().enumerate() {
                x.plane_mut(bi, 0).copy_from_slice(&data.s[ri]);
                x.plane_mut(bi, 1).copy_from_slice(&data.a0[ri]);
                x.plane_mut(bi, 2).copy_from_slice(&data.a1[ri]);
            }
            let (out, tape) = net.forward_batch(&x, TapeMode::Full);
            // upstream = 2 (out - target) / batch ; loss = mean_record ||.||^2
            let mut up = Tensor::zeros(bn, 1, h, w);
            let mut loss = 0.0f64;
            let scale = 2.0 / bn as f32;
            for (bi, &ri) in chunk.iter().enumerate() {
                let o = out.plane(bi, 0);
                let t = &data.target[ri];
                let u = up.plane_mut(bi, 0);
                for j in 0..hw {
                    let diff = o[j] - t[j];
                    loss += (diff as f64) * (diff as f64);
                    u[j] = diff * scale;
                }
            }
            loss /= bn as f64;
            epoch_loss += loss * bn as f64;
            let (_, pg) = net.vjp_batch(&tape, &up, true);
            adam.step_f32(&mut net.params, &pg.unwrap());
        }
        history.push(epoch_loss / data.len() as f64);
    }
    Ok((net, history))
}

/// Train the MLP baseline under the same contract, natively at 16x16 on
/// mean-pooled fields.
pub fn train_mlp(ds: &Dataset, cfg: &TrainConfig, mut mlp: Mlp<f32>) -> Result<(Mlp<f32>, Vec<f64>)> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::EmptyInput("training dataset is empty"));
    }
    ds.grid.check_same(&mlp.grid)?;
    let data = prepare_records(ds, cfg.train_len(ds.len()));
    let side = MLP_SIDE;
    let hw = side * side;
    // pool once
    let inputs: Vec<Vec<f32>> = (0..data.len())
        .map(|i| mlp.pooled_input(&data.s[i], &data.a0[i], &data.a1[i]))
        .collect();
    let targets: Vec<Vec<f32>> = data.target.iter().map(|t| mlp.pool_plane(t)).collect();

    let mut adam = Adam::new(mlp.params.len(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = epoch_order(data.len(), epoch, cfg.seed);
        let mut epoch_loss = 0.0f64;
        for chunk in order.chunks(cfg.batch_size) {
            let bn = chunk.len();
            let mut x = Tensor::zeros(bn, 3, side, side);
            for (bi, &ri) in chunk.iter().enumerate() {
                x.sample_mut(bi).copy_from_slice(&inputs[ri]);
            }
            let (out, tape) = mlp.forward_batch(&x, TapeMode::Full);
            let mut up = Tensor::zeros(bn, 1, side, side);
            let mut loss = 0.0f64;
            let scale = 2.0 / bn as f32;
            for (bi, &ri) in chunk.iter().enumerate() {
                let o = out.sample(bi);
                let t = &targets[ri];
                let u = up.sample_mut(bi);
                for j in 0..hw {
                    let diff = o[j] - t[j];
                    loss += (diff as f64) * (diff as f64);
                    u[j] = diff * scale;
                }
            }
            loss /= bn as f64;
            epoch_loss += loss * bn as f64;
            let (_, pg) = mlp.vjp_batch(&tape, &up, true);
            adam.step_f32(&mut mlp.params, &pg.unwrap());
        }
        history.push(epoch_loss / data.len() as f64);
    }
    Ok((mlp, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::PadMode;
    use crate::sim::default_scene;

    fn tiny_dataset() -> Dataset {
        let mut sc = default_scene(0);
        sc.particle_count = 10;
        crate::dataset::gen_random_push_dataset(&sc, 12, 5).unwrap()
    }

    #[test]
    fn epoch0_loss_of_zero_net_is_target_power() {
        let ds = tiny_dataset();
        let cfg = TrainConfig { epochs: 1, learning_rate: 1e-12, holdout_fraction: 0.0, ..Default::default() };
        let net = UNet::<f32>::zeroed(PadMode::Zero);
        let (_, hist) = train_unet(&ds, &cfg, net).unwrap();
        // constant-zero prediction: loss = mean_record ||s_{t+1}||^2
        let want: f64 = ds
            .records
            .iter()
            .map(|r| r.s_t1.values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>())
            .sum::<f64>()
            / ds.len() as f64;
        assert!((hist[0] - want).abs() / want < 1e-5, "{} vs {}", hist[0], want);
    }

    #[test]
    fn training_is_deterministic() {
        let ds = tiny_dataset();
        let cfg = TrainConfig { epochs: 2, ..Default::default() };
        let (net_a, hist_a) = train_unet(&ds, &cfg, UNet::new(PadMode::Zero, 9)).unwrap();
        let (net_b, hist_b) = train_unet(&ds, &cfg, UNet::new(PadMode::Zero, 9)).unwrap();
        assert_eq!(hist_a, hist_b);
        assert_eq!(net_a.params, net_b.params);
    }

    #[test]
    fn mlp_training_runs_and_descends() {
        let ds = tiny_dataset();
        let cfg = TrainConfig { epochs: 8, holdout_fraction: 0.0, ..Default::default() };
        let mlp = Mlp::<f32>::new(ds.grid, 3).unwrap();
        let (_, hist) = train_mlp(&ds, &cfg, mlp).unwrap();
        assert!(hist.last().unwrap() < hist.first().unwrap());
    }
}
