//! Self-supervised random-push datasets and their binary format.
//!
//! Wire format ("NFDD"): magic, format version (u32 LE), H, W (u32),
//! record count (u64), then per record: H*W f32 LE (s_t), 3 f32 (pose_t),
//! 3 f32 (pose_t1), H*W f32 (s_t1). A JSON sidecar carries the scene spec,
//! seed and sampling parameters.

use std::fs;
use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DensityField, Field, GridSpec};
use crate::raster::PusherPose;
use crate::rng::stream_rng;
use crate::sim::{rasterize_particles, relax, step_push, ParticleState, SceneSpec};

pub const DATASET_MAGIC: &[u8; 4] = b"NFDD";
pub const DATASET_VERSION: u32 = 1;

/// One training tuple (s_t, x_t, x_{t+1}, s_{t+1}).
#[derive(Clone, Debug)]
pub struct PushRecord {
    pub s_t: DensityField,
    pub pose_t: PusherPose<f32>,
    pub pose_t1: PusherPose<f32>,
    pub s_t1: DensityField,
}

/// Generation parameters recorded with every dataset so the sampling
/// distribution can be varied and reproduced.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Provenance {
    pub scene: SceneSpec,
    pub seed: u64,
    pub n_pushes: usize,
    /// Pile re-randomization period; consecutive records between resets form
    /// a chain for sequential prediction.
    pub pushes_per_reset: usize,
    /// Straight-push length range as a fraction of the workspace extent.
    pub push_len_frac: [f64; 2],
    /// Start-pose offset behind the target particle, fraction of extent.
    pub start_offset_frac: [f64; 2],
    pub substeps: usize,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub grid: GridSpec,
    pub records: Vec<PushRecord>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Chains of consecutive records sharing one pile (reset boundaries).
    pub fn chains(&self) -> Vec<std::ops::Range<usize>> {
        let period = self.provenance.pushes_per_reset.max(1);
        let mut out = Vec::new();
        let mut start = 0;
        while start < self.records.len() {
            let end = (start + period).min(self.records.len());
            out.push(start..end);
            start = end;
        }
        out
    }
}

const PUSHES_PER_RESET: usize = 10;
const PUSH_LEN_FRAC: [f64; 2] = [0.05, 0.25];
const START_OFFSET_FRAC: [f64; 2] = [0.02, 0.06];
const GEN_SUBSTEPS: usize = 16;

/// Drop `count` particles in a disk around a random cluster center, then
/// relax overlaps away.
pub fn init_pile(scene: &SceneSpec, rng: &mut ChaCha12Rng) -> ParticleState {
    let e = scene.grid.extent;
    let r = scene.particle_radius;
    let cx = rng.gen_range(0.30 * e..0.70 * e);
    let cy = rng.gen_range(0.30 * e..0.70 * e);
    let pile_r = 1.6 * r * (scene.particle_count as f64).sqrt();
    let mut positions = Vec::with_capacity(scene.particle_count);
    for _ in 0..scene.particle_count {
        let ang = rng.gen_range(0.0..std::f64::consts::TAU);
        let rad = pile_r * rng.gen_range(0.0f64..1.0).sqrt();
        positions.push([
            (cx + ang.cos() * rad).clamp(r, e - r),
            (cy + ang.sin() * rad).clamp(r, e - r),
        ]);
    }
    let mut state = ParticleState { positions, radius: r, mass: 1.0 };
    for _ in 0..4 {
        relax(&mut state, None, scene);
    }
    state
}

/// Sample one straight push aimed at a random particle of the pile.
pub fn sample_push(
    state: &ParticleState,
    scene: &SceneSpec,
    rng: &mut ChaCha12Rng,
) -> (PusherPose<f64>, PusherPose<f64>) {
    let e = scene.grid.extent;
    let margin = scene.pusher.length * 0.5;
    let target = state.positions[rng.gen_range(0..state.positions.len())];
    let phi = rng.gen_range(0.0..std::f64::consts::TAU);
    let (sin, cos) = phi.sin_cos();
    let offset = rng.gen_range(START_OFFSET_FRAC[0]..START_OFFSET_FRAC[1]) * e;
    let len = rng.gen_range(PUSH_LEN_FRAC[0]..PUSH_LEN_FRAC[1]) * e;
    let clamp = |v: f64| v.clamp(margin, e - margin);
    let sx = clamp(target[0] - cos * offset);
    let sy = clamp(target[1] - sin * offset);
    let ex = clamp(sx + cos * len);
    let ey = clamp(sy + sin * len);
    let theta = phi + std::f64::consts::FRAC_PI_2;
    (PusherPose::new(sx, sy, theta), PusherPose::new(ex, ey, theta))
}

/// Generate a randomized pushing corpus. Fully reproducible from the seed.
pub fn gen_random_push_dataset(scene: &SceneSpec, n_pushes: usize, seed: u64) -> Result<Dataset> {
    if n_pushes == 0 {
        return Err(Error::InvalidArgument("n_pushes must be at least 1".into()));
    }
    scene.validate()?;
    let mut rng = stream_rng(seed, "dataset");
    let mut records = Vec::with_capacity(n_pushes);
    let mut state = init_pile(scene, &mut rng);
    for push in 0..n_pushes {
        if push > 0 && push % PUSHES_PER_RESET == 0 {
            state = init_pile(scene, &mut rng);
        }
        let (start, end) = sample_push(&state, scene, &mut rng);
        let s_t = rasterize_particles(&state, &scene.grid);
        step_push(&mut state, &start, &end, scene, GEN_SUBSTEPS)?;
        let s_t1 = rasterize_particles(&state, &scene.grid);
        records.push(PushRecord {
            s_t,
            pose_t: start.cast(),
            pose_t1: end.cast(),
            s_t1,
        });
    }
    Ok(Dataset {
        grid: scene.grid,
        records,
        provenance: Provenance {
            scene: scene.clone(),
            seed,
            n_pushes,
            pushes_per_reset: PUSHES_PER_RESET,
            push_len_frac: PUSH_LEN_FRAC,
            start_offset_frac: START_OFFSET_FRAC,
            substeps: GEN_SUBSTEPS,
        },
    })
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    std::path::PathBuf::from(s)
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let (h, w) = (ds.grid.height, ds.grid.width);
    let mut buf = Vec::with_capacity(20 + ds.records.len() * (2 * h * w + 6) * 4);
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    buf.extend_from_slice(&(h as u32).to_le_bytes());
    buf.extend_from_slice(&(w as u32).to_le_bytes());
    buf.extend_from_slice(&(ds.records.len() as u64).to_le_bytes());
    for rec in &ds.records {
        for &v in &rec.s_t.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in [rec.pose_t.x, rec.pose_t.y, rec.pose_t.theta] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in [rec.pose_t1.x, rec.pose_t1.y, rec.pose_t1.theta] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for &v in &rec.s_t1.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(&ds.provenance)?)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut file = std::io::BufReader::new(fs::File::open(path)?);
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)?;
    if &magic != DATASET_MAGIC {
        return Err(Error::BadFormat(format!("bad dataset magic {magic:?}")));
    }
    let mut u32buf = [0u8; 4];
    file.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != DATASET_VERSION {
        return Err(Error::BadFormat(format!("unsupported dataset version {version}")));
    }
    file.read_exact(&mut u32buf)?;
    let h = u32::from_le_bytes(u32buf) as usize;
    file.read_exact(&mut u32buf)?;
    let w = u32::from_le_bytes(u32buf) as usize;
    let mut u64buf = [0u8; 8];
    file.read_exact(&mut u64buf)?;
    let count = u64::from_le_bytes(u64buf) as usize;

    let provenance: Provenance = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
    let grid = provenance.scene.grid;
    if grid.height != h || grid.width != w {
        return Err(Error::BadFormat("sidecar grid disagrees with header".into()));
    }

    let mut read_f32s = |n: usize| -> Result<Vec<f32>> {
        let mut bytes = vec![0u8; n * 4];
        file.read_exact(&mut bytes)
            .map_err(|_| Error::BadFormat("truncated dataset file".into()))?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    };

    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let s_t = Field::from_values(grid, read_f32s(h * w)?)?;
        let p0 = read_f32s(3)?;
        let p1 = read_f32s(3)?;
        let s_t1 = Field::from_values(grid, read_f32s(h * w)?)?;
        records.push(PushRecord {
            s_t,
            pose_t: PusherPose::new(p0[0], p0[1], p0[2]),
            pose_t1: PusherPose::new(p1[0], p1[1], p1[2]),
            s_t1,
        });
    }
    Ok(Dataset { grid, records, provenance })
}
