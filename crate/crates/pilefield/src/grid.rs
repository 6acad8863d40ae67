//! Grid containers, masks, distance transforms, Voronoi partitions and the
//! field algebra shared by all modules.
//!
//! Pixels are stored row-major; pixel `(r, c)` covers the square whose
//! center sits at `((c + 0.5) * pitch, (r + 0.5) * pitch)` in workspace
//! meters, with `x` along columns and `y` along rows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

/// Square workspace mapped onto an H x W pixel grid with uniform pitch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub height: usize,
    pub width: usize,
    /// Workspace side length in meters.
    pub extent: f64,
}

impl GridSpec {
    pub fn new(height: usize, width: usize, extent: f64) -> Result<Self> {
        if height < 8 || width < 8 {
            return Err(Error::InvalidGrid(format!("{height}x{width} below minimum 8x8")));
        }
        if !(extent > 0.0) || !extent.is_finite() {
            return Err(Error::InvalidGrid(format!("extent {extent} must be positive and finite")));
        }
        Ok(GridSpec { height, width, extent })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Meters per pixel (uniform in both axes).
    #[inline]
    pub fn pitch(&self) -> f64 {
        self.extent / self.width as f64
    }

    #[inline]
    pub fn idx(&self, r: usize, c: usize) -> usize {
        debug_assert!(r < self.height && c < self.width);
        r * self.width + c
    }

    /// Workspace coordinates of the center of pixel (r, c).
    #[inline]
    pub fn pixel_center(&self, r: usize, c: usize) -> (f64, f64) {
        let p = self.pitch();
        ((c as f64 + 0.5) * p, (r as f64 + 0.5) * p)
    }

    /// Pixel containing workspace point (x, y), clamped to the grid.
    #[inline]
    pub fn pixel_of(&self, x: f64, y: f64) -> (usize, usize) {
        let p = self.pitch();
        let c = ((x / p).floor() as isize).clamp(0, self.width as isize - 1) as usize;
        let r = ((y / p).floor() as isize).clamp(0, self.height as isize - 1) as usize;
        (r, c)
    }

    pub fn check_same(&self, other: &GridSpec) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::SpecMismatch { a: *self, b: *other })
        }
    }
}

/// Dense H x W scalar grid. `Field<f32>` is the production density / scalar
/// field; `Field<f64>` is used by gradient-verification paths.
#[derive(Clone, Debug, PartialEq)]
pub struct Field<T> {
    pub spec: GridSpec,
    pub values: Vec<T>,
}

/// Non-negative mass-per-pixel grid (the state `s` and rendered actions).
pub type DensityField = Field<f32>;
/// Any finite per-pixel real (distance fields, cost gradients).
pub type ScalarField = Field<f32>;

impl<T: Real> Field<T> {
    pub fn zeros(spec: GridSpec) -> Self {
        Field { spec, values: vec![T::zero(); spec.len()] }
    }

    pub fn from_values(spec: GridSpec, values: Vec<T>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::InvalidArgument(format!(
                "value count {} does not match {}x{}",
                values.len(),
                spec.height,
                spec.width
            )));
        }
        Ok(Field { spec, values })
    }

    pub fn from_fn(spec: GridSpec, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut values = Vec::with_capacity(spec.len());
        for r in 0..spec.height {
            for c in 0..spec.width {
                values.push(f(r, c));
            }
        }
        Field { spec, values }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.values[self.spec.idx(r, c)]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        let i = self.spec.idx(r, c);
        self.values[i] = v;
    }

    /// Sum of all values, accumulated in f64.
    pub fn total(&self) -> f64 {
        self.values.iter().map(|v| v.as_f64()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Field<U> {
        Field {
            spec: self.spec,
            values: self.values.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    /// Integer translation with zero fill; mass that exits the grid is dropped.
    /// `dx` shifts columns (+x), `dy` shifts rows (+y).
    pub fn shift(&self, dx: isize, dy: isize) -> Field<T> {
        let (h, w) = (self.spec.height as isize, self.spec.width as isize);
        debug_assert!(dx.abs() < w && dy.abs() < h || dx.abs() >= w || dy.abs() >= h);
        let mut out = Field::zeros(self.spec);
        for r in 0..h {
            let sr = r - dy;
            if sr < 0 || sr >= h {
                continue;
            }
            for c in 0..w {
                let sc = c - dx;
                if sc < 0 || sc >= w {
                    continue;
                }
                out.values[(r * w + c) as usize] = self.values[(sr * w + sc) as usize];
            }
        }
        out
    }
}

/// Frobenius inner product: sum over pixels of `a[p] * b[p]` (f64 accumulate).
pub fn frobenius_inner<T: Real, U: Real>(a: &Field<T>, b: &Field<U>) -> Result<f64> {
    a.spec.check_same(&b.spec)?;
    Ok(a.values
        .iter()
        .zip(b.values.iter())
        .map(|(x, y)| x.as_f64() * y.as_f64())
        .sum())
}

/// H x W grid of {0, 1}. Convention: goal masks are 0 inside the goal region
/// and 1 outside; obstacle masks are 1 on obstacle pixels and 0 elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryMask {
    pub spec: GridSpec,
    pub values: Vec<u8>,
}

impl BinaryMask {
    /// All-ones mask (no goal pixel, no obstacle pixel).
    pub fn ones(spec: GridSpec) -> Self {
        BinaryMask { spec, values: vec![1; spec.len()] }
    }

    pub fn zeros(spec: GridSpec) -> Self {
        BinaryMask { spec, values: vec![0; spec.len()] }
    }

    pub fn from_values(spec: GridSpec, values: Vec<u8>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::InvalidArgument("mask value count mismatch".into()));
        }
        if values.iter().any(|&v| v > 1) {
            return Err(Error::InvalidArgument("mask entries must be 0 or 1".into()));
        }
        Ok(BinaryMask { spec, values })
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.values[self.spec.idx(r, c)]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: u8) {
        debug_assert!(v <= 1);
        let i = self.spec.idx(r, c);
        self.values[i] = v;
    }

    pub fn count_zeros(&self) -> usize {
        self.values.iter().filter(|&&v| v == 0).count()
    }

    /// 1 - mask as a float field (marks the zero set, e.g. goal interior).
    pub fn inside_field<T: Real>(&self) -> Field<T> {
        Field {
            spec: self.spec,
            values: self.values.iter().map(|&v| if v == 0 { T::one() } else { T::zero() }).collect(),
        }
    }

    /// mask as a float field (1 on set pixels).
    pub fn as_field<T: Real>(&self) -> Field<T> {
        Field {
            spec: self.spec,
            values: self.values.iter().map(|&v| T::from_f64(f64::from(v))).collect(),
        }
    }

    /// Pointwise AND (combined zero set is the union of the zero sets).
    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.spec.check_same(&other.spec)?;
        Ok(BinaryMask {
            spec: self.spec,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a & b).collect(),
        })
    }
}

/// Per-pixel nearest-goal assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelGrid {
    pub spec: GridSpec,
    pub labels: Vec<u16>,
    pub n_goals: usize,
}

// ---------------------------------------------------------------------------
// Exact Euclidean distance transform (two-pass lower-envelope method on
// squared distances, then square root).
// ---------------------------------------------------------------------------

struct Envelope {
    sites: Vec<usize>,
    bounds: Vec<f64>,
}

impl Envelope {
    fn new(n: usize) -> Self {
        Envelope { sites: vec![0; n], bounds: vec![0.0; n + 1] }
    }
}

/// 1-D squared distance transform of `f` into `out`.
fn dt_1d(f: &[f64], out: &mut [f64], env: &mut Envelope) {
    let n = f.len();
    debug_assert!(out.len() == n && env.sites.len() >= n);
    let mut k = 0usize;
    env.sites[0] = 0;
    env.bounds[0] = f64::NEG_INFINITY;
    env.bounds[1] = f64::INFINITY;

    let intersect = |p: usize, q: usize| -> f64 {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64))
    };

    for q in 1..n {
        if f[q] == f64::INFINITY {
            continue;
        }
        if f[env.sites[k]] == f64::INFINITY {
            // first finite site replaces the placeholder
            env.sites[k] = q;
            env.bounds[k] = f64::NEG_INFINITY;
            env.bounds[k + 1] = f64::INFINITY;
            continue;
        }
        let mut s = intersect(env.sites[k], q);
        while s <= env.bounds[k] {
            k -= 1;
            s = intersect(env.sites[k], q);
        }
        k += 1;
        env.sites[k] = q;
        env.bounds[k] = s;
        env.bounds[k + 1] = f64::INFINITY;
    }

    let mut k = 0usize;
    for q in 0..n {
        while env.bounds[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - env.sites[k] as f64;
        out[q] = d * d + f[env.sites[k]];
    }
}

/// Squared EDF of the mask's zero set, exact on integer pixel coordinates.
fn squared_edf(mask: &BinaryMask) -> Result<Vec<f64>> {
    if mask.count_zeros() == 0 {
        return Err(Error::EmptyGoal);
    }
    let (h, w) = (mask.spec.height, mask.spec.width);
    let mut g = vec![0.0f64; h * w];
    for (gi, &m) in g.iter_mut().zip(mask.values.iter()) {
        *gi = if m == 0 { 0.0 } else { f64::INFINITY };
    }

    // columns
    let mut col_in = vec![0.0f64; h];
    let mut col_out = vec![0.0f64; h];
    let mut env = Envelope::new(h.max(w));
    for c in 0..w {
        for r in 0..h {
            col_in[r] = g[r * w + c];
        }
        dt_1d(&col_in, &mut col_out, &mut env);
        for r in 0..h {
            g[r * w + c] = col_out[r];
        }
    }
    // rows
    let mut row_out = vec![0.0f64; w];
    for r in 0..h {
        dt_1d(&g[r * w..(r + 1) * w].to_vec(), &mut row_out, &mut env);
        g[r * w..(r + 1) * w].copy_from_slice(&row_out);
    }
    Ok(g)
}

/// Exact Euclidean distance field of the mask's zero set, in pixel units.
/// Zero exactly on goal pixels. Errors when the mask has no zero pixel.
pub fn edf(mask: &BinaryMask) -> Result<ScalarField> {
    let sq = squared_edf(mask)?;
    Ok(Field {
        spec: mask.spec,
        values: sq.into_iter().map(|d| d.sqrt() as f32).collect(),
    })
}

/// Pointwise minimum of the per-mask EDFs.
pub fn multi_goal_edf(masks: &[BinaryMask]) -> Result<ScalarField> {
    if masks.is_empty() {
        return Err(Error::EmptyInput("multi_goal_edf needs at least one mask"));
    }
    let spec = masks[0].spec;
    let mut best = squared_edf(&masks[0])?;
    for m in &masks[1..] {
        spec.check_same(&m.spec)?;
        let sq = squared_edf(m)?;
        for (b, s) in best.iter_mut().zip(sq) {
            if s < *b {
                *b = s;
            }
        }
    }
    Ok(Field { spec, values: best.into_iter().map(|d| d.sqrt() as f32).collect() })
}

/// Nearest-goal partition. Ties break to the lowest goal index.
pub fn voronoi_labels(masks: &[BinaryMask]) -> Result<LabelGrid> {
    if masks.len() < 2 {
        return Err(Error::EmptyInput("voronoi_labels needs at least two masks"));
    }
    let spec = masks[0].spec;
    let mut best = squared_edf(&masks[0])?;
    let mut labels = vec![0u16; spec.len()];
    for (gi, m) in masks.iter().enumerate().skip(1) {
        spec.check_same(&m.spec)?;
        let sq = squared_edf(m)?;
        for (i, s) in sq.into_iter().enumerate() {
            if s < best[i] {
                best[i] = s;
                labels[i] = gi as u16;
            }
        }
    }
    Ok(LabelGrid { spec, labels, n_goals: masks.len() })
}
