//! B-spline / Bezier trajectory parameterization with precomputed basis
//! matrices and exact gradients from sampled poses back to control points.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{PoseGrad, PusherPose};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisKind {
    Bezier,
    UniformBspline,
}

/// Curvilinear pusher path C(u) = sum_i N_{i,n}(u) * P_i.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplineTrajectory<T> {
    /// Control points in workspace meters.
    pub control: Vec<[T; 2]>,
    pub degree: usize,
    pub kind: BasisKind,
}

impl<T: Real> SplineTrajectory<T> {
    pub fn new(control: Vec<[T; 2]>, degree: usize, kind: BasisKind) -> Result<Self> {
        if control.is_empty() || control.len() < degree + 1 {
            return Err(Error::InvalidArgument(format!(
                "degree {} needs at least {} control points, got {}",
                degree,
                degree + 1,
                control.len()
            )));
        }
        if kind == BasisKind::Bezier && control.len() != degree + 1 {
            return Err(Error::InvalidArgument(
                "bezier requires exactly degree+1 control points".into(),
            ));
        }
        Ok(SplineTrajectory { control, degree, kind })
    }

    pub fn cast<U: Real>(&self) -> SplineTrajectory<U> {
        SplineTrajectory {
            control: self
                .control
                .iter()
                .map(|p| [U::from_f64(p[0].as_f64()), U::from_f64(p[1].as_f64())])
                .collect(),
            degree: self.degree,
            kind: self.kind,
        }
    }
}

/// Poses sampled along a trajectory at parameters `us`.
#[derive(Clone, Debug)]
pub struct PoseSchedule<T> {
    pub poses: Vec<PusherPose<T>>,
    pub us: Vec<T>,
}

/// Clamped uniform knot vector for m+1 control points at the given degree.
fn clamped_knots(m: usize, degree: usize) -> Vec<f64> {
    let interior = m - degree; // number of interior knots
    let mut t = Vec::with_capacity(m + degree + 2);
    for _ in 0..=degree {
        t.push(0.0);
    }
    for i in 1..=interior {
        t.push(i as f64 / (interior + 1) as f64);
    }
    for _ in 0..=degree {
        t.push(1.0);
    }
    t
}

/// All basis values N_{i,n}(u) for i = 0..=m via the Cox-de Boor recursion.
/// For Bezier (m == n, clamped knots) this reproduces the Bernstein basis.
fn basis_row(u: f64, degree: usize, m: usize) -> Vec<f64> {
    let knots = clamped_knots(m, degree);
    let n_basis = m + 1;
    // degree 0
    let mut prev = vec![0.0f64; n_basis + degree];
    for (i, p) in prev.iter_mut().enumerate() {
        let lo = knots[i];
        let hi = knots[i + 1];
        *p = if (u >= lo && u < hi) || (u == 1.0 && hi == 1.0 && lo < 1.0) {
            1.0
        } else {
            0.0
        };
    }
    let mut cur = vec![0.0f64; n_basis + degree];
    for d in 1..=degree {
        for i in 0..n_basis + degree - d {
            let mut v = 0.0;
            let denom_a = knots[i + d] - knots[i];
            if denom_a > 0.0 {
                v += (u - knots[i]) / denom_a * prev[i];
            }
            let denom_b = knots[i + d + 1] - knots[i + 1];
            if denom_b > 0.0 {
                v += (knots[i + d + 1] - u) / denom_b * prev[i + 1];
            }
            cur[i] = v;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev.truncate(n_basis);
    prev
}

/// Row-major |us| x (m+1) matrix of basis values; each row sums to one.
#[derive(Clone, Debug)]
pub struct BasisMatrix<T> {
    pub n_rows: usize,
    pub n_cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> BasisMatrix<T> {
    #[inline]
    pub fn row(&self, k: usize) -> &[T] {
        &self.data[k * self.n_cols..(k + 1) * self.n_cols]
    }
}

pub fn basis_matrix<T: Real>(us: &[f64], degree: usize, m: usize, kind: BasisKind) -> Result<BasisMatrix<T>> {
    if degree > m {
        return Err(Error::InvalidArgument(format!("degree {degree} exceeds control index {m}")));
    }
    if kind == BasisKind::Bezier && degree != m {
        return Err(Error::InvalidArgument("bezier requires m == degree".into()));
    }
    let mut data = Vec::with_capacity(us.len() * (m + 1));
    for &u in us {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::InvalidArgument(format!("parameter {u} outside [0,1]")));
        }
        data.extend(basis_row(u, degree, m).into_iter().map(T::from_f64));
    }
    Ok(BasisMatrix { n_rows: us.len(), n_cols: m + 1, data })
}

/// Evaluate the curve at parameter `u`.
pub fn eval<T: Real>(traj: &SplineTrajectory<T>, u: f64) -> Result<[T; 2]> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::InvalidArgument(format!("parameter {u} outside [0,1]")));
    }
    let m = traj.control.len() - 1;
    let row = basis_row(u, traj.degree, m);
    let mut x = T::zero();
    let mut y = T::zero();
    for (b, p) in row.iter().zip(&traj.control) {
        let bt = T::from_f64(*b);
        x += bt * p[0];
        y += bt * p[1];
    }
    Ok([x, y])
}

const TANGENT_DELTA: f64 = 1e-4;

/// Precomputed sampling operator for a fixed (degree, control count, H):
/// position rows B and tangent rows D with C'(u_k) ~= D_k . P.
#[derive(Clone, Debug)]
pub struct SplineSampler<T> {
    pub us: Vec<f64>,
    pub pos: BasisMatrix<T>,
    pub tan: BasisMatrix<T>,
}

impl<T: Real> SplineSampler<T> {
    pub fn new(degree: usize, n_control: usize, segments: usize, kind: BasisKind) -> Result<Self> {
        if segments == 0 {
            return Err(Error::InvalidArgument("need at least one segment".into()));
        }
        let m = n_control.checked_sub(1).ok_or_else(|| Error::EmptyInput("no control points"))?;
        let us: Vec<f64> = (0..=segments).map(|k| k as f64 / segments as f64).collect();
        let pos = basis_matrix::<T>(&us, degree, m, kind)?;

        // symmetric finite difference in u, one-sided (clamped) at endpoints
        let mut tan_data = Vec::with_capacity(us.len() * (m + 1));
        for &u in &us {
            let hi = (u + TANGENT_DELTA).min(1.0);
            let lo = (u - TANGENT_DELTA).max(0.0);
            let span = hi - lo;
            let rhi = basis_row(hi, degree, m);
            let rlo = basis_row(lo, degree, m);
            for i in 0..=m {
                tan_data.push(T::from_f64((rhi[i] - rlo[i]) / span));
            }
        }
        let tan = BasisMatrix { n_rows: us.len(), n_cols: m + 1, data: tan_data };
        Ok(SplineSampler { us, pos, tan })
    }

    /// Sample poses: position from the basis, orientation = tangent angle
    /// + pi/2 so the pusher's long axis is perpendicular to the motion.
    /// Degenerate (zero) tangents carry theta over from the nearest valid
    /// sample; errors if the curve has no tangent anywhere.
    pub fn poses<T2: Real>(&self, control: &[[T2; 2]]) -> Result<PoseSchedule<T2>>
    where
        T: Real,
    {
        assert_eq!(control.len(), self.pos.n_cols);
        let h1 = self.pos.n_rows;
        let tiny = 1e-9;
        let mut xs = Vec::with_capacity(h1);
        let mut tangents = Vec::with_capacity(h1);
        for k in 0..h1 {
            let brow = self.pos.row(k);
            let drow = self.tan.row(k);
            let mut x = T2::zero();
            let mut y = T2::zero();
            let mut tx = T2::zero();
            let mut ty = T2::zero();
            for i in 0..control.len() {
                let b = T2::from_f64(brow[i].as_f64());
                let d = T2::from_f64(drow[i].as_f64());
                x += b * control[i][0];
                y += b * control[i][1];
                tx += d * control[i][0];
                ty += d * control[i][1];
            }
            xs.push((x, y));
            tangents.push((tx, ty));
        }
        let valid =
            |t: &(T2, T2)| (t.0 * t.0 + t.1 * t.1).as_f64().sqrt() > tiny;
        if !tangents.iter().any(valid) {
            return Err(Error::DegenerateTrajectory);
        }
        let first_valid = tangents.iter().position(valid).unwrap();
        let mut poses = Vec::with_capacity(h1);
        let mut theta = {
            let (tx, ty) = tangents[first_valid];
            ty.atan2(tx) + T2::from_f64(std::f64::consts::FRAC_PI_2)
        };
        for k in 0..h1 {
            if valid(&tangents[k]) {
                let (tx, ty) = tangents[k];
                theta = ty.atan2(tx) + T2::from_f64(std::f64::consts::FRAC_PI_2);
            }
            poses.push(PusherPose::new(xs[k].0, xs[k].1, theta));
        }
        Ok(PoseSchedule { poses, us: self.us.iter().map(|&u| T2::from_f64(u)).collect() })
    }

    /// Chain rule from per-pose cotangents back to control points. Carried
    /// (degenerate-tangent) thetas contribute no angular gradient.
    pub fn poses_vjp<T2: Real>(&self, control: &[[T2; 2]], upstream: &[PoseGrad<T2>]) -> Vec<[T2; 2]> {
        assert_eq!(control.len(), self.pos.n_cols);
        assert_eq!(upstream.len(), self.pos.n_rows);
        let tiny = 1e-9;
        let mut grads = vec![[T2::zero(); 2]; control.len()];
        for k in 0..self.pos.n_rows {
            let up = &upstream[k];
            let brow = self.pos.row(k);
            let drow = self.tan.row(k);
            // tangent at this sample
            let mut tx = T2::zero();
            let mut ty = T2::zero();
            for i in 0..control.len() {
                let d = T2::from_f64(drow[i].as_f64());
                tx += d * control[i][0];
                ty += d * control[i][1];
            }
            let norm2 = tx * tx + ty * ty;
            let angular = norm2.as_f64().sqrt() > tiny;
            // theta = atan2(ty, tx) + pi/2 ; d theta/d t = (-ty, tx)/|t|^2
            let (gtx, gty) = if angular {
                (up.d_theta * (-ty) / norm2, up.d_theta * tx / norm2)
            } else {
                (T2::zero(), T2::zero())
            };
            for i in 0..control.len() {
                let b = T2::from_f64(brow[i].as_f64());
                let d = T2::from_f64(drow[i].as_f64());
                grads[i][0] += b * up.d_x + d * gtx;
                grads[i][1] += b * up.d_y + d * gty;
            }
        }
        grads
    }
}

/// Sample H+1 poses at u_k = k/H along the trajectory.
pub fn poses_from_spline<T: Real>(traj: &SplineTrajectory<T>, segments: usize) -> Result<PoseSchedule<T>> {
    let sampler = SplineSampler::<f64>::new(traj.degree, traj.control.len(), segments, traj.kind)?;
    sampler.poses(&traj.control)
}

/// Control-point cotangents for upstream pose gradients.
pub fn poses_vjp<T: Real>(
    traj: &SplineTrajectory<T>,
    segments: usize,
    upstream: &[PoseGrad<T>],
) -> Result<Vec<[T; 2]>> {
    let sampler = SplineSampler::<f64>::new(traj.degree, traj.control.len(), segments, traj.kind)?;
    Ok(sampler.poses_vjp(&traj.control, upstream))
}
