//! Differentiable rendering of the pusher footprint into a density field,
//! with exact vector-Jacobian products with respect to the pose.
//!
//! The footprint is a capsule (segment of length L with rounded ends of
//! the given radius); the rendered value at a pixel is
//! `sigmoid(-signed_distance / softness)`, which is smooth in (x, y, theta)
//! and strictly decreasing with distance.

use serde::{Deserialize, Serialize};

use crate::grid::{Field, GridSpec};
use crate::real::Real;

/// Top-down SE(2) pose of the pusher. `theta` is the orientation of the
/// pusher's long axis and is deliberately not wrapped: gradients must stay
/// continuous across 2*pi.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PusherPose<T> {
    pub x: T,
    pub y: T,
    pub theta: T,
}

impl<T: Real> PusherPose<T> {
    pub fn new(x: T, y: T, theta: T) -> Self {
        PusherPose { x, y, theta }
    }

    pub fn cast<U: Real>(&self) -> PusherPose<U> {
        PusherPose {
            x: U::from_f64(self.x.as_f64()),
            y: U::from_f64(self.y.as_f64()),
            theta: U::from_f64(self.theta.as_f64()),
        }
    }
}

/// Capsule pusher shape. All lengths in meters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PusherGeom {
    /// Length of the capsule's core segment.
    pub length: f64,
    /// Half-thickness (cap radius).
    pub radius: f64,
    /// Sigmoid temperature of the soft rasterization.
    pub softness: f64,
}

impl PusherGeom {
    pub fn is_valid(&self) -> bool {
        self.length > 0.0 && self.radius > 0.0 && self.softness > 0.0
    }
}

/// Cotangent with respect to one pose.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PoseGrad<T> {
    pub d_x: T,
    pub d_y: T,
    pub d_theta: T,
}

impl<T: Real> PoseGrad<T> {
    pub fn zero() -> Self {
        PoseGrad { d_x: T::zero(), d_y: T::zero(), d_theta: T::zero() }
    }

    pub fn add(&mut self, other: &PoseGrad<T>) {
        self.d_x += other.d_x;
        self.d_y += other.d_y;
        self.d_theta += other.d_theta;
    }

    pub fn is_finite(&self) -> bool {
        self.d_x.is_finite() && self.d_y.is_finite() && self.d_theta.is_finite()
    }
}

/// Signed distance from a point to the capsule surface; negative inside.
pub fn capsule_signed_distance<T: Real>(px: T, py: T, pose: &PusherPose<T>, geom: &PusherGeom) -> T {
    let half = T::from_f64(geom.length * 0.5);
    let (sin, cos) = pose.theta.sin_cos();
    let rx = px - pose.x;
    let ry = py - pose.y;
    let t = (rx * cos + ry * sin).max(-half).min(half);
    let vx = rx - cos * t;
    let vy = ry - sin * t;
    (vx * vx + vy * vy).sqrt() - T::from_f64(geom.radius)
}

#[inline]
fn sigmoid<T: Real>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

/// Rendered occupancy at a single workspace point.
#[inline]
pub fn render_point<T: Real>(px: T, py: T, pose: &PusherPose<T>, geom: &PusherGeom) -> T {
    let d = capsule_signed_distance(px, py, pose, geom);
    sigmoid(-d / T::from_f64(geom.softness))
}

/// Column range of pixels worth evaluating in fast mode (footprint bounding
/// box inflated so that skipped values are below the flush threshold).
fn fast_bounds<T: Real>(pose: &PusherPose<T>, geom: &PusherGeom, spec: &GridSpec) -> (usize, usize, usize, usize) {
    // sigmoid(-d/tau) < 1e-6 for d > tau * ln(1e6)
    let reach = geom.length * 0.5 + geom.radius + geom.softness * 14.0;
    let p = spec.pitch();
    let x = pose.x.as_f64();
    let y = pose.y.as_f64();
    let c0 = (((x - reach) / p - 0.5).floor().max(0.0)) as usize;
    let r0 = (((y - reach) / p - 0.5).floor().max(0.0)) as usize;
    let c1 = ((((x + reach) / p + 0.5).ceil()).min(spec.width as f64 - 1.0)).max(0.0) as usize;
    let r1 = ((((y + reach) / p + 0.5).ceil()).min(spec.height as f64 - 1.0)).max(0.0) as usize;
    (r0, r1, c0, c1)
}

/// Write the rendered footprint into `out` (length H*W). `fast` skips pixels
/// whose value is provably below 1e-6, leaving exact zeros there.
pub fn render_into<T: Real>(
    pose: &PusherPose<T>,
    geom: &PusherGeom,
    spec: &GridSpec,
    fast: bool,
    out: &mut [T],
) {
    debug_assert!(geom.is_valid());
    debug_assert_eq!(out.len(), spec.len());
    let pitch = T::from_f64(spec.pitch());
    let half_px = T::from_f64(0.5);
    let (r0, r1, c0, c1) = if fast {
        for v in out.iter_mut() {
            *v = T::zero();
        }
        fast_bounds(pose, geom, spec)
    } else {
        (0, spec.height - 1, 0, spec.width - 1)
    };
    for r in r0..=r1 {
        let py = (T::from_f64(r as f64) + half_px) * pitch;
        let row = &mut out[r * spec.width..(r + 1) * spec.width];
        for (c, slot) in row.iter_mut().enumerate().take(c1 + 1).skip(c0) {
            let px = (T::from_f64(c as f64) + half_px) * pitch;
            *slot = render_point(px, py, pose, geom);
        }
    }
}

/// Rasterize a pusher pose into a one-channel density field.
pub fn render<T: Real>(pose: &PusherPose<T>, geom: &PusherGeom, spec: &GridSpec) -> Field<T> {
    let mut out = Field::zeros(*spec);
    render_into(pose, geom, spec, false, &mut out.values);
    out
}

/// Exact analytic vector-Jacobian product of `render` with respect to the
/// pose: `sum_p upstream[p] * d render[p] / d (x, y, theta)`.
pub fn render_vjp_into<T: Real>(
    pose: &PusherPose<T>,
    geom: &PusherGeom,
    spec: &GridSpec,
    fast: bool,
    upstream: &[T],
) -> PoseGrad<T> {
    debug_assert_eq!(upstream.len(), spec.len());
    let pitch = T::from_f64(spec.pitch());
    let half_px = T::from_f64(0.5);
    let half = T::from_f64(geom.length * 0.5);
    let inv_tau = T::one() / T::from_f64(geom.softness);
    let (sin, cos) = pose.theta.sin_cos();
    let tiny = T::from_f64(1e-12);

    let (r0, r1, c0, c1) = if fast {
        fast_bounds(pose, geom, spec)
    } else {
        (0, spec.height - 1, 0, spec.width - 1)
    };

    let mut g = PoseGrad::zero();
    for r in r0..=r1 {
        let py = (T::from_f64(r as f64) + half_px) * pitch;
        for c in c0..=c1 {
            let up = upstream[r * spec.width + c];
            if up == T::zero() {
                continue;
            }
            let px = (T::from_f64(c as f64) + half_px) * pitch;
            let rx = px - pose.x;
            let ry = py - pose.y;
            let t = (rx * cos + ry * sin).max(-half).min(half);
            let vx = rx - cos * t;
            let vy = ry - sin * t;
            let dist = (vx * vx + vy * vy).sqrt();
            if dist < tiny {
                // on the capsule axis: measure-zero, no defined normal
                continue;
            }
            let d = dist - T::from_f64(geom.radius);
            let val = sigmoid(-d * inv_tau);
            // d val / d d = -val (1 - val) / tau
            let coeff = up * val * (T::one() - val) * inv_tau;
            let nvx = vx / dist;
            let nvy = vy / dist;
            // d d/d(x,y) = -n ; d d/d theta = -(n . dir_perp) * t
            let n_dot_perp = -nvx * sin + nvy * cos;
            g.d_x += coeff * nvx;
            g.d_y += coeff * nvy;
            g.d_theta += coeff * n_dot_perp * t;
        }
    }
    g
}

pub fn render_vjp<T: Real>(
    pose: &PusherPose<T>,
    geom: &PusherGeom,
    spec: &GridSpec,
    upstream: &Field<T>,
) -> PoseGrad<T> {
    render_vjp_into(pose, geom, spec, false, &upstream.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn geom() -> PusherGeom {
        PusherGeom { length: 0.05, radius: 0.004, softness: 0.004375 }
    }

    fn spec() -> GridSpec {
        GridSpec::new(64, 64, 0.28).unwrap()
    }

    #[test]
    fn distance_examples() {
        let g = geom();
        let pose = PusherPose::new(0.14f64, 0.14, 0.0);
        // at the pose center
        let d0 = capsule_signed_distance(0.14, 0.14, &pose, &g);
        assert!((d0 + g.radius).abs() < 1e-12);
        // on the surface beside the segment midpoint
        let d1 = capsule_signed_distance(0.14, 0.14 + g.radius, &pose, &g);
        assert!(d1.abs() < 1e-12);
        // beyond the endpoint cap along the axis
        let extra = 0.003;
        let d2 = capsule_signed_distance(0.14 + 0.025 + g.radius + extra, 0.14, &pose, &g);
        assert!((d2 - extra).abs() < 1e-12);
    }

    #[test]
    fn render_center_value_and_range() {
        let g = geom();
        let s = spec();
        let pose = PusherPose::new(0.14f32, 0.14, 0.3);
        let f = render(&pose, &g, &s);
        assert!(f.values.iter().all(|&v| v > 0.0 && v < 1.0));
        // value at the pixel nearest the center ~ sigmoid(radius / softness)
        let (r, c) = s.pixel_of(0.14, 0.14);
        let want = 1.0 / (1.0 + (-(g.radius / g.softness)).exp());
        assert!((f.get(r, c) as f64 - want).abs() < 0.08);
    }

    #[test]
    fn render_theta_pi_symmetry() {
        let g = geom();
        let s = spec();
        let a = render(&PusherPose::new(0.1f64, 0.2, 0.7), &g, &s);
        let b = render(&PusherPose::new(0.1f64, 0.2, 0.7 + std::f64::consts::PI), &g, &s);
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn render_translation_covariance_one_pitch() {
        let g = geom();
        let s = spec();
        let pitch = s.pitch();
        let p0 = PusherPose::new(0.12f64, 0.13, 1.1);
        let p1 = PusherPose::new(0.12 + pitch, 0.13, 1.1);
        let a = render(&p0, &g, &s);
        let b = render(&p1, &g, &s);
        let shifted = a.shift(1, 0);
        // interior comparison (skip the column that wrapped in)
        for r in 0..s.height {
            for c in 1..s.width {
                assert!(
                    (shifted.get(r, c) - b.get(r, c)).abs() < 1e-6,
                    "at ({r},{c})"
                );
            }
        }
    }

    #[test]
    fn render_monotone_in_distance() {
        let g = geom();
        let pose = PusherPose::new(0.14f64, 0.14, 0.0);
        let mut prev = f64::INFINITY;
        for k in 0..20 {
            let y = 0.14 + 0.002 * k as f64;
            let v = render_point(0.14, y, &pose, &g);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn fast_mode_matches_exact_above_threshold() {
        let g = geom();
        let s = spec();
        let pose = PusherPose::new(0.07f32, 0.21, 2.0);
        let exact = render(&pose, &g, &s);
        let mut fast = vec![0.0f32; s.len()];
        render_into(&pose, &g, &s, true, &mut fast);
        for (e, f) in exact.values.iter().zip(&fast) {
            if *f != 0.0 {
                assert_eq!(e, f);
            } else {
                assert!(*e <= 1e-6);
            }
        }
    }

    #[test]
    fn vjp_zero_upstream_and_symmetry() {
        let g = geom();
        let s = spec();
        let pose = PusherPose::new(0.14f64, 0.14, 0.0);
        let zero = Field::<f64>::zeros(s);
        assert_eq!(render_vjp(&pose, &g, &s, &zero), PoseGrad::zero());

        // upstream symmetric about the pusher's long axis (y = 0.14 row band)
        let sym = Field::from_fn(s, |r, _| {
            let (_, y) = s.pixel_center(r, 0);
            (-((y - 0.14) / 0.02).powi(2)).exp()
        });
        let gd = render_vjp(&pose, &g, &s, &sym);
        assert!(gd.d_theta.abs() < 1e-9, "theta grad {}", gd.d_theta);
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let g = geom();
        let s = GridSpec::new(32, 32, 0.28).unwrap();
        let mut rng = crate::rng::stream_rng(3, "raster-fd");
        let mut checked = 0;
        while checked < 100 {
            let pose = PusherPose::new(
                rng.gen_range(0.06f64..0.22),
                rng.gen_range(0.06..0.22),
                rng.gen_range(-3.0..3.0),
            );
            // the signed distance is C1 but not C2 on the capsule axis and on
            // the cap-junction planes |t| = L/2; skip poses whose FD stencil
            // straddles those measure-zero sets at an active pixel
            let (sin, cos) = pose.theta.sin_cos();
            let half = g.length * 0.5;
            let near_kink = (0..s.height).any(|r| {
                (0..s.width).any(|c| {
                    let (px, py) = s.pixel_center(r, c);
                    let t_raw = (px - pose.x) * cos + (py - pose.y) * sin;
                    let d = capsule_signed_distance(px, py, &pose, &g);
                    let on_axis = (d + g.radius).abs() < 5e-4;
                    let on_junction = (t_raw.abs() - half).abs() < 1e-3 && d < 14.0 * g.softness;
                    on_axis || on_junction
                })
            });
            if near_kink {
                continue;
            }
            checked += 1;
            let up = Field::from_fn(s, |_, _| rng.gen_range(-1.0f64..1.0));
            let an = render_vjp(&pose, &g, &s, &up);

            let loss = |p: &PusherPose<f64>| -> f64 {
                let f = render(p, &g, &s);
                f.values.iter().zip(&up.values).map(|(a, b)| a * b).sum()
            };
            // fourth-order central differences keep the oracle's truncation
            // error well under the tolerance at softness = 0.5 pixel pitch
            let h = 1e-4;
            let central4 = |f: &dyn Fn(f64) -> f64| {
                (f(-2.0 * h) - 8.0 * f(-h) + 8.0 * f(h) - f(2.0 * h)) / (12.0 * h)
            };
            let fd_x = central4(&|d| loss(&PusherPose::new(pose.x + d, pose.y, pose.theta)));
            let fd_y = central4(&|d| loss(&PusherPose::new(pose.x, pose.y + d, pose.theta)));
            let fd_t = central4(&|d| loss(&PusherPose::new(pose.x, pose.y, pose.theta + d)));
            for (a, f) in [(an.d_x, fd_x), (an.d_y, fd_y), (an.d_theta, fd_t)] {
                let rel = (a - f).abs() / f.abs().max(a.abs()).max(1e-8);
                assert!(rel < 1e-4, "analytic {a} vs fd {f} (rel {rel})");
            }
        }
    }
}
