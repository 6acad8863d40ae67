//! Ground-truth 2D quasistatic pushing simulator.
//!
//! Particles are uniform disks; the pusher is a capsule driven kinematically
//! along interpolated poses. There are no velocities: penetrations are
//! resolved by positional projection each substep, which matches the
//! quasistatic regime where objects move only while being pushed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, DensityField, Field, GridSpec};
use crate::raster::{PusherGeom, PusherPose};

/// Disk-particle pile state. `mass` is the per-particle weight.
#[derive(Clone, Debug)]
pub struct ParticleState {
    pub positions: Vec<[f64; 2]>,
    pub radius: f64,
    pub mass: f64,
}

impl ParticleState {
    pub fn count(&self) -> usize {
        self.positions.len()
    }

    pub fn centroid(&self) -> [f64; 2] {
        let n = self.positions.len().max(1) as f64;
        let mut c = [0.0, 0.0];
        for p in &self.positions {
            c[0] += p[0];
            c[1] += p[1];
        }
        [c[0] / n, c[1] / n]
    }

    pub fn max_pair_penetration(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.positions.len() {
            for j in i + 1..self.positions.len() {
                let dx = self.positions[i][0] - self.positions[j][0];
                let dy = self.positions[i][1] - self.positions[j][1];
                let d = (dx * dx + dy * dy).sqrt();
                worst = worst.max(2.0 * self.radius - d);
            }
        }
        worst.max(0.0)
    }
}

/// Static obstacle in workspace meters.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Obstacle {
    Rect { min: [f64; 2], max: [f64; 2] },
    Disk { center: [f64; 2], radius: f64 },
}

impl Obstacle {
    /// Push a disk of the given radius out of the obstacle. Returns the
    /// correction applied.
    fn project_out(&self, p: &mut [f64; 2], radius: f64) -> f64 {
        match self {
            Obstacle::Rect { min, max } => {
                let cx = p[0].clamp(min[0], max[0]);
                let cy = p[1].clamp(min[1], max[1]);
                let dx = p[0] - cx;
                let dy = p[1] - cy;
                let d2 = dx * dx + dy * dy;
                if d2 > radius * radius {
                    return 0.0;
                }
                if d2 > 1e-24 {
                    // center outside the rect: push along the outward normal
                    let d = d2.sqrt();
                    let pen = radius - d;
                    p[0] += dx / d * pen;
                    p[1] += dy / d * pen;
                    pen
                } else {
                    // center inside: exit through the nearest face
                    let exits = [
                        (p[0] - min[0] + radius, [-1.0, 0.0]),
                        (max[0] - p[0] + radius, [1.0, 0.0]),
                        (p[1] - min[1] + radius, [0.0, -1.0]),
                        (max[1] - p[1] + radius, [0.0, 1.0]),
                    ];
                    let (pen, dir) = exits
                        .iter()
                        .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
                        .copied()
                        .unwrap();
                    p[0] += dir[0] * pen;
                    p[1] += dir[1] * pen;
                    pen
                }
            }
            Obstacle::Disk { center, radius: or } => {
                let dx = p[0] - center[0];
                let dy = p[1] - center[1];
                let d2 = dx * dx + dy * dy;
                let reach = or + radius;
                if d2 >= reach * reach {
                    return 0.0;
                }
                let d = d2.sqrt().max(1e-12);
                let pen = reach - d;
                p[0] += dx / d * pen;
                p[1] += dy / d * pen;
                pen
            }
        }
    }

    /// True when the point lies strictly inside the obstacle outline.
    pub fn contains(&self, p: &[f64; 2]) -> bool {
        match self {
            Obstacle::Rect { min, max } => {
                p[0] > min[0] && p[0] < max[0] && p[1] > min[1] && p[1] < max[1]
            }
            Obstacle::Disk { center, radius } => {
                let dx = p[0] - center[0];
                let dy = p[1] - center[1];
                dx * dx + dy * dy < radius * radius
            }
        }
    }

    /// Paint the obstacle into a mask (1 on obstacle pixels).
    pub fn paint(&self, mask: &mut BinaryMask) {
        let spec = mask.spec;
        for r in 0..spec.height {
            for c in 0..spec.width {
                let (x, y) = spec.pixel_center(r, c);
                if self.contains(&[x, y]) {
                    mask.set(r, c, 1);
                }
            }
        }
    }
}

/// Environment configuration for the simulator.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneSpec {
    pub grid: GridSpec,
    pub particle_count: usize,
    pub particle_radius: f64,
    pub pusher: PusherGeom,
    pub obstacles: Vec<Obstacle>,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.particle_radius >= self.grid.extent / 10.0 {
            return Err(Error::InvalidArgument(format!(
                "particle radius {} too large for extent {}",
                self.particle_radius, self.grid.extent
            )));
        }
        if !self.pusher.is_valid() {
            return Err(Error::InvalidArgument("invalid pusher geometry".into()));
        }
        let e = self.grid.extent;
        for o in &self.obstacles {
            let inside = match o {
                Obstacle::Rect { min, max } => {
                    min[0] >= 0.0 && min[1] >= 0.0 && max[0] <= e && max[1] <= e && min[0] < max[0] && min[1] < max[1]
                }
                Obstacle::Disk { center, radius } => {
                    center[0] - radius >= 0.0
                        && center[1] - radius >= 0.0
                        && center[0] + radius <= e
                        && center[1] + radius <= e
                }
            };
            if !inside {
                return Err(Error::InvalidArgument("obstacle outside workspace".into()));
            }
        }
        Ok(())
    }

    pub fn penetration_tolerance(&self) -> f64 {
        1e-3 * self.particle_radius
    }
}

/// Default 28 cm / 64x64 scene with 50 half-centimeter disks and a 5 cm pusher.
pub fn default_scene(seed: u64) -> SceneSpec {
    let grid = GridSpec::new(64, 64, 0.28).unwrap();
    SceneSpec {
        grid,
        particle_count: 50,
        particle_radius: 0.005,
        pusher: PusherGeom { length: 0.05, radius: 0.004, softness: grid.pitch() },
        obstacles: Vec::new(),
        seed,
    }
}

const MAX_RELAX_ROUNDS: usize = 32;

fn capsule_axis(pose: &PusherPose<f64>, length: f64) -> ([f64; 2], [f64; 2]) {
    let half = length * 0.5;
    let (sin, cos) = pose.theta.sin_cos();
    (
        [pose.x - cos * half, pose.y - sin * half],
        [pose.x + cos * half, pose.y + sin * half],
    )
}

fn dist_point_segment(p: &[f64; 2], a: &[f64; 2], b: &[f64; 2]) -> (f64, [f64; 2]) {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + ab[0] * t, a[1] + ab[1] * t];
    let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
    (d, q)
}

/// One relaxation pass over all constraints. Returns the largest correction.
fn relax_round(
    state: &mut ParticleState,
    pusher: Option<(&PusherPose<f64>, [f64; 2])>,
    scene: &SceneSpec,
) -> f64 {
    let mut max_move: f64 = 0.0;
    let r = state.radius;
    let e = scene.grid.extent;

    // pusher capsule
    if let Some((pose, motion)) = pusher {
        let (a, b) = capsule_axis(pose, scene.pusher.length);
        let reach = scene.pusher.radius + r;
        for p in &mut state.positions {
            let (d, q) = dist_point_segment(p, &a, &b);
            if d < reach {
                let pen = reach - d;
                let (nx, ny) = if d > 1e-12 {
                    ((p[0] - q[0]) / d, (p[1] - q[1]) / d)
                } else if motion[0] != 0.0 || motion[1] != 0.0 {
                    (motion[0], motion[1])
                } else {
                    (1.0, 0.0)
                };
                p[0] += nx * pen;
                p[1] += ny * pen;
                max_move = max_move.max(pen);
            }
        }
    }

    // particle-particle, pairwise positional projection
    let n = state.positions.len();
    for i in 0..n {
        for j in i + 1..n {
            let dx = state.positions[j][0] - state.positions[i][0];
            let dy = state.positions[j][1] - state.positions[i][1];
            let d2 = dx * dx + dy * dy;
            let reach = 2.0 * r;
            if d2 >= reach * reach {
                continue;
            }
            let d = d2.sqrt();
            let (nx, ny) = if d > 1e-12 {
                (dx / d, dy / d)
            } else {
                // coincident centers: deterministic separation direction
                let ang = (i * 31 + j * 17) as f64;
                (ang.cos(), ang.sin())
            };
            let half_pen = 0.5 * (reach - d);
            state.positions[i][0] -= nx * half_pen;
            state.positions[i][1] -= ny * half_pen;
            state.positions[j][0] += nx * half_pen;
            state.positions[j][1] += ny * half_pen;
            max_move = max_move.max(half_pen);
        }
    }

    // obstacles
    for o in &scene.obstacles {
        for p in &mut state.positions {
            max_move = max_move.max(o.project_out(p, r));
        }
    }

    // workspace walls clamp centers to [r, extent - r]
    for p in &mut state.positions {
        let nx = p[0].clamp(r, e - r);
        let ny = p[1].clamp(r, e - r);
        max_move = max_move.max((nx - p[0]).abs().max((ny - p[1]).abs()));
        p[0] = nx;
        p[1] = ny;
    }

    max_move
}

/// Relax all overlaps (pusher optional) until quiescent or the round cap.
pub fn relax(state: &mut ParticleState, pusher: Option<(&PusherPose<f64>, [f64; 2])>, scene: &SceneSpec) {
    let tol = scene.penetration_tolerance();
    for _ in 0..MAX_RELAX_ROUNDS {
        if relax_round(state, pusher, scene) < tol {
            break;
        }
    }
}

fn pose_inside(pose: &PusherPose<f64>, extent: f64) -> bool {
    pose.x >= 0.0 && pose.x <= extent && pose.y >= 0.0 && pose.y <= extent
}

/// Execute one linear pusher motion. The pose is interpolated over
/// `substeps`; each substep projects particles out of the pusher capsule and
/// then relaxes particle-particle, obstacle and wall constraints.
pub fn step_push(
    state: &mut ParticleState,
    start: &PusherPose<f64>,
    end: &PusherPose<f64>,
    scene: &SceneSpec,
    substeps: usize,
) -> Result<()> {
    if !pose_inside(start, scene.grid.extent) {
        return Err(Error::PoseOutsideWorkspace { x: start.x, y: start.y });
    }
    if !pose_inside(end, scene.grid.extent) {
        return Err(Error::PoseOutsideWorkspace { x: end.x, y: end.y });
    }
    let mlen = ((end.x - start.x).powi(2) + (end.y - start.y).powi(2)).sqrt();
    let motion = if mlen > 1e-12 {
        [(end.x - start.x) / mlen, (end.y - start.y) / mlen]
    } else {
        [0.0, 0.0]
    };
    // quasistatic refinement: contact chains in a crowded pile only converge
    // when the pusher advances a small fraction of a particle radius at a time
    let quasistatic = (mlen / (0.05 * state.radius)).ceil() as usize;
    let steps = substeps.max(1).max(quasistatic);
    for k in 1..=steps {
        let f = k as f64 / steps as f64;
        let pose = PusherPose::new(
            start.x + (end.x - start.x) * f,
            start.y + (end.y - start.y) * f,
            start.theta + (end.theta - start.theta) * f,
        );
        relax(state, Some((&pose, motion)), scene);
    }
    Ok(())
}

/// Execute a whole pose schedule segment by segment.
pub fn run_schedule(
    state: &mut ParticleState,
    poses: &[PusherPose<f64>],
    scene: &SceneSpec,
    substeps: usize,
) -> Result<()> {
    for w in poses.windows(2) {
        step_push(state, &w[0], &w[1], scene, substeps)?;
    }
    Ok(())
}

/// Bilinear mass splat of particle centers onto the grid. Total field mass
/// equals the summed particle mass up to 32-bit rounding.
pub fn rasterize_particles(state: &ParticleState, spec: &GridSpec) -> DensityField {
    let mut out = Field::zeros(*spec);
    let pitch = spec.pitch();
    let m = state.mass as f32;
    for p in &state.positions {
        // continuous coordinates in pixel-center space, clamped so the four
        // splat weights always sum to one
        let gx = (p[0] / pitch - 0.5).clamp(0.0, (spec.width - 1) as f64);
        let gy = (p[1] / pitch - 0.5).clamp(0.0, (spec.height - 1) as f64);
        let c0 = gx.floor() as usize;
        let r0 = gy.floor() as usize;
        let fx = (gx - c0 as f64) as f32;
        let fy = (gy - r0 as f64) as f32;
        let c1 = (c0 + 1).min(spec.width - 1);
        let r1 = (r0 + 1).min(spec.height - 1);
        out.values[spec.idx(r0, c0)] += m * (1.0 - fx) * (1.0 - fy);
        out.values[spec.idx(r0, c1)] += m * fx * (1.0 - fy);
        out.values[spec.idx(r1, c0)] += m * (1.0 - fx) * fy;
        out.values[spec.idx(r1, c1)] += m * fx * fy;
    }
    out
}

/// Fraction of particles whose centers lie on goal (0-valued) pixels.
pub fn fraction_in_goal(state: &ParticleState, goal: &BinaryMask) -> f64 {
    if state.positions.is_empty() {
        return 0.0;
    }
    let inside = state
        .positions
        .iter()
        .filter(|p| {
            let (r, c) = goal.spec.pixel_of(p[0], p[1]);
            goal.get(r, c) == 0
        })
        .count();
    inside as f64 / state.positions.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene() -> SceneSpec {
        default_scene(0)
    }

    #[test]
    fn untouched_particles_do_not_move() {
        let sc = scene();
        let mut st = ParticleState {
            positions: vec![[0.25, 0.25]],
            radius: sc.particle_radius,
            mass: 1.0,
        };
        let before = st.positions.clone();
        step_push(
            &mut st,
            &PusherPose::new(0.05, 0.05, 0.0),
            &PusherPose::new(0.08, 0.05, 0.0),
            &sc,
            16,
        )
        .unwrap();
        assert_eq!(st.positions, before);
    }

    #[test]
    fn head_on_push_carries_particle() {
        let sc = scene();
        let mut st = ParticleState {
            positions: vec![[0.14, 0.14]],
            radius: sc.particle_radius,
            mass: 1.0,
        };
        // push along +x, pusher long axis along y
        let th = std::f64::consts::FRAC_PI_2;
        step_push(
            &mut st,
            &PusherPose::new(0.112, 0.14, th),
            &PusherPose::new(0.168, 0.14, th),
            &sc,
            16,
        )
        .unwrap();
        let min_x = 0.168 + sc.particle_radius + sc.pusher.radius - sc.penetration_tolerance();
        assert!(st.positions[0][0] >= min_x, "x = {}", st.positions[0][0]);
        assert!((st.positions[0][1] - 0.14).abs() < 1e-6);
    }

    #[test]
    fn touching_pair_pushed_head_on() {
        let sc = scene();
        let r = sc.particle_radius;
        let mk = || ParticleState {
            positions: vec![[0.14, 0.14], [0.14 + 2.0 * r, 0.14]],
            radius: r,
            mass: 1.0,
        };
        let th = std::f64::consts::FRAC_PI_2;
        let start = PusherPose::new(0.11, 0.14, th);
        let end = PusherPose::new(0.16, 0.14, th);

        let mut st = mk();
        step_push(&mut st, &start, &end, &sc, 16).unwrap();
        assert_eq!(st.count(), 2);
        assert!(st.max_pair_penetration() <= sc.penetration_tolerance() + 1e-12);
        assert!(st.positions.iter().all(|p| p[0] > 0.16));

        // dense-substep oracle
        let mut oracle = mk();
        step_push(&mut oracle, &start, &end, &sc, 160).unwrap();
        for (a, b) in st.positions.iter().zip(&oracle.positions) {
            let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            assert!(d <= 2.0 * r, "substep disagreement {d}");
        }
    }

    #[test]
    fn endpoint_outside_workspace_rejected() {
        let sc = scene();
        let mut st = ParticleState { positions: vec![], radius: sc.particle_radius, mass: 1.0 };
        let r = step_push(
            &mut st,
            &PusherPose::new(-0.01, 0.1, 0.0),
            &PusherPose::new(0.1, 0.1, 0.0),
            &sc,
            4,
        );
        assert!(matches!(r, Err(Error::PoseOutsideWorkspace { .. })));
    }

    #[test]
    fn particles_stay_out_of_obstacles_and_walls() {
        let mut sc = scene();
        sc.obstacles.push(Obstacle::Rect { min: [0.16, 0.10], max: [0.18, 0.20] });
        let mut st = ParticleState {
            positions: vec![[0.14, 0.15], [0.15, 0.15], [0.145, 0.16]],
            radius: sc.particle_radius,
            mass: 1.0,
        };
        let th = std::f64::consts::FRAC_PI_2;
        step_push(
            &mut st,
            &PusherPose::new(0.10, 0.15, th),
            &PusherPose::new(0.26, 0.15, th),
            &sc,
            32,
        )
        .unwrap();
        for p in &st.positions {
            for o in &sc.obstacles {
                assert!(!o.contains(p), "particle in obstacle: {p:?}");
            }
            assert!(p[0] >= sc.particle_radius - 1e-12 && p[0] <= sc.grid.extent - sc.particle_radius + 1e-12);
        }
    }

    #[test]
    fn rasterize_pixel_center_and_corner() {
        let spec = GridSpec::new(8, 8, 0.08).unwrap();
        let pitch = spec.pitch();
        // exactly at the center of pixel (2, 3)
        let st = ParticleState {
            positions: vec![[(3.0 + 0.5) * pitch, (2.0 + 0.5) * pitch]],
            radius: 0.004,
            mass: 1.0,
        };
        let f = rasterize_particles(&st, &spec);
        assert!((f.get(2, 3) - 1.0).abs() < 1e-6);
        assert!((f.total() - 1.0).abs() < 1e-6);

        // at the shared corner of pixels (2..3, 3..4)
        let st = ParticleState {
            positions: vec![[4.0 * pitch, 3.0 * pitch]],
            radius: 0.004,
            mass: 1.0,
        };
        let f = rasterize_particles(&st, &spec);
        for (r, c) in [(2, 3), (2, 4), (3, 3), (3, 4)] {
            assert!((f.get(r, c) - 0.25).abs() < 1e-6, "at ({r},{c})");
        }
    }

    #[test]
    fn rasterize_conserves_mass() {
        use rand::Rng;
        let sc = scene();
        let mut rng = crate::rng::stream_rng(2, "sim-mass");
        let st = ParticleState {
            positions: (0..50)
                .map(|_| [rng.gen_range(0.0..sc.grid.extent), rng.gen_range(0.0..sc.grid.extent)])
                .collect(),
            radius: sc.particle_radius,
            mass: 1.0,
        };
        let f = rasterize_particles(&st, &sc.grid);
        assert!((f.total() - 50.0).abs() / 50.0 < 1e-5);
    }

    #[test]
    fn fraction_in_goal_counts() {
        let sc = scene();
        let mut goal = BinaryMask::ones(sc.grid);
        // goal square covering the lower-left quadrant
        for r in 0..32 {
            for c in 0..32 {
                goal.set(r, c, 0);
            }
        }
        let st = ParticleState {
            positions: vec![[0.05, 0.05], [0.06, 0.07], [0.10, 0.05], [0.25, 0.25]],
            radius: sc.particle_radius,
            mass: 1.0,
        };
        assert_eq!(fraction_in_goal(&st, &goal), 0.75);
        let all_in = ParticleState { positions: vec![[0.05, 0.05]], radius: 0.005, mass: 1.0 };
        assert_eq!(fraction_in_goal(&all_in, &goal), 1.0);
        let none_in = ParticleState { positions: vec![[0.25, 0.25]], radius: 0.005, mass: 1.0 };
        assert_eq!(fraction_in_goal(&none_in, &goal), 0.0);
    }
}
