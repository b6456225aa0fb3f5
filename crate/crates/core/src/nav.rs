//! Score-to-velocity mapping and a planar unicycle simulator for closed-loop smoke tests.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TraversabilityNet;
use crate::synth::{self, GroundStyle, Obstacle, SceneSpec};
use crate::types::{clamp_scores, TraversabilityVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NavConfig {
    /// Maximum linear speed in m/s.
    pub v_max: f64,
    pub full_speed_score: f64,
    pub stop_score: f64,
    /// Horizontal field of view in degrees.
    pub fov: f64,
    pub k: usize,
    /// Proportional gain from bearing to yaw rate, 1/s.
    pub angular_gain: f64,
}

impl Default for NavConfig {
    fn default() -> Self {
        Self {
            v_max: 1.0,
            full_speed_score: 0.5,
            stop_score: 0.1,
            fov: 85.0,
            k: crate::types::DEFAULT_SECTIONS,
            angular_gain: 1.0,
        }
    }
}

impl NavConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.stop_score && self.stop_score < self.full_speed_score && self.full_speed_score <= 1.0) {
            return Err(Error::config(format!(
                "need 0 <= stop_score < full_speed_score <= 1, got {} and {}",
                self.stop_score, self.full_speed_score
            )));
        }
        if !(self.v_max > 0.0 && self.fov > 0.0 && self.fov < 360.0) || self.k == 0 {
            return Err(Error::config("v_max, fov and k must be positive"));
        }
        if !(self.angular_gain >= 0.0 && self.angular_gain.is_finite()) {
            return Err(Error::config("angular gain must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityCommand {
    /// m/s, in `[0, v_max]`.
    pub linear: f64,
    /// Degrees from the camera axis, positive to the right.
    pub angular_target: f64,
}

/// Score of the central section; the mean of the two middle sections for even `k`.
pub fn center_score(scores: &TraversabilityVector) -> f64 {
    let s = scores.scores();
    let k = s.len();
    if k % 2 == 1 {
        s[k / 2]
    } else {
        0.5 * (s[k / 2 - 1] + s[k / 2])
    }
}

/// `v_max` above `full_speed_score`, zero at or below `stop_score`, linear in between.
pub fn linear_velocity(center: f64, cfg: &NavConfig) -> f64 {
    let s = if center.is_nan() { 0.0 } else { center };
    if s >= cfg.full_speed_score {
        cfg.v_max
    } else if s <= cfg.stop_score {
        0.0
    } else {
        cfg.v_max * (s - cfg.stop_score) / (cfg.full_speed_score - cfg.stop_score)
    }
}

/// Bearing of section `i`'s center in degrees.
pub fn section_bearing(i: usize, k: usize, fov: f64) -> f64 {
    ((i as f64 + 0.5) / k as f64 - 0.5) * fov
}

/// Bearing of the best section. Ties go to the section nearest the center, then the leftmost.
pub fn steering_target(scores: &TraversabilityVector, cfg: &NavConfig) -> f64 {
    let s = scores.scores();
    let k = s.len();
    let off_center = |i: usize| (2 * i + 1).abs_diff(k);
    let best = (0..k)
        .min_by(|&a, &b| {
            s[b].partial_cmp(&s[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(off_center(a).cmp(&off_center(b)))
                .then(a.cmp(&b))
        })
        .expect("k >= 1");
    section_bearing(best, k, cfg.fov)
}

pub fn command(scores: &TraversabilityVector, cfg: &NavConfig) -> VelocityCommand {
    VelocityCommand {
        linear: linear_velocity(center_score(scores), cfg),
        angular_target: steering_target(scores, cfg),
    }
}

/// Axis-aligned obstacle in world metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.x0 <= x && x <= self.x1 && self.y0 <= y && y <= self.y1
    }

    /// Distance along the ray to the first intersection (slab method).
    fn ray_hit(&self, ox: f64, oy: f64, dx: f64, dy: f64) -> Option<f64> {
        let mut t_min = 0.0f64;
        let mut t_max = f64::INFINITY;
        for (o, d, lo, hi) in [(ox, dx, self.x0, self.x1), (oy, dy, self.y0, self.y1)] {
            if d.abs() < 1e-12 {
                if o < lo || o > hi {
                    return None;
                }
            } else {
                let (a, b) = ((lo - o) / d, (hi - o) / d);
                t_min = t_min.max(a.min(b));
                t_max = t_max.min(a.max(b));
            }
        }
        (t_min <= t_max).then_some(t_min)
    }
}

/// Planar robot pose: metres and degrees (counter-clockwise yaw, 0 = +x).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub obstacles: Vec<Rect>,
    /// Visible ground distance; an obstacle at this range or beyond scores 1.
    pub max_range: f64,
    /// Rays cast per section.
    pub rays_per_section: usize,
}

impl World {
    pub fn new(obstacles: Vec<Rect>) -> Self {
        Self {
            obstacles,
            max_range: 5.0,
            rays_per_section: 8,
        }
    }

    pub fn collides(&self, x: f64, y: f64) -> bool {
        self.obstacles.iter().any(|r| r.contains(x, y))
    }

    fn distance(&self, pose: &Pose2, bearing: f64) -> f64 {
        // positive bearing is to the right, i.e. clockwise
        let a = (pose.yaw - bearing).to_radians();
        let (dx, dy) = (a.cos(), a.sin());
        self.obstacles
            .iter()
            .filter_map(|r| r.ray_hit(pose.x, pose.y, dx, dy))
            .fold(self.max_range, f64::min)
    }

    /// Per-section score: nearest obstacle distance over the section's bearing
    /// span, as a fraction of `max_range`.
    pub fn scores(&self, pose: &Pose2, cfg: &NavConfig) -> TraversabilityVector {
        let k = cfg.k;
        let rays = self.rays_per_section.max(1);
        let width = cfg.fov / k as f64;
        let scores = (0..k)
            .map(|i| {
                let left = -cfg.fov / 2.0 + i as f64 * width;
                let d = (0..rays)
                    .map(|r| self.distance(pose, left + (r as f64 + 0.5) / rays as f64 * width))
                    .fold(self.max_range, f64::min);
                d / self.max_range
            })
            .collect::<Vec<_>>();
        clamp_scores(&scores)
    }

    /// Camera-view scene whose analytic ground truth reproduces `scores` up to
    /// pixel rounding: each blocked section gets an obstacle covering the rows
    /// above its cutoff.
    pub fn scene_for(scores: &TraversabilityVector, height: usize, width: usize, style: GroundStyle, seed: u64) -> Result<SceneSpec> {
        let layout = crate::types::SectionLayout::new(width, scores.k())?;
        let mut spec = SceneSpec::empty(height, width, style, seed);
        for (i, band) in layout.bands().enumerate() {
            let rows = crate::eval::cutoff_row(scores.scores()[i], height);
            if rows > 0 {
                spec.obstacles.push(Obstacle {
                    x0: band.start,
                    y0: 0,
                    x1: band.end - 1,
                    y1: rows - 1,
                    color: [0.55, 0.27, 0.07],
                });
            }
        }
        spec.noise_level = 0.02;
        Ok(spec)
    }
}

/// What a policy sees at each step.
pub struct Observation<'a> {
    pub step: usize,
    pub pose: Pose2,
    pub ground_truth: &'a TraversabilityVector,
    pub scene: &'a SceneSpec,
}

pub trait Policy {
    fn scores(&mut self, obs: &Observation<'_>) -> Result<TraversabilityVector>;
}

/// Perception stub returning the exact ray-cast scores.
pub struct OraclePolicy;

impl Policy for OraclePolicy {
    fn scores(&mut self, obs: &Observation<'_>) -> Result<TraversabilityVector> {
        Ok(obs.ground_truth.clone())
    }
}

/// Perception stub returning the ground truth of the rendered camera view,
/// i.e. what a perfect annotator would mark on the image. Scores are quantized
/// to whole pixel rows, so a robot creeping toward a wall sees its center score
/// drop below the stop threshold in finite time instead of only approaching it.
pub struct CameraOraclePolicy;

impl Policy for CameraOraclePolicy {
    fn scores(&mut self, obs: &Observation<'_>) -> Result<TraversabilityVector> {
        synth::ground_truth(obs.scene, obs.ground_truth.k())
    }
}

/// Renders the camera view and runs the network on it.
pub struct ModelPolicy<'m> {
    pub model: &'m TraversabilityNet<f32>,
}

impl Policy for ModelPolicy<'_> {
    fn scores(&mut self, obs: &Observation<'_>) -> Result<TraversabilityVector> {
        let frame = synth::render(obs.scene);
        let raw = self.model.predict_frames(&[&frame])?;
        let row: Vec<f64> = raw.row(0).iter().map(|&v| v as f64).collect();
        Ok(clamp_scores(&row))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub dt: f64,
    pub steps: usize,
    /// End the episode once the commanded linear speed is zero.
    pub stop_on_halt: bool,
    pub image_height: usize,
    pub image_width: usize,
    pub ground_style: GroundStyle,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            steps: 200,
            stop_on_halt: true,
            image_height: 32,
            image_width: 57,
            ground_style: GroundStyle::AsphaltLike,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub step: usize,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub linear: f64,
    pub angular_target: f64,
    pub center_score: f64,
}

/// Unicycle rollout: the command computed at each pose is applied for `dt`.
pub fn simulate(
    policy: &mut dyn Policy,
    world: &World,
    start: Pose2,
    nav: &NavConfig,
    sim: &SimConfig,
) -> Result<Vec<TrajectoryStep>> {
    nav.validate()?;
    if !(sim.dt > 0.0) {
        return Err(Error::config("dt must be positive"));
    }
    let mut pose = start;
    let mut out = Vec::with_capacity(sim.steps);
    for step in 0..sim.steps {
        let gt = world.scores(&pose, nav);
        let scene = World::scene_for(&gt, sim.image_height, sim.image_width, sim.ground_style, synth::derive_seed(sim.seed, step as u64))?;
        let obs = Observation {
            step,
            pose,
            ground_truth: &gt,
            scene: &scene,
        };
        let scores = policy.scores(&obs)?;
        if scores.k() != nav.k {
            return Err(Error::shape(format!("{} sections", nav.k), format!("{} sections", scores.k())));
        }
        let cmd = command(&scores, nav);
        out.push(TrajectoryStep {
            step,
            x: pose.x,
            y: pose.y,
            yaw: pose.yaw,
            linear: cmd.linear,
            angular_target: cmd.angular_target,
            center_score: center_score(&scores),
        });
        if sim.stop_on_halt && cmd.linear == 0.0 {
            break;
        }
        let omega = -nav.angular_gain * cmd.angular_target;
        let heading = pose.yaw.to_radians();
        pose = Pose2 {
            x: pose.x + cmd.linear * heading.cos() * sim.dt,
            y: pose.y + cmd.linear * heading.sin() * sim.dt,
            yaw: crate::types::normalize_yaw(pose.yaw + omega * sim.dt),
        };
    }
    Ok(out)
}

/// Top-down picture of the obstacles (gray) and the path (blue, start in green).
pub fn render_path(world: &World, trajectory: &[TrajectoryStep], px_per_m: f64) -> image::RgbImage {
    let mut xs: Vec<f64> = trajectory.iter().map(|s| s.x).collect();
    let mut ys: Vec<f64> = trajectory.iter().map(|s| s.y).collect();
    for r in &world.obstacles {
        xs.extend([r.x0, r.x1]);
        ys.extend([r.y0, r.y1]);
    }
    let lo = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min) - 0.5;
    let hi = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 0.5;
    let (x0, x1, y0, y1) = if xs.is_empty() { (-1.0, 1.0, -1.0, 1.0) } else { (lo(&xs), hi(&xs), lo(&ys), hi(&ys)) };
    let w = (((x1 - x0) * px_per_m).ceil() as u32).clamp(1, 4096);
    let h = (((y1 - y0) * px_per_m).ceil() as u32).clamp(1, 4096);
    let to_px = |x: f64, y: f64| -> (u32, u32) {
        let c = ((x - x0) * px_per_m).clamp(0.0, (w - 1) as f64) as u32;
        let r = ((y1 - y) * px_per_m).clamp(0.0, (h - 1) as f64) as u32;
        (c, r)
    };
    let mut img = image::RgbImage::from_pixel(w, h, image::Rgb([255, 255, 255]));
    for (c, r, p) in img.enumerate_pixels_mut() {
        let x = x0 + (c as f64 + 0.5) / px_per_m;
        let y = y1 - (r as f64 + 0.5) / px_per_m;
        if world.collides(x, y) {
            *p = image::Rgb([120, 120, 120]);
        }
    }
    for s in trajectory {
        let (c, r) = to_px(s.x, s.y);
        img.put_pixel(c, r, image::Rgb([0, 0, 255]));
    }
    if let Some(s) = trajectory.first() {
        let (c, r) = to_px(s.x, s.y);
        img.put_pixel(c, r, image::Rgb([0, 200, 0]));
    }
    img
}
