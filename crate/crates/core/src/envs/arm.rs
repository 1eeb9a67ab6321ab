use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::DVector;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Environment, Outcome, Task};
use crate::linalg::check_dim;
use crate::{Error, Result};

const GRID: [f64; 4] = [0.0, FRAC_PI_2, PI, 3.0 * FRAC_PI_2];
const FEATURES: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct ArmConfig {
    pub link_lengths: (f64, f64),
    pub dt: f64,
    pub horizon: usize,
    pub bandwidth: f64,
    pub initial_pose: (f64, f64),
    pub width: usize,
    pub height: usize,
    /// World-space frame `[-half_width, half_width] × [-half_height, half_height]`.
    pub half_width: f64,
    pub half_height: f64,
    pub ball_radius: f64,
    pub noise: f64,
    pub texture_seed: u64,
    pub acceleration_cost: f64,
    pub distance_weight: f64,
    pub distance_scale: f64,
    pub hit_radius: f64,
    /// Reward substituted when a rollout diverges.
    pub reward_floor: f64,
}

impl Default for ArmConfig {
    fn default() -> Self {
        Self {
            link_lengths: (7.5, 7.5),
            dt: 0.1,
            horizon: 40,
            bandwidth: FRAC_PI_2,
            initial_pose: (-FRAC_PI_2, 0.0),
            width: 32,
            height: 24,
            half_width: 16.0,
            half_height: 12.0,
            ball_radius: 2.0,
            noise: 30.0,
            texture_seed: 7,
            acceleration_cost: 0.05,
            distance_weight: 10.0,
            distance_scale: 50.0,
            hit_radius: 1.0,
            reward_floor: -1e4,
        }
    }
}

/// 8-bit RGB raster, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f64; 3]>,
}

impl Image {
    /// Binary PPM (P6), values rounded and clamped to `0..=255`.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        for px in &self.pixels {
            out.extend(px.iter().map(|v| v.round().clamp(0.0, 255.0) as u8));
        }
        out
    }

    /// Channel-interleaved row-major vector with values mapped to `[-1, 1]`.
    pub fn normalized(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.pixels.len() * 3,
            self.pixels.iter().flat_map(|px| px.map(|v| v / 127.5 - 1.0)),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmRollout {
    /// Joint angles at steps `0..=horizon`.
    pub trajectory: Vec<[f64; 2]>,
    pub accelerations: Vec<[f64; 2]>,
    pub effector: [f64; 2],
    pub reward: f64,
    pub clamped: bool,
}

/// Planar two-link arm driven by a Gaussian-basis acceleration controller,
/// asked to reach a ball it only sees through a small noisy camera image.
#[derive(Debug, Clone)]
pub struct ArmEnv {
    cfg: ArmConfig,
    background: Vec<[f64; 3]>,
}

impl ArmEnv {
    pub fn new(cfg: ArmConfig) -> Result<Self> {
        if cfg.width == 0 || cfg.height == 0 || cfg.horizon == 0 {
            return Err(Error::invalid("arm", "image size and horizon must be positive"));
        }
        if !(cfg.bandwidth > 0.0 && cfg.dt > 0.0 && cfg.half_width > 0.0 && cfg.half_height > 0.0) {
            return Err(Error::invalid("arm", "bandwidth, dt and frame must be positive"));
        }
        if !(cfg.noise >= 0.0) {
            return Err(Error::invalid("noise", "must be >= 0"));
        }
        let background = texture(cfg.width, cfg.height, cfg.texture_seed);
        Ok(Self { cfg, background })
    }

    /// 16×12 camera, used to keep desk-scale runs fast.
    pub fn small() -> Result<Self> {
        Self::new(ArmConfig {
            width: 16,
            height: 12,
            ..ArmConfig::default()
        })
    }

    pub fn config(&self) -> &ArmConfig {
        &self.cfg
    }

    pub fn reach(&self) -> f64 {
        self.cfg.link_lengths.0 + self.cfg.link_lengths.1
    }

    pub fn forward_kinematics(&self, q: [f64; 2]) -> [f64; 2] {
        let (l1, l2) = self.cfg.link_lengths;
        [
            l1 * q[0].cos() + l2 * (q[0] + q[1]).cos(),
            l1 * q[0].sin() + l2 * (q[0] + q[1]).sin(),
        ]
    }

    pub fn features(&self, q: [f64; 2]) -> [f64; FEATURES] {
        let two_s2 = 2.0 * self.cfg.bandwidth * self.cfg.bandwidth;
        let mut out = [0.0; FEATURES];
        for (i, &c1) in GRID.iter().enumerate() {
            let d1 = wrap(q[0] - c1);
            for (j, &c2) in GRID.iter().enumerate() {
                let d2 = wrap(q[1] - c2);
                out[4 * i + j] = (-(d1 * d1 + d2 * d2) / two_s2).exp();
            }
        }
        out
    }

    fn initial(&self) -> [f64; 2] {
        [self.cfg.initial_pose.0, self.cfg.initial_pose.1]
    }

    pub fn rollout(&self, theta: &DVector<f64>, ball: [f64; 2]) -> Result<ArmRollout> {
        check_dim("theta", 2 * FEATURES, theta.len())?;
        let mut q = self.initial();
        let mut qd = [0.0; 2];
        let mut trajectory = Vec::with_capacity(self.cfg.horizon + 1);
        let mut accelerations = Vec::with_capacity(self.cfg.horizon);
        trajectory.push(q);
        for _ in 0..self.cfg.horizon {
            let phi = self.features(q);
            let mut qdd = [0.0; 2];
            for (k, &p) in phi.iter().enumerate() {
                qdd[0] += theta[k] * p;
                qdd[1] += theta[FEATURES + k] * p;
            }
            accelerations.push(qdd);
            (q, qd) = self.step(q, qd, qdd);
            trajectory.push(q);
        }
        let effector = self.forward_kinematics(q);
        let effort: f64 = accelerations.iter().map(|a| a[0].abs() + a[1].abs()).sum();
        let dist2 = (ball[0] - effector[0]).powi(2) + (ball[1] - effector[1]).powi(2);
        let raw = -self.cfg.acceleration_cost * effort
            + self.cfg.distance_weight * (-dist2 / self.cfg.distance_scale).exp();
        let state_finite = q.iter().chain(qd.iter()).all(|v| v.is_finite());
        let clamped = !raw.is_finite() || !state_finite;
        Ok(ArmRollout {
            trajectory,
            accelerations,
            effector,
            reward: if clamped { self.cfg.reward_floor } else { raw },
            clamped,
        })
    }

    fn step(&self, q: [f64; 2], qd: [f64; 2], qdd: [f64; 2]) -> ([f64; 2], [f64; 2]) {
        let h = self.cfg.dt;
        let qd = [qd[0] + h * qdd[0], qd[1] + h * qdd[1]];
        ([q[0] + h * qd[0], q[1] + h * qd[1]], qd)
    }

    /// Integrates recorded accelerations from the initial pose.
    pub fn replay(&self, accelerations: &[[f64; 2]]) -> Vec<[f64; 2]> {
        let mut q = self.initial();
        let mut qd = [0.0; 2];
        let mut out = vec![q];
        for &a in accelerations {
            (q, qd) = self.step(q, qd, a);
            out.push(q);
        }
        out
    }

    pub fn in_frame(&self, p: [f64; 2]) -> bool {
        p[0].abs() <= self.cfg.half_width && p[1].abs() <= self.cfg.half_height
    }

    /// World point to continuous pixel coordinates `(column, row)`; pixel
    /// `(i, j)` covers `[i, i+1) × [j, j+1)` with row 0 at the top.
    pub fn to_pixel(&self, p: [f64; 2]) -> [f64; 2] {
        let c = &self.cfg;
        [
            (p[0] + c.half_width) / (2.0 * c.half_width) * c.width as f64,
            (c.half_height - p[1]) / (2.0 * c.half_height) * c.height as f64,
        ]
    }

    /// Background plus ball, before noise.
    pub fn render_clean(&self, ball: [f64; 2]) -> Result<Image> {
        if !self.in_frame(ball) {
            return Err(Error::OutOfFrame { x: ball[0], y: ball[1] });
        }
        let c = &self.cfg;
        let centre = self.to_pixel(ball);
        let rx = c.ball_radius / (2.0 * c.half_width) * c.width as f64;
        let ry = c.ball_radius / (2.0 * c.half_height) * c.height as f64;
        let mut pixels = self.background.clone();
        for row in 0..c.height {
            for col in 0..c.width {
                let dx = (col as f64 + 0.5 - centre[0]) / rx;
                let dy = (row as f64 + 0.5 - centre[1]) / ry;
                if dx * dx + dy * dy <= 1.0 {
                    pixels[row * c.width + col] = [0.0, 255.0, 0.0];
                }
            }
        }
        Ok(Image {
            width: c.width,
            height: c.height,
            pixels,
        })
    }

    /// Rendered image with uniform per-channel noise, clamped to `[0, 255]`.
    pub fn render(&self, ball: [f64; 2], rng: &mut dyn RngCore) -> Result<Image> {
        let mut img = self.render_clean(ball)?;
        let a = self.cfg.noise;
        if a > 0.0 {
            for px in &mut img.pixels {
                for v in px.iter_mut() {
                    *v = (*v + rng.random_range(-a..=a)).clamp(0.0, 255.0);
                }
            }
        }
        Ok(img)
    }

    pub fn render_context(&self, ball: [f64; 2], rng: &mut dyn RngCore) -> Result<DVector<f64>> {
        Ok(self.render(ball, rng)?.normalized())
    }

    /// Uniform over the reachable disc intersected with the frame.
    pub fn sample_ball(&self, rng: &mut dyn RngCore) -> [f64; 2] {
        let (w, h, reach) = (self.cfg.half_width, self.cfg.half_height, self.reach());
        loop {
            let p = [rng.random_range(-w..=w), rng.random_range(-h..=h)];
            let r = p[0].hypot(p[1]);
            if r > 0.0 && r <= reach {
                return p;
            }
        }
    }
}

impl Environment for ArmEnv {
    fn name(&self) -> &'static str {
        "arm"
    }

    fn dim_theta(&self) -> usize {
        2 * FEATURES
    }

    fn dim_context(&self) -> usize {
        self.cfg.width * self.cfg.height * 3
    }

    fn sample_task(&self, rng: &mut dyn RngCore) -> Result<Task> {
        let ball = self.sample_ball(rng);
        let context = self.render_context(ball, rng)?;
        Ok(Task {
            context,
            hidden: ball.to_vec(),
        })
    }

    fn outcome(&self, theta: &DVector<f64>, task: &Task) -> Result<Outcome> {
        let ball = ball_of(task)?;
        let r = self.rollout(theta, ball)?;
        let miss = (r.effector[0] - ball[0]).hypot(r.effector[1] - ball[1]);
        Ok(Outcome {
            reward: r.reward,
            clamped: r.clamped,
            hit: Some(!r.clamped && miss <= self.cfg.hit_radius),
        })
    }

    fn reward_upper_bound(&self) -> Option<f64> {
        Some(self.cfg.distance_weight)
    }
}

fn ball_of(task: &Task) -> Result<[f64; 2]> {
    match task.hidden.as_slice() {
        &[x, y] => Ok([x, y]),
        other => Err(Error::invalid(
            "task",
            format!("arm tasks carry a 2-D ball position, got {} values", other.len()),
        )),
    }
}

/// Angle difference mapped to `[-π, π)`.
fn wrap(a: f64) -> f64 {
    (a + PI).rem_euclid(TAU) - PI
}

/// Seeded value-noise texture: random per-pixel colours smoothed by a 3×3 box.
fn texture(width: usize, height: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<[f64; 3]> = (0..width * height)
        .map(|_| [0; 3].map(|_| rng.random_range(40.0..200.0)))
        .collect();
    let mut out = vec![[0.0; 3]; width * height];
    for row in 0..height {
        for col in 0..width {
            let mut acc = [0.0; 3];
            let mut count = 0.0;
            for r in row.saturating_sub(1)..(row + 2).min(height) {
                for c in col.saturating_sub(1)..(col + 2).min(width) {
                    for k in 0..3 {
                        acc[k] += raw[r * width + c][k];
                    }
                    count += 1.0;
                }
            }
            out[row * width + col] = acc.map(|v| (v / count).round());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> ArmEnv {
        ArmEnv::new(ArmConfig::default()).unwrap()
    }

    #[test]
    fn kinematics() {
        let e = env();
        let p = e.forward_kinematics([0.0, 0.0]);
        assert!((p[0] - 15.0).abs() < 1e-12 && p[1].abs() < 1e-12);
        let p = e.forward_kinematics([-FRAC_PI_2, 0.0]);
        assert!(p[0].abs() < 1e-12 && (p[1] + 15.0).abs() < 1e-12);
    }

    #[test]
    fn zero_parameters_stay_put() {
        let e = env();
        let ball = [3.0, 4.0];
        let r = e.rollout(&DVector::zeros(32), ball).unwrap();
        assert!(r.trajectory.iter().all(|q| *q == r.trajectory[0]));
        let start = e.forward_kinematics([-FRAC_PI_2, 0.0]);
        let d2 = (ball[0] - start[0]).powi(2) + (ball[1] - start[1]).powi(2);
        assert!((r.reward - 10.0 * (-d2 / 50.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn doubling_parameters_doubles_first_effort() {
        let e = env();
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        for _ in 0..20 {
            let t = DVector::from_fn(32, |_, _| rng.random_range(-2.0..2.0));
            let a = e.rollout(&t, [0.0, 0.0]).unwrap().accelerations[0];
            let b = e.rollout(&(&t * 2.0), [0.0, 0.0]).unwrap().accelerations[0];
            assert!(b[0].abs() + b[1].abs() >= a[0].abs() + a[1].abs());
        }
    }

    #[test]
    fn replay_reproduces_trajectory() {
        let e = env();
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        let t = DVector::from_fn(32, |_, _| rng.random_range(-1.0..1.0));
        let r = e.rollout(&t, [1.0, 1.0]).unwrap();
        assert_eq!(e.replay(&r.accelerations), r.trajectory);
    }

    #[test]
    fn diverging_rollout_is_clamped() {
        let e = env();
        let t = DVector::from_element(32, f64::MAX);
        let r = e.rollout(&t, [0.0, 0.0]).unwrap();
        assert!(r.clamped);
        assert_eq!(r.reward, e.config().reward_floor);
    }

    #[test]
    fn render_properties() {
        let e = ArmEnv::new(ArmConfig {
            noise: 0.0,
            ..ArmConfig::default()
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        let ball = [5.3, -2.4];
        let a = e.render_context(ball, &mut rng).unwrap();
        let b = e.render_context(ball, &mut rng).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2304);
        assert!(e.render_clean([20.0, 0.0]).is_err());

        let bg = e.background.clone();
        let img = e.render_clean(ball).unwrap();
        let (mut mx, mut my, mut mass) = (0.0, 0.0, 0.0);
        for row in 0..24 {
            for col in 0..32 {
                let w = img.pixels[row * 32 + col][1] - bg[row * 32 + col][1];
                mx += w * (col as f64 + 0.5);
                my += w * (row as f64 + 0.5);
                mass += w;
            }
        }
        let want = e.to_pixel(ball);
        assert!((mx / mass - want[0]).abs() <= 1.0 && (my / mass - want[1]).abs() <= 1.0);

        let noisy = env().render_context(ball, &mut rng).unwrap();
        assert!(noisy.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn ball_sampling() {
        let e = env();
        let mut rng = ChaCha8Rng::seed_from_u64(74);
        let mut quadrants = [0usize; 4];
        for _ in 0..1000 {
            let b = e.sample_ball(&mut rng);
            let r = b[0].hypot(b[1]);
            assert!(r > 0.0 && r <= 15.0);
            assert!(e.in_frame(b));
            quadrants[usize::from(b[0] < 0.0) * 2 + usize::from(b[1] < 0.0)] += 1;
        }
        assert!(quadrants.iter().all(|&q| q > 100), "{quadrants:?}");
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(e.sample_task(&mut r1).unwrap(), e.sample_task(&mut r2).unwrap());
    }

    #[test]
    fn features_wrap_around() {
        let e = env();
        let a = e.features([0.1, -0.2]);
        let b = e.features([0.1 + TAU, -0.2 - TAU]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
