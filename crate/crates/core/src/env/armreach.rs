//! Two-link planar reaching: continuous torque-like control of a rendered
//! arm toward a target dot, with a PD expert driven by closed-form inverse
//! kinematics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::frame::ImageFrame;
use crate::{derive_seed, Error, Result};

use super::FRAME_SIZE;

pub const L1: f32 = 0.5;
pub const L2: f32 = 0.5;
/// Control steps per episode; each applies the action `ACTION_REPEAT` times.
pub const HORIZON: usize = 250;
pub const ACTION_REPEAT: usize = 2;
/// Success radius around the target.
pub const EPSILON: f32 = 0.05 * (L1 + L2);
/// Joint velocity bound (rad per sim step).
const DTHETA_MAX: f32 = 0.2;

const KP: f32 = 4.0;
const KD: f32 = 6.0;

pub type ArmAction = [f32; 2];

#[derive(Debug, Clone)]
pub struct ArmReachState {
    pub theta: [f32; 2],
    pub dtheta: [f32; 2],
    pub target: (f32, f32),
    pub steps: usize,
    pub done: bool,
}

impl ArmReachState {
    /// Fingertip position from forward kinematics.
    pub fn fingertip(&self) -> (f32, f32) {
        let (t1, t2) = (self.theta[0], self.theta[1]);
        (
            L1 * t1.cos() + L2 * (t1 + t2).cos(),
            L1 * t1.sin() + L2 * (t1 + t2).sin(),
        )
    }

    pub fn on_target(&self) -> bool {
        let (fx, fy) = self.fingertip();
        let (dx, dy) = (fx - self.target.0, fy - self.target.1);
        (dx * dx + dy * dy).sqrt() <= EPSILON
    }
}

#[derive(Debug, Clone, Default)]
pub struct ArmReach;

impl ArmReach {
    /// Starts an episode: random joint angles at rest, target sampled in a
    /// comfortably reachable annulus.
    pub fn reset(&self, seed: u64) -> (ArmReachState, ImageFrame) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "armreach-reset"));
        let theta = [
            rng.gen_range(-std::f32::consts::PI..std::f32::consts::PI),
            rng.gen_range(-std::f32::consts::PI..std::f32::consts::PI),
        ];
        let ang = rng.gen_range(0.0..std::f32::consts::TAU);
        let rad = rng.gen_range(0.3..0.9f32);
        let state = ArmReachState {
            theta,
            dtheta: [0.0, 0.0],
            target: (rad * ang.cos(), rad * ang.sin()),
            steps: 0,
            done: false,
        };
        let frame = render_arm(&state);
        (state, frame)
    }

    /// One control step. Actions outside [-1, 1] are clamped. Returns
    /// (frame, reward, done).
    pub fn step(
        &self,
        state: &mut ArmReachState,
        action: ArmAction,
    ) -> Result<(ImageFrame, f32, bool)> {
        if state.done {
            return Err(Error::EpisodeFinished);
        }
        let a = [action[0].clamp(-1.0, 1.0), action[1].clamp(-1.0, 1.0)];
        for _ in 0..ACTION_REPEAT {
            for j in 0..2 {
                state.dtheta[j] =
                    (0.9 * state.dtheta[j] + 0.05 * a[j]).clamp(-DTHETA_MAX, DTHETA_MAX);
                state.theta[j] = wrap_angle(state.theta[j] + state.dtheta[j]);
            }
        }
        state.steps += 1;
        if state.steps >= HORIZON {
            state.done = true;
        }
        let reward = if state.on_target() { 1.0 } else { 0.0 };
        Ok((render_arm(state), reward, state.done))
    }

    /// Ground-truth features: joint angle sin/cos pairs, joint velocities,
    /// target position.
    pub fn ground_truth(&self, state: &ArmReachState) -> Vec<f32> {
        vec![
            state.theta[0].sin(),
            state.theta[0].cos(),
            state.theta[1].sin(),
            state.theta[1].cos(),
            state.dtheta[0],
            state.dtheta[1],
            state.target.0,
            state.target.1,
        ]
    }
}

pub fn wrap_angle(a: f32) -> f32 {
    let mut a = a;
    while a > std::f32::consts::PI {
        a -= std::f32::consts::TAU;
    }
    while a < -std::f32::consts::PI {
        a += std::f32::consts::TAU;
    }
    a
}

/// Closed-form inverse kinematics, elbow-up branch. The target is reachable
/// by state invariant, so this always has a solution.
pub fn ik_elbow_up(target: (f32, f32)) -> [f32; 2] {
    let (x, y) = target;
    let r2 = x * x + y * y;
    let c2 = ((r2 - L1 * L1 - L2 * L2) / (2.0 * L1 * L2)).clamp(-1.0, 1.0);
    let t2 = -c2.acos();
    let t1 = y.atan2(x) - (L2 * t2.sin()).atan2(L1 + L2 * t2.cos());
    [wrap_angle(t1), t2]
}

/// PD controller toward the inverse-kinematics joint target.
pub fn arm_expert(state: &ArmReachState) -> ArmAction {
    let tstar = ik_elbow_up(state.target);
    let mut a = [0.0f32; 2];
    for j in 0..2 {
        let e = wrap_angle(tstar[j] - state.theta[j]);
        a[j] = (KP * e - KD * state.dtheta[j]).clamp(-1.0, 1.0);
    }
    a
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

const WORLD_HALF: f32 = 1.15;

fn to_px(p: (f32, f32)) -> (f32, f32) {
    let s = FRAME_SIZE as f32 / (2.0 * WORLD_HALF);
    ((p.0 + WORLD_HALF) * s, (WORLD_HALF - p.1) * s)
}

fn stamp(img: &mut ImageFrame, px: f32, py: f32, radius: f32, rgb: [u8; 3]) {
    let r = radius.ceil() as isize;
    let (cx, cy) = (px.round() as isize, py.round() as isize);
    for dy in -r..=r {
        for dx in -r..=r {
            let (x, y) = (cx + dx, cy + dy);
            if x < 0 || y < 0 || x as usize >= FRAME_SIZE || y as usize >= FRAME_SIZE {
                continue;
            }
            let fx = x as f32 - px;
            let fy = y as f32 - py;
            if fx * fx + fy * fy <= radius * radius {
                img.set(y as usize, x as usize, rgb);
            }
        }
    }
}

fn draw_segment(img: &mut ImageFrame, a: (f32, f32), b: (f32, f32), width: f32, rgb: [u8; 3]) {
    let (ax, ay) = to_px(a);
    let (bx, by) = to_px(b);
    let len = ((bx - ax).powi(2) + (by - ay).powi(2)).sqrt().max(1.0);
    let n = (len * 2.0) as usize + 1;
    for k in 0..=n {
        let t = k as f32 / n as f32;
        stamp(img, ax + (bx - ax) * t, ay + (by - ay) * t, width, rgb);
    }
}

/// 64×64 render: dark floor, target disc, two-tone arm links, fingertip dot.
pub fn render_arm(state: &ArmReachState) -> ImageFrame {
    let mut img = ImageFrame::new(FRAME_SIZE, FRAME_SIZE);
    img.fill([24, 26, 32]);
    let (tpx, tpy) = to_px(state.target);
    stamp(&mut img, tpx, tpy, 3.5, [240, 60, 60]);
    let elbow = (L1 * state.theta[0].cos(), L1 * state.theta[0].sin());
    let tip = state.fingertip();
    draw_segment(&mut img, (0.0, 0.0), elbow, 1.8, [90, 140, 230]);
    draw_segment(&mut img, elbow, tip, 1.8, [120, 210, 120]);
    let (bpx, bpy) = to_px((0.0, 0.0));
    stamp(&mut img, bpx, bpy, 2.2, [200, 200, 200]);
    let (fpx, fpy) = to_px(tip);
    stamp(&mut img, fpx, fpy, 2.0, [250, 250, 90]);
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_action_from_rest_is_fixed_point() {
        let env = ArmReach;
        let (mut s, _) = env.reset(1);
        let theta0 = s.theta;
        env.step(&mut s, [0.0, 0.0]).unwrap();
        assert_eq!(s.theta, theta0);
        assert_eq!(s.dtheta, [0.0, 0.0]);
    }

    #[test]
    fn ik_reaches_target() {
        for seed in 0..20u64 {
            let (s, _) = ArmReach.reset(seed);
            let t = ik_elbow_up(s.target);
            let probe = ArmReachState {
                theta: t,
                dtheta: [0.0, 0.0],
                target: s.target,
                steps: 0,
                done: false,
            };
            let (fx, fy) = probe.fingertip();
            let d = ((fx - s.target.0).powi(2) + (fy - s.target.1).powi(2)).sqrt();
            assert!(d < 1e-4, "seed {seed}: ik residual {d}");
            assert!(t[1] <= 0.0, "elbow-up branch has non-positive theta2");
        }
    }

    #[test]
    fn expert_at_ik_target_is_zero() {
        let (s, _) = ArmReach.reset(5);
        let probe = ArmReachState {
            theta: ik_elbow_up(s.target),
            dtheta: [0.0, 0.0],
            target: s.target,
            steps: 0,
            done: false,
        };
        assert_eq!(arm_expert(&probe), [0.0, 0.0]);
    }

    #[test]
    fn episode_return_bounded_and_terminates() {
        let env = ArmReach;
        let (mut s, _) = env.reset(9);
        let mut ret = 0.0;
        loop {
            let a = arm_expert(&s);
            let (_, r, done) = env.step(&mut s, a).unwrap();
            ret += r;
            if done {
                break;
            }
        }
        assert_eq!(s.steps, HORIZON);
        assert!(ret <= HORIZON as f32);
        assert!(env.step(&mut s, [0.0, 0.0]).is_err());
    }

    #[test]
    fn expert_return_is_high() {
        let env = ArmReach;
        let mut total = 0.0;
        for seed in 0..10u64 {
            let (mut s, _) = env.reset(seed);
            loop {
                let a = arm_expert(&s);
                let (_, r, done) = env.step(&mut s, a).unwrap();
                total += r;
                if done {
                    break;
                }
            }
        }
        let mean = total / 10.0;
        assert!(mean >= 0.8 * HORIZON as f32, "expert mean return {mean}");
    }

    #[test]
    fn out_of_box_action_clamped() {
        let env = ArmReach;
        let (mut s1, _) = env.reset(2);
        let mut s2 = s1.clone();
        env.step(&mut s1, [5.0, -9.0]).unwrap();
        env.step(&mut s2, [1.0, -1.0]).unwrap();
        assert_eq!(s1.theta, s2.theta);
    }

    #[test]
    fn gt_layout() {
        let (s, _) = ArmReach.reset(3);
        let gt = ArmReach.ground_truth(&s);
        assert_eq!(gt.len(), 8);
        assert!((gt[0] * gt[0] + gt[1] * gt[1] - 1.0).abs() < 1e-5);
        assert_eq!((gt[6], gt[7]), s.target);
    }

    #[test]
    fn deterministic_reset_and_render() {
        let (s1, f1) = ArmReach.reset(77);
        let (s2, f2) = ArmReach.reset(77);
        assert_eq!(s1.theta, s2.theta);
        assert_eq!(s1.target, s2.target);
        assert_eq!(f1, f2);
        let r = s1.target.0.hypot(s1.target.1);
        assert!((0.3..=0.9).contains(&r));
    }
}
