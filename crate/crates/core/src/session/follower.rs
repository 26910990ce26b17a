//! Simulated human follower.
//!
//! The follower sees the virtual transducer after the network delay, reacts
//! after a further reaction delay, and closes the gap with a first-order lag.
//! A constant pose offset models a misaligned headset; Gaussian noise models
//! hand tremor and tracking noise.

use std::collections::VecDeque;

use nalgebra::Unit;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::pose::{Pose, Quat, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FollowerParams {
    /// Placeholder value; the human reaction delay was not measured for this
    /// task.
    pub reaction_delay_ms: f64,
    pub time_constant_ms: f64,
    /// Constant position offset in meters. Sampled from the seed when absent.
    pub offset_m: Option<[f64; 3]>,
    /// Constant rotation offset as a rotation vector in degrees. Sampled from
    /// the seed when absent.
    pub offset_rot_deg: Option<[f64; 3]>,
    pub noise_sd_m: f64,
    pub noise_sd_deg: f64,
    pub seed: u64,
}

impl Default for FollowerParams {
    fn default() -> Self {
        Self {
            reaction_delay_ms: 250.0,
            time_constant_ms: 150.0,
            offset_m: None,
            offset_rot_deg: None,
            noise_sd_m: 0.002,
            noise_sd_deg: 1.0,
            seed: 0,
        }
    }
}

/// Range of the sampled offset magnitude, meters.
pub const SAMPLED_OFFSET_RANGE_M: (f64, f64) = (0.005, 0.040);
/// Range of the sampled rotational offset, degrees.
pub const SAMPLED_ROT_OFFSET_RANGE_DEG: (f64, f64) = (3.0, 12.0);

impl FollowerParams {
    /// An exact tracker: no delay, lag, offset or noise.
    pub fn ideal() -> Self {
        Self {
            reaction_delay_ms: 0.0,
            time_constant_ms: 0.0,
            offset_m: Some([0.0; 3]),
            offset_rot_deg: Some([0.0; 3]),
            noise_sd_m: 0.0,
            noise_sd_deg: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("reaction_delay_ms", self.reaction_delay_ms),
            ("time_constant_ms", self.time_constant_ms),
            ("noise_sd_m", self.noise_sd_m),
            ("noise_sd_deg", self.noise_sd_deg),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("follower.{name} must be finite and >= 0"));
            }
        }
        let finite = |o: &Option<[f64; 3]>| o.is_none_or(|a| a.iter().all(|v| v.is_finite()));
        if !finite(&self.offset_m) || !finite(&self.offset_rot_deg) {
            return Err("follower offsets must be finite".into());
        }
        Ok(())
    }

    /// The constant offset for this session, sampled from the seed for any
    /// component not given explicitly.
    pub fn resolved_offset(&self) -> (Vec3, Quat) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x0FF5_E70F_F5E7);
        let sampled_pos = {
            let dir: [f64; 3] = UnitSphere.sample(&mut rng);
            let (lo, hi) = SAMPLED_OFFSET_RANGE_M;
            Vec3::from(dir) * rng.random_range(lo..hi)
        };
        let sampled_rot = {
            let axis: [f64; 3] = UnitSphere.sample(&mut rng);
            let (lo, hi) = SAMPLED_ROT_OFFSET_RANGE_DEG;
            Vec3::from(axis) * rng.random_range(lo..hi).to_radians()
        };
        let pos = self.offset_m.map(Vec3::from).unwrap_or(sampled_pos);
        let rot = self
            .offset_rot_deg
            .map(|r| Vec3::from(r).map(f64::to_radians))
            .unwrap_or(sampled_rot);
        (pos, Quat::from_scaled_axis(rot))
    }
}

/// Blend factor of a first-order lag with time constant `tau` over `dt`.
pub fn lag_gain(tau_s: f64, dt_s: f64) -> f64 {
    if tau_s <= 0.0 {
        1.0
    } else {
        1.0 - (-dt_s / tau_s).exp()
    }
}

/// One noise-free lag step from `state` toward `target`.
pub fn follower_step(state: &Pose, target: &Pose, time_constant_s: f64, dt_s: f64) -> Pose {
    let g = lag_gain(time_constant_s, dt_s);
    if g >= 1.0 {
        return *target;
    }
    let position = state.position + (target.position - state.position) * g;
    // Shortest-arc slerp; try_slerp fails only for (near) antipodal inputs.
    let mut orientation = state
        .orientation
        .try_slerp(&target.orientation, g, 1e-12)
        .unwrap_or_else(|| state.orientation.nlerp(&target.orientation, g));
    orientation.renormalize();
    Pose {
        position,
        orientation,
    }
}

#[derive(Debug, Clone)]
pub struct FollowerModel {
    params: FollowerParams,
    offset_pos: Vec3,
    offset_rot: Quat,
    rng: ChaCha8Rng,
    pos_noise: Option<Normal<f64>>,
    rot_noise: Option<Normal<f64>>,
    /// Received leader poses keyed by arrival time.
    delay_line: VecDeque<(u64, Pose)>,
    state: Option<Pose>,
}

impl FollowerModel {
    pub fn new(params: FollowerParams) -> Self {
        let (offset_pos, offset_rot) = params.resolved_offset();
        let pos_noise =
            (params.noise_sd_m > 0.0).then(|| Normal::new(0.0, params.noise_sd_m).unwrap());
        let rot_noise = (params.noise_sd_deg > 0.0)
            .then(|| Normal::new(0.0, params.noise_sd_deg.to_radians()).unwrap());
        Self {
            rng: ChaCha8Rng::seed_from_u64(params.seed),
            params,
            offset_pos,
            offset_rot,
            pos_noise,
            rot_noise,
            delay_line: VecDeque::new(),
            state: None,
        }
    }

    pub fn offset(&self) -> (Vec3, Quat) {
        (self.offset_pos, self.offset_rot)
    }

    pub fn params(&self) -> &FollowerParams {
        &self.params
    }

    /// Set the internal (noise-free) pose, e.g. where calibration left the
    /// transducer.
    pub fn reset_to(&mut self, pose: Pose) {
        self.state = Some(pose);
    }

    /// Record a leader pose that arrived at `arrival_us`.
    pub fn observe(&mut self, arrival_us: u64, pose: Pose) {
        self.delay_line.push_back((arrival_us, pose));
    }

    /// Most recent leader pose the follower has had time to react to.
    pub fn delayed_target(&mut self, now_us: u64) -> Option<Pose> {
        let reaction_us = (self.params.reaction_delay_ms * 1000.0).round() as u64;
        let horizon = now_us.checked_sub(reaction_us)?;
        while self.delay_line.len() > 1 && self.delay_line[1].0 <= horizon {
            self.delay_line.pop_front();
        }
        match self.delay_line.front() {
            Some(&(t, pose)) if t <= horizon => Some(pose),
            _ => None,
        }
    }

    /// Advance one tick and return the follower's measured transducer pose.
    pub fn step(&mut self, now_us: u64, dt_s: f64) -> Option<Pose> {
        if let Some(leader) = self.delayed_target(now_us) {
            let target = Pose {
                position: leader.position + self.offset_pos,
                orientation: leader.orientation * self.offset_rot,
            };
            let next = match &self.state {
                Some(s) => follower_step(s, &target, self.params.time_constant_ms / 1000.0, dt_s),
                None => target,
            };
            self.state = Some(next);
        }
        let state = self.state?;
        Some(self.add_noise(state))
    }

    fn add_noise(&mut self, pose: Pose) -> Pose {
        let mut out = pose;
        if let Some(n) = &self.pos_noise {
            let d = Vec3::from_fn(|_, _| n.sample(&mut self.rng));
            out.position += d;
        }
        if let Some(n) = &self.rot_noise {
            let r = Vec3::from_fn(|_, _| n.sample(&mut self.rng));
            out.orientation *= Quat::from_scaled_axis(r);
            out.orientation.renormalize();
        }
        out
    }
}

/// Rotation of `angle_deg` about the unit axis `axis`.
pub fn rotation_deg(axis: Vec3, angle_deg: f64) -> Quat {
    Quat::from_axis_angle(&Unit::new_normalize(axis), angle_deg.to_radians())
}
