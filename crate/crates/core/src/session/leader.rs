//! Leader (expert) side: scripted scan trajectories and the velocity
//! estimate fed to the damper.

use std::f64::consts::PI;

use crate::geometry::EllipsoidModel;
use crate::pose::{Pose, Vec3};

use super::follower::rotation_deg;

/// A timed sequence of poses, interpolated with Catmull-Rom splines for
/// position and slerp for orientation.
#[derive(Debug, Clone)]
pub struct WaypointTrajectory {
    waypoints: Vec<(f64, Pose)>,
}

impl WaypointTrajectory {
    /// `waypoints` must be sorted by time and non-empty.
    pub fn new(waypoints: Vec<(f64, Pose)>) -> Self {
        assert!(
            !waypoints.is_empty(),
            "trajectory needs at least one waypoint"
        );
        debug_assert!(waypoints.windows(2).all(|w| w[0].0 < w[1].0));
        Self { waypoints }
    }

    pub fn duration_s(&self) -> f64 {
        self.waypoints.last().unwrap().0 - self.waypoints[0].0
    }

    pub fn sample(&self, t: f64) -> Pose {
        let w = &self.waypoints;
        if t <= w[0].0 {
            return w[0].1;
        }
        if t >= w[w.len() - 1].0 {
            return w[w.len() - 1].1;
        }
        let i = w.partition_point(|(tw, _)| *tw <= t) - 1;
        let (t1, p1) = w[i];
        let (t2, p2) = w[i + 1];
        let p0 = if i > 0 { w[i - 1].1 } else { p1 };
        let p3 = if i + 2 < w.len() { w[i + 2].1 } else { p2 };
        let s = (t - t1) / (t2 - t1);
        let position = catmull_rom(&p0.position, &p1.position, &p2.position, &p3.position, s);
        let mut orientation = p1.orientation.slerp(&p2.orientation, smoothstep(s));
        // slerp drifts off the unit sphere by a few ulps.
        orientation.renormalize();
        Pose {
            position,
            orientation,
        }
    }
}

fn smoothstep(s: f64) -> f64 {
    s * s * (3.0 - 2.0 * s)
}

fn catmull_rom(p0: &Vec3, p1: &Vec3, p2: &Vec3, p3: &Vec3, s: f64) -> Vec3 {
    let s2 = s * s;
    let s3 = s2 * s;
    (p1 * 2.0
        + (p2 - p0) * s
        + (p0 * 2.0 - p1 * 5.0 + p2 * 4.0 - p3) * s2
        + (-p0 + p1 * 3.0 - p2 * 3.0 + p3) * s3)
        * 0.5
}

/// How far the leader pushes the virtual transducer into the proxy while
/// scanning, meters.
pub const SCAN_PRESS_DEPTH_M: f64 = 0.006;

/// Pose the leader rests at before scanning: above the xiphoid landmark.
pub fn home_pose(model: Option<&EllipsoidModel>) -> Pose {
    match model {
        Some(m) => Pose::from_position(m.center + Vec3::new(0.0, m.semi_axes.b + 0.05, 0.0)),
        None => Pose::from_position(Vec3::new(0.0, 0.3, 0.0)),
    }
}

/// A smooth abdominal sweep over the fitted ellipsoid: transverse sweeps
/// across most of the lateral extent, a slower longitudinal drift and
/// rocking of the probe, with waypoints every 0.5 s.
pub fn default_scan(model: &EllipsoidModel, duration_s: f64) -> WaypointTrajectory {
    let a = model.semi_axes.a;
    let c0 = model.center;
    let start = home_pose(Some(model));
    let approach_s = 2.0;
    let step = 0.5;
    let n = (duration_s / step).ceil().max(1.0) as usize;
    let mut waypoints = Vec::with_capacity(n + 2);
    waypoints.push((0.0, start));
    for k in 1..=n + 1 {
        let t = k as f64 * step;
        let ts = (t - approach_s).max(0.0);
        let z = c0.z + 0.55 * a * (2.0 * PI * ts / 9.0).sin();
        let x = c0.x + 0.06 + 0.05 * (2.0 * PI * ts / 23.0).sin();
        let depth = SCAN_PRESS_DEPTH_M * (1.0 + 0.3 * (2.0 * PI * ts / 5.0).sin());
        let y = model
            .surface_height(x, z)
            .unwrap_or(c0.y + model.semi_axes.b)
            - depth;
        let rock = rotation_deg(Vec3::x(), 12.0 * (2.0 * PI * ts / 6.5).sin())
            * rotation_deg(Vec3::z(), 8.0 * (2.0 * PI * ts / 11.0).sin());
        let pose = Pose::new(Vec3::new(x, y, z), rock);
        if t < approach_s {
            // Blend from the home pose onto the scan path.
            let s = t / approach_s;
            let mut q = start.orientation.slerp(&pose.orientation, s);
            q.renormalize();
            let blended = Pose::new(start.position.lerp(&pose.position, s), q);
            waypoints.push((t, blended));
        } else {
            waypoints.push((t, pose));
        }
    }
    WaypointTrajectory::new(waypoints)
}

/// First-difference velocity smoothed by a single-pole low-pass filter.
#[derive(Debug, Clone)]
pub struct VelocityFilter {
    alpha: f64,
    dt_s: f64,
    last: Option<Vec3>,
    value: Vec3,
}

impl VelocityFilter {
    pub fn new(cutoff_hz: f64, dt_s: f64) -> Self {
        let rc = 1.0 / (2.0 * PI * cutoff_hz);
        Self {
            alpha: dt_s / (rc + dt_s),
            dt_s,
            last: None,
            value: Vec3::zeros(),
        }
    }

    pub fn reset(&mut self) {
        self.last = None;
        self.value = Vec3::zeros();
    }

    pub fn update(&mut self, position: &Vec3) -> Vec3 {
        if let Some(last) = self.last {
            let raw = (position - last) / self.dt_s;
            self.value += (raw - self.value) * self.alpha;
        }
        self.last = Some(*position);
        self.value
    }

    pub fn value(&self) -> Vec3 {
        self.value
    }
}
