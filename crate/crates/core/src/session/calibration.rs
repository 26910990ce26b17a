//! Four-point calibration by pressing.
//!
//! Each landmark is captured once the measured transducer force has stayed
//! above the threshold for the full hold time. The transducer must be
//! released (force back under threshold) before the next step arms, so one
//! long press never fills two steps.

use serde::{Deserialize, Serialize};

use crate::geometry::{fit_ellipsoid_with, CalibrationSet, EllipsoidModel};
use crate::pose::{Pose, Vec3};

use super::SessionError;

/// Landmark order.
pub const STEP_NAMES: [&str; 4] = ["xiphoid", "extreme left", "extreme right", "bed"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationParams {
    pub force_threshold_n: f64,
    pub hold_ms: f64,
    /// Longest time one step may take before the procedure gives up.
    pub step_timeout_ms: f64,
    pub longitudinal_semi_axis_m: f64,
    /// Tip position in the transducer frame.
    pub tip_offset_m: [f64; 3],
}

impl Default for CalibrationParams {
    fn default() -> Self {
        Self {
            force_threshold_n: 5.0,
            hold_ms: 300.0,
            step_timeout_ms: 30_000.0,
            longitudinal_semi_axis_m: crate::geometry::DEFAULT_LONGITUDINAL_SEMI_AXIS,
            tip_offset_m: [0.0; 3],
        }
    }
}

impl CalibrationParams {
    pub fn tip_position(&self, pose: &Pose) -> Vec3 {
        pose.position + pose.orientation * Vec3::from(self.tip_offset_m)
    }
}

/// One force + pose sample as measured on the follower side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceSample {
    pub t_us: u64,
    pub force: Vec3,
    pub pose: Pose,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CalibrationEvent {
    Pending,
    /// Landmark `step` (1-based) recorded at `t_us`.
    Captured {
        step: u8,
        point: Vec3,
        t_us: u64,
    },
    Completed(EllipsoidModel),
}

#[derive(Debug, Clone)]
pub struct CalibrationProcedure {
    params: CalibrationParams,
    points: Vec<Vec3>,
    step_started_us: Option<u64>,
    above_since_us: Option<u64>,
    armed: bool,
    model: Option<EllipsoidModel>,
}

impl CalibrationProcedure {
    pub fn new(params: CalibrationParams) -> Self {
        Self {
            params,
            points: Vec::with_capacity(4),
            step_started_us: None,
            above_since_us: None,
            armed: true,
            model: None,
        }
    }

    /// 1-based step currently being collected; 5 once all points are in.
    pub fn current_step(&self) -> u8 {
        self.points.len() as u8 + 1
    }

    pub fn model(&self) -> Option<&EllipsoidModel> {
        self.model.as_ref()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    /// Start timing the current step (the timeout counts from here).
    pub fn start_step(&mut self, t_us: u64) {
        if self.step_started_us.is_none() {
            self.step_started_us = Some(t_us);
        }
    }

    pub fn feed(&mut self, sample: &ForceSample) -> Result<CalibrationEvent, SessionError> {
        if let Some(m) = self.model {
            return Ok(CalibrationEvent::Completed(m));
        }
        let step = self.current_step();
        let started = *self.step_started_us.get_or_insert(sample.t_us);

        let above = sample.force.norm() > self.params.force_threshold_n;
        if !above {
            self.above_since_us = None;
            self.armed = true;
        } else if self.armed {
            let since = *self.above_since_us.get_or_insert(sample.t_us);
            let hold_us = (self.params.hold_ms * 1000.0).round() as u64;
            if sample.t_us.saturating_sub(since) >= hold_us {
                let point = self.params.tip_position(&sample.pose);
                self.points.push(point);
                self.above_since_us = None;
                self.armed = false;
                self.step_started_us = None;
                if self.points.len() == 4 {
                    let cal = CalibrationSet::from_points([
                        self.points[0],
                        self.points[1],
                        self.points[2],
                        self.points[3],
                    ]);
                    let model = fit_ellipsoid_with(&cal, self.params.longitudinal_semi_axis_m)?;
                    self.model = Some(model);
                    return Ok(CalibrationEvent::Completed(model));
                }
                return Ok(CalibrationEvent::Captured {
                    step,
                    point,
                    t_us: sample.t_us,
                });
            }
        }

        let timeout_us = (self.params.step_timeout_ms * 1000.0).round() as u64;
        if sample.t_us.saturating_sub(started) > timeout_us {
            return Err(SessionError::CalibrationTimeout { step });
        }
        Ok(CalibrationEvent::Pending)
    }
}

/// Run the procedure over a recorded stream of follower samples.
pub fn run_calibration<I>(
    params: &CalibrationParams,
    samples: I,
) -> Result<EllipsoidModel, SessionError>
where
    I: IntoIterator<Item = ForceSample>,
{
    let mut proc = CalibrationProcedure::new(params.clone());
    for s in samples {
        if let CalibrationEvent::Completed(m) = proc.feed(&s)? {
            return Ok(m);
        }
    }
    Err(SessionError::CalibrationIncomplete {
        step: proc.current_step(),
    })
}

/// Scripted follower behaviour during calibration: hover over each landmark,
/// press, hold, release.
#[derive(Debug, Clone)]
pub struct PressScript {
    landmarks: [Vec3; 4],
    peak_force_n: f64,
    hover_ms: f64,
    ramp_ms: f64,
    hold_ms: f64,
    lift_ms: f64,
}

/// Height above a landmark at which the transducer hovers before pressing.
const HOVER_HEIGHT_M: f64 = 0.02;

impl PressScript {
    pub fn new(landmarks: [Vec3; 4]) -> Self {
        Self {
            landmarks,
            peak_force_n: 8.0,
            hover_ms: 500.0,
            ramp_ms: 200.0,
            hold_ms: 600.0,
            lift_ms: 400.0,
        }
    }

    pub fn press_duration_us(&self) -> u64 {
        ((self.hover_ms + 2.0 * self.ramp_ms + self.hold_ms + self.lift_ms) * 1000.0) as u64
    }

    /// Force and pose `elapsed_us` into the press of landmark `index`.
    pub fn sample(&self, index: usize, elapsed_us: u64) -> (Vec3, Pose) {
        let p = self.landmarks[index.min(3)];
        let hover = Pose::from_position(p + Vec3::new(0.0, HOVER_HEIGHT_M, 0.0));
        let on = Pose::from_position(p);
        let t = elapsed_us as f64 / 1000.0;
        let ramp_up_end = self.hover_ms + self.ramp_ms;
        let hold_end = ramp_up_end + self.hold_ms;
        let ramp_down_end = hold_end + self.ramp_ms;
        let down = Vec3::new(0.0, -1.0, 0.0);
        if t < self.hover_ms {
            (Vec3::zeros(), hover)
        } else if t < ramp_up_end {
            let f = self.peak_force_n * (t - self.hover_ms) / self.ramp_ms;
            (down * f, on)
        } else if t < hold_end {
            (down * self.peak_force_n, on)
        } else if t < ramp_down_end {
            let f = self.peak_force_n * (ramp_down_end - t) / self.ramp_ms;
            (down * f, on)
        } else {
            (Vec3::zeros(), hover)
        }
    }

    pub fn landmarks(&self) -> &[Vec3; 4] {
        &self.landmarks
    }
}
