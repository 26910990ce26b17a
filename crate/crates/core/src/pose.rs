//! Shared spatial types.
//!
//! All positions are in meters in the patient frame: +x runs along the
//! patient's longitudinal axis, +y points vertically up from the bed and +z is
//! lateral, oriented so the patient's right side has larger z than the left.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Quat = UnitQuaternion<f64>;

/// Position and orientation of a transducer (real or virtual).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: Quat,
}

impl Pose {
    pub fn new(position: Vec3, orientation: Quat) -> Self {
        Self {
            position,
            orientation,
        }
    }

    pub fn identity() -> Self {
        Self {
            position: Vec3::zeros(),
            orientation: Quat::identity(),
        }
    }

    pub fn from_position(position: Vec3) -> Self {
        Self {
            position,
            orientation: Quat::identity(),
        }
    }

    pub fn is_finite(&self) -> bool {
        is_finite_vec(&self.position) && self.orientation.coords.iter().all(|c| c.is_finite())
    }

    /// The seven numbers `px py pz qw qx qy qz` used on the wire and in logs.
    pub fn to_array(&self) -> [f64; 7] {
        let q = self.orientation.quaternion();
        [
            self.position.x,
            self.position.y,
            self.position.z,
            q.w,
            q.i,
            q.j,
            q.k,
        ]
    }

    /// Inverse of [`Pose::to_array`]. The quaternion is renormalized.
    pub fn from_array(v: [f64; 7]) -> Self {
        Self {
            position: Vec3::new(v[0], v[1], v[2]),
            orientation: Quat::from_quaternion(Quaternion::new(v[3], v[4], v[5], v[6])),
        }
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

pub fn is_finite_vec(v: &Vec3) -> bool {
    v.iter().all(|c| c.is_finite())
}
