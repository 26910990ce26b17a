//! Core engine for emulated robotic-ultrasound teleoperation: proxy
//! geometry and contact forces, the binary wire format, a seeded network
//! emulator, the session loop and offline analytics.

pub mod analytics;
pub mod geometry;
pub mod netsim;
pub mod pose;
pub mod protocol;
pub mod session;

pub use analytics::{
    aggregate_scans, tracking_report, AnalyticsError, Correlation, MeanSd, QualityScore,
    QualitySummary, ScanAggregate, TrackingReport,
};
pub use geometry::{
    contact_force, fit_ellipsoid, penetration_depth, CalibrationSet, ContactParams, ContactResult,
    EllipsoidModel, GeometryError, SemiAxes,
};
pub use netsim::{ChannelStats, Link, NetsimError, NetworkPreset};
pub use pose::{Pose, Quat, Vec3};
pub use protocol::{decode, encode, ChannelId, Payload, ProtocolError, WireMessage};
pub use session::{Phase, Session, SessionConfig, SessionError, TrajectoryLog, TrajectoryRecord};
