//! Deterministic 2D world: tracks, the car model and scripted drivers.

mod car;
mod expert;
mod track;

pub use car::{speed_command, step, throttle_policy, CarState, Command, SimConfig, DELTA_MAX};
pub use expert::{expert_steer, DriveMode, ExpertConfig};
pub use track::{
    generate_circuit, generate_track, straight_line, track_frame, turn_counts, FrameQuery, Gate, TrackFrame,
    TrackGeometry, TrackSpec, TrackStyle, CONE_SPACING, STATION_SPACING,
};
