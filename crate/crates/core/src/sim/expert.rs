use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::car::{speed_command, CarState, Command, SimConfig, DELTA_MAX};
use super::track::{FrameQuery, TrackGeometry};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriveMode {
    /// Follow the centerline.
    Normative,
    /// Oscillate from one edge of the track to the other.
    Swerved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpertConfig {
    pub mode: DriveMode,
    pub lookahead_base: f64,
    /// Seconds of travel added to the lookahead.
    pub lookahead_speed_gain: f64,
    /// Wavelength of the swerve in meters of track.
    pub swerve_period: f64,
    /// Distance kept from the edge at the swerve peaks.
    pub swerve_margin: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            mode: DriveMode::Normative,
            lookahead_base: 4.0,
            lookahead_speed_gain: 0.5,
            swerve_period: 30.0,
            swerve_margin: 0.4,
        }
    }
}

impl ExpertConfig {
    pub fn swerved() -> Self {
        Self {
            mode: DriveMode::Swerved,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lookahead_base > 0.0) {
            return Err(Error::invalid("expert.lookahead_base must be positive"));
        }
        // Narrowest legal gate is 3 m.
        if !(self.swerve_margin >= 0.0 && self.swerve_margin < 1.5) {
            return Err(Error::invalid("expert.swerve_margin must be in [0, 1.5) m"));
        }
        if !(self.swerve_period > 0.0) {
            return Err(Error::invalid("expert.swerve_period must be positive"));
        }
        Ok(())
    }

    /// Lateral target offset at arc length `s` for a track of `width`.
    pub fn target_offset(&self, s: f64, width: f64) -> f64 {
        match self.mode {
            DriveMode::Normative => 0.0,
            DriveMode::Swerved => (width / 2.0 - self.swerve_margin) * (TAU * s / self.swerve_period).sin(),
        }
    }
}

/// Pure-pursuit driver toward a lookahead point on (or, when swerving,
/// beside) the centerline. Speed tracks [`throttle_policy`].
pub fn expert_steer(geo: &TrackGeometry, state: &CarState, cfg: &ExpertConfig, sim: &SimConfig) -> Result<Command> {
    let frame = match geo.frame(state.position) {
        FrameQuery::OnWorld(f) => f,
        FrameQuery::OffWorld { distance } => return Err(Error::OffWorld { distance }),
    };
    if frame.lateral.abs() >= frame.width / 2.0 {
        return Err(Error::OffTrack {
            lateral: frame.lateral,
            half_width: frame.width / 2.0,
        });
    }
    let lookahead = cfg.lookahead_base + cfg.lookahead_speed_gain * state.speed;
    let s_target = frame.station + lookahead;
    let (center, heading, width) = geo.at_station(s_target);
    let normal = crate::geom::Point2::from_angle(heading).perp();
    let target = center + normal * cfg.target_offset(s_target, width);

    let to_target = target - state.position;
    let forward = state.forward();
    let alpha = forward.cross(to_target).atan2(forward.dot(to_target));
    let dist = to_target.norm().max(1e-6);
    let delta = (2.0 * sim.wheelbase * alpha.sin() / dist).atan();
    let y = (0.5 + delta / (2.0 * DELTA_MAX)).clamp(0.0, 1.0);

    Ok(speed_command(y, state.speed, sim))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Point2;
    use crate::sim::{generate_track, step, TrackStyle};

    #[test]
    fn centered_on_straight_is_neutral() {
        let t = generate_track(3, TrackStyle::Straight, 200.0, [3.0, 5.0]).unwrap();
        let geo = TrackGeometry::new(&t);
        // Lead-in is a straight along +x.
        let s = CarState::new(Point2::new(2.0, 0.0), 0.0).with_speed(3.0);
        let cmd = expert_steer(&geo, &s, &ExpertConfig::default(), &SimConfig::default()).unwrap();
        assert!((cmd.y - 0.5).abs() < 0.02, "y = {}", cmd.y);
    }

    #[test]
    fn off_track_state_is_an_error() {
        let t = generate_track(3, TrackStyle::Straight, 200.0, [3.0, 5.0]).unwrap();
        let geo = TrackGeometry::new(&t);
        let s = CarState::new(Point2::new(5.0, 2.6), 0.0);
        assert!(matches!(
            expert_steer(&geo, &s, &ExpertConfig::default(), &SimConfig::default()),
            Err(Error::OffTrack { .. })
        ));
    }

    #[test]
    fn steers_back_toward_center() {
        let t = generate_track(3, TrackStyle::Straight, 200.0, [3.0, 5.0]).unwrap();
        let geo = TrackGeometry::new(&t);
        let left = CarState::new(Point2::new(2.0, 1.0), 0.0).with_speed(3.0);
        let cmd = expert_steer(&geo, &left, &ExpertConfig::default(), &SimConfig::default()).unwrap();
        assert!(cmd.y < 0.5);
        let mut s = left;
        let sim = SimConfig::default();
        for _ in 0..300 {
            let c = expert_steer(&geo, &s, &ExpertConfig::default(), &sim).unwrap();
            s = step(&s, c, &sim);
        }
        assert!(geo.frame(s.position).frame().unwrap().lateral.abs() < 0.1);
    }
}
