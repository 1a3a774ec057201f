use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::geom::{wrap_angle, Point2};

/// Maximum physical wheel angle, reached at y = 0 (right) and y = 1 (left).
pub const DELTA_MAX: f64 = 25.0 * std::f64::consts::PI / 180.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub wheelbase: f64,
    pub dt: f64,
    pub v_max: f64,
    /// Wheel angle slew limit in rad/s.
    pub steering_rate_limit: f64,
    /// Transport delay between a steering command and its execution.
    pub actuation_delay: f64,
    pub accel_limit: f64,
    pub brake_limit: f64,
    /// Constant deceleration while coasting.
    pub rolling_decel: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            wheelbase: 1.55,
            dt: 1.0 / 30.0,
            v_max: 6.94,
            steering_rate_limit: 1.2,
            actuation_delay: 0.0,
            accel_limit: 2.0,
            brake_limit: 5.0,
            rolling_decel: 0.3,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let positive = [
            ("wheelbase", self.wheelbase),
            ("dt", self.dt),
            ("v_max", self.v_max),
            ("steering_rate_limit", self.steering_rate_limit),
            ("accel_limit", self.accel_limit),
            ("brake_limit", self.brake_limit),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(crate::Error::invalid(format!("sim.{name} must be positive, got {v}")));
            }
        }
        if !(self.actuation_delay >= 0.0) || !(self.rolling_decel >= 0.0) {
            return Err(crate::Error::invalid("sim.actuation_delay and sim.rolling_decel must be >= 0"));
        }
        Ok(())
    }

    /// Whole steps a command waits before it reaches the steering rack.
    pub fn delay_steps(&self) -> usize {
        (self.actuation_delay / self.dt - 1e-9).ceil().max(0.0) as usize
    }
}

/// Driver command. Values outside their ranges are clamped by [`step`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Command {
    /// Normalized steering, 0.5 = straight, above 0.5 = left.
    pub y: f64,
    pub throttle: f64,
    pub brake: f64,
}

impl Command {
    pub const NEUTRAL: Command = Command {
        y: 0.5,
        throttle: 0.0,
        brake: 0.0,
    };

    pub fn clamped(self) -> Self {
        let c = |v: f64, d: f64| if v.is_finite() { v.clamp(0.0, 1.0) } else { d };
        Self {
            y: c(self.y, 0.5),
            throttle: c(self.throttle, 0.0),
            brake: c(self.brake, 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarState {
    /// Rear-axle center.
    pub position: Point2,
    /// Radians counter-clockwise from +x.
    pub heading: f64,
    pub speed: f64,
    pub steering_norm: f64,
    /// Executed wheel angle after delay and slew limiting.
    pub steering_actual: f64,
    pub throttle: f64,
    pub brake: f64,
    pub prev_steering_norm: f64,
    pub sim_time: f64,
    /// Commanded wheel angles still in transit.
    #[serde(default)]
    pub pending: VecDeque<f64>,
}

impl CarState {
    pub fn new(position: Point2, heading: f64) -> Self {
        Self {
            position,
            heading,
            speed: 0.0,
            steering_norm: 0.5,
            steering_actual: 0.0,
            throttle: 0.0,
            brake: 0.0,
            prev_steering_norm: 0.5,
            sim_time: 0.0,
            pending: VecDeque::new(),
        }
    }

    pub fn with_speed(mut self, speed: f64) -> Self {
        self.speed = speed;
        self
    }

    pub fn forward(&self) -> Point2 {
        Point2::from_angle(self.heading)
    }

    pub fn left_normal(&self) -> Point2 {
        self.forward().perp()
    }
}

/// Wheel angle for a normalized steering value.
pub fn steering_angle(y: f64) -> f64 {
    (2.0 * y - 1.0) * DELTA_MAX
}

/// Target speed for a steering command: full speed when straight, half
/// speed at full lock.
pub fn throttle_policy(y: f64, cfg: &SimConfig) -> f64 {
    const BETA: f64 = 0.5;
    cfg.v_max * (1.0 - BETA * (2.0 * y.clamp(0.0, 1.0) - 1.0).abs())
}

/// Steering `y` with throttle and brake that track [`throttle_policy`].
pub fn speed_command(y: f64, speed: f64, cfg: &SimConfig) -> Command {
    let err = throttle_policy(y, cfg) - speed;
    let (throttle, brake) = if err >= 0.0 {
        ((err * 1.5).clamp(0.0, 1.0), 0.0)
    } else if err < -0.3 {
        (0.0, (-err * 0.5).clamp(0.0, 1.0))
    } else {
        (0.0, 0.0)
    };
    Command { y, throttle, brake }
}

/// Advances the kinematic bicycle by one `cfg.dt`.
///
/// Steering passes through a FIFO of `delay_steps` commands and then a slew
/// limiter; the pose integrates the exact circular arc for the executed
/// wheel angle over the mean speed of the step.
pub fn step(state: &CarState, cmd: Command, cfg: &SimConfig) -> CarState {
    let cmd = cmd.clamped();
    let dt = cfg.dt;
    let mut next = state.clone();

    next.pending.push_back(steering_angle(cmd.y));
    let target = if next.pending.len() > cfg.delay_steps() {
        next.pending.pop_front().unwrap_or(state.steering_actual)
    } else {
        state.steering_actual
    };
    let max_move = cfg.steering_rate_limit * dt;
    let delta = (state.steering_actual + (target - state.steering_actual).clamp(-max_move, max_move))
        .clamp(-DELTA_MAX, DELTA_MAX);
    next.steering_actual = delta;

    let coast = if state.speed > 0.0 { cfg.rolling_decel } else { 0.0 };
    let accel = cfg.accel_limit * cmd.throttle - cfg.brake_limit * cmd.brake - coast;
    let v1 = (state.speed + accel * dt).clamp(0.0, cfg.v_max);
    let dist = 0.5 * (state.speed + v1) * dt;

    let curvature = delta.tan() / cfg.wheelbase;
    let dtheta = dist * curvature;
    let h0 = state.heading;
    let h1 = h0 + dtheta;
    let displacement = if dtheta.abs() > 1e-9 {
        let r = 1.0 / curvature;
        Point2::new(r * (h1.sin() - h0.sin()), -r * (h1.cos() - h0.cos()))
    } else {
        Point2::from_angle(h0 + 0.5 * dtheta) * dist
    };
    next.position = state.position + displacement;
    next.heading = wrap_angle(h1);
    next.speed = v1;
    next.prev_steering_norm = state.steering_norm;
    next.steering_norm = cmd.y;
    next.throttle = cmd.throttle;
    next.brake = cmd.brake;
    next.sim_time = state.sim_time + dt;
    next
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cruise() -> SimConfig {
        SimConfig {
            rolling_decel: 0.0,
            ..SimConfig::default()
        }
    }

    #[test]
    fn straight_command_keeps_heading() {
        let cfg = cruise();
        let mut s = CarState::new(Point2::new(0.0, 0.0), 0.3).with_speed(5.0);
        for _ in 0..500 {
            s = step(&s, Command { y: 0.5, throttle: 0.0, brake: 0.0 }, &cfg);
        }
        assert_eq!(s.heading, 0.3);
        assert!((s.speed - 5.0).abs() < 1e-12);
    }

    /// Fits a circle through the settled part of the path and compares its
    /// radius with wheelbase / tan(delta).
    #[test]
    fn constant_lock_traces_the_closed_form_circle() {
        let cfg = cruise();
        let v = 3.0;
        let mut s = CarState::new(Point2::new(0.0, 0.0), 0.0).with_speed(v);
        let full = Command { y: 1.0, throttle: 0.0, brake: 0.0 };
        // Let the slew limiter reach full lock.
        for _ in 0..30 {
            s = step(&s, full, &cfg);
        }
        assert!((s.steering_actual - DELTA_MAX).abs() < 1e-12);
        let expected = cfg.wheelbase / DELTA_MAX.tan();
        let revolution_steps = (std::f64::consts::TAU * expected / (v * cfg.dt)).ceil() as usize;
        let mut pts = Vec::new();
        for _ in 0..revolution_steps {
            s = step(&s, full, &cfg);
            pts.push(s.position);
        }
        let center = pts.iter().fold(Point2::default(), |a, &p| a + p) * (1.0 / pts.len() as f64);
        for p in &pts {
            let r = p.dist(center);
            assert!((r - expected).abs() / expected < 0.01, "radius {r} vs {expected}");
        }
        assert!((expected - 3.324).abs() < 1e-3);
    }

    #[test]
    fn transport_delay_holds_the_wheel() {
        let cfg = SimConfig {
            actuation_delay: 0.2,
            ..SimConfig::default()
        };
        let hold = (0.2 / cfg.dt).ceil() as usize;
        assert_eq!(cfg.delay_steps(), 6);
        let mut s = CarState::new(Point2::new(0.0, 0.0), 0.0).with_speed(2.0);
        let left = Command { y: 1.0, throttle: 0.0, brake: 0.0 };
        for k in 0..hold {
            s = step(&s, left, &cfg);
            assert_eq!(s.steering_actual, 0.0, "step {k}");
        }
        s = step(&s, left, &cfg);
        assert!(s.steering_actual > 0.0);
    }

    #[test]
    fn slew_limit_bounds_wheel_rate() {
        let cfg = SimConfig::default();
        let mut s = CarState::new(Point2::new(0.0, 0.0), 0.0);
        let mut prev = s.steering_actual;
        for k in 0..60 {
            let y = if k % 10 < 5 { 0.0 } else { 1.0 };
            s = step(&s, Command { y, throttle: 0.5, brake: 0.0 }, &cfg);
            assert!((s.steering_actual - prev).abs() <= cfg.steering_rate_limit * cfg.dt + 1e-12);
            assert!(s.steering_actual.abs() <= DELTA_MAX);
            prev = s.steering_actual;
        }
    }

    #[test]
    fn commands_are_clamped_not_rejected() {
        let cfg = SimConfig::default();
        let s = CarState::new(Point2::new(0.0, 0.0), 0.0);
        let s = step(&s, Command { y: 7.0, throttle: -3.0, brake: f64::NAN }, &cfg);
        assert_eq!(s.steering_norm, 1.0);
        assert_eq!(s.throttle, 0.0);
        assert_eq!(s.brake, 0.0);
    }

    #[test]
    fn speed_respects_cap_and_coasts_down() {
        let cfg = SimConfig::default();
        let mut s = CarState::new(Point2::new(0.0, 0.0), 0.0);
        for _ in 0..600 {
            s = step(&s, Command { y: 0.5, throttle: 1.0, brake: 0.0 }, &cfg);
        }
        assert_eq!(s.speed, cfg.v_max);
        for _ in 0..2000 {
            s = step(&s, Command::NEUTRAL, &cfg);
        }
        assert_eq!(s.speed, 0.0);
    }

    #[test]
    fn throttle_policy_is_linear_in_steering() {
        let cfg = SimConfig::default();
        assert!((throttle_policy(0.5, &cfg) - 6.94).abs() < 1e-12);
        assert!((throttle_policy(1.0, &cfg) - 0.5 * 6.94).abs() < 1e-12);
        let ys = [0.5, 0.625, 0.75, 0.875, 1.0];
        let v: Vec<f64> = ys.iter().map(|&y| throttle_policy(y, &cfg)).collect();
        for w in v.windows(3) {
            assert!((w[0] - 2.0 * w[1] + w[2]).abs() < 1e-12);
        }
        assert_eq!(throttle_policy(0.2, &cfg), throttle_policy(0.8, &cfg));
    }
}
