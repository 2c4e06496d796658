//! Command decoding and waypoint tracking.
//!
//! A mid-level command becomes a target speed and a curvature, which are
//! expanded into five ego-frame waypoints; a PID loop and pure pursuit then
//! turn the waypoints into pedal and steering commands.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::hierarchy::{
    ControlSignal, EgoPoint, Instruction, MidLevelCommand, MotionClause, SpeedClause, Waypoints, WAYPOINT_COUNT,
};
use crate::planner::TelemetryFrame;
use crate::world::{EgoState, VehicleParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    /// Travel time between consecutive waypoints.
    pub waypoint_dt_s: f64,
    pub slight_curvature: f64,
    pub sharp_curvature: f64,
    pub slow_factor: f64,
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub integral_clamp: f64,
    pub min_lookahead_m: f64,
    pub lookahead_s: f64,
    pub lookahead_gain: f64,
    /// Largest lateral shift toward the centerline blended into a plan.
    pub centering_max_m: f64,
    /// Heading error at which centering fades out entirely.
    pub centering_fade_rad: f64,
    pub max_arc_turn_rad: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            waypoint_dt_s: 0.5,
            slight_curvature: 0.08,
            sharp_curvature: 0.25,
            slow_factor: 0.6,
            kp: 0.8,
            ki: 0.05,
            kd: 0.1,
            integral_clamp: 2.0,
            min_lookahead_m: 4.0,
            lookahead_s: 1.0,
            lookahead_gain: 1.2,
            centering_max_m: 0.5,
            centering_fade_rad: 0.35,
            max_arc_turn_rad: FRAC_PI_2,
        }
    }
}

/// Longitudinal PID memory; zero at episode start.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControllerState {
    pub integral_error: f64,
    pub prev_error: f64,
}

fn target_speed(frame: &TelemetryFrame, cmd: &MidLevelCommand, cfg: &ControllerConfig) -> f64 {
    if cmd.motion == MotionClause::Brake {
        return 0.0;
    }
    let target = frame.target_speed_mps;
    match cmd.speed {
        Some(SpeedClause::RemainStopped) => 0.0,
        Some(SpeedClause::SlowDown | SpeedClause::AboveTarget) => cfg.slow_factor * target,
        Some(SpeedClause::MaintainSpeed) => frame.speed_mps,
        Some(
            SpeedClause::StartAccelerating | SpeedClause::SignificantlyBelowTarget | SpeedClause::SlightlyBelowTarget,
        )
        | None => target,
    }
}

fn curvature(motion: MotionClause, cfg: &ControllerConfig) -> f64 {
    match motion {
        MotionClause::SteerLeftSharp | MotionClause::SteerRightSharp => motion.direction() * cfg.sharp_curvature,
        MotionClause::SteerLeftSlight | MotionClause::SteerRightSlight => motion.direction() * cfg.slight_curvature,
        MotionClause::SteerStraight | MotionClause::Brake => 0.0,
    }
}

/// Point at arclength `s` on an arc of signed curvature `k` (right positive)
/// that stops turning once the heading has changed by `budget`.
fn arc_point(s: f64, k: f64, budget: f64) -> EgoPoint {
    if k == 0.0 {
        return EgoPoint::new(0.0, s);
    }
    let dir = k.signum();
    let k = k.abs();
    let s_turn = (budget / k).min(s);
    let phi = k * s_turn;
    let lateral = dir * (1.0 - phi.cos()) / k;
    let longitudinal = phi.sin() / k;
    let rest = s - s_turn;
    EgoPoint::new(lateral + dir * rest * phi.sin(), longitudinal + rest * phi.cos())
}

/// Expands a command into five ego-frame waypoints.
pub fn command_to_waypoints_with(
    frame: &TelemetryFrame,
    _instruction: &Instruction,
    cmd: &MidLevelCommand,
    cfg: &ControllerConfig,
) -> Waypoints {
    let v = target_speed(frame, cmd, cfg);
    if v <= 0.0 {
        return Waypoints::stopped();
    }
    let k = curvature(cmd.motion, cfg);
    // Turn only as far as the route ahead asks for, and never away from it.
    let bearing_right = -frame.preview_bearing_rad;
    let budget = if k != 0.0 && bearing_right.signum() == k.signum() {
        bearing_right.abs().min(cfg.max_arc_turn_rad)
    } else {
        0.0
    };
    let fade = (1.0 - frame.heading_error_rad.abs() / cfg.centering_fade_rad).max(0.0);
    let shift = (-frame.lateral_offset_m).clamp(-cfg.centering_max_m, cfg.centering_max_m) * fade;
    let spacing = v * cfg.waypoint_dt_s;
    let points = std::array::from_fn(|i| {
        let p = arc_point(spacing * (i + 1) as f64, k, budget);
        EgoPoint::new(p.lateral + shift * (i + 1) as f64 / WAYPOINT_COUNT as f64, p.longitudinal)
    });
    Waypoints::new(points).expect("arc expansion marches forward")
}

pub fn command_to_waypoints(frame: &TelemetryFrame, instruction: &Instruction, cmd: &MidLevelCommand) -> Waypoints {
    command_to_waypoints_with(frame, instruction, cmd, &ControllerConfig::default())
}

/// PID speed control plus pure-pursuit steering on the given waypoints.
pub fn track_waypoints_with(
    ego: &EgoState,
    wp: &Waypoints,
    state: ControllerState,
    dt: f64,
    cfg: &ControllerConfig,
    vehicle: &VehicleParams,
) -> (ControlSignal, ControllerState) {
    assert!(dt > 0.0, "dt must be positive");
    let pts = wp.points();
    let desired = pts[0].distance(pts[1]) / cfg.waypoint_dt_s;
    let error = desired - ego.speed;
    let integral = (state.integral_error + error * dt).clamp(-cfg.integral_clamp, cfg.integral_clamp);
    let derivative = (error - state.prev_error) / dt;
    let u = cfg.kp * error + cfg.ki * integral + cfg.kd * derivative;
    let (throttle, brake) = if u >= 0.0 { (u.min(1.0), 0.0) } else { (0.0, (-u).min(1.0)) };

    let lookahead = cfg.min_lookahead_m.max(cfg.lookahead_gain * ego.speed * cfg.lookahead_s);
    let target = pts.iter().find(|p| p.norm() >= lookahead).unwrap_or(&pts[WAYPOINT_COUNT - 1]);
    let steer = if target.norm() < 1e-9 {
        0.0
    } else {
        let alpha = target.lateral.atan2(target.longitudinal);
        let angle = (2.0 * ego.wheelbase * alpha.sin()).atan2(lookahead);
        (angle / vehicle.max_steer_angle).clamp(-1.0, 1.0)
    };
    let control = ControlSignal::try_new(throttle, steer, brake).expect("pedals are exclusive by construction");
    (control, ControllerState { integral_error: integral, prev_error: error })
}

pub fn track_waypoints(
    ego: &EgoState,
    wp: &Waypoints,
    state: ControllerState,
    dt: f64,
) -> (ControlSignal, ControllerState) {
    track_waypoints_with(ego, wp, state, dt, &ControllerConfig::default(), &VehicleParams::default())
}

/// Mean absolute difference over the ten waypoint coordinates.
pub fn waypoint_l1_error(pred: &Waypoints, truth: &Waypoints) -> f64 {
    let sum: f64 = pred
        .points()
        .iter()
        .zip(truth.points())
        .map(|(p, t)| (p.lateral - t.lateral).abs() + (p.longitudinal - t.longitudinal).abs())
        .sum();
    sum / (2 * WAYPOINT_COUNT) as f64
}

/// Anything that turns a command into waypoints and waypoints into controls.
pub trait Controller: Send {
    fn name(&self) -> &str;
    fn reset(&mut self);
    fn waypoints(&mut self, frame: &TelemetryFrame, instruction: &Instruction, cmd: &MidLevelCommand) -> Waypoints;
    fn control(&mut self, ego: &EgoState, wp: &Waypoints, dt: f64) -> ControlSignal;
}

#[derive(Debug, Clone, Default)]
pub struct ReferenceController {
    pub config: ControllerConfig,
    pub vehicle: VehicleParams,
    pub state: ControllerState,
}

impl Controller for ReferenceController {
    fn name(&self) -> &str {
        "reference"
    }

    fn reset(&mut self) {
        self.state = ControllerState::default();
    }

    fn waypoints(&mut self, frame: &TelemetryFrame, instruction: &Instruction, cmd: &MidLevelCommand) -> Waypoints {
        command_to_waypoints_with(frame, instruction, cmd, &self.config)
    }

    fn control(&mut self, ego: &EgoState, wp: &Waypoints, dt: f64) -> ControlSignal {
        let (control, state) = track_waypoints_with(ego, wp, self.state, dt, &self.config, &self.vehicle);
        self.state = state;
        control
    }
}

/// Plays back recorded waypoints one per call, then holds the last one.
#[derive(Debug, Clone)]
pub struct ReplayController {
    recorded: Vec<Waypoints>,
    cursor: usize,
    tracker: ReferenceController,
}

impl ReplayController {
    pub fn new(recorded: Vec<Waypoints>) -> Self {
        Self { recorded, cursor: 0, tracker: ReferenceController::default() }
    }

    /// Mean L1 error of `predicted` against the recording, aligned by index.
    pub fn l1_against(&self, predicted: &[Waypoints]) -> Option<f64> {
        let n = predicted.len().min(self.recorded.len());
        if n == 0 {
            return None;
        }
        let total: f64 = predicted.iter().zip(&self.recorded).map(|(p, t)| waypoint_l1_error(p, t)).sum();
        Some(total / n as f64)
    }
}

impl Controller for ReplayController {
    fn name(&self) -> &str {
        "replay"
    }

    fn reset(&mut self) {
        self.cursor = 0;
        self.tracker.reset();
    }

    fn waypoints(&mut self, _: &TelemetryFrame, _: &Instruction, _: &MidLevelCommand) -> Waypoints {
        let wp = self.recorded.get(self.cursor).or(self.recorded.last()).copied().unwrap_or_else(Waypoints::stopped);
        self.cursor += 1;
        wp
    }

    fn control(&mut self, ego: &EgoState, wp: &Waypoints, dt: f64) -> ControlSignal {
        self.tracker.control(ego, wp, dt)
    }
}

pub const CONTROLLER_NAMES: [&str; 1] = ["reference"];

pub fn controller_by_name(name: &str) -> Option<Box<dyn Controller>> {
    match name {
        "reference" => Some(Box::new(ReferenceController::default())),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec2;
    use proptest::prelude::*;

    fn follow() -> Instruction {
        Instruction::short("Follow the road.").unwrap()
    }

    fn frame(speed: f64) -> TelemetryFrame {
        TelemetryFrame { speed_mps: speed, target_speed_mps: 6.0, ..Default::default() }
    }

    #[test]
    fn brake_waypoints_are_at_rest() {
        let wp = command_to_waypoints(&frame(6.0), &follow(), &MidLevelCommand::motion_only(MotionClause::Brake));
        assert_eq!(wp, Waypoints::stopped());
    }

    #[test]
    fn straight_maintain_speed_spacing() {
        let cmd = MidLevelCommand::new(None, Some(SpeedClause::MaintainSpeed), MotionClause::SteerStraight);
        let wp = command_to_waypoints(&frame(6.0), &follow(), &cmd);
        for (i, p) in wp.points().iter().enumerate() {
            assert_eq!(p.lateral, 0.0);
            assert!((p.longitudinal - 3.0 * (i + 1) as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn slight_left_moves_left() {
        let f = TelemetryFrame { preview_bearing_rad: 0.5, ..frame(6.0) };
        let wp = command_to_waypoints(&f, &follow(), &MidLevelCommand::motion_only(MotionClause::SteerLeftSlight));
        let lat: Vec<f64> = wp.points().iter().map(|p| p.lateral).collect();
        assert!(lat.windows(2).all(|w| w[1] < w[0]));
        assert!(lat[0] < 0.0);
    }

    #[test]
    fn stop_target_brakes() {
        let ego = EgoState::new(Vec2::default(), 0.0, 5.0);
        let (c, _) = track_waypoints(&ego, &Waypoints::stopped(), ControllerState::default(), 0.1);
        assert!(c.brake() > 0.0);
        assert_eq!(c.throttle(), 0.0);
    }

    #[test]
    fn left_waypoints_steer_left() {
        let ego = EgoState::new(Vec2::default(), 0.0, 5.0);
        let pts = std::array::from_fn(|i| EgoPoint::new(-0.5 * (i + 1) as f64, 2.5 * (i + 1) as f64));
        let (c, _) = track_waypoints(&ego, &Waypoints::new(pts).unwrap(), ControllerState::default(), 0.1);
        assert!(c.steer() < 0.0);
    }

    #[test]
    fn degenerate_waypoints_do_not_nan() {
        let ego = EgoState::new(Vec2::default(), 0.0, 0.0);
        let (c, _) = track_waypoints(&ego, &Waypoints::stopped(), ControllerState::default(), 0.1);
        assert_eq!(c.steer(), 0.0);
        assert!(!c.brake().is_nan());
    }

    #[test]
    fn l1_examples() {
        let pts = std::array::from_fn(|i| EgoPoint::new(0.0, i as f64));
        let a = Waypoints::new(pts).unwrap();
        assert_eq!(waypoint_l1_error(&a, &a), 0.0);
        let b = Waypoints::new(pts.map(|p| EgoPoint::new(p.lateral + 1.0, p.longitudinal))).unwrap();
        assert_eq!(waypoint_l1_error(&b, &a), 0.5);
    }

    proptest! {
        #[test]
        fn controls_stay_in_range(
            speed in 0.0..12.0f64,
            lat in prop::array::uniform5(-20.0..20.0f64),
            step in 0.0..5.0f64,
            integral in -2.0..2.0f64,
            prev in -12.0..12.0f64,
        ) {
            let ego = EgoState::new(Vec2::default(), 0.0, speed);
            let pts = std::array::from_fn(|i| EgoPoint::new(lat[i], step * (i + 1) as f64));
            let wp = Waypoints::from_recorded(pts);
            let (c, s) = track_waypoints(&ego, &wp, ControllerState { integral_error: integral, prev_error: prev }, 0.1);
            prop_assert!(c.steer().abs() <= 1.0 && (0.0..=1.0).contains(&c.throttle()) && (0.0..=1.0).contains(&c.brake()));
            prop_assert!(c.throttle() == 0.0 || c.brake() == 0.0);
            prop_assert!(s.integral_error.abs() <= 2.0);
        }

        #[test]
        fn decoded_waypoints_are_valid(
            speed in 0.0..12.0f64,
            target in 0.5..12.0f64,
            offset in -5.0..5.0f64,
            err in -1.5..1.5f64,
            bearing in -3.0..3.0f64,
            idx in 0usize..574,
        ) {
            let cmds = crate::hierarchy::enumerate_valid_commands();
            let cmd = cmds[idx % cmds.len()];
            let f = TelemetryFrame {
                speed_mps: speed,
                target_speed_mps: target,
                lateral_offset_m: offset,
                heading_error_rad: err,
                preview_bearing_rad: bearing,
                ..Default::default()
            };
            let wp = command_to_waypoints(&f, &follow(), &cmd);
            prop_assert!(wp.is_forward_monotone());
        }
    }
}
