//! Rule-based mid-level planner.
//!
//! Maps one telemetry frame plus the current navigation instruction to a
//! mid-level command. The same rules label recorded logs offline, so online
//! planning and dataset annotation agree string for string.

use serde::{Deserialize, Serialize};

use crate::hierarchy::{Instruction, Maneuver, MidLevelCommand, MotionClause, PerceptionClause, SpeedClause};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum TurnDirection {
    #[default]
    Straight,
    Left,
    Right,
}

/// Structured per-tick observation of the ego and its surroundings.
///
/// Signs: `lateral_offset_m` is positive when the ego sits right of the
/// route; `heading_error_rad` and `preview_bearing_rad` are positive when
/// the route lies to the ego's left.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TelemetryFrame {
    pub speed_mps: f64,
    pub target_speed_mps: f64,
    pub applied_steer: f64,
    pub applied_brake: f64,
    pub junction_distance_m: Option<f64>,
    pub vehicles_ahead: u32,
    pub vehicles_at_junction: u32,
    pub vehicles_in_lane: u32,
    pub bikes_ahead: u32,
    pub pedestrians_ahead: u32,
    pub red_light_ahead: bool,
    pub red_light_distance_m: Option<f64>,
    pub stop_sign_ahead: bool,
    pub stop_sign_distance_m: Option<f64>,
    pub lateral_offset_m: f64,
    pub heading_error_rad: f64,
    pub next_turn: TurnDirection,
    pub next_turn_distance_m: Option<f64>,
    /// Bumper gap to the nearest vehicle or bike in the ego's path.
    pub lead_vehicle_distance_m: Option<f64>,
    pub pedestrian_distance_m: Option<f64>,
    /// Bearing of the route centerline a short distance ahead.
    pub preview_bearing_rad: f64,
}

/// Rule thresholds. Defaults are the reference values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub stopped_speed: f64,
    pub significantly_below: f64,
    pub slightly_below: f64,
    pub above: f64,
    pub slight_steer: f64,
    pub sharp_steer: f64,
    pub pedestrian_brake_m: f64,
    pub lead_brake_gap_m: f64,
    /// Lead vehicles closer than this trigger the slow-down clause.
    pub lead_slow_gap_m: f64,
    pub max_brake: f64,
    pub braking_margin_m: f64,
    /// Distance covered before the next decision frame, in seconds of travel.
    pub reaction_s: f64,
    /// A (nearly) stopped ego holds for red lights within this distance.
    pub red_light_hold_m: f64,
    pub junction_alert_m: f64,
    pub turn_anticipation_m: f64,
    pub turn_anticipation: f64,
    pub heading_gain: f64,
    pub offset_gain: f64,
    pub offset_cap: f64,
    /// Above this heading error turn anticipation is ignored and the
    /// planner only corrects toward the route.
    pub correction_threshold_rad: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            stopped_speed: 0.1,
            significantly_below: 0.5,
            slightly_below: 0.9,
            above: 1.1,
            slight_steer: 0.05,
            sharp_steer: 0.35,
            pedestrian_brake_m: 15.0,
            lead_brake_gap_m: 8.0,
            lead_slow_gap_m: 20.0,
            max_brake: 8.0,
            braking_margin_m: 5.0,
            reaction_s: 1.0,
            red_light_hold_m: 12.0,
            junction_alert_m: 20.0,
            turn_anticipation_m: 10.0,
            turn_anticipation: 0.15,
            heading_gain: 1.0,
            offset_gain: 0.05,
            offset_cap: 0.1,
            correction_threshold_rad: 0.15,
        }
    }
}

impl PlannerConfig {
    pub fn braking_distance(&self, speed: f64) -> f64 {
        speed * speed / (2.0 * self.max_brake) + speed * self.reaction_s + self.braking_margin_m
    }

    fn red_light_stop(&self, frame: &TelemetryFrame) -> bool {
        let Some(d) = frame.red_light_distance_m.filter(|_| frame.red_light_ahead) else {
            return false;
        };
        d <= self.braking_distance(frame.speed_mps) || (frame.speed_mps < 1.0 && d <= self.red_light_hold_m)
    }

    /// Hazards that demand the brake clause.
    pub fn stop_hazard(&self, frame: &TelemetryFrame) -> bool {
        let stop_sign = frame.stop_sign_ahead
            && frame.stop_sign_distance_m.is_some_and(|d| d <= self.braking_distance(frame.speed_mps));
        let pedestrian =
            frame.pedestrians_ahead > 0 && frame.pedestrian_distance_m.is_some_and(|d| d <= self.pedestrian_brake_m);
        let lead = frame.lead_vehicle_distance_m.is_some_and(|g| g < self.lead_brake_gap_m);
        self.red_light_stop(frame) || stop_sign || pedestrian || lead
    }

    fn slow_hazard(&self, frame: &TelemetryFrame) -> bool {
        frame.red_light_ahead
            || frame.stop_sign_ahead
            || frame.pedestrians_ahead > 0
            || frame.lead_vehicle_distance_m.is_some_and(|g| g < self.lead_slow_gap_m)
    }
}

fn counted(n: u32, one: PerceptionClause, many: PerceptionClause) -> Option<PerceptionClause> {
    match n {
        0 => None,
        1 => Some(one),
        _ => Some(many),
    }
}

/// Highest-priority perception clause for a frame.
pub fn perception_clause(frame: &TelemetryFrame, cfg: &PlannerConfig) -> Option<PerceptionClause> {
    use PerceptionClause::*;
    if frame.red_light_ahead {
        return Some(RedLightAhead);
    }
    if frame.stop_sign_ahead {
        return Some(StopSignAhead);
    }
    counted(frame.pedestrians_ahead, PedestrianAhead, MultiplePedestriansAhead)
        .or_else(|| counted(frame.bikes_ahead, BikeAhead, MultipleBikesAhead))
        .or_else(|| counted(frame.vehicles_ahead, VehicleAhead, MultipleVehiclesAhead))
        .or_else(|| counted(frame.vehicles_at_junction, VehicleAtJunction, MultipleVehiclesAtJunction))
        .or_else(|| counted(frame.vehicles_in_lane, VehicleInLane, MultipleVehiclesInLane))
        .or_else(|| frame.junction_distance_m.filter(|d| *d <= cfg.junction_alert_m).map(|_| ApproachingJunction))
}

/// Speed clause from the ratio of current to target speed.
pub fn speed_clause(frame: &TelemetryFrame, cfg: &PlannerConfig) -> Option<SpeedClause> {
    if frame.speed_mps < cfg.stopped_speed {
        return Some(if frame.applied_brake > 0.0 {
            SpeedClause::RemainStopped
        } else {
            SpeedClause::StartAccelerating
        });
    }
    if frame.target_speed_mps <= 0.0 {
        return Some(SpeedClause::AboveTarget);
    }
    let r = frame.speed_mps / frame.target_speed_mps;
    if r >= cfg.significantly_below && cfg.slow_hazard(frame) {
        return Some(SpeedClause::SlowDown);
    }
    Some(if r < cfg.significantly_below {
        SpeedClause::SignificantlyBelowTarget
    } else if r < cfg.slightly_below {
        SpeedClause::SlightlyBelowTarget
    } else if r > cfg.above {
        SpeedClause::AboveTarget
    } else {
        SpeedClause::MaintainSpeed
    })
}

/// Left-positive steering demand in the same units as the steer bands.
pub fn steering_demand(frame: &TelemetryFrame, instruction: &Instruction, cfg: &PlannerConfig) -> f64 {
    let heading = cfg.heading_gain * frame.heading_error_rad;
    let offset = (cfg.offset_gain * frame.lateral_offset_m).clamp(-cfg.offset_cap, cfg.offset_cap);
    let turn = match frame.next_turn_distance_m {
        Some(d) if d <= cfg.turn_anticipation_m => match frame.next_turn {
            TurnDirection::Left => cfg.turn_anticipation,
            TurnDirection::Right => -cfg.turn_anticipation,
            TurnDirection::Straight => 0.0,
        },
        Some(_) => 0.0,
        // Without route guidance fall back on the instruction near junctions.
        None => match (instruction.turn_intent(), frame.junction_distance_m) {
            (Some(Maneuver::Left), Some(d)) if d <= cfg.turn_anticipation_m => cfg.turn_anticipation,
            (Some(Maneuver::Right), Some(d)) if d <= cfg.turn_anticipation_m => -cfg.turn_anticipation,
            _ => 0.0,
        },
    };
    if frame.heading_error_rad.abs() > cfg.correction_threshold_rad {
        heading + offset
    } else {
        heading + offset + turn
    }
}

pub fn motion_clause(frame: &TelemetryFrame, instruction: &Instruction, cfg: &PlannerConfig) -> MotionClause {
    if cfg.stop_hazard(frame) {
        return MotionClause::Brake;
    }
    let demand = steering_demand(frame, instruction, cfg);
    let left = demand > 0.0;
    match demand.abs() {
        m if m < cfg.slight_steer => MotionClause::SteerStraight,
        m if m < cfg.sharp_steer => {
            if left {
                MotionClause::SteerLeftSlight
            } else {
                MotionClause::SteerRightSlight
            }
        }
        _ => {
            if left {
                MotionClause::SteerLeftSharp
            } else {
                MotionClause::SteerRightSharp
            }
        }
    }
}

/// Resolves speed/motion pairs the grammar forbids.
fn reconcile(
    speed: Option<SpeedClause>,
    motion: MotionClause,
    frame: &TelemetryFrame,
    cfg: &PlannerConfig,
) -> Option<SpeedClause> {
    match speed {
        Some(s) if motion == MotionClause::Brake && s.is_accelerating() => {
            Some(if frame.speed_mps < cfg.stopped_speed { SpeedClause::RemainStopped } else { SpeedClause::SlowDown })
        }
        // Nothing holds the ego any more: release the brake.
        Some(SpeedClause::RemainStopped) if motion != MotionClause::Brake => Some(SpeedClause::StartAccelerating),
        other => other,
    }
}

pub fn plan_with(frame: &TelemetryFrame, instruction: &Instruction, cfg: &PlannerConfig) -> MidLevelCommand {
    let perception = perception_clause(frame, cfg);
    let motion = motion_clause(frame, instruction, cfg);
    let speed = reconcile(speed_clause(frame, cfg), motion, frame, cfg);
    let cmd = MidLevelCommand::new(perception, speed, motion);
    debug_assert!(cmd.is_consistent(), "planner produced {cmd}");
    cmd
}

/// The reference rule planner with default thresholds.
pub fn plan(frame: &TelemetryFrame, instruction: &Instruction) -> MidLevelCommand {
    plan_with(frame, instruction, &PlannerConfig::default())
}

/// Anything that maps an observation and instruction to a mid-level command.
pub trait Planner: Send + Sync {
    fn name(&self) -> &str;
    fn plan(&self, frame: &TelemetryFrame, instruction: &Instruction) -> MidLevelCommand;
}

#[derive(Debug, Clone, Default)]
pub struct RulePlanner {
    pub config: PlannerConfig,
}

impl Planner for RulePlanner {
    fn name(&self) -> &str {
        "rule"
    }

    fn plan(&self, frame: &TelemetryFrame, instruction: &Instruction) -> MidLevelCommand {
        plan_with(frame, instruction, &self.config)
    }
}

/// Emits the same command regardless of input; the no-hierarchy baseline.
#[derive(Debug, Clone)]
pub struct FrozenPlanner {
    pub command: MidLevelCommand,
}

impl FrozenPlanner {
    pub fn straight() -> Self {
        Self { command: MidLevelCommand::motion_only(MotionClause::SteerStraight) }
    }
}

impl Planner for FrozenPlanner {
    fn name(&self) -> &str {
        "frozen-straight"
    }

    fn plan(&self, _: &TelemetryFrame, _: &Instruction) -> MidLevelCommand {
        self.command
    }
}

/// Adapts a text-level planner (frame JSON in, command string out).
/// Unparseable replies fall back to braking.
pub struct WirePlanner<F> {
    name: String,
    respond: F,
}

impl<F> WirePlanner<F>
where
    F: Fn(&str, &Instruction) -> String + Send + Sync,
{
    pub fn new(name: impl Into<String>, respond: F) -> Self {
        Self { name: name.into(), respond }
    }
}

impl<F> Planner for WirePlanner<F>
where
    F: Fn(&str, &Instruction) -> String + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn plan(&self, frame: &TelemetryFrame, instruction: &Instruction) -> MidLevelCommand {
        let json = serde_json::to_string(frame).expect("frame serializes");
        MidLevelCommand::parse(&(self.respond)(&json, instruction))
            .unwrap_or(MidLevelCommand::motion_only(MotionClause::Brake))
    }
}

pub const PLANNER_NAMES: [&str; 2] = ["rule", "frozen-straight"];

pub fn planner_by_name(name: &str) -> Option<Box<dyn Planner>> {
    match name {
        "rule" => Some(Box::new(RulePlanner::default())),
        "frozen-straight" => Some(Box::new(FrozenPlanner::straight())),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::enumerate_valid_commands;
    use proptest::prelude::*;

    fn cruising() -> TelemetryFrame {
        TelemetryFrame { speed_mps: 6.0, target_speed_mps: 6.0, ..Default::default() }
    }

    fn follow() -> Instruction {
        Instruction::short("Follow the road.").unwrap()
    }

    #[test]
    fn red_light_brakes() {
        let frame = TelemetryFrame {
            speed_mps: 8.0,
            target_speed_mps: 7.0,
            red_light_ahead: true,
            red_light_distance_m: Some(15.0),
            ..Default::default()
        };
        let cmd = plan(&frame, &follow());
        assert_eq!(cmd.perception, Some(PerceptionClause::RedLightAhead));
        assert_eq!(cmd.motion, MotionClause::Brake);
        let text = cmd.render();
        assert!(text.starts_with("There is a red light ahead. "));
        assert!(text.ends_with("Apply brakes safely."));

        let frame = TelemetryFrame { red_light_distance_m: Some(10.0), speed_mps: 6.0, ..frame };
        assert_eq!(motion_clause(&frame, &follow(), &PlannerConfig::default()), MotionClause::Brake);
    }

    #[test]
    fn approaching_left_turn() {
        let frame = TelemetryFrame {
            speed_mps: 4.8,
            target_speed_mps: 6.0,
            heading_error_rad: 0.01,
            next_turn: TurnDirection::Left,
            next_turn_distance_m: Some(8.0),
            ..Default::default()
        };
        let cmd = plan(&frame, &follow());
        assert_eq!(cmd.speed, Some(SpeedClause::SlightlyBelowTarget));
        assert_eq!(cmd.motion, MotionClause::SteerLeftSlight);
    }

    #[test]
    fn nominal_cruise() {
        let cmd = plan(&cruising(), &follow());
        assert_eq!(cmd, MidLevelCommand::new(None, Some(SpeedClause::MaintainSpeed), MotionClause::SteerStraight));
    }

    #[test]
    fn perception_priority() {
        let cfg = PlannerConfig::default();
        let frame = TelemetryFrame { pedestrians_ahead: 2, vehicles_ahead: 1, ..cruising() };
        assert_eq!(perception_clause(&frame, &cfg), Some(PerceptionClause::MultiplePedestriansAhead));
        let frame = TelemetryFrame { junction_distance_m: Some(12.0), ..cruising() };
        assert_eq!(perception_clause(&frame, &cfg), Some(PerceptionClause::ApproachingJunction));
        assert_eq!(perception_clause(&cruising(), &cfg), None);
    }

    #[test]
    fn speed_bands() {
        let cfg = PlannerConfig::default();
        let at = |speed, brake| TelemetryFrame {
            speed_mps: speed,
            target_speed_mps: 10.0,
            applied_brake: brake,
            ..Default::default()
        };
        assert_eq!(speed_clause(&at(0.0, 0.5), &cfg), Some(SpeedClause::RemainStopped));
        assert_eq!(speed_clause(&at(0.0, 0.0), &cfg), Some(SpeedClause::StartAccelerating));
        assert_eq!(speed_clause(&at(10.0, 0.0), &cfg), Some(SpeedClause::MaintainSpeed));
        assert_eq!(speed_clause(&at(4.5, 0.0), &cfg), Some(SpeedClause::SignificantlyBelowTarget));
        assert_eq!(speed_clause(&at(11.5, 0.0), &cfg), Some(SpeedClause::AboveTarget));
    }

    #[test]
    fn heading_error_to_the_left() {
        let frame = TelemetryFrame { heading_error_rad: 0.2, ..cruising() };
        assert_eq!(motion_clause(&frame, &follow(), &PlannerConfig::default()), MotionClause::SteerLeftSlight);
        assert_eq!(motion_clause(&cruising(), &follow(), &PlannerConfig::default()), MotionClause::SteerStraight);
    }

    #[test]
    fn stopped_at_green_releases() {
        let frame = TelemetryFrame { speed_mps: 0.0, target_speed_mps: 7.0, applied_brake: 1.0, ..Default::default() };
        assert_eq!(plan(&frame, &follow()).speed, Some(SpeedClause::StartAccelerating));
    }

    #[test]
    fn wire_planner_parses_or_brakes() {
        let ok = WirePlanner::new("echo", |_: &str, _: &Instruction| "Keep the steering wheel straight.".to_string());
        assert_eq!(ok.plan(&cruising(), &follow()).motion, MotionClause::SteerStraight);
        let bad = WirePlanner::new("junk", |_: &str, _: &Instruction| "Fly.".to_string());
        assert_eq!(bad.plan(&cruising(), &follow()).motion, MotionClause::Brake);
    }

    fn arb_frame() -> impl Strategy<Value = TelemetryFrame> {
        (
            (0.0..12.0f64, 0.5..10.0f64, 0.0..1.0f64, 0u32..3, 0u32..3, 0u32..3, 0u32..3),
            (any::<bool>(), 0.0..35.0f64, any::<bool>(), 0.0..35.0f64, -3.0..3.0f64, -1.0..1.0f64),
            (
                0usize..3,
                proptest::option::of(0.0..50.0f64),
                proptest::option::of(0.0..40.0f64),
                proptest::option::of(0.0..50.0f64),
            ),
        )
            .prop_map(|(a, b, c)| TelemetryFrame {
                speed_mps: a.0,
                target_speed_mps: a.1,
                applied_brake: if a.2 < 0.5 { 0.0 } else { a.2 },
                vehicles_ahead: a.3,
                pedestrians_ahead: a.4,
                bikes_ahead: a.5,
                vehicles_in_lane: a.6,
                red_light_ahead: b.0,
                red_light_distance_m: b.0.then_some(b.1),
                stop_sign_ahead: b.2,
                stop_sign_distance_m: b.2.then_some(b.3),
                lateral_offset_m: b.4,
                heading_error_rad: b.5,
                next_turn: [TurnDirection::Straight, TurnDirection::Left, TurnDirection::Right][c.0],
                next_turn_distance_m: c.1,
                lead_vehicle_distance_m: c.2,
                pedestrian_distance_m: (a.4 > 0).then_some(c.3.unwrap_or(20.0)),
                junction_distance_m: c.3,
                ..Default::default()
            })
    }

    proptest! {
        #[test]
        fn plans_are_grammatical(frame in arb_frame()) {
            let all = enumerate_valid_commands();
            let cmd = plan(&frame, &follow());
            prop_assert!(all.contains(&cmd));
            prop_assert_eq!(cmd, plan(&frame, &follow()));
        }

        #[test]
        fn red_light_in_braking_distance_brakes(frame in arb_frame()) {
            let cfg = PlannerConfig::default();
            if frame.red_light_ahead && frame.red_light_distance_m.unwrap() <= cfg.braking_distance(frame.speed_mps) {
                prop_assert_eq!(plan(&frame, &follow()).motion, MotionClause::Brake);
            }
        }

        #[test]
        fn large_heading_error_is_corrected(
            err in prop_oneof![0.151..1.2f64, -1.2..-0.151f64],
            offset in -3.0..3.0f64,
            turn in 0usize..3,
            speed in 1.0..10.0f64,
        ) {
            let frame = TelemetryFrame {
                speed_mps: speed,
                target_speed_mps: 6.0,
                heading_error_rad: err,
                lateral_offset_m: offset,
                next_turn: [TurnDirection::Straight, TurnDirection::Left, TurnDirection::Right][turn],
                next_turn_distance_m: Some(5.0),
                ..Default::default()
            };
            let motion = plan(&frame, &follow()).motion;
            prop_assert!(motion != MotionClause::SteerStraight);
            // Left-positive error wants a left (negative-direction) turn.
            prop_assert_eq!(motion.direction(), -err.signum());
        }
    }
}
