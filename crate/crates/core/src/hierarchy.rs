//! The three-level action hierarchy: navigation instructions, mid-level
//! language commands, and the waypoint / control outputs that execute them.
//!
//! Mid-level commands follow a fixed grammar of at most one perception
//! clause, at most one speed clause and exactly one motion clause, rendered
//! in that order as consecutive sentences.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// What the vehicle is told to notice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PerceptionClause {
    ApproachingJunction,
    VehicleAtJunction,
    MultipleVehiclesAtJunction,
    VehicleAhead,
    MultipleVehiclesAhead,
    VehicleInLane,
    MultipleVehiclesInLane,
    BikeAhead,
    MultipleBikesAhead,
    PedestrianAhead,
    MultiplePedestriansAhead,
    RedLightAhead,
    StopSignAhead,
}

impl PerceptionClause {
    pub const ALL: [PerceptionClause; 13] = [
        Self::ApproachingJunction,
        Self::VehicleAtJunction,
        Self::MultipleVehiclesAtJunction,
        Self::VehicleAhead,
        Self::MultipleVehiclesAhead,
        Self::VehicleInLane,
        Self::MultipleVehiclesInLane,
        Self::BikeAhead,
        Self::MultipleBikesAhead,
        Self::PedestrianAhead,
        Self::MultiplePedestriansAhead,
        Self::RedLightAhead,
        Self::StopSignAhead,
    ];

    pub fn text(self) -> &'static str {
        match self {
            Self::ApproachingJunction => "Approaching a junction, prepare to follow traffic rules.",
            Self::VehicleAtJunction => "A vehicle is present at the junction. Be cautious.",
            Self::MultipleVehiclesAtJunction => "Multiple vehicles are present at the junction. Be cautious.",
            Self::VehicleAhead => "Watch out for the car ahead, there's a vehicle in front.",
            Self::MultipleVehiclesAhead => "Watch out for the cars ahead, there are multiple vehicles in front.",
            Self::VehicleInLane => "A vehicle is present in the lane. Be cautious.",
            Self::MultipleVehiclesInLane => "Multiple vehicles are present in the lane. Be cautious.",
            Self::BikeAhead => "There is a bike ahead. Be cautious.",
            Self::MultipleBikesAhead => "Multiple bikes are ahead. Be cautious.",
            Self::PedestrianAhead => "There is a pedestrian ahead. Be cautious.",
            Self::MultiplePedestriansAhead => "Multiple pedestrians are ahead. Be cautious.",
            Self::RedLightAhead => "There is a red light ahead.",
            Self::StopSignAhead => "There is a stop sign ahead.",
        }
    }
}

/// How the vehicle should manage its speed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SpeedClause {
    SlowDown,
    StartAccelerating,
    RemainStopped,
    SignificantlyBelowTarget,
    SlightlyBelowTarget,
    AboveTarget,
    MaintainSpeed,
}

impl SpeedClause {
    pub const ALL: [SpeedClause; 7] = [
        Self::SlowDown,
        Self::StartAccelerating,
        Self::RemainStopped,
        Self::SignificantlyBelowTarget,
        Self::SlightlyBelowTarget,
        Self::AboveTarget,
        Self::MaintainSpeed,
    ];

    pub fn text(self) -> &'static str {
        match self {
            Self::SlowDown => "Slow down to ensure safety.",
            Self::StartAccelerating => "Start accelerating gradually towards the target speed.",
            Self::RemainStopped => "Remain stopped due to brake application.",
            Self::SignificantlyBelowTarget => "Significantly below target speed, accelerate if safe.",
            Self::SlightlyBelowTarget => "Slightly below target speed, gently increase acceleration.",
            Self::AboveTarget => "Above target speed, decelerate.",
            Self::MaintainSpeed => "Maintain current speed to match the target speed.",
        }
    }

    /// Clauses that ask the vehicle to gain speed.
    pub fn is_accelerating(self) -> bool {
        matches!(self, Self::StartAccelerating | Self::SignificantlyBelowTarget | Self::SlightlyBelowTarget)
    }
}

/// The steering or braking action that closes every command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MotionClause {
    SteerRightSharp,
    SteerRightSlight,
    SteerLeftSharp,
    SteerLeftSlight,
    SteerStraight,
    Brake,
}

impl MotionClause {
    pub const ALL: [MotionClause; 6] = [
        Self::SteerRightSharp,
        Self::SteerRightSlight,
        Self::SteerLeftSharp,
        Self::SteerLeftSlight,
        Self::SteerStraight,
        Self::Brake,
    ];

    pub fn text(self) -> &'static str {
        match self {
            Self::SteerRightSharp => "Steer right sharply.",
            Self::SteerRightSlight => "Make a slight right turn.",
            Self::SteerLeftSharp => "Steer left sharply.",
            Self::SteerLeftSlight => "Make a slight left turn.",
            Self::SteerStraight => "Keep the steering wheel straight.",
            Self::Brake => "Apply brakes safely.",
        }
    }

    pub fn is_turn(self) -> bool {
        matches!(self, Self::SteerRightSharp | Self::SteerRightSlight | Self::SteerLeftSharp | Self::SteerLeftSlight)
    }

    /// Turn direction: -1 for left, +1 for right, 0 otherwise.
    pub fn direction(self) -> f64 {
        match self {
            Self::SteerLeftSharp | Self::SteerLeftSlight => -1.0,
            Self::SteerRightSharp | Self::SteerRightSlight => 1.0,
            Self::SteerStraight | Self::Brake => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ClauseSlot {
    Perception(PerceptionClause),
    Speed(SpeedClause),
    Motion(MotionClause),
}

impl ClauseSlot {
    fn rank(self) -> u8 {
        match self {
            Self::Perception(_) => 0,
            Self::Speed(_) => 1,
            Self::Motion(_) => 2,
        }
    }

    fn text(self) -> &'static str {
        match self {
            Self::Perception(c) => c.text(),
            Self::Speed(c) => c.text(),
            Self::Motion(c) => c.text(),
        }
    }
}

fn all_slots() -> impl Iterator<Item = ClauseSlot> {
    PerceptionClause::ALL
        .into_iter()
        .map(ClauseSlot::Perception)
        .chain(SpeedClause::ALL.into_iter().map(ClauseSlot::Speed))
        .chain(MotionClause::ALL.into_iter().map(ClauseSlot::Motion))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CommandError {
    #[error("unrecognized clause: {0:?}")]
    Parse(String),
    #[error("clause {found:?} appears after {previous:?}; expected perception, speed, motion order")]
    Order { previous: String, found: String },
    #[error("command has no steering or brake clause")]
    MissingMotion,
    #[error("inconsistent command: {0}")]
    Inconsistent(String),
}

/// A mid-level driving command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MidLevelCommand {
    pub perception: Option<PerceptionClause>,
    pub speed: Option<SpeedClause>,
    pub motion: MotionClause,
}

impl MidLevelCommand {
    pub fn new(perception: Option<PerceptionClause>, speed: Option<SpeedClause>, motion: MotionClause) -> Self {
        Self { perception, speed, motion }
    }

    pub fn motion_only(motion: MotionClause) -> Self {
        Self::new(None, None, motion)
    }

    /// Checks the pairings that are physically contradictory.
    pub fn check_consistency(&self) -> Result<(), CommandError> {
        if self.speed == Some(SpeedClause::RemainStopped) && self.motion.is_turn() {
            return Err(CommandError::Inconsistent(format!(
                "{:?} cannot be combined with {:?}",
                SpeedClause::RemainStopped,
                self.motion
            )));
        }
        if let Some(speed) = self.speed {
            if self.motion == MotionClause::Brake && speed.is_accelerating() {
                return Err(CommandError::Inconsistent(format!(
                    "{speed:?} cannot be combined with {:?}",
                    MotionClause::Brake
                )));
            }
        }
        Ok(())
    }

    pub fn is_consistent(&self) -> bool {
        self.check_consistency().is_ok()
    }

    pub fn render(&self) -> String {
        let mut parts: Vec<&str> = Vec::with_capacity(3);
        if let Some(p) = self.perception {
            parts.push(p.text());
        }
        if let Some(s) = self.speed {
            parts.push(s.text());
        }
        parts.push(self.motion.text());
        parts.join(" ")
    }

    /// Parses a command rendered in canonical clause order.
    ///
    /// Surrounding whitespace and runs of spaces between sentences are
    /// ignored; clause bodies are matched case-sensitively.
    pub fn parse(text: &str) -> Result<Self, CommandError> {
        let normalized = text.split_whitespace().collect::<Vec<_>>().join(" ");
        let mut rest = normalized.as_str();
        let mut previous: Option<ClauseSlot> = None;
        let mut cmd = (None, None, None);

        while !rest.is_empty() {
            let slot = match_clause(rest).ok_or_else(|| CommandError::Parse(first_sentence(rest)))?;
            if let Some(prev) = previous {
                if slot.rank() <= prev.rank() {
                    return Err(CommandError::Order {
                        previous: prev.text().to_string(),
                        found: slot.text().to_string(),
                    });
                }
            }
            match slot {
                ClauseSlot::Perception(p) => cmd.0 = Some(p),
                ClauseSlot::Speed(s) => cmd.1 = Some(s),
                ClauseSlot::Motion(m) => cmd.2 = Some(m),
            }
            previous = Some(slot);
            rest = rest[slot.text().len()..].trim_start();
        }

        let motion = cmd.2.ok_or(CommandError::MissingMotion)?;
        let parsed = Self::new(cmd.0, cmd.1, motion);
        parsed.check_consistency()?;
        Ok(parsed)
    }
}

fn match_clause(rest: &str) -> Option<ClauseSlot> {
    all_slots()
        .filter(|slot| {
            let text = slot.text();
            rest.starts_with(text) && (rest.len() == text.len() || rest[text.len()..].starts_with(' '))
        })
        .max_by_key(|slot| slot.text().len())
}

fn first_sentence(rest: &str) -> String {
    match rest.find(". ") {
        Some(idx) => rest[..=idx].to_string(),
        None => rest.to_string(),
    }
}

impl fmt::Display for MidLevelCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl FromStr for MidLevelCommand {
    type Err = CommandError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

/// Every command the grammar admits, in a fixed order.
pub fn enumerate_valid_commands() -> Vec<MidLevelCommand> {
    let perceptions = std::iter::once(None).chain(PerceptionClause::ALL.into_iter().map(Some));
    let mut out = Vec::new();
    for perception in perceptions {
        for speed in std::iter::once(None).chain(SpeedClause::ALL.into_iter().map(Some)) {
            for motion in MotionClause::ALL {
                let cmd = MidLevelCommand::new(perception, speed, motion);
                if cmd.is_consistent() {
                    out.push(cmd);
                }
            }
        }
    }
    out
}

/// The navigation maneuver a directive asks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Maneuver {
    Start,
    Straight,
    Left,
    Right,
    Follow,
}

impl Maneuver {
    /// Best-effort reading of the first maneuver named in a directive.
    pub fn infer(text: &str) -> Self {
        let lower = text.to_lowercase();
        let words: Vec<&str> = lower.split(|c: char| !c.is_alphanumeric()).collect();
        for w in &words {
            match *w {
                "left" => return Self::Left,
                "right" => return Self::Right,
                _ => {}
            }
        }
        if words.contains(&"start") {
            Self::Start
        } else if words.contains(&"straight") {
            Self::Straight
        } else {
            Self::Follow
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InstructionKind {
    Short,
    LongHorizon,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InstructionError {
    #[error("instruction text is empty")]
    Empty,
}

/// A natural-language navigation directive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instruction {
    pub text: String,
    pub kind: InstructionKind,
    /// Distance parameter in meters for templates such as "Upon covering [x] meters".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_m: Option<f64>,
    /// One maneuver per segment; long-horizon instructions carry several.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub maneuvers: Vec<Maneuver>,
}

impl Instruction {
    pub fn short(text: impl Into<String>) -> Result<Self, InstructionError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(InstructionError::Empty);
        }
        let maneuver = Maneuver::infer(&text);
        Ok(Self { text, kind: InstructionKind::Short, distance_m: None, maneuvers: vec![maneuver] })
    }

    pub fn long_horizon(text: impl Into<String>, maneuvers: Vec<Maneuver>) -> Result<Self, InstructionError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(InstructionError::Empty);
        }
        Ok(Self { text, kind: InstructionKind::LongHorizon, distance_m: None, maneuvers })
    }

    pub fn with_distance(mut self, meters: f64) -> Self {
        self.distance_m = Some(meters);
        self
    }

    /// The first turning maneuver, if the directive names one.
    pub fn turn_intent(&self) -> Option<Maneuver> {
        self.maneuvers.iter().copied().find(|m| matches!(m, Maneuver::Left | Maneuver::Right))
    }
}

/// An ego-frame position: `lateral` is positive to the right, `longitudinal`
/// positive forward.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct EgoPoint {
    pub lateral: f64,
    pub longitudinal: f64,
}

impl EgoPoint {
    pub const fn new(lateral: f64, longitudinal: f64) -> Self {
        Self { lateral, longitudinal }
    }

    pub fn distance(self, other: EgoPoint) -> f64 {
        (self.lateral - other.lateral).hypot(self.longitudinal - other.longitudinal)
    }

    pub fn norm(self) -> f64 {
        self.lateral.hypot(self.longitudinal)
    }
}

impl From<[f64; 2]> for EgoPoint {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<EgoPoint> for [f64; 2] {
    fn from(p: EgoPoint) -> Self {
        [p.lateral, p.longitudinal]
    }
}

pub const WAYPOINT_COUNT: usize = 5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WaypointError {
    #[error("waypoint {index} moves backwards: |{current}| < |{previous}|")]
    Backwards { index: usize, previous: f64, current: f64 },
    #[error("waypoint {0} is not finite")]
    NonFinite(usize),
}

/// Five future ego-frame positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Waypoints {
    points: [EgoPoint; WAYPOINT_COUNT],
}

impl Waypoints {
    /// Validates that the points march forward (or stay at rest).
    pub fn new(points: [EgoPoint; WAYPOINT_COUNT]) -> Result<Self, WaypointError> {
        for (i, p) in points.iter().enumerate() {
            if !p.lateral.is_finite() || !p.longitudinal.is_finite() {
                return Err(WaypointError::NonFinite(i));
            }
        }
        for i in 1..WAYPOINT_COUNT {
            let previous = points[i - 1].longitudinal.abs();
            let current = points[i].longitudinal.abs();
            if current + 1e-9 < previous {
                return Err(WaypointError::Backwards { index: i, previous, current });
            }
        }
        Ok(Self { points })
    }

    /// Wraps recorded positions as observed, without the forward check.
    /// Used for ground truth taken from driven trajectories.
    pub fn from_recorded(points: [EgoPoint; WAYPOINT_COUNT]) -> Self {
        Self { points }
    }

    pub fn stopped() -> Self {
        Self { points: [EgoPoint::default(); WAYPOINT_COUNT] }
    }

    pub fn points(&self) -> &[EgoPoint; WAYPOINT_COUNT] {
        &self.points
    }

    pub fn is_forward_monotone(&self) -> bool {
        Self::new(self.points).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("{field} = {value} outside [{min}, {max}]")]
    OutOfRange { field: &'static str, value: f64, min: f64, max: f64 },
    #[error("throttle {throttle} and brake {brake} both exceed {limit}")]
    ThrottleAndBrake { throttle: f64, brake: f64, limit: f64 },
}

/// Throttle and brake may overlap only below this level.
pub const PEDAL_OVERLAP_LIMIT: f64 = 0.1;

/// Actuation for one tick. Negative steer turns left.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlSignal {
    throttle: f64,
    steer: f64,
    brake: f64,
}

impl ControlSignal {
    pub fn try_new(throttle: f64, steer: f64, brake: f64) -> Result<Self, ControlError> {
        check_range("throttle", throttle, 0.0, 1.0)?;
        check_range("steer", steer, -1.0, 1.0)?;
        check_range("brake", brake, 0.0, 1.0)?;
        if throttle > PEDAL_OVERLAP_LIMIT && brake > PEDAL_OVERLAP_LIMIT {
            return Err(ControlError::ThrottleAndBrake { throttle, brake, limit: PEDAL_OVERLAP_LIMIT });
        }
        Ok(Self { throttle, steer, brake })
    }

    /// Clamps every field into range; when both pedals are pressed the
    /// weaker one is released. NaN inputs become zero.
    pub fn saturating(throttle: f64, steer: f64, brake: f64) -> Self {
        let clean = |v: f64, lo: f64, hi: f64| if v.is_nan() { 0.0 } else { v.clamp(lo, hi) };
        let mut throttle = clean(throttle, 0.0, 1.0);
        let steer = clean(steer, -1.0, 1.0);
        let mut brake = clean(brake, 0.0, 1.0);
        if throttle > PEDAL_OVERLAP_LIMIT && brake > PEDAL_OVERLAP_LIMIT {
            if brake >= throttle {
                throttle = 0.0;
            } else {
                brake = 0.0;
            }
        }
        Self { throttle, steer, brake }
    }

    pub fn throttle(&self) -> f64 {
        self.throttle
    }

    pub fn steer(&self) -> f64 {
        self.steer
    }

    pub fn brake(&self) -> f64 {
        self.brake
    }
}

fn check_range(field: &'static str, value: f64, min: f64, max: f64) -> Result<(), ControlError> {
    if value.is_nan() || value < min || value > max {
        Err(ControlError::OutOfRange { field, value, min, max })
    } else {
        Ok(())
    }
}
