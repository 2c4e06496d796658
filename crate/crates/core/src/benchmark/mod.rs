//! Closed-loop episodes: observe → plan (every K ticks) → decode → track →
//! step, with infraction accounting and per-tick logging.

mod suites;

pub use suites::{
    compose_long_horizon, langauto_suite, long_horizon_entries, long_horizon_suite, resolve_suite,
    split_novel_environment, tiny_suite, turning_suite, ComposeError, LongHorizonEntry, NovelSplit, RouteRef,
    SuiteSpec, DEFAULT_TOWN_SEED,
};

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::controller::{controller_by_name, Controller};
use crate::geometry::normalize_angle;
use crate::hierarchy::{ControlSignal, Instruction, InstructionKind, MidLevelCommand, Waypoints};
use crate::planner::{planner_by_name, Planner, TelemetryFrame, TurnDirection};
use crate::world::{
    detect_infractions, observe, route_progress, step, InfractionEvent, InfractionKind, RoadMap, Route, RouteScenario,
    TownError, WorldParams, WorldState,
};

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Town(#[from] TownError),
    #[error("unknown route reference {0:?}")]
    UnknownRoute(String),
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InstructionMode {
    PerSegment,
    LongHorizonAtStart,
}

/// A heading kick applied once when progress first reaches `after_m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub after_m: f64,
    pub heading_delta_rad: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub dt: f64,
    /// Ticks between planner decisions.
    pub planner_cadence: u32,
    pub completion_threshold: f64,
    /// Timeout is route length over this fraction of the top speed.
    pub timeout_speed_fraction: f64,
    pub world: WorldParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<Perturbation>,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            planner_cadence: 10,
            completion_threshold: 0.99,
            timeout_speed_fraction: 0.25,
            world: WorldParams::default(),
            perturbation: None,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), BenchmarkError> {
        if self.planner_cadence < 1 {
            return Err(BenchmarkError::Config(format!("planner cadence must be >= 1, got {}", self.planner_cadence)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(BenchmarkError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        Ok(())
    }

    pub fn timeout_s(&self, route_length_m: f64) -> f64 {
        route_length_m / (self.timeout_speed_fraction * self.world.vehicle.max_speed)
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

/// Short SHA-256 digest of a value's JSON form.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    hex::encode(&Sha256::digest(&json)[..8])
}

/// Instructions issued over an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InstructionPlan {
    /// One instruction per segment, dispatched when the segment starts.
    PerSegment(Vec<Instruction>),
    /// A single instruction issued at the start.
    LongHorizon(Instruction),
}

impl InstructionPlan {
    fn at(&self, segment: usize) -> &Instruction {
        match self {
            Self::PerSegment(list) => &list[segment.min(list.len() - 1)],
            Self::LongHorizon(i) => i,
        }
    }
}

/// Arclengths where a new segment begins: just past each junction.
pub fn segment_boundaries(route: &Route) -> Vec<f64> {
    route.junctions().map(|n| n.s_turn_end + 2.0).filter(|s| *s < route.length_m).collect()
}

/// Template navigation instructions, one per segment.
pub fn per_segment_instructions(route: &Route) -> Vec<Instruction> {
    let mut out = Vec::new();
    let mut seg_start = 0.0;
    for node in route.junctions().filter(|n| n.s_turn_end + 2.0 < route.length_m) {
        let ahead = (node.s_center - seg_start).round();
        let text = match (node.turn, ahead > 50.0) {
            (TurnDirection::Left, false) => "Turn left at the next intersection.".to_string(),
            (TurnDirection::Right, false) => "Turn right at the next intersection.".to_string(),
            (TurnDirection::Straight, false) => {
                "Keep on rolling straight till you get to the next junction.".to_string()
            }
            (TurnDirection::Left, true) => format!("Upon covering {ahead} meters, turn left."),
            (TurnDirection::Right, true) => format!("Upon covering {ahead} meters, turn right."),
            (TurnDirection::Straight, true) => {
                format!("Upon covering {ahead} meters, go straight through the junction.")
            }
        };
        let mut instr = Instruction::short(text).expect("template is non-empty");
        if ahead > 50.0 {
            instr = instr.with_distance(ahead);
        }
        out.push(instr);
        seg_start = node.s_turn_end + 2.0;
    }
    out.push(Instruction::short("Continue in a straight line along your current path.").expect("non-empty"));
    out
}

/// Everything needed to run one route.
#[derive(Debug, Clone)]
pub struct EpisodeJob {
    pub scenario: RouteScenario,
    pub map: Option<Arc<RoadMap>>,
    pub instructions: InstructionPlan,
    pub seed: u64,
}

impl EpisodeJob {
    pub fn per_segment(scenario: RouteScenario, map: Option<Arc<RoadMap>>, seed: u64) -> Self {
        let instructions = InstructionPlan::PerSegment(per_segment_instructions(&scenario.route));
        Self { scenario, map, instructions, seed }
    }

    pub fn route_id(&self) -> &str {
        &self.scenario.route.id
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Termination {
    Completed,
    Deviated,
    Blocked,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogEvent {
    Infraction(InfractionEvent),
    SegmentTransition { from: usize, to: usize, at_m: f64 },
    Perturbation { heading_delta_rad: f64 },
}

/// One line of an episode log. Observation, pose and command describe the
/// state at `tick`; events, progress and odometry describe the step that
/// follows it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub route_id: String,
    pub town_id: u8,
    pub tick: u64,
    pub time_s: f64,
    pub pose: Pose,
    pub telemetry: TelemetryFrame,
    pub instruction: Instruction,
    pub segment: usize,
    pub decision: bool,
    pub mid_level_command: String,
    pub waypoints: Waypoints,
    pub control: ControlSignal,
    pub events: Vec<LogEvent>,
    pub progress: f64,
    pub odometer_m: f64,
    pub offroad_m: f64,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub termination: Option<Termination>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub route_id: String,
    pub town_id: u8,
    pub records: Vec<TickRecord>,
    pub termination: Termination,
    pub distance_driven_m: f64,
    pub offroad_m: f64,
    pub config_hash: String,
}

impl EpisodeLog {
    pub fn from_records(records: Vec<TickRecord>) -> Option<Self> {
        let last = records.last()?;
        let termination = last.termination?;
        Some(Self {
            route_id: last.route_id.clone(),
            town_id: last.town_id,
            termination,
            distance_driven_m: last.odometer_m,
            offroad_m: last.offroad_m,
            config_hash: last.config_hash.clone(),
            records,
        })
    }

    /// Monotone completion fraction at the end of the episode.
    pub fn final_progress(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.progress)
    }

    pub fn infractions(&self) -> impl Iterator<Item = &InfractionEvent> {
        self.records.iter().flat_map(|r| &r.events).filter_map(|e| match e {
            LogEvent::Infraction(i) => Some(i),
            _ => None,
        })
    }

    pub fn segment_transitions(&self) -> Vec<(usize, usize)> {
        self.records
            .iter()
            .flat_map(|r| &r.events)
            .filter_map(|e| match e {
                LogEvent::SegmentTransition { from, to, .. } => Some((*from, *to)),
                _ => None,
            })
            .collect()
    }

    pub fn collisions(&self) -> usize {
        self.infractions()
            .filter(|e| {
                matches!(
                    e.kind,
                    InfractionKind::VehicleCollision
                        | InfractionKind::PedestrianCollision
                        | InfractionKind::LayoutCollision
                )
            })
            .count()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

/// Runs one route to termination.
pub fn run_episode(
    job: &EpisodeJob,
    planner: &dyn Planner,
    controller: &mut dyn Controller,
    config: &EpisodeConfig,
) -> Result<EpisodeLog, BenchmarkError> {
    config.validate()?;
    let route = Arc::new(job.scenario.route.clone());
    let mut state = WorldState::at_route_start(
        Arc::clone(&route),
        job.scenario.actors.clone(),
        job.scenario.signals.clone(),
        config.world,
        job.seed,
    );
    if let Some(map) = &job.map {
        state = state.with_map(Arc::clone(map));
    }
    controller.reset();

    let hash = config.hash();
    let boundaries = segment_boundaries(&route);
    let max_ticks = (config.timeout_s(route.length_m) / config.dt).ceil() as u64;
    let cadence = u64::from(config.planner_cadence);
    let mut segment = 0usize;
    let mut perturbed = false;
    let mut command: Option<MidLevelCommand> = None;
    let mut records = Vec::new();

    loop {
        let seg_now = segment;
        let instruction = job.instructions.at(seg_now).clone();
        let frame = observe(&state, &instruction);
        let decision = state.tick.is_multiple_of(cadence) || command.is_none();
        if decision {
            command = Some(planner.plan(&frame, &instruction));
        }
        let cmd = command.expect("set on first tick");
        let waypoints = controller.waypoints(&frame, &instruction, &cmd);
        let control = controller.control(&state.ego, &waypoints, config.dt);
        let mut next = step(&state, &control, config.dt);
        let mut events: Vec<LogEvent> =
            detect_infractions(&state, &next).into_iter().map(LogEvent::Infraction).collect();

        if let Some(p) = config.perturbation {
            if !perturbed && next.progress_m >= p.after_m {
                next.ego.heading = normalize_angle(next.ego.heading + p.heading_delta_rad);
                perturbed = true;
                events.push(LogEvent::Perturbation { heading_delta_rad: p.heading_delta_rad });
            }
        }
        while segment < boundaries.len() && next.progress_m >= boundaries[segment] {
            events.push(LogEvent::SegmentTransition { from: segment, to: segment + 1, at_m: boundaries[segment] });
            segment += 1;
        }

        let (progress, _) = route_progress(&next);
        let kinds = || {
            events.iter().filter_map(|e| match e {
                LogEvent::Infraction(i) => Some(i.kind),
                _ => None,
            })
        };
        let termination = if progress >= config.completion_threshold {
            Some(Termination::Completed)
        } else if kinds().any(|k| k == InfractionKind::RouteDeviation) {
            Some(Termination::Deviated)
        } else if kinds().any(|k| k == InfractionKind::Blocked) {
            Some(Termination::Blocked)
        } else if next.tick >= max_ticks {
            Some(Termination::Timeout)
        } else {
            None
        };

        records.push(TickRecord {
            route_id: route.id.clone(),
            town_id: route.town_id,
            tick: state.tick,
            time_s: state.time_s,
            pose: Pose {
                x: state.ego.position.x,
                y: state.ego.position.y,
                heading: state.ego.heading,
                speed: state.ego.speed,
            },
            telemetry: frame,
            instruction,
            segment: seg_now,
            decision,
            mid_level_command: cmd.render(),
            waypoints,
            control,
            events,
            progress,
            odometer_m: next.odometer_m,
            offroad_m: next.offroad_m,
            config_hash: hash.clone(),
            termination,
        });
        state = next;
        if let Some(termination) = termination {
            return Ok(EpisodeLog {
                route_id: route.id.clone(),
                town_id: route.town_id,
                termination,
                distance_driven_m: state.odometer_m,
                offroad_m: state.offroad_m,
                config_hash: hash,
                records,
            });
        }
    }
}

impl TickRecord {
    pub fn is_long_horizon(&self) -> bool {
        self.instruction.kind == InstructionKind::LongHorizon
    }
}

/// Runs jobs on a bounded pool, building fresh components per episode.
/// Results are sorted by route id.
pub fn run_jobs(
    jobs: &[EpisodeJob],
    planner_name: &str,
    controller_name: &str,
    config: &EpisodeConfig,
    workers: usize,
) -> Result<Vec<EpisodeLog>, BenchmarkError> {
    use rayon::prelude::*;
    config.validate()?;
    if planner_by_name(planner_name).is_none() {
        return Err(BenchmarkError::Config(format!("unknown planner {planner_name:?}")));
    }
    if controller_by_name(controller_name).is_none() {
        return Err(BenchmarkError::Config(format!("unknown controller {controller_name:?}")));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| BenchmarkError::Pool(e.to_string()))?;
    let mut logs = pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let planner = planner_by_name(planner_name).expect("checked");
                let mut controller = controller_by_name(controller_name).expect("checked");
                run_episode(job, planner.as_ref(), controller.as_mut(), config)
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    logs.sort_by(|a, b| a.route_id.cmp(&b.route_id));
    Ok(logs)
}
