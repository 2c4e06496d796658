//! Fixed-step 2D driving world.
//!
//! The ego vehicle follows a kinematic bicycle model; NPC actors follow
//! simple scripts; traffic lights cycle between red and green. Stepping is a
//! pure function of the state, the control and `dt`.

mod town;

pub use town::{
    build_route, generate_town, populate, route_from_nodes, LengthClass, RoadMap, RouteScenario, Town, TownError,
    TOWN_IDS,
};

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::geometry::{normalize_angle, to_ego_frame, Polyline, Vec2};
use crate::hierarchy::{ControlSignal, Instruction};
use crate::planner::{TelemetryFrame, TurnDirection};

/// Bicycle-model constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    pub wheelbase_m: f64,
    /// Peak acceleration at full throttle, m/s².
    pub max_accel: f64,
    /// Peak deceleration at full brake, m/s².
    pub max_brake: f64,
    /// Linear drag, 1/s.
    pub drag: f64,
    pub max_speed: f64,
    /// Front wheel angle at full steer, rad.
    pub max_steer_angle: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self { wheelbase_m: 2.8, max_accel: 3.0, max_brake: 8.0, drag: 0.1, max_speed: 12.0, max_steer_angle: 0.6 }
    }
}

/// Thresholds for sensing and rule checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldParams {
    pub vehicle: VehicleParams,
    pub deviation_m: f64,
    pub block_timeout_s: f64,
    pub stopped_speed: f64,
    /// Half width of the drivable corridor around the route.
    pub corridor_half_width_m: f64,
    /// Distance from every road centerline beyond which the ego hits buildings.
    pub layout_margin_m: f64,
    pub ego_radius_m: f64,
    pub vehicle_radius_m: f64,
    pub pedestrian_radius_m: f64,
    pub bike_radius_m: f64,
    pub sensing_range_m: f64,
    pub sensing_half_angle_rad: f64,
    pub signal_range_m: f64,
    /// Lateral band around the route that counts as the ego's own path.
    pub path_half_width_m: f64,
    /// Lateral band around the route that counts as the road.
    pub road_half_width_m: f64,
    pub junction_radius_m: f64,
    pub junction_report_m: f64,
    pub turn_report_m: f64,
    /// Route point used for [`TelemetryFrame::preview_bearing_rad`].
    pub preview_m: f64,
    /// Stopping within this distance of a stop line satisfies the sign.
    pub stop_zone_m: f64,
    /// Progress search window behind and ahead of the current progress.
    pub progress_back_m: f64,
    pub progress_ahead_m: f64,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            vehicle: VehicleParams::default(),
            deviation_m: 30.0,
            block_timeout_s: 60.0,
            stopped_speed: 0.1,
            corridor_half_width_m: 4.0,
            layout_margin_m: 8.0,
            ego_radius_m: 1.2,
            vehicle_radius_m: 1.2,
            pedestrian_radius_m: 0.4,
            bike_radius_m: 0.8,
            sensing_range_m: 40.0,
            sensing_half_angle_rad: PI / 3.0,
            signal_range_m: 35.0,
            path_half_width_m: 1.75,
            road_half_width_m: 3.5,
            junction_radius_m: 12.0,
            junction_report_m: 50.0,
            turn_report_m: 50.0,
            preview_m: 8.0,
            stop_zone_m: 10.0,
            progress_back_m: 10.0,
            progress_ahead_m: 50.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub position: Vec2,
    pub heading: f64,
    pub speed: f64,
    pub wheelbase: f64,
}

impl EgoState {
    pub fn new(position: Vec2, heading: f64, speed: f64) -> Self {
        Self { position, heading: normalize_angle(heading), speed: speed.max(0.0), wheelbase: 2.8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActorKind {
    Vehicle,
    Pedestrian,
    Bike,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Behavior {
    Stationary,
    ConstantVelocity,
    SignalCompliant,
    ScriptedCrossing,
}

/// Behavior parameters and script progress.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ActorScript {
    None,
    /// Follows a polyline (extended straight past its end); `s` is the
    /// current arclength.
    Path {
        path: Arc<Polyline>,
        s: f64,
        cruise_mps: f64,
    },
    /// Waits until the ego is within `trigger_m`, then walks from `from` to `to`.
    Crossing {
        from: Vec2,
        to: Vec2,
        trigger_m: f64,
        walk_mps: f64,
        started: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    pub id: u32,
    pub kind: ActorKind,
    pub position: Vec2,
    pub heading: f64,
    pub speed: f64,
    pub behavior: Behavior,
    pub script: ActorScript,
}

impl Actor {
    pub fn stationary(id: u32, kind: ActorKind, position: Vec2, heading: f64) -> Self {
        Self { id, kind, position, heading, speed: 0.0, behavior: Behavior::Stationary, script: ActorScript::None }
    }

    pub fn on_path(id: u32, kind: ActorKind, behavior: Behavior, path: Arc<Polyline>, s: f64, cruise_mps: f64) -> Self {
        Self {
            id,
            kind,
            position: path.point_at(s),
            heading: path.heading_at(s),
            speed: cruise_mps,
            behavior,
            script: ActorScript::Path { path, s, cruise_mps },
        }
    }

    pub fn crossing(id: u32, from: Vec2, to: Vec2, trigger_m: f64, walk_mps: f64) -> Self {
        Self {
            id,
            kind: ActorKind::Pedestrian,
            position: from,
            heading: (to - from).heading(),
            speed: 0.0,
            behavior: Behavior::ScriptedCrossing,
            script: ActorScript::Crossing { from, to, trigger_m, walk_mps, started: false },
        }
    }

    pub fn radius(&self, params: &WorldParams) -> f64 {
        match self.kind {
            ActorKind::Vehicle => params.vehicle_radius_m,
            ActorKind::Pedestrian => params.pedestrian_radius_m,
            ActorKind::Bike => params.bike_radius_m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SignalKind {
    TrafficLight,
    StopSign,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SignalPhase {
    Red,
    Green,
    /// Tail of the green phase, warning that red is next.
    Amber,
}

/// Length of the amber tail at the end of each green phase.
pub const AMBER_S: f64 = 2.5;

/// A traffic light or stop sign. `position` is the stop line on the route
/// and `route_s` its arclength along the route.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalState {
    pub id: u32,
    pub kind: SignalKind,
    pub position: Vec2,
    pub route_s: f64,
    /// `None` for stop signs.
    pub phase: Option<SignalPhase>,
    /// Full red+green period; red for the first half, amber for the last
    /// [`AMBER_S`] seconds.
    pub cycle_s: f64,
    pub offset_s: f64,
}

impl SignalState {
    pub fn traffic_light(id: u32, position: Vec2, route_s: f64, cycle_s: f64, offset_s: f64) -> Self {
        let mut s = Self { id, kind: SignalKind::TrafficLight, position, route_s, phase: None, cycle_s, offset_s };
        s.phase = s.phase_at(0.0);
        s
    }

    pub fn stop_sign(id: u32, position: Vec2, route_s: f64) -> Self {
        Self { id, kind: SignalKind::StopSign, position, route_s, phase: None, cycle_s: 0.0, offset_s: 0.0 }
    }

    pub fn phase_at(&self, time_s: f64) -> Option<SignalPhase> {
        match self.kind {
            SignalKind::StopSign => None,
            SignalKind::TrafficLight => {
                let t = (time_s + self.offset_s).rem_euclid(self.cycle_s);
                Some(if t < 0.5 * self.cycle_s {
                    SignalPhase::Red
                } else if t < self.cycle_s - AMBER_S {
                    SignalPhase::Green
                } else {
                    SignalPhase::Amber
                })
            }
        }
    }

    /// Seconds until the next red phase begins (0 while red).
    pub fn time_to_red(&self, time_s: f64) -> f64 {
        match self.phase_at(time_s) {
            Some(SignalPhase::Green | SignalPhase::Amber) => {
                self.cycle_s - (time_s + self.offset_s).rem_euclid(self.cycle_s)
            }
            _ => 0.0,
        }
    }

    pub fn is_red(&self) -> bool {
        self.phase == Some(SignalPhase::Red)
    }
}

/// A maneuver point along a route (a road-graph node the route passes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteNode {
    pub center: Vec2,
    pub s_center: f64,
    /// Arclength span of the rounded corner, equal to `s_center` when straight.
    pub s_turn_start: f64,
    pub s_turn_end: f64,
    pub turn: TurnDirection,
    /// True for nodes of degree three or more.
    pub is_junction: bool,
    /// Landmark phrase used by long-horizon cues.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cue: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub id: String,
    pub town_id: u8,
    pub polyline: Polyline,
    pub length_m: f64,
    pub nodes: Vec<RouteNode>,
    pub cruise_speed_mps: f64,
    pub turn_speed_mps: f64,
}

impl Route {
    pub fn new(id: impl Into<String>, town_id: u8, polyline: Polyline, nodes: Vec<RouteNode>) -> Self {
        let length_m = polyline.length();
        Self { id: id.into(), town_id, polyline, length_m, nodes, cruise_speed_mps: 7.0, turn_speed_mps: 4.0 }
    }

    pub fn straight(id: impl Into<String>, start: Vec2, heading: f64, length: f64) -> Self {
        let end = start + Vec2::from_heading(heading).scale(length);
        Self::new(id, 0, Polyline::new(vec![start, end]).expect("non-degenerate"), Vec::new())
    }

    /// Speed target at arclength `s`: reduced on the approach to and
    /// through turning corners.
    pub fn target_speed_at(&self, s: f64) -> f64 {
        let slow = self
            .nodes
            .iter()
            .any(|n| n.turn != TurnDirection::Straight && s >= n.s_turn_start - 15.0 && s <= n.s_turn_end + 3.0);
        if slow {
            self.turn_speed_mps
        } else {
            self.cruise_speed_mps
        }
    }

    /// Junction maneuvers in route order.
    pub fn junctions(&self) -> impl Iterator<Item = &RouteNode> {
        self.nodes.iter().filter(|n| n.is_junction)
    }
}

/// Where the ego sits relative to the route.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouteFix {
    pub s: f64,
    /// Positive when the ego is right of the centerline.
    pub signed_offset: f64,
    pub tangent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub tick: u64,
    pub time_s: f64,
    pub ego: EgoState,
    pub actors: Vec<Actor>,
    pub signals: Vec<SignalState>,
    pub route: Arc<Route>,
    pub map: Option<Arc<RoadMap>>,
    pub rng_seed: u64,
    pub params: Arc<WorldParams>,
    /// Monotone arclength progress along the route.
    pub progress_m: f64,
    pub fix: RouteFix,
    pub last_control: ControlSignal,
    pub stationary_s: f64,
    /// Stop signs the ego has already halted for.
    pub cleared_stops: Vec<u32>,
    pub odometer_m: f64,
    pub offroad_m: f64,
}

impl WorldState {
    /// Places the ego and locates it on the route with an unrestricted search.
    pub fn new(
        route: Arc<Route>,
        ego: EgoState,
        actors: Vec<Actor>,
        signals: Vec<SignalState>,
        params: WorldParams,
        rng_seed: u64,
    ) -> Self {
        let proj = route.polyline.project(ego.position, None);
        let fix = RouteFix { s: proj.s, signed_offset: proj.signed_offset, tangent: route.polyline.heading_at(proj.s) };
        let mut ego = ego;
        ego.wheelbase = params.vehicle.wheelbase_m;
        Self {
            tick: 0,
            time_s: 0.0,
            ego,
            actors,
            signals,
            route,
            map: None,
            rng_seed,
            params: Arc::new(params),
            progress_m: proj.s,
            fix,
            last_control: ControlSignal::default(),
            stationary_s: 0.0,
            cleared_stops: Vec::new(),
            odometer_m: 0.0,
            offroad_m: 0.0,
        }
    }

    pub fn with_map(mut self, map: Arc<RoadMap>) -> Self {
        self.map = Some(map);
        self
    }

    /// Ego at rest at the start of the route, aligned with it.
    pub fn at_route_start(
        route: Arc<Route>,
        actors: Vec<Actor>,
        signals: Vec<SignalState>,
        params: WorldParams,
        seed: u64,
    ) -> Self {
        let ego = EgoState::new(route.polyline.point_at(0.0), route.polyline.heading_at(0.0), 0.0);
        Self::new(route, ego, actors, signals, params, seed)
    }

    fn locate(&self, position: Vec2, progress: f64) -> RouteFix {
        let p = &self.params;
        let window = (progress - p.progress_back_m, progress + p.progress_ahead_m);
        let proj = self.route.polyline.project(position, Some(window));
        RouteFix { s: proj.s, signed_offset: proj.signed_offset, tangent: self.route.polyline.heading_at(proj.s) }
    }

    fn red_light_within(&self, range: f64) -> bool {
        self.signals
            .iter()
            .any(|sig| sig.is_red() && sig.route_s > self.progress_m && sig.route_s - self.progress_m <= range)
    }
}

/// Ego kinematics for one tick.
pub fn integrate_ego(ego: &EgoState, control: &ControlSignal, dt: f64, v: &VehicleParams) -> EgoState {
    let accel = v.max_accel * control.throttle() - v.max_brake * control.brake() - v.drag * ego.speed;
    let speed = (ego.speed + accel * dt).clamp(0.0, v.max_speed);
    let yaw_rate = ego.speed / ego.wheelbase * (v.max_steer_angle * control.steer()).tan();
    let heading = normalize_angle(ego.heading + yaw_rate * dt);
    let position = ego.position + Vec2::from_heading(heading).scale(speed * dt);
    EgoState { position, heading, speed, wheelbase: ego.wheelbase }
}

fn step_actor(actor: &Actor, ego: &EgoState, signals: &[SignalState], dt: f64) -> Actor {
    let mut next = actor.clone();
    match (&actor.behavior, &actor.script) {
        (Behavior::Stationary, _) | (_, ActorScript::None) => {
            if actor.behavior == Behavior::ConstantVelocity {
                next.position = actor.position + Vec2::from_heading(actor.heading).scale(actor.speed * dt);
            } else {
                next.speed = 0.0;
            }
        }
        (behavior, ActorScript::Path { path, s, cruise_mps }) => {
            let mut speed = *cruise_mps;
            if *behavior == Behavior::SignalCompliant {
                // Decelerate at 4 m/s² to hold 4 m short of the first red stop line.
                for sig in signals.iter().filter(|sig| sig.is_red() && sig.route_s > *s) {
                    let gap = (sig.route_s - 4.0 - s).max(0.0);
                    speed = speed.min((2.0 * 4.0 * gap).sqrt());
                }
            }
            let s_next = s + speed * dt;
            next.position = path.point_at(s_next);
            next.heading = path.heading_at(s_next);
            next.speed = speed;
            next.script = ActorScript::Path { path: Arc::clone(path), s: s_next, cruise_mps: *cruise_mps };
        }
        (_, ActorScript::Crossing { from, to, trigger_m, walk_mps, started }) => {
            let started = *started || ego.position.distance(actor.position) <= *trigger_m;
            let remaining = to.distance(actor.position);
            if started && remaining > 0.0 {
                let stride = (walk_mps * dt).min(remaining);
                next.position = actor.position + (*to - actor.position).scale(stride / remaining);
                next.speed = *walk_mps;
            } else {
                next.speed = 0.0;
            }
            next.script =
                ActorScript::Crossing { from: *from, to: *to, trigger_m: *trigger_m, walk_mps: *walk_mps, started };
        }
    }
    next
}

/// Advances the world by one tick.
pub fn step(state: &WorldState, control: &ControlSignal, dt: f64) -> WorldState {
    assert!(dt > 0.0, "dt must be positive");
    let params = &state.params;
    let ego = integrate_ego(&state.ego, control, dt, &params.vehicle);
    let tick = state.tick + 1;
    let time_s = tick as f64 * dt;

    let actors = state.actors.iter().map(|a| step_actor(a, &state.ego, &state.signals, dt)).collect();
    let signals = state.signals.iter().map(|sig| SignalState { phase: sig.phase_at(time_s), ..*sig }).collect();

    let fix = state.locate(ego.position, state.progress_m);
    let progress_m = state.progress_m.max(fix.s);
    let travelled = ego.position.distance(state.ego.position);
    let offroad = fix.signed_offset.abs() > params.corridor_half_width_m;

    let mut next = WorldState {
        tick,
        time_s,
        ego,
        actors,
        signals,
        route: Arc::clone(&state.route),
        map: state.map.clone(),
        rng_seed: state.rng_seed,
        params: Arc::clone(&state.params),
        progress_m,
        fix,
        last_control: *control,
        stationary_s: state.stationary_s,
        cleared_stops: state.cleared_stops.clone(),
        odometer_m: state.odometer_m + travelled,
        offroad_m: state.offroad_m + if offroad { travelled } else { 0.0 },
    };

    let stopped = next.ego.speed < params.stopped_speed;
    next.stationary_s =
        if stopped && !next.red_light_within(params.signal_range_m) { state.stationary_s + dt } else { 0.0 };
    if stopped {
        for sig in &next.signals {
            let ahead = sig.route_s - next.progress_m;
            if sig.kind == SignalKind::StopSign
                && (-1.0..=params.stop_zone_m).contains(&ahead)
                && !next.cleared_stops.contains(&sig.id)
            {
                next.cleared_stops.push(sig.id);
            }
        }
    }
    next
}

/// Completion fraction in [0, 1] and unsigned lateral distance to the route.
pub fn route_progress(state: &WorldState) -> (f64, f64) {
    let fix = state.locate(state.ego.position, state.progress_m);
    let progress = state.progress_m.max(fix.s);
    ((progress / state.route.length_m).clamp(0.0, 1.0), fix.signed_offset.abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InfractionKind {
    VehicleCollision,
    PedestrianCollision,
    LayoutCollision,
    RedLightViolation,
    OffroadInfraction,
    StopSignViolation,
    RouteDeviation,
    Blocked,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfractionEvent {
    pub tick: u64,
    pub kind: InfractionKind,
    pub position: Vec2,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actor_id: Option<u32>,
}

fn overlapping(state: &WorldState, actor: &Actor) -> bool {
    let p = &state.params;
    state.ego.position.distance(actor.position) < p.ego_radius_m + actor.radius(p)
}

fn off_layout(state: &WorldState) -> bool {
    match &state.map {
        Some(map) => map.distance_to_road(state.ego.position) > state.params.layout_margin_m,
        None => false,
    }
}

/// Onset-debounced infractions for the transition `prev -> next`.
pub fn detect_infractions(prev: &WorldState, next: &WorldState) -> Vec<InfractionEvent> {
    let p = &next.params;
    let at = |kind, actor_id| InfractionEvent { tick: next.tick, kind, position: next.ego.position, actor_id };
    let mut events = Vec::new();

    for actor in &next.actors {
        let before = prev.actors.iter().find(|a| a.id == actor.id);
        let was = before.is_some_and(|a| overlapping(prev, a));
        if overlapping(next, actor) && !was {
            let kind = match actor.kind {
                ActorKind::Pedestrian => InfractionKind::PedestrianCollision,
                ActorKind::Vehicle | ActorKind::Bike => InfractionKind::VehicleCollision,
            };
            events.push(at(kind, Some(actor.id)));
        }
    }

    for sig in &next.signals {
        let crossed = prev.progress_m < sig.route_s && next.progress_m >= sig.route_s;
        if !crossed {
            continue;
        }
        match sig.kind {
            SignalKind::TrafficLight if sig.is_red() => {
                events.push(at(InfractionKind::RedLightViolation, None));
            }
            SignalKind::StopSign if !next.cleared_stops.contains(&sig.id) => {
                events.push(at(InfractionKind::StopSignViolation, None));
            }
            _ => {}
        }
    }

    let corridor = p.corridor_half_width_m;
    if next.fix.signed_offset.abs() > corridor && prev.fix.signed_offset.abs() <= corridor {
        events.push(at(InfractionKind::OffroadInfraction, None));
    }
    if off_layout(next) && !off_layout(prev) {
        events.push(at(InfractionKind::LayoutCollision, None));
    }
    if next.fix.signed_offset.abs() > p.deviation_m && prev.fix.signed_offset.abs() <= p.deviation_m {
        events.push(at(InfractionKind::RouteDeviation, None));
    }
    if prev.stationary_s < p.block_timeout_s && next.stationary_s >= p.block_timeout_s {
        events.push(at(InfractionKind::Blocked, None));
    }

    events.sort_by_key(|e| (e.kind, e.actor_id));
    events
}

/// Builds the structured observation the planner and controller consume.
pub fn observe(state: &WorldState, instruction: &Instruction) -> TelemetryFrame {
    let _ = instruction;
    let p = &state.params;
    let route = &state.route;
    let ego = &state.ego;
    let s_ego = state.progress_m.max(state.fix.s);

    let mut frame = TelemetryFrame {
        speed_mps: ego.speed,
        target_speed_mps: route.target_speed_at(s_ego),
        applied_steer: state.last_control.steer(),
        applied_brake: state.last_control.brake(),
        lateral_offset_m: state.fix.signed_offset,
        heading_error_rad: normalize_angle(ego.heading - state.fix.tangent),
        ..TelemetryFrame::default()
    };

    let preview = route.polyline.point_at(state.fix.s + p.preview_m);
    let rel = to_ego_frame(ego.position, ego.heading, preview);
    frame.preview_bearing_rad = if rel.norm() > 1e-9 { (-rel.lateral).atan2(rel.longitudinal) } else { 0.0 };

    let next_junction = route.junctions().find(|n| n.s_turn_end >= s_ego && n.s_center - s_ego <= p.junction_report_m);
    if let Some(j) = next_junction {
        frame.junction_distance_m = Some((j.s_center - s_ego).max(0.0));
    }
    if let Some(n) = route.nodes.iter().find(|n| n.turn != TurnDirection::Straight && n.s_turn_end >= s_ego) {
        let d = (n.s_turn_start - s_ego).max(0.0);
        if d <= p.turn_report_m {
            frame.next_turn = n.turn;
            frame.next_turn_distance_m = Some(d);
        }
    }
    if frame.next_turn_distance_m.is_none() {
        frame.next_turn_distance_m = Some((route.length_m - s_ego).clamp(0.0, p.turn_report_m));
    }

    let window = (s_ego - 2.0, s_ego + p.sensing_range_m + 5.0);
    for actor in &state.actors {
        let rel = to_ego_frame(ego.position, ego.heading, actor.position);
        let dist = rel.norm();
        let bearing = rel.lateral.atan2(rel.longitudinal);
        if rel.longitudinal <= 0.0 || dist > p.sensing_range_m || bearing.abs() > p.sensing_half_angle_rad {
            continue;
        }
        let proj = route.polyline.project(actor.position, Some(window));
        let along = proj.s - s_ego;
        let off = proj.distance;
        let gap = along - p.ego_radius_m - actor.radius(p);
        match actor.kind {
            ActorKind::Vehicle => {
                let near_junction =
                    next_junction.is_some_and(|j| actor.position.distance(j.center) <= p.junction_radius_m);
                if off <= p.path_half_width_m && along > 0.0 {
                    frame.vehicles_ahead += 1;
                    frame.lead_vehicle_distance_m = Some(frame.lead_vehicle_distance_m.map_or(gap, |g| g.min(gap)));
                } else if near_junction {
                    frame.vehicles_at_junction += 1;
                } else if off <= p.road_half_width_m {
                    frame.vehicles_in_lane += 1;
                }
            }
            ActorKind::Bike => {
                if off <= p.road_half_width_m {
                    frame.bikes_ahead += 1;
                    if off <= p.path_half_width_m && along > 0.0 {
                        frame.lead_vehicle_distance_m = Some(frame.lead_vehicle_distance_m.map_or(gap, |g| g.min(gap)));
                    }
                }
            }
            ActorKind::Pedestrian => {
                if off <= p.road_half_width_m {
                    frame.pedestrians_ahead += 1;
                    let d = rel.longitudinal;
                    frame.pedestrian_distance_m = Some(frame.pedestrian_distance_m.map_or(d, |x| x.min(d)));
                }
            }
        }
    }

    let nearest_light = state
        .signals
        .iter()
        .filter(|sig| sig.kind == SignalKind::TrafficLight)
        .filter(|sig| sig.route_s > s_ego && sig.route_s - s_ego <= p.signal_range_m)
        .min_by(|a, b| a.route_s.total_cmp(&b.route_s));
    // Amber reads as red when the line cannot be cleared half a second before
    // red and a stop is still possible.
    let stop_needed = ego.speed * ego.speed / (2.0 * p.vehicle.max_brake) + 0.5 * ego.speed;
    let must_stop = |l: &&SignalState| {
        let d = l.route_s - s_ego;
        l.is_red()
            || (l.phase == Some(SignalPhase::Amber)
                && d > ego.speed * (l.time_to_red(state.time_s) - 0.5)
                && d > stop_needed)
    };
    if let Some(light) = nearest_light.filter(must_stop) {
        frame.red_light_ahead = true;
        frame.red_light_distance_m = Some(light.route_s - s_ego);
    }
    let stop = state
        .signals
        .iter()
        .filter(|sig| sig.kind == SignalKind::StopSign && !state.cleared_stops.contains(&sig.id))
        .filter(|sig| sig.route_s > s_ego && sig.route_s - s_ego <= p.signal_range_m)
        .min_by(|a, b| a.route_s.total_cmp(&b.route_s));
    if let Some(sign) = stop {
        frame.stop_sign_ahead = true;
        frame.stop_sign_distance_m = Some(sign.route_s - s_ego);
    }
    frame
}
