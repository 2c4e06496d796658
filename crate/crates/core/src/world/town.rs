//! Procedural towns: a jittered street grid with rounded corners, a pool of
//! routes per length class, and the actors and signals placed along them.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Actor, ActorKind, Behavior, Route, RouteNode, SignalState};
use crate::geometry::{normalize_angle, right_normal, Polyline, Vec2};
use crate::hierarchy::Maneuver;
use crate::planner::TurnDirection;

pub const TOWN_IDS: [u8; 8] = [1, 2, 3, 4, 5, 6, 7, 8];

const GRID: usize = 6;
const FILLET_RADIUS: f64 = 9.0;
const TURN_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TownError {
    #[error("town id {0} is outside 1..=8")]
    UnknownTown(u8),
    #[error("route needs at least two nodes")]
    ShortPath,
    #[error("nodes {0} and {1} are not connected")]
    NotAdjacent(usize, usize),
    #[error("route offsets do not fit the first or last street")]
    BadOffsets,
    #[error("no route matching {0} found")]
    NoRoute(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LengthClass {
    Tiny,
    Short,
    Long,
}

impl LengthClass {
    pub fn of(length_m: f64) -> Self {
        if length_m < 150.0 {
            Self::Tiny
        } else if length_m <= 500.0 {
            Self::Short
        } else {
            Self::Long
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Tiny => "tiny",
            Self::Short => "short",
            Self::Long => "long",
        }
    }
}

/// Street graph: nodes are intersections or corners, edges straight streets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadMap {
    pub nodes: Vec<Vec2>,
    pub edges: Vec<(usize, usize)>,
}

impl RoadMap {
    pub fn neighbors(&self, n: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == n {
                    Some(b)
                } else if b == n {
                    Some(a)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out
    }

    pub fn degree(&self, n: usize) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == n || b == n).count()
    }

    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        self.edges.iter().any(|&e| e == (a, b) || e == (b, a))
    }

    /// Distance to the nearest street centerline.
    pub fn distance_to_road(&self, p: Vec2) -> f64 {
        self.edges
            .iter()
            .map(|&(a, b)| {
                let (a, b) = (self.nodes[a], self.nodes[b]);
                let ab = b - a;
                let t = ((p - a).dot(ab) / ab.dot(ab)).clamp(0.0, 1.0);
                p.distance(a.lerp(b, t))
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn connected(&self) -> bool {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(n) = stack.pop() {
            for m in self.neighbors(n) {
                if !seen[m] {
                    seen[m] = true;
                    stack.push(m);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// A route with the actors and signals placed along it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteScenario {
    pub route: Route,
    pub actors: Vec<Actor>,
    pub signals: Vec<SignalState>,
}

impl RouteScenario {
    pub fn class(&self) -> LengthClass {
        LengthClass::of(self.route.length_m)
    }

    pub fn has_turn(&self) -> bool {
        self.route.nodes.iter().any(|n| n.turn != TurnDirection::Straight)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Town {
    pub id: u8,
    pub seed: u64,
    pub map: RoadMap,
    pub routes: Vec<RouteScenario>,
}

impl Town {
    pub fn route(&self, id: &str) -> Option<&RouteScenario> {
        self.routes.iter().find(|r| r.route.id == id)
    }

    pub fn routes_of(&self, class: LengthClass) -> impl Iterator<Item = &RouteScenario> {
        self.routes.iter().filter(move |r| r.class() == class)
    }
}

fn town_rng(town_id: u8, seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (u64::from(town_id) << 40) ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn generate_map(town_id: u8, rng: &mut ChaCha8Rng) -> RoadMap {
    let block = 60.0 + 5.0 * f64::from((town_id - 1) % 3);
    let mut nodes = Vec::with_capacity(GRID * GRID);
    for j in 0..GRID {
        for i in 0..GRID {
            let jx = rng.gen_range(-3.0..3.0);
            let jy = rng.gen_range(-3.0..3.0);
            nodes.push(Vec2::new(i as f64 * block + jx, j as f64 * block + jy));
        }
    }
    let idx = |i: usize, j: usize| j * GRID + i;
    let mut edges = Vec::new();
    for j in 0..GRID {
        for i in 0..GRID {
            if i + 1 < GRID {
                edges.push((idx(i, j), idx(i + 1, j)));
            }
            if j + 1 < GRID {
                edges.push((idx(i, j), idx(i, j + 1)));
            }
        }
    }
    let mut map = RoadMap { nodes, edges };
    // Even towns lose a few streets, turning some crossroads into T-junctions.
    if town_id.is_multiple_of(2) {
        let mut removed = 0;
        let mut order = map.edges.clone();
        order.shuffle(rng);
        for (a, b) in order {
            if removed == 4 {
                break;
            }
            if map.degree(a) <= 3 || map.degree(b) <= 3 {
                continue;
            }
            let mut trial = map.clone();
            trial.edges.retain(|&x| x != (a, b));
            if trial.connected() {
                map = trial;
                removed += 1;
            }
        }
    }
    map
}

/// Samples a circular fillet between two headings around `corner`.
fn fillet(corner: Vec2, h_in: f64, h_out: f64, radius: f64) -> Vec<Vec2> {
    let delta = normalize_angle(h_out - h_in);
    let sign = delta.signum();
    let tangent = radius * (delta.abs() / 2.0).tan();
    let p_in = corner - Vec2::from_heading(h_in).scale(tangent);
    let center = p_in + right_normal(h_in).scale(radius * sign);
    let steps = ((radius * delta.abs()) / 0.5).ceil().max(2.0) as usize;
    (0..=steps)
        .map(|k| {
            let h = h_in + delta * k as f64 / steps as f64;
            center - right_normal(h).scale(radius * sign)
        })
        .collect()
}

/// Builds a route along a node path, starting `start_m` along the first
/// street and ending `end_m` along the last one.
pub fn route_from_nodes(
    map: &RoadMap,
    path: &[usize],
    start_m: f64,
    end_m: f64,
    id: impl Into<String>,
    town_id: u8,
) -> Result<Route, TownError> {
    if path.len() < 2 {
        return Err(TownError::ShortPath);
    }
    for w in path.windows(2) {
        if !map.adjacent(w[0], w[1]) {
            return Err(TownError::NotAdjacent(w[0], w[1]));
        }
    }
    let node = |i: usize| map.nodes[path[i]];
    let first_len = node(0).distance(node(1));
    let k = path.len() - 1;
    let last_len = node(k - 1).distance(node(k));
    if start_m < 0.0 || end_m > last_len || (k == 1 && end_m <= start_m) || start_m >= first_len {
        return Err(TownError::BadOffsets);
    }
    let start = node(0).lerp(node(1), start_m / first_len);
    let end = node(k - 1).lerp(node(k), end_m / last_len);

    fn push(points: &mut Vec<Vec2>, p: Vec2) -> usize {
        if points.last().is_none_or(|q| q.distance(p) > 1e-6) {
            points.push(p);
        }
        points.len() - 1
    }

    // Per interior node: point indices where the corner starts and ends, and its turn angle.
    let mut points = vec![start];
    let mut spans = Vec::new();
    for i in 1..k {
        let h_in = (node(i) - node(i - 1)).heading();
        let h_out = (node(i + 1) - node(i)).heading();
        let delta = normalize_angle(h_out - h_in);
        let before = points.last().copied().expect("non-empty").distance(node(i));
        let after = if i + 1 == k { node(i).distance(end) } else { node(i).distance(node(i + 1)) / 2.0 };
        let room = before.min(after) - 1.0;
        let radius = if delta.abs() < 1e-3 { 0.0 } else { FILLET_RADIUS.min(room / (delta.abs() / 2.0).tan()) };
        if radius < 2.0 {
            if delta.abs() > TURN_THRESHOLD {
                return Err(TownError::BadOffsets);
            }
            let at = push(&mut points, node(i));
            spans.push((at, at, delta));
        } else {
            let arc = fillet(node(i), h_in, h_out, radius);
            let first = push(&mut points, arc[0]);
            let mut last = first;
            for p in &arc[1..] {
                last = push(&mut points, *p);
            }
            spans.push((first, last, delta));
        }
    }
    push(&mut points, end);
    let polyline = Polyline::new(points).map_err(|_| TownError::BadOffsets)?;
    let cum = polyline.cumulative();
    let nodes = spans
        .iter()
        .enumerate()
        .map(|(j, &(a, b, delta))| {
            let (s0, s1) = (cum[a], cum[b]);
            let turn = if delta > TURN_THRESHOLD {
                TurnDirection::Right
            } else if delta < -TURN_THRESHOLD {
                TurnDirection::Left
            } else {
                TurnDirection::Straight
            };
            RouteNode {
                center: node(j + 1),
                s_center: 0.5 * (s0 + s1),
                s_turn_start: s0,
                s_turn_end: s1,
                turn,
                is_junction: map.degree(path[j + 1]) >= 3,
                cue: None,
            }
        })
        .collect();
    Ok(Route::new(id, town_id, polyline, nodes))
}

/// Random self-avoiding walk of `edges` streets.
fn random_walk(map: &RoadMap, edges: usize, rng: &mut ChaCha8Rng) -> Option<Vec<usize>> {
    let &(a, b) = map.edges.choose(rng)?;
    let mut path = if rng.gen_bool(0.5) { vec![a, b] } else { vec![b, a] };
    while path.len() < edges + 1 {
        let last = *path.last().expect("non-empty");
        let options: Vec<usize> = map.neighbors(last).into_iter().filter(|n| !path.contains(n)).collect();
        path.push(*options.choose(rng)?);
    }
    Some(path)
}

fn street_len(map: &RoadMap, a: usize, b: usize) -> f64 {
    map.nodes[a].distance(map.nodes[b])
}

fn pool_route(map: &RoadMap, class: LengthClass, id: &str, town_id: u8, rng: &mut ChaCha8Rng) -> Option<Route> {
    for _ in 0..500 {
        let edges = match class {
            LengthClass::Tiny => rng.gen_range(2..=3),
            LengthClass::Short => rng.gen_range(3..=7),
            LengthClass::Long => rng.gen_range(9..=14),
        };
        let Some(path) = random_walk(map, edges, rng) else { continue };
        let first = street_len(map, path[0], path[1]);
        let last = street_len(map, path[edges - 1], path[edges]);
        let start_m = rng.gen_range(0.1 * first..(first - 40.0).max(0.2 * first));
        let end_m = rng.gen_range(25.0..(last - 15.0).max(26.0));
        let Ok(route) = route_from_nodes(map, &path, start_m, end_m, id, town_id) else { continue };
        let ok = match class {
            LengthClass::Tiny => (80.0..150.0).contains(&route.length_m),
            LengthClass::Short => (150.0..=500.0).contains(&route.length_m),
            LengthClass::Long => route.length_m > 500.0,
        };
        if ok {
            return Some(route);
        }
    }
    None
}

fn turn_matches(delta: f64, m: Maneuver) -> bool {
    match m {
        Maneuver::Left => delta < -PI / 4.0,
        Maneuver::Right => delta > PI / 4.0,
        _ => delta.abs() < PI / 6.0,
    }
}

/// Builds a route taking the given action (Left, Right or Straight) at each
/// successive junction; corners between junctions are followed freely.
pub fn build_route(
    map: &RoadMap,
    actions: &[Maneuver],
    cues: &[Option<String>],
    id: &str,
    town_id: u8,
    rng: &mut ChaCha8Rng,
) -> Result<Route, TownError> {
    'attempt: for _ in 0..2000 {
        let Some(&(a, b)) = map.edges.choose(rng) else { break };
        let mut path = if rng.gen_bool(0.5) { vec![a, b] } else { vec![b, a] };
        if map.degree(path[1]) < 3 && !actions.is_empty() {
            continue;
        }
        let mut done = 0;
        loop {
            let cur = *path.last().expect("non-empty");
            let prev = path[path.len() - 2];
            let h_in = (map.nodes[cur] - map.nodes[prev]).heading();
            let options: Vec<usize> = map.neighbors(cur).into_iter().filter(|n| !path.contains(n)).collect();
            if map.degree(cur) >= 3 {
                if done == actions.len() {
                    break;
                }
                let want = actions[done];
                let next = options
                    .iter()
                    .copied()
                    .find(|&n| turn_matches(normalize_angle((map.nodes[n] - map.nodes[cur]).heading() - h_in), want));
                let Some(next) = next else { continue 'attempt };
                path.push(next);
                done += 1;
            } else {
                let Some(&next) = options.first() else { continue 'attempt };
                path.push(next);
            }
        }
        // `path` ends at the first junction after the last action; stop short of it.
        let k = path.len() - 1;
        let first = street_len(map, path[0], path[1]);
        let last = street_len(map, path[k - 1], path[k]);
        if first < 45.0 || last < 45.0 {
            continue;
        }
        let start_m = rng.gen_range(0.0..(first - 40.0).min(15.0));
        let end_m = rng.gen_range(30.0..last - 15.0);
        let Ok(mut route) = route_from_nodes(map, &path, start_m, end_m, id, town_id) else { continue };
        for (node, cue) in route.nodes.iter_mut().filter(|n| n.is_junction).zip(cues) {
            node.cue = cue.clone();
        }
        return Ok(route);
    }
    Err(TownError::NoRoute(format!("{actions:?}")))
}

struct Placer {
    next_id: u32,
}

impl Placer {
    fn id(&mut self) -> u32 {
        self.next_id += 1;
        self.next_id
    }
}

/// Arclengths clear of any corner by `margin`.
fn clear_of_corners(route: &Route, s: f64, margin: f64) -> bool {
    route.nodes.iter().all(|n| s < n.s_turn_start - margin || s > n.s_turn_end + margin)
}

/// Seeded placement of signals and actors along a route.
pub fn populate(route: Route, map: &RoadMap, rng: &mut ChaCha8Rng) -> RouteScenario {
    let mut placer = Placer { next_id: 0 };
    let mut signals = Vec::new();
    let line = Arc::new(route.polyline.clone());
    let len = route.length_m;

    for node in route.junctions() {
        let s_line = node.s_turn_start.min(node.s_center - 6.0) - 3.0;
        if s_line < 30.0 {
            continue;
        }
        let roll: f64 = rng.gen();
        let pos = route.polyline.point_at(s_line);
        if roll < 0.3 {
            let offset = rng.gen_range(0.0..12.0);
            signals.push(SignalState::traffic_light(placer.id(), pos, s_line, 12.0, offset));
        } else if roll < 0.45 {
            signals.push(SignalState::stop_sign(placer.id(), pos, s_line));
        }
    }

    let mut actors = Vec::new();
    let heading_at = |s: f64| route.polyline.heading_at(s);
    let pick_straight = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| -> Option<f64> {
        if hi <= lo {
            return None;
        }
        (0..20).map(|_| rng.gen_range(lo..hi)).find(|&s| clear_of_corners(&route, s, 12.0))
    };

    if len >= 100.0 && rng.gen_bool(0.3) {
        if let Some(s) = pick_straight(rng, 40.0, len - 20.0) {
            let c = route.polyline.point_at(s);
            let side = right_normal(heading_at(s)).scale(if rng.gen_bool(0.5) { 5.0 } else { -5.0 });
            actors.push(Actor::crossing(placer.id(), c + side, c - side, 25.0, 1.4));
        }
    }
    if rng.gen_bool(0.35) {
        if let Some(s) = pick_straight(rng, 20.0, len - 10.0) {
            let pos = route.polyline.point_at(s) + right_normal(heading_at(s)).scale(3.3);
            actors.push(Actor::stationary(placer.id(), ActorKind::Vehicle, pos, heading_at(s)));
        }
    }
    if len >= 100.0 && rng.gen_bool(0.25) {
        let cruise = rng.gen_range(4.5..5.5);
        actors.push(Actor::on_path(
            placer.id(),
            ActorKind::Vehicle,
            Behavior::SignalCompliant,
            Arc::clone(&line),
            30.0,
            cruise,
        ));
    } else if len >= 100.0 && rng.gen_bool(0.15) {
        actors.push(Actor::on_path(
            placer.id(),
            ActorKind::Bike,
            Behavior::ConstantVelocity,
            Arc::clone(&line),
            25.0,
            4.0,
        ));
    }
    // Cross traffic waiting on a street the route does not use.
    let junctions: Vec<&RouteNode> = route.junctions().collect();
    if let Some(node) = junctions.choose(rng).filter(|_| rng.gen_bool(0.3)) {
        let idx = map.nodes.iter().position(|n| n.distance(node.center) < 1e-9);
        if let Some(idx) = idx {
            let arms: Vec<Vec2> = map
                .neighbors(idx)
                .into_iter()
                .map(|n| (map.nodes[n] - node.center).scale(1.0 / map.nodes[n].distance(node.center)))
                .filter(|u| {
                    let p = node.center + u.scale(10.0);
                    route.polyline.project(p, None).distance > 8.0
                })
                .collect();
            if let Some(u) = arms.choose(rng) {
                let pos = node.center + u.scale(10.0);
                actors.push(Actor::stationary(placer.id(), ActorKind::Vehicle, pos, (Vec2::default() - *u).heading()));
            }
        }
    }
    RouteScenario { route, actors, signals }
}

pub const POOL_SIZES: [(LengthClass, usize); 3] =
    [(LengthClass::Tiny, 12), (LengthClass::Short, 8), (LengthClass::Long, 4)];

/// Deterministic town: street map plus populated route pools.
pub fn generate_town(town_id: u8, seed: u64) -> Result<Town, TownError> {
    if !TOWN_IDS.contains(&town_id) {
        return Err(TownError::UnknownTown(town_id));
    }
    let mut rng = town_rng(town_id, seed, 0);
    let map = generate_map(town_id, &mut rng);
    let mut routes = Vec::new();
    for (class, count) in POOL_SIZES {
        for i in 0..count {
            let id = format!("t{town_id}-{}-{i:02}", class.label());
            let mut rng = town_rng(town_id, seed, 1 + routes.len() as u64);
            let route =
                pool_route(&map, class, &id, town_id, &mut rng).ok_or_else(|| TownError::NoRoute(id.clone()))?;
            routes.push(populate(route, &map, &mut rng));
        }
    }
    Ok(Town { id: town_id, seed, map, routes })
}
