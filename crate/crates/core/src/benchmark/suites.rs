//! Suite files and their resolution into runnable episode jobs.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BenchmarkError, EpisodeJob, InstructionMode, InstructionPlan};
use crate::hierarchy::{Instruction, InstructionKind, Maneuver};
use crate::world::{build_route, generate_town, populate, LengthClass, Town, TOWN_IDS};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteRef {
    pub town_id: u8,
    pub route_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteSpec {
    pub name: String,
    pub instruction_mode: InstructionMode,
    #[serde(default)]
    pub holdout_towns: BTreeSet<u8>,
    /// Seed the referenced towns are generated with.
    pub town_seed: u64,
    pub routes: Vec<RouteRef>,
}

impl SuiteSpec {
    pub fn validate(&self) -> Result<(), BenchmarkError> {
        if self.routes.is_empty() {
            return Err(BenchmarkError::Config(format!("suite {:?} lists no routes", self.name)));
        }
        for r in &self.routes {
            if !TOWN_IDS.contains(&r.town_id) {
                return Err(BenchmarkError::Config(format!("route {} names unknown town {}", r.route_id, r.town_id)));
            }
            if !self.holdout_towns.is_empty() && !self.holdout_towns.contains(&r.town_id) {
                return Err(BenchmarkError::Config(format!(
                    "route {} is outside the held-out towns {:?}",
                    r.route_id, self.holdout_towns
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, BenchmarkError> {
        let spec: Self = serde_json::from_str(text).map_err(|e| BenchmarkError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, BenchmarkError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchmarkError::Config(format!("cannot read suite {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| BenchmarkError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("suite serializes") + "\n"
    }
}

/// One entry of the long-horizon instruction table.
#[derive(Debug, Clone, PartialEq)]
pub struct LongHorizonEntry {
    pub id: u32,
    pub text: &'static str,
    /// Action at each junction the route passes, in order.
    pub actions: Vec<Maneuver>,
    /// Landmark phrase per junction, aligned with `actions`.
    pub cues: Vec<Option<&'static str>>,
    /// What the instruction asks for after the last junction.
    pub trailing: Maneuver,
}

impl LongHorizonEntry {
    pub fn instruction(&self) -> Instruction {
        let mut maneuvers = self.actions.clone();
        maneuvers.push(self.trailing);
        Instruction::long_horizon(self.text, maneuvers).expect("table text is non-empty")
    }
}

pub fn long_horizon_entries() -> Vec<LongHorizonEntry> {
    use Maneuver::{Follow, Left, Right, Straight};
    let e = |id, text, actions: &[Maneuver], cues: &[Option<&'static str>], trailing| LongHorizonEntry {
        id,
        text,
        actions: actions.to_vec(),
        cues: if cues.is_empty() { vec![None; actions.len()] } else { cues.to_vec() },
        trailing,
    };
    vec![
        e(0, "Go straight ahead, turn left at the end of the road, then continue straight.", &[Left], &[], Straight),
        e(10, "Go straight until the intersection ahead, then turn right, and continue along the road.", &[Right], &[], Follow),
        e(12, "Go straight to the first intersection ahead and turn left, then continue straight.", &[Left], &[], Straight),
        e(20, "Turn right ahead and then go straight.", &[Right], &[], Straight),
        e(26, "Turn right ahead, go straight, then turn right again.", &[Right, Right], &[], Follow),
        e(34, "Go straight to the T-junction ahead, then turn left and follow the route.", &[Left], &[], Follow),
        e(44, "Go straight to a crossroads, then turn left, then continue straight.", &[Left], &[], Straight),
        e(46, "Go straight to the T-junction, turn right, and continue straight.", &[Right], &[], Straight),
        e(48, "Follow the route, and continue straight when you reach the crossroads.", &[Straight], &[], Straight),
        e(
            57,
            "Go straight to the intersection where, on the left front side, there is an open space with some parked vehicles, and turn left.",
            &[Left],
            &[Some("an open space with some parked vehicles")],
            Follow,
        ),
        e(68, "Keep going along this road.", &[Straight], &[], Follow),
        e(70, "Turn left at the T-junction ahead, then follow the road.", &[Left], &[], Follow),
        e(
            74,
            "Turn left ahead when you reach the cornfield, then turn left again when you encounter an open area.",
            &[Left, Left],
            &[Some("the cornfield"), Some("an open area")],
            Follow,
        ),
        e(
            81,
            "Slightly turn left along the road ahead, then turn right, turn left at the T-junction, and then go straight.",
            &[Right, Left],
            &[],
            Straight,
        ),
        e(
            84,
            "Go straight until you see a turning point with palm trees ahead, then turn right and follow the road.",
            &[Right],
            &[Some("a turning point with palm trees")],
            Follow,
        ),
        e(
            88,
            "Turn right at the T-junction, go straight, then turn right at the T-junction where there are grid lines on the ground. Then continue straight.",
            &[Right, Right],
            &[None, Some("grid lines on the ground")],
            Straight,
        ),
    ]
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ComposeError {
    #[error("nothing to compose")]
    Empty,
}

fn turn_word(m: Maneuver) -> Option<&'static str> {
    match m {
        Maneuver::Left => Some("left"),
        Maneuver::Right => Some("right"),
        _ => None,
    }
}

/// Condenses per-segment directives into one long-horizon directive.
///
/// Each input contributes its maneuver metadata (the action taken at the end
/// of its segment). Leading start/straight segments fold into the approach
/// of the first turn; `cues[j]` names a landmark at the `j`-th turn. The
/// result carries the remaining maneuvers, one per segment.
pub fn compose_long_horizon(
    instructions: &[Instruction],
    cues: &[Option<String>],
) -> Result<Instruction, ComposeError> {
    match instructions {
        [] => return Err(ComposeError::Empty),
        [only] => return Ok(Instruction { kind: InstructionKind::LongHorizon, ..only.clone() }),
        _ => {}
    }
    let all: Vec<Maneuver> = instructions.iter().flat_map(|i| i.maneuvers.iter().copied()).collect();
    let first_turn = all.iter().position(|m| turn_word(*m).is_some());
    let (approach, steps) = match first_turn {
        Some(i) => all.split_at(i),
        None => all.split_at(all.iter().take_while(|m| **m == Maneuver::Start).count()),
    };
    let started = !approach.is_empty();
    let mut cue_iter = cues.iter();
    let mut text = String::new();
    for (i, &step) in steps.iter().enumerate() {
        let last = i + 1 == steps.len();
        match (i, turn_word(step)) {
            (0, Some(d)) => match cue_iter.next().cloned().flatten() {
                Some(c) => text.push_str(&format!("Go straight until you see {c} ahead, then turn {d}")),
                None if started => text.push_str(&format!("Go straight ahead, turn {d} at the end of the road")),
                None => text.push_str(&format!("Turn {d} ahead")),
            },
            (_, Some(d)) => match cue_iter.next().cloned().flatten() {
                Some(c) => text.push_str(&format!(", then turn {d} when you encounter {c}")),
                None => text.push_str(&format!(", then turn {d}")),
            },
            (0, None) if step == Maneuver::Follow => text.push_str("Follow the road"),
            (0, None) => text.push_str("Go straight ahead"),
            (_, None) if step == Maneuver::Follow => text.push_str(" and follow the road"),
            (_, None) if last => text.push_str(", then continue straight"),
            (_, None) => text.push_str(", go straight"),
        }
    }
    if text.is_empty() {
        text.push_str("Follow the road");
    }
    text.push('.');
    Ok(Instruction::long_horizon(text, steps.to_vec()).expect("non-empty"))
}

fn town_route_ids(town: &Town, class: LengthClass) -> Vec<String> {
    town.routes_of(class).map(|r| r.route.id.clone()).collect()
}

fn refs(pairs: impl IntoIterator<Item = (u8, String)>) -> Vec<RouteRef> {
    pairs.into_iter().map(|(town_id, route_id)| RouteRef { town_id, route_id }).collect()
}

pub const DEFAULT_TOWN_SEED: u64 = 2024;

/// Ten short urban routes, two from each of towns 1–5.
pub fn tiny_suite(seed: u64) -> Result<SuiteSpec, BenchmarkError> {
    let mut routes = Vec::new();
    for town_id in 1..=5u8 {
        let town = generate_town(town_id, seed)?;
        routes.extend(town_route_ids(&town, LengthClass::Tiny).into_iter().take(2).map(|id| (town_id, id)));
    }
    Ok(SuiteSpec {
        name: "tiny".into(),
        instruction_mode: InstructionMode::PerSegment,
        holdout_towns: BTreeSet::new(),
        town_seed: seed,
        routes: refs(routes),
    })
}

/// Ten tiny routes that each include at least one turning corner.
pub fn turning_suite(seed: u64) -> Result<SuiteSpec, BenchmarkError> {
    let mut routes = Vec::new();
    for town_id in TOWN_IDS {
        let town = generate_town(town_id, seed)?;
        routes.extend(
            town.routes_of(LengthClass::Tiny).filter(|r| r.has_turn()).take(2).map(|r| (town_id, r.route.id.clone())),
        );
        if routes.len() >= 10 {
            break;
        }
    }
    routes.truncate(10);
    Ok(SuiteSpec {
        name: "turning".into(),
        instruction_mode: InstructionMode::PerSegment,
        holdout_towns: BTreeSet::new(),
        town_seed: seed,
        routes: refs(routes),
    })
}

/// Length-class split: one route of `class` from every town.
pub fn langauto_suite(class: LengthClass, seed: u64) -> Result<SuiteSpec, BenchmarkError> {
    let mut routes = Vec::new();
    for town_id in TOWN_IDS {
        let town = generate_town(town_id, seed)?;
        routes.extend(town_route_ids(&town, class).into_iter().take(1).map(|id| (town_id, id)));
    }
    Ok(SuiteSpec {
        name: class.label().into(),
        instruction_mode: InstructionMode::PerSegment,
        holdout_towns: BTreeSet::new(),
        town_seed: seed,
        routes: refs(routes),
    })
}

fn lh_route_id(town_id: u8, entry: u32) -> String {
    format!("t{town_id}-lh-{entry:02}")
}

/// Every long-horizon table entry, spread round-robin over the towns.
pub fn long_horizon_suite(seed: u64) -> SuiteSpec {
    let routes = long_horizon_entries()
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let town_id = TOWN_IDS[i % TOWN_IDS.len()];
            (town_id, lh_route_id(town_id, e.id))
        })
        .collect::<Vec<_>>();
    SuiteSpec {
        name: "long_horizon".into(),
        instruction_mode: InstructionMode::LongHorizonAtStart,
        holdout_towns: BTreeSet::new(),
        town_seed: seed,
        routes: refs(routes),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NovelSplit {
    pub train_towns: BTreeSet<u8>,
    pub eval: SuiteSpec,
}

impl NovelSplit {
    /// Whether data from `town_id` may be exported for training.
    pub fn exports(&self, town_id: u8) -> bool {
        self.train_towns.contains(&town_id)
    }
}

/// Partitions the town pool into training towns and an evaluation suite
/// over the held-out towns.
pub fn split_novel_environment(pool: &[u8], holdout: &BTreeSet<u8>, seed: u64) -> Result<NovelSplit, BenchmarkError> {
    let pool: BTreeSet<u8> = pool.iter().copied().collect();
    if holdout.is_empty() {
        return Err(BenchmarkError::Config("holdout set is empty".into()));
    }
    if !holdout.is_subset(&pool) {
        return Err(BenchmarkError::Config(format!("holdout {holdout:?} is not within the pool {pool:?}")));
    }
    if holdout.len() == pool.len() {
        return Err(BenchmarkError::Config("holdout covers the whole pool".into()));
    }
    let train_towns: BTreeSet<u8> = pool.difference(holdout).copied().collect();
    let mut routes = Vec::new();
    for &town_id in holdout {
        let town = generate_town(town_id, seed)?;
        routes.extend(town_route_ids(&town, LengthClass::Tiny).into_iter().take(2).map(|id| (town_id, id)));
        routes.extend(town_route_ids(&town, LengthClass::Short).into_iter().take(1).map(|id| (town_id, id)));
    }
    assert!(train_towns.is_disjoint(holdout));
    let eval = SuiteSpec {
        name: "novel_environment".into(),
        instruction_mode: InstructionMode::PerSegment,
        holdout_towns: holdout.clone(),
        town_seed: seed,
        routes: refs(routes),
    };
    Ok(NovelSplit { train_towns, eval })
}

/// Turns suite references into jobs. `seed_override` regenerates the towns
/// with a different seed.
pub fn resolve_suite(spec: &SuiteSpec, seed_override: Option<u64>) -> Result<Vec<EpisodeJob>, BenchmarkError> {
    spec.validate()?;
    let seed = seed_override.unwrap_or(spec.town_seed);
    let mut towns: BTreeMap<u8, (Arc<Town>, Arc<crate::world::RoadMap>)> = BTreeMap::new();
    let entries = long_horizon_entries();
    let mut jobs = Vec::with_capacity(spec.routes.len());
    for r in &spec.routes {
        if let std::collections::btree_map::Entry::Vacant(slot) = towns.entry(r.town_id) {
            let town = generate_town(r.town_id, seed)?;
            let map = Arc::new(town.map.clone());
            slot.insert((Arc::new(town), map));
        }
        let (town, map) = &towns[&r.town_id];
        let lh_entry = r
            .route_id
            .strip_prefix(&format!("t{}-lh-", r.town_id))
            .and_then(|n| n.parse::<u32>().ok())
            .and_then(|n| entries.iter().find(|e| e.id == n));
        let (scenario, long) = match lh_entry {
            Some(entry) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (u64::from(r.town_id) << 32) ^ u64::from(entry.id));
                let cues: Vec<Option<String>> = entry.cues.iter().map(|c| c.map(str::to_string)).collect();
                let route = build_route(&town.map, &entry.actions, &cues, &r.route_id, r.town_id, &mut rng)?;
                (populate(route, &town.map, &mut rng), Some(entry.instruction()))
            }
            None => {
                let scenario =
                    town.route(&r.route_id).ok_or_else(|| BenchmarkError::UnknownRoute(r.route_id.clone()))?;
                (scenario.clone(), None)
            }
        };
        let job = match (spec.instruction_mode, long) {
            (InstructionMode::LongHorizonAtStart, Some(instr)) => EpisodeJob {
                scenario,
                map: Some(Arc::clone(map)),
                instructions: InstructionPlan::LongHorizon(instr),
                seed,
            },
            (InstructionMode::LongHorizonAtStart, None) => {
                let segments = super::per_segment_instructions(&scenario.route);
                let composed = compose_long_horizon(&segments, &[]).expect("at least one segment");
                EpisodeJob {
                    scenario,
                    map: Some(Arc::clone(map)),
                    instructions: InstructionPlan::LongHorizon(composed),
                    seed,
                }
            }
            (InstructionMode::PerSegment, _) => EpisodeJob::per_segment(scenario, Some(Arc::clone(map)), seed),
        };
        jobs.push(job);
    }
    Ok(jobs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with(text: &str, m: Maneuver) -> Instruction {
        Instruction { maneuvers: vec![m], ..Instruction::short(text).unwrap() }
    }

    #[test]
    fn composes_the_start_turn_straight_template() {
        let parts = [
            with("Alright, you can start driving.", Maneuver::Start),
            // The route turns left where this segment ends.
            with("Keep on rolling straight till you get to the next junction.", Maneuver::Left),
            with("Continue in a straight line along your current path.", Maneuver::Straight),
        ];
        let out = compose_long_horizon(&parts, &[]).unwrap();
        assert_eq!(out.text, "Go straight ahead, turn left at the end of the road, then continue straight.");
        assert_eq!(out.kind, InstructionKind::LongHorizon);
        assert_eq!(out.maneuvers, vec![Maneuver::Left, Maneuver::Straight]);
    }

    #[test]
    fn composes_entry_84_with_its_cue() {
        let entry = long_horizon_entries().into_iter().find(|e| e.id == 84).unwrap();
        let parts = [
            with("Go straight.", Maneuver::Straight),
            with("Turn right.", Maneuver::Right),
            with("Follow the road.", Maneuver::Follow),
        ];
        let cues: Vec<Option<String>> = entry.cues.iter().map(|c| c.map(String::from)).collect();
        assert_eq!(compose_long_horizon(&parts, &cues).unwrap().text, entry.text);
    }

    #[test]
    fn single_instruction_passes_through() {
        let one = Instruction::short("Turn right ahead and then go straight.").unwrap();
        let out = compose_long_horizon(std::slice::from_ref(&one), &[]).unwrap();
        assert_eq!(out.text, one.text);
        assert_eq!(out.kind, InstructionKind::LongHorizon);
        assert_eq!(compose_long_horizon(&[], &[]), Err(ComposeError::Empty));
    }

    #[test]
    fn table_has_sixteen_entries() {
        let entries = long_horizon_entries();
        assert_eq!(entries.len(), 16);
        for e in &entries {
            assert_eq!(e.cues.len(), e.actions.len());
        }
    }

    #[test]
    fn novel_split_partitions_towns() {
        let holdout = BTreeSet::from([8]);
        let split = split_novel_environment(&TOWN_IDS, &holdout, DEFAULT_TOWN_SEED).unwrap();
        assert_eq!(split.train_towns, (1..=7).collect());
        assert!(split.eval.routes.iter().all(|r| r.town_id == 8));
        assert!(!split.exports(8) && split.exports(1));

        // Seven held-out towns, one training town.
        let holdout: BTreeSet<u8> = (2..=8).collect();
        let split = split_novel_environment(&TOWN_IDS, &holdout, DEFAULT_TOWN_SEED).unwrap();
        assert_eq!(split.train_towns, BTreeSet::from([1]));
        assert!(split.train_towns.is_disjoint(&split.eval.holdout_towns));

        assert!(split_novel_environment(&TOWN_IDS, &BTreeSet::new(), 1).is_err());
        assert!(split_novel_environment(&TOWN_IDS, &TOWN_IDS.into_iter().collect(), 1).is_err());
    }

    #[test]
    fn suites_resolve() {
        let spec = tiny_suite(DEFAULT_TOWN_SEED).unwrap();
        assert_eq!(spec.routes.len(), 10);
        assert_eq!(resolve_suite(&spec, None).unwrap().len(), 10);
        let lh = long_horizon_suite(DEFAULT_TOWN_SEED);
        let jobs = resolve_suite(&lh, None).unwrap();
        assert_eq!(jobs.len(), 16);
        for (job, entry) in jobs.iter().zip(long_horizon_entries()) {
            let turns = job.scenario.route.junctions().count();
            assert_eq!(turns, entry.actions.len(), "{}", job.route_id());
        }
    }
}
