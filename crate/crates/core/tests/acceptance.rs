//! Acceptance suite: one PASS/FAIL line per criterion; exits non-zero if
//! any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use hierdrive::benchmark::{
    compose_long_horizon, long_horizon_entries, resolve_suite, run_episode, run_jobs, segment_boundaries,
    EpisodeConfig, EpisodeJob, EpisodeLog, LogEvent, Perturbation, SuiteSpec, Termination,
};
use hierdrive::controller::{controller_by_name, waypoint_l1_error};
use hierdrive::dataset::{annotate_episode, resample_indices, ResampleConfig};
use hierdrive::geometry::{normalize_angle, Vec2};
use hierdrive::hierarchy::{
    enumerate_valid_commands, ControlSignal, EgoPoint, Instruction, Maneuver, MidLevelCommand, MotionClause,
    PerceptionClause, SpeedClause, Waypoints,
};
use hierdrive::metrics::{driving_score, infraction_score, score_route, PenaltyConfig, RouteResult};
use hierdrive::planner::{planner_by_name, TurnDirection};
use hierdrive::world::{integrate_ego, EgoState, InfractionEvent, InfractionKind, VehicleParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn suite(name: &str) -> SuiteSpec {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("suites").join(format!("{name}.json"));
    SuiteSpec::load(&path).expect("shipped suite loads")
}

fn run(jobs: &[EpisodeJob], planner: &str, cfg: &EpisodeConfig) -> Vec<EpisodeLog> {
    run_jobs(jobs, planner, "reference", cfg, 4).expect("suite runs")
}

fn suite_ds(logs: &[EpisodeLog]) -> f64 {
    let cfg = PenaltyConfig::default();
    let results: Vec<RouteResult> = logs.iter().map(|l| score_route(l, &cfg)).collect();
    driving_score(&results).expect("non-empty").ds
}

// The sub-command sentences exactly as the reference table lists them.
const PERCEPTION: [&str; 13] = [
    "Approaching a junction, prepare to follow traffic rules.",
    "A vehicle is present at the junction. Be cautious.",
    "Multiple vehicles are present at the junction. Be cautious.",
    "Watch out for the car ahead, there's a vehicle in front.",
    "Watch out for the cars ahead, there are multiple vehicles in front.",
    "A vehicle is present in the lane. Be cautious.",
    "Multiple vehicles are present in the lane. Be cautious.",
    "There is a bike ahead. Be cautious.",
    "Multiple bikes are ahead. Be cautious.",
    "There is a pedestrian ahead. Be cautious.",
    "Multiple pedestrians are ahead. Be cautious.",
    "There is a red light ahead.",
    "There is a stop sign ahead.",
];
const SPEED: [&str; 7] = [
    "Slow down to ensure safety.",
    "Start accelerating gradually towards the target speed.",
    "Remain stopped due to brake application.",
    "Significantly below target speed, accelerate if safe.",
    "Slightly below target speed, gently increase acceleration.",
    "Above target speed, decelerate.",
    "Maintain current speed to match the target speed.",
];
const MOTION: [&str; 6] = [
    "Steer right sharply.",
    "Make a slight right turn.",
    "Steer left sharply.",
    "Make a slight left turn.",
    "Keep the steering wheel straight.",
    "Apply brakes safely.",
];

fn grammar() -> Outcome {
    let start = Instant::now();
    let all = enumerate_valid_commands();
    ensure!(all.len() >= 160, "only {} commands", all.len());
    let ours: BTreeSet<&str> = PerceptionClause::ALL
        .iter()
        .map(|c| c.text())
        .chain(SpeedClause::ALL.iter().map(|c| c.text()))
        .chain(MotionClause::ALL.iter().map(|c| c.text()))
        .collect();
    let table: BTreeSet<&str> = PERCEPTION.iter().chain(&SPEED).chain(&MOTION).copied().collect();
    ensure!(
        table.len() == 26 && ours == table,
        "sentence mismatch: {:?}",
        ours.symmetric_difference(&table).collect::<Vec<_>>()
    );
    for cmd in &all {
        let text = cmd.render();
        let back = MidLevelCommand::parse(&text).map_err(|e| format!("{text:?}: {e}"))?;
        ensure!(&back == cmd, "round trip changed {text:?}");
    }
    let elapsed = start.elapsed().as_secs_f64();
    ensure!(elapsed < 1.0, "took {elapsed:.3} s");
    Ok(format!("{} commands, 26/26 sentences, round trip in {elapsed:.3} s", all.len()))
}

fn metric_algebra() -> Outcome {
    let cfg = PenaltyConfig::default();
    let ev = |kind| InfractionEvent { tick: 0, kind, position: Vec2::default(), actor_id: None };
    let one = infraction_score(&[ev(InfractionKind::VehicleCollision)], &cfg);
    ensure!((one - 0.60).abs() < 1e-12, "vehicle collision gives {one}");
    let two = infraction_score(&[ev(InfractionKind::PedestrianCollision), ev(InfractionKind::RedLightViolation)], &cfg);
    ensure!((two - 0.50 * 0.70).abs() < 1e-12, "pedestrian + red light gives {two}");
    let suite = driving_score(&[RouteResult::new("a", 100.0, 1.0, 1.0), RouteResult::new("b", 50.0, 0.5, 1.0)])
        .map_err(|e| e.to_string())?;
    ensure!((suite.ds - 62.5).abs() < 1e-12, "suite DS {}", suite.ds);

    let kinds = [
        InfractionKind::VehicleCollision,
        InfractionKind::PedestrianCollision,
        InfractionKind::LayoutCollision,
        InfractionKind::RedLightViolation,
        InfractionKind::StopSignViolation,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..500 {
        let a: Vec<_> = (0..rng.gen_range(0..6)).map(|_| ev(kinds[rng.gen_range(0..kinds.len())])).collect();
        let b: Vec<_> = (0..rng.gen_range(0..6)).map(|_| ev(kinds[rng.gen_range(0..kinds.len())])).collect();
        let both: Vec<_> = a.iter().chain(&b).copied().collect();
        let (sa, sb, sab) = (infraction_score(&a, &cfg), infraction_score(&b, &cfg), infraction_score(&both, &cfg));
        ensure!((sab - sa * sb).abs() < 1e-12, "IS not multiplicative: {sab} vs {sa}·{sb}");
        let r = RouteResult::new("r", rng.gen_range(0.0..=100.0), sab, 1.0);
        ensure!(r.ds == r.rc * r.is_, "ds != rc·is");
    }
    Ok("0.60, 0.35, 62.5 and IS(A∪B)=IS(A)·IS(B) over 500 random splits".into())
}

fn annotation_equivalence() -> Outcome {
    let cfg = EpisodeConfig::default();
    let tiny = suite("tiny");
    let mut jobs = resolve_suite(&tiny, None).map_err(|e| e.to_string())?;
    jobs.extend(resolve_suite(&tiny, Some(7)).map_err(|e| e.to_string())?);
    ensure!(jobs.len() == 20, "expected 20 episodes, got {}", jobs.len());
    let logs = run(&jobs, "rule", &cfg);
    let mut compared = 0;
    for log in &logs {
        let records = annotate_episode(&log.records, cfg.dt).map_err(|e| e.to_string())?;
        for (rec, tick) in records.iter().zip(&log.records) {
            if tick.decision {
                ensure!(
                    rec.command == tick.mid_level_command,
                    "{} tick {}: offline {:?} vs live {:?}",
                    log.route_id,
                    tick.tick,
                    rec.command,
                    tick.mid_level_command
                );
                compared += 1;
            }
        }
    }
    Ok(format!("20 episodes, {compared} decision frames identical"))
}

fn resampling() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..40 {
        let groups = rng.gen_range(2..12);
        let smallest = rng.gen_range(3..20usize);
        let ratio = rng.gen_range(1.0..=500.0f64);
        let mut sizes: Vec<usize> =
            (0..groups).map(|_| rng.gen_range(smallest..=((smallest as f64 * ratio) as usize))).collect();
        sizes[0] = smallest;
        let keys: Vec<usize> = sizes.iter().enumerate().flat_map(|(k, &n)| std::iter::repeat_n(k, n)).collect();
        let cfg = ResampleConfig { cap_ratio: 20.0, floor: 50, seed: trial };
        let kept = resample_indices(&keys, &cfg);
        ensure!(kept == resample_indices(&keys, &cfg), "non-deterministic at trial {trial}");
        let mut counts = BTreeMap::new();
        for &i in &kept {
            *counts.entry(keys[i]).or_insert(0usize) += 1;
        }
        let (lo, hi) = (*counts.values().min().unwrap(), *counts.values().max().unwrap());
        // smallest ≥ 3 keeps 20 × smallest above the floor, so the bound is strict.
        ensure!(hi as f64 <= cfg.cap_ratio * lo as f64, "trial {trial}: max/min {hi}/{lo} exceeds 20");
    }

    // Realistic skew: 3.0M records over 170 command groups following a
    // Zipf profile whose head is 300× its tail.
    let n_groups = 170usize;
    let exponent = 300f64.ln() / (n_groups as f64).ln();
    let weights: Vec<f64> = (1..=n_groups).map(|r| (r as f64).powf(-exponent)).collect();
    let total_w: f64 = weights.iter().sum();
    let sizes: Vec<usize> = weights.iter().map(|w| (3_000_000.0 * w / total_w).round() as usize).collect();
    let keys: Vec<u16> = sizes.iter().enumerate().flat_map(|(k, &n)| std::iter::repeat_n(k as u16, n)).collect();
    let kept = resample_indices(&keys, &ResampleConfig::default()).len();
    // Brute-force counter: every group is clipped to 20 × the smallest.
    let cap = (20 * sizes.iter().min().unwrap()).max(50);
    let expected: usize = sizes.iter().map(|&n| n.min(cap)).sum();
    ensure!(kept == expected, "kept {kept}, counter says {expected}");
    let fraction = kept as f64 / keys.len() as f64;
    let target = 1.7 / 3.0;
    ensure!((fraction - target).abs() <= 0.25 * target, "retained {fraction:.3} vs {target:.3}");
    Ok(format!("40 skewed trials balanced; realistic skew retains {kept} of {} ({fraction:.3})", keys.len()))
}

fn closed_loop_tiny() -> Outcome {
    let start = Instant::now();
    let jobs = resolve_suite(&suite("tiny"), None).map_err(|e| e.to_string())?;
    ensure!(jobs.len() == 10, "tiny suite has {} routes", jobs.len());
    let logs = run(&jobs, "rule", &EpisodeConfig::default());
    let completed = logs.iter().filter(|l| l.termination == Termination::Completed).count();
    let collisions: usize = logs.iter().map(EpisodeLog::collisions).sum();
    let elapsed = start.elapsed().as_secs_f64();
    ensure!(completed >= 9, "{completed}/10 completed");
    ensure!(collisions == 0, "{collisions} collisions");
    ensure!(elapsed < 60.0, "took {elapsed:.1} s");
    Ok(format!("{completed}/10 completed, 0 collisions, {elapsed:.2} s"))
}

fn recovery_distance(log: &EpisodeLog) -> Option<f64> {
    let k = log.records.iter().position(|r| r.events.iter().any(|e| matches!(e, LogEvent::Perturbation { .. })))?;
    let odo0 = log.records[k].odometer_m;
    log.records[k + 1..]
        .iter()
        .find(|r| r.telemetry.lateral_offset_m.abs() < 1.0 && r.telemetry.heading_error_rad.abs() < 0.1)
        .map(|r| r.odometer_m - odo0)
}

fn fig1_ordering() -> Outcome {
    let cfg = EpisodeConfig::default();
    let jobs = resolve_suite(&suite("turning"), None).map_err(|e| e.to_string())?;
    let reference = suite_ds(&run(&jobs, "rule", &cfg));
    let frozen = suite_ds(&run(&jobs, "frozen-straight", &cfg));
    ensure!(reference > frozen, "reference DS {reference:.2} does not exceed stub DS {frozen:.2}");

    let mut worst: f64 = 0.0;
    for job in &jobs {
        let Some(turn) = job.scenario.route.nodes.iter().find(|n| n.turn != TurnDirection::Straight) else {
            continue;
        };
        let kicked = EpisodeConfig {
            perturbation: Some(Perturbation { after_m: turn.s_turn_end + 5.0, heading_delta_rad: 0.4 }),
            ..cfg
        };
        let episode = |planner: &str| {
            let p = planner_by_name(planner).expect("known planner");
            let mut c = controller_by_name("reference").expect("known controller");
            run_episode(job, p.as_ref(), c.as_mut(), &kicked).expect("episode runs")
        };
        let ours = episode("rule");
        let d = recovery_distance(&ours).ok_or_else(|| format!("{}: no recovery", job.route_id()))?;
        ensure!(d <= 50.0, "{}: recovered only after {d:.1} m", job.route_id());
        worst = worst.max(d);
        let stub = episode("frozen-straight");
        ensure!(stub.termination == Termination::Deviated, "{}: stub ended {:?}", job.route_id(), stub.termination);
    }
    Ok(format!("DS {reference:.1} > {frozen:.1}; +0.4 rad kick recovered within {worst:.1} m, stub Deviated"))
}

fn long_horizon() -> Outcome {
    let entries = long_horizon_entries();
    let with = |text: &str, m| Instruction { maneuvers: vec![m], ..Instruction::short(text).unwrap() };
    let composed = compose_long_horizon(
        &[
            with("Alright, you can start driving.", Maneuver::Start),
            with("Keep on rolling straight till you get to the next junction.", Maneuver::Left),
            with("Continue in a straight line along your current path.", Maneuver::Straight),
        ],
        &[],
    )
    .map_err(|e| e.to_string())?;
    ensure!(composed.text == entries[0].text, "composed {:?}", composed.text);

    let spec = suite("long_horizon");
    let jobs = resolve_suite(&spec, None).map_err(|e| e.to_string())?;
    let logs = run(&jobs, "rule", &EpisodeConfig::default());
    let completed = logs.iter().filter(|l| l.termination == Termination::Completed).count();
    ensure!(completed * 5 >= logs.len() * 4, "{completed}/{} completed", logs.len());
    let by_id: BTreeMap<&str, &EpisodeJob> = jobs.iter().map(|j| (j.route_id(), j)).collect();
    let mut boundaries = 0;
    for log in logs.iter().filter(|l| l.termination == Termination::Completed) {
        let n = segment_boundaries(&by_id[log.route_id.as_str()].scenario.route).len();
        let expected: Vec<(usize, usize)> = (0..n).map(|i| (i, i + 1)).collect();
        ensure!(log.segment_transitions() == expected, "{}: transitions {:?}", log.route_id, log.segment_transitions());
        boundaries += n;
    }
    Ok(format!("{completed}/{} completed; {boundaries} boundaries each dispatched once", logs.len()))
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).expect("readable") {
            let p = entry.expect("entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let suite_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("suites/tiny.json");
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_hierdrive"))
            .args(["run", "--seed", "7", "--suite"])
            .arg(&suite_path)
            .arg("--out")
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(status.status.success(), "run failed: {}", String::from_utf8_lossy(&status.stderr));
        outputs.push(snapshot(&out));
    }
    ensure!(outputs[0].len() > 2, "no artifacts written");
    ensure!(outputs[0] == outputs[1], "artifacts differ between runs");
    Ok(format!("{} files byte-identical across two runs", outputs[0].len()))
}

fn physics() -> Outcome {
    let params = VehicleParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let v = rng.gen_range(1.0..10.0);
        let steer = rng.gen_range(-1.0..1.0);
        let dt = rng.gen_range(0.01..0.1);
        let n = rng.gen_range(1..400);
        let h0 = rng.gen_range(-3.0..3.0);
        // Throttle that exactly cancels drag keeps the speed constant.
        let control =
            ControlSignal::try_new(params.drag * v / params.max_accel, steer, 0.0).map_err(|e| e.to_string())?;
        let mut ego = EgoState::new(Vec2::default(), h0, v);
        for _ in 0..n {
            ego = integrate_ego(&ego, &control, dt, &params);
        }
        let expected = h0 + n as f64 * dt * v / params.wheelbase_m * (params.max_steer_angle * steer).tan();
        worst = worst.max(normalize_angle(ego.heading - expected).abs());
    }
    ensure!(worst < 1e-9, "heading error {worst:e}");

    let mut worst_rel: f64 = 0.0;
    for steer in [0.25, 0.5, 1.0, -0.7] {
        let dt = 0.05;
        let v = 5.0;
        let control =
            ControlSignal::try_new(params.drag * v / params.max_accel, steer, 0.0).map_err(|e| e.to_string())?;
        let mut ego = EgoState::new(Vec2::default(), 0.0, v);
        let mut path = vec![ego.position];
        // Drive a third of a loop at a time, judged by the heading itself.
        let mut turned = 0.0;
        while turned < 4.0 * std::f64::consts::PI / 3.0 {
            let next = integrate_ego(&ego, &control, dt, &params);
            turned += normalize_angle(next.heading - ego.heading).abs();
            ego = next;
            path.push(ego.position);
        }
        // Radius from the circumcircle of three samples 120 degrees apart.
        let (a, b, c) = (path[0], path[path.len() / 2], path[path.len() - 1]);
        let (ab, bc, ca) = (a.distance(b), b.distance(c), c.distance(a));
        let cross = ((b - a).x * (c - a).y - (b - a).y * (c - a).x).abs();
        let radius = ab * bc * ca / (2.0 * cross);
        let expected = params.wheelbase_m / (params.max_steer_angle * steer.abs()).tan();
        worst_rel = worst_rel.max((radius - expected).abs() / expected);
    }
    ensure!(worst_rel < 0.01, "turning radius off by {:.3}%", worst_rel * 100.0);
    Ok(format!("heading max error {worst:.1e}; radius within {:.3}%", worst_rel * 100.0))
}

fn l1_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let random_wp = |rng: &mut ChaCha8Rng| {
        Waypoints::from_recorded(std::array::from_fn(|_| {
            EgoPoint::new(rng.gen_range(-10.0..10.0), rng.gen_range(-5.0..30.0))
        }))
    };
    for i in 0..1000 {
        let (p, t) = (random_wp(&mut rng), random_wp(&mut rng));
        let mut total = 0.0;
        for k in 0..5 {
            let (a, b) = (p.points()[k], t.points()[k]);
            let pa = [a.lateral, a.longitudinal];
            let pb = [b.lateral, b.longitudinal];
            let mut per_point = 0.0;
            for j in 0..2 {
                per_point += (pa[j] - pb[j]).abs();
            }
            total += per_point;
        }
        let oracle = total / 10.0;
        let got = waypoint_l1_error(&p, &t);
        ensure!(got == oracle, "pair {i}: {got} vs {oracle}");
    }
    Ok("1000 random pairs match exactly".into())
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("grammar coverage", grammar),
        ("metric algebra", metric_algebra),
        ("annotation/online equivalence", annotation_equivalence),
        ("resampling", resampling),
        ("closed-loop tiny suite", closed_loop_tiny),
        ("hierarchy vs frozen stub + self-correction", fig1_ordering),
        ("long-horizon harness", long_horizon),
        ("determinism of run --seed 7", determinism),
        ("physics oracle", physics),
        ("waypoint L1 oracle", l1_oracle),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{}/10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
