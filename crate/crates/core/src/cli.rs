//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage/config/schema error, 3 I/O error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::benchmark::{
    config_hash, langauto_suite, long_horizon_suite, resolve_suite, run_jobs, split_novel_environment, tiny_suite,
    turning_suite, EpisodeConfig, EpisodeLog, LogEvent, Perturbation, SuiteSpec, TickRecord, DEFAULT_TOWN_SEED,
};
use crate::controller::{controller_by_name, CONTROLLER_NAMES};
use crate::dataset::{annotate_episode, read_records, resample, write_records, DatasetError, ResampleConfig};
use crate::geometry::{from_ego_frame, Vec2};
use crate::metrics::{score_route, PenaltyConfig, SuiteReport};
use crate::planner::{planner_by_name, PLANNER_NAMES};
use crate::world::{generate_town, LengthClass, SignalState, TOWN_IDS};

/// Environment variable naming the default output root.
pub const OUT_ROOT_ENV: &str = "HIERDRIVE_OUT";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Io(_) => 3,
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io(e) => Self::Io(e.to_string()),
            other => Self::Config(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

#[derive(Debug, Parser)]
#[command(name = "hierdrive", version, about = "Closed-loop driving benchmark with a hierarchical language policy")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every route of a suite and score it.
    Run(RunArgs),
    /// Label an episode log with mid-level commands and waypoints.
    Annotate {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Thin over-represented commands in a record file.
    Resample {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = ResampleConfig::default().cap_ratio)]
        cap_ratio: f64,
        #[arg(long, default_value_t = ResampleConfig::default().floor)]
        floor: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score a directory of episode logs.
    Score {
        #[arg(long)]
        logs: PathBuf,
        /// JSON file overriding penalty coefficients.
        #[arg(long)]
        penalties: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render an episode log as an overhead SVG trace.
    Plot {
        #[arg(long)]
        log: PathBuf,
        /// Route geometry; defaults to the `.route.json` written next to the log.
        #[arg(long)]
        route: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a town and optionally write the standard suite files.
    GenTown {
        #[arg(long)]
        town: u8,
        #[arg(long, default_value_t = DEFAULT_TOWN_SEED)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory to write the standard suites into.
        #[arg(long)]
        write_suites: Option<PathBuf>,
    },
    /// Inspect configuration.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
}

#[derive(Debug, Subcommand)]
pub enum ConfigAction {
    /// Print the effective run configuration (defaults, then file, then flags).
    Show(RunArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub suite: Option<PathBuf>,
    /// JSON run configuration; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Regenerates the suite's towns with this seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub dt: Option<f64>,
    /// Ticks between planner decisions.
    #[arg(long)]
    pub cadence: Option<u32>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub planner: Option<String>,
    #[arg(long)]
    pub controller: Option<String>,
}

/// Effective configuration of a `run`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub suite: Option<PathBuf>,
    pub seed: Option<u64>,
    pub dt: f64,
    pub planner_cadence: u32,
    pub workers: usize,
    pub out_dir: Option<PathBuf>,
    pub planner: String,
    pub controller: String,
    pub perturbation: Option<Perturbation>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let episode = EpisodeConfig::default();
        Self {
            suite: None,
            seed: None,
            dt: episode.dt,
            planner_cadence: episode.planner_cadence,
            workers: 4,
            out_dir: None,
            planner: "rule".into(),
            controller: "reference".into(),
            perturbation: None,
        }
    }
}

impl RunConfig {
    /// Defaults, overlaid by the config file, overlaid by flags.
    pub fn resolve(args: &RunArgs) -> Result<Self, CliError> {
        let mut cfg = match &args.config {
            Some(path) => serde_json::from_str(
                &read_text(path)
                    .map_err(|_| CliError::Config(format!("cannot read config file {}", path.display())))?,
            )
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?,
            None => Self::default(),
        };
        macro_rules! overlay {
            ($($flag:ident => $field:ident),*) => {$(
                if let Some(v) = &args.$flag { cfg.$field = v.clone().into(); }
            )*};
        }
        overlay!(suite => suite, dt => dt, cadence => planner_cadence, workers => workers, planner => planner, controller => controller);
        if let Some(seed) = args.seed {
            cfg.seed = Some(seed);
        }
        if let Some(out) = &args.out {
            cfg.out_dir = Some(out.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(self.dt > 0.0 && self.dt <= 1.0) {
            return bad(format!("dt must lie in (0, 1], got {}", self.dt));
        }
        if self.planner_cadence == 0 {
            return bad("planner cadence must be at least 1".into());
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if planner_by_name(&self.planner).is_none() {
            return bad(format!("unknown planner {:?}; choose one of {PLANNER_NAMES:?}", self.planner));
        }
        if controller_by_name(&self.controller).is_none() {
            return bad(format!("unknown controller {:?}; choose one of {CONTROLLER_NAMES:?}", self.controller));
        }
        Ok(())
    }

    pub fn episode(&self) -> EpisodeConfig {
        EpisodeConfig {
            dt: self.dt,
            planner_cadence: self.planner_cadence,
            perturbation: self.perturbation,
            ..EpisodeConfig::default()
        }
    }
}

fn default_out_root() -> PathBuf {
    std::env::var_os(OUT_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

/// Route geometry written next to each log for plotting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RouteSidecar {
    pub route_id: String,
    pub town_id: u8,
    pub config_hash: String,
    pub polyline: Vec<Vec2>,
    pub signals: Vec<SignalState>,
}

fn sidecar_path(log: &Path) -> PathBuf {
    log.with_extension("route.json")
}

pub fn cmd_run(args: &RunArgs) -> Result<SuiteReport, CliError> {
    let cfg = RunConfig::resolve(args)?;
    let suite_path = cfg.suite.clone().ok_or_else(|| CliError::Config("no suite given (--suite)".into()))?;
    if !suite_path.exists() {
        return Err(CliError::Config(format!("suite file {} does not exist", suite_path.display())));
    }
    let suite = SuiteSpec::load(&suite_path).map_err(|e| CliError::Config(e.to_string()))?;
    let episode = cfg.episode();
    let hash = config_hash(&(&episode, &suite, &cfg.planner, &cfg.controller, cfg.seed));
    let jobs = resolve_suite(&suite, cfg.seed).map_err(|e| CliError::Config(e.to_string()))?;
    let mut logs = run_jobs(&jobs, &cfg.planner, &cfg.controller, &episode, cfg.workers)
        .map_err(|e| CliError::Config(e.to_string()))?;
    for log in &mut logs {
        log.config_hash.clone_from(&hash);
        for r in &mut log.records {
            r.config_hash.clone_from(&hash);
        }
    }

    let out = cfg.out_dir.clone().unwrap_or_else(|| default_out_root().join(&suite.name));
    let penalties = PenaltyConfig::default();
    let mut results = Vec::with_capacity(logs.len());
    for (log, job) in logs.iter().zip(&jobs) {
        let log_path = out.join("logs").join(format!("{}.jsonl", log.route_id));
        write_text(&log_path, &log.to_jsonl())?;
        let sidecar = RouteSidecar {
            route_id: log.route_id.clone(),
            town_id: log.town_id,
            config_hash: hash.clone(),
            polyline: job.scenario.route.polyline.points().to_vec(),
            signals: job.scenario.signals.clone(),
        };
        write_text(&sidecar_path(&log_path), &to_json(&sidecar))?;
        results.push(score_route(log, &penalties));
    }
    let report = SuiteReport::new(&suite.name, &cfg.planner, &cfg.controller, &hash, results)
        .map_err(|e| CliError::Config(e.to_string()))?;
    write_text(&out.join("summary.json"), &report.to_json())?;
    write_text(&out.join("summary.csv"), &format!("# config_hash={hash}\n{}", report.to_csv()))?;
    print!("{}", report.to_text());
    Ok(report)
}

pub fn read_episode_log(path: &Path) -> Result<EpisodeLog, CliError> {
    let text = read_text(path)?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let r: TickRecord = serde_json::from_str(line)
            .map_err(|e| CliError::Config(format!("{} line {}: {e}", path.display(), i + 1)))?;
        records.push(r);
    }
    EpisodeLog::from_records(records)
        .ok_or_else(|| CliError::Config(format!("{}: log is empty or has no termination record", path.display())))
}

fn cmd_annotate(log: &Path, out: &Path) -> Result<(), CliError> {
    let episode = read_episode_log(log)?;
    let dt = match episode.records.as_slice() {
        [a, b, ..] => b.time_s - a.time_s,
        _ => EpisodeConfig::default().dt,
    };
    let records = annotate_episode(&episode.records, dt)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    write_records(out, &records)?;
    let meta =
        serde_json::json!({ "source": log, "records": records.len(), "dt": dt, "config_hash": episode.config_hash });
    write_text(&out.with_extension("meta.json"), &to_json(&meta))?;
    println!("{} records -> {}", records.len(), out.display());
    Ok(())
}

fn histogram(records: &[crate::dataset::HierarchyRecord]) -> BTreeMap<&str, usize> {
    let mut h = BTreeMap::new();
    for r in records {
        *h.entry(r.command.as_str()).or_default() += 1;
    }
    h
}

fn cmd_resample(input: &Path, out: &Path, cfg: ResampleConfig) -> Result<(), CliError> {
    if cfg.cap_ratio < 1.0 {
        return Err(CliError::Config(format!("cap ratio must be at least 1, got {}", cfg.cap_ratio)));
    }
    let records = read_records(input)?;
    let kept = resample(&records, &cfg);
    let (before, after) = (histogram(&records), histogram(&kept));
    println!("{:>8} {:>8}  command", "before", "after");
    for (cmd, n) in &before {
        println!("{n:>8} {:>8}  {cmd}", after.get(cmd).copied().unwrap_or(0));
    }
    println!("{:>8} {:>8}  total", records.len(), kept.len());
    write_records(out, &kept)?;
    let meta = serde_json::json!({ "source": input, "resample": cfg, "config_hash": config_hash(&cfg) });
    write_text(&out.with_extension("meta.json"), &to_json(&meta))?;
    Ok(())
}

fn cmd_score(dir: &Path, penalties: Option<&Path>, out: Option<&Path>) -> Result<SuiteReport, CliError> {
    let cfg = match penalties {
        Some(p) => PenaltyConfig::from_json(&read_text(p)?).map_err(|e| CliError::Config(e.to_string()))?,
        None => PenaltyConfig::default(),
    };
    let entries = fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    let logs = paths.iter().map(|p| read_episode_log(p)).collect::<Result<Vec<_>, _>>()?;
    let results = logs.iter().map(|l| score_route(l, &cfg)).collect();
    let hash = config_hash(&cfg);
    let name = dir.file_name().map_or_else(|| "logs".into(), |n| n.to_string_lossy().into_owned());
    let report = SuiteReport::new(name, "-", "-", hash.clone(), results)
        .map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?;
    if let Some(out) = out {
        write_text(&out.join("score.json"), &report.to_json())?;
        write_text(&out.join("score.csv"), &format!("# config_hash={hash}\n{}", report.to_csv()))?;
    }
    print!("{}", report.to_text());
    Ok(report)
}

/// Overhead SVG trace: route, ego path, waypoint markers and infraction flags.
pub fn render_svg(log: &EpisodeLog, route: &RouteSidecar) -> String {
    let ego: Vec<Vec2> = log.records.iter().map(|r| Vec2::new(r.pose.x, r.pose.y)).collect();
    let all = route.polyline.iter().chain(&ego);
    let (mut lo, mut hi) = (Vec2::new(f64::MAX, f64::MAX), Vec2::new(f64::MIN, f64::MIN));
    for p in all {
        lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    let pad = 10.0;
    let (w, h) = (hi.x - lo.x + 2.0 * pad, hi.y - lo.y + 2.0 * pad);
    let pts = |ps: &[Vec2]| {
        ps.iter().map(|p| format!("{:.2},{:.2}", p.x - lo.x + pad, p.y - lo.y + pad)).collect::<Vec<_>>().join(" ")
    };
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {w:.2} {h:.2}" width="{:.0}" height="{:.0}">"#,
        w * 4.0,
        h * 4.0
    );
    let _ = writeln!(
        svg,
        "<!-- route {} config_hash {} termination {:?} -->",
        log.route_id, log.config_hash, log.termination
    );
    let _ = writeln!(svg, r##"<rect width="100%" height="100%" fill="#fafafa"/>"##);
    let _ = writeln!(
        svg,
        r##"<polyline class="route" points="{}" fill="none" stroke="#9e9e9e" stroke-width="3.5"/>"##,
        pts(&route.polyline)
    );
    let _ = writeln!(
        svg,
        r##"<polyline class="ego" points="{}" fill="none" stroke="#1565c0" stroke-width="0.6"/>"##,
        pts(&ego)
    );
    for r in log.records.iter().filter(|r| r.decision) {
        let origin = Vec2::new(r.pose.x, r.pose.y);
        for wp in r.waypoints.points() {
            let p = from_ego_frame(origin, r.pose.heading, *wp);
            let _ = writeln!(
                svg,
                r##"<circle class="waypoint" cx="{:.2}" cy="{:.2}" r="0.3" fill="#43a047"/>"##,
                p.x - lo.x + pad,
                p.y - lo.y + pad
            );
        }
    }
    for sig in &route.signals {
        let _ = writeln!(
            svg,
            r##"<rect class="signal" x="{:.2}" y="{:.2}" width="1.2" height="1.2" fill="#ff8f00"/>"##,
            sig.position.x - lo.x + pad - 0.6,
            sig.position.y - lo.y + pad - 0.6
        );
    }
    for r in &log.records {
        for e in &r.events {
            if let LogEvent::Infraction(i) = e {
                let _ = writeln!(
                    svg,
                    r##"<circle class="infraction" cx="{:.2}" cy="{:.2}" r="1.5" fill="none" stroke="#c62828" stroke-width="0.5"><title>{:?} at tick {}</title></circle>"##,
                    i.position.x - lo.x + pad,
                    i.position.y - lo.y + pad,
                    i.kind,
                    i.tick
                );
            }
        }
    }
    svg.push_str("</svg>\n");
    svg
}

fn cmd_plot(log: &Path, route: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let episode = read_episode_log(log)?;
    let route_path = route.map_or_else(|| sidecar_path(log), Path::to_path_buf);
    let sidecar: RouteSidecar = serde_json::from_str(&read_text(&route_path)?)
        .map_err(|e| CliError::Config(format!("{}: {e}", route_path.display())))?;
    write_text(out, &render_svg(&episode, &sidecar))
}

#[derive(Debug, Serialize)]
struct RouteSummary {
    id: String,
    class: &'static str,
    length_m: f64,
    turns: usize,
    actors: usize,
    signals: usize,
}

/// Standard suites at `seed`, keyed by file stem.
pub fn standard_suites(seed: u64) -> Result<Vec<SuiteSpec>, CliError> {
    let cfg = |e: crate::benchmark::BenchmarkError| CliError::Config(e.to_string());
    let split = split_novel_environment(&TOWN_IDS, &[8].into_iter().collect(), seed).map_err(cfg)?;
    Ok(vec![
        tiny_suite(seed).map_err(cfg)?,
        turning_suite(seed).map_err(cfg)?,
        langauto_suite(LengthClass::Short, seed).map_err(cfg)?,
        langauto_suite(LengthClass::Long, seed).map_err(cfg)?,
        long_horizon_suite(seed),
        split.eval,
    ])
}

fn cmd_gen_town(town: u8, seed: u64, out: Option<&Path>, suites: Option<&Path>) -> Result<(), CliError> {
    let t = generate_town(town, seed).map_err(|e| CliError::Config(e.to_string()))?;
    let routes: Vec<RouteSummary> = t
        .routes
        .iter()
        .map(|r| RouteSummary {
            id: r.route.id.clone(),
            class: r.class().label(),
            length_m: r.route.length_m,
            turns: r.route.nodes.iter().filter(|n| n.turn != crate::planner::TurnDirection::Straight).count(),
            actors: r.actors.len(),
            signals: r.signals.len(),
        })
        .collect();
    let summary = serde_json::json!({
        "town_id": t.id,
        "seed": t.seed,
        "config_hash": config_hash(&(town, seed)),
        "nodes": t.map.nodes,
        "edges": t.map.edges,
        "routes": routes,
    });
    match out {
        Some(path) => write_text(path, &to_json(&summary))?,
        None => {
            for r in &routes {
                println!(
                    "{:<14} {:<6} {:>7.1} m  turns {}  actors {}  signals {}",
                    r.id, r.class, r.length_m, r.turns, r.actors, r.signals
                );
            }
        }
    }
    if let Some(dir) = suites {
        for suite in standard_suites(seed)? {
            write_text(&dir.join(format!("{}.json", suite.name)), &suite.to_json())?;
        }
    }
    Ok(())
}

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => cmd_run(&args).map(drop),
        Command::Annotate { log, out } => cmd_annotate(&log, &out),
        Command::Resample { input, out, cap_ratio, floor, seed } => {
            cmd_resample(&input, &out, ResampleConfig { cap_ratio, floor, seed })
        }
        Command::Score { logs, penalties, out } => cmd_score(&logs, penalties.as_deref(), out.as_deref()).map(drop),
        Command::Plot { log, route, out } => cmd_plot(&log, route.as_deref(), &out),
        Command::GenTown { town, seed, out, write_suites } => {
            cmd_gen_town(town, seed, out.as_deref(), write_suites.as_deref())
        }
        Command::Config { action: ConfigAction::Show(args) } => {
            let run = RunConfig::resolve(&args)?;
            let all = serde_json::json!({
                "run": run,
                "episode": run.episode(),
                "penalties": PenaltyConfig::default(),
                "resample": ResampleConfig::default(),
                "output_root": default_out_root(),
            });
            print!("{}", to_json(&all));
            Ok(())
        }
    }
}

/// Parses `args` and runs the chosen subcommand.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
