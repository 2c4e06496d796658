//! LeaderBoard-style scoring: route completion, infraction score, driving
//! score and per-kilometre infraction rates.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::benchmark::{EpisodeLog, Termination};
use crate::world::{InfractionEvent, InfractionKind};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("cannot aggregate an empty suite")]
    EmptySuite,
    #[error("total distance driven is zero")]
    ZeroDistance,
    #[error("invalid penalty config: {0}")]
    Config(String),
}

/// Multiplicative penalty per infraction kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PenaltyConfig {
    pub pedestrian_collision: f64,
    pub vehicle_collision: f64,
    pub layout_collision: f64,
    pub red_light_violation: f64,
    pub stop_sign_violation: f64,
    /// Scale route completion by the fraction of distance driven on-road.
    pub offroad_discounts_rc: bool,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            pedestrian_collision: 0.50,
            vehicle_collision: 0.60,
            layout_collision: 0.65,
            red_light_violation: 0.70,
            stop_sign_violation: 0.80,
            offroad_discounts_rc: true,
        }
    }
}

impl PenaltyConfig {
    pub fn from_json(text: &str) -> Result<Self, MetricsError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| MetricsError::Config(e.to_string()))?;
        let all = [
            cfg.pedestrian_collision,
            cfg.vehicle_collision,
            cfg.layout_collision,
            cfg.red_light_violation,
            cfg.stop_sign_violation,
        ];
        if all.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(MetricsError::Config("coefficients must lie in [0, 1]".into()));
        }
        Ok(cfg)
    }

    /// Coefficient for one event; 1 for kinds that end the episode instead.
    pub fn coefficient(&self, kind: InfractionKind) -> f64 {
        match kind {
            InfractionKind::PedestrianCollision => self.pedestrian_collision,
            InfractionKind::VehicleCollision => self.vehicle_collision,
            InfractionKind::LayoutCollision => self.layout_collision,
            InfractionKind::RedLightViolation => self.red_light_violation,
            InfractionKind::StopSignViolation => self.stop_sign_violation,
            InfractionKind::OffroadInfraction | InfractionKind::RouteDeviation | InfractionKind::Blocked => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteResult {
    pub route_id: String,
    /// Percent in [0, 100].
    pub rc: f64,
    /// Factor in [0, 1].
    pub is_: f64,
    /// Always `rc * is_`.
    pub ds: f64,
    pub infraction_counts: BTreeMap<InfractionKind, usize>,
    pub distance_km: f64,
    pub termination: Option<Termination>,
}

impl RouteResult {
    pub fn new(route_id: impl Into<String>, rc: f64, is_: f64, distance_km: f64) -> Self {
        Self {
            route_id: route_id.into(),
            rc,
            is_,
            ds: rc * is_,
            infraction_counts: BTreeMap::new(),
            distance_km,
            termination: None,
        }
    }

    pub fn count(&self, kind: InfractionKind) -> usize {
        self.infraction_counts.get(&kind).copied().unwrap_or(0)
    }
}

/// Percent of the route completed. Completed episodes report 100; others
/// report their frozen monotone progress.
pub fn route_completion(log: &EpisodeLog, cfg: &PenaltyConfig) -> f64 {
    let base = if log.termination == Termination::Completed { 1.0 } else { log.final_progress().clamp(0.0, 1.0) };
    let onroad = if cfg.offroad_discounts_rc && log.distance_driven_m > 0.0 {
        1.0 - (log.offroad_m / log.distance_driven_m).clamp(0.0, 1.0)
    } else {
        1.0
    };
    100.0 * base * onroad
}

pub fn infraction_score<'a>(events: impl IntoIterator<Item = &'a InfractionEvent>, cfg: &PenaltyConfig) -> f64 {
    events.into_iter().map(|e| cfg.coefficient(e.kind)).product()
}

pub fn score_route(log: &EpisodeLog, cfg: &PenaltyConfig) -> RouteResult {
    let mut result = RouteResult::new(
        log.route_id.clone(),
        route_completion(log, cfg),
        infraction_score(log.infractions(), cfg),
        log.distance_driven_m / 1000.0,
    );
    for e in log.infractions() {
        *result.infraction_counts.entry(e.kind).or_default() += 1;
    }
    result.termination = Some(log.termination);
    result
}

/// Suite aggregates: each is a plain mean over routes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteScore {
    pub ds: f64,
    pub rc: f64,
    pub is_: f64,
    pub routes: usize,
}

pub fn driving_score(results: &[RouteResult]) -> Result<SuiteScore, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::EmptySuite);
    }
    let n = results.len() as f64;
    let mean = |f: fn(&RouteResult) -> f64| results.iter().map(f).sum::<f64>() / n;
    Ok(SuiteScore { ds: mean(|r| r.ds), rc: mean(|r| r.rc), is_: mean(|r| r.is_), routes: results.len() })
}

/// Events per kilometre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfractionRates {
    pub vc: f64,
    pub pc: f64,
    pub lc: f64,
    pub rv: f64,
    pub oi: f64,
}

pub fn infraction_rates(results: &[RouteResult]) -> Result<InfractionRates, MetricsError> {
    let km: f64 = results.iter().map(|r| r.distance_km).sum();
    if km <= 0.0 {
        return Err(MetricsError::ZeroDistance);
    }
    let rate = |kind| results.iter().map(|r| r.count(kind)).sum::<usize>() as f64 / km;
    Ok(InfractionRates {
        vc: rate(InfractionKind::VehicleCollision),
        pc: rate(InfractionKind::PedestrianCollision),
        lc: rate(InfractionKind::LayoutCollision),
        rv: rate(InfractionKind::RedLightViolation),
        oi: rate(InfractionKind::OffroadInfraction),
    })
}

/// Machine-readable per-suite summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub planner: String,
    pub controller: String,
    pub config_hash: String,
    pub score: SuiteScore,
    pub rates: Option<InfractionRates>,
    pub routes: Vec<RouteResult>,
}

impl SuiteReport {
    pub fn new(
        suite: impl Into<String>,
        planner: impl Into<String>,
        controller: impl Into<String>,
        config_hash: impl Into<String>,
        routes: Vec<RouteResult>,
    ) -> Result<Self, MetricsError> {
        Ok(Self {
            suite: suite.into(),
            planner: planner.into(),
            controller: controller.into(),
            config_hash: config_hash.into(),
            score: driving_score(&routes)?,
            rates: infraction_rates(&routes).ok(),
            routes,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// One row per route followed by a suite row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("route_id,termination,ds,rc,is,distance_km,vc,pc,lc,rv,oi\n");
        for r in &self.routes {
            let term = r.termination.map_or(String::new(), |t| format!("{t:?}"));
            let _ = writeln!(
                out,
                "{},{},{:.4},{:.4},{:.6},{:.4},{},{},{},{},{}",
                r.route_id,
                term,
                r.ds,
                r.rc,
                r.is_,
                r.distance_km,
                r.count(InfractionKind::VehicleCollision),
                r.count(InfractionKind::PedestrianCollision),
                r.count(InfractionKind::LayoutCollision),
                r.count(InfractionKind::RedLightViolation),
                r.count(InfractionKind::OffroadInfraction),
            );
        }
        let rates = self.rates.unwrap_or(InfractionRates { vc: 0.0, pc: 0.0, lc: 0.0, rv: 0.0, oi: 0.0 });
        let _ = writeln!(
            out,
            "{},suite,{:.4},{:.4},{:.6},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}",
            self.suite,
            self.score.ds,
            self.score.rc,
            self.score.is_,
            self.routes.iter().map(|r| r.distance_km).sum::<f64>(),
            rates.vc,
            rates.pc,
            rates.lc,
            rates.rv,
            rates.oi,
        );
        out
    }

    /// Aligned text: a DS/RC/IS table and a per-km infraction table.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<24} {:>8} {:>8} {:>8}", "Suite / planner", "DS", "RC", "IS");
        let _ = writeln!(
            out,
            "{:<24} {:>8.2} {:>8.2} {:>8.3}",
            format!("{} / {}", self.suite, self.planner),
            self.score.ds,
            self.score.rc,
            self.score.is_
        );
        if let Some(r) = self.rates {
            let _ = writeln!(out);
            let _ = writeln!(out, "{:>8} {:>8} {:>8} {:>8} {:>8}", "VC", "PC", "LC", "RV", "OI");
            let _ = writeln!(out, "{:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3}", r.vc, r.pc, r.lc, r.rv, r.oi);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec2;
    use proptest::prelude::*;

    fn event(kind: InfractionKind) -> InfractionEvent {
        InfractionEvent { tick: 0, kind, position: Vec2::default(), actor_id: None }
    }

    #[test]
    fn coefficient_examples() {
        let cfg = PenaltyConfig::default();
        assert_eq!(infraction_score(&[], &cfg), 1.0);
        assert!((infraction_score(&[event(InfractionKind::VehicleCollision)], &cfg) - 0.60).abs() < 1e-12);
        let two = [event(InfractionKind::PedestrianCollision), event(InfractionKind::RedLightViolation)];
        assert!((infraction_score(&two, &cfg) - 0.35).abs() < 1e-12);
        let terminal = [event(InfractionKind::RouteDeviation), event(InfractionKind::Blocked)];
        assert_eq!(infraction_score(&terminal, &cfg), 1.0);
    }

    #[test]
    fn suite_mean_does_not_factor() {
        let s =
            driving_score(&[RouteResult::new("a", 100.0, 1.0, 1.0), RouteResult::new("b", 50.0, 0.5, 1.0)]).unwrap();
        assert!((s.ds - 62.5).abs() < 1e-12);
        assert!((s.rc * s.is_ - 56.25).abs() < 1e-12);
        assert_eq!(driving_score(&[]), Err(MetricsError::EmptySuite));
    }

    #[test]
    fn rate_examples() {
        let mut r = RouteResult::new("a", 100.0, 1.0, 12.2);
        r.infraction_counts.insert(InfractionKind::RedLightViolation, 1);
        assert!((infraction_rates(&[r]).unwrap().rv - 1.0 / 12.2).abs() < 1e-12);
        let mut r = RouteResult::new("b", 100.0, 1.0, 1.0);
        r.infraction_counts.insert(InfractionKind::VehicleCollision, 2);
        assert_eq!(infraction_rates(&[r]).unwrap().vc, 2.0);
        let quiet = infraction_rates(&[RouteResult::new("c", 100.0, 1.0, 10.0)]).unwrap();
        assert_eq!((quiet.vc, quiet.pc, quiet.lc, quiet.rv, quiet.oi), (0.0, 0.0, 0.0, 0.0, 0.0));
        assert_eq!(infraction_rates(&[RouteResult::new("d", 0.0, 1.0, 0.0)]), Err(MetricsError::ZeroDistance));
    }

    #[test]
    fn penalty_config_parses_partial_json() {
        let cfg = PenaltyConfig::from_json(r#"{"vehicle_collision": 0.5}"#).unwrap();
        assert_eq!(cfg.vehicle_collision, 0.5);
        assert_eq!(cfg.pedestrian_collision, 0.5);
        assert!(PenaltyConfig::from_json(r#"{"vehicle_collision": 1.5}"#).is_err());
    }

    fn kind_strategy() -> impl Strategy<Value = InfractionKind> {
        prop::sample::select(vec![
            InfractionKind::VehicleCollision,
            InfractionKind::PedestrianCollision,
            InfractionKind::LayoutCollision,
            InfractionKind::RedLightViolation,
            InfractionKind::StopSignViolation,
            InfractionKind::OffroadInfraction,
        ])
    }

    proptest! {
        #[test]
        fn score_is_multiplicative_and_order_free(
            a in prop::collection::vec(kind_strategy(), 0..8),
            b in prop::collection::vec(kind_strategy(), 0..8),
        ) {
            let cfg = PenaltyConfig::default();
            let ea: Vec<_> = a.iter().copied().map(event).collect();
            let eb: Vec<_> = b.iter().copied().map(event).collect();
            let joined: Vec<_> = ea.iter().chain(&eb).cloned().collect();
            let reversed: Vec<_> = joined.iter().rev().cloned().collect();
            let whole = infraction_score(&joined, &cfg);
            prop_assert!((whole - infraction_score(&ea, &cfg) * infraction_score(&eb, &cfg)).abs() < 1e-12);
            prop_assert!((whole - infraction_score(&reversed, &cfg)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&whole));
        }

        #[test]
        fn aggregates_are_permutation_invariant(
            routes in prop::collection::vec((0.0f64..=100.0, 0.0f64..=1.0, 0.01f64..5.0), 1..10),
            shift in 0usize..10,
        ) {
            let results: Vec<_> = routes.iter().enumerate()
                .map(|(i, &(rc, is_, km))| RouteResult::new(i.to_string(), rc, is_, km)).collect();
            for r in &results { prop_assert_eq!(r.ds, r.rc * r.is_); }
            let mut rotated = results.clone();
            rotated.rotate_left(shift % results.len());
            let (x, y) = (driving_score(&results).unwrap(), driving_score(&rotated).unwrap());
            prop_assert!((x.ds - y.ds).abs() < 1e-9 && (x.rc - y.rc).abs() < 1e-9 && (x.is_ - y.is_).abs() < 1e-12);
        }
    }
}
