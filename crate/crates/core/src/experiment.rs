//! Experiment orchestration: config, seeded ensembles over policies,
//! per-run artifacts, summary metrics.
//!
//! An experiment learns profiles over the learning window, then simulates
//! the following window once per (policy, run index) pair. Every run's seed
//! derives deterministically from `(base seed, policy id, run index)`;
//! outbreak seeding derives from `(base seed, run index)` alone, so all
//! policy arms of a run share the identical day-0 state. Ensemble members
//! execute in parallel and never share mutable state; identical configs
//! produce identical outputs regardless of worker count.

use crate::config::{KvFile, KvReader};
use crate::epidemic::{
    run, seed_outbreak, DiseaseParams, EpidemicSeries, PolicyHook, RegionTally, SimulationState,
};
use crate::error::{Error, Result};
use crate::intervention::{
    build_quota_schedule, NonePolicy, PolicyKind, QuarantineLog, QuotaRule, RandomPolicy,
    RiskPolicy,
};
use crate::stats;
use crate::synthetic::{
    generate_heterogeneous, generate_two_metapop, HeterogeneousConfig, TwoMetapopConfig,
};
use crate::time::{Timestamp, TimeWindow};
use crate::trace::{
    build_location_table, build_profiles, parse_region_registry, parse_traces, LocationTable,
    ParseReport, ProfileSet, RegionId, TraceSet, TraceSetBuilder,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

// ---------------------------------------------------------------------------
// seed derivation

/// SplitMix64 finalizer; the documented seed-derivation primitive.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

pub const STREAM_SYNTH: u64 = 1;
pub const STREAM_OUTBREAK: u64 = 2;
/// Dynamics stream for a policy is `STREAM_DYNAMICS + PolicyKind::id()`.
pub const STREAM_DYNAMICS: u64 = 16;

/// Seed for `(base, stream, index)`: three chained SplitMix64 rounds, so any
/// ensemble member is reproducible in isolation.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ stream) ^ index)
}

// ---------------------------------------------------------------------------
// config

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceSource {
    /// `file:<path>` — parse an existing trace file.
    File(PathBuf),
    /// `two_metapop` — generate the two-metapopulation scenario.
    TwoMetapop,
    /// `heterogeneous` — generate the heterogeneous multi-region scenario.
    Heterogeneous,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SeedRegion {
    /// Uniformly among regions with at least one day-0 occupant.
    Random,
    Named(String),
}

/// How treated policies obtain their daily quarantine budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuotaMode {
    /// Daily counts precomputed from the run's no-action baseline series;
    /// every treated arm of a run quarantines identical counts per day.
    Paired,
    /// Each arm applies `xi(t) = beta * i(t)` to its own evolving state.
    Adaptive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub trace_source: TraceSource,
    /// Optional pre-declared region registry file.
    pub trace_regions: Option<PathBuf>,
    pub learning_days: u32,
    pub simulation_days: u32,
    pub beta: f64,
    pub incubation_days: f64,
    pub infectious_days: f64,
    pub seed_region: SeedRegion,
    pub seed_cases: u32,
    pub policies: Vec<PolicyKind>,
    pub runs: u32,
    pub base_seed: u64,
    pub quota_mode: QuotaMode,
    pub sync_threshold: f64,
    pub reduction_horizon: u32,
    pub per_region_series: bool,
    pub synth_seed: Option<u64>,
    pub synth_start: Timestamp,
    pub two_metapop_population: u32,
    pub two_metapop_traveler_fraction: f64,
    pub het_regions: u32,
    pub het_population: u32,
    /// Explicit per-region populations; the towns-plus-village split of
    /// `het_population` when absent.
    pub het_region_populations: Option<Vec<u32>>,
    pub het_mobile_fraction: f64,
    pub het_away_min: f64,
    pub het_away_max: f64,
}

/// Inputs for the standalone `rank` subcommand.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankInputs {
    pub profiles: PathBuf,
    pub state: PathBuf,
}

/// Everything a config file can hold. Unknown keys are fatal.
#[derive(Debug, Clone)]
pub struct AppConfig {
    pub experiment: Option<ExperimentConfig>,
    pub rank: Option<RankInputs>,
}

impl AppConfig {
    pub fn from_kv(kv: &KvFile) -> Result<AppConfig> {
        let mut r = KvReader::new(kv);

        let trace_source = match r.raw("trace.source") {
            None => None,
            Some("two_metapop") => Some(TraceSource::TwoMetapop),
            Some("heterogeneous") => Some(TraceSource::Heterogeneous),
            Some(v) => match v.strip_prefix("file:") {
                Some(path) if !path.is_empty() => Some(TraceSource::File(PathBuf::from(path))),
                _ => {
                    return Err(Error::Config(format!(
                        "key `trace.source`: expected file:<path>, two_metapop or heterogeneous, got `{v}`"
                    )))
                }
            },
        };
        let trace_regions = r.raw("trace.regions").map(PathBuf::from);
        let learning_days = r.parse("learning.days", 0u32)?;
        let simulation_days = r.parse("simulation.days", 0u32)?;
        let beta = r.parse("disease.beta", crate::epidemic::DEFAULT_BETA)?;
        let incubation_days =
            r.parse("disease.incubation_days", crate::epidemic::DEFAULT_INCUBATION_DAYS)?;
        let infectious_days =
            r.parse("disease.infectious_days", crate::epidemic::DEFAULT_INFECTIOUS_DAYS)?;
        let seed_region = match r.raw("seed.region") {
            None => SeedRegion::Random,
            Some("random") => SeedRegion::Random,
            Some(name) => SeedRegion::Named(name.to_string()),
        };
        let seed_cases = r.parse("seed.cases", 100u32)?;
        let policies_raw = r.string("policies", "none,random,risk");
        let mut policies = Vec::new();
        for p in policies_raw.split(',') {
            let p = p.trim();
            let kind = PolicyKind::parse(p)
                .ok_or_else(|| Error::Config(format!("key `policies`: unknown policy `{p}`")))?;
            if policies.contains(&kind) {
                return Err(Error::Config(format!(
                    "key `policies`: duplicate policy `{p}`"
                )));
            }
            policies.push(kind);
        }
        let runs = r.parse("runs", 50u32)?;
        let base_seed = r.parse("base_seed", 42u64)?;
        let quota_mode = match r.raw("quota.mode") {
            None | Some("paired") => QuotaMode::Paired,
            Some("adaptive") => QuotaMode::Adaptive,
            Some(v) => {
                return Err(Error::Config(format!(
                    "key `quota.mode`: expected paired or adaptive, got `{v}`"
                )))
            }
        };
        let sync_threshold = r.parse("sync.threshold", 0.1f64)?;
        let reduction_horizon =
            r.parse("reduction.horizon_days", simulation_days.min(30).max(1))?;
        let per_region_series = r.bool("series.per_region", true)?;
        let synth_seed = match r.raw("synth.seed") {
            None => None,
            Some(v) => Some(v.parse::<u64>().map_err(|_| {
                Error::Config(format!("key `synth.seed`: cannot parse `{v}` as u64"))
            })?),
        };
        let synth_start = match r.raw("synth.start_date") {
            None => Timestamp::parse_date("2013-01-01").unwrap(),
            Some(v) => Timestamp::parse_date(v)
                .map_err(|_| Error::Config(format!("key `synth.start_date`: bad date `{v}`")))?,
        };
        let two_metapop_population = r.parse("synth.two_metapop.population", 5_000u32)?;
        let two_metapop_traveler_fraction =
            r.parse("synth.two_metapop.traveler_fraction", 0.1f64)?;
        let het_regions = r.parse("synth.heterogeneous.regions", 10u32)?;
        let het_population = r.parse("synth.heterogeneous.population", 20_000u32)?;
        let het_region_populations = match r.raw("synth.heterogeneous.region_populations") {
            None => None,
            Some(v) => {
                let mut pops = Vec::new();
                for part in v.split(',') {
                    let pop: u32 = part.trim().parse().map_err(|_| {
                        Error::Config(format!(
                            "key `synth.heterogeneous.region_populations`: bad population `{part}`"
                        ))
                    })?;
                    pops.push(pop);
                }
                Some(pops)
            }
        };
        let het_mobile_fraction = r.parse("synth.heterogeneous.mobile_fraction", 0.05f64)?;
        let het_away_min = r.parse("synth.heterogeneous.away_min", 0.05f64)?;
        let het_away_max = r.parse("synth.heterogeneous.away_max", 0.3f64)?;

        let rank_profiles = r.raw("rank.profiles").map(PathBuf::from);
        let rank_state = r.raw("rank.state").map(PathBuf::from);

        r.finish()?;

        let experiment = match trace_source {
            None => None,
            Some(trace_source) => {
                let cfg = ExperimentConfig {
                    trace_source,
                    trace_regions,
                    learning_days,
                    simulation_days,
                    beta,
                    incubation_days,
                    infectious_days,
                    seed_region,
                    seed_cases,
                    policies,
                    runs,
                    base_seed,
                    quota_mode,
                    sync_threshold,
                    reduction_horizon,
                    per_region_series,
                    synth_seed,
                    synth_start,
                    two_metapop_population,
                    two_metapop_traveler_fraction,
                    het_regions,
                    het_population,
                    het_region_populations,
                    het_mobile_fraction,
                    het_away_min,
                    het_away_max,
                };
                cfg.validate()?;
                Some(cfg)
            }
        };
        let rank = match (rank_profiles, rank_state) {
            (None, None) => None,
            (Some(profiles), Some(state)) => Some(RankInputs { profiles, state }),
            _ => {
                return Err(Error::Config(
                    "rank.profiles and rank.state must be given together".to_string(),
                ))
            }
        };
        Ok(AppConfig { experiment, rank })
    }

    pub fn parse_str(text: &str) -> Result<AppConfig> {
        AppConfig::from_kv(&KvFile::parse(text)?)
    }

    pub fn load(path: &Path) -> Result<AppConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        AppConfig::parse_str(&text)
    }

    pub fn require_experiment(&self) -> Result<&ExperimentConfig> {
        self.experiment.as_ref().ok_or_else(|| {
            Error::Config("config does not define an experiment (missing trace.source)".to_string())
        })
    }

    pub fn require_rank(&self) -> Result<&RankInputs> {
        self.rank.as_ref().ok_or_else(|| {
            Error::Config("config does not define rank inputs (rank.profiles, rank.state)".to_string())
        })
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_days < 1 {
            return Err(Error::Config("learning.days must be >= 1".to_string()));
        }
        if self.simulation_days < 1 {
            return Err(Error::Config("simulation.days must be >= 1".to_string()));
        }
        if self.policies.is_empty() {
            return Err(Error::Config("policies must not be empty".to_string()));
        }
        if self.runs < 1 {
            return Err(Error::Config("runs must be >= 1".to_string()));
        }
        if self.seed_cases < 1 {
            return Err(Error::Config("seed.cases must be >= 1".to_string()));
        }
        if !(0.0 < self.sync_threshold && self.sync_threshold < 1.0) {
            return Err(Error::Config(
                "sync.threshold must lie in (0, 1)".to_string(),
            ));
        }
        if self.reduction_horizon < 1 || self.reduction_horizon > self.simulation_days {
            return Err(Error::Config(format!(
                "reduction.horizon_days must lie in [1, simulation.days = {}]",
                self.simulation_days
            )));
        }
        if let Some(pops) = &self.het_region_populations {
            if pops.len() != self.het_regions as usize {
                return Err(Error::Config(format!(
                    "synth.heterogeneous.region_populations lists {} regions but synth.heterogeneous.regions = {}",
                    pops.len(),
                    self.het_regions
                )));
            }
            let sum: u64 = pops.iter().map(|&p| p as u64).sum();
            if sum != self.het_population as u64 {
                return Err(Error::Config(format!(
                    "synth.heterogeneous.region_populations sums to {sum} but synth.heterogeneous.population = {}",
                    self.het_population
                )));
            }
        }
        self.disease_params()?;
        Ok(())
    }

    pub fn disease_params(&self) -> Result<DiseaseParams> {
        DiseaseParams::from_periods(self.beta, self.incubation_days, self.infectious_days)
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn resolved_synth_seed(&self) -> u64 {
        self.synth_seed
            .unwrap_or_else(|| derive_seed(self.base_seed, STREAM_SYNTH, 0))
    }

    /// Serializes every effective key in canonical order; parsing the result
    /// reproduces this config exactly.
    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::default();
        let source = match &self.trace_source {
            TraceSource::File(p) => format!("file:{}", p.display()),
            TraceSource::TwoMetapop => "two_metapop".to_string(),
            TraceSource::Heterogeneous => "heterogeneous".to_string(),
        };
        kv.set("trace.source", source);
        if let Some(p) = &self.trace_regions {
            kv.set("trace.regions", p.display());
        }
        kv.set("learning.days", self.learning_days);
        kv.set("simulation.days", self.simulation_days);
        kv.set("disease.beta", self.beta);
        kv.set("disease.incubation_days", self.incubation_days);
        kv.set("disease.infectious_days", self.infectious_days);
        match &self.seed_region {
            SeedRegion::Random => kv.set("seed.region", "random"),
            SeedRegion::Named(n) => kv.set("seed.region", n),
        }
        kv.set("seed.cases", self.seed_cases);
        let policies: Vec<String> = self.policies.iter().map(|p| p.to_string()).collect();
        kv.set("policies", policies.join(","));
        kv.set("runs", self.runs);
        kv.set("base_seed", self.base_seed);
        kv.set(
            "quota.mode",
            match self.quota_mode {
                QuotaMode::Paired => "paired",
                QuotaMode::Adaptive => "adaptive",
            },
        );
        kv.set("sync.threshold", self.sync_threshold);
        kv.set("reduction.horizon_days", self.reduction_horizon);
        kv.set("series.per_region", self.per_region_series);
        if let Some(s) = self.synth_seed {
            kv.set("synth.seed", s);
        }
        let start = self.synth_start.to_string();
        kv.set("synth.start_date", &start[..10]);
        kv.set("synth.two_metapop.population", self.two_metapop_population);
        kv.set(
            "synth.two_metapop.traveler_fraction",
            self.two_metapop_traveler_fraction,
        );
        kv.set("synth.heterogeneous.regions", self.het_regions);
        kv.set("synth.heterogeneous.population", self.het_population);
        if let Some(pops) = &self.het_region_populations {
            let list: Vec<String> = pops.iter().map(|p| p.to_string()).collect();
            kv.set("synth.heterogeneous.region_populations", list.join(","));
        }
        kv.set(
            "synth.heterogeneous.mobile_fraction",
            self.het_mobile_fraction,
        );
        kv.set("synth.heterogeneous.away_min", self.het_away_min);
        kv.set("synth.heterogeneous.away_max", self.het_away_max);
        kv
    }
}

// ---------------------------------------------------------------------------
// metrics

/// Synchronization delay between two regional series.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DelayResult {
    pub days: u32,
    /// True when either region never reached the threshold (the delay is
    /// then reported as the full horizon).
    pub censored: bool,
}

fn first_crossing(series: &[RegionTally], threshold: f64) -> Option<u32> {
    for (d, t) in series.iter().enumerate() {
        let n = t.occupancy();
        if n == 0 {
            continue;
        }
        let cum = (t.e + t.i + t.r) as f64 / n as f64;
        if cum >= threshold {
            return Some(d as u32);
        }
    }
    None
}

/// Absolute difference between the first days two regions reach a cumulative
/// incidence threshold (fraction of current occupancy); censored at the
/// horizon when either never does.
pub fn compute_delay(a: &[RegionTally], b: &[RegionTally], threshold: f64) -> Result<DelayResult> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::InvalidParams(
            "delay needs two equal-length non-empty series".to_string(),
        ));
    }
    if !(0.0 < threshold && threshold < 1.0) {
        return Err(Error::InvalidParams(format!(
            "threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let horizon = (a.len() - 1) as u32;
    match (first_crossing(a, threshold), first_crossing(b, threshold)) {
        (Some(fa), Some(fb)) => Ok(DelayResult {
            days: fa.abs_diff(fb),
            censored: false,
        }),
        _ => Ok(DelayResult {
            days: horizon,
            censored: true,
        }),
    }
}

/// Percentage reduction of cumulative infections at a horizon day relative
/// to a baseline; `None` when the baseline has no infections (undefined).
pub fn compute_reduction(
    baseline: &EpidemicSeries,
    treated: &EpidemicSeries,
    horizon: u32,
) -> Result<Option<f64>> {
    let base = baseline.at(horizon)?.cum_infected;
    let treat = treated.at(horizon)?.cum_infected;
    if base == 0 {
        return Ok(None);
    }
    Ok(Some(100.0 * (1.0 - treat as f64 / base as f64)))
}

// ---------------------------------------------------------------------------
// experiment execution

/// Everything recorded about one (policy, run) simulation.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub policy: PolicyKind,
    pub run: u32,
    pub cum_infected_at_horizon: u64,
    pub cum_infected_final: u64,
    pub quarantined_total: u64,
    pub delay: Option<DelayResult>,
    pub series_file: String,
    pub regions_file: Option<String>,
    pub quarantine_file: Option<String>,
}

#[derive(Debug, Clone)]
pub struct PolicySummary {
    pub policy: PolicyKind,
    pub mean_cum_infected_at_horizon: f64,
    pub stddev_cum_infected_at_horizon: f64,
    pub mean_quarantined_total: f64,
    pub median_delay_days: Option<f64>,
    pub censored_delays: Option<u32>,
}

#[derive(Debug, Clone)]
pub struct ReductionSummary {
    pub baseline: PolicyKind,
    pub treated: PolicyKind,
    /// Mean over runs of the paired per-run reduction percentages.
    pub mean_pct: f64,
    pub undefined_runs: u32,
}

#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub runs: u32,
    pub base_seed: u64,
    pub horizon: u32,
    pub population: u64,
    pub n_regions: usize,
    pub sync_threshold: f64,
    pub parse_report: ParseReport,
    pub profiled_users: u64,
    pub excluded_users: u64,
    pub seed_clamped_runs: u32,
    pub policies: Vec<PolicySummary>,
    pub reductions: Vec<ReductionSummary>,
    pub records: Vec<RunRecord>,
}

impl ExperimentSummary {
    pub fn policy(&self, kind: PolicyKind) -> Option<&PolicySummary> {
        self.policies.iter().find(|p| p.policy == kind)
    }

    pub fn reduction(&self, baseline: PolicyKind, treated: PolicyKind) -> Option<&ReductionSummary> {
        self.reductions
            .iter()
            .find(|r| r.baseline == baseline && r.treated == treated)
    }

    pub fn records_for(&self, kind: PolicyKind) -> Vec<&RunRecord> {
        self.records.iter().filter(|r| r.policy == kind).collect()
    }

    /// Per-run paired values `(baseline, treated)` of cumulative infections
    /// at the horizon.
    pub fn paired_cum_infected(
        &self,
        baseline: PolicyKind,
        treated: PolicyKind,
    ) -> Vec<(u64, u64)> {
        let mut out = Vec::new();
        for j in 0..self.runs {
            let b = self
                .records
                .iter()
                .find(|r| r.policy == baseline && r.run == j);
            let t = self
                .records
                .iter()
                .find(|r| r.policy == treated && r.run == j);
            if let (Some(b), Some(t)) = (b, t) {
                out.push((b.cum_infected_at_horizon, t.cum_infected_at_horizon));
            }
        }
        out
    }

    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::default();
        kv.set("experiment.runs", self.runs);
        kv.set("experiment.base_seed", self.base_seed);
        kv.set("experiment.horizon_days", self.horizon);
        kv.set("experiment.population", self.population);
        kv.set("experiment.regions", self.n_regions);
        kv.set("experiment.sync_threshold", self.sync_threshold);
        kv.set("trace.rows", self.parse_report.rows);
        kv.set("trace.accepted", self.parse_report.accepted);
        kv.set("trace.rejected", self.parse_report.rejected());
        kv.set("trace.profiled_users", self.profiled_users);
        kv.set("trace.excluded_users", self.excluded_users);
        kv.set("experiment.seed_clamped_runs", self.seed_clamped_runs);
        for p in &self.policies {
            let k = |suffix: &str| format!("policy.{}.{suffix}", p.policy);
            kv.set(&k("mean_cum_infected_at_horizon"), p.mean_cum_infected_at_horizon);
            kv.set(
                &k("stddev_cum_infected_at_horizon"),
                p.stddev_cum_infected_at_horizon,
            );
            kv.set(&k("mean_quarantined_total"), p.mean_quarantined_total);
            if let Some(m) = p.median_delay_days {
                kv.set(&k("median_delay_days"), m);
                kv.set(&k("censored_delays"), p.censored_delays.unwrap_or(0));
            }
        }
        for r in &self.reductions {
            let key = format!("reduction.{}_vs_{}.mean_pct", r.treated, r.baseline);
            kv.set(&key, r.mean_pct);
            let key = format!("reduction.{}_vs_{}.undefined_runs", r.treated, r.baseline);
            kv.set(&key, r.undefined_runs);
        }
        for rec in &self.records {
            let k = |suffix: &str| format!("run.{}.{}.{suffix}", rec.policy, rec.run);
            kv.set(&k("series"), &rec.series_file);
            if let Some(f) = &rec.regions_file {
                kv.set(&k("regions"), f);
            }
            if let Some(f) = &rec.quarantine_file {
                kv.set(&k("quarantine"), f);
            }
            kv.set(&k("cum_infected_at_horizon"), rec.cum_infected_at_horizon);
            kv.set(&k("cum_infected_final"), rec.cum_infected_final);
            kv.set(&k("quarantined_total"), rec.quarantined_total);
            if let Some(d) = rec.delay {
                kv.set(&k("delay_days"), d.days);
                kv.set(&k("delay_censored"), d.censored);
            }
        }
        kv
    }
}

/// Tracks every file the experiment creates so a failure can remove partial
/// outputs.
pub struct OutputTracker {
    created: Mutex<Vec<PathBuf>>,
}

impl OutputTracker {
    fn new() -> Self {
        OutputTracker {
            created: Mutex::new(Vec::new()),
        }
    }

    fn record(&self, path: &Path) {
        self.created.lock().unwrap().push(path.to_path_buf());
    }

    fn cleanup(&self) {
        for p in self.created.lock().unwrap().iter() {
            let _ = fs::remove_file(p);
        }
    }
}

fn write_file(tracker: &OutputTracker, path: &Path, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let file = fs::File::create(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    tracker.record(path);
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush()
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(())
}

/// Resolved inputs shared by every run of an experiment.
pub struct PreparedExperiment {
    pub trace: TraceSet,
    pub parse_report: ParseReport,
    pub profiles: ProfileSet,
    pub locations: LocationTable,
    pub params: DiseaseParams,
}

/// Writes the configured synthetic trace to `path`. Errors when the config's
/// trace source is a file.
pub fn write_synthetic_trace(config: &ExperimentConfig, path: &Path) -> Result<()> {
    let total_days = config.learning_days + config.simulation_days;
    let file = fs::File::create(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut w = BufWriter::new(file);
    match &config.trace_source {
        TraceSource::File(_) => {
            return Err(Error::Config(
                "trace.source is a file; nothing to generate".to_string(),
            ))
        }
        TraceSource::TwoMetapop => {
            let cfg = TwoMetapopConfig {
                population_per_region: config.two_metapop_population,
                traveler_fraction: config.two_metapop_traveler_fraction,
                days: total_days,
                seed: config.resolved_synth_seed(),
                start: config.synth_start,
            };
            generate_two_metapop(&cfg, &mut w)?;
        }
        TraceSource::Heterogeneous => {
            let cfg = HeterogeneousConfig {
                region_populations: config.het_region_populations.clone().unwrap_or_else(|| {
                    HeterogeneousConfig::town_village_split(config.het_regions, config.het_population)
                }),
                mobile_fraction: config.het_mobile_fraction,
                away_fraction_min: config.het_away_min,
                away_fraction_max: config.het_away_max,
                days: total_days,
                seed: config.resolved_synth_seed(),
                start: config.synth_start,
            };
            generate_heterogeneous(&cfg, &mut w)?;
        }
    }
    w.flush()
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(())
}

/// Loads or generates the experiment's trace. When the source is synthetic
/// the generated file is written to `out_dir/traces.csv` so the run is
/// reproducible from its artifacts.
pub fn load_trace(
    config: &ExperimentConfig,
    out_dir: &Path,
    strict: bool,
    tracker: Option<&OutputTracker>,
) -> Result<(TraceSet, ParseReport)> {
    let trace_path = match &config.trace_source {
        TraceSource::File(p) => p.clone(),
        _ => {
            let path = out_dir.join("traces.csv");
            if let Some(t) = tracker {
                t.record(&path);
            }
            write_synthetic_trace(config, &path)?;
            path
        }
    };

    let file = fs::File::open(&trace_path)
        .map_err(|e| Error::io(format!("opening {}", trace_path.display()), e))?;
    let mut builder = TraceSetBuilder::new();
    if let Some(regions_path) = &config.trace_regions {
        let rf = fs::File::open(regions_path)
            .map_err(|e| Error::io(format!("opening {}", regions_path.display()), e))?;
        let names = parse_region_registry(BufReader::new(rf))?;
        builder = builder.with_declared_regions(names.iter().map(|s| s.as_str()));
    }
    let (trace, parse_report) = parse_traces(BufReader::new(file), builder, strict)?;
    if trace.n_users() == 0 {
        return Err(Error::InvalidParams("trace holds no users".to_string()));
    }
    Ok((trace, parse_report))
}

/// Loads the trace, learns profiles over the learning window and builds the
/// simulation's location table.
pub fn prepare(
    config: &ExperimentConfig,
    out_dir: &Path,
    strict: bool,
    tracker: Option<&OutputTracker>,
) -> Result<PreparedExperiment> {
    config.validate()?;
    let (trace, parse_report) = load_trace(config, out_dir, strict, tracker)?;
    let anchor = trace.day_anchor().expect("non-empty trace has a span");
    let learning_window = TimeWindow::days(anchor, 0, config.learning_days)?;
    let profiles = build_profiles(&trace, learning_window)?;
    let locations = build_location_table(&trace, config.learning_days, config.simulation_days)?;
    let params = config.disease_params()?;
    Ok(PreparedExperiment {
        trace,
        parse_report,
        profiles,
        locations,
        params,
    })
}

fn choose_seed_region(
    config: &ExperimentConfig,
    trace: &TraceSet,
    day0_occupancy: &[u64],
    rng: &mut impl Rng,
) -> Result<RegionId> {
    match &config.seed_region {
        SeedRegion::Named(name) => {
            let r = trace
                .region(name)
                .ok_or_else(|| Error::UnknownRegion(name.clone()))?;
            Ok(r)
        }
        SeedRegion::Random => {
            let occupied: Vec<u32> = (0..trace.n_regions() as u32)
                .filter(|&l| day0_occupancy[l as usize] > 0)
                .collect();
            if occupied.is_empty() {
                return Err(Error::EmptySeedRegion("<all regions empty>".to_string()));
            }
            Ok(RegionId(occupied[rng.gen_range(0..occupied.len())]))
        }
    }
}

struct SingleRunOutput {
    record: RunRecord,
    series: EpidemicSeries,
    seed_clamped: bool,
}

/// One-of wrapper so a run can hold whichever policy it was configured with.
enum AnyPolicy<'a> {
    None(NonePolicy),
    Random(RandomPolicy),
    Risk(RiskPolicy<'a>),
}

impl AnyPolicy<'_> {
    fn log(&self) -> Option<&QuarantineLog> {
        match self {
            AnyPolicy::None(_) => None,
            AnyPolicy::Random(p) => Some(p.log()),
            AnyPolicy::Risk(p) => Some(p.log()),
        }
    }
}

impl PolicyHook for AnyPolicy<'_> {
    fn end_of_day(&mut self, state: &mut SimulationState) -> Result<()> {
        match self {
            AnyPolicy::None(p) => p.end_of_day(state),
            AnyPolicy::Random(p) => p.end_of_day(state),
            AnyPolicy::Risk(p) => p.end_of_day(state),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run_one(
    config: &ExperimentConfig,
    prep: &PreparedExperiment,
    day0_occupancy: &[u64],
    out_dir: &Path,
    tracker: &OutputTracker,
    policy: PolicyKind,
    run_idx: u32,
    quota_schedule: Option<&[u64]>,
) -> Result<SingleRunOutput> {
    let dynamics_seed = derive_seed(config.base_seed, STREAM_DYNAMICS + policy.id(), run_idx as u64);
    let mut state =
        SimulationState::new(&prep.locations, prep.trace.n_regions(), dynamics_seed)?;

    // outbreak seeding is independent of the policy arm
    let mut outbreak_rng =
        ChaCha8Rng::seed_from_u64(derive_seed(config.base_seed, STREAM_OUTBREAK, run_idx as u64));
    let region = choose_seed_region(config, &prep.trace, day0_occupancy, &mut outbreak_rng)?;
    let report = seed_outbreak(&mut state, region, config.seed_cases, &mut outbreak_rng)?;

    let rule = || match quota_schedule {
        Some(s) => QuotaRule::Schedule(s.to_vec()),
        None => QuotaRule::Adaptive,
    };
    let mut hook = match policy {
        PolicyKind::None => AnyPolicy::None(NonePolicy),
        PolicyKind::Random => AnyPolicy::Random(RandomPolicy::new(prep.params, rule())),
        PolicyKind::Risk => {
            AnyPolicy::Risk(RiskPolicy::new(prep.params, rule(), &prep.profiles))
        }
    };

    let series = run(
        &mut state,
        &prep.locations,
        config.simulation_days,
        &prep.params,
        Some(&mut hook),
        config.per_region_series,
    )?;

    let log: Option<&QuarantineLog> = hook.log();

    let tag = format!("{policy}_{run_idx:03}");
    let series_file = format!("series_{tag}.csv");
    write_file(tracker, &out_dir.join(&series_file), |w| series.write_csv(w))?;

    let regions_file = if config.per_region_series {
        let name = format!("regions_{tag}.csv");
        let region_names: Vec<String> =
            prep.trace.regions().names().map(|s| s.to_string()).collect();
        write_file(tracker, &out_dir.join(&name), |w| {
            series.write_region_csv(w, &region_names)
        })?;
        Some(name)
    } else {
        None
    };

    let quarantine_file = match log {
        Some(log) => {
            let name = format!("quarantine_{tag}.csv");
            write_file(tracker, &out_dir.join(&name), |w| {
                log.write_csv(
                    w,
                    |u| prep.trace.user_name(u).to_string(),
                    |r| prep.trace.region_name(r).to_string(),
                )
            })?;
            Some(name)
        }
        None => None,
    };

    let delay = if prep.trace.n_regions() == 2 && config.per_region_series {
        let a = series.region_series(RegionId(0)).unwrap();
        let b = series.region_series(RegionId(1)).unwrap();
        Some(compute_delay(&a, &b, config.sync_threshold)?)
    } else {
        None
    };

    let record = RunRecord {
        policy,
        run: run_idx,
        cum_infected_at_horizon: series.at(config.reduction_horizon)?.cum_infected,
        cum_infected_final: series.days().last().unwrap().cum_infected,
        quarantined_total: series.days().last().unwrap().quarantined,
        delay,
        series_file,
        regions_file,
        quarantine_file,
    };
    Ok(SingleRunOutput {
        record,
        series,
        seed_clamped: report.clamped(),
    })
}

/// Runs the full ensemble described by `config`, writing per-run CSVs, an
/// effective-config echo and a `summary.txt` into `out_dir`. Any run failure
/// aborts the experiment, removes partial outputs and names the failing
/// (policy, run).
pub fn run_experiment(
    config: &ExperimentConfig,
    out_dir: &Path,
    strict: bool,
) -> Result<ExperimentSummary> {
    fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
    let tracker = OutputTracker::new();
    let result = run_experiment_inner(config, out_dir, strict, &tracker);
    if result.is_err() {
        tracker.cleanup();
    }
    result
}

fn run_experiment_inner(
    config: &ExperimentConfig,
    out_dir: &Path,
    strict: bool,
    tracker: &OutputTracker,
) -> Result<ExperimentSummary> {
    let prep = prepare(config, out_dir, strict, Some(tracker))?;

    write_file(tracker, &out_dir.join("config.txt"), |w| {
        w.write_all(config.to_kv().serialize().as_bytes())
            .map_err(|e| Error::io("writing config echo", e))
    })?;

    let mut day0_occupancy = vec![0u64; prep.trace.n_regions()];
    for &loc in prep.locations.row(0) {
        day0_occupancy[loc as usize] += 1;
    }

    // the none arm is the reduction baseline and, in paired quota mode, the
    // source of the treated arms' quarantine schedules
    let emit_none = config.policies.contains(&PolicyKind::None);
    let has_treated = config.policies.iter().any(|p| *p != PolicyKind::None);
    let needs_baseline = emit_none || (config.quota_mode == QuotaMode::Paired && has_treated);

    let run_indices: Vec<u32> = (0..config.runs).collect();
    let per_run: Vec<Result<Vec<SingleRunOutput>>> = run_indices
        .par_iter()
        .map(|&j| -> Result<Vec<SingleRunOutput>> {
            let mut outputs = Vec::new();
            let wrap = |policy: PolicyKind, e: Error| Error::RunFailed {
                policy: policy.to_string(),
                run: j,
                source: Box::new(e),
            };

            let baseline = if needs_baseline {
                Some(
                    run_one(
                        config,
                        &prep,
                        &day0_occupancy,
                        out_dir,
                        tracker,
                        PolicyKind::None,
                        j,
                        None,
                    )
                    .map_err(|e| wrap(PolicyKind::None, e))?,
                )
            } else {
                None
            };

            let schedule = match (config.quota_mode, &baseline) {
                (QuotaMode::Paired, Some(b)) => Some(build_quota_schedule(
                    &b.series,
                    &prep.params,
                    prep.trace.n_users() as u64,
                )),
                _ => None,
            };

            for &policy in &config.policies {
                if policy == PolicyKind::None {
                    continue; // already run above
                }
                let out = run_one(
                    config,
                    &prep,
                    &day0_occupancy,
                    out_dir,
                    tracker,
                    policy,
                    j,
                    schedule.as_deref(),
                )
                .map_err(|e| wrap(policy, e))?;
                outputs.push(out);
            }
            if emit_none {
                outputs.insert(0, baseline.expect("baseline computed when emitted"));
            } else if let Some(b) = baseline {
                // baseline artifacts are not part of the requested output
                for f in [
                    Some(b.record.series_file.clone()),
                    b.record.regions_file.clone(),
                ]
                .into_iter()
                .flatten()
                {
                    let _ = fs::remove_file(out_dir.join(f));
                }
            }
            Ok(outputs)
        })
        .collect();

    let mut records: Vec<RunRecord> = Vec::new();
    let mut series_by_key: Vec<(PolicyKind, u32, EpidemicSeries)> = Vec::new();
    let mut seed_clamped_runs = 0u32;
    for result in per_run {
        for out in result? {
            if out.seed_clamped && out.record.policy == PolicyKind::None {
                seed_clamped_runs += 1;
            }
            series_by_key.push((out.record.policy, out.record.run, out.series));
            records.push(out.record);
        }
    }
    records.sort_by_key(|r| (r.policy.id(), r.run));
    series_by_key.sort_by_key(|(p, j, _)| (p.id(), *j));

    // per-policy statistics
    let mut policies = Vec::new();
    for &policy in &config.policies {
        let of_policy: Vec<&RunRecord> = records.iter().filter(|r| r.policy == policy).collect();
        let cums: Vec<f64> = of_policy
            .iter()
            .map(|r| r.cum_infected_at_horizon as f64)
            .collect();
        let quars: Vec<f64> = of_policy
            .iter()
            .map(|r| r.quarantined_total as f64)
            .collect();
        let delays: Vec<f64> = of_policy
            .iter()
            .filter_map(|r| r.delay.map(|d| d.days as f64))
            .collect();
        let censored = of_policy
            .iter()
            .filter(|r| r.delay.is_some_and(|d| d.censored))
            .count() as u32;
        policies.push(PolicySummary {
            policy,
            mean_cum_infected_at_horizon: stats::mean(&cums),
            stddev_cum_infected_at_horizon: stats::sample_std(&cums),
            mean_quarantined_total: stats::mean(&quars),
            median_delay_days: (!delays.is_empty()).then(|| stats::median(&delays)),
            censored_delays: (!delays.is_empty()).then_some(censored),
        });
    }

    // pairwise reductions (every ordered pair of configured policies)
    let mut reductions = Vec::new();
    for &baseline in &config.policies {
        for &treated in &config.policies {
            if baseline == treated {
                continue;
            }
            let mut pcts = Vec::new();
            let mut undefined = 0u32;
            for j in 0..config.runs {
                let b = series_by_key
                    .iter()
                    .find(|(p, r, _)| *p == baseline && *r == j);
                let t = series_by_key
                    .iter()
                    .find(|(p, r, _)| *p == treated && *r == j);
                if let (Some((_, _, bs)), Some((_, _, ts))) = (b, t) {
                    match compute_reduction(bs, ts, config.reduction_horizon)? {
                        Some(pct) => pcts.push(pct),
                        None => undefined += 1,
                    }
                }
            }
            if !pcts.is_empty() || undefined > 0 {
                reductions.push(ReductionSummary {
                    baseline,
                    treated,
                    mean_pct: stats::mean(&pcts),
                    undefined_runs: undefined,
                });
            }
        }
    }

    let summary = ExperimentSummary {
        runs: config.runs,
        base_seed: config.base_seed,
        horizon: config.reduction_horizon,
        population: prep.trace.n_users() as u64,
        n_regions: prep.trace.n_regions(),
        sync_threshold: config.sync_threshold,
        parse_report: prep.parse_report,
        profiled_users: prep.profiles.n_profiled() as u64,
        excluded_users: prep.profiles.excluded().len() as u64,
        seed_clamped_runs,
        policies,
        reductions,
        records,
    };
    write_file(tracker, &out_dir.join("summary.txt"), |w| {
        w.write_all(summary.to_kv().serialize().as_bytes())
            .map_err(|e| Error::io("writing summary", e))
    })?;
    Ok(summary)
}
