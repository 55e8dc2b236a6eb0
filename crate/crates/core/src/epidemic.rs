//! Discrete-time stochastic SEIR engine over individual daily locations.
//!
//! One simulated day advances in a fixed order: non-quarantined individuals
//! move to their modal region for the day, occupancy is tallied, compartment
//! transitions are drawn per individual (stage clocks with duration-exact
//! daily probabilities, then infections with probability
//! `1 - exp(-beta * I_mid / N)` against the day's trapezoidal-mean
//! infectious count), the policy hook may quarantine, and the day's tallies
//! are recorded. The scheme's per-individual expectations match the
//! mean-field equations: stage sojourns average exactly `1/k` and `1/gamma`
//! days, so the effective reproduction number stays `beta/gamma`. A run
//! consumes a single seeded RNG stream and iterates individuals in
//! user-registry order, so a `(seed, inputs, policy)` triple reproduces
//! bit-identical output regardless of how many runs execute in parallel
//! around it.

use crate::error::{Error, Result};
use crate::risk::RegionState;
use crate::trace::{LocationTable, RegionId, UserId};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{BufRead, Write};

pub const SERIES_HEADER: &str = "day,S,E,I,R,cum_infected,quarantined";
pub const REGION_SERIES_HEADER: &str = "day,region_id,S,E,I,R";

/// Per-day disease rates. Defaults follow published estimates for the 2014
/// Ebola outbreak in Sierra Leone: mean incubation 5.3 days, mean infectious
/// period 5.61 days, transmission 0.45/day (r0 = beta/gamma, about 2.53).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiseaseParams {
    beta: f64,
    k: f64,
    gamma: f64,
}

pub const DEFAULT_BETA: f64 = 0.45;
pub const DEFAULT_INCUBATION_DAYS: f64 = 5.3;
pub const DEFAULT_INFECTIOUS_DAYS: f64 = 5.61;

impl DiseaseParams {
    /// `beta`: transmission rate per day; `k`: incubation (E to I) rate per
    /// day; `gamma`: removal rate per day. All must be positive and finite.
    pub fn new(beta: f64, k: f64, gamma: f64) -> Result<Self> {
        for (name, v) in [("beta", beta), ("k", k), ("gamma", gamma)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParams(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(DiseaseParams { beta, k, gamma })
    }

    /// Rates from mean period lengths in days.
    pub fn from_periods(beta: f64, incubation_days: f64, infectious_days: f64) -> Result<Self> {
        if !(incubation_days.is_finite() && incubation_days > 0.0)
            || !(infectious_days.is_finite() && infectious_days > 0.0)
        {
            return Err(Error::InvalidParams(
                "period lengths must be positive".to_string(),
            ));
        }
        DiseaseParams::new(beta, 1.0 / incubation_days, 1.0 / infectious_days)
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Basic reproduction number, derived as `beta / gamma`.
    pub fn r0(&self) -> f64 {
        self.beta / self.gamma
    }

    /// Daily E to I transition probability, `min(k, 1)`.
    ///
    /// The stage clocks use the plain rate rather than `1 - exp(-k)`: a
    /// geometric holding time with success probability `p` has mean `1/p`
    /// days, so `p = k` keeps the mean incubation period at exactly `1/k`
    /// days. The exponential form would stretch every stage by about half a
    /// day, inflating the effective reproduction number to
    /// `beta / (1 - exp(-gamma))` and the final epidemic size with it.
    pub fn p_incubation(&self) -> f64 {
        self.k.min(1.0)
    }

    /// Daily I to R transition probability, `min(gamma, 1)`; see
    /// [`DiseaseParams::p_incubation`] for why the plain rate is used.
    pub fn p_removal(&self) -> f64 {
        self.gamma.min(1.0)
    }
}

impl Default for DiseaseParams {
    fn default() -> Self {
        DiseaseParams::from_periods(DEFAULT_BETA, DEFAULT_INCUBATION_DAYS, DEFAULT_INFECTIOUS_DAYS)
            .expect("default parameters are valid")
    }
}

/// Force of infection in a region: `beta * I / N`, defined as 0 for an
/// empty region.
pub fn force_of_infection(infectious: u64, occupancy: u64, params: &DiseaseParams) -> f64 {
    if occupancy == 0 {
        return 0.0;
    }
    params.beta * infectious as f64 / occupancy as f64
}

/// SEIR compartment; transitions only ever move forward (R is absorbing).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Compartment {
    Susceptible = 0,
    Exposed = 1,
    Infectious = 2,
    Removed = 3,
}

/// Compartment occupancy of one region.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RegionTally {
    pub s: u64,
    pub e: u64,
    pub i: u64,
    pub r: u64,
}

impl RegionTally {
    pub fn occupancy(&self) -> u64 {
        self.s + self.e + self.i + self.r
    }
}

/// Global counts for one day of an [`EpidemicSeries`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DayCounts {
    pub s: u64,
    pub e: u64,
    pub i: u64,
    pub r: u64,
    pub cum_infected: u64,
    pub quarantined: u64,
}

impl DayCounts {
    pub fn population(&self) -> u64 {
        self.s + self.e + self.i + self.r
    }
}

/// Full simulation state at one day: per-individual compartment, location and
/// quarantine pin, per-region tallies, cumulative counters and the run's RNG.
#[derive(Debug, Clone)]
pub struct SimulationState {
    day: u32,
    compartments: Vec<Compartment>,
    regions: Vec<u32>,
    quarantined: Vec<bool>,
    tallies: Vec<RegionTally>,
    cum_infected: u64,
    quarantined_count: u64,
    stayed_put: u64,
    rng: ChaCha8Rng,
}

impl SimulationState {
    /// Initial all-susceptible state at day 0, located per the table's row 0.
    pub fn new(locations: &LocationTable, n_regions: usize, dynamics_seed: u64) -> Result<Self> {
        let n = locations.n_users();
        let mut regions = Vec::with_capacity(n);
        for u in 0..n {
            let r = locations.location(0, u).ok_or_else(|| {
                Error::InvalidParams(format!("user index {u} has no day-0 location"))
            })?;
            regions.push(r.0);
        }
        let mut state = SimulationState {
            day: 0,
            compartments: vec![Compartment::Susceptible; n],
            regions,
            quarantined: vec![false; n],
            tallies: vec![RegionTally::default(); n_regions],
            cum_infected: 0,
            quarantined_count: 0,
            stayed_put: 0,
            rng: ChaCha8Rng::seed_from_u64(dynamics_seed),
        };
        state.recount();
        Ok(state)
    }

    pub fn day(&self) -> u32 {
        self.day
    }

    pub fn population(&self) -> u64 {
        self.compartments.len() as u64
    }

    pub fn n_regions(&self) -> usize {
        self.tallies.len()
    }

    pub fn compartment(&self, u: UserId) -> Compartment {
        self.compartments[u.index()]
    }

    pub fn region_of(&self, u: UserId) -> RegionId {
        RegionId(self.regions[u.index()])
    }

    pub fn is_quarantined(&self, u: UserId) -> bool {
        self.quarantined[u.index()]
    }

    pub fn quarantined_count(&self) -> u64 {
        self.quarantined_count
    }

    pub fn cum_infected(&self) -> u64 {
        self.cum_infected
    }

    /// Individuals that moved nowhere because a location was missing.
    pub fn stayed_put_count(&self) -> u64 {
        self.stayed_put
    }

    pub fn tallies(&self) -> &[RegionTally] {
        &self.tallies
    }

    pub fn counts(&self) -> DayCounts {
        let mut c = DayCounts {
            cum_infected: self.cum_infected,
            quarantined: self.quarantined_count,
            ..DayCounts::default()
        };
        for t in &self.tallies {
            c.s += t.s;
            c.e += t.e;
            c.i += t.i;
            c.r += t.r;
        }
        c
    }

    /// Global infectious prevalence `I(t) / N`.
    pub fn prevalence(&self) -> f64 {
        let c = self.counts();
        c.i as f64 / self.population() as f64
    }

    /// Population not yet quarantined.
    pub fn free_population(&self) -> u64 {
        self.population() - self.quarantined_count
    }

    /// Not-yet-quarantined users in registry order.
    pub fn eligible_users(&self) -> Vec<UserId> {
        (0..self.compartments.len() as u32)
            .filter(|&u| !self.quarantined[u as usize])
            .map(UserId)
            .collect()
    }

    /// Current-day occupancy fractions per region (`I_l/N_l`, `S_l/N_l`),
    /// zero for empty regions.
    pub fn region_state(&self) -> RegionState {
        let mut infected = Vec::with_capacity(self.tallies.len());
        let mut susceptible = Vec::with_capacity(self.tallies.len());
        for t in &self.tallies {
            let n = t.occupancy();
            if n == 0 {
                infected.push(0.0);
                susceptible.push(0.0);
            } else {
                infected.push(t.i as f64 / n as f64);
                susceptible.push(t.s as f64 / n as f64);
            }
        }
        RegionState::new(self.day, infected, susceptible).expect("tallies produce valid fractions")
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Pins a user to their current region. Errors when already quarantined;
    /// the pin never lifts for the rest of the run.
    pub fn quarantine(&mut self, u: UserId) -> Result<()> {
        let idx = u.index();
        if self.quarantined[idx] {
            return Err(Error::AlreadyQuarantined(u.0));
        }
        self.quarantined[idx] = true;
        self.quarantined_count += 1;
        Ok(())
    }

    fn recount(&mut self) {
        for t in self.tallies.iter_mut() {
            *t = RegionTally::default();
        }
        for (u, &c) in self.compartments.iter().enumerate() {
            let t = &mut self.tallies[self.regions[u] as usize];
            match c {
                Compartment::Susceptible => t.s += 1,
                Compartment::Exposed => t.e += 1,
                Compartment::Infectious => t.i += 1,
                Compartment::Removed => t.r += 1,
            }
        }
    }

    fn assert_conserved(&self) {
        let c = self.counts();
        assert_eq!(
            c.population(),
            self.population(),
            "compartment totals diverged from the population at day {}",
            self.day
        );
    }
}

/// Outcome of seeding an outbreak.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedReport {
    pub requested: u32,
    pub infected: u32,
}

impl SeedReport {
    pub fn clamped(&self) -> bool {
        self.infected < self.requested
    }
}

/// Seeds `n_cases` infectious individuals among the day-0 occupants of one
/// region, chosen by `rng` (fewer when the region holds fewer occupants, in
/// which case the report flags the clamp). Errors when the region is empty
/// on day 0. Seeded cases count toward cumulative infections.
pub fn seed_outbreak(
    state: &mut SimulationState,
    region: RegionId,
    n_cases: u32,
    rng: &mut impl Rng,
) -> Result<SeedReport> {
    if n_cases < 1 {
        return Err(Error::InvalidParams("n_cases must be >= 1".to_string()));
    }
    let occupants: Vec<usize> = (0..state.compartments.len())
        .filter(|&u| state.regions[u] == region.0)
        .collect();
    if occupants.is_empty() {
        return Err(Error::EmptySeedRegion(format!("#{}", region.0)));
    }
    let k = (n_cases as usize).min(occupants.len());
    let mut chosen: Vec<usize> = sample(rng, occupants.len(), k)
        .into_iter()
        .map(|i| occupants[i])
        .collect();
    chosen.sort_unstable();
    for u in chosen {
        state.compartments[u] = Compartment::Infectious;
    }
    state.cum_infected += k as u64;
    state.recount();
    state.assert_conserved();
    Ok(SeedReport {
        requested: n_cases,
        infected: k as u32,
    })
}

/// A quarantine policy invoked at the end of every simulated day, after
/// transitions and before the day is recorded. It may consume the run's RNG
/// stream (through the state) and quarantine individuals.
pub trait PolicyHook {
    fn end_of_day(&mut self, state: &mut SimulationState) -> Result<()>;
}

/// Advances the state one day. Fixed order: movement (quarantined
/// individuals stay pinned; a missing location keeps the previous region and
/// is counted), occupancy tally, per-individual transitions in user-registry
/// order (stage clocks first, then infections against the day's mean
/// infectious pressure; an individual advances at most one compartment per
/// day), policy hook, bookkeeping.
pub fn step_day(
    state: &mut SimulationState,
    locations: &LocationTable,
    params: &DiseaseParams,
    mut hook: Option<&mut dyn PolicyHook>,
) -> Result<()> {
    let next_day = state.day + 1;
    if next_day >= locations.rows() {
        return Err(Error::InsufficientCoverage {
            available: locations.rows().saturating_sub(1),
            needed: next_day,
        });
    }

    // 1. movement
    let row = locations.row(next_day);
    for u in 0..state.compartments.len() {
        if state.quarantined[u] {
            continue;
        }
        let loc = row[u];
        if loc == crate::trace::NO_LOCATION {
            state.stayed_put += 1;
        } else {
            state.regions[u] = loc;
        }
    }
    state.day = next_day;

    // 2. occupancy after movement
    state.recount();
    let infectious_pre: Vec<u64> = state.tallies.iter().map(|t| t.i).collect();

    // 3a. stage clocks (E to I, I to R), one draw per at-risk individual in
    // user-registry order; an individual advances at most one stage per day
    let p_incubation = params.p_incubation();
    let p_removal = params.p_removal();
    for u in 0..state.compartments.len() {
        let l = state.regions[u] as usize;
        match state.compartments[u] {
            Compartment::Exposed => {
                if state.rng.gen::<f64>() < p_incubation {
                    state.compartments[u] = Compartment::Infectious;
                    state.tallies[l].e -= 1;
                    state.tallies[l].i += 1;
                    state.cum_infected += 1;
                }
            }
            Compartment::Infectious => {
                if state.rng.gen::<f64>() < p_removal {
                    state.compartments[u] = Compartment::Removed;
                    state.tallies[l].i -= 1;
                    state.tallies[l].r += 1;
                }
            }
            _ => {}
        }
    }

    // 3b. infections against the day's average infectious pressure: the
    // trapezoidal mean of the counts before and after the stage clocks.
    // Either endpoint alone shifts the epidemic peak ~3 days against the
    // mean-field solution (a fresh case would transmit only from the next
    // day, or at full weight on its first partial day).
    let p_infection: Vec<f64> = state
        .tallies
        .iter()
        .zip(&infectious_pre)
        .map(|(t, &i_pre)| {
            let mid = 0.5 * (i_pre + t.i) as f64;
            let n = t.occupancy();
            if n == 0 {
                return 0.0;
            }
            let lambda = params.beta() * mid / n as f64;
            -(-lambda).exp_m1()
        })
        .collect();
    // one draw per susceptible wherever infection is possible, user order
    for u in 0..state.compartments.len() {
        let l = state.regions[u] as usize;
        if state.compartments[u] == Compartment::Susceptible {
            let p = p_infection[l];
            if p > 0.0 && state.rng.gen::<f64>() < p {
                state.compartments[u] = Compartment::Exposed;
                state.tallies[l].s -= 1;
                state.tallies[l].e += 1;
            }
        }
    }
    #[cfg(debug_assertions)]
    {
        let incremental = state.tallies.clone();
        state.recount();
        debug_assert_eq!(incremental, state.tallies, "incremental tallies diverged");
    }

    // 4. policy hook sees the finished day's state
    if let Some(h) = hook.as_deref_mut() {
        h.end_of_day(state)?;
    }

    // 5. bookkeeping
    state.assert_conserved();
    Ok(())
}

/// Global and optional per-region daily counts; entry 0 is day 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpidemicSeries {
    days: Vec<DayCounts>,
    per_region: Option<Vec<Vec<RegionTally>>>,
}

impl EpidemicSeries {
    pub fn days(&self) -> &[DayCounts] {
        &self.days
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    pub fn at(&self, day: u32) -> Result<&DayCounts> {
        self.days.get(day as usize).ok_or(Error::HorizonBeyondSeries {
            horizon: day,
            len: self.days.len(),
        })
    }

    /// Per-region tallies per day when recorded.
    pub fn per_region(&self) -> Option<&[Vec<RegionTally>]> {
        self.per_region.as_deref()
    }

    /// Daily tallies of one region across the whole series.
    pub fn region_series(&self, region: RegionId) -> Option<Vec<RegionTally>> {
        self.per_region
            .as_ref()
            .map(|days| days.iter().map(|row| row[region.index()]).collect())
    }

    pub fn write_csv<W: Write + ?Sized>(&self, w: &mut W) -> Result<()> {
        let io = |e| Error::io("writing series CSV", e);
        writeln!(w, "{SERIES_HEADER}").map_err(io)?;
        for (d, c) in self.days.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                d, c.s, c.e, c.i, c.r, c.cum_infected, c.quarantined
            )
            .map_err(io)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(reader: R) -> Result<EpidemicSeries> {
        let bad = |line: u64, reason: String| Error::MalformedCsv {
            kind: "series",
            line,
            reason,
        };
        let mut lines = reader.lines();
        match lines.next() {
            Some(Ok(h)) if h.trim_end_matches('\r') == SERIES_HEADER => {}
            Some(Ok(h)) => return Err(bad(1, format!("bad header `{h}`"))),
            Some(Err(e)) => return Err(Error::io("reading series CSV", e)),
            None => return Err(bad(1, "empty file".to_string())),
        }
        let mut days = Vec::new();
        for (idx, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io("reading series CSV", e))?;
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 {
                return Err(bad(idx as u64 + 2, "expected 7 fields".to_string()));
            }
            let mut nums = [0u64; 7];
            for (i, f) in fields.iter().enumerate() {
                nums[i] = f
                    .parse()
                    .map_err(|_| bad(idx as u64 + 2, format!("bad count `{f}`")))?;
            }
            if nums[0] != days.len() as u64 {
                return Err(bad(idx as u64 + 2, "day index out of sequence".to_string()));
            }
            days.push(DayCounts {
                s: nums[1],
                e: nums[2],
                i: nums[3],
                r: nums[4],
                cum_infected: nums[5],
                quarantined: nums[6],
            });
        }
        Ok(EpidemicSeries {
            days,
            per_region: None,
        })
    }

    /// Writes the optional per-region file `day,region_id,S,E,I,R`.
    pub fn write_region_csv<W: Write + ?Sized>(&self, w: &mut W, region_names: &[String]) -> Result<()> {
        let per_region = self.per_region.as_ref().ok_or_else(|| {
            Error::InvalidParams("per-region series was not recorded".to_string())
        })?;
        let io = |e| Error::io("writing per-region series CSV", e);
        writeln!(w, "{REGION_SERIES_HEADER}").map_err(io)?;
        for (d, row) in per_region.iter().enumerate() {
            for (l, t) in row.iter().enumerate() {
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    d, region_names[l], t.s, t.e, t.i, t.r
                )
                .map_err(io)?;
            }
        }
        Ok(())
    }

    /// Reads the per-region CSV back as one series per region (region order
    /// as first encountered, which matches registry order as written).
    pub fn read_region_csv<R: BufRead>(reader: R) -> Result<Vec<(String, Vec<RegionTally>)>> {
        let bad = |line: u64, reason: String| Error::MalformedCsv {
            kind: "per-region series",
            line,
            reason,
        };
        let mut lines = reader.lines();
        match lines.next() {
            Some(Ok(h)) if h.trim_end_matches('\r') == REGION_SERIES_HEADER => {}
            Some(Ok(h)) => return Err(bad(1, format!("bad header `{h}`"))),
            Some(Err(e)) => return Err(Error::io("reading per-region series CSV", e)),
            None => return Err(bad(1, "empty file".to_string())),
        }
        let mut order: Vec<String> = Vec::new();
        let mut series: Vec<Vec<RegionTally>> = Vec::new();
        for (idx, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io("reading per-region series CSV", e))?;
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 {
                return Err(bad(idx as u64 + 2, "expected 6 fields".to_string()));
            }
            let region = fields[1].to_string();
            let mut nums = [0u64; 4];
            for i in 0..4 {
                nums[i] = fields[i + 2]
                    .parse()
                    .map_err(|_| bad(idx as u64 + 2, format!("bad count `{}`", fields[i + 2])))?;
            }
            let pos = match order.iter().position(|r| *r == region) {
                Some(p) => p,
                None => {
                    order.push(region);
                    series.push(Vec::new());
                    order.len() - 1
                }
            };
            series[pos].push(RegionTally {
                s: nums[0],
                e: nums[1],
                i: nums[2],
                r: nums[3],
            });
        }
        Ok(order.into_iter().zip(series).collect())
    }
}

/// Runs `days` steps, recording a series of `days + 1` entries (day 0
/// included). Fails before stepping when the location table cannot cover the
/// requested horizon.
pub fn run(
    state: &mut SimulationState,
    locations: &LocationTable,
    days: u32,
    params: &DiseaseParams,
    mut hook: Option<&mut dyn PolicyHook>,
    record_regions: bool,
) -> Result<EpidemicSeries> {
    if locations.rows() < days + 1 {
        return Err(Error::InsufficientCoverage {
            available: locations.rows().saturating_sub(1),
            needed: days,
        });
    }
    let mut days_out = Vec::with_capacity(days as usize + 1);
    let mut per_region = record_regions.then(|| Vec::with_capacity(days as usize + 1));
    days_out.push(state.counts());
    if let Some(pr) = per_region.as_mut() {
        pr.push(state.tallies().to_vec());
    }
    for _ in 0..days {
        let h = match hook {
            Some(ref mut h) => Some(&mut **h as &mut dyn PolicyHook),
            None => None,
        };
        step_day(state, locations, params, h)?;
        days_out.push(state.counts());
        if let Some(pr) = per_region.as_mut() {
            pr.push(state.tallies().to_vec());
        }
    }
    Ok(EpidemicSeries {
        days: days_out,
        per_region,
    })
}
