//! Quarantine policies: none, random, risk-ranked.
//!
//! Treatment here is movement restriction only: a quarantined individual is
//! pinned to the region they are in when selected, for the rest of the run,
//! and their disease course is untouched (a quarantined infectious person
//! keeps infecting within the pinned region).
//!
//! The daily budget follows the adaptive rate `xi(t) = beta * i(t)` applied
//! to the not-yet-quarantined population, with fractional quotas carried
//! over so the realized counts integrate the rate. The rate can be driven by
//! the run's own prevalence ([`QuotaRule::Adaptive`]) or by a precomputed
//! per-day schedule ([`QuotaRule::Schedule`]), which paired experiments
//! derive from their no-action baseline so that every treated arm quarantines
//! identical daily counts.

use crate::epidemic::{DiseaseParams, EpidemicSeries, PolicyHook, SimulationState};
use crate::error::{Error, Result};
use crate::risk::{rank_users, RegionState};
use crate::trace::{ProfileSet, RegionId, UserId};
use rand::Rng;
use std::fmt;
use std::io::Write;

pub const QUARANTINE_LOG_HEADER: &str = "day,user_id,region_id,policy,score";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyKind {
    None,
    Random,
    Risk,
}

impl PolicyKind {
    pub fn parse(s: &str) -> Option<PolicyKind> {
        match s {
            "none" => Some(PolicyKind::None),
            "random" => Some(PolicyKind::Random),
            "risk" => Some(PolicyKind::Risk),
            _ => None,
        }
    }

    /// Stable numeric id used in seed derivation.
    pub fn id(self) -> u64 {
        match self {
            PolicyKind::None => 0,
            PolicyKind::Random => 1,
            PolicyKind::Risk => 2,
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyKind::None => "none",
            PolicyKind::Random => "random",
            PolicyKind::Risk => "risk",
        })
    }
}

/// One quarantine decision. `score` is the risk score at selection time for
/// the risk policy and absent otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct QuarantineEntry {
    pub day: u32,
    pub user: UserId,
    pub region: RegionId,
    pub policy: PolicyKind,
    pub score: Option<f64>,
}

/// Append-only record of every quarantine decision of a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QuarantineLog {
    entries: Vec<QuarantineEntry>,
}

impl QuarantineLog {
    pub fn new() -> Self {
        QuarantineLog::default()
    }

    pub fn entries(&self) -> &[QuarantineEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Writes CSV `day,user_id,region_id,policy,score` (empty score field
    /// for the random policy).
    pub fn write_csv<W: Write + ?Sized>(
        &self,
        w: &mut W,
        user_name: impl Fn(UserId) -> String,
        region_name: impl Fn(RegionId) -> String,
    ) -> Result<()> {
        let io = |e| Error::io("writing quarantine log CSV", e);
        writeln!(w, "{QUARANTINE_LOG_HEADER}").map_err(io)?;
        for e in &self.entries {
            let score = match e.score {
                Some(s) => format!("{s:.11e}"),
                None => String::new(),
            };
            writeln!(
                w,
                "{},{},{},{},{}",
                e.day,
                user_name(e.user),
                region_name(e.region),
                e.policy,
                score
            )
            .map_err(io)?;
        }
        Ok(())
    }
}

/// Daily quota evaluated from a state's own prevalence: raw budget
/// `beta * i(t) * N_free(t)` plus the carried fraction, floored; the
/// remainder carries to the next day.
pub fn daily_quota(state: &SimulationState, params: &DiseaseParams, carry: f64) -> (u64, f64) {
    let raw = params.beta() * state.prevalence() * state.free_population() as f64;
    quota_from_raw(raw, carry)
}

fn quota_from_raw(raw: f64, carry: f64) -> (u64, f64) {
    let total = raw + carry;
    let count = total.floor().max(0.0) as u64;
    (count, total - count as f64)
}

/// Precomputes the per-day quarantine counts the adaptive rate would produce
/// along a reference series (normally a no-action baseline): day `t`'s raw
/// budget is `beta * I_ref(t)/N * N_free(t)` with `N_free` depleted by the
/// schedule itself. Feeding the same schedule to several policies makes their
/// daily counts identical by construction.
pub fn build_quota_schedule(
    reference: &EpidemicSeries,
    params: &DiseaseParams,
    population: u64,
) -> Vec<u64> {
    let mut schedule = Vec::with_capacity(reference.len().saturating_sub(1));
    let mut carry = 0.0;
    let mut free = population;
    for c in reference.days().iter().skip(1) {
        let prevalence = c.i as f64 / population as f64;
        let raw = params.beta() * prevalence * free as f64;
        let (count, new_carry) = quota_from_raw(raw, carry);
        let count = count.min(free);
        schedule.push(count);
        carry = new_carry;
        free -= count;
    }
    schedule
}

/// Where a policy's daily count comes from.
#[derive(Debug, Clone)]
pub enum QuotaRule {
    /// `xi(t) = beta * i(t)` of the run's own state, with carry.
    Adaptive,
    /// Fixed counts per day (index 0 applies to day 1).
    Schedule(Vec<u64>),
}

#[derive(Debug, Clone)]
struct Quota {
    rule: QuotaRule,
    carry: f64,
}

impl Quota {
    fn next(&mut self, state: &SimulationState, params: &DiseaseParams) -> u64 {
        match &self.rule {
            QuotaRule::Adaptive => {
                let (count, carry) = daily_quota(state, params, self.carry);
                self.carry = carry;
                count
            }
            QuotaRule::Schedule(counts) => counts
                .get(state.day() as usize - 1)
                .copied()
                .unwrap_or(0),
        }
    }
}

/// Uniform sample without replacement via partial Fisher-Yates; consumes
/// exactly `min(count, eligible)` draws from `rng`. The result is sorted by
/// user index so downstream application order is canonical.
pub fn select_random(eligible: &[UserId], count: usize, rng: &mut impl Rng) -> Vec<UserId> {
    let k = count.min(eligible.len());
    let mut pool = eligible.to_vec();
    for i in 0..k {
        let j = rng.gen_range(i..pool.len());
        pool.swap(i, j);
    }
    let mut selected = pool;
    selected.truncate(k);
    selected.sort_unstable();
    selected
}

/// Top-`count` eligible users by risk rank. Eligible users without a profile
/// are excluded from the ranking (and counted), never selected.
pub fn select_by_risk(
    eligible: &[UserId],
    count: usize,
    profiles: &ProfileSet,
    state: &RegionState,
) -> Result<(Vec<(UserId, f64)>, u64)> {
    let mut profiled = Vec::with_capacity(eligible.len());
    let mut skipped = 0u64;
    for &u in eligible {
        if profiles.get(u).is_some() {
            profiled.push(u);
        } else {
            skipped += 1;
        }
    }
    let ranking = rank_users(|u| profiles.get(u), state, &profiled)?;
    let selected = ranking
        .top(count)
        .iter()
        .map(|e| (e.user, e.score))
        .collect();
    Ok((selected, skipped))
}

/// Pins every listed user to their current region and logs the decision.
/// The compartment is untouched; an already-quarantined user is an error
/// (policies must select among eligible users only).
pub fn apply_quarantine(
    state: &mut SimulationState,
    users: &[(UserId, Option<f64>)],
    policy: PolicyKind,
    log: &mut QuarantineLog,
) -> Result<()> {
    for &(u, score) in users {
        state.quarantine(u)?;
        log.entries.push(QuarantineEntry {
            day: state.day(),
            user: u,
            region: state.region_of(u),
            policy,
            score,
        });
    }
    Ok(())
}

/// The no-action policy: never quarantines anyone and consumes no RNG, so a
/// run under it is identical to a run with the hook disabled.
#[derive(Debug, Default)]
pub struct NonePolicy;

impl PolicyHook for NonePolicy {
    fn end_of_day(&mut self, _state: &mut SimulationState) -> Result<()> {
        Ok(())
    }
}

/// Quarantines uniformly random eligible individuals, drawing from the run's
/// RNG stream at the hook point.
#[derive(Debug)]
pub struct RandomPolicy {
    params: DiseaseParams,
    quota: Quota,
    log: QuarantineLog,
}

impl RandomPolicy {
    pub fn new(params: DiseaseParams, rule: QuotaRule) -> Self {
        RandomPolicy {
            params,
            quota: Quota { rule, carry: 0.0 },
            log: QuarantineLog::new(),
        }
    }

    pub fn log(&self) -> &QuarantineLog {
        &self.log
    }
}

impl PolicyHook for RandomPolicy {
    fn end_of_day(&mut self, state: &mut SimulationState) -> Result<()> {
        let count = self.quota.next(state, &self.params);
        if count == 0 {
            return Ok(());
        }
        let eligible = state.eligible_users();
        let selected = select_random(&eligible, count as usize, state.rng_mut());
        let with_scores: Vec<(UserId, Option<f64>)> =
            selected.into_iter().map(|u| (u, None)).collect();
        apply_quarantine(state, &with_scores, PolicyKind::Random, &mut self.log)
    }
}

/// Quarantines the highest-risk eligible individuals, ranked against the
/// current day's occupancy fractions. Selection is deterministic and
/// consumes no RNG.
#[derive(Debug)]
pub struct RiskPolicy<'a> {
    params: DiseaseParams,
    quota: Quota,
    profiles: &'a ProfileSet,
    log: QuarantineLog,
    skipped_without_profile: u64,
}

impl<'a> RiskPolicy<'a> {
    pub fn new(params: DiseaseParams, rule: QuotaRule, profiles: &'a ProfileSet) -> Self {
        RiskPolicy {
            params,
            quota: Quota { rule, carry: 0.0 },
            profiles,
            log: QuarantineLog::new(),
            skipped_without_profile: 0,
        }
    }

    pub fn log(&self) -> &QuarantineLog {
        &self.log
    }

    /// Eligible-user selections skipped because no profile existed.
    pub fn skipped_without_profile(&self) -> u64 {
        self.skipped_without_profile
    }
}

impl PolicyHook for RiskPolicy<'_> {
    fn end_of_day(&mut self, state: &mut SimulationState) -> Result<()> {
        let count = self.quota.next(state, &self.params);
        if count == 0 {
            return Ok(());
        }
        let eligible = state.eligible_users();
        let region_state = state.region_state();
        let (selected, skipped) =
            select_by_risk(&eligible, count as usize, self.profiles, &region_state)?;
        self.skipped_without_profile += skipped;
        let with_scores: Vec<(UserId, Option<f64>)> = selected
            .into_iter()
            .map(|(u, score)| (u, Some(score)))
            .collect();
        apply_quarantine(state, &with_scores, PolicyKind::Risk, &mut self.log)
    }
}
