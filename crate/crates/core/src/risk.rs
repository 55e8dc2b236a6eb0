//! Per-user contagion risk scores and deterministic risk rankings.
//!
//! A user's score couples exposure to infected regions with presence in
//! susceptible regions: over all ordered region pairs `(l, m)`,
//!
//! ```text
//! sum_{l,m} T_l * T_m * i_l * s_m  =  (T . i) * (T . s)
//! ```
//!
//! so the score is evaluated in `O(|regions|)` as the product of two dot
//! products. Multiplicative constants (the per-contact transmission rate and
//! the factor 2 a symmetrized pair sum would add) are dropped: they rescale
//! every score equally and never change a ranking. Scores are likewise not
//! normalized to their theoretical maximum.

use crate::error::{Error, Result};
use crate::trace::{MobilityProfile, RegionId, UserId};
use std::io::{BufRead, Write};

pub const RANKING_HEADER: &str = "rank,user_id,score";
pub const REGION_STATE_HEADER: &str = "region_id,i,s";

/// Per-region infected and susceptible fractions as of one day.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionState {
    day: u32,
    infected: Vec<f64>,
    susceptible: Vec<f64>,
}

impl RegionState {
    /// Fractions must lie in `[0, 1]` with `i + s <= 1` per region (exposed
    /// and recovered occupy the remainder).
    pub fn new(day: u32, infected: Vec<f64>, susceptible: Vec<f64>) -> Result<Self> {
        if infected.len() != susceptible.len() {
            return Err(Error::RegistryMismatch {
                profile: infected.len(),
                state: susceptible.len(),
            });
        }
        for (l, (&i, &s)) in infected.iter().zip(&susceptible).enumerate() {
            let ok = i.is_finite() && s.is_finite() && i >= 0.0 && s >= 0.0 && i + s <= 1.0 + 1e-12;
            if !ok {
                return Err(Error::InvalidParams(format!(
                    "region {l}: infected {i} / susceptible {s} out of range"
                )));
            }
        }
        Ok(RegionState {
            day,
            infected,
            susceptible,
        })
    }

    pub fn day(&self) -> u32 {
        self.day
    }

    pub fn n_regions(&self) -> usize {
        self.infected.len()
    }

    pub fn infected(&self) -> &[f64] {
        &self.infected
    }

    pub fn susceptible(&self) -> &[f64] {
        &self.susceptible
    }

    /// Reads the `region_id,i,s` CSV; row order defines the registry order.
    pub fn read_csv<R: BufRead>(reader: R, day: u32) -> Result<(Vec<String>, RegionState)> {
        let mut regions = Vec::new();
        let mut infected = Vec::new();
        let mut susceptible = Vec::new();
        let mut lines = reader.lines().enumerate();
        let bad = |line: usize, reason: String| Error::MalformedCsv {
            kind: "region state",
            line: line as u64 + 1,
            reason,
        };
        match lines.next() {
            Some((_, Ok(h))) if h.trim_end_matches('\r') == REGION_STATE_HEADER => {}
            Some((i, Ok(h))) => return Err(bad(i, format!("bad header `{h}`"))),
            Some((i, Err(e))) => return Err(bad(i, e.to_string())),
            None => return Err(bad(0, "empty file".to_string())),
        }
        for (idx, line) in lines {
            let line = line.map_err(|e| bad(idx, e.to_string()))?;
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let mut f = line.split(',');
            let region = f.next().unwrap_or("").to_string();
            let i: f64 = f
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(idx, "bad infected fraction".to_string()))?;
            let s: f64 = f
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(idx, "bad susceptible fraction".to_string()))?;
            if f.next().is_some() {
                return Err(bad(idx, "too many fields".to_string()));
            }
            if region.is_empty() || regions.contains(&region) {
                return Err(bad(idx, format!("bad or duplicate region `{region}`")));
            }
            regions.push(region);
            infected.push(i);
            susceptible.push(s);
        }
        Ok((regions, RegionState::new(day, infected, susceptible)?))
    }

    pub fn write_csv<W: Write + ?Sized>(&self, w: &mut W, region_names: &[String]) -> Result<()> {
        let io = |e| Error::io("writing region state CSV", e);
        writeln!(w, "{REGION_STATE_HEADER}").map_err(io)?;
        for (l, name) in region_names.iter().enumerate() {
            writeln!(w, "{},{},{}", name, self.infected[l], self.susceptible[l]).map_err(io)?;
        }
        Ok(())
    }
}

/// A user's contagion risk as of the state's day. Unitless; under the
/// `i + s <= 1` state invariant it lies in `[0, 0.25]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskScore {
    pub user: UserId,
    pub score: f64,
    pub day: u32,
}

/// Users ordered by descending score; equal scores order by user index.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskRanking {
    entries: Vec<RiskScore>,
}

impl RiskRanking {
    pub fn entries(&self) -> &[RiskScore] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The top `k` users (all of them when `k` exceeds the ranking).
    pub fn top(&self, k: usize) -> &[RiskScore] {
        &self.entries[..k.min(self.entries.len())]
    }

    /// Writes CSV `rank,user_id,score` with scores at 12 significant digits.
    pub fn write_csv<W: Write + ?Sized>(&self, w: &mut W, user_name: impl Fn(UserId) -> String) -> Result<()> {
        let io = |e| Error::io("writing ranking CSV", e);
        writeln!(w, "{RANKING_HEADER}").map_err(io)?;
        for (pos, e) in self.entries.iter().enumerate() {
            writeln!(w, "{},{},{:.11e}", pos + 1, user_name(e.user), e.score).map_err(io)?;
        }
        Ok(())
    }
}

fn check_registries(profile: &MobilityProfile, state: &RegionState) -> Result<()> {
    if profile.allocation().len() != state.n_regions() {
        return Err(Error::RegistryMismatch {
            profile: profile.allocation().len(),
            state: state.n_regions(),
        });
    }
    Ok(())
}

/// Factorized score `(T . i) * (T . s)`.
pub fn risk_score(profile: &MobilityProfile, state: &RegionState) -> Result<RiskScore> {
    check_registries(profile, state)?;
    let t = profile.allocation();
    let mut ti = 0.0;
    let mut ts = 0.0;
    for (l, &frac) in t.iter().enumerate() {
        ti += frac * state.infected()[l];
        ts += frac * state.susceptible()[l];
    }
    Ok(RiskScore {
        user: profile.user(),
        score: ti * ts,
        day: state.day(),
    })
}

/// Reference evaluation of the same score as the explicit double sum over
/// all ordered region pairs. Quadratic in the region count; it exists to
/// verify [`risk_score`] and is kept independent of it.
pub fn risk_score_bruteforce(profile: &MobilityProfile, state: &RegionState) -> Result<RiskScore> {
    check_registries(profile, state)?;
    let t = profile.allocation();
    let mut total = 0.0;
    for (l, &tl) in t.iter().enumerate() {
        for (m, &tm) in t.iter().enumerate() {
            total += tl * tm * state.infected()[l] * state.susceptible()[m];
        }
    }
    Ok(RiskScore {
        user: profile.user(),
        score: total,
        day: state.day(),
    })
}

/// Ranks the eligible users by descending score, ties by user index.
/// Every eligible user must resolve to a profile.
pub fn rank_users<'a, F>(profile_of: F, state: &RegionState, eligible: &[UserId]) -> Result<RiskRanking>
where
    F: Fn(UserId) -> Option<&'a MobilityProfile>,
{
    let mut entries = Vec::with_capacity(eligible.len());
    for &u in eligible {
        let profile = profile_of(u).ok_or(Error::MissingProfile(u.0))?;
        entries.push(risk_score(profile, state)?);
    }
    sort_ranking(&mut entries);
    Ok(RiskRanking { entries })
}

pub(crate) fn sort_ranking(entries: &mut [RiskScore]) {
    entries.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.user.0.cmp(&b.user.0)));
}

/// Convenience for tests and the FFI layer: a profile living outside any
/// trace registry, aligned with an explicit region count.
pub fn profile_from_fractions(user: UserId, fractions: &[f64]) -> Result<MobilityProfile> {
    MobilityProfile::from_allocation(user, fractions.to_vec())
}

#[allow(unused)]
pub fn region_id(i: u32) -> RegionId {
    RegionId(i)
}
