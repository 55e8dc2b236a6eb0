//! Synthetic trace generators standing in for real CDR data.
//!
//! Both generators emit the exact trace CSV format the parser ingests: one
//! event per user per day at 00:00 UTC, rows in day-major order,
//! byte-identical output for a given config and seed. Placing the daily
//! event at the day boundary makes presence constant within each day, so
//! modal-region extraction is exact (an intra-day event would split every
//! travel day into a 12h/12h tie decided by registry order).

use crate::error::{Error, Result};
use crate::time::Timestamp;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write;

/// Two equally sized metapopulations; a fraction `f` of people move between
/// them uniformly at random each day, the rest never leave home.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoMetapopConfig {
    pub population_per_region: u32,
    pub traveler_fraction: f64,
    pub days: u32,
    pub seed: u64,
    pub start: Timestamp,
}

impl TwoMetapopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_per_region < 1 {
            return Err(Error::InvalidParams(
                "population per region must be >= 1".to_string(),
            ));
        }
        if !(0.0..=1.0).contains(&self.traveler_fraction) {
            return Err(Error::InvalidParams(format!(
                "traveler fraction must lie in [0, 1], got {}",
                self.traveler_fraction
            )));
        }
        if self.days < 1 {
            return Err(Error::InvalidParams("days must be >= 1".to_string()));
        }
        Ok(())
    }
}

impl Default for TwoMetapopConfig {
    fn default() -> Self {
        TwoMetapopConfig {
            population_per_region: 5_000,
            traveler_fraction: 0.1,
            days: 150,
            seed: 1,
            start: Timestamp::parse_date("2013-01-01").expect("valid date"),
        }
    }
}

/// Heterogeneous multi-region scenario: per-user home regions weighted by
/// region populations, a mobile minority with per-user away-time fractions
/// drawn uniformly from `[away_fraction_min, away_fraction_max]` and one
/// fixed travel destination each.
#[derive(Debug, Clone, PartialEq)]
pub struct HeterogeneousConfig {
    pub region_populations: Vec<u32>,
    pub mobile_fraction: f64,
    pub away_fraction_min: f64,
    pub away_fraction_max: f64,
    pub days: u32,
    pub seed: u64,
    pub start: Timestamp,
}

impl HeterogeneousConfig {
    pub fn validate(&self) -> Result<()> {
        if self.region_populations.is_empty() {
            return Err(Error::InvalidParams("need at least one region".to_string()));
        }
        if self.region_populations.iter().map(|&p| p as u64).sum::<u64>() == 0 {
            return Err(Error::InvalidParams("total population is zero".to_string()));
        }
        for (name, v) in [
            ("mobile_fraction", self.mobile_fraction),
            ("away_fraction_min", self.away_fraction_min),
            ("away_fraction_max", self.away_fraction_max),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParams(format!(
                    "{name} must lie in [0, 1], got {v}"
                )));
            }
        }
        if self.away_fraction_min > self.away_fraction_max {
            return Err(Error::InvalidParams(
                "away_fraction_min must not exceed away_fraction_max".to_string(),
            ));
        }
        if self.days < 1 {
            return Err(Error::InvalidParams("days must be >= 1".to_string()));
        }
        Ok(())
    }

    pub fn total_population(&self) -> u64 {
        self.region_populations.iter().map(|&p| p as u64).sum()
    }

    /// Equal split of `total` across `regions` (remainder spread from the
    /// front).
    pub fn equal_split(regions: u32, total: u32) -> Vec<u32> {
        let base = total / regions;
        let extra = (total % regions) as usize;
        (0..regions as usize)
            .map(|l| base + u32::from(l < extra))
            .collect()
    }

    /// Default shape: equally sized towns plus one small village (0.5% of
    /// the total) as the last region. An outbreak seeded into the village
    /// saturates it immediately, which is the regime where exposure-times-
    /// loss risk scores put the village's travelers and visitors at the top
    /// of the ranking from day one; a mobility-targeted policy is then
    /// measurably different from random treatment at ensemble sizes a
    /// laptop can run.
    pub fn town_village_split(regions: u32, total: u32) -> Vec<u32> {
        assert!(regions >= 2, "need at least one town and the village");
        let village = (total / 200).max(1);
        let towns = regions - 1;
        let mut pops = Self::equal_split(towns, total - village);
        pops.push(village);
        pops
    }
}

impl Default for HeterogeneousConfig {
    fn default() -> Self {
        HeterogeneousConfig {
            region_populations: Self::town_village_split(10, 20_000),
            mobile_fraction: 0.05,
            away_fraction_min: 0.05,
            away_fraction_max: 0.3,
            days: 60,
            seed: 1,
            start: Timestamp::parse_date("2013-01-01").expect("valid date"),
        }
    }
}

fn region_name(index: usize) -> String {
    format!("R{:02}", index + 1)
}

fn user_name(index: usize) -> String {
    format!("U{index:06}")
}

/// Writes the two-metapopulation trace. Users `0..N` are homed in `R01`,
/// users `N..2N` in `R02`; each user is a traveler with probability `f`
/// (independent Bernoulli), and travelers pick one of the two regions
/// uniformly each day.
pub fn generate_two_metapop<W: Write>(config: &TwoMetapopConfig, w: &mut W) -> Result<()> {
    config.validate()?;
    let n = config.population_per_region as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let travelers: Vec<bool> = (0..2 * n)
        .map(|_| rng.gen_bool(config.traveler_fraction))
        .collect();
    let io = |e| Error::io("writing synthetic trace", e);
    let mut out = std::io::BufWriter::new(w);
    writeln!(out, "{}", crate::trace::TRACE_HEADER).map_err(io)?;
    for day in 0..config.days {
        let t = config.start.add_days(day as i64);
        for u in 0..2 * n {
            let home = u / n;
            let region = if travelers[u] {
                rng.gen_range(0..2usize)
            } else {
                home
            };
            writeln!(out, "{},{},{}", user_name(u), t, region_name(region)).map_err(io)?;
        }
    }
    out.flush().map_err(io)?;
    Ok(())
}

/// Writes the heterogeneous multi-region trace. Home regions are assigned
/// deterministically to honor the configured per-region populations exactly;
/// mobility class, away fraction and destination are sampled per user.
pub fn generate_heterogeneous<W: Write>(config: &HeterogeneousConfig, w: &mut W) -> Result<()> {
    config.validate()?;
    let n_regions = config.region_populations.len();
    let total = config.total_population() as usize;

    let mut homes = Vec::with_capacity(total);
    for (l, &pop) in config.region_populations.iter().enumerate() {
        homes.extend(std::iter::repeat(l).take(pop as usize));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    struct Mobile {
        away_fraction: f64,
        destination: usize,
    }
    let classes: Vec<Option<Mobile>> = homes
        .iter()
        .map(|&home| {
            if n_regions > 1 && rng.gen_bool(config.mobile_fraction) {
                let away_fraction = rng.gen_range(config.away_fraction_min..=config.away_fraction_max);
                // one fixed destination, uniform among the other regions
                let mut destination = rng.gen_range(0..n_regions - 1);
                if destination >= home {
                    destination += 1;
                }
                Some(Mobile {
                    away_fraction,
                    destination,
                })
            } else {
                None
            }
        })
        .collect();

    let io = |e| Error::io("writing synthetic trace", e);
    let mut out = std::io::BufWriter::new(w);
    writeln!(out, "{}", crate::trace::TRACE_HEADER).map_err(io)?;
    for day in 0..config.days {
        let t = config.start.add_days(day as i64);
        for (u, &home) in homes.iter().enumerate() {
            let region = match &classes[u] {
                Some(m) if rng.gen_bool(m.away_fraction) => m.destination,
                _ => home,
            };
            writeln!(out, "{},{},{}", user_name(u), t, region_name(region)).map_err(io)?;
        }
    }
    out.flush().map_err(io)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::TimeWindow;
    use crate::trace::{build_profile, parse_traces, TraceSetBuilder, UserId};

    fn generate_two(config: &TwoMetapopConfig) -> Vec<u8> {
        let mut buf = Vec::new();
        generate_two_metapop(config, &mut buf).unwrap();
        buf
    }

    #[test]
    fn round_trips_through_the_parser_with_zero_rejects() {
        let config = TwoMetapopConfig {
            population_per_region: 50,
            days: 10,
            ..Default::default()
        };
        let buf = generate_two(&config);
        let (set, report) = parse_traces(buf.as_slice(), TraceSetBuilder::new(), true).unwrap();
        assert_eq!(report.rejected(), 0);
        assert_eq!(set.n_users(), 100);
        assert_eq!(set.n_regions(), 2);
        assert_eq!(set.n_events(), 1000);
        assert_eq!(set.day_count(), 10);

        let het = HeterogeneousConfig {
            region_populations: HeterogeneousConfig::equal_split(5, 120),
            days: 8,
            ..Default::default()
        };
        let mut buf = Vec::new();
        generate_heterogeneous(&het, &mut buf).unwrap();
        let (set, report) = parse_traces(buf.as_slice(), TraceSetBuilder::new(), true).unwrap();
        assert_eq!(report.rejected(), 0);
        assert_eq!(set.n_users(), 120);
        assert_eq!(set.n_events(), 8 * 120);
    }

    #[test]
    fn identical_seed_produces_identical_bytes() {
        let config = TwoMetapopConfig {
            population_per_region: 30,
            days: 5,
            seed: 77,
            ..Default::default()
        };
        assert_eq!(generate_two(&config), generate_two(&config));
        let other = TwoMetapopConfig {
            seed: 78,
            ..config.clone()
        };
        assert_ne!(generate_two(&config), generate_two(&other));

        let het = HeterogeneousConfig {
            region_populations: vec![40, 60],
            days: 4,
            seed: 5,
            ..Default::default()
        };
        let mut a = Vec::new();
        let mut b = Vec::new();
        generate_heterogeneous(&het, &mut a).unwrap();
        generate_heterogeneous(&het, &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn f_zero_means_one_hot_profiles() {
        let config = TwoMetapopConfig {
            population_per_region: 20,
            traveler_fraction: 0.0,
            days: 15,
            ..Default::default()
        };
        let buf = generate_two(&config);
        let (set, _) = parse_traces(buf.as_slice(), TraceSetBuilder::new(), true).unwrap();
        let window = TimeWindow::days(set.day_anchor().unwrap(), 0, 15).unwrap();
        for u in 0..set.n_users() as u32 {
            let p = build_profile(&set, UserId(u), window).unwrap();
            assert!(p.allocation().iter().any(|&x| x == 1.0));
        }
    }

    #[test]
    fn f_one_profiles_concentrate_on_half_half() {
        // binomial concentration at 180 days: entry ~ 0.5 +- 3 sigma
        let days = 180u32;
        let config = TwoMetapopConfig {
            population_per_region: 50,
            traveler_fraction: 1.0,
            days,
            seed: 3,
            ..Default::default()
        };
        let buf = generate_two(&config);
        let (set, _) = parse_traces(buf.as_slice(), TraceSetBuilder::new(), true).unwrap();
        let window = TimeWindow::days(set.day_anchor().unwrap(), 0, days).unwrap();
        let sigma = (0.25 / days as f64).sqrt();
        let mut mean_home = 0.0;
        for u in 0..set.n_users() as u32 {
            let p = build_profile(&set, UserId(u), window).unwrap();
            assert!(
                (p.allocation()[0] - 0.5).abs() <= 3.0 * sigma,
                "user {u} allocation {:?} strays past 3 sigma",
                p.allocation()
            );
            mean_home += p.allocation()[0];
        }
        mean_home /= set.n_users() as f64;
        let pop_sigma = sigma / (set.n_users() as f64).sqrt();
        assert!((mean_home - 0.5).abs() <= 3.0 * pop_sigma);
    }

    #[test]
    fn empirical_traveler_fraction_within_three_sigma() {
        let f = 0.2;
        let config = TwoMetapopConfig {
            population_per_region: 500,
            traveler_fraction: f,
            days: 30,
            seed: 9,
            ..Default::default()
        };
        let buf = generate_two(&config);
        let (set, _) = parse_traces(buf.as_slice(), TraceSetBuilder::new(), true).unwrap();
        let window = TimeWindow::days(set.day_anchor().unwrap(), 0, 30).unwrap();
        // a user is an observed traveler when their profile touches both regions
        let mut travelers = 0u32;
        for u in 0..set.n_users() as u32 {
            let p = build_profile(&set, UserId(u), window).unwrap();
            if p.allocation().iter().filter(|&&x| x > 0.0).count() > 1 {
                travelers += 1;
            }
        }
        let n = set.n_users() as f64;
        let sigma = (f * (1.0 - f) / n).sqrt();
        // tiny correction: a traveler can flip home every day (prob 2^-29)
        assert!(
            (travelers as f64 / n - f).abs() <= 3.0 * sigma + 1e-6,
            "observed traveler fraction {}",
            travelers as f64 / n
        );
    }

    #[test]
    fn away_zero_keeps_regions_disconnected() {
        let het = HeterogeneousConfig {
            region_populations: vec![30, 30, 30],
            mobile_fraction: 1.0,
            away_fraction_min: 0.0,
            away_fraction_max: 0.0,
            days: 10,
            ..Default::default()
        };
        let mut buf = Vec::new();
        generate_heterogeneous(&het, &mut buf).unwrap();
        let (set, _) = parse_traces(buf.as_slice(), TraceSetBuilder::new(), true).unwrap();
        let window = TimeWindow::days(set.day_anchor().unwrap(), 0, 10).unwrap();
        for u in 0..set.n_users() as u32 {
            let p = build_profile(&set, UserId(u), window).unwrap();
            assert_eq!(p.allocation().iter().filter(|&&x| x > 0.0).count(), 1);
        }
    }

    #[test]
    fn single_region_config_degenerates_cleanly() {
        let het = HeterogeneousConfig {
            region_populations: vec![100],
            mobile_fraction: 0.5,
            days: 5,
            ..Default::default()
        };
        let mut buf = Vec::new();
        generate_heterogeneous(&het, &mut buf).unwrap();
        let (set, report) = parse_traces(buf.as_slice(), TraceSetBuilder::new(), true).unwrap();
        assert_eq!(report.rejected(), 0);
        assert_eq!(set.n_regions(), 1);
    }

    #[test]
    fn config_validation() {
        let mut config = TwoMetapopConfig::default();
        config.traveler_fraction = 1.5;
        assert!(config.validate().is_err());
        config.traveler_fraction = 0.5;
        config.days = 0;
        assert!(config.validate().is_err());

        let mut het = HeterogeneousConfig::default();
        het.away_fraction_min = 0.9;
        het.away_fraction_max = 0.1;
        assert!(het.validate().is_err());
        het = HeterogeneousConfig::default();
        het.region_populations = vec![];
        assert!(het.validate().is_err());
    }

    #[test]
    fn default_heterogeneous_matches_the_policy_scenario() {
        let het = HeterogeneousConfig::default();
        assert_eq!(het.region_populations.len(), 10);
        assert_eq!(het.total_population(), 20_000);
        assert_eq!(het.mobile_fraction, 0.05);
        // nine equal towns plus the 100-person village, village last
        assert_eq!(het.region_populations[9], 100);
        assert!(het.region_populations[..9].iter().all(|&p| p == 2211 || p == 2212));
    }
}
