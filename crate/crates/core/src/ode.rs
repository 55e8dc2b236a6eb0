//! Deterministic mean-field SEIR integration (classic fixed-step RK4).
//!
//! Serves as the reference trajectory the stochastic engine is validated
//! against; it shares nothing with the engine beyond [`DiseaseParams`].

use crate::epidemic::DiseaseParams;
use crate::error::{Error, Result};

/// Compartment fractions at one instant (`s + e + i + r = 1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeirPoint {
    pub s: f64,
    pub e: f64,
    pub i: f64,
    pub r: f64,
}

impl SeirPoint {
    pub fn sum(&self) -> f64 {
        self.s + self.e + self.i + self.r
    }

    /// Fraction ever infectious (current plus removed).
    pub fn ever_infected(&self) -> f64 {
        self.i + self.r
    }
}

/// Daily samples of the mean-field trajectory, point 0 = initial condition.
#[derive(Debug, Clone)]
pub struct SeirTrajectory {
    points: Vec<SeirPoint>,
}

impl SeirTrajectory {
    pub fn points(&self) -> &[SeirPoint] {
        &self.points
    }

    pub fn len_days(&self) -> usize {
        self.points.len() - 1
    }

    /// Day with maximal infectious fraction (first such day on plateaus).
    pub fn peak_day(&self) -> u32 {
        let mut best = 0usize;
        for (d, p) in self.points.iter().enumerate() {
            if p.i > self.points[best].i {
                best = d;
            }
        }
        best as u32
    }
}

fn derivative(p: SeirPoint, params: &DiseaseParams) -> SeirPoint {
    let infection = params.beta() * p.s * p.i;
    SeirPoint {
        s: -infection,
        e: infection - params.k() * p.e,
        i: params.k() * p.e - params.gamma() * p.i,
        r: params.gamma() * p.i,
    }
}

fn axpy(p: SeirPoint, d: SeirPoint, h: f64) -> SeirPoint {
    SeirPoint {
        s: p.s + h * d.s,
        e: p.e + h * d.e,
        i: p.i + h * d.i,
        r: p.r + h * d.r,
    }
}

/// Integrates the four mean-field equations over `days` with fixed-step RK4.
///
/// `dt` is an upper bound on the step (at most 0.1 day); the actual step is
/// chosen so that a whole number of steps lands exactly on each day boundary.
/// The initial fractions must sum to 1 within 1e-9.
pub fn integrate_ode(
    params: &DiseaseParams,
    init: SeirPoint,
    days: u32,
    dt: f64,
) -> Result<SeirTrajectory> {
    if !(dt > 0.0 && dt <= 0.1) {
        return Err(Error::InvalidParams(format!(
            "ode step must lie in (0, 0.1] days, got {dt}"
        )));
    }
    if (init.sum() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParams(format!(
            "initial fractions sum to {} (expected 1)",
            init.sum()
        )));
    }
    let steps_per_day = (1.0 / dt).ceil() as usize;
    let h = 1.0 / steps_per_day as f64;

    let mut points = Vec::with_capacity(days as usize + 1);
    let mut p = init;
    points.push(p);
    for _ in 0..days {
        for _ in 0..steps_per_day {
            let k1 = derivative(p, params);
            let k2 = derivative(axpy(p, k1, h / 2.0), params);
            let k3 = derivative(axpy(p, k2, h / 2.0), params);
            let k4 = derivative(axpy(p, k3, h), params);
            p = SeirPoint {
                s: p.s + h / 6.0 * (k1.s + 2.0 * k2.s + 2.0 * k3.s + k4.s),
                e: p.e + h / 6.0 * (k1.e + 2.0 * k2.e + 2.0 * k3.e + k4.e),
                i: p.i + h / 6.0 * (k1.i + 2.0 * k2.i + 2.0 * k3.i + k4.i),
                r: p.r + h / 6.0 * (k1.r + 2.0 * k2.r + 2.0 * k3.r + k4.r),
            };
        }
        points.push(p);
    }
    Ok(SeirTrajectory { points })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn init(i: f64) -> SeirPoint {
        SeirPoint {
            s: 1.0 - i,
            e: 0.0,
            i,
            r: 0.0,
        }
    }

    #[test]
    fn disease_free_equilibrium_is_constant() {
        let params = DiseaseParams::default();
        let traj = integrate_ode(&params, init(0.0), 50, 0.05).unwrap();
        for p in traj.points() {
            assert_eq!(p.i, 0.0);
            assert_eq!(p.e, 0.0);
            assert_eq!(p.s, 1.0);
        }
    }

    #[test]
    fn fractions_conserved() {
        let params = DiseaseParams::default();
        let traj = integrate_ode(&params, init(1e-4), 300, 0.05).unwrap();
        for p in traj.points() {
            assert!((p.sum() - 1.0).abs() <= 1e-9, "sum drifted to {}", p.sum());
            assert!(p.s >= 0.0 && p.e >= 0.0 && p.i >= 0.0 && p.r >= 0.0);
        }
    }

    #[test]
    fn supercritical_epidemic_grows() {
        // default r0 > 1, so prevalence must initially rise
        let params = DiseaseParams::default();
        assert!(params.r0() > 1.0);
        let traj = integrate_ode(&params, init(1e-4), 30, 0.05).unwrap();
        // with an E compartment the rise shows after a short transient
        assert!(traj.points()[10].i > traj.points()[0].i);
        assert!(traj.peak_day() > 0);
    }

    #[test]
    fn subcritical_epidemic_decays() {
        let params = DiseaseParams::new(0.05, 1.0 / 5.3, 1.0 / 5.61).unwrap();
        assert!(params.r0() < 1.0);
        let traj = integrate_ode(&params, init(1e-2), 60, 0.05).unwrap();
        assert!(traj.points().last().unwrap().i < 1e-3);
    }

    #[test]
    fn step_validation() {
        let params = DiseaseParams::default();
        assert!(integrate_ode(&params, init(0.1), 10, 0.2).is_err());
        assert!(integrate_ode(&params, init(0.1), 10, 0.0).is_err());
        let bad = SeirPoint {
            s: 0.5,
            e: 0.0,
            i: 0.4,
            r: 0.0,
        };
        assert!(integrate_ode(&params, bad, 10, 0.05).is_err());
    }

    #[test]
    fn halving_the_step_barely_changes_the_solution() {
        let params = DiseaseParams::default();
        let a = integrate_ode(&params, init(1e-3), 120, 0.1).unwrap();
        let b = integrate_ode(&params, init(1e-3), 120, 0.05).unwrap();
        for (pa, pb) in a.points().iter().zip(b.points()) {
            assert!((pa.i - pb.i).abs() < 1e-8);
        }
    }
}
