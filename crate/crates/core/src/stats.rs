//! Small statistics toolbox for experiment summaries and acceptance checks:
//! moments, normal and Student-t tails, a one-sided Mann-Whitney rank-sum
//! test (tie-corrected normal approximation) and a one-sided paired t-test.

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than 2 points.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64;
    var.sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Complementary error function, |fractional error| < 1.2e-7 everywhere
/// (Chebyshev-fitted rational approximation).
pub fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let ans = t * (-z * z - 1.26551223
        + t * (1.00002368
            + t * (0.37409196
                + t * (0.09678418
                    + t * (-0.18628806
                        + t * (0.27886807
                            + t * (-1.13520398
                                + t * (1.48851587
                                    + t * (-0.82215223 + t * 0.17087277)))))))))
        .exp();
    if x >= 0.0 {
        ans
    } else {
        2.0 - ans
    }
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// ln Gamma(x) for x > 0 (Lanczos).
pub fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 6] = [
        76.18009172947146,
        -86.50532032941677,
        24.01409824083091,
        -1.231739572450155,
        0.1208650973866179e-2,
        -0.5395239384953e-5,
    ];
    let mut y = x;
    let tmp = x + 5.5;
    let tmp = tmp - (x + 0.5) * tmp.ln();
    let mut ser = 1.000000000190015;
    for c in COEFFS {
        y += 1.0;
        ser += c / y;
    }
    -tmp + (2.5066282746310005 * ser / x).ln()
}

fn betacf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 200;
    const EPS: f64 = 3.0e-14;
    const FPMIN: f64 = 1.0e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function I_x(a, b).
pub fn beta_inc(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let bt = (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln()).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        bt * betacf(a, b, x) / a
    } else {
        1.0 - bt * betacf(b, a, 1.0 - x) / b
    }
}

/// Student-t CDF with `df` degrees of freedom.
pub fn t_cdf(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    let tail = 0.5 * beta_inc(0.5 * df, 0.5, x);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RankSumTest {
    pub u_statistic: f64,
    pub z: f64,
    /// One-sided p-value for H1: `xs` tends to exceed `ys`.
    pub p_value: f64,
}

/// One-sided Mann-Whitney rank-sum test (normal approximation with tie
/// correction and continuity correction). H1: `xs` stochastically greater.
pub fn mann_whitney_greater(xs: &[f64], ys: &[f64]) -> RankSumTest {
    let nx = xs.len() as f64;
    let ny = ys.len() as f64;
    assert!(nx > 0.0 && ny > 0.0, "rank-sum test needs non-empty samples");

    let mut all: Vec<(f64, bool)> = xs
        .iter()
        .map(|&v| (v, true))
        .chain(ys.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    // average ranks over tie groups
    let n = all.len();
    let mut rank_x_sum = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && all[j].0 == all[i].0 {
            j += 1;
        }
        let t = (j - i) as f64;
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for k in i..j {
            if all[k].1 {
                rank_x_sum += avg_rank;
            }
        }
        tie_term += t * t * t - t;
        i = j;
    }

    let u = rank_x_sum - nx * (nx + 1.0) / 2.0;
    let mu = nx * ny / 2.0;
    let n_total = nx + ny;
    let var = nx * ny / 12.0 * ((n_total + 1.0) - tie_term / (n_total * (n_total - 1.0)));
    if var <= 0.0 {
        // all values identical: no evidence either way
        return RankSumTest {
            u_statistic: u,
            z: 0.0,
            p_value: 0.5,
        };
    }
    let z = (u - mu - 0.5) / var.sqrt();
    RankSumTest {
        u_statistic: u,
        z,
        p_value: 1.0 - normal_cdf(z),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// One-sided p-value for H1: mean > 0.
    pub p_value: f64,
}

/// One-sided paired t-test on precomputed differences. H1: mean > 0.
pub fn paired_t_greater(diffs: &[f64]) -> TTest {
    let n = diffs.len() as f64;
    assert!(diffs.len() >= 2, "paired t-test needs at least 2 pairs");
    let m = mean(diffs);
    let sd = sample_std(diffs);
    let df = n - 1.0;
    if sd == 0.0 {
        // all differences equal; the direction alone decides
        let p = if m > 0.0 {
            0.0
        } else if m < 0.0 {
            1.0
        } else {
            0.5
        };
        return TTest {
            t: f64::INFINITY * m.signum(),
            df,
            p_value: p,
        };
    }
    let t = m / (sd / n.sqrt());
    TTest {
        t,
        df,
        p_value: 1.0 - t_cdf(t, df),
    }
}
