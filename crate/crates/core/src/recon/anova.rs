//! One-way ANOVA and the F distribution tail it needs.

use serde::Serialize;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AnovaError {
    #[error("need at least 2 groups, got {0}")]
    TooFewGroups(usize),
    #[error("group {0} is empty")]
    EmptyGroup(usize),
    #[error("need more observations ({n}) than groups ({k})")]
    NoWithinDof { n: usize, k: usize },
    #[error("non-finite observation")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Anova {
    pub f: f64,
    pub p_value: f64,
    pub df_between: f64,
    pub df_within: f64,
    /// Within-group variance was zero while the group means differed.
    pub degenerate: bool,
}

pub fn anova_oneway<G: AsRef<[f64]>>(groups: &[G]) -> Result<Anova, AnovaError> {
    let k = groups.len();
    if k < 2 {
        return Err(AnovaError::TooFewGroups(k));
    }
    let mut n = 0usize;
    let mut grand = 0.0;
    for (i, g) in groups.iter().enumerate() {
        let g = g.as_ref();
        if g.is_empty() {
            return Err(AnovaError::EmptyGroup(i));
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(AnovaError::NonFinite);
        }
        n += g.len();
        grand += g.iter().sum::<f64>();
    }
    if n <= k {
        return Err(AnovaError::NoWithinDof { n, k });
    }
    grand /= n as f64;

    let (mut ssb, mut ssw) = (0.0, 0.0);
    for g in groups {
        let g = g.as_ref();
        let m = g.iter().sum::<f64>() / g.len() as f64;
        ssb += g.len() as f64 * (m - grand).powi(2);
        ssw += g.iter().map(|x| (x - m).powi(2)).sum::<f64>();
    }
    let d1 = (k - 1) as f64;
    let d2 = (n - k) as f64;
    // relative floor so that shifted/scaled copies of equal groups stay at f = 0
    let scale = groups
        .iter()
        .flat_map(|g| g.as_ref().iter())
        .map(|x| (x - grand).abs())
        .fold(0.0, f64::max)
        .max(grand.abs());
    let tiny = (scale * 1e-12).powi(2) * n as f64;
    if ssw <= tiny {
        return Ok(if ssb <= tiny {
            Anova {
                f: 0.0,
                p_value: 1.0,
                df_between: d1,
                df_within: d2,
                degenerate: false,
            }
        } else {
            Anova {
                f: f64::INFINITY,
                p_value: 0.0,
                df_between: d1,
                df_within: d2,
                degenerate: true,
            }
        });
    }
    let f = if ssb <= tiny {
        0.0
    } else {
        (ssb / d1) / (ssw / d2)
    };
    Ok(Anova {
        f,
        p_value: f_sf(f, d1, d2),
        df_between: d1,
        df_within: d2,
        degenerate: false,
    })
}

/// CDF of the F distribution with (d1, d2) degrees of freedom.
pub fn f_cdf(x: f64, d1: f64, d2: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    reg_inc_beta(d1 / 2.0, d2 / 2.0, d1 * x / (d1 * x + d2))
}

/// Upper tail `1 - CDF`, evaluated directly to keep precision for large x.
pub fn f_sf(x: f64, d1: f64, d2: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    reg_inc_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * x)).clamp(0.0, 1.0)
}

/// Natural log of the gamma function (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularised incomplete beta I_x(a, b).
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    // continued fraction converges fast on this side
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

// modified Lentz evaluation
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const EPS: f64 = 1e-15;
    const FPMIN: f64 = 1e-300;
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
    for m in 1..=10_000 {
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
