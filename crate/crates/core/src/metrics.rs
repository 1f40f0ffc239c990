//! Evaluation metrics: MSE, Pearson r with reliability correction, paired
//! t-tests and fold standard errors.

use std::fmt;

use crate::error::{Error, Result};

/// Held-out evaluation of one set of predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub mse: f64,
    pub pearson_r: f64,
    pub r_dis: f64,
    pub n: usize,
    pub warnings: Vec<String>,
}

/// Paired t-test summary. `degenerate` is set when every difference is the
/// same non-zero value (zero variance, infinite t).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTestResult {
    pub t: f64,
    pub df: usize,
    pub p_two_sided: f64,
    pub mean_diff: f64,
    pub degenerate: bool,
}

impl fmt::Display for TTestResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={:.4} df={} p={}", self.t, self.df, format_p(self.p_two_sided))?;
        if self.degenerate {
            f.write_str(" (degenerate: zero-variance differences)")?;
        }
        Ok(())
    }
}

/// A p-value with 4 significant digits.
pub fn format_p(p: f64) -> String {
    if p == 0.0 {
        return "0".into();
    }
    if p >= 1e-3 {
        let digits = (3 - p.log10().floor() as i32).max(0) as usize;
        format!("{p:.digits$}")
    } else {
        format!("{p:.3e}")
    }
}

/// Fixed decimals without the leading zero, as correlations and MSEs are
/// usually reported: `.554`, `-.12`, `1.069`.
pub fn format_short(v: f64, places: usize) -> String {
    let s = format!("{v:.places$}");
    if let Some(rest) = s.strip_prefix("0.") {
        format!(".{rest}")
    } else if let Some(rest) = s.strip_prefix("-0.") {
        format!("-.{rest}")
    } else {
        s
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Usage(format!("length mismatch: {a} vs {b}")));
    }
    Ok(())
}

/// Arithmetic mean with one residual-correction pass, so a constant
/// vector returns exactly its value.
pub fn mean(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    m + v.iter().map(|x| x - m).sum::<f64>() / n
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_sd(v: &[f64]) -> f64 {
    let m = mean(v);
    let ss: f64 = v.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (v.len() as f64 - 1.0)).sqrt()
}

pub fn mse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_lengths(y.len(), yhat.len())?;
    if y.is_empty() {
        return Err(Error::Usage("mse of empty vectors".into()));
    }
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64)
}

/// Per-element squared errors, the pairing unit of significance tests.
pub fn squared_errors(y: &[f64], yhat: &[f64]) -> Result<Vec<f64>> {
    check_lengths(y.len(), yhat.len())?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).collect())
}

/// Sample Pearson correlation. Constant input on either side is an error.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x.len(), y.len())?;
    if x.len() < 2 {
        return Err(Error::Usage("pearson_r needs at least 2 points".into()));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Numeric("correlation undefined for constant input".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Disattenuated {
    pub r_dis: f64,
    /// Set when |r_dis| > 1; the value is not clamped.
    pub warning: Option<String>,
}

/// `r / sqrt(rel_x * rel_y)`.
pub fn disattenuate(r: f64, rel_x: f64, rel_y: f64) -> Result<Disattenuated> {
    for (name, rel) in [("rel_x", rel_x), ("rel_y", rel_y)] {
        if !(rel > 0.0 && rel <= 1.0) {
            return Err(Error::Usage(format!("{name} must be in (0, 1], got {rel}")));
        }
    }
    let r_dis = r / (rel_x * rel_y).sqrt();
    let warning = (r_dis.abs() > 1.0)
        .then(|| format!("disattenuated r {r_dis} exceeds 1 in magnitude (r={r}, rel_x={rel_x}, rel_y={rel_y})"));
    Ok(Disattenuated { r_dis, warning })
}

pub fn evaluate(y: &[f64], yhat: &[f64], rel_x: f64, rel_y: f64) -> Result<EvalResult> {
    let mse = mse(y, yhat)?;
    let r = pearson_r(yhat, y)?;
    let d = disattenuate(r, rel_x, rel_y)?;
    Ok(EvalResult {
        mse,
        pearson_r: r,
        r_dis: d.r_dis,
        n: y.len(),
        warnings: d.warning.into_iter().collect(),
    })
}

/// Two-sided paired t-test on `a - b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    check_lengths(a.len(), b.len())?;
    let n = a.len();
    if n < 2 {
        return Err(Error::Usage("paired t-test needs at least 2 pairs".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let m = mean(&d);
    let sd = sample_sd(&d);
    let df = n - 1;
    // Rounding in the mean can leave a residual spread on constant input.
    if sd <= 4.0 * f64::EPSILON * m.abs() || sd == 0.0 {
        return Ok(if m == 0.0 {
            TTestResult {
                t: 0.0,
                df,
                p_two_sided: 1.0,
                mean_diff: 0.0,
                degenerate: false,
            }
        } else {
            TTestResult {
                t: f64::INFINITY.copysign(m),
                df,
                p_two_sided: 0.0,
                mean_diff: m,
                degenerate: true,
            }
        });
    }
    let t = m / (sd / (n as f64).sqrt());
    Ok(TTestResult {
        t,
        df,
        p_two_sided: student_t_two_sided(t, df as f64),
        mean_diff: m,
        degenerate: false,
    })
}

/// Standard error of the mean fold score: sample sd / sqrt(k).
pub fn fold_standard_error(fold_mses: &[f64]) -> Result<f64> {
    if fold_mses.len() < 2 {
        return Err(Error::Usage("standard error needs at least 2 folds".into()));
    }
    Ok(sample_sd(fold_mses) / (fold_mses.len() as f64).sqrt())
}

/// `P(|T| >= |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let t2 = t * t;
    let x = df / (df + t2);
    regularized_incomplete_beta(0.5 * df, 0.5, x).clamp(0.0, 1.0)
}

/// Lanczos approximation (g = 7, 9 terms) of ln Γ(x) for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
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
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// Continued fraction for the incomplete beta, modified Lentz evaluation.
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 100_000;
    const EPS: f64 = 1e-16;
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
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
