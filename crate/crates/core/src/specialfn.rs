//! Gamma, Pochhammer and the Gauss hypergeometric function on the real
//! ray `z < 1`.
//!
//! `hyp2f1` sums the power series directly on `[0, 1/2]`. Negative
//! arguments are first mapped into `[0, 1)` with the Pfaff transformation
//!
//! ```text
//! F(a, b; c; z) = (1 - z)^(-a) F(a, c - b; c; z / (z - 1)),
//! ```
//!
//! and arguments above 1/2 go through the `z -> 1 - z` connection formula
//! whenever `c - a - b` is not an integer and the two branches do not
//! cancel. Anything else falls back to the direct series, which reports an
//! error instead of truncating once the term cap is hit.

use crate::error::{domain, Error, Result};

/// Relative size of the last series term at which summation stops.
pub const SERIES_TOL: f64 = 1e-16;
/// Hard cap on the number of series terms.
pub const MAX_SERIES_TERMS: usize = 10_000;

const CONNECTION_THRESHOLD: f64 = 0.5;

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEFFS: [f64; 9] = [
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

fn is_non_positive_integer(x: f64) -> bool {
    x <= 0.0 && x == x.floor()
}

fn gamma_unchecked(x: f64) -> f64 {
    if x == x.floor() && (1.0..=24.0).contains(&x) {
        // exact factorials
        return (1..x as u32).fold(1.0, |acc, k| acc * k as f64);
    }
    if x < 0.5 {
        // reflection
        std::f64::consts::PI / ((std::f64::consts::PI * x).sin() * gamma_unchecked(1.0 - x))
    } else {
        let x = x - 1.0;
        let mut acc = LANCZOS_COEFFS[0];
        for (i, c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
            acc += c / (x + i as f64);
        }
        let t = x + LANCZOS_G + 0.5;
        (2.0 * std::f64::consts::PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * acc
    }
}

/// Euler's Gamma function for real arguments off the poles.
pub fn gamma_fn(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return domain(format!("gamma: non-finite argument {x}"));
    }
    if is_non_positive_integer(x) {
        return domain(format!("gamma: pole at {x}"));
    }
    Ok(gamma_unchecked(x))
}

/// `1 / Gamma(x)`, which is entire: zero at the poles of Gamma.
pub fn recip_gamma(x: f64) -> f64 {
    if is_non_positive_integer(x) {
        0.0
    } else {
        1.0 / gamma_unchecked(x)
    }
}

/// Rising factorial `a (a + 1) ... (a + k - 1)`, with `(a)_0 = 1`.
///
/// Computed as a plain product so that `(-n)_k` is exactly zero for
/// `k > n`.
pub fn pochhammer(a: f64, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (a + i as f64))
}

/// Arguments of `F(alpha, beta; gamma; z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HypergeometricParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub z: f64,
}

impl HypergeometricParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64, z: f64) -> Self {
        Self {
            alpha,
            beta,
            gamma,
            z,
        }
    }

    fn validate(&self) -> Result<()> {
        let Self {
            alpha,
            beta,
            gamma,
            z,
        } = *self;
        if ![alpha, beta, gamma, z].iter().all(|v| v.is_finite()) {
            return domain(format!("2F1: non-finite parameter in {self:?}"));
        }
        if is_non_positive_integer(gamma) {
            return domain(format!("2F1: gamma = {gamma} is a non-positive integer"));
        }
        if z >= 1.0 {
            return domain(format!("2F1: z = {z} outside the supported ray z < 1"));
        }
        Ok(())
    }
}

/// Gauss hypergeometric function for real parameters and `z < 1`.
pub fn hyp2f1(p: HypergeometricParams) -> Result<f64> {
    p.validate()?;
    let HypergeometricParams {
        alpha: a,
        beta: b,
        gamma: c,
        z,
    } = p;
    if z == 0.0 || a == 0.0 || b == 0.0 {
        return Ok(1.0);
    }
    if z < 0.0 {
        let w = z / (z - 1.0);
        let prefactor = (1.0 - z).powf(-a);
        return Ok(prefactor * on_unit_interval(a, c - b, c, w)?);
    }
    on_unit_interval(a, b, c, z)
}

/// The bare power series, valid for `|z| < 1`. Exposed so the transformed
/// evaluation can be checked against it.
pub fn hyp2f1_series(p: HypergeometricParams) -> Result<f64> {
    p.validate()?;
    if p.z.abs() >= 1.0 {
        return domain(format!("2F1 series: |z| = {} >= 1", p.z.abs()));
    }
    power_series(p.alpha, p.beta, p.gamma, p.z)
}

fn on_unit_interval(a: f64, b: f64, c: f64, w: f64) -> Result<f64> {
    if w > CONNECTION_THRESHOLD {
        if let Some(v) = connection_formula(a, b, c, w)? {
            return Ok(v);
        }
    }
    power_series(a, b, c, w)
}

/// `z -> 1 - z` connection. Returns `None` when it cannot be used reliably:
/// integer `c - a - b`, overflowing Gamma factors, or heavy cancellation
/// between the two branches.
fn connection_formula(a: f64, b: f64, c: f64, w: f64) -> Result<Option<f64>> {
    let m = c - a - b;
    if (m - m.round()).abs() < 1e-9 {
        return Ok(None);
    }
    let gc = gamma_unchecked(c);
    let c1 = gc * gamma_unchecked(m) * recip_gamma(c - a) * recip_gamma(c - b);
    let c2 = gc * gamma_unchecked(-m) * recip_gamma(a) * recip_gamma(b);
    if !c1.is_finite() || !c2.is_finite() {
        return Ok(None);
    }
    let x = 1.0 - w;
    let t1 = if c1 == 0.0 {
        0.0
    } else {
        c1 * power_series(a, b, 1.0 - m, x)?
    };
    let t2 = if c2 == 0.0 {
        0.0
    } else {
        c2 * x.powf(m) * power_series(c - a, c - b, 1.0 + m, x)?
    };
    let total = t1 + t2;
    if total.abs() < 1e-4 * (t1.abs() + t2.abs()) {
        return Ok(None);
    }
    Ok(Some(total))
}

fn power_series(a: f64, b: f64, c: f64, z: f64) -> Result<f64> {
    let mut sum = 1.0;
    let mut term = 1.0;
    for k in 0..MAX_SERIES_TERMS {
        let kf = k as f64;
        term *= (a + kf) * (b + kf) / ((c + kf) * (kf + 1.0)) * z;
        sum += term;
        if term == 0.0 {
            return Ok(sum);
        }
        if term.abs() < SERIES_TOL * sum.abs() {
            // a small term next to a zero of (a + k) does not mean the tail is small
            let next = (a + kf + 1.0) * (b + kf + 1.0) / ((c + kf + 1.0) * (kf + 2.0)) * z;
            if next.abs() < 1.0 {
                return Ok(sum);
            }
        }
        if !sum.is_finite() {
            break;
        }
    }
    Err(Error::Numeric(format!(
        "2F1({a}, {b}; {c}; {z}) series not converged after {MAX_SERIES_TERMS} terms \
         (last term {term:e}, partial sum {sum:e})"
    )))
}
