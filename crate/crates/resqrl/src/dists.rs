//! Sampling and density primitives shared by the samplers, the g-computation
//! weights, and the simulation data-generating process.
//!
//! Everything here is seed-deterministic: a fixed RNG stream fixes the output
//! sequence exactly.

use crate::{Error, Result};
use rand::Rng as RandRng;
use rand_distr::{Distribution, Exp, Gamma as GammaDist, StandardNormal};
use statrs::function::beta::beta_reg;
use statrs::function::erf::{erfc, erfc_inv};
use statrs::function::gamma::ln_gamma;

pub const SQRT_2: f64 = std::f64::consts::SQRT_2;
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_74;

/// Standard normal density.
pub fn norm_pdf(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (SQRT_2 * std::f64::consts::PI.sqrt())
}

pub fn norm_logpdf(u: f64) -> f64 {
    -0.5 * u * u - LN_SQRT_2PI
}

/// Standard normal CDF via the complementary error function (tail-accurate).
pub fn norm_cdf(u: f64) -> f64 {
    0.5 * erfc(-u / SQRT_2)
}

/// Standard normal survival function, P(U > u).
pub fn norm_sf(u: f64) -> f64 {
    0.5 * erfc(u / SQRT_2)
}

/// log P(U > u), stable far into the upper tail.
pub fn norm_log_sf(u: f64) -> f64 {
    if u < 8.0 {
        norm_sf(u).ln()
    } else {
        // Asymptotic expansion: log sf(u) = -u²/2 - log(u√(2π)) + log(1 - 1/u² + 3/u⁴ - ...)
        let r = 1.0 / (u * u);
        let series = 1.0 + r * (-1.0 + r * (3.0 + r * (-15.0 + r * (105.0 - 945.0 * r))));
        -0.5 * u * u - u.ln() - LN_SQRT_2PI + series.ln()
    }
}

/// Inverse Mills ratio φ(u)/Φ̄(u), stable for all u.
pub fn mills_ratio(u: f64) -> f64 {
    (norm_logpdf(u) - norm_log_sf(u)).exp()
}

/// Standard normal quantile.
pub fn norm_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile level must be in (0,1)");
    -SQRT_2 * erfc_inv(2.0 * p)
}

/// Draw from Normal(mean, variance) conditioned on exceeding `lower`.
///
/// Uses inverse-CDF sampling in the body and Robert's exponential-rejection
/// scheme once the standardized bound passes 4, which keeps deep-tail draws
/// (heavy censoring) accurate.
pub fn sample_truncated_normal(
    mean: f64,
    variance: f64,
    lower: f64,
    rng: &mut impl RandRng,
) -> Result<f64> {
    if !mean.is_finite() || !variance.is_finite() || variance <= 0.0 {
        return Err(Error::InvalidParam(format!(
            "truncated normal requires finite mean and positive finite variance, got mean={mean}, variance={variance}"
        )));
    }
    if lower.is_nan() || lower == f64::INFINITY {
        return Err(Error::InvalidParam(format!(
            "truncated normal lower bound must be a real number or -inf, got {lower}"
        )));
    }
    let sd = variance.sqrt();
    if lower == f64::NEG_INFINITY {
        let z: f64 = rng.sample(StandardNormal);
        return Ok(mean + sd * z);
    }
    let a = (lower - mean) / sd;
    loop {
        let z = sample_trunc_std(a, rng);
        let x = mean + sd * z;
        if x > lower {
            return Ok(x);
        }
    }
}

fn sample_trunc_std(a: f64, rng: &mut impl RandRng) -> f64 {
    if a < -8.0 {
        // Truncation point deep in the lower tail: plain draws almost surely qualify.
        loop {
            let z: f64 = rng.sample(StandardNormal);
            if z > a {
                return z;
            }
        }
    } else if a <= 4.0 {
        // Inverse-CDF on the upper-tail mass.
        let tail = norm_sf(a);
        loop {
            let v: f64 = rng.gen();
            let s = v * tail;
            if s > 0.0 && s < 1.0 {
                return -norm_quantile(s);
            }
        }
    } else {
        // Robert (1995) translated-exponential rejection.
        let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
        let exp = Exp::new(lambda).expect("positive rate");
        loop {
            let x = a + exp.sample(rng);
            let d = x - lambda;
            let u: f64 = rng.gen();
            if u <= (-0.5 * d * d).exp() {
                return x;
            }
        }
    }
}

/// Scaled inverse chi-squared distribution with df `a` and scale `b`.
///
/// A draw equals a·b / χ²_a in distribution; the mean is a·b/(a−2) for a > 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledInvChiSq {
    pub df: f64,
    pub scale: f64,
}

impl ScaledInvChiSq {
    pub fn new(df: f64, scale: f64) -> Result<Self> {
        if !(df > 0.0) || !(scale > 0.0) || !df.is_finite() || !scale.is_finite() {
            return Err(Error::InvalidParam(format!(
                "scaled inverse chi-squared requires positive finite df and scale, got df={df}, scale={scale}"
            )));
        }
        Ok(ScaledInvChiSq { df, scale })
    }

    pub fn mean(&self) -> Option<f64> {
        (self.df > 2.0).then(|| self.df * self.scale / (self.df - 2.0))
    }

    pub fn sample(&self, rng: &mut impl RandRng) -> f64 {
        let chi2 = GammaDist::new(0.5 * self.df, 2.0)
            .expect("validated parameters")
            .sample(rng);
        self.scale * (self.df / chi2)
    }
}

pub fn sample_scaled_inv_chi2(a: f64, b: f64, rng: &mut impl RandRng) -> Result<f64> {
    Ok(ScaledInvChiSq::new(a, b)?.sample(rng))
}

/// Location-scale Student t distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocationScaleT {
    pub location: f64,
    pub scale: f64,
    pub df: f64,
}

impl LocationScaleT {
    pub fn new(location: f64, scale: f64, df: f64) -> Result<Self> {
        if !location.is_finite() || !(scale > 0.0) || !(df > 0.0) || !scale.is_finite() || !df.is_finite() {
            return Err(Error::InvalidParam(format!(
                "location-scale t requires finite location and positive finite scale/df, got ({location}, {scale}, {df})"
            )));
        }
        Ok(LocationScaleT { location, scale, df })
    }

    fn standardize(&self, x: f64) -> f64 {
        (x - self.location) / self.scale
    }

    /// Half-tail mass 0.5·I_{df/(df+t²)}(df/2, 1/2) shared by cdf and survival.
    fn half_tail(&self, t: f64) -> f64 {
        let u = self.df / (self.df + t * t);
        0.5 * beta_reg(0.5 * self.df, 0.5, u)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let t = self.standardize(x);
        if t <= 0.0 {
            self.half_tail(t)
        } else {
            1.0 - self.half_tail(t)
        }
    }

    pub fn survival(&self, x: f64) -> f64 {
        let t = self.standardize(x);
        if t >= 0.0 {
            self.half_tail(t)
        } else {
            1.0 - self.half_tail(t)
        }
    }

    pub fn logpdf(&self, x: f64) -> f64 {
        let t = self.standardize(x);
        ln_gamma(0.5 * (self.df + 1.0))
            - ln_gamma(0.5 * self.df)
            - 0.5 * (self.df * std::f64::consts::PI).ln()
            - self.scale.ln()
            - 0.5 * (self.df + 1.0) * (t * t / self.df).ln_1p()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.logpdf(x).exp()
    }

    pub fn sample(&self, rng: &mut impl RandRng) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        let chi2 = GammaDist::new(0.5 * self.df, 2.0)
            .expect("validated parameters")
            .sample(rng);
        self.location + self.scale * z / (chi2 / self.df).sqrt()
    }
}

pub fn t_survival(x: f64, dist: &LocationScaleT) -> f64 {
    dist.survival(x)
}

pub fn t_logpdf(x: f64, dist: &LocationScaleT) -> f64 {
    dist.logpdf(x)
}

pub fn t_sample(dist: &LocationScaleT, rng: &mut impl RandRng) -> f64 {
    dist.sample(rng)
}

pub fn sample_beta(a: f64, b: f64, rng: &mut impl RandRng) -> Result<f64> {
    if !(a > 0.0) || !(b > 0.0) {
        return Err(Error::InvalidParam(format!(
            "beta shapes must be positive, got ({a}, {b})"
        )));
    }
    Ok(rand_distr::Beta::new(a, b)
        .expect("validated parameters")
        .sample(rng))
}

/// Gamma draw parameterized by shape and *rate*.
pub fn sample_gamma(shape: f64, rate: f64, rng: &mut impl RandRng) -> Result<f64> {
    if !(shape > 0.0) || !(rate > 0.0) {
        return Err(Error::InvalidParam(format!(
            "gamma shape and rate must be positive, got ({shape}, {rate})"
        )));
    }
    Ok(GammaDist::new(shape, 1.0 / rate)
        .expect("validated parameters")
        .sample(rng))
}

pub fn sample_dirichlet(params: &[f64], rng: &mut impl RandRng) -> Result<Vec<f64>> {
    if params.is_empty() || params.iter().any(|&a| !(a > 0.0)) {
        return Err(Error::InvalidParam(
            "dirichlet parameters must be a nonempty positive vector".into(),
        ));
    }
    let draws: Vec<f64> = params
        .iter()
        .map(|&a| GammaDist::new(a, 1.0).expect("validated").sample(rng))
        .collect();
    let total: f64 = draws.iter().sum();
    Ok(draws.into_iter().map(|g| g / total).collect())
}
