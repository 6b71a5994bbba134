//! Shared model machinery: the base measure G₀, cluster parameter types,
//! conjugate full-conditional updates, concentration updates, and posterior
//! draw snapshots. Both the enriched sampler and the flat comparator build on
//! these pieces, so observed differences between them come from the clustering
//! structure alone.

use crate::aft::fit_aft_mle;
use crate::data::Dataset;
use crate::dists::{norm_logpdf, sample_beta, sample_gamma, ScaledInvChiSq};
use crate::rng::Rng;
use crate::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use std::sync::Arc;

/// The base measure G₀ = G₀^θ × G₀^{ω|θ} plus concentration hyperpriors.
///
/// `a_beta`/`b_beta` come from a parametric AFT fit by default; the remaining
/// hyperparameters default to weakly informative values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseMeasure {
    /// Regression prior mean, length 2 + p (intercept, exposure, covariates).
    pub a_beta: Vec<f64>,
    /// Regression prior scale matrix (row-major, (2+p)²), scaled by `c_beta`·σ².
    pub b_beta: Vec<f64>,
    /// Variance scaling factor for the regression prior (default N/5).
    pub c_beta: f64,
    pub a_sigma: f64,
    pub b_sigma: f64,
    pub a_pi: f64,
    pub b_pi: f64,
    pub a_mu: f64,
    pub b_mu: f64,
    pub a_tau: f64,
    pub b_tau: f64,
    pub a_theta: f64,
    pub b_theta: f64,
    pub a_omega: f64,
    pub b_omega: f64,
    /// Number of binary covariates (exposure excluded).
    pub p_binary: usize,
    /// Number of continuous covariates.
    pub p_continuous: usize,
}

impl BaseMeasure {
    /// Build the base measure for `data`, centering the regression prior on
    /// the censored log-normal AFT fit with covariance from its inverse
    /// observed information, and `c_beta = N/5`.
    pub fn from_aft(data: &Dataset) -> Result<Self> {
        let fit = fit_aft_mle(data)?;
        let dim = fit.a_beta.len();
        Ok(BaseMeasure::with_prior(
            fit.a_beta.iter().copied().collect(),
            fit.b_beta.iter().copied().collect(),
            data.n() as f64 / 5.0,
            data.schema().binary_count(),
            data.schema().continuous_count(),
        )
        .validated(dim)?)
    }

    /// Base measure with an explicitly supplied regression prior.
    ///
    /// `b_beta` is row-major of dimension (2 + p_binary + p_continuous)².
    pub fn with_prior(
        a_beta: Vec<f64>,
        b_beta: Vec<f64>,
        c_beta: f64,
        p_binary: usize,
        p_continuous: usize,
    ) -> Self {
        BaseMeasure {
            a_beta,
            b_beta,
            c_beta,
            a_sigma: 3.0,
            b_sigma: 0.1,
            a_pi: 1.0,
            b_pi: 1.0,
            a_mu: 0.0,
            b_mu: 0.5,
            a_tau: 2.0,
            b_tau: 1.0,
            a_theta: 1.0,
            b_theta: 1.0,
            a_omega: 1.0,
            b_omega: 1.0,
            p_binary,
            p_continuous,
        }
    }

    pub fn design_dim(&self) -> usize {
        2 + self.p_binary + self.p_continuous
    }

    fn validated(self, dim: usize) -> Result<Self> {
        self.validate()?;
        if self.design_dim() != dim {
            return Err(Error::InvalidParam(format!(
                "base measure dimension {} does not match design dimension {dim}",
                self.design_dim()
            )));
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.design_dim();
        if self.a_beta.len() != dim || self.b_beta.len() != dim * dim {
            return Err(Error::InvalidParam(format!(
                "a_beta/b_beta must have dimension {dim} for {} binary + {} continuous covariates",
                self.p_binary, self.p_continuous
            )));
        }
        for v in [
            self.c_beta,
            self.a_sigma,
            self.b_sigma,
            self.a_pi,
            self.b_pi,
            self.b_mu,
            self.a_tau,
            self.b_tau,
            self.a_theta,
            self.b_theta,
            self.a_omega,
            self.b_omega,
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParam(format!(
                    "scalar base-measure hyperparameters must be positive, got {v}"
                )));
            }
        }
        if !self.a_mu.is_finite() {
            return Err(Error::InvalidParam("a_mu must be finite".into()));
        }
        let b = self.b_beta_matrix();
        if (b.clone() - b.transpose()).amax() > 1e-8 * (1.0 + b.amax()) {
            return Err(Error::InvalidParam("B_beta must be symmetric".into()));
        }
        if Cholesky::new(b).is_none() {
            return Err(Error::InvalidParam("B_beta must be positive definite".into()));
        }
        Ok(())
    }

    pub fn b_beta_matrix(&self) -> DMatrix<f64> {
        let dim = self.design_dim();
        DMatrix::from_row_slice(dim, dim, &self.b_beta)
    }
}

/// Per-cluster outcome parameters θ = (β, σ²) for design (1, z, x).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeClusterParams {
    pub beta: Vec<f64>,
    pub sigma2: f64,
}

impl OutcomeClusterParams {
    pub fn linear_predictor(&self, design: &[f64]) -> f64 {
        design.iter().zip(&self.beta).map(|(a, b)| a * b).sum()
    }

    pub fn log_lik(&self, y: f64, design: &[f64]) -> f64 {
        let sd = self.sigma2.sqrt();
        norm_logpdf((y - self.linear_predictor(design)) / sd) - sd.ln()
    }

    pub fn is_finite(&self) -> bool {
        self.sigma2.is_finite() && self.sigma2 > 0.0 && self.beta.iter().all(|b| b.is_finite())
    }
}

/// Per-subcluster exposure/covariate parameters ω = (ω^z, π, (μ, τ²)).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubclusterParams {
    pub omega_z: f64,
    pub pi: Vec<f64>,
    pub mu: Vec<f64>,
    pub tau2: Vec<f64>,
}

impl SubclusterParams {
    /// log f(z, x; ω): Bernoulli exposure and binary covariates, normal
    /// continuous covariates. `x` is ordered binary block then continuous.
    pub fn log_lik(&self, z: f64, x: &[f64]) -> f64 {
        let mut ll = bernoulli_log(z, self.omega_z);
        for (q, &p) in self.pi.iter().enumerate() {
            ll += bernoulli_log(x[q], p);
        }
        let p1 = self.pi.len();
        for (q, (&m, &t2)) in self.mu.iter().zip(&self.tau2).enumerate() {
            let sd = t2.sqrt();
            ll += norm_logpdf((x[p1 + q] - m) / sd) - sd.ln();
        }
        ll
    }

    pub fn is_finite(&self) -> bool {
        self.omega_z.is_finite()
            && self.pi.iter().all(|p| p.is_finite())
            && self.mu.iter().all(|m| m.is_finite())
            && self.tau2.iter().all(|t| t.is_finite() && *t > 0.0)
    }
}

fn bernoulli_log(x: f64, p: f64) -> f64 {
    if x >= 0.5 {
        p.ln()
    } else {
        (1.0 - p).ln()
    }
}

/// Cached factorizations of the regression prior, computed once per fit.
#[derive(Debug, Clone)]
pub struct OutcomePriorCtx {
    /// (c_β B_β)^{-1}
    pub prior_prec: DMatrix<f64>,
    /// (c_β B_β)^{-1} a_β
    pub prior_prec_a: DVector<f64>,
    /// a_βᵀ (c_β B_β)^{-1} a_β
    pub a_quad: f64,
    /// Lower Cholesky factor of c_β B_β (for prior draws).
    pub chol_l: DMatrix<f64>,
    pub a_beta: DVector<f64>,
    pub a_sigma: f64,
    pub b_sigma: f64,
}

impl OutcomePriorCtx {
    pub fn new(base: &BaseMeasure) -> Result<Self> {
        base.validate()?;
        let cov = base.b_beta_matrix() * base.c_beta;
        let chol = Cholesky::new(cov.clone())
            .ok_or_else(|| Error::NotPositiveDefinite("c_beta * B_beta".into()))?;
        let prior_prec = chol.inverse();
        let a_beta = DVector::from_column_slice(&base.a_beta);
        let prior_prec_a = &prior_prec * &a_beta;
        let a_quad = a_beta.dot(&prior_prec_a);
        Ok(OutcomePriorCtx {
            prior_prec,
            prior_prec_a,
            a_quad,
            chol_l: chol.l(),
            a_beta,
            a_sigma: base.a_sigma,
            b_sigma: base.b_sigma,
        })
    }

    /// Draw θ = (β, σ²) from G₀^θ.
    pub fn draw_prior(&self, rng: &mut Rng) -> OutcomeClusterParams {
        let sigma2 = ScaledInvChiSq {
            df: self.a_sigma,
            scale: self.b_sigma,
        }
        .sample(rng);
        let dim = self.a_beta.len();
        let z = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let beta = &self.a_beta + sigma2.sqrt() * (&self.chol_l * z);
        OutcomeClusterParams {
            beta: beta.iter().copied().collect(),
            sigma2,
        }
    }
}

/// Draw ω from G₀^ω: Beta(a_π, b_π) exposure/binary kernels and
/// normal–scaled-inverse-χ² continuous kernels.
pub fn draw_subcluster_prior(base: &BaseMeasure, rng: &mut Rng) -> SubclusterParams {
    let beta_draw = |rng: &mut Rng| {
        if base.a_pi == 1.0 && base.b_pi == 1.0 {
            rng.gen::<f64>()
        } else {
            sample_beta(base.a_pi, base.b_pi, rng).expect("validated base measure")
        }
    };
    let omega_z = beta_draw(rng);
    let pi: Vec<f64> = (0..base.p_binary).map(|_| beta_draw(rng)).collect();
    let mut mu = Vec::with_capacity(base.p_continuous);
    let mut tau2 = Vec::with_capacity(base.p_continuous);
    for _ in 0..base.p_continuous {
        let t2 = ScaledInvChiSq {
            df: base.a_tau,
            scale: base.b_tau,
        }
        .sample(rng);
        let m = base.a_mu + (t2 / base.b_mu).sqrt() * rng.sample::<f64, _>(StandardNormal);
        mu.push(m);
        tau2.push(t2);
    }
    SubclusterParams { omega_z, pi, mu, tau2 }
}

/// Sufficient statistics of one outcome cluster.
#[derive(Debug, Clone)]
pub struct OutcomeStats {
    pub xtx: DMatrix<f64>,
    pub xty: DVector<f64>,
    pub yty: f64,
    pub n: usize,
}

impl OutcomeStats {
    pub fn zeros(dim: usize) -> Self {
        OutcomeStats {
            xtx: DMatrix::zeros(dim, dim),
            xty: DVector::zeros(dim),
            yty: 0.0,
            n: 0,
        }
    }

    pub fn add(&mut self, design: &[f64], y: f64) {
        let dim = design.len();
        for a in 0..dim {
            self.xty[a] += design[a] * y;
            for b in 0..=a {
                self.xtx[(a, b)] += design[a] * design[b];
            }
        }
        self.yty += y * y;
        self.n += 1;
    }

    fn symmetrized(&self) -> DMatrix<f64> {
        let mut m = self.xtx.clone();
        let dim = m.nrows();
        for a in 0..dim {
            for b in (a + 1)..dim {
                m[(a, b)] = m[(b, a)];
            }
        }
        m
    }
}

/// Normal–scaled-inverse-χ² posterior for one cluster's (β, σ²).
#[derive(Debug, Clone)]
pub struct NixPosterior {
    pub mean: DVector<f64>,
    /// Cholesky factorization of B*⁻¹ = (c_β B_β)⁻¹ + XᵀX.
    pub prec_chol: Cholesky<f64, nalgebra::Dyn>,
    pub a_sigma: f64,
    pub b_sigma: f64,
}

/// Conjugate update for the outcome kernel given cluster sufficient stats.
///
/// With empty stats this reduces to the prior G₀^θ.
pub fn outcome_posterior(ctx: &OutcomePriorCtx, stats: &OutcomeStats) -> Result<NixPosterior> {
    let prec = &ctx.prior_prec + stats.symmetrized();
    let rhs = &ctx.prior_prec_a + &stats.xty;
    let chol = Cholesky::new(prec)
        .ok_or_else(|| Error::NotPositiveDefinite("outcome posterior precision".into()))?;
    let mean = chol.solve(&rhs);
    let a_sigma = ctx.a_sigma + stats.n as f64;
    let quad = ctx.a_sigma * ctx.b_sigma + ctx.a_quad + stats.yty - mean.dot(&rhs);
    if !(quad > 0.0) || !quad.is_finite() {
        return Err(Error::NotPositiveDefinite(format!(
            "outcome posterior scale (a*b* = {quad})"
        )));
    }
    Ok(NixPosterior {
        mean,
        prec_chol: chol,
        a_sigma,
        b_sigma: quad / a_sigma,
    })
}

/// Sample (β, σ²) from a [`NixPosterior`]: σ² scaled-inverse-χ², then
/// β | σ² normal with covariance σ² B*.
pub fn sample_outcome_params(post: &NixPosterior, rng: &mut Rng) -> OutcomeClusterParams {
    let sigma2 = ScaledInvChiSq {
        df: post.a_sigma,
        scale: post.b_sigma,
    }
    .sample(rng);
    let dim = post.mean.len();
    let z = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    // β = mean + σ L⁻ᵀ z with B*⁻¹ = L Lᵀ.
    let mut u = z;
    post.prec_chol.l().transpose().solve_upper_triangular_mut(&mut u);
    let beta = &post.mean + sigma2.sqrt() * u;
    OutcomeClusterParams {
        beta: beta.iter().copied().collect(),
        sigma2,
    }
}

/// Sufficient statistics of one subcluster: exposure successes, per-binary
/// successes, and per-continuous moment sums.
#[derive(Debug, Clone)]
pub struct SubclusterStats {
    pub n: usize,
    pub z_successes: usize,
    pub bin_successes: Vec<usize>,
    pub cont_sum: Vec<f64>,
    pub cont_sumsq: Vec<f64>,
}

impl SubclusterStats {
    pub fn zeros(p1: usize, p2: usize) -> Self {
        SubclusterStats {
            n: 0,
            z_successes: 0,
            bin_successes: vec![0; p1],
            cont_sum: vec![0.0; p2],
            cont_sumsq: vec![0.0; p2],
        }
    }

    /// `x` ordered binary block then continuous block.
    pub fn add(&mut self, z: f64, x: &[f64]) {
        self.n += 1;
        self.z_successes += usize::from(z >= 0.5);
        let p1 = self.bin_successes.len();
        for q in 0..p1 {
            self.bin_successes[q] += usize::from(x[q] >= 0.5);
        }
        for q in 0..self.cont_sum.len() {
            self.cont_sum[q] += x[p1 + q];
            self.cont_sumsq[q] += x[p1 + q] * x[p1 + q];
        }
    }
}

/// Beta posterior parameters for a Bernoulli kernel.
pub fn beta_posterior(a: f64, b: f64, successes: usize, n: usize) -> (f64, f64) {
    (a + successes as f64, b + (n - successes) as f64)
}

/// Normal–scaled-inverse-χ² posterior for one continuous covariate kernel:
/// returns (location, kappa, df, scale) with μ | τ² ~ N(location, τ²/kappa)
/// and τ² ~ ScaledInvChiSq(df, scale).
pub fn nix_covariate_posterior(
    base: &BaseMeasure,
    n: usize,
    sum: f64,
    sumsq: f64,
) -> (f64, f64, f64, f64) {
    if n == 0 {
        return (base.a_mu, base.b_mu, base.a_tau, base.b_tau);
    }
    let nf = n as f64;
    let mean = sum / nf;
    let ssd = (sumsq - nf * mean * mean).max(0.0);
    let kappa_n = base.b_mu + nf;
    let df_n = base.a_tau + nf;
    let scale_n = (base.a_tau * base.b_tau
        + ssd
        + base.b_mu * nf / kappa_n * (mean - base.a_mu).powi(2))
        / df_n;
    let loc_n = (base.b_mu * base.a_mu + sum) / kappa_n;
    (loc_n, kappa_n, df_n, scale_n)
}

/// Sample ω for one subcluster from its full conditional (prior when empty).
pub fn sample_subcluster_params(
    base: &BaseMeasure,
    stats: &SubclusterStats,
    rng: &mut Rng,
) -> SubclusterParams {
    let draw_beta = |a: f64, b: f64, rng: &mut Rng| {
        if a == 1.0 && b == 1.0 {
            rng.gen::<f64>()
        } else {
            sample_beta(a, b, rng).expect("positive shapes")
        }
    };
    let (az, bz) = beta_posterior(base.a_pi, base.b_pi, stats.z_successes, stats.n);
    let omega_z = draw_beta(az, bz, rng);
    let pi: Vec<f64> = stats
        .bin_successes
        .iter()
        .map(|&s| {
            let (a, b) = beta_posterior(base.a_pi, base.b_pi, s, stats.n);
            draw_beta(a, b, rng)
        })
        .collect();
    let mut mu = Vec::with_capacity(stats.cont_sum.len());
    let mut tau2 = Vec::with_capacity(stats.cont_sum.len());
    for q in 0..stats.cont_sum.len() {
        let (loc, kappa, df, scale) =
            nix_covariate_posterior(base, stats.n, stats.cont_sum[q], stats.cont_sumsq[q]);
        let t2 = ScaledInvChiSq { df, scale }.sample(rng);
        let m = loc + (t2 / kappa).sqrt() * rng.sample::<f64, _>(StandardNormal);
        mu.push(m);
        tau2.push(t2);
    }
    SubclusterParams { omega_z, pi, mu, tau2 }
}

/// Escobar–West mixture weight for the concentration update:
/// ϱ = (a + K − 1) / (N (b − log ξ) + a + K − 1).
pub fn escobar_west_weight(a: f64, b: f64, k: usize, n: usize, log_xi: f64) -> f64 {
    let top = a + k as f64 - 1.0;
    top / (n as f64 * (b - log_xi) + top)
}

/// Escobar–West update of a DP concentration given K occupied clusters among
/// N subjects, under a Gamma(a, b) prior.
pub fn update_concentration_escobar_west(
    alpha: f64,
    k: usize,
    n: usize,
    a: f64,
    b: f64,
    rng: &mut Rng,
) -> f64 {
    let xi = sample_beta(alpha + 1.0, n as f64, rng).expect("positive shapes");
    let log_xi = xi.ln();
    let weight = escobar_west_weight(a, b, k, n, log_xi);
    let rate = b - log_xi;
    let shape = if rng.gen::<f64>() < weight {
        a + k as f64
    } else {
        a + k as f64 - 1.0
    };
    sample_gamma(shape, rate, rng).expect("positive shape and rate")
}

/// Unnormalized log target for the nested concentration α_ω given the
/// partition: Gamma(a, b) prior times ∏_k α^{K_k − 1} (α + n_k) B(α + 1, n_k).
pub fn log_alpha_omega_target(alpha: f64, cluster_sizes: &[(usize, usize)], a: f64, b: f64) -> f64 {
    if alpha <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let mut lp = (a - 1.0) * alpha.ln() - b * alpha;
    for &(n_k, k_sub) in cluster_sizes {
        let nf = n_k as f64;
        lp += (k_sub as f64 - 1.0) * alpha.ln();
        lp += (alpha + nf).ln();
        // log B(α+1, n_k)
        lp += ln_gamma(alpha + 1.0) + ln_gamma(nf) - ln_gamma(alpha + 1.0 + nf);
    }
    lp
}

/// One Metropolis–Hastings step for α_ω: symmetric random walk on log α with
/// step 0.5 (Jacobian included in the acceptance ratio).
pub fn update_alpha_omega_mh(
    alpha: f64,
    cluster_sizes: &[(usize, usize)],
    a: f64,
    b: f64,
    rng: &mut Rng,
) -> f64 {
    let proposal = (alpha.ln() + 0.5 * rng.sample::<f64, _>(StandardNormal)).exp();
    let log_ratio = log_alpha_omega_target(proposal, cluster_sizes, a, b)
        - log_alpha_omega_target(alpha, cluster_sizes, a, b)
        + proposal.ln()
        - alpha.ln();
    if log_ratio >= 0.0 || rng.gen::<f64>().ln() < log_ratio {
        proposal
    } else {
        alpha
    }
}

/// Which sampler produced a set of draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Edpmm,
    Dpmm,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::Edpmm => write!(f, "edpmm"),
            ModelKind::Dpmm => write!(f, "dpmm"),
        }
    }
}

/// MCMC settings. `informative_censoring = (φ, η)` perturbs the censored-time
/// augmentation distribution; `(0, 1)` (the default) is the primary model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCMCConfig {
    pub burn_in: usize,
    pub iterations: usize,
    pub thin: usize,
    pub k_new: usize,
    pub seed: u64,
    pub informative_censoring: Option<(f64, f64)>,
}

impl Default for MCMCConfig {
    fn default() -> Self {
        MCMCConfig {
            burn_in: 20_000,
            iterations: 20_000,
            thin: 20,
            k_new: 1,
            seed: 0,
            informative_censoring: None,
        }
    }
}

impl MCMCConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 || self.iterations == 0 || self.iterations % self.thin != 0 {
            return Err(Error::InvalidParam(format!(
                "thin ({}) must be positive and divide iterations ({})",
                self.thin, self.iterations
            )));
        }
        if self.k_new == 0 {
            return Err(Error::InvalidParam("k_new must be at least 1".into()));
        }
        if let Some((phi, eta)) = self.informative_censoring {
            if !phi.is_finite() || !(eta > 0.0) || !eta.is_finite() {
                return Err(Error::InvalidParam(format!(
                    "informative censoring requires finite φ and positive η, got ({phi}, {eta})"
                )));
            }
        }
        Ok(())
    }

    /// The (φ, η) pair actually applied during augmentation.
    pub fn phi_eta(&self) -> (f64, f64) {
        self.informative_censoring.unwrap_or((0.0, 1.0))
    }

    pub fn retained_draws(&self) -> usize {
        self.iterations / self.thin
    }
}

/// Snapshot of one subcluster inside a posterior draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawSubcluster {
    pub n: usize,
    pub params: SubclusterParams,
}

/// Snapshot of one occupied outcome cluster inside a posterior draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawCluster {
    pub n: usize,
    pub params: OutcomeClusterParams,
    pub subclusters: Vec<DrawSubcluster>,
}

/// One retained MCMC sample. Immutable once emitted; flat DPMM draws are
/// represented with one subcluster per cluster and `alpha_omega = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraw {
    pub clusters: Vec<DrawCluster>,
    pub alpha_theta: f64,
    pub alpha_omega: f64,
    pub n: usize,
    pub base: Arc<BaseMeasure>,
}

impl PosteriorDraw {
    /// Check the count bookkeeping: Σ n_k = N and Σ_r n_{r|k} = n_k.
    pub fn counts_consistent(&self) -> bool {
        let total: usize = self.clusters.iter().map(|c| c.n).sum();
        total == self.n
            && self.clusters.iter().all(|c| {
                c.n == c.subclusters.iter().map(|s| s.n).sum::<usize>() && !c.subclusters.is_empty()
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedFactory;

    fn toy_base() -> BaseMeasure {
        BaseMeasure::with_prior(
            vec![0.0, 0.0],
            vec![1.0, 0.0, 0.0, 1.0],
            2.0,
            0,
            0,
        )
    }

    #[test]
    fn empty_stats_reduce_to_prior() {
        let base = toy_base();
        let ctx = OutcomePriorCtx::new(&base).unwrap();
        let post = outcome_posterior(&ctx, &OutcomeStats::zeros(2)).unwrap();
        assert_eq!(post.a_sigma, base.a_sigma);
        assert!((post.b_sigma - base.b_sigma).abs() < 1e-12);
        for a in 0..2 {
            assert!((post.mean[a] - base.a_beta[a]).abs() < 1e-12);
        }
    }

    #[test]
    fn beta_posterior_counts() {
        // 4 members with 3 exposure successes under Beta(1,1): Beta(4,2), mean 2/3.
        let (a, b) = beta_posterior(1.0, 1.0, 3, 4);
        assert_eq!((a, b), (4.0, 2.0));
        assert!((a / (a + b) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn nix_singleton_location() {
        // One observation v: posterior location (b_μ a_μ + v)/(b_μ + 1).
        let base = BaseMeasure::with_prior(vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], 1.0, 0, 1);
        let v = 2.4;
        let (loc, kappa, df, _scale) = nix_covariate_posterior(&base, 1, v, v * v);
        assert!((loc - (0.5 * 0.0 + v) / 1.5).abs() < 1e-12);
        assert_eq!(kappa, 1.5);
        assert_eq!(df, 3.0);
    }

    #[test]
    fn nix_singleton_matches_quadrature() {
        // Quadrature oracle over (μ, τ²) for one observation v: posterior
        // E[μ] from the prior × likelihood grid.
        let base = BaseMeasure::with_prior(vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], 1.0, 0, 1);
        let v = 1.3;
        let prior_tau = ScaledInvChiSq { df: base.a_tau, scale: base.b_tau };
        let mut num = 0.0;
        let mut den = 0.0;
        let nm = 400;
        let nt = 400;
        for it in 0..nt {
            let t2 = 0.002 + (it as f64 + 0.5) * (40.0 / nt as f64) * 0.025;
            // scaled-inv-chi2 density, unnormalized in shape (normalization cancels).
            let lp_t = -(1.0 + 0.5 * prior_tau.df) * t2.ln() - 0.5 * prior_tau.df * prior_tau.scale / t2;
            for im in 0..nm {
                let m = -8.0 + (im as f64 + 0.5) * 16.0 / nm as f64;
                let lp_m = -0.5 * base.b_mu * (m - base.a_mu).powi(2) / t2 - 0.5 * t2.ln();
                let ll = -0.5 * (v - m).powi(2) / t2 - 0.5 * t2.ln();
                let w = (lp_t + lp_m + ll).exp();
                num += w * m;
                den += w;
            }
        }
        let oracle = num / den;
        let (loc, ..) = nix_covariate_posterior(&base, 1, v, v * v);
        assert!((loc - oracle).abs() < 1e-3, "loc={loc} oracle={oracle}");
    }

    #[test]
    fn escobar_west_weight_direct_substitution() {
        // ξ = 1 (log ξ = 0), K = 1, N = 10, a = b = 1 gives ϱ = 1/11.
        let w = escobar_west_weight(1.0, 1.0, 1, 10, 0.0);
        assert!((w - 1.0 / 11.0).abs() < 1e-15);
    }

    #[test]
    fn alpha_theta_update_stays_positive() {
        let mut rng = SeedFactory::new(21).stream("ew");
        let mut alpha = 1.0;
        for _ in 0..10_000 {
            alpha = update_concentration_escobar_west(alpha, 3, 50, 1.0, 1.0, &mut rng);
            assert!(alpha > 0.0);
        }
    }

    #[test]
    fn alpha_theta_long_run_matches_direct_mixture_sampling() {
        // Monte Carlo oracle: integrate the Escobar–West mixture over ξ by
        // direct simulation (ξ depends on the *current* α, so the oracle runs
        // the same two-stage draw from a fixed α each time; the chain's
        // stationary distribution for fixed (K, N) must match it).
        let (k, n) = (4usize, 30usize);
        let mut rng = SeedFactory::new(22).stream("ew-chain");
        let mut alpha = 1.0;
        let mut chain = Vec::with_capacity(200_000);
        for _ in 0..200_000 {
            alpha = update_concentration_escobar_west(alpha, k, n, 1.0, 1.0, &mut rng);
            chain.push(alpha);
        }
        let chain_mean: f64 = chain.iter().sum::<f64>() / chain.len() as f64;

        // 1-D quadrature oracle over the exact stationary density:
        // p(α) ∝ Gamma(α; 1, 1) α^{K-1} (α + N) B(α+1, N).
        let mut num = 0.0;
        let mut den = 0.0;
        let steps = 40_000;
        let hi = 25.0;
        for i in 0..steps {
            let a = (i as f64 + 0.5) * hi / steps as f64;
            let lp = -a + (k as f64 - 1.0) * a.ln()
                + (a + n as f64).ln()
                + ln_gamma(a + 1.0)
                + ln_gamma(n as f64)
                - ln_gamma(a + 1.0 + n as f64);
            let w = lp.exp();
            num += w * a;
            den += w;
        }
        let oracle = num / den;
        // Batch-means SE for the autocorrelated chain.
        let batches = 100;
        let bsize = chain.len() / batches;
        let bmeans: Vec<f64> = (0..batches)
            .map(|b| chain[b * bsize..(b + 1) * bsize].iter().sum::<f64>() / bsize as f64)
            .collect();
        let bvar = bmeans.iter().map(|m| (m - chain_mean).powi(2)).sum::<f64>() / (batches as f64 - 1.0);
        let se = (bvar / batches as f64).sqrt();
        assert!(
            (chain_mean - oracle).abs() < 3.0 * se,
            "chain={chain_mean} oracle={oracle} se={se}"
        );
    }

    #[test]
    fn alpha_omega_identity_proposal_is_accepted() {
        // Ratio at the current point is exactly 1.
        let sizes = [(3usize, 1usize)];
        let lr = log_alpha_omega_target(0.8, &sizes, 1.0, 1.0)
            - log_alpha_omega_target(0.8, &sizes, 1.0, 1.0);
        assert_eq!(lr, 0.0);
    }

    #[test]
    fn alpha_omega_target_matches_direct_beta_function_arithmetic() {
        // Oracle: evaluate p(α | ·) for K = 1, n₁ = 3 by direct beta-function
        // arithmetic: B(α+1, 3) = Γ(α+1)Γ(3)/Γ(α+4) = 2 / ((α+1)(α+2)(α+3)).
        let sizes = [(3usize, 2usize)];
        for &(a0, a1) in &[(0.7, 1.9), (2.5, 0.3)] {
            let direct = |alpha: f64| -> f64 {
                let prior = -alpha; // Gamma(1,1) log density up to constants
                let b = 2.0 / ((alpha + 1.0) * (alpha + 2.0) * (alpha + 3.0));
                prior + (2.0f64 - 1.0) * alpha.ln() + (alpha + 3.0).ln() + b.ln()
            };
            let lr_impl = log_alpha_omega_target(a1, &sizes, 1.0, 1.0)
                - log_alpha_omega_target(a0, &sizes, 1.0, 1.0);
            let lr_direct = direct(a1) - direct(a0);
            assert!((lr_impl - lr_direct).abs() < 1e-12, "{lr_impl} vs {lr_direct}");
        }
    }

    #[test]
    fn alpha_omega_chain_matches_quadrature_mean() {
        let sizes = [(12usize, 3usize), (7, 2), (4, 1)];
        let mut rng = SeedFactory::new(23).stream("mh");
        let mut alpha = 1.0;
        let mut chain = Vec::with_capacity(100_000);
        for _ in 0..100_000 {
            alpha = update_alpha_omega_mh(alpha, &sizes, 1.0, 1.0, &mut rng);
            chain.push(alpha);
        }
        let chain_mean: f64 = chain.iter().sum::<f64>() / chain.len() as f64;
        let mut num = 0.0;
        let mut den = 0.0;
        let steps = 40_000;
        let hi = 30.0;
        for i in 0..steps {
            let a = (i as f64 + 0.5) * hi / steps as f64;
            let w = log_alpha_omega_target(a, &sizes, 1.0, 1.0).exp();
            num += w * a;
            den += w;
        }
        let oracle = num / den;
        let batches = 100;
        let bsize = chain.len() / batches;
        let bmeans: Vec<f64> = (0..batches)
            .map(|b| chain[b * bsize..(b + 1) * bsize].iter().sum::<f64>() / bsize as f64)
            .collect();
        let bvar = bmeans.iter().map(|m| (m - chain_mean).powi(2)).sum::<f64>() / (batches as f64 - 1.0);
        let se = (bvar / batches as f64).sqrt();
        assert!(
            (chain_mean - oracle).abs() < 3.0 * se,
            "chain={chain_mean} oracle={oracle} se={se}"
        );
    }

    #[test]
    fn mcmc_config_validation() {
        let mut cfg = MCMCConfig::default();
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.retained_draws(), 1000);
        cfg.thin = 19;
        assert!(cfg.validate().is_err());
        cfg.thin = 20;
        cfg.k_new = 0;
        assert!(cfg.validate().is_err());
        cfg.k_new = 1;
        cfg.informative_censoring = Some((0.1, 0.0));
        assert!(cfg.validate().is_err());
        cfg.informative_censoring = Some((0.1, 2.0));
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.phi_eta(), (0.1, 2.0));
        cfg.informative_censoring = None;
        assert_eq!(cfg.phi_eta(), (0.0, 1.0));
    }

    #[test]
    fn base_measure_validation_catches_bad_matrices() {
        let mut base = toy_base();
        assert!(base.validate().is_ok());
        base.b_beta = vec![1.0, 0.9, -0.9, 1.0];
        assert!(base.validate().is_err()); // asymmetric
        base.b_beta = vec![1.0, 2.0, 2.0, 1.0];
        assert!(base.validate().is_err()); // indefinite
    }
}
