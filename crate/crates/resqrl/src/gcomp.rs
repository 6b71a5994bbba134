//! Posterior g-computation: predictive weights, synthetic cohorts, marginal
//! and subgroup residual-life survival, quantile root solving, survivor
//! quantile contrasts, the ψ-shift sensitivity analysis, and posterior
//! summaries.
//!
//! Everything operates on immutable [`PosteriorDraw`] values; draws are
//! processed in parallel with one RNG stream per draw index, so results do not
//! depend on worker count.

use crate::dists::{norm_sf, LocationScaleT};
use crate::model::{BaseMeasure, OutcomeClusterParams, PosteriorDraw};
use crate::rng::{Rng, SeedFactory};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// What to estimate: landmark ν and quantile level ρ (original time scale),
/// optional subgroup conditioning, log-scale sensitivity shifts (ψ₀, ψ₁),
/// synthetic cohort size M, and the credible level.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimandRequest {
    pub nu: f64,
    pub rho: f64,
    /// (covariate index, fixed value) pairs; empty for the marginal estimand.
    pub subgroup: Vec<(usize, f64)>,
    /// Log-time shifts (ψ₀, ψ₁) applied to arms 0 and 1; (0, 0) is primary.
    pub psi: (f64, f64),
    /// Synthetic cohort size M.
    pub cohort_size: usize,
    pub cri_level: f64,
}

impl EstimandRequest {
    pub fn new(nu: f64, rho: f64) -> Self {
        EstimandRequest {
            nu,
            rho,
            subgroup: Vec::new(),
            psi: (0.0, 0.0),
            cohort_size: 1000,
            cri_level: 0.95,
        }
    }

    pub fn validate(&self, base: &BaseMeasure) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::InvalidParam(format!("rho must be in (0,1), got {}", self.rho)));
        }
        if !(self.nu >= 0.0) || !self.nu.is_finite() {
            return Err(Error::InvalidParam(format!("nu must be nonnegative, got {}", self.nu)));
        }
        if self.cohort_size == 0 {
            return Err(Error::InvalidParam("cohort size M must be at least 1".into()));
        }
        if !(self.cri_level > 0.0 && self.cri_level < 1.0) {
            return Err(Error::InvalidParam(format!(
                "credible level must be in (0,1), got {}",
                self.cri_level
            )));
        }
        if !self.psi.0.is_finite() || !self.psi.1.is_finite() {
            return Err(Error::InvalidParam("psi shifts must be finite".into()));
        }
        let p = base.p_binary + base.p_continuous;
        for &(q, v) in &self.subgroup {
            if q >= p {
                return Err(Error::InvalidParam(format!(
                    "subgroup covariate index {q} out of range (p = {p})"
                )));
            }
            if q < base.p_binary && v != 0.0 && v != 1.0 {
                return Err(Error::InvalidParam(format!(
                    "subgroup value for binary covariate {q} must be 0 or 1, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Marginal base distributions obtained by integrating the local kernels over
/// G₀: Bernoulli marginals for the exposure/binary kernels and location-scale
/// t forms for the continuous kernels and the outcome survival.
#[derive(Debug, Clone)]
pub struct PriorPredictive {
    /// P(binary kernel emits 1) = a_π/(a_π + b_π).
    pub binary_one: f64,
    /// Marginal of a continuous covariate kernel.
    pub continuous: LocationScaleT,
    a_beta: DVector<f64>,
    scaled_b_beta: DMatrix<f64>,
    a_sigma: f64,
    b_sigma: f64,
    p_binary: usize,
}

impl PriorPredictive {
    pub fn new(base: &BaseMeasure) -> Result<Self> {
        base.validate()?;
        let continuous = LocationScaleT::new(
            base.a_mu,
            (base.b_tau * (1.0 + 1.0 / base.b_mu)).sqrt(),
            base.a_tau,
        )?;
        Ok(PriorPredictive {
            binary_one: base.a_pi / (base.a_pi + base.b_pi),
            continuous,
            a_beta: DVector::from_column_slice(&base.a_beta),
            scaled_b_beta: base.b_beta_matrix() * base.c_beta,
            a_sigma: base.a_sigma,
            b_sigma: base.b_sigma,
            p_binary: base.p_binary,
        })
    }

    fn binary_mass(&self, v: f64) -> f64 {
        if v >= 0.5 {
            self.binary_one
        } else {
            1.0 - self.binary_one
        }
    }

    /// f₀(z, x): product of the exposure marginal and per-covariate marginals.
    pub fn f0_zx(&self, z: f64, x: &[f64]) -> f64 {
        let mut f = self.binary_mass(z);
        for (q, &v) in x.iter().enumerate() {
            f *= if q < self.p_binary {
                self.binary_mass(v)
            } else {
                self.continuous.pdf(v)
            };
        }
        f
    }

    /// f₀ over a subset of covariates (subgroup conditioning values).
    pub fn f0_x_subset(&self, pairs: &[(usize, f64)]) -> f64 {
        pairs
            .iter()
            .map(|&(q, v)| {
                if q < self.p_binary {
                    self.binary_mass(v)
                } else {
                    self.continuous.pdf(v)
                }
            })
            .product()
    }

    /// Prior-predictive outcome survival S₀(y | z, x): location-scale t with
    /// df a_σ, location 𝕏·a_β, and scale² b_σ(1 + c_β 𝕏 B_β 𝕏ᵀ).
    pub fn s0_survival(&self, y_log: f64, design: &[f64]) -> f64 {
        let x = DVector::from_column_slice(design);
        let location = self.a_beta.dot(&x);
        let quad = (&self.scaled_b_beta * &x).dot(&x);
        let scale = (self.b_sigma * (1.0 + quad)).sqrt();
        LocationScaleT {
            location,
            scale,
            df: self.a_sigma,
        }
        .survival(y_log)
    }
}

/// Build the marginal base distributions for a base measure.
pub fn prior_predictive(base: &BaseMeasure) -> Result<PriorPredictive> {
    PriorPredictive::new(base)
}

/// Conditional survival P(Y > y | Z = z, X = x) for one posterior draw: the
/// occupied-cluster mixture plus the prior-predictive remainder term, with
/// covariate-dependent weights
/// λ_k = n_k/(α_θ+N)·{α_ω/(α_ω+n_k) f₀(z,x) + Σ_r n_{r|k}/(α_ω+n_k) f(z,x;ω_{r|k})}
/// and λ_{K+1} = α_θ/(α_θ+N)·f₀(z,x). `y_log` is on the log-time scale.
pub fn conditional_survival(draw: &PosteriorDraw, y_log: f64, z: f64, x: &[f64]) -> f64 {
    let pp = PriorPredictive::new(&draw.base).expect("draw carries a validated base measure");
    conditional_survival_with(draw, &pp, y_log, z, x)
}

/// As [`conditional_survival`] with a precomputed [`PriorPredictive`].
pub fn conditional_survival_with(
    draw: &PosteriorDraw,
    pp: &PriorPredictive,
    y_log: f64,
    z: f64,
    x: &[f64],
) -> f64 {
    let mut design = Vec::with_capacity(2 + x.len());
    design.push(1.0);
    design.push(z);
    design.extend_from_slice(x);

    let n = draw.n as f64;
    let f0 = pp.f0_zx(z, x);
    let lambda_new = draw.alpha_theta / (draw.alpha_theta + n) * f0;
    let mut numerator = lambda_new * pp.s0_survival(y_log, &design);
    let mut total = lambda_new;
    for cluster in &draw.clusters {
        let nk = cluster.n as f64;
        let mut inner = draw.alpha_omega / (draw.alpha_omega + nk) * f0;
        for sub in &cluster.subclusters {
            inner += sub.n as f64 / (draw.alpha_omega + nk) * sub.params.log_lik(z, x).exp();
        }
        let lambda_k = nk / (draw.alpha_theta + n) * inner;
        let mu = cluster.params.linear_predictor(&design);
        let s_k = norm_sf((y_log - mu) / cluster.params.sigma2.sqrt());
        numerator += lambda_k * s_k;
        total += lambda_k;
    }
    debug_assert!(total > 0.0, "conditional survival weights vanished");
    numerator / total
}

/// Which cluster a synthetic subject landed in.
#[derive(Debug, Clone, PartialEq)]
pub enum ClusterRef {
    Existing(usize),
    Fresh,
}

/// Which subcluster a synthetic subject landed in (within its cluster).
#[derive(Debug, Clone, PartialEq)]
pub enum SubclusterRef {
    Existing(usize),
    Fresh,
}

/// One synthetic subject: covariates, assignment, and the freshly opened
/// outcome parameters when the urn selected a new cluster.
#[derive(Debug, Clone)]
pub struct CohortRow {
    pub x: Vec<f64>,
    pub cluster: ClusterRef,
    pub subcluster: SubclusterRef,
    fresh_theta: Option<OutcomeClusterParams>,
}

/// M synthetic subjects drawn from one posterior draw, with per-row outcome
/// locations cached for both exposure arms.
#[derive(Debug, Clone)]
pub struct SyntheticCohort {
    pub rows: Vec<CohortRow>,
    mu_z0: Vec<f64>,
    mu_z1: Vec<f64>,
    sd: Vec<f64>,
}

impl SyntheticCohort {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn cache_moments(rows: Vec<CohortRow>, draw: &PosteriorDraw) -> SyntheticCohort {
        let m = rows.len();
        let mut mu_z0 = Vec::with_capacity(m);
        let mut mu_z1 = Vec::with_capacity(m);
        let mut sd = Vec::with_capacity(m);
        for row in &rows {
            let theta = match (&row.cluster, &row.fresh_theta) {
                (ClusterRef::Existing(k), _) => &draw.clusters[*k].params,
                (ClusterRef::Fresh, Some(theta)) => theta,
                (ClusterRef::Fresh, None) => unreachable!("fresh rows carry parameters"),
            };
            let mut design = Vec::with_capacity(2 + row.x.len());
            design.push(1.0);
            design.push(0.0);
            design.extend_from_slice(&row.x);
            let base = theta.linear_predictor(&design);
            mu_z0.push(base);
            mu_z1.push(base + theta.beta[1]);
            sd.push(theta.sigma2.sqrt());
        }
        SyntheticCohort { rows, mu_z0, mu_z1, sd }
    }

    /// Monte Carlo mean survival at log-time `y_log` under arm `z`.
    pub fn mean_survival(&self, y_log: f64, z: u8) -> f64 {
        let mus = if z == 1 { &self.mu_z1 } else { &self.mu_z0 };
        let total: f64 = mus
            .iter()
            .zip(&self.sd)
            .map(|(&mu, &sd)| norm_sf((y_log - mu) / sd))
            .sum();
        total / self.len() as f64
    }
}

fn draw_covariates(base: &BaseMeasure, omega: &crate::model::SubclusterParams, rng: &mut Rng) -> Vec<f64> {
    let mut x = Vec::with_capacity(base.p_binary + base.p_continuous);
    for q in 0..base.p_binary {
        x.push(f64::from(rng.gen::<f64>() < omega.pi[q]));
    }
    for q in 0..base.p_continuous {
        x.push(omega.mu[q] + omega.tau2[q].sqrt() * rng.sample::<f64, _>(StandardNormal));
    }
    x
}

/// Generate a synthetic cohort of `m` subjects from the draw's predictive urn:
/// cluster ∝ {n₁, …, n_K, α_θ}, nested subcluster ∝ {n_{r|k}, α_ω}, covariates
/// from the selected local kernels. Fresh clusters/subclusters draw their
/// parameters from G₀ once per row.
pub fn draw_synthetic_cohort(draw: &PosteriorDraw, m: usize, rng: &mut Rng) -> Result<SyntheticCohort> {
    let base = &draw.base;
    let ctx = crate::model::OutcomePriorCtx::new(base)?;
    let n = draw.n as f64;
    let mut rows = Vec::with_capacity(m);
    for _ in 0..m {
        let mut u = rng.gen::<f64>() * (n + draw.alpha_theta);
        let mut cluster = ClusterRef::Fresh;
        for (k, c) in draw.clusters.iter().enumerate() {
            if u < c.n as f64 {
                cluster = ClusterRef::Existing(k);
                break;
            }
            u -= c.n as f64;
        }
        let row = match cluster {
            ClusterRef::Existing(k) => {
                let c = &draw.clusters[k];
                let mut v = rng.gen::<f64>() * (c.n as f64 + draw.alpha_omega);
                let mut sub = SubclusterRef::Fresh;
                for (r, s) in c.subclusters.iter().enumerate() {
                    if v < s.n as f64 {
                        sub = SubclusterRef::Existing(r);
                        break;
                    }
                    v -= s.n as f64;
                }
                let x = match sub {
                    SubclusterRef::Existing(r) => {
                        draw_covariates(base, &c.subclusters[r].params, rng)
                    }
                    SubclusterRef::Fresh => {
                        let omega = crate::model::draw_subcluster_prior(base, rng);
                        draw_covariates(base, &omega, rng)
                    }
                };
                CohortRow {
                    x,
                    cluster: ClusterRef::Existing(k),
                    subcluster: sub,
                    fresh_theta: None,
                }
            }
            ClusterRef::Fresh => {
                let theta = ctx.draw_prior(rng);
                let omega = crate::model::draw_subcluster_prior(base, rng);
                let x = draw_covariates(base, &omega, rng);
                CohortRow {
                    x,
                    cluster: ClusterRef::Fresh,
                    subcluster: SubclusterRef::Fresh,
                    fresh_theta: Some(theta),
                }
            }
        };
        rows.push(row);
    }
    Ok(SyntheticCohort::cache_moments(rows, draw))
}

/// Generate a synthetic cohort conditioned on a covariate subset: the
/// (cluster, subcluster) pair is drawn with the x₂-dependent weights, the
/// remaining covariates come from the selected local kernels, and the
/// conditioned coordinates are fixed at their requested values.
pub fn draw_synthetic_cohort_conditional(
    draw: &PosteriorDraw,
    m: usize,
    subgroup: &[(usize, f64)],
    rng: &mut Rng,
) -> Result<SyntheticCohort> {
    if subgroup.is_empty() {
        return draw_synthetic_cohort(draw, m, rng);
    }
    let base = &draw.base;
    let ctx = crate::model::OutcomePriorCtx::new(base)?;
    let pp = PriorPredictive::new(base)?;
    let n = draw.n as f64;
    let f0_x2 = pp.f0_x_subset(subgroup);

    // Component weights: existing (k, r) pairs, a fresh subcluster inside each
    // existing cluster, and a fresh cluster.
    enum Component {
        Pair(usize, usize),
        FreshSub(usize),
        FreshCluster,
    }
    let mut components = Vec::new();
    let mut weights = Vec::new();
    for (k, c) in draw.clusters.iter().enumerate() {
        let nk = c.n as f64;
        let front = nk / (draw.alpha_theta + n);
        for (r, s) in c.subclusters.iter().enumerate() {
            let fx2: f64 = subgroup
                .iter()
                .map(|&(q, v)| sub_kernel_density(base, &s.params, q, v))
                .product();
            components.push(Component::Pair(k, r));
            weights.push(front * s.n as f64 / (draw.alpha_omega + nk) * fx2);
        }
        components.push(Component::FreshSub(k));
        weights.push(front * draw.alpha_omega / (draw.alpha_omega + nk) * f0_x2);
    }
    components.push(Component::FreshCluster);
    weights.push(draw.alpha_theta / (draw.alpha_theta + n) * f0_x2);

    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::EmptySupport(format!(
            "subgroup {subgroup:?} has zero predictive mass"
        )));
    }

    let conditioned: Vec<usize> = subgroup.iter().map(|&(q, _)| q).collect();
    let mut rows = Vec::with_capacity(m);
    for _ in 0..m {
        let mut u = rng.gen::<f64>() * total;
        let mut chosen = components.len() - 1;
        for (c, &w) in weights.iter().enumerate() {
            if u < w {
                chosen = c;
                break;
            }
            u -= w;
        }
        let (cluster, sub, omega_owned): (ClusterRef, SubclusterRef, Option<crate::model::SubclusterParams>) =
            match components[chosen] {
                Component::Pair(k, r) => (ClusterRef::Existing(k), SubclusterRef::Existing(r), None),
                Component::FreshSub(k) => (
                    ClusterRef::Existing(k),
                    SubclusterRef::Fresh,
                    Some(crate::model::draw_subcluster_prior(base, rng)),
                ),
                Component::FreshCluster => (
                    ClusterRef::Fresh,
                    SubclusterRef::Fresh,
                    Some(crate::model::draw_subcluster_prior(base, rng)),
                ),
            };
        let omega = match (&cluster, &sub, &omega_owned) {
            (ClusterRef::Existing(k), SubclusterRef::Existing(r), _) => {
                &draw.clusters[*k].subclusters[*r].params
            }
            (_, _, Some(o)) => o,
            _ => unreachable!(),
        };
        let mut x = draw_covariates(base, omega, rng);
        for &(q, v) in subgroup {
            x[q] = v;
        }
        let fresh_theta = match cluster {
            ClusterRef::Fresh => Some(ctx.draw_prior(rng)),
            _ => None,
        };
        let _ = &conditioned;
        rows.push(CohortRow {
            x,
            cluster,
            subcluster: sub,
            fresh_theta,
        });
    }
    Ok(SyntheticCohort::cache_moments(rows, draw))
}

fn sub_kernel_density(
    base: &BaseMeasure,
    omega: &crate::model::SubclusterParams,
    q: usize,
    v: f64,
) -> f64 {
    if q < base.p_binary {
        if v >= 0.5 {
            omega.pi[q]
        } else {
            1.0 - omega.pi[q]
        }
    } else {
        let qc = q - base.p_binary;
        let sd = omega.tau2[qc].sqrt();
        crate::dists::norm_pdf((v - omega.mu[qc]) / sd) / sd
    }
}

/// Residual-life survival at residual time `y` past landmark `nu`, both on
/// the original time scale, under arm `z` with log-shift `psi_z`:
/// Σ_m S(log((y+ν)e^{−ψ})) / Σ_m S(log(ν e^{−ψ})), the ν = 0 denominator
/// being 1 (survival at time zero).
pub fn marginal_residual_survival(
    cohort: &SyntheticCohort,
    y: f64,
    nu: f64,
    z: u8,
    psi_z: f64,
) -> Result<f64> {
    if y == 0.0 {
        return Ok(1.0);
    }
    let denominator = residual_denominator(cohort, nu, z, psi_z)?;
    Ok(cohort.mean_survival(((y + nu) * (-psi_z).exp()).ln(), z) / denominator)
}

fn residual_denominator(cohort: &SyntheticCohort, nu: f64, z: u8, psi_z: f64) -> Result<f64> {
    if nu == 0.0 {
        return Ok(1.0);
    }
    let den = cohort.mean_survival((nu * (-psi_z).exp()).ln(), z);
    if den < 1e-12 {
        return Err(Error::Positivity(format!(
            "landmark nu = {nu} has survival mass {den:.3e} under arm z = {z}"
        )));
    }
    Ok(den)
}

/// Root-solver bookkeeping for one quantile solve.
#[derive(Debug, Clone, Copy, Default)]
pub struct SolveDiagnostics {
    pub bisection_iterations: usize,
    pub bracket_expansions: usize,
    /// |S_res(ŷ) − (1 − ρ)| at the returned root.
    pub certificate_error: f64,
}

/// Residual-life quantile: the y ≥ 0 with marginal residual survival equal to
/// 1 − ρ, found by doubling bracket expansion then bisection.
pub fn qrl_root_solve(
    cohort: &SyntheticCohort,
    nu: f64,
    rho: f64,
    z: u8,
    psi_z: f64,
) -> Result<(f64, SolveDiagnostics)> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidParam(format!("rho must be in (0,1), got {rho}")));
    }
    let target = 1.0 - rho;
    let denominator = residual_denominator(cohort, nu, z, psi_z)?;
    let scale = (-psi_z).exp();
    let survival = |y: f64| -> f64 {
        if y == 0.0 {
            return 1.0;
        }
        cohort.mean_survival(((y + nu) * scale).ln(), z) / denominator
    };

    let mut diag = SolveDiagnostics::default();
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    const BRACKET_CAP: f64 = (1u64 << 60) as f64;
    while survival(hi) > target {
        lo = hi;
        hi *= 2.0;
        diag.bracket_expansions += 1;
        if hi > BRACKET_CAP {
            return Err(Error::BracketExceeded(format!(
                "residual quantile at (nu={nu}, rho={rho}, z={z}) exceeds {BRACKET_CAP:e}"
            )));
        }
    }
    while hi - lo > 1e-10 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if survival(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        diag.bisection_iterations += 1;
        if diag.bisection_iterations > 200 {
            break;
        }
    }
    let root = 0.5 * (lo + hi);
    diag.certificate_error = (survival(root) - target).abs();
    Ok((root, diag))
}

/// Posterior summary: mean with equal-tailed credible interval endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorSummary {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Mean and equal-tailed empirical quantiles at levels (1−level)/2 and
/// 1−(1−level)/2, with linear interpolation between order statistics.
pub fn summarize_posterior(values: &[f64], level: f64) -> PosteriorSummary {
    assert!(!values.is_empty(), "summarize_posterior requires values");
    assert!(level > 0.0 && level < 1.0, "credible level must be in (0,1)");
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let tail = 0.5 * (1.0 - level);
    PosteriorSummary {
        mean,
        lower: interpolated_quantile(&sorted, tail),
        upper: interpolated_quantile(&sorted, 1.0 - tail),
    }
}

/// Linearly interpolated empirical quantile of pre-sorted values.
pub fn interpolated_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
    }
}

/// Per-draw survivor quantiles for both arms, their contrast, posterior
/// summaries, and aggregate solver diagnostics.
#[derive(Debug, Clone)]
pub struct OSQCResult {
    pub y1: Vec<f64>,
    pub y0: Vec<f64>,
    pub delta: Vec<f64>,
    pub summary_y1: PosteriorSummary,
    pub summary_y0: PosteriorSummary,
    pub summary_delta: PosteriorSummary,
    pub total_bisection_iterations: usize,
    pub total_bracket_expansions: usize,
    pub max_certificate_error: f64,
}

/// The survivor quantile contrast over retained draws.
///
/// For each draw: one synthetic cohort (shared between arms), a root solve
/// per arm with its ψ shift, and Δ = Y¹ − Y⁰. Cohort RNG streams are keyed by
/// draw index under `factory`.
pub fn osqc(
    draws: &[PosteriorDraw],
    request: &EstimandRequest,
    factory: &SeedFactory,
) -> Result<OSQCResult> {
    if draws.is_empty() {
        return Err(Error::InvalidParam("osqc requires at least one posterior draw".into()));
    }
    request.validate(&draws[0].base)?;

    let per_draw: Vec<(f64, f64, SolveDiagnostics, SolveDiagnostics)> = draws
        .par_iter()
        .enumerate()
        .map(|(idx, draw)| {
            let mut rng = factory.stream(&format!("gcomp/draw/{idx}"));
            let cohort = if request.subgroup.is_empty() {
                draw_synthetic_cohort(draw, request.cohort_size, &mut rng)
            } else {
                draw_synthetic_cohort_conditional(draw, request.cohort_size, &request.subgroup, &mut rng)
            }
            .map_err(|e| e.at_draw(idx))?;
            let (y1, d1) = qrl_root_solve(&cohort, request.nu, request.rho, 1, request.psi.1)
                .map_err(|e| e.at_draw(idx))?;
            let (y0, d0) = qrl_root_solve(&cohort, request.nu, request.rho, 0, request.psi.0)
                .map_err(|e| e.at_draw(idx))?;
            Ok((y1, y0, d1, d0))
        })
        .collect::<Result<_>>()?;

    let mut y1 = Vec::with_capacity(per_draw.len());
    let mut y0 = Vec::with_capacity(per_draw.len());
    let mut delta = Vec::with_capacity(per_draw.len());
    let mut iters = 0;
    let mut expansions = 0;
    let mut max_cert: f64 = 0.0;
    for (a, b, d1, d0) in per_draw {
        y1.push(a);
        y0.push(b);
        delta.push(a - b);
        iters += d1.bisection_iterations + d0.bisection_iterations;
        expansions += d1.bracket_expansions + d0.bracket_expansions;
        max_cert = max_cert.max(d1.certificate_error).max(d0.certificate_error);
    }
    Ok(OSQCResult {
        summary_y1: summarize_posterior(&y1, request.cri_level),
        summary_y0: summarize_posterior(&y0, request.cri_level),
        summary_delta: summarize_posterior(&delta, request.cri_level),
        y1,
        y0,
        delta,
        total_bisection_iterations: iters,
        total_bracket_expansions: expansions,
        max_certificate_error: max_cert,
    })
}

/// One point of a posterior marginal survival curve.
#[derive(Debug, Clone, Copy)]
pub struct SurvivalPoint {
    pub z: u8,
    pub time: f64,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Per-arm marginal survival curves with credible bands: for each draw, the
/// synthetic-cohort mean survival at every time, summarized across draws.
/// Cohort streams are keyed by draw index, matching [`osqc`].
pub fn survival_curves(
    draws: &[PosteriorDraw],
    times: &[f64],
    subgroup: &[(usize, f64)],
    cohort_size: usize,
    cri_level: f64,
    factory: &SeedFactory,
) -> Result<Vec<SurvivalPoint>> {
    if draws.is_empty() || times.is_empty() {
        return Err(Error::InvalidParam(
            "survival curves need draws and a nonempty time grid".into(),
        ));
    }
    if times.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::InvalidParam("survival grid times must be positive".into()));
    }
    let per_draw: Vec<Vec<(f64, f64)>> = draws
        .par_iter()
        .enumerate()
        .map(|(idx, draw)| {
            let mut rng = factory.stream(&format!("gcomp/draw/{idx}"));
            let cohort = if subgroup.is_empty() {
                draw_synthetic_cohort(draw, cohort_size, &mut rng)
            } else {
                draw_synthetic_cohort_conditional(draw, cohort_size, subgroup, &mut rng)
            }
            .map_err(|e| e.at_draw(idx))?;
            Ok(times
                .iter()
                .map(|&t| {
                    let y_log = t.ln();
                    (cohort.mean_survival(y_log, 0), cohort.mean_survival(y_log, 1))
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    let mut points = Vec::with_capacity(times.len() * 2);
    for z in [0u8, 1u8] {
        for (j, &t) in times.iter().enumerate() {
            let values: Vec<f64> = per_draw
                .iter()
                .map(|row| if z == 0 { row[j].0 } else { row[j].1 })
                .collect();
            let summary = summarize_posterior(&values, cri_level);
            points.push(SurvivalPoint {
                z,
                time: t,
                mean: summary.mean,
                lower: summary.lower,
                upper: summary.upper,
            });
        }
    }
    Ok(points)
}
