//! Shared oracle machinery for the integration suites: a dense-grid
//! normal–scaled-inverse-χ² quadrature (independent of the sampler's
//! conjugate algebra), a generative sampler for the enriched-DP joint model
//! used by the joint-distribution check, and autocorrelation-aware standard
//! errors.

#![allow(dead_code)]

use resqrl::edpmm::{ClusterState, SamplerState, SubState};
use resqrl::model::{draw_subcluster_prior, BaseMeasure, OutcomePriorCtx};
use resqrl::rng::Rng;
use rand::Rng as _;
use rand_distr::StandardNormal;

/// Result of dense-grid integration of prior × likelihood for a two-column
/// design (intercept, one regressor): total mass plus posterior moments.
pub struct QuadratureResult {
    pub mass: f64,
    pub e_beta: [f64; 2],
    pub e_sigma2: f64,
}

/// Integrate the full (normalized) prior × likelihood over a 3-d grid in
/// (β₀, β₁, σ²) with σ² on a log grid. The prior is β | σ² ~ N(a, σ²·diag(d))
/// and σ² ~ ScaledInvChiSq(a_σ, b_σ); the likelihood is Π N(yᵢ; xᵢβ, σ²).
///
/// All normalization constants are kept so masses are comparable across
/// different point sets (marginal-likelihood ratios for partition oracles).
pub fn nix_quadrature(
    points: &[([f64; 2], f64)],
    a_beta: [f64; 2],
    prior_diag: [f64; 2],
    a_sigma: f64,
    b_sigma: f64,
    center: [f64; 2],
    half_width: [f64; 2],
    grid: usize,
) -> QuadratureResult {
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    // Scaled-inverse-chi-squared log normalizer.
    let sic_const = 0.5 * a_sigma * (0.5 * a_sigma * b_sigma).ln()
        - statrs::function::gamma::ln_gamma(0.5 * a_sigma);

    let (s2_lo, s2_hi) = (1e-4f64, 50.0f64);
    let ls_lo = s2_lo.ln();
    let ls_hi = s2_hi.ln();
    let dls = (ls_hi - ls_lo) / grid as f64;
    let db0 = 2.0 * half_width[0] / grid as f64;
    let db1 = 2.0 * half_width[1] / grid as f64;

    let mut mass = 0.0;
    let mut e0 = 0.0;
    let mut e1 = 0.0;
    let mut es = 0.0;
    for is in 0..grid {
        let ls = ls_lo + (is as f64 + 0.5) * dls;
        let s2 = ls.exp();
        // SIC density times the log-grid Jacobian (dσ² = σ² d log σ²).
        let lp_s = sic_const - (1.0 + 0.5 * a_sigma) * s2.ln() - 0.5 * a_sigma * b_sigma / s2
            + s2.ln();
        for i0 in 0..grid {
            let b0 = center[0] - half_width[0] + (i0 as f64 + 0.5) * db0;
            let lp_b0 = -0.5 * ((b0 - a_beta[0]).powi(2) / (s2 * prior_diag[0])
                + (s2 * prior_diag[0]).ln()
                + ln_2pi);
            for i1 in 0..grid {
                let b1 = center[1] - half_width[1] + (i1 as f64 + 0.5) * db1;
                let lp_b1 = -0.5 * ((b1 - a_beta[1]).powi(2) / (s2 * prior_diag[1])
                    + (s2 * prior_diag[1]).ln()
                    + ln_2pi);
                let mut ll = 0.0;
                for ([x0, x1], y) in points {
                    let mu = b0 * x0 + b1 * x1;
                    ll += -0.5 * ((y - mu).powi(2) / s2 + s2.ln() + ln_2pi);
                }
                let w = (lp_s + lp_b0 + lp_b1 + ll).exp();
                mass += w;
                e0 += w * b0;
                e1 += w * b1;
                es += w * s2;
            }
        }
    }
    let cell = db0 * db1 * dls;
    QuadratureResult {
        mass: mass * cell,
        e_beta: [e0 / mass, e1 / mass],
        e_sigma2: es / mass,
    }
}

/// Beta(1,1)–Bernoulli marginal likelihood of a binary vector:
/// ∫ p^s (1-p)^{n-s} dp = s!(n-s)!/(n+1)!.
pub fn beta_binomial_mass(successes: usize, n: usize) -> f64 {
    let fact = |k: usize| (1..=k).map(|v| v as f64).product::<f64>();
    fact(successes) * fact(n - successes) / fact(n + 1)
}

/// Batch-means standard error of the mean for an autocorrelated chain.
pub fn batch_means_se(chain: &[f64], batches: usize) -> f64 {
    let size = chain.len() / batches;
    let mean = chain.iter().sum::<f64>() / chain.len() as f64;
    let bmeans: Vec<f64> = (0..batches)
        .map(|b| chain[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let var = bmeans.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (batches as f64 - 1.0);
    (var / batches as f64).sqrt()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn iid_se(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0);
    (var / xs.len() as f64).sqrt()
}

/// A full generative draw of the enriched-DP joint model at fixed N: both
/// concentrations, a nested partition, cluster/subcluster parameters, and a
/// complete data set. This is the forward model the Gibbs sweeps must leave
/// invariant.
pub struct GenerativeDraw {
    pub state: SamplerState,
    pub z: Vec<u8>,
    pub x: Vec<f64>,
    pub log_t: Vec<f64>,
    pub d: Vec<u8>,
}

/// Nested Chinese-restaurant draw of the enriched-DP joint model with one
/// binary covariate and fixed log-scale censoring thresholds.
pub fn generative_draw(base: &BaseMeasure, censor_log: &[f64], rng: &mut Rng) -> GenerativeDraw {
    let n = censor_log.len();
    let ctx = OutcomePriorCtx::new(base).unwrap();
    let alpha_theta = resqrl::dists::sample_gamma(base.a_theta, base.b_theta, rng).unwrap();
    let alpha_omega = resqrl::dists::sample_gamma(base.a_omega, base.b_omega, rng).unwrap();

    let mut clusters: Vec<ClusterState> = Vec::new();
    let mut s_y = Vec::with_capacity(n);
    let mut s_x = Vec::with_capacity(n);
    for i in 0..n {
        // Outcome-level urn.
        let total = i as f64 + alpha_theta;
        let mut u = rng.gen::<f64>() * total;
        let mut k = clusters.len();
        for (c, cluster) in clusters.iter().enumerate() {
            if u < cluster.n as f64 {
                k = c;
                break;
            }
            u -= cluster.n as f64;
        }
        if k == clusters.len() {
            clusters.push(ClusterState {
                params: ctx.draw_prior(rng),
                n: 0,
                subs: Vec::new(),
            });
        }
        // Nested urn within cluster k.
        let cluster = &mut clusters[k];
        let total = cluster.n as f64 + alpha_omega;
        let mut v = rng.gen::<f64>() * total;
        let mut r = cluster.subs.len();
        for (c, sub) in cluster.subs.iter().enumerate() {
            if v < sub.n as f64 {
                r = c;
                break;
            }
            v -= sub.n as f64;
        }
        if r == cluster.subs.len() {
            cluster.subs.push(SubState {
                params: draw_subcluster_prior(base, rng),
                n: 0,
            });
        }
        cluster.n += 1;
        cluster.subs[r].n += 1;
        s_y.push(k);
        s_x.push(r);
    }

    // Data from the local kernels, censored at the fixed thresholds.
    let mut z = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    let mut y_log = Vec::with_capacity(n);
    let mut log_t = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(n);
    let mut design = Vec::with_capacity(n * 3);
    for i in 0..n {
        let omega = &clusters[s_y[i]].subs[s_x[i]].params;
        let theta = &clusters[s_y[i]].params;
        let zi = f64::from(rng.gen::<f64>() < omega.omega_z);
        let xi = f64::from(rng.gen::<f64>() < omega.pi[0]);
        let row = [1.0, zi, xi];
        let mu = theta.linear_predictor(&row);
        let yi = mu + theta.sigma2.sqrt() * rng.sample::<f64, _>(StandardNormal);
        let ti = yi.min(censor_log[i]);
        z.push(zi as u8);
        x.push(xi);
        y_log.push(yi);
        log_t.push(ti);
        d.push(u8::from(yi <= censor_log[i]));
        design.extend_from_slice(&row);
    }

    let state = SamplerState::from_parts(y_log, design, s_y, s_x, clusters, alpha_theta, alpha_omega)
        .expect("generative draw is consistent");
    GenerativeDraw { state, z, x, log_t, d }
}

/// Label-invariant test statistics: subject-averaged intercept,
/// subject-averaged residual variance, and the outcome concentration.
pub fn geweke_stats(state: &SamplerState) -> [f64; 3] {
    let n = state.n() as f64;
    let mut b0 = 0.0;
    let mut s2 = 0.0;
    for i in 0..state.n() {
        let params = &state.clusters[state.s_y[i]].params;
        b0 += params.beta[0];
        s2 += params.sigma2;
    }
    [b0 / n, s2 / n, state.alpha_theta]
}
