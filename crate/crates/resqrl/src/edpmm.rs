//! The enriched Dirichlet process mixture Gibbs sampler.
//!
//! Each sweep augments censored outcomes, imputes missing covariates, updates
//! the nested cluster assignments through a Pólya-urn step with auxiliary
//! parameters, refreshes cluster and subcluster parameters from their
//! conjugate full conditionals, and updates both concentration parameters.
//!
//! A chain is strictly sequential; run multiple chains or replicates
//! concurrently, each with its own RNG stream.

use crate::data::Dataset;
use crate::dists::sample_truncated_normal;
use crate::model::{
    draw_subcluster_prior, outcome_posterior, sample_outcome_params, sample_subcluster_params,
    update_alpha_omega_mh, update_concentration_escobar_west, BaseMeasure, MCMCConfig,
    OutcomeClusterParams, OutcomePriorCtx, OutcomeStats, PosteriorDraw, SubclusterParams,
    SubclusterStats, DrawCluster, DrawSubcluster,
};
use crate::rng::{Rng, SeedFactory};
use crate::{Error, Result};
use rand::Rng as _;
use rand_distr::StandardNormal;
use std::sync::Arc;

/// Immutable per-subject inputs the sampler conditions on.
#[derive(Debug, Clone)]
pub struct SamplerInput {
    pub log_t: Vec<f64>,
    pub d: Vec<u8>,
    pub z: Vec<u8>,
    /// (subject, covariate index) positions observed as missing.
    pub missing: Vec<(usize, usize)>,
    pub p_binary: usize,
    pub p_continuous: usize,
}

impl SamplerInput {
    pub fn new(data: &Dataset) -> Self {
        SamplerInput {
            log_t: data.records().iter().map(|r| r.t.ln()).collect(),
            d: data.records().iter().map(|r| r.d).collect(),
            z: data.records().iter().map(|r| r.z).collect(),
            missing: data.missing_mask(),
            p_binary: data.schema().binary_count(),
            p_continuous: data.schema().continuous_count(),
        }
    }

    pub fn n(&self) -> usize {
        self.log_t.len()
    }
}

/// One nested exposure/covariate subcluster.
#[derive(Debug, Clone)]
pub struct SubState {
    pub params: SubclusterParams,
    pub n: usize,
}

/// One occupied outcome cluster with its nested subclusters.
#[derive(Debug, Clone)]
pub struct ClusterState {
    pub params: OutcomeClusterParams,
    pub n: usize,
    pub subs: Vec<SubState>,
}

/// Mutable sampler state: augmented outcomes, completed covariates, nested
/// assignments, occupied clusters, and concentrations.
#[derive(Debug, Clone)]
pub struct SamplerState {
    /// Augmented log event times (exact log t for events).
    pub y_log: Vec<f64>,
    /// Row-major N × (2 + p) design matrix (1, z, x); imputation rewrites the
    /// covariate columns of masked entries only.
    design: Vec<f64>,
    dim: usize,
    pub s_y: Vec<usize>,
    pub s_x: Vec<usize>,
    pub clusters: Vec<ClusterState>,
    pub alpha_theta: f64,
    pub alpha_omega: f64,
}

impl SamplerState {
    /// Assemble a state from explicit parts (validation harnesses build exact
    /// configurations this way). `design` is row-major N × (2 + p) with
    /// columns (1, z, x...); counts must already be consistent.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        y_log: Vec<f64>,
        design: Vec<f64>,
        s_y: Vec<usize>,
        s_x: Vec<usize>,
        clusters: Vec<ClusterState>,
        alpha_theta: f64,
        alpha_omega: f64,
    ) -> Result<Self> {
        let n = y_log.len();
        if n == 0 || design.len() % n != 0 {
            return Err(Error::InvalidParam("design length must be a multiple of n".into()));
        }
        let dim = design.len() / n;
        if dim < 2 || s_y.len() != n || s_x.len() != n {
            return Err(Error::InvalidParam("assignment vectors must have length n".into()));
        }
        let state = SamplerState {
            y_log,
            design,
            dim,
            s_y,
            s_x,
            clusters,
            alpha_theta,
            alpha_omega,
        };
        for i in 0..n {
            let k = state.s_y[i];
            if k >= state.clusters.len() || state.s_x[i] >= state.clusters[k].subs.len() {
                return Err(Error::InvalidParam(format!("assignment of subject {i} out of range")));
            }
        }
        if !state.counts_consistent() {
            return Err(Error::InvalidParam("cluster counts are inconsistent".into()));
        }
        Ok(state)
    }

    /// Overwrite data columns after external regeneration (joint-distribution
    /// validation drives the sampler this way): new augmented outcomes plus
    /// exposure and covariate values per subject.
    pub fn set_observables(&mut self, i: usize, y_log: f64, z: f64, x: &[f64]) {
        self.y_log[i] = y_log;
        self.design[i * self.dim + 1] = z;
        for (q, &v) in x.iter().enumerate() {
            self.design[i * self.dim + 2 + q] = v;
        }
    }

    pub fn n(&self) -> usize {
        self.y_log.len()
    }

    pub fn design_row(&self, i: usize) -> &[f64] {
        &self.design[i * self.dim..(i + 1) * self.dim]
    }

    /// Completed covariate value for subject `i`, covariate `q`.
    pub fn x_value(&self, i: usize, q: usize) -> f64 {
        self.design[i * self.dim + 2 + q]
    }

    fn set_x(&mut self, i: usize, q: usize, v: f64) {
        self.design[i * self.dim + 2 + q] = v;
    }

    /// Σ_k n_k = N, nested counts consistent, and no empty occupied cluster.
    pub fn counts_consistent(&self) -> bool {
        let total: usize = self.clusters.iter().map(|c| c.n).sum();
        total == self.n()
            && self.clusters.iter().all(|c| {
                c.n > 0
                    && !c.subs.is_empty()
                    && c.subs.iter().all(|s| s.n > 0)
                    && c.n == c.subs.iter().map(|s| s.n).sum::<usize>()
            })
    }

    pub fn snapshot(&self, base: &Arc<BaseMeasure>) -> PosteriorDraw {
        PosteriorDraw {
            clusters: self
                .clusters
                .iter()
                .map(|c| DrawCluster {
                    n: c.n,
                    params: c.params.clone(),
                    subclusters: c
                        .subs
                        .iter()
                        .map(|s| DrawSubcluster {
                            n: s.n,
                            params: s.params.clone(),
                        })
                        .collect(),
                })
                .collect(),
            alpha_theta: self.alpha_theta,
            alpha_omega: self.alpha_omega,
            n: self.n(),
            base: Arc::clone(base),
        }
    }

    fn all_finite(&self) -> bool {
        self.y_log.iter().all(|y| y.is_finite())
            && self.alpha_theta.is_finite()
            && self.alpha_theta > 0.0
            && self.alpha_omega.is_finite()
            && self.alpha_omega > 0.0
            && self
                .clusters
                .iter()
                .all(|c| c.params.is_finite() && c.subs.iter().all(|s| s.params.is_finite()))
    }
}

/// Pólya-urn weight for an existing (cluster, subcluster) pair.
pub fn zeta_existing(n_k: usize, n_rk: usize, alpha_omega: f64) -> f64 {
    n_k as f64 * n_rk as f64 / (n_k as f64 + alpha_omega)
}

/// Pólya-urn weight for a fresh subcluster within an existing cluster.
pub fn zeta_new_subcluster(n_k: usize, alpha_omega: f64, k_new: usize) -> f64 {
    n_k as f64 * (alpha_omega / k_new as f64) / (n_k as f64 + alpha_omega)
}

/// Pólya-urn weight for a fresh outcome cluster.
pub fn zeta_new_cluster(alpha_theta: f64, k_new: usize) -> f64 {
    alpha_theta / k_new as f64
}

/// Build the initial state: every subject in a single cluster with a single
/// subcluster, censored outcomes offset by +0.1 on the log scale, missing
/// binary covariates set to the observed mode and missing continuous to the
/// observed mean, then cluster parameters drawn from their full conditionals.
pub fn init_state(
    data: &Dataset,
    base: &BaseMeasure,
    cfg: &MCMCConfig,
    rng: &mut Rng,
) -> Result<SamplerState> {
    cfg.validate()?;
    base.validate()?;
    let input = SamplerInput::new(data);
    let n = input.n();
    let p = input.p_binary + input.p_continuous;
    let dim = 2 + p;
    if base.design_dim() != dim {
        return Err(Error::InvalidParam(format!(
            "base measure dimension {} does not match dataset design dimension {dim}",
            base.design_dim()
        )));
    }

    let y_log: Vec<f64> = input
        .log_t
        .iter()
        .zip(&input.d)
        .map(|(&lt, &d)| if d == 1 { lt } else { lt + 0.1 })
        .collect();

    // Observed per-covariate mode/mean fallbacks.
    let mut fill = vec![0.0f64; p];
    for q in 0..p {
        let observed: Vec<f64> = data
            .records()
            .iter()
            .filter_map(|r| r.x[q])
            .collect();
        if observed.is_empty() {
            fill[q] = if q < input.p_binary { 0.0 } else { base.a_mu };
        } else {
            let mean = observed.iter().sum::<f64>() / observed.len() as f64;
            fill[q] = if q < input.p_binary {
                f64::from(mean >= 0.5)
            } else {
                mean
            };
        }
    }

    let mut design = Vec::with_capacity(n * dim);
    for (i, r) in data.records().iter().enumerate() {
        design.push(1.0);
        design.push(input.z[i] as f64);
        for q in 0..p {
            design.push(r.x[q].unwrap_or(fill[q]));
        }
    }

    let placeholder_theta = OutcomeClusterParams {
        beta: vec![0.0; dim],
        sigma2: 1.0,
    };
    let placeholder_omega = SubclusterParams {
        omega_z: 0.5,
        pi: vec![0.5; input.p_binary],
        mu: vec![0.0; input.p_continuous],
        tau2: vec![1.0; input.p_continuous],
    };
    let mut state = SamplerState {
        y_log,
        design,
        dim,
        s_y: vec![0; n],
        s_x: vec![0; n],
        clusters: vec![ClusterState {
            params: placeholder_theta,
            n,
            subs: vec![SubState {
                params: placeholder_omega,
                n,
            }],
        }],
        alpha_theta: 1.0,
        alpha_omega: 1.0,
    };
    update_outcome_params(&mut state, base, rng)?;
    update_subcluster_params(&mut state, base, rng);
    Ok(state)
}

/// Redraw the latent log event time of every censored subject from its
/// cluster's truncated normal full conditional, with the (φ, η) perturbation
/// from `cfg` applied ((0, 1) reproduces the primary model).
pub fn augment_censored_outcomes(
    state: &mut SamplerState,
    input: &SamplerInput,
    cfg: &MCMCConfig,
    rng: &mut Rng,
) -> Result<()> {
    let (phi, eta) = cfg.phi_eta();
    for i in 0..state.n() {
        if input.d[i] == 1 {
            continue;
        }
        let params = &state.clusters[state.s_y[i]].params;
        let mean = params.linear_predictor(state.design_row(i)) + phi;
        let var = eta * params.sigma2;
        state.y_log[i] = sample_truncated_normal(mean, var, input.log_t[i], rng)?;
    }
    Ok(())
}

/// Redraw every masked covariate entry from its full conditional given the
/// local kernel prior and the outcome likelihood; observed entries untouched.
pub fn impute_missing_covariates(state: &mut SamplerState, input: &SamplerInput, rng: &mut Rng) {
    for &(i, q) in &input.missing {
        let theta = &state.clusters[state.s_y[i]].params;
        let omega = &state.clusters[state.s_y[i]].subs[state.s_x[i]].params;
        let col = 2 + q;
        let row = state.design_row(i);
        let beta_q = theta.beta[col];
        let lp_without_q = theta.linear_predictor(row) - row[col] * beta_q;
        let y = state.y_log[i];
        let new_value = if q < input.p_binary {
            let pi = omega.pi[q];
            if pi <= 0.0 {
                0.0
            } else if pi >= 1.0 {
                1.0
            } else {
                let sd = theta.sigma2.sqrt();
                let log_w1 = pi.ln() - 0.5 * ((y - lp_without_q - beta_q) / sd).powi(2);
                let log_w0 = (1.0 - pi).ln() - 0.5 * ((y - lp_without_q) / sd).powi(2);
                let prob1 = 1.0 / (1.0 + (log_w0 - log_w1).exp());
                f64::from(rng.gen::<f64>() < prob1)
            }
        } else {
            let qc = q - input.p_binary;
            let mu = omega.mu[qc];
            let tau2 = omega.tau2[qc];
            let partial_residual = y - lp_without_q;
            let prec = 1.0 / tau2 + beta_q * beta_q / theta.sigma2;
            let var = 1.0 / prec;
            let mean = var * (mu / tau2 + beta_q * partial_residual / theta.sigma2);
            mean + var.sqrt() * rng.sample::<f64, _>(StandardNormal)
        };
        state.set_x(i, q, new_value);
    }
}

enum Candidate {
    Existing { k: usize, r: usize },
    NewSubcluster { k: usize, aux: usize },
    NewCluster { aux: usize },
}

fn remove_subcluster(state: &mut SamplerState, k: usize, r: usize) -> SubState {
    let sub = state.clusters[k].subs.swap_remove(r);
    let moved = state.clusters[k].subs.len();
    if r < moved {
        for i in 0..state.s_y.len() {
            if state.s_y[i] == k && state.s_x[i] == moved {
                state.s_x[i] = r;
            }
        }
    }
    sub
}

fn remove_cluster(state: &mut SamplerState, k: usize) -> ClusterState {
    let cluster = state.clusters.swap_remove(k);
    let moved = state.clusters.len();
    if k < moved {
        for s in state.s_y.iter_mut() {
            if *s == moved {
                *s = k;
            }
        }
    }
    cluster
}

/// One full pass of nested cluster reassignment.
///
/// Each subject is removed from its pair (deleting emptied clusters or
/// subclusters), `k_new` auxiliary clusters and per-cluster auxiliary
/// subclusters are instantiated from G₀ (a subject leaving a singleton keeps
/// its parameters as the first auxiliary), and the new pair is drawn with
/// probability ∝ ζ · f(y | z, x; θ) · f(z, x; ω). Unselected auxiliaries are
/// discarded.
pub fn update_assignments(
    state: &mut SamplerState,
    base: &BaseMeasure,
    cfg: &MCMCConfig,
    rng: &mut Rng,
) -> Result<()> {
    let ctx = OutcomePriorCtx::new(base)?;
    let k_new = cfg.k_new;
    let n = state.n();
    let mut log_weights: Vec<f64> = Vec::new();
    let mut candidates: Vec<Candidate> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();

    for i in 0..n {
        let (k0, r0) = (state.s_y[i], state.s_x[i]);
        state.clusters[k0].n -= 1;
        state.clusters[k0].subs[r0].n -= 1;
        let mut retained_sub: Option<(usize, SubclusterParams)> = None;
        let mut retained_cluster: Option<(OutcomeClusterParams, SubclusterParams)> = None;
        if state.clusters[k0].subs[r0].n == 0 {
            let sub = remove_subcluster(state, k0, r0);
            if state.clusters[k0].n == 0 {
                let cluster = remove_cluster(state, k0);
                retained_cluster = Some((cluster.params, sub.params));
            } else {
                retained_sub = Some((k0, sub.params));
            }
        }

        // Auxiliary parameter sets drawn from G₀, with singleton retention.
        let k_existing = state.clusters.len();
        let mut aux_subs: Vec<Vec<SubclusterParams>> = Vec::with_capacity(k_existing);
        for k in 0..k_existing {
            let mut per_cluster = Vec::with_capacity(k_new);
            for j in 0..k_new {
                if j == 0 {
                    if let Some((rk, params)) = &retained_sub {
                        if *rk == k {
                            per_cluster.push(params.clone());
                            continue;
                        }
                    }
                }
                per_cluster.push(draw_subcluster_prior(base, rng));
            }
            aux_subs.push(per_cluster);
        }
        let mut aux_clusters: Vec<(OutcomeClusterParams, SubclusterParams)> =
            Vec::with_capacity(k_new);
        for j in 0..k_new {
            if j == 0 {
                if let Some(pair) = retained_cluster.take() {
                    aux_clusters.push(pair);
                    continue;
                }
            }
            aux_clusters.push((ctx.draw_prior(rng), draw_subcluster_prior(base, rng)));
        }

        // Candidate weights in log space.
        log_weights.clear();
        candidates.clear();
        let row = &state.design[i * state.dim..(i + 1) * state.dim];
        let y = state.y_log[i];
        let z = row[1];
        let x = &row[2..];
        for (k, cluster) in state.clusters.iter().enumerate() {
            let outcome_ll = cluster.params.log_lik(y, row);
            for (r, sub) in cluster.subs.iter().enumerate() {
                let zeta = zeta_existing(cluster.n, sub.n, state.alpha_omega);
                log_weights.push(zeta.ln() + outcome_ll + sub.params.log_lik(z, x));
                candidates.push(Candidate::Existing { k, r });
            }
            let zeta = zeta_new_subcluster(cluster.n, state.alpha_omega, k_new);
            for (aux, params) in aux_subs[k].iter().enumerate() {
                log_weights.push(zeta.ln() + outcome_ll + params.log_lik(z, x));
                candidates.push(Candidate::NewSubcluster { k, aux });
            }
        }
        let zeta = zeta_new_cluster(state.alpha_theta, k_new);
        for (aux, (theta, omega)) in aux_clusters.iter().enumerate() {
            log_weights.push(zeta.ln() + theta.log_lik(y, row) + omega.log_lik(z, x));
            candidates.push(Candidate::NewCluster { aux });
        }

        // Normalize with max subtraction and draw.
        let max = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::NonFinite(format!(
                "assignment weights for subject {i} are all zero or non-finite"
            )));
        }
        weights.clear();
        let mut total = 0.0;
        for &lw in &log_weights {
            let w = (lw - max).exp();
            total += w;
            weights.push(w);
        }
        let mut u = rng.gen::<f64>() * total;
        let mut chosen = weights.len() - 1;
        for (c, &w) in weights.iter().enumerate() {
            if u < w {
                chosen = c;
                break;
            }
            u -= w;
        }

        match candidates[chosen] {
            Candidate::Existing { k, r } => {
                state.clusters[k].n += 1;
                state.clusters[k].subs[r].n += 1;
                state.s_y[i] = k;
                state.s_x[i] = r;
            }
            Candidate::NewSubcluster { k, aux } => {
                let params = aux_subs[k][aux].clone();
                state.clusters[k].subs.push(SubState { params, n: 1 });
                state.clusters[k].n += 1;
                state.s_y[i] = k;
                state.s_x[i] = state.clusters[k].subs.len() - 1;
            }
            Candidate::NewCluster { aux } => {
                let (theta, omega) = aux_clusters.swap_remove(aux);
                state.clusters.push(ClusterState {
                    params: theta,
                    n: 1,
                    subs: vec![SubState { params: omega, n: 1 }],
                });
                state.s_y[i] = state.clusters.len() - 1;
                state.s_x[i] = 0;
            }
        }
    }
    Ok(())
}

/// Refresh θ*_k for every occupied cluster from the normal–scaled-inverse-χ²
/// full conditional over its members.
pub fn update_outcome_params(
    state: &mut SamplerState,
    base: &BaseMeasure,
    rng: &mut Rng,
) -> Result<()> {
    let ctx = OutcomePriorCtx::new(base)?;
    update_outcome_params_ctx(state, &ctx, rng)
}

pub(crate) fn update_outcome_params_ctx(
    state: &mut SamplerState,
    ctx: &OutcomePriorCtx,
    rng: &mut Rng,
) -> Result<()> {
    let dim = state.dim;
    let mut stats: Vec<OutcomeStats> = (0..state.clusters.len())
        .map(|_| OutcomeStats::zeros(dim))
        .collect();
    for i in 0..state.n() {
        stats[state.s_y[i]].add(state.design_row(i), state.y_log[i]);
    }
    for (k, cluster_stats) in stats.iter().enumerate() {
        let posterior = outcome_posterior(ctx, cluster_stats)?;
        let params = sample_outcome_params(&posterior, rng);
        if !params.is_finite() {
            return Err(Error::NonFinite(format!("outcome parameters of cluster {k}")));
        }
        state.clusters[k].params = params;
    }
    Ok(())
}

/// Refresh ω*_{r|k} for every occupied subcluster: Beta posteriors for the
/// exposure and binary covariates, normal–scaled-inverse-χ² for continuous.
pub fn update_subcluster_params(state: &mut SamplerState, base: &BaseMeasure, rng: &mut Rng) {
    let (p1, p2) = (base.p_binary, base.p_continuous);
    let mut stats: Vec<Vec<SubclusterStats>> = state
        .clusters
        .iter()
        .map(|c| (0..c.subs.len()).map(|_| SubclusterStats::zeros(p1, p2)).collect())
        .collect();
    for i in 0..state.n() {
        let row = state.design_row(i);
        stats[state.s_y[i]][state.s_x[i]].add(row[1], &row[2..]);
    }
    for (k, cluster_stats) in stats.iter().enumerate() {
        for (r, sub_stats) in cluster_stats.iter().enumerate() {
            state.clusters[k].subs[r].params = sample_subcluster_params(base, sub_stats, rng);
        }
    }
}

/// Escobar–West update of the outcome-level concentration α_θ.
pub fn update_alpha_theta(state: &mut SamplerState, base: &BaseMeasure, rng: &mut Rng) {
    state.alpha_theta = update_concentration_escobar_west(
        state.alpha_theta,
        state.clusters.len(),
        state.n(),
        base.a_theta,
        base.b_theta,
        rng,
    );
}

/// Metropolis–Hastings update of the nested concentration α_ω.
pub fn update_alpha_omega(state: &mut SamplerState, base: &BaseMeasure, rng: &mut Rng) {
    let sizes: Vec<(usize, usize)> = state
        .clusters
        .iter()
        .map(|c| (c.n, c.subs.len()))
        .collect();
    state.alpha_omega =
        update_alpha_omega_mh(state.alpha_omega, &sizes, base.a_omega, base.b_omega, rng);
}

/// One full Gibbs sweep in the fixed order: augment → impute → assignments →
/// outcome params → subcluster params → concentration updates.
pub fn sweep_once(
    state: &mut SamplerState,
    input: &SamplerInput,
    base: &BaseMeasure,
    cfg: &MCMCConfig,
    rng: &mut Rng,
) -> Result<()> {
    augment_censored_outcomes(state, input, cfg, rng)?;
    impute_missing_covariates(state, input, rng);
    update_assignments(state, base, cfg, rng)?;
    update_outcome_params(state, base, rng)?;
    update_subcluster_params(state, base, rng);
    update_alpha_theta(state, base, rng);
    update_alpha_omega(state, base, rng);
    Ok(())
}

/// Run the sampler: burn-in plus retained sweeps, thinned. Returns
/// `iterations / thin` posterior draws.
pub fn run_chain(
    data: &Dataset,
    base: &BaseMeasure,
    cfg: &MCMCConfig,
) -> Result<Vec<PosteriorDraw>> {
    cfg.validate()?;
    let input = SamplerInput::new(data);
    let factory = SeedFactory::new(cfg.seed);
    let mut rng = factory.stream("edpmm/chain");
    let mut state = init_state(data, base, cfg, &mut rng)?;
    let base_arc = Arc::new(base.clone());
    let mut draws = Vec::with_capacity(cfg.retained_draws());
    for sweep in 0..cfg.burn_in + cfg.iterations {
        sweep_once(&mut state, &input, base, cfg, &mut rng)?;
        if !state.all_finite() {
            return Err(Error::NonFinite(format!("sampler state after sweep {sweep}")));
        }
        if sweep >= cfg.burn_in && (sweep - cfg.burn_in + 1) % cfg.thin == 0 {
            draws.push(state.snapshot(&base_arc));
        }
    }
    Ok(draws)
}
