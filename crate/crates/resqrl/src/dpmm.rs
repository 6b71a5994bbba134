//! Single-layer joint DPMM benchmark: identical local kernels and base
//! measure as the enriched sampler, but one DP prior over the joint (θ, ω).
//!
//! Retained draws are emitted in the shared [`PosteriorDraw`] layout with one
//! subcluster per cluster and `alpha_omega = 0`, which makes the
//! g-computation weights reduce exactly to the flat-mixture forms.

use crate::data::Dataset;
use crate::dists::sample_truncated_normal;
use crate::edpmm::SamplerInput;
use crate::gcomp;
use crate::model::{
    draw_subcluster_prior, outcome_posterior, sample_outcome_params, sample_subcluster_params,
    update_concentration_escobar_west, BaseMeasure, DrawCluster, DrawSubcluster, MCMCConfig,
    OutcomeClusterParams, OutcomePriorCtx, OutcomeStats, PosteriorDraw, SubclusterParams,
    SubclusterStats,
};
use crate::rng::{Rng, SeedFactory};
use crate::{Error, Result};
use rand::Rng as _;
use rand_distr::StandardNormal;
use std::sync::Arc;

/// One flat cluster carrying the outcome and exposure/covariate parameters
/// jointly.
#[derive(Debug, Clone)]
pub struct FlatCluster {
    pub theta: OutcomeClusterParams,
    pub omega: SubclusterParams,
    pub n: usize,
}

/// Sampler state for the flat comparator: a single assignment vector and a
/// single concentration.
#[derive(Debug, Clone)]
pub struct DpmmState {
    pub y_log: Vec<f64>,
    design: Vec<f64>,
    dim: usize,
    pub s: Vec<usize>,
    pub clusters: Vec<FlatCluster>,
    pub alpha: f64,
}

impl DpmmState {
    pub fn n(&self) -> usize {
        self.y_log.len()
    }

    pub fn design_row(&self, i: usize) -> &[f64] {
        &self.design[i * self.dim..(i + 1) * self.dim]
    }

    pub fn x_value(&self, i: usize, q: usize) -> f64 {
        self.design[i * self.dim + 2 + q]
    }

    pub fn counts_consistent(&self) -> bool {
        self.clusters.iter().map(|c| c.n).sum::<usize>() == self.n()
            && self.clusters.iter().all(|c| c.n > 0)
    }

    pub fn snapshot(&self, base: &Arc<BaseMeasure>) -> PosteriorDraw {
        PosteriorDraw {
            clusters: self
                .clusters
                .iter()
                .map(|c| DrawCluster {
                    n: c.n,
                    params: c.theta.clone(),
                    subclusters: vec![DrawSubcluster {
                        n: c.n,
                        params: c.omega.clone(),
                    }],
                })
                .collect(),
            alpha_theta: self.alpha,
            alpha_omega: 0.0,
            n: self.n(),
            base: Arc::clone(base),
        }
    }

    fn all_finite(&self) -> bool {
        self.y_log.iter().all(|y| y.is_finite())
            && self.alpha.is_finite()
            && self.alpha > 0.0
            && self
                .clusters
                .iter()
                .all(|c| c.theta.is_finite() && c.omega.is_finite())
    }
}

/// Single-cluster initialization mirroring the enriched sampler's rules.
pub fn init_state_dpmm(
    data: &Dataset,
    base: &BaseMeasure,
    cfg: &MCMCConfig,
    rng: &mut Rng,
) -> Result<DpmmState> {
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
    let mut fill = vec![0.0f64; p];
    for q in 0..p {
        let observed: Vec<f64> = data.records().iter().filter_map(|r| r.x[q]).collect();
        if observed.is_empty() {
            fill[q] = if q < input.p_binary { 0.0 } else { base.a_mu };
        } else {
            let mean = observed.iter().sum::<f64>() / observed.len() as f64;
            fill[q] = if q < input.p_binary { f64::from(mean >= 0.5) } else { mean };
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
    let mut state = DpmmState {
        y_log,
        design,
        dim,
        s: vec![0; n],
        clusters: vec![FlatCluster {
            theta: OutcomeClusterParams {
                beta: vec![0.0; dim],
                sigma2: 1.0,
            },
            omega: SubclusterParams {
                omega_z: 0.5,
                pi: vec![0.5; input.p_binary],
                mu: vec![0.0; input.p_continuous],
                tau2: vec![1.0; input.p_continuous],
            },
            n,
        }],
        alpha: 1.0,
    };
    update_params_dpmm(&mut state, base, rng)?;
    Ok(state)
}

fn augment_dpmm(
    state: &mut DpmmState,
    input: &SamplerInput,
    cfg: &MCMCConfig,
    rng: &mut Rng,
) -> Result<()> {
    let (phi, eta) = cfg.phi_eta();
    for i in 0..state.n() {
        if input.d[i] == 1 {
            continue;
        }
        let theta = &state.clusters[state.s[i]].theta;
        let mean = theta.linear_predictor(state.design_row(i)) + phi;
        state.y_log[i] = sample_truncated_normal(mean, eta * theta.sigma2, input.log_t[i], rng)?;
    }
    Ok(())
}

fn impute_dpmm(state: &mut DpmmState, input: &SamplerInput, rng: &mut Rng) {
    for &(i, q) in &input.missing {
        let cluster = &state.clusters[state.s[i]];
        let theta = &cluster.theta;
        let omega = &cluster.omega;
        let col = 2 + q;
        let row = state.design_row(i);
        let beta_q = theta.beta[col];
        let lp_without_q = theta.linear_predictor(row) - row[col] * beta_q;
        let y = state.y_log[i];
        let value = if q < input.p_binary {
            let pi = omega.pi[q];
            if pi <= 0.0 {
                0.0
            } else if pi >= 1.0 {
                1.0
            } else {
                let sd = theta.sigma2.sqrt();
                let log_w1 = pi.ln() - 0.5 * ((y - lp_without_q - beta_q) / sd).powi(2);
                let log_w0 = (1.0 - pi).ln() - 0.5 * ((y - lp_without_q) / sd).powi(2);
                f64::from(rng.gen::<f64>() < 1.0 / (1.0 + (log_w0 - log_w1).exp()))
            }
        } else {
            let qc = q - input.p_binary;
            let prec = 1.0 / omega.tau2[qc] + beta_q * beta_q / theta.sigma2;
            let var = 1.0 / prec;
            let mean = var
                * (omega.mu[qc] / omega.tau2[qc] + beta_q * (y - lp_without_q) / theta.sigma2);
            mean + var.sqrt() * rng.sample::<f64, _>(StandardNormal)
        };
        state.design[i * state.dim + col] = value;
    }
}

/// Flat Pólya-urn reassignment: existing clusters weighted n_k^{−i}, the
/// k_new auxiliary clusters α/k_new, each with a joint (θ, ω) drawn from G₀
/// (singleton retention as in the enriched sampler).
fn update_assignments_dpmm(
    state: &mut DpmmState,
    base: &BaseMeasure,
    cfg: &MCMCConfig,
    rng: &mut Rng,
) -> Result<()> {
    let ctx = OutcomePriorCtx::new(base)?;
    let k_new = cfg.k_new;
    let mut log_weights: Vec<f64> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for i in 0..state.n() {
        let k0 = state.s[i];
        state.clusters[k0].n -= 1;
        let mut retained: Option<(OutcomeClusterParams, SubclusterParams)> = None;
        if state.clusters[k0].n == 0 {
            let cluster = state.clusters.swap_remove(k0);
            let moved = state.clusters.len();
            if k0 < moved {
                for s in state.s.iter_mut() {
                    if *s == moved {
                        *s = k0;
                    }
                }
            }
            retained = Some((cluster.theta, cluster.omega));
        }
        let mut aux: Vec<(OutcomeClusterParams, SubclusterParams)> = Vec::with_capacity(k_new);
        for j in 0..k_new {
            if j == 0 {
                if let Some(pair) = retained.take() {
                    aux.push(pair);
                    continue;
                }
            }
            aux.push((ctx.draw_prior(rng), draw_subcluster_prior(base, rng)));
        }

        let row = &state.design[i * state.dim..(i + 1) * state.dim];
        let y = state.y_log[i];
        let z = row[1];
        let x = &row[2..];
        log_weights.clear();
        for cluster in &state.clusters {
            log_weights.push(
                (cluster.n as f64).ln()
                    + cluster.theta.log_lik(y, row)
                    + cluster.omega.log_lik(z, x),
            );
        }
        for (theta, omega) in &aux {
            log_weights.push(
                (state.alpha / k_new as f64).ln() + theta.log_lik(y, row) + omega.log_lik(z, x),
            );
        }
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
        if chosen < state.clusters.len() {
            state.clusters[chosen].n += 1;
            state.s[i] = chosen;
        } else {
            let (theta, omega) = aux.swap_remove(chosen - state.clusters.len());
            state.clusters.push(FlatCluster { theta, omega, n: 1 });
            state.s[i] = state.clusters.len() - 1;
        }
    }
    Ok(())
}

fn update_params_dpmm(state: &mut DpmmState, base: &BaseMeasure, rng: &mut Rng) -> Result<()> {
    let ctx = OutcomePriorCtx::new(base)?;
    let dim = state.dim;
    let mut out_stats: Vec<OutcomeStats> =
        (0..state.clusters.len()).map(|_| OutcomeStats::zeros(dim)).collect();
    let mut sub_stats: Vec<SubclusterStats> = (0..state.clusters.len())
        .map(|_| SubclusterStats::zeros(base.p_binary, base.p_continuous))
        .collect();
    for i in 0..state.n() {
        let row = state.design_row(i);
        out_stats[state.s[i]].add(row, state.y_log[i]);
        sub_stats[state.s[i]].add(row[1], &row[2..]);
    }
    for k in 0..state.clusters.len() {
        let posterior = outcome_posterior(&ctx, &out_stats[k])?;
        let theta = sample_outcome_params(&posterior, rng);
        if !theta.is_finite() {
            return Err(Error::NonFinite(format!("outcome parameters of cluster {k}")));
        }
        state.clusters[k].theta = theta;
        state.clusters[k].omega = sample_subcluster_params(base, &sub_stats[k], rng);
    }
    Ok(())
}

/// One full comparator sweep.
pub fn sweep_once_dpmm(
    state: &mut DpmmState,
    input: &SamplerInput,
    base: &BaseMeasure,
    cfg: &MCMCConfig,
    rng: &mut Rng,
) -> Result<()> {
    augment_dpmm(state, input, cfg, rng)?;
    impute_dpmm(state, input, rng);
    update_assignments_dpmm(state, base, cfg, rng)?;
    update_params_dpmm(state, base, rng)?;
    state.alpha = update_concentration_escobar_west(
        state.alpha,
        state.clusters.len(),
        state.n(),
        base.a_theta,
        base.b_theta,
        rng,
    );
    Ok(())
}

/// Run the flat comparator chain; mirrors [`crate::edpmm::run_chain`].
pub fn run_chain_dpmm(
    data: &Dataset,
    base: &BaseMeasure,
    cfg: &MCMCConfig,
) -> Result<Vec<PosteriorDraw>> {
    cfg.validate()?;
    let input = SamplerInput::new(data);
    let factory = SeedFactory::new(cfg.seed);
    let mut rng = factory.stream("dpmm/chain");
    let mut state = init_state_dpmm(data, base, cfg, &mut rng)?;
    let base_arc = Arc::new(base.clone());
    let mut draws = Vec::with_capacity(cfg.retained_draws());
    for sweep in 0..cfg.burn_in + cfg.iterations {
        sweep_once_dpmm(&mut state, &input, base, cfg, &mut rng)?;
        if !state.all_finite() {
            return Err(Error::NonFinite(format!("sampler state after sweep {sweep}")));
        }
        if sweep >= cfg.burn_in && (sweep - cfg.burn_in + 1) % cfg.thin == 0 {
            draws.push(state.snapshot(&base_arc));
        }
    }
    Ok(draws)
}

/// Conditional survival under a flat draw: per-cluster lognormal survivals
/// plus the prior-predictive term, weighted by Λ with the α·f₀(z, x)
/// new-cluster mass. Flat draws carry `alpha_omega = 0`, so this is the
/// shared mixture formula specialized to one layer.
pub fn dpmm_conditional_survival(draw: &PosteriorDraw, y_log: f64, z: f64, x: &[f64]) -> f64 {
    gcomp::conditional_survival(draw, y_log, z, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CovariateKind, CovariateSchema, ObservedRecord};
    use crate::dists::norm_sf;

    fn toy_dataset() -> Dataset {
        let schema = CovariateSchema::new(
            vec!["b1".into(), "c1".into()],
            vec![CovariateKind::Binary, CovariateKind::Continuous],
        )
        .unwrap();
        let raw: Vec<(f64, u8, u8, Option<f64>, Option<f64>)> = vec![
            (1.2, 1, 0, Some(1.0), Some(0.3)),
            (2.3, 0, 1, Some(0.0), Some(-0.4)),
            (0.7, 1, 1, None, Some(1.1)),
            (3.4, 1, 0, Some(0.0), Some(0.2)),
            (1.9, 0, 1, Some(1.0), None),
            (2.8, 1, 0, Some(0.0), Some(0.8)),
        ];
        let records = raw
            .into_iter()
            .map(|(t, d, z, xb, xc)| ObservedRecord::new(t, d, z, vec![xb, xc]).unwrap())
            .collect();
        Dataset::new(schema, records).unwrap()
    }

    fn toy_base(data: &Dataset) -> BaseMeasure {
        let dim = data.schema().len() + 2;
        let mut b = vec![0.0; dim * dim];
        for a in 0..dim {
            b[a * dim + a] = 1.0;
        }
        BaseMeasure::with_prior(
            vec![0.0; dim],
            b,
            data.n() as f64 / 5.0,
            data.schema().binary_count(),
            data.schema().continuous_count(),
        )
    }

    #[test]
    fn dpmm_chain_is_deterministic_with_expected_draw_count() {
        let data = toy_dataset();
        let base = toy_base(&data);
        let cfg = MCMCConfig {
            burn_in: 100,
            iterations: 200,
            thin: 20,
            k_new: 1,
            seed: 31,
            informative_censoring: None,
        };
        let a = run_chain_dpmm(&data, &base, &cfg).unwrap();
        let b = run_chain_dpmm(&data, &base, &cfg).unwrap();
        assert_eq!(a.len(), 10);
        for (da, db) in a.iter().zip(&b) {
            assert_eq!(da.clusters, db.clusters);
            assert_eq!(da.alpha_theta.to_bits(), db.alpha_theta.to_bits());
        }
        assert!(a.iter().all(|d| d.counts_consistent() && d.alpha_omega == 0.0));
    }

    #[test]
    fn sweeps_preserve_counts_bounds_and_observed_entries() {
        let data = toy_dataset();
        let base = toy_base(&data);
        let input = SamplerInput::new(&data);
        let cfg = MCMCConfig {
            burn_in: 0,
            iterations: 10,
            thin: 1,
            k_new: 2,
            seed: 32,
            informative_censoring: None,
        };
        let mut rng = SeedFactory::new(32).stream("dpmm");
        let mut state = init_state_dpmm(&data, &base, &cfg, &mut rng).unwrap();
        for _ in 0..200 {
            sweep_once_dpmm(&mut state, &input, &base, &cfg, &mut rng).unwrap();
            assert!(state.counts_consistent());
            for i in 0..state.n() {
                if input.d[i] == 0 {
                    assert!(state.y_log[i] > input.log_t[i]);
                } else {
                    assert_eq!(state.y_log[i], input.log_t[i]);
                }
            }
            for (i, r) in data.records().iter().enumerate() {
                for (q, v) in r.x.iter().enumerate() {
                    if let Some(v) = v {
                        assert_eq!(state.x_value(i, q), *v);
                    }
                }
            }
        }
    }

    #[test]
    fn single_cluster_conjugate_update_is_shared_with_edpmm() {
        // Both samplers update (β, σ²) through the same conjugate routine, so
        // a forced single cluster with the same RNG stream gives bitwise
        // identical parameters.
        let data = toy_dataset();
        let base = toy_base(&data);
        let cfg = MCMCConfig {
            burn_in: 0,
            iterations: 1,
            thin: 1,
            k_new: 1,
            seed: 33,
            informative_censoring: None,
        };
        let mut rng_flat = SeedFactory::new(33).stream("shared");
        let mut rng_nested = SeedFactory::new(33).stream("shared");
        let mut flat = init_state_dpmm(&data, &base, &cfg, &mut rng_flat).unwrap();
        let mut nested = crate::edpmm::init_state(&data, &base, &cfg, &mut rng_nested).unwrap();
        // Align augmented outcomes, then redraw parameters from the shared
        // full conditional under a common stream.
        nested.y_log.clone_from(&flat.y_log);
        let mut ra = SeedFactory::new(34).stream("upd");
        let mut rb = SeedFactory::new(34).stream("upd");
        update_params_dpmm(&mut flat, &base, &mut ra).unwrap();
        crate::edpmm::update_outcome_params(&mut nested, &base, &mut rb).unwrap();
        for (a, b) in flat.clusters[0]
            .theta
            .beta
            .iter()
            .zip(&nested.clusters[0].params.beta)
        {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(
            flat.clusters[0].theta.sigma2.to_bits(),
            nested.clusters[0].params.sigma2.to_bits()
        );
    }

    #[test]
    fn flat_conditional_survival_trivial_and_hand_weighted_cases() {
        use crate::model::{DrawCluster, DrawSubcluster};
        let base = {
            let mut b = vec![0.0; 4];
            b[0] = 1.0;
            b[3] = 1.0;
            BaseMeasure::with_prior(vec![0.0, 0.0], b, 1.0, 0, 0)
        };
        let cluster = |beta: Vec<f64>, sigma2: f64, om: f64, n: usize| DrawCluster {
            n,
            params: OutcomeClusterParams { beta, sigma2 },
            subclusters: vec![DrawSubcluster {
                n,
                params: SubclusterParams { omega_z: om, pi: vec![], mu: vec![], tau2: vec![] },
            }],
        };
        // Survival at time zero (log-time -> -inf).
        let single = PosteriorDraw {
            clusters: vec![cluster(vec![0.3, 0.1], 0.5, 0.5, 8)],
            alpha_theta: 0.0,
            alpha_omega: 0.0,
            n: 8,
            base: Arc::new(base.clone()),
        };
        assert!((dpmm_conditional_survival(&single, -700.0, 1.0, &[]) - 1.0).abs() < 1e-12);
        // α → 0, single cluster: exactly that cluster's lognormal survival.
        let y = 0.4;
        let expect = norm_sf((y - 0.4) / 0.5f64.sqrt());
        assert!((dpmm_conditional_survival(&single, y, 1.0, &[]) - expect).abs() < 1e-12);

        // Two clusters with hand-set weights.
        let two = PosteriorDraw {
            clusters: vec![
                cluster(vec![0.0, 0.0], 1.0, 0.9, 6),
                cluster(vec![1.0, 0.5], 0.25, 0.2, 4),
            ],
            alpha_theta: 0.0,
            alpha_omega: 0.0,
            n: 10,
            base: Arc::new(base),
        };
        let (y, z) = (0.8, 1.0);
        let w1 = 6.0 * 0.9;
        let w2 = 4.0 * 0.2;
        let oracle = (w1 * norm_sf(y) + w2 * norm_sf((y - 1.5) / 0.5)) / (w1 + w2);
        let got = dpmm_conditional_survival(&two, y, z, &[]);
        assert!((got - oracle).abs() < 1e-12, "got={got} oracle={oracle}");
    }
}
