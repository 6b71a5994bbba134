//! Operator surface: configuration files, subcommands, artifact persistence,
//! and plot-ready table emission.
//!
//! Every command is a pure function of (config, seed, input files): rerunning
//! with the same inputs reproduces outputs byte for byte. Each run writes a
//! `manifest.toml` echoing the resolved configuration so a third party can
//! re-derive every table from the raw inputs.

use crate::data::{kaplan_meier, load_dataset, save_step_survival, CovariateKind, CovariateSchema};
use crate::drawio::{read_draws, schema_hash, write_draws};
use crate::gcomp::{osqc, survival_curves, EstimandRequest, OSQCResult};
use crate::model::{BaseMeasure, MCMCConfig, ModelKind};
use crate::rng::SeedFactory;
use crate::sim::{run_replicates, MetricsTable, MixtureModelEstimator, ScenarioConfig};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::path::{Path, PathBuf};

pub const SEED_ENV_VAR: &str = "RESQRL_SEED";

/// Exit code for a failed run: configuration, parsing, validation, and
/// schema problems exit 2; runtime failures exit 1.
pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Io(_)
        | Error::Csv(_)
        | Error::Parse { .. }
        | Error::Validation { .. }
        | Error::InvalidParam(_)
        | Error::Config(_)
        | Error::SchemaMismatch(_) => 2,
        Error::DrawContext { source, .. } => exit_code(source),
        _ => 1,
    }
}

fn read_config<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("invalid config: {e}")))
        }
    }
}

/// Seed resolution order: explicit flag, config key, then the environment
/// variable. Wall-clock seeding is never used; a missing seed is an error.
pub fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> Result<u64> {
    if let Some(seed) = flag.or(config) {
        return Ok(seed);
    }
    if let Ok(text) = std::env::var(SEED_ENV_VAR) {
        return text
            .trim()
            .parse::<u64>()
            .map_err(|_| Error::Config(format!("{SEED_ENV_VAR} must be an unsigned integer")));
    }
    Err(Error::Config(format!(
        "no seed given: pass --seed, set `seed` in the config, or export {SEED_ENV_VAR}"
    )))
}

fn ensure_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn write_manifest<T: Serialize>(dir: &Path, manifest: &T) -> Result<()> {
    let text = toml::to_string_pretty(manifest)
        .map_err(|e| Error::Config(format!("manifest serialization failed: {e}")))?;
    let mut file = std::fs::File::create(dir.join("manifest.toml"))?;
    file.write_all(text.as_bytes())?;
    Ok(())
}

/// Covariate schema keys shared by the dataset-reading commands.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaConfig {
    #[serde(default)]
    pub binary: Vec<String>,
    #[serde(default)]
    pub continuous: Vec<String>,
}

impl SchemaConfig {
    pub fn build(&self) -> Result<CovariateSchema> {
        let mut names = self.binary.clone();
        names.extend(self.continuous.iter().cloned());
        let mut kinds = vec![CovariateKind::Binary; self.binary.len()];
        kinds.extend(vec![CovariateKind::Continuous; self.continuous.len()]);
        CovariateSchema::new(names, kinds)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McmcKeys {
    pub burn_in: usize,
    pub iterations: usize,
    pub thin: usize,
    pub k_new: usize,
}

impl Default for McmcKeys {
    fn default() -> Self {
        let d = MCMCConfig::default();
        McmcKeys {
            burn_in: d.burn_in,
            iterations: d.iterations,
            thin: d.thin,
            k_new: d.k_new,
        }
    }
}

impl McmcKeys {
    fn build(&self, seed: u64, phi_eta: Option<(f64, f64)>) -> MCMCConfig {
        MCMCConfig {
            burn_in: self.burn_in,
            iterations: self.iterations,
            thin: self.thin,
            k_new: self.k_new,
            seed,
            informative_censoring: phi_eta,
        }
    }
}

fn default_model() -> String {
    "edpmm".to_string()
}

fn parse_model(name: &str) -> Result<ModelKind> {
    match name {
        "edpmm" => Ok(ModelKind::Edpmm),
        "dpmm" => Ok(ModelKind::Dpmm),
        other => Err(Error::Config(format!("unknown model `{other}`; expected edpmm or dpmm"))),
    }
}

// ---------------------------------------------------------------------------
// simulate

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    /// Standard scenario number 1–4, or set `c_star` directly.
    pub scenario: usize,
    pub c_star: Option<f64>,
    pub n: usize,
    pub replicates: usize,
    pub model: String,
    pub nu_grid: Vec<f64>,
    pub rho_grid: Vec<f64>,
    pub cri_level: f64,
    pub oracle_n_mc: usize,
    pub cohort_size: usize,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub mcmc: McmcKeys,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            scenario: 1,
            c_star: None,
            n: 500,
            replicates: 100,
            model: default_model(),
            nu_grid: vec![0.0, 1.0, 2.0, 3.0],
            rho_grid: Vec::new(),
            cri_level: 0.95,
            oracle_n_mc: 1_000_000,
            cohort_size: 1000,
            seed: None,
            workers: None,
            mcmc: McmcKeys::default(),
        }
    }
}

/// Run the replicate study and write `metrics.csv` plus a manifest.
pub fn cmd_simulate(config: &SimulateConfig, seed: u64, out_dir: &Path) -> Result<MetricsTable> {
    let model = parse_model(&config.model)?;
    let mut scenario = ScenarioConfig::scenario(config.scenario, config.n, config.replicates, seed)?;
    if let Some(c_star) = config.c_star {
        scenario.c_star = c_star;
    }
    if !config.rho_grid.is_empty() {
        scenario.rho_grid = config.rho_grid.clone();
    }
    if !config.nu_grid.is_empty() {
        scenario.nu_grid = config.nu_grid.clone();
    }
    scenario.model = model;
    scenario.cri_level = config.cri_level;
    scenario.oracle_n_mc = config.oracle_n_mc;

    let estimator = MixtureModelEstimator {
        model,
        mcmc: config.mcmc.build(seed, None),
        cohort_size: config.cohort_size,
    };
    let table = run_replicates(&scenario, &estimator)?;

    ensure_out_dir(out_dir)?;
    let mut csv = String::from("model,nu,rho,true,true_se,bias,rmse,cp,replicates\n");
    for cell in &table.cells {
        csv.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.2},{}\n",
            table.model, cell.nu, cell.rho, cell.truth, cell.truth_se, cell.bias, cell.rmse,
            cell.coverage_pct, cell.replicates
        ));
    }
    std::fs::write(out_dir.join("metrics.csv"), csv)?;

    #[derive(Serialize)]
    struct Manifest<'a> {
        command: &'a str,
        version: &'a str,
        seed: u64,
        failed_replicates: usize,
        config: &'a SimulateConfig,
    }
    write_manifest(
        out_dir,
        &Manifest {
            command: "simulate",
            version: env!("CARGO_PKG_VERSION"),
            seed,
            failed_replicates: table.failed_replicates,
            config,
        },
    )?;
    Ok(table)
}

// ---------------------------------------------------------------------------
// fit

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub data: Option<PathBuf>,
    pub missing_marker: String,
    pub model: String,
    pub schema: SchemaConfig,
    pub mcmc: McmcKeys,
    /// Informative-censoring perturbation: location shift φ.
    pub phi: Option<f64>,
    /// Informative-censoring perturbation: variance scale η.
    pub eta: Option<f64>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            data: None,
            missing_marker: "NA".to_string(),
            model: default_model(),
            schema: SchemaConfig::default(),
            mcmc: McmcKeys::default(),
            phi: None,
            eta: None,
            seed: None,
            workers: None,
        }
    }
}

/// Fit the model and persist retained draws (`draws.jsonl`) plus a manifest
/// recording the schema hash and the imputed-entry count.
pub fn cmd_fit(config: &FitConfig, data_path: &Path, seed: u64, out_dir: &Path) -> Result<usize> {
    let model = parse_model(&config.model)?;
    let schema = config.schema.build()?;
    let dataset = load_dataset(data_path, &schema, &config.missing_marker)?;
    let phi_eta = match (config.phi, config.eta) {
        (None, None) => None,
        (phi, eta) => Some((phi.unwrap_or(0.0), eta.unwrap_or(1.0))),
    };
    let mcmc = config.mcmc.build(seed, phi_eta);
    mcmc.validate()?;
    let base = BaseMeasure::from_aft(&dataset)?;
    let draws = match model {
        ModelKind::Edpmm => crate::edpmm::run_chain(&dataset, &base, &mcmc)?,
        ModelKind::Dpmm => crate::dpmm::run_chain_dpmm(&dataset, &base, &mcmc)?,
    };
    ensure_out_dir(out_dir)?;
    let t_max = dataset
        .records()
        .iter()
        .map(|r| r.t)
        .fold(f64::NEG_INFINITY, f64::max);
    write_draws(&out_dir.join("draws.jsonl"), model, &schema, t_max, &mcmc, &draws)?;

    #[derive(Serialize)]
    struct Manifest<'a> {
        command: &'a str,
        version: &'a str,
        seed: u64,
        data: String,
        n: usize,
        censored: usize,
        missing_covariate_entries: usize,
        schema_hash: String,
        draw_count: usize,
        config: &'a FitConfig,
    }
    write_manifest(
        out_dir,
        &Manifest {
            command: "fit",
            version: env!("CARGO_PKG_VERSION"),
            seed,
            data: data_path.display().to_string(),
            n: dataset.n(),
            censored: dataset.records().iter().filter(|r| r.d == 0).count(),
            missing_covariate_entries: dataset.missing_count(),
            schema_hash: schema_hash(&schema),
            draw_count: draws.len(),
            config,
        },
    )?;
    Ok(draws.len())
}

// ---------------------------------------------------------------------------
// estimate / sensitivity

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubgroupKey {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateConfig {
    pub draws: Option<PathBuf>,
    /// Optional dataset to cross-check against the draw file's schema hash.
    pub data: Option<PathBuf>,
    pub missing_marker: String,
    pub nu_grid: Vec<f64>,
    pub rho_grid: Vec<f64>,
    /// Log-scale sensitivity shifts (ψ₀, ψ₁) applied to arms 0 and 1.
    pub psi: Option<[f64; 2]>,
    pub subgroup: Vec<SubgroupKey>,
    pub cohort_size: usize,
    /// Data analyses default to conservative 99% intervals.
    pub cri_level: f64,
    /// Survival-curve grid; empty means an automatic grid up to the fitted
    /// cohort's largest follow-up time.
    pub survival_times: Vec<f64>,
    pub survival_points: usize,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig {
            draws: None,
            data: None,
            missing_marker: "NA".to_string(),
            nu_grid: vec![0.0],
            rho_grid: vec![0.1, 0.2, 0.3],
            psi: None,
            subgroup: Vec::new(),
            cohort_size: 1000,
            cri_level: 0.99,
            survival_times: Vec::new(),
            survival_points: 50,
            seed: None,
            workers: None,
        }
    }
}

fn resolve_subgroup(
    schema: &CovariateSchema,
    subgroup: &[SubgroupKey],
) -> Result<Vec<(usize, f64)>> {
    subgroup
        .iter()
        .map(|key| {
            let q = schema
                .names()
                .iter()
                .position(|n| *n == key.name)
                .ok_or_else(|| {
                    Error::Config(format!("subgroup covariate `{}` not in schema", key.name))
                })?;
            Ok((q, key.value))
        })
        .collect()
}

fn check_data_hash(config_data: &Option<PathBuf>, marker: &str, draw_file: &crate::drawio::DrawFile) -> Result<()> {
    if let Some(data_path) = config_data {
        let dataset = load_dataset(data_path, &draw_file.schema, marker)?;
        let hash = schema_hash(dataset.schema());
        if hash != draw_file.schema_hash {
            return Err(Error::SchemaMismatch(format!(
                "dataset schema hash {hash} does not match draw file {}",
                draw_file.schema_hash
            )));
        }
    }
    Ok(())
}

struct EstimateRow {
    nu: f64,
    rho: f64,
    psi: (f64, f64),
    result: OSQCResult,
}

fn osqc_rows(
    draw_file: &crate::drawio::DrawFile,
    config: &EstimateConfig,
    psi_cells: &[(f64, f64)],
    factory: &SeedFactory,
) -> Result<Vec<EstimateRow>> {
    let subgroup = resolve_subgroup(&draw_file.schema, &config.subgroup)?;
    let mut rows = Vec::new();
    for &nu in &config.nu_grid {
        for &rho in &config.rho_grid {
            for &psi in psi_cells {
                let request = EstimandRequest {
                    nu,
                    rho,
                    subgroup: subgroup.clone(),
                    psi,
                    cohort_size: config.cohort_size,
                    cri_level: config.cri_level,
                };
                let result = osqc(&draw_file.draws, &request, factory)?;
                rows.push(EstimateRow { nu, rho, psi, result });
            }
        }
    }
    Ok(rows)
}

fn subgroup_label(subgroup: &[SubgroupKey]) -> String {
    if subgroup.is_empty() {
        "marginal".to_string()
    } else {
        subgroup
            .iter()
            .map(|k| format!("{}={}", k.name, k.value))
            .collect::<Vec<_>>()
            .join("&")
    }
}

fn write_osqc_csv(path: &Path, rows: &[EstimateRow], subgroup: &[SubgroupKey], draws: usize) -> Result<()> {
    let mut csv = String::from(
        "nu,rho,psi0,psi1,subgroup,delta_mean,delta_lower,delta_upper,y1_mean,y1_lower,y1_upper,y0_mean,y0_lower,y0_upper,draws\n",
    );
    let label = subgroup_label(subgroup);
    for row in rows {
        let r = &row.result;
        csv.push_str(&format!(
            "{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}\n",
            row.nu,
            row.rho,
            row.psi.0,
            row.psi.1,
            label,
            r.summary_delta.mean,
            r.summary_delta.lower,
            r.summary_delta.upper,
            r.summary_y1.mean,
            r.summary_y1.lower,
            r.summary_y1.upper,
            r.summary_y0.mean,
            r.summary_y0.lower,
            r.summary_y0.upper,
            draws
        ));
    }
    std::fs::write(path, csv)?;
    Ok(())
}

#[derive(Serialize)]
struct EstimateSummaryRow {
    nu: f64,
    rho: f64,
    psi0: f64,
    psi1: f64,
    subgroup: String,
    mean: f64,
    lower: f64,
    upper: f64,
    draws: usize,
}

fn summary_rows(rows: &[EstimateRow], subgroup: &[SubgroupKey], draws: usize) -> Vec<EstimateSummaryRow> {
    let label = subgroup_label(subgroup);
    rows.iter()
        .map(|row| EstimateSummaryRow {
            nu: row.nu,
            rho: row.rho,
            psi0: row.psi.0,
            psi1: row.psi.1,
            subgroup: label.clone(),
            mean: row.result.summary_delta.mean,
            lower: row.result.summary_delta.lower,
            upper: row.result.summary_delta.upper,
            draws,
        })
        .collect()
}

/// Estimate survivor quantile contrasts from persisted draws; writes
/// `osqc.csv`, `survival.csv`, a structured summary, and a manifest.
pub fn cmd_estimate(config: &EstimateConfig, draws_path: &Path, seed: u64, out_dir: &Path) -> Result<()> {
    let draw_file = read_draws(draws_path)?;
    check_data_hash(&config.data, &config.missing_marker, &draw_file)?;
    let factory = SeedFactory::new(seed);
    let psi = config.psi.map(|p| (p[0], p[1])).unwrap_or((0.0, 0.0));
    let rows = osqc_rows(&draw_file, config, &[psi], &factory)?;

    ensure_out_dir(out_dir)?;
    write_osqc_csv(&out_dir.join("osqc.csv"), &rows, &config.subgroup, draw_file.draws.len())?;

    // Per-arm marginal survival curves with credible bands.
    let times: Vec<f64> = if config.survival_times.is_empty() {
        let k = config.survival_points.max(2);
        (1..=k).map(|i| draw_file.t_max * i as f64 / k as f64).collect()
    } else {
        config.survival_times.clone()
    };
    let subgroup = resolve_subgroup(&draw_file.schema, &config.subgroup)?;
    let points = survival_curves(
        &draw_file.draws,
        &times,
        &subgroup,
        config.cohort_size,
        config.cri_level,
        &factory,
    )?;
    let mut csv = String::from("z,time,mean,lower,upper\n");
    for p in &points {
        csv.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6}\n",
            p.z, p.time, p.mean, p.lower, p.upper
        ));
    }
    std::fs::write(out_dir.join("survival.csv"), csv)?;

    #[derive(Serialize)]
    struct Manifest<'a> {
        command: &'a str,
        version: &'a str,
        seed: u64,
        draws_file: String,
        model: String,
        schema_hash: &'a str,
        draw_count: usize,
        config: &'a EstimateConfig,
        results: Vec<EstimateSummaryRow>,
    }
    write_manifest(
        out_dir,
        &Manifest {
            command: "estimate",
            version: env!("CARGO_PKG_VERSION"),
            seed,
            draws_file: draws_path.display().to_string(),
            model: draw_file.model.to_string(),
            schema_hash: &draw_file.schema_hash,
            draw_count: draw_file.draws.len(),
            config,
            results: summary_rows(&rows, &config.subgroup, draw_file.draws.len()),
        },
    )?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensitivityConfig {
    #[serde(flatten)]
    pub estimate: EstimateConfig,
    /// ψ values per arm; the grid is the Cartesian square (default 3 × 3).
    pub psi_values: Vec<f64>,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        SensitivityConfig {
            estimate: EstimateConfig::default(),
            psi_values: vec![-0.25, 0.0, 0.25],
        }
    }
}

/// Unmeasured-confounding sensitivity: the full ψ grid (all pairs of
/// `psi_values`) evaluated by post-processing alone; writes `sensitivity.csv`
/// and a manifest.
pub fn cmd_sensitivity(config: &SensitivityConfig, draws_path: &Path, seed: u64, out_dir: &Path) -> Result<()> {
    if config.psi_values.is_empty() {
        return Err(Error::Config("psi_values must be nonempty".into()));
    }
    let draw_file = read_draws(draws_path)?;
    check_data_hash(&config.estimate.data, &config.estimate.missing_marker, &draw_file)?;
    let factory = SeedFactory::new(seed);
    let mut psi_cells = Vec::new();
    for &p0 in &config.psi_values {
        for &p1 in &config.psi_values {
            psi_cells.push((p0, p1));
        }
    }
    let rows = osqc_rows(&draw_file, &config.estimate, &psi_cells, &factory)?;
    ensure_out_dir(out_dir)?;
    write_osqc_csv(
        &out_dir.join("sensitivity.csv"),
        &rows,
        &config.estimate.subgroup,
        draw_file.draws.len(),
    )?;

    #[derive(Serialize)]
    struct Manifest<'a> {
        command: &'a str,
        version: &'a str,
        seed: u64,
        draws_file: String,
        model: String,
        schema_hash: &'a str,
        psi_cells: usize,
        config: &'a SensitivityConfig,
        results: Vec<EstimateSummaryRow>,
    }
    write_manifest(
        out_dir,
        &Manifest {
            command: "sensitivity",
            version: env!("CARGO_PKG_VERSION"),
            seed,
            draws_file: draws_path.display().to_string(),
            model: draw_file.model.to_string(),
            schema_hash: &draw_file.schema_hash,
            psi_cells: psi_cells.len(),
            config,
            results: summary_rows(&rows, &config.estimate.subgroup, draw_file.draws.len()),
        },
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// km

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KmConfig {
    pub data: Option<PathBuf>,
    pub missing_marker: String,
    pub schema: SchemaConfig,
    /// Also emit per-arm curves (`km_z0.csv`, `km_z1.csv`).
    pub by_exposure: bool,
    pub seed: Option<u64>,
}

impl Default for KmConfig {
    fn default() -> Self {
        KmConfig {
            data: None,
            missing_marker: "NA".to_string(),
            schema: SchemaConfig::default(),
            by_exposure: true,
            seed: None,
        }
    }
}

/// Kaplan–Meier step function(s) for a dataset: knots, survival values, and
/// at-risk counts, overall and optionally by exposure arm.
pub fn cmd_km(config:&KmConfig, data_path: &Path, seed: u64, out_dir: &Path) -> Result<()> {
    let schema = config.schema.build()?;
    let dataset = load_dataset(data_path, &schema, &config.missing_marker)?;
    ensure_out_dir(out_dir)?;
    let all: Vec<(f64, u8)> = dataset.records().iter().map(|r| (r.t, r.d)).collect();
    save_step_survival(&kaplan_meier(&all)?, &out_dir.join("km.csv"))?;
    if config.by_exposure {
        for z in [0u8, 1u8] {
            let arm: Vec<(f64, u8)> = dataset
                .records()
                .iter()
                .filter(|r| r.z == z)
                .map(|r| (r.t, r.d))
                .collect();
            if !arm.is_empty() {
                save_step_survival(&kaplan_meier(&arm)?, &out_dir.join(format!("km_z{z}.csv")))?;
            }
        }
    }
    #[derive(Serialize)]
    struct Manifest<'a> {
        command: &'a str,
        version: &'a str,
        seed: u64,
        data: String,
        n: usize,
        schema_hash: String,
        config: &'a KmConfig,
    }
    write_manifest(
        out_dir,
        &Manifest {
            command: "km",
            version: env!("CARGO_PKG_VERSION"),
            seed,
            data: data_path.display().to_string(),
            n: dataset.n(),
            schema_hash: schema_hash(&schema),
            config,
        },
    )?;
    Ok(())
}

/// Read a config file if given, otherwise defaults.
pub fn load_simulate_config(path: Option<&Path>) -> Result<SimulateConfig> {
    read_config(path)
}

pub fn load_fit_config(path: Option<&Path>) -> Result<FitConfig> {
    read_config(path)
}

pub fn load_estimate_config(path: Option<&Path>) -> Result<EstimateConfig> {
    read_config(path)
}

pub fn load_sensitivity_config(path: Option<&Path>) -> Result<SensitivityConfig> {
    read_config(path)
}

pub fn load_km_config(path: Option<&Path>) -> Result<KmConfig> {
    read_config(path)
}
