use resqrl::model::{MCMCConfig, ModelKind};
use resqrl::rng::SeedFactory;
use resqrl::sim::{run_replicates, MixtureModelEstimator, ScenarioConfig};

#[test]
#[ignore]
fn probe_default_bias() {
    let mut scenario = ScenarioConfig::scenario(1, 500, 24, 20260811).unwrap();
    scenario.nu_grid = vec![0.0, 2.0];
    scenario.rho_grid = vec![0.3, 0.6];
    scenario.oracle_n_mc = 2_000_000;
    let estimator = MixtureModelEstimator {
        model: ModelKind::Edpmm,
        mcmc: MCMCConfig { seed: 0, ..MCMCConfig::default() },
        cohort_size: 1000,
    };
    let table = run_replicates(&scenario, &estimator).unwrap();
    for c in &table.cells {
        println!("nu={} rho={}: true={:.3} bias={:+.3} rmse={:.3} cp={:.0}%", c.nu, c.rho, c.truth, c.bias, c.rmse, c.coverage_pct);
    }
    let _ = SeedFactory::new(0);
}
