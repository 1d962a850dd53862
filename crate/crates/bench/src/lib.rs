//! Criterion benchmarks for the estimators; see `benches/`.

use sae_core::hb::GibbsConfig;

/// A shortened chain so that one HB fit takes milliseconds.
pub fn bench_gibbs_config() -> GibbsConfig {
    GibbsConfig {
        iterations: 3000,
        burn_in: 500,
        chains: 2,
        ..GibbsConfig::default()
    }
}
