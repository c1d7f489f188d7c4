//! Packaged experiments built on the moments and bounds modules.

pub mod independence;
pub mod lowerbound;
pub mod minhash;
pub mod sweep;
pub mod throughput;

pub use independence::{
    four_tuple_exhaustive, four_tuple_frequency, independence_test, three_wise_exhaustive, witness_keys,
    FourTupleReport, IndependenceConfig, IndependenceReport, ThreeWiseReport,
};
pub use lowerbound::{
    lower_bound_exact_pnorms, lower_bound_gamma, lower_bound_study, LowerBoundInstance, LowerBoundRow,
};
pub use minhash::{fully_random_oracle, minhash_kpartition, Coloring, KPartitionConfig, KPartitionReport, TrialResult};
pub use sweep::{
    run_bound_sweep, run_query_sweep, write_query_sweep_csv, write_sweep_csv, KeySetSpec, POrder, QuerySweepGrid,
    QuerySweepRow, SweepGrid, SweepRow, ValueShape,
};
pub use throughput::{throughput_bench, throughput_compare, ThroughputComparison, ThroughputReport};

use crate::bounds::ConstantPolicy;
use crate::error::Result;
use crate::tabulation::SchemeParams;

/// Builds the adversarial instance for `params` at moment order `p`.
pub fn build_lower_bound_instance(params: SchemeParams, p: f64, policy: &ConstantPolicy) -> Result<LowerBoundInstance> {
    LowerBoundInstance::build(params, p, policy)
}
