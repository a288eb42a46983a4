//! Shared fixtures for the benchmarks.

use mmce_core::model::ModelSpec;
use mmce_core::{emit_dataset, Dataset, GenConfig, HeadKind, MmceModel, SchemeKind};

/// Generated data with `n` riders from the default generator.
pub fn dataset(n: usize, seed: u64) -> Dataset {
    let cfg = GenConfig {
        n_riders: n,
        seed,
        ..GenConfig::default()
    };
    emit_dataset(&cfg).expect("valid generator config").dataset
}

/// Freshly initialised model with default trunk widths.
pub fn model(scheme: SchemeKind, head: HeadKind, data: &Dataset) -> MmceModel {
    let spec = ModelSpec::new(scheme, head, data.feature_dim(), 5.0, 20.0).expect("valid spec");
    MmceModel::new(spec, 1).expect("valid model")
}
