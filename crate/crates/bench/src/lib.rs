//! Shared fixtures for the criterion benchmarks.

use std::sync::Arc;

use censor_core::{HypIntensityForm, ModelSpec, MultiCensor, TimeGrid, VarianceConvention};

pub fn single_agent() -> ModelSpec {
    ModelSpec::symmetric(1, 0.3, 0.3, 1.0, 1.0, 2.0)
}

pub fn three_agents() -> ModelSpec {
    let mut spec = ModelSpec::symmetric(3, 0.5, 0.4, 1.0, 1.0, 2.0);
    spec.sigma_m = vec![0.4, 0.3, 0.6];
    spec.alpha = vec![1.0, 1.0, 1.2];
    spec
}

pub fn censor(spec: &ModelSpec, steps: usize) -> MultiCensor {
    let grid = Arc::new(TimeGrid::uniform(steps).expect("positive step count"));
    MultiCensor::new(
        spec,
        grid,
        VarianceConvention::Proof,
        HypIntensityForm::Thinned,
    )
    .expect("valid fixture spec")
}
