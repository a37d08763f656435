//! Task-agnostic control predictors.

use std::sync::Arc;

use super::{PredictError, Predictor, PredictorKind};
use crate::dgp::{sample_dirichlet, sample_transition_matrix};
use crate::seed::{derive_seed, rng_from_seed, tag};

/// State count for which the even-states control is defined.
pub const EVEN_STATES_K: usize = 10;

/// `0.2` on each even state, `0` on odd states.
pub fn even_states_vector(k: usize) -> Result<Vec<f64>, PredictError> {
    if k != EVEN_STATES_K {
        return Err(PredictError::EvenStatesRequiresK10(k));
    }
    Ok((0..k).map(|i| if i % 2 == 0 { 0.2 } else { 0.0 }).collect())
}

/// The four controls, in [`super::PredictorKind::CONTROLS`] order.
///
/// The frozen matrix and frozen stationary vector are Dirichlet(1) draws
/// from seeds derived from `seed`.
pub fn control_set(k: usize, seed: u64) -> Result<Vec<Predictor>, PredictError> {
    PredictorKind::CONTROLS
        .iter()
        .map(|&kind| control(kind, k, seed))
        .collect()
}

/// A single control predictor, built exactly as in [`control_set`].
pub fn control(kind: PredictorKind, k: usize, seed: u64) -> Result<Predictor, PredictError> {
    Ok(match kind {
        PredictorKind::ControlFrozenMatrix => {
            let mut rng = rng_from_seed(derive_seed(seed, &[tag("frozen-matrix")]));
            Predictor::ControlFrozenMatrix(Arc::new(sample_transition_matrix(k, 1.0, &mut rng)?))
        }
        PredictorKind::ControlFrozenStationary => {
            let mut rng = rng_from_seed(derive_seed(seed, &[tag("frozen-stationary")]));
            Predictor::ControlFrozenStationary(Arc::new(sample_dirichlet(&mut rng, 1.0, k)))
        }
        PredictorKind::ControlEvenStates => {
            even_states_vector(k)?;
            Predictor::ControlEvenStates
        }
        PredictorKind::ControlDeltaZero => Predictor::ControlDeltaZero { k },
        other => return Err(PredictError::UnknownPredictor(other.to_string())),
    })
}
