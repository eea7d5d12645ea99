//! Transformer encoder with MLM and sentence-pair heads, hand-written
//! backpropagation, Adam, and a binary checkpoint container.
//!
//! Everything numeric is generic over [`Scalar`] so the same code runs in
//! `f32` for training and in `f64` for finite-difference gradient checks.

mod adam;
mod batch;
mod checkpoint;
mod config;
mod params;
mod transformer;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use batch::{MaskedBatch, IGNORE_LABEL};
pub use checkpoint::{Checkpoint, TensorEntry, CHECKPOINT_MAGIC};
pub use config::ModelConfig;
pub use params::{init_params, LayerParams, ModelParams, TensorMut, TensorRef, INIT_STD};
pub use transformer::{
    forward, loss_and_grads, loss_and_grads_with_dropout, score_batch, BatchScores,
    ForwardOutput, MaskedPrediction, PairPrediction,
};

pub trait Scalar:
    num_traits::Float
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + Debug
    + Display
    + 'static
{
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn of(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    fn of(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Pretraining objective: masked LM alone or with a sentence-pair task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    Mlm,
    MlmNsp,
    MlmSop,
}

impl Objective {
    pub fn has_pair_task(self) -> bool {
        !matches!(self, Objective::Mlm)
    }

    pub fn name(self) -> &'static str {
        match self {
            Objective::Mlm => "mlm",
            Objective::MlmNsp => "mlm-nsp",
            Objective::MlmSop => "mlm-sop",
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('+', "-").as_str() {
            "mlm" => Ok(Objective::Mlm),
            "mlm-nsp" | "nsp" => Ok(Objective::MlmNsp),
            "mlm-sop" | "sop" => Ok(Objective::MlmSop),
            other => Err(format!("unknown objective {other:?} (mlm, mlm-nsp, mlm-sop)")),
        }
    }
}
