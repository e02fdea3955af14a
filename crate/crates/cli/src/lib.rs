//! Experiment runner: phantom synthesis, training, evaluation, the
//! stochasticity ablation and the theory checks, all driven by one TOML
//! spec and a master seed.
//!
//! Every random consumer draws from `seed::derive(master, label, counter)`
//! with its own label (`phantom`, `coils`, `eval-phantom`, `eval-coils`,
//! `train`, `eval`, `verify`), so outputs are a pure function of the spec.

// `!(x > 0.0)` style guards are kept on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::Path;

pub mod commands;
pub mod data;
pub mod spec;

pub use commands::{
    cmd_ablate, cmd_eval, cmd_simulate, cmd_train, cmd_verify, evaluate, seed_study, AblationRow, EvalSummaryRow,
    SeedStudyRow, SubjectScore,
};
pub use spec::{AblationSpec, CoilSpec, EvalPoint, ExperimentSpec, PhantomSpec, TrainSpec, VerifySpec};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] ssrecon::Error),
    #[error("spec: {0}")]
    Spec(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/experiments.md")]
mod book {}

pub(crate) fn write_csv<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
