//! Versioned JSON checkpoints for the critic and the anticipation model.
//!
//! Values are stored as `f64` whatever the scalar type of the run.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::anticipation::{AnticipationModel, LossConfig};
use crate::critic::{CriticConfig, QTable};
use crate::error::{Error, Result};
use crate::gmdp::NUM_ACTIONS;
use crate::scalar::Scalar;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticCheckpoint {
    pub version: u32,
    pub num_states: usize,
    pub num_actions: usize,
    pub config: CriticConfig,
    /// Laid out as `[state][goal][action]`.
    pub q: Vec<f64>,
    pub visits: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub version: u32,
    pub num_states: usize,
    pub loss: LossConfig<f64>,
    /// Laid out as `[state][goal][candidate]`.
    pub logits: Vec<f64>,
}

impl CriticCheckpoint {
    pub fn from_table<F: Scalar>(q: &QTable<F>) -> Self {
        Self {
            version: FORMAT_VERSION,
            num_states: crate::value::ValueView::num_states(q),
            num_actions: NUM_ACTIONS,
            config: *q.config(),
            q: q.raw().iter().map(|v| v.as_f64()).collect(),
            visits: q.visits().to_vec(),
        }
    }

    /// Rebuilds the table, checking it against a map of `num_states` states.
    pub fn into_table<F: Scalar>(self, num_states: usize) -> Result<QTable<F>> {
        check_version(self.version)?;
        if self.num_states != num_states {
            return Err(Error::DimensionMismatch { what: "critic checkpoint", expected: num_states, found: self.num_states });
        }
        let len = num_states * num_states * NUM_ACTIONS;
        if self.num_actions != NUM_ACTIONS || self.q.len() != len || self.visits.len() != len {
            return Err(Error::Checkpoint(format!("critic arrays have the wrong length for {num_states} states")));
        }
        Ok(QTable::from_raw(num_states, self.q.into_iter().map(F::lit).collect(), self.visits, self.config))
    }
}

impl ModelCheckpoint {
    pub fn from_model<F: Scalar>(model: &AnticipationModel<F>) -> Self {
        let cfg = model.loss_config();
        Self {
            version: FORMAT_VERSION,
            num_states: model.num_states(),
            loss: LossConfig { lambda: cfg.lambda.as_f64(), c_prog: cfg.c_prog.as_f64(), c_non_trivial: cfg.c_non_trivial.as_f64() },
            logits: model.logits().iter().map(|v| v.as_f64()).collect(),
        }
    }

    pub fn into_model<F: Scalar>(self, num_states: usize) -> Result<AnticipationModel<F>> {
        check_version(self.version)?;
        if self.num_states != num_states {
            return Err(Error::DimensionMismatch { what: "model checkpoint", expected: num_states, found: self.num_states });
        }
        if self.logits.len() != num_states.pow(3) {
            return Err(Error::Checkpoint(format!("model logits have the wrong length for {num_states} states")));
        }
        let cfg = LossConfig { lambda: F::lit(self.loss.lambda), c_prog: F::lit(self.loss.c_prog), c_non_trivial: F::lit(self.loss.c_non_trivial) };
        Ok(AnticipationModel::from_logits(num_states, self.logits.into_iter().map(F::lit).collect(), cfg))
    }
}

fn check_version(version: u32) -> Result<()> {
    if version == FORMAT_VERSION {
        Ok(())
    } else {
        Err(Error::Checkpoint(format!("unsupported checkpoint version {version}, expected {FORMAT_VERSION}")))
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string(value).map_err(|e| Error::Checkpoint(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}
