use std::fmt::Write as _;
use std::path::Path;

use super::kv::{format_f64, KeyValueDocument};
use super::netpbm::write_bytes;
use crate::error::Result;
use crate::optim::{CalibrationState, NUM_PARAMS, PARAM_NAMES};

/// Calibration result as a flat `key = value` document.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationFile {
    pub state: CalibrationState,
    pub final_loss: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl CalibrationFile {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, value) in PARAM_NAMES.iter().zip(self.state.to_params()) {
            let _ = writeln!(out, "{name} = {}", format_f64(value));
        }
        let _ = writeln!(out, "final_loss = {}", format_f64(self.final_loss));
        let _ = writeln!(out, "iterations = {}", self.iterations);
        let _ = writeln!(out, "seed = {}", self.seed);
        out
    }

    pub fn from_document(doc: &KeyValueDocument) -> Result<Self> {
        let mut known: Vec<&str> = PARAM_NAMES.to_vec();
        known.extend(["final_loss", "iterations", "seed"]);
        doc.reject_unknown(&known)?;
        let mut params = [0.0; NUM_PARAMS];
        for (p, name) in params.iter_mut().zip(PARAM_NAMES) {
            *p = doc.require(name)?;
        }
        Ok(Self {
            state: CalibrationState::from_params(&params),
            final_loss: doc.require("final_loss")?,
            iterations: doc.require("iterations")?,
            seed: doc.require("seed")?,
        })
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        Self::from_document(&KeyValueDocument::parse(text, path)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_document(&KeyValueDocument::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_bytes(path, self.to_text().as_bytes())
    }
}
