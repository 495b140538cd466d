//! File formats: Netpbm and PFM images, PNG input, `key = value`
//! documents for calibrations, configs and manifests.

mod calibration_file;
mod config;
mod images;
pub mod kv;
mod manifest;
pub mod netpbm;

pub use calibration_file::CalibrationFile;
pub use config::{
    config_from_document, config_to_text, read_config, read_synth_spec, synth_spec_from_document,
};
pub use images::{read_depth, read_gray, read_rgb};
pub use kv::KeyValueDocument;
pub use manifest::{load_images, DatasetManifest, ManifestRecord};
pub use netpbm::{read_pfm, read_pgm, read_ppm, write_pfm, write_pgm, write_ppm, Pnm};
