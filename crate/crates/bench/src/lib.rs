//! Shared fixtures for the benchmarks in `benches/`.

use gradcal::optim::CalibrationConfig;
use gradcal::synth::SynthSpec;
use gradcal::{CalibrationState, PreparedPair};

/// A batch of prepared desk-scale pairs and an in-basin state to evaluate.
pub struct Fixture {
    pub spec: SynthSpec,
    pub pairs: Vec<PreparedPair>,
    pub state: CalibrationState,
}

impl Fixture {
    pub fn new(pairs: usize) -> Self {
        let spec = SynthSpec {
            pairs,
            ..Default::default()
        };
        let cfg = CalibrationConfig {
            f_manufactured: spec.f_manufactured,
            pixel_pitch: spec.pixel_pitch,
            ..Default::default()
        };
        let options = cfg.loss_options().expect("default options");
        let pairs = spec
            .render()
            .expect("render")
            .iter()
            .map(|p| {
                p.to_calibration_pair()
                    .prepare(&spec.k_rgb, &options)
                    .expect("prepare")
            })
            .collect();
        let state = spec.initial_state().expect("initial state");
        Self { spec, pairs, state }
    }

    pub fn batch(&self) -> Vec<&PreparedPair> {
        self.pairs.iter().collect()
    }
}
