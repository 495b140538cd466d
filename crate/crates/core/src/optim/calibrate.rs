use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::adam::{adam_step_scaled, scheduled_lr, AdamMoments};
use super::gradient::{batch_loss, loss_gradient, CalibrationPair};
use super::state::{
    initial_state, CalibrationConfig, CalibrationResult, CalibrationState, NUM_PARAMS,
};
use crate::error::{Error, Result};
use crate::geometry::PinholeIntrinsics;
use crate::loss::{LossOptions, PreparedPair};

/// Prepared pairs are cached across iterations while they fit in this many
/// bytes; beyond that each batch is prepared on demand.
const CACHE_BUDGET_BYTES: usize = 1 << 30;

/// How often a step with non-finite results is retried at half the rate.
const MAX_STEP_RETRIES: usize = 60;

/// Runs the optimization from the lens-derived initial state.
pub fn calibrate(
    dataset: &[CalibrationPair],
    k_rgb: &PinholeIntrinsics,
    cfg: &CalibrationConfig,
) -> Result<CalibrationResult> {
    let first = dataset.first().ok_or(Error::EmptyDataset)?;
    let (w, h) = first.thermal.dims();
    calibrate_from(dataset, k_rgb, cfg, initial_state(cfg, w, h)?)
}

/// Runs the optimization from an explicit starting state.
pub fn calibrate_from(
    dataset: &[CalibrationPair],
    k_rgb: &PinholeIntrinsics,
    cfg: &CalibrationConfig,
    init: CalibrationState,
) -> Result<CalibrationResult> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    cfg.validate()?;
    let options = cfg.loss_options()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pool = sample_pool(&mut rng, dataset.len(), cfg.pair_pool);
    let cache = PairCache::new(dataset, &pool, k_rgb, &options)?;

    let initial_loss = cache.mean_loss(&init)?;
    let scale = step_scale(&init, cfg.normalize_intrinsics);
    let mut params = init.to_params();
    let mut moments = AdamMoments::default();
    let mut history = Vec::with_capacity(cfg.iterations);
    for step in 0..cfg.iterations {
        let picks: Vec<usize> = (0..cfg.batch_size)
            .map(|_| pool[rng.random_range(0..pool.len())])
            .collect();
        let state = CalibrationState::from_params(&params);
        let (loss, grad) = cache.with_batch(&picks, |batch| {
            loss_gradient(&state, batch, cfg.gradient_mode)
        })?;
        history.push(loss);

        let mut lr = scheduled_lr(cfg.lr0, cfg.halve_every, step);
        for _ in 0..MAX_STEP_RETRIES {
            let (next, next_moments) = adam_step_scaled(&params, &grad, &moments, step, lr, &scale);
            if acceptable(&next) {
                params = next;
                moments = next_moments;
                break;
            }
            lr *= 0.5;
        }
    }
    let state = CalibrationState::from_params(&params);
    Ok(CalibrationResult {
        state,
        final_loss: cache.mean_loss(&state)?,
        initial_loss,
        loss_history: history,
        iterations_run: cfg.iterations,
    })
}

/// Pool of dataset indices: distinct when the dataset is large enough,
/// drawn with replacement otherwise.
pub fn sample_pool(rng: &mut ChaCha8Rng, dataset_len: usize, pool_size: usize) -> Vec<usize> {
    if dataset_len >= pool_size {
        rand::seq::index::sample(rng, dataset_len, pool_size).into_vec()
    } else {
        (0..pool_size)
            .map(|_| rng.random_range(0..dataset_len))
            .collect()
    }
}

fn step_scale(init: &CalibrationState, normalize_intrinsics: bool) -> [f64; NUM_PARAMS] {
    let mut scale = [1.0; NUM_PARAMS];
    if normalize_intrinsics {
        let f = init
            .intrinsics
            .fx
            .abs()
            .max(init.intrinsics.fy.abs())
            .max(1.0);
        scale[6..10].fill(f);
    }
    scale
}

fn acceptable(params: &[f64; NUM_PARAMS]) -> bool {
    params.iter().all(|p| p.is_finite()) && params[6] > 0.0 && params[7] > 0.0
}

struct PairCache<'a> {
    dataset: &'a [CalibrationPair],
    k_rgb: PinholeIntrinsics,
    options: LossOptions,
    /// Distinct dataset indices referenced by the pool, ascending.
    distinct: Vec<usize>,
    /// Indexed by dataset position; empty when over budget.
    prepared: Vec<Option<PreparedPair>>,
}

impl<'a> PairCache<'a> {
    fn new(
        dataset: &'a [CalibrationPair],
        pool: &[usize],
        k_rgb: &PinholeIntrinsics,
        options: &LossOptions,
    ) -> Result<Self> {
        let mut distinct = pool.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        let bytes: usize = distinct.iter().map(|&i| estimated_bytes(&dataset[i])).sum();
        let mut prepared: Vec<Option<PreparedPair>> = Vec::new();
        if bytes <= CACHE_BUDGET_BYTES {
            prepared.resize_with(dataset.len(), || None);
            let built: Vec<PreparedPair> = distinct
                .par_iter()
                .map(|&i| dataset[i].prepare(k_rgb, options))
                .collect::<Result<_>>()?;
            for (&i, p) in distinct.iter().zip(built) {
                prepared[i] = Some(p);
            }
        }
        Ok(Self {
            dataset,
            k_rgb: *k_rgb,
            options: options.clone(),
            distinct,
            prepared,
        })
    }

    fn with_batch<T>(
        &self,
        picks: &[usize],
        f: impl FnOnce(&[&PreparedPair]) -> Result<T>,
    ) -> Result<T> {
        if self.prepared.is_empty() {
            let owned: Vec<PreparedPair> = picks
                .par_iter()
                .map(|&i| self.dataset[i].prepare(&self.k_rgb, &self.options))
                .collect::<Result<_>>()?;
            let refs: Vec<&PreparedPair> = owned.iter().collect();
            f(&refs)
        } else {
            let refs: Vec<&PreparedPair> = picks
                .iter()
                .map(|&i| self.prepared[i].as_ref().expect("pool pairs are cached"))
                .collect();
            f(&refs)
        }
    }

    /// Mean loss over the distinct pairs of the pool.
    fn mean_loss(&self, state: &CalibrationState) -> Result<f64> {
        if self.prepared.is_empty() {
            // Bounded memory: a few pairs at a time.
            let mut total = 0.0;
            for chunk in self.distinct.chunks(16) {
                total += self.with_batch(chunk, |b| batch_loss(state, b))? * chunk.len() as f64;
            }
            Ok(total / self.distinct.len() as f64)
        } else {
            self.with_batch(&self.distinct, |b| batch_loss(state, b))
        }
    }
}

fn estimated_bytes(pair: &CalibrationPair) -> usize {
    let rgb = pair.rgb.len();
    rgb * (8 + 32 + 16) + pair.thermal.len() * 8
}
