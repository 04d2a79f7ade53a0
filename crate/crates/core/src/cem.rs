//! Gaussian cross-entropy method with a diagonal proposal.
//!
//! Each iteration samples `N` candidates from `Normal(mean, deviation)`,
//! ranks them, and refits mean and deviation to the elite fraction. The
//! deviation is the population (ddof = 0) standard deviation of the elites,
//! so a single elite collapses it to zero. A run stops early once every
//! deviation component is below the floor `δ`.
//!
//! Batched runs execute in lockstep so that candidates from all elements can
//! be scored by one vectorized call. Element `i` of a batch draws from its own
//! stream (see [`element_rng`]), so results do not depend on batch
//! composition or order.

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CemConfig {
    /// `N`
    pub sample_count: usize,
    /// `ρ`, fraction of samples kept as elites.
    pub elite_density: f64,
    /// `T`; zero returns the initial mean untouched.
    pub iterations: usize,
    /// `s`, applied to every dimension.
    pub initial_deviation: f64,
    /// `δ`
    pub deviation_floor: f64,
    pub minimize: bool,
}

impl Default for CemConfig {
    /// CEM column of the MuJoCo setup: s = 0.005, N = 100, ρ = 5%, T = 10.
    fn default() -> Self {
        Self {
            sample_count: 100,
            elite_density: 0.05,
            iterations: 10,
            initial_deviation: 0.005,
            deviation_floor: 1e-4,
            minimize: true,
        }
    }
}

impl CemConfig {
    /// `max(1, ⌊N·ρ⌋)`
    pub fn elite_count(&self) -> usize {
        // Guard against ρ·N landing a hair under an integer (90 * 0.7).
        let raw = (self.sample_count as f64 * self.elite_density * (1.0 + 1e-12)).floor();
        (raw as usize).clamp(1, self.sample_count.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.sample_count == 0 {
            return bad("cem.N must be positive".into());
        }
        if !(self.elite_density > 0.0 && self.elite_density <= 1.0) {
            return bad(format!("cem.rho must lie in (0, 1], got {}", self.elite_density));
        }
        if !(self.deviation_floor >= 0.0 && self.initial_deviation > self.deviation_floor) {
            return bad(format!(
                "need cem.s > cem.delta >= 0, got s = {} delta = {}",
                self.initial_deviation, self.deviation_floor
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CemResult {
    pub best_mean: Vec<f64>,
    pub final_deviation: Vec<f64>,
    pub iterations_run: usize,
    /// Best objective value among the samples of each iteration.
    pub objective_trace: Vec<f64>,
}

/// Random stream for batch element `index` given the batch's base seed.
///
/// [`cem_optimize_batch`] draws one `u64` base seed from the caller's rng and
/// runs element `i` on `element_rng(base, i)`; running [`cem_optimize`] with
/// the same stream reproduces that element exactly.
pub fn element_rng(base_seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(index as u64);
    rng
}

pub fn cem_optimize<F, R>(
    mut objective: F,
    initial_mean: &[f64],
    config: &CemConfig,
    rng: &mut R,
) -> Result<CemResult>
where
    F: FnMut(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    let mut run = Run::new(initial_mean, config)?;
    for _ in 0..config.iterations {
        let samples = run.sample(config, rng);
        let values: Vec<f64> = samples
            .axis_iter(Axis(0))
            .map(|row| objective(row.as_slice().unwrap()))
            .collect();
        if run.refit(&samples, &values, config)? {
            break;
        }
    }
    Ok(run.finish())
}

/// Independent CEM runs, one per initial mean, scoring candidates one at a
/// time: `objective(element, candidate)`.
pub fn cem_optimize_batch<F, R>(
    mut objective: F,
    initial_means: &[Vec<f64>],
    config: &CemConfig,
    rng: &mut R,
) -> Result<Vec<CemResult>>
where
    F: FnMut(usize, &[f64]) -> f64,
    R: Rng + ?Sized,
{
    cem_optimize_batch_vectorized(
        |blocks| {
            blocks
                .iter()
                .map(|(element, samples)| {
                    samples
                        .axis_iter(Axis(0))
                        .map(|row| objective(*element, row.as_slice().unwrap()))
                        .collect()
                })
                .collect()
        },
        initial_means,
        config,
        rng,
    )
}

/// Lockstep batched CEM. Each iteration calls `evaluate` once with an
/// `(element, N×dim candidates)` block for every element still running and
/// expects one vector of `N` objective values per block, in the same order.
pub fn cem_optimize_batch_vectorized<F, R>(
    mut evaluate: F,
    initial_means: &[Vec<f64>],
    config: &CemConfig,
    rng: &mut R,
) -> Result<Vec<CemResult>>
where
    F: FnMut(&[(usize, ArrayView2<f64>)]) -> Vec<Vec<f64>>,
    R: Rng + ?Sized,
{
    if initial_means.is_empty() {
        return Err(Error::InvalidConfig("CEM batch must hold at least one element".into()));
    }
    let base_seed: u64 = rng.random();
    let mut runs = initial_means
        .iter()
        .map(|m| Run::new(m, config))
        .collect::<Result<Vec<_>>>()?;
    let mut rngs: Vec<ChaCha8Rng> = (0..runs.len()).map(|i| element_rng(base_seed, i)).collect();
    let mut done = vec![false; runs.len()];

    for _ in 0..config.iterations {
        let active: Vec<usize> = (0..runs.len()).filter(|&i| !done[i]).collect();
        if active.is_empty() {
            break;
        }
        let samples: Vec<Array2<f64>> = active
            .iter()
            .map(|&i| runs[i].sample(config, &mut rngs[i]))
            .collect();
        let blocks: Vec<(usize, ArrayView2<f64>)> = active
            .iter()
            .zip(&samples)
            .map(|(&i, s)| (i, s.view()))
            .collect();
        let values = evaluate(&blocks);
        if values.len() != active.len() {
            return Err(Error::DimensionMismatch {
                context: "CEM evaluator blocks",
                expected: active.len(),
                got: values.len(),
            });
        }
        for ((&i, s), v) in active.iter().zip(&samples).zip(&values) {
            done[i] = runs[i].refit(s, v, config)?;
        }
    }
    Ok(runs.into_iter().map(Run::finish).collect())
}

struct Run {
    mean: Vec<f64>,
    deviation: Vec<f64>,
    iterations: usize,
    trace: Vec<f64>,
}

impl Run {
    fn new(initial_mean: &[f64], config: &CemConfig) -> Result<Self> {
        config.validate()?;
        if initial_mean.is_empty() {
            return Err(Error::InvalidConfig("CEM search space must have dimension >= 1".into()));
        }
        if initial_mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("CEM initial mean".into()));
        }
        Ok(Self {
            mean: initial_mean.to_vec(),
            deviation: vec![config.initial_deviation; initial_mean.len()],
            iterations: 0,
            trace: Vec::with_capacity(config.iterations),
        })
    }

    fn sample<R: Rng + ?Sized>(&self, config: &CemConfig, rng: &mut R) -> Array2<f64> {
        let dim = self.mean.len();
        let mut out = Array2::zeros((config.sample_count, dim));
        for mut row in out.axis_iter_mut(Axis(0)) {
            for (j, x) in row.iter_mut().enumerate() {
                let z: f64 = rng.sample(StandardNormal);
                *x = self.mean[j] + self.deviation[j] * z;
            }
        }
        out
    }

    /// Refit to the elites; returns `true` when the deviation floor is hit.
    fn refit(&mut self, samples: &Array2<f64>, values: &[f64], config: &CemConfig) -> Result<bool> {
        if values.len() != samples.nrows() {
            return Err(Error::DimensionMismatch {
                context: "CEM objective values",
                expected: samples.nrows(),
                got: values.len(),
            });
        }
        if values.iter().all(|v| !v.is_finite()) {
            return Err(Error::CemAllNonFinite);
        }
        let mut order: Vec<usize> = (0..values.len()).collect();
        // Stable sort: ties keep sample order. Non-finite values rank last.
        order.sort_by(|&a, &b| {
            let (va, vb) = (values[a], values[b]);
            match (va.is_finite(), vb.is_finite()) {
                (true, true) => {
                    if config.minimize {
                        va.total_cmp(&vb)
                    } else {
                        vb.total_cmp(&va)
                    }
                }
                (true, false) => std::cmp::Ordering::Less,
                (false, true) => std::cmp::Ordering::Greater,
                (false, false) => std::cmp::Ordering::Equal,
            }
        });
        // Never let a non-finite sample into the elite set.
        let finite = values.iter().filter(|v| v.is_finite()).count();
        let elites = &order[..config.elite_count().min(finite)];
        let k = elites.len() as f64;
        for j in 0..self.mean.len() {
            let m = elites.iter().map(|&i| samples[[i, j]]).sum::<f64>() / k;
            let var = elites.iter().map(|&i| (samples[[i, j]] - m).powi(2)).sum::<f64>() / k;
            self.mean[j] = m;
            self.deviation[j] = var.sqrt();
        }
        self.trace.push(values[order[0]]);
        self.iterations += 1;
        Ok(self.deviation.iter().all(|&d| d < config.deviation_floor))
    }

    fn finish(self) -> CemResult {
        CemResult {
            best_mean: self.mean,
            final_deviation: self.deviation,
            iterations_run: self.iterations,
            objective_trace: self.trace,
        }
    }
}
