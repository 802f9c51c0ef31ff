//! Performance-guided refinement: score cells of the two-gate layout space
//! by validation loss and draw the next training layouts in proportion,
//! mixed with a uniform floor.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PgrError, SimError};
use crate::policies::{Dataset, Expert, Observation, Policy, Sample, Trajectory};
use crate::seed::{derive_seed, rng_for};
use crate::sim::{metrics, rollout, rollout_observed, Metrics, Outcome, Rollout, SimConfig};
use crate::tracks::{observability_check, sample_layout, LayoutTemplate, Platform, TwoGateLayout};

pub const DIMS: usize = 8;

/// Axis-aligned grid over the 8-dimensional layout space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPartition {
    pub lower: [f64; DIMS],
    pub upper: [f64; DIMS],
    pub counts: [usize; DIMS],
}

impl GridPartition {
    pub fn uniform(
        lower: [f64; DIMS],
        upper: [f64; DIMS],
        counts: [usize; DIMS],
    ) -> Result<Self, PgrError> {
        for k in 0..DIMS {
            if counts[k] == 0 {
                return Err(PgrError::Config(format!("dimension {k} has zero bins")));
            }
            if !(lower[k] <= upper[k]) {
                return Err(PgrError::Config(format!("dimension {k} has inverted bounds")));
            }
        }
        Ok(Self {
            lower,
            upper,
            counts,
        })
    }

    /// Per-gate (x, y, z, yaw) bins, repeated for both gates.
    pub fn per_gate(platform: Platform, bins: [usize; 4]) -> Self {
        let (lower, upper) = default_bounds(platform);
        let mut counts = [0; DIMS];
        counts[..4].copy_from_slice(&bins);
        counts[4..].copy_from_slice(&bins);
        Self::uniform(lower, upper, counts).expect("default bounds are valid")
    }

    /// (2×2×2×2)² = 256 cells.
    pub fn desk(platform: Platform) -> Self {
        Self::per_gate(platform, [2, 2, 2, 2])
    }

    /// (4×4×3×3)² cells for the fixed-wing, (3×3×2×2)² for the quadrotor.
    pub fn full(platform: Platform) -> Self {
        match platform {
            Platform::Uav => Self::per_gate(platform, [4, 4, 3, 3]),
            Platform::Quad => Self::per_gate(platform, [3, 3, 2, 2]),
        }
    }

    pub fn num_cells(&self) -> usize {
        self.counts.iter().product()
    }

    /// Row-major: the last dimension varies fastest.
    pub fn cell_index(&self, multi: &[usize; DIMS]) -> usize {
        multi
            .iter()
            .zip(&self.counts)
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn multi_index(&self, mut cell: usize) -> [usize; DIMS] {
        let mut out = [0; DIMS];
        for k in (0..DIMS).rev() {
            out[k] = cell % self.counts[k];
            cell /= self.counts[k];
        }
        out
    }

    fn edge(&self, k: usize, i: usize) -> f64 {
        if i == self.counts[k] {
            self.upper[k]
        } else {
            self.lower[k] + (self.upper[k] - self.lower[k]) * i as f64 / self.counts[k] as f64
        }
    }

    pub fn cell_bounds(&self, cell: usize) -> ([f64; DIMS], [f64; DIMS]) {
        let m = self.multi_index(cell);
        let mut lo = [0.0; DIMS];
        let mut hi = [0.0; DIMS];
        for k in 0..DIMS {
            lo[k] = self.edge(k, m[k]);
            hi[k] = self.edge(k, m[k] + 1);
        }
        (lo, hi)
    }

    /// Cell containing `layout`; half-open bins except the last, and points
    /// outside the bounds are clamped to the nearest cell.
    pub fn cell_of(&self, layout: &TwoGateLayout) -> usize {
        let mut m = [0; DIMS];
        for k in 0..DIMS {
            let n = self.counts[k];
            let mut i = 0;
            // edges are computed exactly as in cell_bounds
            while i + 1 < n && layout.0[k] >= self.edge(k, i + 1) {
                i += 1;
            }
            m[k] = i;
        }
        self.cell_index(&m)
    }
}

/// Layout-space bounds used by the default partitions.
pub fn default_bounds(platform: Platform) -> ([f64; DIMS], [f64; DIMS]) {
    match platform {
        Platform::Uav => (
            [10.0, 6.0, 1.5, -0.5, 22.0, 4.0, 1.5, -0.5],
            [18.0, 14.0, 2.5, 0.5, 32.0, 16.0, 2.5, 0.5],
        ),
        Platform::Quad => (
            [1.8, 2.0, 1.0, -0.3, 3.8, 1.5, 1.0, -0.3],
            [2.6, 4.0, 1.5, 0.3, 4.8, 4.5, 1.5, 0.3],
        ),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PgrConfig {
    pub iterations: usize,
    pub beta: f64,
    /// Weight on gate error in the task loss, 1/m.
    pub lambda_pos: f64,
    pub initial_samples_per_grid: usize,
    /// Layouts drawn per iteration after the first; `None` keeps the
    /// initial count.
    pub samples_per_iteration: Option<usize>,
    pub validation_per_grid: usize,
    pub max_retries: usize,
    pub seed: u64,
    /// Keep per-tick training pairs in the dataset (only trajectory layouts
    /// are needed by count-based learners).
    pub keep_samples: bool,
}

impl Default for PgrConfig {
    fn default() -> Self {
        Self {
            iterations: 3,
            beta: 0.05,
            lambda_pos: 1.0,
            initial_samples_per_grid: 5,
            samples_per_iteration: None,
            validation_per_grid: 2,
            max_retries: 50,
            seed: 0,
            keep_samples: true,
        }
    }
}

impl PgrConfig {
    pub fn validate(&self) -> Result<(), PgrError> {
        if self.iterations == 0 {
            return Err(PgrError::Config("iterations must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(PgrError::Config("beta must lie in [0, 1]".into()));
        }
        if !(self.lambda_pos >= 0.0) {
            return Err(PgrError::Config("lambda_pos must be non-negative".into()));
        }
        Ok(())
    }
}

/// Mean over gates of 1 for a failure and `λ·error` for a success.
pub fn task_loss(rollout: &Rollout, lambda_pos: f64) -> f64 {
    let n = rollout.gates.len();
    if n == 0 {
        return 0.0;
    }
    rollout
        .gates
        .iter()
        .map(|g| match g.outcome {
            Outcome::Success => lambda_pos * g.error.unwrap_or(0.0),
            _ => 1.0,
        })
        .sum::<f64>()
        / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaggedLayout {
    pub cell: usize,
    pub layout: TwoGateLayout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridLosses {
    pub losses: Vec<f64>,
    pub metrics: Metrics,
}

/// Per-cell mean validation loss; cells without validation layouts get the
/// global mean.
pub fn grid_losses(
    policy: &dyn Policy,
    validation: &[TaggedLayout],
    num_cells: usize,
    template: &LayoutTemplate,
    sim: &SimConfig,
    lambda_pos: f64,
) -> Result<GridLosses, PgrError> {
    if validation.is_empty() {
        return Err(PgrError::Config("empty validation set".into()));
    }
    let rollouts: Vec<Rollout> = validation
        .par_iter()
        .map(|v| rollout(policy, &template.track(&v.layout), sim))
        .collect::<Result<_, SimError>>()?;
    let mut sum = vec![0.0; num_cells];
    let mut n = vec![0usize; num_cells];
    let mut total = 0.0;
    for (v, r) in validation.iter().zip(&rollouts) {
        let l = task_loss(r, lambda_pos);
        sum[v.cell] += l;
        n[v.cell] += 1;
        total += l;
    }
    let global = total / validation.len() as f64;
    let losses = sum
        .iter()
        .zip(&n)
        .map(|(&s, &k)| if k == 0 { global } else { s / k as f64 })
        .collect();
    Ok(GridLosses {
        losses,
        metrics: metrics(&rollouts),
    })
}

/// Normalised losses mixed with a uniform floor: `(1−β) ℓ/Σℓ + β/M`.
pub fn weights(losses: &[f64], beta: f64) -> Result<Vec<f64>, PgrError> {
    let m = losses.len();
    if m == 0 {
        return Err(PgrError::Config("no cells".into()));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(PgrError::Config("beta must lie in [0, 1]".into()));
    }
    for (index, &value) in losses.iter().enumerate() {
        if !(value >= 0.0) || !value.is_finite() {
            return Err(PgrError::InvalidLoss { index, value });
        }
    }
    let total: f64 = losses.iter().sum();
    let floor = beta / m as f64;
    if total == 0.0 {
        return Ok(vec![1.0 / m as f64; m]);
    }
    Ok(losses
        .iter()
        .map(|l| (1.0 - beta) * (l / total) + floor)
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resampled<T> {
    pub accepted: Vec<(TaggedLayout, T)>,
    /// Draws whose cell produced no acceptable layout within the retry cap.
    pub skipped: usize,
}

/// Draws `n` cells from `w`, then layouts uniformly inside each drawn cell,
/// redrawing in the same cell until `accept` returns a payload or the retry
/// cap is hit. Every draw has its own RNG stream, so the result does not
/// depend on scheduling.
pub fn resample<T, F>(
    partition: &GridPartition,
    w: &[f64],
    n: usize,
    seed: u64,
    max_retries: usize,
    accept: F,
) -> Result<Resampled<T>, PgrError>
where
    T: Send,
    F: Fn(&TwoGateLayout) -> Result<Option<T>, SimError> + Sync,
{
    if w.len() != partition.num_cells() {
        return Err(PgrError::Config("weight vector does not match the partition".into()));
    }
    let dist = WeightedIndex::new(w).map_err(|e| PgrError::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, 0]));
    let cells: Vec<usize> = (0..n).map(|_| dist.sample(&mut rng)).collect();
    resample_cells(partition, &cells, seed, max_retries, accept)
}

/// Like [`resample`] with the cell of every draw fixed in advance.
pub fn resample_cells<T, F>(
    partition: &GridPartition,
    cells: &[usize],
    seed: u64,
    max_retries: usize,
    accept: F,
) -> Result<Resampled<T>, PgrError>
where
    T: Send,
    F: Fn(&TwoGateLayout) -> Result<Option<T>, SimError> + Sync,
{
    let results: Vec<Option<(TaggedLayout, T)>> = cells
        .par_iter()
        .enumerate()
        .map(|(j, &cell)| {
            let mut rng = rng_for(&[seed, 1, j as u64]);
            let (lo, hi) = partition.cell_bounds(cell);
            for _ in 0..=max_retries {
                let layout = sample_layout(&lo, &hi, &mut rng);
                if let Some(payload) = accept(&layout)? {
                    return Ok(Some((TaggedLayout { cell, layout }, payload)));
                }
            }
            Ok(None)
        })
        .collect::<Result<_, SimError>>()?;
    let skipped = results.iter().filter(|r| r.is_none()).count();
    let accepted: Vec<_> = results.into_iter().flatten().collect();
    if accepted.is_empty() && !cells.is_empty() {
        return Err(PgrError::SamplingFailure);
    }
    Ok(Resampled { accepted, skipped })
}

/// Observable layouts the expert flies cleanly, with the expert trajectory
/// that proved it.
pub fn expert_trajectory(
    layout: &TwoGateLayout,
    template: &LayoutTemplate,
    expert: &Expert,
    sim: &SimConfig,
    keep_samples: bool,
) -> Result<Option<Trajectory>, SimError> {
    if !observability_check(layout, &sim.intrinsics, &sim.mount) {
        return Ok(None);
    }
    let track = template.track(layout);
    let mut samples = Vec::new();
    let r = rollout_observed(expert, &track, sim, |tick| {
        if keep_samples {
            samples.push(Sample {
                observation: tick.observation.clone(),
                expert: *tick.control,
            });
        }
    })?;
    if r.gates.iter().all(|g| g.outcome == Outcome::Success) {
        Ok(Some(Trajectory {
            layout: Some(*layout),
            samples,
        }))
    } else {
        Ok(None)
    }
}

/// Filtered validation layouts, `per_grid` draws in every cell.
pub fn validation_set(
    partition: &GridPartition,
    per_grid: usize,
    template: &LayoutTemplate,
    expert: &Expert,
    sim: &SimConfig,
    seed: u64,
    max_retries: usize,
) -> Result<Vec<TaggedLayout>, PgrError> {
    let cells: Vec<usize> = (0..partition.num_cells())
        .flat_map(|c| std::iter::repeat_n(c, per_grid))
        .collect();
    let r = resample_cells(partition, &cells, seed, max_retries, |g| {
        Ok(expert_trajectory(g, template, expert, sim, false)?.map(|_| ()))
    })?;
    Ok(r.accepted.into_iter().map(|(t, _)| t).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Training layouts drawn for this iteration, per cell.
    pub samples: Vec<usize>,
    pub skipped: usize,
    pub dataset_trajectories: usize,
    pub losses: Vec<f64>,
    pub weights: Vec<f64>,
    pub validation_success_rate: f64,
    pub validation_mean_gate_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PgrRun {
    pub history: Vec<IterationRecord>,
    pub dataset: Dataset,
    pub validation: Vec<TaggedLayout>,
}

/// The refinement loop. `validation` may be supplied to share one set
/// between runs; otherwise it is drawn from the config seed.
#[allow(clippy::too_many_arguments)]
pub fn pgr_run(
    config: &PgrConfig,
    policy: &mut dyn Policy,
    expert: &Expert,
    partition: &GridPartition,
    template: &LayoutTemplate,
    sim: &SimConfig,
    validation: Option<Vec<TaggedLayout>>,
) -> Result<PgrRun, PgrError> {
    config.validate()?;
    let m = partition.num_cells();
    let validation = match validation {
        Some(v) => v,
        None => validation_set(
            partition,
            config.validation_per_grid,
            template,
            expert,
            sim,
            derive_seed(&[config.seed, 0xda7a]),
            config.max_retries,
        )?,
    };
    let per_iter = config
        .samples_per_iteration
        .unwrap_or(m * config.initial_samples_per_grid);
    let accept = |g: &TwoGateLayout| expert_trajectory(g, template, expert, sim, config.keep_samples);

    let initial: Vec<usize> = (0..m)
        .flat_map(|c| std::iter::repeat_n(c, config.initial_samples_per_grid))
        .collect();
    let mut drawn = resample_cells(partition, &initial, derive_seed(&[config.seed, 1]), config.max_retries, accept)?;
    let mut dataset = Dataset::default();
    let mut history = Vec::with_capacity(config.iterations);
    for it in 1..=config.iterations {
        let mut samples = vec![0usize; m];
        for (tag, _) in &drawn.accepted {
            samples[tag.cell] += 1;
        }
        let skipped = drawn.skipped;
        dataset
            .trajectories
            .extend(drawn.accepted.into_iter().map(|(_, tr)| tr));
        policy.train(&dataset);
        let gl = grid_losses(&*policy, &validation, m, template, sim, config.lambda_pos)?;
        let w = weights(&gl.losses, config.beta)?;
        history.push(IterationRecord {
            iteration: it,
            samples,
            skipped,
            dataset_trajectories: dataset.len(),
            losses: gl.losses,
            weights: w.clone(),
            validation_success_rate: gl.metrics.success_rate,
            validation_mean_gate_error: gl.metrics.mean_gate_error,
        });
        drawn = if it < config.iterations {
            resample(
                partition,
                &w,
                per_iter,
                derive_seed(&[config.seed, 1 + it as u64]),
                config.max_retries,
                accept,
            )?
        } else {
            Resampled {
                accepted: Vec::new(),
                skipped: 0,
            }
        };
    }
    Ok(PgrRun {
        history,
        dataset,
        validation,
    })
}

/// Observations in the dataset that carry a mask, for export.
pub fn mask_samples(dataset: &Dataset) -> impl Iterator<Item = &Sample> {
    dataset
        .trajectories
        .iter()
        .flat_map(|t| &t.samples)
        .filter(|s| matches!(s.observation, Observation::Mask { .. }))
}
