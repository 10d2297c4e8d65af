//! Simulation smoother and the sampling distribution of the reserve.
//!
//! Draws use mean correction: simulate a pseudo data set from the model,
//! smooth it with the gains of the real-data filter run, and shift the real
//! smoothed means by the simulation error. Diffuse initial elements of the
//! pseudo path are fixed at `a0`; the exact-diffuse smoother is equivariant
//! in them, so the draw does not depend on that choice.
//!
//! Draw `i` uses its own ChaCha stream `i` under the run seed, so draws are
//! identical however they are scheduled across threads.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kalman::{self, FilterOutput, KalmanError, Observations};
use crate::models::BuiltModel;
use crate::ssm::{SsmError, SsmSpec};
use crate::stats::{mean, pairwise_sum, quantile_sorted, sample_variance};
use crate::triangle::{reconstruct_incremental, reserve_sum, Triangle, TriangleError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Kalman(#[from] KalmanError),
    #[error(transparent)]
    Ssm(#[from] SsmError),
    #[error(transparent)]
    Triangle(#[from] TriangleError),
    #[error("at least {need} draws are required, got {got}")]
    TooFewDraws { need: usize, got: usize },
    #[error("{rejected} of {n_draws} draws overflowed on reconstruction (limit 1%)")]
    TooManyRejections { rejected: usize, n_draws: usize },
}

fn stream_rng(seed: u64, draw: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(draw as u64);
    rng
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// `L` with `L L' = m` for a symmetric PSD `m`; `None` for a zero matrix.
fn psd_factor(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if m.iter().all(|&v| v == 0.0) {
        return None;
    }
    let eig = SymmetricEigen::new(m.clone());
    let mut l = eig.eigenvectors;
    for (j, lam) in eig.eigenvalues.iter().enumerate() {
        let s = lam.max(0.0).sqrt();
        l.column_mut(j).scale_mut(s);
    }
    Some(l)
}

/// Unconditional draw of the state path and observations of `spec`.
///
/// Diffuse initial elements start at their `a0` value.
pub fn simulate<R: Rng>(spec: &SsmSpec, rng: &mut R) -> (Vec<DVector<f64>>, Vec<Vec<f64>>) {
    let spec = crate::ssm::augment_regression(spec);
    let mut states = Vec::with_capacity(spec.n_times());
    let mut ys = Vec::with_capacity(spec.n_times());
    let k = spec.state_dim();
    let mut alpha = spec.a0.clone();
    if let Some(l) = psd_factor(&spec.q0) {
        alpha += l * DVector::from_fn(k, |_, _| rng.sample(StandardNormal));
    }
    for (t, step) in spec.steps.iter().enumerate() {
        let signal = &step.z * &alpha;
        ys.push(
            signal
                .iter()
                .zip(&step.h)
                .map(|(s, h)| s + h.sqrt() * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        );
        states.push(alpha.clone());
        if t + 1 < spec.n_times() {
            alpha = &step.transition * &alpha;
            if let Some(l) = psd_factor(&step.q) {
                alpha += l * DVector::from_fn(k, |_, _| rng.sample(StandardNormal));
            }
        }
    }
    (states, ys)
}

/// Precomputed pieces shared by every draw for one model and data set.
pub struct SimulationSmoother {
    filter: FilterOutput,
    obs: Vec<Vec<Option<f64>>>,
    smoothed: Vec<DVector<f64>>,
    init_factor: Option<DMatrix<f64>>,
    step_factors: Vec<Option<DMatrix<f64>>>,
    noise_sd: Vec<Vec<f64>>,
}

impl SimulationSmoother {
    pub fn new(spec: &SsmSpec, obs: &Observations) -> Result<Self, SimError> {
        let filter = kalman::filter(spec, obs)?;
        let smoothed = filter.smoothed_means_for(obs);
        let aug = &filter.spec;
        let mut step_factors: Vec<Option<DMatrix<f64>>> = Vec::with_capacity(aug.n_times());
        for (t, step) in aug.steps.iter().enumerate() {
            let reuse = t > 0 && aug.steps[t - 1].q == step.q;
            let f = if reuse {
                step_factors[t - 1].clone()
            } else {
                psd_factor(&step.q)
            };
            step_factors.push(f);
        }
        Ok(Self {
            init_factor: psd_factor(&aug.q0),
            noise_sd: aug.steps.iter().map(|s| s.h.iter().map(|h| h.sqrt()).collect()).collect(),
            obs: obs.to_vec(),
            smoothed,
            step_factors,
            filter,
        })
    }

    /// Smoothed state means (including regression effects) of the real data.
    pub fn smoothed_means(&self) -> &[DVector<f64>] {
        &self.smoothed
    }

    pub fn spec(&self) -> &SsmSpec {
        &self.filter.spec
    }

    fn state_draw_with(&self, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
        let spec = &self.filter.spec;
        let (n, k) = (spec.n_times(), spec.state_dim());
        let mut alpha = spec.a0.clone();
        if let Some(l) = &self.init_factor {
            alpha += l * normals(rng, k);
        }
        let mut path = Vec::with_capacity(n);
        let mut pseudo = Vec::with_capacity(n);
        for t in 0..n {
            let step = &spec.steps[t];
            let y: Vec<Option<f64>> = self.obs[t]
                .iter()
                .enumerate()
                .map(|(e, o)| {
                    o.map(|_| {
                        let u: f64 = rng.sample(StandardNormal);
                        step.z.row(e).transpose().dot(&alpha) + self.noise_sd[t][e] * u
                    })
                })
                .collect();
            pseudo.push(y);
            path.push(alpha.clone());
            if t + 1 < n {
                alpha = &step.transition * &alpha;
                if let Some(l) = &self.step_factors[t] {
                    alpha += l * normals(rng, k);
                }
            }
        }
        let pseudo_means = self.filter.smoothed_means_for(&pseudo);
        path.iter()
            .zip(&pseudo_means)
            .zip(&self.smoothed)
            .map(|((p, pm), m)| m + p - pm)
            .collect()
    }

    /// Draw `i` of the state path given the data.
    pub fn state_draw(&self, seed: u64, i: usize) -> Vec<DVector<f64>> {
        self.state_draw_with(&mut stream_rng(seed, i))
    }

    /// Observed elements keep their data; missing ones get the signal of
    /// `states` plus optional noise drawn from `rng`.
    fn fill(&self, states: &[DVector<f64>], mut rng: Option<&mut ChaCha8Rng>) -> Vec<Vec<f64>> {
        let spec = &self.filter.spec;
        self.obs
            .iter()
            .enumerate()
            .map(|(t, row)| {
                row.iter()
                    .enumerate()
                    .map(|(e, o)| match o {
                        Some(y) => *y,
                        None => {
                            let mut v = spec.steps[t].z.row(e).transpose().dot(&states[t]);
                            if let Some(rng) = rng.as_deref_mut() {
                                let u: f64 = rng.sample(StandardNormal);
                                v += self.noise_sd[t][e] * u;
                            }
                            v
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Responses with the missing elements at their smoothed means.
    pub fn mean_responses(&self) -> Vec<Vec<f64>> {
        self.fill(&self.smoothed, None)
    }

    /// Draw `i` of the responses: observed elements keep their data, missing
    /// ones get `Z alpha + X beta` of the state draw plus, if requested, fresh
    /// observation noise.
    pub fn response_draw(&self, seed: u64, i: usize, future_noise: bool) -> Vec<Vec<f64>> {
        let mut rng = stream_rng(seed, i);
        let states = self.state_draw_with(&mut rng);
        self.fill(&states, future_noise.then_some(&mut rng))
    }
}

/// `n_draws` joint draws of the state path (regression effects appended)
/// given the data.
pub fn draw_states(
    spec: &SsmSpec,
    obs: &Observations,
    n_draws: usize,
    seed: u64,
) -> Result<Vec<Vec<DVector<f64>>>, SimError> {
    if n_draws == 0 {
        return Err(SimError::TooFewDraws { need: 1, got: 0 });
    }
    let sim = SimulationSmoother::new(spec, obs)?;
    Ok((0..n_draws).into_par_iter().map(|i| sim.state_draw(seed, i)).collect())
}

/// `n_draws` draws of the full response vectors with future noise included.
pub fn draw_missing_responses(
    spec: &SsmSpec,
    obs: &Observations,
    n_draws: usize,
    seed: u64,
) -> Result<Vec<Vec<Vec<f64>>>, SimError> {
    if n_draws == 0 {
        return Err(SimError::TooFewDraws { need: 1, got: 0 });
    }
    let sim = SimulationSmoother::new(spec, obs)?;
    Ok((0..n_draws)
        .into_par_iter()
        .map(|i| sim.response_draw(seed, i, true))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `counts.len() + 1` equal-width bin edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub stdev: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub qrange: f64,
    pub cv: f64,
    pub min: f64,
    pub max: f64,
    /// `(p, quantile)` pairs.
    pub percentiles: Vec<(f64, f64)>,
    pub histogram: Histogram,
}

impl Summary {
    /// The third-quartile reserve.
    pub fn suggested_reserve(&self) -> f64 {
        self.q3
    }
}

pub const DEFAULT_PERCENTILES: [f64; 7] = [0.01, 0.05, 0.1, 0.5, 0.9, 0.95, 0.99];
pub const DEFAULT_BINS: usize = 40;

/// Summary statistics of a sample with an equal-width histogram.
pub fn summarize(draws: &[f64], percentiles: &[f64], n_bins: usize) -> Result<Summary, SimError> {
    if draws.len() < 2 {
        return Err(SimError::TooFewDraws {
            need: 2,
            got: draws.len(),
        });
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = mean(draws);
    let stdev = sample_variance(draws).sqrt();
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    let n_bins = n_bins.max(1);
    let width = (hi - lo) / n_bins as f64;
    let mut counts = vec![0usize; n_bins];
    for &x in &sorted {
        let b = if width > 0.0 {
            (((x - lo) / width) as usize).min(n_bins - 1)
        } else {
            0
        };
        counts[b] += 1;
    }
    let (q1, median, q3) = (
        quantile_sorted(&sorted, 0.25),
        quantile_sorted(&sorted, 0.5),
        quantile_sorted(&sorted, 0.75),
    );
    Ok(Summary {
        n: draws.len(),
        mean: m,
        stdev,
        median,
        q1,
        q3,
        qrange: q3 - q1,
        cv: stdev / m,
        min: lo,
        max: hi,
        percentiles: percentiles
            .iter()
            .map(|&p| (p, quantile_sorted(&sorted, p)))
            .collect(),
        histogram: Histogram {
            edges: (0..=n_bins).map(|b| lo + width * b as f64).collect(),
            counts,
        },
    })
}

#[derive(Debug, Clone)]
pub struct ReserveOptions {
    pub n_draws: usize,
    pub seed: u64,
    pub future_noise: bool,
    pub percentiles: Vec<f64>,
    pub n_bins: usize,
}

impl Default for ReserveOptions {
    fn default() -> Self {
        Self {
            n_draws: 10_000,
            seed: 0,
            future_noise: true,
            percentiles: DEFAULT_PERCENTILES.to_vec(),
            n_bins: DEFAULT_BINS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReserveDistribution {
    /// Accepted draws in draw-index order.
    pub draws: Vec<f64>,
    pub n_draws: usize,
    pub n_rejected: usize,
    pub seed: u64,
    pub future_noise: bool,
    /// Reserve from the smoothed response means.
    pub point_estimate: f64,
    pub summary: Summary,
}

/// Reserve implied by a filled response vector set.
fn reserve_from_responses(model: &BuiltModel, t: &Triangle, per_step: &[Vec<f64>]) -> Result<f64, TriangleError> {
    let wrapped: Vec<Vec<Option<f64>>> = per_step
        .iter()
        .map(|r| r.iter().map(|&v| Some(v)).collect())
        .collect();
    let grid = model.series.to_grid(&wrapped)?;
    let full = reconstruct_incremental(&grid, t)?;
    let r = reserve_sum(&full)?;
    if r.is_finite() {
        Ok(r)
    } else {
        Err(TriangleError::NonFinite(crate::triangle::Cell::new(0, 0)))
    }
}

/// Plug-in reserve from the smoothed response means at `theta`.
pub fn point_reserve(model: &BuiltModel, theta: &[f64], t: &Triangle) -> Result<f64, SimError> {
    let sim = SimulationSmoother::new(&model.spec_at(theta)?, &model.observations())?;
    Ok(reserve_from_responses(model, t, &sim.mean_responses())?)
}

/// Monte-Carlo sampling distribution of the reserve at fixed `theta`.
pub fn reserve_distribution(
    model: &BuiltModel,
    theta: &[f64],
    t: &Triangle,
    opts: &ReserveOptions,
) -> Result<ReserveDistribution, SimError> {
    if opts.n_draws < 2 {
        return Err(SimError::TooFewDraws {
            need: 2,
            got: opts.n_draws,
        });
    }
    let spec = model.spec_at(theta)?;
    let sim = SimulationSmoother::new(&spec, &model.observations())?;
    let point_estimate = reserve_from_responses(model, t, &sim.mean_responses())?;
    let results: Vec<Result<f64, TriangleError>> = (0..opts.n_draws)
        .into_par_iter()
        .map(|i| {
            let ys = sim.response_draw(opts.seed, i, opts.future_noise);
            reserve_from_responses(model, t, &ys)
        })
        .collect();
    let mut draws = Vec::with_capacity(opts.n_draws);
    let mut n_rejected = 0;
    for r in results {
        match r {
            Ok(v) => draws.push(v),
            Err(TriangleError::NonFinite(_)) => n_rejected += 1,
            Err(e) => return Err(e.into()),
        }
    }
    if n_rejected * 100 > opts.n_draws {
        return Err(SimError::TooManyRejections {
            rejected: n_rejected,
            n_draws: opts.n_draws,
        });
    }
    let summary = summarize(&draws, &opts.percentiles, opts.n_bins)?;
    Ok(ReserveDistribution {
        draws,
        n_draws: opts.n_draws,
        n_rejected,
        seed: opts.seed,
        future_noise: opts.future_noise,
        point_estimate,
        summary,
    })
}

impl ReserveDistribution {
    /// Monte-Carlo standard error of the mean reserve.
    pub fn mc_standard_error(&self) -> f64 {
        self.summary.stdev / (self.draws.len() as f64).sqrt()
    }

    pub fn total(&self) -> f64 {
        pairwise_sum(&self.draws)
    }
}
