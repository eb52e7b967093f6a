//! Exact Gaussian-process regression with a squared-exponential kernel.
//!
//! Inputs and targets are standardized before fitting. Hyperparameters are
//! chosen by maximizing the log marginal likelihood over a fixed grid, so a
//! fit is a deterministic function of the data and the seed that drives the
//! subsampling of large training sets.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::index;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{LdtError, Result};
use crate::seed::{stream_rng, Stream};

pub const JITTER: f64 = 1e-10;

const SIGNAL_GRID: [f64; 3] = [0.1, 1.0, 10.0];
const LENGTH_GRID: [f64; 6] = [0.05, 0.1, 0.25, 0.5, 1.0, 2.0];
const NOISE_GRID: [f64; 3] = [1e-6, 1e-4, 1e-2];

/// Kernel hyperparameters in standardized units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub signal_variance: f64,
    pub length_scale: f64,
    pub noise_variance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpConfig {
    /// Training sets above this size are uniformly subsampled.
    pub cap: usize,
    /// The likelihood grid is evaluated on a subsample of at most this many
    /// points; the final factorization uses the full (capped) set.
    pub search_cap: usize,
    /// Skip the grid search and use these hyperparameters.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed: Option<Hyperparameters>,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self { cap: 2000, search_cap: 400, fixed: None }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cap < 2 || self.search_cap < 2 {
            return Err(LdtError::Config("gp.cap and gp.search_cap must be at least 2".into()));
        }
        if let Some(h) = self.fixed {
            if !(h.signal_variance > 0.0 && h.length_scale > 0.0 && h.noise_variance > 0.0) {
                return Err(LdtError::Config("gp.fixed hyperparameters must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GpModel {
    dim: usize,
    /// Standardized training inputs, row-major `n x dim`.
    inputs: Vec<f64>,
    targets: DVector<f64>,
    hyper: Hyperparameters,
    input_mean: Vec<f64>,
    input_scale: Vec<f64>,
    target_mean: f64,
    target_scale: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    log_marginal_likelihood: f64,
}

fn mean_and_scale(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let scale = var.sqrt();
    (mean, if scale > 0.0 && scale.is_finite() { scale } else { 1.0 })
}

fn kernel_matrix(inputs: &[f64], dim: usize, rows: &[usize], hyper: &Hyperparameters) -> DMatrix<f64> {
    let n = rows.len();
    let inv = 1.0 / (2.0 * hyper.length_scale * hyper.length_scale);
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        let a = &inputs[rows[i] * dim..(rows[i] + 1) * dim];
        for j in 0..=i {
            let b = &inputs[rows[j] * dim..(rows[j] + 1) * dim];
            let d2: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
            let v = hyper.signal_variance * (-d2 * inv).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += hyper.noise_variance + JITTER;
    }
    k
}

/// Factorizes and returns `(cholesky, alpha, log marginal likelihood)`.
fn factorize(
    inputs: &[f64],
    dim: usize,
    rows: &[usize],
    targets: &DVector<f64>,
    hyper: &Hyperparameters,
) -> Option<(Cholesky<f64, Dyn>, DVector<f64>, f64)> {
    let chol = kernel_matrix(inputs, dim, rows, hyper).cholesky()?;
    let alpha = chol.solve(targets);
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
    let n = rows.len() as f64;
    let lml = -0.5 * targets.dot(&alpha) - log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln();
    lml.is_finite().then_some((chol, alpha, lml))
}

impl GpModel {
    /// Fits a GP to scalar inputs.
    pub fn fit_scalar(x: &[f64], t: &[f64], config: &GpConfig, seed: u64) -> Result<Self> {
        Self::fit(x, 1, t, config, seed)
    }

    /// Fits a GP to `t.len()` input rows of width `dim`, stored row-major in `x`.
    pub fn fit(x: &[f64], dim: usize, t: &[f64], config: &GpConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if dim == 0 || x.len() != t.len() * dim {
            return Err(LdtError::GpFit(format!(
                "{} input values do not form {} rows of width {dim}",
                x.len(),
                t.len()
            )));
        }
        if t.len() < 2 {
            return Err(LdtError::GpFit(format!("need at least 2 points, got {}", t.len())));
        }
        if x.iter().chain(t).any(|v| !v.is_finite()) {
            return Err(LdtError::GpFit("training data contains non-finite values".into()));
        }

        let mut rng = stream_rng(seed, Stream::GpSubsample, 0);
        let mut keep: Vec<usize> = if t.len() > config.cap {
            index::sample(&mut rng, t.len(), config.cap).into_vec()
        } else {
            (0..t.len()).collect()
        };
        keep.sort_unstable();

        let (target_mean, target_scale) = mean_and_scale(keep.iter().map(|&i| t[i]));
        let mut input_mean = Vec::with_capacity(dim);
        let mut input_scale = Vec::with_capacity(dim);
        for d in 0..dim {
            let (m, s) = mean_and_scale(keep.iter().map(|&i| x[i * dim + d]));
            input_mean.push(m);
            input_scale.push(s);
        }
        let mut inputs = Vec::with_capacity(keep.len() * dim);
        for &i in &keep {
            for d in 0..dim {
                inputs.push((x[i * dim + d] - input_mean[d]) / input_scale[d]);
            }
        }
        let targets = DVector::from_iterator(keep.len(), keep.iter().map(|&i| (t[i] - target_mean) / target_scale));

        let hyper = match config.fixed {
            Some(h) => h,
            None => {
                let all: Vec<usize> = (0..keep.len()).collect();
                let search: Vec<usize> = if keep.len() > config.search_cap {
                    let mut s = index::sample(&mut rng, keep.len(), config.search_cap).into_vec();
                    s.sort_unstable();
                    s
                } else {
                    all
                };
                let search_targets = DVector::from_iterator(search.len(), search.iter().map(|&i| targets[i]));
                grid_search(&inputs, dim, &search, &search_targets)?
            }
        };

        let rows: Vec<usize> = (0..keep.len()).collect();
        let (chol, alpha, lml) = factorize(&inputs, dim, &rows, &targets, &hyper)
            .ok_or_else(|| LdtError::GpFit(format!("kernel matrix not positive definite for {hyper:?}")))?;

        Ok(Self {
            dim,
            inputs,
            targets,
            hyper,
            input_mean,
            input_scale,
            target_mean,
            target_scale,
            chol,
            alpha,
            log_marginal_likelihood: lml,
        })
    }

    /// Posterior mean at one input row, in original units.
    pub fn predict(&self, query: &[f64]) -> Result<f64> {
        if query.len() != self.dim {
            return Err(LdtError::LengthMismatch { expected: self.dim, actual: query.len() });
        }
        if query.iter().any(|v| !v.is_finite()) {
            return Err(LdtError::NonFinite("gp query"));
        }
        let inv = 1.0 / (2.0 * self.hyper.length_scale * self.hyper.length_scale);
        let mut mean = 0.0;
        for (row, a) in self.inputs.chunks_exact(self.dim).zip(self.alpha.iter()) {
            let mut d2 = 0.0;
            for d in 0..self.dim {
                let q = (query[d] - self.input_mean[d]) / self.input_scale[d];
                d2 += (q - row[d]) * (q - row[d]);
            }
            mean += self.hyper.signal_variance * (-d2 * inv).exp() * a;
        }
        Ok(mean * self.target_scale + self.target_mean)
    }

    pub fn predict_scalar(&self, x: f64) -> Result<f64> {
        self.predict(&[x])
    }

    pub fn hyperparameters(&self) -> Hyperparameters {
        self.hyper
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.log_marginal_likelihood
    }

    pub fn training_size(&self) -> usize {
        self.targets.len()
    }

    pub fn input_dim(&self) -> usize {
        self.dim
    }

    pub fn target_mean(&self) -> f64 {
        self.target_mean
    }

    /// Posterior-mean scale of the signal in original target units.
    pub fn signal_std(&self) -> f64 {
        self.hyper.signal_variance.sqrt() * self.target_scale
    }
}

fn grid_search(inputs: &[f64], dim: usize, rows: &[usize], targets: &DVector<f64>) -> Result<Hyperparameters> {
    let n = rows.len() as f64;
    let var = targets.iter().map(|v| v * v).sum::<f64>() / n - (targets.sum() / n).powi(2);
    let var = if var > 0.0 { var } else { 1.0 };
    let mut range: f64 = 0.0;
    for d in 0..dim {
        let vals = rows.iter().map(|&r| inputs[r * dim + d]);
        let lo = vals.clone().fold(f64::INFINITY, f64::min);
        let hi = vals.fold(f64::NEG_INFINITY, f64::max);
        range = range.max(hi - lo);
    }
    let range = if range > 0.0 { range } else { 1.0 };

    let mut best: Option<(f64, Hyperparameters)> = None;
    for s in SIGNAL_GRID {
        for l in LENGTH_GRID {
            for e in NOISE_GRID {
                let h = Hyperparameters { signal_variance: s * var, length_scale: l * range, noise_variance: e * var };
                if let Some((_, _, lml)) = factorize(inputs, dim, rows, targets, &h) {
                    if best.is_none_or(|(b, _)| lml > b) {
                        best = Some((lml, h));
                    }
                }
            }
        }
    }
    best.map(|(_, h)| h).ok_or_else(|| LdtError::GpFit("no grid point gave a positive definite kernel".into()))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GpModelJson {
    hyperparameters: Hyperparameters,
    input_mean: Vec<f64>,
    input_scale: Vec<f64>,
    target_mean: f64,
    target_scale: f64,
    /// Standardized training rows.
    inputs: Vec<Vec<f64>>,
    /// Standardized training targets.
    targets: Vec<f64>,
}

impl Serialize for GpModel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        GpModelJson {
            hyperparameters: self.hyper,
            input_mean: self.input_mean.clone(),
            input_scale: self.input_scale.clone(),
            target_mean: self.target_mean,
            target_scale: self.target_scale,
            inputs: self.inputs.chunks_exact(self.dim).map(<[f64]>::to_vec).collect(),
            targets: self.targets.iter().copied().collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for GpModel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error;
        let j = GpModelJson::deserialize(deserializer)?;
        let dim = j.input_mean.len();
        if dim == 0 || j.input_scale.len() != dim || j.inputs.len() != j.targets.len() || j.targets.len() < 2 {
            return Err(D::Error::custom("inconsistent gaussian process training set"));
        }
        if j.inputs.iter().any(|r| r.len() != dim) {
            return Err(D::Error::custom("training rows must match the input dimension"));
        }
        let inputs: Vec<f64> = j.inputs.concat();
        let targets = DVector::from_vec(j.targets);
        let rows: Vec<usize> = (0..targets.len()).collect();
        let (chol, alpha, lml) = factorize(&inputs, dim, &rows, &targets, &j.hyperparameters)
            .ok_or_else(|| D::Error::custom("kernel matrix not positive definite"))?;
        Ok(Self {
            dim,
            inputs,
            targets,
            hyper: j.hyperparameters,
            input_mean: j.input_mean,
            input_scale: j.input_scale,
            target_mean: j.target_mean,
            target_scale: j.target_scale,
            chol,
            alpha,
            log_marginal_likelihood: lml,
        })
    }
}

impl PartialEq for GpModel {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.inputs == other.inputs
            && self.targets == other.targets
            && self.hyper == other.hyper
            && self.input_mean == other.input_mean
            && self.input_scale == other.input_scale
            && self.target_mean == other.target_mean
            && self.target_scale == other.target_scale
    }
}

impl GpModel {
    /// Lower Cholesky factor of the regularized kernel matrix.
    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }
}
