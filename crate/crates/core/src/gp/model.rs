//! Gaussian-process regression on standardized scores with a zero prior mean.

use rand::Rng;

use super::kernel::{KernelSpec, Smoothness};
use super::linalg::{cholesky, inverse_from_cholesky, solve_lower, solve_upper_t};
use crate::error::{Error, Result};

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-4;

const LOG_SCALE_BOUNDS: (f64, f64) = (-4.605_170_185_988_091, 4.605_170_185_988_091); // ln 0.01, ln 100
const LOG_SIGNAL_BOUNDS: (f64, f64) = (-4.605_170_185_988_091, 4.605_170_185_988_091);
const LOG_NOISE_BOUNDS: (f64, f64) = (-6.0 * std::f64::consts::LN_10, -std::f64::consts::LN_10);

/// Factor `K + (noise + jitter) I`, escalating jitter ×10 from 1e-10 up to 1e-4.
fn factor_with_jitter(mut gram: Vec<f64>, n: usize) -> Result<(Vec<f64>, f64)> {
    if let Some(l) = cholesky(&gram, n) {
        return Ok((l, 0.0));
    }
    let mut jitter = JITTER_START;
    let mut applied = 0.0;
    while jitter <= JITTER_MAX * 1.000_001 {
        for i in 0..n {
            gram[i * n + i] += jitter - applied;
        }
        applied = jitter;
        if let Some(l) = cholesky(&gram, n) {
            return Ok((l, jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::IllConditioned)
}

fn gram_matrix(x: &[f64], n: usize, d: usize, kernel: &KernelSpec, noise: f64) -> Vec<f64> {
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        let xi = &x[i * d..(i + 1) * d];
        k[i * n + i] = kernel.signal_variance + noise;
        for j in 0..i {
            let v = kernel.eval_unchecked(xi, &x[j * d..(j + 1) * d]);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

/// A fitted GP posterior. Immutable after construction.
#[derive(Debug, Clone)]
pub struct GpModel {
    dims: usize,
    x: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
    kernel: KernelSpec,
    noise: f64,
    jitter: f64,
    chol: Vec<f64>,
    alpha: Vec<f64>,
    lml: f64,
}

impl GpModel {
    /// Fit with fixed kernel hyperparameters.
    pub fn fit(
        points: &[Vec<f64>],
        scores: &[f64],
        kernel: KernelSpec,
        noise: f64,
    ) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::InvalidArgument(
                "at least one training point required".into(),
            ));
        }
        if n != scores.len() {
            return Err(Error::InvalidArgument(
                "points and scores differ in length".into(),
            ));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument("scores must be finite".into()));
        }
        if !(noise >= 0.0) {
            return Err(Error::InvalidArgument("noise must be >= 0".into()));
        }
        let d = kernel.length_scales.len();
        let mut x = Vec::with_capacity(n * d);
        for p in points {
            if p.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: p.len(),
                });
            }
            x.extend_from_slice(p);
        }
        let (y_mean, y_scale) = standardization(scores);
        let y: Vec<f64> = scores.iter().map(|s| (s - y_mean) / y_scale).collect();

        let gram = gram_matrix(&x, n, d, &kernel, noise);
        let (chol, jitter) = factor_with_jitter(gram, n)?;
        let mut alpha = y.clone();
        solve_lower(&chol, n, &mut alpha);
        let data_fit: f64 = alpha.iter().map(|a| a * a).sum();
        solve_upper_t(&chol, n, &mut alpha);
        let log_det: f64 = (0..n).map(|i| chol[i * n + i].ln()).sum();
        let lml = -0.5 * data_fit - log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        Ok(GpModel {
            dims: d,
            x,
            y_mean,
            y_scale,
            kernel,
            noise,
            jitter,
            chol,
            alpha,
            lml,
        })
    }

    /// Fit with kernel hyperparameters (and optionally the noise level) chosen by
    /// maximizing the log marginal likelihood from `restarts` starting points.
    pub fn fit_optimized<R: Rng + ?Sized>(
        points: &[Vec<f64>],
        scores: &[f64],
        smoothness: Smoothness,
        noise: NoiseModel,
        restarts: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let n = points.len();
        if n == 0 || n != scores.len() {
            return Err(Error::InvalidArgument(
                "need matching, non-empty points and scores".into(),
            ));
        }
        let d = points[0].len();
        let mut x = Vec::with_capacity(n * d);
        for p in points {
            if p.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: p.len(),
                });
            }
            x.extend_from_slice(p);
        }
        let (y_mean, y_scale) = standardization(scores);
        let y: Vec<f64> = scores.iter().map(|s| (s - y_mean) / y_scale).collect();
        let problem = LmlProblem::new(&x, &y, d, smoothness, noise);

        let mut best: Option<(Vec<f64>, f64)> = None;
        for restart in 0..restarts.max(1) {
            let start = if restart == 0 {
                problem.default_theta()
            } else {
                problem.random_theta(rng)
            };
            if let Some((theta, f)) = problem.ascend(start) {
                if best.as_ref().is_none_or(|(_, bf)| f > *bf) {
                    best = Some((theta, f));
                }
            }
        }
        let (theta, _) = best.ok_or(Error::IllConditioned)?;
        let (kernel, noise_var) = problem.unpack(&theta);
        GpModel::fit(points, scores, kernel, noise_var)
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise
    }

    /// Jitter that had to be added to make the Gram matrix factorizable.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn n_train(&self) -> usize {
        self.alpha.len()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.lml
    }

    pub fn standardize(&self, score: f64) -> f64 {
        (score - self.y_mean) / self.y_scale
    }

    /// Posterior mean and latent-function variance in standardized units.
    pub(crate) fn predict_standardized(&self, x: &[f64]) -> (f64, f64) {
        let n = self.alpha.len();
        let d = self.dims;
        let mut kstar: Vec<f64> = (0..n)
            .map(|i| self.kernel.eval_unchecked(x, &self.x[i * d..(i + 1) * d]))
            .collect();
        let mean: f64 = kstar.iter().zip(&self.alpha).map(|(k, a)| k * a).sum();
        solve_lower(&self.chol, n, &mut kstar);
        let explained: f64 = kstar.iter().map(|v| v * v).sum();
        let var = (self.kernel.signal_variance - explained).max(0.0);
        (mean, var)
    }

    /// Posterior `(mean, variance)` in the original score units.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        if x.len() != self.dims {
            return Err(Error::DimensionMismatch {
                expected: self.dims,
                got: x.len(),
            });
        }
        let (m, v) = self.predict_standardized(x);
        Ok((
            m * self.y_scale + self.y_mean,
            v * self.y_scale * self.y_scale,
        ))
    }
}

/// `gp_fit` free-function form.
pub fn gp_fit(
    points: &[Vec<f64>],
    scores: &[f64],
    kernel: KernelSpec,
    noise: f64,
) -> Result<GpModel> {
    GpModel::fit(points, scores, kernel, noise)
}

fn standardization(scores: &[f64]) -> (f64, f64) {
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if scores.len() < 2 || !(sd > 1e-12 * mean.abs().max(1.0)) {
        (mean, 1.0)
    } else {
        (mean, sd)
    }
}

/// Observation-noise treatment during hyperparameter fitting (standardized units).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    Fixed(f64),
    Fitted,
}

struct LmlProblem<'a> {
    /// Squared coordinate differences for each pair `j < i`, `d` per pair.
    sq: Vec<f64>,
    y: &'a [f64],
    n: usize,
    d: usize,
    smoothness: Smoothness,
    noise: NoiseModel,
}

impl<'a> LmlProblem<'a> {
    fn new(x: &[f64], y: &'a [f64], d: usize, smoothness: Smoothness, noise: NoiseModel) -> Self {
        let n = y.len();
        let mut sq = Vec::with_capacity(n * n.saturating_sub(1) / 2 * d);
        for i in 0..n {
            for j in 0..i {
                for k in 0..d {
                    let diff = x[i * d + k] - x[j * d + k];
                    sq.push(diff * diff);
                }
            }
        }
        LmlProblem {
            sq,
            y,
            n,
            d,
            smoothness,
            noise,
        }
    }

    fn n_params(&self) -> usize {
        self.d + 1 + usize::from(self.noise == NoiseModel::Fitted)
    }

    fn bounds(&self, i: usize) -> (f64, f64) {
        if i < self.d {
            LOG_SCALE_BOUNDS
        } else if i == self.d {
            LOG_SIGNAL_BOUNDS
        } else {
            LOG_NOISE_BOUNDS
        }
    }

    fn default_theta(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.n_params()];
        if self.noise == NoiseModel::Fitted {
            t[self.d + 1] = (1e-3f64).ln();
        }
        t
    }

    fn random_theta<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut t = Vec::with_capacity(self.n_params());
        for _ in 0..self.d {
            t.push(rng.random_range((0.05f64).ln()..(2.0f64).ln()));
        }
        t.push(rng.random_range((0.3f64).ln()..(3.0f64).ln()));
        if self.noise == NoiseModel::Fitted {
            t.push(rng.random_range((1e-5f64).ln()..(1e-2f64).ln()));
        }
        t
    }

    fn unpack(&self, theta: &[f64]) -> (KernelSpec, f64) {
        let kernel = KernelSpec {
            smoothness: self.smoothness,
            length_scales: theta[..self.d].iter().map(|t| t.exp()).collect(),
            signal_variance: theta[self.d].exp(),
        };
        let noise = match self.noise {
            NoiseModel::Fixed(v) => v,
            NoiseModel::Fitted => theta[self.d + 1].exp(),
        };
        (kernel, noise)
    }

    /// Log marginal likelihood and its gradient in log-parameter space.
    fn value_and_grad(&self, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
        let (n, d) = (self.n, self.d);
        let (kernel, noise) = self.unpack(theta);
        let sv = kernel.signal_variance;
        let inv_l2: Vec<f64> = kernel.length_scales.iter().map(|l| 1.0 / (l * l)).collect();
        let mut radii = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        let mut gram = vec![0.0; n * n];
        let mut p = 0;
        for i in 0..n {
            gram[i * n + i] = sv + noise;
            for j in 0..i {
                let r2: f64 = self.sq[p * d..(p + 1) * d]
                    .iter()
                    .zip(&inv_l2)
                    .map(|(s, w)| s * w)
                    .sum();
                let r = r2.sqrt();
                let v = sv * self.smoothness.correlation(r);
                gram[i * n + j] = v;
                gram[j * n + i] = v;
                radii.push(r);
                p += 1;
            }
        }
        let (chol, _) = factor_with_jitter(gram, n).ok()?;
        let mut alpha = self.y.to_vec();
        solve_lower(&chol, n, &mut alpha);
        let data_fit: f64 = alpha.iter().map(|a| a * a).sum();
        solve_upper_t(&chol, n, &mut alpha);
        let log_det: f64 = (0..n).map(|i| chol[i * n + i].ln()).sum();
        let value = -0.5 * data_fit - log_det;

        // W = alpha alpha^T - K^{-1}; dLML/dtheta = 1/2 tr(W dK/dtheta)
        let kinv = inverse_from_cholesky(&chol, n);
        let mut grad = vec![0.0; self.n_params()];
        let mut signal_term = 0.0;
        let mut trace = 0.0;
        let mut p = 0;
        for i in 0..n {
            let wii = alpha[i] * alpha[i] - kinv[i * n + i];
            trace += wii;
            signal_term += wii * sv;
            for j in 0..i {
                let wij = alpha[i] * alpha[j] - kinv[i * n + j];
                let r = radii[p];
                signal_term += 2.0 * wij * sv * self.smoothness.correlation(r);
                let g = 2.0 * wij * sv * self.smoothness.log_scale_factor(r);
                if g != 0.0 {
                    for ((gk, s), w) in grad[..d]
                        .iter_mut()
                        .zip(&self.sq[p * d..(p + 1) * d])
                        .zip(&inv_l2)
                    {
                        *gk += g * s * w;
                    }
                }
                p += 1;
            }
        }
        for g in grad.iter_mut().take(d) {
            *g *= 0.5;
        }
        grad[d] = 0.5 * signal_term;
        if self.noise == NoiseModel::Fitted {
            grad[d + 1] = 0.5 * noise * trace;
        }
        Some((value, grad))
    }

    fn clamp(&self, theta: &mut [f64]) {
        for (i, t) in theta.iter_mut().enumerate() {
            let (lo, hi) = self.bounds(i);
            *t = t.clamp(lo, hi);
        }
    }

    /// Projected normalized-gradient ascent with an adaptive step length.
    fn ascend(&self, mut theta: Vec<f64>) -> Option<(Vec<f64>, f64)> {
        const MAX_EVALS: usize = 40;
        self.clamp(&mut theta);
        let (mut f, mut g) = self.value_and_grad(&theta)?;
        let mut step = 0.5;
        let mut evals = 1;
        while evals < MAX_EVALS && step > 1e-3 {
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > 1e-9) {
                break;
            }
            let mut cand: Vec<f64> = theta
                .iter()
                .zip(&g)
                .map(|(t, gi)| t + step * gi / norm)
                .collect();
            self.clamp(&mut cand);
            evals += 1;
            match self.value_and_grad(&cand) {
                Some((fc, gc)) if fc > f => {
                    let gain = fc - f;
                    theta = cand;
                    f = fc;
                    g = gc;
                    step = (step * 1.6).min(2.0);
                    if gain < 1e-6 {
                        break;
                    }
                }
                _ => step *= 0.3,
            }
        }
        Some((theta, f))
    }
}
