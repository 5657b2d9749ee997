//! Parameter and data types, the shifted-Poisson duration model, and the
//! marginal segment likelihood with random effects integrated out.
//!
//! A segment of length `d` emitted by state `k` is modeled as
//! `y = X (beta_k + u) + e` with `u ~ N(0, Psi_k)` and `e ~ N(0, sigma2 I)`,
//! where `X` has rows `[1, j]` for the segment-local clock `j = 0..d-1`.
//! Marginally `y ~ N(X beta_k, X Psi_k Xᵀ + sigma2 I)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat2, Vec2};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// One observed waveform. Time indices are implicit: `values[i]` is the
/// sample at `t = i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveformSeries {
    id: String,
    values: Vec<f64>,
}

impl WaveformSeries {
    pub fn new(id: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let id = id.into();
        if values.is_empty() {
            return Err(Error::Data(format!("waveform '{id}' is empty")));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "waveform '{id}' has a non-finite value at t={}",
                i + 1
            )));
        }
        Ok(Self { id, values })
    }

    /// Builds a waveform from explicit `(t, y)` pairs, which must cover
    /// `1..=T` in order.
    pub fn from_samples(id: impl Into<String>, samples: &[(usize, f64)]) -> Result<Self> {
        let id = id.into();
        for (i, &(t, _)) in samples.iter().enumerate() {
            if t != i + 1 {
                return Err(Error::Data(format!(
                    "waveform '{id}': expected t={} but found t={t}",
                    i + 1
                )));
            }
        }
        Self::new(id, samples.iter().map(|&(_, y)| y).collect())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// The `d × 2` regression design of a segment: an intercept column and the
/// segment-local time `0..d-1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentDesign {
    duration: usize,
}

impl SegmentDesign {
    pub fn new(duration: usize) -> Result<Self> {
        if duration == 0 {
            return Err(Error::Domain("segment duration must be >= 1".into()));
        }
        Ok(Self { duration })
    }

    pub fn duration(&self) -> usize {
        self.duration
    }

    pub fn row(&self, j: usize) -> Vec2 {
        Vec2([1.0, j as f64])
    }

    pub fn rows(&self) -> impl Iterator<Item = Vec2> + '_ {
        (0..self.duration).map(|j| self.row(j))
    }

    /// `XᵀX` in closed form.
    pub fn xtx(&self) -> Mat2 {
        let d = self.duration as f64;
        let s1 = d * (d - 1.0) / 2.0;
        let s2 = (d - 1.0) * d * (2.0 * d - 1.0) / 6.0;
        Mat2::new(d, s1, s1, s2)
    }
}

/// Per-state parameters: mean regression coefficients, duration rate and
/// random-effects covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateParams {
    /// `[intercept, slope]`
    pub beta: Vec2,
    pub lambda: f64,
    pub psi: Mat2,
}

impl StateParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !self.beta.is_finite() || !self.psi.is_finite() {
            return Err(Error::Config("state parameters must be finite".into()));
        }
        let p = &self.psi.0;
        let tol = 1e-12 * (p[0][0].abs() + p[1][1].abs()).max(1e-300);
        if (p[0][1] - p[1][0]).abs() > tol {
            return Err(Error::Config("psi must be symmetric".into()));
        }
        let [lo, _] = self.psi.sym_eigenvalues();
        if lo < -1e-10 * self.psi.trace().abs().max(1.0) {
            return Err(Error::Config(format!(
                "psi must be positive semidefinite (min eigenvalue {lo})"
            )));
        }
        Ok(())
    }
}

/// Full parameter set of a left-to-right random-effects segmental HMM.
///
/// `a` has `M + 1` rows: row 0 is the initial-state distribution and row
/// `k` (1-based) holds the transitions out of state `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub a: Vec<Vec<f64>>,
    pub states: Vec<StateParams>,
    pub sigma2: f64,
    pub d_max: usize,
}

impl ModelParams {
    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    /// Initial probability of state `k` (0-based).
    pub fn initial(&self, k: usize) -> f64 {
        self.a[0][k]
    }

    /// Transition probability from state `from` to state `to` (both 0-based).
    pub fn transition(&self, from: usize, to: usize) -> f64 {
        self.a[from + 1][to]
    }

    /// Uniform initial distribution and uniform transitions over all
    /// allowed successors.
    pub fn uniform_transitions(m: usize) -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; m]; m + 1];
        a[0].iter_mut().for_each(|v| *v = 1.0 / m as f64);
        for k in 0..m {
            let succ = m - k - 1;
            for l in (k + 1)..m {
                a[k + 1][l] = 1.0 / succ as f64;
            }
        }
        a
    }

    /// Structural checks shared by inference and sampling; does not look
    /// at `sigma2`.
    pub fn validate_structure(&self) -> Result<()> {
        let m = self.states.len();
        if m == 0 {
            return Err(Error::Config("model must have at least one state".into()));
        }
        if self.d_max == 0 {
            return Err(Error::Config("d_max must be >= 1".into()));
        }
        if self.a.len() != m + 1 || self.a.iter().any(|row| row.len() != m) {
            return Err(Error::Config(format!(
                "transition matrix must be {} x {m}",
                m + 1
            )));
        }
        if self.a.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("transition probabilities must be finite and >= 0".into()));
        }
        let row_sum = |r: &[f64]| r.iter().sum::<f64>();
        if (row_sum(&self.a[0]) - 1.0).abs() > 1e-9 {
            return Err(Error::Config("initial distribution must sum to 1".into()));
        }
        for k in 1..=m {
            let row = &self.a[k];
            if row[..k].iter().any(|&v| v != 0.0) {
                return Err(Error::Config(format!(
                    "row {k}: only left-to-right transitions are allowed"
                )));
            }
            let s = row_sum(row);
            if k < m && (s - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("row {k} must sum to 1, sums to {s}")));
            }
        }
        for (k, s) in self.states.iter().enumerate() {
            s.validate()
                .map_err(|e| Error::Config(format!("state {}: {e}", k + 1)))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_structure()?;
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::Config(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        Ok(())
    }

    /// Same model with every random-effects covariance set to zero.
    pub fn without_random_effects(&self) -> ModelParams {
        let mut out = self.clone();
        out.states.iter_mut().for_each(|s| s.psi = Mat2::ZERO);
        out
    }
}

/// Gaussian posterior of the random effect `u` given one segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomEffectPosterior {
    pub u_hat: Vec2,
    pub u_cov: Mat2,
    /// `E[u uᵀ] = u_cov + u_hat u_hatᵀ`
    pub second_moment: Mat2,
}

/// Shifted Poisson log-pmf `log[e^{-λ} λ^{d-1} / (d-1)!]`, `d >= 1`.
pub fn duration_log_pmf(d: usize, lambda: f64) -> Result<f64> {
    if d < 1 {
        return Err(Error::Domain(format!("duration must be >= 1, got {d}")));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Domain(format!("lambda must be > 0, got {lambda}")));
    }
    let k = (d - 1) as f64;
    Ok(-lambda + k * lambda.ln() - ln_factorial(d - 1))
}

pub(crate) fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

/// `log p(d)` for `d = 1..=d_max`, index 0 unused (−∞).
pub(crate) fn duration_table(lambda: f64, d_max: usize) -> Vec<f64> {
    let mut out = vec![f64::NEG_INFINITY; d_max + 1];
    let ln_lambda = lambda.ln();
    let mut acc = -lambda;
    for (d, slot) in out.iter_mut().enumerate().skip(1) {
        if d > 1 {
            acc += ln_lambda - ((d - 1) as f64).ln();
        }
        *slot = acc;
    }
    out
}

/// One-pass sufficient statistics of a segment relative to a mean line
/// `beta`: `XᵀX`, `Xᵀr` and `rᵀr` with `r = y − X beta`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SegmentStats {
    pub duration: usize,
    pub xtx: Mat2,
    pub xtr: Vec2,
    pub rtr: f64,
}

impl SegmentStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_segment(y_seg: &[f64], beta: Vec2) -> Self {
        let mut s = Self::new();
        for &y in y_seg {
            s.push(y, beta);
        }
        s
    }

    /// Appends the next sample of the segment.
    #[inline]
    pub fn push(&mut self, y: f64, beta: Vec2) {
        let j = self.duration as f64;
        let r = y - beta.0[0] - beta.0[1] * j;
        self.duration += 1;
        let g = &mut self.xtx.0;
        g[0][0] += 1.0;
        g[0][1] += j;
        g[1][0] += j;
        g[1][1] += j * j;
        self.xtr.0[0] += r;
        self.xtr.0[1] += j * r;
        self.rtr += r * r;
    }
}

/// Posterior moments of `u` and the marginal log-density, all from the
/// 2×2 sufficient statistics. Uses `(XᵀX + σ²Ψ⁻¹)⁻¹ = (ΨXᵀX + σ²I)⁻¹Ψ`,
/// which stays valid for singular `Psi`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SegmentFit {
    pub posterior: RandomEffectPosterior,
    pub loglik: f64,
    /// `‖r − X û‖²`
    pub resid_sq: f64,
}

pub(crate) fn fit_segment(stats: &SegmentStats, psi: &Mat2, sigma2: f64) -> SegmentFit {
    let d = stats.duration as f64;
    let k = *psi * stats.xtx + Mat2::IDENTITY.scale(sigma2);
    let det_k = k.det();
    let k_inv = Mat2::new(k.0[1][1], -k.0[0][1], -k.0[1][0], k.0[0][0]).scale(1.0 / det_k);
    let gain = k_inv * *psi;
    let u_hat = gain.mul_vec(stats.xtr);
    let u_cov = gain.scale(sigma2).symmetrize();
    let quad = stats.rtr - stats.xtr.dot(u_hat);
    let log_det = det_k.ln() - 2.0 * sigma2.ln();
    let loglik = -0.5 * d * (LN_2PI + sigma2.ln()) - 0.5 * quad / sigma2 - 0.5 * log_det;
    let resid_sq = stats.rtr - 2.0 * u_hat.dot(stats.xtr) + stats.xtx.quad(u_hat);
    SegmentFit {
        posterior: RandomEffectPosterior {
            u_hat,
            u_cov,
            second_moment: (u_cov + u_hat.outer(u_hat)).symmetrize(),
        },
        loglik,
        resid_sq: resid_sq.max(0.0),
    }
}

fn check_segment(y_seg: &[f64], state: &StateParams, sigma2: f64) -> Result<()> {
    if y_seg.is_empty() {
        return Err(Error::Domain("segment must contain at least one sample".into()));
    }
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::Domain(format!("sigma2 must be > 0, got {sigma2}")));
    }
    state.validate().map_err(|e| Error::Domain(e.to_string()))
}

/// Marginal log-density of a segment in O(d): one pass to accumulate
/// sufficient statistics, then 2×2 algebra.
pub fn segment_loglik_fast(y_seg: &[f64], state: &StateParams, sigma2: f64) -> Result<f64> {
    check_segment(y_seg, state, sigma2)?;
    let stats = SegmentStats::from_segment(y_seg, state.beta);
    let fit = fit_segment(&stats, &state.psi, sigma2);
    if !fit.loglik.is_finite() {
        return Err(Error::Numerical("segment marginal covariance is degenerate".into()));
    }
    Ok(fit.loglik)
}

/// Posterior of the random effect for one segment.
pub fn posterior_random_effect(
    y_seg: &[f64],
    state: &StateParams,
    sigma2: f64,
) -> Result<RandomEffectPosterior> {
    check_segment(y_seg, state, sigma2)?;
    let stats = SegmentStats::from_segment(y_seg, state.beta);
    let post = fit_segment(&stats, &state.psi, sigma2).posterior;
    if !(post.u_hat.is_finite() && post.u_cov.is_finite()) {
        return Err(Error::Numerical("random-effect posterior is not finite".into()));
    }
    Ok(post)
}

/// Reference marginal log-density built from the explicit `d × d`
/// covariance `X Psi Xᵀ + sigma2 I` and a Cholesky factorization. O(d³).
pub fn segment_loglik_naive(y_seg: &[f64], state: &StateParams, sigma2: f64) -> Result<f64> {
    check_segment(y_seg, state, sigma2)?;
    let d = y_seg.len();
    let design = SegmentDesign::new(d)?;
    let rows: Vec<Vec2> = design.rows().collect();
    let mut cov = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            cov[i * d + j] = rows[i].dot(state.psi.mul_vec(rows[j]));
        }
        cov[i * d + i] += sigma2;
    }
    let chol = match cholesky(&cov, d) {
        Some(l) => l,
        None => {
            for i in 0..d {
                cov[i * d + i] += 1e-10;
            }
            cholesky(&cov, d).ok_or_else(|| {
                Error::Numerical("segment covariance is not positive definite".into())
            })?
        }
    };
    let resid: Vec<f64> = y_seg
        .iter()
        .zip(&rows)
        .map(|(y, x)| y - x.dot(state.beta))
        .collect();
    // Forward substitution L z = r.
    let mut z = vec![0.0; d];
    for i in 0..d {
        let mut acc = resid[i];
        for j in 0..i {
            acc -= chol[i * d + j] * z[j];
        }
        z[i] = acc / chol[i * d + i];
    }
    let log_det: f64 = (0..d).map(|i| chol[i * d + i].ln()).sum::<f64>() * 2.0;
    let maha: f64 = z.iter().map(|v| v * v).sum();
    Ok(-0.5 * (d as f64 * (2.0 * PI).ln() + log_det + maha))
}

fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Returns `psi` if it is positive definite, otherwise `psi` with a small
/// diagonal jitter (`1e-9 · trace/2`, or `1e-12` when the trace is zero).
pub fn jittered_psi(psi: &Mat2) -> Result<Mat2> {
    let is_pd = |m: &Mat2| m.0[0][0] > 0.0 && m.det() > 0.0;
    if is_pd(psi) {
        return Ok(*psi);
    }
    let tr = psi.trace();
    let eps = if tr > 0.0 { 1e-9 * tr / 2.0 } else { 1e-12 };
    let out = *psi + Mat2::IDENTITY.scale(eps);
    if is_pd(&out) {
        Ok(out)
    } else {
        Err(Error::Numerical("random-effects covariance is not PSD".into()))
    }
}

/// `E[log N(u; 0, Psi)]` under a distribution of `u` with the given second
/// moment.
pub(crate) fn expected_log_prior(psi: &Mat2, second_moment: &Mat2) -> Result<f64> {
    let p = jittered_psi(psi)?;
    let inv = p.inverse().ok_or_else(|| Error::Numerical("psi is singular".into()))?;
    Ok(-LN_2PI - 0.5 * p.det().ln() - 0.5 * (inv * *second_moment).trace())
}

pub(crate) fn ln_2pi() -> f64 {
    LN_2PI
}
