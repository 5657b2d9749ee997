//! EM estimation of model parameters from a corpus of waveforms.
//!
//! The E-step reduces every waveform to per-state posterior-weighted
//! sufficient statistics. The M-step solves the four decoupled problems
//! (transitions, durations, mean regression plus noise, random-effects
//! covariance) in closed form.

use std::collections::HashSet;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::inference::Engine;
use crate::linalg::{Mat2, Vec2};
use crate::model::{jittered_psi, ln_2pi, ln_factorial, ModelParams, SegmentDesign, StateParams, WaveformSeries};

pub const LAMBDA_FLOOR: f64 = 1e-6;
pub const SIGMA2_FLOOR: f64 = 1e-10;
const MIN_WEIGHT: f64 = 1e-12;
/// Relative log-likelihood drop tolerated before EM stops.
const MONOTONE_SLACK: f64 = 1e-6;

/// A validated set of training waveforms with unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingCorpus {
    waveforms: Vec<WaveformSeries>,
}

impl TrainingCorpus {
    pub fn new(waveforms: Vec<WaveformSeries>) -> Result<Self> {
        if waveforms.is_empty() {
            return Err(Error::Data("training corpus is empty".into()));
        }
        let mut seen = HashSet::new();
        for w in &waveforms {
            if !seen.insert(w.id()) {
                return Err(Error::Data(format!("duplicate waveform id '{}'", w.id())));
            }
        }
        Ok(Self { waveforms })
    }

    pub fn waveforms(&self) -> &[WaveformSeries] {
        &self.waveforms
    }

    pub fn len(&self) -> usize {
        self.waveforms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waveforms.is_empty()
    }

    pub fn max_len(&self) -> usize {
        self.waveforms.iter().map(|w| w.len()).max().unwrap_or(0)
    }
}

/// Posterior-weighted statistics of one state.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateStats {
    /// `Σ w`: expected number of visits.
    pub weight: f64,
    /// `Σ w (d − 1)`
    pub duration_excess: f64,
    /// `Σ w log (d − 1)!`
    pub duration_log_factorial: f64,
    /// `Σ w d`
    pub samples: f64,
    /// `Σ w XᵀX`
    pub xtx: Mat2,
    /// `Σ w (Xᵀr − XᵀX û)` with residuals taken against the reference beta.
    pub xt_resid: Vec2,
    /// `Σ w ‖r − X û‖²`
    pub resid_sq: f64,
    /// `Σ w tr(XᵀX Cov[u])`
    pub trace_cov: f64,
    /// `Σ w E[u uᵀ]`
    pub second_moment: Mat2,
}

impl StateStats {
    fn add(&mut self, o: &StateStats) {
        self.weight += o.weight;
        self.duration_excess += o.duration_excess;
        self.duration_log_factorial += o.duration_log_factorial;
        self.samples += o.samples;
        self.xtx += o.xtx;
        self.xt_resid += o.xt_resid;
        self.resid_sq += o.resid_sq;
        self.trace_cov += o.trace_cov;
        self.second_moment += o.second_moment;
    }

    /// `Σ w ‖y − X beta − X u‖²` in expectation, for any `beta`.
    pub fn expected_sq_error(&self, beta: Vec2, beta_ref: Vec2) -> f64 {
        let delta = beta - beta_ref;
        self.resid_sq - 2.0 * delta.dot(self.xt_resid) + self.xtx.quad(delta) + self.trace_cov
    }
}

/// Aggregated E-step output for a whole corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    pub states: Vec<StateStats>,
    /// `(M+1) × M` expected transition counts; row 0 holds initial states.
    pub transitions: Vec<Vec<f64>>,
    /// The mean coefficients the residuals were taken against.
    pub beta_ref: Vec<Vec2>,
    pub loglik: f64,
}

impl SufficientStats {
    fn zeros(params: &ModelParams) -> Self {
        let m = params.num_states();
        Self {
            states: vec![StateStats::default(); m],
            transitions: vec![vec![0.0; m]; m + 1],
            beta_ref: params.states.iter().map(|s| s.beta).collect(),
            loglik: 0.0,
        }
    }

    fn merge(&mut self, o: &SufficientStats) {
        for (a, b) in self.states.iter_mut().zip(&o.states) {
            a.add(b);
        }
        for (ra, rb) in self.transitions.iter_mut().zip(&o.transitions) {
            for (a, b) in ra.iter_mut().zip(rb) {
                *a += b;
            }
        }
        self.loglik += o.loglik;
    }

    /// `Σ w Xᵀ(y − X û)` for state `k`.
    pub fn xt_y_minus_x_uhat(&self, k: usize) -> Vec2 {
        let s = &self.states[k];
        s.xt_resid + s.xtx.mul_vec(self.beta_ref[k])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EStep {
    pub stats: SufficientStats,
    pub waveform_logliks: Vec<f64>,
}

fn waveform_stats(y: &WaveformSeries, params: &ModelParams) -> Result<SufficientStats> {
    let engine = Engine::new(params, y.values())?;
    let fwd = engine.forward();
    if fwd.loglik == f64::NEG_INFINITY {
        return Err(Error::NoSupport { id: y.id().to_string() });
    }
    let bwd = engine.backward();
    let mut out = SufficientStats::zeros(params);
    out.loglik = fwd.loglik;
    out.transitions = engine.expected_transitions(&fwd, &bwd);
    engine.for_each_posterior_segment(&fwd, &bwd, |k, _s, d, lp, fit, seg| {
        let w = lp.exp();
        if w == 0.0 {
            return;
        }
        let post = &fit.posterior;
        let st = &mut out.states[k];
        st.weight += w;
        st.duration_excess += w * (d - 1) as f64;
        st.duration_log_factorial += w * ln_factorial(d - 1);
        st.samples += w * d as f64;
        st.xtx += seg.xtx.scale(w);
        st.xt_resid += (seg.xtr - seg.xtx.mul_vec(post.u_hat)).scale(w);
        st.resid_sq += w * fit.resid_sq;
        st.trace_cov += w * (seg.xtx * post.u_cov).trace();
        st.second_moment += post.second_moment.scale(w);
    });
    Ok(out)
}

/// Runs inference on every waveform and aggregates the sufficient
/// statistics. Waveforms are processed in parallel; the reduction is done
/// in corpus order so results do not depend on scheduling.
pub fn e_step(corpus: &TrainingCorpus, params: &ModelParams) -> Result<EStep> {
    params.validate()?;
    let per: Vec<SufficientStats> = corpus
        .waveforms()
        .par_iter()
        .map(|w| waveform_stats(w, params))
        .collect::<Result<_>>()?;
    let mut stats = SufficientStats::zeros(params);
    let mut waveform_logliks = Vec::with_capacity(per.len());
    for s in &per {
        stats.merge(s);
        waveform_logliks.push(s.loglik);
    }
    Ok(EStep {
        stats,
        waveform_logliks,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MStepOutcome {
    pub params: ModelParams,
    /// 1-based states whose regression could not be re-estimated.
    pub starved: Vec<usize>,
}

/// Closed-form maximizer of the expected complete-data log-likelihood.
/// `prev` supplies the structure and the fallback values for starved
/// states; `fix_psi_zero` keeps every random-effects covariance at zero
/// (plain segmental HMM).
pub fn m_step(stats: &SufficientStats, prev: &ModelParams, fix_psi_zero: bool) -> MStepOutcome {
    let m = prev.num_states();
    let mut a = prev.a.clone();
    for (row, counts) in a.iter_mut().zip(&stats.transitions).take(m) {
        let total: f64 = counts.iter().sum();
        if total > 0.0 && total.is_finite() {
            for (p, c) in row.iter_mut().zip(counts) {
                *p = c / total;
            }
        }
    }

    let mut starved = Vec::new();
    let mut states = prev.states.clone();
    let mut sq_err = 0.0;
    let mut samples = 0.0;
    for (k, (st, new)) in stats.states.iter().zip(states.iter_mut()).enumerate() {
        let beta_ref = stats.beta_ref[k];
        let scale = st.xtx.trace().powi(2);
        let delta = if st.weight > MIN_WEIGHT && st.xtx.det() > 1e-12 * scale {
            st.xtx.solve(st.xt_resid)
        } else {
            None
        };
        match delta {
            Some(delta) => new.beta = beta_ref + delta,
            None => {
                if st.weight > 0.0 {
                    log::warn!("state {} is starved of responsibility; keeping beta", k + 1);
                }
                new.beta = beta_ref;
                starved.push(k + 1);
            }
        }
        if st.weight > MIN_WEIGHT {
            new.lambda = (st.duration_excess / st.weight).max(LAMBDA_FLOOR);
            new.psi = if fix_psi_zero {
                Mat2::ZERO
            } else {
                st.second_moment.scale(1.0 / st.weight).psd_floor()
            };
        }
        sq_err += st.expected_sq_error(new.beta, beta_ref);
        samples += st.samples;
    }
    let sigma2 = if samples > 0.0 {
        (sq_err / samples).max(SIGMA2_FLOOR)
    } else {
        prev.sigma2
    };
    MStepOutcome {
        params: ModelParams {
            a,
            states,
            sigma2,
            d_max: prev.d_max,
        },
        starved,
    }
}

fn weighted_log(count: f64, p: f64) -> f64 {
    if count == 0.0 {
        0.0
    } else {
        count * p.ln()
    }
}

/// Expected complete-data log-likelihood of `params` under frozen E-step
/// statistics.
pub fn q_function(stats: &SufficientStats, params: &ModelParams) -> Result<f64> {
    let mut q = 0.0;
    for (row, counts) in params.a.iter().zip(&stats.transitions) {
        for (&p, &c) in row.iter().zip(counts) {
            q += weighted_log(c, p);
        }
    }
    let sigma2 = params.sigma2;
    for (k, (st, sp)) in stats.states.iter().zip(&params.states).enumerate() {
        q += -sp.lambda * st.weight + weighted_log(st.duration_excess, sp.lambda)
            - st.duration_log_factorial;
        q += -0.5 * st.samples * (ln_2pi() + sigma2.ln())
            - st.expected_sq_error(sp.beta, stats.beta_ref[k]) / (2.0 * sigma2);
        if st.weight > 0.0 {
            let psi = jittered_psi(&sp.psi)?;
            let inv = psi
                .inverse()
                .ok_or_else(|| Error::Numerical("psi is singular".into()))?;
            q += -st.weight * ln_2pi() - 0.5 * st.weight * psi.det().ln()
                - 0.5 * (inv * st.second_moment).trace();
        }
    }
    Ok(q)
}

/// Deterministic initialization: every waveform is cut into `M` equal spans
/// and each state is fit by pooled least squares on its spans.
pub fn initialize(corpus: &TrainingCorpus, num_states: usize, d_max: usize) -> Result<ModelParams> {
    if num_states == 0 {
        return Err(Error::Config("number of states must be >= 1".into()));
    }
    if d_max == 0 {
        return Err(Error::Config("d_max must be >= 1".into()));
    }
    let m = num_states;
    let spans = |len: usize, k: usize| (k * len / m, (k + 1) * len / m);

    let mut pooled_xtx = vec![Mat2::ZERO; m];
    let mut pooled_xty = vec![Vec2::ZERO; m];
    let mut pooled_sum = vec![0.0; m];
    let mut span_count = vec![0usize; m];
    let mut span_len_total = vec![0usize; m];
    let mut per_waveform: Vec<Vec<Vec2>> = vec![Vec::new(); m];
    for w in corpus.waveforms() {
        let y = w.values();
        for k in 0..m {
            let (lo, hi) = spans(y.len(), k);
            if hi <= lo {
                continue;
            }
            let seg = &y[lo..hi];
            let design = SegmentDesign::new(seg.len())?;
            let g = design.xtx();
            let xty = design
                .rows()
                .zip(seg)
                .fold(Vec2::ZERO, |acc, (x, &v)| acc + x.scale(v));
            pooled_xtx[k] += g;
            pooled_xty[k] += xty;
            pooled_sum[k] += seg.iter().sum::<f64>();
            span_count[k] += 1;
            span_len_total[k] += seg.len();
            if seg.len() >= 2 {
                if let Some(coef) = g.solve(xty) {
                    per_waveform[k].push(coef);
                }
            }
        }
    }

    let mut betas = Vec::with_capacity(m);
    for k in 0..m {
        if span_count[k] == 0 {
            return Err(Error::Config(format!(
                "state {} receives no samples at initialization; use fewer states",
                k + 1
            )));
        }
        let beta = pooled_xtx[k]
            .solve(pooled_xty[k])
            .filter(|_| pooled_xtx[k].det() > 1e-12 * pooled_xtx[k].trace().powi(2))
            .unwrap_or_else(|| Vec2::new(pooled_sum[k] / span_len_total[k] as f64, 0.0));
        betas.push(beta);
    }

    let mut rss = 0.0;
    let mut n = 0usize;
    for w in corpus.waveforms() {
        let y = w.values();
        for (k, beta) in betas.iter().enumerate() {
            let (lo, hi) = spans(y.len(), k);
            for (j, &v) in y[lo..hi].iter().enumerate() {
                let r = v - beta.0[0] - beta.0[1] * j as f64;
                rss += r * r;
                n += 1;
            }
        }
    }
    let sigma2 = (rss / n as f64).max(SIGMA2_FLOOR);

    let states = (0..m)
        .map(|k| {
            let beta = betas[k];
            let coefs = &per_waveform[k];
            let mut psi = Mat2::ZERO;
            if coefs.len() >= 2 {
                let nf = coefs.len() as f64;
                let mean = coefs.iter().fold(Vec2::ZERO, |a, c| a + *c).scale(1.0 / nf);
                for c in coefs {
                    let dv = *c - mean;
                    psi += dv.outer(dv);
                }
                psi = psi.scale(1.0 / nf).psd_floor();
            }
            let scale2 = beta.0[0].powi(2).max(beta.0[1].powi(2)).max(sigma2);
            let floor = if scale2 > 0.0 { 1e-6 * scale2 } else { 1e-12 };
            psi.0[0][0] = psi.0[0][0].max(floor);
            psi.0[1][1] = psi.0[1][1].max(floor);
            let mean_len = span_len_total[k] as f64 / span_count[k] as f64;
            StateParams {
                beta,
                lambda: (mean_len - 1.0).max(LAMBDA_FLOOR),
                psi,
            }
        })
        .collect();

    let params = ModelParams {
        a: ModelParams::uniform_transitions(m),
        states,
        sigma2,
        d_max,
    };
    params.validate()?;
    Ok(params)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub num_states: usize,
    /// Defaults to the length of the longest training waveform.
    pub d_max: Option<usize>,
    pub max_iter: usize,
    pub rel_tol: f64,
    /// When false, random effects are disabled (`Psi ≡ 0`): a plain
    /// segmental HMM.
    pub random_effects: bool,
}

impl FitConfig {
    pub fn new(num_states: usize) -> Self {
        Self {
            num_states,
            d_max: None,
            max_iter: 200,
            rel_tol: 1e-6,
            random_effects: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Observed-data log-likelihood of the initialization and of every
    /// subsequent iterate.
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Set when an update lowered the log-likelihood beyond the monotonicity
    /// slack. This happens only when finite precision runs out, typically
    /// with `sigma2` at its floor on noiseless data.
    pub stalled: bool,
    /// Last iterate that did not lower the log-likelihood.
    pub params: ModelParams,
}

impl FitReport {
    /// Largest relative decrease between consecutive trace entries.
    pub fn worst_relative_decrease(&self) -> f64 {
        self.loglik_trace
            .windows(2)
            .map(|w| (w[0] - w[1]) / w[0].abs().max(1.0))
            .fold(0.0, f64::max)
    }
}

/// Fits a model by EM starting from [`initialize`].
pub fn fit(corpus: &TrainingCorpus, config: &FitConfig) -> Result<FitReport> {
    let d_max = config.d_max.unwrap_or_else(|| corpus.max_len());
    let mut init = initialize(corpus, config.num_states, d_max)?;
    if !config.random_effects {
        init = init.without_random_effects();
    }
    fit_from(corpus, init, config)
}

/// Runs EM from the given starting point.
pub fn fit_from(corpus: &TrainingCorpus, init: ModelParams, config: &FitConfig) -> Result<FitReport> {
    if !(config.rel_tol >= 0.0) {
        return Err(Error::Config("tolerance must be >= 0".into()));
    }
    let mut params = init;
    let mut estep = e_step(corpus, &params)?;
    let mut trace = vec![estep.stats.loglik];
    let mut converged = false;
    let mut stalled = false;
    let mut iterations = 0;
    while iterations < config.max_iter {
        let next = m_step(&estep.stats, &params, !config.random_effects).params;
        let next_estep = e_step(corpus, &next)?;
        let prev_ll = estep.stats.loglik;
        let ll = next_estep.stats.loglik;
        iterations += 1;
        trace.push(ll);
        let rel = (ll - prev_ll) / prev_ll.abs().max(1.0);
        if rel < -MONOTONE_SLACK {
            // At the variance floor the likelihood is numerically saturated;
            // anywhere else a drop means the updates are wrong.
            debug_assert!(
                next.sigma2 <= SIGMA2_FLOOR,
                "EM monotonicity violated: {prev_ll} -> {ll}"
            );
            log::warn!(
                "EM step {iterations} lowered loglik {prev_ll} -> {ll} (sigma2 {:e}); keeping the previous iterate",
                next.sigma2
            );
            stalled = true;
            break;
        }
        params = next;
        estep = next_estep;
        log::debug!("iter {iterations}: loglik {ll}");
        if rel.abs() < config.rel_tol {
            converged = true;
            break;
        }
    }
    Ok(FitReport {
        loglik_trace: trace,
        iterations,
        converged,
        stalled,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(values: &[&[f64]]) -> TrainingCorpus {
        TrainingCorpus::new(
            values
                .iter()
                .enumerate()
                .map(|(i, v)| WaveformSeries::new(format!("w{i}"), v.to_vec()).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn stats_with(weight: f64) -> StateStats {
        StateStats {
            weight,
            ..Default::default()
        }
    }

    #[test]
    fn corpus_rejects_duplicates_and_empty() {
        assert!(TrainingCorpus::new(vec![]).is_err());
        let w = WaveformSeries::new("a", vec![1.0]).unwrap();
        assert!(TrainingCorpus::new(vec![w.clone(), w]).is_err());
    }

    #[test]
    fn lambda_update_from_two_segments() {
        let prev = initialize(&corpus(&[&[0.0, 1.0, 2.0, 3.0]]), 1, 8).unwrap();
        let mut st = stats_with(2.0);
        st.duration_excess = (3.0 - 1.0) + (5.0 - 1.0);
        st.samples = 8.0;
        let stats = SufficientStats {
            states: vec![st],
            transitions: vec![vec![2.0], vec![0.0]],
            beta_ref: vec![prev.states[0].beta],
            loglik: 0.0,
        };
        let out = m_step(&stats, &prev, false);
        assert!((out.params.states[0].lambda - 3.0).abs() < 1e-15);
        // Degenerate regression statistics leave beta untouched.
        assert_eq!(out.starved, vec![1]);
        assert_eq!(out.params.states[0].beta, prev.states[0].beta);
    }

    #[test]
    fn psi_update_single_segment() {
        let prev = initialize(&corpus(&[&[0.0, 1.0, 2.0, 3.0]]), 1, 8).unwrap();
        let mut st = stats_with(1.0);
        st.second_moment = Mat2::new(0.5, 0.1, 0.1, 0.3);
        st.xtx = SegmentDesign::new(4).unwrap().xtx();
        st.samples = 4.0;
        let stats = SufficientStats {
            states: vec![st],
            transitions: vec![vec![1.0], vec![0.0]],
            beta_ref: vec![Vec2::ZERO],
            loglik: 0.0,
        };
        let out = m_step(&stats, &prev, false);
        assert_eq!(out.params.states[0].psi, Mat2::new(0.5, 0.1, 0.1, 0.3));
        assert!(m_step(&stats, &prev, true).params.states[0].psi == Mat2::ZERO);
    }

    #[test]
    fn initialize_single_state_is_global_ols() {
        let a: Vec<f64> = (0..6).map(|j| 1.0 + 0.5 * j as f64).collect();
        let b: Vec<f64> = (0..6).map(|j| 1.0 + 0.5 * j as f64 + if j % 2 == 0 { 0.1 } else { -0.1 }).collect();
        let c = corpus(&[&a, &b]);
        let p = initialize(&c, 1, 6).unwrap();
        let design = SegmentDesign::new(6).unwrap();
        let mut xty = Vec2::ZERO;
        for (x, (&u, &v)) in design.rows().zip(a.iter().zip(&b)) {
            xty += x.scale(u + v);
        }
        let ols = design.xtx().scale(2.0).solve(xty).unwrap();
        assert!((p.states[0].beta - ols).dot(p.states[0].beta - ols) < 1e-24);
        assert!((p.states[0].lambda - 5.0).abs() < 1e-15);
    }

    #[test]
    fn initialize_identical_waveforms_floors_psi() {
        let a: Vec<f64> = (0..9).map(|j| (j as f64 * 0.7).sin()).collect();
        let c = corpus(&[&a, &a, &a]);
        let p = initialize(&c, 3, 9).unwrap();
        for s in &p.states {
            assert!(s.psi.0[0][1].abs() < 1e-20);
            assert!(s.psi.0[0][0] > 0.0 && s.psi.0[0][0] < 1e-5);
        }
    }

    #[test]
    fn initialize_rejects_empty_span() {
        let c = corpus(&[&[1.0]]);
        assert!(matches!(initialize(&c, 2, 3), Err(Error::Config(_))));
        let c = corpus(&[&[1.0], &[1.0, 2.0, 3.0]]);
        assert!(initialize(&c, 2, 3).is_ok());
    }

    #[test]
    fn max_iter_zero_returns_initialization() {
        let a: Vec<f64> = (0..12).map(|j| (j as f64 * 0.5).cos()).collect();
        let c = corpus(&[&a]);
        let mut cfg = FitConfig::new(2);
        cfg.max_iter = 0;
        let report = fit(&c, &cfg).unwrap();
        assert_eq!(report.loglik_trace.len(), 1);
        assert_eq!(report.params, initialize(&c, 2, 12).unwrap());
        assert_eq!(report.iterations, 0);
    }

    #[test]
    fn noiseless_corpus_stops_instead_of_descending() {
        let waves: Vec<Vec<f64>> = (0..6)
            .map(|i| {
                let split = 4 + i % 3;
                let mut v: Vec<f64> = (0..split).map(|j| j as f64 + 0.01 * i as f64).collect();
                v.extend((0..6).map(|j| 10.0 - 2.0 * j as f64));
                v
            })
            .collect();
        let refs: Vec<&[f64]> = waves.iter().map(|v| v.as_slice()).collect();
        let c = corpus(&refs);
        let mut cfg = FitConfig::new(2);
        cfg.max_iter = 60;
        let rep = fit(&c, &cfg).unwrap();
        let best = e_step(&c, &rep.params).unwrap().stats.loglik;
        let accepted = if rep.stalled {
            &rep.loglik_trace[..rep.loglik_trace.len() - 1]
        } else {
            &rep.loglik_trace[..]
        };
        assert_eq!(best, *accepted.last().unwrap());
        assert!(accepted.windows(2).all(|w| w[1] >= w[0] - 1e-6 * w[0].abs()));
    }
}
