//! Explicit-duration forward-backward, Viterbi, segment posteriors and
//! prefix likelihoods, all in the natural-log domain.
//!
//! Time indices follow the usual convention: `alpha[t]` refers to the
//! prefix `y_{1:t}`, and a segment starting at `t + 1` is preceded by
//! `alpha_star[t]`. Internally samples are 0-based, so the segment with
//! 1-based start `s` and duration `d` covers `values[s-1 .. s-1+d]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vec2;
use crate::model::{
    duration_table, fit_segment, ModelParams, RandomEffectPosterior, SegmentFit, SegmentStats,
    WaveformSeries,
};

#[inline]
pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

pub(crate) fn log_sum_exp<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let vals: Vec<f64> = values.into_iter().collect();
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + vals.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn safe_ln(p: f64) -> f64 {
    if p > 0.0 {
        p.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Log-domain tables of the forward-backward recursions.
///
/// `log_alpha[t-1][k]` holds `log α_t(k)` for `t = 1..=T`;
/// `log_alpha_star[t][k]` holds `log α*_t(k)` for `t = 0..=T`;
/// `log_beta[t][k]` holds `log β_t(k)` for `t = 0..=T`;
/// `log_beta_star[t][k]` holds `log β*_t(k)` for `t = 0..T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardBackwardTables {
    pub log_alpha: Vec<Vec<f64>>,
    pub log_alpha_star: Vec<Vec<f64>>,
    pub log_beta: Vec<Vec<f64>>,
    pub log_beta_star: Vec<Vec<f64>>,
    pub loglik: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTables {
    pub log_alpha: Vec<Vec<f64>>,
    pub log_alpha_star: Vec<Vec<f64>>,
    pub loglik: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackwardTables {
    pub log_beta: Vec<Vec<f64>>,
    pub log_beta_star: Vec<Vec<f64>>,
    pub loglik: f64,
}

/// One segment of a segmentation. `state` and `start` are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub state: usize,
    pub start: usize,
    pub duration: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub segments: Vec<Segment>,
    pub log_joint: f64,
}

impl Segmentation {
    /// Checks that the segments tile `1..=len` with strictly increasing states.
    pub fn validate(&self, len: usize, num_states: usize) -> Result<()> {
        let mut next = 1;
        let mut prev_state = 0;
        for seg in &self.segments {
            if seg.start != next || seg.duration == 0 {
                return Err(Error::Data(format!(
                    "segments do not tile the waveform at t={next}"
                )));
            }
            if seg.state <= prev_state || seg.state > num_states {
                return Err(Error::Data("segment states are not left-to-right".into()));
            }
            prev_state = seg.state;
            next += seg.duration;
        }
        if next != len + 1 {
            return Err(Error::Data(format!(
                "segments cover 1..{} but waveform has length {len}",
                next - 1
            )));
        }
        Ok(())
    }

    /// Per-sample state labels (1-based).
    pub fn state_labels(&self) -> Vec<usize> {
        self.segments
            .iter()
            .flat_map(|s| std::iter::repeat_n(s.state, s.duration))
            .collect()
    }
}

/// Posterior probability that a state occupies exactly one segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentPosteriorEntry {
    pub segment: Segment,
    pub log_prob: f64,
    pub effect: RandomEffectPosterior,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentPosterior {
    /// Entries with nonzero posterior probability.
    pub entries: Vec<SegmentPosteriorEntry>,
    /// `(M+1) × M` expected transition counts; row 0 holds the expected
    /// initial-state indicators.
    pub expected_transitions: Vec<Vec<f64>>,
    pub loglik: f64,
}

impl SegmentPosterior {
    /// Expected number of visits to each state (each in `[0, 1]`).
    pub fn expected_visits(&self, num_states: usize) -> Vec<f64> {
        let mut out = vec![0.0; num_states];
        for e in &self.entries {
            out[e.segment.state - 1] += e.log_prob.exp();
        }
        out
    }
}

/// Model quantities reused across every recursion on one waveform.
pub(crate) struct Prepared<'m> {
    pub params: &'m ModelParams,
    pub m: usize,
    /// `(M+1) × M`, row 0 initial.
    pub log_a: Vec<Vec<f64>>,
    /// Per state, `log p(d)` for `d = 0..=d_max` (index 0 is −∞).
    pub log_dur: Vec<Vec<f64>>,
    /// Per state, `log Σ_{d'=d}^{d_max} p(d')` for `d = 1..=d_max`.
    pub log_surv: Vec<Vec<f64>>,
}

impl<'m> Prepared<'m> {
    pub fn new(params: &'m ModelParams) -> Result<Self> {
        params.validate()?;
        let m = params.num_states();
        let log_a = params
            .a
            .iter()
            .map(|row| row.iter().map(|&p| safe_ln(p)).collect())
            .collect();
        let log_dur: Vec<Vec<f64>> = params
            .states
            .iter()
            .map(|s| duration_table(s.lambda, params.d_max))
            .collect();
        let log_surv = log_dur
            .iter()
            .map(|tab| {
                let mut surv = vec![f64::NEG_INFINITY; params.d_max + 2];
                for d in (1..=params.d_max).rev() {
                    surv[d] = log_add(surv[d + 1], tab[d]);
                }
                surv
            })
            .collect();
        Ok(Self {
            params,
            m,
            log_a,
            log_dur,
            log_surv,
        })
    }
}

/// Segment log-likelihoods for every `(state, start, duration)` of one
/// waveform, filled by extending each segment one sample at a time.
pub(crate) struct SegmentTable {
    len: usize,
    d_max: usize,
    values: Vec<f64>,
}

impl SegmentTable {
    pub fn new(prep: &Prepared<'_>, y: &[f64]) -> Self {
        let len = y.len();
        let d_max = prep.params.d_max.min(len);
        let mut values = vec![f64::NEG_INFINITY; prep.m * len * d_max];
        for (k, state) in prep.params.states.iter().enumerate() {
            for s in 0..len {
                let mut stats = SegmentStats::new();
                let limit = d_max.min(len - s);
                for d in 1..=limit {
                    stats.push(y[s + d - 1], state.beta);
                    let fit = fit_segment(&stats, &state.psi, prep.params.sigma2);
                    values[(k * len + s) * d_max + d - 1] = fit.loglik;
                }
            }
        }
        Self { len, d_max, values }
    }

    /// Log-likelihood of the segment of state `k` starting at 0-based
    /// sample `s` with duration `d`.
    #[inline]
    pub fn get(&self, k: usize, s: usize, d: usize) -> f64 {
        if d == 0 {
            return 0.0;
        }
        self.values[(k * self.len + s) * self.d_max + d - 1]
    }

    pub fn d_max(&self) -> usize {
        self.d_max
    }
}

pub(crate) struct Engine<'m, 'y> {
    pub prep: Prepared<'m>,
    pub y: &'y [f64],
    pub table: SegmentTable,
}

impl<'m, 'y> Engine<'m, 'y> {
    pub fn new(params: &'m ModelParams, y: &'y [f64]) -> Result<Self> {
        let prep = Prepared::new(params)?;
        let table = SegmentTable::new(&prep, y);
        Ok(Self { prep, y, table })
    }

    fn len(&self) -> usize {
        self.y.len()
    }

    pub fn forward(&self) -> ForwardTables {
        let (t_len, m, dm) = (self.len(), self.prep.m, self.table.d_max());
        let mut log_alpha = vec![vec![f64::NEG_INFINITY; m]; t_len];
        let mut log_alpha_star = vec![vec![f64::NEG_INFINITY; m]; t_len + 1];
        log_alpha_star[0].clone_from(&self.prep.log_a[0]);
        for t in 1..=t_len {
            for k in 0..m {
                let mut acc = f64::NEG_INFINITY;
                for d in 1..=dm.min(t) {
                    let start = log_alpha_star[t - d][k];
                    if start == f64::NEG_INFINITY {
                        continue;
                    }
                    acc = log_add(
                        acc,
                        start + self.prep.log_dur[k][d] + self.table.get(k, t - d, d),
                    );
                }
                log_alpha[t - 1][k] = acc;
            }
            if t < t_len {
                for k in 0..m {
                    let mut acc = f64::NEG_INFINITY;
                    for l in 0..k {
                        acc = log_add(acc, log_alpha[t - 1][l] + self.prep.log_a[l + 1][k]);
                    }
                    log_alpha_star[t][k] = acc;
                }
            }
        }
        let loglik = log_sum_exp(log_alpha[t_len - 1].iter().copied());
        ForwardTables {
            log_alpha,
            log_alpha_star,
            loglik,
        }
    }

    pub fn backward(&self) -> BackwardTables {
        let (t_len, m, dm) = (self.len(), self.prep.m, self.table.d_max());
        let mut log_beta = vec![vec![f64::NEG_INFINITY; m]; t_len + 1];
        let mut log_beta_star = vec![vec![f64::NEG_INFINITY; m]; t_len];
        log_beta[t_len] = vec![0.0; m];
        for t in (0..t_len).rev() {
            for k in 0..m {
                let mut acc = f64::NEG_INFINITY;
                for d in 1..=dm.min(t_len - t) {
                    let rest = log_beta[t + d][k];
                    if rest == f64::NEG_INFINITY {
                        continue;
                    }
                    acc = log_add(acc, self.prep.log_dur[k][d] + self.table.get(k, t, d) + rest);
                }
                log_beta_star[t][k] = acc;
            }
            if t > 0 {
                for k in 0..m {
                    let mut acc = f64::NEG_INFINITY;
                    for l in (k + 1)..m {
                        acc = log_add(acc, self.prep.log_a[k + 1][l] + log_beta_star[t][l]);
                    }
                    log_beta[t][k] = acc;
                }
            }
        }
        let loglik = log_sum_exp((0..m).map(|k| self.prep.log_a[0][k] + log_beta_star[0][k]));
        BackwardTables {
            log_beta,
            log_beta_star,
            loglik,
        }
    }

    pub fn viterbi(&self, id: &str) -> Result<Segmentation> {
        let (t_len, m, dm) = (self.len(), self.prep.m, self.table.d_max());
        let neg = f64::NEG_INFINITY;
        // delta[t][k]: best score of a path whose segment in state k ends at t.
        let mut delta = vec![vec![neg; m]; t_len + 1];
        let mut delta_dur = vec![vec![0usize; m]; t_len + 1];
        // delta_star[t][k]: best score with state k starting at t+1.
        let mut delta_star = vec![vec![neg; m]; t_len + 1];
        let mut delta_prev = vec![vec![usize::MAX; m]; t_len + 1];
        delta_star[0].clone_from(&self.prep.log_a[0]);
        for t in 1..=t_len {
            for k in 0..m {
                let (mut best, mut best_d) = (neg, 0);
                for d in 1..=dm.min(t) {
                    let start = delta_star[t - d][k];
                    if start == neg {
                        continue;
                    }
                    let v = start + self.prep.log_dur[k][d] + self.table.get(k, t - d, d);
                    if v > best {
                        best = v;
                        best_d = d;
                    }
                }
                delta[t][k] = best;
                delta_dur[t][k] = best_d;
            }
            if t < t_len {
                for k in 0..m {
                    let (mut best, mut arg) = (neg, usize::MAX);
                    for l in 0..k {
                        let v = delta[t][l] + self.prep.log_a[l + 1][k];
                        if v > best {
                            best = v;
                            arg = l;
                        }
                    }
                    delta_star[t][k] = best;
                    delta_prev[t][k] = arg;
                }
            }
        }
        // Final state: maximize, ties to the shorter final duration, then
        // the lower state index.
        let mut end: Option<(f64, usize, usize)> = None;
        for k in 0..m {
            let (v, d) = (delta[t_len][k], delta_dur[t_len][k]);
            if v == neg {
                continue;
            }
            let better = match end {
                None => true,
                Some((bv, bd, _)) => v > bv || (v == bv && d < bd),
            };
            if better {
                end = Some((v, d, k));
            }
        }
        let (log_joint, _, mut k) = end.ok_or_else(|| Error::NoSupport { id: id.to_string() })?;
        let mut segments = Vec::new();
        let mut t = t_len;
        loop {
            let d = delta_dur[t][k];
            let start = t - d;
            segments.push(Segment {
                state: k + 1,
                start: start + 1,
                duration: d,
            });
            if start == 0 {
                break;
            }
            k = delta_prev[start][k];
            t = start;
        }
        segments.reverse();
        Ok(Segmentation {
            segments,
            log_joint,
        })
    }

    /// Visits every supported `(state, start, duration)` with its log
    /// posterior and the random-effect fit of that segment.
    pub fn for_each_posterior_segment<F>(
        &self,
        fwd: &ForwardTables,
        bwd: &BackwardTables,
        mut visit: F,
    ) where
        F: FnMut(usize, usize, usize, f64, &SegmentFit, &SegmentStats),
    {
        let (t_len, dm) = (self.len(), self.table.d_max());
        let loglik = fwd.loglik;
        for (k, state) in self.prep.params.states.iter().enumerate() {
            for s in 0..t_len {
                let head = fwd.log_alpha_star[s][k];
                if head == f64::NEG_INFINITY {
                    continue;
                }
                let mut stats = SegmentStats::new();
                for d in 1..=dm.min(t_len - s) {
                    stats.push(self.y[s + d - 1], state.beta);
                    let tail = bwd.log_beta[s + d][k];
                    if tail == f64::NEG_INFINITY {
                        continue;
                    }
                    let fit = fit_segment(&stats, &state.psi, self.prep.params.sigma2);
                    let lp = head + self.prep.log_dur[k][d] + fit.loglik + tail - loglik;
                    if lp == f64::NEG_INFINITY {
                        continue;
                    }
                    visit(k, s, d, lp, &fit, &stats);
                }
            }
        }
    }

    pub fn expected_transitions(&self, fwd: &ForwardTables, bwd: &BackwardTables) -> Vec<Vec<f64>> {
        let (t_len, m) = (self.len(), self.prep.m);
        let mut out = vec![vec![0.0; m]; m + 1];
        for k in 0..m {
            out[0][k] = (self.prep.log_a[0][k] + bwd.log_beta_star[0][k] - fwd.loglik).exp();
        }
        for l in 0..m {
            for k in (l + 1)..m {
                let la = self.prep.log_a[l + 1][k];
                if la == f64::NEG_INFINITY {
                    continue;
                }
                let terms = (1..t_len)
                    .map(|t| fwd.log_alpha[t - 1][l] + la + bwd.log_beta_star[t][k] - fwd.loglik);
                out[l + 1][k] = log_sum_exp(terms).exp();
            }
        }
        out
    }

    /// `log p(y_{1:t})` for every `t = 0..=T`, letting the last segment run
    /// past `t`.
    pub fn prefix_logliks(&self, fwd: &ForwardTables) -> Vec<f64> {
        let (t_len, m, dm) = (self.len(), self.prep.m, self.table.d_max());
        let mut out = vec![f64::NEG_INFINITY; t_len + 1];
        out[0] = 0.0;
        for (t, slot) in out.iter_mut().enumerate().skip(1) {
            let mut acc = f64::NEG_INFINITY;
            for k in 0..m {
                for len in 1..=dm.min(t) {
                    let s = t - len;
                    let head = fwd.log_alpha_star[s][k];
                    if head == f64::NEG_INFINITY {
                        continue;
                    }
                    acc = log_add(acc, head + self.prep.log_surv[k][len] + self.table.get(k, s, len));
                }
            }
            *slot = acc;
        }
        out
    }

    /// One-step-ahead forecasts for `t = 1..=T` from the hypotheses active
    /// at `t` given `y_{1:t-1}`.
    pub fn forecasts(&self, fwd: &ForwardTables) -> Vec<f64> {
        let (t_len, dm) = (self.len(), self.table.d_max());
        // Hypothesis (k, s, m): state k started at 0-based s and has already
        // emitted m = t - 1 - s samples; its duration is at least m + 1.
        let log_weight = |k: usize, s: usize, m: usize| -> f64 {
            let head = fwd.log_alpha_star[s][k];
            if head == f64::NEG_INFINITY {
                return head;
            }
            head + self.prep.log_surv[k][m + 1] + self.table.get(k, s, m)
        };
        let mut log_norm = vec![f64::NEG_INFINITY; t_len];
        for (t0, norm) in log_norm.iter_mut().enumerate() {
            for k in 0..self.prep.m {
                for m in 0..dm.min(t0 + 1) {
                    *norm = log_add(*norm, log_weight(k, t0 - m, m));
                }
            }
        }
        let mut out = vec![0.0; t_len];
        for (k, state) in self.prep.params.states.iter().enumerate() {
            for s in 0..t_len {
                if fwd.log_alpha_star[s][k] == f64::NEG_INFINITY {
                    continue;
                }
                let mut stats = SegmentStats::new();
                for m in 0..dm.min(t_len - s) {
                    if m > 0 {
                        stats.push(self.y[s + m - 1], state.beta);
                    }
                    let t0 = s + m;
                    let lw = log_weight(k, s, m);
                    if lw == f64::NEG_INFINITY || log_norm[t0] == f64::NEG_INFINITY {
                        continue;
                    }
                    let u_hat = if m == 0 {
                        Vec2::ZERO
                    } else {
                        fit_segment(&stats, &state.psi, self.prep.params.sigma2)
                            .posterior
                            .u_hat
                    };
                    let x = Vec2::new(1.0, m as f64);
                    out[t0] += (lw - log_norm[t0]).exp() * x.dot(state.beta + u_hat);
                }
            }
        }
        out
    }
}

pub fn forward(y: &WaveformSeries, params: &ModelParams) -> Result<ForwardTables> {
    Ok(Engine::new(params, y.values())?.forward())
}

pub fn backward(y: &WaveformSeries, params: &ModelParams) -> Result<BackwardTables> {
    Ok(Engine::new(params, y.values())?.backward())
}

pub fn forward_backward(y: &WaveformSeries, params: &ModelParams) -> Result<ForwardBackwardTables> {
    let engine = Engine::new(params, y.values())?;
    let f = engine.forward();
    let b = engine.backward();
    Ok(ForwardBackwardTables {
        log_alpha: f.log_alpha,
        log_alpha_star: f.log_alpha_star,
        log_beta: b.log_beta,
        log_beta_star: b.log_beta_star,
        loglik: f.loglik,
    })
}

/// Total log-likelihood `log p(y | θ)`; `-inf` when no segmentation has
/// support.
pub fn loglik(y: &WaveformSeries, params: &ModelParams) -> Result<f64> {
    Ok(forward(y, params)?.loglik)
}

/// Most likely segmentation with random effects marginalized out.
pub fn viterbi(y: &WaveformSeries, params: &ModelParams) -> Result<Segmentation> {
    Engine::new(params, y.values())?.viterbi(y.id())
}

/// Posterior over segment occupancy, with the random-effect posterior of
/// every supported segment and expected transition counts.
pub fn segment_posteriors(y: &WaveformSeries, params: &ModelParams) -> Result<SegmentPosterior> {
    let engine = Engine::new(params, y.values())?;
    let fwd = engine.forward();
    if fwd.loglik == f64::NEG_INFINITY {
        return Err(Error::NoSupport { id: y.id().to_string() });
    }
    let bwd = engine.backward();
    let mut entries = Vec::new();
    engine.for_each_posterior_segment(&fwd, &bwd, |k, s, d, lp, fit, _| {
        entries.push(SegmentPosteriorEntry {
            segment: Segment {
                state: k + 1,
                start: s + 1,
                duration: d,
            },
            log_prob: lp,
            effect: fit.posterior,
        });
    });
    let expected_transitions = engine.expected_transitions(&fwd, &bwd);
    Ok(SegmentPosterior {
        entries,
        expected_transitions,
        loglik: fwd.loglik,
    })
}

/// `log p(y_{1:t} | θ)` where the final segment may continue past `t`.
pub fn prefix_loglik(y: &WaveformSeries, params: &ModelParams, t: usize) -> Result<f64> {
    if t > y.len() {
        return Err(Error::Domain(format!("t={t} exceeds waveform length {}", y.len())));
    }
    let engine = Engine::new(params, y.values())?;
    let fwd = engine.forward();
    Ok(engine.prefix_logliks(&fwd)[t])
}

/// One-step-ahead prediction at every time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    /// Forecast of `y_t` from `y_{1:t-1}`, `t = 1..=T`.
    pub forecasts: Vec<f64>,
    /// `log p(y_t | y_{1:t-1})`, `t = 1..=T`.
    pub log_densities: Vec<f64>,
    /// `log p(y_{1:t})`, `t = 0..=T`.
    pub prefix: Vec<f64>,
}

pub fn predict_all(y: &WaveformSeries, params: &ModelParams) -> Result<Predictions> {
    let engine = Engine::new(params, y.values())?;
    let fwd = engine.forward();
    let prefix = engine.prefix_logliks(&fwd);
    if let Some(pos) = prefix.iter().position(|v| *v == f64::NEG_INFINITY) {
        log::debug!("waveform '{}' loses support at t={pos}", y.id());
        return Err(Error::NoSupport { id: y.id().to_string() });
    }
    let forecasts = engine.forecasts(&fwd);
    let log_densities = prefix.windows(2).map(|w| w[1] - w[0]).collect();
    Ok(Predictions {
        forecasts,
        log_densities,
        prefix,
    })
}

/// Point forecast of `y_t` and the predictive log-density of the observed
/// `y_t`, given `y_{1:t-1}`.
pub fn predict_next(y: &WaveformSeries, params: &ModelParams, t: usize) -> Result<(f64, f64)> {
    if t == 0 || t > y.len() {
        return Err(Error::Domain(format!("t must be in 1..={}, got {t}", y.len())));
    }
    let p = predict_all(y, params)?;
    Ok((p.forecasts[t - 1], p.log_densities[t - 1]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Mat2;
    use crate::model::{duration_log_pmf, segment_loglik_fast, StateParams};

    fn one_state(d_max: usize) -> ModelParams {
        ModelParams {
            a: ModelParams::uniform_transitions(1),
            states: vec![StateParams {
                beta: Vec2::new(0.5, 0.2),
                lambda: 1.5,
                psi: Mat2::new(0.3, 0.05, 0.05, 0.1),
            }],
            sigma2: 0.4,
            d_max,
        }
    }

    #[test]
    fn log_add_handles_infinities() {
        let n = f64::NEG_INFINITY;
        assert_eq!(log_add(n, n), n);
        assert_eq!(log_add(n, 1.0), 1.0);
        assert!((log_add(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(log_sum_exp(Vec::<f64>::new()), n);
    }

    #[test]
    fn single_state_loglik() {
        let p = one_state(10);
        let y = WaveformSeries::new("w", vec![0.4, 0.9, 0.7, 1.5]).unwrap();
        let ll = loglik(&y, &p).unwrap();
        let expected = duration_log_pmf(4, 1.5).unwrap()
            + segment_loglik_fast(y.values(), &p.states[0], p.sigma2).unwrap();
        assert!((ll - expected).abs() < 1e-12);
        let seg = viterbi(&y, &p).unwrap();
        assert_eq!(
            seg.segments,
            vec![Segment {
                state: 1,
                start: 1,
                duration: 4
            }]
        );
        let post = segment_posteriors(&y, &p).unwrap();
        assert_eq!(post.entries.len(), 1);
        assert!(post.entries[0].log_prob.abs() < 1e-12);
    }

    #[test]
    fn unsupported_waveform_yields_neg_inf() {
        let p = one_state(3);
        let y = WaveformSeries::new("long", vec![0.0; 5]).unwrap();
        assert_eq!(loglik(&y, &p).unwrap(), f64::NEG_INFINITY);
        assert!(matches!(viterbi(&y, &p), Err(Error::NoSupport { .. })));
        assert!(matches!(segment_posteriors(&y, &p), Err(Error::NoSupport { .. })));
    }

    #[test]
    fn backward_terminal_row_is_zero() {
        let p = one_state(4);
        let y = WaveformSeries::new("w", vec![0.1]).unwrap();
        let b = backward(&y, &p).unwrap();
        assert_eq!(b.log_beta[1], vec![0.0]);
        let f = forward(&y, &p).unwrap();
        assert!((b.loglik - f.loglik).abs() < 1e-12);
    }

    #[test]
    fn prefix_at_zero_and_one() {
        let p = one_state(5);
        let y = WaveformSeries::new("w", vec![0.8, 0.3]).unwrap();
        assert_eq!(prefix_loglik(&y, &p, 0).unwrap(), 0.0);
        let st = &p.states[0];
        let var = st.psi.0[0][0] + p.sigma2;
        let dens = -0.5 * (2.0 * std::f64::consts::PI * var).ln()
            - (0.8 - st.beta.0[0]).powi(2) / (2.0 * var);
        let surv = log_sum_exp((1..=5).map(|d| duration_log_pmf(d, st.lambda).unwrap()));
        assert!((prefix_loglik(&y, &p, 1).unwrap() - (surv + dens)).abs() < 1e-12);
        assert!(prefix_loglik(&y, &p, 3).is_err());
    }

    #[test]
    fn segmentation_validation() {
        let seg = Segmentation {
            segments: vec![
                Segment { state: 1, start: 1, duration: 2 },
                Segment { state: 3, start: 3, duration: 1 },
            ],
            log_joint: 0.0,
        };
        seg.validate(3, 3).unwrap();
        assert!(seg.validate(4, 3).is_err());
        assert!(seg.validate(3, 2).is_err());
        assert_eq!(seg.state_labels(), vec![1, 1, 3]);
    }
}
