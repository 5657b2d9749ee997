//! Test-time scoring of waveforms against a fitted model.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{predict_all, Engine, Segmentation};
use crate::linalg::Vec2;
use crate::model::{expected_log_prior, ln_2pi, ModelParams, SegmentDesign, WaveformSeries};

/// Per-waveform evaluation features. For a waveform without support all
/// three scores are `-inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub id: String,
    pub logp: f64,
    pub score_shape: f64,
    pub score_noise: f64,
}

impl ScoreVector {
    pub fn is_supported(&self) -> bool {
        self.logp.is_finite()
    }
}

/// Corpus-level summary of model quality on held-out waveforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_logp: f64,
    pub mean_pred_logp: f64,
    pub pred_mse: f64,
    pub seg_mse: f64,
}

/// Log-likelihood plus its split into shape and noise terms, each an exact
/// posterior expectation over segmentations and random effects.
pub fn score_waveform(y: &WaveformSeries, params: &ModelParams) -> Result<ScoreVector> {
    let engine = Engine::new(params, y.values())?;
    let fwd = engine.forward();
    if fwd.loglik == f64::NEG_INFINITY {
        log::warn!("waveform '{}' has no support under the model", y.id());
        return Ok(ScoreVector {
            id: y.id().to_string(),
            logp: f64::NEG_INFINITY,
            score_shape: f64::NEG_INFINITY,
            score_noise: f64::NEG_INFINITY,
        });
    }
    let bwd = engine.backward();
    let sigma2 = params.sigma2;
    let mut shape = 0.0;
    let mut noise = 0.0;
    let mut failure = None;
    engine.for_each_posterior_segment(&fwd, &bwd, |k, _s, d, lp, fit, seg| {
        let w = lp.exp();
        if w == 0.0 {
            return;
        }
        let post = &fit.posterior;
        match expected_log_prior(&params.states[k].psi, &post.second_moment) {
            Ok(prior) => shape += w * (engine.prep.log_dur[k][d] + prior),
            Err(e) => failure = Some(e),
        }
        let sq = fit.resid_sq + (seg.xtx * post.u_cov).trace();
        noise += w * (-0.5 * d as f64 * (ln_2pi() + sigma2.ln()) - sq / (2.0 * sigma2));
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let counts = engine.expected_transitions(&fwd, &bwd);
    for (row, log_row) in counts.iter().zip(&engine.prep.log_a) {
        for (&c, &la) in row.iter().zip(log_row) {
            if c > 0.0 {
                shape += c * la;
            }
        }
    }
    Ok(ScoreVector {
        id: y.id().to_string(),
        logp: fwd.loglik,
        score_shape: shape,
        score_noise: noise,
    })
}

/// Least-squares line through a segment on its local clock. A single
/// sample fixes the intercept and pins the slope to zero.
pub fn ols_line(seg: &[f64]) -> Vec2 {
    if seg.len() == 1 {
        return Vec2::new(seg[0], 0.0);
    }
    let design = SegmentDesign::new(seg.len()).expect("non-empty segment");
    let xty = design
        .rows()
        .zip(seg)
        .fold(Vec2::ZERO, |acc, (x, &v)| acc + x.scale(v));
    design
        .xtx()
        .solve(xty)
        .expect("design of two or more samples is invertible")
}

/// Viterbi segmentation with a per-segment least-squares refit.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationFit {
    pub segmentation: Segmentation,
    /// Refit value at every time step.
    pub fitted: Vec<f64>,
    /// Mean squared residual over all samples.
    pub mse: f64,
}

pub fn segmentation_fit(y: &WaveformSeries, params: &ModelParams) -> Result<SegmentationFit> {
    let engine = Engine::new(params, y.values())?;
    let segmentation = engine.viterbi(y.id())?;
    let values = y.values();
    let mut fitted = Vec::with_capacity(values.len());
    for seg in &segmentation.segments {
        let lo = seg.start - 1;
        let piece = &values[lo..lo + seg.duration];
        let line = ols_line(piece);
        fitted.extend((0..seg.duration).map(|j| line.0[0] + line.0[1] * j as f64));
    }
    let mse = values
        .iter()
        .zip(&fitted)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / values.len() as f64;
    Ok(SegmentationFit {
        segmentation,
        fitted,
        mse,
    })
}

pub fn segmentation_error(y: &WaveformSeries, params: &ModelParams) -> Result<f64> {
    Ok(segmentation_fit(y, params)?.mse)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionReport {
    pub mean_log_density: f64,
    pub mse: f64,
}

/// One-step-ahead predictive log-density and squared forecast error,
/// averaged over `t = 1..=T`.
pub fn prediction_report(y: &WaveformSeries, params: &ModelParams) -> Result<PredictionReport> {
    if y.len() < 2 {
        return Err(Error::Domain(format!(
            "waveform '{}' needs at least 2 samples for prediction",
            y.id()
        )));
    }
    let p = predict_all(y, params)?;
    let n = y.len() as f64;
    let mse = y
        .values()
        .iter()
        .zip(&p.forecasts)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / n;
    Ok(PredictionReport {
        mean_log_density: p.log_densities.iter().sum::<f64>() / n,
        mse,
    })
}

/// Averages every metric over a set of held-out waveforms.
pub fn evaluate(waveforms: &[WaveformSeries], params: &ModelParams) -> Result<EvalReport> {
    if waveforms.is_empty() {
        return Err(Error::Data("no waveforms to evaluate".into()));
    }
    let rows: Vec<(f64, PredictionReport, f64)> = waveforms
        .par_iter()
        .map(|w| {
            let logp = crate::inference::loglik(w, params)?;
            if logp == f64::NEG_INFINITY {
                return Err(Error::NoSupport { id: w.id().to_string() });
            }
            Ok((logp, prediction_report(w, params)?, segmentation_error(w, params)?))
        })
        .collect::<Result<_>>()?;
    let n = rows.len() as f64;
    Ok(EvalReport {
        mean_logp: rows.iter().map(|r| r.0).sum::<f64>() / n,
        mean_pred_logp: rows.iter().map(|r| r.1.mean_log_density).sum::<f64>() / n,
        pred_mse: rows.iter().map(|r| r.1.mse).sum::<f64>() / n,
        seg_mse: rows.iter().map(|r| r.2).sum::<f64>() / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Mat2;
    use crate::model::StateParams;

    fn two_state() -> ModelParams {
        ModelParams {
            a: ModelParams::uniform_transitions(2),
            states: vec![
                StateParams {
                    beta: Vec2::new(0.0, 1.0),
                    lambda: 4.0,
                    psi: Mat2::diag(0.01, 0.001),
                },
                StateParams {
                    beta: Vec2::new(5.0, -1.0),
                    lambda: 4.0,
                    psi: Mat2::diag(0.01, 0.001),
                },
            ],
            sigma2: 1e-4,
            d_max: 12,
        }
    }

    #[test]
    fn ols_line_cases() {
        assert_eq!(ols_line(&[3.0]), Vec2::new(3.0, 0.0));
        let l = ols_line(&[1.0, 3.0, 5.0]);
        assert!((l.0[0] - 1.0).abs() < 1e-14 && (l.0[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn noiseless_piecewise_linear_has_zero_error() {
        let mut v: Vec<f64> = (0..5).map(|j| j as f64).collect();
        v.extend((0..5).map(|j| 5.0 - j as f64));
        let y = WaveformSeries::new("pw", v).unwrap();
        let fit = segmentation_fit(&y, &two_state()).unwrap();
        assert_eq!(fit.segmentation.segments[1].start, 6);
        assert!(fit.mse < 1e-18, "mse={}", fit.mse);
    }

    #[test]
    fn error_translation_invariant() {
        let v: Vec<f64> = vec![0.1, 1.2, 1.9, 3.2, 4.0, 4.8, 4.1, 2.9, 2.2, 0.8];
        let y = WaveformSeries::new("a", v.clone()).unwrap();
        let c = 7.5;
        let y2 = WaveformSeries::new("b", v.iter().map(|x| x + c).collect()).unwrap();
        let mut p2 = two_state();
        p2.states.iter_mut().for_each(|s| s.beta.0[0] += c);
        let e1 = segmentation_error(&y, &two_state()).unwrap();
        let e2 = segmentation_error(&y2, &p2).unwrap();
        assert!((e1 - e2).abs() < 1e-9);
    }

    #[test]
    fn duplicate_waveforms_score_identically() {
        let v = vec![0.2, 0.9, 2.1, 2.8, 4.2, 3.9, 3.1, 2.0];
        let a = score_waveform(&WaveformSeries::new("x", v.clone()).unwrap(), &two_state()).unwrap();
        let b = score_waveform(&WaveformSeries::new("x", v).unwrap(), &two_state()).unwrap();
        assert_eq!(a, b);
        assert!(a.is_supported());
    }

    #[test]
    fn unsupported_scores_are_neg_inf() {
        let mut p = two_state();
        p.d_max = 2;
        let y = WaveformSeries::new("long", vec![0.0; 9]).unwrap();
        let s = score_waveform(&y, &p).unwrap();
        assert!(!s.is_supported());
        assert_eq!(s.score_noise, f64::NEG_INFINITY);
    }

    #[test]
    fn prediction_needs_two_samples() {
        let y = WaveformSeries::new("s", vec![1.0]).unwrap();
        assert!(matches!(prediction_report(&y, &two_state()), Err(Error::Domain(_))));
    }
}
