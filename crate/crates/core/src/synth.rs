//! Exact sampler for the generative model, used to build benchmark corpora
//! with known ground truth.
//!
//! Every waveform draws from its own ChaCha stream: the root seed selects
//! the key and the waveform index selects the stream, so corpus contents do
//! not depend on sampling order or thread count.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::Segment;
use crate::learning::TrainingCorpus;
use crate::linalg::{Mat2, Vec2};
use crate::model::{ModelParams, StateParams, WaveformSeries};

const MAX_DURATION_REJECTIONS: usize = 100_000;

/// Random effect drawn for one visited state (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectDraw {
    pub state: usize,
    pub u0: f64,
    pub u1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub id: String,
    pub segments: Vec<Segment>,
    pub u: Vec<EffectDraw>,
    /// Set when the final segment was cut short by the length cap.
    #[serde(default)]
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub params: ModelParams,
    pub n: usize,
    pub seed: u64,
    pub t_cap: Option<usize>,
}

pub fn waveform_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn choose<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> Option<usize> {
    let total: f64 = probs.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let mut u = rng.gen::<f64>() * total;
    let mut last = None;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        last = Some(i);
        if u < p {
            return Some(i);
        }
        u -= p;
    }
    last
}

fn sample_duration<R: Rng + ?Sized>(rng: &mut R, lambda: f64, d_max: usize) -> Result<usize> {
    let poisson = Poisson::new(lambda)
        .map_err(|e| Error::Config(format!("invalid duration rate {lambda}: {e}")))?;
    for _ in 0..MAX_DURATION_REJECTIONS {
        let d = 1 + poisson.sample(rng) as usize;
        if d <= d_max {
            return Ok(d);
        }
    }
    Err(Error::Config(format!(
        "durations with rate {lambda} almost never fit within d_max={d_max}"
    )))
}

fn sample_effect<R: Rng + ?Sized>(rng: &mut R, psi: &Mat2) -> Vec2 {
    let p = psi.symmetrize().0;
    let l00 = p[0][0].max(0.0).sqrt();
    let (l10, l11) = if l00 > 0.0 {
        let l10 = p[1][0] / l00;
        (l10, (p[1][1] - l10 * l10).max(0.0).sqrt())
    } else {
        (0.0, p[1][1].max(0.0).sqrt())
    };
    let z0: f64 = rng.sample(StandardNormal);
    let z1: f64 = rng.sample(StandardNormal);
    Vec2::new(l00 * z0, l10 * z0 + l11 * z1)
}

/// Draws one waveform and its full ground truth. `sigma2 = 0` is allowed
/// and yields noiseless segments.
pub fn sample_waveform<R: Rng + ?Sized>(
    params: &ModelParams,
    id: &str,
    rng: &mut R,
    t_cap: Option<usize>,
) -> Result<(WaveformSeries, GroundTruth)> {
    params.validate_structure()?;
    if !(params.sigma2 >= 0.0 && params.sigma2.is_finite()) {
        return Err(Error::Config("sigma2 must be >= 0".into()));
    }
    if t_cap == Some(0) {
        return Err(Error::Config("length cap must be >= 1".into()));
    }
    let cap = t_cap.unwrap_or(usize::MAX);
    let sigma = params.sigma2.sqrt();
    let mut values = Vec::new();
    let mut segments = Vec::new();
    let mut effects = Vec::new();
    let mut truncated = false;
    let mut state = choose(rng, &params.a[0]);
    while let Some(k) = state {
        let StateParams { beta, lambda, psi } = params.states[k];
        let mut d = sample_duration(rng, lambda, params.d_max)?;
        let u = sample_effect(rng, &psi);
        let coef = beta + u;
        if values.len() + d > cap {
            d = cap - values.len();
            truncated = true;
        }
        segments.push(Segment {
            state: k + 1,
            start: values.len() + 1,
            duration: d,
        });
        effects.push(EffectDraw {
            state: k + 1,
            u0: u.0[0],
            u1: u.0[1],
        });
        for j in 0..d {
            let e: f64 = if sigma > 0.0 {
                sigma * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            values.push(coef.0[0] + coef.0[1] * j as f64 + e);
        }
        if truncated || values.len() >= cap {
            break;
        }
        state = choose(rng, &params.a[k + 1]);
    }
    let waveform = WaveformSeries::new(id, values)?;
    Ok((
        waveform,
        GroundTruth {
            id: id.to_string(),
            segments,
            u: effects,
            truncated,
        },
    ))
}

pub fn waveform_id(index: usize) -> String {
    format!("w{index:05}")
}

/// Samples `n` independent waveforms, waveform `i` from stream `i` of the
/// root seed.
pub fn sample_corpus(config: &GeneratorConfig) -> Result<(TrainingCorpus, Vec<GroundTruth>)> {
    if config.n == 0 {
        return Err(Error::Config("corpus size must be >= 1".into()));
    }
    let draws: Vec<(WaveformSeries, GroundTruth)> = (0..config.n)
        .into_par_iter()
        .map(|i| {
            let mut rng = waveform_rng(config.seed, i as u64);
            sample_waveform(&config.params, &waveform_id(i), &mut rng, config.t_cap)
        })
        .collect::<Result<_>>()?;
    let (waves, truth): (Vec<_>, Vec<_>) = draws.into_iter().unzip();
    Ok((TrainingCorpus::new(waves)?, truth))
}

/// Built-in generator models.
pub mod presets {
    use super::*;

    pub const NAMES: [&str; 3] = ["demo", "class-a", "class-b"];

    fn left_to_right(states: Vec<StateParams>, sigma2: f64, d_max: usize) -> ModelParams {
        let m = states.len();
        let mut a = vec![vec![0.0; m]; m + 1];
        a[0][0] = 1.0;
        for k in 0..m.saturating_sub(1) {
            a[k + 1][k + 1] = 1.0;
        }
        ModelParams {
            a,
            states,
            sigma2,
            d_max,
        }
    }

    fn state(b0: f64, b1: f64, lambda: f64, psi: Mat2) -> StateParams {
        StateParams {
            beta: Vec2::new(b0, b1),
            lambda,
            psi,
        }
    }

    /// Pulse shape: rise, plateau, fall, baseline, with per-waveform
    /// variation in levels and slopes.
    pub fn demo() -> ModelParams {
        let psi = Mat2::new(0.09, 0.0, 0.0, 0.0004);
        left_to_right(
            vec![
                state(0.0, 0.4, 7.0, psi),
                state(4.0, 0.0, 11.0, psi),
                state(4.0, -0.5, 7.0, psi),
                state(0.0, 0.0, 9.0, psi),
            ],
            0.01,
            40,
        )
    }

    /// First of a two-class pair sharing durations and noise level.
    pub fn class_a() -> ModelParams {
        let psi = Mat2::new(0.04, 0.0, 0.0, 0.0004);
        left_to_right(
            vec![
                state(0.0, 0.5, 7.0, psi),
                state(4.0, -0.1, 9.0, psi),
                state(3.0, -0.4, 7.0, psi),
            ],
            0.01,
            30,
        )
    }

    /// Second of the two-class pair: same timing and noise, different slopes.
    pub fn class_b() -> ModelParams {
        let psi = Mat2::new(0.04, 0.0, 0.0, 0.0004);
        left_to_right(
            vec![
                state(0.0, 0.8, 7.0, psi),
                state(6.0, -0.3, 9.0, psi),
                state(3.0, -0.2, 7.0, psi),
            ],
            0.01,
            30,
        )
    }

    pub fn named(name: &str) -> Option<ModelParams> {
        match name {
            "demo" => Some(demo()),
            "class-a" => Some(class_a()),
            "class-b" => Some(class_b()),
            _ => None,
        }
    }
}
