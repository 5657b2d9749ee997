//! k-nearest-neighbor classification on model scores, and the nested
//! cross-validation protocol that compares feature sets.

use std::fmt;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{score_waveform, ScoreVector};
use crate::learning::{fit, FitConfig, TrainingCorpus};
use crate::model::WaveformSeries;
use crate::synth::waveform_rng;

pub const DEFAULT_K_VALUES: [usize; 5] = [1, 3, 5, 7, 9];
pub const POSITIVE: &str = "positive";
pub const NEGATIVE: &str = "negative";

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeature {
    pub id: String,
    pub label: String,
    pub features: Vec<f64>,
}

/// Per-dimension z-scoring with statistics from a training set. Zero
/// spread falls back to unit scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(train: &[LabeledFeature]) -> Result<Self> {
        let first = train
            .first()
            .ok_or_else(|| Error::Data("training set is empty".into()))?;
        let dim = first.features.len();
        if train.iter().any(|f| f.features.len() != dim) {
            return Err(Error::Data("inconsistent feature dimensions".into()));
        }
        if train.iter().flat_map(|f| &f.features).any(|v| !v.is_finite()) {
            return Err(Error::Data("features must be finite".into()));
        }
        let n = train.len() as f64;
        let mean: Vec<f64> = (0..dim)
            .map(|j| train.iter().map(|f| f.features[j]).sum::<f64>() / n)
            .collect();
        let scale = (0..dim)
            .map(|j| {
                let var = train
                    .iter()
                    .map(|f| (f.features[j] - mean[j]).powi(2))
                    .sum::<f64>()
                    / n;
                let sd = var.sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// Majority vote among the `k` nearest items. `distances` must be in
/// training order: distance ties go to the earlier item, vote ties to the
/// label with the smallest summed distance.
pub fn knn_vote<'a>(distances: &[(f64, &'a str)], k: usize) -> Result<&'a str> {
    if distances.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if k == 0 || k > distances.len() {
        return Err(Error::Config(format!(
            "k={k} must be in 1..={}",
            distances.len()
        )));
    }
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&a, &b| distances[a].0.total_cmp(&distances[b].0).then(a.cmp(&b)));
    let mut tally: Vec<(&str, usize, f64)> = Vec::new();
    for &i in &order[..k] {
        let (d, label) = distances[i];
        match tally.iter_mut().find(|t| t.0 == label) {
            Some(t) => {
                t.1 += 1;
                t.2 += d;
            }
            None => tally.push((label, 1, d)),
        }
    }
    let best = tally
        .iter()
        .min_by(|a, b| b.1.cmp(&a.1).then(a.2.total_cmp(&b.2)))
        .expect("k >= 1");
    Ok(best.0)
}

/// Euclidean k-NN on features standardized with training statistics.
pub fn knn_classify<'a>(train: &'a [LabeledFeature], query: &[f64], k: usize) -> Result<&'a str> {
    let std = Standardizer::fit(train)?;
    if query.len() != std.mean.len() {
        return Err(Error::Data(format!(
            "query has dimension {} but training features have {}",
            query.len(),
            std.mean.len()
        )));
    }
    let q = std.apply(query);
    let distances: Vec<(f64, &str)> = train
        .iter()
        .map(|f| {
            let z = std.apply(&f.features);
            let d2: f64 = z.iter().zip(&q).map(|(a, b)| (a - b).powi(2)).sum();
            (d2.sqrt(), f.label.as_str())
        })
        .collect();
    knn_vote(&distances, k)
}

/// Mean squared pointwise difference; the longer waveform is truncated to
/// the shorter length.
pub fn baseline_distance(a: &WaveformSeries, b: &WaveformSeries) -> f64 {
    let n = a.len().min(b.len());
    a.values()[..n]
        .iter()
        .zip(&b.values()[..n])
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    Logp,
    ShapeNoise,
    Raw,
}

impl FeatureSet {
    pub const ALL: [FeatureSet; 3] = [FeatureSet::Logp, FeatureSet::ShapeNoise, FeatureSet::Raw];

    pub fn name(self) -> &'static str {
        match self {
            FeatureSet::Logp => "logp",
            FeatureSet::ShapeNoise => "shape_noise",
            FeatureSet::Raw => "raw",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == s)
    }

    fn features(self, score: &ScoreVector) -> Vec<f64> {
        match self {
            FeatureSet::Logp => vec![score.logp],
            FeatureSet::ShapeNoise => vec![score.score_shape, score.score_noise],
            FeatureSet::Raw => Vec::new(),
        }
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub fit: FitConfig,
    pub k_values: Vec<usize>,
    pub seed: u64,
    pub outer_folds: usize,
    pub inner_folds: usize,
}

impl CvConfig {
    pub fn new(fit: FitConfig) -> Self {
        Self {
            fit,
            k_values: DEFAULT_K_VALUES.to_vec(),
            seed: 0,
            outer_folds: 5,
            inner_folds: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub feature_set: FeatureSet,
    pub k: usize,
    pub fold: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub feature_set: FeatureSet,
    pub k: usize,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTable {
    pub rows: Vec<AccuracyRow>,
    pub summary: Vec<AccuracySummary>,
}

impl AccuracyTable {
    fn from_rows(rows: Vec<AccuracyRow>) -> Self {
        let mut keys: Vec<(FeatureSet, usize)> = rows.iter().map(|r| (r.feature_set, r.k)).collect();
        keys.sort();
        keys.dedup();
        let summary = keys
            .into_iter()
            .map(|(feature_set, k)| {
                let acc: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.feature_set == feature_set && r.k == k)
                    .map(|r| r.accuracy)
                    .collect();
                let n = acc.len() as f64;
                let mean = acc.iter().sum::<f64>() / n;
                let var = if acc.len() > 1 {
                    acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)
                } else {
                    0.0
                };
                AccuracySummary {
                    feature_set,
                    k,
                    mean,
                    sd: var.sqrt(),
                }
            })
            .collect();
        Self { rows, summary }
    }

    pub fn mean_accuracy(&self, feature_set: FeatureSet, k: usize) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.feature_set == feature_set && s.k == k)
            .map(|s| s.mean)
    }

    /// Highest mean accuracy; ties go to the earlier feature set, then the
    /// smaller k.
    pub fn best(&self) -> Option<&AccuracySummary> {
        self.summary
            .iter()
            .fold(None, |best: Option<&AccuracySummary>, s| match best {
                Some(b) if b.mean >= s.mean => Some(b),
                _ => Some(s),
            })
    }
}

/// Splits `0..n` into `folds` groups after a seeded shuffle.
pub fn fold_assignment(n: usize, folds: usize, seed: u64, stream: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut waveform_rng(seed, stream));
    let mut out = vec![Vec::new(); folds];
    for (pos, i) in idx.into_iter().enumerate() {
        out[pos % folds].push(i);
    }
    out
}

struct ScoredItem<'a> {
    waveform: &'a WaveformSeries,
    label: &'static str,
    score: ScoreVector,
}

fn inner_accuracy(items: &[ScoredItem<'_>], set: FeatureSet, k: usize, folds: &[Vec<usize>]) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for (f, test) in folds.iter().enumerate() {
        let train_idx: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, v)| v.iter().copied())
            .collect();
        let train: Vec<LabeledFeature> = train_idx
            .iter()
            .map(|&i| LabeledFeature {
                id: items[i].score.id.clone(),
                label: items[i].label.to_string(),
                features: set.features(&items[i].score),
            })
            .collect();
        for &q in test {
            let item = &items[q];
            let predicted = match set {
                FeatureSet::Raw => {
                    let distances: Vec<(f64, &str)> = train_idx
                        .iter()
                        .map(|&i| (baseline_distance(item.waveform, items[i].waveform), items[i].label))
                        .collect();
                    knn_vote(&distances, k)?
                }
                _ => knn_classify(&train, &set.features(&item.score), k)?,
            };
            correct += usize::from(predicted == item.label);
            total += 1;
        }
    }
    Ok(correct as f64 / total as f64)
}

/// Outer folds over the positives: fit on the training positives, score the
/// held-out positives together with every negative, then estimate k-NN
/// accuracy on those scored items by inner cross-validation.
pub fn cv_protocol(
    positives: &[WaveformSeries],
    negatives: &[WaveformSeries],
    config: &CvConfig,
) -> Result<AccuracyTable> {
    if positives.len() < config.outer_folds || config.outer_folds < 2 {
        return Err(Error::Config(format!(
            "need at least {} positive waveforms for {}-fold cross-validation, got {}",
            config.outer_folds.max(2),
            config.outer_folds,
            positives.len()
        )));
    }
    if negatives.is_empty() {
        return Err(Error::Config("negative corpus is empty".into()));
    }
    if config.k_values.is_empty() || config.k_values.contains(&0) {
        return Err(Error::Config("k values must be positive".into()));
    }
    let mut fit_cfg = config.fit.clone();
    if fit_cfg.d_max.is_none() {
        let longest = positives.iter().chain(negatives).map(|w| w.len()).max().unwrap_or(1);
        fit_cfg.d_max = Some(longest);
    }
    let outer = fold_assignment(positives.len(), config.outer_folds, config.seed, 0);

    let per_fold: Vec<Vec<AccuracyRow>> = outer
        .par_iter()
        .enumerate()
        .map(|(fold, held_out)| -> Result<Vec<AccuracyRow>> {
            let train: Vec<WaveformSeries> = (0..positives.len())
                .filter(|i| !held_out.contains(i))
                .map(|i| positives[i].clone())
                .collect();
            let model = fit(&TrainingCorpus::new(train)?, &fit_cfg)?.params;
            let mut items = Vec::new();
            let tests = held_out
                .iter()
                .map(|&i| (&positives[i], POSITIVE))
                .chain(negatives.iter().map(|w| (w, NEGATIVE)));
            for (w, label) in tests {
                let score = score_waveform(w, &model)?;
                if !(score.logp.is_finite() && score.score_shape.is_finite() && score.score_noise.is_finite()) {
                    return Err(Error::NoSupport { id: w.id().to_string() });
                }
                items.push(ScoredItem {
                    waveform: w,
                    label,
                    score,
                });
            }
            let inner = fold_assignment(items.len(), config.inner_folds, config.seed, 1 + fold as u64);
            let min_train = items.len() - inner.iter().map(Vec::len).max().unwrap_or(0);
            let mut rows = Vec::new();
            for set in FeatureSet::ALL {
                for &k in &config.k_values {
                    if k > min_train {
                        return Err(Error::Config(format!(
                            "k={k} exceeds the {min_train} training items of an inner fold"
                        )));
                    }
                    rows.push(AccuracyRow {
                        feature_set: set,
                        k,
                        fold,
                        accuracy: inner_accuracy(&items, set, k, &inner)?,
                    });
                }
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    Ok(AccuracyTable::from_rows(per_fold.into_iter().flatten().collect()))
}
