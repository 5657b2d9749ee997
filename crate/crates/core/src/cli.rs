//! Command-line surface. `main` only parses arguments and maps errors to
//! exit codes; each subcommand is a plain function so it can be driven
//! from tests.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::classify::{cv_protocol, CvConfig};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, score_waveform, segmentation_fit};
use crate::inference::predict_all;
use crate::io::{self, ClassifySummary, PlotRow, PredictionRows, SegmentationRecord};
use crate::learning::{fit, FitConfig, TrainingCorpus};
use crate::synth::{presets, sample_corpus, GeneratorConfig};

/// Environment variable that sets the number of worker threads.
pub const WORKERS_ENV: &str = "RESHMM_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "reshmm", version, about = "Segmental HMMs with random effects for waveform data")]
pub struct Cli {
    /// Only report errors.
    #[arg(long, global = true, conflicts_with = "verbose")]
    pub quiet: bool,
    /// Report per-iteration progress.
    #[arg(long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct ModelConfigArgs {
    /// Number of states.
    #[arg(long = "states", short = 'M')]
    pub states: usize,
    /// Maximum segment duration (default: longest training waveform).
    #[arg(long)]
    pub dmax: Option<usize>,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    /// Relative log-likelihood improvement that stops EM.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Fit a plain segmental HMM (random-effects covariance fixed at zero).
    #[arg(long)]
    pub no_random_effects: bool,
}

impl ModelConfigArgs {
    fn fit_config(&self) -> FitConfig {
        FitConfig {
            num_states: self.states,
            d_max: self.dmax,
            max_iter: self.max_iter,
            rel_tol: self.tol,
            random_effects: !self.no_random_effects,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model to a corpus by EM.
    Train {
        corpus: PathBuf,
        #[command(flatten)]
        model: ModelConfigArgs,
        /// Accepted for pipeline symmetry; initialization is deterministic.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Fit log CSV (default: `<out>.fit.csv`).
        #[arg(long)]
        fit_log: Option<PathBuf>,
    },
    /// Per-waveform logP, shape and noise scores.
    Score {
        model: PathBuf,
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Viterbi segmentation with per-segment refits.
    Segment {
        model: PathBuf,
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Plot-ready CSV `id,t,y,state,fitted`.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// One-step-ahead forecasts and predictive log-densities.
    Predict {
        model: PathBuf,
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Held-out metrics averaged over a corpus.
    Evaluate {
        model: PathBuf,
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Nested cross-validated k-NN accuracy for each feature set.
    Classify {
        positives: PathBuf,
        negatives: PathBuf,
        #[command(flatten)]
        model: ModelConfigArgs,
        /// Comma-separated neighbor counts.
        #[arg(long, value_delimiter = ',', default_values_t = vec![1, 3, 5, 7, 9])]
        k: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Summary JSON (default: `<out>.summary.json`).
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Sample a synthetic corpus from a model file or a built-in preset.
    Generate {
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        model: Option<PathBuf>,
        /// One of: demo, class-a, class-b.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long, short = 'n')]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Maximum waveform length.
        #[arg(long)]
        t_cap: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth JSON sidecar.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Configures the global worker pool from [`WORKERS_ENV`].
pub fn init_workers() -> Result<()> {
    let Ok(raw) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{WORKERS_ENV} must be a positive integer, got '{raw}'")))?;
    if n == 0 {
        return Err(Error::Config(format!("{WORKERS_ENV} must be >= 1")));
    }
    // A second initialization in the same process is harmless.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            corpus,
            model,
            seed: _,
            out,
            fit_log,
        } => {
            let log_path = fit_log.unwrap_or_else(|| with_suffix(&out, ".fit.csv"));
            cmd_train(&corpus, &model.fit_config(), &out, &log_path)
        }
        Command::Score { model, corpus, out } => cmd_score(&model, &corpus, &out),
        Command::Segment {
            model,
            corpus,
            out,
            plot,
        } => cmd_segment(&model, &corpus, &out, plot.as_deref()),
        Command::Predict { model, corpus, out } => cmd_predict(&model, &corpus, &out),
        Command::Evaluate { model, corpus, out } => cmd_evaluate(&model, &corpus, &out),
        Command::Classify {
            positives,
            negatives,
            model,
            k,
            seed,
            out,
            summary,
        } => {
            let mut cfg = CvConfig::new(model.fit_config());
            cfg.k_values = k;
            cfg.seed = seed;
            let summary = summary.unwrap_or_else(|| with_suffix(&out, ".summary.json"));
            cmd_classify(&positives, &negatives, &cfg, &out, &summary)
        }
        Command::Generate {
            model,
            preset,
            n,
            seed,
            t_cap,
            out,
            truth,
        } => {
            let params = match (model, preset) {
                (Some(path), _) => io::load_model(&path)?,
                (None, Some(name)) => presets::named(&name).ok_or_else(|| {
                    Error::Config(format!(
                        "unknown preset '{name}' (available: {})",
                        presets::NAMES.join(", ")
                    ))
                })?,
                (None, None) => return Err(Error::Config("either --model or --preset is required".into())),
            };
            let cfg = GeneratorConfig {
                params,
                n,
                seed,
                t_cap,
            };
            cmd_generate(&cfg, &out, truth.as_deref())
        }
    }
}

pub fn cmd_train(corpus: &Path, config: &FitConfig, out: &Path, fit_log: &Path) -> Result<()> {
    let corpus = TrainingCorpus::new(io::read_corpus(corpus)?)?;
    log::info!("fitting M={} on {} waveforms", config.num_states, corpus.len());
    let report = fit(&corpus, config)?;
    log::info!(
        "{} after {} iterations, loglik {}",
        if report.converged { "converged" } else { "stopped" },
        report.iterations,
        report.loglik_trace.last().copied().unwrap_or(f64::NAN)
    );
    io::save_model(out, &report.params)?;
    io::write_fit_log(fit_log, &report.loglik_trace)
}

pub fn cmd_score(model: &Path, corpus: &Path, out: &Path) -> Result<()> {
    let params = io::load_model(model)?;
    let waves = io::read_corpus(corpus)?;
    let scores = waves
        .par_iter()
        .map(|w| score_waveform(w, &params))
        .collect::<Result<Vec<_>>>()?;
    io::write_scores(out, &scores)
}

pub fn cmd_segment(model: &Path, corpus: &Path, out: &Path, plot: Option<&Path>) -> Result<()> {
    let params = io::load_model(model)?;
    let waves = io::read_corpus(corpus)?;
    let fits: Vec<Option<_>> = waves
        .par_iter()
        .map(|w| match segmentation_fit(w, &params) {
            Ok(f) => Ok(Some(f)),
            Err(Error::NoSupport { id }) => {
                log::warn!("waveform '{id}' has no valid segmentation");
                Ok(None)
            }
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    let mut records = Vec::with_capacity(waves.len());
    let mut plot_rows = Vec::new();
    for (w, f) in waves.iter().zip(&fits) {
        match f {
            Some(f) => {
                f.segmentation.validate(w.len(), params.num_states())?;
                records.push(SegmentationRecord {
                    id: w.id().to_string(),
                    supported: true,
                    segments: f.segmentation.segments.clone(),
                    log_joint: Some(f.segmentation.log_joint),
                    seg_mse: Some(f.mse),
                });
                for (t, (state, (&y, &fitted))) in f
                    .segmentation
                    .state_labels()
                    .into_iter()
                    .zip(w.values().iter().zip(&f.fitted))
                    .enumerate()
                {
                    plot_rows.push(PlotRow {
                        id: w.id().to_string(),
                        t: t + 1,
                        y,
                        state,
                        fitted,
                    });
                }
            }
            None => records.push(SegmentationRecord {
                id: w.id().to_string(),
                supported: false,
                segments: Vec::new(),
                log_joint: None,
                seg_mse: None,
            }),
        }
    }
    io::write_segmentations(out, &records)?;
    if let Some(plot) = plot {
        io::write_plot(plot, &plot_rows)?;
    }
    Ok(())
}

pub fn cmd_predict(model: &Path, corpus: &Path, out: &Path) -> Result<()> {
    let params = io::load_model(model)?;
    let waves = io::read_corpus(corpus)?;
    let rows = waves
        .par_iter()
        .map(|w| {
            let p = predict_all(w, &params)?;
            let n = w.len() as f64;
            let mse = w
                .values()
                .iter()
                .zip(&p.forecasts)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                / n;
            Ok(PredictionRows {
                id: w.id().to_string(),
                y: w.values().to_vec(),
                mean_pred_logp: p.log_densities.iter().sum::<f64>() / n,
                forecast: p.forecasts,
                pred_logp: p.log_densities,
                mse,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    io::write_predictions(out, &rows)
}

pub fn cmd_evaluate(model: &Path, corpus: &Path, out: &Path) -> Result<()> {
    let params = io::load_model(model)?;
    let waves = io::read_corpus(corpus)?;
    let report = evaluate(&waves, &params)?;
    io::write_json(out, &report)
}

pub fn cmd_classify(
    positives: &Path,
    negatives: &Path,
    config: &CvConfig,
    out: &Path,
    summary: &Path,
) -> Result<()> {
    let pos = io::read_corpus(positives)?;
    let neg = io::read_corpus(negatives)?;
    if pos.len() < 5 || neg.len() < 5 {
        return Err(Error::Config(format!(
            "each class needs at least 5 waveforms (positives: {}, negatives: {})",
            pos.len(),
            neg.len()
        )));
    }
    let table = cv_protocol(&pos, &neg, config)?;
    io::write_accuracy(out, &table.rows)?;
    let s = ClassifySummary::from(&table);
    if let Some(best) = &s.best {
        println!(
            "best: feature_set={} k={} accuracy={:.4} (sd {:.4})",
            best.feature_set, best.k, best.mean, best.sd
        );
    }
    io::write_json(summary, &s)
}

pub fn cmd_generate(config: &GeneratorConfig, out: &Path, truth: Option<&Path>) -> Result<()> {
    let (corpus, gt) = sample_corpus(config)?;
    io::write_corpus(out, corpus.waveforms())?;
    if let Some(path) = truth {
        io::write_truth(path, &gt)?;
    }
    Ok(())
}
