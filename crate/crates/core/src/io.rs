//! File formats: long-format corpus CSV, model JSON, and the CSV/JSON
//! outputs of every command. Each writer has a matching reader.
//!
//! Floats are written with Rust's shortest round-trip formatting, so
//! write → read is value-exact. Minus infinity is written as `-inf` in CSV;
//! JSON uses `null` plus a `supported: false` flag.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classify::{AccuracyRow, AccuracySummary, AccuracyTable, FeatureSet};
use crate::error::{Error, Result};
use crate::evaluation::ScoreVector;
use crate::inference::Segment;
use crate::linalg::{Mat2, Vec2};
use crate::model::{ModelParams, StateParams, WaveformSeries};
use crate::synth::GroundTruth;

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const CORPUS_HEADER: [&str; 3] = ["waveform_id", "t", "y"];
pub const SCORES_HEADER: [&str; 4] = ["id", "logp", "score_shape", "score_noise"];
pub const PLOT_HEADER: [&str; 5] = ["id", "t", "y", "state", "fitted"];
pub const PREDICT_HEADER: [&str; 5] = ["id", "t", "y", "forecast", "pred_logp"];
pub const ACCURACY_HEADER: [&str; 4] = ["feature_set", "k", "fold", "accuracy"];
pub const FIT_LOG_HEADER: [&str; 2] = ["iter", "loglik"];
/// Marker in the `t` column of the per-waveform summary row of predictions.
pub const SUMMARY_MARKER: &str = "summary";

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn format_f64(v: f64) -> String {
    if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        v.to_string()
    }
}

pub fn parse_f64(s: &str) -> Option<f64> {
    match s.trim() {
        "-inf" => Some(f64::NEG_INFINITY),
        t => t.parse().ok(),
    }
}

fn parse_err(label: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: label.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn check_header(rec: &csv::StringRecord, expected: &[&str], label: &Path) -> Result<()> {
    let got: Vec<&str> = rec.iter().map(str::trim).collect();
    if got != expected {
        return Err(parse_err(
            label,
            1,
            format!("expected header '{}', found '{}'", expected.join(","), got.join(",")),
        ));
    }
    Ok(())
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader)
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

/// Reads a long-format corpus (`waveform_id,t,y`). Rows of a waveform must
/// be contiguous with `t = 1, 2, …`.
pub fn read_corpus_from<R: Read>(reader: R, label: &Path) -> Result<Vec<WaveformSeries>> {
    let mut rdr = csv_reader(reader);
    check_header(rdr.headers()?, &CORPUS_HEADER, label)?;
    let mut out: Vec<WaveformSeries> = Vec::new();
    let mut current: Option<(String, Vec<f64>)> = None;
    let mut finished = std::collections::HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(label, line, e.to_string())
        })?;
        let line = line_of(&rec);
        if rec.len() != 3 {
            return Err(parse_err(label, line, format!("expected 3 fields, found {}", rec.len())));
        }
        let id = rec[0].trim();
        if id.is_empty() {
            return Err(parse_err(label, line, "empty waveform_id"));
        }
        let t: usize = rec[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(label, line, format!("invalid time index '{}'", &rec[1])))?;
        let y = rec[2]
            .trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| parse_err(label, line, format!("invalid value '{}'", &rec[2])))?;
        match &mut current {
            Some((cid, vals)) if cid == id => {
                if t != vals.len() + 1 {
                    return Err(parse_err(
                        label,
                        line,
                        format!("waveform '{id}': expected t={} but found t={t}", vals.len() + 1),
                    ));
                }
                vals.push(y);
            }
            _ => {
                if let Some((cid, vals)) = current.take() {
                    finished.insert(cid.clone());
                    out.push(WaveformSeries::new(cid, vals)?);
                }
                if finished.contains(id) {
                    return Err(parse_err(label, line, format!("rows of waveform '{id}' are not contiguous")));
                }
                if t != 1 {
                    return Err(parse_err(label, line, format!("waveform '{id}' must start at t=1, found t={t}")));
                }
                current = Some((id.to_string(), vec![y]));
            }
        }
    }
    if let Some((cid, vals)) = current {
        out.push(WaveformSeries::new(cid, vals)?);
    }
    Ok(out)
}

pub fn read_corpus(path: &Path) -> Result<Vec<WaveformSeries>> {
    read_corpus_from(open(path)?, path)
}

pub fn write_corpus_to<W: Write>(writer: W, waveforms: &[WaveformSeries]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CORPUS_HEADER)?;
    for wf in waveforms {
        for (i, y) in wf.values().iter().enumerate() {
            w.write_record([wf.id(), &(i + 1).to_string(), &y.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io("<corpus>", e))?;
    Ok(())
}

pub fn write_corpus(path: &Path, waveforms: &[WaveformSeries]) -> Result<()> {
    write_corpus_to(create(path)?, waveforms)
}

#[derive(Debug, Serialize, Deserialize)]
struct StateFile {
    lambda: f64,
    beta: [f64; 2],
    psi: [[f64; 2]; 2],
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    #[serde(rename = "M")]
    m: usize,
    d_max: usize,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    states: Vec<StateFile>,
    sigma2: f64,
    format_version: u32,
}

pub fn model_to_json(params: &ModelParams) -> Result<String> {
    let file = ModelFile {
        m: params.num_states(),
        d_max: params.d_max,
        a: params.a.clone(),
        states: params
            .states
            .iter()
            .map(|s| StateFile {
                lambda: s.lambda,
                beta: s.beta.0,
                psi: s.psi.0,
            })
            .collect(),
        sigma2: params.sigma2,
        format_version: MODEL_FORMAT_VERSION,
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn model_from_json(text: &str) -> Result<ModelParams> {
    let file: ModelFile = serde_json::from_str(text)
        .map_err(|e| Error::Config(format!("invalid model file: {e}")))?;
    if file.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::Config(format!(
            "unsupported model format_version {} (expected {MODEL_FORMAT_VERSION})",
            file.format_version
        )));
    }
    if file.states.len() != file.m {
        return Err(Error::Config(format!(
            "model declares M={} but lists {} states",
            file.m,
            file.states.len()
        )));
    }
    let params = ModelParams {
        a: file.a,
        states: file
            .states
            .into_iter()
            .map(|s| StateParams {
                beta: Vec2(s.beta),
                lambda: s.lambda,
                psi: Mat2(s.psi),
            })
            .collect(),
        sigma2: file.sigma2,
        d_max: file.d_max,
    };
    params.validate()?;
    Ok(params)
}

pub fn save_model(path: &Path, params: &ModelParams) -> Result<()> {
    let text = model_to_json(params)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ModelParams> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_json(&text)
}

pub fn write_fit_log(path: &Path, trace: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(FIT_LOG_HEADER)?;
    for (i, ll) in trace.iter().enumerate() {
        w.write_record([i.to_string(), format_f64(*ll)])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_fit_log(path: &Path) -> Result<Vec<f64>> {
    let mut rdr = csv_reader(open(path)?);
    check_header(rdr.headers()?, &FIT_LOG_HEADER, path)?;
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            parse_f64(rec.get(1).unwrap_or(""))
                .ok_or_else(|| parse_err(path, line_of(&rec), "invalid loglik"))
        })
        .collect()
}

pub fn write_scores_to<W: Write>(writer: W, scores: &[ScoreVector]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SCORES_HEADER)?;
    for s in scores {
        w.write_record([
            s.id.clone(),
            format_f64(s.logp),
            format_f64(s.score_shape),
            format_f64(s.score_noise),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<scores>", e))?;
    Ok(())
}

pub fn write_scores(path: &Path, scores: &[ScoreVector]) -> Result<()> {
    write_scores_to(create(path)?, scores)
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreVector>> {
    let mut rdr = csv_reader(open(path)?);
    check_header(rdr.headers()?, &SCORES_HEADER, path)?;
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            let line = line_of(&rec);
            let num = |i: usize| {
                rec.get(i)
                    .and_then(parse_f64)
                    .ok_or_else(|| parse_err(path, line, format!("invalid number in column {}", i + 1)))
            };
            Ok(ScoreVector {
                id: rec.get(0).unwrap_or("").to_string(),
                logp: num(1)?,
                score_shape: num(2)?,
                score_noise: num(3)?,
            })
        })
        .collect()
}

/// One entry of the segmentation JSON output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationRecord {
    pub id: String,
    pub supported: bool,
    pub segments: Vec<Segment>,
    pub log_joint: Option<f64>,
    pub seg_mse: Option<f64>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(open(path)?)?)
}

pub fn write_segmentations(path: &Path, records: &[SegmentationRecord]) -> Result<()> {
    write_json(path, &records)
}

pub fn read_segmentations(path: &Path) -> Result<Vec<SegmentationRecord>> {
    read_json(path)
}

pub fn write_truth(path: &Path, truth: &[GroundTruth]) -> Result<()> {
    write_json(path, &truth)
}

pub fn read_truth(path: &Path) -> Result<Vec<GroundTruth>> {
    read_json(path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotRow {
    pub id: String,
    pub t: usize,
    pub y: f64,
    pub state: usize,
    pub fitted: f64,
}

pub fn write_plot(path: &Path, rows: &[PlotRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(PLOT_HEADER)?;
    for r in rows {
        w.write_record([
            r.id.clone(),
            r.t.to_string(),
            r.y.to_string(),
            r.state.to_string(),
            r.fitted.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_plot(path: &Path) -> Result<Vec<PlotRow>> {
    let mut rdr = csv_reader(open(path)?);
    check_header(rdr.headers()?, &PLOT_HEADER, path)?;
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            let line = line_of(&rec);
            let bad = || parse_err(path, line, "malformed plot row");
            Ok(PlotRow {
                id: rec.get(0).ok_or_else(bad)?.to_string(),
                t: rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(bad)?,
                y: rec.get(2).and_then(parse_f64).ok_or_else(bad)?,
                state: rec.get(3).and_then(|s| s.parse().ok()).ok_or_else(bad)?,
                fitted: rec.get(4).and_then(parse_f64).ok_or_else(bad)?,
            })
        })
        .collect()
}

/// Per-step predictions of one waveform plus its summary.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRows {
    pub id: String,
    pub y: Vec<f64>,
    pub forecast: Vec<f64>,
    pub pred_logp: Vec<f64>,
    /// Mean squared forecast error (summary row, `forecast` column).
    pub mse: f64,
    /// Mean predictive log-density (summary row, `pred_logp` column).
    pub mean_pred_logp: f64,
}

pub fn write_predictions(path: &Path, rows: &[PredictionRows]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(PREDICT_HEADER)?;
    for p in rows {
        for t in 0..p.y.len() {
            w.write_record([
                p.id.clone(),
                (t + 1).to_string(),
                p.y[t].to_string(),
                format_f64(p.forecast[t]),
                format_f64(p.pred_logp[t]),
            ])?;
        }
        w.write_record([
            p.id.clone(),
            SUMMARY_MARKER.to_string(),
            String::new(),
            format_f64(p.mse),
            format_f64(p.mean_pred_logp),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRows>> {
    let mut rdr = csv_reader(open(path)?);
    check_header(rdr.headers()?, &PREDICT_HEADER, path)?;
    let mut out = Vec::new();
    let mut cur: Option<PredictionRows> = None;
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let bad = || parse_err(path, line, "malformed prediction row");
        let id = rec.get(0).ok_or_else(bad)?.to_string();
        let p = cur.get_or_insert_with(|| PredictionRows {
            id: id.clone(),
            y: Vec::new(),
            forecast: Vec::new(),
            pred_logp: Vec::new(),
            mse: f64::NAN,
            mean_pred_logp: f64::NAN,
        });
        if p.id != id {
            return Err(parse_err(path, line, "missing summary row before next waveform"));
        }
        if rec.get(1) == Some(SUMMARY_MARKER) {
            p.mse = rec.get(3).and_then(parse_f64).ok_or_else(bad)?;
            p.mean_pred_logp = rec.get(4).and_then(parse_f64).ok_or_else(bad)?;
            out.push(cur.take().expect("current waveform"));
        } else {
            p.y.push(rec.get(2).and_then(parse_f64).ok_or_else(bad)?);
            p.forecast.push(rec.get(3).and_then(parse_f64).ok_or_else(bad)?);
            p.pred_logp.push(rec.get(4).and_then(parse_f64).ok_or_else(bad)?);
        }
    }
    if cur.is_some() {
        return Err(parse_err(path, 0, "prediction file ends without a summary row"));
    }
    Ok(out)
}

pub fn write_accuracy(path: &Path, rows: &[AccuracyRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(ACCURACY_HEADER)?;
    for r in rows {
        w.write_record([
            r.feature_set.name().to_string(),
            r.k.to_string(),
            r.fold.to_string(),
            r.accuracy.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_accuracy(path: &Path) -> Result<Vec<AccuracyRow>> {
    let mut rdr = csv_reader(open(path)?);
    check_header(rdr.headers()?, &ACCURACY_HEADER, path)?;
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            let line = line_of(&rec);
            let bad = || parse_err(path, line, "malformed accuracy row");
            Ok(AccuracyRow {
                feature_set: rec.get(0).and_then(FeatureSet::parse).ok_or_else(bad)?,
                k: rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(bad)?,
                fold: rec.get(2).and_then(|s| s.parse().ok()).ok_or_else(bad)?,
                accuracy: rec.get(3).and_then(parse_f64).ok_or_else(bad)?,
            })
        })
        .collect()
}

/// Summary JSON of a classification run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifySummary {
    pub summary: Vec<AccuracySummary>,
    pub best: Option<AccuracySummary>,
}

impl From<&AccuracyTable> for ClassifySummary {
    fn from(t: &AccuracyTable) -> Self {
        Self {
            summary: t.summary.clone(),
            best: t.best().cloned(),
        }
    }
}
