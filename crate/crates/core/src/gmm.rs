//! Uncertainty of multimodal Gaussian-mixture trajectory predictions.
//!
//! A prediction holds several modes, each a categorical probability and a
//! sequence of 2-D Gaussians (the first is the next step). Its score is the
//! probability-weighted sum of the first-step covariance determinants; a
//! trajectory is flagged when any of its per-step scores exceeds a calibrated
//! threshold.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Point, Result};

const PROBABILITY_TOL: f64 = 1e-6;
const SYMMETRY_TOL: f64 = 1e-9;
/// Slack for PSD checks on covariances written with limited precision.
const PSD_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianStep {
    pub mean: Point,
    pub cov: [[f64; 2]; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmMode {
    /// Mode probability.
    pub p: f64,
    pub steps: Vec<GaussianStep>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmPrediction {
    pub agent: String,
    pub t: usize,
    pub modes: Vec<GmmMode>,
}

fn det(c: &[[f64; 2]; 2]) -> f64 {
    c[0][0] * c[1][1] - c[0][1] * c[1][0]
}

impl GmmPrediction {
    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::Format("prediction has no modes".into()));
        }
        let mut total = 0.0;
        for (i, m) in self.modes.iter().enumerate() {
            if !(m.p.is_finite() && (0.0..=1.0).contains(&m.p)) {
                return Err(Error::Format(format!("mode {i}: probability {} outside [0, 1]", m.p)));
            }
            total += m.p;
            if m.steps.is_empty() {
                return Err(Error::Format(format!("mode {i}: no predicted steps")));
            }
            for (s, step) in m.steps.iter().enumerate() {
                let c = &step.cov;
                let finite = c.iter().flatten().chain(&step.mean).all(|v| v.is_finite());
                if !finite {
                    return Err(Error::Format(format!("mode {i} step {s}: non-finite values")));
                }
                if (c[0][1] - c[1][0]).abs() > SYMMETRY_TOL {
                    return Err(Error::Format(format!("mode {i} step {s}: covariance not symmetric")));
                }
                let scale = c[0][0].abs().max(c[1][1].abs()).max(1.0);
                if c[0][0] < -PSD_TOL || c[1][1] < -PSD_TOL || det(c) < -PSD_TOL * scale * scale {
                    return Err(Error::Format(format!("mode {i} step {s}: covariance not PSD")));
                }
            }
        }
        if (total - 1.0).abs() > PROBABILITY_TOL {
            return Err(Error::Format(format!(
                "mode probabilities sum to {total}, expected 1"
            )));
        }
        Ok(())
    }
}

/// `Σ_z p_z · det(Σ_z)` over the first predicted step of every mode.
pub fn gmm_score(pred: &GmmPrediction) -> Result<f64> {
    pred.validate()?;
    Ok(pred
        .modes
        .iter()
        .map(|m| m.p * det(&m.steps[0].cov).max(0.0))
        .sum())
}

/// A trajectory is OOD iff its largest per-step score strictly exceeds `c`.
/// An empty score list is nominal.
pub fn classify_trajectory(scores: &[f64], c: f64) -> bool {
    scores.iter().any(|&s| s > c)
}

/// Per-agent score sequences ordered by time step.
pub fn scores_by_agent(preds: &[GmmPrediction]) -> Result<Vec<(String, Vec<f64>)>> {
    let mut rows: Vec<(&str, usize, f64)> = Vec::with_capacity(preds.len());
    for (i, p) in preds.iter().enumerate() {
        let s = gmm_score(p).map_err(|e| Error::Format(format!("record {i}: {e}")))?;
        rows.push((&p.agent, p.t, s));
    }
    rows.sort_by(|a, b| a.0.cmp(b.0).then(a.1.cmp(&b.1)));
    let mut out: Vec<(String, Vec<f64>)> = Vec::new();
    for (agent, _, s) in rows {
        match out.last_mut() {
            Some((a, v)) if a == agent => v.push(s),
            _ => out.push((agent.to_string(), vec![s])),
        }
    }
    Ok(out)
}

/// Reads a JSON array of predictions; errors name the offending record.
pub fn read_gmm_predictions<R: Read>(reader: R) -> Result<Vec<GmmPrediction>> {
    let raw: Vec<serde_json::Value> =
        serde_json::from_reader(reader).map_err(|e| Error::Format(format!("expected a JSON array: {e}")))?;
    raw.into_iter()
        .enumerate()
        .map(|(i, v)| {
            let p: GmmPrediction =
                serde_json::from_value(v).map_err(|e| Error::Format(format!("record {i}: {e}")))?;
            p.validate()
                .map_err(|e| Error::Format(format!("record {i}: {e}")))?;
            Ok(p)
        })
        .collect()
}

pub fn write_gmm_predictions<W: Write>(writer: W, preds: &[GmmPrediction]) -> Result<()> {
    serde_json::to_writer(writer, preds).map_err(|e| Error::Format(e.to_string()))
}

pub fn load_gmm_predictions(path: impl AsRef<Path>) -> Result<Vec<GmmPrediction>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_gmm_predictions(BufReader::new(f)).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn save_gmm_predictions(path: impl AsRef<Path>, preds: &[GmmPrediction]) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_gmm_predictions(&mut w, preds)?;
    w.flush().map_err(|e| Error::io(path, e))
}
