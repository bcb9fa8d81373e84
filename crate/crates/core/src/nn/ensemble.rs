use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::mlp::{MlpModel, Scratch};
use super::{PredictionStats, Predictor};
use crate::data::DataPair;
use crate::par::{map_indexed, stream_rng, Execution};
use crate::{Error, Point, Result, BOOTSTRAP_SPEED};

const WEIGHT_FILE_VERSION: u32 = 1;

/// Adam and minibatch settings shared by all members.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Size of the fixed probe batch on which per-epoch MSE is recorded.
    pub probe_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            epochs: 200,
            probe_size: 512,
        }
    }
}

impl TrainConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            v.push("train.learning_rate: must be > 0".to_string());
        }
        if !(0.0..1.0).contains(&self.beta1) {
            v.push("train.beta1: must be in [0, 1)".to_string());
        }
        if !(0.0..1.0).contains(&self.beta2) {
            v.push("train.beta2: must be in [0, 1)".to_string());
        }
        if !(self.epsilon > 0.0) {
            v.push("train.epsilon: must be > 0".to_string());
        }
        if self.batch_size == 0 {
            v.push("train.batch_size: must be >= 1".to_string());
        }
        if self.probe_size == 0 {
            v.push("train.probe_size: must be >= 1".to_string());
        }
        v
    }
}

/// Per-member probe MSE: entry 0 is at initialization, entry `e` after
/// epoch `e`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub probe_mse: Vec<Vec<f64>>,
}

/// `n` identically shaped MLPs that differ only by their init seed.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    window: usize,
    members: Vec<MlpModel>,
    seeds: Vec<u64>,
}

/// Builds `n` freshly initialized members with the default architecture.
pub fn init_ensemble(n: usize, seeds: &[u64]) -> Result<Ensemble> {
    Ensemble::new(n, seeds, &MlpModel::ARCHITECTURE)
}

impl Ensemble {
    pub fn new(n: usize, seeds: &[u64], sizes: &[usize]) -> Result<Ensemble> {
        if n < 2 {
            return Err(Error::arg(format!(
                "an ensemble needs at least 2 members for an unbiased covariance, got {n}"
            )));
        }
        if seeds.len() != n {
            return Err(Error::arg(format!("{n} members but {} seeds", seeds.len())));
        }
        for (i, s) in seeds.iter().enumerate() {
            if seeds[..i].contains(s) {
                return Err(Error::arg(format!("duplicate member seed {s}")));
            }
        }
        let (first, last) = (sizes[0], *sizes.last().unwrap());
        if sizes.len() < 2 || first % 2 != 0 || last != 2 {
            return Err(Error::arg(format!(
                "architecture {sizes:?} must map 2*window inputs to 2 outputs"
            )));
        }
        let members = seeds
            .iter()
            .map(|&s| MlpModel::random(sizes, &mut stream_rng(s, 0)))
            .collect();
        Ok(Ensemble {
            window: first / 2,
            members,
            seeds: seeds.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[MlpModel] {
        &self.members
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    /// Member outputs mapped back to world coordinates.
    pub fn member_predictions(&self, window: &[Point]) -> Vec<Point> {
        let frame = Frame::of(window);
        let input = frame.features(window);
        self.members
            .iter()
            .map(|m| {
                let o = m.forward(&input);
                frame.to_world([o[0], o[1]])
            })
            .collect()
    }

    /// Returns a copy with members reordered by `perm`.
    pub fn permuted(&self, perm: &[usize]) -> Ensemble {
        Ensemble {
            window: self.window,
            members: perm.iter().map(|&i| self.members[i].clone()).collect(),
            seeds: perm.iter().map(|&i| self.seeds[i]).collect(),
        }
    }
}

impl Predictor for Ensemble {
    fn window(&self) -> usize {
        self.window
    }

    fn predict(&self, window: &[Point]) -> PredictionStats {
        PredictionStats::from_samples(&self.member_predictions(window))
    }
}

/// Mean and unbiased covariance of the member predictions.
pub fn ensemble_stats(e: &Ensemble, window: &[Point]) -> PredictionStats {
    assert_eq!(window.len(), e.window, "window length");
    e.predict(window)
}

/// Translation to the newest point plus a vertical flip for upward motion, so
/// the network always sees a downward crossing ending at the origin.
#[derive(Clone, Copy, Debug)]
struct Frame {
    origin: Point,
    flip: bool,
}

impl Frame {
    fn of(window: &[Point]) -> Frame {
        let first = window[0];
        let last = *window.last().unwrap();
        Frame {
            origin: last,
            flip: last[1] - first[1] > 0.0,
        }
    }

    fn to_local(self, p: Point) -> Point {
        let d = [p[0] - self.origin[0], p[1] - self.origin[1]];
        if self.flip {
            [d[0], -d[1]]
        } else {
            d
        }
    }

    fn to_world(self, p: Point) -> Point {
        let y = if self.flip { -p[1] } else { p[1] };
        [self.origin[0] + p[0], self.origin[1] + y]
    }

    fn features(self, window: &[Point]) -> Vec<f64> {
        window.iter().flat_map(|&p| self.to_local(p)).collect()
    }
}

fn encode_pair(pair: &DataPair) -> (Vec<f64>, Vec<f64>) {
    let frame = Frame::of(&pair.window);
    let t = frame.to_local(pair.target);
    (frame.features(&pair.window), t.to_vec())
}

/// Trains every member on `pairs` with the default execution policy.
pub fn train_ensemble(
    e: &Ensemble,
    pairs: &[DataPair],
    cfg: &TrainConfig,
) -> Result<(Ensemble, TrainReport)> {
    train_ensemble_with(e, pairs, cfg, Execution::default())
}

/// Trains members independently (in parallel when `exec` allows). Each
/// member shuffles with its own seed-derived stream.
pub fn train_ensemble_with(
    e: &Ensemble,
    pairs: &[DataPair],
    cfg: &TrainConfig,
    exec: Execution,
) -> Result<(Ensemble, TrainReport)> {
    if pairs.is_empty() {
        return Err(Error::arg("training needs at least one pair"));
    }
    if let Some(v) = cfg.violations().into_iter().next() {
        return Err(Error::arg(v));
    }
    if let Some(p) = pairs.iter().find(|p| p.window.len() != e.window) {
        return Err(Error::arg(format!(
            "pair window has {} points, ensemble expects {}",
            p.window.len(),
            e.window
        )));
    }
    let (inputs, targets): (Vec<_>, Vec<_>) = pairs.iter().map(encode_pair).unzip();
    let probe: Vec<usize> = (0..pairs.len().min(cfg.probe_size)).collect();
    let results = map_indexed(e.members.len(), exec, |i| {
        train_member(
            &e.members[i],
            e.seeds[i],
            i,
            &inputs,
            &targets,
            &probe,
            cfg,
        )
    });
    let mut members = Vec::with_capacity(results.len());
    let mut report = TrainReport::default();
    for r in results {
        let (m, hist) = r?;
        members.push(m);
        report.probe_mse.push(hist);
    }
    Ok((
        Ensemble {
            window: e.window,
            members,
            seeds: e.seeds.clone(),
        },
        report,
    ))
}

fn probe_mse(m: &MlpModel, inputs: &[Vec<f64>], targets: &[Vec<f64>], probe: &[usize]) -> f64 {
    let mut sum = 0.0;
    for &i in probe {
        let o = m.forward(&inputs[i]);
        sum += o.iter().zip(&targets[i]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    sum / probe.len() as f64
}

fn train_member(
    init: &MlpModel,
    seed: u64,
    member: usize,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    probe: &[usize],
    cfg: &TrainConfig,
) -> Result<(MlpModel, Vec<f64>)> {
    let mut model = init.clone();
    let mut opt = super::Adam::new(
        model.num_params(),
        cfg.learning_rate,
        cfg.beta1,
        cfg.beta2,
        cfg.epsilon,
    );
    let mut rng = stream_rng(seed, 1);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut grad = vec![0.0; model.num_params()];
    let mut scratch = Scratch::default();
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    history.push(probe_mse(&model, inputs, targets, probe));
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            let mut loss = 0.0;
            for &i in batch {
                loss += model.accumulate_gradient(&inputs[i], &targets[i], scale, &mut grad, &mut scratch);
            }
            if !loss.is_finite() {
                return Err(Error::Training { member, epoch });
            }
            opt.step(model.params_mut(), &grad);
        }
        let mse = probe_mse(&model, inputs, targets, probe);
        if !mse.is_finite() || model.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::Training { member, epoch });
        }
        history.push(mse);
    }
    Ok((model, history))
}

/// One entry of a recursive rollout.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutStep {
    pub position: Point,
    pub stats: PredictionStats,
}

/// Predicts `horizon` future positions by feeding the ensemble mean back into
/// the window. While fewer than `window` positions are known, the agent is
/// extrapolated at walking speed across the road (downward when it starts on
/// the `y >= 0` side), with zero covariance.
pub fn rollout<P: Predictor + ?Sized>(
    predictor: &P,
    history: &[Point],
    horizon: usize,
    sample_rate_hz: f64,
) -> Vec<RolloutStep> {
    if history.is_empty() {
        return Vec::new();
    }
    let window = predictor.window();
    let step = BOOTSTRAP_SPEED / sample_rate_hz;
    let dir = if history[0][1] >= 0.0 { -1.0 } else { 1.0 };
    let mut known = history.to_vec();
    let mut out = Vec::with_capacity(horizon);
    while out.len() < horizon {
        let stats = if known.len() < window {
            let last = *known.last().unwrap();
            PredictionStats::certain([last[0], last[1] + dir * step])
        } else {
            predictor.predict(&known[known.len() - window..])
        };
        known.push(stats.mean);
        out.push(RolloutStep {
            position: stats.mean,
            stats,
        });
    }
    out
}

#[derive(Serialize, Deserialize)]
struct WeightFile {
    version: u32,
    n: usize,
    window: usize,
    members: Vec<MemberRecord>,
}

#[derive(Serialize, Deserialize)]
struct MemberRecord {
    seed: u64,
    layers: Vec<LayerRecord>,
}

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl Ensemble {
    pub fn to_json(&self) -> String {
        let file = WeightFile {
            version: WEIGHT_FILE_VERSION,
            n: self.members.len(),
            window: self.window,
            members: self
                .members
                .iter()
                .zip(&self.seeds)
                .map(|(m, &seed)| MemberRecord {
                    seed,
                    layers: (0..m.num_layers())
                        .map(|l| {
                            let (w, b) = m.layer(l);
                            LayerRecord {
                                rows: m.sizes()[l + 1],
                                cols: m.sizes()[l],
                                weights: w.to_vec(),
                                biases: b.to_vec(),
                            }
                        })
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_string(&file).expect("weights are finite")
    }

    pub fn from_json(text: &str) -> Result<Ensemble> {
        let file: WeightFile =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("weight file: {e}")))?;
        if file.version != WEIGHT_FILE_VERSION {
            return Err(Error::Format(format!(
                "weight file version {} (expected {WEIGHT_FILE_VERSION})",
                file.version
            )));
        }
        if file.members.len() != file.n {
            return Err(Error::Format(format!(
                "weight file declares n={} but holds {} members",
                file.n,
                file.members.len()
            )));
        }
        let mut members = Vec::with_capacity(file.n);
        let mut sizes_ref: Option<Vec<usize>> = None;
        for (mi, rec) in file.members.iter().enumerate() {
            let mut sizes = Vec::new();
            let mut layers = Vec::new();
            for (li, l) in rec.layers.iter().enumerate() {
                let bad = |msg: String| Error::Format(format!("member {mi} layer {li}: {msg}"));
                if l.weights.len() != l.rows * l.cols {
                    return Err(bad(format!(
                        "{} weights for a {}x{} matrix",
                        l.weights.len(),
                        l.rows,
                        l.cols
                    )));
                }
                if l.biases.len() != l.rows {
                    return Err(bad(format!("{} biases for {} rows", l.biases.len(), l.rows)));
                }
                match sizes.last() {
                    None => sizes.push(l.cols),
                    Some(&prev) if prev != l.cols => {
                        return Err(bad(format!("expects {} inputs, previous layer gives {prev}", l.cols)))
                    }
                    Some(_) => {}
                }
                sizes.push(l.rows);
                layers.push((l.weights.clone(), l.biases.clone()));
            }
            if sizes.len() < 2 || sizes[0] != 2 * file.window || *sizes.last().unwrap() != 2 {
                return Err(Error::Format(format!(
                    "member {mi}: architecture {sizes:?} does not map {} inputs to 2 outputs",
                    2 * file.window
                )));
            }
            if let Some(r) = &sizes_ref {
                if *r != sizes {
                    return Err(Error::Format(format!(
                        "member {mi}: architecture {sizes:?} differs from member 0 {r:?}"
                    )));
                }
            } else {
                sizes_ref = Some(sizes.clone());
            }
            members.push(MlpModel::from_layers(&sizes, &layers).expect("shapes checked"));
        }
        let seeds: Vec<u64> = file.members.iter().map(|m| m.seed).collect();
        if members.len() < 2 {
            return Err(Error::Format("weight file holds fewer than 2 members".into()));
        }
        Ok(Ensemble {
            window: file.window,
            members,
            seeds,
        })
    }
}

pub fn save_weights(e: &Ensemble, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|err| Error::io(path, err))?;
    let mut w = BufWriter::new(f);
    w.write_all(e.to_json().as_bytes())
        .and_then(|_| w.write_all(b"\n"))
        .and_then(|_| w.flush())
        .map_err(|err| Error::io(path, err))
}

pub fn load_weights(path: &Path) -> Result<Ensemble> {
    let f = File::open(path).map_err(|err| Error::io(path, err))?;
    let mut text = String::new();
    std::io::Read::read_to_string(&mut BufReader::new(f), &mut text)
        .map_err(|err| Error::io(path, err))?;
    Ensemble::from_json(&text)
}
