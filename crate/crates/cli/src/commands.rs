use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use oodmpc::conformal::{
    calculate_probability, calibrate_with, coverage_distribution, nonconformity, required_calibration_size,
    CalibrationTarget, Detector, ScoreSet,
};
use oodmpc::data::{load_trajectories, reflect_balance, save_trajectories, split_dataset, synth_generate};
use oodmpc::gmm::{classify_trajectory, gmm_score, load_gmm_predictions, scores_by_agent};
use oodmpc::nn::{init_ensemble, load_weights, save_weights, train_ensemble, Ensemble, Predictor};
use oodmpc::sim::{coverage_experiment, run_batch, run_trial, write_coverage_csv, TrialSpec};

use crate::config::RunConfig;
use crate::Command;

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config_digest: String,
    config: &'a RunConfig,
    artifacts: Vec<String>,
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Synth => "synth",
        Command::Train => "train",
        Command::Calibrate => "calibrate",
        Command::Simulate(_) => "simulate",
        Command::Batch(_) => "batch",
        Command::Coverage(_) => "coverage",
        Command::BetaProb(_) => "beta-prob",
        Command::PlanCalibration(_) => "plan-calibration",
        Command::GmmDetect => "gmm-detect",
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value)?;
    use std::io::Write;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn dispatch(command: &Command, cfg: &RunConfig) -> Result<()> {
    let out = &cfg.paths.output_dir;
    fs::create_dir_all(out).with_context(|| format!("creating output dir {}", out.display()))?;
    let artifacts = match command {
        Command::Synth => synth(cfg)?,
        Command::Train => train(cfg)?,
        Command::Calibrate => calibrate(cfg)?,
        Command::Simulate(_) => simulate(cfg)?,
        Command::Batch(_) => batch(cfg)?,
        Command::Coverage(_) => coverage(cfg)?,
        Command::BetaProb(_) => beta_prob(cfg)?,
        Command::PlanCalibration(_) => plan_calibration(cfg)?,
        Command::GmmDetect => gmm_detect(cfg)?,
    };
    let name = command_name(command);
    let manifest = Manifest {
        command: name,
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        config_digest: cfg.digest(),
        config: cfg,
        artifacts: artifacts.iter().map(|p| p.display().to_string()).collect(),
    };
    write_json(&cfg.paths.output(&format!("manifest_{name}.json")), &manifest)
}

fn synth(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let trajs = synth_generate(&cfg.synth.params, cfg.synth.count, cfg.seed)?;
    let path = cfg.paths.data.clone().unwrap_or_else(|| cfg.paths.output("trajectories.csv"));
    save_trajectories(&path, &trajs)?;
    println!("wrote {} trajectories to {}", trajs.len(), path.display());
    Ok(vec![path])
}

fn member_seeds(seed: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| seed.wrapping_mul(1_000_003).wrapping_add(i)).collect()
}

fn train(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let mut trajs = load_trajectories(cfg.paths.data(), cfg.scenario.rate_hz)?;
    if cfg.train.reflect {
        trajs = reflect_balance(&trajs);
    }
    let split = split_dataset(&trajs, cfg.train.n_test, cfg.seed)?;
    let init = init_ensemble(cfg.train.ensemble_size, &member_seeds(cfg.seed, cfg.train.ensemble_size))?;
    let (ensemble, report) = train_ensemble(&init, &split.train_pairs, &cfg.train.optimizer)?;
    let scores: Vec<f64> = split
        .calibration_pairs
        .iter()
        .map(|p| nonconformity(&ensemble.predict(&p.window)))
        .collect::<oodmpc::Result<_>>()?;
    let scores = ScoreSet::new(scores)?;

    let weights = cfg.paths.weights();
    save_weights(&ensemble, &weights)?;
    let score_path = cfg.paths.scores();
    scores.save_csv(&score_path)?;
    let test = cfg.paths.test_data();
    save_trajectories(&test, &split.test_trajectories)?;
    let report_path = cfg.paths.output("train_report.json");
    write_json(&report_path, &report)?;
    let final_mse: Vec<f64> = report.probe_mse.iter().filter_map(|h| h.last().copied()).collect();
    println!(
        "trained {} members on {} pairs; final probe MSE {:?}",
        ensemble.len(),
        split.train_pairs.len(),
        final_mse
    );
    println!("{} calibration scores, {} test trajectories", scores.len(), split.test_trajectories.len());
    Ok(vec![weights, score_path, test, report_path])
}

fn calibrate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let scores = ScoreSet::load_csv(&cfg.paths.scores())?;
    let target = cfg.conformal.target().context("conformal: set exactly one of delta and k")?;
    let d = calibrate_with(&scores, target, cfg.conformal.round_decimals)?;
    let path = cfg.paths.detector();
    d.save(&path)?;
    let cov = d.coverage_distribution();
    println!(
        "N={} K={} C={} (coverage ~ Beta({}, {}), mean {:.4})",
        d.n,
        d.k,
        d.threshold,
        cov.a,
        cov.b,
        cov.mean()
    );
    Ok(vec![path])
}

struct Loaded {
    ensemble: Ensemble,
    detector: Detector,
    tests: Vec<oodmpc::data::Trajectory>,
}

fn load_inputs(cfg: &RunConfig) -> Result<Loaded> {
    Ok(Loaded {
        ensemble: load_weights(&cfg.paths.weights())?,
        detector: Detector::load(&cfg.paths.detector())?,
        tests: load_trajectories(cfg.paths.test_data(), cfg.scenario.rate_hz)?,
    })
}

fn simulate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let inputs = load_inputs(cfg)?;
    let s = &cfg.simulate;
    let Some(source) = inputs.tests.get(s.source) else {
        bail!("simulate.source: index {} but only {} test trajectories", s.source, inputs.tests.len());
    };
    let spec = TrialSpec {
        mode: s.mode,
        fraud: s.fraud,
        seed: s.trial_seed,
    };
    let record = run_trial(&cfg.scenario, &spec, source, &inputs.ensemble, &inputs.detector)?;

    let trial = cfg.paths.output("trial.json");
    write_json(&trial, &record)?;
    let vehicle = cfg.paths.output("vehicle.csv");
    let f = File::create(&vehicle).with_context(|| format!("creating {}", vehicle.display()))?;
    record.write_vehicle_csv(BufWriter::new(f))?;
    let pedestrian = cfg.paths.output("pedestrian.csv");
    save_trajectories(&pedestrian, &[record.pedestrian_trajectory(cfg.scenario.rate_hz)?])?;

    let flags: Vec<usize> = record.evaluations().filter(|(_, e)| e.ood).map(|(t, _)| t).collect();
    println!(
        "{} {} trial on `{}`: {:?}, min distance {:.2} m, flagged at steps {:?}",
        s.mode.name(),
        if s.fraud { "fraud" } else { "nominal" },
        record.source_id,
        record.outcome,
        record.min_distance,
        flags
    );
    Ok(vec![trial, vehicle, pedestrian])
}

fn rate(r: Option<f64>) -> String {
    r.map(|v| format!("{:.1}%", 100.0 * v)).unwrap_or_else(|| "n/a".into())
}

fn batch(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let inputs = load_inputs(cfg)?;
    let plan = oodmpc::sim::BatchPlan {
        seed: cfg.seed,
        ..cfg.batch.clone()
    };
    let out = run_batch(&cfg.scenario, &plan, &inputs.tests, &inputs.ensemble, &inputs.detector)?;
    let path = cfg.paths.output("batch_report.json");
    write_json(&path, &out.report)?;
    for m in &out.report.modes {
        let name = m.mode.map(|x| x.name()).unwrap_or("?");
        let c = &m.confusion;
        println!(
            "{name}: nominal passed/stopped/collided {}/{}/{}, fraud {}/{}/{}; FPR {} ({}/{}), TPR {} ({}/{}), fallbacks {}",
            m.nominal.passed_safely,
            m.nominal.stopped_safely,
            m.nominal.collision,
            m.fraud.passed_safely,
            m.fraud.stopped_safely,
            m.fraud.collision,
            rate(m.false_positive_rate),
            c.false_positive,
            c.nominal_total(),
            rate(m.true_positive_rate),
            c.true_positive,
            c.ood_total(),
            m.fallbacks
        );
    }
    Ok(vec![path])
}

#[derive(Serialize)]
struct CoverageSummary {
    trials: usize,
    mean: f64,
    std: f64,
    beta_a: f64,
    beta_b: f64,
    beta_mean: f64,
    beta_std: f64,
    /// Kolmogorov-Smirnov distance to the Beta law.
    ks: f64,
}

fn coverage(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let ensemble = load_weights(&cfg.paths.weights())?;
    let c = oodmpc::sim::CoverageConfig {
        seed: cfg.seed,
        ..cfg.coverage.clone()
    };
    let samples = coverage_experiment(&cfg.synth.params, &ensemble, &c)?;
    let csv = cfg.paths.output("coverage.csv");
    let f = File::create(&csv).with_context(|| format!("creating {}", csv.display()))?;
    write_coverage_csv(BufWriter::new(f), &samples)?;

    let beta = coverage_distribution(c.calibration_size, c.k)?;
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    let ks = sorted.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = beta.cdf(x);
        d.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs())
    });
    let summary = CoverageSummary {
        trials: samples.len(),
        mean,
        std: var.sqrt(),
        beta_a: beta.a,
        beta_b: beta.b,
        beta_mean: beta.mean(),
        beta_std: beta.variance().sqrt(),
        ks,
    };
    let path = cfg.paths.output("coverage_summary.json");
    write_json(&path, &summary)?;
    println!(
        "{} trials: mean coverage {:.4} (Beta {:.4}), std {:.4} (Beta {:.4}), KS {:.4}",
        summary.trials, mean, summary.beta_mean, summary.std, summary.beta_std, ks
    );
    Ok(vec![csv, path])
}

#[derive(Serialize)]
struct BetaProbReport {
    n: usize,
    delta: f64,
    x1: f64,
    x2: f64,
    probability: f64,
}

fn beta_prob(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let b = &cfg.beta;
    let p = calculate_probability(b.n, b.delta, b.x1, b.x2)?;
    println!("P({} <= coverage <= {} | N={}, delta={}) = {:.4}", b.x1, b.x2, b.n, b.delta, p);
    let path = cfg.paths.output("beta_prob.json");
    write_json(
        &path,
        &BetaProbReport {
            n: b.n,
            delta: b.delta,
            x1: b.x1,
            x2: b.x2,
            probability: p,
        },
    )?;
    Ok(vec![path])
}

#[derive(Serialize)]
struct PlanReport {
    delta: f64,
    p_target: f64,
    x1: f64,
    x2: f64,
    precision: usize,
    n: usize,
    probability: f64,
}

fn plan_calibration(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let b = &cfg.beta;
    let n = required_calibration_size(b.delta, b.p_target, b.precision, b.x1, b.x2)?;
    let p = calculate_probability(n, b.delta, b.x1, b.x2)?;
    println!("N = {n} calibration points (P = {p:.4} >= {})", b.p_target);
    let path = cfg.paths.output("plan_calibration.json");
    write_json(
        &path,
        &PlanReport {
            delta: b.delta,
            p_target: b.p_target,
            x1: b.x1,
            x2: b.x2,
            precision: b.precision,
            n,
            probability: p,
        },
    )?;
    Ok(vec![path])
}

#[derive(Serialize)]
struct AgentVerdict {
    agent: String,
    steps: usize,
    max_score: f64,
    ood: bool,
}

#[derive(Serialize)]
struct GmmReport {
    threshold: f64,
    calibration: Option<Detector>,
    flagged: usize,
    agents: Vec<AgentVerdict>,
}

fn gmm_detect(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let g = &cfg.gmm;
    let calibration = match &g.calibration {
        Some(path) => {
            let preds = load_gmm_predictions(path)?;
            let scores = preds.iter().map(gmm_score).collect::<oodmpc::Result<Vec<_>>>()?;
            let set = ScoreSet::new(scores)?;
            Some(calibrate_with(&set, CalibrationTarget::Index(g.k), cfg.conformal.round_decimals)?)
        }
        None => None,
    };
    let threshold = match (&calibration, g.threshold) {
        (Some(d), _) => d.threshold,
        (None, Some(c)) => c,
        (None, None) => bail!("gmm: no calibration file and no threshold"),
    };
    let preds = load_gmm_predictions(g.predictions.as_ref().context("gmm.predictions")?)?;
    let agents: Vec<AgentVerdict> = scores_by_agent(&preds)?
        .into_iter()
        .map(|(agent, scores)| AgentVerdict {
            ood: classify_trajectory(&scores, threshold),
            max_score: scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            steps: scores.len(),
            agent,
        })
        .collect();
    let flagged = agents.iter().filter(|a| a.ood).count();
    println!("C = {threshold}: {flagged} of {} trajectories flagged OOD", agents.len());
    let path = cfg.paths.output("gmm_report.json");
    write_json(
        &path,
        &GmmReport {
            threshold,
            calibration,
            flagged,
            agents,
        },
    )?;
    Ok(vec![path])
}
