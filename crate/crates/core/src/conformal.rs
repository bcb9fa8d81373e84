//! Conformal OOD monitor: spectral-norm nonconformity scores, threshold
//! calibration, and the Beta distribution of the resulting coverage.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::nn::PredictionStats;
use crate::special::{beta_quantile, regularized_incomplete_beta};
use crate::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-9;
/// Guard against `ceil` landing one above an exact integer because of
/// representation error in products like `(N + 1)(1 - delta)`.
const CEIL_GUARD: f64 = 1e-9;
/// A requested delta this close to an achievable `1 - K/(N+1)` is taken to
/// mean that K (deltas are usually quoted to four decimals).
const DELTA_SNAP: f64 = 5e-5;

/// Largest eigenvalue of a symmetric 2×2 PSD matrix.
pub fn spectral_norm(cov: &[[f64; 2]; 2]) -> Result<f64> {
    let [[a, b1], [b2, d]] = *cov;
    if ![a, b1, b2, d].iter().all(|v| v.is_finite()) {
        return Err(Error::arg("covariance has non-finite entries"));
    }
    if (b1 - b2).abs() > SYMMETRY_TOL {
        return Err(Error::arg(format!(
            "covariance is not symmetric: off-diagonals {b1} and {b2}"
        )));
    }
    let b = 0.5 * (b1 + b2);
    let lambda = 0.5 * (a + d) + (0.5 * (a - d)).hypot(b);
    Ok(lambda.max(0.0))
}

/// Nonconformity score of one prediction: the spectral norm of its
/// covariance.
pub fn nonconformity(stats: &PredictionStats) -> Result<f64> {
    spectral_norm(&stats.covariance)
}

/// A bag of nonconformity scores.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSet {
    scores: Vec<f64>,
    sorted: bool,
}

impl ScoreSet {
    pub fn new(scores: Vec<f64>) -> Result<ScoreSet> {
        if let Some((i, v)) = scores
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(Error::arg(format!(
                "score {i} is {v}; scores must be finite and non-negative"
            )));
        }
        let sorted = scores.windows(2).all(|w| w[0] <= w[1]);
        Ok(ScoreSet { scores, sorted })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn is_sorted(&self) -> bool {
        self.sorted
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.scores
    }

    pub fn into_sorted(mut self) -> ScoreSet {
        if !self.sorted {
            self.scores.sort_by(f64::total_cmp);
            self.sorted = true;
        }
        self
    }

    /// The K-th smallest score, `1 <= k <= len`.
    pub fn order_statistic(&self, k: usize) -> Result<f64> {
        if k == 0 || k > self.len() {
            return Err(Error::arg(format!(
                "order statistic {k} out of range 1..={}",
                self.len()
            )));
        }
        if self.sorted {
            return Ok(self.scores[k - 1]);
        }
        let mut tmp = self.scores.clone();
        let (_, kth, _) = tmp.select_nth_unstable_by(k - 1, f64::total_cmp);
        Ok(*kth)
    }

    /// SHA-256 of the sorted scores' bit patterns; identifies the
    /// calibration set independent of its order.
    pub fn digest(&self) -> String {
        let mut sorted = self.scores.clone();
        sorted.sort_by(f64::total_cmp);
        let mut hasher = Sha256::new();
        for v in &sorted {
            hasher.update(v.to_bits().to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }

    /// Writes a single-column CSV with header `rho`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["rho"]).map_err(csv_err)?;
        for v in &self.scores {
            w.write_record([format!("{v:?}")]).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Format(e.to_string()))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<ScoreSet> {
        let mut r = csv::ReaderBuilder::new().from_reader(reader);
        let headers = r.headers().map_err(csv_err)?.clone();
        if headers.len() != 1 || &headers[0] != "rho" {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header `rho`, found `{}`", headers.as_slice()),
            });
        }
        let mut scores = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let line = i as u64 + 2;
            let rec = rec.map_err(|e| Error::Parse {
                line,
                msg: e.to_string(),
            })?;
            let v: f64 = rec[0].trim().parse().map_err(|e| Error::Parse {
                line,
                msg: format!("bad score `{}`: {e}", &rec[0]),
            })?;
            scores.push(v);
        }
        ScoreSet::new(scores)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(BufWriter::new(f))
    }

    pub fn load_csv(path: &Path) -> Result<ScoreSet> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        ScoreSet::read_csv(f)
    }
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    Error::Parse {
        line,
        msg: e.to_string(),
    }
}

/// How the calibration index is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationTarget {
    Delta(f64),
    Index(usize),
}

/// A calibrated OOD threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detector {
    #[serde(rename = "C")]
    pub threshold: f64,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub delta: f64,
    pub score_digest: String,
}

impl Detector {
    /// `true` (B = 1) iff `rho` strictly exceeds the threshold.
    pub fn detect(&self, rho: f64) -> bool {
        rho > self.threshold
    }

    pub fn coverage_distribution(&self) -> CoverageDistribution {
        CoverageDistribution {
            a: self.k as f64,
            b: (self.n + 1 - self.k) as f64,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        serde_json::to_writer_pretty(&mut w, self).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Detector> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let d: Detector = serde_json::from_reader(std::io::BufReader::new(f))
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if d.k == 0 || d.k > d.n || !d.threshold.is_finite() {
            return Err(Error::Format(format!(
                "{}: inconsistent detector (K={}, N={}, C={})",
                path.display(),
                d.k,
                d.n,
                d.threshold
            )));
        }
        Ok(d)
    }
}

/// `ceil(x)` that ignores representation noise just above an integer.
pub(crate) fn guarded_ceil(x: f64) -> f64 {
    (x - CEIL_GUARD).ceil()
}

/// `K = ceil((N + 1)(1 - delta))`.
pub fn index_for_delta(n: usize, delta: f64) -> usize {
    guarded_ceil((n as f64 + 1.0) * (1.0 - delta)).max(0.0) as usize
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::arg(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

/// Resolves a calibration target to an index `K` for `n` scores.
pub fn resolve_index(n: usize, target: CalibrationTarget) -> Result<usize> {
    if n == 0 {
        return Err(Error::arg("calibration needs at least one score"));
    }
    let k = match target {
        CalibrationTarget::Index(k) => {
            if k == 0 {
                return Err(Error::arg("K must be at least 1"));
            }
            k
        }
        CalibrationTarget::Delta(delta) => {
            check_delta(delta)?;
            let k = index_for_delta(n, delta);
            let snapped = k.saturating_sub(1);
            if snapped >= 1 && (1.0 - snapped as f64 / (n as f64 + 1.0) - delta).abs() <= DELTA_SNAP
            {
                snapped
            } else {
                k.max(1)
            }
        }
    };
    if k > n {
        return Err(Error::Calibration {
            n,
            k,
            min_delta: 1.0 / (n as f64 + 1.0),
        });
    }
    Ok(k)
}

/// Rounds `v` up at the given number of decimals; the result is never below
/// `v`.
pub fn round_up(v: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    let mut r = (v * scale - CEIL_GUARD).ceil() / scale;
    if r < v {
        r = ((v * scale).ceil() + 1.0) / scale;
    }
    r
}

/// Calibrates with the threshold rounded up at the third decimal.
pub fn calibrate(scores: &ScoreSet, target: CalibrationTarget) -> Result<Detector> {
    calibrate_with(scores, target, Some(3))
}

/// Calibrates with optional round-up at `decimals` places (`None` keeps the
/// exact order statistic).
pub fn calibrate_with(
    scores: &ScoreSet,
    target: CalibrationTarget,
    decimals: Option<u32>,
) -> Result<Detector> {
    let n = scores.len();
    let k = resolve_index(n, target)?;
    let rho_k = scores.order_statistic(k)?;
    let threshold = match decimals {
        Some(d) => round_up(rho_k, d),
        None => rho_k,
    };
    Ok(Detector {
        threshold,
        k,
        n,
        delta: 1.0 - k as f64 / (n as f64 + 1.0),
        score_digest: scores.digest(),
    })
}

/// Beta(a, b) law of the empirical coverage of a calibrated threshold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageDistribution {
    pub a: f64,
    pub b: f64,
}

/// `Beta(K, N + 1 - K)`.
pub fn coverage_distribution(n: usize, k: usize) -> Result<CoverageDistribution> {
    if k == 0 || k > n {
        return Err(Error::arg(format!("K={k} outside 1..=N with N={n}")));
    }
    Ok(CoverageDistribution {
        a: k as f64,
        b: (n + 1 - k) as f64,
    })
}

impl CoverageDistribution {
    pub fn mean(&self) -> f64 {
        self.a / (self.a + self.b)
    }

    pub fn variance(&self) -> f64 {
        let s = self.a + self.b;
        self.a * self.b / (s * s * (s + 1.0))
    }

    /// CDF; arguments outside [0, 1] are clamped.
    pub fn cdf(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        regularized_incomplete_beta(x, self.a, self.b).expect("shapes validated at construction")
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        beta_quantile(p, self.a, self.b)
    }

    /// `P(x1 <= coverage <= x2)`.
    pub fn probability_between(&self, x1: f64, x2: f64) -> f64 {
        self.cdf(x2) - self.cdf(x1)
    }
}

fn check_bounds(delta: f64, x1: f64, x2: f64) -> Result<()> {
    check_delta(delta)?;
    let target = 1.0 - delta;
    if !(0.0 <= x1 && x1 < target && target < x2 && x2 <= 1.0) {
        return Err(Error::arg(format!(
            "bounds must satisfy 0 <= x1 < 1 - delta < x2 <= 1, got x1={x1}, 1-delta={target}, x2={x2}"
        )));
    }
    Ok(())
}

/// Probability that the empirical coverage of an `n`-point calibration at
/// level `delta` lands in `[x1, x2]`.
pub fn calculate_probability(n: usize, delta: f64, x1: f64, x2: f64) -> Result<f64> {
    check_bounds(delta, x1, x2)?;
    let k = index_for_delta(n, delta);
    if k == 0 || k > n {
        return Err(Error::Calibration {
            n,
            k,
            min_delta: 1.0 / (n as f64 + 1.0),
        });
    }
    Ok(coverage_distribution(n, k)?.probability_between(x1, x2))
}

/// Like [`calculate_probability`] but total over `n`: when K exceeds N the
/// threshold is infinite and the coverage is exactly 1.
fn probability_or_degenerate(n: usize, delta: f64, x1: f64, x2: f64) -> Result<f64> {
    let k = index_for_delta(n, delta);
    if n == 0 || k > n {
        return Ok(if x2 >= 1.0 { 1.0 } else { 0.0 });
    }
    calculate_probability(n, delta, x1, x2)
}

/// Starting bracket `(N_lo, N_hi)` for the calibration-size search.
pub fn initial_bracket(delta: f64) -> Result<(usize, usize)> {
    check_delta(delta)?;
    let lo = guarded_ceil((2.0 - delta) / delta) as usize;
    let hi = lo + guarded_ceil(2.0 / (1.0 - delta)) as usize;
    Ok((lo, hi))
}

const SEARCH_CAP: usize = 10_000;

/// Bisection for a calibration size whose coverage lands in `[x1, x2]` with
/// probability at least `p_target`. `precision` is the final bracket width.
pub fn required_calibration_size(
    delta: f64,
    p_target: f64,
    precision: usize,
    x1: f64,
    x2: f64,
) -> Result<usize> {
    check_bounds(delta, x1, x2)?;
    if !(p_target > 0.0 && p_target < 1.0) {
        return Err(Error::arg(format!("P must lie in (0, 1), got {p_target}")));
    }
    if precision < 1 {
        return Err(Error::arg("precision must be at least 1"));
    }
    let prob = |n: usize| probability_or_degenerate(n, delta, x1, x2);
    let (mut n_lo, mut n_hi) = initial_bracket(delta)?;
    let mut p_lo = prob(n_lo)?;
    let mut p_hi = prob(n_hi)?;
    let mut iterations = 0;
    while n_hi.abs_diff(n_lo) > precision {
        iterations += 1;
        if iterations > SEARCH_CAP {
            return Err(Error::Search(SEARCH_CAP));
        }
        if p_hi < p_target {
            n_hi = n_hi.checked_mul(2).ok_or(Error::Search(iterations))?;
            p_hi = prob(n_hi)?;
        } else if p_lo > p_target {
            n_lo = n_lo.div_ceil(2);
            p_lo = prob(n_lo)?;
        } else {
            let n_test = (n_lo + n_hi).div_ceil(2);
            let p_test = prob(n_test)?;
            if p_test < p_target {
                n_lo = n_test;
                p_lo = p_test;
            } else {
                n_hi = n_test;
                p_hi = p_test;
            }
        }
    }
    let n = (n_lo + n_hi).div_ceil(2);
    if prob(n)? >= p_target {
        Ok(n)
    } else if p_hi >= p_target {
        Ok(n_hi)
    } else {
        Err(Error::Search(iterations))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(v: &[f64]) -> ScoreSet {
        ScoreSet::new(v.to_vec()).unwrap()
    }

    #[test]
    fn spectral_norm_examples() {
        assert_eq!(spectral_norm(&[[0.0, 0.0], [0.0, 0.0]]).unwrap(), 0.0);
        assert_eq!(spectral_norm(&[[3.0, 0.0], [0.0, 1.0]]).unwrap(), 3.0);
        assert!((spectral_norm(&[[2.0, 1.0], [1.0, 2.0]]).unwrap() - 3.0).abs() < 1e-15);
        assert!(spectral_norm(&[[1.0, 0.1], [0.0, 1.0]]).is_err());
    }

    #[test]
    fn k_for_rounded_delta() {
        assert_eq!(resolve_index(100, CalibrationTarget::Delta(0.0396)).unwrap(), 97);
        assert_eq!(index_for_delta(1000, 0.04), 961);
        assert_eq!(resolve_index(100, CalibrationTarget::Delta(0.05)).unwrap(), 96);
    }

    #[test]
    fn infeasible_delta_reports_resolution() {
        let err = calibrate(&set(&[0.3]), CalibrationTarget::Delta(0.4)).unwrap_err();
        match err {
            Error::Calibration { n, k, min_delta } => {
                assert_eq!((n, k), (1, 2));
                assert!((min_delta - 0.5).abs() < 1e-15);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn threshold_round_up() {
        assert_eq!(round_up(0.0114, 3), 0.012);
        assert_eq!(round_up(0.012, 3), 0.012);
        assert_eq!(round_up(0.0, 3), 0.0);
        for i in 0..10_000 {
            let v = i as f64 * 1.37e-5;
            let r = round_up(v, 3);
            assert!(r >= v && r - v < 1e-3 + 1e-12, "{v} -> {r}");
        }
    }

    #[test]
    fn calibrate_picks_kth_order_statistic() {
        let mut scores: Vec<f64> = (1..=96).map(|i| i as f64 * 1e-4).collect();
        scores.extend([0.0114, 0.05, 0.06, 0.07]);
        scores.reverse();
        let d = calibrate(&set(&scores), CalibrationTarget::Delta(0.0396)).unwrap();
        assert_eq!(d.k, 97);
        assert_eq!(d.threshold, 0.012);
        let exact = calibrate_with(&set(&scores), CalibrationTarget::Index(97), None).unwrap();
        assert_eq!(exact.threshold, 0.0114);
        assert!((d.delta - 4.0 / 101.0).abs() < 1e-15);
    }

    #[test]
    fn delta_and_index_agree() {
        let scores = set(&(0..50).map(|i| (i * 7 % 50) as f64).collect::<Vec<_>>());
        for delta in [0.02, 0.1, 0.25, 0.5] {
            let a = calibrate(&scores, CalibrationTarget::Delta(delta)).unwrap();
            let b = calibrate(&scores, CalibrationTarget::Index(a.k)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn detect_boundary_is_nominal() {
        let d = Detector {
            threshold: 0.012,
            k: 97,
            n: 100,
            delta: 0.0396,
            score_digest: String::new(),
        };
        assert!(!d.detect(0.012));
        assert!(!d.detect(0.0));
        assert!(d.detect(0.5));
    }

    #[test]
    fn coverage_distribution_shapes() {
        let c = coverage_distribution(100, 97).unwrap();
        assert_eq!((c.a, c.b), (97.0, 4.0));
        assert!((c.mean() - 97.0 / 101.0).abs() < 1e-15);
        let c = coverage_distribution(1000, 961).unwrap();
        assert_eq!((c.a, c.b), (961.0, 40.0));
        let u = coverage_distribution(1, 1).unwrap();
        assert!((u.cdf(0.3) - 0.3).abs() < 1e-14);
        assert!(coverage_distribution(10, 11).is_err());
        assert!(coverage_distribution(10, 0).is_err());
    }

    #[test]
    fn probability_examples() {
        let p = calculate_probability(1000, 0.04, 0.95, 0.97).unwrap();
        assert!((p - 0.8965).abs() < 5e-4, "{p}");
        let total = calculate_probability(1000, 0.04, 0.0, 1.0).unwrap();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(calculate_probability(1000, 0.04, 0.97, 0.95).is_err());
    }

    #[test]
    fn bracket_from_delta() {
        assert_eq!(initial_bracket(0.04).unwrap(), (49, 52));
    }

    #[test]
    fn score_csv_round_trip() {
        let s = set(&[0.1, 1e-17, 3.0, 0.30000000000000004]);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"rho\n"));
        let back = ScoreSet::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.digest(), s.digest());
    }

    #[test]
    fn digest_ignores_order() {
        assert_eq!(set(&[1.0, 2.0]).digest(), set(&[2.0, 1.0]).digest());
        assert_ne!(set(&[1.0, 2.0]).digest(), set(&[1.0, 2.5]).digest());
    }

    #[test]
    fn rejects_bad_scores() {
        assert!(ScoreSet::new(vec![0.1, -0.1]).is_err());
        assert!(ScoreSet::new(vec![f64::INFINITY]).is_err());
    }
}
