use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Point, Result};

/// Time-indexed 2-D pedestrian positions sampled at a fixed rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub sample_rate_hz: f64,
    pub positions: Vec<Point>,
}

impl Trajectory {
    pub fn new(id: impl Into<String>, sample_rate_hz: f64, positions: Vec<Point>) -> Result<Self> {
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::arg(format!("sample rate must be positive, got {sample_rate_hz}")));
        }
        if positions.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::arg("trajectory positions must be finite"));
        }
        Ok(Trajectory {
            id: id.into(),
            sample_rate_hz,
            positions,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// End-y minus start-y; zero for empty or single-point trajectories.
    pub fn net_vertical(&self) -> f64 {
        match (self.positions.first(), self.positions.last()) {
            (Some(a), Some(b)) => b[1] - a[1],
            _ => 0.0,
        }
    }

    pub fn step_seconds(&self) -> f64 {
        1.0 / self.sample_rate_hz
    }
}

#[derive(Debug, Deserialize)]
struct Row {
    id: String,
    step: u64,
    x: f64,
    y: f64,
}

/// Reads the `id,step,x,y` CSV format from any reader.
///
/// Trajectories are returned in order of first appearance. Step indices of
/// each id must be unique and cover `0..len` exactly; rows may be in any
/// order.
pub fn read_trajectories<R: Read>(reader: R, sample_rate_hz: f64) -> Result<Vec<Trajectory>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?
        .clone();
    if headers.is_empty() {
        return Ok(Vec::new());
    }
    let expected = ["id", "step", "x", "y"];
    if headers.iter().ne(expected.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header `id,step,x,y`, found `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<(u64, Point, u64)>> = HashMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row: Row = record
            .deserialize(Some(&headers))
            .map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        if !(row.x.is_finite() && row.y.is_finite()) {
            return Err(Error::Parse { line, msg: "non-finite coordinate".into() });
        }
        let entry = rows.entry(row.id.clone()).or_insert_with(|| {
            order.push(row.id.clone());
            Vec::new()
        });
        entry.push((row.step, [row.x, row.y], line));
    }

    let mut out = Vec::with_capacity(order.len());
    for id in order {
        let mut pts = rows.remove(&id).unwrap_or_default();
        pts.sort_by_key(|p| p.0);
        for (expected_step, (step, _, line)) in pts.iter().enumerate() {
            let expected_step = expected_step as u64;
            if *step != expected_step {
                let msg = if *step < expected_step {
                    format!("duplicate step {step} for id `{id}` (line {line})")
                } else {
                    format!("missing step {expected_step} for id `{id}`: steps must start at 0 and be contiguous")
                };
                return Err(Error::Format(msg));
            }
        }
        let positions = pts.into_iter().map(|p| p.1).collect();
        out.push(Trajectory::new(id, sample_rate_hz, positions)?);
    }
    Ok(out)
}

/// Loads a trajectory CSV file.
pub fn load_trajectories(path: impl AsRef<Path>, sample_rate_hz: f64) -> Result<Vec<Trajectory>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_trajectories(file, sample_rate_hz)
}

pub fn write_trajectories<W: Write>(writer: W, trajs: &[Trajectory]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(["id", "step", "x", "y"]).map_err(csv_err)?;
    for t in trajs {
        for (step, p) in t.positions.iter().enumerate() {
            w.write_record([t.id.clone(), step.to_string(), p[0].to_string(), p[1].to_string()])
                .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}

pub fn save_trajectories(path: impl AsRef<Path>, trajs: &[Trajectory]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_trajectories(file, trajs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_for(ids: &[&str], len: usize) -> String {
        let mut s = String::from("id,step,x,y\n");
        for id in ids {
            for k in 0..len {
                s += &format!("{id},{k},{},{}\n", k as f64 * 0.1, -(k as f64) * 0.05);
            }
        }
        s
    }

    #[test]
    fn counts_and_lengths_preserved() {
        let trajs = read_trajectories(csv_for(&["a", "b"], 154).as_bytes(), 23.976).unwrap();
        assert_eq!(trajs.len(), 2);
        assert!(trajs.iter().all(|t| t.len() == 154));
        assert_eq!(trajs[0].id, "a");
        assert_eq!(trajs[1].positions[3], [0.30000000000000004, -0.15000000000000002]);
    }

    #[test]
    fn empty_file_is_empty_list() {
        assert!(read_trajectories("".as_bytes(), 23.976).unwrap().is_empty());
        assert!(read_trajectories("id,step,x,y\n".as_bytes(), 23.976).unwrap().is_empty());
    }

    #[test]
    fn duplicate_step_is_format_error() {
        let s = "id,step,x,y\na,0,0,0\na,1,0,1\na,1,0,2\n";
        let err = read_trajectories(s.as_bytes(), 23.976).unwrap_err();
        assert!(matches!(err, Error::Format(ref m) if m.contains("duplicate")), "{err}");
    }

    #[test]
    fn gap_in_steps_is_format_error() {
        let s = "id,step,x,y\na,0,0,0\na,2,0,1\n";
        assert!(matches!(read_trajectories(s.as_bytes(), 23.976), Err(Error::Format(_))));
        let s = "id,step,x,y\na,1,0,0\n";
        assert!(matches!(read_trajectories(s.as_bytes(), 23.976), Err(Error::Format(_))));
    }

    #[test]
    fn malformed_row_names_line() {
        let s = "id,step,x,y\na,0,0,0\na,1,zero,1\n";
        match read_trajectories(s.as_bytes(), 23.976) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn rows_out_of_order_are_sorted() {
        let s = "id,step,x,y\na,1,1,1\na,0,0,0\n";
        let t = read_trajectories(s.as_bytes(), 10.0).unwrap();
        assert_eq!(t[0].positions, vec![[0.0, 0.0], [1.0, 1.0]]);
    }

    #[test]
    fn write_then_read_is_lossless() {
        let t = Trajectory::new("p7", 23.976, vec![[0.1, 1.0 / 3.0], [1e-17, -2.5]]).unwrap();
        let mut buf = Vec::new();
        write_trajectories(&mut buf, std::slice::from_ref(&t)).unwrap();
        let back = read_trajectories(buf.as_slice(), 23.976).unwrap();
        assert_eq!(back, vec![t]);
    }
}
