//! Newline-delimited text logs standing in for the broker topics and the
//! tracker export.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::engine::{PayloadRecord, RunLog};
use crate::grid::{GroundTruthSample, FEATURES_PER_NODE};

#[derive(Serialize, Deserialize)]
pub(crate) struct PayloadLine {
    pub topic: String,
    pub t: f64,
    pub samples: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct GroundTruthLine {
    pub t: f64,
    pub pos_mm: [f64; 3],
    pub rot_rad: [f64; 3],
}

pub fn payload_line(rec: &PayloadRecord) -> String {
    let line = PayloadLine {
        topic: rec.node.topic(),
        t: rec.t,
        samples: rec.samples.iter().map(|m| m.to_array().to_vec()).collect(),
    };
    debug_assert!(line.samples.iter().all(|s| s.len() == FEATURES_PER_NODE));
    serde_json::to_string(&line).expect("finite values serialize")
}

pub fn ground_truth_line(s: &GroundTruthSample) -> String {
    serde_json::to_string(&GroundTruthLine {
        t: s.t,
        pos_mm: s.pos_mm,
        rot_rad: s.rot_rad,
    })
    .expect("finite values serialize")
}

pub fn write_payload_log<W: Write>(run: &RunLog, mut w: W) -> std::io::Result<()> {
    for rec in &run.payloads {
        writeln!(w, "{}", payload_line(rec))?;
    }
    w.flush()
}

pub fn write_ground_truth_log<W: Write>(run: &RunLog, mut w: W) -> std::io::Result<()> {
    for s in &run.ground_truth {
        writeln!(w, "{}", ground_truth_line(s))?;
    }
    w.flush()
}

/// Reads a ground-truth log; errors carry the 1-based line number.
pub fn read_ground_truth_log<R: BufRead>(r: R) -> crate::Result<Vec<GroundTruthSample>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| crate::Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let g: GroundTruthLine = serde_json::from_str(&line).map_err(|e| crate::Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(GroundTruthSample {
            t: g.t,
            pos_mm: g.pos_mm,
            rot_rad: g.rot_rad,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Measurement, NodeId};

    #[test]
    fn payload_line_layout() {
        let rec = PayloadRecord {
            node: NodeId::new(3, 7),
            t: 4.5,
            samples: vec![Measurement {
                accel: [0.0, 0.1, 0.2],
                gyro: [1.0, 2.0, 3.0],
                mag: [20.0, 0.5, 44.0],
                rssi: -61.25,
            }],
        };
        assert_eq!(
            payload_line(&rec),
            r#"{"topic":"/imu_reader/3/7","t":4.5,"samples":[[0.0,0.1,0.2,1.0,2.0,3.0,20.0,0.5,44.0,-61.25]]}"#
        );
    }

    #[test]
    fn ground_truth_round_trip() {
        let s = GroundTruthSample {
            t: 0.005,
            pos_mm: [1234.5, 6789.25, 0.0],
            rot_rad: [0.0, 0.0, 1.5707963267948966],
        };
        let line = ground_truth_line(&s);
        assert!(line.starts_with(r#"{"t":0.005,"pos_mm":[1234.5,6789.25,0.0],"rot_rad":"#));
        let back = read_ground_truth_log(line.as_bytes()).unwrap();
        assert_eq!(back, vec![s]);
        assert!(matches!(
            read_ground_truth_log("{\"t\":1}\n".as_bytes()),
            Err(crate::Error::Parse { line: 1, .. })
        ));
    }
}
