//! Frame dataset files: a header row `t,y_x,y_y,f_<strip>_<node>_<k>...`
//! followed by one row per frame. Values use the shortest representation
//! that parses back to the same `f64`, so a round trip is bit-exact.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::frames::{Frame, FrameDataset};
use crate::error::{Error, Result};
use crate::fsio::write_atomic;
use crate::grid::{GridSpec, FEATURES_PER_NODE};

pub fn header(grid: &GridSpec) -> Vec<String> {
    let mut cols = Vec::with_capacity(3 + grid.feature_count());
    cols.extend(["t", "y_x", "y_y"].map(String::from));
    for id in grid.nodes() {
        for k in 0..FEATURES_PER_NODE {
            cols.push(format!("f_{}_{}_{}", id.strip, id.node, k));
        }
    }
    cols
}

pub fn write_dataset(ds: &FrameDataset, path: &Path) -> Result<()> {
    let width = ds.grid.feature_count();
    if let Some(f) = ds.frames.iter().find(|f| f.features.len() != width) {
        return Err(Error::Schema(format!("frame at t={} has {} features, expected {width}", f.t, f.features.len())));
    }
    let head = header(&ds.grid).join(",");
    write_atomic(path, |w| {
        writeln!(w, "{head}")?;
        let mut row = String::with_capacity(24 * (width + 3));
        for f in &ds.frames {
            row.clear();
            let _ = write!(row, "{},{},{}", f.t, f.label[0], f.label[1]);
            for v in &f.features {
                let _ = write!(row, ",{v}");
            }
            row.push('\n');
            w.write_all(row.as_bytes())?;
        }
        Ok(())
    })
}

pub fn read_dataset(path: &Path, grid: &GridSpec) -> Result<FrameDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let expected = header(grid);
    let head = match lines.next() {
        Some(l) => l.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::Schema(format!("{}: empty file", path.display()))),
    };
    let cols: Vec<&str> = head.split(',').collect();
    if cols.len() != expected.len() {
        return Err(Error::Schema(format!(
            "{}: {} columns, expected {} for a {}x{} grid",
            path.display(),
            cols.len(),
            expected.len(),
            grid.n_strips,
            grid.nodes_per_strip
        )));
    }
    if let Some((a, b)) = cols.iter().zip(&expected).find(|(a, b)| **a != b.as_str()) {
        return Err(Error::Schema(format!("{}: column {a:?}, expected {b:?}", path.display())));
    }
    let mut frames = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                line: i + 2,
                msg: e.to_string(),
            })?;
        if vals.len() != expected.len() {
            return Err(Error::Schema(format!(
                "{}: row {} has {} values, expected {}",
                path.display(),
                i + 2,
                vals.len(),
                expected.len()
            )));
        }
        frames.push(Frame {
            t: vals[0],
            label: [vals[1], vals[2]],
            features: vals[3..].to_vec(),
        });
    }
    Ok(FrameDataset { grid: *grid, frames })
}

/// Infers `(strips, nodes)` from a dataset header.
pub fn sniff_dims(path: &Path) -> Result<(usize, usize)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut first = String::new();
    BufReader::new(file).read_line(&mut first).map_err(|e| Error::io(path, e))?;
    let last = first.trim_end().rsplit(',').next().unwrap_or("");
    let parts: Vec<&str> = last.split('_').collect();
    match parts.as_slice() {
        ["f", s, n, _] => Ok((
            s.parse().map_err(|_| Error::Schema(format!("bad column {last:?}")))?,
            n.parse().map_err(|_| Error::Schema(format!("bad column {last:?}")))?,
        )),
        _ => Err(Error::Schema(format!("{}: no feature columns in header", path.display()))),
    }
}
