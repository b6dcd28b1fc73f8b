//! Grid geometry and the shared measurement types.
//!
//! Node ids are 1-based (strip, node) pairs as they appear in topics and file
//! headers; [`GridSpec::index`] gives the 0-based linear position used for
//! feature layout (strip ascending, then node ascending).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of scalar features one node reports per sample.
pub const FEATURES_PER_NODE: usize = 10;

/// Feature names in the fixed per-sample order.
pub const FEATURE_NAMES: [&str; FEATURES_PER_NODE] =
    ["ax", "ay", "az", "gx", "gy", "gz", "mx", "my", "mz", "rssi"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_strips: usize,
    pub nodes_per_strip: usize,
    /// meters
    pub hall_length: f64,
    /// meters
    pub hall_width: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            n_strips: 23,
            nodes_per_strip: 15,
            hall_length: 30.0,
            hall_width: 15.0,
        }
    }
}

impl GridSpec {
    pub fn new(n_strips: usize, nodes_per_strip: usize, hall_length: f64, hall_width: f64) -> Result<Self> {
        let g = Self {
            n_strips,
            nodes_per_strip,
            hall_length,
            hall_width,
        };
        g.validate()?;
        Ok(g)
    }

    /// A grid with 1 m node spacing in both directions.
    pub fn unit_spaced(n_strips: usize, nodes_per_strip: usize) -> Result<Self> {
        Self::new(n_strips, nodes_per_strip, n_strips as f64, nodes_per_strip as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_strips == 0 || self.nodes_per_strip == 0 {
            return Err(Error::Config("grid needs at least one strip and one node".into()));
        }
        if !(self.hall_length > 0.0 && self.hall_width > 0.0)
            || !self.hall_length.is_finite()
            || !self.hall_width.is_finite()
        {
            return Err(Error::Config("hall dimensions must be positive".into()));
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.n_strips * self.nodes_per_strip
    }

    pub fn feature_count(&self) -> usize {
        self.node_count() * FEATURES_PER_NODE
    }

    pub fn strip_spacing(&self) -> f64 {
        self.hall_length / self.n_strips as f64
    }

    pub fn node_spacing(&self) -> f64 {
        self.hall_width / self.nodes_per_strip as f64
    }

    pub fn contains(&self, id: NodeId) -> bool {
        (1..=self.n_strips).contains(&(id.strip as usize))
            && (1..=self.nodes_per_strip).contains(&(id.node as usize))
    }

    pub fn check(&self, id: NodeId) -> Result<()> {
        if self.contains(id) {
            Ok(())
        } else {
            Err(Error::InvalidNode(id, self.n_strips, self.nodes_per_strip))
        }
    }

    /// 0-based linear index; strips vary slowest.
    pub fn index(&self, id: NodeId) -> usize {
        (id.strip as usize - 1) * self.nodes_per_strip + (id.node as usize - 1)
    }

    pub fn node_at(&self, index: usize) -> NodeId {
        NodeId::new(
            (index / self.nodes_per_strip + 1) as u16,
            (index % self.nodes_per_strip + 1) as u16,
        )
    }

    /// All node ids in feature-layout order.
    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.node_count()).map(move |i| self.node_at(i))
    }

    /// Physical position of a node's center in meters.
    pub fn node_position(&self, id: NodeId) -> Result<(f64, f64)> {
        self.check(id)?;
        Ok(self.position_unchecked(id))
    }

    pub(crate) fn position_unchecked(&self, id: NodeId) -> (f64, f64) {
        (
            (id.strip as f64 - 0.5) * self.strip_spacing(),
            (id.node as f64 - 0.5) * self.node_spacing(),
        )
    }

    /// The ids at Chebyshev distance 1 in index space, clipped at the edges.
    pub fn neighbors(&self, id: NodeId) -> Result<Vec<NodeId>> {
        self.check(id)?;
        let (s, n) = (id.strip as i64, id.node as i64);
        let mut out = Vec::with_capacity(8);
        for ds in -1..=1 {
            for dn in -1..=1 {
                if ds == 0 && dn == 0 {
                    continue;
                }
                let (ns, nn) = (s + ds, n + dn);
                if ns >= 1 && nn >= 1 && ns as usize <= self.n_strips && nn as usize <= self.nodes_per_strip {
                    out.push(NodeId::new(ns as u16, nn as u16));
                }
            }
        }
        Ok(out)
    }

    /// Neighbor lists for every node by linear index.
    pub fn neighbor_table(&self) -> Vec<Vec<usize>> {
        self.nodes()
            .map(|id| {
                self.neighbors(id)
                    .expect("ids from nodes() are valid")
                    .into_iter()
                    .map(|nb| self.index(nb))
                    .collect()
            })
            .collect()
    }

    /// Parses `<strips>x<nodes>`; node spacing stays at 1 m when the hall is
    /// resized this way.
    pub fn parse_dims(s: &str) -> Result<(usize, usize)> {
        let (a, b) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::Config(format!("grid must look like 23x15, got {s:?}")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad grid dimension {v:?}")))
        };
        Ok((parse(a)?, parse(b)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId {
    pub strip: u16,
    pub node: u16,
}

impl NodeId {
    pub const fn new(strip: u16, node: u16) -> Self {
        Self { strip, node }
    }

    pub fn topic(&self) -> String {
        format!("/imu_reader/{}/{}", self.strip, self.node)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.strip, self.node)
    }
}

/// One node sample: accelerometer (m/s²), gyroscope (°/s), magnetometer (µT)
/// and RSSI (dBm).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Measurement {
    pub accel: [f64; 3],
    pub gyro: [f64; 3],
    pub mag: [f64; 3],
    pub rssi: f64,
}

impl Measurement {
    pub fn to_array(&self) -> [f64; FEATURES_PER_NODE] {
        let [ax, ay, az] = self.accel;
        let [gx, gy, gz] = self.gyro;
        let [mx, my, mz] = self.mag;
        [ax, ay, az, gx, gy, gz, mx, my, mz, self.rssi]
    }

    pub fn from_slice(v: &[f64]) -> Option<Self> {
        if v.len() != FEATURES_PER_NODE {
            return None;
        }
        Some(Self {
            accel: [v[0], v[1], v[2]],
            gyro: [v[3], v[4], v[5]],
            mag: [v[6], v[7], v[8]],
            rssi: v[9],
        })
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Tracking-system sample; position in millimeters, rotation in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSample {
    pub t: f64,
    pub pos_mm: [f64; 3],
    pub rot_rad: [f64; 3],
}

impl GroundTruthSample {
    /// Planar position in meters (z and rotation are dropped).
    pub fn xy_meters(&self) -> [f64; 2] {
        [self.pos_mm[0] / 1000.0, self.pos_mm[1] / 1000.0]
    }
}
