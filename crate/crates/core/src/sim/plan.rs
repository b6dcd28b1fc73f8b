use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// Distance kept between waypoints and the hall walls.
pub const WALL_MARGIN: f64 = 0.5;
/// Every node must see the robot within this distance in the training runs.
pub const COVERAGE_RADIUS: f64 = 2.0;
/// Distance between parallel lanes inside one sweep.
const LANE_SPACING: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPlan {
    pub label: String,
    pub waypoints: Vec<(f64, f64)>,
    /// m/s
    pub speed: f64,
}

impl TrajectoryPlan {
    pub fn new(label: impl Into<String>, waypoints: Vec<(f64, f64)>, speed: f64) -> Result<Self> {
        let plan = Self {
            label: label.into(),
            waypoints,
            speed,
        };
        if plan.waypoints.len() < 2 {
            return Err(Error::Config(format!("plan {} needs at least two waypoints", plan.label)));
        }
        if !(speed > 0.0 && speed.is_finite()) {
            return Err(Error::Config(format!("plan {} has non-positive speed", plan.label)));
        }
        Ok(plan)
    }

    pub fn check_bounds(&self, grid: &GridSpec) -> Result<()> {
        let tol = 1e-9;
        for &(x, y) in &self.waypoints {
            let inside = x >= WALL_MARGIN - tol
                && x <= grid.hall_length - WALL_MARGIN + tol
                && y >= WALL_MARGIN - tol
                && y <= grid.hall_width - WALL_MARGIN + tol;
            if !inside {
                return Err(Error::Config(format!(
                    "plan {}: waypoint ({x}, {y}) outside the hall margins",
                    self.label
                )));
            }
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1))
            .sum()
    }

    /// Seconds needed to traverse all segments.
    pub fn duration(&self) -> f64 {
        self.length() / self.speed
    }

    /// Constant-speed position along the polyline; clamps outside `[0, duration]`.
    pub fn position(&self, t: f64) -> (f64, f64) {
        self.pose(t).0
    }

    /// Position plus heading (radians) of the segment being traversed.
    pub fn pose(&self, t: f64) -> ((f64, f64), f64) {
        let mut remaining = (t.max(0.0)) * self.speed;
        let mut heading = 0.0;
        for w in self.waypoints.windows(2) {
            let (a, b) = (w[0], w[1]);
            let seg = (b.0 - a.0).hypot(b.1 - a.1);
            if seg == 0.0 {
                continue;
            }
            heading = (b.1 - a.1).atan2(b.0 - a.0);
            if remaining <= seg {
                let f = remaining / seg;
                return ((a.0 + f * (b.0 - a.0), a.1 + f * (b.1 - a.1)), heading);
            }
            remaining -= seg;
        }
        (*self.waypoints.last().expect("plans have waypoints"), heading)
    }
}

/// Free-function form of [`TrajectoryPlan::position`].
pub fn robot_position(plan: &TrajectoryPlan, t: f64) -> (f64, f64) {
    plan.position(t)
}

struct Bounds {
    xl: f64,
    xh: f64,
    yl: f64,
    yh: f64,
}

impl Bounds {
    fn of(grid: &GridSpec) -> Result<Self> {
        if grid.hall_length < 3.0 || grid.hall_width < 3.0 {
            return Err(Error::Coverage(format!(
                "hall {}x{} m is smaller than the 3x3 m minimum",
                grid.hall_length, grid.hall_width
            )));
        }
        Ok(Self {
            xl: WALL_MARGIN,
            xh: grid.hall_length - WALL_MARGIN,
            yl: WALL_MARGIN,
            yh: grid.hall_width - WALL_MARGIN,
        })
    }
}

/// Boustrophedon lanes: `lanes` along the sweep axis, alternating direction.
fn lawnmower(lanes: &[f64], lo: f64, hi: f64, along_x: bool) -> Vec<(f64, f64)> {
    let mut pts = Vec::with_capacity(lanes.len() * 2);
    for (i, &c) in lanes.iter().enumerate() {
        let (a, b) = if i % 2 == 0 { (lo, hi) } else { (hi, lo) };
        if along_x {
            pts.push((a, c));
            pts.push((b, c));
        } else {
            pts.push((c, a));
            pts.push((c, b));
        }
    }
    pts
}

fn lane_offsets(lo: f64, hi: f64, run: usize) -> Vec<f64> {
    let start = (lo + run as f64 * LANE_SPACING / 3.0).min(hi);
    let mut lanes = Vec::new();
    let mut c = start;
    while c <= hi + 1e-9 {
        lanes.push(c.min(hi));
        c += LANE_SPACING;
    }
    lanes
}

/// Zigzag between the lower and upper y bounds while advancing in x.
fn zigzag(b: &Bounds, leg_dx: f64, start_low: bool) -> Vec<(f64, f64)> {
    let mut pts = vec![(b.xl, if start_low { b.yl } else { b.yh })];
    let mut low = start_low;
    let mut x = b.xl;
    while x < b.xh - 1e-9 {
        let nx = (x + leg_dx).min(b.xh);
        let frac = (nx - x) / leg_dx;
        let (from, to) = if low { (b.yl, b.yh) } else { (b.yh, b.yl) };
        pts.push((nx, from + frac * (to - from)));
        if frac < 1.0 {
            break;
        }
        low = !low;
        x = nx;
    }
    pts
}

/// The nine scripted training runs: three horizontal sweeps, three vertical
/// sweeps and three diagonal zigzags. Fails if their union leaves a node
/// farther than [`COVERAGE_RADIUS`] from the robot path.
pub fn plan_training_runs(grid: &GridSpec, speed: f64) -> Result<Vec<TrajectoryPlan>> {
    let b = Bounds::of(grid)?;
    let mut plans = Vec::with_capacity(9);
    for k in 0..3 {
        let lanes = lane_offsets(b.yl, b.yh, k);
        plans.push(TrajectoryPlan::new(format!("horizontal_{}", k + 1), lawnmower(&lanes, b.xl, b.xh, true), speed)?);
    }
    for k in 0..3 {
        let lanes = lane_offsets(b.xl, b.xh, k);
        plans.push(TrajectoryPlan::new(format!("vertical_{}", k + 1), lawnmower(&lanes, b.yl, b.yh, false), speed)?);
    }
    let span = b.yh - b.yl;
    plans.push(TrajectoryPlan::new("diagonal_1", zigzag(&b, span, true), speed)?);
    plans.push(TrajectoryPlan::new("diagonal_2", zigzag(&b, span, false), speed)?);
    plans.push(TrajectoryPlan::new("diagonal_3", zigzag(&b, span / 2.0, true), speed)?);

    for p in &plans {
        p.check_bounds(grid)?;
    }
    let worst = max_node_distance(grid, &plans);
    if worst > COVERAGE_RADIUS {
        return Err(Error::Coverage(format!(
            "some node is {worst:.3} m from every training path (limit {COVERAGE_RADIUS} m)"
        )));
    }
    Ok(plans)
}

/// Uniformly sampled in-bounds waypoints, deterministic in `seed`.
pub fn plan_random_run(grid: &GridSpec, seed: u64, n_waypoints: usize, speed: f64) -> Result<TrajectoryPlan> {
    if n_waypoints < 2 {
        return Err(Error::Config("random run needs at least two waypoints".into()));
    }
    let b = Bounds::of(grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waypoints = (0..n_waypoints)
        .map(|_| (rng.gen_range(b.xl..=b.xh), rng.gen_range(b.yl..=b.yh)))
        .collect();
    TrajectoryPlan::new(format!("random_{seed}"), waypoints, speed)
}

fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let f = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    (p.0 - (a.0 + f * dx)).hypot(p.1 - (a.1 + f * dy))
}

/// Largest distance from any node to its closest point on any plan path.
pub fn max_node_distance(grid: &GridSpec, plans: &[TrajectoryPlan]) -> f64 {
    grid.nodes()
        .map(|id| {
            let p = grid.position_unchecked(id);
            plans
                .iter()
                .flat_map(|plan| plan.waypoints.windows(2).map(move |w| point_segment_distance(p, w[0], w[1])))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn nine_plans_inside_margins() {
        let g = GridSpec::default();
        let plans = plan_training_runs(&g, 1.0).unwrap();
        assert_eq!(plans.len(), 9);
        for p in &plans {
            p.check_bounds(&g).unwrap();
        }
        let labels: Vec<_> = plans.iter().map(|p| p.label.as_str()).collect();
        assert_eq!(labels.iter().filter(|l| l.starts_with("horizontal")).count(), 3);
        assert_eq!(labels.iter().filter(|l| l.starts_with("vertical")).count(), 3);
        assert_eq!(labels.iter().filter(|l| l.starts_with("diagonal")).count(), 3);
    }

    #[test]
    fn coverage_via_sampled_trajectories() {
        // Independent of the segment-distance routine: sample positions along
        // the simulated motion every 5 cm and take the distance field.
        for g in [GridSpec::default(), GridSpec::unit_spaced(6, 4).unwrap(), GridSpec::new(5, 5, 3.0, 3.0).unwrap()] {
            let plans = plan_training_runs(&g, 1.0).unwrap();
            let mut worst: f64 = 0.0;
            for id in g.nodes() {
                let (nx, ny) = g.node_position(id).unwrap();
                let mut best = f64::INFINITY;
                for p in &plans {
                    let steps = (p.duration() / 0.05).ceil() as usize;
                    for k in 0..=steps {
                        let (x, y) = p.position(k as f64 * 0.05);
                        best = best.min((x - nx).hypot(y - ny));
                    }
                }
                worst = worst.max(best);
            }
            assert!(worst <= COVERAGE_RADIUS, "worst {worst}");
        }
    }

    #[test]
    fn tiny_hall_rejected() {
        let g = GridSpec::new(2, 2, 2.0, 2.0).unwrap();
        assert!(matches!(plan_training_runs(&g, 1.0), Err(Error::Coverage(_))));
    }

    #[test]
    fn random_runs_are_seeded() {
        let g = GridSpec::default();
        let a = plan_random_run(&g, 7, 6, 1.0).unwrap();
        let b = plan_random_run(&g, 7, 6, 1.0).unwrap();
        let c = plan_random_run(&g, 8, 6, 1.0).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.waypoints, c.waypoints);
        a.check_bounds(&g).unwrap();
        c.check_bounds(&g).unwrap();
        assert!(plan_random_run(&g, 1, 1, 1.0).is_err());
    }

    #[test]
    fn piecewise_linear_position() {
        let p = TrajectoryPlan::new("t", vec![(0.0, 0.0), (10.0, 0.0)], 1.0).unwrap();
        let (x, y) = robot_position(&p, 3.0);
        assert_abs_diff_eq!(x, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(y, 0.0, epsilon = 1e-12);
        assert_eq!(robot_position(&p, 0.0), (0.0, 0.0));
        assert_eq!(robot_position(&p, 99.0), (10.0, 0.0));

        let q = TrajectoryPlan::new("l", vec![(0.0, 0.0), (2.0, 0.0), (2.0, 2.0)], 2.0).unwrap();
        assert_abs_diff_eq!(q.duration(), 2.0);
        let (x, y) = q.position(1.5);
        assert_abs_diff_eq!(x, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(y, 1.0, epsilon = 1e-12);
    }
}
