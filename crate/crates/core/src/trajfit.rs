//! Trajectory refinement: per-frame asymmetric Gaussian estimates are turned
//! into one trajectory by maximizing their joint log-likelihood minus
//! velocity and acceleration penalties between consecutive frames.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio::write_atomic;
use crate::par::Exec;

pub const MAX_ITERATIONS: usize = 5000;
pub const TOLERANCE: f64 = 1e-8;
pub const CALIBRATION_PERCENTILE: f64 = 99.5;

/// ½·log(π/2)
const HALF_LOG_HALF_PI: f64 = 0.225_791_352_644_727_4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameEstimate {
    pub t: f64,
    pub mu: [f64; 2],
    pub sigma: [f64; 2],
    pub r: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegParams {
    /// m/s
    pub c_v: f64,
    /// m/s², in the units of [`kinematics`]
    pub c_a: f64,
}

impl RegParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_v > 0.0 && self.c_a > 0.0 && self.c_v.is_finite() && self.c_a.is_finite()) {
            return Err(Error::Config(format!("limits must be positive, got c_v={} c_a={}", self.c_v, self.c_a)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedTrajectory {
    pub t: Vec<f64>,
    pub points: Vec<[f64; 2]>,
    pub initial_objective: f64,
    pub objective: f64,
    pub iterations: usize,
}

/// Speed and "acceleration" per consecutive pair: `|v| = dist / dt` and
/// `|a| = |v| / dt`.
pub fn kinematics(x: &[f64], y: &[f64], t: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.len() != y.len() || x.len() != t.len() {
        return Err(Error::Input(format!(
            "sequence lengths differ: {} {} {}",
            x.len(),
            y.len(),
            t.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::Input("need at least two positions".into()));
    }
    let mut v = Vec::with_capacity(x.len() - 1);
    let mut a = Vec::with_capacity(x.len() - 1);
    for i in 1..x.len() {
        let dt = t[i] - t[i - 1];
        if !(dt > 0.0) {
            return Err(Error::Ordering(format!("time does not increase at index {i}: {} -> {}", t[i - 1], t[i])));
        }
        let s = (x[i] - x[i - 1]).hypot(y[i] - y[i - 1]) / dt;
        v.push(s);
        a.push(s / dt);
    }
    Ok((v, a))
}

pub fn lambda_v(v_abs: f64, c_v: f64) -> f64 {
    if v_abs > c_v {
        (10.0 * (v_abs - c_v)).exp()
    } else {
        0.0
    }
}

fn lambda_v_grad(v_abs: f64, c_v: f64) -> f64 {
    if v_abs > c_v {
        10.0 * (10.0 * (v_abs - c_v)).exp()
    } else {
        0.0
    }
}

pub fn lambda_a(a_abs: f64, c_a: f64) -> f64 {
    if a_abs > c_a {
        -2.0 * c_a + (3.0 * a_abs).exp()
    } else {
        -2.0 * c_a + (2.0 * c_a + a_abs).exp()
    }
}

fn lambda_a_grad(a_abs: f64, c_a: f64) -> f64 {
    if a_abs > c_a {
        3.0 * (3.0 * a_abs).exp()
    } else {
        (2.0 * c_a + a_abs).exp()
    }
}

/// log f(x | mu, sigma, r) and its derivative in x.
fn log_density(x: f64, mu: f64, sigma: f64, r: f64) -> (f64, f64) {
    let d = x - mu;
    let s = if d <= 0.0 { sigma } else { sigma * r };
    let norm = -(sigma.ln() + (1.0 + r).ln() + HALF_LOG_HALF_PI);
    (norm - d * d / (2.0 * s * s), -d / (s * s))
}

fn check_estimates(est: &[FrameEstimate]) -> Result<()> {
    if est.len() < 2 {
        return Err(Error::Input(format!("need at least 2 estimates, got {}", est.len())));
    }
    for (i, e) in est.iter().enumerate() {
        if !(e.sigma.iter().chain(&e.r).all(|v| *v > 0.0 && v.is_finite())) {
            return Err(Error::Input(format!("estimate {i}: sigma and r must be positive")));
        }
        if !(e.t.is_finite() && e.mu.iter().all(|v| v.is_finite())) {
            return Err(Error::Input(format!("estimate {i}: non-finite value")));
        }
        if i > 0 && !(e.t > est[i - 1].t) {
            return Err(Error::Ordering(format!("time does not increase at estimate {i}")));
        }
    }
    Ok(())
}

/// J and, when `grad` is given, its gradient (laid out `[x0, y0, x1, y1, ...]`).
fn evaluate(points: &[[f64; 2]], est: &[FrameEstimate], p: &RegParams, mut grad: Option<&mut [f64]>) -> f64 {
    let mut j = 0.0;
    if let Some(g) = grad.as_deref_mut() {
        g.iter_mut().for_each(|v| *v = 0.0);
    }
    for (i, (q, e)) in points.iter().zip(est).enumerate() {
        for ax in 0..2 {
            let (l, dl) = log_density(q[ax], e.mu[ax], e.sigma[ax], e.r[ax]);
            j += l;
            if let Some(g) = grad.as_deref_mut() {
                g[2 * i + ax] += dl;
            }
        }
    }
    for i in 1..points.len() {
        let dt = est[i].t - est[i - 1].t;
        let dx = points[i][0] - points[i - 1][0];
        let dy = points[i][1] - points[i - 1][1];
        let dist = dx.hypot(dy);
        let v = dist / dt;
        let a = v / dt;
        j -= lambda_v(v, p.c_v) + lambda_a(a, p.c_a);
        if let Some(g) = grad.as_deref_mut() {
            if dist > 0.0 {
                // d penalty / d dist
                let k = lambda_v_grad(v, p.c_v) / dt + lambda_a_grad(a, p.c_a) / (dt * dt);
                let (ux, uy) = (dx / dist, dy / dist);
                g[2 * i] -= k * ux;
                g[2 * i + 1] -= k * uy;
                g[2 * i - 2] += k * ux;
                g[2 * i - 1] += k * uy;
            }
        }
    }
    j
}

pub fn objective(points: &[[f64; 2]], est: &[FrameEstimate], p: &RegParams) -> Result<f64> {
    if points.len() != est.len() {
        return Err(Error::Alignment(format!("{} points for {} estimates", points.len(), est.len())));
    }
    Ok(evaluate(points, est, p, None))
}

/// Analytic gradient of [`objective`], `[dx0, dy0, dx1, dy1, ...]`.
pub fn objective_gradient(points: &[[f64; 2]], est: &[FrameEstimate], p: &RegParams) -> Result<Vec<f64>> {
    if points.len() != est.len() {
        return Err(Error::Alignment(format!("{} points for {} estimates", points.len(), est.len())));
    }
    let mut g = vec![0.0; 2 * points.len()];
    evaluate(points, est, p, Some(&mut g));
    Ok(g)
}

/// Normalized-gradient ascent from the estimate means. The step length (in
/// metres) grows after every accepted step and is halved until J improves.
pub fn fit(est: &[FrameEstimate], p: &RegParams) -> Result<FittedTrajectory> {
    check_estimates(est)?;
    p.validate()?;
    let init: Vec<[f64; 2]> = est.iter().map(|e| e.mu).collect();
    ascend(est, p, init)
}

fn ascend(est: &[FrameEstimate], p: &RegParams, start: Vec<[f64; 2]>) -> Result<FittedTrajectory> {
    let init_j = evaluate(&start, est, p, None);
    if !init_j.is_finite() {
        return Err(Error::Input(format!("objective at initialization is {init_j}")));
    }
    let n = start.len();
    let mut x = start;
    let mut j = init_j;
    let mut g = vec![0.0; 2 * n];
    let mut trial = x.clone();
    let mut step = 0.1;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        evaluate(&x, est, p, Some(&mut g));
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            break;
        }
        let mut accepted = None;
        while step > 1e-12 {
            for (k, q) in trial.iter_mut().enumerate() {
                q[0] = x[k][0] + step * g[2 * k] / norm;
                q[1] = x[k][1] + step * g[2 * k + 1] / norm;
            }
            let jt = evaluate(&trial, est, p, None);
            if jt > j {
                accepted = Some(jt);
                break;
            }
            step *= 0.5;
        }
        let Some(jt) = accepted else { break };
        std::mem::swap(&mut x, &mut trial);
        let gain = jt - j;
        j = jt;
        step = (step * 1.5).min(10.0);
        if gain < TOLERANCE {
            break;
        }
    }
    Ok(FittedTrajectory {
        t: est.iter().map(|e| e.t).collect(),
        points: x,
        initial_objective: init_j,
        objective: j,
        iterations,
    })
}

/// Start indices of overlapping windows of `size` covering `n` frames with
/// 25% overlap; the last window ends at `n`.
pub fn window_starts(n: usize, size: usize) -> Vec<usize> {
    if size >= n {
        return vec![0];
    }
    let stride = (size - size / 4).max(1);
    let mut starts: Vec<usize> = (0..).map(|k| k * stride).take_while(|&s| s + size < n).collect();
    starts.push(n - size);
    starts
}

/// Fits overlapping windows independently and averages shared coordinates.
/// When averaging lowers J below its initial value the result is refined
/// by a full-run ascent, so the monotone-improvement contract still holds.
pub fn fit_windowed(est: &[FrameEstimate], p: &RegParams, window: usize, exec: Exec) -> Result<FittedTrajectory> {
    check_estimates(est)?;
    p.validate()?;
    if window < 2 {
        return Err(Error::Config(format!("window must hold at least 2 frames, got {window}")));
    }
    if window >= est.len() {
        return fit(est, p);
    }
    let starts = window_starts(est.len(), window);
    let fits = exec.map(&starts, |&s| fit(&est[s..s + window], p));
    let mut sum = vec![[0.0; 2]; est.len()];
    let mut count = vec![0usize; est.len()];
    let mut iterations = 0;
    for (s, f) in starts.iter().zip(fits) {
        let f = f?;
        iterations += f.iterations;
        for (k, q) in f.points.iter().enumerate() {
            sum[s + k][0] += q[0];
            sum[s + k][1] += q[1];
            count[s + k] += 1;
        }
    }
    let points: Vec<[f64; 2]> = sum
        .iter()
        .zip(&count)
        .map(|(s, &c)| [s[0] / c as f64, s[1] / c as f64])
        .collect();
    let init: Vec<[f64; 2]> = est.iter().map(|e| e.mu).collect();
    let init_j = evaluate(&init, est, p, None);
    if !init_j.is_finite() {
        return Err(Error::Input(format!("objective at initialization is {init_j}")));
    }
    let j = evaluate(&points, est, p, None);
    if j >= init_j {
        return Ok(FittedTrajectory {
            t: est.iter().map(|e| e.t).collect(),
            points,
            initial_objective: init_j,
            objective: j,
            iterations,
        });
    }
    let start = if j.is_finite() { points } else { init };
    let mut f = ascend(est, p, start)?;
    f.initial_objective = init_j;
    f.iterations += iterations;
    if f.objective < init_j {
        // the refinement started below the initialization; fall back to a plain fit
        return fit(est, p);
    }
    Ok(f)
}

/// Linear-interpolation percentile (`p` in 0..=100) of unsorted values.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = p / 100.0 * (s.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    s[lo] + (s[hi] - s[lo]) * (rank - lo as f64)
}

/// A labelled training sequence: timestamps and true positions.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledRun {
    pub t: Vec<f64>,
    pub labels: Vec<[f64; 2]>,
}

/// `c_v`, `c_a` as the 99.5th percentiles of the label kinematics, pooled
/// over runs (pairs never span two runs).
pub fn calibrate_limits(runs: &[LabelledRun]) -> Result<RegParams> {
    let mut vs = Vec::new();
    let mut as_ = Vec::new();
    let mut frames = 0;
    for run in runs {
        if run.t.len() != run.labels.len() {
            return Err(Error::Calibration(format!(
                "{} timestamps for {} labels",
                run.t.len(),
                run.labels.len()
            )));
        }
        frames += run.t.len();
        if run.t.len() < 2 {
            continue;
        }
        let x: Vec<f64> = run.labels.iter().map(|l| l[0]).collect();
        let y: Vec<f64> = run.labels.iter().map(|l| l[1]).collect();
        let (v, a) = kinematics(&x, &y, &run.t)?;
        vs.extend(v);
        as_.extend(a);
    }
    if frames < 3 || vs.is_empty() {
        return Err(Error::Calibration(format!("need at least 3 labelled frames, got {frames}")));
    }
    if vs.iter().all(|&v| v == 0.0) {
        return Err(Error::Calibration("all positions identical; limits undefined".into()));
    }
    let p = RegParams {
        c_v: percentile(&vs, CALIBRATION_PERCENTILE),
        c_a: percentile(&as_, CALIBRATION_PERCENTILE),
    };
    if !(p.c_v > 0.0 && p.c_a > 0.0) {
        return Err(Error::Calibration(format!("degenerate limits c_v={} c_a={}", p.c_v, p.c_a)));
    }
    Ok(p)
}

pub fn write_estimates_csv(path: &Path, est: &[FrameEstimate]) -> Result<()> {
    let mut s = String::from("t,x,y,sigma_x,sigma_y,r_x,r_y\n");
    for e in est {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            e.t, e.mu[0], e.mu[1], e.sigma[0], e.sigma[1], e.r[0], e.r[1]
        );
    }
    write_atomic(path, |w| w.write_all(s.as_bytes()))
}

fn read_rows(path: &Path, width: usize) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e: std::num::ParseFloatError| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        if vals.len() != width {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected {width} columns, got {}", vals.len()),
            });
        }
        rows.push(vals);
    }
    Ok(rows)
}

pub fn read_estimates_csv(path: &Path) -> Result<Vec<FrameEstimate>> {
    Ok(read_rows(path, 7)?
        .into_iter()
        .map(|v| FrameEstimate {
            t: v[0],
            mu: [v[1], v[2]],
            sigma: [v[3], v[4]],
            r: [v[5], v[6]],
        })
        .collect())
}

pub fn write_trajectory_csv(path: &Path, t: &[f64], points: &[[f64; 2]]) -> Result<()> {
    if t.len() != points.len() {
        return Err(Error::Alignment(format!("{} times for {} points", t.len(), points.len())));
    }
    let mut s = String::from("t,x,y\n");
    for (t, q) in t.iter().zip(points) {
        let _ = writeln!(s, "{t},{},{}", q[0], q[1]);
    }
    write_atomic(path, |w| w.write_all(s.as_bytes()))
}

pub fn read_trajectory_csv(path: &Path) -> Result<(Vec<f64>, Vec<[f64; 2]>)> {
    let rows = read_rows(path, 3)?;
    Ok((rows.iter().map(|r| r[0]).collect(), rows.iter().map(|r| [r[1], r[2]]).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn est(t: f64, mu: [f64; 2], sigma: f64) -> FrameEstimate {
        FrameEstimate {
            t,
            mu,
            sigma: [sigma; 2],
            r: [1.0; 2],
        }
    }

    #[test]
    fn kinematics_examples() {
        let (v, a) = kinematics(&[0.0, 0.3], &[0.0, 0.4], &[0.0, 0.23]).unwrap();
        assert!((v[0] - 2.173_913_043_478_261).abs() < 1e-12);
        assert!((a[0] - 9.451_795_841_209_83).abs() < 1e-9);
        let (v, a) = kinematics(&[1.0, 1.0], &[2.0, 2.0], &[0.0, 1.0]).unwrap();
        assert_eq!((v[0], a[0]), (0.0, 0.0));
        assert!(matches!(kinematics(&[0.0, 1.0], &[0.0, 1.0], &[1.0, 1.0]), Err(Error::Ordering(_))));
    }

    #[test]
    fn penalty_examples() {
        let c = 0.8;
        assert_eq!(lambda_v(c - 0.01, c), 0.0);
        assert!((lambda_v(c + 0.1, c) - std::f64::consts::E).abs() < 1e-12);
        assert!((lambda_v(c + 0.2, c) - 7.389_056_098_930_65).abs() < 1e-11);
        assert!((lambda_a(0.0, 0.5) - 1.718_281_828_459_045).abs() < 1e-12);
        assert!((lambda_a(1.0, 0.5) - 19.085_536_923_187_668).abs() < 1e-11);
        for ca in [0.1, 0.5, 2.0, 7.0] {
            let at = lambda_a(ca, ca);
            assert!((at - ((3.0 * ca).exp() - 2.0 * ca)).abs() < 1e-9);
            assert!((lambda_a(ca + 1e-13, ca) - at).abs() < 1e-9 * at.max(1.0));
        }
    }

    #[test]
    fn penalties_vanish_means_plain_likelihood() {
        let e = vec![est(0.0, [0.0, 0.0], 0.5), est(1.0, [0.1, 0.0], 0.5)];
        let p = RegParams { c_v: 10.0, c_a: 10.0 };
        let pts = vec![[0.2, 0.1], [0.0, 0.3]];
        let ll: f64 = pts
            .iter()
            .zip(&e)
            .map(|(q, e)| (0..2).map(|a| log_density(q[a], e.mu[a], e.sigma[a], e.r[a]).0).sum::<f64>())
            .sum();
        let pen = lambda_a(0.2f64.hypot(0.2), 10.0);
        assert!((objective(&pts, &e, &p).unwrap() - (ll - pen)).abs() < 1e-9);
        // log f matches the network loss
        let nll = crate::nn::asym_gauss_nll(0.3, 0.1, 0.7, 1.9).unwrap();
        assert!((log_density(0.3, 0.1, 0.7, 1.9).0 + nll).abs() < 1e-14);
    }

    #[test]
    fn jump_lowers_objective() {
        let p = RegParams { c_v: 1.0, c_a: 2.0 };
        let e: Vec<FrameEstimate> = (0..5).map(|i| est(0.23 * i as f64, [0.1 * i as f64, 0.0], 0.2)).collect();
        let smooth: Vec<[f64; 2]> = e.iter().map(|e| e.mu).collect();
        let mut jumped = smooth.clone();
        for q in &mut jumped[3..] {
            q[0] += 10.0;
        }
        assert!(objective(&jumped, &e, &p).unwrap() < objective(&smooth, &e, &p).unwrap());
    }

    fn random_instance(seed: u64, n: usize) -> (Vec<FrameEstimate>, RegParams, Vec<[f64; 2]>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = 0.0;
        let e: Vec<FrameEstimate> = (0..n)
            .map(|i| {
                t += rng.gen_range(0.4..0.8);
                FrameEstimate {
                    t,
                    mu: [0.3 * i as f64 + rng.gen_range(-0.2..0.2), rng.gen_range(-0.5..0.5)],
                    sigma: [rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0)],
                    r: [rng.gen_range(0.3..3.0), rng.gen_range(0.3..3.0)],
                }
            })
            .collect();
        let pts = e.iter().map(|e| [e.mu[0] + rng.gen_range(-0.15..0.15), e.mu[1] + rng.gen_range(-0.15..0.15)]).collect();
        (e, RegParams { c_v: 0.8, c_a: 3.0 }, pts)
    }

    #[test]
    fn gradient_matches_differences() {
        for seed in 0..20 {
            let (e, p, pts) = random_instance(seed, 8);
            let g = objective_gradient(&pts, &e, &p).unwrap();
            let h = 1e-6;
            for k in 0..2 * pts.len() {
                let mut up = pts.clone();
                up[k / 2][k % 2] += h;
                let mut dn = pts.clone();
                dn[k / 2][k % 2] -= h;
                let ju = objective(&up, &e, &p).unwrap();
                let jd = objective(&dn, &e, &p).unwrap();
                let num = (ju - jd) / (2.0 * h);
                let crosses = |q: &[[f64; 2]]| {
                    let x: Vec<f64> = q.iter().map(|q| q[0]).collect();
                    let y: Vec<f64> = q.iter().map(|q| q[1]).collect();
                    let t: Vec<f64> = e.iter().map(|e| e.t).collect();
                    let (v, a) = kinematics(&x, &y, &t).unwrap();
                    let above_v: Vec<bool> = v.iter().map(|&v| v > p.c_v).collect();
                    let above_a: Vec<bool> = a.iter().map(|&a| a > p.c_a).collect();
                    let side: Vec<bool> = q.iter().zip(&e).flat_map(|(q, e)| [q[0] <= e.mu[0], q[1] <= e.mu[1]]).collect();
                    (above_v, above_a, side)
                };
                // skip coordinates whose stencil straddles a branch switch
                if crosses(&up) != crosses(&dn) {
                    continue;
                }
                let rel = (num - g[k]).abs() / g[k].abs().max(num.abs()).max(1e-3);
                assert!(rel < 1e-5, "seed {seed} coord {k}: analytic {} numeric {num}", g[k]);
            }
        }
    }

    #[test]
    fn physical_estimates_stay_put() {
        let p = RegParams { c_v: 0.1, c_a: 0.5 };
        let dt = 0.23;
        let e: Vec<FrameEstimate> = (0..30)
            .map(|i| est(dt * i as f64, [0.05 * dt * i as f64, 1.0], 1e-3))
            .collect();
        let f = fit(&e, &p).unwrap();
        assert!(f.objective >= f.initial_objective);
        for (q, e) in f.points.iter().zip(&e) {
            assert!(crate::eval::euclid(*q, e.mu) < 1e-3, "{q:?} vs {:?}", e.mu);
        }
    }

    #[test]
    fn outlier_is_pulled_back() {
        let (f, e, p, k) = outlier_fit();
        let before = e[k].mu[1].abs();
        let after = f.points[k][1].abs();
        assert!(after <= 0.1 * before, "outlier distance {before} -> {after}");
        let x: Vec<f64> = f.points.iter().map(|q| q[0]).collect();
        let y: Vec<f64> = f.points.iter().map(|q| q[1]).collect();
        let (v, _) = kinematics(&x, &y, &f.t).unwrap();
        assert_eq!(v.iter().filter(|&&v| v > p.c_v).count(), 0);
        assert!(f.objective >= f.initial_objective);
    }

    fn outlier_fit() -> (FittedTrajectory, Vec<FrameEstimate>, RegParams, usize) {
        let p = RegParams { c_v: 1.0, c_a: 2.0 };
        let dt = 0.4;
        let mut e: Vec<FrameEstimate> = (0..40)
            .map(|i| est(dt * i as f64, [0.5 * dt * i as f64, 0.0], 0.1))
            .collect();
        let k = 20;
        e[k].mu[1] = 10.0;
        e[k].sigma = [5.0; 2];
        (fit(&e, &p).unwrap(), e, p, k)
    }

    #[test]
    fn translation_shifts_the_fit() {
        let (e, p, _) = random_instance(3, 12);
        let a = fit(&e, &p).unwrap();
        let shifted: Vec<FrameEstimate> = e
            .iter()
            .map(|e| FrameEstimate {
                mu: [e.mu[0] + 4.0, e.mu[1] - 2.5],
                ..*e
            })
            .collect();
        let b = fit(&shifted, &p).unwrap();
        for (qa, qb) in a.points.iter().zip(&b.points) {
            assert!((qb[0] - qa[0] - 4.0).abs() < 1e-6 && (qb[1] - qa[1] + 2.5).abs() < 1e-6);
        }
    }

    #[test]
    fn calibration() {
        let t: Vec<f64> = (0..100).map(|i| 0.4 * i as f64).collect();
        let line = LabelledRun {
            labels: t.iter().map(|&t| [t, 2.0]).collect(),
            t: t.clone(),
        };
        let p = calibrate_limits(std::slice::from_ref(&line)).unwrap();
        assert!((p.c_v - 1.0).abs() < 0.05);
        let still = LabelledRun {
            labels: vec![[1.0, 1.0]; 100],
            t,
        };
        assert!(matches!(calibrate_limits(&[still]), Err(Error::Calibration(_))));
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0], 50.0), 2.5);
        assert_eq!(percentile(&[5.0], 99.5), 5.0);
    }

    #[test]
    fn windows_cover_with_overlap() {
        assert_eq!(window_starts(10, 20), vec![0]);
        let s = window_starts(100, 40);
        assert_eq!(s, vec![0, 30, 60]);
        let (e, p, _) = random_instance(5, 90);
        let f = fit_windowed(&e, &p, 30, Exec::Sequential).unwrap();
        assert_eq!(f.points.len(), 90);
        assert!(f.objective >= f.initial_objective);
        assert_eq!(f, fit_windowed(&e, &p, 30, Exec::Parallel).unwrap());
    }

    #[test]
    fn csv_round_trip() {
        let (e, _, _) = random_instance(1, 5);
        let dir = tempfile::tempdir().unwrap();
        let pe = dir.path().join("est.csv");
        write_estimates_csv(&pe, &e).unwrap();
        assert_eq!(read_estimates_csv(&pe).unwrap(), e);
        let pt = dir.path().join("traj.csv");
        let pts: Vec<[f64; 2]> = e.iter().map(|e| e.mu).collect();
        let t: Vec<f64> = e.iter().map(|e| e.t).collect();
        write_trajectory_csv(&pt, &t, &pts).unwrap();
        assert_eq!(read_trajectory_csv(&pt).unwrap(), (t, pts));
    }

    proptest! {
        #[test]
        fn penalties_are_monotone(c in 0.05f64..5.0, a in 0.0f64..20.0, b in 0.0f64..20.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(lambda_v(lo, c) <= lambda_v(hi, c));
            prop_assert!(lambda_a(lo, c) <= lambda_a(hi, c));
        }

        #[test]
        fn fit_never_lowers_objective(seed in 0u64..1000) {
            let (e, p, _) = random_instance(seed, 10);
            let f = fit(&e, &p).unwrap();
            prop_assert!(f.objective >= f.initial_objective);
        }
    }
}
