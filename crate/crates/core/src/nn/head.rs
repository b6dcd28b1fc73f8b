//! Output head: the positive-lower-bound activation for the spread
//! parameters and the asymmetric Gaussian negative log-likelihood.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPREAD_FLOOR: f64 = 0.001;

/// ½·log(π/2)
const HALF_LOG_HALF_PI: f64 = 0.225_791_352_644_727_4;

/// Raw and activated head values, ordered `(mu_x, mu_y, sigma_x, sigma_y, r_x, r_y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadOutput {
    pub raw: [f64; 6],
    pub activated: [f64; 6],
}

impl HeadOutput {
    pub fn from_raw(raw: [f64; 6]) -> Self {
        Self {
            raw,
            activated: custom_activation(raw),
        }
    }

    pub fn mu(&self) -> [f64; 2] {
        [self.activated[0], self.activated[1]]
    }

    pub fn sigma(&self) -> [f64; 2] {
        [self.activated[2], self.activated[3]]
    }

    pub fn skew(&self) -> [f64; 2] {
        [self.activated[4], self.activated[5]]
    }
}

pub fn custom_activation(raw: [f64; 6]) -> [f64; 6] {
    let mut out = raw;
    for v in &mut out[2..] {
        *v = v.exp() + SPREAD_FLOOR;
    }
    out
}

/// Density normalized so it integrates to one over the real line.
pub fn asym_gauss_pdf(x: f64, mu: f64, sigma: f64, r: f64) -> f64 {
    let d = x - mu;
    let s = if d <= 0.0 { sigma } else { sigma * r };
    (2.0 / std::f64::consts::PI).sqrt() / (sigma * (1.0 + r)) * (-d * d / (2.0 * s * s)).exp()
}

pub fn asym_gauss_nll(x: f64, mu: f64, sigma: f64, r: f64) -> Result<f64> {
    if !(sigma > 0.0) || !(r > 0.0) {
        return Err(Error::Domain(format!("asymmetric Gaussian needs sigma > 0 and r > 0, got {sigma}, {r}")));
    }
    Ok(nll_parts(x, mu, sigma, r).0)
}

/// NLL and its partials `(d/dmu, d/dsigma, d/dr)`.
fn nll_parts(x: f64, mu: f64, sigma: f64, r: f64) -> (f64, [f64; 3]) {
    let d = x - mu;
    let base = sigma.ln() + (1.0 + r).ln() + HALF_LOG_HALF_PI;
    if d <= 0.0 {
        let s2 = sigma * sigma;
        let loss = base + d * d / (2.0 * s2);
        (loss, [-d / s2, 1.0 / sigma - d * d / (s2 * sigma), 1.0 / (1.0 + r)])
    } else {
        let s2 = sigma * sigma;
        let r2 = r * r;
        let loss = base + d * d / (2.0 * s2 * r2);
        (
            loss,
            [
                -d / (s2 * r2),
                1.0 / sigma - d * d / (s2 * sigma * r2),
                1.0 / (1.0 + r) - d * d / (s2 * r2 * r),
            ],
        )
    }
}

/// Per-sample loss `NLL_x + NLL_y` and its gradient w.r.t. the raw head.
pub fn head_loss_and_grad(raw: &[f64], label: [f64; 2]) -> (f64, [f64; 6]) {
    let act = custom_activation(raw.try_into().expect("head width 6"));
    let mut grad = [0.0; 6];
    let mut loss = 0.0;
    for axis in 0..2 {
        let (sigma, r) = (act[2 + axis], act[4 + axis]);
        let (l, [dmu, dsigma, dr]) = nll_parts(label[axis], act[axis], sigma, r);
        loss += l;
        grad[axis] = dmu;
        // d(exp(v) + floor)/dv = exp(v)
        grad[2 + axis] = dsigma * (sigma - SPREAD_FLOOR);
        grad[4 + axis] = dr * (r - SPREAD_FLOOR);
    }
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn activation_examples() {
        let a = custom_activation([7.3, -2.0, 0.0, 1.0, f64::NEG_INFINITY, -800.0]);
        assert_eq!(a[0], 7.3);
        assert_eq!(a[1], -2.0);
        assert!((a[2] - 1.001).abs() < 1e-15);
        assert_eq!(a[4], SPREAD_FLOOR);
        assert_eq!(a[5], SPREAD_FLOOR);
    }

    #[test]
    fn constant_matches_closed_form() {
        assert!((HALF_LOG_HALF_PI - 0.5 * (std::f64::consts::PI / 2.0).ln()).abs() < 1e-16);
    }

    #[test]
    fn nll_at_mode_and_symmetry() {
        let (s, r) = (0.7, 1.8);
        let at = asym_gauss_nll(2.0, 2.0, s, r).unwrap();
        assert!((at - (s.ln() + (1.0 + r).ln() + HALF_LOG_HALF_PI)).abs() < 1e-15);
        for d in [0.1, 0.5, 3.0] {
            let a = asym_gauss_nll(1.0 + d, 1.0, 0.9, 1.0).unwrap();
            let b = asym_gauss_nll(1.0 - d, 1.0, 0.9, 1.0).unwrap();
            assert!((a - b).abs() < 1e-14);
        }
        assert!(matches!(asym_gauss_nll(0.0, 0.0, 0.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(asym_gauss_nll(0.0, 0.0, 1.0, -1.0), Err(Error::Domain(_))));
    }

    // Composite Simpson quadrature, integrated separately on each side of the
    // kink at mu so both pieces are smooth.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut acc = f(a) + f(b);
        for i in 1..n {
            acc += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    }

    #[test]
    fn density_integrates_to_one() {
        let mu = 1.5;
        for sigma in [0.1, 1.0, 5.0] {
            for r in [0.5, 1.0, 2.0] {
                let f = |x| asym_gauss_pdf(x, mu, sigma, r);
                let left = simpson(f, mu - 40.0 * sigma, mu, 20_000);
                let right = simpson(f, mu, mu + 40.0 * sigma * (1.0 + r), 20_000);
                assert!((left + right - 1.0).abs() < 1e-6, "sigma {sigma} r {r}: {}", left + right);
            }
        }
    }

    #[test]
    fn head_gradient_matches_differences() {
        let raw = [0.3, -1.2, 0.4, -0.6, 0.2, 0.9];
        for label in [[1.0, -3.0], [-2.0, 0.5], [0.35, -1.25]] {
            let (_, g) = head_loss_and_grad(&raw, label);
            for i in 0..6 {
                let h = 1e-6;
                let mut p = raw;
                p[i] += h;
                let mut m = raw;
                m[i] -= h;
                let num = (head_loss_and_grad(&p, label).0 - head_loss_and_grad(&m, label).0) / (2.0 * h);
                assert!((num - g[i]).abs() < 1e-7 * (1.0 + g[i].abs()), "{i}: {num} vs {}", g[i]);
            }
        }
    }

    proptest! {
        #[test]
        fn spreads_stay_above_floor(raw in proptest::array::uniform6(-700.0f64..700.0)) {
            let a = custom_activation(raw);
            for v in &a[2..] {
                prop_assert!(*v >= SPREAD_FLOOR);
            }
        }

        #[test]
        fn nll_is_minimal_at_mu(mu in -5.0f64..5.0, sigma in 0.05f64..5.0, r in 0.05f64..5.0) {
            let at = asym_gauss_nll(mu, mu, sigma, r).unwrap();
            for k in 1..=20 {
                let d = 0.05 * k as f64 * sigma;
                prop_assert!(asym_gauss_nll(mu + d, mu, sigma, r).unwrap() > at);
                prop_assert!(asym_gauss_nll(mu - d, mu, sigma, r).unwrap() > at);
            }
        }
    }
}
