use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Network, NetworkSpec, Tensor};
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared absolutely rather than relatively.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub n_params: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_param: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Central-difference check of every parameter gradient for one sample.
pub fn grad_check_at(net: &Network, params: &[f64], input: &Tensor, label: [f64; 2]) -> Result<GradCheckReport> {
    let mut analytic = vec![0.0; net.n_params()];
    net.loss_and_grad(params, input, label, &mut analytic)?;
    let mut p = params.to_vec();
    let mut numeric = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + FD_STEP;
        let up = net.loss(&p, input, label)?;
        p[i] = orig - FD_STEP;
        let down = net.loss(&p, input, label)?;
        p[i] = orig;
        numeric.push((up - down) / (2.0 * FD_STEP));
    }
    let mut report = GradCheckReport {
        n_params: p.len(),
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_param: 0,
        analytic,
        numeric,
    };
    for (i, (a, n)) in report.analytic.iter().zip(&report.numeric).enumerate() {
        let abs = (a - n).abs();
        let rel = abs / a.abs().max(n.abs()).max(REL_FLOOR);
        report.max_abs_error = report.max_abs_error.max(abs);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_param = i;
        }
    }
    Ok(report)
}

/// Random parameters (including non-zero biases), input and label for
/// `spec` on an `input` shaped grid tensor, then [`grad_check_at`].
pub fn grad_check(spec: &NetworkSpec, input: [usize; 3], seed: u64) -> Result<GradCheckReport> {
    let net = Network::new(spec.clone(), input)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = net.init_params(seed);
    for v in &mut params {
        if *v == 0.0 {
            *v = rng.gen_range(-0.1..0.1);
        }
    }
    let n = input.iter().product();
    let x = Tensor::from_vec(input.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let label = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
    grad_check_at(&net, &params, &x, label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, LayerSpec};

    #[test]
    fn tiny_network_gradients() {
        for seed in 0..3 {
            let r = grad_check(&NetworkSpec::tiny(), [6, 4, 4], seed).unwrap();
            assert!(r.max_rel_error < 1e-4, "seed {seed}: {r:?}");
        }
    }

    #[test]
    fn head_only_gradients() {
        let spec = NetworkSpec {
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    units: 6,
                    activation: Activation::Custom,
                },
            ],
        };
        let r = grad_check(&spec, [3, 2, 4], 7).unwrap();
        assert!(r.max_rel_error < 1e-6, "{}", r.max_rel_error);
    }

    #[test]
    fn unused_channel_has_zero_gradient() {
        let net = Network::new(NetworkSpec::tiny(), [6, 4, 4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = net.init_params(3);
        let data = (0..96).map(|i| if i % 4 == 3 { 0.0 } else { rng.gen_range(-1.0..1.0) }).collect();
        let x = Tensor::from_vec(vec![6, 4, 4], data).unwrap();
        let r = grad_check_at(&net, &params, &x, [0.2, -0.4]).unwrap();
        // first conv weights for input channel 3: index (k * 4 + 3) * 2 + out
        for k in 0..9 {
            for o in 0..2 {
                let i = (k * 4 + 3) * 2 + o;
                assert!(r.analytic[i].abs() < 1e-8 && r.numeric[i].abs() < 1e-8);
            }
        }
        assert!(r.max_rel_error < 1e-4);
    }
}
