use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::head::{head_loss_and_grad, HeadOutput};
use super::layers::{
    conv_backward, conv_forward, dense_backward, dense_forward, elu_grad_from_output, elu_scalar, pool_backward,
    pool_forward, pooled_dims,
};
use super::Tensor;
use crate::error::{Error, Result};

pub const HEAD_WIDTH: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Elu,
    /// Identity on the raw outputs; the spread activation is applied by the head.
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// 3x3 SAME convolution followed by elu.
    Conv { filters: usize },
    AvgPool,
    Flatten,
    Dense { units: usize, activation: Activation },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self::with_widths(64, 128)
    }
}

impl NetworkSpec {
    /// Three blocks of three convolutions plus pooling, then two hidden dense
    /// layers and the six-wide head.
    pub fn with_widths(filters: usize, hidden: usize) -> Self {
        let mut layers = Vec::new();
        for _ in 0..3 {
            for _ in 0..3 {
                layers.push(LayerSpec::Conv { filters });
            }
            layers.push(LayerSpec::AvgPool);
        }
        layers.push(LayerSpec::Flatten);
        for _ in 0..2 {
            layers.push(LayerSpec::Dense {
                units: hidden,
                activation: Activation::Elu,
            });
        }
        layers.push(LayerSpec::Dense {
            units: HEAD_WIDTH,
            activation: Activation::Custom,
        });
        Self { layers }
    }

    pub fn tiny() -> Self {
        Self::with_widths(2, 8)
    }

    pub fn is_default(&self) -> bool {
        *self == Self::default()
    }
}

#[derive(Debug, Clone)]
enum Op {
    Conv {
        dims: (usize, usize, usize),
        cout: usize,
        w: usize,
        b: usize,
    },
    Pool {
        dims: (usize, usize, usize),
    },
    Flatten,
    Dense {
        nin: usize,
        nout: usize,
        w: usize,
        b: usize,
        elu: bool,
    },
}

/// Shape of the parameter block owned by one layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamShape {
    pub layer: usize,
    pub weights: Vec<usize>,
    pub bias: usize,
}

/// A [`NetworkSpec`] resolved against an input shape: every layer's shapes
/// and parameter offsets into one flat vector.
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    input: [usize; 3],
    ops: Vec<Op>,
    sizes: Vec<usize>,
    n_params: usize,
}

fn layer_name(i: usize, l: &LayerSpec) -> String {
    let kind = match l {
        LayerSpec::Conv { .. } => "conv",
        LayerSpec::AvgPool => "avg_pool",
        LayerSpec::Flatten => "flatten",
        LayerSpec::Dense { .. } => "dense",
    };
    format!("layer {i} ({kind})")
}

impl Network {
    pub fn new(spec: NetworkSpec, input: [usize; 3]) -> Result<Self> {
        if input.iter().any(|&d| d == 0) {
            return Err(Error::Shape {
                layer: "input".into(),
                msg: format!("empty input shape {input:?}"),
            });
        }
        #[derive(Clone, Copy)]
        enum Cur {
            Map(usize, usize, usize),
            Flat(usize),
        }
        let mut cur = Cur::Map(input[0], input[1], input[2]);
        let mut ops = Vec::new();
        let mut sizes = vec![input.iter().product()];
        let mut offset = 0;
        let n = spec.layers.len();
        for (i, l) in spec.layers.iter().enumerate() {
            let err = |msg: String| Error::Shape {
                layer: layer_name(i, l),
                msg,
            };
            let (op, next) = match (*l, cur) {
                (LayerSpec::Conv { filters }, Cur::Map(h, w, c)) => {
                    if filters == 0 {
                        return Err(err("zero filters".into()));
                    }
                    let op = Op::Conv {
                        dims: (h, w, c),
                        cout: filters,
                        w: offset,
                        b: offset + 9 * c * filters,
                    };
                    offset += 9 * c * filters + filters;
                    (op, Cur::Map(h, w, filters))
                }
                (LayerSpec::AvgPool, Cur::Map(h, w, c)) => {
                    let (oh, ow) = pooled_dims(h, w);
                    (Op::Pool { dims: (h, w, c) }, Cur::Map(oh, ow, c))
                }
                (LayerSpec::Flatten, Cur::Map(h, w, c)) => (Op::Flatten, Cur::Flat(h * w * c)),
                (LayerSpec::Dense { units, activation }, Cur::Flat(nin)) => {
                    if units == 0 {
                        return Err(err("zero units".into()));
                    }
                    if activation == Activation::Custom && i + 1 != n {
                        return Err(err("custom activation only allowed on the final layer".into()));
                    }
                    let op = Op::Dense {
                        nin,
                        nout: units,
                        w: offset,
                        b: offset + nin * units,
                        elu: activation == Activation::Elu,
                    };
                    offset += nin * units + units;
                    (op, Cur::Flat(units))
                }
                (LayerSpec::Dense { .. }, Cur::Map(h, w, c)) => {
                    return Err(err(format!("dense layer needs a flat input, got {h}x{w}x{c}")))
                }
                (_, Cur::Flat(len)) => return Err(err(format!("spatial layer after flatten (width {len})"))),
            };
            sizes.push(match next {
                Cur::Map(h, w, c) => h * w * c,
                Cur::Flat(k) => k,
            });
            ops.push(op);
            cur = next;
        }
        match (cur, spec.layers.last()) {
            (
                Cur::Flat(HEAD_WIDTH),
                Some(LayerSpec::Dense {
                    activation: Activation::Custom,
                    ..
                }),
            ) => {}
            _ => {
                return Err(Error::Shape {
                    layer: "head".into(),
                    msg: format!("network must end in a {HEAD_WIDTH}-wide dense layer with the custom activation"),
                })
            }
        }
        Ok(Self {
            spec,
            input,
            ops,
            sizes,
            n_params: offset,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    /// Output width of every layer, input first.
    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn param_shapes(&self) -> Vec<ParamShape> {
        self.ops
            .iter()
            .enumerate()
            .filter_map(|(i, op)| match *op {
                Op::Conv { dims, cout, .. } => Some(ParamShape {
                    layer: i,
                    weights: vec![3, 3, dims.2, cout],
                    bias: cout,
                }),
                Op::Dense { nin, nout, .. } => Some(ParamShape {
                    layer: i,
                    weights: vec![nin, nout],
                    bias: nout,
                }),
                _ => None,
            })
            .collect()
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = vec![0.0; self.n_params];
        for op in &self.ops {
            let (w, len, fan_in, fan_out) = match *op {
                Op::Conv { dims, cout, w, .. } => (w, 9 * dims.2 * cout, 9 * dims.2, 9 * cout),
                Op::Dense { nin, nout, w, .. } => (w, nin * nout, nin, nout),
                _ => continue,
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in &mut p[w..w + len] {
                *v = rng.gen_range(-limit..limit);
            }
        }
        p
    }

    /// L2 norm of each parametrized layer's weights.
    pub fn layer_norms(&self, params: &[f64]) -> Vec<f64> {
        self.ops
            .iter()
            .filter_map(|op| match *op {
                Op::Conv { w, b, .. } | Op::Dense { w, b, .. } => {
                    Some(params[w..b].iter().map(|v| v * v).sum::<f64>().sqrt())
                }
                _ => None,
            })
            .collect()
    }

    fn check(&self, params: &[f64], input: &Tensor) -> Result<()> {
        if params.len() != self.n_params {
            return Err(Error::Shape {
                layer: "parameters".into(),
                msg: format!("{} values, network needs {}", params.len(), self.n_params),
            });
        }
        if input.shape() != self.input {
            return Err(Error::Shape {
                layer: "input".into(),
                msg: format!("got {:?}, network expects {:?}", input.shape(), self.input),
            });
        }
        Ok(())
    }

    /// Output of every layer, input first; elu is fused into conv and dense.
    fn trace(&self, params: &[f64], x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.ops.len() + 1);
        acts.push(x.to_vec());
        let mut cols = Vec::new();
        for (op, &size) in self.ops.iter().zip(&self.sizes[1..]) {
            let prev = acts.last().expect("input pushed");
            let mut out = vec![0.0; size];
            match *op {
                Op::Conv { dims, cout, w, b } => {
                    conv_forward(prev, dims, &params[w..b], &params[b..b + cout], &mut cols, &mut out);
                    out.iter_mut().for_each(|v| *v = elu_scalar(*v));
                }
                Op::Pool { dims } => pool_forward(prev, dims, &mut out),
                Op::Flatten => out.copy_from_slice(prev),
                Op::Dense { nout, w, b, elu, .. } => {
                    dense_forward(prev, &params[w..b], &params[b..b + nout], &mut out);
                    if elu {
                        out.iter_mut().for_each(|v| *v = elu_scalar(*v));
                    }
                }
            }
            acts.push(out);
        }
        acts
    }

    /// Backpropagates `d_out` (gradient w.r.t. the raw head) and adds the
    /// parameter gradient into `grad`.
    fn backward(&self, params: &[f64], acts: &[Vec<f64>], d_out: &[f64], grad: &mut [f64]) {
        let mut dy = d_out.to_vec();
        let mut cols = Vec::new();
        for (i, op) in self.ops.iter().enumerate().rev() {
            let x = &acts[i];
            let y = &acts[i + 1];
            let need_dx = i > 0;
            let mut dx = vec![0.0; if need_dx { x.len() } else { 0 }];
            match *op {
                Op::Conv { dims, cout, w, b } => {
                    for (g, &out) in dy.iter_mut().zip(y) {
                        *g *= elu_grad_from_output(out);
                    }
                    let (gw, gb) = grad[w..b + cout].split_at_mut(b - w);
                    conv_backward(
                        x,
                        dims,
                        &params[w..b],
                        &dy,
                        &mut cols,
                        gw,
                        gb,
                        need_dx.then_some(dx.as_mut_slice()),
                    );
                }
                Op::Pool { dims } if need_dx => pool_backward(&dy, dims, &mut dx),
                Op::Flatten if need_dx => dx.copy_from_slice(&dy),
                Op::Pool { .. } | Op::Flatten => {}
                Op::Dense { nout, w, b, elu, .. } => {
                    if elu {
                        for (g, &out) in dy.iter_mut().zip(y) {
                            *g *= elu_grad_from_output(out);
                        }
                    }
                    let (gw, gb) = grad[w..b + nout].split_at_mut(b - w);
                    dense_backward(x, &params[w..b], &dy, gw, gb, need_dx.then_some(dx.as_mut_slice()));
                }
            }
            dy = dx;
        }
    }

    pub fn forward(&self, params: &[f64], input: &Tensor) -> Result<HeadOutput> {
        self.check(params, input)?;
        let acts = self.trace(params, input.data());
        if cfg!(debug_assertions) {
            if let Some(i) = acts.iter().skip(1).position(|a| a.iter().any(|v| !v.is_finite())) {
                return Err(Error::Domain(format!(
                    "non-finite output from {}",
                    layer_name(i, &self.spec.layers[i])
                )));
            }
        }
        let raw: [f64; HEAD_WIDTH] = acts.last().expect("head").as_slice().try_into().expect("head width");
        Ok(HeadOutput::from_raw(raw))
    }

    /// Per-sample loss; the gradient is added into `grad`.
    pub fn loss_and_grad(&self, params: &[f64], input: &Tensor, label: [f64; 2], grad: &mut [f64]) -> Result<f64> {
        self.check(params, input)?;
        if grad.len() != self.n_params {
            return Err(Error::Shape {
                layer: "gradient".into(),
                msg: format!("buffer of {} for {} parameters", grad.len(), self.n_params),
            });
        }
        let acts = self.trace(params, input.data());
        let (loss, d_out) = head_loss_and_grad(acts.last().expect("head"), label);
        self.backward(params, &acts, &d_out, grad);
        Ok(loss)
    }

    pub fn loss(&self, params: &[f64], input: &Tensor, label: [f64; 2]) -> Result<f64> {
        self.check(params, input)?;
        let acts = self.trace(params, input.data());
        Ok(head_loss_and_grad(acts.last().expect("head"), label).0)
    }

    /// Parameter index ranges `(weights, bias)` of the final dense layer.
    pub fn head_ranges(&self) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        match self.ops.last() {
            Some(&Op::Dense { nout, w, b, .. }) => (w..b, b..b + nout),
            _ => unreachable!("validated in new"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(shape: [usize; 3], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn default_stack_shapes() {
        let net = Network::new(NetworkSpec::default(), [23, 15, 4]).unwrap();
        assert_eq!(
            net.layer_sizes(),
            &[
                23 * 15 * 4,
                23 * 15 * 64,
                23 * 15 * 64,
                23 * 15 * 64,
                12 * 8 * 64,
                12 * 8 * 64,
                12 * 8 * 64,
                12 * 8 * 64,
                6 * 4 * 64,
                6 * 4 * 64,
                6 * 4 * 64,
                6 * 4 * 64,
                3 * 2 * 64,
                384,
                128,
                128,
                6
            ]
        );
        let params = net.init_params(1);
        let out = net.forward(&params, &input([23, 15, 4], 2)).unwrap();
        assert!(out.activated.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_weights_give_unit_spreads() {
        let net = Network::new(NetworkSpec::tiny(), [6, 4, 4]).unwrap();
        let out = net.forward(&vec![0.0; net.n_params()], &input([6, 4, 4], 3)).unwrap();
        assert_eq!(&out.activated[..2], &[0.0, 0.0]);
        assert!(out.activated[2..].iter().all(|&v| (v - 1.001).abs() < 1e-15));
    }

    #[test]
    fn mu_head_is_linear_in_its_row() {
        let net = Network::new(NetworkSpec::tiny(), [6, 4, 4]).unwrap();
        let mut params = net.init_params(4);
        let (w, b) = net.head_ranges();
        // isolate output 0 on its weight column so it is a pure linear form
        for k in b.clone() {
            params[k] = 0.0;
        }
        let x = input([6, 4, 4], 5);
        let before = net.forward(&params, &x).unwrap().mu()[0];
        for k in w.clone().step_by(HEAD_WIDTH) {
            params[k] *= 2.0;
        }
        let after = net.forward(&params, &x).unwrap().mu()[0];
        assert!((after - 2.0 * before).abs() < 1e-12 * (1.0 + before.abs()));
    }

    #[test]
    fn shape_errors_name_the_layer() {
        let net = Network::new(NetworkSpec::tiny(), [6, 4, 4]).unwrap();
        let p = net.init_params(0);
        match net.forward(&p, &input([6, 5, 4], 0)) {
            Err(Error::Shape { layer, .. }) => assert_eq!(layer, "input"),
            other => panic!("{other:?}"),
        }
        let bad = NetworkSpec {
            layers: vec![
                LayerSpec::Conv { filters: 2 },
                LayerSpec::Dense {
                    units: 6,
                    activation: Activation::Custom,
                },
            ],
        };
        match Network::new(bad, [6, 4, 4]) {
            Err(Error::Shape { layer, .. }) => assert_eq!(layer, "layer 1 (dense)"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let net = Network::new(NetworkSpec::with_widths(4, 8), [23, 15, 4]).unwrap();
        let p = net.init_params(9);
        let x = input([23, 15, 4], 9);
        let a = net.forward(&p, &x).unwrap();
        let b = net.forward(&p, &x).unwrap();
        assert_eq!(a.raw.map(f64::to_bits), b.raw.map(f64::to_bits));
    }
}
