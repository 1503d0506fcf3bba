//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use std::sync::Arc;

use lmc_core::data::DatasetSlice;
use lmc_core::network::{Activation, LayerSpec, LossKind, NetworkSpec};
use lmc_core::{Labels, Network, Objective, ParamVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Plain nested-loop forward pass written from the layer definitions. Shares nothing
/// with the library's workspace-based implementation except the parameter
/// layout convention (weights row-major `[out][in]`, conv kernels
/// `[cout][cin][ky][kx]`, biases after the weights).
pub fn oracle_outputs(spec: &NetworkSpec, theta: &[f64], x: &[f64]) -> Vec<f64> {
    let mut a = x.to_vec();
    let mut off = 0;
    for layer in &spec.layers {
        match layer {
            LayerSpec::Dense {
                inputs, outputs, bias, ..
            } => {
                let w: Vec<&[f64]> = theta[off..off + inputs * outputs].chunks(*inputs).collect();
                off += inputs * outputs;
                let b = if *bias {
                    let b = &theta[off..off + outputs];
                    off += outputs;
                    b.to_vec()
                } else {
                    vec![0.0; *outputs]
                };
                a = (0..*outputs)
                    .map(|o| (0..*inputs).map(|i| w[o][i] * a[i]).sum::<f64>() + b[o])
                    .collect();
            }
            LayerSpec::Conv2d {
                in_channels: cin,
                out_channels: cout,
                kernel: k,
                height: h,
                width: w,
                bias,
                ..
            } => {
                let (cin, cout, k, h, w) = (*cin, *cout, *k, *h, *w);
                let kern =
                    |co: usize, ci: usize, ky: usize, kx: usize| theta[off + ((co * cin + ci) * k + ky) * k + kx];
                let nk = cout * cin * k * k;
                let img = |ci: usize, y: usize, x: usize| a[ci * h * w + y * w + x];
                let (oh, ow) = (h - k + 1, w - k + 1);
                let mut out = Vec::with_capacity(cout * oh * ow);
                for co in 0..cout {
                    let b = if *bias { theta[off + nk + co] } else { 0.0 };
                    for y in 0..oh {
                        for x in 0..ow {
                            let mut s = 0.0;
                            for ci in 0..cin {
                                for ky in 0..k {
                                    for kx in 0..k {
                                        s += kern(co, ci, ky, kx) * img(ci, y + ky, x + kx);
                                    }
                                }
                            }
                            out.push(s + b);
                        }
                    }
                }
                off += nk + if *bias { cout } else { 0 };
                a = out;
            }
            LayerSpec::Activation { kind } => {
                for v in &mut a {
                    *v = match kind {
                        Activation::Identity => *v,
                        Activation::Tanh => v.tanh(),
                        Activation::Relu => v.max(0.0),
                        Activation::Sigmoid => 1.0 / (1.0 + (-*v).exp()),
                    };
                }
            }
        }
    }
    a
}

/// Mean loss; cross-entropy as `ln Σⱼ exp(zⱼ − z_c)`.
pub fn oracle_loss(spec: &NetworkSpec, theta: &[f64], data: &DatasetSlice) -> f64 {
    let n = data.len();
    let mut total = 0.0;
    for i in 0..n {
        let z = oracle_outputs(spec, theta, data.input(i));
        total += match (spec.loss, data.labels()) {
            (LossKind::CrossEntropy, Labels::Classes { labels, .. }) => {
                let zc = z[labels[i]];
                z.iter().map(|zj| (zj - zc).exp()).sum::<f64>().ln()
            }
            (LossKind::MeanSquaredError, Labels::Targets { values, dim }) => {
                let t = &values[i * dim..(i + 1) * dim];
                0.5 * z.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            }
            _ => panic!("loss/label mismatch"),
        };
    }
    total / n as f64
}

/// `cbrt(ε)·(1 + ‖x‖∞)`, shared by every coordinate.
fn step(x: &[f64]) -> f64 {
    f64::EPSILON.cbrt() * (1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs())))
}

/// Central differences of a scalar function.
pub fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut p = x.to_vec();
    let h = step(x);
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Dense Hessian by central differences of an analytic gradient,
/// symmetrized. `h[i][j]`.
pub fn fd_hessian(g: &dyn Fn(&[f64]) -> Vec<f64>, x: &[f64]) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut p = x.to_vec();
    let mut cols = Vec::with_capacity(n);
    let h = step(x);
    for j in 0..n {
        p[j] = x[j] + h;
        let up = g(&p);
        p[j] = x[j] - h;
        let down = g(&p);
        p[j] = x[j];
        cols.push(
            up.iter()
                .zip(&down)
                .map(|(u, d)| (u - d) / (2.0 * h))
                .collect::<Vec<f64>>(),
        );
    }
    (0..n)
        .map(|i| (0..n).map(|j| 0.5 * (cols[j][i] + cols[i][j])).collect())
        .collect()
}

/// Dense Hessian assembled column by column from exact Hessian-vector
/// products with unit vectors.
pub fn hvp_hessian<O: Objective + ?Sized>(obj: &O, theta: &ParamVector) -> Vec<Vec<f64>> {
    let n = theta.len();
    let layout = theta.layout().clone();
    let cols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            obj.hvp(theta, &ParamVector::new(e, layout.clone()).unwrap())
                .unwrap()
                .into_values()
        })
        .collect();
    (0..n).map(|i| (0..n).map(|j| cols[j][i]).collect()).collect()
}

pub fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Floor on the reference norm in [`rel_err`]; guards against dividing by a
/// vanishing gradient.
pub const REL_FLOOR: f64 = 1e-3;

/// `‖a − b‖ / max(‖b‖, REL_FLOOR)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&d) / norm(b).max(REL_FLOOR)
}

pub fn scalar_rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

pub struct Case {
    pub net: Network,
    pub data: DatasetSlice,
    pub theta: ParamVector,
}

impl Case {
    pub fn loss_at(&self, x: &[f64]) -> f64 {
        self.net.loss(&self.point(x), &self.data).unwrap()
    }

    pub fn grad_at(&self, x: &[f64]) -> Vec<f64> {
        self.net.gradient(&self.point(x), &self.data).unwrap().into_values()
    }

    pub fn point(&self, x: &[f64]) -> ParamVector {
        ParamVector::new(x.to_vec(), self.net.layout().clone()).unwrap()
    }

    pub fn random_direction(&self, seed: u64) -> ParamVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..self.theta.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        ParamVector::new(v, self.net.layout().clone()).unwrap()
    }
}

/// Random smooth network with at most `max_params` parameters, a handful of
/// examples and a random parameter point. Every fourth case is
/// convolutional.
pub fn tiny_case(seed: u64, max_params: usize) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let smooth = [Activation::Tanh, Activation::Sigmoid, Activation::Identity];
    loop {
        let act = smooth[rng.random_range(0..smooth.len())];
        let loss = if rng.random_bool(0.5) {
            LossKind::CrossEntropy
        } else {
            LossKind::MeanSquaredError
        };
        let outputs = rng.random_range(2..=3);
        let spec = if seed % 4 == 3 {
            NetworkSpec {
                input_dim: 9,
                layers: vec![
                    LayerSpec::Conv2d {
                        name: "conv".into(),
                        in_channels: 1,
                        out_channels: 2,
                        kernel: 2,
                        height: 3,
                        width: 3,
                        bias: true,
                    },
                    LayerSpec::Activation { kind: act },
                    LayerSpec::Dense {
                        name: "fc".into(),
                        inputs: 8,
                        outputs,
                        bias: true,
                    },
                ],
                loss,
            }
        } else {
            let input_dim = rng.random_range(2..=4);
            let hidden: Vec<usize> = (0..rng.random_range(1..=2)).map(|_| rng.random_range(2..=4)).collect();
            NetworkSpec::mlp(input_dim, &hidden, outputs, act, loss)
        };
        let net = Network::new(spec).unwrap();
        if net.layout().total_params() > max_params {
            continue;
        }
        let n = 6;
        let d = net.spec().input_dim;
        let inputs: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.5..1.5)).collect();
        let labels = match loss {
            LossKind::CrossEntropy => Labels::Classes {
                labels: (0..n).map(|_| rng.random_range(0..outputs)).collect(),
                num_classes: outputs,
            },
            LossKind::MeanSquaredError => Labels::Targets {
                values: (0..n * outputs).map(|_| rng.random_range(-1.0..1.0)).collect(),
                dim: outputs,
            },
        };
        let data = DatasetSlice::new(inputs, d, labels).unwrap();
        let layout: Arc<_> = net.layout().clone();
        let theta = ParamVector::new(
            (0..layout.total_params())
                .map(|_| rng.random_range(-1.2..1.2))
                .collect(),
            layout,
        )
        .unwrap();
        return Case { net, data, theta };
    }
}
