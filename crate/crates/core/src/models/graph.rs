//! Tape construction for model forward passes and losses.

use std::f64::consts::PI;

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::models::ode::{guard, TrajectoryRecord};
use crate::models::{Activation, Backbone, Model, Solver};
use crate::tensor::Tensor;

/// Loss nodes appended when a graph is built for training.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    /// `(1/n) sum ||y_hat - y||^2`.
    pub data: NodeId,
    /// Batch-mean kinetic energy (dynamical models only).
    pub ke: Option<NodeId>,
    /// `data + lambda * ke`.
    pub total: NodeId,
}

/// A model's forward pass recorded on a tape for a fixed batch size.
///
/// Leaves are declared as: coordinates, every parameter block in block order
/// (trainable blocks as parameters, frozen ones as inputs), then the targets
/// when a loss was requested.
#[derive(Debug, Clone)]
pub struct ForwardGraph {
    pub tape: Tape,
    pub rows: usize,
    pub z0: NodeId,
    pub latent: NodeId,
    pub output: NodeId,
    pub states: Vec<NodeId>,
    pub velocities: Vec<NodeId>,
    pub loss: Option<LossNodes>,
}

struct Builder<'a> {
    tape: Tape,
    model: &'a Model,
    params: Vec<NodeId>,
    act: Activation,
}

impl Builder<'_> {
    fn p(&self, name: &str) -> NodeId {
        let i = self.model.blocks().iter().position(|b| b.name == name).expect("block exists");
        self.params[i]
    }

    fn activate(&mut self, h: NodeId) -> NodeId {
        match self.act {
            Activation::Relu => self.tape.relu(h),
            Activation::Sin => self.tape.sin(h),
            Activation::Identity => h,
        }
    }

    fn affine(&mut self, h: NodeId, w: &str, b: &str) -> NodeId {
        let (w, b) = (self.p(w), self.p(b));
        let m = self.tape.matmul(h, w);
        self.tape.add(m, b)
    }

    fn body(&mut self, mut h: NodeId) -> NodeId {
        let model = self.model;
        let spec = &model.spec;
        for i in 0..spec.depth {
            h = self.affine(h, &format!("body.w{i}"), &format!("body.b{i}"));
            if spec.activated(i) {
                h = self.activate(h);
            }
        }
        h
    }

    fn field(&mut self, z: NodeId, t: f64, rows: usize) -> NodeId {
        let tc = self.tape.constant(Tensor::filled(&[rows, 1], t));
        let inp = self.tape.concat(&[z, tc]);
        self.body(inp)
    }

    fn axpy(&mut self, z: NodeId, a: f64, v: NodeId) -> NodeId {
        let s = self.tape.scale(v, a);
        self.tape.add(z, s)
    }
}

impl ForwardGraph {
    /// Records the forward pass for `rows` coordinates. With `ke_weight`, the
    /// data loss, kinetic energy and total objective are appended.
    pub fn build(model: &Model, rows: usize, ke_weight: Option<f64>) -> ForwardGraph {
        let spec = &model.spec;
        let mut tape = Tape::new();
        let x = tape.input("x", &[rows, spec.in_dim]);
        let params = model
            .blocks()
            .iter()
            .map(|b| if b.trainable { tape.param(b.name.clone(), b.tensor.shape()) } else { tape.input(b.name.clone(), b.tensor.shape()) })
            .collect();
        let mut bld = Builder { tape, model, params, act: spec.activation() };

        let z0 = match spec.backbone {
            Backbone::Ffnet => {
                let f = bld.p("embed.freq");
                let proj = bld.tape.matmul(x, f);
                let ang = bld.tape.scale(proj, 2.0 * PI);
                let s = bld.tape.sin(ang);
                let c = bld.tape.cos(ang);
                bld.tape.concat(&[s, c])
            }
            Backbone::Siren => {
                let u = bld.affine(x, "embed.w", "embed.b");
                let v = bld.tape.scale(u, spec.omega0);
                bld.tape.sin(v)
            }
            Backbone::Linear => x,
        };

        let mut states = vec![z0];
        let mut velocities = Vec::new();
        let latent = if spec.is_dynamical() {
            let dt = spec.dt();
            let mut z = z0;
            for k in 0..spec.steps {
                let t = k as f64 * dt;
                let v = match spec.solver {
                    Solver::Euler => bld.field(z, t, rows),
                    Solver::Rk4 => {
                        let k1 = bld.field(z, t, rows);
                        let z2 = bld.axpy(z, dt / 2.0, k1);
                        let k2 = bld.field(z2, t + dt / 2.0, rows);
                        let z3 = bld.axpy(z, dt / 2.0, k2);
                        let k3 = bld.field(z3, t + dt / 2.0, rows);
                        let z4 = bld.axpy(z, dt, k3);
                        let k4 = bld.field(z4, t + dt, rows);
                        let a = bld.tape.add(k1, k4);
                        let b = bld.tape.add(k2, k3);
                        let b2 = bld.tape.scale(b, 2.0);
                        let s = bld.tape.add(a, b2);
                        bld.tape.scale(s, 1.0 / 6.0)
                    }
                };
                z = bld.axpy(z, dt, v);
                velocities.push(v);
                states.push(z);
            }
            z
        } else {
            bld.body(z0)
        };

        let ow = bld.p("out.w");
        let mut output = bld.tape.matmul(latent, ow);
        if spec.out_bias {
            let ob = bld.p("out.b");
            output = bld.tape.add(output, ob);
        }

        let loss = ke_weight.map(|lambda| {
            let tape = &mut bld.tape;
            let y = tape.input("y", &[rows, spec.out_dim]);
            let diff = tape.sub(output, y);
            let sq = tape.square(diff);
            let s = tape.sum(sq);
            let data = tape.scale(s, 1.0 / rows as f64);
            let ke = (!velocities.is_empty()).then(|| {
                let mut acc: Option<NodeId> = None;
                for &v in &velocities {
                    let sq = tape.square(v);
                    let s = tape.sum(sq);
                    acc = Some(match acc {
                        Some(a) => tape.add(a, s),
                        None => s,
                    });
                }
                tape.scale(acc.expect("nonempty"), spec.dt() / rows as f64)
            });
            let total = match ke {
                Some(k) if lambda != 0.0 => {
                    let w = tape.scale(k, lambda);
                    tape.add(data, w)
                }
                _ => data,
            };
            LossNodes { data, ke, total }
        });

        ForwardGraph { tape: bld.tape, rows, z0, latent, output, states, velocities, loss }
    }

    /// Evaluates the graph and applies the divergence guard to every state.
    pub fn run(&mut self, model: &Model, x: &Tensor, y: Option<&Tensor>) -> Result<()> {
        let mut inputs: Vec<&Tensor> = Vec::with_capacity(model.blocks().len() + 2);
        inputs.push(x);
        inputs.extend(model.blocks().iter().map(|b| &b.tensor));
        match (self.loss.is_some(), y) {
            (true, Some(y)) => inputs.push(y),
            (false, None) => {}
            (true, None) => return Err(Error::invalid("loss graph needs targets")),
            (false, Some(_)) => return Err(Error::invalid("graph was built without a loss")),
        }
        self.tape.run(&inputs)?;
        if model.spec.is_dynamical() {
            for (k, &s) in self.states.iter().enumerate() {
                guard(k, self.tape.value(s).expect("evaluated"))?;
            }
        }
        let out = self.tape.value(self.output).expect("evaluated");
        if !out.is_finite() {
            return Err(Error::NonFinite("model output".into()));
        }
        Ok(())
    }

    fn val(&self, id: NodeId) -> Tensor {
        self.tape.value(id).expect("graph evaluated").clone()
    }

    pub fn output(&self) -> Tensor {
        self.val(self.output)
    }

    pub fn latent(&self) -> Tensor {
        self.val(self.latent)
    }

    pub fn embedding(&self) -> Tensor {
        self.val(self.z0)
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.tape.value(id).and_then(|t| t.item()).expect("scalar node evaluated")
    }

    pub fn trajectory(&self, dt: f64) -> TrajectoryRecord {
        let states = self.states.iter().map(|&s| self.val(s)).collect();
        let velocities = self.velocities.iter().map(|&v| self.val(v)).collect();
        TrajectoryRecord::from_parts(states, velocities, dt)
    }
}
