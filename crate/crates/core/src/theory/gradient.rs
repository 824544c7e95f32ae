//! Closed-form parameter gradients of a dynamical model, assembled from
//! per-step Jacobians without the tape.
//!
//! For `z_{k+1} = z_k + dt f(z_k, t_k)` and `y = psi(z_N)`:
//!
//! * decoder block: `d psi / d theta_psi (z_N)`
//! * field block: `sum_k d psi/d z_N  P_{k+1:N-1}  dt  d f/d theta_f (z_k, t_k)`
//! * embedding block: `d psi/d z_N  P_{0:N-1}  d phi/d theta_phi (x)`
//!
//! where `P_{a:b} = (I + dt J_b) ... (I + dt J_a)`, later steps on the left,
//! and `P_{a:b} = I` when `a > b`.

use crate::autodiff::GradientVector;
use crate::error::{Error, Result};
use crate::models::{Backbone, Model, Solver};
use crate::tensor::Tensor;
use crate::theory::linalg::matmul_sq;

/// Per-step latent Jacobians `J_k` of one trajectory and their products.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianChain {
    /// `d x d` each.
    pub jacobians: Vec<Tensor>,
    pub dt: f64,
}

impl JacobianChain {
    pub fn new(jacobians: Vec<Tensor>, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::invalid("Jacobian chain needs dt > 0"));
        }
        let d = jacobians.first().map_or(0, |j| j.rows());
        if jacobians.iter().any(|j| j.shape() != [d, d]) {
            return Err(Error::invalid("Jacobian chain needs square factors of one size"));
        }
        Ok(JacobianChain { jacobians, dt })
    }

    pub fn dim(&self) -> usize {
        self.jacobians.first().map_or(0, |j| j.rows())
    }

    pub fn len(&self) -> usize {
        self.jacobians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jacobians.is_empty()
    }

    /// `I + dt J_k`.
    pub fn factor(&self, k: usize) -> Tensor {
        let d = self.dim();
        let mut f = Tensor::identity(d).into_data();
        for (v, j) in f.iter_mut().zip(self.jacobians[k].data()) {
            *v += self.dt * j;
        }
        Tensor::from_parts(vec![d, d], f)
    }

    /// `P_{a:b} = (I + dt J_b) ... (I + dt J_a)`; the identity when `a > b`.
    pub fn partial(&self, a: usize, b: usize) -> Tensor {
        let d = self.dim();
        let mut p = Tensor::identity(d).into_data();
        if a > b {
            return Tensor::from_parts(vec![d, d], p);
        }
        for k in a..=b {
            p = matmul_sq(self.factor(k).data(), &p, d);
        }
        Tensor::from_parts(vec![d, d], p)
    }

    /// `P = P_{0:N-1}`.
    pub fn total(&self) -> Tensor {
        if self.is_empty() {
            return Tensor::identity(self.dim().max(1));
        }
        self.partial(0, self.len() - 1)
    }

    /// `J_sum = sum_k J_k`.
    pub fn j_sum(&self) -> Tensor {
        let d = self.dim();
        let mut s = vec![0.0; d * d];
        for j in &self.jacobians {
            s.iter_mut().zip(j.data()).for_each(|(a, b)| *a += b);
        }
        Tensor::from_parts(vec![d, d], s)
    }
}

/// Straight-line evaluation of the vector field at one state, keeping what the
/// Jacobian and the parameter gradients need.
struct FieldPass {
    /// Input of each layer (the first is `[z, t]`).
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of each layer.
    pre: Vec<Vec<f64>>,
    out: Vec<f64>,
}

fn field_pass(model: &Model, z: &[f64], t: f64) -> FieldPass {
    let spec = &model.spec;
    let act = spec.activation();
    let mut h: Vec<f64> = z.iter().copied().chain(std::iter::once(t)).collect();
    let mut inputs = Vec::with_capacity(spec.depth);
    let mut pre = Vec::with_capacity(spec.depth);
    for i in 0..spec.depth {
        let w = model.block(&format!("body.w{i}")).expect("layer weight");
        let b = model.block(&format!("body.b{i}")).expect("layer bias");
        let (fi, fo) = (w.rows(), w.cols());
        let mut p = b.data().to_vec();
        for (r, hv) in h.iter().enumerate().take(fi) {
            for c in 0..fo {
                p[c] += hv * w.data()[r * fo + c];
            }
        }
        inputs.push(h);
        h = if spec.activated(i) { p.iter().map(|&v| act.apply(v)).collect() } else { p.clone() };
        pre.push(p);
    }
    FieldPass { inputs, pre, out: h }
}

/// `J = d f / d z` at a recorded pass (the time input is held fixed).
fn field_jacobian(model: &Model, pass: &FieldPass) -> Tensor {
    let spec = &model.spec;
    let act = spec.activation();
    let dz = spec.embed_dim;
    // rows: current layer units, columns: z components
    let mut m: Vec<Vec<f64>> = (0..dz + 1).map(|i| (0..dz).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for i in 0..spec.depth {
        let w = model.block(&format!("body.w{i}")).expect("layer weight");
        let (fi, fo) = (w.rows(), w.cols());
        let mut next = vec![vec![0.0; dz]; fo];
        for (c, row) in next.iter_mut().enumerate() {
            for (r, mr) in m.iter().enumerate().take(fi) {
                let wv = w.data()[r * fo + c];
                if wv != 0.0 {
                    row.iter_mut().zip(mr).for_each(|(a, b)| *a += wv * b);
                }
            }
            if spec.activated(i) {
                let s = act.derivative(pass.pre[i][c]);
                row.iter_mut().for_each(|a| *a *= s);
            }
        }
        m = next;
    }
    Tensor::from_parts(vec![dz, dz], m.into_iter().flatten().collect())
}

/// Accumulates `r * d f / d theta_f` into per-layer weight and bias gradients.
fn field_vjp(model: &Model, pass: &FieldPass, r: &[f64], gw: &mut [Vec<f64>], gb: &mut [Vec<f64>]) {
    let spec = &model.spec;
    let act = spec.activation();
    let mut g = r.to_vec();
    for i in (0..spec.depth).rev() {
        let w = model.block(&format!("body.w{i}")).expect("layer weight");
        let (fi, fo) = (w.rows(), w.cols());
        if spec.activated(i) {
            g.iter_mut().zip(&pass.pre[i]).for_each(|(a, &p)| *a *= act.derivative(p));
        }
        let u = &pass.inputs[i];
        for a in 0..fi {
            for c in 0..fo {
                gw[i][a * fo + c] += u[a] * g[c];
            }
        }
        gb[i].iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        if i > 0 {
            g = (0..fi).map(|a| (0..fo).map(|c| w.data()[a * fo + c] * g[c]).sum()).collect();
        }
    }
}

/// Pieces of a closed-form gradient evaluation.
#[derive(Debug, Clone)]
pub struct ClosedForm {
    pub gradient: GradientVector,
    pub chain: JacobianChain,
    /// `z_0..z_N`.
    pub states: Vec<Vec<f64>>,
}

fn row_times(r: &[f64], m: &Tensor) -> Vec<f64> {
    let d = m.cols();
    (0..d).map(|j| r.iter().enumerate().map(|(i, v)| v * m.data()[i * d + j]).sum()).collect()
}

/// Closed-form gradient of the scalar output at a single coordinate for an
/// Euler dynamical model. Entries follow the model's trainable block order.
pub fn closed_form_dinr_gradient(model: &Model, x: &Tensor) -> Result<ClosedForm> {
    let spec = &model.spec;
    if !spec.is_dynamical() {
        return Err(Error::invalid("closed-form gradient needs a dynamical model"));
    }
    if spec.solver != Solver::Euler {
        return Err(Error::Unsupported("closed-form gradient is derived for the Euler solver only".into()));
    }
    if spec.out_dim != 1 {
        return Err(Error::invalid("closed-form gradient needs a scalar output"));
    }
    if x.rows() != 1 || x.cols() != spec.in_dim {
        return Err(Error::invalid(format!("expected one coordinate of dimension {}", spec.in_dim)));
    }
    let xv = x.row(0);
    let dz = spec.embed_dim;
    let dt = spec.dt();
    let two_pi = 2.0 * std::f64::consts::PI;

    // embedding and its pre-activation
    let (z0, siren_pre): (Vec<f64>, Vec<f64>) = match spec.backbone {
        Backbone::Ffnet => {
            let f = model.block("embed.freq").expect("frequencies");
            let m = f.cols();
            let proj: Vec<f64> = (0..m).map(|j| (0..spec.in_dim).map(|i| xv[i] * f.data()[i * m + j]).sum()).collect();
            let z = proj.iter().map(|p| (two_pi * p).sin()).chain(proj.iter().map(|p| (two_pi * p).cos())).collect();
            (z, Vec::new())
        }
        Backbone::Siren => {
            let w = model.block("embed.w").expect("embedding weight");
            let b = model.block("embed.b").expect("embedding bias");
            let u: Vec<f64> = (0..dz).map(|j| b.data()[j] + (0..spec.in_dim).map(|i| xv[i] * w.data()[i * dz + j]).sum::<f64>()).collect();
            (u.iter().map(|v| (spec.omega0 * v).sin()).collect(), u)
        }
        Backbone::Linear => (xv.to_vec(), Vec::new()),
    };

    let mut states = vec![z0];
    let mut passes = Vec::with_capacity(spec.steps);
    let mut jacobians = Vec::with_capacity(spec.steps);
    for k in 0..spec.steps {
        let z = &states[k];
        let pass = field_pass(model, z, k as f64 * dt);
        jacobians.push(field_jacobian(model, &pass));
        let next: Vec<f64> = z.iter().zip(&pass.out).map(|(a, v)| a + dt * v).collect();
        passes.push(pass);
        states.push(next);
    }
    let chain = JacobianChain::new(jacobians, dt)?;
    let zn = states.last().expect("terminal state");
    let out_w = model.block("out.w").expect("decoder weight");
    let g: Vec<f64> = out_w.data().to_vec();

    let layers = spec.body_layers();
    let mut gw: Vec<Vec<f64>> = layers.iter().map(|(i, o)| vec![0.0; i * o]).collect();
    let mut gb: Vec<Vec<f64>> = layers.iter().map(|(_, o)| vec![0.0; *o]).collect();
    for (k, pass) in passes.iter().enumerate() {
        let p = chain.partial(k + 1, spec.steps - 1);
        let r: Vec<f64> = row_times(&g, &p).into_iter().map(|v| v * dt).collect();
        field_vjp(model, pass, &r, &mut gw, &mut gb);
    }

    let r0 = row_times(&g, &chain.total());
    let mut entries = Vec::new();
    for b in model.trainable() {
        let shape = b.tensor.shape().to_vec();
        let name = b.name.as_str();
        let v = match name {
            "embed.w" => {
                let mut v = vec![0.0; spec.in_dim * dz];
                for i in 0..spec.in_dim {
                    for j in 0..dz {
                        v[i * dz + j] = r0[j] * (spec.omega0 * siren_pre[j]).cos() * spec.omega0 * xv[i];
                    }
                }
                v
            }
            "embed.b" => (0..dz).map(|j| r0[j] * (spec.omega0 * siren_pre[j]).cos() * spec.omega0).collect(),
            "out.w" => zn.clone(),
            "out.b" => vec![1.0],
            _ => {
                let idx: usize = name[6..].parse().map_err(|_| Error::invalid(format!("unexpected block `{name}`")))?;
                if name.starts_with("body.w") {
                    gw[idx].clone()
                } else {
                    gb[idx].clone()
                }
            }
        };
        entries.push((name.to_string(), shape, v));
    }
    Ok(ClosedForm { gradient: GradientVector::new(entries), chain, states })
}

/// Per-step Jacobians of the vector field along the Euler trajectory from `x`.
pub fn trajectory_jacobians(model: &Model, x: &Tensor) -> Result<JacobianChain> {
    Ok(closed_form_dinr_gradient(model, x)?.chain)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_products_order_and_identity() {
        let j0 = Tensor::matrix(2, 2, vec![0., 1., 0., 0.]).unwrap();
        let j1 = Tensor::matrix(2, 2, vec![0., 0., 1., 0.]).unwrap();
        let c = JacobianChain::new(vec![j0, j1], 1.0).unwrap();
        assert_eq!(c.partial(1, 0), Tensor::identity(2));
        // (I + J1)(I + J0) = [[1,0],[1,1]] [[1,1],[0,1]] = [[1,1],[1,2]]
        assert_eq!(c.total().data(), &[1., 1., 1., 2.]);
        assert_eq!(c.j_sum().data(), &[0., 1., 1., 0.]);
    }
}
