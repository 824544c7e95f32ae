//! Fixed-step integration of batched latent ODEs.

use crate::error::{Error, Result};
use crate::models::{Solver, DIVERGENCE_LIMIT};
use crate::tensor::Tensor;

/// States, applied velocities and kinetic energy of one integrated batch.
///
/// `states[k + 1] == states[k] + dt * velocities[k]` as computed. For RK4 the
/// recorded velocity is the combined stage velocity `(k1 + 2k2 + 2k3 + k4) / 6`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    /// `z_0..z_N`, each `batch x d_z`.
    pub states: Vec<Tensor>,
    /// `N` entries, each `batch x d_z`.
    pub velocities: Vec<Tensor>,
    /// `sum_k ||v_k||^2 dt` per batch row.
    pub kinetic_energy: Vec<f64>,
    pub dt: f64,
}

impl TrajectoryRecord {
    pub(crate) fn from_parts(states: Vec<Tensor>, velocities: Vec<Tensor>, dt: f64) -> Self {
        let rows = states.first().map_or(0, |s| s.rows());
        let mut ke = vec![0.0; rows];
        for v in &velocities {
            for (r, e) in ke.iter_mut().enumerate() {
                *e += v.row(r).iter().map(|a| a * a).sum::<f64>() * dt;
            }
        }
        TrajectoryRecord { states, velocities, kinetic_energy: ke, dt }
    }

    pub fn steps(&self) -> usize {
        self.velocities.len()
    }

    /// Batch mean of the per-row kinetic energy.
    pub fn mean_kinetic_energy(&self) -> Result<f64> {
        if self.velocities.is_empty() || self.kinetic_energy.is_empty() {
            return Err(Error::invalid("kinetic energy of an empty trajectory"));
        }
        Ok(self.kinetic_energy.iter().sum::<f64>() / self.kinetic_energy.len() as f64)
    }

    pub fn initial(&self) -> &Tensor {
        &self.states[0]
    }

    pub fn terminal(&self) -> &Tensor {
        self.states.last().expect("at least one state")
    }
}

/// Fails when any entry is non-finite or exceeds the divergence limit.
pub(crate) fn guard(step: usize, z: &Tensor) -> Result<()> {
    let mut worst = 0.0f64;
    for &v in z.data() {
        if !v.is_finite() {
            return Err(Error::Diverged { step, magnitude: f64::INFINITY });
        }
        worst = worst.max(v.abs());
    }
    if worst > DIVERGENCE_LIMIT {
        return Err(Error::Diverged { step, magnitude: worst });
    }
    Ok(())
}

fn axpy(z: &Tensor, a: f64, v: &Tensor) -> Tensor {
    let data = z.data().iter().zip(v.data()).map(|(z, v)| z + a * v).collect();
    Tensor::from_parts(z.shape().to_vec(), data)
}

/// Integrates `dz/dt = field(z, t)` from `z0` over `[0, horizon]` in `steps`
/// equal steps. `field` must return a tensor shaped like its input.
pub fn integrate<F>(z0: Tensor, horizon: f64, steps: usize, solver: Solver, mut field: F) -> Result<TrajectoryRecord>
where
    F: FnMut(&Tensor, f64) -> Result<Tensor>,
{
    if steps == 0 || !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid("integration needs steps >= 1 and a finite horizon > 0"));
    }
    let dt = horizon / steps as f64;
    let mut call = |z: &Tensor, t: f64| -> Result<Tensor> {
        let v = field(z, t)?;
        if v.shape() != z.shape() {
            return Err(Error::invalid(format!("vector field returned {:?} for state {:?}", v.shape(), z.shape())));
        }
        Ok(v)
    };
    guard(0, &z0)?;
    let mut states = vec![z0];
    let mut velocities = Vec::with_capacity(steps);
    for k in 0..steps {
        let t = k as f64 * dt;
        let z = &states[k];
        let v = match solver {
            Solver::Euler => call(z, t)?,
            Solver::Rk4 => {
                let k1 = call(z, t)?;
                let k2 = call(&axpy(z, dt / 2.0, &k1), t + dt / 2.0)?;
                let k3 = call(&axpy(z, dt / 2.0, &k2), t + dt / 2.0)?;
                let k4 = call(&axpy(z, dt, &k3), t + dt)?;
                let data = (0..k1.len())
                    .map(|i| (k1.data()[i] + 2.0 * k2.data()[i] + 2.0 * k3.data()[i] + k4.data()[i]) / 6.0)
                    .collect();
                Tensor::from_parts(k1.shape().to_vec(), data)
            }
        };
        let next = axpy(z, dt, &v);
        guard(k + 1, &next)?;
        velocities.push(v);
        states.push(next);
    }
    Ok(TrajectoryRecord::from_parts(states, velocities, dt))
}
