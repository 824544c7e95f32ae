//! Static and dynamical coordinate networks.
//!
//! Every model is `psi(body(phi(x)))`. `phi` is a Fourier-feature embedding
//! (frozen, Gaussian frequencies), a sine layer, or the identity. In static
//! mode the body is an MLP applied once; in dynamical mode it is the vector
//! field `f([z, t])` of a latent ODE integrated over `[0, T]` with `N` fixed
//! steps, and `psi` decodes the terminal state.
//!
//! Parameter blocks are named `embed.*`, `body.w{i}`/`body.b{i}` and
//! `out.w`/`out.b`, always in that order. Weights are stored `fan_in x fan_out`
//! so a layer reads `h W + b`.

mod checkpoint;
mod graph;
pub mod ode;

use rand::Rng as _;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, stream};
use crate::signal::GridSignal;
use crate::tensor::Tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use graph::{ForwardGraph, LossNodes};
pub use ode::{integrate, TrajectoryRecord};

/// Magnitude beyond which a latent state counts as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    /// Fourier features followed by a ReLU network.
    Ffnet,
    /// Sine layers; `omega0` scales the first one.
    Siren,
    /// Identity embedding with identity activations; for analytic toys.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Static,
    Dynamical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Euler,
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Activation {
    Relu,
    Sin,
    Identity,
}

impl Activation {
    pub(crate) fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Sin => v.sin(),
            Activation::Identity => v,
        }
    }

    pub(crate) fn derivative(self, v: f64) -> f64 {
        match self {
            Activation::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sin => v.cos(),
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default = "d::backbone")]
    pub backbone: Backbone,
    #[serde(default = "d::mode")]
    pub mode: Mode,
    /// Coordinate dimension `d_x`.
    #[serde(default = "d::in_dim")]
    pub in_dim: usize,
    /// Latent dimension `d_z`; twice the number of Fourier frequencies for ffnet.
    #[serde(default = "d::embed_dim")]
    pub embed_dim: usize,
    /// Standard deviation of the Fourier frequencies (ffnet).
    #[serde(default = "d::fourier_scale")]
    pub fourier_scale: f64,
    /// First-layer frequency factor (siren).
    #[serde(default = "d::omega0")]
    pub omega0: f64,
    #[serde(default = "d::hidden_width")]
    pub hidden_width: usize,
    /// Layers in the body. Zero is allowed for static models (identity body).
    #[serde(default = "d::depth")]
    pub depth: usize,
    #[serde(default = "d::steps")]
    pub steps: usize,
    #[serde(default = "d::horizon")]
    pub horizon: f64,
    #[serde(default = "d::solver")]
    pub solver: Solver,
    #[serde(default = "d::out_dim")]
    pub out_dim: usize,
    #[serde(default = "d::out_bias")]
    pub out_bias: bool,
    #[serde(default)]
    pub seed: u64,
}

mod d {
    use super::*;
    pub fn backbone() -> Backbone {
        Backbone::Ffnet
    }
    pub fn mode() -> Mode {
        Mode::Static
    }
    pub fn in_dim() -> usize {
        2
    }
    pub fn embed_dim() -> usize {
        64
    }
    pub fn fourier_scale() -> f64 {
        10.0
    }
    pub fn omega0() -> f64 {
        30.0
    }
    pub fn hidden_width() -> usize {
        64
    }
    pub fn depth() -> usize {
        3
    }
    pub fn steps() -> usize {
        8
    }
    pub fn horizon() -> f64 {
        1.0
    }
    pub fn solver() -> Solver {
        Solver::Euler
    }
    pub fn out_dim() -> usize {
        1
    }
    pub fn out_bias() -> bool {
        true
    }
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            backbone: d::backbone(),
            mode: d::mode(),
            in_dim: d::in_dim(),
            embed_dim: d::embed_dim(),
            fourier_scale: d::fourier_scale(),
            omega0: d::omega0(),
            hidden_width: d::hidden_width(),
            depth: d::depth(),
            steps: d::steps(),
            horizon: d::horizon(),
            solver: d::solver(),
            out_dim: d::out_dim(),
            out_bias: d::out_bias(),
            seed: 0,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("in_dim", self.in_dim),
            ("embed_dim", self.embed_dim),
            ("hidden_width", self.hidden_width),
            ("out_dim", self.out_dim),
        ];
        if let Some((name, _)) = pos.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be positive")));
        }
        match self.backbone {
            Backbone::Ffnet => {
                if self.embed_dim % 2 != 0 {
                    return Err(Error::invalid("ffnet embed_dim must be even (sin and cos halves)"));
                }
                if !(self.fourier_scale.is_finite() && self.fourier_scale >= 0.0) {
                    return Err(Error::invalid("fourier_scale must be finite and >= 0"));
                }
            }
            Backbone::Siren => {
                if !(self.omega0.is_finite() && self.omega0 > 0.0) {
                    return Err(Error::invalid("omega0 must be finite and > 0"));
                }
            }
            Backbone::Linear => {
                if self.embed_dim != self.in_dim {
                    return Err(Error::invalid("linear backbone needs embed_dim == in_dim"));
                }
            }
        }
        if self.mode == Mode::Dynamical {
            if self.steps == 0 {
                return Err(Error::invalid("dynamical model needs steps >= 1"));
            }
            if !(self.horizon.is_finite() && self.horizon > 0.0) {
                return Err(Error::invalid("dynamical model needs a finite horizon > 0"));
            }
            if self.depth == 0 {
                return Err(Error::invalid("dynamical model needs depth >= 1"));
            }
        }
        Ok(())
    }

    pub fn is_dynamical(&self) -> bool {
        self.mode == Mode::Dynamical
    }

    /// Step size `T / N`.
    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// `(fan_in, fan_out)` of each body layer. The dynamical field takes the
    /// time channel as one extra input column.
    pub fn body_layers(&self) -> Vec<(usize, usize)> {
        let dz = self.embed_dim;
        let w = self.hidden_width;
        (0..self.depth)
            .map(|i| {
                let fan_in = if i == 0 { dz + usize::from(self.is_dynamical()) } else { w };
                let fan_out = if i + 1 == self.depth { dz } else { w };
                (fan_in, fan_out)
            })
            .collect()
    }

    pub(crate) fn activation(&self) -> Activation {
        match self.backbone {
            Backbone::Ffnet => Activation::Relu,
            Backbone::Siren => Activation::Sin,
            Backbone::Linear => Activation::Identity,
        }
    }

    /// Whether body layer `i` is followed by the activation. The last layer of
    /// a vector field is linear; static bodies activate every layer.
    pub(crate) fn activated(&self, i: usize) -> bool {
        !(self.is_dynamical() && i + 1 == self.depth)
    }

    /// Trainable scalar count implied by the spec alone.
    pub fn analytic_param_count(&self) -> usize {
        let embed = match self.backbone {
            Backbone::Ffnet | Backbone::Linear => 0,
            Backbone::Siren => self.in_dim * self.embed_dim + self.embed_dim,
        };
        let body: usize = self.body_layers().iter().map(|(i, o)| i * o + o).sum();
        let out = self.embed_dim * self.out_dim + if self.out_bias { self.out_dim } else { 0 };
        embed + body + out
    }
}

/// One named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    pub name: String,
    pub tensor: Tensor,
    /// Frozen blocks (the Fourier frequencies) are stored but never updated.
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    blocks: Vec<ParamBlock>,
}

fn uniform(rng: &mut rng::Rng, bound: f64, n: usize) -> Vec<f64> {
    if bound == 0.0 {
        return vec![0.0; n];
    }
    let u = Uniform::new_inclusive(-bound, bound).expect("finite positive bound");
    (0..n).map(|_| u.sample(rng)).collect()
}

/// Draws a seeded model for `spec`.
pub fn init_model(spec: &ModelSpec) -> Result<Model> {
    spec.validate()?;
    let mut r = rng::seeded(spec.seed, stream::INIT);
    let mut blocks = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, data: Vec<f64>, trainable: bool| {
        blocks.push(ParamBlock { name, tensor: Tensor::from_parts(shape, data), trainable });
    };
    let (dx, dz, dy) = (spec.in_dim, spec.embed_dim, spec.out_dim);
    match spec.backbone {
        Backbone::Ffnet => {
            let m = dz / 2;
            let normal = Normal::new(0.0, spec.fourier_scale).map_err(|e| Error::invalid(e.to_string()))?;
            let freq: Vec<f64> = (0..dx * m).map(|_| normal.sample(&mut r)).collect();
            push("embed.freq".into(), vec![dx, m], freq, false);
        }
        Backbone::Siren => {
            push("embed.w".into(), vec![dx, dz], uniform(&mut r, 1.0 / dx as f64, dx * dz), true);
            push("embed.b".into(), vec![1, dz], uniform(&mut r, 1.0 / (dx as f64).sqrt(), dz), true);
        }
        Backbone::Linear => {}
    }
    for (i, (fan_in, fan_out)) in spec.body_layers().into_iter().enumerate() {
        let k = (6.0 / fan_in as f64).sqrt();
        let wb = match spec.backbone {
            Backbone::Siren => k / spec.omega0,
            _ => k,
        };
        push(format!("body.w{i}"), vec![fan_in, fan_out], uniform(&mut r, wb, fan_in * fan_out), true);
        push(format!("body.b{i}"), vec![1, fan_out], uniform(&mut r, 1.0 / (fan_in as f64).sqrt(), fan_out), true);
    }
    let out_bound = match spec.backbone {
        Backbone::Siren => (6.0 / dz as f64).sqrt() / spec.omega0,
        _ => 1.0 / (dz as f64).sqrt(),
    };
    push("out.w".into(), vec![dz, dy], uniform(&mut r, out_bound, dz * dy), true);
    if spec.out_bias {
        push("out.b".into(), vec![1, dy], uniform(&mut r, 1.0 / (dz as f64).sqrt(), dy), true);
    }
    Ok(Model { spec: spec.clone(), blocks })
}

impl Model {
    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<&Tensor> {
        self.blocks.iter().find(|b| b.name == name).map(|b| &b.tensor)
    }

    /// Replaces a block, keeping its shape.
    pub fn set_block(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        let b = self
            .blocks
            .iter_mut()
            .find(|b| b.name == name)
            .ok_or_else(|| Error::invalid(format!("no parameter block `{name}`")))?;
        if b.tensor.shape() != tensor.shape() {
            return Err(Error::invalid(format!(
                "block `{name}` has shape {:?}, got {:?}",
                b.tensor.shape(),
                tensor.shape()
            )));
        }
        if !tensor.is_finite() {
            return Err(Error::NonFinite(format!("block `{name}`")));
        }
        b.tensor = tensor;
        Ok(())
    }

    /// Rebuilds a model from stored blocks, which must match the spec's layout.
    pub fn from_blocks(spec: ModelSpec, blocks: Vec<ParamBlock>) -> Result<Self> {
        let template = init_model(&spec)?;
        if template.blocks.len() != blocks.len() {
            return Err(Error::Format(format!("expected {} blocks, got {}", template.blocks.len(), blocks.len())));
        }
        for (t, b) in template.blocks.iter().zip(&blocks) {
            if t.name != b.name || t.tensor.shape() != b.tensor.shape() || t.trainable != b.trainable {
                return Err(Error::Format(format!(
                    "block `{}` {:?} does not match expected `{}` {:?}",
                    b.name,
                    b.tensor.shape(),
                    t.name,
                    t.tensor.shape()
                )));
            }
            if !b.tensor.is_finite() {
                return Err(Error::NonFinite(format!("block `{}`", b.name)));
            }
        }
        Ok(Model { spec, blocks })
    }

    pub fn trainable(&self) -> impl Iterator<Item = &ParamBlock> {
        self.blocks.iter().filter(|b| b.trainable)
    }

    pub(crate) fn trainable_mut(&mut self) -> impl Iterator<Item = &mut ParamBlock> {
        self.blocks.iter_mut().filter(|b| b.trainable)
    }

    /// Every trainable scalar, in block order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.trainable().flat_map(|b| b.tensor.data().iter().copied()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().all(|b| b.tensor.is_finite())
    }

    /// Scales every trainable parameter of the body (the static MLP or the
    /// vector field) by `factor`; zero gives `f = 0` for a dynamical model.
    pub fn scale_body(&mut self, factor: f64) {
        for b in self.blocks.iter_mut().filter(|b| b.name.starts_with("body.")) {
            b.tensor = b.tensor.map(|v| v * factor);
        }
    }
}

/// Trainable scalars; the frozen Fourier matrix is not counted.
pub fn count_params(model: &Model) -> usize {
    model.trainable().map(|b| b.tensor.len()).sum()
}

/// Signal bytes over model bytes, both stored as 32-bit floats.
pub fn compression_ratio(model: &Model, signal: &GridSignal) -> f64 {
    compression_ratio_counts(signal.len(), count_params(model))
}

/// [`compression_ratio`] from raw counts.
pub fn compression_ratio_counts(signal_scalars: usize, params: usize) -> f64 {
    (signal_scalars * 4) as f64 / (params * 4) as f64
}

/// `[sin(2 pi x B^T), cos(2 pi x B^T)]` for `x` of shape `n x d_x` and `B` of
/// shape `m x d_x`.
pub fn fourier_embed(x: &Tensor, b: &Tensor) -> Result<Tensor> {
    if x.shape().len() != 2 || b.shape().len() != 2 || x.cols() != b.cols() {
        return Err(Error::invalid(format!("fourier_embed: x {:?} vs B {:?}", x.shape(), b.shape())));
    }
    let proj = x.matmul(&b.transpose())?;
    let (n, m) = (proj.rows(), proj.cols());
    let mut out = Vec::with_capacity(n * 2 * m);
    for r in 0..n {
        let row = proj.row(r);
        out.extend(row.iter().map(|v| (2.0 * std::f64::consts::PI * v).sin()));
        out.extend(row.iter().map(|v| (2.0 * std::f64::consts::PI * v).cos()));
    }
    Ok(Tensor::from_parts(vec![n, 2 * m], out))
}

fn check_coords(model: &Model, x: &Tensor) -> Result<()> {
    if x.shape().len() != 2 || x.cols() != model.spec.in_dim || x.rows() == 0 {
        return Err(Error::invalid(format!(
            "expected coordinates of shape n x {}, got {:?}",
            model.spec.in_dim,
            x.shape()
        )));
    }
    Ok(())
}

/// `psi(f(phi(x)))` for a static model.
pub fn static_forward(model: &Model, x: &Tensor) -> Result<Tensor> {
    if model.spec.is_dynamical() {
        return Err(Error::invalid("static_forward called on a dynamical model"));
    }
    check_coords(model, x)?;
    let mut g = ForwardGraph::build(model, x.rows(), None);
    g.run(model, x, None)?;
    Ok(g.output())
}

/// Integrates the latent ODE from `phi(x)` and decodes the terminal state.
/// With `record`, the visited states, applied velocities and per-row kinetic
/// energy are returned as well.
pub fn dynamical_forward(model: &Model, x: &Tensor, record: bool) -> Result<(Tensor, Option<TrajectoryRecord>)> {
    if !model.spec.is_dynamical() {
        return Err(Error::invalid("dynamical_forward called on a static model"));
    }
    check_coords(model, x)?;
    let mut g = ForwardGraph::build(model, x.rows(), None);
    g.run(model, x, None)?;
    let traj = record.then(|| g.trajectory(model.spec.dt()));
    Ok((g.output(), traj))
}

/// Output of either kind of model.
pub fn forward(model: &Model, x: &Tensor) -> Result<Tensor> {
    check_coords(model, x)?;
    let mut g = ForwardGraph::build(model, x.rows(), None);
    g.run(model, x, None)?;
    Ok(g.output())
}

/// Latent features fed to the decoder: `z_N` for dynamical models, `f(phi(x))`
/// for static ones.
pub fn latent(model: &Model, x: &Tensor) -> Result<Tensor> {
    check_coords(model, x)?;
    let mut g = ForwardGraph::build(model, x.rows(), None);
    g.run(model, x, None)?;
    Ok(g.latent())
}

/// Batch-mean kinetic energy of a recorded trajectory.
pub fn kinetic_energy(traj: &TrajectoryRecord) -> Result<f64> {
    traj.mean_kinetic_energy()
}

/// Draws `n` coordinates uniformly from `[-1, 1]^d`.
pub fn random_coords(n: usize, d: usize, seed: u64) -> Tensor {
    let mut r = rng::seeded(seed, stream::PROBE);
    let data = (0..n * d).map(|_| r.random_range(-1.0..=1.0)).collect();
    Tensor::from_parts(vec![n, d], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(backbone: Backbone, mode: Mode) -> ModelSpec {
        ModelSpec { backbone, mode, embed_dim: 16, hidden_width: 16, depth: 2, seed: 5, ..ModelSpec::default() }
    }

    #[test]
    fn init_is_seeded() {
        let s = spec(Backbone::Siren, Mode::Dynamical);
        assert_eq!(init_model(&s).unwrap(), init_model(&s).unwrap());
        let mut t = s.clone();
        t.seed = 6;
        assert_ne!(init_model(&s).unwrap(), init_model(&t).unwrap());
    }

    #[test]
    fn param_count_hand_formula() {
        // d_x = 2, m = 8 (d_z = 16), width 16, depth 2, d_y = 1
        let s = spec(Backbone::Ffnet, Mode::Static);
        let m = init_model(&s).unwrap();
        let hand = (16 * 16 + 16) + (16 * 16 + 16) + (16 + 1);
        assert_eq!(count_params(&m), hand);
        assert_eq!(count_params(&m), s.analytic_param_count());

        let d = init_model(&spec(Backbone::Ffnet, Mode::Dynamical)).unwrap();
        assert_eq!(count_params(&d), hand + 16);
    }

    #[test]
    fn linear_unit_model_has_two_params() {
        let s = ModelSpec { backbone: Backbone::Linear, in_dim: 1, embed_dim: 1, depth: 0, ..ModelSpec::default() };
        assert_eq!(count_params(&init_model(&s).unwrap()), 2);
    }

    #[test]
    fn siren_first_layer_range() {
        let s = ModelSpec { backbone: Backbone::Siren, in_dim: 3, embed_dim: 32, ..ModelSpec::default() };
        let m = init_model(&s).unwrap();
        assert!(m.block("embed.w").unwrap().data().iter().all(|v| v.abs() <= 1.0 / 3.0));
    }

    #[test]
    fn fourier_embed_cases() {
        let x = Tensor::matrix(1, 1, vec![1.0]).unwrap();
        let b = Tensor::matrix(1, 1, vec![0.5]).unwrap();
        let e = fourier_embed(&x, &b).unwrap();
        assert!(e.data()[0].abs() < 1e-15 && (e.data()[1] + 1.0).abs() < 1e-15);

        let x0 = Tensor::zeros(&[3, 2]);
        let b2 = Tensor::matrix(2, 2, vec![1.0, 2.0, -3.0, 0.5]).unwrap();
        let e0 = fourier_embed(&x0, &b2).unwrap();
        assert!(e0.data().chunks(4).all(|r| r == [0.0, 0.0, 1.0, 1.0]));

        let zb = Tensor::zeros(&[2, 2]);
        let xa = Tensor::matrix(2, 2, vec![0.3, -0.7, 0.9, 0.1]).unwrap();
        let ea = fourier_embed(&xa, &zb).unwrap();
        assert_eq!(ea.row(0), ea.row(1));
        assert!(fourier_embed(&xa, &Tensor::zeros(&[2, 3])).is_err());
    }

    #[test]
    fn compression_ratio_table_value() {
        let r = compression_ratio_counts(1024 * 1024, 727_000);
        assert!((r - 1.442).abs() < 0.01);
        assert!((compression_ratio_counts(100, 50) - 2.0 * compression_ratio_counts(100, 100)).abs() < 1e-15);
        assert!(compression_ratio_counts(10, 20) < 1.0);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(init_model(&ModelSpec { hidden_width: 0, ..ModelSpec::default() }).is_err());
        assert!(init_model(&ModelSpec { embed_dim: 7, ..ModelSpec::default() }).is_err());
        assert!(init_model(&ModelSpec { mode: Mode::Dynamical, steps: 0, ..ModelSpec::default() }).is_err());
        assert!(init_model(&ModelSpec { mode: Mode::Dynamical, horizon: 0.0, ..ModelSpec::default() }).is_err());
    }

    #[test]
    fn mode_mismatch_is_an_error() {
        let st = init_model(&spec(Backbone::Ffnet, Mode::Static)).unwrap();
        let dy = init_model(&spec(Backbone::Ffnet, Mode::Dynamical)).unwrap();
        let x = random_coords(4, 2, 1);
        assert!(dynamical_forward(&st, &x, false).is_err());
        assert!(static_forward(&dy, &x).is_err());
    }
}
