//! The neural signed distance field `f_theta: R^3 -> R`.
//!
//! An MLP with optional input skip connection. Besides evaluation it exposes
//! the derivatives the adversarial trainer needs: the spatial gradient, the
//! gradient of the projection loss with respect to the query point (which
//! differentiates through the spatial gradient), and parameter gradients of
//! any weighted sum of projection losses.
//!
//! Derivatives are hand-derived per layer. A forward pass optionally carries
//! a tangent (forward mode), and the reverse pass differentiates both the
//! value and the tangent output. That single primitive yields `grad f`,
//! Hessian-vector products `H u`, and parameter gradients of `u . grad f`.

mod checkpoint;
mod kernel;
mod mlp;
mod query;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use query::{
    accumulate_param_grads, backward_params, eval, eval_batch, eval_grad, eval_grad_batch,
    grad_loss_wrt_query, loss_query, projection_terms, query_loss_gradients, ProjectionTerms,
    QueryEval, GRAD_EPS,
};

use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    /// `ln(1 + exp(beta z)) / beta`
    Softplus { beta: f64 },
}

impl Activation {
    #[inline]
    pub(crate) fn value(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Softplus { beta } => {
                let bz = beta * z;
                if bz > 30.0 {
                    z
                } else {
                    bz.exp().ln_1p() / beta
                }
            }
        }
    }

    #[inline]
    pub(crate) fn first(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus { beta } => sigmoid(beta * z),
        }
    }

    #[inline]
    pub(crate) fn second(self, z: f64) -> f64 {
        match self {
            Activation::Relu => 0.0,
            Activation::Softplus { beta } => {
                let s = sigmoid(beta * z);
                beta * s * (1.0 - s)
            }
        }
    }

    /// True when the Hessian of the field vanishes almost everywhere.
    pub fn is_piecewise_linear(self) -> bool {
        matches!(self, Activation::Relu)
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitScheme {
    /// Weights chosen so the untrained field approximates `|x| - radius`.
    Geometric { radius: f64 },
    UniformHe,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldConfig {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    /// Hidden layer whose input is `concat(h, q) / sqrt(2)`.
    pub skip_layer: Option<usize>,
    pub activation: Activation,
    pub init: InitScheme,
    pub seed: u64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 8,
            hidden_width: 256,
            skip_layer: Some(4),
            activation: Activation::Relu,
            init: InitScheme::Geometric { radius: 0.5 },
            seed: 0,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers == 0 || self.hidden_width == 0 {
            return Err(Error::InvalidArgument(
                "field needs at least one hidden layer of positive width".into(),
            ));
        }
        if let Some(s) = self.skip_layer {
            if s >= self.hidden_layers {
                return Err(Error::InvalidArgument(format!(
                    "skip layer {s} must be below hidden layer count {}",
                    self.hidden_layers
                )));
            }
        }
        if let Activation::Softplus { beta } = self.activation {
            if !(beta > 0.0 && beta.is_finite()) {
                return Err(Error::InvalidArgument("softplus beta must be positive".into()));
            }
        }
        Ok(())
    }

    /// Input width of hidden layer `layer`.
    pub(crate) fn layer_input_dim(&self, layer: usize) -> usize {
        let base = if layer == 0 { 3 } else { self.hidden_width };
        if self.skip_layer == Some(layer) {
            base + 3
        } else {
            base
        }
    }
}

/// One affine layer; `weight` is `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(out: usize, inp: usize) -> Self {
        Self {
            weight: Array2::zeros((out, inp)),
            bias: Array1::zeros(out),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Network weights plus the two learnable loss weights of the hybrid loss.
/// The last entry of `layers` is the scalar output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldParams {
    pub config: FieldConfig,
    pub layers: Vec<Dense>,
    pub lambda1: f64,
    pub lambda2: f64,
}

/// Gradient with the same shape as [`FieldParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrads {
    pub layers: Vec<Dense>,
    pub lambda1: f64,
    pub lambda2: f64,
}

fn layer_shapes(config: &FieldConfig) -> Vec<(usize, usize)> {
    let mut shapes: Vec<(usize, usize)> = (0..config.hidden_layers)
        .map(|l| (config.hidden_width, config.layer_input_dim(l)))
        .collect();
    shapes.push((1, config.hidden_width));
    shapes
}

/// Initializes a field deterministically from `config.seed`; both loss
/// weights start at 1.
pub fn init_field(config: &FieldConfig) -> Result<FieldParams> {
    config.validate()?;
    let mut rng = rng::rng(config.seed);
    let shapes = layer_shapes(config);
    let last = shapes.len() - 1;
    let mut layers = Vec::with_capacity(shapes.len());
    for (l, &(out, inp)) in shapes.iter().enumerate() {
        let mut dense = Dense::zeros(out, inp);
        match config.init {
            InitScheme::Geometric { radius } => {
                if l == last {
                    let mean = (std::f64::consts::PI / inp as f64).sqrt();
                    let dist = Normal::new(mean, 1e-5).expect("valid normal");
                    dense.weight.mapv_inplace(|_| dist.sample(&mut rng));
                    dense.bias.fill(-radius);
                } else {
                    let std = 2f64.sqrt() / (out as f64).sqrt();
                    let dist = Normal::new(0.0, std).expect("valid normal");
                    dense.weight.mapv_inplace(|_| dist.sample(&mut rng));
                }
            }
            InitScheme::UniformHe => {
                let bound = (6.0 / inp as f64).sqrt();
                let dist = Uniform::new(-bound, bound).expect("valid bounds");
                dense.weight.mapv_inplace(|_| dist.sample(&mut rng));
                let bb = 1.0 / (inp as f64).sqrt();
                dense.bias.mapv_inplace(|_| rng.random_range(-bb..bb));
            }
        }
        layers.push(dense);
    }
    Ok(FieldParams {
        config: config.clone(),
        layers,
        lambda1: 1.0,
        lambda2: 1.0,
    })
}

impl FieldParams {
    pub fn hidden(&self) -> &[Dense] {
        &self.layers[..self.layers.len() - 1]
    }

    pub fn output(&self) -> &Dense {
        self.layers.last().expect("field has an output layer")
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|d| d.weight.len() + d.bias.len())
            .sum::<usize>()
            + 2
    }

    /// Every scalar in a fixed order: each layer's weights (row-major) then
    /// biases, then `lambda1`, `lambda2`.
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|d| d.weight.iter().chain(d.bias.iter()))
            .chain([&self.lambda1, &self.lambda2])
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|d| d.weight.iter_mut().chain(d.bias.iter_mut()))
            .chain([&mut self.lambda1, &mut self.lambda2])
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    /// A field equal to `w . q + b` for every `q` with coordinates above -64,
    /// useful as an analytic reference. Built as one identity hidden relu
    /// layer shifted into its linear regime.
    pub fn linear(w: [f64; 3], b: f64) -> Self {
        const SHIFT: f64 = 64.0;
        let config = FieldConfig {
            hidden_layers: 1,
            hidden_width: 3,
            skip_layer: None,
            activation: Activation::Relu,
            init: InitScheme::UniformHe,
            seed: 0,
        };
        let hidden = Dense {
            weight: Array2::eye(3),
            bias: Array1::from_elem(3, SHIFT),
        };
        let output = Dense {
            weight: Array2::from_shape_vec((1, 3), w.to_vec()).expect("shape"),
            bias: Array1::from_elem(1, b - SHIFT * (w[0] + w[1] + w[2])),
        };
        Self {
            config,
            layers: vec![hidden, output],
            lambda1: 1.0,
            lambda2: 1.0,
        }
    }
}

impl FieldGrads {
    pub fn zeros_like(params: &FieldParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|d| Dense::zeros(d.out_dim(), d.in_dim()))
                .collect(),
            lambda1: 0.0,
            lambda2: 0.0,
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|d| d.weight.iter().chain(d.bias.iter()))
            .chain([&self.lambda1, &self.lambda2])
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|d| d.weight.iter_mut().chain(d.bias.iter_mut()))
            .chain([&mut self.lambda1, &mut self.lambda2])
    }

    pub fn add_assign(&mut self, other: &FieldGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
        self.lambda1 += other.lambda1;
        self.lambda2 += other.lambda2;
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.values_mut() {
            *v *= s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }
}
