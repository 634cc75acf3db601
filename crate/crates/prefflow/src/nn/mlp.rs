//! Small fully-connected regressor `y(x_t, t, c)`.
//!
//! The network consumes the noisy sample, a three-feature time embedding
//! `(t, sin 2*pi*t, cos 2*pi*t)` and the condition vector, and regresses the
//! prediction target (noise, score or velocity). Everything is f64; a model
//! snapshot is immutable during forward/gradient evaluation.

use crate::error::{Error, Result};
use crate::nn::tape::{Tape, Var};
use crate::rng::{self, Purpose};
use serde::{Deserialize, Serialize};

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Silu,
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "silu" => Ok(Activation::Silu),
            other => Err(Error::Config(format!(
                "unknown activation {other:?} (expected tanh | silu)"
            ))),
        }
    }
}

/// Number of scalar time features appended to the input.
pub const TIME_FEATURES: usize = 3;

/// Input layer width for a given data and condition dimensionality.
pub fn input_dim(data_dim: usize, cond_dim: usize) -> usize {
    data_dim + TIME_FEATURES + cond_dim
}

/// Concatenate `(x_t, t, sin 2*pi*t, cos 2*pi*t, c)`.
pub fn embed_input(x_t: &[f64], t: f64, c: &[f64]) -> Vec<f64> {
    let mut input = Vec::with_capacity(x_t.len() + TIME_FEATURES + c.len());
    input.extend_from_slice(x_t);
    let w = std::f64::consts::TAU * t;
    input.push(t);
    input.push(w.sin());
    input.push(w.cos());
    input.extend_from_slice(c);
    input
}

/// Fully-connected regressor with per-layer weight matrices and biases.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layer_dims: Vec<usize>,
    activation: Activation,
    seed: u64,
    /// Row-major `[out][in]` weights per layer.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Initialize with uniform weights of scale `1/sqrt(fan_in)` and zero biases.
pub fn mlp_init(layer_dims: &[usize], activation: Activation, seed: u64) -> Result<MlpModel> {
    if layer_dims.len() < 2 {
        return Err(Error::Config(format!(
            "need at least 2 layer dims, got {layer_dims:?}"
        )));
    }
    if layer_dims.contains(&0) {
        return Err(Error::Config(format!(
            "layer dims must be positive, got {layer_dims:?}"
        )));
    }
    let mut rng = rng::stream(seed, Purpose::ModelInit, 0);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for win in layer_dims.windows(2) {
        let (fan_in, fan_out) = (win[0], win[1]);
        let scale = 1.0 / (fan_in as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| rng::uniform(&mut rng, -scale, scale))
            .collect();
        weights.push(w);
        biases.push(vec![0.0; fan_out]);
    }
    Ok(MlpModel {
        layer_dims: layer_dims.to_vec(),
        activation,
        seed,
        weights,
        biases,
    })
}

impl MlpModel {
    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn in_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Flatten as `[w0, b0, w1, b1, ...]` with row-major weights.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            flat.extend_from_slice(w);
            flat.extend_from_slice(b);
        }
        flat
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut off = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            let nw = w.len();
            let nb = b.len();
            w.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            b.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    pub fn same_architecture(&self, other: &MlpModel) -> bool {
        self.layer_dims == other.layer_dims && self.activation == other.activation
    }

    fn activate(&self, x: f64) -> f64 {
        match self.activation {
            Activation::Tanh => x.tanh(),
            Activation::Silu => crate::math::silu(x),
        }
    }

    /// Forward pass on a raw input vector of width `layer_dims[0]`.
    pub fn forward_input(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.in_dim() {
            return Err(Error::Shape(format!(
                "input dim {} != expected {}",
                input.len(),
                self.in_dim()
            )));
        }
        let n_layers = self.weights.len();
        let mut act = input.to_vec();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let fan_in = self.layer_dims[l];
            let fan_out = self.layer_dims[l + 1];
            let mut next = Vec::with_capacity(fan_out);
            for o in 0..fan_out {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                let mut z = b[o];
                for (wi, ai) in row.iter().zip(&act) {
                    z += wi * ai;
                }
                next.push(if l + 1 == n_layers {
                    z
                } else {
                    self.activate(z)
                });
            }
            act = next;
        }
        Ok(act)
    }

    /// Forward pass on `(x_t, t, c)` through the time embedding.
    pub fn forward(&self, x_t: &[f64], t: f64, c: &[f64]) -> Result<Vec<f64>> {
        self.forward_input(&embed_input(x_t, t, c))
    }
}

/// Model view whose parameters are tape variables; forwarding through it
/// records the computation for reverse-mode differentiation.
pub struct TapedMlp<'m> {
    model: &'m MlpModel,
    params: Vec<Var>,
}

impl<'m> TapedMlp<'m> {
    pub fn params(&self) -> &[Var] {
        &self.params
    }

    /// Forward `(x_t, t, c)`; inputs enter the tape as constants.
    pub fn forward(&self, tape: &mut Tape, x_t: &[f64], t: f64, c: &[f64]) -> Result<Vec<Var>> {
        self.forward_input(tape, &embed_input(x_t, t, c))
    }

    pub fn forward_input(&self, tape: &mut Tape, input: &[f64]) -> Result<Vec<Var>> {
        let model = self.model;
        if input.len() != model.in_dim() {
            return Err(Error::Shape(format!(
                "input dim {} != expected {}",
                input.len(),
                model.in_dim()
            )));
        }
        let n_layers = model.weights.len();
        let mut act: Vec<Var> = input.iter().map(|&v| tape.constant(v)).collect();
        let mut off = 0;
        for l in 0..n_layers {
            let fan_in = model.layer_dims[l];
            let fan_out = model.layer_dims[l + 1];
            let w_vars = &self.params[off..off + fan_in * fan_out];
            let b_vars = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            off += fan_in * fan_out + fan_out;
            let mut next = Vec::with_capacity(fan_out);
            for o in 0..fan_out {
                let row = &w_vars[o * fan_in..(o + 1) * fan_in];
                let z = tape.dot_affine(row, &act, b_vars[o]);
                next.push(if l + 1 == n_layers {
                    z
                } else {
                    match model.activation {
                        Activation::Tanh => tape.tanh(z),
                        Activation::Silu => tape.silu(z),
                    }
                });
            }
            act = next;
        }
        Ok(act)
    }
}

/// Reverse-mode gradient of a scalar loss over the model parameters.
///
/// The closure receives a fresh tape and a taped view of the model and
/// returns the loss node; scalarness is enforced by the `Var` return type.
/// Returns `(loss value, gradient)` with the gradient laid out like
/// [`MlpModel::flat_params`].
pub fn grad_loss<F>(model: &MlpModel, build: F) -> Result<(f64, Vec<f64>)>
where
    F: FnOnce(&mut Tape, &TapedMlp) -> Result<Var>,
{
    let mut tape = Tape::new();
    let params = tape.inputs(&model.flat_params());
    let taped = TapedMlp { model, params };
    let loss = build(&mut tape, &taped)?;
    let grad = tape.backward(loss);
    Ok((tape.value(loss), grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{finite_diff_grad, max_rel_err};

    #[test]
    fn same_seed_gives_bit_identical_parameters() {
        let a = mlp_init(&[4, 8, 2], Activation::Tanh, 11).unwrap();
        let b = mlp_init(&[4, 8, 2], Activation::Tanh, 11).unwrap();
        assert_eq!(a.flat_params(), b.flat_params());
        let c = mlp_init(&[4, 8, 2], Activation::Tanh, 12).unwrap();
        assert_ne!(a.flat_params(), c.flat_params());
    }

    #[test]
    fn parameter_count_matches_arithmetic() {
        // 3*8 + 8 + 8*2 + 2 = 50
        let m = mlp_init(&[3, 8, 2], Activation::Tanh, 0).unwrap();
        assert_eq!(m.param_count(), 50);
        assert_eq!(m.flat_params().len(), 50);
    }

    #[test]
    fn biases_are_zero_at_init() {
        let m = mlp_init(&[3, 8, 2], Activation::Silu, 5).unwrap();
        assert!(m.biases.iter().all(|b| b.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn init_rejects_degenerate_dims() {
        assert!(matches!(
            mlp_init(&[3], Activation::Tanh, 0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            mlp_init(&[3, 0, 2], Activation::Tanh, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn zero_weight_network_outputs_last_bias() {
        let mut m = mlp_init(&[3, 4, 2], Activation::Tanh, 0).unwrap();
        let mut flat = vec![0.0; m.param_count()];
        // Set the output biases (last two entries) to a marker value.
        let n = flat.len();
        flat[n - 2] = 0.25;
        flat[n - 1] = -1.5;
        m.set_flat_params(&flat).unwrap();
        let y = m.forward_input(&[0.3, -0.7, 2.0]).unwrap();
        assert_eq!(y, vec![0.25, -1.5]);
    }

    #[test]
    fn single_linear_layer_reproduces_affine_map() {
        let mut m = mlp_init(&[2, 2], Activation::Tanh, 0).unwrap();
        // W = [[1, 2], [3, 4]], b = [10, 20]
        m.set_flat_params(&[1.0, 2.0, 3.0, 4.0, 10.0, 20.0])
            .unwrap();
        let y = m.forward_input(&[5.0, -1.0]).unwrap();
        assert_eq!(y, vec![5.0 - 2.0 + 10.0, 15.0 - 4.0 + 20.0]);
    }

    #[test]
    fn forward_rejects_dim_mismatch() {
        let m = mlp_init(&[3, 2], Activation::Tanh, 0).unwrap();
        assert!(matches!(m.forward_input(&[1.0, 2.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn embedded_forward_matches_manual_embedding() {
        let m = mlp_init(&[input_dim(2, 1), 6, 2], Activation::Silu, 3).unwrap();
        let (x, t, c) = ([0.4, -0.2], 0.37, [1.0]);
        let via_embed = m.forward(&x, t, &c).unwrap();
        let manual = m.forward_input(&embed_input(&x, t, &c)).unwrap();
        assert_eq!(via_embed, manual);
    }

    #[test]
    fn taped_forward_equals_plain_forward() {
        let m = mlp_init(&[5, 7, 3], Activation::Tanh, 9).unwrap();
        let input = [0.1, -0.4, 0.9, 2.0, -1.3];
        let plain = m.forward_input(&input).unwrap();
        let (val, _) = grad_loss(&m, |tape, taped| {
            let y = taped.forward_input(tape, &input)?;
            Ok(tape.sum(&y))
        })
        .unwrap();
        assert!((val - plain.iter().sum::<f64>()).abs() < 1e-14);
    }

    #[test]
    fn quadratic_loss_gradient_matches_hand_formula() {
        // One linear layer, loss = ||W x - y||^2: dL/dW = 2 (W x - y) x^T.
        let mut m = mlp_init(&[2, 2], Activation::Tanh, 0).unwrap();
        m.set_flat_params(&[0.5, -1.0, 2.0, 0.25, 0.0, 0.0])
            .unwrap();
        let x = [1.5, -0.5];
        let target = [1.0, -2.0];
        let (_, grad) = grad_loss(&m, |tape, taped| {
            let y = taped.forward_input(tape, &x)?;
            Ok(tape.sq_dist(&y, &target))
        })
        .unwrap();
        let y = m.forward_input(&x).unwrap();
        let r = [y[0] - target[0], y[1] - target[1]];
        let expected = [
            2.0 * r[0] * x[0],
            2.0 * r[0] * x[1],
            2.0 * r[1] * x[0],
            2.0 * r[1] * x[1],
            2.0 * r[0],
            2.0 * r[1],
        ];
        assert!(max_rel_err(&grad, &expected) < 1e-12);
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        for (seed, act) in [(1, Activation::Tanh), (2, Activation::Silu)] {
            let m = mlp_init(&[4, 8, 8, 2], act, seed).unwrap();
            let input = [0.5, -1.0, 0.25, 0.75];
            let target = [0.3, -0.6];
            let (_, grad) = grad_loss(&m, |tape, taped| {
                let y = taped.forward_input(tape, &input)?;
                Ok(tape.sq_dist(&y, &target))
            })
            .unwrap();
            let base = m.flat_params();
            let fd = finite_diff_grad(
                |p| {
                    let mut probe = m.clone();
                    probe.set_flat_params(p).unwrap();
                    let y = probe.forward_input(&input).unwrap();
                    crate::math::sq_dist(&y, &target)
                },
                &base,
                1e-5,
            );
            assert!(
                max_rel_err(&grad, &fd) < 1e-4,
                "act {act:?}: {}",
                max_rel_err(&grad, &fd)
            );
        }
    }

    #[test]
    fn random_inputs_stay_finite() {
        let m = mlp_init(&[6, 16, 16, 2], Activation::Silu, 7).unwrap();
        let mut rng = crate::rng::stream(123, crate::rng::Purpose::Eval, 0);
        for _ in 0..10_000 {
            let input = crate::rng::normal_vec(&mut rng, 6);
            let y = m.forward_input(&input).unwrap();
            assert!(y.iter().all(|v| v.is_finite()));
        }
    }
}
