//! Feed-forward ReLU networks used for both the Q-function and the action
//! function.
//!
//! A network is a chain of affine layers each followed by a ReLU, and a
//! linear read-out with no bias and no activation:
//!
//! ```text
//! z_0 = (x, a),   y_l = W_l z_l + b_l,   z_{l+1} = max(0, y_l),   out = C z_H
//! ```
//!
//! For a Q-network `C` has a single row (`c`) and `out` is the scalar Q-value.

mod adam;
mod checkpoint;

pub use adam::AdamState;
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, MAGIC};

use rand::Rng;

use crate::error::{check_dim, CaqlError, Result};
use crate::linalg::Matrix;
use crate::scalar::{all_finite, Scalar};

/// One affine layer followed by a ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Layer<T> {
    pub fn new(weights: Matrix<T>, bias: Vec<T>) -> Result<Self> {
        check_dim("layer bias", weights.rows(), bias.len())?;
        Ok(Self { weights, bias })
    }

    #[inline]
    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    #[inline]
    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    /// `W z + b`
    pub fn affine(&self, z: &[T]) -> Vec<T> {
        let mut y = self.weights.mul_vec(z);
        for (yi, bi) in y.iter_mut().zip(&self.bias) {
            *yi += *bi;
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReluNet<T> {
    layers: Vec<Layer<T>>,
    output: Matrix<T>,
    state_dim: usize,
}

/// Activations recorded during a forward pass, consumed by backprop.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    /// Layer inputs `z_0 .. z_H` (`z_0` is the network input).
    pub inputs: Vec<Vec<T>>,
    /// Pre-activations `y_0 .. y_{H-1}`.
    pub pre: Vec<Vec<T>>,
    pub output: Vec<T>,
}

impl<T: Scalar> ReluNet<T> {
    /// Validates layer chaining and finiteness.
    ///
    /// `state_dim` is the number of leading inputs that belong to the state;
    /// the remaining inputs are the action.
    pub fn new(layers: Vec<Layer<T>>, output: Matrix<T>, state_dim: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(CaqlError::InvalidNetwork(
                "at least one hidden layer is required".into(),
            ));
        }
        for (j, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(CaqlError::InvalidNetwork(format!(
                    "layer {} emits {} units but layer {} expects {}",
                    j,
                    pair[0].outputs(),
                    j + 1,
                    pair[1].inputs()
                )));
            }
        }
        let last = layers.last().map_or(0, Layer::outputs);
        if output.cols() != last {
            return Err(CaqlError::InvalidNetwork(format!(
                "output weights have {} columns, last hidden layer has {} units",
                output.cols(),
                last
            )));
        }
        if output.rows() == 0 {
            return Err(CaqlError::InvalidNetwork("empty output head".into()));
        }
        if state_dim > layers[0].inputs() {
            return Err(CaqlError::InvalidNetwork(format!(
                "state_dim {} exceeds input width {}",
                state_dim,
                layers[0].inputs()
            )));
        }
        let net = Self {
            layers,
            output,
            state_dim,
        };
        if !net.is_finite() {
            return Err(CaqlError::InvalidNetwork("non-finite parameter".into()));
        }
        Ok(net)
    }

    /// Q-network over `(state, action)` with a scalar read-out.
    pub fn q_network<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        Self::random(state_dim + action_dim, state_dim, hidden, 1, rng)
    }

    /// Action network mapping a state to an action vector.
    pub fn action_network<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        Self::random(state_dim, state_dim, hidden, action_dim, rng)
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` initialisation for every
    /// weight and bias.
    pub fn random<R: Rng + ?Sized>(
        input_dim: usize,
        state_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(hidden.len());
        let mut fan_in = input_dim;
        for &width in hidden {
            let scale = 1.0 / (fan_in.max(1) as f64).sqrt();
            let mut draw = || T::lit(rng.random_range(-scale..=scale));
            let w: Vec<T> = (0..width * fan_in).map(|_| draw()).collect();
            let b: Vec<T> = (0..width).map(|_| draw()).collect();
            layers.push(Layer::new(Matrix::from_row_major(width, fan_in, w), b)?);
            fan_in = width;
        }
        let scale = 1.0 / (fan_in.max(1) as f64).sqrt();
        let out: Vec<T> = (0..output_dim * fan_in)
            .map(|_| T::lit(rng.random_range(-scale..=scale)))
            .collect();
        Self::new(layers, Matrix::from_row_major(output_dim, fan_in, out), state_dim)
    }

    /// All-zero network with the given shape.
    pub fn zeros(input_dim: usize, state_dim: usize, hidden: &[usize], output_dim: usize) -> Result<Self> {
        let mut layers = Vec::new();
        let mut fan_in = input_dim;
        for &width in hidden {
            layers.push(Layer::new(Matrix::zeros(width, fan_in), vec![T::zero(); width])?);
            fan_in = width;
        }
        Self::new(layers, Matrix::zeros(output_dim, fan_in), state_dim)
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn output(&self) -> &Matrix<T> {
        &self.output
    }

    /// Output weights `c` of a scalar-output network.
    pub fn output_weights(&self) -> &[T] {
        self.output.row(0)
    }

    pub fn num_hidden(&self) -> usize {
        self.layers.len()
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers.iter().map(Layer::outputs).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.input_dim() - self.state_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output.rows()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| all_finite(l.weights.as_slice()) && all_finite(&l.bias))
            && all_finite(self.output.as_slice())
    }

    pub fn join_input(&self, x: &[T], a: &[T]) -> Result<Vec<T>> {
        check_dim("state input", self.state_dim, x.len())?;
        check_dim("action input", self.action_dim(), a.len())?;
        let mut input = Vec::with_capacity(x.len() + a.len());
        input.extend_from_slice(x);
        input.extend_from_slice(a);
        Ok(input)
    }

    /// Full forward pass over a concatenated input.
    pub fn forward_input(&self, input: &[T]) -> Result<Vec<T>> {
        check_dim("network input", self.input_dim(), input.len())?;
        let mut z = input.to_vec();
        for layer in &self.layers {
            z = layer.affine(&z);
            z.iter_mut().for_each(|v| *v = v.relu());
        }
        Ok(self.output.mul_vec(&z))
    }

    /// Q-value `c · z_H` of a scalar-output network.
    pub fn q(&self, x: &[T], a: &[T]) -> Result<T> {
        self.scalar_output()?;
        let input = self.join_input(x, a)?;
        Ok(self.forward_input(&input)?[0])
    }

    /// Output of an action network at state `x`.
    pub fn act(&self, x: &[T]) -> Result<Vec<T>> {
        check_dim("state input", self.input_dim(), x.len())?;
        self.forward_input(x)
    }

    /// Pre-activations `y_0 .. y_{H-1}` at `(x, a)`.
    pub fn pre_activations(&self, x: &[T], a: &[T]) -> Result<Vec<Vec<T>>> {
        let input = self.join_input(x, a)?;
        Ok(self.trace(&input)?.pre)
    }

    pub fn trace(&self, input: &[T]) -> Result<Trace<T>> {
        check_dim("network input", self.input_dim(), input.len())?;
        let mut inputs = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        inputs.push(input.to_vec());
        for layer in &self.layers {
            let y = layer.affine(inputs.last().expect("nonempty"));
            inputs.push(y.iter().map(|v| v.relu()).collect());
            pre.push(y);
        }
        let output = self.output.mul_vec(inputs.last().expect("nonempty"));
        Ok(Trace {
            inputs,
            pre,
            output,
        })
    }

    /// Reverse pass for output seed `seed`. Returns the input gradient and,
    /// if `param_grad` is given, accumulates `scale * d(seed·out)/dθ` into it.
    ///
    /// The ReLU derivative at exactly zero is taken to be zero.
    pub fn backprop(
        &self,
        trace: &Trace<T>,
        seed: &[T],
        mut param_grad: Option<(&mut [T], T)>,
    ) -> Vec<T> {
        debug_assert_eq!(seed.len(), self.output_dim());
        let offsets = self.param_offsets();
        let h = self.layers.len();
        if let Some((g, scale)) = param_grad.as_mut() {
            let base = offsets[h];
            let zh = &trace.inputs[h];
            for (r, &s) in seed.iter().enumerate() {
                let row = &mut g[base + r * zh.len()..base + (r + 1) * zh.len()];
                for (gi, &zi) in row.iter_mut().zip(zh) {
                    *gi += *scale * s * zi;
                }
            }
        }
        let mut gz = self.output.tr_mul_vec(seed);
        for l in (0..h).rev() {
            let layer = &self.layers[l];
            let gy: Vec<T> = gz
                .iter()
                .zip(&trace.pre[l])
                .map(|(&g, &y)| if y > T::zero() { g } else { T::zero() })
                .collect();
            if let Some((g, scale)) = param_grad.as_mut() {
                let base = offsets[l];
                let zin = &trace.inputs[l];
                let n_in = layer.inputs();
                let n_out = layer.outputs();
                for (i, &gyi) in gy.iter().enumerate() {
                    if gyi == T::zero() {
                        continue;
                    }
                    let row = &mut g[base + i * n_in..base + (i + 1) * n_in];
                    for (gw, &zj) in row.iter_mut().zip(zin) {
                        *gw += *scale * gyi * zj;
                    }
                    g[base + n_out * n_in + i] += *scale * gyi;
                }
            }
            gz = layer.weights.tr_mul_vec(&gy);
        }
        gz
    }

    /// Gradient of the scalar output w.r.t. the state and action inputs.
    pub fn grad_input(&self, x: &[T], a: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        self.scalar_output()?;
        let input = self.join_input(x, a)?;
        let trace = self.trace(&input)?;
        let mut g = self.backprop(&trace, &[T::one()], None);
        let ga = g.split_off(self.state_dim);
        Ok((g, ga))
    }

    /// Gradient of the scalar output w.r.t. the action input only, together
    /// with the output value.
    pub fn value_and_action_grad(&self, x: &[T], a: &[T]) -> Result<(T, Vec<T>)> {
        self.scalar_output()?;
        let input = self.join_input(x, a)?;
        let trace = self.trace(&input)?;
        let g = self.backprop(&trace, &[T::one()], None);
        Ok((trace.output[0], g[self.state_dim..].to_vec()))
    }

    /// Mean parameter gradient `(1/n) Σ_i seed_i · ∂out_i/∂θ` for a
    /// scalar-output network, where `seed_i = ∂loss/∂out_i`.
    pub fn grad_params(&self, inputs: &[Vec<T>], seeds: &[T]) -> Result<Vec<T>> {
        self.scalar_output()?;
        let seeds: Vec<Vec<T>> = seeds.iter().map(|&s| vec![s]).collect();
        self.grad_params_vec(inputs, &seeds)
    }

    /// Vector-output variant of [`ReluNet::grad_params`].
    pub fn grad_params_vec(&self, inputs: &[Vec<T>], seeds: &[Vec<T>]) -> Result<Vec<T>> {
        if inputs.is_empty() {
            return Err(CaqlError::EmptyBatch("grad_params"));
        }
        check_dim("gradient seeds", inputs.len(), seeds.len())?;
        let mut grad = vec![T::zero(); self.num_params()];
        let scale = T::one() / T::lit(inputs.len() as f64);
        for (input, seed) in inputs.iter().zip(seeds) {
            check_dim("gradient seed width", self.output_dim(), seed.len())?;
            if seed.iter().all(|s| *s == T::zero()) {
                continue;
            }
            let trace = self.trace(input)?;
            self.backprop(&trace, seed, Some((&mut grad, scale)));
        }
        Ok(grad)
    }

    fn scalar_output(&self) -> Result<()> {
        check_dim("scalar network output", 1, self.output_dim())
    }

    /// Start offset of each layer's parameters in the flat layout, with the
    /// output head last.
    fn param_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.layers.len() + 1);
        let mut at = 0;
        for layer in &self.layers {
            offsets.push(at);
            at += layer.outputs() * layer.inputs() + layer.outputs();
        }
        offsets.push(at);
        offsets
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.outputs() * l.inputs() + l.outputs())
            .sum::<usize>()
            + self.output.rows() * self.output.cols()
    }

    /// Flat parameter vector: each layer's weights (row-major) then bias, then
    /// the output weights.
    pub fn params(&self) -> Vec<T> {
        let mut p = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            p.extend_from_slice(layer.weights.as_slice());
            p.extend_from_slice(&layer.bias);
        }
        p.extend_from_slice(self.output.as_slice());
        p
    }

    pub fn set_params(&mut self, p: &[T]) -> Result<()> {
        check_dim("parameter vector", self.num_params(), p.len())?;
        let mut at = 0;
        for layer in &mut self.layers {
            let nw = layer.weights.as_slice().len();
            layer.weights.as_mut_slice().copy_from_slice(&p[at..at + nw]);
            at += nw;
            let nb = layer.bias.len();
            layer.bias.copy_from_slice(&p[at..at + nb]);
            at += nb;
        }
        self.output.as_mut_slice().copy_from_slice(&p[at..]);
        Ok(())
    }

    /// Converts the scalar type of every parameter.
    pub fn cast<U: Scalar>(&self) -> ReluNet<U> {
        let conv = |v: T| U::lit(v.to_f64_lossy());
        ReluNet {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weights: l.weights.map(conv),
                    bias: l.bias.iter().map(|&b| conv(b)).collect(),
                })
                .collect(),
            output: self.output.map(conv),
            state_dim: self.state_dim,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_unit(w: f64, b: f64, c: f64) -> ReluNet<f64> {
        let layer = Layer::new(Matrix::from_row_major(1, 1, vec![w]), vec![b]).unwrap();
        ReluNet::new(vec![layer], Matrix::from_row_major(1, 1, vec![c]), 0).unwrap()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = ReluNet::<f64>::zeros(4, 3, &[32, 16], 1).unwrap();
        assert_eq!(net.q(&[1.0, -2.0, 0.5], &[0.3]).unwrap(), 0.0);
        let (gx, ga) = net.grad_input(&[1.0, -2.0, 0.5], &[0.3]).unwrap();
        assert!(gx.iter().chain(&ga).all(|&g| g == 0.0));
    }

    #[test]
    fn single_unit_by_hand() {
        let net = one_unit(2.0, -0.5, 3.0);
        assert!((net.q(&[], &[0.5]).unwrap() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let net = one_unit(2.0, -1.0, 3.0);
        let (_, ga) = net.grad_input(&[], &[0.5]).unwrap();
        assert_eq!(ga, vec![0.0]);
    }

    #[test]
    fn linear_region_gradient_is_weight_product() {
        // All pre-activations positive on the input: gradient = c W2 W1.
        let l1 = Layer::new(
            Matrix::from_rows(&[vec![1.0, 2.0], vec![0.5, -1.0]]),
            vec![10.0, 10.0],
        )
        .unwrap();
        let l2 = Layer::new(Matrix::from_rows(&[vec![1.0, 1.0]]), vec![1.0]).unwrap();
        let net = ReluNet::new(vec![l1, l2], Matrix::from_rows(&[vec![-2.0]]), 1).unwrap();
        let (gx, ga) = net.grad_input(&[0.1], &[0.2]).unwrap();
        // c W2 W1 = -2 * [1.5, 1.0]
        assert_eq!(gx, vec![-3.0]);
        assert_eq!(ga, vec![-2.0]);
    }

    #[test]
    fn one_neuron_l2_param_gradient() {
        // q = c * relu(w a + b); loss = (q - t)^2, seed = 2 (q - t).
        let (w, b, c, a, t) = (1.5, 0.2, -0.7, 0.4, 1.0);
        let net = one_unit(w, b, c);
        let q = net.q(&[], &[a]).unwrap();
        let seed = 2.0 * (q - t);
        let g = net.grad_params(&[vec![a]], &[seed]).unwrap();
        let h = w * a + b;
        let expect = [seed * c * a, seed * c, seed * h];
        for (got, want) in g.iter().zip(expect) {
            assert!((got - want).abs() < 1e-14, "{got} vs {want}");
        }
    }

    #[test]
    fn zero_seed_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = ReluNet::<f64>::q_network(3, 1, &[8, 4], &mut rng).unwrap();
        let inputs = vec![vec![0.1, 0.2, 0.3, 0.4]; 3];
        let g = net.grad_params(&inputs, &[0.0; 3]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_batch_is_rejected() {
        let net = one_unit(1.0, 0.0, 1.0);
        assert!(matches!(
            net.grad_params(&[], &[]),
            Err(CaqlError::EmptyBatch(_))
        ));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = ReluNet::<f64>::q_network(3, 1, &[8], &mut rng).unwrap();
        assert!(matches!(
            net.q(&[0.0, 0.0], &[0.0]),
            Err(CaqlError::Dimension { .. })
        ));
        assert!(net.q(&[0.0; 3], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn chaining_is_validated() {
        let l1 = Layer::new(Matrix::<f64>::zeros(3, 2), vec![0.0; 3]).unwrap();
        let l2 = Layer::new(Matrix::<f64>::zeros(2, 4), vec![0.0; 2]).unwrap();
        assert!(ReluNet::new(vec![l1, l2], Matrix::zeros(1, 2), 1).is_err());
    }

    #[test]
    fn params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = ReluNet::<f64>::q_network(3, 1, &[32, 16], &mut rng).unwrap();
        assert_eq!(net.num_params(), 4 * 32 + 32 + 32 * 16 + 16 + 16);
        let mut other = ReluNet::<f64>::zeros(4, 3, &[32, 16], 1).unwrap();
        other.set_params(&net.params()).unwrap();
        assert_eq!(other, net);
    }

    #[test]
    fn init_respects_fan_in_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = ReluNet::<f64>::q_network(3, 1, &[32, 16], &mut rng).unwrap();
        assert!(net.layers()[0].weights.as_slice().iter().all(|w| w.abs() <= 0.5));
        let s = 1.0 / 32f64.sqrt();
        assert!(net.layers()[1].weights.as_slice().iter().all(|w| w.abs() <= s));
    }
}
