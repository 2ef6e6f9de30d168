//! Fully connected network with ReLU hidden layers: forward pass and
//! reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{axpy, dot, Scalar};

use super::loss::{Objective, Sample, WeightedL1};
use super::spec::{NetSpec, OutputActivation};

/// Weights are stored row-major, `outputs x inputs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<T>,
    pub biases: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![T::zero(); inputs * outputs],
            biases: vec![T::zero(); outputs],
        }
    }

    fn row(&self, o: usize) -> &[T] {
        &self.weights[o * self.inputs..(o + 1) * self.inputs]
    }

    fn fill_zero(&mut self) {
        self.weights.iter_mut().for_each(|w| *w = T::zero());
        self.biases.iter_mut().for_each(|b| *b = T::zero());
    }

    fn values(&self) -> impl Iterator<Item = &T> {
        self.weights.iter().chain(self.biases.iter())
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.weights.iter_mut().chain(self.biases.iter_mut())
    }
}

/// Gradient of a loss with respect to every parameter, laid out like the network.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Dense<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(spec: &NetSpec) -> Self {
        Self {
            layers: spec
                .layer_widths
                .windows(2)
                .map(|w| Dense::zeros(w[0], w[1]))
                .collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        self.layers.iter_mut().for_each(Dense::fill_zero);
    }

    pub fn scale(&mut self, factor: T) {
        for l in &mut self.layers {
            l.values_mut().for_each(|v| *v *= factor);
        }
    }

    /// Flattened in the same order as [`Mlp::flatten`].
    pub fn flatten(&self) -> Vec<T> {
        self.layers.iter().flat_map(|l| l.values().copied()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.values().all(|v| v.is_finite()))
    }
}

/// Per-sample activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct Trace<T> {
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Vec<T>>,
    deltas: Vec<Vec<T>>,
    dout: Vec<T>,
}

impl<T: Scalar> Trace<T> {
    pub fn new(spec: &NetSpec) -> Self {
        Self {
            acts: spec.layer_widths.iter().map(|w| vec![T::zero(); *w]).collect(),
            deltas: spec.layer_widths.iter().map(|w| vec![T::zero(); *w]).collect(),
            dout: vec![T::zero(); spec.output_dim()],
        }
    }

    pub fn output(&self) -> &[T] {
        self.acts.last().unwrap()
    }
}

#[inline]
fn sigmoid<T: Scalar>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    spec: NetSpec,
    layers: Vec<Dense<T>>,
    seed: u64,
}

impl<T: Scalar> Mlp<T> {
    /// Seeded uniform initialization, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    /// for weights and biases.
    pub fn init(spec: &NetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .layer_widths
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let mut d = Dense::zeros(w[0], w[1]);
                for v in d.values_mut() {
                    *v = T::of(rng.random_range(-bound..bound));
                }
                d
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            layers,
            seed,
        })
    }

    pub fn zeros(spec: &NetSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec: spec.clone(),
            layers: Gradients::<T>::zeros_like(spec).layers,
            seed: 0,
        })
    }

    /// Rebuilds a network from explicit layers, checking shapes and finiteness.
    pub fn from_layers(spec: &NetSpec, layers: Vec<Dense<T>>, seed: u64) -> Result<Self> {
        spec.validate()?;
        if layers.len() != spec.n_layers() {
            return Err(Error::DimensionMismatch {
                context: "layer count",
                expected: spec.n_layers(),
                got: layers.len(),
            });
        }
        for (l, w) in layers.iter().zip(spec.layer_widths.windows(2)) {
            if l.inputs != w[0] || l.outputs != w[1] {
                return Err(Error::InvalidSpec(format!(
                    "layer shape {}x{} does not match spec {}x{}",
                    l.outputs, l.inputs, w[1], w[0]
                )));
            }
            if l.weights.len() != w[0] * w[1] || l.biases.len() != w[1] {
                return Err(Error::InvalidSpec("parameter buffer has wrong length".into()));
            }
            if !l.values().all(|v| v.is_finite()) {
                return Err(Error::InvalidSpec("non-finite parameter".into()));
            }
        }
        Ok(Self {
            spec: spec.clone(),
            layers,
            seed,
        })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Dense<T>] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    pub fn flatten(&self) -> Vec<T> {
        self.layers.iter().flat_map(|l| l.values().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                context: "flat parameters",
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        for (dst, src) in self.layers.iter_mut().flat_map(|l| l.values_mut()).zip(flat) {
            *dst = *src;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.values().all(|v| v.is_finite()))
    }

    fn check_input(&self, input: &[T]) -> Result<()> {
        if input.len() != self.spec.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "network input",
                expected: self.spec.input_dim(),
                got: input.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[T]) -> Result<Vec<T>> {
        self.check_input(input)?;
        let mut trace = Trace::new(&self.spec);
        self.forward_trace(input, &mut trace);
        Ok(trace.output().to_vec())
    }

    /// Pre-activation values of every layer, for kink analysis in tests.
    pub fn pre_activations(&self, input: &[T]) -> Result<Vec<Vec<T>>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        let mut out = Vec::with_capacity(self.layers.len());
        for (li, layer) in self.layers.iter().enumerate() {
            let z: Vec<T> = (0..layer.outputs)
                .map(|o| layer.biases[o] + dot(layer.row(o), &x))
                .collect();
            x = if li + 1 == self.layers.len() {
                z.clone()
            } else {
                z.iter().map(|v| v.max(T::zero())).collect()
            };
            out.push(z);
        }
        Ok(out)
    }

    /// Forward pass storing activations in `trace`. `input` must have the
    /// network's input width.
    pub fn forward_trace(&self, input: &[T], trace: &mut Trace<T>) {
        trace.acts[0].copy_from_slice(input);
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let (head, tail) = trace.acts.split_at_mut(li + 1);
            let x = &head[li];
            let y = &mut tail[0];
            for (o, yo) in y.iter_mut().enumerate() {
                let z = layer.biases[o] + dot(layer.row(o), x);
                *yo = if li < last {
                    z.max(T::zero())
                } else {
                    match self.spec.output_activation {
                        OutputActivation::Sigmoid => sigmoid(z),
                        OutputActivation::Identity => z,
                    }
                };
            }
        }
    }

    /// Runs forward and backward for one sample, adding its gradient to
    /// `grads`. Returns the sample loss. Shapes are not checked.
    pub fn accumulate<O: Objective<T>>(
        &self,
        objective: &O,
        sample: &Sample<T>,
        trace: &mut Trace<T>,
        grads: &mut Gradients<T>,
    ) -> T {
        self.forward_trace(&sample.input, trace);
        let n = self.layers.len();
        let loss = {
            let Trace { acts, dout, .. } = &mut *trace;
            objective.loss_grad(&acts[n], sample, dout)
        };

        // delta at the output pre-activation
        {
            let Trace { acts, deltas, dout } = &mut *trace;
            let y = &acts[n];
            for ((d, g), yv) in deltas[n].iter_mut().zip(dout.iter()).zip(y) {
                *d = match self.spec.output_activation {
                    OutputActivation::Sigmoid => *g * *yv * (T::one() - *yv),
                    OutputActivation::Identity => *g,
                };
            }
        }

        for li in (0..n).rev() {
            let layer = &self.layers[li];
            let grad = &mut grads.layers[li];
            let (lower, upper) = trace.deltas.split_at_mut(li + 1);
            let delta = &upper[0];
            let x = &trace.acts[li];
            for (o, d) in delta.iter().enumerate() {
                if *d == T::zero() {
                    continue;
                }
                grad.biases[o] += *d;
                axpy(*d, x, &mut grad.weights[o * layer.inputs..(o + 1) * layer.inputs]);
            }
            if li > 0 {
                let prev = &mut lower[li];
                prev.iter_mut().for_each(|v| *v = T::zero());
                for (o, d) in delta.iter().enumerate() {
                    if *d != T::zero() {
                        axpy(*d, layer.row(o), prev);
                    }
                }
                // ReLU derivative: acts[li] is the rectified output of layer li - 1
                for (p, a) in prev.iter_mut().zip(x) {
                    if *a <= T::zero() {
                        *p = T::zero();
                    }
                }
            }
        }
        loss
    }

    /// Gradient of the weighted L1 loss of a single sample.
    pub fn backward(&self, input: &[T], target: &[T], weight: T) -> Result<(T, Gradients<T>)> {
        self.check_input(input)?;
        if target.len() != self.spec.output_dim() {
            return Err(Error::DimensionMismatch {
                context: "network target",
                expected: self.spec.output_dim(),
                got: target.len(),
            });
        }
        let sample = Sample::new(input.to_vec(), target.to_vec(), weight);
        let mut trace = Trace::new(&self.spec);
        let mut grads = Gradients::zeros_like(&self.spec);
        let loss = self.accumulate(&WeightedL1, &sample, &mut trace, &mut grads);
        Ok((loss, grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(act: OutputActivation) -> NetSpec {
        NetSpec::new(vec![3, 5, 4, 2], act).unwrap()
    }

    #[test]
    fn zero_params_sigmoid_outputs_half() {
        let net = Mlp::<f64>::zeros(&spec(OutputActivation::Sigmoid)).unwrap();
        assert_eq!(net.forward(&[0.3, -2.0, 7.0]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn zero_params_identity_outputs_zero() {
        let net = Mlp::<f64>::zeros(&spec(OutputActivation::Identity)).unwrap();
        assert_eq!(net.forward(&[0.3, -2.0, 7.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn input_dimension_is_checked() {
        let net = Mlp::<f64>::init(&spec(OutputActivation::Identity), 1).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(net.backward(&[1.0, 2.0, 3.0], &[1.0], 1.0).is_err());
    }

    #[test]
    fn sigmoid_outputs_in_open_interval() {
        let net = Mlp::<f64>::init(&spec(OutputActivation::Sigmoid), 9).unwrap();
        for i in 0..50 {
            let x = [i as f64 * 0.3 - 7.0, 1.0, -(i as f64)];
            for y in net.forward(&x).unwrap() {
                assert!(y > 0.0 && y < 1.0);
            }
        }
    }

    #[test]
    fn seeded_forward_golden() {
        let net = Mlp::<f64>::init(&spec(OutputActivation::Sigmoid), 42).unwrap();
        let out = net.forward(&[0.1, 0.5, 0.9]).unwrap();
        let again = Mlp::<f64>::init(&spec(OutputActivation::Sigmoid), 42).unwrap();
        assert_eq!(out, again.forward(&[0.1, 0.5, 0.9]).unwrap());
        // frozen from a verified run
        let golden = [0.5344051796967566, 0.5409222525421135];
        for (a, b) in out.iter().zip(golden) {
            assert!((a - b).abs() < 1e-15, "{out:?}");
        }
    }

    #[test]
    fn zero_weight_gives_zero_gradient() {
        let net = Mlp::<f64>::init(&spec(OutputActivation::Sigmoid), 3).unwrap();
        let (loss, g) = net.backward(&[0.2, 0.4, 0.6], &[1.0, 0.0], 0.0).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.flatten().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn exact_prediction_gives_zero_gradient() {
        let net = Mlp::<f64>::init(&spec(OutputActivation::Identity), 3).unwrap();
        let x = [0.2, 0.4, 0.6];
        let target = net.forward(&x).unwrap();
        let (loss, g) = net.backward(&x, &target, 1.0).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.flatten().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn flatten_round_trip() {
        let net = Mlp::<f32>::init(&spec(OutputActivation::Identity), 5).unwrap();
        let mut other = Mlp::<f32>::zeros(net.spec()).unwrap();
        other.set_flat(&net.flatten()).unwrap();
        assert_eq!(other.forward(&[1.0, 2.0, 3.0]).unwrap(), net.forward(&[1.0, 2.0, 3.0]).unwrap());
        assert!(other.set_flat(&[1.0]).is_err());
    }

    #[test]
    fn from_layers_checks_shapes() {
        let s = spec(OutputActivation::Identity);
        let net = Mlp::<f64>::init(&s, 5).unwrap();
        assert!(Mlp::from_layers(&s, net.layers().to_vec(), 5).is_ok());
        let mut bad = net.layers().to_vec();
        bad.pop();
        assert!(Mlp::from_layers(&s, bad, 5).is_err());
        let mut nan = net.layers().to_vec();
        nan[0].weights[0] = f64::NAN;
        assert!(Mlp::from_layers(&s, nan, 5).is_err());
    }
}
