use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::layer::Layer;
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Standard deviation of the weight initializer.
pub const INIT_STD: f64 = 0.02;

/// Flat `(name, tensor)` snapshot of a network's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet<T: Scalar = f32> {
    pub entries: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> ParameterSet<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Graph handles for every parameter of a network, in registry order.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: Vec<Var>,
    /// Start offset into `vars` for each layer.
    offsets: Vec<usize>,
}

impl BoundParams {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// An ordered stack of layers with a stable parameter registry.
///
/// Parameter names are `<network>.<layer index>.<weight|bias>`.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T: Scalar = f32> {
    name: String,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> Network<T> {
    /// Builds a network for per-sample inputs of `input_shape`, validating that every
    /// layer accepts its predecessor's output.
    pub fn new(name: impl Into<String>, input_shape: Vec<usize>, layers: Vec<Layer<T>>) -> Result<Self> {
        let mut shape = input_shape.clone();
        for (i, layer) in layers.iter().enumerate() {
            shape = layer.output_shape(&shape).map_err(|e| e.in_layer(i, layer.kind()))?;
        }
        Ok(Self {
            name: name.into(),
            input_shape,
            output_shape: shape,
            layers,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn param_names(&self) -> Vec<String> {
        self.named_params().map(|(n, _)| n).collect()
    }

    fn named_params(&self) -> impl Iterator<Item = (String, &Tensor<T>)> + '_ {
        self.layers.iter().enumerate().flat_map(move |(i, layer)| {
            layer
                .params()
                .into_iter()
                .map(move |(p, t)| (format!("{}.{i}.{p}", self.name), t))
        })
    }

    /// Mutable access to every parameter with its registry name.
    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let name = &self.name;
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, layer)| {
                layer
                    .params_mut()
                    .into_iter()
                    .map(move |(p, t)| (format!("{name}.{i}.{p}"), t))
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.named_params().map(|(_, t)| t.numel()).sum()
    }

    pub fn parameters(&self) -> ParameterSet<T> {
        ParameterSet {
            entries: self
                .named_params()
                .map(|(n, t)| (n, t.clone().with_requires_grad(false)))
                .collect(),
        }
    }

    /// Replaces parameter values from a snapshot. Names and shapes must match exactly.
    pub fn load_parameters(&mut self, set: &ParameterSet<T>) -> Result<()> {
        for (name, tensor) in self.params_mut() {
            let src = set
                .get(&name)
                .ok_or_else(|| Error::Format(format!("missing parameter `{name}`")))?;
            if src.shape() != tensor.shape() {
                return Err(Error::ShapeMismatch {
                    op: "load_parameters",
                    lhs: tensor.shape().to_vec(),
                    rhs: src.shape().to_vec(),
                });
            }
            tensor.data_mut().copy_from_slice(src.data());
            tensor.zero_grad();
        }
        Ok(())
    }

    /// Fills weights from Normal(0, 0.02) using a generator seeded with `seed`;
    /// biases are zeroed.
    pub fn init_params(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
        for (name, tensor) in self.params_mut() {
            let is_bias = name.ends_with(".bias");
            for v in tensor.data_mut() {
                *v = if is_bias {
                    T::zero()
                } else {
                    T::cast(normal.sample(&mut rng))
                };
            }
            tensor.zero_grad();
        }
    }

    pub fn zero_grad(&mut self) {
        for (_, t) in self.params_mut() {
            t.zero_grad();
        }
    }

    /// Registers every parameter in `g`. Frozen parameters enter as constants and
    /// receive no gradient.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> BoundParams {
        let mut vars = Vec::new();
        let mut offsets = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            offsets.push(vars.len());
            for (_, t) in layer.params() {
                vars.push(g.input(t.clone(), trainable));
            }
        }
        BoundParams { vars, offsets }
    }

    /// Runs the layer stack on a batch `x` of shape `[B, input_shape..]`.
    pub fn forward(&self, g: &mut Graph<T>, params: &BoundParams, x: Var) -> Result<Var> {
        let shape = g.value(x).shape();
        if shape.len() != self.input_shape.len() + 1 || shape[1..] != self.input_shape[..] {
            let kind = self.layers.first().map_or("input", |l| l.kind());
            let mut expected = vec![shape.first().copied().unwrap_or(0)];
            expected.extend_from_slice(&self.input_shape);
            return Err(Error::ShapeMismatch {
                op: "forward",
                lhs: shape.to_vec(),
                rhs: expected,
            }
            .in_layer(0, kind));
        }
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let start = params.offsets[i];
            let n = layer.params().len();
            h = layer
                .forward(g, &params.vars[start..start + n], h)
                .map_err(|e| e.in_layer(i, layer.kind()))?;
        }
        Ok(h)
    }

    /// Adds the graph gradients of bound parameters into each parameter's grad buffer.
    pub fn accumulate_grads(&mut self, g: &Graph<T>, params: &BoundParams) -> Result<()> {
        let vars = params.vars.clone();
        for ((_, tensor), var) in self.params_mut().into_iter().zip(vars) {
            if let Some(grad) = g.grad(var) {
                tensor.accumulate_grad(grad)?;
            }
        }
        Ok(())
    }

    /// Gradient-free forward pass on a standalone tensor.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let params = self.bind(&mut g, false);
        let x = g.constant(input.clone());
        let y = self.forward(&mut g, &params, x)?;
        Ok(g.value(y).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layer::Activation;

    fn mlp() -> Network {
        Network::new(
            "mlp",
            vec![100],
            vec![
                Layer::dense(100, 100).unwrap(),
                Layer::Activation(Activation::Tanh),
                Layer::dense(100, 1).unwrap(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let (mut a, mut b, mut c) = (mlp(), mlp(), mlp());
        a.init_params(42);
        b.init_params(42);
        c.init_params(43);
        assert_eq!(a.parameters(), b.parameters());
        assert_ne!(a.parameters(), c.parameters());
    }

    #[test]
    fn biases_start_at_zero_and_every_param_requires_grad() {
        let mut net = mlp();
        net.init_params(1);
        for (name, t) in net.params_mut() {
            assert!(t.requires_grad(), "{name}");
            if name.ends_with(".bias") {
                assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
            }
        }
    }

    #[test]
    fn weight_sample_mean_within_three_standard_errors() {
        let mut net = mlp();
        net.init_params(7);
        let w = net.parameters().get("mlp.0.weight").unwrap().clone();
        assert_eq!(w.numel(), 10_000);
        // Standard error of the mean of n draws from N(0, σ²) is σ/√n.
        let bound = 3.0 * INIT_STD / (w.numel() as f64).sqrt();
        let mean = w.mean_value();
        assert!(mean.abs() < bound, "mean {mean} exceeds {bound}");
        let var = w.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / 9_999.0;
        assert!((var.sqrt() - INIT_STD).abs() < 0.001);
    }

    #[test]
    fn parameter_names_are_unique_and_stable() {
        let names = mlp().param_names();
        assert_eq!(names, ["mlp.0.weight", "mlp.0.bias", "mlp.2.weight", "mlp.2.bias"]);
        let mut sorted = names.clone();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
    }

    #[test]
    fn forward_is_pure() {
        let mut net = mlp();
        net.init_params(3);
        let x = Tensor::from_fn([4, 100], |i| ((i % 17) as f32 - 8.0) / 8.0).unwrap();
        let y1 = net.predict(&x).unwrap();
        let y2 = net.predict(&x).unwrap();
        assert_eq!(y1, y2);
        assert_eq!(y1.shape(), &[4, 1]);
    }

    #[test]
    fn load_parameters_round_trips_and_checks_shapes() {
        let mut a = mlp();
        a.init_params(9);
        let mut b = mlp();
        b.load_parameters(&a.parameters()).unwrap();
        assert_eq!(a.parameters(), b.parameters());

        let mut other = Network::<f32>::new("mlp", vec![100], vec![Layer::dense(100, 3).unwrap()]).unwrap();
        assert!(other.load_parameters(&a.parameters()).is_err());
    }

    #[test]
    fn construction_rejects_incompatible_layers() {
        let err = Network::<f32>::new(
            "bad",
            vec![4],
            vec![Layer::dense(4, 3).unwrap(), Layer::dense(5, 1).unwrap()],
        )
        .unwrap_err();
        assert!(err.to_string().starts_with("layer 1 (dense)"), "{err}");
    }

    #[test]
    fn gradients_flow_only_into_trainable_bindings() {
        let mut net = mlp();
        net.init_params(4);
        let x = Tensor::ones([2, 100]).unwrap();
        let mut g = Graph::new();
        let frozen = net.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let y = net.forward(&mut g, &frozen, xv).unwrap();
        let loss = g.mean(y).unwrap();
        g.backward(loss).unwrap();
        net.accumulate_grads(&g, &frozen).unwrap();
        assert!(net.params_mut().iter().all(|(_, t)| t.grad().is_none()));

        let mut g = Graph::new();
        let live = net.bind(&mut g, true);
        let xv = g.constant(x);
        let y = net.forward(&mut g, &live, xv).unwrap();
        let loss = g.mean(y).unwrap();
        g.backward(loss).unwrap();
        net.accumulate_grads(&g, &live).unwrap();
        assert!(net.params_mut().iter().all(|(_, t)| t.grad().is_some()));
    }
}
