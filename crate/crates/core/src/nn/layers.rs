//! Parameters, dense layers and MLP stacks.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{embedding_frequencies, NodeId, Tape};
use super::{Matrix, NnError};

/// Default period of the lowest sinusoidal embedding frequency.
pub const DEFAULT_MAX_PERIOD: f64 = 1e4;

/// Sinusoidal embedding of a single value: interleaved `(sin, cos)` pairs
/// over `dim / 2` geometrically spaced frequencies.
pub fn sinusoidal_embed(value: f64, dim: usize, max_period: f64) -> Result<Vec<f64>, NnError> {
    if dim < 2 || dim % 2 != 0 {
        return Err(NnError::OddEmbeddingDim(dim));
    }
    Ok(embedding_frequencies(dim, max_period)
        .into_iter()
        .flat_map(|w| [(value * w).sin(), (value * w).cos()])
        .collect())
}

/// A named trainable array. Rank-1 parameters are stored as a single row.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub shape: Vec<usize>,
    data: Arc<Matrix>,
    pub requires_grad: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Result<Self, NnError> {
        let name = name.into();
        let expected: usize = shape.iter().product();
        let (rows, cols) = match shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => (0, 0),
        };
        if expected != values.len() || shape.is_empty() || shape.len() > 2 {
            return Err(NnError::BadParameter {
                name,
                len: values.len(),
                shape,
            });
        }
        Ok(Self {
            name,
            shape,
            data: Arc::new(Matrix::from_vec(rows, cols, values)),
            requires_grad: true,
        })
    }

    pub fn values(&self) -> &[f64] {
        self.data.as_slice()
    }

    /// Mutable access; copies the storage first if a tape still shares it.
    pub fn values_mut(&mut self) -> &mut [f64] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn set_values(&mut self, values: &[f64]) {
        self.values_mut().copy_from_slice(values);
    }

    /// Shared handle to the parameter as a matrix.
    pub fn matrix(&self) -> Arc<Matrix> {
        Arc::clone(&self.data)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Index of a parameter within a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Ordered collection of uniquely named parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

/// Tape nodes for every parameter of a store, in store order.
#[derive(Clone, Debug)]
pub struct BoundParams {
    nodes: Vec<NodeId>,
}

impl BoundParams {
    pub fn node(&self, id: ParamId) -> NodeId {
        self.nodes[id.0]
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, param: Parameter) -> Result<ParamId, NnError> {
        if self.params.iter().any(|p| p.name == param.name) {
            return Err(NnError::DuplicateName(param.name));
        }
        self.params.push(param);
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar values.
    pub fn num_values(&self) -> usize {
        self.params.iter().map(Parameter::len).sum()
    }

    /// Replaces values from `other`, matching by name and shape.
    pub fn load_from(&mut self, other: &[Parameter]) -> Result<(), NnError> {
        if other.len() != self.params.len() {
            return Err(NnError::StateMismatch(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                other.len()
            )));
        }
        for (dst, src) in self.params.iter_mut().zip(other) {
            if dst.name != src.name || dst.shape != src.shape {
                return Err(NnError::StateMismatch(format!(
                    "expected `{}` {:?}, got `{}` {:?}",
                    dst.name, dst.shape, src.name, src.shape
                )));
            }
            dst.set_values(src.values());
        }
        Ok(())
    }

    /// Adds every parameter to `tape` as a leaf.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> BoundParams {
        let nodes = self
            .params
            .iter()
            .map(|p| tape.leaf(p.matrix(), requires_grad && p.requires_grad))
            .collect();
        BoundParams { nodes }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Gelu,
    Silu,
    Identity,
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: NodeId) -> Result<NodeId, NnError> {
        match self {
            Activation::Gelu => tape.gelu(x),
            Activation::Silu => tape.silu(x),
            Activation::Identity => Ok(x),
        }
    }
}

/// Affine layer `x W + b` with `W: in x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Registers `{prefix}.weight` and `{prefix}.bias`. Weights are uniform in
    /// `[-1/sqrt(in), 1/sqrt(in)]`, biases zero.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let weight = store.push(Parameter::new(
            format!("{prefix}.weight"),
            vec![in_dim, out_dim],
            weights,
        )?)?;
        let bias = store.push(Parameter::new(
            format!("{prefix}.bias"),
            vec![out_dim],
            vec![0.0; out_dim],
        )?)?;
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, tape: &mut Tape, params: &BoundParams, x: NodeId) -> Result<NodeId, NnError> {
        let xw = tape.matmul(x, params.node(self.weight))?;
        tape.add(xw, params.node(self.bias))
    }
}

/// Stack of affine layers with an activation between consecutive layers and,
/// optionally, after the last one.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
    pub activate_last: bool,
}

impl Mlp {
    /// Builds layers of widths `dims[0] -> dims[1] -> ... -> dims[n]`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        dims: &[usize],
        activation: Activation,
        activate_last: bool,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{prefix}.{i}"), w[0], w[1], rng))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_layers(layers, activation, activate_last)
    }

    /// Wraps existing layers, checking that their dimensions chain.
    pub fn from_layers(layers: Vec<Linear>, activation: Activation, activate_last: bool) -> Result<Self, NnError> {
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(NnError::DimensionChain {
                    layer: i + 1,
                    expected: pair[1].in_dim,
                    got: pair[0].out_dim,
                });
            }
        }
        Ok(Self {
            layers,
            activation,
            activate_last,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn forward(&self, tape: &mut Tape, params: &BoundParams, input: NodeId) -> Result<NodeId, NnError> {
        let got = tape.value(input).cols();
        if got != self.in_dim() {
            return Err(NnError::DimensionChain {
                layer: 0,
                expected: self.in_dim(),
                got,
            });
        }
        let mut x = input;
        let last = self.layers.len().saturating_sub(1);
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(tape, params, x)?;
            if i < last || self.activate_last {
                x = self.activation.apply(tape, x)?;
            }
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn embed_single_frequency() {
        let e = sinusoidal_embed(0.3, 2, DEFAULT_MAX_PERIOD).unwrap();
        assert_eq!(e, vec![0.3f64.sin(), 0.3f64.cos()]);
        let z = sinusoidal_embed(0.0, 6, DEFAULT_MAX_PERIOD).unwrap();
        assert_eq!(z, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let wide = sinusoidal_embed(0.5, 64, DEFAULT_MAX_PERIOD).unwrap();
        assert_eq!(wide.len(), 64);
        assert!(wide.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(matches!(sinusoidal_embed(1.0, 5, 1e4), Err(NnError::OddEmbeddingDim(5))));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::new();
        store.push(Parameter::new("a", vec![1], vec![0.0]).unwrap()).unwrap();
        let err = store.push(Parameter::new("a", vec![1], vec![0.0]).unwrap());
        assert!(matches!(err, Err(NnError::DuplicateName(_))));
        assert!(Parameter::new("b", vec![2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn zero_weights_yield_bias() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::new(&mut store, "m", &[3, 2], Activation::Gelu, false, &mut rng).unwrap();
        store.get_mut(mlp.layers[0].weight).values_mut().fill(0.0);
        store.get_mut(mlp.layers[0].bias).set_values(&[0.25, -1.5]);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let x = tape.leaf(Matrix::row(&[1.0, 2.0, 3.0]), false);
        let y = mlp.forward(&mut tape, &bound, x).unwrap();
        assert_eq!(tape.value(y).as_slice(), &[0.25, -1.5]);
    }

    #[test]
    fn identity_layer_passes_input() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::new(&mut store, "m", &[2, 2], Activation::Identity, false, &mut rng).unwrap();
        store.get_mut(mlp.layers[0].weight).set_values(&[1.0, 0.0, 0.0, 1.0]);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let x = tape.leaf(Matrix::row(&[-3.5, 7.25]), false);
        let y = mlp.forward(&mut tape, &bound, x).unwrap();
        assert_eq!(tape.value(y).as_slice(), &[-3.5, 7.25]);
    }

    #[test]
    fn broken_chain_rejected() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = Linear::new(&mut store, "a", 2, 3, &mut rng).unwrap();
        let b = Linear::new(&mut store, "b", 4, 1, &mut rng).unwrap();
        let err = Mlp::from_layers(vec![a, b], Activation::Gelu, false).unwrap_err();
        assert!(matches!(err, NnError::DimensionChain { layer: 1, expected: 4, got: 3 }));
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let build = || {
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let mlp = Mlp::new(&mut store, "m", &[4, 8, 2], Activation::Gelu, false, &mut rng).unwrap();
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape, false);
            let x = tape.leaf(Matrix::row(&[0.1, -0.2, 0.3, 0.9]), false);
            let y = mlp.forward(&mut tape, &bound, x).unwrap();
            tape.value(y).as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(build(), build());
    }
}
