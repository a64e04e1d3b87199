//! Velocity fields the solvers integrate.

use crate::models::VelocityModel;
use crate::nn::{Matrix, NodeId, Tape};

use super::OdeError;

/// A time-dependent vector field evaluated row-wise on an `n x dim` state.
pub trait Field {
    fn dim(&self) -> usize;

    /// Records `v(x, t)` on `tape`; `x` is an `n x dim` node.
    fn record(&self, tape: &mut Tape, x: NodeId, t: f64) -> Result<NodeId, OdeError>;

    /// Evaluates the field without gradients.
    fn eval(&self, x: &Matrix, t: f64) -> Result<Matrix, OdeError> {
        let mut tape = Tape::new();
        let leaf = tape.leaf(x.clone(), false);
        let out = self.record(&mut tape, leaf, t)?;
        Ok(tape.value(out).clone())
    }
}

impl<F: Field + ?Sized> Field for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn record(&self, tape: &mut Tape, x: NodeId, t: f64) -> Result<NodeId, OdeError> {
        (**self).record(tape, x, t)
    }

    fn eval(&self, x: &Matrix, t: f64) -> Result<Matrix, OdeError> {
        (**self).eval(x, t)
    }
}

/// Integration direction of a [`ModelField`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    /// `s -> -v(x, 1 - s)`: integrating over `s in [0, 1]` runs time backwards.
    Reverse,
}

/// A trained velocity network with an optional latent held fixed for the
/// whole trajectory.
#[derive(Clone, Debug)]
pub struct ModelField<'a> {
    pub model: &'a VelocityModel,
    /// `n x latent_dim`, one row per trajectory; a single row is shared.
    pub z: Option<Matrix>,
    pub direction: Direction,
}

impl<'a> ModelField<'a> {
    pub fn new(model: &'a VelocityModel, z: Option<Matrix>) -> Self {
        Self {
            model,
            z,
            direction: Direction::Forward,
        }
    }

    pub fn reversed(mut self) -> Self {
        self.direction = match self.direction {
            Direction::Forward => Direction::Reverse,
            Direction::Reverse => Direction::Forward,
        };
        self
    }
}

impl Field for ModelField<'_> {
    fn dim(&self) -> usize {
        self.model.data_dim()
    }

    fn record(&self, tape: &mut Tape, x: NodeId, t: f64) -> Result<NodeId, OdeError> {
        let n = tape.value(x).rows();
        let time = match self.direction {
            Direction::Forward => t,
            Direction::Reverse => 1.0 - t,
        };
        let params = self.model.params.bind(tape, false);
        let t_node = tape.leaf(Matrix::filled(n, 1, time), false);
        let z_node = match &self.z {
            Some(z) if z.rows() == n => Some(tape.leaf(z.clone(), false)),
            Some(z) if z.rows() == 1 => {
                let rows: Vec<usize> = vec![0; n];
                Some(tape.leaf(z.select_rows(&rows), false))
            }
            Some(z) => {
                return Err(OdeError::InvalidArgument(format!(
                    "latent has {} rows for a state of {n} rows",
                    z.rows()
                )))
            }
            None => None,
        };
        let v = self.model.forward(tape, &params, x, t_node, z_node)?;
        Ok(match self.direction {
            Direction::Forward => v,
            Direction::Reverse => tape.scale(v, -1.0)?,
        })
    }
}

/// Affine field `v(x) = x A^T + b` (row convention), constant in time.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearField {
    /// `dim x dim`, acting as `v = A x` on column vectors.
    pub a: Matrix,
    pub b: Vec<f64>,
}

impl LinearField {
    pub fn new(a: Matrix, b: Vec<f64>) -> Self {
        assert_eq!(a.rows(), a.cols(), "square matrix required");
        assert_eq!(a.rows(), b.len(), "offset length must match");
        Self { a, b }
    }

    pub fn constant(b: Vec<f64>) -> Self {
        let d = b.len();
        Self::new(Matrix::zeros(d, d), b)
    }

    pub fn trace(&self) -> f64 {
        (0..self.a.rows()).map(|i| self.a.get(i, i)).sum()
    }
}

impl Field for LinearField {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn record(&self, tape: &mut Tape, x: NodeId, _t: f64) -> Result<NodeId, OdeError> {
        let d = self.dim();
        let mut at = Matrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                at.set(j, i, self.a.get(i, j));
            }
        }
        let at = tape.leaf(at, false);
        let xa = tape.matmul(x, at)?;
        let b = tape.leaf(Matrix::row(&self.b), false);
        Ok(tape.add(xa, b)?)
    }
}

/// Field defined by a closure over tape operations.
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(&mut Tape, NodeId, f64) -> Result<NodeId, OdeError>,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> Field for FnField<F>
where
    F: Fn(&mut Tape, NodeId, f64) -> Result<NodeId, OdeError>,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn record(&self, tape: &mut Tape, x: NodeId, t: f64) -> Result<NodeId, OdeError> {
        (self.f)(tape, x, t)
    }
}

/// Time reversal of any field: `s -> -v(x, 1 - s)`.
#[derive(Clone, Debug)]
pub struct Reversed<F>(pub F);

impl<F: Field> Field for Reversed<F> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn record(&self, tape: &mut Tape, x: NodeId, s: f64) -> Result<NodeId, OdeError> {
        let v = self.0.record(tape, x, 1.0 - s)?;
        Ok(tape.scale(v, -1.0)?)
    }
}
