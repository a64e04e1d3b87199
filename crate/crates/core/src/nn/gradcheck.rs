//! Finite-difference gradient checking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Activation, BoundParams, Linear, Matrix, Mlp, NnError, NodeId, ParamId, ParamStore, Tape};

/// Relative error guarded against vanishing gradients: values below `1e-4`
/// in magnitude are compared absolutely.
pub fn relative_error(autodiff: f64, finite_diff: f64) -> f64 {
    let denom = autodiff.abs().max(finite_diff.abs()).max(1e-4);
    (autodiff - finite_diff).abs() / denom
}

/// Maximum relative error between the tape gradient of `f` at `point` and a
/// central difference with step `h`.
///
/// `f` receives a tape and a `1 x n` leaf holding the evaluation point and
/// must return a scalar node.
pub fn grad_check<F>(f: F, point: &[f64], h: f64) -> Result<f64, NnError>
where
    F: Fn(&mut Tape, NodeId) -> Result<NodeId, NnError>,
{
    if !(h > 0.0) {
        return Err(NnError::InvalidStep(h));
    }
    let eval = |x: &[f64], grad: bool| -> Result<(f64, Option<Matrix>), NnError> {
        let mut tape = Tape::new();
        let leaf = tape.leaf(Matrix::row(x), grad);
        let out = f(&mut tape, leaf)?;
        let value = tape.value(out).item().ok_or(NnError::NonScalarLoss {
            rows: tape.value(out).rows(),
            cols: tape.value(out).cols(),
        })?;
        let g = if grad {
            Some(tape.backward(out)?.get_or_zeros(leaf, (1, x.len())))
        } else {
            None
        };
        Ok((value, g))
    };
    let (_, analytic) = eval(point, true)?;
    let analytic = analytic.expect("gradient requested");
    let mut worst = 0.0f64;
    let mut x = point.to_vec();
    for i in 0..point.len() {
        x[i] = point[i] + h;
        let (plus, _) = eval(&x, false)?;
        x[i] = point[i] - h;
        let (minus, _) = eval(&x, false)?;
        x[i] = point[i];
        let fd = (plus - minus) / (2.0 * h);
        worst = worst.max(relative_error(analytic.as_slice()[i], fd));
    }
    Ok(worst)
}

/// Result of a parameter-space gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates_checked: usize,
}

/// Gradient check over the parameters of `store`.
///
/// `loss` builds a scalar from bound parameters. When `max_per_param` is set,
/// only that many evenly spaced coordinates of each parameter are perturbed.
pub fn grad_check_params<F>(
    store: &ParamStore,
    loss: F,
    h: f64,
    max_per_param: Option<usize>,
) -> Result<GradCheckReport, NnError>
where
    F: Fn(&mut Tape, &BoundParams) -> Result<NodeId, NnError>,
{
    if !(h > 0.0) {
        return Err(NnError::InvalidStep(h));
    }
    let value_of = |s: &ParamStore| -> Result<f64, NnError> {
        let mut tape = Tape::new();
        let bound = s.bind(&mut tape, false);
        let out = loss(&mut tape, &bound)?;
        let v = tape.value(out);
        v.item().ok_or(NnError::NonScalarLoss {
            rows: v.rows(),
            cols: v.cols(),
        })
    };

    let mut tape = Tape::new();
    let bound = store.bind(&mut tape, true);
    let out = loss(&mut tape, &bound)?;
    let grads = tape.backward(out)?;

    let mut work = store.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        coordinates_checked: 0,
    };
    for (pi, param) in store.iter().enumerate() {
        let n = param.len();
        let analytic = grads.get_or_zeros(bound.nodes()[pi], param.matrix().shape());
        let indices: Vec<usize> = match max_per_param {
            Some(k) if k < n => (0..k).map(|j| j * n / k).collect(),
            _ => (0..n).collect(),
        };
        for idx in indices {
            let original = param.values()[idx];
            work.get_mut(ParamId(pi)).values_mut()[idx] = original + h;
            let plus = value_of(&work)?;
            work.get_mut(ParamId(pi)).values_mut()[idx] = original - h;
            let minus = value_of(&work)?;
            work.get_mut(ParamId(pi)).values_mut()[idx] = original;
            let fd = (plus - minus) / (2.0 * h);
            let err = relative_error(analytic.as_slice()[idx], fd);
            report.coordinates_checked += 1;
            if report.worst.is_none() || err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = Some((param.name.clone(), idx));
            }
        }
    }
    Ok(report)
}

type Primitive = fn(&mut Tape, NodeId, &Consts) -> Result<NodeId, NnError>;

/// Constant operands for the primitive checks; `x` is a `1 x 6` leaf.
struct Consts {
    right: NodeId,
    left: NodeId,
    rows: NodeId,
    same: NodeId,
}

fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    m.as_mut_slice().iter_mut().for_each(|v| *v = rng.random_range(lo..hi));
    m
}

const PRIMITIVES: [(&str, Primitive); 17] = [
    ("matmul_left", |t, x, c| t.matmul(x, c.right)),
    ("matmul_right", |t, x, c| t.matmul(c.left, x)),
    ("add", |t, x, c| t.add(x, c.same)),
    ("add_broadcast", |t, x, c| t.add(c.rows, x)),
    ("sub", |t, x, c| t.sub(c.same, x)),
    ("mul", |t, x, c| t.mul(x, c.same)),
    ("mul_self", |t, x, _| t.mul(x, x)),
    ("concat", |t, x, c| t.concat(&[x, c.same, x])),
    ("gelu", |t, x, _| t.gelu(x)),
    ("silu", |t, x, _| t.silu(x)),
    ("square", |t, x, _| t.square(x)),
    ("exp", |t, x, _| t.exp(x)),
    ("log", |t, x, c| {
        let a = t.exp(x)?;
        let b = t.exp(c.same)?;
        let p = t.add(a, b)?;
        t.log(p)
    }),
    ("scale", |t, x, _| t.scale(x, -2.5)),
    ("sin_embed", |t, x, _| t.sin_embed(x, 4, 100.0)),
    ("clamp", |t, x, _| t.clamp(x, -10.0, 10.0)),
    ("mean", |t, x, _| t.mean(x)),
];

/// Worst relative gradient error of every tape primitive and of the dense
/// layers. Each primitive's output is reduced with fixed random weights so
/// no coordinate cancels.
pub fn primitive_suite(seed: u64) -> Result<Vec<(String, f64)>, NnError> {
    const H: f64 = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let point: Vec<f64> = (0..6).map(|_| rng.random_range(-1.5..1.5)).collect();
    let right = uniform(6, 3, -1.0, 1.0, &mut rng);
    let left = uniform(4, 1, -1.0, 1.0, &mut rng);
    let rows = uniform(3, 6, -1.0, 1.0, &mut rng);
    let same = uniform(1, 6, -1.0, 1.0, &mut rng);
    let mut out = Vec::new();
    for (name, op) in PRIMITIVES {
        let weights_seed = rng.random::<u64>();
        let err = grad_check(
            |t, x| {
                let c = Consts {
                    right: t.leaf(right.clone(), false),
                    left: t.leaf(left.clone(), false),
                    rows: t.leaf(rows.clone(), false),
                    same: t.leaf(same.clone(), false),
                };
                let y = op(t, x, &c)?;
                let (r, k) = t.value(y).shape();
                let w = uniform(r, k, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(weights_seed));
                let w = t.leaf(w, false);
                let yw = t.mul(y, w)?;
                t.sum(yw)
            },
            &point,
            H,
        )?;
        out.push((name.to_string(), err));
    }

    let mut store = ParamStore::new();
    let linear = Linear::new(&mut store, "linear", 3, 4, &mut rng)?;
    let mlp = Mlp::new(&mut store, "mlp", &[4, 5, 2], Activation::Gelu, false, &mut rng)?;
    let silu = Mlp::new(&mut store, "silu", &[2, 3], Activation::Silu, true, &mut rng)?;
    // Non-zero biases so their gradients are exercised away from the init.
    for p in store.iter_mut() {
        p.values_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
    }
    let input = uniform(5, 3, -1.0, 1.0, &mut rng);
    let report = grad_check_params(
        &store,
        |t, params| {
            let x = t.leaf(input.clone(), false);
            let h = linear.forward(t, params, x)?;
            let h = mlp.forward(t, params, h)?;
            let h = silu.forward(t, params, h)?;
            let sq = t.square(h)?;
            t.mean(sq)
        },
        H,
        None,
    )?;
    out.push(("dense_layers".to_string(), report.max_relative_error));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_check() {
        let err = grad_check(
            |t, x| {
                let sq = t.square(x)?;
                t.sum(sq)
            },
            &[2.0],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let err = grad_check(
            |t, x| {
                let z = t.scale(x, 0.0)?;
                t.sum(z)
            },
            &[1.0, -3.0],
            1e-5,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn every_primitive_passes() {
        for (name, err) in primitive_suite(0).unwrap() {
            assert!(err <= 1e-4, "{name}: {err}");
        }
    }

    #[test]
    fn non_positive_step_rejected() {
        let f = |t: &mut Tape, x: NodeId| t.sum(x);
        assert!(matches!(grad_check(f, &[1.0], 0.0), Err(NnError::InvalidStep(_))));
        assert!(matches!(grad_check(f, &[1.0], -1e-3), Err(NnError::InvalidStep(_))));
    }
}
