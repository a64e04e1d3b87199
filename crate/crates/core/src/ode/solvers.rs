//! Fixed-step Euler and adaptive Dormand–Prince 5(4).

use serde::{Deserialize, Serialize};

use crate::nn::Matrix;

use super::{Field, OdeError, Trajectory};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;

// Fifth-order weights; also the last row of the tableau.
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;

// Fifth minus fourth order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const PI_ALPHA: f64 = 0.17;
const PI_BETA: f64 = 0.04;

/// Adaptive solver settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Dopri5Config {
    pub rtol: f64,
    pub atol: f64,
    pub initial_step: f64,
    pub safety: f64,
    pub min_factor: f64,
    pub max_factor: f64,
    pub max_nfe: usize,
}

impl Default for Dopri5Config {
    fn default() -> Self {
        Self {
            rtol: 1e-5,
            atol: 1e-5,
            initial_step: 1e-2,
            safety: 0.9,
            min_factor: 0.2,
            max_factor: 10.0,
            max_nfe: 100_000,
        }
    }
}

impl Dopri5Config {
    pub fn with_tolerance(tol: f64) -> Self {
        Self {
            rtol: tol,
            atol: tol,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), OdeError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.rtol) || !positive(self.atol) {
            return Err(OdeError::InvalidArgument(format!(
                "tolerances must be positive, got rtol={} atol={}",
                self.rtol, self.atol
            )));
        }
        if !positive(self.initial_step) {
            return Err(OdeError::InvalidArgument(format!(
                "initial step must be positive, got {}",
                self.initial_step
            )));
        }
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            return Err(OdeError::InvalidArgument(format!(
                "safety factor must lie in (0, 1], got {}",
                self.safety
            )));
        }
        if !(positive(self.min_factor) && self.min_factor < 1.0 && self.max_factor > 1.0) {
            return Err(OdeError::InvalidArgument(format!(
                "step factor bounds must satisfy 0 < min < 1 < max, got [{}, {}]",
                self.min_factor, self.max_factor
            )));
        }
        if self.max_nfe < 7 {
            return Err(OdeError::InvalidArgument(format!(
                "max_nfe must allow at least one step, got {}",
                self.max_nfe
            )));
        }
        Ok(())
    }
}

/// Solver choice used by sampling, likelihood and evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SolverConfig {
    Euler { steps: usize },
    Dopri5(Dopri5Config),
}

impl SolverConfig {
    pub fn euler(steps: usize) -> Self {
        SolverConfig::Euler { steps }
    }

    pub fn adaptive() -> Self {
        SolverConfig::Dopri5(Dopri5Config::default())
    }

    /// Short label used in metric tables: the step count or `adaptive`.
    pub fn label(&self) -> String {
        match self {
            SolverConfig::Euler { steps } => steps.to_string(),
            SolverConfig::Dopri5(_) => "adaptive".to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), OdeError> {
        match self {
            SolverConfig::Euler { steps: 0 } => Err(OdeError::InvalidArgument(
                "Euler needs at least one step".to_string(),
            )),
            SolverConfig::Euler { .. } => Ok(()),
            SolverConfig::Dopri5(cfg) => cfg.validate(),
        }
    }
}

fn check_finite(x: &Matrix, step: usize) -> Result<(), OdeError> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(OdeError::NonFinite { step })
    }
}

fn axpy(y: &Matrix, terms: &[(f64, &Matrix)]) -> Matrix {
    let mut out = y.clone();
    let dst = out.as_mut_slice();
    for (coef, k) in terms {
        if *coef == 0.0 {
            continue;
        }
        for (o, v) in dst.iter_mut().zip(k.as_slice()) {
            *o += coef * v;
        }
    }
    out
}

/// Euler over `[t0, t1]` with `n_steps` equal steps of an arbitrary right-hand side.
pub fn euler_with<F>(mut rhs: F, x_start: &Matrix, t0: f64, t1: f64, n_steps: usize) -> Result<Trajectory, OdeError>
where
    F: FnMut(f64, &Matrix) -> Result<Matrix, OdeError>,
{
    if n_steps == 0 {
        return Err(OdeError::InvalidArgument("Euler needs at least one step".to_string()));
    }
    check_finite(x_start, 0)?;
    let h = (t1 - t0) / n_steps as f64;
    let mut traj = Trajectory::start(t0, x_start.clone());
    let mut x = x_start.clone();
    for k in 0..n_steps {
        let t = t0 + k as f64 * h;
        let v = rhs(t, &x)?;
        x = axpy(&x, &[(h, &v)]);
        check_finite(&x, k + 1)?;
        let t_next = if k + 1 == n_steps { t1 } else { t0 + (k + 1) as f64 * h };
        traj.push(t_next, x.clone());
        traj.nfe += 1;
    }
    Ok(traj)
}

/// Fixed-step Euler on `[0, 1]`.
pub fn integrate_euler<F: Field + ?Sized>(field: &F, x_start: &Matrix, n_steps: usize) -> Result<Trajectory, OdeError> {
    check_dim(field.dim(), x_start)?;
    euler_with(|t, x| field.eval(x, t), x_start, 0.0, 1.0, n_steps)
}

struct StageResult {
    y5: Matrix,
    k7: Matrix,
    err: Matrix,
}

fn dopri_stages<F>(rhs: &mut F, t: f64, y: &Matrix, k1: &Matrix, h: f64) -> Result<StageResult, OdeError>
where
    F: FnMut(f64, &Matrix) -> Result<Matrix, OdeError>,
{
    let k2 = rhs(t + C2 * h, &axpy(y, &[(h * A21, k1)]))?;
    let k3 = rhs(t + C3 * h, &axpy(y, &[(h * A31, k1), (h * A32, &k2)]))?;
    let k4 = rhs(t + C4 * h, &axpy(y, &[(h * A41, k1), (h * A42, &k2), (h * A43, &k3)]))?;
    let k5 = rhs(
        t + C5 * h,
        &axpy(y, &[(h * A51, k1), (h * A52, &k2), (h * A53, &k3), (h * A54, &k4)]),
    )?;
    let k6 = rhs(
        t + h,
        &axpy(y, &[(h * A61, k1), (h * A62, &k2), (h * A63, &k3), (h * A64, &k4), (h * A65, &k5)]),
    )?;
    let y5 = axpy(y, &[(h * B1, k1), (h * B3, &k3), (h * B4, &k4), (h * B5, &k5), (h * B6, &k6)]);
    let k7 = rhs(t + h, &y5)?;
    let zero = Matrix::zeros(y.rows(), y.cols());
    let err = axpy(
        &zero,
        &[(h * E1, k1), (h * E3, &k3), (h * E4, &k4), (h * E5, &k5), (h * E6, &k6), (h * E7, &k7)],
    );
    Ok(StageResult { y5, k7, err })
}

/// Scaled error: RMS over the components of each row, maximised over rows, so
/// a batch is never held to a looser standard than its worst member.
fn error_norm(err: &Matrix, y_old: &Matrix, y_new: &Matrix, cfg: &Dopri5Config) -> f64 {
    let cols = err.cols().max(1);
    let mut worst: f64 = 0.0;
    for r in 0..err.rows() {
        let mut acc = 0.0;
        for c in 0..err.cols() {
            let scale = cfg.atol + cfg.rtol * y_old.get(r, c).abs().max(y_new.get(r, c).abs());
            let e = err.get(r, c) / scale;
            acc += e * e;
        }
        worst = worst.max((acc / cols as f64).sqrt());
    }
    worst
}

/// Adaptive Dormand–Prince 5(4) over `[t0, t1]` (with `t1 > t0`) using a PI
/// step-size controller and first-same-as-last stage reuse.
pub fn dopri5_with<F>(mut rhs: F, x_start: &Matrix, t0: f64, t1: f64, cfg: &Dopri5Config) -> Result<Trajectory, OdeError>
where
    F: FnMut(f64, &Matrix) -> Result<Matrix, OdeError>,
{
    cfg.validate()?;
    if !(t1 > t0) {
        return Err(OdeError::InvalidArgument(format!("empty interval [{t0}, {t1}]")));
    }
    check_finite(x_start, 0)?;
    let span = t1 - t0;
    let mut traj = Trajectory::start(t0, x_start.clone());
    let mut t = t0;
    let mut y = x_start.clone();
    let mut k1 = rhs(t, &y)?;
    traj.nfe = 1;
    let mut h = cfg.initial_step.min(span);
    let mut prev_err: f64 = 1e-4;
    let mut accepted = 0usize;
    while t < t1 {
        if traj.nfe + 6 > cfg.max_nfe {
            return Err(OdeError::MaxNfe {
                limit: cfg.max_nfe,
                partial: Box::new(traj),
            });
        }
        let last = t + h >= t1 - 1e-12 * span;
        if last {
            h = t1 - t;
        }
        let stages = dopri_stages(&mut rhs, t, &y, &k1, h)?;
        traj.nfe += 6;
        let err = error_norm(&stages.err, &y, &stages.y5, cfg);
        if !err.is_finite() || !stages.y5.is_finite() {
            // Treat a blow-up as a rejection and retry with a much smaller step.
            h *= cfg.min_factor;
            if h < 1e-14 * span {
                return Err(OdeError::NonFinite { step: accepted + 1 });
            }
            continue;
        }
        if err <= 1.0 {
            accepted += 1;
            t = if last { t1 } else { t + h };
            y = stages.y5;
            k1 = stages.k7;
            traj.push(t, y.clone());
            let factor = if err == 0.0 {
                cfg.max_factor
            } else {
                cfg.safety * err.powf(-PI_ALPHA) * prev_err.powf(PI_BETA)
            };
            prev_err = err.max(1e-4);
            h *= factor.clamp(cfg.min_factor, cfg.max_factor);
        } else {
            let factor = (cfg.safety * err.powf(-0.2)).clamp(cfg.min_factor, 1.0);
            h *= factor;
            if h < 1e-14 * span {
                return Err(OdeError::InvalidArgument(format!("step size underflow at t={t}")));
            }
        }
    }
    Ok(traj)
}

/// Adaptive Dormand–Prince 5(4) on `[0, 1]`.
pub fn integrate_dopri5<F: Field + ?Sized>(field: &F, x_start: &Matrix, cfg: &Dopri5Config) -> Result<Trajectory, OdeError> {
    check_dim(field.dim(), x_start)?;
    dopri5_with(|t, x| field.eval(x, t), x_start, 0.0, 1.0, cfg)
}

/// Dormand–Prince fifth-order update with `n_steps` fixed steps on `[0, 1]`
/// and no error control; used to measure the convergence order.
pub fn integrate_dopri5_fixed<F: Field + ?Sized>(field: &F, x_start: &Matrix, n_steps: usize) -> Result<Trajectory, OdeError> {
    check_dim(field.dim(), x_start)?;
    if n_steps == 0 {
        return Err(OdeError::InvalidArgument("need at least one step".to_string()));
    }
    let mut rhs = |t: f64, x: &Matrix| field.eval(x, t);
    let h = 1.0 / n_steps as f64;
    let mut traj = Trajectory::start(0.0, x_start.clone());
    let mut y = x_start.clone();
    let mut k1 = rhs(0.0, &y)?;
    traj.nfe = 1;
    for k in 0..n_steps {
        let t = k as f64 * h;
        let stages = dopri_stages(&mut rhs, t, &y, &k1, h)?;
        traj.nfe += 6;
        check_finite(&stages.y5, k + 1)?;
        y = stages.y5;
        k1 = stages.k7;
        let t_next = if k + 1 == n_steps { 1.0 } else { (k + 1) as f64 * h };
        traj.push(t_next, y.clone());
    }
    Ok(traj)
}

/// Dispatches on the solver configuration over `[0, 1]`.
pub fn integrate<F: Field + ?Sized>(field: &F, x_start: &Matrix, solver: &SolverConfig) -> Result<Trajectory, OdeError> {
    match solver {
        SolverConfig::Euler { steps } => integrate_euler(field, x_start, *steps),
        SolverConfig::Dopri5(cfg) => integrate_dopri5(field, x_start, cfg),
    }
}

pub(crate) fn check_dim(dim: usize, x: &Matrix) -> Result<(), OdeError> {
    if x.cols() != dim {
        return Err(OdeError::InvalidArgument(format!(
            "state has {} columns, field expects {dim}",
            x.cols()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tape;
    use crate::ode::{FnField, LinearField};

    fn exp_field() -> FnField<impl Fn(&mut Tape, crate::nn::NodeId, f64) -> Result<crate::nn::NodeId, OdeError>> {
        FnField::new(1, |_tape: &mut Tape, x, _t| Ok(x))
    }

    #[test]
    fn euler_constant_field_is_exact() {
        let field = LinearField::constant(vec![0.3, -1.7]);
        let start = Matrix::from_rows(&[vec![1.0, 2.0]]);
        for steps in [1, 2, 3, 7, 100] {
            let traj = integrate_euler(&field, &start, steps).unwrap();
            let end = traj.last_state();
            assert!((end.get(0, 0) - 1.3).abs() < 1e-12 && (end.get(0, 1) - 0.3).abs() < 1e-12);
            assert_eq!(traj.nfe, steps);
            assert_eq!(traj.times.len(), steps + 1);
            assert_eq!(*traj.times.last().unwrap(), 1.0);
        }
    }

    #[test]
    fn euler_hand_stepped_time_field() {
        let field = FnField::new(1, |tape: &mut Tape, x, t| {
            let n = tape.value(x).rows();
            Ok(tape.leaf(Matrix::filled(n, 1, t), false))
        });
        let traj = integrate_euler(&field, &Matrix::scalar(0.0), 2).unwrap();
        assert_eq!(traj.last_state().item().unwrap(), 0.25);
    }

    #[test]
    fn euler_reports_non_finite_step() {
        let field = FnField::new(1, |tape: &mut Tape, x, t| {
            let n = tape.value(x).rows();
            let v = if t > 0.4 { f64::NAN } else { 1.0 };
            Ok(tape.leaf(Matrix::filled(n, 1, v), false))
        });
        let err = integrate_euler(&field, &Matrix::scalar(0.0), 4).unwrap_err();
        assert!(matches!(err, OdeError::NonFinite { step: 3 }), "{err:?}");
    }

    #[test]
    fn dopri5_exponential() {
        let cfg = Dopri5Config::with_tolerance(1e-8);
        let traj = integrate_dopri5(&exp_field(), &Matrix::scalar(1.0), &cfg).unwrap();
        assert!((traj.last_state().item().unwrap() - std::f64::consts::E).abs() < 1e-6);
        assert_eq!(*traj.times.last().unwrap(), 1.0);
        assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn dopri5_constant_field_single_step() {
        let field = LinearField::constant(vec![2.5]);
        let cfg = Dopri5Config {
            initial_step: 1.0,
            ..Dopri5Config::default()
        };
        let traj = integrate_dopri5(&field, &Matrix::scalar(-1.0), &cfg).unwrap();
        assert_eq!(traj.times, vec![0.0, 1.0]);
        assert!((traj.last_state().item().unwrap() - 1.5).abs() < 1e-14);
        assert_eq!(traj.nfe, 7);
    }

    #[test]
    fn dopri5_constant_field_default_settings_exact() {
        let field = LinearField::constant(vec![2.5]);
        let traj = integrate_dopri5(&field, &Matrix::scalar(-1.0), &Dopri5Config::default()).unwrap();
        assert!((traj.last_state().item().unwrap() - 1.5).abs() < 1e-14);
    }

    #[test]
    fn dopri5_fixed_step_order() {
        let errors: Vec<f64> = [8, 16, 32, 64]
            .iter()
            .map(|&n| {
                let traj = integrate_dopri5_fixed(&exp_field(), &Matrix::scalar(1.0), n).unwrap();
                (traj.last_state().item().unwrap() - std::f64::consts::E).abs()
            })
            .collect();
        for w in errors.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order >= 4.5, "order {order} from {errors:?}");
        }
    }

    #[test]
    fn tighter_tolerance_never_hurts() {
        let mut last = f64::INFINITY;
        let mut tol = Dopri5Config::default().rtol;
        while tol > 1e-11 {
            let traj = integrate_dopri5(&exp_field(), &Matrix::scalar(1.0), &Dopri5Config::with_tolerance(tol)).unwrap();
            let err = (traj.last_state().item().unwrap() - std::f64::consts::E).abs();
            assert!(err <= last, "tol {tol}: {err} > {last}");
            last = err;
            tol /= 2.0;
        }
    }

    #[test]
    fn max_nfe_returns_partial_trajectory() {
        let cfg = Dopri5Config {
            rtol: 1e-12,
            atol: 1e-12,
            max_nfe: 50,
            ..Dopri5Config::default()
        };
        match integrate_dopri5(&exp_field(), &Matrix::scalar(1.0), &cfg) {
            Err(OdeError::MaxNfe { limit, partial }) => {
                assert_eq!(limit, 50);
                assert!(partial.nfe <= 50);
                assert_eq!(partial.times.len(), partial.states.len());
                assert!(*partial.times.last().unwrap() < 1.0);
            }
            other => panic!("expected MaxNfe, got {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        assert!(Dopri5Config::default().validate().is_ok());
        assert!(Dopri5Config::with_tolerance(0.0).validate().is_err());
        assert!(SolverConfig::euler(0).validate().is_err());
        let json = serde_json::to_string(&SolverConfig::euler(5)).unwrap();
        assert_eq!(json, r#"{"kind":"euler","steps":5}"#);
        let back: SolverConfig = serde_json::from_str(r#"{"kind":"dopri5","rtol":1e-8}"#).unwrap();
        match back {
            SolverConfig::Dopri5(cfg) => {
                assert_eq!(cfg.rtol, 1e-8);
                assert_eq!(cfg.atol, 1e-5);
            }
            _ => panic!(),
        }
    }
}
