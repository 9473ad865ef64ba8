//! Central-difference validation of reverse-mode gradients.

use super::graph::{GradFault, Graph, Var};
use super::tensor::Tensor;
use crate::error::{CpcdError, Result};

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    #[doc(hidden)]
    pub fault: Option<GradFault>,
}

impl GradCheckOptions {
    pub fn with_tolerance(tolerance: f64) -> Self {
        GradCheckOptions {
            step: DEFAULT_STEP,
            tolerance,
            fault: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoordFailure {
    pub input: usize,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest `|a - b| / max(1, |a|, |b|)` over all checked coordinates.
    pub max_rel_error: f64,
    /// `(input, coordinate)` where `max_rel_error` occurred.
    pub worst: Option<(usize, usize)>,
    pub coords_checked: usize,
    pub failures: Vec<CoordFailure>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

fn evaluate<F>(program: &F, point: &[Tensor], fault: Option<GradFault>, grads: bool) -> Result<(f64, Vec<Vec<f64>>)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    g.set_fault(fault);
    let vars = point
        .iter()
        .map(|t| g.param(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let root = program(&mut g, &vars)?;
    let value = g.value(root).item();
    if !grads {
        return Ok((value, Vec::new()));
    }
    g.backward(root)?;
    let gs = vars
        .iter()
        .map(|v| g.grad(*v).map(<[f64]>::to_vec).unwrap_or_default())
        .collect();
    Ok((value, gs))
}

/// Compares the tape gradient of `program` at `point` against central
/// differences `(f(x+h) - f(x-h)) / 2h`, coordinate by coordinate.
pub fn finite_difference_check<F>(program: F, point: &[Tensor], tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    finite_difference_check_with(program, point, &GradCheckOptions::with_tolerance(tolerance))
}

pub fn finite_difference_check_with<F>(
    program: F,
    point: &[Tensor],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let (value, analytic) = evaluate(&program, point, opts.fault, true)?;
    if !value.is_finite() {
        return Err(CpcdError::NonFinite("program value at the base point".into()));
    }
    let h = opts.step;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coords_checked: 0,
        failures: Vec::new(),
        tolerance: opts.tolerance,
    };
    let mut work = point.to_vec();
    for (i, t) in point.iter().enumerate() {
        for c in 0..t.numel() {
            let x0 = t.data()[c];
            work[i].data_mut()[c] = x0 + h;
            let plus = evaluate(&program, &work, None, false).map(|r| r.0);
            work[i].data_mut()[c] = x0 - h;
            let minus = evaluate(&program, &work, None, false).map(|r| r.0);
            work[i].data_mut()[c] = x0;
            let a = analytic[i][c];
            report.coords_checked += 1;
            let numeric = match (plus, minus) {
                (Ok(p), Ok(m)) if p.is_finite() && m.is_finite() => (p - m) / (2.0 * h),
                _ => f64::NAN,
            };
            let err = if numeric.is_nan() {
                f64::INFINITY
            } else {
                relative_error(a, numeric)
            };
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((i, c));
            }
            if !(err < opts.tolerance) {
                report.failures.push(CoordFailure {
                    input: i,
                    coord: c,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}
