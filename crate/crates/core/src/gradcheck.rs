//! Central finite-difference oracle for tape gradients.

use thiserror::Error;

use crate::par;
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Shape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum GradCheckError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("checked function must return a scalar, got {0}")]
    NotScalar(Shape),
    #[error("non-finite {what} at input {input}, element {index}")]
    NonFinite {
        what: &'static str,
        input: usize,
        index: usize,
    },
    #[error("finite-difference step must be positive, got {0}")]
    BadStep(f64),
    #[error("coordinate ({input}, {index}) is out of range")]
    BadCoordinate { input: usize, index: usize },
}

/// One compared coordinate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradSample {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<GradSample>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }

    /// Combines two reports, keeping the worse offender.
    pub fn merge(self, other: GradCheckReport) -> GradCheckReport {
        let worst = if other.max_rel_error > self.max_rel_error {
            other.worst
        } else {
            self.worst
        };
        GradCheckReport {
            max_rel_error: self.max_rel_error.max(other.max_rel_error),
            worst,
            checked: self.checked + other.checked,
        }
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares tape gradients of `f` against central differences at every
/// element of every input.
pub fn grad_check<T, F>(f: F, inputs: &[Tensor<T>], eps: f64) -> Result<GradCheckReport, GradCheckError>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var, TensorError> + Sync,
{
    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j)))
        .collect();
    grad_check_at(f, inputs, &coords, eps)
}

/// Like [`grad_check`] but only at the listed `(input, element)` coordinates.
pub fn grad_check_at<T, F>(
    f: F,
    inputs: &[Tensor<T>],
    coords: &[(usize, usize)],
    eps: f64,
) -> Result<GradCheckReport, GradCheckError>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var, TensorError> + Sync,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(GradCheckError::BadStep(eps));
    }
    for &(input, index) in coords {
        if inputs.get(input).is_none_or(|t| index >= t.numel()) {
            return Err(GradCheckError::BadCoordinate { input, index });
        }
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let shape = tape.shape(out);
    if !shape.is_scalar() {
        return Err(GradCheckError::NotScalar(shape));
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor<T>> = vars.iter().map(|&v| grads.wrt(v)).collect();

    let eval = |perturbed: &[Tensor<T>], input: usize, index: usize| -> Result<f64, GradCheckError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.variable(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out).data()[0].f64();
        if !v.is_finite() {
            return Err(GradCheckError::NonFinite {
                what: "function value",
                input,
                index,
            });
        }
        Ok(v)
    };

    let samples = par::map_range(coords.len(), |k| -> Result<GradSample, GradCheckError> {
        let (input, index) = coords[k];
        let a = analytic[input].data()[index].f64();
        if !a.is_finite() {
            return Err(GradCheckError::NonFinite {
                what: "analytic gradient",
                input,
                index,
            });
        }
        let mut work = inputs.to_vec();
        let x = inputs[input].data()[index];
        let plus = x + T::of(eps);
        let minus = x - T::of(eps);
        work[input].data_mut()[index] = plus;
        let fp = eval(&work, input, index)?;
        work[input].data_mut()[index] = minus;
        let fm = eval(&work, input, index)?;
        // realized step, which differs from 2·eps only by rounding of x ± eps
        let numeric = (fp - fm) / (plus.f64() - minus.f64());
        Ok(GradSample {
            input,
            index,
            analytic: a,
            numeric,
            rel_error: rel_error(a, numeric),
        })
    });

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for s in samples {
        let s = s?;
        report.checked += 1;
        if report.worst.is_none() || s.rel_error > report.max_rel_error {
            report.max_rel_error = s.rel_error;
            report.worst = Some(s);
        }
    }
    Ok(report)
}
