//! Central finite-difference gradient checking.
//!
//! The checked function is rebuilt on a fresh [`Graph`] for every probe, so
//! the numeric estimate only exercises forward passes.

use super::{Graph, Tensor, TensorError, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Input tensor and flat element index where the worst error occurred.
    pub worst_input: usize,
    pub worst_index: usize,
    pub checked: usize,
}

/// Denominator floor for the relative error. Entries whose analytic and
/// numeric values are both below it are compared absolutely; central
/// differences at `h = 1e-5` carry roughly 1e-10 of rounding noise.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Checks every element of every input. `f` receives one leaf per input,
/// all marked as requiring gradients, and must return a scalar.
pub fn check_gradients<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradCheck, TensorError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, TensorError>,
{
    let all: Vec<Vec<usize>> = inputs.iter().map(|t| (0..t.len()).collect()).collect();
    check_gradients_at(inputs, &all, h, f)
}

/// Like [`check_gradients`] but only probes the listed element indices of
/// each input.
pub fn check_gradients_at<F>(inputs: &[Tensor], probes: &[Vec<usize>], h: f64, f: F) -> Result<GradCheck, TensorError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |values: &[Tensor]| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).data()[0])
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_input: 0,
        worst_index: 0,
        checked: 0,
    };
    let mut probe = inputs.to_vec();
    for (i, indices) in probes.iter().enumerate() {
        for &j in indices {
            let orig = probe[i].data()[j];
            probe[i].data_mut()[j] = orig + h;
            let plus = eval(&probe)?;
            probe[i].data_mut()[j] = orig - h;
            let minus = eval(&probe)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(analytic[i].data()[j], numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_input = i;
                report.worst_index = j;
            }
        }
    }
    Ok(report)
}
