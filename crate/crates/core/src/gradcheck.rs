//! Central finite-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;
const DENOM_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, flat coordinate)` of the worst agreement.
    pub worst: (usize, usize),
    pub coords_checked: usize,
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

/// Max relative error between the analytic gradient of scalar `f` at `x`
/// and central differences with step `h`, over every coordinate of `x`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let report = grad_check_inputs(
        |g: &mut Graph, vs: &[Var]| f(g, vs[0]),
        std::slice::from_ref(x),
        h,
        None,
    )?;
    Ok(report.max_rel_error)
}

/// Multi-input variant. With `sample = Some((k, rng))` at most `k` random
/// coordinates of each input are checked; otherwise all of them.
pub fn grad_check_inputs<F>(
    f: F,
    inputs: &[Tensor],
    h: f64,
    mut sample: Option<(usize, &mut SplitMix64)>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor], with_grad: bool| -> Result<(f64, Vec<Tensor>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.leaf(t.clone(), with_grad)).collect();
        let out = f(&mut g, &vars)?;
        if g.value(out).len() != 1 {
            return Err(Error::shape("grad_check (scalar output)", g.shape(out), &[1]));
        }
        let y = g.value(out).item();
        if !with_grad {
            return Ok((y, Vec::new()));
        }
        g.backward(out)?;
        let grads = vars
            .iter()
            .map(|v| g.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(g.shape(*v))))
            .collect();
        Ok((y, grads))
    };

    let (_, analytic) = eval(inputs, true)?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        coords_checked: 0,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let coords: Vec<usize> = match sample.as_mut() {
            Some((k, rng)) if *k < input.len() => {
                let mut all: Vec<usize> = (0..input.len()).collect();
                rng.shuffle(&mut all);
                all.truncate(*k);
                all
            }
            _ => (0..input.len()).collect(),
        };
        for c in coords {
            let orig = input.data()[c];
            work[i].data_mut()[c] = orig + h;
            let (plus, _) = eval(&work, false)?;
            work[i].data_mut()[c] = orig - h;
            let (minus, _) = eval(&work, false)?;
            work[i].data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = rel_error(analytic[i].data()[c], numeric);
            report.coords_checked += 1;
            if err > report.max_rel_error || !err.is_finite() {
                report.max_rel_error = err;
                report.worst = (i, c);
            }
        }
    }
    Ok(report)
}
