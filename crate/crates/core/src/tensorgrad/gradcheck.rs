use super::{Bound, Graph, NodeId, ParamSet, Tensor, TensorError};

/// Central-difference step.
const STEP: f64 = 1e-5;
/// Gradients whose true value is exactly zero (e.g. a conv bias feeding batch
/// norm) only ever show rounding noise, about 1e-11 at this step size; they
/// are judged against this absolute scale.
const ABS_FLOOR: f64 = 1e-6;

/// Result for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().fold(0.0, |m, p| m.max(p.max_rel_error))
    }
}

fn eval_loss<F>(params: &ParamSet, build: &mut F) -> Result<f64, TensorError>
where
    F: FnMut(&mut Graph, &Bound) -> Result<NodeId, TensorError>,
{
    let mut g = Graph::new();
    let bound = params.bind(&mut g)?;
    let loss = build(&mut g, &bound)?;
    let v = g.value(loss);
    if !v.is_scalar() {
        return Err(TensorError::NotScalar(v.shape().to_vec()));
    }
    v.ensure_finite("finite_diff_check")?;
    Ok(v.item())
}

/// Compares reverse-mode gradients of the loss built by `build` against
/// central differences (h = 1e-5) for every parameter in `params`.
///
/// The error of an element is `|a - n| / max(|a|, |n|, 1e-3·s, 1e-6)` where
/// `s` is the largest magnitude in either gradient of that tensor, so entries
/// that are tiny relative to the tensor are judged on an absolute scale.
pub fn finite_diff_check<F>(params: &mut ParamSet, mut build: F, tolerance: f64) -> Result<GradCheckReport, TensorError>
where
    F: FnMut(&mut Graph, &Bound) -> Result<NodeId, TensorError>,
{
    let mut g = Graph::new();
    let bound = params.bind(&mut g)?;
    let loss = build(&mut g, &bound)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor> = params
        .iter()
        .zip(bound.nodes())
        .map(|((_, p), id)| g.grad(*id).cloned().unwrap_or_else(|| Tensor::zeros(p.value.shape())))
        .collect();
    compare_gradients(params, &analytic, build, tolerance)
}

/// Checks externally supplied gradients, one per parameter in order.
pub fn compare_gradients<F>(
    params: &mut ParamSet,
    analytic: &[Tensor],
    mut build: F,
    tolerance: f64,
) -> Result<GradCheckReport, TensorError>
where
    F: FnMut(&mut Graph, &Bound) -> Result<NodeId, TensorError>,
{
    if analytic.len() != params.len() {
        return Err(TensorError::InvalidArgument(format!(
            "expected {} gradients, got {}",
            params.len(),
            analytic.len()
        )));
    }
    for a in analytic {
        a.ensure_finite("finite_diff_check")?;
    }
    let names: Vec<String> = params.iter().map(|(n, _)| n.to_string()).collect();
    let mut checks = Vec::with_capacity(names.len());
    for (name, grad) in names.iter().zip(analytic) {
        let mut numeric = Vec::with_capacity(grad.numel());
        for i in 0..grad.numel() {
            let orig = params.get(name)?.data()[i];
            params.get_mut(name)?.data_mut()[i] = orig + STEP;
            let plus = eval_loss(params, &mut build);
            params.get_mut(name)?.data_mut()[i] = orig - STEP;
            let minus = eval_loss(params, &mut build);
            params.get_mut(name)?.data_mut()[i] = orig;
            numeric.push((plus? - minus?) / (2.0 * STEP));
        }
        let scale = grad
            .data()
            .iter()
            .chain(&numeric)
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let floor = (1e-3 * scale).max(ABS_FLOOR);
        let max_rel_error = grad
            .data()
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
            .fold(0.0, f64::max);
        checks.push(ParamCheck {
            name: name.clone(),
            max_rel_error,
            passed: max_rel_error <= tolerance,
        });
    }
    Ok(GradCheckReport {
        tolerance,
        params: checks,
    })
}
