use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Floor on the denominator of the relative error, so that gradients which
/// are zero up to rounding do not produce huge ratios.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradReport {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub checked_params: usize,
}

impl GradReport {
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.max_rel_err < rel_tol
    }
}

fn eval<F>(loss_fn: &F, inputs: &[Tensor<f64>]) -> Result<(Graph<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = loss_fn(&mut g, &vars)?;
    let v = g.value(loss);
    if v.numel() != 1 {
        return Err(Error::Shape(format!("loss must be scalar, got {:?}", v.shape())));
    }
    if !v.item().is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {}", v.item())));
    }
    Ok((g, vars, loss))
}

/// Evenly spaced element indices, at most `limit` of them.
fn sample_indices(numel: usize, limit: Option<usize>) -> Vec<usize> {
    match limit {
        Some(k) if k < numel => (0..k).map(|i| i * numel / k).collect(),
        _ => (0..numel).collect(),
    }
}

/// Checks `loss_fn` at `inputs` (each treated as a trainable leaf).
///
/// At most `per_input` elements of each input are probed; `None` probes all.
pub fn grad_check<F>(loss_fn: F, inputs: &[Tensor<f64>], eps: f64, per_input: Option<usize>) -> Result<GradReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    if eps <= 0.0 || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let (graph, vars, loss) = eval(&loss_fn, inputs)?;
    let grads = graph.backward(loss)?;
    let mut report = GradReport::default();
    let mut probe = inputs.to_vec();
    for (slot, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*var);
        for idx in sample_indices(inputs[slot].numel(), per_input) {
            let orig = inputs[slot].data()[idx];
            probe[slot].data_mut()[idx] = orig + eps;
            let (g_plus, _, l_plus) = eval(&loss_fn, &probe)?;
            probe[slot].data_mut()[idx] = orig - eps;
            let (g_minus, _, l_minus) = eval(&loss_fn, &probe)?;
            probe[slot].data_mut()[idx] = orig;
            let numeric = (g_plus.value(l_plus).item() - g_minus.value(l_minus).item()) / (2.0 * eps);
            let a = analytic.data()[idx];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
            report.max_abs_err = report.max_abs_err.max(abs);
            report.max_rel_err = report.max_rel_err.max(rel);
            report.checked_params += 1;
        }
    }
    Ok(report)
}
