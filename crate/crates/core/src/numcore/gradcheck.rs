use super::tensor::Tensor;
use crate::error::Result;

/// Worst disagreement between analytic and finite-difference gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter index, flat entry index)` of the worst entry.
    pub worst: (usize, usize),
    pub entries_checked: usize,
}

/// Compares the gradients returned by `loss_and_grads` with central finite
/// differences of its loss, entry by entry. Relative error uses the
/// denominator `max(|analytic|, |fd|, 1e-8)`.
pub fn check_gradients<F>(loss_and_grads: F, params: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<(f64, Vec<Tensor>)>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let (_, analytic) = loss_and_grads(params)?;
    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        entries_checked: 0,
    };
    for p in 0..params.len() {
        for e in 0..params[p].len() {
            let orig = params[p].data()[e];
            work[p].data_mut()[e] = orig + h;
            let (plus, _) = loss_and_grads(&work)?;
            work[p].data_mut()[e] = orig - h;
            let (minus, _) = loss_and_grads(&work)?;
            work[p].data_mut()[e] = orig;

            let fd = (plus - minus) / (2.0 * h);
            let a = analytic[p].data()[e];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (p, e);
            }
            report.entries_checked += 1;
        }
    }
    Ok(report)
}
