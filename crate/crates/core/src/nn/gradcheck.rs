//! Finite-difference validation of analytic gradients.

use crate::error::{Error, Result};
use crate::nn::Network;

/// Outcome of a gradient check: the largest relative disagreement between
/// analytic and central-difference gradients over all parameter elements.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked_elements: usize,
    /// (parameter index, element index, analytic, numeric) of the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err < tolerance
    }
}

/// Checks every parameter element of `net` against a central finite
/// difference of `loss` with step `h`.
///
/// `loss` must evaluate the scalar loss for the network's current parameters
/// and accumulate the matching gradients into the parameter grad slots (a
/// forward pass, a loss, and a backward pass). The harness zeroes gradients
/// around each evaluation, so accumulation never leaks between probes. The
/// relative error of one element is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)`.
pub fn gradient_check<F>(net: &mut Network, mut loss: F, h: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut Network) -> Result<f64>,
{
    if h <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    net.zero_grads();
    loss(net)?;
    let analytic: Vec<Vec<f64>> = net
        .params()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            p.grad().map(<[f64]>::to_vec).ok_or_else(|| {
                Error::InvalidState(format!("loss closure left parameter {i} without a gradient"))
            })
        })
        .collect::<Result<_>>()?;

    let mut report = GradCheckReport { max_rel_err: 0.0, checked_elements: 0, worst: None };
    for pi in 0..analytic.len() {
        for ei in 0..analytic[pi].len() {
            let original = net.params()[pi].data()[ei];

            net.params_mut()[pi].data_mut()[ei] = original + h;
            net.zero_grads();
            let plus = loss(net)?;

            net.params_mut()[pi].data_mut()[ei] = original - h;
            net.zero_grads();
            let minus = loss(net)?;

            net.params_mut()[pi].data_mut()[ei] = original;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[pi][ei];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
            report.checked_elements += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((pi, ei, a, numeric));
            }
        }
    }
    net.zero_grads();
    Ok(report)
}
