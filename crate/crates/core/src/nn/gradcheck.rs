use alloc::vec::Vec;

use super::network::{Gradients, Network};

/// Entries whose analytic and numeric values are both below this magnitude
/// are compared absolutely instead of relatively.
pub const GRADCHECK_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// `(network, flat parameter index)` of the worst entry.
    pub worst: (usize, usize),
}

/// Compares `analytic` against central differences of `loss` with the
/// given step, perturbing every parameter of every network in turn.
pub fn finite_difference_check<F>(nets: &mut [Network<f64>], analytic: &[Gradients<f64>], step: f64, loss: F) -> GradCheckReport
where
    F: Fn(&[Network<f64>]) -> f64,
{
    let mut report = GradCheckReport { checked: 0, max_rel_error: 0.0, worst: (0, 0) };
    for n in 0..nets.len() {
        let flat: Vec<f64> = analytic[n].flatten();
        let mut idx = 0;
        let layer_count = nets[n].layers().len();
        for li in 0..layer_count {
            let (wl, bl) = {
                let l = &nets[n].layers()[li];
                (l.weight.len(), l.bias.len())
            };
            for pi in 0..wl + bl {
                let orig = param(&nets[n], li, pi);
                set_param(&mut nets[n], li, pi, orig + step);
                let up = loss(nets);
                set_param(&mut nets[n], li, pi, orig - step);
                let down = loss(nets);
                set_param(&mut nets[n], li, pi, orig);
                let numeric = (up - down) / (2.0 * step);
                let a = flat[idx];
                let denom = a.abs().max(numeric.abs()).max(GRADCHECK_FLOOR);
                let err = (a - numeric).abs() / denom;
                if err > report.max_rel_error {
                    report.max_rel_error = err;
                    report.worst = (n, idx);
                }
                report.checked += 1;
                idx += 1;
            }
        }
    }
    report
}

fn param(net: &Network<f64>, li: usize, pi: usize) -> f64 {
    let l = &net.layers()[li];
    if pi < l.weight.len() {
        l.weight[pi]
    } else {
        l.bias[pi - l.weight.len()]
    }
}

fn set_param(net: &mut Network<f64>, li: usize, pi: usize, v: f64) {
    let l = &mut net.layers_mut()[li];
    if pi < l.weight.len() {
        l.weight[pi] = v;
    } else {
        let w = l.weight.len();
        l.bias[pi - w] = v;
    }
}
