//! Central finite-difference check of tape gradients.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParamId, ParamSet, Real, Tape, Var};
use crate::Result;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// `(parameter name, max relative error)` in parameter order.
    pub per_param: Vec<(String, f64)>,
    pub max_rel_error: f64,
    pub checked_elements: usize,
    /// Elements whose ±h probes crossed a ReLU or max-pool switch point.
    pub skipped_elements: usize,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&(String, f64)> {
        self.per_param.iter().max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// Compares the tape gradient of `loss_fn` with `(f(θ+h) − f(θ−h)) / 2h`.
///
/// For each parameter the error is `max_j |analytic_j − numeric_j|` divided by
/// the largest analytic gradient magnitude of that parameter. Parameters with
/// more than `max_elems` entries are checked on a seeded random subset.
///
/// The loss is only piecewise smooth once ReLU or max-pool appear, so an element
/// whose `θ ± h` tapes change any switch decision is skipped rather than
/// compared; the next candidate element is tried instead (up to four times
/// `max_elems` candidates per parameter).
pub fn grad_check<T, F>(
    params: &ParamSet<T>,
    mut loss_fn: F,
    h: f64,
    max_elems: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    T: Real,
    F: FnMut(&ParamSet<T>) -> Result<(Tape<T>, Var)>,
{
    let mut analytic = params.clone();
    analytic.zero_grad();
    let (tape, loss) = loss_fn(&analytic)?;
    let base = tape.switch_pattern();
    tape.backward(loss, &mut analytic)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = params.clone();
    let mut report =
        GradCheckReport { per_param: Vec::new(), max_rel_error: 0.0, checked_elements: 0, skipped_elements: 0 };
    let mut eval = |ps: &ParamSet<T>| -> Result<(f64, bool)> {
        let (tape, loss) = loss_fn(ps)?;
        Ok((tape.value(loss).data()[0].as_f64(), tape.switch_pattern() == base))
    };

    for pi in 0..params.len() {
        let id = ParamId(pi);
        let grad = analytic.get(id).grad.as_ref().map(|g| g.to_f64_vec()).unwrap_or_default();
        let n = params.get(id).value.numel();
        let candidates: Vec<usize> = if n <= max_elems {
            (0..n).collect()
        } else {
            index::sample(&mut rng, n, n.min(max_elems.saturating_mul(4))).into_vec()
        };
        let scale = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let mut worst = 0.0f64;
        let mut checked = 0;
        for &j in &candidates {
            if checked == max_elems {
                break;
            }
            let orig = probe.get(id).value.data()[j];
            probe.get_mut(id).value.data_mut()[j] = T::of(orig.as_f64() + h);
            let (up, up_same) = eval(&probe)?;
            probe.get_mut(id).value.data_mut()[j] = T::of(orig.as_f64() - h);
            let (down, down_same) = eval(&probe)?;
            probe.get_mut(id).value.data_mut()[j] = orig;
            if !(up_same && down_same) {
                report.skipped_elements += 1;
                continue;
            }
            checked += 1;
            let numeric = (up - down) / (2.0 * h);
            let a = grad.get(j).copied().unwrap_or(0.0);
            worst = worst.max((a - numeric).abs() / scale.max(numeric.abs()).max(1e-12));
        }
        report.checked_elements += checked;
        report.max_rel_error = report.max_rel_error.max(worst);
        report.per_param.push((params.get(id).name.clone(), worst));
    }
    Ok(report)
}
