//! Central finite-difference oracle for analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::Result;

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is ~0 are judged on absolute error instead.
pub const REL_ERR_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// (parameter name, flat index, analytic, numeric) for the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares `analytic` against `(f(θ+h) - f(θ-h)) / 2h` on `coords` randomly
/// chosen scalar coordinates (all of them if `coords` exceeds the total).
pub fn check(
    params: &ParamStore,
    analytic: &[Tensor],
    h: f64,
    coords: usize,
    seed: u64,
    mut loss: impl FnMut(&ParamStore) -> Result<f64>,
) -> Result<GradCheckReport> {
    let total = params.num_scalars();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks: Vec<usize> = sample(&mut rng, total, coords.min(total)).into_vec();
    picks.sort_unstable();

    let mut probe = params.clone();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    for flat in picks {
        let (which, offset) = locate(params, flat);
        let orig = params.tensors()[which].data()[offset];
        probe.tensors_mut()[which].data_mut()[offset] = orig + h;
        let up = loss(&probe)?;
        probe.tensors_mut()[which].data_mut()[offset] = orig - h;
        let down = loss(&probe)?;
        probe.tensors_mut()[which].data_mut()[offset] = orig;

        let numeric = (up - down) / (2.0 * h);
        let a = analytic[which].data()[offset];
        let err = relative_error(a, numeric);
        report.checked += 1;
        if err > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = report.max_rel_err.max(err);
            report.worst = Some((params.names()[which].clone(), offset, a, numeric));
        }
    }
    Ok(report)
}

fn locate(params: &ParamStore, mut flat: usize) -> (usize, usize) {
    for (i, t) in params.tensors().iter().enumerate() {
        if flat < t.len() {
            return (i, flat);
        }
        flat -= t.len();
    }
    unreachable!("coordinate beyond parameter count")
}
