//! Central finite-difference verification of analytic gradients.
//!
//! The checker never touches the tape's backward rules: it only re-evaluates
//! a caller-supplied loss closure at perturbed inputs, so it stays an
//! independent oracle for everything `backward` computes.

/// Default perturbation for central differences.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Worst relative disagreement between an analytic gradient and central
/// finite differences of `loss` over the coordinates of `values`.
///
/// `loss` receives the full parameter buffer and must be a pure function
/// of it. Relative error uses `|a - n| / max(1, |a|, |n|)` so near-zero
/// coordinates are compared absolutely.
pub fn max_relative_error(
    values: &[f64],
    analytic: &[f64],
    step: f64,
    mut loss: impl FnMut(&[f64]) -> f64,
) -> f64 {
    assert_eq!(values.len(), analytic.len());
    let mut buf = values.to_vec();
    let mut worst = 0.0f64;
    for i in 0..buf.len() {
        let saved = buf[i];
        buf[i] = saved + step;
        let up = loss(&buf);
        buf[i] = saved - step;
        let down = loss(&buf);
        buf[i] = saved;
        let numeric = (up - down) / (2.0 * step);
        let denom = 1.0f64.max(analytic[i].abs()).max(numeric.abs());
        let rel = (analytic[i] - numeric).abs() / denom;
        if rel > worst {
            worst = rel;
        }
    }
    worst
}

/// Like [`max_relative_error`] but only probes the listed coordinates.
pub fn max_relative_error_at(
    values: &[f64],
    analytic: &[f64],
    coords: &[usize],
    step: f64,
    mut loss: impl FnMut(&[f64]) -> f64,
) -> f64 {
    let mut buf = values.to_vec();
    let mut worst = 0.0f64;
    for &i in coords {
        let saved = buf[i];
        buf[i] = saved + step;
        let up = loss(&buf);
        buf[i] = saved - step;
        let down = loss(&buf);
        buf[i] = saved;
        let numeric = (up - down) / (2.0 * step);
        let denom = 1.0f64.max(analytic[i].abs()).max(numeric.abs());
        let rel = (analytic[i] - numeric).abs() / denom;
        if rel > worst {
            worst = rel;
        }
    }
    worst
}
