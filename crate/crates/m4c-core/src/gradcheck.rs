//! Central finite-difference gradient checking.

/// Compare the analytic gradient of a scalar function against central finite
/// differences (f(x+h) - f(x-h)) / 2h, elementwise.
///
/// `f` evaluates the function at a point and returns (value, analytic
/// gradient). Only the value is used at the perturbed points, so the analytic
/// path is never consulted for the numeric estimate. Returns the maximum
/// relative error with denominator max(|analytic|, |numeric|, 1e-8).
pub fn check_gradients<F>(f: F, inputs: &[f64], step: f64) -> f64
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = f(inputs);
    assert_eq!(
        analytic.len(),
        inputs.len(),
        "analytic gradient length must match input length"
    );
    let mut x = inputs.to_vec();
    let mut max_rel = 0.0f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + step;
        let (f_plus, _) = f(&x);
        x[i] = orig - step;
        let (f_minus, _) = f(&x);
        x[i] = orig;
        let numeric = (f_plus - f_minus) / (2.0 * step);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        let rel = (analytic[i] - numeric).abs() / denom;
        if rel > max_rel {
            max_rel = rel;
        }
    }
    max_rel
}

/// Per-element relative errors of the same comparison; callers that probe a
/// deep composition can evaluate at several step sizes and keep each
/// element's best estimate (truncation error grows with the step while
/// cancellation noise shrinks, so no single step suits both the near-zero
/// and the high-curvature coordinates; a wrong analytic gradient stays wrong
/// at every step).
pub fn check_gradients_per_element<F>(f: F, inputs: &[f64], step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = f(inputs);
    assert_eq!(analytic.len(), inputs.len());
    let mut x = inputs.to_vec();
    let mut rels = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + step;
        let (f_plus, _) = f(&x);
        x[i] = orig - step;
        let (f_minus, _) = f(&x);
        x[i] = orig;
        let numeric = (f_plus - f_minus) / (2.0 * step);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        rels.push((analytic[i] - numeric).abs() / denom);
    }
    rels
}
