//! Finite-difference gradient checking support, shared by the layer unit
//! tests and the acceptance suite. f64 only: central differences with
//! eps = 1e-5 leave ~1e-10 truncation error, far below the tolerances.

const EPS: f64 = 1e-5;
const REL_TOL: f64 = 1e-3;
const ABS_TOL: f64 = 1e-6;

/// Central-difference gradient of `f` at `x`, one coordinate at a time.
pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + EPS;
        let plus = f(&probe);
        probe[i] = orig - EPS;
        let minus = f(&probe);
        probe[i] = orig;
        grad.push((plus - minus) / (2.0 * EPS));
    }
    grad
}

/// Relative error with an absolute floor: components where both gradients
/// are essentially zero pass on the absolute tolerance alone.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst = 0.0f64;
    for (&a, &n) in analytic.iter().zip(numeric.iter()) {
        let diff = (a - n).abs();
        if diff <= ABS_TOL {
            continue;
        }
        let rel = diff / a.abs().max(n.abs()).max(ABS_TOL);
        worst = worst.max(rel);
    }
    worst
}

pub fn grad_close(analytic: &[f64], numeric: &[f64]) -> bool {
    max_rel_err(analytic, numeric) < REL_TOL
}
