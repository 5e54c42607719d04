//! Independent oracles shared by unit tests.

/// `argmin_z tau|z| + (weight/2)(z - m)²`: grid search for a bracket, then
/// bisection on the sign of the subgradient inside it.
pub(crate) fn prox_oracle(m: f64, tau: f64, weight: f64) -> f64 {
    let f = |z: f64| tau * z.abs() + 0.5 * weight * (z - m).powi(2);
    let slope = |z: f64| weight * (z - m) + tau * z.signum();
    let (lo, hi) = (-m.abs() - 1.0, m.abs() + 1.0);
    let steps = 2000;
    let h = (hi - lo) / steps as f64;
    let best = (0..=steps)
        .map(|i| lo + h * i as f64)
        .min_by(|a, b| f(*a).total_cmp(&f(*b)))
        .unwrap();
    let (mut a, mut b) = (best - h, best + h);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if slope(mid) > 0.0 {
            b = mid;
        } else {
            a = mid;
        }
    }
    0.5 * (a + b)
}
