//! Finite-difference verification of analytic gradients.

use rand::Rng;

use super::params::{GradStore, ParamStore};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Worst relative error over all compared directions.
    pub max_relative_error: f64,
    /// Directions compared against a central difference.
    pub directions: usize,
    /// Probes discarded because the loss was not differentiable across them.
    pub kinked: usize,
}

/// Directional derivatives below this magnitude are compared absolutely;
/// parameters a loss is invariant to (e.g. attention key biases) have exact
/// zero gradients and the difference quotient there is pure rounding noise.
pub const ABSOLUTE_FLOOR: f64 = 1e-7;

/// The floor also rises to this multiple of the difference quotient's
/// rounding noise, estimated as `4 ε |loss| / h`.
pub const NOISE_MULTIPLE: f64 = 1e3;

/// Relative change of the analytic directional derivative across a probe
/// interval above which the interval is taken to contain a kink.
pub const KINK_TOLERANCE: f64 = 1e-4;

const MAX_ATTEMPTS: usize = 8;

fn relative_error(numeric: f64, analytic: f64, floor: f64) -> f64 {
    (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(floor)
}

enum Probe {
    Compared(f64),
    Kinked,
}

fn probe_direction(
    store: &mut ParamStore,
    loss_and_grad: &mut impl FnMut(&ParamStore) -> (f64, GradStore),
    grad: &GradStore,
    v: &GradStore,
    eps: f64,
) -> Probe {
    let h = eps / v.norm();
    let (center, _) = loss_and_grad(store);
    let floor = ABSOLUTE_FLOOR.max(NOISE_MULTIPLE * 4.0 * f64::EPSILON * center.abs() / h);
    store.axpy(h, v);
    let (plus, g_plus) = loss_and_grad(store);
    store.axpy(-2.0 * h, v);
    let (minus, g_minus) = loss_and_grad(store);
    store.axpy(h, v);
    // ReLU and L1 terms make the loss piecewise smooth; a central difference
    // straddling a kink measures neither one-sided derivative.
    if relative_error(g_plus.dot(v), g_minus.dot(v), floor) > KINK_TOLERANCE {
        return Probe::Kinked;
    }
    Probe::Compared(relative_error((plus - minus) / (2.0 * h), grad.dot(v), floor))
}

/// Compares the directional derivative `<grad, v>` with a central difference
/// of `loss` along `v`, for `random` standard-normal directions plus one
/// direction per parameter tensor.
///
/// A probe interval over which the analytic directional derivative jumps
/// contains a kink. It is retried with a smaller step, and random directions
/// are redrawn, so every counted direction compares a smooth stretch.
///
/// `loss_and_grad` must be deterministic (no dropout).
pub fn check_gradients<R: Rng>(
    store: &ParamStore,
    mut loss_and_grad: impl FnMut(&ParamStore) -> (f64, GradStore),
    random: usize,
    eps: f64,
    rng: &mut R,
) -> GradCheck {
    let (_, grad) = loss_and_grad(store);
    let mut probe = store.clone();
    let mut report = GradCheck {
        max_relative_error: 0.0,
        directions: 0,
        kinked: 0,
    };
    let record = |result: Probe, report: &mut GradCheck| match result {
        Probe::Compared(e) => {
            report.max_relative_error = report.max_relative_error.max(e);
            report.directions += 1;
            true
        }
        Probe::Kinked => {
            report.kinked += 1;
            false
        }
    };

    for _ in 0..random {
        for attempt in 0..MAX_ATTEMPTS {
            let v = GradStore::random_direction(store, rng);
            let step = eps / 10f64.powi((attempt / 2) as i32);
            if record(probe_direction(&mut probe, &mut loss_and_grad, &grad, &v, step), &mut report) {
                break;
            }
        }
    }
    let full = GradStore::random_direction(store, rng);
    for id in store.ids() {
        let v = full.masked(id);
        if v.norm() == 0.0 {
            continue;
        }
        for attempt in 0..MAX_ATTEMPTS / 2 {
            let step = eps / 10f64.powi(attempt as i32);
            if record(probe_direction(&mut probe, &mut loss_and_grad, &grad, &v, step), &mut report) {
                break;
            }
        }
    }
    report
}
