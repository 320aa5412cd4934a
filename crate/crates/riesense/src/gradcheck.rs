//! Finite-difference verification of recorded gradients.
//!
//! Central differences are the independent oracle for everything the tape
//! computes: `(f(x+h) − f(x−h)) / 2h` per coordinate, compared against the
//! adjoints of a backward sweep. Probe points must stay at least `1e-3` away
//! from clamp and branch boundaries, where one-sided subgradients and the
//! quadratic truncation of central differences legitimately disagree.

use crate::scalar::Real;
use crate::tape::{NodeId, Tape, Tensor};

/// Default step for central differences.
pub fn default_step<F: Real>() -> F {
    F::of(1e-5)
}

/// Central-difference gradient of `f` at `point`.
pub fn central_difference<F: Real>(
    mut f: impl FnMut(&[F]) -> F,
    point: &[F],
    h: F,
) -> Vec<F> {
    let mut x = point.to_vec();
    let mut grad = vec![F::zero(); point.len()];
    for i in 0..point.len() {
        let orig = x[i];
        x[i] = orig + h;
        let fp = f(&x);
        x[i] = orig - h;
        let fm = f(&x);
        x[i] = orig;
        grad[i] = (fp - fm) / (F::of(2.0) * h);
    }
    grad
}

/// Largest relative disagreement between two gradients. Entries are compared
/// as `|a − n| / max(|a|, |n|, floor)` with `floor = 1e-6`, so near-zero
/// pairs compare absolutely.
pub fn max_rel_error<F: Real>(analytic: &[F], numeric: &[F]) -> F {
    let floor = F::of(1e-6);
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(F::zero(), F::max)
}

/// Compare a recorded gradient against central differences of `f` at `point`
/// with step `h`; returns the max relative error.
pub fn finite_difference_check<F: Real>(
    f: impl FnMut(&[F]) -> F,
    point: &[F],
    h: F,
    recorded: &[F],
) -> F {
    let numeric = central_difference(f, point, h);
    max_rel_error(recorded, &numeric)
}

/// Verify a tape-built scalar function of one vector leaf: records the
/// computation at `point`, back-propagates, and compares the leaf adjoint
/// against central differences of re-recording at perturbed points.
pub fn check_tape_fn<F: Real>(
    point: &[F],
    mut build: impl FnMut(&mut Tape<F>, NodeId) -> NodeId,
) -> F {
    let eval = |x: &[F], build: &mut dyn FnMut(&mut Tape<F>, NodeId) -> NodeId| {
        let mut tape = Tape::new();
        let leaf = tape.leaf(Tensor::vector(x.to_vec()));
        let out = build(&mut tape, leaf);
        (tape, leaf, out)
    };
    let (tape, leaf, out) = eval(point, &mut build);
    let adjoints = tape.backward(out).expect("scalar output required");
    let recorded = adjoints[leaf.index()].data().to_vec();
    finite_difference_check(
        |x| {
            let (tape, _, out) = eval(x, &mut build);
            tape.value(out).item()
        },
        point,
        default_step(),
        &recorded,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let f = |x: &[f64]| 3.0 * x[0] - 2.0 * x[1];
        let err = finite_difference_check(f, &[0.7, -0.4], 1e-5, &[3.0, -2.0]);
        assert!(err < 1e-10, "linear fd error {err}");
    }

    #[test]
    fn identity_composition_has_unit_gradient() {
        let err = check_tape_fn(&[0.42], |tape, x| {
            let t = tape.atanh(x);
            let y = tape.tanh(t);
            tape.sum(y)
        });
        assert!(err < 1e-8, "tanh∘atanh fd error {err}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let f = |x: &[f64]| x[0] * x[0];
        let err = finite_difference_check(f, &[3.0], 1e-5, &[5.0]);
        assert!(err > 0.1);
    }
}
