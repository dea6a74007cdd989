//! Surrogate loss functions, evaluable at arbitrary coefficients given
//! only the ground-state coefficients `p*`.
//!
//! The contraction (GDI) loss is the training default; the other three
//! exist for comparison experiments. Each loss is provided twice: as a
//! plain function of numeric vectors, and as a tape builder that emits
//! the same arithmetic onto an autodiff tape so the trainer can
//! differentiate it with respect to model parameters (including through
//! the input gradient the loss consumes).

use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};
use crate::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Gdi,
    LowerBound,
    GradToGs,
    GradNormRange,
}

impl std::str::FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gdi" => Ok(Self::Gdi),
            "lower_bound" => Ok(Self::LowerBound),
            "grad_to_gs" => Ok(Self::GradToGs),
            "grad_norm_range" => Ok(Self::GradNormRange),
            other => Err(format!(
                "unknown loss {other:?}; expected gdi, lower_bound, grad_to_gs or grad_norm_range"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Contraction factor demanded per gradient-descent step.
    pub beta: f64,
    /// Step size of the density-optimization update the loss refers to.
    pub lambda: f64,
    pub g_min: f64,
    pub g_max: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kind: LossKind::Gdi,
            beta: 0.9,
            lambda: 0.1,
            g_min: 0.01,
            g_max: 100.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(format!("beta must lie in (0, 1), got {}", self.beta));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(self.g_min >= 0.0 && self.g_min < self.g_max) {
            return Err(format!(
                "gradient-norm bounds must satisfy 0 <= g_min < g_max, got ({}, {})",
                self.g_min, self.g_max
            ));
        }
        Ok(())
    }
}

/// Distances before and after one gradient-descent step:
/// `(||p - lambda grad - p*||, ||p - p*||)`.
///
/// Both [`gdi_loss`] and the contraction factor are defined in terms of
/// this pair, which is what makes "loss is zero" and "factor at most
/// beta" the same comparison with no tolerance.
pub fn step_distances(p: &Vector, p_star: &Vector, grad: &Vector, lambda: f64) -> (f64, f64) {
    let after = (p - grad * lambda - p_star).norm();
    let before = (p - p_star).norm();
    (after, before)
}

/// Contraction loss: `max(0, ||p - lambda grad - p*|| - beta ||p - p*||)`.
/// Zero exactly when the update contracts the distance by at least `beta`.
pub fn gdi_loss(p: &Vector, p_star: &Vector, grad: &Vector, beta: f64, lambda: f64) -> f64 {
    let (after, before) = step_distances(p, p_star, grad, lambda);
    (after - beta * before).max(0.0)
}

/// Variational-style bound: `max(0, E(p*) - E(p))`, penalizing any
/// density rated below the ground state.
pub fn lower_bound_loss(energy_at_p_star: f64, energy_at_p: f64) -> f64 {
    (energy_at_p_star - energy_at_p).max(0.0)
}

/// Alignment loss `1 - cos(grad, p - p*)`, in [0, 2]. Degenerate cases
/// take fixed neutral values: 0 at `p = p*`, and 1 for a zero gradient
/// away from the ground state.
pub fn grad_to_gs_loss(p: &Vector, p_star: &Vector, grad: &Vector) -> f64 {
    let d = p - p_star;
    let d_norm = d.norm();
    if d_norm == 0.0 {
        return 0.0;
    }
    let g_norm = grad.norm();
    if g_norm == 0.0 {
        return 1.0;
    }
    1.0 - grad.dot(&d) / (g_norm * d_norm)
}

/// Keeps gradient magnitudes inside `[g_min, g_max]`:
/// `max(0, ||grad|| - g_max) + max(0, g_min - ||grad||)`.
pub fn grad_norm_range_loss(grad: &Vector, g_min: f64, g_max: f64) -> f64 {
    assert!(
        (0.0..g_max).contains(&g_min),
        "gradient-norm bounds must satisfy 0 <= g_min < g_max"
    );
    let n = grad.norm();
    (n - g_max).max(0.0) + (g_min - n).max(0.0)
}

// ---------------------------------------------------------------------
// Tape builders
// ---------------------------------------------------------------------

/// Emits [`gdi_loss`] onto the tape.
pub fn emit_gdi(
    tape: &mut Tape,
    p: &[NodeId],
    p_star: &[NodeId],
    grad: &[NodeId],
    beta: f64,
    lambda: f64,
) -> NodeId {
    let step = tape.scale_vec(grad, lambda);
    let moved = tape.sub_vec(p, &step);
    let after_vec = tape.sub_vec(&moved, p_star);
    let after = tape.norm(&after_vec);
    let diff = tape.sub_vec(p, p_star);
    let before = tape.norm(&diff);
    let scaled_before = tape.scale(before, beta);
    let slack = tape.sub(after, scaled_before);
    tape.pos_part(slack)
}

/// Emits [`lower_bound_loss`] given the two energy nodes.
pub fn emit_lower_bound(tape: &mut Tape, energy_at_p_star: NodeId, energy_at_p: NodeId) -> NodeId {
    let diff = tape.sub(energy_at_p_star, energy_at_p);
    tape.pos_part(diff)
}

/// Emits [`grad_to_gs_loss`]. The guarded reciprocals reproduce the
/// degenerate-case values: the `step` gate yields 0 at `p = p*`, and a
/// zero gradient leaves the cosine term at 0, so the loss is 1.
pub fn emit_grad_to_gs(
    tape: &mut Tape,
    p: &[NodeId],
    p_star: &[NodeId],
    grad: &[NodeId],
) -> NodeId {
    let d = tape.sub_vec(p, p_star);
    let d_norm = tape.norm(&d);
    let g_norm = tape.norm(grad);
    let inner = tape.dot(grad, &d);
    let inv_g = tape.recip_guard(g_norm);
    let inv_d = tape.recip_guard(d_norm);
    let t = tape.mul(inner, inv_g);
    let cos = tape.mul(t, inv_d);
    let one = tape.constant(1.0);
    let raw = tape.sub(one, cos);
    let gate = tape.step(d_norm);
    tape.mul(gate, raw)
}

/// Emits [`grad_norm_range_loss`].
pub fn emit_grad_norm_range(tape: &mut Tape, grad: &[NodeId], g_min: f64, g_max: f64) -> NodeId {
    let n = tape.norm(grad);
    let hi = tape.constant(g_max);
    let over = tape.sub(n, hi);
    let over = tape.pos_part(over);
    let lo = tape.constant(g_min);
    let under = tape.sub(lo, n);
    let under = tape.pos_part(under);
    tape.add(over, under)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Function;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn v(values: &[f64]) -> Vector {
        Vector::from_vec(values.to_vec())
    }

    #[test]
    fn gdi_zero_when_step_lands_on_ground_state() {
        let p = v(&[1.0, 2.0]);
        let p_star = v(&[0.5, 1.5]);
        let grad = (&p - &p_star) / 0.1;
        assert_eq!(gdi_loss(&p, &p_star, &grad, 0.9, 0.1), 0.0);
    }

    #[test]
    fn gdi_penalizes_stationary_field() {
        // grad = 0 at distance 1 gives (1 - beta) d = 0.1.
        let p = v(&[1.0, 0.0]);
        let p_star = v(&[0.0, 0.0]);
        let grad = v(&[0.0, 0.0]);
        assert_relative_eq!(
            gdi_loss(&p, &p_star, &grad, 0.9, 0.1),
            0.1,
            epsilon = 1e-15
        );
    }

    #[test]
    fn gdi_worked_example() {
        // p - p* = (1, 0), grad = (0, 10), lambda = 0.1: after-step offset
        // (1, -1), so the loss is sqrt(2) - 0.9.
        let p = v(&[1.0, 0.0]);
        let p_star = v(&[0.0, 0.0]);
        let grad = v(&[0.0, 10.0]);
        let loss = gdi_loss(&p, &p_star, &grad, 0.9, 0.1);
        assert_relative_eq!(loss, 2.0f64.sqrt() - 0.9, epsilon = 1e-15);
        assert_relative_eq!(loss, 0.51421, max_relative = 1e-5);
    }

    #[test]
    fn gdi_invariant_under_grad_lambda_rescaling() {
        let mut rng = StdRng::seed_from_u64(1);
        for _ in 0..200 {
            let p = v(&[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
            let p_star = v(&[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
            let grad = v(&[rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)]);
            let beta = rng.random_range(0.1..0.99);
            let lambda = rng.random_range(0.01..1.0);
            let c = rng.random_range(0.1..10.0);
            let a = gdi_loss(&p, &p_star, &grad, beta, lambda);
            let b = gdi_loss(&p, &p_star, &(&grad * c), beta, lambda / c);
            assert_relative_eq!(a, b, epsilon = 1e-12, max_relative = 1e-12);
        }
    }

    #[test]
    fn gdi_zero_iff_contraction_within_beta() {
        // One-step theorem, shared arithmetic: no tolerance.
        let mut rng = StdRng::seed_from_u64(2);
        for _ in 0..1000 {
            let p = v(&[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
            let p_star = v(&[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
            let grad = v(&[rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)]);
            let beta = rng.random_range(0.1..0.99);
            let lambda = rng.random_range(0.01..0.5);
            let (after, before) = step_distances(&p, &p_star, &grad, lambda);
            let loss = gdi_loss(&p, &p_star, &grad, beta, lambda);
            assert_eq!(loss == 0.0, after <= beta * before);
        }
    }

    #[test]
    fn lower_bound_examples() {
        assert_eq!(lower_bound_loss(1.0, 2.0), 0.0);
        assert_eq!(lower_bound_loss(2.0, 1.0), 1.0);
        assert_eq!(lower_bound_loss(1.0, 1.0), 0.0);
    }

    #[test]
    fn grad_to_gs_examples() {
        let p_star = v(&[0.0, 0.0]);
        let p = v(&[1.0, 0.0]);
        assert_eq!(grad_to_gs_loss(&p, &p_star, &v(&[1.0, 0.0])), 0.0);
        assert_eq!(grad_to_gs_loss(&p, &p_star, &v(&[-1.0, 0.0])), 2.0);
        let loss = grad_to_gs_loss(&p, &p_star, &v(&[1.0, 1.0]));
        assert_relative_eq!(loss, 1.0 - 2.0f64.sqrt() / 2.0, epsilon = 1e-15);
        assert_relative_eq!(loss, 0.29289, max_relative = 1e-4);
        // Degenerate cases.
        assert_eq!(grad_to_gs_loss(&p_star, &p_star, &v(&[1.0, 1.0])), 0.0);
        assert_eq!(grad_to_gs_loss(&p, &p_star, &v(&[0.0, 0.0])), 1.0);
    }

    #[test]
    fn grad_norm_range_examples() {
        let up = |n: f64| v(&[n, 0.0]);
        assert_eq!(grad_norm_range_loss(&up(1.0), 0.01, 100.0), 0.0);
        assert_relative_eq!(
            grad_norm_range_loss(&up(0.005), 0.01, 100.0),
            0.005,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            grad_norm_range_loss(&up(102.0), 0.01, 100.0),
            2.0,
            epsilon = 1e-13
        );
    }

    #[test]
    fn losses_are_nonnegative_on_random_inputs() {
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..500 {
            let p = v(&[rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]);
            let p_star = v(&[rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]);
            let grad = v(&[rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0)]);
            assert!(gdi_loss(&p, &p_star, &grad, 0.9, 0.1) >= 0.0);
            assert!(grad_to_gs_loss(&p, &p_star, &grad) >= 0.0);
            assert!(grad_to_gs_loss(&p, &p_star, &grad) <= 2.0);
            assert!(grad_norm_range_loss(&grad, 0.01, 100.0) >= 0.0);
            assert!(lower_bound_loss(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) >= 0.0);
        }
    }

    /// The tape builders must agree with the plain functions, including
    /// at the degenerate points.
    #[test]
    fn emitted_losses_match_plain_functions() {
        let mut rng = StdRng::seed_from_u64(4);
        let dim = 3;
        for case in 0..300 {
            let p: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let p_star: Vec<f64> = if case % 10 == 0 {
                p.clone() // exercise the p = p* branch
            } else {
                (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
            };
            let grad: Vec<f64> = if case % 7 == 0 {
                vec![0.0; dim] // exercise the zero-gradient branch
            } else {
                (0..dim).map(|_| rng.random_range(-4.0..4.0)).collect()
            };
            let beta = 0.9;
            let lambda = 0.1;

            // Inputs enter as coefficients (p), aux (p*), params (grad) so
            // each builder sees plain nodes.
            let mut tape = Tape::new(dim, dim, dim);
            let p_ids = tape.coeff_ids();
            let g_ids = tape.param_ids();
            let s_ids = tape.aux_ids();

            let gdi = emit_gdi(&mut tape, &p_ids, &s_ids, &g_ids, beta, lambda);
            let cos = emit_grad_to_gs(&mut tape, &p_ids, &s_ids, &g_ids);
            let range = emit_grad_norm_range(&mut tape, &g_ids, 0.01, 100.0);

            let pv = v(&p);
            let sv = v(&p_star);
            let gv = v(&grad);
            let eval = |out| Function::new(tape.clone(), out).value(&p, &grad, &p_star);
            assert_relative_eq!(
                eval(gdi),
                gdi_loss(&pv, &sv, &gv, beta, lambda),
                epsilon = 1e-14
            );
            assert_relative_eq!(eval(cos), grad_to_gs_loss(&pv, &sv, &gv), epsilon = 1e-14);
            assert_relative_eq!(
                eval(range),
                grad_norm_range_loss(&gv, 0.01, 100.0),
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn config_validation() {
        let ok = LossConfig::default();
        assert!(ok.validate().is_ok());
        let bad = LossConfig {
            beta: 1.0,
            ..LossConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = LossConfig {
            g_min: 5.0,
            g_max: 1.0,
            ..LossConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
