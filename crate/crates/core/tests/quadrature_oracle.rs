//! Brute-force 3-D grid quadrature oracle for the closed-form overlap
//! integrals and the density L2 metric.
//!
//! The oracle integrates on a uniform grid with trapezoidal weights
//! (spectrally accurate for Gaussians), independently of the analytic
//! expressions in the basis module.

use nalgebra::Vector3;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use denopt_core::basis::{density_at_point, density_l2_error, overlap_matrix, BasisSet};
use denopt_core::Vector;

const GRID_STEP: f64 = 0.2;
const GRID_PAD: f64 = 7.0;

/// Trapezoid-summed integral of `f` over a box padded around the points.
fn grid_integral(centers: &[Vector3<f64>], f: impl Fn(&Vector3<f64>) -> f64) -> f64 {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for c in centers {
        lo = lo.inf(c);
        hi = hi.sup(c);
    }
    let lo = lo.map(|x| x - GRID_PAD);
    let hi = hi.map(|x| x + GRID_PAD);
    let steps: Vec<usize> = (0..3)
        .map(|k| ((hi[k] - lo[k]) / GRID_STEP).ceil() as usize + 1)
        .collect();
    let mut total = 0.0;
    for i in 0..steps[0] {
        let x = lo.x + i as f64 * GRID_STEP;
        for j in 0..steps[1] {
            let y = lo.y + j as f64 * GRID_STEP;
            for k in 0..steps[2] {
                let z = lo.z + k as f64 * GRID_STEP;
                total += f(&Vector3::new(x, y, z));
            }
        }
    }
    total * GRID_STEP.powi(3)
}

fn random_basis(rng: &mut StdRng, n: usize) -> BasisSet {
    let centers: Vec<Vector3<f64>> = (0..n)
        .map(|_| {
            Vector3::new(
                rng.random_range(-1.5..1.5),
                rng.random_range(-1.5..1.5),
                rng.random_range(-1.5..1.5),
            )
        })
        .collect();
    let exponents: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..3.0)).collect();
    BasisSet::new(centers, exponents).unwrap()
}

fn basis_value(basis: &BasisSet, mu: usize, r: &Vector3<f64>) -> f64 {
    let mut p = Vector::zeros(basis.len());
    p[mu] = 1.0;
    density_at_point(&p, basis, r)
}

#[test]
fn overlap_matrix_matches_grid_quadrature() {
    let mut rng = StdRng::seed_from_u64(2024);
    for _ in 0..3 {
        let basis = random_basis(&mut rng, 5);
        let s = overlap_matrix(&basis);
        for a in 0..5 {
            for b in a..5 {
                let numeric = grid_integral(basis.centers(), |r| {
                    basis_value(&basis, a, r) * basis_value(&basis, b, r)
                });
                let analytic = s.matrix()[(a, b)];
                assert!(
                    (numeric - analytic).abs() < 1e-6,
                    "S[{a},{b}]: quadrature {numeric} vs closed form {analytic}"
                );
            }
        }
    }
}

#[test]
fn pair_overlap_at_unit_distance_matches_quadrature() {
    // The frozen expected value 0.60653 for two unit-exponent functions
    // one bohr apart, recomputed by the oracle.
    let basis = BasisSet::new(
        vec![Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0)],
        vec![1.0, 1.0],
    )
    .unwrap();
    let numeric = grid_integral(basis.centers(), |r| {
        basis_value(&basis, 0, r) * basis_value(&basis, 1, r)
    });
    assert!((numeric - 0.6065306597126334).abs() < 1e-8);
    assert!((numeric - overlap_matrix(&basis).matrix()[(0, 1)]).abs() < 1e-8);
}

#[test]
fn density_l2_error_matches_grid_quadrature() {
    let mut rng = StdRng::seed_from_u64(4);
    let basis = random_basis(&mut rng, 4);
    let s = overlap_matrix(&basis);
    let dp = Vector::from_vec(vec![0.7, -0.3, 0.2, -0.5]);
    let numeric = grid_integral(basis.centers(), |r| {
        let v = density_at_point(&dp, &basis, r);
        v * v
    })
    .sqrt();
    let analytic = density_l2_error(&dp, &s);
    assert!(
        (numeric - analytic).abs() < 1e-6,
        "quadrature {numeric} vs quadratic form {analytic}"
    );
}
