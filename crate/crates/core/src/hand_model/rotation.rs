//! Axis-angle / rotation-matrix utilities.
//!
//! Derivatives of the exponential map are written against the series form
//! `R = I + a(θ)[v]ₓ + b(θ)[v]ₓ²`, which stays accurate near `θ = 0`.

use nalgebra::{Matrix3, Vector3};

use crate::error::{HaoiError, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Below this angle the trigonometric coefficients switch to their Taylor series.
const SERIES_THRESHOLD: f64 = 0.05;

/// Tolerance used when checking that a matrix is a proper rotation.
pub const ORTHONORMAL_TOL: f64 = 1e-6;

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Coefficients of the exponential map and of their derivatives with respect to θ.
///
/// `a = sinθ/θ`, `b = (1 − cosθ)/θ²`, `c = a'/θ`, `d = b'/θ`.
struct ExpCoefficients {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
}

fn exp_coefficients(theta: f64) -> ExpCoefficients {
    let t2 = theta * theta;
    if theta < SERIES_THRESHOLD {
        let t4 = t2 * t2;
        let t6 = t4 * t2;
        ExpCoefficients {
            a: 1.0 - t2 / 6.0 + t4 / 120.0 - t6 / 5040.0,
            b: 0.5 - t2 / 24.0 + t4 / 720.0 - t6 / 40320.0,
            c: -1.0 / 3.0 + t2 / 30.0 - t4 / 840.0 + t6 / 45360.0,
            d: -1.0 / 12.0 + t2 / 180.0 - t4 / 6720.0 + t6 / 453600.0,
        }
    } else {
        let (s, co) = theta.sin_cos();
        let half = (0.5 * theta).sin();
        let one_minus_cos = 2.0 * half * half;
        ExpCoefficients {
            a: s / theta,
            b: one_minus_cos / t2,
            c: (theta * co - s) / (t2 * theta),
            d: (theta * s - 2.0 * one_minus_cos) / (t2 * t2),
        }
    }
}

/// Rodrigues formula: axis-angle vector to rotation matrix.
pub fn rodrigues(v: &Vec3) -> Mat3 {
    let k = exp_coefficients(v.norm());
    let s = skew(v);
    Mat3::identity() + s * k.a + s * s * k.b
}

/// Partial derivatives `∂R/∂v_i` for `i = 0, 1, 2`.
pub fn rodrigues_derivatives(v: &Vec3) -> [Mat3; 3] {
    let k = exp_coefficients(v.norm());
    let s = skew(v);
    let s2 = s * s;
    std::array::from_fn(|i| {
        let e = skew(&Vec3::ith(i, 1.0));
        e * k.a + s * (k.c * v[i]) + (e * s + s * e) * k.b + s2 * (k.d * v[i])
    })
}

/// Pulls a gradient with respect to `rodrigues(v)` back to `v`.
pub fn rodrigues_vjp(v: &Vec3, grad_matrix: &Mat3) -> Vec3 {
    let d = rodrigues_derivatives(v);
    Vec3::new(
        grad_matrix.component_mul(&d[0]).sum(),
        grad_matrix.component_mul(&d[1]).sum(),
        grad_matrix.component_mul(&d[2]).sum(),
    )
}

/// Logarithm map with the angle canonicalized to `[0, π]`.
pub fn rotation_to_axis_angle(m: &Mat3) -> Vec3 {
    let w = 0.5 * Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    let cos = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let sin = w.norm();
    let theta = sin.atan2(cos);
    if theta < 1e-12 {
        return w;
    }
    if cos > -0.99 {
        return w * (theta / sin);
    }
    // Near π the antisymmetric part vanishes; read the axis from the symmetric part.
    let sym = (m + m.transpose()) * 0.5;
    let diag = Vec3::new(sym[(0, 0)], sym[(1, 1)], sym[(2, 2)]);
    let i = diag.imax();
    let mut axis = (sym.column(i) - Vec3::ith(i, cos)) / (1.0 - cos);
    axis /= axis.norm();
    if axis.dot(&w) < 0.0 {
        axis = -axis;
    }
    if w.norm() < 1e-15 {
        // Exactly π: both signs describe the same rotation; prefer a positive leading component.
        if let Some(first) = axis.iter().copied().find(|c| c.abs() > 1e-12) {
            if first < 0.0 {
                axis = -axis;
            }
        }
    }
    axis * theta
}

pub fn check_rotation(m: &Mat3) -> Result<()> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(HaoiError::validation("rotation matrix has non-finite entries"));
    }
    let err = (m.transpose() * m - Mat3::identity()).abs().max();
    if err > ORTHONORMAL_TOL || m.determinant() <= 0.0 {
        return Err(HaoiError::validation(format!(
            "matrix is not a proper rotation (orthonormality error {err:.3e}, det {:.6})",
            m.determinant()
        )));
    }
    Ok(())
}

/// Geodesic distance between two rotations, in degrees.
pub fn geodesic_angle_deg(a: &Mat3, b: &Mat3) -> Result<f64> {
    check_rotation(a)?;
    check_rotation(b)?;
    Ok(geodesic_angle_deg_unchecked(a, b))
}

/// `atan2(sin θ, cos θ)` of the relative rotation, accurate near 0° and 180°.
pub(crate) fn geodesic_angle_deg_unchecked(a: &Mat3, b: &Mat3) -> f64 {
    let m = a * b.transpose();
    let sin = Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]).norm() * 0.5;
    let cos = (m.trace() - 1.0) * 0.5;
    sin.atan2(cos).to_degrees()
}

/// Value and gradients (with respect to each matrix) of [`geodesic_angle_deg`].
///
/// The gradient is set to zero where the angle is within rounding of 0° or 180°.
pub(crate) fn geodesic_angle_deg_grad(a: &Mat3, b: &Mat3) -> (f64, Mat3, Mat3) {
    let raw = ((a * b.transpose()).trace() - 1.0) * 0.5;
    let x = raw.clamp(-1.0, 1.0);
    let value = geodesic_angle_deg_unchecked(a, b);
    let denom = 1.0 - x * x;
    if denom <= 1e-15 {
        return (value, Mat3::zeros(), Mat3::zeros());
    }
    // d(acos x)/dx · dx/dtrace, with dtrace/dA = B and dtrace/dB = A.
    let scale = -(180.0 / std::f64::consts::PI) / denom.sqrt() * 0.5;
    (value, b * scale, a * scale)
}

/// `rodrigues(result) = rodrigues(delta) · rodrigues(base)`, angle in `[0, π]`.
pub fn compose_rotation(delta: &Vec3, base: &Vec3) -> Result<Vec3> {
    if delta.iter().chain(base.iter()).any(|x| !x.is_finite()) {
        return Err(HaoiError::validation("compose_rotation: non-finite input"));
    }
    Ok(rotation_to_axis_angle(&(rodrigues(delta) * rodrigues(base))))
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{FRAC_PI_2, PI};

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_axis_angle(rng: &mut ChaCha8Rng, max_angle: f64) -> Vec3 {
        let axis = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalize();
        axis * rng.random_range(0.0..max_angle)
    }

    #[test]
    fn zero_maps_to_identity() {
        assert_eq!(rodrigues(&Vec3::zeros()), Mat3::identity());
    }

    #[test]
    fn quarter_turn_about_z() {
        let r = rodrigues(&Vec3::new(0.0, 0.0, FRAC_PI_2));
        let x = r * Vec3::x();
        assert!((x - Vec3::y()).norm() < 1e-15);
    }

    #[test]
    fn inverse_composes_to_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let v = random_axis_angle(&mut rng, PI);
            let err = (rodrigues(&v) * rodrigues(&-v) - Mat3::identity()).abs().max();
            assert!(err < 1e-10);
        }
    }

    #[test]
    fn orthonormal_and_unit_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let v = random_axis_angle(&mut rng, 3.0 * PI);
            let r = rodrigues(&v);
            assert!((r.transpose() * r - Mat3::identity()).abs().max() < 1e-9);
            assert!((r.determinant() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut samples: Vec<Vec3> = (0..50).map(|_| random_axis_angle(&mut rng, 3.0)).collect();
        samples.push(Vec3::new(1e-4, -2e-4, 3e-5));
        samples.push(Vec3::new(0.03, 0.02, -0.01));
        samples.push(Vec3::zeros());
        let h = 1e-6;
        for v in samples {
            let d = rodrigues_derivatives(&v);
            for (i, di) in d.iter().enumerate() {
                let e = Vec3::ith(i, h);
                let fd = (rodrigues(&(v + e)) - rodrigues(&(v - e))) / (2.0 * h);
                assert!((fd - di).abs().max() < 1e-8, "v={v:?} i={i}");
            }
        }
    }

    #[test]
    fn log_inverts_exp() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let v = random_axis_angle(&mut rng, PI - 1e-9);
            let back = rotation_to_axis_angle(&rodrigues(&v));
            assert!((back - v).norm() < 1e-8, "{v:?} -> {back:?}");
        }
        for angle in [PI - 1e-7, PI - 1e-3, 0.999 * PI] {
            let v = Vec3::new(0.3, -0.5, 0.8).normalize() * angle;
            let back = rotation_to_axis_angle(&rodrigues(&v));
            assert!((rodrigues(&back) - rodrigues(&v)).abs().max() < 1e-9);
        }
    }

    #[test]
    fn log_of_half_turn_has_angle_pi() {
        let v = Vec3::new(0.0, 0.0, PI);
        let back = rotation_to_axis_angle(&rodrigues(&v));
        assert!((back.norm() - PI).abs() < 1e-12);
        assert!((rodrigues(&back) - rodrigues(&v)).abs().max() < 1e-12);
    }

    #[test]
    fn geodesic_examples() {
        let i = Mat3::identity();
        assert_eq!(geodesic_angle_deg(&i, &i).unwrap(), 0.0);
        let axis = Vec3::new(1.0, 2.0, -0.5).normalize();
        for theta in [0.1, 1.0, 2.5, PI] {
            let r = rodrigues(&(axis * theta));
            let got = geodesic_angle_deg(&i, &r).unwrap();
            assert!((got - theta.to_degrees()).abs() < 1e-6, "{theta}");
        }
    }

    #[test]
    fn geodesic_is_symmetric_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let a = rodrigues(&random_axis_angle(&mut rng, 4.0));
            let b = rodrigues(&random_axis_angle(&mut rng, 4.0));
            let ab = geodesic_angle_deg(&a, &b).unwrap();
            let ba = geodesic_angle_deg(&b, &a).unwrap();
            assert_eq!(ab, ba);
            assert!((0.0..=180.0).contains(&ab));
        }
    }

    #[test]
    fn geodesic_rejects_non_rotation() {
        let m = Mat3::identity() * 2.0;
        assert!(geodesic_angle_deg(&m, &Mat3::identity()).is_err());
        let reflection = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(geodesic_angle_deg(&reflection, &Mat3::identity()).is_err());
    }

    #[test]
    fn geodesic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h = 1e-6;
        for _ in 0..20 {
            let va = random_axis_angle(&mut rng, 2.5);
            let vb = random_axis_angle(&mut rng, 2.5);
            let (_, ga, gb) = geodesic_angle_deg_grad(&rodrigues(&va), &rodrigues(&vb));
            let grad_va = rodrigues_vjp(&va, &ga);
            let grad_vb = rodrigues_vjp(&vb, &gb);
            for i in 0..3 {
                let e = Vec3::ith(i, h);
                let f = |a: Vec3, b: Vec3| geodesic_angle_deg_unchecked(&rodrigues(&a), &rodrigues(&b));
                let fda = (f(va + e, vb) - f(va - e, vb)) / (2.0 * h);
                let fdb = (f(va, vb + e) - f(va, vb - e)) / (2.0 * h);
                assert!((fda - grad_va[i]).abs() < 1e-5 * (1.0 + fda.abs()));
                assert!((fdb - grad_vb[i]).abs() < 1e-5 * (1.0 + fdb.abs()));
            }
        }
    }

    #[test]
    fn compose_examples() {
        let base = Vec3::new(0.2, -0.4, 0.1);
        let out = compose_rotation(&Vec3::zeros(), &base).unwrap();
        assert!((out - base).norm() < 1e-12);

        let axis = Vec3::new(0.0, 1.0, 1.0).normalize();
        let out = compose_rotation(&(axis * 0.7), &(axis * 1.1)).unwrap();
        assert!((out - axis * 1.8).norm() < 1e-12);

        // Wraps past π onto the opposite axis.
        let out = compose_rotation(&(axis * 2.0), &(axis * 2.0)).unwrap();
        assert!((out - (-axis) * (2.0 * PI - 4.0)).norm() < 1e-10);
    }

    #[test]
    fn compose_matches_matrix_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let d = random_axis_angle(&mut rng, 3.0);
            let b = random_axis_angle(&mut rng, 3.0);
            let r = compose_rotation(&d, &b).unwrap();
            assert!(r.norm() <= PI + 1e-12);
            let err = (rodrigues(&r) - rodrigues(&d) * rodrigues(&b)).abs().max();
            assert!(err < 1e-8);
        }
    }
}
