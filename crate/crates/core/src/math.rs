//! SPH kernels and the small dense tensor algebra shared by every solver stage.

use std::f64::consts::PI;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::error::MathError;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Relative floor on the smallest singular value accepted by [`polar_rotation`].
pub const SINGULAR_VALUE_FLOOR: f64 = 1e-8;

/// Cubic spline smoothing kernel with compact support radius `h`.
///
/// The kernel is written in terms of `q = r / h` so that it vanishes at
/// `q = 1`; the normalization constants make it integrate to one over the
/// support ball in 2D and 3D.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Kernel {
    support: f64,
    dim: usize,
    norm: f64,
    grad_norm: f64,
}

impl Kernel {
    pub fn new(support_radius: f64, dim: usize) -> Result<Self, MathError> {
        if !(support_radius > 0.0 && support_radius.is_finite()) {
            return Err(MathError::InvalidKernel(format!(
                "support radius must be positive and finite, got {support_radius}"
            )));
        }
        let h = support_radius;
        let (norm, grad_norm) = match dim {
            2 => (40.0 / (7.0 * PI * h * h), 240.0 / (7.0 * PI * h * h)),
            3 => (8.0 / (PI * h * h * h), 48.0 / (PI * h * h * h)),
            _ => {
                return Err(MathError::InvalidKernel(format!(
                    "dimension must be 2 or 3, got {dim}"
                )))
            }
        };
        Ok(Self {
            support: h,
            dim,
            norm,
            grad_norm,
        })
    }

    /// Three-dimensional kernel, the configuration the engine runs with.
    pub fn cubic_3d(support_radius: f64) -> Result<Self, MathError> {
        Self::new(support_radius, 3)
    }

    pub fn support_radius(&self) -> f64 {
        self.support
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `W(r)`; zero for `r >= h`.
    pub fn value(&self, r: f64) -> f64 {
        let q = r / self.support;
        if q >= 1.0 {
            0.0
        } else if q <= 0.5 {
            self.norm * (6.0 * q * q * q - 6.0 * q * q + 1.0)
        } else {
            let t = 1.0 - q;
            self.norm * 2.0 * t * t * t
        }
    }

    /// `W(0)`, the self contribution to density sums.
    pub fn value_at_zero(&self) -> f64 {
        self.norm
    }

    /// Radial derivative `dW/dr`.
    pub fn derivative(&self, r: f64) -> f64 {
        let q = r / self.support;
        if q >= 1.0 {
            0.0
        } else if q <= 0.5 {
            self.grad_norm * q * (3.0 * q - 2.0) / self.support
        } else {
            let t = 1.0 - q;
            -self.grad_norm * t * t / self.support
        }
    }

    /// `∇W(x_ij)` with respect to `x_i`. Antisymmetric in `x_ij`; the zero
    /// vector at `x_ij = 0` and outside the support.
    pub fn gradient(&self, xij: &Vec3) -> Vec3 {
        let r = xij.norm();
        if r <= 1e-12 * self.support || r >= self.support {
            return Vec3::zeros();
        }
        xij * (self.derivative(r) / r)
    }

    /// Scalar `g` with `∇W(x_ij) = g · x_ij`; non-positive.
    pub fn gradient_factor(&self, r: f64) -> f64 {
        if r <= 1e-12 * self.support || r >= self.support {
            0.0
        } else {
            self.derivative(r) / r
        }
    }
}

pub fn frobenius_norm(t: &Mat3) -> f64 {
    t.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `½(A + Aᵀ)`.
pub fn symmetric_part(a: &Mat3) -> Mat3 {
    (a + a.transpose()) * 0.5
}

pub fn is_finite_vec(v: &Vec3) -> bool {
    v.iter().all(|c| c.is_finite())
}

/// Rotation factor `R` of the polar decomposition `A = R S` with
/// `S = sqrt(AᵀA)`.
///
/// `S⁻¹` is assembled from the eigen-decomposition of `AᵀA`. When `A` is a
/// reflection-containing map the axis with the smallest stretch is flipped so
/// that `det R = +1`.
pub fn polar_rotation(a: &Mat3) -> Result<Mat3, MathError> {
    if !a.iter().all(|v| v.is_finite()) {
        return Err(MathError::DegenerateDeformation {
            smallest: f64::NAN,
            largest: f64::NAN,
        });
    }
    let ata = a.transpose() * a;
    let eig = SymmetricEigen::new(ata);
    let sigma: Vec3 = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let largest = sigma.max();
    let smallest = sigma.min();
    if !(largest > 0.0) || smallest < SINGULAR_VALUE_FLOOR * largest {
        return Err(MathError::DegenerateDeformation { smallest, largest });
    }
    let v = eig.eigenvectors;
    let mut inv = Vec3::new(1.0 / sigma[0], 1.0 / sigma[1], 1.0 / sigma[2]);
    if a.determinant() < 0.0 {
        inv[sigma.imin()] *= -1.0;
    }
    let s_inv = v * Mat3::from_diagonal(&inv) * v.transpose();
    let r = a * s_inv;
    // One Newton polar step cleans up the orthogonality lost when AᵀA is
    // moderately ill-conditioned.
    let r = match r.try_inverse() {
        Some(inv) => (r + inv.transpose()) * 0.5,
        None => r,
    };
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{Rotation3, Unit};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rotation(rng: &mut ChaCha8Rng) -> Mat3 {
        let axis = Unit::new_normalize(Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ));
        Rotation3::from_axis_angle(&axis, rng.random_range(-3.0..3.0)).into_inner()
    }

    /// Polar factor via SVD: `R = U Vᵀ` with the reflection fix applied to
    /// the smallest singular direction.
    fn svd_polar(a: &Mat3) -> Mat3 {
        let svd = a.svd(true, true);
        let u = svd.u.unwrap();
        let vt = svd.v_t.unwrap();
        let mut d = Mat3::identity();
        if (u * vt).determinant() < 0.0 {
            let k = svd.singular_values.imin();
            d[(k, k)] = -1.0;
        }
        u * d * vt
    }

    #[test]
    fn kernel_vanishes_on_and_beyond_support() {
        for h in [0.1, 1.0, 2.5] {
            let k = Kernel::cubic_3d(h).unwrap();
            assert_eq!(k.value(h), 0.0);
            assert_eq!(k.value(2.0 * h), 0.0);
            assert_eq!(k.gradient(&Vec3::new(h, 0.0, 0.0)), Vec3::zeros());
            assert_eq!(k.gradient(&Vec3::new(0.0, 1.5 * h, 0.0)), Vec3::zeros());
        }
    }

    #[test]
    fn kernel_rejects_bad_spec() {
        assert!(Kernel::new(0.0, 3).is_err());
        assert!(Kernel::new(-1.0, 3).is_err());
        assert!(Kernel::new(1.0, 1).is_err());
        assert!(Kernel::new(f64::NAN, 2).is_err());
    }

    #[test]
    fn kernel_integrates_to_one() {
        // Midpoint quadrature over the radial coordinate.
        for (dim, h) in [(3usize, 0.7), (2, 1.3)] {
            let k = Kernel::new(h, dim).unwrap();
            let n = 200_000;
            let dr = h / n as f64;
            let integral: f64 = (0..n)
                .map(|i| {
                    let r = (i as f64 + 0.5) * dr;
                    let shell = if dim == 3 { 4.0 * PI * r * r } else { 2.0 * PI * r };
                    k.value(r) * shell * dr
                })
                .sum();
            assert!((integral - 1.0).abs() < 1e-3, "dim {dim}: {integral}");
        }
    }

    #[test]
    fn kernel_is_continuous_and_monotone() {
        let k = Kernel::cubic_3d(1.0).unwrap();
        let mut prev = k.value(0.0);
        for i in 1..=10_000 {
            let r = i as f64 * 1e-4;
            let w = k.value(r);
            assert!(w <= prev + 1e-12);
            assert!((w - prev).abs() < 1e-2 * k.value_at_zero());
            prev = w;
        }
        assert_relative_eq!(k.value(0.5 - 1e-12), k.value(0.5 + 1e-12), epsilon = 1e-9);
    }

    #[test]
    fn gradient_matches_central_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for dim in [2usize, 3] {
            let h = 0.8;
            let k = Kernel::new(h, dim).unwrap();
            let mut radii: Vec<f64> = (0..100).map(|_| rng.random_range(0.02 * h..0.98 * h)).collect();
            radii.push(0.5 * h);
            for r in radii {
                let dir = Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
                .normalize();
                let eps = 1e-6 * h;
                let fd = (k.value(r + eps) - k.value(r - eps)) / (2.0 * eps);
                let grad = k.gradient(&(dir * r));
                let along = grad.dot(&dir);
                assert!(
                    (along - fd).abs() <= 1e-6 * fd.abs().max(1e-3 * k.grad_norm / h),
                    "r={r} analytic={along} fd={fd}"
                );
                // parallel to x_ij
                assert!((grad - dir * along).norm() <= 1e-12 * grad.norm().max(1.0));
            }
        }
    }

    #[test]
    fn gradient_is_antisymmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = Kernel::cubic_3d(1.0).unwrap();
        for _ in 0..1000 {
            let p = Vec3::new(
                rng.random_range(-0.6..0.6),
                rng.random_range(-0.6..0.6),
                rng.random_range(-0.6..0.6),
            );
            assert_eq!(k.gradient(&p) + k.gradient(&-p), Vec3::zeros());
        }
        assert_eq!(k.gradient(&Vec3::zeros()), Vec3::zeros());
    }

    #[test]
    fn frobenius_examples() {
        assert_eq!(frobenius_norm(&Mat3::zeros()), 0.0);
        assert_relative_eq!(frobenius_norm(&Mat3::identity()), 3f64.sqrt());
        let m = Mat3::new(1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0);
        let direct: f64 = (1..=9).map(|i| (i * i) as f64).sum();
        assert_eq!(direct, 285.0);
        assert_relative_eq!(frobenius_norm(&m), 285f64.sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn polar_of_identity_and_rotation() {
        let r = polar_rotation(&Mat3::identity()).unwrap();
        assert_relative_eq!(r, Mat3::identity(), epsilon = 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let q = random_rotation(&mut rng);
            assert_relative_eq!(polar_rotation(&q).unwrap(), q, epsilon = 1e-9);
        }
    }

    #[test]
    fn polar_of_stretched_rotation_matches_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let q = random_rotation(&mut rng);
            let a = q * Mat3::from_diagonal(&Vec3::new(2.0, 1.0, 1.0));
            let r = polar_rotation(&a).unwrap();
            assert_relative_eq!(r, svd_polar(&a), epsilon = 1e-6);
            assert_relative_eq!(r, q, epsilon = 1e-6);
            assert_relative_eq!(r.transpose() * r, Mat3::identity(), epsilon = 1e-6);
            assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn polar_handles_reflections() {
        let a = Mat3::from_diagonal(&Vec3::new(1.0, 2.0, -0.5));
        let r = polar_rotation(&a).unwrap();
        assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-9);
        assert_relative_eq!(r, svd_polar(&a), epsilon = 1e-9);
    }

    #[test]
    fn polar_rejects_collapsed_neighborhood() {
        let a = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, 1e-12));
        assert!(matches!(
            polar_rotation(&a),
            Err(MathError::DegenerateDeformation { .. })
        ));
        assert!(polar_rotation(&Mat3::zeros()).is_err());
        let rank_one = Vec3::new(1.0, 2.0, 3.0) * Vec3::new(0.5, 0.1, 0.0).transpose();
        assert!(polar_rotation(&rank_one).is_err());
    }

    #[test]
    fn polar_is_left_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let q = random_rotation(&mut rng);
            let p = Mat3::from_fn(|_, _| rng.random_range(-1.0..1.0)) + Mat3::identity() * 2.0;
            let lhs = polar_rotation(&(q * p)).unwrap();
            let rhs = q * polar_rotation(&p).unwrap();
            assert_relative_eq!(lhs, rhs, epsilon = 1e-6);
        }
    }

    proptest::proptest! {
        #[test]
        fn frobenius_triangle_inequality(
            a in proptest::collection::vec(-1e3f64..1e3, 9),
            b in proptest::collection::vec(-1e3f64..1e3, 9),
        ) {
            let a = Mat3::from_row_slice(&a);
            let b = Mat3::from_row_slice(&b);
            let lhs = frobenius_norm(&(a + b));
            proptest::prop_assert!(lhs <= frobenius_norm(&a) + frobenius_norm(&b) + 1e-9);
        }
    }
}
