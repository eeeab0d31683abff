//! Spherical Gaussian measurement noise and its image in Cartesian space.
//!
//! A radar detection `(ρ, θ, φ)` is perturbed by independent zero-mean
//! Gaussian noise on each coordinate. Pushing that noise through the
//! spherical-to-Cartesian map produces a point whose error has a non-zero
//! mean (the angular terms shrink the point towards the origin) and a
//! covariance given to first order by `J Σ_S Jᵀ`.

use nalgebra::{Cholesky, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SphericalPoint;

/// Standard deviations of the noise on range (m), elevation and azimuth (rad).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    sigma_range: f64,
    sigma_theta: f64,
    sigma_phi: f64,
}

impl NoiseSpec {
    pub fn new(sigma_range: f64, sigma_theta: f64, sigma_phi: f64) -> Result<Self> {
        for (name, v) in [
            ("sigma_range", sigma_range),
            ("sigma_theta", sigma_theta),
            ("sigma_phi", sigma_phi),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Domain(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(Self {
            sigma_range,
            sigma_theta,
            sigma_phi,
        })
    }

    /// Noise-free measurements.
    pub fn zero() -> Self {
        Self {
            sigma_range: 0.0,
            sigma_theta: 0.0,
            sigma_phi: 0.0,
        }
    }

    pub fn sigma_range(&self) -> f64 {
        self.sigma_range
    }

    pub fn sigma_theta(&self) -> f64 {
        self.sigma_theta
    }

    pub fn sigma_phi(&self) -> f64 {
        self.sigma_phi
    }

    /// `diag(σ_ρ², σ_θ², σ_φ²)`.
    pub fn spherical_covariance(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::new(
            self.sigma_range.powi(2),
            self.sigma_theta.powi(2),
            self.sigma_phi.powi(2),
        ))
    }
}

/// Moments of `cos δ`, `cos² δ`, `sin² δ` for `δ ~ N(0, σ²)`.
///
/// `E[sin δ]` and `E[sin δ cos δ]` vanish by symmetry and are not stored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrigMoments {
    pub e_cos: f64,
    pub e_cos2: f64,
    pub e_sin2: f64,
}

pub fn trig_moments(sigma: f64) -> Result<TrigMoments> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::Domain(format!("sigma must be >= 0, got {sigma}")));
    }
    let s2 = sigma * sigma;
    let e2 = (-2.0 * s2).exp();
    let e_cos2 = 0.5 * (1.0 + e2);
    Ok(TrigMoments {
        e_cos: (-0.5 * s2).exp(),
        e_cos2,
        e_sin2: 1.0 - e_cos2,
    })
}

/// Per-axis shrink factors `(κ, κ, κ_z)` with `κ = exp(-(σ_θ² + σ_φ²)/2)`
/// and `κ_z = exp(-σ_θ²/2)`: the expected noisy point is `diag(κ, κ, κ_z) p`.
pub fn shrink_factors(noise: &NoiseSpec) -> Vector3<f64> {
    let st2 = noise.sigma_theta.powi(2);
    let sp2 = noise.sigma_phi.powi(2);
    let k = (-0.5 * (st2 + sp2)).exp();
    Vector3::new(k, k, (-0.5 * st2).exp())
}

/// Expected Cartesian error `E[p̃ - p]` of a noisy conversion of `p`.
///
/// Range noise enters linearly and contributes nothing; only the angular
/// noise biases the point.
pub fn bias_expectation(p: &SphericalPoint, noise: &NoiseSpec) -> Vector3<f64> {
    let (st, ct) = p.elevation().sin_cos();
    let (sp, cp) = p.azimuth().sin_cos();
    let r = p.range();
    // exp_m1 keeps the tiny factors accurate at radar-scale sigmas.
    let st2 = noise.sigma_theta.powi(2);
    let sp2 = noise.sigma_phi.powi(2);
    let kxy = (-0.5 * (st2 + sp2)).exp_m1();
    let kz = (-0.5 * st2).exp_m1();
    Vector3::new(r * st * cp * kxy, r * st * sp * kxy, r * ct * kz)
}

/// Jacobian of the spherical-to-Cartesian map; columns are `∂/∂ρ, ∂/∂θ, ∂/∂φ`.
pub fn spherical_jacobian(p: &SphericalPoint) -> Matrix3<f64> {
    let (st, ct) = p.elevation().sin_cos();
    let (sp, cp) = p.azimuth().sin_cos();
    let r = p.range();
    Matrix3::new(
        st * cp,
        r * ct * cp,
        -r * st * sp, //
        st * sp,
        r * ct * sp,
        r * st * cp, //
        ct,
        -r * st,
        0.0,
    )
}

/// Mean offset and first-order covariance of a noisy Cartesian point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartesianNoise {
    pub bias: Vector3<f64>,
    pub covariance: Matrix3<f64>,
}

pub fn propagate_covariance(p: &SphericalPoint, noise: &NoiseSpec) -> CartesianNoise {
    let j = spherical_jacobian(p);
    let cov = j * noise.spherical_covariance() * j.transpose();
    CartesianNoise {
        bias: bias_expectation(p, noise),
        // Symmetrize away rounding asymmetry from the triple product.
        covariance: 0.5 * (cov + cov.transpose()),
    }
}

/// Ridge added to a covariance before inversion: `max(1e-12, 1e-9 · tr Σ)`.
pub fn regularization(cov: &Matrix3<f64>) -> f64 {
    (1e-9 * cov.trace()).max(1e-12)
}

/// `(Σ + λI)⁻¹` with `λ` from [`regularization`]; always SPD for PSD input.
pub fn regularized_weight(cov: &Matrix3<f64>) -> Matrix3<f64> {
    let lambda = regularization(cov);
    let reg = cov + Matrix3::identity() * lambda;
    let chol = Cholesky::new(0.5 * (reg + reg.transpose()))
        .expect("a PSD matrix plus a positive ridge is positive definite");
    let inv = chol.inverse();
    0.5 * (inv + inv.transpose())
}

/// Upper-triangular `L` with `LᵀL = regularized_weight(cov)`, so that
/// `‖L r‖² = rᵀ (Σ + λI)⁻¹ r`.
pub fn whitening_factor(cov: &Matrix3<f64>) -> Matrix3<f64> {
    let w = regularized_weight(cov);
    let chol = Cholesky::new(w).expect("regularized weight is positive definite");
    chol.l().transpose()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::geometry::spherical_to_cartesian;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, FRAC_PI_4, PI, TAU};

    pub(crate) fn nominal_noise() -> NoiseSpec {
        NoiseSpec::new(0.02, 0.005, 0.005).unwrap()
    }

    /// Undoes the expected shrinkage by dividing each axis by its shrink
    /// factor. Agrees with `p + bias_expectation` at the true point.
    fn debias_multiplicative(noisy: &Vector3<f64>, noise: &NoiseSpec) -> Vector3<f64> {
        noisy.component_div(&shrink_factors(noise))
    }

    /// Sample mean and standard error of Cartesian error vectors for `draws`
    /// noisy conversions of `p`.
    fn mc_error_mean(
        p: &SphericalPoint,
        noise: &NoiseSpec,
        draws: usize,
        seed: u64,
    ) -> (Vector3<f64>, Vector3<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nr = Normal::new(0.0, noise.sigma_range()).unwrap();
        let nt = Normal::new(0.0, noise.sigma_theta()).unwrap();
        let np = Normal::new(0.0, noise.sigma_phi()).unwrap();
        let (r, t, f) = (p.range(), p.elevation(), p.azimuth());
        let truth = Vector3::new(r * t.sin() * f.cos(), r * t.sin() * f.sin(), r * t.cos());
        let mut sum = Vector3::zeros();
        let mut sum2 = Vector3::zeros();
        for _ in 0..draws {
            let rr = r + nr.sample(&mut rng);
            let tt = t + nt.sample(&mut rng);
            let ff = f + np.sample(&mut rng);
            let d = Vector3::new(
                rr * tt.sin() * ff.cos(),
                rr * tt.sin() * ff.sin(),
                rr * tt.cos(),
            ) - truth;
            sum += d;
            sum2 += d.component_mul(&d);
        }
        let n = draws as f64;
        let mean = sum / n;
        let var = (sum2 / n - mean.component_mul(&mean)) * (n / (n - 1.0));
        (mean, var.map(|v| (v / n).sqrt()))
    }

    #[test]
    fn trig_moments_no_noise() {
        let m = trig_moments(0.0).unwrap();
        assert_eq!((m.e_cos, m.e_cos2, m.e_sin2), (1.0, 1.0, 0.0));
        assert!(trig_moments(-0.1).is_err());
    }

    #[test]
    fn trig_moments_match_monte_carlo() {
        let sigma = 0.5;
        let m = trig_moments(sigma).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0x7416);
        let normal = Normal::new(0.0, sigma).unwrap();
        let n = 10_000_000usize;
        let mut acc = [0.0f64; 8];
        for _ in 0..n {
            let d: f64 = normal.sample(&mut rng);
            let (s, c) = d.sin_cos();
            let vals = [c, c * c, s * s, s];
            for (k, v) in vals.iter().enumerate() {
                acc[k] += v;
                acc[k + 4] += v * v;
            }
        }
        let nf = n as f64;
        let expected = [m.e_cos, m.e_cos2, m.e_sin2, 0.0];
        for k in 0..4 {
            let mean = acc[k] / nf;
            let se = ((acc[k + 4] / nf - mean * mean) / nf).sqrt();
            assert!(
                (mean - expected[k]).abs() < 3.0 * se,
                "moment {k}: mc {mean} vs {} (se {se})",
                expected[k]
            );
        }
    }

    #[test]
    fn trig_moment_identities() {
        let mut prev = 1.0;
        for i in 1..200 {
            let m = trig_moments(i as f64 * 0.01).unwrap();
            assert_eq!(m.e_cos2 + m.e_sin2, 1.0);
            assert!(m.e_cos < prev && m.e_cos > 0.0);
            assert!(m.e_cos2 >= m.e_cos * m.e_cos);
            prev = m.e_cos;
        }
    }

    #[test]
    fn bias_vanishes_without_angular_noise() {
        let p = SphericalPoint::new(7.0, 1.1, 0.4).unwrap();
        let noise = NoiseSpec::new(0.5, 0.0, 0.0).unwrap();
        assert_eq!(bias_expectation(&p, &noise), Vector3::zeros());
    }

    #[test]
    fn bias_on_axis_matches_closed_form_and_monte_carlo() {
        let p = SphericalPoint::new(10.0, FRAC_PI_2, 0.0).unwrap();
        let noise = NoiseSpec::new(0.0, 0.1, 0.1).unwrap();
        let b = bias_expectation(&p, &noise);
        assert_relative_eq!(b.x, 10.0 * ((-0.01f64).exp() - 1.0), max_relative = 1e-12);
        assert!(b.y.abs() < 1e-15 && b.z.abs() < 1e-15);
        let (mean, se) = mc_error_mean(&p, &noise, 10_000_000, 11);
        for k in 0..3 {
            assert!(
                (mean[k] - b[k]).abs() < 3.0 * se[k],
                "axis {k}: {mean} vs {b}"
            );
        }
    }

    #[test]
    fn bias_at_nominal_noise_matches_monte_carlo() {
        let p = SphericalPoint::new(5.0, FRAC_PI_4, FRAC_PI_3).unwrap();
        let noise = nominal_noise();
        let b = bias_expectation(&p, &noise);
        let (mean, se) = mc_error_mean(&p, &noise, 10_000_000, 12);
        for k in 0..3 {
            assert!(
                (mean[k] - b[k]).abs() < 3.0 * se[k],
                "axis {k}: {mean} vs {b}"
            );
        }
    }

    #[test]
    fn debiasing_recovers_the_true_point() {
        let p = SphericalPoint::new(8.0, 1.2, 5.9).unwrap();
        let noise = NoiseSpec::new(0.05, 0.03, 0.04).unwrap();
        let b = bias_expectation(&p, &noise);
        let (mean, se) = mc_error_mean(&p, &noise, 1_000_000, 13);
        // mean of (noisy - bias) - truth = mean error - bias
        for k in 0..3 {
            assert!((mean[k] - b[k]).abs() < 3.0 * se[k]);
        }
        // Multiplicative route: the expected noisy point divided by the
        // shrink factors is the truth, and agrees with the additive route.
        let truth = *spherical_to_cartesian(&p).coords();
        let expected_noisy = truth + b;
        assert_relative_eq!(
            debias_multiplicative(&expected_noisy, &noise),
            truth,
            max_relative = 1e-12
        );
    }

    #[test]
    fn jacobian_cases() {
        let j = spherical_jacobian(&SphericalPoint::new(1.0, FRAC_PI_2, 0.0).unwrap());
        let expected = Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, -1.0, 0.0);
        assert_relative_eq!(j, expected, epsilon = 1e-15);
        let j = spherical_jacobian(&SphericalPoint::new(3.0, 0.0, 2.0).unwrap());
        assert_eq!(j.column(2).norm(), 0.0);
    }

    #[test]
    fn covariance_cases() {
        let p = SphericalPoint::new(4.0, 0.7, 2.2).unwrap();
        let c = propagate_covariance(&p, &NoiseSpec::new(1.0, 0.0, 0.0).unwrap());
        let u = spherical_to_cartesian(&p).coords().normalize();
        assert_relative_eq!(c.covariance, u * u.transpose(), epsilon = 1e-14);
        let p = SphericalPoint::new(1.0, FRAC_PI_2, 0.0).unwrap();
        let c = propagate_covariance(&p, &NoiseSpec::new(1.0, 1.0, 1.0).unwrap());
        assert_relative_eq!(c.covariance, Matrix3::identity(), epsilon = 1e-14);
    }

    #[test]
    fn covariance_matches_sample_covariance_at_nominal_noise() {
        let p = SphericalPoint::new(9.0, 1.3, 0.35).unwrap();
        let noise = nominal_noise();
        let predicted = propagate_covariance(&p, &noise).covariance;
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let nr = Normal::new(0.0, noise.sigma_range()).unwrap();
        let na = Normal::new(0.0, noise.sigma_theta()).unwrap();
        let (r, t, f) = (p.range(), p.elevation(), p.azimuth());
        let n = 10_000_000usize;
        let mut s1 = Vector3::zeros();
        let mut s2 = Matrix3::zeros();
        for _ in 0..n {
            let rr = r + nr.sample(&mut rng);
            let tt = t + na.sample(&mut rng);
            let ff = f + na.sample(&mut rng);
            let x = Vector3::new(
                rr * tt.sin() * ff.cos() - r * t.sin() * f.cos(),
                rr * tt.sin() * ff.sin() - r * t.sin() * f.sin(),
                rr * tt.cos() - r * t.cos(),
            );
            s1 += x;
            s2 += x * x.transpose();
        }
        let nf = n as f64;
        let mean = s1 / nf;
        let sample = (s2 / nf - mean * mean.transpose()) * (nf / (nf - 1.0));
        let scale = predicted.symmetric_eigenvalues().max();
        let worst = (sample - predicted).abs().max() / scale;
        assert!(worst < 0.05, "relative deviation {worst}");
    }

    #[test]
    fn regularized_weight_cases() {
        let w = regularized_weight(&Matrix3::identity());
        assert_relative_eq!(w, Matrix3::identity(), max_relative = 1e-8);
        let u = Vector3::new(0.3, -0.5, 0.8).normalize();
        let w = regularized_weight(&(u * u.transpose()));
        assert!(w.iter().all(|v| v.is_finite()));
        assert!(w.symmetric_eigenvalues().min() > 0.0);
        let w = regularized_weight(&Matrix3::zeros());
        assert_relative_eq!(w, Matrix3::identity() * 1e12, max_relative = 1e-12);
    }

    #[test]
    fn regularized_weight_matches_direct_inverse_when_well_conditioned() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let normal = Normal::new(0.0, 1.0).unwrap();
        for _ in 0..200 {
            let a = Matrix3::from_fn(|_, _| normal.sample(&mut rng));
            let cov = a * a.transpose() + Matrix3::identity() * 0.1;
            let ev = cov.symmetric_eigenvalues();
            if ev.max() / ev.min() >= 1e6 {
                continue;
            }
            let direct = cov.try_inverse().unwrap();
            let w = regularized_weight(&cov);
            assert!((w - direct).norm() <= 1e-6 * direct.norm());
        }
    }

    #[test]
    fn whitening_factor_reproduces_quadratic_form() {
        let p = SphericalPoint::new(6.0, 1.0, 0.2).unwrap();
        let cov = propagate_covariance(&p, &nominal_noise()).covariance;
        let l = whitening_factor(&cov);
        assert_eq!(l[(1, 0)], 0.0);
        assert_eq!(l[(2, 0)], 0.0);
        assert_eq!(l[(2, 1)], 0.0);
        let r = Vector3::new(0.01, -0.03, 0.02);
        let w = regularized_weight(&cov);
        assert_relative_eq!(
            (l * r).norm_squared(),
            (r.transpose() * w * r)[0],
            max_relative = 1e-9
        );
    }

    fn arb_point() -> impl Strategy<Value = SphericalPoint> {
        (0.1..50.0f64, 0.0..PI, 0.0..TAU)
            .prop_map(|(r, t, p)| SphericalPoint::new(r, t, p).unwrap())
    }

    fn arb_noise() -> impl Strategy<Value = NoiseSpec> {
        (0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64)
            .prop_map(|(a, b, c)| NoiseSpec::new(a, b, c).unwrap())
    }

    proptest! {
        #[test]
        fn bias_shrinks_points(p in arb_point(), noise in arb_noise()) {
            let c = *spherical_to_cartesian(&p).coords();
            let shifted = c + bias_expectation(&p, &noise);
            prop_assert!(shifted.norm() <= c.norm() * (1.0 + 1e-15));
            let f = shrink_factors(&noise);
            prop_assert!(f.iter().all(|&k| k > 0.0 && k <= 1.0));
        }

        #[test]
        fn jacobian_matches_finite_differences(p in arb_point()) {
            let j = spherical_jacobian(&p);
            let h = 1e-6;
            let f = |r: f64, t: f64, a: f64| {
                Vector3::new(r * t.sin() * a.cos(), r * t.sin() * a.sin(), r * t.cos())
            };
            let (r, t, a) = (p.range(), p.elevation(), p.azimuth());
            let cols = [
                (f(r + h, t, a) - f(r - h, t, a)) / (2.0 * h),
                (f(r, t + h, a) - f(r, t - h, a)) / (2.0 * h),
                (f(r, t, a + h) - f(r, t, a - h)) / (2.0 * h),
            ];
            for (k, col) in cols.iter().enumerate() {
                let diff = (j.column(k) - col).norm();
                prop_assert!(diff <= 1e-6 * (1.0 + col.norm()), "column {}: {}", k, diff);
            }
        }

        #[test]
        fn covariance_is_symmetric_psd(p in arb_point(), noise in arb_noise()) {
            let c = propagate_covariance(&p, &noise).covariance;
            prop_assert!((c - c.transpose()).abs().max() <= 1e-12 * c.abs().max().max(1.0));
            let ev = c.symmetric_eigenvalues();
            prop_assert!(ev.min() >= -1e-12 * ev.max().max(1.0));
        }
    }
}
