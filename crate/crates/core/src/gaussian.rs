//! The 2D Gaussian primitive.
//!
//! A Gaussian lives directly in image coordinates. Its covariance is
//! `Σ = R S Sᵀ Rᵀ` with `R` a rotation by `theta` and `S = diag(exp(log_s))`,
//! and its unnormalized density at `x` is `exp(-½ (x-μ)ᵀ Σ⁻¹ (x-μ))`.

use crate::error::{Error, Result};

/// Row-major 2×2 matrix.
pub type Mat2 = [[f64; 2]; 2];

/// Squared Mahalanobis distance beyond which the renderer treats a density as zero.
pub const DEFAULT_CUTOFF_SQ: f64 = 18.0;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`sigmoid`]; `p` must lie in (0, 1).
#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// A single Gaussian, detached from its cloud.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian2D {
    pub mu: [f64; 2],
    pub theta: f64,
    pub log_s: [f64; 2],
    pub opacity_logit: f64,
    pub color: [f64; 3],
    pub order_key: f64,
}

impl Gaussian2D {
    /// Isotropic Gaussian at `mu` with scale `exp(log_s)` on both axes.
    pub fn isotropic(mu: [f64; 2], log_s: f64) -> Self {
        Self {
            mu,
            theta: 0.0,
            log_s: [log_s, log_s],
            opacity_logit: 0.0,
            color: [0.0; 3],
            order_key: 0.0,
        }
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn scales(&self) -> [f64; 2] {
        [self.log_s[0].exp(), self.log_s[1].exp()]
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("mu.x", self.mu[0]),
            ("mu.y", self.mu[1]),
            ("theta", self.theta),
            ("log_s.0", self.log_s[0]),
            ("log_s.1", self.log_s[1]),
            ("opacity_logit", self.opacity_logit),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} is not finite ({v})")));
            }
        }
        Ok(())
    }
}

/// `Σ = R S Sᵀ Rᵀ` for rotation angle `theta` and per-axis log scales.
pub fn build_covariance(theta: f64, log_s: [f64; 2]) -> Result<Mat2> {
    if !theta.is_finite() || !log_s.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "covariance needs finite inputs, got theta={theta}, log_s={log_s:?}"
        )));
    }
    let (sin, cos) = theta.sin_cos();
    let p = (2.0 * log_s[0]).exp();
    let q = (2.0 * log_s[1]).exp();
    let off = cos * sin * (p - q);
    Ok([[cos * cos * p + sin * sin * q, off], [off, sin * sin * p + cos * cos * q]])
}

/// Precision matrix `Σ⁻¹ = R S⁻² Rᵀ`, stored as its three distinct entries.
///
/// Built from the factors directly, so it never goes through a numeric inverse.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Conic {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Conic {
    pub fn new(theta: f64, log_s: [f64; 2]) -> Self {
        let (sin, cos) = theta.sin_cos();
        let p = (-2.0 * log_s[0]).exp();
        let q = (-2.0 * log_s[1]).exp();
        Conic {
            xx: cos * cos * p + sin * sin * q,
            xy: cos * sin * (p - q),
            yy: sin * sin * p + cos * cos * q,
        }
    }

    #[inline]
    pub fn mahalanobis_sq(&self, dx: f64, dy: f64) -> f64 {
        self.xx * dx * dx + 2.0 * self.xy * dx * dy + self.yy * dy * dy
    }

    /// Chain `dL/d(xx, xy, yy)` back to `dL/dtheta` and `dL/dlog_s`.
    pub fn backprop(theta: f64, log_s: [f64; 2], d_conic: [f64; 3]) -> (f64, [f64; 2]) {
        let (sin, cos) = theta.sin_cos();
        let p = (-2.0 * log_s[0]).exp();
        let q = (-2.0 * log_s[1]).exp();
        let [dxx, dxy, dyy] = d_conic;
        let diff = p - q;
        let d_theta = dxx * (-2.0 * cos * sin * diff)
            + dxy * ((cos * cos - sin * sin) * diff)
            + dyy * (2.0 * cos * sin * diff);
        let d_p = dxx * cos * cos + dxy * cos * sin + dyy * sin * sin;
        let d_q = dxx * sin * sin - dxy * cos * sin + dyy * cos * cos;
        (d_theta, [-2.0 * p * d_p, -2.0 * q * d_q])
    }
}

/// Unnormalized density of `g` at `x`; 1 at the mean.
pub fn eval_gaussian(g: &Gaussian2D, x: [f64; 2]) -> Result<f64> {
    g.validate()?;
    let conic = Conic::new(g.theta, g.log_s);
    let d2 = conic.mahalanobis_sq(x[0] - g.mu[0], x[1] - g.mu[1]);
    Ok((-0.5 * d2).exp())
}

/// Partial derivatives of [`eval_gaussian`] with respect to the shape parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DensityGrad {
    pub value: f64,
    pub d_mu: [f64; 2],
    pub d_theta: f64,
    pub d_log_s: [f64; 2],
}

pub fn eval_gaussian_grad(g: &Gaussian2D, x: [f64; 2]) -> Result<DensityGrad> {
    g.validate()?;
    let (sin, cos) = g.theta.sin_cos();
    let dx = x[0] - g.mu[0];
    let dy = x[1] - g.mu[1];
    // Offset in the Gaussian's principal frame, u = Rᵀ d.
    let u0 = cos * dx + sin * dy;
    let u1 = -sin * dx + cos * dy;
    let inv0 = (-2.0 * g.log_s[0]).exp();
    let inv1 = (-2.0 * g.log_s[1]).exp();
    let d2 = u0 * u0 * inv0 + u1 * u1 * inv1;
    let value = (-0.5 * d2).exp();

    // dG/dμ = G Σ⁻¹ d = G R (u0/s0², u1/s1²)
    let w0 = u0 * inv0;
    let w1 = u1 * inv1;
    let d_mu = [value * (cos * w0 - sin * w1), value * (sin * w0 + cos * w1)];
    let d_theta = -value * u0 * u1 * (inv0 - inv1);
    let d_log_s = [value * u0 * u0 * inv0, value * u1 * u1 * inv1];
    Ok(DensityGrad {
        value,
        d_mu,
        d_theta,
        d_log_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, LN_2};

    fn matmul(a: Mat2, b: Mat2) -> Mat2 {
        let mut out = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    out[i][j] += a[i][k] * b[k][j];
                }
            }
        }
        out
    }

    fn transpose(a: Mat2) -> Mat2 {
        [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
    }

    fn oracle_covariance(theta: f64, log_s: [f64; 2]) -> Mat2 {
        let r = [[theta.cos(), -theta.sin()], [theta.sin(), theta.cos()]];
        let s = [[log_s[0].exp(), 0.0], [0.0, log_s[1].exp()]];
        let rs = matmul(r, s);
        matmul(rs, transpose(rs))
    }

    fn oracle_inverse(m: Mat2) -> Mat2 {
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]]
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn covariance_identity() {
        let c = build_covariance(0.0, [0.0, 0.0]).unwrap();
        assert_eq!(c, [[1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn covariance_quarter_turn_swaps_axes() {
        let c = build_covariance(FRAC_PI_2, [LN_2, 0.0]).unwrap();
        assert!((c[0][0] - 1.0).abs() < 1e-12);
        assert!((c[1][1] - 4.0).abs() < 1e-12);
        assert!(c[0][1].abs() < 1e-12);
    }

    #[test]
    fn covariance_matches_matrix_product() {
        let c = build_covariance(0.3, [0.1, -0.2]).unwrap();
        let o = oracle_covariance(0.3, [0.1, -0.2]);
        for i in 0..2 {
            for j in 0..2 {
                assert!(close(c[i][j], o[i][j], 1e-12), "{c:?} vs {o:?}");
            }
        }
    }

    #[test]
    fn covariance_rejects_non_finite() {
        assert!(matches!(build_covariance(f64::NAN, [0.0, 0.0]), Err(Error::InvalidParameter(_))));
        assert!(build_covariance(0.0, [f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn density_at_mean_is_one() {
        let g = Gaussian2D::isotropic([3.0, -2.0], 0.7);
        assert_eq!(eval_gaussian(&g, [3.0, -2.0]).unwrap(), 1.0);
    }

    #[test]
    fn density_unit_distance() {
        let g = Gaussian2D::isotropic([0.0, 0.0], 0.0);
        let v = eval_gaussian(&g, [1.0, 0.0]).unwrap();
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
        assert!((v - 0.6065).abs() < 1e-4);
    }

    #[test]
    fn density_anisotropic_matches_explicit_inverse() {
        let g = Gaussian2D {
            theta: 0.3,
            log_s: [0.1, -0.2],
            ..Gaussian2D::isotropic([1.0, 2.0], 0.0)
        };
        let inv = oracle_inverse(oracle_covariance(0.3, [0.1, -0.2]));
        let d = [0.5, -0.7];
        let d2 = d[0] * (inv[0][0] * d[0] + inv[0][1] * d[1]) + d[1] * (inv[1][0] * d[0] + inv[1][1] * d[1]);
        let expected = (-0.5 * d2).exp();
        let got = eval_gaussian(&g, [1.5, 1.3]).unwrap();
        assert!(close(got, expected, 1e-12), "{got} vs {expected}");
    }

    #[test]
    fn grad_zero_at_mean() {
        let g = Gaussian2D {
            theta: 0.4,
            log_s: [0.3, -0.1],
            ..Gaussian2D::isotropic([1.0, 2.0], 0.0)
        };
        let gr = eval_gaussian_grad(&g, g.mu).unwrap();
        assert_eq!(gr.d_mu, [0.0, 0.0]);
    }

    #[test]
    fn grad_isotropic_unit_offset() {
        let g = Gaussian2D::isotropic([0.0, 0.0], 0.0);
        let gr = eval_gaussian_grad(&g, [1.0, 0.0]).unwrap();
        assert!((gr.d_mu[0] - (-0.5f64).exp()).abs() < 1e-15);
        assert!(gr.d_mu[1].abs() < 1e-15);
    }

    fn fd_check(g: Gaussian2D, x: [f64; 2]) {
        let h = 1e-4;
        let gr = eval_gaussian_grad(&g, x).unwrap();
        let f = |g: &Gaussian2D| eval_gaussian(g, x).unwrap();
        let central = |perturb: &dyn Fn(&mut Gaussian2D, f64)| {
            let mut p = g;
            perturb(&mut p, h);
            let mut m = g;
            perturb(&mut m, -h);
            (f(&p) - f(&m)) / (2.0 * h)
        };
        let checks = [
            (gr.d_mu[0], central(&|g, e| g.mu[0] += e)),
            (gr.d_mu[1], central(&|g, e| g.mu[1] += e)),
            (gr.d_theta, central(&|g, e| g.theta += e)),
            (gr.d_log_s[0], central(&|g, e| g.log_s[0] += e)),
            (gr.d_log_s[1], central(&|g, e| g.log_s[1] += e)),
        ];
        for (i, (analytic, numeric)) in checks.into_iter().enumerate() {
            let denom = analytic.abs().max(numeric.abs());
            if denom < 1e-9 {
                continue;
            }
            assert!(
                (analytic - numeric).abs() / denom < 1e-4,
                "partial {i}: analytic {analytic} vs fd {numeric} for {g:?} at {x:?}"
            );
        }
    }

    #[test]
    fn grad_matches_finite_differences_random() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let g = Gaussian2D {
                theta: rng.random_range(-3.0..3.0),
                log_s: [rng.random_range(-0.5..1.0), rng.random_range(-0.5..1.0)],
                ..Gaussian2D::isotropic([rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)], 0.0)
            };
            let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            fd_check(g, x);
        }
    }

    #[test]
    fn conic_backprop_matches_finite_differences() {
        let theta = 0.7;
        let log_s = [0.2, -0.4];
        let w = [0.3, -1.1, 0.8];
        let objective = |t: f64, ls: [f64; 2]| {
            let c = Conic::new(t, ls);
            w[0] * c.xx + w[1] * c.xy + w[2] * c.yy
        };
        let (dt, ds) = Conic::backprop(theta, log_s, w);
        let h = 1e-6;
        let fd_t = (objective(theta + h, log_s) - objective(theta - h, log_s)) / (2.0 * h);
        let fd_s0 = (objective(theta, [log_s[0] + h, log_s[1]]) - objective(theta, [log_s[0] - h, log_s[1]])) / (2.0 * h);
        let fd_s1 = (objective(theta, [log_s[0], log_s[1] + h]) - objective(theta, [log_s[0], log_s[1] - h])) / (2.0 * h);
        assert!(close(dt, fd_t, 1e-6));
        assert!(close(ds[0], fd_s0, 1e-6));
        assert!(close(ds[1], fd_s1, 1e-6));
    }

    proptest! {
        #[test]
        fn covariance_symmetric_with_expected_determinant(
            theta in -10.0f64..10.0, s0 in -3.0f64..3.0, s1 in -3.0f64..3.0,
        ) {
            let c = build_covariance(theta, [s0, s1]).unwrap();
            prop_assert_eq!(c[0][1], c[1][0]);
            let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
            let expected = (2.0 * (s0 + s1)).exp();
            prop_assert!(((det - expected) / expected).abs() < 1e-10, "det {} vs {}", det, expected);
            prop_assert!(c[0][0] > 0.0 && det > 0.0);
        }

        #[test]
        fn density_rotation_invariant(
            theta in -3.0f64..3.0, phi in -3.0f64..3.0,
            s0 in -1.0f64..1.0, s1 in -1.0f64..1.0,
            dx in -2.0f64..2.0, dy in -2.0f64..2.0,
        ) {
            let g = Gaussian2D { theta, log_s: [s0, s1], ..Gaussian2D::isotropic([0.5, -0.5], 0.0) };
            let a = eval_gaussian(&g, [0.5 + dx, -0.5 + dy]).unwrap();
            let (sp, cp) = phi.sin_cos();
            let rotated = Gaussian2D { theta: theta + phi, ..g };
            let b = eval_gaussian(&rotated, [0.5 + cp * dx - sp * dy, -0.5 + sp * dx + cp * dy]).unwrap();
            prop_assert!((a - b).abs() <= 1e-8 * a.abs().max(b.abs()).max(1e-300));
        }

        #[test]
        fn density_decreases_along_ray(t1 in 0.0f64..2.0, t2 in 0.0f64..2.0) {
            let g = Gaussian2D { theta: 0.3, log_s: [0.1, -0.2], ..Gaussian2D::isotropic([0.0, 0.0], 0.0) };
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            prop_assume!(hi - lo > 1e-6);
            let a = eval_gaussian(&g, [lo, lo * 0.5]).unwrap();
            let b = eval_gaussian(&g, [hi, hi * 0.5]).unwrap();
            prop_assert!(a > b);
        }
    }
}
