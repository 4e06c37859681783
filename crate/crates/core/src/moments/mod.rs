//! Theoretical second-order summaries of stationary DPPs and the
//! asymptotic covariance of their minimum contrast estimators.
//!
//! The pair correlation of a DPP with correlation `R_theta` is
//! `g(t) = 1 - R_theta(t)^2` and Ripley's function is the integral of `g`
//! over the ball `B(0, t)`. Both depend on the shape `theta` only. The
//! reduced factorial cumulant densities of orders 2-4 are closed forms in
//! the kernel `C` and feed the sandwich covariance computed in [`sigma`].

mod cumulants;
mod sigma;

pub use cumulants::CumulantDensities;
pub use sigma::{
    asymptotic_covariance, b_matrix, sigma_g, sigma_k, AsymptoticReport, McConfig, MomentsError,
};

use crate::kernels::{KernelFamily, KernelModel};
use crate::quad::{ball_volume, integrate_gl, sphere_surface};
use nalgebra::DVector;

/// Which summary statistic a curve tabulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Statistic {
    /// Ripley's K-function (area units).
    K,
    /// Pair correlation function (dimensionless).
    G,
}

impl Statistic {
    pub fn name(&self) -> &'static str {
        match self {
            Statistic::K => "K",
            Statistic::G => "g",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "K" | "k" => Some(Statistic::K),
            "g" | "G" => Some(Statistic::G),
            _ => None,
        }
    }
}

/// A summary statistic tabulated on a strictly increasing distance grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryCurve {
    kind: Statistic,
    grid: Vec<f64>,
    values: Vec<f64>,
}

impl SummaryCurve {
    pub fn new(kind: Statistic, grid: Vec<f64>, values: Vec<f64>) -> Self {
        assert_eq!(grid.len(), values.len(), "grid/value length mismatch");
        assert!(grid.len() >= 1);
        assert!(
            grid.windows(2).all(|w| w[1] > w[0]),
            "distance grid must be strictly increasing"
        );
        assert!(values.iter().all(|v| v.is_finite()), "curve values must be finite");
        Self { kind, grid, values }
    }

    pub fn kind(&self) -> Statistic {
        self.kind
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }
}

/// Order of the Gauss-Legendre rule used for radial kernel integrals.
const RADIAL_GL_ORDER: usize = 64;

/// Radial integral `int_0^t r^{d-1} f(r) dr` truncated where the kernel
/// correlation has decayed below tolerance.
fn radial_integral<F: Fn(f64) -> f64>(f: F, t: f64, dim: usize, r_trunc: f64) -> f64 {
    let upper = t.min(r_trunc);
    integrate_gl(|r| r.powi(dim as i32 - 1) * f(r), 0.0, upper, RADIAL_GL_ORDER)
}

pub(crate) fn g_theory_family(family: KernelFamily, theta: &[f64], t: f64) -> f64 {
    let r = family.correlation(theta, t);
    1.0 - r * r
}

pub(crate) fn k_theory_family(family: KernelFamily, dim: usize, theta: &[f64], t: f64) -> f64 {
    let r_trunc = family.truncation_radius(theta, crate::kernels::TRUNC_TOL);
    let sd = sphere_surface(dim);
    let tail = radial_integral(
        |r| {
            let c = family.correlation(theta, r);
            c * c
        },
        t,
        dim,
        r_trunc,
    );
    ball_volume(dim, t) - sd * tail
}

pub(crate) fn k_grad_family(
    family: KernelFamily,
    dim: usize,
    theta: &[f64],
    t: f64,
) -> DVector<f64> {
    let p = theta.len();
    let r_trunc = family.truncation_radius(theta, crate::kernels::TRUNC_TOL);
    let sd = sphere_surface(dim);
    let mut grad = DVector::zeros(p);
    for i in 0..p {
        let gi = radial_integral(
            |r| family.correlation(theta, r) * family.correlation_grad(theta, r)[i],
            t,
            dim,
            r_trunc,
        );
        grad[i] = -2.0 * sd * gi;
    }
    grad
}

pub(crate) fn g_grad_family(family: KernelFamily, theta: &[f64], t: f64) -> DVector<f64> {
    let r = family.correlation(theta, t);
    family.correlation_grad(theta, t).map(|dr| -2.0 * r * dr)
}

/// Theoretical pair correlation `g(t, theta) = 1 - R_theta(t)^2`.
pub fn g_theory(m: &KernelModel, t: f64) -> f64 {
    g_theory_family(m.family(), m.theta(), t)
}

/// Theoretical Ripley function `K(t, theta) = |B(0,t)| - int_{B(0,t)} R^2`.
pub fn k_theory(m: &KernelModel, t: f64) -> f64 {
    k_theory_family(m.family(), m.dim(), m.theta(), t)
}

/// Gradient of `K(t, theta)` in `theta`, by radial quadrature of
/// `-2 int_{B(0,t)} R_theta R_theta^(1)`.
pub fn k_grad(m: &KernelModel, t: f64) -> DVector<f64> {
    k_grad_family(m.family(), m.dim(), m.theta(), t)
}

/// Gradient of `g(t, theta)` in `theta`: `-2 R_theta R_theta^(1)`.
pub fn g_grad(m: &KernelModel, t: f64) -> DVector<f64> {
    g_grad_family(m.family(), m.theta(), t)
}

/// Tabulates the theoretical statistic on a grid.
pub fn theory_curve(m: &KernelModel, kind: Statistic, grid: &[f64]) -> SummaryCurve {
    let values: Vec<f64> = grid
        .iter()
        .map(|&t| match kind {
            Statistic::K => k_theory(m, t),
            Statistic::G => g_theory(m, t),
        })
        .collect();
    SummaryCurve::new(kind, grid.to_vec(), values)
}

/// Squared-kernel mass `int_{R^d} C(x)^2 dx`, by truncated radial quadrature.
pub fn kernel_l2_mass(m: &KernelModel) -> f64 {
    let sd = sphere_surface(m.dim());
    let rho = m.rho();
    sd * radial_integral(
        |r| {
            let c = rho * m.correlation(r);
            c * c
        },
        f64::INFINITY,
        m.dim(),
        m.truncation_radius(),
    )
}

/// Limit variance of `sqrt(|D_n|) (rho_hat - rho)`: `rho - int C^2`.
pub fn intensity_clt_variance(m: &KernelModel) -> f64 {
    m.rho() - kernel_l2_mass(m)
}

/// Reduced factorial cumulant density evaluators bound to a model.
pub fn cumulants(m: &KernelModel) -> CumulantDensities {
    CumulantDensities::new(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelFamily;
    use approx::assert_relative_eq;
    use rand::Rng;
    use std::f64::consts::PI;

    fn gaussian(rho: f64, alpha: f64) -> KernelModel {
        KernelModel::new(KernelFamily::Gaussian, 2, rho, vec![alpha]).unwrap()
    }

    /// Closed form of K for the planar Gaussian family.
    fn k_closed(alpha: f64, t: f64) -> f64 {
        PI * t * t - PI * alpha * alpha / 2.0 * (1.0 - (-2.0 * t * t / (alpha * alpha)).exp())
    }

    #[test]
    fn g_theory_examples() {
        let m = gaussian(100.0, 0.03);
        assert_relative_eq!(g_theory(&m, 0.0), 0.0);
        assert_relative_eq!(g_theory(&m, 0.03), 1.0 - (-2.0f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(g_theory(&m, 0.03), 0.8646647167633873, max_relative = 1e-14);
        assert!(g_theory(&m, 1.0) > 1.0 - 1e-12);
    }

    #[test]
    fn k_theory_matches_closed_form() {
        let m = gaussian(100.0, 0.03);
        assert_eq!(k_theory(&m, 0.0), 0.0);
        for &t in &[0.01, 0.05, 0.1, 0.2, 0.25] {
            assert_relative_eq!(k_theory(&m, t), k_closed(0.03, t), max_relative = 1e-12);
        }
        assert_relative_eq!(k_theory(&m, 0.1), 0.030002209842098298, max_relative = 1e-10);
    }

    #[test]
    fn k_theory_matches_2d_adaptive_quadrature() {
        // Independent oracle: iterated adaptive Simpson of the planar
        // integral of g over the disk B(0, t).
        fn adaptive<F: Fn(f64) -> f64 + Copy>(f: F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
            fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
                (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
            }
            fn rec<F: Fn(f64) -> f64>(
                f: &F,
                a: f64,
                b: f64,
                whole: f64,
                tol: f64,
                depth: u32,
            ) -> f64 {
                let m = 0.5 * (a + b);
                let left = simpson(f, a, m);
                let right = simpson(f, m, b);
                if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                    left + right + (left + right - whole) / 15.0
                } else {
                    rec(f, a, m, left, tol / 2.0, depth - 1)
                        + rec(f, m, b, right, tol / 2.0, depth - 1)
                }
            }
            rec(&f, a, b, simpson(&f, a, b), tol, depth)
        }

        let alpha = 0.03f64;
        let t = 0.1f64;
        let inner = |x: f64| {
            let ylim = (t * t - x * x).max(0.0).sqrt();
            adaptive(
                move |y: f64| 1.0 - (-2.0 * (x * x + y * y) / (alpha * alpha)).exp(),
                -ylim,
                ylim,
                1e-12,
                28,
            )
        };
        let oracle = adaptive(inner, -t, t, 1e-11, 28);
        let m = gaussian(100.0, alpha);
        assert_relative_eq!(k_theory(&m, t), oracle, max_relative = 1e-7);
    }

    #[test]
    fn k_theory_poisson_limit() {
        // As alpha -> 0 the repulsion hole vanishes and K -> pi t^2.
        let m = gaussian(100.0, 2e-4);
        assert_relative_eq!(k_theory(&m, 0.2), PI * 0.04, max_relative = 1e-6);
    }

    #[test]
    fn k_monotone_and_below_ball_volume() {
        let m = gaussian(100.0, 0.04);
        let mut prev = 0.0;
        for i in 1..=60 {
            let t = 0.005 * i as f64;
            let k = k_theory(&m, t);
            assert!(k >= prev - 1e-14);
            assert!(k <= PI * t * t + 1e-12);
            prev = k;
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = crate::seeds::rng(21);
        let fam = KernelFamily::Gaussian;
        for _ in 0..50 {
            let alpha: f64 = rng.gen_range(0.005..0.056);
            let t: f64 = rng.gen_range(0.01..0.25);
            // Step shrinks with (t/alpha)^2: the alpha-derivatives carry
            // polynomial factors of that ratio.
            let s2 = (t / alpha) * (t / alpha);
            let h = 3e-4 * alpha / s2.max(1.0);

            let kg = k_grad_family(fam, 2, &[alpha], t)[0];
            let kfd = (k_theory_family(fam, 2, &[alpha + h], t)
                - k_theory_family(fam, 2, &[alpha - h], t))
                / (2.0 * h);
            assert!(
                (kg - kfd).abs() / kg.abs().max(1e-10) <= 1e-6,
                "K grad mismatch at alpha={alpha} t={t}: {kg} vs {kfd}"
            );

            let gg = g_grad_family(fam, &[alpha], t)[0];
            // Difference R^2, not g = 1 - R^2: once g saturates near 1 the
            // direct difference cancels to rounding noise.
            let r2 = |a: f64| {
                let r = fam.correlation(&[a], t);
                r * r
            };
            let gfd = -(r2(alpha + h) - r2(alpha - h)) / (2.0 * h);
            assert!(
                (gg - gfd).abs() / gg.abs().max(1e-10) <= 1e-6,
                "g grad mismatch at alpha={alpha} t={t}: {gg} vs {gfd}"
            );
        }
    }

    #[test]
    fn grads_vanish_where_they_should() {
        let m = gaussian(100.0, 0.03);
        assert_eq!(k_grad(&m, 0.0)[0], 0.0);
        // Far beyond the kernel range the product R R' is numerically zero.
        assert!(g_grad(&m, 0.5)[0].abs() < 1e-12);
    }

    #[test]
    fn intensity_clt_variance_examples() {
        let m = gaussian(100.0, 0.03);
        let exact = 100.0 - 1e4 * PI * 0.0009 / 2.0;
        assert_relative_eq!(intensity_clt_variance(&m), exact, max_relative = 1e-10);
        assert_relative_eq!(intensity_clt_variance(&m), 85.86283305884593, max_relative = 1e-9);

        let boundary = 1.0 / (10.0 * PI.sqrt());
        let mb = gaussian(100.0, boundary);
        assert_relative_eq!(intensity_clt_variance(&mb), 50.0, max_relative = 1e-10);

        let tiny = gaussian(100.0, 2e-4);
        assert_relative_eq!(intensity_clt_variance(&tiny), 100.0, max_relative = 1e-4);
    }

    #[test]
    fn theory_curve_respects_dpp_bounds() {
        let m = gaussian(100.0, 0.05);
        let grid = crate::quad::linspace(0.01, 0.25, 97);
        let g = theory_curve(&m, Statistic::G, &grid);
        assert!(g.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let k = theory_curve(&m, Statistic::K, &grid);
        assert!(k.values().windows(2).all(|w| w[1] >= w[0]));
    }
}
