//! Reduced factorial cumulant densities of a stationary DPP.
//!
//! With kernel `C` the orders used by the covariance integrals are
//!
//! ```text
//! c2(u)       = -C(u)^2
//! c3(u, v)    =  2 C(u) C(v) C(v - u)
//! c4(u, v, w) = -2 [ C(u)C(v)C(u-w)C(v-w)
//!                  + C(u)C(w)C(u-v)C(v-w)
//!                  + C(v)C(w)C(u-v)C(u-w) ]
//! ```
//!
//! All arguments are lags in `R^d`; the kernels shipped here are isotropic
//! so evaluation reduces to norms of differences.

use crate::kernels::KernelModel;
use std::sync::Arc;

/// Radial kernel closure shared by the cumulant evaluators.
pub(crate) type RadialKernel = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Evaluators for the DPP cumulant densities of orders 2 to 4.
#[derive(Clone)]
pub struct CumulantDensities {
    dim: usize,
    kernel: RadialKernel,
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

impl CumulantDensities {
    pub fn new(m: &KernelModel) -> Self {
        let rho = m.rho();
        let family = m.family();
        let theta = m.theta().to_vec();
        Self {
            dim: m.dim(),
            kernel: Arc::new(move |r| rho * family.correlation(&theta, r)),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn c(&self, r: f64) -> f64 {
        (self.kernel)(r)
    }

    /// `c2(u) = -C(u)^2`.
    pub fn c2(&self, u: &[f64]) -> f64 {
        let c = self.c(norm(u));
        -c * c
    }

    /// `c3(u, v) = 2 C(u) C(v) C(v - u)`.
    pub fn c3(&self, u: &[f64], v: &[f64]) -> f64 {
        2.0 * self.c(norm(u)) * self.c(norm(v)) * self.c(diff_norm(v, u))
    }

    /// `c4(u, v, w)`: the three-product sum above.
    pub fn c4(&self, u: &[f64], v: &[f64], w: &[f64]) -> f64 {
        let cu = self.c(norm(u));
        let cv = self.c(norm(v));
        let cw = self.c(norm(w));
        let cuv = self.c(diff_norm(u, v));
        let cuw = self.c(diff_norm(u, w));
        let cvw = self.c(diff_norm(v, w));
        -2.0 * (cu * cv * cuw * cvw + cu * cw * cuv * cvw + cv * cw * cuv * cuw)
    }
}
