//! Small quadrature toolkit: Gauss-Legendre rules, composite Simpson sums
//! on uniform grids, and surface/volume constants for Euclidean balls.

use std::f64::consts::PI;

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
///
/// Computed by Newton iteration on the Legendre recurrence; accurate to
/// machine precision for the moderate orders used here.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess for the i-th root.
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre P_n(x) and derivative via the three-term recurrence.
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Fixed-order Gauss-Legendre integral of `f` over `[a, b]`.
pub fn integrate_gl<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, order: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let (nodes, weights) = gauss_legendre(order);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc = 0.0;
    for (x, w) in nodes.iter().zip(&weights) {
        acc += w * f(mid + half * x);
    }
    acc * half
}

/// Composite Simpson weights for a uniform grid with `n` points on `[a, b]`.
///
/// For even `n` the last interval is closed with a trapezoid; `n` must be
/// at least 2.
pub fn simpson_weights(n: usize, a: f64, b: f64) -> Vec<f64> {
    assert!(n >= 2, "a quadrature grid needs at least two points");
    let h = (b - a) / (n - 1) as f64;
    let mut w = vec![0.0; n];
    // Largest odd point count covered by Simpson pairs.
    let m = if n % 2 == 1 { n } else { n - 1 };
    if m >= 3 {
        w[0] += h / 3.0;
        w[m - 1] += h / 3.0;
        for (i, wi) in w.iter_mut().enumerate().take(m - 1).skip(1) {
            *wi += if i % 2 == 1 { 4.0 * h / 3.0 } else { 2.0 * h / 3.0 };
        }
    } else {
        w[0] += 0.5 * h;
        w[1] += 0.5 * h;
    }
    if n % 2 == 0 && n > 2 {
        w[n - 2] += 0.5 * h;
        w[n - 1] += 0.5 * h;
    }
    w
}

/// Uniform grid of `n` points spanning `[a, b]` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2);
    let h = (b - a) / (n - 1) as f64;
    (0..n).map(|i| a + h * i as f64).collect()
}

/// Surface area of the unit sphere in `R^d`: `2 pi^{d/2} / Gamma(d/2)`.
pub fn sphere_surface(dim: usize) -> f64 {
    2.0 * PI.powf(dim as f64 / 2.0) / statrs::function::gamma::gamma(dim as f64 / 2.0)
}

/// Volume of the ball of radius `r` in `R^d`.
pub fn ball_volume(dim: usize, r: f64) -> f64 {
    sphere_surface(dim) * r.powi(dim as i32) / dim as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_legendre_is_exact_on_polynomials() {
        // Order n integrates degree 2n-1 exactly.
        let val = integrate_gl(|x| x.powi(7) - 3.0 * x.powi(4) + x, 0.0, 2.0, 8);
        let exact = 2.0f64.powi(8) / 8.0 - 3.0 * 2.0f64.powi(5) / 5.0 + 2.0;
        assert_relative_eq!(val, exact, max_relative = 1e-14);
    }

    #[test]
    fn gauss_legendre_gaussian_tail() {
        // Smooth integrand with a known closed form.
        let a = 0.03f64;
        let val = integrate_gl(|r| r * (-2.0 * r * r / (a * a)).exp(), 0.0, 0.2, 64);
        let exact = a * a / 4.0 * (1.0 - (-2.0 * 0.04 / (a * a)).exp());
        assert_relative_eq!(val, exact, max_relative = 1e-13);
    }

    #[test]
    fn simpson_matches_cubic() {
        let n = 513;
        let grid = linspace(0.0, 1.0, n);
        let w = simpson_weights(n, 0.0, 1.0);
        let val: f64 = grid.iter().zip(&w).map(|(t, w)| w * t * t * t).sum();
        assert_relative_eq!(val, 0.25, max_relative = 1e-14);
    }

    #[test]
    fn simpson_even_grid_falls_back_to_trapezoid_tail() {
        let n = 512;
        let grid = linspace(0.0, 1.0, n);
        let w = simpson_weights(n, 0.0, 1.0);
        let val: f64 = grid.iter().zip(&w).map(|(t, w)| w * t.sin()).sum();
        assert_relative_eq!(val, 1.0 - 1.0f64.cos(), max_relative = 1e-7);
    }

    #[test]
    fn sphere_constants() {
        assert_relative_eq!(sphere_surface(1), 2.0, max_relative = 1e-14);
        assert_relative_eq!(sphere_surface(2), 2.0 * PI, max_relative = 1e-14);
        assert_relative_eq!(sphere_surface(3), 4.0 * PI, max_relative = 1e-14);
        assert_relative_eq!(ball_volume(2, 1.0), PI, max_relative = 1e-14);
    }
}
