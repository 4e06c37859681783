//! Nonparametric second-order estimators from one observed pattern.
//!
//! `k_hat` is the minus-sampling (border corrected) estimator of Ripley's
//! K-function: reference points are restricted to the eroded window so
//! their whole `t`-ball is observed. `g_hat` is the kernel estimator of
//! the pair correlation with translation correction `|D ∩ D^{x-y}|`.

use crate::geometry::{self, PointPattern, Window};
use crate::moments::{Statistic, SummaryCurve};
use crate::quad::sphere_surface;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("pattern has no points: intensity estimate is zero")]
    ZeroIntensity,
    #[error("eroded window is empty at distance t = {0}")]
    EmptyErosion(f64),
    #[error("distance grid must be strictly increasing and start above {min}")]
    InvalidGrid { min: f64 },
    #[error("bandwidth must be positive, got {0}")]
    NonPositiveBandwidth(f64),
}

/// Shape of the smoothing kernel used by the pair correlation estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelShape {
    /// `0.75 (1 - u^2)` on `[-1, 1]`.
    Epanechnikov,
    /// `0.5` on `[-1, 1]`.
    Box,
}

/// Symmetric probability kernel with compact support `[-T, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingKernel {
    pub shape: KernelShape,
    /// Support half-width in bandwidth units.
    pub half_width: f64,
}

impl Default for SmoothingKernel {
    fn default() -> Self {
        Self {
            shape: KernelShape::Epanechnikov,
            half_width: 1.0,
        }
    }
}

impl SmoothingKernel {
    pub fn eval(&self, u: f64) -> f64 {
        let t = self.half_width;
        let v = u / t;
        if v.abs() > 1.0 {
            return 0.0;
        }
        let base = match self.shape {
            KernelShape::Epanechnikov => 0.75 * (1.0 - v * v),
            KernelShape::Box => 0.5,
        };
        base / t
    }
}

/// Rule mapping a pattern to the smoothing bandwidth `b_n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthRule {
    /// `b_n = constant / sqrt(rho_hat)`; the conventional choice is 0.15.
    Stoyan { constant: f64 },
    /// Fixed positive bandwidth.
    Fixed(f64),
}

impl Default for BandwidthRule {
    fn default() -> Self {
        BandwidthRule::Stoyan { constant: 0.15 }
    }
}

/// Resolves the bandwidth rule on a pattern.
pub fn bandwidth(rule: BandwidthRule, p: &PointPattern) -> Result<f64, EstimatorError> {
    let b = match rule {
        BandwidthRule::Stoyan { constant } => {
            let rho = intensity_hat(p);
            if rho <= 0.0 {
                return Err(EstimatorError::ZeroIntensity);
            }
            constant / rho.sqrt()
        }
        BandwidthRule::Fixed(b) => b,
    };
    if b <= 0.0 {
        return Err(EstimatorError::NonPositiveBandwidth(b));
    }
    Ok(b)
}

/// Standard intensity estimator: point count over window volume.
pub fn intensity_hat(p: &PointPattern) -> f64 {
    p.len() as f64 / geometry::volume(p.window())
}

fn check_grid(grid: &[f64], min_exclusive: f64) -> Result<(), EstimatorError> {
    let ok = !grid.is_empty()
        && grid.windows(2).all(|w| w[1] > w[0])
        && grid[0] > min_exclusive
        && grid.iter().all(|t| t.is_finite());
    if ok {
        Ok(())
    } else {
        Err(EstimatorError::InvalidGrid { min: min_exclusive })
    }
}

/// Minus-sampling estimator of Ripley's K-function on a distance grid.
///
/// For each ordered pair `(x, y)` the pair is counted at distance `t` when
/// `|x - y| <= t` and the reference point `y` lies in the eroded window
/// `D^(-t)`; the count is normalised by `rho_hat^2 |D^(-t)|`.
pub fn k_hat(p: &PointPattern, grid: &[f64]) -> Result<SummaryCurve, EstimatorError> {
    check_grid(grid, -f64::EPSILON)?;
    if p.is_empty() {
        return Err(EstimatorError::ZeroIntensity);
    }
    let w = p.window();
    let rho = intensity_hat(p);
    let eroded: Vec<f64> = grid.iter().map(|&t| geometry::eroded_volume(w, t)).collect();
    if let Some(i) = eroded.iter().position(|&v| v <= 0.0) {
        return Err(EstimatorError::EmptyErosion(grid[i]));
    }

    let pts = p.points();
    let n = pts.len();
    let bdist: Vec<f64> = pts.iter().map(|x| w.boundary_distance(x)).collect();
    let t_max = *grid.last().unwrap();

    // Each ordered pair contributes one indicator on a contiguous run of
    // grid indices; accumulate runs in a difference array.
    let mut diff = vec![0i64; grid.len() + 1];
    let mut add_pair = |d: f64, bd: f64| {
        if d > t_max || d > bd {
            return;
        }
        let i_lo = grid.partition_point(|&t| t < d);
        let i_hi = grid.partition_point(|&t| t <= bd);
        if i_lo < i_hi {
            diff[i_lo] += 1;
            diff[i_hi] -= 1;
        }
    };
    for j in 0..n {
        for k in (j + 1)..n {
            let d = geometry::dist2(&pts[j], &pts[k]).sqrt();
            add_pair(d, bdist[k]);
            add_pair(d, bdist[j]);
        }
    }

    let mut count = 0i64;
    let values: Vec<f64> = grid
        .iter()
        .enumerate()
        .map(|(i, _)| {
            count += diff[i];
            count as f64 / (rho * rho * eroded[i])
        })
        .collect();
    Ok(SummaryCurve::new(Statistic::K, grid.to_vec(), values))
}

/// Pair correlation estimate with diagnostics.
#[derive(Debug, Clone)]
pub struct PcfEstimate {
    pub curve: SummaryCurve,
    /// Bandwidth actually used.
    pub bandwidth: f64,
    /// Pairs skipped because their translation overlap volume was zero.
    pub zero_overlap_pairs: usize,
}

/// Translation-corrected kernel estimator of the pair correlation on a
/// positive distance grid.
pub fn g_hat(
    p: &PointPattern,
    grid: &[f64],
    kernel: SmoothingKernel,
    rule: BandwidthRule,
) -> Result<PcfEstimate, EstimatorError> {
    check_grid(grid, 0.0)?;
    if p.is_empty() {
        return Err(EstimatorError::ZeroIntensity);
    }
    let b = bandwidth(rule, p)?;
    let w = p.window();
    let dim = w.dim();
    let rho = intensity_hat(p);
    let sd = sphere_surface(dim);

    let pts = p.points();
    let n = pts.len();
    let support = kernel.half_width * b;
    let t_lo = grid[0];
    let t_hi = *grid.last().unwrap();

    let mut acc = vec![0.0f64; grid.len()];
    let mut zero_overlap_pairs = 0usize;
    let mut lag = vec![0.0f64; dim];
    for j in 0..n {
        for k in (j + 1)..n {
            let r = geometry::dist2(&pts[j], &pts[k]).sqrt();
            if r - support > t_hi || r + support < t_lo {
                continue;
            }
            for (a, (xj, xk)) in lag.iter_mut().zip(pts[j].iter().zip(&pts[k])) {
                *a = xj - xk;
            }
            let overlap = geometry::shift_overlap_volume(w, &lag);
            if overlap <= 0.0 {
                zero_overlap_pairs += 1;
                continue;
            }
            // Both orderings of a pair contribute the same amount.
            let scale = 2.0 / (b * overlap);
            let i_lo = grid.partition_point(|&t| t < r - support);
            let i_hi = grid.partition_point(|&t| t <= r + support);
            for i in i_lo..i_hi {
                acc[i] += scale * kernel.eval((grid[i] - r) / b);
            }
        }
    }

    let values: Vec<f64> = grid
        .iter()
        .zip(&acc)
        .map(|(&t, &a)| a / (sd * t.powi(dim as i32 - 1) * rho * rho))
        .collect();
    Ok(PcfEstimate {
        curve: SummaryCurve::new(Statistic::G, grid.to_vec(), values),
        bandwidth: b,
        zero_overlap_pairs,
    })
}

/// Convenience: evaluate the estimator named by `stat` with defaults.
pub fn summary_hat(
    p: &PointPattern,
    stat: Statistic,
    grid: &[f64],
) -> Result<SummaryCurve, EstimatorError> {
    match stat {
        Statistic::K => k_hat(p, grid),
        Statistic::G => Ok(g_hat(p, grid, SmoothingKernel::default(), BandwidthRule::default())?.curve),
    }
}

/// Erosion guard used when building contrast grids: largest grid distance
/// must keep the eroded window nonempty.
pub fn max_erosion_distance(w: &Window) -> f64 {
    w.min_side() / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{PointPattern, Window};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use std::f64::consts::PI;

    fn pattern(window: Window, pts: Vec<Vec<f64>>) -> PointPattern {
        PointPattern::new(window, pts).unwrap()
    }

    #[test]
    fn intensity_examples() {
        let w = Window::unit_square();
        let pts: Vec<Vec<f64>> = (0..100)
            .map(|i| vec![(i % 10) as f64 * 0.1 + 0.05, (i / 10) as f64 * 0.1 + 0.05])
            .collect();
        assert_relative_eq!(intensity_hat(&pattern(w.clone(), pts)), 100.0);
        assert_relative_eq!(intensity_hat(&pattern(w, vec![])), 0.0);
        let rect = Window::new(vec![(0.0, 2.0), (0.0, 1.0)]).unwrap();
        let pts: Vec<Vec<f64>> = (0..50).map(|i| vec![2.0 * (i as f64 + 0.5) / 50.0, 0.5]).collect();
        assert_relative_eq!(intensity_hat(&pattern(rect, pts)), 25.0);
    }

    #[test]
    fn k_hat_two_point_example() {
        let p = pattern(
            Window::unit_square(),
            vec![vec![0.45, 0.5], vec![0.55, 0.5]],
        );
        let curve = k_hat(&p, &[0.2]).unwrap();
        // rho = 2, eroded area 0.36, both ordered pairs count.
        assert_relative_eq!(curve.values()[0], 2.0 / (4.0 * 0.36), max_relative = 1e-12);
        assert_relative_eq!(curve.values()[0], 1.3888888888888888, max_relative = 1e-12);

        let below = k_hat(&p, &[0.05]).unwrap();
        assert_eq!(below.values()[0], 0.0);
    }

    #[test]
    fn k_hat_errors() {
        let p = pattern(Window::unit_square(), vec![vec![0.5, 0.5]]);
        assert!(matches!(
            k_hat(&p, &[0.6]).unwrap_err(),
            EstimatorError::EmptyErosion(t) if t == 0.6
        ));
        let empty = pattern(Window::unit_square(), vec![]);
        assert!(matches!(k_hat(&empty, &[0.1]).unwrap_err(), EstimatorError::ZeroIntensity));
    }

    #[test]
    fn k_hat_nonnegative_on_random_patterns() {
        let mut rng = crate::seeds::rng(41);
        let w = Window::unit_square();
        let grid: Vec<f64> = (1..=40).map(|i| 0.01 * i as f64).collect();
        for _ in 0..20 {
            let n = rng.gen_range(2..80);
            let pts: Vec<Vec<f64>> = (0..n)
                .map(|_| vec![rng.gen::<f64>(), rng.gen::<f64>()])
                .collect();
            let Ok(p) = PointPattern::new(w.clone(), pts) else { continue };
            let curve = k_hat(&p, &grid).unwrap();
            assert!(curve.values().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn g_hat_single_point_is_zero() {
        let p = pattern(Window::unit_square(), vec![vec![0.5, 0.5]]);
        let est = g_hat(&p, &[0.05, 0.1], SmoothingKernel::default(), BandwidthRule::Fixed(0.02))
            .unwrap();
        assert!(est.curve.values().iter().all(|&v| v == 0.0));
        assert_eq!(est.zero_overlap_pairs, 0);
    }

    #[test]
    fn g_hat_matches_hand_computation() {
        // Two points, box kernel: a single pair at distance 0.1.
        let p = pattern(
            Window::unit_square(),
            vec![vec![0.45, 0.5], vec![0.55, 0.5]],
        );
        let b = 0.05;
        let kernel = SmoothingKernel {
            shape: KernelShape::Box,
            half_width: 1.0,
        };
        let t = 0.12; // |t - r| = 0.02 < b
        let est = g_hat(&p, &[t], kernel, BandwidthRule::Fixed(b)).unwrap();
        let overlap = 0.9; // |D ∩ D^z| with z = (0.1, 0)
        // Both orderings of the pair: 2 * k(0.4) / (b |D ∩ D^z|), then the
        // 1 / (sigma_2 t rho^2) prefactor with rho = 2.
        let direct = 2.0 * 0.5 / (b * overlap) / (2.0 * PI * t * 4.0);
        assert_relative_eq!(est.curve.values()[0], direct, max_relative = 1e-12);
    }

    #[test]
    fn g_hat_rejects_nonpositive_grid() {
        let p = pattern(Window::unit_square(), vec![vec![0.5, 0.5]]);
        assert!(matches!(
            g_hat(&p, &[0.0, 0.1], SmoothingKernel::default(), BandwidthRule::Fixed(0.01)),
            Err(EstimatorError::InvalidGrid { .. })
        ));
    }

    #[test]
    fn bandwidth_examples() {
        let w = Window::unit_square();
        let pts: Vec<Vec<f64>> = (0..100)
            .map(|i| vec![(i % 10) as f64 * 0.1 + 0.05, (i / 10) as f64 * 0.1 + 0.03])
            .collect();
        let p = pattern(w, pts);
        let b = bandwidth(BandwidthRule::default(), &p).unwrap();
        assert_relative_eq!(b, 0.015, max_relative = 1e-12);
        assert_relative_eq!(
            bandwidth(BandwidthRule::Fixed(0.02), &p).unwrap(),
            0.02
        );
        // Stoyan scales as rho^-1/2: quadrupling the count halves b.
        let w2 = Window::square(0.5, 2).unwrap();
        let pts2: Vec<Vec<f64>> = (0..100)
            .map(|i| vec![(i % 10) as f64 * 0.05 + 0.025, (i / 10) as f64 * 0.05 + 0.015])
            .collect();
        let p4 = pattern(w2, pts2);
        let b4 = bandwidth(BandwidthRule::default(), &p4).unwrap();
        assert_relative_eq!(b4, b / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn estimates_are_translation_equivariant() {
        let mut rng = crate::seeds::rng(42);
        let w = Window::unit_square();
        let pts: Vec<Vec<f64>> = (0..60)
            .map(|_| vec![rng.gen::<f64>(), rng.gen::<f64>()])
            .collect();
        let p = PointPattern::new(w, pts).unwrap();
        let q = p.translate(&[3.5, -1.25]);
        let grid: Vec<f64> = (1..=20).map(|i| 0.012 * i as f64).collect();
        let kp = k_hat(&p, &grid).unwrap();
        let kq = k_hat(&q, &grid).unwrap();
        for (a, b) in kp.values().iter().zip(kq.values()) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
        let gp = g_hat(&p, &grid, SmoothingKernel::default(), BandwidthRule::default()).unwrap();
        let gq = g_hat(&q, &grid, SmoothingKernel::default(), BandwidthRule::default()).unwrap();
        for (a, b) in gp.curve.values().iter().zip(gq.curve.values()) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
    }

    #[test]
    fn box_kernel_pcf_integral_matches_edge_corrected_pair_count() {
        // With a box kernel, integrating sigma_d t^(d-1) rho^2 g_hat over an
        // annulus recovers the translation-weighted pair count in it.
        let mut rng = crate::seeds::rng(43);
        let w = Window::unit_square();
        let pts: Vec<Vec<f64>> = (0..120)
            .map(|_| vec![rng.gen::<f64>(), rng.gen::<f64>()])
            .collect();
        let p = PointPattern::new(w.clone(), pts).unwrap();
        let rho = intensity_hat(&p);

        let (r_min, r_max) = (0.05, 0.25);
        let b = 0.002;
        let kernel = SmoothingKernel {
            shape: KernelShape::Box,
            half_width: 1.0,
        };
        // Fine grid so the quadrature resolves the bandwidth scale.
        let n_grid = 4001usize;
        let grid: Vec<f64> = crate::quad::linspace(r_min, r_max, n_grid);
        let est = g_hat(&p, &grid, kernel, BandwidthRule::Fixed(b)).unwrap();
        let wq = crate::quad::simpson_weights(n_grid, r_min, r_max);
        let integral: f64 = grid
            .iter()
            .zip(est.curve.values())
            .zip(&wq)
            .map(|((&t, &g), &wi)| wi * 2.0 * PI * t * rho * rho * g)
            .sum();

        let mut reference = 0.0;
        let pts = p.points();
        for j in 0..pts.len() {
            for k in 0..pts.len() {
                if j == k {
                    continue;
                }
                let lag: Vec<f64> = pts[j].iter().zip(&pts[k]).map(|(a, b)| a - b).collect();
                let r = lag.iter().map(|v| v * v).sum::<f64>().sqrt();
                // Box-kernel mass of this pair landing inside [r_min, r_max]:
                // the overlap of [r - b, r + b] with the annulus, over 2b.
                let overlap_len = (r + b).min(r_max) - (r - b).max(r_min);
                if overlap_len > 0.0 {
                    let frac = overlap_len / (2.0 * b);
                    reference += frac / geometry::shift_overlap_volume(&w, &lag);
                }
            }
        }
        assert_relative_eq!(integral, reference, max_relative = 0.005);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn estimators_invariant_under_relabeling(seed in 0u64..1000) {
            let mut rng = crate::seeds::rng(seed);
            let w = Window::unit_square();
            let pts: Vec<Vec<f64>> = (0..40)
                .map(|_| vec![rng.gen::<f64>(), rng.gen::<f64>()])
                .collect();
            let mut shuffled = pts.clone();
            shuffled.reverse();
            shuffled.swap(0, 5);
            let p = PointPattern::new(w.clone(), pts).unwrap();
            let q = PointPattern::new(w, shuffled).unwrap();
            let grid: Vec<f64> = (1..=15).map(|i| 0.015 * i as f64).collect();
            let kp = k_hat(&p, &grid).unwrap();
            let kq = k_hat(&q, &grid).unwrap();
            // Integer counting makes K exactly permutation invariant.
            prop_assert_eq!(kp.values(), kq.values());
            let gp = g_hat(&p, &grid, SmoothingKernel::default(), BandwidthRule::default()).unwrap();
            let gq = g_hat(&q, &grid, SmoothingKernel::default(), BandwidthRule::default()).unwrap();
            for (a, b) in gp.curve.values().iter().zip(gq.curve.values()) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
    }
}
