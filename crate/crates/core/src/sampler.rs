//! Simulation of stationary DPPs on rectangular windows.
//!
//! The kernel is approximated on a torus by its Fourier series: mode `k`
//! of the box `[0, S_1] x ... x [0, S_d]` carries eigenvalue
//! `F(C)(k_1/S_1, ..., k_d/S_d)`. Complex exponentials are paired into
//! real sine/cosine eigenfunctions (same eigenvalue twice), an independent
//! Bernoulli selects each retained eigenfunction, and the resulting
//! projection DPP is sampled by the sequential conditional-density
//! algorithm, tracking an orthonormal basis of the residual subspace so
//! each density evaluation is one matrix-vector product.
//!
//! Windows smaller than the kernel range are embedded in an enlarged
//! torus and the sample is restricted back, which keeps the periodised
//! kernel close to the true one. Estimator-level edge corrections handle
//! the remaining boundary effects.

use crate::geometry::{self, PointPattern, Window};
use crate::kernels::{KernelError, KernelModel};
use crate::moments;
use crate::seeds;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error(transparent)]
    Validation(#[from] KernelError),
    #[error(
        "spectral truncation reached max_modes = {max_modes} with retained mass \
         {retained:.6} < target {required:.6}"
    )]
    Truncation {
        max_modes: usize,
        retained: f64,
        required: f64,
    },
    #[error(transparent)]
    Geometry(#[from] geometry::GeometryError),
    #[error(transparent)]
    Estimator(#[from] crate::estimators::EstimatorError),
}

/// Knobs of the spectral approximation.
#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub seed: u64,
    /// Fraction of the total spectral mass the mode box must retain.
    pub trunc_mass: f64,
    /// Cap on Fourier modes per axis (half-width of the mode box).
    pub max_modes: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            trunc_mass: 0.99999,
            max_modes: 2048,
        }
    }
}

/// Simulation diagnostics of one prepared sampler.
#[derive(Debug, Clone)]
pub struct SamplerDiagnostics {
    /// Half-width of the mode box per axis.
    pub modes_per_axis: Vec<usize>,
    /// Retained spectral mass as a fraction of the target `rho |S|`.
    pub retained_mass: f64,
    /// Torus side lengths actually simulated on.
    pub sim_sides: Vec<f64>,
    /// Eigenfunctions selected in the last draw.
    pub selected_modes: usize,
    /// Points sampled via the grid-inversion fallback in the last draw.
    pub envelope_fallbacks: usize,
}

#[derive(Clone, Copy)]
enum ModeKind {
    Constant,
    Cosine,
    Sine,
}

struct SelectedMode {
    k: Vec<i32>,
    kind: ModeKind,
}

/// A model/window pair with its spectral decomposition precomputed;
/// drawing a pattern only needs a seed.
pub struct PreparedSampler {
    window: Window,
    dim: usize,
    sim_sides: Vec<f64>,
    sim_volume: f64,
    /// Half-lattice modes (first nonzero coordinate positive), flattened
    /// as `dim` integers per mode; the zero mode is stored separately.
    half_mode_k: Vec<i32>,
    half_mode_lambda: Vec<f64>,
    lambda0: f64,
    modes_per_axis: Vec<usize>,
    retained_mass: f64,
}

impl PreparedSampler {
    pub fn new(
        m: &KernelModel,
        w: &Window,
        cfg: &SamplerConfig,
    ) -> Result<Self, SamplerError> {
        m.validate()?;
        assert_eq!(m.dim(), w.dim(), "model and window dimension must agree");
        let dim = m.dim();
        // Torus extension keeps the periodised kernel faithful when the
        // window is smaller than the kernel range.
        let min_side = 2.0 * m.truncation_radius();
        let sim_sides: Vec<f64> = (0..dim).map(|i| w.side(i).max(min_side)).collect();
        let sim_volume: f64 = sim_sides.iter().product();
        let target = m.rho() * sim_volume;
        // Modes below this eigenvalue are dropped from storage; the mass
        // lost is orders below the truncation budget.
        let keep_floor = 1e-13 * target / (1.0 + target);

        let mut half_k = Vec::new();
        let mut half_lambda = Vec::new();
        let mut lambda0 = 0.0;
        let mut retained;
        let mut m_axis = 4usize.min(cfg.max_modes.max(1));
        loop {
            half_k.clear();
            half_lambda.clear();
            retained = 0.0;
            let half_m = m_axis as i32;
            let mut k = vec![-half_m; dim];
            let mut freq = vec![0.0f64; dim];
            // Odometer walk over the whole mode box [-M, M]^d.
            let mut done = false;
            while !done {
                for i in 0..dim {
                    freq[i] = k[i] as f64 / sim_sides[i];
                }
                let lead = k.iter().copied().find(|&v| v != 0);
                match lead {
                    None => {
                        lambda0 = m.spectral_density(&freq);
                        retained += lambda0;
                    }
                    Some(v) if v > 0 => {
                        let lam = m.spectral_density(&freq);
                        retained += 2.0 * lam;
                        if lam > keep_floor {
                            half_k.extend_from_slice(&k);
                            half_lambda.push(lam);
                        }
                    }
                    _ => {}
                }
                let mut axis = dim;
                loop {
                    if axis == 0 {
                        done = true;
                        break;
                    }
                    axis -= 1;
                    if k[axis] < half_m {
                        k[axis] += 1;
                        break;
                    }
                    k[axis] = -half_m;
                }
            }
            if retained >= cfg.trunc_mass * target {
                break;
            }
            if m_axis >= cfg.max_modes {
                return Err(SamplerError::Truncation {
                    max_modes: cfg.max_modes,
                    retained: retained / target,
                    required: cfg.trunc_mass,
                });
            }
            m_axis = (m_axis * 2).min(cfg.max_modes);
        }
        Ok(Self {
            window: w.clone(),
            dim,
            sim_sides,
            sim_volume,
            half_mode_k: half_k,
            half_mode_lambda: half_lambda,
            lambda0,
            modes_per_axis: vec![m_axis; dim],
            retained_mass: retained / target,
        })
    }

    pub fn retained_mass(&self) -> f64 {
        self.retained_mass
    }

    /// Draws one pattern; identical seeds give identical patterns.
    pub fn sample(&self, seed: u64) -> Result<(PointPattern, SamplerDiagnostics), SamplerError> {
        let mut rng = seeds::rng(seeds::derive(seed, &[0x6470_7031]));

        // Independent Bernoulli per real eigenfunction.
        let mut selected = Vec::new();
        if rng.gen::<f64>() < self.lambda0 {
            selected.push(SelectedMode {
                k: vec![0; self.dim],
                kind: ModeKind::Constant,
            });
        }
        for (i, lam) in self.half_mode_lambda.iter().enumerate() {
            let k = &self.half_mode_k[i * self.dim..(i + 1) * self.dim];
            if rng.gen::<f64>() < *lam {
                selected.push(SelectedMode {
                    k: k.to_vec(),
                    kind: ModeKind::Cosine,
                });
            }
            if rng.gen::<f64>() < *lam {
                selected.push(SelectedMode {
                    k: k.to_vec(),
                    kind: ModeKind::Sine,
                });
            }
        }
        let n = selected.len();
        let mut fallbacks = 0usize;

        let mut points_sim: Vec<Vec<f64>> = Vec::with_capacity(n);
        if n > 0 {
            let mut engine = ProjectionSampler::new(self, &selected);
            points_sim = engine.run(&mut rng);
            fallbacks = engine.fallbacks;
        }

        // Restrict the torus sample to the window and shift coordinates.
        let mut points = Vec::new();
        for p in points_sim {
            let mut inside = true;
            let mut q = Vec::with_capacity(self.dim);
            for i in 0..self.dim {
                let side = self.window.side(i);
                if p[i] > side {
                    inside = false;
                    break;
                }
                let (lo, _) = self.window.bounds()[i];
                q.push(lo + p[i]);
            }
            if inside {
                points.push(q);
            }
        }
        let pattern = PointPattern::new(self.window.clone(), points)?;
        let diag = SamplerDiagnostics {
            modes_per_axis: self.modes_per_axis.clone(),
            retained_mass: self.retained_mass,
            sim_sides: self.sim_sides.clone(),
            selected_modes: n,
            envelope_fallbacks: fallbacks,
        };
        Ok((pattern, diag))
    }
}

/// Per-axis complex phase tables for fast eigenfunction evaluation.
struct PhaseTables {
    /// `re/im of exp(2 pi i k x_a / S_a)` for `k = 0..=max_k[a]`.
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
}

impl PhaseTables {
    fn compute(x: &[f64], sides: &[f64], max_k: &[usize]) -> Self {
        let dim = x.len();
        let mut re = Vec::with_capacity(dim);
        let mut im = Vec::with_capacity(dim);
        for a in 0..dim {
            let theta = 2.0 * std::f64::consts::PI * x[a] / sides[a];
            let (s1, c1) = theta.sin_cos();
            let mut ra = Vec::with_capacity(max_k[a] + 1);
            let mut ia = Vec::with_capacity(max_k[a] + 1);
            let (mut cr, mut ci) = (1.0f64, 0.0f64);
            for _ in 0..=max_k[a] {
                ra.push(cr);
                ia.push(ci);
                let nr = cr * c1 - ci * s1;
                ci = cr * s1 + ci * c1;
                cr = nr;
            }
            re.push(ra);
            im.push(ia);
        }
        Self { re, im }
    }
}

/// Sequential sampler of the projection DPP spanned by the selected
/// eigenfunctions.
struct ProjectionSampler<'a> {
    prep: &'a PreparedSampler,
    modes: &'a [SelectedMode],
    max_k: Vec<usize>,
    norm_const: f64,
    norm_pair: f64,
    /// Column-major orthonormal basis of the residual subspace (n x j).
    q: Vec<f64>,
    n: usize,
    fallbacks: usize,
}

impl<'a> ProjectionSampler<'a> {
    fn new(prep: &'a PreparedSampler, modes: &'a [SelectedMode]) -> Self {
        let n = modes.len();
        let dim = prep.dim;
        let mut max_k = vec![0usize; dim];
        for mode in modes {
            for a in 0..dim {
                max_k[a] = max_k[a].max(mode.k[a].unsigned_abs() as usize);
            }
        }
        let mut q = vec![0.0; n * n];
        for i in 0..n {
            q[i * n + i] = 1.0;
        }
        Self {
            prep,
            modes,
            max_k,
            norm_const: 1.0 / prep.sim_volume.sqrt(),
            norm_pair: (2.0 / prep.sim_volume).sqrt(),
            q,
            n,
            fallbacks: 0,
        }
    }

    /// Evaluates the selected eigenfunctions at `x` into `out`.
    fn basis(&self, x: &[f64], out: &mut [f64]) {
        let tables = PhaseTables::compute(x, &self.prep.sim_sides, &self.max_k);
        for (mode, slot) in self.modes.iter().zip(out.iter_mut()) {
            let (mut zr, mut zi) = (1.0f64, 0.0f64);
            for (a, &ka) in mode.k.iter().enumerate() {
                if ka == 0 {
                    continue;
                }
                let idx = ka.unsigned_abs() as usize;
                let tr = tables.re[a][idx];
                let ti = if ka > 0 {
                    tables.im[a][idx]
                } else {
                    -tables.im[a][idx]
                };
                let nr = zr * tr - zi * ti;
                zi = zr * ti + zi * tr;
                zr = nr;
            }
            *slot = match mode.kind {
                ModeKind::Constant => self.norm_const,
                ModeKind::Cosine => self.norm_pair * zr,
                ModeKind::Sine => self.norm_pair * zi,
            };
        }
    }

    /// Residual coefficients `Q^T v` for the current `j` columns.
    fn residual(&self, v: &[f64], j: usize, out: &mut [f64]) {
        let n = self.n;
        for (c, slot) in out.iter_mut().enumerate().take(j) {
            let col = &self.q[c * n..(c + 1) * n];
            *slot = col.iter().zip(v).map(|(a, b)| a * b).sum();
        }
    }

    /// Removes the accepted direction `w` (residual coords, length j)
    /// from the basis via one Householder reflection.
    fn deflate(&mut self, w: &[f64], j: usize) {
        let n = self.n;
        let wnorm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if wnorm <= 0.0 {
            return;
        }
        // u = (w - |w| e_{j-1}) normalised; H = I - 2 u u^T sends w to
        // |w| e_{j-1}, whose column is then dropped.
        let mut u: Vec<f64> = w[..j].to_vec();
        u[j - 1] -= wnorm;
        let unorm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if unorm > 1e-300 {
            for x in &mut u {
                *x /= unorm;
            }
            // Q <- Q - 2 (Q u) u^T over the first j columns.
            let mut qu = vec![0.0; n];
            for (c, &uc) in u.iter().enumerate().take(j) {
                let col = &self.q[c * n..(c + 1) * n];
                for (r, &val) in col.iter().enumerate() {
                    qu[r] += val * uc;
                }
            }
            for (c, &uc) in u.iter().enumerate().take(j) {
                let col = &mut self.q[c * n..(c + 1) * n];
                let f = 2.0 * uc;
                for (r, slot) in col.iter_mut().enumerate() {
                    *slot -= f * qu[r];
                }
            }
        }
    }

    fn run(&mut self, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        let n = self.n;
        let dim = self.prep.dim;
        let volume = self.prep.sim_volume;
        // Hard envelope: every eigenfunction is bounded by 2/|S| squared.
        let q_hard = 2.0 * n as f64 / volume;
        let mut obs_max = 0.0f64;
        let mut total_trials = 0usize;

        let mut v = vec![0.0; n];
        let mut w = vec![0.0; n];
        let mut points = Vec::with_capacity(n);
        for j in (1..=n).rev() {
            let q_env = if total_trials < 200 {
                q_hard
            } else {
                (2.0 * obs_max).min(q_hard)
            };
            let mut accepted: Option<Vec<f64>> = None;
            let mut env = q_env;
            for _ in 0..50_000 {
                let x: Vec<f64> = (0..dim)
                    .map(|a| rng.gen::<f64>() * self.prep.sim_sides[a])
                    .collect();
                self.basis(&x, &mut v);
                self.residual(&v, j, &mut w);
                let dens = w[..j].iter().map(|c| c * c).sum::<f64>();
                total_trials += 1;
                obs_max = obs_max.max(dens);
                if dens > env * (1.0 + 1e-9) {
                    // Envelope failure: recover with the guaranteed bound.
                    env = q_hard;
                    self.fallbacks += 1;
                    continue;
                }
                if rng.gen::<f64>() * env < dens {
                    accepted = Some(x);
                    break;
                }
            }
            let x = match accepted {
                Some(x) => x,
                None => {
                    // Rejection starved: invert the density on a grid.
                    self.fallbacks += 1;
                    let x = self.grid_inverse(rng, j, &mut v, &mut w);
                    self.basis(&x, &mut v);
                    self.residual(&v, j, &mut w);
                    x
                }
            };
            self.deflate(&w.clone(), j);
            points.push(x);
        }
        points
    }

    /// Fallback sampler: discrete inversion of the residual density on a
    /// regular grid (256 cells per axis in d <= 2, 64 in d = 3).
    fn grid_inverse(
        &self,
        rng: &mut ChaCha8Rng,
        j: usize,
        v: &mut [f64],
        w: &mut [f64],
    ) -> Vec<f64> {
        let dim = self.prep.dim;
        let cells_per_axis: usize = if dim <= 2 { 256 } else { 64 };
        let total: usize = cells_per_axis.pow(dim as u32);
        let mut weights = Vec::with_capacity(total);
        let mut acc = 0.0;
        for cell in 0..total {
            let mut rest = cell;
            let x: Vec<f64> = (0..dim)
                .map(|a| {
                    let idx = rest % cells_per_axis;
                    rest /= cells_per_axis;
                    (idx as f64 + 0.5) / cells_per_axis as f64 * self.prep.sim_sides[a]
                })
                .collect();
            self.basis(&x, v);
            self.residual(v, j, w);
            let dens = w[..j].iter().map(|c| c * c).sum::<f64>();
            acc += dens.max(0.0);
            weights.push(acc);
        }
        let u = rng.gen::<f64>() * acc;
        let cell = weights.partition_point(|&c| c < u).min(total - 1);
        let mut rest = cell;
        (0..dim)
            .map(|a| {
                let idx = rest % cells_per_axis;
                rest /= cells_per_axis;
                (idx as f64 + rng.gen::<f64>()) / cells_per_axis as f64 * self.prep.sim_sides[a]
            })
            .collect()
    }
}

/// Draws one DPP realization on the window.
pub fn sample_dpp(
    m: &KernelModel,
    w: &Window,
    cfg: &SamplerConfig,
) -> Result<PointPattern, SamplerError> {
    let prep = PreparedSampler::new(m, w, cfg)?;
    Ok(prep.sample(cfg.seed)?.0)
}

/// Like [`sample_dpp`] but also returns the approximation diagnostics.
pub fn sample_dpp_with_diagnostics(
    m: &KernelModel,
    w: &Window,
    cfg: &SamplerConfig,
) -> Result<(PointPattern, SamplerDiagnostics), SamplerError> {
    let prep = PreparedSampler::new(m, w, cfg)?;
    prep.sample(cfg.seed)
}

/// Homogeneous Poisson process on the window; the reference model with
/// `g = 1` used as a test oracle.
pub fn sample_poisson(rho: f64, w: &Window, seed: u64) -> PointPattern {
    assert!(rho > 0.0, "intensity must be positive");
    let mut rng = seeds::rng(seeds::derive(seed, &[0x706f_6973]));
    let mean = rho * geometry::volume(w);
    let count = if mean > 0.0 {
        Poisson::new(mean).expect("positive mean").sample(&mut rng) as usize
    } else {
        0
    };
    let points: Vec<Vec<f64>> = (0..count)
        .map(|_| {
            w.bounds()
                .iter()
                .map(|&(lo, hi)| rng.gen_range(lo..hi))
                .collect()
        })
        .collect();
    PointPattern::new(w.clone(), points).expect("uniform draws stay in the window a.s.")
}

/// Empirical versus theoretical second moment at one distance.
#[derive(Debug, Clone)]
pub struct PairCountReport {
    /// Mean over replicates of the unbiased statistic `rho_hat^2 K_hat(t)`.
    pub empirical_mean: f64,
    /// Monte Carlo standard error of that mean.
    pub stderr: f64,
    /// `rho^2 K(t, theta)`.
    pub theoretical: f64,
}

impl PairCountReport {
    pub fn z_score(&self) -> f64 {
        if self.stderr == 0.0 {
            if self.empirical_mean == self.theoretical {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.empirical_mean - self.theoretical) / self.stderr
        }
    }
}

/// Second-moment gate of the sampler: compares the replicate mean of
/// `rho_hat^2 K_hat(t)` with `rho^2 K(t, theta)`.
pub fn pair_count_check(
    m: &KernelModel,
    w: &Window,
    n_reps: usize,
    t: f64,
    cfg: &SamplerConfig,
) -> Result<PairCountReport, SamplerError> {
    let prep = PreparedSampler::new(m, w, cfg)?;
    let stats: Vec<f64> = (0..n_reps)
        .into_par_iter()
        .map(|rep| {
            let (pattern, _) = prep.sample(seeds::derive(cfg.seed, &[0x7063, rep as u64]))?;
            if pattern.len() < 2 || t == 0.0 {
                return Ok(0.0);
            }
            let rho_hat = crate::estimators::intensity_hat(&pattern);
            let curve = crate::estimators::k_hat(&pattern, &[t])?;
            Ok(rho_hat * rho_hat * curve.values()[0])
        })
        .collect::<Result<Vec<f64>, SamplerError>>()?;
    let n = stats.len() as f64;
    let mean = stats.iter().sum::<f64>() / n;
    let var = stats.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0);
    Ok(PairCountReport {
        empirical_mean: mean,
        stderr: (var / n).sqrt(),
        theoretical: m.rho() * m.rho() * moments::k_theory(m, t),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelFamily;
    use std::f64::consts::PI;

    fn gaussian(rho: f64, alpha: f64) -> KernelModel {
        KernelModel::new(KernelFamily::Gaussian, 2, rho, vec![alpha]).unwrap()
    }

    #[test]
    fn dpp_sampling_is_deterministic() {
        let m = gaussian(100.0, 0.03);
        let w = Window::unit_square();
        let cfg = SamplerConfig {
            seed: 42,
            ..SamplerConfig::default()
        };
        let a = sample_dpp(&m, &w, &cfg).unwrap();
        let b = sample_dpp(&m, &w, &cfg).unwrap();
        assert_eq!(a.points(), b.points());
        let cfg2 = SamplerConfig {
            seed: 43,
            ..cfg
        };
        let c = sample_dpp(&m, &w, &cfg2).unwrap();
        assert_ne!(a.points(), c.points());
    }

    #[test]
    fn retained_mass_meets_target() {
        let m = gaussian(100.0, 0.03);
        let w = Window::unit_square();
        let cfg = SamplerConfig::default();
        let (_, diag) = sample_dpp_with_diagnostics(&m, &w, &cfg).unwrap();
        assert!(diag.retained_mass >= cfg.trunc_mass);
        assert!(diag.selected_modes > 0);
    }

    #[test]
    fn truncation_cap_errors_out() {
        let m = gaussian(100.0, 0.01);
        let w = Window::unit_square();
        let cfg = SamplerConfig {
            max_modes: 8,
            ..SamplerConfig::default()
        };
        assert!(matches!(
            sample_dpp(&m, &w, &cfg),
            Err(SamplerError::Truncation { .. })
        ));
    }

    #[test]
    fn boundary_alpha_samples_without_error() {
        let m = gaussian(100.0, 1.0 / (10.0 * PI.sqrt()));
        let w = Window::unit_square();
        let p = sample_dpp(&m, &w, &SamplerConfig::default()).unwrap();
        assert!(p.len() > 30, "boundary model should still fill the window");
    }

    #[test]
    fn tiny_window_is_almost_always_empty() {
        let m = gaussian(100.0, 0.03);
        let w = Window::square(1e-6, 2).unwrap();
        let prep = PreparedSampler::new(&m, &w, &SamplerConfig::default()).unwrap();
        let total: usize = (0..20).map(|s| prep.sample(s).unwrap().0.len()).sum();
        assert_eq!(total, 0, "expected count 1e-10 per draw");
    }

    #[test]
    fn dpp_counts_have_correct_mean_and_repulsive_variance() {
        let m = gaussian(100.0, 0.03);
        let w = Window::unit_square();
        let prep = PreparedSampler::new(&m, &w, &SamplerConfig::default()).unwrap();
        let counts: Vec<f64> = (0..1500)
            .into_par_iter()
            .map(|rep| prep.sample(seeds::derive(7, &[rep])).unwrap().0.len() as f64)
            .collect();
        let n = counts.len() as f64;
        let mean = counts.iter().sum::<f64>() / n;
        let var = counts.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (n - 1.0);
        // Corollary-level variance: rho - int C^2 = 85.863 on |D| = 1.
        assert!(
            (mean - 100.0).abs() < 3.0 * (85.863f64 / n).sqrt(),
            "mean count {mean}"
        );
        // One-sided sub-Poisson check at the 1% level: under Poisson the
        // variance estimate has sd ~ var * sqrt(2/(n-1)).
        let poisson_var = mean;
        let z = (var - poisson_var) / (poisson_var * (2.0 / (n - 1.0)).sqrt());
        assert!(z < -2.33, "variance {var} is not sub-Poisson (z = {z})");
    }

    #[test]
    fn poisson_counts_match_moments() {
        let w = Window::unit_square();
        let counts: Vec<f64> = (0..2000)
            .map(|s| sample_poisson(100.0, &w, s).len() as f64)
            .collect();
        let n = counts.len() as f64;
        let mean = counts.iter().sum::<f64>() / n;
        let var = counts.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (n - 1.0);
        assert!((mean - 100.0).abs() < 0.7, "mean {mean}");
        let ratio = var / mean;
        assert!((0.9..1.1).contains(&ratio), "variance/mean {ratio}");
    }

    #[test]
    fn poisson_is_deterministic_and_respects_tiny_mean() {
        let w = Window::unit_square();
        let a = sample_poisson(50.0, &w, 9);
        let b = sample_poisson(50.0, &w, 9);
        assert_eq!(a.points(), b.points());
        let tiny = Window::square(1e-8, 2).unwrap();
        assert!(sample_poisson(1.0, &tiny, 1).is_empty());
    }

    #[test]
    fn pair_count_check_poisson_oracle_shape() {
        // The Poisson reference: rho^2 K(t) with K = pi t^2. Checked via
        // the DPP machinery in the alpha -> 0 regime where the process is
        // nearly Poisson.
        let m = gaussian(100.0, 0.002);
        let w = Window::unit_square();
        let cfg = SamplerConfig {
            seed: 5,
            ..SamplerConfig::default()
        };
        let report = pair_count_check(&m, &w, 200, 0.05, &cfg).unwrap();
        assert!(
            report.z_score().abs() < 3.0,
            "empirical {} vs theoretical {} (z = {})",
            report.empirical_mean,
            report.theoretical,
            report.z_score()
        );
        assert!((report.theoretical - 1e4 * PI * 0.0025).abs() / report.theoretical < 0.01);
    }

    #[test]
    fn pair_count_check_at_zero_distance() {
        let m = gaussian(100.0, 0.03);
        let w = Window::unit_square();
        let cfg = SamplerConfig::default();
        let report = pair_count_check(&m, &w, 5, 0.0, &cfg).unwrap();
        assert_eq!(report.empirical_mean, 0.0);
        assert_eq!(report.theoretical, 0.0);
    }
}
