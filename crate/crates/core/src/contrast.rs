//! Minimum contrast estimation: the discrepancy
//! `U_n(theta) = int w(t) { Jhat(t)^c - J(t,theta)^c }^2 dt`
//! minimised over the admissible shape box, with `J` either Ripley's K or
//! the pair correlation.

use crate::estimators::{self, EstimatorError};
use crate::geometry::{PointPattern, Window};
use crate::kernels::{KernelFamily, KernelModel, ParamSpace};
use crate::moments::{self, AsymptoticReport, Statistic, SummaryCurve};
use crate::quad::{linspace, simpson_weights};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ContrastError {
    #[error("invalid contrast spec: {0}")]
    InvalidSpec(String),
    #[error("estimated statistic is negative at t = {t} with fractional exponent c = {c}")]
    NegativeStatistic { t: f64, c: f64 },
    #[error("curve grid does not match the contrast grid")]
    GridMismatch,
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("optimizer failed: {0}")]
    OptimizerFailure(String),
    #[error(transparent)]
    Kernel(#[from] crate::kernels::KernelError),
    #[error(transparent)]
    Moments(#[from] moments::MomentsError),
}

/// Weight function `w(t) >= 0` of the discrepancy integral.
#[derive(Clone)]
pub enum Weight {
    /// Constant weight 1 (the conventional choice).
    One,
    /// Constant weight `lambda`.
    Constant(f64),
    /// Arbitrary nonnegative weight.
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl Weight {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Weight::One => 1.0,
            Weight::Constant(l) => *l,
            Weight::Custom(f) => f(t),
        }
    }
}

impl std::fmt::Debug for Weight {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Weight::One => write!(f, "Weight::One"),
            Weight::Constant(l) => write!(f, "Weight::Constant({l})"),
            Weight::Custom(_) => write!(f, "Weight::Custom(..)"),
        }
    }
}

/// Definition of the discrepancy measure: statistic, integration range,
/// exponent, weight, and quadrature grid size.
#[derive(Debug, Clone)]
pub struct ContrastSpec {
    pub statistic: Statistic,
    pub r_min: f64,
    pub r_max: f64,
    pub c: f64,
    pub weight: Weight,
    pub grid_points: usize,
}

impl ContrastSpec {
    pub fn new(
        statistic: Statistic,
        r_min: f64,
        r_max: f64,
        c: f64,
        weight: Weight,
        grid_points: usize,
    ) -> Result<Self, ContrastError> {
        let spec = Self {
            statistic,
            r_min,
            r_max,
            c,
            weight,
            grid_points,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ContrastError> {
        let fail = |msg: String| Err(ContrastError::InvalidSpec(msg));
        if !(self.r_min >= 0.0 && self.r_max > self.r_min) {
            return fail(format!("need 0 <= r_min < r_max, got [{}, {}]", self.r_min, self.r_max));
        }
        if self.c == 0.0 || !self.c.is_finite() {
            return fail("exponent c must be nonzero".into());
        }
        if self.r_min == 0.0 && self.c < 2.0 {
            return fail("r_min = 0 requires c >= 2".into());
        }
        if self.statistic == Statistic::G && self.r_min <= 0.0 {
            return fail("the pair correlation contrast requires r_min > 0".into());
        }
        if self.grid_points < 2 {
            return fail("grid needs at least 2 points".into());
        }
        Ok(())
    }

    /// Integration grid of the discrepancy measure.
    pub fn grid(&self) -> Vec<f64> {
        linspace(self.r_min, self.r_max, self.grid_points)
    }
}

/// The conventional tuning for a rectangular window: `w = 1`,
/// `r_min = 0.01`, `r_max` one quarter of the (shortest) side length,
/// `c = 0.5`, 513 grid points.
pub fn default_spec(statistic: Statistic, window: &Window) -> ContrastSpec {
    ContrastSpec::new(statistic, 0.01, window.min_side() / 4.0, 0.5, Weight::One, 513)
        .expect("default contrast spec is valid")
}

/// A parametric summary statistic: value plus first two parameter
/// derivatives, as required by the asymptotic theory.
pub trait StatisticModel: Sync {
    fn value(&self, t: f64, theta: &[f64]) -> f64;
    fn grad(&self, t: f64, theta: &[f64]) -> DVector<f64>;
    fn hess(&self, t: f64, theta: &[f64]) -> DMatrix<f64>;
}

/// Theoretical K or g of a kernel family, viewed as a `StatisticModel`.
pub struct TheoryStatistic {
    pub family: KernelFamily,
    pub dim: usize,
    pub statistic: Statistic,
}

impl StatisticModel for TheoryStatistic {
    fn value(&self, t: f64, theta: &[f64]) -> f64 {
        match self.statistic {
            Statistic::K => moments::k_theory_family(self.family, self.dim, theta, t),
            Statistic::G => moments::g_theory_family(self.family, theta, t),
        }
    }

    fn grad(&self, t: f64, theta: &[f64]) -> DVector<f64> {
        match self.statistic {
            Statistic::K => moments::k_grad_family(self.family, self.dim, theta, t),
            Statistic::G => moments::g_grad_family(self.family, theta, t),
        }
    }

    fn hess(&self, t: f64, theta: &[f64]) -> DMatrix<f64> {
        // Differentiate the gradient by central differences in each
        // coordinate; adequate for the derivative-free pipeline.
        let p = theta.len();
        let mut h = DMatrix::zeros(p, p);
        for i in 0..p {
            let step = 1e-5 * theta[i].abs().max(1e-5);
            let mut up = theta.to_vec();
            up[i] += step;
            let mut dn = theta.to_vec();
            dn[i] -= step;
            let diff = (self.grad(t, &up) - self.grad(t, &dn)) / (2.0 * step);
            for j in 0..p {
                h[(i, j)] = diff[j];
            }
        }
        // Symmetrize away the finite-difference asymmetry.
        for i in 0..p {
            for j in (i + 1)..p {
                let avg = 0.5 * (h[(i, j)] + h[(j, i)]);
                h[(i, j)] = avg;
                h[(j, i)] = avg;
            }
        }
        h
    }
}

/// Result of one minimum contrast fit.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub theta_hat: Vec<f64>,
    pub rho_hat: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// True when some coordinate of `theta_hat` sits on the box boundary.
    pub bound_active: bool,
    pub asymptotics: Option<AsymptoticReport>,
}

/// Optimizer tuning knobs.
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Absolute tolerance on theta.
    pub tol: f64,
    /// Evaluation budget per restart.
    pub max_iter: usize,
    /// Number of coarse bracketing points (p = 1) per box.
    pub scan_points: usize,
    /// Random restarts for the simplex search (p > 1).
    pub restarts: usize,
    /// Seed for restart placement.
    pub seed: u64,
    /// Attach the plug-in asymptotic covariance report.
    pub with_asymptotics: Option<moments::McConfig>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
            scan_points: 33,
            restarts: 3,
            seed: 0,
            with_asymptotics: None,
        }
    }
}

/// Precomputed quadrature form of `U_n` for a fixed empirical curve.
struct Objective<'a> {
    model: &'a dyn StatisticModel,
    grid: Vec<f64>,
    weights: Vec<f64>, // simpson weight * w(t)
    jhat_c: Vec<f64>,
    c: f64,
}

impl<'a> Objective<'a> {
    fn new(
        curve: &SummaryCurve,
        model: &'a dyn StatisticModel,
        spec: &ContrastSpec,
    ) -> Result<Self, ContrastError> {
        spec.validate()?;
        let grid = spec.grid();
        if curve.len() != grid.len()
            || curve
                .grid()
                .iter()
                .zip(&grid)
                .any(|(a, b)| (a - b).abs() > 1e-9 * (1.0 + b.abs()))
        {
            return Err(ContrastError::GridMismatch);
        }
        let fractional = spec.c.fract() != 0.0;
        let mut jhat_c = Vec::with_capacity(grid.len());
        for (&t, &v) in grid.iter().zip(curve.values()) {
            if v < 0.0 && fractional {
                return Err(ContrastError::NegativeStatistic { t, c: spec.c });
            }
            jhat_c.push(power(v, spec.c));
        }
        let weights = simpson_weights(grid.len(), spec.r_min, spec.r_max)
            .into_iter()
            .zip(&grid)
            .map(|(wq, &t)| wq * spec.weight.eval(t))
            .collect();
        Ok(Self {
            model,
            grid,
            weights,
            jhat_c,
            c: spec.c,
        })
    }

    fn eval(&self, theta: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((&t, &w), &jc) in self.grid.iter().zip(&self.weights).zip(&self.jhat_c) {
            let d = jc - power(self.model.value(t, theta), self.c);
            acc += w * d * d;
        }
        acc
    }
}

/// `x^c` with the convention `0^c = 0` for positive `c`.
fn power(x: f64, c: f64) -> f64 {
    if x == 0.0 && c > 0.0 {
        0.0
    } else {
        x.powf(c)
    }
}

/// Discrepancy `U_n(theta)` between an empirical curve and the family
/// statistic at the model's shape parameters.
pub fn contrast_value(
    curve: &SummaryCurve,
    m: &KernelModel,
    spec: &ContrastSpec,
) -> Result<f64, ContrastError> {
    let model = TheoryStatistic {
        family: m.family(),
        dim: m.dim(),
        statistic: spec.statistic,
    };
    let objective = Objective::new(curve, &model, spec)?;
    Ok(objective.eval(m.theta()))
}

/// Bounded scalar minimisation: golden-section bracketing refined with
/// successive parabolic interpolation (Brent).
fn brent_min<F: Fn(f64) -> f64>(
    f: F,
    lo: f64,
    hi: f64,
    tol: f64,
    max_iter: usize,
) -> (f64, f64, usize) {
    const GOLD: f64 = 0.381_966_011_250_105;
    let (mut a, mut b) = (lo, hi);
    let mut x = a + GOLD * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x);
    let (mut fw, mut fv) = (fx, fx);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    let mut evals = 1;
    for _ in 0..max_iter {
        let m = 0.5 * (a + b);
        let tol1 = tol * x.abs().max(1.0) + 1e-15;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut use_golden = true;
        if e.abs() > tol1 {
            // Trial parabola through x, v, w.
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let e_old = e;
            e = d;
            if p.abs() < (0.5 * q * e_old).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if (u - a) < tol2 || (b - u) < tol2 {
                    d = if m > x { tol1 } else { -tol1 };
                }
                use_golden = false;
            }
        }
        if use_golden {
            e = if x < m { b - x } else { a - x };
            d = GOLD * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d > 0.0 {
            x + tol1
        } else {
            x - tol1
        };
        let fu = f(u);
        evals += 1;
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, fx, evals)
}

/// Nelder-Mead on a box; candidate vertices are clamped into the box.
fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: F,
    start: &[f64],
    bounds: &ParamSpace,
    tol: f64,
    max_iter: usize,
) -> (Vec<f64>, f64, usize) {
    let p = start.len();
    let clamp = |mut th: Vec<f64>| {
        bounds.clamp(&mut th);
        th
    };
    let mut simplex: Vec<Vec<f64>> = vec![clamp(start.to_vec())];
    for i in 0..p {
        let mut v = start.to_vec();
        let (lo, hi) = bounds.intervals()[i];
        let step = 0.05 * (hi - lo);
        v[i] = if v[i] + step <= hi { v[i] + step } else { v[i] - step };
        simplex.push(clamp(v));
    }
    let mut fvals: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    let mut evals = p + 1;
    for _ in 0..max_iter {
        let mut order: Vec<usize> = (0..=p).collect();
        order.sort_by(|&i, &j| fvals[i].partial_cmp(&fvals[j]).unwrap());
        let best = order[0];
        let worst = order[p];
        let second_worst = order[p - 1];
        let spread: f64 = (0..p)
            .map(|i| (simplex[best][i] - simplex[worst][i]).abs())
            .fold(0.0, f64::max);
        if spread < tol && (fvals[worst] - fvals[best]).abs() < tol * (1.0 + fvals[best].abs()) {
            break;
        }
        let centroid: Vec<f64> = (0..p)
            .map(|i| {
                order[..p].iter().map(|&k| simplex[k][i]).sum::<f64>() / p as f64
            })
            .collect();
        let blend = |a: f64| -> Vec<f64> {
            clamp(
                centroid
                    .iter()
                    .zip(&simplex[worst])
                    .map(|(c, w)| c + a * (c - w))
                    .collect(),
            )
        };
        let reflected = blend(1.0);
        let fr = f(&reflected);
        evals += 1;
        if fr < fvals[best] {
            let expanded = blend(2.0);
            let fe = f(&expanded);
            evals += 1;
            if fe < fr {
                simplex[worst] = expanded;
                fvals[worst] = fe;
            } else {
                simplex[worst] = reflected;
                fvals[worst] = fr;
            }
        } else if fr < fvals[second_worst] {
            simplex[worst] = reflected;
            fvals[worst] = fr;
        } else {
            let contracted = blend(-0.5);
            let fc = f(&contracted);
            evals += 1;
            if fc < fvals[worst] {
                simplex[worst] = contracted;
                fvals[worst] = fc;
            } else {
                // Shrink toward the best vertex.
                let best_v = simplex[best].clone();
                for k in 0..=p {
                    if k == best {
                        continue;
                    }
                    simplex[k] = clamp(
                        simplex[k]
                            .iter()
                            .zip(&best_v)
                            .map(|(x, b)| b + 0.5 * (x - b))
                            .collect(),
                    );
                    fvals[k] = f(&simplex[k]);
                    evals += 1;
                }
            }
        }
    }
    let mut best = 0;
    for k in 1..=p {
        if fvals[k] < fvals[best] {
            best = k;
        }
    }
    (simplex[best].clone(), fvals[best], evals)
}

fn minimize(
    objective: &Objective<'_>,
    bounds: &ParamSpace,
    opts: &FitOptions,
) -> Result<(Vec<f64>, f64, usize, bool), ContrastError> {
    let p = bounds.dim();
    if p == 1 {
        let (lo, hi) = bounds.intervals()[0];
        // Coarse scan guards against the odd multi-modal objective and
        // locates the Brent bracket.
        let scan = linspace(lo, hi, opts.scan_points.max(3));
        let mut best_i = 0;
        let mut best_f = f64::INFINITY;
        for (i, &x) in scan.iter().enumerate() {
            let fx = objective.eval(&[x]);
            if fx < best_f {
                best_f = fx;
                best_i = i;
            }
        }
        let a = scan[best_i.saturating_sub(1)];
        let b = scan[(best_i + 1).min(scan.len() - 1)];
        let (x, fx, evals) = brent_min(|x| objective.eval(&[x]), a, b, opts.tol, opts.max_iter);
        let (theta, obj) = if fx <= best_f {
            (vec![x], fx)
        } else {
            (vec![scan[best_i]], best_f)
        };
        let converged = evals < opts.max_iter;
        Ok((theta, obj, scan.len() + evals, converged))
    } else {
        let mut rng = crate::seeds::rng(crate::seeds::derive(opts.seed, &[0x6f70]));
        let mut starts = vec![bounds.center()];
        for _ in 0..opts.restarts {
            starts.push(
                bounds
                    .intervals()
                    .iter()
                    .map(|&(lo, hi)| rng.gen_range(lo..hi))
                    .collect(),
            );
        }
        let mut best: Option<(Vec<f64>, f64)> = None;
        let mut total_evals = 0;
        for start in &starts {
            let (theta, fval, evals) =
                nelder_mead(|th| objective.eval(th), start, bounds, opts.tol, opts.max_iter);
            total_evals += evals;
            let replace = match &best {
                None => true,
                Some((bt, bf)) => {
                    // Deterministic tie break: smallest theta wins.
                    fval < bf - 1e-10
                        || ((fval - bf).abs() <= 1e-10
                            && theta
                                .iter()
                                .zip(bt)
                                .find_map(|(a, b)| {
                                    if a < b {
                                        Some(true)
                                    } else if a > b {
                                        Some(false)
                                    } else {
                                        None
                                    }
                                })
                                .unwrap_or(false))
                }
            };
            if replace {
                best = Some((theta, fval));
            }
        }
        let (theta, obj) = best.expect("at least one start");
        Ok((theta, obj, total_evals, true))
    }
}

fn active_bound(theta: &[f64], bounds: &ParamSpace) -> bool {
    theta.iter().zip(bounds.intervals()).any(|(t, &(lo, hi))| {
        let tol = 1e-6 * (hi - lo);
        (t - lo).abs() <= tol || (hi - t).abs() <= tol
    })
}

/// Minimum contrast fit over an explicit parameter box for an arbitrary
/// statistic; decouples the engine from the intensity plug-in.
pub fn fit_generic(
    curve: &SummaryCurve,
    model: &dyn StatisticModel,
    bounds: &ParamSpace,
    spec: &ContrastSpec,
    opts: &FitOptions,
) -> Result<FitReport, ContrastError> {
    let objective = Objective::new(curve, model, spec)?;
    let baseline = objective.eval(&bounds.center());
    let (theta, obj, iterations, converged) = minimize(&objective, bounds, opts)?;
    if !obj.is_finite() || obj > baseline + 1e-9 * (1.0 + baseline.abs()) {
        return Err(ContrastError::OptimizerFailure(format!(
            "no decrease from baseline {baseline} (got {obj})"
        )));
    }
    let objective_value = objective.eval(&theta);
    Ok(FitReport {
        bound_active: active_bound(&theta, bounds),
        theta_hat: theta,
        rho_hat: f64::NAN,
        objective: objective_value,
        iterations,
        converged,
        asymptotics: None,
    })
}

/// Full minimum contrast fit from a pattern: estimates the intensity,
/// computes the empirical statistic once on the contrast grid, and
/// minimises the discrepancy over `Theta_{rho_hat}`.
pub fn fit(
    p: &PointPattern,
    family: KernelFamily,
    spec: &ContrastSpec,
    opts: &FitOptions,
) -> Result<FitReport, ContrastError> {
    spec.validate()?;
    if p.is_empty() {
        return Err(EstimatorError::ZeroIntensity.into());
    }
    let rho_hat = estimators::intensity_hat(p);
    let grid = spec.grid();
    let curve = estimators::summary_hat(p, spec.statistic, &grid)?;
    let bounds = family.param_space(rho_hat, p.window().dim())?;
    let model = TheoryStatistic {
        family,
        dim: p.window().dim(),
        statistic: spec.statistic,
    };
    let mut report = fit_generic(&curve, &model, &bounds, spec, opts)?;
    report.rho_hat = rho_hat;
    if let Some(mc) = &opts.with_asymptotics {
        let m = KernelModel::new(family, p.window().dim(), rho_hat, report.theta_hat.clone())?;
        report.asymptotics = Some(moments::asymptotic_covariance(&m, spec, mc)?);
    }
    Ok(report)
}
