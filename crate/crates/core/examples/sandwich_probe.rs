// Scratch probe: sandwich covariance vs simulation on [0,3]^2.
use dppfit::contrast::{self, default_spec, FitOptions};
use dppfit::estimators::{g_hat, intensity_hat, BandwidthRule, SmoothingKernel};
use dppfit::geometry::{volume, Window};
use dppfit::kernels::{KernelFamily, KernelModel};
use dppfit::moments::{self, McConfig, Statistic};
use dppfit::quad::{linspace, simpson_weights};
use dppfit::sampler::{PreparedSampler, SamplerConfig};
use dppfit::seeds;
use rayon::prelude::*;
use std::time::Instant;

fn main() {
    let m = KernelModel::new(KernelFamily::Gaussian, 2, 100.0, vec![0.03]).unwrap();
    let w = Window::square(3.0, 2).unwrap();
    let spec = default_spec(Statistic::G, &w);
    let mc = McConfig::default();

    let t0 = Instant::now();
    let report = moments::asymptotic_covariance(&m, &spec, &mc).unwrap();
    println!("asympt time: {:?}", t0.elapsed());
    println!(
        "B = {:.6}  Sigma = {:.6e} +- {:.3e}  cov = {:.6e}",
        report.b[(0, 0)],
        report.sigma[(0, 0)],
        report.mc_stderr[(0, 0)],
        report.covariance[(0, 0)]
    );
    println!(
        "stderr / |Sigma| = {:.4}",
        report.mc_stderr[(0, 0)] / report.sigma[(0, 0)].abs()
    );

    // Simulation side.
    let n_reps = 500usize;
    let cfg = SamplerConfig::default();
    let prep = PreparedSampler::new(&m, &w, &cfg).unwrap();
    let grid = spec.grid();
    let wq = simpson_weights(grid.len(), spec.r_min, spec.r_max);
    // j(t) and g(t) at the true parameter.
    let jvals: Vec<f64> = grid
        .iter()
        .map(|&t| {
            let g = moments::g_theory(&m, t);
            let g1 = moments::g_grad(&m, t)[0];
            g.powf(2.0 * spec.c - 2.0) * g1
        })
        .collect();
    let gvals: Vec<f64> = grid.iter().map(|&t| moments::g_theory(&m, t)).collect();
    let vol = volume(&w);

    let t1 = Instant::now();
    let results: Vec<(f64, f64, usize)> = (0..n_reps)
        .into_par_iter()
        .map(|rep| {
            let seed = seeds::derive(777, &[rep as u64]);
            let pattern = prep.sample(seed).unwrap().0;
            let est = g_hat(
                &pattern,
                &grid,
                SmoothingKernel::default(),
                BandwidthRule::default(),
            )
            .unwrap();
            let integral: f64 = est
                .curve
                .values()
                .iter()
                .zip(&gvals)
                .zip(&jvals)
                .zip(&wq)
                .map(|(((gh, g), j), w)| w * (gh - g) * j)
                .sum();
            let fit = contrast::fit(&pattern, KernelFamily::Gaussian, &spec, &FitOptions::default())
                .unwrap();
            let _ = intensity_hat(&pattern);
            (vol.sqrt() * integral, fit.theta_hat[0], pattern.len())
        })
        .collect();
    println!("sim time for {n_reps} reps: {:?}", t1.elapsed());

    let n = results.len() as f64;
    let zmean = results.iter().map(|r| r.0).sum::<f64>() / n;
    let zvar = results.iter().map(|r| (r.0 - zmean).powi(2)).sum::<f64>() / (n - 1.0);
    println!("empirical Var(sqrt|D| int [ghat-g] j) = {zvar:.6e} (mean {zmean:.3e})");
    println!("ratio Sigma/empirical = {:.4}", report.sigma[(0, 0)] / zvar);

    let tmean = results.iter().map(|r| r.1).sum::<f64>() / n;
    let tvar = results.iter().map(|r| (r.1 - tmean).powi(2)).sum::<f64>() / (n - 1.0);
    let mse = results.iter().map(|r| (r.1 - 0.03).powi(2)).sum::<f64>() / n;
    println!("theta_hat: mean {tmean:.6}, var {tvar:.3e}, MSE {mse:.3e} (x1e4: {:.3})", mse * 1e4);
    println!(
        "|D| Var(theta) = {:.6e} vs sandwich {:.6e}  ratio {:.4}",
        vol * tvar,
        report.covariance[(0, 0)],
        vol * tvar / report.covariance[(0, 0)]
    );
    let counts: Vec<f64> = results.iter().map(|r| r.2 as f64).collect();
    let cmean = counts.iter().sum::<f64>() / n;
    let cvar = counts.iter().map(|c| (c - cmean).powi(2)).sum::<f64>() / (n - 1.0);
    println!(
        "counts: mean {cmean:.2}, Var/|D| = {:.3} (theory 85.863)",
        cvar / vol
    );
}
