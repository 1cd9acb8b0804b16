//! Centralized sparse-recovery baselines on the stacked received signal.
//!
//! All antennas of all participating APs are stacked column-wise into one
//! multiple-measurement-vector problem `Y = A·X + W`, with `A = √ρ·S` and
//! row k of X equal to `a_k·[g_mk^(n)]`. Activity is common to a whole row,
//! so every solver uses the row-wise (group) soft threshold and reports the
//! mean row energy of its estimate as the detection statistic.

use ndarray::{Array1, Array2, Axis};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::ReceivedSignal;
use crate::error::{Error, Result};
use crate::scenario::{large_scale_fading, Geometry, PilotBook, Scenario, ScenarioConfig};

type CMat = Array2<Complex64>;

#[derive(Clone, Debug, PartialEq)]
pub struct MmvProblem {
    /// L×K
    pub dictionary: CMat,
    /// L×N_total
    pub observations: CMat,
    /// AP index of every observation column.
    pub column_ap: Vec<usize>,
}

impl MmvProblem {
    pub fn new(dictionary: CMat, observations: CMat) -> Result<Self> {
        if dictionary.nrows() != observations.nrows() {
            return Err(Error::DimensionMismatch {
                what: "MMV rows",
                expected: dictionary.nrows(),
                got: observations.nrows(),
            });
        }
        let n = observations.ncols();
        Ok(Self {
            dictionary,
            observations,
            column_ap: vec![0; n],
        })
    }

    /// Stack every antenna of every AP; the dictionary is `√ρ·S`.
    pub fn from_received(pilots: &PilotBook, received: &ReceivedSignal, tx_power: f64) -> Result<Self> {
        let l = pilots.pilot_len();
        let total: usize = received.y.iter().map(|y| y.ncols()).sum();
        let mut observations = CMat::zeros((l, total));
        let mut column_ap = Vec::with_capacity(total);
        let mut col = 0;
        for (ap, ym) in received.y.iter().enumerate() {
            if ym.nrows() != l {
                return Err(Error::DimensionMismatch {
                    what: "received signal rows",
                    expected: l,
                    got: ym.nrows(),
                });
            }
            for ant in ym.columns() {
                observations.column_mut(col).assign(&ant);
                column_ap.push(ap);
                col += 1;
            }
        }
        let amp = tx_power.sqrt();
        Ok(Self {
            dictionary: pilots.pilots.mapv(|z| z * amp),
            observations,
            column_ap,
        })
    }

    pub fn num_devices(&self) -> usize {
        self.dictionary.ncols()
    }

    pub fn num_columns(&self) -> usize {
        self.observations.ncols()
    }

    fn apply(&self, x: &CMat) -> CMat {
        self.dictionary.dot(x)
    }

    fn adjoint(&self, r: &CMat) -> CMat {
        hermitian(&self.dictionary).dot(r)
    }
}

fn hermitian(a: &CMat) -> CMat {
    a.t().mapv(|z| z.conj())
}

fn frob_sq(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

fn row_norms(x: &CMat) -> Array1<f64> {
    x.map_axis(Axis(1), |row| row.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Regularization weight; `None` selects `lambda_scale·σ·√(2 ln K)·√N_total`.
    pub lambda: Option<f64>,
    pub lambda_scale: f64,
    /// ISTA/FISTA iteration cap.
    pub max_iters: usize,
    /// Stop when the relative objective change falls below this.
    pub tol: f64,
    /// Proximal-gradient step; `None` selects 1/‖A‖₂².
    pub step_size: Option<f64>,
    pub amp_iters: usize,
    /// AMP threshold multiplier on the residual row rms.
    pub amp_alpha: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: None,
            lambda_scale: 1.0,
            max_iters: 200,
            tol: 1e-8,
            step_size: None,
            amp_iters: 25,
            amp_alpha: 1.5,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::invalid("max_iters", "must be at least 1"));
        }
        if self.amp_iters < 1 {
            return Err(Error::invalid("amp_iters", "must be at least 1"));
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::invalid("lambda", "must be nonnegative and finite"));
            }
        }
        if !(self.lambda_scale >= 0.0 && self.lambda_scale.is_finite()) {
            return Err(Error::invalid("lambda_scale", "must be nonnegative and finite"));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::invalid("tol", "must be nonnegative"));
        }
        if let Some(s) = self.step_size {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::invalid("step_size", "must be positive and finite"));
            }
        }
        if !(self.amp_alpha >= 0.0 && self.amp_alpha.is_finite()) {
            return Err(Error::invalid("amp_alpha", "must be nonnegative and finite"));
        }
        Ok(())
    }

    pub fn resolve_lambda(&self, noise_var: f64, num_devices: usize, num_columns: usize) -> f64 {
        self.lambda.unwrap_or_else(|| {
            self.lambda_scale
                * noise_var.sqrt()
                * (2.0 * (num_devices as f64).ln()).sqrt()
                * (num_columns as f64).sqrt()
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparseEstimate {
    /// K×N_total
    pub x_hat: CMat,
    /// ‖row k of x_hat‖² / N_total
    pub activity_stat: Vec<f64>,
    pub iterations_used: usize,
    pub objective_trace: Vec<f64>,
}

impl SparseEstimate {
    fn from_x(x_hat: CMat, iterations_used: usize, objective_trace: Vec<f64>) -> Self {
        let n = x_hat.ncols().max(1) as f64;
        let activity_stat = row_norms(&x_hat).iter().map(|r| r * r / n).collect();
        Self {
            x_hat,
            activity_stat,
            iterations_used,
            objective_trace,
        }
    }
}

/// `row · max(1 − τ/‖row‖, 0)`; a zero row stays zero.
pub fn row_soft_threshold(row: &[Complex64], tau: f64) -> Vec<Complex64> {
    let norm = row.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let scale = if norm > 0.0 { (1.0 - tau / norm).max(0.0) } else { 0.0 };
    row.iter().map(|z| z * scale).collect()
}

fn row_prox_in_place(x: &mut CMat, tau: f64) {
    for mut row in x.rows_mut() {
        let norm = row.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let scale = if norm > 0.0 { (1.0 - tau / norm).max(0.0) } else { 0.0 };
        row.mapv_inplace(|z| z * scale);
    }
}

/// `0.5·‖Y − A·X‖_F² + λ·Σ_k ‖row k of X‖`.
pub fn lasso_objective(problem: &MmvProblem, x: &CMat, lambda: f64) -> f64 {
    let residual = &problem.observations - &problem.apply(x);
    objective_from_residual(&residual, x, lambda)
}

fn objective_from_residual(residual: &CMat, x: &CMat, lambda: f64) -> f64 {
    0.5 * frob_sq(residual) + lambda * row_norms(x).sum()
}

/// Largest eigenvalue of AᴴA by power iteration on the smaller Gram matrix.
pub fn spectral_norm_sq(a: &CMat) -> f64 {
    let gram = if a.nrows() <= a.ncols() {
        a.dot(&hermitian(a))
    } else {
        hermitian(a).dot(a)
    };
    let n = gram.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut v: Array1<Complex64> = (0..n)
        .map(|i| Complex64::new(1.0 + 0.37 * (i as f64).sin(), 0.11 * (i as f64).cos()))
        .collect();
    let mut estimate = 0.0;
    for _ in 0..2000 {
        let w = gram.dot(&v);
        let norm = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let vnorm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let next = norm / vnorm;
        v = w.mapv(|z| z / norm);
        if (next - estimate).abs() <= 1e-13 * next {
            estimate = next;
            break;
        }
        estimate = next;
    }
    estimate
}

/// Step size used when none is configured: 1/‖A‖₂², shrunk by a small
/// margin since power iteration approaches the norm from below.
pub fn auto_step(problem: &MmvProblem) -> f64 {
    let l = spectral_norm_sq(&problem.dictionary);
    if l > 0.0 {
        1.0 / (l * (1.0 + 1e-6))
    } else {
        1.0
    }
}

const DIVERGENCE_WINDOW: usize = 5;
const MONOTONE_SLACK: f64 = 1e-12;

struct Setup {
    lambda: f64,
    step: f64,
}

fn setup(problem: &MmvProblem, solver: &SolverConfig, noise_var: f64) -> Result<Setup> {
    solver.validate()?;
    Ok(Setup {
        lambda: solver.resolve_lambda(noise_var, problem.num_devices(), problem.num_columns()),
        step: solver.step_size.unwrap_or_else(|| auto_step(problem)),
    })
}

fn converged(prev: f64, cur: f64, tol: f64) -> bool {
    (prev - cur).abs() <= tol * prev.abs().max(f64::MIN_POSITIVE)
}

/// Proximal-gradient (ISTA) group-LASSO solve.
///
/// `noise_var` only feeds the automatic λ.
pub fn ista(problem: &MmvProblem, solver: &SolverConfig, noise_var: f64) -> Result<SparseEstimate> {
    let Setup { lambda, step } = setup(problem, solver, noise_var)?;
    let mut x = CMat::zeros((problem.num_devices(), problem.num_columns()));
    let mut residual = problem.observations.clone();
    let mut prev = objective_from_residual(&residual, &x, lambda);
    let mut trace = Vec::new();
    let mut rising = 0;
    let mut iterations = 0;
    for it in 1..=solver.max_iters {
        iterations = it;
        let mut next = problem.adjoint(&residual);
        next.zip_mut_with(&x, |g, xv| *g = xv + *g * step);
        row_prox_in_place(&mut next, step * lambda);
        x = next;
        residual = &problem.observations - &problem.apply(&x);
        let obj = objective_from_residual(&residual, &x, lambda);
        if !obj.is_finite() {
            return Err(Error::Diverged {
                solver: "ista",
                iteration: it,
                reason: "non-finite objective".into(),
            });
        }
        trace.push(obj);
        if obj > prev * (1.0 + MONOTONE_SLACK) {
            rising += 1;
            if rising >= DIVERGENCE_WINDOW {
                return Err(Error::Diverged {
                    solver: "ista",
                    iteration: it,
                    reason: "objective increased for 5 consecutive iterations; step size too large".into(),
                });
            }
        } else {
            rising = 0;
        }
        let done = converged(prev, obj, solver.tol);
        prev = obj;
        if done {
            break;
        }
    }
    Ok(SparseEstimate::from_x(x, iterations, trace))
}

/// Nesterov momentum sequence t_1 = 1, t_{j+1} = (1 + √(1 + 4 t_j²)) / 2.
pub fn fista_momentum(len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(len);
    let mut t: f64 = 1.0;
    for _ in 0..len {
        out.push(t);
        t = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
    }
    out
}

/// Accelerated proximal gradient (FISTA).
///
/// The objective is not monotone under momentum, so divergence is flagged
/// only when it rises for 5 consecutive iterations while also exceeding the
/// objective at the zero starting point.
pub fn fista(problem: &MmvProblem, solver: &SolverConfig, noise_var: f64) -> Result<SparseEstimate> {
    let Setup { lambda, step } = setup(problem, solver, noise_var)?;
    let shape = (problem.num_devices(), problem.num_columns());
    let mut x = CMat::zeros(shape);
    let mut z = CMat::zeros(shape);
    let start = 0.5 * frob_sq(&problem.observations);
    let mut prev = start;
    let mut t: f64 = 1.0;
    let mut trace = Vec::new();
    let mut rising = 0;
    let mut iterations = 0;
    for it in 1..=solver.max_iters {
        iterations = it;
        let residual_z = &problem.observations - &problem.apply(&z);
        let mut next = problem.adjoint(&residual_z);
        next.zip_mut_with(&z, |g, zv| *g = zv + *g * step);
        row_prox_in_place(&mut next, step * lambda);
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let momentum = (t - 1.0) / t_next;
        z = next.clone();
        z.zip_mut_with(&x, |zv, xv| *zv += (*zv - xv) * momentum);
        x = next;
        t = t_next;

        let obj = lasso_objective(problem, &x, lambda);
        if !obj.is_finite() {
            return Err(Error::Diverged {
                solver: "fista",
                iteration: it,
                reason: "non-finite objective".into(),
            });
        }
        trace.push(obj);
        if obj > prev * (1.0 + MONOTONE_SLACK) {
            rising += 1;
            if rising >= DIVERGENCE_WINDOW && obj > start {
                return Err(Error::Diverged {
                    solver: "fista",
                    iteration: it,
                    reason: "objective rose above its starting value; step size too large".into(),
                });
            }
        } else {
            rising = 0;
        }
        let done = converged(prev, obj, solver.tol);
        prev = obj;
        if done {
            break;
        }
    }
    Ok(SparseEstimate::from_x(x, iterations, trace))
}

/// Multiple-measurement-vector AMP with a row soft-threshold denoiser.
///
/// The dictionary is rescaled to unit mean column norm internally and the
/// estimate is mapped back afterwards. Each iteration:
/// `τ = α·√(‖R‖_F² / L)`, `X ← η(X + AᴴR, τ)`,
/// `R ← Y − A·X + (Σ_k η'_k / L)·R`, where η'_k is the per-coordinate
/// average divergence of the row threshold at row k. The objective trace
/// holds the residual energy ‖Y − A·X‖_F² per iteration.
pub fn amp(problem: &MmvProblem, solver: &SolverConfig) -> Result<SparseEstimate> {
    solver.validate()?;
    let (l, k, n) = (problem.dictionary.nrows(), problem.num_devices(), problem.num_columns());
    let col_scale = problem
        .dictionary
        .columns()
        .into_iter()
        .map(|c| c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
        .sum::<f64>()
        / k.max(1) as f64;
    let col_scale = if col_scale > 0.0 { col_scale } else { 1.0 };
    let a = problem.dictionary.mapv(|z| z / col_scale);
    let a_h = hermitian(&a);
    let y = &problem.observations;
    // real dimension of one row, for the divergence of the row threshold
    let real_dim = 2.0 * n as f64;

    let mut x = CMat::zeros((k, n));
    let mut r = y.clone();
    let mut trace = Vec::with_capacity(solver.amp_iters);
    for it in 1..=solver.amp_iters {
        let tau = solver.amp_alpha * (frob_sq(&r) / l as f64).sqrt();
        let mut pseudo = a_h.dot(&r);
        pseudo += &x;
        let norms = row_norms(&pseudo);
        let divergence: f64 = norms
            .iter()
            .filter(|&&nr| nr > tau)
            .map(|&nr| 1.0 - (real_dim - 1.0) * tau / (real_dim * nr))
            .sum();
        row_prox_in_place(&mut pseudo, tau);
        x = pseudo;
        let onsager = divergence / l as f64;
        let mut next_r = y - &a.dot(&x);
        let residual_energy = frob_sq(&next_r);
        next_r.zip_mut_with(&r, |nr, rv| *nr += rv * onsager);
        r = next_r;
        if !residual_energy.is_finite() || r.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Diverged {
                solver: "amp",
                iteration: it,
                reason: "non-finite iterate".into(),
            });
        }
        trace.push(residual_energy);
    }
    x.mapv_inplace(|z| z / col_scale);
    Ok(SparseEstimate::from_x(x, solver.amp_iters, trace))
}

/// The same deployment with every antenna gathered at one AP in the centre.
///
/// Device positions and pilots are kept; β is recomputed from the centre
/// and the cluster size collapses to 1.
pub fn colocate(scenario: &Scenario) -> Result<Scenario> {
    let cfg = &scenario.config;
    let config = ScenarioConfig {
        num_aps: 1,
        antennas_per_ap: cfg.num_aps * cfg.antennas_per_ap,
        cluster_size: 1,
        ..cfg.clone()
    };
    config.validate()?;
    let centre = cfg.area_side_km / 2.0;
    let geometry = Geometry {
        ap_positions: vec![(centre, centre)],
        device_positions: scenario.geometry.device_positions.clone(),
    };
    let shadowing = scenario.root_stream().named(crate::rng::streams::SHADOWING);
    let beta = large_scale_fading(&geometry, &config, Some(&shadowing));
    Ok(Scenario {
        config,
        geometry,
        beta,
        pilots: scenario.pilots.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn scalar_problem(y: f64) -> MmvProblem {
        MmvProblem::new(array![[c(1.0)]], array![[c(y)]]).unwrap()
    }

    #[test]
    fn soft_threshold_cases() {
        let row = [c(3.0), c(4.0)];
        assert_eq!(row_soft_threshold(&row, 5.0), vec![c(0.0), c(0.0)]);
        assert_eq!(row_soft_threshold(&row, 2.5), vec![c(1.5), c(2.0)]);
        assert_eq!(row_soft_threshold(&row, 0.0), row.to_vec());
        assert_eq!(row_soft_threshold(&[c(0.0)], 0.0), vec![c(0.0)]);
    }

    #[test]
    fn objective_cases() {
        let p = scalar_problem(0.8);
        assert!((lasso_objective(&p, &array![[c(0.5)]], 0.3) - 0.195).abs() < 1e-15);
        assert!((lasso_objective(&p, &array![[c(0.0)]], 0.3) - 0.32).abs() < 1e-15);
        assert_eq!(lasso_objective(&p, &array![[c(0.8)]], 0.0), 0.0);
    }

    #[test]
    fn scalar_lasso_fixed_point() {
        let p = scalar_problem(0.8);
        let solver = SolverConfig {
            lambda: Some(0.3),
            ..Default::default()
        };
        for est in [ista(&p, &solver, 0.0).unwrap(), fista(&p, &solver, 0.0).unwrap()] {
            assert!((est.x_hat[[0, 0]] - c(0.5)).norm() < 1e-6);
        }
    }

    #[test]
    fn huge_lambda_shrinks_to_zero() {
        let p = scalar_problem(0.8);
        let solver = SolverConfig {
            lambda: Some(10.0),
            ..Default::default()
        };
        let est = ista(&p, &solver, 0.0).unwrap();
        assert_eq!(est.x_hat[[0, 0]], c(0.0));
        assert_eq!(est.activity_stat, vec![0.0]);
    }

    #[test]
    fn oversized_step_is_reported() {
        let p = MmvProblem::new(array![[c(1.0), c(0.5)], [c(0.2), c(1.0)]], array![[c(1.0)], [c(-2.0)]]).unwrap();
        let solver = SolverConfig {
            lambda: Some(0.0),
            step_size: Some(10.0),
            ..Default::default()
        };
        assert!(matches!(ista(&p, &solver, 0.0), Err(Error::Diverged { solver: "ista", .. })));
        assert!(matches!(fista(&p, &solver, 0.0), Err(Error::Diverged { solver: "fista", .. })));
    }

    #[test]
    fn momentum_sequence() {
        let t = fista_momentum(3);
        assert_eq!(t[0], 1.0);
        assert!((t[1] - (1.0 + 5f64.sqrt()) / 2.0).abs() < 1e-15);
        assert!(t[2] > t[1]);
    }

    #[test]
    fn power_iteration_on_known_matrix() {
        let a = array![[c(3.0), c(0.0)], [c(0.0), c(1.0)]];
        assert!((spectral_norm_sq(&a) - 9.0).abs() < 1e-9);
    }

    #[test]
    fn amp_zero_observations() {
        let p = MmvProblem::new(
            Array2::from_shape_fn((3, 4), |(i, j)| c(((i + 2 * j) % 3) as f64 - 1.0)),
            CMat::zeros((3, 2)),
        )
        .unwrap();
        let est = amp(&p, &SolverConfig::default()).unwrap();
        assert!(est.x_hat.iter().all(|z| *z == c(0.0)));
        assert!(est.activity_stat.iter().all(|s| *s == 0.0));
    }

    #[test]
    fn amp_single_iteration_orthonormal_support() {
        let l = 6;
        let eye = Array2::from_shape_fn((l, l), |(i, j)| if i == j { c(1.0) } else { c(0.0) });
        let mut x = CMat::zeros((l, 2));
        x[[3, 0]] = Complex64::new(0.7, -0.2);
        x[[3, 1]] = Complex64::new(-0.4, 1.1);
        let p = MmvProblem::new(eye.clone(), eye.dot(&x)).unwrap();
        let est = amp(
            &p,
            &SolverConfig {
                amp_iters: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let support: Vec<usize> = (0..l).filter(|&k| est.activity_stat[k] > 0.0).collect();
        assert_eq!(support, vec![3]);
    }

    #[test]
    fn colocated_preserves_antennas() {
        let cfg = ScenarioConfig {
            num_aps: 20,
            antennas_per_ap: 2,
            num_devices: 10,
            pilot_len: 8,
            ..Default::default()
        };
        let sc = Scenario::generate(&cfg).unwrap();
        let co = colocate(&sc).unwrap();
        assert_eq!(co.config.num_aps, 1);
        assert_eq!(co.config.antennas_per_ap, 40);
        assert_eq!(co.config.cluster_size, 1);
        assert_eq!(co.beta.beta.dim(), (1, 10));
        assert_eq!(co.pilots, sc.pilots);
        assert_eq!(co.geometry.device_positions, sc.geometry.device_positions);
    }

    #[test]
    fn colocated_centre_device_has_max_gain() {
        let cfg = ScenarioConfig {
            num_aps: 4,
            num_devices: 3,
            pilot_len: 4,
            ..Default::default()
        };
        let mut sc = Scenario::generate(&cfg).unwrap();
        sc.geometry.device_positions = vec![(0.1, 0.9), (0.5, 0.5), (0.6, 0.45)];
        let co = colocate(&sc).unwrap();
        let b = co.beta.beta.row(0);
        assert!(b[1] > b[2] && b[2] > b[0]);
        assert!((10.0 * b[1].log10() - -67.2).abs() < 1e-9);
    }
}
