//! The linear reduction factor `M_B = min_lambda ||I - lambda B||`.
//!
//! `f(lambda) = sigma_max(I - lambda B)` is convex on `C = R^2`, so a local
//! minimum is global. The search is seeded inside the numerical range of
//! `B^{-1}` (where the minimizer lives), run coarsely from several starts in
//! parallel, and the best start is refined by restarted Nelder-Mead.
//! The dual form `min_lambda ||I - lambda B^{-1}||` is computed the same way
//! from seeds in `W(B)`; both minima coincide.

pub mod simplex;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fov::{self, FovModel, NuPair, DEFAULT_ANGLES};
use crate::gmres::run_gmres;
use crate::linop::{inner, CVector, Operator, C64};
use crate::par;
use crate::probgen;

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_EVALS: usize = 20_000;
pub const DEFAULT_TRIALS: usize = 64;
pub const DEFAULT_STEPS: usize = 8;
/// Slack used by [`minimizer_check`].
pub const LOCALIZATION_SLACK: f64 = 1e-6;

const SEED_COUNT: usize = 8;
const COARSE_BUDGET: usize = 400;
/// Ratios `||r_k|| / ||r_{k-1}||` are only trusted while `||r_{k-1}||` is
/// above this fraction of `||r_0||`.
const RATIO_FLOOR: f64 = 1e-13;

#[derive(Clone, Debug, Serialize)]
pub struct ReductionReport {
    pub m_b: f64,
    pub lambda_b: C64,
    pub m_b_dual: f64,
    pub lambda_binv: C64,
    pub starke_bound: f64,
    pub elman_bound: f64,
    pub empirical_lower: f64,
    pub eval_count: usize,
    pub nu_b: f64,
    pub nu_binv: f64,
    pub norm_b: f64,
    pub norm_binv: f64,
}

#[derive(Clone, Debug)]
pub struct MbOptions {
    pub tol: f64,
    pub max_evals: usize,
    pub angles: usize,
    pub trials: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for MbOptions {
    fn default() -> Self {
        MbOptions {
            tol: DEFAULT_TOL,
            max_evals: DEFAULT_MAX_EVALS,
            angles: DEFAULT_ANGLES,
            trials: DEFAULT_TRIALS,
            steps: DEFAULT_STEPS,
            seed: 0,
        }
    }
}

/// Everything computed on the way to a [`ReductionReport`], kept for callers
/// that need the inverse or the numerical range models.
#[derive(Clone, Debug)]
pub struct MbAnalysis {
    pub report: ReductionReport,
    pub binv: Operator,
    pub pair: NuPair,
}

/// `||I - lambda B||`, with a closed form for diagonal `B`.
pub fn reduction_objective(b: &Operator, lambda: C64) -> f64 {
    match b.diagonal_entries() {
        Some(d) => d
            .iter()
            .map(|z| (C64::new(1.0, 0.0) - lambda * z).norm())
            .fold(0.0, f64::max),
        None => b.identity_minus(lambda).norm(),
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AffineMinimum {
    pub lambda: C64,
    pub value: f64,
    pub evals: usize,
}

/// Minimize `||I - lambda B||` seeded from `seeds`, a model of `W(B^{-1})`.
pub fn minimize_affine_norm(
    b: &Operator,
    seeds: &FovModel,
    tol: f64,
    budget: usize,
) -> Result<AffineMinimum> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be positive, got {tol}")));
    }
    let f = |x: [f64; 2]| reduction_objective(b, C64::new(x[0], x[1]));

    let pts = &seeds.boundary_points;
    let centroid = seeds.centroid();
    let mut starts = vec![centroid];
    for i in 0..SEED_COUNT {
        starts.push(pts[i * pts.len() / SEED_COUNT]);
    }
    let radius = pts.iter().map(|p| p.norm()).fold(0.0, f64::max);
    let diameter = pts.iter().map(|p| (p - centroid).norm()).fold(0.0, f64::max) * 2.0;
    let scale = (0.25 * diameter).max(1e-3 * radius).max(1e-12);
    let coarse_tol = (1e-4 * scale).max(tol);
    let per_start = COARSE_BUDGET.min(budget / (2 * starts.len())).max(8);

    let coarse = par::map(&starts, |s| simplex::nelder_mead(&f, [s.re, s.im], scale, coarse_tol, per_start));
    let mut used: usize = coarse.iter().map(|r| r.evals).sum();
    let best = coarse
        .iter()
        .min_by(|a, b| a.f.total_cmp(&b.f))
        .expect("at least one start");

    let refine_scale = (10.0 * best.diameter).max(100.0 * tol).min(scale);
    let refined = simplex::minimize(&f, best.x, refine_scale, tol, budget.saturating_sub(used));
    used += refined.evals;
    if !refined.converged {
        return Err(Error::NoConvergence {
            evals: used,
            spread: refined.spread.max(refined.diameter),
        });
    }
    let (mut x, mut value) = (refined.x, refined.f);
    if best.f < value {
        x = best.x;
        value = best.f;
    }
    // lambda = 0 gives ||I|| = 1, the a-priori bound
    if value > 1.0 {
        x = [0.0, 0.0];
        value = 1.0;
    }
    Ok(AffineMinimum {
        lambda: C64::new(x[0], x[1]),
        value,
        evals: used,
    })
}

/// Starke `sqrt(1 - nu_B nu_{B^{-1}})` and Elman `sqrt(1 - nu_B^2/||B||^2)`,
/// clamped into `[0, 1]`.
pub fn classical_bounds(nu_b: f64, nu_binv: f64, norm_b: f64) -> (f64, f64) {
    let clamp = |x: f64| x.clamp(0.0, 1.0).sqrt();
    let starke = clamp(1.0 - nu_b * nu_binv);
    let elman = if norm_b > 0.0 {
        clamp(1.0 - (nu_b / norm_b).powi(2))
    } else {
        1.0
    };
    (starke, elman)
}

/// `min_lambda ||z - lambda B z|| / ||z||`, evaluated as the relative
/// component of `Bz` orthogonal to `z` (no cancellation).
pub fn one_step_reduction(b: &Operator, z: &CVector) -> Result<f64> {
    let w = b.apply(z)?;
    let wn = w.norm();
    let zn = z.norm();
    if wn == 0.0 || zn == 0.0 {
        return Ok(1.0);
    }
    let u = z / C64::from(zn);
    let orth = &w - &u * inner(&w, &u);
    Ok((orth.norm() / wn).min(1.0))
}

/// Minimizer `(z, Bz) / ||Bz||^2` of the one-step problem.
pub fn one_step_minimizer(b: &Operator, z: &CVector) -> Result<C64> {
    let w = b.apply(z)?;
    Ok(inner(z, &w) / w.norm_squared())
}

/// Lower bound on `M_B`: largest residual ratio seen over `trials` seeded
/// GMRES runs of `steps` steps, together with the one-step formula at the
/// same vectors.
pub fn empirical_mb(b: &Operator, trials: usize, steps: usize, seed: u64) -> Result<f64> {
    if trials == 0 || steps == 0 {
        return Err(Error::InvalidArgument("trials and steps must be >= 1".into()));
    }
    let n = b.dim();
    let mut rng = probgen::rng(seed);
    let starts: Vec<CVector> = (0..trials).map(|_| probgen::random_unit_vector(n, &mut rng)).collect();
    let zero = CVector::zeros(n);
    let per_trial = par::map(&starts, |z| -> Result<f64> {
        let trace = run_gmres(b, z, &zero, steps.min(n), 0.0)?;
        let r0 = trace.initial_residual_norm();
        let mut best = one_step_reduction(b, z)?;
        for k in 1..=trace.steps() {
            let prev = trace.residual_norms[k - 1];
            if prev > RATIO_FLOOR * r0 {
                best = best.max(trace.residual_norms[k] / prev);
            }
        }
        Ok(best)
    });
    per_trial
        .into_iter()
        .try_fold(0.0f64, |acc, r| r.map(|v| acc.max(v)))
}

/// Full analysis with default options.
pub fn compute_mb(b: &Operator, tol: f64) -> Result<ReductionReport> {
    let opts = MbOptions {
        tol,
        ..MbOptions::default()
    };
    Ok(analyze(b, &opts)?.report)
}

pub fn analyze(b: &Operator, opts: &MbOptions) -> Result<MbAnalysis> {
    let binv = b.inverse()?;
    let fov_b = fov::build_fov(b, opts.angles)?;
    let fov_binv = fov::build_fov(&binv, opts.angles)?;
    let pair = fov::nu_pair_from(fov_b, fov_binv)?;
    analyze_with(b, binv, pair, opts)
}

/// Same as [`analyze`] with a precomputed inverse and range models.
pub fn analyze_with(b: &Operator, binv: Operator, pair: NuPair, opts: &MbOptions) -> Result<MbAnalysis> {
    let primal = minimize_affine_norm(b, &pair.fov_binv, opts.tol, opts.max_evals)?;
    let dual = minimize_affine_norm(&binv, &pair.fov_b, opts.tol, opts.max_evals)?;
    let norm_b = pair.fov_b.norm;
    let norm_binv = pair.fov_binv.norm;
    let (starke, elman) = classical_bounds(pair.nu_b, pair.nu_binv, norm_b);
    let empirical = empirical_mb(b, opts.trials, opts.steps, opts.seed)?;
    let report = ReductionReport {
        m_b: primal.value.clamp(0.0, 1.0),
        lambda_b: primal.lambda,
        m_b_dual: dual.value.clamp(0.0, 1.0),
        lambda_binv: dual.lambda,
        starke_bound: starke,
        elman_bound: elman,
        empirical_lower: empirical,
        eval_count: primal.evals + dual.evals,
        nu_b: pair.nu_b,
        nu_binv: pair.nu_binv,
        norm_b,
        norm_binv,
    };
    Ok(MbAnalysis { report, binv, pair })
}

#[derive(Clone, Debug, Serialize)]
pub struct MinimizerCheck {
    /// Outer-polygon violation of `lambda_B` against `W(B^{-1})`.
    pub lambda_b_violation: f64,
    /// `1 + m_b - ||lambda_B B||`.
    pub lambda_b_norm_margin: f64,
    /// Violation of `lambda_{B^{-1}}` against `W(B)`, divided by
    /// `max(1, ||B||)` since `lambda_{B^{-1}}` lives on the scale of `B`.
    pub lambda_binv_violation: f64,
    pub lambda_binv_norm_margin: f64,
    pub passed: bool,
}

pub fn minimizer_check(
    report: &ReductionReport,
    fov_b: &FovModel,
    fov_binv: &FovModel,
) -> MinimizerCheck {
    let lambda_b_violation = fov_binv.outer_violation(report.lambda_b);
    let lambda_b_norm_margin = 1.0 + report.m_b - report.lambda_b.norm() * fov_b.norm;
    let lambda_binv_violation = fov_b.outer_violation(report.lambda_binv) / fov_b.norm.max(1.0);
    let lambda_binv_norm_margin = 1.0 + report.m_b - report.lambda_binv.norm() * fov_binv.norm;
    let passed = lambda_b_violation <= LOCALIZATION_SLACK
        && lambda_binv_violation <= LOCALIZATION_SLACK
        && lambda_b_norm_margin >= -LOCALIZATION_SLACK
        && lambda_binv_norm_margin >= -LOCALIZATION_SLACK;
    MinimizerCheck {
        lambda_b_violation,
        lambda_b_norm_margin,
        lambda_binv_violation,
        lambda_binv_norm_margin,
        passed,
    }
}

impl ReductionReport {
    pub fn table(&self) -> String {
        let rows = [
            ("m_b", self.m_b),
            ("lambda_b.re", self.lambda_b.re),
            ("lambda_b.im", self.lambda_b.im),
            ("m_b_dual", self.m_b_dual),
            ("lambda_binv.re", self.lambda_binv.re),
            ("lambda_binv.im", self.lambda_binv.im),
            ("starke_bound", self.starke_bound),
            ("elman_bound", self.elman_bound),
            ("empirical_lower", self.empirical_lower),
            ("nu_b", self.nu_b),
            ("nu_binv", self.nu_binv),
            ("norm_b", self.norm_b),
        ];
        let mut out = String::new();
        for (name, v) in rows {
            out.push_str(&format!("{name:<16} {v:.9}\n"));
        }
        out.push_str(&format!("{:<16} {}\n", "eval_count", self.eval_count));
        out
    }
}
