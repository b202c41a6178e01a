//! The certification battery: every family over a grid of dimensions and
//! Schatten exponents, with per-criterion worst margins.

use std::path::Path;

use serde::Serialize;

use crate::cert::{self, CertOptions, Fault, HANSMANN_TOL, MORET_GAP_TOL};
use crate::error::{Error, Result};
use crate::fov;
use crate::gmres::{run_gmres, shifted_moret_check};
use crate::linop::{CVector, C64};
use crate::mb::{self, MbOptions};
use crate::par;
use crate::probgen::{self, Family, FamilyParams, ProblemSpec};
use crate::report::{self, num};

pub const DEFAULT_SEED: u64 = 20_240_611;
pub const HANSMANN_PS: [f64; 2] = [1.5, 2.0];
pub const SHIFTS: [(f64, f64); 3] = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)];
pub const TREND_NS: [usize; 5] = [1, 2, 4, 8, 16];
const SCHATTEN_PS: [f64; 3] = [1.0, 1.5, 2.0];
const LIMSUP_TAIL: usize = 5;

#[derive(Clone, Debug, Serialize)]
pub struct SuiteConfig {
    pub families: Vec<Family>,
    pub seed: u64,
    pub fault: Option<Fault>,
    /// Print one line per finished problem to stderr.
    #[serde(skip)]
    pub verbose: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            families: Family::SUITE.to_vec(),
            seed: DEFAULT_SEED,
            fault: None,
            verbose: false,
        }
    }
}

impl Family {
    /// Families exercised by the default suite.
    pub const SUITE: [Family; 4] = [
        Family::ShiftedIdentityPlusCompact,
        Family::UnitaryArctangent,
        Family::AccretivePlusCompact,
        Family::ConvectionDiffusionLike,
    ];
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteProblem {
    pub spec: ProblemSpec,
    pub p: f64,
}

fn params(f: impl FnOnce(&mut FamilyParams)) -> FamilyParams {
    let mut p = FamilyParams::default();
    f(&mut p);
    p
}

/// The default problem grid, filtered to `families`.
pub fn default_problems(families: &[Family], seed: u64) -> Vec<SuiteProblem> {
    let mut grid: Vec<(Family, usize, FamilyParams)> = Vec::new();
    let shifts = [[2.0, 0.0], [1.5, 0.5], [0.0, 2.0], [3.0, -1.0]];
    for (i, dim) in [10, 20, 40, 60, 80, 100, 120, 140, 160, 200, 60, 30].into_iter().enumerate() {
        let alpha = [1.0, 1.5, 2.0, 3.0][i % 4];
        let gamma = [0.5, 0.3, 0.8, 0.5][i % 4];
        grid.push((
            Family::ShiftedIdentityPlusCompact,
            dim,
            params(|p| {
                p.shift = shifts[i % 4];
                p.alpha = alpha;
                p.gamma = gamma;
            }),
        ));
    }
    for (i, dim) in [11, 21, 33, 41, 61, 81, 101, 121, 161, 199].into_iter().enumerate() {
        grid.push((
            Family::UnitaryArctangent,
            dim,
            params(|p| {
                p.alpha = [1.5, 2.0, 3.0][i % 3];
                p.gamma = [0.05, 0.2, 0.1][i % 3];
            }),
        ));
    }
    for (i, dim) in [10, 12, 16, 20, 24, 32, 40, 48, 56, 64].into_iter().enumerate() {
        grid.push((
            Family::AccretivePlusCompact,
            dim,
            params(|p| {
                p.spread = [0.3, 0.6, 1.0, 0.1][i % 4];
                p.alpha = [1.0, 2.0, 1.5][i % 3];
                p.gamma = [0.1, 0.4][i % 2];
            }),
        ));
    }
    for (i, dim) in [10, 12, 16, 20, 24, 32, 40, 48, 64, 80].into_iter().enumerate() {
        grid.push((
            Family::ConvectionDiffusionLike,
            dim,
            params(|p| {
                p.peclet = [0.0, 1.0, 10.0, 40.0][i % 4];
                p.alpha = [1.0, 2.0][i % 2];
                p.gamma = [2.0, 5.0, 1.0][i % 3];
            }),
        ));
    }
    grid.into_iter()
        .enumerate()
        .filter(|(_, (f, _, _))| families.contains(f))
        .map(|(i, (family, dim, params))| SuiteProblem {
            spec: ProblemSpec::new(family, dim, params, seed.wrapping_add(i as u64)),
            p: SCHATTEN_PS[i % SCHATTEN_PS.len()],
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct ChainMargins {
    /// `m_b + 1e-6 - empirical`.
    pub empirical: f64,
    /// `starke + 2e-6 - (m_b + 1e-6)`.
    pub starke: f64,
    /// `elman + 3e-6 - (starke + 2e-6)`.
    pub elman: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct HansmannMargin {
    pub p: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs (1 + 1e-6) - lhs`.
    pub margin: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ProblemResult {
    pub id: String,
    pub family: Family,
    pub dim: usize,
    pub p: f64,
    pub seed: u64,
    pub steps: usize,
    pub m_b: f64,
    pub nu_b: f64,
    pub norm_ainv: f64,
    pub thm_margin: f64,
    pub rate_margin: f64,
    pub approx_margin: f64,
    pub approx_vs_thm_margin: f64,
    pub moret_margin: Option<f64>,
    pub moret_vs_thm_margin: Option<f64>,
    /// Largest relative gap of the plain and shifted Moret identities.
    pub moret_gap: f64,
    pub shifted_moret_gap: f64,
    pub primal_dual_gap: f64,
    pub chain: Option<ChainMargins>,
    pub minimizer: mb::MinimizerCheck,
    pub hansmann: Vec<HansmannMargin>,
    pub rate_check: cert::RateCheck,
    pub max_tail_ratio: Option<f64>,
    pub failures: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CriterionSummary {
    pub name: String,
    pub worst: f64,
    pub problems: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrendRow {
    pub n: usize,
    pub dim: usize,
    pub nu: f64,
    pub nu_closed_form: f64,
    pub m_b: f64,
    pub strictly_monotone: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteSummary {
    pub config: SuiteConfig,
    pub problems: Vec<ProblemResult>,
    pub criteria: Vec<CriterionSummary>,
    pub trend: Option<Vec<TrendRow>>,
    pub passed: bool,
}

fn record(failures: &mut Vec<String>, ok: bool, what: &str, value: f64) {
    if !ok {
        failures.push(format!("{what} ({value:.3e})"));
    }
}

/// Run one problem through every check.
pub fn run_problem(sp: &SuiteProblem, fault: Option<Fault>) -> Result<(ProblemResult, cert::Certificate)> {
    let problem = probgen::generate(&sp.spec)?;
    let n = problem.b.dim();
    let mut rng = probgen::rng(sp.spec.seed ^ 0x9e37_79b9_7f4a_7c15);
    let r0 = probgen::random_unit_vector(n, &mut rng);
    let opts = CertOptions {
        problem_id: problem.id.clone(),
        mb: MbOptions {
            seed: sp.spec.seed,
            ..MbOptions::default()
        },
        fault,
    };
    let run = cert::certify_with(&problem.b, &problem.c, &r0, sp.p, n, &opts)?;
    let c = &run.certificate;
    let v = &c.verdicts;
    let rep = &run.analysis.report;
    let mut failures = Vec::new();

    record(&mut failures, v.thm.passed, "thm", v.thm.worst_margin);
    if v.rate_applicable {
        record(&mut failures, v.rate.passed, "rate", v.rate.worst_margin);
    }
    record(&mut failures, v.approx.passed, "approx", v.approx.worst_margin);
    record(&mut failures, v.approx_vs_thm.passed, "approx_vs_thm", v.approx_vs_thm.worst_margin);
    if let Some(m) = &v.moret {
        record(&mut failures, m.passed, "moret", m.worst_margin);
    }
    if let Some(m) = &v.moret_vs_thm {
        record(&mut failures, m.passed, "moret_vs_thm", m.worst_margin);
    }

    let trace = &run.trace;
    let r0n = trace.initial_residual_norm();
    let checkable: Vec<usize> = (1..=trace.last_checkable_step())
        .filter(|&k| trace.residual_norms[k - 1] > cert::BREAKDOWN_FLOOR * r0n)
        .collect();
    let mut moret_gap = 0.0f64;
    let mut shifted_gap = 0.0f64;
    for &k in &checkable {
        for (re, im) in SHIFTS {
            let gap = shifted_moret_check(trace, k, C64::new(re, im), &run.a_inv)?.rel_gap;
            if re == 0.0 && im == 0.0 {
                moret_gap = moret_gap.max(gap);
            } else {
                shifted_gap = shifted_gap.max(gap);
            }
        }
    }
    record(&mut failures, moret_gap <= MORET_GAP_TOL, "moret_formula", moret_gap);
    record(&mut failures, shifted_gap <= MORET_GAP_TOL, "shifted_moret", shifted_gap);

    let primal_dual_gap = (rep.m_b - rep.m_b_dual).abs();
    record(&mut failures, primal_dual_gap <= 1e-6, "primal_dual", primal_dual_gap);
    let chain = (rep.nu_b > 0.0).then(|| ChainMargins {
        empirical: rep.m_b + 1e-6 - rep.empirical_lower,
        starke: rep.starke_bound + 2e-6 - (rep.m_b + 1e-6),
        elman: rep.elman_bound + 3e-6 - (rep.starke_bound + 2e-6),
    });
    if let Some(ch) = &chain {
        let worst = ch.empirical.min(ch.starke).min(ch.elman);
        record(&mut failures, worst >= 0.0, "bound_chain", worst);
    }
    let pair = &run.analysis.pair;
    let minimizer = mb::minimizer_check(rep, &pair.fov_b, &pair.fov_binv);
    record(&mut failures, minimizer.passed, "minimizer", minimizer.lambda_b_violation);

    let mut hansmann = Vec::new();
    for p in HANSMANN_PS {
        let h = cert::hansmann_check(&problem.b, &problem.c, p, &pair.fov_b)?;
        let margin = h.rhs * (1.0 + HANSMANN_TOL) - h.lhs;
        record(&mut failures, h.passed, "hansmann", margin);
        hansmann.push(HansmannMargin {
            p,
            lhs: h.lhs,
            rhs: h.rhs,
            margin,
        });
    }
    let rate_check = cert::rate_check(c);
    record(&mut failures, rate_check.worst_margin >= -1e-12, "rate_chain", rate_check.worst_margin);
    let max_tail_ratio = cert::limsup_probe(c, LIMSUP_TAIL).ok().map(|p| p.max_tail_ratio);

    let result = ProblemResult {
        id: problem.id.clone(),
        family: sp.spec.family,
        dim: n,
        p: sp.p,
        seed: sp.spec.seed,
        steps: c.steps,
        m_b: c.inputs.m_b,
        nu_b: rep.nu_b,
        norm_ainv: c.inputs.norm_ainv,
        thm_margin: v.thm.worst_margin,
        rate_margin: v.rate.worst_margin,
        approx_margin: v.approx.worst_margin,
        approx_vs_thm_margin: v.approx_vs_thm.worst_margin,
        moret_margin: v.moret.as_ref().map(|m| m.worst_margin),
        moret_vs_thm_margin: v.moret_vs_thm.as_ref().map(|m| m.worst_margin),
        moret_gap,
        shifted_moret_gap: shifted_gap,
        primal_dual_gap,
        chain,
        minimizer,
        hansmann,
        rate_check,
        max_tail_ratio,
        failures,
    };
    Ok((result, run.certificate))
}

/// `nu_n`, `m_b(n)` and GMRES monotonicity for the arctangent truncations.
pub fn arctangent_trend(seed: u64) -> Result<Vec<TrendRow>> {
    let rows = par::map(&TREND_NS, |&n| -> Result<TrendRow> {
        let b = probgen::unitary_arctangent(n)?;
        let dim = b.dim();
        let a = mb::analyze(
            &b,
            &MbOptions {
                seed,
                ..MbOptions::default()
            },
        )?;
        let mut rng = probgen::rng(seed.wrapping_add(n as u64));
        let r0 = probgen::random_unit_vector(dim, &mut rng);
        let trace = run_gmres(&b, &r0, &CVector::zeros(dim), dim, cert::BREAKDOWN_FLOOR)?;
        let r = &trace.residual_norms;
        let strictly_monotone = (1..r.len()).all(|k| r[k] < r[k - 1]);
        Ok(TrendRow {
            n,
            dim,
            nu: a.report.nu_b,
            nu_closed_form: probgen::unitary_arctangent_nu(n),
            m_b: a.report.m_b,
            strictly_monotone,
        })
    });
    rows.into_iter().collect()
}

fn criterion(name: &str, values: impl Iterator<Item = f64>, pass: impl Fn(f64) -> bool) -> CriterionSummary {
    let mut worst = f64::INFINITY;
    let mut count = 0;
    for v in values {
        count += 1;
        if v < worst || v.is_nan() {
            worst = v;
        }
    }
    CriterionSummary {
        name: name.to_string(),
        worst,
        problems: count,
        passed: count == 0 || pass(worst),
    }
}

fn criteria(problems: &[ProblemResult]) -> Vec<CriterionSummary> {
    let nonneg = |x: f64| x >= 0.0;
    let it = || problems.iter();
    vec![
        criterion("thm_bound", it().map(|p| p.thm_margin), nonneg),
        criterion(
            "rate_bound",
            it().filter(|p| p.p >= 1.0).map(|p| p.rate_margin),
            nonneg,
        ),
        criterion("approx_bound", it().map(|p| p.approx_margin), nonneg),
        criterion("approx_vs_thm", it().map(|p| p.approx_vs_thm_margin), nonneg),
        criterion("moret_bound", it().filter_map(|p| p.moret_margin), nonneg),
        criterion("moret_vs_thm", it().filter_map(|p| p.moret_vs_thm_margin), nonneg),
        criterion("moret_formula", it().map(|p| MORET_GAP_TOL - p.moret_gap), nonneg),
        criterion(
            "shifted_moret_formula",
            it().map(|p| MORET_GAP_TOL - p.shifted_moret_gap),
            nonneg,
        ),
        criterion("primal_dual", it().map(|p| 1e-6 - p.primal_dual_gap), nonneg),
        criterion(
            "bound_chain",
            it().filter_map(|p| p.chain.as_ref().map(|c| c.empirical.min(c.starke).min(c.elman))),
            nonneg,
        ),
        criterion(
            "minimizer_localization",
            it().map(|p| {
                let m = &p.minimizer;
                (mb::LOCALIZATION_SLACK - m.lambda_b_violation)
                    .min(mb::LOCALIZATION_SLACK - m.lambda_binv_violation)
                    .min(m.lambda_b_norm_margin + mb::LOCALIZATION_SLACK)
                    .min(m.lambda_binv_norm_margin + mb::LOCALIZATION_SLACK)
            }),
            nonneg,
        ),
        criterion(
            "hansmann",
            it().flat_map(|p| p.hansmann.iter().map(|h| h.margin)),
            nonneg,
        ),
        criterion("rate_chain", it().map(|p| p.rate_check.worst_margin), |x| x >= -1e-12),
    ]
}

/// Run the battery. With `out`, writes `summary.json`, `summary.txt`, one
/// certificate CSV and JSON per problem and, when the arctangent family is
/// selected, `unitary_arctangent_trend.csv`.
pub fn run_suite(config: &SuiteConfig, out: Option<&Path>) -> Result<SuiteSummary> {
    let problems = default_problems(&config.families, config.seed);
    if problems.is_empty() {
        return Err(Error::InvalidArgument("no suite problems match the selected families".into()));
    }
    let outcomes = par::map(&problems, |sp| {
        let r = run_problem(sp, config.fault);
        if config.verbose {
            match &r {
                Ok((res, _)) => eprintln!(
                    "{} p={} steps={} {}",
                    res.id,
                    res.p,
                    res.steps,
                    if res.failures.is_empty() { "ok" } else { "VIOLATION" }
                ),
                Err(e) => eprintln!("{}: {e}", sp.spec.id()),
            }
        }
        r
    });
    let mut results = Vec::with_capacity(outcomes.len());
    let mut certs = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        let (r, c) = o?;
        results.push(r);
        certs.push(c);
    }
    let trend = if config.families.contains(&Family::UnitaryArctangent) {
        Some(arctangent_trend(config.seed)?)
    } else {
        None
    };
    let criteria = criteria(&results);
    let trend_ok = trend.as_ref().is_none_or(|rows| trend_passes(rows));
    let passed = criteria.iter().all(|c| c.passed) && results.iter().all(|r| r.failures.is_empty()) && trend_ok;
    let summary = SuiteSummary {
        config: config.clone(),
        problems: results,
        criteria,
        trend,
        passed,
    };
    if let Some(dir) = out {
        write_outputs(dir, &summary, &certs)?;
    }
    Ok(summary)
}

/// Closed-form `nu_n` to 1e-8, nondecreasing `m_b(n)`, `m_b(16) >= 0.9` and
/// strictly monotone GMRES runs.
pub fn trend_passes(rows: &[TrendRow]) -> bool {
    let nu_ok = rows.iter().all(|r| (r.nu - r.nu_closed_form).abs() <= 1e-8);
    let mono = rows.windows(2).all(|w| w[1].m_b >= w[0].m_b - 1e-9);
    let last = rows.iter().find(|r| r.n == 16).is_none_or(|r| r.m_b >= 0.9);
    nu_ok && mono && last && rows.iter().all(|r| r.strictly_monotone)
}

fn write_outputs(dir: &Path, summary: &SuiteSummary, certs: &[cert::Certificate]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let problem_dir = dir.join("problems");
    std::fs::create_dir_all(&problem_dir).map_err(|e| Error::io(&problem_dir, e))?;
    for c in certs {
        let path = problem_dir.join(format!("{}.csv", c.problem_id));
        std::fs::write(&path, c.to_csv()).map_err(|e| Error::io(&path, e))?;
        report::write_json(&problem_dir.join(format!("{}.json", c.problem_id)), c)?;
    }
    report::write_json(&dir.join("summary.json"), summary)?;
    let path = dir.join("summary.txt");
    std::fs::write(&path, summary.table()).map_err(|e| Error::io(&path, e))?;
    let rows: Vec<Vec<String>> = summary
        .problems
        .iter()
        .map(|p| {
            vec![
                p.id.clone(),
                p.family.name().to_string(),
                p.dim.to_string(),
                num(p.p),
                p.steps.to_string(),
                num(p.m_b),
                num(p.thm_margin),
                num(p.rate_margin),
                num(p.moret_gap),
                p.failures.is_empty().to_string(),
            ]
        })
        .collect();
    report::write_csv(
        &dir.join("problems.csv"),
        &["id", "family", "dim", "p", "steps", "m_b", "thm_margin", "rate_margin", "moret_gap", "passed"],
        &rows,
    )?;
    if let Some(trend) = &summary.trend {
        let rows: Vec<Vec<String>> = trend
            .iter()
            .map(|r| {
                vec![
                    r.n.to_string(),
                    r.dim.to_string(),
                    num(r.nu),
                    num(r.nu_closed_form),
                    num(r.m_b),
                    r.strictly_monotone.to_string(),
                ]
            })
            .collect();
        report::write_csv(
            &dir.join("unitary_arctangent_trend.csv"),
            &["n", "dim", "nu", "nu_closed_form", "m_b", "strictly_monotone"],
            &rows,
        )?;
    }
    Ok(())
}

impl SuiteSummary {
    /// Human-readable table of criteria, failures and the arctangent trend.
    pub fn table(&self) -> String {
        let mut out = format!("{:<24} {:>14} {:>9} {:>7}\n", "criterion", "worst margin", "problems", "status");
        for c in &self.criteria {
            out.push_str(&format!(
                "{:<24} {:>14.6e} {:>9} {:>7}\n",
                c.name,
                c.worst,
                c.problems,
                if c.passed { "pass" } else { "FAIL" }
            ));
        }
        for p in self.problems.iter().filter(|p| !p.failures.is_empty()) {
            out.push_str(&format!("violation {}: {}\n", p.id, p.failures.join(", ")));
        }
        if let Some(trend) = &self.trend {
            out.push_str(&format!(
                "\n{:>3} {:>5} {:>12} {:>12} {:>12} {:>9}\n",
                "n", "dim", "nu", "1/sqrt(1+n2)", "m_b", "monotone"
            ));
            for r in trend {
                out.push_str(&format!(
                    "{:>3} {:>5} {:>12.9} {:>12.9} {:>12.9} {:>9}\n",
                    r.n, r.dim, r.nu, r.nu_closed_form, r.m_b, r.strictly_monotone
                ));
            }
        }
        out.push_str(&format!(
            "\n{} problems, {}\n",
            self.problems.len(),
            if self.passed { "all bounds hold" } else { "BOUND VIOLATION" }
        ));
        out
    }
}

/// Surface the fov module's own zero-membership assertion for the accretive
/// family as a suite precondition.
pub fn accretive_precondition(spec: &ProblemSpec) -> Result<bool> {
    let problem = probgen::generate(spec)?;
    Ok(fov::zero_membership(&problem.b)?.0 == fov::ZeroMembership::StrictlyOutside)
}
