//! Certification of GMRES residuals against the perturbation bounds.
//!
//! For `A = B + C` and a GMRES run on `A` from `r0`, every step `k` is checked
//! against
//!
//! * `thm[k]    = prod_{j<=k} (M + (1 + M) ||A^{-1}|| sigma_j(C))`,
//! * `rate[k]   = M + k^{-1/p} (1 + M) ||A^{-1}|| ||C||_{S_p}` (compared with
//!   `observed[k]^{1/k}`),
//! * `approx[k] = prod_{j<=k} sigma_j(I - lambda A^{-1})` at the dual
//!   minimizer `lambda = lambda_{B^{-1}}`,
//! * `moret[k]  = prod_{j<=k} sigma_j(A^{-1}) sigma_j(C)` when `B` is a
//!   multiple of the identity.
//!
//! `M` is `max(m_b, m_b_dual)`: both are values of the objective at computed
//! points, hence upper estimates of the infimum, and the larger one keeps
//! `approx <= thm` exact for the computed `lambda`.
//!
//! Products are accumulated in log space. Steps are compared only while
//! `||r_{k-1}|| > 1e-13 ||r_0||`, and observed values at or below
//! [`ZERO_FLOOR`] count as zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fov::FovModel;
use crate::gmres::{moret_gaps, run_gmres, GmresTrace};
use crate::linop::{schatten_norm, CVector, Operator, SingularSpectrum, C64, INV_REL_EPS};
use crate::mb::{self, MbAnalysis, MbOptions, ReductionReport};
use crate::report::{csv_string, num, opt_num};

pub const THM_TOL: f64 = 1e-8;
pub const RATE_TOL: f64 = 1e-8;
pub const APPROX_TOL: f64 = 1e-8;
pub const APPROX_THM_TOL: f64 = 1e-6;
pub const MORET_TOL: f64 = 1e-8;
pub const MORET_GAP_TOL: f64 = 1e-8;
pub const HANSMANN_TOL: f64 = 1e-6;
/// Relative residuals at or below this level are roundoff.
pub const ZERO_FLOOR: f64 = 1e-13;
/// Steps with `||r_{k-1}|| <= BREAKDOWN_FLOOR ||r_0||` are not compared.
pub const BREAKDOWN_FLOOR: f64 = 1e-13;
/// Log-space products below `e^{-700}` are reported as 0.
pub const LOG_UNDERFLOW: f64 = -700.0;

/// Deliberate defects for self-testing the violation path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// Flip the sign of the perturbation term in the product factors.
    ThmSign,
}

#[derive(Clone, Debug, Serialize)]
pub struct Verdict {
    pub passed: bool,
    /// Smallest `effective_bound - observed` over compared steps.
    pub worst_margin: f64,
    pub worst_step: Option<usize>,
    pub tolerance: f64,
    pub compared: usize,
}

impl Verdict {
    fn from_margins(margins: impl IntoIterator<Item = (usize, f64)>, tolerance: f64) -> Verdict {
        let mut worst = (None, f64::INFINITY);
        let mut compared = 0;
        for (k, m) in margins {
            compared += 1;
            if m < worst.1 || m.is_nan() {
                worst = (Some(k), m);
            }
        }
        Verdict {
            passed: !(worst.1 < 0.0) && !worst.1.is_nan(),
            worst_margin: worst.1,
            worst_step: worst.0,
            tolerance,
            compared,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Verdicts {
    pub thm: Verdict,
    pub rate: Verdict,
    /// The rate form is a theorem only for `p >= 1`.
    pub rate_applicable: bool,
    pub approx: Verdict,
    pub approx_vs_thm: Verdict,
    pub moret: Option<Verdict>,
    pub moret_vs_thm: Option<Verdict>,
    pub moret_formula: Verdict,
}

impl Verdicts {
    pub fn all_passed(&self) -> bool {
        self.thm.passed
            && (self.rate.passed || !self.rate_applicable)
            && self.approx.passed
            && self.approx_vs_thm.passed
            && self.moret.as_ref().is_none_or(|v| v.passed)
            && self.moret_vs_thm.as_ref().is_none_or(|v| v.passed)
            && self.moret_formula.passed
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CertInputs {
    pub dim: usize,
    /// `M` used in the product and rate bounds.
    pub m_b: f64,
    pub lambda_binv: C64,
    pub norm_ainv: f64,
    pub sigma_c: SingularSpectrum,
    pub p: f64,
    pub schatten_p: f64,
    pub fault: Option<Fault>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Certificate {
    pub problem_id: String,
    pub k_max: usize,
    pub steps: usize,
    pub breakdown_step: Option<usize>,
    /// Entries are indexed by `k = 0..=steps`.
    pub observed: Vec<f64>,
    pub thm_bound: Vec<f64>,
    /// `None` at `k = 0`.
    pub rate_bound: Vec<Option<f64>>,
    pub approx_bound: Vec<f64>,
    pub moret_bound: Option<Vec<f64>>,
    /// Whether step `k` is compared (`||r_{k-1}||` above the breakdown floor).
    pub compared: Vec<bool>,
    pub moret_gaps: Vec<Option<f64>>,
    pub underflow: bool,
    pub inputs: CertInputs,
    pub reduction: ReductionReport,
    pub verdicts: Verdicts,
}

#[derive(Clone, Debug)]
pub struct CertOptions {
    pub problem_id: String,
    pub mb: MbOptions,
    pub fault: Option<Fault>,
}

impl Default for CertOptions {
    fn default() -> Self {
        CertOptions {
            problem_id: "adhoc".into(),
            mb: MbOptions::default(),
            fault: None,
        }
    }
}

/// A certificate plus the intermediate objects other checks reuse.
#[derive(Clone, Debug)]
pub struct CertRun {
    pub certificate: Certificate,
    pub trace: GmresTrace,
    pub analysis: MbAnalysis,
    pub a: Operator,
    pub a_inv: Operator,
}

/// Running products `prod_{j<=k} f_j` for `k = 0..=len`, in log space.
/// Returns the products and whether any entry underflowed.
pub fn log_products(factors: &[f64]) -> (Vec<f64>, bool) {
    let mut out = Vec::with_capacity(factors.len() + 1);
    out.push(1.0);
    let mut acc = 0.0f64;
    let mut underflow = false;
    for &f in factors {
        acc += f.ln();
        if acc.is_finite() && acc < LOG_UNDERFLOW {
            underflow = true;
            out.push(0.0);
        } else {
            out.push(acc.exp());
        }
    }
    (out, underflow)
}

/// Factors `M + (1 + M) ||A^{-1}|| sigma_j(C)` for `j = 1..=k_max`.
pub fn thm_factors(m: f64, norm_ainv: f64, sigma_c: &SingularSpectrum, k_max: usize, fault: Option<Fault>) -> Vec<f64> {
    (1..=k_max)
        .map(|j| {
            let pert = (1.0 + m) * norm_ainv * sigma_c.sigma(j);
            match fault {
                None => m + pert,
                Some(Fault::ThmSign) => (m - pert).max(0.0),
            }
        })
        .collect()
}

/// `M + k^{-1/p} (1 + M) ||A^{-1}|| ||C||_{S_p}`.
pub fn rate_value(m: f64, norm_ainv: f64, schatten_p: f64, p: f64, k: usize) -> f64 {
    m + (k as f64).powf(-1.0 / p) * (1.0 + m) * norm_ainv * schatten_p
}

/// Moret's bound `prod_{j<=k} sigma_j(A^{-1}) sigma_j(A - lambda I)`,
/// `k = 0..=k_max`.
pub fn moret_product_bound(a: &Operator, lambda: C64, k_max: usize) -> Result<Vec<f64>> {
    let sa = a.singular_values();
    check_invertible(&sa)?;
    let c = a.sub(&Operator::scaled_identity(a.dim(), lambda))?;
    Ok(moret_from_spectra(&sa, &c.singular_values(), k_max))
}

fn moret_from_spectra(sa: &SingularSpectrum, sc: &SingularSpectrum, k_max: usize) -> Vec<f64> {
    let n = sa.len();
    let factors: Vec<f64> = (1..=k_max)
        .map(|j| {
            let inv = if j <= n { 1.0 / sa.sigma(n + 1 - j) } else { 0.0 };
            inv * sc.sigma(j)
        })
        .collect();
    log_products(&factors).0
}

fn check_invertible(s: &SingularSpectrum) -> Result<()> {
    let threshold = INV_REL_EPS * s.largest();
    if !(s.smallest() > threshold) {
        return Err(Error::NearSingular {
            sigma_min: s.smallest(),
            threshold,
        });
    }
    Ok(())
}

/// Zero out singular values below the numerical-rank cutoff
/// `n * eps * sigma_1`, so an exactly low-rank perturbation has exactly
/// vanishing tail factors.
pub fn numerical_rank_spectrum(s: &SingularSpectrum) -> SingularSpectrum {
    let cutoff = s.len() as f64 * f64::EPSILON * s.largest();
    SingularSpectrum::new(
        s.values()
            .iter()
            .map(|&x| if x <= cutoff { 0.0 } else { x })
            .collect(),
    )
}

fn bound_margin(bound: f64, observed: f64, tol: f64) -> f64 {
    (bound * (1.0 + tol)).max(ZERO_FLOOR) - observed
}

pub fn certify(b: &Operator, c: &Operator, r0: &CVector, p: f64, k_max: usize) -> Result<Certificate> {
    Ok(certify_with(b, c, r0, p, k_max, &CertOptions::default())?.certificate)
}

pub fn certify_with(
    b: &Operator,
    c: &Operator,
    r0: &CVector,
    p: f64,
    k_max: usize,
    opts: &CertOptions,
) -> Result<CertRun> {
    if !(p > 0.0) || !p.is_finite() {
        return Err(Error::InvalidP(p));
    }
    let a = b.add(c)?;
    let n = a.dim();
    if r0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: r0.len(),
        });
    }
    if k_max == 0 || k_max > n {
        return Err(Error::InvalidArgument(format!("k_max must be in 1..={n}, got {k_max}")));
    }
    let sa = a.singular_values();
    let a_inv = a.inverse_checked(&sa)?;
    let norm_ainv = 1.0 / sa.smallest();
    let analysis = mb::analyze(b, &opts.mb)?;
    let rep = &analysis.report;
    let m = rep.m_b.max(rep.m_b_dual);
    let sigma_c = numerical_rank_spectrum(&c.singular_values());
    let schatten_p = schatten_norm(&sigma_c, p)?;

    let trace = run_gmres(&a, r0, &CVector::zeros(n), k_max, BREAKDOWN_FLOOR)?;
    let steps = trace.steps();
    let observed = trace.relative_residuals();
    let r0n = trace.initial_residual_norm();
    let compared: Vec<bool> = (0..=steps)
        .map(|k| k >= 1 && trace.residual_norms[k - 1] > BREAKDOWN_FLOOR * r0n)
        .collect();

    let (thm_bound, uf1) = log_products(&thm_factors(m, norm_ainv, &sigma_c, steps, opts.fault));
    let rate_bound: Vec<Option<f64>> = (0..=steps)
        .map(|k| (k >= 1).then(|| rate_value(m, norm_ainv, schatten_p, p, k)))
        .collect();
    let approx_sigma = numerical_rank_spectrum(&a_inv.identity_minus(rep.lambda_binv).singular_values());
    let (approx_bound, uf2) = log_products(&(1..=steps).map(|j| approx_sigma.sigma(j)).collect::<Vec<_>>());
    let moret_bound = b
        .as_scalar_identity()
        .map(|_| moret_from_spectra(&sa, &sigma_c, steps));

    let ks = || (1..=steps).filter(|&k| compared[k]);
    let thm = Verdict::from_margins(ks().map(|k| (k, bound_margin(thm_bound[k], observed[k], THM_TOL))), THM_TOL);
    let rate = Verdict::from_margins(
        ks().map(|k| {
            let kf = k as f64;
            let bound = (rate_bound[k].expect("k >= 1") * (1.0 + RATE_TOL)).max(ZERO_FLOOR.powf(1.0 / kf));
            (k, bound - observed[k].powf(1.0 / kf))
        }),
        RATE_TOL,
    );
    let approx = Verdict::from_margins(
        ks().map(|k| (k, bound_margin(approx_bound[k], observed[k], APPROX_TOL))),
        APPROX_TOL,
    );
    let approx_vs_thm = Verdict::from_margins(
        (1..=steps).map(|k| (k, bound_margin(thm_bound[k], approx_bound[k], APPROX_THM_TOL))),
        APPROX_THM_TOL,
    );
    let moret = moret_bound.as_ref().map(|mb| {
        Verdict::from_margins(ks().map(|k| (k, bound_margin(mb[k], observed[k], MORET_TOL))), MORET_TOL)
    });
    let moret_vs_thm = moret_bound.as_ref().map(|mb| {
        Verdict::from_margins(
            (1..=steps).map(|k| (k, bound_margin(thm_bound[k], mb[k], MORET_TOL))),
            MORET_TOL,
        )
    });
    let gaps = moret_gaps(&trace);
    let moret_formula = Verdict::from_margins(
        ks().filter_map(|k| gaps[k - 1].map(|g| (k, MORET_GAP_TOL - g))),
        MORET_GAP_TOL,
    );

    let certificate = Certificate {
        problem_id: opts.problem_id.clone(),
        k_max,
        steps,
        breakdown_step: trace.breakdown_step,
        observed,
        thm_bound,
        rate_bound,
        approx_bound,
        moret_bound,
        compared,
        moret_gaps: gaps,
        underflow: uf1 || uf2,
        inputs: CertInputs {
            dim: n,
            m_b: m,
            lambda_binv: rep.lambda_binv,
            norm_ainv,
            sigma_c,
            p,
            schatten_p,
            fault: opts.fault,
        },
        reduction: rep.clone(),
        verdicts: Verdicts {
            thm,
            rate,
            rate_applicable: p >= 1.0,
            approx,
            approx_vs_thm,
            moret,
            moret_vs_thm,
            moret_formula,
        },
    };
    Ok(CertRun {
        certificate,
        trace,
        analysis,
        a,
        a_inv,
    })
}

impl Certificate {
    pub fn passed(&self) -> bool {
        self.verdicts.all_passed()
    }

    pub fn to_csv(&self) -> String {
        let header = [
            "k",
            "observed",
            "thm_bound",
            "rate_bound",
            "approx_bound",
            "moret_bound",
            "thm_margin",
            "rate_margin",
            "approx_margin",
            "moret_margin",
            "compared",
        ];
        let rows: Vec<Vec<String>> = (0..=self.steps)
            .map(|k| {
                let obs = self.observed[k];
                let moret = self.moret_bound.as_ref().map(|m| m[k]);
                let rate_margin = self.rate_bound[k].map(|r| r - obs.powf(1.0 / k as f64));
                vec![
                    k.to_string(),
                    num(obs),
                    num(self.thm_bound[k]),
                    opt_num(self.rate_bound[k]),
                    num(self.approx_bound[k]),
                    opt_num(moret),
                    num(self.thm_bound[k] - obs),
                    opt_num(rate_margin),
                    num(self.approx_bound[k] - obs),
                    opt_num(moret.map(|m| m - obs)),
                    self.compared[k].to_string(),
                ]
            })
            .collect();
        csv_string(&header, &rows)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RateCheck {
    /// Smallest normalized slack over all three inequalities and all `k`.
    pub worst_margin: f64,
    /// `min_k (AM_k - GM_k) / max(AM_k, tiny)`.
    pub am_gm: f64,
    /// `min_k` Holder slack, `None` when `p < 1`.
    pub holder: Option<f64>,
    /// `min_k (rate_k - AM_k) / max(rate_k, tiny)`.
    pub am_rate: Option<f64>,
}

/// Checks the intermediate steps of the rate bound: geometric mean of the
/// product factors against their arithmetic mean, then Holder's inequality
/// `sum_{j<=k} sigma_j <= ||sigma||_p k^{(p-1)/p}` (for `p >= 1`).
pub fn rate_check(cert: &Certificate) -> RateCheck {
    let inp = &cert.inputs;
    let m = inp.m_b;
    let factors = thm_factors(m, inp.norm_ainv, &inp.sigma_c, cert.steps, None);
    let tiny = 1e-300;
    let mut am_gm = f64::INFINITY;
    let mut holder: Option<f64> = None;
    let mut am_rate: Option<f64> = None;
    let (mut log_sum, mut sum, mut sigma_sum) = (0.0f64, 0.0f64, 0.0f64);
    for k in 1..=cert.steps {
        let f = factors[k - 1];
        log_sum += f.ln();
        sum += f;
        sigma_sum += inp.sigma_c.sigma(k);
        let kf = k as f64;
        let am = sum / kf;
        let gm = (log_sum / kf).exp();
        am_gm = am_gm.min((am - gm) / am.max(tiny));
        if inp.p >= 1.0 {
            let rhs = inp.schatten_p * kf.powf((inp.p - 1.0) / inp.p);
            let h = (rhs - sigma_sum) / rhs.max(tiny);
            holder = Some(holder.map_or(h, |x| x.min(h)));
            let rate = rate_value(m, inp.norm_ainv, inp.schatten_p, inp.p, k);
            let r = (rate - am) / rate.max(tiny);
            am_rate = Some(am_rate.map_or(r, |x| x.min(r)));
        }
    }
    let worst_margin = [Some(am_gm), holder, am_rate]
        .into_iter()
        .flatten()
        .fold(f64::INFINITY, f64::min);
    RateCheck {
        worst_margin,
        am_gm,
        holder,
        am_rate,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LimsupProbe {
    pub max_tail_ratio: f64,
    pub m_b: f64,
    pub tail_ratios: Vec<f64>,
}

/// Largest residual ratio over the last `tail` compared steps.
pub fn limsup_probe(cert: &Certificate, tail: usize) -> Result<LimsupProbe> {
    let ratios: Vec<f64> = (1..=cert.steps)
        .filter(|&k| cert.compared[k])
        .map(|k| cert.observed[k] / cert.observed[k - 1])
        .collect();
    if tail == 0 || ratios.len() < tail {
        return Err(Error::InsufficientSteps {
            needed: tail.max(1),
            available: ratios.len(),
        });
    }
    let tail_ratios = ratios[ratios.len() - tail..].to_vec();
    Ok(LimsupProbe {
        max_tail_ratio: tail_ratios.iter().copied().fold(0.0, f64::max),
        m_b: cert.inputs.m_b,
        tail_ratios,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct HansmannReport {
    pub p: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub passed: bool,
    pub eigenvalues: usize,
    pub max_distance: f64,
}

/// `sum_{lambda in sigma(A)} dist(lambda, W(B))^p <= ||C||_{S_p}^p`, with
/// `W(B)` taken as its outer polygon enlarged by the model tolerance.
pub fn hansmann_check(b: &Operator, c: &Operator, p: f64, fov_b: &FovModel) -> Result<HansmannReport> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(Error::InvalidP(p));
    }
    let a = b.add(c)?;
    let eigs = a.eigenvalues();
    let dists: Vec<f64> = eigs
        .iter()
        .map(|&z| (fov_b.distance_to_outer(z) - fov_b.tol).max(0.0))
        .collect();
    let lhs: f64 = dists.iter().map(|d| d.powf(p)).sum();
    let rhs = schatten_norm(&c.singular_values(), p)?.powf(p);
    Ok(HansmannReport {
        p,
        lhs,
        rhs,
        passed: lhs <= rhs * (1.0 + HANSMANN_TOL),
        eigenvalues: eigs.len(),
        max_distance: dists.iter().copied().fold(0.0, f64::max),
    })
}
