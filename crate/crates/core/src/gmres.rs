//! Instrumented GMRES.
//!
//! Besides the iterate and residual history, a run keeps the two ascending
//! orthonormal bases that appear in Moret's residual formula:
//!
//! * `t_1, ..., t_{k+1}`: the Arnoldi basis of the Krylov spaces `K_j(A, r_0)`;
//! * `z_1, ..., z_k`: an orthonormal basis of `A K_j(A, r_0)`, obtained by
//!   orthonormalizing `A t_1, A t_2, ...` in order.
//!
//! Both are built with modified Gram-Schmidt plus one full
//! reorthogonalization pass. The least-squares problem on the Hessenberg
//! matrix is solved with incrementally updated Givens rotations.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linop::{inner, CMatrix, CVector, Operator, C64, ONE, ZERO};
use crate::report;

pub const DEFAULT_RTOL: f64 = 1e-12;

/// Arnoldi declares an invariant subspace when `h_{k+1,k} <= BREAKDOWN_REL * ||A||`.
pub const BREAKDOWN_REL: f64 = 1e-13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    ZeroInitialResidual,
    Converged,
    Breakdown,
    MaxIter,
}

#[derive(Clone, Debug)]
pub struct GmresTrace {
    /// `||r_0||, ||r_1||, ..., ||r_K||` (least-squares residuals).
    pub residual_norms: Vec<f64>,
    /// `ratios[k-1] = ||r_k|| / ||r_{k-1}||`, `None` where `||r_{k-1}|| = 0`.
    pub ratios: Vec<Option<f64>>,
    /// Columns `t_1 ..= t_{K+1}` (`t_K` last when the run broke down at `K`).
    pub t_basis: CMatrix,
    /// Columns `z_1 ..= z_K`.
    pub z_basis: CMatrix,
    pub breakdown_step: Option<usize>,
    pub solution: CVector,
    /// `||b - A x_K||` evaluated explicitly after the run.
    pub true_residual: f64,
    pub stop: StopReason,
}

impl GmresTrace {
    /// Number of GMRES steps performed.
    pub fn steps(&self) -> usize {
        self.residual_norms.len() - 1
    }

    pub fn initial_residual_norm(&self) -> f64 {
        self.residual_norms[0]
    }

    /// `||r_k|| / ||r_0||` for `k = 0..=K`.
    pub fn relative_residuals(&self) -> Vec<f64> {
        let r0 = self.residual_norms[0];
        self.residual_norms
            .iter()
            .map(|r| if r0 > 0.0 { r / r0 } else { 0.0 })
            .collect()
    }

    /// Largest `k` for which both `t_{k+1}` and `z_k` exist.
    pub fn last_checkable_step(&self) -> usize {
        self.z_basis.ncols().min(self.t_basis.ncols().saturating_sub(1))
    }
}

fn orthogonalize(w: &mut CVector, basis: &[CVector], coeffs: Option<&mut [C64]>) {
    // two MGS passes; the second pass corrections are folded into the coefficients
    let mut acc = vec![ZERO; basis.len()];
    for _ in 0..2 {
        for (q, a) in basis.iter().zip(acc.iter_mut()) {
            let h = inner(w, q);
            w.axpy(-h, q, ONE);
            *a += h;
        }
    }
    if let Some(c) = coeffs {
        c.copy_from_slice(&acc);
    }
}

#[derive(Clone, Copy)]
struct Givens {
    c: f64,
    s: C64,
}

impl Givens {
    /// Rotation with `G [a; b] = [r; 0]` for real `b >= 0`.
    fn zeroing(a: C64, b: f64) -> (Givens, C64) {
        if b == 0.0 {
            return (Givens { c: 1.0, s: ZERO }, a);
        }
        let abs_a = a.norm();
        if abs_a == 0.0 {
            return (Givens { c: 0.0, s: ONE }, C64::new(b, 0.0));
        }
        let d = abs_a.hypot(b);
        let phase = a / abs_a;
        (
            Givens {
                c: abs_a / d,
                s: phase.conj() * (b / d),
            },
            phase * d,
        )
    }

    fn apply(&self, x: C64, y: C64) -> (C64, C64) {
        (x * self.c + self.s.conj() * y, -self.s * x + y * self.c)
    }
}

fn frobenius(op: &Operator) -> f64 {
    op.entries().iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Run GMRES on `A x = b` from `x0` for at most `max_iter <= dim` steps,
/// stopping at `||r_k|| <= rtol ||r_0||` or at Arnoldi breakdown.
///
/// A zero initial residual is not an error: the returned trace has no steps
/// and stop reason [`StopReason::ZeroInitialResidual`].
pub fn run_gmres(
    a: &Operator,
    b: &CVector,
    x0: &CVector,
    max_iter: usize,
    rtol: f64,
) -> Result<GmresTrace> {
    let n = a.dim();
    for v in [b, x0] {
        if v.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: v.len(),
            });
        }
    }
    if max_iter > n {
        return Err(Error::InvalidArgument(format!(
            "max_iter {max_iter} exceeds dimension {n}"
        )));
    }
    if !(rtol >= 0.0) {
        return Err(Error::InvalidArgument(format!("rtol must be nonnegative, got {rtol}")));
    }

    let r0 = b - a.entries() * x0;
    let beta = r0.norm();
    if beta == 0.0 {
        return Ok(GmresTrace {
            residual_norms: vec![0.0],
            ratios: Vec::new(),
            t_basis: CMatrix::zeros(n, 0),
            z_basis: CMatrix::zeros(n, 0),
            breakdown_step: Some(0),
            solution: x0.clone(),
            true_residual: 0.0,
            stop: StopReason::ZeroInitialResidual,
        });
    }

    let breakdown_tol = BREAKDOWN_REL * frobenius(a);
    let mut t: Vec<CVector> = vec![&r0 / C64::from(beta)];
    let mut z: Vec<CVector> = Vec::new();
    // rotated Hessenberg columns, i.e. the upper triangular factor R
    let mut r_cols: Vec<Vec<C64>> = Vec::new();
    let mut rotations: Vec<Givens> = Vec::new();
    let mut g: Vec<C64> = vec![C64::new(beta, 0.0)];
    let mut residual_norms = vec![beta];
    let mut ratios = Vec::new();
    let mut breakdown_step = None;
    let mut stop = StopReason::MaxIter;

    for k in 1..=max_iter {
        let at = a.entries() * &t[k - 1];

        let mut zk = at.clone();
        orthogonalize(&mut zk, &z, None);
        let zn = zk.norm();
        if zn > 0.0 {
            zk /= C64::from(zn);
        }
        z.push(zk);

        let mut w = at;
        let mut h = vec![ZERO; k + 1];
        orthogonalize(&mut w, &t, Some(&mut h[..k]));
        let h_next = w.norm();
        h[k] = C64::new(h_next, 0.0);

        for (i, rot) in rotations.iter().enumerate() {
            let (x, y) = rot.apply(h[i], h[i + 1]);
            h[i] = x;
            h[i + 1] = y;
        }
        let (rot, diag) = Givens::zeroing(h[k - 1], h_next);
        h[k - 1] = diag;
        h.truncate(k);
        r_cols.push(h);
        rotations.push(rot);
        let (gk, gk1) = rot.apply(g[k - 1], ZERO);
        g[k - 1] = gk;
        g.push(gk1);

        let res = gk1.norm();
        let prev = residual_norms[k - 1];
        ratios.push((prev > 0.0).then(|| res / prev));
        residual_norms.push(res);

        if h_next <= breakdown_tol {
            breakdown_step = Some(k);
            stop = StopReason::Breakdown;
            break;
        }
        t.push(w / C64::from(h_next));
        if res <= rtol * beta {
            stop = StopReason::Converged;
            break;
        }
    }

    // back substitution R y = g
    let steps = r_cols.len();
    let mut y = vec![ZERO; steps];
    for i in (0..steps).rev() {
        let mut acc = g[i];
        for j in i + 1..steps {
            acc -= r_cols[j][i] * y[j];
        }
        y[i] = if r_cols[i][i] != ZERO { acc / r_cols[i][i] } else { ZERO };
    }
    let mut solution = x0.clone();
    for (tj, yj) in t.iter().zip(y.iter()) {
        solution.axpy(*yj, tj, ONE);
    }
    let true_residual = (b - a.entries() * &solution).norm();

    Ok(GmresTrace {
        residual_norms,
        ratios,
        t_basis: CMatrix::from_columns(&t),
        z_basis: if z.is_empty() {
            CMatrix::zeros(n, 0)
        } else {
            CMatrix::from_columns(&z)
        },
        breakdown_step,
        solution,
        true_residual,
        stop,
    })
}

/// Both sides of one Moret identity and their relative gap.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MoretCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub rel_gap: f64,
}

fn moret_parts(trace: &GmresTrace, k: usize) -> Result<(CVector, CVector, f64)> {
    let max = trace.last_checkable_step();
    if k == 0 || k > max || trace.residual_norms[k - 1] == 0.0 {
        return Err(Error::StepOutOfRange { k, max });
    }
    Ok((
        trace.t_basis.column(k).into_owned(),
        trace.z_basis.column(k - 1).into_owned(),
        trace.residual_norms[k - 1],
    ))
}

fn moret_check(trace: &GmresTrace, k: usize, rhs: f64) -> MoretCheck {
    let lhs = trace.residual_norms[k];
    let floor = trace.residual_norms[0] * 1e-14;
    MoretCheck {
        lhs,
        rhs,
        rel_gap: (lhs - rhs).abs() / lhs.max(floor),
    }
}

/// `||r_k||` against `|(t_{k+1}, z_k)| ||r_{k-1}||`.
pub fn moret_step_check(trace: &GmresTrace, k: usize) -> Result<MoretCheck> {
    let (t_next, zk, prev) = moret_parts(trace, k)?;
    Ok(moret_check(trace, k, inner(&t_next, &zk).norm() * prev))
}

/// `||r_k||` against `|(t_{k+1}, (I - lambda A^{-1}) z_k)| ||r_{k-1}||`.
pub fn shifted_moret_check(
    trace: &GmresTrace,
    k: usize,
    lambda: C64,
    a_inv: &Operator,
) -> Result<MoretCheck> {
    let (t_next, zk, prev) = moret_parts(trace, k)?;
    let shifted = &zk - a_inv.apply(&zk)? * lambda;
    Ok(moret_check(trace, k, inner(&t_next, &shifted).norm() * prev))
}

/// Moret gaps for every checkable step, `None` where the step is not checkable.
pub fn moret_gaps(trace: &GmresTrace) -> Vec<Option<f64>> {
    (1..=trace.steps())
        .map(|k| moret_step_check(trace, k).ok().map(|c| c.rel_gap))
        .collect()
}

#[derive(Serialize)]
pub struct TraceReport {
    pub dim: usize,
    pub steps: usize,
    pub stop: StopReason,
    pub breakdown_step: Option<usize>,
    pub residual_norms: Vec<f64>,
    pub ratios: Vec<Option<f64>>,
    pub moret_gaps: Vec<Option<f64>>,
    pub true_residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_basis: Option<Vec<Vec<[f64; 2]>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z_basis: Option<Vec<Vec<[f64; 2]>>>,
}

fn columns(m: &CMatrix) -> Vec<Vec<[f64; 2]>> {
    m.column_iter()
        .map(|c| c.iter().map(|z| [z.re, z.im]).collect())
        .collect()
}

impl GmresTrace {
    pub fn report(&self, with_bases: bool) -> TraceReport {
        TraceReport {
            dim: self.solution.len(),
            steps: self.steps(),
            stop: self.stop,
            breakdown_step: self.breakdown_step,
            residual_norms: self.residual_norms.clone(),
            ratios: self.ratios.clone(),
            moret_gaps: moret_gaps(self),
            true_residual: self.true_residual,
            t_basis: with_bases.then(|| columns(&self.t_basis)),
            z_basis: with_bases.then(|| columns(&self.z_basis)),
        }
    }

    /// CSV with columns `k,res_norm,ratio,moret_gap`.
    pub fn to_csv(&self) -> String {
        let gaps = moret_gaps(self);
        let rows: Vec<Vec<String>> = (0..=self.steps())
            .map(|k| {
                let (ratio, gap) = if k == 0 {
                    (None, None)
                } else {
                    (self.ratios[k - 1], gaps[k - 1])
                };
                vec![
                    k.to_string(),
                    report::num(self.residual_norms[k]),
                    report::opt_num(ratio),
                    report::opt_num(gap),
                ]
            })
            .collect();
        report::csv_string(&["k", "res_norm", "ratio", "moret_gap"], &rows)
    }
}
