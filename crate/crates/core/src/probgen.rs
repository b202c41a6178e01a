//! Seeded generators for the operator families used in certification runs.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`) seeded with
//! `seed_from_u64(seed)`; complex normals are `(x + i y) / sqrt(2)` with
//! `x, y` from `rand_distr::StandardNormal`. Random unitaries are the Q factor
//! of a Householder QR of such a matrix, with the phases of `diag(R)` folded
//! into Q so the result is uniquely determined by the input matrix. Given the
//! same crate versions this is bit-reproducible across platforms.

use std::f64::consts::PI;
use std::path::PathBuf;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fov;
use crate::linop::{read_matrix_market, CMatrix, CVector, Operator, C64};

/// Number of `gamma <- gamma / 2` retries before giving up on invertibility.
pub const MAX_RETRIES: usize = 6;
/// Required `sigma_min(A) > INVERTIBLE_REL * sigma_max(A)`.
pub const INVERTIBLE_REL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Family {
    UnitaryArctangent,
    ShiftedIdentityPlusCompact,
    AccretivePlusCompact,
    ConvectionDiffusionLike,
    CustomFile,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::UnitaryArctangent => "unitary_arctangent",
            Family::ShiftedIdentityPlusCompact => "shifted_identity_plus_compact",
            Family::AccretivePlusCompact => "accretive_plus_compact",
            Family::ConvectionDiffusionLike => "convection_diffusion_like",
            Family::CustomFile => "custom_file",
        }
    }
}

/// Family parameters; fields a family does not use are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyParams {
    /// Singular value decay exponent of C: `sigma_j = gamma * j^-alpha`.
    pub alpha: f64,
    pub gamma: f64,
    /// Shift `lambda` of `B = lambda I` as `[re, im]`.
    pub shift: [f64; 2],
    pub spread: f64,
    pub peclet: f64,
    pub b_path: Option<PathBuf>,
    pub c_path: Option<PathBuf>,
}

impl Default for FamilyParams {
    fn default() -> Self {
        FamilyParams {
            alpha: 2.0,
            gamma: 0.1,
            shift: [2.0, 0.0],
            spread: 0.3,
            peclet: 1.0,
            b_path: None,
            c_path: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub family: Family,
    pub dim: usize,
    pub params: FamilyParams,
    pub seed: u64,
}

impl ProblemSpec {
    pub fn new(family: Family, dim: usize, params: FamilyParams, seed: u64) -> Self {
        ProblemSpec {
            family,
            dim,
            params,
            seed,
        }
    }

    /// Stable identifier: family name plus the first 12 hex digits of the
    /// SHA-256 of the spec's JSON form.
    pub fn id(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serializes");
        let digest = Sha256::digest(json.as_bytes());
        let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
        format!("{}-{}-{hex}", self.family.name(), self.dim)
    }
}

/// A generated splitting `A = B + C`.
#[derive(Clone, Debug)]
pub struct Problem {
    pub spec: ProblemSpec,
    pub id: String,
    pub b: Operator,
    pub c: Operator,
    /// Perturbation scale after invertibility retries.
    pub gamma_used: f64,
}

impl Problem {
    pub fn a(&self) -> Operator {
        self.b.add(&self.c).expect("same dimension")
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn complex_normal(rng: &mut impl Rng) -> C64 {
    let x: f64 = rng.sample(StandardNormal);
    let y: f64 = rng.sample(StandardNormal);
    C64::new(x, y) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn complex_normal_matrix(n: usize, cols: usize, rng: &mut impl Rng) -> CMatrix {
    // fill column by column so the draw order is explicit
    let mut m = CMatrix::zeros(n, cols);
    for j in 0..cols {
        for i in 0..n {
            m[(i, j)] = complex_normal(rng);
        }
    }
    m
}

/// Rotation-invariant random unit vector.
pub fn random_unit_vector(n: usize, rng: &mut impl Rng) -> CVector {
    let v = DVector::from_fn(n, |_, _| complex_normal(rng));
    let norm = v.norm();
    v / C64::from(norm)
}

/// Orthonormal columns from the QR of `m`, phase-fixed by `diag(R)`.
pub fn orthonormalize(m: CMatrix) -> CMatrix {
    let qr = m.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..q.ncols() {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { C64::new(1.0, 0.0) };
        for i in 0..q.nrows() {
            q[(i, j)] *= phase;
        }
    }
    q
}

pub fn random_unitary(n: usize, rng: &mut impl Rng) -> CMatrix {
    orthonormalize(complex_normal_matrix(n, n, rng))
}

/// Diagonal `(2n+1) x (2n+1)` unitary with eigenvalues `e^{i arctan j}`,
/// `j = -n..=n`.
pub fn unitary_arctangent(n: usize) -> Result<Operator> {
    if n == 0 {
        return Err(Error::InvalidArgument("unitary_arctangent needs n >= 1".into()));
    }
    let n = n as i64;
    let diag: Vec<C64> = (-n..=n).map(|j| C64::from_polar(1.0, (j as f64).atan())).collect();
    let op = Operator::from_diagonal(&diag)?;
    debug_assert!(op.tags().unitary);
    Ok(op)
}

/// `U diag(gamma j^-alpha) V*` with `U, V` random unitaries.
pub fn compact_perturbation(n: usize, gamma: f64, alpha: f64, rng: &mut impl Rng) -> CMatrix {
    let u = random_unitary(n, rng);
    let v = random_unitary(n, rng);
    let sigma = DVector::from_fn(n, |j, _| C64::new(gamma * ((j + 1) as f64).powf(-alpha), 0.0));
    &u * CMatrix::from_diagonal(&sigma) * v.adjoint()
}

fn is_invertible(a: &Operator) -> bool {
    let s = a.singular_values();
    s.smallest() > INVERTIBLE_REL * s.largest()
}

/// Pair `B` with `gamma * C0`, halving `gamma` until `B + C` is invertible.
fn with_invertible_sum(b: Operator, c0: &CMatrix, gamma: f64) -> Result<(Operator, Operator, f64)> {
    let mut scale = 1.0;
    for _ in 0..=MAX_RETRIES {
        let c = Operator::new(c0 * C64::new(scale, 0.0))?;
        if is_invertible(&b.add(&c)?) {
            return Ok((b, c, gamma * scale));
        }
        scale *= 0.5;
    }
    Err(Error::Generation(format!(
        "B + C singular after {MAX_RETRIES} halvings of gamma = {gamma}"
    )))
}

fn check_decay(alpha: f64) -> Result<()> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    Ok(())
}

/// `B = lambda I`, `C = U diag(gamma j^-alpha) V*`.
pub fn shifted_identity_plus_compact(
    dim: usize,
    lambda: C64,
    alpha: f64,
    gamma: f64,
    seed: u64,
) -> Result<(Operator, Operator)> {
    if lambda == C64::new(0.0, 0.0) {
        return Err(Error::InvalidArgument("shift must be nonzero".into()));
    }
    check_decay(alpha)?;
    let mut rng = rng(seed);
    let c0 = compact_perturbation(dim, gamma, alpha, &mut rng);
    let (b, c, _) = with_invertible_sum(Operator::scaled_identity(dim, lambda), &c0, gamma)?;
    Ok((b, c))
}

/// `B = I + spread (S - S*)/2 + spread D` with `S` complex normal scaled by
/// `1/sqrt(dim)` and `D` real diagonal uniform in `[0, 1]`; the Hermitian
/// part is `I + spread D >= I`, so `B` is accretive and non-normal.
pub fn accretive_plus_compact(
    dim: usize,
    spread: f64,
    gamma: f64,
    alpha: f64,
    seed: u64,
) -> Result<(Operator, Operator)> {
    if !(spread >= 0.0) {
        return Err(Error::InvalidArgument(format!("spread must be nonnegative, got {spread}")));
    }
    check_decay(alpha)?;
    let mut rng = rng(seed);
    let s = complex_normal_matrix(dim, dim, &mut rng) / C64::new((dim as f64).sqrt(), 0.0);
    let d: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
    let c0 = compact_perturbation(dim, gamma, alpha, &mut rng);

    let mut sp = spread;
    for _ in 0..=MAX_RETRIES {
        let mut m = (&s - s.adjoint()) * C64::new(0.5 * sp, 0.0);
        for i in 0..dim {
            m[(i, i)] += C64::new(1.0 + sp * d[i], 0.0);
        }
        let b = Operator::new(m)?;
        let fov = fov::build_fov(&b, 64)?;
        if fov.membership() == fov::ZeroMembership::StrictlyOutside {
            let (b, c, _) = with_invertible_sum(b, &c0, gamma)?;
            return Ok((b, c));
        }
        sp *= 0.5;
    }
    Err(Error::ZeroInFov)
}

/// 1-D centred finite differences for `-u'' + peclet u'` on `nx` interior
/// points, `h = 1/(nx+1)`.
pub fn convection_diffusion_like(nx: usize, peclet: f64) -> Result<Operator> {
    if nx < 3 {
        return Err(Error::InvalidArgument(format!("nx must be >= 3, got {nx}")));
    }
    let h = 1.0 / (nx as f64 + 1.0);
    let diff = 1.0 / (h * h);
    let conv = peclet / (2.0 * h);
    let mut m = CMatrix::zeros(nx, nx);
    for i in 0..nx {
        m[(i, i)] = C64::new(2.0 * diff, 0.0);
        if i > 0 {
            m[(i, i - 1)] = C64::new(-diff - conv, 0.0);
        }
        if i + 1 < nx {
            m[(i, i + 1)] = C64::new(-diff + conv, 0.0);
        }
    }
    Operator::new(m)
}

/// Generate the `(B, C)` pair described by `spec`.
pub fn generate(spec: &ProblemSpec) -> Result<Problem> {
    let p = &spec.params;
    let dim = spec.dim;
    if dim == 0 {
        return Err(Error::InvalidArgument("dim must be positive".into()));
    }
    let mut rng = rng(spec.seed);
    let (b, c, gamma_used) = match spec.family {
        Family::UnitaryArctangent => {
            if dim % 2 == 0 || dim < 3 {
                return Err(Error::InvalidArgument(format!(
                    "unitary_arctangent needs odd dim = 2n+1 >= 3, got {dim}"
                )));
            }
            check_decay(p.alpha)?;
            let b = unitary_arctangent((dim - 1) / 2)?;
            let c0 = compact_perturbation(dim, p.gamma, p.alpha, &mut rng);
            with_invertible_sum(b, &c0, p.gamma)?
        }
        Family::ShiftedIdentityPlusCompact => {
            let lambda = C64::new(p.shift[0], p.shift[1]);
            let (b, c) = shifted_identity_plus_compact(dim, lambda, p.alpha, p.gamma, spec.seed)?;
            let g = c.norm();
            (b, c, g)
        }
        Family::AccretivePlusCompact => {
            let (b, c) = accretive_plus_compact(dim, p.spread, p.gamma, p.alpha, spec.seed)?;
            let g = c.norm();
            (b, c, g)
        }
        Family::ConvectionDiffusionLike => {
            check_decay(p.alpha)?;
            let b = convection_diffusion_like(dim, p.peclet)?;
            let c0 = compact_perturbation(dim, p.gamma, p.alpha, &mut rng);
            with_invertible_sum(b, &c0, p.gamma)?
        }
        Family::CustomFile => {
            let b_path = p
                .b_path
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("custom_file needs b_path".into()))?;
            let b = read_matrix_market(b_path)?;
            let c = match &p.c_path {
                Some(path) => read_matrix_market(path)?,
                None => Operator::zeros(b.dim()),
            };
            if b.dim() != c.dim() {
                return Err(Error::DimensionMismatch {
                    expected: b.dim(),
                    got: c.dim(),
                });
            }
            let g = c.norm();
            (b, c, g)
        }
    };
    if b.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: b.dim(),
        });
    }
    Ok(Problem {
        id: spec.id(),
        spec: spec.clone(),
        b,
        c,
        gamma_used,
    })
}

/// Closed form `nu` of the `(2n+1)`-point truncation: `1/sqrt(1+n^2)`.
pub fn unitary_arctangent_nu(n: usize) -> f64 {
    1.0 / (1.0 + (n * n) as f64).sqrt()
}

/// Closed-form eigenvalues of the Peclet-0 matrix: `4 sin^2(k pi h / 2) / h^2`.
pub fn laplacian_eigenvalues(nx: usize) -> Vec<f64> {
    let h = 1.0 / (nx as f64 + 1.0);
    (1..=nx)
        .map(|k| 4.0 * (k as f64 * PI * h / 2.0).sin().powi(2) / (h * h))
        .collect()
}
