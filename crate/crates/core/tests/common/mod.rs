//! Reference oracles shared by the integration tests. Each one is computed
//! from first principles (power iteration, grid search, explicit Krylov
//! least squares, closest-point search) rather than through the library.

#![allow(dead_code)]

use gmres_cert::linop::{CMatrix, CVector, Operator, C64};
use gmres_cert::probgen;
use nalgebra::DVector;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn random_matrix(n: usize, seed: u64) -> CMatrix {
    let mut rng = probgen::rng(seed);
    probgen::complex_normal_matrix(n, n, &mut rng)
}

pub fn random_vector(n: usize, seed: u64) -> CVector {
    let mut rng = probgen::rng(seed);
    probgen::random_unit_vector(n, &mut rng)
}

/// `U diag(s) V*` for seeded random unitaries `U, V`.
pub fn with_singular_values(s: &[f64], seed: u64) -> CMatrix {
    let n = s.len();
    let mut rng = probgen::rng(seed);
    let u = probgen::random_unitary(n, &mut rng);
    let v = probgen::random_unitary(n, &mut rng);
    let d = CMatrix::from_diagonal(&DVector::from_iterator(n, s.iter().map(|&x| c(x, 0.0))));
    u * d * v.adjoint()
}

/// `U diag(eigs) U*` for a seeded random unitary `U`.
pub fn normal_with_eigenvalues(eigs: &[C64], seed: u64) -> CMatrix {
    let n = eigs.len();
    let mut rng = probgen::rng(seed);
    let u = probgen::random_unitary(n, &mut rng);
    let d = CMatrix::from_diagonal(&DVector::from_column_slice(eigs));
    &u * d * u.adjoint()
}

fn mat_vec(m: &CMatrix, v: &[C64]) -> Vec<C64> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)] * v[j]).sum())
        .collect()
}

fn adj_vec(m: &CMatrix, v: &[C64]) -> Vec<C64> {
    (0..m.ncols())
        .map(|j| (0..m.nrows()).map(|i| m[(i, j)].conj() * v[i]).sum())
        .collect()
}

fn vnorm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Largest singular value by power iteration on `M* M`.
pub fn power_norm(m: &CMatrix, iters: usize) -> f64 {
    let n = m.ncols();
    let mut v: Vec<C64> = (0..n).map(|i| c(1.0 + 0.37 * i as f64, 0.21 * (i % 3) as f64)).collect();
    let mut est = 0.0;
    for _ in 0..iters {
        let nv = vnorm(&v);
        if nv == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|z| *z /= nv);
        let w = mat_vec(m, &v);
        est = vnorm(&w);
        v = adj_vec(m, &w);
    }
    est
}

/// Nested grid search for `min f` over a square: each level scans an
/// `n x n` grid and recentres a 4-cell-wide square on the best point.
pub fn grid_minimize(f: impl Fn(C64) -> f64, centre: C64, half_width: f64, n: usize, levels: usize) -> (C64, f64) {
    let (mut best, mut best_f) = (centre, f(centre));
    let mut h = half_width;
    for _ in 0..levels {
        let step = 2.0 * h / (n - 1) as f64;
        let origin = best;
        for i in 0..n {
            for j in 0..n {
                let z = origin + c(-h + step * i as f64, -h + step * j as f64);
                let v = f(z);
                if v < best_f {
                    best = z;
                    best_f = v;
                }
            }
        }
        h = 2.0 * step;
    }
    (best, best_f)
}

/// `min ||p(A) r0||` over polynomials of degree `<= k` with `p(0) = 1`,
/// via a fresh QR of the normalized Krylov matrix `[A r0, ..., A^k r0]`.
pub fn krylov_oracle(a: &CMatrix, r0: &CVector, k: usize) -> f64 {
    if k == 0 {
        return r0.norm();
    }
    let n = r0.len();
    let mut kry = CMatrix::zeros(n, k);
    let mut v = r0.clone();
    for j in 0..k {
        v = a * v;
        let nv = v.norm();
        v /= c(nv, 0.0);
        kry.set_column(j, &v);
    }
    let q = kry.qr().q();
    let proj = &q * (q.adjoint() * r0);
    (r0 - proj).norm()
}

fn closest_on_segment(a: C64, b: C64) -> C64 {
    let d = b - a;
    let dd = d.norm_sqr();
    if dd == 0.0 {
        return a;
    }
    let t = (-(a * d.conj()).re / dd).clamp(0.0, 1.0);
    a + d * t
}

/// Distance from 0 to the convex hull of `pts`: the closest point of the hull
/// lies on some segment `[p_i, p_j]` and separates all points from 0.
pub fn hull_distance(pts: &[C64]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..pts.len() {
        for j in i..pts.len() {
            let q = closest_on_segment(pts[i], pts[j]);
            let r2 = q.norm_sqr();
            if r2 == 0.0 {
                continue;
            }
            let scale = pts.iter().map(|p| p.norm()).fold(0.0, f64::max).max(1.0);
            if pts.iter().all(|p| (q.conj() * p).re >= r2 - 1e-12 * scale * scale) {
                best = best.min(r2.sqrt());
            }
        }
    }
    if best.is_finite() {
        best
    } else {
        0.0
    }
}

pub fn op(m: CMatrix) -> Operator {
    Operator::new(m).expect("square matrix")
}
