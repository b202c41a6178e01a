//! Numerical range (field of values) geometry.
//!
//! `W(B)` is modelled through its support function
//! `h(theta) = lambda_max((e^{i theta} B + e^{-i theta} B*) / 2)` on an
//! angular grid. The half-planes `Re(e^{i theta} z) <= h(theta)` give an
//! outer polygon containing `W(B)`; the touching points `(B v, v)` of the top
//! eigenvectors give an inner polygon contained in it. Distances from 0 are
//! read off the outer model (a lower estimate of `nu_B`) and checked against
//! the inner one (an upper estimate).

use std::f64::consts::TAU;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linop::{inner, Operator, C64};
use crate::par;
use crate::report;

pub const DEFAULT_ANGLES: usize = 720;
pub const MIN_ANGLES: usize = 16;
/// Golden-section tolerance in theta.
pub const THETA_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct FovModel {
    /// Sorted angles in `[0, 2 pi)`.
    pub angles: Vec<f64>,
    pub support: Vec<f64>,
    pub boundary_points: Vec<C64>,
    /// Distance from 0 to `W(B)` from the outer model.
    pub nu: f64,
    /// Angle at which `h` is smallest (after refinement).
    pub extremal_angle: f64,
    /// `min_theta h(theta)`; negative iff 0 is strictly outside.
    pub margin: f64,
    /// Zero-membership tolerance `1e-9 (1 + ||B||)`.
    pub tol: f64,
    pub zero_in_closure: bool,
    pub norm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroMembership {
    StrictlyOutside,
    OnClosureBoundaryOrInside,
}

fn rotated_hermitian_part(b: &Operator, theta: f64) -> Operator {
    let x = b.entries() * C64::from_polar(1.0, theta);
    Operator::new((&x + x.adjoint()) * C64::new(0.5, 0.0)).expect("square")
}

/// `(h(theta), p(theta))` with `p` the Rayleigh value of a top eigenvector.
pub fn support_point(b: &Operator, theta: f64) -> (f64, C64) {
    let h = rotated_hermitian_part(b, theta);
    let eig = h
        .hermitian_eigs()
        .expect("rotated Hermitian part is self-adjoint by construction");
    let n = b.dim();
    let v = eig.vectors.column(n - 1).into_owned();
    let bv = b.entries() * &v;
    (eig.values[n - 1], inner(&bv, &v))
}

/// `h(theta)` alone.
pub fn support_value(b: &Operator, theta: f64) -> f64 {
    rotated_hermitian_part(b, theta).max_hermitian_part_eigenvalue()
}

/// Golden-section minimization of a unimodal function on `[lo, hi]`.
pub(crate) fn golden_min(mut lo: f64, mut hi: f64, tol: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Sweep `m` equispaced angles, refine the smallest support value by golden
/// section and assemble the model.
pub fn build_fov(b: &Operator, m: usize) -> Result<FovModel> {
    if m < MIN_ANGLES {
        return Err(Error::InvalidArgument(format!(
            "at least {MIN_ANGLES} angles required, got {m}"
        )));
    }
    let norm = b.norm();
    let mut angles: Vec<f64> = (0..m).map(|i| TAU * i as f64 / m as f64).collect();
    let sweep = par::map(&angles, |&th| support_point(b, th));
    let mut support: Vec<f64> = sweep.iter().map(|s| s.0).collect();
    let mut boundary_points: Vec<C64> = sweep.iter().map(|s| s.1).collect();

    let (i_min, _) = support
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("m >= 16");
    let step = TAU / m as f64;
    let centre = angles[i_min];
    let (theta, h_ref) = golden_min(centre - step, centre + step, THETA_TOL, |th| support_value(b, th));
    let mut extremal_angle = centre;
    if h_ref < support[i_min] {
        let theta = theta.rem_euclid(TAU);
        let (h, p) = support_point(b, theta);
        let pos = angles.partition_point(|a| *a < theta);
        let duplicate = angles.get(pos).is_some_and(|a| (a - theta).abs() < 1e-15);
        if !duplicate && h < support[i_min] {
            angles.insert(pos, theta);
            support.insert(pos, h);
            boundary_points.insert(pos, p);
            extremal_angle = theta;
        }
    }

    let margin = support.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = 1e-9 * (1.0 + norm);
    Ok(FovModel {
        angles,
        support,
        boundary_points,
        nu: (-margin).max(0.0),
        extremal_angle,
        margin,
        tol,
        zero_in_closure: margin >= -tol,
        norm,
    })
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Convex hull (counter-clockwise, Andrew's monotone chain).
pub(crate) fn convex_hull(points: &[C64]) -> Vec<C64> {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|z| (z.re, z.im)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() <= 2 {
        return pts.into_iter().map(|(x, y)| C64::new(x, y)).collect();
    }
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull.into_iter().map(|(x, y)| C64::new(x, y)).collect()
}

fn segment_distance(z: C64, a: C64, b: C64) -> f64 {
    let d = b - a;
    let len2 = d.norm_sqr();
    if len2 == 0.0 {
        return (z - a).norm();
    }
    let t = (((z - a) * d.conj()).re / len2).clamp(0.0, 1.0);
    (z - (a + d * t)).norm()
}

/// Distance from `z` to a convex polygon given counter-clockwise.
pub(crate) fn polygon_distance(poly: &[C64], z: C64) -> f64 {
    match poly.len() {
        0 => f64::INFINITY,
        1 => (z - poly[0]).norm(),
        2 => segment_distance(z, poly[0], poly[1]),
        n => {
            let inside = (0..n).all(|i| {
                let a = poly[i];
                let b = poly[(i + 1) % n];
                cross((a.re, a.im), (b.re, b.im), (z.re, z.im)) >= 0.0
            });
            if inside {
                return 0.0;
            }
            (0..n)
                .map(|i| segment_distance(z, poly[i], poly[(i + 1) % n]))
                .fold(f64::INFINITY, f64::min)
        }
    }
}

impl FovModel {
    /// `max_i (Re(e^{i theta_i} z) - h_i)`; nonpositive iff `z` is in the
    /// outer polygon.
    pub fn outer_violation(&self, z: C64) -> f64 {
        self.angles
            .iter()
            .zip(self.support.iter())
            .map(|(th, h)| (C64::from_polar(1.0, *th) * z).re - h)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn outer_contains(&self, z: C64, slack: f64) -> bool {
        self.outer_violation(z) <= slack
    }

    /// Vertices of the outer polygon: intersections of consecutive
    /// supporting lines.
    pub fn outer_vertices(&self) -> Vec<C64> {
        let m = self.angles.len();
        (0..m)
            .map(|i| {
                let j = (i + 1) % m;
                let (ti, tj) = (self.angles[i], self.angles[j]);
                let (hi, hj) = (self.support[i], self.support[j]);
                // x cos t - y sin t = h for both lines
                let (ci, si, cj, sj) = (ti.cos(), ti.sin(), tj.cos(), tj.sin());
                let det = -ci * sj + si * cj;
                let x = (-hi * sj + si * hj) / det;
                let y = (ci * hj - cj * hi) / det;
                C64::new(x, y)
            })
            .collect()
    }

    /// Distance from `z` to the outer polygon (0 inside).
    pub fn distance_to_outer(&self, z: C64) -> f64 {
        if self.outer_violation(z) <= 0.0 {
            return 0.0;
        }
        polygon_distance(&convex_hull(&self.outer_vertices()), z)
    }

    /// Distance from 0 to the hull of the sampled boundary points (an upper
    /// estimate of `nu`).
    pub fn inner_nu(&self) -> f64 {
        polygon_distance(&convex_hull(&self.boundary_points), C64::new(0.0, 0.0))
    }

    pub fn membership(&self) -> ZeroMembership {
        if self.margin < -self.tol {
            ZeroMembership::StrictlyOutside
        } else {
            ZeroMembership::OnClosureBoundaryOrInside
        }
    }

    pub fn centroid(&self) -> C64 {
        let n = self.boundary_points.len() as f64;
        self.boundary_points.iter().sum::<C64>() / n
    }

    /// CSV with columns `theta,h,re_p,im_p`.
    pub fn boundary_csv(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .angles
            .iter()
            .zip(self.support.iter())
            .zip(self.boundary_points.iter())
            .map(|((th, h), p)| vec![report::num(*th), report::num(*h), report::num(p.re), report::num(p.im)])
            .collect();
        report::csv_string(&["theta", "h", "re_p", "im_p"], &rows)
    }

    pub fn summary(&self) -> FovSummary {
        FovSummary {
            angles: self.angles.len(),
            nu: self.nu,
            nu_inner: self.inner_nu(),
            margin: self.margin,
            tol: self.tol,
            zero_in_closure: self.zero_in_closure,
            membership: self.membership(),
            extremal_angle: self.extremal_angle,
            norm: self.norm,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FovSummary {
    pub angles: usize,
    pub nu: f64,
    pub nu_inner: f64,
    pub margin: f64,
    pub tol: f64,
    pub zero_in_closure: bool,
    pub membership: ZeroMembership,
    pub extremal_angle: f64,
    pub norm: f64,
}

/// `nu_B` and `nu_{B^{-1}}` with both cross inequalities
/// `nu_{B^-1} >= nu_B / ||B||^2` and `nu_B >= nu_{B^-1} / ||B^-1||^2`.
#[derive(Clone, Debug)]
pub struct NuPair {
    pub nu_b: f64,
    pub nu_binv: f64,
    pub fov_b: FovModel,
    pub fov_binv: FovModel,
}

pub const NU_PAIR_SLACK: f64 = 1e-8;

/// Check the cross inequalities on two prebuilt models.
pub fn nu_pair_from(fov_b: FovModel, fov_binv: FovModel) -> Result<NuPair> {
    let (nu_b, nu_binv) = (fov_b.nu, fov_binv.nu);
    if nu_binv < nu_b / fov_b.norm.powi(2) - NU_PAIR_SLACK {
        return Err(Error::BoundViolation(format!(
            "nu(B^-1) = {nu_binv:e} < nu(B)/||B||^2 = {:e}",
            nu_b / fov_b.norm.powi(2)
        )));
    }
    if nu_b < nu_binv / fov_binv.norm.powi(2) - NU_PAIR_SLACK {
        return Err(Error::BoundViolation(format!(
            "nu(B) = {nu_b:e} < nu(B^-1)/||B^-1||^2 = {:e}",
            nu_binv / fov_binv.norm.powi(2)
        )));
    }
    Ok(NuPair {
        nu_b,
        nu_binv,
        fov_b,
        fov_binv,
    })
}

pub fn nu_pair(b: &Operator, m: usize) -> Result<NuPair> {
    let b_inv = b.inverse()?;
    nu_pair_from(build_fov(b, m)?, build_fov(&b_inv, m)?)
}

/// Zero-membership verdict with the default angular resolution.
pub fn zero_membership(b: &Operator) -> Result<(ZeroMembership, f64)> {
    let fov = build_fov(b, DEFAULT_ANGLES)?;
    Ok((fov.membership(), fov.margin))
}
