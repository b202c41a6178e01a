//! Nelder-Mead in the plane, restarted from the incumbent until a restart no
//! longer improves it.

#[derive(Clone, Copy, Debug)]
pub struct SimplexResult {
    pub x: [f64; 2],
    pub f: f64,
    pub evals: usize,
    /// Final simplex diameter in `x` and spread in `f`.
    pub diameter: f64,
    pub spread: f64,
    pub converged: bool,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn lerp(a: [f64; 2], b: [f64; 2], t: f64) -> [f64; 2] {
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
}

/// One Nelder-Mead run from `x0` with an initial right-angle simplex of
/// side `scale`. Stops when both the diameter and the f-spread are `<= tol`.
pub fn nelder_mead(
    f: &impl Fn([f64; 2]) -> f64,
    x0: [f64; 2],
    scale: f64,
    tol: f64,
    budget: usize,
) -> SimplexResult {
    let mut pts = [x0, [x0[0] + scale, x0[1]], [x0[0], x0[1] + scale]];
    let mut vals = [f(pts[0]), f(pts[1]), f(pts[2])];
    let mut evals = 3;
    loop {
        // order best..worst
        let mut idx = [0usize, 1, 2];
        idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = [pts[idx[0]], pts[idx[1]], pts[idx[2]]];
        vals = [vals[idx[0]], vals[idx[1]], vals[idx[2]]];

        let diameter = dist(pts[0], pts[1]).max(dist(pts[0], pts[2]));
        let spread = vals[2] - vals[0];
        let converged = diameter <= tol && spread <= tol;
        if converged || evals + 2 > budget {
            return SimplexResult {
                x: pts[0],
                f: vals[0],
                evals,
                diameter,
                spread,
                converged,
            };
        }

        let centroid = lerp(pts[0], pts[1], 0.5);
        let reflected = lerp(pts[2], centroid, 2.0);
        let fr = f(reflected);
        evals += 1;
        if fr < vals[0] {
            let expanded = lerp(pts[2], centroid, 3.0);
            let fe = f(expanded);
            evals += 1;
            if fe < fr {
                pts[2] = expanded;
                vals[2] = fe;
            } else {
                pts[2] = reflected;
                vals[2] = fr;
            }
            continue;
        }
        if fr < vals[1] {
            pts[2] = reflected;
            vals[2] = fr;
            continue;
        }
        // contraction, outside if the reflection helped at all
        let (contracted, target) = if fr < vals[2] {
            (lerp(centroid, reflected, 0.5), fr)
        } else {
            (lerp(centroid, pts[2], 0.5), vals[2])
        };
        let fc = f(contracted);
        evals += 1;
        if fc < target {
            pts[2] = contracted;
            vals[2] = fc;
            continue;
        }
        for i in 1..3 {
            pts[i] = lerp(pts[0], pts[i], 0.5);
            vals[i] = f(pts[i]);
        }
        evals += 2;
    }
}

/// Restarted Nelder-Mead: rerun from the incumbent with a fresh simplex of
/// shrinking size until a run fails to improve by more than `tol`.
pub fn minimize(
    f: &impl Fn([f64; 2]) -> f64,
    x0: [f64; 2],
    scale: f64,
    tol: f64,
    budget: usize,
) -> SimplexResult {
    let mut best = nelder_mead(f, x0, scale, tol, budget);
    let mut evals = best.evals;
    let mut restart_scale = scale;
    loop {
        if evals + 3 > budget {
            best.converged = false;
            break;
        }
        restart_scale = (restart_scale * 0.1).max(10.0 * tol);
        let next = nelder_mead(f, best.x, restart_scale, tol, budget - evals);
        evals += next.evals;
        let improved = best.f - next.f;
        if next.f < best.f {
            best = SimplexResult { evals: best.evals, ..next };
        } else {
            best.converged = next.converged;
        }
        if improved <= tol && next.converged && restart_scale <= 10.0 * tol * 1.000001 {
            break;
        }
    }
    best.evals = evals;
    best
}
