//! Acceptance battery. Runs as a plain binary so each criterion prints one
//! PASS/FAIL line regardless of output capture; exits nonzero on any failure.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use common::*;
use gmres_cert::cert::{certify, hansmann_check};
use gmres_cert::fov::build_fov;
use gmres_cert::gmres::{run_gmres, shifted_moret_check};
use gmres_cert::linop::{CMatrix, CVector, Operator};
use gmres_cert::mb::{self, analyze, compute_mb, MbOptions, DEFAULT_TOL};
use gmres_cert::probgen::{self, Family, FamilyParams, ProblemSpec};
use serde_json::Value;

type Outcome = Result<String, String>;

struct Suite {
    dir: PathBuf,
    summary: Value,
    certs: Vec<Value>,
    seconds: f64,
}

fn bin(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_gmres-cert"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).expect("readable")).expect("valid json")
}

fn run_suite(root: &Path) -> Result<Suite, String> {
    let dir = root.join("suite");
    let start = Instant::now();
    let o = bin(&["suite", "--out", dir.to_str().unwrap()]);
    let seconds = start.elapsed().as_secs_f64();
    if !o.status.success() {
        return Err(format!("suite exited {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr)));
    }
    let summary = read_json(&dir.join("summary.json"));
    let certs = summary["problems"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| read_json(&dir.join("problems").join(format!("{}.json", p["id"].as_str().unwrap()))))
        .collect();
    Ok(Suite {
        dir,
        summary,
        certs,
        seconds,
    })
}

fn f(v: &Value) -> f64 {
    v.as_f64().expect("number")
}

fn problems(s: &Suite) -> &Vec<Value> {
    s.summary["problems"].as_array().unwrap()
}

/// Steps `k >= 1` where `||r_{k-1}||` is above the breakdown floor.
fn compared(cert: &Value) -> Vec<usize> {
    cert["compared"]
        .as_array()
        .unwrap()
        .iter()
        .enumerate()
        .filter(|(_, b)| b.as_bool() == Some(true))
        .map(|(k, _)| k)
        .collect()
}

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn c1_theorem_bound(s: &Suite, root: &Path) -> Outcome {
    let ps = problems(s);
    let families: std::collections::BTreeSet<&str> = ps.iter().map(|p| p["family"].as_str().unwrap()).collect();
    let dims: Vec<u64> = ps.iter().map(|p| p["dim"].as_u64().unwrap()).collect();
    let pset: std::collections::BTreeSet<String> = ps.iter().map(|p| f(&p["p"]).to_string()).collect();
    ensure(ps.len() >= 40, format!("only {} problems", ps.len()))?;
    ensure(families.len() == 4, format!("families {families:?}"))?;
    ensure(
        dims.iter().min() == Some(&10) && dims.iter().max().is_some_and(|&d| d >= 199 && d <= 200),
        format!("dims {dims:?}"),
    )?;
    ensure(pset.len() == 3, format!("p values {pset:?}"))?;
    let mut worst = f64::INFINITY;
    for c in &s.certs {
        for k in compared(c) {
            let (obs, thm) = (f(&c["observed"][k]), f(&c["thm_bound"][k]));
            let m = thm * (1.0 + 1e-8) - obs;
            worst = worst.min(m);
            ensure(m >= 0.0, format!("{} k={k}: observed {obs:e} > bound {thm:e}", c["problem_id"]))?;
        }
    }
    ensure(s.seconds <= 600.0, format!("suite took {:.1}s", s.seconds))?;
    let faulty = root.join("faulty");
    let o = bin(&[
        "suite",
        "--families",
        "shifted_identity_plus_compact",
        "--inject-fault",
        "thm-sign",
        "--out",
        faulty.to_str().unwrap(),
    ]);
    ensure(o.status.code() == Some(3), format!("fault run exited {:?}", o.status.code()))?;
    Ok(format!(
        "{} problems, worst margin {worst:.3e}, suite {:.1}s, injected fault exits 3",
        ps.len(),
        s.seconds
    ))
}

fn c2_rate_bound(s: &Suite) -> Outcome {
    let mut worst = f64::INFINITY;
    for c in &s.certs {
        let inp = &c["inputs"];
        let (m, ainv, sp, p) = (f(&inp["m_b"]), f(&inp["norm_ainv"]), f(&inp["schatten_p"]), f(&inp["p"]));
        for k in compared(c) {
            let kf = k as f64;
            let rate = m + kf.powf(-1.0 / p) * (1.0 + m) * ainv * sp;
            let stored = f(&c["rate_bound"][k]);
            ensure((stored - rate).abs() <= 1e-12 * rate.max(1.0), format!("{} k={k}: stored rate differs", c["problem_id"]))?;
            let margin = rate + 1e-8 - f(&c["observed"][k]).powf(1.0 / kf);
            worst = worst.min(margin);
            ensure(margin >= 0.0, format!("{} k={k}: margin {margin:e}", c["problem_id"]))?;
        }
    }
    Ok(format!("worst margin {worst:.3e}"))
}

fn c3_moret(s: &Suite) -> Outcome {
    let mut worst = 0.0f64;
    for c in &s.certs {
        let gaps = c["moret_gaps"].as_array().unwrap();
        for k in compared(c) {
            if let Some(g) = gaps[k - 1].as_f64() {
                worst = worst.max(g);
            }
        }
    }
    ensure(worst <= 1e-8, format!("moret gap {worst:e}"))?;
    let shifted = problems(s).iter().map(|p| f(&p["shifted_moret_gap"])).fold(0.0, f64::max);
    ensure(shifted <= 1e-8, format!("shifted gap {shifted:e}"))?;
    // Fresh runs, checked directly for each shift.
    let mut fresh = 0.0f64;
    for (i, fam) in [Family::AccretivePlusCompact, Family::ShiftedIdentityPlusCompact, Family::ConvectionDiffusionLike]
        .into_iter()
        .enumerate()
    {
        let p = probgen::generate(&ProblemSpec::new(fam, 24, FamilyParams::default(), 900 + i as u64)).unwrap();
        let a = p.a();
        let a_inv = a.inverse().unwrap();
        let r0 = random_vector(24, 77 + i as u64);
        let tr = run_gmres(&a, &r0, &CVector::zeros(24), 24, 1e-13).unwrap();
        for k in 1..=tr.last_checkable_step() {
            if tr.residual_norms[k - 1] <= 1e-13 * tr.residual_norms[0] {
                continue;
            }
            for l in [c(0.0, 0.0), c(1.0, 0.0), c(0.0, 1.0)] {
                fresh = fresh.max(shifted_moret_check(&tr, k, l, &a_inv).unwrap().rel_gap);
            }
        }
    }
    ensure(fresh <= 1e-8, format!("fresh shifted gap {fresh:e}"))?;
    Ok(format!("moret gap {worst:.2e}, shifted {shifted:.2e}, fresh shifted {fresh:.2e}"))
}

fn c4_mb_anchors() -> Outcome {
    let d = [1.0, 2.0];
    let (l_or, m_or) = grid_minimize(
        |l| d.iter().map(|&x| (c(1.0, 0.0) - l * x).norm()).fold(0.0, f64::max),
        c(0.0, 0.0),
        2.0,
        401,
        6,
    );
    let b = Operator::from_diagonal(&[c(1.0, 0.0), c(2.0, 0.0)]).unwrap();
    let r = compute_mb(&b, DEFAULT_TOL).map_err(|e| e.to_string())?;
    ensure((r.m_b - m_or).abs() <= 1e-6, format!("diag12 m_b {} vs oracle {m_or}", r.m_b))?;
    ensure((r.lambda_b - l_or).norm() <= 1e-5, format!("diag12 lambda {} vs oracle {l_or}", r.lambda_b))?;
    let id = compute_mb(&Operator::identity(5), DEFAULT_TOL).map_err(|e| e.to_string())?;
    ensure(id.m_b.abs() <= 1e-10, format!("identity m_b {}", id.m_b))?;
    let mut worst = 0.0f64;
    for t in 0..20u64 {
        let n = 3 + (t as usize % 10);
        let shift = [0.0, 1.0, 2.0, 3.0][t as usize % 4];
        let m = random_matrix(n, 4000 + t) * c(0.5, 0.0) + CMatrix::identity(n, n) * c(shift, 0.3 * shift);
        let b = op(m);
        let a = analyze(&b, &MbOptions { seed: t, ..MbOptions::default() }).map_err(|e| e.to_string())?;
        let gap = (a.report.m_b - a.report.m_b_dual).abs();
        worst = worst.max(gap);
        ensure(gap <= 1e-6, format!("trial {t}: primal {} dual {}", a.report.m_b, a.report.m_b_dual))?;
    }
    Ok(format!(
        "diag12 m_b {:.9} at {:.7}, oracle {m_or:.9}; identity {:.1e}; primal/dual gap {worst:.2e} over 20",
        r.m_b, r.lambda_b.re, id.m_b
    ))
}

fn c5_chain(s: &Suite) -> Outcome {
    let mut worst = f64::INFINITY;
    let mut count = 0;
    for p in problems(s) {
        let ch = &p["chain"];
        if ch.is_null() {
            ensure(f(&p["nu_b"]) <= 0.0, format!("{} has nu_b > 0 but no chain", p["id"]))?;
            continue;
        }
        count += 1;
        for key in ["empirical", "starke", "elman"] {
            worst = worst.min(f(&ch[key]));
        }
    }
    ensure(count > 0, "no problem with nu_b > 0")?;
    ensure(worst >= 0.0, format!("worst link {worst:e}"))?;
    Ok(format!("{count} problems, worst link margin {worst:.3e}"))
}

fn c6_localization(s: &Suite) -> Outcome {
    let mut worst_v = f64::NEG_INFINITY;
    let mut worst_n = f64::INFINITY;
    for p in problems(s) {
        let m = &p["minimizer"];
        worst_v = worst_v.max(f(&m["lambda_b_violation"]));
        worst_n = worst_n.min(f(&m["lambda_b_norm_margin"]));
    }
    ensure(worst_v <= 1e-6, format!("lambda_B outside W(B^-1) by {worst_v:e}"))?;
    ensure(worst_n >= -1e-6, format!("norm margin {worst_n:e}"))?;
    let b = Operator::from_diagonal(&[c(1.0, 0.0), c(2.0, 0.0)]).unwrap();
    let a = analyze(&b, &MbOptions::default()).map_err(|e| e.to_string())?;
    let chk = mb::minimizer_check(&a.report, &a.pair.fov_b, &a.pair.fov_binv);
    let lhs = a.report.lambda_b.norm() * b.norm();
    ensure(chk.lambda_b_violation <= 1e-6, "diag12 lambda_B outside")?;
    ensure((lhs - (1.0 + a.report.m_b)).abs() <= 1e-5, format!("diag12 ||lambda B|| {lhs} vs 1 + m_b"))?;
    ensure((lhs - 4.0 / 3.0).abs() <= 1e-5, format!("diag12 ||lambda B|| {lhs} vs 4/3"))?;
    Ok(format!(
        "worst violation {worst_v:.2e}, worst norm margin {worst_n:.2e}, diag12 ||lambda B|| = {lhs:.7}"
    ))
}

fn c7_trend(s: &Suite) -> Outcome {
    let rows = s.summary["trend"].as_array().ok_or("no trend")?;
    let ns: Vec<u64> = rows.iter().map(|r| r["n"].as_u64().unwrap()).collect();
    ensure(ns == [1, 2, 4, 8, 16], format!("n values {ns:?}"))?;
    let mut prev = f64::NEG_INFINITY;
    for r in rows {
        let n = r["n"].as_u64().unwrap() as i64;
        let eigs: Vec<_> = (-n..=n).map(|j| gmres_cert::linop::C64::from_polar(1.0, (j as f64).atan())).collect();
        let hull = hull_distance(&eigs);
        let closed = 1.0 / (1.0 + (n * n) as f64).sqrt();
        let nu = f(&r["nu"]);
        ensure((hull - closed).abs() <= 1e-12, format!("n={n}: hull oracle {hull} vs {closed}"))?;
        ensure((nu - closed).abs() <= 1e-8, format!("n={n}: nu {nu} vs {closed}"))?;
        let m = f(&r["m_b"]);
        ensure(m >= prev, format!("n={n}: m_b {m} < {prev}"))?;
        prev = m;
        ensure(r["strictly_monotone"].as_bool() == Some(true), format!("n={n}: GMRES not strictly monotone"))?;
    }
    ensure(prev >= 0.9, format!("m_b(16) = {prev}"))?;
    let ms: Vec<String> = rows.iter().map(|r| format!("{:.4}", f(&r["m_b"]))).collect();
    Ok(format!("m_b = [{}]", ms.join(", ")))
}

fn c8_superlinear() -> Outcome {
    let params = FamilyParams {
        alpha: 3.0,
        gamma: 0.5,
        ..FamilyParams::default()
    };
    let p = probgen::generate(&ProblemSpec::new(Family::ShiftedIdentityPlusCompact, 60, params, 0)).unwrap();
    // Same problem and start as `gen --dim 60 --alpha 3 --gamma 0.5` followed by `certify`.
    let r0 = random_vector(60, 0);
    let cert = certify(&p.b, &p.c, &r0, 2.0, 60).map_err(|e| e.to_string())?;
    let ratios: Vec<f64> = (1..=cert.steps)
        .filter(|&k| cert.compared[k])
        .map(|k| cert.observed[k] / cert.observed[k - 1])
        .collect();
    ensure(ratios.len() >= 3, format!("only {} ratios", ratios.len()))?;
    // Nonincreasing over the second half of the run.
    let tail = &ratios[ratios.len() / 2..];
    ensure(tail.windows(2).all(|w| w[1] <= w[0]), format!("ratios {ratios:?}"))?;
    let (first, last) = (ratios[0], *ratios.last().unwrap());
    ensure(last <= 0.1 * first, format!("final ratio {last:e} vs initial {first:e}"))?;
    let moret = cert.moret_bound.as_ref().ok_or("no moret bound")?;
    for k in 1..=cert.steps {
        ensure(
            moret[k] <= cert.thm_bound[k] * (1.0 + 1e-8),
            format!("k={k}: moret {:e} > thm {:e}", moret[k], cert.thm_bound[k]),
        )?;
        if cert.compared[k] {
            ensure(cert.observed[k] <= moret[k] * (1.0 + 1e-8), format!("k={k}: observed above moret"))?;
        }
    }
    Ok(format!("{} steps, ratio {first:.2e} -> {last:.2e}", cert.steps))
}

fn c9_hansmann(s: &Suite) -> Outcome {
    let mut worst = f64::INFINITY;
    let mut count = 0;
    for p in problems(s) {
        let hs = p["hansmann"].as_array().unwrap();
        let ps: Vec<f64> = hs.iter().map(|h| f(&h["p"])).collect();
        ensure(ps == [1.5, 2.0], format!("{} p values {ps:?}", p["id"]))?;
        for h in hs {
            let m = f(&h["rhs"]) * (1.0 + 1e-6) - f(&h["lhs"]);
            worst = worst.min(m);
            count += 1;
        }
    }
    ensure(worst >= 0.0, format!("worst margin {worst:e}"))?;
    let b = Operator::identity(1);
    let cm = Operator::from_diagonal(&[c(0.5, 0.0)]).unwrap();
    let fov = build_fov(&b, 720).map_err(|e| e.to_string())?;
    for p in [1.5, 2.0] {
        let h = hansmann_check(&b, &cm, p, &fov).map_err(|e| e.to_string())?;
        let want = 0.5f64.powf(p);
        ensure(
            (h.lhs - want).abs() <= 1e-8 && (h.rhs - want).abs() <= 1e-12,
            format!("equality case p={p}: lhs {} rhs {}", h.lhs, h.rhs),
        )?;
    }
    Ok(format!("{count} checks, worst margin {worst:.3e}; equality case exact"))
}

fn c10_bruteforce() -> Outcome {
    let mut worst = 0.0f64;
    for t in 0..25u64 {
        let n = 1 + (t as usize % 6);
        let k = n.min(4);
        let m = random_matrix(n, 7000 + t) + CMatrix::identity(n, n) * c(0.5 * (t % 5) as f64, 0.0);
        let a = op(m);
        let r0 = random_vector(n, 8000 + t);
        let tr = run_gmres(&a, &r0, &CVector::zeros(n), k, 0.0).map_err(|e| e.to_string())?;
        for j in 0..=tr.steps() {
            let want = krylov_oracle(a.entries(), &r0, j);
            let rel = (tr.residual_norms[j] - want).abs() / want.max(1e-300);
            if want > 1e-12 {
                worst = worst.max(rel);
                ensure(rel <= 1e-6, format!("problem {t} k={j}: {} vs {want}", tr.residual_norms[j]))?;
            } else {
                ensure(tr.residual_norms[j] <= 1e-10, format!("problem {t} k={j}: oracle zero"))?;
            }
        }
    }
    Ok(format!("25 problems, worst relative error {worst:.2e}"))
}

fn c11_determinant() -> Outcome {
    let mut worst = 0.0f64;
    for t in 0..200u64 {
        let n = 1 + (t as usize % 12);
        let k = 1 + (t as usize / 12) % n;
        let tm = random_matrix(n, 10_000 + t);
        let mut rng = probgen::rng(20_000 + t);
        let fm = probgen::orthonormalize(probgen::complex_normal_matrix(n, k, &mut rng));
        let gm = probgen::orthonormalize(probgen::complex_normal_matrix(n, k, &mut rng));
        let det = (gm.adjoint() * &tm * fm).determinant().norm();
        let s = op(tm).singular_values();
        let bound: f64 = (1..=k).map(|j| s.sigma(j)).product();
        worst = worst.max(det / bound);
        ensure(det <= bound * (1.0 + 1e-8), format!("trial {t}: |det| {det:e} > {bound:e}"))?;
    }
    Ok(format!("200 trials, max |det|/bound {worst:.4}"))
}

fn csv_files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn c12_determinism(s: &Suite, root: &Path) -> Outcome {
    let again = root.join("rerun");
    let manifest = s.dir.join("manifest.json");
    let o = bin(&["rerun", "--manifest", manifest.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    ensure(o.status.success(), format!("rerun exited {:?}", o.status.code()))?;
    let (a, b) = (csv_files(&s.dir), csv_files(&again));
    ensure(a.len() > 40, format!("only {} csv files", a.len()))?;
    ensure(a.keys().eq(b.keys()), "different csv file sets")?;
    for (name, bytes) in &a {
        ensure(b[name] == *bytes, format!("{} differs", name.display()))?;
    }
    Ok(format!("{} csv files byte-identical", a.len()))
}

fn main() {
    let root = tempfile::tempdir().expect("temp dir");
    let suite = run_suite(root.path());
    let with = |g: &dyn Fn(&Suite) -> Outcome| -> Outcome {
        match &suite {
            Ok(s) => g(s),
            Err(e) => Err(e.clone()),
        }
    };
    let results: Vec<(&str, Outcome)> = vec![
        ("theorem bound", with(&|s| c1_theorem_bound(s, root.path()))),
        ("rate bound", with(&c2_rate_bound)),
        ("moret formula", with(&c3_moret)),
        ("reduction factor anchors", c4_mb_anchors()),
        ("bound chain", with(&c5_chain)),
        ("minimizer localization", with(&c6_localization)),
        ("arctangent trend", with(&c7_trend)),
        ("superlinear convergence", c8_superlinear()),
        ("hansmann inequality", with(&c9_hansmann)),
        ("brute-force gmres oracle", c10_bruteforce()),
        ("determinant inequality", c11_determinant()),
        ("determinism", with(&|s| c12_determinism(s, root.path()))),
    ];
    let mut failed = 0;
    for (i, (name, r)) in results.iter().enumerate() {
        match r {
            Ok(d) => println!("criterion {:>2} PASS {name}: {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {d}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
