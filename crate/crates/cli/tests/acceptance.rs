//! The acceptance criteria, one test each. Every test writes a single
//! `criterion N: PASS|FAIL ...` line to stdout (uncaptured) before asserting.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use kefam_cli::{run, Command, ExperimentConfig, SourceKind};
use kefam_core::domains::{boundary_ray, catalog_instantiate, FamilyDefinition, FamilyParams};
use kefam_core::family_geom::{
    boundary_ratio_scan, geodesic_curvature, oracle_sample, wedge_identity_residual, FormBlocks, FormField, HSource,
    NumericH,
};
use kefam_core::fefferman::{background_pair, fefferman_sequence, fit_order, j_functional};
use kefam_core::ma_solver::{
    boundary_decay, build_slice_grid, einstein_residual, exhaustion_run, solve_on_grid, solve_slice, solve_slice_in,
    solve_us, SliceBackground, SolverOptions,
};
use kefam_core::triviality::{
    envelope_check, integrate_flow, trivialization_residual, FlowOptions, FlowPath, LiftSource, NumericLift,
    OracleLift,
};
use kefam_core::wirtinger::{jet, CPoint, FnField, ScalarField, Vars};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn verdict(n: u32, label: &str, pass: bool, detail: String) {
    let line = format!("criterion {n}: {} {label}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    // bypass the test harness capture so every line reaches the log
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    assert!(pass, "{}", line.trim_end());
}

fn family(name: &str, params: FamilyParams) -> Arc<FamilyDefinition> {
    Arc::new(catalog_instantiate(name, &params).unwrap())
}

fn ellipse(n: usize) -> Arc<FamilyDefinition> {
    family(
        "ellipsoid_family",
        FamilyParams {
            a: vec![2.5; n],
            q: vec![-1.5; n],
            ..FamilyParams::with_n(n)
        },
    )
}

fn oracle_h(fam: &FamilyDefinition) -> FormField {
    FormField::new("H", fam.oracle_h.as_ref().unwrap()).unwrap()
}

/// Uniform-direction point of the ball `|z| < rmax` at base `s`.
fn ball_point(rng: &mut ChaCha8Rng, n: usize, rmax: f64, s: Complex64) -> CPoint {
    let z: Vec<Complex64> = (0..n).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
    let norm = z.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    let r = rmax * rng.gen_range(0.0..1.0f64).powf(1.0 / (2 * n) as f64);
    CPoint::new(z.into_iter().map(|x| x * (r / norm)).collect(), s)
}

/// Least-squares slope of `log e` against `log h`.
fn slope(h: &[f64], e: &[f64]) -> f64 {
    let x: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = e.iter().map(|v| v.ln()).collect();
    let (mx, my) = (x.iter().sum::<f64>() / x.len() as f64, y.iter().sum::<f64>() / y.len() as f64);
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[test]
fn criterion_01_j_functional_oracle() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst, mut worst_hom) = (0.0f64, 0.0f64);
    for n in 1..=3 {
        let zeta = ScalarField::Closed(FnField::shared(n, |v: &Vars<'_>| v.z_norm_sqr().scale(-1.0).add_const(1.0)));
        for _ in 0..100 {
            let p = ball_point(&mut rng, n, 0.99, c(0.0, 0.0));
            worst = worst.max((j_functional(&zeta, &p).unwrap() - 1.0).abs());
            let k: f64 = rng.gen_range(0.3..3.0);
            let shape = move |v: &Vars<'_>| {
                let zz = v.z_norm_sqr();
                let re_sq = (v.z(0) * v.z(0) + v.zbar(0) * v.zbar(0)).scale(0.1);
                (zz + re_sq).scale(-1.0).add_const(1.0)
            };
            let base = ScalarField::Closed(FnField::shared(n, shape));
            let scaled = ScalarField::Closed(FnField::shared(n, move |v: &Vars<'_>| shape(v).scale(k)));
            let (jb, js) = (j_functional(&base, &p).unwrap(), j_functional(&scaled, &p).unwrap());
            let want = k.powi(n as i32 + 1) * jb;
            worst_hom = worst_hom.max((js - want).abs() / (1.0 + want.abs()));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        1,
        "J-functional oracle",
        worst <= 1e-10 && worst_hom <= 1e-10 && secs < 1.0,
        format!("max |J(1-|z|^2) - 1| = {worst:.2e}, homogeneity {worst_hom:.2e}, {secs:.2} s"),
    );
}

#[test]
fn criterion_02_fefferman_fixed_point_and_orders() {
    let t0 = Instant::now();
    let ball = family("ball_family", FamilyParams::with_n(2));
    let s0 = c(0.0, 0.0);
    let seq = fefferman_sequence(&ball, s0, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut fixed = 0.0f64;
    for _ in 0..50 {
        let p = ball_point(&mut rng, 2, 0.99, s0);
        for l in 0..3 {
            let r = jet(&seq.rho[l], &p, 0).unwrap().value.re;
            fixed = fixed.max((r - (1.0 - p.z_norm_sqr())).abs());
        }
    }
    let ell = family(
        "ellipsoid_family",
        FamilyParams {
            a: vec![1.0, 2.0],
            q: vec![0.3, -0.5],
            ..FamilyParams::with_n(2)
        },
    );
    let seq = fefferman_sequence(&ell, s0, 3).unwrap();
    let mut orders = Vec::new();
    let mut ok = fixed <= 1e-10;
    for a in 0..2 {
        let mut dir = vec![c(0.2, 0.1); 2];
        dir[a] = c(1.0, 0.3);
        let q = ell.boundary_point(s0, &dir).unwrap();
        let ray = boundary_ray(&ell, &q, 8, -0.1, 0.5).unwrap();
        let abs: Vec<f64> = ray.phi.iter().map(|p| p.abs()).collect();
        for l in 1..=3 {
            let vals: Vec<f64> = ray
                .points
                .iter()
                .map(|p| 1.0 - jet(&seq.j_of_rho[l - 1], p, 0).unwrap().value.re)
                .collect();
            let e = fit_order(&abs, &vals, 1.5).unwrap().exponent;
            ok &= e >= l as f64 - 0.3;
            orders.push(format!("l={l}:{e:.2}"));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        2,
        "Fefferman fixed point and vanishing orders",
        ok && secs < 30.0,
        format!("ball |rho^l - (1-|z|^2)| = {fixed:.2e}; ellipsoid orders [{}]; {secs:.1} s", orders.join(" ")),
    );
}

#[test]
fn criterion_03_wedge_identity() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst, mut worst_schur) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let n = rng.gen_range(1..=3usize);
        let m = n + 1;
        let a = DMatrix::from_fn(m, m, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let mut h = &a * a.adjoint();
        for i in 0..n {
            h[(i, i)] += c(rng.gen_range(0.05..1.0), 0.0);
        }
        h[(n, n)] -= c(rng.gen_range(0.0..2.0), 0.0);
        let at = CPoint::origin(n);
        let blocks = FormBlocks::from_full(&h);
        worst = worst.max(blocks.wedge_residual(&at).unwrap());
        // independent: Schur complement of the slice block via LU
        let slice = h.view((0, 0), (n, n)).into_owned();
        let row = h.view((n, 0), (1, n)).into_owned();
        let col = h.view((0, n), (n, 1)).into_owned();
        let x = slice.lu().solve(&col).unwrap();
        let schur = h[(n, n)].re - (row * x)[(0, 0)].re;
        let got = blocks.curvature(&at).unwrap();
        worst_schur = worst_schur.max((got - schur).abs() / (1.0 + schur.abs()));
    }
    let mut worst_ball = 0.0f64;
    for n in 1..=3 {
        let fam = family("ball_family", FamilyParams::with_n(n));
        let h = oracle_h(&fam);
        for _ in 0..30 {
            let s = c(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3));
            let p = ball_point(&mut rng, n, 0.9 * (1.0 - s.norm_sqr()).sqrt(), s);
            worst_ball = worst_ball.max(wedge_identity_residual(&h, &p).unwrap());
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        3,
        "wedge identity",
        worst <= 1e-12 && worst_schur <= 1e-12 && worst_ball <= 1e-10 && secs < 5.0,
        format!("random {worst:.2e} (Schur {worst_schur:.2e}), ball jets {worst_ball:.2e}, {secs:.2} s"),
    );
}

#[test]
fn criterion_04_exact_solution_regression() {
    let t0 = Instant::now();
    let fam = family("ball_family", FamilyParams::with_n(1));
    let s0 = c(0.0, 0.0);
    let opts = SolverOptions::default();
    let exact = solve_slice(&fam, s0, 65, 2, &opts).unwrap().solution;
    let sup = exact.grid.interior().iter().map(|&i| exact.u[i].abs()).fold(0.0, f64::max);

    let pair = background_pair(&fam, s0, 2, None).unwrap();
    let grid = Arc::new(build_slice_grid(&fam, s0, 65, None).unwrap());
    let mut bg = SliceBackground::sample(&grid, &pair).unwrap();
    let f_const = 0.37;
    for (i, v) in bg.f.iter_mut().enumerate() {
        if grid.in_mask(i) {
            *v = f_const;
        }
    }
    let shifted = solve_on_grid(grid, bg, &opts).unwrap();
    let want = -f_const / 2.0;
    let shift_err = shifted.grid.interior().iter().map(|&i| (shifted.u[i] - want).abs()).fold(0.0, f64::max);
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        4,
        "exact-solution regression",
        exact.converged && sup <= 1e-9 && exact.iterations <= 2 && shift_err <= 1e-9 && secs < 10.0,
        format!(
            "disc |u| = {sup:.2e} in {} Newton steps; constant-F error {shift_err:.2e}; {secs:.1} s",
            exact.iterations
        ),
    );
}

#[test]
fn criterion_05_self_convergence() {
    let t0 = Instant::now();
    let fam = ellipse(1);
    let s0 = c(0.0, 0.0);
    let opts = SolverOptions::default();
    let sols: Vec<_> = [65usize, 129, 257]
        .iter()
        .map(|&r| solve_slice(&fam, s0, r, 2, &opts).unwrap().solution)
        .collect();
    // coarse nodes that are interior on every grid
    let mut d = [0.0f64; 2];
    for &i in sols[0].grid.interior() {
        let x = sols[0].grid.coords(i);
        let idx: Vec<Option<usize>> = sols.iter().map(|s| s.grid.node_at(&x, 1e-9)).collect();
        if idx.iter().zip(&sols).any(|(j, s)| !j.is_some_and(|j| s.grid.is_interior(j))) {
            continue;
        }
        let u: Vec<f64> = idx.iter().zip(&sols).map(|(j, s)| s.u[j.unwrap()]).collect();
        d[0] = d[0].max((u[0] - u[1]).abs());
        d[1] = d[1].max((u[1] - u[2]).abs());
    }
    let u_order = (d[0] / d[1]).log2();
    let spacing: Vec<f64> = sols.iter().map(|s| s.grid.max_spacing()).collect();
    let ein: Vec<f64> = sols.iter().map(|s| einstein_residual(s, -0.25).unwrap()).collect();
    let e_order = slope(&spacing, &ein);
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        5,
        "self-convergence on the ellipse",
        u_order >= 1.7 && e_order >= 1.5 && secs < 300.0,
        format!(
            "u order {u_order:.2} (diffs {:.2e}, {:.2e}); Einstein residuals {:.2e}/{:.2e}/{:.2e}, order {e_order:.2}; {secs:.0} s",
            d[0], d[1], ein[0], ein[1], ein[2]
        ),
    );
}

#[test]
fn criterion_06_geodesic_curvature_oracle() {
    let t0 = Instant::now();
    let s0 = c(0.0, 0.0);
    let mut worst = 0.0f64;
    for n in 1..=3 {
        let h = oracle_h(&family("ball_family", FamilyParams::with_n(n)));
        let k = n as f64 + 1.0;
        worst = worst.max((geodesic_curvature(&h, &CPoint::origin(n)).unwrap() - n as f64 / k).abs());
        for r in [0.2, 0.4, 0.6, 0.8] {
            let got = geodesic_curvature(&h, &CPoint::on_axis(n, r, s0)).unwrap();
            worst = worst.max((got - (1.0 / (1.0 - r * r) - 1.0 / k)).abs());
        }
    }
    let opts = SolverOptions::default();
    let mut numeric = Vec::new();
    for (n, res) in [(1usize, 65usize), (2, 13)] {
        let fam = family("ball_family", FamilyParams::with_n(n));
        let src = HSource::Numeric(Arc::new(NumericH::build(&fam, s0, res, n + 1, 2e-2, &opts).unwrap()));
        let (ch, _) = src.c_of_h(&CPoint::origin(n)).unwrap();
        numeric.push((n, res, (ch - n as f64 / (n as f64 + 1.0)).abs()));
    }
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        6,
        "geodesic curvature of the ball family",
        worst <= 1e-8 && numeric.iter().all(|x| x.2 <= 1e-2) && secs < 600.0,
        format!(
            "oracle {worst:.2e}; numeric {}; {secs:.0} s",
            numeric
                .iter()
                .map(|(n, r, e)| format!("n={n} res {r}: {e:.2e}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    );
}

#[test]
fn criterion_07_triviality_null_test() {
    let s = c(0.1, 0.05);
    // Near the boundary the Hessian entries grow like 1/φ², so "exactly
    // zero" is judged relative to the largest entry at each point.
    let (mut abs_c, mut rel_c) = (0.0f64, 0.0f64);
    let (mut abs_eig, mut rel_eig) = (0.0f64, 0.0f64);
    for name in ["translated_ball", "hartogs_radius"] {
        for n in 1..=2 {
            let fam = family(name, FamilyParams::with_n(n));
            let h = oracle_h(&fam);
            for p in std::iter::once(fam.slice_center(s)).chain(fam.interior_net(s, 30, 4)) {
                let smp = oracle_sample(&h, &p).unwrap();
                let scale = h.blocks(&p).unwrap().full().iter().map(|x| x.norm()).fold(1.0, f64::max);
                let cz = smp.c_h.abs().max(smp.dbar_norm.abs());
                abs_c = abs_c.max(cz);
                rel_c = rel_c.max(cz / scale);
                abs_eig = abs_eig.max(smp.min_eig.abs());
                rel_eig = rel_eig.max(smp.min_eig.abs() / scale);
            }
        }
    }
    let mut numeric = Vec::new();
    for name in ["translated_ball", "hartogs_radius"] {
        let fam = family(name, FamilyParams::with_n(1));
        let num = Arc::new(NumericH::build(&fam, s, 33, 2, 2e-2, &SolverOptions::default()).unwrap());
        let src = HSource::Numeric(num.clone());
        let (mut wc, mut wd, mut count) = (0.0f64, 0.0f64, 0);
        for p in std::iter::once(fam.slice_center(s)).chain(fam.interior_net(s, 40, 4)) {
            let Ok(smp) = src.sample(&p) else { continue };
            wc = wc.max(smp.c_h.abs());
            wd = wd.max(smp.dbar_norm.abs());
            count += 1;
        }
        numeric.push((name, wc, wd, count));
    }
    let ok_num = numeric.iter().all(|&(_, wc, wd, k)| wc <= 5e-3 && wd <= 5e-3 && k > 0);
    verdict(
        7,
        "triviality null test",
        rel_c <= 1e-12 && rel_eig <= 1e-8 && ok_num,
        format!(
            "oracle |c(H)|,|dbar v|^2 <= {abs_c:.1e} ({rel_c:.1e} relative), |min eig| <= {abs_eig:.1e} ({rel_eig:.1e} relative); numeric {}",
            numeric
                .iter()
                .map(|(n, wc, wd, k)| format!("{n}: c {wc:.1e} dbar {wd:.1e} ({k} pts)"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    );
}

#[test]
fn criterion_08_schumacher_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut oracle = 0.0f64;
    for n in 1..=3 {
        let fam = family("ball_family", FamilyParams::with_n(n));
        let h = oracle_h(&fam);
        for _ in 0..25 {
            let s = c(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3));
            let p = ball_point(&mut rng, n, 0.85 * (1.0 - s.norm_sqr()).sqrt(), s);
            oracle = oracle.max(oracle_sample(&h, &p).unwrap().residual.abs());
        }
    }
    let fam = ellipse(1);
    let s = c(0.2, 0.1);
    let opts = SolverOptions::default();
    let mut errs = Vec::new();
    let mut hs = Vec::new();
    for res in [33usize, 65, 129] {
        let num = NumericH::build(&fam, s, res, 2, 2e-2, &opts).unwrap();
        hs.push(num.valid.max_spacing());
        let src = HSource::Numeric(Arc::new(num));
        let worst = [0.0, 0.1, 0.2]
            .iter()
            .map(|&x| src.sample(&CPoint::on_axis(1, x, s)).unwrap().residual.abs())
            .fold(0.0, f64::max);
        errs.push(worst);
    }
    let decreasing = errs.windows(2).all(|w| w[1] < w[0]);
    let order = slope(&hs, &errs);
    verdict(
        8,
        "Schumacher identity",
        oracle <= 1e-8 && decreasing && order >= 1.5,
        format!(
            "oracle {oracle:.2e}; ellipse residuals {:.2e}/{:.2e}/{:.2e} at res 33/65/129, order {order:.2}",
            errs[0], errs[1], errs[2]
        ),
    );
}

/// `|φ|` levels `0.512·2^{−k}`, `k < 10`, ending at `1e−3`.
const RATIO_FIRST: f64 = 0.512;
const RATIO_COUNT: usize = 10;

#[test]
fn criterion_09a_boundary_ratio_on_the_ball_oracle() {
    let mut lines = Vec::new();
    let mut ok = true;
    for n in 1..=2 {
        let fam = family("ball_family", FamilyParams::with_n(n));
        let s0 = c(0.1, 0.0);
        let bg = background_pair(&fam, s0, n + 1, None).unwrap();
        let src = HSource::oracle(&fam).unwrap();
        let mut dir = vec![c(0.0, 0.0); n];
        dir[0] = c(0.6, 0.8);
        let q = fam.boundary_point(s0, &dir).unwrap();
        let scan = boundary_ratio_scan(&fam, &bg, &src, &q, RATIO_FIRST, RATIO_COUNT).unwrap();
        let last = scan.rows.last().unwrap().abs_phi;
        ok &= scan.rows.len() == RATIO_COUNT && (last - 1e-3).abs() < 1e-9 && scan.monotone_tail >= 5;
        ok &= scan.final_deviation <= 0.05;
        lines.push(format!(
            "n={n}: final |ratio-1| {:.2e} at |phi| {last:.1e}, monotone tail {}",
            scan.final_deviation, scan.monotone_tail
        ));
    }
    verdict(9, "boundary ratio (ball_family oracle)", ok, lines.join("; "));
}

#[test]
fn criterion_09b_boundary_ratio_on_perturbed_ball_numeric() {
    let fam = family("perturbed_ball", FamilyParams::with_n(1));
    let s0 = c(0.0, 0.0);
    let bg = background_pair(&fam, s0, 2, None).unwrap();
    let src = HSource::Numeric(Arc::new(NumericH::build(&fam, s0, 257, 2, 2e-2, &SolverOptions::default()).unwrap()));
    let q = fam.boundary_point(s0, &[c(0.6, 0.8)]).unwrap();
    let scan = boundary_ratio_scan(&fam, &bg, &src, &q, RATIO_FIRST, RATIO_COUNT).unwrap();
    let last = scan.rows.last().map_or(f64::NAN, |r| r.abs_phi);
    let reached = scan.rows.len() == RATIO_COUNT;
    verdict(
        9,
        "boundary ratio (perturbed_ball numeric, res 257)",
        reached && scan.monotone_tail >= 5,
        format!(
            "{} of {RATIO_COUNT} levels evaluable, deepest |phi| {last:.1e}, |ratio-1| there {:.2e}, monotone tail {}",
            scan.rows.len(),
            scan.final_deviation,
            scan.monotone_tail
        ),
    );
}

#[test]
fn criterion_10_decay_orders() {
    let opts = SolverOptions::default();
    let s = c(0.2, 0.0);
    let mut out = Vec::new();
    let mut ok = true;
    for (n, res, ratio, min_u, min_us) in [(1usize, 257usize, 0.5, 1.2, None), (2, 25, 0.5f64.sqrt(), 2.2 - 0.4, Some(0.4))] {
        let fam = ellipse(n);
        let solved = solve_slice(&fam, s, res, n + 1, &opts).unwrap();
        let mut dir = vec![c(0.0, 0.0); n];
        dir[0] = c(0.6, 0.8);
        let q = fam.boundary_point(s, &dir).unwrap();
        let (_, fu) = boundary_decay(&fam, &solved.solution.u_field(), &q, 0.5, ratio).unwrap();
        ok &= fu.exponent >= min_u;
        let mut line = format!("n={n} res {res}: |u| order {:.2} (>= {min_u})", fu.exponent);
        if let Some(m) = min_us {
            let us = solve_us(&solved.background, &solved.solution, &opts).unwrap();
            let (_, fs) = boundary_decay(&fam, &us, &q, 0.5, ratio).unwrap();
            ok &= fs.exponent >= m;
            line += &format!(", |u_s| order {:.2} (>= {m})", fs.exponent);
        }
        out.push(line);
    }
    verdict(10, "boundary decay orders", ok, out.join("; "));
}

#[test]
fn criterion_11_us_consistency() {
    let fam = ellipse(1);
    let s = c(0.2, 0.1);
    let res = 65;
    let step = 1e-2;
    let (lo, hi) = fam.slice_box(c(0.0, 0.0));
    let opts = SolverOptions::default();
    let centre = solve_slice_in(&fam, s, &lo, &hi, res, 2, &opts).unwrap();
    let us = solve_us(&centre.background, &centre.solution, &opts).unwrap();
    let at = |d: Complex64| solve_slice_in(&fam, s + d, &lo, &hi, res, 2, &opts).unwrap().solution;
    let shifted = [at(c(step, 0.0)), at(c(-step, 0.0)), at(c(0.0, step)), at(c(0.0, -step))];
    let mut sup = 0.0f64;
    let mut nodes = 0;
    for &i in centre.solution.grid.interior() {
        if !shifted.iter().all(|x| x.grid.is_interior(i)) {
            continue;
        }
        let dsig = (shifted[0].u[i] - shifted[1].u[i]) / (2.0 * step);
        let dtau = (shifted[2].u[i] - shifted[3].u[i]) / (2.0 * step);
        // ∂_s = ½(∂_σ − i∂_τ)
        let fd = c(dsig, -dtau) * 0.5;
        sup = sup.max((fd - us.value(i)).norm());
        nodes += 1;
    }
    verdict(
        11,
        "u_s consistency",
        nodes > 0 && sup <= 5e-3,
        format!("sup |u_s - central difference| = {sup:.2e} over {nodes} nodes at res {res}"),
    );
}

#[test]
fn criterion_12_exhaustion_monotonicity() {
    let opts = SolverOptions::default();
    let disc = family("ball_family", FamilyParams::with_n(1));
    let radii = [0.6f64, 0.8, 0.95];
    let levels: Vec<f64> = radii.iter().map(|r| -(1.0 - r * r).ln()).collect();
    let run = exhaustion_run(&disc, c(0.0, 0.0), &levels, 65, 2, &opts).unwrap();
    let origin = CPoint::origin(1);
    let (mut pot_err, mut logdet_err) = (0.0f64, 0.0f64);
    let mut values = Vec::new();
    for (k, r) in radii.iter().enumerate() {
        // closed-form sub-disc metric r²/(r² − |z|²)², normalized by log det h = 2h
        let metric0 = r * r / (r * r).powi(2);
        let h0 = run.potential_at(k, &origin).unwrap();
        pot_err = pot_err.max((h0 - metric0.ln() / 2.0).abs());
        let sol = &run.levels[k].solution;
        let node = sol.grid.node_at(&[0.0, 0.0], 1e-12).unwrap();
        let m = sol.metric_at(sol.grid.unknown_of(node).unwrap());
        logdet_err = logdet_err.max((m.determinant().re.ln() - (1.0 / (r * r)).ln()).abs());
        values.push(h0);
    }
    let decreasing = values.windows(2).all(|w| w[1] < w[0]);
    let ell = ellipse(1);
    let erun = exhaustion_run(&ell, c(0.2, 0.0), &[1.0, 2.0, 4.0], 65, 2, &opts).unwrap();
    let gap = run
        .monotonicity
        .iter()
        .chain(&erun.monotonicity)
        .map(|m| m.min_gap)
        .fold(f64::INFINITY, f64::min);
    verdict(
        12,
        "exhaustion monotonicity",
        gap >= -1e-8 && pot_err <= 1e-6 && logdet_err <= 1e-6 && decreasing,
        format!(
            "min gap {gap:.2e}; disc h^r(0) error {pot_err:.1e}, log det h^r(0) vs log(1/r^2) error {logdet_err:.1e}"
        ),
    );
}

fn flow_end(fam: &FamilyDefinition, src: &dyn LiftSource, p: &CPoint, s: Complex64) -> FlowPath {
    integrate_flow(fam, src, p, s, &FlowOptions::default()).unwrap()
}

#[test]
fn criterion_13_flow_triviality() {
    let opts = FlowOptions::default();
    let s0 = c(0.0, 0.0);
    let mut endpoint = 0.0f64;
    let mut envelope_ok = true;
    let mut fitted = 0.0f64;
    for n in 1..=2 {
        for name in ["translated_ball", "hartogs_radius"] {
            let fam = family(name, FamilyParams::with_n(n));
            let src = OracleLift(oracle_h(&fam));
            for r in [0.0, 0.3, 0.6] {
                for target in [c(0.3, 0.0), c(0.2, -0.2)] {
                    let p = CPoint::on_axis(n, r, s0);
                    let path = flow_end(&fam, &src, &p, target);
                    // closed-form endpoints: z + s/2 (translation), z·e^{s} (Hartogs radius)
                    let want = if name == "translated_ball" { p.z[0] + target * 0.5 } else { p.z[0] * target.exp() };
                    endpoint = endpoint.max((path.end().z[0] - want).norm());
                    endpoint = endpoint.max(path.end().z[1..].iter().map(|z| z.norm()).fold(0.0, f64::max));
                    let v = envelope_check(&path, 1.0).unwrap();
                    fitted = fitted.max(v.minimal_c);
                    let c_fit = v.minimal_c * (1.0 + 1e-6) + 1e-12;
                    envelope_ok &= envelope_check(&path, c_fit).unwrap().holds;
                }
            }
        }
    }
    let starts = [CPoint::on_axis(1, 0.3, s0), CPoint::on_axis(1, 0.5, s0)];
    let bases = [c(0.2, 0.1)];
    let mut trivial_defect = 0.0f64;
    for name in ["translated_ball", "hartogs_radius"] {
        let fam = family(name, FamilyParams::with_n(1));
        let d = trivialization_residual(&fam, &OracleLift(oracle_h(&fam)), &starts, &bases, 1e-2, &opts).unwrap();
        trivial_defect = trivial_defect.max(d.defect);
    }
    let tb = family("translated_ball", FamilyParams::with_n(1));
    let num = NumericLift::new(&tb, 0.3, 33, 2, &SolverOptions::default()).unwrap();
    let numeric_trivial = trivialization_residual(&tb, &num, &starts, &bases, 1e-2, &opts).unwrap().defect;
    let ball = family("ball_family", FamilyParams::with_n(1));
    let num = NumericLift::new(&ball, 0.3, 33, 2, &SolverOptions::default()).unwrap();
    let ball_defect = trivialization_residual(&ball, &num, &starts, &bases, 1e-2, &opts).unwrap().defect;
    verdict(
        13,
        "flow triviality",
        endpoint <= 1e-6 && envelope_ok && trivial_defect <= 1e-6 && numeric_trivial <= 1e-6 && ball_defect >= 1e-2,
        format!(
            "endpoint error {endpoint:.1e}; envelope holds with fitted c = {fitted:.2e}; defect trivial {trivial_defect:.1e} (numeric {numeric_trivial:.1e}), ball_family {ball_defect:.2e}"
        ),
    );
}

fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn criterion_14_determinism_across_workers() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut trees = Vec::new();
    for (dir, workers) in dirs.iter().zip([1usize, 8]) {
        let mut cfg = ExperimentConfig::for_family(
            "ellipsoid_family",
            FamilyParams {
                a: vec![2.5],
                q: vec![-1.5],
                ..FamilyParams::with_n(1)
            },
        );
        cfg.output_dir = dir.path().to_path_buf();
        cfg.resolutions = vec![17];
        cfg.samples = 8;
        cfg.seed = 5;
        cfg.source = SourceKind::Numeric;
        cfg.base_samples = vec![[0.1, 0.05]];
        cfg.flow.start_radii = vec![0.3];
        cfg.flow.targets = vec![[0.1, 0.0]];
        cfg.flow.defect_samples = vec![];
        for cmd in Command::ALL {
            run(&cfg, cmd, Some(workers)).unwrap();
        }
        trees.push(read_tree(dir.path()));
    }
    let names: Vec<&String> = trees[0].keys().collect();
    let differing: Vec<&String> = names.iter().copied().filter(|k| trees[1].get(*k) != trees[0].get(*k)).collect();
    let same_set = trees[0].len() == trees[1].len();
    verdict(
        14,
        "determinism across 1 and 8 workers",
        same_set && differing.is_empty() && !names.is_empty(),
        format!("{} files compared, {} differ", names.len(), differing.len()),
    );
}
