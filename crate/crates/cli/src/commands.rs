//! Subcommand implementations. Each writes its tables and a
//! `<command>.verdict.json` into the output directory and returns the
//! verdict.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use kefam_core::domains::{boundary_ray, FamilyKind};
use kefam_core::family_geom::{curvature_report, psh_min_eigen_scan, BASE_STENCIL};
use kefam_core::fefferman::{background_pair_fixed, fefferman_sequence, fit_order};
use kefam_core::ma_solver::{
    build_slice_grid_in, einstein_residual, exhaustion_run, solve_on_grid_from, MASolution, SliceBackground,
};
use kefam_core::triviality::{envelope_check, trivialization_residual};
use kefam_core::wirtinger::jet;
use kefam_core::{
    background_pair, integrate_flow, BackgroundPair, CPoint, FamilyDefinition, FormField, HSource, LiftSource,
    NumericH, NumericLift, OracleLift,
};
use log::info;
use num_complex::Complex64;
use serde::Serialize;
use serde_json::json;

use crate::cache::{SliceCache, SliceKey};
use crate::config::{ExperimentConfig, SourceKind};
use crate::error::{CliError, Context, Result};
use crate::output::{dump_field, ensure_dir, num, read_json, write_json, Check, Table, Verdict};

/// The subcommands.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Fefferman,
    SolveSlice,
    FamilyScan,
    PshCheck,
    Flow,
    Exhaustion,
    Report,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Fefferman,
        Command::SolveSlice,
        Command::FamilyScan,
        Command::PshCheck,
        Command::Flow,
        Command::Exhaustion,
        Command::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Fefferman => "fefferman",
            Command::SolveSlice => "solve-slice",
            Command::FamilyScan => "family-scan",
            Command::PshCheck => "psh-check",
            Command::Flow => "flow",
            Command::Exhaustion => "exhaustion",
            Command::Report => "report",
        }
    }
}

/// Shared state of one run.
pub struct Session {
    pub cfg: ExperimentConfig,
    pub family: Arc<FamilyDefinition>,
    pub out: PathBuf,
    pub cache: SliceCache,
}

impl Session {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let family = Arc::new(cfg.family_definition()?);
        let out = cfg.output_dir.clone();
        ensure_dir(&out)?;
        Ok(Session {
            cache: SliceCache::new(out.join("cache")),
            family,
            out,
            cfg,
        })
    }

    fn finish(&self, command: Command, checks: Vec<Check>, details: serde_json::Value, files: Vec<String>) -> Result<Verdict> {
        let v = Verdict::new(command.name(), &self.cfg.family, checks, details, files);
        write_json(&self.out.join(Verdict::file_name(command.name())), &v)?;
        Ok(v)
    }

    fn is_trivial(&self) -> bool {
        matches!(
            self.family.kind,
            FamilyKind::TranslatedBall { .. } | FamilyKind::HartogsRadius { .. }
        )
    }

    fn use_oracle(&self) -> Result<bool> {
        let has = self.family.oracle_h.is_some();
        match self.cfg.source {
            SourceKind::Auto => Ok(has),
            SourceKind::Numeric => Ok(false),
            SourceKind::Oracle if has => Ok(true),
            SourceKind::Oracle => Err(CliError::invalid(
                "source",
                format!("family `{}` has no closed-form metric", self.cfg.family),
            )),
        }
    }

    fn oracle_field(&self) -> Result<FormField> {
        let h = self.family.oracle_h.as_ref().expect("checked by use_oracle");
        FormField::new("H", h).context(|| "closed-form metric".into())
    }

    /// Solve one slice on the box `[lo, hi]`, warm-starting from the cache.
    pub fn solve_cached(
        &self,
        s: Complex64,
        lo: &[f64],
        hi: &[f64],
        res: usize,
        pair: &BackgroundPair,
    ) -> Result<MASolution> {
        let fam = &self.family;
        let opts = self.cfg.solver_options();
        let ctx = || format!("slice s = {s}, resolution {res}");
        let grid = Arc::new(build_slice_grid_in(fam, s, lo, hi, res, None).context(ctx)?);
        let bg = SliceBackground::sample(&grid, pair).context(ctx)?;
        let key = SliceKey::new(
            &self.cfg.family,
            &self.cfg.params,
            s,
            res,
            pair.level,
            pair.delta0,
            lo,
            hi,
            &opts,
        );
        let init = self.cache.load(&key, grid.len());
        let hit = init.is_some();
        let sol = solve_on_grid_from(grid, bg, init.as_deref(), &opts).context(ctx)?;
        info!(
            "slice s = {s} res {res}: {} Newton steps{}",
            sol.iterations,
            if hit { " (cached start)" } else { "" }
        );
        if sol.converged && !(hit && sol.iterations == 0) {
            self.cache.store(&key, &sol.u)?;
        }
        Ok(sol)
    }

    /// Numeric `h` around `s` from nine cached slice solves.
    pub fn numeric_h(&self, s: Complex64, res: usize) -> Result<NumericH> {
        let fam = &self.family;
        let level = self.cfg.level();
        let delta = self.cfg.base_step;
        let svals: Vec<Complex64> = BASE_STENCIL
            .iter()
            .map(|&(a, b)| s + Complex64::new(a as f64, b as f64) * delta)
            .collect();
        let d = 2 * fam.n;
        let (mut lo, mut hi) = (vec![f64::INFINITY; d], vec![f64::NEG_INFINITY; d]);
        for &sv in &svals {
            let (l, h) = fam.slice_box(sv);
            for k in 0..d {
                lo[k] = lo[k].min(l[k]);
                hi[k] = hi[k].max(h[k]);
            }
        }
        let ctx = || format!("base stencil around s = {s}");
        let center = background_pair(fam, s, level, None).context(ctx)?;
        let mut slices = Vec::with_capacity(svals.len());
        for (k, &sv) in svals.iter().enumerate() {
            let pair = if k == 0 {
                center.clone()
            } else {
                background_pair_fixed(fam, sv, level, center.delta0).context(ctx)?
            };
            slices.push(self.solve_cached(sv, &lo, &hi, res, &pair)?);
        }
        NumericH::from_slices(fam, s, delta, center, slices).context(ctx)
    }

    /// `h` for curvature work at base point `s`.
    fn h_source(&self, s: Complex64) -> Result<HSource> {
        if self.use_oracle()? {
            Ok(HSource::Oracle(self.oracle_field()?))
        } else {
            Ok(HSource::Numeric(Arc::new(self.numeric_h(s, self.cfg.resolution())?)))
        }
    }

    /// The slice center followed by quasi-random interior samples of
    /// `D_s`; for numeric sources only points inside the region where all
    /// nine slices are solved are kept.
    fn samples(&self, s: Complex64, source: &HSource) -> Result<Vec<CPoint>> {
        let mut net = vec![self.family.slice_center(s)];
        net.extend(self.family.interior_net(s, self.cfg.samples, self.cfg.seed));
        let kept: Vec<CPoint> = match source {
            HSource::Oracle(_) => net,
            HSource::Numeric(h) => net.into_iter().filter(|p| h.sample(p).is_ok()).collect(),
        };
        if kept.is_empty() {
            return Err(CliError::Core {
                context: format!("samples at s = {s}"),
                source: kefam_core::Error::EmptyInterior,
            });
        }
        Ok(kept)
    }
}

fn s_cols(s: Complex64) -> [String; 2] {
    [num(s.re), num(s.im)]
}

fn z_header(n: usize) -> Vec<String> {
    (1..=n)
        .flat_map(|a| [format!("z{a}_re"), format!("z{a}_im")])
        .collect()
}

fn z_cols(p: &CPoint) -> Vec<String> {
    p.z.iter().flat_map(|z| [num(z.re), num(z.im)]).collect()
}

/// Run one subcommand.
pub fn execute(session: &Session, command: Command) -> Result<Verdict> {
    match command {
        Command::Fefferman => fefferman(session),
        Command::SolveSlice => solve_slice(session),
        Command::FamilyScan => family_scan(session),
        Command::PshCheck => psh_check(session),
        Command::Flow => flow(session),
        Command::Exhaustion => exhaustion(session),
        Command::Report => report(&session.out),
    }
}

/// Vanishing orders of `1 − J(ρˡ)` along boundary rays, one ray per slice
/// coordinate direction.
fn fefferman(ss: &Session) -> Result<Verdict> {
    let fam = &ss.family;
    let n = fam.n;
    let level = ss.cfg.level();
    let mut table = Table::new(["s_re", "s_im", "ray", "level", "order", "fit_residual"]);
    let mut checks = Vec::new();
    let mut bgs = Vec::new();
    for s in ss.cfg.base_points() {
        let ctx = || format!("Fefferman sequence at s = {s}");
        let seq = fefferman_sequence(fam, s, level).context(ctx)?;
        let bg = background_pair(fam, s, level, None).context(ctx)?;
        bgs.push(json!({ "s": [s.re, s.im], "delta0": bg.delta0, "min_eig": bg.min_eig }));
        for a in 0..n {
            let mut dir = vec![Complex64::new(0.2, 0.1); n];
            dir[a] = Complex64::new(1.0, 0.3);
            let q = fam.boundary_point(s, &dir).context(ctx)?;
            let ray = boundary_ray(fam, &q, 8, -0.1, 0.5).context(ctx)?;
            let abs: Vec<f64> = ray.phi.iter().map(|p| p.abs()).collect();
            for l in 1..=level {
                let vals = ray
                    .points
                    .iter()
                    .map(|p| Ok(1.0 - jet(&seq.j_of_rho[l - 1], p, 0)?.value.re))
                    .collect::<kefam_core::Result<Vec<f64>>>()
                    .context(ctx)?;
                let fit = fit_order(&abs, &vals, 1.5).context(ctx)?;
                let [sr, si] = s_cols(s);
                table.push(vec![sr, si, a.to_string(), l.to_string(), num(fit.exponent), num(fit.residual)]);
                checks.push(Check::at_least(
                    format!("order s=({},{}) ray {a} level {l}", s.re, s.im),
                    fit.exponent,
                    l as f64 - 0.3,
                ));
            }
        }
    }
    table.write(&ss.out.join("fefferman.csv"))?;
    ss.finish(
        Command::Fefferman,
        checks,
        json!({ "level": level, "backgrounds": bgs }),
        vec!["fefferman.csv".into()],
    )
}

fn solve_slice(ss: &Session) -> Result<Verdict> {
    let fam = &ss.family;
    let level = ss.cfg.level();
    let mut table = Table::new([
        "s_re",
        "s_im",
        "resolution",
        "interior_nodes",
        "iterations",
        "residual",
        "pinching",
        "einstein_residual",
        "converged",
    ]);
    let mut files = vec!["solve_slice.csv".to_string()];
    let mut checks = Vec::new();
    for (k, s) in ss.cfg.base_points().into_iter().enumerate() {
        let (lo, hi) = fam.slice_box(s);
        let pair = background_pair(fam, s, level, None).context(|| format!("background at s = {s}"))?;
        for &res in &ss.cfg.resolutions {
            let sol = ss.solve_cached(s, &lo, &hi, res, &pair)?;
            let ein = einstein_residual(&sol, -0.25).context(|| format!("Einstein residual at s = {s}"))?;
            let [sr, si] = s_cols(s);
            table.push(vec![
                sr,
                si,
                res.to_string(),
                sol.grid.interior_count().to_string(),
                sol.iterations.to_string(),
                num(sol.residual_norm()),
                num(sol.pinching),
                num(ein),
                sol.converged.to_string(),
            ]);
            checks.push(Check::at_most(
                format!("residual s=({},{}) res {res}", s.re, s.im),
                sol.residual_norm(),
                ss.cfg.tolerances.newton,
            ));
            let mut u = sol.u.clone();
            for (i, v) in u.iter_mut().enumerate() {
                if !sol.grid.in_mask(i) {
                    *v = f64::NAN;
                }
            }
            files.extend(dump_field(&ss.out, &format!("slice_{k}_r{res}.u"), "u", &sol.grid, &u)?);
        }
    }
    table.write(&ss.out.join("solve_slice.csv"))?;
    ss.finish(Command::SolveSlice, checks, json!({ "level": level }), files)
}

#[derive(Serialize)]
struct ScanSummary {
    s: [f64; 2],
    samples: usize,
    min_c_h: f64,
    max_abs_c_h: f64,
    max_dbar_norm: f64,
    max_abs_residual: f64,
    min_eig: f64,
}

fn family_scan(ss: &Session) -> Result<Verdict> {
    let fam = &ss.family;
    let n = fam.n;
    let level = ss.cfg.level();
    let mut header = z_header(n);
    header.extend(
        ["s_re", "s_im", "phi", "cW", "cH", "ratio", "dbar_norm", "residual", "min_eig", "cH_err"].map(String::from),
    );
    let mut table = Table::new(header);
    let mut summaries = Vec::new();
    let (mut ch_max, mut dbar_max, mut ch_min) = (0.0f64, 0.0f64, f64::INFINITY);
    for s in ss.cfg.base_points() {
        let source = ss.h_source(s)?;
        let bg = background_pair(fam, s, level, None).context(|| format!("background at s = {s}"))?;
        let samples = ss.samples(s, &source)?;
        let rep = curvature_report(fam, &bg, &source, &samples).context(|| format!("curvature at s = {s}"))?;
        for r in &rep.rows {
            let mut row = z_cols(&r.point);
            row.extend(s_cols(s));
            row.extend(
                [r.phi, r.c_w, r.c_h, r.ratio, r.dbar_norm, r.residual, r.min_eig, r.c_h_err].map(num),
            );
            table.push(row);
        }
        ch_max = ch_max.max(rep.max_abs_c_h);
        dbar_max = dbar_max.max(rep.max_dbar_norm);
        ch_min = ch_min.min(rep.min_c_h);
        summaries.push(ScanSummary {
            s: [s.re, s.im],
            samples: rep.rows.len(),
            min_c_h: rep.min_c_h,
            max_abs_c_h: rep.max_abs_c_h,
            max_dbar_norm: rep.max_dbar_norm,
            max_abs_residual: rep.max_abs_residual,
            min_eig: rep.min_eig,
        });
    }
    table.write(&ss.out.join("family_scan.csv"))?;
    let tol = ss.cfg.tolerances.curvature;
    let checks = if ss.is_trivial() {
        vec![
            Check::at_most("cH_max", ch_max, tol),
            Check::at_most("dbar_norm_max", dbar_max, tol),
        ]
    } else {
        vec![Check::at_least("cH_min", ch_min, f64::MIN_POSITIVE)]
    };
    ss.finish(
        Command::FamilyScan,
        checks,
        json!({
            "source": if ss.use_oracle()? { "oracle" } else { "numeric" },
            "cH_max": ch_max,
            "cH_min": ch_min,
            "dbar_norm_max": dbar_max,
            "bases": summaries,
        }),
        vec!["family_scan.csv".into()],
    )
}

fn psh_check(ss: &Session) -> Result<Verdict> {
    let mut overall = f64::INFINITY;
    let mut at: Option<CPoint> = None;
    let mut per_base = Vec::new();
    for s in ss.cfg.base_points() {
        let source = ss.h_source(s)?;
        let samples = ss.samples(s, &source)?;
        let (e, p) = psh_min_eigen_scan(&source, &samples).context(|| format!("psh scan at s = {s}"))?;
        per_base.push(json!({ "s": [s.re, s.im], "min_eigenvalue": e, "samples": samples.len() }));
        if e < overall {
            overall = e;
            at = Some(p);
        }
    }
    ss.finish(
        Command::PshCheck,
        vec![Check::at_least("min_eigenvalue", overall, -ss.cfg.tolerances.psh)],
        json!({
            "source": if ss.use_oracle()? { "oracle" } else { "numeric" },
            "min_eigenvalue": overall,
            "at": at,
            "bases": per_base,
        }),
        Vec::new(),
    )
}

fn flow(ss: &Session) -> Result<Verdict> {
    let fam = &ss.family;
    let n = fam.n;
    let fc = &ss.cfg.flow;
    let opts = ss.cfg.flow_options();
    let targets: Vec<Complex64> = fc.targets.iter().map(|&[a, b]| Complex64::new(a, b)).collect();
    let defect_bases: Vec<Complex64> = fc.defect_samples.iter().map(|&[a, b]| Complex64::new(a, b)).collect();
    let source: Box<dyn LiftSource> = if ss.use_oracle()? {
        Box::new(OracleLift(ss.oracle_field()?))
    } else {
        let reach = targets
            .iter()
            .chain(&defect_bases)
            .map(|s| s.norm())
            .fold(0.0, f64::max)
            + 2.0 * fc.defect_step;
        Box::new(
            NumericLift::new(fam, reach, ss.cfg.resolution(), ss.cfg.level(), &ss.cfg.solver_options())
                .context(|| "numeric lift".into())?,
        )
    };
    let starts: Vec<CPoint> = fc
        .start_radii
        .iter()
        .map(|&r| CPoint::on_axis(n, r, Complex64::new(0.0, 0.0)))
        .collect();
    let mut files = Vec::new();
    let mut paths = Vec::new();
    let mut left = Vec::new();
    for (i, p) in starts.iter().enumerate() {
        for (j, &t) in targets.iter().enumerate() {
            match integrate_flow(fam, source.as_ref(), p, t, &opts) {
                Ok(path) => {
                    let mut header = vec!["t".to_string()];
                    header.extend(z_header(n));
                    header.extend(["s_re", "s_im", "phi"].map(String::from));
                    let mut table = Table::new(header);
                    for ((tt, q), phi) in path.t.iter().zip(&path.points).zip(&path.phi) {
                        let mut row = vec![num(*tt)];
                        row.extend(z_cols(q));
                        row.extend(s_cols(q.s));
                        row.push(num(*phi));
                        table.push(row);
                    }
                    let name = format!("flow_{i}_{j}.csv");
                    table.write(&ss.out.join(&name))?;
                    files.push(name);
                    paths.push(((i, j), path));
                }
                Err(e @ kefam_core::Error::LeftDomain { .. }) => left.push(json!({
                    "start": i, "target": j, "error": e.to_string()
                })),
                Err(e) => {
                    return Err(CliError::Core {
                        context: format!("flow from start {i} to target {j}"),
                        source: e,
                    })
                }
            }
        }
    }
    // envelope: one constant for the whole net
    let mut envelopes = Vec::new();
    let mut fitted: f64 = 0.0;
    for ((i, j), path) in &paths {
        if path.t.len() >= 10 && path.phi[0] < 0.0 {
            let v = envelope_check(path, 1.0).context(|| "envelope".into())?;
            fitted = fitted.max(v.minimal_c);
            envelopes.push((*i, *j, v.minimal_c));
        }
    }
    let c = fc.envelope_c.unwrap_or(fitted * (1.0 + 1e-6) + 1e-12);
    let mut envelope_ok = true;
    for ((_, _), path) in &paths {
        if path.t.len() >= 10 && path.phi[0] < 0.0 {
            envelope_ok &= envelope_check(path, c).context(|| "envelope".into())?.holds;
        }
    }
    let mut checks = vec![
        Check::at_most("flows_left_domain", left.len() as f64, 0.0),
        Check::at_least("envelope_holds", if envelope_ok { 1.0 } else { 0.0 }, 1.0),
    ];
    let defect_starts: Vec<CPoint> = starts.iter().filter(|p| p.z_norm_sqr() > 0.0).cloned().collect();
    let defect = if defect_bases.is_empty() || defect_starts.is_empty() {
        None
    } else {
        let d = trivialization_residual(fam, source.as_ref(), &defect_starts, &defect_bases, fc.defect_step, &opts)
            .context(|| "holomorphy defect".into())?;
        if ss.is_trivial() {
            checks.push(Check::at_most("holomorphy_defect", d.defect, ss.cfg.tolerances.defect));
        }
        Some(d)
    };
    ss.finish(
        Command::Flow,
        checks,
        json!({
            "source": if ss.use_oracle()? { "oracle" } else { "numeric" },
            "envelope_c": c,
            "fitted_minimal_c": fitted,
            "minimal_c": envelopes.iter().map(|(i, j, c)| json!({"start": i, "target": j, "c": c})).collect::<Vec<_>>(),
            "endpoints": paths.iter().map(|((i, j), p)| json!({"start": i, "target": j, "end": p.end()})).collect::<Vec<_>>(),
            "left_domain": left,
            "holomorphy_defect": defect.as_ref().map(|d| d.defect),
        }),
        files,
    )
}

fn exhaustion(ss: &Session) -> Result<Verdict> {
    let fam = &ss.family;
    let s = ss.cfg.base_points()[0];
    let run = exhaustion_run(
        fam,
        s,
        &ss.cfg.exhaustion.levels,
        ss.cfg.resolution(),
        ss.cfg.level(),
        &ss.cfg.solver_options(),
    )
    .context(|| format!("exhaustion at s = {s}"))?;
    let mut table = Table::new(["from", "to", "min_gap", "nodes"]);
    let mut min_gap = f64::INFINITY;
    for r in &run.monotonicity {
        table.push(vec![num(r.from), num(r.to), num(r.min_gap), r.nodes.to_string()]);
        min_gap = min_gap.min(r.min_gap);
    }
    table.write(&ss.out.join("exhaustion.csv"))?;
    let centre = fam.slice_center(s);
    let values: Vec<serde_json::Value> = (0..run.levels.len())
        .map(|k| json!({ "level": run.levels[k].level, "potential_at_center": run.potential_at(k, &centre).ok() }))
        .collect();
    ss.finish(
        Command::Exhaustion,
        vec![Check::at_least("min_gap", min_gap, -ss.cfg.tolerances.monotonicity)],
        json!({ "s": [s.re, s.im], "levels": values, "min_gap": min_gap }),
        vec!["exhaustion.csv".into()],
    )
}

/// Summary written by `report`.
#[derive(Clone, Debug, Serialize, serde::Deserialize)]
pub struct Report {
    pub pass: bool,
    pub verdicts: Vec<ReportEntry>,
}

#[derive(Clone, Debug, Serialize, serde::Deserialize)]
pub struct ReportEntry {
    pub file: String,
    pub command: String,
    pub family: String,
    pub pass: bool,
    pub failed_checks: Vec<String>,
}

/// Collect every `*.verdict.json` in `out` into `report.json`.
pub fn report(out: &Path) -> Result<Verdict> {
    let rd = std::fs::read_dir(out).map_err(|source| CliError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    let mut names: Vec<String> = rd
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".verdict.json") && n != "report.verdict.json")
        .collect();
    names.sort();
    let mut entries = Vec::new();
    for name in names {
        let v: Verdict = read_json(&out.join(&name))?;
        entries.push(ReportEntry {
            file: name,
            command: v.command,
            family: v.family,
            pass: v.pass,
            failed_checks: v.checks.iter().filter(|c| !c.pass).map(|c| c.name.clone()).collect(),
        });
    }
    let rep = Report {
        pass: entries.iter().all(|e| e.pass),
        verdicts: entries,
    };
    write_json(&out.join("report.json"), &rep)?;
    let checks = rep
        .verdicts
        .iter()
        .map(|e| Check::at_least(e.file.clone(), if e.pass { 1.0 } else { 0.0 }, 1.0))
        .collect();
    Ok(Verdict::new(
        "report",
        "",
        checks,
        json!({ "verdicts": rep.verdicts.len() }),
        vec!["report.json".into()],
    ))
}
