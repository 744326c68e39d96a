//! Damped Newton solver for the slice Monge–Ampère problem
//! `det(w_αβ̄ + u_αβ̄) = e^{(n+1)u} e^{F} det(w_αβ̄)` on masked grids,
//! together with the metric `h = w + u`, its Einstein residual, the
//! linearized base-derivative solve and sublevel exhaustions.

pub mod grid;
pub mod operator;

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domains::{boundary_ray, min_eigenvalue, BoundaryRay, FamilyDefinition};
use crate::error::{Error, Result};
use crate::fefferman::{background_pair, fit_order, BackgroundPair, OrderFit};
use crate::wirtinger::taylor::LayoutKey;
use crate::wirtinger::{var_s, var_z, var_zbar, CPoint, GridField};
use grid::SliceGrid;
use operator::{bicgstab, Csr, HessStencil};

/// Band nodes closer to the boundary than this (in `|φ|`) carry zero
/// Dirichlet data instead of evaluating the background there.
pub const BAND_PHI_FLOOR: f64 = 1e-6;

/// Newton and Krylov controls.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Stop when the sup-norm of the residual drops below this.
    pub tol: f64,
    pub max_newton: usize,
    pub max_halvings: usize,
    pub krylov_tol: f64,
    pub max_krylov: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-9,
            max_newton: 50,
            max_halvings: 20,
            krylov_tol: 1e-10,
            max_krylov: 20_000,
        }
    }
}

/// Slice grid of `D_s` with `res` nodes across the slice bounding box.
pub fn build_slice_grid(fam: &FamilyDefinition, s: Complex64, res: usize, eps_cut: Option<f64>) -> Result<SliceGrid> {
    let (lo, hi) = fam.slice_box(s);
    build_slice_grid_in(fam, s, &lo, &hi, res, eps_cut)
}

/// Slice grid on an explicit box, so grids of nearby slices can share nodes.
pub fn build_slice_grid_in(
    fam: &FamilyDefinition,
    s: Complex64,
    lo: &[f64],
    hi: &[f64],
    res: usize,
    eps_cut: Option<f64>,
) -> Result<SliceGrid> {
    SliceGrid::around(fam.n, s, lo, hi, res, eps_cut, |p| fam.phi_value(p))
}

/// Background data sampled on a grid.
#[derive(Clone, Debug)]
pub struct SliceBackground {
    /// `w` at interior nodes, by unknown index.
    pub w: Vec<f64>,
    /// `(w_αβ̄)` at interior nodes, by unknown index.
    pub hess: Vec<DMatrix<Complex64>>,
    /// `F` at every grid node (NaN where undefined or outside the mask).
    pub f: Vec<f64>,
}

impl SliceBackground {
    pub fn sample(grid: &SliceGrid, pair: &BackgroundPair) -> Result<SliceBackground> {
        let data: Vec<Option<_>> = (0..grid.len())
            .into_par_iter()
            .map(|i| {
                if !grid.in_mask(i) || (!grid.is_interior(i) && grid.phi[i] >= -BAND_PHI_FLOOR) {
                    return Ok(None);
                }
                match pair.node_data(&grid.point(i)) {
                    Ok(d) if d.f.is_finite() => Ok(Some(d)),
                    Ok(_) | Err(_) if !grid.is_interior(i) => Ok(None),
                    Ok(_) => Err(Error::SingularSliceBlock(grid.point(i))),
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<_>>()?;
        let f = data.iter().map(|d| d.as_ref().map_or(f64::NAN, |d| d.f)).collect();
        let mut w = Vec::with_capacity(grid.interior_count());
        let mut hess = Vec::with_capacity(grid.interior_count());
        for &i in grid.interior() {
            let d = data[i].as_ref().expect("interior data");
            w.push(d.w);
            hess.push(d.hess.clone());
        }
        Ok(SliceBackground { w, hess, f })
    }

    /// Dirichlet value carried by a band node: the solution of the equation
    /// with the Hessian of `u` frozen at zero, `−F/(n+1)` (zero where `F`
    /// is undefined).
    fn band_value(&self, idx: usize, n: usize) -> f64 {
        let f = self.f[idx];
        if f.is_finite() {
            -f / (n as f64 + 1.0)
        } else {
            0.0
        }
    }
}

/// Converged (or best) solution of a slice problem.
#[derive(Clone, Debug)]
pub struct MASolution {
    pub grid: Arc<SliceGrid>,
    pub background: SliceBackground,
    /// `u` at every grid node; band nodes carry their Dirichlet values and
    /// exterior nodes hold zero.
    pub u: Vec<f64>,
    /// Sup-norm residual before each Newton step and at the end.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Smallest `c ≥ 1` with `w/c ≤ h ≤ c·w` at every interior node.
    pub pinching: f64,
    stencil: Arc<HessStencil>,
    nbr: Arc<Vec<u32>>,
}

struct Discretization<'a> {
    grid: &'a SliceGrid,
    bg: &'a SliceBackground,
    stencil: &'a HessStencil,
    nbr: &'a [u32],
    k: f64,
}

impl Discretization<'_> {
    fn row(&self, u: usize) -> &[u32] {
        let m = self.stencil.len();
        &self.nbr[u * m..(u + 1) * m]
    }

    fn metric(&self, u: usize, values: &[f64]) -> DMatrix<Complex64> {
        &self.bg.hess[u] + self.stencil.apply(self.row(u), values)
    }

    /// Residual `log det h − log det w − (n+1)u − F` at all interior nodes,
    /// or `None` if some `h` fails to be positive definite.
    fn residual(&self, values: &[f64]) -> Option<Vec<f64>> {
        self.grid
            .interior()
            .par_iter()
            .enumerate()
            .map(|(k, &i)| {
                let h = self.metric(k, values);
                let ldh = log_det_pd(&h)?;
                let ldw = log_det_pd(&self.bg.hess[k])?;
                Some(ldh - ldw - self.k * values[i] - self.bg.f[i])
            })
            .collect()
    }

    /// Linearization `δu ↦ h^{αβ̄}δu_αβ̄ − (n+1)δu` on interior unknowns,
    /// plus the coefficients that couple each row to band nodes.
    fn jacobian(&self, values: &[f64]) -> Result<(Csr, Vec<Vec<(usize, f64)>>)> {
        let rows: Vec<(Vec<(usize, f64)>, Vec<(usize, f64)>)> = self
            .grid
            .interior()
            .par_iter()
            .enumerate()
            .map(|(k, &i)| {
                let h = self.metric(k, values);
                let hinv = h
                    .clone()
                    .try_inverse()
                    .ok_or_else(|| Error::SingularSliceBlock(self.grid.point(i)))?;
                let mut inner = Vec::with_capacity(self.stencil.len());
                let mut band = Vec::new();
                for (c, &j) in self.stencil.coeffs.iter().zip(self.row(k)) {
                    let j = j as usize;
                    let mut a = (&hinv * c).trace().re;
                    if j == i {
                        a -= self.k;
                    }
                    match self.grid.unknown_of(j) {
                        Some(col) => inner.push((col, a)),
                        None => band.push((j, a)),
                    }
                }
                Ok((inner, band))
            })
            .collect::<Result<_>>()?;
        let (inner, band): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
        Ok((Csr::from_rows(inner), band))
    }
}

/// Cholesky factor of a Hermitian matrix, `None` unless it is positive
/// definite. The complex factorization itself takes square roots of
/// negative pivots without complaint, so the pivots are checked here.
fn cholesky_pd(m: &DMatrix<Complex64>) -> Option<nalgebra::Cholesky<Complex64, nalgebra::Dyn>> {
    let c = m.clone().cholesky()?;
    c.l_dirty()
        .diagonal()
        .iter()
        .all(|d| d.re > 0.0 && d.re.is_finite() && d.im.abs() <= 1e-12 * d.re)
        .then_some(c)
}

fn log_det_pd(m: &DMatrix<Complex64>) -> Option<f64> {
    let c = cholesky_pd(m)?;
    Some(2.0 * c.l_dirty().diagonal().iter().map(|d| d.re.ln()).sum::<f64>())
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

/// Solve the slice problem on `grid` with sampled background `bg`.
pub fn solve_on_grid(grid: Arc<SliceGrid>, bg: SliceBackground, opts: &SolverOptions) -> Result<MASolution> {
    solve_on_grid_from(grid, bg, None, opts)
}

/// As [`solve_on_grid`], starting from `initial` (indexed by grid node) at
/// interior nodes instead of `−F/(n+1)`. A converged previous solution
/// makes this return without a Newton step.
pub fn solve_on_grid_from(
    grid: Arc<SliceGrid>,
    bg: SliceBackground,
    initial: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<MASolution> {
    let n = grid.n;
    let stencil = Arc::new(HessStencil::new(&grid));
    let nbr = Arc::new(stencil.neighbours(&grid, grid.interior()));
    if nbr.iter().any(|&j| j == u32::MAX || !grid.in_mask(j as usize)) {
        return Err(Error::StencilInconsistent);
    }
    let mut values: Vec<f64> = (0..grid.len())
        .map(|i| if grid.in_mask(i) { bg.band_value(i, n) } else { 0.0 })
        .collect();
    if let Some(init) = initial {
        if init.len() != grid.len() {
            return Err(Error::StencilInconsistent);
        }
        for &i in grid.interior() {
            values[i] = init[i];
        }
    }
    let disc = Discretization {
        grid: &grid,
        bg: &bg,
        stencil: &stencil,
        nbr: &nbr,
        k: n as f64 + 1.0,
    };
    // Scale the interior part of the guess toward zero until `w + u` is
    // positive definite everywhere; band values stay fixed.
    let mut r = None;
    for halvings in 0..=opts.max_halvings {
        if let Some(res) = disc.residual(&values) {
            r = Some(res);
            break;
        }
        let theta = if halvings + 1 == opts.max_halvings { 0.0 } else { 0.5 };
        for &i in grid.interior() {
            values[i] *= theta;
        }
    }
    let mut r = r.ok_or(Error::PositivityLost {
        iteration: 0,
        halvings: opts.max_halvings,
    })?;
    let mut trace = vec![sup_norm(&r)];
    let mut iterations = 0;
    let mut converged = trace[0] <= opts.tol;
    while !converged && iterations < opts.max_newton {
        iterations += 1;
        let (jac, _) = disc.jacobian(&values)?;
        let rhs: Vec<f64> = r.iter().map(|x| -x).collect();
        let (delta, rep) = bicgstab(&jac, &rhs, opts.krylov_tol, opts.max_krylov);
        if !rep.converged {
            log::warn!(
                "Krylov solve stopped at relative residual {:e} after {} iterations",
                rep.relative_residual,
                rep.iterations
            );
            if rep.relative_residual > 1e-3 || !rep.relative_residual.is_finite() {
                return Err(Error::LinearSolveFailed {
                    iterations: rep.iterations,
                    residual: rep.relative_residual,
                });
            }
        }
        let current = *trace.last().unwrap();
        let mut lambda = 1.0;
        let mut accepted = None;
        let mut positivity_failed = false;
        for halving in 0..=opts.max_halvings {
            let mut trial = values.clone();
            for (&i, d) in grid.interior().iter().zip(&delta) {
                trial[i] += lambda * d;
            }
            match disc.residual(&trial) {
                Some(rt) if sup_norm(&rt) <= (1.0 - 1e-4 * lambda) * current => {
                    accepted = Some((trial, rt, halving));
                    break;
                }
                Some(_) => positivity_failed = false,
                None => positivity_failed = true,
            }
            lambda *= 0.5;
        }
        match accepted {
            Some((trial, rt, halving)) => {
                log::debug!("newton {iterations}: step {lambda:e} after {halving} halvings");
                values = trial;
                r = rt;
                trace.push(sup_norm(&r));
                converged = *trace.last().unwrap() <= opts.tol;
            }
            None if positivity_failed => {
                return Err(Error::PositivityLost {
                    iteration: iterations,
                    halvings: opts.max_halvings,
                })
            }
            None => return Err(Error::NoConvergence { trace }),
        }
    }
    if !converged {
        return Err(Error::NoConvergence { trace });
    }
    let pinching = grid
        .interior()
        .par_iter()
        .enumerate()
        .map(|(k, _)| pinching_at(&bg.hess[k], &disc.metric(k, &values)))
        .reduce(|| 1.0, f64::max);
    Ok(MASolution {
        grid,
        background: bg,
        u: values,
        trace,
        iterations,
        converged,
        pinching,
        stencil,
        nbr,
    })
}

/// `max(λ_max, 1/λ_min)` for the eigenvalues of `h` relative to `w`.
fn pinching_at(w: &DMatrix<Complex64>, h: &DMatrix<Complex64>) -> f64 {
    let Some(chol) = cholesky_pd(w) else {
        return f64::INFINITY;
    };
    let l = chol.l();
    let linv = l.try_inverse().unwrap_or_else(|| DMatrix::zeros(w.nrows(), w.ncols()));
    let m = &linv * h * linv.adjoint();
    let m = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = m.symmetric_eigenvalues();
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &e| (a.min(e), b.max(e)));
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi.max(1.0 / lo)
    }
}

/// Span in decades of `|φ|` a decay fit must cover.
pub const DECAY_MIN_DECADES: f64 = 0.4;

/// Decay of `|f|` along the inward normal at the boundary point `q`,
/// sampled at `|φ| = first·ratio^k` for every level with `|φ| ≥ ε_cut`,
/// so that samples lie where the solver's equation is imposed.
pub fn boundary_decay(
    fam: &FamilyDefinition,
    field: &GridField,
    q: &CPoint,
    first: f64,
    ratio: f64,
) -> Result<(BoundaryRay, OrderFit)> {
    let cut = field.grid().eps_cut;
    let mut count = 0;
    let mut level = first.abs();
    while level >= cut {
        count += 1;
        level *= ratio;
    }
    let ray = boundary_ray(fam, q, count.max(1), -first.abs(), ratio)?;
    let vals = ray
        .points
        .iter()
        .map(|p| Ok(field.interpolate(p)?.norm()))
        .collect::<Result<Vec<f64>>>()?;
    let abs_phi: Vec<f64> = ray.phi.iter().map(|p| p.abs()).collect();
    let fit = fit_order(&abs_phi, &vals, DECAY_MIN_DECADES)?;
    Ok((ray, fit))
}

/// Background, grid and solution for one slice.
#[derive(Clone)]
pub struct SliceSolve {
    pub background: BackgroundPair,
    pub solution: MASolution,
}

/// Build the background of level `level`, grid and solve on slice `s`.
pub fn solve_slice(
    fam: &Arc<FamilyDefinition>,
    s: Complex64,
    res: usize,
    level: usize,
    opts: &SolverOptions,
) -> Result<SliceSolve> {
    let (lo, hi) = fam.slice_box(s);
    solve_slice_in(fam, s, &lo, &hi, res, level, opts)
}

/// As [`solve_slice`] on an explicit bounding box.
pub fn solve_slice_in(
    fam: &Arc<FamilyDefinition>,
    s: Complex64,
    lo: &[f64],
    hi: &[f64],
    res: usize,
    level: usize,
    opts: &SolverOptions,
) -> Result<SliceSolve> {
    let pair = background_pair(fam, s, level, None)?;
    let grid = Arc::new(build_slice_grid_in(fam, s, lo, hi, res, None)?);
    let bg = SliceBackground::sample(&grid, &pair)?;
    let solution = solve_on_grid(grid, bg, opts).map_err(|e| match e {
        e @ Error::SliceSolveFailed { .. } => e,
        e => Error::SliceSolveFailed { s, source: Box::new(e) },
    })?;
    Ok(SliceSolve {
        background: pair,
        solution,
    })
}

impl MASolution {
    fn disc(&self) -> Discretization<'_> {
        Discretization {
            grid: &self.grid,
            bg: &self.background,
            stencil: &self.stencil,
            nbr: &self.nbr,
            k: self.grid.n as f64 + 1.0,
        }
    }

    /// `u` as a grid field (for fourth-order jets and interpolation).
    pub fn u_field(&self) -> GridField {
        GridField::from_real(self.grid.clone(), &self.u)
    }

    /// `h_αβ̄ = w_αβ̄ + u_αβ̄` at interior unknown `k` with the solver's
    /// stencil.
    pub fn metric_at(&self, k: usize) -> DMatrix<Complex64> {
        self.disc().metric(k, &self.u)
    }

    /// `h = w + u` at every interior node (NaN elsewhere).
    pub fn potential(&self) -> Vec<f64> {
        let mut h = vec![f64::NAN; self.grid.len()];
        for (k, &i) in self.grid.interior().iter().enumerate() {
            h[i] = self.background.w[k] + self.u[i];
        }
        h
    }

    /// Sup-norm of the discrete residual at the stored solution.
    pub fn residual_norm(&self) -> f64 {
        self.disc().residual(&self.u).map_or(f64::INFINITY, |r| sup_norm(&r))
    }
}

/// Kähler–Einstein metric `h_αβ̄` and its inverse at interior nodes.
#[derive(Clone, Debug)]
pub struct KeMetricField {
    pub grid: Arc<SliceGrid>,
    pub h: Vec<DMatrix<Complex64>>,
    pub h_inv: Vec<DMatrix<Complex64>>,
    /// Largest `‖h·h⁻¹ − I‖` over the nodes.
    pub inverse_residual: f64,
}

pub fn ke_metric_field(sol: &MASolution) -> Result<KeMetricField> {
    let n = sol.grid.n;
    let out: Vec<std::result::Result<(DMatrix<Complex64>, DMatrix<Complex64>, f64), usize>> = (0..sol
        .grid
        .interior_count())
        .into_par_iter()
        .map(|k| {
            let h = sol.metric_at(k);
            if min_eigenvalue(&h) <= 0.0 {
                return Err(sol.grid.interior()[k]);
            }
            let inv = h.clone().try_inverse().ok_or(sol.grid.interior()[k])?;
            let res = (&h * &inv - DMatrix::<Complex64>::identity(n, n)).norm();
            Ok((h, inv, res))
        })
        .collect();
    let bad: Vec<usize> = out.iter().filter_map(|r| r.as_ref().err().copied()).collect();
    if !bad.is_empty() {
        return Err(Error::SingularMetric { nodes: bad });
    }
    let mut field = KeMetricField {
        grid: sol.grid.clone(),
        h: Vec::new(),
        h_inv: Vec::new(),
        inverse_residual: 0.0,
    };
    for (h, inv, res) in out.into_iter().flatten() {
        field.h.push(h);
        field.h_inv.push(inv);
        field.inverse_residual = field.inverse_residual.max(res);
    }
    Ok(field)
}

/// `sup ‖Ric(h) + (n+1)h‖` over interior nodes with `φ < phi_max` whose
/// stencil stays among interior nodes, with `Ric = −∂∂̄ log det h`.
pub fn einstein_residual(sol: &MASolution, phi_max: f64) -> Result<f64> {
    let metric = ke_metric_field(sol)?;
    let grid = &sol.grid;
    let mut logdet = vec![0.0; grid.len()];
    for (k, &i) in grid.interior().iter().enumerate() {
        logdet[i] = metric.h[k].determinant().re.ln();
    }
    let disc = sol.disc();
    let kk = grid.n as f64 + 1.0;
    let worst = grid
        .interior()
        .par_iter()
        .enumerate()
        .filter(|&(k, &i)| grid.phi[i] < phi_max && disc.row(k).iter().all(|&j| grid.is_interior(j as usize)))
        .map(|(k, _)| {
            let ric = -sol.stencil.apply(disc.row(k), &logdet);
            (ric + &metric.h[k] * Complex64::new(kk, 0.0)).norm()
        })
        .reduce(|| f64::NEG_INFINITY, f64::max);
    if worst == f64::NEG_INFINITY {
        return Err(Error::EmptyInterior);
    }
    Ok(worst)
}

/// Base derivative `u_s` of the slice solution from the linearized problem
/// `−Δu_s + (n+1)u_s = −F_s + (Δ − Δ_w)w_s`, where `Δ = h^{αβ̄}∂_α∂_β̄`.
/// Band nodes carry the base derivative of their Dirichlet values.
pub fn solve_us(pair: &BackgroundPair, sol: &MASolution, opts: &SolverOptions) -> Result<GridField> {
    let grid = &sol.grid;
    let n = grid.n;
    let kk = n as f64 + 1.0;
    let disc = sol.disc();
    let (mut a, band) = disc.jacobian(&sol.u)?;
    a.scale(-1.0);
    let key = LayoutKey::new(n, true, 2, 1);
    let sv = var_s(n);
    let data: Vec<(Complex64, Complex64)> = (0..grid.len())
        .into_par_iter()
        .map(|i| -> Result<(Complex64, Complex64)> {
            if !grid.in_mask(i) || (!grid.is_interior(i) && grid.phi[i] >= -BAND_PHI_FLOOR) {
                return Ok((Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)));
            }
            let p = grid.point(i);
            let fs = match pair.f_closed().jet_at(&p, LayoutKey::new(n, true, 0, 1)) {
                Ok(j) if j.value().re.is_finite() => j.d(sv).value(),
                _ if !grid.is_interior(i) => Complex64::new(0.0, 0.0),
                Ok(_) => return Err(Error::SingularSliceBlock(p)),
                Err(e) => return Err(e),
            };
            let Some(k) = grid.unknown_of(i) else {
                return Ok((fs, Complex64::new(0.0, 0.0)));
            };
            let wj = pair.w_closed().jet_at(&p, key)?.d(sv);
            let ws_hess = DMatrix::from_fn(n, n, |a, b| wj.d(var_z(n, a)).d(var_zbar(n, b)).value());
            let h_inv = disc
                .metric(k, &sol.u)
                .try_inverse()
                .ok_or_else(|| Error::SingularSliceBlock(p.clone()))?;
            let w_inv = sol.background.hess[k]
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::SingularSliceBlock(p.clone()))?;
            let lap = (&h_inv * &ws_hess).trace();
            let lap_w = (&w_inv * &ws_hess).trace();
            Ok((fs, -fs + lap - lap_w))
        })
        .collect::<Result<_>>()?;
    let band_val = |j: usize| -data[j].0 / kk;
    let mut out = vec![Complex64::new(0.0, 0.0); grid.len()];
    for (j, slot) in out.iter_mut().enumerate() {
        if grid.in_mask(j) && !grid.is_interior(j) {
            *slot = band_val(j);
        }
    }
    for part in 0..2 {
        let pick = |c: Complex64| if part == 0 { c.re } else { c.im };
        let rhs: Vec<f64> = grid
            .interior()
            .iter()
            .zip(&band)
            .map(|(&i, row)| pick(data[i].1) - row.iter().map(|&(j, c)| -c * pick(band_val(j))).sum::<f64>())
            .collect();
        let (x, rep) = bicgstab(&a, &rhs, opts.krylov_tol, opts.max_krylov);
        if !rep.converged && rep.relative_residual > 1e-6 {
            return Err(Error::LinearSolveFailed {
                iterations: rep.iterations,
                residual: rep.relative_residual,
            });
        }
        for (&i, v) in grid.interior().iter().zip(x) {
            if part == 0 {
                out[i].re = v;
            } else {
                out[i].im = v;
            }
        }
    }
    Ok(GridField::new(grid.clone(), out))
}

/// One sublevel solve of an exhaustion.
#[derive(Clone)]
pub struct ExhaustionLevel {
    /// Level `N` of `ψ = −log(−φ)`, i.e. the domain `{φ < −e^{−N}}`.
    pub level: f64,
    pub solution: MASolution,
    /// `h^N = w + u` at interior nodes (NaN elsewhere).
    pub potential: Vec<f64>,
}

/// Pairwise comparison of consecutive exhaustion levels.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MonotonicityRow {
    pub from: f64,
    pub to: f64,
    /// `min(h^{from} − h^{to})` over nodes interior to both.
    pub min_gap: f64,
    pub nodes: usize,
}

#[derive(Clone)]
pub struct ExhaustionRun {
    pub levels: Vec<ExhaustionLevel>,
    pub monotonicity: Vec<MonotonicityRow>,
}

impl ExhaustionRun {
    /// `h^N` interpolated at a point of the slice.
    pub fn potential_at(&self, k: usize, p: &CPoint) -> Result<f64> {
        let lvl = &self.levels[k];
        let g = GridField::from_real(lvl.solution.grid.clone(), &lvl.potential.iter().map(|v| if v.is_nan() { 0.0 } else { *v }).collect::<Vec<_>>());
        Ok(g.interpolate(p)?.re)
    }
}

/// Solve on the sublevel domains `{φ(·, s) < −e^{−N}}` for increasing `N`,
/// all on the grid footprint of the full slice.
pub fn exhaustion_run(
    fam: &Arc<FamilyDefinition>,
    s: Complex64,
    levels: &[f64],
    res: usize,
    level: usize,
    opts: &SolverOptions,
) -> Result<ExhaustionRun> {
    let (lo, hi) = fam.slice_box(s);
    let mut sorted = levels.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut out = Vec::with_capacity(sorted.len());
    for &nl in &sorted {
        let sub = Arc::new(fam.sublevel((-nl).exp()));
        let solved = solve_slice_in(&sub, s, &lo, &hi, res, level, opts)?;
        let potential = solved.solution.potential();
        out.push(ExhaustionLevel {
            level: nl,
            solution: solved.solution,
            potential,
        });
    }
    let monotonicity = out
        .windows(2)
        .map(|w| {
            let (a, b) = (&w[0].potential, &w[1].potential);
            let gaps: Vec<f64> = a
                .iter()
                .zip(b)
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|(x, y)| x - y)
                .collect();
            MonotonicityRow {
                from: w[0].level,
                to: w[1].level,
                min_gap: gaps.iter().cloned().fold(f64::INFINITY, f64::min),
                nodes: gaps.len(),
            }
        })
        .collect();
    Ok(ExhaustionRun {
        levels: out,
        monotonicity,
    })
}
