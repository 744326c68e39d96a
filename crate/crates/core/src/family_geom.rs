//! Horizontal lifts and geodesic curvatures of real (1,1)-forms over the
//! family, the Schumacher identity `−Δc(H) + (n+1)c(H) = |∂̄v_H|²`,
//! boundary ratio scans and plurisubharmonicity scans of `h`.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domains::{boundary_ray, min_eigenvalue, strong_pseudoconvexity_margin, FamilyDefinition};
use crate::error::{Error, Result};
use crate::fefferman::{background_pair, background_pair_fixed, BackgroundPair};
use crate::ma_solver::grid::SliceGrid;
use crate::ma_solver::{build_slice_grid_in, solve_on_grid, MASolution, SliceBackground, SolverOptions};
use crate::wirtinger::taylor::{inverse, Jet, LayoutKey};
use crate::wirtinger::{
    hermitian_form, jet, var_s, var_sbar, var_z, var_zbar, CPoint, ClosedForm, GridField, ScalarField,
    WirtingerJet,
};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// The blocks `τ_{αβ̄}`, `τ_{sβ̄}`, `τ_{αs̄}`, `τ_{ss̄}` of a real (1,1)-form
/// at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct FormBlocks {
    /// `τ_{αβ̄}` indexed `[(α, β)]`.
    pub slice: DMatrix<Complex64>,
    pub s_zbar: Vec<Complex64>,
    pub z_sbar: Vec<Complex64>,
    pub ss: f64,
}

impl FormBlocks {
    /// Split a full `(n+1)×(n+1)` matrix `(τ_{jk̄})` with the base last.
    pub fn from_full(m: &DMatrix<Complex64>) -> Self {
        let n = m.nrows() - 1;
        FormBlocks {
            slice: m.view((0, 0), (n, n)).into_owned(),
            s_zbar: (0..n).map(|b| m[(n, b)]).collect(),
            z_sbar: (0..n).map(|a| m[(a, n)]).collect(),
            ss: m[(n, n)].re,
        }
    }

    pub fn from_jet(j: &WirtingerJet) -> Self {
        FormBlocks {
            slice: j.hess_zzbar.clone(),
            s_zbar: j.hess_szbar.clone(),
            z_sbar: j.hess_zsbar.clone(),
            ss: j.hess_ssbar.re,
        }
    }

    pub fn n(&self) -> usize {
        self.slice.nrows()
    }

    pub fn full(&self) -> DMatrix<Complex64> {
        let n = self.n();
        let mut m = DMatrix::zeros(n + 1, n + 1);
        m.view_mut((0, 0), (n, n)).copy_from(&self.slice);
        for a in 0..n {
            m[(n, a)] = self.s_zbar[a];
            m[(a, n)] = self.z_sbar[a];
        }
        m[(n, n)] = Complex64::new(self.ss, 0.0);
        m
    }

    /// `(τ^{β̄α})` indexed `[(β, α)]`, i.e. the inverse of the slice block.
    pub fn slice_inverse(&self, at: &CPoint) -> Result<DMatrix<Complex64>> {
        if min_eigenvalue(&self.slice) <= 0.0 {
            return Err(Error::SingularSliceBlock(at.clone()));
        }
        self.slice
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::SingularSliceBlock(at.clone()))
    }

    /// Slice components `v^α = −τ_{sβ̄} τ^{β̄α}` of the horizontal lift.
    pub fn lift(&self, at: &CPoint) -> Result<Vec<Complex64>> {
        let inv = self.slice_inverse(at)?;
        let n = self.n();
        Ok((0..n)
            .map(|a| -(0..n).map(|b| self.s_zbar[b] * inv[(b, a)]).sum::<Complex64>())
            .collect())
    }

    /// `c(τ) = τ_{ss̄} − τ_{sβ̄} τ^{β̄α} τ_{αs̄}`.
    pub fn curvature(&self, at: &CPoint) -> Result<f64> {
        let v = self.lift(at)?;
        Ok(self.ss + v.iter().zip(&self.z_sbar).map(|(v, t)| v * t).sum::<Complex64>().re)
    }

    /// `|det(τ) − c(τ)·det(τ_{αβ̄})| / (1 + |det(τ)|)`.
    pub fn wedge_residual(&self, at: &CPoint) -> Result<f64> {
        let full = self.full().determinant().re;
        let c = self.curvature(at)?;
        let slice = self.slice.determinant().re;
        Ok((full - c * slice).abs() / (1.0 + full.abs()))
    }

    /// `⟨v, w⟩_τ = Σ τ_{jk̄} v^j w̄^k` over `(z, s)`.
    pub fn inner(&self, v: &[Complex64], w: &[Complex64]) -> Complex64 {
        let m = self.full();
        let mut acc = ZERO;
        for j in 0..m.nrows() {
            for k in 0..m.ncols() {
                acc += m[(j, k)] * v[j] * w[k].conj();
            }
        }
        acc
    }
}

/// A real (1,1)-form `τ = i∂∂̄(potential)` on the total space.
#[derive(Clone)]
pub struct FormField {
    pub label: String,
    potential: Arc<dyn ClosedForm>,
}

impl FormField {
    /// Forms need base derivatives, so only closed-form potentials qualify.
    pub fn new(label: impl Into<String>, potential: &ScalarField) -> Result<Self> {
        match potential {
            ScalarField::Closed(c) => Ok(FormField {
                label: label.into(),
                potential: c.clone(),
            }),
            ScalarField::Grid(_) => Err(Error::OrderUnsupported {
                order: 2,
                what: "base derivatives of a slice grid field",
            }),
        }
    }

    pub fn from_closed(label: impl Into<String>, potential: Arc<dyn ClosedForm>) -> Self {
        FormField {
            label: label.into(),
            potential,
        }
    }

    pub fn n(&self) -> usize {
        self.potential.dim()
    }

    pub fn potential(&self) -> &Arc<dyn ClosedForm> {
        &self.potential
    }

    pub fn taylor(&self, p: &CPoint, kz: usize, ks: usize) -> Result<Jet> {
        self.potential.jet_at(p, LayoutKey::new(self.n(), true, kz, ks))
    }

    pub fn blocks(&self, p: &CPoint) -> Result<FormBlocks> {
        Ok(FormBlocks::from_jet(&WirtingerJet::from_jet(&self.taylor(p, 2, 2)?, 2)))
    }
}

/// `v_τ = ∂/∂s + Σ fiber[α] ∂/∂z^α`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizontalLift {
    pub fiber: Vec<Complex64>,
}

impl HorizontalLift {
    /// Components over `(z¹..zⁿ, s)`.
    pub fn vector(&self) -> Vec<Complex64> {
        let mut v = self.fiber.clone();
        v.push(Complex64::new(1.0, 0.0));
        v
    }
}

pub fn horizontal_lift(t: &FormField, p: &CPoint) -> Result<HorizontalLift> {
    Ok(HorizontalLift {
        fiber: t.blocks(p)?.lift(p)?,
    })
}

pub fn geodesic_curvature(t: &FormField, p: &CPoint) -> Result<f64> {
    t.blocks(p)?.curvature(p)
}

pub fn wedge_identity_residual(t: &FormField, p: &CPoint) -> Result<f64> {
    t.blocks(p)?.wedge_residual(p)
}

/// `c(W)` with its Levi-form decomposition in terms of `ψ = −e^{−w}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CwDecomposition {
    /// `levi_term + gradient_term`.
    pub value: f64,
    /// `ℒψ(v_W, v̄_W) / (−ψ)`.
    pub levi_term: f64,
    /// `|∂ψ(v_W)|² / ψ²`.
    pub gradient_term: f64,
    /// `c(W)` from the blocks of `w` directly.
    pub direct: f64,
}

pub fn c_of_w(bg: &BackgroundPair, p: &CPoint) -> Result<CwDecomposition> {
    let w = FormField::from_closed("W", bg.w_closed().clone());
    let blocks = w.blocks(p)?;
    let direct = blocks.curvature(p)?;
    let v = HorizontalLift {
        fiber: blocks.lift(p)?,
    }
    .vector();
    let psi = jet(&bg.psi, p, 2)?;
    let levi = hermitian_form(&psi.full_hessian(), &v) / (-psi.value.re);
    let mut grad = psi.grad_z.clone();
    grad.push(psi.grad_s);
    let dpsi_v: Complex64 = grad.iter().zip(&v).map(|(g, v)| g * v).sum();
    let gterm = dpsi_v.norm_sqr() / psi.value.re.powi(2);
    Ok(CwDecomposition {
        value: levi + gterm,
        levi_term: levi,
        gradient_term: gterm,
        direct,
    })
}

/// Curvature quantities of `h` at one point.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CurvatureSample {
    pub c_h: f64,
    /// Estimated error from the base stencil (zero on oracles).
    pub c_h_err: f64,
    /// `Δc(H) = h^{β̄α} ∂_α∂_β̄ c(H)`.
    pub laplacian_c: f64,
    /// `|∂̄v_H|²`.
    pub dbar_norm: f64,
    /// `(−Δc + (n+1)c − |∂̄v_H|²) / (1 + |c|)`.
    pub residual: f64,
    /// Smallest eigenvalue of the full complex Hessian of `h`.
    pub min_eig: f64,
    pub lift: Vec<Complex64>,
}

/// `h_{αδ̄} h^{β̄ε} A^α_{β̄} conj(A^δ_{ε̄})` with `A^α_{β̄} = ∂_{β̄} v^α`.
fn dbar_norm(slice: &DMatrix<Complex64>, inv: &DMatrix<Complex64>, a: &DMatrix<Complex64>) -> f64 {
    let n = slice.nrows();
    let mut acc = ZERO;
    for al in 0..n {
        for de in 0..n {
            for be in 0..n {
                for ep in 0..n {
                    acc += slice[(al, de)] * inv[(be, ep)] * a[(al, be)] * a[(de, ep)].conj();
                }
            }
        }
    }
    acc.re
}

fn assemble(
    n: usize,
    blocks: &FormBlocks,
    inv: &DMatrix<Complex64>,
    c: f64,
    c_err: f64,
    c_hess: &DMatrix<Complex64>,
    a: &DMatrix<Complex64>,
    lift: Vec<Complex64>,
) -> CurvatureSample {
    let lap: f64 = (0..n)
        .flat_map(|al| (0..n).map(move |be| (al, be)))
        .map(|(al, be)| inv[(be, al)] * c_hess[(al, be)])
        .sum::<Complex64>()
        .re;
    let dn = dbar_norm(&blocks.slice, inv, a);
    CurvatureSample {
        c_h: c,
        c_h_err: c_err,
        laplacian_c: lap,
        dbar_norm: dn,
        residual: (-lap + (n as f64 + 1.0) * c - dn) / (1.0 + c.abs()),
        min_eig: min_eigenvalue(&blocks.full()),
        lift,
    }
}

/// All curvature quantities of a closed-form `h` from one Taylor jet.
pub fn oracle_sample(h: &FormField, p: &CPoint) -> Result<CurvatureSample> {
    let n = h.n();
    let hj = h.taylor(p, 4, 2)?;
    let (vs, vsb) = (var_s(n), var_sbar(n));
    let block: Vec<Vec<Jet>> = (0..n)
        .map(|a| {
            let ha = hj.d(var_z(n, a));
            (0..n).map(|b| ha.d(var_zbar(n, b))).collect()
        })
        .collect();
    let blocks = FormBlocks::from_jet(&WirtingerJet::from_jet(&hj, 2));
    let inv_val = blocks.slice_inverse(p)?;
    let inv = inverse(&block);
    let hs = hj.d(vs);
    let h_sb: Vec<Jet> = (0..n).map(|b| hs.d(var_zbar(n, b))).collect();
    let h_as: Vec<Jet> = (0..n).map(|a| hj.d(var_z(n, a)).d(vsb)).collect();
    let v: Vec<Jet> = (0..n)
        .map(|a| {
            let mut acc = -(&h_sb[0] * &inv[0][a]);
            for b in 1..n {
                acc = &acc - &(&h_sb[b] * &inv[b][a]);
            }
            acc
        })
        .collect();
    let mut c = hs.d(vsb);
    for a in 0..n {
        c = &c + &(&v[a] * &h_as[a]);
    }
    let cw = WirtingerJet::from_jet(&c, 2);
    let amat = DMatrix::from_fn(n, n, |a, b| v[a].d(var_zbar(n, b)).value());
    let lift = v.iter().map(|j| j.value()).collect();
    Ok(assemble(n, &blocks, &inv_val, cw.value.re, 0.0, &cw.hess_zzbar, &amat, lift))
}

/// Base offsets (in units of δ, as `(Re, Im)`) of the slices used for
/// numeric base derivatives: the center, then `±δ, ±2δ` along the real and
/// the imaginary axis.
pub const BASE_STENCIL: [(i32, i32); 9] = [(0, 0), (1, 0), (-1, 0), (2, 0), (-2, 0), (0, 1), (0, -1), (0, 2), (0, -2)];

/// Five-point and three-point first and second differences from samples
/// at `(−2, −1, 0, 1, 2)·δ`.
fn differences<T>(f: [T; 5], delta: f64) -> [T; 4]
where
    T: Copy + std::ops::Sub<Output = T> + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
{
    let [m2, m1, c, p1, p2] = f;
    let d1_5 = (m2 - p2 + (p1 - m1) * 8.0) * (1.0 / (12.0 * delta));
    let d2_5 = ((p1 + m1) * 16.0 - (m2 + p2) - c * 30.0) * (1.0 / (12.0 * delta * delta));
    let d1_3 = (p1 - m1) * (1.0 / (2.0 * delta));
    let d2_3 = (p1 + m1 - c * 2.0) * (1.0 / (delta * delta));
    [d1_5, d2_5, d1_3, d2_3]
}

/// `h = w + u` assembled from converged slice solutions on a base stencil
/// around `s`, sharing one grid footprint.
pub struct NumericH {
    pub family: Arc<FamilyDefinition>,
    pub s: Complex64,
    pub delta: f64,
    pub background: BackgroundPair,
    /// Solutions in [`BASE_STENCIL`] order.
    pub slices: Vec<MASolution>,
    /// Nodes interior to every slice of the stencil.
    pub valid: Arc<SliceGrid>,
    u_center: GridField,
    /// `u_{ss̄}` from five- and three-point differences.
    uss: [GridField; 2],
    /// `u_{sβ̄}` per `β` from five- and three-point differences.
    usb: [Vec<GridField>; 2],
    c_field: GridField,
    lift_fields: Vec<GridField>,
}

impl NumericH {
    /// Solve the `9` slices at `s + δ·(a + ib)` and assemble `h` on `D_s`.
    pub fn build(
        fam: &Arc<FamilyDefinition>,
        s: Complex64,
        res: usize,
        level: usize,
        delta: f64,
        opts: &SolverOptions,
    ) -> Result<NumericH> {
        let n = fam.n;
        let svals: Vec<Complex64> = BASE_STENCIL
            .iter()
            .map(|&(a, b)| s + Complex64::new(a as f64, b as f64) * delta)
            .collect();
        let d = 2 * n;
        let (mut lo, mut hi) = (vec![f64::INFINITY; d], vec![f64::NEG_INFINITY; d]);
        for &sv in &svals {
            let (l, h) = fam.slice_box(sv);
            for k in 0..d {
                lo[k] = lo[k].min(l[k]);
                hi[k] = hi[k].max(h[k]);
            }
        }
        let background = background_pair(fam, s, level, None)?;
        let mut slices = Vec::with_capacity(svals.len());
        for (k, &sv) in svals.iter().enumerate() {
            let pair = if k == 0 {
                background.clone()
            } else {
                background_pair_fixed(fam, sv, level, background.delta0)?
            };
            let grid = Arc::new(build_slice_grid_in(fam, sv, &lo, &hi, res, None)?);
            let bg = SliceBackground::sample(&grid, &pair)?;
            let sol = solve_on_grid(grid, bg, opts).map_err(|e| Error::SliceSolveFailed {
                s: sv,
                source: Box::new(e),
            })?;
            if let Some(first) = slices.first() {
                let first: &MASolution = first;
                if !first.grid.same_footprint(&sol.grid) {
                    return Err(Error::StencilInconsistent);
                }
            }
            slices.push(sol);
        }
        Self::assemble(fam, s, delta, background, slices)
    }

    /// Assemble from slices already solved at `s + δ·(a + ib)` in
    /// [`BASE_STENCIL`] order on a shared footprint.
    pub fn from_slices(
        fam: &Arc<FamilyDefinition>,
        s: Complex64,
        delta: f64,
        background: BackgroundPair,
        slices: Vec<MASolution>,
    ) -> Result<NumericH> {
        if slices.len() != BASE_STENCIL.len() || slices.iter().any(|x| !slices[0].grid.same_footprint(&x.grid)) {
            return Err(Error::StencilInconsistent);
        }
        Self::assemble(fam, s, delta, background, slices)
    }

    fn assemble(
        fam: &Arc<FamilyDefinition>,
        s: Complex64,
        delta: f64,
        background: BackgroundPair,
        slices: Vec<MASolution>,
    ) -> Result<NumericH> {
        let n = fam.n;
        let center_grid = slices[0].grid.clone();
        let keep: Vec<bool> = (0..center_grid.len())
            .map(|i| slices.iter().all(|sol| sol.grid.is_interior(i)))
            .collect();
        let valid = Arc::new(center_grid.restricted(&keep)?);
        let u_fields: Vec<GridField> = slices.iter().map(|sol| sol.u_field()).collect();

        // base differences of u and u_β̄ at valid nodes
        let per_node: Vec<(usize, [Complex64; 2], [Vec<Complex64>; 2])> = valid
            .interior()
            .par_iter()
            .map(|&i| -> Result<_> {
                let mut vals = [ZERO; 9];
                let mut dbar = vec![vec![ZERO; n]; 9];
                for (k, f) in u_fields.iter().enumerate() {
                    let j = f.node_jet(i, 1)?;
                    vals[k] = j.value;
                    dbar[k] = j.grad_zbar;
                }
                let along = |idx: [usize; 5], f: &dyn Fn(usize) -> Complex64| differences(idx.map(f), delta);
                const RE: [usize; 5] = [4, 2, 0, 1, 3];
                const IM: [usize; 5] = [8, 6, 0, 5, 7];
                let re = along(RE, &|k| vals[k]);
                let im = along(IM, &|k| vals[k]);
                let uss = [(re[1] + im[1]) * 0.25, (re[3] + im[3]) * 0.25];
                let mut usb = [vec![ZERO; n], vec![ZERO; n]];
                for b in 0..n {
                    let re = along(RE, &|k| dbar[k][b]);
                    let im = along(IM, &|k| dbar[k][b]);
                    let i_unit = Complex64::new(0.0, 1.0);
                    usb[0][b] = (re[0] - im[0] * i_unit) * 0.5;
                    usb[1][b] = (re[2] - im[2] * i_unit) * 0.5;
                }
                Ok((i, uss, usb))
            })
            .collect::<Result<_>>()?;
        let len = valid.len();
        let mut uss_v = [vec![ZERO; len], vec![ZERO; len]];
        let mut usb_v = [vec![vec![ZERO; len]; n], vec![vec![ZERO; len]; n]];
        for (i, uss, usb) in per_node {
            for m in 0..2 {
                uss_v[m][i] = uss[m];
                for b in 0..n {
                    usb_v[m][b][i] = usb[m][b];
                }
            }
        }
        let [uss0, uss1] = uss_v;
        let [usb0, usb1] = usb_v;
        let to_fields = |v: Vec<Vec<Complex64>>| -> Vec<GridField> {
            v.into_iter().map(|x| GridField::new(valid.clone(), x)).collect()
        };
        let mut out = NumericH {
            family: fam.clone(),
            s,
            delta,
            background,
            u_center: u_fields[0].clone(),
            uss: [GridField::new(valid.clone(), uss0), GridField::new(valid.clone(), uss1)],
            usb: [to_fields(usb0), to_fields(usb1)],
            c_field: GridField::new(valid.clone(), vec![ZERO; len]),
            lift_fields: Vec::new(),
            valid: valid.clone(),
            slices,
        };
        let node_vals: Vec<(usize, f64, Vec<Complex64>)> = valid
            .interior()
            .par_iter()
            .map(|&i| -> Result<_> {
                let p = valid.point(i);
                let (b5, _) = out.blocks_at(&p)?;
                Ok((i, b5.curvature(&p)?, b5.lift(&p)?))
            })
            .collect::<Result<_>>()?;
        let mut c = vec![ZERO; len];
        let mut lifts = vec![vec![ZERO; len]; n];
        for (i, cv, l) in node_vals {
            c[i] = Complex64::new(cv, 0.0);
            for a in 0..n {
                lifts[a][i] = l[a];
            }
        }
        out.c_field = GridField::new(valid.clone(), c);
        out.lift_fields = to_fields(lifts);
        Ok(out)
    }

    pub fn n(&self) -> usize {
        self.family.n
    }

    /// Blocks of `h` at `p` with five- and three-point base differences.
    pub fn blocks_at(&self, p: &CPoint) -> Result<(FormBlocks, FormBlocks)> {
        let n = self.n();
        let wj = WirtingerJet::from_jet(
            &self.background.w_closed().jet_at(p, LayoutKey::new(n, true, 2, 2))?,
            2,
        );
        let uj = self.u_center.jet_at_point(p, 2)?;
        let make = |m: usize| -> Result<FormBlocks> {
            let usb: Vec<Complex64> = (0..n)
                .map(|b| self.usb[m][b].interpolate(p))
                .collect::<Result<_>>()?;
            Ok(FormBlocks {
                slice: &wj.hess_zzbar + &uj.hess_zzbar,
                s_zbar: (0..n).map(|b| wj.hess_szbar[b] + usb[b]).collect(),
                z_sbar: (0..n).map(|a| wj.hess_zsbar[a] + usb[a].conj()).collect(),
                ss: wj.hess_ssbar.re + self.uss[m].interpolate(p)?.re,
            })
        };
        Ok((make(0)?, make(1)?))
    }

    pub fn sample(&self, p: &CPoint) -> Result<CurvatureSample> {
        let n = self.n();
        let (b5, b3) = self.blocks_at(p)?;
        let inv = b5.slice_inverse(p)?;
        let c5 = b5.curvature(p)?;
        let c3 = b3.curvature(p)?;
        let cj = self.c_field.jet_at_point(p, 2)?;
        let mut amat = DMatrix::zeros(n, n);
        for a in 0..n {
            let vj = self.lift_fields[a].jet_at_point(p, 1)?;
            for b in 0..n {
                amat[(a, b)] = vj.grad_zbar[b];
            }
        }
        let lift = b5.lift(p)?;
        Ok(assemble(n, &b5, &inv, c5, (c5 - c3).abs(), &cj.hess_zzbar, &amat, lift))
    }
}

/// Where `h` comes from: a closed-form oracle or numeric slice solutions.
#[derive(Clone)]
pub enum HSource {
    Oracle(FormField),
    Numeric(Arc<NumericH>),
}

impl HSource {
    /// The family's closed-form `h`, if it has one.
    pub fn oracle(fam: &FamilyDefinition) -> Option<HSource> {
        fam.oracle_h
            .as_ref()
            .and_then(|h| FormField::new("H", h).ok())
            .map(HSource::Oracle)
    }

    pub fn n(&self) -> usize {
        match self {
            HSource::Oracle(f) => f.n(),
            HSource::Numeric(h) => h.n(),
        }
    }

    pub fn sample(&self, p: &CPoint) -> Result<CurvatureSample> {
        match self {
            HSource::Oracle(f) => oracle_sample(f, p),
            HSource::Numeric(h) => h.sample(p),
        }
    }

    /// `c(H)` and its base-stencil error estimate.
    pub fn c_of_h(&self, p: &CPoint) -> Result<(f64, f64)> {
        match self {
            HSource::Oracle(f) => Ok((geodesic_curvature(f, p)?, 0.0)),
            HSource::Numeric(h) => {
                let (b5, b3) = h.blocks_at(p)?;
                let c5 = b5.curvature(p)?;
                Ok((c5, (c5 - b3.curvature(p)?).abs()))
            }
        }
    }

    pub fn blocks(&self, p: &CPoint) -> Result<FormBlocks> {
        match self {
            HSource::Oracle(f) => f.blocks(p),
            HSource::Numeric(h) => Ok(h.blocks_at(p)?.0),
        }
    }

    pub fn dbar_vh_norm(&self, p: &CPoint) -> Result<f64> {
        Ok(self.sample(p)?.dbar_norm)
    }

    pub fn schumacher_residual(&self, p: &CPoint) -> Result<f64> {
        Ok(self.sample(p)?.residual)
    }
}

/// Smallest eigenvalue of the full complex Hessian of `h` over `samples`,
/// with its location.
pub fn psh_min_eigen_scan(source: &HSource, samples: &[CPoint]) -> Result<(f64, CPoint)> {
    let eigs: Vec<f64> = samples
        .par_iter()
        .map(|p| Ok(min_eigenvalue(&source.blocks(p)?.full())))
        .collect::<Result<_>>()?;
    let (k, e) = eigs
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (k, &e)| if e < acc.1 { (k, e) } else { acc });
    let at = samples.get(k).cloned().ok_or(Error::EmptyInterior)?;
    Ok((e, at))
}

/// One row of a boundary ratio scan.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RatioRow {
    pub abs_phi: f64,
    pub point: CPoint,
    pub c_w: f64,
    pub c_h: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RatioScan {
    pub rows: Vec<RatioRow>,
    /// `|ratio − 1|` at the last row.
    pub final_deviation: f64,
    /// Longest run of consecutive rows, ending at the last one, over which
    /// `|ratio − 1|` does not increase.
    pub monotone_tail: usize,
}

/// Relative slack when comparing successive ratio deviations.
const MONOTONE_SLACK: f64 = 1e-12;

/// `c(H)/c(W)` along the inward normal at the boundary point `q`, at
/// `|φ| = first·2^{−k}` for `k = 0..count`. The scan stops early at the
/// first sample the source cannot evaluate.
pub fn boundary_ratio_scan(
    fam: &FamilyDefinition,
    bg: &BackgroundPair,
    source: &HSource,
    q: &CPoint,
    first: f64,
    count: usize,
) -> Result<RatioScan> {
    let margin = strong_pseudoconvexity_margin(fam, q)?;
    if margin <= 0.0 {
        return Err(Error::NotStronglyPseudoconvexPoint {
            point: q.clone(),
            margin,
        });
    }
    let ray = boundary_ray(fam, q, count, -first.abs(), 0.5)?;
    let mut rows = Vec::new();
    for (p, phi) in ray.points.iter().zip(&ray.phi) {
        let Ok((c_h, _)) = source.c_of_h(p) else {
            break;
        };
        let c_w = c_of_w(bg, p)?.direct;
        rows.push(RatioRow {
            abs_phi: phi.abs(),
            point: p.clone(),
            c_w,
            c_h,
            ratio: c_h / c_w,
        });
    }
    let dev: Vec<f64> = rows.iter().map(|r| (r.ratio - 1.0).abs()).collect();
    let mut tail = dev.len().min(1);
    for k in (1..dev.len()).rev() {
        if dev[k] <= dev[k - 1] + MONOTONE_SLACK * dev[k - 1].max(1.0) {
            tail += 1;
        } else {
            break;
        }
    }
    Ok(RatioScan {
        final_deviation: dev.last().copied().unwrap_or(f64::NAN),
        rows,
        monotone_tail: tail,
    })
}

/// One sampled point of a curvature report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CurvatureRow {
    pub point: CPoint,
    pub phi: f64,
    pub c_w: f64,
    pub c_h: f64,
    pub c_h_err: f64,
    pub ratio: f64,
    pub dbar_norm: f64,
    pub residual: f64,
    pub min_eig: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CurvatureReport {
    pub rows: Vec<CurvatureRow>,
    pub min_c_h: f64,
    pub max_abs_c_h: f64,
    pub max_dbar_norm: f64,
    pub max_abs_residual: f64,
    pub min_eig: f64,
    pub min_eig_at: Option<CPoint>,
}

/// Evaluate `c(W)`, `c(H)`, their ratio, `|∂̄v_H|²`, the Schumacher
/// residual and the Hessian eigenvalue floor of `h` at every sample.
pub fn curvature_report(
    fam: &FamilyDefinition,
    bg: &BackgroundPair,
    source: &HSource,
    samples: &[CPoint],
) -> Result<CurvatureReport> {
    let rows: Vec<CurvatureRow> = samples
        .par_iter()
        .map(|p| -> Result<CurvatureRow> {
            let s = source.sample(p)?;
            let c_w = c_of_w(bg, p)?.direct;
            Ok(CurvatureRow {
                point: p.clone(),
                phi: fam.phi_value(p),
                c_w,
                c_h: s.c_h,
                c_h_err: s.c_h_err,
                ratio: s.c_h / c_w,
                dbar_norm: s.dbar_norm,
                residual: s.residual,
                min_eig: s.min_eig,
            })
        })
        .collect::<Result<_>>()?;
    let fold = |f: &dyn Fn(&CurvatureRow) -> f64, init: f64, pick: fn(f64, f64) -> f64| {
        rows.iter().map(f).fold(init, pick)
    };
    let min_row = rows.iter().min_by(|a, b| a.min_eig.total_cmp(&b.min_eig));
    Ok(CurvatureReport {
        min_c_h: fold(&|r| r.c_h, f64::INFINITY, f64::min),
        max_abs_c_h: fold(&|r| r.c_h.abs(), 0.0, f64::max),
        max_dbar_norm: fold(&|r| r.dbar_norm, 0.0, f64::max),
        max_abs_residual: fold(&|r| r.residual.abs(), 0.0, f64::max),
        min_eig: fold(&|r| r.min_eig, f64::INFINITY, f64::min),
        min_eig_at: min_row.map(|r| r.point.clone()),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::{catalog_instantiate, FamilyParams};
    use crate::wirtinger::FnField;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn oracle(name: &str, n: usize) -> (FamilyDefinition, FormField) {
        let fam = catalog_instantiate(name, &FamilyParams::with_n(n)).unwrap();
        let h = FormField::new("H", fam.oracle_h.as_ref().unwrap()).unwrap();
        (fam, h)
    }

    #[test]
    fn ball_curvature_matches_closed_form() {
        for n in 1..=3 {
            let (_, h) = oracle("ball_family", n);
            for r in [0.0, 0.3, 0.6, 0.8] {
                let p = CPoint::on_axis(n, r, c(0.0, 0.0));
                let got = geodesic_curvature(&h, &p).unwrap();
                let want = 1.0 / (1.0 - r * r) - 1.0 / (n as f64 + 1.0);
                assert!((got - want).abs() < 1e-8, "n={n} r={r}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn ball_lift_is_vertical_on_the_central_slice() {
        let (_, h) = oracle("ball_family", 2);
        let p = CPoint::new(vec![c(0.2, 0.1), c(-0.3, 0.2)], c(0.0, 0.0));
        let v = horizontal_lift(&h, &p).unwrap();
        assert!(v.fiber.iter().all(|x| x.norm() < 1e-12));
    }

    #[test]
    fn translated_ball_lift_and_vanishing_curvature() {
        let (_, h) = oracle("translated_ball", 2);
        let p = CPoint::new(vec![c(0.3, 0.1), c(-0.2, 0.2)], c(0.1, -0.2));
        let v = horizontal_lift(&h, &p).unwrap();
        // c(s) = s/2
        assert!((v.fiber[0] - c(0.5, 0.0)).norm() < 1e-12);
        assert!(v.fiber[1].norm() < 1e-12);
        let s = oracle_sample(&h, &p).unwrap();
        assert!(s.c_h.abs() < 1e-12 && s.dbar_norm.abs() < 1e-12 && s.min_eig.abs() < 1e-8);
    }

    #[test]
    fn schumacher_identity_closes_on_the_ball() {
        for n in 1..=3 {
            let (_, h) = oracle("ball_family", n);
            for k in 0..6 {
                let t = k as f64;
                let mut z = vec![c(0.0, 0.0); n];
                z[0] = c(0.5 * t.cos(), 0.5 * t.sin());
                let p = CPoint::new(z, c(0.1 * t.sin(), 0.05));
                let s = oracle_sample(&h, &p).unwrap();
                assert!(s.residual.abs() < 1e-8, "n={n}: {s:?}");
                assert!(s.dbar_norm >= -1e-12);
            }
            let s = oracle_sample(&h, &CPoint::origin(n)).unwrap();
            let want = n as f64 / (n as f64 + 1.0);
            assert!((s.c_h - want).abs() < 1e-12);
            assert!((s.dbar_norm - (-s.laplacian_c + (n as f64 + 1.0) * want)).abs() < 1e-6);
        }
    }

    #[test]
    fn wedge_identity_and_degenerate_forms() {
        let (_, h) = oracle("ball_family", 2);
        let p = CPoint::new(vec![c(0.2, -0.1), c(0.1, 0.3)], c(0.2, 0.1));
        assert!(wedge_identity_residual(&h, &p).unwrap() < 1e-10);
        let (_, t) = oracle("translated_ball", 2);
        let b = t.blocks(&p).unwrap();
        assert!(b.full().determinant().norm() < 1e-12);
    }

    #[test]
    fn c_of_w_decomposition_and_product_potential() {
        let fam = Arc::new(catalog_instantiate("ball_family", &FamilyParams::with_n(2)).unwrap());
        let bg = background_pair(&fam, c(0.1, 0.0), 3, None).unwrap();
        let p = CPoint::new(vec![c(0.2, 0.1), c(0.0, -0.3)], c(0.1, 0.0));
        let d = c_of_w(&bg, &p).unwrap();
        assert!((d.value - d.direct).abs() <= 1e-9 * d.direct.abs());
        // c(G) = 1 at the origin for g = −log(1 − |z|² − |s|²)
        let g = FormField::new("G", &crate::domains::g_potential(&fam)).unwrap();
        assert!((geodesic_curvature(&g, &CPoint::origin(2)).unwrap() - 1.0).abs() < 1e-12);
        // τ with no cross terms
        let tau = FormField::from_closed(
            "T",
            FnField::shared(1, |v| &v.z_norm_sqr() + &v.s_norm_sqr().scale(3.0)),
        );
        let p1 = CPoint::new(vec![c(0.1, 0.2)], c(0.3, 0.0));
        assert!(horizontal_lift(&tau, &p1).unwrap().fiber[0].norm() < 1e-14);
        assert!((geodesic_curvature(&tau, &p1).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn numeric_h_on_the_disc_family_matches_the_oracle() {
        let fam = Arc::new(catalog_instantiate("ball_family", &FamilyParams::with_n(1)).unwrap());
        let num = NumericH::build(&fam, c(0.0, 0.0), 33, 2, 2e-2, &SolverOptions::default()).unwrap();
        let src = HSource::Numeric(Arc::new(num));
        let p = CPoint::on_axis(1, 0.3, c(0.0, 0.0));
        let (ch, _) = src.c_of_h(&p).unwrap();
        let want = 1.0 / (1.0 - 0.09) - 0.5;
        assert!((ch - want).abs() < 1e-2, "{ch} vs {want}");
        let s = src.sample(&CPoint::origin(1)).unwrap();
        assert!(s.residual.abs() < 1e-2, "{s:?}");
    }

    #[test]
    fn ratio_scan_on_the_ball_oracle() {
        let fam = Arc::new(catalog_instantiate("ball_family", &FamilyParams::with_n(1)).unwrap());
        let bg = background_pair(&fam, c(0.0, 0.0), 2, None).unwrap();
        let src = HSource::oracle(&fam).unwrap();
        let q = CPoint::on_axis(1, 1.0, c(0.0, 0.0));
        let scan = boundary_ratio_scan(&fam, &bg, &src, &q, 0.5, 10).unwrap();
        assert_eq!(scan.rows.len(), 10);
        assert!(scan.final_deviation <= 0.05);
        assert!(scan.monotone_tail >= 5);
    }
}
