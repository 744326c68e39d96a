//! Masked uniform grids over one slice `D_s`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wirtinger::CPoint;

/// Nodes within this Chebyshev distance of an interior node carry boundary
/// values, so fourth-order stencils at interior nodes and second-order
/// stencils next to them stay inside the mask.
pub const BAND_REACH: usize = 4;

/// Extra node layers added around a domain's bounding box by
/// [`SliceGrid::around`], enough for fourth-order central stencils.
pub const PAD: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeClass {
    Interior,
    Band,
    Exterior,
}

/// Uniform tensor grid over a box in the real slice coordinates
/// `(x₁..xₙ, y₁..yₙ)` with node classification by the sign of `φ(·, s)`.
#[derive(Clone, Debug)]
pub struct SliceGrid {
    pub n: usize,
    pub s: Complex64,
    /// Nodes per axis.
    pub res: usize,
    pub lo: Vec<f64>,
    pub spacing: Vec<f64>,
    pub eps_cut: f64,
    pub class: Vec<NodeClass>,
    pub phi: Vec<f64>,
    interior: Vec<usize>,
    unknown: Vec<u32>,
}

impl SliceGrid {
    /// Build a grid on the box `[lo, hi]` with `res` nodes per axis. Nodes
    /// with `φ < −ε_cut` are interior; `ε_cut` defaults to twice the largest
    /// spacing.
    pub fn from_box(
        n: usize,
        s: Complex64,
        lo: Vec<f64>,
        hi: Vec<f64>,
        res: usize,
        eps_cut: Option<f64>,
        phi: impl Fn(&CPoint) -> f64 + Sync,
    ) -> Result<SliceGrid> {
        use rayon::prelude::*;
        let d = 2 * n;
        assert!(lo.len() == d && hi.len() == d && res >= 3);
        let spacing: Vec<f64> = (0..d).map(|k| (hi[k] - lo[k]) / (res - 1) as f64).collect();
        let eps_cut = eps_cut.unwrap_or_else(|| 2.0 * spacing.iter().cloned().fold(0.0, f64::max));
        let total = res.pow(d as u32);
        let mut grid = SliceGrid {
            n,
            s,
            res,
            lo,
            spacing,
            eps_cut,
            class: vec![NodeClass::Exterior; total],
            phi: Vec::new(),
            interior: Vec::new(),
            unknown: vec![u32::MAX; total],
        };
        grid.phi = (0..total).into_par_iter().map(|i| phi(&grid.point(i))).collect();

        let mut marked: Vec<bool> = grid.phi.iter().map(|&p| p < -eps_cut).collect();
        let interior_mask = marked.clone();
        // separable dilation gives the Chebyshev neighbourhood
        for axis in 0..d {
            let stride = res.pow(axis as u32);
            let src = marked.clone();
            for idx in 0..total {
                if src[idx] {
                    continue;
                }
                let i = (idx / stride) % res;
                let lo_i = i.saturating_sub(BAND_REACH);
                let hi_i = (i + BAND_REACH).min(res - 1);
                if (lo_i..=hi_i).any(|j| src[idx - i * stride + j * stride]) {
                    marked[idx] = true;
                }
            }
        }
        for idx in 0..total {
            grid.class[idx] = if interior_mask[idx] {
                grid.unknown[idx] = grid.interior.len() as u32;
                grid.interior.push(idx);
                NodeClass::Interior
            } else if marked[idx] {
                NodeClass::Band
            } else {
                NodeClass::Exterior
            };
        }
        if grid.interior.is_empty() {
            return Err(Error::EmptyInterior);
        }
        Ok(grid)
    }

    /// Grid whose spacing places `res` nodes across the bounding box
    /// `[lo, hi]`, padded by [`PAD`] extra layers on every side.
    pub fn around(
        n: usize,
        s: Complex64,
        lo: &[f64],
        hi: &[f64],
        res: usize,
        eps_cut: Option<f64>,
        phi: impl Fn(&CPoint) -> f64 + Sync,
    ) -> Result<SliceGrid> {
        let h: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| (b - a) / (res - 1) as f64).collect();
        let plo = lo.iter().zip(&h).map(|(a, h)| a - PAD as f64 * h).collect();
        let phi_hi = hi.iter().zip(&h).map(|(b, h)| b + PAD as f64 * h).collect();
        SliceGrid::from_box(n, s, plo, phi_hi, res + 2 * PAD, eps_cut, phi)
    }

    /// Same footprint with only the nodes flagged in `keep` left in the
    /// mask (all of them interior).
    pub fn restricted(&self, keep: &[bool]) -> Result<SliceGrid> {
        let mut g = self.clone();
        g.interior.clear();
        g.unknown = vec![u32::MAX; self.len()];
        for idx in 0..self.len() {
            if keep[idx] {
                g.unknown[idx] = g.interior.len() as u32;
                g.interior.push(idx);
                g.class[idx] = NodeClass::Interior;
            } else {
                g.class[idx] = NodeClass::Exterior;
            }
        }
        if g.interior.is_empty() {
            return Err(Error::EmptyInterior);
        }
        Ok(g)
    }

    pub fn dims(&self) -> usize {
        2 * self.n
    }

    pub fn len(&self) -> usize {
        self.class.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class.is_empty()
    }

    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    pub fn interior_count(&self) -> usize {
        self.interior.len()
    }

    pub fn unknown_of(&self, idx: usize) -> Option<usize> {
        let u = self.unknown[idx];
        (u != u32::MAX).then_some(u as usize)
    }

    pub fn in_mask(&self, idx: usize) -> bool {
        self.class[idx] != NodeClass::Exterior
    }

    pub fn is_interior(&self, idx: usize) -> bool {
        self.class[idx] == NodeClass::Interior
    }

    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let mut m = Vec::with_capacity(self.dims());
        for _ in 0..self.dims() {
            m.push(idx % self.res);
            idx /= self.res;
        }
        m
    }

    pub fn flat_index(&self, m: &[usize]) -> usize {
        m.iter().rev().fold(0, |acc, &i| acc * self.res + i)
    }

    pub fn coords(&self, idx: usize) -> Vec<f64> {
        self.multi_index(idx)
            .iter()
            .enumerate()
            .map(|(k, &i)| self.lo[k] + i as f64 * self.spacing[k])
            .collect()
    }

    pub fn point(&self, idx: usize) -> CPoint {
        CPoint::from_real_coords(&self.coords(idx), self.s)
    }

    /// Neighbour `off` steps along `axis`, if inside the box.
    pub fn step(&self, idx: usize, axis: usize, off: isize) -> Option<usize> {
        let stride = self.res.pow(axis as u32);
        let i = ((idx / stride) % self.res) as isize + off;
        (0..self.res as isize)
            .contains(&i)
            .then(|| (idx as isize + off * stride as isize) as usize)
    }

    /// Node displaced by `offsets[k]` along each axis.
    pub fn shift(&self, idx: usize, offsets: &[(usize, isize)]) -> Option<usize> {
        offsets.iter().try_fold(idx, |acc, &(axis, off)| self.step(acc, axis, off))
    }

    /// Cell containing `x`: lower-corner multi-index and local fractions.
    pub fn locate(&self, x: &[f64]) -> Option<(Vec<usize>, Vec<f64>)> {
        let mut base = Vec::with_capacity(self.dims());
        let mut frac = Vec::with_capacity(self.dims());
        for k in 0..self.dims() {
            let t = (x[k] - self.lo[k]) / self.spacing[k];
            if !(-1e-9..=(self.res - 1) as f64 + 1e-9).contains(&t) {
                return None;
            }
            let i = (t.floor().max(0.0) as usize).min(self.res - 2);
            base.push(i);
            frac.push((t - i as f64).clamp(0.0, 1.0));
        }
        Some((base, frac))
    }

    /// Nearest node to `x`, when `x` sits on it within `tol` grid units.
    pub fn node_at(&self, x: &[f64], tol: f64) -> Option<usize> {
        let mut m = Vec::with_capacity(self.dims());
        for k in 0..self.dims() {
            let t = (x[k] - self.lo[k]) / self.spacing[k];
            let r = t.round();
            if (t - r).abs() > tol || r < 0.0 || r > (self.res - 1) as f64 {
                return None;
            }
            m.push(r as usize);
        }
        Some(self.flat_index(&m))
    }

    /// Same box and resolution (so node indices coincide).
    pub fn same_footprint(&self, other: &SliceGrid) -> bool {
        self.n == other.n
            && self.res == other.res
            && self.lo.iter().zip(&other.lo).all(|(a, b)| (a - b).abs() < 1e-14)
            && self.spacing.iter().zip(&other.spacing).all(|(a, b)| (a - b).abs() < 1e-14)
    }

    pub fn max_spacing(&self) -> f64 {
        self.spacing.iter().cloned().fold(0.0, f64::max)
    }
}
