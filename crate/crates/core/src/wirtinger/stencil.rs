//! Finite-difference jets of grid-sampled slice fields.
//!
//! Fourth-order central stencils are used where the mask allows, falling
//! back to second-order central and then second-order one-sided stencils
//! near the mask edge. The lowest order used is recorded in the jet.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{wirtinger_from_real, CPoint, WirtingerJet};
use crate::error::{Error, Result};
use crate::ma_solver::grid::SliceGrid;

type Stencil = (&'static [(isize, f64)], f64, u8);

// (offsets with weights, spacing power, accuracy order)
const D1_CENTRAL4: Stencil = (&[(-2, 1.0 / 12.0), (-1, -8.0 / 12.0), (1, 8.0 / 12.0), (2, -1.0 / 12.0)], 1.0, 4);
const D1_CENTRAL2: Stencil = (&[(-1, -0.5), (1, 0.5)], 1.0, 2);
const D1_FORWARD2: Stencil = (&[(0, -1.5), (1, 2.0), (2, -0.5)], 1.0, 2);
const D1_BACKWARD2: Stencil = (&[(0, 1.5), (-1, -2.0), (-2, 0.5)], 1.0, 2);

const D2_CENTRAL4: Stencil = (
    &[(-2, -1.0 / 12.0), (-1, 16.0 / 12.0), (0, -30.0 / 12.0), (1, 16.0 / 12.0), (2, -1.0 / 12.0)],
    2.0,
    4,
);
const D2_CENTRAL2: Stencil = (&[(-1, 1.0), (0, -2.0), (1, 1.0)], 2.0, 2);
const D2_FORWARD2: Stencil = (&[(0, 2.0), (1, -5.0), (2, 4.0), (3, -1.0)], 2.0, 2);
const D2_BACKWARD2: Stencil = (&[(0, 2.0), (-1, -5.0), (-2, 4.0), (-3, -1.0)], 2.0, 2);

const D1_CHOICES: [Stencil; 4] = [D1_CENTRAL4, D1_CENTRAL2, D1_FORWARD2, D1_BACKWARD2];
const D2_CHOICES: [Stencil; 4] = [D2_CENTRAL4, D2_CENTRAL2, D2_FORWARD2, D2_BACKWARD2];

/// A complex-valued field sampled at the masked nodes of a slice grid.
#[derive(Clone, Debug)]
pub struct GridField {
    grid: Arc<SliceGrid>,
    values: Vec<Complex64>,
}

impl GridField {
    /// `values` is indexed by grid node; exterior entries are ignored.
    pub fn new(grid: Arc<SliceGrid>, values: Vec<Complex64>) -> Self {
        assert_eq!(values.len(), grid.len());
        GridField { grid, values }
    }

    pub fn from_real(grid: Arc<SliceGrid>, values: &[f64]) -> Self {
        GridField::new(grid, values.iter().map(|&v| Complex64::new(v, 0.0)).collect())
    }

    pub fn grid(&self) -> &SliceGrid {
        &self.grid
    }

    pub fn grid_arc(&self) -> &Arc<SliceGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn value(&self, idx: usize) -> Complex64 {
        self.values[idx]
    }

    fn usable(&self, idx: usize, offsets: &[(usize, isize)]) -> Option<usize> {
        self.grid.shift(idx, offsets).filter(|&j| self.grid.in_mask(j))
    }

    fn apply_1d(&self, idx: usize, axis: usize, choices: &[Stencil]) -> Option<(Complex64, u8)> {
        let h = self.grid.spacing[axis];
        'outer: for (taps, pw, ord) in choices {
            let mut acc = Complex64::new(0.0, 0.0);
            for &(off, w) in taps.iter() {
                match self.usable(idx, &[(axis, off)]) {
                    Some(j) => acc += self.values[j] * w,
                    None => continue 'outer,
                }
            }
            return Some((acc / h.powf(*pw), *ord));
        }
        None
    }

    fn apply_mixed(&self, idx: usize, a: usize, b: usize) -> Option<(Complex64, u8)> {
        let (ha, hb) = (self.grid.spacing[a], self.grid.spacing[b]);
        for sa in &D1_CHOICES {
            'pair: for sb in &D1_CHOICES {
                let mut acc = Complex64::new(0.0, 0.0);
                for &(oa, wa) in sa.0.iter() {
                    for &(ob, wb) in sb.0.iter() {
                        match self.usable(idx, &[(a, oa), (b, ob)]) {
                            Some(j) => acc += self.values[j] * (wa * wb),
                            None => continue 'pair,
                        }
                    }
                }
                return Some((acc / (ha * hb), sa.2.min(sb.2)));
            }
        }
        None
    }

    /// Real-coordinate gradient and Hessian at a masked node.
    pub fn real_derivatives(&self, idx: usize, order: usize) -> Result<(Vec<Complex64>, DMatrix<Complex64>, u8)> {
        if order > 2 {
            return Err(Error::OrderUnsupported {
                order,
                what: "grid-sampled fields",
            });
        }
        if !self.grid.in_mask(idx) {
            return Err(Error::StencilOutOfDomain { node: idx });
        }
        let d = self.grid.dims();
        let mut tag = 4u8;
        let mut d1 = vec![Complex64::new(0.0, 0.0); d];
        let mut d2 = DMatrix::zeros(d, d);
        let fail = || Error::StencilOutOfDomain { node: idx };
        if order >= 1 {
            for (k, slot) in d1.iter_mut().enumerate() {
                let (v, o) = self.apply_1d(idx, k, &D1_CHOICES).ok_or_else(fail)?;
                *slot = v;
                tag = tag.min(o);
            }
        }
        if order >= 2 {
            for k in 0..d {
                let (v, o) = self.apply_1d(idx, k, &D2_CHOICES).ok_or_else(fail)?;
                d2[(k, k)] = v;
                tag = tag.min(o);
                for l in (k + 1)..d {
                    let (v, o) = self.apply_mixed(idx, k, l).ok_or_else(fail)?;
                    d2[(k, l)] = v;
                    d2[(l, k)] = v;
                    tag = tag.min(o);
                }
            }
        }
        Ok((d1, d2, tag))
    }

    /// Wirtinger jet at a node (slice derivatives only).
    pub fn node_jet(&self, idx: usize, order: usize) -> Result<WirtingerJet> {
        let (d1, d2, tag) = self.real_derivatives(idx, order)?;
        let mut j = wirtinger_from_real(self.values[idx], &d1, &d2);
        j.stencil_order = Some(tag);
        Ok(j)
    }

    fn check_slice(&self, p: &CPoint) -> Result<()> {
        if p.n() != self.grid.n || (p.s - self.grid.s).norm() > 1e-12 {
            return Err(Error::OutOfDomain(p.clone()));
        }
        Ok(())
    }

    /// Jet at an arbitrary point of the slice: exact node jets on nodes,
    /// multilinear interpolation of the surrounding node jets otherwise.
    pub fn jet_at_point(&self, p: &CPoint, order: usize) -> Result<WirtingerJet> {
        self.check_slice(p)?;
        let x = p.real_coords();
        if let Some(idx) = self.grid.node_at(&x, 1e-9) {
            return self.node_jet(idx, order);
        }
        let (base, frac) = self.grid.locate(&x).ok_or_else(|| Error::OutOfDomain(p.clone()))?;
        let d = self.grid.dims();
        let mut acc: Option<WirtingerJet> = None;
        for corner in 0..(1usize << d) {
            let mut m = base.clone();
            let mut w = 1.0;
            for k in 0..d {
                if corner >> k & 1 == 1 {
                    m[k] += 1;
                    w *= frac[k];
                } else {
                    w *= 1.0 - frac[k];
                }
            }
            if w == 0.0 {
                continue;
            }
            let j = self.node_jet(self.grid.flat_index(&m), order)?;
            acc = Some(match acc {
                None => WirtingerJet::zero(self.grid.n).combine(0.0, &j, w),
                Some(a) => a.combine(1.0, &j, w),
            });
        }
        Ok(acc.expect("at least one corner with positive weight"))
    }

    /// Multilinear interpolation of the values.
    pub fn interpolate(&self, p: &CPoint) -> Result<Complex64> {
        Ok(self.jet_at_point(p, 0)?.value)
    }
}
