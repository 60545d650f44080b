//! Uniform Cartesian grids over an axis-aligned box domain.

use crate::error::{Error, Result};
use crate::linalg::Point;
use crate::num::{Scalar, cast, to_f64};

/// Uniform grid with spacing `h` covering the box
/// `[origin, origin + (shape - 1) * h]` in each active axis.
///
/// Node indices are lexicographic with the last axis fastest, matching the
/// checkpoint layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<S> {
    n: usize,
    origin: Point<S>,
    h: S,
    shape: [usize; 3],
}

impl<S: Scalar> Grid<S> {
    pub fn new(n: usize, origin: Point<S>, h: S, shape: [usize; 3]) -> Result<Self> {
        if !(n == 2 || n == 3) {
            return Err(Error::InvalidSpec(format!("dimension must be 2 or 3, got {n}")));
        }
        if !(h > S::zero()) || !h.is_finite() {
            return Err(Error::InvalidSpec(format!("grid spacing must be positive, got {h}")));
        }
        for d in 0..n {
            if shape[d] < 4 {
                return Err(Error::InvalidSpec(format!(
                    "axis {d} must carry at least 4 nodes, got {}",
                    shape[d]
                )));
            }
            if !origin[d].is_finite() {
                return Err(Error::InvalidSpec("grid origin must be finite".into()));
            }
        }
        for d in n..3 {
            if shape[d] != 1 {
                return Err(Error::InvalidSpec(format!(
                    "inactive axis {d} must have a single node, got {}",
                    shape[d]
                )));
            }
        }
        let mut origin = origin;
        for slot in origin.iter_mut().skip(n) {
            *slot = S::zero();
        }
        Ok(Self { n, origin, h, shape })
    }

    /// Symmetric grid centered at `center` covering `[center - half, center + half]`
    /// per active axis, with an odd node count so the center is a node.
    pub fn centered(n: usize, center: Point<S>, half_width: S, h: S) -> Result<Self> {
        let cells = to_f64(half_width / h).ceil() as usize;
        let cells = cells.max(2);
        let mut shape = [1usize; 3];
        let mut origin = [S::zero(); 3];
        for d in 0..n {
            shape[d] = 2 * cells + 1;
            origin[d] = center[d] - cast::<S>(cells as f64) * h;
        }
        Self::new(n, origin, h, shape)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn spacing(&self) -> S {
        self.h
    }

    #[inline]
    pub fn origin(&self) -> Point<S> {
        self.origin
    }

    #[inline]
    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    /// Upper corner of the domain box.
    pub fn top(&self) -> Point<S> {
        let mut t = self.origin;
        for d in 0..self.n {
            t[d] = t[d] + cast::<S>((self.shape[d] - 1) as f64) * self.h;
        }
        t
    }

    /// Total node count.
    pub fn len(&self) -> usize {
        self.shape[0] * self.shape[1] * self.shape[2]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, ijk: [usize; 3]) -> usize {
        (ijk[0] * self.shape[1] + ijk[1]) * self.shape[2] + ijk[2]
    }

    #[inline]
    pub fn unindex(&self, idx: usize) -> [usize; 3] {
        let k = idx % self.shape[2];
        let rest = idx / self.shape[2];
        let j = rest % self.shape[1];
        let i = rest / self.shape[1];
        [i, j, k]
    }

    #[inline]
    pub fn node_point(&self, ijk: [usize; 3]) -> Point<S> {
        let mut p = self.origin;
        for d in 0..self.n {
            p[d] = p[d] + cast::<S>(ijk[d] as f64) * self.h;
        }
        p
    }

    /// True when `p` lies at least `margin_cells * h` inside the domain box
    /// along every active axis.
    pub fn contains_with_margin(&self, p: Point<S>, margin_cells: S) -> bool {
        let m = margin_cells * self.h;
        let top = self.top();
        for d in 0..self.n {
            if !(p[d] >= self.origin[d] + m && p[d] <= top[d] - m) {
                return false;
            }
        }
        true
    }

    /// Distance from `p` to the boundary of the domain box (negative outside).
    pub fn boundary_distance(&self, p: Point<S>) -> S {
        let top = self.top();
        let mut best = S::infinity();
        for d in 0..self.n {
            best = best.min(p[d] - self.origin[d]).min(top[d] - p[d]);
        }
        best
    }

    /// Whether node `ijk` lies on the box boundary.
    pub fn is_boundary_node(&self, ijk: [usize; 3]) -> bool {
        (0..self.n).any(|d| ijk[d] == 0 || ijk[d] + 1 == self.shape[d])
    }

    /// Iterates all node multi-indices in storage order.
    pub fn iter_nodes(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let shape = self.shape;
        (0..shape[0]).flat_map(move |i| {
            (0..shape[1]).flat_map(move |j| (0..shape[2]).map(move |k| [i, j, k]))
        })
    }

    /// Cell index and fractional coordinates for interpolation at `p`.
    /// The cell index is clamped to the valid range.
    pub(crate) fn locate(&self, p: Point<S>) -> ([usize; 3], [S; 3]) {
        let mut cell = [0usize; 3];
        let mut frac = [S::zero(); 3];
        for d in 0..self.n {
            let t = (p[d] - self.origin[d]) / self.h;
            let max_cell = self.shape[d] - 2;
            let i = to_f64(t.floor()) as isize;
            let i = i.clamp(0, max_cell as isize) as usize;
            cell[d] = i;
            frac[d] = t - cast::<S>(i as f64);
        }
        (cell, frac)
    }

    pub(crate) fn out_of_domain_error(&self, p: Point<S>, context: &str) -> Error {
        Error::OutOfDomain {
            point: [to_f64(p[0]), to_f64(p[1]), to_f64(p[2])],
            context: context.to_string(),
        }
    }
}
