//! Scalar and matrix-valued fields sampled on a grid, with multilinear
//! interpolation and central-difference gradients.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::linalg::{self, Matrix, Point};
use crate::num::{Scalar, SplitMix64, cast};

/// A real field sampled at grid nodes. Immutable after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField<S> {
    grid: Grid<S>,
    values: Vec<S>,
}

impl<S: Scalar> ScalarField<S> {
    pub fn new(grid: Grid<S>, values: Vec<S>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidSpec(format!(
                "value count {} does not match grid size {}",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("field values must be finite".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Grid<S>, f: impl Fn(Point<S>) -> S) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.len());
        for ijk in grid.iter_nodes() {
            values.push(f(grid.node_point(ijk)));
        }
        Self::new(grid, values)
    }

    pub fn constant(grid: Grid<S>, c: S) -> Result<Self> {
        let len = grid.len();
        Self::new(grid, vec![c; len])
    }

    #[inline]
    pub fn grid(&self) -> &Grid<S> {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[S] {
        &self.values
    }

    #[inline]
    pub fn value(&self, ijk: [usize; 3]) -> S {
        self.values[self.grid.index(ijk)]
    }

    /// Applies `f` nodewise, producing a new field.
    pub fn map(&self, f: impl Fn(S) -> S) -> Result<Self> {
        Self::new(self.grid.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    /// Combines two fields on the same grid nodewise.
    pub fn zip_map(&self, other: &Self, f: impl Fn(S, S) -> S) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::InvalidSpec("fields live on different grids".into()));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::new(self.grid.clone(), values)
    }

    /// Positive part `max(u, 0)`.
    pub fn positive_part(&self) -> Self {
        let values = self.values.iter().map(|&v| v.max(S::zero())).collect();
        Self { grid: self.grid.clone(), values }
    }

    /// Negative part `max(-u, 0)`.
    pub fn negative_part(&self) -> Self {
        let values = self.values.iter().map(|&v| (-v).max(S::zero())).collect();
        Self { grid: self.grid.clone(), values }
    }

    /// Multilinear interpolation at `p`.
    ///
    /// `p` must lie at least one cell inside the domain box; the stencil is
    /// then always interior and interpolation reproduces nodal values
    /// exactly.
    pub fn interpolate(&self, p: Point<S>) -> Result<S> {
        if !self.grid.contains_with_margin(p, -cast::<S>(1e-12)) {
            return Err(self.grid.out_of_domain_error(p, "interpolation point"));
        }
        Ok(self.interpolate_unchecked(p))
    }

    #[inline]
    pub(crate) fn interpolate_unchecked(&self, p: Point<S>) -> S {
        let n = self.grid.dim();
        let (cell, frac) = self.grid.locate(p);
        let mut acc = S::zero();
        let corners = 1usize << n;
        for corner in 0..corners {
            let mut w = S::one();
            let mut ijk = cell;
            for d in 0..n {
                if corner >> d & 1 == 1 {
                    ijk[d] += 1;
                    w = w * frac[d];
                } else {
                    w = w * (S::one() - frac[d]);
                }
            }
            acc = acc + w * self.values[self.grid.index(ijk)];
        }
        acc
    }

    /// Central-difference gradient at node `ijk` (must be interior).
    #[inline]
    pub fn nodal_gradient(&self, ijk: [usize; 3]) -> Point<S> {
        let n = self.grid.dim();
        let two_h = cast::<S>(2.0) * self.grid.spacing();
        let mut g = [S::zero(); 3];
        for d in 0..n {
            let mut up = ijk;
            up[d] += 1;
            let mut dn = ijk;
            dn[d] -= 1;
            g[d] = (self.values[self.grid.index(up)] - self.values[self.grid.index(dn)]) / two_h;
        }
        g
    }

    /// Gradient at `p`: nodal central differences interpolated multilinearly.
    ///
    /// Exact for affine fields, O(h^2)-consistent for smooth ones. `p` must
    /// be at least one cell from the domain boundary so that the stencil
    /// stays interior.
    pub fn gradient(&self, p: Point<S>) -> Result<Point<S>> {
        let one = S::one() - cast::<S>(1e-12);
        if !self.grid.contains_with_margin(p, one) {
            return Err(self.grid.out_of_domain_error(p, "gradient point"));
        }
        Ok(self.gradient_unchecked(p))
    }

    #[inline]
    pub(crate) fn gradient_unchecked(&self, p: Point<S>) -> Point<S> {
        let n = self.grid.dim();
        let (cell, frac) = self.grid.locate(p);
        // Clamp the interpolation cell into the interior-node lattice.
        let mut cell = cell;
        let mut frac = frac;
        let shape = self.grid.shape();
        for d in 0..n {
            if cell[d] == 0 {
                cell[d] = 1;
                frac[d] = frac[d] - S::one();
            } else if cell[d] + 2 >= shape[d] {
                let shift = cell[d] - (shape[d] - 3);
                cell[d] = shape[d] - 3;
                frac[d] = frac[d] + cast::<S>(shift as f64);
            }
        }
        let corners = 1usize << n;
        let mut g = [S::zero(); 3];
        for corner in 0..corners {
            let mut w = S::one();
            let mut ijk = cell;
            for d in 0..n {
                if corner >> d & 1 == 1 {
                    ijk[d] += 1;
                    w = w * frac[d];
                } else {
                    w = w * (S::one() - frac[d]);
                }
            }
            let ng = self.nodal_gradient(ijk);
            for d in 0..n {
                g[d] = g[d] + w * ng[d];
            }
        }
        g
    }

    /// Largest nodal central-difference gradient magnitude over interior
    /// nodes; a robust Lipschitz-constant estimate for sampled fields.
    pub fn max_interior_gradient(&self) -> S {
        let n = self.grid.dim();
        let shape = self.grid.shape();
        let mut worst = S::zero();
        for ijk in self.grid.iter_nodes() {
            if (0..n).any(|d| ijk[d] == 0 || ijk[d] + 1 >= shape[d]) {
                continue;
            }
            worst = worst.max(linalg::norm(self.nodal_gradient(ijk)));
        }
        worst
    }
}

/// Symmetric positive definite matrix field A(x) with uniform ellipticity
/// bounds and Hoelder data.
#[derive(Clone, Debug)]
pub struct CoefficientField<S> {
    grid: Grid<S>,
    matrices: Vec<Matrix<S>>,
    lambda_min: S,
    lambda_max: S,
    hoelder_exponent: S,
    hoelder_seminorm: S,
}

impl<S: Scalar> CoefficientField<S> {
    const SYM_TOL: f64 = 1e-12;
    const EIG_SLACK: f64 = 1e-9;

    /// Builds a coefficient field and validates every nodal matrix:
    /// symmetric to 1e-12 absolute, eigenvalues within
    /// `[lambda * (1 - 1e-9), Lambda * (1 + 1e-9)]`.
    pub fn new(
        grid: Grid<S>,
        matrices: Vec<Matrix<S>>,
        lambda_min: S,
        lambda_max: S,
        hoelder_exponent: S,
        hoelder_seminorm: S,
    ) -> Result<Self> {
        if matrices.len() != grid.len() {
            return Err(Error::InvalidSpec("matrix count does not match grid".into()));
        }
        if !(lambda_min > S::zero()) || !(lambda_max >= lambda_min) {
            return Err(Error::InvalidSpec(
                "ellipticity bounds must satisfy 0 < lambda <= Lambda".into(),
            ));
        }
        if !(hoelder_exponent > S::zero() && hoelder_exponent <= S::one()) {
            return Err(Error::InvalidSpec("Hoelder exponent must lie in (0, 1]".into()));
        }
        let n = grid.dim();
        let lo_gate = lambda_min * (S::one() - cast::<S>(Self::EIG_SLACK));
        let hi_gate = lambda_max * (S::one() + cast::<S>(Self::EIG_SLACK));
        for (idx, m) in matrices.iter().enumerate() {
            if linalg::asymmetry(m, n) > cast::<S>(Self::SYM_TOL) {
                return Err(Error::InvalidMatrix(format!("nodal matrix {idx} is not symmetric")));
            }
            let (lo, hi) = linalg::sym_eigen_range(m, n);
            if lo < lo_gate || hi > hi_gate {
                return Err(Error::InvalidMatrix(format!(
                    "nodal matrix {idx} has eigenvalues [{lo:e}, {hi:e}] outside [{lambda_min:e}, {lambda_max:e}]"
                )));
            }
        }
        Ok(Self {
            grid,
            matrices,
            lambda_min,
            lambda_max,
            hoelder_exponent,
            hoelder_seminorm,
        })
    }

    pub fn from_fn(
        grid: Grid<S>,
        lambda_min: S,
        lambda_max: S,
        hoelder_exponent: S,
        hoelder_seminorm: S,
        f: impl Fn(Point<S>) -> Matrix<S>,
    ) -> Result<Self> {
        let mut matrices = Vec::with_capacity(grid.len());
        for ijk in grid.iter_nodes() {
            matrices.push(f(grid.node_point(ijk)));
        }
        Self::new(grid, matrices, lambda_min, lambda_max, hoelder_exponent, hoelder_seminorm)
    }

    /// Builds the field inferring the ellipticity bounds from the data.
    pub fn from_fn_inferred(
        grid: Grid<S>,
        hoelder_exponent: S,
        f: impl Fn(Point<S>) -> Matrix<S>,
    ) -> Result<Self> {
        let mut matrices = Vec::with_capacity(grid.len());
        for ijk in grid.iter_nodes() {
            matrices.push(f(grid.node_point(ijk)));
        }
        Self::from_matrices_inferred(grid, matrices, hoelder_exponent)
    }

    /// As [`CoefficientField::new`] with bounds taken from the nodal data.
    pub fn from_matrices_inferred(
        grid: Grid<S>,
        matrices: Vec<Matrix<S>>,
        hoelder_exponent: S,
    ) -> Result<Self> {
        let n = grid.dim();
        let mut lo = S::infinity();
        let mut hi = S::zero();
        for m in &matrices {
            let (a, b) = linalg::sym_eigen_range(m, n);
            lo = lo.min(a);
            hi = hi.max(b);
        }
        let field = Self::new(grid, matrices, lo, hi, hoelder_exponent, S::zero())?;
        let seminorm = hoelder_seminorm(&field, hoelder_exponent, 4096);
        Ok(Self { hoelder_seminorm: seminorm, ..field })
    }

    /// Constant-identity coefficients.
    pub fn identity(grid: Grid<S>) -> Result<Self> {
        let n = grid.dim();
        let len = grid.len();
        Self::new(grid, vec![linalg::identity::<S>(n); len], S::one(), S::one(), S::one(), S::zero())
    }

    #[inline]
    pub fn grid(&self) -> &Grid<S> {
        &self.grid
    }

    #[inline]
    pub fn lambda_min(&self) -> S {
        self.lambda_min
    }

    #[inline]
    pub fn lambda_max(&self) -> S {
        self.lambda_max
    }

    #[inline]
    pub fn hoelder_exponent(&self) -> S {
        self.hoelder_exponent
    }

    #[inline]
    pub fn hoelder_seminorm(&self) -> S {
        self.hoelder_seminorm
    }

    #[inline]
    pub fn matrix(&self, ijk: [usize; 3]) -> &Matrix<S> {
        &self.matrices[self.grid.index(ijk)]
    }

    #[inline]
    pub fn matrices(&self) -> &[Matrix<S>] {
        &self.matrices
    }

    /// Entrywise multilinear interpolation; convexity keeps the result SPD
    /// with eigenvalues inside the nodal range.
    pub fn value_at(&self, p: Point<S>) -> Result<Matrix<S>> {
        if !self.grid.contains_with_margin(p, -cast::<S>(1e-12)) {
            return Err(self.grid.out_of_domain_error(p, "coefficient interpolation point"));
        }
        Ok(self.value_at_unchecked(p))
    }

    pub(crate) fn value_at_unchecked(&self, p: Point<S>) -> Matrix<S> {
        let n = self.grid.dim();
        let (cell, frac) = self.grid.locate(p);
        let mut acc = [[S::zero(); 3]; 3];
        let corners = 1usize << n;
        for corner in 0..corners {
            let mut w = S::one();
            let mut ijk = cell;
            for d in 0..n {
                if corner >> d & 1 == 1 {
                    ijk[d] += 1;
                    w = w * frac[d];
                } else {
                    w = w * (S::one() - frac[d]);
                }
            }
            let m = &self.matrices[self.grid.index(ijk)];
            for i in 0..n {
                for j in 0..n {
                    acc[i][j] = acc[i][j] + w * m[i][j];
                }
            }
        }
        acc
    }
}

/// Non-negative phase weights q+ and q- with their sup bounds.
#[derive(Clone, Debug)]
pub struct PhaseWeights<S> {
    q_plus: ScalarField<S>,
    q_minus: ScalarField<S>,
    sup_plus: S,
    sup_minus: S,
}

impl<S: Scalar> PhaseWeights<S> {
    pub fn new(q_plus: ScalarField<S>, q_minus: ScalarField<S>) -> Result<Self> {
        if q_plus.grid() != q_minus.grid() {
            return Err(Error::InvalidSpec("phase weights must share a grid".into()));
        }
        for f in [&q_plus, &q_minus] {
            if f.values().iter().any(|&v| v < S::zero()) {
                return Err(Error::InvalidSpec("phase weights must be non-negative".into()));
            }
        }
        let sup_plus = q_plus.values().iter().cloned().fold(S::zero(), S::max);
        let sup_minus = q_minus.values().iter().cloned().fold(S::zero(), S::max);
        Ok(Self { q_plus, q_minus, sup_plus, sup_minus })
    }

    pub fn constant(grid: Grid<S>, q_plus: S, q_minus: S) -> Result<Self> {
        Self::new(ScalarField::constant(grid.clone(), q_plus)?, ScalarField::constant(grid, q_minus)?)
    }

    #[inline]
    pub fn q_plus(&self) -> &ScalarField<S> {
        &self.q_plus
    }

    #[inline]
    pub fn q_minus(&self) -> &ScalarField<S> {
        &self.q_minus
    }

    #[inline]
    pub fn sup_plus(&self) -> S {
        self.sup_plus
    }

    #[inline]
    pub fn sup_minus(&self) -> S {
        self.sup_minus
    }
}

/// Sampled lower bound for the C^{0,alpha} seminorm of `a`:
/// the maximum of `|A(x) - A(y)|_op / |x - y|^alpha` over node pairs.
///
/// Pairs mix uniform draws, near-neighbor pairs (the finite-difference
/// regime) and pairs shrunk toward the domain center, so both smooth and
/// cusp-like moduli are probed.
pub fn hoelder_seminorm<S: Scalar>(a: &CoefficientField<S>, alpha: S, sample_count: usize) -> S {
    let grid = a.grid();
    let n = grid.dim();
    let shape = grid.shape();
    let mut rng = SplitMix64::new(0x5eed_f1e1d);
    let mut worst = S::zero();

    let random_node = |rng: &mut SplitMix64| {
        let mut ijk = [0usize; 3];
        for (d, slot) in ijk.iter_mut().enumerate().take(n) {
            *slot = (rng.next_u64() % shape[d] as u64) as usize;
        }
        ijk
    };

    let consider = |worst: &mut S, pa: [usize; 3], pb: [usize; 3]| {
        if pa == pb {
            return;
        }
        let xa = grid.node_point(pa);
        let xb = grid.node_point(pb);
        let d = linalg::dist(xa, xb);
        if !(d > S::zero()) {
            return;
        }
        let diff = linalg::mat_sub(a.matrix(pa), a.matrix(pb));
        let ratio = linalg::sym_op_norm(&diff, n) / d.powf(alpha);
        *worst = worst.max(ratio);
    };

    for trial in 0..sample_count {
        let pa = random_node(&mut rng);
        match trial % 3 {
            // Uniform pair.
            0 => {
                let pb = random_node(&mut rng);
                consider(&mut worst, pa, pb);
            }
            // Axis neighbor at a small lag.
            1 => {
                let d = (rng.next_u64() % n as u64) as usize;
                let lag = 1 + (rng.next_u64() % 3) as usize;
                let mut pb = pa;
                if pb[d] + lag < shape[d] {
                    pb[d] += lag;
                } else {
                    pb[d] -= lag.min(pb[d]);
                }
                consider(&mut worst, pa, pb);
            }
            // Shrink toward a second point (captures cusp moduli).
            _ => {
                let anchor = random_node(&mut rng);
                let t: f64 = rng.next_unit();
                let mut pb = pa;
                for dd in 0..n {
                    let blended =
                        anchor[dd] as f64 + (pa[dd] as f64 - anchor[dd] as f64) * t * t;
                    pb[dd] = blended.round() as usize;
                }
                consider(&mut worst, pa, pb);
                consider(&mut worst, anchor, pb);
            }
        }
    }
    worst
}
