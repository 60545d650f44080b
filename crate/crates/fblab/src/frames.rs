//! Affine frames: matrix square roots, the change of variables that freezes
//! the coefficient matrix to the identity at a point, the associated
//! ellipsoids, and pullbacks of fields into frame coordinates.

use crate::error::{Error, Result};
use crate::field::{CoefficientField, PhaseWeights, ScalarField};
use crate::grid::Grid;
use crate::linalg::{self, Matrix, Point};
use crate::num::{Scalar, cast};
use crate::quad::SphereRule;

/// Unique SPD square root via symmetrized eigendecomposition.
///
/// The input is symmetrized first; non-symmetric (beyond 1e-9 relative) or
/// non-positive matrices are rejected.
pub fn spd_sqrt<S: Scalar>(m: &Matrix<S>, n: usize) -> Result<Matrix<S>> {
    let scale = linalg::frobenius(m, n).max(S::min_positive_value());
    linalg::check_spd(m, n, cast::<S>(1e-9) * scale)?;
    let sym = linalg::symmetrize(m);
    let (eig, vecs) = linalg::sym_eigen(&sym, n);
    Ok(linalg::sym_from_eigen(eig, &vecs, n, |x| x.sqrt()))
}

/// The frame anchored at a point: the maps that straighten `A` to the
/// identity there, together with the volume factor they carry.
#[derive(Clone, Debug)]
pub struct AffineFrame<S> {
    anchor: Point<S>,
    n: usize,
    sqrt_matrix: Matrix<S>,
    inv_sqrt_matrix: Matrix<S>,
    det_factor: S,
}

impl<S: Scalar> AffineFrame<S> {
    /// Builds the frame from the SPD matrix `a = A(anchor)`.
    pub fn from_matrix(anchor: Point<S>, a: &Matrix<S>, n: usize) -> Result<Self> {
        let scale = linalg::frobenius(a, n).max(S::min_positive_value());
        linalg::check_spd(a, n, cast::<S>(1e-9) * scale)?;
        let sym = linalg::symmetrize(a);
        let (eig, vecs) = linalg::sym_eigen(&sym, n);
        let sqrt_matrix = linalg::sym_from_eigen(eig, &vecs, n, |x| x.sqrt());
        let inv_sqrt_matrix = linalg::sym_from_eigen(eig, &vecs, n, |x| S::one() / x.sqrt());
        let mut det_factor = S::one();
        for &e in eig.iter().take(n) {
            det_factor = det_factor * e.sqrt();
        }
        let mut anchor = anchor;
        for slot in anchor.iter_mut().skip(n) {
            *slot = S::zero();
        }
        Ok(Self { anchor, n, sqrt_matrix, inv_sqrt_matrix, det_factor })
    }

    /// Frame of the interpolated coefficient at `x`.
    pub fn at(a: &CoefficientField<S>, x: Point<S>) -> Result<Self> {
        let m = a.value_at(x)?;
        Self::from_matrix(x, &m, a.grid().dim())
    }

    /// Identity frame (Laplacian setting).
    pub fn identity(anchor: Point<S>, n: usize) -> Self {
        Self::from_matrix(anchor, &linalg::identity::<S>(n), n).expect("identity is SPD")
    }

    #[inline]
    pub fn anchor(&self) -> Point<S> {
        self.anchor
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn sqrt_matrix(&self) -> &Matrix<S> {
        &self.sqrt_matrix
    }

    #[inline]
    pub fn inv_sqrt_matrix(&self) -> &Matrix<S> {
        &self.inv_sqrt_matrix
    }

    /// `det A^{1/2}(anchor)`, the Jacobian of [`AffineFrame::map_inverse`];
    /// direct energies over the ellipsoid equal `det_factor` times the
    /// transported energies over the ball in frame coordinates.
    #[inline]
    pub fn det_factor(&self) -> S {
        self.det_factor
    }

    /// Frame coordinates of a physical point:
    /// `anchor + A^{-1/2} (y - anchor)`.
    #[inline]
    pub fn map_forward(&self, y: Point<S>) -> Point<S> {
        let d = linalg::mat_vec(&self.inv_sqrt_matrix, linalg::sub(y, self.anchor));
        linalg::add(self.anchor, d)
    }

    /// Physical point of frame coordinates:
    /// `anchor + A^{1/2} (y - anchor)`.
    #[inline]
    pub fn map_inverse(&self, y: Point<S>) -> Point<S> {
        let d = linalg::mat_vec(&self.sqrt_matrix, linalg::sub(y, self.anchor));
        linalg::add(self.anchor, d)
    }

    /// Evaluates the pullback `u_x(y) = u(T_x^{-1}(y))` without resampling.
    pub fn pullback_value(&self, u: &ScalarField<S>, y: Point<S>) -> Result<S> {
        u.interpolate(self.map_inverse(y))
    }

    /// Gradient of the pullback by the chain rule:
    /// `∇u_x(y) = A^{1/2}(x) ∇u(T_x^{-1}(y))`.
    pub fn pullback_gradient(&self, u: &ScalarField<S>, y: Point<S>) -> Result<Point<S>> {
        let g = u.gradient(self.map_inverse(y))?;
        Ok(linalg::mat_vec(&self.sqrt_matrix, g))
    }
}

/// The ellipsoid `E(x, r)`: the image of `B(x, r)` under the inverse frame
/// map. It is sandwiched between `B(x, lambda^{1/2} r)` and
/// `B(x, Lambda^{1/2} r)` in terms of the eigenvalues of `A(x)`.
#[derive(Clone, Debug)]
pub struct Ellipsoid<S> {
    frame: AffineFrame<S>,
    radius: S,
}

impl<S: Scalar> Ellipsoid<S> {
    pub fn new(frame: AffineFrame<S>, radius: S) -> Result<Self> {
        if !(radius > S::zero()) {
            return Err(Error::InvalidSpec("ellipsoid radius must be positive".into()));
        }
        Ok(Self { frame, radius })
    }

    #[inline]
    pub fn frame(&self) -> &AffineFrame<S> {
        &self.frame
    }

    #[inline]
    pub fn radius(&self) -> S {
        self.radius
    }

    #[inline]
    pub fn center(&self) -> Point<S> {
        self.frame.anchor()
    }

    /// Whether `p` lies inside the ellipsoid.
    pub fn contains(&self, p: Point<S>) -> bool {
        linalg::dist(self.frame.map_forward(p), self.frame.anchor()) < self.radius
    }

    /// Half-extent of the ellipsoid along coordinate axis `d`
    /// (`r * |A^{1/2} e_d|`); used for box-containment checks.
    pub fn axis_extent(&self, d: usize) -> S {
        let mut col = [S::zero(); 3];
        for (i, row) in self.frame.sqrt_matrix.iter().enumerate() {
            col[i] = row[d];
        }
        self.radius * linalg::norm(col)
    }

    /// Uniformly distributed boundary points: images of sphere directions
    /// under the inverse frame map.
    pub fn boundary_samples(&self, count: usize) -> Result<Vec<Point<S>>> {
        if count < 16 {
            return Err(Error::InvalidSpec("at least 16 boundary samples required".into()));
        }
        let rule = SphereRule::with_count(self.frame.n, count);
        let x = self.frame.anchor();
        Ok(rule
            .directions()
            .iter()
            .map(|&d| self.frame.map_inverse(linalg::add(x, linalg::scale(d, self.radius))))
            .collect())
    }
}

/// Fields resampled into the frame coordinates at an anchor point: the
/// pulled-back candidate, coefficients (identity at the anchor) and phase
/// weights, all living on a fresh grid covering `B(anchor, radius)`.
#[derive(Clone, Debug)]
pub struct TransformedFrame<S> {
    pub frame: AffineFrame<S>,
    pub u_x: ScalarField<S>,
    pub a_x: CoefficientField<S>,
    pub q_x_plus: ScalarField<S>,
    pub q_x_minus: ScalarField<S>,
}

/// Resamples `u`, `A` and `q` into the frame at `x` on a grid covering
/// `B(x, radius)`.
///
/// Requires `E(x, radius)` plus an interpolation margin strictly inside the
/// domain. The new spacing is `h * lambda^{1/2} / 2`, fine enough that the
/// stretched sampling never undersamples the original lattice. Nodes in the
/// bounding box beyond the ball are filled by clamping the sample radially,
/// which keeps all values finite without extrapolating.
pub fn pullback<S: Scalar>(
    u: &ScalarField<S>,
    a: &CoefficientField<S>,
    q: &PhaseWeights<S>,
    x: Point<S>,
    radius: S,
) -> Result<TransformedFrame<S>> {
    let frame = AffineFrame::at(a, x)?;
    let n = frame.dim();
    let h = u.grid().spacing();
    let h_new = h * a.lambda_min().sqrt() / cast::<S>(2.0);
    let pad = cast::<S>(2.5) * h_new;
    let rho_max = radius + pad;

    // Every sample point T^{-1}(y), |y - x| <= rho_max, must be interpolable.
    let lambda_max_sqrt = a.lambda_max().sqrt();
    let needed = rho_max * lambda_max_sqrt + cast::<S>(1.5) * h;
    if u.grid().boundary_distance(x) < needed {
        return Err(u.grid().out_of_domain_error(x, "pullback ellipsoid exits the domain"));
    }

    let grid = Grid::centered(n, x, rho_max, h_new)?;
    let clamp = |y: Point<S>| -> Point<S> {
        let d = linalg::sub(y, x);
        let len = linalg::norm(d);
        if len <= rho_max {
            y
        } else {
            linalg::add(x, linalg::scale(d, rho_max / len))
        }
    };

    let mut u_vals = Vec::with_capacity(grid.len());
    let mut qp_vals = Vec::with_capacity(grid.len());
    let mut qm_vals = Vec::with_capacity(grid.len());
    let mut mats = Vec::with_capacity(grid.len());
    let inv = frame.inv_sqrt_matrix;
    for ijk in grid.iter_nodes() {
        let y = clamp(grid.node_point(ijk));
        let z = frame.map_inverse(y);
        u_vals.push(u.interpolate(z)?);
        qp_vals.push(q.q_plus().interpolate(z)?);
        qm_vals.push(q.q_minus().interpolate(z)?);
        let am = a.value_at(z)?;
        mats.push(linalg::mat_mul(&linalg::mat_mul(&inv, &am), &inv));
    }

    let u_x = ScalarField::new(grid.clone(), u_vals)?;
    let q_x_plus = ScalarField::new(grid.clone(), qp_vals)?;
    let q_x_minus = ScalarField::new(grid.clone(), qm_vals)?;
    let a_x = CoefficientField::from_matrices_inferred(grid, mats, a.hoelder_exponent())?;
    Ok(TransformedFrame { frame, u_x, a_x, q_x_plus, q_x_minus })
}

/// `det A^{1/2}(x)`; the factor carrying energies between the ellipsoid and
/// its straightened ball.
pub fn energy_transport_factor<S: Scalar>(frame: &AffineFrame<S>) -> S {
    frame.det_factor()
}
