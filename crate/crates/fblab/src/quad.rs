//! Volume and sphere quadrature.
//!
//! Ball integrals use cell counting over the node-centered dual cells with a
//! partial-cell volume correction in the boundary layer: exact disk/cell
//! overlap areas in 2D, recursive subdivision with a tangent-plane cut in 3D.
//! Singular-kernel integrals use a radial shell decomposition. Sphere
//! averages use 512 equispaced angles in 2D and an antipodally symmetrized
//! Fibonacci lattice (>= 1024 points) in 3D.
//!
//! Every quadrature loop runs in a fixed lexicographic order through a
//! compensated accumulator, so results are bit-reproducible.

use crate::error::Result;
use crate::field::ScalarField;
use crate::grid::Grid;
use crate::linalg::{self, Point};
use crate::num::{CompensatedSum, Scalar, cast, to_f64, unit_ball_volume};

/// Default angular resolution in 2D.
pub const SPHERE_COUNT_2D: usize = 512;
/// Default Fibonacci-lattice size in 3D.
pub const SPHERE_COUNT_3D: usize = 1024;

/// A set of unit directions with equal weights.
#[derive(Clone, Debug)]
pub struct SphereRule<S> {
    dirs: Vec<Point<S>>,
}

impl<S: Scalar> SphereRule<S> {
    /// Default rule for dimension `n`.
    pub fn standard(n: usize) -> Self {
        match n {
            2 => Self::equispaced_circle(SPHERE_COUNT_2D),
            _ => Self::fibonacci_sphere(SPHERE_COUNT_3D),
        }
    }

    pub fn with_count(n: usize, count: usize) -> Self {
        match n {
            2 => Self::equispaced_circle(count.max(16)),
            _ => Self::fibonacci_sphere(count.max(16)),
        }
    }

    /// Midpoint-offset equispaced angles; antipodally symmetric for even
    /// counts.
    fn equispaced_circle(count: usize) -> Self {
        let count = count + count % 2;
        let mut dirs = Vec::with_capacity(count);
        let step = 2.0 * std::f64::consts::PI / count as f64;
        for j in 0..count {
            let theta = (j as f64 + 0.5) * step;
            dirs.push([cast(theta.cos()), cast(theta.sin()), S::zero()]);
        }
        Self { dirs }
    }

    /// Fibonacci lattice on the half sphere, completed with the antipode of
    /// every point. The pairing makes odd integrands cancel exactly, which
    /// keeps averages of half-space indicators unbiased.
    fn fibonacci_sphere(count: usize) -> Self {
        let half = count.div_ceil(2);
        let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
        let mut dirs = Vec::with_capacity(2 * half);
        for i in 0..half {
            // z in (0, 1): upper half sphere only.
            let z = 1.0 - (2.0 * i as f64 + 1.0) / (2.0 * half as f64);
            let rho = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            let d = [rho * phi.cos(), rho * phi.sin(), z];
            dirs.push([cast(d[0]), cast(d[1]), cast(d[2])]);
            dirs.push([cast(-d[0]), cast(-d[1]), cast(-d[2])]);
        }
        Self { dirs }
    }

    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }

    pub fn directions(&self) -> &[Point<S>] {
        &self.dirs
    }

    /// Equal-weight average of `f` over the sphere `center + radius * dir`.
    pub fn average(
        &self,
        center: Point<S>,
        radius: S,
        mut f: impl FnMut(Point<S>) -> Result<S>,
    ) -> Result<S> {
        let mut sum = CompensatedSum::new();
        for &d in &self.dirs {
            sum.add(f(linalg::add(center, linalg::scale(d, radius)))?);
        }
        Ok(sum.value() / cast::<S>(self.dirs.len() as f64))
    }
}

/// Average of the interpolated field over the sphere `∂B(center, radius)`.
pub fn sphere_average<S: Scalar>(
    f: &ScalarField<S>,
    center: Point<S>,
    radius: S,
) -> Result<S> {
    let rule = SphereRule::standard(f.grid().dim());
    // Fail loudly if the sphere exits the domain.
    let probe = rule.directions()[0];
    f.interpolate(linalg::add(center, linalg::scale(probe, radius)))?;
    rule.average(center, radius, |p| f.interpolate(p))
}

// ---------------------------------------------------------------------------
// Partial-cell volumes.
// ---------------------------------------------------------------------------

/// Antiderivative of sqrt(r^2 - x^2).
fn circle_antiderivative(x: f64, r: f64) -> f64 {
    let xc = x.clamp(-r, r);
    0.5 * (xc * (r * r - xc * xc).max(0.0).sqrt() + r * r * (xc / r).clamp(-1.0, 1.0).asin())
}

/// Exact area of `{ |z - c| <= r }` intersected with the box `[lo, hi]`.
pub fn disk_box_area(c: [f64; 2], r: f64, lo: [f64; 2], hi: [f64; 2]) -> f64 {
    // Translate the disk to the origin.
    let (ax, bx) = (lo[0] - c[0], hi[0] - c[0]);
    let (ay, by) = (lo[1] - c[1], hi[1] - c[1]);
    let x_lo = ax.max(-r);
    let x_hi = bx.min(r);
    if x_lo >= x_hi {
        return 0.0;
    }
    // Breakpoints where the running top/bottom bounds change branch or cross.
    let mut cuts = vec![x_lo, x_hi];
    for v in [ay, by] {
        if v.abs() < r {
            let x = (r * r - v * v).sqrt();
            for root in [-x, x] {
                if root > x_lo && root < x_hi {
                    cuts.push(root);
                }
            }
        }
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoints"));

    let g = |x: f64| (r * r - x * x).max(0.0).sqrt();
    let mut area = 0.0;
    for w in cuts.windows(2) {
        let (x0, x1) = (w[0], w[1]);
        if x1 - x0 <= 0.0 {
            continue;
        }
        let xm = 0.5 * (x0 + x1);
        let top_is_arc = g(xm) < by;
        let bottom_is_arc = -g(xm) > ay;
        let width_mid = g(xm).min(by) - (-g(xm)).max(ay);
        if width_mid <= 0.0 {
            continue;
        }
        let top = if top_is_arc {
            circle_antiderivative(x1, r) - circle_antiderivative(x0, r)
        } else {
            by * (x1 - x0)
        };
        let bottom = if bottom_is_arc {
            -(circle_antiderivative(x1, r) - circle_antiderivative(x0, r))
        } else {
            ay * (x1 - x0)
        };
        area += top - bottom;
    }
    area.max(0.0)
}

/// Volume of `{ z in box : normal . z <= offset }` for an axis-aligned box,
/// via the corner inclusion-exclusion formula; axes with negligible normal
/// components are factored out.
fn halfspace_box_volume(normal: [f64; 3], offset: f64, lo: [f64; 3], hi: [f64; 3]) -> f64 {
    let mut active: Vec<usize> = Vec::with_capacity(3);
    let mut passive_measure = 1.0;
    let scale = normal.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for d in 0..3 {
        if normal[d].abs() > 1e-12 * scale.max(1e-300) {
            active.push(d);
        } else {
            passive_measure *= hi[d] - lo[d];
        }
    }
    if active.is_empty() {
        return if offset >= 0.0 { passive_measure } else { 0.0 };
    }
    let dim = active.len();
    let mut denom = 1.0;
    for &d in &active {
        denom *= normal[d];
    }
    let factorial = [1.0, 1.0, 2.0, 6.0][dim];
    let mut sum = 0.0;
    for corner in 0..(1usize << dim) {
        let mut dot = 0.0;
        let mut hi_count = 0;
        for (slot, &d) in active.iter().enumerate() {
            if corner >> slot & 1 == 1 {
                dot += normal[d] * hi[d];
                hi_count += 1;
            } else {
                dot += normal[d] * lo[d];
            }
        }
        let term = (offset - dot).max(0.0).powi(dim as i32);
        sum += if hi_count % 2 == 0 { term } else { -term };
    }
    let volume = sum / (factorial * denom) * passive_measure;
    let full: f64 = (0..3).map(|d| hi[d] - lo[d]).product();
    volume.clamp(0.0, full)
}

/// Volume of the ball/box intersection in 3D, by recursive subdivision with
/// a tangent-plane cut at the leaves.
pub fn sphere_box_volume(c: [f64; 3], r: f64, lo: [f64; 3], hi: [f64; 3], depth: usize) -> f64 {
    let mut nearest2 = 0.0;
    let mut farthest2 = 0.0;
    for d in 0..3 {
        let n = (c[d].clamp(lo[d], hi[d]) - c[d]).abs();
        nearest2 += n * n;
        let f = (lo[d] - c[d]).abs().max((hi[d] - c[d]).abs());
        farthest2 += f * f;
    }
    let full: f64 = (0..3).map(|d| hi[d] - lo[d]).product();
    if nearest2 >= r * r {
        return 0.0;
    }
    if farthest2 <= r * r {
        return full;
    }
    if depth == 0 {
        let mid = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), 0.5 * (lo[2] + hi[2])];
        let axis = [mid[0] - c[0], mid[1] - c[1], mid[2] - c[2]];
        let len = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if len < 1e-14 * r {
            // Degenerate contact; the cell is tiny relative to the sphere.
            return 0.5 * full;
        }
        let normal = [axis[0] / len, axis[1] / len, axis[2] / len];
        let offset = normal[0] * c[0] + normal[1] * c[1] + normal[2] * c[2] + r;
        return halfspace_box_volume(normal, offset, lo, hi);
    }
    let mid = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), 0.5 * (lo[2] + hi[2])];
    let mut total = 0.0;
    for octant in 0..8usize {
        let mut olo = lo;
        let mut ohi = mid;
        for d in 0..3 {
            if octant >> d & 1 == 1 {
                olo[d] = mid[d];
                ohi[d] = hi[d];
            }
        }
        total += sphere_box_volume(c, r, olo, ohi, depth - 1);
    }
    total
}

/// Overlap volume between the dual cell of a lattice node and a ball.
fn cell_ball_overlap<S: Scalar>(n: usize, node: Point<S>, half: S, center: Point<S>, radius: S) -> S {
    let nodef = [to_f64(node[0]), to_f64(node[1]), to_f64(node[2])];
    let cf = [to_f64(center[0]), to_f64(center[1]), to_f64(center[2])];
    let hf = to_f64(half);
    let rf = to_f64(radius);
    match n {
        2 => cast(disk_box_area(
            [cf[0], cf[1]],
            rf,
            [nodef[0] - hf, nodef[1] - hf],
            [nodef[0] + hf, nodef[1] + hf],
        )),
        _ => cast(sphere_box_volume(
            cf,
            rf,
            [nodef[0] - hf, nodef[1] - hf, nodef[2] - hf],
            [nodef[0] + hf, nodef[1] + hf, nodef[2] + hf],
            3,
        )),
    }
}

// ---------------------------------------------------------------------------
// Ball quadrature over grid nodes.
// ---------------------------------------------------------------------------

/// Node-centered quadrature rule for a ball strictly inside a grid domain:
/// one weight per node, equal to the volume of the node's dual cell clipped
/// to the ball. Nodes are listed in lexicographic order.
#[derive(Clone, Debug)]
pub struct BallQuadrature<S> {
    pub nodes: Vec<([usize; 3], S)>,
    pub center: Point<S>,
    pub radius: S,
    pub volume: S,
}

impl<S: Scalar> BallQuadrature<S> {
    /// Builds the rule. Requires the closed ball plus one cell of slack
    /// inside the domain box so that every touched node exists; the extra
    /// half cell keeps nodal gradients available as well.
    pub fn on_grid(grid: &Grid<S>, center: Point<S>, radius: S) -> Result<Self> {
        let n = grid.dim();
        let h = grid.spacing();
        if grid.boundary_distance(center) < radius + cast::<S>(1.5) * h {
            return Err(grid.out_of_domain_error(center, "ball exits the domain"));
        }
        let half = h * cast::<S>(0.5);
        let sqrt_n = cast::<S>((n as f64).sqrt());
        let reach = radius + half * sqrt_n;
        let origin = grid.origin();
        let shape = grid.shape();

        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for d in 0..n {
            let a = to_f64((center[d] - reach - origin[d]) / h).floor().max(0.0) as usize;
            let b = to_f64((center[d] + reach - origin[d]) / h).ceil() as usize;
            lo[d] = a;
            hi[d] = b.min(shape[d] - 1);
        }
        for d in n..3 {
            lo[d] = 0;
            hi[d] = 0;
        }

        let mut nodes = Vec::new();
        let mut volume = CompensatedSum::new();
        let inner = radius - half * sqrt_n;
        for i in lo[0]..=hi[0] {
            for j in lo[1]..=hi[1] {
                for k in lo[2]..=hi[2] {
                    let ijk = [i, j, k];
                    let p = grid.node_point(ijk);
                    let d = linalg::dist(p, center);
                    if d >= reach {
                        continue;
                    }
                    let w = if d <= inner {
                        h.powi(n as i32)
                    } else {
                        let w = cell_ball_overlap(n, p, half, center, radius);
                        if !(w > S::zero()) {
                            continue;
                        }
                        w
                    };
                    nodes.push((ijk, w));
                    volume.add(w);
                }
            }
        }
        Ok(Self { nodes, center, radius, volume: volume.value() })
    }

    /// Integrates a nodal integrand against the rule.
    pub fn integrate(&self, mut f: impl FnMut([usize; 3]) -> S) -> S {
        let mut sum = CompensatedSum::new();
        for &(ijk, w) in &self.nodes {
            sum.add(w * f(ijk));
        }
        sum.value()
    }
}

/// Integral of the interpolated field over a ball (cell counting on the
/// field's own lattice).
pub fn ball_integral<S: Scalar>(
    f: &ScalarField<S>,
    center: Point<S>,
    radius: S,
) -> Result<S> {
    let quad = BallQuadrature::on_grid(f.grid(), center, radius)?;
    Ok(quad.integrate(|ijk| f.value(ijk)))
}

/// Integral of the field against a radial kernel over a ball, by the shell
/// decomposition (innermost shell analytic with the field frozen at the
/// ball center).
pub fn ball_integral_kernel<S: Scalar>(
    f: &ScalarField<S>,
    center: Point<S>,
    radius: S,
    kernel: Kernel,
) -> Result<S> {
    let grid = f.grid();
    if grid.boundary_distance(center) < radius + cast::<S>(1.5) * grid.spacing() {
        return Err(grid.out_of_domain_error(center, "kernel ball exits the domain"));
    }
    let rule = SphereRule::standard(grid.dim());
    kernel_ball_integral_fn(
        grid.dim(),
        center,
        radius,
        grid.spacing(),
        kernel,
        InnerRule::FreezeCenter,
        &rule,
        |p| f.interpolate(p),
    )
}

/// Integral of a pointwise integrand over a ball, on a ball-centered lattice
/// with the given spacing. Used for integrands that are not nodal fields
/// (pullbacks, sign tests in frame coordinates).
pub fn ball_integral_fn<S: Scalar>(
    n: usize,
    center: Point<S>,
    radius: S,
    spacing: S,
    mut f: impl FnMut(Point<S>) -> Result<S>,
) -> Result<S> {
    let half = spacing * cast::<S>(0.5);
    let sqrt_n = cast::<S>((n as f64).sqrt());
    let reach = radius + half * sqrt_n;
    let inner = radius - half * sqrt_n;
    let m = to_f64(reach / spacing).ceil() as i64;
    let mut sum = CompensatedSum::new();
    let k_range = if n == 3 { -m..=m } else { 0..=0 };
    for i in -m..=m {
        for j in -m..=m {
            for k in k_range.clone() {
                let offs = [
                    cast::<S>(i as f64) * spacing,
                    cast::<S>(j as f64) * spacing,
                    cast::<S>(k as f64) * spacing,
                ];
                let p = linalg::add(center, offs);
                let d = linalg::norm(offs);
                if d >= reach {
                    continue;
                }
                let w = if d <= inner {
                    spacing.powi(n as i32)
                } else {
                    let w = cell_ball_overlap(n, p, half, center, radius);
                    if !(w > S::zero()) {
                        continue;
                    }
                    w
                };
                sum.add(w * f(p)?);
            }
        }
    }
    Ok(sum.value())
}

/// Mean of a pointwise integrand over a ball, on a ball-centered lattice:
/// integral divided by the lattice's own measure of the ball, so constants
/// average to themselves exactly.
pub fn ball_average_fn<S: Scalar>(
    n: usize,
    center: Point<S>,
    radius: S,
    spacing: S,
    mut f: impl FnMut(Point<S>) -> Result<S>,
) -> Result<S> {
    let mut measure = CompensatedSum::new();
    let integral = ball_integral_fn(n, center, radius, spacing, |p| {
        let v = f(p)?;
        Ok(v)
    })?;
    // Second pass for the measure keeps the code simple; the lattice is
    // identical so the ratio is exact for constants.
    let one = ball_integral_fn(n, center, radius, spacing, |_| Ok(S::one()))?;
    measure.add(one);
    Ok(integral / measure.value())
}

// ---------------------------------------------------------------------------
// Radial shell quadrature for kernel-weighted integrals.
// ---------------------------------------------------------------------------

/// Radial kernel of the weighted ball integral.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kernel {
    /// Kernel identically one (the 2D continuation convention).
    One,
    /// `|z - center|^{-1}`, the 3D fundamental-solution weight.
    InverseDistance,
}

impl Kernel {
    fn value<S: Scalar>(self, rho: S) -> S {
        match self {
            Kernel::One => S::one(),
            Kernel::InverseDistance => S::one() / rho,
        }
    }

    /// Integral of the kernel over a small ball of radius `rho`.
    fn ball_mass<S: Scalar>(self, n: usize, rho: S) -> S {
        match self {
            Kernel::One => unit_ball_volume::<S>(n) * rho.powi(n as i32),
            Kernel::InverseDistance => {
                // n = 3: int 4 pi rho'^2 / rho' = 2 pi rho^2.
                cast::<S>(2.0) * S::PI() * rho * rho
            }
        }
    }
}

/// How the innermost (unresolvable) shell is closed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InnerRule {
    /// Freeze the integrand at the ball center (smooth integrands).
    FreezeCenter,
    /// Freeze the angular average at the innermost resolvable shell
    /// (integrands discontinuous at the center, e.g. phase indicators).
    FreezeInnerAverage,
}

/// Kernel-weighted ball integral via radial shells:
/// inner ball of radius `2 * spacing` integrated analytically against the
/// kernel with the integrand frozen per `inner`, then composite Simpson in
/// the radius with sphere averages per shell.
pub fn kernel_ball_integral_fn<S: Scalar>(
    n: usize,
    center: Point<S>,
    radius: S,
    spacing: S,
    kernel: Kernel,
    inner: InnerRule,
    rule: &SphereRule<S>,
    mut f: impl FnMut(Point<S>) -> Result<S>,
) -> Result<S> {
    let two = cast::<S>(2.0);
    let rho0 = (two * spacing).min(radius / two);
    let surface = cast::<S>(n as f64) * unit_ball_volume::<S>(n);

    let inner_level = match inner {
        InnerRule::FreezeCenter => f(center)?,
        InnerRule::FreezeInnerAverage => rule.average(center, rho0, &mut f)?,
    };
    let mut total = inner_level * kernel.ball_mass(n, rho0);

    // Composite Simpson over [rho0, radius].
    let spans = to_f64((radius - rho0) / spacing).ceil().max(4.0) as usize;
    let intervals = spans + spans % 2;
    let step = (radius - rho0) / cast::<S>(intervals as f64);
    let mut sum = CompensatedSum::new();
    for i in 0..=intervals {
        let rho = rho0 + cast::<S>(i as f64) * step;
        let avg = rule.average(center, rho, &mut f)?;
        let integrand = kernel.value(rho) * surface * rho.powi(n as i32 - 1) * avg;
        let coeff = if i == 0 || i == intervals {
            S::one()
        } else if i % 2 == 1 {
            cast::<S>(4.0)
        } else {
            two
        };
        sum.add(coeff * integrand);
    }
    total = total + sum.value() * step / cast::<S>(3.0);
    Ok(total)
}
