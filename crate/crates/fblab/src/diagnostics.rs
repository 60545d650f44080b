//! The monitored quantities of the theory at sampled points and scales:
//! energy densities, boundary means, the nondegeneracy class test, sign
//! locality, log-growth and decay of the energy density, the
//! Alt-Caffarelli-Friedman product and its almost-monotonicity sweep, and
//! continuity/Lipschitz/Hoelder moduli.

use crate::energy::{MinimalityCertificate, PhaseSign, minimality_gap, scaling_competitor};
use crate::error::{Error, Result};
use crate::field::{CoefficientField, PhaseWeights, ScalarField};
use crate::frames::AffineFrame;
use crate::grid::Grid;
use crate::linalg::{self, Point};
use crate::num::{Halton, Scalar, cast, to_f64, unit_ball_volume};
use crate::quad::{
    BallQuadrature, InnerRule, Kernel, SphereRule, ball_average_fn, ball_integral_fn,
    kernel_ball_integral_fn,
};

// ---------------------------------------------------------------------------
// Probe geometry.
// ---------------------------------------------------------------------------

/// A probe pair `(x, r)` with the frame at `x`, valid only when the doubled
/// ellipsoid `E(x, 2r)` stays inside the domain.
#[derive(Clone, Debug)]
pub struct ProbeBall<S> {
    center: Point<S>,
    radius: S,
    frame: AffineFrame<S>,
    /// Distance to spare between `E(x, 2r)` and the domain boundary.
    containment_slack: S,
}

impl<S: Scalar> ProbeBall<S> {
    pub fn new(a: &CoefficientField<S>, x: Point<S>, r: S) -> Result<Self> {
        if !(r > S::zero()) {
            return Err(Error::InvalidSpec("probe radius must be positive".into()));
        }
        let grid = a.grid();
        let n = grid.dim();
        let h = grid.spacing();
        let frame = AffineFrame::at(a, x)?;
        // Half-extent of E(x, 2r) along each axis, plus interpolation slack.
        let mut slack = S::infinity();
        let top = grid.top();
        let origin = grid.origin();
        for d in 0..n {
            let mut col = [S::zero(); 3];
            for (i, row) in frame.sqrt_matrix().iter().enumerate() {
                col[i] = row[d];
            }
            let extent = cast::<S>(2.0) * r * linalg::norm(col);
            let room = (x[d] - origin[d]).min(top[d] - x[d]) - extent;
            slack = slack.min(room);
        }
        let needed = cast::<S>(2.0) * h;
        if slack < needed {
            return Err(grid.out_of_domain_error(x, "probe ellipsoid E(x, 2r) exits the domain"));
        }
        Ok(Self { center: x, radius: r, frame, containment_slack: slack })
    }

    #[inline]
    pub fn center(&self) -> Point<S> {
        self.center
    }

    #[inline]
    pub fn radius(&self) -> S {
        self.radius
    }

    #[inline]
    pub fn frame(&self) -> &AffineFrame<S> {
        &self.frame
    }

    #[inline]
    pub fn containment_slack(&self) -> S {
        self.containment_slack
    }
}

/// Constants of the nondegeneracy class test.
#[derive(Clone, Copy, Debug)]
pub struct GClassParams<S> {
    pub tau: S,
    pub c0: S,
    pub c1: S,
    pub r0: S,
}

impl<S: Scalar> GClassParams<S> {
    pub fn new(tau: S, c0: S, c1: S, r0: S) -> Result<Self> {
        if !(tau > S::zero() && tau < cast::<S>(1e-2)) {
            return Err(Error::InvalidSpec("tau must lie in (0, 1e-2)".into()));
        }
        if !(c0 >= S::one()) {
            return Err(Error::InvalidSpec("C0 must be at least 1".into()));
        }
        if !(c1 >= cast::<S>(3.0)) {
            return Err(Error::InvalidSpec("C1 must be at least 3".into()));
        }
        if !(r0 > S::zero()) {
            return Err(Error::InvalidSpec("r0 must be positive".into()));
        }
        Ok(Self { tau, c0, c1, r0 })
    }

    /// The comparison constant `k = lambda^{1/2} Lambda^{-1/2} / 6` tied to
    /// the ellipticity bounds of the coefficients.
    pub fn k(&self, a: &CoefficientField<S>) -> S {
        a.lambda_min().sqrt() / a.lambda_max().sqrt() / cast::<S>(6.0)
    }
}

/// Result of the class test: a decided membership with signed margins, or
/// not-applicable when the preconditions fail (distinct from `false`).
#[derive(Clone, Debug)]
pub enum GClassResult<S> {
    Member { margins: [S; 3] },
    NotMember { margins: [S; 3] },
    NotApplicable { reason: String },
}

impl<S: Scalar> GClassResult<S> {
    pub fn is_member(&self) -> bool {
        matches!(self, GClassResult::Member { .. })
    }

    pub fn margins(&self) -> Option<[S; 3]> {
        match self {
            GClassResult::Member { margins } | GClassResult::NotMember { margins } => Some(*margins),
            GClassResult::NotApplicable { .. } => None,
        }
    }
}

/// One monitored record of a probe.
#[derive(Clone, Debug)]
pub struct DiagnosticsRow<S> {
    pub center: Point<S>,
    pub radius: S,
    pub omega: S,
    pub b: S,
    pub b_plus: S,
    pub g: GClassResult<S>,
}

// ---------------------------------------------------------------------------
// Energy density and boundary means.
// ---------------------------------------------------------------------------

fn frame_spacing<S: Scalar>(u: &ScalarField<S>, frame: &AffineFrame<S>) -> S {
    // A lattice step in frame coordinates maps through A^{1/2}(x); half a
    // cell divided by its operator norm keeps the pullback sampled at or
    // below the original resolution even for strongly anisotropic frames.
    let stretch = crate::linalg::sym_op_norm(frame.sqrt_matrix(), frame.dim()).max(S::one());
    u.grid().spacing() * cast::<S>(0.5) / stretch
}

/// Root-mean-square gradient over `B(x, s)`; with a frame, the pullback
/// `u_x` is measured instead (chain rule, no resampling).
pub fn omega<S: Scalar>(
    u: &ScalarField<S>,
    x: Point<S>,
    s: S,
    frame: Option<&AffineFrame<S>>,
) -> Result<S> {
    match frame {
        None => {
            let quad = BallQuadrature::on_grid(u.grid(), x, s)?;
            let mean = quad.integrate(|ijk| {
                let g = u.nodal_gradient(ijk);
                linalg::dot(g, g)
            }) / quad.volume;
            Ok(mean.sqrt())
        }
        Some(frame) => {
            let n = u.grid().dim();
            let spacing = frame_spacing(u, frame);
            let mean = ball_average_fn(n, x, s, spacing, |y| {
                let g = frame.pullback_gradient(u, y)?;
                Ok(linalg::dot(g, g))
            })?;
            Ok(mean.max(S::zero()).sqrt())
        }
    }
}

/// Sphere means `b = avg u_x` and `b+ = avg |u_x|` over `∂B(x, r)` in frame
/// coordinates.
pub fn boundary_means<S: Scalar>(u: &ScalarField<S>, probe: &ProbeBall<S>) -> Result<(S, S)> {
    let n = u.grid().dim();
    let rule = SphereRule::standard(n);
    let frame = probe.frame();
    let x = probe.center();
    let b = rule.average(x, probe.radius(), |y| frame.pullback_value(u, y))?;
    let b_plus = rule.average(x, probe.radius(), |y| Ok(frame.pullback_value(u, y)?.abs()))?;
    Ok((b, b_plus.max(b.abs())))
}

// ---------------------------------------------------------------------------
// The nondegeneracy class and sign locality.
// ---------------------------------------------------------------------------

/// Assembles the monitored record of one probe: energy density, sphere
/// means and the class test.
pub fn probe_row<S: Scalar>(
    u: &ScalarField<S>,
    probe: &ProbeBall<S>,
    params: &GClassParams<S>,
    alpha: S,
) -> Result<DiagnosticsRow<S>> {
    let omega = omega(u, probe.center(), probe.radius(), Some(probe.frame()))?;
    let (b, b_plus) = boundary_means(u, probe)?;
    let g = g_class_membership(u, probe, params, alpha)?;
    Ok(DiagnosticsRow { center: probe.center(), radius: probe.radius(), omega, b, b_plus, g })
}

/// Tests the pair `(x, r)` for class membership: the three margins are the
/// containment slack, the dominance of `|b| / r` over the energy density
/// term, and the gap in `b+ <= C1 |b|`.
pub fn g_class_membership<S: Scalar>(
    u: &ScalarField<S>,
    probe: &ProbeBall<S>,
    params: &GClassParams<S>,
    alpha: S,
) -> Result<GClassResult<S>> {
    let r = probe.radius();
    if r > params.r0 {
        return Ok(GClassResult::NotApplicable {
            reason: format!("radius {} exceeds r0 {}", to_f64(r), to_f64(params.r0)),
        });
    }
    let margin1 = probe.containment_slack();
    let w = omega(u, probe.center(), r, Some(probe.frame()))?;
    let (b, b_plus) = boundary_means(u, probe)?;
    let n = u.grid().dim() as i32;
    let lhs = params.c0 * params.tau.powi(-n) * (S::one() + r.powf(alpha) * w * w).sqrt();
    let margin2 = b.abs() / r - lhs;
    let margin3 = params.c1 * b.abs() - b_plus;
    let margins = [margin1, margin2, margin3];
    if margin2 >= S::zero() && margin3 >= S::zero() {
        Ok(GClassResult::Member { margins })
    } else {
        Ok(GClassResult::NotMember { margins })
    }
}

/// Outcome of the sign-locality measurement on `E(x, tau r / 3)`.
#[derive(Clone, Debug)]
pub enum SignLocality<S> {
    /// Fraction of the ellipsoid where `u` has the wrong sign, and the
    /// number of wrong-sign quadrature nodes strictly inside (more than one
    /// quadrature cell from the boundary).
    Measured {
        wrong_fraction: S,
        interior_wrong_nodes: usize,
        interior_nodes: usize,
    },
    NotApplicable { reason: String },
}

/// Measures the set where `u` disagrees with the sign of `b(x, r)` inside
/// the small ellipsoid `E(x, tau r / 3)`. Expected zero on class members.
pub fn sign_locality<S: Scalar>(
    u: &ScalarField<S>,
    probe: &ProbeBall<S>,
    params: &GClassParams<S>,
    alpha: S,
) -> Result<SignLocality<S>> {
    let membership = g_class_membership(u, probe, params, alpha)?;
    if !membership.is_member() {
        return Ok(SignLocality::NotApplicable {
            reason: "probe is not a class member".into(),
        });
    }
    let (b, _) = boundary_means(u, probe)?;
    if b == S::zero() {
        return Ok(SignLocality::NotApplicable { reason: "b(x, r) vanishes".into() });
    }
    let sign = if b > S::zero() { S::one() } else { -S::one() };
    let rho = params.tau * probe.radius() / cast::<S>(3.0);
    let n = u.grid().dim();
    let frame = probe.frame();
    let x = probe.center();
    // The locality ellipsoid is usually sub-cell; quadrature runs on its own
    // refined lattice.
    let spacing = rho / cast::<S>(8.0);
    let interior_limit = rho - cast::<S>(1.5) * spacing * cast::<S>((n as f64).sqrt());

    let mut wrong = S::zero();
    let mut total = S::zero();
    let mut interior_wrong = 0usize;
    let mut interior_total = 0usize;
    ball_integral_fn(n, x, rho, spacing, |y| {
        let val = frame.pullback_value(u, y)?;
        let is_wrong = val * sign < S::zero();
        if linalg::dist(y, x) <= interior_limit {
            interior_total += 1;
            if is_wrong {
                interior_wrong += 1;
            }
        }
        if is_wrong {
            wrong = wrong + S::one();
        }
        total = total + S::one();
        Ok(S::zero())
    })?;
    let wrong_fraction = if total > S::zero() { wrong / total } else { S::zero() };
    Ok(SignLocality::Measured {
        wrong_fraction,
        interior_wrong_nodes: interior_wrong,
        interior_nodes: interior_total,
    })
}

/// Best (largest) minimum margin of the class test over a radius scan in
/// `[r_lo, r_hi]`; reports what the self-improvement mechanism would find
/// without asserting pass or fail.
pub fn best_membership_margin<S: Scalar>(
    u: &ScalarField<S>,
    a: &CoefficientField<S>,
    z: Point<S>,
    r_lo: S,
    r_hi: S,
    params: &GClassParams<S>,
    alpha: S,
    steps: usize,
) -> Result<(S, S)> {
    let steps = steps.max(2);
    let mut best_r = r_lo;
    let mut best_margin = -S::infinity();
    for i in 0..steps {
        let t = cast::<S>(i as f64) / cast::<S>((steps - 1) as f64);
        let r = r_lo + (r_hi - r_lo) * t;
        let probe = match ProbeBall::new(a, z, r) {
            Ok(p) => p,
            Err(_) => continue,
        };
        if let Some(m) = g_class_membership(u, &probe, params, alpha)?.margins() {
            let min_margin = m[1].min(m[2]);
            if min_margin > best_margin {
                best_margin = min_margin;
                best_r = r;
            }
        }
    }
    Ok((best_r, best_margin))
}

// ---------------------------------------------------------------------------
// Log growth and decay of the energy density.
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct LogGrowthRow<S> {
    pub s: S,
    pub omega: S,
    pub bound_margin: S,
}

#[derive(Clone, Debug)]
pub struct LogGrowthSweep<S> {
    pub rows: Vec<LogGrowthRow<S>>,
    /// Least `C` with `omega(s) <= C (omega(r) + log(r / s))` across rows.
    pub fitted_c: S,
}

/// Energy density at dyadic scales `s = 2^{-j} r` with the least constant
/// fitting the logarithmic growth bound. Scales that fall under the lattice
/// resolution are omitted.
pub fn omega_log_growth<S: Scalar>(
    u: &ScalarField<S>,
    x: Point<S>,
    r: S,
    dyadic_depth: usize,
    frame: Option<&AffineFrame<S>>,
) -> Result<LogGrowthSweep<S>> {
    let h = u.grid().spacing();
    let mut scales = Vec::new();
    for j in 0..=dyadic_depth {
        let s = r / cast::<S>(f64::powi(2.0, j as i32));
        if s < cast::<S>(5.0) * h {
            break;
        }
        scales.push(s);
    }
    if scales.is_empty() {
        return Err(Error::PreconditionFailed("radius under-resolved for a dyadic sweep".into()));
    }
    let omegas: Vec<S> = scales
        .iter()
        .map(|&s| omega(u, x, s, frame))
        .collect::<Result<_>>()?;
    let omega_r = omegas[0];
    let mut fitted = S::zero();
    for (j, &w) in omegas.iter().enumerate() {
        let denom = omega_r + (r / scales[j]).ln();
        if denom > S::zero() {
            fitted = fitted.max(w / denom);
        }
    }
    let rows = scales
        .iter()
        .zip(&omegas)
        .map(|(&s, &w)| LogGrowthRow {
            s,
            omega: w,
            bound_margin: fitted * (omega_r + (r / s).ln()) - w,
        })
        .collect();
    Ok(LogGrowthSweep { rows, fitted_c: fitted })
}

/// Ratio `omega(u_x, x, theta r) / omega(u_x, x, r)`; flagged zero when the
/// denominator vanishes.
#[derive(Clone, Copy, Debug)]
pub struct DecayRatio<S> {
    pub ratio: S,
    pub flagged_zero_denominator: bool,
}

pub fn omega_decay_ratio<S: Scalar>(
    u: &ScalarField<S>,
    x: Point<S>,
    r: S,
    theta: S,
    frame: Option<&AffineFrame<S>>,
) -> Result<DecayRatio<S>> {
    if !(theta > S::zero() && theta < cast::<S>(0.5)) {
        return Err(Error::InvalidSpec("theta must lie in (0, 1/2)".into()));
    }
    let w_r = omega(u, x, r, frame)?;
    if w_r <= S::zero() {
        return Ok(DecayRatio { ratio: S::zero(), flagged_zero_denominator: true });
    }
    let w_theta = omega(u, x, theta * r, frame)?;
    Ok(DecayRatio { ratio: w_theta / w_r, flagged_zero_denominator: false })
}

// ---------------------------------------------------------------------------
// The two-phase product functional.
// ---------------------------------------------------------------------------

/// Kernel convention per dimension: the fundamental-solution weight
/// `|z - y|^{2-n}` in 3D, continued as the unit kernel in 2D.
pub fn acf_kernel(n: usize) -> Kernel {
    if n == 3 { Kernel::InverseDistance } else { Kernel::One }
}

/// `Phi±(u, y, r) = ∫_{B(y,r)} |∇u±|² K` and `Phi = r^{-4} Phi+ Phi-`.
///
/// The phase gradients are evaluated as `|∇u|² χ{±u>0}` at the quadrature
/// points, with the indicator read from the interpolated field.
pub fn acf_phi<S: Scalar>(u: &ScalarField<S>, y: Point<S>, r: S) -> Result<(S, S, S)> {
    let n = u.grid().dim();
    let h = u.grid().spacing();
    let kernel = acf_kernel(n);
    let rule = SphereRule::standard(n);
    let phi_of = |sign: S| -> Result<S> {
        kernel_ball_integral_fn(
            n,
            y,
            r,
            h,
            kernel,
            InnerRule::FreezeInnerAverage,
            &rule,
            |p| {
                let val = u.interpolate(p)?;
                if val * sign > S::zero() {
                    let g = u.gradient(p)?;
                    Ok(linalg::dot(g, g))
                } else {
                    Ok(S::zero())
                }
            },
        )
    };
    let phi_plus = phi_of(S::one())?.max(S::zero());
    let phi_minus = phi_of(-S::one())?.max(S::zero());
    let phi = phi_plus * phi_minus / r.powi(4);
    Ok((phi_plus, phi_minus, phi))
}

/// One radius record of an almost-monotonicity sweep.
#[derive(Clone, Debug)]
pub struct AcfRow<S> {
    pub r: S,
    pub phi_plus: S,
    pub phi_minus: S,
    pub phi: S,
}

/// Almost-monotonicity sweep of the product functional around a near-zero
/// anchor.
#[derive(Clone, Debug)]
pub struct AcfSweep<S> {
    pub anchor: Point<S>,
    pub delta: S,
    pub rows: Vec<AcfRow<S>>,
    /// Least `C >= 0` with `Phi(s) <= Phi(r) + C r^delta` over all pairs
    /// `s < r` of the sweep.
    pub fitted_constant: S,
    /// Magnitude proxy `1 + (mean |∇u|² on B(x0, R))² + ((log R)+)^4`
    /// evaluated at the largest admissible comparison radius `R`.
    pub proxy_constant: S,
    pub proxy_radius: S,
    /// Normalization `1 / (n (n-2) omega_n)` of the 3D kernel; absent under
    /// the 2D convention.
    pub kernel_normalization: Option<S>,
    pub kernel_convention: &'static str,
}

/// Runs the sweep. The anchor must be a near-zero of `u` (within `2h` times
/// the local Lipschitz scale), the radii ascending with all balls inside
/// the domain, and `delta` inside `(0, alpha / (4 (n + 1)))`.
pub fn acf_sweep<S: Scalar>(
    u: &ScalarField<S>,
    x0: Point<S>,
    radii: &[S],
    delta: S,
    alpha: S,
) -> Result<AcfSweep<S>> {
    let n = u.grid().dim();
    let h = u.grid().spacing();
    if radii.is_empty() {
        return Err(Error::InvalidSpec("empty radius list".into()));
    }
    for w in radii.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::InvalidSpec("radii must be strictly ascending".into()));
        }
    }
    let delta_cap = alpha / (cast::<S>(4.0) * cast::<S>((n + 1) as f64));
    if !(delta > S::zero() && delta < delta_cap) {
        return Err(Error::InvalidSpec(format!(
            "delta {} outside (0, {})",
            to_f64(delta),
            to_f64(delta_cap)
        )));
    }
    let r_max = *radii.last().expect("non-empty");

    // Anchor must nearly vanish relative to the local Lipschitz scale.
    let quad = BallQuadrature::on_grid(u.grid(), x0, r_max)?;
    let mut lip = S::zero();
    for &(ijk, _) in &quad.nodes {
        lip = lip.max(linalg::norm(u.nodal_gradient(ijk)));
    }
    let anchor_val = u.interpolate(x0)?.abs();
    if anchor_val > cast::<S>(2.0) * h * lip.max(cast(1e-12)) {
        return Err(Error::PreconditionFailed(format!(
            "anchor value {} exceeds the near-zero tolerance {}",
            to_f64(anchor_val),
            to_f64(cast::<S>(2.0) * h * lip)
        )));
    }

    let mut rows = Vec::with_capacity(radii.len());
    for &r in radii {
        let (phi_plus, phi_minus, phi) = acf_phi(u, x0, r)?;
        rows.push(AcfRow { r, phi_plus, phi_minus, phi });
    }

    let mut fitted = S::zero();
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            let (small, large) = (&rows[i], &rows[j]);
            let excess = small.phi - large.phi;
            if excess > S::zero() {
                fitted = fitted.max(excess / large.r.powf(delta));
            }
        }
    }

    // Comparison magnitude of the monotonicity constant.
    let proxy_radius = {
        let room = u.grid().boundary_distance(x0) - cast::<S>(2.0) * h;
        (cast::<S>(2.0) * r_max).min(room)
    };
    let mean_grad = {
        let quad = BallQuadrature::on_grid(u.grid(), x0, proxy_radius)?;
        quad.integrate(|ijk| {
            let g = u.nodal_gradient(ijk);
            linalg::dot(g, g)
        }) / quad.volume
    };
    let log_term = proxy_radius.ln().max(S::zero());
    let proxy_constant = S::one() + mean_grad * mean_grad + log_term.powi(4);

    let kernel_normalization = if n == 3 {
        Some(S::one() / (cast::<S>((n * (n - 2)) as f64) * unit_ball_volume::<S>(n)))
    } else {
        None
    };
    Ok(AcfSweep {
        anchor: x0,
        delta,
        rows,
        fitted_constant: fitted,
        proxy_constant,
        proxy_radius,
        kernel_normalization,
        kernel_convention: if n == 3 { "fundamental_solution" } else { "unit_kernel_n2" },
    })
}

// ---------------------------------------------------------------------------
// Moduli of continuity.
// ---------------------------------------------------------------------------

fn pair_directions<S: Scalar>(n: usize) -> Vec<Point<S>> {
    let mut dirs = Vec::new();
    if n == 2 {
        for i in 0..8 {
            let theta = std::f64::consts::PI * i as f64 / 8.0;
            dirs.push([cast(theta.cos()), cast(theta.sin()), S::zero()]);
        }
    } else {
        dirs.push([S::one(), S::zero(), S::zero()]);
        dirs.push([S::zero(), S::one(), S::zero()]);
        dirs.push([S::zero(), S::zero(), S::one()]);
        let rule = SphereRule::with_count(3, 18);
        dirs.extend(rule.directions().iter().take(9).cloned());
    }
    dirs
}

/// Stratified pair sampler: dyadic separations from just under `2 r0` down
/// to `4h`, a fixed direction set, and low-discrepancy midpoints; calls
/// `visit(x, y, separation)` for each pair.
fn stratified_pairs<S: Scalar>(
    grid: &Grid<S>,
    x0: Point<S>,
    r0: S,
    pair_count: usize,
    mut visit: impl FnMut(Point<S>, Point<S>, S) -> Result<()>,
) -> Result<()> {
    let n = grid.dim();
    let h = grid.spacing();
    let dirs = pair_directions::<S>(n);
    let mut seps = Vec::new();
    let mut sep = cast::<S>(2.0 * 0.999) * r0;
    while sep >= cast::<S>(4.0) * h {
        seps.push(sep);
        sep = sep * cast::<S>(0.5);
    }
    if seps.is_empty() {
        return Err(Error::PreconditionFailed("ball under-resolved for pair sampling".into()));
    }
    let per_bin = (pair_count / (seps.len() * dirs.len())).max(1);
    let mut halton = Halton::new(1);
    for &sep in &seps {
        let half = sep * cast::<S>(0.5);
        let max_mid = r0 - half;
        for &dir in &dirs {
            for _ in 0..per_bin {
                let unit = halton.next_point::<S>(n);
                // Midpoint in the admissible ball around x0.
                let mut mid = x0;
                if max_mid > S::zero() {
                    let mut offs = [S::zero(); 3];
                    let mut norm2 = S::zero();
                    for d in 0..n {
                        offs[d] = cast::<S>(2.0) * unit[d] - S::one();
                        norm2 = norm2 + offs[d] * offs[d];
                    }
                    let norm = norm2.sqrt();
                    if norm > S::zero() {
                        let radial = unit[0] * max_mid;
                        mid = linalg::add(x0, linalg::scale(offs, radial / norm));
                    }
                }
                let x = linalg::add(mid, linalg::scale(dir, half));
                let y = linalg::sub(mid, linalg::scale(dir, half));
                visit(x, y, sep)?;
            }
        }
    }
    Ok(())
}

/// Largest ratio `|u(x) - u(y)| / (|x - y| (1 + log(2 r0 / |x - y|)))` over
/// stratified pairs in `B(x0, r0)`.
pub fn continuity_modulus<S: Scalar>(
    u: &ScalarField<S>,
    x0: Point<S>,
    r0: S,
    pair_count: usize,
) -> Result<S> {
    let grid = u.grid();
    if grid.boundary_distance(x0) < cast::<S>(2.0) * r0 {
        return Err(grid.out_of_domain_error(x0, "modulus ball B(x0, 2 r0) exits the domain"));
    }
    let mut worst = S::zero();
    stratified_pairs(grid, x0, r0, pair_count, |x, y, sep| {
        let du = (u.interpolate(x)? - u.interpolate(y)?).abs();
        let denom = sep * (S::one() + (cast::<S>(2.0) * r0 / sep).ln());
        worst = worst.max(du / denom);
        Ok(())
    })?;
    Ok(worst)
}

/// Measured Lipschitz constant with its companion bound value.
#[derive(Clone, Copy, Debug)]
pub struct LipschitzReport<S> {
    /// Max pairwise slope over stratified pairs in `B(x0, r0)`.
    pub lipschitz: S,
    /// `omega(u_{x0}, x0, 2 r0) + 1`, the quantity the theory compares
    /// against.
    pub companion: S,
}

pub fn lipschitz_constant<S: Scalar>(
    u: &ScalarField<S>,
    x0: Point<S>,
    r0: S,
    frame: Option<&AffineFrame<S>>,
) -> Result<LipschitzReport<S>> {
    let grid = u.grid();
    if grid.boundary_distance(x0) < cast::<S>(2.0) * r0 {
        return Err(grid.out_of_domain_error(x0, "Lipschitz ball B(x0, 2 r0) exits the domain"));
    }
    let mut worst = S::zero();
    stratified_pairs(grid, x0, r0, 4096, |x, y, sep| {
        let du = (u.interpolate(x)? - u.interpolate(y)?).abs();
        worst = worst.max(du / sep);
        Ok(())
    })?;
    let two_r0 = cast::<S>(2.0) * r0;
    // Shrink marginally so the doubled pullback ball stays interpolable.
    let companion_radius = two_r0 - cast::<S>(2.0) * grid.spacing();
    let w = omega(u, x0, companion_radius, frame)?;
    Ok(LipschitzReport { lipschitz: worst, companion: w + S::one() })
}

/// Fit of the gradient's Hoelder modulus away from the zero set.
#[derive(Clone, Debug)]
pub struct HolderReport<S> {
    pub target_beta: S,
    pub fitted_exponent: S,
    pub seminorm: S,
    pub pass: bool,
    /// Set when the gradient differences are at rounding level and the fit
    /// is vacuous.
    pub trivial: bool,
}

/// Log-log regression of pairwise gradient differences over a ball region
/// with zero-set clearance `|u| >= 4h Lip`.
pub fn gradient_holder<S: Scalar>(
    u: &ScalarField<S>,
    region_center: Point<S>,
    region_radius: S,
    alpha: S,
    pair_count: usize,
) -> Result<HolderReport<S>> {
    let grid = u.grid();
    let n = grid.dim();
    let h = grid.spacing();
    let quad = BallQuadrature::on_grid(grid, region_center, region_radius)?;
    let mut lip = S::zero();
    for &(ijk, _) in &quad.nodes {
        lip = lip.max(linalg::norm(u.nodal_gradient(ijk)));
    }
    let clearance = cast::<S>(4.0) * h * lip;
    for &(ijk, _) in &quad.nodes {
        if u.value(ijk).abs() < clearance {
            return Err(Error::PreconditionFailed(
                "region touches the zero set (|u| under 4 h Lip)".into(),
            ));
        }
    }

    let target_beta = alpha / (cast::<S>((n + 2) as f64) + alpha);
    let mut logs: Vec<(S, S)> = Vec::new();
    let mut seminorm = S::zero();
    let scale_floor = cast::<S>(1e-12) * lip.max(S::one());
    stratified_pairs(grid, region_center, region_radius, pair_count, |x, y, sep| {
        let gx = u.gradient(x)?;
        let gy = u.gradient(y)?;
        let dg = linalg::dist(gx, gy);
        seminorm = seminorm.max(dg / sep.powf(target_beta));
        if dg > scale_floor {
            logs.push((sep.ln(), dg.ln()));
        }
        Ok(())
    })?;

    if logs.len() < 8 {
        // Gradient differences at rounding level: constant-gradient fields.
        return Ok(HolderReport {
            target_beta,
            fitted_exponent: S::one(),
            seminorm: S::zero(),
            pass: true,
            trivial: true,
        });
    }
    // Least-squares slope of log |dg| against log |dx|.
    let m = cast::<S>(logs.len() as f64);
    let mut sx = S::zero();
    let mut sy = S::zero();
    for &(lx, ly) in &logs {
        sx = sx + lx;
        sy = sy + ly;
    }
    let mx = sx / m;
    let my = sy / m;
    let mut sxx = S::zero();
    let mut sxy = S::zero();
    for &(lx, ly) in &logs {
        sxx = sxx + (lx - mx) * (lx - mx);
        sxy = sxy + (lx - mx) * (ly - my);
    }
    let fitted = if sxx > S::zero() { sxy / sxx } else { S::zero() };
    let fitted = fitted.max(S::zero()).min(S::one());
    let pass = fitted >= target_beta - cast::<S>(0.05);
    Ok(HolderReport { target_beta, fitted_exponent: fitted, seminorm, pass, trivial: false })
}

// ---------------------------------------------------------------------------
// The inner-variation inequality.
// ---------------------------------------------------------------------------

/// A perturbation of the candidate along its own phase: `phi >= 0`
/// supported in the probe ball, an amplitude with `sup |amplitude phi| < 1`
/// and the phase sign it acts on.
#[derive(Clone, Debug)]
pub struct PerturbationSpec<S> {
    pub phi: ScalarField<S>,
    pub amplitude: S,
    pub sign: PhaseSign,
}

/// The raw almost-minimality gap `J(v) + kappa_hat r^{n+alpha} - J(u)` for
/// the scaling competitor built from a perturbation; expected non-negative
/// up to quadrature tolerance on certified candidates.
pub fn perturbation_inequality<S: Scalar>(
    u: &ScalarField<S>,
    a: &CoefficientField<S>,
    q: &PhaseWeights<S>,
    probe: &ProbeBall<S>,
    spec: &PerturbationSpec<S>,
    certificate: &MinimalityCertificate<S>,
) -> Result<S> {
    // Support must stay inside the probe ball.
    let x = probe.center();
    let r = probe.radius();
    for ijk in spec.phi.grid().iter_nodes() {
        let v = spec.phi.value(ijk);
        if v != S::zero() {
            let p = spec.phi.grid().node_point(ijk);
            if linalg::dist(p, x) >= r {
                return Err(Error::ConstraintViolation(
                    "perturbation support leaves the probe ball".into(),
                ));
            }
        }
    }
    let v = scaling_competitor(u, &spec.phi, spec.amplitude, spec.sign)?;
    let rep = minimality_gap(u, &v, a, q, x, r, certificate.kappa_hat, certificate.alpha)?;
    Ok(rep.additive_gap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::point2;

    fn grid2(half: f64, h: f64) -> Grid<f64> {
        let cells = (2.0 * half / h).round() as usize;
        Grid::new(2, point2(-half, -half), h, [cells + 1, cells + 1, 1]).unwrap()
    }

    #[test]
    fn omega_of_linear_constant_and_product_fields() {
        let h = 1.0 / 64.0;
        let g = grid2(1.0, h);
        let lin = ScalarField::from_fn(g.clone(), |p| p[0]).unwrap();
        for (x, s) in [(point2(0.0, 0.0), 0.4), (point2(0.2, -0.1), 0.25)] {
            let w = omega(&lin, x, s, None).unwrap();
            assert!((w - 1.0).abs() <= 1e-12, "omega of x1 is {w}");
        }
        let c = ScalarField::constant(g.clone(), 3.0).unwrap();
        assert_eq!(omega(&c, point2(0.0, 0.0), 0.4, None).unwrap(), 0.0);

        // omega(x1 x2, 0, s) = s / sqrt(2).
        let prod = ScalarField::from_fn(g, |p| p[0] * p[1]).unwrap();
        for s in [0.2, 0.4] {
            let w = omega(&prod, point2(0.0, 0.0), s, None).unwrap();
            let expect = s / 2.0f64.sqrt();
            assert!((w - expect).abs() <= 0.01 * expect, "got {w}, expected {expect}");
        }
    }

    #[test]
    fn omega_scaling_linearity() {
        let h = 1.0 / 64.0;
        let g = grid2(1.0, h);
        let u = ScalarField::from_fn(g, |p| (2.0 * p[0]).sin() + p[1]).unwrap();
        let w1 = omega(&u, point2(0.0, 0.0), 0.3, None).unwrap();
        let u3 = u.map(|v| -3.0 * v).unwrap();
        let w3 = omega(&u3, point2(0.0, 0.0), 0.3, None).unwrap();
        assert!((w3 - 3.0 * w1).abs() <= 1e-12 * w3.abs());
    }

    #[test]
    fn boundary_means_examples() {
        let h = 1.0 / 64.0;
        let g = grid2(1.0, h);
        let a = CoefficientField::identity(g.clone()).unwrap();
        let r = 0.3;

        let c = ScalarField::constant(g.clone(), 5.0).unwrap();
        let probe = ProbeBall::new(&a, point2(0.0, 0.0), r).unwrap();
        let (b, bp) = boundary_means(&c, &probe).unwrap();
        assert!((b - 5.0).abs() < 1e-12 && (bp - 5.0).abs() < 1e-12);

        let lin = ScalarField::from_fn(g.clone(), |p| p[0]).unwrap();
        let (b, bp) = boundary_means(&lin, &probe).unwrap();
        assert!(b.abs() < 1e-12);
        let expect = 2.0 * r / std::f64::consts::PI;
        assert!((bp - expect).abs() <= 0.005 * expect, "b+ {bp} vs {expect}");

        // One-phase profile: b = b+ = r / pi.
        let plus = ScalarField::from_fn(g, |p| p[0].max(0.0)).unwrap();
        let (b, bp) = boundary_means(&plus, &probe).unwrap();
        let expect = r / std::f64::consts::PI;
        assert!((b - expect).abs() <= 0.005 * expect, "b {b} vs {expect}");
        assert!((bp - expect).abs() <= 0.005 * expect);
        assert!(bp >= b.abs());
    }

    #[test]
    fn g_class_examples() {
        let h = 1.0 / 64.0;
        let g = grid2(1.0, h);
        let a = CoefficientField::identity(g.clone()).unwrap();
        let alpha = 0.5;

        // b = 0 forces failure of the dominance condition.
        let lin = ScalarField::from_fn(g.clone(), |p| p[0]).unwrap();
        let probe = ProbeBall::new(&a, point2(0.0, 0.0), 0.1).unwrap();
        let params = GClassParams::new(0.005, 1.0, 3.0, 0.5).unwrap();
        let res = g_class_membership(&lin, &probe, &params, alpha).unwrap();
        assert!(!res.is_member());
        assert!(res.margins().unwrap()[1] < 0.0);

        // Constant 5 at a tiny radius: 4e4 <= 5e5 and b+ = |b|.
        let c = ScalarField::constant(g.clone(), 5.0).unwrap();
        let probe = ProbeBall::new(&a, point2(0.0, 0.0), 1e-5).unwrap();
        let res = g_class_membership(&c, &probe, &params, alpha).unwrap();
        assert!(res.is_member(), "margins {:?}", res.margins());

        // Shifted linear field at r = 0.1, tau = 0.01: 1e4-ish lhs
        // against |b|/r = 100.
        let shifted = ScalarField::from_fn(g, |p| p[0] + 10.0).unwrap();
        let params2 = GClassParams::new(0.009999, 1.0, 3.0, 0.5).unwrap();
        let probe = ProbeBall::new(&a, point2(0.0, 0.0), 0.1).unwrap();
        let res = g_class_membership(&shifted, &probe, &params2, alpha).unwrap();
        assert!(!res.is_member());

        // Radius beyond r0 is not applicable rather than false.
        let params3 = GClassParams::new(0.005, 1.0, 3.0, 0.05).unwrap();
        let res = g_class_membership(&c, &probe, &params3, alpha).unwrap();
        assert!(matches!(res, GClassResult::NotApplicable { .. }));
    }

    #[test]
    fn probe_row_assembles_consistent_records() {
        let h = 1.0 / 64.0;
        let g = grid2(1.0, h);
        let a = CoefficientField::from_fn(g.clone(), 0.25, 4.0, 1.0, 0.0, |_| {
            [[4.0, 0.0, 0.0], [0.0, 0.25, 0.0], [0.0; 3]]
        })
        .unwrap();
        let u = ScalarField::from_fn(g, |p| p[0] + 0.1).unwrap();
        let params = GClassParams::new(0.005, 1.0, 3.0, 0.5).unwrap();
        // k = lambda^{1/2} Lambda^{-1/2} / 6 from the ellipticity bounds.
        assert!((params.k(&a) - 0.5 / 2.0 / 6.0).abs() <= 1e-12);
        let probe = ProbeBall::new(&a, point2(0.0, 0.0), 0.05).unwrap();
        let row = probe_row(&u, &probe, &params, 1.0).unwrap();
        assert!(row.b_plus >= row.b.abs());
        assert!(row.omega >= 0.0);
        assert_eq!(row.radius, 0.05);
    }

    #[test]
    fn g_class_monotone_in_c0() {
        let h = 1.0 / 64.0;
        let g = grid2(1.0, h);
        let a = CoefficientField::identity(g.clone()).unwrap();
        let u = ScalarField::from_fn(g, |p| p[0] + 2.0).unwrap();
        let probe = ProbeBall::new(&a, point2(0.0, 0.0), 0.02).unwrap();
        let mut last_member = true;
        for c0 in [1.0, 10.0, 100.0, 1000.0] {
            let params = GClassParams::new(0.005, c0, 3.0, 0.5).unwrap();
            let member = g_class_membership(&u, &probe, &params, 0.5).unwrap().is_member();
            assert!(member <= last_member, "membership must not improve as C0 grows");
            last_member = member;
        }
    }

    #[test]
    fn sign_locality_on_positive_field() {
        let h = 1.0 / 64.0;
        let g = grid2(1.0, h);
        let a = CoefficientField::identity(g.clone()).unwrap();
        let u = ScalarField::from_fn(g.clone(), |p| p[0] + 5.0).unwrap();
        let probe = ProbeBall::new(&a, point2(0.0, 0.0), 1e-4).unwrap();
        let params = GClassParams::new(0.005, 1.0, 3.0, 0.5).unwrap();
        match sign_locality(&u, &probe, &params, 0.5).unwrap() {
            SignLocality::Measured { wrong_fraction, interior_wrong_nodes, .. } => {
                assert_eq!(wrong_fraction, 0.0);
                assert_eq!(interior_wrong_nodes, 0);
            }
            SignLocality::NotApplicable { reason } => panic!("unexpected: {reason}"),
        }

        // b = 0 premise failure.
        let probe2 = ProbeBall::new(&a, point2(0.0, 0.0), 0.01).unwrap();
        let lin = ScalarField::from_fn(g, |p| p[0]).unwrap();
        let res = sign_locality(&lin, &probe2, &params, 0.5).unwrap();
        assert!(matches!(res, SignLocality::NotApplicable { .. }));
    }

    #[test]
    fn best_membership_margin_scans_radii() {
        let h = 1.0 / 64.0;
        let g = grid2(1.0, h);
        let a = CoefficientField::identity(g.clone()).unwrap();
        let u = ScalarField::from_fn(g, |p| p[0] + 5.0).unwrap();
        let params = GClassParams::new(0.005, 1.0, 3.0, 0.5).unwrap();
        let (best_r, margin) =
            best_membership_margin(&u, &a, point2(0.0, 0.0), 5e-5, 5e-4, &params, 0.5, 8).unwrap();
        // Small radii dominate: the best margin is found towards r_lo and
        // membership holds there (|b| / r beats the tau^{-n} term).
        assert!(margin > 0.0, "margin {margin}");
        assert!(best_r <= 2e-4, "best radius {best_r}");
    }

    #[test]
    fn log_growth_of_linear_field() {
        let h = 1.0 / 64.0;
        let g = grid2(1.0, h);
        let u = ScalarField::from_fn(g, |p| p[0]).unwrap();
        let sweep = omega_log_growth(&u, point2(0.0, 0.0), 0.4, 3, None).unwrap();
        assert!(sweep.rows.len() >= 3);
        for row in &sweep.rows {
            assert!((row.omega - 1.0).abs() <= 1e-10);
            assert!(row.bound_margin >= -1e-12);
        }
        assert!(sweep.fitted_c <= 1.0 + 1e-10, "fitted {}", sweep.fitted_c);
    }

    #[test]
    fn decay_ratio_harmonic_oracle() {
        // omega(x1 x2, 0, s) = s / sqrt(2), so the ratio equals theta.
        let h = 1.0 / 128.0;
        let g = grid2(1.0, h);
        let u = ScalarField::from_fn(g.clone(), |p| p[0] * p[1]).unwrap();
        let theta = 0.4;
        let rep = omega_decay_ratio(&u, point2(0.0, 0.0), 0.5, theta, None).unwrap();
        assert!(!rep.flagged_zero_denominator);
        assert!((rep.ratio - theta).abs() <= 0.02 * theta, "ratio {}", rep.ratio);

        let lin = ScalarField::from_fn(g.clone(), |p| p[0]).unwrap();
        let rep = omega_decay_ratio(&lin, point2(0.0, 0.0), 0.5, theta, None).unwrap();
        assert!((rep.ratio - 1.0).abs() <= 1e-10);

        let c = ScalarField::constant(g, 2.0).unwrap();
        let rep = omega_decay_ratio(&c, point2(0.0, 0.0), 0.5, theta, None).unwrap();
        assert!(rep.flagged_zero_denominator);
        assert_eq!(rep.ratio, 0.0);
    }

    #[test]
    fn acf_phi_linear_field_2d() {
        // u = x1: Phi = (pi r^2 / 2)^2 / r^4 = pi^2 / 4 under the 2D
        // convention kernel.
        let h = 1.0 / 128.0;
        let g = grid2(1.0, h);
        let u = ScalarField::from_fn(g, |p| p[0]).unwrap();
        let expect = std::f64::consts::PI.powi(2) / 4.0;
        for r in [0.2, 0.3] {
            let (_, _, phi) = acf_phi(&u, point2(0.0, 0.0), r).unwrap();
            assert!((phi - expect).abs() <= 0.02 * expect, "phi {phi} vs {expect}");
        }
        // One-signed fields have vanishing product.
        let pos = ScalarField::from_fn(grid2(1.0, h), |p| p[0].max(0.0)).unwrap();
        let (_, pm, phi) = acf_phi(&pos, point2(0.0, 0.0), 0.2).unwrap();
        assert_eq!(pm, 0.0);
        assert_eq!(phi, 0.0);
    }

    #[test]
    fn acf_phi_scaling_quartic() {
        let h = 1.0 / 64.0;
        let g = grid2(1.0, h);
        let u = ScalarField::from_fn(g, |p| p[0] + 0.3 * p[0] * p[1]).unwrap();
        let (pp, pm, phi) = acf_phi(&u, point2(0.0, 0.0), 0.3).unwrap();
        let u2 = u.map(|v| 2.0 * v).unwrap();
        let (pp2, pm2, phi2) = acf_phi(&u2, point2(0.0, 0.0), 0.3).unwrap();
        assert!((pp2 - 4.0 * pp).abs() <= 1e-10 * pp2.abs());
        assert!((pm2 - 4.0 * pm).abs() <= 1e-10 * pm2.max(1e-300));
        assert!((phi2 - 16.0 * phi).abs() <= 1e-9 * phi2.abs());
    }

    #[test]
    fn acf_sweep_linear_field_constant_phi() {
        let h = 1.0 / 128.0;
        let g = grid2(1.0, h);
        let u = ScalarField::from_fn(g, |p| p[0]).unwrap();
        let radii = [0.1, 0.15, 0.2, 0.25, 0.3];
        let sweep = acf_sweep(&u, point2(0.0, 0.0), &radii, 0.01, 0.5).unwrap();
        let expect = std::f64::consts::PI.powi(2) / 4.0;
        for row in &sweep.rows {
            assert!((row.phi - expect).abs() <= 0.02 * expect);
        }
        assert!(sweep.fitted_constant <= 0.05, "fitted {}", sweep.fitted_constant);
        assert!(sweep.kernel_normalization.is_none());
        assert_eq!(sweep.kernel_convention, "unit_kernel_n2");

        // Anchor away from the zero set is rejected.
        let shifted = ScalarField::from_fn(grid2(1.0, h), |p| p[0] + 1.0).unwrap();
        assert!(matches!(
            acf_sweep(&shifted, point2(0.0, 0.0), &radii, 0.01, 0.5),
            Err(Error::PreconditionFailed(_))
        ));
    }

    #[test]
    fn continuity_modulus_examples() {
        let h = 1.0 / 128.0;
        let g = grid2(1.5, h);
        let c = ScalarField::constant(g.clone(), 2.0).unwrap();
        let m = continuity_modulus(&c, point2(0.0, 0.0), 0.5, 512).unwrap();
        assert!(m <= 1e-12, "constant modulus {m}");

        let lin = ScalarField::from_fn(g.clone(), |p| p[0]).unwrap();
        let m = continuity_modulus(&lin, point2(0.0, 0.0), 0.5, 2048).unwrap();
        assert!((m - 1.0).abs() <= 0.02, "modulus {m}");

        // L-Lipschitz bound forced by the denominator.
        let lip = ScalarField::from_fn(g, |p| 2.0 * p[0].max(0.0)).unwrap();
        let m = continuity_modulus(&lip, point2(0.0, 0.0), 0.5, 1024).unwrap();
        assert!(m <= 2.0 + 1e-9);
    }

    #[test]
    fn lipschitz_constant_examples() {
        let h = 1.0 / 128.0;
        let g = grid2(1.5, h);
        let three = ScalarField::from_fn(g.clone(), |p| 3.0 * p[0]).unwrap();
        let rep = lipschitz_constant(&three, point2(0.0, 0.0), 0.5, None).unwrap();
        assert!((rep.lipschitz - 3.0).abs() <= 1e-9, "lip {}", rep.lipschitz);
        assert!((rep.companion - 4.0).abs() <= 1e-6, "companion {}", rep.companion);

        let kink = ScalarField::from_fn(g, |p| p[0].max(0.0)).unwrap();
        let rep = lipschitz_constant(&kink, point2(0.0, 0.0), 0.5, None).unwrap();
        assert!((rep.lipschitz - 1.0).abs() <= 1e-9, "lip {}", rep.lipschitz);
        // Modulus never exceeds the Lipschitz slope.
        let m = continuity_modulus(
            &ScalarField::from_fn(grid2(1.5, h), |p| p[0].max(0.0)).unwrap(),
            point2(0.0, 0.0),
            0.5,
            1024,
        )
        .unwrap();
        assert!(m <= rep.lipschitz + 1e-12);
    }

    #[test]
    fn gradient_holder_examples() {
        let h = 1.0 / 64.0;
        let g = grid2(1.0, h);
        // Constant gradient: trivially passing report.
        let lin = ScalarField::from_fn(g.clone(), |p| p[0] + 3.0).unwrap();
        let rep = gradient_holder(&lin, point2(0.0, 0.0), 0.3, 0.5, 1024).unwrap();
        assert!(rep.trivial && rep.pass);
        assert_eq!(rep.seminorm, 0.0);

        // Smooth quadratic away from its zero set: exponent close to 1.
        let quad = ScalarField::from_fn(g.clone(), |p| 3.0 + p[0] * p[0] + 0.5 * p[1] * p[1]).unwrap();
        let rep = gradient_holder(&quad, point2(0.0, 0.0), 0.3, 0.5, 2048).unwrap();
        assert!(!rep.trivial);
        assert!(rep.fitted_exponent >= 0.95, "exponent {}", rep.fitted_exponent);
        assert!(rep.pass);

        // Region touching the zero set is rejected.
        let through_zero = ScalarField::from_fn(g, |p| p[0]).unwrap();
        assert!(matches!(
            gradient_holder(&through_zero, point2(0.0, 0.0), 0.3, 0.5, 512),
            Err(Error::PreconditionFailed(_))
        ));
    }

    #[test]
    fn perturbation_inequality_trivial_cases() {
        let h = 1.0 / 64.0;
        let g = grid2(1.0, h);
        let a = CoefficientField::identity(g.clone()).unwrap();
        let q = PhaseWeights::constant(g.clone(), 1.0, 0.0).unwrap();
        let u = ScalarField::from_fn(g.clone(), |p| p[0].max(0.0)).unwrap();
        let probe = ProbeBall::new(&a, point2(0.2, 0.0), 0.2).unwrap();
        let phi = ScalarField::from_fn(g.clone(), |p| {
            let d2 = (p[0] - 0.2).powi(2) + p[1].powi(2);
            let r2: f64 = 0.01;
            if d2 < r2 { (1.0 - d2 / r2).powi(2) } else { 0.0 }
        })
        .unwrap();
        let cert = MinimalityCertificate {
            kappa_hat: 0.3,
            alpha: 0.5,
            probes: Vec::new(),
            skipped: Vec::new(),
        };
        // amplitude 0: gap is exactly the penalty.
        let spec = PerturbationSpec { phi: phi.clone(), amplitude: 0.0, sign: PhaseSign::Plus };
        let gap = perturbation_inequality(&u, &a, &q, &probe, &spec, &cert).unwrap();
        let expect = 0.3 * 0.2f64.powf(2.5);
        assert!((gap - expect).abs() <= 1e-12);

        // zero test function: same.
        let zero = ScalarField::constant(g, 0.0).unwrap();
        let spec = PerturbationSpec { phi: zero, amplitude: 0.7, sign: PhaseSign::Plus };
        let gap = perturbation_inequality(&u, &a, &q, &probe, &spec, &cert).unwrap();
        assert!((gap - expect).abs() <= 1e-12);

        // support violation
        let wide = ScalarField::constant(grid2(1.0, h), 0.5).unwrap();
        let spec = PerturbationSpec { phi: wide, amplitude: 0.5, sign: PhaseSign::Plus };
        assert!(matches!(
            perturbation_inequality(&u, &a, &q, &probe, &spec, &cert),
            Err(Error::ConstraintViolation(_))
        ));
    }
}
