//! The Bernoulli-type energies on balls and ellipsoids, and minimality gaps
//! against competitor fields.

use crate::error::{Error, Result};
use crate::field::{CoefficientField, PhaseWeights, ScalarField};
use crate::frames::Ellipsoid;
use crate::linalg::{self, Point};
use crate::num::{CompensatedSum, Scalar, cast, to_f64};
use crate::quad::{BallQuadrature, ball_integral_fn};

/// The three summands of the local energy: Dirichlet part
/// `∫ <A∇v, ∇v>`, positive phase `∫ q₊² χ{v>0}` and negative phase
/// `∫ q₋² χ{v<0}`.
#[derive(Clone, Copy, Debug)]
pub struct LocalEnergyBreakdown<S> {
    pub dirichlet_part: S,
    pub plus_phase_part: S,
    pub minus_phase_part: S,
    pub total: S,
}

impl<S: Scalar> LocalEnergyBreakdown<S> {
    fn assemble(dirichlet: S, plus: S, minus: S) -> Self {
        Self {
            dirichlet_part: dirichlet,
            plus_phase_part: plus,
            minus_phase_part: minus,
            total: dirichlet + plus + minus,
        }
    }
}

/// Integration region for the pure Dirichlet energy.
pub enum Region<'a, S> {
    Ball { center: Point<S>, radius: S },
    Ellipsoid(&'a Ellipsoid<S>),
}

/// `∫ |∇v|²` over a ball or ellipsoid strictly inside the domain.
pub fn dirichlet_energy<S: Scalar>(v: &ScalarField<S>, region: Region<'_, S>) -> Result<S> {
    match region {
        Region::Ball { center, radius } => {
            let quad = BallQuadrature::on_grid(v.grid(), center, radius)?;
            Ok(quad.integrate(|ijk| {
                let g = v.nodal_gradient(ijk);
                linalg::dot(g, g)
            }))
        }
        Region::Ellipsoid(e) => {
            let frame = e.frame();
            let spacing = v.grid().spacing() * cast::<S>(0.5);
            let det = frame.det_factor();
            let val = ball_integral_fn(frame.dim(), frame.anchor(), e.radius(), spacing, |y| {
                let g = v.gradient(frame.map_inverse(y))?;
                Ok(linalg::dot(g, g))
            })?;
            Ok(det * val)
        }
    }
}

fn breakdown_on_ball<S: Scalar>(
    v: &ScalarField<S>,
    a: &CoefficientField<S>,
    q: &PhaseWeights<S>,
    center: Point<S>,
    radius: S,
    plus_only: bool,
) -> Result<LocalEnergyBreakdown<S>> {
    let quad = BallQuadrature::on_grid(v.grid(), center, radius)?;
    if plus_only {
        for &(ijk, _) in &quad.nodes {
            if v.value(ijk) < S::zero() {
                return Err(Error::PhaseViolation(
                    "one-phase energy requested for a sign-changing field".into(),
                ));
            }
        }
    }
    let mut dir = CompensatedSum::new();
    let mut plus = CompensatedSum::new();
    let mut minus = CompensatedSum::new();
    for &(ijk, w) in &quad.nodes {
        let p = v.grid().node_point(ijk);
        let g = v.nodal_gradient(ijk);
        let am = a.value_at(p)?;
        dir.add(w * linalg::dot(linalg::mat_vec(&am, g), g));
        let val = v.value(ijk);
        if val > S::zero() {
            let qp = q.q_plus().interpolate(p)?;
            plus.add(w * qp * qp);
        } else if val < S::zero() {
            let qm = q.q_minus().interpolate(p)?;
            minus.add(w * qm * qm);
        }
    }
    Ok(LocalEnergyBreakdown::assemble(dir.value(), plus.value(), minus.value()))
}

/// `J` (or `J⁺` when `plus_only`) of `v` over `B(x, r)`, with the phase
/// indicators evaluated by strict sign tests at the quadrature nodes.
pub fn functional_on_ball<S: Scalar>(
    v: &ScalarField<S>,
    a: &CoefficientField<S>,
    q: &PhaseWeights<S>,
    x: Point<S>,
    r: S,
    plus_only: bool,
) -> Result<LocalEnergyBreakdown<S>> {
    breakdown_on_ball(v, a, q, x, r, plus_only)
}

/// `J` (or `J⁺`) of `v` over the ellipsoid `E(x, r)`.
///
/// Identity frames reduce to the ball case exactly; otherwise the integral
/// is transported to the straightened ball by the frame's change of
/// variables (Jacobian `det_factor`).
pub fn functional_on_ellipsoid<S: Scalar>(
    v: &ScalarField<S>,
    a: &CoefficientField<S>,
    q: &PhaseWeights<S>,
    e: &Ellipsoid<S>,
    plus_only: bool,
) -> Result<LocalEnergyBreakdown<S>> {
    let frame = e.frame();
    let n = frame.dim();
    let dev = linalg::frobenius(
        &linalg::mat_sub(frame.sqrt_matrix(), &linalg::identity::<S>(n)),
        n,
    );
    if dev <= cast::<S>(1e-13) {
        return functional_on_ellipsoid_direct(v, a, q, e, plus_only, true);
    }
    functional_on_ellipsoid_direct(v, a, q, e, plus_only, false)
}

fn functional_on_ellipsoid_direct<S: Scalar>(
    v: &ScalarField<S>,
    a: &CoefficientField<S>,
    q: &PhaseWeights<S>,
    e: &Ellipsoid<S>,
    plus_only: bool,
    identity_frame: bool,
) -> Result<LocalEnergyBreakdown<S>> {
    let frame = e.frame();
    if identity_frame {
        return breakdown_on_ball(v, a, q, frame.anchor(), e.radius(), plus_only);
    }
    let n = frame.dim();
    let spacing = v.grid().spacing() * a.lambda_min().sqrt() * cast::<S>(0.5);
    let det = frame.det_factor();
    let mut dir = CompensatedSum::new();
    let mut plus = CompensatedSum::new();
    let mut minus = CompensatedSum::new();
    let mut violation = false;
    ball_integral_fn(n, frame.anchor(), e.radius(), spacing, |y| {
        let z = frame.map_inverse(y);
        let g = v.gradient(z)?;
        let am = a.value_at(z)?;
        let val = v.interpolate(z)?;
        if plus_only && val < S::zero() {
            violation = true;
        }
        Ok(linalg::dot(linalg::mat_vec(&am, g), g))
    })
    .map(|value| dir.add(det * value))?;
    ball_integral_fn(n, frame.anchor(), e.radius(), spacing, |y| {
        let z = frame.map_inverse(y);
        let val = v.interpolate(z)?;
        if val > S::zero() {
            let qp = q.q_plus().interpolate(z)?;
            Ok(qp * qp)
        } else {
            Ok(S::zero())
        }
    })
    .map(|value| plus.add(det * value))?;
    ball_integral_fn(n, frame.anchor(), e.radius(), spacing, |y| {
        let z = frame.map_inverse(y);
        let val = v.interpolate(z)?;
        if val < S::zero() {
            let qm = q.q_minus().interpolate(z)?;
            Ok(qm * qm)
        } else {
            Ok(S::zero())
        }
    })
    .map(|value| minus.add(det * value))?;
    if violation {
        return Err(Error::PhaseViolation(
            "one-phase energy requested for a sign-changing field".into(),
        ));
    }
    Ok(LocalEnergyBreakdown::assemble(dir.value(), plus.value(), minus.value()))
}

/// Additive gap and multiplicative ratio of a competitor `v` against `u`
/// over `B(x, r)`.
#[derive(Clone, Copy, Debug)]
pub struct GapReport<S> {
    /// `J(v) + kappa r^{n+alpha} - J(u)`; non-negative when `u` is a
    /// `(kappa, alpha)`-almost minimizer against this competitor.
    pub additive_gap: S,
    /// `J(u) / J(v)`; `+inf` when `J(v) = 0 < J(u)`, `1` when both vanish.
    pub multiplicative_ratio: S,
    pub energy_u: S,
    pub energy_v: S,
}

/// Energy of a trace-matching candidate over the ball, with the gradients
/// at rim nodes taken from one-sided stencils that read the shared trace at
/// the sphere crossings. Solver outputs carry projected fill values outside
/// the ball, so plain central differences there would corrupt the
/// comparison by O(h) of the rim band.
fn trace_consistent_energy<S: Scalar>(
    f: &ScalarField<S>,
    trace_of: &ScalarField<S>,
    a: &CoefficientField<S>,
    q: &PhaseWeights<S>,
    x: Point<S>,
    r: S,
) -> Result<S> {
    let quad = BallQuadrature::on_grid(f.grid(), x, r)?;
    let h = f.grid().spacing();
    let interior = r - cast::<S>(1.01) * h;
    let sliver = r - cast::<S>(1e-3) * h;
    let mut total = CompensatedSum::new();
    for &(ijk, w) in &quad.nodes {
        let p = f.grid().node_point(ijk);
        let d = linalg::dist(p, x);
        if d >= sliver {
            continue;
        }
        let g = if d < interior {
            f.nodal_gradient(ijk)
        } else {
            crate::elliptic::sw_gradient_with_trace(f, ijk, x, r, &mut |z| {
                trace_of.interpolate(z)
            })?
        };
        let am = a.value_at(p)?;
        let mut integrand = linalg::dot(linalg::mat_vec(&am, g), g);
        let val = f.value(ijk);
        if val > S::zero() {
            let qp = q.q_plus().interpolate(p)?;
            integrand = integrand + qp * qp;
        } else if val < S::zero() {
            let qm = q.q_minus().interpolate(p)?;
            integrand = integrand + qm * qm;
        }
        total.add(w * integrand);
    }
    Ok(total.value())
}

/// Checks the boundary-trace match (sampled sup norm on the sphere, within
/// `10 h Lip(u)`) and evaluates the minimality gap of `v` against `u`.
pub fn minimality_gap<S: Scalar>(
    u: &ScalarField<S>,
    v: &ScalarField<S>,
    a: &CoefficientField<S>,
    q: &PhaseWeights<S>,
    x: Point<S>,
    r: S,
    kappa: S,
    alpha: S,
) -> Result<GapReport<S>> {
    let n = u.grid().dim();
    let h = u.grid().spacing();

    // Local Lipschitz estimate from the quadrature stencil of the ball.
    let quad = BallQuadrature::on_grid(u.grid(), x, r)?;
    let mut lip = S::zero();
    for &(ijk, _) in &quad.nodes {
        lip = lip.max(linalg::norm(u.nodal_gradient(ijk)));
    }
    let allowed = cast::<S>(10.0) * h * lip + cast::<S>(1e-12);
    let rule = crate::quad::SphereRule::standard(n);
    let mut max_dev = S::zero();
    for &d in rule.directions() {
        let p = linalg::add(x, linalg::scale(d, r));
        let dev = (u.interpolate(p)? - v.interpolate(p)?).abs();
        max_dev = max_dev.max(dev);
    }
    if max_dev > allowed {
        return Err(Error::InvalidCompetitor {
            max_deviation: to_f64(max_dev),
            allowed: to_f64(allowed),
        });
    }

    let ju = trace_consistent_energy(u, u, a, q, x, r)?;
    let jv = trace_consistent_energy(v, u, a, q, x, r)?;
    let penalty = kappa * r.powf(cast::<S>(n as f64) + alpha);
    // Grouped so that the gap of a candidate against itself is exactly the
    // penalty term.
    let additive_gap = (jv - ju) + penalty;
    let multiplicative_ratio = if jv <= S::zero() {
        if ju <= S::zero() { S::one() } else { S::infinity() }
    } else {
        ju / jv
    };
    Ok(GapReport { additive_gap, multiplicative_ratio, energy_u: ju, energy_v: jv })
}

/// Which phase a scaling competitor acts on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhaseSign {
    Plus,
    Minus,
}

/// The inner-variation competitor `v = (1 + lambda phi) u^{±}` on its phase,
/// unchanged elsewhere. Requires `phi >= 0` and `|lambda| sup phi < 1`, so
/// `v` and `u` share signs pointwise.
pub fn scaling_competitor<S: Scalar>(
    u: &ScalarField<S>,
    phi: &ScalarField<S>,
    lambda: S,
    sign: PhaseSign,
) -> Result<ScalarField<S>> {
    if u.grid() != phi.grid() {
        return Err(Error::InvalidSpec("test function must share the candidate's grid".into()));
    }
    let mut sup_phi = S::zero();
    for &p in phi.values() {
        if p < S::zero() {
            return Err(Error::ConstraintViolation("test function must be non-negative".into()));
        }
        sup_phi = sup_phi.max(p);
    }
    if !(lambda.abs() * sup_phi < S::one()) {
        return Err(Error::ConstraintViolation(format!(
            "|lambda| sup phi = {} must stay below 1",
            to_f64(lambda.abs() * sup_phi)
        )));
    }
    u.zip_map(phi, |uv, pv| {
        let on_phase = match sign {
            PhaseSign::Plus => uv > S::zero(),
            PhaseSign::Minus => uv < S::zero(),
        };
        if on_phase { (S::one() + lambda * pv) * uv } else { uv }
    })
}

/// A probe record of a competitor evaluation.
#[derive(Clone, Debug)]
pub struct ProbeGap {
    pub x: [f64; 3],
    pub r: f64,
    pub competitor: String,
    /// `J(v) - J(u)`; negative values mean the competitor beats `u`.
    pub gap: f64,
}

/// Measured almost-minimality data: the smallest constant `kappa_hat` such
/// that `J(u) <= J(v) + kappa_hat r^{n+alpha}` over every probed ball and
/// competitor.
#[derive(Clone, Debug)]
pub struct MinimalityCertificate<S> {
    pub kappa_hat: S,
    pub alpha: S,
    pub probes: Vec<ProbeGap>,
    /// Probes dropped because their ball left the domain.
    pub skipped: Vec<([f64; 3], f64, String)>,
}

impl<S: Scalar> MinimalityCertificate<S> {
    pub fn to_json(&self) -> serde_json::Value {
        let probes: Vec<serde_json::Value> = self
            .probes
            .iter()
            .map(|p| {
                serde_json::json!({
                    "x": p.x,
                    "r": p.r,
                    "competitor": p.competitor,
                    "gap": p.gap,
                })
            })
            .collect();
        let mut doc = serde_json::json!({
            "kappa_hat": to_f64(self.kappa_hat),
            "alpha": to_f64(self.alpha),
            "probes": probes,
        });
        if !self.skipped.is_empty() {
            doc["skipped"] = serde_json::Value::Array(
                self.skipped
                    .iter()
                    .map(|(x, r, reason)| serde_json::json!({"x": x, "r": r, "reason": reason}))
                    .collect(),
            );
        }
        doc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::{AffineFrame, pullback};
    use crate::grid::Grid;
    use crate::linalg::point2;

    fn grid2(half: f64, h: f64) -> Grid<f64> {
        let cells = (2.0 * half / h).round() as usize;
        Grid::new(2, point2(-half, -half), h, [cells + 1, cells + 1, 1]).unwrap()
    }

    #[test]
    fn dirichlet_energy_examples() {
        let h = 1.0 / 128.0;
        let g = grid2(1.2, h);
        let c = ScalarField::constant(g.clone(), 3.0).unwrap();
        assert_eq!(
            dirichlet_energy(&c, Region::Ball { center: point2(0.0, 0.0), radius: 1.0 }).unwrap(),
            0.0
        );

        // v = x1 on B(0,1): energy = area = pi.
        let vx = ScalarField::from_fn(g.clone(), |p| p[0]).unwrap();
        let e = dirichlet_energy(&vx, Region::Ball { center: point2(0.0, 0.0), radius: 1.0 }).unwrap();
        let pi = std::f64::consts::PI;
        assert!((e - pi).abs() < 0.01 * pi, "got {e}");

        // v = x1 x2 on B(0,1): energy = pi / 2.
        let vq = ScalarField::from_fn(g, |p| p[0] * p[1]).unwrap();
        let e = dirichlet_energy(&vq, Region::Ball { center: point2(0.0, 0.0), radius: 1.0 }).unwrap();
        assert!((e - pi / 2.0).abs() < 0.01 * pi / 2.0, "got {e}");
    }

    #[test]
    fn functional_on_ball_examples() {
        let h = 1.0 / 128.0;
        let g = grid2(1.2, h);
        let a = CoefficientField::identity(g.clone()).unwrap();
        let q = PhaseWeights::constant(g.clone(), 1.0, 1.0).unwrap();
        let pi = std::f64::consts::PI;

        let zero = ScalarField::constant(g.clone(), 0.0).unwrap();
        let b = functional_on_ball(&zero, &a, &q, point2(0.0, 0.0), 1.0, false).unwrap();
        assert_eq!(b.total, 0.0);

        // v = x1, q+ = q- = 1: pi Dirichlet + pi/2 + pi/2 phase.
        let vx = ScalarField::from_fn(g.clone(), |p| p[0]).unwrap();
        let b = functional_on_ball(&vx, &a, &q, point2(0.0, 0.0), 1.0, false).unwrap();
        assert!((b.total - 2.0 * pi).abs() < 0.01 * 2.0 * pi, "total {}", b.total);
        assert!((b.dirichlet_part - pi).abs() < 0.01 * pi);
        assert!((b.plus_phase_part - pi / 2.0).abs() < 0.015 * pi);
        assert!((b.minus_phase_part - pi / 2.0).abs() < 0.015 * pi);
        let parts = b.dirichlet_part + b.plus_phase_part + b.minus_phase_part;
        assert!((b.total - parts).abs() <= 1e-12 * b.total.abs());

        // One-phase half-plane profile: pi/2 Dirichlet + pi/2 phase.
        let qp = PhaseWeights::constant(g.clone(), 1.0, 0.0).unwrap();
        let vp = ScalarField::from_fn(g, |p| p[0].max(0.0)).unwrap();
        let b = functional_on_ball(&vp, &a, &qp, point2(0.0, 0.0), 1.0, true).unwrap();
        assert!((b.total - pi).abs() < 0.01 * pi, "total {}", b.total);

        // plus_only rejects sign-changing candidates.
        let err = functional_on_ball(&vx, &a, &qp, point2(0.0, 0.0), 1.0, true);
        assert!(matches!(err, Err(Error::PhaseViolation(_))));
    }

    #[test]
    fn phase_monotonicity_in_q_plus() {
        let g = grid2(1.0, 1.0 / 64.0);
        let a = CoefficientField::identity(g.clone()).unwrap();
        let v = ScalarField::from_fn(g.clone(), |p| p[0]).unwrap();
        let q1 = PhaseWeights::constant(g.clone(), 1.0, 0.5).unwrap();
        let q2 = PhaseWeights::constant(g, 1.5, 0.5).unwrap();
        let b1 = functional_on_ball(&v, &a, &q1, point2(0.0, 0.0), 0.5, false).unwrap();
        let b2 = functional_on_ball(&v, &a, &q2, point2(0.0, 0.0), 0.5, false).unwrap();
        assert!(b2.plus_phase_part >= b1.plus_phase_part);
        assert!((b2.minus_phase_part - b1.minus_phase_part).abs() <= 1e-12);
    }

    #[test]
    fn ellipsoid_functional_reduces_to_ball_for_identity() {
        let g = grid2(1.0, 1.0 / 64.0);
        let a = CoefficientField::identity(g.clone()).unwrap();
        let q = PhaseWeights::constant(g.clone(), 1.0, 1.0).unwrap();
        let v = ScalarField::from_fn(g.clone(), |p| p[0] + 0.3 * p[1]).unwrap();
        let frame = AffineFrame::identity(point2(0.1, -0.05), 2);
        let e = Ellipsoid::new(frame, 0.4).unwrap();
        let on_e = functional_on_ellipsoid(&v, &a, &q, &e, false).unwrap();
        let on_b = functional_on_ball(&v, &a, &q, point2(0.1, -0.05), 0.4, false).unwrap();
        assert_eq!(on_e.total, on_b.total);

        let zero = ScalarField::constant(g, 0.0).unwrap();
        let z = functional_on_ellipsoid(&zero, &a, &q, &e, false).unwrap();
        assert_eq!(z.total, 0.0);
    }

    #[test]
    fn affine_transport_oracle_diag_coefficients() {
        // J_E(v) computed directly vs det-factor-transported pullback value.
        let h = 1.0 / 128.0;
        let g = grid2(1.5, h);
        let a = CoefficientField::from_fn(g.clone(), 1.0, 4.0, 1.0, 0.0, |_| {
            [[4.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0; 3]]
        })
        .unwrap();
        let q = PhaseWeights::constant(g.clone(), 1.0, 1.0).unwrap();
        let v = ScalarField::from_fn(g, |p| p[0]).unwrap();
        let x = point2(0.0, 0.0);
        let r = 0.35;

        let frame = AffineFrame::at(&a, x).unwrap();
        let e = Ellipsoid::new(frame.clone(), r).unwrap();
        let direct = functional_on_ellipsoid(&v, &a, &q, &e, false).unwrap().total;

        let t = pullback(&v, &a, &q, x, r).unwrap();
        let qx = PhaseWeights::new(t.q_x_plus.clone(), t.q_x_minus.clone()).unwrap();
        let transported = frame.det_factor()
            * functional_on_ball(&t.u_x, &t.a_x, &qx, x, r, false).unwrap().total;
        let rel = (direct - transported).abs() / direct.abs();
        assert!(rel < 0.01, "transport mismatch: direct {direct}, transported {transported}");
    }

    #[test]
    fn minimality_gap_of_candidate_against_itself() {
        let g = grid2(1.0, 1.0 / 64.0);
        let a = CoefficientField::identity(g.clone()).unwrap();
        let q = PhaseWeights::constant(g.clone(), 1.0, 1.0).unwrap();
        let u = ScalarField::from_fn(g, |p| p[0].max(0.0)).unwrap();
        let x = point2(0.1, 0.0);
        let (r, kappa, alpha) = (0.3, 0.7, 0.5);
        let rep = minimality_gap(&u, &u, &a, &q, x, r, kappa, alpha).unwrap();
        let expected = kappa * r.powf(2.0 + alpha);
        assert_eq!(rep.additive_gap, expected);
        assert_eq!(rep.multiplicative_ratio, 1.0);
    }

    #[test]
    fn minimality_gap_rejects_trace_mismatch() {
        let g = grid2(1.0, 1.0 / 64.0);
        let a = CoefficientField::identity(g.clone()).unwrap();
        let q = PhaseWeights::constant(g.clone(), 1.0, 1.0).unwrap();
        let u = ScalarField::from_fn(g.clone(), |p| p[0]).unwrap();
        let v = ScalarField::from_fn(g, |p| p[0] + 0.5).unwrap();
        let err = minimality_gap(&u, &v, &a, &q, point2(0.0, 0.0), 0.3, 0.0, 0.5);
        assert!(matches!(err, Err(Error::InvalidCompetitor { .. })));
    }

    #[test]
    fn minimality_gap_zero_energy_conventions() {
        let g = grid2(1.0, 1.0 / 64.0);
        let a = CoefficientField::identity(g.clone()).unwrap();
        let q = PhaseWeights::constant(g.clone(), 0.0, 0.0).unwrap();
        let zero = ScalarField::constant(g, 0.0).unwrap();
        let rep = minimality_gap(&zero, &zero, &a, &q, point2(0.0, 0.0), 0.3, 0.0, 0.5).unwrap();
        assert_eq!(rep.multiplicative_ratio, 1.0);
    }

    #[test]
    fn scaling_competitor_identities_and_signs() {
        let g = grid2(1.0, 1.0 / 32.0);
        let u = ScalarField::from_fn(g.clone(), |p| p[0].max(0.0)).unwrap();
        let bump = ScalarField::from_fn(g.clone(), |p| {
            let d2 = (p[0] - 0.5).powi(2) + p[1].powi(2);
            let r2: f64 = 0.04;
            if d2 < r2 { (1.0 - d2 / r2).powi(2) } else { 0.0 }
        })
        .unwrap();

        let same = scaling_competitor(&u, &bump, 0.0, PhaseSign::Plus).unwrap();
        assert_eq!(same.values(), u.values());
        let zero_phi = ScalarField::constant(g, 0.0).unwrap();
        let same = scaling_competitor(&u, &zero_phi, 0.9, PhaseSign::Plus).unwrap();
        assert_eq!(same.values(), u.values());

        let v = scaling_competitor(&u, &bump, 0.5, PhaseSign::Plus).unwrap();
        for (uv, vv) in u.values().iter().zip(v.values()) {
            assert_eq!(uv > &0.0, vv > &0.0);
            assert_eq!(uv < &0.0, vv < &0.0);
        }

        let err = scaling_competitor(&u, &bump, 1.0, PhaseSign::Plus);
        assert!(matches!(err, Err(Error::ConstraintViolation(_))));
    }

    #[test]
    fn scaling_competitor_first_variation_matches_quadrature() {
        // d/d lambda J(v(lambda)) at 0 equals
        // 2 int [phi |grad u+|^2 + u+ <grad u+, grad phi>] for smooth fields.
        let h = 1.0 / 128.0;
        let g = grid2(1.2, h);
        let a = CoefficientField::identity(g.clone()).unwrap();
        let q = PhaseWeights::constant(g.clone(), 1.0, 0.0).unwrap();
        // Strictly positive smooth candidate, deliberately non-harmonic so
        // the linear coefficient does not vanish.
        let u = ScalarField::from_fn(g.clone(), |p| 2.0 + p[0] + 0.5 * p[0] * p[0]).unwrap();
        let phi = ScalarField::from_fn(g.clone(), |p| {
            let d2 = p[0] * p[0] + p[1] * p[1];
            let r2: f64 = 0.25;
            if d2 < r2 { (1.0 - d2 / r2).powi(3) } else { 0.0 }
        })
        .unwrap();
        let x = point2(0.0, 0.0);
        let r = 0.8;

        let dl = 1e-4;
        let jp = functional_on_ball(
            &scaling_competitor(&u, &phi, dl, PhaseSign::Plus).unwrap(),
            &a,
            &q,
            x,
            r,
            false,
        )
        .unwrap()
        .total;
        let jm = functional_on_ball(
            &scaling_competitor(&u, &phi, -dl, PhaseSign::Plus).unwrap(),
            &a,
            &q,
            x,
            r,
            false,
        )
        .unwrap()
        .total;
        let fd = (jp - jm) / (2.0 * dl);

        // Direct quadrature of the linear coefficient.
        let quad = BallQuadrature::on_grid(&g, x, r).unwrap();
        let linear = quad.integrate(|ijk| {
            let up = u.value(ijk).max(0.0);
            let gu = u.nodal_gradient(ijk);
            let gp = phi.nodal_gradient(ijk);
            let phiv = phi.value(ijk);
            2.0 * (phiv * linalg::dot(gu, gu) + up * linalg::dot(gu, gp))
        });
        let rel = (fd - linear).abs() / linear.abs();
        assert!(rel < 0.01, "fd {fd} vs quadrature {linear} (rel {rel})");
    }
}
