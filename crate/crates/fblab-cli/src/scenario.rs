//! Scenario assembly: coefficient, phase and candidate recipes resolved
//! from a parsed config into concrete fields.

use fblab::linalg::{self, Point};
use fblab::minimize::{BumpSpec, SeedKind, SeedSpec, SolverParams, minimize_functional, seed};
use fblab::{CoefficientField64, Grid64, PhaseWeights64, ScalarField64};

use crate::config::{ConfigError, RawConfig};

const PI: f64 = std::f64::consts::PI;

pub struct Scenario {
    pub name: String,
    pub n: usize,
    pub h: f64,
    pub grid: Grid64,
    pub a: CoefficientField64,
    pub q: PhaseWeights64,
    pub alpha: f64,
    pub u: ScalarField64,
}

fn build_grid(cfg: &RawConfig, h_override: Option<f64>) -> Result<Grid64, ConfigError> {
    let n = cfg.usize_or("grid", "n", 2)?;
    let h = h_override.unwrap_or(cfg.f64("grid", "h")?);
    let half = cfg.f64_or("grid", "half_width", 1.0)?;
    if h <= 0.0 || half <= 0.0 {
        return Err(ConfigError("grid spacing and half_width must be positive".into()));
    }
    let cells = (2.0 * half / h).round() as usize;
    let mut shape = [1usize; 3];
    let mut origin = [0.0f64; 3];
    for d in 0..n {
        shape[d] = cells + 1;
        origin[d] = -half;
    }
    Grid64::new(n, origin, h, shape).map_err(|e| ConfigError(format!("grid: {e}")))
}

fn build_coefficients(cfg: &RawConfig, grid: &Grid64) -> Result<(CoefficientField64, f64), ConfigError> {
    let recipe = cfg.get("coefficients", "recipe").unwrap_or("identity");
    let eps = cfg.f64_or("coefficients", "epsilon", 0.1)?;
    let alpha = cfg.f64_or("coefficients", "alpha", 1.0)?;
    let n = grid.dim();
    let field = match recipe {
        "identity" => CoefficientField64::identity(grid.clone()),
        "scaled_identity" => {
            let wig = move |p: Point<f64>| {
                let mut g = (PI * p[0]).sin() * (PI * p[1]).cos();
                if n == 3 {
                    g *= (PI * p[2]).cos();
                }
                1.0 + eps * g
            };
            CoefficientField64::from_fn(
                grid.clone(),
                1.0 - eps,
                1.0 + eps,
                alpha,
                eps * PI * (n as f64).sqrt(),
                move |p| {
                    let s = wig(p);
                    let mut m = [[0.0; 3]; 3];
                    for (d, row) in m.iter_mut().enumerate().take(n) {
                        row[d] = s;
                    }
                    m
                },
            )
        }
        "hoelder_bump" => {
            let center = cfg.point_or("coefficients", "center", [0.0; 3])?;
            let top = grid.top();
            let origin = grid.origin();
            let mut diam2 = 0.0;
            for d in 0..n {
                let reach = (top[d] - center[d]).abs().max((center[d] - origin[d]).abs());
                diam2 += reach * reach;
            }
            let hi = 1.0 + eps * diam2.sqrt().powf(alpha);
            CoefficientField64::from_fn(grid.clone(), 1.0, hi, alpha, eps, move |p| {
                let s = 1.0 + eps * linalg::dist(p, center).powf(alpha);
                let mut m = [[0.0; 3]; 3];
                for (d, row) in m.iter_mut().enumerate().take(n) {
                    row[d] = s;
                }
                m
            })
        }
        "rotated_anisotropic" => {
            let a_axis = cfg.f64_or("coefficients", "axis_a", 2.0)?;
            let b_axis = cfg.f64_or("coefficients", "axis_b", 1.0)?;
            let angle = cfg.f64_or("coefficients", "angle", 0.5)?;
            let lo = a_axis.min(b_axis);
            let hi = a_axis.max(b_axis);
            CoefficientField64::from_fn(grid.clone(), lo, hi, alpha, eps * (hi - lo).max(eps), move |p| {
                let theta = angle + eps * p[0];
                let r = linalg::rotation_xy(theta);
                let rt = [[r[0][0], r[1][0], 0.0], [r[0][1], r[1][1], 0.0], [0.0, 0.0, 1.0]];
                let mut d = [[0.0; 3]; 3];
                d[0][0] = a_axis;
                d[1][1] = b_axis;
                if n == 3 {
                    d[2][2] = lo;
                }
                linalg::mat_mul(&linalg::mat_mul(&r, &d), &rt)
            })
        }
        other => return Err(ConfigError(format!("unknown coefficient recipe {other:?}"))),
    }
    .map_err(|e| ConfigError(format!("coefficients: {e}")))?;
    Ok((field, alpha))
}

fn build_phases(cfg: &RawConfig, grid: &Grid64) -> Result<PhaseWeights64, ConfigError> {
    let recipe = cfg.get("phases", "recipe").unwrap_or("constant");
    let qp = cfg.f64_or("phases", "q_plus", 1.0)?;
    let qm = cfg.f64_or("phases", "q_minus", 0.0)?;
    match recipe {
        "constant" => PhaseWeights64::constant(grid.clone(), qp, qm)
            .map_err(|e| ConfigError(format!("phases: {e}"))),
        "checkerboard" => {
            let width = cfg.f64_or("phases", "width", 0.25)?;
            let qp_alt = cfg.f64_or("phases", "q_plus_alt", qp * 0.5)?;
            let qm_alt = cfg.f64_or("phases", "q_minus_alt", qm * 0.5)?;
            let origin = grid.origin();
            let n = grid.dim();
            let parity = move |p: Point<f64>| {
                let mut cells = 0i64;
                for d in 0..n {
                    cells += ((p[d] - origin[d]) / width).floor() as i64;
                }
                cells % 2 == 0
            };
            let plus = ScalarField64::from_fn(grid.clone(), move |p| if parity(p) { qp } else { qp_alt })
                .map_err(|e| ConfigError(format!("phases: {e}")))?;
            let minus = ScalarField64::from_fn(grid.clone(), move |p| if parity(p) { qm } else { qm_alt })
                .map_err(|e| ConfigError(format!("phases: {e}")))?;
            PhaseWeights64::new(plus, minus).map_err(|e| ConfigError(format!("phases: {e}")))
        }
        other => Err(ConfigError(format!("unknown phase recipe {other:?}"))),
    }
}

fn build_seed_spec(cfg: &RawConfig) -> Result<SeedSpec<f64>, ConfigError> {
    let kind = match cfg.get("candidate", "kind").unwrap_or("planar_one_phase") {
        "planar_one_phase" => SeedKind::PlanarOnePhase,
        "planar_two_phase" => SeedKind::PlanarTwoPhase,
        "linear" => SeedKind::Linear,
        "perturbed" => SeedKind::Perturbed,
        other => return Err(ConfigError(format!("unknown seed kind {other:?}"))),
    };
    let base = match cfg.get("candidate", "base").unwrap_or("planar_one_phase") {
        "planar_one_phase" => SeedKind::PlanarOnePhase,
        "planar_two_phase" => SeedKind::PlanarTwoPhase,
        "linear" => SeedKind::Linear,
        other => return Err(ConfigError(format!("unknown base seed kind {other:?}"))),
    };
    let normal_list = cfg.point_or("candidate", "normal", [1.0, 0.0, 0.0])?;
    let norm = linalg::norm(normal_list);
    if norm <= 0.0 {
        return Err(ConfigError("candidate normal must be nonzero".into()));
    }
    let bump = if cfg.get("candidate", "bump_radius").is_some() {
        Some(BumpSpec {
            center: cfg.point_or("candidate", "bump_center", [0.0; 3])?,
            radius: cfg.f64("candidate", "bump_radius")?,
        })
    } else {
        None
    };
    Ok(SeedSpec {
        kind,
        slope_plus: cfg.f64_or("candidate", "slope_plus", 1.0)?,
        slope_minus: cfg.f64_or("candidate", "slope_minus", 0.0)?,
        normal: linalg::scale(normal_list, 1.0 / norm),
        offset: cfg.f64_or("candidate", "offset", 0.0)?,
        amplitude: cfg.f64_or("candidate", "amplitude", 0.0)?,
        bump,
        base,
    })
}

/// Builds the full scenario (fields plus candidate) from a config.
pub fn build(cfg: &RawConfig, h_override: Option<f64>) -> Result<Scenario, String> {
    let name = cfg
        .get("scenario", "name")
        .unwrap_or("unnamed")
        .to_string();
    let grid = build_grid(cfg, h_override).map_err(|e| e.to_string())?;
    let (a, alpha) = build_coefficients(cfg, &grid).map_err(|e| e.to_string())?;
    let q = build_phases(cfg, &grid).map_err(|e| e.to_string())?;
    let spec = build_seed_spec(cfg).map_err(|e| e.to_string())?;
    let seeded = seed(&spec, &grid).map_err(|e| format!("seed: {e}"))?;

    let source = cfg.get("candidate", "source").unwrap_or("seed");
    let u = match source {
        "seed" => seeded,
        "minimize" => {
            let plus_only = cfg.bool_or("candidate", "plus_only", false).map_err(|e| e.to_string())?;
            let mut params = SolverParams::default_for(grid.spacing());
            params.max_iterations = cfg
                .usize_or("candidate", "max_iterations", params.max_iterations)
                .map_err(|e| e.to_string())?;
            params.energy_tolerance = cfg
                .f64_or("candidate", "energy_tolerance", params.energy_tolerance)
                .map_err(|e| e.to_string())?;
            minimize_functional(&a, &q, &seeded, &params, plus_only)
                .map_err(|e| format!("minimize: {e}"))?
        }
        other => return Err(format!("unknown candidate source {other:?}")),
    };

    Ok(Scenario { name, n: grid.dim(), h: grid.spacing(), grid, a, q, alpha, u })
}
