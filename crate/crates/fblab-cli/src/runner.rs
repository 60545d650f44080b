//! Scenario pipeline: candidate construction, certification, diagnostics
//! sweeps, the monotonicity sweep and moduli, with machine-readable outputs
//! in one directory per run.

use std::io::Write;
use std::path::Path;

use fblab::diagnostics::{
    AcfSweep, GClassParams, GClassResult, SignLocality, acf_sweep, continuity_modulus,
    lipschitz_constant, probe_row, sign_locality,
};
use fblab::energy::functional_on_ball;
use fblab::frames::AffineFrame;
use fblab::linalg;
use fblab::minimize::{CertifyParams, certify_almost_minimality};
use fblab::parallel::run_indexed;
use fblab::{MinimalityCertificate, ProbeBall, checkpoint};

use crate::config::RawConfig;
use crate::scenario::Scenario;

/// Errors of the run stage, mapped onto the CLI exit codes.
#[derive(Debug)]
pub enum RunError {
    /// Domain or solver failure (exit 3).
    Numeric(String),
    /// I/O failure writing outputs (exit 3).
    Io(String),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Numeric(m) => write!(f, "numeric error: {m}"),
            RunError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

fn io_err<E: std::fmt::Display>(e: E) -> RunError {
    RunError::Io(e.to_string())
}

fn num_err<E: std::fmt::Display>(e: E) -> RunError {
    RunError::Numeric(e.to_string())
}

struct Check {
    name: &'static str,
    pass: bool,
    value: f64,
    threshold: f64,
}

struct DiagParams {
    tau: f64,
    c0: f64,
    c1: f64,
    r0: f64,
}

#[derive(Default)]
struct RowRecord {
    x: [f64; 3],
    r: f64,
    omega: f64,
    b: f64,
    b_plus: f64,
    member: Option<bool>,
    margins: Option<[f64; 3]>,
    wrong_interior: Option<usize>,
}

pub struct RunOutcome {
    pub all_pass: bool,
}

pub fn run(
    cfg: &RawConfig,
    sc: &Scenario,
    out: &Path,
    threads: usize,
) -> Result<RunOutcome, RunError> {
    std::fs::create_dir_all(out.join("fields")).map_err(io_err)?;
    std::fs::write(out.join("config.echo"), &cfg.text).map_err(io_err)?;
    checkpoint::save_scalar(&sc.u, &out.join("fields").join("u.fbl")).map_err(num_err)?;
    checkpoint::save_matrix(&sc.a, &out.join("fields").join("a.fbl")).map_err(num_err)?;

    let mut checks: Vec<Check> = Vec::new();

    // Certification.
    let certify_enabled = cfg.bool_or("certify", "enabled", false).map_err(num_err)?;
    let mut certificate: Option<MinimalityCertificate<f64>> = None;
    if certify_enabled {
        let mut params = CertifyParams::new(cfg.usize_or("certify", "probe_count", 4).map_err(num_err)?);
        params.seed = cfg.usize_or("certify", "seed", 0).map_err(num_err)? as u64;
        if let Some(v) = cfg.get("certify", "min_radius") {
            params.min_radius =
                Some(v.parse().map_err(|e| RunError::Numeric(format!("min_radius: {e}")))?);
        }
        let alpha = cfg.f64_or("certify", "alpha", sc.alpha).map_err(num_err)?;
        let cert = certify_almost_minimality(&sc.u, &sc.a, &sc.q, alpha, &params).map_err(num_err)?;
        std::fs::write(
            out.join("certificate.json"),
            serde_json::to_string_pretty(&cert.to_json()).map_err(io_err)?,
        )
        .map_err(io_err)?;

        let gap_floor = cfg.f64_or("checks", "gap_floor", -0.05).map_err(num_err)?;
        let mut worst = f64::INFINITY;
        for p in &cert.probes {
            worst = worst.min(p.gap - gap_floor * p.r.powi(sc.n as i32));
        }
        // An empty probe set (all radii under-resolved) must not pass
        // vacuously.
        let have_probes = !cert.probes.is_empty();
        if worst.is_infinite() {
            worst = -1e300;
        }
        checks.push(Check {
            name: "competitor_gaps",
            pass: have_probes && worst >= 0.0,
            value: worst,
            threshold: 0.0,
        });
        certificate = Some(cert);
    }

    // Diagnostics sweep.
    let diag_enabled = cfg.bool_or("diagnostics", "enabled", true).map_err(num_err)?;
    let params = DiagParams {
        tau: cfg.f64_or("diagnostics", "tau", 0.005).map_err(num_err)?,
        c0: cfg.f64_or("diagnostics", "c0", 1.0).map_err(num_err)?,
        c1: cfg.f64_or("diagnostics", "c1", 3.0).map_err(num_err)?,
        r0: cfg.f64_or("diagnostics", "r0", 0.5).map_err(num_err)?,
    };
    let delta_default = sc.alpha / (8.0 * (sc.n as f64 + 1.0));
    let delta = cfg.f64_or("acf", "delta", delta_default).map_err(num_err)?;

    let mut rows: Vec<RowRecord> = Vec::new();
    if diag_enabled {
        let lattice = cfg.usize_or("diagnostics", "lattice", 3).map_err(num_err)?.max(1);
        let radii = cfg
            .list_f64_or("diagnostics", "radii", &[0.05, 0.1, 0.2])
            .map_err(num_err)?;
        let gparams =
            GClassParams::new(params.tau, params.c0, params.c1, params.r0).map_err(num_err)?;

        // Probe lattice over the inner band of the domain.
        let mut centers = Vec::new();
        let origin = sc.grid.origin();
        let top = sc.grid.top();
        let steps: Vec<f64> = (0..lattice)
            .map(|i| 0.3 + 0.4 * (i as f64 + 0.5) / lattice as f64)
            .collect();
        let zs: Vec<f64> = if sc.n == 3 { steps.clone() } else { vec![0.0] };
        for &tx in &steps {
            for &ty in &steps {
                for &tz in &zs {
                    let mut p = [0.0; 3];
                    p[0] = origin[0] + tx * (top[0] - origin[0]);
                    p[1] = origin[1] + ty * (top[1] - origin[1]);
                    if sc.n == 3 {
                        p[2] = origin[2] + tz * (top[2] - origin[2]);
                    }
                    centers.push(p);
                }
            }
        }
        let mut tasks = Vec::new();
        for &c in &centers {
            for &r in &radii {
                tasks.push((c, r));
            }
        }

        let results = run_indexed(tasks.len(), threads, |i| -> Result<RowRecord, String> {
            let (x, r) = tasks[i];
            let probe = ProbeBall::new(&sc.a, x, r).map_err(|e| e.to_string())?;
            let row = probe_row(&sc.u, &probe, &gparams, sc.alpha).map_err(|e| e.to_string())?;
            let (member, margins) = match &row.g {
                GClassResult::Member { margins } => (Some(true), Some(*margins)),
                GClassResult::NotMember { margins } => (Some(false), Some(*margins)),
                GClassResult::NotApplicable { .. } => (None, None),
            };
            let wrong_interior = if row.g.is_member() {
                match sign_locality(&sc.u, &probe, &gparams, sc.alpha).map_err(|e| e.to_string())? {
                    SignLocality::Measured { interior_wrong_nodes, .. } => Some(interior_wrong_nodes),
                    SignLocality::NotApplicable { .. } => None,
                }
            } else {
                None
            };
            Ok(RowRecord {
                x,
                r,
                omega: row.omega,
                b: row.b,
                b_plus: row.b_plus,
                member,
                margins,
                wrong_interior,
            })
        });
        for res in results {
            match res {
                Ok(row) => rows.push(row),
                Err(msg) => return Err(RunError::Numeric(msg)),
            }
        }

        // CSV with parameter echo per row.
        let mut csv = String::from(
            "x1,x2,x3,r,omega,b,b_plus,g_member,margin1,margin2,margin3,tau,c0,c1,r0,delta,alpha\n",
        );
        for row in &rows {
            let member = match row.member {
                Some(true) => "true",
                Some(false) => "false",
                None => "na",
            };
            let margins = row
                .margins
                .map(|m| format!("{},{},{}", m[0], m[1], m[2]))
                .unwrap_or_else(|| ",,".to_string());
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                row.x[0],
                row.x[1],
                row.x[2],
                row.r,
                row.omega,
                row.b,
                row.b_plus,
                member,
                margins,
                params.tau,
                params.c0,
                params.c1,
                params.r0,
                delta,
                sc.alpha,
            ));
        }
        std::fs::write(out.join("diagnostics.csv"), csv).map_err(io_err)?;

        let mut dominance = f64::INFINITY;
        for row in &rows {
            dominance = dominance.min(row.b_plus - row.b.abs());
        }
        if dominance.is_infinite() {
            dominance = 0.0;
        }
        checks.push(Check {
            name: "b_plus_dominates",
            pass: dominance >= -1e-12,
            value: dominance,
            threshold: -1e-12,
        });
        let wrong: usize = rows.iter().filter_map(|r| r.wrong_interior).sum();
        checks.push(Check {
            name: "sign_locality_zero",
            pass: wrong == 0,
            value: wrong as f64,
            threshold: 0.0,
        });

        // Breakdown additivity on a central probe.
        let r_probe = radii.iter().cloned().fold(f64::NAN, f64::max).min(0.3);
        let breakdown = functional_on_ball(&sc.u, &sc.a, &sc.q, [0.0; 3], r_probe, false)
            .map_err(num_err)?;
        let parts =
            breakdown.dirichlet_part + breakdown.plus_phase_part + breakdown.minus_phase_part;
        let additivity = (breakdown.total - parts).abs();
        checks.push(Check {
            name: "breakdown_additive",
            pass: additivity <= 1e-12 * breakdown.total.abs().max(1.0),
            value: additivity,
            threshold: 1e-12 * breakdown.total.abs().max(1.0),
        });
    }

    // Monotonicity sweep.
    let acf_enabled = cfg.bool_or("acf", "enabled", false).map_err(num_err)?;
    let mut acf: Option<AcfSweep<f64>> = None;
    if acf_enabled {
        let radii = cfg
            .list_f64_or("acf", "radii", &[0.05, 0.1, 0.15, 0.2, 0.25, 0.3])
            .map_err(num_err)?;
        let anchor = match cfg.get("acf", "anchor") {
            None | Some("auto") => {
                let search = cfg.f64_or("acf", "anchor_search_radius", 0.35).map_err(num_err)?;
                let mut best = ([0.0; 3], f64::INFINITY);
                for ijk in sc.grid.iter_nodes() {
                    let p = sc.grid.node_point(ijk);
                    if linalg::norm(p) > search {
                        continue;
                    }
                    let v = sc.u.value(ijk).abs();
                    if v < best.1 {
                        best = (p, v);
                    }
                }
                best.0
            }
            Some(_) => cfg.point_or("acf", "anchor", [0.0; 3]).map_err(num_err)?,
        };
        let sweep = acf_sweep(&sc.u, anchor, &radii, delta, sc.alpha).map_err(num_err)?;
        let rows_json: Vec<serde_json::Value> = sweep
            .rows
            .iter()
            .map(|r| {
                serde_json::json!({
                    "r": r.r,
                    "phi_plus": r.phi_plus,
                    "phi_minus": r.phi_minus,
                    "phi": r.phi,
                })
            })
            .collect();
        let doc = serde_json::json!({
            "anchor": [sweep.anchor[0], sweep.anchor[1], sweep.anchor[2]],
            "delta": sweep.delta,
            "rows": rows_json,
            "fitted_constant": sweep.fitted_constant,
            "proxy_constant": sweep.proxy_constant,
            "proxy_radius": sweep.proxy_radius,
            "kernel_normalization": sweep.kernel_normalization,
            "kernel_convention": sweep.kernel_convention,
        });
        std::fs::write(
            out.join("acf.json"),
            serde_json::to_string_pretty(&doc).map_err(io_err)?,
        )
        .map_err(io_err)?;
        checks.push(Check {
            name: "acf_fitted_finite",
            pass: sweep.fitted_constant.is_finite(),
            value: sweep.fitted_constant,
            threshold: 1e300,
        });
        acf = Some(sweep);
    }

    // Moduli.
    let moduli_enabled = cfg.bool_or("moduli", "enabled", true).map_err(num_err)?;
    let mut modulus = None;
    let mut lipschitz = None;
    if moduli_enabled {
        let center = cfg.point_or("moduli", "center", [0.0; 3]).map_err(num_err)?;
        let r0 = cfg.f64_or("moduli", "r0", 0.3).map_err(num_err)?;
        let pair_count = cfg.usize_or("moduli", "pair_count", 2048).map_err(num_err)?;
        let m = continuity_modulus(&sc.u, center, r0, pair_count).map_err(num_err)?;
        let frame = AffineFrame::at(&sc.a, center).map_err(num_err)?;
        let lip = lipschitz_constant(&sc.u, center, r0, Some(&frame)).map_err(num_err)?;
        checks.push(Check {
            name: "modulus_finite",
            pass: m.is_finite() && m <= lip.lipschitz + 1e-12,
            value: m,
            threshold: lip.lipschitz,
        });
        modulus = Some(m);
        lipschitz = Some(lip);
    }

    let all_pass = checks.iter().all(|c| c.pass);
    let checks_json: Vec<serde_json::Value> = checks
        .iter()
        .map(|c| {
            serde_json::json!({
                "name": c.name,
                "pass": c.pass,
                "value": c.value,
                "threshold": c.threshold,
            })
        })
        .collect();
    let summary = serde_json::json!({
        "scenario": sc.name,
        "n": sc.n,
        "h": sc.h,
        "alpha": sc.alpha,
        "params": {
            "tau": params.tau,
            "c0": params.c0,
            "c1": params.c1,
            "r0": params.r0,
            "delta": delta,
            "alpha": sc.alpha,
        },
        "kappa_hat": certificate.as_ref().map(|c| c.kappa_hat),
        "acf_fitted_constant": acf.as_ref().map(|s| s.fitted_constant),
        "acf_proxy_constant": acf.as_ref().map(|s| s.proxy_constant),
        "continuity_modulus": modulus,
        "lipschitz": lipschitz.as_ref().map(|l| l.lipschitz),
        "lipschitz_companion": lipschitz.as_ref().map(|l| l.companion),
        "checks": checks_json,
        "all_pass": all_pass,
    });
    let mut f = std::fs::File::create(out.join("summary.json")).map_err(io_err)?;
    f.write_all(serde_json::to_string_pretty(&summary).map_err(io_err)?.as_bytes())
        .map_err(io_err)?;
    f.write_all(b"\n").map_err(io_err)?;

    Ok(RunOutcome { all_pass })
}

