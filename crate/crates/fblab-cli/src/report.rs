//! Consolidation of completed runs into a single table keyed by
//! `(scenario, h)`, with ratio columns for refinement pairs.

use std::path::Path;

#[derive(Debug, Clone)]
struct RunSummary {
    scenario: String,
    h: f64,
    kappa_hat: Option<f64>,
    acf_fitted: Option<f64>,
    modulus: Option<f64>,
    lipschitz: Option<f64>,
    lipschitz_companion: Option<f64>,
    all_pass: bool,
    diagnostics_rows: usize,
}

fn load_summary(dir: &Path) -> Result<RunSummary, String> {
    let mut missing = Vec::new();
    let summary_path = dir.join("summary.json");
    if !summary_path.exists() {
        missing.push(summary_path.display().to_string());
    }
    let echo = dir.join("config.echo");
    if !echo.exists() {
        missing.push(echo.display().to_string());
    }
    if !missing.is_empty() {
        return Err(format!("missing files: {}", missing.join(", ")));
    }
    let text = std::fs::read_to_string(&summary_path).map_err(|e| e.to_string())?;
    let doc: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let diagnostics_rows = match std::fs::read_to_string(dir.join("diagnostics.csv")) {
        Ok(csv) => csv.lines().count().saturating_sub(1),
        Err(_) => 0,
    };
    let num = |key: &str| doc.get(key).and_then(|v| v.as_f64());
    Ok(RunSummary {
        scenario: doc
            .get("scenario")
            .and_then(|v| v.as_str())
            .unwrap_or("unnamed")
            .to_string(),
        h: num("h").ok_or("summary.json lacks h")?,
        kappa_hat: num("kappa_hat"),
        acf_fitted: num("acf_fitted_constant"),
        modulus: num("continuity_modulus"),
        lipschitz: num("lipschitz"),
        lipschitz_companion: num("lipschitz_companion"),
        all_pass: doc.get("all_pass").and_then(|v| v.as_bool()).unwrap_or(false),
        diagnostics_rows,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Merges run directories into a consolidated table on stdout. Rows are
/// sorted by `(scenario, h descending)`; refinement pairs (h, h/2) gain
/// ratio columns for the fitted constants.
pub fn report(dirs: &[std::path::PathBuf]) -> Result<String, String> {
    if dirs.is_empty() {
        return Err("no run directories given".into());
    }
    let mut errors = Vec::new();
    let mut runs = Vec::new();
    for dir in dirs {
        if !dir.is_dir() {
            errors.push(format!("not a directory: {}", dir.display()));
            continue;
        }
        match load_summary(dir) {
            Ok(s) => runs.push(s),
            Err(e) => errors.push(format!("{}: {e}", dir.display())),
        }
    }
    if !errors.is_empty() {
        return Err(errors.join("\n"));
    }
    runs.sort_by(|a, b| {
        a.scenario
            .cmp(&b.scenario)
            .then(b.h.partial_cmp(&a.h).expect("finite h"))
    });

    let mut out = String::from(
        "scenario,h,rows,kappa_hat,acf_fitted_constant,continuity_modulus,lipschitz,lipschitz_companion,all_pass\n",
    );
    for r in &runs {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.scenario,
            r.h,
            r.diagnostics_rows,
            opt(r.kappa_hat),
            opt(r.acf_fitted),
            opt(r.modulus),
            opt(r.lipschitz),
            opt(r.lipschitz_companion),
            r.all_pass,
        ));
    }

    // Refinement ratios for (h, h/2) pairs of the same scenario.
    let mut ratio_lines = String::new();
    for a in &runs {
        for b in &runs {
            if a.scenario == b.scenario && (a.h / b.h - 2.0).abs() < 1e-9 {
                let ratio = |x: Option<f64>, y: Option<f64>| match (x, y) {
                    (Some(x), Some(y)) if y.abs() > 0.0 => format!("{}", x / y),
                    _ => String::new(),
                };
                ratio_lines.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    a.scenario,
                    a.h,
                    b.h,
                    ratio(a.kappa_hat, b.kappa_hat),
                    ratio(a.acf_fitted, b.acf_fitted),
                    ratio(a.lipschitz, b.lipschitz),
                ));
            }
        }
    }
    if !ratio_lines.is_empty() {
        out.push_str("\nscenario,h_coarse,h_fine,kappa_ratio,acf_c_ratio,lipschitz_ratio\n");
        out.push_str(&ratio_lines);
    }
    Ok(out)
}
