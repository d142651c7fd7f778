//! Plot-ready tables derived from a finished run report.

use crate::report::Table;
use serde_json::Value;
use std::io;
use std::path::{Path, PathBuf};

fn result<'a>(report: &'a Value, analysis: &str) -> Option<&'a Value> {
    report.get("results")?.as_array()?.iter().find(|r| r.get("analysis").and_then(Value::as_str) == Some(analysis))
}

fn num(v: &Value, key: &str) -> f64 {
    v.get(key).and_then(Value::as_f64).unwrap_or(f64::NAN)
}

fn nonrel(details: &Value, out: &Path) -> io::Result<Option<PathBuf>> {
    let Some(rows) = details.get("rows").and_then(Value::as_array) else { return Ok(None) };
    let (slope, intercept) = (num(details, "slope"), num(details, "intercept"));
    let path = out.join("nonrel_plot.csv");
    let mut t = Table::create(&path, &["eps", "residual", "slope_fit"])?;
    for r in rows {
        let eps = num(r, "eps_measured");
        t.row([eps, num(r, "discrepancy"), intercept.exp() * eps.powf(slope)])?;
    }
    t.finish()?;
    Ok(Some(path))
}

fn energy(details: &Value, out: &Path) -> io::Result<Option<PathBuf>> {
    if details.get("mu_direct").is_none() {
        return Ok(None);
    }
    let path = out.join("energy_plot.csv");
    let mut t = Table::create(&path, &["mu_direct", "mu_identity", "E_u2"])?;
    t.row([num(details, "mu_direct"), num(details, "mu_identity"), num(details, "e_u2")])?;
    t.finish()?;
    Ok(Some(path))
}

fn profiles(details: &Value, out: &Path) -> io::Result<Vec<PathBuf>> {
    let Some(rows) = details.get("profile").and_then(Value::as_array).filter(|r| !r.is_empty()) else { return Ok(vec![]) };
    let density = out.join("density_profile.csv");
    let mut t = Table::create(&density, &["q1", "count", "density", "density_se"])?;
    for r in rows {
        t.row([num(r, "q1"), num(r, "count"), num(r, "density"), num(r, "density_se")])?;
    }
    t.finish()?;
    let drift = out.join("drift_profile.csv");
    let mut t = Table::create(&drift, &["q1", "u1", "u1_se", "beta1", "beta1_se"])?;
    for r in rows {
        t.row([num(r, "q1"), num(r, "u1"), num(r, "u1_se"), num(r, "beta1"), num(r, "beta1_se")])?;
    }
    t.finish()?;
    Ok(vec![density, drift])
}

/// Writes every plot table the report has data for. An empty list means the
/// report held no plottable analyses.
pub fn write_plot_data(report: &Value, out: &Path) -> io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out)?;
    let details = |a: &str| result(report, a).and_then(|r| r.get("details")).filter(|d| !d.is_null());
    let mut files = Vec::new();
    if let Some(d) = details("nonrel") {
        files.extend(nonrel(d, out)?);
    }
    if let Some(d) = details("energy") {
        files.extend(energy(d, out)?);
    }
    if let Some(d) = details("estimate") {
        files.extend(profiles(d, out)?);
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn empty_report_yields_no_files() {
        let dir = tempfile::tempdir().unwrap();
        assert!(write_plot_data(&json!({}), dir.path()).unwrap().is_empty());
        assert!(write_plot_data(&json!({ "results": [] }), dir.path()).unwrap().is_empty());
    }

    #[test]
    fn nonrel_fit_column() {
        let dir = tempfile::tempdir().unwrap();
        let report = json!({ "results": [{
            "analysis": "nonrel",
            "details": { "slope": 2.0, "intercept": 0.0, "rows": [{ "eps_measured": 0.5, "discrepancy": 0.25 }] },
        }]});
        let files = write_plot_data(&report, dir.path()).unwrap();
        let text = std::fs::read_to_string(&files[0]).unwrap();
        assert_eq!(text, "eps,residual,slope_fit\n0.5,0.25,0.25\n");
    }
}
