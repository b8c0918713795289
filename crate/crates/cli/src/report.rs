use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use crate::manifest::{RunManifest, Table};
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub manifest: String,
    pub kind: Option<String>,
    pub seed: Option<u64>,
    pub passed: Option<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub entries: Vec<Entry>,
    /// Merged table names, each written as `<name>.csv` and `<name>.svg`.
    pub tables: Vec<String>,
}

impl Summary {
    pub fn errors(&self) -> usize {
        self.entries.iter().filter(|e| e.error.is_some()).count()
    }
}

/// Merges the tables of all readable manifests by name, rows sorted by their first column.
/// Unreadable manifests and tables whose columns disagree are listed as errors.
pub fn report(out: &Path, manifests: &[PathBuf]) -> Result<Summary, CliError> {
    std::fs::create_dir_all(out)?;
    let mut summary = Summary::default();
    let mut merged: BTreeMap<String, Table> = BTreeMap::new();
    for path in manifests {
        let name = path.display().to_string();
        match RunManifest::read(path) {
            Ok(m) => {
                let mut error = None;
                for t in &m.tables {
                    let slot = merged.entry(t.name.clone()).or_insert_with(|| Table { name: t.name.clone(), columns: t.columns.clone(), rows: Vec::new() });
                    if slot.columns != t.columns {
                        error = Some(format!("table {} has columns {:?}, expected {:?}", t.name, t.columns, slot.columns));
                        continue;
                    }
                    slot.rows.extend(t.rows.iter().cloned());
                }
                summary.entries.push(Entry { manifest: name, kind: Some(m.kind.clone()), seed: Some(m.seed), passed: m.checked.then(|| m.passed()), error });
            }
            Err(e) => summary.entries.push(Entry { manifest: name, kind: None, seed: None, passed: None, error: Some(e) }),
        }
    }
    for table in merged.values_mut() {
        table.rows.sort_by(|a, b| a[0].total_cmp(&b[0]));
        write_table(out, table)?;
        plot_table(out, table)?;
        summary.tables.push(table.name.clone());
    }
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    std::fs::write(out.join("summary.json"), json)?;
    Ok(summary)
}

fn write_table(out: &Path, table: &Table) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(out.join(format!("{}.csv", table.name))).map_err(std::io::Error::other)?;
    w.write_record(&table.columns).map_err(std::io::Error::other)?;
    for row in &table.rows {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(std::io::Error::other)?;
    }
    w.flush()?;
    Ok(())
}

/// Second column against the first.
fn plot_table(out: &Path, table: &Table) -> Result<(), CliError> {
    let path = out.join(format!("{}.svg", table.name));
    let pts: Vec<(f64, f64)> = table.rows.iter().filter(|r| r.len() >= 2 && r[0].is_finite() && r[1].is_finite()).map(|r| (r[0], r[1])).collect();
    let span = |vals: Vec<f64>| {
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi - lo < 1e-12 {
            (lo - 0.5, hi + 0.5)
        } else {
            let pad = 0.05 * (hi - lo);
            (lo - pad, hi + pad)
        }
    };
    let (x0, x1) = span(pts.iter().map(|p| p.0).collect());
    let (y0, y1) = span(pts.iter().map(|p| p.1).collect());
    let draw = || -> Result<(), Box<dyn std::error::Error>> {
        let root = SVGBackend::new(&path, (640, 420)).into_drawing_area();
        root.fill(&WHITE)?;
        let mut chart = ChartBuilder::on(&root).caption(&table.name, ("sans-serif", 20)).margin(12).x_label_area_size(36).y_label_area_size(56).build_cartesian_2d(x0..x1, y0..y1)?;
        let ylabel = table.columns.get(1).cloned().unwrap_or_default();
        chart.configure_mesh().x_desc(table.columns[0].as_str()).y_desc(ylabel.as_str()).draw()?;
        chart.draw_series(LineSeries::new(pts.iter().copied(), &BLUE))?;
        chart.draw_series(pts.iter().map(|p| Circle::new(*p, 3, BLUE.filled())))?;
        root.present()?;
        Ok(())
    };
    draw().map_err(|e| std::io::Error::other(e.to_string()))?;
    Ok(())
}
