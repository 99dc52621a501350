use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::codec::{write_image, WriteOptions};
use crate::error::{Error, Result};
use crate::image::{Filter, RasterImage};
use crate::pipeline::ImageReport;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounts {
    pub total: usize,
    pub processed: usize,
    pub skipped: usize,
    pub failed: usize,
    pub instances_anonymized: usize,
    /// Instances that fell back to constant fill after a backend failure.
    pub instances_fallback: usize,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_digest: String,
    pub counts: RunCounts,
    pub wall_time_ms: u128,
    pub images: Vec<ImageReport>,
    /// Inputs that could not be read or processed, with the reason.
    pub failures: Vec<(String, String)>,
}

impl RunSummary {
    pub fn is_consistent(&self) -> bool {
        let c = &self.counts;
        c.processed + c.skipped + c.failed == c.total
    }

    pub fn has_failures(&self) -> bool {
        self.counts.failed > 0 || self.counts.instances_fallback > 0
    }
}

/// One row of the metric table: method, IS mean/std, FID.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: String,
    pub is_mean: Option<f64>,
    pub is_std: Option<f64>,
    pub fid: Option<f64>,
}

pub const METRICS_HEADER: [&str; 4] = ["method", "is_mean", "is_std", "fid"];

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn metrics_csv(rows: &[MetricRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::invalid(format!("csv: {e}"));
    w.write_record(METRICS_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            fmt_opt(r.is_mean),
            fmt_opt(r.is_std),
            fmt_opt(r.fid),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::invalid(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn markdown_digest(summary: Option<&RunSummary>, rows: &[MetricRow]) -> String {
    let mut md = String::from("# Anonymization report\n\n");
    if let Some(s) = summary {
        let c = &s.counts;
        let _ = writeln!(md, "Config digest: `{}`\n", s.config_digest);
        let _ = writeln!(md, "| total | processed | skipped | failed | instances | fallbacks | wall time (ms) |");
        let _ = writeln!(md, "|---|---|---|---|---|---|---|");
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {} | {} | {} |\n",
            c.total, c.processed, c.skipped, c.failed, c.instances_anonymized, c.instances_fallback, s.wall_time_ms
        );
        for (id, why) in &s.failures {
            let _ = writeln!(md, "- failed `{id}`: {why}");
        }
        if !s.failures.is_empty() {
            md.push('\n');
        }
    }
    if !rows.is_empty() {
        let _ = writeln!(md, "| Method | IS ↑ | IS std | FID ↓ |");
        let _ = writeln!(md, "|---|---|---|---|");
        for r in rows {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} |",
                r.method.replace('|', "\\|"),
                fmt_opt(r.is_mean),
                fmt_opt(r.is_std),
                fmt_opt(r.fid)
            );
        }
    }
    md
}

/// Write `summary.json` (when a summary is given), `metrics.csv` and
/// `report.md` into `out_dir`. Returns the written paths.
pub fn emit_report(
    summary: Option<&RunSummary>,
    metrics: &[MetricRow],
    out_dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: &str, contents: String| -> Result<()> {
        let path = out_dir.join(name);
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        Ok(())
    };
    if let Some(s) = summary {
        put(
            "summary.json",
            serde_json::to_string_pretty(s).expect("summary serializes"),
        )?;
    }
    put("metrics.csv", metrics_csv(metrics)?)?;
    put("report.md", markdown_digest(summary, metrics))?;
    Ok(written)
}

/// Side-by-side grid, one row per pair: original | anonymized. Tiles take
/// the first original's size; other images are bilinearly resized to fit.
pub fn comparison_grid(pairs: &[(RasterImage, RasterImage)]) -> Result<RasterImage> {
    let Some((first, _)) = pairs.first() else {
        return Err(Error::invalid("comparison grid needs at least one pair"));
    };
    let (tw, th) = first.dims();
    let (gw, gh) = (2 * tw, pairs.len() * th);
    let mut grid = RasterImage::filled(gw, gh, [0.0; 3]);
    for (row, (orig, anon)) in pairs.iter().enumerate() {
        for (col, img) in [orig, anon].into_iter().enumerate() {
            let tile = img.resize(tw, th, Filter::Bilinear)?;
            for y in 0..th {
                for x in 0..tw {
                    grid.set_pixel(col * tw + x, row * th + y, tile.pixel(x, y));
                }
            }
        }
    }
    Ok(grid)
}

pub fn write_comparison_grid(
    pairs: &[(RasterImage, RasterImage)],
    path: impl AsRef<Path>,
) -> Result<()> {
    write_image(&comparison_grid(pairs)?, path, WriteOptions::default())
}
