//! Evaluation reports and their serialized forms: JSON, CSV, a markdown
//! table in the ablation layout, and an SVG bar chart.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{RunConfig, VariantId};
use crate::metrics::Correlations;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    #[default]
    Last,
    Best,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub target_dim: String,
    pub variant: VariantId,
    pub setting: String,
    pub checkpoint: CheckpointKind,
    /// Number of evaluated images.
    pub n: usize,
    pub plcc: f64,
    pub srcc: f64,
    pub krcc: f64,
    pub config_hash: String,
    pub timestamp: String,
}

impl EvalReport {
    pub fn new(
        cfg: &RunConfig,
        config_hash: &str,
        checkpoint: CheckpointKind,
        n: usize,
        metrics: Correlations,
        timestamp: &str,
    ) -> Self {
        EvalReport {
            dataset: cfg.dataset.clone(),
            target_dim: cfg.target_dim.clone(),
            variant: cfg.variant.id,
            setting: cfg.variant.setting(),
            checkpoint,
            n,
            plcc: metrics.plcc,
            srcc: metrics.srcc,
            krcc: metrics.krcc,
            config_hash: config_hash.to_string(),
            timestamp: timestamp.to_string(),
        }
    }

    pub fn metrics(&self) -> Correlations {
        Correlations {
            plcc: self.plcc,
            srcc: self.srcc,
            krcc: self.krcc,
        }
    }

    fn check(&self) -> Result<()> {
        for (name, v) in [("plcc", self.plcc), ("srcc", self.srcc), ("krcc", self.krcc)] {
            if !(-1.0..=1.0).contains(&v) {
                return Err(Error::InvalidScores(format!("{name} = {v} outside [-1, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
    Plot,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 4] = [
        ReportFormat::Json,
        ReportFormat::Csv,
        ReportFormat::Markdown,
        ReportFormat::Plot,
    ];

    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "md",
            ReportFormat::Plot => "svg",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" | "markdown-table" => Ok(ReportFormat::Markdown),
            "plot" | "svg" => Ok(ReportFormat::Plot),
            other => Err(Error::InvalidConfig(format!("unknown report format {other:?}"))),
        }
    }
}

/// Reports in table order: by variant id, ties kept in input order.
pub fn ordered(reports: &[EvalReport]) -> Vec<&EvalReport> {
    let mut rows: Vec<&EvalReport> = reports.iter().collect();
    rows.sort_by_key(|r| r.variant.index());
    rows
}

/// Renders `reports` in `format` without touching the filesystem.
pub fn render(reports: &[EvalReport], format: ReportFormat) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::EmptyReportList);
    }
    for r in reports {
        r.check()?;
    }
    let rows = ordered(reports);
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(&rows)? + "\n"),
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in rows {
                w.serialize(r)?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
        ReportFormat::Markdown => Ok(markdown(&rows)),
        ReportFormat::Plot => Ok(svg(&rows)),
    }
}

/// Writes `reports` to `path` in `format`.
pub fn emit_report(reports: &[EvalReport], format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let text = render(reports, format)?;
    let path = path.as_ref();
    std::fs::write(path, text).map_err(|source| Error::UnwritablePath {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes every format as `<dir>/<stem>.<ext>` and returns the paths.
pub fn emit_all(reports: &[EvalReport], dir: impl AsRef<Path>, stem: &str) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|source| Error::UnwritablePath {
        path: dir.to_path_buf(),
        source,
    })?;
    ReportFormat::ALL
        .into_iter()
        .map(|f| {
            let path = dir.join(format!("{stem}.{}", f.extension()));
            emit_report(reports, f, &path)?;
            Ok(path)
        })
        .collect()
}

pub fn parse_json(text: &str) -> Result<Vec<EvalReport>> {
    Ok(serde_json::from_str(text)?)
}

pub fn parse_csv(text: &str) -> Result<Vec<EvalReport>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// Reads reports back from a `.json` or `.csv` file. A JSON file may hold a
/// single report or a list.
pub fn read_reports(path: impl AsRef<Path>) -> Result<Vec<EvalReport>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => parse_csv(&text),
        _ => match serde_json::from_str::<EvalReport>(&text) {
            Ok(one) => Ok(vec![one]),
            Err(_) => parse_json(&text),
        },
    }
}

fn markdown(rows: &[&EvalReport]) -> String {
    let mut out = String::from("| No. | Ablation | Setting | PLCC | SRCC | KRCC |\n");
    out.push_str("|---:|---|---|---:|---:|---:|\n");
    for (i, r) in rows.iter().enumerate() {
        let _ = writeln!(
            out,
            "| {i} | {} | {} | {:.4} | {:.4} | {:.4} |",
            r.variant, r.setting, r.plcc, r.srcc, r.krcc
        );
    }
    out
}

const BAR_COLORS: [&str; 3] = ["#4e79a7", "#f28e2b", "#59a14f"];

fn svg(rows: &[&EvalReport]) -> String {
    let group = 90.0;
    let bar = 22.0;
    let (left, top, plot_h) = (50.0, 30.0, 240.0);
    let width = left + group * rows.len() as f64 + 20.0;
    let height = top + plot_h + 70.0;
    let lo = if rows.iter().any(|r| r.plcc < 0.0 || r.srcc < 0.0 || r.krcc < 0.0) {
        -1.0
    } else {
        0.0
    };
    let y = |v: f64| top + plot_h * (1.0 - (v - lo) / (1.0 - lo));

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    for tick in 0..=4 {
        let v = lo + (1.0 - lo) * tick as f64 / 4.0;
        let _ = writeln!(
            out,
            r##"<line x1="{left}" x2="{}" y1="{yy:.1}" y2="{yy:.1}" stroke="#ddd"/><text x="{}" y="{:.1}" text-anchor="end">{v:.2}</text>"##,
            width - 10.0,
            left - 4.0,
            y(v) + 4.0,
            yy = y(v),
        );
    }
    for (i, r) in rows.iter().enumerate() {
        let x0 = left + group * i as f64 + 10.0;
        for (j, v) in [r.plcc, r.srcc, r.krcc].into_iter().enumerate() {
            let (a, b) = (y(v.max(lo)), y(0.0_f64.max(lo)));
            let _ = writeln!(
                out,
                r#"<rect x="{:.1}" y="{:.1}" width="{bar}" height="{:.1}" fill="{}"/>"#,
                x0 + bar * j as f64,
                a.min(b),
                (a - b).abs(),
                BAR_COLORS[j]
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{i}: {}</text>"#,
            x0 + 1.5 * bar,
            top + plot_h + 16.0,
            r.variant
        );
    }
    for (j, name) in ["PLCC", "SRCC", "KRCC"].into_iter().enumerate() {
        let x = left + 70.0 * j as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{x}" y="{:.1}" width="10" height="10" fill="{}"/><text x="{}" y="{:.1}">{name}</text>"#,
            height - 28.0,
            BAR_COLORS[j],
            x + 14.0,
            height - 19.0
        );
    }
    out.push_str("</svg>\n");
    out
}
