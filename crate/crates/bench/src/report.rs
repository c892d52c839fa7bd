use std::path::Path;

use gatherconv::perf::format_percent;
use gatherconv::EfficiencyReport;

use crate::config::ReportFormat;
use crate::{BenchError, Result};

pub fn render_report(reports: &[EfficiencyReport], format: ReportFormat) -> Result<String> {
    if reports.is_empty() {
        return Err(BenchError::Report("refusing to emit an empty report".into()));
    }
    match format {
        ReportFormat::Json => {
            let mut text = serde_json::to_string_pretty(reports).map_err(|e| BenchError::Report(e.to_string()))?;
            text.push('\n');
            Ok(text)
        }
        ReportFormat::Csv => {
            let mut writer = csv::Writer::from_writer(Vec::new());
            for r in reports {
                writer.serialize(r).map_err(|e| BenchError::Report(e.to_string()))?;
            }
            let bytes = writer.into_inner().map_err(|e| BenchError::Report(e.to_string()))?;
            String::from_utf8(bytes).map_err(|e| BenchError::Report(e.to_string()))
        }
    }
}

pub fn parse_report(text: &str, format: ReportFormat) -> Result<Vec<EfficiencyReport>> {
    match format {
        ReportFormat::Json => serde_json::from_str(text).map_err(|e| BenchError::Report(e.to_string())),
        ReportFormat::Csv => csv::Reader::from_reader(text.as_bytes())
            .deserialize()
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| BenchError::Report(e.to_string())),
    }
}

pub fn emit_report(reports: &[EfficiencyReport], format: ReportFormat, path: &Path) -> Result<()> {
    let text = render_report(reports, format)?;
    std::fs::write(path, text).map_err(|source| BenchError::Io { path: path.display().to_string(), source })
}

/// Fixed-width table for the terminal, efficiency as a percentage.
pub fn summary_table(reports: &[EfficiencyReport]) -> String {
    let mut out = format!(
        "{:<10} {:<6} {:>16} {:>16} {:>12} {:>8} {:>8}\n",
        "network", "layer", "flops_required", "flops_performed", "elapsed_ms", "ce", "ceiling"
    );
    for r in reports {
        out.push_str(&format!(
            "{:<10} {:<6} {:>16} {:>16} {:>12.3} {:>8} {:>8}\n",
            r.network,
            r.layer,
            r.flops_required,
            r.flops_performed,
            r.elapsed_ns as f64 / 1e6,
            format_percent(r.ce),
            format_percent(r.ceiling),
        ));
    }
    out
}
