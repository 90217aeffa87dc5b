use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub clip_id: String,
    pub metric: String,
    pub value: f64,
}

/// CSV with header `clip_id,metric,value`: the given rows, then one
/// `mean` row per metric in order of first appearance.
pub fn write_report(rows: &[ReportRow], out: &mut impl std::io::Write) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Contract(format!("failed to write report: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["clip_id", "metric", "value"]).map_err(csv_err)?;
    let mut metrics: Vec<&str> = Vec::new();
    for r in rows {
        if !metrics.contains(&r.metric.as_str()) {
            metrics.push(&r.metric);
        }
        w.write_record([r.clip_id.as_str(), r.metric.as_str(), &r.value.to_string()])
            .map_err(csv_err)?;
    }
    for m in metrics {
        let vals: Vec<f64> = rows.iter().filter(|r| r.metric == m).map(|r| r.value).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        w.write_record(["mean", m, &mean.to_string()]).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Contract(format!("failed to write report: {e}")))?;
    Ok(())
}

pub fn save_report(rows: &[ReportRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_report(rows, &mut buf)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads back rows written by [`write_report`], mean rows included.
pub fn read_report(path: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Contract(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Contract(format!("{}: {e}", path.display())))?;
        let value = rec[2]
            .parse()
            .map_err(|e| Error::Contract(format!("{}: bad value {:?}: {e}", path.display(), &rec[2])))?;
        out.push(ReportRow {
            clip_id: rec[0].to_string(),
            metric: rec[1].to_string(),
            value,
        });
    }
    Ok(out)
}
