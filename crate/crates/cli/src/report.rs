//! Aggregation of a run directory into one summary.

use std::path::{Path, PathBuf};

use layertomo::io::write_atomic;

use crate::error::{CliError, Result};
use crate::manifest::Manifest;

/// Tables with more rows than this are summarized by their row count and
/// last row.
const FULL_TABLE_ROWS: usize = 40;

const SUMMARY_MD: &str = "summary.md";
const SUMMARY_CSV: &str = "summary.csv";

fn sorted_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(format!("cannot read {}", dir.display()), e))?;
    let mut out = Vec::new();
    for e in entries {
        let p = e.map_err(|e| CliError::io(format!("cannot read {}", dir.display()), e))?.path();
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if p.extension().and_then(|x| x.to_str()) == Some(ext) && name != SUMMARY_CSV {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn md_row(cells: &[String]) -> String {
    format!("| {} |\n", cells.iter().map(|c| c.replace('|', "\\|")).collect::<Vec<_>>().join(" | "))
}

fn name_of(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Write `summary.md` and `summary.csv` into `run` and return their paths.
pub fn write_report(run: &Path) -> Result<(PathBuf, PathBuf)> {
    if !run.is_dir() {
        return Err(CliError::Usage(format!("{} is not a run directory", run.display())));
    }
    let manifests = sorted_files(run, "manifest")?;
    let tables = sorted_files(run, "csv")?;
    if manifests.is_empty() && tables.is_empty() {
        return Err(CliError::Usage(format!("{} holds no manifests or tables", run.display())));
    }
    let mut md = format!("# Run summary: {}\n", run.display());
    let mut flat = csv::Writer::from_writer(Vec::new());
    flat.write_record(["source", "key", "value"])?;

    for p in &manifests {
        let text = std::fs::read_to_string(p).map_err(|e| CliError::io(format!("cannot read {}", p.display()), e))?;
        let source = name_of(p);
        md.push_str(&format!("\n## {source}\n\n| key | value |\n| --- | --- |\n"));
        for (k, v) in Manifest::parse(&text) {
            md.push_str(&md_row(&[k.clone(), v.clone()]));
            flat.write_record([source.as_str(), &k, &v])?;
        }
    }

    for p in &tables {
        let source = name_of(p);
        let mut reader = csv::Reader::from_path(p)?;
        let header: Vec<String> = reader.headers()?.iter().map(String::from).collect();
        let rows = reader.records().collect::<std::result::Result<Vec<_>, _>>()?;
        md.push_str(&format!("\n## {source}\n\n"));
        let shown: Vec<&csv::StringRecord> = if rows.len() > FULL_TABLE_ROWS {
            md.push_str(&format!("{} rows; last row:\n\n", rows.len()));
            rows.last().into_iter().collect()
        } else {
            rows.iter().collect()
        };
        md.push_str(&md_row(&header));
        md.push_str(&md_row(&vec!["---".to_string(); header.len()]));
        for r in &shown {
            let cells: Vec<String> = r.iter().map(String::from).collect();
            md.push_str(&md_row(&cells));
        }
        if rows.len() <= FULL_TABLE_ROWS {
            for r in &rows {
                let label = r.get(0).unwrap_or("");
                for (h, v) in header.iter().zip(r.iter()).skip(1) {
                    flat.write_record([source.as_str(), &format!("{label}.{h}"), v])?;
                }
            }
        } else {
            flat.write_record([source.as_str(), "rows", &rows.len().to_string()])?;
        }
    }

    let md_path = run.join(SUMMARY_MD);
    let csv_path = run.join(SUMMARY_CSV);
    write_atomic(&md_path, md.as_bytes())?;
    let bytes = flat.into_inner().map_err(|e| CliError::io("csv buffer", e.into_error()))?;
    write_atomic(&csv_path, &bytes)?;
    Ok((md_path, csv_path))
}
