//! Reports: canonical JSON with everything, plus CSV tables for plotting.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{rank_methods, Fill, MethodReport, RankingRow};
use crate::store::{read_json, to_canonical_json, FORMAT_VERSION};

pub const REPORT_FILE: &str = "report.json";
pub const CURVES_FILE: &str = "curves.csv";
pub const RANKING_FILE: &str = "ranking.csv";

/// One point of a method's curve, as written to `curves.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub dataset: String,
    pub occlusion: Fill,
    pub method: String,
    pub q: f64,
    pub n_r: f64,
    pub tic: f64,
    pub s_e: f64,
    pub accuracy: Option<f64>,
    pub accuracy_n_r: Option<f64>,
    pub random_s_e: Option<f64>,
}

/// Plot panels, one CSV each.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Panel {
    SeVsNr,
    SeVsTic,
    AccuracyVsNr,
}

impl Panel {
    pub const ALL: [Panel; 3] = [Panel::SeVsNr, Panel::SeVsTic, Panel::AccuracyVsNr];

    pub fn file_name(self) -> &'static str {
        match self {
            Panel::SeVsNr => "panel_se_vs_nr.csv",
            Panel::SeVsTic => "panel_se_vs_tic.csv",
            Panel::AccuracyVsNr => "panel_accuracy_vs_nr.csv",
        }
    }

    /// `(x, y)` column names.
    pub fn axes(self) -> (&'static str, &'static str) {
        match self {
            Panel::SeVsNr => ("n_r", "s_e"),
            Panel::SeVsTic => ("tic", "s_e"),
            Panel::AccuracyVsNr => ("n_r", "accuracy"),
        }
    }
}

/// All methods evaluated on one dataset under one occlusion scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub dataset: String,
    pub occlusion: Fill,
    pub methods: Vec<MethodReport>,
}

impl DatasetReport {
    /// Ranking column name.
    pub fn column(&self) -> String {
        format!("{}/{}", self.dataset, self.occlusion)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format_version: u32,
    pub runs: Vec<DatasetReport>,
    pub ranking: Vec<RankingRow>,
}

impl Report {
    pub fn new(runs: Vec<DatasetReport>) -> Self {
        let ranking = rank_methods(
            runs.iter()
                .flat_map(|r| r.methods.iter().map(move |m| (r.column(), m.method.clone(), m.auc_se()))),
        );
        Report {
            format_version: FORMAT_VERSION,
            runs,
            ranking,
        }
    }

    /// Combine reports, re-ranking over all runs.
    pub fn merge(reports: impl IntoIterator<Item = Report>) -> Self {
        Report::new(reports.into_iter().flat_map(|r| r.runs).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        to_canonical_json(self)
    }

    pub fn is_partial(&self) -> bool {
        self.runs.iter().any(|r| r.methods.iter().any(|m| m.partial))
    }

    /// One row per curve point of every method and run.
    pub fn curve_rows(&self) -> Vec<CurveRow> {
        let mut rows = Vec::new();
        for run in &self.runs {
            for m in &run.methods {
                for (k, p) in m.summary.curve.iter().enumerate() {
                    let acc = m.summary.accuracy_curve.get(k);
                    rows.push(CurveRow {
                        dataset: run.dataset.clone(),
                        occlusion: run.occlusion,
                        method: m.method.clone(),
                        q: p.q,
                        n_r: p.n_r,
                        tic: p.tic,
                        s_e: p.s_e,
                        accuracy: acc.map(|a| a.accuracy),
                        accuracy_n_r: acc.map(|a| a.n_r),
                        random_s_e: m.random_baseline.as_ref().and_then(|rb| rb.curve.get(k)).map(|r| r.s_e),
                    });
                }
            }
        }
        rows
    }

    pub fn curves_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in self.curve_rows() {
            w.serialize(row).map_err(csv_error)?;
        }
        finish(w)
    }

    /// The two columns plotted in `panel`, keyed by dataset, occlusion and method.
    pub fn panel_csv(&self, panel: Panel) -> Result<String> {
        let (x, y) = panel.axes();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["dataset", "occlusion", "method", x, y]).map_err(csv_error)?;
        for row in self.curve_rows() {
            let (xv, yv) = match panel {
                Panel::SeVsNr => (Some(row.n_r), Some(row.s_e)),
                Panel::SeVsTic => (Some(row.tic), Some(row.s_e)),
                Panel::AccuracyVsNr => (row.accuracy_n_r, row.accuracy),
            };
            let (Some(xv), Some(yv)) = (xv, yv) else { continue };
            w.write_record([row.dataset, row.occlusion.to_string(), row.method, xv.to_string(), yv.to_string()])
                .map_err(csv_error)?;
        }
        finish(w)
    }

    pub fn ranking_csv(&self) -> Result<String> {
        let columns: Vec<String> = {
            let mut c: Vec<String> = self.runs.iter().map(DatasetReport::column).collect();
            c.sort();
            c.dedup();
            c
        };
        let mut w = csv::Writer::from_writer(Vec::new());
        let header = std::iter::once("method".to_string())
            .chain(columns.iter().cloned())
            .chain(["average".to_string(), "rank".to_string()]);
        w.write_record(header).map_err(csv_error)?;
        for row in &self.ranking {
            let record = std::iter::once(row.method.clone())
                .chain(columns.iter().map(|c| row.auc.get(c).map(|v| format!("{v:.3}")).unwrap_or_default()))
                .chain([format!("{:.3}", row.average), row.rank.to_string()]);
            w.write_record(record).map_err(csv_error)?;
        }
        finish(w)
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::config("csv", e.to_string())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::config("csv", e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Write `report.json`, `curves.csv`, `ranking.csv` and one CSV per panel
/// into `dir`.
pub fn write_report(report: &Report, dir: &Path) -> Result<()> {
    let mut files = vec![
        (CURVES_FILE, report.curves_csv()?),
        (RANKING_FILE, report.ranking_csv()?),
    ];
    for panel in Panel::ALL {
        files.push((panel.file_name(), report.panel_csv(panel)?));
    }
    files.push((REPORT_FILE, report.to_json()?));
    write_files(dir, files)
}

/// Write only `report.json` into `dir`.
pub fn write_report_json(report: &Report, dir: &Path) -> Result<()> {
    write_files(dir, vec![(REPORT_FILE, report.to_json()?)])
}

fn write_files(dir: &Path, files: Vec<(&str, String)>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, text) in files {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

pub fn read_curves_csv(text: &str) -> Result<Vec<CurveRow>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(csv_error)
}

pub fn read_report(dir: &Path) -> Result<Report> {
    let report: Report = read_json(&dir.join(REPORT_FILE))?;
    if report.format_version != FORMAT_VERSION {
        return Err(Error::FormatVersionMismatch {
            expected: FORMAT_VERSION,
            found: report.format_version,
        });
    }
    Ok(report)
}
