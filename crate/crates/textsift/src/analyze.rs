//! Correlation analysis between perturbation metrics and model scores.
//!
//! Per-setting metric means are joined with externally produced score
//! tables and correlated per model. Displacement-style metrics (idc,
//! lev_norm) measure damage rather than similarity, so their sign is
//! flipped once at correlation time; stored metric values are never
//! altered.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::MetricReport;

/// Metric columns used in correlation matrices.
pub const CORRELATION_METRICS: [&str; 5] = ["chrf2", "idc", "dnd", "comp_ratio", "lev_norm"];

/// Metrics whose sign is flipped before correlating (perturbation measures,
/// inversely related to similarity and to model performance).
const SIGN_FLIPPED: [&str; 2] = ["idc", "lev_norm"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrMethod {
    Pearson,
    Spearman,
}

impl CorrMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            CorrMethod::Pearson => "pearson",
            CorrMethod::Spearman => "spearman",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pearson" => Ok(CorrMethod::Pearson),
            "spearman" => Ok(CorrMethod::Spearman),
            other => Err(Error::Config(format!("unknown correlation method '{other}'"))),
        }
    }

    fn apply(self, xs: &[f64], ys: &[f64]) -> Result<f64> {
        match self {
            CorrMethod::Pearson => pearson(xs, ys),
            CorrMethod::Spearman => spearman(xs, ys),
        }
    }
}

/// Sample Pearson product-moment correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Config(format!(
            "series lengths differ: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 3 {
        return Err(Error::SeriesTooShort(xs.len()));
    }
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = x - mean_x;
        let dy = y - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x == 0.0 {
        return Err(Error::DegenerateSeries("first series".into()));
    }
    if var_y == 0.0 {
        return Err(Error::DegenerateSeries("second series".into()));
    }
    Ok(cov / (var_x.sqrt() * var_y.sqrt()))
}

/// Ranks with ties resolved to the mean of their rank range.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mean_rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson on average-ranked series.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Config(format!(
            "series lengths differ: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 3 {
        return Err(Error::SeriesTooShort(xs.len()));
    }
    pearson(&average_ranks(xs), &average_ranks(ys))
}

// ---------------------------------------------------------------------------
// Tables
// ---------------------------------------------------------------------------

/// One row of a per-record metrics table.
#[derive(Debug, Clone)]
pub struct MetricRow {
    pub record_id: String,
    pub setting_id: String,
    pub report: MetricReport,
}

/// Read `metrics.csv` rows (header `record_id,setting_id,<metrics...>`).
pub fn read_metric_rows(path: &Path) -> Result<Vec<MetricRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::parse(path, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(path, e.to_string()))?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::parse(path, format!("missing column '{name}'")))
    };
    let record_col = col("record_id")?;
    let setting_col = col("setting_id")?;
    let metric_cols: Vec<usize> = MetricReport::FIELDS
        .iter()
        .map(|f| col(f))
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (rowno, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::parse(path, e.to_string()))?;
        let parse = |c: usize| -> Result<f64> {
            row[c].parse::<f64>().map_err(|e| {
                Error::parse(path, format!("row {}: bad number: {e}", rowno + 2))
            })
        };
        let v: Vec<f64> = metric_cols.iter().map(|&c| parse(c)).collect::<Result<_>>()?;
        rows.push(MetricRow {
            record_id: row[record_col].to_string(),
            setting_id: row[setting_col].to_string(),
            report: MetricReport {
                chrf2: v[0],
                idc: v[1],
                dnd: v[2],
                comp_original: v[3],
                comp_perturbed: v[4],
                comp_ratio: v[5],
                lev_norm: v[6],
            },
        });
    }
    Ok(rows)
}

/// Externally supplied model scores per setting.
#[derive(Debug, Clone, Default)]
pub struct ScoreTable {
    /// (setting_id, model) -> score
    scores: BTreeMap<(String, String), f64>,
}

impl ScoreTable {
    pub fn insert(&mut self, setting_id: &str, model: &str, score: f64) -> Result<()> {
        let key = (setting_id.to_string(), model.to_string());
        if self.scores.contains_key(&key) {
            return Err(Error::Config(format!(
                "duplicate score row for ({setting_id}, {model})"
            )));
        }
        self.scores.insert(key, score);
        Ok(())
    }

    /// Read a scores CSV with header `setting_id,model,score`.
    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Error::parse(path, e.to_string()))?;
        let mut table = ScoreTable::default();
        for (rowno, row) in reader.records().enumerate() {
            let row = row.map_err(|e| Error::parse(path, e.to_string()))?;
            if row.len() < 3 {
                return Err(Error::parse(
                    path,
                    format!("row {}: expected setting_id,model,score", rowno + 2),
                ));
            }
            let score: f64 = row[2].parse().map_err(|e| {
                Error::parse(path, format!("row {}: bad score: {e}", rowno + 2))
            })?;
            table.insert(&row[0], &row[1], score)?;
        }
        Ok(table)
    }

    pub fn models(&self) -> Vec<String> {
        let set: HashSet<&String> = self.scores.keys().map(|(_, m)| m).collect();
        let mut models: Vec<String> = set.into_iter().cloned().collect();
        models.sort();
        models
    }

    pub fn get(&self, setting_id: &str, model: &str) -> Option<f64> {
        self.scores
            .get(&(setting_id.to_string(), model.to_string()))
            .copied()
    }

    pub fn setting_ids(&self) -> HashSet<&str> {
        self.scores.keys().map(|(s, _)| s.as_str()).collect()
    }
}

/// Per-setting unweighted means of each metric, in first-seen setting order.
#[derive(Debug, Clone)]
pub struct SettingsTable {
    pub setting_ids: Vec<String>,
    pub means: Vec<MetricReport>,
}

impl SettingsTable {
    pub fn mean_of(&self, setting_id: &str) -> Option<&MetricReport> {
        self.setting_ids
            .iter()
            .position(|s| s == setting_id)
            .map(|i| &self.means[i])
    }

    fn metric_series(&self, metric: &str) -> Vec<f64> {
        self.means.iter().map(|r| metric_value(r, metric)).collect()
    }
}

fn metric_value(report: &MetricReport, metric: &str) -> f64 {
    match metric {
        "chrf2" => report.chrf2,
        "idc" => report.idc,
        "dnd" => report.dnd,
        "comp_original" => report.comp_original,
        "comp_perturbed" => report.comp_perturbed,
        "comp_ratio" => report.comp_ratio,
        "lev_norm" => report.lev_norm,
        other => unreachable!("unknown metric {other}"),
    }
}

/// Collapse per-record rows into per-setting means.
pub fn aggregate_settings(rows: &[MetricRow]) -> SettingsTable {
    let mut setting_ids: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<MetricReport>> = HashMap::new();
    for row in rows {
        if !groups.contains_key(&row.setting_id) {
            setting_ids.push(row.setting_id.clone());
        }
        groups.entry(row.setting_id.clone()).or_default().push(row.report);
    }
    let means = setting_ids
        .iter()
        .map(|id| MetricReport::mean(&groups[id]))
        .collect();
    SettingsTable { setting_ids, means }
}

// ---------------------------------------------------------------------------
// Correlation matrices
// ---------------------------------------------------------------------------

/// Labeled correlation table; absent cells mark degenerate pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub method: CorrMethod,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub cells: Vec<Vec<Option<f64>>>,
}

impl CorrelationMatrix {
    pub fn cell(&self, row: &str, col: &str) -> Option<f64> {
        let r = self.row_labels.iter().position(|l| l == row)?;
        let c = self.col_labels.iter().position(|l| l == col)?;
        self.cells[r][c]
    }

    /// First column is the row label, remaining columns the metric names.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut writer =
            csv::Writer::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
        let mut header = vec![String::new()];
        header.extend(self.col_labels.iter().cloned());
        writer
            .write_record(&header)
            .and_then(|_| {
                for (label, row) in self.row_labels.iter().zip(&self.cells) {
                    let mut record = vec![label.clone()];
                    record.extend(
                        row.iter()
                            .map(|c| c.map(|v| format!("{v:.6}")).unwrap_or_default()),
                    );
                    writer.write_record(&record)?;
                }
                writer.flush().map_err(csv::Error::from)
            })
            .map_err(|e| Error::parse(path, e.to_string()))
    }
}

fn signed_series(values: Vec<f64>, metric: &str) -> Vec<f64> {
    if SIGN_FLIPPED.contains(&metric) {
        values.into_iter().map(|v| -v).collect()
    } else {
        values
    }
}

/// Correlate each model's scores against each per-setting metric mean.
/// Every model must supply a score for every setting in the table; idc and
/// lev_norm are sign-flipped so all columns read as similarity-vs-score.
pub fn correlate(
    settings: &SettingsTable,
    scores: &ScoreTable,
    method: CorrMethod,
) -> Result<CorrelationMatrix> {
    let known: HashSet<&str> = settings.setting_ids.iter().map(String::as_str).collect();
    let mut unknown: Vec<String> = scores
        .setting_ids()
        .difference(&known)
        .map(|s| s.to_string())
        .collect();
    if !unknown.is_empty() {
        unknown.sort();
        return Err(Error::MissingSettings {
            model: "<scores>".into(),
            missing: unknown,
        });
    }

    let models = scores.models();
    let mut cells = Vec::with_capacity(models.len());
    for model in &models {
        let mut series = Vec::with_capacity(settings.setting_ids.len());
        let mut missing = Vec::new();
        for id in &settings.setting_ids {
            match scores.get(id, model) {
                Some(score) => series.push(score),
                None => missing.push(id.clone()),
            }
        }
        if !missing.is_empty() {
            return Err(Error::MissingSettings {
                model: model.clone(),
                missing,
            });
        }
        let mut row = Vec::with_capacity(CORRELATION_METRICS.len());
        for metric in CORRELATION_METRICS {
            let xs = signed_series(settings.metric_series(metric), metric);
            row.push(Some(method.apply(&xs, &series)?));
        }
        cells.push(row);
    }

    Ok(CorrelationMatrix {
        method,
        row_labels: models,
        col_labels: CORRELATION_METRICS.iter().map(|s| s.to_string()).collect(),
        cells,
    })
}

/// Pairwise Pearson among the metric columns over per-record rows, with the
/// idc column sign-flipped. Degenerate pairs are logged and left absent.
pub fn metric_intercorrelation(rows: &[MetricRow]) -> Result<CorrelationMatrix> {
    if rows.len() < 3 {
        return Err(Error::SeriesTooShort(rows.len()));
    }
    let labels = ["chrf2", "idc", "comp_ratio", "dnd", "lev_norm"];
    let series: Vec<Vec<f64>> = labels
        .iter()
        .map(|&m| {
            let values: Vec<f64> = rows.iter().map(|r| metric_value(&r.report, m)).collect();
            if m == "idc" {
                values.into_iter().map(|v| -v).collect()
            } else {
                values
            }
        })
        .collect();

    let mut cells = vec![vec![None; labels.len()]; labels.len()];
    for i in 0..labels.len() {
        for j in 0..labels.len() {
            match pearson(&series[i], &series[j]) {
                Ok(r) => cells[i][j] = Some(r),
                Err(e) => {
                    log::warn!("{} vs {}: {e}", labels[i], labels[j]);
                }
            }
        }
    }
    Ok(CorrelationMatrix {
        method: CorrMethod::Pearson,
        row_labels: labels.iter().map(|s| s.to_string()).collect(),
        col_labels: labels.iter().map(|s| s.to_string()).collect(),
        cells,
    })
}

// ---------------------------------------------------------------------------
// Heatmap rendering
// ---------------------------------------------------------------------------

fn cell_color(v: f64) -> String {
    let v = v.clamp(-1.0, 1.0);
    let (r, g, b) = if v >= 0.0 {
        let t = ((1.0 - v) * 255.0).round() as u8;
        (255, t, t)
    } else {
        let t = ((1.0 + v) * 255.0).round() as u8;
        (t, t, 255)
    };
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// Render an annotated heatmap as a standalone SVG document. Output bytes
/// are a pure function of the matrix.
pub fn render_heatmap(matrix: &CorrelationMatrix) -> String {
    const CELL_W: usize = 64;
    const CELL_H: usize = 40;
    const TOP: usize = 48;
    let label_chars = matrix
        .row_labels
        .iter()
        .map(|l| l.chars().count())
        .max()
        .unwrap_or(0);
    let left = 16 + label_chars * 8;
    let width = left + matrix.col_labels.len() * CELL_W + 16;
    let height = TOP + matrix.row_labels.len() * CELL_H + 16;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"monospace\" font-size=\"12\">"
    );
    let _ = writeln!(svg, "<rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>");

    for (c, label) in matrix.col_labels.iter().enumerate() {
        let x = left + c * CELL_W + CELL_W / 2;
        let _ = writeln!(
            svg,
            "<text x=\"{x}\" y=\"{y}\" text-anchor=\"middle\">{}</text>",
            escape_xml(label),
            y = TOP - 12
        );
    }
    for (r, label) in matrix.row_labels.iter().enumerate() {
        let y = TOP + r * CELL_H + CELL_H / 2 + 4;
        let _ = writeln!(
            svg,
            "<text x=\"{x}\" y=\"{y}\" text-anchor=\"end\">{}</text>",
            escape_xml(label),
            x = left - 8
        );
    }

    for (r, row) in matrix.cells.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            let x = left + c * CELL_W;
            let y = TOP + r * CELL_H;
            let (fill, label, text_fill) = match cell {
                Some(v) => (
                    cell_color(*v),
                    format!("{v:.2}"),
                    if v.abs() > 0.6 { "white" } else { "black" },
                ),
                None => ("#cccccc".to_string(), "--".to_string(), "black"),
            };
            let _ = writeln!(
                svg,
                "<rect x=\"{x}\" y=\"{y}\" width=\"{CELL_W}\" height=\"{CELL_H}\" \
                 fill=\"{fill}\" stroke=\"#444444\"/>"
            );
            let _ = writeln!(
                svg,
                "<text x=\"{tx}\" y=\"{ty}\" text-anchor=\"middle\" fill=\"{text_fill}\">{label}</text>",
                tx = x + CELL_W / 2,
                ty = y + CELL_H / 2 + 4
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
