//! Corpus ingestion, sweep grids, and the perturbation sweep engine.
//!
//! Corpora are tabular (TSV or JSONL) with one or more configured text
//! fields. A sweep applies every grid setting to every text field of every
//! record, with a random stream addressed by (setting seed, record id,
//! field name) so results do not depend on processing order or parallelism.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::metrics::{measure, MetricReport};
use crate::perturb::{apply_perturbation, PerturbKind, PerturbationSpec, PerturbedRecord};
use crate::rng::stream_seed;
use crate::tokenize::{BpeVocab, Granularity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Tsv,
    Jsonl,
}

/// Which parts of a tabular corpus to perturb.
#[derive(Debug, Clone, Deserialize)]
pub struct CorpusConfig {
    pub format: CorpusFormat,
    pub text_fields: Vec<String>,
    #[serde(default)]
    pub id_field: Option<String>,
    #[serde(default = "default_true")]
    pub has_header: bool,
}

fn default_true() -> bool {
    true
}

impl CorpusConfig {
    pub fn from_toml_path(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: CorpusConfig =
            toml::from_str(&raw).map_err(|e| Error::parse(path, e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.text_fields.is_empty() {
            return Err(Error::Config("text_fields must not be empty".into()));
        }
        let unique: HashSet<&String> = self.text_fields.iter().collect();
        if unique.len() != self.text_fields.len() {
            return Err(Error::Config("text_fields must be unique".into()));
        }
        Ok(())
    }
}

/// The untouched row representation, kept for format-preserving rewrites.
#[derive(Debug, Clone)]
pub enum RawRecord {
    Tsv(Vec<String>),
    Jsonl(serde_json::Map<String, serde_json::Value>),
}

#[derive(Debug, Clone)]
pub struct Record {
    pub index: usize,
    pub id: String,
    /// Configured text fields, in `CorpusConfig::text_fields` order.
    pub texts: Vec<String>,
    pub raw: RawRecord,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub file_name: String,
    /// Raw header line (TSV with `has_header`).
    pub header: Option<String>,
    /// Column index of each text field (TSV).
    field_columns: Vec<usize>,
    pub records: Vec<Record>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Read a corpus, reporting malformed rows with their line numbers.
pub fn read_corpus(path: &Path, config: &CorpusConfig) -> Result<Corpus> {
    config.validate()?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(bytes).map_err(|e| {
        Error::parse(
            path,
            format!("invalid utf-8 at byte offset {}", e.utf8_error().valid_up_to()),
        )
    })?;
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".to_string());

    match config.format {
        CorpusFormat::Tsv => read_tsv(&text, config, file_name),
        CorpusFormat::Jsonl => read_jsonl(&text, config, file_name),
    }
}

fn lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines().map(|l| l.strip_suffix('\r').unwrap_or(l))
}

fn read_tsv(text: &str, config: &CorpusConfig, file_name: String) -> Result<Corpus> {
    let mut iter = lines(text).enumerate();
    let (header, columns): (Option<String>, Vec<String>) = if config.has_header {
        match iter.next() {
            Some((_, line)) => (
                Some(line.to_string()),
                line.split('\t').map(str::to_string).collect(),
            ),
            None => (Some(String::new()), Vec::new()),
        }
    } else {
        (None, Vec::new())
    };

    let column_of = |field: &str| -> Result<usize> {
        if config.has_header {
            columns
                .iter()
                .position(|c| c == field)
                .ok_or_else(|| Error::MissingField {
                    field: field.to_string(),
                    line: 1,
                })
        } else {
            field.parse::<usize>().map_err(|_| {
                Error::Config(format!(
                    "headerless tsv fields are 0-based column indexes, got '{field}'"
                ))
            })
        }
    };

    let field_columns: Vec<usize> = config
        .text_fields
        .iter()
        .map(|f| column_of(f))
        .collect::<Result<_>>()?;
    let id_column = config.id_field.as_deref().map(column_of).transpose()?;

    let mut records = Vec::new();
    for (lineno, line) in iter {
        let cols: Vec<String> = line.split('\t').map(str::to_string).collect();
        let needed = field_columns
            .iter()
            .chain(id_column.iter())
            .copied()
            .max()
            .unwrap_or(0);
        if cols.len() <= needed {
            return Err(Error::MalformedRecord {
                line: lineno + 1,
                message: format!("expected at least {} columns, found {}", needed + 1, cols.len()),
            });
        }
        let index = records.len();
        let id = match id_column {
            Some(c) => cols[c].clone(),
            None => index.to_string(),
        };
        let texts = field_columns.iter().map(|&c| cols[c].clone()).collect();
        records.push(Record {
            index,
            id,
            texts,
            raw: RawRecord::Tsv(cols),
        });
    }

    Ok(Corpus {
        config: config.clone(),
        file_name,
        header,
        field_columns,
        records,
    })
}

fn read_jsonl(text: &str, config: &CorpusConfig, file_name: String) -> Result<Corpus> {
    let mut records = Vec::new();
    for (lineno, line) in lines(text).enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let map: serde_json::Map<String, serde_json::Value> = serde_json::from_str(line)
            .map_err(|e| Error::MalformedRecord {
                line: lineno + 1,
                message: e.to_string(),
            })?;
        let mut texts = Vec::with_capacity(config.text_fields.len());
        for field in &config.text_fields {
            match map.get(field) {
                Some(serde_json::Value::String(s)) => texts.push(s.clone()),
                Some(_) => {
                    return Err(Error::MalformedRecord {
                        line: lineno + 1,
                        message: format!("field '{field}' is not a string"),
                    })
                }
                None => {
                    return Err(Error::MissingField {
                        field: field.clone(),
                        line: lineno + 1,
                    })
                }
            }
        }
        let index = records.len();
        let id = match &config.id_field {
            Some(field) => match map.get(field) {
                Some(serde_json::Value::String(s)) => s.clone(),
                Some(v) => v.to_string(),
                None => {
                    return Err(Error::MissingField {
                        field: field.clone(),
                        line: lineno + 1,
                    })
                }
            },
            None => index.to_string(),
        };
        records.push(Record {
            index,
            id,
            texts,
            raw: RawRecord::Jsonl(map),
        });
    }
    Ok(Corpus {
        config: config.clone(),
        file_name,
        header: None,
        field_columns: Vec::new(),
        records,
    })
}

// ---------------------------------------------------------------------------
// Sweep grid
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct GridSetting {
    pub id: String,
    pub spec: PerturbationSpec,
}

#[derive(Debug, Clone)]
pub struct SweepGrid {
    pub settings: Vec<GridSetting>,
    pub base_seed: u64,
}

fn fmt_rho(rho: f64) -> String {
    let s = format!("{rho:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// The published sweep: per granularity one full shuffle, phrase shuffles
/// and neighbor flips over the listed rho values, plus one identity
/// benchmark. The literal enumeration yields 26 character-level settings
/// (13 phrase + 12 flip + 1 full), for 49 settings in total.
pub fn paper_grid(base_seed: u64) -> SweepGrid {
    const WORD_PHRASE: [f64; 5] = [0.8, 0.65, 0.5, 0.35, 0.2];
    const WORD_FLIP: [f64; 5] = [0.8, 0.6, 0.5, 0.4, 0.2];
    const CHAR_PHRASE: [f64; 13] = [
        0.975, 0.95, 0.9, 0.8, 0.65, 0.5, 0.4, 0.3, 0.2, 0.15, 0.1, 0.075, 0.05,
    ];
    const CHAR_FLIP: [f64; 12] = [
        0.8, 0.65, 0.5, 0.4, 0.3, 0.2, 0.1, 0.075, 0.05, 0.035, 0.025, 0.01,
    ];

    let mut settings = Vec::new();
    let mut push = |id: String, granularity, kind, rho| {
        let seed = stream_seed(base_seed, &[&id]);
        let spec = PerturbationSpec::new(granularity, kind, rho, seed)
            .expect("grid parameters are valid");
        settings.push(GridSetting { id, spec });
    };

    push("identity".into(), Granularity::Word, PerturbKind::Identity, None);
    for granularity in [Granularity::Word, Granularity::Subword, Granularity::Character] {
        let g = granularity.as_str();
        push(format!("{g}_full"), granularity, PerturbKind::FullShuffle, None);
        let (phrase_rhos, flip_rhos): (&[f64], &[f64]) = match granularity {
            Granularity::Character => (&CHAR_PHRASE, &CHAR_FLIP),
            _ => (&WORD_PHRASE, &WORD_FLIP),
        };
        for &rho in phrase_rhos {
            push(
                format!("{g}_phrase_r{}", fmt_rho(rho)),
                granularity,
                PerturbKind::PhraseShuffle,
                Some(rho),
            );
        }
        for &rho in flip_rhos {
            push(
                format!("{g}_flip_r{}", fmt_rho(rho)),
                granularity,
                PerturbKind::NeighborFlip,
                Some(rho),
            );
        }
    }

    SweepGrid {
        settings,
        base_seed,
    }
}

impl SweepGrid {
    /// Read a grid file: CSV `setting_id,granularity,kind,rho,seed`, rho
    /// blank for kinds that carry none.
    pub fn from_csv_path(path: &Path, base_seed: u64) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Error::parse(path, e.to_string()))?;
        let mut settings = Vec::new();
        let mut ids = HashSet::new();
        for (rowno, row) in reader.records().enumerate() {
            let row = row.map_err(|e| Error::parse(path, e.to_string()))?;
            if row.len() < 5 {
                return Err(Error::parse(
                    path,
                    format!("row {}: expected 5 fields, got {}", rowno + 2, row.len()),
                ));
            }
            let id = row[0].to_string();
            if !ids.insert(id.clone()) {
                return Err(Error::parse(path, format!("duplicate setting_id '{id}'")));
            }
            let granularity = Granularity::parse(&row[1])?;
            let kind = PerturbKind::parse(&row[2])?;
            let rho = if row[3].is_empty() {
                None
            } else {
                Some(row[3].parse::<f64>().map_err(|e| {
                    Error::parse(path, format!("row {}: bad rho: {e}", rowno + 2))
                })?)
            };
            let seed = row[4]
                .parse::<u64>()
                .map_err(|e| Error::parse(path, format!("row {}: bad seed: {e}", rowno + 2)))?;
            settings.push(GridSetting {
                id,
                spec: PerturbationSpec::new(granularity, kind, rho, seed)?,
            });
        }
        Ok(SweepGrid {
            settings,
            base_seed,
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut writer =
            csv::Writer::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
        writer
            .write_record(["setting_id", "granularity", "kind", "rho", "seed"])
            .and_then(|_| {
                for setting in &self.settings {
                    writer.write_record([
                        setting.id.as_str(),
                        setting.spec.granularity.as_str(),
                        setting.spec.kind.as_str(),
                        &setting.spec.rho.map(fmt_rho).unwrap_or_default(),
                        &setting.spec.seed.to_string(),
                    ])?;
                }
                writer.flush().map_err(csv::Error::from)
            })
            .map_err(|e| Error::parse(path, e.to_string()))
    }
}

// ---------------------------------------------------------------------------
// Sweep engine
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct FieldResult {
    pub field: String,
    pub record: PerturbedRecord,
    pub report: MetricReport,
}

/// One (record, setting) cell: per-field results plus their unweighted mean.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub setting_index: usize,
    pub record_index: usize,
    pub setting_id: String,
    pub record_id: String,
    pub fields: Vec<FieldResult>,
    pub aggregate: MetricReport,
}

fn process_cell(
    record: &Record,
    setting: &GridSetting,
    setting_index: usize,
    config: &CorpusConfig,
    vocab: &BpeVocab,
) -> Result<CellResult> {
    let mut fields = Vec::with_capacity(record.texts.len());
    for (field, text) in config.text_fields.iter().zip(&record.texts) {
        let seed = stream_seed(setting.spec.seed, &[&record.id, field]);
        let spec = setting.spec.with_seed(seed);
        let perturbed = apply_perturbation(text, &spec, Some(vocab))?;
        let report = measure(&perturbed, vocab)?;
        fields.push(FieldResult {
            field: field.clone(),
            record: perturbed,
            report,
        });
    }
    let reports: Vec<MetricReport> = fields.iter().map(|f| f.report).collect();
    Ok(CellResult {
        setting_index,
        record_index: record.index,
        setting_id: setting.id.clone(),
        record_id: record.id.clone(),
        aggregate: MetricReport::mean(&reports),
        fields,
    })
}

/// Perturb and measure every (record, setting) cell. Output is ordered by
/// (setting, record) regardless of scheduling; with `keep_going`, failing
/// cells are logged and dropped instead of aborting the sweep.
pub fn perturb_corpus(
    corpus: &Corpus,
    grid: &SweepGrid,
    vocab: &BpeVocab,
    keep_going: bool,
) -> Result<Vec<CellResult>> {
    let cells: Vec<(usize, usize)> = (0..grid.settings.len())
        .flat_map(|s| (0..corpus.records.len()).map(move |r| (s, r)))
        .collect();

    let results: Vec<Result<CellResult>> = cells
        .par_iter()
        .map(|&(s, r)| {
            process_cell(&corpus.records[r], &grid.settings[s], s, &corpus.config, vocab)
        })
        .collect();

    let mut out = Vec::with_capacity(results.len());
    for result in results {
        match result {
            Ok(cell) => out.push(cell),
            Err(e) if keep_going => log::warn!("skipping cell: {e}"),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Output writing
// ---------------------------------------------------------------------------

fn format_metric(v: f64) -> String {
    format!("{v:.6}")
}

fn create_file(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(std::io::BufWriter::new(file))
}

/// Write per-setting perturbed corpora (input format, under
/// `out_dir/<setting_id>/`), `metrics.csv` with the per-record aggregate
/// rows, `metrics_by_field.csv` when the corpus has several text fields,
/// and `settings.csv` with the grid.
pub fn write_outputs(
    corpus: &Corpus,
    grid: &SweepGrid,
    cells: &[CellResult],
    out_dir: &Path,
    force: bool,
) -> Result<()> {
    if out_dir.exists() {
        if !force {
            return Err(Error::OutputExists(out_dir.to_path_buf()));
        }
        std::fs::remove_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    grid.write_csv(&out_dir.join("settings.csv"))?;

    let metrics_path = out_dir.join("metrics.csv");
    let mut metrics = create_file(&metrics_path)?;
    writeln!(
        metrics,
        "record_id,setting_id,{}",
        MetricReport::FIELDS.join(",")
    )
    .map_err(|e| Error::io(&metrics_path, e))?;
    for cell in cells {
        let values: Vec<String> = cell.aggregate.values().iter().copied().map(format_metric).collect();
        writeln!(
            metrics,
            "{},{},{}",
            csv_quote(&cell.record_id),
            csv_quote(&cell.setting_id),
            values.join(",")
        )
        .map_err(|e| Error::io(&metrics_path, e))?;
    }
    metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;

    if corpus.config.text_fields.len() > 1 {
        let path = out_dir.join("metrics_by_field.csv");
        let mut by_field = create_file(&path)?;
        writeln!(
            by_field,
            "record_id,setting_id,field,{}",
            MetricReport::FIELDS.join(",")
        )
        .map_err(|e| Error::io(&path, e))?;
        for cell in cells {
            for field in &cell.fields {
                let values: Vec<String> =
                    field.report.values().iter().copied().map(format_metric).collect();
                writeln!(
                    by_field,
                    "{},{},{},{}",
                    csv_quote(&cell.record_id),
                    csv_quote(&cell.setting_id),
                    csv_quote(&field.field),
                    values.join(",")
                )
                .map_err(|e| Error::io(&path, e))?;
            }
        }
        by_field.flush().map_err(|e| Error::io(&path, e))?;
    }

    write_setting_corpora(corpus, grid, cells, out_dir)
}

fn write_setting_corpora(
    corpus: &Corpus,
    grid: &SweepGrid,
    cells: &[CellResult],
    out_dir: &Path,
) -> Result<()> {
    for (setting_index, setting) in grid.settings.iter().enumerate() {
        let dir = out_dir.join(&setting.id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join(&corpus.file_name);
        let mut file = create_file(&path)?;
        if let Some(header) = &corpus.header {
            writeln!(file, "{header}").map_err(|e| Error::io(&path, e))?;
        }
        let setting_cells: Vec<&CellResult> = cells
            .iter()
            .filter(|c| c.setting_index == setting_index)
            .collect();
        for cell in setting_cells {
            let record = &corpus.records[cell.record_index];
            let line = match &record.raw {
                RawRecord::Tsv(cols) => {
                    let mut cols = cols.clone();
                    for (field, &col) in
                        corpus.config.text_fields.iter().zip(&corpus.field_columns)
                    {
                        let result = cell
                            .fields
                            .iter()
                            .find(|f| &f.field == field)
                            .expect("every configured field was perturbed");
                        cols[col] = result.record.perturbed.clone();
                    }
                    cols.join("\t")
                }
                RawRecord::Jsonl(map) => {
                    let mut map = map.clone();
                    for result in &cell.fields {
                        map.insert(
                            result.field.clone(),
                            serde_json::Value::String(result.record.perturbed.clone()),
                        );
                    }
                    serde_json::to_string(&map).expect("json map serializes")
                }
            };
            writeln!(file, "{line}").map_err(|e| Error::io(&path, e))?;
        }
        file.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// RFC-4180 quoting for the hand-written CSV rows.
fn csv_quote(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}
