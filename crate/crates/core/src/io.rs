//! Dataset files: `enterprises.csv`, `texts.jsonl` and `labels.csv`.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::{StructuredRecord, RATIO_COLUMNS};
use crate::pipeline::Dataset;

pub const ENTERPRISES_FILE: &str = "enterprises.csv";
pub const TEXTS_FILE: &str = "texts.jsonl";
pub const LABELS_FILE: &str = "labels.csv";

pub const ENTERPRISE_HEADER: [&str; 8] = [
    "id",
    "roa",
    "debt_to_asset",
    "asset_turnover",
    "cash_flow_ratio",
    "net_asset_growth",
    "industry",
    "region",
];

#[derive(Debug, Serialize, Deserialize)]
struct TextLine {
    id: String,
    tokens: Vec<String>,
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

fn check_header(name: &str, rdr: &mut csv::Reader<&[u8]>, expected: &[&str]) -> Result<()> {
    let header = rdr
        .headers()
        .map_err(|e| Error::Data(format!("{name}: {e}")))?
        .clone();
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::Data(format!(
            "{name}: header is `{}`, expected `{}`",
            header.iter().collect::<Vec<_>>().join(","),
            expected.join(",")
        )));
    }
    Ok(())
}

/// Data rows with their 1-based line numbers (header is line 1).
fn rows(name: &str, rdr: &mut csv::Reader<&[u8]>) -> Result<Vec<(u64, csv::StringRecord)>> {
    rdr.records()
        .map(|r| {
            let r = r.map_err(|e| Error::Data(format!("{name}: {e}")))?;
            let line = r.position().map_or(0, |p| p.line());
            Ok((line, r))
        })
        .collect()
}

fn parse_ratio(name: &str, line: u64, column: &str, raw: &str) -> Result<f64> {
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Data(format!(
            "{name} line {line}, column `{column}`: `{raw}` is not a finite number"
        ))),
    }
}

pub fn parse_enterprises(name: &str, text: &str) -> Result<Vec<StructuredRecord>> {
    let mut rdr = csv_reader(text);
    check_header(name, &mut rdr, &ENTERPRISE_HEADER)?;
    rows(name, &mut rdr)?
        .into_iter()
        .map(|(line, r)| {
            let id = &r[0];
            if id.is_empty() {
                return Err(Error::Data(format!("{name} line {line}, column `id`: empty id")));
            }
            let mut ratios = [0.0; 5];
            for (j, col) in RATIO_COLUMNS.iter().enumerate() {
                ratios[j] = parse_ratio(name, line, col, &r[j + 1])?;
            }
            let [roa, debt_to_asset, asset_turnover, cash_flow_ratio, net_asset_growth] = ratios;
            Ok(StructuredRecord {
                id: id.to_string(),
                roa,
                debt_to_asset,
                asset_turnover,
                cash_flow_ratio,
                net_asset_growth,
                industry: r[6].to_string(),
                region: r[7].to_string(),
            })
        })
        .collect()
}

pub fn read_enterprises(path: &Path) -> Result<Vec<StructuredRecord>> {
    parse_enterprises(&file_name(path), &read_to_string(path)?)
}

/// Labels keyed by enterprise id.
pub fn parse_labels(name: &str, text: &str) -> Result<Vec<(String, f64)>> {
    let mut rdr = csv_reader(text);
    check_header(name, &mut rdr, &["id", "label"])?;
    rows(name, &mut rdr)?
        .into_iter()
        .map(|(line, r)| match &r[1] {
            "0" => Ok((r[0].to_string(), 0.0)),
            "1" => Ok((r[0].to_string(), 1.0)),
            other => Err(Error::Data(format!(
                "{name} line {line}, column `label`: `{other}` is not 0 or 1"
            ))),
        })
        .collect()
}

pub fn parse_texts(name: &str, text: &str) -> Result<Vec<(String, Vec<String>)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let t: TextLine = serde_json::from_str(l)
                .map_err(|e| Error::Data(format!("{name} line {}: {e}", i + 1)))?;
            Ok((t.id, t.tokens))
        })
        .collect()
}

/// Reorders `(id, value)` pairs to follow `ids`, requiring a one-to-one match.
fn align<T>(name: &str, what: &str, ids: &[&str], pairs: Vec<(String, T)>) -> Result<Vec<T>> {
    let mut by_id: HashMap<String, T> = HashMap::with_capacity(pairs.len());
    for (id, v) in pairs {
        if by_id.insert(id.clone(), v).is_some() {
            return Err(Error::Data(format!("{name}: duplicate id `{id}`")));
        }
    }
    let out = ids
        .iter()
        .map(|id| {
            by_id
                .remove(*id)
                .ok_or_else(|| Error::Data(format!("{name}: no {what} for enterprise `{id}`")))
        })
        .collect::<Result<Vec<T>>>()?;
    if let Some(extra) = by_id.keys().min() {
        return Err(Error::Data(format!("{name}: id `{extra}` is not in {ENTERPRISES_FILE}")));
    }
    Ok(out)
}

pub fn read_texts_for(path: &Path, records: &[StructuredRecord]) -> Result<Vec<Vec<String>>> {
    let name = file_name(path);
    let pairs = parse_texts(&name, &read_to_string(path)?)?;
    let ids: Vec<&str> = records.iter().map(|r| r.id.as_str()).collect();
    align(&name, "document", &ids, pairs)
}

/// Paths of the three dataset files inside `dir`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetPaths {
    pub enterprises: PathBuf,
    pub texts: PathBuf,
    pub labels: PathBuf,
}

impl DatasetPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            enterprises: dir.join(ENTERPRISES_FILE),
            texts: dir.join(TEXTS_FILE),
            labels: dir.join(LABELS_FILE),
        }
    }
}

/// Reads a labelled dataset. A missing text file yields `texts: None`.
pub fn read_dataset(paths: &DatasetPaths) -> Result<Dataset> {
    let records = read_enterprises(&paths.enterprises)?;
    let texts = if paths.texts.exists() {
        Some(read_texts_for(&paths.texts, &records)?)
    } else {
        None
    };
    let name = file_name(&paths.labels);
    let pairs = parse_labels(&name, &read_to_string(&paths.labels)?)?;
    let ids: Vec<&str> = records.iter().map(|r| r.id.as_str()).collect();
    let labels = align(&name, "label", &ids, pairs)?;
    let data = Dataset { records, texts, labels };
    data.validate()?;
    Ok(data)
}

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    let s = format!("{v:?}");
    s.strip_suffix(".0").map(str::to_string).unwrap_or(s)
}

pub fn csv_line(fields: &[String]) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(fields).expect("in-memory write");
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

pub fn enterprises_csv(records: &[StructuredRecord]) -> String {
    let mut out = ENTERPRISE_HEADER.join(",") + "\n";
    for r in records {
        let mut fields = vec![r.id.clone()];
        fields.extend(r.ratios().iter().map(|&v| fmt_f64(v)));
        fields.push(r.industry.clone());
        fields.push(r.region.clone());
        out.push_str(&csv_line(&fields));
    }
    out
}

pub fn texts_jsonl(records: &[StructuredRecord], texts: &[Vec<String>]) -> String {
    let mut out = String::new();
    for (r, t) in records.iter().zip(texts) {
        let line = TextLine {
            id: r.id.clone(),
            tokens: t.clone(),
        };
        out.push_str(&serde_json::to_string(&line).expect("plain strings"));
        out.push('\n');
    }
    out
}

pub fn labels_csv(records: &[StructuredRecord], labels: &[f64]) -> String {
    let mut out = String::from("id,label\n");
    for (r, &y) in records.iter().zip(labels) {
        out.push_str(&csv_line(&[r.id.clone(), (y as u8).to_string()]));
    }
    out
}

pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<DatasetPaths> {
    data.validate()?;
    let paths = DatasetPaths::in_dir(dir);
    write_file(&paths.enterprises, enterprises_csv(&data.records).as_bytes())?;
    if let Some(texts) = &data.texts {
        write_file(&paths.texts, texts_jsonl(&data.records, texts).as_bytes())?;
    }
    write_file(&paths.labels, labels_csv(&data.records, &data.labels).as_bytes())?;
    Ok(paths)
}
