//! Plain-text dataset files.
//!
//! * hierarchy: JSON object `{coarse: [fine, ...], ...}` in key order
//! * features: headerless CSV of floats, or the binary `RFLB1` layout
//!   (magic, `u64` rows, `u64` cols, row-major little-endian `f64`)
//! * labels: headerless CSV of 0/1 integers

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde_json::{Map, Value};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::hierarchy::LabelHierarchy;

const FEATURES_MAGIC: &[u8; 5] = b"RFLB1";

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub fn hierarchy_to_json(h: &LabelHierarchy) -> String {
    let mut map = Map::new();
    for (c, name) in h.coarse_names().iter().enumerate() {
        let children = h.fine_names()[h.children(c)]
            .iter()
            .map(|f| Value::String(f.clone()))
            .collect();
        map.insert(name.clone(), Value::Array(children));
    }
    serde_json::to_string_pretty(&Value::Object(map)).expect("string map always serializes")
}

pub fn hierarchy_from_json(text: &str) -> Result<LabelHierarchy> {
    let invalid = |msg: String| Error::Input(format!("invalid hierarchy: {msg}"));
    let value: Value = serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;
    let Value::Object(map) = value else {
        return Err(invalid("expected a JSON object".into()));
    };
    let mut groups = Vec::with_capacity(map.len());
    for (coarse, children) in map {
        let Value::Array(children) = children else {
            return Err(invalid(format!("children of {coarse:?} must be an array")));
        };
        let names = children
            .into_iter()
            .map(|c| match c {
                Value::String(s) => Ok(s),
                other => Err(invalid(format!("fine label {other} is not a string"))),
            })
            .collect::<Result<Vec<_>>>()?;
        groups.push((coarse, names));
    }
    LabelHierarchy::new(groups).map_err(|e| match e {
        Error::Config(m) => invalid(m),
        other => other,
    })
}

pub fn load_hierarchy(path: &Path) -> Result<LabelHierarchy> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    hierarchy_from_json(&text).map_err(|e| match e {
        Error::Input(m) => parse_err(path, 1, m),
        other => other,
    })
}

pub fn save_hierarchy(path: &Path, h: &LabelHierarchy) -> Result<()> {
    fs::write(path, hierarchy_to_json(h) + "\n").map_err(|e| Error::io(path, e))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn read_csv_matrix<T: Copy + Default>(
    path: &Path,
    parse: impl Fn(&str) -> std::result::Result<T, String>,
) -> Result<Array2<T>> {
    let mut reader = csv_reader(path)?;
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(path, line, e.to_string())
        })?;
        let line = record.position().map_or(rows + 1, |p| p.line() as usize);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(parse_err(
                    path,
                    line,
                    format!("expected {c} columns, found {}", record.len()),
                ))
            }
            _ => {}
        }
        for (col, field) in record.iter().enumerate() {
            let v = parse(field).map_err(|m| parse_err(path, line, format!("column {}: {m}", col + 1)))?;
            values.push(v);
        }
        rows += 1;
    }
    let cols = cols.unwrap_or(0);
    Ok(Array2::from_shape_vec((rows, cols), values).expect("row lengths checked while reading"))
}

/// Reads a CSV or `RFLB1` feature matrix, detected by magic bytes.
pub fn load_features(path: &Path) -> Result<Array2<f64>> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 5];
    let n = file.read(&mut magic).map_err(|e| Error::io(path, e))?;
    if n == 5 && &magic == FEATURES_MAGIC {
        return load_binary_features(path, BufReader::new(file));
    }
    read_csv_matrix(path, |s| {
        let v: f64 = s.parse().map_err(|_| format!("invalid number {s:?}"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("non-finite value {s:?}"))
        }
    })
}

fn load_binary_features(path: &Path, mut r: impl Read) -> Result<Array2<f64>> {
    let mut word = [0u8; 8];
    let mut next = |r: &mut dyn Read| -> Result<[u8; 8]> {
        r.read_exact(&mut word)
            .map_err(|_| parse_err(path, 1, "truncated binary feature file"))?;
        Ok(word)
    };
    let rows = u64::from_le_bytes(next(&mut r)?) as usize;
    let cols = u64::from_le_bytes(next(&mut r)?) as usize;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| parse_err(path, 1, "implausible binary dimensions"))?;
    let mut values = Vec::with_capacity(count.min(1 << 24));
    for _ in 0..count {
        values.push(f64::from_le_bytes(next(&mut r)?));
    }
    Ok(Array2::from_shape_vec((rows, cols), values).expect("length equals rows * cols"))
}

pub fn save_features_csv(path: &Path, features: &Array2<f64>) -> Result<()> {
    let mut out = String::new();
    for row in features.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn save_features_binary(path: &Path, features: &Array2<f64>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        w.write_all(FEATURES_MAGIC)?;
        w.write_all(&(features.nrows() as u64).to_le_bytes())?;
        w.write_all(&(features.ncols() as u64).to_le_bytes())?;
        for v in features.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| Error::io(path, e))
}

pub fn load_labels(path: &Path) -> Result<Array2<u8>> {
    read_csv_matrix(path, |s| match s {
        "0" => Ok(0u8),
        "1" => Ok(1u8),
        other => Err(format!("label {other:?} is not 0 or 1")),
    })
}

pub fn save_labels(path: &Path, labels: &Array2<u8>) -> Result<()> {
    let mut out = String::with_capacity(labels.len() * 2);
    for row in labels.rows() {
        let line: Vec<&str> = row.iter().map(|&v| if v != 0 { "1" } else { "0" }).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Paths of one dataset on disk.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetPaths {
    pub features: PathBuf,
    pub coarse: PathBuf,
    #[serde(default)]
    pub fine: Option<PathBuf>,
    pub hierarchy: PathBuf,
}

impl DatasetPaths {
    /// Conventional file names inside `dir`.
    pub fn in_dir(dir: &Path, prefix: &str) -> Self {
        DatasetPaths {
            features: dir.join(format!("{prefix}features.csv")),
            coarse: dir.join(format!("{prefix}coarse.csv")),
            fine: Some(dir.join(format!("{prefix}fine.csv"))),
            hierarchy: dir.join(format!("{prefix}hierarchy.json")),
        }
    }
}

pub fn load_dataset(paths: &DatasetPaths) -> Result<(Dataset, LabelHierarchy)> {
    let hierarchy = load_hierarchy(&paths.hierarchy)?;
    let features = load_features(&paths.features)?;
    let coarse = load_labels(&paths.coarse)?;
    if coarse.nrows() != features.nrows() {
        return Err(parse_err(
            &paths.coarse,
            coarse.nrows().min(features.nrows()) + 1,
            format!("{} label rows but {} feature rows", coarse.nrows(), features.nrows()),
        ));
    }
    if coarse.ncols() != hierarchy.coarse_count() && coarse.nrows() > 0 {
        return Err(parse_err(
            &paths.coarse,
            1,
            format!(
                "{} columns but the hierarchy has {} coarse labels",
                coarse.ncols(),
                hierarchy.coarse_count()
            ),
        ));
    }
    let coarse = if coarse.nrows() == 0 {
        Array2::zeros((0, hierarchy.coarse_count()))
    } else {
        coarse
    };
    let fine = match &paths.fine {
        None => None,
        Some(path) => {
            let fine = load_labels(path)?;
            if fine.nrows() != features.nrows() {
                return Err(parse_err(
                    path,
                    fine.nrows().min(features.nrows()) + 1,
                    format!("{} label rows but {} feature rows", fine.nrows(), features.nrows()),
                ));
            }
            if fine.ncols() != hierarchy.fine_count() && fine.nrows() > 0 {
                return Err(parse_err(
                    path,
                    1,
                    format!(
                        "{} columns but the hierarchy has {} fine labels",
                        fine.ncols(),
                        hierarchy.fine_count()
                    ),
                ));
            }
            if let Some((row, c, stated, implied)) =
                hierarchy.first_violation(coarse.view(), fine.view())?
            {
                return Err(Error::HierarchyViolation {
                    path: path.clone(),
                    row: row + 1,
                    coarse: hierarchy.coarse_names()[c].clone(),
                    coarse_value: stated,
                    children_or: implied,
                });
            }
            Some(fine)
        }
    };
    let data = Dataset::new(features, coarse, fine, &hierarchy)?;
    Ok((data, hierarchy))
}

pub fn save_dataset(paths: &DatasetPaths, data: &Dataset, hierarchy: &LabelHierarchy) -> Result<()> {
    save_hierarchy(&paths.hierarchy, hierarchy)?;
    save_features_csv(&paths.features, data.features())?;
    save_labels(&paths.coarse, data.coarse())?;
    if let (Some(path), Ok(fine)) = (&paths.fine, data.ground_truth()) {
        save_labels(path, fine)?;
    }
    Ok(())
}
