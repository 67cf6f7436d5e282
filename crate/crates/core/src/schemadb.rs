//! Database schemas, annotated databases and the example corpus.
//!
//! On-disk layout of a dataset directory:
//!
//! ```text
//! <dataset>/schemas/<db_id>.json   one schema document per database
//! <dataset>/train.jsonl            \
//! <dataset>/dev.jsonl  (optional)   } pre-split corpus, or
//! <dataset>/test.jsonl             /
//! <dataset>/examples.jsonl         unsplit corpus, split by seed
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dvq::{self, ChartType};

/// Train/dev/test percentages used by nvBench-style splits.
pub const DEFAULT_SPLIT: [f64; 3] = [80.0, 4.5, 15.5];

#[derive(Debug, Error)]
pub enum SchemaDbError {
    #[error("file not found: {0}")]
    FileMissing(PathBuf),
    #[error("{path}:{line}: {reason}")]
    RecordInvalid {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("schema {db_id:?} is invalid: {reason}")]
    SchemaInvalid { db_id: String, reason: String },
    #[error("need at least 3 examples to split, got {0}")]
    TooFewExamples(usize),
    #[error("split ratios must be positive and sum to 100, got {0:?}")]
    InvalidRatios([f64; 3]),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SchemaDbError + '_ {
    move |source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            SchemaDbError::FileMissing(path.to_path_buf())
        } else {
            SchemaDbError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(rename = "type")]
    pub col_type: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<Column>,
}

/// `table.column = table.column`, stored as the two dotted paths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForeignKey(pub String, pub String);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatabaseSchema {
    pub db_id: String,
    pub tables: Vec<Table>,
    #[serde(default)]
    pub foreign_keys: Vec<ForeignKey>,
}

impl DatabaseSchema {
    pub fn validate(&self) -> Result<(), SchemaDbError> {
        let invalid = |reason: String| SchemaDbError::SchemaInvalid {
            db_id: self.db_id.clone(),
            reason,
        };
        if self.db_id.trim().is_empty() {
            return Err(invalid("empty db_id".into()));
        }
        if self.tables.is_empty() {
            return Err(invalid("no tables".into()));
        }
        let mut table_names = HashSet::new();
        for table in &self.tables {
            if table.name.trim().is_empty() {
                return Err(invalid("table with empty name".into()));
            }
            if !table_names.insert(table.name.to_lowercase()) {
                return Err(invalid(format!("duplicate table {:?}", table.name)));
            }
            let mut cols = HashSet::new();
            for col in &table.columns {
                if col.name.trim().is_empty() {
                    return Err(invalid(format!("empty column name in {:?}", table.name)));
                }
                if !cols.insert(col.name.to_lowercase()) {
                    return Err(invalid(format!(
                        "duplicate column {:?} in {:?}",
                        col.name, table.name
                    )));
                }
            }
        }
        for fk in &self.foreign_keys {
            for end in [&fk.0, &fk.1] {
                if !self.resolves(end) {
                    return Err(invalid(format!("foreign key endpoint {end:?} does not resolve")));
                }
            }
        }
        Ok(())
    }

    fn resolves(&self, path: &str) -> bool {
        let Some((table, column)) = path.split_once('.') else {
            return false;
        };
        self.tables.iter().any(|t| {
            t.name.eq_ignore_ascii_case(table)
                && t.columns.iter().any(|c| c.name.eq_ignore_ascii_case(column))
        })
    }
}

/// Prompt-ready schema block:
///
/// ```text
/// # Table Pets, columns = [ * , PetID , PetType , pet_age , weight ]
/// # Foreign_keys = [ Has_Pet.PetID = Pets.PetID ]
/// ```
pub fn format_schema_block(schema: &DatabaseSchema) -> String {
    let mut lines: Vec<String> = schema
        .tables
        .iter()
        .map(|t| {
            let mut cols = vec!["*"];
            cols.extend(t.columns.iter().map(|c| c.name.as_str()));
            format!("# Table {}, columns = [ {} ]", t.name, cols.join(" , "))
        })
        .collect();
    let fks: Vec<String> = schema
        .foreign_keys
        .iter()
        .map(|fk| format!("{} = {}", fk.0, fk.1))
        .collect();
    if fks.is_empty() {
        lines.push("# Foreign_keys = [ ]".to_string());
    } else {
        lines.push(format!("# Foreign_keys = [ {} ]", fks.join(" , ")));
    }
    lines.join("\n")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedDatabase {
    pub schema: DatabaseSchema,
    pub annotation: String,
}

/// One line of the annotation store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub db_id: String,
    pub model_id: String,
    pub annotation: String,
}

/// Reads the annotation store. A missing file is an empty store; later lines win.
pub fn load_annotations(path: &Path) -> Result<BTreeMap<String, AnnotationRecord>, SchemaDbError> {
    let mut out = BTreeMap::new();
    if !path.exists() {
        return Ok(out);
    }
    for (line_no, line) in read_lines(path)? {
        let record: AnnotationRecord =
            serde_json::from_str(&line).map_err(|e| SchemaDbError::RecordInvalid {
                path: path.to_path_buf(),
                line: line_no,
                reason: e.to_string(),
            })?;
        if record.annotation.trim().is_empty() {
            return Err(SchemaDbError::RecordInvalid {
                path: path.to_path_buf(),
                line: line_no,
                reason: format!("empty annotation for {:?}", record.db_id),
            });
        }
        out.insert(record.db_id.clone(), record);
    }
    Ok(out)
}

pub fn append_annotation(path: &Path, record: &AnnotationRecord) -> Result<(), SchemaDbError> {
    append_json_line(path, record)
}

pub(crate) fn append_json_line<T: Serialize>(path: &Path, value: &T) -> Result<(), SchemaDbError> {
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    let mut line = serde_json::to_string(value).expect("record serializes");
    line.push('\n');
    file.write_all(line.as_bytes()).map_err(io_err(path))
}

/// Non-blank lines with 1-based line numbers.
pub(crate) fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, SchemaDbError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub example_id: String,
    pub nlq: String,
    #[serde(rename = "dvq")]
    pub gold_dvq: String,
    pub db_id: String,
    pub chart: ChartType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hardness: Option<String>,
}

impl Example {
    fn check(&self, schemas: &BTreeMap<String, DatabaseSchema>) -> Result<(), String> {
        if self.example_id.trim().is_empty() {
            return Err("empty example_id".into());
        }
        if self.nlq.trim().is_empty() {
            return Err(format!("{}: empty nlq", self.example_id));
        }
        let parsed = dvq::parse_dvq(&self.gold_dvq)
            .map_err(|e| format!("{}: gold DVQ does not parse: {e:?}", self.example_id))?;
        if parsed.chart != self.chart {
            return Err(format!(
                "{}: chart field {} disagrees with DVQ chart {}",
                self.example_id, self.chart, parsed.chart
            ));
        }
        if !schemas.contains_key(&self.db_id) {
            return Err(format!(
                "{}: unknown db_id {:?} (no schema file)",
                self.example_id, self.db_id
            ));
        }
        Ok(())
    }
}

/// Loads every `*.json` schema in a directory, keyed by `db_id`.
pub fn load_schemas(dir: &Path) -> Result<BTreeMap<String, DatabaseSchema>, SchemaDbError> {
    let entries = fs::read_dir(dir).map_err(io_err(dir))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut out = BTreeMap::new();
    for path in paths {
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let schema: DatabaseSchema =
            serde_json::from_str(&text).map_err(|e| SchemaDbError::RecordInvalid {
                path: path.clone(),
                line: e.line(),
                reason: e.to_string(),
            })?;
        schema.validate()?;
        if out.contains_key(&schema.db_id) {
            return Err(SchemaDbError::SchemaInvalid {
                db_id: schema.db_id,
                reason: format!("defined twice (again in {})", path.display()),
            });
        }
        out.insert(schema.db_id.clone(), schema);
    }
    Ok(out)
}

/// Loads a JSONL corpus, validating every record against `schemas`.
pub fn load_examples(
    path: &Path,
    schemas: &BTreeMap<String, DatabaseSchema>,
) -> Result<Vec<Example>, SchemaDbError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line_no, line) in read_lines(path)? {
        let invalid = |reason: String| SchemaDbError::RecordInvalid {
            path: path.to_path_buf(),
            line: line_no,
            reason,
        };
        let example: Example = serde_json::from_str(&line).map_err(|e| invalid(e.to_string()))?;
        example.check(schemas).map_err(invalid)?;
        if !seen.insert(example.example_id.clone()) {
            return Err(invalid(format!("duplicate example_id {:?}", example.example_id)));
        }
        out.push(example);
    }
    Ok(out)
}

/// Writes examples in canonical field order, one per line.
pub fn write_examples(path: &Path, examples: &[Example]) -> Result<(), SchemaDbError> {
    let mut text = String::new();
    for example in examples {
        text.push_str(&serde_json::to_string(example).expect("example serializes"));
        text.push('\n');
    }
    fs::write(path, text).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
}

/// Bucket sizes by largest-remainder rounding, then at least one example per bucket.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> Result<[usize; 3], SchemaDbError> {
    let total: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !r.is_finite() || *r <= 0.0) || (total - 100.0).abs() > 1e-9 {
        return Err(SchemaDbError::InvalidRatios(ratios));
    }
    if n < 3 {
        return Err(SchemaDbError::TooFewExamples(n));
    }
    let quotas = ratios.map(|r| n as f64 * r / 100.0);
    // tolerance keeps exact products like 1000 * 4.5 / 100 from flooring down
    let mut sizes = quotas.map(|q| (q + 1e-9).floor() as usize);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - sizes[a] as f64;
        let rb = quotas[b] - sizes[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let assigned: usize = sizes.iter().sum();
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    for i in 0..3 {
        if sizes[i] == 0 {
            let donor = (0..3).max_by_key(|&j| (sizes[j], std::cmp::Reverse(j))).unwrap();
            sizes[donor] -= 1;
            sizes[i] = 1;
        }
    }
    Ok(sizes)
}

/// Seeded shuffle followed by contiguous slicing into train/dev/test.
pub fn split_dataset(
    mut examples: Vec<Example>,
    ratios: [f64; 3],
    seed: u64,
) -> Result<DatasetSplit, SchemaDbError> {
    let [n_train, n_dev, _] = split_sizes(examples.len(), ratios)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    examples.shuffle(&mut rng);
    let test = examples.split_off(n_train + n_dev);
    let dev = examples.split_off(n_train);
    Ok(DatasetSplit {
        train: examples,
        dev,
        test,
    })
}

/// A fully loaded dataset directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub schemas: BTreeMap<String, DatabaseSchema>,
    pub split: DatasetSplit,
}

impl Dataset {
    pub fn load(dir: &Path, seed: u64) -> Result<Self, SchemaDbError> {
        let schemas = load_schemas(&dir.join("schemas"))?;
        let train_path = dir.join("train.jsonl");
        let split = if train_path.exists() {
            let dev_path = dir.join("dev.jsonl");
            let split = DatasetSplit {
                train: load_examples(&train_path, &schemas)?,
                dev: if dev_path.exists() {
                    load_examples(&dev_path, &schemas)?
                } else {
                    Vec::new()
                },
                test: load_examples(&dir.join("test.jsonl"), &schemas)?,
            };
            let mut ids = HashSet::new();
            for e in split.train.iter().chain(&split.dev).chain(&split.test) {
                if !ids.insert(e.example_id.as_str()) {
                    return Err(SchemaDbError::RecordInvalid {
                        path: dir.to_path_buf(),
                        line: 0,
                        reason: format!("example_id {:?} appears in more than one split", e.example_id),
                    });
                }
            }
            split
        } else {
            let all = load_examples(&dir.join("examples.jsonl"), &schemas)?;
            split_dataset(all, DEFAULT_SPLIT, seed)?
        };
        Ok(Self { schemas, split })
    }
}
