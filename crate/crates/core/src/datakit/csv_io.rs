use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

/// Maps a file name fragment to a class id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassRule {
    /// Case-insensitive substring of the file name.
    pub pattern: String,
    pub class: usize,
}

/// Column and naming layout of a directory of per-(device, class) CSV files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    pub n_features: usize,
    pub class_names: Vec<String>,
    /// First matching rule wins.
    pub rules: Vec<ClassRule>,
}

impl Default for CsvSchema {
    /// N-BaIoT layout: 115 features, files like `1.benign.csv`,
    /// `1.gafgyt.combo.csv`, `1.mirai.ack.csv`.
    fn default() -> Self {
        let rule = |pattern: &str, class| ClassRule {
            pattern: pattern.into(),
            class,
        };
        Self {
            n_features: 115,
            class_names: ["benign", "gafgyt", "mirai"].map(String::from).to_vec(),
            rules: vec![
                rule("benign", 0),
                rule("gafgyt", 1),
                rule("bashlite", 1),
                rule("mirai", 2),
            ],
        }
    }
}

impl CsvSchema {
    fn class_of(&self, file_name: &str) -> Option<usize> {
        let lower = file_name.to_lowercase();
        self.rules
            .iter()
            .find(|r| lower.contains(&r.pattern.to_lowercase()))
            .map(|r| r.class)
    }
}

/// Load every `*.csv` in `dir` (sorted by file name) into one dataset.
///
/// Rows keep file order, then in-file order. Values are parsed as written;
/// no scaling happens here.
pub fn load_csv_dir(dir: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let dir = dir.as_ref();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|ext| ext.eq_ignore_ascii_case("csv")) {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::EmptyDataset("no CSV files in directory"));
    }

    let width = schema.n_features;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for path in &files {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let class = schema.class_of(&name).ok_or_else(|| Error::Csv {
            file: name.clone(),
            row: 0,
            message: "cannot infer class from file name".into(),
        })?;
        if class >= schema.class_names.len() {
            return Err(Error::config(format!("rule maps {name} to unknown class {class}")));
        }
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_path(path)
            .map_err(|e| Error::Csv {
                file: name.clone(),
                row: 0,
                message: e.to_string(),
            })?;
        let header_len = reader
            .headers()
            .map_err(|e| Error::Csv {
                file: name.clone(),
                row: 0,
                message: e.to_string(),
            })?
            .len();
        if header_len != width {
            return Err(Error::ColumnCount {
                file: name,
                row: 0,
                expected: width,
                found: header_len,
            });
        }
        for (i, record) in reader.records().enumerate() {
            // 1-based data row numbers; the header is row 0
            let row = i + 1;
            let record = record.map_err(|e| Error::Csv {
                file: name.clone(),
                row,
                message: e.to_string(),
            })?;
            if record.len() != width {
                return Err(Error::ColumnCount {
                    file: name,
                    row,
                    expected: width,
                    found: record.len(),
                });
            }
            for (col, cell) in record.iter().enumerate() {
                let v: f64 = cell.trim().parse().map_err(|_| Error::Csv {
                    file: name.clone(),
                    row,
                    message: format!("non-numeric cell {cell:?} in column {col}"),
                })?;
                values.push(v);
            }
            labels.push(class);
        }
    }
    let features = Array2::from_shape_vec((labels.len(), width), values).map_err(|e| Error::shape(e.to_string()))?;
    Dataset::new(features, labels, schema.class_names.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fmt::Write as _;

    fn schema(width: usize) -> CsvSchema {
        CsvSchema {
            n_features: width,
            ..CsvSchema::default()
        }
    }

    fn write_csv(dir: &Path, name: &str, width: usize, rows: usize, base: f64) {
        let mut s = (0..width).map(|j| format!("f{j}")).collect::<Vec<_>>().join(",");
        s.push('\n');
        for r in 0..rows {
            let row: Vec<String> = (0..width).map(|j| format!("{}", base + r as f64 + j as f64 * 0.5)).collect();
            writeln!(s, "{}", row.join(",")).unwrap();
        }
        std::fs::write(dir.join(name), s).unwrap();
    }

    #[test]
    fn concatenates_in_file_order() {
        let dir = tempfile::tempdir().unwrap();
        write_csv(dir.path(), "benign.csv", 4, 10, 0.0);
        write_csv(dir.path(), "mirai_ack.csv", 4, 5, 100.0);
        let ds = load_csv_dir(dir.path(), &schema(4)).unwrap();
        assert_eq!(ds.len(), 15);
        let mut want = vec![0; 10];
        want.extend(vec![2; 5]);
        assert_eq!(ds.labels, want);
        assert_eq!(ds.features[[10, 0]], 100.0);
    }

    #[test]
    fn column_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        write_csv(dir.path(), "1.benign.csv", 114, 3, 0.0);
        let err = load_csv_dir(dir.path(), &CsvSchema::default()).unwrap_err();
        assert!(err.to_string().contains("column count mismatch"), "{err}");
    }

    #[test]
    fn short_row_is_a_column_count_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("benign.csv"), "a,b\n1,2\n3\n").unwrap();
        let err = load_csv_dir(dir.path(), &schema(2)).unwrap_err();
        assert!(matches!(err, Error::ColumnCount { row: 2, .. }), "{err}");
    }

    #[test]
    fn non_numeric_cell_names_file_and_row() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("x.gafgyt.udp.csv"), "a,b\n1,2\n3,oops\n").unwrap();
        let err = load_csv_dir(dir.path(), &schema(2)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("x.gafgyt.udp.csv") && msg.contains("row 2"), "{msg}");
    }

    #[test]
    fn missing_directory() {
        let err = load_csv_dir("/definitely/not/here", &schema(2)).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn unknown_file_name() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("weird.csv"), "a\n1\n").unwrap();
        assert!(load_csv_dir(dir.path(), &schema(1)).is_err());
    }
}
