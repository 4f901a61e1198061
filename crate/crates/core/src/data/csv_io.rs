use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::numeric::Matrix;
use crate::scalar::Real;

/// A column picked by zero-based position or by header name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

/// Which columns of a CSV file hold features and the label.
///
/// Defaults: label is the last column, features are all other columns,
/// and a header row is detected when the first row is not numeric.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsvSchema {
    pub label_column: Option<ColumnRef>,
    pub feature_columns: Option<Vec<ColumnRef>>,
    pub has_header: Option<bool>,
}

struct Table {
    header: Option<Vec<String>>,
    /// (line number, fields)
    rows: Vec<(usize, Vec<String>)>,
}

fn read_table(path: &Path, has_header: Option<bool>) -> Result<Table> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.into(),
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        rows.push((line, rec.iter().map(str::to_owned).collect::<Vec<_>>()));
    }
    let header_present = match has_header {
        Some(h) => h,
        None => rows
            .first()
            .is_some_and(|(_, f)| f.iter().any(|v| v.parse::<f64>().is_err())),
    };
    let header = if header_present && !rows.is_empty() {
        Some(rows.remove(0).1)
    } else {
        None
    };
    if let Some((line, first)) = rows.first() {
        let width = first.len();
        if let Some((l, r)) = rows.iter().find(|(_, r)| r.len() != width) {
            return Err(Error::Parse {
                path: path.into(),
                line: *l,
                message: format!("expected {width} fields (as on line {line}), found {}", r.len()),
            });
        }
    }
    Ok(Table { header, rows })
}

fn resolve(col: &ColumnRef, header: Option<&[String]>, width: usize, path: &Path) -> Result<usize> {
    let idx = match col {
        ColumnRef::Index(i) => Some(*i),
        ColumnRef::Name(n) => header.and_then(|h| h.iter().position(|c| c == n)),
    };
    match idx {
        Some(i) if i < width => Ok(i),
        _ => Err(Error::Parse {
            path: path.into(),
            line: 1,
            message: format!("column {col:?} not found"),
        }),
    }
}

fn parse_feature<T: Real>(raw: &str, path: &Path, line: usize, row: usize) -> Result<T> {
    let v: f64 = raw.parse().map_err(|_| Error::Parse {
        path: path.into(),
        line,
        message: format!("row {row}: cannot parse feature `{raw}`"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            path: path.into(),
            line,
            message: format!("row {row}: non-finite feature `{raw}`"),
        });
    }
    Ok(T::lit(v))
}

fn parse_label(raw: &str, path: &Path, line: usize, row: usize) -> Result<usize> {
    if let Ok(v) = raw.parse::<usize>() {
        return Ok(v);
    }
    match raw.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.fract() == 0.0 && v < u32::MAX as f64 => Ok(v as usize),
        _ => Err(Error::Parse {
            path: path.into(),
            line,
            message: format!("row {row}: label `{raw}` is not a non-negative integer"),
        }),
    }
}

/// Reads a labeled dataset. `K` is the largest label plus one; classes with
/// no rows are reported in the returned warnings.
pub fn load_csv<T: Real>(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<(Dataset<T>, Vec<String>)> {
    let path = path.as_ref();
    let table = read_table(path, schema.has_header)?;
    let Some((_, first)) = table.rows.first() else {
        return Err(Error::Parse {
            path: path.into(),
            line: 1,
            message: "no data rows".into(),
        });
    };
    let width = first.len();
    let header = table.header.as_deref();
    let label_col = match &schema.label_column {
        Some(c) => resolve(c, header, width, path)?,
        None => width - 1,
    };
    let feature_cols: Vec<usize> = match &schema.feature_columns {
        Some(cols) => cols
            .iter()
            .map(|c| resolve(c, header, width, path))
            .collect::<Result<_>>()?,
        None => (0..width).filter(|&c| c != label_col).collect(),
    };
    if feature_cols.is_empty() {
        return Err(Error::config("feature_columns", "no feature columns"));
    }

    let mut data = Vec::with_capacity(table.rows.len() * feature_cols.len());
    let mut labels = Vec::with_capacity(table.rows.len());
    for (row, (line, fields)) in table.rows.iter().enumerate() {
        for &c in &feature_cols {
            data.push(parse_feature(&fields[c], path, *line, row)?);
        }
        labels.push(parse_label(&fields[label_col], path, *line, row)?);
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let features = Matrix::new(labels.len(), feature_cols.len(), data)?;
    let name = path
        .file_stem()
        .map_or_else(|| "csv".to_owned(), |s| s.to_string_lossy().into_owned());
    let ds = Dataset::new_unchecked_classes(name, features, labels, k, 0)?;
    let warnings = ds
        .missing_classes()
        .into_iter()
        .map(|c| format!("{}: class {c} has no rows", path.display()))
        .collect::<Vec<_>>();
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok((ds, warnings))
}

/// Reads every column as a feature.
pub fn load_feature_matrix<T: Real>(path: impl AsRef<Path>) -> Result<Matrix<T>> {
    let path = path.as_ref();
    let table = read_table(path, None)?;
    let width = table.rows.first().map_or(0, |(_, r)| r.len());
    let mut data = Vec::with_capacity(table.rows.len() * width);
    for (row, (line, fields)) in table.rows.iter().enumerate() {
        for f in fields {
            data.push(parse_feature(f, path, *line, row)?);
        }
    }
    Matrix::new(table.rows.len(), width, data)
}

/// Writes `f0,…,f{d-1},label` with a header row. Values use the shortest
/// representation that round-trips.
pub fn save_csv<T: Real>(ds: &Dataset<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    let header: Vec<String> = (0..ds.dim()).map(|c| format!("f{c}")).collect();
    out.push_str(&header.join(","));
    out.push_str(",label\n");
    for (row, label) in ds.features().row_iter().zip(ds.labels()) {
        for v in row {
            out.push_str(&format!("{},", v.to_f64_lossy()));
        }
        out.push_str(&format!("{label}\n"));
    }
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_gaussian_mixture, GaussianMixtureSpec};

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn reads_headerless_three_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "1,2,0\n3,4,1\n5,6,0\n");
        let (ds, warnings) = load_csv::<f64>(&p, &CsvSchema::default()).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(ds.features().shape(), (3, 2));
        assert_eq!(ds.features().row(2), &[5.0, 6.0]);
        assert_eq!(ds.labels(), &[0, 1, 0]);
        assert_eq!(ds.class_count(), 2);
    }

    #[test]
    fn named_columns_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "b.csv", "y,a,b\n1,0.5,1.5\n0,2,3\n");
        let schema = CsvSchema {
            label_column: Some(ColumnRef::Name("y".into())),
            feature_columns: Some(vec![ColumnRef::Name("b".into()), ColumnRef::Index(1)]),
            has_header: None,
        };
        let (ds, _) = load_csv::<f64>(&p, &schema).unwrap();
        assert_eq!(ds.features().row(0), &[1.5, 0.5]);
        assert_eq!(ds.labels(), &[1, 0]);
    }

    #[test]
    fn nan_feature_names_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "c.csv", "1,2,0\nNaN,4,1\n");
        let err = load_csv::<f64>(&p, &CsvSchema::default()).unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("row 1"), "{message}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn missing_class_is_a_warning() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d.csv", "1,2,0\n3,4,2\n");
        let (ds, warnings) = load_csv::<f64>(&p, &CsvSchema::default()).unwrap();
        assert_eq!(ds.class_count(), 3);
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("class 1"));
    }

    #[test]
    fn ragged_rows_report_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "e.csv", "1,2,0\n3,1\n");
        assert!(matches!(
            load_csv::<f64>(&p, &CsvSchema::default()),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn save_then_load_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_gaussian_mixture::<f64>(
            4,
            &GaussianMixtureSpec {
                classes: 3,
                per_class: 7,
                dim: 3,
                separation: 2.5,
                distractor_classes: 0,
            },
        )
        .unwrap();
        let p = dir.path().join(format!("{}.csv", ds.name));
        save_csv(&ds, &p).unwrap();
        let (back, _) = load_csv::<f64>(&p, &CsvSchema::default()).unwrap();
        assert_eq!(back.features(), ds.features());
        assert_eq!(back.labels(), ds.labels());
        assert_eq!(back.class_count(), ds.class_count());
    }
}
