//! Schema-driven CSV ingestion: one-hot encoding with train-fitted
//! vocabularies, an explicit unseen bucket for test-time novelties, and
//! optional frequency-capped feature selection.

use std::collections::BTreeMap;
use std::path::Path;

use super::schema::{Schema, SplitSpec};
use super::{DataError, Split, TabularDataset};
use crate::tensor::Tensor;

const UNSEEN: &str = "<unseen>";

/// Load a CSV with a header row. Preprocessing (category vocabularies,
/// feature selection) is fitted on the train split only and applied
/// unchanged elsewhere.
pub fn load_csv(
    path: &Path,
    schema: &Schema,
    split_spec: &SplitSpec,
) -> Result<TabularDataset, DataError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.to_string()).collect();

    let col_index = |name: &str| -> Result<usize, DataError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let s_col = col_index(&schema.s_column)?;
    let y_col = col_index(&schema.y_column)?;
    for c in schema.categorical.iter().chain(&schema.drop) {
        col_index(c)?;
    }

    let mut feature_cols: Vec<usize> = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if i == s_col || i == y_col || schema.drop.iter().any(|d| d == h) {
            continue;
        }
        feature_cols.push(i);
    }
    if feature_cols.is_empty() {
        return Err(DataError::Schema("no feature columns left after drops".into()));
    }

    // Buffer all rows; line numbers are 1-based with the header on line 1.
    let mut rows: Vec<Vec<String>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| DataError::Parse {
            line: i + 2,
            detail: format!("unparseable row: {e}"),
        })?;
        if record.len() != headers.len() {
            return Err(DataError::Parse {
                line: i + 2,
                detail: format!("expected {} fields, got {}", headers.len(), record.len()),
            });
        }
        rows.push(record.iter().map(|f| f.trim().to_string()).collect());
    }
    let n = rows.len();
    if n == 0 {
        return Err(DataError::Schema("dataset has no rows".into()));
    }

    let split = split_spec.assign(n)?;
    let train_rows: Vec<usize> = (0..n).filter(|&i| split[i] == Split::Train).collect();
    if train_rows.is_empty() {
        return Err(DataError::Split("train split is empty".into()));
    }

    // Vocabulary for a target column: declared order, or sorted train values.
    let fit_values = |col: usize, declared: &Option<Vec<String>>, skip_empty: bool| {
        match declared {
            Some(v) => v.clone(),
            None => {
                let mut uniq: Vec<String> = train_rows
                    .iter()
                    .map(|&r| rows[r][col].clone())
                    .filter(|v| !(skip_empty && v.is_empty()))
                    .collect();
                uniq.sort();
                uniq.dedup();
                uniq
            }
        }
    };
    let s_values = fit_values(s_col, &schema.s_values, false);
    let y_values = fit_values(y_col, &schema.y_values, true);
    if s_values.len() < 2 {
        return Err(DataError::Schema(format!(
            "s column {:?} has {} distinct train values; need at least 2",
            schema.s_column,
            s_values.len()
        )));
    }
    if y_values.is_empty() {
        return Err(DataError::Schema(format!(
            "y column {:?} has no labeled train values",
            schema.y_column
        )));
    }

    let lookup = |values: &[String], cell: &str, what: &str, line: usize| {
        values.iter().position(|v| v == cell).ok_or_else(|| DataError::Parse {
            line,
            detail: format!("{what} value {cell:?} not among declared/train values"),
        })
    };

    let mut s = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for (i, row) in rows.iter().enumerate() {
        s.push(lookup(&s_values, &row[s_col], "s", i + 2)?);
        let cell = &row[y_col];
        if cell.is_empty() {
            y.push(None);
        } else {
            y.push(Some(lookup(&y_values, cell, "y", i + 2)?));
        }
    }

    // Categorical vocabularies from train rows; one extra unseen bucket per
    // column absorbs test-time novelties.
    let mut encoders: Vec<ColumnEncoder> = Vec::new();
    for &c in &feature_cols {
        let name = headers[c].clone();
        if schema.categorical.contains(&name) {
            let mut vocab: Vec<String> =
                train_rows.iter().map(|&r| rows[r][c].clone()).collect();
            vocab.sort();
            vocab.dedup();
            encoders.push(ColumnEncoder::Categorical { col: c, name, vocab });
        } else {
            encoders.push(ColumnEncoder::Numeric { col: c, name });
        }
    }

    let mut feature_names: Vec<String> = Vec::new();
    for e in &encoders {
        match e {
            ColumnEncoder::Numeric { name, .. } => feature_names.push(name.clone()),
            ColumnEncoder::Categorical { name, vocab, .. } => {
                for v in vocab {
                    feature_names.push(format!("{name}={v}"));
                }
                feature_names.push(format!("{name}={UNSEEN}"));
            }
        }
    }

    let width = feature_names.len();
    let mut x = vec![0.0; n * width];
    for (i, row) in rows.iter().enumerate() {
        let mut offset = 0;
        for e in &encoders {
            match e {
                ColumnEncoder::Numeric { col, name } => {
                    let cell = &row[*col];
                    let v: f64 = cell.parse().map_err(|_| DataError::Parse {
                        line: i + 2,
                        detail: format!("column {name:?}: cannot parse {cell:?} as a number"),
                    })?;
                    x[i * width + offset] = v;
                    offset += 1;
                }
                ColumnEncoder::Categorical { col, vocab, .. } => {
                    let cell = &row[*col];
                    let slot = vocab.iter().position(|v| v == cell).unwrap_or(vocab.len());
                    x[i * width + offset + slot] = 1.0;
                    offset += vocab.len() + 1;
                }
            }
        }
    }
    let mut x = Tensor::matrix(n, width, x);

    if let Some(cap) = schema.max_features {
        if cap < width {
            let keep = top_columns_by_train_mass(&x, &train_rows, cap);
            let mut data = Vec::with_capacity(n * cap);
            for r in 0..n {
                let row = x.row(r);
                data.extend(keep.iter().map(|&c| row[c]));
            }
            feature_names = keep.iter().map(|&c| feature_names[c].clone()).collect();
            x = Tensor::matrix(n, cap, data);
        }
    }

    let ds = TabularDataset {
        x,
        s,
        y,
        split,
        s_states: s_values.len(),
        y_classes: y_values.len(),
        feature_names,
        s_values,
        y_values,
    };
    ds.validate()?;
    Ok(ds)
}

enum ColumnEncoder {
    Numeric { col: usize, name: String },
    Categorical { col: usize, name: String, vocab: Vec<String> },
}

/// Indices of the `cap` columns with the largest train-split mass (column
/// sums of absolute values), in their original order.
fn top_columns_by_train_mass(x: &Tensor, train_rows: &[usize], cap: usize) -> Vec<usize> {
    let width = x.cols();
    let mut mass = vec![0.0f64; width];
    for &r in train_rows {
        for (c, v) in x.row(r).iter().enumerate() {
            mass[c] += v.abs();
        }
    }
    let mut by_mass: Vec<usize> = (0..width).collect();
    // Stable ranking: mass descending, original index ascending on ties.
    by_mass.sort_by(|&a, &b| {
        mass[b].partial_cmp(&mass[a]).unwrap().then(a.cmp(&b))
    });
    let mut keep: Vec<usize> = by_mass.into_iter().take(cap).collect();
    keep.sort_unstable();
    keep
}

/// Re-export a dataset's encoded matrix with its labels, mainly for
/// round-trip tests and interop checks.
#[allow(dead_code)]
pub(crate) fn dataset_to_csv(ds: &TabularDataset) -> String {
    let mut out = String::new();
    let mut header: Vec<String> = ds.feature_names.clone();
    header.push("__s".into());
    header.push("__y".into());
    out.push_str(&header.join(","));
    out.push('\n');
    for r in 0..ds.len() {
        let mut fields: Vec<String> = ds.x.row(r).iter().map(|v| format!("{v}")).collect();
        fields.push(ds.s_values[ds.s[r]].clone());
        fields.push(match ds.y[r] {
            Some(y) => ds.y_values[y].clone(),
            None => String::new(),
        });
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Value-count summary per split, for reports and logs.
#[allow(dead_code)]
pub(crate) fn split_sizes(ds: &TabularDataset) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for sp in [Split::Train, Split::Validation, Split::Test] {
        m.insert(sp.to_string(), ds.rows_in(sp).len());
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_csv(dir: &Path, name: &str, contents: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, contents).unwrap();
        p
    }

    fn toy_schema() -> Schema {
        Schema {
            s_column: "grp".into(),
            y_column: "label".into(),
            drop: vec![],
            categorical: vec!["color".into()],
            s_values: None,
            y_values: None,
            max_features: None,
        }
    }

    fn all_train() -> SplitSpec {
        SplitSpec::Fractions { train: 1.0, validation: 0.0, test: 0.0, seed: 0 }
    }

    #[test]
    fn loads_and_encodes_a_toy_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv(
            dir.path(),
            "toy.csv",
            "age,color,grp,label\n1.5,red,a,yes\n2.0,blue,b,no\n0.5,red,a,yes\n",
        );
        let ds = load_csv(&p, &toy_schema(), &all_train()).unwrap();
        assert_eq!(ds.len(), 3);
        // age + color one-hot (blue, red, unseen)
        assert_eq!(ds.feature_names, vec!["age", "color=blue", "color=red", "color=<unseen>"]);
        assert_eq!(ds.x.row(0), &[1.5, 0.0, 1.0, 0.0]);
        assert_eq!(ds.s, vec![0, 1, 0]);
        assert_eq!(ds.s_states, 2, "two s states produce 2 one-hot columns downstream");
        assert_eq!(ds.y, vec![Some(1), Some(0), Some(1)]); // sorted: no, yes
    }

    #[test]
    fn round_trips_through_export() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv(
            dir.path(),
            "toy.csv",
            "age,color,grp,label\n1.5,red,a,yes\n2.0,blue,b,no\n0.5,red,a,yes\n",
        );
        let ds = load_csv(&p, &toy_schema(), &all_train()).unwrap();
        let exported = dataset_to_csv(&ds);
        let p2 = write_csv(dir.path(), "toy2.csv", &exported);
        let schema2 = Schema {
            s_column: "__s".into(),
            y_column: "__y".into(),
            drop: vec![],
            categorical: vec![],
            s_values: None,
            y_values: None,
            max_features: None,
        };
        let ds2 = load_csv(&p2, &schema2, &all_train()).unwrap();
        assert_eq!(ds.x.data(), ds2.x.data());
        assert_eq!(ds.s, ds2.s);
        assert_eq!(ds.y, ds2.y);
    }

    #[test]
    fn missing_column_is_reported_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv(dir.path(), "t.csv", "a,b\n1,2\n");
        let err = load_csv(&p, &toy_schema(), &all_train()).unwrap_err();
        assert!(matches!(err, DataError::MissingColumn(ref c) if c == "grp"), "{err}");
    }

    #[test]
    fn bad_numeric_cell_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv(
            dir.path(),
            "t.csv",
            "age,color,grp,label\n1.0,red,a,yes\noops,red,b,no\n",
        );
        let err = load_csv(&p, &toy_schema(), &all_train()).unwrap_err();
        match err {
            DataError::Parse { line, detail } => {
                assert_eq!(line, 3);
                assert!(detail.contains("oops"), "{detail}");
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn unseen_test_category_maps_to_the_unseen_bucket() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv(
            dir.path(),
            "t.csv",
            "age,color,grp,label\n1,red,a,yes\n2,red,b,no\n3,green,a,yes\n",
        );
        // Row 2 (green) goes to test via explicit split files.
        let train = dir.path().join("train.idx");
        let test = dir.path().join("test.idx");
        std::fs::write(&train, "0\n1\n").unwrap();
        std::fs::write(&test, "2\n").unwrap();
        let ds = load_csv(
            &p,
            &toy_schema(),
            &SplitSpec::Files { train, validation: None, test },
        )
        .unwrap();
        // Vocab from train: {red}; green lands in the unseen slot.
        assert_eq!(ds.feature_names, vec!["age", "color=red", "color=<unseen>"]);
        assert_eq!(ds.x.row(2), &[3.0, 0.0, 1.0]);
    }

    #[test]
    fn unlabeled_rows_get_no_sentinel_class() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv(
            dir.path(),
            "t.csv",
            "age,color,grp,label\n1,red,a,yes\n2,red,b,\n3,red,a,no\n",
        );
        let ds = load_csv(&p, &toy_schema(), &all_train()).unwrap();
        assert_eq!(ds.y[1], None);
        assert_eq!(ds.y_classes, 2);
    }

    #[test]
    fn feature_cap_keeps_heaviest_train_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv(
            dir.path(),
            "t.csv",
            "c1,c2,c3,grp,label\n0,5,1,a,yes\n0,7,1,b,no\n1,6,0,a,yes\n",
        );
        let mut schema = toy_schema();
        schema.categorical = vec![];
        schema.max_features = Some(2);
        let ds = load_csv(&p, &schema, &all_train()).unwrap();
        assert_eq!(ds.feature_names, vec!["c2", "c3"]);
        assert_eq!(ds.x_dim(), 2);
    }
}
