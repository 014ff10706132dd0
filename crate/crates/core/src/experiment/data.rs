//! Labelled datasets: LIBSVM and CSV readers, a LIBSVM writer and the
//! seeded uniform partition across workers.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Dense feature matrix with `±1` labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: DMatrix<f64>,
    pub labels: DVector<f64>,
}

/// One worker's share of a dataset.
pub type DatasetShard = Dataset;

impl Dataset {
    pub fn new(features: DMatrix<f64>, labels: DVector<f64>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: features.nrows(),
                found: labels.len(),
            });
        }
        if features.nrows() == 0 {
            return Err(Error::InvalidProblem("dataset has no rows".into()));
        }
        if let Some(j) = labels.iter().position(|&y| y != 1.0 && y != -1.0) {
            return Err(Error::InvalidProblem(format!(
                "label {} at row {j} is not ±1",
                labels[j]
            )));
        }
        Ok(Self { features, labels })
    }

    pub fn rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }
}

/// Maps a raw label to `±1`: positive values become `+1`; `0` and negative
/// values become `-1` (so both `{-1, +1}` and `{0, 1}` conventions work).
fn map_label(raw: f64) -> f64 {
    if raw > 0.0 {
        1.0
    } else {
        -1.0
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Reads a LIBSVM file (`label idx:value ...`, 1-based ascending indices).
/// Missing entries are zero. `dim` fixes the feature count; otherwise the
/// largest index seen is used.
pub fn parse_libsvm(path: &Path, dim: Option<usize>) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<(f64, Vec<(usize, f64)>)> = Vec::new();
    let mut max_idx = 0;
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let label_tok = tokens.next().expect("non-empty line has a token");
        let label: f64 = label_tok
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("bad label '{label_tok}'")))?;
        if !label.is_finite() {
            return Err(parse_err(path, lineno, "label is not finite"));
        }
        let mut entries = Vec::new();
        let mut last = 0usize;
        for tok in tokens {
            let (i, v) = tok.split_once(':').ok_or_else(|| {
                parse_err(path, lineno, format!("expected idx:value, got '{tok}'"))
            })?;
            let idx: usize = i
                .parse()
                .map_err(|_| parse_err(path, lineno, format!("bad index '{i}'")))?;
            if idx == 0 {
                return Err(parse_err(path, lineno, "indices are 1-based"));
            }
            if idx <= last {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("index {idx} does not ascend (previous {last})"),
                ));
            }
            let val: f64 = v
                .parse()
                .map_err(|_| parse_err(path, lineno, format!("bad value '{v}'")))?;
            if !val.is_finite() {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("value at index {idx} is not finite"),
                ));
            }
            last = idx;
            entries.push((idx, val));
        }
        max_idx = max_idx.max(last);
        rows.push((map_label(label), entries));
    }
    let n = match dim {
        Some(d) if d < max_idx => {
            return Err(Error::InvalidProblem(format!(
                "{}: feature index {max_idx} exceeds declared dimension {d}",
                path.display()
            )))
        }
        Some(d) => d,
        None => max_idx,
    };
    let m = rows.len();
    let mut features = DMatrix::zeros(m, n);
    let mut labels = DVector::zeros(m);
    for (r, (y, entries)) in rows.into_iter().enumerate() {
        labels[r] = y;
        for (idx, v) in entries {
            features[(r, idx - 1)] = v;
        }
    }
    Dataset::new(features, labels)
}

/// Writes a dataset in LIBSVM format, omitting zero entries. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn write_libsvm(path: &Path, data: &Dataset) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for r in 0..data.rows() {
        write!(out, "{}", if data.labels[r] > 0.0 { "+1" } else { "-1" })?;
        for j in 0..data.dim() {
            let v = data.features[(r, j)];
            if v != 0.0 {
                write!(out, " {}:{v:?}", j + 1)?;
            }
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Writes a headerless CSV with the ±1 label in the first column.
pub fn write_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in 0..data.rows() {
        let mut rec = vec![format!("{:?}", data.labels[r])];
        rec.extend((0..data.dim()).map(|j| format!("{:?}", data.features[(r, j)])));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a headerless CSV whose first column is the label and the remaining
/// columns are features.
pub fn parse_csv(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut labels = Vec::new();
    let mut values = Vec::new();
    let mut width = None;
    for (r, rec) in reader.records().enumerate() {
        let line = r + 1;
        let rec = rec?;
        if rec.len() < 2 {
            return Err(parse_err(
                path,
                line,
                "need a label and at least one feature",
            ));
        }
        match width {
            None => width = Some(rec.len()),
            Some(w) if w != rec.len() => {
                return Err(parse_err(
                    path,
                    line,
                    format!("expected {w} fields, got {}", rec.len()),
                ))
            }
            _ => {}
        }
        let mut fields = rec.iter().map(|t| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(path, line, format!("bad number '{t}'")))
        });
        labels.push(map_label(fields.next().expect("two fields")?));
        for f in fields {
            values.push(f?);
        }
    }
    let n = width.ok_or_else(|| parse_err(path, 0, "file has no rows"))? - 1;
    let m = labels.len();
    Dataset::new(
        DMatrix::from_row_slice(m, n, &values),
        DVector::from_vec(labels),
    )
}

/// Seeded shuffle followed by a contiguous split into `workers` shards whose
/// sizes differ by at most one (earlier shards take the remainder).
pub fn partition_uniform(data: &Dataset, workers: usize, seed: u64) -> Result<Vec<DatasetShard>> {
    let m = data.rows();
    if workers == 0 || workers > m {
        return Err(Error::InvalidProblem(format!(
            "cannot split {m} samples across {workers} workers"
        )));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (m / workers, m % workers);
    let mut shards = Vec::with_capacity(workers);
    let mut start = 0;
    for w in 0..workers {
        let size = base + usize::from(w < extra);
        let idx = &order[start..start + size];
        let features = data.features.select_rows(idx.iter());
        let labels = DVector::from_iterator(size, idx.iter().map(|&i| data.labels[i]));
        shards.push(Dataset::new(features, labels)?);
        start += size;
    }
    Ok(shards)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn libsvm_line_with_gap() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.svm", "+1 1:0.5 3:2.0\n");
        let d = parse_libsvm(&p, Some(3)).unwrap();
        assert_eq!(
            d.features.row(0).iter().copied().collect::<Vec<_>>(),
            vec![0.5, 0.0, 2.0]
        );
        assert_eq!(d.labels[0], 1.0);
    }

    #[test]
    fn zero_one_labels_map_to_signs() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "b.svm", "0 1:1\n1 2:1\n");
        let d = parse_libsvm(&p, None).unwrap();
        assert_eq!(d.labels.as_slice(), &[-1.0, 1.0]);
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        for body in [
            "+1 1:1\n-1 2:x\n",
            "+1 1:1\n+1 3:1 2:1\n",
            "+1 1:1\n+1 0:1\n",
            "+1 1:1\n+1 2-1\n",
        ] {
            let p = write(&dir, "c.svm", body);
            match parse_libsvm(&p, None) {
                Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
                other => panic!("expected parse error, got {other:?}"),
            }
        }
    }

    #[test]
    fn csv_reader() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "d.csv", "1, 0.5, 2\n0, -1, 3\n");
        let d = parse_csv(&p).unwrap();
        assert_eq!(d.dim(), 2);
        assert_eq!(d.labels.as_slice(), &[1.0, -1.0]);
        assert_eq!(d.features[(1, 1)], 3.0);
        let p = write(&dir, "e.csv", "1,2\n1,2,3\n");
        assert!(matches!(parse_csv(&p), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn partition_sizes() {
        let data = |m: usize| {
            Dataset::new(
                DMatrix::from_fn(m, 2, |i, j| (i * 2 + j) as f64),
                DVector::from_element(m, 1.0),
            )
            .unwrap()
        };
        let sizes = |m, n| {
            partition_uniform(&data(m), n, 3)
                .unwrap()
                .iter()
                .map(Dataset::rows)
                .collect::<Vec<_>>()
        };
        assert_eq!(sizes(10, 5), vec![2; 5]);
        assert_eq!(sizes(7, 3), vec![3, 2, 2]);
        assert!(partition_uniform(&data(2), 3, 0).is_err());
    }
}
