//! In-memory tabular data: named numeric columns, row order preserved.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error("column {name:?} appears more than once")]
    DuplicateColumn { name: String },
    #[error("row {row} has {got} values, expected {expected}")]
    RaggedRow {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("non-finite value at row {row}, column {column:?}")]
    NonFinite { row: usize, column: String },
    #[error("missing column {0:?}")]
    MissingColumn(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<String>,
    data: Vec<f64>,
    n: usize,
}

impl Dataset {
    /// Builds a dataset from row records. All entries must be finite.
    pub fn from_rows(columns: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self, DatasetError> {
        check_unique(&columns)?;
        let width = columns.len();
        let mut data = Vec::with_capacity(rows.len() * width);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(DatasetError::RaggedRow {
                    row: r,
                    got: row.len(),
                    expected: width,
                });
            }
            for (c, v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(DatasetError::NonFinite {
                        row: r,
                        column: columns[c].clone(),
                    });
                }
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            columns,
            data,
            n: rows.len(),
        })
    }

    /// Single-column convenience constructor.
    pub fn from_column(name: &str, values: Vec<f64>) -> Result<Self, DatasetError> {
        let rows = values.into_iter().map(|v| vec![v]).collect();
        Self::from_rows(vec![name.to_string()], rows)
    }

    pub fn from_columns(columns: Vec<(String, Vec<f64>)>) -> Result<Self, DatasetError> {
        let n = columns.first().map_or(0, |c| c.1.len());
        let names: Vec<String> = columns.iter().map(|c| c.0.clone()).collect();
        let mut rows = vec![Vec::with_capacity(names.len()); n];
        for (_, values) in &columns {
            if values.len() != n {
                return Err(DatasetError::RaggedRow {
                    row: values.len().min(n),
                    got: values.len(),
                    expected: n,
                });
            }
            for (row, v) in rows.iter_mut().zip(values) {
                row.push(*v);
            }
        }
        Self::from_rows(names, rows)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn column_names(&self) -> &[String] {
        &self.columns
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>, DatasetError> {
        let j = self
            .column_index(name)
            .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))?;
        Ok(self.rows().map(|r| r[j]).collect())
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.columns.len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        let w = self.columns.len().max(1);
        self.data.chunks_exact(w).take(self.n)
    }

    /// Subset of rows, in the order given.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let w = self.columns.len();
        let mut data = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            columns: self.columns.clone(),
            data,
            n: idx.len(),
        }
    }
}

fn check_unique(columns: &[String]) -> Result<(), DatasetError> {
    for (i, c) in columns.iter().enumerate() {
        if columns[..i].contains(c) {
            return Err(DatasetError::DuplicateColumn { name: c.clone() });
        }
    }
    Ok(())
}

/// Mean and sample variance (n - 1 denominator).
pub fn mean_and_variance(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    let var = if xs.len() > 1 { ss / (n - 1.0) } else { 0.0 };
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn columns_and_rows() {
        let d = Dataset::from_rows(
            vec!["a".into(), "b".into()],
            vec![vec![1.0, 2.0], vec![3.0, 4.0]],
        )
        .unwrap();
        assert_eq!(d.n(), 2);
        assert_eq!(d.column("b").unwrap(), vec![2.0, 4.0]);
        assert_eq!(d.row(1), &[3.0, 4.0]);
        assert!(matches!(d.column("c"), Err(DatasetError::MissingColumn(_))));
        let s = d.select_rows(&[1]);
        assert_eq!(s.column("a").unwrap(), vec![3.0]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            Dataset::from_rows(vec!["a".into(), "a".into()], vec![]),
            Err(DatasetError::DuplicateColumn { .. })
        ));
        assert!(matches!(
            Dataset::from_rows(vec!["a".into()], vec![vec![f64::NAN]]),
            Err(DatasetError::NonFinite { row: 0, .. })
        ));
        assert!(matches!(
            Dataset::from_rows(vec!["a".into()], vec![vec![1.0, 2.0]]),
            Err(DatasetError::RaggedRow { .. })
        ));
    }

    #[test]
    fn moments() {
        let (m, v) = mean_and_variance(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((v - 5.0 / 3.0).abs() < 1e-15);
    }
}
