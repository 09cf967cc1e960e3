use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const INTERCEPT: &str = "intercept";

/// Subjects × columns design with a named variable of interest.
///
/// Construction fails with [`Error::RankDeficientDesign`] unless the matrix
/// has full column rank.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    ids: Vec<String>,
    names: Vec<String>,
    x: DMatrix<f64>,
    target: usize,
}

impl DesignMatrix {
    /// Columns exactly as given; no intercept is added.
    pub fn new(names: Vec<String>, rows: &[Vec<f64>], target: &str) -> Result<Self> {
        let k = names.len();
        if k == 0 {
            return Err(Error::InvalidArgument("design has no columns".into()));
        }
        if let Some(r) = rows.iter().position(|r| r.len() != k) {
            return Err(Error::InvalidArgument(format!("design row {r} has {} values, expected {k}", rows[r].len())));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("design contains non-finite values".into()));
        }
        let target = names
            .iter()
            .position(|n| n == target)
            .ok_or_else(|| Error::InvalidArgument(format!("target column '{target}' not in design")))?;
        let x = DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j]);
        let ids = (0..rows.len()).map(|i| format!("sub-{:03}", i + 1)).collect();
        let d = Self { ids, names, x, target };
        d.check_rank()?;
        Ok(d)
    }

    /// Prepends an all-ones intercept column to the covariates.
    pub fn with_intercept(covariates: Vec<String>, rows: &[Vec<f64>], target: &str) -> Result<Self> {
        let mut names = vec![INTERCEPT.to_string()];
        names.extend(covariates);
        let rows: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| std::iter::once(1.0).chain(r.iter().copied()).collect())
            .collect();
        Self::new(names, &rows, target)
    }

    /// Parses CSV with a header row and the subject id in the first column.
    /// An intercept is added unless a column is named `intercept`.
    pub fn from_csv_reader(reader: impl Read, target: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers().map_err(csv_err)?.clone();
        if header.len() < 2 {
            return Err(Error::InvalidArgument("design CSV needs an id column and at least one covariate".into()));
        }
        let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            ids.push(rec.get(0).unwrap_or_default().to_string());
            let row = rec
                .iter()
                .skip(1)
                .enumerate()
                .map(|(j, s)| {
                    s.parse::<f64>().map_err(|_| {
                        Error::InvalidArgument(format!("row {}: column '{}' value '{s}' is not a number", line + 1, names[j]))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        let mut d = if names.iter().any(|n| n.eq_ignore_ascii_case(INTERCEPT)) {
            Self::new(names, &rows, target)?
        } else {
            Self::with_intercept(names, &rows, target)?
        };
        d.ids = ids;
        Ok(d)
    }

    pub fn from_csv_path(path: impl AsRef<Path>, target: &str) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(file, target)
    }

    pub fn n_subjects(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_columns(&self) -> usize {
        self.x.ncols()
    }

    pub fn column_names(&self) -> &[String] {
        &self.names
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.ids
    }

    pub fn target_index(&self) -> usize {
        self.target
    }

    pub fn target_name(&self) -> &str {
        &self.names[self.target]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.names.iter().position(|n| n == name)?;
        Some(self.x.column(j).iter().copied().collect())
    }

    /// Rows picked in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&r) = rows.iter().find(|&&r| r >= self.n_subjects()) {
            return Err(Error::InvalidArgument(format!("row {r} out of range")));
        }
        let x = DMatrix::from_fn(rows.len(), self.n_columns(), |i, j| self.x[(rows[i], j)]);
        let d = Self {
            ids: rows.iter().map(|&r| self.ids[r].clone()).collect(),
            names: self.names.clone(),
            x,
            target: self.target,
        };
        d.check_rank()?;
        Ok(d)
    }

    fn check_rank(&self) -> Result<()> {
        let (n, k) = self.x.shape();
        if n < k {
            return Err(Error::RankDeficientDesign);
        }
        // scale-free test: normalize columns before looking at R's diagonal
        let mut xs = self.x.clone();
        for mut c in xs.column_iter_mut() {
            let norm = c.norm();
            if norm == 0.0 {
                return Err(Error::RankDeficientDesign);
            }
            c /= norm;
        }
        let r = xs.qr().r();
        if (0..k).any(|i| r[(i, i)].abs() < 1e-10) {
            return Err(Error::RankDeficientDesign);
        }
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("design CSV: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_adds_intercept_and_keeps_ids() {
        let text = "id,age,score\na,30,1.5\nb,40,2.0\nc,35,0.5\nd,50,1.0\n";
        let d = DesignMatrix::from_csv_reader(text.as_bytes(), "score").unwrap();
        assert_eq!(d.column_names(), ["intercept", "age", "score"]);
        assert_eq!(d.subject_ids(), ["a", "b", "c", "d"]);
        assert_eq!(d.target_index(), 2);
        assert_eq!(d.column("intercept").unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn csv_with_explicit_intercept() {
        let text = "id,intercept,g\na,1,0\nb,1,1\nc,1,1\n";
        let d = DesignMatrix::from_csv_reader(text.as_bytes(), "g").unwrap();
        assert_eq!(d.n_columns(), 2);
    }

    #[test]
    fn csv_errors() {
        assert!(DesignMatrix::from_csv_reader("id,a\nx,1\ny,oops\n".as_bytes(), "a").is_err());
        assert!(DesignMatrix::from_csv_reader("id,a\nx,1\ny,2\n".as_bytes(), "b").is_err());
    }

    #[test]
    fn duplicated_column_is_rank_deficient() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let r = DesignMatrix::with_intercept(vec!["a".into(), "b".into()], &rows, "a");
        assert!(matches!(r, Err(Error::RankDeficientDesign)));
        let rows: Vec<Vec<f64>> = (0..6).map(|_| vec![3.0]).collect();
        let r = DesignMatrix::with_intercept(vec!["a".into()], &rows, "a");
        assert!(matches!(r, Err(Error::RankDeficientDesign)));
    }
}
