use serde::{Deserialize, Serialize};

use super::FeatureError;

/// Row-major `T x D` matrix of per-frame feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    /// Builds a matrix from row-major data. `data.len()` must be a multiple of
    /// `dim` and every entry finite. Zero rows is allowed.
    pub fn new(data: Vec<f64>, dim: usize) -> Result<Self, FeatureError> {
        if dim == 0 {
            return Err(FeatureError::ZeroDimension);
        }
        if data.len() % dim != 0 {
            return Err(FeatureError::RaggedRows {
                len: data.len(),
                dim,
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite { row: i / dim });
        }
        Ok(Self { dim, data })
    }

    pub fn empty(dim: usize) -> Result<Self, FeatureError> {
        Self::new(Vec::new(), dim)
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, FeatureError> {
        let dim = rows.first().map(|r| r.as_ref().len()).ok_or(FeatureError::NoRows)?;
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(FeatureError::RaggedRows {
                    len: r.len(),
                    dim,
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(data, dim)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of rows (frames).
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Appends all rows of `other`.
    pub fn append(&mut self, other: &FeatureMatrix) -> Result<(), FeatureError> {
        if other.dim != self.dim {
            return Err(FeatureError::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        self.data.extend_from_slice(&other.data);
        Ok(())
    }

    /// Row-wise concatenation of `parts`, which must share one dimension.
    pub fn concat<'a, I>(dim: usize, parts: I) -> Result<Self, FeatureError>
    where
        I: IntoIterator<Item = &'a FeatureMatrix>,
    {
        let mut out = Self::empty(dim)?;
        for p in parts {
            out.append(p)?;
        }
        Ok(out)
    }

    /// First `n` rows (or all of them if there are fewer).
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            dim: self.dim,
            data: self.data[..n * self.dim].to_vec(),
        }
    }

    /// Applies `f` to every entry.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self, FeatureError> {
        Self::new(self.data.iter().map(|&v| f(v)).collect(), self.dim)
    }

    /// Adds `offset` to every row.
    pub fn translate(&self, offset: &[f64]) -> Result<Self, FeatureError> {
        if offset.len() != self.dim {
            return Err(FeatureError::DimensionMismatch {
                expected: self.dim,
                found: offset.len(),
            });
        }
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(i, v)| v + offset[i % self.dim])
            .collect();
        Self::new(data, self.dim)
    }

    /// Per-column mean.
    pub fn column_means(&self) -> Vec<f64> {
        let mut sum = vec![0.0; self.dim];
        for r in self.rows() {
            for (s, v) in sum.iter_mut().zip(r) {
                *s += v;
            }
        }
        let n = self.len().max(1) as f64;
        sum.into_iter().map(|s| s / n).collect()
    }

    /// Per-column biased (1/T) variance.
    pub fn column_variances(&self) -> Vec<f64> {
        let mean = self.column_means();
        let mut acc = vec![0.0; self.dim];
        for r in self.rows() {
            for d in 0..self.dim {
                let e = r[d] - mean[d];
                acc[d] += e * e;
            }
        }
        let n = self.len().max(1) as f64;
        acc.into_iter().map(|s| s / n).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_checks() {
        assert!(FeatureMatrix::new(vec![1.0, 2.0, 3.0], 2).is_err());
        assert!(FeatureMatrix::new(vec![1.0, f64::NAN], 2).is_err());
        assert!(FeatureMatrix::new(vec![], 0).is_err());
        assert!(FeatureMatrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        let m = FeatureMatrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.row(1), &[3.0, 4.0]);
    }

    #[test]
    fn append_and_head() {
        let mut a = FeatureMatrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let b = FeatureMatrix::from_rows(&[[3.0, 4.0], [5.0, 6.0]]).unwrap();
        a.append(&b).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a.head(2).as_slice(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(a.head(10).len(), 3);
        let c = FeatureMatrix::from_rows(&[[1.0]]).unwrap();
        assert!(a.append(&c).is_err());
    }

    #[test]
    fn column_stats() {
        let m = FeatureMatrix::from_rows(&[[0.0, 1.0], [2.0, 1.0]]).unwrap();
        assert_eq!(m.column_means(), vec![1.0, 1.0]);
        assert_eq!(m.column_variances(), vec![1.0, 0.0]);
    }
}
