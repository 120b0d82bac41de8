use super::{LinearOperator, OperatorShape};
use crate::error::{Error, Result};

/// Compressed sparse row matrix, used for ray-trace operators.
#[derive(Clone, Debug)]
pub struct SparseOperator {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseOperator {
    /// Build from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        for &(r, c, _) in &sorted {
            if r >= rows || c >= cols {
                return Err(Error::param(format!(
                    "triplet ({r}, {c}) outside {rows}x{cols} matrix"
                )));
            }
        }
        sorted.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            col_idx.push(c);
            values.push(v);
            row_ptr[r + 1] += 1;
            last = Some((r, c));
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.rows)
            .flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v)))
            .collect()
    }
}

impl LinearOperator for SparseOperator {
    fn shape(&self) -> OperatorShape {
        OperatorShape::new(self.rows, self.cols)
    }

    fn apply_to(&self, x: &[f64], y: &mut [f64]) {
        for (i, y) in y.iter_mut().enumerate() {
            *y = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    fn apply_adjoint_to(&self, y: &[f64], x: &mut [f64]) {
        x.iter_mut().for_each(|v| *v = 0.0);
        for (i, yi) in y.iter().enumerate() {
            for (j, v) in self.row(i) {
                x[j] += v * yi;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linop::testing::adjoint_gap;
    use crate::linop::{to_dense, DenseBudget};

    #[test]
    fn triplets_with_duplicates() {
        let s = SparseOperator::from_triplets(2, 3, &[(1, 2, 1.0), (0, 0, 2.0), (1, 2, 0.5)]).unwrap();
        assert_eq!(s.nnz(), 2);
        let d = to_dense(&s, DenseBudget::default()).unwrap();
        assert_eq!(d, nalgebra::DMatrix::from_row_slice(2, 3, &[2.0, 0.0, 0.0, 0.0, 0.0, 1.5]));
        assert!(adjoint_gap(&s, 1) < 1e-12);
    }

    #[test]
    fn out_of_range_triplet() {
        assert!(SparseOperator::from_triplets(2, 2, &[(2, 0, 1.0)]).is_err());
    }
}
