use rayon::prelude::*;

use super::{LinearOperator, OpRef, OperatorShape, PAR_THRESHOLD};

/// `blkdiag(A_1, …, A_n)`; blocks may have different row counts, as when a
/// different number of measurements is taken at each time.
#[derive(Clone, Debug)]
pub struct BlockDiagOperator {
    blocks: Vec<OpRef>,
    row_offsets: Vec<usize>,
    col_offsets: Vec<usize>,
}

impl BlockDiagOperator {
    pub fn new(blocks: Vec<OpRef>) -> Self {
        let mut row_offsets = vec![0];
        let mut col_offsets = vec![0];
        for b in &blocks {
            let s = b.shape();
            row_offsets.push(row_offsets.last().unwrap() + s.rows);
            col_offsets.push(col_offsets.last().unwrap() + s.cols);
        }
        Self {
            blocks,
            row_offsets,
            col_offsets,
        }
    }

    pub fn blocks(&self) -> &[OpRef] {
        &self.blocks
    }

    /// Row range of block `i` in the stacked output.
    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        self.row_offsets[i]..self.row_offsets[i + 1]
    }

    pub fn col_range(&self, i: usize) -> std::ops::Range<usize> {
        self.col_offsets[i]..self.col_offsets[i + 1]
    }

    fn split_mut<'a>(offsets: &[usize], buf: &'a mut [f64]) -> Vec<&'a mut [f64]> {
        let mut out = Vec::with_capacity(offsets.len() - 1);
        let mut rest = buf;
        for w in offsets.windows(2) {
            let (head, tail) = rest.split_at_mut(w[1] - w[0]);
            out.push(head);
            rest = tail;
        }
        out
    }

    fn run(&self, adjoint: bool, input: &[f64], out: &mut [f64]) {
        let (in_off, out_off) = if adjoint {
            (&self.row_offsets, &self.col_offsets)
        } else {
            (&self.col_offsets, &self.row_offsets)
        };
        let outs = Self::split_mut(out_off, out);
        let job = |(i, y): (usize, &mut [f64])| {
            let x = &input[in_off[i]..in_off[i + 1]];
            if adjoint {
                self.blocks[i].apply_adjoint_to(x, y)
            } else {
                self.blocks[i].apply_to(x, y)
            }
        };
        if input.len().max(out_off[out_off.len() - 1]) >= PAR_THRESHOLD {
            outs.into_par_iter().enumerate().for_each(job);
        } else {
            outs.into_iter().enumerate().for_each(job);
        }
    }
}

impl LinearOperator for BlockDiagOperator {
    fn shape(&self) -> OperatorShape {
        OperatorShape::new(*self.row_offsets.last().unwrap(), *self.col_offsets.last().unwrap())
    }

    fn apply_to(&self, x: &[f64], y: &mut [f64]) {
        self.run(false, x, y)
    }

    fn apply_adjoint_to(&self, y: &[f64], x: &mut [f64]) {
        self.run(true, y, x)
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        if !self.blocks.iter().all(|b| b.shape().is_square()) {
            return None;
        }
        let mut out = Vec::with_capacity(self.rows());
        for b in &self.blocks {
            out.extend(b.diagonal()?);
        }
        Some(out)
    }
}
