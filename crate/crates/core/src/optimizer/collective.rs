//! In-process stand-ins for the collective operations of a multi-worker
//! optimizer step. Workers are plain indices; every collective is a barrier
//! that combines per-worker buffers in a fixed order.

use std::ops::Range;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Row and column ownership for `P` workers over a `B x N` Jacobian. Both
/// dimensions are padded up to multiples of `P` with zeros.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WorkerPartition {
    pub workers: usize,
    pub rows: usize,
    pub cols: usize,
}

impl WorkerPartition {
    pub fn new(workers: usize, rows: usize, cols: usize) -> Result<Self> {
        if workers == 0 {
            return Err(Error::Config("partition needs at least one worker".into()));
        }
        Ok(WorkerPartition { workers, rows, cols })
    }

    pub fn padded_rows(&self) -> usize {
        self.rows.div_ceil(self.workers) * self.workers
    }

    pub fn padded_cols(&self) -> usize {
        self.cols.div_ceil(self.workers) * self.workers
    }

    /// Padded row range owned by `rank`.
    pub fn row_slice(&self, rank: usize) -> Range<usize> {
        let w = self.padded_rows() / self.workers;
        rank * w..(rank + 1) * w
    }

    /// Padded column range owned by `rank`.
    pub fn col_slice(&self, rank: usize) -> Range<usize> {
        let w = self.padded_cols() / self.workers;
        rank * w..(rank + 1) * w
    }

    /// Splits `o` into zero-padded row blocks, one per worker.
    pub fn scatter_rows(&self, o: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let nc = self.padded_cols();
        (0..self.workers)
            .map(|r| {
                let range = self.row_slice(r);
                DMatrix::from_fn(range.len(), nc, |i, j| {
                    let row = range.start + i;
                    if row < self.rows && j < self.cols {
                        o[(row, j)]
                    } else {
                        0.0
                    }
                })
            })
            .collect()
    }

    /// Splits a length-`rows` vector into zero-padded per-worker slices.
    pub fn scatter_vector(&self, v: &[f64]) -> Vec<Vec<f64>> {
        (0..self.workers)
            .map(|r| self.row_slice(r).map(|i| v.get(i).copied().unwrap_or(0.0)).collect())
            .collect()
    }
}

/// Sum of equally sized buffers, combined pairwise as a binary tree over rank
/// order so the rounding pattern depends only on the worker count.
pub fn all_reduce_sum(mut parts: Vec<Vec<f64>>) -> Vec<f64> {
    assert!(!parts.is_empty());
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop().unwrap()
}

/// Concatenation in rank order.
pub fn all_gather(parts: Vec<Vec<f64>>) -> Vec<f64> {
    parts.into_iter().flatten().collect()
}

/// Row blocks in, column blocks out: worker `r` receives columns
/// `col_slice(r)` of every row block, stacked in rank order.
pub fn all_to_all(part: &WorkerPartition, row_blocks: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    let nr = part.padded_rows();
    (0..part.workers)
        .map(|dest| {
            let cols = part.col_slice(dest);
            let mut out = DMatrix::zeros(nr, cols.len());
            for (src, block) in row_blocks.iter().enumerate() {
                let rows = part.row_slice(src);
                out.view_mut((rows.start, 0), (rows.len(), cols.len()))
                    .copy_from(&block.view((0, cols.start), (rows.len(), cols.len())));
            }
            out
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slices_cover_padded_range() {
        let p = WorkerPartition::new(4, 10, 7).unwrap();
        assert_eq!(p.padded_rows(), 12);
        assert_eq!(p.padded_cols(), 8);
        let rows: Vec<usize> = (0..4).flat_map(|r| p.row_slice(r)).collect();
        assert_eq!(rows, (0..12).collect::<Vec<_>>());
        let cols: Vec<usize> = (0..4).flat_map(|r| p.col_slice(r)).collect();
        assert_eq!(cols, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn redistribution_preserves_entries() {
        let o = DMatrix::from_fn(5, 6, |i, j| (10 * i + j) as f64);
        for workers in 1..=4 {
            let p = WorkerPartition::new(workers, 5, 6).unwrap();
            let cols = all_to_all(&p, &p.scatter_rows(&o));
            for (r, block) in cols.iter().enumerate() {
                for (jj, j) in p.col_slice(r).enumerate() {
                    for i in 0..p.padded_rows() {
                        let expected = if i < 5 && j < 6 { o[(i, j)] } else { 0.0 };
                        assert_eq!(block[(i, jj)], expected);
                    }
                }
            }
        }
    }

    #[test]
    fn reduce_and_gather() {
        let parts = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]];
        assert_eq!(all_reduce_sum(parts.clone()), vec![9.0, 12.0]);
        assert_eq!(all_gather(parts), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }
}
