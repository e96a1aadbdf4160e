//! FIFO ring of past target embeddings used as negatives.

use vfs_tensor::Tensor;

use crate::error::{Error, Result};

/// Allowed deviation from unit norm for embeddings handed to the losses.
pub const UNIT_TOLERANCE: f64 = 1e-3;

pub(crate) fn check_unit(v: &[f32], what: &str) -> Result<()> {
    let norm = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::Contract(format!("{} has norm {:.6}, expected 1", what, norm)));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct NegativeBank {
    dim: usize,
    capacity: usize,
    /// `capacity x dim`, slots past `len` are zero.
    entries: Vec<f32>,
    len: usize,
    cursor: usize,
}

impl NegativeBank {
    pub fn new(capacity: usize, dim: usize) -> Self {
        NegativeBank {
            dim,
            capacity,
            entries: vec![0.0; capacity * dim],
            len: 0,
            cursor: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Filled slots; equals the capacity once warm.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_full(&self) -> bool {
        self.len == self.capacity
    }

    /// Next slot to be overwritten.
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn entry(&self, slot: usize) -> &[f32] {
        &self.entries[slot * self.dim..(slot + 1) * self.dim]
    }

    /// Filled slots in slot order.
    pub fn filled(&self) -> &[f32] {
        &self.entries[..self.len * self.dim]
    }

    /// Filled entries, oldest first.
    pub fn fifo(&self) -> Vec<&[f32]> {
        let start = if self.is_full() { self.cursor } else { 0 };
        (0..self.len).map(|i| self.entry((start + i) % self.capacity)).collect()
    }

    /// Filled slots as a `len x dim` tensor.
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(vec![self.len, self.dim], self.filled().to_vec()).expect("bank shape")
    }

    /// Writes `batch` (rows of `dim` values) over the oldest slots. Rows are
    /// renormalized so stored entries stay unit-norm in storage precision.
    pub fn enqueue(&mut self, batch: &[f32]) -> Result<()> {
        if self.dim == 0 || !batch.len().is_multiple_of(self.dim) {
            return Err(Error::Contract(format!(
                "{} values do not form rows of width {}",
                batch.len(),
                self.dim
            )));
        }
        let rows = batch.len() / self.dim;
        if rows > self.capacity {
            return Err(Error::Contract(format!(
                "batch of {} exceeds bank capacity {}",
                rows, self.capacity
            )));
        }
        for (i, row) in batch.chunks_exact(self.dim).enumerate() {
            check_unit(row, &format!("bank row {}", i))?;
        }
        for row in batch.chunks_exact(self.dim) {
            let norm = row.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
            let at = self.cursor * self.dim;
            for (dst, &x) in self.entries[at..at + self.dim].iter_mut().zip(row) {
                *dst = (x as f64 / norm) as f32;
            }
            self.cursor = (self.cursor + 1) % self.capacity;
            self.len = (self.len + 1).min(self.capacity);
        }
        Ok(())
    }

    /// Reassembles a bank from checkpointed parts.
    pub fn from_parts(capacity: usize, dim: usize, entries: Vec<f32>, len: usize, cursor: usize) -> Result<Self> {
        if entries.len() != capacity * dim || len > capacity || (capacity > 0 && cursor >= capacity) {
            return Err(Error::Contract("inconsistent bank parts".into()));
        }
        Ok(NegativeBank {
            dim,
            capacity,
            entries,
            len,
            cursor,
        })
    }

    pub fn raw_entries(&self) -> &[f32] {
        &self.entries
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(dim: usize, hot: usize) -> Vec<f32> {
        let mut v = vec![0.0; dim];
        v[hot] = 1.0;
        v
    }

    #[test]
    fn fill_then_evict_oldest() {
        let mut bank = NegativeBank::new(3, 4);
        let batch: Vec<f32> = (0..3).flat_map(|i| unit(4, i)).collect();
        bank.enqueue(&batch).unwrap();
        assert!(bank.is_full());
        assert_eq!(bank.filled(), &batch[..]);
        bank.enqueue(&unit(4, 3)).unwrap();
        let fifo: Vec<Vec<f32>> = bank.fifo().iter().map(|r| r.to_vec()).collect();
        assert_eq!(fifo, vec![unit(4, 1), unit(4, 2), unit(4, 3)]);
    }

    #[test]
    fn oversized_batch_and_non_unit_rows_are_rejected() {
        let mut bank = NegativeBank::new(1, 2);
        assert!(bank.enqueue(&[1.0, 0.0, 0.0, 1.0]).is_err());
        assert!(bank.enqueue(&[2.0, 0.0]).is_err());
        assert!(bank.enqueue(&[1.0, 0.0, 0.5]).is_err());
    }
}
