use crate::error::{contract_err, shape_err, Result};
use crate::tensor::Tensor;

/// Largest tolerated deviation of an enqueued vector's norm from 1.
pub const UNIT_TOL: f64 = 1e-4;

/// Fixed-capacity first-in-first-out store of unit embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBank {
    capacity: usize,
    dim: usize,
    data: Vec<f32>,
    /// Slot the next push writes to.
    cursor: usize,
    len: usize,
}

impl MemoryBank {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(contract_err!(
                "bank capacity and dimension must be positive"
            ));
        }
        Ok(MemoryBank {
            capacity,
            dim,
            data: vec![0.0; capacity * dim],
            cursor: 0,
            len: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn push(&mut self, v: &[f32]) -> Result<()> {
        if v.len() != self.dim {
            return Err(shape_err!(
                "embedding of length {} for a {}-d bank",
                v.len(),
                self.dim
            ));
        }
        let norm = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
        if !((norm - 1.0).abs() <= UNIT_TOL) {
            return Err(contract_err!(
                "bank entries must be unit vectors, got norm {norm}"
            ));
        }
        self.data[self.cursor * self.dim..(self.cursor + 1) * self.dim].copy_from_slice(v);
        self.cursor = (self.cursor + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
        Ok(())
    }

    /// Pushes every vector or none of them.
    pub fn push_all(&mut self, vs: &[Vec<f32>]) -> Result<()> {
        let mut staged = self.clone();
        for v in vs {
            staged.push(v)?;
        }
        *self = staged;
        Ok(())
    }

    /// Entries from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &[f32]> {
        let start = (self.cursor + self.capacity - self.len) % self.capacity;
        (0..self.len).map(move |i| {
            let slot = (start + i) % self.capacity;
            &self.data[slot * self.dim..(slot + 1) * self.dim]
        })
    }

    /// `[len × dim]`, oldest first; `None` while empty.
    pub fn snapshot(&self) -> Option<Tensor<f32>> {
        if self.is_empty() {
            return None;
        }
        let data: Vec<f32> = self.iter().flatten().copied().collect();
        Some(Tensor::new(&[self.len, self.dim], data).expect("bank layout"))
    }
}
