//! Named parameter tensors and their gradient buffers.

use alloc::string::String;
use alloc::vec::Vec;

use crate::tensor::Tensor;

/// Handle to one tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// Which coordinates of a parameter are excluded from updates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Frozen {
    None,
    All,
    /// Leading-dimension rows that never change.
    Rows(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    pub frozen: Frozen,
}

/// An ordered collection of named tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub const fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor, frozen: Frozen) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            tensor,
            frozen,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Total number of scalar coordinates.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    /// Whether flat coordinate `index` of `id` is frozen.
    pub fn is_frozen(&self, id: ParamId, index: usize) -> bool {
        let e = &self.entries[id.0];
        match &e.frozen {
            Frozen::None => false,
            Frozen::All => true,
            Frozen::Rows(rows) => {
                let n = e.tensor.row_len().max(1);
                rows.contains(&(index / n))
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.tensor.is_finite())
    }
}

/// Dense gradient buffers shaped like a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    tensors: Vec<Tensor>,
}

impl ParamGrads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        ParamGrads {
            tensors: store
                .entries
                .iter()
                .map(|e| Tensor::zeros(e.tensor.shape()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.tensors.iter().enumerate().map(|(i, t)| (ParamId(i), t))
    }

    pub fn fill_zero(&mut self) {
        for t in &mut self.tensors {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            t.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Zero every frozen coordinate.
    pub fn mask_frozen(&mut self, store: &ParamStore) {
        for (t, e) in self.tensors.iter_mut().zip(&store.entries) {
            match &e.frozen {
                Frozen::None => {}
                Frozen::All => t.data_mut().iter_mut().for_each(|v| *v = 0.0),
                Frozen::Rows(rows) => {
                    for &r in rows {
                        t.row_mut(r).iter_mut().for_each(|v| *v = 0.0);
                    }
                }
            }
        }
    }

    pub fn l2_norm(&self) -> f64 {
        let sq: f64 = self
            .tensors
            .iter()
            .flat_map(|t| t.data().iter())
            .map(|v| v * v)
            .sum();
        libm::sqrt(sq)
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}
