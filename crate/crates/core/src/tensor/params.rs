use std::collections::HashMap;
use std::sync::Arc;

use super::Real;

pub type ParamId = usize;

/// One named trainable array. `frozen_rows` are excluded from updates
/// and gradient checks (used for reserved padding/cold-start rows).
#[derive(Clone)]
pub struct Param<F: Real> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Arc<Vec<F>>,
    pub frozen_rows: Vec<usize>,
}

impl<F: Real> Param<F> {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_frozen_coord(&self, idx: usize) -> bool {
        self.frozen_rows.contains(&(idx / self.cols))
    }
}

/// Ordered collection of model parameters. Order is the definition
/// order, which fixes checkpoint layout and seeding.
#[derive(Clone, Default)]
pub struct ParamStore<F: Real> {
    params: Vec<Param<F>>,
    index: HashMap<String, ParamId>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new(), index: HashMap::new() }
    }

    pub fn add(&mut self, name: &str, rows: usize, cols: usize, data: Vec<F>) -> ParamId {
        assert_eq!(rows * cols, data.len(), "param {name}: shape/data mismatch");
        assert!(!self.index.contains_key(name), "duplicate param {name}");
        let id = self.params.len();
        self.params.push(Param {
            name: name.to_string(),
            rows,
            cols,
            data: Arc::new(data),
            frozen_rows: Vec::new(),
        });
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn freeze_row(&mut self, id: ParamId, row: usize) {
        self.params[id].frozen_rows.push(row);
        let p = &mut self.params[id];
        let cols = p.cols;
        let data = Arc::make_mut(&mut p.data);
        for v in &mut data[row * cols..(row + 1) * cols] {
            *v = F::zero();
        }
    }

    pub fn get(&self, id: ParamId) -> &Param<F> {
        &self.params[id]
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<F>)> {
        self.params.iter().enumerate()
    }

    /// Mutable view of a parameter's data (copy-on-write if a tape
    /// still holds the buffer).
    pub fn data_mut(&mut self, id: ParamId) -> &mut Vec<F> {
        Arc::make_mut(&mut self.params[id].data)
    }

    pub fn set_data(&mut self, id: ParamId, data: Vec<F>) {
        assert_eq!(data.len(), self.params[id].len());
        self.params[id].data = Arc::new(data);
    }

    /// Deep copy of all parameter values (snapshot for best-epoch
    /// retention).
    pub fn snapshot(&self) -> Vec<Vec<F>> {
        self.params.iter().map(|p| p.data.as_ref().clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Vec<F>]) {
        assert_eq!(snapshot.len(), self.params.len());
        for (p, s) in self.params.iter_mut().zip(snapshot) {
            assert_eq!(p.len(), s.len());
            p.data = Arc::new(s.clone());
        }
    }
}

/// Per-parameter gradient buffers produced by a backward pass.
/// Parameters that do not influence the loss hold exact zeros.
pub struct Gradients<F: Real> {
    slots: Vec<Vec<F>>,
}

impl<F: Real> Gradients<F> {
    pub fn zeros_for(store: &ParamStore<F>) -> Self {
        Gradients { slots: store.params.iter().map(|p| vec![F::zero(); p.len()]).collect() }
    }

    pub fn add_assign(&mut self, id: ParamId, g: &[F]) {
        let slot = &mut self.slots[id];
        assert_eq!(slot.len(), g.len());
        for (d, &s) in slot.iter_mut().zip(g) {
            *d += s;
        }
    }

    /// Accumulates another gradient set (per-sample sums over a batch).
    pub fn merge(&mut self, other: &Gradients<F>) {
        assert_eq!(self.slots.len(), other.slots.len());
        for (id, g) in other.slots.iter().enumerate() {
            self.add_assign(id, g);
        }
    }

    pub fn get(&self, id: ParamId) -> &[F] {
        &self.slots[id]
    }

    pub fn zero_frozen(&mut self, store: &ParamStore<F>) {
        for (id, p) in store.iter() {
            for &row in &p.frozen_rows {
                for v in &mut self.slots[id][row * p.cols..(row + 1) * p.cols] {
                    *v = F::zero();
                }
            }
        }
    }

    pub fn has_non_finite(&self) -> bool {
        self.slots.iter().any(|s| s.iter().any(|v| !v.is_finite()))
    }
}
