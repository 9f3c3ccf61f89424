use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::tensor::{Real, Tensor};

static NEXT_STORE_UID: AtomicU64 = AtomicU64::new(1);

/// Index of a tensor inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    /// Running statistics; updated by forward passes, never by the optimizer.
    Buffer,
}

#[derive(Debug, Clone)]
pub struct ParamEntry<T> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor<T>,
}

/// Weight initializers.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// N(0, std²).
    Normal(f64),
    /// Kaiming normal with fan-out, for ReLU networks.
    KaimingOut { fan_out: usize },
    /// U(-1/√fan_in, 1/√fan_in).
    UniformFanIn { fan_in: usize },
}

/// Named tensors of one network. The uid tags gradients so several stores
/// can share a graph.
#[derive(Debug)]
pub struct ParamStore<T> {
    uid: u64,
    entries: Vec<ParamEntry<T>>,
}

impl<T: Real> Clone for ParamStore<T> {
    fn clone(&self) -> Self {
        Self { uid: NEXT_STORE_UID.fetch_add(1, Ordering::Relaxed), entries: self.entries.clone() }
    }
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { uid: NEXT_STORE_UID.fetch_add(1, Ordering::Relaxed), entries: Vec::new() }
    }

    pub fn uid(&self) -> u64 {
        self.uid
    }

    pub fn add<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        init: Init,
        kind: ParamKind,
        rng: &mut R,
    ) -> ParamId {
        let n: usize = shape.iter().product();
        let data: Vec<T> = match init {
            Init::Zeros => vec![T::zero(); n],
            Init::Ones => vec![T::one(); n],
            Init::Normal(std) => sample_normal(n, std, rng),
            Init::KaimingOut { fan_out } => sample_normal(n, (2.0 / fan_out.max(1) as f64).sqrt(), rng),
            Init::UniformFanIn { fan_in } => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("valid bounds");
                (0..n).map(|_| T::lit(dist.sample(rng))).collect()
            }
        };
        self.entries.push(ParamEntry { name: name.into(), kind, value: Tensor::from_vec(shape, data) });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.entries.iter().filter(|e| e.kind == ParamKind::Trainable).map(|e| e.value.len()).sum()
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.kind == ParamKind::Trainable)
            .map(|(i, _)| ParamId(i))
    }

    /// Copies every value from `other`, which must have the same layout.
    pub fn copy_values_from(&mut self, other: &ParamStore<T>) {
        assert_eq!(self.entries.len(), other.entries.len());
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            assert_eq!(a.value.shape(), b.value.shape(), "layout mismatch at {}", a.name);
            a.value = b.value.clone();
        }
    }

    /// Applies running-statistic updates recorded by a graph.
    pub fn apply_updates(&mut self, updates: &[BufferUpdate<T>]) {
        for u in updates.iter().filter(|u| u.store == self.uid) {
            self.entries[u.id.0].value = u.value.clone();
        }
    }

    /// Same layout in another element type.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            uid: NEXT_STORE_UID.fetch_add(1, Ordering::Relaxed),
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry { name: e.name.clone(), kind: e.kind, value: e.value.cast() })
                .collect(),
        }
    }
}

fn sample_normal<T: Real, R: Rng + ?Sized>(n: usize, std: f64, rng: &mut R) -> Vec<T> {
    let dist = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| T::lit(dist.sample(rng))).collect()
}

/// New value for a buffer, produced during a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct BufferUpdate<T> {
    pub store: u64,
    pub id: ParamId,
    pub value: Tensor<T>,
}

/// Parameter gradients keyed by (store uid, parameter index).
#[derive(Debug, Default)]
pub struct Gradients<T> {
    pub(crate) map: HashMap<(u64, usize), Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, store: &ParamStore<T>, id: ParamId) -> Option<&Tensor<T>> {
        self.map.get(&(store.uid(), id.0))
    }

    /// True when no gradient reached any tensor of `store`.
    pub fn is_empty_for(&self, store: &ParamStore<T>) -> bool {
        !self.map.keys().any(|(uid, _)| *uid == store.uid())
    }

    /// Largest absolute gradient entry over `store`; 0 when none.
    pub fn max_abs_for(&self, store: &ParamStore<T>) -> f64 {
        self.map
            .iter()
            .filter(|((uid, _), _)| *uid == store.uid())
            .flat_map(|(_, t)| t.data().iter().map(|v| v.as_f64().abs()))
            .fold(0.0, f64::max)
    }
}
