//! Named parameter storage and the per-forward binding context.

use std::cell::{RefCell, RefMut};
use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::autograd::{Gradients, Graph, Tensor, Var};

#[derive(Clone, Debug)]
pub struct Param {
    pub value: Tensor,
    pub trainable: bool,
}

/// Flat, ordered map from hierarchical names ("neuronet/0/enc/blocks/1/attn/q/w")
/// to parameter tensors. Ordering is lexicographic, which keeps every
/// iteration (optimizer updates, hashing, serialization) deterministic.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

#[derive(Clone, Copy, Debug)]
pub enum InitKind {
    Zeros,
    Ones,
    Uniform(f64),
    Normal(f64),
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) {
        self.params.insert(name.into(), Param { value, trainable });
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn value(&self, name: &str) -> &Tensor {
        &self.params.get(name).unwrap_or_else(|| panic!("unknown parameter {name}")).value
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn set_trainable_prefix(&mut self, prefix: &str, trainable: bool) {
        for (name, p) in self.params.iter_mut() {
            if name.starts_with(prefix) {
                p.trainable = trainable;
            }
        }
    }

    /// Number of trainable scalar parameters.
    pub fn trainable_count(&self) -> usize {
        self.params.values().filter(|p| p.trainable).map(|p| p.value.numel()).sum()
    }

    /// Copies every parameter of `other` under the same names.
    pub fn extend_from(&mut self, other: &ParamStore, trainable: bool) {
        for (name, p) in other.iter() {
            self.insert(name.clone(), p.value.clone(), trainable);
        }
    }

    /// Keeps only parameters whose name starts with `prefix`.
    pub fn filter_prefix(&self, prefix: &str) -> ParamStore {
        let params = self
            .params
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(n, p)| (n.clone(), p.clone()))
            .collect();
        ParamStore { params }
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(|p| p.value.is_finite())
    }

    /// SHA-256 over names, shapes and payloads of the selected parameters.
    pub fn fingerprint(&self, select: impl Fn(&str, &Param) -> bool) -> String {
        let mut h = Sha256::new();
        for (name, p) in &self.params {
            if !select(name, p) {
                continue;
            }
            h.update(name.as_bytes());
            for d in p.value.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            h.update(p.value.le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Registers a parameter unless one with this name already exists (e.g. loaded
    /// from a checkpoint), in which case the shape is checked and the value kept.
    pub fn init(&mut self, name: &str, shape: &[usize], kind: InitKind, rng: &mut ChaCha8Rng, trainable: bool) -> String {
        if let Some(p) = self.params.get(name) {
            assert_eq!(p.value.shape(), shape, "parameter {name} has unexpected shape");
            return name.to_string();
        }
        let n: usize = shape.iter().product();
        let data = match kind {
            InitKind::Zeros => vec![0.0; n],
            InitKind::Ones => vec![1.0; n],
            InitKind::Uniform(bound) => (0..n).map(|_| rng.random_range(-bound..bound)).collect(),
            InitKind::Normal(std) => {
                let dist = Normal::new(0.0, std).expect("valid std");
                (0..n).map(|_| dist.sample(rng)).collect()
            }
        };
        self.insert(name, Tensor::new(shape.to_vec(), data), trainable);
        name.to_string()
    }
}

/// Parameter initializer bound to a store, an rng and a name prefix.
pub struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
    pub trainable: bool,
}

impl<'a> Init<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        Self { store, rng, trainable: true }
    }

    pub fn tensor(&mut self, name: &str, shape: &[usize], kind: InitKind) -> String {
        self.store.init(name, shape, kind, self.rng, self.trainable)
    }
}

/// Binds stored parameters onto a [`Graph`] for one forward pass.
///
/// Each name is bound at most once per context, so every use of a parameter
/// inside one forward refers to the same tape node and gradients accumulate.
pub struct Ctx<'g, 's> {
    pub graph: &'g Graph,
    store: &'s ParamStore,
    bound: RefCell<BTreeMap<String, Var<'g>>>,
    train: bool,
    track_grads: bool,
    rng: RefCell<ChaCha8Rng>,
}

impl<'g, 's> Ctx<'g, 's> {
    /// Inference context: dropout off, no parameter gradients.
    pub fn eval(graph: &'g Graph, store: &'s ParamStore) -> Self {
        Self {
            graph,
            store,
            bound: RefCell::new(BTreeMap::new()),
            train: false,
            track_grads: false,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(0)),
        }
    }

    /// Training context: dropout on, trainable parameters tracked. `seed` drives dropout masks.
    pub fn train(graph: &'g Graph, store: &'s ParamStore, seed: u64) -> Self {
        Self { train: true, track_grads: true, rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)), ..Self::eval(graph, store) }
    }

    /// Dropout off but trainable parameters tracked (gradient checks, probes).
    pub fn deterministic(graph: &'g Graph, store: &'s ParamStore) -> Self {
        Self { track_grads: true, ..Self::eval(graph, store) }
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn rng(&self) -> RefMut<'_, ChaCha8Rng> {
        self.rng.borrow_mut()
    }

    pub fn param(&self, name: &str) -> Var<'g> {
        if let Some(v) = self.bound.borrow().get(name) {
            return *v;
        }
        let p = self.store.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        let v = self.graph.leaf(p.value.clone(), self.track_grads && p.trainable);
        self.bound.borrow_mut().insert(name.to_string(), v);
        v
    }

    pub fn constant(&self, t: Tensor) -> Var<'g> {
        self.graph.constant(t)
    }

    /// Inverted dropout; identity outside training or when `p == 0`.
    pub fn dropout(&self, x: Var<'g>, p: f64) -> Var<'g> {
        if !self.train || p <= 0.0 {
            return x;
        }
        let shape = x.shape();
        let n: usize = shape.iter().product();
        let keep = 1.0 - p;
        let mut rng = self.rng.borrow_mut();
        let mask: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
        drop(rng);
        x.mul(self.graph.constant(Tensor::new(shape, mask)))
    }

    /// Gradients of every bound trainable parameter (zeros where none arrived).
    pub fn param_grads(&self, grads: &Gradients) -> BTreeMap<String, Tensor> {
        self.bound
            .borrow()
            .iter()
            .filter(|(_, v)| v.requires_grad())
            .map(|(n, v)| (n.clone(), grads.get_or_zeros(*v)))
            .collect()
    }

    /// The tape node bound for `name`, if this forward used it.
    pub fn bound(&self, name: &str) -> Option<Var<'g>> {
        self.bound.borrow().get(name).copied()
    }
}
