use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Named parameter arrays, iterated in sorted-name order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: BTreeMap<String, Tensor<T>>,
    frozen: BTreeSet<String>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
            frozen: BTreeSet::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        let name = name.into();
        assert!(
            !self.params.contains_key(&name),
            "parameter {name} registered twice"
        );
        self.params.insert(name, t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name)
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

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_elements(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn freeze(&mut self, name: &str) {
        self.frozen.insert(name.to_string());
    }

    pub fn freeze_all(&mut self) {
        self.frozen = self.params.keys().cloned().collect();
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        !self.frozen.contains(name)
    }

    /// Inserts the named parameter into `g` (once per graph).
    pub fn node(&self, g: &mut Graph<T>, name: &str) -> NodeId {
        let t = self
            .params
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"));
        g.param(name, t, self.is_trainable(name))
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            frozen: self.frozen.clone(),
        }
    }
}

/// Creates parameters under a dotted name prefix, drawing initial values
/// from a seeded stream (always in `f64`, so `f32` and `f64` models built
/// from one seed agree up to rounding).
pub struct ParamBuilder<'a, T> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a, T: Real> ParamBuilder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    /// A builder for the sub-scope `name`.
    pub fn pp(&mut self, name: impl AsRef<str>) -> ParamBuilder<'_, T> {
        let prefix = self.path(name.as_ref());
        ParamBuilder {
            store: self.store,
            rng: self.rng,
            prefix,
        }
    }

    pub fn path(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    pub fn uniform(&mut self, name: &str, shape: Vec<usize>, bound: f64) -> String {
        let full = self.path(name);
        let rng = &mut *self.rng;
        let t = Tensor::from_fn(shape, |_| T::from_f64(rng.gen_range(-bound..=bound)));
        self.store.insert(full.clone(), t);
        full
    }

    pub fn constant(&mut self, name: &str, shape: Vec<usize>, v: f64) -> String {
        let full = self.path(name);
        self.store.insert(full.clone(), Tensor::full(shape, T::from_f64(v)));
        full
    }
}

/// Checks that `actual` holds exactly the parameter names and shapes of
/// `expected`; `what` names the model in error messages.
pub fn check_same_layout<T: Real>(expected: &ParamStore<T>, actual: &ParamStore<T>, what: &str) -> Result<()> {
    for (name, t) in expected.iter() {
        match actual.get(name) {
            None => {
                return Err(Error::Integrity {
                    member: name.to_string(),
                    reason: format!("{what}: parameter missing"),
                })
            }
            Some(a) if a.shape() != t.shape() => {
                return Err(Error::Integrity {
                    member: name.to_string(),
                    reason: format!("{what}: shape {:?}, expected {:?}", a.shape(), t.shape()),
                })
            }
            Some(a) if !a.all_finite() => {
                return Err(Error::Integrity {
                    member: name.to_string(),
                    reason: format!("{what}: non-finite values"),
                })
            }
            _ => {}
        }
    }
    if let Some(extra) = actual.names().find(|n| !expected.contains(n)) {
        return Err(Error::Integrity {
            member: extra.to_string(),
            reason: format!("{what}: parameter not part of the architecture"),
        });
    }
    Ok(())
}
