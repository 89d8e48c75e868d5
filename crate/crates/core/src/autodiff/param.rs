//! Named parameter registry and the builder nets use to create weights.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use super::Tensor;
use crate::rng::Rng;
use crate::scalar::Scalar;

/// One named trainable (or frozen) tensor. Names encode the module
/// hierarchy, e.g. "gen.layer0.query.weight".
#[derive(Debug, Clone)]
pub struct Parameter<T: Scalar = f64> {
    pub name: String,
    pub tensor: Tensor<T>,
}

/// Registry of all model parameters, ordered by name.
pub struct ParamSet<T: Scalar = f64> {
    map: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            map: BTreeMap::new(),
        }
    }

    pub fn shared() -> Rc<RefCell<ParamSet<T>>> {
        Rc::new(RefCell::new(Self::new()))
    }

    /// Names must be unique within a model.
    pub fn register(&mut self, name: &str, tensor: Tensor<T>) {
        let prev = self.map.insert(name.to_string(), tensor);
        assert!(prev.is_none(), "duplicate parameter name {name:?}");
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.map.get(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = Parameter<T>> + '_ {
        self.map.iter().map(|(name, tensor)| Parameter {
            name: name.clone(),
            tensor: tensor.clone(),
        })
    }

    pub fn names(&self) -> Vec<String> {
        self.map.keys().cloned().collect()
    }

    pub fn zero_grads(&self) {
        for t in self.map.values() {
            t.zero_grad();
        }
    }

    /// Count of tensors that take gradients.
    pub fn trainable_count(&self) -> usize {
        self.map.values().filter(|t| t.is_tracked()).count()
    }
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Creates and registers parameters. Initialization is keyed by parameter
/// name (not creation order), so adding a parameter elsewhere does not
/// perturb existing initializations for a fixed seed.
pub struct ParamBuilder<T: Scalar = f64> {
    set: Rc<RefCell<ParamSet<T>>>,
    seed: u64,
    trainable_prefixes: Option<Vec<String>>,
}

impl<T: Scalar> ParamBuilder<T> {
    /// Builder where every parameter is trainable.
    pub fn new(set: &Rc<RefCell<ParamSet<T>>>, seed: u64) -> Self {
        ParamBuilder {
            set: Rc::clone(set),
            seed,
            trainable_prefixes: None,
        }
    }

    /// Builder where only parameters whose name starts with one of
    /// `prefixes` take gradients; everything else is frozen (no gradient
    /// buffer is ever allocated for frozen tensors).
    pub fn with_trainable(
        set: &Rc<RefCell<ParamSet<T>>>,
        seed: u64,
        prefixes: &[&str],
    ) -> Self {
        ParamBuilder {
            set: Rc::clone(set),
            seed,
            trainable_prefixes: Some(prefixes.iter().map(|s| s.to_string()).collect()),
        }
    }

    fn is_trainable(&self, name: &str) -> bool {
        match &self.trainable_prefixes {
            None => true,
            Some(prefixes) => prefixes.iter().any(|p| name.starts_with(p.as_str())),
        }
    }

    fn finish(&self, name: &str, t: Tensor<T>) -> Tensor<T> {
        let t = if self.is_trainable(name) { t.with_grad() } else { t };
        self.set.borrow_mut().register(name, t.clone());
        t
    }

    pub fn randn(&self, name: &str, shape: &[usize], std: f64) -> Tensor<T> {
        let mut rng = Rng::new(self.seed).derive(fnv1a(name));
        let t = Tensor::randn(shape, std, &mut rng);
        self.finish(name, t)
    }

    pub fn zeros(&self, name: &str, shape: &[usize]) -> Tensor<T> {
        self.finish(name, Tensor::zeros(shape))
    }

    pub fn full(&self, name: &str, shape: &[usize], value: T) -> Tensor<T> {
        self.finish(name, Tensor::full(shape, value))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_name_keyed() {
        let s1 = ParamSet::<f64>::shared();
        let b1 = ParamBuilder::new(&s1, 9);
        let _a = b1.randn("alpha", &[4], 1.0);
        let w1 = b1.randn("weight", &[4], 1.0);

        let s2 = ParamSet::<f64>::shared();
        let b2 = ParamBuilder::new(&s2, 9);
        // different creation order, same name and seed
        let w2 = b2.randn("weight", &[4], 1.0);
        let _b = b2.randn("alpha", &[4], 1.0);
        assert_eq!(w1.to_vec(), w2.to_vec());
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_names_rejected() {
        let s = ParamSet::<f64>::shared();
        let b = ParamBuilder::new(&s, 0);
        let _ = b.zeros("w", &[1]);
        let _ = b.zeros("w", &[1]);
    }

    #[test]
    fn freezing_by_prefix() {
        let s = ParamSet::<f64>::shared();
        let b = ParamBuilder::with_trainable(&s, 0, &["gen."]);
        let frozen = b.randn("seg.w", &[2], 1.0);
        let live = b.randn("gen.w", &[2], 1.0);
        assert!(!frozen.is_tracked());
        assert!(live.is_tracked());
        assert_eq!(s.borrow().trainable_count(), 1);
    }
}
