use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{KernelError, Tensor};
use crate::scalar::Scalar;

/// Standard deviation used for weight matrices unless a module says otherwise.
pub const WEIGHT_INIT_STD: f64 = 0.02;

/// How a parameter is initialised.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Normal { std: f64 },
    Zeros,
    Ones,
}

impl Init {
    pub const WEIGHT: Init = Init::Normal {
        std: WEIGHT_INIT_STD,
    };
}

/// Named, shape-fixed parameter tensors. Iteration order is the lexical order
/// of the names, which keeps optimizer updates and checkpoints deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet<T> {
    tensors: BTreeMap<String, Tensor<T>>,
    inits: BTreeMap<String, Init>,
}

impl<T: Scalar> Default for ParameterSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParameterSet<T> {
    pub fn new() -> Self {
        Self {
            tensors: BTreeMap::new(),
            inits: BTreeMap::new(),
        }
    }

    /// Registers and initialises a parameter.
    pub fn add<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        init: Init,
        rng: &mut R,
    ) -> Result<(), KernelError> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(KernelError::DuplicateParam(name));
        }
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![T::zero(); n],
            Init::Ones => vec![T::one(); n],
            Init::Normal { std } => {
                let dist = Normal::new(0.0, std).map_err(|_| KernelError::InvalidInit(name.clone()))?;
                (0..n).map(|_| T::of(dist.sample(rng))).collect()
            }
        };
        let t = Tensor::new(shape.to_vec(), data)?;
        self.tensors.insert(name.clone(), t);
        self.inits.insert(name, init);
        Ok(())
    }

    /// Inserts an explicit value (used by loaders and tests).
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        let name = name.into();
        self.inits.entry(name.clone()).or_insert(Init::Zeros);
        self.tensors.insert(name, value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>, KernelError> {
        self.tensors
            .get(name)
            .ok_or_else(|| KernelError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>, KernelError> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| KernelError::UnknownParam(name.to_string()))
    }

    /// Replaces the value of an existing parameter; the shape must not change.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<(), KernelError> {
        let slot = self.get_mut(name)?;
        if slot.shape() != value.shape() {
            return Err(KernelError::ShapeMismatch {
                op: "set",
                left: slot.shape().to_vec(),
                right: value.shape().to_vec(),
            });
        }
        *slot = value;
        Ok(())
    }

    pub fn init_of(&self, name: &str) -> Option<Init> {
        self.inits.get(name).copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar entries.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// A set with the same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
            inits: self.inits.clone(),
        }
    }

    /// Elementwise `self += other`; names and shapes must agree.
    pub fn accumulate(&mut self, other: &Self) -> Result<(), KernelError> {
        for (name, t) in &mut self.tensors {
            let o = other.get(name)?;
            if o.shape() != t.shape() {
                return Err(KernelError::ShapeMismatch {
                    op: "accumulate",
                    left: t.shape().to_vec(),
                    right: o.shape().to_vec(),
                });
            }
            t.add_assign(o);
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        for t in self.tensors.values_mut() {
            t.scale_in_place(s);
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParameterSet<U> {
        ParameterSet {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
            inits: self.inits.clone(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn names_are_unique_and_inits_have_expected_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = ParameterSet::<f64>::new();
        p.add("w", &[64, 64], Init::WEIGHT, &mut rng).unwrap();
        p.add("b", &[64], Init::Zeros, &mut rng).unwrap();
        p.add("g", &[64], Init::Ones, &mut rng).unwrap();
        assert!(matches!(
            p.add("w", &[1], Init::Zeros, &mut rng),
            Err(KernelError::DuplicateParam(_))
        ));
        let w = p.get("w").unwrap().data();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64;
        assert!(mean.abs() < 0.003);
        assert!((var.sqrt() - 0.02).abs() < 0.002);
        assert!(p.get("b").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(p.get("g").unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn set_rejects_shape_change() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = ParameterSet::<f64>::new();
        p.add("w", &[2, 2], Init::Zeros, &mut rng).unwrap();
        assert!(p.set("w", Tensor::zeros(&[4])).is_err());
    }
}
