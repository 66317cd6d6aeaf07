//! Named flat parameter arrays and their gradients.
//!
//! A [`ParameterStore`] is the unit of checkpointing and optimizer state: every
//! network weight lives here under a dotted name (`critic.q1.w0`, ...) together
//! with its shape. Shapes are fixed at insertion; only values change afterwards.

use std::collections::BTreeMap;

use crate::diffcore::DiffError;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    shape: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> Param<T> {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Map from layer name to flat array plus shape metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore<T> {
    entries: BTreeMap<String, Param<T>>,
}

impl<T: Real> ParameterStore<T> {
    pub fn new() -> Self {
        ParameterStore {
            entries: BTreeMap::new(),
        }
    }

    /// Inserts a fresh entry. The array length must equal the shape product.
    pub fn insert(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        values: Vec<T>,
    ) -> Result<(), DiffError> {
        let name = name.into();
        let expect: usize = shape.iter().product();
        if expect != values.len() {
            return Err(DiffError::ShapeMismatch {
                context: format!(
                    "parameter {name}: shape {shape:?} wants {expect} values, got {}",
                    values.len()
                ),
            });
        }
        if self.entries.contains_key(&name) {
            return Err(DiffError::DuplicateParam { name });
        }
        self.entries.insert(name, Param { shape, values });
        Ok(())
    }

    pub fn insert_scalar(&mut self, name: impl Into<String>, value: T) -> Result<(), DiffError> {
        self.insert(name, vec![1], vec![value])
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.entries.get(name)
    }

    pub fn values(&self, name: &str) -> Result<&[T], DiffError> {
        self.entries
            .get(name)
            .map(|p| p.values.as_slice())
            .ok_or_else(|| DiffError::MissingParam {
                name: name.to_string(),
            })
    }

    pub fn scalar(&self, name: &str) -> Result<T, DiffError> {
        let v = self.values(name)?;
        if v.len() != 1 {
            return Err(DiffError::ShapeMismatch {
                context: format!("parameter {name} is not a scalar (len {})", v.len()),
            });
        }
        Ok(v[0])
    }

    /// Overwrites the values of an existing entry; the shape stays fixed.
    pub fn set_values(&mut self, name: &str, values: &[T]) -> Result<(), DiffError> {
        let p = self
            .entries
            .get_mut(name)
            .ok_or_else(|| DiffError::MissingParam {
                name: name.to_string(),
            })?;
        if p.values.len() != values.len() {
            return Err(DiffError::ShapeMismatch {
                context: format!(
                    "parameter {name}: cannot resize from {} to {}",
                    p.values.len(),
                    values.len()
                ),
            });
        }
        p.values.copy_from_slice(values);
        Ok(())
    }

    pub fn values_mut(&mut self, name: &str) -> Result<&mut [T], DiffError> {
        self.entries
            .get_mut(name)
            .map(|p| p.values.as_mut_slice())
            .ok_or_else(|| DiffError::MissingParam {
                name: name.to_string(),
            })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar values across all entries.
    pub fn value_count(&self) -> usize {
        self.entries.values().map(|p| p.values.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }

    /// Clones the entries whose names start with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParameterStore<T> {
        let entries = self
            .entries
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        ParameterStore { entries }
    }

    /// Copies values from `other` into same-named entries of `self`.
    pub fn copy_values_from(&mut self, other: &ParameterStore<T>) -> Result<(), DiffError> {
        for (name, param) in other.iter() {
            self.set_values(name, param.values())?;
        }
        Ok(())
    }
}

/// One gradient array per touched parameter, same keyspace as the source store.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientStore<T> {
    entries: BTreeMap<String, Vec<T>>,
}

impl<T: Real> GradientStore<T> {
    pub fn new() -> Self {
        GradientStore {
            entries: BTreeMap::new(),
        }
    }

    /// Adds `grad` into the entry for `name`, creating it as zeros first.
    pub fn accumulate(&mut self, name: &str, grad: &[T]) {
        match self.entries.get_mut(name) {
            Some(g) => {
                debug_assert_eq!(g.len(), grad.len());
                for (gi, &d) in g.iter_mut().zip(grad) {
                    *gi += d;
                }
            }
            None => {
                self.entries.insert(name.to_string(), grad.to_vec());
            }
        }
    }

    /// Mutable access to the entry for `name`, created as `len` zeros when
    /// absent. The backward sweep accumulates parameter gradients in place
    /// through this.
    pub fn entry_buffer(&mut self, name: &str, len: usize) -> &mut [T] {
        if !self.entries.contains_key(name) {
            self.entries.insert(name.to_string(), vec![T::zero(); len]);
        }
        self.entries.get_mut(name).unwrap()
    }

    /// Merges another gradient store into this one (entry-wise sum).
    pub fn merge(&mut self, other: &GradientStore<T>) {
        for (name, grad) in &other.entries {
            self.accumulate(name, grad);
        }
    }

    /// Multiplies every gradient by `factor` (used to turn sums into means).
    pub fn scale(&mut self, factor: T) {
        for grad in self.entries.values_mut() {
            for g in grad.iter_mut() {
                *g *= factor;
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&[T]> {
        self.entries.get(name).map(|v| v.as_slice())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[T])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Checks that every stored value is finite.
    pub fn ensure_finite(&self) -> Result<(), DiffError> {
        for (name, grad) in &self.entries {
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(DiffError::NonFiniteGradient { name: name.clone() });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insert_rejects_shape_value_disagreement() {
        let mut store: ParameterStore<f64> = ParameterStore::new();
        let err = store.insert("w", vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, DiffError::ShapeMismatch { .. }));
        store.insert("w", vec![2, 3], vec![0.0; 6]).unwrap();
        assert!(store.insert("w", vec![6], vec![0.0; 6]).is_err());
    }

    #[test]
    fn set_values_keeps_shape_immutable() {
        let mut store: ParameterStore<f64> = ParameterStore::new();
        store.insert("b", vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        assert!(store.set_values("b", &[0.0, 0.0]).is_err());
        store.set_values("b", &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(store.values("b").unwrap(), &[4.0, 5.0, 6.0]);
        assert_eq!(store.get("b").unwrap().shape(), &[3]);
    }

    #[test]
    fn gradient_accumulate_and_scale() {
        let mut g: GradientStore<f64> = GradientStore::new();
        g.accumulate("w", &[1.0, 2.0]);
        g.accumulate("w", &[0.5, -1.0]);
        g.scale(2.0);
        assert_eq!(g.get("w").unwrap(), &[3.0, 2.0]);
    }

    #[test]
    fn non_finite_gradient_is_reported_with_name() {
        let mut g: GradientStore<f64> = GradientStore::new();
        g.accumulate("ok", &[1.0]);
        g.accumulate("bad", &[f64::NAN]);
        match g.ensure_finite().unwrap_err() {
            DiffError::NonFiniteGradient { name } => assert_eq!(name, "bad"),
            other => panic!("unexpected error {other:?}"),
        }
    }
}
