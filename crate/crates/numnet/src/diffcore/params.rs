//! Named trainable parameters with optimizer state and EMA shadows.

use super::real::Real;
use super::tensor::Tensor;
use super::DiffError;
use std::collections::BTreeMap;

/// One parameter: its value, Adam moments, and the exponential moving
/// average shadow (initialized to the value at insertion).
#[derive(Debug, Clone)]
pub struct ParamEntry<S: Real> {
    pub value: Tensor<S>,
    pub m: Tensor<S>,
    pub v: Tensor<S>,
    pub ema: Tensor<S>,
}

/// Ordered (by name) store of trainable parameters.
///
/// Mutation (optimizer steps, EMA updates, swaps) must stay on a single
/// thread; concurrent readers are fine between mutations.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<S: Real> {
    entries: BTreeMap<String, ParamEntry<S>>,
    /// Number of optimizer steps taken (for Adam bias correction).
    pub step: u64,
    /// Saved live values while EMA shadows are swapped in.
    stashed: Option<BTreeMap<String, Tensor<S>>>,
}

impl<S: Real> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            entries: BTreeMap::new(),
            step: 0,
            stashed: None,
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<S>) {
        assert!(
            !self.entries.contains_key(name),
            "duplicate parameter name '{name}'"
        );
        let (r, c) = value.shape();
        let mut value = value;
        value.requires_grad = true;
        self.entries.insert(
            name.to_string(),
            ParamEntry {
                ema: value.clone(),
                m: Tensor::zeros(r, c),
                v: Tensor::zeros(r, c),
                value,
            },
        );
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn get(&self, name: &str) -> &Tensor<S> {
        &self.entries[name].value
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor<S> {
        &mut self.entries.get_mut(name).expect("unknown parameter").value
    }

    pub fn entry(&self, name: &str) -> &ParamEntry<S> {
        &self.entries[name]
    }

    pub fn entry_mut(&mut self, name: &str) -> &mut ParamEntry<S> {
        self.entries.get_mut(name).expect("unknown parameter")
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamEntry<S>)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ParamEntry<S>)> {
        self.entries.iter_mut()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    /// shadow <- decay * shadow + (1 - decay) * value, for every parameter.
    pub fn ema_update(&mut self, decay: S) {
        for e in self.entries.values_mut() {
            for (s, &p) in e.ema.data_mut().iter_mut().zip(e.value.data().iter()) {
                *s = decay * *s + (S::one() - decay) * p;
            }
        }
    }

    /// Substitute EMA shadows for the live values (for evaluation). Errors
    /// if shadows are already swapped in.
    pub fn ema_swap_in(&mut self) -> Result<(), DiffError> {
        if self.stashed.is_some() {
            return Err(DiffError::State(
                "ema_swap_in called twice without ema_swap_out".into(),
            ));
        }
        let mut stash = BTreeMap::new();
        for (name, e) in self.entries.iter_mut() {
            stash.insert(name.clone(), std::mem::replace(&mut e.value, e.ema.clone()));
            e.value.requires_grad = true;
        }
        self.stashed = Some(stash);
        Ok(())
    }

    /// Restore the live values saved by `ema_swap_in`.
    pub fn ema_swap_out(&mut self) -> Result<(), DiffError> {
        let stash = self.stashed.take().ok_or_else(|| {
            DiffError::State("ema_swap_out without a prior ema_swap_in".into())
        })?;
        for (name, value) in stash {
            self.entries.get_mut(&name).expect("stash matches entries").value = value;
        }
        Ok(())
    }

    pub fn ema_swapped(&self) -> bool {
        self.stashed.is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(value: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::from_vec(1, 2, vec![value, value]).unwrap());
        s
    }

    #[test]
    fn ema_decay_zero_tracks_params() {
        let mut s = store_with(1.0);
        s.entry_mut("w").ema = Tensor::zeros(1, 2);
        s.ema_update(0.0);
        assert_eq!(s.entry("w").ema.data(), s.get("w").data());
    }

    #[test]
    fn ema_converges_to_constant_params() {
        let mut s = store_with(2.0);
        s.entry_mut("w").ema = Tensor::zeros(1, 2);
        for _ in 0..2000 {
            s.ema_update(0.99);
        }
        assert!((s.entry("w").ema.get(0, 0) - 2.0).abs() < 1e-8);
    }

    #[test]
    fn ema_two_updates_half_decay() {
        let mut s = store_with(1.0);
        s.entry_mut("w").ema = Tensor::zeros(1, 2);
        s.ema_update(0.5);
        s.ema_update(0.5);
        assert!((s.entry("w").ema.get(0, 0) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn swap_in_out_restores_values() {
        let mut s = store_with(3.0);
        s.entry_mut("w").ema = Tensor::from_vec(1, 2, vec![9.0, 9.0]).unwrap();
        s.ema_swap_in().unwrap();
        assert_eq!(s.get("w").data(), &[9.0, 9.0]);
        s.ema_swap_out().unwrap();
        assert_eq!(s.get("w").data(), &[3.0, 3.0]);
    }

    #[test]
    fn double_swap_in_is_error() {
        let mut s = store_with(1.0);
        s.ema_swap_in().unwrap();
        assert!(s.ema_swap_in().is_err());
    }
}
