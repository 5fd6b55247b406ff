//! Named parameter storage shared by every model architecture.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Matrix, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub value: Matrix,
    /// Whether the L2 penalty applies (weight matrices only).
    pub decay: bool,
}

/// Ordered, named learnable tensors.
///
/// Initial values are drawn from a generator keyed on `(seed, name)`, so two
/// architectures that share a parameter name start from the same values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    seed: u64,
    entries: Vec<ParamEntry>,
}

fn name_stream(name: &str) -> u64 {
    // FNV-1a
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            entries: Vec::new(),
        }
    }

    fn rng_for(&self, name: &str) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(name_stream(name));
        rng
    }

    fn push(&mut self, name: String, value: Matrix, decay: bool) -> ParamId {
        debug_assert!(self.entries.iter().all(|e| e.name != name), "duplicate {name}");
        self.entries.push(ParamEntry { name, value, decay });
        ParamId(self.entries.len() - 1)
    }

    /// Weight matrix, uniform in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot(&mut self, name: impl Into<String>, fan_in: usize, fan_out: usize) -> ParamId {
        let name = name.into();
        let limit = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
        let mut rng = self.rng_for(&name);
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        let value = Matrix::new(fan_in, fan_out, data).expect("finite init");
        self.push(name, value, true)
    }

    /// Bias row of zeros (no L2 penalty).
    pub fn bias(&mut self, name: impl Into<String>, width: usize) -> ParamId {
        self.push(name.into(), Matrix::zeros(1, width), false)
    }

    /// `1×1` scalar (no L2 penalty).
    pub fn scalar(&mut self, name: impl Into<String>, value: f64) -> ParamId {
        let m = Matrix::scalar(value).expect("finite init");
        self.push(name.into(), m, false)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.entries[id.0].value
    }

    pub fn set(&mut self, id: ParamId, value: Matrix) -> Result<()> {
        let slot = &mut self.entries[id.0];
        if slot.value.shape() != value.shape() {
            return Err(Error::shape("ParamStore::set", slot.value.shape(), value.shape()));
        }
        slot.value = value;
        Ok(())
    }

    pub fn values(&self) -> Vec<Matrix> {
        self.entries.iter().map(|e| e.value.clone()).collect()
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.entries.iter_mut().map(|e| &mut e.value)
    }

    /// Replaces every value; shapes must match entry by entry.
    pub fn load_values(&mut self, values: &[Matrix]) -> Result<()> {
        if values.len() != self.entries.len() {
            return Err(Error::Config(format!(
                "{} values for {} parameters",
                values.len(),
                self.entries.len()
            )));
        }
        for (i, v) in values.iter().enumerate() {
            self.set(ParamId(i), v.clone())?;
        }
        Ok(())
    }

    /// Overwrites values from a saved list of entries, matched by name.
    pub fn restore(&mut self, saved: &[ParamEntry]) -> Result<()> {
        if saved.len() != self.entries.len() {
            return Err(Error::Incompatible(format!(
                "saved model has {} parameters, architecture expects {}",
                saved.len(),
                self.entries.len()
            )));
        }
        for (slot, s) in self.entries.iter_mut().zip(saved) {
            if slot.name != s.name || slot.value.shape() != s.value.shape() {
                return Err(Error::Incompatible(format!(
                    "parameter `{}` {:?} does not match saved `{}` {:?}",
                    slot.name,
                    slot.value.shape(),
                    s.name,
                    s.value.shape()
                )));
            }
            slot.value = s.value.clone();
        }
        Ok(())
    }

    /// `Σ ‖W‖²` over decayed entries.
    pub fn l2_sum(&self) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.decay)
            .map(|e| e.value.sum_squares())
            .sum()
    }

    /// Registers every value as a tape leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.entries.iter().map(|e| tape.leaf(e.value.clone())).collect(),
        }
    }
}

/// Tape handles for a [`ParamStore`], indexed by [`ParamId`].
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    #[inline]
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_keyed_by_name() {
        let mut a = ParamStore::new(7);
        let mut b = ParamStore::new(7);
        let _ = b.glorot("other", 3, 3);
        let ia = a.glorot("w", 4, 2);
        let ib = b.glorot("w", 4, 2);
        assert_eq!(a.get(ia), b.get(ib));
        let mut c = ParamStore::new(8);
        let ic = c.glorot("w", 4, 2);
        assert_ne!(a.get(ia), c.get(ic));
    }

    #[test]
    fn glorot_range_and_decay_flags() {
        let mut s = ParamStore::new(1);
        let w = s.glorot("w", 10, 6);
        let limit = (6.0f64 / 16.0).sqrt();
        assert!(s.get(w).as_slice().iter().all(|v| v.abs() <= limit));
        let _ = s.bias("b", 6);
        let _ = s.scalar("eps", 0.1);
        assert_eq!(s.l2_sum(), s.get(w).sum_squares());
    }

    #[test]
    fn restore_checks_names_and_shapes() {
        let mut s = ParamStore::new(1);
        let _ = s.glorot("w", 2, 2);
        let saved = s.entries().to_vec();
        let mut t = ParamStore::new(2);
        let _ = t.glorot("w", 2, 2);
        t.restore(&saved).unwrap();
        assert_eq!(s.entries(), t.entries());
        let mut u = ParamStore::new(2);
        let _ = u.glorot("v", 2, 2);
        assert!(matches!(u.restore(&saved), Err(Error::Incompatible(_))));
    }
}
