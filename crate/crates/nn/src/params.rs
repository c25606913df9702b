//! Named parameter storage with accumulated gradients.

use ndarray::Array2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
struct Entry {
    name: String,
    value: Array2<f64>,
    grad: Array2<f64>,
}

/// Flat list of named parameter matrices. Models hold `ParamId`s; the tape
/// accumulates gradients here during `backward`.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        let grad = Array2::zeros(value.raw_dim());
        self.entries.push(Entry {
            name: name.into(),
            value,
            grad,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Array2<f64> {
        &self.entries[id.0].grad
    }

    pub fn accumulate_grad(&mut self, id: ParamId, g: &Array2<f64>) {
        self.entries[id.0].grad += g;
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(0.0);
        }
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Copies values for matched (src, dst) id pairs; shapes must agree.
    pub fn copy_values(src: &ParamStore, pairs: &[(ParamId, ParamId)], dst: &mut ParamStore) {
        for (s, d) in pairs {
            assert_eq!(
                src.entries[s.0].value.shape(),
                dst.entries[d.0].value.shape(),
                "copy_values shape mismatch: {} -> {}",
                src.entries[s.0].name,
                dst.entries[d.0].name
            );
            dst.entries[d.0].value.assign(&src.entries[s.0].value);
        }
    }

    /// Export all parameters as (name, shape, data) triples.
    pub fn export(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        self.entries
            .iter()
            .map(|e| {
                (
                    e.name.clone(),
                    e.value.shape().to_vec(),
                    e.value.iter().copied().collect(),
                )
            })
            .collect()
    }

    /// Restore parameter values from exported triples (matched by order and
    /// name).
    pub fn import(&mut self, data: &[(String, Vec<usize>, Vec<f64>)]) -> Result<(), String> {
        if data.len() != self.entries.len() {
            return Err(format!(
                "parameter count mismatch: checkpoint has {}, model has {}",
                data.len(),
                self.entries.len()
            ));
        }
        for (entry, (name, shape, values)) in self.entries.iter_mut().zip(data.iter()) {
            if &entry.name != name {
                return Err(format!(
                    "parameter name mismatch: expected '{}', checkpoint has '{}'",
                    entry.name, name
                ));
            }
            if entry.value.shape() != shape.as_slice() {
                return Err(format!(
                    "parameter '{}': shape {:?} != checkpoint {:?}",
                    name,
                    entry.value.shape(),
                    shape
                ));
            }
            entry.value = Array2::from_shape_vec((shape[0], shape[1]), values.clone())
                .map_err(|e| e.to_string())?;
        }
        Ok(())
    }

    /// Bit-exact equality of all parameter values (freeze-contract checks).
    pub fn values_equal(&self, other: &ParamStore) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(other.entries.iter()).all(|(a, b)| {
                a.value.shape() == b.value.shape()
                    && a.value
                        .iter()
                        .zip(b.value.iter())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}
