use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DenseMatrix, NnError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Xavier-uniform initialized `rows x cols` weight.
    Weight,
    /// Zero-initialized bias, stored as a `1 x cols` row.
    Bias,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub kind: ParamKind,
}

impl ParamSpec {
    pub fn weight(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        ParamSpec {
            name: name.into(),
            rows,
            cols,
            kind: ParamKind::Weight,
        }
    }

    pub fn bias(name: impl Into<String>, len: usize) -> Self {
        ParamSpec {
            name: name.into(),
            rows: 1,
            cols: len,
            kind: ParamKind::Bias,
        }
    }
}

/// Named tensors in a fixed order. Shapes never change after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<DenseMatrix>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: DenseMatrix) -> Result<(), NnError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(NnError::DuplicateName(name));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(t);
        Ok(())
    }

    /// A store with the same names and shapes, filled with zeros.
    pub fn zeros_like(&self) -> Self {
        ParamStore {
            names: self.names.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| DenseMatrix::zeros(t.rows(), t.cols()))
                .collect(),
            index: self.index.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DenseMatrix)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensor(&self, i: usize) -> &DenseMatrix {
        &self.tensors[i]
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut DenseMatrix {
        &mut self.tensors[i]
    }

    pub fn get(&self, name: &str) -> Option<&DenseMatrix> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut DenseMatrix> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn require(&self, name: &str) -> Result<&DenseMatrix, NnError> {
        self.get(name).ok_or_else(|| NnError::UnknownParam(name.into()))
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(DenseMatrix::len).sum()
    }

    /// Errors unless `other` has the same names and shapes in the same order.
    pub fn check_same_layout(&self, other: &ParamStore) -> Result<(), NnError> {
        if self.names != other.names {
            let name = self
                .names
                .iter()
                .zip(&other.names)
                .find(|(a, b)| a != b)
                .map(|(a, _)| a.clone())
                .unwrap_or_else(|| "<count>".into());
            return Err(NnError::UnknownParam(name));
        }
        for (name, (a, b)) in self.names.iter().zip(self.tensors.iter().zip(&other.tensors)) {
            if a.shape() != b.shape() {
                return Err(NnError::ShapeMismatch {
                    name: name.clone(),
                    expected: a.shape(),
                    got: b.shape(),
                });
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(DenseMatrix::is_finite)
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

/// Xavier-uniform weights and zero biases, deterministic in `seed`.
pub fn init_params(specs: &[ParamSpec], seed: u64) -> Result<ParamStore, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for spec in specs {
        if spec.rows == 0 || spec.cols == 0 || (spec.kind == ParamKind::Bias && spec.rows != 1) {
            return Err(NnError::InvalidShape {
                name: spec.name.clone(),
                rows: spec.rows,
                cols: spec.cols,
            });
        }
        let mut t = DenseMatrix::zeros(spec.rows, spec.cols);
        if spec.kind == ParamKind::Weight {
            // fan_out = rows, fan_in = cols
            let bound = (6.0 / (spec.rows + spec.cols) as f64).sqrt() as f32;
            for x in t.as_mut_slice() {
                *x = rng.gen_range(-bound..=bound);
            }
        }
        store.insert(spec.name.clone(), t)?;
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn specs() -> Vec<ParamSpec> {
        vec![ParamSpec::weight("w", 64, 1536), ParamSpec::bias("b", 64)]
    }

    #[test]
    fn same_seed_same_store() {
        assert_eq!(init_params(&specs(), 7).unwrap(), init_params(&specs(), 7).unwrap());
        assert_ne!(init_params(&specs(), 7).unwrap(), init_params(&specs(), 8).unwrap());
    }

    #[test]
    fn biases_zero_weights_within_xavier_bound() {
        let p = init_params(&specs(), 1).unwrap();
        assert!(p.get("b").unwrap().as_slice().iter().all(|&x| x == 0.0));
        let bound = (6.0f32 / (64.0 + 1536.0)).sqrt();
        let w = p.get("w").unwrap();
        assert!(w.as_slice().iter().all(|x| x.abs() <= bound));
        // the range is actually used, not collapsed near zero
        let max = w.as_slice().iter().fold(0.0f32, |m, x| m.max(x.abs()));
        assert!(max > 0.9 * bound);
    }

    #[test]
    fn invalid_shapes_rejected() {
        assert!(matches!(
            init_params(&[ParamSpec::weight("w", 0, 3)], 0),
            Err(NnError::InvalidShape { .. })
        ));
        let dup = [ParamSpec::bias("b", 2), ParamSpec::bias("b", 2)];
        assert!(matches!(init_params(&dup, 0), Err(NnError::DuplicateName(_))));
    }
}
