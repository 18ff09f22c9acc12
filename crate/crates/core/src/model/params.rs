//! Named parameter store shared by the optimizer, the finite-difference
//! checker, and the checkpoint format.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mat::Mat;

/// One named tensor.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Mat,
}

/// Ordered collection of named tensors; iteration order is the registration
/// order, which fixes the flat-coordinate layout, the optimizer update order,
/// and the checkpoint layout.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn push(&mut self, name: &str, value: Mat) {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name}"
        );
        self.by_name.insert(name.to_string(), self.params.len());
        self.params.push(Param { name: name.to_string(), value });
    }

    pub fn has(&self, name: &str) -> bool {
        self.by_name.contains_key(name)
    }

    pub fn get(&self, name: &str) -> &Mat {
        &self.params[self.by_name[name]].value
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Mat {
        let idx = self.by_name[name];
        &mut self.params[idx].value
    }

    pub fn try_get(&self, name: &str) -> Option<&Mat> {
        self.by_name.get(name).map(|&i| &self.params[i].value)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn n_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Same names and shapes, all zeros — the gradient/moment layout.
    pub fn zeros_like(&self) -> ParamStore {
        let mut out = ParamStore::new();
        for p in &self.params {
            out.push(&p.name, Mat::zeros(p.value.rows(), p.value.cols()));
        }
        out
    }

    pub fn zero_all(&mut self) {
        for p in &mut self.params {
            p.value.fill(0.0);
        }
    }

    /// Map a flat coordinate over all scalars to `(tensor index, offset)`.
    pub fn locate(&self, flat: usize) -> Option<(usize, usize)> {
        let mut rest = flat;
        for (i, p) in self.params.iter().enumerate() {
            if rest < p.value.len() {
                return Some((i, rest));
            }
            rest -= p.value.len();
        }
        None
    }

    pub fn tensor(&self, idx: usize) -> &Param {
        &self.params[idx]
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut Param {
        &mut self.params[idx]
    }

    /// First non-finite scalar, reported as `name[offset]`.
    pub fn find_non_finite(&self) -> Option<String> {
        for p in &self.params {
            if let Some(off) = p.value.as_slice().iter().position(|v| !v.is_finite()) {
                return Some(format!("{}[{off}]", p.name));
            }
        }
        None
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.find_non_finite() {
            Some(path) => Err(Error::Numeric(format!("non-finite parameter at {path}"))),
            None => Ok(()),
        }
    }
}

/// Standard normal via Box-Muller on the shared RNG.
pub fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Matrix of `N(0, std)` entries.
pub fn gauss_mat(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Mat {
    Mat::from_fn(rows, cols, |_, _| gauss(rng) * std)
}
