use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::ModelSpec;
use super::tensor::Real;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T = f32> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// Ordered named parameters; gradients share this layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights<T = f32> {
    pub params: Vec<Param<T>>,
}

impl<T: Real> Weights<T> {
    pub fn zeros(spec: &ModelSpec) -> Result<Self> {
        let params = spec
            .param_shapes()?
            .into_iter()
            .map(|(name, shape)| {
                let n = shape.iter().product();
                Param {
                    name,
                    shape,
                    data: vec![T::ZERO; n],
                }
            })
            .collect();
        Ok(Self { params })
    }

    /// He-uniform weights on hidden layers, a narrower range on the output
    /// layer, zero biases.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let mut w = Self::zeros(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = w.params.len() - 2;
        for (i, p) in w.params.iter_mut().enumerate() {
            if !p.name.ends_with(".weight") {
                continue;
            }
            let fan_in: usize = p.shape[..p.shape.len() - 1].iter().product();
            let fan_out = *p.shape.last().unwrap();
            let bound = if i == last {
                (6.0 / (fan_in + fan_out) as f64).sqrt()
            } else {
                (6.0 / fan_in as f64).sqrt()
            };
            for v in &mut p.data {
                *v = T::from_f64(rng.random_range(-bound..bound));
            }
        }
        Ok(w)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: vec![T::ZERO; p.data.len()],
                })
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn len(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cast<U: Real>(&self) -> Weights<U> {
        Weights {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: p.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
                })
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.data.iter().all(|v| v.is_finite()))
    }

    /// Checks names and shapes against `spec`, naming the first mismatch.
    pub fn check(&self, spec: &ModelSpec) -> Result<()> {
        let expected = spec.param_shapes()?;
        for (name, shape) in &expected {
            let p = self.get(name).ok_or_else(|| Error::ParameterMismatch {
                name: name.clone(),
                reason: "missing".into(),
            })?;
            if &p.shape != shape || p.data.len() != shape.iter().product::<usize>() {
                return Err(Error::ParameterMismatch {
                    name: name.clone(),
                    reason: format!("expected shape {shape:?}, got {:?}", p.shape),
                });
            }
        }
        if let Some(extra) = self.params.iter().find(|p| !expected.iter().any(|(n, _)| n == &p.name)) {
            return Err(Error::ParameterMismatch {
                name: extra.name.clone(),
                reason: "not part of the model".into(),
            });
        }
        if self.params.len() != expected.len() {
            return Err(Error::ParameterMismatch {
                name: "*".into(),
                reason: "duplicate parameters".into(),
            });
        }
        Ok(())
    }
}
