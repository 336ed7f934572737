//! Ordered, named collection of trainable variables.

use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::device;
use crate::error::{arg_err, Result};

/// A tensor flattened for serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedArray {
    pub fn from_tensor(name: &str, t: &Tensor) -> Result<Self> {
        Ok(Self {
            name: name.to_string(),
            shape: t.dims().to_vec(),
            data: t.flatten_all()?.to_vec1::<f64>()?,
        })
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Ok(Tensor::from_vec(self.data.clone(), self.shape.as_slice(), &device())?)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<(String, Var)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<Var> {
        let name = name.into();
        if self.get(&name).is_some() {
            return arg_err(format!("duplicate parameter `{name}`"));
        }
        let var = Var::from_tensor(&value)?;
        self.entries.push((name, var.clone()));
        Ok(var)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, v)| v.elem_count()).sum()
    }

    pub fn snapshot(&self) -> Result<Vec<NamedArray>> {
        self.entries
            .iter()
            .map(|(n, v)| NamedArray::from_tensor(n, v.as_tensor()))
            .collect()
    }

    /// Overwrites every parameter from `arrays`, matched by name and shape.
    pub fn load(&self, arrays: &[NamedArray]) -> Result<()> {
        for (name, var) in &self.entries {
            let Some(a) = arrays.iter().find(|a| &a.name == name) else {
                return arg_err(format!("missing parameter `{name}`"));
            };
            if a.shape != var.dims() {
                return arg_err(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    a.shape,
                    var.dims()
                ));
            }
            var.set(&a.to_tensor()?)?;
        }
        Ok(())
    }
}
