use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{NumericsError, Tensor};

/// Named parameter tensors, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<ParamRecord>", try_from = "Vec<ParamRecord>")]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

/// Serialized form of one parameter: name, shape and row-major values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor, NumericsError> {
        self.get(name)
            .ok_or_else(|| NumericsError::UnknownParameter(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }
}

impl From<ParamStore> for Vec<ParamRecord> {
    fn from(store: ParamStore) -> Self {
        store
            .tensors
            .into_iter()
            .map(|(name, t)| ParamRecord {
                name,
                shape: t.shape().to_vec(),
                values: t.into_data(),
            })
            .collect()
    }
}

impl TryFrom<Vec<ParamRecord>> for ParamStore {
    type Error = NumericsError;

    fn try_from(records: Vec<ParamRecord>) -> Result<Self, Self::Error> {
        let mut store = ParamStore::new();
        for r in records {
            if store.get(&r.name).is_some() {
                return Err(NumericsError::DuplicateParameter(r.name));
            }
            let t = Tensor::new(r.shape, r.values)?;
            store.insert(r.name, t);
        }
        Ok(store)
    }
}
