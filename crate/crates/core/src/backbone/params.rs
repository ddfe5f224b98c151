//! Named parameter storage for one parameter group.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use candle_core::{DType, Device, Tensor, Var};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
struct Param {
    var: Var,
    trainable: bool,
}

/// Ordered map of named `f32` variables. Batch-norm running statistics are
/// stored as non-trainable buffers so that optimizers never touch them.
#[derive(Debug, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(|p| p.var.elem_count()).sum()
    }

    pub(crate) fn trainable_vars(&self) -> impl Iterator<Item = &Var> {
        self.params.values().filter(|p| p.trainable).map(|p| &p.var)
    }

    /// SHA-256 over every name, shape and little-endian value, in name order.
    pub fn checksum(&self) -> Result<String> {
        let mut hasher = Sha256::new();
        for (name, param) in &self.params {
            hasher.update((name.len() as u64).to_le_bytes());
            hasher.update(name.as_bytes());
            for d in param.var.dims() {
                hasher.update((*d as u64).to_le_bytes());
            }
            for v in flat_values(param.var.as_tensor())? {
                hasher.update(v.to_le_bytes());
            }
        }
        Ok(hex::encode(hasher.finalize()))
    }

    /// Deep copy of every value.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        self.params
            .iter()
            .map(|(name, p)| Ok((name.clone(), p.var.as_tensor().copy()?)))
            .collect()
    }

    /// Writes snapshot values back in place; shapes and names must match exactly.
    pub fn restore(&self, snapshot: &BTreeMap<String, Tensor>) -> Result<()> {
        if snapshot.len() != self.params.len() {
            return Err(Error::Integrity(format!(
                "snapshot has {} tensors, store has {}",
                snapshot.len(),
                self.params.len()
            )));
        }
        for (name, param) in &self.params {
            let value = snapshot
                .get(name)
                .ok_or_else(|| Error::Integrity(format!("snapshot lacks `{name}`")))?;
            if value.dims() != param.var.dims() {
                return Err(Error::Integrity(format!(
                    "`{name}` has shape {:?}, expected {:?}",
                    value.dims(),
                    param.var.dims()
                )));
            }
            param.var.set(&value.to_dtype(DType::F32)?)?;
        }
        Ok(())
    }

    pub(crate) fn insert(&mut self, name: String, var: Var, trainable: bool) {
        self.params.insert(name, Param { var, trainable });
    }

    pub(crate) fn iter(&self) -> impl Iterator<Item = (&str, &Var, bool)> {
        self.params.iter().map(|(n, p)| (n.as_str(), &p.var, p.trainable))
    }
}

pub(crate) fn flat_values(t: &Tensor) -> Result<Vec<f32>> {
    Ok(t.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?)
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Init {
    Zeros,
    Ones,
    /// `U(-bound, bound)`.
    Uniform(f64),
}

/// Where parameter values come from while a network is being assembled.
pub(crate) enum Source<'a> {
    Random(Box<ChaCha8Rng>),
    Tensors(&'a HashMap<String, Tensor>),
}

impl Source<'_> {
    pub(crate) fn seeded(seed: u64) -> Self {
        Source::Random(Box::new(ChaCha8Rng::seed_from_u64(seed)))
    }
}

struct BuildState<'a> {
    store: ParamStore,
    source: Source<'a>,
}

/// Hands out named parameters while a network is constructed, either drawing
/// them from a seeded RNG or looking them up in a loaded tensor map.
#[derive(Clone)]
pub(crate) struct ParamBuilder<'a> {
    state: Rc<RefCell<BuildState<'a>>>,
    prefix: String,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(source: Source<'a>) -> Self {
        Self {
            state: Rc::new(RefCell::new(BuildState {
                store: ParamStore::default(),
                source,
            })),
            prefix: String::new(),
        }
    }

    pub fn pp(&self, name: impl AsRef<str>) -> Self {
        Self {
            state: Rc::clone(&self.state),
            prefix: self.full_name(name.as_ref()),
        }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    pub fn weight(&self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        self.get(name, shape, init, true)
    }

    pub fn buffer(&self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        self.get(name, shape, init, false)
    }

    fn get(&self, name: &str, shape: &[usize], init: Init, trainable: bool) -> Result<Tensor> {
        let full = self.full_name(name);
        let mut state = self.state.borrow_mut();
        let value = match &mut state.source {
            Source::Random(rng) => {
                let n: usize = shape.iter().product();
                let data: Vec<f32> = match init {
                    Init::Zeros => vec![0.0; n],
                    Init::Ones => vec![1.0; n],
                    Init::Uniform(bound) => {
                        let dist = Uniform::new_inclusive(-bound as f32, bound as f32);
                        (0..n).map(|_| dist.sample(rng)).collect()
                    }
                };
                Tensor::from_vec(data, shape, &Device::Cpu)?
            }
            Source::Tensors(map) => {
                let t = map
                    .get(&full)
                    .ok_or_else(|| Error::Integrity(format!("missing tensor `{full}`")))?;
                if t.dims() != shape {
                    return Err(Error::Integrity(format!(
                        "tensor `{full}` has shape {:?}, expected {:?}",
                        t.dims(),
                        shape
                    )));
                }
                t.to_dtype(DType::F32)?
            }
        };
        let var = Var::from_tensor(&value)?;
        let tensor = var.as_tensor().clone();
        state.store.insert(full, var, trainable);
        Ok(tensor)
    }

    pub fn finish(self) -> ParamStore {
        let state = Rc::try_unwrap(self.state)
            .ok()
            .expect("all child builders dropped before finish");
        state.into_inner().store
    }
}
