use std::collections::HashMap;

use crate::autodiff::graph::Gradients;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which sub-network a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Encoder,
    Decoder,
    Head,
    DomainHead,
}

impl ParamGroup {
    pub fn code(self) -> u8 {
        match self {
            ParamGroup::Encoder => 0,
            ParamGroup::Decoder => 1,
            ParamGroup::Head => 2,
            ParamGroup::DomainHead => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => ParamGroup::Encoder,
            1 => ParamGroup::Decoder,
            2 => ParamGroup::Head,
            3 => ParamGroup::DomainHead,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub group: ParamGroup,
    pub tensor: Tensor<T>,
}

/// Ordered, uniquely named set of trainable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new(), by_name: HashMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, group: ParamGroup, tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param { name, group, tensor });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].tensor
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Param<T>)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn count_values(&self, groups: &[ParamGroup]) -> usize {
        self.params
            .iter()
            .filter(|p| groups.contains(&p.group))
            .map(|p| p.tensor.len())
            .sum()
    }

    /// Adds backward results into every parameter's grad slot.
    ///
    /// Parameters the loss never reached receive an explicit zero gradient.
    pub fn accumulate(&mut self, grads: &Gradients<T>) -> Result<()> {
        for (i, p) in self.params.iter_mut().enumerate() {
            match grads.param(ParamId(i)) {
                Some(g) => p.tensor.accumulate_grad(g)?,
                None => {
                    if p.tensor.grad().is_none() {
                        p.tensor.set_grad(vec![T::zero(); p.tensor.len()])?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.params {
            p.tensor.clear_grad();
        }
    }

    /// True when names, shapes and every value agree bit-for-bit.
    pub fn bit_identical(&self, other: &Self) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| {
                a.name == b.name
                    && a.tensor.shape() == b.tensor.shape()
                    && a
                        .tensor
                        .data()
                        .iter()
                        .zip(b.tensor.data())
                        .all(|(x, y)| x.to_bits_u64() == y.to_bits_u64())
            })
    }
}

trait Bits {
    fn to_bits_u64(self) -> u64;
}

impl<T: Scalar> Bits for T {
    fn to_bits_u64(self) -> u64 {
        // f32 values widen exactly to f64, so equal bits in T imply equal f64 bits.
        self.as_f64().to_bits()
    }
}
