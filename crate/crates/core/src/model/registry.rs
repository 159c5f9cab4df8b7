use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// What a learnable tensor is; the optimizer only decays weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Slope,
}

/// A named view of one learnable tensor.
#[derive(Debug)]
pub struct ParamEntry<'a, S> {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    pub values: &'a [S],
}

#[derive(Debug)]
pub struct ParamEntryMut<'a, S> {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    pub values: &'a mut [S],
}

/// Gradients keyed by registry name.
#[derive(Clone, Debug, PartialEq)]
pub struct GradMap<S = f32> {
    entries: BTreeMap<String, Vec<S>>,
}

impl<S: Scalar> GradMap<S> {
    pub fn from_entries<'a>(entries: impl IntoIterator<Item = ParamEntry<'a, S>>) -> Self {
        GradMap {
            entries: entries.into_iter().map(|e| (e.name, e.values.to_vec())).collect(),
        }
    }

    pub fn zeros_like<'a>(entries: impl IntoIterator<Item = ParamEntry<'a, S>>) -> Self {
        GradMap {
            entries: entries
                .into_iter()
                .map(|e| (e.name, vec![S::zero(); e.values.len()]))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&[S]> {
        self.entries.get(name).map(Vec::as_slice)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut [S]> {
        self.entries.get_mut(name).map(Vec::as_mut_slice)
    }

    pub fn require(&self, name: &str) -> Result<&[S]> {
        self.get(name)
            .ok_or_else(|| Error::State(format!("no gradient entry for `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[S])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut [S])> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v.as_mut_slice()))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn max_abs(&self) -> S {
        self.entries
            .values()
            .flatten()
            .fold(S::zero(), |m, v| m.max(v.abs()))
    }

    /// Elementwise `self += other`; key sets must agree.
    pub fn accumulate(&mut self, other: &GradMap<S>) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::State("gradient maps have different keys".into()));
        }
        for (k, v) in &mut self.entries {
            let o = other.require(k)?;
            for (a, &b) in v.iter_mut().zip(o) {
                *a += b;
            }
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> GradMap<T> {
        GradMap {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v.iter().map(|x| T::from_f64(x.as_f64())).collect()))
                .collect(),
        }
    }
}
