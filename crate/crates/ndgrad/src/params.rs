use indexmap::IndexMap;

use crate::{Array, GradError, Gradients, Result, Tape, Var};

/// Ordered collection of named arrays (weights, gradients, optimizer moments).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: IndexMap<String, Array>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array) -> Option<Array> {
        self.entries.insert(name.into(), value)
    }

    pub fn get(&self, name: &str) -> Option<&Array> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array> {
        self.entries.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Array> {
        self.get(name)
            .ok_or_else(|| GradError::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Array)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Total scalar count across all entries.
    pub fn numel(&self) -> usize {
        self.entries.values().map(Array::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().all(Array::is_finite)
    }

    /// Record every entry as a tape leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let vars = self
            .entries
            .iter()
            .map(|(k, v)| (k.clone(), tape.leaf(v.clone())))
            .collect();
        BoundParams { vars }
    }

    /// Entries whose names start with `prefix`, keeping order.
    pub fn with_prefix(&self, prefix: &str) -> ParamStore {
        ParamStore {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Elementwise `self += other` for matching names; shapes must agree.
    pub fn add_assign(&mut self, other: &ParamStore) -> Result<()> {
        for (name, value) in &other.entries {
            let dst = self
                .entries
                .get_mut(name)
                .ok_or_else(|| GradError::UnknownParam(name.clone()))?;
            if dst.shape() != value.shape() {
                return Err(GradError::ShapeMismatch {
                    op: "param add",
                    left: dst.shape().to_vec(),
                    right: value.shape().to_vec(),
                });
            }
            for (a, b) in dst.data_mut().iter_mut().zip(value.data()) {
                *a += b;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.entries.values_mut() {
            for x in v.data_mut() {
                *x *= factor;
            }
        }
    }
}

impl FromIterator<(String, Array)> for ParamStore {
    fn from_iter<I: IntoIterator<Item = (String, Array)>>(iter: I) -> Self {
        Self {
            entries: iter.into_iter().collect(),
        }
    }
}

/// Tape handles for a bound [`ParamStore`].
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: IndexMap<String, Var>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| GradError::UnknownParam(name.to_string()))
    }

    /// Gradients of every bound parameter; unreachable ones come back as zeros.
    pub fn gradients(&self, grads: &Gradients, tape: &Tape) -> ParamStore {
        self.vars
            .iter()
            .map(|(k, &v)| (k.clone(), grads.wrt(v, tape)))
            .collect()
    }
}
