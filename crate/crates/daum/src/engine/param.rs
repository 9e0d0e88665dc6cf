//! Flattened parameter vectors with a named layout descriptor.
//!
//! Every model in the crate stores its weights as one flat `Vec<f64>` plus a
//! layout describing how the vector partitions into named tensors. SWAG,
//! checkpointing and the optimizer all operate on this representation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One named tensor inside a flattened parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

impl LayoutEntry {
    pub fn new(name: impl Into<String>, shape: Vec<usize>) -> Self {
        Self { name: name.into(), shape }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered list of named tensors; the order defines the flattening.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Layout {
    pub entries: Vec<LayoutEntry>,
}

impl Layout {
    pub fn new(entries: Vec<LayoutEntry>) -> Self {
        Self { entries }
    }

    /// Total number of scalars across all entries.
    pub fn len(&self) -> usize {
        self.entries.iter().map(LayoutEntry::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat offset of the named entry, with its length.
    pub fn span(&self, name: &str) -> Option<(usize, usize)> {
        let mut offset = 0;
        for e in &self.entries {
            if e.name == name {
                return Some((offset, e.len()));
            }
            offset += e.len();
        }
        None
    }

    /// Name of the entry covering the given flat index.
    pub fn name_at(&self, index: usize) -> Option<&str> {
        let mut offset = 0;
        for e in &self.entries {
            offset += e.len();
            if index < offset {
                return Some(&e.name);
            }
        }
        None
    }

    /// (offset, length) spans of entries whose name satisfies the predicate.
    pub fn spans_where<'a>(
        &'a self,
        mut pred: impl FnMut(&str) -> bool + 'a,
    ) -> impl Iterator<Item = (usize, usize)> + 'a {
        let mut offset = 0;
        self.entries.iter().filter_map(move |e| {
            let start = offset;
            offset += e.len();
            pred(&e.name).then_some((start, e.len()))
        })
    }
}

/// A flat 64-bit parameter vector tied to a [`Layout`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout: Layout,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Layout) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::shape(format!(
                "param vector has {} values but layout describes {}",
                values.len(),
                layout.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::shape(format!("non-finite parameter value {v}")));
        }
        Ok(Self { values, layout })
    }

    pub fn zeros(layout: Layout) -> Self {
        let n = layout.len();
        Self { values: vec![0.0; n], layout }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn check_same_layout(&self, other: &ParamVector) -> Result<()> {
        if self.layout != other.layout {
            return Err(Error::shape("parameter layouts differ".to_string()));
        }
        Ok(())
    }

    /// One SGD step: `w - eta * g`, element-wise.
    pub fn sgd_step(&self, grad: &ParamVector, eta: f64) -> Result<ParamVector> {
        self.check_same_layout(grad)?;
        let values = self
            .values
            .iter()
            .zip(&grad.values)
            .map(|(w, g)| w - eta * g)
            .collect();
        Ok(ParamVector { values, layout: self.layout.clone() })
    }

    /// In-place SGD step; used by the training loops.
    pub fn sgd_step_inplace(&mut self, grad: &ParamVector, eta: f64) -> Result<()> {
        self.check_same_layout(grad)?;
        for (w, g) in self.values.iter_mut().zip(&grad.values) {
            *w -= eta * g;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout2() -> Layout {
        Layout::new(vec![LayoutEntry::new("w", vec![2])])
    }

    #[test]
    fn new_rejects_length_mismatch() {
        assert!(ParamVector::new(vec![1.0], layout2()).is_err());
    }

    #[test]
    fn new_rejects_non_finite() {
        assert!(ParamVector::new(vec![1.0, f64::NAN], layout2()).is_err());
    }

    #[test]
    fn sgd_step_hand_arithmetic() {
        // w=[1,2], g=[1,-1], eta=0.5 -> [0.5, 2.5]
        let w = ParamVector::new(vec![1.0, 2.0], layout2()).unwrap();
        let g = ParamVector::new(vec![1.0, -1.0], layout2()).unwrap();
        let out = w.sgd_step(&g, 0.5).unwrap();
        assert_eq!(out.values, vec![0.5, 2.5]);
    }

    #[test]
    fn sgd_step_zero_eta_and_zero_grad() {
        let w = ParamVector::new(vec![1.0, 2.0], layout2()).unwrap();
        let g = ParamVector::new(vec![1.0, -1.0], layout2()).unwrap();
        assert_eq!(w.sgd_step(&g, 0.0).unwrap().values, w.values);
        let zero = ParamVector::zeros(layout2());
        assert_eq!(w.sgd_step(&zero, 0.7).unwrap().values, w.values);
    }

    #[test]
    fn sgd_step_rejects_layout_mismatch() {
        let w = ParamVector::new(vec![1.0, 2.0], layout2()).unwrap();
        let other = Layout::new(vec![LayoutEntry::new("b", vec![2])]);
        let g = ParamVector::new(vec![1.0, -1.0], other).unwrap();
        assert!(w.sgd_step(&g, 0.5).is_err());
    }

    #[test]
    fn spans() {
        let layout = Layout::new(vec![
            LayoutEntry::new("a.w", vec![2, 3]),
            LayoutEntry::new("b.w", vec![4]),
        ]);
        assert_eq!(layout.len(), 10);
        assert_eq!(layout.span("b.w"), Some((6, 4)));
        let spans: Vec<_> = layout.spans_where(|n| n.starts_with("a.")).collect();
        assert_eq!(spans, vec![(0, 6)]);
    }
}
