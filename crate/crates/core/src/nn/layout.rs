//! Flat parameter storage with a named per-layer grouping.

use std::collections::HashSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKind {
    Weight,
    Bias,
}

/// One contiguous block of the flat vector, e.g. the weight matrix of layer 2.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub name: String,
    pub kind: GroupKind,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl ParamGroup {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ParamGroup>", into = "Vec<ParamGroup>")]
pub struct LayerLayout {
    groups: Vec<ParamGroup>,
    total: usize,
}

impl LayerLayout {
    /// Builds a layout and checks offsets are contiguous and names unique.
    pub fn new(groups: Vec<ParamGroup>) -> Result<Self> {
        let mut names = HashSet::new();
        let mut next = 0;
        for g in &groups {
            if !names.insert(g.name.as_str()) {
                return Err(Error::structural(format!("duplicate group name `{}`", g.name)));
            }
            if g.offset != next {
                return Err(Error::structural(format!(
                    "group `{}` starts at {} but previous groups end at {}",
                    g.name, g.offset, next
                )));
            }
            if g.kind == GroupKind::Bias && g.cols != 1 {
                return Err(Error::structural(format!(
                    "bias group `{}` must have one column",
                    g.name
                )));
            }
            next += g.len();
        }
        Ok(Self { groups, total: next })
    }

    /// Convenience builder that assigns offsets in order.
    pub fn from_shapes<'a>(shapes: impl IntoIterator<Item = (&'a str, GroupKind, usize, usize)>) -> Result<Self> {
        let mut offset = 0;
        let mut groups = Vec::new();
        for (name, kind, rows, cols) in shapes {
            groups.push(ParamGroup {
                name: name.to_owned(),
                kind,
                rows,
                cols,
                offset,
            });
            offset += rows * cols;
        }
        Self::new(groups)
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn group(&self, name: &str) -> Option<&ParamGroup> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn total_len(&self) -> usize {
        self.total
    }
}

impl TryFrom<Vec<ParamGroup>> for LayerLayout {
    type Error = Error;

    fn try_from(groups: Vec<ParamGroup>) -> Result<Self> {
        LayerLayout::new(groups)
    }
}

impl From<LayerLayout> for Vec<ParamGroup> {
    fn from(layout: LayerLayout) -> Self {
        layout.groups
    }
}

/// Flat parameter vector together with the layout that names its blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Arc<LayerLayout>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Arc<LayerLayout>) -> Result<Self> {
        if values.len() != layout.total_len() {
            return Err(Error::structural(format!(
                "parameter vector has {} entries, layout expects {}",
                values.len(),
                layout.total_len()
            )));
        }
        Ok(Self { values, layout })
    }

    pub fn zeros(layout: Arc<LayerLayout>) -> Self {
        Self {
            values: vec![0.0; layout.total_len()],
            layout,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &Arc<LayerLayout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn group_values(&self, name: &str) -> Option<&[f64]> {
        self.layout.group(name).map(|g| &self.values[g.range()])
    }

    /// First non-finite entry, reported with its group name.
    pub fn check_finite(&self, location: &str) -> Result<()> {
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            let group = self
                .layout
                .groups()
                .iter()
                .find(|g| g.range().contains(&i))
                .map(|g| g.name.as_str())
                .unwrap_or("?");
            return Err(Error::numerical(
                location,
                format!("non-finite parameter at index {i} (group `{group}`)"),
            ));
        }
        Ok(())
    }

    /// In-place `self -= step`.
    pub fn sub_assign(&mut self, step: &GradVector) -> Result<()> {
        check_aligned(self.len(), step.len())?;
        for (p, s) in self.values.iter_mut().zip(step.values()) {
            *p -= s;
        }
        Ok(())
    }

    /// Returns `self - step`.
    pub fn sub(&self, step: &GradVector) -> Result<ParamVector> {
        let mut out = self.clone();
        out.sub_assign(step)?;
        Ok(out)
    }
}

/// Gradient (or any other per-coordinate direction) aligned to a layout.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GradVector {
    values: Vec<f64>,
}

impl GradVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn add_assign(&mut self, other: &GradVector) -> Result<()> {
        check_aligned(self.len(), other.len())?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.values {
            *v *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &GradVector) -> Result<GradVector> {
        check_aligned(self.len(), other.len())?;
        Ok(GradVector::new(
            self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect(),
        ))
    }

    /// Mean of a non-empty list of aligned vectors: ordered sum, then division by the count.
    pub fn mean(items: &[GradVector]) -> Result<GradVector> {
        let first = items
            .first()
            .ok_or_else(|| Error::structural("mean of an empty gradient list"))?;
        let mut acc = first.clone();
        for g in &items[1..] {
            acc.add_assign(g)?;
        }
        let n = items.len() as f64;
        for v in &mut acc.values {
            *v /= n;
        }
        Ok(acc)
    }
}

pub(crate) fn check_aligned(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::structural(format!("length mismatch: {a} vs {b}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contiguous_offsets_required() {
        let bad = vec![
            ParamGroup { name: "w1".into(), kind: GroupKind::Weight, rows: 2, cols: 3, offset: 0 },
            ParamGroup { name: "b1".into(), kind: GroupKind::Bias, rows: 2, cols: 1, offset: 5 },
        ];
        assert!(matches!(LayerLayout::new(bad), Err(Error::Structural(_))));
    }

    #[test]
    fn duplicate_names_rejected() {
        let err = LayerLayout::from_shapes([
            ("w", GroupKind::Weight, 2, 2),
            ("w", GroupKind::Weight, 2, 2),
        ]);
        assert!(err.is_err());
    }

    #[test]
    fn total_length_is_sum_of_blocks() {
        let layout = LayerLayout::from_shapes([
            ("w1", GroupKind::Weight, 4, 3),
            ("b1", GroupKind::Bias, 4, 1),
            ("w2", GroupKind::Weight, 2, 4),
        ])
        .unwrap();
        assert_eq!(layout.total_len(), 12 + 4 + 8);
        assert_eq!(layout.group("w2").unwrap().offset, 16);
    }

    #[test]
    fn param_vector_length_checked() {
        let layout = Arc::new(LayerLayout::from_shapes([("w", GroupKind::Weight, 2, 2)]).unwrap());
        assert!(ParamVector::new(vec![0.0; 3], layout.clone()).is_err());
        assert!(ParamVector::new(vec![0.0; 4], layout).is_ok());
    }

    #[test]
    fn layout_serde_validates() {
        let json = r#"[{"name":"w","kind":"weight","rows":2,"cols":2,"offset":1}]"#;
        assert!(serde_json::from_str::<LayerLayout>(json).is_err());
    }
}
