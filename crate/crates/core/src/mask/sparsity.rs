use serde::{Deserialize, Serialize};

use super::MaskParams;
use crate::error::Result;
use crate::nn::{check_len, LayerLayout};

/// `exp(m)` below this counts as an effectively frozen coordinate.
pub const EXP_FREEZE_THRESHOLD: f64 = 1e-8;

/// Fraction of frozen coordinates per parameter group and overall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    /// `(group name, frozen fraction)` in layout order.
    pub per_group: Vec<(String, f64)>,
    pub overall: f64,
    pub frozen: usize,
    pub total: usize,
}

impl SparsityReport {
    pub fn group(&self, name: &str) -> Option<f64> {
        self.per_group.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

pub fn sparsity_report(mask: &MaskParams, layout: &LayerLayout) -> Result<SparsityReport> {
    check_len(mask.len(), layout.total_len())?;
    let mut per_group = Vec::with_capacity(layout.groups().len());
    let mut frozen_total = 0usize;
    for g in layout.groups() {
        let frozen = g.range().filter(|&i| mask.is_frozen(i)).count();
        frozen_total += frozen;
        let frac = if g.is_empty() { 0.0 } else { frozen as f64 / g.len() as f64 };
        per_group.push((g.name.clone(), frac));
    }
    let total = layout.total_len();
    let overall = if total == 0 { 0.0 } else { frozen_total as f64 / total as f64 };
    Ok(SparsityReport {
        per_group,
        overall,
        frozen: frozen_total,
        total,
    })
}
