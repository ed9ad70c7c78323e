//! Shared count containers indexed by operator, region and destination.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vehicles per operator and region at the start of a slot.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VehicleDistribution {
    /// `counts[m][i]`
    pub counts: Vec<Vec<u64>>,
    pub slot: usize,
}

impl VehicleDistribution {
    pub fn zeros(operators: usize, regions: usize, slot: usize) -> Self {
        Self {
            counts: vec![vec![0; regions]; operators],
            slot,
        }
    }

    pub fn operators(&self) -> usize {
        self.counts.len()
    }

    pub fn regions(&self) -> usize {
        self.counts.first().map_or(0, Vec::len)
    }

    pub fn operator_total(&self, m: usize) -> u64 {
        self.counts[m].iter().sum()
    }

    /// Per-region totals over all operators.
    pub fn region_totals(&self) -> Vec<u64> {
        let mut out = vec![0; self.regions()];
        for row in &self.counts {
            for (o, c) in out.iter_mut().zip(row) {
                *o += c;
            }
        }
        out
    }
}

/// Trip requests per operator and origin-destination pair within one slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemandTensor {
    operators: usize,
    regions: usize,
    counts: Vec<u32>,
    pub slot: usize,
}

impl DemandTensor {
    pub fn zeros(operators: usize, regions: usize, slot: usize) -> Self {
        Self {
            operators,
            regions,
            counts: vec![0; operators * regions * regions],
            slot,
        }
    }

    pub fn from_nested(counts: &[Vec<Vec<u32>>], slot: usize) -> Result<Self> {
        let operators = counts.len();
        let regions = counts.first().map_or(0, Vec::len);
        let mut t = Self::zeros(operators, regions, slot);
        for (m, mat) in counts.iter().enumerate() {
            if mat.len() != regions || mat.iter().any(|row| row.len() != regions) {
                return Err(Error::Dimension(format!(
                    "operator {m} demand matrix is not {regions}x{regions}"
                )));
            }
            for (i, row) in mat.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    t.set(m, i, j, v);
                }
            }
        }
        Ok(t)
    }

    pub fn operators(&self) -> usize {
        self.operators
    }

    pub fn regions(&self) -> usize {
        self.regions
    }

    #[inline]
    fn idx(&self, m: usize, i: usize, j: usize) -> usize {
        (m * self.regions + i) * self.regions + j
    }

    #[inline]
    pub fn get(&self, m: usize, i: usize, j: usize) -> u32 {
        self.counts[self.idx(m, i, j)]
    }

    #[inline]
    pub fn set(&mut self, m: usize, i: usize, j: usize, v: u32) {
        let k = self.idx(m, i, j);
        self.counts[k] = v;
    }

    #[inline]
    pub fn add(&mut self, m: usize, i: usize, j: usize, v: u32) {
        let k = self.idx(m, i, j);
        self.counts[k] += v;
    }

    /// Row of destinations for `(m, i)`.
    pub fn row(&self, m: usize, i: usize) -> &[u32] {
        let start = self.idx(m, i, 0);
        &self.counts[start..start + self.regions]
    }

    pub fn origin_total(&self, m: usize, i: usize) -> u64 {
        self.row(m, i).iter().map(|&v| v as u64).sum()
    }

    /// Origin totals `[i]` for operator `m`.
    pub fn origin_totals(&self, m: usize) -> Vec<u64> {
        (0..self.regions).map(|i| self.origin_total(m, i)).collect()
    }

    pub fn operator_total(&self, m: usize) -> u64 {
        self.origin_totals(m).iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&v| v as u64).sum()
    }
}

/// Trips served per operator and origin region.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SatisfiedDemand {
    /// `counts[m][i]`
    pub counts: Vec<Vec<u64>>,
}

impl SatisfiedDemand {
    pub fn region_totals(&self) -> Vec<u64> {
        let regions = self.counts.first().map_or(0, Vec::len);
        let mut out = vec![0; regions];
        for row in &self.counts {
            for (o, c) in out.iter_mut().zip(row) {
                *o += c;
            }
        }
        out
    }
}
