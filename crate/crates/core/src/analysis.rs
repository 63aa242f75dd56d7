//! Post-hoc model arithmetic: unique binary filter counting (optionally
//! folding a filter and its negation together), memory-footprint comparison
//! between float and bit-packed weights, and energy estimates from
//! published per-operation cost tables.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// 4-D bank of k x k binary filters, `out_maps x in_maps` slices with
/// values in {-1, +1}.
#[derive(Debug, Clone)]
pub struct FilterBank {
    pub out_maps: usize,
    pub in_maps: usize,
    pub k: usize,
    /// filter values, filter-major: slice f occupies `[f*k*k, (f+1)*k*k)`
    pub values: Vec<i8>,
}

impl FilterBank {
    pub fn new(out_maps: usize, in_maps: usize, k: usize, values: Vec<i8>) -> Result<Self> {
        if k == 0 || out_maps == 0 || in_maps == 0 {
            return Err(Error::InvalidDims {
                rows: out_maps * in_maps,
                cols: k * k,
            });
        }
        if values.len() != out_maps * in_maps * k * k {
            return Err(Error::InvalidDims {
                rows: out_maps * in_maps,
                cols: k * k,
            });
        }
        if let Some(pos) = values.iter().position(|&v| v != 1 && v != -1) {
            return Err(Error::NonBinaryValue {
                index: pos,
                value: values[pos] as f64,
            });
        }
        Ok(FilterBank {
            out_maps,
            in_maps,
            k,
            values,
        })
    }

    pub fn num_filters(&self) -> usize {
        self.out_maps * self.in_maps
    }

    pub fn filter(&self, f: usize) -> &[i8] {
        let kk = self.k * self.k;
        &self.values[f * kk..(f + 1) * kk]
    }
}

/// Bit-encode a filter as a u128 key (k*k <= 128), bit set for +1.
fn filter_key(filter: &[i8]) -> u128 {
    let mut key = 0u128;
    for (i, &v) in filter.iter().enumerate() {
        if v > 0 {
            key |= 1u128 << i;
        }
    }
    key
}

/// Count distinct k x k patterns across all 2-D slices of the bank. With
/// `treat_inverse_as_duplicate`, a filter and its elementwise negation are
/// counted once (canonical key = min of the pattern and its complement).
/// Returns the distinct count and its fraction of the bank size.
pub fn count_unique_filters(bank: &FilterBank, treat_inverse_as_duplicate: bool) -> (usize, f64) {
    let kk = bank.k * bank.k;
    assert!(kk <= 128, "filters larger than 11x11 are out of scope");
    let mask = if kk == 128 {
        u128::MAX
    } else {
        (1u128 << kk) - 1
    };
    let mut seen = HashSet::new();
    for f in 0..bank.num_filters() {
        let key = filter_key(bank.filter(f));
        let canon = if treat_inverse_as_duplicate {
            key.min(!key & mask)
        } else {
            key
        };
        seen.insert(canon);
    }
    let unique = seen.len();
    (unique, unique as f64 / bank.num_filters() as f64)
}

/// Memory footprint of one or more `in x out` weight matrices: float32
/// storage versus 1-bit rows packed into 64-bit words.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryReport {
    pub float_bytes: u64,
    pub packed_bytes: u64,
    pub ratio: f64,
}

impl MemoryReport {
    pub fn to_text(&self) -> String {
        format!(
            "float32: {} B\npacked 1-bit: {} B\nratio: {:.2}x",
            self.float_bytes, self.packed_bytes, self.ratio
        )
    }
}

pub fn memory_report(layer_dims: &[(usize, usize)]) -> MemoryReport {
    let mut float_bytes = 0u64;
    let mut packed_bytes = 0u64;
    for &(rows, cols) in layer_dims {
        float_bytes += rows as u64 * cols as u64 * 4;
        packed_bytes += rows as u64 * (cols as u64).div_ceil(64) * 8;
    }
    MemoryReport {
        float_bytes,
        packed_bytes,
        ratio: float_bytes as f64 / packed_bytes as f64,
    }
}

/// Per-operation energies in picojoules.
#[derive(Debug, Clone, Copy)]
pub struct EnergyTable {
    pub int8_mul: f64,
    pub int8_add: f64,
    pub int32_mul: f64,
    pub int32_add: f64,
    pub fp16_mul: f64,
    pub fp16_add: f64,
    pub fp32_mul: f64,
    pub fp32_add: f64,
    /// cache/memory fetch energies by tier (pJ per 64-bit access)
    pub mem_8k: f64,
    pub mem_32k: f64,
    pub mem_1m: f64,
    /// DRAM access range in pJ; the midpoint is used
    pub dram_lo: f64,
    pub dram_hi: f64,
}

impl Default for EnergyTable {
    fn default() -> Self {
        EnergyTable {
            int8_mul: 0.2,
            int8_add: 0.03,
            int32_mul: 3.1,
            int32_add: 0.1,
            fp16_mul: 1.1,
            fp16_add: 0.4,
            fp32_mul: 3.7,
            fp32_add: 0.9,
            mem_8k: 10.0,
            mem_32k: 20.0,
            mem_1m: 100.0,
            dram_lo: 1300.0,
            dram_hi: 2600.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemoryTier {
    Cache8K,
    Cache32K,
    Cache1M,
    Dram,
}

impl MemoryTier {
    fn fetch_pj(self, t: &EnergyTable) -> f64 {
        match self {
            MemoryTier::Cache8K => t.mem_8k,
            MemoryTier::Cache32K => t.mem_32k,
            MemoryTier::Cache1M => t.mem_1m,
            MemoryTier::Dram => 0.5 * (t.dram_lo + t.dram_hi),
        }
    }
}

/// Energy estimate for one forward pass of a stack of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyReport {
    pub macs: u64,
    /// float32 MUL+ADD per MAC
    pub float_pj: f64,
    /// packed XNOR-popcount path; per-MAC charge documented in `assumption`
    pub packed_pj: f64,
    /// weight-fetch energy at the chosen tier, 64 bits per access
    pub fetch_float_pj: f64,
    pub fetch_packed_pj: f64,
    pub assumption: &'static str,
}

pub const PACKED_MAC_ASSUMPTION: &str =
    "packed path charged as one 32-bit integer ADD per 64 connections (0.1/64 pJ per MAC); \
     no published per-XNOR energy figure exists";

pub fn energy_estimate(
    layer_dims: &[(usize, usize)],
    table: &EnergyTable,
    tier: MemoryTier,
) -> EnergyReport {
    let macs: u64 = layer_dims
        .iter()
        .map(|&(r, c)| r as u64 * c as u64)
        .sum();
    let report = memory_report(layer_dims);
    let fetch = tier.fetch_pj(table);
    EnergyReport {
        macs,
        float_pj: macs as f64 * (table.fp32_mul + table.fp32_add),
        packed_pj: macs as f64 * table.int32_add / 64.0,
        fetch_float_pj: report.float_bytes as f64 / 8.0 * fetch,
        fetch_packed_pj: report.packed_bytes as f64 / 8.0 * fetch,
        assumption: PACKED_MAC_ASSUMPTION,
    }
}

/// Snapshot the sign pattern of dense weight rows as k x k filters when the
/// row length is a square; used by the CLI `inspect` command.
pub fn bank_from_signs<T: Real>(
    out_maps: usize,
    in_maps: usize,
    k: usize,
    signs: &[T],
) -> Result<FilterBank> {
    let values: Vec<i8> = signs
        .iter()
        .map(|&v| if v >= T::zero() { 1 } else { -1 })
        .collect();
    FilterBank::new(out_maps, in_maps, k, values)
}
