//! Affine gas model for feedback transactions.

use serde::{Deserialize, Serialize};

/// Measured total gas of a feedback transaction by batch size.
pub const REFERENCE_GAS: [(u64, u64); 6] = [
    (1, 71_277),
    (2, 96_352),
    (5, 211_492),
    (10, 376_899),
    (15, 502_565),
    (20, 628_048),
];

/// `gas(n, b) = base + n * per_update + b * per_byte`.
///
/// The defaults put the line through the single-update and 20-update
/// reference points, so single updates cost exactly 71,277.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GasSchedule {
    pub base: u64,
    pub per_update: u64,
    pub per_byte: u64,
}

impl Default for GasSchedule {
    fn default() -> Self {
        GasSchedule {
            base: 41_973,
            per_update: 29_304,
            per_byte: 16,
        }
    }
}

impl GasSchedule {
    pub fn gas(&self, updates: u64, payload_bytes: u64) -> u64 {
        self.base
            .saturating_add(updates.saturating_mul(self.per_update))
            .saturating_add(payload_bytes.saturating_mul(self.per_byte))
    }

    /// Gas per update with no payload, rounded down.
    pub fn per_update_gas(&self, updates: u64) -> u64 {
        if updates == 0 {
            return self.base;
        }
        self.gas(updates, 0) / updates
    }

    /// Largest relative error against [`REFERENCE_GAS`].
    pub fn max_reference_error(&self) -> f64 {
        REFERENCE_GAS
            .iter()
            .map(|&(n, g)| (self.gas(n, 0) as f64 - g as f64).abs() / g as f64)
            .fold(0.0, f64::max)
    }
}
