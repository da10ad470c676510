//! Canonical state digest and fixed-point score encoding.
//!
//! Layout, all integers big-endian:
//! `0x01 | u32 len(query) | query utf-8 | u64 query_log_id |
//!  { u32 source_id | i64 R | i64 U | u64 timestamp }*`
//! with records in strictly ascending source_id order.

use sha2::{Digest, Sha256};

use super::ScoreRecord;
use crate::{Error, Result};

pub const DIGEST_VERSION: u8 = 0x01;

/// Fixed-point scale for on-ledger scores.
pub const SCALE: i64 = 1_000_000;

/// Rounds to the nearest 1e-6; rejects non-finite and out-of-range values.
pub fn to_fixed(x: f64) -> Result<i64> {
    let scaled = (x * SCALE as f64).round();
    // i64::MAX as f64 rounds up to 2^63, so compare against a strict bound.
    if !scaled.is_finite() || scaled.abs() >= 9.223_372_036_854_775e18 {
        return Err(Error::validation(format!("score {x} is not representable")));
    }
    Ok(scaled as i64)
}

pub fn from_fixed(v: i64) -> f64 {
    v as f64 / SCALE as f64
}

pub fn encode_state(query: &str, query_log_id: u64, records: &[ScoreRecord]) -> Result<Vec<u8>> {
    for w in records.windows(2) {
        if w[0].source_id >= w[1].source_id {
            return Err(Error::validation(format!(
                "digest records must be in strictly ascending source order ({} then {})",
                w[0].source_id, w[1].source_id
            )));
        }
    }
    let qlen = u32::try_from(query.len()).map_err(|_| Error::validation("query longer than 4 GiB"))?;
    let mut out = Vec::with_capacity(13 + query.len() + records.len() * 28);
    out.push(DIGEST_VERSION);
    out.extend_from_slice(&qlen.to_be_bytes());
    out.extend_from_slice(query.as_bytes());
    out.extend_from_slice(&query_log_id.to_be_bytes());
    for r in records {
        out.extend_from_slice(&r.source_id.0.to_be_bytes());
        out.extend_from_slice(&r.reliability.to_be_bytes());
        out.extend_from_slice(&r.usefulness.to_be_bytes());
        out.extend_from_slice(&r.timestamp.to_be_bytes());
    }
    Ok(out)
}

pub fn state_digest(query: &str, query_log_id: u64, records: &[ScoreRecord]) -> Result<[u8; 32]> {
    Ok(Sha256::digest(encode_state(query, query_log_id, records)?).into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SourceId;
    use crate::ledger::crypto::PublicKey;

    fn rec(id: u32, r: i64) -> ScoreRecord {
        ScoreRecord {
            source_id: SourceId(id),
            source_address: PublicKey([2u8; 33]),
            reliability: r,
            usefulness: 5,
            timestamp: 1,
        }
    }

    #[test]
    fn fixed_point_rounding() {
        assert_eq!(to_fixed(10.0).unwrap(), 10_000_000);
        assert_eq!(to_fixed(-0.0000005).unwrap(), -1);
        assert_eq!(to_fixed(0.1234564).unwrap(), 123_456);
        assert!(to_fixed(f64::NAN).is_err());
        assert!(to_fixed(1e12).is_ok());
        assert!(to_fixed(1e13).is_err());
        assert_eq!(from_fixed(2_500_000), 2.5);
    }

    #[test]
    fn digest_sensitivity_and_order_check() {
        let a = state_digest("q", 3, &[rec(0, 10), rec(1, 10)]).unwrap();
        assert_eq!(a, state_digest("q", 3, &[rec(0, 10), rec(1, 10)]).unwrap());
        assert_ne!(a, state_digest("q", 3, &[rec(0, 11), rec(1, 10)]).unwrap());
        assert_ne!(a, state_digest("q", 4, &[rec(0, 10), rec(1, 10)]).unwrap());
        assert!(state_digest("q", 3, &[rec(1, 10), rec(0, 10)]).is_err());
        assert!(state_digest("q", 3, &[rec(1, 10), rec(1, 10)]).is_err());
    }

    #[test]
    fn encoding_layout() {
        let bytes = encode_state("ab", 7, &[rec(2, -1)]).unwrap();
        let mut expected = vec![1, 0, 0, 0, 2, b'a', b'b', 0, 0, 0, 0, 0, 0, 0, 7, 0, 0, 0, 2];
        expected.extend_from_slice(&[0xff; 8]);
        expected.extend_from_slice(&[0, 0, 0, 0, 0, 0, 0, 5]);
        expected.extend_from_slice(&[0, 0, 0, 0, 0, 0, 0, 1]);
        assert_eq!(bytes, expected);
    }
}
