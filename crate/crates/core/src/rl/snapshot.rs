//! Binary Q-table snapshots.
//!
//! Layout, all little-endian:
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 4    | magic `AQTB`                  |
//! | 4      | 2    | format version (1)            |
//! | 6      | 2    | state count (90)              |
//! | 8      | 2    | action count (3)              |
//! | 10     | 2    | reserved, zero                |
//! | 12     | 2160 | 270 x f64 values, row-major   |
//! | 2172   | 2160 | 270 x u64 visit counts        |

use super::{QTable, RlAction, RlState};

pub const SNAPSHOT_MAGIC: [u8; 4] = *b"AQTB";
pub const SNAPSHOT_VERSION: u16 = 1;

const HEADER_LEN: usize = 12;
const CELLS: usize = RlState::COUNT * RlAction::COUNT;
const SNAPSHOT_LEN: usize = HEADER_LEN + CELLS * 16;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SnapshotError {
    #[error("snapshot is {actual} bytes, expected {expected}")]
    Length { expected: usize, actual: usize },
    #[error("bad magic bytes")]
    Magic,
    #[error("unsupported snapshot version {0}")]
    Version(u16),
    #[error("snapshot shape {states}x{actions}, expected 90x3")]
    Shape { states: u16, actions: u16 },
    #[error("non-finite value at cell {0}")]
    NonFinite(usize),
}

pub fn save_qtable(q: &QTable) -> Vec<u8> {
    let mut out = Vec::with_capacity(SNAPSHOT_LEN);
    out.extend_from_slice(&SNAPSHOT_MAGIC);
    out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    out.extend_from_slice(&(RlState::COUNT as u16).to_le_bytes());
    out.extend_from_slice(&(RlAction::COUNT as u16).to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    for v in q.values.iter().flatten() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for n in q.visits.iter().flatten() {
        out.extend_from_slice(&n.to_le_bytes());
    }
    out
}

fn u16_at(bytes: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([bytes[at], bytes[at + 1]])
}

fn u64_at(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8-byte slice"))
}

pub fn load_qtable(bytes: &[u8]) -> Result<QTable, SnapshotError> {
    if bytes.len() >= 4 && bytes[..4] != SNAPSHOT_MAGIC {
        return Err(SnapshotError::Magic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(SnapshotError::Length {
            expected: SNAPSHOT_LEN,
            actual: bytes.len(),
        });
    }
    let version = u16_at(bytes, 4);
    if version != SNAPSHOT_VERSION {
        return Err(SnapshotError::Version(version));
    }
    let (states, actions) = (u16_at(bytes, 6), u16_at(bytes, 8));
    if states as usize != RlState::COUNT || actions as usize != RlAction::COUNT {
        return Err(SnapshotError::Shape { states, actions });
    }
    if bytes.len() != SNAPSHOT_LEN {
        return Err(SnapshotError::Length {
            expected: SNAPSHOT_LEN,
            actual: bytes.len(),
        });
    }

    let mut q = QTable::new();
    for cell in 0..CELLS {
        let v = f64::from_bits(u64_at(bytes, HEADER_LEN + cell * 8));
        if !v.is_finite() {
            return Err(SnapshotError::NonFinite(cell));
        }
        q.values[cell / 3][cell % 3] = v;
        q.visits[cell / 3][cell % 3] = u64_at(bytes, HEADER_LEN + CELLS * 8 + cell * 8);
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn random_table(seed: u64) -> QTable {
        let mut rng = SplitMix64::new(seed);
        let mut q = QTable::new();
        for row in q.values.iter_mut() {
            for v in row.iter_mut() {
                *v = rng.uniform(-10.0, 10.0);
            }
        }
        for row in q.visits.iter_mut() {
            for n in row.iter_mut() {
                *n = rng.below(1_000);
            }
        }
        q
    }

    proptest! {
        #[test]
        fn roundtrip(seed in any::<u64>()) {
            let q = random_table(seed);
            prop_assert_eq!(load_qtable(&save_qtable(&q)).unwrap(), q);
        }
    }

    #[test]
    fn size_and_header() {
        let bytes = save_qtable(&QTable::new());
        assert_eq!(bytes.len(), 4332);
        assert_eq!(&bytes[..4], b"AQTB");
    }

    #[test]
    fn malformed_inputs_are_errors() {
        assert!(matches!(
            load_qtable(&[]),
            Err(SnapshotError::Length { .. })
        ));
        let bytes = save_qtable(&random_table(1));
        assert!(matches!(
            load_qtable(&bytes[..bytes.len() - 5]),
            Err(SnapshotError::Length { .. })
        ));

        let mut wrong_version = bytes.clone();
        wrong_version[4] = 9;
        assert_eq!(load_qtable(&wrong_version), Err(SnapshotError::Version(9)));

        let mut wrong_shape = bytes.clone();
        wrong_shape[6] = 91;
        assert!(matches!(
            load_qtable(&wrong_shape),
            Err(SnapshotError::Shape { .. })
        ));

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert_eq!(load_qtable(&bad_magic), Err(SnapshotError::Magic));

        let mut nan = bytes;
        nan[12..20].copy_from_slice(&f64::NAN.to_le_bytes());
        assert_eq!(load_qtable(&nan), Err(SnapshotError::NonFinite(0)));
    }
}
