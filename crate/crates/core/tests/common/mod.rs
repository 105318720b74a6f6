//! Shared test fixtures: the reference block tables used by the replay and
//! acceptance tests, and helpers to build snapshot rows from compact specs.
#![allow(dead_code)]

use headfit::arena::HEADER_SIZE;
use headfit::inspector::SnapshotRow;

pub const MIB16: usize = 16 * 1024 * 1024;

/// Builds snapshot rows from `(offset, free, size)` triples, deriving the
/// address columns from `base`.
pub fn rows(base: u64, blocks: &[(usize, bool, usize)]) -> Vec<SnapshotRow> {
    let mut out = Vec::with_capacity(blocks.len());
    let mut left_addr = 0u64;
    for &(offset, free, size) in blocks {
        let address = base + (offset + HEADER_SIZE) as u64;
        out.push(SnapshotRow { offset, address, left_addr, free, size });
        left_addr = address;
    }
    out
}

/// Memory state upon initialization (two-block 16 MiB layout).
pub fn init_state(base: u64) -> Vec<SnapshotRow> {
    rows(base, &[(0, true, 8_388_584), (8_388_600, true, 8_388_600)])
}

/// Head-first layout before the 32-byte allocation.
pub fn head_first_layout(base: u64) -> Vec<SnapshotRow> {
    rows(
        base,
        &[
            (0, false, 8),
            (24, true, 16_776_976),
            (16_777_016, false, 16),
            (16_777_048, true, 128),
            (16_777_192, false, 8),
        ],
    )
}

/// Non-head-first layout before the 32-byte allocation.
pub fn non_head_first_layout(base: u64) -> Vec<SnapshotRow> {
    rows(
        base,
        &[
            (0, false, 8),
            (24, false, 8),
            (48, true, 128),
            (192, false, 16),
            (224, true, 8_388_360),
            (8_388_600, true, 8_388_600),
        ],
    )
}

/// State after allocating 32 bytes without head-first.
pub fn alloc32_non_head_first(base: u64) -> Vec<SnapshotRow> {
    rows(
        base,
        &[
            (0, false, 8),
            (24, false, 8),
            (48, false, 32),
            (96, true, 80),
            (192, false, 16),
            (224, true, 8_388_360),
            (8_388_600, true, 8_388_600),
        ],
    )
}

/// State after allocating 32 bytes with head-first.
pub fn alloc32_head_first(base: u64) -> Vec<SnapshotRow> {
    rows(
        base,
        &[
            (0, false, 8),
            (24, true, 16_776_928),
            (16_776_968, false, 32),
            (16_777_016, false, 16),
            (16_777_048, true, 128),
            (16_777_192, false, 8),
        ],
    )
}

/// State after freeing the 32-byte block again, non-head-first.
pub fn merged_non_head_first(base: u64) -> Vec<SnapshotRow> {
    non_head_first_layout(base)
}

/// State after freeing the 32-byte block again, head-first.
pub fn merged_head_first(base: u64) -> Vec<SnapshotRow> {
    head_first_layout(base)
}
