//! Block-table snapshots, snapshot loading, the external-fragmentation
//! metric, and the invariant checker.
//!
//! Snapshots use the five-column table format `i, address, left_addr, free,
//! size`. The text form is CSV with a header line; addresses are lowercase
//! hex with a `0x` prefix and `free` is `yes`/`no`. A dumped snapshot can be
//! loaded back to reconstruct the arena state, which is how replay tests pin
//! mid-run states whose construction history is unknown.

use std::fmt::Write as _;

use thiserror::Error;

use crate::arena::{Arena, ArenaError, BlockHeader, BlockRef, HEADER_SIZE};

/// One row of the block table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SnapshotRow {
    /// Header offset within the arena (the `i` column).
    pub offset: usize,
    /// User-visible address: `base + i + HEADER_SIZE`.
    pub address: u64,
    /// User address of the block to the left; 0 for the first block.
    pub left_addr: u64,
    pub free: bool,
    /// Addressable size in bytes.
    pub size: usize,
}

/// External-fragmentation summary of one arena state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FragReport {
    pub total_free_bytes: usize,
    pub largest_free_block: usize,
    /// `total_free_bytes - largest_free_block`: free bytes scattered outside
    /// the single largest region.
    pub external_fragmentation: usize,
    pub free_block_count: usize,
}

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("snapshot parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("snapshot validation error on row {row}: {msg}")]
    Validation { row: usize, msg: String },
    #[error(transparent)]
    Arena(#[from] ArenaError),
}

/// Walks the chain and produces one row per block.
pub fn snapshot(arena: &Arena) -> Result<Vec<SnapshotRow>, ArenaError> {
    let mut rows = Vec::new();
    let mut cur = Some(arena.first_block());
    let mut left_addr = 0u64;
    while let Some(b) = cur {
        let h = arena.header(b);
        let address = arena.user_address(b);
        rows.push(SnapshotRow { offset: b.offset, address, left_addr, free: h.is_free, size: h.size });
        left_addr = address;
        cur = arena.next_block(b)?;
    }
    Ok(rows)
}

/// Renders rows in the CSV file format (`i,address,left_addr,free,size`).
pub fn write_snapshot_csv(rows: &[SnapshotRow]) -> String {
    let mut out = String::from("i,address,left_addr,free,size\n");
    for r in rows {
        writeln!(
            out,
            "{},{:#x},{:#x},{},{}",
            r.offset,
            r.address,
            r.left_addr,
            if r.free { "yes" } else { "no" },
            r.size
        )
        .unwrap();
    }
    out
}

/// Parses the CSV snapshot format produced by [`write_snapshot_csv`].
pub fn parse_snapshot_csv(text: &str) -> Result<Vec<SnapshotRow>, SnapshotError> {
    let mut rows = Vec::new();
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(SnapshotError::Parse {
        line: 1,
        msg: "empty snapshot".to_string(),
    })?;
    if header.trim() != "i,address,left_addr,free,size" {
        return Err(SnapshotError::Parse {
            line: 1,
            msg: format!("unexpected header {header:?}"),
        });
    }
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(SnapshotError::Parse {
                line: lineno,
                msg: format!("expected 5 fields, got {}", fields.len()),
            });
        }
        let parse_int = |s: &str, what: &str| {
            s.parse::<usize>().map_err(|_| SnapshotError::Parse {
                line: lineno,
                msg: format!("bad {what} {s:?}"),
            })
        };
        let parse_hex = |s: &str, what: &str| {
            s.strip_prefix("0x")
                .and_then(|h| u64::from_str_radix(h, 16).ok())
                .ok_or_else(|| SnapshotError::Parse {
                    line: lineno,
                    msg: format!("bad {what} {s:?} (want 0x-prefixed hex)"),
                })
        };
        let free = match fields[3] {
            "yes" => true,
            "no" => false,
            other => {
                return Err(SnapshotError::Parse {
                    line: lineno,
                    msg: format!("bad free flag {other:?} (want yes|no)"),
                })
            }
        };
        rows.push(SnapshotRow {
            offset: parse_int(fields[0], "offset")?,
            address: parse_hex(fields[1], "address")?,
            left_addr: parse_hex(fields[2], "left_addr")?,
            free,
            size: parse_int(fields[4], "size")?,
        });
    }
    Ok(rows)
}

/// Reconstructs an arena from snapshot rows. Allocated blocks get
/// `default_owner`; free blocks are unowned.
pub fn load_snapshot(
    rows: &[SnapshotRow],
    base: u64,
    capacity: usize,
    default_owner: u32,
) -> Result<Arena, SnapshotError> {
    if rows.is_empty() {
        return Err(SnapshotError::Validation {
            row: 0,
            msg: "snapshot has no rows".to_string(),
        });
    }
    let mut arena = Arena::new_uninit(base, capacity)?;
    let mut expected_offset = 0usize;
    let mut left_addr = 0u64;
    let mut prev: Option<usize> = None;
    for (k, row) in rows.iter().enumerate() {
        if row.offset != expected_offset {
            return Err(SnapshotError::Validation {
                row: k,
                msg: format!("offset {} does not tile (expected {expected_offset})", row.offset),
            });
        }
        if row.offset % 8 != 0 || row.size % 8 != 0 {
            return Err(SnapshotError::Validation {
                row: k,
                msg: format!("offset {} / size {} misaligned", row.offset, row.size),
            });
        }
        let want_addr = base + (row.offset + HEADER_SIZE) as u64;
        if row.address != want_addr {
            return Err(SnapshotError::Validation {
                row: k,
                msg: format!("address {:#x} inconsistent with base (expected {want_addr:#x})", row.address),
            });
        }
        if row.left_addr != left_addr {
            return Err(SnapshotError::Validation {
                row: k,
                msg: format!("left_addr {:#x} inconsistent (expected {left_addr:#x})", row.left_addr),
            });
        }
        arena.write_header(
            BlockRef::new(row.offset),
            &BlockHeader {
                is_free: row.free,
                owner: if row.free { 0 } else { default_owner },
                size: row.size,
                prev,
            },
        );
        prev = Some(row.offset);
        left_addr = row.address;
        expected_offset = row.offset + HEADER_SIZE + row.size;
    }
    if expected_offset != capacity {
        return Err(SnapshotError::Validation {
            row: rows.len() - 1,
            msg: format!("rows tile {expected_offset} bytes, capacity is {capacity}"),
        });
    }
    Ok(arena)
}

/// Computes the fragmentation report in one chain walk.
pub fn fragmentation(arena: &Arena) -> FragReport {
    let mut total = 0usize;
    let mut largest = 0usize;
    let mut count = 0usize;
    let mut cur = Some(arena.first_block());
    while let Some(b) = cur {
        let h = arena.header(b);
        if h.is_free {
            total += h.size;
            largest = largest.max(h.size);
            count += 1;
        }
        cur = arena.next_block(b).ok().flatten();
    }
    FragReport {
        total_free_bytes: total,
        largest_free_block: largest,
        external_fragmentation: total - largest,
        free_block_count: count,
    }
}

/// One invariant violation found by [`check_invariants`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// The chain does not tile the arena (gap, overrun, or oversized block).
    Tiling { offset: usize, detail: String },
    /// A block's back-link disagrees with the forward chain.
    LinkSymmetry {
        block: usize,
        stored_prev: Option<usize>,
        expected_prev: Option<usize>,
    },
    /// A block offset or at-rest size is not a multiple of 8.
    Alignment { offset: usize, detail: String },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::Tiling { offset, detail } => write!(f, "TILING at {offset}: {detail}"),
            Violation::LinkSymmetry { block, stored_prev, expected_prev } => write!(
                f,
                "LINK_SYMMETRY at {block}: stored prev {stored_prev:?}, expected {expected_prev:?}"
            ),
            Violation::Alignment { offset, detail } => write!(f, "ALIGNMENT at {offset}: {detail}"),
        }
    }
}

#[derive(Debug, Default)]
pub struct InvariantReport {
    pub violations: Vec<Violation>,
}

impl InvariantReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Walks the raw storage defensively and reports every violation of the
/// tiling, link-symmetry, alignment, and traversal-closure invariants.
pub fn check_invariants(arena: &Arena) -> InvariantReport {
    let mut report = InvariantReport::default();
    let capacity = arena.capacity();
    let mut offset = 0usize;
    let mut expected_prev: Option<usize> = None;
    loop {
        if offset % 8 != 0 {
            report.violations.push(Violation::Alignment {
                offset,
                detail: "block offset not a multiple of 8".to_string(),
            });
        }
        let h = match arena.header_at(offset) {
            Some(h) => h,
            None => {
                report.violations.push(Violation::Tiling {
                    offset,
                    detail: format!("header at {offset} overruns capacity {capacity}"),
                });
                break;
            }
        };
        if h.size % 8 != 0 {
            report.violations.push(Violation::Alignment {
                offset,
                detail: format!("block size {} not a multiple of 8", h.size),
            });
        }
        if h.prev != expected_prev {
            report.violations.push(Violation::LinkSymmetry {
                block: offset,
                stored_prev: h.prev,
                expected_prev,
            });
        }
        let Some(end) = offset
            .checked_add(HEADER_SIZE)
            .and_then(|e| e.checked_add(h.size))
        else {
            report.violations.push(Violation::Tiling {
                offset,
                detail: format!("block size {} overflows", h.size),
            });
            break;
        };
        if end == capacity {
            break; // chain closes exactly at capacity
        }
        if end > capacity {
            report.violations.push(Violation::Tiling {
                offset,
                detail: format!("block of size {} runs past capacity {capacity}", h.size),
            });
            break;
        }
        expected_prev = Some(offset);
        offset = end;
    }
    report
}
