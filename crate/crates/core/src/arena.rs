//! Simulated arena storage and the per-block header layout.
//!
//! The arena is one contiguous byte region. Blocks tile it exactly: block k+1
//! starts at `offset(k) + HEADER_SIZE + size(k)`, and the last block ends at
//! `capacity`. Each block starts with a 16-byte serialized header:
//!
//! ```text
//! byte  0      : is_free (0 or 1)
//! bytes 1..5   : owner, u32 little-endian (0 = unowned)
//! bytes 5..13  : addressable size in bytes, u64 little-endian
//! bytes 13..16 : previous block's header offset, u24 little-endian
//!                (0xffffff = no previous block)
//! ```
//!
//! The 3-byte back-link caps the arena at 16 MiB; `init` rejects anything
//! larger. Offsets are what the snapshot tables call `i`; the user-visible
//! address of a block is `base_address + i + HEADER_SIZE`.

use thiserror::Error;

/// Serialized size of the per-block bookkeeping header, in bytes.
pub const HEADER_SIZE: usize = 16;

/// Smallest accepted arena: room for two headers plus 16 addressable bytes.
pub const MIN_CAPACITY: usize = 2 * HEADER_SIZE + 16;

/// Largest accepted arena, bounded by the 3-byte back-link encoding.
pub const MAX_CAPACITY: usize = 16 * 1024 * 1024;

const PREV_NONE: u32 = 0x00ff_ffff;

/// Initial block layout of a fresh arena.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitLayout {
    /// One free block covering the whole arena.
    SingleBlock,
    /// Two free blocks splitting the arena into halves.
    TwoBlock,
}

/// Byte offset of a block header within the arena (the tables' `i` column).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockRef {
    pub offset: usize,
}

impl BlockRef {
    pub fn new(offset: usize) -> Self {
        BlockRef { offset }
    }
}

/// Decoded per-block bookkeeping record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockHeader {
    pub is_free: bool,
    /// Owning process/worker id; 0 means unowned.
    pub owner: u32,
    /// Addressable bytes, excluding the header.
    pub size: usize,
    /// Offset of the previous block's header, `None` for the first block.
    pub prev: Option<usize>,
}

#[derive(Debug, Error)]
pub enum ArenaError {
    #[error("invalid arena configuration: {0}")]
    Config(String),
    #[error("arena corruption at offset {offset}: {detail}")]
    Corruption { offset: usize, detail: String },
}

/// The simulated memory region and its block chain.
#[derive(Debug)]
pub struct Arena {
    base_address: u64,
    storage: Vec<u8>,
}

impl Arena {
    /// Validates `capacity` and returns a zeroed region with no block chain.
    /// The caller must write headers that tile the region before using any
    /// traversal; `init` and the snapshot loader do exactly that.
    pub fn new_uninit(base_address: u64, capacity: usize) -> Result<Arena, ArenaError> {
        if capacity < MIN_CAPACITY {
            return Err(ArenaError::Config(format!(
                "capacity {capacity} below minimum {MIN_CAPACITY}"
            )));
        }
        if capacity % 8 != 0 {
            return Err(ArenaError::Config(format!(
                "capacity {capacity} is not a multiple of 8"
            )));
        }
        if capacity > MAX_CAPACITY {
            return Err(ArenaError::Config(format!(
                "capacity {capacity} exceeds maximum {MAX_CAPACITY}"
            )));
        }
        Ok(Arena {
            base_address,
            storage: vec![0u8; capacity],
        })
    }

    /// Creates a fresh arena with the requested initial layout.
    pub fn init(base_address: u64, capacity: usize, layout: InitLayout) -> Result<Arena, ArenaError> {
        let mut arena = Arena::new_uninit(base_address, capacity)?;
        match layout {
            InitLayout::SingleBlock => {
                arena.write_header(
                    BlockRef::new(0),
                    &BlockHeader {
                        is_free: true,
                        owner: 0,
                        size: capacity - HEADER_SIZE,
                        prev: None,
                    },
                );
            }
            InitLayout::TwoBlock => {
                // Generalizes the 16 MiB reference split (8388584 / 8388600):
                // first = C/2 - 2*HEADER_SIZE + 8, second = C/2 - 8.
                if capacity % 16 != 0 {
                    return Err(ArenaError::Config(format!(
                        "two-block layout needs capacity divisible by 16, got {capacity}"
                    )));
                }
                let half = capacity / 2;
                let first_size = half
                    .checked_sub(2 * HEADER_SIZE)
                    .map(|s| s + 8)
                    .filter(|&s| s >= 8)
                    .ok_or_else(|| {
                        ArenaError::Config(format!(
                            "capacity {capacity} too small for two-block layout"
                        ))
                    })?;
                let second_offset = HEADER_SIZE + first_size;
                let second_size = half - 8;
                arena.write_header(
                    BlockRef::new(0),
                    &BlockHeader {
                        is_free: true,
                        owner: 0,
                        size: first_size,
                        prev: None,
                    },
                );
                arena.write_header(
                    BlockRef::new(second_offset),
                    &BlockHeader {
                        is_free: true,
                        owner: 0,
                        size: second_size,
                        prev: Some(0),
                    },
                );
            }
        }
        Ok(arena)
    }

    pub fn base_address(&self) -> u64 {
        self.base_address
    }

    pub fn capacity(&self) -> usize {
        self.storage.len()
    }

    /// The block at offset 0. Every arena has one.
    pub fn first_block(&self) -> BlockRef {
        BlockRef::new(0)
    }

    /// Decodes the header at `block`. Panics if the offset is out of range;
    /// use [`Arena::header_at`] for defensive reads.
    pub fn header(&self, block: BlockRef) -> BlockHeader {
        self.header_at(block.offset)
            .expect("block offset out of arena range")
    }

    /// Decodes the header at a raw offset, or `None` if it does not fit.
    pub fn header_at(&self, offset: usize) -> Option<BlockHeader> {
        if offset + HEADER_SIZE > self.storage.len() {
            return None;
        }
        let b = &self.storage[offset..offset + HEADER_SIZE];
        let owner = u32::from_le_bytes([b[1], b[2], b[3], b[4]]);
        let size = u64::from_le_bytes([b[5], b[6], b[7], b[8], b[9], b[10], b[11], b[12]]);
        let prev_raw = u32::from_le_bytes([b[13], b[14], b[15], 0]);
        Some(BlockHeader {
            is_free: b[0] != 0,
            owner,
            size: size as usize,
            prev: if prev_raw == PREV_NONE {
                None
            } else {
                Some(prev_raw as usize)
            },
        })
    }

    /// Serializes `header` at `block`. Public so the snapshot loader and
    /// fault-injection tests can build arbitrary chain states.
    pub fn write_header(&mut self, block: BlockRef, header: &BlockHeader) {
        let offset = block.offset;
        assert!(
            offset + HEADER_SIZE <= self.storage.len(),
            "header write out of arena range"
        );
        let prev_raw = match header.prev {
            None => PREV_NONE,
            Some(p) => {
                assert!((p as u32) < PREV_NONE, "prev offset exceeds back-link range");
                p as u32
            }
        };
        let b = &mut self.storage[offset..offset + HEADER_SIZE];
        b[0] = header.is_free as u8;
        b[1..5].copy_from_slice(&header.owner.to_le_bytes());
        b[5..13].copy_from_slice(&(header.size as u64).to_le_bytes());
        b[13..16].copy_from_slice(&prev_raw.to_le_bytes()[..3]);
    }

    /// Raw storage access, for corrupting headers in tests.
    pub fn storage_mut(&mut self) -> &mut [u8] {
        &mut self.storage
    }

    /// Address handed to the user for `block`: `base + offset + HEADER_SIZE`.
    pub fn user_address(&self, block: BlockRef) -> u64 {
        self.base_address + (block.offset + HEADER_SIZE) as u64
    }

    /// The block physically after `block`, or `None` at the chain end.
    pub fn next_block(&self, block: BlockRef) -> Result<Option<BlockRef>, ArenaError> {
        let h = self.header(block);
        let next = block.offset + HEADER_SIZE + h.size;
        if next == self.capacity() {
            return Ok(None);
        }
        if next + HEADER_SIZE > self.capacity() {
            return Err(ArenaError::Corruption {
                offset: block.offset,
                detail: format!("next offset {next} overruns capacity {}", self.capacity()),
            });
        }
        Ok(Some(BlockRef::new(next)))
    }

    /// The block the back-link points at, or `None` for the first block.
    pub fn prev_block(&self, block: BlockRef) -> Result<Option<BlockRef>, ArenaError> {
        let h = self.header(block);
        match h.prev {
            None => Ok(None),
            Some(p) => {
                if p % 8 != 0 || p + HEADER_SIZE > self.capacity() || p >= block.offset {
                    return Err(ArenaError::Corruption {
                        offset: block.offset,
                        detail: format!("stored prev offset {p} is not a valid header position"),
                    });
                }
                Ok(Some(BlockRef::new(p)))
            }
        }
    }

    /// Linear scan for the block whose user address equals `addr`.
    pub fn find_block_by_user_address(&self, addr: u64) -> Option<BlockRef> {
        let mut cur = Some(self.first_block());
        while let Some(b) = cur {
            if self.user_address(b) == addr {
                return Some(b);
            }
            cur = self.next_block(b).ok().flatten();
        }
        None
    }

    /// Walks the chain from the first block, collecting every block in order.
    pub fn blocks(&self) -> Result<Vec<BlockRef>, ArenaError> {
        let mut out = Vec::new();
        let mut cur = Some(self.first_block());
        while let Some(b) = cur {
            out.push(b);
            cur = self.next_block(b)?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_block_16mib() -> Arena {
        Arena::init(0x1_4300_0000, 16 * 1024 * 1024, InitLayout::TwoBlock).unwrap()
    }

    #[test]
    fn init_two_block_matches_reference_sizes() {
        let a = two_block_16mib();
        let blocks = a.blocks().unwrap();
        assert_eq!(blocks.len(), 2);
        let h0 = a.header(blocks[0]);
        let h1 = a.header(blocks[1]);
        assert_eq!(blocks[0].offset, 0);
        assert_eq!(h0.size, 8_388_584);
        assert!(h0.is_free);
        assert_eq!(h0.prev, None);
        assert_eq!(blocks[1].offset, 8_388_600);
        assert_eq!(h1.size, 8_388_600);
        assert!(h1.is_free);
        assert_eq!(h1.prev, Some(0));
        // The two blocks tile the arena exactly.
        assert_eq!(HEADER_SIZE + h0.size + HEADER_SIZE + h1.size, a.capacity());
    }

    #[test]
    fn init_single_block() {
        let a = Arena::init(0, 16 * 1024 * 1024, InitLayout::SingleBlock).unwrap();
        let blocks = a.blocks().unwrap();
        assert_eq!(blocks.len(), 1);
        assert_eq!(a.header(blocks[0]).size, 16_777_200);

        let small = Arena::init(0, 64, InitLayout::SingleBlock).unwrap();
        assert_eq!(small.header(small.first_block()).size, 48);
    }

    #[test]
    fn init_rejects_bad_capacity() {
        assert!(matches!(
            Arena::init(0, 40, InitLayout::SingleBlock),
            Err(ArenaError::Config(_))
        ));
        assert!(matches!(
            Arena::init(0, 100, InitLayout::SingleBlock),
            Err(ArenaError::Config(_))
        ));
        assert!(matches!(
            Arena::init(0, MAX_CAPACITY + 8, InitLayout::SingleBlock),
            Err(ArenaError::Config(_))
        ));
        // Two-block split needs a capacity divisible by 16.
        assert!(matches!(
            Arena::init(0, 72, InitLayout::TwoBlock),
            Err(ArenaError::Config(_))
        ));
    }

    #[test]
    fn user_addresses_match_reference_table() {
        let a = two_block_16mib();
        assert_eq!(a.user_address(BlockRef::new(0)), 0x1_4300_0010);
        assert_eq!(a.user_address(BlockRef::new(8_388_600)), 0x1_4380_0008);

        let b = Arena::init(0, 64, InitLayout::SingleBlock).unwrap();
        assert_eq!(b.user_address(BlockRef::new(24)), 40);
    }

    #[test]
    fn next_and_prev_navigation() {
        let mut a = Arena::init(0, 256, InitLayout::SingleBlock).unwrap();
        a.write_header(
            BlockRef::new(0),
            &BlockHeader { is_free: false, owner: 1, size: 32, prev: None },
        );
        a.write_header(
            BlockRef::new(48),
            &BlockHeader { is_free: true, owner: 0, size: 192, prev: Some(0) },
        );
        let b0 = a.first_block();
        let b1 = a.next_block(b0).unwrap().unwrap();
        assert_eq!(b1.offset, 48);
        assert_eq!(a.next_block(b1).unwrap(), None);
        assert_eq!(a.prev_block(b1).unwrap(), Some(b0));
        assert_eq!(a.prev_block(b0).unwrap(), None);
    }

    #[test]
    fn next_detects_overrun() {
        let mut a = Arena::init(0, 64, InitLayout::SingleBlock).unwrap();
        a.write_header(
            BlockRef::new(0),
            &BlockHeader { is_free: true, owner: 0, size: 40, prev: None },
        );
        assert!(matches!(
            a.next_block(a.first_block()),
            Err(ArenaError::Corruption { .. })
        ));
    }

    #[test]
    fn prev_detects_bad_link() {
        let mut a = Arena::init(0, 128, InitLayout::SingleBlock).unwrap();
        a.write_header(
            BlockRef::new(0),
            &BlockHeader { is_free: true, owner: 0, size: 112, prev: Some(120) },
        );
        assert!(matches!(
            a.prev_block(a.first_block()),
            Err(ArenaError::Corruption { .. })
        ));
    }

    #[test]
    fn header_roundtrip() {
        let mut a = Arena::init(0, 1024, InitLayout::SingleBlock).unwrap();
        let h = BlockHeader { is_free: false, owner: 0xdead_beef, size: 424, prev: Some(16_776_960) };
        // prev offset near the top of the representable range survives encoding
        a.write_header(BlockRef::new(8), &h);
        assert_eq!(a.header_at(8).unwrap(), h);
    }

    #[test]
    fn find_by_user_address() {
        let a = two_block_16mib();
        assert_eq!(
            a.find_block_by_user_address(0x1_4300_0010),
            Some(BlockRef::new(0))
        );
        assert_eq!(
            a.find_block_by_user_address(0x1_4380_0008),
            Some(BlockRef::new(8_388_600))
        );
        // misaligned, between blocks
        assert_eq!(a.find_block_by_user_address(0x1_4300_0000 + 7), None);
        // out of range
        assert_eq!(
            a.find_block_by_user_address(0x1_4300_0000 + a.capacity() as u64 + 100),
            None
        );
    }
}
