//! The five allocator operations — Create (both modes), Find, Stitch,
//! ChunkUp, SpaceFit — plus Free with its tri-state status.
//!
//! The low-level operations are free functions over `&mut Arena` so tests
//! can drive them directly; [`Allocator`] is the synchronized wrapper that
//! callers use, serializing every public mutation on one mutex.

use std::sync::{Mutex, MutexGuard};

use crate::arena::{Arena, ArenaError, BlockHeader, BlockRef, InitLayout, HEADER_SIZE};

/// Operating mode, fixed for the lifetime of an arena.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Keep the large free region adjacent to the head: take the first
    /// fitting free block from the head and carve from its high end,
    /// without the halving split.
    HeadFirst,
    /// Classic best-fit: smallest sufficient free block, halving split
    /// before space-fitting.
    NonHeadFirst,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::HeadFirst => write!(f, "head-first"),
            Mode::NonHeadFirst => write!(f, "non-head-first"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AllocatorConfig {
    pub mode: Mode,
    pub capacity: usize,
    pub layout: InitLayout,
    pub base_address: u64,
    /// Surplus must exceed this many headers before SpaceFit carves a new
    /// free block out of it.
    pub carve_threshold_multiplier: usize,
}

impl Default for AllocatorConfig {
    fn default() -> Self {
        AllocatorConfig {
            mode: Mode::NonHeadFirst,
            capacity: 16 * 1024 * 1024,
            layout: InitLayout::SingleBlock,
            base_address: 0,
            carve_threshold_multiplier: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AllocStatus {
    Ok,
    OutOfMemory,
    InvalidRequest,
}

/// Outcome of [`Allocator::create`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AllocResult {
    pub status: AllocStatus,
    pub block: Option<BlockRef>,
    pub user_addr: Option<u64>,
}

impl AllocResult {
    fn failed(status: AllocStatus) -> Self {
        AllocResult { status, block: None, user_addr: None }
    }

    pub fn is_ok(&self) -> bool {
        self.status == AllocStatus::Ok
    }
}

/// Outcome of [`Allocator::free`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FreeStatus {
    Freed,
    /// Target is null, unknown, or already free.
    Unallocated,
    /// Caller does not own the block and force was not set.
    Segfault,
}

impl std::fmt::Display for FreeStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FreeStatus::Freed => write!(f, "FREED"),
            FreeStatus::Unallocated => write!(f, "UNALLOCATED"),
            FreeStatus::Segfault => write!(f, "SEGFAULT"),
        }
    }
}

/// Rounds `n` up to the next multiple of 8 (double-word alignment).
pub fn double_align(n: usize) -> usize {
    (n + 7) & !7
}

fn align_down_8(n: usize) -> usize {
    n & !7
}

/// Best-fit search: the free block with the minimum size among those that
/// fit `req`; ties broken by lowest offset. `req` must be aligned.
pub fn find_best_fit(arena: &Arena, req: usize) -> Option<BlockRef> {
    let capacity = arena.capacity();
    let mut best: Option<(usize, usize)> = None;
    let mut offset = 0;
    while offset < capacity {
        let h = arena.header_at(offset).expect("block chain corrupt");
        if h.is_free && h.size >= req {
            if h.size == req {
                // exact fit: no smaller block can win, and any equal-sized
                // one would lose the lowest-offset tie-break
                return Some(BlockRef::new(offset));
            }
            match best {
                Some((best_size, _)) if best_size <= h.size => {}
                _ => best = Some((h.size, offset)),
            }
        }
        offset += HEADER_SIZE + h.size;
    }
    best.map(|(_, off)| BlockRef::new(off))
}

/// Head-first search: the first free block from the head that fits `req`.
/// In steady state this hits the large head-adjacent region immediately,
/// without traversing the rest of the list.
pub fn find_first_fit(arena: &Arena, req: usize) -> Option<BlockRef> {
    let capacity = arena.capacity();
    let mut offset = 0;
    while offset < capacity {
        let h = arena.header_at(offset).expect("block chain corrupt");
        if h.is_free && h.size >= req {
            return Some(BlockRef::new(offset));
        }
        offset += HEADER_SIZE + h.size;
    }
    None
}

/// Coalesces adjacent free blocks in one full bottom-to-top pass, then
/// retries the best-fit search for `req`.
pub fn stitch(arena: &mut Arena, req: usize) -> Option<BlockRef> {
    let blocks = arena.blocks().expect("block chain corrupt");
    for i in (1..blocks.len()).rev() {
        let left = blocks[i - 1];
        let right = blocks[i];
        let lh = arena.header(left);
        let rh = arena.header(right);
        if lh.is_free && rh.is_free {
            merge_into_left(arena, left, right);
        }
    }
    find_best_fit(arena, req)
}

/// Dissolves `right`'s header into `left`'s addressable space. Both must be
/// physically adjacent; the merged block keeps `left`'s flags and owner.
fn merge_into_left(arena: &mut Arena, left: BlockRef, right: BlockRef) {
    let mut lh = arena.header(left);
    let rh = arena.header(right);
    debug_assert_eq!(left.offset + HEADER_SIZE + lh.size, right.offset);
    lh.size += HEADER_SIZE + rh.size;
    arena.write_header(left, &lh);
    if let Some(next) = arena.next_block(left).expect("block chain corrupt") {
        let mut nh = arena.header(next);
        nh.prev = Some(left.offset);
        arena.write_header(next, &nh);
    }
}

/// Halving split. Divides a free block into two when the aligned half still
/// fits the request; otherwise the block is returned unchanged.
pub fn chunk_up(arena: &mut Arena, block: BlockRef, req: usize) -> BlockRef {
    let h = arena.header(block);
    if !h.is_free {
        return block;
    }
    if h.size <= HEADER_SIZE {
        return block;
    }
    let half = align_down_8((h.size - HEADER_SIZE) / 2);
    if half < req || half < 8 {
        return block;
    }
    let second = BlockRef::new(block.offset + HEADER_SIZE + half);
    let second_size = h.size - HEADER_SIZE - half;
    arena.write_header(block, &BlockHeader { size: half, ..h });
    arena.write_header(
        second,
        &BlockHeader { is_free: true, owner: 0, size: second_size, prev: Some(block.offset) },
    );
    if let Some(next) = arena.next_block(second).expect("block chain corrupt") {
        let mut nh = arena.header(next);
        nh.prev = Some(second.offset);
        arena.write_header(next, &nh);
    }
    block
}

/// Redistributes a candidate block's surplus bytes so it shrinks to exactly
/// `req`: into the next block if free, else into the previous block if free
/// (the candidate moves to the high end of its span), else carved into a new
/// free block below the candidate when the surplus exceeds
/// `carve_threshold_multiplier` headers. Falls through unchanged otherwise.
///
/// Returns the (possibly relocated) candidate block.
pub fn space_fit(
    arena: &mut Arena,
    block: BlockRef,
    req: usize,
    carve_threshold_multiplier: usize,
) -> BlockRef {
    let h = arena.header(block);
    debug_assert!(h.size >= req);
    let extra = h.size - req;
    if extra == 0 {
        return block;
    }

    let next = arena.next_block(block).expect("block chain corrupt");
    if let Some(next) = next {
        let nh = arena.header(next);
        if nh.is_free {
            // Next block's header slides down by `extra`.
            let moved = BlockRef::new(block.offset + HEADER_SIZE + req);
            arena.write_header(block, &BlockHeader { size: req, ..h });
            arena.write_header(moved, &BlockHeader { size: nh.size + extra, ..nh });
            if let Some(after) = arena.next_block(moved).expect("block chain corrupt") {
                let mut ah = arena.header(after);
                ah.prev = Some(moved.offset);
                arena.write_header(after, &ah);
            }
            return block;
        }
    }

    let prev = arena.prev_block(block).expect("block chain corrupt");
    if let Some(prev) = prev {
        let ph = arena.header(prev);
        if ph.is_free {
            // Previous block grows; the candidate's header slides up.
            let moved = BlockRef::new(block.offset + extra);
            arena.write_header(prev, &BlockHeader { size: ph.size + extra, ..ph });
            arena.write_header(moved, &BlockHeader { size: req, prev: Some(prev.offset), ..h });
            if let Some(after) = arena.next_block(moved).expect("block chain corrupt") {
                let mut ah = arena.header(after);
                ah.prev = Some(moved.offset);
                arena.write_header(after, &ah);
            }
            return moved;
        }
    }

    if extra > carve_threshold_multiplier * HEADER_SIZE {
        // Carve a free block for the surplus first, then recreate the
        // shrunk candidate above it.
        let carved_size = extra - HEADER_SIZE;
        let moved = BlockRef::new(block.offset + HEADER_SIZE + carved_size);
        arena.write_header(
            block,
            &BlockHeader { is_free: true, owner: 0, size: carved_size, prev: h.prev },
        );
        arena.write_header(moved, &BlockHeader { size: req, prev: Some(block.offset), ..h });
        if let Some(after) = arena.next_block(moved).expect("block chain corrupt") {
            let mut ah = arena.header(after);
            ah.prev = Some(moved.offset);
            arena.write_header(after, &ah);
        }
        return moved;
    }

    block
}

fn create_in(arena: &mut Arena, config: &AllocatorConfig, req_size: usize, owner: u32) -> AllocResult {
    if req_size == 0 || owner == 0 {
        return AllocResult::failed(AllocStatus::InvalidRequest);
    }
    let req = double_align(req_size);

    let found = match config.mode {
        Mode::HeadFirst => find_first_fit(arena, req),
        Mode::NonHeadFirst => find_best_fit(arena, req),
    };
    let found = found.or_else(|| stitch(arena, req));
    let mut block = match found {
        Some(b) => b,
        None => return AllocResult::failed(AllocStatus::OutOfMemory),
    };

    if arena.header(block).size > req {
        if config.mode == Mode::NonHeadFirst {
            block = chunk_up(arena, block, req);
        }
        block = space_fit(arena, block, req, config.carve_threshold_multiplier);
    }

    let mut h = arena.header(block);
    h.is_free = false;
    h.owner = owner;
    arena.write_header(block, &h);
    AllocResult {
        status: AllocStatus::Ok,
        block: Some(block),
        user_addr: Some(arena.user_address(block)),
    }
}

fn free_in(arena: &mut Arena, user_addr: Option<u64>, caller: u32, is_forced: bool) -> FreeStatus {
    let addr = match user_addr {
        None => return FreeStatus::Unallocated,
        Some(a) => a,
    };
    let mut block = match arena.find_block_by_user_address(addr) {
        None => return FreeStatus::Unallocated,
        Some(b) => b,
    };
    let h = arena.header(block);
    if h.is_free {
        return FreeStatus::Unallocated;
    }
    if h.owner != caller && !is_forced {
        return FreeStatus::Segfault;
    }

    arena.write_header(block, &BlockHeader { is_free: true, owner: 0, ..h });

    if let Some(prev) = arena.prev_block(block).expect("block chain corrupt") {
        if arena.header(prev).is_free {
            merge_into_left(arena, prev, block);
            block = prev;
        }
    }
    if let Some(next) = arena.next_block(block).expect("block chain corrupt") {
        if arena.header(next).is_free {
            merge_into_left(arena, block, next);
        }
    }
    FreeStatus::Freed
}

/// Thread-safe allocator over one arena. All public operations execute under
/// a single exclusive lock, so effects are linearizable.
pub struct Allocator {
    config: AllocatorConfig,
    arena: Mutex<Arena>,
}

impl Allocator {
    pub fn new(config: AllocatorConfig) -> Result<Self, ArenaError> {
        if config.carve_threshold_multiplier < 1 {
            return Err(ArenaError::Config(
                "carve threshold multiplier must be at least 1".to_string(),
            ));
        }
        let arena = Arena::init(config.base_address, config.capacity, config.layout)?;
        Ok(Allocator { config, arena: Mutex::new(arena) })
    }

    /// Wraps an existing arena (e.g. one loaded from a snapshot).
    pub fn from_arena(mode: Mode, arena: Arena) -> Self {
        let config = AllocatorConfig {
            mode,
            capacity: arena.capacity(),
            base_address: arena.base_address(),
            ..AllocatorConfig::default()
        };
        Allocator { config, arena: Mutex::new(arena) }
    }

    pub fn config(&self) -> &AllocatorConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    /// Exclusive access to the arena, for snapshots and inspection.
    pub fn arena(&self) -> MutexGuard<'_, Arena> {
        self.arena.lock().unwrap()
    }

    /// Reserves `req_size` bytes (rounded up to a multiple of 8) for `owner`.
    pub fn create(&self, req_size: usize, owner: u32) -> AllocResult {
        let mut arena = self.arena.lock().unwrap();
        create_in(&mut arena, &self.config, req_size, owner)
    }

    /// Releases the block whose user address is `user_addr`, merging with
    /// free neighbors. `None` stands for a null pointer.
    pub fn free(&self, user_addr: Option<u64>, caller: u32, is_forced: bool) -> FreeStatus {
        let mut arena = self.arena.lock().unwrap();
        free_in(&mut arena, user_addr, caller, is_forced)
    }
}
