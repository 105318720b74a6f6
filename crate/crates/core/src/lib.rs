//! A simulated-heap memory allocator built around best-fit search with
//! space-fitting, operating in one of two modes:
//!
//! - **non-head-first**: classic best-fit (smallest sufficient free block),
//!   with an extra halving split (`chunk_up`) before space-fitting;
//! - **head-first**: the large free region is kept adjacent to the head of
//!   the block chain; allocation takes the first fitting free block from the
//!   head and carves from the high end of it, skipping the halving split.
//!
//! The heap is a plain byte region owned by [`arena::Arena`]; every block is
//! prefixed by a 16-byte bookkeeping header (free flag, owner id, addressable
//! size, back-link). Nothing here touches OS memory: the point is a
//! deterministic simulation that can replay allocation traces byte-exactly
//! and benchmark the two modes against each other.
//!
//! Modules:
//! - [`arena`]: block chain storage, header layout, offset arithmetic.
//! - [`allocator`]: the public mutators (create/free) and the underlying
//!   operations (find, stitch, chunk_up, space_fit).
//! - [`inspector`]: table-style snapshots, snapshot loading, fragmentation
//!   metric, invariant checker.
//! - [`bench`]: randomized concurrent workloads and mode comparison.

pub mod allocator;
pub mod arena;
pub mod bench;
pub mod inspector;
