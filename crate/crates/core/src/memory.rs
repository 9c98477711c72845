//! Foreign memory: zeroed, bounds-checked blocks owned by an arena, plus
//! deterministic cleanup hooks for anything that must be released with them.

use std::alloc::{self, Layout};
use std::fmt;
use std::ptr::NonNull;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, Weak};

use crate::codec::{self, HostValue};
use crate::error::{Error, Result};
use crate::types::TypeDescriptor;

/// Every block is aligned at least this strictly, so any descriptor fits at
/// offset 0.
pub const BLOCK_ALIGNMENT: usize = 16;

static LIVE_BLOCKS: AtomicUsize = AtomicUsize::new(0);

/// Number of allocated, unreleased blocks in the whole process.
pub fn live_block_count() -> usize {
    LIVE_BLOCKS.load(Ordering::SeqCst)
}

/// A raw machine address.
#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Address(usize);

impl Address {
    pub const NULL: Address = Address(0);

    pub const fn new(value: usize) -> Self {
        Address(value)
    }

    pub fn from_ptr<T>(ptr: *const T) -> Self {
        Address(ptr as usize)
    }

    pub const fn value(self) -> usize {
        self.0
    }

    pub const fn is_null(self) -> bool {
        self.0 == 0
    }

    pub fn as_ptr<T>(self) -> *const T {
        self.0 as *const T
    }

    pub fn as_mut_ptr<T>(self) -> *mut T {
        self.0 as *mut T
    }

    #[must_use]
    pub const fn offset(self, bytes: usize) -> Address {
        Address(self.0 + bytes)
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Address({:#x})", self.0)
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}", self.0)
    }
}

pub type CleanupAction = Box<dyn FnOnce() + Send>;

/// Alive/released state plus pending cleanups, shared by every releasable
/// handle type.
#[derive(Default)]
pub(crate) struct Lifecycle {
    released: bool,
    cleanups: Vec<CleanupAction>,
}

impl Lifecycle {
    pub(crate) fn is_alive(&self) -> bool {
        !self.released
    }

    pub(crate) fn register(&mut self, what: &str, action: CleanupAction) -> Result<()> {
        if self.released {
            return Err(Error::AlreadyReleased(what.to_string()));
        }
        self.cleanups.push(action);
        Ok(())
    }

    /// Marks released and hands back the cleanups in the order they must
    /// run, or `None` if already released.
    pub(crate) fn begin_release(&mut self) -> Option<Vec<CleanupAction>> {
        if self.released {
            return None;
        }
        self.released = true;
        let mut actions = std::mem::take(&mut self.cleanups);
        actions.reverse();
        Some(actions)
    }
}

pub(crate) fn run_cleanups(actions: Vec<CleanupAction>) {
    for action in actions {
        action();
    }
}

/// Anything an arena can own and tear down.
pub trait Release: Send + Sync {
    fn release(&self);
}

struct BlockInner {
    base: NonNull<u8>,
    length: usize,
    state: Mutex<Lifecycle>,
    arena: Weak<ArenaInner>,
}

// The block's bytes are only touched while holding `state`.
unsafe impl Send for BlockInner {}
unsafe impl Sync for BlockInner {}

impl BlockInner {
    fn layout(&self) -> Layout {
        Layout::from_size_align(self.length, BLOCK_ALIGNMENT).expect("validated at allocation")
    }
}

impl Drop for BlockInner {
    fn drop(&mut self) {
        let state = self.state.get_mut().unwrap_or_else(|e| e.into_inner());
        if let Some(actions) = state.begin_release() {
            run_cleanups(actions);
            unsafe { alloc::dealloc(self.base.as_ptr(), self.layout()) };
            LIVE_BLOCKS.fetch_sub(1, Ordering::SeqCst);
        }
    }
}

/// A zero-initialized region of foreign memory.
///
/// Clones share the same region. Reads and writes are bounds-checked and fail
/// with [`Error::UseAfterRelease`] once the block has been released.
#[derive(Clone)]
pub struct MemoryBlock(Arc<BlockInner>);

impl fmt::Debug for MemoryBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MemoryBlock")
            .field("base", &self.base())
            .field("length", &self.0.length)
            .field("alive", &self.is_alive())
            .finish()
    }
}

impl MemoryBlock {
    fn allocate(length: usize, arena: Weak<ArenaInner>) -> Result<Self> {
        if length == 0 {
            return Err(Error::ZeroSizedAllocation);
        }
        let layout =
            Layout::from_size_align(length, BLOCK_ALIGNMENT).map_err(|_| Error::AllocationFailed(length))?;
        let base =
            NonNull::new(unsafe { alloc::alloc_zeroed(layout) }).ok_or(Error::AllocationFailed(length))?;
        LIVE_BLOCKS.fetch_add(1, Ordering::SeqCst);
        Ok(MemoryBlock(Arc::new(BlockInner {
            base,
            length,
            state: Mutex::new(Lifecycle::default()),
            arena,
        })))
    }

    pub fn base(&self) -> Address {
        Address::from_ptr(self.0.base.as_ptr())
    }

    pub fn len(&self) -> usize {
        self.0.length
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_alive(&self) -> bool {
        self.lock().is_alive()
    }

    fn lock(&self) -> MutexGuard<'_, Lifecycle> {
        self.0.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn check(&self, state: &Lifecycle, offset: usize, size: usize) -> Result<()> {
        if !state.is_alive() {
            return Err(Error::UseAfterRelease);
        }
        match offset.checked_add(size) {
            Some(end) if end <= self.0.length => Ok(()),
            _ => Err(Error::OutOfBounds {
                offset,
                size,
                length: self.0.length,
            }),
        }
    }

    /// Runs `f` over `size` bytes starting at `offset`.
    pub fn with_bytes<R>(&self, offset: usize, size: usize, f: impl FnOnce(&[u8]) -> R) -> Result<R> {
        let state = self.lock();
        self.check(&state, offset, size)?;
        let bytes = unsafe { std::slice::from_raw_parts(self.0.base.as_ptr().add(offset), size) };
        Ok(f(bytes))
    }

    pub fn with_bytes_mut<R>(&self, offset: usize, size: usize, f: impl FnOnce(&mut [u8]) -> R) -> Result<R> {
        let state = self.lock();
        self.check(&state, offset, size)?;
        let bytes = unsafe { std::slice::from_raw_parts_mut(self.0.base.as_ptr().add(offset), size) };
        Ok(f(bytes))
    }

    /// Copy of the whole block.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.with_bytes(0, self.len(), <[u8]>::to_vec)
    }

    /// Encodes `value` as `ty` into `[offset, offset + size(ty))`.
    ///
    /// Nothing is written if encoding fails. String buffers needed by
    /// `cstring` members are allocated from the block's arena.
    pub fn write_at(&self, offset: usize, ty: &TypeDescriptor, value: &HostValue) -> Result<()> {
        {
            let state = self.lock();
            self.check(&state, offset, ty.size())?;
        }
        let arena = self.0.arena.upgrade().ok_or(Error::UseAfterRelease)?;
        let bytes = codec::encode_bytes(value, ty, &ArenaRef(&arena))?;
        self.with_bytes_mut(offset, bytes.len(), |dst| dst.copy_from_slice(&bytes))
    }

    pub fn read_at(&self, offset: usize, ty: &TypeDescriptor) -> Result<HostValue> {
        let state = self.lock();
        self.check(&state, offset, ty.size())?;
        unsafe { codec::decode_raw(self.base().offset(offset), ty) }
    }

    /// Reads a single union member stored at `offset`.
    pub fn read_union_member(&self, offset: usize, ty: &TypeDescriptor, member: &str) -> Result<HostValue> {
        let state = self.lock();
        self.check(&state, offset, ty.size())?;
        unsafe { codec::decode_union_member(self.base().offset(offset), ty, member) }
    }

    /// Adds an action to run when this block is released.
    pub fn register_cleanup(&self, action: impl FnOnce() + Send + 'static) -> Result<()> {
        self.lock().register("memory block", Box::new(action))
    }

    /// Runs cleanups in reverse registration order, then frees the memory.
    /// Releasing twice does nothing.
    pub fn release(&self) {
        let actions = self.lock().begin_release();
        if let Some(actions) = actions {
            run_cleanups(actions);
            // Hold the lock while freeing so no reader can be mid-access.
            let _state = self.lock();
            unsafe { alloc::dealloc(self.0.base.as_ptr(), self.0.layout()) };
            LIVE_BLOCKS.fetch_sub(1, Ordering::SeqCst);
        }
    }
}

impl Release for MemoryBlock {
    fn release(&self) {
        MemoryBlock::release(self)
    }
}

/// Reads a value of type `ty` at `address + offset` without any bounds
/// checking.
///
/// # Safety
///
/// The range must be readable for `ty.size()` bytes, and any `cstring` cell
/// inside it must hold null or a pointer to a NUL-terminated string.
pub unsafe fn read_raw(address: Address, offset: usize, ty: &TypeDescriptor) -> Result<HostValue> {
    if address.is_null() {
        return Err(Error::NullAddress);
    }
    unsafe { codec::decode_raw(address.offset(offset), ty) }
}

/// An opaque handle returned by foreign code (a plan, a context, ...) whose
/// teardown is expressed as cleanup actions.
#[derive(Clone)]
pub struct ForeignHandle(Arc<HandleInner>);

struct HandleInner {
    address: Address,
    state: Mutex<Lifecycle>,
}

impl ForeignHandle {
    pub fn new(address: Address) -> Self {
        ForeignHandle(Arc::new(HandleInner {
            address,
            state: Mutex::new(Lifecycle::default()),
        }))
    }

    pub fn address(&self) -> Address {
        self.0.address
    }

    fn lock(&self) -> MutexGuard<'_, Lifecycle> {
        self.0.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn is_alive(&self) -> bool {
        self.lock().is_alive()
    }

    pub fn register_cleanup(&self, action: impl FnOnce() + Send + 'static) -> Result<()> {
        self.lock().register("foreign handle", Box::new(action))
    }

    pub fn release(&self) {
        let actions = self.lock().begin_release();
        if let Some(actions) = actions {
            run_cleanups(actions);
        }
    }
}

impl fmt::Debug for ForeignHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ForeignHandle")
            .field("address", &self.address())
            .field("alive", &self.is_alive())
            .finish()
    }
}

impl Release for ForeignHandle {
    fn release(&self) {
        ForeignHandle::release(self)
    }
}

enum Owned {
    Block(MemoryBlock),
    Other(Box<dyn Release>),
}

pub(crate) struct ArenaInner {
    owned: Mutex<Vec<Owned>>,
    released: AtomicBool,
}

impl ArenaInner {
    fn lock(&self) -> MutexGuard<'_, Vec<Owned>> {
        self.owned.lock().unwrap_or_else(|e| e.into_inner())
    }
}

/// Borrowed view of an arena used by the codec for side allocations.
pub(crate) struct ArenaRef<'a>(&'a Arc<ArenaInner>);

impl ArenaRef<'_> {
    pub(crate) fn allocate(&self, length: usize) -> Result<MemoryBlock> {
        allocate_in(self.0, length)
    }
}

fn allocate_in(arena: &Arc<ArenaInner>, length: usize) -> Result<MemoryBlock> {
    let mut owned = arena.lock();
    if arena.released.load(Ordering::SeqCst) {
        return Err(Error::AlreadyReleased("memory arena".into()));
    }
    let block = MemoryBlock::allocate(length, Arc::downgrade(arena))?;
    // Drop bookkeeping for blocks that were released individually.
    if owned.len() >= 64 && owned.len().is_power_of_two() {
        owned.retain(|o| !matches!(o, Owned::Block(b) if !b.is_alive()));
    }
    owned.push(Owned::Block(block.clone()));
    Ok(block)
}

/// Owner of foreign allocations and anything else registered with it.
///
/// Releasing the arena (explicitly or by dropping it) releases every owned
/// item in reverse order of acquisition.
pub struct MemoryArena {
    inner: Arc<ArenaInner>,
}

impl Default for MemoryArena {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for MemoryArena {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MemoryArena")
            .field("live_blocks", &self.live_blocks())
            .field("released", &self.is_released())
            .finish()
    }
}

impl MemoryArena {
    pub fn new() -> Self {
        MemoryArena {
            inner: Arc::new(ArenaInner {
                owned: Mutex::new(Vec::new()),
                released: AtomicBool::new(false),
            }),
        }
    }

    /// Allocates `length` zeroed bytes.
    pub fn allocate(&self, length: usize) -> Result<MemoryBlock> {
        allocate_in(&self.inner, length)
    }

    /// Allocates a block sized for `ty` and encodes `value` into it.
    pub fn boxed(&self, value: &HostValue, ty: &TypeDescriptor) -> Result<codec::ForeignValue> {
        codec::encode(value, ty, self)
    }

    /// Takes ownership of a foreign handle so it is released with the arena.
    pub fn adopt_handle(&self, address: Address) -> Result<ForeignHandle> {
        let handle = ForeignHandle::new(address);
        self.adopt(Box::new(handle.clone()))?;
        Ok(handle)
    }

    /// Takes ownership of an arbitrary releasable item.
    pub fn adopt(&self, item: Box<dyn Release>) -> Result<()> {
        let mut owned = self.inner.lock();
        if self.is_released() {
            drop(owned);
            item.release();
            return Err(Error::AlreadyReleased("memory arena".into()));
        }
        owned.push(Owned::Other(item));
        Ok(())
    }

    pub(crate) fn as_ref(&self) -> ArenaRef<'_> {
        ArenaRef(&self.inner)
    }

    pub fn live_blocks(&self) -> usize {
        self.inner
            .lock()
            .iter()
            .filter(|o| matches!(o, Owned::Block(b) if b.is_alive()))
            .count()
    }

    pub fn is_released(&self) -> bool {
        self.inner.released.load(Ordering::SeqCst)
    }

    /// Releases everything the arena owns. Later calls do nothing.
    pub fn release(&self) {
        let owned = {
            let mut owned = self.inner.lock();
            if self.inner.released.swap(true, Ordering::SeqCst) {
                return;
            }
            std::mem::take(&mut *owned)
        };
        for item in owned.into_iter().rev() {
            match item {
                Owned::Block(block) => block.release(),
                Owned::Other(other) => other.release(),
            }
        }
    }
}

impl Drop for MemoryArena {
    fn drop(&mut self) {
        self.release();
    }
}
