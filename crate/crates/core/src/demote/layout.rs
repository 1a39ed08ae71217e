use serde::{Deserialize, Serialize};

/// Placement of demoted registers in shared memory: slot `r` of thread `t`
/// lives at `base + r * block_dim * 4 + t * 4`, so the 32 lanes of a warp hit
/// 32 consecutive words.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharedLayout {
    /// Start of the demoted region: shared bytes already in use, rounded up to 4.
    pub base: u32,
    pub block_dim: u32,
}

impl SharedLayout {
    pub fn new(shared_in_use: u32, block_dim: u32) -> Self {
        SharedLayout { base: shared_in_use.div_ceil(4) * 4, block_dim }
    }

    pub fn slot_stride(&self) -> u32 {
        self.block_dim * 4
    }

    /// Offset of slot `r` relative to the per-thread base address.
    pub fn slot_offset(&self, r: u32) -> u32 {
        self.base + r * self.slot_stride()
    }

    /// Inverse of [`slot_offset`](Self::slot_offset).
    pub fn slot_of_offset(&self, offset: u32) -> Option<u32> {
        let rel = offset.checked_sub(self.base)?;
        (rel % self.slot_stride() == 0).then(|| rel / self.slot_stride())
    }

    /// Bytes from the end of user shared memory to the end of `slots` slots.
    pub fn end(&self, slots: u32) -> u32 {
        self.slot_offset(slots)
    }
}

/// Byte address of slot `r` for thread `t`.
pub fn shared_location(t: u32, r: u32, layout: &SharedLayout) -> u32 {
    t * 4 + layout.slot_offset(r)
}
