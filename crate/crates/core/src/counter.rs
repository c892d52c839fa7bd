//! Operation counting hooks for the convolution kernels.
//!
//! Kernels are generic over an [`OpCounter`]; [`NoCount`] compiles away, and
//! [`OpCounts`] tallies what the loop bodies actually executed.

pub trait OpCounter {
    fn macs(&mut self, n: u64);
    fn scales(&mut self, n: u64);
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoCount;

impl std::ops::Add for NoCount {
    type Output = NoCount;
    fn add(self, _: NoCount) -> NoCount {
        NoCount
    }
}

impl OpCounter for NoCount {
    #[inline(always)]
    fn macs(&mut self, _: u64) {}
    #[inline(always)]
    fn scales(&mut self, _: u64) {}
}

/// Multiply-accumulates and output scalings executed by a kernel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub macs: u64,
    pub scales: u64,
}

impl OpCounts {
    /// Two FLOPs per MAC, two per output scaling (the `+1` term of the complexity formula).
    pub fn flops(&self) -> u64 {
        2 * (self.macs + self.scales)
    }
}

impl std::ops::Add for OpCounts {
    type Output = OpCounts;
    fn add(self, rhs: OpCounts) -> OpCounts {
        OpCounts { macs: self.macs + rhs.macs, scales: self.scales + rhs.scales }
    }
}

impl std::iter::Sum for OpCounts {
    fn sum<I: Iterator<Item = OpCounts>>(iter: I) -> OpCounts {
        iter.fold(OpCounts::default(), |a, b| a + b)
    }
}

impl OpCounter for OpCounts {
    #[inline]
    fn macs(&mut self, n: u64) {
        self.macs += n;
    }
    #[inline]
    fn scales(&mut self, n: u64) {
        self.scales += n;
    }
}
