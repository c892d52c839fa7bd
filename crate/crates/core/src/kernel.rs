//! Blocked implicit-GEMM convolution.
//!
//! The problem is first padded so that every block is full: the map gets a
//! physical zero apron, the batch is widened to a multiple of `bm`, the filter
//! bank to a multiple of `bn` filters and `kt` reduction rows, and an all-zero
//! region is appended to the map for the K-tail offsets. Each block then runs
//! a branch-free GEMM whose A operand is gathered through the offset table.

use rayon::prelude::*;

use crate::counter::{NoCount, OpCounter, OpCounts};
use crate::error::{ConvError, Result};
use crate::layout::{zero_pad_batch, FilterTensor, MapTensor};
use crate::offsets::{BlockingConfig, OffsetTable, PaddedGeometry};
use crate::plan::{BlockDescriptor, BlockPlan};
use crate::shape::ConvShape;

/// Operands widened to whole blocks. Every padding cell is exactly zero.
#[derive(Debug, Clone)]
pub struct PaddedProblem {
    pub geometry: PaddedGeometry,
    /// Padded CHWN map followed by `zero_tail_len` zeros.
    map: Vec<f32>,
    /// `k_padded x no_padded`, filter index innermost.
    filters: Vec<f32>,
}

impl PaddedProblem {
    pub fn new(
        map: &MapTensor,
        filters: &FilterTensor,
        shape: &ConvShape,
        blocking: &BlockingConfig,
    ) -> Result<Self> {
        map.check_input(shape)?;
        filters.check_for(shape)?;
        let geometry = PaddedGeometry::new(shape, blocking)?;
        let mut padded_map = zero_pad_batch(map, shape.pad, geometry.nb_padded).into_vec();
        debug_assert_eq!(padded_map.len(), geometry.map_len);
        padded_map.resize(geometry.map_len + geometry.zero_tail_len, 0.0);

        let mut padded_filters = vec![0f32; geometry.k_padded * geometry.no_padded];
        for (r, row) in filters.data().chunks_exact(shape.no).enumerate() {
            padded_filters[r * geometry.no_padded..][..shape.no].copy_from_slice(row);
        }
        Ok(PaddedProblem { geometry, map: padded_map, filters: padded_filters })
    }

    pub fn map_data(&self) -> &[f32] {
        &self.map
    }

    pub fn filter_data(&self) -> &[f32] {
        &self.filters
    }
}

/// Computes one `bm x bn` accumulator tile (row-major, batch rows) without
/// applying alpha.
pub fn block_matmul_tile(
    problem: &PaddedProblem,
    offsets: &OffsetTable,
    block: &BlockDescriptor,
    blocking: &BlockingConfig,
) -> Vec<f32> {
    let mut tile = vec![0f32; blocking.bm * blocking.bn];
    compute_tile(problem, offsets, block, blocking, &mut tile, &mut NoCount);
    tile
}

fn compute_tile<C: OpCounter>(
    problem: &PaddedProblem,
    offsets: &OffsetTable,
    block: &BlockDescriptor,
    blocking: &BlockingConfig,
    tile: &mut [f32],
    counter: &mut C,
) {
    debug_assert_eq!(offsets.entries.len() % blocking.kt, 0);
    let args = TileArgs {
        map: &problem.map,
        filters: &problem.filters,
        offsets: &offsets.entries,
        base: block.patch_base,
        filter_stride: problem.geometry.no_padded,
        filter_start: block.filter_block * blocking.bn,
        bm: blocking.bm,
        bn: blocking.bn,
        kt: blocking.kt,
    };
    match (blocking.rm, blocking.rn) {
        (8, 8) => tile_8x8(&args, tile, counter),
        (1, 1) => tile_fixed::<1, 1, false, C>(&args, tile, counter),
        (rm, rn) => tile_dynamic(&args, rm, rn, tile, counter),
    }
}

struct TileArgs<'a> {
    map: &'a [f32],
    filters: &'a [f32],
    offsets: &'a [usize],
    base: usize,
    filter_stride: usize,
    filter_start: usize,
    bm: usize,
    bn: usize,
    kt: usize,
}

/// Whether the 8x8 path uses fused multiply-add. Fixed per process, so every
/// block of every run on one machine rounds identically.
pub fn uses_fused_multiply_add() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

fn tile_8x8<C: OpCounter>(args: &TileArgs, tile: &mut [f32], counter: &mut C) {
    #[cfg(target_arch = "x86_64")]
    {
        if uses_fused_multiply_add() {
            // SAFETY: both features were detected at runtime.
            unsafe { tile_8x8_avx2_fma(args, tile, counter) };
            return;
        }
    }
    tile_fixed::<8, 8, false, C>(args, tile, counter)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn tile_8x8_avx2_fma<C: OpCounter>(args: &TileArgs, tile: &mut [f32], counter: &mut C) {
    tile_fixed::<8, 8, true, C>(args, tile, counter)
}

/// K-tile outer, `RM x RN` accumulator sub-blocks inner. Each tile element
/// accumulates its products in ascending reduction-row order.
#[inline(always)]
fn tile_fixed<const RM: usize, const RN: usize, const FUSED: bool, C: OpCounter>(
    args: &TileArgs,
    tile: &mut [f32],
    counter: &mut C,
) {
    let (bm, bn, kt) = (args.bm, args.bn, args.kt);
    tile.fill(0.0);
    for (t, chunk) in args.offsets.chunks_exact(kt).enumerate() {
        let row0 = t * kt;
        for m0 in (0..bm).step_by(RM) {
            for n0 in (0..bn).step_by(RN) {
                let mut acc = [[0f32; RN]; RM];
                for (m, row) in acc.iter_mut().enumerate() {
                    row.copy_from_slice(&tile[(m0 + m) * bn + n0..][..RN]);
                }
                for (j, &off) in chunk.iter().enumerate() {
                    let a: &[f32; RM] = args.map[args.base + off + m0..][..RM].try_into().unwrap();
                    let b: &[f32; RN] = args.filters
                        [(row0 + j) * args.filter_stride + args.filter_start + n0..][..RN]
                        .try_into()
                        .unwrap();
                    for m in 0..RM {
                        for n in 0..RN {
                            acc[m][n] = if FUSED { a[m].mul_add(b[n], acc[m][n]) } else { acc[m][n] + a[m] * b[n] };
                        }
                    }
                }
                counter.macs((RM * RN * kt) as u64);
                for (m, row) in acc.iter().enumerate() {
                    tile[(m0 + m) * bn + n0..][..RN].copy_from_slice(row);
                }
            }
        }
    }
}

fn tile_dynamic<C: OpCounter>(args: &TileArgs, rm: usize, rn: usize, tile: &mut [f32], counter: &mut C) {
    let (bm, bn, kt) = (args.bm, args.bn, args.kt);
    tile.fill(0.0);
    let mut acc = vec![0f32; rm * rn];
    for (t, chunk) in args.offsets.chunks_exact(kt).enumerate() {
        let row0 = t * kt;
        for m0 in (0..bm).step_by(rm) {
            for n0 in (0..bn).step_by(rn) {
                for m in 0..rm {
                    acc[m * rn..][..rn].copy_from_slice(&tile[(m0 + m) * bn + n0..][..rn]);
                }
                for (j, &off) in chunk.iter().enumerate() {
                    let a = &args.map[args.base + off + m0..][..rm];
                    let b = &args.filters[(row0 + j) * args.filter_stride + args.filter_start + n0..][..rn];
                    for (m, &av) in a.iter().enumerate() {
                        for (slot, &bv) in acc[m * rn..][..rn].iter_mut().zip(b) {
                            *slot += av * bv;
                        }
                    }
                }
                counter.macs((rm * rn * kt) as u64);
                for m in 0..rm {
                    tile[(m0 + m) * bn + n0..][..rn].copy_from_slice(&acc[m * rn..][..rn]);
                }
            }
        }
    }
}

// Scratch budget (in floats) for one wave of tiles between scatters.
const WAVE_ELEMS: usize = 1 << 20;

/// A convolution ready to run: padded operands, offset table and block plan.
///
/// Construction is the reusable setup; [`PreparedConv::execute`] is the
/// kernel proper and is what benchmarks time.
#[derive(Debug, Clone)]
pub struct PreparedConv {
    pub shape: ConvShape,
    pub blocking: BlockingConfig,
    pub problem: PaddedProblem,
    pub offsets: OffsetTable,
    pub plan: BlockPlan,
}

impl PreparedConv {
    pub fn new(
        map: &MapTensor,
        filters: &FilterTensor,
        shape: &ConvShape,
        blocking: &BlockingConfig,
    ) -> Result<Self> {
        let problem = PaddedProblem::new(map, filters, shape, blocking)?;
        let offsets = OffsetTable::from_geometry(&problem.geometry, shape.sk);
        let plan = BlockPlan::from_geometry(&problem.geometry, *blocking);
        Ok(PreparedConv { shape: *shape, blocking: *blocking, problem, offsets, plan })
    }

    /// Runs every block on the current rayon pool.
    pub fn execute(&self) -> MapTensor {
        self.run::<NoCount>().0
    }

    /// [`execute`](Self::execute), also returning the MACs and alpha
    /// scalings the tile loops performed, padding included.
    pub fn execute_counted(&self) -> (MapTensor, OpCounts) {
        self.run::<OpCounts>()
    }

    fn run<C>(&self) -> (MapTensor, C)
    where
        C: OpCounter + Default + Send + std::ops::Add<Output = C>,
    {
        let geom = &self.problem.geometry;
        let (bm, bn) = (self.blocking.bm, self.blocking.bn);
        let tile_len = bm * bn;
        let alpha = self.shape.alpha;
        let mut out = MapTensor::zeros(geom.no, geom.ho, geom.wo, geom.nb);
        let wave = (WAVE_ELEMS / tile_len).max(1).min(self.plan.len());
        let mut scratch = vec![0f32; wave * tile_len];
        let mut total = C::default();

        for blocks in self.plan.blocks.chunks(wave) {
            let scratch = &mut scratch[..blocks.len() * tile_len];
            let counts = scratch
                .par_chunks_mut(tile_len)
                .zip(blocks.par_iter())
                .map(|(tile, block)| {
                    let mut counter = C::default();
                    compute_tile(&self.problem, &self.offsets, block, &self.blocking, tile, &mut counter);
                    for v in tile.iter_mut() {
                        *v *= alpha;
                    }
                    counter.scales(tile_len as u64);
                    counter
                })
                .reduce(C::default, |a, b| a + b);
            total = total + counts;

            let out_data = out.data_mut();
            for (tile, block) in scratch.chunks_exact(tile_len).zip(blocks) {
                let f0 = self.plan.filter_start(block);
                let b0 = self.plan.batch_start(block);
                let rows = bm.min(geom.nb - b0);
                for n in 0..bn.min(geom.no - f0) {
                    let dst = ((f0 + n) * geom.ho + block.oy) * geom.wo + block.ox;
                    let dst = &mut out_data[dst * geom.nb + b0..][..rows];
                    for (m, d) in dst.iter_mut().enumerate() {
                        *d = tile[m * bn + n];
                    }
                }
            }
        }
        (out, total)
    }
}

/// Pads, plans, runs all blocks on the current rayon pool, scales by alpha
/// and crops back to `(no, ho, wo, nb)`.
pub fn conv_blocked(
    map: &MapTensor,
    filters: &FilterTensor,
    shape: &ConvShape,
    blocking: &BlockingConfig,
) -> Result<MapTensor> {
    Ok(PreparedConv::new(map, filters, shape, blocking)?.execute())
}

/// Runs `f` inside a dedicated rayon pool with `threads` workers.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| ConvError::InvalidShape(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::conv_reference;

    fn pseudo(seed: u32) -> impl FnMut() -> f32 {
        let mut state = seed.wrapping_mul(747796405).wrapping_add(2891336453);
        move || {
            state ^= state << 13;
            state ^= state >> 17;
            state ^= state << 5;
            (state >> 8) as f32 / (1u32 << 24) as f32 * 2.0 - 1.0
        }
    }

    fn random_problem(shape: &ConvShape, seed: u32) -> (MapTensor, FilterTensor) {
        let mut next = pseudo(seed);
        let map = MapTensor::from_fn(shape.nc, shape.hi, shape.wi, shape.nb, |_, _, _, _| next());
        let filters = FilterTensor::from_fn(shape, |_, _, _, _| next());
        (map, filters)
    }

    fn max_rel_err(got: &MapTensor, want: &MapTensor) -> f32 {
        let scale = want.data().iter().fold(0f32, |m, v| m.max(v.abs())).max(f32::MIN_POSITIVE);
        got.data().iter().zip(want.data()).fold(0f32, |m, (a, b)| m.max((a - b).abs())) / scale
    }

    #[test]
    fn zero_filters_give_zero_tile() {
        let shape = ConvShape::new(5, 6, 6, 2, 3, 3, 1, 1).unwrap();
        let (map, _) = random_problem(&shape, 1);
        let filters = FilterTensor::zeros(shape.k(), shape.no);
        let blocking = BlockingConfig::new(8, 8, 4, 8, 8).unwrap();
        let prepared = PreparedConv::new(&map, &filters, &shape, &blocking).unwrap();
        for block in &prepared.plan.blocks {
            let tile = block_matmul_tile(&prepared.problem, &prepared.offsets, block, &blocking);
            assert!(tile.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn unit_blocking_is_a_dot_product() {
        let shape = ConvShape::new(3, 7, 5, 2, 4, 3, 2, 1).unwrap();
        let (map, filters) = random_problem(&shape, 2);
        let want = conv_reference(&map, &filters, &shape).unwrap();
        let blocking = BlockingConfig::unit();
        let prepared = PreparedConv::new(&map, &filters, &shape, &blocking).unwrap();
        for block in &prepared.plan.blocks {
            let tile = block_matmul_tile(&prepared.problem, &prepared.offsets, block, &blocking);
            let expect = want.get(block.filter_block, block.oy, block.ox, block.batch_block);
            assert!((tile[0] - expect).abs() <= 1e-5 * expect.abs().max(1.0));
        }
    }

    #[test]
    fn blocked_matches_reference_with_ragged_dims() {
        let shape = ConvShape::new(11, 9, 8, 3, 13, 3, 2, 2).unwrap().with_alpha(0.5);
        let (map, filters) = random_problem(&shape, 3);
        let want = conv_reference(&map, &filters, &shape).unwrap();
        for blocking in [
            BlockingConfig::default(),
            BlockingConfig::narrow_filters(),
            BlockingConfig::new(4, 8, 3, 2, 4).unwrap(),
            BlockingConfig::unit(),
        ] {
            let got = conv_blocked(&map, &filters, &shape, &blocking).unwrap();
            assert_eq!(got.dims(), want.dims());
            assert!(max_rel_err(&got, &want) <= 1e-4, "{blocking:?}");
        }
    }

    #[test]
    fn delta_filter_is_bit_exact() {
        let shape = ConvShape::new(5, 6, 4, 1, 1, 1, 1, 0).unwrap();
        let (map, _) = random_problem(&shape, 4);
        let filters = FilterTensor::from_vec(1, 1, vec![1.0]).unwrap();
        let got = conv_blocked(&map, &filters, &shape, &BlockingConfig::default()).unwrap();
        assert_eq!(got, map);
        assert_eq!(got, conv_reference(&map, &filters, &shape).unwrap());
    }

    #[test]
    fn counted_execution_counts_padded_work() {
        let shape = ConvShape::new(5, 7, 7, 3, 6, 3, 1, 1).unwrap();
        let (map, filters) = random_problem(&shape, 5);
        let blocking = BlockingConfig::new(4, 4, 8, 2, 2).unwrap();
        let prepared = PreparedConv::new(&map, &filters, &shape, &blocking).unwrap();
        let (out, counts) = prepared.execute_counted();
        assert_eq!(out, prepared.execute());
        let pixels = (shape.wo() * shape.ho()) as u64;
        // nb 5 -> 8, no 6 -> 8, k 27 -> 32
        assert_eq!(counts.macs, pixels * 8 * 8 * 32);
        assert_eq!(counts.scales, pixels * 8 * 8);
    }

    #[test]
    fn thread_pools_agree_bitwise() {
        let shape = ConvShape::new(9, 10, 10, 4, 20, 3, 1, 1).unwrap();
        let (map, filters) = random_problem(&shape, 6);
        let blocking = BlockingConfig::new(8, 8, 8, 8, 8).unwrap();
        let one = with_threads(1, || conv_blocked(&map, &filters, &shape, &blocking)).unwrap().unwrap();
        let four = with_threads(4, || conv_blocked(&map, &filters, &shape, &blocking)).unwrap().unwrap();
        assert_eq!(one, four);
    }

    #[test]
    fn padded_filters_are_zero_outside_bank() {
        let shape = ConvShape::new(2, 4, 4, 1, 3, 3, 1, 0).unwrap();
        let (map, filters) = random_problem(&shape, 7);
        let problem = PaddedProblem::new(&map, &filters, &shape, &BlockingConfig::new(2, 4, 4, 1, 1).unwrap()).unwrap();
        let g = problem.geometry;
        assert_eq!((g.k_padded, g.no_padded), (12, 4));
        for r in 0..g.k_padded {
            for f in 0..g.no_padded {
                let v = problem.filter_data()[r * g.no_padded + f];
                if r < 9 && f < 3 {
                    assert_eq!(v, filters.get(r, f));
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
        assert!(problem.map_data()[g.map_len..].iter().all(|&v| v == 0.0));
    }
}
