//! Blocking parameters, padded problem geometry, and the gather-offset table.

use serde::{Deserialize, Serialize};

use crate::error::{ConvError, Result};
use crate::shape::ConvShape;

/// Tiling parameters of the blocked kernel.
///
/// `bm x bn` is the batch x filter output tile computed per block, `kt` the
/// number of reduction columns consumed per K-loop iteration, and `rm x rn`
/// the accumulator sub-block updated as a unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockingConfig {
    pub bm: usize,
    pub bn: usize,
    pub kt: usize,
    pub rm: usize,
    pub rn: usize,
}

impl Default for BlockingConfig {
    fn default() -> Self {
        BlockingConfig { bm: 64, bn: 64, kt: 8, rm: 8, rn: 8 }
    }
}

impl BlockingConfig {
    pub fn new(bm: usize, bn: usize, kt: usize, rm: usize, rn: usize) -> Result<Self> {
        let cfg = BlockingConfig { bm, bn, kt, rm, rn };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The 64x32 variant for filter counts that are not multiples of 64.
    pub fn narrow_filters() -> Self {
        BlockingConfig { bn: 32, ..Self::default() }
    }

    /// Default blocking with the batch block shrunk to the minibatch rounded
    /// up to the register tile, for minibatches smaller than 64.
    pub fn for_minibatch(nb: usize) -> Self {
        let d = Self::default();
        BlockingConfig { bm: round_up(nb.max(1), d.rm).min(d.bm), ..d }
    }

    /// Every dimension 1: no padding at all, one scalar per block.
    pub fn unit() -> Self {
        BlockingConfig { bm: 1, bn: 1, kt: 1, rm: 1, rn: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bm == 0 || self.bn == 0 || self.kt == 0 || self.rm == 0 || self.rn == 0 {
            return Err(ConvError::InvalidBlocking(format!("all sizes must be >= 1: {self:?}")));
        }
        if self.bm % self.rm != 0 {
            return Err(ConvError::InvalidBlocking(format!(
                "bm={} is not a multiple of rm={}",
                self.bm, self.rm
            )));
        }
        if self.bn % self.rn != 0 {
            return Err(ConvError::InvalidBlocking(format!(
                "bn={} is not a multiple of rn={}",
                self.bn, self.rn
            )));
        }
        Ok(())
    }
}

/// `x` rounded up to a multiple of `m`.
#[inline]
pub fn round_up(x: usize, m: usize) -> usize {
    x.div_ceil(m) * m
}

/// Sizes of the zero-padded problem a blocked kernel actually computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PaddedGeometry {
    pub nc: usize,
    /// Map height and width including the apron.
    pub hp: usize,
    pub wp: usize,
    pub nb: usize,
    pub nb_padded: usize,
    pub no: usize,
    pub no_padded: usize,
    pub k: usize,
    pub k_padded: usize,
    pub wo: usize,
    pub ho: usize,
    pub stride: usize,
    /// Length of the CHWN padded map proper.
    pub map_len: usize,
    /// Length of the all-zero region appended after the map.
    pub zero_tail_len: usize,
}

impl PaddedGeometry {
    pub fn new(shape: &ConvShape, blocking: &BlockingConfig) -> Result<Self> {
        shape.validate()?;
        blocking.validate()?;
        let (wo, ho) = shape.output_dims()?;
        let (hp, wp) = (shape.padded_height(), shape.padded_width());
        let nb_padded = round_up(shape.nb, blocking.bm);
        let map_len = shape.nc * hp * wp * nb_padded;
        // Any patch base plus the zero-row offset plus a tile row must stay in the tail.
        let max_patch_origin = (ho - 1) * shape.stride * wp + (wo - 1) * shape.stride;
        let zero_tail_len = (max_patch_origin + 1) * nb_padded;
        Ok(PaddedGeometry {
            nc: shape.nc,
            hp,
            wp,
            nb: shape.nb,
            nb_padded,
            no: shape.no,
            no_padded: round_up(shape.no, blocking.bn),
            k: shape.k(),
            k_padded: round_up(shape.k(), blocking.kt),
            wo,
            ho,
            stride: shape.stride,
            map_len,
            zero_tail_len,
        })
    }

    /// Offset (in elements) of the patch origin for output pixel `(ox, oy)`,
    /// batch element 0.
    #[inline]
    pub fn patch_origin(&self, ox: usize, oy: usize) -> usize {
        (oy * self.stride * self.wp + ox * self.stride) * self.nb_padded
    }
}

/// Precomputed linear gather offsets, one per reduction row.
///
/// Rows `i < k` enumerate taps `(c, ky, kx)` with the channel outermost and
/// hold `((c * hp + ky) * wp + kx) * nb_padded`. The K-tail rows up to
/// `k_padded` all point at `zero_row_offset`, which lands in the zero region
/// appended to the padded map for every patch origin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OffsetTable {
    pub k: usize,
    pub k_padded: usize,
    pub entries: Vec<usize>,
    pub zero_row_offset: usize,
}

impl OffsetTable {
    pub fn from_geometry(geom: &PaddedGeometry, sk: usize) -> Self {
        let mut entries = Vec::with_capacity(geom.k_padded);
        for c in 0..geom.nc {
            for ky in 0..sk {
                for kx in 0..sk {
                    entries.push(((c * geom.hp + ky) * geom.wp + kx) * geom.nb_padded);
                }
            }
        }
        debug_assert_eq!(entries.len(), geom.k);
        let zero_row_offset = geom.map_len;
        entries.resize(geom.k_padded, zero_row_offset);
        OffsetTable { k: geom.k, k_padded: geom.k_padded, entries, zero_row_offset }
    }

    pub fn logical(&self) -> &[usize] {
        &self.entries[..self.k]
    }
}

pub fn build_offset_table(shape: &ConvShape, blocking: &BlockingConfig) -> Result<OffsetTable> {
    let geom = PaddedGeometry::new(shape, blocking)?;
    Ok(OffsetTable::from_geometry(&geom, shape.sk))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::layer_catalog;
    use proptest::prelude::*;

    #[test]
    fn blocking_validation() {
        assert!(BlockingConfig::default().validate().is_ok());
        assert!(BlockingConfig::narrow_filters().validate().is_ok());
        assert!(BlockingConfig::new(64, 64, 0, 8, 8).is_err());
        assert!(BlockingConfig::new(60, 64, 8, 8, 8).is_err());
        assert!(BlockingConfig::new(64, 36, 8, 8, 8).is_err());
        assert!(BlockingConfig::new(12, 6, 3, 4, 3).is_ok());
    }

    #[test]
    fn small_minibatch_blocking() {
        assert_eq!(BlockingConfig::for_minibatch(8).bm, 8);
        assert_eq!(BlockingConfig::for_minibatch(3).bm, 8);
        assert_eq!(BlockingConfig::for_minibatch(20).bm, 24);
        assert_eq!(BlockingConfig::for_minibatch(128), BlockingConfig::default());
        assert!(BlockingConfig::for_minibatch(0).validate().is_ok());
    }

    #[test]
    fn single_tap() {
        let shape = ConvShape::new(3, 6, 6, 1, 2, 1, 1, 0).unwrap();
        let table = build_offset_table(&shape, &BlockingConfig::unit()).unwrap();
        assert_eq!(table.logical(), &[0]);
        assert_eq!(table.k_padded, 1);
    }

    #[test]
    fn three_by_three_on_width_five() {
        // wi=5, pad=0 -> wp=5; nb=2 with bm=2 keeps the batch stride at 2.
        let shape = ConvShape::new(2, 5, 5, 1, 1, 3, 1, 0).unwrap();
        let blocking = BlockingConfig::new(2, 1, 1, 2, 1).unwrap();
        let table = build_offset_table(&shape, &blocking).unwrap();
        assert_eq!(table.entries, vec![0, 2, 4, 10, 12, 14, 20, 22, 24]);
    }

    #[test]
    fn alexnet_conv1_k_padding() {
        let conv1 = layer_catalog()[0].shape;
        let table = build_offset_table(&conv1, &BlockingConfig::default()).unwrap();
        assert_eq!(table.k, 363);
        assert_eq!(table.k_padded, 368);
        assert!(table.entries[363..].iter().all(|&e| e == table.zero_row_offset));
    }

    fn shapes() -> impl Strategy<Value = (ConvShape, BlockingConfig)> {
        (1usize..=9, 1usize..=12, 1usize..=12, 1usize..=4, 1usize..=9, prop::sample::select(vec![1usize, 3, 5]),
         1usize..=3, 0usize..=2, 1usize..=9)
            .prop_filter_map("valid shape", |(nb, wi, hi, nc, no, sk, stride, pad, kt)| {
                let shape = ConvShape::new(nb, wi, hi, nc, no, sk, stride, pad).ok()?;
                Some((shape, BlockingConfig::new(4, 4, kt, 2, 2).unwrap()))
            })
    }

    proptest! {
        #[test]
        fn table_invariants((shape, blocking) in shapes()) {
            let geom = PaddedGeometry::new(&shape, &blocking).unwrap();
            let table = OffsetTable::from_geometry(&geom, shape.sk);
            prop_assert_eq!(table.k, shape.k());
            prop_assert_eq!(table.k_padded % blocking.kt, 0);
            prop_assert!(table.k_padded >= table.k && table.k_padded - table.k < blocking.kt);
            prop_assert!(table.logical().windows(2).all(|w| w[0] < w[1]));
            prop_assert!(table.entries[table.k..].iter().all(|&e| e == table.zero_row_offset));
            let mut i = 0;
            for c in 0..shape.nc {
                for ky in 0..shape.sk {
                    for kx in 0..shape.sk {
                        prop_assert_eq!(table.entries[i], ((c * geom.hp + ky) * geom.wp + kx) * geom.nb_padded);
                        i += 1;
                    }
                }
            }
            // every gather of every block stays inside map + zero tail, and
            // tail gathers never touch the map proper
            let last_origin = geom.patch_origin(geom.wo - 1, geom.ho - 1) + geom.nb_padded - blocking.bm;
            let end = geom.map_len + geom.zero_tail_len;
            prop_assert!(last_origin + table.logical().last().unwrap() + blocking.bm <= geom.map_len);
            prop_assert!(last_origin + table.zero_row_offset + blocking.bm <= end);
        }
    }
}
