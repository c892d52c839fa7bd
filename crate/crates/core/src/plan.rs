//! Enumeration of independent output tiles.

use crate::error::Result;
use crate::offsets::{BlockingConfig, PaddedGeometry};
use crate::shape::ConvShape;

/// One unit of parallel work: a `bm x bn` batch x filter tile at one output pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockDescriptor {
    pub ox: usize,
    pub oy: usize,
    pub filter_block: usize,
    pub batch_block: usize,
    /// Offset of this tile's first gathered element in the padded map.
    pub patch_base: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPlan {
    pub blocking: BlockingConfig,
    pub filter_blocks: usize,
    pub batch_blocks: usize,
    pub blocks: Vec<BlockDescriptor>,
}

impl BlockPlan {
    pub fn from_geometry(geom: &PaddedGeometry, blocking: BlockingConfig) -> Self {
        let filter_blocks = geom.no_padded / blocking.bn;
        let batch_blocks = geom.nb_padded / blocking.bm;
        let mut blocks = Vec::with_capacity(geom.wo * geom.ho * filter_blocks * batch_blocks);
        for oy in 0..geom.ho {
            for ox in 0..geom.wo {
                let origin = geom.patch_origin(ox, oy);
                for filter_block in 0..filter_blocks {
                    for batch_block in 0..batch_blocks {
                        blocks.push(BlockDescriptor {
                            ox,
                            oy,
                            filter_block,
                            batch_block,
                            patch_base: origin + batch_block * blocking.bm,
                        });
                    }
                }
            }
        }
        BlockPlan { blocking, filter_blocks, batch_blocks, blocks }
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    #[inline]
    pub fn filter_start(&self, block: &BlockDescriptor) -> usize {
        block.filter_block * self.blocking.bn
    }

    #[inline]
    pub fn batch_start(&self, block: &BlockDescriptor) -> usize {
        block.batch_block * self.blocking.bm
    }
}

pub fn build_block_plan(shape: &ConvShape, blocking: &BlockingConfig) -> Result<BlockPlan> {
    let geom = PaddedGeometry::new(shape, blocking)?;
    Ok(BlockPlan::from_geometry(&geom, *blocking))
}
