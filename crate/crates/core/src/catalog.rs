//! Benchmark layer catalog: the five convolution layers of Alexnet v.2 and of
//! Overfeat at minibatch 128.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ConvError, Result};
use crate::shape::ConvShape;

/// The shipped catalog file. [`layer_catalog`] serializes to exactly these bytes.
pub const DEFAULT_CATALOG_JSON: &str = include_str!("../data/layer_catalog.json");

#[derive(Debug, Clone, PartialEq)]
pub struct LayerCatalogEntry {
    pub network: String,
    pub layer: String,
    pub shape: ConvShape,
}

impl LayerCatalogEntry {
    /// `network/layer`, e.g. `alexnet/conv2`.
    pub fn id(&self) -> String {
        format!("{}/{}", self.network, self.layer)
    }
}

/// On-disk form of one catalog entry. Alpha is not stored and loads as 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogRecord {
    pub network: String,
    pub layer: String,
    pub nb: usize,
    pub wi: usize,
    pub hi: usize,
    pub nc: usize,
    pub no: usize,
    pub sk: usize,
    pub stride: usize,
    pub pad: usize,
}

impl CatalogRecord {
    fn into_entry(self) -> Result<LayerCatalogEntry> {
        let shape = ConvShape::new(
            self.nb, self.wi, self.hi, self.nc, self.no, self.sk, self.stride, self.pad,
        )
        .map_err(|e| ConvError::Catalog(format!("{}/{}: {e}", self.network, self.layer)))?;
        Ok(LayerCatalogEntry { network: self.network, layer: self.layer, shape })
    }

    fn from_entry(entry: &LayerCatalogEntry) -> Self {
        let s = &entry.shape;
        CatalogRecord {
            network: entry.network.clone(),
            layer: entry.layer.clone(),
            nb: s.nb,
            wi: s.wi,
            hi: s.hi,
            nc: s.nc,
            no: s.no,
            sk: s.sk,
            stride: s.stride,
            pad: s.pad,
        }
    }
}

/// One row of the published layer table, before strides and pads are chosen.
#[derive(Debug, Clone, Copy)]
pub struct TableRow {
    pub network: &'static str,
    pub layer: &'static str,
    /// `(w, h, channels)`
    pub input: (usize, usize, usize),
    pub output: (usize, usize, usize),
    pub kernel: usize,
}

const fn row(
    network: &'static str,
    layer: &'static str,
    input: (usize, usize, usize),
    output: (usize, usize, usize),
    kernel: usize,
) -> TableRow {
    TableRow { network, layer, input, output, kernel }
}

pub const TABLE_ROWS: [TableRow; 10] = [
    row("alexnet", "conv1", (224, 224, 3), (55, 55, 64), 11),
    row("alexnet", "conv2", (27, 27, 64), (27, 27, 192), 5),
    row("alexnet", "conv3", (13, 13, 192), (13, 13, 384), 3),
    row("alexnet", "conv4", (13, 13, 384), (13, 13, 256), 3),
    row("alexnet", "conv5", (13, 13, 256), (13, 13, 256), 3),
    row("overfeat", "L1", (231, 231, 3), (56, 56, 96), 11),
    row("overfeat", "L2", (24, 24, 96), (20, 20, 256), 5),
    row("overfeat", "L3", (12, 12, 256), (12, 12, 512), 3),
    row("overfeat", "L4", (12, 12, 512), (12, 12, 1024), 3),
    row("overfeat", "L5", (12, 12, 1024), (12, 12, 1024), 3),
];

// (stride, pad) per row; the table does not print them.
const STRIDE_PAD: [(usize, usize); 10] =
    [(4, 2), (1, 2), (1, 1), (1, 1), (1, 1), (4, 0), (1, 0), (1, 1), (1, 1), (1, 1)];

pub const CATALOG_MINIBATCH: usize = 128;

/// The built-in catalog, in table order.
pub fn layer_catalog() -> Vec<LayerCatalogEntry> {
    TABLE_ROWS
        .iter()
        .zip(STRIDE_PAD)
        .map(|(r, (stride, pad))| {
            let (wi, hi, nc) = r.input;
            let shape = ConvShape::new(CATALOG_MINIBATCH, wi, hi, nc, r.output.2, r.kernel, stride, pad)
                .expect("built-in catalog shapes are valid");
            LayerCatalogEntry { network: r.network.into(), layer: r.layer.into(), shape }
        })
        .collect()
}

/// Checks every entry's derived output against the published table row with the same id.
pub fn check_against_table(entries: &[LayerCatalogEntry]) -> Result<()> {
    for entry in entries {
        let Some(row) = TABLE_ROWS
            .iter()
            .find(|r| r.network == entry.network && r.layer == entry.layer)
        else {
            continue;
        };
        let (wo, ho) = entry.shape.output_dims()?;
        if (wo, ho, entry.shape.no) != row.output {
            return Err(ConvError::Catalog(format!(
                "{}: derived output {wo}x{ho}x{} but table says {:?}",
                entry.id(),
                entry.shape.no,
                row.output
            )));
        }
    }
    Ok(())
}

pub fn catalog_to_json(entries: &[LayerCatalogEntry]) -> String {
    let records: Vec<CatalogRecord> = entries.iter().map(CatalogRecord::from_entry).collect();
    let mut text = serde_json::to_string_pretty(&records).expect("catalog serializes");
    text.push('\n');
    text
}

pub fn catalog_from_json(text: &str) -> Result<Vec<LayerCatalogEntry>> {
    let records: Vec<CatalogRecord> =
        serde_json::from_str(text).map_err(|e| ConvError::Catalog(e.to_string()))?;
    records.into_iter().map(CatalogRecord::into_entry).collect()
}

pub fn load_catalog(path: &Path) -> Result<Vec<LayerCatalogEntry>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConvError::Catalog(format!("{}: {e}", path.display())))?;
    catalog_from_json(&text)
}

/// Looks up entries by id (`alexnet/conv2`) or the literal `all`.
pub fn select_layers(catalog: &[LayerCatalogEntry], names: &[String]) -> Result<Vec<LayerCatalogEntry>> {
    if names.iter().any(|n| n == "all") {
        return Ok(catalog.to_vec());
    }
    names
        .iter()
        .map(|name| {
            catalog
                .iter()
                .find(|e| e.id() == *name)
                .cloned()
                .ok_or_else(|| ConvError::Catalog(format!("unknown layer {name:?}")))
        })
        .collect()
}
