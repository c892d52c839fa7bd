use std::time::{Duration, Instant};

use gatherconv::{
    conv_blocked, conv_reference, relative_linf_error, with_threads, EfficiencyReport, LayerCatalogEntry,
    MapTensor, PreparedConv,
};
use log::info;
use sha2::{Digest, Sha256};

use crate::config::{RunConfig, DEFAULT_VERIFY_MINIBATCH};
use crate::inputs::layer_operands;
use crate::Result;

/// Relative L-infinity tolerance of the blocked kernel against the 64-bit reference.
pub const VERIFY_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerVerification {
    pub id: String,
    pub max_rel_err: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub tolerance: f64,
    pub layers: Vec<LayerVerification>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.layers.iter().all(|l| l.passed)
    }

    /// The failing layer with the largest error.
    pub fn worst_failure(&self) -> Option<&LayerVerification> {
        self.layers
            .iter()
            .filter(|l| !l.passed)
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

/// Runs the blocked kernel and the reference on seeded operands for every
/// selected layer. Minibatch defaults to 8 unless overridden.
pub fn run_verify(config: &RunConfig) -> Result<VerifyReport> {
    let layers = config.selected_layers(Some(DEFAULT_VERIFY_MINIBATCH))?;
    let mut results = Vec::with_capacity(layers.len());
    for entry in &layers {
        let id = entry.id();
        let (map, mut filters) = layer_operands(&entry.shape, &id, config.seed);
        let want = with_threads(config.threads, || conv_reference(&map, &filters, &entry.shape))??;
        if config.fault_layer.as_deref() == Some(id.as_str()) {
            let w = filters.get(0, 0);
            filters.set(0, 0, w + 1.0);
        }
        let got = with_threads(config.threads, || conv_blocked(&map, &filters, &entry.shape, &config.blocking))??;
        let err = relative_linf_error(&got, &want)?;
        info!("verify {id}: max relative error {err:.3e}");
        results.push(LayerVerification { id, max_rel_err: err, passed: err <= VERIFY_TOLERANCE });
    }
    Ok(VerifyReport { tolerance: VERIFY_TOLERANCE, layers: results })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRun {
    pub reports: Vec<EfficiencyReport>,
    /// SHA-256 of each layer's output tensor (little-endian f32 bits), in report order.
    pub checksums: Vec<String>,
}

pub fn tensor_checksum(map: &MapTensor) -> String {
    let mut hasher = Sha256::new();
    for v in map.data() {
        hasher.update(v.to_le_bytes());
    }
    hex::encode(hasher.finalize())
}

fn bench_layer(entry: &LayerCatalogEntry, config: &RunConfig) -> Result<(Duration, MapTensor)> {
    let id = entry.id();
    let (map, filters) = layer_operands(&entry.shape, &id, config.seed);
    let prepared = PreparedConv::new(&map, &filters, &entry.shape, &config.blocking)?;
    let (best, out) = with_threads(config.threads, || {
        let mut out = prepared.execute();
        let mut best = Duration::MAX;
        for _ in 0..config.repeat {
            let start = Instant::now();
            out = std::hint::black_box(prepared.execute());
            best = best.min(start.elapsed());
        }
        (best, out)
    })?;
    Ok((best, out))
}

/// Warm-up plus `repeat` timed kernel runs per layer; reports the best time.
/// Setup (padding, offset table, plan) is not timed.
pub fn run_bench(config: &RunConfig) -> Result<BenchRun> {
    let device = config.load_device()?;
    let layers = config.selected_layers(None)?;
    let mut reports = Vec::with_capacity(layers.len());
    let mut checksums = Vec::with_capacity(layers.len());
    for entry in &layers {
        let (elapsed, out) = bench_layer(entry, config)?;
        let report = EfficiencyReport::new(
            &entry.network,
            &entry.layer,
            &entry.shape,
            &config.blocking,
            elapsed,
            &device,
            config.threads,
        )?;
        info!("bench {}: {:?}, ce {:.4}", entry.id(), elapsed, report.ce);
        reports.push(report);
        checksums.push(tensor_checksum(&out));
    }
    Ok(BenchRun { reports, checksums })
}
