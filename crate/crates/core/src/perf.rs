//! FLOP accounting, device peak throughput and computational efficiency.
//!
//! Convolution cost is `2 * nb * wo * ho * (nc * sk^2 + 1) * no` FLOPs: one MAC
//! per tap plus the alpha scaling per output, two FLOPs each. The blocked
//! kernel performs the same count over its padded dimensions, so the ratio of
//! the two bounds the efficiency it can be credited with.

use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{ConvError, Result};
use crate::offsets::{round_up, BlockingConfig};
use crate::shape::ConvShape;

fn checked_product(factors: &[usize]) -> Result<u64> {
    factors.iter().try_fold(1u64, |acc, &f| acc.checked_mul(f as u64).ok_or(ConvError::Overflow))
}

/// FLOPs the direct algorithm needs.
pub fn flops_required(shape: &ConvShape) -> Result<u64> {
    let (wo, ho) = shape.output_dims()?;
    let taps = shape.k().checked_add(1).ok_or(ConvError::Overflow)?;
    checked_product(&[2, shape.nb, wo, ho, taps, shape.no])
}

/// FLOPs the blocked kernel executes once `nb`, `no` and `k` are padded to
/// `bm`, `bn` and `kt` multiples.
pub fn flops_performed(shape: &ConvShape, blocking: &BlockingConfig) -> Result<u64> {
    blocking.validate()?;
    let (wo, ho) = shape.output_dims()?;
    let taps = round_up(shape.k(), blocking.kt) + 1;
    checked_product(&[
        2,
        wo,
        ho,
        round_up(shape.nb, blocking.bm),
        round_up(shape.no, blocking.bn),
        taps,
    ])
}

/// Required over performed FLOPs: the best efficiency a padded run can be credited with.
pub fn utilization_ceiling(shape: &ConvShape, blocking: &BlockingConfig) -> Result<f64> {
    Ok(flops_required(shape)? as f64 / flops_performed(shape, blocking)? as f64)
}

/// An abstract machine: `fma_lanes` scalar multiply-accumulate units running at `clock_hz`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub label: String,
    pub fma_lanes: u64,
    pub clock_hz: f64,
}

impl DeviceSpec {
    pub fn new(label: impl Into<String>, fma_lanes: u64, clock_hz: f64) -> Result<Self> {
        let spec = DeviceSpec { label: label.into(), fma_lanes, clock_hz };
        spec.validate()?;
        Ok(spec)
    }

    /// GM204: 16 multiprocessors of 128 cores.
    pub fn gm204(clock_hz: f64) -> Result<Self> {
        DeviceSpec::new("NVIDIA GM204", 128 * 16, clock_hz)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fma_lanes == 0 {
            return Err(ConvError::InvalidDevice("fma_lanes must be at least 1".into()));
        }
        if !(self.clock_hz > 0.0 && self.clock_hz.is_finite()) {
            return Err(ConvError::InvalidDevice(format!("clock_hz must be positive, got {}", self.clock_hz)));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: DeviceSpec =
            serde_json::from_str(text).map_err(|e| ConvError::InvalidDevice(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConvError::InvalidDevice(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn peak_throughput(&self) -> f64 {
        peak_throughput(self)
    }
}

/// `2 * fma_lanes * clock_hz` FLOP/s.
pub fn peak_throughput(dev: &DeviceSpec) -> f64 {
    2.0 * dev.fma_lanes as f64 * dev.clock_hz
}

/// Computational efficiency: required FLOPs over what the device could have
/// executed in `elapsed`. Not capped; values above 1 point at a device spec
/// that understates the machine.
pub fn efficiency(flops_required: u64, elapsed: f64, peak: f64) -> Result<f64> {
    if !(elapsed > 0.0) {
        return Err(ConvError::NonPositive(format!("elapsed = {elapsed}")));
    }
    if !(peak > 0.0) {
        return Err(ConvError::NonPositive(format!("peak = {peak}")));
    }
    let ce = flops_required as f64 / (elapsed * peak);
    if ce > 1.0 {
        log::warn!("efficiency {ce:.3} exceeds 1; the device spec likely understates peak throughput");
    }
    Ok(ce)
}

/// Coarse instruction-mix model of one K-tile iteration: `bm*bn*kt` FMAs,
/// `(bm+bn)*kt/load_width` wide loads and `2*kt` index operations. Returns
/// the arithmetic fraction of that mix.
pub fn arithmetic_fraction_model(blocking: &BlockingConfig, load_width: f64) -> Result<f64> {
    blocking.validate()?;
    if !(load_width >= 1.0) {
        return Err(ConvError::InvalidBlocking(format!("load width must be >= 1, got {load_width}")));
    }
    let (bm, bn, kt) = (blocking.bm as f64, blocking.bn as f64, blocking.kt as f64);
    let fma = bm * bn * kt;
    let loads = (bm + bn) * kt / load_width;
    let index_ops = 2.0 * kt;
    Ok(fma / (fma + loads + index_ops))
}

/// One benchmarked layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub network: String,
    pub layer: String,
    pub flops_required: u64,
    pub flops_performed: u64,
    pub elapsed_ns: u64,
    pub peak_flops: f64,
    pub ce: f64,
    pub ceiling: f64,
    pub threads: usize,
}

impl EfficiencyReport {
    pub fn new(
        network: &str,
        layer: &str,
        shape: &ConvShape,
        blocking: &BlockingConfig,
        elapsed: Duration,
        device: &DeviceSpec,
        threads: usize,
    ) -> Result<Self> {
        let required = flops_required(shape)?;
        let performed = flops_performed(shape, blocking)?;
        // a zero-length timing would make CE infinite
        let elapsed_ns = (elapsed.as_nanos() as u64).max(1);
        let peak = peak_throughput(device);
        Ok(EfficiencyReport {
            network: network.into(),
            layer: layer.into(),
            flops_required: required,
            flops_performed: performed,
            elapsed_ns,
            peak_flops: peak,
            ce: efficiency(required, elapsed_ns as f64 * 1e-9, peak)?,
            ceiling: required as f64 / performed as f64,
            threads,
        })
    }

    pub fn id(&self) -> String {
        format!("{}/{}", self.network, self.layer)
    }

    pub fn elapsed_secs(&self) -> f64 {
        self.elapsed_ns as f64 * 1e-9
    }
}

/// `0.955` renders as `95.5%`.
pub fn format_percent(fraction: f64) -> String {
    format!("{:.1}%", fraction * 100.0)
}

/// Single-thread fused multiply-add rate in FMAs per second, from eight
/// independent 8-wide accumulator chains run for roughly `budget`; best of
/// `rounds`. Uses AVX2+FMA when the CPU has them, plain multiply-add otherwise.
pub fn measure_mac_rate(budget: Duration, rounds: usize) -> f64 {
    let mut best = 0f64;
    for _ in 0..rounds.max(1) {
        let start = Instant::now();
        let mut iters = 0u64;
        while start.elapsed() < budget {
            iters += fma_chunk();
        }
        best = best.max((iters * 64) as f64 / start.elapsed().as_secs_f64());
    }
    best
}

const FMA_CHUNK: u64 = 1 << 16;

fn fma_chunk() -> u64 {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
            // SAFETY: features detected at runtime.
            return unsafe { fma_chunk_avx2() };
        }
    }
    fma_chunk_body::<false>()
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn fma_chunk_avx2() -> u64 {
    fma_chunk_body::<true>()
}

#[inline(always)]
fn fma_chunk_body<const FUSED: bool>() -> u64 {
    let mut acc = std::hint::black_box([[1.0f32; 8]; 8]);
    let mul = std::hint::black_box([0.999_999f32; 8]);
    let add = std::hint::black_box([1e-7f32; 8]);
    for _ in 0..FMA_CHUNK {
        for a in acc.iter_mut() {
            for l in 0..8 {
                a[l] = if FUSED { a[l].mul_add(mul[l], add[l]) } else { a[l] * mul[l] + add[l] };
            }
        }
    }
    std::hint::black_box(acc);
    FMA_CHUNK
}

/// Whether a measured MAC rate is within `tolerance` (relative) of `dev`'s peak.
pub fn peak_agrees(dev: &DeviceSpec, measured_mac_rate: f64, tolerance: f64) -> bool {
    let modeled = dev.fma_lanes as f64 * dev.clock_hz;
    (measured_mac_rate - modeled).abs() <= tolerance * modeled
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::layer_catalog;

    fn catalog_shape(id: &str) -> ConvShape {
        layer_catalog().into_iter().find(|e| e.id() == id).unwrap().shape
    }

    #[test]
    fn flops_required_examples() {
        let ones = ConvShape::new(1, 1, 1, 1, 1, 1, 1, 0).unwrap();
        assert_eq!(flops_required(&ones).unwrap(), 4);
        assert_eq!(flops_required(&catalog_shape("alexnet/conv3")).unwrap(), 28_724_527_104);
    }

    #[test]
    fn flops_overflow_detected() {
        let huge = ConvShape::new(1 << 20, 1 << 12, 1 << 12, 1 << 10, 1 << 10, 1, 1, 0).unwrap();
        assert_eq!(flops_required(&huge), Err(ConvError::Overflow));
        assert_eq!(flops_performed(&huge, &BlockingConfig::default()), Err(ConvError::Overflow));
    }

    #[test]
    fn performed_equals_required_when_aligned() {
        // k = 8 * 8 = 64, nb = no = 64
        let shape = ConvShape::new(64, 10, 10, 64, 64, 1, 1, 0).unwrap();
        let b = BlockingConfig::default();
        assert_eq!(flops_performed(&shape, &b).unwrap(), flops_required(&shape).unwrap());
        assert_eq!(utilization_ceiling(&shape, &b).unwrap(), 1.0);
    }

    #[test]
    fn overfeat_l1_padding() {
        let s = catalog_shape("overfeat/L1");
        let b = BlockingConfig::default();
        let performed = flops_performed(&s, &b).unwrap();
        let required = flops_required(&s).unwrap();
        assert_eq!(performed, 2 * 56 * 56 * 128 * 128 * 369);
        assert_eq!(required, 2 * 128 * 56 * 56 * 364 * 96);
        let ceiling = utilization_ceiling(&s, &b).unwrap();
        assert!((ceiling - (364.0 * 96.0) / (369.0 * 128.0)).abs() < 1e-15);
        assert!((0.73..0.76).contains(&ceiling));
        // the 64x32 variant removes the filter padding
        let narrow = utilization_ceiling(&s, &BlockingConfig::narrow_filters()).unwrap();
        assert!((narrow - 364.0 / 369.0).abs() < 1e-15);
    }

    #[test]
    fn ceilings_over_catalog() {
        for e in layer_catalog() {
            let c = utilization_ceiling(&e.shape, &BlockingConfig::default()).unwrap();
            assert!(c > 0.0 && c <= 1.0);
            assert_eq!(utilization_ceiling(&e.shape, &BlockingConfig::unit()).unwrap(), 1.0);
            if e.id() != "overfeat/L1" {
                assert!(c >= 0.98, "{} {c}", e.id());
            }
        }
        assert!(utilization_ceiling(&catalog_shape("alexnet/conv2"), &BlockingConfig::default()).unwrap() >= 0.999);
    }

    #[test]
    fn peak_examples() {
        let gm204 = DeviceSpec::gm204(1e9).unwrap();
        assert_eq!(peak_throughput(&gm204), 4.096e12);
        assert_eq!(peak_throughput(&DeviceSpec::new("unit", 1, 1.0).unwrap()), 2.0);
        assert!(DeviceSpec::new("bad", 0, 1.0).is_err());
        assert!(DeviceSpec::new("bad", 1, 0.0).is_err());
    }

    #[test]
    fn device_json() {
        let dev = DeviceSpec::from_json(r#"{"label":"x","fma_lanes":16,"clock_hz":3.0e9}"#).unwrap();
        assert_eq!(dev.fma_lanes, 16);
        assert!(DeviceSpec::from_json(r#"{"label":"x","fma_lanes":0,"clock_hz":3.0e9}"#).is_err());
        assert!(DeviceSpec::from_json(r#"{"label":"x"}"#).is_err());
    }

    #[test]
    fn efficiency_examples() {
        let peak = 4.096e12;
        let req = 28_724_527_104u64;
        let t = req as f64 / peak;
        assert!((efficiency(req, t, peak).unwrap() - 1.0).abs() < 1e-15);
        assert!((efficiency(req, 2.0 * t, peak).unwrap() - 0.5).abs() < 1e-15);
        assert!(efficiency(req, 0.0, peak).is_err());
        assert!(efficiency(req, 1.0, -1.0).is_err());
        // over-unity is reported, not rejected
        assert!(efficiency(req, t / 2.0, peak).unwrap() > 1.0);
    }

    #[test]
    fn percent_format() {
        assert_eq!(format_percent(0.955), "95.5%");
        assert_eq!(format_percent(0.703), "70.3%");
        assert_eq!(format_percent(1.0), "100.0%");
    }

    #[test]
    fn fraction_model_examples() {
        let f = arithmetic_fraction_model(&BlockingConfig::default(), 4.0).unwrap();
        assert!((f - 32768.0 / 33040.0).abs() < 1e-15);
        assert!((f - 0.9918).abs() < 1e-4);
        let unit = arithmetic_fraction_model(&BlockingConfig::unit(), 1.0).unwrap();
        assert!((unit - 0.2).abs() < 1e-15);
        let wide = arithmetic_fraction_model(&BlockingConfig::default(), 1e12).unwrap();
        assert!(wide > f && wide < 1.0);
        assert!(arithmetic_fraction_model(&BlockingConfig::default(), 0.5).is_err());
    }

    #[test]
    fn report_identity() {
        let s = catalog_shape("alexnet/conv2").with_minibatch(8);
        let dev = DeviceSpec::new("desk", 16, 3.0e9).unwrap();
        let r = EfficiencyReport::new("alexnet", "conv2", &s, &BlockingConfig::default(), Duration::from_millis(37), &dev, 1)
            .unwrap();
        let back = r.ce * r.elapsed_secs() * r.peak_flops;
        assert!((back - r.flops_required as f64).abs() <= 2.0 * f64::EPSILON * r.flops_required as f64);
        assert!(r.ceiling > 0.0 && r.ceiling <= 1.0);
        assert_eq!(r.id(), "alexnet/conv2");
    }

    #[test]
    fn peak_agreement() {
        let dev = DeviceSpec::new("desk", 8, 1e9).unwrap();
        assert!(peak_agrees(&dev, 8.5e9, 0.2));
        assert!(!peak_agrees(&dev, 5e9, 0.2));
    }

    #[test]
    fn mac_rate_is_positive() {
        assert!(measure_mac_rate(Duration::from_millis(5), 1) > 0.0);
    }
}
