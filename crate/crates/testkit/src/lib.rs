//! Randomized shapes, independent oracles and property checks shared by the
//! integration and acceptance suites.
//!
//! The oracles here read operands through the batch-major (NCHW) view and do
//! their own index arithmetic, so they share no indexing code with the kernels.

use gatherconv::perf::{flops_performed, flops_required};
use gatherconv::{
    conv_blocked, conv_reference, conv_reference_counted, from_chwn, im2col_explicit, relative_linf_error,
    with_threads, BlockingConfig, ConvShape, FilterTensor, MapTensor, PreparedConv,
};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type CheckResult = Result<(), String>;

pub const ORACLE_TOLERANCE: f64 = 1e-4;

pub const KERNEL_SIDES: [usize; 4] = [1, 3, 5, 11];
pub const STRIDES: [usize; 3] = [1, 2, 4];

#[derive(Debug, Clone, Copy)]
pub struct Case {
    pub shape: ConvShape,
    pub blocking: BlockingConfig,
    pub seed: u64,
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A valid shape with every dimension at most `max_dim`, kernel side from
/// {1,3,5,11}, stride from {1,2,4} and pad in 0..=3.
pub fn random_shape(rng: &mut impl Rng, max_dim: usize) -> ConvShape {
    loop {
        let sk = *KERNEL_SIDES.choose(rng).unwrap();
        let stride = *STRIDES.choose(rng).unwrap();
        let pad = rng.random_range(0..=3);
        let shape = ConvShape::new(
            rng.random_range(1..=max_dim),
            rng.random_range(1..=max_dim),
            rng.random_range(1..=max_dim),
            rng.random_range(1..=max_dim),
            rng.random_range(1..=max_dim),
            sk,
            stride,
            pad,
        );
        if let Ok(shape) = shape {
            return shape;
        }
    }
}

/// Blocking with sizes that rarely divide the problem dimensions. Register
/// blocks come from {1, 2, 4, 8} so both the fixed and generic tile paths run.
pub fn random_blocking(rng: &mut impl Rng) -> BlockingConfig {
    let rm = *[1usize, 2, 4, 8].choose(rng).unwrap();
    let rn = if rm == 8 && rng.random_bool(0.5) { 8 } else { *[1usize, 2, 4, 8].choose(rng).unwrap() };
    BlockingConfig::new(
        rm * rng.random_range(1..=3),
        rn * rng.random_range(1..=3),
        rng.random_range(1..=9),
        rm,
        rn,
    )
    .unwrap()
}

pub fn random_case(rng: &mut impl Rng, max_dim: usize) -> Case {
    let shape = random_shape(rng, max_dim);
    Case { shape, blocking: random_blocking(rng), seed: rng.random() }
}

/// Uniform [-1, 1] operands.
pub fn operands(shape: &ConvShape, seed: u64) -> (MapTensor, FilterTensor) {
    let mut rng = rng(seed);
    let map = MapTensor::from_fn(shape.nc, shape.hi, shape.wi, shape.nb, |_, _, _, _| rng.random_range(-1.0..=1.0));
    let filters = FilterTensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..=1.0));
    (map, filters)
}

/// Input value at `(b, c, y, x)` with zero outside the map, read from an NCHW copy.
fn nchw_read(nchw: &[f32], shape: &ConvShape, b: usize, c: usize, y: isize, x: isize) -> f32 {
    if y < 0 || x < 0 || y >= shape.hi as isize || x >= shape.wi as isize {
        return 0.0;
    }
    nchw[((b * shape.nc + c) * shape.hi + y as usize) * shape.wi + x as usize]
}

/// Patch for pixel `(ox, oy)` as `[b][tap]`, taps ordered (c, ky, kx).
pub fn direct_patch(nchw: &[f32], shape: &ConvShape, ox: usize, oy: usize) -> Vec<Vec<f32>> {
    (0..shape.nb)
        .map(|b| {
            let mut row = Vec::with_capacity(shape.k());
            for c in 0..shape.nc {
                for ky in 0..shape.sk {
                    for kx in 0..shape.sk {
                        let y = (oy * shape.stride + ky) as isize - shape.pad as isize;
                        let x = (ox * shape.stride + kx) as isize - shape.pad as isize;
                        row.push(nchw_read(nchw, shape, b, c, y, x));
                    }
                }
            }
            row
        })
        .collect()
}

/// Gathered operand through the offset table == explicit im2col == direct extraction.
pub fn check_gather(case: &Case) -> CheckResult {
    let shape = &case.shape;
    let (map, filters) = operands(shape, case.seed);
    let nchw = from_chwn(&map);
    let prepared = PreparedConv::new(&map, &filters, shape, &case.blocking).map_err(|e| e.to_string())?;
    let geom = prepared.problem.geometry;
    let data = prepared.problem.map_data();
    let k = shape.k();
    for oy in 0..geom.ho {
        for ox in 0..geom.wo {
            let im2col = im2col_explicit(&map, shape, ox, oy).map_err(|e| e.to_string())?;
            let direct = direct_patch(&nchw, shape, ox, oy);
            let origin = geom.patch_origin(ox, oy);
            for (b, direct_row) in direct.iter().enumerate() {
                for (i, &want) in direct_row.iter().enumerate() {
                    let gathered = data[origin + prepared.offsets.entries[i] + b];
                    let unrolled = im2col[b * k + i];
                    if gathered.to_bits() != want.to_bits() || unrolled.to_bits() != want.to_bits() {
                        return Err(format!(
                            "pixel ({ox},{oy}) b={b} tap={i}: gather {gathered} im2col {unrolled} direct {want}"
                        ));
                    }
                }
                // K-tail rows read zeros
                for i in k..geom.k_padded {
                    let v = data[origin + prepared.offsets.entries[i] + b];
                    if v != 0.0 {
                        return Err(format!("tail row {i} read {v}"));
                    }
                }
            }
        }
    }
    Ok(())
}

/// Every (pixel, filter, batch) triple is owned by exactly one block.
pub fn check_partition(case: &Case) -> CheckResult {
    let shape = &case.shape;
    let plan = gatherconv::build_block_plan(shape, &case.blocking).map_err(|e| e.to_string())?;
    let (wo, ho) = shape.output_dims().map_err(|e| e.to_string())?;
    let (bm, bn) = (case.blocking.bm, case.blocking.bn);
    let want_blocks = wo * ho * shape.no.div_ceil(bn) * shape.nb.div_ceil(bm);
    if plan.len() != want_blocks {
        return Err(format!("plan has {} blocks, expected {want_blocks}", plan.len()));
    }
    let mut hits = vec![0u32; wo * ho * shape.no * shape.nb];
    for blk in &plan.blocks {
        for m in 0..bm {
            for n in 0..bn {
                let (b, f) = (blk.batch_block * bm + m, blk.filter_block * bn + n);
                if b < shape.nb && f < shape.no {
                    hits[((f * ho + blk.oy) * wo + blk.ox) * shape.nb + b] += 1;
                }
            }
        }
    }
    match hits.iter().position(|&h| h != 1) {
        Some(i) => Err(format!("output element {i} covered {} times", hits[i])),
        None => Ok(()),
    }
}

/// Blocked kernel vs 64-bit reference, and the reference vs an f64 patch-times-filter product.
pub fn check_oracle(case: &Case) -> CheckResult {
    let shape = &case.shape;
    let (map, filters) = operands(shape, case.seed);
    let want = conv_reference(&map, &filters, shape).map_err(|e| e.to_string())?;
    let got = conv_blocked(&map, &filters, shape, &case.blocking).map_err(|e| e.to_string())?;
    let err = relative_linf_error(&got, &want).map_err(|e| e.to_string())?;
    if err > ORACLE_TOLERANCE {
        return Err(format!("blocked vs reference relative error {err:e}"));
    }
    // matrix-product oracle at a few pixels
    let nchw = from_chwn(&map);
    let (wo, ho) = shape.output_dims().unwrap();
    for (ox, oy) in [(0, 0), (wo - 1, ho - 1), (wo / 2, ho / 2)] {
        let patch = direct_patch(&nchw, shape, ox, oy);
        for (b, row) in patch.iter().enumerate() {
            for f in 0..shape.no {
                let dot: f64 = row.iter().enumerate().map(|(i, &v)| v as f64 * filters.get(i, f) as f64).sum();
                let expect = (shape.alpha as f64 * dot) as f32;
                let have = want.get(f, oy, ox, b);
                if (have - expect).abs() > 1e-5 * expect.abs().max(1.0) {
                    return Err(format!("reference {have} vs patch product {expect} at ({ox},{oy}) f={f} b={b}"));
                }
            }
        }
    }
    Ok(())
}

fn map_scaled(map: &MapTensor, s: f32) -> MapTensor {
    let (nc, h, w, nb) = map.dims();
    MapTensor::from_vec(nc, h, w, nb, map.data().iter().map(|v| v * s).collect()).unwrap()
}

/// conv(2^p x) == 2^p conv(x) bit-exactly; conv(x + y) ~= conv(x) + conv(y).
pub fn check_linearity(case: &Case) -> CheckResult {
    let shape = &case.shape;
    let (x, filters) = operands(shape, case.seed);
    let (y, _) = operands(shape, case.seed ^ 0x9e37_79b9_7f4a_7c15);
    let run = |m: &MapTensor| conv_blocked(m, &filters, shape, &case.blocking).map_err(|e| e.to_string());
    let cx = run(&x)?;
    for scale in [2.0f32, 0.25, 64.0] {
        let scaled = run(&map_scaled(&x, scale))?;
        if scaled != map_scaled(&cx, scale) {
            return Err(format!("scaling by {scale} is not exact"));
        }
    }
    let (nc, h, w, nb) = x.dims();
    let sum = MapTensor::from_vec(nc, h, w, nb, x.data().iter().zip(y.data()).map(|(a, b)| a + b).collect()).unwrap();
    let csum = run(&sum)?;
    let cy = run(&y)?;
    let (no, ho, wo, _) = cx.dims();
    let added = MapTensor::from_vec(no, ho, wo, nb, cx.data().iter().zip(cy.data()).map(|(a, b)| a + b).collect()).unwrap();
    let err = relative_linf_error(&added, &csum).map_err(|e| e.to_string())?;
    if err > ORACLE_TOLERANCE {
        return Err(format!("additivity error {err:e}"));
    }
    Ok(())
}

/// Shifting the input left by `stride` pixels shifts the output left by one
/// pixel wherever every tap of both pixels reads real (non-apron) input.
/// Returns how many output columns were compared.
pub fn check_shift(case: &Case) -> Result<usize, String> {
    let shape = &case.shape;
    let s = shape.stride;
    let (map, filters) = operands(shape, case.seed);
    let shifted = MapTensor::from_fn(shape.nc, shape.hi, shape.wi, shape.nb, |c, y, x, b| {
        if x + s < shape.wi {
            map.get(c, y, x + s, b)
        } else {
            0.0
        }
    });
    let out = conv_blocked(&map, &filters, shape, &case.blocking).map_err(|e| e.to_string())?;
    let out_shifted = conv_blocked(&shifted, &filters, shape, &case.blocking).map_err(|e| e.to_string())?;
    let (wo, ho) = shape.output_dims().unwrap();
    let mut compared = 0;
    for ox in 0..wo.saturating_sub(1) {
        let first = (ox * s) as isize - shape.pad as isize;
        let last = first + (shape.sk - 1) as isize;
        if first < 0 || last + s as isize >= shape.wi as isize {
            continue;
        }
        compared += 1;
        for f in 0..shape.no {
            for oy in 0..ho {
                for b in 0..shape.nb {
                    let (a, e) = (out_shifted.get(f, oy, ox, b), out.get(f, oy, ox + 1, b));
                    if a.to_bits() != e.to_bits() {
                        return Err(format!("shifted output ({ox},{oy}) f={f} b={b}: {a} vs {e}"));
                    }
                }
            }
        }
    }
    Ok(compared)
}

/// Enlarging nb/no/k padding leaves the cropped output bit-identical.
pub fn check_padding_neutrality(case: &Case) -> CheckResult {
    let shape = &case.shape;
    let (map, filters) = operands(shape, case.seed);
    let b = case.blocking;
    let wider = BlockingConfig::new(b.bm * 2, b.bn * 3, b.kt + 5, b.rm, b.rn).unwrap();
    let base = conv_blocked(&map, &filters, shape, &b).map_err(|e| e.to_string())?;
    let padded = conv_blocked(&map, &filters, shape, &wider).map_err(|e| e.to_string())?;
    if base != padded {
        return Err(format!("{b:?} and {wider:?} disagree"));
    }
    Ok(())
}

/// Same bits from a 1-thread and a 3-thread pool.
pub fn check_thread_determinism(case: &Case) -> CheckResult {
    let shape = &case.shape;
    let (map, filters) = operands(shape, case.seed);
    let run = |t| {
        with_threads(t, || conv_blocked(&map, &filters, shape, &case.blocking))
            .map_err(|e| e.to_string())?
            .map_err(|e| e.to_string())
    };
    if run(1)? != run(3)? {
        return Err("1-thread and 3-thread results differ".into());
    }
    Ok(())
}

/// flops_required == 2 x (counted MACs + scalings) of the reference, and
/// flops_performed == the same count for the blocked kernel.
pub fn check_flop_counts(case: &Case) -> CheckResult {
    let shape = &case.shape;
    let (map, filters) = operands(shape, case.seed);
    let (_, counted) = conv_reference_counted(&map, &filters, shape).map_err(|e| e.to_string())?;
    let required = flops_required(shape).map_err(|e| e.to_string())?;
    if counted.flops() != required {
        return Err(format!("reference executed {} FLOPs, formula says {required}", counted.flops()));
    }
    let prepared = PreparedConv::new(&map, &filters, shape, &case.blocking).map_err(|e| e.to_string())?;
    let (_, blocked) = prepared.execute_counted();
    let performed = flops_performed(shape, &case.blocking).map_err(|e| e.to_string())?;
    if blocked.flops() != performed {
        return Err(format!("blocked executed {} FLOPs, formula says {performed}", blocked.flops()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_shapes_respect_bounds() {
        let mut r = rng(1);
        for _ in 0..500 {
            let s = random_shape(&mut r, 16);
            assert!(s.validate().is_ok());
            assert!([s.nb, s.wi, s.hi, s.nc, s.no].iter().all(|&d| (1..=16).contains(&d)));
            assert!(KERNEL_SIDES.contains(&s.sk) && STRIDES.contains(&s.stride) && s.pad <= 3);
        }
    }

    #[test]
    fn direct_patch_of_known_map() {
        let shape = ConvShape::new(1, 2, 2, 1, 1, 3, 1, 1).unwrap();
        let nchw = [1.0, 2.0, 3.0, 4.0];
        let patch = direct_patch(&nchw, &shape, 0, 0);
        assert_eq!(patch[0], vec![0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 0.0, 3.0, 4.0]);
    }
}
