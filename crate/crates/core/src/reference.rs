//! Direct-definition convolution and explicit patch unrolling. Both serve as
//! oracles for the blocked kernel.

use rayon::prelude::*;

use crate::counter::{NoCount, OpCounter, OpCounts};
use crate::error::{ConvError, Result};
use crate::layout::{tap_row, FilterTensor, MapTensor};
use crate::shape::ConvShape;

/// Direct convolution with 64-bit accumulation.
///
/// Output is CHWN with `no` channels. Each output element sums its taps in
/// `(c, ky, kx)` order; taps falling in the apron contribute zero. Filters are
/// distributed over the current rayon pool, which does not affect the result.
pub fn conv_reference(map: &MapTensor, filters: &FilterTensor, shape: &ConvShape) -> Result<MapTensor> {
    check_operands(map, filters, shape)?;
    let (wo, ho) = shape.output_dims()?;
    let mut out = MapTensor::zeros(shape.no, ho, wo, shape.nb);
    out.data_mut()
        .par_chunks_mut(ho * wo * shape.nb)
        .enumerate()
        .for_each(|(f, plane)| reference_filter(map, filters, shape, f, plane, &mut NoCount));
    Ok(out)
}

/// Single-threaded [`conv_reference`] that also counts the MACs and output
/// scalings its loops execute. Apron taps count as MACs.
pub fn conv_reference_counted(
    map: &MapTensor,
    filters: &FilterTensor,
    shape: &ConvShape,
) -> Result<(MapTensor, OpCounts)> {
    check_operands(map, filters, shape)?;
    let (wo, ho) = shape.output_dims()?;
    let mut out = MapTensor::zeros(shape.no, ho, wo, shape.nb);
    let mut counts = OpCounts::default();
    for (f, plane) in out.data_mut().chunks_mut(ho * wo * shape.nb).enumerate() {
        reference_filter(map, filters, shape, f, plane, &mut counts);
    }
    Ok((out, counts))
}

fn check_operands(map: &MapTensor, filters: &FilterTensor, shape: &ConvShape) -> Result<()> {
    shape.validate()?;
    map.check_input(shape)?;
    filters.check_for(shape)
}

fn reference_filter<C: OpCounter>(
    map: &MapTensor,
    filters: &FilterTensor,
    shape: &ConvShape,
    f: usize,
    plane: &mut [f32],
    counter: &mut C,
) {
    let (wo, ho) = (shape.wo(), shape.ho());
    let nb = shape.nb;
    let weights: Vec<f64> = (0..shape.k()).map(|r| filters.get(r, f) as f64).collect();
    let alpha = shape.alpha as f64;
    let mut acc = vec![0f64; nb];
    for oy in 0..ho {
        for ox in 0..wo {
            acc.fill(0.0);
            for c in 0..shape.nc {
                for ky in 0..shape.sk {
                    let y = (oy * shape.stride + ky) as isize - shape.pad as isize;
                    for kx in 0..shape.sk {
                        counter.macs(nb as u64);
                        let x = (ox * shape.stride + kx) as isize - shape.pad as isize;
                        if y < 0 || x < 0 || y >= shape.hi as isize || x >= shape.wi as isize {
                            continue;
                        }
                        let w = weights[tap_row(c, ky, kx, shape.sk)];
                        let base = map.index(c, y as usize, x as usize, 0);
                        for (a, &v) in acc.iter_mut().zip(&map.data()[base..base + nb]) {
                            *a += v as f64 * w;
                        }
                    }
                }
            }
            counter.scales(nb as u64);
            let dst = &mut plane[(oy * wo + ox) * nb..][..nb];
            for (d, &a) in dst.iter_mut().zip(&acc) {
                *d = (alpha * a) as f32;
            }
        }
    }
}

/// Unrolled input patch for output pixel `(ox, oy)`: an `nb x k` row-major
/// matrix whose column `i` is tap `i` in canonical `(c, ky, kx)` order.
pub fn im2col_explicit(map: &MapTensor, shape: &ConvShape, ox: usize, oy: usize) -> Result<Vec<f32>> {
    shape.validate()?;
    map.check_input(shape)?;
    let (wo, ho) = shape.output_dims()?;
    if ox >= wo || oy >= ho {
        return Err(ConvError::PixelOutOfRange { ox, oy, wo, ho });
    }
    let k = shape.k();
    let mut patch = vec![0f32; shape.nb * k];
    for c in 0..shape.nc {
        for ky in 0..shape.sk {
            for kx in 0..shape.sk {
                let y = (oy * shape.stride + ky) as isize - shape.pad as isize;
                let x = (ox * shape.stride + kx) as isize - shape.pad as isize;
                if y < 0 || x < 0 || y >= shape.hi as isize || x >= shape.wi as isize {
                    continue;
                }
                let i = tap_row(c, ky, kx, shape.sk);
                for b in 0..shape.nb {
                    patch[b * k + i] = map.get(c, y as usize, x as usize, b);
                }
            }
        }
    }
    Ok(patch)
}

/// `max |got - want| / max |want|`, the relative L-infinity error used to
/// compare kernels against the reference.
pub fn relative_linf_error(got: &MapTensor, want: &MapTensor) -> Result<f64> {
    if got.dims() != want.dims() {
        return Err(ConvError::DimMismatch(format!("{:?} vs {:?}", got.dims(), want.dims())));
    }
    let scale = want.data().iter().fold(0f64, |m, &v| m.max((v as f64).abs()));
    let mut diff = 0f64;
    for (&a, &b) in got.data().iter().zip(want.data()) {
        let d = (a as f64 - b as f64).abs();
        if d.is_nan() {
            return Ok(f64::INFINITY);
        }
        diff = diff.max(d);
    }
    Ok(if scale == 0.0 { diff } else { diff / scale })
}
