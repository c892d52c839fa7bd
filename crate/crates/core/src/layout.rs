//! CHWN maps and K-major filter banks.
//!
//! Maps store the batch index innermost so that a single spatial tap of a
//! single channel is a contiguous run of `nb` values. Filters store the filter
//! index innermost, so row `r` of the bank is the `r`-th tap of every filter.

use crate::error::{ConvError, Result};
use crate::shape::ConvShape;

/// Minibatch of multi-channel maps in CHWN order.
#[derive(Debug, Clone, PartialEq)]
pub struct MapTensor {
    pub nc: usize,
    pub h: usize,
    pub w: usize,
    pub nb: usize,
    data: Vec<f32>,
}

impl MapTensor {
    pub fn zeros(nc: usize, h: usize, w: usize, nb: usize) -> Self {
        MapTensor { nc, h, w, nb, data: vec![0.0; nc * h * w * nb] }
    }

    pub fn from_vec(nc: usize, h: usize, w: usize, nb: usize, data: Vec<f32>) -> Result<Self> {
        let expected = nc * h * w * nb;
        if data.len() != expected {
            return Err(ConvError::DimMismatch(format!(
                "map {nc}x{h}x{w}x{nb} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(MapTensor { nc, h, w, nb, data })
    }

    pub fn from_fn(
        nc: usize,
        h: usize,
        w: usize,
        nb: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(nc * h * w * nb);
        for c in 0..nc {
            for y in 0..h {
                for x in 0..w {
                    for b in 0..nb {
                        data.push(f(c, y, x, b));
                    }
                }
            }
        }
        MapTensor { nc, h, w, nb, data }
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize, b: usize) -> usize {
        ((c * self.h + y) * self.w + x) * self.nb + b
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize, b: usize) -> f32 {
        self.data[self.index(c, y, x, b)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, b: usize, value: f32) {
        let i = self.index(c, y, x, b);
        self.data[i] = value;
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.nc, self.h, self.w, self.nb)
    }

    /// Checks that this map is a valid input for `shape`.
    pub fn check_input(&self, shape: &ConvShape) -> Result<()> {
        let want = (shape.nc, shape.hi, shape.wi, shape.nb);
        if self.dims() != want {
            return Err(ConvError::DimMismatch(format!(
                "input map is {:?} (c,h,w,n) but shape expects {:?}",
                self.dims(),
                want
            )));
        }
        Ok(())
    }
}

/// Filter bank laid out as a `k x no` matrix with the filter index innermost.
///
/// Row `r` enumerates taps as channel outer, kernel row, kernel column inner:
/// `r = (c * sk + ky) * sk + kx`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterTensor {
    pub k: usize,
    pub no: usize,
    data: Vec<f32>,
}

impl FilterTensor {
    pub fn zeros(k: usize, no: usize) -> Self {
        FilterTensor { k, no, data: vec![0.0; k * no] }
    }

    pub fn from_vec(k: usize, no: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != k * no {
            return Err(ConvError::DimMismatch(format!(
                "filter bank {k}x{no} needs {} values, got {}",
                k * no,
                data.len()
            )));
        }
        Ok(FilterTensor { k, no, data })
    }

    /// Builds a bank for `shape` from `f(c, ky, kx, filter)`.
    pub fn from_fn(
        shape: &ConvShape,
        mut f: impl FnMut(usize, usize, usize, usize) -> f32,
    ) -> Self {
        let (sk, no) = (shape.sk, shape.no);
        let mut data = Vec::with_capacity(shape.k() * no);
        for c in 0..shape.nc {
            for ky in 0..sk {
                for kx in 0..sk {
                    for o in 0..no {
                        data.push(f(c, ky, kx, o));
                    }
                }
            }
        }
        FilterTensor { k: shape.k(), no, data }
    }

    #[inline]
    pub fn get(&self, r: usize, f: usize) -> f32 {
        self.data[r * self.no + f]
    }

    #[inline]
    pub fn set(&mut self, r: usize, f: usize, value: f32) {
        self.data[r * self.no + f] = value;
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn check_for(&self, shape: &ConvShape) -> Result<()> {
        if self.k != shape.k() || self.no != shape.no {
            return Err(ConvError::DimMismatch(format!(
                "filter bank is {}x{} but shape expects {}x{}",
                self.k,
                self.no,
                shape.k(),
                shape.no
            )));
        }
        Ok(())
    }
}

/// Canonical reduction row for tap `(c, ky, kx)` of an `sk x sk` kernel.
#[inline]
pub fn tap_row(c: usize, ky: usize, kx: usize, sk: usize) -> usize {
    (c * sk + ky) * sk + kx
}

/// Converts a batch-major (NCHW) array into CHWN.
pub fn to_chwn(nchw: &[f32], nb: usize, nc: usize, h: usize, w: usize) -> Result<MapTensor> {
    if nchw.len() != nb * nc * h * w {
        return Err(ConvError::DimMismatch(format!(
            "array of {} values cannot hold {nb}x{nc}x{h}x{w}",
            nchw.len()
        )));
    }
    let mut out = MapTensor::zeros(nc, h, w, nb);
    let plane = h * w;
    for b in 0..nb {
        for c in 0..nc {
            let src = &nchw[(b * nc + c) * plane..][..plane];
            for (p, &v) in src.iter().enumerate() {
                out.data[(c * plane + p) * nb + b] = v;
            }
        }
    }
    Ok(out)
}

/// Inverse of [`to_chwn`].
pub fn from_chwn(map: &MapTensor) -> Vec<f32> {
    let (nc, h, w, nb) = map.dims();
    let plane = h * w;
    let mut out = vec![0.0; map.data.len()];
    for b in 0..nb {
        for c in 0..nc {
            let dst = &mut out[(b * nc + c) * plane..][..plane];
            for (p, v) in dst.iter_mut().enumerate() {
                *v = map.data[(c * plane + p) * nb + b];
            }
        }
    }
    out
}

/// Surrounds every channel with a `pad`-wide border of zeros.
pub fn zero_pad(map: &MapTensor, pad: usize) -> MapTensor {
    zero_pad_batch(map, pad, map.nb)
}

/// Like [`zero_pad`], but also widens the batch dimension to `nb_padded`
/// with zero-filled images.
pub fn zero_pad_batch(map: &MapTensor, pad: usize, nb_padded: usize) -> MapTensor {
    assert!(nb_padded >= map.nb);
    let (nc, h, w, nb) = map.dims();
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let mut out = MapTensor::zeros(nc, hp, wp, nb_padded);
    for c in 0..nc {
        for y in 0..h {
            for x in 0..w {
                let src = map.index(c, y, x, 0);
                let dst = out.index(c, y + pad, x + pad, 0);
                out.data[dst..dst + nb].copy_from_slice(&map.data[src..src + nb]);
            }
        }
    }
    out
}

/// Removes a `pad`-wide border; inverse of [`zero_pad`].
pub fn crop_apron(map: &MapTensor, pad: usize) -> Result<MapTensor> {
    let (nc, hp, wp, nb) = map.dims();
    if hp < 2 * pad || wp < 2 * pad {
        return Err(ConvError::DimMismatch(format!(
            "cannot crop {pad} from a {hp}x{wp} map"
        )));
    }
    let (h, w) = (hp - 2 * pad, wp - 2 * pad);
    Ok(MapTensor::from_fn(nc, h, w, nb, |c, y, x, b| map.get(c, y + pad, x + pad, b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn iota(n: usize) -> Vec<f32> {
        (0..n).map(|i| i as f32 * 0.5 - 3.0).collect()
    }

    #[test]
    fn chwn_identity_for_single_image_single_channel() {
        let src = iota(12);
        let map = to_chwn(&src, 1, 1, 3, 4).unwrap();
        assert_eq!(map.data(), &src[..]);
    }

    #[test]
    fn chwn_index_formula_exhaustive_2x2x2x2() {
        let (nb, nc, h, w) = (2, 2, 2, 2);
        let src = iota(16);
        let map = to_chwn(&src, nb, nc, h, w).unwrap();
        for b in 0..nb {
            for c in 0..nc {
                for y in 0..h {
                    for x in 0..w {
                        let nchw = ((b * nc + c) * h + y) * w + x;
                        let chwn = ((c * h + y) * w + x) * nb + b;
                        assert_eq!(map.data()[chwn].to_bits(), src[nchw].to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn chwn_round_trip_2x3x4x5() {
        let src: Vec<f32> = (0..120).map(|i| ((i * 7919) % 113) as f32 / 17.0).collect();
        let map = to_chwn(&src, 2, 3, 4, 5).unwrap();
        let back = from_chwn(&map);
        assert!(src.iter().zip(&back).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn chwn_rejects_bad_length() {
        assert!(matches!(to_chwn(&[0.0; 7], 1, 1, 2, 4), Err(ConvError::DimMismatch(_))));
        assert!(MapTensor::from_vec(1, 2, 2, 2, vec![0.0; 7]).is_err());
        assert!(FilterTensor::from_vec(3, 2, vec![0.0; 5]).is_err());
    }

    #[test]
    fn zero_pad_zero_is_copy() {
        let map = MapTensor::from_fn(2, 3, 3, 2, |c, y, x, b| (c + 2 * y + 3 * x + 5 * b) as f32);
        assert_eq!(zero_pad(&map, 0), map);
    }

    #[test]
    fn zero_pad_single_value() {
        let map = MapTensor::from_vec(1, 1, 1, 1, vec![4.25]).unwrap();
        let padded = zero_pad(&map, 1);
        assert_eq!(padded.dims(), (1, 3, 3, 1));
        for y in 0..3 {
            for x in 0..3 {
                let want = if (y, x) == (1, 1) { 4.25 } else { 0.0 };
                assert_eq!(padded.get(0, y, x, 0).to_bits(), f32::to_bits(want));
            }
        }
    }

    #[test]
    fn zero_pad_5x5_pad2_interior_readback() {
        let vals: Vec<f32> = (0..25).map(|i| ((i * 37) % 29) as f32 * 0.125 - 1.5).collect();
        let map = MapTensor::from_vec(1, 5, 5, 1, vals).unwrap();
        let padded = zero_pad(&map, 2);
        assert_eq!(padded.dims(), (1, 9, 9, 1));
        for y in 0..9 {
            for x in 0..9 {
                let v = padded.get(0, y, x, 0);
                if (2..7).contains(&y) && (2..7).contains(&x) {
                    assert_eq!(v.to_bits(), map.get(0, y - 2, x - 2, 0).to_bits());
                } else {
                    assert_eq!(v.to_bits(), 0f32.to_bits());
                }
            }
        }
    }

    #[test]
    fn batch_padding_fills_zero_images() {
        let map = MapTensor::from_fn(1, 2, 2, 3, |_, y, x, b| (1 + y + x + b) as f32);
        let padded = zero_pad_batch(&map, 1, 8);
        assert_eq!(padded.dims(), (1, 4, 4, 8));
        for b in 3..8 {
            assert_eq!(padded.get(0, 1, 1, b), 0.0);
        }
        assert_eq!(padded.get(0, 2, 2, 2), map.get(0, 1, 1, 2));
    }

    #[test]
    fn filter_row_order() {
        let shape = ConvShape::new(1, 5, 5, 2, 3, 3, 1, 0).unwrap();
        let bank = FilterTensor::from_fn(&shape, |c, ky, kx, f| (1000 * c + 100 * ky + 10 * kx + f) as f32);
        assert_eq!(bank.k, 18);
        assert_eq!(bank.get(tap_row(1, 2, 0, 3), 2), 1202.0);
        assert_eq!(bank.get(tap_row(0, 0, 1, 3), 0), 10.0);
    }

    fn dims() -> impl Strategy<Value = (usize, usize, usize, usize)> {
        (1usize..=8, 1usize..=8, 1usize..=8, 1usize..=8)
    }

    proptest! {
        #[test]
        fn chwn_round_trip((nb, nc, h, w) in dims(), seed in any::<u32>()) {
            let n = nb * nc * h * w;
            let src: Vec<f32> = (0..n)
                .map(|i| f32::from_bits((seed as usize ^ (i * 2654435761)) as u32 & 0x3fff_ffff))
                .collect();
            let back = from_chwn(&to_chwn(&src, nb, nc, h, w).unwrap());
            prop_assert!(src.iter().zip(&back).all(|(a, b)| a.to_bits() == b.to_bits()));
        }

        #[test]
        fn pad_then_crop_is_identity((nb, nc, h, w) in dims(), pad in 0usize..4) {
            let map = MapTensor::from_fn(nc, h, w, nb, |c, y, x, b| (c * 1000 + y * 100 + x * 10 + b) as f32 + 0.5);
            let back = crop_apron(&zero_pad(&map, pad), pad).unwrap();
            prop_assert_eq!(back, map);
        }
    }
}
