use serde::{Deserialize, Serialize};

use crate::error::{ConvError, Result};

/// Hyperparameters of one forward convolution over a minibatch.
///
/// Maps are `wi x hi x nc`, filters are square `sk x sk x nc`, and there are
/// `no` of them. `pad` is the width of the zero apron on every side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvShape {
    pub nb: usize,
    pub wi: usize,
    pub hi: usize,
    pub nc: usize,
    pub no: usize,
    pub sk: usize,
    pub stride: usize,
    pub pad: usize,
    pub alpha: f32,
}

impl ConvShape {
    /// Builds a shape with `alpha = 1` and checks it.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        nb: usize,
        wi: usize,
        hi: usize,
        nc: usize,
        no: usize,
        sk: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let shape = ConvShape { nb, wi, hi, nc, no, sk, stride, pad, alpha: 1.0 };
        shape.validate()?;
        Ok(shape)
    }

    pub fn with_alpha(mut self, alpha: f32) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_minibatch(mut self, nb: usize) -> Self {
        self.nb = nb;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("nb", self.nb),
            ("wi", self.wi),
            ("hi", self.hi),
            ("nc", self.nc),
            ("no", self.no),
            ("sk", self.sk),
            ("stride", self.stride),
        ];
        for (name, value) in fields {
            if value == 0 {
                return Err(ConvError::InvalidShape(format!("{name} must be at least 1")));
            }
        }
        if !self.alpha.is_finite() {
            return Err(ConvError::InvalidShape("alpha must be finite".into()));
        }
        output_extent(self.wi, self.sk, self.stride, self.pad)?;
        output_extent(self.hi, self.sk, self.stride, self.pad)?;
        Ok(())
    }

    /// `(wo, ho)`; see [`output_dims`].
    pub fn output_dims(&self) -> Result<(usize, usize)> {
        output_dims(self)
    }

    pub fn wo(&self) -> usize {
        self.output_dims().expect("validated shape").0
    }

    pub fn ho(&self) -> usize {
        self.output_dims().expect("validated shape").1
    }

    /// Reduction length: taps summed per output element.
    pub fn k(&self) -> usize {
        self.sk * self.sk * self.nc
    }

    /// Input map width including the apron.
    pub fn padded_width(&self) -> usize {
        self.wi + 2 * self.pad
    }

    pub fn padded_height(&self) -> usize {
        self.hi + 2 * self.pad
    }
}

fn output_extent(input: usize, sk: usize, stride: usize, pad: usize) -> Result<usize> {
    let extent = input + 2 * pad;
    if extent < sk {
        return Err(ConvError::NoValidOutput { extent, kernel: sk });
    }
    Ok((extent - sk) / stride + 1)
}

/// Output map size using the floor convention `(w + 2p - k) / s + 1`.
pub fn output_dims(shape: &ConvShape) -> Result<(usize, usize)> {
    if shape.stride == 0 {
        return Err(ConvError::InvalidShape("stride must be at least 1".into()));
    }
    let wo = output_extent(shape.wi, shape.sk, shape.stride, shape.pad)?;
    let ho = output_extent(shape.hi, shape.sk, shape.stride, shape.pad)?;
    Ok((wo, ho))
}
