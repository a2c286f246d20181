//! Images are tensors tagged with the colour domain they live in.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Domain {
    /// Single-channel RGGB mosaic.
    #[serde(rename = "raw")]
    BayerRaw,
    /// Three-channel RGB.
    #[serde(rename = "srgb")]
    Srgb,
}

impl Domain {
    pub fn channels(self) -> usize {
        match self {
            Domain::BayerRaw => 1,
            Domain::Srgb => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub domain: Domain,
    pub tensor: Tensor,
}

impl Image {
    pub fn new(domain: Domain, tensor: Tensor) -> Result<Self> {
        if tensor.channels() != domain.channels() {
            return Err(Error::shape(
                "Image::new",
                format!(
                    "{:?} images have {} channel(s), tensor has {}",
                    domain,
                    domain.channels(),
                    tensor.channels()
                ),
            ));
        }
        if domain == Domain::BayerRaw && (tensor.height() % 2 != 0 || tensor.width() % 2 != 0) {
            return Err(Error::shape(
                "Image::new",
                format!(
                    "Bayer images need even dimensions, got {}x{}",
                    tensor.height(),
                    tensor.width()
                ),
            ));
        }
        Ok(Image { domain, tensor })
    }

    pub fn raw(tensor: Tensor) -> Result<Self> {
        Self::new(Domain::BayerRaw, tensor)
    }

    pub fn srgb(tensor: Tensor) -> Result<Self> {
        Self::new(Domain::Srgb, tensor)
    }

    pub fn height(&self) -> usize {
        self.tensor.height()
    }

    pub fn width(&self) -> usize {
        self.tensor.width()
    }

    pub fn expect_domain(&self, expected: Domain, op: &str) -> Result<()> {
        if self.domain == expected {
            Ok(())
        } else {
            Err(Error::Domain {
                op: op.to_string(),
                expected,
                got: self.domain,
            })
        }
    }
}

/// Colour index (0 = R, 1 = G, 2 = B) of an RGGB mosaic site.
#[inline]
pub fn bayer_color(y: usize, x: usize) -> usize {
    match (y % 2, x % 2) {
        (0, 0) => 0,
        (1, 1) => 2,
        _ => 1,
    }
}

/// Samples an `H x W x 3` image through an RGGB colour filter array.
pub fn mosaic_rggb(rgb: &Tensor) -> Result<Tensor> {
    let (h, w, c) = rgb.shape();
    if c != 3 || h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(
            "mosaic_rggb",
            format!("need an even-sized RGB image, got {:?}", rgb.shape()),
        ));
    }
    Ok(Tensor::from_fn(h, w, 1, |y, x, _| rgb.at(y, x, bayer_color(y, x))))
}

/// Splits an `H x W x 1` RGGB mosaic into `H/2 x W/2 x 4` planes ordered
/// `[R, G(red row), G(blue row), B]`.
pub fn pack_rggb(mosaic: &Tensor) -> Result<Tensor> {
    let (h, w, c) = mosaic.shape();
    if c != 1 || h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(
            "pack_rggb",
            format!("need an even-sized single-channel mosaic, got {:?}", mosaic.shape()),
        ));
    }
    Ok(Tensor::from_fn(h / 2, w / 2, 4, |y, x, p| {
        mosaic.at(2 * y + p / 2, 2 * x + p % 2, 0)
    }))
}

/// Inverse of [`pack_rggb`].
pub fn unpack_rggb(planes: &Tensor) -> Result<Tensor> {
    let (h, w, c) = planes.shape();
    if c != 4 {
        return Err(Error::shape("unpack_rggb", format!("need 4 planes, got {c}")));
    }
    Ok(Tensor::from_fn(2 * h, 2 * w, 1, |y, x, _| {
        planes.at(y / 2, x / 2, (y % 2) * 2 + x % 2)
    }))
}

/// Packs a full-resolution `H x W x C` tensor into `H/2 x W/2 x 4C`
/// (space-to-depth with a 2x2 block, site-major).
pub fn space_to_depth(t: &Tensor) -> Result<Tensor> {
    let (h, w, c) = t.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape("space_to_depth", "odd dimensions"));
    }
    Ok(Tensor::from_fn(h / 2, w / 2, 4 * c, |y, x, k| {
        let (site, ch) = (k / c, k % c);
        t.at(2 * y + site / 2, 2 * x + site % 2, ch)
    }))
}

/// Inverse of [`space_to_depth`].
pub fn depth_to_space(t: &Tensor) -> Result<Tensor> {
    let (h, w, c4) = t.shape();
    if c4 % 4 != 0 {
        return Err(Error::shape("depth_to_space", "channel count not divisible by 4"));
    }
    let c = c4 / 4;
    Ok(Tensor::from_fn(2 * h, 2 * w, c, |y, x, ch| {
        let site = (y % 2) * 2 + x % 2;
        t.at(y / 2, x / 2, site * c + ch)
    }))
}
