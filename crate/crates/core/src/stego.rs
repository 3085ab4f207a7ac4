//! Least-significant-bit image embedding.
//!
//! At depth `b` the low `b` bits of every cover channel are replaced by the
//! high `b` bits of the matching hidden channel. Decoding shifts those bits
//! back into the most significant position; the unrecoverable low bits are
//! zero-filled (or set to the midpoint of their range with [`Fill::Midpoint`]).

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::image::RgbImage;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BitDepth(u8);

impl BitDepth {
    pub const MAX: u8 = 8;

    pub fn new(bits: u8) -> Result<Self> {
        if bits > Self::MAX {
            return Err(Error::validation(format!(
                "bit depth {bits} is out of range; valid range is 0-8"
            )));
        }
        Ok(BitDepth(bits))
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    /// All nine depths, 0 through 8.
    pub fn all() -> impl Iterator<Item = BitDepth> {
        (0..=Self::MAX).map(BitDepth)
    }

    /// Mask covering the low `bits` bits.
    fn low_mask(self) -> u8 {
        ((1u16 << self.0) - 1) as u8
    }
}

impl fmt::Display for BitDepth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for BitDepth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v: i64 = s
            .trim()
            .parse()
            .map_err(|_| Error::validation(format!("invalid bit depth {s:?}; valid range is 0-8")))?;
        if !(0..=8).contains(&v) {
            return Err(Error::validation(format!(
                "bit depth {v} is out of range; valid range is 0-8"
            )));
        }
        BitDepth::new(v as u8)
    }
}

/// How decode fills the low bits that the payload cannot carry.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Fill {
    #[default]
    Zero,
    Midpoint,
}

pub fn encode_channel(cover: u8, hidden: u8, depth: BitDepth) -> u8 {
    let b = depth.bits();
    let kept = cover & !depth.low_mask();
    let payload = if b == 0 { 0 } else { hidden >> (8 - b) };
    kept | payload
}

pub fn decode_channel(encoded: u8, depth: BitDepth) -> u8 {
    decode_channel_with(encoded, depth, Fill::Zero)
}

pub fn decode_channel_with(encoded: u8, depth: BitDepth, fill: Fill) -> u8 {
    let b = depth.bits();
    if b == 0 {
        return 0;
    }
    let high = ((encoded & depth.low_mask()) as u16) << (8 - b);
    let low = match fill {
        Fill::Midpoint if b < 8 => 1u16 << (7 - b),
        _ => 0,
    };
    (high | low) as u8
}

/// A cover/hidden pair of identical dimensions at a fixed depth.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StegoPair {
    cover: RgbImage,
    hidden: RgbImage,
    depth: BitDepth,
}

impl StegoPair {
    /// Pairs the images, resizing `hidden` to the cover's dimensions.
    pub fn new(cover: RgbImage, hidden: RgbImage, depth: BitDepth) -> Result<Self> {
        let hidden = hidden.resize_nearest(cover.height(), cover.width())?;
        Ok(StegoPair {
            cover,
            hidden,
            depth,
        })
    }

    pub fn cover(&self) -> &RgbImage {
        &self.cover
    }

    pub fn hidden(&self) -> &RgbImage {
        &self.hidden
    }

    pub fn depth(&self) -> BitDepth {
        self.depth
    }
}

pub fn encode(pair: &StegoPair) -> Result<RgbImage> {
    encode_images(&pair.cover, &pair.hidden, pair.depth)
}

/// Channel-wise embedding of two images that must already share dimensions.
pub fn encode_images(cover: &RgbImage, hidden: &RgbImage, depth: BitDepth) -> Result<RgbImage> {
    if cover.dims() != hidden.dims() {
        return Err(Error::Shape(format!(
            "cover {:?} and hidden {:?} differ in size",
            cover.dims(),
            hidden.dims()
        )));
    }
    let data = cover
        .data()
        .iter()
        .zip(hidden.data())
        .map(|(&c, &h)| encode_channel(c, h, depth))
        .collect();
    RgbImage::new(cover.height(), cover.width(), data)
}

pub fn decode(encoded: &RgbImage, depth: BitDepth) -> RgbImage {
    decode_with(encoded, depth, Fill::Zero)
}

pub fn decode_with(encoded: &RgbImage, depth: BitDepth, fill: Fill) -> RgbImage {
    encoded.map_channels(|v| decode_channel_with(v, depth, fill))
}
