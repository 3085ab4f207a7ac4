//! RGB image container, PNG I/O, tensor conversion and quality metrics.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

/// Height × width × 3 bytes, row-major, RGB order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::EmptyImage);
        }
        if data.len() != height * width * 3 {
            return Err(Error::Shape(format!(
                "{height}x{width} RGB image needs {} bytes, got {}",
                height * width * 3,
                data.len()
            )));
        }
        Ok(RgbImage {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Result<Self> {
        let data = rgb.iter().copied().cycle().take(height * width * 3).collect();
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Applies `f` to every channel byte.
    pub fn map_channels(&self, f: impl Fn(u8) -> u8) -> RgbImage {
        RgbImage {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Nearest-neighbour resize.
    pub fn resize_nearest(&self, height: usize, width: usize) -> Result<RgbImage> {
        if height == 0 || width == 0 {
            return Err(Error::EmptyImage);
        }
        if (height, width) == self.dims() {
            return Ok(self.clone());
        }
        let mut out = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            let sy = y * self.height / height;
            for x in 0..width {
                let sx = x * self.width / width;
                out.extend_from_slice(&self.pixel(sy, sx));
            }
        }
        RgbImage::new(height, width, out)
    }
}

pub fn load_png(path: &Path) -> Result<RgbImage> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let png_err = |detail: String| Error::Png {
        path: path.to_path_buf(),
        detail,
    };
    let mut decoder = png::Decoder::new(std::io::BufReader::new(file));
    // Expand palettes and sub-byte grayscale; 16-bit stays 16-bit so it can be rejected.
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| png_err(e.to_string()))?;
    let bit_depth = reader.info().bit_depth;
    if bit_depth == png::BitDepth::Sixteen {
        return Err(Error::UnsupportedBitDepth(16));
    }
    let src_depth = bit_depth as u8;
    let color = reader.info().color_type;
    if src_depth != 8 && color != png::ColorType::Indexed {
        return Err(Error::UnsupportedBitDepth(src_depth));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| png_err("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(|e| png_err(e.to_string()))?;
    if frame.bit_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedBitDepth(frame.bit_depth as u8));
    }
    let (w, h) = (frame.width as usize, frame.height as usize);
    let buf = &buf[..frame.buffer_size()];
    let stride = frame.line_size;
    let channels = frame.color_type.samples();
    let mut data = Vec::with_capacity(w * h * 3);
    for row in buf.chunks(stride).take(h) {
        for px in row[..w * channels].chunks(channels) {
            match channels {
                1 | 2 => data.extend_from_slice(&[px[0], px[0], px[0]]),
                _ => data.extend_from_slice(&px[..3]),
            }
        }
    }
    RgbImage::new(h, w, data)
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    let bytes = encode_png(img)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Encodes to 8-bit RGB PNG bytes.
pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(BufWriter::new(&mut out), img.width as u32, img.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::validation(format!("PNG header: {e}")))?;
        writer
            .write_image_data(&img.data)
            .map_err(|e| Error::validation(format!("PNG data: {e}")))?;
    }
    Ok(out)
}

/// `[3, H, W]` tensor with channel values mapped v ↦ v/127.5 − 1.
pub fn to_unit_tensor(img: &RgbImage) -> Tensor {
    let (h, w) = img.dims();
    let plane = h * w;
    let mut data = vec![0.0; 3 * plane];
    for (i, px) in img.data.chunks(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f64 / 127.5 - 1.0;
        }
    }
    Tensor::new(&[3, h, w], data).expect("non-empty image")
}

/// Inverse of [`to_unit_tensor`]: clamp to [−1, 1], then round((v+1)·127.5).
pub fn from_unit_tensor(t: &Tensor) -> Result<RgbImage> {
    let (h, w) = match *t.shape() {
        [3, h, w] => (h, w),
        _ => {
            return Err(Error::Shape(format!(
                "expected a [3,H,W] tensor, got {:?}",
                t.shape()
            )))
        }
    };
    let plane = h * w;
    let d = t.data();
    let mut data = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            let v = d[c * plane + i];
            let v = if v.is_nan() { -1.0 } else { v.clamp(-1.0, 1.0) };
            data.push(((v + 1.0) * 127.5).round() as u8);
        }
    }
    RgbImage::new(h, w, data)
}

fn check_dims(a: &RgbImage, b: &RgbImage) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "image dimensions differ: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Mean over all channels of |a − b| / 255.
pub fn mae(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    check_dims(a, b)?;
    let total: u64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| x.abs_diff(y) as u64)
        .sum();
    Ok(total as f64 / (255.0 * a.data.len() as f64))
}

/// 10·log10(255² / MSE), capped at [`PSNR_CAP`] when the images match.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    check_dims(a, b)?;
    let sq: u64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = x.abs_diff(y) as u64;
            d * d
        })
        .sum();
    if sq == 0 {
        return Ok(PSNR_CAP);
    }
    let mse = sq as f64 / a.data.len() as f64;
    Ok(10.0 * (255.0f64 * 255.0 / mse).log10())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QualityReport {
    pub mae: f64,
    pub psnr: f64,
}

impl QualityReport {
    pub fn compare(predicted: &RgbImage, target: &RgbImage) -> Result<Self> {
        Ok(QualityReport {
            mae: mae(predicted, target)?,
            psnr: psnr(predicted, target)?,
        })
    }

    /// Component-wise mean over a non-empty set of reports.
    pub fn average(reports: &[QualityReport]) -> Option<Self> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        Some(QualityReport {
            mae: reports.iter().map(|r| r.mae).sum::<f64>() / n,
            psnr: reports.iter().map(|r| r.psnr).sum::<f64>() / n,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unit_tensor_endpoints() {
        let img = RgbImage::new(1, 1, vec![0, 255, 127]).unwrap();
        let t = to_unit_tensor(&img);
        assert_eq!(t.shape(), &[3, 1, 1]);
        assert_eq!(t.data()[0], -1.0);
        assert_eq!(t.data()[1], 1.0);
        assert!((t.data()[2] - (127.0 / 127.5 - 1.0)).abs() < 1e-15);
        assert!((t.data()[2] + 0.0039216).abs() < 1e-7);
    }

    #[test]
    fn from_unit_clamps() {
        let t = Tensor::new(&[3, 1, 1], vec![-1.0, 1.0, 3.7]).unwrap();
        assert_eq!(from_unit_tensor(&t).unwrap().data(), &[0, 255, 255]);
        let bad = Tensor::new(&[2, 1, 1], vec![0.0, 0.0]).unwrap();
        assert!(from_unit_tensor(&bad).is_err());
    }

    #[test]
    fn unit_roundtrip_is_exhaustive_identity() {
        let data: Vec<u8> = (0..=255u8).flat_map(|v| [v, 255 - v, v.wrapping_mul(7)]).collect();
        let img = RgbImage::new(16, 16, data).unwrap();
        assert_eq!(from_unit_tensor(&to_unit_tensor(&img)).unwrap(), img);
    }

    #[test]
    fn metric_examples() {
        let zero = RgbImage::filled(4, 4, [0, 0, 0]).unwrap();
        let full = RgbImage::filled(4, 4, [255, 255, 255]).unwrap();
        let f51 = RgbImage::filled(4, 4, [51, 51, 51]).unwrap();
        let one = RgbImage::filled(4, 4, [1, 1, 1]).unwrap();
        assert_eq!(mae(&zero, &zero).unwrap(), 0.0);
        assert_eq!(mae(&zero, &full).unwrap(), 1.0);
        assert!((mae(&zero, &f51).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(psnr(&zero, &zero).unwrap(), 99.0);
        assert_eq!(psnr(&zero, &full).unwrap(), 0.0);
        assert!((psnr(&zero, &one).unwrap() - 48.1308).abs() < 1e-4);
        assert!(mae(&zero, &RgbImage::filled(2, 2, [0, 0, 0]).unwrap()).is_err());
        assert!(psnr(&zero, &RgbImage::filled(2, 2, [0, 0, 0]).unwrap()).is_err());
    }

    #[test]
    fn psnr_falls_as_offset_grows() {
        let base = RgbImage::filled(3, 3, [10, 20, 30]).unwrap();
        let mut last = f64::INFINITY;
        let mut last_mae = -1.0;
        for off in 1..=200u8 {
            let other = base.map_channels(|v| v.saturating_add(off));
            let p = psnr(&base, &other).unwrap();
            let m = mae(&base, &other).unwrap();
            assert!(p < last && m > last_mae);
            last = p;
            last_mae = m;
        }
    }

    #[test]
    fn resize_nearest_picks_source_pixels() {
        let mut img = RgbImage::filled(2, 2, [0, 0, 0]).unwrap();
        img.set_pixel(1, 1, [9, 9, 9]);
        let big = img.resize_nearest(4, 4).unwrap();
        assert_eq!(big.pixel(3, 3), [9, 9, 9]);
        assert_eq!(big.pixel(1, 1), [0, 0, 0]);
    }

    fn arb_image(h: usize, w: usize) -> impl Strategy<Value = RgbImage> {
        prop::collection::vec(any::<u8>(), h * w * 3).prop_map(move |d| RgbImage::new(h, w, d).unwrap())
    }

    proptest! {
        #[test]
        fn mae_is_a_metric(a in arb_image(3, 4), b in arb_image(3, 4), c in arb_image(3, 4)) {
            let ab = mae(&a, &b).unwrap();
            prop_assert_eq!(ab, mae(&b, &a).unwrap());
            prop_assert_eq!(ab == 0.0, a == b);
            prop_assert!(ab <= mae(&a, &c).unwrap() + mae(&c, &b).unwrap() + 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab));
            let p = psnr(&a, &b).unwrap();
            prop_assert!(p >= 0.0);
            prop_assert_eq!(ab == 0.0, p == PSNR_CAP);
        }
    }
}
