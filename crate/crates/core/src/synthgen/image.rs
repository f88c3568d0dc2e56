use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor3;

/// 8-bit single-channel image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// Input normalization shared by every model: `(v/255 - MEAN) / SCALE`.
const INPUT_MEAN: f64 = 0.35;
const INPUT_SCALE: f64 = 0.25;

impl GrayImage {
    /// Quantizes intensities in `[0,1]` (clamped) to 8 bits.
    pub fn from_intensities(width: usize, height: usize, values: &[f64]) -> Self {
        assert_eq!(values.len(), width * height);
        let pixels = values
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        Self { width, height, pixels }
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Normalized single-channel network input.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor3<T> {
        let data = self
            .pixels
            .iter()
            .map(|&p| T::lit((p as f64 / 255.0 - INPUT_MEAN) / INPUT_SCALE))
            .collect();
        Tensor3::from_vec(1, self.height, self.width, data).expect("image tensor shape")
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut encoder = png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::Png(format!("{}: {e}", path.display())))?;
        writer
            .write_image_data(&self.pixels)
            .map_err(|e| Error::Png(format!("{}: {e}", path.display())))?;
        writer
            .finish()
            .map_err(|e| Error::Png(format!("{}: {e}", path.display())))
    }

    pub fn read_png(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let decoder = png::Decoder::new(BufReader::new(file));
        let mut reader = decoder
            .read_info()
            .map_err(|e| Error::Png(format!("{}: {e}", path.display())))?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| Error::Png(format!("{}: image too large", path.display())))?;
        let mut buf = vec![0u8; size];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::Png(format!("{}: {e}", path.display())))?;
        if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
            return Err(Error::Png(format!(
                "{}: expected 8-bit grayscale, found {:?}/{:?}",
                path.display(),
                info.color_type,
                info.bit_depth
            )));
        }
        let (width, height) = (info.width as usize, info.height as usize);
        buf.truncate(width * height);
        Ok(Self {
            width,
            height,
            pixels: buf,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let values: Vec<f64> = (0..35).map(|i| i as f64 / 34.0).collect();
        let img = GrayImage::from_intensities(7, 5, &values);
        img.write_png(&path).unwrap();
        assert_eq!(GrayImage::read_png(&path).unwrap(), img);
    }

    #[test]
    fn quantization_clamps() {
        let img = GrayImage::from_intensities(3, 1, &[-1.0, 0.5, 2.0]);
        assert_eq!(img.pixels, vec![0, 128, 255]);
    }
}
