//! RGB images in `[0, 1]` and their PNG and tensor forms.

use std::path::Path;

use ldlab_nn::Tensor;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("PNG encode: {0}")]
    Encode(#[from] png::EncodingError),
    #[error("PNG decode: {0}")]
    Decode(#[from] png::DecodingError),
    #[error("unsupported PNG layout {0:?}/{1:?}; expected 8-bit RGB")]
    Layout(png::ColorType, png::BitDepth),
    #[error("tensor shape {0:?} is not [1, 3, h, w]")]
    Shape(Vec<usize>),
}

/// Row-major, channel-interleaved (HWC) RGB image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl RgbImage {
    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Self { height, width, data }
    }

    pub fn get(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, row: usize, col: usize, rgb: [f32; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// `[1, 3, h, w]` tensor remapped to `[-1, 1]`.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let hw = self.height * self.width;
        let mut out = vec![0.0; 3 * hw];
        for p in 0..hw {
            for c in 0..3 {
                out[c * hw + p] = self.data[p * 3 + c] * 2.0 - 1.0;
            }
        }
        Tensor::from_vec(&[1, 3, self.height, self.width], out)
    }

    /// Inverse of [`RgbImage::to_tensor`], clamping into `[0, 1]`.
    pub fn from_tensor(t: &Tensor<f32>) -> Result<Self, ImageError> {
        let s = t.shape();
        if s.len() != 4 || s[0] != 1 || s[1] != 3 {
            return Err(ImageError::Shape(s.to_vec()));
        }
        let (height, width) = (s[2], s[3]);
        let hw = height * width;
        let mut data = vec![0.0; 3 * hw];
        for p in 0..hw {
            for c in 0..3 {
                data[p * 3 + c] = ((t.data()[c * hw + p] + 1.0) * 0.5).clamp(0.0, 1.0);
            }
        }
        Ok(Self { height, width, data })
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    pub fn from_u8(height: usize, width: usize, bytes: &[u8]) -> Self {
        Self { height, width, data: bytes.iter().map(|&b| b as f32 / 255.0).collect() }
    }

    /// Round-trip through 8-bit quantization, matching what a PNG stores.
    pub fn quantized(&self) -> Self {
        Self::from_u8(self.height, self.width, &self.to_u8())
    }

    /// 8-bit RGB PNG encoding.
    pub fn png_bytes(&self) -> Result<Vec<u8>, ImageError> {
        let mut out = Vec::new();
        let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(&self.to_u8())?;
        writer.finish()?;
        Ok(out)
    }

    pub fn write_png(&self, path: &Path) -> Result<(), ImageError> {
        std::fs::write(path, self.png_bytes()?)?;
        Ok(())
    }

    pub fn read_png(path: &Path) -> Result<Self, ImageError> {
        let decoder = png::Decoder::new(std::io::BufReader::new(std::fs::File::open(path)?));
        let mut reader = decoder.read_info()?;
        let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
        let info = reader.next_frame(&mut buf)?;
        if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
            return Err(ImageError::Layout(info.color_type, info.bit_depth));
        }
        buf.truncate(info.buffer_size());
        Ok(Self::from_u8(info.height as usize, info.width as usize, &buf))
    }
}

/// Peak signal-to-noise ratio in dB for images in `[0, 1]`.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> f64 {
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>() / a.data.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}
