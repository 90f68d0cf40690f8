use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbImage};

use super::AugError;

pub const CHANNELS: usize = 3;

/// Row-major 8-bit RGB pixel grid.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for ImageBuffer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ImageBuffer")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, AugError> {
        if width == 0 || height == 0 {
            return Err(AugError::InvalidImage(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height * CHANNELS {
            return Err(AugError::InvalidImage(format!(
                "expected {} samples for {width}x{height} RGB, got {}",
                width * height * CHANNELS,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(width * height * CHANNELS)
            .collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    fn offset(&self, x: usize, y: usize) -> usize {
        (y * self.width + x) * CHANNELS
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = self.offset(x, y);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = self.offset(x, y);
        self.data[i..i + CHANNELS].copy_from_slice(&rgb);
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.data.chunks_exact(CHANNELS).map(|c| [c[0], c[1], c[2]])
    }

    /// Decode PNG (or any format the `image` crate recognises) bytes. Alpha
    /// and higher bit depths are converted down to 8-bit RGB.
    pub fn decode(bytes: &[u8]) -> Result<Self, AugError> {
        let img = image::load_from_memory(bytes).map_err(|e| AugError::Codec(e.to_string()))?;
        Self::from_rgb(img.to_rgb8())
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, AugError> {
        let img = RgbImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .ok_or_else(|| AugError::InvalidImage("buffer size mismatch".into()))?;
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png)
            .map_err(|e| AugError::Codec(e.to_string()))?;
        Ok(out.into_inner())
    }

    pub fn read_png(path: &Path) -> Result<Self, AugError> {
        let bytes = std::fs::read(path).map_err(|e| AugError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::decode(&bytes)
    }

    pub fn write_png(&self, path: &Path) -> Result<(), AugError> {
        let bytes = self.encode_png()?;
        std::fs::write(path, bytes).map_err(|e| AugError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    fn from_rgb(img: RgbImage) -> Result<Self, AugError> {
        let (w, h) = img.dimensions();
        Self::new(w as usize, h as usize, img.into_raw())
    }
}
