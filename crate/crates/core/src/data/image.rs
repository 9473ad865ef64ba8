use crate::error::{CpcdError, Result};

/// `H × W × C` image with channel-last, row-major `f64` pixels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 || pixels.len() != height * width * channels {
            return Err(CpcdError::BadElementCount {
                shape: vec![height, width, channels],
                len: pixels.len(),
            });
        }
        Ok(Image {
            height,
            width,
            channels,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Image {
            height,
            width,
            channels,
            pixels: vec![value; height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn get(&self, r: usize, c: usize, ch: usize) -> f64 {
        self.pixels[(r * self.width + c) * self.channels + ch]
    }

    pub fn pixel(&self, r: usize, c: usize) -> &[f64] {
        let off = (r * self.width + c) * self.channels;
        &self.pixels[off..off + self.channels]
    }

    pub fn in_unit_range(&self) -> bool {
        self.pixels.iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// Copies the `size_h × size_w` window whose top-left corner is `(r0, c0)`.
    pub fn crop(&self, r0: usize, c0: usize, size_h: usize, size_w: usize) -> Result<Image> {
        if r0 + size_h > self.height || c0 + size_w > self.width || size_h == 0 || size_w == 0 {
            return Err(CpcdError::input(format!(
                "crop {size_h}x{size_w} at ({r0},{c0}) exceeds {}x{} image",
                self.height, self.width
            )));
        }
        let mut pixels = Vec::with_capacity(size_h * size_w * self.channels);
        for r in r0..r0 + size_h {
            let off = (r * self.width + c0) * self.channels;
            pixels.extend_from_slice(&self.pixels[off..off + size_w * self.channels]);
        }
        Image::new(size_h, size_w, self.channels, pixels)
    }

    /// Writes `tile` into this image with its top-left corner at `(r0, c0)`.
    pub fn paste(&mut self, tile: &Image, r0: usize, c0: usize) -> Result<()> {
        if tile.channels != self.channels
            || r0 + tile.height > self.height
            || c0 + tile.width > self.width
        {
            return Err(CpcdError::ShapeMismatch {
                op: "paste",
                lhs: self.shape().to_vec(),
                rhs: tile.shape().to_vec(),
            });
        }
        let row_len = tile.width * self.channels;
        for r in 0..tile.height {
            let dst = ((r0 + r) * self.width + c0) * self.channels;
            self.pixels[dst..dst + row_len]
                .copy_from_slice(&tile.pixels[r * row_len..(r + 1) * row_len]);
        }
        Ok(())
    }
}
