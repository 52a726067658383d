use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};

/// 8-bit grayscale raster, row-major, white background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![255; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        if x < self.width && y < self.height {
            self.pixels[y * self.width + x] = v;
        }
    }

    /// Copies a `side×side` tile of intensities in `[0, 1]` with its top-left at `(x, y)`.
    pub fn paste_unit(&mut self, x: usize, y: usize, side: usize, tile: &[f32]) {
        for j in 0..side {
            for i in 0..side {
                let v = (tile[j * side + i].clamp(0.0, 1.0) * 255.0).round() as u8;
                self.set(x + i, y + j, v);
            }
        }
    }

    /// The `side×side` tile at grid cell `(col, row)`.
    pub fn tile(&self, col: usize, row: usize, side: usize) -> Vec<u8> {
        let mut out = Vec::with_capacity(side * side);
        for j in 0..side {
            let y = row * side + j;
            out.extend_from_slice(&self.pixels[y * self.width + col * side..y * self.width + (col + 1) * side]);
        }
        out
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut buf, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().map_err(png_error)?;
            w.write_image_data(&self.pixels).map_err(png_error)?;
        }
        Ok(buf)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes = self.encode_png()?;
        let mut f = BufWriter::new(File::create(path)?);
        std::io::Write::write_all(&mut f, &bytes)?;
        Ok(())
    }
}

fn png_error(e: png::EncodingError) -> Error {
    match e {
        png::EncodingError::IoError(io) => Error::Io(io),
        other => Error::Format(other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiles_round_trip_and_png_decodes() {
        let mut img = GrayImage::new(4, 2);
        img.paste_unit(2, 0, 2, &[0.0, 1.0, 0.5, 0.0]);
        assert_eq!(img.tile(1, 0, 2), vec![0, 255, 128, 0]);
        assert_eq!(img.tile(0, 0, 2), vec![255; 4]);
        let bytes = img.encode_png().unwrap();
        let dec = png::Decoder::new(std::io::Cursor::new(bytes));
        let mut reader = dec.read_info().unwrap();
        let mut out = vec![0; reader.output_buffer_size().unwrap()];
        let info = reader.next_frame(&mut out).unwrap();
        assert_eq!((info.width, info.height), (4, 2));
        assert_eq!(&out[..8], &img.pixels[..]);
    }
}
