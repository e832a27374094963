use std::io::Cursor;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat};

use crate::error::{Error, Result};

/// 8-bit grayscale frame, row-major.
#[derive(PartialEq, Eq)]
pub struct GrayscaleImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl Clone for GrayscaleImage {
    fn clone(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            pixels: self.pixels.clone(),
        }
    }

    fn clone_from(&mut self, source: &Self) {
        self.width = source.width;
        self.height = source.height;
        self.pixels.clone_from(&source.pixels);
    }
}

impl std::fmt::Debug for GrayscaleImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GrayscaleImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl GrayscaleImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Image(format!("{width}x{height} has zero extent")));
        }
        let expected = width as usize * height as usize;
        if pixels.len() != expected {
            return Err(Error::Image(format!(
                "{width}x{height} needs {expected} pixels, got {}",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width as usize * height as usize])
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> u8) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    /// Pixel-wise `255 - v`.
    pub fn inverted(&self) -> GrayscaleImage {
        GrayscaleImage {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|v| 255 - v).collect(),
        }
    }

    /// Decodes a binary PGM (P5) file with 8-bit samples.
    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Pnm)
            .map_err(|e| Error::Image(format!("bad PGM: {e}")))?;
        let gray = match img {
            image::DynamicImage::ImageLuma8(g) => g,
            other => {
                return Err(Error::Image(format!(
                    "expected an 8-bit grayscale PGM, got {:?}",
                    other.color()
                )))
            }
        };
        let (w, h) = gray.dimensions();
        Self::new(w, h, gray.into_raw())
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = Vec::new();
        PnmEncoder::new(Cursor::new(&mut out))
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
            .write_image(&self.pixels, self.width, self.height, ExtendedColorType::L8)
            .expect("in-memory PGM encoding");
        out
    }

    pub fn from_base64(width: u32, height: u32, data: &str) -> Result<Self> {
        let pixels = BASE64
            .decode(data)
            .map_err(|e| Error::Image(format!("bad base64 pixel block: {e}")))?;
        Self::new(width, height, pixels)
    }

    pub fn to_base64(&self) -> String {
        BASE64.encode(&self.pixels)
    }
}
