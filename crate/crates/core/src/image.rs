//! 8-bit binary PGM (P5) / PPM (P6) images with a canonical header.

use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("unsupported image format `{0}` (expected pgm or ppm)")]
    UnsupportedFormat(String),
    #[error("{format:?} cannot hold a {channels}-channel image")]
    FormatMismatch {
        format: ImageFormat,
        channels: usize,
    },
    #[error("malformed image data: {0}")]
    Malformed(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, ImageError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Pgm,
    Ppm,
}

impl std::str::FromStr for ImageFormat {
    type Err = ImageError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pgm" | "p5" => Ok(Self::Pgm),
            "ppm" | "p6" => Ok(Self::Ppm),
            other => Err(ImageError::UnsupportedFormat(other.to_string())),
        }
    }
}

/// Grayscale raster with intensities in [0, 1], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len().max(1) as f64
    }

    pub fn mirrored(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            out.data[y * self.width..(y + 1) * self.width].reverse();
        }
        out
    }

    /// Rounds to 8 bits.
    pub fn to_raster(&self) -> Raster {
        Raster {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self
                .data
                .iter()
                .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect(),
        }
    }

    pub fn from_raster(r: &Raster) -> Result<Self> {
        if r.channels != 1 {
            return Err(ImageError::Malformed("expected a grayscale raster".into()));
        }
        Ok(Self {
            width: r.width,
            height: r.height,
            data: r.data.iter().map(|&v| v as f64 / 255.0).collect(),
        })
    }
}

/// 8-bit interleaved raster: 1 channel (gray) or 3 (RGB).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Raster {
    pub fn filled(width: usize, height: usize, pixel: &[u8]) -> Self {
        let mut data = Vec::with_capacity(width * height * pixel.len());
        for _ in 0..width * height {
            data.extend_from_slice(pixel);
        }
        Self {
            width,
            height,
            channels: pixel.len(),
            data,
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn put(&mut self, x: usize, y: usize, pixel: &[u8]) {
        let i = (y * self.width + x) * self.channels;
        self.data[i..i + self.channels].copy_from_slice(pixel);
    }

    pub fn encode(&self, format: ImageFormat) -> Result<Vec<u8>> {
        let magic = match (format, self.channels) {
            (ImageFormat::Pgm, 1) => "P5",
            (ImageFormat::Ppm, 3) => "P6",
            (format, channels) => return Err(ImageError::FormatMismatch { format, channels }),
        };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut fields = Vec::with_capacity(4);
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(ImageError::Malformed("truncated header".into()));
            }
            fields.push(
                std::str::from_utf8(&bytes[start..pos])
                    .unwrap_or("")
                    .to_string(),
            );
        }
        // exactly one whitespace byte separates the header from the payload
        pos += 1;
        let channels = match fields[0].as_str() {
            "P5" => 1,
            "P6" => 3,
            other => {
                return Err(ImageError::Malformed(format!(
                    "unsupported magic `{other}`"
                )))
            }
        };
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| ImageError::Malformed(format!("bad header value `{s}`")))
        };
        let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if maxval != 255 {
            return Err(ImageError::Malformed(format!(
                "unsupported maxval {maxval}"
            )));
        }
        let len = width * height * channels;
        let payload = bytes
            .get(pos..pos + len)
            .ok_or_else(|| ImageError::Malformed("truncated payload".into()))?;
        Ok(Self {
            width,
            height,
            channels,
            data: payload.to_vec(),
        })
    }
}

pub fn write_image(image: &Raster, path: &Path, format: ImageFormat) -> Result<()> {
    let bytes = image.encode(format)?;
    std::fs::write(path, bytes).map_err(|source| ImageError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_image(path: &Path) -> Result<Raster> {
    let bytes = std::fs::read(path).map_err(|source| ImageError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Raster::decode(&bytes)
}
