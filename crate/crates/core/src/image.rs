//! 8-bit raster images and their file formats.
//!
//! Supported on disk: binary PPM (`P6`, maxval 255), binary PGM (`P5`, maxval
//! 255) and a raw dump `b"IEAL" | u16 LE height | u16 LE width | pixels`, where
//! the channel count follows from the payload length.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::keystream::ChannelSums;

pub const RAW_MAGIC: &[u8; 4] = b"IEAL";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Interleaved samples in raster order.
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Format(format!("unsupported channel count {channels}")));
        }
        if height * width < 2 {
            return Err(Error::Format(format!(
                "image {height}x{width} has fewer than two pixels"
            )));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::DimensionMismatch {
                expected: format!("{} samples", height * width * channels),
                got: format!("{} samples", pixels.len()),
            });
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Interleaves equally long planes into one image.
    pub fn from_channels(height: usize, width: usize, planes: &[Vec<u8>]) -> Result<Self> {
        let mn = height * width;
        if planes.iter().any(|p| p.len() != mn) {
            return Err(Error::DimensionMismatch {
                expected: format!("{mn} pixels per channel"),
                got: "planes of other length".into(),
            });
        }
        let c = planes.len();
        let mut pixels = vec![0u8; mn * c];
        for (ch, plane) in planes.iter().enumerate() {
            for (i, &v) in plane.iter().enumerate() {
                pixels[i * c + ch] = v;
            }
        }
        Self::new(height, width, c, pixels)
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn channel(&self, c: usize) -> Vec<u8> {
        assert!(c < self.channels);
        self.pixels
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect()
    }

    pub fn channels_split(&self) -> Vec<Vec<u8>> {
        (0..self.channels).map(|c| self.channel(c)).collect()
    }

    /// Per-channel pixel sums. A single-channel image uses its sum for all three.
    pub fn channel_sums(&self) -> ChannelSums {
        let sum = |c: usize| {
            self.pixels
                .iter()
                .skip(c)
                .step_by(self.channels)
                .map(|&v| v as u64)
                .sum::<u64>()
        };
        if self.channels == 1 {
            let s = sum(0);
            ChannelSums::new(s, s, s)
        } else {
            ChannelSums::new(sum(0), sum(1), sum(2))
        }
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn shape(&self) -> String {
        format!("{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// Encodes as `P6` (three channels) or `P5` (one channel).
pub fn encode_pnm(img: &Image) -> Vec<u8> {
    let magic = if img.channels == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

struct HeaderReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.data.len() {
            match self.data[self.pos] {
                b'#' => {
                    while self.pos < self.data.len() && self.data[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.data.len() && self.data[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Format("expected a number in PNM header".into()));
        }
        std::str::from_utf8(&self.data[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("header number out of range".into()))
    }
}

pub fn decode_pnm(data: &[u8]) -> Result<Image> {
    let channels = match data.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        _ => return Err(Error::Format("not a binary PPM/PGM file".into())),
    };
    let mut r = HeaderReader { data, pos: 2 };
    let width = r.number()?;
    let height = r.number()?;
    let maxval = r.number()?;
    if maxval != 255 {
        return Err(Error::Format(format!("maxval {maxval} unsupported, need 255")));
    }
    match data.get(r.pos) {
        Some(c) if c.is_ascii_whitespace() => r.pos += 1,
        _ => return Err(Error::Format("missing whitespace after PNM header".into())),
    }
    let need = width * height * channels;
    let body = &data[r.pos..];
    if body.len() < need {
        return Err(Error::Format(format!(
            "truncated pixel data: need {need} bytes, have {}",
            body.len()
        )));
    }
    Image::new(height, width, channels, body[..need].to_vec())
}

pub fn encode_raw(img: &Image) -> Result<Vec<u8>> {
    let h = u16::try_from(img.height).map_err(|_| Error::Format("height exceeds u16".into()))?;
    let w = u16::try_from(img.width).map_err(|_| Error::Format("width exceeds u16".into()))?;
    let mut out = Vec::with_capacity(8 + img.pixels.len());
    out.extend_from_slice(RAW_MAGIC);
    out.extend_from_slice(&h.to_le_bytes());
    out.extend_from_slice(&w.to_le_bytes());
    out.extend_from_slice(&img.pixels);
    Ok(out)
}

pub fn decode_raw(data: &[u8]) -> Result<Image> {
    if data.len() < 8 || &data[..4] != RAW_MAGIC {
        return Err(Error::Format("missing IEAL raw header".into()));
    }
    let h = u16::from_le_bytes([data[4], data[5]]) as usize;
    let w = u16::from_le_bytes([data[6], data[7]]) as usize;
    let body = &data[8..];
    let mn = h * w;
    if mn == 0 || body.len() % mn != 0 {
        return Err(Error::Format(format!(
            "raw payload of {} bytes does not fit {h}x{w}",
            body.len()
        )));
    }
    Image::new(h, w, body.len() / mn, body.to_vec())
}

/// Decodes by sniffing the magic bytes.
pub fn decode(data: &[u8]) -> Result<Image> {
    if data.starts_with(RAW_MAGIC) {
        decode_raw(data)
    } else {
        decode_pnm(data)
    }
}

pub fn read_image(path: &Path) -> Result<Image> {
    let data = fs::read(path)
        .map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
    decode(&data).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Writes raw format when the extension is `.raw`, PNM otherwise.
pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    let bytes = if path.extension().is_some_and(|e| e == "raw") {
        encode_raw(img)?
    } else {
        encode_pnm(img)
    };
    fs::write(path, bytes)
        .map_err(|e| Error::Format(format!("cannot write {}: {e}", path.display())))
}
