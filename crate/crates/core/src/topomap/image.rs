//! `EegImage` and the EEGIMG binary format.
//!
//! Layout: `"EIMG"`, u32 version (1), u16 H, u16 W, u8 C (3), u8 provenance,
//! u8 alcoholism, u8 stimulus, u16 subject-id byte length + UTF-8 bytes,
//! then `C·H·W` f32 little-endian values, channel-major then row-major.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TopomapError;
use crate::dataset::Alcoholism;

const MAGIC: &[u8; 4] = b"EIMG";
const VERSION: u32 = 1;
pub const IMAGE_CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Real = 0,
    Dummy = 1,
    Disguised = 2,
}

impl Provenance {
    fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Self::Real),
            1 => Some(Self::Dummy),
            2 => Some(Self::Disguised),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EegImage {
    pub height: usize,
    pub width: usize,
    /// `3 × H × W`, R=θ, G=α, B=β.
    pub pixels: Vec<f32>,
    /// Real subject id, or the dummy group tag `dummy:g<id>:<seed>:<n>`.
    pub subject_id: String,
    pub alcoholism: Alcoholism,
    pub stimulus: usize,
    pub provenance: Provenance,
}

impl EegImage {
    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.pixels[c * n..(c + 1) * n]
    }

    pub fn pixel(&self, c: usize, row: usize, col: usize) -> f32 {
        self.pixels[(c * self.height + row) * self.width + col]
    }

    pub fn in_unit_range(&self) -> bool {
        self.pixels.iter().all(|p| (0.0..=1.0).contains(p))
    }

    fn validate(&self) -> Result<(), TopomapError> {
        if self.height == 0 || self.width == 0 || self.height > u16::MAX as usize || self.width > u16::MAX as usize {
            return Err(TopomapError::Format(format!("bad image size {}×{}", self.height, self.width)));
        }
        if self.pixels.len() != IMAGE_CHANNELS * self.height * self.width {
            return Err(TopomapError::Format(format!("{} pixels for 3×{}×{}", self.pixels.len(), self.height, self.width)));
        }
        if self.stimulus > u8::MAX as usize {
            return Err(TopomapError::Format(format!("stimulus {} exceeds u8", self.stimulus)));
        }
        if self.subject_id.len() > u16::MAX as usize {
            return Err(TopomapError::Format("subject id too long".into()));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, TopomapError> {
        self.validate()?;
        let mut out = Vec::with_capacity(20 + self.subject_id.len() + self.pixels.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.height as u16).to_le_bytes());
        out.extend_from_slice(&(self.width as u16).to_le_bytes());
        out.push(IMAGE_CHANNELS as u8);
        out.push(self.provenance as u8);
        out.push(self.alcoholism as u8);
        out.push(self.stimulus as u8);
        out.extend_from_slice(&(self.subject_id.len() as u16).to_le_bytes());
        out.extend_from_slice(self.subject_id.as_bytes());
        for p in &self.pixels {
            out.extend_from_slice(&p.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TopomapError> {
        let short = || TopomapError::Format("truncated EEGIMG".into());
        if bytes.len() < 18 {
            return Err(short());
        }
        if &bytes[..4] != MAGIC {
            return Err(TopomapError::Format("bad magic".into()));
        }
        let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]) as usize;
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(TopomapError::Format(format!("unsupported version {version}")));
        }
        let (height, width) = (u16_at(8), u16_at(10));
        if bytes[12] as usize != IMAGE_CHANNELS {
            return Err(TopomapError::Format(format!("{} channels", bytes[12])));
        }
        let provenance =
            Provenance::from_u8(bytes[13]).ok_or_else(|| TopomapError::Format(format!("provenance {}", bytes[13])))?;
        let alcoholism = Alcoholism::from_index(bytes[14] as usize)
            .ok_or_else(|| TopomapError::Format(format!("alcoholism {}", bytes[14])))?;
        let stimulus = bytes[15] as usize;
        let id_len = u16_at(16);
        let id_end = 18 + id_len;
        let id = bytes.get(18..id_end).ok_or_else(short)?;
        let subject_id =
            String::from_utf8(id.to_vec()).map_err(|_| TopomapError::Format("subject id is not UTF-8".into()))?;
        let n = IMAGE_CHANNELS * height * width;
        let body = &bytes[id_end..];
        if body.len() != n * 4 {
            return Err(TopomapError::Format(format!("expected {} pixel bytes, found {}", n * 4, body.len())));
        }
        let pixels = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let img = Self { height, width, pixels, subject_id, alcoholism, stimulus, provenance };
        img.validate()?;
        Ok(img)
    }

    pub fn save(&self, path: &Path) -> Result<(), TopomapError> {
        fs::write(path, self.to_bytes()?).map_err(|e| TopomapError::Io(path.to_path_buf(), e))
    }

    pub fn load(path: &Path) -> Result<Self, TopomapError> {
        Self::from_bytes(&fs::read(path).map_err(|e| TopomapError::Io(path.to_path_buf(), e))?)
    }

    /// 8-bit RGB PNG, each pixel repeated `scale × scale`.
    pub fn write_png(&self, path: &Path, scale: usize) -> Result<(), TopomapError> {
        let scale = scale.max(1);
        let (h, w) = (self.height * scale, self.width * scale);
        let mut data = Vec::with_capacity(h * w * 3);
        for r in 0..h {
            for c in 0..w {
                for ch in 0..3 {
                    let v = self.pixel(ch, r / scale, c / scale).clamp(0.0, 1.0);
                    data.push((v * 255.0).round() as u8);
                }
            }
        }
        let io = |e: std::io::Error| TopomapError::Io(path.to_path_buf(), e);
        let file = fs::File::create(path).map_err(io)?;
        let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let png_err = |e: png::EncodingError| TopomapError::Format(format!("png: {e}"));
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(&data).map_err(png_err)?;
        writer.finish().map_err(png_err)
    }
}
