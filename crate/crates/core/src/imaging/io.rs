//! Raster file formats: 8-bit PNG for colour and masks, PFM and `.npy`
//! float layouts for depth. Depth zero marks an invalid pixel on disk.

use std::io::Cursor;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use image::{GrayImage, ImageFormat, RgbImage};

use super::{DepthMap, Image2D, Mask2D};
use crate::{Error, Result, Scalar};

fn to_u8<T: Scalar>(v: T) -> u8 {
    (v.to_f64_lossy().clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode(buf: impl FnOnce(&mut Cursor<Vec<u8>>) -> image::ImageResult<()>) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    buf(&mut out).map_err(|e| Error::InvalidParameter(format!("png encoding failed: {e}")))?;
    Ok(out.into_inner())
}

pub fn encode_image_png<T: Scalar>(img: &Image2D<T>) -> Result<Vec<u8>> {
    let raw: Vec<u8> = img.data.iter().flat_map(|p| p.map(to_u8)).collect();
    let buf = RgbImage::from_raw(img.width as u32, img.height as u32, raw)
        .ok_or_else(|| Error::Shape("image buffer size".into()))?;
    encode(|c| buf.write_to(c, ImageFormat::Png))
}

pub fn decode_image_png<T: Scalar>(bytes: &[u8], origin: &Path) -> Result<Image2D<T>> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| Error::parse(origin, e.to_string()))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| p.0.map(|v| T::lit(v as f64 / 255.0))).collect();
    Image2D::new(w, h, data)
}

pub fn encode_mask_png(mask: &Mask2D) -> Result<Vec<u8>> {
    let raw = mask.data.iter().map(|&v| if v != 0 { 255 } else { 0 }).collect();
    let buf = GrayImage::from_raw(mask.width as u32, mask.height as u32, raw)
        .ok_or_else(|| Error::Shape("mask buffer size".into()))?;
    encode(|c| buf.write_to(c, ImageFormat::Png))
}

/// Decodes a mask; any channel value above 127 counts as set.
pub fn decode_mask_png(bytes: &[u8], origin: &Path) -> Result<Mask2D> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| Error::parse(origin, e.to_string()))?
        .to_luma8();
    Ok(Mask2D {
        width: img.width() as usize,
        height: img.height() as usize,
        data: img.pixels().map(|p| (p.0[0] > 127) as u8).collect(),
    })
}

/// Single-channel little-endian PFM, rows stored bottom to top.
pub fn encode_depth_pfm<T: Scalar>(depth: &DepthMap<T>) -> Vec<u8> {
    let (w, h) = (depth.width, depth.height);
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    let mut row = vec![0u8; 4 * w];
    for y in (0..h).rev() {
        for x in 0..w {
            let i = y * w + x;
            let v = if depth.valid[i] { depth.data[i].to_f64_lossy() as f32 } else { 0.0 };
            LittleEndian::write_f32(&mut row[4 * x..4 * x + 4], v);
        }
        out.extend_from_slice(&row);
    }
    out
}

pub fn decode_depth_pfm<T: Scalar>(bytes: &[u8], origin: &Path) -> Result<DepthMap<T>> {
    let bad = |m: &str| Error::parse(origin, m.to_string());
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PFM header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii PFM header"))?);
    }
    pos += 1;
    if fields[0] != "Pf" {
        return Err(bad("expected single-channel PFM (Pf)"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("bad PFM width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("bad PFM height"))?;
    let scale: f64 = fields[3].parse().map_err(|_| bad("bad PFM scale"))?;
    let payload = bytes.get(pos..).unwrap_or(&[]);
    if payload.len() < 4 * w * h {
        return Err(bad("truncated PFM payload"));
    }
    let mut data = vec![T::zero(); w * h];
    let mut valid = vec![false; w * h];
    for (r, chunk) in payload.chunks_exact(4 * w).take(h).enumerate() {
        let y = h - 1 - r;
        for x in 0..w {
            let c = &chunk[4 * x..4 * x + 4];
            let v = if scale < 0.0 {
                LittleEndian::read_f32(c)
            } else {
                byteorder::BigEndian::read_f32(c)
            };
            if v.is_finite() && v > 0.0 {
                data[y * w + x] = T::lit(v as f64);
                valid[y * w + x] = true;
            }
        }
    }
    DepthMap::new(w, h, data, valid)
}

/// `.npy` (format 1.0) little-endian f32 array of shape (height, width).
pub fn encode_depth_npy<T: Scalar>(depth: &DepthMap<T>) -> Vec<u8> {
    let mut header = format!(
        "{{'descr': '<f4', 'fortran_order': False, 'shape': ({}, {}), }}",
        depth.height, depth.width
    );
    let unpadded = 10 + header.len() + 1;
    header.push_str(&" ".repeat((64 - unpadded % 64) % 64));
    header.push('\n');
    let mut out = b"\x93NUMPY\x01\x00".to_vec();
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for (v, ok) in depth.data.iter().zip(&depth.valid) {
        let f = if *ok { v.to_f64_lossy() as f32 } else { 0.0 };
        out.extend_from_slice(&f.to_le_bytes());
    }
    out
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_image_png<T: Scalar>(img: &Image2D<T>, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &encode_image_png(img)?)
}

pub fn read_image_png<T: Scalar>(path: impl AsRef<Path>) -> Result<Image2D<T>> {
    decode_image_png(&read(path.as_ref())?, path.as_ref())
}

pub fn write_mask_png(mask: &Mask2D, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &encode_mask_png(mask)?)
}

pub fn read_mask_png(path: impl AsRef<Path>) -> Result<Mask2D> {
    decode_mask_png(&read(path.as_ref())?, path.as_ref())
}

pub fn write_depth_pfm<T: Scalar>(depth: &DepthMap<T>, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &encode_depth_pfm(depth))
}

pub fn read_depth_pfm<T: Scalar>(path: impl AsRef<Path>) -> Result<DepthMap<T>> {
    decode_depth_pfm(&read(path.as_ref())?, path.as_ref())
}

pub fn write_depth_npy<T: Scalar>(depth: &DepthMap<T>, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &encode_depth_npy(depth))
}
