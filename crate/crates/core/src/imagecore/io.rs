use std::fs;
use std::path::Path;

use super::{BitMask, FlowField, ImageError, Raster};

/// Little-endian float tag that opens every Middlebury `.flo` file.
pub const FLO_TAG: f32 = 202021.25;

pub fn encode_flo(flow: &FlowField) -> Vec<u8> {
    let data = flow.raster().data();
    let mut out = Vec::with_capacity(12 + 4 * data.len());
    out.extend_from_slice(&FLO_TAG.to_le_bytes());
    out.extend_from_slice(&(flow.width() as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height() as i32).to_le_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_flo(bytes: &[u8]) -> Result<FlowField, ImageError> {
    if bytes.len() < 12 {
        return Err(ImageError::Truncated { expected: 12, found: bytes.len() });
    }
    let word = |i: usize| -> [u8; 4] { bytes[i..i + 4].try_into().unwrap() };
    let tag = f32::from_le_bytes(word(0));
    if tag != FLO_TAG {
        return Err(ImageError::BadMagic(tag));
    }
    let w = i32::from_le_bytes(word(4));
    let h = i32::from_le_bytes(word(8));
    if w <= 0 || h <= 0 {
        return Err(ImageError::BadDimensions { width: w as i64, height: h as i64 });
    }
    let n = w as usize * h as usize * 2;
    let payload = &bytes[12..];
    if payload.len() < 4 * n {
        return Err(ImageError::Truncated { expected: 4 * n, found: payload.len() });
    }
    let data = payload[..4 * n]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FlowField::from_raster(Raster::new(w as usize, h as usize, 2, data)?)
}

pub fn write_flo(path: impl AsRef<Path>, flow: &FlowField) -> Result<(), ImageError> {
    let path = path.as_ref();
    fs::write(path, encode_flo(flow)).map_err(|e| ImageError::io(path, e))
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowField, ImageError> {
    let path = path.as_ref();
    decode_flo(&fs::read(path).map_err(|e| ImageError::io(path, e))?)
}

/// Writes a 1- or 3-channel raster as little-endian PFM (scale −1, bottom row first).
pub fn write_pfm(path: impl AsRef<Path>, r: &Raster) -> Result<(), ImageError> {
    let path = path.as_ref();
    let tag = match r.channels() {
        1 => "Pf",
        3 => "PF",
        c => return Err(ImageError::ChannelCount(c)),
    };
    let mut out = format!("{tag}\n{} {}\n-1\n", r.width(), r.height()).into_bytes();
    let row = r.width() * r.channels();
    for y in (0..r.height()).rev() {
        for v in &r.data()[y * row..(y + 1) * row] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| ImageError::io(path, e))
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<Raster, ImageError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| ImageError::io(path, e))?;
    let (tokens, offset) = header_tokens(&bytes, 4)?;
    let channels = match tokens[0].as_str() {
        "Pf" => 1,
        "PF" => 3,
        t => return Err(ImageError::Format(format!("unknown PFM tag {t:?}"))),
    };
    let parse = |s: &str| s.parse::<f64>().map_err(|_| ImageError::Format(format!("bad PFM header field {s:?}")));
    let (w, h, scale) = (parse(&tokens[1])? as i64, parse(&tokens[2])? as i64, parse(&tokens[3])?);
    if w <= 0 || h <= 0 {
        return Err(ImageError::BadDimensions { width: w, height: h });
    }
    let (w, h) = (w as usize, h as usize);
    let n = w * h * channels;
    let payload = &bytes[offset..];
    if payload.len() < 4 * n {
        return Err(ImageError::Truncated { expected: 4 * n, found: payload.len() });
    }
    let little = scale < 0.0;
    let vals: Vec<f32> = payload[..4 * n]
        .chunks_exact(4)
        .map(|c| {
            let b: [u8; 4] = c.try_into().unwrap();
            if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) }
        })
        .collect();
    let row = w * channels;
    let mut data = Vec::with_capacity(n);
    for y in (0..h).rev() {
        data.extend_from_slice(&vals[y * row..(y + 1) * row]);
    }
    Raster::new(w, h, channels, data)
}

/// Splits `count` whitespace-separated header tokens; returns the byte offset
/// just past the single whitespace byte that terminates the last one.
fn header_tokens(bytes: &[u8], count: usize) -> Result<(Vec<String>, usize), ImageError> {
    let mut tokens = Vec::with_capacity(count);
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(ImageError::Format("truncated header".into()));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    if i >= bytes.len() {
        return Err(ImageError::Format("missing payload".into()));
    }
    Ok((tokens, i + 1))
}

/// Reads PNG (8/16 bit) or binary PPM/PGM, mapping intensities linearly to [0, 1].
/// Colour images yield 3 channels, grayscale images 1.
pub fn read_image(path: impl AsRef<Path>) -> Result<Raster, ImageError> {
    let path = path.as_ref();
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if img.color().has_color() {
        Raster::new(w, h, 3, img.to_rgb32f().into_raw())
    } else {
        Raster::new(w, h, 1, img.to_luma32f().into_raw())
    }
}

fn quantize(v: f32, max: f32) -> f32 {
    (v.clamp(0.0, 1.0) * max).round()
}

/// 16-bit PNG; values are clamped to [0, 1].
pub fn write_png16(path: impl AsRef<Path>, r: &Raster) -> Result<(), ImageError> {
    let rgb = r.to_rgb();
    let data: Vec<u16> = rgb.data().iter().map(|&v| quantize(v, 65535.0) as u16).collect();
    let buf = image::ImageBuffer::<image::Rgb<u16>, _>::from_raw(r.width() as u32, r.height() as u32, data)
        .ok_or_else(|| ImageError::Format("buffer size mismatch".into()))?;
    buf.save(path.as_ref())?;
    Ok(())
}

/// 8-bit PNG; values are clamped to [0, 1].
pub fn write_png8(path: impl AsRef<Path>, r: &Raster) -> Result<(), ImageError> {
    let rgb = r.to_rgb();
    let data: Vec<u8> = rgb.data().iter().map(|&v| quantize(v, 255.0) as u8).collect();
    let buf = image::RgbImage::from_raw(r.width() as u32, r.height() as u32, data)
        .ok_or_else(|| ImageError::Format("buffer size mismatch".into()))?;
    buf.save(path.as_ref())?;
    Ok(())
}

/// Binary PGM with 0 = visible, 255 = occluded.
pub fn write_mask_pgm(path: impl AsRef<Path>, m: &BitMask) -> Result<(), ImageError> {
    let path = path.as_ref();
    let mut out = format!("P5\n{} {}\n255\n", m.width(), m.height()).into_bytes();
    out.extend(m.data().iter().map(|&b| if b { 255u8 } else { 0 }));
    fs::write(path, out).map_err(|e| ImageError::io(path, e))
}

pub fn read_mask_pgm(path: impl AsRef<Path>) -> Result<BitMask, ImageError> {
    let img = image::open(path.as_ref())?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(BitMask::from_fn(w, h, |x, y| img.get_pixel(x as u32, y as u32)[0] > 127))
}
