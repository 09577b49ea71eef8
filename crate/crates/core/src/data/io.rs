//! Binary PGM (P5, maxval 255) masks and little-endian PFM float maps.

use std::path::Path;

use crate::error::{Error, Result};

/// An 8-bit single-channel raster (class ids, instance ids or quantized images).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::format(format!(
                "mask {width}x{height} needs {} bytes, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }
}

/// A float map with 1 or 3 channels, stored channel-major (`C x H x W`) top row first.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatMap {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl FloatMap {
    pub fn new(channels: usize, width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::format(format!(
                "PFM maps have 1 or 3 channels, not {channels}"
            )));
        }
        if data.len() != channels * width * height {
            return Err(Error::format(
                "float map size does not match its dimensions",
            ));
        }
        Ok(Self {
            channels,
            width,
            height,
            data,
        })
    }
}

/// Splits off one whitespace-delimited header token, skipping `#` comments.
fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::format("truncated header"));
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| Error::format("non-ASCII header"))
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = header_token(bytes, pos)?;
    tok.parse()
        .map_err(|_| Error::format(format!("bad {what} `{tok}`")))
}

/// Consumes the single whitespace byte that separates a header from its payload.
fn end_of_header(bytes: &[u8], pos: &mut usize) -> Result<()> {
    match bytes.get(*pos) {
        Some(b) if b.is_ascii_whitespace() => {
            *pos += 1;
            Ok(())
        }
        _ => Err(Error::format("header is not terminated by whitespace")),
    }
}

pub fn encode_pgm(mask: &Mask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    out.extend_from_slice(&mask.data);
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Mask> {
    let mut pos = 0;
    if header_token(bytes, &mut pos)? != "P5" {
        return Err(Error::format("not a binary PGM (expected P5)"));
    }
    let width = header_number(bytes, &mut pos, "width")?;
    let height = header_number(bytes, &mut pos, "height")?;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(Error::format(format!(
            "PGM maxval must be 255, found {maxval}"
        )));
    }
    end_of_header(bytes, &mut pos)?;
    let payload = &bytes[pos..];
    if payload.len() != width * height {
        return Err(Error::format(format!(
            "PGM payload is {} bytes, expected {}",
            payload.len(),
            width * height
        )));
    }
    Mask::new(width, height, payload.to_vec())
}

pub fn write_pgm(path: &Path, mask: &Mask) -> Result<()> {
    std::fs::write(path, encode_pgm(mask)).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<Mask> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn encode_pfm(map: &FloatMap) -> Result<Vec<u8>> {
    let tag = if map.channels == 3 { "PF" } else { "Pf" };
    let mut out = format!("{tag}\n{} {}\n-1.0\n", map.width, map.height).into_bytes();
    let plane = map.width * map.height;
    for row in (0..map.height).rev() {
        for col in 0..map.width {
            for c in 0..map.channels {
                let v = map.data[c * plane + row * map.width + col] as f32;
                if !v.is_finite() {
                    return Err(Error::format("PFM values must be finite"));
                }
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode_pfm(bytes: &[u8]) -> Result<FloatMap> {
    let mut pos = 0;
    let channels = match header_token(bytes, &mut pos)? {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(Error::format(format!("not a PFM file (tag `{other}`)"))),
    };
    let width = header_number(bytes, &mut pos, "width")?;
    let height = header_number(bytes, &mut pos, "height")?;
    let scale_tok = header_token(bytes, &mut pos)?;
    let scale: f64 = scale_tok
        .parse()
        .map_err(|_| Error::format(format!("bad PFM scale `{scale_tok}`")))?;
    if scale >= 0.0 {
        return Err(Error::format(
            "big-endian PFM (positive scale) is not supported",
        ));
    }
    end_of_header(bytes, &mut pos)?;
    let payload = &bytes[pos..];
    let plane = width * height;
    if payload.len() != plane * channels * 4 {
        return Err(Error::format(format!(
            "PFM payload is {} bytes, expected {}",
            payload.len(),
            plane * channels * 4
        )));
    }
    let mut data = vec![0.0; plane * channels];
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        if !v.is_finite() {
            return Err(Error::format("PFM payload contains NaN or infinity"));
        }
        let (pix, c) = (i / channels, i % channels);
        let (disk_row, col) = (pix / width, pix % width);
        let row = height - 1 - disk_row;
        data[c * plane + row * width + col] = f64::from(v);
    }
    FloatMap::new(channels, width, height, data)
}

pub fn write_pfm(path: &Path, map: &FloatMap) -> Result<()> {
    std::fs::write(path, encode_pfm(map)?).map_err(|e| Error::io(path, e))
}

pub fn read_pfm(path: &Path) -> Result<FloatMap> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::format(format!("{}: {m}", path.display())),
        other => other,
    })
}
