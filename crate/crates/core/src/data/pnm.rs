//! Binary netpbm reading and writing: P5 (grey) and P6 (RGB), maxval 255.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pnm {
    pub width: usize,
    pub height: usize,
    /// 1 for P5, 3 for P6.
    pub channels: usize,
    /// Interleaved 8-bit samples.
    pub pixels: Vec<u8>,
}

impl Pnm {
    pub fn grey(width: usize, height: usize, pixels: Vec<u8>) -> Self {
        debug_assert_eq!(pixels.len(), width * height);
        Self {
            width,
            height,
            channels: 1,
            pixels,
        }
    }

    pub fn rgb(width: usize, height: usize, pixels: Vec<u8>) -> Self {
        debug_assert_eq!(pixels.len(), width * height * 3);
        Self {
            width,
            height,
            channels: 3,
            pixels,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 3 { "P6" } else { "P5" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut pos = 0;
        let magic = next_token(bytes, &mut pos).ok_or_else(|| Error::format(path, "magic", "missing"))?;
        let channels = match magic {
            b"P5" => 1,
            b"P6" => 3,
            other => {
                return Err(Error::format(
                    path,
                    "magic",
                    String::from_utf8_lossy(other).into_owned(),
                ))
            }
        };
        let mut number = |field: &str| -> Result<usize> {
            let tok = next_token(bytes, &mut pos).ok_or_else(|| Error::format(path, field, "missing"))?;
            std::str::from_utf8(tok)
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::format(path, field, String::from_utf8_lossy(tok).into_owned()))
        };
        let width = number("width")?;
        let height = number("height")?;
        let maxval = number("maxval")?;
        if maxval != 255 {
            return Err(Error::format(path, "maxval", format!("{maxval} (only 255 supported)")));
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let need = width * height * channels;
        let raster = bytes.get(pos..).unwrap_or_default();
        if raster.len() != need {
            return Err(Error::format(
                path,
                "raster",
                format!("expected {need} bytes, found {}", raster.len()),
            ));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels: raster.to_vec(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }
}

/// Next whitespace-delimited header token, skipping `#` comments.
fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
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
    (start < *pos).then(|| &bytes[start..*pos])
}
