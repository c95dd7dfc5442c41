//! Binary PGM (P5, maxval 255) read/write.
//!
//! Intensities map linearly `[0,255] -> [0,1]` on read and round to nearest
//! on write (after clamping to `[0,1]`).

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

fn malformed(path: &Path, reason: &str) -> Error {
    Error::Malformed { path: path.display().to_string(), reason: reason.into() }
}

/// Reads a token, skipping whitespace and `#` comment lines.
fn next_token(data: &[u8], pos: &mut usize) -> Option<String> {
    while *pos < data.len() {
        let b = data[*pos];
        if b == b'#' {
            while *pos < data.len() && data[*pos] != b'\n' {
                *pos += 1;
            }
        } else if b.is_ascii_whitespace() {
            *pos += 1;
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < data.len() && !data[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if *pos > start {
        Some(String::from_utf8_lossy(&data[start..*pos]).into_owned())
    } else {
        None
    }
}

pub fn read_pgm(path: &Path) -> Result<Image> {
    let data = fs::read(path).map_err(|e| io_err(path, e))?;
    let mut pos = 0;
    let magic = next_token(&data, &mut pos).ok_or_else(|| malformed(path, "empty file"))?;
    if magic != "P5" {
        return Err(malformed(path, &format!("expected P5 magic, got '{magic}'")));
    }
    let width: usize = next_token(&data, &mut pos)
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| malformed(path, "bad width"))?;
    let height: usize = next_token(&data, &mut pos)
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| malformed(path, "bad height"))?;
    let maxval: usize = next_token(&data, &mut pos)
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| malformed(path, "bad maxval"))?;
    if maxval != 255 {
        return Err(malformed(path, &format!("maxval must be 255, got {maxval}")));
    }
    // single whitespace byte after maxval
    pos += 1;
    let n = width * height;
    if data.len() < pos + n {
        return Err(malformed(path, "truncated pixel data"));
    }
    let pixels = data[pos..pos + n].iter().map(|&b| b as f64 / 255.0).collect();
    Image::new(width, height, pixels)
}

pub fn write_pgm(path: &Path, image: &Image) -> Result<()> {
    let mut out = Vec::with_capacity(image.len() + 32);
    write!(out, "P5\n{} {}\n255\n", image.width(), image.height())
        .expect("write to Vec cannot fail");
    for &p in image.pixels() {
        out.push((p.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}
