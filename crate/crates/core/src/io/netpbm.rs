//! Binary Netpbm (P5, P6) and grayscale PFM codecs.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{DepthMap, GrayImage, Plane, RgbImage};

/// Raw samples of a P5 or P6 file. `channels` is 1 or 3.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pnm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn error(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            offset,
            message: message.into(),
        }
    }

    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<(usize, &'a str)> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self
            .bytes
            .get(self.pos)
            .is_some_and(|b| !b.is_ascii_whitespace())
        {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.error(start, "unexpected end of header"));
        }
        let s = std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| self.error(start, "header is not ASCII"))?;
        Ok((start, s))
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let (at, s) = self.token()?;
        s.parse()
            .map_err(|_| self.error(at, format!("invalid {what} {s:?}")))
    }

    /// Exactly one whitespace byte separates the header from the payload.
    fn header_end(&mut self) -> Result<()> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.error(self.pos, "missing whitespace after header")),
        }
    }

    /// Reads a newline-terminated header line (PFM style).
    fn line(&mut self) -> Result<(usize, &'a str)> {
        let start = self.pos;
        let end = self.bytes[start..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|i| start + i)
            .ok_or_else(|| self.error(start, "unterminated header line"))?;
        self.pos = end + 1;
        let s = std::str::from_utf8(&self.bytes[start..end])
            .map_err(|_| self.error(start, "header is not ASCII"))?;
        Ok((start, s.trim()))
    }
}

fn check_payload(c: &Cursor, needed: usize) -> Result<()> {
    let have = c.bytes.len() - c.pos;
    if have < needed {
        return Err(c.error(
            c.bytes.len(),
            format!(
                "truncated payload: expected {needed} bytes after offset {}, got {have}",
                c.pos
            ),
        ));
    }
    if have > needed {
        return Err(c.error(
            c.pos + needed,
            format!("{} trailing bytes after payload", have - needed),
        ));
    }
    Ok(())
}

pub fn decode_pnm(bytes: &[u8], path: &Path) -> Result<Pnm> {
    let mut c = Cursor {
        bytes,
        pos: 0,
        path,
    };
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(c.error(0, "expected P5 or P6 magic")),
    };
    c.pos = 2;
    let width = c.number("width")?;
    let height = c.number("height")?;
    let maxval_at = c.pos;
    let maxval = c.number("maxval")?;
    if !(1..=65535).contains(&maxval) {
        return Err(c.error(maxval_at, format!("maxval {maxval} outside 1..=65535")));
    }
    c.header_end()?;
    let wide = maxval > 255;
    let count = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| c.error(0, "image dimensions overflow"))?;
    check_payload(&c, count * if wide { 2 } else { 1 })?;
    let payload = &bytes[c.pos..];
    let samples: Vec<u16> = if wide {
        payload
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]))
            .collect()
    } else {
        payload.iter().map(|&b| b as u16).collect()
    };
    if let Some(i) = samples.iter().position(|&s| s as usize > maxval) {
        let offset = c.pos + i * if wide { 2 } else { 1 };
        return Err(c.error(
            offset,
            format!("sample {} exceeds maxval {maxval}", samples[i]),
        ));
    }
    Ok(Pnm {
        width,
        height,
        channels,
        maxval: maxval as u16,
        samples,
    })
}

pub fn encode_pnm(img: &Pnm) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n{}\n", img.width, img.height, img.maxval).into_bytes();
    if img.maxval > 255 {
        for s in &img.samples {
            out.extend_from_slice(&s.to_be_bytes());
        }
    } else {
        out.extend(img.samples.iter().map(|&s| s as u8));
    }
    out
}

impl Pnm {
    fn normalized(&self) -> impl Iterator<Item = f32> + '_ {
        let scale = 1.0 / self.maxval as f64;
        self.samples.iter().map(move |&s| (s as f64 * scale) as f32)
    }

    pub fn to_gray(&self, path: &Path) -> Result<GrayImage> {
        if self.channels != 1 {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: "expected a grayscale (P5) image".into(),
            });
        }
        Plane::from_vec(self.width, self.height, self.normalized().collect())
    }

    pub fn to_rgb(&self, path: &Path) -> Result<RgbImage> {
        if self.channels != 3 {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: "expected a color (P6) image".into(),
            });
        }
        let v: Vec<f32> = self.normalized().collect();
        Plane::from_vec(
            self.width,
            self.height,
            v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        )
    }

    /// Quantizes `[0, 1]` values (clamped) to `0..=maxval`.
    pub fn from_gray(img: &GrayImage, maxval: u16) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            channels: 1,
            maxval,
            samples: img
                .as_slice()
                .iter()
                .map(|&x| quantize(x, maxval))
                .collect(),
        }
    }

    pub fn from_rgb(img: &RgbImage, maxval: u16) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            channels: 3,
            maxval,
            samples: img
                .as_slice()
                .iter()
                .flat_map(|p| p.map(|x| quantize(x, maxval)))
                .collect(),
        }
    }
}

fn quantize(x: f32, maxval: u16) -> u16 {
    let m = maxval as f64;
    (x as f64 * m).round().clamp(0.0, m) as u16
}

pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<DepthMap> {
    let mut c = Cursor {
        bytes,
        pos: 0,
        path,
    };
    let (_, magic) = c.line()?;
    match magic {
        "Pf" => {}
        "PF" => return Err(c.error(0, "color PFM is not supported, expected Pf")),
        _ => return Err(c.error(0, format!("expected Pf magic, got {magic:?}"))),
    }
    let (dims_at, dims) = c.line()?;
    let mut it = dims.split_whitespace();
    let mut dim = |what: &str| -> Result<usize> {
        it.next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| c_err(path, dims_at, format!("invalid {what} in {dims:?}")))
    };
    let width = dim("width")?;
    let height = dim("height")?;
    if it.next().is_some() {
        return Err(c.error(
            dims_at,
            format!("unexpected data in dimension line {dims:?}"),
        ));
    }
    let (scale_at, scale_line) = c.line()?;
    let scale: f64 = scale_line
        .parse()
        .map_err(|_| c.error(scale_at, format!("invalid scale {scale_line:?}")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(c.error(scale_at, "scale must be finite and nonzero"));
    }
    let little = scale < 0.0;
    let count = width
        .checked_mul(height)
        .ok_or_else(|| c.error(dims_at, "image dimensions overflow"))?;
    check_payload(&c, count * 4)?;
    let values: Vec<f32> = bytes[c.pos..]
        .chunks_exact(4)
        .map(|b| {
            let b = [b[0], b[1], b[2], b[3]];
            if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            }
        })
        .collect();
    // Rows are stored bottom-up.
    let mut data = Vec::with_capacity(count);
    for row in values.chunks(width.max(1)).rev() {
        data.extend_from_slice(row);
    }
    Plane::from_vec(width, height, data)
}

fn c_err(path: &Path, offset: usize, message: String) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        offset,
        message,
    }
}

/// Little-endian PFM with scale -1.
pub fn encode_pfm(img: &DepthMap) -> Vec<u8> {
    let (w, h) = img.dims();
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    for v in (0..h).rev() {
        for u in 0..w {
            out.extend_from_slice(&img.get(u, v).to_le_bytes());
        }
    }
    out
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_pnm(path: &Path) -> Result<Pnm> {
    decode_pnm(&read_bytes(path)?, path)
}

pub fn write_pnm(path: &Path, img: &Pnm) -> Result<()> {
    write_bytes(path, &encode_pnm(img))
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    read_pnm(path)?.to_gray(path)
}

pub fn write_pgm(path: &Path, img: &GrayImage, maxval: u16) -> Result<()> {
    write_pnm(path, &Pnm::from_gray(img, maxval))
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    read_pnm(path)?.to_rgb(path)
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    write_pnm(path, &Pnm::from_rgb(img, 255))
}

pub fn read_pfm(path: &Path) -> Result<DepthMap> {
    decode_pfm(&read_bytes(path)?, path)
}

pub fn write_pfm(path: &Path, img: &DepthMap) -> Result<()> {
    write_bytes(path, &encode_pfm(img))
}
