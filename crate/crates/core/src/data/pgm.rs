//! Binary PGM (P5) codec. 16-bit samples are big-endian per the netpbm convention.

use crate::error::{Error, Result};

pub const MAX_DIMENSION: usize = 4096;

#[derive(Clone, Debug, PartialEq)]
pub struct DecodedPgm {
    pub width: usize,
    pub height: usize,
    pub raw: Vec<u16>,
    /// Original maxval when samples were widened to the 16-bit range.
    pub widened_from: Option<u16>,
}

pub fn encode_pgm(width: usize, height: usize, raw: &[u16]) -> Result<Vec<u8>> {
    if width == 0 || height == 0 || width > MAX_DIMENSION || height > MAX_DIMENSION {
        return Err(Error::Config(format!("cannot encode {width}x{height} frame")));
    }
    if raw.len() != width * height {
        return Err(Error::Config(format!(
            "{} samples for a {width}x{height} frame",
            raw.len()
        )));
    }
    let header = format!("P5\n{width} {height}\n65535\n");
    let mut out = Vec::with_capacity(header.len() + 2 * raw.len());
    out.extend_from_slice(header.as_bytes());
    for v in raw {
        out.extend_from_slice(&v.to_be_bytes());
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Decode(format!("pgm: malformed {what}")))
    }
}

pub fn decode_pgm(bytes: &[u8]) -> Result<DecodedPgm> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::Decode("pgm: missing P5 magic".into()));
    }
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 || width > MAX_DIMENSION || height > MAX_DIMENSION {
        return Err(Error::Decode(format!("pgm: unsupported size {width}x{height}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Decode(format!("pgm: invalid maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Decode("pgm: missing raster separator".into()));
    }
    let body = &bytes[cur.pos + 1..];
    let n = width * height;
    let wide = maxval > 255;
    let need = if wide { 2 * n } else { n };
    if body.len() < need {
        return Err(Error::Decode(format!("pgm: truncated raster ({} of {need} bytes)", body.len())));
    }
    let (raw, widened_from) = if wide {
        let raw = body[..need]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect();
        (raw, None)
    } else if maxval == 255 {
        (body[..n].iter().map(|&b| b as u16 * 257).collect(), Some(255))
    } else {
        let scale = 65535.0 / maxval as f64;
        let raw = body[..n]
            .iter()
            .map(|&b| (b as f64 * scale).round().min(65535.0) as u16)
            .collect();
        (raw, Some(maxval as u16))
    };
    Ok(DecodedPgm {
        width,
        height,
        raw,
        widened_from,
    })
}
