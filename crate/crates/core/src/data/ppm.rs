//! Binary 8-bit PPM (P6) image I/O.
//!
//! The file stores interleaved RGB rows; tensors use planar `[3, H, W]`.
//! Values map to [0,1] by dividing by 255, so a save/load round trip only
//! loses quantization.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::fs;
use std::path::Path;

fn parse_err(msg: impl Into<String>) -> Error {
    Error::ImageParse(msg.into())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_ws_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<&str> {
        self.skip_ws_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(parse_err("unexpected end of header"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| parse_err("non-utf8 header"))
    }

    fn number(&mut self) -> Result<usize> {
        let t = self.token()?;
        t.parse().map_err(|_| parse_err(format!("bad number {t:?} in header")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.token()?;
    if magic != "P6" {
        return Err(parse_err(format!("unsupported magic {magic:?}, want P6")));
    }
    let w = cur.number()?;
    let h = cur.number()?;
    let maxval = cur.number()?;
    if maxval != 255 {
        return Err(parse_err(format!("unsupported maxval {maxval}, want 255")));
    }
    if w == 0 || h == 0 {
        return Err(parse_err("zero image dimension"));
    }
    // exactly one whitespace byte separates the header from the payload
    if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
        return Err(parse_err("missing separator after maxval"));
    }
    cur.pos += 1;
    let need = 3 * w * h;
    let payload = &bytes[cur.pos..];
    if payload.len() < need {
        return Err(parse_err(format!("payload truncated: need {need} bytes, have {}", payload.len())));
    }
    let mut data = vec![0.0; need];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                data[(c * h + y) * w + x] = payload[(y * w + x) * 3 + c] as f64 / 255.0;
            }
        }
    }
    Ok(Tensor::from_vec(data, &[3, h, w]))
}

pub fn encode(t: &Tensor) -> Result<Vec<u8>> {
    let s = t.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::InvalidArg { op: "save_image", msg: format!("expected [3,H,W], got {s:?}") });
    }
    let (h, w) = (s[1], s[2]);
    let data = t.data();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArg { op: "save_image", msg: "non-finite pixel values".into() });
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out.push((data[(c * h + y) * w + x].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    Ok(out)
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    decode(&fs::read(path.as_ref())?)
}

pub fn save_image(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    Ok(fs::write(path.as_ref(), encode(t)?)?)
}
