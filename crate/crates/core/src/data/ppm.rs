//! Binary PPM (`P6`, maxval 255) codec.

use super::DataError;
use crate::tensor::{Shape, Tensor};

fn err(offset: usize, reason: impl Into<String>) -> DataError {
    DataError::Ppm {
        offset,
        reason: reason.into(),
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize, DataError> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(err(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err(start, format!("{what} out of range")))
    }
}

/// Decodes a `P6` image into a `(1, H, W, 3)` tensor with values `p / 255`.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor<f32>, DataError> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(err(0, "bad magic, expected P6"));
    }
    let mut hdr = Header { bytes, pos: 2 };
    if !hdr.bytes.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return Err(err(2, "expected whitespace after magic"));
    }
    let width = hdr.number("width")?;
    let height = hdr.number("height")?;
    let maxval_at = {
        hdr.skip_space();
        hdr.pos
    };
    let maxval = hdr.number("maxval")?;
    if maxval != 255 {
        return Err(err(maxval_at, format!("maxval {maxval} unsupported, expected 255")));
    }
    if width == 0 || height == 0 {
        return Err(err(maxval_at, format!("empty image {width}x{height}")));
    }
    if !bytes.get(hdr.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(err(hdr.pos, "expected a single whitespace byte before pixel data"));
    }
    let start = hdr.pos + 1;
    let need = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(3))
        .ok_or_else(|| err(0, "image dimensions overflow"))?;
    let available = bytes.len() - start;
    if available < need {
        return Err(err(
            bytes.len(),
            format!("truncated pixel data: {available} of {need} bytes"),
        ));
    }
    let data = bytes[start..start + need]
        .iter()
        .map(|&p| p as f32 / 255.0)
        .collect();
    Ok(Tensor::new(Shape::new(1, height, width, 3), data).expect("sized above"))
}

/// Encodes a `(1, H, W, 3)` tensor in `[0, 1]` as `P6`, rounding to 8 bits.
pub fn encode_ppm(image: &Tensor<f32>) -> Result<Vec<u8>, DataError> {
    let s = image.shape();
    if s.n != 1 || s.c != 3 {
        return Err(DataError::Invalid(format!("PPM needs a (1,H,W,3) image, got {s}")));
    }
    let mut out = format!("P6\n{} {}\n255\n", s.w, s.h).into_bytes();
    out.extend(
        image
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    Ok(out)
}
