//! Binary netpbm I/O: P6 for rendered scenes, P5 (0/255) for label masks.

use crate::error::{Error, Result};
use crate::grid::{ImageRgb, Mask};

pub fn encode_ppm(image: &ImageRgb) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.reserve(image.pixels.len() * 3);
    for px in &image.pixels {
        out.extend_from_slice(px);
    }
    out
}

pub fn encode_pgm(mask: &Mask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.bits().iter().map(|&b| if b { 255u8 } else { 0 }));
    out
}

struct Header {
    width: usize,
    height: usize,
    body: usize,
}

fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<Header> {
    let bad = |msg: &str| Error::MalformedImage(msg.to_string());
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(bad(&format!("expected {} header", String::from_utf8_lossy(magic))));
    }
    let mut at = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // whitespace and '#' comments between tokens
        loop {
            match bytes.get(at) {
                Some(b) if b.is_ascii_whitespace() => at += 1,
                Some(b'#') => {
                    while bytes.get(at).is_some_and(|&b| b != b'\n') {
                        at += 1;
                    }
                }
                _ => break,
            }
        }
        let begin = at;
        while bytes.get(at).is_some_and(u8::is_ascii_digit) {
            at += 1;
        }
        if begin == at {
            return Err(bad("truncated header"));
        }
        *field = std::str::from_utf8(&bytes[begin..at])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("header value out of range"))?;
    }
    if !bytes.get(at).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("missing separator after header"));
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(bad(&format!("unsupported maxval {maxval}")));
    }
    Ok(Header {
        width,
        height,
        body: at + 1,
    })
}

fn body<'a>(bytes: &'a [u8], h: &Header, channels: usize) -> Result<&'a [u8]> {
    let want = h
        .width
        .checked_mul(h.height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| Error::MalformedImage("image too large".into()))?;
    let data = &bytes[h.body..];
    if data.len() != want {
        return Err(Error::MalformedImage(format!(
            "expected {want} bytes of pixel data, found {}",
            data.len()
        )));
    }
    Ok(data)
}

pub fn decode_ppm(bytes: &[u8]) -> Result<ImageRgb> {
    let h = parse_header(bytes, b"P6")?;
    let data = body(bytes, &h, 3)?;
    Ok(ImageRgb {
        width: h.width,
        height: h.height,
        pixels: data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
    })
}

/// Only the values 0 and 255 are accepted.
pub fn decode_pgm(bytes: &[u8]) -> Result<Mask> {
    let h = parse_header(bytes, b"P5")?;
    let data = body(bytes, &h, 1)?;
    let bits = data
        .iter()
        .map(|&v| match v {
            0 => Ok(false),
            255 => Ok(true),
            other => Err(Error::MalformedImage(format!("label value {other} is not 0 or 255"))),
        })
        .collect::<Result<Vec<_>>>()?;
    Mask::from_bits(h.width, h.height, bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Pos, COLOR_FREE, COLOR_GOAL};

    #[test]
    fn ppm_round_trip() {
        let img = ImageRgb {
            width: 3,
            height: 2,
            pixels: vec![COLOR_FREE, COLOR_GOAL, [1, 2, 3], [0, 0, 0], [9, 9, 9], [255, 0, 0]],
        };
        let bytes = encode_ppm(&img);
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(decode_ppm(&bytes).unwrap(), img);
    }

    #[test]
    fn pgm_round_trip_and_comments() {
        let mut m = Mask::new(4, 2);
        m.set(Pos::new(1, 3), true);
        let bytes = encode_pgm(&m);
        assert_eq!(decode_pgm(&bytes).unwrap(), m);
        let mut commented = b"P5 # label\n4 2\n# max\n255\n".to_vec();
        commented.extend_from_slice(&bytes[bytes.len() - 8..]);
        assert_eq!(decode_pgm(&commented).unwrap(), m);
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        assert!(decode_pgm(b"P6\n1 1\n255\n\0\0\0").is_err());
        assert!(decode_pgm(b"P5\n2 1\n255\n\0").is_err());
        assert!(decode_pgm(b"P5\n1 1\n255\n\x07").is_err());
        assert!(decode_pgm(b"P5\n1 1\n15\n\0").is_err());
        assert!(decode_ppm(b"P6\n1").is_err());
        assert!(decode_ppm(b"").is_err());
    }
}
