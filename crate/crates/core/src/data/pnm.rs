//! Binary Netpbm I/O: PGM (P5) read/write, PPM (P6) read as a grayscale source.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// 8-bit grayscale image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RawImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || width * height != pixels.len() {
            return Err(Error::InvalidArgument(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }
}

struct Header<'a> {
    magic: [u8; 2],
    width: usize,
    height: usize,
    body: &'a [u8],
}

fn parse_header(bytes: &[u8]) -> std::result::Result<Header<'_>, String> {
    if bytes.len() < 2 {
        return Err("file too short for a Netpbm header".into());
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // Skip whitespace and `#` comments.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err("truncated header".into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(format!("expected a number in header at byte {start}"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| "header number out of range".to_string())?;
    }
    // Exactly one whitespace byte separates maxval from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err("truncated header".into()),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(format!("zero image dimension {width}x{height}"));
    }
    if maxval != 255 {
        return Err(format!("unsupported maxval {maxval} (only 255)"));
    }
    Ok(Header {
        magic,
        width,
        height,
        body: &bytes[pos..],
    })
}

/// Decodes a P5 or P6 image; color pixels become the unweighted mean of their channels.
pub fn decode(bytes: &[u8]) -> std::result::Result<RawImage, String> {
    let h = parse_header(bytes)?;
    let channels = match &h.magic {
        b"P5" => 1,
        b"P6" => 3,
        other => return Err(format!("unsupported magic {:?}", String::from_utf8_lossy(other))),
    };
    let n = h.width * h.height;
    if h.body.len() < n * channels {
        return Err(format!(
            "raster truncated: expected {} bytes, found {}",
            n * channels,
            h.body.len()
        ));
    }
    let pixels = if channels == 1 {
        h.body[..n].to_vec()
    } else {
        h.body[..n * 3]
            .chunks_exact(3)
            .map(|c| ((c[0] as u32 + c[1] as u32 + c[2] as u32 + 1) / 3) as u8)
            .collect()
    };
    Ok(RawImage {
        width: h.width,
        height: h.height,
        pixels,
    })
}

pub fn encode_pgm(img: &RawImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn read_image(path: &Path) -> Result<RawImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|reason| Error::malformed(path, reason))
}

pub fn write_pgm(path: &Path, img: &RawImage) -> Result<()> {
    fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let mut bytes = b"P5\n# made by hand\n3  2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 1, 2, 3, 4, 255]);
        let img = decode(&bytes).unwrap();
        assert_eq!((img.width, img.height), (3, 2));
        assert_eq!(img.pixels, [0, 1, 2, 3, 4, 255]);
    }

    #[test]
    fn color_channels_average() {
        let mut bytes = b"P6 1 1 255\n".to_vec();
        bytes.extend_from_slice(&[30, 60, 90]);
        assert_eq!(decode(&bytes).unwrap().pixels, [60]);
    }

    #[test]
    fn rejects_truncation_and_unsupported_variants() {
        assert!(decode(b"P5\n4 4").is_err());
        assert!(decode(b"P5\n2 2\n255\n\x01\x02").is_err());
        assert!(decode(b"P5\n1 1\n65535\n\x00\x00").is_err());
        assert!(decode(b"P2\n1 1\n255\n0").is_err());
    }

    proptest! {
        #[test]
        fn pgm_round_trips(w in 1usize..20, h in 1usize..20, seed in any::<u8>()) {
            let pixels = (0..w * h).map(|i| (i as u8).wrapping_mul(31).wrapping_add(seed)).collect();
            let img = RawImage::new(w, h, pixels).unwrap();
            prop_assert_eq!(decode(&encode_pgm(&img)).unwrap(), img);
        }
    }
}
