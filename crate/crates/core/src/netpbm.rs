//! Binary Netpbm image I/O: P5 (grayscale) and P6 (RGB), maxval 255 or
//! 65535. Pixel values map linearly onto [0, 1]; 16-bit samples use the
//! format's most-significant-byte-first order.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_MAXVAL: u32 = 65535;

/// Encode a `[1,H,W]` tensor as P5 or a `[3,H,W]` tensor as P6.
pub fn encode_image(image: &Tensor, maxval: u32) -> Result<Vec<u8>> {
    let s = image.shape();
    if s.len() != 3 || (s[0] != 1 && s[0] != 3) {
        return Err(Error::ImageFormat(format!(
            "expected [1,H,W] or [3,H,W] image, got {s:?}"
        )));
    }
    if maxval != 255 && maxval != 65535 {
        return Err(Error::ImageFormat(format!("maxval must be 255 or 65535, got {maxval}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let magic = if c == 1 { "P5" } else { "P6" };
    let mut out = Vec::with_capacity(32 + c * h * w * 2);
    write!(out, "{magic}\n{w} {h}\n{maxval}\n")?;
    let d = image.data();
    for i in 0..h {
        for j in 0..w {
            for ch in 0..c {
                let v = d[(ch * h + i) * w + j].clamp(0.0, 1.0);
                let q = (v * maxval as f64).round() as u32;
                if maxval == 255 {
                    out.push(q as u8);
                } else {
                    out.extend_from_slice(&(q as u16).to_be_bytes());
                }
            }
        }
    }
    Ok(out)
}

pub fn write_image(image: &Tensor, path: &Path) -> Result<()> {
    write_image_maxval(image, path, DEFAULT_MAXVAL)
}

pub fn write_image_maxval(image: &Tensor, path: &Path, maxval: u32) -> Result<()> {
    crate::fsutil::write_atomic(path, &encode_image(image, maxval)?)
}

struct HeaderParser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderParser<'a> {
    /// Skip whitespace and `#` comment lines between header tokens.
    fn skip_separators(&mut self) -> Result<()> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while let Some(&b) = self.bytes.get(self.pos) {
                        self.pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => return Ok(()),
                None => return Err(Error::ImageFormat("truncated header".into())),
            }
        }
    }

    fn token(&mut self) -> Result<&'a str> {
        self.skip_separators()?;
        let start = self.pos;
        while let Some(b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                break;
            }
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| Error::ImageFormat("non-ASCII header token".into()))
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        let tok = self.token()?;
        tok.parse::<u32>()
            .map_err(|_| Error::ImageFormat(format!("invalid {what}: {tok:?}")))
    }
}

/// Decode a binary P5/P6 image into a `[C,H,W]` tensor scaled to [0, 1].
pub fn decode_image(bytes: &[u8]) -> Result<Tensor> {
    let mut p = HeaderParser { bytes, pos: 0 };
    let magic = p.token()?;
    let channels = match magic {
        "P5" => 1usize,
        "P6" => 3usize,
        other => return Err(Error::ImageFormat(format!("unsupported magic {other:?}"))),
    };
    let w = p.number("width")? as usize;
    let h = p.number("height")? as usize;
    let maxval = p.number("maxval")?;
    if w == 0 || h == 0 {
        return Err(Error::ImageFormat(format!("degenerate image size {w}x{h}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::ImageFormat(format!("invalid maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(p.pos) {
        Some(b) if b.is_ascii_whitespace() => p.pos += 1,
        _ => return Err(Error::ImageFormat("missing raster separator".into())),
    }
    let bytes_per_sample = if maxval < 256 { 1 } else { 2 };
    let expected = channels * w * h * bytes_per_sample;
    let raster = &bytes[p.pos..];
    if raster.len() < expected {
        return Err(Error::ImageFormat(format!(
            "truncated raster: expected {expected} bytes, found {}",
            raster.len()
        )));
    }
    if raster.len() > expected {
        return Err(Error::ImageFormat(format!(
            "trailing data: expected {expected} raster bytes, found {}",
            raster.len()
        )));
    }
    let mut t = Tensor::zeros(&[channels, h, w]);
    let scale = 1.0 / maxval as f64;
    let mut k = 0;
    for i in 0..h {
        for j in 0..w {
            for c in 0..channels {
                let q = if bytes_per_sample == 1 {
                    raster[k] as u32
                } else {
                    u16::from_be_bytes([raster[k], raster[k + 1]]) as u32
                };
                k += bytes_per_sample;
                t.data_mut()[(c * h + i) * w + j] = q as f64 * scale;
            }
        }
    }
    Ok(t)
}

pub fn read_image(path: &Path) -> Result<Tensor> {
    decode_image(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn random_image(seed: u64, shape: &[usize]) -> Tensor {
        let mut r = crate::rng::rng_from(seed);
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = r.gen::<f64>();
        }
        t
    }

    #[test]
    fn round_trip_within_half_quantization_step() {
        for (shape, maxval, bound) in [
            (&[1usize, 9, 7][..], 65535u32, 1.0 / 131070.0),
            (&[3, 5, 6][..], 65535, 1.0 / 131070.0),
            (&[1, 4, 4][..], 255, 1.0 / 510.0),
        ] {
            let img = random_image(7, shape);
            let bytes = encode_image(&img, maxval).unwrap();
            let back = decode_image(&bytes).unwrap();
            assert_eq!(back.shape(), img.shape());
            let max_err = img
                .data()
                .iter()
                .zip(back.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(max_err <= bound + 1e-15, "max_err {max_err} > {bound}");
        }
    }

    #[test]
    fn fixed_p5_header_parses() {
        let mut bytes = b"P5\n16 16\n255\n".to_vec();
        bytes.extend((0..256).map(|i| i as u8));
        let t = decode_image(&bytes).unwrap();
        assert_eq!(t.shape(), &[1, 16, 16]);
        assert!((t.data()[255] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P5\n# made by hand\n2 2\n255\n".to_vec();
        bytes.extend([0u8, 128, 255, 64]);
        let t = decode_image(&bytes).unwrap();
        assert_eq!(t.shape(), &[1, 2, 2]);
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        // maxval 0
        assert!(decode_image(b"P5\n2 2\n0\n\0\0\0\0").is_err());
        // bad magic
        assert!(decode_image(b"P4\n2 2\n255\n\0\0\0\0").is_err());
        // truncated raster
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend([0u8, 1, 2]);
        assert!(decode_image(&bytes).is_err());
        // trailing garbage
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend([0u8, 1, 2, 3, 4]);
        assert!(decode_image(&bytes).is_err());
        // wrong channel count for encode
        assert!(encode_image(&Tensor::zeros(&[2, 4, 4]), 255).is_err());
        assert!(encode_image(&Tensor::zeros(&[1, 4, 4]), 1000).is_err());
    }

    #[test]
    fn file_round_trip_p6() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        let img = random_image(11, &[3, 8, 8]);
        write_image(&img, &path).unwrap();
        let back = read_image(&path).unwrap();
        let max_err = img
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err <= 1.0 / 131070.0 + 1e-15);
    }
}
