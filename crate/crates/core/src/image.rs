//! Row-major RGB images and binary masks with binary PPM/PGM I/O.

use crate::error::ImageError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self, ImageError> {
        let (width, height, body) = parse_pnm(bytes, b"P6", "PPM")?;
        let expected = width * height * 3;
        if body.len() != expected {
            return Err(ImageError::Size {
                expected,
                actual: body.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data: body.to_vec(),
        })
    }
}

/// Binary mask stored one byte per pixel, 0 (black) or 255 (white).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, white: bool) {
        self.data[y * self.width + x] = if white { 255 } else { 0 };
    }

    pub fn count_white(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    /// Reads a P5 file; any non-zero value is read back as white.
    pub fn from_pgm(bytes: &[u8]) -> Result<Self, ImageError> {
        let (width, height, body) = parse_pnm(bytes, b"P5", "PGM")?;
        if body.len() != width * height {
            return Err(ImageError::Size {
                expected: width * height,
                actual: body.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data: body.iter().map(|&v| if v != 0 { 255 } else { 0 }).collect(),
        })
    }
}

fn parse_pnm<'a>(
    bytes: &'a [u8],
    magic: &[u8],
    kind: &'static str,
) -> Result<(usize, usize, &'a [u8]), ImageError> {
    let err = |message: &str| ImageError::Header {
        kind,
        message: message.to_string(),
    };
    if !bytes.starts_with(magic) {
        return Err(err("bad magic"));
    }
    let mut pos = magic.len();
    let mut fields = [0usize; 3];
    for f in fields.iter_mut() {
        // skip whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(err("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err("expected a decimal field"))?;
    }
    if fields[2] != 255 {
        return Err(err("only maxval 255 is supported"));
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(err("missing raster separator"));
    }
    Ok((fields[0], fields[1], &bytes[pos + 1..]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip_is_byte_exact() {
        let mut img = RgbImage::filled(4, 3, [10, 20, 30]);
        img.data[5] = 255;
        let bytes = img.to_ppm();
        assert!(bytes.starts_with(b"P6\n4 3\n255\n"));
        let back = RgbImage::from_ppm(&bytes).unwrap();
        assert_eq!(back, img);
        assert_eq!(back.to_ppm(), bytes);
    }

    #[test]
    fn pgm_round_trip_and_comments() {
        let mut m = Mask::new(5, 2);
        m.set(4, 1, true);
        let bytes = m.to_pgm();
        assert_eq!(Mask::from_pgm(&bytes).unwrap().to_pgm(), bytes);
        let mut commented = b"P5\n# made by hand\n5 2\n255\n".to_vec();
        commented.extend_from_slice(&m.data);
        assert_eq!(Mask::from_pgm(&commented).unwrap(), m);
    }

    #[test]
    fn rejects_bad_headers() {
        assert!(Mask::from_pgm(b"P6\n1 1\n255\n\0").is_err());
        assert!(Mask::from_pgm(b"P5\n1 1\n65535\n\0\0").is_err());
        assert!(matches!(
            RgbImage::from_ppm(b"P6\n2 2\n255\n\0\0\0"),
            Err(ImageError::Size { .. })
        ));
    }
}
