//! Scalar image fields and their grayscale file formats.
//!
//! Images are stored row-major (lexicographic vectorization): pixel `(i, j)`
//! lives at index `i * width + j`, with row 0 at the top.

use std::io::Cursor;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on decoded pixel counts; keeps hostile headers from forcing
/// huge allocations.
pub const MAX_PIXELS: usize = 1 << 26;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::DimensionMismatch {
                context: "image data",
                expected: height * width,
                actual: data.len(),
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    /// Square image from a flat vector of length `side * side`.
    pub fn square(side: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(side, side, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.width + j] = v;
    }

    /// Clamps every pixel into `[0, 1]`; returns how many were changed.
    pub fn clip_unit(&mut self) -> usize {
        let mut changed = 0;
        for v in &mut self.data {
            let c = v.clamp(0.0, 1.0);
            if c != *v || v.is_nan() {
                changed += 1;
                *v = if v.is_nan() { 0.0 } else { c };
            }
        }
        changed
    }

    pub fn clipped_unit(mut self) -> Self {
        self.clip_unit();
        self
    }

    /// Reads a PGM, PNG or raw `.f64` file, chosen by extension.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let bytes = std::fs::read(path)?;
        match extension(path).as_deref() {
            Some("png") => decode_png(&bytes),
            Some("f64") => decode_f64(&bytes),
            _ => decode_pgm(&bytes),
        }
    }

    /// Writes a 16-bit PGM or PNG file, or a lossless `.f64` file, chosen by
    /// extension. PGM and PNG values are clamped to `[0, 1]` and quantized.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = match extension(path).as_deref() {
            Some("png") => encode_png(self)?,
            Some("f64") => encode_f64(self),
            _ => encode_pgm(self),
        };
        std::fs::write(path, bytes)?;
        Ok(())
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
}

fn quantize16(v: f64) -> u16 {
    let c = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (c * 65535.0).round() as u16
}

/// Binary 16-bit PGM (`P5`, maxval 65535, big-endian samples).
pub fn encode_pgm(img: &ImageGrid) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", img.width, img.height).into_bytes();
    out.reserve(img.len() * 2);
    for &v in &img.data {
        out.extend_from_slice(&quantize16(v).to_be_bytes());
    }
    out
}

struct PgmHeader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PgmHeader<'a> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
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
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format("PGM", format!("expected {what}")));
        }
        // at most 9 digits keeps the value far from overflow
        if self.pos - start > 9 {
            return Err(Error::format("PGM", format!("{what} too large")));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        Ok(text.parse().expect("bounded digit run"))
    }
}

/// Decodes binary (`P5`) or ASCII (`P2`) PGM with any maxval in `1..=65535`.
/// Samples are mapped linearly to `value / maxval`.
pub fn decode_pgm(bytes: &[u8]) -> Result<ImageGrid> {
    if bytes.len() < 2 || bytes[0] != b'P' || !matches!(bytes[1], b'2' | b'5') {
        return Err(Error::format("PGM", "missing P2/P5 magic"));
    }
    let binary = bytes[1] == b'5';
    let mut h = PgmHeader { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::format("PGM", "zero image dimension"));
    }
    if !(1..=65535).contains(&maxval) {
        return Err(Error::format("PGM", format!("maxval {maxval} out of range")));
    }
    let count = width
        .checked_mul(height)
        .filter(|&c| c <= MAX_PIXELS)
        .ok_or_else(|| Error::format("PGM", "image too large"))?;
    let scale = 1.0 / maxval as f64;
    let mut data = Vec::with_capacity(count);
    if binary {
        // exactly one whitespace byte separates the header from the raster
        if h.pos >= bytes.len() || !bytes[h.pos].is_ascii_whitespace() {
            return Err(Error::format("PGM", "missing raster separator"));
        }
        let raster = &bytes[h.pos + 1..];
        let sample = if maxval < 256 { 1 } else { 2 };
        if raster.len() < count * sample {
            return Err(Error::format(
                "PGM",
                format!("raster truncated: need {} bytes, have {}", count * sample, raster.len()),
            ));
        }
        if sample == 1 {
            data.extend(raster[..count].iter().map(|&b| b as f64 * scale));
        } else {
            data.extend(
                raster[..count * 2]
                    .chunks_exact(2)
                    .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 * scale),
            );
        }
    } else {
        for _ in 0..count {
            let v = h.number("sample")?;
            data.push(v as f64 * scale);
        }
    }
    ImageGrid::new(height, width, data)
}

const F64_MAGIC: &[u8] = b"GRF64\n";

/// Lossless raster: `GRF64\n<width> <height>\n` then little-endian f64
/// samples in row-major order.
pub fn encode_f64(img: &ImageGrid) -> Vec<u8> {
    let mut out = F64_MAGIC.to_vec();
    out.extend_from_slice(format!("{} {}\n", img.width, img.height).as_bytes());
    out.reserve(img.len() * 8);
    for v in &img.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_f64(bytes: &[u8]) -> Result<ImageGrid> {
    let rest = bytes
        .strip_prefix(F64_MAGIC)
        .ok_or_else(|| Error::format("f64 image", "missing magic"))?;
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format("f64 image", "unterminated header"))?;
    let header = std::str::from_utf8(&rest[..nl]).map_err(|_| Error::format("f64 image", "header is not text"))?;
    let dims: Vec<usize> = header
        .split(' ')
        .map(|t| t.parse::<usize>().map_err(|_| Error::format("f64 image", format!("bad dimension {t:?}"))))
        .collect::<Result<_>>()?;
    let [width, height] = dims[..] else {
        return Err(Error::format("f64 image", "expected width and height"));
    };
    let count = width
        .checked_mul(height)
        .filter(|&c| c > 0 && c <= MAX_PIXELS)
        .ok_or_else(|| Error::format("f64 image", "bad image size"))?;
    let raster = &rest[nl + 1..];
    if raster.len() != count * 8 {
        return Err(Error::format(
            "f64 image",
            format!("raster has {} bytes, expected {}", raster.len(), count * 8),
        ));
    }
    let data = raster
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    ImageGrid::new(height, width, data)
}

/// 16-bit grayscale PNG.
pub fn encode_png(img: &ImageGrid) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::format("PNG", e.to_string()))?;
        let raster: Vec<u8> = img
            .data
            .iter()
            .flat_map(|&v| quantize16(v).to_be_bytes())
            .collect();
        writer
            .write_image_data(&raster)
            .map_err(|e| Error::format("PNG", e.to_string()))?;
    }
    Ok(out)
}

/// Decodes grayscale (optionally with alpha, which is dropped) PNG at any bit
/// depth.
pub fn decode_png(bytes: &[u8]) -> Result<ImageGrid> {
    let limits = png::Limits {
        bytes: MAX_PIXELS * 4,
    };
    let mut decoder = png::Decoder::new_with_limits(Cursor::new(bytes), limits);
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::format("PNG", e.to_string()))?;
    let (color, depth) = reader.output_color_type();
    let channels = match color {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        other => {
            return Err(Error::format(
                "PNG",
                format!("expected grayscale image, found {other:?}"),
            ))
        }
    };
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format("PNG", "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format("PNG", e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    if w.checked_mul(h).is_none_or(|c| c > MAX_PIXELS) {
        return Err(Error::format("PNG", "image too large"));
    }
    let mut data = Vec::with_capacity(w * h);
    for row in buf[..info.buffer_size()].chunks_exact(info.line_size) {
        match depth {
            png::BitDepth::Sixteen => {
                for px in row.chunks_exact(2 * channels).take(w) {
                    data.push(u16::from_be_bytes([px[0], px[1]]) as f64 / 65535.0);
                }
            }
            png::BitDepth::Eight => {
                for px in row.chunks_exact(channels).take(w) {
                    data.push(px[0] as f64 / 255.0);
                }
            }
            other => {
                return Err(Error::format("PNG", format!("unexpected bit depth {other:?}")));
            }
        }
    }
    ImageGrid::new(h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> ImageGrid {
        let n = h * w;
        ImageGrid::new(h, w, (0..n).map(|k| k as f64 / (n - 1) as f64).collect()).unwrap()
    }

    #[test]
    fn pgm_round_trip_within_quantization() {
        let img = ramp(5, 7);
        let back = decode_pgm(&encode_pgm(&img)).unwrap();
        assert_eq!(back.shape(), (5, 7));
        for (a, b) in img.as_slice().iter().zip(back.as_slice()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-15);
        }
    }

    #[test]
    fn png_round_trip_within_quantization() {
        let img = ramp(4, 9);
        let back = decode_png(&encode_png(&img).unwrap()).unwrap();
        assert_eq!(back.shape(), (4, 9));
        for (a, b) in img.as_slice().iter().zip(back.as_slice()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-15);
        }
    }

    #[test]
    fn f64_round_trip_is_exact() {
        let img = ImageGrid::new(2, 3, vec![0.1, -2.5, 1e300, 0.0, f64::MIN_POSITIVE, 1.0 / 3.0]).unwrap();
        let bytes = encode_f64(&img);
        assert_eq!(decode_f64(&bytes).unwrap(), img);
        assert!(decode_f64(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_f64(b"GRF64\n0 3\n").is_err());
        assert!(decode_f64(b"GRF64\n2 3 4\n").is_err());
    }

    #[test]
    fn ascii_pgm_with_comments() {
        let text = b"P2\n# a comment\n2 2\n# another\n10\n0 5\n10 2\n";
        let img = decode_pgm(text).unwrap();
        assert_eq!(img.as_slice(), &[0.0, 0.5, 1.0, 0.2]);
    }

    #[test]
    fn eight_bit_binary_pgm() {
        let mut bytes = b"P5 3 1 255\n".to_vec();
        bytes.extend_from_slice(&[0, 51, 255]);
        let img = decode_pgm(&bytes).unwrap();
        assert_eq!(img.as_slice(), &[0.0, 0.2, 1.0]);
    }

    #[test]
    fn truncated_raster_is_rejected() {
        let mut bytes = b"P5\n4 4\n65535\n".to_vec();
        bytes.extend_from_slice(&[0u8; 10]);
        assert!(matches!(decode_pgm(&bytes), Err(Error::Format { .. })));
    }

    #[test]
    fn absurd_dimensions_are_rejected() {
        assert!(decode_pgm(b"P5\n999999999 999999999\n255\n").is_err());
        assert!(decode_pgm(b"P5\n0 3\n255\n").is_err());
        assert!(decode_pgm(b"P5\n2 2\n70000\n").is_err());
        assert!(decode_pgm(b"P6\n2 2\n255\n").is_err());
    }

    #[test]
    fn clip_counts_changes() {
        let mut img = ImageGrid::new(1, 4, vec![-0.5, 0.3, 1.2, f64::NAN]).unwrap();
        assert_eq!(img.clip_unit(), 3);
        assert_eq!(img.as_slice(), &[0.0, 0.3, 1.0, 0.0]);
    }
}
