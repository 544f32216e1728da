//! 8-bit rasters, alpha mattes and the binary Netpbm (P5/P6) codec.
//!
//! Only maxval-255 binary files are read or written. Header comments are
//! accepted on decode and never emitted on encode.

use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ImageError {
    #[error("bad magic number at byte {offset}: expected P5 or P6")]
    BadMagic { offset: usize },
    #[error("malformed header at byte {offset}: {reason}")]
    BadHeader { offset: usize, reason: String },
    #[error("unsupported maxval {maxval} at byte {offset}: only 255 is accepted")]
    UnsupportedMaxval { offset: usize, maxval: u64 },
    #[error("truncated payload starting at byte {offset}: expected {expected} bytes, found {found}")]
    Truncated { offset: usize, expected: usize, found: usize },
    #[error("unsupported channel count {0}: expected 1 (gray) or 3 (RGB)")]
    UnsupportedChannels(usize),
    #[error("expected a {expected}-channel image, got {actual} channels")]
    ChannelCount { expected: usize, actual: usize },
    #[error("invalid raster: {0}")]
    Invalid(String),
}

/// Interleaved 8-bit raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::Invalid(format!("dimensions must be positive, got {width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(ImageError::UnsupportedChannels(channels));
        }
        let expected = width * height * channels;
        if data.len() != expected {
            return Err(ImageError::Invalid(format!(
                "sample count {} does not match {width}x{height}x{channels} = {expected}",
                data.len()
            )));
        }
        Ok(Self { width, height, channels, data })
    }

    /// Image with every sample set to `value`.
    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self, ImageError> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn sample(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn same_dimensions(&self, other: &RasterImage) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Single-channel opacity map with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaMatte {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl AlphaMatte {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::Invalid(format!("dimensions must be positive, got {width}x{height}")));
        }
        if values.len() != width * height {
            return Err(ImageError::Invalid(format!(
                "matte has {} values, expected {}",
                values.len(),
                width * height
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ImageError::Invalid(format!("matte value {v} outside [0, 1]")));
        }
        Ok(Self { width, height, values })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self, ImageError> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn matches(&self, img: &RasterImage) -> bool {
        self.width == img.width && self.height == img.height
    }

    /// Every value mapped to 1 if `>= threshold`, else 0.
    pub fn threshold(&self, threshold: f64) -> AlphaMatte {
        let values = self.values.iter().map(|&v| if v >= threshold { 1.0 } else { 0.0 }).collect();
        AlphaMatte { width: self.width, height: self.height, values }
    }

    /// `1 - α` at every pixel.
    pub fn inverted(&self) -> AlphaMatte {
        let values = self.values.iter().map(|&v| 1.0 - v).collect();
        AlphaMatte { width: self.width, height: self.height, values }
    }

    // Values must already lie in [0, 1].
    pub(crate) fn from_raw(width: usize, height: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), width * height);
        debug_assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
        Self { width, height, values }
    }
}

/// Real value to 8-bit sample: clamp to `[0, 255]`, round half away from zero.
#[inline]
pub fn quantize(value: f64) -> u8 {
    // f64::round rounds half away from zero.
    value.clamp(0.0, 255.0).round() as u8
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_whitespace_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, field: &str) -> Result<(u64, usize), ImageError> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(ImageError::BadHeader {
                offset: start,
                reason: format!("expected {field} as a decimal number"),
            });
        }
        // Digits only, so this is valid UTF-8.
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap_or_default();
        let value = text.parse::<u64>().map_err(|_| ImageError::BadHeader {
            offset: start,
            reason: format!("{field} `{text}` is out of range"),
        })?;
        Ok((value, start))
    }
}

/// Decode a binary PGM (P5) or PPM (P6) file with maxval 255.
pub fn decode_image(bytes: &[u8]) -> Result<RasterImage, ImageError> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(ImageError::BadMagic { offset: 0 }),
    };
    let mut cursor = HeaderCursor { bytes, pos: 2 };
    if !cursor.bytes.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return Err(ImageError::BadMagic { offset: 0 });
    }
    let (width, width_at) = cursor.number("width")?;
    let (height, height_at) = cursor.number("height")?;
    let (maxval, maxval_at) = cursor.number("maxval")?;
    if width == 0 {
        return Err(ImageError::BadHeader { offset: width_at, reason: "width must be positive".into() });
    }
    if height == 0 {
        return Err(ImageError::BadHeader { offset: height_at, reason: "height must be positive".into() });
    }
    if maxval != 255 {
        return Err(ImageError::UnsupportedMaxval { offset: maxval_at, maxval });
    }
    // Exactly one whitespace byte separates maxval from the payload.
    match bytes.get(cursor.pos) {
        Some(b) if b.is_ascii_whitespace() => cursor.pos += 1,
        _ => {
            return Err(ImageError::BadHeader {
                offset: cursor.pos,
                reason: "expected a single whitespace byte after maxval".into(),
            })
        }
    }
    let payload_at = cursor.pos;
    let expected = (width as usize)
        .checked_mul(height as usize)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| ImageError::BadHeader { offset: width_at, reason: "image dimensions overflow".into() })?;
    let found = bytes.len() - payload_at;
    if found < expected {
        return Err(ImageError::Truncated { offset: payload_at, expected, found });
    }
    let data = bytes[payload_at..payload_at + expected].to_vec();
    RasterImage::new(width as usize, height as usize, channels, data)
}

/// Encode with the canonical header `P5\n<w> <h>\n255\n` (or `P6`).
pub fn encode_image(img: &RasterImage) -> Result<Vec<u8>, ImageError> {
    let magic = match img.channels {
        1 => "P5",
        3 => "P6",
        c => return Err(ImageError::UnsupportedChannels(c)),
    };
    let header = format!("{magic}\n{} {}\n255\n", img.width, img.height);
    let mut out = Vec::with_capacity(header.len() + img.data.len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&img.data);
    Ok(out)
}

/// α = sample / 255.
pub fn matte_from_gray(img: &RasterImage) -> Result<AlphaMatte, ImageError> {
    if img.channels != 1 {
        return Err(ImageError::ChannelCount { expected: 1, actual: img.channels });
    }
    let values = img.data.iter().map(|&s| f64::from(s) / 255.0).collect();
    Ok(AlphaMatte::from_raw(img.width, img.height, values))
}

pub fn matte_to_gray(matte: &AlphaMatte) -> RasterImage {
    let data = matte.values.iter().map(|&a| quantize(a * 255.0)).collect();
    RasterImage { width: matte.width, height: matte.height, channels: 1, data }
}

/// Shape `(1, channels, height, width)`, values `sample / 255`.
pub fn image_to_tensor(img: &RasterImage) -> Tensor {
    let (w, h, c) = (img.width, img.height, img.channels);
    let mut values = vec![0.0; w * h * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                values[(ch * h + y) * w + x] = f64::from(img.data[(y * w + x) * c + ch]) / 255.0;
            }
        }
    }
    Tensor::from_vec([1, c, h, w], values).expect("shape matches value count")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pgm(header: &str, payload: &[u8]) -> Vec<u8> {
        let mut v = header.as_bytes().to_vec();
        v.extend_from_slice(payload);
        v
    }

    #[test]
    fn decodes_gray_payload_verbatim() {
        let img = decode_image(&pgm("P5 2 2 255\n", &[0, 255, 128, 64])).unwrap();
        assert_eq!((img.width(), img.height(), img.channels()), (2, 2, 1));
        assert_eq!(img.data(), &[0, 255, 128, 64]);
    }

    #[test]
    fn decodes_single_rgb_pixel() {
        let img = decode_image(&pgm("P6\n1 1\n255\n", &[10, 20, 30])).unwrap();
        assert_eq!(img.channels(), 3);
        assert_eq!((img.sample(0, 0, 0), img.sample(0, 0, 1), img.sample(0, 0, 2)), (10, 20, 30));
    }

    #[test]
    fn truncated_payload_reports_offset_and_counts() {
        let header = "P6\n4 4\n255\n";
        let required = 4 * 4 * 3;
        let err = decode_image(&pgm(header, &vec![0u8; required - 1])).unwrap_err();
        assert_eq!(err, ImageError::Truncated { offset: header.len(), expected: 48, found: 47 });
    }

    #[test]
    fn header_comments_are_skipped() {
        let img = decode_image(&pgm("P5\n# made by hand\n1 # w\n1\n255\n", &[9])).unwrap();
        assert_eq!(img.data(), &[9]);
        // and never written back
        assert_eq!(encode_image(&img).unwrap(), pgm("P5\n1 1\n255\n", &[9]));
    }

    #[test]
    fn rejects_bad_magic_and_maxval() {
        assert_eq!(decode_image(b"P3\n1 1\n255\n0 0 0").unwrap_err(), ImageError::BadMagic { offset: 0 });
        assert_eq!(decode_image(b"").unwrap_err(), ImageError::BadMagic { offset: 0 });
        let err = decode_image(&pgm("P5\n1 1\n65535\n", &[0, 0])).unwrap_err();
        assert_eq!(err, ImageError::UnsupportedMaxval { offset: 7, maxval: 65535 });
        assert!(matches!(decode_image(b"P5\n1 x\n255\n\0"), Err(ImageError::BadHeader { offset: 5, .. })));
        assert!(matches!(decode_image(b"P5\n0 1\n255\n"), Err(ImageError::BadHeader { offset: 3, .. })));
    }

    #[test]
    fn encodes_canonical_header() {
        let img = RasterImage::new(1, 1, 1, vec![7]).unwrap();
        assert_eq!(encode_image(&img).unwrap(), b"P5\n1 1\n255\n\x07");
        let rgb = RasterImage::filled(2, 3, 3, 1).unwrap();
        let bytes = encode_image(&rgb).unwrap();
        let header_len = "P6\n2 3\n255\n".len();
        assert_eq!(bytes.len() - header_len, 2 * 3 * 3);
    }

    #[test]
    fn rejects_unsupported_channel_counts() {
        assert_eq!(RasterImage::new(1, 1, 4, vec![0; 4]).unwrap_err(), ImageError::UnsupportedChannels(4));
        assert!(RasterImage::new(0, 1, 1, vec![]).is_err());
        assert!(RasterImage::new(2, 2, 1, vec![0; 3]).is_err());
    }

    #[test]
    fn matte_scaling() {
        let img = RasterImage::new(3, 1, 1, vec![0, 255, 128]).unwrap();
        let m = matte_from_gray(&img).unwrap();
        assert_eq!(m.values()[0], 0.0);
        assert_eq!(m.values()[1], 1.0);
        assert!((m.values()[2] - 0.50196).abs() < 1e-5);
        let rgb = RasterImage::filled(1, 1, 3, 0).unwrap();
        assert_eq!(matte_from_gray(&rgb).unwrap_err(), ImageError::ChannelCount { expected: 1, actual: 3 });
    }

    #[test]
    fn matte_to_gray_rounds_half_away_from_zero() {
        let m = AlphaMatte::new(3, 1, vec![1.0, 0.5, 0.2]).unwrap();
        assert_eq!(matte_to_gray(&m).data(), &[255, 128, 51]);
        assert!(AlphaMatte::new(1, 1, vec![1.5]).is_err());
    }

    #[test]
    fn tensor_shape_and_scale() {
        let gray = RasterImage::new(2, 2, 1, vec![255, 0, 0, 0]).unwrap();
        let t = image_to_tensor(&gray);
        assert_eq!(t.shape(), [1, 1, 2, 2]);
        assert_eq!(t.get(0, 0, 0, 0), 1.0);
        let rgb = RasterImage::filled(5, 3, 3, 0).unwrap();
        assert_eq!(image_to_tensor(&rgb).len(), 3 * 3 * 5);
    }

    fn arb_image() -> impl Strategy<Value = RasterImage> {
        (1usize..9, 1usize..9, prop_oneof![Just(1usize), Just(3usize)]).prop_flat_map(|(w, h, c)| {
            proptest::collection::vec(any::<u8>(), w * h * c)
                .prop_map(move |data| RasterImage::new(w, h, c, data).unwrap())
        })
    }

    proptest! {
        #[test]
        fn codec_round_trips(img in arb_image()) {
            let bytes = encode_image(&img).unwrap();
            let back = decode_image(&bytes).unwrap();
            prop_assert_eq!(&back, &img);
            prop_assert_eq!(encode_image(&back).unwrap(), bytes);
        }

        #[test]
        fn matte_gray_round_trip_is_close(values in proptest::collection::vec(0.0f64..=1.0, 1..32)) {
            let n = values.len();
            let m = AlphaMatte::new(n, 1, values).unwrap();
            let back = matte_from_gray(&matte_to_gray(&m)).unwrap();
            for (a, b) in m.values().iter().zip(back.values()) {
                prop_assert!((a - b).abs() <= 1.0 / 510.0 + 1e-12);
            }
        }

        #[test]
        fn tensor_layout_matches_samples(img in arb_image()) {
            let t = image_to_tensor(&img);
            for y in 0..img.height() {
                for x in 0..img.width() {
                    for c in 0..img.channels() {
                        prop_assert_eq!(t.get(0, c, y, x), f64::from(img.sample(x, y, c)) / 255.0);
                    }
                }
            }
        }
    }
}
