//! Landmark mask codecs: PNG (1/2/4/8/16-bit grayscale or colour, foreground
//! where luma ≥ 128) and PBM (`P1` ASCII / `P4` binary, foreground = 1).

use std::io::Cursor;
use std::path::Path;

use structmem_core::LandmarkMask;

#[derive(Debug, thiserror::Error)]
pub enum MaskError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("png decode: {0}")]
    PngDecode(#[from] png::DecodingError),
    #[error("png encode: {0}")]
    PngEncode(#[from] png::EncodingError),
    #[error("pbm: {0}")]
    Pbm(String),
    #[error("unsupported mask format {0:?} (expected .png or .pbm)")]
    UnsupportedFormat(String),
    #[error(transparent)]
    Mask(#[from] structmem_core::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskFormat {
    Png,
    Pbm,
}

impl MaskFormat {
    pub fn from_path(path: &Path) -> Result<Self, MaskError> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            Some("png") => Ok(Self::Png),
            Some("pbm") => Ok(Self::Pbm),
            _ => Err(MaskError::UnsupportedFormat(path.display().to_string())),
        }
    }

    /// Recognizes the PNG signature or a `P1`/`P4` header.
    pub fn sniff(bytes: &[u8]) -> Option<Self> {
        if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
            Some(Self::Png)
        } else if bytes.starts_with(b"P1") || bytes.starts_with(b"P4") {
            Some(Self::Pbm)
        } else {
            None
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            Self::Png => "png",
            Self::Pbm => "pbm",
        }
    }
}

pub fn read_mask(path: &Path) -> Result<LandmarkMask, MaskError> {
    let format = MaskFormat::from_path(path)?;
    let bytes = std::fs::read(path)?;
    decode(&bytes, format)
}

pub fn write_mask(path: &Path, mask: &LandmarkMask) -> Result<(), MaskError> {
    let bytes = encode(mask, MaskFormat::from_path(path)?)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn decode(bytes: &[u8], format: MaskFormat) -> Result<LandmarkMask, MaskError> {
    match format {
        MaskFormat::Png => decode_png(bytes),
        MaskFormat::Pbm => decode_pbm(bytes),
    }
}

pub fn encode(mask: &LandmarkMask, format: MaskFormat) -> Result<Vec<u8>, MaskError> {
    match format {
        MaskFormat::Png => encode_png(mask),
        MaskFormat::Pbm => Ok(encode_pbm(mask)),
    }
}

pub fn decode_png(bytes: &[u8]) -> Result<LandmarkMask, MaskError> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info()?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| MaskError::Pbm("png too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = info.color_type.samples();
    let luma = |px: &[u8]| -> u32 {
        match info.color_type {
            png::ColorType::Grayscale | png::ColorType::GrayscaleAlpha => u32::from(px[0]),
            _ => (u32::from(px[0]) * 299 + u32::from(px[1]) * 587 + u32::from(px[2]) * 114) / 1000,
        }
    };
    let mask = LandmarkMask::from_fn(w, h, |x, y| {
        let off = y * info.line_size + x * channels;
        luma(&buf[off..off + channels]) >= 128
    })?;
    Ok(mask)
}

/// 1-bit grayscale PNG; foreground is white.
pub fn encode_png(mask: &LandmarkMask) -> Result<Vec<u8>, MaskError> {
    let (w, h) = mask.shape();
    let stride = w.div_ceil(8);
    let mut data = vec![0u8; stride * h];
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) {
                data[y * stride + x / 8] |= 0x80 >> (x % 8);
            }
        }
    }
    write_png(&data, w, h, png::BitDepth::One)
}

/// 8-bit grayscale PNG of per-pixel values in `[0, 1]`.
pub fn encode_gray_png(values: &[f64], width: usize, height: usize) -> Result<Vec<u8>, MaskError> {
    let data: Vec<u8> = values
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    write_png(&data, width, height, png::BitDepth::Eight)
}

fn write_png(data: &[u8], width: usize, height: usize, depth: png::BitDepth) -> Result<Vec<u8>, MaskError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(depth);
        let mut writer = enc.write_header()?;
        writer.write_image_data(data)?;
        writer.finish()?;
    }
    Ok(out)
}

/// ASCII `P1`, at most 70 characters per line.
pub fn encode_pbm(mask: &LandmarkMask) -> Vec<u8> {
    let (w, h) = mask.shape();
    let mut out = format!("P1\n{w} {h}\n");
    for y in 0..h {
        let mut line = 0;
        for x in 0..w {
            if line == 70 {
                out.push('\n');
                line = 0;
            }
            out.push(if mask.get(x, y) { '1' } else { '0' });
            line += 1;
        }
        out.push('\n');
    }
    out.into_bytes()
}

struct PbmCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl PbmCursor<'_> {
    fn skip_space(&mut self) {
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

    fn token(&mut self) -> Result<&[u8], MaskError> {
        self.skip_space();
        let start = self.pos;
        while self
            .bytes
            .get(self.pos)
            .is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#')
        {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(MaskError::Pbm("unexpected end of header".into()));
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self) -> Result<usize, MaskError> {
        let tok = self.token()?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| MaskError::Pbm(format!("bad number {:?}", String::from_utf8_lossy(tok))))
    }
}

pub fn decode_pbm(bytes: &[u8]) -> Result<LandmarkMask, MaskError> {
    let mut cur = PbmCursor { bytes, pos: 0 };
    let magic = cur.token()?.to_vec();
    let w = cur.number()?;
    let h = cur.number()?;
    match magic.as_slice() {
        b"P1" => {
            let mut bits = Vec::with_capacity(w * h);
            while bits.len() < w * h {
                cur.skip_space();
                match cur.bytes.get(cur.pos) {
                    Some(b'0') => bits.push(false),
                    Some(b'1') => bits.push(true),
                    Some(&c) => return Err(MaskError::Pbm(format!("unexpected byte {c:#x} in raster"))),
                    None => return Err(MaskError::Pbm("raster truncated".into())),
                }
                cur.pos += 1;
            }
            Ok(LandmarkMask::from_bits(w, h, &bits)?)
        }
        b"P4" => {
            // exactly one whitespace byte separates header and raster
            let start = cur.pos + 1;
            let stride = w.div_ceil(8);
            let raster = bytes
                .get(start..start + stride * h)
                .ok_or_else(|| MaskError::Pbm("raster truncated".into()))?;
            Ok(LandmarkMask::from_fn(w, h, |x, y| {
                raster[y * stride + x / 8] & (0x80 >> (x % 8)) != 0
            })?)
        }
        _ => Err(MaskError::Pbm("missing P1/P4 magic".into())),
    }
}
