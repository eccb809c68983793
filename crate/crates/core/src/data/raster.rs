//! 8-bit raster decoding (PNG, binary PNM) and grayscale PNG encoding.

use std::io::Cursor;

use thiserror::Error;

use crate::tensor::{Float, Tensor};

/// Decoded images larger than this many samples are rejected.
pub const MAX_SAMPLES: usize = 1 << 28;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RasterError {
    #[error("unrecognised raster format")]
    UnknownFormat,
    #[error("malformed {format}: {msg}")]
    Malformed { format: &'static str, msg: String },
    #[error("unsupported bit depth: {0} (only 8-bit rasters are supported)")]
    UnsupportedBitDepth(u32),
    #[error("image of {0}x{1} exceeds the size limit")]
    TooLarge(usize, usize),
    #[error("png encoding failed: {0}")]
    Encode(String),
}

/// An 8-bit image with 1 (gray) or 3 (RGB) interleaved channels. Samples run
/// from 0 to `maxval`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub maxval: u8,
    pub data: Vec<u8>,
}

impl Raster {
    pub fn gray(width: usize, height: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), width * height);
        Raster {
            width,
            height,
            channels: 1,
            maxval: 255,
            data,
        }
    }

    pub fn rgb(width: usize, height: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), width * height * 3);
        Raster {
            width,
            height,
            channels: 3,
            maxval: 255,
            data,
        }
    }

    /// `h×w×3` in `[0, 1]`; gray images are replicated across channels.
    pub fn to_rgb<T: Float>(&self) -> Tensor<T> {
        let scale = 1.0 / self.maxval as f64;
        let ch = self.channels;
        Tensor::from_fn(&[self.height, self.width, 3], |i| {
            let (px, c) = (i / 3, i % 3);
            let v = if ch == 1 { self.data[px] } else { self.data[px * ch + c] };
            T::from_f64(v as f64 * scale)
        })
    }

    /// `h×w` in `[0, 1]`; RGB images are averaged over channels.
    pub fn to_gray<T: Float>(&self) -> Tensor<T> {
        let scale = 1.0 / self.maxval as f64;
        let ch = self.channels;
        Tensor::from_fn(&[self.height, self.width], |px| {
            let sum: u32 = self.data[px * ch..(px + 1) * ch].iter().map(|&v| v as u32).sum();
            T::from_f64(sum as f64 / ch as f64 * scale)
        })
    }
}

fn check_size(width: usize, height: usize, channels: usize) -> Result<(), RasterError> {
    match width.checked_mul(height).and_then(|n| n.checked_mul(channels)) {
        Some(n) if n <= MAX_SAMPLES => Ok(()),
        _ => Err(RasterError::TooLarge(width, height)),
    }
}

/// Decodes PNG or PNM by magic bytes.
pub fn decode_raster(bytes: &[u8]) -> Result<Raster, RasterError> {
    if bytes.starts_with(b"\x89PNG") {
        decode_png(bytes)
    } else if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        decode_pnm(bytes)
    } else {
        Err(RasterError::UnknownFormat)
    }
}

pub fn decode_png(bytes: &[u8]) -> Result<Raster, RasterError> {
    let malformed = |e: png::DecodingError| RasterError::Malformed {
        format: "png",
        msg: e.to_string(),
    };
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(malformed)?;
    let (color, depth) = reader.output_color_type();
    if depth != png::BitDepth::Eight {
        return Err(RasterError::UnsupportedBitDepth(depth as u32));
    }
    let (width, height) = {
        let info = reader.info();
        (info.width as usize, info.height as usize)
    };
    let src_ch = color.samples();
    check_size(width, height, src_ch)?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or(RasterError::TooLarge(width, height))?];
    let frame = reader.next_frame(&mut buf).map_err(malformed)?;
    buf.truncate(frame.buffer_size());

    let channels = if src_ch >= 3 { 3 } else { 1 };
    let mut data = Vec::with_capacity(width * height * channels);
    for row in buf.chunks_exact(frame.line_size).take(height) {
        for px in row[..width * src_ch].chunks_exact(src_ch) {
            data.extend_from_slice(&px[..channels]);
        }
    }
    if data.len() != width * height * channels {
        return Err(RasterError::Malformed {
            format: "png",
            msg: "short image data".into(),
        });
    }
    Ok(Raster {
        width,
        height,
        channels,
        maxval: 255,
        data,
    })
}

/// Binary PNM: `P5` (gray) and `P6` (RGB) with `maxval <= 255`.
pub fn decode_pnm(bytes: &[u8]) -> Result<Raster, RasterError> {
    let bad = |msg: &str| RasterError::Malformed {
        format: "pnm",
        msg: msg.to_string(),
    };
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(bad("expected P5 or P6 magic")),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // Whitespace and comments between header fields.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n' && b != b'\r') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(bad("truncated header")),
            }
        }
        if pos < 3 || !bytes[pos - 1].is_ascii_whitespace() {
            return Err(bad("header fields must be whitespace separated"));
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if pos == start || pos - start > 9 {
            return Err(bad("expected a decimal header field"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad number"))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(bad("missing whitespace after maxval")),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(bad("zero image dimension"));
    }
    if maxval == 0 {
        return Err(bad("maxval must be positive"));
    }
    if maxval > 255 {
        return Err(RasterError::UnsupportedBitDepth(16));
    }
    check_size(width, height, channels)?;
    let n = width * height * channels;
    let data = bytes
        .get(pos..pos + n)
        .ok_or_else(|| bad("truncated pixel data"))?
        .to_vec();
    if data.iter().any(|&v| v as usize > maxval) {
        return Err(bad("sample exceeds maxval"));
    }
    Ok(Raster {
        width,
        height,
        channels,
        maxval: maxval as u8,
        data,
    })
}

/// Encodes a raster as an 8-bit PNG (gray or RGB).
pub fn encode_png(r: &Raster) -> Result<Vec<u8>, RasterError> {
    let err = |e: png::EncodingError| RasterError::Encode(e.to_string());
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, r.width as u32, r.height as u32);
        enc.set_color(if r.channels == 1 {
            png::ColorType::Grayscale
        } else {
            png::ColorType::Rgb
        });
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(err)?;
        writer.write_image_data(&r.data).map_err(err)?;
        writer.finish().map_err(err)?;
    }
    Ok(out)
}

/// Encodes binary PNM (`P5`/`P6`) with the raster's maxval.
pub fn encode_pnm(r: &Raster) -> Vec<u8> {
    let magic = if r.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n{}\n", r.width, r.height, r.maxval).into_bytes();
    out.extend_from_slice(&r.data);
    out
}

/// Quantises an `h×w` map in `[0, 1]` to 8 bits as `round(255·p)`.
pub fn quantize_map<T: Float>(map: &Tensor<T>) -> Raster {
    let (h, w) = (map.shape()[0], map.shape()[1]);
    let data = map
        .data()
        .iter()
        .map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    Raster::gray(w, h, data)
}
