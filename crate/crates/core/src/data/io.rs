//! 8-bit RGB PNG for sRGB images; 16-bit binary PGM plus a JSON sidecar
//! for RAW captures.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::data::synth::{RawMeta, RawSample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::Png(e.to_string())
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

/// Loads a PNG as a 3-channel tensor in `[0, 1]`. Grey and alpha inputs are
/// expanded or dropped; 16-bit inputs are reduced to 8 bits.
pub fn load_png(path: &Path) -> Result<Tensor> {
    let mut decoder = png::Decoder::new(BufReader::new(open(path)?));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(png_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Png("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    let (h, w) = (info.height as usize, info.width as usize);
    let stride = info.line_size;
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(Error::Png("unexpanded palette".into())),
    };
    Ok(Tensor::from_fn(h, w, 3, |y, x, c| {
        let src = if channels < 3 { 0 } else { c };
        buf[y * stride + x * channels + src] as f32 / 255.0
    }))
}

/// Saves a 3-channel tensor as an 8-bit RGB PNG, clamping to `[0, 1]`.
pub fn save_png(path: &Path, image: &Tensor) -> Result<()> {
    if image.channels() != 3 {
        return Err(Error::shape("save_png", format!("expected 3 channels, got {}", image.channels())));
    }
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, image.width() as u32, image.height() as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(png_err)?;
    let bytes: Vec<u8> = image.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    writer.write_image_data(&bytes).map_err(png_err)?;
    writer.finish().map_err(png_err)?;
    Ok(())
}

/// `capture.pgm` pairs with `capture.json`.
pub fn raw_sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes the mosaic as `P5` with maxval 65535 and the metadata sidecar.
pub fn save_raw(path: &Path, raw: &RawSample) -> Result<()> {
    if raw.bayer.channels() != 1 {
        return Err(Error::shape("save_raw", "RAW mosaics are single-channel"));
    }
    let meta = &raw.meta;
    if meta.white_level <= meta.black_level {
        return Err(Error::Config("white level must exceed black level".into()));
    }
    let span = (meta.white_level - meta.black_level) as f32;
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "P5\n{} {}\n65535\n", raw.bayer.width(), raw.bayer.height())?;
    for &v in raw.bayer.data() {
        let level = meta.black_level as f32 + (v.clamp(0.0, 1.0) * span).round();
        out.write_all(&(level as u16).to_be_bytes())?;
    }
    out.flush()?;
    std::fs::write(raw_sidecar_path(path), serde_json::to_string_pretty(meta)?)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn err(&self, detail: impl Into<String>) -> Error {
        Error::Parse { what: "PGM", offset: self.pos, detail: detail.into() }
    }

    /// Skips whitespace and `#` comments.
    fn skip_space(&mut self) {
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

    fn number(&mut self, name: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(format!("expected {name}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse { what: "PGM", offset: start, detail: format!("{name} out of range") })
    }
}

/// Parses a binary PGM into levels `(height, width, maxval, samples)`.
pub fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, u16, Vec<u16>)> {
    let mut cur = Cursor { bytes, pos: 0 };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(cur.err("missing P5 magic"));
    }
    cur.pos = 2;
    let w = cur.number("width")?;
    let h = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(cur.err(format!("maxval {maxval} outside 1..=65535")));
    }
    if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
        return Err(cur.err("expected single whitespace after maxval"));
    }
    cur.pos += 1;
    let bps = if maxval > 255 { 2 } else { 1 };
    let need = w.checked_mul(h).and_then(|n| n.checked_mul(bps)).ok_or_else(|| cur.err("dimensions overflow"))?;
    let payload = &bytes[cur.pos..];
    if payload.len() < need {
        return Err(Error::Parse {
            what: "PGM",
            offset: bytes.len(),
            detail: format!("truncated payload: expected {need} bytes, found {}", payload.len()),
        });
    }
    let samples = if bps == 2 {
        payload[..need].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    } else {
        payload[..need].iter().map(|&b| b as u16).collect()
    };
    Ok((h, w, maxval as u16, samples))
}

/// Loads a PGM mosaic and its sidecar. A missing sidecar is reported as
/// [`Error::MissingFile`] naming the sidecar path.
pub fn load_raw(path: &Path) -> Result<RawSample> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let side = raw_sidecar_path(path);
    let meta: RawMeta = serde_json::from_reader(BufReader::new(open(&side)?))?;
    if meta.white_level <= meta.black_level {
        return Err(Error::Config(format!("{}: white level must exceed black level", side.display())));
    }
    let (h, w, _, samples) = parse_pgm(&bytes)?;
    let black = meta.black_level as f32;
    let span = (meta.white_level - meta.black_level) as f32;
    let data = samples.iter().map(|&s| ((s as f32 - black) / span).clamp(0.0, 1.0)).collect();
    Ok(RawSample { bayer: Tensor::from_vec(h, w, 1, data)?, meta })
}
