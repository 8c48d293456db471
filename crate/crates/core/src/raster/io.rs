//! Native `HCDR` raster files and 8-bit PNG import/export.
//!
//! Layout (little-endian): `"HCDR"`, u32 version (1), u32 height, u32 width,
//! u32 channels, then `height * width * channels` f32 samples, band-sequential.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use super::Raster;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"HCDR";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

pub fn encode(raster: &Raster) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + raster.data().len() * 4);
    out.extend_from_slice(MAGIC);
    for v in [
        VERSION,
        raster.height() as u32,
        raster.width() as u32,
        raster.channels() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in raster.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn read_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

pub fn decode(bytes: &[u8]) -> Result<Raster> {
    let fail = |offset: usize, reason: String| Error::Format { offset, reason };
    if bytes.len() < HEADER_LEN {
        return Err(fail(bytes.len(), "truncated header".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(fail(0, "missing HCDR magic".into()));
    }
    let version = read_u32(bytes, 4);
    if version != VERSION {
        return Err(fail(4, format!("unsupported version {version}")));
    }
    let (h, w, c) = (
        read_u32(bytes, 8) as usize,
        read_u32(bytes, 12) as usize,
        read_u32(bytes, 16) as usize,
    );
    if h == 0 || w == 0 || c == 0 {
        return Err(fail(8, format!("zero dimension {h}x{w}x{c}")));
    }
    let count = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(c))
        .ok_or_else(|| fail(8, "dimensions overflow".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != count * 4 {
        return Err(fail(
            HEADER_LEN,
            format!(
                "payload holds {} bytes, header implies {}",
                payload.len(),
                count * 4
            ),
        ));
    }
    let mut data = Vec::with_capacity(count);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(fail(HEADER_LEN + 4 * i, format!("non-finite sample {v}")));
        }
        data.push(v);
    }
    Raster::new(h, w, c, data)
}

/// Loads a native raster, or an 8-bit gray/RGB PNG mapped to [0, 1].
pub fn load(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"\x89PNG") {
        return load_png(path);
    }
    decode(&bytes)
}

pub fn save(raster: &Raster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(raster)).map_err(|e| Error::io(path, e))
}

fn load_png(path: &Path) -> Result<Raster> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| Error::Png(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Png("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Png(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Png(format!("unsupported bit depth {:?}", info.bit_depth)));
    }
    let (h, w) = (info.height as usize, info.width as usize);
    // Alpha, when present, is dropped.
    let (stride, channels) = match info.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        other => return Err(Error::Png(format!("unsupported color type {other:?}"))),
    };
    let line = info.line_size;
    Ok(Raster::from_fn(h, w, channels, |c, r, col| {
        buf[r * line + col * stride + c] as f32 / 255.0
    }))
}

/// Reads a PNG mask: any pixel whose first channel exceeds 127 is `true`.
pub fn load_mask_png(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<bool>)> {
    let r = load_png(path.as_ref())?;
    let mask = r.band(0).iter().map(|&v| v > 0.5).collect();
    Ok((r.height(), r.width(), mask))
}

fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    pixels: &[u8],
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(color);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Png(e.to_string()))?;
    writer
        .write_image_data(pixels)
        .map_err(|e| Error::Png(e.to_string()))?;
    writer.finish().map_err(|e| Error::Png(e.to_string()))
}

/// Which bands end up in an exported PNG.
#[derive(Clone, Copy, Debug)]
pub enum PngChannels {
    Single(usize),
    /// False-color composite: bands shown as (red, green, blue).
    Composite([usize; 3]),
}

/// Writes an 8-bit PNG; each exported band is linearly stretched from
/// `range` (or its own min/max) onto 0..=255.
pub fn export_png(
    raster: &Raster,
    path: impl AsRef<Path>,
    channels: PngChannels,
    range: Option<(f32, f32)>,
) -> Result<()> {
    let bands: Vec<usize> = match channels {
        PngChannels::Single(c) => vec![c],
        PngChannels::Composite(rgb) => rgb.to_vec(),
    };
    if let Some(&c) = bands.iter().find(|&&c| c >= raster.channels()) {
        return Err(Error::shape(format!(
            "channel {c} requested from a {}-channel raster",
            raster.channels()
        )));
    }
    let ranges = raster.channel_ranges();
    let n = raster.pixel_count();
    let mut pixels = vec![0u8; n * bands.len()];
    for (k, &c) in bands.iter().enumerate() {
        let (lo, hi) = range.unwrap_or(ranges[c]);
        let span = (hi - lo).max(f32::MIN_POSITIVE);
        for (i, &v) in raster.band(c).iter().enumerate() {
            let t = ((v - lo) / span).clamp(0.0, 1.0);
            pixels[i * bands.len() + k] = (t * 255.0).round() as u8;
        }
    }
    let color = if bands.len() == 1 {
        png::ColorType::Grayscale
    } else {
        png::ColorType::Rgb
    };
    write_png(path.as_ref(), raster.width(), raster.height(), color, &pixels)
}

/// Writes a boolean mask as black (false) / white (true) grayscale.
pub fn save_mask_png(path: impl AsRef<Path>, width: usize, mask: &[bool]) -> Result<()> {
    if width == 0 || mask.len() % width != 0 {
        return Err(Error::shape("mask length is not a multiple of width"));
    }
    let pixels: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    write_png(
        path.as_ref(),
        width,
        mask.len() / width,
        png::ColorType::Grayscale,
        &pixels,
    )
}

/// Writes interleaved 8-bit RGB pixels.
pub fn save_rgb_png(path: impl AsRef<Path>, width: usize, rgb: &[[u8; 3]]) -> Result<()> {
    if width == 0 || rgb.len() % width != 0 {
        return Err(Error::shape("pixel count is not a multiple of width"));
    }
    let pixels: Vec<u8> = rgb.iter().flatten().copied().collect();
    write_png(
        path.as_ref(),
        width,
        rgb.len() / width,
        png::ColorType::Rgb,
        &pixels,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decode_minimal_file() {
        let r = Raster::new(2, 2, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let bytes = encode(&r);
        assert_eq!(&bytes[..4], b"HCDR");
        assert_eq!(bytes.len(), 20 + 16);
        assert_eq!(decode(&bytes).unwrap(), r);
    }

    #[test]
    fn decode_errors_name_offsets() {
        let r = Raster::new(1, 2, 1, vec![1.0, 2.0]).unwrap();
        let good = encode(&r);

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(Error::Format { offset: 0, .. })));

        assert!(matches!(
            decode(&good[..good.len() - 1]),
            Err(Error::Format { offset: 20, .. })
        ));

        let mut nan = good.clone();
        nan[24..28].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode(&nan), Err(Error::Format { offset: 24, .. })));

        assert!(matches!(
            decode(&good[..10]),
            Err(Error::Format { offset: 10, .. })
        ));
    }

    #[test]
    fn file_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.hcdr");
        let r = Raster::from_fn(3, 4, 2, |c, i, j| c as f32 - 0.25 * i as f32 + 1e-3 * j as f32);
        save(&r, &path).unwrap();
        let first = std::fs::read(&path).unwrap();
        let again = dir.path().join("b.hcdr");
        save(&load(&path).unwrap(), &again).unwrap();
        assert_eq!(first, std::fs::read(&again).unwrap());
    }

    #[test]
    fn png_import_maps_255_to_one() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        save_mask_png(&path, 2, &[true, false, false, true]).unwrap();
        let r = load(&path).unwrap();
        assert_eq!(r.channels(), 1);
        assert_eq!(r.data(), &[1.0, 0.0, 0.0, 1.0]);
        let (h, w, m) = load_mask_png(&path).unwrap();
        assert_eq!((h, w), (2, 2));
        assert_eq!(m, vec![true, false, false, true]);
    }

    #[test]
    fn rgb_composite_export_reads_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.png");
        let r = Raster::from_fn(2, 3, 4, |c, i, j| (c + i + j) as f32);
        export_png(&r, &path, PngChannels::Composite([3, 2, 1]), Some((0.0, 6.0))).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back.channels(), 3);
        // red carries band 3: value 3 + i + j over [0, 6]
        assert!((back.get(0, 0, 0) - 0.5).abs() < 0.01);
        assert!((back.get(0, 1, 2) - 1.0).abs() < 1e-6);
        assert!(export_png(&r, &path, PngChannels::Single(4), None).is_err());
    }
}
