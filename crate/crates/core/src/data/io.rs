//! 8-bit PNG and binary PPM (`P6`) image files, plus dataset manifests.
//!
//! Pixel values map `[0, 1] ↔ [0, 255]` with rounding; writing clamps to
//! `[0, 1]` first.

use std::io::{BufRead, Cursor, Write};
use std::path::{Path, PathBuf};

use super::synth::PairedSample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Supported image containers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Png,
    Ppm,
}

const PNG_MAGIC: &[u8; 8] = b"\x89PNG\r\n\x1a\n";

impl ImageFormat {
    /// Format implied by a file extension.
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("png") => Ok(ImageFormat::Png),
            Some("ppm") => Ok(ImageFormat::Ppm),
            _ => Err(Error::Usage(format!(
                "unsupported image format for {} (use .png or .ppm)",
                path.display()
            ))),
        }
    }

    /// Format identified by leading magic bytes.
    pub fn sniff(bytes: &[u8]) -> Option<Self> {
        if bytes.starts_with(PNG_MAGIC) {
            Some(ImageFormat::Png)
        } else if bytes.starts_with(b"P6") {
            Some(ImageFormat::Ppm)
        } else {
            None
        }
    }
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn to_bytes_hwc(img: &Tensor) -> Result<(usize, usize, Vec<u8>)> {
    let (h, w) = super::degrade::check_image(img, "write_image")?;
    let x = img.data();
    let mut out = Vec::with_capacity(3 * h * w);
    for p in 0..h * w {
        for c in 0..3 {
            out.push(quantize(x[c * h * w + p]));
        }
    }
    Ok((h, w, out))
}

fn from_bytes_hwc(h: usize, w: usize, channels: usize, bytes: &[u8]) -> Result<Tensor> {
    let mut data = vec![0.0; 3 * h * w];
    for p in 0..h * w {
        for c in 0..3 {
            let src = if channels >= 3 { c } else { 0 };
            data[c * h * w + p] = bytes[p * channels + src] as f64 / 255.0;
        }
    }
    Tensor::new([3, h, w], data)
}

/// Binary PPM bytes of a `[3, H, W]` image.
pub fn encode_ppm(img: &Tensor) -> Result<Vec<u8>> {
    let (h, w, px) = to_bytes_hwc(img)?;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(&px);
    Ok(out)
}

/// Decodes binary PPM; `source` names the data in errors.
pub fn decode_ppm(bytes: &[u8], source: &str) -> Result<Tensor> {
    let err = |detail: &str| Error::Parse {
        location: source.to_string(),
        detail: detail.to_string(),
    };
    if !bytes.starts_with(b"P6") {
        return Err(err("bad magic bytes (expected P6)"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for f in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err("malformed header"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(err("malformed header"));
    }
    pos += 1;
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(err(&format!("unsupported maxval {maxval} (only 8-bit 255 is supported)")));
    }
    if w == 0 || h == 0 {
        return Err(err("zero image dimension"));
    }
    let need = 3 * w * h;
    let px = &bytes[pos..];
    if px.len() < need {
        return Err(err(&format!("truncated pixel data ({} of {need} bytes)", px.len())));
    }
    from_bytes_hwc(h, w, 3, &px[..need])
}

/// 8-bit RGB PNG bytes of a `[3, H, W]` image.
pub fn encode_png(img: &Tensor) -> Result<Vec<u8>> {
    let (h, w, px) = to_bytes_hwc(img)?;
    let mut out = Vec::new();
    let png_err = |e: png::EncodingError| Error::Data(format!("png encoding failed: {e}"));
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(&px).map_err(png_err)?;
        writer.finish().map_err(png_err)?;
    }
    Ok(out)
}

/// Decodes PNG, expanding palette, grayscale and 16-bit images to 8-bit
/// RGB and dropping alpha.
pub fn decode_png(bytes: &[u8], source: &str) -> Result<Tensor> {
    let err = |detail: String| Error::Parse {
        location: source.to_string(),
        detail,
    };
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = dec.read_info().map_err(|e| err(format!("invalid png: {e}")))?;
    let size = reader.output_buffer_size().ok_or_else(|| err("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| err(format!("invalid png: {e}")))?;
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(err("palette was not expanded".into())),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let mut packed = Vec::with_capacity(w * h * channels);
    for row in buf.chunks(info.line_size).take(h) {
        packed.extend_from_slice(&row[..w * channels]);
    }
    from_bytes_hwc(h, w, channels, &packed)
}

/// Reads a PNG or PPM file, identified by its magic bytes.
pub fn read_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let source = path.display().to_string();
    match ImageFormat::sniff(&bytes) {
        Some(ImageFormat::Png) => decode_png(&bytes, &source),
        Some(ImageFormat::Ppm) => decode_ppm(&bytes, &source),
        None => Err(Error::Parse {
            location: source,
            detail: "unrecognized image format (bad magic bytes)".into(),
        }),
    }
}

/// Writes a `[3, H, W]` image; the format follows the file extension.
pub fn write_image(img: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = match ImageFormat::from_path(path)? {
        ImageFormat::Png => encode_png(img)?,
        ImageFormat::Ppm => encode_ppm(img)?,
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// One manifest line: `clean<TAB>degraded<TAB>label`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub clean: PathBuf,
    pub degraded: PathBuf,
    pub label: String,
}

pub const MANIFEST_NAME: &str = "manifest.tsv";

/// Writes every sample as a pair of PNGs plus `manifest.tsv` into `dir`.
/// Returns the manifest path.
pub fn write_dataset(dir: impl AsRef<Path>, samples: &[PairedSample]) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let clean = format!("clean_{i:05}.png");
        let degraded = format!("degraded_{i:05}.png");
        write_image(&s.clean, dir.join(&clean))?;
        write_image(&s.degraded, dir.join(&degraded))?;
        writeln!(manifest, "{clean}\t{degraded}\t{}", s.label).expect("write to Vec");
    }
    let path = dir.join(MANIFEST_NAME);
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Parses a manifest; relative paths resolve against the manifest's directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [clean, degraded, label] = fields[..] else {
            return Err(Error::Parse {
                location: format!("{}:{}", path.display(), i + 1),
                detail: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        };
        out.push(ManifestEntry {
            clean: base.join(clean),
            degraded: base.join(degraded),
            label: label.trim().to_string(),
        });
    }
    if out.is_empty() {
        return Err(Error::Data(format!("manifest {} lists no samples", path.display())));
    }
    Ok(out)
}

/// Loads every pair listed in a manifest.
pub fn load_dataset(manifest: impl AsRef<Path>) -> Result<Vec<PairedSample>> {
    read_manifest(manifest)?
        .into_iter()
        .map(|e| {
            let clean = read_image(&e.clean)?;
            let degraded = read_image(&e.degraded)?;
            if clean.shape() != degraded.shape() {
                return Err(Error::Data(format!(
                    "{} and {} differ in size",
                    e.clean.display(),
                    e.degraded.display()
                )));
            }
            Ok(PairedSample {
                clean,
                degraded,
                label: e.label,
            })
        })
        .collect()
}
