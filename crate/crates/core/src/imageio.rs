//! Image buffers, PFM/PNG input and output, and environment maps of a stage.
//!
//! Buffers hold linear RGB. PNG files are sRGB encoded on save (after
//! clamping to `[0, 1]`) and linearized on load; PFM files are linear 32-bit.

use std::io::{BufWriter, Cursor};
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::scene::{LightStage, Ray};

#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    pub width: u32,
    pub height: u32,
    /// Row-major, top-left origin.
    pub pixels: Vec<[f64; 3]>,
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32) -> Self {
        ImageBuffer {
            width,
            height,
            pixels: vec![[0.0; 3]; width as usize * height as usize],
        }
    }

    pub fn from_pixels(width: u32, height: u32, pixels: Vec<[f64; 3]>) -> Result<Self> {
        if pixels.len() != width as usize * height as usize {
            return Err(Error::invalid(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(ImageBuffer { width, height, pixels })
    }

    #[inline]
    pub fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    pub fn get(&self, x: u32, y: u32) -> [f64; 3] {
        self.pixels[self.index(x, y)]
    }

    pub fn set(&mut self, x: u32, y: u32, v: [f64; 3]) {
        let i = self.index(x, y);
        self.pixels[i] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.pixels.iter().flatten().all(|v| v.is_finite())
    }

    pub fn same_size(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn map(&self, f: impl Fn([f64; 3]) -> [f64; 3]) -> ImageBuffer {
        ImageBuffer {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|p| f(*p)).collect(),
        }
    }
}

pub fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

pub fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.0031308 {
        c * 12.92
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

fn to_u8(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Loads a `.pfm` (linear) or `.png` (sRGB) image, chosen by extension.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    match extension(path).as_deref() {
        Some("pfm") => read_pfm(path),
        Some("png") => read_png(path),
        _ => Err(Error::format(path, "unsupported image extension (expected .pfm or .png)")),
    }
}

/// Saves a `.pfm` (linear) or `.png` (sRGB preview) image, chosen by extension.
pub fn save_image(path: impl AsRef<Path>, image: &ImageBuffer) -> Result<()> {
    let path = path.as_ref();
    match extension(path).as_deref() {
        Some("pfm") => write_pfm(path, image),
        Some("png") => write_png(path, image),
        _ => Err(Error::format(path, "unsupported image extension (expected .pfm or .png)")),
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase())
}

pub fn write_pfm(path: impl AsRef<Path>, image: &ImageBuffer) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!("PF\n{} {}\n-1.0\n", image.width, image.height).into_bytes();
    out.reserve(image.pixels.len() * 12);
    for y in (0..image.height).rev() {
        for x in 0..image.width {
            for c in image.get(x, y) {
                out.extend_from_slice(&(c as f32).to_le_bytes());
            }
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io("writing image", path, e))
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io("reading image", path, e))?;
    let bad = |m: &str| Error::format(path, m.to_string());
    // Header: magic, width, height, scale, then one whitespace byte.
    let mut pos = 0;
    let mut tokens = Vec::new();
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PFM header"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII PFM header"))?);
    }
    pos += 1;
    let channels = match tokens[0] {
        "PF" => 3,
        "Pf" => 1,
        _ => return Err(bad("missing PF magic")),
    };
    let width: u32 = tokens[1].parse().map_err(|_| bad("bad PFM width"))?;
    let height: u32 = tokens[2].parse().map_err(|_| bad("bad PFM height"))?;
    let scale: f64 = tokens[3].parse().map_err(|_| bad("bad PFM scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(bad("bad PFM scale"));
    }
    let little = scale < 0.0;
    let n = width as usize * height as usize * channels;
    let data = bytes.get(pos..pos + 4 * n).ok_or_else(|| bad("truncated PFM data"))?;
    let floats: Vec<f64> = data
        .chunks_exact(4)
        .map(|b| {
            let b = [b[0], b[1], b[2], b[3]];
            (if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) }) as f64
        })
        .collect();
    let mut image = ImageBuffer::new(width, height);
    for row in 0..height {
        let y = height - 1 - row;
        for x in 0..width {
            let i = (row as usize * width as usize + x as usize) * channels;
            let px = if channels == 3 {
                [floats[i], floats[i + 1], floats[i + 2]]
            } else {
                [floats[i]; 3]
            };
            image.set(x, y, px);
        }
    }
    Ok(image)
}

fn write_png_bytes(path: &Path, width: u32, height: u32, color: png::ColorType, data: &[u8]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io("writing image", path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width, height);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let encoded = enc
        .write_header()
        .and_then(|mut w| {
            w.write_image_data(data)?;
            w.finish()
        });
    encoded.map_err(|e| Error::format(path, format!("PNG encoding failed: {e}")))
}

/// Decoded 8-bit PNG as `(width, height, rgb bytes)`.
fn read_png_bytes(path: &Path) -> Result<(u32, u32, Vec<[u8; 3]>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io("reading image", path, e))?;
    let mut reader = png::Decoder::new(Cursor::new(bytes))
        .read_info()
        .map_err(|e| Error::format(path, format!("PNG decoding failed: {e}")))?;
    let info = reader.info();
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format(path, format!("unsupported PNG bit depth {:?}", info.bit_depth)));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(path, "PNG too large"))?;
    let mut buf = vec![0u8; size];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format(path, format!("PNG decoding failed: {e}")))?;
    let (w, h) = (frame.width, frame.height);
    let channels = match frame.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(Error::format(path, "indexed PNG is not supported")),
    };
    let mut out = Vec::with_capacity(w as usize * h as usize);
    for y in 0..h as usize {
        let row = &buf[y * frame.line_size..];
        for x in 0..w as usize {
            let p = &row[x * channels..];
            out.push(if channels < 3 { [p[0]; 3] } else { [p[0], p[1], p[2]] });
        }
    }
    Ok((w, h, out))
}

pub fn write_png(path: impl AsRef<Path>, image: &ImageBuffer) -> Result<()> {
    let data: Vec<u8> = image
        .pixels
        .iter()
        .flat_map(|p| p.map(|c| to_u8(linear_to_srgb(c.clamp(0.0, 1.0)))))
        .collect();
    write_png_bytes(path.as_ref(), image.width, image.height, png::ColorType::Rgb, &data)
}

pub fn read_png(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let (w, h, px) = read_png_bytes(path.as_ref())?;
    let pixels = px.iter().map(|p| p.map(|c| srgb_to_linear(c as f64 / 255.0))).collect();
    ImageBuffer::from_pixels(w, h, pixels)
}

/// 8-bit grayscale PNG of values in `[0, 1]`, stored without transfer curve.
pub fn write_gray_png(path: impl AsRef<Path>, width: u32, height: u32, values: &[f64]) -> Result<()> {
    if values.len() != width as usize * height as usize {
        return Err(Error::invalid("gray image size mismatch"));
    }
    let data: Vec<u8> = values.iter().map(|&v| to_u8(v)).collect();
    write_png_bytes(path.as_ref(), width, height, png::ColorType::Grayscale, &data)
}

/// Reads an 8-bit PNG as gray values in `[0, 1]` (first channel, no transfer curve).
pub fn read_gray_png(path: impl AsRef<Path>) -> Result<(u32, u32, Vec<f64>)> {
    let (w, h, px) = read_png_bytes(path.as_ref())?;
    Ok((w, h, px.iter().map(|p| p[0] as f64 / 255.0).collect()))
}

/// Latitude-longitude visualization of the stage lights as seen from the
/// origin. Row 0 is the stage zenith, columns sweep azimuth from 0 to 2π.
pub fn envmap_from_stage(stage: &LightStage, width: u32, height: u32) -> Result<ImageBuffer> {
    if width == 0 || height == 0 {
        return Err(Error::invalid("envmap size must be at least 1x1"));
    }
    let mut image = ImageBuffer::new(width, height);
    for y in 0..height {
        let el = std::f64::consts::FRAC_PI_2 - std::f64::consts::PI * (y as f64 + 0.5) / height as f64;
        for x in 0..width {
            let az = std::f64::consts::TAU * (x as f64 + 0.5) / width as f64;
            let local = Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
            let ray = Ray {
                origin: Vec3::zeros(),
                dir: stage.world_point(&local),
            };
            let mut px = [0.0; 3];
            for light in &stage.lights {
                if light_covers(light, &ray) {
                    for c in 0..3 {
                        px[c] += light.intensity[c];
                    }
                }
            }
            image.set(x, y, px);
        }
    }
    Ok(image)
}

fn light_covers(light: &crate::scene::AreaLight, ray: &Ray) -> bool {
    let denom = ray.dir.dot(&light.normal);
    if denom >= 0.0 {
        return false;
    }
    let t = (light.center - ray.origin).dot(&light.normal) / denom;
    if t <= 0.0 {
        return false;
    }
    let off = ray.origin + ray.dir * t - light.center;
    off.dot(&light.tangent).abs() <= light.half_extent && off.dot(&light.bitangent).abs() <= light.half_extent
}

/// Root mean squared error over all channels of the pixels selected by `mask`
/// (all pixels when `None`). Empty selections give 0.
pub fn rmse(a: &ImageBuffer, b: &ImageBuffer, mask: Option<&[bool]>) -> Result<f64> {
    if !a.same_size(b) {
        return Err(Error::invalid(format!(
            "image size mismatch: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if let Some(m) = mask {
        if m.len() != a.pixels.len() {
            return Err(Error::invalid("mask size mismatch"));
        }
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, (p, q)) in a.pixels.iter().zip(&b.pixels).enumerate() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        for c in 0..3 {
            let d = p[c] - q[c];
            sum += d * d;
        }
        n += 3;
    }
    Ok(if n == 0 { 0.0 } else { (sum / n as f64).sqrt() })
}
