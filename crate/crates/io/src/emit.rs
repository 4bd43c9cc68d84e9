//! Image and point-cloud files: binary PPM, PNG and ASCII PLY.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use salf_core::math::Vec3;
use salf_core::render::Framebuffer;
use salf_core::sensors::Ray;

use crate::error::{io_err, IoError, Result};

/// Row-major RGB image with channels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<Vec3>,
}

impl Image {
    pub fn new(width: u32, height: u32, pixels: Vec<Vec3>) -> Result<Self> {
        if pixels.len() != width as usize * height as usize {
            return Err(IoError::ShapeMismatch(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn from_framebuffer(fb: &Framebuffer) -> Self {
        Self {
            width: fb.width,
            height: fb.height,
            pixels: fb.color.clone(),
        }
    }

    /// The image as stored in 8 bits per channel.
    pub fn quantized(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            pixels: self
                .pixels
                .iter()
                .map(|p| p.map(|v| f64::from(to_byte(v)) / 255.0))
                .collect(),
        }
    }
}

/// `floor(255 v + 0.5)` after clamping to `[0, 1]`; NaN maps to 0.
pub fn to_byte(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.reserve(img.pixels.len() * 3);
    for p in &img.pixels {
        out.extend([to_byte(p.x), to_byte(p.y), to_byte(p.z)]);
    }
    out
}

fn ppm_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (*pos > start).then(|| &bytes[start..*pos])
}

/// Parses a binary PPM with maxval 255.
pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<Image> {
    let bad = |m: &str| IoError::Format {
        path: path.to_path_buf(),
        message: m.into(),
    };
    let mut pos = 0;
    if ppm_token(bytes, &mut pos) != Some(b"P6".as_slice()) {
        return Err(bad("not a binary PPM (P6) file"));
    }
    let mut num = |what: &str| -> Result<u32> {
        ppm_token(bytes, &mut pos)
            .and_then(|t| std::str::from_utf8(t).ok())
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad(&format!("bad {what} in header")))
    };
    let (w, h, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    let start = pos + 1;
    let n = w as usize * h as usize * 3;
    if bytes.len() != start + n {
        return Err(IoError::SizeMismatch {
            path: path.to_path_buf(),
            expected: (start + n) as u64,
            actual: bytes.len() as u64,
            detail: format!("{w}x{h} RGB payload"),
        });
    }
    let pixels = bytes[start..]
        .chunks_exact(3)
        .map(|c| Vec3::new(f64::from(c[0]), f64::from(c[1]), f64::from(c[2])) / 255.0)
        .collect();
    Image::new(w, h, pixels)
}

pub fn write_ppm(img: &Image, path: &Path) -> Result<()> {
    fs::write(path, encode_ppm(img)).map_err(io_err(path))
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_ppm(&bytes, path)
}

pub fn write_png(img: &Image, path: &Path) -> Result<()> {
    let raw: Vec<u8> = img.pixels.iter().flat_map(|p| [to_byte(p.x), to_byte(p.y), to_byte(p.z)]).collect();
    let buf = image::RgbImage::from_raw(img.width, img.height, raw)
        .ok_or_else(|| IoError::ShapeMismatch("pixel buffer does not match image size".into()))?;
    buf.save_with_format(path, image::ImageFormat::Png).map_err(|e| IoError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn read_png(path: &Path) -> Result<Image> {
    let img = image::open(path)
        .map_err(|e| IoError::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let pixels = img
        .pixels()
        .map(|p| Vec3::new(f64::from(p[0]), f64::from(p[1]), f64::from(p[2])) / 255.0)
        .collect();
    Image::new(w, h, pixels)
}

fn is_png(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Writes PNG for a `.png` extension and PPM otherwise.
pub fn write_image(img: &Image, path: &Path) -> Result<()> {
    if is_png(path) {
        write_png(img, path)
    } else {
        write_ppm(img, path)
    }
}

pub fn read_image(path: &Path) -> Result<Image> {
    if is_png(path) {
        read_png(path)
    } else {
        read_ppm(path)
    }
}

/// Return points `origin + range * dir`; rays without a return are skipped.
pub fn points_from_ranges(rays: &[Ray], ranges: &[Option<f64>]) -> Result<Vec<Vec3>> {
    if rays.len() != ranges.len() {
        return Err(IoError::ShapeMismatch(format!("{} rays but {} ranges", rays.len(), ranges.len())));
    }
    Ok(rays.iter().zip(ranges).filter_map(|(r, d)| d.map(|d| r.at(d))).collect())
}

pub fn encode_ply(points: &[Vec3]) -> String {
    let mut s = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        points.len()
    );
    for p in points {
        let _ = writeln!(s, "{} {} {}", p.x, p.y, p.z);
    }
    s
}

pub fn write_ply(points: &[Vec3], path: &Path) -> Result<()> {
    fs::write(path, encode_ply(points)).map_err(io_err(path))
}

/// Reads the `x y z` columns of an ASCII PLY vertex list.
pub fn read_ply(path: &Path) -> Result<Vec<Vec3>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let bad = |m: String| IoError::Format {
        path: path.to_path_buf(),
        message: m,
    };
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(bad("missing ply magic".into()));
    }
    let mut count = None;
    let mut props = Vec::new();
    let mut in_vertex = false;
    for line in lines.by_ref() {
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            ["format", f, ..] if *f != "ascii" => return Err(bad(format!("unsupported PLY format {f}"))),
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| bad(format!("bad vertex count {n}")))?);
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", _, name] if in_vertex => props.push(name.to_string()),
            ["end_header"] => break,
            _ => {}
        }
    }
    let count = count.ok_or_else(|| bad("no vertex element".into()))?;
    let col = |n: &str| props.iter().position(|p| p == n).ok_or_else(|| bad(format!("no {n} property")));
    let (cx, cy, cz) = (col("x")?, col("y")?, col("z")?);
    let mut out = Vec::with_capacity(count);
    for (i, line) in lines.take(count).enumerate() {
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(format!("vertex {i} is not numeric")))?;
        if v.len() < props.len() {
            return Err(bad(format!("vertex {i} has {} values, expected {}", v.len(), props.len())));
        }
        out.push(Vec3::new(v[cx], v[cy], v[cz]));
    }
    if out.len() != count {
        return Err(bad(format!("header declares {count} vertices, found {}", out.len())));
    }
    Ok(out)
}
