//! Grayscale image decoding, encoding and resampling.

use std::path::Path;

use crate::error::{Error, Result};

/// A single-channel image with values in [0, 1], row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Gray {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Gray {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::Input(format!(
                "{} values do not form a {height}x{width} image",
                data.len()
            )));
        }
        Ok(Gray { height, width, data })
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

fn header_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(Error::Format("truncated PGM header".into())),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace()) {
        *pos += 1;
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

/// Decodes a binary (P5) PGM. Values are divided by maxval.
pub fn decode_pgm(bytes: &[u8]) -> Result<Gray> {
    let mut pos = 0;
    if header_token(bytes, &mut pos)? != "P5" {
        return Err(Error::Format("not a binary PGM (expected magic P5)".into()));
    }
    let mut num = |what: &str| -> Result<usize> {
        let tok = header_token(bytes, &mut pos)?;
        tok.parse()
            .map_err(|_| Error::Format(format!("PGM {what} `{tok}` is not a number")))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("PGM header {width}x{height} maxval {maxval} is invalid")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let n = width * height;
    let depth = if maxval < 256 { 1 } else { 2 };
    let raster = bytes
        .get(pos..pos + n * depth)
        .ok_or_else(|| Error::Format(format!("PGM raster truncated: need {} bytes", n * depth)))?;
    let m = maxval as f64;
    let data = if depth == 1 {
        raster.iter().map(|&b| (b as f64 / m).min(1.0)).collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|c| (u16::from_be_bytes([c[0], c[1]]) as f64 / m).min(1.0))
            .collect()
    };
    Gray::new(height, width, data)
}

/// Encodes as 8-bit P5, rounding `v·255` after clamping to [0, 1].
pub fn encode_pgm(img: &Gray) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.data.iter().map(|&v| quantize(v)));
    out
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_pgm(path: &Path, img: &Gray) -> Result<()> {
    std::fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}

#[cfg(feature = "png")]
fn decode_png(bytes: &[u8]) -> Result<Gray> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| Error::Format(format!("PNG: {e}")))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Format(format!("PNG: {e}")))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format(format!(
            "PNG must be 8-bit grayscale, found {:?} {:?}",
            info.color_type, info.bit_depth
        )));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let data = buf[..w * h].iter().map(|&b| b as f64 / 255.0).collect();
    Gray::new(h, w, data)
}

pub fn is_image_path(path: &Path) -> bool {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("pgm") => true,
        Some("png") => cfg!(feature = "png"),
        _ => false,
    }
}

/// Reads a PGM file (or an 8-bit grayscale PNG when built with the `png` feature).
pub fn read_image(path: &Path) -> Result<Gray> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let is_png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if is_png {
        #[cfg(feature = "png")]
        return decode_png(&bytes);
        #[cfg(not(feature = "png"))]
        return Err(Error::Format("PNG support is not compiled in (enable the `png` feature)".into()));
    }
    decode_pgm(&bytes)
}

/// Per-output-index source taps along one axis.
fn axis_taps(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    if n_out < n_in {
        // area average: each output covers [o·s, (o+1)·s) in source units
        let s = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|o| {
                let (a, b) = (o as f64 * s, (o + 1) as f64 * s);
                let mut taps = Vec::new();
                let mut i = a.floor() as usize;
                while (i as f64) < b && i < n_in {
                    let overlap = (b.min(i as f64 + 1.0) - a.max(i as f64)).max(0.0);
                    if overlap > 0.0 {
                        taps.push((i, overlap / s));
                    }
                    i += 1;
                }
                taps
            })
            .collect()
    } else {
        // bilinear with half-pixel centres, clamped at the borders
        let s = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * s - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                let f = src - i0 as f64;
                if i1 == i0 || f == 0.0 {
                    vec![(i0, 1.0)]
                } else {
                    vec![(i0, 1.0 - f), (i1, f)]
                }
            })
            .collect()
    }
}

/// Resamples to `height × width`: area averaging along shrinking axes,
/// bilinear interpolation along growing ones.
pub fn resize(img: &Gray, height: usize, width: usize) -> Gray {
    if img.height == height && img.width == width {
        return img.clone();
    }
    let tx = axis_taps(img.width, width);
    let ty = axis_taps(img.height, height);
    let mut rows = vec![0.0; img.height * width];
    for y in 0..img.height {
        for (x, taps) in tx.iter().enumerate() {
            rows[y * width + x] = taps.iter().map(|&(i, w)| w * img.at(y, i)).sum();
        }
    }
    let mut out = vec![0.0; height * width];
    for (y, taps) in ty.iter().enumerate() {
        for x in 0..width {
            out[y * width + x] = taps.iter().map(|&(i, w)| w * rows[i * width + x]).sum();
        }
    }
    Gray {
        height,
        width,
        data: out,
    }
}

/// Samples `img` at fractional coordinates (x right, y down); zero outside.
pub fn bilinear_zero(img: &Gray, x: f64, y: f64) -> f64 {
    if !(x > -1.0 && y > -1.0 && x < img.width as f64 && y < img.height as f64) {
        return 0.0;
    }
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let get = |yy: f64, xx: f64| -> f64 {
        if yy < 0.0 || xx < 0.0 || yy >= img.height as f64 || xx >= img.width as f64 {
            0.0
        } else {
            img.at(yy as usize, xx as usize)
        }
    };
    let mut v = 0.0;
    for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
        for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
            let w = wy * wx;
            if w != 0.0 {
                v += w * get(y0 + dy, x0 + dx);
            }
        }
    }
    v
}
