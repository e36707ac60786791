//! Image container plus the two fixture formats: 8-bit PNG (via the `image`
//! crate) and ASCII PGM (hand-rolled, so golden fixtures stay readable in a
//! diff). Pixel values live in `[0, 1]` nominally; byte formats map through
//! division by 255.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ItsError, Result};
use crate::scalar::Real;

/// Dense H x W x C raster, row-major in `(row, col, channel)` order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Image<T: Real> {
    h: usize,
    w: usize,
    c: usize,
    pixels: Vec<T>,
}

impl<T: Real> Image<T> {
    /// Validating constructor: buffer length must equal `h*w*c` and every
    /// value must be finite.
    pub fn new(h: usize, w: usize, c: usize, pixels: Vec<T>) -> Result<Self> {
        let expected = h * w * c;
        if pixels.len() != expected {
            return Err(ItsError::PixelBufferSize {
                h,
                w,
                c,
                len: pixels.len(),
                expected,
            });
        }
        if pixels.iter().any(|p| !p.is_finite()) {
            return Err(ItsError::NonFinitePixels);
        }
        Ok(Image { h, w, c, pixels })
    }

    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Image {
            h,
            w,
            c,
            pixels: vec![T::zero(); h * w * c],
        }
    }

    /// Build from a per-pixel function of `(row, col, channel)`.
    pub fn from_fn(h: usize, w: usize, c: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut pixels = Vec::with_capacity(h * w * c);
        for r in 0..h {
            for col in 0..w {
                for ch in 0..c {
                    pixels.push(f(r, col, ch));
                }
            }
        }
        Image { h, w, c, pixels }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.h
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.w
    }
    #[inline]
    pub fn channels(&self) -> usize {
        self.c
    }
    #[inline]
    pub fn pixels(&self) -> &[T] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, r: usize, col: usize, ch: usize) -> T {
        debug_assert!(r < self.h && col < self.w && ch < self.c);
        self.pixels[(r * self.w + col) * self.c + ch]
    }

    #[inline]
    pub fn set(&mut self, r: usize, col: usize, ch: usize, v: T) {
        debug_assert!(r < self.h && col < self.w && ch < self.c);
        self.pixels[(r * self.w + col) * self.c + ch] = v;
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.h == other.h && self.w == other.w && self.c == other.c
    }

    pub fn shape_matches(&self, h: usize, w: usize, c: usize) -> Result<()> {
        if self.h != h || self.w != w || self.c != c {
            return Err(ItsError::InputShape {
                got_h: self.h,
                got_w: self.w,
                got_c: self.c,
                want_h: h,
                want_w: w,
                want_c: c,
            });
        }
        Ok(())
    }

    /// Mean absolute pixel difference; shapes must already match.
    pub fn mean_abs_diff(&self, other: &Self) -> T {
        debug_assert!(self.same_shape(other));
        let mut acc = T::zero();
        for (a, b) in self.pixels.iter().zip(&other.pixels) {
            acc += (*a - *b).abs();
        }
        acc / T::of(self.pixels.len() as f64)
    }

    /// Element-wise `alpha * self + beta * other`.
    pub fn lin_comb(&self, alpha: T, beta: T, other: &Self) -> Self {
        debug_assert!(self.same_shape(other));
        let pixels = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| alpha * *a + beta * *b)
            .collect();
        Image {
            h: self.h,
            w: self.w,
            c: self.c,
            pixels,
        }
    }

    /// Quantize to bytes the same way the file writers do.
    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&v| {
                let clamped = v.max(T::zero()).min(T::one());
                (clamped * T::of(255.0)).round().widen() as u8
            })
            .collect()
    }
}

/// Read an 8-bit grayscale or RGB PNG into `[0, 1]` values.
pub fn read_png<T: Real>(path: &Path) -> Result<Image<T>> {
    let dynimg = image::open(path).map_err(|source| ItsError::Png {
        path: path.to_path_buf(),
        source,
    })?;
    let scale = T::of(1.0 / 255.0);
    match dynimg.color().channel_count() {
        1 => {
            let gray = dynimg.to_luma8();
            let (w, h) = gray.dimensions();
            let pixels = gray.as_raw().iter().map(|&b| T::of(b as f64) * scale).collect();
            Image::new(h as usize, w as usize, 1, pixels)
        }
        _ => {
            let rgb = dynimg.to_rgb8();
            let (w, h) = rgb.dimensions();
            let pixels = rgb.as_raw().iter().map(|&b| T::of(b as f64) * scale).collect();
            Image::new(h as usize, w as usize, 3, pixels)
        }
    }
}

/// Write as 8-bit PNG; 1 channel becomes grayscale, 3 becomes RGB.
pub fn write_png<T: Real>(img: &Image<T>, path: &Path) -> Result<()> {
    let bytes = img.to_u8();
    let (w, h) = (img.width() as u32, img.height() as u32);
    let res = match img.channels() {
        1 => image::GrayImage::from_raw(w, h, bytes)
            .expect("buffer sized by construction")
            .save(path),
        3 => image::RgbImage::from_raw(w, h, bytes)
            .expect("buffer sized by construction")
            .save(path),
        c => return Err(ItsError::UnsupportedChannels { channels: c }),
    };
    res.map_err(|source| ItsError::Png {
        path: path.to_path_buf(),
        source,
    })
}

/// Read a single-channel ASCII PGM (`P2`, maxval 255).
pub fn read_pgm<T: Real>(path: &Path) -> Result<Image<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| ItsError::io(path, e))?;
    let malformed = |reason: &str| ItsError::Pgm {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut tokens = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(|l| l.split_whitespace());
    if tokens.next() != Some("P2") {
        return Err(malformed("missing P2 header"));
    }
    let mut next_usize = |what: &str| -> Result<usize> {
        tokens
            .next()
            .and_then(|t| t.parse::<usize>().ok())
            .ok_or_else(|| malformed(&format!("bad or missing {what}")))
    };
    let w = next_usize("width")?;
    let h = next_usize("height")?;
    let maxval = next_usize("maxval")?;
    if maxval != 255 {
        return Err(malformed("maxval must be 255"));
    }
    let scale = T::of(1.0 / 255.0);
    let mut pixels = Vec::with_capacity(w * h);
    for _ in 0..w * h {
        pixels.push(T::of(next_usize("pixel value")?.min(255) as f64) * scale);
    }
    Image::new(h, w, 1, pixels)
}

/// Write a single-channel image as ASCII PGM.
pub fn write_pgm<T: Real>(img: &Image<T>, path: &Path) -> Result<()> {
    if img.channels() != 1 {
        return Err(ItsError::UnsupportedChannels {
            channels: img.channels(),
        });
    }
    let bytes = img.to_u8();
    let mut out = format!("P2\n{} {}\n255\n", img.width(), img.height());
    for row in bytes.chunks(img.width()) {
        let mut line = String::new();
        for (i, b) in row.iter().enumerate() {
            if i > 0 {
                line.push(' ');
            }
            let _ = write!(line, "{b}");
        }
        out.push_str(&line);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| ItsError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn buffer_length_is_validated() {
        assert!(matches!(
            Image::<f64>::new(2, 2, 1, vec![0.0; 3]),
            Err(ItsError::PixelBufferSize { expected: 4, .. })
        ));
    }

    #[test]
    fn non_finite_pixels_rejected() {
        assert!(matches!(
            Image::new(1, 2, 1, vec![0.0, f64::NAN]),
            Err(ItsError::NonFinitePixels)
        ));
    }

    #[test]
    fn indexing_is_row_major_channel_minor() {
        let img = Image::from_fn(2, 3, 2, |r, c, ch| (r * 100 + c * 10 + ch) as f64);
        assert_eq!(img.get(1, 2, 1), 121.0);
        assert_eq!(img.pixels()[(1 * 3 + 2) * 2 + 1], 121.0);
    }

    #[test]
    fn pgm_round_trip_preserves_bytes() {
        let dir = std::env::temp_dir().join("its_pgm_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("rt.pgm");
        let img = Image::from_fn(3, 4, 1, |r, c, _| ((r * 4 + c) as f64) / 255.0 * 20.0);
        write_pgm(&img, &path).unwrap();
        let back: Image<f64> = read_pgm(&path).unwrap();
        assert_eq!(back.to_u8(), img.to_u8());
        assert_eq!(back.height(), 3);
        assert_eq!(back.width(), 4);
    }

    #[test]
    fn png_round_trip_preserves_bytes() {
        let dir = std::env::temp_dir().join("its_png_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("rt.png");
        let img = Image::from_fn(5, 4, 1, |r, c, _| ((r * 7 + c * 3) % 256) as f64 / 255.0);
        write_png(&img, &path).unwrap();
        let back: Image<f64> = read_png(&path).unwrap();
        assert_eq!(back.to_u8(), img.to_u8());
    }
}
