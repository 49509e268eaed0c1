//! RGB rasters in `[0, 1]`, colour-space conversion and PNG I/O.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Exponent of the gamma approximation to the sRGB transfer curve.
pub const GAMMA: Real = 2.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColorSpace {
    /// Gamma-encoded display values.
    Srgb,
    /// Values proportional to scene radiance.
    Linear,
}

/// Sample depth used when writing PNG files.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BitDepth {
    #[default]
    Eight,
    Sixteen,
}

impl BitDepth {
    fn max(self) -> Real {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }
}

/// Gamma-encodes a linear value.
pub fn encode(v: Real) -> Real {
    v.clamp(0.0, 1.0).powf(1.0 / GAMMA)
}

/// Decodes a gamma-encoded value to linear.
pub fn decode(v: Real) -> Real {
    v.clamp(0.0, 1.0).powf(GAMMA)
}

/// An `H x W x 3` raster, interleaved row-major, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<Real>,
    space: ColorSpace,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<Real>, space: ColorSpace) -> Result<Self> {
        if pixels.len() != height * width * 3 {
            return Err(Error::InvalidArgument(format!(
                "{height}x{width} RGB image needs {} values, got {}",
                height * width * 3,
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Image {
            height,
            width,
            pixels,
            space,
        })
    }

    /// Builds an image from `f(y, x, channel)`, clamping into `[0, 1]`.
    pub fn from_fn(
        height: usize,
        width: usize,
        space: ColorSpace,
        mut f: impl FnMut(usize, usize, usize) -> Real,
    ) -> Self {
        let mut pixels = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    pixels.push(f(y, x, c).clamp(0.0, 1.0));
                }
            }
        }
        Image {
            height,
            width,
            pixels,
            space,
        }
    }

    pub fn filled(height: usize, width: usize, value: Real, space: ColorSpace) -> Self {
        Self::from_fn(height, width, space, |_, _, _| value)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn space(&self) -> ColorSpace {
        self.space
    }

    pub fn pixels(&self) -> &[Real] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> Real {
        self.pixels[(y * self.width + x) * 3 + c]
    }

    pub fn same_size(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Applies `f` to every value, clamping the result into `[0, 1]`.
    pub fn map(&self, space: ColorSpace, f: impl Fn(Real) -> Real) -> Image {
        Image {
            height: self.height,
            width: self.width,
            pixels: self.pixels.iter().map(|&v| f(v).clamp(0.0, 1.0)).collect(),
            space,
        }
    }

    pub fn to_srgb(&self) -> Image {
        match self.space {
            ColorSpace::Srgb => self.clone(),
            ColorSpace::Linear => self.map(ColorSpace::Srgb, encode),
        }
    }

    pub fn to_linear(&self) -> Image {
        match self.space {
            ColorSpace::Linear => self.clone(),
            ColorSpace::Srgb => self.map(ColorSpace::Linear, decode),
        }
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::InvalidArgument(format!(
                "crop {height}x{width} at ({top}, {left}) exceeds {}x{} image",
                self.height, self.width
            )));
        }
        let mut pixels = Vec::with_capacity(height * width * 3);
        for y in top..top + height {
            let row = (y * self.width + left) * 3;
            pixels.extend_from_slice(&self.pixels[row..row + width * 3]);
        }
        Ok(Image {
            height,
            width,
            pixels,
            space: self.space,
        })
    }

    /// `[1, 3, H, W]` planar tensor.
    pub fn to_tensor(&self) -> Tensor {
        let plane = self.height * self.width;
        let mut data = vec![0.0; 3 * plane];
        for (p, px) in self.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * plane + p] = px[c];
            }
        }
        Tensor::new([1, 3, self.height, self.width], data).expect("image tensor shape")
    }

    /// Inverse of [`Image::to_tensor`]; values are clamped into `[0, 1]`.
    pub fn from_tensor(t: &Tensor, space: ColorSpace) -> Result<Image> {
        let s = t.shape();
        if s.len() != 4 || s[0] != 1 || s[1] != 3 {
            return Err(Error::shape("image_from_tensor", format!("expected [1, 3, H, W], got {s:?}")));
        }
        if !t.all_finite() {
            return Err(Error::NonFinite("image tensor contains NaN or infinity".into()));
        }
        let (h, w) = (s[2], s[3]);
        let plane = h * w;
        let d = t.data();
        let pixels = (0..plane)
            .flat_map(|p| (0..3).map(move |c| d[c * plane + p].clamp(0.0, 1.0)))
            .collect();
        Ok(Image {
            height: h,
            width: w,
            pixels,
            space,
        })
    }

    /// Bilinear resize with corner-aligned sampling.
    pub fn resize(&self, height: usize, width: usize) -> Result<Image> {
        if height == self.height && width == self.width {
            return Ok(self.clone());
        }
        let tape = crate::autodiff::Tape::new();
        let t = tape.constant(self.to_tensor()).bilinear_resize(height, width)?;
        Image::from_tensor(&t.value(), self.space)
    }

    /// Rounds values to the nearest level representable at `depth`.
    pub fn quantize(&self, depth: BitDepth) -> Image {
        let m = depth.max();
        self.map(self.space, |v| (v * m).round() / m)
    }

    pub fn save_png(&self, path: &Path, depth: BitDepth) -> Result<()> {
        let bytes: Vec<u8> = match depth {
            BitDepth::Eight => self.pixels.iter().map(|&v| (v * 255.0).round() as u8).collect(),
            BitDepth::Sixteen => self
                .pixels
                .iter()
                .flat_map(|&v| ((v * 65535.0).round() as u16).to_be_bytes())
                .collect(),
        };
        write_png(path, self.width, self.height, png::ColorType::Rgb, depth, &bytes)
    }

    /// Loads an 8- or 16-bit PNG (grey, grey+alpha, RGB or RGBA; alpha is
    /// dropped). The result is tagged sRGB.
    pub fn load_png(path: &Path) -> Result<Image> {
        let (info, buf) = read_png(path)?;
        let bytes_per_sample = match info.bit_depth {
            png::BitDepth::Sixteen => 2,
            _ => 1,
        };
        let max = if bytes_per_sample == 2 { 65535.0 } else { 255.0 };
        let channels = info.color_type.samples();
        let sample = |i: usize| -> Real {
            let raw = if bytes_per_sample == 2 {
                u16::from_be_bytes([buf[2 * i], buf[2 * i + 1]]) as Real
            } else {
                buf[i] as Real
            };
            raw / max
        };
        let (w, h) = (info.width as usize, info.height as usize);
        let mut pixels = Vec::with_capacity(w * h * 3);
        for p in 0..w * h {
            let base = p * channels;
            match channels {
                1 | 2 => {
                    let v = sample(base);
                    pixels.extend_from_slice(&[v, v, v]);
                }
                3 | 4 => {
                    for c in 0..3 {
                        pixels.push(sample(base + c));
                    }
                }
                n => {
                    return Err(Error::Png {
                        path: path.into(),
                        message: format!("unsupported channel count {n}"),
                    })
                }
            }
        }
        Image::new(h, w, pixels, ColorSpace::Srgb)
    }
}

fn png_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Png {
        path: path.into(),
        message: e.to_string(),
    }
}

fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: BitDepth,
    bytes: &[u8],
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(match depth {
        BitDepth::Eight => png::BitDepth::Eight,
        BitDepth::Sixteen => png::BitDepth::Sixteen,
    });
    let mut writer = enc.write_header().map_err(|e| png_err(path, e))?;
    writer.write_image_data(bytes).map_err(|e| png_err(path, e))?;
    writer.finish().map_err(|e| png_err(path, e))
}

fn read_png(path: &Path) -> Result<(png::OutputInfo, Vec<u8>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = png::Decoder::new(BufReader::new(file));
    dec.set_transformations(png::Transformations::EXPAND);
    let mut reader = dec.read_info().map_err(|e| png_err(path, e))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| png_err(path, e))?;
    buf.truncate(info.buffer_size());
    Ok((info, buf))
}

/// Writes a single-channel 16-bit PNG, mapping `[lo, hi]` onto `[0, 65535]`.
pub fn save_gray16(path: &Path, height: usize, width: usize, values: &[Real], lo: Real, hi: Real) -> Result<()> {
    if values.len() != height * width {
        return Err(Error::InvalidArgument(format!(
            "{height}x{width} map needs {} values, got {}",
            height * width,
            values.len()
        )));
    }
    let bytes: Vec<u8> = values
        .iter()
        .flat_map(|&v| {
            let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
            ((t * 65535.0).round() as u16).to_be_bytes()
        })
        .collect();
    write_png(path, width, height, png::ColorType::Grayscale, BitDepth::Sixteen, &bytes)
}

/// Reads a single-channel 16-bit PNG written by [`save_gray16`].
pub fn load_gray16(path: &Path, lo: Real, hi: Real) -> Result<(usize, usize, Vec<Real>)> {
    let (info, buf) = read_png(path)?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(png_err(path, "expected 16-bit greyscale"));
    }
    let values = buf
        .chunks_exact(2)
        .map(|b| lo + (hi - lo) * u16::from_be_bytes([b[0], b[1]]) as Real / 65535.0)
        .collect();
    Ok((info.height as usize, info.width as usize, values))
}
