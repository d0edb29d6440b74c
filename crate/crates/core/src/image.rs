//! Floating-point raster container and bit-depth aware file I/O.
//!
//! Samples are stored row-major with interleaved channels, normalized to
//! `[0, 1]` on load. Intermediate results (texture maps, detail layers) may
//! leave that range; [`Image::clamp_unit`] brings them back.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::codecs::png::PngEncoder;
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageReader};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::UnsupportedChannels(channels));
        }
        if data.len() != width * height * channels {
            return Err(Error::shape(format!(
                "{} samples for {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Result<Self> {
        Self::filled(width, height, channels, 0.0)
    }

    /// Builds a single-channel image from a per-pixel function.
    pub fn from_fn_gray(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            channels: 1,
            data,
        }
    }

    /// Builds a three-channel image from a per-pixel function.
    pub fn from_fn_rgb(width: usize, height: usize, f: impl Fn(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            channels: 3,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Sample at signed coordinates, mirrored back into the raster.
    #[inline]
    pub fn get_reflect(&self, x: isize, y: isize, c: usize) -> f32 {
        self.get(reflect(x, self.width), reflect(y, self.height), c)
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn same_size(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn check_same_shape(&self, other: &Image, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )))
        }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Image, f: impl Fn(f32, f32) -> f32) -> Result<Image> {
        self.check_same_shape(other, "elementwise operation")?;
        Ok(Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn clamp_unit(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Extracts one channel as a grayscale image.
    pub fn channel(&self, c: usize) -> Image {
        assert!(c < self.channels, "channel {c} out of range");
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.data.iter().skip(c).step_by(self.channels).copied().collect(),
        }
    }

    /// Interleaves three grayscale planes into an RGB image.
    pub fn from_planes(planes: [&Image; 3]) -> Result<Image> {
        let [r, g, b] = planes;
        if r.channels != 1 || !r.same_shape(g) || !r.same_shape(b) {
            return Err(Error::shape("planes must be equally sized single-channel images"));
        }
        let mut data = Vec::with_capacity(r.data.len() * 3);
        for i in 0..r.data.len() {
            data.extend_from_slice(&[r.data[i], g.data[i], b.data[i]]);
        }
        Image::new(r.width, r.height, 3, data)
    }

    /// Rec. 601 luma for RGB inputs, identity for gray.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self
                .data
                .chunks_exact(3)
                .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
                .collect(),
        }
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Image> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::invalid(format!(
                "crop {width}x{height}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(width * height * self.channels);
        for y in y0..y0 + height {
            let start = (y * self.width + x0) * self.channels;
            data.extend_from_slice(&self.data[start..start + width * self.channels]);
        }
        Image::new(width, height, self.channels, data)
    }

    /// Center-crops to the largest size whose sides are multiples of `multiple`.
    pub fn center_crop_to_multiple(&self, multiple: usize) -> Result<Image> {
        if multiple == 0 {
            return Err(Error::invalid("crop multiple must be positive"));
        }
        let w = self.width / multiple * multiple;
        let h = self.height / multiple * multiple;
        if w == 0 || h == 0 {
            return Err(Error::invalid(format!(
                "{}x{} image is smaller than {multiple}",
                self.width, self.height
            )));
        }
        self.crop((self.width - w) / 2, (self.height - h) / 2, w, h)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }
}

/// Mirror index `i` into `0..n` without repeating the edge sample
/// (`... 2 1 | 0 1 2 ... n-1 | n-2 ...`). Works for arbitrary offsets.
#[inline]
pub fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Elementwise product of two equally shaped images.
pub fn hadamard(a: &Image, b: &Image) -> Result<Image> {
    a.zip_map(b, |x, y| x * y)
}

/// Loads an 8- or 16-bit gray/RGB PNG or binary PGM/PPM.
///
/// With `sensor_bits` set, raw integers are divided by `2^bits - 1` and any
/// sample above that maximum is rejected; otherwise the container maximum
/// is used.
pub fn load_image(path: impl AsRef<Path>, sensor_bits: Option<u32>) -> Result<Image> {
    let path = path.as_ref();
    let decoded = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    let (width, height) = (decoded.width() as usize, decoded.height() as usize);
    let (channels, raw, container_max): (usize, Vec<u32>, u32) = match decoded {
        DynamicImage::ImageLuma8(b) => (1, b.into_raw().into_iter().map(u32::from).collect(), 255),
        DynamicImage::ImageRgb8(b) => (3, b.into_raw().into_iter().map(u32::from).collect(), 255),
        DynamicImage::ImageLuma16(b) => {
            (1, b.into_raw().into_iter().map(u32::from).collect(), 65535)
        }
        DynamicImage::ImageRgb16(b) => {
            (3, b.into_raw().into_iter().map(u32::from).collect(), 65535)
        }
        other => return Err(Error::UnsupportedChannels(other.color().channel_count() as usize)),
    };
    let divisor = match sensor_bits {
        Some(bits) => {
            if bits == 0 || bits > 16 {
                return Err(Error::invalid(format!("sensor bit depth {bits} not in 1..=16")));
            }
            let max = (1u32 << bits) - 1;
            if let Some(&value) = raw.iter().find(|&&v| v > max) {
                return Err(Error::SampleRange { value, max, bits });
            }
            max
        }
        None => container_max,
    };
    let scale = 1.0 / divisor as f64;
    let data = raw.into_iter().map(|v| (v as f64 * scale) as f32).collect();
    Image::new(width, height, channels, data)
}

/// Writes PNG (`.png`) or binary PGM/PPM (`.pgm`, `.ppm`, `.pnm`) at 8 or 16 bits.
pub fn save_image(img: &Image, path: impl AsRef<Path>, bits: u32) -> Result<()> {
    let path = path.as_ref();
    if bits != 8 && bits != 16 {
        return Err(Error::invalid(format!("bit depth {bits} must be 8 or 16")));
    }
    if !img.is_finite() {
        return Err(Error::invalid("cannot save non-finite samples"));
    }
    let max = ((1u32 << bits) - 1) as f32;
    let quantized: Vec<u16> = img
        .data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * max).round() as u16)
        .collect();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let (w, h) = (img.width as u32, img.height as u32);
    let mut writer = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let encoded = match ext.as_str() {
        "pgm" | "ppm" | "pnm" => write_pnm(&mut writer, img, &quantized, bits)
            .and_then(|_| writer.flush())
            .map_err(|e| e.to_string()),
        "png" | "" => {
            let color = match (img.channels, bits) {
                (1, 8) => ExtendedColorType::L8,
                (3, 8) => ExtendedColorType::Rgb8,
                (1, 16) => ExtendedColorType::L16,
                _ => ExtendedColorType::Rgb16,
            };
            // The PNG encoder takes 16-bit samples as native-endian bytes.
            let bytes: Vec<u8> = if bits == 8 {
                quantized.iter().map(|&v| v as u8).collect()
            } else {
                quantized.iter().flat_map(|v| v.to_ne_bytes()).collect()
            };
            PngEncoder::new(writer)
                .write_image(&bytes, w, h, color)
                .map_err(|e| e.to_string())
        }
        other => Err(format!("unsupported extension .{other}")),
    };
    encoded.map_err(|message| Error::Encode {
        path: path.to_path_buf(),
        message,
    })
}

/// Binary P5/P6 with big-endian samples when maxval exceeds 255.
fn write_pnm(out: &mut impl Write, img: &Image, samples: &[u16], bits: u32) -> std::io::Result<()> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let maxval = (1u32 << bits) - 1;
    write!(out, "{magic}\n{} {}\n{maxval}\n", img.width, img.height)?;
    if bits == 8 {
        let bytes: Vec<u8> = samples.iter().map(|&v| v as u8).collect();
        out.write_all(&bytes)
    } else {
        let bytes: Vec<u8> = samples.iter().flat_map(|v| v.to_be_bytes()).collect();
        out.write_all(&bytes)
    }
}
