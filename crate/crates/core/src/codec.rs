//! Image decoding, resizing, JPEG recompression and the compression-difference
//! (FDIFF) input representation.
//!
//! The preprocessing order is fixed: resize to the target size, recompress the
//! resized image at the configured JPEG quality, decode it again and take the
//! signed per-sample difference between the two. The network input is then
//! assembled from the normalized RGB image, the remapped difference, or both.

use std::io::Cursor;

use image::ImageFormat;
use jpeg_encoder::{ColorType, Encoder, SamplingFactor};
use serde::{Deserialize, Serialize};

/// Errors raised by the codec layer.
#[derive(thiserror::Error, Debug)]
pub enum CodecError {
    #[error("malformed image: {0}")]
    MalformedImage(String),

    #[error("unsupported image format (expected JPEG or PNG)")]
    UnsupportedFormat,

    #[error("JPEG encoding failed: {0}")]
    EncodeFailure(String),

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize, usize),
        right: (usize, usize, usize),
    },

    #[error("invalid preprocessing configuration: {0}")]
    InvalidConfig(String),

    #[error("image buffer length {len} does not match {width}x{height}x{channels}")]
    InvalidDimensions {
        width: usize,
        height: usize,
        channels: usize,
        len: usize,
    },
}

pub type Result<T> = std::result::Result<T, CodecError>;

/// An 8-bit raster, row-major with interleaved channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageTensor {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl ImageTensor {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || !(channels == 1 || channels == 3) || data.len() != width * height * channels {
            return Err(CodecError::InvalidDimensions {
                width,
                height,
                channels,
                len: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// A 3-channel image filled with one color.
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self {
            width,
            height,
            channels: 3,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [u8] {
        let start = (y * self.width + x) * self.channels;
        &mut self.data[start..start + self.channels]
    }

    /// Expands a single-channel image to three identical channels.
    pub fn to_rgb(&self) -> ImageTensor {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        ImageTensor {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }

    /// Encodes the image as PNG.
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let color = if self.channels == 3 {
            image::ExtendedColorType::Rgb8
        } else {
            image::ExtendedColorType::L8
        };
        let mut out = Vec::new();
        image::write_buffer_with_format(
            &mut Cursor::new(&mut out),
            &self.data,
            self.width as u32,
            self.height as u32,
            color,
            ImageFormat::Png,
        )
        .map_err(|e| CodecError::EncodeFailure(e.to_string()))?;
        Ok(out)
    }
}

/// Signed per-sample difference between an image and its recompressed copy,
/// scaled by 1/255 so every value lies in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct DiffTensor {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl DiffTensor {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mean absolute value over the rectangle `[x0, x1) × [y0, y1)`, all channels.
    pub fn mean_abs_in(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for y in y0..y1.min(self.height) {
            for x in x0..x1.min(self.width) {
                let start = (y * self.width + x) * self.channels;
                for v in &self.data[start..start + self.channels] {
                    sum += v.abs();
                    n += 1;
                }
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    pub fn mean_abs(&self) -> f64 {
        self.mean_abs_in(0, 0, self.width, self.height)
    }

    /// Renders the difference as an 8-bit image for inspection:
    /// `round((diff * gain + 1) / 2 * 255)`, clamped to [0, 255].
    pub fn visualize(&self, gain: f64) -> ImageTensor {
        let data = self
            .data
            .iter()
            .map(|d| ((d * gain + 1.0) / 2.0 * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        ImageTensor {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data,
        }
    }
}

/// Which representation is fed to the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum InputMode {
    RgbOnly,
    FdiffOnly,
    Hybrid,
}

impl InputMode {
    pub fn channels(self) -> usize {
        match self {
            InputMode::RgbOnly | InputMode::FdiffOnly => 3,
            InputMode::Hybrid => 6,
        }
    }
}

/// Chroma subsampling used when recompressing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
pub enum ChromaSubsampling {
    #[serde(rename = "4:2:0")]
    #[value(name = "420")]
    Yuv420,
    #[serde(rename = "4:4:4")]
    #[value(name = "444")]
    Yuv444,
}

impl ChromaSubsampling {
    fn sampling_factor(self) -> SamplingFactor {
        match self {
            ChromaSubsampling::Yuv420 => SamplingFactor::R_4_2_0,
            ChromaSubsampling::Yuv444 => SamplingFactor::R_4_4_4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResizeFilter {
    Bilinear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub target_width: usize,
    pub target_height: usize,
    pub jpeg_quality: u8,
    pub input_mode: InputMode,
    pub subsampling: ChromaSubsampling,
    pub resize_filter: ResizeFilter,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            target_width: 224,
            target_height: 224,
            jpeg_quality: 90,
            input_mode: InputMode::Hybrid,
            subsampling: ChromaSubsampling::Yuv420,
            resize_filter: ResizeFilter::Bilinear,
        }
    }
}

impl PreprocessConfig {
    /// Square target size, other fields at their defaults.
    pub fn square(size: usize) -> Self {
        Self {
            target_width: size,
            target_height: size,
            ..Self::default()
        }
    }

    pub fn with_mode(mut self, mode: InputMode) -> Self {
        self.input_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=100).contains(&self.jpeg_quality) {
            return Err(CodecError::InvalidConfig(format!(
                "jpeg_quality must be in 1..=100, got {}",
                self.jpeg_quality
            )));
        }
        if self.target_width < 8 || self.target_height < 8 {
            return Err(CodecError::InvalidConfig(format!(
                "target size must be at least 8x8, got {}x{}",
                self.target_width, self.target_height
            )));
        }
        if self.target_width > u16::MAX as usize || self.target_height > u16::MAX as usize {
            return Err(CodecError::InvalidConfig("target size exceeds JPEG limits".into()));
        }
        Ok(())
    }
}

/// Network input: unit-interval reals, row-major, interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct InputTensor {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl InputTensor {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 || data.len() != width * height * channels {
            return Err(CodecError::InvalidDimensions {
                width,
                height,
                channels,
                len: data.len(),
            });
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(CodecError::InvalidConfig(format!(
                "normalized sample {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Channel `c` of pixel `(x, y)`.
    pub fn at(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }
}

/// Decodes a JPEG or PNG stream into a 3-channel 8-bit image.
pub fn decode_image(bytes: &[u8]) -> Result<ImageTensor> {
    let format = match image::guess_format(bytes) {
        Ok(f @ (ImageFormat::Jpeg | ImageFormat::Png)) => f,
        Ok(_) => return Err(CodecError::UnsupportedFormat),
        Err(_) => {
            // A stream too short to identify is still malformed if it starts like one of ours.
            if bytes.starts_with(&[0xFF, 0xD8]) || bytes.starts_with(b"\x89PNG") {
                return Err(CodecError::MalformedImage("truncated stream".into()));
            }
            return Err(CodecError::UnsupportedFormat);
        }
    };
    let decoded =
        image::load_from_memory_with_format(bytes, format).map_err(|e| CodecError::MalformedImage(e.to_string()))?;
    let rgb = decoded.to_rgb8();
    let (w, h) = rgb.dimensions();
    ImageTensor::new(w as usize, h as usize, 3, rgb.into_raw())
}

/// Bilinear resampling with half-pixel centers.
pub fn resize_bilinear(img: &ImageTensor, width: usize, height: usize) -> ImageTensor {
    assert!(width >= 1 && height >= 1, "resize target must be at least 1x1");
    if img.width == width && img.height == height {
        return img.clone();
    }
    let xs = axis_taps(img.width, width);
    let ys = axis_taps(img.height, height);
    let c = img.channels;
    let mut data = vec![0u8; width * height * c];
    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            let p00 = img.pixel(x0, y0);
            let p01 = img.pixel(x1, y0);
            let p10 = img.pixel(x0, y1);
            let p11 = img.pixel(x1, y1);
            let out = &mut data[(oy * width + ox) * c..(oy * width + ox + 1) * c];
            for k in 0..c {
                let top = p00[k] as f64 * (1.0 - fx) + p01[k] as f64 * fx;
                let bottom = p10[k] as f64 * (1.0 - fx) + p11[k] as f64 * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                out[k] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    ImageTensor {
        width,
        height,
        channels: c,
        data,
    }
}

/// Source taps `(lo, hi, frac)` for each output coordinate along one axis.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

/// Baseline JPEG encoding of a 3-channel image.
pub fn encode_jpeg(img: &ImageTensor, quality: u8, subsampling: ChromaSubsampling) -> Result<Vec<u8>> {
    if img.channels != 3 {
        return Err(CodecError::EncodeFailure("JPEG encoding expects 3 channels".into()));
    }
    if !(1..=100).contains(&quality) {
        return Err(CodecError::EncodeFailure(format!("quality {quality} outside 1..=100")));
    }
    let width = u16::try_from(img.width).map_err(|_| CodecError::EncodeFailure("width too large".into()))?;
    let height = u16::try_from(img.height).map_err(|_| CodecError::EncodeFailure("height too large".into()))?;
    let mut out = Vec::new();
    let mut encoder = Encoder::new(&mut out, quality);
    encoder.set_sampling_factor(subsampling.sampling_factor());
    encoder
        .encode(&img.data, width, height, ColorType::Rgb)
        .map_err(|e| CodecError::EncodeFailure(e.to_string()))?;
    Ok(out)
}

/// Encodes as JPEG at `quality` and decodes the result.
pub fn jpeg_roundtrip(img: &ImageTensor, quality: u8, subsampling: ChromaSubsampling) -> Result<ImageTensor> {
    let encoded = encode_jpeg(img, quality, subsampling)?;
    let decoded = decode_image(&encoded)?;
    debug_assert_eq!(decoded.shape(), img.shape());
    Ok(decoded)
}

/// Elementwise `(f - f_comp) / 255`.
pub fn compute_fdiff(f: &ImageTensor, f_comp: &ImageTensor) -> Result<DiffTensor> {
    if f.shape() != f_comp.shape() {
        return Err(CodecError::ShapeMismatch {
            left: f.shape(),
            right: f_comp.shape(),
        });
    }
    let data = f
        .data
        .iter()
        .zip(&f_comp.data)
        .map(|(&a, &b)| (a as f64 - b as f64) / 255.0)
        .collect();
    Ok(DiffTensor {
        width: f.width,
        height: f.height,
        channels: f.channels,
        data,
    })
}

/// Assembles the normalized network input for `mode`.
///
/// RGB samples map to `v / 255`; difference samples map to `(d + 1) / 2`.
/// Hybrid concatenates the two along the channel axis (RGB first).
pub fn build_input(rgb: &ImageTensor, fdiff: &DiffTensor, mode: InputMode) -> Result<InputTensor> {
    if rgb.channels != 3 || rgb.shape() != fdiff.shape() {
        return Err(CodecError::ShapeMismatch {
            left: rgb.shape(),
            right: fdiff.shape(),
        });
    }
    let pixels = rgb.width * rgb.height;
    let out_c = mode.channels();
    let mut data = Vec::with_capacity(pixels * out_c);
    for p in 0..pixels {
        let rgb_px = &rgb.data[p * 3..p * 3 + 3];
        let diff_px = &fdiff.data[p * 3..p * 3 + 3];
        if matches!(mode, InputMode::RgbOnly | InputMode::Hybrid) {
            data.extend(rgb_px.iter().map(|&v| v as f64 / 255.0));
        }
        if matches!(mode, InputMode::FdiffOnly | InputMode::Hybrid) {
            data.extend(diff_px.iter().map(|&d| (d + 1.0) / 2.0));
        }
    }
    Ok(InputTensor {
        width: rgb.width,
        height: rgb.height,
        channels: out_c,
        data,
    })
}

/// Normalized RGB input without computing a difference image.
pub fn rgb_input(rgb: &ImageTensor) -> InputTensor {
    let rgb = rgb.to_rgb();
    InputTensor {
        width: rgb.width,
        height: rgb.height,
        channels: 3,
        data: rgb.data.iter().map(|&v| v as f64 / 255.0).collect(),
    }
}

/// Resized image and its compression difference, before normalization.
pub struct Prepared {
    pub resized: ImageTensor,
    pub fdiff: DiffTensor,
}

/// Resize, recompress and difference an already decoded image.
pub fn prepare(img: &ImageTensor, cfg: &PreprocessConfig) -> Result<Prepared> {
    cfg.validate()?;
    let resized = resize_bilinear(&img.to_rgb(), cfg.target_width, cfg.target_height);
    let recompressed = jpeg_roundtrip(&resized, cfg.jpeg_quality, cfg.subsampling)?;
    let fdiff = compute_fdiff(&resized, &recompressed)?;
    Ok(Prepared { resized, fdiff })
}

/// Full preprocessing from an encoded file to a network input.
pub fn preprocess_bytes(bytes: &[u8], cfg: &PreprocessConfig) -> Result<InputTensor> {
    let img = decode_image(bytes)?;
    preprocess_image(&img, cfg)
}

pub fn preprocess_image(img: &ImageTensor, cfg: &PreprocessConfig) -> Result<InputTensor> {
    cfg.validate()?;
    if cfg.input_mode == InputMode::RgbOnly {
        let resized = resize_bilinear(&img.to_rgb(), cfg.target_width, cfg.target_height);
        return Ok(rgb_input(&resized));
    }
    let prepared = prepare(img, cfg)?;
    build_input(&prepared.resized, &prepared.fdiff, cfg.input_mode)
}
