use std::path::Path;

use image::imageops::FilterType;
use image::DynamicImage;
use ndarray::Array3;

use crate::error::{Error, Result};

/// Default input side length of the pretrained backbones.
pub const DEFAULT_IMAGE_SIZE: usize = 224;

/// Per-channel RGB statistics the pretrained backbones were trained with.
pub const CHANNEL_MEAN: [f64; 3] = [0.48145466, 0.4578275, 0.40821073];
pub const CHANNEL_STD: [f64; 3] = [0.26862954, 0.26130258, 0.27577711];

/// A normalized `3 × size × size` pixel tensor, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    pixels: Array3<f64>,
}

impl ImageTensor {
    pub fn from_array(pixels: Array3<f64>) -> Result<Self> {
        let (c, h, w) = pixels.dim();
        if c != 3 || h != w || h == 0 {
            return Err(Error::ShapeMismatch {
                expected: "3xSxS".into(),
                actual: format!("{c}x{h}x{w}"),
            });
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteFeature("image pixels"));
        }
        Ok(ImageTensor { pixels })
    }

    pub fn pixels(&self) -> &Array3<f64> {
        &self.pixels
    }

    pub fn size(&self) -> usize {
        self.pixels.dim().1
    }
}

/// Decodes and preprocesses the image at `path` to the default 224×224 input.
pub fn preprocess_image(path: impl AsRef<Path>) -> Result<ImageTensor> {
    preprocess_image_sized(path, DEFAULT_IMAGE_SIZE)
}

pub fn preprocess_image_sized(path: impl AsRef<Path>, size: usize) -> Result<ImageTensor> {
    let img = image::open(path.as_ref()).map_err(|e| Error::DecodeFailure(e.to_string()))?;
    Ok(preprocess_dynamic(&img, size))
}

pub fn preprocess_bytes(bytes: &[u8], size: usize) -> Result<ImageTensor> {
    let img = image::load_from_memory(bytes).map_err(|e| Error::DecodeFailure(e.to_string()))?;
    Ok(preprocess_dynamic(&img, size))
}

/// Resize shorter side to `size` (bicubic), center-crop to `size × size`,
/// scale to [0, 1] and normalize with [`CHANNEL_MEAN`] / [`CHANNEL_STD`].
/// Grayscale and alpha inputs are converted to RGB first.
pub fn preprocess_dynamic(img: &DynamicImage, size: usize) -> ImageTensor {
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let target = size as u32;
    let (rw, rh) = if w <= h {
        (target, ((u64::from(h) * u64::from(target)) / u64::from(w)) as u32)
    } else {
        (((u64::from(w) * u64::from(target)) / u64::from(h)) as u32, target)
    };
    let resized = if (rw, rh) == (w, h) {
        rgb
    } else {
        image::imageops::resize(&rgb, rw, rh, FilterType::CatmullRom)
    };
    let left = ((rw - target) as f64 / 2.0).round() as u32;
    let top = ((rh - target) as f64 / 2.0).round() as u32;

    let mut pixels = Array3::zeros((3, size, size));
    for y in 0..size {
        for x in 0..size {
            let px = resized.get_pixel(left + x as u32, top + y as u32);
            for c in 0..3 {
                let v = f64::from(px[c]) / 255.0;
                pixels[[c, y, x]] = (v - CHANNEL_MEAN[c]) / CHANNEL_STD[c];
            }
        }
    }
    ImageTensor { pixels }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, Luma, Rgb, RgbImage};

    #[test]
    fn crop_geometry_for_portrait_input() {
        let img = DynamicImage::ImageRgb8(RgbImage::from_pixel(512, 768, Rgb([10, 20, 30])));
        let t = preprocess_dynamic(&img, 224);
        assert_eq!(t.pixels().dim(), (3, 224, 224));
    }

    #[test]
    fn exact_size_input_keeps_pixels_and_normalizes() {
        let mut img = RgbImage::new(224, 224);
        img.put_pixel(3, 5, Rgb([255, 0, 128]));
        let t = preprocess_dynamic(&DynamicImage::ImageRgb8(img), 224);
        let p = t.pixels();
        assert!((p[[0, 5, 3]] - (1.0 - CHANNEL_MEAN[0]) / CHANNEL_STD[0]).abs() < 1e-12);
        assert!((p[[1, 5, 3]] - (0.0 - CHANNEL_MEAN[1]) / CHANNEL_STD[1]).abs() < 1e-12);
        assert!((p[[2, 5, 3]] - (128.0 / 255.0 - CHANNEL_MEAN[2]) / CHANNEL_STD[2]).abs() < 1e-12);
        assert!((p[[0, 0, 0]] + CHANNEL_MEAN[0] / CHANNEL_STD[0]).abs() < 1e-12);
    }

    #[test]
    fn grayscale_is_replicated_to_three_channels() {
        let gray = GrayImage::from_pixel(224, 224, Luma([100]));
        let t = preprocess_dynamic(&DynamicImage::ImageLuma8(gray), 224);
        let v = 100.0 / 255.0;
        for c in 0..3 {
            let expected = (v - CHANNEL_MEAN[c]) / CHANNEL_STD[c];
            assert!((t.pixels()[[c, 100, 100]] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn undecodable_bytes_fail() {
        assert!(matches!(
            preprocess_bytes(b"not an image", 224),
            Err(Error::DecodeFailure(_))
        ));
    }

    #[test]
    fn tensor_rejects_wrong_shapes() {
        assert!(ImageTensor::from_array(Array3::zeros((1, 4, 4))).is_err());
        assert!(ImageTensor::from_array(Array3::zeros((3, 4, 5))).is_err());
        assert!(ImageTensor::from_array(Array3::zeros((3, 4, 4))).is_ok());
    }
}
