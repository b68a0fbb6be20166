//! Image preprocessing and training-time augmentation.
//!
//! Eval mode: bilinear resize, scale to [0,1], per-channel ImageNet
//! normalization. Train mode first applies, in order: horizontal flip,
//! rotation, translation (one combined affine resample, black fill),
//! brightness, contrast, saturation (clamped back to [0,1]) — drawing its
//! random factors in that same order from the provided stream.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{Mode, Tensor};
use image::RgbImage;
use serde::{Deserialize, Serialize};

pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    pub max_rotation_deg: f64,
    pub brightness_jitter: f64,
    pub contrast_jitter: f64,
    pub saturation_jitter: f64,
    pub max_translate_frac: f64,
    pub target_size: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip_prob: 0.5,
            max_rotation_deg: 15.0,
            brightness_jitter: 0.2,
            contrast_jitter: 0.2,
            saturation_jitter: 0.1,
            max_translate_frac: 0.1,
            target_size: 224,
        }
    }
}

impl AugmentConfig {
    /// Identity augmentation (still resizes and normalizes).
    pub fn none(target_size: usize) -> Self {
        AugmentConfig {
            flip_prob: 0.0,
            max_rotation_deg: 0.0,
            brightness_jitter: 0.0,
            contrast_jitter: 0.0,
            saturation_jitter: 0.0,
            max_translate_frac: 0.0,
            target_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("flip_prob", self.flip_prob),
            ("brightness_jitter", self.brightness_jitter),
            ("contrast_jitter", self.contrast_jitter),
            ("saturation_jitter", self.saturation_jitter),
            ("max_translate_frac", self.max_translate_frac),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0,1], got {v}")));
            }
        }
        if !(0.0..=180.0).contains(&self.max_rotation_deg) {
            return Err(Error::Config(format!(
                "max_rotation_deg must be in [0,180], got {}",
                self.max_rotation_deg
            )));
        }
        if self.target_size == 0 {
            return Err(Error::Config("target_size must be positive".into()));
        }
        Ok(())
    }
}

/// Interleaved RGB f32 plane in [0,1].
struct Raster {
    w: usize,
    h: usize,
    px: Vec<f32>,
}

impl Raster {
    fn from_image(img: &RgbImage) -> Result<Self> {
        let (w, h) = (img.width() as usize, img.height() as usize);
        if w == 0 || h == 0 {
            return Err(Error::Input("cannot preprocess a zero-dimension image".into()));
        }
        Ok(Raster {
            w,
            h,
            px: img.as_raw().iter().map(|&b| b as f32 / 255.0).collect(),
        })
    }

    fn at(&self, x: usize, y: usize, c: usize) -> f32 {
        self.px[(y * self.w + x) * 3 + c]
    }

    /// Bilinear sample at continuous coordinates, black outside the frame.
    fn sample_black(&self, x: f32, y: f32, c: usize) -> f32 {
        if x <= -1.0 || y <= -1.0 || x >= self.w as f32 || y >= self.h as f32 {
            return 0.0;
        }
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let get = |xi: isize, yi: isize| -> f32 {
            if xi < 0 || yi < 0 || xi >= self.w as isize || yi >= self.h as isize {
                0.0
            } else {
                self.at(xi as usize, yi as usize, c)
            }
        };
        let (x0, y0) = (x0 as isize, y0 as isize);
        let top = get(x0, y0) * (1.0 - fx) + get(x0 + 1, y0) * fx;
        let bot = get(x0, y0 + 1) * (1.0 - fx) + get(x0 + 1, y0 + 1) * fx;
        top * (1.0 - fy) + bot * fy
    }

    /// Bilinear sample with edge clamping, for resize.
    fn sample_clamped(&self, x: f32, y: f32, c: usize) -> f32 {
        let x = x.clamp(0.0, (self.w - 1) as f32);
        let y = y.clamp(0.0, (self.h - 1) as f32);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.w - 1);
        let y1 = (y0 + 1).min(self.h - 1);
        let fx = x - x0 as f32;
        let fy = y - y0 as f32;
        let top = self.at(x0, y0, c) * (1.0 - fx) + self.at(x1, y0, c) * fx;
        let bot = self.at(x0, y1, c) * (1.0 - fx) + self.at(x1, y1, c) * fx;
        top * (1.0 - fy) + bot * fy
    }

    fn flip_horizontal(&mut self) {
        for y in 0..self.h {
            for x in 0..self.w / 2 {
                for c in 0..3 {
                    let a = (y * self.w + x) * 3 + c;
                    let b = (y * self.w + (self.w - 1 - x)) * 3 + c;
                    self.px.swap(a, b);
                }
            }
        }
    }

    /// Rotate about the center then translate, as one inverse-mapped bilinear
    /// resample with black fill.
    fn rotate_translate(&self, angle_rad: f32, tx: f32, ty: f32) -> Raster {
        let (cx, cy) = ((self.w as f32 - 1.0) / 2.0, (self.h as f32 - 1.0) / 2.0);
        let (sin, cos) = (-angle_rad).sin_cos();
        let mut out = vec![0.0f32; self.px.len()];
        for y in 0..self.h {
            for x in 0..self.w {
                let dx = x as f32 - tx - cx;
                let dy = y as f32 - ty - cy;
                let sx = cos * dx - sin * dy + cx;
                let sy = sin * dx + cos * dy + cy;
                for c in 0..3 {
                    out[(y * self.w + x) * 3 + c] = self.sample_black(sx, sy, c);
                }
            }
        }
        Raster {
            w: self.w,
            h: self.h,
            px: out,
        }
    }

    fn resize(&self, size: usize) -> Raster {
        if size == self.w && size == self.h {
            return Raster {
                w: self.w,
                h: self.h,
                px: self.px.clone(),
            };
        }
        let sx = self.w as f32 / size as f32;
        let sy = self.h as f32 / size as f32;
        let mut out = vec![0.0f32; size * size * 3];
        for y in 0..size {
            for x in 0..size {
                let src_x = (x as f32 + 0.5) * sx - 0.5;
                let src_y = (y as f32 + 0.5) * sy - 0.5;
                for c in 0..3 {
                    out[(y * size + x) * 3 + c] = self.sample_clamped(src_x, src_y, c);
                }
            }
        }
        Raster {
            w: size,
            h: size,
            px: out,
        }
    }
}

fn luma(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Decode-to-tensor pipeline. Output is 3×S×S, channel-planar, normalized.
pub fn preprocess(
    image: &RgbImage,
    mode: Mode,
    cfg: &AugmentConfig,
    rng: &mut RngStream,
) -> Result<Tensor<f32>> {
    cfg.validate()?;
    let mut raster = Raster::from_image(image)?;

    if mode == Mode::Train {
        if rng.uniform() < cfg.flip_prob {
            raster.flip_horizontal();
        }
        let angle = rng.uniform_in(-cfg.max_rotation_deg, cfg.max_rotation_deg);
        let tx = rng.uniform_in(-cfg.max_translate_frac, cfg.max_translate_frac)
            * raster.w as f64;
        let ty = rng.uniform_in(-cfg.max_translate_frac, cfg.max_translate_frac)
            * raster.h as f64;
        if angle != 0.0 || tx != 0.0 || ty != 0.0 {
            raster = raster.rotate_translate(
                (angle.to_radians()) as f32,
                tx as f32,
                ty as f32,
            );
        }

        let brightness = rng.uniform_in(1.0 - cfg.brightness_jitter, 1.0 + cfg.brightness_jitter);
        let contrast = rng.uniform_in(1.0 - cfg.contrast_jitter, 1.0 + cfg.contrast_jitter);
        let saturation = rng.uniform_in(1.0 - cfg.saturation_jitter, 1.0 + cfg.saturation_jitter);

        if brightness != 1.0 {
            let f = brightness as f32;
            for v in &mut raster.px {
                *v *= f;
            }
        }
        if contrast != 1.0 {
            // Blend with the mean luminance of the (brightness-adjusted) image.
            let n = (raster.w * raster.h) as f32;
            let mut mean = 0.0f32;
            for p in raster.px.chunks_exact(3) {
                mean += luma(p[0], p[1], p[2]);
            }
            mean /= n;
            let f = contrast as f32;
            for v in &mut raster.px {
                *v = mean + f * (*v - mean);
            }
        }
        if saturation != 1.0 {
            let f = saturation as f32;
            for p in raster.px.chunks_exact_mut(3) {
                let gray = luma(p[0], p[1], p[2]);
                for v in p {
                    *v = gray + f * (*v - gray);
                }
            }
        }
        for v in &mut raster.px {
            *v = v.clamp(0.0, 1.0);
        }
    }

    let resized = raster.resize(cfg.target_size);
    let s = cfg.target_size;
    let mut data = vec![0.0f32; 3 * s * s];
    for c in 0..3 {
        let mean = IMAGENET_MEAN[c];
        let std = IMAGENET_STD[c];
        for y in 0..s {
            for x in 0..s {
                data[(c * s + y) * s + x] = (resized.px[(y * s + x) * 3 + c] - mean) / std;
            }
        }
    }
    Tensor::new(vec![3, s, s], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solid(w: u32, h: u32, rgb: [u8; 3]) -> RgbImage {
        RgbImage::from_pixel(w, h, image::Rgb(rgb))
    }

    #[test]
    fn eval_red_channel_at_mean_normalizes_to_zero() {
        // 0.485 * 255 ≈ 123.675; use the nearest byte and allow the quantization.
        let img = solid(16, 16, [124, 0, 0]);
        let cfg = AugmentConfig::none(8);
        let t = preprocess(&img, Mode::Eval, &cfg, &mut RngStream::seed(0)).unwrap();
        let red = &t.data()[..64];
        for &v in red {
            assert!(v.abs() < 0.01, "{v}");
        }
    }

    #[test]
    fn eval_white_image_hits_derived_values() {
        let img = solid(10, 10, [255, 255, 255]);
        let cfg = AugmentConfig::none(4);
        let t = preprocess(&img, Mode::Eval, &cfg, &mut RngStream::seed(0)).unwrap();
        let expect = [2.2489f32, 2.4286, 2.6400];
        for c in 0..3 {
            for i in 0..16 {
                let v = t.data()[c * 16 + i];
                assert!((v - expect[c]).abs() < 1e-3, "channel {c}: {v}");
            }
        }
    }

    #[test]
    fn degenerate_train_config_equals_eval() {
        let mut img = RgbImage::new(12, 9);
        for (i, p) in img.pixels_mut().enumerate() {
            *p = image::Rgb([(i * 7 % 256) as u8, (i * 13 % 256) as u8, (i * 29 % 256) as u8]);
        }
        let cfg = AugmentConfig::none(8);
        let eval = preprocess(&img, Mode::Eval, &cfg, &mut RngStream::seed(1)).unwrap();
        let train = preprocess(&img, Mode::Train, &cfg, &mut RngStream::seed(1)).unwrap();
        assert_eq!(eval.data(), train.data());
    }

    #[test]
    fn train_is_deterministic_given_stream() {
        let mut img = RgbImage::new(20, 20);
        for (i, p) in img.pixels_mut().enumerate() {
            *p = image::Rgb([(i % 256) as u8, (i * 3 % 256) as u8, 200]);
        }
        let cfg = AugmentConfig {
            target_size: 16,
            ..AugmentConfig::default()
        };
        let a = preprocess(&img, Mode::Train, &cfg, &mut RngStream::seed(5)).unwrap();
        let b = preprocess(&img, Mode::Train, &cfg, &mut RngStream::seed(5)).unwrap();
        assert_eq!(a.data(), b.data());
        let c = preprocess(&img, Mode::Train, &cfg, &mut RngStream::seed(6)).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn augmented_values_stay_in_normalized_range() {
        let mut img = RgbImage::new(31, 17);
        for (i, p) in img.pixels_mut().enumerate() {
            *p = image::Rgb([(i * 11 % 256) as u8, 255, (i * 5 % 256) as u8]);
        }
        let cfg = AugmentConfig {
            target_size: 24,
            ..AugmentConfig::default()
        };
        for seed in 0..20 {
            let t = preprocess(&img, Mode::Train, &cfg, &mut RngStream::seed(seed)).unwrap();
            for c in 0..3 {
                let lo = (0.0 - IMAGENET_MEAN[c]) / IMAGENET_STD[c] - 1e-4;
                let hi = (1.0 - IMAGENET_MEAN[c]) / IMAGENET_STD[c] + 1e-4;
                for y in 0..24 {
                    for x in 0..24 {
                        let v = t.data()[(c * 24 + y) * 24 + x];
                        assert!(v >= lo && v <= hi, "seed {seed} c {c}: {v}");
                    }
                }
            }
        }
    }

    #[test]
    fn zero_dimension_image_is_an_input_error() {
        let img = RgbImage::new(0, 4);
        let err = preprocess(
            &img,
            Mode::Eval,
            &AugmentConfig::none(8),
            &mut RngStream::seed(0),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    #[test]
    fn preprocess_does_not_consume_rng_in_eval() {
        let img = solid(8, 8, [10, 20, 30]);
        let mut rng = RngStream::seed(9);
        let before = rng.clone().uniform();
        let _ = preprocess(&img, Mode::Eval, &AugmentConfig::none(8), &mut rng).unwrap();
        assert_eq!(rng.uniform().to_bits(), before.to_bits());
    }
}
