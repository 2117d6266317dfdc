//! Grayscale rasters and the classifier input vector.
//!
//! Everything here is a pure function of its inputs. The classifier consumes
//! 64×32 luminance images flattened row-major into a vector of 2048 values in
//! `[0, 1]`.

use crate::error::{Error, Result};
use crate::partition::RegionRect;

/// Width of the image fed to a single classifier.
pub const INPUT_WIDTH: usize = 64;
/// Height of the image fed to a single classifier.
pub const INPUT_HEIGHT: usize = 32;
/// Length of a flattened classifier input.
pub const INPUT_LEN: usize = INPUT_WIDTH * INPUT_HEIGHT;

/// Row-major 8-bit luminance raster.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for GrayImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GrayImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "image dimensions must be non-zero, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "pixel buffer holds {} values, expected {}x{} = {}",
                data.len(),
                width,
                height,
                width * height
            )));
        }
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        GrayImage::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        GrayImage::new(width, height, data)
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
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    /// Pixel at column `x`, row `y`.
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.data[y * self.width + x] = value;
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    /// Mean luminance over all pixels.
    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Copy out the pixels inside `rect`.
    pub fn crop(&self, rect: RegionRect) -> Result<GrayImage> {
        check_rect(self, rect)?;
        let mut data = Vec::with_capacity(rect.width() * rect.height());
        for y in rect.y0..rect.y1 {
            let row = y * self.width;
            data.extend_from_slice(&self.data[row + rect.x0..row + rect.x1]);
        }
        GrayImage::new(rect.width(), rect.height(), data)
    }

    pub fn to_image(&self) -> image::GrayImage {
        image::GrayImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("buffer length matches dimensions")
    }

    pub fn from_image(img: &image::GrayImage) -> Result<Self> {
        GrayImage::new(img.width() as usize, img.height() as usize, img.as_raw().clone())
    }
}

/// Flattened classifier input.
///
/// Values are stored as 8-bit intensity levels; the real value of element
/// `i` is `levels[i] / 255`. Every input in the pipeline originates from an
/// 8-bit raster, so this representation is exact, and it lets the sparse
/// projection run on packed bit-planes.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct InputVector {
    levels: Vec<u8>,
}

impl InputVector {
    pub fn from_levels(levels: Vec<u8>) -> Self {
        InputVector { levels }
    }

    /// Builds an input from real values in `[0, 1]`, rounding each to the
    /// nearest 1/255 level.
    pub fn from_unit(values: &[f32]) -> Result<Self> {
        let levels = values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::invalid(format!(
                        "input element {i} = {v} is outside [0, 1]"
                    )));
                }
                Ok((v * 255.0).round() as u8)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(InputVector { levels })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    #[inline]
    pub fn levels(&self) -> &[u8] {
        &self.levels
    }

    #[inline]
    pub fn value(&self, i: usize) -> f32 {
        self.levels[i] as f32 / 255.0
    }

    pub fn values(&self) -> Vec<f32> {
        self.levels.iter().map(|&l| l as f32 / 255.0).collect()
    }
}

/// ITU-R BT.601 luma with integer rounding.
pub fn to_grayscale(img: &image::RgbImage) -> Result<GrayImage> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::invalid("cannot convert an empty RGB image"));
    }
    let data = img
        .as_raw()
        .chunks_exact(3)
        .map(|px| luma(px[0], px[1], px[2]))
        .collect();
    GrayImage::new(w, h, data)
}

#[inline]
fn luma(r: u8, g: u8, b: u8) -> u8 {
    // 0.299, 0.587, 0.114 scaled by 1000 keeps the rounding exact.
    let weighted = 299 * r as u32 + 587 * g as u32 + 114 * b as u32;
    ((weighted + 500) / 1000).min(255) as u8
}

/// Bilinear resize with half-pixel-center sampling and edge clamping.
pub fn resize(img: &GrayImage, out_w: usize, out_h: usize) -> Result<GrayImage> {
    let full = RegionRect {
        x0: 0,
        y0: 0,
        x1: img.width,
        y1: img.height,
    };
    resize_rect(img, full, out_w, out_h)
}

/// Resizes the sub-image covered by `rect` without materializing the crop.
/// Equivalent to `resize(&img.crop(rect)?, out_w, out_h)`.
pub fn resize_rect(img: &GrayImage, rect: RegionRect, out_w: usize, out_h: usize) -> Result<GrayImage> {
    let mut out = vec![0u8; out_w * out_h];
    resize_rect_into(img, rect, out_w, out_h, &mut out)?;
    GrayImage::new(out_w, out_h, out)
}

/// Sampling taps along one axis: two source indices and the weight of the
/// second one.
fn axis_taps(offset: usize, src_len: usize, dst_len: usize) -> Vec<(usize, usize, f32)> {
    let scale = src_len as f32 / dst_len as f32;
    let max = (src_len - 1) as f32;
    (0..dst_len)
        .map(|d| {
            let s = ((d as f32 + 0.5) * scale - 0.5).clamp(0.0, max);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src_len - 1);
            (offset + i0, offset + i1, s - i0 as f32)
        })
        .collect()
}

pub(crate) fn resize_rect_into(
    img: &GrayImage,
    rect: RegionRect,
    out_w: usize,
    out_h: usize,
    out: &mut [u8],
) -> Result<()> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::invalid(format!(
            "resize target must be non-zero, got {out_w}x{out_h}"
        )));
    }
    check_rect(img, rect)?;
    debug_assert_eq!(out.len(), out_w * out_h);

    let xs = axis_taps(rect.x0, rect.width(), out_w);
    let ys = axis_taps(rect.y0, rect.height(), out_h);
    let w = img.width;
    let src = &img.data;
    for (dst_row, &(y0, y1, fy)) in out.chunks_exact_mut(out_w).zip(&ys) {
        let top = &src[y0 * w..(y0 + 1) * w];
        let bottom = &src[y1 * w..(y1 + 1) * w];
        for (dst, &(x0, x1, fx)) in dst_row.iter_mut().zip(&xs) {
            let t = (1.0 - fx) * top[x0] as f32 + fx * top[x1] as f32;
            let b = (1.0 - fx) * bottom[x0] as f32 + fx * bottom[x1] as f32;
            let v = (1.0 - fy) * t + fy * b;
            *dst = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(())
}

fn check_rect(img: &GrayImage, rect: RegionRect) -> Result<()> {
    if rect.x0 >= rect.x1 || rect.y0 >= rect.y1 || rect.x1 > img.width || rect.y1 > img.height {
        return Err(Error::invalid(format!(
            "rectangle {rect:?} does not fit inside a {}x{} image",
            img.width, img.height
        )));
    }
    Ok(())
}

/// Row-major flatten of a 64×32 image into a classifier input.
pub fn flatten(img: &GrayImage) -> Result<InputVector> {
    if img.width != INPUT_WIDTH || img.height != INPUT_HEIGHT {
        return Err(Error::invalid(format!(
            "flatten expects a {INPUT_WIDTH}x{INPUT_HEIGHT} image, got {}x{}",
            img.width, img.height
        )));
    }
    Ok(InputVector::from_levels(img.data.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rgb(w: u32, h: u32, px: [u8; 3]) -> image::RgbImage {
        image::RgbImage::from_pixel(w, h, image::Rgb(px))
    }

    #[test]
    fn grayscale_fixtures() {
        assert_eq!(to_grayscale(&rgb(1, 1, [255, 255, 255])).unwrap().data(), &[255]);
        assert_eq!(to_grayscale(&rgb(1, 1, [0, 0, 0])).unwrap().data(), &[0]);
        // round(0.299 * 255) = round(76.245)
        assert_eq!(to_grayscale(&rgb(1, 1, [255, 0, 0])).unwrap().data(), &[76]);
        assert_eq!(to_grayscale(&rgb(1, 1, [0, 255, 0])).unwrap().data(), &[150]);
        assert_eq!(to_grayscale(&rgb(1, 1, [0, 0, 255])).unwrap().data(), &[29]);
    }

    #[test]
    fn grayscale_rejects_empty() {
        assert!(matches!(
            to_grayscale(&image::RgbImage::new(0, 3)),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn grayscale_preserves_dimensions() {
        let g = to_grayscale(&rgb(7, 3, [10, 20, 30])).unwrap();
        assert_eq!((g.width(), g.height()), (7, 3));
    }

    #[test]
    fn resize_identity() {
        let img = GrayImage::from_fn(13, 7, |x, y| (x * 17 + y * 31) as u8).unwrap();
        assert_eq!(resize(&img, 13, 7).unwrap(), img);
    }

    #[test]
    fn resize_constant() {
        let img = GrayImage::filled(2, 2, 100).unwrap();
        let out = resize(&img, 4, 4).unwrap();
        assert!(out.data().iter().all(|&v| v == 100));
    }

    #[test]
    fn resize_two_pixel_ramp() {
        // Sample centres map to source x = -0.25, 0.25, 0.75, 1.25; the
        // outer two clamp to the edges, the inner two give 63.75 and 191.25.
        let img = GrayImage::new(2, 1, vec![0, 255]).unwrap();
        assert_eq!(resize(&img, 4, 1).unwrap().data(), &[0, 64, 191, 255]);
    }

    #[test]
    fn resize_rejects_zero_target() {
        let img = GrayImage::filled(4, 4, 0).unwrap();
        assert!(resize(&img, 0, 4).is_err());
        assert!(resize(&img, 4, 0).is_err());
    }

    #[test]
    fn resize_rect_matches_crop_then_resize() {
        let img = GrayImage::from_fn(40, 30, |x, y| ((x * 7) ^ (y * 13)) as u8).unwrap();
        let rect = RegionRect { x0: 5, y0: 3, x1: 27, y1: 19 };
        let direct = resize_rect(&img, rect, 64, 32).unwrap();
        let cropped = resize(&img.crop(rect).unwrap(), 64, 32).unwrap();
        assert_eq!(direct, cropped);
    }

    #[test]
    fn flatten_fixtures() {
        let zero = GrayImage::filled(64, 32, 0).unwrap();
        assert!(flatten(&zero).unwrap().values().iter().all(|&v| v == 0.0));
        let white = GrayImage::filled(64, 32, 255).unwrap();
        assert!(flatten(&white).unwrap().values().iter().all(|&v| v == 1.0));

        let mut one = GrayImage::filled(64, 32, 0).unwrap();
        one.set(0, 1, 255);
        let v = flatten(&one).unwrap().values();
        assert_eq!(v.len(), INPUT_LEN);
        assert_eq!(v[64], 1.0);
        assert_eq!(v.iter().filter(|&&x| x != 0.0).count(), 1);
    }

    #[test]
    fn flatten_rejects_wrong_dimensions() {
        assert!(flatten(&GrayImage::filled(32, 64, 0).unwrap()).is_err());
    }

    #[test]
    fn unit_input_rejects_out_of_range() {
        assert!(InputVector::from_unit(&[0.5, 1.5]).is_err());
        assert!(InputVector::from_unit(&[f32::NAN]).is_err());
        assert_eq!(InputVector::from_unit(&[0.0, 1.0]).unwrap().levels(), &[0, 255]);
    }

    proptest! {
        #[test]
        fn grayscale_of_gray_rgb_is_identity(v in any::<u8>()) {
            let g = to_grayscale(&rgb(1, 1, [v, v, v])).unwrap();
            prop_assert_eq!(g.data()[0], v);
        }

        #[test]
        fn flatten_is_row_major(seed in any::<u64>()) {
            let img = GrayImage::from_fn(64, 32, |x, y| {
                (seed.wrapping_mul(x as u64 * 131 + y as u64 * 7 + 1) >> 56) as u8
            }).unwrap();
            let v = flatten(&img).unwrap();
            for row in 0..32 {
                for col in 0..64 {
                    prop_assert_eq!((v.value(row * 64 + col) * 255.0).round() as u8, img.get(col, row));
                }
            }
        }

        #[test]
        fn resize_stays_within_source_range(w in 1usize..20, h in 1usize..20, ow in 1usize..40, oh in 1usize..40, lo in 0u8..128, span in 0u8..128) {
            let img = GrayImage::from_fn(w, h, |x, y| lo + ((x * 3 + y * 5) % (span as usize + 1)) as u8).unwrap();
            let out = resize(&img, ow, oh).unwrap();
            prop_assert!(out.data().iter().all(|&v| v >= lo && v <= lo + span));
        }
    }
}
