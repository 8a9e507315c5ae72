//! PNG decoding to `[3, H, W]` float tensors in `[0, 1]` and small resampling helpers.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat, Luma, Rgb, RgbImage};
use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3};

use crate::error::{CoreError, Result};

/// Decodes any PNG (8 or 16 bit, gray or color) to `[3, H, W]` floats in `[0, 1]`.
pub fn load_rgb(path: impl AsRef<Path>) -> Result<Array3<f32>> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| CoreError::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(rgb_from_dynamic(&img))
}

pub fn rgb_from_dynamic(img: &DynamicImage) -> Array3<f32> {
    let rgb = img.to_rgb32f();
    let (w, h) = rgb.dimensions();
    let mut out = Array3::<f32>::zeros((3, h as usize, w as usize));
    for (x, y, px) in rgb.enumerate_pixels() {
        for c in 0..3 {
            out[[c, y as usize, x as usize]] = px.0[c].clamp(0.0, 1.0);
        }
    }
    out
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes a `[3, H, W]` tensor as an 8-bit RGB PNG.
pub fn encode_rgb_png(img: ArrayView3<f32>) -> Result<Vec<u8>> {
    let (c, h, w) = img.dim();
    if c != 3 {
        return Err(CoreError::Shape(format!("expected 3 channels, got {c}")));
    }
    let buf = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        Rgb([
            quantize(img[[0, y, x]]),
            quantize(img[[1, y, x]]),
            quantize(img[[2, y, x]]),
        ])
    });
    let mut bytes = Vec::new();
    buf.write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)
        .map_err(|e| CoreError::Image {
            path: "<memory>".into(),
            reason: e.to_string(),
        })?;
    Ok(bytes)
}

pub fn save_rgb_png(img: ArrayView3<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_rgb_png(img)?;
    std::fs::write(path, bytes).map_err(|e| CoreError::io(path, e))
}

/// Encodes a single-channel map in `[0, 1]` as an 8-bit gray PNG.
pub fn encode_gray_png(map: ArrayView2<f32>) -> Result<Vec<u8>> {
    let (h, w) = map.dim();
    let buf = image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
        Luma([quantize(map[[y as usize, x as usize]])])
    });
    let mut bytes = Vec::new();
    buf.write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)
        .map_err(|e| CoreError::Image {
            path: "<memory>".into(),
            reason: e.to_string(),
        })?;
    Ok(bytes)
}

/// Valid masks are stored as gray PNGs: nonzero means valid.
pub fn encode_mask_png(mask: ArrayView2<bool>) -> Result<Vec<u8>> {
    encode_gray_png(mask.mapv(|m| if m { 1.0 } else { 0.0 }).view())
}

pub fn load_mask_png(path: impl AsRef<Path>) -> Result<Array2<bool>> {
    let path = path.as_ref();
    let img = image::open(path)
        .map_err(|e| CoreError::Image {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?
        .to_luma8();
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        img.get_pixel(x as u32, y as u32).0[0] > 0
    }))
}

/// Rec. 601 luma.
pub fn luminance(img: ArrayView3<f32>) -> Array2<f32> {
    let (_, h, w) = img.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        0.299 * img[[0, y, x]] + 0.587 * img[[1, y, x]] + 0.114 * img[[2, y, x]]
    })
}

/// Bilinear resize with half-pixel centers (`align_corners = false`), edge clamped.
pub fn resize_bilinear(map: ArrayView2<f32>, out_h: usize, out_w: usize) -> Array2<f32> {
    let (h, w) = map.dim();
    if (h, w) == (out_h, out_w) {
        return map.to_owned();
    }
    let sample_axis = |o: usize, n_in: usize, n_out: usize| -> (usize, usize, f32) {
        let src = ((o as f32 + 0.5) * n_in as f32 / n_out as f32 - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(n_in - 1);
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, src - i0 as f32)
    };
    let mut out = Array2::<f32>::zeros((out_h, out_w));
    for oy in 0..out_h {
        let (y0, y1, fy) = sample_axis(oy, h, out_h);
        for ox in 0..out_w {
            let (x0, x1, fx) = sample_axis(ox, w, out_w);
            let top = map[[y0, x0]] * (1.0 - fx) + map[[y0, x1]] * fx;
            let bot = map[[y1, x0]] * (1.0 - fx) + map[[y1, x1]] * fx;
            out[[oy, ox]] = top * (1.0 - fy) + bot * fy;
        }
    }
    out
}

/// Pads `[C, H, W]` on the bottom/right by edge replication so both sides are multiples of `multiple`.
pub fn pad_to_multiple(img: ArrayView3<f32>, multiple: usize) -> Array3<f32> {
    let (c, h, w) = img.dim();
    let ph = h.div_ceil(multiple) * multiple;
    let pw = w.div_ceil(multiple) * multiple;
    Array3::from_shape_fn((c, ph, pw), |(k, y, x)| {
        img[[k, y.min(h - 1), x.min(w - 1)]]
    })
}

pub fn crop2(map: ArrayView2<f32>, h: usize, w: usize) -> Array2<f32> {
    map.slice(s![..h, ..w]).to_owned()
}
