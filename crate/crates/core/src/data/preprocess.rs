//! Raster to model input: luma, inversion (ink = 1), aspect-preserving
//! resize, centered zero padding, values on the k/255 grid.

use std::path::Path;

use image::imageops::{self, FilterType};
use image::{DynamicImage, GrayImage, Luma};
use rcft_tensor::{Scalar, Tensor};

use crate::error::{Error, Result};

/// Width and height of the resized content inside an `S × S` canvas.
pub fn content_box(width: u32, height: u32, side: u32) -> (u32, u32) {
    let long = width.max(height) as f64;
    let fit = |v: u32| (((v as f64) * side as f64 / long).round() as u32).clamp(1, side);
    (fit(width), fit(height))
}

/// Ink-positive intensities as an `S × S` byte raster (0 = background).
pub fn preprocess_raster(img: &DynamicImage, side: u32) -> GrayImage {
    let mut ink = img.to_luma8();
    for p in ink.pixels_mut() {
        p.0[0] = 255 - p.0[0];
    }
    let (w, h) = content_box(ink.width(), ink.height(), side);
    let content = if (w, h) == ink.dimensions() {
        ink
    } else {
        imageops::resize(&ink, w, h, FilterType::Triangle)
    };
    let mut canvas = GrayImage::from_pixel(side, side, Luma([0]));
    imageops::replace(&mut canvas, &content, ((side - w) / 2) as i64, ((side - h) / 2) as i64);
    canvas
}

/// `[1, S, S]` tensor in `[0, 1]`, ink near 1 and background 0.
pub fn preprocess_image<T: Scalar>(img: &DynamicImage, side: u32) -> Tensor<T> {
    let r = preprocess_raster(img, side);
    let data = r.pixels().map(|p| T::of_f64(p.0[0] as f64 / 255.0)).collect();
    Tensor::new(&[1, side as usize, side as usize], data).expect("canvas is side × side")
}

/// Page-convention raster (dark ink on white) of an ink-positive tensor, so
/// that preprocessing it again reproduces the tensor.
pub fn to_page_raster<T: Scalar>(t: &Tensor<T>) -> Result<GrayImage> {
    let shape = t.shape();
    if shape.len() != 3 || shape[0] != 1 || shape[1] != shape[2] {
        return Err(Error::data(format!("expected a [1, S, S] image tensor, got {shape:?}")));
    }
    let side = shape[1] as u32;
    let px: Vec<u8> = t
        .data()
        .iter()
        .map(|v| 255 - (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    Ok(GrayImage::from_raw(side, side, px).expect("buffer matches dimensions"))
}

pub fn decode_image(path: &Path) -> Result<DynamicImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    image::load_from_memory(&bytes).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

pub fn load_preprocessed<T: Scalar>(path: &Path, side: u32) -> Result<Tensor<T>> {
    Ok(preprocess_image(&decode_image(path)?, side))
}

pub fn save_png(img: &GrayImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}
