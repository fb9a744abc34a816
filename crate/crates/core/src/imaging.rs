//! Conversions between grids and 8-bit RGB images, and PNG I/O.

use std::path::Path;

pub use image::RgbImage;
use image::Rgb;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::scalar::Scalar;

/// Display mapping of a cell state: `round(clamp(s, -1, 1) · 127.5 + 127.5)`
/// on the first three channels.
pub fn state_to_rgb8<T: Scalar>(grid: &Grid<T>) -> RgbImage {
    let (h, w, _) = grid.shape();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = grid.pixel(y as usize, x as usize);
        Rgb([0, 1, 2].map(|ch| {
            let s = px[ch].as_f64().clamp(-1.0, 1.0);
            (s * 127.5 + 127.5).round() as u8
        }))
    })
}

/// `[0, 1]` RGB grid to 8 bits (clamped, rounded).
pub fn unit_to_rgb8<T: Scalar>(grid: &Grid<T>) -> RgbImage {
    let (h, w, _) = grid.shape();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = grid.pixel(y as usize, x as usize);
        Rgb([0, 1, 2].map(|ch| (px[ch].as_f64().clamp(0.0, 1.0) * 255.0).round() as u8))
    })
}

/// 8-bit RGB to a `[0, 1]` grid of shape `H × W × 3`.
pub fn rgb8_to_unit<T: Scalar>(img: &RgbImage) -> Grid<T> {
    let (w, h) = img.dimensions();
    Grid::from_fn(h as usize, w as usize, 3, |r, c, ch| {
        T::lit(img.get_pixel(c as u32, r as u32).0[ch] as f64 / 255.0)
    })
}

/// Rec. 601 luma of a 3-channel grid.
pub fn luma<T: Scalar>(rgb: &Grid<T>) -> Grid<T> {
    let (h, w, _) = rgb.shape();
    let k = LUMA_WEIGHTS.map(T::lit);
    Grid::from_fn(h, w, 1, |r, c, _| {
        let p = rgb.pixel(r, c);
        k[0] * p[0] + k[1] * p[1] + k[2] * p[2]
    })
}

pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

pub fn load_rgb<T: Scalar>(path: &Path) -> Result<Grid<T>> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(rgb8_to_unit(&img.to_rgb8()))
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Loads the numbered PNG frames of a directory in lexical filename order.
pub fn load_frame_dir<T: Scalar>(dir: &Path) -> Result<Vec<Grid<T>>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    paths.sort();
    paths.iter().map(|p| load_rgb(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_mapping() {
        let g = Grid::<f32>::from_vec(1, 3, 3, vec![-2.0, -1.0, 0.0, 1.0, 5.0, 0.5, -0.5, 0.0, 0.0]).unwrap();
        let img = state_to_rgb8(&g);
        assert_eq!(img.get_pixel(0, 0).0, [0, 0, 128]);
        assert_eq!(img.get_pixel(1, 0).0, [255, 255, 191]);
        assert_eq!(img.get_pixel(2, 0).0, [64, 128, 128]);
    }

    #[test]
    fn png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::<f32>::from_fn(4, 5, 3, |r, c, ch| ((r * 5 + c) * 3 + ch) as f32 / 60.0);
        let img = unit_to_rgb8(&g);
        let path = dir.path().join("a.png");
        save_png(&img, &path).unwrap();
        let back: Grid<f32> = load_rgb(&path).unwrap();
        assert!(back.max_abs_diff(&g) <= 0.5 / 255.0 + 1e-6);
    }
}
