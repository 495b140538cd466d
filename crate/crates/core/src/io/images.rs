//! Format dispatch for dataset images.

use std::path::Path;

use image::{DynamicImage, ImageFormat};

use super::netpbm;
use crate::error::{Error, Result};
use crate::image::{DepthMap, GrayImage, Plane, RgbImage};

const PNG_MAGIC: &[u8] = b"\x89PNG";

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn decode_png(bytes: &[u8], path: &Path) -> Result<DynamicImage> {
    image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: format!("PNG decode failed: {e}"),
    })
}

fn is_16_bit(img: &DynamicImage) -> bool {
    matches!(
        img,
        DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA16(_)
            | DynamicImage::ImageRgb16(_)
            | DynamicImage::ImageRgba16(_)
    )
}

/// RGB image from a binary PPM or a PNG.
pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    let bytes = read(path)?;
    if bytes.starts_with(PNG_MAGIC) {
        let img = decode_png(&bytes, path)?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let data: Vec<[f32; 3]> = if is_16_bit(&img) {
            img.to_rgb16()
                .pixels()
                .map(|p| p.0.map(|c| c as f32 / 65535.0))
                .collect()
        } else {
            img.to_rgb8()
                .pixels()
                .map(|p| p.0.map(|c| c as f32 / 255.0))
                .collect()
        };
        return Plane::from_vec(w, h, data);
    }
    netpbm::decode_pnm(&bytes, path)?.to_rgb(path)
}

/// Thermal image from a binary PGM (8 or 16 bit) or a grayscale PNG.
pub fn read_gray(path: &Path) -> Result<GrayImage> {
    let bytes = read(path)?;
    if bytes.starts_with(PNG_MAGIC) {
        let img = decode_png(&bytes, path)?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let data: Vec<f32> = if is_16_bit(&img) {
            img.to_luma16()
                .pixels()
                .map(|p| p.0[0] as f32 / 65535.0)
                .collect()
        } else {
            img.to_luma8()
                .pixels()
                .map(|p| p.0[0] as f32 / 255.0)
                .collect()
        };
        return Plane::from_vec(w, h, data);
    }
    netpbm::decode_pnm(&bytes, path)?.to_gray(path)
}

pub fn read_depth(path: &Path) -> Result<DepthMap> {
    netpbm::read_pfm(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_and_ppm_load_the_same_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let rgb =
            image::RgbImage::from_fn(3, 2, |x, y| image::Rgb([x as u8 * 80, y as u8 * 200, 17]));
        let png = dir.path().join("a.png");
        rgb.save(&png).unwrap();
        let from_png = read_rgb(&png).unwrap();

        let ppm = dir.path().join("a.ppm");
        netpbm::write_ppm(&ppm, &from_png).unwrap();
        assert_eq!(read_rgb(&ppm).unwrap(), from_png);
        assert_eq!(
            *from_png.get(2, 1),
            [160.0 / 255.0, 200.0 / 255.0, 17.0 / 255.0]
        );
    }

    #[test]
    fn sixteen_bit_gray_png() {
        let dir = tempfile::tempdir().unwrap();
        let img = image::ImageBuffer::<image::Luma<u16>, _>::from_fn(2, 1, |x, _| {
            image::Luma([x as u16 * 65535])
        });
        let path = dir.path().join("t.png");
        img.save(&path).unwrap();
        assert_eq!(read_gray(&path).unwrap().as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn missing_file_is_an_io_error() {
        assert!(matches!(
            read_gray(Path::new("/nonexistent/x.pgm")),
            Err(Error::Io { .. })
        ));
    }
}
