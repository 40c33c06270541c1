//! PNG / binary PNM reading and writing.
//!
//! Colour images become `H × W × 3` tensors, grayscale images `H × W`, with
//! samples on the 0..255 scale. Alpha is dropped; 16-bit inputs are reduced
//! to 8 bits.

use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};
use tnshield_core::DenseTensor;

use crate::CliError;

pub fn load_image(path: &Path) -> Result<DenseTensor, CliError> {
    let img = image::ImageReader::open(path)
        .map_err(|e| CliError::io(path, e))?
        .with_guessed_format()
        .map_err(|e| CliError::io(path, e))?
        .decode()
        .map_err(|e| CliError::Image(format!("{}: {e}", path.display())))?;
    Ok(image_to_tensor(&img))
}

pub fn image_to_tensor(img: &DynamicImage) -> DenseTensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if img.color().has_color() {
        let rgb = img.to_rgb8();
        let data = rgb.into_raw().into_iter().map(f64::from).collect();
        DenseTensor::new(vec![h, w, 3], data).expect("rgb buffer matches its shape")
    } else {
        let gray = img.to_luma8();
        let data = gray.into_raw().into_iter().map(f64::from).collect();
        DenseTensor::new(vec![h, w], data).expect("gray buffer matches its shape")
    }
}

/// Rounds and clamps to 8 bits. Accepts `H × W` or `H × W × 3`.
pub fn tensor_to_image(t: &DenseTensor) -> Result<DynamicImage, CliError> {
    let px: Vec<u8> = t
        .data()
        .iter()
        .map(|v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    match *t.shape() {
        [h, w] => GrayImage::from_raw(w as u32, h as u32, px).map(DynamicImage::ImageLuma8),
        [h, w, 3] => RgbImage::from_raw(w as u32, h as u32, px).map(DynamicImage::ImageRgb8),
        _ => None,
    }
    .ok_or_else(|| {
        CliError::Image(format!(
            "shape {:?} is not an H×W or H×W×3 image",
            t.shape()
        ))
    })
}

/// Writes PNG or PNM depending on the extension.
pub fn save_image(path: &Path, t: &DenseTensor) -> Result<(), CliError> {
    tensor_to_image(t)?
        .save(path)
        .map_err(|e| CliError::Image(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb_roundtrip_through_png_and_ppm() {
        let dir = tempfile::tempdir().unwrap();
        let t = DenseTensor::from_fn(vec![4, 5, 3], |i| (i[0] * 40 + i[1] * 7 + i[2] * 50) as f64)
            .unwrap();
        for name in ["a.png", "a.ppm"] {
            let p = dir.path().join(name);
            save_image(&p, &t).unwrap();
            assert_eq!(load_image(&p).unwrap(), t, "{name}");
        }
    }

    #[test]
    fn grayscale_is_order_two() {
        let dir = tempfile::tempdir().unwrap();
        let t = DenseTensor::from_fn(vec![3, 6], |i| (i[0] * 60 + i[1]) as f64).unwrap();
        let p = dir.path().join("g.pgm");
        save_image(&p, &t).unwrap();
        let back = load_image(&p).unwrap();
        assert_eq!(back.shape(), &[3, 6]);
        assert_eq!(back, t);
    }

    #[test]
    fn clamps_and_rounds() {
        let t = DenseTensor::new(vec![1, 3], vec![-4.0, 127.6, 300.0]).unwrap();
        let img = tensor_to_image(&t).unwrap();
        assert_eq!(img.to_luma8().into_raw(), vec![0, 128, 255]);
    }

    #[test]
    fn rejects_non_image_shapes() {
        let t = DenseTensor::zeros(vec![2, 2, 2]).unwrap();
        assert!(tensor_to_image(&t).is_err());
    }

    #[test]
    fn missing_and_garbage_files() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_image(&dir.path().join("nope.png")),
            Err(CliError::Io { .. })
        ));
        let p = dir.path().join("junk.png");
        std::fs::write(&p, b"not an image").unwrap();
        assert!(load_image(&p).is_err());
    }
}
