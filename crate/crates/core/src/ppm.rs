//! Binary PPM (P6) image export. Dependency-free and bit-exact: pixel bytes
//! are `round(value * 255)` with halves rounding up, so outputs are testable
//! byte for byte.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum PpmError {
    #[error("image has shape {0:?}, want [3,H,W]")]
    ImageShape(Vec<usize>),
    #[error("pixel value {value} at index {index} outside [0,1]")]
    PixelOutOfRange { index: usize, value: f64 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// `round(v * 255)` with 0.5 rounding up; `v` must already be in [0,1].
fn quantize<T: Scalar>(v: T) -> u8 {
    (v.to_f64_lossy() * 255.0 + 0.5).floor() as u8
}

/// Writes a `[3,H,W]` image in [0,1] as `P6\n{w} {h}\n255\n` plus row-major
/// interleaved RGB bytes.
pub fn write_ppm<T: Scalar, W: Write>(mut out: W, image: &Tensor<T>) -> Result<(), PpmError> {
    let shape = image.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(PpmError::ImageShape(shape.to_vec()));
    }
    for (index, &v) in image.data().iter().enumerate() {
        if !(v >= T::zero() && v <= T::one()) {
            return Err(PpmError::PixelOutOfRange { index, value: v.to_f64_lossy() });
        }
    }
    let (height, width) = (shape[1], shape[2]);
    write!(out, "P6\n{width} {height}\n255\n")?;
    let plane = height * width;
    let mut row = Vec::with_capacity(3 * width);
    for y in 0..height {
        row.clear();
        for x in 0..width {
            let at = y * width + x;
            for c in 0..3 {
                row.push(quantize(image.data()[c * plane + at]));
            }
        }
        out.write_all(&row)?;
    }
    Ok(())
}

/// [`write_ppm`] straight to a file.
pub fn save_ppm<T: Scalar>(image: &Tensor<T>, path: &Path) -> Result<(), PpmError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ppm(&mut w, image)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_half_gray_bytes_are_exact() {
        let image = Tensor::full(vec![3, 32, 32], 0.5f32);
        let mut buf = Vec::new();
        write_ppm(&mut buf, &image).unwrap();
        let header = b"P6\n32 32\n255\n";
        assert_eq!(&buf[..header.len()], header);
        assert_eq!(buf.len(), header.len() + 3 * 32 * 32);
        assert!(buf[header.len()..].iter().all(|&b| b == 128), "round-half-up of 127.5");
    }

    #[test]
    fn channels_interleave_row_major() {
        let mut data = vec![0.0f32; 3 * 2 * 2];
        data[..4].fill(1.0); // red plane
        data[8..].fill(0.5); // blue plane
        let image = Tensor::new(vec![3, 2, 2], data).unwrap();
        let mut buf = Vec::new();
        write_ppm(&mut buf, &image).unwrap();
        assert_eq!(&buf[b"P6\n2 2\n255\n".len()..], [255, 0, 128].repeat(4));
    }

    #[test]
    fn quantization_boundaries_round_half_up() {
        assert_eq!(quantize(0.0f64), 0);
        assert_eq!(quantize(1.0f64), 255);
        // 0.5 * 255 = 127.5 exactly; the half rounds up.
        assert_eq!(quantize(0.5f64), 128);
        assert_eq!(quantize(0.002f64), 1); // 0.51 rounds up
        assert_eq!(quantize(0.001f64), 0); // 0.255 rounds down
    }

    #[test]
    fn bad_images_are_rejected() {
        let flat = Tensor::full(vec![4, 2, 2], 0.5f32);
        assert!(matches!(
            write_ppm(Vec::new(), &flat),
            Err(PpmError::ImageShape(shape)) if shape == [4, 2, 2]
        ));
        let hot = Tensor::full(vec![3, 2, 2], 1.5f32);
        assert!(matches!(
            write_ppm(Vec::new(), &hot),
            Err(PpmError::PixelOutOfRange { index: 0, .. })
        ));
        let nan = Tensor::full(vec![3, 2, 2], f32::NAN);
        assert!(write_ppm(Vec::new(), &nan).is_err());
    }
}
