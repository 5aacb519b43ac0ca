//! PNG reading and writing plus the resampling used at ingestion time.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::generator::ImageTensor;
use crate::tensor::Tensor;

/// Write an image as an 8-bit PNG (RGB or grayscale by channel count).
pub fn write_png(path: &Path, img: &ImageTensor) -> Result<()> {
    let t = img.tensor();
    let [c, h, w] = *t.shape() else {
        unreachable!()
    };
    let hw = h * w;
    let mut bytes = Vec::with_capacity(c * hw);
    for p in 0..hw {
        for ch in 0..c {
            let v = (t.data()[ch * hw + p] + 1.0) * 0.5 * 255.0;
            bytes.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let file = File::create(path)?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    encoder.set_color(if c == 3 {
        png::ColorType::Rgb
    } else {
        png::ColorType::Grayscale
    });
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::ImageDecode(e.to_string()))?;
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::ImageDecode(e.to_string()))?;
    Ok(())
}

/// Read a PNG into `[-1, 1]` channel-major form. Alpha is dropped,
/// palette and 16-bit inputs are normalized to 8-bit semantics.
pub fn read_png(path: &Path) -> Result<Tensor> {
    let file = File::open(path)?;
    let decoder = png::Decoder::new(file);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::ImageDecode(e.to_string()))?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::ImageDecode(e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::ImageDecode(format!(
            "unsupported bit depth {:?}",
            info.bit_depth
        )));
    }
    let (src_channels, keep) = match info.color_type {
        png::ColorType::Grayscale => (1usize, 1usize),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        other => {
            return Err(Error::ImageDecode(format!(
                "unsupported color type {other:?}"
            )));
        }
    };
    let hw = h * w;
    let mut data = vec![0.0; keep * hw];
    for p in 0..hw {
        for ch in 0..keep {
            let v = buf[p * src_channels + ch] as f64;
            data[ch * hw + p] = v / 255.0 * 2.0 - 1.0;
        }
    }
    Tensor::new(vec![keep, h, w], data)
}

/// Center-crop to square, then bilinear-resample to `target` pixels.
pub fn center_crop_resize(img: &Tensor, target: usize) -> Result<Tensor> {
    let [c, h, w] = *img.shape() else {
        return Err(Error::ShapeMismatch("expected [C,H,W]".into()));
    };
    let side = h.min(w);
    let (r_off, c_off) = ((h - side) / 2, (w - side) / 2);
    let mut out = vec![0.0; c * target * target];
    let scale = side as f64 / target as f64;
    for ch in 0..c {
        let plane = &img.data()[ch * h * w..(ch + 1) * h * w];
        for r in 0..target {
            let sy = ((r as f64 + 0.5) * scale - 0.5).clamp(0.0, (side - 1) as f64);
            let y0 = sy.floor() as usize;
            let y1 = (y0 + 1).min(side - 1);
            let fy = sy - y0 as f64;
            for cc in 0..target {
                let sx = ((cc as f64 + 0.5) * scale - 0.5).clamp(0.0, (side - 1) as f64);
                let x0 = sx.floor() as usize;
                let x1 = (x0 + 1).min(side - 1);
                let fx = sx - x0 as f64;
                let at = |rr: usize, ccc: usize| plane[(rr + r_off) * w + (ccc + c_off)];
                let v = at(y0, x0) * (1.0 - fy) * (1.0 - fx)
                    + at(y0, x1) * (1.0 - fy) * fx
                    + at(y1, x0) * fy * (1.0 - fx)
                    + at(y1, x1) * fy * fx;
                out[ch * target * target + r * target + cc] = v;
            }
        }
    }
    Tensor::new(vec![c, target, target], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_exact_on_quantized_values() {
        // Values already on the 8-bit grid survive a write/read cycle.
        let dir = std::env::temp_dir().join("styleswap-imageio-test");
        let path = dir.join("rt.png");
        let quantized: Vec<f64> = (0..3 * 16 * 16)
            .map(|i| ((i % 256) as f64) / 255.0 * 2.0 - 1.0)
            .collect();
        let img =
            ImageTensor::new(Tensor::new(vec![3, 16, 16], quantized.clone()).unwrap()).unwrap();
        write_png(&path, &img).unwrap();
        let back = read_png(&path).unwrap();
        let err = back
            .data()
            .iter()
            .zip(&quantized)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-12, "max err {err}");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn crop_resize_identity_when_sizes_match() {
        let t = Tensor::new(vec![1, 4, 4], (0..16).map(f64::from).collect()).unwrap();
        let out = center_crop_resize(&t, 4).unwrap();
        assert!(out.max_abs_diff(&t) < 1e-12);
    }

    #[test]
    fn crop_resize_downscales() {
        let t = Tensor::full(&[3, 64, 48], 0.25);
        let out = center_crop_resize(&t, 16).unwrap();
        assert_eq!(out.shape(), &[3, 16, 16]);
        assert!(out.data().iter().all(|v| (v - 0.25).abs() < 1e-12));
    }
}
