//! Image datasets: directory ingestion with a manifest, and procedurally
//! generated toy glyph domains for desk-scale experiments.
//!
//! A dataset directory holds image files plus a `manifest.txt` with one
//! `filename` or `filename<TAB>label` entry per line. Images are
//! center-cropped, resized to the requested resolution and normalized to
//! `[-1, 1]` on load.

use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::generator::ImageTensor;
use crate::imageio;
use crate::rng::{self, derive_seed};
use crate::tensor::Tensor;

pub const MANIFEST_NAME: &str = "manifest.txt";

#[derive(Debug, Clone)]
pub struct ImageDataset {
    pub images: Vec<ImageTensor>,
    pub labels: Vec<Option<String>>,
}

impl ImageDataset {
    pub fn new(images: Vec<ImageTensor>, labels: Vec<Option<String>>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::InvalidArgument("empty dataset".into()));
        }
        if images.len() != labels.len() {
            return Err(Error::InvalidArgument(
                "labels/images length mismatch".into(),
            ));
        }
        let res = images[0].resolution();
        let ch = images[0].channels();
        for img in &images {
            if img.resolution() != res || img.channels() != ch {
                return Err(Error::ShapeMismatch(
                    "dataset images differ in shape".into(),
                ));
            }
        }
        Ok(Self { images, labels })
    }

    pub fn unlabeled(images: Vec<ImageTensor>) -> Result<Self> {
        let labels = vec![None; images.len()];
        Self::new(images, labels)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn resolution(&self) -> usize {
        self.images[0].resolution()
    }

    pub fn channels(&self) -> usize {
        self.images[0].channels()
    }
}

/// Load a manifest-listed directory, normalizing every image to
/// `resolution` pixels.
pub fn load_dataset(dir: &Path, resolution: usize) -> Result<ImageDataset> {
    let manifest = dir.join(MANIFEST_NAME);
    let text = std::fs::read_to_string(&manifest)
        .map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", manifest.display())))?;
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (name, label) = match line.split_once('\t') {
            Some((n, l)) => (n, Some(l.to_string())),
            None => (line, None),
        };
        let raw = imageio::read_png(&dir.join(name))?;
        let sized = imageio::center_crop_resize(&raw, resolution)?;
        images.push(ImageTensor::from_unclamped(sized)?);
        labels.push(label);
    }
    ImageDataset::new(images, labels)
}

/// Write a dataset as PNGs plus a manifest.
pub fn save_dataset(dir: &Path, data: &ImageDataset) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    for (i, (img, label)) in data.images.iter().zip(&data.labels).enumerate() {
        let name = format!("img_{i:05}.png");
        imageio::write_png(&dir.join(&name), img)?;
        match label {
            Some(l) => manifest.push_str(&format!("{name}\t{l}\n")),
            None => manifest.push_str(&format!("{name}\n")),
        }
    }
    std::fs::write(dir.join(MANIFEST_NAME), manifest)?;
    Ok(())
}

/// Procedural glyph domains. All domains share one background and shape
/// distribution and differ in glyph palette: the domain gap is localized
/// to the glyphs, so distances between models reflect structural
/// (mis)alignment rather than a global color flip.
pub mod toy {
    use super::*;

    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub enum ToyDomain {
        /// Warm amber glyphs.
        GlyphsAmber,
        /// Cyan glyphs.
        GlyphsCyan,
        /// Magenta glyphs.
        GlyphsMagenta,
    }

    impl ToyDomain {
        pub fn tag(self) -> &'static str {
            match self {
                Self::GlyphsAmber => "glyphs-amber",
                Self::GlyphsCyan => "glyphs-cyan",
                Self::GlyphsMagenta => "glyphs-magenta",
            }
        }

        pub fn from_tag(tag: &str) -> Option<Self> {
            match tag {
                "glyphs-amber" => Some(Self::GlyphsAmber),
                "glyphs-cyan" => Some(Self::GlyphsCyan),
                "glyphs-magenta" => Some(Self::GlyphsMagenta),
                _ => None,
            }
        }

        pub fn all() -> [Self; 3] {
            [Self::GlyphsAmber, Self::GlyphsCyan, Self::GlyphsMagenta]
        }

        fn glyph_color(self) -> [f64; 3] {
            match self {
                Self::GlyphsAmber => [0.85, 0.45, -0.30],
                Self::GlyphsCyan => [-0.40, 0.65, 0.85],
                Self::GlyphsMagenta => [0.80, -0.35, 0.75],
            }
        }

        /// Per-domain structure statistics. Palette AND geometry differ,
        /// so an independently trained model of another domain disagrees
        /// with a source model structurally, not just in color.
        fn style(self) -> GlyphStyle {
            match self {
                Self::GlyphsAmber => GlyphStyle {
                    hollow: false,
                    shape_counts: (2, 3),
                    radius: (0.10, 0.26),
                },
                Self::GlyphsCyan => GlyphStyle {
                    hollow: true,
                    shape_counts: (2, 3),
                    radius: (0.12, 0.28),
                },
                Self::GlyphsMagenta => GlyphStyle {
                    hollow: false,
                    shape_counts: (1, 1),
                    radius: (0.22, 0.34),
                },
            }
        }
    }

    struct GlyphStyle {
        hollow: bool,
        shape_counts: (u32, u32),
        radius: (f64, f64),
    }

    const BACKGROUND: [f64; 3] = [-0.60, -0.58, -0.48];

    /// Generate `n` seeded glyph images at `resolution`.
    pub fn generate(domain: ToyDomain, n: usize, seed: u64, resolution: usize) -> ImageDataset {
        let images: Vec<ImageTensor> = (0..n)
            .map(|i| glyph_image(domain, derive_seed(seed, i as u64), resolution))
            .collect();
        let labels = vec![Some(domain.tag().to_string()); n];
        ImageDataset::new(images, labels).expect("n >= 1")
    }

    fn glyph_image(domain: ToyDomain, seed: u64, res: usize) -> ImageTensor {
        let mut r = rng::rng_from_seed(seed);
        let fg = domain.glyph_color();
        let style = domain.style();
        // Per-image jitter: background drifts a little, glyph color more,
        // so appearance varies within a domain without crossing domains.
        let jitter: Vec<f64> = (0..6).map(|_| rng::next_normal(&mut r)).collect();

        let (lo, hi) = style.shape_counts;
        let n_shapes = (lo
            + if hi > lo {
                r.gen::<u32>() % (hi - lo + 1)
            } else {
                0
            }) as usize;
        let shapes: Vec<(f64, f64, f64, bool)> = (0..n_shapes)
            .map(|_| {
                let cx = 0.20 + 0.60 * r.gen::<f64>();
                let cy = 0.20 + 0.60 * r.gen::<f64>();
                let radius = style.radius.0 + (style.radius.1 - style.radius.0) * r.gen::<f64>();
                let is_disc = r.gen::<bool>();
                (cx, cy, radius, is_disc)
            })
            .collect();

        let mut data = vec![0.0; 3 * res * res];
        for row in 0..res {
            for col in 0..res {
                let y = (row as f64 + 0.5) / res as f64;
                let x = (col as f64 + 0.5) / res as f64;
                // Soft coverage of the nearest shape; hollow styles keep
                // only a band around the boundary.
                let mut cover: f64 = 0.0;
                for &(cx, cy, radius, is_disc) in &shapes {
                    let d = if is_disc {
                        ((x - cx).powi(2) + (y - cy).powi(2)).sqrt()
                    } else {
                        (x - cx).abs().max((y - cy).abs())
                    };
                    let edge = 1.5 / res as f64;
                    let c = if style.hollow {
                        let band = 0.30 * radius;
                        let inner = ((d - (radius - band)) / edge + 0.5).clamp(0.0, 1.0);
                        let outer = ((radius - d) / edge + 0.5).clamp(0.0, 1.0);
                        inner.min(outer)
                    } else {
                        ((radius - d) / edge + 0.5).clamp(0.0, 1.0)
                    };
                    cover = cover.max(c);
                }
                for ch in 0..3 {
                    let b = (BACKGROUND[ch] + 0.04 * jitter[ch]).clamp(-0.95, 0.95);
                    let f = (fg[ch] + 0.10 * jitter[3 + ch]).clamp(-0.95, 0.95);
                    data[ch * res * res + row * res + col] = b + cover * (f - b);
                }
            }
        }
        ImageTensor::new(Tensor::new(vec![3, res, res], data).unwrap()).unwrap()
    }
}
