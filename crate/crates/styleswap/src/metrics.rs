//! Perceptual and reconstruction metrics.
//!
//! The perceptual distance runs images through a small fixed-weight
//! convolutional feature stack and compares per-layer features, LPIPS
//! style. Desk-scale builds cannot assume a large pretrained classifier,
//! so the default stack draws its frozen weights from a seed; externally
//! supplied weights can be dropped in through [`FeatureNetKind::Tensors`].
//! The same feature stack backs the inversion objective's feature term
//! and the Fréchet diagnostic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{ImageTensor, LEAKY_SLOPE};
use crate::linalg;
use crate::rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Where the fixed feature weights come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureNetKind {
    /// Frozen seeded random convolutions; fully self-contained.
    Seeded { seed: u64 },
    /// Caller-provided convolution stacks, e.g. exported from a trained
    /// classifier. One weight tensor `[C_out, C_in, 3, 3]` per stage, per
    /// supported input channel count.
    Tensors {
        for_rgb: Vec<Tensor>,
        for_gray: Vec<Tensor>,
    },
}

/// How per-layer feature differences are reduced to a number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reduction {
    /// Mean squared difference (the LPIPS-style default).
    MeanSquared,
    /// Root of the mean squared difference. A true metric per layer, so
    /// weighted sums of layers satisfy the triangle inequality.
    Rms,
}

/// Deterministic multi-layer feature-space distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptualMetricHandle {
    kind: FeatureNetKind,
    stage_channels: Vec<usize>,
    pub layer_weights: Vec<f64>,
    pub normalize: bool,
    pub reduction: Reduction,
    #[serde(skip)]
    cache: WeightCache,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct WeightCache {
    rgb: Vec<Tensor>,
    gray: Vec<Tensor>,
}

impl PerceptualMetricHandle {
    /// The default handle: three seeded stages, normalized features,
    /// mean-squared reduction.
    pub fn seeded(seed: u64) -> Self {
        Self::with_config(
            FeatureNetKind::Seeded { seed },
            vec![8, 16, 16],
            vec![1.0, 1.0, 1.0],
            true,
            Reduction::MeanSquared,
        )
    }

    /// Single-stage, unnormalized, RMS-reduced configuration. This variant
    /// satisfies the triangle inequality in feature space, which the
    /// model-distance transitivity bound needs.
    pub fn seeded_metric_space(seed: u64) -> Self {
        Self::with_config(
            FeatureNetKind::Seeded { seed },
            vec![12],
            vec![1.0],
            false,
            Reduction::Rms,
        )
    }

    pub fn with_config(
        kind: FeatureNetKind,
        stage_channels: Vec<usize>,
        layer_weights: Vec<f64>,
        normalize: bool,
        reduction: Reduction,
    ) -> Self {
        assert_eq!(stage_channels.len(), layer_weights.len());
        assert!(layer_weights.iter().all(|w| *w >= 0.0));
        let cache = match &kind {
            FeatureNetKind::Seeded { seed } => WeightCache {
                rgb: seeded_stack(*seed, 3, &stage_channels),
                gray: seeded_stack(*seed, 1, &stage_channels),
            },
            FeatureNetKind::Tensors { for_rgb, for_gray } => WeightCache {
                rgb: for_rgb.clone(),
                gray: for_gray.clone(),
            },
        };
        Self {
            kind,
            stage_channels,
            layer_weights,
            normalize,
            reduction,
            cache,
        }
    }

    /// Rebuild the weight cache; needed after deserialization.
    pub fn rebuild(&mut self) {
        *self = Self::with_config(
            self.kind.clone(),
            self.stage_channels.clone(),
            self.layer_weights.clone(),
            self.normalize,
            self.reduction,
        );
    }

    pub fn num_stages(&self) -> usize {
        self.stage_channels.len()
    }

    fn stack_for(&self, channels: usize) -> Result<&[Tensor]> {
        match channels {
            3 => Ok(&self.cache.rgb),
            1 => Ok(&self.cache.gray),
            c => Err(Error::ShapeMismatch(format!(
                "feature net supports 1 or 3 channels, got {c}"
            ))),
        }
    }

    /// Per-stage feature vars for an image var already on the tape.
    /// Features are post-activation, channel-normalized when configured.
    pub(crate) fn feature_vars(
        &self,
        tape: &mut Tape,
        img: Var,
        channels: usize,
    ) -> Result<Vec<Var>> {
        let stack = self.stack_for(channels)?;
        let mut x = img;
        let mut feats = Vec::with_capacity(stack.len());
        for w in stack {
            let wv = tape.constant(w.clone());
            let y = tape.conv2d(x, wv);
            let a = tape.leaky_relu(y, LEAKY_SLOPE);
            let f = if self.normalize {
                tape.normalize_channels(a, 1e-10)
            } else {
                a
            };
            feats.push(f);
            let shape = tape.value(a).shape().to_vec();
            x = if shape[1] > 1 && shape[1].is_multiple_of(2) {
                tape.avgpool2x(a)
            } else {
                a
            };
        }
        Ok(feats)
    }

    /// Weighted distance between two feature lists already on the tape.
    pub(crate) fn distance_var(&self, tape: &mut Tape, fx: &[Var], fy: &[Var]) -> Var {
        assert_eq!(fx.len(), self.layer_weights.len());
        let mut total: Option<Var> = None;
        for ((&a, &b), &weight) in fx.iter().zip(fy).zip(&self.layer_weights) {
            let mut term = tape.mean_sq_diff(a, b);
            if self.reduction == Reduction::Rms {
                // sqrt(mean sq); rsqrt_eps gives x^-1/2, so invert again.
                let inv = tape.rsqrt_eps(term, 1e-30);
                let one = tape.constant(Tensor::scalar(1.0));
                let prod = tape.mul(term, inv); // x * x^-1/2 = sqrt(x)
                let _ = one;
                term = prod;
            }
            let weighted = tape.scale(term, weight);
            total = Some(match total {
                None => weighted,
                Some(t) => tape.add(t, weighted),
            });
        }
        total.expect("at least one stage")
    }

    /// Plain-tensor features of an image (evaluation path).
    pub fn features_of(&self, img: &ImageTensor) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let iv = tape.constant(img.tensor().clone());
        let fv = self.feature_vars(&mut tape, iv, img.channels())?;
        Ok(fv.into_iter().map(|v| tape.value(v).clone()).collect())
    }

    /// Pooled per-channel feature vector (used by the Fréchet diagnostic).
    pub fn pooled_features(&self, img: &ImageTensor) -> Result<Vec<f64>> {
        let feats = self.features_of(img)?;
        let mut out = Vec::new();
        for f in feats {
            let [c, h, w] = *f.shape() else {
                unreachable!()
            };
            let hw = (h * w) as f64;
            for ch in 0..c {
                out.push(f.data()[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>() / hw);
            }
        }
        Ok(out)
    }

    pub fn feature_dim(&self) -> usize {
        self.stage_channels.iter().sum()
    }
}

fn seeded_stack(seed: u64, in_channels: usize, stage_channels: &[usize]) -> Vec<Tensor> {
    let mut r = rng::rng_from_seed(rng::derive_seed(seed, 0xfea7 + in_channels as u64));
    let mut stack = Vec::with_capacity(stage_channels.len());
    let mut cin = in_channels;
    for &cout in stage_channels {
        let scale = (2.0 / (cin * 9) as f64).sqrt();
        let mut w = vec![0.0; cout * cin * 9];
        rng::fill_normal(&mut r, &mut w);
        for v in &mut w {
            *v *= scale;
        }
        stack.push(Tensor::new(vec![cout, cin, 3, 3], w).unwrap());
        cin = cout;
    }
    stack
}

/// Weighted feature-space distance between two images of the same shape.
pub fn perceptual_distance(
    handle: &PerceptualMetricHandle,
    x: &ImageTensor,
    y: &ImageTensor,
) -> Result<f64> {
    if x.tensor().shape() != y.tensor().shape() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            x.tensor().shape(),
            y.tensor().shape()
        )));
    }
    let mut tape = Tape::new();
    let xv = tape.constant(x.tensor().clone());
    let yv = tape.constant(y.tensor().clone());
    let fx = handle.feature_vars(&mut tape, xv, x.channels())?;
    let fy = handle.feature_vars(&mut tape, yv, y.channels())?;
    let d = handle.distance_var(&mut tape, &fx, &fy);
    Ok(tape.value(d).item())
}

const SSIM_WINDOW: usize = 8;
// Stabilizers from the dynamic range of [-1, 1] pixels.
const SSIM_L: f64 = 2.0;
const SSIM_C1: f64 = (0.01 * SSIM_L) * (0.01 * SSIM_L);
const SSIM_C2: f64 = (0.03 * SSIM_L) * (0.03 * SSIM_L);

/// Structural similarity over sliding uniform 8x8 windows. Color images
/// are converted to luma first.
pub fn ssim(x: &ImageTensor, y: &ImageTensor) -> Result<f64> {
    if x.tensor().shape() != y.tensor().shape() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            x.tensor().shape(),
            y.tensor().shape()
        )));
    }
    let gx = to_luma(x);
    let gy = to_luma(y);
    let n = x.resolution();
    let win = SSIM_WINDOW.min(n);
    let area = (win * win) as f64;

    let mut total = 0.0;
    let mut count = 0usize;
    for r0 in 0..=(n - win) {
        for c0 in 0..=(n - win) {
            let mut sx = 0.0;
            let mut sy = 0.0;
            let mut sxx = 0.0;
            let mut syy = 0.0;
            let mut sxy = 0.0;
            for r in r0..r0 + win {
                for c in c0..c0 + win {
                    let a = gx[r * n + c];
                    let b = gy[r * n + c];
                    sx += a;
                    sy += b;
                    sxx += a * a;
                    syy += b * b;
                    sxy += a * b;
                }
            }
            let mx = sx / area;
            let my = sy / area;
            let vx = sxx / area - mx * mx;
            let vy = syy / area - my * my;
            let cov = sxy / area - mx * my;
            let num = (2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2);
            let den = (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

fn to_luma(img: &ImageTensor) -> Vec<f64> {
    let t = img.tensor();
    let [c, h, w] = *t.shape() else {
        unreachable!()
    };
    let hw = h * w;
    if c == 1 {
        return t.data().to_vec();
    }
    let (r, g, b) = (
        &t.data()[0..hw],
        &t.data()[hw..2 * hw],
        &t.data()[2 * hw..3 * hw],
    );
    (0..hw)
        .map(|i| 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i])
        .collect()
}

/// Outcome of a Fréchet distance computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrechetResult {
    pub distance: f64,
    /// Diagonal jitter was added to stabilize a degenerate covariance.
    pub jitter_applied: bool,
    /// A set had fewer than 2x feature-dim samples.
    pub undersampled: bool,
}

const FRECHET_JITTER: f64 = 1e-6;

/// Fréchet distance between Gaussian fits of pooled features of two image
/// sets.
pub fn frechet_distance(
    set_a: &[ImageTensor],
    set_b: &[ImageTensor],
    handle: &PerceptualMetricHandle,
) -> Result<FrechetResult> {
    if set_a.is_empty() || set_b.is_empty() {
        return Err(Error::InvalidArgument("empty image set".into()));
    }
    let fa: Vec<Vec<f64>> = set_a
        .iter()
        .map(|img| handle.pooled_features(img))
        .collect::<Result<_>>()?;
    let fb: Vec<Vec<f64>> = set_b
        .iter()
        .map(|img| handle.pooled_features(img))
        .collect::<Result<_>>()?;
    let d = handle.feature_dim();
    let undersampled = fa.len() < 2 * d || fb.len() < 2 * d;

    let (mu_a, mut cov_a) = gaussian_fit(&fa, d);
    let (mu_b, mut cov_b) = gaussian_fit(&fb, d);

    let degenerate = |cov: &[f64]| {
        let (vals, _) = linalg::symmetric_eigen(cov, d);
        vals.iter().any(|v| *v < 1e-10)
    };
    let jitter_applied = degenerate(&cov_a) || degenerate(&cov_b);
    if jitter_applied {
        for i in 0..d {
            cov_a[i * d + i] += FRECHET_JITTER;
            cov_b[i * d + i] += FRECHET_JITTER;
        }
    }

    let mean_term: f64 = mu_a.iter().zip(&mu_b).map(|(a, b)| (a - b) * (a - b)).sum();
    let tr_a: f64 = (0..d).map(|i| cov_a[i * d + i]).sum();
    let tr_b: f64 = (0..d).map(|i| cov_b[i * d + i]).sum();
    let tr_cross = linalg::trace_sqrt_product(&cov_a, &cov_b, d);
    let distance = (mean_term + tr_a + tr_b - 2.0 * tr_cross).max(0.0);
    Ok(FrechetResult {
        distance,
        jitter_applied,
        undersampled,
    })
}

fn gaussian_fit(features: &[Vec<f64>], d: usize) -> (Vec<f64>, Vec<f64>) {
    let n = features.len() as f64;
    let mut mu = vec![0.0; d];
    for f in features {
        for (m, v) in mu.iter_mut().zip(f) {
            *m += v;
        }
    }
    for m in &mut mu {
        *m /= n;
    }
    let mut cov = vec![0.0; d * d];
    for f in features {
        for i in 0..d {
            let di = f[i] - mu[i];
            for j in 0..d {
                cov[i * d + j] += di * (f[j] - mu[j]);
            }
        }
    }
    let denom = (n - 1.0).max(1.0);
    for c in &mut cov {
        *c /= denom;
    }
    (mu, cov)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Smooth random test image: low-frequency field upsampled to `res`.
    fn toy_image(seed: u64, res: usize) -> ImageTensor {
        let base = 4;
        let raw = rng::normal_vec(seed, 3 * base * base);
        let mut data = vec![0.0; 3 * res * res];
        let scale = res / base;
        for ch in 0..3 {
            for r in 0..res {
                for c in 0..res {
                    let v = raw[ch * base * base + (r / scale) * base + c / scale];
                    data[ch * res * res + r * res + c] = (0.5 * v).tanh();
                }
            }
        }
        ImageTensor::new(Tensor::new(vec![3, res, res], data).unwrap()).unwrap()
    }

    fn perturbed(img: &ImageTensor, seed: u64, sigma: f64) -> ImageTensor {
        let noise = rng::normal_vec(seed, img.tensor().numel());
        let data: Vec<f64> = img
            .tensor()
            .data()
            .iter()
            .zip(&noise)
            .map(|(v, n)| v + sigma * n)
            .collect();
        ImageTensor::from_unclamped(Tensor::new(img.tensor().shape().to_vec(), data).unwrap())
            .unwrap()
    }

    #[test]
    fn perceptual_identity_and_symmetry() {
        let h = PerceptualMetricHandle::seeded(1);
        let a = toy_image(10, 16);
        let b = toy_image(11, 16);
        assert_eq!(perceptual_distance(&h, &a, &a).unwrap(), 0.0);
        let dab = perceptual_distance(&h, &a, &b).unwrap();
        let dba = perceptual_distance(&h, &b, &a).unwrap();
        assert!(dab > 0.0);
        // symmetric by construction: (x-y)^2 term by term
        assert_eq!(dab, dba);
    }

    #[test]
    fn perceptual_shape_mismatch() {
        let h = PerceptualMetricHandle::seeded(1);
        let a = toy_image(1, 16);
        let b = toy_image(2, 32);
        assert!(perceptual_distance(&h, &a, &b).is_err());
    }

    #[test]
    fn perturbation_closer_than_unrelated() {
        // Small noise should stay closer than a different image on at
        // least 95% of a 50-image seeded set.
        let h = PerceptualMetricHandle::seeded(3);
        let mut wins = 0;
        let total = 50;
        for i in 0..total {
            let x = toy_image(100 + i, 16);
            let near = perturbed(&x, 500 + i, 0.05);
            let far = toy_image(1000 + i, 16);
            let dn = perceptual_distance(&h, &x, &near).unwrap();
            let df = perceptual_distance(&h, &x, &far).unwrap();
            if dn < df {
                wins += 1;
            }
        }
        assert!(
            wins * 100 >= total * 95,
            "only {wins}/{total} ordered correctly"
        );
    }

    #[test]
    fn rms_reduction_triangle_inequality() {
        let h = PerceptualMetricHandle::seeded_metric_space(5);
        for i in 0..20 {
            let a = toy_image(2000 + i, 16);
            let b = toy_image(3000 + i, 16);
            let c = toy_image(4000 + i, 16);
            let ab = perceptual_distance(&h, &a, &b).unwrap();
            let bc = perceptual_distance(&h, &b, &c).unwrap();
            let ac = perceptual_distance(&h, &a, &c).unwrap();
            assert!(ac <= ab + bc + 1e-12, "triangle violated: {ac} > {ab}+{bc}");
        }
    }

    #[test]
    fn ssim_self_is_one() {
        let x = toy_image(9, 32);
        assert_eq!(ssim(&x, &x).unwrap(), 1.0);
    }

    #[test]
    fn ssim_constant_images_closed_form() {
        let mk = |v: f64| ImageTensor::new(Tensor::full(&[1, 16, 16], v)).unwrap();
        let (ma, mb) = (0.25, -0.4);
        let got = ssim(&mk(ma), &mk(mb)).unwrap();
        let want = (2.0 * ma * mb + SSIM_C1) / (ma * ma + mb * mb + SSIM_C1);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn ssim_decreases_with_noise() {
        let x = toy_image(21, 32);
        let mild = perturbed(&x, 1, 0.05);
        let heavy = perturbed(&x, 2, 0.4);
        let s_mild = ssim(&x, &mild).unwrap();
        let s_heavy = ssim(&x, &heavy).unwrap();
        assert!(s_mild > s_heavy, "{s_mild} vs {s_heavy}");
        assert!(s_mild < 1.0);
    }

    #[test]
    fn frechet_self_is_zero() {
        let h = PerceptualMetricHandle::seeded(7);
        let set: Vec<ImageTensor> = (0..12).map(|i| toy_image(700 + i, 16)).collect();
        let r = frechet_distance(&set, &set, &h).unwrap();
        assert!(r.distance < 1e-6, "self distance {}", r.distance);
        assert!(r.undersampled);
    }

    #[test]
    fn frechet_point_masses() {
        // Two sets, each several copies of one image: distance reduces to
        // the squared feature-mean gap.
        let h = PerceptualMetricHandle::seeded(7);
        let a = toy_image(31, 16);
        let b = toy_image(32, 16);
        let set_a: Vec<ImageTensor> = (0..4).map(|_| a.clone()).collect();
        let set_b: Vec<ImageTensor> = (0..4).map(|_| b.clone()).collect();
        let r = frechet_distance(&set_a, &set_b, &h).unwrap();
        assert!(r.jitter_applied);
        let fa = h.pooled_features(&a).unwrap();
        let fb = h.pooled_features(&b).unwrap();
        let want: f64 = fa.iter().zip(&fb).map(|(x, y)| (x - y) * (x - y)).sum();
        assert!((r.distance - want).abs() < 1e-6, "{} vs {want}", r.distance);
    }

    /// Independent dense-algebra route: Denman-Beavers iteration for the
    /// matrix square root, plus Gauss-Jordan inversion.
    mod frechet_oracle {
        use super::*;

        fn invert(m: &[f64], n: usize) -> Vec<f64> {
            let mut a = m.to_vec();
            let mut inv = vec![0.0; n * n];
            for i in 0..n {
                inv[i * n + i] = 1.0;
            }
            for col in 0..n {
                let mut pivot = col;
                for r in col + 1..n {
                    if a[r * n + col].abs() > a[pivot * n + col].abs() {
                        pivot = r;
                    }
                }
                for k in 0..n {
                    a.swap(col * n + k, pivot * n + k);
                    inv.swap(col * n + k, pivot * n + k);
                }
                let p = a[col * n + col];
                for k in 0..n {
                    a[col * n + k] /= p;
                    inv[col * n + k] /= p;
                }
                for r in 0..n {
                    if r == col {
                        continue;
                    }
                    let f = a[r * n + col];
                    for k in 0..n {
                        a[r * n + k] -= f * a[col * n + k];
                        inv[r * n + k] -= f * inv[col * n + k];
                    }
                }
            }
            inv
        }

        fn sqrtm_db(m: &[f64], n: usize) -> Vec<f64> {
            let mut y = m.to_vec();
            let mut z = vec![0.0; n * n];
            for i in 0..n {
                z[i * n + i] = 1.0;
            }
            for _ in 0..60 {
                let y_inv = invert(&y, n);
                let z_inv = invert(&z, n);
                let mut y_next = vec![0.0; n * n];
                let mut z_next = vec![0.0; n * n];
                for i in 0..n * n {
                    y_next[i] = 0.5 * (y[i] + z_inv[i]);
                    z_next[i] = 0.5 * (z[i] + y_inv[i]);
                }
                y = y_next;
                z = z_next;
            }
            y
        }

        #[test]
        fn matches_denman_beavers_reference() {
            let h = PerceptualMetricHandle::seeded(13);
            let set_a: Vec<ImageTensor> = (0..30).map(|i| toy_image(5000 + i, 16)).collect();
            let set_b: Vec<ImageTensor> = (0..30).map(|i| toy_image(6000 + i, 16)).collect();
            let got = frechet_distance(&set_a, &set_b, &h).unwrap();

            let d = h.feature_dim();
            let fa: Vec<Vec<f64>> = set_a
                .iter()
                .map(|i| h.pooled_features(i).unwrap())
                .collect();
            let fb: Vec<Vec<f64>> = set_b
                .iter()
                .map(|i| h.pooled_features(i).unwrap())
                .collect();
            let (mu_a, mut cov_a) = gaussian_fit(&fa, d);
            let (mu_b, mut cov_b) = gaussian_fit(&fb, d);
            if got.jitter_applied {
                for i in 0..d {
                    cov_a[i * d + i] += FRECHET_JITTER;
                    cov_b[i * d + i] += FRECHET_JITTER;
                }
            }
            let prod = linalg::matmul(&cov_a, &cov_b, d, d, d);
            let root = sqrtm_db(&prod, d);
            let tr_cross: f64 = (0..d).map(|i| root[i * d + i]).sum();
            let mean_term: f64 = mu_a.iter().zip(&mu_b).map(|(a, b)| (a - b) * (a - b)).sum();
            let tr_a: f64 = (0..d).map(|i| cov_a[i * d + i]).sum();
            let tr_b: f64 = (0..d).map(|i| cov_b[i * d + i]).sum();
            let want = mean_term + tr_a + tr_b - 2.0 * tr_cross;

            assert!(
                (got.distance - want).abs() < 1e-6,
                "{} vs {want}",
                got.distance
            );
        }
    }
}
