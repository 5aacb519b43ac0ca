//! Latent-space analysis: the semantic basis spanned by the stacked
//! per-layer style affines, eigendirection edits, and optimization-based
//! inversion of images into the embedded space.
//!
//! Two inversion modes share one objective (pixel L1 plus feature-space
//! distance): the baseline optimizes the embedded code directly, the
//! constrained mode optimizes a coefficient vector `v` and synthesizes
//! from `w = V v`, keeping the iterate inside the span of the basis.

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::generator::{EmbeddedCode, GeneratorModel, ImageTensor};
use crate::linalg;
use crate::metrics::PerceptualMetricHandle;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// All per-layer style affine weights stacked row-wise, with their biases.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleAffineStack {
    /// Row-major `rows x d_w`.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub rows: usize,
    pub d_w: usize,
    pub source_model_digest: String,
}

/// Eigenstructure of `V = A^T A`: the embedded-space directions the
/// generator's style affines respond to most.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticBasis {
    /// Row-major `d_w x d_w`, symmetric PSD.
    pub v: Vec<f64>,
    /// Descending, non-negative.
    pub eigenvalues: Vec<f64>,
    /// Row `i` is the unit eigenvector paired with `eigenvalues[i]`.
    pub eigenvectors: Vec<f64>,
    pub d_w: usize,
    pub source_model_digest: String,
}

impl SemanticBasis {
    pub fn num_directions(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvector(&self, i: usize) -> &[f64] {
        &self.eigenvectors[i * self.d_w..(i + 1) * self.d_w]
    }

    /// `V x` (V is symmetric, so this is also `x^T V`).
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        linalg::matvec(&self.v, x, self.d_w, self.d_w)
    }
}

/// Stack every style affine's weight matrix in slot order.
pub fn extract_affine(model: &GeneratorModel) -> StyleAffineStack {
    let d_w = model.d_w();
    let mut a = Vec::new();
    let mut b = Vec::new();
    let mut rows = 0;
    for slot in model.style_slots() {
        let prefix = format!("blocks.{}.conv{}", slot.resolution, slot.conv);
        let w = model.params().expect(&format!("{prefix}.affine.weight"));
        let bias = model.params().expect(&format!("{prefix}.affine.bias"));
        assert_eq!(w.shape(), &[slot.in_channels, d_w]);
        a.extend_from_slice(w.data());
        b.extend_from_slice(bias.data());
        rows += slot.in_channels;
    }
    StyleAffineStack {
        a,
        b,
        rows,
        d_w,
        source_model_digest: checkpoint::model_digest(model),
    }
}

/// Eigendecomposition of `A^T A`, optionally truncated to the `top_k`
/// leading directions. Truncation also projects `V` to the rank-k
/// reconstruction so the constrained inversion genuinely loses the
/// discarded directions.
pub fn semantic_basis(stack: &StyleAffineStack, top_k: Option<usize>) -> Result<SemanticBasis> {
    if stack.rows == 0 || stack.d_w == 0 {
        return Err(Error::InvalidArgument("empty affine stack".into()));
    }
    if !stack.a.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("affine stack".into()));
    }
    let d = stack.d_w;
    let gram = linalg::gram(&stack.a, stack.rows, d);
    let (vals, vecs) = linalg::symmetric_eigen(&gram, d);
    let k = top_k.unwrap_or(d).min(d);
    if k == 0 {
        return Err(Error::InvalidArgument("top_k must be at least 1".into()));
    }
    let eigenvalues: Vec<f64> = vals[..k].iter().map(|v| v.max(0.0)).collect();
    let eigenvectors = vecs[..k * d].to_vec();
    let v = if k == d {
        gram
    } else {
        // Rank-k reconstruction sum_i l_i n_i n_i^T.
        let mut m = vec![0.0; d * d];
        for (i, &l) in eigenvalues.iter().enumerate() {
            let n = &eigenvectors[i * d..(i + 1) * d];
            for r in 0..d {
                let lr = l * n[r];
                for c in 0..d {
                    m[r * d + c] += lr * n[c];
                }
            }
        }
        m
    };
    Ok(SemanticBasis {
        v,
        eigenvalues,
        eigenvectors,
        d_w: d,
        source_model_digest: stack.source_model_digest.clone(),
    })
}

/// Move an embedded code along one eigendirection: `w' = w + alpha n_i`.
pub fn edit_latent(
    w: &EmbeddedCode,
    basis: &SemanticBasis,
    direction_index: usize,
    alpha: f64,
) -> Result<EmbeddedCode> {
    if direction_index >= basis.num_directions() {
        return Err(Error::InvalidArgument(format!(
            "direction {direction_index} out of range 0..{}",
            basis.num_directions()
        )));
    }
    if w.dim() != basis.d_w {
        return Err(Error::DimensionMismatch {
            expected: basis.d_w,
            got: w.dim(),
        });
    }
    let n = basis.eigenvector(direction_index);
    Ok(EmbeddedCode(
        w.0.iter().zip(n).map(|(wv, nv)| wv + alpha * nv).collect(),
    ))
}

/// Optimizer settings shared by both inversion modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionConfig {
    pub learning_rate: f64,
    pub cosine_decay: bool,
    /// Samples drawn to estimate the mean embedded code used as the
    /// starting iterate.
    pub init_samples: usize,
    pub init_seed: u64,
    /// Noise fields stay fixed at this seed for the whole optimization.
    pub noise_seed: u64,
    pub l1_weight: f64,
    pub perceptual_weight: f64,
    pub perceptual: PerceptualMetricHandle,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            cosine_decay: true,
            init_samples: 1000,
            init_seed: 0,
            noise_seed: 0,
            l1_weight: 1.0,
            perceptual_weight: 1.0,
            perceptual: PerceptualMetricHandle::seeded(0),
        }
    }
}

pub const DEFAULT_INVERSION_STEPS: usize = 1000;

/// Outcome of an inversion run. The trace holds the loss at every visited
/// iterate plus, as its final entry, the loss of the returned best
/// iterate, which is never worse than the first entry.
#[derive(Debug, Clone)]
pub struct InversionResult {
    pub w: EmbeddedCode,
    /// Present only for the constrained mode.
    pub v: Option<Vec<f64>>,
    pub loss_trace: Vec<f64>,
    pub final_image: ImageTensor,
    pub steps: usize,
}

/// Baseline projection: optimize `w` directly.
pub fn project_w(
    image: &ImageTensor,
    model: &GeneratorModel,
    steps: usize,
    cfg: &InversionConfig,
) -> Result<InversionResult> {
    let objective = Objective::new(model, image, cfg, None)?;
    let w0 = model.mean_embedded(cfg.init_seed, cfg.init_samples);
    let (best_x, trace, image, evals) = optimize(&objective, w0.0, steps, cfg)?;
    Ok(InversionResult {
        w: EmbeddedCode(best_x),
        v: None,
        loss_trace: trace,
        final_image: image,
        steps: evals,
    })
}

/// Constrained inversion: optimize `v` with `w = V v`, which pins the
/// iterate to the span of the semantic basis.
pub fn invert_constrained(
    image: &ImageTensor,
    model: &GeneratorModel,
    basis: &SemanticBasis,
    steps: usize,
    cfg: &InversionConfig,
) -> Result<InversionResult> {
    let model_digest = checkpoint::model_digest(model);
    if basis.source_model_digest != model_digest {
        return Err(Error::BasisModelMismatch {
            basis: basis.source_model_digest.clone(),
            model: model_digest,
        });
    }
    if basis.d_w != model.d_w() {
        return Err(Error::DimensionMismatch {
            expected: model.d_w(),
            got: basis.d_w,
        });
    }
    let objective = Objective::new(model, image, cfg, Some(basis))?;
    // Start where the baseline starts: v0 is the least-squares preimage of
    // the mean embedded code under V.
    let w0 = model.mean_embedded(cfg.init_seed, cfg.init_samples);
    let d = basis.d_w;
    let mut v0 = vec![0.0; d];
    for (i, &l) in basis.eigenvalues.iter().enumerate() {
        if l <= 1e-10 {
            continue;
        }
        let n = basis.eigenvector(i);
        let coef: f64 = n.iter().zip(&w0.0).map(|(nv, wv)| nv * wv).sum();
        for (vv, nv) in v0.iter_mut().zip(n) {
            *vv += coef / l * nv;
        }
    }
    let (best_v, trace, image, evals) = optimize(&objective, v0, steps, cfg)?;
    let w = objective.code_from(&best_v);
    Ok(InversionResult {
        w: EmbeddedCode(w),
        v: Some(best_v),
        loss_trace: trace,
        final_image: image,
        steps: evals,
    })
}

/// The shared inversion objective over a free vector `x` (either `w`
/// itself or the basis coefficients `v`).
pub(crate) struct Objective<'m> {
    model: &'m GeneratorModel,
    target: Tensor,
    target_feats: Vec<Tensor>,
    noise: Vec<Tensor>,
    basis_matrix: Option<Tensor>,
    l1_weight: f64,
    perceptual_weight: f64,
    perceptual: PerceptualMetricHandle,
}

impl<'m> Objective<'m> {
    pub(crate) fn new(
        model: &'m GeneratorModel,
        image: &ImageTensor,
        cfg: &InversionConfig,
        basis: Option<&SemanticBasis>,
    ) -> Result<Self> {
        if image.resolution() != model.r_max() || image.channels() != model.config().img_channels {
            return Err(Error::ShapeMismatch(format!(
                "image {}x{} ({} ch) vs model output {}x{} ({} ch)",
                image.resolution(),
                image.resolution(),
                image.channels(),
                model.r_max(),
                model.r_max(),
                model.config().img_channels
            )));
        }
        let target_feats = cfg.perceptual.features_of(image)?;
        let basis_matrix = basis
            .map(|b| Tensor::new(vec![b.d_w, b.d_w], b.v.clone()))
            .transpose()?;
        Ok(Self {
            model,
            target: image.tensor().clone(),
            target_feats,
            noise: model.noise_fields(cfg.noise_seed),
            basis_matrix,
            l1_weight: cfg.l1_weight,
            perceptual_weight: cfg.perceptual_weight,
            perceptual: cfg.perceptual.clone(),
        })
    }

    /// The embedded code an iterate denotes (identity for the baseline,
    /// `V v` for the constrained mode), computed through the same matvec
    /// the forward pass uses.
    pub(crate) fn code_from(&self, x: &[f64]) -> Vec<f64> {
        match &self.basis_matrix {
            None => x.to_vec(),
            Some(v) => {
                let mut tape = Tape::new();
                let xv = tape.constant(Tensor::from_vec(x.to_vec()));
                let mv = tape.constant(v.clone());
                let w = tape.linear(mv, None, xv);
                tape.value(w).data().to_vec()
            }
        }
    }

    /// Loss, gradient (when requested) and the synthesized image.
    pub(crate) fn eval(
        &self,
        x: &[f64],
        want_grad: bool,
    ) -> Result<(f64, Option<Vec<f64>>, Tensor)> {
        let mut tape = Tape::new();
        let staged = self.model.stage(&mut tape, &mut |_| false);
        let xv = tape.leaf(Tensor::from_vec(x.to_vec()), want_grad);
        let wv = match &self.basis_matrix {
            None => xv,
            Some(v) => {
                let mv = tape.constant(v.clone());
                tape.linear(mv, None, xv)
            }
        };
        let codes = vec![wv; self.model.num_style_slots()];
        let (img, _) = staged.synth_forward(&mut tape, &codes, &self.noise, false);

        let target = tape.constant(self.target.clone());
        let l1 = tape.mean_abs_diff(img, target);
        let l1w = tape.scale(l1, self.l1_weight);
        let feats = self
            .perceptual
            .feature_vars(&mut tape, img, self.target.shape()[0])?;
        let target_feats: Vec<Var> = self
            .target_feats
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect();
        let pd = self
            .perceptual
            .distance_var(&mut tape, &feats, &target_feats);
        let pdw = tape.scale(pd, self.perceptual_weight);
        let loss = tape.add(l1w, pdw);

        let loss_val = tape.value(loss).item();
        if !loss_val.is_finite() {
            return Err(Error::NonFinite(format!(
                "inversion loss became {loss_val}"
            )));
        }
        let grad = if want_grad {
            tape.backward(loss);
            Some(
                tape.grad(xv)
                    .expect("leaf wanted gradients")
                    .data()
                    .to_vec(),
            )
        } else {
            None
        };
        Ok((loss_val, grad, tape.value(img).clone()))
    }
}

/// Adam in a vector space, with optional cosine learning-rate decay;
/// keeps the best-so-far iterate.
fn optimize(
    objective: &Objective,
    x0: Vec<f64>,
    steps: usize,
    cfg: &InversionConfig,
) -> Result<(Vec<f64>, Vec<f64>, ImageTensor, usize)> {
    let dim = x0.len();
    let mut x = x0;
    let mut m = vec![0.0; dim];
    let mut v = vec![0.0; dim];
    let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);

    let mut trace = Vec::with_capacity(steps + 1);
    let mut best_x = x.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_img: Option<Tensor> = None;

    for step in 0..steps {
        let (loss, grad, img) = objective.eval(&x, true)?;
        trace.push(loss);
        if loss < best_loss {
            best_loss = loss;
            best_x = x.clone();
            best_img = Some(img);
        }
        let grad = grad.expect("gradient requested");
        let lr = if cfg.cosine_decay {
            cfg.learning_rate
                * 0.5
                * (1.0 + (std::f64::consts::PI * step as f64 / steps as f64).cos())
        } else {
            cfg.learning_rate
        };
        let t = (step + 1) as i32;
        let (bc1, bc2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
        for i in 0..dim {
            m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
            v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
            x[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
        }
    }
    // Score the arrival point too, then pin the trace's final entry to the
    // returned iterate so "final <= first" holds by construction.
    let (last_loss, _, last_img) = objective.eval(&x, false)?;
    if last_loss < best_loss {
        best_loss = last_loss;
        best_x = x;
        best_img = Some(last_img);
    }
    trace.push(best_loss);
    let img = ImageTensor::new(best_img.expect("at least one evaluation"))?;
    Ok((best_x, trace, img, steps))
}
