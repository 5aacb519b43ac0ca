//! Checkpoint-level model surgery: swapping coarse synthesis blocks
//! between architecturally identical generators, the full
//! fine-tune-then-swap transformation, and the Monte-Carlo model
//! distance that quantifies how far two generators have drifted.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::dataset::ImageDataset;
use crate::error::{Error, Result};
use crate::generator::GeneratorModel;
use crate::metrics::{perceptual_distance, PerceptualMetricHandle};
use crate::rng::derive_seed;
use crate::training::{finetune, FreezeSet, TrainConfig};

/// Number of coarse blocks to swap, counted from 8x8 upward. The 4x4
/// block is never swapped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapDepth(pub usize);

/// A reproducible record of one model transformation: what was frozen,
/// how the fine-tune ran, and how many blocks were swapped back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformationRecipe {
    pub freeze: FreezeSet,
    pub finetune_cfg: TrainConfig,
    pub swap_depth: SwapDepth,
}

impl TransformationRecipe {
    /// The configuration the method is built around: freeze-FC
    /// fine-tuning followed by a swap of `depth` coarse blocks.
    pub fn freeze_fc(finetune_cfg: TrainConfig, depth: usize) -> Self {
        Self {
            freeze: FreezeSet::mapping_network(),
            finetune_cfg,
            swap_depth: SwapDepth(depth),
        }
    }
}

/// Monte-Carlo estimate of the expected perceptual distance between two
/// generators on shared latent inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDistanceReport {
    pub estimate: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub per_sample: Vec<f64>,
}

impl ModelDistanceReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Resolutions eligible for swapping, in swap order (8x8 first).
pub fn swappable_resolutions(model: &GeneratorModel) -> Vec<usize> {
    model
        .config()
        .resolutions
        .iter()
        .copied()
        .filter(|&r| r >= 8)
        .collect()
}

/// Copy the first `depth` coarse blocks (8x8 upward) of `source` into
/// `tuned`, bit-exactly. Depth 0 returns `tuned` unchanged.
pub fn swap_layers(
    source: &GeneratorModel,
    tuned: &GeneratorModel,
    depth: SwapDepth,
) -> Result<GeneratorModel> {
    if !source.same_architecture(tuned) {
        return Err(Error::ArchitectureMismatch(
            "swap requires identical architectures".into(),
        ));
    }
    let coarse = swappable_resolutions(source);
    if depth.0 > coarse.len() {
        return Err(Error::InvalidArgument(format!(
            "swap depth {} exceeds the {} swappable blocks",
            depth.0,
            coarse.len()
        )));
    }
    if depth.0 == 0 {
        return Ok(tuned.clone());
    }
    let mut result = tuned.clone();
    for &res in &coarse[..depth.0] {
        let prefix = format!("blocks.{res}.");
        let names: Vec<String> = source
            .params()
            .matching(&prefix)
            .into_iter()
            .map(str::to_string)
            .collect();
        for name in names {
            result
                .params_mut()
                .set(&name, source.params().expect(&name).clone())?;
        }
    }
    {
        let meta = result.meta_mut();
        meta.parent_digest = Some(checkpoint::model_digest(tuned));
        meta.swap_source_digest = Some(checkpoint::model_digest(source));
        meta.swap_depth = Some(depth.0);
    }
    Ok(result)
}

/// The full transformation: freeze-constrained fine-tuning on the target
/// data, then a layer swap from the base. When `work_dir` is given, the
/// intermediate fine-tuned checkpoint is persisted there.
pub fn transform(
    base: &GeneratorModel,
    target_data: &ImageDataset,
    recipe: &TransformationRecipe,
    work_dir: Option<&Path>,
) -> Result<GeneratorModel> {
    let tuned = finetune(base, target_data, &recipe.freeze, &recipe.finetune_cfg)?.model;
    finish_transform(base, tuned, recipe, work_dir)
}

/// [`transform`] continuing from the base model's discriminator.
pub fn transform_with_discriminator(
    base: &GeneratorModel,
    disc: &crate::training::Discriminator,
    target_data: &ImageDataset,
    recipe: &TransformationRecipe,
    work_dir: Option<&Path>,
) -> Result<GeneratorModel> {
    let tuned = crate::training::finetune_with_discriminator(
        base,
        disc,
        target_data,
        &recipe.freeze,
        &recipe.finetune_cfg,
    )?
    .model;
    finish_transform(base, tuned, recipe, work_dir)
}

fn finish_transform(
    base: &GeneratorModel,
    tuned: GeneratorModel,
    recipe: &TransformationRecipe,
    work_dir: Option<&Path>,
) -> Result<GeneratorModel> {
    if let Some(dir) = work_dir {
        checkpoint::save_model(&dir.join("finetuned.ckpt"), &tuned)?;
    }
    let mut swapped = swap_layers(base, &tuned, recipe.swap_depth)?;
    swapped.meta_mut().recipe = Some(serde_json::to_value(recipe)?);
    Ok(swapped)
}

/// Estimate the model distance with `n` shared seeded latents. Each
/// sample shares its noise fields between the two models, so the metric
/// sees parameter differences only.
pub fn model_distance(
    g1: &GeneratorModel,
    g2: &GeneratorModel,
    n: usize,
    seed: u64,
    metric: &PerceptualMetricHandle,
) -> Result<ModelDistanceReport> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    if g1.d_z() != g2.d_z()
        || g1.r_max() != g2.r_max()
        || g1.config().img_channels != g2.config().img_channels
    {
        return Err(Error::ArchitectureMismatch(
            "models must share latent dim and output shape".into(),
        ));
    }
    let zs = g1.sample_z(seed, n);
    let per_sample: Vec<f64> = zs
        .par_iter()
        .enumerate()
        .map(|(i, z)| -> Result<f64> {
            let noise_seed = derive_seed(seed, i as u64);
            let w1 = g1.map_latent(z)?;
            let w2 = g2.map_latent(z)?;
            let img1 = g1.synthesize(&g1.content_plan(&w1)?, noise_seed)?;
            let img2 = g2.synthesize(&g2.content_plan(&w2)?, noise_seed)?;
            perceptual_distance(metric, &img1, &img2)
        })
        .collect::<Result<_>>()?;

    let estimate = per_sample.iter().sum::<f64>() / n as f64;
    let std_error = if n > 1 {
        let var = per_sample
            .iter()
            .map(|d| (d - estimate) * (d - estimate))
            .sum::<f64>()
            / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    Ok(ModelDistanceReport {
        estimate,
        std_error,
        n_samples: n,
        seed,
        per_sample,
    })
}
