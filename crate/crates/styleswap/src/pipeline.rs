//! End-to-end translation workflows over transformed models, the model
//! registry for multi-domain translation, and artifact persistence.
//!
//! Every workflow here is a composition of module-level operations with
//! shared seeds and no parameter updates; the high-level result is
//! bit-identical to running the steps by hand.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Container, KIND_LATENT};
use crate::error::{Error, Result};
use crate::generator::{EmbeddedCode, GeneratorModel, ImageTensor};
use crate::imageio;
use crate::latent::{
    extract_affine, invert_constrained, project_w, semantic_basis, InversionConfig, InversionResult,
};
use crate::tensor::Tensor;

/// How an input image is carried into the embedded space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InversionMode {
    /// Direct optimization of the embedded code.
    Baseline,
    /// Optimization constrained to the semantic basis of the model.
    Constrained,
}

/// Options shared by every translation flavor.
#[derive(Debug, Clone)]
pub struct TranslateOptions {
    /// Style slots at or after this index carry the appearance code.
    /// `None` applies the default rule (slots finer than 32x32, or the
    /// last block when the model never exceeds 32x32).
    pub split_index: Option<usize>,
    pub inversion: InversionMode,
    pub steps: usize,
    /// Basis truncation for constrained inversion; `None` keeps full rank.
    pub top_k: Option<usize>,
    pub inversion_cfg: InversionConfig,
}

impl Default for TranslateOptions {
    fn default() -> Self {
        Self {
            split_index: None,
            inversion: InversionMode::Baseline,
            steps: crate::latent::DEFAULT_INVERSION_STEPS,
            top_k: None,
            inversion_cfg: InversionConfig::default(),
        }
    }
}

/// Appearance takes over where resolution exceeds 32x32; models that
/// never reach that keep their last block for appearance.
pub fn default_split_index(model: &GeneratorModel) -> usize {
    let slots = model.style_slots();
    slots
        .iter()
        .position(|s| s.resolution > 32)
        .unwrap_or_else(|| slots.len().saturating_sub(2))
}

fn check_compatible(source: &GeneratorModel, target: &GeneratorModel) -> Result<()> {
    if !source.same_architecture(target) {
        return Err(Error::ArchitectureMismatch(
            "source and target models must share one architecture".into(),
        ));
    }
    Ok(())
}

/// Invert an image under a model according to the configured mode.
pub fn invert_image(
    image: &ImageTensor,
    model: &GeneratorModel,
    opts: &TranslateOptions,
) -> Result<InversionResult> {
    match opts.inversion {
        InversionMode::Baseline => project_w(image, model, opts.steps, &opts.inversion_cfg),
        InversionMode::Constrained => {
            let basis = semantic_basis(&extract_affine(model), opts.top_k)?;
            invert_constrained(image, model, &basis, opts.steps, &opts.inversion_cfg)
        }
    }
}

/// Single-modal translation: invert under the source model, synthesize
/// the pure-content plan under the target model.
pub fn translate(
    input: &ImageTensor,
    source: &GeneratorModel,
    target: &GeneratorModel,
    opts: &TranslateOptions,
) -> Result<ImageTensor> {
    check_compatible(source, target)?;
    let inv = invert_image(input, source, opts)?;
    let plan = target.content_plan(&inv.w)?;
    target.synthesize(&plan, opts.inversion_cfg.noise_seed)
}

/// Multi-modal translation: one content code from the input, `n` seeded
/// appearance codes through the target's mapping network, outputs in
/// style order.
pub fn translate_multimodal(
    input: &ImageTensor,
    source: &GeneratorModel,
    target: &GeneratorModel,
    n: usize,
    style_seed: u64,
    opts: &TranslateOptions,
) -> Result<Vec<ImageTensor>> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one style".into()));
    }
    check_compatible(source, target)?;
    let inv = invert_image(input, source, opts)?;
    let split = opts
        .split_index
        .unwrap_or_else(|| default_split_index(target));
    let styles = target.sample_z(style_seed, n);
    styles
        .iter()
        .map(|z| {
            let w_a = target.map_latent(z)?;
            let plan = target.style_plan(&inv.w, Some(&w_a), split)?;
            target.synthesize(&plan, opts.inversion_cfg.noise_seed)
        })
        .collect()
}

/// Reference-guided translation: the appearance code is the inversion of
/// the reference image under the target model.
pub fn translate_reference(
    input: &ImageTensor,
    reference: &ImageTensor,
    source: &GeneratorModel,
    target: &GeneratorModel,
    opts: &TranslateOptions,
) -> Result<ImageTensor> {
    check_compatible(source, target)?;
    let w_c = invert_image(input, source, opts)?.w;
    let w_a = invert_image(reference, target, opts)?.w;
    let split = opts
        .split_index
        .unwrap_or_else(|| default_split_index(target));
    let plan = target.style_plan(&w_c, Some(&w_a), split)?;
    target.synthesize(&plan, opts.inversion_cfg.noise_seed)
}

/// Tag-to-checkpoint registry backing multi-domain translation.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ModelRegistry {
    entries: BTreeMap<String, PathBuf>,
}

impl ModelRegistry {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Ok(Self::default());
        }
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn add(&mut self, tag: &str, checkpoint: PathBuf) {
        self.entries.insert(tag.to_string(), checkpoint);
    }

    pub fn tags(&self) -> impl Iterator<Item = (&str, &Path)> {
        self.entries.iter().map(|(t, p)| (t.as_str(), p.as_path()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resolve(&self, tag: &str) -> Result<GeneratorModel> {
        let path = self
            .entries
            .get(tag)
            .ok_or_else(|| Error::UnknownTag(tag.to_string()))?;
        checkpoint::load_model(path)
    }
}

/// Digests a model claims descent from, plus its own.
fn lineage_digests(model: &GeneratorModel) -> Vec<String> {
    let mut out = vec![checkpoint::model_digest(model)];
    if let Some(p) = &model.meta().parent_digest {
        out.push(p.clone());
    }
    if let Some(s) = &model.meta().swap_source_digest {
        out.push(s.clone());
    }
    out
}

/// Outcome of a multi-domain translation: the image plus a lineage flag.
#[derive(Debug, Clone)]
pub struct MultiDomainOutcome {
    pub image: ImageTensor,
    /// False when the two models share no known ancestor; the translation
    /// still ran, but semantic alignment is not backed by lineage.
    pub lineage_ok: bool,
}

/// Translate between any two registered domains with zero training.
pub fn multidomain_translate(
    input: &ImageTensor,
    registry: &ModelRegistry,
    from_tag: &str,
    to_tag: &str,
    opts: &TranslateOptions,
) -> Result<MultiDomainOutcome> {
    let source = registry.resolve(from_tag)?;
    let target = registry.resolve(to_tag)?;
    let la = lineage_digests(&source);
    let lb = lineage_digests(&target);
    let lineage_ok = la.iter().any(|d| lb.contains(d));
    let image = translate(input, &source, &target, opts)?;
    Ok(MultiDomainOutcome { image, lineage_ok })
}

/// Persist an inversion result: reconstruction PNG, plain-text loss
/// trace, and the latent record in the checkpoint container format.
pub fn save_inversion(
    dir: &Path,
    name: &str,
    result: &InversionResult,
    model_digest: &str,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    imageio::write_png(&dir.join(format!("{name}.png")), &result.final_image)?;
    let trace: String = result.loss_trace.iter().map(|l| format!("{l}\n")).collect();
    std::fs::write(dir.join(format!("{name}_trace.txt")), trace)?;

    let mut tensors = vec![("w".to_string(), Tensor::from_vec(result.w.0.clone()))];
    if let Some(v) = &result.v {
        tensors.push(("v".to_string(), Tensor::from_vec(v.clone())));
    }
    let container = Container {
        kind: KIND_LATENT.into(),
        model_meta: None,
        extra: serde_json::json!({
            "model_digest": model_digest,
            "steps": result.steps,
            "final_loss": result.loss_trace.last(),
        }),
        tensors,
    };
    checkpoint::save_container(&dir.join(format!("{name}_latent.ckpt")), &container)?;
    Ok(())
}

/// Read back the embedded code of a persisted latent record.
pub fn load_latent_record(path: &Path) -> Result<EmbeddedCode> {
    let c = checkpoint::load_container(path)?;
    if c.kind != KIND_LATENT {
        return Err(Error::CorruptCheckpoint(format!(
            "expected a latent record, found kind '{}'",
            c.kind
        )));
    }
    let w = c
        .tensor("w")
        .ok_or_else(|| Error::CorruptCheckpoint("latent record without w".into()))?;
    Ok(EmbeddedCode(w.data().to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::GeneratorConfig;
    use crate::metrics::PerceptualMetricHandle;

    fn tiny_model(seed: u64, domain: &str) -> GeneratorModel {
        let cfg = GeneratorConfig {
            d_z: 8,
            d_w: 8,
            mapping_layers: 2,
            resolutions: vec![4, 8],
            channels: vec![8, 6],
            img_channels: 3,
        };
        GeneratorModel::new(cfg, domain, seed).unwrap()
    }

    fn quick_opts(steps: usize) -> TranslateOptions {
        TranslateOptions {
            steps,
            inversion_cfg: InversionConfig {
                init_samples: 16,
                perceptual: PerceptualMetricHandle::seeded(3),
                ..InversionConfig::default()
            },
            ..TranslateOptions::default()
        }
    }

    fn sample_image(model: &GeneratorModel, seed: u64) -> ImageTensor {
        let z = model.sample_z(seed, 1).pop().unwrap();
        let w = model.map_latent(&z).unwrap();
        model
            .synthesize(&model.content_plan(&w).unwrap(), 0)
            .unwrap()
    }

    #[test]
    fn translate_composes_bit_exactly() {
        let source = tiny_model(1, "a");
        let target = tiny_model(2, "b");
        let input = sample_image(&source, 5);
        let opts = quick_opts(6);

        let pipeline_out = translate(&input, &source, &target, &opts).unwrap();

        // Manual composition with the same seeds.
        let inv = invert_image(&input, &source, &opts).unwrap();
        let manual = target
            .synthesize(
                &target.content_plan(&inv.w).unwrap(),
                opts.inversion_cfg.noise_seed,
            )
            .unwrap();
        assert!(pipeline_out.bit_eq(&manual));
    }

    #[test]
    fn degenerate_translation_is_reconstruction() {
        let model = tiny_model(3, "a");
        let input = sample_image(&model, 7);
        let opts = quick_opts(6);
        let out = translate(&input, &model, &model, &opts).unwrap();
        let inv = invert_image(&input, &model, &opts).unwrap();
        assert!(out.bit_eq(&inv.final_image));
    }

    #[test]
    fn reference_of_input_under_source_is_reconstruction() {
        // reference = input and target = source: content and appearance
        // codes coincide, so the split is irrelevant and the output is
        // the plain reconstruction.
        let model = tiny_model(3, "a");
        let input = sample_image(&model, 7);
        let mut opts = quick_opts(6);
        opts.split_index = Some(2);
        let out = translate_reference(&input, &input, &model, &model, &opts).unwrap();
        let recon = translate(&input, &model, &model, &opts).unwrap();
        assert!(out.bit_eq(&recon));
    }

    #[test]
    fn multimodal_degenerate_equals_single() {
        let source = tiny_model(1, "a");
        let target = tiny_model(2, "b");
        let input = sample_image(&source, 5);
        let mut opts = quick_opts(4);
        // split at the layer count -> appearance codes never apply
        opts.split_index = Some(target.num_style_slots());
        let multi = translate_multimodal(&input, &source, &target, 1, 9, &opts).unwrap();
        let single = translate(&input, &source, &target, &opts).unwrap();
        assert_eq!(multi.len(), 1);
        assert!(multi[0].bit_eq(&single));
    }

    #[test]
    fn multimodal_is_deterministic_and_diverse() {
        let source = tiny_model(1, "a");
        let target = tiny_model(2, "b");
        let input = sample_image(&source, 5);
        let opts = quick_opts(4);
        let a = translate_multimodal(&input, &source, &target, 3, 11, &opts).unwrap();
        let b = translate_multimodal(&input, &source, &target, 3, 11, &opts).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!(x.bit_eq(y));
        }
        let c = translate_multimodal(&input, &source, &target, 3, 12, &opts).unwrap();
        assert!(!a[0].bit_eq(&c[0]));
    }

    #[test]
    fn reference_split_zero_reconstructs_reference() {
        let source = tiny_model(1, "a");
        let target = tiny_model(2, "b");
        let input = sample_image(&source, 5);
        let reference = sample_image(&target, 6);
        let mut opts = quick_opts(5);
        opts.split_index = Some(0);
        let out = translate_reference(&input, &reference, &source, &target, &opts).unwrap();
        // k = 0 ignores the content code: the output is the target-side
        // reconstruction of the reference.
        let ref_inv = invert_image(&reference, &target, &opts).unwrap();
        let recon = target
            .synthesize(
                &target.content_plan(&ref_inv.w).unwrap(),
                opts.inversion_cfg.noise_seed,
            )
            .unwrap();
        assert!(out.bit_eq(&recon));
    }

    #[test]
    fn registry_round_trip_and_multidomain_lineage() {
        let dir = std::env::temp_dir().join("styleswap-registry-test");
        std::fs::remove_dir_all(&dir).ok();
        std::fs::create_dir_all(&dir).unwrap();

        let base = tiny_model(1, "base");
        // two children of one base: lineage should connect them
        let mut b = base.clone();
        b.meta_mut().parent_digest = Some(checkpoint::model_digest(&base));
        b.meta_mut().domain = "b".into();
        let mut c = base.clone();
        c.meta_mut().parent_digest = Some(checkpoint::model_digest(&base));
        c.meta_mut().domain = "c".into();

        let pb = dir.join("b.ckpt");
        let pc = dir.join("c.ckpt");
        checkpoint::save_model(&pb, &b).unwrap();
        checkpoint::save_model(&pc, &c).unwrap();

        let mut reg = ModelRegistry::default();
        reg.add("b", pb);
        reg.add("c", pc);
        let reg_path = dir.join("registry.json");
        reg.save(&reg_path).unwrap();
        let reg = ModelRegistry::load(&reg_path).unwrap();
        assert_eq!(reg.len(), 2);

        let input = sample_image(&b, 3);
        let out = multidomain_translate(&input, &reg, "b", "c", &quick_opts(4)).unwrap();
        assert!(out.lineage_ok);
        assert!(matches!(
            multidomain_translate(&input, &reg, "b", "nope", &quick_opts(1)),
            Err(Error::UnknownTag(_))
        ));

        // an unrelated model breaks lineage but still translates
        let stranger = tiny_model(9, "x");
        let px = dir.join("x.ckpt");
        checkpoint::save_model(&px, &stranger).unwrap();
        let mut reg2 = ModelRegistry::load(&reg_path).unwrap();
        reg2.add("x", px);
        let out2 = multidomain_translate(&input, &reg2, "b", "x", &quick_opts(4)).unwrap();
        assert!(!out2.lineage_ok);

        // from == to degenerates to reconstruction under that model
        let same = multidomain_translate(&input, &reg, "b", "b", &quick_opts(4)).unwrap();
        let recon = translate(&input, &b, &b, &quick_opts(4)).unwrap();
        assert!(same.image.bit_eq(&recon));

        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn inversion_artifacts_persist() {
        let dir = std::env::temp_dir().join("styleswap-inv-persist");
        std::fs::remove_dir_all(&dir).ok();
        let model = tiny_model(4, "a");
        let input = sample_image(&model, 8);
        let opts = quick_opts(5);
        let inv = invert_image(&input, &model, &opts).unwrap();
        let digest = checkpoint::model_digest(&model);
        save_inversion(&dir, "probe", &inv, &digest).unwrap();

        assert!(dir.join("probe.png").exists());
        let trace = std::fs::read_to_string(dir.join("probe_trace.txt")).unwrap();
        assert_eq!(trace.lines().count(), inv.loss_trace.len());
        let w = load_latent_record(&dir.join("probe_latent.ckpt")).unwrap();
        assert_eq!(w, inv.w);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn default_split_rule() {
        // r_max = 8 <= 32: appearance gets the last block.
        let small = tiny_model(1, "a");
        assert_eq!(default_split_index(&small), small.num_style_slots() - 2);
        // with a >32 ladder the split lands on the first slot beyond 32
        let cfg = GeneratorConfig::for_resolution(64).unwrap();
        let big = GeneratorModel::new(cfg, "a", 1).unwrap();
        let slots = big.style_slots();
        let split = default_split_index(&big);
        assert!(slots[split].resolution > 32);
        assert!(slots[split - 1].resolution <= 32);
    }
}
