//! Image-to-image translation in three flavors: single output, multiple
//! styles from seeded appearance codes, and appearance taken from a
//! reference image.
//!
//! Run with: cargo run --release --example translate_multimodal

use std::path::PathBuf;

use styleswap::dataset::toy::{self, ToyDomain};
use styleswap::generator::GeneratorConfig;
use styleswap::imageio;
use styleswap::latent::InversionConfig;
use styleswap::metrics::PerceptualMetricHandle;
use styleswap::pipeline::{translate, translate_multimodal, translate_reference, TranslateOptions};
use styleswap::surgery::{transform, TransformationRecipe};
use styleswap::training::{train_base, TrainConfig};

fn main() -> anyhow::Result<()> {
    let out = PathBuf::from("target/examples/translate_multimodal");
    std::fs::create_dir_all(&out)?;
    let resolution = 32;

    let amber = toy::generate(ToyDomain::GlyphsAmber, 160, 11, resolution);
    let cyan = toy::generate(ToyDomain::GlyphsCyan, 160, 22, resolution);

    println!("training base + transforming to the target domain ...");
    let base = train_base(
        &amber,
        ToyDomain::GlyphsAmber.tag(),
        GeneratorConfig::for_resolution(resolution)?,
        &TrainConfig {
            iterations: 300,
            batch_size: 6,
            seed: 1,
            ..TrainConfig::default()
        },
    )?
    .model;
    let target = transform(
        &base,
        &cyan,
        &TransformationRecipe::freeze_fc(
            TrainConfig {
                iterations: 200,
                batch_size: 6,
                seed: 2,
                ..TrainConfig::finetune_default()
            },
            1,
        ),
        None,
    )?;

    // Input: an image the source model understands (one of its samples).
    let opts = TranslateOptions {
        steps: 200,
        inversion_cfg: InversionConfig {
            init_samples: 256,
            perceptual: PerceptualMetricHandle::seeded(0),
            ..InversionConfig::default()
        },
        ..TranslateOptions::default()
    };
    let z = base.sample_z(8, 1).pop().unwrap();
    let w = base.map_latent(&z)?;
    let input = base.synthesize(&base.content_plan(&w)?, opts.inversion_cfg.noise_seed)?;
    imageio::write_png(&out.join("input.png"), &input)?;

    println!("single-modal translation ...");
    let single = translate(&input, &base, &target, &opts)?;
    imageio::write_png(&out.join("single.png"), &single)?;

    println!("multi-modal translation (4 styles) ...");
    let styles = translate_multimodal(&input, &base, &target, 4, 99, &opts)?;
    for (i, img) in styles.iter().enumerate() {
        imageio::write_png(&out.join(format!("style_{i}.png")), img)?;
    }

    println!("reference-guided translation ...");
    let ref_z = target.sample_z(55, 1).pop().unwrap();
    let ref_w = target.map_latent(&ref_z)?;
    let reference =
        target.synthesize(&target.content_plan(&ref_w)?, opts.inversion_cfg.noise_seed)?;
    imageio::write_png(&out.join("reference.png"), &reference)?;
    let guided = translate_reference(&input, &reference, &base, &target, &opts)?;
    imageio::write_png(&out.join("guided.png"), &guided)?;

    println!("all outputs in {}", out.display());
    Ok(())
}
