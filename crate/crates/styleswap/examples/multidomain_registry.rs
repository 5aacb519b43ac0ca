//! Multi-domain translation: transform one base model into two target
//! domains, register all three, then translate between the two targets
//! directly — no training happens on that path.
//!
//! Run with: cargo run --release --example multidomain_registry

use std::path::PathBuf;

use styleswap::checkpoint;
use styleswap::dataset::toy::{self, ToyDomain};
use styleswap::generator::GeneratorConfig;
use styleswap::imageio;
use styleswap::latent::InversionConfig;
use styleswap::metrics::PerceptualMetricHandle;
use styleswap::pipeline::{multidomain_translate, ModelRegistry, TranslateOptions};
use styleswap::surgery::{transform, TransformationRecipe};
use styleswap::training::{optimizer_invocations, train_base, TrainConfig};

fn main() -> anyhow::Result<()> {
    let out = PathBuf::from("target/examples/multidomain_registry");
    std::fs::create_dir_all(&out)?;
    let resolution = 32;

    println!("training base and transforming into two target domains ...");
    let amber = toy::generate(ToyDomain::GlyphsAmber, 160, 11, resolution);
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

    let ft = |seed: u64| TrainConfig {
        iterations: 200,
        batch_size: 6,
        seed,
        ..TrainConfig::finetune_default()
    };
    let cyan_model = transform(
        &base,
        &toy::generate(ToyDomain::GlyphsCyan, 160, 22, resolution),
        &TransformationRecipe::freeze_fc(ft(2), 1),
        None,
    )?;
    let magenta_model = transform(
        &base,
        &toy::generate(ToyDomain::GlyphsMagenta, 160, 33, resolution),
        &TransformationRecipe::freeze_fc(ft(3), 1),
        None,
    )?;

    let mut registry = ModelRegistry::default();
    for (tag, model) in [
        (ToyDomain::GlyphsAmber.tag(), &base),
        (ToyDomain::GlyphsCyan.tag(), &cyan_model),
        (ToyDomain::GlyphsMagenta.tag(), &magenta_model),
    ] {
        let path = out.join(format!("{tag}.ckpt"));
        checkpoint::save_model(&path, model)?;
        registry.add(tag, path);
    }
    registry.save(&out.join("registry.json"))?;

    // An input in the cyan domain (a sample of the cyan model).
    let opts = TranslateOptions {
        steps: 200,
        inversion_cfg: InversionConfig {
            init_samples: 256,
            perceptual: PerceptualMetricHandle::seeded(0),
            ..InversionConfig::default()
        },
        ..TranslateOptions::default()
    };
    let z = cyan_model.sample_z(8, 1).pop().unwrap();
    let w = cyan_model.map_latent(&z)?;
    let input =
        cyan_model.synthesize(&cyan_model.content_plan(&w)?, opts.inversion_cfg.noise_seed)?;
    imageio::write_png(&out.join("input_cyan.png"), &input)?;

    println!("translating cyan -> magenta through the registry ...");
    let before = optimizer_invocations();
    let outcome = multidomain_translate(
        &input,
        &registry,
        ToyDomain::GlyphsCyan.tag(),
        ToyDomain::GlyphsMagenta.tag(),
        &opts,
    )?;
    let after = optimizer_invocations();
    imageio::write_png(&out.join("output_magenta.png"), &outcome.image)?;

    println!("  lineage verified: {}", outcome.lineage_ok);
    println!(
        "  model parameter updates during translation: {}",
        after - before
    );
    println!("artifacts in {}", out.display());
    Ok(())
}
