//! Invert a self-generated image with both inversion modes and compare
//! reconstruction quality.
//!
//! Run with: cargo run --release --example invert_image

use std::path::PathBuf;

use styleswap::checkpoint;
use styleswap::dataset::toy::{self, ToyDomain};
use styleswap::generator::GeneratorConfig;
use styleswap::imageio;
use styleswap::latent::{
    extract_affine, invert_constrained, project_w, semantic_basis, InversionConfig,
};
use styleswap::metrics::{perceptual_distance, ssim, PerceptualMetricHandle};
use styleswap::pipeline::save_inversion;
use styleswap::training::{train_base, TrainConfig};

fn main() -> anyhow::Result<()> {
    let out = PathBuf::from("target/examples/invert_image");
    std::fs::create_dir_all(&out)?;
    let resolution = 32;

    let data = toy::generate(ToyDomain::GlyphsAmber, 160, 11, resolution);
    println!("training a small model ...");
    let model = train_base(
        &data,
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

    // A target the model can reach exactly: one of its own samples.
    let cfg = InversionConfig {
        init_samples: 256,
        noise_seed: 42,
        perceptual: PerceptualMetricHandle::seeded(0),
        ..InversionConfig::default()
    };
    let z = model.sample_z(8, 1).pop().unwrap();
    let w_true = model.map_latent(&z)?;
    let target = model.synthesize(&model.content_plan(&w_true)?, cfg.noise_seed)?;
    imageio::write_png(&out.join("target.png"), &target)?;

    let steps = 250;
    println!("baseline projection ({steps} steps) ...");
    let baseline = project_w(&target, &model, steps, &cfg)?;
    println!(
        "  loss {:.5} -> {:.5}, perceptual {:.5}, ssim {:.4}",
        baseline.loss_trace[0],
        baseline.loss_trace.last().unwrap(),
        perceptual_distance(&cfg.perceptual, &target, &baseline.final_image)?,
        ssim(&target, &baseline.final_image)?,
    );
    save_inversion(
        &out,
        "baseline",
        &baseline,
        &checkpoint::model_digest(&model),
    )?;

    println!("constrained inversion ({steps} steps) ...");
    let basis = semantic_basis(&extract_affine(&model), None)?;
    let constrained = invert_constrained(&target, &model, &basis, steps, &cfg)?;
    println!(
        "  loss {:.5} -> {:.5}, perceptual {:.5}, ssim {:.4}",
        constrained.loss_trace[0],
        constrained.loss_trace.last().unwrap(),
        perceptual_distance(&cfg.perceptual, &target, &constrained.final_image)?,
        ssim(&target, &constrained.final_image)?,
    );
    save_inversion(
        &out,
        "constrained",
        &constrained,
        &checkpoint::model_digest(&model),
    )?;

    println!("reconstructions and latent records in {}", out.display());
    Ok(())
}
