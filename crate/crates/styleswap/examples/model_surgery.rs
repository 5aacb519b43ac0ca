//! Layer swapping and model distance: transform a base model toward a
//! target domain, then watch the Monte-Carlo distance to the base fall as
//! more coarse blocks are swapped back in.
//!
//! Run with: cargo run --release --example model_surgery

use std::path::PathBuf;

use styleswap::dataset::toy::{self, ToyDomain};
use styleswap::generator::GeneratorConfig;
use styleswap::imageio;
use styleswap::metrics::PerceptualMetricHandle;
use styleswap::surgery::{model_distance, swap_layers, transform, SwapDepth, TransformationRecipe};
use styleswap::training::{train_base, TrainConfig};

fn main() -> anyhow::Result<()> {
    let out = PathBuf::from("target/examples/model_surgery");
    std::fs::create_dir_all(&out)?;
    let resolution = 32;

    let amber = toy::generate(ToyDomain::GlyphsAmber, 160, 11, resolution);
    let cyan = toy::generate(ToyDomain::GlyphsCyan, 160, 22, resolution);

    println!("training base model ...");
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

    println!("transforming (freeze-FC fine-tune, no swap yet) ...");
    let recipe = TransformationRecipe::freeze_fc(
        TrainConfig {
            iterations: 200,
            batch_size: 6,
            seed: 2,
            ..TrainConfig::finetune_default()
        },
        0,
    );
    let tuned = transform(&base, &cyan, &recipe, Some(&out))?;

    let metric = PerceptualMetricHandle::seeded(77);
    println!("distance to base as swap depth grows:");
    for depth in 0..=3usize {
        let swapped = swap_layers(&base, &tuned, SwapDepth(depth))?;
        let report = model_distance(&base, &swapped, 64, 5, &metric)?;
        println!(
            "  l={depth}: d = {:.4} +- {:.4}  ({} samples)",
            report.estimate, report.std_error, report.n_samples
        );
        // a sample image from each swapped model
        let z = swapped.sample_z(3, 1).pop().unwrap();
        let w = swapped.map_latent(&z)?;
        let img = swapped.synthesize(&swapped.content_plan(&w)?, 9)?;
        imageio::write_png(&out.join(format!("swapped_l{depth}.png")), &img)?;
    }
    println!("sample images in {}", out.display());
    Ok(())
}
