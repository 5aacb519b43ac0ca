//! Extract the semantic basis of a generator (eigenvectors of the stacked
//! style affines) and walk an embedded code along the leading directions.
//!
//! Run with: cargo run --release --example semantic_directions

use std::path::PathBuf;

use styleswap::dataset::toy::{self, ToyDomain};
use styleswap::generator::GeneratorConfig;
use styleswap::imageio;
use styleswap::latent::{edit_latent, extract_affine, semantic_basis};
use styleswap::training::{train_base, TrainConfig};

fn main() -> anyhow::Result<()> {
    let out = PathBuf::from("target/examples/semantic_directions");
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

    let stack = extract_affine(&model);
    println!(
        "stacked style affines: {} rows x {} columns",
        stack.rows, stack.d_w
    );
    let basis = semantic_basis(&stack, None)?;
    println!("leading eigenvalues:");
    for (i, l) in basis.eigenvalues.iter().take(6).enumerate() {
        println!("  lambda[{i}] = {l:.5}");
    }

    // Walk the top two directions around a sampled code.
    let z = model.sample_z(4, 1).pop().unwrap();
    let w = model.map_latent(&z)?;
    for dir in 0..2 {
        for (step, alpha) in [-6.0, -3.0, 0.0, 3.0, 6.0].iter().enumerate() {
            let moved = edit_latent(&w, &basis, dir, *alpha)?;
            let img = model.synthesize(&model.content_plan(&moved)?, 5)?;
            imageio::write_png(&out.join(format!("dir{dir}_step{step}.png")), &img)?;
        }
    }
    println!("direction sweeps written to {}", out.display());
    Ok(())
}
