//! Train a small generator on one glyph domain, then move it to a second
//! domain with freeze-FC fine-tuning. Writes checkpoints and loss traces
//! under target/examples/train_two_domains/.
//!
//! Run with: cargo run --release --example train_two_domains

use std::path::PathBuf;

use styleswap::checkpoint;
use styleswap::dataset::toy::{self, ToyDomain};
use styleswap::generator::GeneratorConfig;
use styleswap::training::{finetune, train_base, write_loss_trace_csv, FreezeSet, TrainConfig};

fn main() -> anyhow::Result<()> {
    let out = PathBuf::from("target/examples/train_two_domains");
    std::fs::create_dir_all(&out)?;
    let resolution = 32;

    let amber = toy::generate(ToyDomain::GlyphsAmber, 160, 11, resolution);
    let cyan = toy::generate(ToyDomain::GlyphsCyan, 160, 22, resolution);

    println!(
        "training base model on {} ...",
        ToyDomain::GlyphsAmber.tag()
    );
    let base_cfg = TrainConfig {
        iterations: 300, // enough to pick up the palette; raise for quality
        batch_size: 6,
        seed: 1,
        ..TrainConfig::default()
    };
    let gen_cfg = GeneratorConfig::for_resolution(resolution)?;
    let base = train_base(&amber, ToyDomain::GlyphsAmber.tag(), gen_cfg, &base_cfg)?;
    write_loss_trace_csv(&out.join("base_loss.csv"), &base.trace)?;
    let base_digest = checkpoint::save_model(&out.join("base.ckpt"), &base.model)?;
    println!("  saved base.ckpt ({base_digest})");

    println!(
        "fine-tuning toward {} with the mapping frozen ...",
        ToyDomain::GlyphsCyan.tag()
    );
    let ft_cfg = TrainConfig {
        iterations: 200,
        batch_size: 6,
        seed: 2,
        ..TrainConfig::finetune_default()
    };
    let tuned = finetune(&base.model, &cyan, &FreezeSet::mapping_network(), &ft_cfg)?;
    write_loss_trace_csv(&out.join("tuned_loss.csv"), &tuned.trace)?;
    checkpoint::save_model(&out.join("tuned.ckpt"), &tuned.model)?;

    // The freeze manifest means the two models share an embedded space.
    let z = base.model.sample_z(7, 1).pop().unwrap();
    let w_base = base.model.map_latent(&z)?;
    let w_tuned = tuned.model.map_latent(&z)?;
    println!(
        "mapping preserved exactly: {}",
        if w_base == w_tuned { "yes" } else { "no" }
    );
    println!(
        "lineage: tuned.parent = {:?}",
        tuned
            .model
            .meta()
            .parent_digest
            .as_deref()
            .map(|d| &d[..12])
    );
    println!("artifacts in {}", out.display());
    Ok(())
}
