//! Command-line front end. Every subcommand is a thin wrapper over the
//! library; all real behavior lives there.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use styleswap::checkpoint;
use styleswap::config::PipelineConfig;
use styleswap::dataset::{self, toy};
use styleswap::generator::{GeneratorConfig, ImageTensor};
use styleswap::imageio;
use styleswap::latent::{extract_affine, semantic_basis, InversionConfig};
use styleswap::metrics::PerceptualMetricHandle;
use styleswap::pipeline::{self, InversionMode, ModelRegistry, TranslateOptions};
use styleswap::surgery::{self, SwapDepth, TransformationRecipe};
use styleswap::training::{self, FreezeSet, TrainConfig};

#[derive(Parser)]
#[command(
    name = "styleswap",
    version,
    about = "Unpaired image-to-image translation via generator surgery"
)]
struct Cli {
    /// key=value config file; command-line flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InvModeArg {
    Baseline,
    Constrained,
}

impl From<InvModeArg> for InversionMode {
    fn from(m: InvModeArg) -> Self {
        match m {
            InvModeArg::Baseline => Self::Baseline,
            InvModeArg::Constrained => Self::Constrained,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TranslateModeArg {
    Single,
    Multimodal,
    Reference,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a base generator on a dataset directory.
    Train {
        /// Dataset directory with a manifest.txt
        data: PathBuf,
        /// Output checkpoint path
        out: PathBuf,
        #[arg(long)]
        domain: Option<String>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        resolution: Option<usize>,
        /// Append the loss trace to this CSV
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Fine-tune a base checkpoint on a target dataset.
    Finetune {
        base: PathBuf,
        data: PathBuf,
        out: PathBuf,
        /// Freeze the mapping (fully-connected) network
        #[arg(long)]
        freeze_fc: bool,
        /// Freeze parameters matching this name prefix (repeatable)
        #[arg(long)]
        freeze: Vec<String>,
        /// Also freeze the discriminator layers nearest the image
        #[arg(long)]
        freeze_d_low: bool,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Swap coarse blocks of a source checkpoint into a tuned one.
    Swap {
        source: PathBuf,
        tuned: PathBuf,
        out: PathBuf,
        /// Number of blocks to swap, counting from 8x8
        #[arg(long)]
        l: usize,
    },
    /// Full transformation: freeze-FC fine-tune, then layer swap.
    Transform {
        base: PathBuf,
        data: PathBuf,
        out: PathBuf,
        #[arg(long)]
        l: usize,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Directory for the intermediate fine-tuned checkpoint
        #[arg(long)]
        work_dir: Option<PathBuf>,
    },
    /// Monte-Carlo model distance between two checkpoints.
    Distance {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the JSON report here as well as stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Semantic directions of a model (eigenanalysis of the style affines).
    Directions {
        model: PathBuf,
        #[arg(long)]
        top_k: Option<usize>,
        /// Write the full basis as JSON
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Invert an image into the embedded space of a model.
    Invert {
        image: PathBuf,
        model: PathBuf,
        /// Output directory for reconstruction, trace and latent record
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value = "baseline")]
        mode: InvModeArg,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        top_k: Option<usize>,
        /// Basename of the written artifacts
        #[arg(long, default_value = "inversion")]
        name: String,
    },
    /// Translate an image between two models.
    Translate {
        input: PathBuf,
        source: PathBuf,
        target: PathBuf,
        /// Output PNG path (multimodal mode appends _0, _1, ...)
        out: PathBuf,
        #[arg(long, value_enum, default_value = "single")]
        mode: TranslateModeArg,
        /// Style split index
        #[arg(long)]
        k: Option<usize>,
        /// Number of styles for multimodal mode
        #[arg(long, default_value_t = 5)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        style_seed: u64,
        /// Reference image for reference mode
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "baseline")]
        inversion: InvModeArg,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Manage the tag -> checkpoint registry for multi-domain translation.
    Registry {
        #[command(subcommand)]
        action: RegistryCmd,
    },
    /// Generate a procedural toy glyph dataset.
    MakeDataset {
        out: PathBuf,
        /// glyphs-amber, glyphs-cyan or glyphs-magenta
        #[arg(long)]
        domain: String,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Print the effective configuration.
    ShowConfig,
}

#[derive(Subcommand)]
enum RegistryCmd {
    /// Register a checkpoint under a domain tag.
    Add {
        file: PathBuf,
        tag: String,
        model: PathBuf,
    },
    /// List registered domains.
    List { file: PathBuf },
    /// Translate between two registered domains.
    Translate {
        file: PathBuf,
        input: PathBuf,
        from_tag: String,
        to_tag: String,
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
    },
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => PipelineConfig::default(),
    };
    run(cli.cmd, &cfg)
}

fn load_image(path: &Path, resolution: usize) -> anyhow::Result<ImageTensor> {
    let raw = imageio::read_png(path)?;
    let sized = imageio::center_crop_resize(&raw, resolution)?;
    Ok(ImageTensor::from_unclamped(sized)?)
}

fn metric(cfg: &PipelineConfig) -> PerceptualMetricHandle {
    PerceptualMetricHandle::seeded(cfg.metric_seed)
}

fn inversion_cfg(cfg: &PipelineConfig) -> InversionConfig {
    InversionConfig {
        learning_rate: cfg.inversion_lr,
        init_samples: cfg.init_samples,
        noise_seed: cfg.noise_seed,
        perceptual: metric(cfg),
        ..InversionConfig::default()
    }
}

fn translate_opts(
    cfg: &PipelineConfig,
    mode: InvModeArg,
    steps: Option<usize>,
    split: Option<usize>,
    top_k: Option<usize>,
) -> TranslateOptions {
    TranslateOptions {
        split_index: split,
        inversion: mode.into(),
        steps: steps.unwrap_or(cfg.inversion_steps),
        top_k,
        inversion_cfg: inversion_cfg(cfg),
    }
}

#[allow(clippy::too_many_lines)]
fn run(cmd: Cmd, cfg: &PipelineConfig) -> anyhow::Result<()> {
    match cmd {
        Cmd::Train {
            data,
            out,
            domain,
            iterations,
            seed,
            resolution,
            trace,
        } => {
            let resolution = resolution.unwrap_or(cfg.resolution);
            let dataset = dataset::load_dataset(&data, resolution)?;
            let domain = domain
                .or_else(|| dataset.labels.first().cloned().flatten())
                .unwrap_or_else(|| "unlabeled".to_string());
            let mut gen_cfg = GeneratorConfig::for_resolution(resolution)?;
            gen_cfg.d_z = cfg.d_z;
            gen_cfg.d_w = cfg.d_w;
            gen_cfg.mapping_layers = cfg.mapping_layers;
            gen_cfg.img_channels = cfg.img_channels;
            let train_cfg = TrainConfig {
                iterations: iterations.unwrap_or(cfg.iterations),
                batch_size: cfg.batch_size,
                learning_rate: cfg.learning_rate,
                d_lr_scale: cfg.d_lr_scale,
                seed: seed.unwrap_or(cfg.seed),
                log_every: cfg.log_every,
                freeze_d_low: false,
                diversity_weight: cfg.diversity_weight,
            };
            let outcome = training::train_base(&dataset, &domain, gen_cfg, &train_cfg)?;
            if let Some(path) = trace {
                training::write_loss_trace_csv(&path, &outcome.trace)?;
            }
            let digest = checkpoint::save_model(&out, &outcome.model)?;
            println!("trained '{domain}' -> {} ({digest})", out.display());
        }
        Cmd::Finetune {
            base,
            data,
            out,
            freeze_fc,
            freeze,
            freeze_d_low,
            iterations,
            seed,
            learning_rate,
            trace,
        } => {
            let base_model = checkpoint::load_model(&base)?;
            let dataset = dataset::load_dataset(&data, base_model.r_max())?;
            let mut patterns: Vec<String> = freeze;
            if freeze_fc {
                patterns.push("map.".to_string());
            }
            let freeze_set = if patterns.is_empty() {
                FreezeSet::none()
            } else {
                FreezeSet::new(patterns)
            };
            let train_cfg = TrainConfig {
                iterations: iterations.unwrap_or(cfg.finetune_iterations),
                batch_size: cfg.batch_size,
                learning_rate: learning_rate.unwrap_or(cfg.finetune_lr),
                d_lr_scale: cfg.d_lr_scale,
                seed: seed.unwrap_or(cfg.seed),
                log_every: cfg.log_every,
                freeze_d_low,
                diversity_weight: cfg.diversity_weight,
            };
            let outcome = training::finetune(&base_model, &dataset, &freeze_set, &train_cfg)?;
            if let Some(path) = trace {
                training::write_loss_trace_csv(&path, &outcome.trace)?;
            }
            let digest = checkpoint::save_model(&out, &outcome.model)?;
            println!(
                "fine-tuned '{}' -> {} ({digest})",
                outcome.model.domain(),
                out.display()
            );
        }
        Cmd::Swap {
            source,
            tuned,
            out,
            l,
        } => {
            let source_model = checkpoint::load_model(&source)?;
            let tuned_model = checkpoint::load_model(&tuned)?;
            let swapped = surgery::swap_layers(&source_model, &tuned_model, SwapDepth(l))?;
            let digest = checkpoint::save_model(&out, &swapped)?;
            println!("swapped l={l} -> {} ({digest})", out.display());
        }
        Cmd::Transform {
            base,
            data,
            out,
            l,
            iterations,
            seed,
            learning_rate,
            work_dir,
        } => {
            let base_model = checkpoint::load_model(&base)?;
            let dataset = dataset::load_dataset(&data, base_model.r_max())?;
            let recipe = TransformationRecipe::freeze_fc(
                TrainConfig {
                    iterations: iterations.unwrap_or(cfg.finetune_iterations),
                    batch_size: cfg.batch_size,
                    learning_rate: learning_rate.unwrap_or(cfg.finetune_lr),
                    d_lr_scale: cfg.d_lr_scale,
                    seed: seed.unwrap_or(cfg.seed),
                    log_every: cfg.log_every,
                    freeze_d_low: false,
                    diversity_weight: cfg.diversity_weight,
                },
                l,
            );
            let work =
                work_dir.unwrap_or_else(|| out.parent().map(Path::to_path_buf).unwrap_or_default());
            let transformed = surgery::transform(&base_model, &dataset, &recipe, Some(&work))?;
            let digest = checkpoint::save_model(&out, &transformed)?;
            println!("transformed (l={l}) -> {} ({digest})", out.display());
        }
        Cmd::Distance { a, b, n, seed, out } => {
            let ma = checkpoint::load_model(&a)?;
            let mb = checkpoint::load_model(&b)?;
            let report = surgery::model_distance(
                &ma,
                &mb,
                n.unwrap_or(cfg.distance_samples),
                seed.unwrap_or(cfg.seed),
                &metric(cfg),
            )?;
            let json = report.to_json();
            if let Some(path) = out {
                std::fs::write(&path, &json)?;
            }
            println!("{json}");
        }
        Cmd::Directions { model, top_k, out } => {
            let m = checkpoint::load_model(&model)?;
            let basis = semantic_basis(&extract_affine(&m), top_k)?;
            if let Some(path) = out {
                std::fs::write(&path, serde_json::to_string_pretty(&basis)?)?;
            }
            println!(
                "semantic basis of {} ({} directions)",
                model.display(),
                basis.num_directions()
            );
            for (i, l) in basis.eigenvalues.iter().enumerate().take(10) {
                println!("  lambda[{i}] = {l:.6}");
            }
            if basis.num_directions() > 10 {
                println!("  ... ({} more)", basis.num_directions() - 10);
            }
        }
        Cmd::Invert {
            image,
            model,
            out_dir,
            mode,
            steps,
            top_k,
            name,
        } => {
            let m = checkpoint::load_model(&model)?;
            let img = load_image(&image, m.r_max())?;
            let opts = translate_opts(cfg, mode, steps, None, top_k);
            let result = pipeline::invert_image(&img, &m, &opts)?;
            pipeline::save_inversion(&out_dir, &name, &result, &checkpoint::model_digest(&m))?;
            println!(
                "inverted {} in {} steps, final loss {:.6} -> {}",
                image.display(),
                result.steps,
                result.loss_trace.last().unwrap(),
                out_dir.display()
            );
        }
        Cmd::Translate {
            input,
            source,
            target,
            out,
            mode,
            k,
            n,
            style_seed,
            reference,
            inversion,
            steps,
        } => {
            let source_model = checkpoint::load_model(&source)?;
            let target_model = checkpoint::load_model(&target)?;
            let img = load_image(&input, source_model.r_max())?;
            let opts = translate_opts(cfg, inversion, steps, k, None);
            match mode {
                TranslateModeArg::Single => {
                    let result = pipeline::translate(&img, &source_model, &target_model, &opts)?;
                    imageio::write_png(&out, &result)?;
                    println!("translated -> {}", out.display());
                }
                TranslateModeArg::Multimodal => {
                    let results = pipeline::translate_multimodal(
                        &img,
                        &source_model,
                        &target_model,
                        n,
                        style_seed,
                        &opts,
                    )?;
                    let stem = out.with_extension("");
                    for (i, image) in results.iter().enumerate() {
                        let path = PathBuf::from(format!("{}_{i}.png", stem.display()));
                        imageio::write_png(&path, image)?;
                    }
                    println!(
                        "translated {} styles -> {}_*.png",
                        results.len(),
                        stem.display()
                    );
                }
                TranslateModeArg::Reference => {
                    let Some(ref_path) = reference else {
                        bail!("--reference is required for reference mode");
                    };
                    let ref_img = load_image(&ref_path, target_model.r_max())?;
                    let result = pipeline::translate_reference(
                        &img,
                        &ref_img,
                        &source_model,
                        &target_model,
                        &opts,
                    )?;
                    imageio::write_png(&out, &result)?;
                    println!("reference-translated -> {}", out.display());
                }
            }
        }
        Cmd::Registry { action } => match action {
            RegistryCmd::Add { file, tag, model } => {
                let m = checkpoint::load_model(&model)?;
                let mut reg = ModelRegistry::load(&file)?;
                reg.add(&tag, model.clone());
                reg.save(&file)?;
                println!("registered '{tag}' ({}) in {}", m.domain(), file.display());
            }
            RegistryCmd::List { file } => {
                let reg = ModelRegistry::load(&file)?;
                if reg.is_empty() {
                    println!("registry {} is empty", file.display());
                }
                for (tag, path) in reg.tags() {
                    println!("{tag}\t{}", path.display());
                }
            }
            RegistryCmd::Translate {
                file,
                input,
                from_tag,
                to_tag,
                out,
                steps,
            } => {
                let reg = ModelRegistry::load(&file)?;
                let source = reg.resolve(&from_tag)?;
                let img = load_image(&input, source.r_max())?;
                let opts = translate_opts(cfg, InvModeArg::Baseline, steps, None, None);
                let outcome =
                    pipeline::multidomain_translate(&img, &reg, &from_tag, &to_tag, &opts)?;
                if !outcome.lineage_ok {
                    eprintln!("warning: '{from_tag}' and '{to_tag}' share no recorded ancestor");
                }
                imageio::write_png(&out, &outcome.image)?;
                println!("{from_tag} -> {to_tag}: {}", out.display());
            }
        },
        Cmd::MakeDataset {
            out,
            domain,
            n,
            seed,
            resolution,
        } => {
            let Some(dom) = toy::ToyDomain::from_tag(&domain) else {
                bail!(
                    "unknown toy domain '{domain}' (expected one of: {})",
                    toy::ToyDomain::all().map(|d| d.tag()).join(", ")
                );
            };
            let data = toy::generate(
                dom,
                n,
                seed.unwrap_or(cfg.seed),
                resolution.unwrap_or(cfg.resolution),
            );
            dataset::save_dataset(&out, &data)?;
            println!("wrote {n} {domain} images to {}", out.display());
        }
        Cmd::ShowConfig => {
            print!("{cfg}");
        }
    }
    Ok(())
}
