// Temporary calibration harness: SSIM ordering on perturbed images and
// the multidomain translation classification rate.
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use styleswap::checkpoint;
use styleswap::dataset::toy::{self, ToyDomain};
use styleswap::generator::{GeneratorConfig, ImageTensor};
use styleswap::latent::{
    extract_affine, invert_constrained, project_w, semantic_basis, InversionConfig,
};
use styleswap::metrics::{ssim, PerceptualMetricHandle};
use styleswap::pipeline::{translate, InversionMode, TranslateOptions};
use styleswap::rng::{self, derive_seed};
use styleswap::tensor::Tensor;
use styleswap::training::{finetune_with_discriminator, train_base, FreezeSet, TrainConfig};

const RESOLUTION: usize = 32;
const BASE_ITERATIONS: usize = 1500;
const FT_ITERATIONS: usize = 600;
const FT_LR: f64 = 1e-3;

fn main() {
    let t0 = Instant::now();
    let cache = PathBuf::from(format!(
        "target/tmp/fx3-r{RESOLUTION}-b{BASE_ITERATIONS}-f{FT_ITERATIONS}"
    ));
    std::fs::create_dir_all(&cache).unwrap();

    let data_a = toy::generate(ToyDomain::GlyphsAmber, 160, 11, RESOLUTION);
    let data_b = toy::generate(ToyDomain::GlyphsCyan, 160, 22, RESOLUTION);
    let data_c = toy::generate(ToyDomain::GlyphsMagenta, 160, 33, RESOLUTION);
    let gen_cfg = GeneratorConfig::for_resolution(RESOLUTION).unwrap();

    let (base, disc) = {
        let gp = cache.join("base_a.ckpt");
        let dp = cache.join("base_a_disc.ckpt");
        if gp.exists() && dp.exists() {
            (
                checkpoint::load_model(&gp).unwrap(),
                checkpoint::load_discriminator(&dp).unwrap(),
            )
        } else {
            println!("[{:.0}s] training base ...", t0.elapsed().as_secs_f64());
            let out = train_base(
                &data_a, "glyphs-amber", gen_cfg.clone(),
                &TrainConfig { iterations: BASE_ITERATIONS, batch_size: 6, seed: 1, ..TrainConfig::default() },
            ).unwrap();
            checkpoint::save_model(&gp, &out.model).unwrap();
            checkpoint::save_discriminator(&dp, &out.discriminator).unwrap();
            (out.model, out.discriminator)
        }
    };
    let load_or = |name: &str, data: &styleswap::dataset::ImageDataset, seed: u64| {
        let p = cache.join(format!("{name}.ckpt"));
        if p.exists() {
            checkpoint::load_model(&p).unwrap()
        } else {
            println!("[{:.0}s] fine-tuning {name} ...", t0.elapsed().as_secs_f64());
            let m = finetune_with_discriminator(
                &base, &disc, data, &FreezeSet::mapping_network(),
                &TrainConfig { iterations: FT_ITERATIONS, batch_size: 6, seed, learning_rate: FT_LR, ..TrainConfig::default() },
            ).unwrap().model;
            checkpoint::save_model(&p, &m).unwrap();
            m
        }
    };
    let fcft_b = load_or("fcft_b", &data_b, 2);
    let fcft_c = load_or("fcft_c", &data_c, 3);
    println!("[{:.0}s] fixtures ready", t0.elapsed().as_secs_f64());

    let metric = PerceptualMetricHandle::seeded(77);
    let basis_full = semantic_basis(&extract_affine(&base), None).unwrap();
    let basis_40 = semantic_basis(&extract_affine(&base), Some(40)).unwrap();

    // ---- SSIM ordering on clean + perturbed suites ----
    let mk_cfg = |noise_seed: u64| InversionConfig {
        init_samples: 256,
        noise_seed,
        perceptual: metric.clone(),
        ..InversionConfig::default()
    };
    let suite: Vec<(ImageTensor, u64, bool)> = base
        .sample_z(900, 10)
        .iter()
        .enumerate()
        .flat_map(|(i, z)| {
            let seed = derive_seed(400, i as u64);
            let w = base.map_latent(z).unwrap();
            let clean = base.synthesize(&base.content_plan(&w).unwrap(), seed).unwrap();
            let noise = rng::normal_vec(derive_seed(7000, i as u64), clean.tensor().numel());
            let perturbed_data: Vec<f64> = clean
                .tensor()
                .data()
                .iter()
                .zip(&noise)
                .map(|(v, n)| v + 0.2 * n)
                .collect();
            let perturbed = ImageTensor::from_unclamped(
                Tensor::new(clean.tensor().shape().to_vec(), perturbed_data).unwrap(),
            )
            .unwrap();
            vec![(clean, seed, true), (perturbed, seed, false)]
        })
        .collect();

    for steps in [400usize, 700] {
        let rows: Vec<(bool, f64, f64, f64)> = suite
            .par_iter()
            .map(|(img, seed, clean)| {
                let cfg = mk_cfg(*seed);
                let b = project_w(img, &base, steps, &cfg).unwrap();
                let cf = invert_constrained(img, &base, &basis_full, steps, &cfg).unwrap();
                let c40 = invert_constrained(img, &base, &basis_40, steps, &cfg).unwrap();
                (
                    *clean,
                    ssim(&b.final_image, img).unwrap(),
                    ssim(&cf.final_image, img).unwrap(),
                    ssim(&c40.final_image, img).unwrap(),
                )
            })
            .collect();
        let agg = |keep_clean: Option<bool>| {
            let sel: Vec<_> = rows
                .iter()
                .filter(|r| keep_clean.is_none_or(|k| r.0 == k))
                .collect();
            let n = sel.len() as f64;
            (
                sel.iter().map(|r| r.1).sum::<f64>() / n,
                sel.iter().map(|r| r.2).sum::<f64>() / n,
                sel.iter().map(|r| r.3).sum::<f64>() / n,
            )
        };
        let (b_all, cf_all, c40_all) = agg(None);
        let (b_c, cf_c, c40_c) = agg(Some(true));
        let (b_p, cf_p, c40_p) = agg(Some(false));
        println!(
            "steps={steps}: ssim all  base {b_all:.4} consF {cf_all:.4} cons40 {c40_all:.4}"
        );
        println!("            clean base {b_c:.4} consF {cf_c:.4} cons40 {c40_c:.4}");
        println!("            pert  base {b_p:.4} consF {cf_p:.4} cons40 {c40_p:.4} [{:.0}s]", t0.elapsed().as_secs_f64());
    }

    // ---- criterion 8: classification of translated outputs ----
    // simple r/g/b-based check stands in for the test classifier here
    let classify = |img: &ImageTensor| -> &'static str {
        let t = img.tensor();
        let hw = RESOLUTION * RESOLUTION;
        let r: f64 = t.data()[0..hw].iter().sum::<f64>() / hw as f64;
        let g: f64 = t.data()[hw..2 * hw].iter().sum::<f64>() / hw as f64;
        let b: f64 = t.data()[2 * hw..3 * hw].iter().sum::<f64>() / hw as f64;
        // crude nearest-palette call on the glyph tint
        let scores = [
            ("amber", r - b),             // amber: r high, b low
            ("cyan", (g + b) / 2.0 - r),  // cyan: g,b high, r low
            ("magenta", (r + b) / 2.0 - g), // magenta: r,b high, g low
        ];
        scores
            .iter()
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap()
            .0
    };
    for (mode, steps) in [
        (InversionMode::Baseline, 150usize),
        (InversionMode::Baseline, 300),
        (InversionMode::Constrained, 300),
    ] {
        let opts = TranslateOptions {
            steps,
            inversion: mode,
            inversion_cfg: mk_cfg(400),
            ..TranslateOptions::default()
        };
        let outs: Vec<ImageTensor> = (0..20)
            .into_par_iter()
            .map(|i| translate(&data_b.images[i], &fcft_b, &fcft_c, &opts).unwrap())
            .collect();
        let magenta = outs.iter().filter(|o| classify(o) == "magenta").count();
        let cyan = outs.iter().filter(|o| classify(o) == "cyan").count();
        println!(
            "translate B->C mode={mode:?} steps={steps}: {magenta}/20 magenta, {cyan}/20 cyan [{:.0}s]",
            t0.elapsed().as_secs_f64()
        );
    }
}
