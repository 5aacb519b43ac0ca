//! The style-based generator: a mapping network from latent space to an
//! embedded space, and a synthesis network of per-resolution blocks whose
//! convolutions are modulated by per-layer styles.
//!
//! Every forward pass runs on a [`Tape`], whether or not gradients are
//! wanted. One code path means the images produced inside training,
//! inversion and plain evaluation are bit-identical for identical inputs,
//! which the surgery and pipeline contracts rely on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::rng::{self, derive_seed};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const LEAKY_SLOPE: f64 = 0.2;
const DEMOD_EPS: f64 = 1e-8;

/// A point in latent space, nominally standard normal.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode(pub Vec<f64>);

impl LatentCode {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// A point in the embedded space produced by the mapping network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedCode(pub Vec<f64>);

impl EmbeddedCode {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// A square image with channel-major layout and values in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    data: Tensor,
}

impl ImageTensor {
    /// Wrap a `[C, H, W]` tensor. Height and width must agree, channels
    /// must be 1 or 3, values must already sit in `[-1, 1]`.
    pub fn new(data: Tensor) -> Result<Self> {
        let [c, h, w] = *data.shape() else {
            return Err(Error::ShapeMismatch(format!(
                "image wants [C,H,W], got {:?}",
                data.shape()
            )));
        };
        if h != w {
            return Err(Error::ShapeMismatch(format!("non-square image {h}x{w}")));
        }
        if c != 1 && c != 3 {
            return Err(Error::ShapeMismatch(format!(
                "image channels {c} not in {{1,3}}"
            )));
        }
        if !data.is_finite() {
            return Err(Error::NonFinite("image pixels".into()));
        }
        if data
            .data()
            .iter()
            .any(|&v| !(-1.0 - 1e-9..=1.0 + 1e-9).contains(&v))
        {
            return Err(Error::InvalidArgument(
                "image pixels outside [-1, 1]".into(),
            ));
        }
        Ok(Self { data })
    }

    /// Wrap a tensor, clamping values into `[-1, 1]` first.
    pub fn from_unclamped(mut data: Tensor) -> Result<Self> {
        for v in data.data_mut() {
            *v = v.clamp(-1.0, 1.0);
        }
        Self::new(data)
    }

    pub fn resolution(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.data.bit_eq(&other.data)
    }
}

/// Structural description of a generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub d_z: usize,
    pub d_w: usize,
    pub mapping_layers: usize,
    /// Output resolutions, strictly doubling from 4.
    pub resolutions: Vec<usize>,
    /// Feature channels per resolution, same length as `resolutions`.
    pub channels: Vec<usize>,
    pub img_channels: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            d_z: 64,
            d_w: 64,
            mapping_layers: 3,
            resolutions: vec![4, 8, 16, 32, 64],
            channels: vec![32, 32, 16, 8, 8],
            img_channels: 3,
        }
    }
}

impl GeneratorConfig {
    /// Default ladder truncated (or extended) to reach `r_max`.
    pub fn for_resolution(r_max: usize) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.resolutions.clear();
        cfg.channels.clear();
        let mut r = 4;
        let mut c = 32;
        while r <= r_max {
            cfg.resolutions.push(r);
            cfg.channels.push(c);
            if r >= 8 {
                c = (c / 2).max(8);
            }
            r *= 2;
        }
        cfg.validate()?;
        if *cfg.resolutions.last().unwrap() != r_max {
            return Err(Error::InvalidArgument(format!(
                "resolution {r_max} is not a power-of-two multiple of 4"
            )));
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_z == 0 || self.d_w == 0 || self.mapping_layers == 0 {
            return Err(Error::InvalidArgument("zero-sized mapping".into()));
        }
        if self.img_channels != 1 && self.img_channels != 3 {
            return Err(Error::InvalidArgument("img_channels must be 1 or 3".into()));
        }
        if self.resolutions.is_empty() || self.resolutions[0] != 4 {
            return Err(Error::InvalidArgument(
                "resolution ladder must start at 4".into(),
            ));
        }
        for pair in self.resolutions.windows(2) {
            if pair[1] != pair[0] * 2 {
                return Err(Error::InvalidArgument(format!(
                    "resolutions must strictly double: {:?}",
                    self.resolutions
                )));
            }
        }
        if self.channels.len() != self.resolutions.len() || self.channels.contains(&0) {
            return Err(Error::InvalidArgument("bad channel list".into()));
        }
        Ok(())
    }

    pub fn r_max(&self) -> usize {
        *self.resolutions.last().unwrap()
    }
}

/// Model metadata carried through checkpoints and lineage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub config: GeneratorConfig,
    pub domain: String,
    pub init_seed: u64,
    pub parent_digest: Option<String>,
    /// Second parent of a layer-swapped model (the source of the coarse blocks).
    pub swap_source_digest: Option<String>,
    pub swap_depth: Option<usize>,
    /// Serialized transformation recipe, when this model came out of one.
    pub recipe: Option<serde_json::Value>,
}

/// One style-consuming layer: which block, which conv, its resolution and
/// the style dimensionality it consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StyleSlot {
    pub block: usize,
    pub conv: usize,
    pub resolution: usize,
    pub in_channels: usize,
}

/// Per-layer assignment of embedded codes: content before the split,
/// appearance at and after it.
#[derive(Debug, Clone, PartialEq)]
pub struct StylePlan {
    per_layer_codes: Vec<EmbeddedCode>,
    split_index: usize,
}

impl StylePlan {
    pub fn codes(&self) -> &[EmbeddedCode] {
        &self.per_layer_codes
    }

    pub fn split_index(&self) -> usize {
        self.split_index
    }

    pub fn len(&self) -> usize {
        self.per_layer_codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_layer_codes.is_empty()
    }
}

/// Mapping network plus synthesis blocks; immutable once constructed.
#[derive(Debug, Clone)]
pub struct GeneratorModel {
    meta: ModelMetadata,
    params: ParamSet,
}

impl GeneratorModel {
    /// Fresh model with seeded initialization.
    pub fn new(cfg: GeneratorConfig, domain: &str, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut r = rng::rng_from_seed(derive_seed(seed, 0x6765_6e65));
        let mut params = ParamSet::new();

        // Mapping MLP: d_z -> d_w -> ... -> d_w, leaky nonlinearity throughout.
        for layer in 0..cfg.mapping_layers {
            let d_in = if layer == 0 { cfg.d_z } else { cfg.d_w };
            let scale = (1.0 / d_in as f64).sqrt();
            let mut w = vec![0.0; cfg.d_w * d_in];
            rng::fill_normal(&mut r, &mut w);
            for v in &mut w {
                *v *= scale;
            }
            params.insert(
                &format!("map.{layer}.weight"),
                Tensor::new(vec![cfg.d_w, d_in], w)?,
            );
            params.insert(&format!("map.{layer}.bias"), Tensor::zeros(&[cfg.d_w]));
        }

        // Synthesis blocks, two modulated convs each.
        for (bi, (&res, &ch)) in cfg.resolutions.iter().zip(&cfg.channels).enumerate() {
            let prev_ch = if bi == 0 { ch } else { cfg.channels[bi - 1] };
            if bi == 0 {
                let mut c = vec![0.0; ch * 16];
                rng::fill_normal(&mut r, &mut c);
                params.insert(
                    &format!("blocks.{res}.const"),
                    Tensor::new(vec![ch, 4, 4], c)?,
                );
            }
            for conv in 0..2 {
                let (cin, cout) = if conv == 0 { (prev_ch, ch) } else { (ch, ch) };
                let scale = (2.0 / (cin * 9) as f64).sqrt();
                let mut w = vec![0.0; cout * cin * 9];
                rng::fill_normal(&mut r, &mut w);
                for v in &mut w {
                    *v *= scale;
                }
                let p = format!("blocks.{res}.conv{conv}");
                params.insert(
                    &format!("{p}.weight"),
                    Tensor::new(vec![cout, cin, 3, 3], w)?,
                );

                let ascale = (1.0 / cfg.d_w as f64).sqrt();
                let mut aw = vec![0.0; cin * cfg.d_w];
                rng::fill_normal(&mut r, &mut aw);
                for v in &mut aw {
                    *v *= ascale;
                }
                params.insert(
                    &format!("{p}.affine.weight"),
                    Tensor::new(vec![cin, cfg.d_w], aw)?,
                );
                // Styles centered at 1 keep the demodulated conv well-scaled.
                params.insert(&format!("{p}.affine.bias"), Tensor::full(&[cin], 1.0));
                params.insert(&format!("{p}.noise_scale"), Tensor::zeros(&[1]));
                params.insert(&format!("{p}.bias"), Tensor::zeros(&[cout]));
            }
            // Per-block image contribution, accumulated skip-style. Small
            // init keeps early tanh outputs near gray instead of
            // saturated, which gives the generator usable gradients from
            // the first steps.
            let rgb_scale = 0.25 * (1.0 / ch as f64).sqrt();
            let mut w = vec![0.0; cfg.img_channels * ch];
            rng::fill_normal(&mut r, &mut w);
            for v in &mut w {
                *v *= rgb_scale;
            }
            params.insert(
                &format!("blocks.{res}.torgb.weight"),
                Tensor::new(vec![cfg.img_channels, ch, 1, 1], w)?,
            );
            params.insert(
                &format!("blocks.{res}.torgb.bias"),
                Tensor::zeros(&[cfg.img_channels]),
            );
        }

        Ok(Self {
            meta: ModelMetadata {
                config: cfg,
                domain: domain.to_string(),
                init_seed: seed,
                parent_digest: None,
                swap_source_digest: None,
                swap_depth: None,
                recipe: None,
            },
            params,
        })
    }

    pub fn from_parts(meta: ModelMetadata, params: ParamSet) -> Result<Self> {
        meta.config.validate()?;
        let probe = Self::new(meta.config.clone(), "", 0)?;
        if !probe.params.same_architecture(&params) {
            return Err(Error::ArchitectureMismatch(
                "parameter table does not match config".into(),
            ));
        }
        Ok(Self { meta, params })
    }

    pub fn meta(&self) -> &ModelMetadata {
        &self.meta
    }

    pub fn meta_mut(&mut self) -> &mut ModelMetadata {
        &mut self.meta
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.meta.config
    }

    pub fn d_z(&self) -> usize {
        self.meta.config.d_z
    }

    pub fn d_w(&self) -> usize {
        self.meta.config.d_w
    }

    pub fn r_max(&self) -> usize {
        self.meta.config.r_max()
    }

    pub fn domain(&self) -> &str {
        &self.meta.domain
    }

    /// Ordered style-consuming layers: two per block, coarse to fine.
    pub fn style_slots(&self) -> Vec<StyleSlot> {
        let cfg = &self.meta.config;
        let mut slots = Vec::with_capacity(cfg.resolutions.len() * 2);
        for (bi, (&res, &ch)) in cfg.resolutions.iter().zip(&cfg.channels).enumerate() {
            let prev_ch = if bi == 0 { ch } else { cfg.channels[bi - 1] };
            slots.push(StyleSlot {
                block: bi,
                conv: 0,
                resolution: res,
                in_channels: prev_ch,
            });
            slots.push(StyleSlot {
                block: bi,
                conv: 1,
                resolution: res,
                in_channels: ch,
            });
        }
        slots
    }

    pub fn num_style_slots(&self) -> usize {
        self.meta.config.resolutions.len() * 2
    }

    /// Same structure: identical config, identical parameter names/shapes.
    pub fn same_architecture(&self, other: &Self) -> bool {
        self.meta.config == other.meta.config && self.params.same_architecture(&other.params)
    }

    /// Seeded standard-normal latent codes; identical seed, identical list.
    pub fn sample_z(&self, seed: u64, n: usize) -> Vec<LatentCode> {
        sample_z(self.d_z(), seed, n)
    }

    /// `w = f(z)` through the mapping network.
    pub fn map_latent(&self, z: &LatentCode) -> Result<EmbeddedCode> {
        if z.dim() != self.d_z() {
            return Err(Error::DimensionMismatch {
                expected: self.d_z(),
                got: z.dim(),
            });
        }
        if !z.0.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("latent code".into()));
        }
        let mut tape = Tape::new();
        let staged = self.stage(&mut tape, &mut |_| false);
        let zv = tape.leaf(Tensor::from_vec(z.0.clone()), false);
        let wv = staged.map_forward(&mut tape, zv);
        Ok(EmbeddedCode(tape.value(wv).data().to_vec()))
    }

    /// Mean embedded code over `n` seeded samples.
    pub fn mean_embedded(&self, seed: u64, n: usize) -> EmbeddedCode {
        let mut acc = vec![0.0; self.d_w()];
        for z in self.sample_z(seed, n) {
            let w = self.map_latent(&z).expect("sampled z has the right dim");
            for (a, v) in acc.iter_mut().zip(&w.0) {
                *a += v;
            }
        }
        for a in &mut acc {
            *a /= n as f64;
        }
        EmbeddedCode(acc)
    }

    /// Build a per-layer style assignment. Layers before `split_index` get
    /// `content`, the rest get `appearance`. No appearance code forces the
    /// split to the layer count (a pure-content plan).
    pub fn style_plan(
        &self,
        content: &EmbeddedCode,
        appearance: Option<&EmbeddedCode>,
        split_index: usize,
    ) -> Result<StylePlan> {
        let count = self.num_style_slots();
        for code in std::iter::once(content).chain(appearance) {
            if code.dim() != self.d_w() {
                return Err(Error::DimensionMismatch {
                    expected: self.d_w(),
                    got: code.dim(),
                });
            }
        }
        let split = match appearance {
            None => count,
            Some(_) => {
                if split_index > count {
                    return Err(Error::InvalidArgument(format!(
                        "split index {split_index} out of range 0..={count}"
                    )));
                }
                split_index
            }
        };
        let mut codes = Vec::with_capacity(count);
        for i in 0..count {
            if i < split {
                codes.push(content.clone());
            } else {
                codes.push(appearance.unwrap_or(content).clone());
            }
        }
        Ok(StylePlan {
            per_layer_codes: codes,
            split_index: split,
        })
    }

    /// Pure-content plan: every layer carries `w`.
    pub fn content_plan(&self, w: &EmbeddedCode) -> Result<StylePlan> {
        self.style_plan(w, None, 0)
    }

    /// Deterministic synthesis of the plan at full resolution.
    pub fn synthesize(&self, plan: &StylePlan, noise_seed: u64) -> Result<ImageTensor> {
        Ok(self.synthesize_with_taps(plan, noise_seed)?.0)
    }

    /// Synthesis that also returns the post-activation feature maps after
    /// every style slot, in slot order.
    pub fn synthesize_with_taps(
        &self,
        plan: &StylePlan,
        noise_seed: u64,
    ) -> Result<(ImageTensor, Vec<Tensor>)> {
        self.check_plan(plan)?;
        let mut tape = Tape::new();
        let staged = self.stage(&mut tape, &mut |_| false);
        let code_vars: Vec<Var> = plan
            .per_layer_codes
            .iter()
            .map(|c| tape.leaf(Tensor::from_vec(c.0.clone()), false))
            .collect();
        let noise = self.noise_fields(noise_seed);
        let (img, taps) = staged.synth_forward(&mut tape, &code_vars, &noise, true);
        let out = tape.value(img).clone();
        if !out.is_finite() {
            return Err(Error::NonFinite("synthesized image".into()));
        }
        Ok((ImageTensor::new(out)?, taps))
    }

    /// Per-slot noise fields derived from one seed.
    pub fn noise_fields(&self, noise_seed: u64) -> Vec<Tensor> {
        self.style_slots()
            .iter()
            .enumerate()
            .map(|(i, slot)| {
                let data = rng::normal_vec(
                    derive_seed(noise_seed, i as u64),
                    slot.resolution * slot.resolution,
                );
                Tensor::new(vec![slot.resolution, slot.resolution], data).unwrap()
            })
            .collect()
    }

    pub fn check_plan(&self, plan: &StylePlan) -> Result<()> {
        if plan.len() != self.num_style_slots() {
            return Err(Error::ShapeMismatch(format!(
                "plan has {} layers, model has {}",
                plan.len(),
                self.num_style_slots()
            )));
        }
        for code in &plan.per_layer_codes {
            if code.dim() != self.d_w() {
                return Err(Error::DimensionMismatch {
                    expected: self.d_w(),
                    got: code.dim(),
                });
            }
        }
        Ok(())
    }

    /// Register every parameter on a tape. `needs_grad` decides, per
    /// parameter name, whether gradients flow into it.
    pub(crate) fn stage(
        &self,
        tape: &mut Tape,
        needs_grad: &mut dyn FnMut(&str) -> bool,
    ) -> StagedGenerator {
        let cfg = &self.meta.config;
        let mut named = Vec::with_capacity(self.params.len());
        let mut leaf = |tape: &mut Tape, name: String| {
            let var = tape.leaf(self.params.expect(&name).clone(), needs_grad(&name));
            named.push((name, var));
            var
        };
        let mut map_layers = Vec::with_capacity(cfg.mapping_layers);
        for layer in 0..cfg.mapping_layers {
            let w = leaf(tape, format!("map.{layer}.weight"));
            let b = leaf(tape, format!("map.{layer}.bias"));
            map_layers.push((w, b));
        }
        let mut blocks = Vec::with_capacity(cfg.resolutions.len());
        for (bi, &res) in cfg.resolutions.iter().enumerate() {
            let constant = (bi == 0).then(|| leaf(tape, format!("blocks.{res}.const")));
            let mut convs = Vec::with_capacity(2);
            for conv in 0..2 {
                let p = format!("blocks.{res}.conv{conv}");
                convs.push(StagedConv {
                    weight: leaf(tape, format!("{p}.weight")),
                    affine_w: leaf(tape, format!("{p}.affine.weight")),
                    affine_b: leaf(tape, format!("{p}.affine.bias")),
                    noise_scale: leaf(tape, format!("{p}.noise_scale")),
                    bias: leaf(tape, format!("{p}.bias")),
                });
            }
            let torgb = (
                leaf(tape, format!("blocks.{res}.torgb.weight")),
                leaf(tape, format!("blocks.{res}.torgb.bias")),
            );
            blocks.push(StagedBlock {
                constant,
                convs: [convs[0], convs[1]],
                torgb,
            });
        }
        StagedGenerator {
            map_layers,
            blocks,
            named,
        }
    }
}

/// Seeded standard-normal latent codes of dimension `d_z`.
pub fn sample_z(d_z: usize, seed: u64, n: usize) -> Vec<LatentCode> {
    let mut r = rng::rng_from_seed(seed);
    (0..n)
        .map(|_| {
            let mut v = vec![0.0; d_z];
            rng::fill_normal(&mut r, &mut v);
            LatentCode(v)
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct StagedConv {
    pub weight: Var,
    pub affine_w: Var,
    pub affine_b: Var,
    pub noise_scale: Var,
    pub bias: Var,
}

pub(crate) struct StagedBlock {
    pub constant: Option<Var>,
    pub convs: [StagedConv; 2],
    pub torgb: (Var, Var),
}

/// Tape handles for a generator's parameters.
pub(crate) struct StagedGenerator {
    pub map_layers: Vec<(Var, Var)>,
    pub blocks: Vec<StagedBlock>,
    /// Every staged parameter by name, in construction order.
    pub named: Vec<(String, Var)>,
}

impl StagedGenerator {
    pub fn map_forward(&self, tape: &mut Tape, z: Var) -> Var {
        let mut x = z;
        for &(w, b) in &self.map_layers {
            let y = tape.linear(w, Some(b), x);
            x = tape.leaky_relu(y, LEAKY_SLOPE);
        }
        x
    }

    /// One modulated convolution: style from `w_code`, weight demodulated,
    /// seeded noise, bias, leaky activation.
    fn conv_forward(
        &self,
        tape: &mut Tape,
        conv: &StagedConv,
        x: Var,
        w_code: Var,
        noise: &Tensor,
    ) -> Var {
        let style = tape.linear(conv.affine_w, Some(conv.affine_b), w_code);
        let modulated = tape.modulate_in(conv.weight, style);
        let sq = tape.sq_sum_per_out(modulated);
        let demod = tape.rsqrt_eps(sq, DEMOD_EPS);
        let weight = tape.modulate_out(modulated, demod);
        let y = tape.conv2d(x, weight);
        let y = tape.add_noise(y, conv.noise_scale, noise.clone());
        let y = tape.add_bias_channel(y, conv.bias);
        tape.leaky_relu(y, LEAKY_SLOPE)
    }

    /// Full synthesis. `per_slot_w` carries one embedded-code var per style
    /// slot; `noise` one field per slot. Returns the tanh image var and,
    /// when `want_taps`, the value of every post-activation feature map.
    pub fn synth_forward(
        &self,
        tape: &mut Tape,
        per_slot_w: &[Var],
        noise: &[Tensor],
        want_taps: bool,
    ) -> (Var, Vec<Tensor>) {
        assert_eq!(per_slot_w.len(), self.blocks.len() * 2, "plan length");
        assert_eq!(noise.len(), self.blocks.len() * 2, "noise fields");
        let mut taps = Vec::new();
        let mut x = self.blocks[0]
            .constant
            .expect("first block holds the constant");
        let mut rgb: Option<Var> = None;
        let mut slot = 0;
        for (bi, block) in self.blocks.iter().enumerate() {
            if bi > 0 {
                x = tape.upsample2x(x);
            }
            for conv in &block.convs {
                x = self.conv_forward(tape, conv, x, per_slot_w[slot], &noise[slot]);
                if want_taps {
                    taps.push(tape.value(x).clone());
                }
                slot += 1;
            }
            // Skip-style image accumulation: every block contributes at
            // its own scale.
            let contrib = tape.conv2d(x, block.torgb.0);
            let contrib = tape.add_bias_channel(contrib, block.torgb.1);
            rgb = Some(match rgb {
                None => contrib,
                Some(prev) => {
                    let up = tape.upsample2x(prev);
                    tape.add(up, contrib)
                }
            });
        }
        (tape.tanh(rgb.expect("at least one block")), taps)
    }
}
