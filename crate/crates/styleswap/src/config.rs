//! Line-oriented `key=value` configuration for the CLI. Flags override
//! file values; `show-config` prints every default.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

macro_rules! config_fields {
    ($(($field:ident, $ty:ty, $default:expr, $help:expr)),+ $(,)?) => {
        /// Tool-level defaults, overridable per run.
        #[derive(Debug, Clone, PartialEq)]
        pub struct PipelineConfig {
            $(pub $field: $ty,)+
        }

        impl Default for PipelineConfig {
            fn default() -> Self {
                Self { $($field: $default,)+ }
            }
        }

        impl PipelineConfig {
            fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $(stringify!($field) => {
                        self.$field = value.parse::<$ty>().map_err(|_| {
                            Error::InvalidArgument(format!(
                                "bad value '{value}' for {key}"
                            ))
                        })?;
                    })+
                    _ => {
                        return Err(Error::InvalidArgument(format!(
                            "unknown config key '{key}'"
                        )))
                    }
                }
                Ok(())
            }
        }

        impl fmt::Display for PipelineConfig {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                $(writeln!(f, "{}={}\t# {}", stringify!($field), self.$field, $help)?;)+
                Ok(())
            }
        }
    };
}

config_fields![
    (d_z, usize, 64, "latent dimension"),
    (d_w, usize, 64, "embedded dimension"),
    (mapping_layers, usize, 3, "mapping network depth"),
    (
        resolution,
        usize,
        64,
        "output resolution (power-of-two multiple of 4)"
    ),
    (img_channels, usize, 3, "image channels, 1 or 3"),
    (iterations, usize, 2000, "base training iterations"),
    (finetune_iterations, usize, 500, "fine-tune iterations"),
    (batch_size, usize, 8, "training batch size"),
    (learning_rate, f64, 2e-3, "base training learning rate"),
    (finetune_lr, f64, 2e-4, "fine-tune learning rate"),
    (
        d_lr_scale,
        f64,
        0.25,
        "discriminator lr as a fraction of learning_rate"
    ),
    (
        diversity_weight,
        f64,
        0.02,
        "mode-seeking diversity weight in the generator loss"
    ),
    (seed, u64, 0, "master seed"),
    (log_every, usize, 50, "steps between log lines"),
    (
        distance_samples,
        usize,
        256,
        "Monte-Carlo samples for model distance"
    ),
    (
        metric_seed,
        u64,
        0,
        "seed of the fixed perceptual feature stack"
    ),
    (
        inversion_steps,
        usize,
        1000,
        "optimization steps per inversion"
    ),
    (inversion_lr, f64, 0.05, "inversion learning rate"),
    (
        init_samples,
        usize,
        1000,
        "samples for the mean embedded-code init"
    ),
    (
        noise_seed,
        u64,
        0,
        "noise-field seed for synthesis and inversion"
    ),
];

impl PipelineConfig {
    /// Parse a `key=value` file over the defaults. Blank lines and `#`
    /// comments are skipped.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        let text = std::fs::read_to_string(path)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("line {}: expected key=value", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_overrides_defaults() {
        let dir = std::env::temp_dir().join("styleswap-config-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.cfg");
        std::fs::write(
            &path,
            "resolution=32\n# comment\nseed = 9\nlearning_rate=0.001\n",
        )
        .unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(cfg.resolution, 32);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.learning_rate, 1e-3);
        assert_eq!(cfg.d_z, 64); // untouched default
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn unknown_key_is_an_error() {
        let dir = std::env::temp_dir().join("styleswap-config-bad");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.cfg");
        std::fs::write(&path, "nope=1\n").unwrap();
        assert!(PipelineConfig::load(&path).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn display_lists_every_key() {
        let text = PipelineConfig::default().to_string();
        for key in ["d_z", "resolution", "inversion_steps", "noise_seed"] {
            assert!(text.contains(key));
        }
    }
}
