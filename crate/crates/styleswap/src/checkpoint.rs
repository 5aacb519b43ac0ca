//! Binary checkpoint container: versioned header, JSON metadata block,
//! named tensor table, trailing SHA-256 content digest.
//!
//! The encoding is canonical — parameter order is construction order and
//! the metadata struct serializes with a fixed field order — so a model's
//! digest is stable and `save -> load -> save` is byte-identical. The
//! same container carries generator checkpoints and inversion latent
//! records, distinguished by the `kind` field.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::generator::{GeneratorModel, ModelMetadata};
use crate::params::ParamSet;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"SWAPCKPT";
const VERSION: u32 = 1;
const DTYPE_F64: u8 = 0;

pub const KIND_GENERATOR: &str = "generator";
pub const KIND_LATENT: &str = "latent-record";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MetaEnvelope {
    kind: String,
    model: Option<ModelMetadata>,
    extra: serde_json::Value,
}

/// A decoded container: metadata plus named tensors in file order.
#[derive(Debug, Clone)]
pub struct Container {
    pub kind: String,
    pub model_meta: Option<ModelMetadata>,
    pub extra: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl Container {
    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

fn encode_body(c: &Container) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let env = MetaEnvelope {
        kind: c.kind.clone(),
        model: c.model_meta.clone(),
        extra: c.extra.clone(),
    };
    let meta = serde_json::to_vec(&env)?;
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&(c.tensors.len() as u64).to_le_bytes());
    for (name, tensor) in &c.tensors {
        let nb = name.as_bytes();
        out.extend_from_slice(&(nb.len() as u64).to_le_bytes());
        out.extend_from_slice(nb);
        out.push(DTYPE_F64);
        out.push(tensor.shape().len() as u8);
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Hex SHA-256 of the canonical encoding.
pub fn container_digest(c: &Container) -> Result<String> {
    let body = encode_body(c)?;
    Ok(hex(&Sha256::digest(&body)))
}

pub fn save_container(path: &Path, c: &Container) -> Result<String> {
    let mut body = encode_body(c)?;
    let digest = Sha256::digest(&body);
    body.extend_from_slice(&digest);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, &body)?;
    Ok(hex(&digest))
}

pub fn load_container(path: &Path) -> Result<Container> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < MAGIC.len() + 4 + 32 {
        return Err(Error::CorruptCheckpoint("file too short".into()));
    }
    let (body, stored_digest) = bytes.split_at(bytes.len() - 32);
    let computed = Sha256::digest(body);
    if computed.as_slice() != stored_digest {
        return Err(Error::DigestMismatch {
            stored: hex(stored_digest),
            computed: hex(&computed),
        });
    }

    let mut cur = body;
    let mut magic = [0u8; 8];
    read_exact(&mut cur, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let version = read_u32(&mut cur)?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let meta_len = read_u64(&mut cur)? as usize;
    let mut meta = vec![0u8; meta_len];
    read_exact(&mut cur, &mut meta)?;
    let env: MetaEnvelope = serde_json::from_slice(&meta)?;

    let count = read_u64(&mut cur)? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u64(&mut cur)? as usize;
        let mut name = vec![0u8; name_len];
        read_exact(&mut cur, &mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::CorruptCheckpoint("non-utf8 tensor name".into()))?;
        let mut tag = [0u8; 2];
        read_exact(&mut cur, &mut tag)?;
        if tag[0] != DTYPE_F64 {
            return Err(Error::CorruptCheckpoint(format!(
                "unknown dtype {}",
                tag[0]
            )));
        }
        let ndim = tag[1] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut cur)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = vec![0.0f64; numel];
        for v in &mut data {
            let mut b = [0u8; 8];
            read_exact(&mut cur, &mut b)?;
            *v = f64::from_le_bytes(b);
        }
        tensors.push((name, Tensor::new(shape, data)?));
    }
    if !cur.is_empty() {
        return Err(Error::CorruptCheckpoint("trailing bytes".into()));
    }
    Ok(Container {
        kind: env.kind,
        model_meta: env.model,
        extra: env.extra,
        tensors,
    })
}

fn read_exact(cur: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    cur.read_exact(buf)
        .map_err(|_| Error::CorruptCheckpoint("unexpected end of file".into()))
}

fn read_u32(cur: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(cur, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(cur: &mut &[u8]) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(cur, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn model_container(model: &GeneratorModel) -> Container {
    Container {
        kind: KIND_GENERATOR.into(),
        model_meta: Some(model.meta().clone()),
        extra: serde_json::Value::Null,
        tensors: model
            .params()
            .iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect(),
    }
}

/// Canonical digest of a model's full state (metadata and parameters).
pub fn model_digest(model: &GeneratorModel) -> String {
    container_digest(&model_container(model)).expect("model metadata serializes")
}

pub fn save_model(path: &Path, model: &GeneratorModel) -> Result<String> {
    save_container(path, &model_container(model))
}

pub fn load_model(path: &Path) -> Result<GeneratorModel> {
    let c = load_container(path)?;
    if c.kind != KIND_GENERATOR {
        return Err(Error::CorruptCheckpoint(format!(
            "expected a generator checkpoint, found kind '{}'",
            c.kind
        )));
    }
    let meta = c
        .model_meta
        .clone()
        .ok_or_else(|| Error::CorruptCheckpoint("missing model metadata".into()))?;
    let mut params = ParamSet::new();
    for (name, tensor) in &c.tensors {
        params.insert(name, tensor.clone());
    }
    GeneratorModel::from_parts(meta, params)
}

pub const KIND_DISCRIMINATOR: &str = "discriminator";

/// Persist a discriminator; its generator-side config rides in `extra`.
pub fn save_discriminator(path: &Path, disc: &crate::training::Discriminator) -> Result<String> {
    save_container(
        path,
        &Container {
            kind: KIND_DISCRIMINATOR.into(),
            model_meta: None,
            extra: serde_json::to_value(disc.config())?,
            tensors: disc
                .params()
                .iter()
                .map(|(n, t)| (n.to_string(), t.clone()))
                .collect(),
        },
    )
}

pub fn load_discriminator(path: &Path) -> Result<crate::training::Discriminator> {
    let c = load_container(path)?;
    if c.kind != KIND_DISCRIMINATOR {
        return Err(Error::CorruptCheckpoint(format!(
            "expected a discriminator checkpoint, found kind '{}'",
            c.kind
        )));
    }
    let cfg: crate::generator::GeneratorConfig = serde_json::from_value(c.extra.clone())?;
    let mut params = ParamSet::new();
    for (name, tensor) in &c.tensors {
        params.insert(name, tensor.clone());
    }
    crate::training::Discriminator::from_parts(cfg, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::GeneratorConfig;

    fn test_model() -> GeneratorModel {
        let cfg = GeneratorConfig {
            d_z: 4,
            d_w: 4,
            mapping_layers: 2,
            resolutions: vec![4, 8],
            channels: vec![4, 4],
            img_channels: 3,
        };
        GeneratorModel::new(cfg, "unit", 17).unwrap()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = std::env::temp_dir().join("styleswap-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let (p1, p2) = (dir.join("a.ckpt"), dir.join("b.ckpt"));
        let model = test_model();
        save_model(&p1, &model).unwrap();
        let loaded = load_model(&p1).unwrap();
        save_model(&p2, &loaded).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert!(model.params().bit_eq(loaded.params()));
        assert_eq!(model.meta(), loaded.meta());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn digest_is_stable_and_sensitive() {
        let model = test_model();
        assert_eq!(model_digest(&model), model_digest(&model));
        let mut other = model.clone();
        let mut t = other.params().expect("map.0.bias").clone();
        t.data_mut()[0] = 1.0;
        other.params_mut().set("map.0.bias", t).unwrap();
        assert_ne!(model_digest(&model), model_digest(&other));
    }

    #[test]
    fn truncated_file_is_rejected_without_partial_model() {
        let dir = std::env::temp_dir().join("styleswap-ckpt-trunc");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.ckpt");
        save_model(&path, &test_model()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            load_model(&path),
            Err(Error::CorruptCheckpoint(_) | Error::DigestMismatch { .. })
        ));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn flipped_byte_fails_digest() {
        let dir = std::env::temp_dir().join("styleswap-ckpt-corrupt");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.ckpt");
        save_model(&path, &test_model()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_model(&path),
            Err(Error::DigestMismatch { .. })
        ));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn unknown_version_is_explicit() {
        let dir = std::env::temp_dir().join("styleswap-ckpt-version");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.ckpt");
        save_model(&path, &test_model()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8] = 99; // version field
                       // refresh trailing digest so only the version is wrong
        let body_len = bytes.len() - 32;
        let digest = Sha256::digest(&bytes[..body_len]);
        bytes[body_len..].copy_from_slice(&digest);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_model(&path),
            Err(Error::UnsupportedVersion(99))
        ));
        std::fs::remove_dir_all(&dir).ok();
    }
}
