use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ExtractorConfig, HeadConfig};
use crate::error::{Error, Result};
use crate::nn::{param_digest, params_from_bytes, params_to_bytes, Module};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    I,
    II,
    III,
    /// Upper-bound model trained on both modalities.
    UB,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::I => "I",
            Stage::II => "II",
            Stage::III => "III",
            Stage::UB => "UB",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModuleId {
    A,
    B,
    C,
    #[serde(rename = "projection")]
    Projection,
    #[serde(rename = "head")]
    Head,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModuleArch {
    Extractor(ExtractorConfig),
    Head(HeadConfig),
    Projection { channels: usize, kernel: usize },
}

impl ModuleArch {
    /// SHA-256 of the canonical JSON encoding.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("architecture serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Metadata stored next to each parameter blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleSidecar {
    pub stage: Stage,
    pub module_id: ModuleId,
    pub name: String,
    pub config_hash: String,
    pub parameter_digest: String,
    pub dtype: String,
    pub architecture: ModuleArch,
}

impl ModuleSidecar {
    pub fn read(dir: &Path, name: &str) -> Result<Self> {
        let path = dir.join(format!("{name}.json"));
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Writes `<dir>/<name>.bin` (little-endian parameters) and
/// `<dir>/<name>.json`.
pub fn save_module<T: Scalar>(
    dir: &Path,
    name: &str,
    stage: Stage,
    module_id: ModuleId,
    architecture: ModuleArch,
    module: &dyn Module<T>,
) -> Result<ModuleSidecar> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let sidecar = ModuleSidecar {
        stage,
        module_id,
        name: name.to_string(),
        config_hash: architecture.config_hash(),
        parameter_digest: param_digest(module),
        dtype: T::DTYPE.to_string(),
        architecture,
    };
    let bin = dir.join(format!("{name}.bin"));
    fs::write(&bin, params_to_bytes(module)).map_err(|e| Error::io(&bin, e))?;
    let json = dir.join(format!("{name}.json"));
    let mut text = serde_json::to_string_pretty(&sidecar)?;
    text.push('\n');
    fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
    Ok(sidecar)
}

/// Loads parameters into `module`, whose architecture must match
/// `expected`. The stored digest is recomputed and compared.
pub fn load_module<T: Scalar>(
    dir: &Path,
    name: &str,
    expected: &ModuleArch,
    module: &mut dyn Module<T>,
) -> Result<ModuleSidecar> {
    let sidecar = ModuleSidecar::read(dir, name)?;
    if sidecar.dtype != T::DTYPE {
        return Err(Error::Input(format!(
            "checkpoint {name} stores {} parameters, expected {}",
            sidecar.dtype,
            T::DTYPE
        )));
    }
    if sidecar.config_hash != expected.config_hash() || &sidecar.architecture != expected {
        return Err(Error::Input(format!("checkpoint {name} has a different architecture")));
    }
    let bin = dir.join(format!("{name}.bin"));
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    params_from_bytes(module, &bytes)?;
    let digest = param_digest(module);
    if digest != sidecar.parameter_digest {
        return Err(Error::Contract(format!(
            "checkpoint {name}: parameter digest {digest} does not match recorded {}",
            sidecar.parameter_digest
        )));
    }
    Ok(sidecar)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{Extractor, Head};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn head_cfg() -> HeadConfig {
        HeadConfig {
            in_channels: 8,
            hidden: 4,
            num_classes: 2,
            anchor_size: 14.0,
            image_size: 64,
        }
    }

    #[test]
    fn round_trip_preserves_digest() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = ExtractorConfig {
            input_size: 32,
            in_channels: 1,
            channels: vec![4, 8],
            strides: vec![2, 2],
        };
        let ex = Extractor::<f32>::new(cfg.clone(), &mut rng).unwrap();
        let arch = ModuleArch::Extractor(cfg.clone());
        let saved = save_module(dir.path(), "A", Stage::I, ModuleId::A, arch.clone(), &ex).unwrap();
        let mut back = Extractor::<f32>::zeroed(cfg).unwrap();
        let loaded = load_module(dir.path(), "A", &arch, &mut back).unwrap();
        assert_eq!(saved, loaded);
        assert_eq!(param_digest(&back), param_digest(&ex));
    }

    #[test]
    fn corrupted_blob_is_a_contract_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let head = Head::<f64>::new(head_cfg(), &mut rng).unwrap();
        let arch = ModuleArch::Head(head_cfg());
        save_module(dir.path(), "head", Stage::I, ModuleId::Head, arch.clone(), &head).unwrap();
        let bin = dir.path().join("head.bin");
        let mut bytes = fs::read(&bin).unwrap();
        bytes[20] ^= 0xff;
        fs::write(&bin, bytes).unwrap();
        let mut back = Head::<f64>::zeroed(head_cfg()).unwrap();
        assert!(matches!(
            load_module(dir.path(), "head", &arch, &mut back),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn wrong_dtype_or_arch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let head = Head::<f64>::new(head_cfg(), &mut rng).unwrap();
        let arch = ModuleArch::Head(head_cfg());
        save_module(dir.path(), "h", Stage::III, ModuleId::Head, arch.clone(), &head).unwrap();
        let mut f32_head = Head::<f32>::zeroed(head_cfg()).unwrap();
        assert!(load_module(dir.path(), "h", &arch, &mut f32_head).is_err());
        let other = ModuleArch::Head(HeadConfig {
            hidden: 5,
            ..head_cfg()
        });
        let mut h5 = Head::<f64>::zeroed(HeadConfig {
            hidden: 5,
            ..head_cfg()
        })
        .unwrap();
        assert!(matches!(
            load_module(dir.path(), "h", &other, &mut h5),
            Err(Error::Input(_))
        ));
    }
}
