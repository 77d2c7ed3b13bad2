//! Experiment configuration: one JSON document, every seed explicit.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use nalign::data::{Normalization, PolyKind};
use nalign::fed::FederatedConfig;
use nalign::lmc::Treatment;
use nalign::nn::{NetworkSpec, SgdConfig, TrainConfig};
use nalign::perm::AnnealSchedule;
use nalign::theory::TheoryConfig;
use nalign::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: Option<NetworkSpec>,
    pub data: Option<DataConfig>,
    pub train: Option<TrainSection>,
    pub mask: Option<MaskSection>,
    pub lmc: Option<LmcSection>,
    pub fed: Option<FederatedConfig>,
    pub theory: Option<TheorySection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Poly2 { n: usize, noise_std: f64, seed: u64 },
    Poly3 { n: usize, noise_std: f64, seed: u64 },
    Blobs {
        n_classes: usize,
        n_per_class: usize,
        /// Held-out samples per class, drawn around the same centers.
        test_per_class: usize,
        dim: usize,
        separation: f64,
        seed: u64,
    },
    Mnist {
        #[serde(default)]
        normalization: Normalization,
        /// Use only the first `train_limit` training rows.
        #[serde(default)]
        train_limit: Option<usize>,
    },
    FashionMnist {
        #[serde(default)]
        normalization: Normalization,
        #[serde(default)]
        train_limit: Option<usize>,
    },
    Cifar10 {
        #[serde(default)]
        normalization: Normalization,
        #[serde(default)]
        train_limit: Option<usize>,
    },
}

impl DataConfig {
    pub fn poly_kind(&self) -> Option<PolyKind> {
        match self {
            DataConfig::Poly2 { .. } => Some(PolyKind::Poly2),
            DataConfig::Poly3 { .. } => Some(PolyKind::Poly3),
            _ => None,
        }
    }

    /// Image sources run in single precision, synthetic ones in double.
    pub fn is_image(&self) -> bool {
        matches!(self, DataConfig::Mnist { .. } | DataConfig::FashionMnist { .. } | DataConfig::Cifar10 { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    Auto,
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub precision: Precision,
}

impl TrainSection {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            sgd: SgdConfig { lr: self.lr, momentum: self.momentum, weight_decay: self.weight_decay },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskTreatment {
    Vanilla,
    Tna,
    Prune,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskSection {
    pub treatment: MaskTreatment,
    #[serde(default)]
    pub rho: f64,
    pub seed: u64,
}

impl MaskSection {
    pub fn treatment(&self) -> Treatment {
        match self.treatment {
            MaskTreatment::Vanilla => Treatment::Vanilla,
            MaskTreatment::Tna => Treatment::Tna { rho: self.rho, mask_seed: self.seed },
            MaskTreatment::Prune => Treatment::Prune { rho: self.rho, prune_seed: self.seed },
        }
        .normalized()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    /// Test split for image data and blobs, training data for polynomials.
    #[default]
    Auto,
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmcSection {
    pub shuffle_seeds: [u64; 2],
    #[serde(default = "default_grid")]
    pub grid_size: usize,
    #[serde(default)]
    pub eval: EvalSplit,
    #[serde(default)]
    pub rebasin: Option<RebasinSection>,
}

fn default_grid() -> usize {
    21
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMethod {
    Wm,
    Sa,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RebasinSection {
    pub method: MatchMethod,
    pub seed: u64,
    #[serde(default = "default_sweeps")]
    pub max_sweeps: usize,
    #[serde(default)]
    pub sa_iters: usize,
    #[serde(default)]
    pub sa_schedule: AnnealSchedule,
}

fn default_sweeps() -> usize {
    100
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheorySection {
    #[serde(flatten)]
    pub params: TheoryConfig,
    pub trials: usize,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_value(v: Value) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_value(v).map_err(|e| Error::config(format!("invalid config: {e}")))?;
        Ok(cfg)
    }

    /// Reads, applies `--seed-override` and `--mask-ratio`, and validates the shape.
    pub fn load(path: &Path, seed_overrides: &[String], mask_ratio: Option<f64>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut v: Value = serde_json::from_str(&text).map_err(|e| Error::config(format!("config is not JSON: {e}")))?;
        for o in seed_overrides {
            apply_seed_override(&mut v, o)?;
        }
        let mut cfg = Self::from_value(v)?;
        if let Some(rho) = mask_ratio {
            if !(0.0..=1.0).contains(&rho) {
                return Err(Error::config(format!("--mask-ratio must lie in [0, 1], got {rho}")));
            }
            if let Some(m) = cfg.mask.as_mut() {
                m.rho = rho;
            }
            if let Some(f) = cfg.fed.as_mut() {
                f.rho = rho;
            }
        }
        Ok(cfg)
    }

    /// SHA-256 of the canonical serialization of the resolved configuration.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(canonical.as_bytes()))
    }

    pub fn section<'a, T>(opt: &'a Option<T>, name: &str, command: &str) -> Result<&'a T> {
        opt.as_ref().ok_or_else(|| Error::config(format!("`{command}` needs a `{name}` section")))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// `K=V` with a dotted path `K` (array indices allowed) naming an existing
/// integer seed field, e.g. `fed.seeds.training=3` or `lmc.shuffle_seeds.1=9`.
pub fn apply_seed_override(v: &mut Value, spec: &str) -> Result<()> {
    let (key, val) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(format!("seed override `{spec}` is not K=V")))?;
    let value: u64 = val
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("seed override `{spec}`: value is not a nonnegative integer")))?;
    if !key.split('.').any(|seg| seg.contains("seed")) {
        return Err(Error::config(format!("seed override `{key}` does not name a seed field")));
    }
    let mut cur = v;
    for seg in key.split('.') {
        cur = match cur {
            Value::Object(map) => map.get_mut(seg),
            Value::Array(items) => seg.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| Error::config(format!("seed override `{key}`: no such field in config")))?;
    }
    if !cur.is_u64() {
        return Err(Error::config(format!("seed override `{key}`: field is not an integer")));
    }
    *cur = Value::from(value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn base() -> Value {
        json!({
            "model": {"layer_widths": [1, 8, 1], "output_head": "linear", "seed": 1},
            "data": {"source": "poly2", "n": 20, "noise_std": 0.05, "seed": 0},
            "train": {"epochs": 2, "batch_size": 4, "lr": 0.05},
            "mask": {"treatment": "tna", "rho": 0.4, "seed": 3},
            "lmc": {"shuffle_seeds": [1, 2]}
        })
    }

    #[test]
    fn parses_and_hashes_stably() {
        let a = ExperimentConfig::from_value(base()).unwrap();
        let b = ExperimentConfig::from_value(base()).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        assert_eq!(a.lmc.as_ref().unwrap().grid_size, 21);
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut v = base();
        v["train"]["learning_rate"] = json!(0.1);
        assert!(ExperimentConfig::from_value(v).is_err());
        let mut v = base();
        v["extra"] = json!({});
        assert!(ExperimentConfig::from_value(v).is_err());
        let mut v = base();
        v["data"]["colour"] = json!(true);
        assert!(ExperimentConfig::from_value(v).is_err());
    }

    #[test]
    fn seeds_are_required() {
        let mut v = base();
        v["mask"].as_object_mut().unwrap().remove("seed");
        assert!(ExperimentConfig::from_value(v).is_err());
    }

    #[test]
    fn seed_overrides() {
        let mut v = base();
        apply_seed_override(&mut v, "model.seed=42").unwrap();
        apply_seed_override(&mut v, "lmc.shuffle_seeds.1=7").unwrap();
        assert_eq!(v["model"]["seed"], json!(42));
        assert_eq!(v["lmc"]["shuffle_seeds"], json!([1, 7]));
        assert!(apply_seed_override(&mut v, "train.epochs=3").is_err());
        assert!(apply_seed_override(&mut v, "model.seedx=3").is_err());
        assert!(apply_seed_override(&mut v, "model.seed=-1").is_err());
        assert!(apply_seed_override(&mut v, "model.seed").is_err());
    }

    #[test]
    fn theory_section_flattens() {
        let v = json!({"theory": {"h": 16, "d": 4, "trials": 50, "seed": 0}});
        let cfg = ExperimentConfig::from_value(v).unwrap();
        let t = cfg.theory.unwrap();
        assert_eq!((t.params.h, t.params.d, t.trials), (16, 4, 50));
        assert_eq!(t.params.delta, TheoryConfig::default().delta);
        let bad = json!({"theory": {"h": 16, "hh": 4, "trials": 50, "seed": 0}});
        assert!(ExperimentConfig::from_value(bad).is_err());
    }
}
