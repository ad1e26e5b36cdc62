//! Directory checkpoints: `manifest.json` plus little-endian f32 `weights.bin`.

use std::collections::BTreeMap;
use std::path::Path;

use gaitlab_numerics::{Module, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::NormStats;
use crate::model::{AnyModel, Arch, PatchTst, TctstConfig, TctstModel};
use crate::pretrain::{PretrainConfig, PretrainModel};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointKind {
    Tctst,
    PatchTst,
    Pretrain,
}

impl From<Arch> for CheckpointKind {
    fn from(a: Arch) -> Self {
        match a {
            Arch::Tctst => CheckpointKind::Tctst,
            Arch::PatchTst => CheckpointKind::PatchTst,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into `weights.bin`.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub kind: CheckpointKind,
    pub config: TctstConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrain: Option<PretrainConfig>,
    pub params: Vec<ParamEntry>,
    pub norm_stats: Option<NormStats>,
    pub seeds: BTreeMap<String, u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub config: TctstConfig,
    pub pretrain: Option<PretrainConfig>,
    pub norm_stats: Option<NormStats>,
    pub seeds: BTreeMap<String, u64>,
    /// Parameter values in model order.
    pub params: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn from_module(kind: CheckpointKind, config: TctstConfig, module: &impl Module<f32>) -> Self {
        Self {
            kind,
            config,
            pretrain: None,
            norm_stats: None,
            seeds: BTreeMap::new(),
            params: module.params().iter().map(|p| (p.name.clone(), p.value.clone())).collect(),
        }
    }

    pub fn from_model(model: &AnyModel<f32>) -> Self {
        use crate::model::PhaseModel;
        Self::from_module(model.arch().into(), model.config().clone(), model)
    }

    pub fn from_pretrain(model: &PretrainModel<f32>) -> Self {
        let mut c = Self::from_module(CheckpointKind::Pretrain, model.config.clone(), model);
        c.pretrain = Some(model.pretrain.clone());
        c
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Overwrites every parameter of `module`; names and shapes must match
    /// one to one.
    pub fn load_into(&self, module: &mut impl Module<f32>) -> Result<()> {
        let mut params = module.params_mut();
        if params.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model has {}",
                self.params.len(),
                params.len()
            )));
        }
        for (p, (name, value)) in params.iter_mut().zip(&self.params) {
            if &p.name != name || p.value.shape() != value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter mismatch: model {} {:?}, checkpoint {} {:?}",
                    p.name,
                    p.value.shape(),
                    name,
                    value.shape()
                )));
            }
            p.value = value.clone();
        }
        Ok(())
    }

    /// Rebuilds the phase model this checkpoint describes.
    pub fn to_model(&self) -> Result<AnyModel<f32>> {
        let mut m = match self.kind {
            CheckpointKind::Tctst => AnyModel::Tctst(TctstModel::new(self.config.clone(), 0)?),
            CheckpointKind::PatchTst => AnyModel::PatchTst(PatchTst::new(self.config.clone(), 0)?),
            CheckpointKind::Pretrain => {
                return Err(Error::Checkpoint("pre-training checkpoint is not a phase model".into()))
            }
        };
        self.load_into(&mut m)?;
        Ok(m)
    }

    pub fn to_pretrain_model(&self) -> Result<PretrainModel<f32>> {
        let pcfg = match (self.kind, &self.pretrain) {
            (CheckpointKind::Pretrain, Some(p)) => p.clone(),
            _ => return Err(Error::Checkpoint("not a pre-training checkpoint".into())),
        };
        let mut m = PretrainModel::new(self.config.clone(), pcfg, 0)?;
        self.load_into(&mut m)?;
        Ok(m)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut bytes = Vec::new();
        let mut entries = Vec::with_capacity(self.params.len());
        for (name, t) in &self.params {
            entries.push(ParamEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                dtype: "f32".into(),
                offset: bytes.len(),
            });
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            kind: self.kind,
            config: self.config.clone(),
            pretrain: self.pretrain.clone(),
            params: entries,
            norm_stats: self.norm_stats.clone(),
            seeds: self.seeds.clone(),
        };
        let mpath = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(&mpath, text + "\n").map_err(|e| Error::io(&mpath, e))?;
        let wpath = dir.join(WEIGHTS_FILE);
        std::fs::write(&wpath, bytes).map_err(|e| Error::io(&wpath, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&mpath, e.to_string()))?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::format(&mpath, format!("unsupported format version {}", m.format_version)));
        }
        m.config.validate()?;
        if let Some(ns) = &m.norm_stats {
            ns.validate()?;
        }
        let wpath = dir.join(WEIGHTS_FILE);
        let bytes = std::fs::read(&wpath).map_err(|e| Error::io(&wpath, e))?;
        let mut params = Vec::with_capacity(m.params.len());
        let mut expected_offset = 0;
        for e in &m.params {
            if e.dtype != "f32" {
                return Err(Error::format(&mpath, format!("{}: unsupported dtype {}", e.name, e.dtype)));
            }
            let n: usize = e.shape.iter().product();
            if e.offset != expected_offset || e.offset + 4 * n > bytes.len() {
                return Err(Error::format(&wpath, format!("{}: bad offset {}", e.name, e.offset)));
            }
            let data = bytes[e.offset..e.offset + 4 * n]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            params.push((e.name.clone(), Tensor::from_vec(&e.shape, data)?));
            expected_offset += 4 * n;
        }
        if expected_offset != bytes.len() {
            return Err(Error::format(&wpath, "trailing bytes after last tensor"));
        }
        Ok(Self {
            kind: m.kind,
            config: m.config,
            pretrain: m.pretrain,
            norm_stats: m.norm_stats,
            seeds: m.seeds,
            params,
        })
    }
}
