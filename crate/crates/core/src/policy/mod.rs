//! The assembled keyframe policy, synthetic tasks, training and evaluation.

mod dataset;
mod language;
pub mod tasks;
mod train;

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use dataset::{load_dataset, read_dataset, save_dataset, write_dataset, DATASET_VERSION};
pub use language::{Vocabulary, DEFAULT_D_K};
pub use train::{augment, augmentation, batch_gradients, evaluate, parallel_map, thread_count, train, EvalReport, TaskScore, TrainConfig, TrainReport, THREADS_ENV};

use crate::autodiff::{ParamStore, Tape, Var};
use crate::eptu::{Eptu, EptuConfig};
use crate::error::contract;
use crate::field::{teacher_levels, Decoded, FieldConfig, FieldHeads};
use crate::scene::{KeyframeAction, Observation};
use crate::so3::RigidTransform;
use crate::{Error, Real, Result};

/// Observation, instruction and expert keyframe.
#[derive(Clone, Debug, PartialEq)]
pub struct Demonstration {
    pub observation: Observation,
    pub instruction: String,
    pub expert: KeyframeAction,
}

impl Demonstration {
    pub fn transformed(&self, g: &RigidTransform) -> Self {
        Self { observation: self.observation.transformed(g), instruction: self.instruction.clone(), expert: self.expert.transformed(g) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub eptu: EptuConfig,
    pub field: FieldConfig,
    pub instructions: Vec<String>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self { eptu: EptuConfig::default(), field: FieldConfig::default(), instructions: tasks::Task::all().iter().map(|t| t.instruction()).collect() }
    }
}

impl PolicyConfig {
    /// Reduced network for the synthetic task suite.
    pub fn toy() -> Self {
        let eptu = EptuConfig {
            level_sizes: vec![160, 40, 10],
            multiplicities: vec![4, 4, 4],
            edge_hidden: 16,
            film_hidden: 16,
            ..EptuConfig::default()
        };
        let field = FieldConfig { multiplicity: 4, edge_hidden: 16, readout_hidden: 16, rotation_channels: 4, ..FieldConfig::default() };
        Self { eptu, field, ..Self::default() }
    }

    /// Same architecture at a different maximum degree.
    pub fn with_lmax(mut self, lmax: usize) -> Self {
        self.eptu.lmax = lmax;
        self.field.lmax = lmax;
        self
    }
}

/// Network and optimizer settings for the synthetic task suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub policy: PolicyConfig,
    pub train: TrainConfig,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self { policy: PolicyConfig::toy(), train: TrainConfig::toy() }
    }
}

/// Per-term training losses.
pub struct LossTerms {
    pub total: Var,
    pub translation: Var,
    pub rotation: Var,
    pub open: Var,
}

pub struct Policy {
    pub cfg: PolicyConfig,
    pub eptu: Eptu,
    pub heads: FieldHeads,
    pub vocab: Vocabulary,
}

impl Policy {
    pub fn new(cfg: PolicyConfig) -> Result<Self> {
        let eptu = Eptu::new(cfg.eptu.clone())?;
        let heads = FieldHeads::new(cfg.field.clone(), cfg.eptu.latent_spec())?;
        let vocab = Vocabulary::new(cfg.instructions.clone(), cfg.eptu.d_k)?;
        Ok(Self { cfg, eptu, heads, vocab })
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamStore, rng: &mut R) -> Result<()> {
        self.eptu.init(params, rng)?;
        self.heads.init(params, rng)
    }

    pub fn condition(&self, instruction: &str) -> Result<Vec<f64>> {
        self.vocab.embed(instruction)
    }

    /// Summed cross-entropies with teacher-forced translation levels.
    pub fn loss<T: Real>(&self, tape: &mut Tape<T>, params: &ParamStore, demo: &Demonstration) -> Result<LossTerms> {
        let k = self.condition(&demo.instruction)?;
        let ws = demo.observation.workspace;
        let f = &self.cfg.field;
        let levels = teacher_levels(&ws, f.levels, f.train_candidates, demo.expert.position)?;
        let cond = tape.constant(1, k.len(), k.into_iter().map(T::c).collect())?;
        let enc = self.eptu.forward(tape, params, &demo.observation, cond)?;
        let pos = enc.positions().to_vec();
        let mut translation = None;
        for (lvl, idx) in &levels {
            let z = self.heads.q_t(tape, params, enc.latent, &pos, &lvl.candidates)?;
            let ce = tape.cross_entropy(z, *idx)?;
            translation = Some(match translation {
                None => ce,
                Some(acc) => tape.add(acc, ce)?,
            });
        }
        let translation = translation.expect("at least one level");
        let local = ws.rotation.inverse().compose(&demo.expert.rotation);
        let (target_r, _) = self.heads.rotations.grid.nearest(&local);
        let zr = self.heads.q_r(tape, params, enc.latent, &pos, demo.expert.position, &ws)?;
        let rotation = tape.cross_entropy(zr, target_r)?;
        let zo = self.heads.q_open(tape, params, enc.latent, &pos, demo.expert.position)?;
        let open = tape.cross_entropy(zo, usize::from(demo.expert.open))?;
        let tr = tape.add(translation, rotation)?;
        let total = tape.add(tr, open)?;
        Ok(LossTerms { total, translation, rotation, open })
    }

    /// Greedy decoding in precision `T`.
    pub fn act_in<T: Real>(&self, params: &ParamStore, obs: &Observation, instruction: &str) -> Result<Decoded> {
        let k = self.condition(instruction)?;
        let mut tape = Tape::<T>::new();
        let cond = tape.constant(1, k.len(), k.into_iter().map(T::c).collect())?;
        let enc = self.eptu.forward(&mut tape, params, obs, cond)?;
        let pos = enc.positions().to_vec();
        self.heads.decode(&mut tape, params, enc.latent, &pos, &obs.workspace)
    }

    pub fn act(&self, params: &ParamStore, obs: &Observation, instruction: &str) -> Result<Decoded> {
        self.act_in::<f64>(params, obs, instruction)
    }
}

/// Policy configuration plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: PolicyConfig,
    pub params: ParamStore,
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"EQPL";
const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let cfg = serde_json::to_vec(&self.config)?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(cfg.len() as u64).to_le_bytes())?;
        w.write_all(&cfg)?;
        self.params.write_to(w)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut head = [0u8; 16];
        r.read_exact(&mut head)?;
        if &head[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Data("not a policy checkpoint".into()));
        }
        let version = u32::from_le_bytes(head[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!("unsupported checkpoint version {version}")));
        }
        let len = u64::from_le_bytes(head[8..16].try_into().expect("8 bytes"));
        contract!(len < 1 << 24, "checkpoint config of {len} bytes is implausible");
        let mut cfg = vec![0u8; len as usize];
        r.read_exact(&mut cfg)?;
        let config = serde_json::from_slice(&cfg)?;
        let params = ParamStore::read_from(r)?;
        Ok(Self { config, params })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory");
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}

#[cfg(test)]
mod tests;
