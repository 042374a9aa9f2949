//! Resumable snapshots of engine state.
//!
//! A checkpoint holds the population with fitness, the fitness cache, the
//! exact RNG position and the config that produced it. Files are written to
//! a temporary sibling and renamed, so a crash mid-write never leaves a
//! truncated checkpoint behind.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    EngineState, EvolutionConfig, Fitness, FitnessCache, GenerationRecord, GenerationTiming, Individual,
};
use crate::genome::GenomeDigest;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("checkpoint {path} is corrupt: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("checkpoint version {found} is not supported (expected {CHECKPOINT_VERSION})")]
    Version { found: u32 },
    #[error("config hash mismatch: checkpoint has {expected}, config gives {found}")]
    ConfigMismatch { expected: String, found: String },
}

/// ChaCha stream position: key, stream id and word offset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// Decimal string; the offset is a u128 and JSON numbers are not.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng, String> {
        let bytes = hex::decode(&self.seed).map_err(|e| format!("rng seed: {e}"))?;
        let seed: [u8; 32] = bytes
            .try_into()
            .map_err(|_| "rng seed: expected 32 bytes".to_string())?;
        let word_pos: u128 = self.word_pos.parse().map_err(|e| format!("rng word_pos: {e}"))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(word_pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub digest: GenomeDigest,
    pub fitness: Fitness,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    /// Completed generations.
    pub generation: usize,
    pub rng_state: RngState,
    pub population: Vec<Individual>,
    pub cache: Vec<CacheEntry>,
    pub config_hash: String,
    pub config: EvolutionConfig,
    pub history: Vec<GenerationRecord>,
    pub best: Option<Individual>,
    pub timings: Vec<GenerationTiming>,
}

impl Checkpoint {
    pub fn capture(cfg: &EvolutionConfig, state: &EngineState) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            generation: state.generation,
            rng_state: RngState::capture(&state.rng),
            population: state.population.clone(),
            cache: state
                .cache
                .iter()
                .map(|(d, f)| CacheEntry {
                    digest: *d,
                    fitness: *f,
                })
                .collect(),
            config_hash: cfg.config_hash(),
            config: cfg.clone(),
            history: state.history.clone(),
            best: state.best.clone(),
            timings: state.timings.clone(),
        }
    }

    /// Writes atomically: temp file in the same directory, then rename.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io = |source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        };
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io)?;
        }
        let tmp = path.with_extension("json.tmp");
        let mut text = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        text.push('\n');
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(text.as_bytes()).map_err(io)?;
        f.sync_all().map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }

    /// Reads and sanity-checks a checkpoint, including its config hash.
    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = fs::read_to_string(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let corrupt = |reason: String| CheckpointError::Corrupt {
            path: path.to_path_buf(),
            reason,
        };
        let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))?;
        let version = raw.get("version").and_then(|v| v.as_u64());
        match version {
            Some(v) if v == CHECKPOINT_VERSION as u64 => {}
            Some(v) => return Err(CheckpointError::Version { found: v as u32 }),
            None => return Err(corrupt("missing version".into())),
        }
        let ckpt: Checkpoint = serde_json::from_value(raw).map_err(|e| corrupt(e.to_string()))?;
        ckpt.verify(&ckpt.config)?;
        ckpt.rng_state.restore().map_err(corrupt)?;
        if ckpt.population.len() != ckpt.config.population {
            return Err(corrupt(format!(
                "population has {} individuals, config says {}",
                ckpt.population.len(),
                ckpt.config.population
            )));
        }
        Ok(ckpt)
    }

    /// Fails unless `cfg` has the same search settings as this checkpoint.
    pub fn verify(&self, cfg: &EvolutionConfig) -> Result<(), CheckpointError> {
        let found = cfg.config_hash();
        if found != self.config_hash {
            return Err(CheckpointError::ConfigMismatch {
                expected: self.config_hash.clone(),
                found,
            });
        }
        Ok(())
    }

    pub(super) fn into_state(self) -> Result<(EvolutionConfig, EngineState), CheckpointError> {
        let rng = self
            .rng_state
            .restore()
            .map_err(|reason| CheckpointError::Corrupt {
                path: PathBuf::new(),
                reason,
            })?;
        let mut cache = FitnessCache::default();
        for e in self.cache {
            cache.insert(e.digest, e.fitness);
        }
        Ok((
            self.config,
            EngineState {
                generation: self.generation,
                population: self.population,
                rng,
                cache,
                history: self.history,
                timings: self.timings,
                best: self.best,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn rng_state_round_trips_mid_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..13 {
            rng.next_u32();
        }
        let mut restored = RngState::capture(&rng).restore().unwrap();
        for _ in 0..100 {
            assert_eq!(rng.next_u64(), restored.next_u64());
        }
    }

    #[test]
    fn rejects_version_and_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = EvolutionConfig {
            population: 4,
            generations: 1,
            ..EvolutionConfig::default()
        };
        let ev = cfg.build_evaluator().unwrap();
        let mut engine = super::super::Engine::new(cfg, ev.as_ref()).unwrap();
        engine.step().unwrap();
        let path = dir.path().join("c.json");
        let ckpt = engine.checkpoint();
        ckpt.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ckpt);

        let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        v["version"] = 2.into();
        fs::write(&path, v.to_string()).unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(CheckpointError::Version { found: 2 })
        ));

        v["version"] = 1.into();
        v["config"]["seed"] = 99.into();
        fs::write(&path, v.to_string()).unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(CheckpointError::ConfigMismatch { .. })
        ));

        fs::write(&path, "{\"version\": 1, \"generation\": ").unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(CheckpointError::Corrupt { .. })
        ));
    }
}
