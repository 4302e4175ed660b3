//! Run configuration: a TOML file mirroring the scenario, episode, backend,
//! provider, and embedding settings, plus constructors that turn the parsed
//! file into live objects.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::harness::{good_driver_backend, EpisodeConfig, HarnessError, MemoryMode};
use crate::llm::{
    ChatBackend, Embedder, HashEmbedder, HttpChatBackend, HttpEmbedder, ProviderConfig,
    ScriptFile, ScriptedBackend,
};
use crate::memory::DEFAULT_K;
use crate::reflection::ReflectionThresholds;
use crate::scenario::ScenarioConfig;

/// Which chat backend a run talks to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Offline rule-matching backend; no network, fully deterministic.
    Scripted,
    /// OpenAI-compatible HTTP provider configured by `[provider]`.
    Http,
}

impl BackendKind {
    pub fn name(self) -> &'static str {
        match self {
            BackendKind::Scripted => "scripted",
            BackendKind::Http => "http",
        }
    }
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scripted" => Ok(BackendKind::Scripted),
            "http" => Ok(BackendKind::Http),
            other => Err(format!("unknown backend {other:?} (expected scripted or http)")),
        }
    }
}

/// `[backend]` section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Optional JSON rule file for the scripted backend; without it the
    /// built-in driving ruleset is used.
    pub script: Option<PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig { kind: BackendKind::Scripted, script: None }
    }
}

/// Which embedder turns text into vectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    /// Deterministic local feature hashing.
    Hash,
    /// Provider embedding endpoint configured by `[provider]`.
    Http,
}

/// `[embedding]` section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    pub kind: EmbeddingKind,
    pub dim: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig { kind: EmbeddingKind::Hash, dim: 256 }
    }
}

/// `[episode]` section: everything in an episode besides the scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeSection {
    pub horizon_s: f64,
    pub retrieval_k: usize,
    pub memory_mode: MemoryMode,
    pub memory_path: Option<PathBuf>,
    pub thresholds: ReflectionThresholds,
    pub sequential_stepping: bool,
    pub concurrent_agents: bool,
}

impl Default for EpisodeSection {
    fn default() -> Self {
        EpisodeSection {
            horizon_s: 30.0,
            retrieval_k: DEFAULT_K,
            memory_mode: MemoryMode::Shared,
            memory_path: None,
            thresholds: ReflectionThresholds::default(),
            sequential_stepping: false,
            concurrent_agents: false,
        }
    }
}

/// Full run configuration file.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub episode: EpisodeSection,
    pub backend: BackendConfig,
    pub provider: ProviderConfig,
    pub embedding: EmbeddingConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<RunConfig, HarnessError> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| HarnessError::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        RunConfig::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.embedding.dim == 0 {
            return Err(HarnessError::Config("embedding.dim must be >= 1".to_string()));
        }
        self.episode_config().validate()
    }

    /// Assemble the episode configuration this file describes.
    pub fn episode_config(&self) -> EpisodeConfig {
        EpisodeConfig {
            scenario: self.scenario.clone(),
            horizon_s: self.episode.horizon_s,
            retrieval_k: self.episode.retrieval_k,
            memory_mode: self.episode.memory_mode,
            memory_path: self.episode.memory_path.clone(),
            thresholds: self.episode.thresholds,
            sequential_stepping: self.episode.sequential_stepping,
            concurrent_agents: self.episode.concurrent_agents,
        }
    }

    /// Construct the chat backend the `[backend]` section asks for.
    pub fn build_chat_backend(&self) -> Result<Box<dyn ChatBackend>, HarnessError> {
        match self.backend.kind {
            BackendKind::Scripted => match &self.backend.script {
                None => Ok(Box::new(good_driver_backend())),
                Some(path) => {
                    let text = std::fs::read_to_string(path).map_err(|e| {
                        HarnessError::Config(format!("cannot read {}: {e}", path.display()))
                    })?;
                    let file: ScriptFile = serde_json::from_str(&text).map_err(|e| {
                        HarnessError::Config(format!("bad script {}: {e}", path.display()))
                    })?;
                    let backend = ScriptedBackend::from_script(file)
                        .map_err(|e| HarnessError::Config(e.to_string()))?;
                    Ok(Box::new(backend))
                }
            },
            BackendKind::Http => {
                let backend = HttpChatBackend::new(self.provider.clone())
                    .map_err(|e| HarnessError::Config(e.to_string()))?;
                Ok(Box::new(backend))
            }
        }
    }

    /// Construct the embedder the `[embedding]` section asks for.
    pub fn build_embedder(&self) -> Result<Box<dyn Embedder>, HarnessError> {
        match self.embedding.kind {
            EmbeddingKind::Hash => Ok(Box::new(HashEmbedder::new(self.embedding.dim))),
            EmbeddingKind::Http => {
                let embedder = HttpEmbedder::new(self.provider.clone(), self.embedding.dim)
                    .map_err(|e| HarnessError::Config(e.to_string()))?;
                Ok(Box::new(embedder))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::ScenarioKind;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.scenario.kind, ScenarioKind::RampMerge);
        assert_eq!(cfg.backend.kind, BackendKind::Scripted);
        assert_eq!(cfg.embedding.dim, 256);
        assert_eq!(cfg.episode_config(), EpisodeConfig::default());
    }

    #[test]
    fn sections_parse_and_round_trip() {
        let text = r#"
            [scenario]
            kind = "roundabout"
            seed = 7
            n_llm = 1

            [episode]
            horizon_s = 12.0
            retrieval_k = 5
            memory_mode = "per-agent"
            sequential_stepping = true

            [episode.thresholds]
            extreme_low = 2.0
            sudden_drop = 4.0
            retention = 7.5

            [backend]
            kind = "http"

            [provider]
            model_name = "test-model"
            api_key_env_var = "TEST_KEY"

            [embedding]
            kind = "hash"
            dim = 64
        "#;
        let cfg = RunConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.scenario.kind, ScenarioKind::Roundabout);
        assert_eq!(cfg.scenario.seed, 7);
        assert_eq!(cfg.episode.retrieval_k, 5);
        assert_eq!(cfg.episode.memory_mode, MemoryMode::PerAgent);
        assert!(cfg.episode.sequential_stepping);
        assert_eq!(cfg.episode.thresholds.retention, 7.5);
        assert_eq!(cfg.backend.kind, BackendKind::Http);
        assert_eq!(cfg.provider.model_name, "test-model");
        assert_eq!(cfg.embedding.dim, 64);

        let echoed = toml::to_string(&cfg).unwrap();
        let back = RunConfig::from_toml_str(&echoed).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn bad_values_are_rejected_as_config_errors() {
        let bad_toml = RunConfig::from_toml_str("[scenario]\nkind = 3\n").unwrap_err();
        assert!(matches!(bad_toml, HarnessError::Config(_)), "{bad_toml:?}");
        assert!(bad_toml.is_validation());

        let bad_dim = RunConfig::from_toml_str("[embedding]\ndim = 0\n").unwrap_err();
        assert!(matches!(bad_dim, HarnessError::Config(_)), "{bad_dim:?}");

        let bad_episode = RunConfig::from_toml_str("[episode]\nhorizon_s = -1.0\n").unwrap_err();
        assert!(bad_episode.is_validation(), "{bad_episode:?}");
    }

    #[test]
    fn backend_and_embedder_construction() {
        let cfg = RunConfig::default();
        let chat = cfg.build_chat_backend().unwrap();
        assert_eq!(chat.id(), good_driver_backend().id());
        let emb = cfg.build_embedder().unwrap();
        assert_eq!(emb.id(), HashEmbedder::new(256).id());

        std::env::set_var("DRIVEMIND_CONFIG_TEST_KEY", "k-test");
        let mut http = RunConfig::default();
        http.backend.kind = BackendKind::Http;
        http.embedding.kind = EmbeddingKind::Http;
        http.provider.api_key_env_var = "DRIVEMIND_CONFIG_TEST_KEY".to_string();
        assert!(http.build_chat_backend().is_ok());
        assert!(http.build_embedder().is_ok());

        http.provider.api_key_env_var = "DRIVEMIND_CONFIG_TEST_UNSET".to_string();
        match http.build_chat_backend() {
            Err(HarnessError::Config(msg)) => assert!(msg.contains("DRIVEMIND_CONFIG_TEST_UNSET")),
            Err(other) => panic!("expected config error, got {other:?}"),
            Ok(_) => panic!("expected a missing-key error"),
        }
    }

    #[test]
    fn scripted_backend_loads_from_rule_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rules.json");
        std::fs::write(
            &path,
            r#"{"default_response": "fallback", "rules": [{"substring": "ping", "response": "pong"}]}"#,
        )
        .unwrap();
        let mut cfg = RunConfig::default();
        cfg.backend.script = Some(path);
        let backend = cfg.build_chat_backend().unwrap();
        let rt = tokio::runtime::Builder::new_current_thread().build().unwrap();
        let out = rt.block_on(backend.chat(&[crate::llm::ChatMessage::user("ping")])).unwrap();
        assert_eq!(out, "pong");

        cfg.backend.script = Some(dir.path().join("missing.json"));
        match cfg.build_chat_backend() {
            Err(HarnessError::Config(_)) => {}
            Err(other) => panic!("expected config error, got {other:?}"),
            Ok(_) => panic!("expected config error for a missing script file"),
        }
    }
}
