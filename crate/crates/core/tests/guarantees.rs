//! Cross-cutting guarantees that sit outside any single module: evaluation
//! batches never mutate the experience store, the concurrent backend path
//! is output-identical to the sequential one, and API keys stay out of
//! every artifact the harness writes.

use std::fs;
use std::path::Path;

use drivemind_core::harness::{
    good_driver_backend, EpisodeConfig, EpisodeRunner, MemoryBank, MemoryMode,
};
use drivemind_core::llm::{
    ChatBackend, ChatMessage, Embedder, HashEmbedder, HttpChatBackend, ProviderConfig,
};
use drivemind_core::scenario::ScenarioConfig;

#[tokio::test]
async fn evaluation_batches_leave_the_store_bytes_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let store_path = dir.path().join("mem.jsonl");
    let chat = good_driver_backend();
    let embedder = HashEmbedder::new(256);
    let runner = EpisodeRunner::new(&chat, &embedder);

    let mut cfg = EpisodeConfig::new(ScenarioConfig::ramp_merge(0));
    cfg.memory_path = Some(store_path.clone());
    let mut bank =
        MemoryBank::open(MemoryMode::Shared, Some(store_path.as_path()), &embedder).unwrap();
    runner.train(&cfg, 2, 8, &mut bank, None).await.unwrap();

    let before = fs::read(&store_path).unwrap();
    assert!(!before.is_empty(), "training should have persisted experiences");
    let trained_len = bank.total_len();

    let summary = runner.test(&cfg, 5, &mut bank, None).await.unwrap();
    assert_eq!(summary.rows.len(), 20);

    let after = fs::read(&store_path).unwrap();
    assert_eq!(before, after, "evaluation rewrote the experience store");
    assert_eq!(bank.total_len(), trained_len, "evaluation grew the in-memory store");
}

#[tokio::test]
async fn concurrent_backend_calls_are_output_identical() {
    let chat = good_driver_backend();
    let embedder = HashEmbedder::new(256);
    let runner = EpisodeRunner::new(&chat, &embedder);

    for scenario in [ScenarioConfig::ramp_merge(8), ScenarioConfig::roundabout(1)] {
        let mut sequential = EpisodeConfig::new(scenario.clone());
        sequential.concurrent_agents = false;
        let mut concurrent = sequential.clone();
        concurrent.concurrent_agents = true;

        let mut bank_s = MemoryBank::open(MemoryMode::Shared, None, &embedder).unwrap();
        let log_s = runner.run_episode(&sequential, "equiv", &mut bank_s, true).await.unwrap();
        let mut bank_c = MemoryBank::open(MemoryMode::Shared, None, &embedder).unwrap();
        let log_c = runner.run_episode(&concurrent, "equiv", &mut bank_c, true).await.unwrap();

        assert_eq!(
            log_s.to_jsonl(),
            log_c.to_jsonl(),
            "concurrent agent calls changed the log for {:?}",
            scenario.kind
        );
        assert_eq!(bank_s.total_len(), bank_c.total_len());
    }
}

fn assert_clean(text: &str, sentinel: &str, what: &str) {
    assert!(
        !text.contains(sentinel),
        "API key leaked into {what}: {text}"
    );
}

fn scan_tree(dir: &Path, sentinel: &str) {
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            scan_tree(&path, sentinel);
        } else {
            let body = fs::read_to_string(&path).unwrap_or_default();
            assert_clean(&body, sentinel, &format!("artifact {}", path.display()));
        }
    }
}

#[tokio::test]
async fn api_key_value_never_reaches_artifacts_or_errors() {
    let var = "DRIVEMIND_LEAK_CHECK_KEY";
    let sentinel = "sk-sentinel-8f3a2b-do-not-log";
    std::env::set_var(var, sentinel);

    // Debug output of the live backend must mask the key.
    let provider = ProviderConfig {
        base_url: "http://127.0.0.1:9".to_string(),
        api_key_env_var: var.to_string(),
        timeout_s: 0.3,
        max_retries: 0,
        retry_backoff_s: 0.01,
        ..ProviderConfig::default()
    };
    let backend = HttpChatBackend::new(provider).unwrap();
    let dump = format!("{backend:?}");
    assert!(dump.contains("Secret(***)"), "masked placeholder missing: {dump}");
    assert_clean(&dump, sentinel, "backend debug output");

    // A failing request must not echo the key through the error chain.
    let err = backend
        .chat(&[ChatMessage::user("hello")])
        .await
        .expect_err("port 9 must refuse the connection");
    assert_clean(&format!("{err}"), sentinel, "error display");
    assert_clean(&format!("{err:?}"), sentinel, "error debug");

    // Nothing the harness writes to disk may contain the key either.
    let dir = tempfile::tempdir().unwrap();
    let chat = good_driver_backend();
    let embedder = HashEmbedder::new(256);
    let runner = EpisodeRunner::new(&chat, &embedder);
    let mut cfg = EpisodeConfig::new(ScenarioConfig::ramp_merge(0));
    cfg.memory_path = Some(dir.path().join("mem.jsonl"));
    let mut bank =
        MemoryBank::open(MemoryMode::Shared, cfg.memory_path.as_deref(), &embedder).unwrap();
    let log_dir = dir.path().join("logs");
    fs::create_dir_all(&log_dir).unwrap();
    let summary = runner.train(&cfg, 2, 8, &mut bank, Some(&log_dir)).await.unwrap();
    fs::write(dir.path().join("summary.csv"), summary.to_csv()).unwrap();
    assert_clean(&format!("{:?}", embedder.id()), sentinel, "embedder id");
    scan_tree(dir.path(), sentinel);
}
