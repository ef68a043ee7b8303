use std::sync::OnceLock;

use nara::cli::{run_command, EXIT_OK, EXIT_USAGE};
use nara::encoders::Codebook;
use nara::model::{ModelConfig, ParamStore};
use nara::probes::{embed_entities, pooled_road_features, roads_from_labels, zone_probe, EmbedOptions, ProbeConfig, Road};
use nara::synthcity::{generate_city, City, CityParams};
use nara::train::{train, TrainConfig, TrainOutput};

fn city() -> &'static City {
    static C: OnceLock<City> = OnceLock::new();
    C.get_or_init(|| generate_city(&CityParams { seed: 2, ..CityParams::default() }).unwrap())
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        seed: 9,
        model: ModelConfig {
            d: 16,
            d_ff: 16,
            n_layers: 1,
            n_heads: 2,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_deterministic() {
    let cfg = quick(2);
    let a = train(&city().dataset, &cfg, &TrainOutput::default()).unwrap();
    let b = train(&city().dataset, &cfg, &TrainOutput::default()).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.epoch_losses(), b.epoch_losses());
    assert!(!a.log.is_empty());
}

#[test]
fn zero_epochs_returns_the_initialization() {
    let cfg = quick(0);
    let out = train(&city().dataset, &cfg, &TrainOutput::default()).unwrap();
    assert_eq!(out.params, ParamStore::init(&cfg.model, cfg.seed).unwrap());
    assert!(out.log.is_empty());
}

#[test]
fn zero_loss_weights_leave_parameters_unchanged() {
    let mut cfg = quick(2);
    cfg.loss.alpha_mgsm = 0.0;
    cfg.loss.alpha_geo = 0.0;
    cfg.loss.alpha_acc = 0.0;
    cfg.loss.alpha_rsr = 0.0;
    let out = train(&city().dataset, &cfg, &TrainOutput::default()).unwrap();
    assert_eq!(out.params, ParamStore::init(&cfg.model, cfg.seed).unwrap());
}

#[test]
fn checkpoint_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick(1);
    let out = train(&city().dataset, &cfg, &TrainOutput { dir: Some(dir.path().to_path_buf()) }).unwrap();
    let (loaded, ck) = ParamStore::load(&dir.path().join("checkpoint.json")).unwrap();
    assert_eq!(loaded, out.params);
    assert_eq!(ck.seeds["seed"], 9);
    let lines = std::fs::read_to_string(dir.path().join("train_log.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), out.log.len());
}

#[test]
fn probing_leaves_the_encoder_frozen() {
    let params = ParamStore::init(&quick(0).model, 1).unwrap();
    let before = serde_json::to_string(&params.to_checkpoint(Default::default(), serde_json::Value::Null)).unwrap();
    let probe = ProbeConfig { epochs: 20, ..ProbeConfig::default() };
    let m = zone_probe(&params, &Codebook::new(0, 64), &city().dataset, &city().zone_of(), &EmbedOptions::default(), &probe).unwrap();
    assert!(m.n_test > 0);
    let after = serde_json::to_string(&params.to_checkpoint(Default::default(), serde_json::Value::Null)).unwrap();
    assert_eq!(before, after);
}

#[test]
fn pooling_ignores_segment_order() {
    let params = ParamStore::init(&quick(0).model, 1).unwrap();
    let dataset = &city().dataset;
    let roads: Vec<Road> = roads_from_labels(dataset, &city().speed_of()).into_iter().take(12).collect();
    let ids: Vec<u64> = roads.iter().flat_map(|r| r.segments.iter().copied()).collect();
    let emb = embed_entities(&params, &Codebook::new(0, 64), dataset, &ids, &EmbedOptions::default()).unwrap();
    let reversed: Vec<Road> = roads
        .iter()
        .map(|r| Road {
            segments: r.segments.iter().rev().copied().collect(),
            ..r.clone()
        })
        .collect();
    assert!(roads.iter().any(|r| r.segments.len() > 1));
    assert_eq!(pooled_road_features(&roads, &emb), pooled_road_features(&reversed, &emb));
}

#[test]
fn identical_requests_give_identical_embeddings() {
    let params = ParamStore::init(&quick(0).model, 1).unwrap();
    let dataset = &city().dataset;
    let ids: Vec<u64> = dataset.entities.iter().step_by(97).map(|e| e.id).collect();
    let cb = Codebook::new(0, 64);
    let a = embed_entities(&params, &cb, dataset, &ids, &EmbedOptions::default()).unwrap();
    let b = embed_entities(&params, &cb, dataset, &ids, &EmbedOptions::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn cli_rejects_unknown_verbs() {
    assert_eq!(run_command(["nara", "frobnicate"]), EXIT_USAGE);
}

#[test]
fn cli_gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(run_command(["nara", "gradcheck", "--out", out, "--set", "windows=5"]), EXIT_OK);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("gradcheck.json")).unwrap()).unwrap();
    assert_eq!(report["verb"], "gradcheck");
}

#[test]
fn cli_pretrain_with_zero_epochs_writes_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(run_command(["nara", "synth", "--out", out, "--seed", "4"]), EXIT_OK);
    let data = dir.path().join("city.jsonl");
    let code = run_command([
        "nara",
        "pretrain",
        "--data",
        data.to_str().unwrap(),
        "--out",
        out,
        "--seed",
        "4",
        "--set",
        "epochs=0",
    ]);
    assert_eq!(code, EXIT_OK);
    let (params, ck) = ParamStore::load(&dir.path().join("checkpoint.json")).unwrap();
    assert_eq!(params, ParamStore::init(&ck.model, 4).unwrap());
}
