use std::fs;
use std::path::Path;

use drtarget::config::Config;
use drtarget::forecast::Method;
use drtarget::pipeline::{self, Inputs};
use drtarget::report::read_mape;

fn config() -> Config {
    let mut cfg = Config::from_toml(
        r#"
seed = 11
methods = ["OLS", "Ridge", "ISO"]
[segment]
ks = [3]
percentile_k = 3
[report]
n_bins = 2
[population]
n_users = 4
"#,
    )
    .unwrap();
    cfg.population.base.n_days = 60;
    cfg
}

fn read(dir: &Path, rel: &str) -> String {
    fs::read_to_string(dir.join(rel)).unwrap()
}

#[test]
fn stages_chain_through_checkpoints() {
    let cfg = config();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let inputs = pipeline::synth(&cfg, out).unwrap();
    pipeline::ingest(&inputs, &cfg, out).unwrap();
    pipeline::prep(&cfg, out).unwrap();
    assert_eq!(read(out, pipeline::PREP_SUMMARY).lines().count(), 5);
    pipeline::forecast(&cfg, out).unwrap();
    pipeline::effects(&cfg, out).unwrap();
    pipeline::segment(&cfg, out).unwrap();
    pipeline::report(&cfg, out).unwrap();

    let est = read(out, pipeline::ESTIMATES);
    assert!(est.starts_with("user_id,method,n_events,delta_hat,mpr,wilcoxon_p,hl_shift,bias\n"));
    assert_eq!(est.lines().count(), 1 + 4 * 3);
    let mapes = read_mape(fs::File::open(out.join(pipeline::MAPE)).unwrap()).unwrap();
    assert!(mapes.iter().all(|m| m.mape >= 0.0));
    assert!(mapes.iter().any(|m| m.method == Method::IsoBaseline));
    assert!(out
        .join(pipeline::MODELS_DIR)
        .join("synth_0000")
        .join("Ridge.json")
        .exists());

    // The report is a pure function of its input tables.
    let before = read(out, pipeline::REJECTION);
    pipeline::report(&cfg, out).unwrap();
    assert_eq!(read(out, pipeline::REJECTION), before);
}

#[test]
fn flagged_users_are_removed_at_ingest() {
    let cfg = config();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let inputs = pipeline::synth(&cfg, out).unwrap();
    let flags = "user_id,has_solar\nsynth_0000,true\nsynth_0001,false\nsynth_0002,false\nsynth_0003,false\n";
    let flags_path = out.join("flags_solar.csv");
    fs::write(&flags_path, flags).unwrap();
    let inputs = Inputs {
        flags: flags_path,
        ..inputs
    };
    pipeline::ingest(&inputs, &cfg, out).unwrap();
    assert_eq!(
        read(out, pipeline::REMOVED),
        "user_id,reason\nsynth_0000,solar\n"
    );
    assert!(!read(out, pipeline::CONSUMPTION).contains("synth_0000"));
    assert!(!read(out, pipeline::EVENTS).contains("synth_0000"));
}

#[test]
fn missing_checkpoint_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = pipeline::effects(&config(), dir.path()).unwrap_err();
    assert!(matches!(err, drtarget::Error::Io { .. }), "{err}");
}

#[test]
fn manifest_lists_outputs_without_timestamps() {
    let cfg = config();
    let dir = tempfile::tempdir().unwrap();
    pipeline::run_all(None, &cfg, dir.path()).unwrap();
    let m: serde_json::Value = serde_json::from_str(&read(dir.path(), pipeline::MANIFEST)).unwrap();
    assert_eq!(m["seed"], 11);
    assert_eq!(m["config_sha256"], cfg.hash().unwrap());
    let outputs = m["outputs"].as_object().unwrap();
    assert!(outputs.contains_key(pipeline::ESTIMATES));
    assert!(outputs.contains_key(pipeline::REJECTION));
    assert!(!outputs.contains_key(pipeline::MANIFEST));
}
