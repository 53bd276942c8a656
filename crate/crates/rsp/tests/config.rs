mod common;

use common::tiny_config;
use rsp::ExperimentConfig;
use rsp_core::model::Architecture;

fn parse(text: &str) -> rsp::Result<ExperimentConfig> {
    text.parse()
}

#[test]
fn parses_typed_fields() {
    let c = parse(&tiny_config("rsp")).unwrap();
    assert_eq!(c.model.arch, Architecture::Rsp);
    assert_eq!((c.model.geom.x, c.model.geom.y), (16, 16));
    assert_eq!(c.model.geom.cell_size, 1.0);
    assert_eq!(c.model.aspp_rates, vec![1, 2]);
    assert_eq!(c.sim.channels, c.model.s);
    assert_eq!(c.sim.seq_len, 6);
    assert_eq!(c.train.adam.lr, 1e-3);
    assert_eq!(c.train.adam.beta1, 0.9);
    assert_eq!(c.train.adam.beta2, 0.999);
    assert_eq!(c.train.epochs, 2);
    assert!(!c.train.heteroscedastic);
    assert_eq!(c.heldout_every, 3);
    assert_eq!(c.seed, 4);
}

#[test]
fn optional_keys_take_documented_defaults() {
    let minimal: String = tiny_config("gru")
        .lines()
        .filter(|l| {
            ["grid.", "model.arch", "model.s ", "model.f ", "model.m ", "model.d_h", "sim.objects", "sim.v_max", "sim.p_", "seed"]
                .iter()
                .any(|k| l.starts_with(k))
        })
        .map(|l| format!("{l}\n"))
        .collect();
    let c = parse(&minimal).unwrap();
    assert_eq!(c.train.adam.lr, 1e-4);
    assert_eq!(c.train.epochs, 10);
    assert_eq!(c.train.seq_len, 12);
    assert!(!c.train.heteroscedastic);
}

#[test]
fn missing_unknown_duplicate_and_malformed_lines_are_errors() {
    let base = tiny_config("gru");
    let without_seed: String = base.lines().filter(|l| !l.starts_with("seed")).map(|l| format!("{l}\n")).collect();
    assert!(parse(&without_seed).is_err());
    assert!(parse(&format!("{base}model.colour = red\n")).is_err());
    assert!(parse(&format!("{base}seed = 5\n")).is_err());
    assert!(parse(&format!("{base}just some words\n")).is_err());
    assert!(parse(&base.replace("model.arch = gru", "model.arch = lstm")).is_err());
    assert!(parse(&base.replace("grid.x = 16", "grid.x = sixteen")).is_err());
    assert!(parse(&base.replace("sim.p_drop = 0.2", "sim.p_drop = 2")).is_err());
}

#[test]
fn canonical_text_round_trips() {
    let c = parse(&tiny_config("rsp")).unwrap();
    let again = parse(&c.to_text()).unwrap();
    assert_eq!(c, again);
    assert_eq!(c.to_text(), again.to_text());
}

#[test]
fn data_hash_ignores_training_keys() {
    let c = parse(&tiny_config("rsp")).unwrap();
    assert_eq!(c.data_hash(), c.with("train.lr", "0.5").unwrap().data_hash());
    assert_eq!(c.data_hash(), c.with("model.arch", "gru").unwrap().data_hash());
    assert_ne!(c.data_hash(), c.with("sim.v_max", "3").unwrap().data_hash());
    assert_ne!(c.data_hash(), c.with("seed", "5").unwrap().data_hash());
}

#[test]
fn heteroscedastic_flag_builds_variance_head() {
    let c = parse(&tiny_config("rsp")).unwrap().with("loss.heteroscedastic", "true").unwrap();
    assert!(c.train.heteroscedastic);
    assert!(c.model.heteroscedastic);
}
