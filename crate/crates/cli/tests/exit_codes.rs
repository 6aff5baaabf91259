mod common;

use std::fs;

use common::{cli, json, ok, s, small_dump};
use probegeom::store::{gen_synthetic, write_dump, SynthConfig};

#[test]
fn help_and_version_succeed() {
    assert_eq!(cli(&["--help"]), 0);
    assert_eq!(cli(&["--version"]), 0);
    assert_eq!(cli(&["sweep", "--help"]), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(cli(&[]), 1);
    assert_eq!(cli(&["no-such-command"]), 1);
    assert_eq!(cli(&["sweep", "--dims", "1,x"]), 1);
    assert_eq!(cli(&["sweep", "--protocol", "group-kfold:1"]), 1);
    assert_eq!(cli(&["gen-synth", "--preset", "nope"]), 1);
}

#[test]
fn bad_inputs_exit_one() {
    let t = tempfile::tempdir().unwrap();
    let missing = t.path().join("missing");
    assert_eq!(cli(&["validate", "--dump", s(&missing)]), 1);

    let dump = t.path().join("dump");
    small_dump(&dump);
    let out = t.path().join("out");
    assert_eq!(cli(&["sweep", "--dump", s(&dump), "--out", s(&out), "--layers", "7"]), 1);
    assert_eq!(cli(&["sweep", "--dump", s(&dump), "--out", s(&out), "--dims", "9"]), 1);
    assert_eq!(cli(&["sweep", "--dump", s(&dump), "--out", s(&out), "--jobs", "0"]), 1);
    assert_eq!(cli(&["steer-bundle", "--dump", s(&dump), "--out", s(&out), "--layer", "5"]), 1);
}

#[test]
fn corrupted_dump_fails_validation() {
    let t = tempfile::tempdir().unwrap();
    let dump = t.path().join("dump");
    small_dump(&dump);
    let layer = dump.join("layer_1.f32");
    let mut bytes = fs::read(&layer).unwrap();
    bytes[10] ^= 0xff;
    fs::write(&layer, bytes).unwrap();
    assert_eq!(cli(&["validate", "--dump", s(&dump), "--out", s(&t.path().join("out"))]), 1);
    let err = probegeom::store::read_dump(&dump).unwrap_err();
    assert!(err.to_string().contains("layer_1.f32"), "{err}");
}

#[test]
fn degenerate_data_exits_two() {
    let mut ds = gen_synthetic(&SynthConfig {
        hidden_dim: 8,
        num_groups: 40,
        ..SynthConfig::default()
    })
    .unwrap();
    for r in &mut ds.records {
        r.answer_length = 7;
    }
    let t = tempfile::tempdir().unwrap();
    let dump = t.path().join("dump");
    write_dump(&ds, &dump).unwrap();
    assert_eq!(cli(&["confounds", "--dump", s(&dump), "--out", s(&t.path().join("out")), "--seed-list", "1"]), 2);
}

#[test]
fn config_file_sits_between_flags_and_defaults() {
    let t = tempfile::tempdir().unwrap();
    let dump = t.path().join("dump");
    small_dump(&dump);
    let out = t.path().join("out");
    let cfg = t.path().join("cfg.json");
    fs::write(
        &cfg,
        serde_json::json!({"dump": s(&dump), "out": s(&out), "dims": [1, 2], "seed-list": "5", "layers": "2"}).to_string(),
    )
    .unwrap();
    ok(&["--config", s(&cfg), "sweep", "--dims", "3"]);
    let run = json(&out.join("run.json"));
    let c = &run["runs"]["sweep"]["config"];
    assert_eq!(c["dims"], 3);
    assert_eq!(c["seed-list"], 5);
    assert_eq!(run["runs"]["sweep"]["config_file"], s(&cfg));
    let (_, rows) = common::csv_table(&out.join("dim_sweep.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!((rows[0][1].as_str(), rows[0][2].as_str()), ("2", "3"));
    // defaults fill what neither source names
    assert_eq!(c["protocol"], "group-kfold:5");
}

#[test]
fn unknown_config_key_is_rejected() {
    let t = tempfile::tempdir().unwrap();
    let dump = t.path().join("dump");
    small_dump(&dump);
    let cfg = t.path().join("cfg.json");
    fs::write(&cfg, serde_json::json!({"dump": s(&dump), "dimz": "1"}).to_string()).unwrap();
    assert_eq!(cli(&["--config", s(&cfg), "sweep", "--out", s(&t.path().join("out"))]), 1);
    fs::write(&cfg, "[1, 2]").unwrap();
    assert_eq!(cli(&["--config", s(&cfg), "validate", "--dump", s(&dump)]), 1);
}

#[test]
fn report_is_idempotent() {
    let t = tempfile::tempdir().unwrap();
    let dump = t.path().join("dump");
    small_dump(&dump);
    let out = t.path().join("out");
    ok(&["sweep", "--dump", s(&dump), "--out", s(&out), "--dims", "1,2", "--seed-list", "1"]);
    ok(&["anova", "--dump", s(&dump), "--out", s(&out), "--layers", "2"]);
    ok(&["report", "--out", s(&out)]);
    let md = fs::read(out.join("report.md")).unwrap();
    let svg = fs::read(out.join("report.svg")).unwrap();
    ok(&["report", "--out", s(&out)]);
    assert_eq!(fs::read(out.join("report.md")).unwrap(), md);
    assert_eq!(fs::read(out.join("report.svg")).unwrap(), svg);
    let text = String::from_utf8(md).unwrap();
    assert!(text.contains("## Dimension sweep"));
}

#[test]
fn steering_round_trip_through_the_cli() {
    let t = tempfile::tempdir().unwrap();
    let dump = t.path().join("dump");
    small_dump(&dump);
    let out = t.path().join("out");
    ok(&["steer-bundle", "--dump", s(&dump), "--out", s(&out), "--layer", "1", "--seed", "3"]);
    let b = probegeom::steering::SteeringBundle::import(out.join("bundle")).unwrap();
    assert_eq!(b.layer_index, 1);
    assert!(b.orthogonal.dot(&b.learned).abs() < probegeom::steering::IMPORT_TOL);

    // judge every alpha with a fixed error count that falls with alpha
    let mut rows = Vec::new();
    for d in probegeom::steering::DIRECTIONS {
        for (k, &alpha) in b.alpha_values.iter().enumerate() {
            for item in 0..40u64 {
                let wrong = d == "learned" && item < 30 - k as u64;
                rows.push(probegeom::steering::OutcomeRow {
                    item,
                    direction: d.into(),
                    alpha,
                    correct: u8::from(!wrong && !(d != "learned" && item % 4 == 0)),
                });
            }
        }
    }
    let outcome = t.path().join("outcome.jsonl");
    probegeom::steering::write_outcome(&rows, &outcome).unwrap();
    ok(&["steer-analyze", "--outcome", s(&outcome), "--out", s(&out)]);
    let j = json(&out.join("steering.json"));
    let learned = &j["directions"][0];
    assert_eq!(learned["direction"], "learned");
    assert!((learned["total_effect_pp"].as_f64().unwrap() - 100.0 * 19.0 / 40.0).abs() < 1e-9);
    assert_eq!(learned["spearman_rho"], -1.0);
    let run = json(&out.join("run.json"));
    assert!(run["runs"]["steer-bundle"].is_object() && run["runs"]["steer-analyze"].is_object());
}
