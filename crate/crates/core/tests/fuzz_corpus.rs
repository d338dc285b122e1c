//! Replays the checked-in fuzz seeds through the parser entry points.

use std::fs;
use std::path::PathBuf;

use hlm::data::{listwise_delete, read_csv, LoadOptions};
use hlm::estimator::ModelSpec;
use hlm::recode::Codebook;
use hlm::simulator::{simulate, SimConfig};

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let path = e.unwrap().path();
            (path.display().to_string(), fs::read(&path).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn csv_seeds() {
    let opts = LoadOptions {
        text_columns: vec!["label".to_string()],
        ..LoadOptions::default()
    };
    let mut loaded = 0;
    for (name, bytes) in seeds("csv_load") {
        let Ok(ds) = read_csv(bytes.as_slice(), &[], "school", &opts) else {
            continue;
        };
        loaded += 1;
        assert_eq!(ds.group_index().sizes().iter().sum::<usize>(), ds.n_rows(), "{name}");
        let names: Vec<String> = ds.names().map(str::to_string).collect();
        let _ = listwise_delete(&ds, &names);
        let mut out = Vec::new();
        ds.write_csv(&mut out).unwrap();
    }
    assert!(loaded > 0);
}

#[test]
fn codebook_seeds() {
    let mut parsed = 0;
    for (name, bytes) in seeds("codebook") {
        let Ok(text) = std::str::from_utf8(&bytes) else { continue };
        match Codebook::parse(text) {
            Ok(_) => parsed += 1,
            Err(e) => assert!(e.line >= 1 && e.line <= text.lines().count().max(1), "{name}: {e}"),
        }
    }
    assert!(parsed > 0);
}

#[test]
fn model_spec_seeds() {
    let mut parsed = 0;
    for (name, bytes) in seeds("model_spec") {
        let Ok(text) = std::str::from_utf8(&bytes) else { continue };
        if let Ok(spec) = ModelSpec::parse(text) {
            parsed += 1;
            assert!(spec.validate().is_ok(), "{name}");
            assert!(spec.n_random() <= 1 + spec.level1.len());
        }
    }
    assert!(parsed > 0);
}

#[test]
fn sim_config_seeds() {
    let mut parsed = 0;
    for (_, bytes) in seeds("sim_config") {
        let Ok(text) = std::str::from_utf8(&bytes) else { continue };
        let Ok(mut cfg) = SimConfig::parse(text) else { continue };
        parsed += 1;
        cfg.seed %= 1000;
        let _ = simulate(&cfg);
    }
    assert!(parsed > 0);
}
