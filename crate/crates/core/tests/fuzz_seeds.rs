//! Replays the checked-in fuzz corpus through the same properties the fuzz
//! targets assert, so regressions show up without libFuzzer.

use std::fs;
use std::path::PathBuf;

use hebm::bench::{compare_report, parse_report, RunRecord};
use hebm::config::{Config, ScenarioSpec};
use hebm::datagen::{parse_metadata, Dataset};
use hebm::refsim::{log_from_csv, log_to_csv};
use hebm::slipnet::{Checkpoint, NetworkWeights, Normalizer};
use hebm::PathRef;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn text_seeds(target: &str) -> Vec<(String, String)> {
    seeds(target).into_iter().map(|(n, b)| (n, String::from_utf8(b).expect("text seed"))).collect()
}

#[test]
fn path_csv() {
    for (name, text) in text_seeds("path_csv") {
        let path = PathRef::from_csv(&text, 10.0).unwrap_or_else(|e| panic!("{name}: {e}"));
        let csv = path.to_csv();
        assert_eq!(PathRef::from_csv(&csv, 10.0).unwrap().to_csv(), csv, "{name}");
    }
}

#[test]
fn weights() {
    for (name, bytes) in seeds("weights") {
        let w = NetworkWeights::from_bytes(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(w.to_bytes(), bytes, "{name}");
    }
}

#[test]
fn checkpoint() {
    for (name, bytes) in seeds("checkpoint") {
        // the seed is a truncated checkpoint and must be refused cleanly
        assert!(Checkpoint::decode(&bytes).is_err(), "{name}");
    }
}

#[test]
fn config() {
    for (name, text) in text_seeds("config") {
        let config = Config::parse(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        let dumped = config.to_text();
        assert_eq!(Config::parse(&dumped).unwrap(), config, "{name}");
    }
}

#[test]
fn scenario_spec() {
    for (name, text) in text_seeds("scenario_spec") {
        match ScenarioSpec::parse(&text) {
            Ok(spec) => {
                assert_eq!(ScenarioSpec::parse(&spec.to_string()).unwrap(), spec, "{name}");
                spec.build(30.0).unwrap_or_else(|e| panic!("{name}: {e}"));
            }
            Err(_) => assert_eq!(name, "huge_speed"),
        }
    }
}

#[test]
fn dataset_csv() {
    for (name, text) in text_seeds("dataset_csv") {
        match Dataset::from_csv(&text, Normalizer::default(), 0) {
            Ok(ds) => {
                let csv = ds.to_csv();
                assert_eq!(Dataset::from_csv(&csv, Normalizer::default(), 0).unwrap().to_csv(), csv, "{name}");
            }
            // a window shorter than one trajectory is refused, not truncated
            Err(e) => assert!(name.starts_with("two_rows"), "{name}: {e}"),
        }
    }
}

#[test]
fn dataset_meta() {
    for (name, text) in text_seeds("dataset_meta") {
        parse_metadata(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn sim_log() {
    for (name, text) in text_seeds("sim_log") {
        let rows = log_from_csv(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(log_to_csv(&log_from_csv(&log_to_csv(&rows)).unwrap()), log_to_csv(&rows), "{name}");
    }
}

#[test]
fn run_record() {
    for (name, text) in text_seeds("run_record") {
        let record = RunRecord::from_text(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(RunRecord::from_text(&record.to_text()).unwrap(), record, "{name}");
    }
}

#[test]
fn report() {
    for (name, text) in text_seeds("report") {
        let rows = parse_report(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        let csv = compare_report(&rows);
        assert_eq!(parse_report(&csv).unwrap(), rows, "{name}");
    }
}
