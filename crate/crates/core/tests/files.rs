use std::fs;

use dgm_core::driver::dgm_run;
use dgm_core::io::{read_bundle, read_metric, write_bundle, write_metric};
use dgm_core::preprocess::prepare_bundle;
use dgm_core::synth::{generate_benchmark, SynthConfig};
use dgm_core::{DgmConfig, DgmError};

fn bench() -> dgm_core::synth::Benchmark {
    generate_benchmark(&SynthConfig {
        num_identities: 12,
        segment_frac: 0.25,
        seed: 5,
        ..SynthConfig::default()
    })
    .unwrap()
}

#[test]
fn bundles_on_disk_reproduce_the_same_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let b = bench();
    let (pa, pb) = (dir.path().join("a.dgmf"), dir.path().join("b.dgmf"));
    write_bundle(&b.camera_a, &pa).unwrap();
    write_bundle(&b.camera_b, &pb).unwrap();
    let config = DgmConfig::default();
    let run = || {
        let (a, b) = prepare_bundle(&read_bundle(&pa).unwrap(), &read_bundle(&pb).unwrap(), &config).unwrap();
        dgm_run(&a, &b, &config).unwrap()
    };
    let (x, y) = (run(), run());
    assert_eq!(x.history, y.history);
    assert_eq!(x.assignment, y.assignment);

    let pm = dir.path().join("m.dgmm");
    write_metric(&x.metric, &pm).unwrap();
    assert_eq!(read_metric(&pm).unwrap(), x.metric);
}

#[test]
fn damaged_files_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.dgmf");
    write_bundle(&bench().camera_a, &path).unwrap();
    let bytes = fs::read(&path).unwrap();

    fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(read_bundle(&path), Err(DgmError::TruncatedFile)));

    let mut more = bytes.clone();
    more[8..12].copy_from_slice(&(u32::from_le_bytes(bytes[8..12].try_into().unwrap()) + 1).to_le_bytes());
    fs::write(&path, &more).unwrap();
    assert!(matches!(read_bundle(&path), Err(DgmError::TruncatedFile)));

    fs::write(&path, &bytes).unwrap();
    assert!(matches!(read_metric(&path), Err(DgmError::BadMagic { .. })));

    let mut version = bytes;
    version[4] = 9;
    fs::write(&path, &version).unwrap();
    assert!(matches!(read_bundle(&path), Err(DgmError::VersionUnsupported(9))));
}
