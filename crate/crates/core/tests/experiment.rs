use std::fs;
use std::path::Path;

use stegocrack::experiment::{run_manifest, ExperimentManifest, Protocol, RunOptions, METRICS_HEADER};

fn tiny(protocol: Protocol, out: &Path) -> ExperimentManifest {
    let mut m = ExperimentManifest::parse(
        "dataset.n_train = 4\ndataset.n_test = 2\ndataset.resolution = 8x8\n\
         train.steps = 3\ntrain.batch_size = 2\ntrain.base_width = 4\ntrain.depth = 1\n\
         train.epoch_steps = 2\ntune.budget = 3\ntune.init = 2\n",
    )
    .unwrap();
    m.protocol = protocol;
    m.output = out.to_path_buf();
    m
}

fn read(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["", "weights", "grids", "traces"] {
        let d = dir.join(sub);
        let Ok(entries) = fs::read_dir(&d) else { continue };
        for e in entries {
            let p = e.unwrap().path();
            if p.is_file() {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), read(&p)));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn per_bit_layout_and_reproducibility() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let summary = run_manifest(&tiny(Protocol::PerBit, &a), &RunOptions::default()).unwrap();
    assert_eq!(summary.metrics.len(), 18);
    let csv = String::from_utf8(read(&a.join("metrics.csv"))).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER);
    for bits in 0..=8 {
        for split in ["train", "test"] {
            assert_eq!(lines.iter().filter(|l| l.starts_with(&format!("per-bit,cyclegan,{bits},{split},"))).count(), 1);
        }
        assert!(a.join(format!("weights/cyclegan_b{bits}.sgw")).is_file());
        assert!(a.join(format!("grids/cyclegan_b{bits}_train.png")).is_file());
        assert!(a.join(format!("grids/cyclegan_b{bits}_test.png")).is_file());
    }
    assert_eq!(fs::read_dir(a.join("weights")).unwrap().count(), 9);
    // a parallel rerun into another directory produces the same bytes
    let mut m = tiny(Protocol::PerBit, &b);
    run_manifest(&m, &RunOptions { jobs: 4, wall_clock: false }).unwrap();
    m.output = a.clone();
    let ta = tree(&a);
    let tb: Vec<_> = tree(&b)
        .into_iter()
        .map(|(n, bytes)| if n == "manifest.cfg" { (n, m.to_text().into_bytes()) } else { (n, bytes) })
        .collect();
    assert_eq!(ta, tb);
}

#[test]
fn autoencoder_and_comparison() {
    let tmp = tempfile::tempdir().unwrap();
    let s = run_manifest(&tiny(Protocol::AutoencoderPerBit, tmp.path()), &RunOptions::default()).unwrap();
    assert!(s.metrics.iter().all(|r| r.model == "autoencoder"));
    assert_eq!(s.metrics.len(), 18);

    let mut m = tiny(Protocol::Comparison, &tmp.path().join("cmp"));
    m.train.bits = "7..8".parse().unwrap();
    let s = run_manifest(&m, &RunOptions::default()).unwrap();
    assert_eq!(s.metrics.len(), 8);
    assert_eq!(s.comparison.len(), 2);
    let csv = fs::read_to_string(tmp.path().join("cmp/comparison.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(s.comparison.iter().all(|r| r.cyclegan_diversity > 0.0));
}

#[test]
fn varying_bit_reports_every_depth() {
    let tmp = tempfile::tempdir().unwrap();
    let s = run_manifest(&tiny(Protocol::VaryingBit, tmp.path()), &RunOptions::default()).unwrap();
    assert_eq!(s.metrics.len(), 18);
    assert!(s.metrics.iter().all(|r| r.model == "cyclegan-varying" && r.steps == 4));
    let trace = fs::read_to_string(tmp.path().join("traces/cyclegan_varying.csv")).unwrap();
    assert!(trace.starts_with("step,bit_size,"));
    assert_eq!(trace.lines().count(), 5);
}

#[test]
fn tune_protocol_writes_report() {
    let tmp = tempfile::tempdir().unwrap();
    let s = run_manifest(&tiny(Protocol::Tune, tmp.path()), &RunOptions::default()).unwrap();
    let t = s.tune.unwrap();
    assert_eq!(t.rows.len(), 3);
    assert!(t.best_final() >= t.best_initial);
    let csv = fs::read_to_string(tmp.path().join("tune.csv")).unwrap();
    assert!(csv.starts_with("# bit_depth=8"));
    assert!(tmp.path().join("tune_before.png").is_file() && tmp.path().join("tune_after.png").is_file());
    assert_eq!(s.metrics.len(), 2);
}

#[test]
fn depth_context_on_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let mut m = tiny(Protocol::PerBit, tmp.path());
    m.train.lr_g = 1e300;
    m.train.lr_d = 1e300;
    m.train.steps = 5;
    let err = run_manifest(&m, &RunOptions::default()).unwrap_err();
    assert!(err.to_string().starts_with("bit depth 0"), "{err}");
}
