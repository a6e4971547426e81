use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dmvc::dataio::load_view;

fn dmvc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dmvc")).args(args).output().unwrap()
}

fn synth(dir: &Path, preset: &str) -> PathBuf {
    let out = dir.join(preset);
    let res = dmvc(&["synth", "--config", preset, "--out", out.to_str().unwrap(), "--seed", "1"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    out.join("manifest.json")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn per_view_kmeans_writes_one_partition_per_view() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "easy");
    let out = dir.path().join("run");
    let res = dmvc(&[
        "cluster", "--manifest", manifest.to_str().unwrap(), "--method", "km", "--nmi",
        "--out-dir", out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    let report = String::from_utf8(res.stdout).unwrap();
    assert!(report.starts_with("dataset\tmethod\tscope\tk\tseed\tnmi\tseconds\n"));
    let final_line = report.lines().last().unwrap();
    assert!(final_line.contains("\tfinal\t4\t1\t1.000000\t"), "{final_line}");
    for file in ["partition.txt", "partition_a.txt", "partition_b.txt", "report.tsv"] {
        assert!(out.join(file).is_file(), "{file}");
    }
    assert_eq!(fs::read_to_string(out.join("partition.txt")).unwrap().lines().count(), 200);
}

#[test]
fn deep_method_dumps_embeddings_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "complementary");
    let out = dir.path().join("run");
    let res = dmvc(&[
        "cluster", "--manifest", manifest.to_str().unwrap(), "--method", "dmvc-fix",
        "--seed", "2", "--out-dir", out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    let report = String::from_utf8(res.stdout).unwrap();
    for scope in ["branch:a", "branch:b", "head", "final"] {
        assert!(report.contains(&format!("\t{scope}\t")), "{scope} missing:\n{report}");
    }
    let emb = load_view(out.join("embedding.mvcv")).unwrap();
    assert_eq!((emb.n_samples(), emb.dim()), (200, 4));
    assert!(fs::read_to_string(out.join("train_log.tsv")).unwrap().starts_with("stage\titeration"));
}

#[test]
fn unknown_clusterer_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "easy");
    let res = dmvc(&["cluster", "--manifest", manifest.to_str().unwrap(), "--method", "mvec:spectral"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(stderr(&res).contains("unknown clusterer"));
}

#[test]
fn too_many_clusters_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "easy");
    let res = dmvc(&["cluster", "--manifest", manifest.to_str().unwrap(), "--method", "km", "--k", "500"]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn nmi_without_labels_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "easy");
    let mut json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    json.as_object_mut().unwrap().remove("labels_path");
    fs::write(&manifest, json.to_string()).unwrap();
    let m = manifest.to_str().unwrap();
    let res = dmvc(&["cluster", "--manifest", m, "--method", "km", "--k", "4", "--nmi"]);
    assert_eq!(res.status.code(), Some(2));
    let res = dmvc(&["cluster", "--manifest", m, "--method", "km", "--k", "4"]);
    assert!(res.status.success());
    assert!(String::from_utf8(res.stdout).unwrap().contains("\tNA\t"));
}

#[test]
fn synth_names_uncovered_classes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"name":"bad","n_classes":4,"samples_per_class":5,
            "views":[{"name":"a","resolved":[0,1],"dim":3,"separation":5,"noise_std":1}]}"#,
    )
    .unwrap();
    let res = dmvc(&["synth", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_ne!(res.status.code(), Some(0));
    assert!(stderr(&res).contains("[2, 3]"), "{}", stderr(&res));
}

#[test]
fn synth_is_byte_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (ma, mb) = (synth(a.path(), "hard"), synth(b.path(), "hard"));
    for file in ["a.mvcv", "b.mvcv", "noise.mvcv", "labels.txt", "manifest.json"] {
        let pa = ma.parent().unwrap().join(file);
        let pb = mb.parent().unwrap().join(file);
        assert_eq!(fs::read(pa).unwrap(), fs::read(pb).unwrap(), "{file}");
    }
}

#[test]
fn bench_single_cell_and_empty_methods() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "easy");
    let table_path = dir.path().join("table.tsv");
    let res = dmvc(&[
        "bench", "--manifests", manifest.to_str().unwrap(), "--methods", "cc", "--seeds", "0,1",
        "--out", table_path.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    let table = fs::read_to_string(&table_path).unwrap();
    assert_eq!(table, String::from_utf8(res.stdout).unwrap());
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines, ["method\teasy\taverage", "cc\t1.0000±0.0000*\t1.0000*"]);

    let res = dmvc(&["bench", "--manifests", manifest.to_str().unwrap(), "--methods", "--seeds", "0"]);
    assert_eq!(res.status.code(), Some(2));
}
