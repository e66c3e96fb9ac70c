use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bsif(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bsif"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env_remove("BSIF_OUT_DIR")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = bsif(dir, args);
    assert!(
        out.status.success(),
        "bsif {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn count_ext(dir: &Path, ext: &str) -> usize {
    fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == ext))
        .count()
}

/// Small synthetic dataset plus a trained n=6, l=7 bank.
fn setup(dir: &Path) {
    ok(dir, &["synth", "--classes", "5", "--samples", "2", "--seed", "1", "--out", "data"]);
    ok(dir, &["synth", "--classes", "4", "--samples", "1", "--seed", "2", "--out", "train"]);
    ok(
        dir,
        &["extract-patches", "--manifest", "train/manifest.csv", "--regions", "train", "--sizes", "7", "--count", "60", "--out", "corpus"],
    );
    ok(dir, &["train", "--corpus", "corpus", "--n", "6", "--l", "7", "--out", "banks"]);
}

#[test]
fn encode_compare_and_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    setup(d);
    ok(d, &["encode", "--manifest", "data/manifest.csv", "--bank", "banks/bank_n06_l07.bsf", "--out", "tpl"]);
    assert_eq!(count_ext(&d.join("tpl"), "bst"), 10);

    let a = "tpl/images_c000_s00.pgm.bst";
    let self_score: Value = serde_json::from_str(ok(d, &["compare", a, a]).trim()).unwrap();
    assert_eq!(self_score["value"], 0.0);
    assert_eq!(self_score["strategy"], "hd-mean");
    assert_eq!(self_score["best_shift"], 0);
    let all = ok(d, &["compare", a, "tpl/images_c001_s00.pgm.bst", "--strategy", "all"]);
    let lines: Vec<Value> = all.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 5);
    let names: Vec<&str> = lines.iter().map(|l| l["strategy"].as_str().unwrap()).collect();
    assert_eq!(names, ["hist-raw", "hist-norm", "hd-mean", "hd-min", "hd-max"]);

    ok(d, &["train", "--random", "--n", "6", "--l", "7", "--out", "rnd"]);
    for (bank, out) in [("banks/bank_n06_l07.bsf", "ea"), ("rnd/bank_n06_l07.bsf", "eb")] {
        ok(
            d,
            &["eval", "--manifest", "data/manifest.csv", "--bank", bank, "--strategy", "hd-mean", "--bootstrap", "30", "--out", out],
        );
    }
    let report: Value = serde_json::from_slice(&fs::read(d.join("ea/eval_report.json")).unwrap()).unwrap();
    let ev = &report["evaluations"][0];
    assert_eq!(ev["bootstrap"]["values"].as_array().unwrap().len(), 30);
    assert_eq!(report["pairs"]["genuine"], 5);
    assert_eq!(report["pairs"]["impostor"], 5);
    assert_eq!(report["config"]["seed"], 0);

    let cmp = ok(d, &["eval", "--reports", "ea/eval_report.json", "eb/eval_report.json", "--out", "cmp"]);
    let cmp: Value = serde_json::from_str(cmp.trim()).unwrap();
    let p = cmp["anova"]["p_value"].as_f64().unwrap();
    assert!(p > 0.0 && p <= 1.0);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    setup(d);

    fs::create_dir(d.join("empty")).unwrap();
    let out = bsif(d, &["extract-patches", "--manifest", "data/manifest.csv", "--regions", "empty", "--out", "c2"]);
    assert_eq!(code(&out), 2);
    assert!(!out.stderr.is_empty());

    let out = bsif(d, &["train", "--corpus", "corpus", "--n", "9", "--l", "3", "--out", "b2"]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(code(&bsif(d, &["train", "--corpus", "corpus", "--out", "b2"])), 2);
    assert_eq!(code(&bsif(d, &["compare", "--strategy", "hd-median", "x", "y"])), 2);

    ok(d, &["train", "--random", "--n", "5", "--l", "7", "--out", "b5"]);
    ok(d, &["encode", "--manifest", "data/manifest.csv", "--bank", "banks/bank_n06_l07.bsf", "--out", "t6"]);
    ok(d, &["encode", "--manifest", "data/manifest.csv", "--bank", "b5/bank_n05_l07.bsf", "--out", "t5"]);
    let out = bsif(d, &["compare", "t6/images_c000_s00.pgm.bst", "t5/images_c000_s00.pgm.bst"]);
    assert_eq!(code(&out), 2);

    fs::remove_file(d.join("data/images/c002_s01_mask.pgm")).unwrap();
    let out = bsif(d, &["encode", "--manifest", "data/manifest.csv", "--bank", "banks/bank_n06_l07.bsf", "--out", "t7"]);
    assert_eq!(code(&out), 3);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["failures"].as_object().unwrap().len(), 1);
    assert!(report["failures"]["images/c002_s01.pgm"].is_string());
    assert_eq!(count_ext(&d.join("t7"), "bst"), 9);

    fs::write(d.join("bad.csv"), "image,mask\nx,y\n").unwrap();
    assert_eq!(code(&bsif(d, &["encode", "--manifest", "bad.csv", "--bank", "banks/bank_n06_l07.bsf", "--out", "t8"])), 3);

    // a single subject yields no impostor pairs
    ok(d, &["synth", "--classes", "1", "--samples", "3", "--out", "one"]);
    let out = bsif(d, &["eval", "--manifest", "one/manifest.csv", "--bank", "banks/bank_n06_l07.bsf", "--out", "e1"]);
    assert_eq!(code(&out), 4);
}

#[test]
fn standard_sizes_grid_training_and_ranking() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--classes", "6", "--samples", "1", "--seed", "3", "--max-occlusion", "0", "--out", "train"]);
    let out = ok(d, &["extract-patches", "--manifest", "train/manifest.csv", "--regions", "train", "--count", "20", "--out", "corpus"]);
    let report: Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(report["files"].as_object().unwrap().len(), 12);
    assert_eq!(count_ext(&d.join("corpus"), "bsp"), 12);

    ok(d, &["train", "--corpus", "corpus", "--grid", "--out", "banks"]);
    assert_eq!(count_ext(&d.join("banks"), "bsf"), 96);

    ok(d, &["synth", "--classes", "3", "--samples", "2", "--seed", "4", "--width", "128", "--height", "48", "--max-shift", "4", "--out", "sel"]);
    let out = ok(d, &["eval", "--manifest", "sel/manifest.csv", "--bank-dir", "banks", "--grid", "--max-shift", "4", "--out", "grid"]);
    let cells: Vec<Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(cells.len(), 480);
    let d_primes: Vec<f64> = cells.iter().filter_map(|c| c["d_prime"].as_f64()).collect();
    assert!(d_primes.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn out_dir_from_environment_and_subject_overlap_warning() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    setup(d);
    let out = Command::new(env!("CARGO_BIN_EXE_bsif"))
        .current_dir(d)
        .env("BSIF_OUT_DIR", d.join("envout"))
        .env("RUST_LOG", "warn")
        .args(["encode", "--manifest", "data/manifest.csv", "--bank", "banks/bank_n06_l07.bsf", "--disjoint-from", "train/manifest.csv"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(count_ext(&d.join("envout"), "bst"), 10);
    // both synthetic sets name their classes c000, c001, ...
    assert!(String::from_utf8_lossy(&out.stderr).contains("subject-disjoint"));
}

#[test]
fn circle_columns_unwrap_regions() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--classes", "2", "--samples", "1", "--max-occlusion", "0", "--out", "data"]);
    // 300x300 source-image region covering the upper half of the plane
    let w = 300;
    let mut px = vec![0u8; w * w];
    for y in 0..150 {
        for x in 0..w {
            px[y * w + x] = 255;
        }
    }
    let mut bytes = format!("P5\n{w} {w}\n255\n").into_bytes();
    bytes.extend(&px);
    fs::create_dir(d.join("reg")).unwrap();
    fs::write(d.join("reg/half.pgm"), bytes).unwrap();
    fs::write(
        d.join("reg/regions.csv"),
        "image,region,source,accepted,pupil_x,pupil_y,pupil_r,iris_x,iris_y,iris_r\n\
         images/c000_s00.pgm,half.pgm,gaze,1,150,150,50,150,150,120\n\
         images/c001_s00.pgm,half.pgm,gaze,0,150,150,50,150,150,120\n",
    )
    .unwrap();
    let out = ok(d, &["extract-patches", "--manifest", "data/manifest.csv", "--regions", "reg", "--sizes", "7", "--count", "5", "--out", "c"]);
    let r: Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(r["report"]["source"], "gaze");
    assert_eq!(r["report"]["regions_used"], 1);
    assert_eq!(r["report"]["regions_rejected"], 1);
    assert_eq!(r["report"]["counts"]["7"], 5);
}
