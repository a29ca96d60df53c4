use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use flowguard::freq::apply_lpf;
use flowguard::linear::AffineDecoder;
use flowguard::tensorio::{read_tensor, write_tensor};
use flowguard::Tensor;
use serde_json::Value;

fn run(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_flowguard"));
    cmd.args(args).env_remove("FLOWGUARD_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn ok_json(args: &[&str]) -> Value {
    let out = run(args, &[]);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["synth"], &[]).status.code(), Some(1));
    assert_eq!(run(&["bogus"], &[]).status.code(), Some(1));
    assert_eq!(run(&["--help"], &[]).status.code(), Some(0));
    let usage = run(&["filter", "--input", "x"], &[]);
    assert_eq!(usage.status.code(), Some(1));
    assert!(usage.stdout.is_empty());
    assert!(!usage.stderr.is_empty());
    let missing = run(&["decode", "--decoder", "/nonexistent", "--input", "a", "--output", "b"], &[]);
    assert_eq!(missing.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.fgt");
    fs::write(&bad, b"nope").unwrap();
    let out = run(&["filter", "--input", p(&bad), "--output", p(&dir.path().join("o.fgt"))], &[]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["synth", "--out", p(dir.path()), "--latent-dims", "4,8"], &[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn seed_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"seed": 11, "n-per-model": 2, "steps": [20, 30], "no-recon": true}"#).unwrap();
    let manifest_of = |name: &str, extra: &[&str], env: &[(&str, &str)]| {
        let out_dir = dir.path().join(name);
        let mut args = vec!["synth", "--out", p(&out_dir)];
        args.extend_from_slice(extra);
        let o = run(&args, env);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(out_dir.join("a/00000/z_20.fgt")).or_else(|_| fs::read(out_dir.join("m0/00000/z_20.fgt"))).unwrap()
    };
    let c = p(&cfg);
    let from_file = manifest_of("f", &["--config", c], &[("FLOWGUARD_SEED", "99")]);
    let from_flag = manifest_of("g", &["--config", c, "--seed", "11"], &[("FLOWGUARD_SEED", "99")]);
    let from_env = manifest_of("e", &["--steps", "20,30", "--n-per-model", "2"], &[("FLOWGUARD_SEED", "11")]);
    let other = manifest_of("o", &["--config", c, "--seed", "12"], &[]);
    assert_eq!(from_file, from_flag);
    assert_eq!(from_file, from_env);
    assert_ne!(from_file, other);
    assert!(!dir.path().join("f/m0/00000/x_20.fgt").exists());
}

#[test]
fn decode_and_filter_match_library() {
    let dir = tempfile::tempdir().unwrap();
    let dec = AffineDecoder::new(
        &[1, 2, 2],
        &[1, 4, 4],
        Tensor::new(vec![16, 4], (0..64).map(|i| i as f32 / 64.0).collect()).unwrap(),
        Tensor::filled(&[16], 0.25).unwrap(),
    )
    .unwrap();
    let dec_dir = dir.path().join("dec");
    dec.save(&dec_dir).unwrap();
    let z = Tensor::new(vec![1, 2, 2], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
    let (zp, xp, yp) = (dir.path().join("z.fgt"), dir.path().join("x.fgt"), dir.path().join("y.fgt"));
    write_tensor(&z, &zp).unwrap();
    let j = ok_json(&["decode", "--decoder", p(&dec_dir), "--input", p(&zp), "--output", p(&xp)]);
    assert_eq!(j["dims"], serde_json::json!([1, 4, 4]));
    let x = read_tensor(&xp).unwrap();
    assert_eq!(x, dec.decode(&z).unwrap());
    let j = ok_json(&["filter", "--input", p(&xp), "--output", p(&yp), "--r", "0.5"]);
    assert!(j["max_imaginary_residue"].as_f64().unwrap() < 1e-6);
    assert_eq!(read_tensor(&yp).unwrap(), apply_lpf(&x, 0.5).unwrap());
}

#[test]
fn pipeline_guard_and_bench() {
    let dir = tempfile::tempdir().unwrap();
    let d = |s: &str| dir.path().join(s).display().to_string();
    let (data, decs, clf) = (d("data"), d("decs"), d("clf"));
    let s = ok_json(&["synth", "--out", &data, "--n-per-model", "4", "--models", "a,b", "--seed", "3"]);
    assert_eq!(s["records"], 8);
    let f = ok_json(&["fit-decoder", "--pairs", &data, "--out", &decs, "--method", "gradient", "--epochs", "2", "--count", "40"]);
    assert_eq!(f.as_array().unwrap().len(), 2);
    let t = ok_json(&["train", "--dataset", &data, "--decoders", &decs, "--out", &clf, "--epochs-per-stage", "1", "--validation", &data]);
    assert_eq!(t["stage_losses"].as_array().unwrap().len(), 4);
    assert!(Path::new(&clf).join("train_report.json").exists());

    let img = d("final.fgt");
    let never = ok_json(&["guard", "--classifier", &clf, "--decoders", &decs, "--dataset", &data, "--record", "1", "--threshold", "2", "--final-image", &img]);
    assert_eq!(never["label"], 0);
    assert_eq!(never["reference_decodes"], 1);
    assert_eq!(read_tensor(&img).unwrap().dims(), &[3, 32, 32]);
    let always = ok_json(&["guard", "--classifier", &clf, "--decoders", &decs, "--dataset", &data, "--threshold", "0", "--steps", "22,30"]);
    assert_eq!(always["label"], 1);
    assert_eq!(always["trigger_step"], 22);
    assert_eq!(always["reference_decodes"], 0);
    assert!(always["final_image_path"].is_null());

    let e = ok_json(&["eval", "--classifier", &clf, "--decoders", &decs, "--dataset", &data, "--threshold", "0"]);
    assert_eq!(e["n"], 8);
    assert_eq!(e["recall"], 1.0);
    let missing = run(&["eval", "--classifier", &clf, "--decoders", &d("nowhere"), "--dataset", &data], &[]);
    assert_eq!(missing.status.code(), Some(1));

    let b = ok_json(&["bench", "--image-dims", "3,16,16", "--hidden-channels", "4", "--batch-sizes", "1,2", "--repetitions", "1"]);
    assert_eq!(b["timing"].as_array().unwrap().len(), 2);
    assert_eq!(b["linear_floats"], 768);
    assert_eq!(b["reference_floats"], 4 * 256 + 768);
}
