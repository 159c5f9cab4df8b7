use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use drfn_core::data::{decode_archive, encode_archive, load_image, save_luminance, ImageY};
use drfn_core::model::{encode_checkpoint, load_checkpoint, save_checkpoint, DrfnModel, ModelConfig};

fn drfn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drfn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn texture(h: usize, w: usize, phase: f32) -> ImageY {
    ImageY::from_fn(h, w, |y, x| {
        let (y, x) = (y as f32, x as f32);
        0.5 + 0.3 * (0.3 * x + phase).sin() * (0.2 * y).cos()
    })
    .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// One 64×64 image in `dir/hr`.
fn hr_dir(dir: &Path) -> PathBuf {
    let hr = dir.join("hr");
    fs::create_dir_all(&hr).unwrap();
    save_luminance(&texture(64, 64, 0.0), hr.join("img.png")).unwrap();
    hr
}

#[test]
fn prepare_counts_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let hr = hr_dir(dir.path());
    let out = dir.path().join("a.drfp");
    let o = drfn(&["prepare", "--hr-dir", p(&hr), "--out", p(&out), "--scale", "4", "--lr-patch", "8", "--stride", "4"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("9 pairs"));
    assert!(stdout(&o).contains("lr_patch = 8"));
    assert_eq!(decode_archive(&fs::read(&out).unwrap()).unwrap().len(), 9);

    let o = drfn(&["prepare", "--hr-dir", p(&hr), "--out", p(&out), "--scale", "4", "--lr-patch", "8", "--augment"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("72 pairs"));
}

#[test]
fn prepare_skips_bad_files_and_rejects_empty_dirs() {
    let dir = tempfile::tempdir().unwrap();
    let hr = hr_dir(dir.path());
    fs::write(hr.join("broken.png"), b"nope").unwrap();
    let out = dir.path().join("a.drfp");
    let o = drfn(&["prepare", "--hr-dir", p(&hr), "--out", p(&out), "--scale", "4", "--lr-patch", "8"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("skipping"));

    let empty = dir.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    let o = drfn(&["prepare", "--hr-dir", p(&empty), "--out", p(&out)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("no decodable images"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&drfn(&["selftest", "--no-such-flag"])), 1);
    assert_eq!(code(&drfn(&["frobnicate"])), 1);
    assert_eq!(code(&drfn(&[])), 1);
    assert_eq!(code(&drfn(&["--help"])), 0);
    let dir = tempfile::tempdir().unwrap();
    let hr = hr_dir(dir.path());
    let o = drfn(&["prepare", "--hr-dir", p(&hr), "--out", p(&dir.path().join("x")), "--scale", "5"]);
    assert_eq!(code(&o), 1);
}

fn tiny_archive(dir: &Path) -> PathBuf {
    let hr = hr_dir(dir);
    save_luminance(&texture(48, 40, 1.0), hr.join("second.png")).unwrap();
    let out = dir.join("tiny.drfp");
    let o = drfn(&["prepare", "--hr-dir", p(&hr), "--out", p(&out), "--scale", "2", "--lr-patch", "6", "--stride", "6"]);
    assert_eq!(code(&o), 0);
    out
}

const TINY_MODEL: [&str; 6] = ["--channels", "4", "--cycles", "2", "--levels", "3"];

#[test]
fn zero_epochs_writes_fresh_model() {
    let dir = tempfile::tempdir().unwrap();
    let archive = tiny_archive(dir.path());
    let ckpt = dir.path().join("m.drfn");
    let mut args = vec!["--seed", "5", "train", "--archive", p(&archive), "--out", p(&ckpt), "--epochs", "0"];
    args.extend(TINY_MODEL);
    let o = drfn(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let fresh = DrfnModel::build(
        ModelConfig {
            scale: 2,
            channels: 4,
            cycles: 2,
            ..Default::default()
        },
        5,
    )
    .unwrap();
    assert_eq!(load_checkpoint(&ckpt).unwrap(), fresh);
}

#[test]
fn training_reduces_loss_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let archive = tiny_archive(dir.path());
    let run = |name: &str| {
        let ckpt = dir.path().join(name);
        let mut args = vec![
            "--deterministic",
            "--seed",
            "3",
            "train",
            "--archive",
            p(&archive),
            "--out",
            p(&ckpt),
            "--batch",
            "4",
            "--lr",
            "0.01",
            "--clip-a",
            "1e-4",
            "--epochs",
            "1000",
            "--max-iterations",
            "200",
            "--plateau-epochs",
            "0",
            "--no-epoch-checkpoints",
        ];
        args.extend(TINY_MODEL);
        let o = drfn(&args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let log = fs::read_to_string(format!("{}.loss.csv", ckpt.display())).unwrap();
        (fs::read(&ckpt).unwrap(), log)
    };
    let (c1, log1) = run("a.drfn");
    let (c2, log2) = run("b.drfn");
    assert_eq!(c1, c2);
    assert_eq!(log1, log2);

    let losses: Vec<f64> = log1
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(losses.len(), 200);
    let head: f64 = losses[..10].iter().sum::<f64>() / 10.0;
    let tail: f64 = losses[190..].iter().sum::<f64>() / 10.0;
    assert!(tail < head, "{head} -> {tail}");
}

#[test]
fn epoch_checkpoints_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let archive = tiny_archive(dir.path());
    let ckpt = dir.path().join("m.drfn");
    let mut args = vec![
        "train", "--archive", p(&archive), "--out", p(&ckpt), "--epochs", "2", "--batch", "64", "--lr", "0.001",
    ];
    args.extend(TINY_MODEL);
    assert_eq!(code(&drfn(&args)), 0);
    assert!(dir.path().join("m.drfn.epoch001").exists());
    assert!(dir.path().join("m.drfn.epoch002").exists());
}

#[test]
fn bad_archive_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let archive = tiny_archive(dir.path());
    let mut bytes = fs::read(&archive).unwrap();
    bytes[0] = b'X';
    let bad = dir.path().join("bad.drfp");
    fs::write(&bad, &bytes).unwrap();
    let o = drfn(&["train", "--archive", p(&bad), "--out", p(&dir.path().join("m"))]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("magic"));
    // the unmodified archive still decodes
    let a = decode_archive(&fs::read(&archive).unwrap()).unwrap();
    assert_eq!(decode_archive(&encode_archive(&a)).unwrap(), a);
}

fn x4_checkpoint(dir: &Path, zero: bool) -> PathBuf {
    let cfg = ModelConfig {
        scale: 4,
        channels: 3,
        cycles: 1,
        ..Default::default()
    };
    let m = if zero { DrfnModel::zeros(cfg).unwrap() } else { DrfnModel::build(cfg, 1).unwrap() };
    let path = dir.join(if zero { "zero.drfn" } else { "x4.drfn" });
    save_checkpoint(&m, &path).unwrap();
    path
}

#[test]
fn sr_grayscale_shape_and_zero_model() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.png");
    save_luminance(&texture(8, 8, 0.0), &input).unwrap();
    let out = dir.path().join("out.png");
    let o = drfn(&["sr", "--model", p(&x4_checkpoint(dir.path(), false)), "--input", p(&input), "--output", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let img = image::open(&out).unwrap();
    assert_eq!((img.width(), img.height()), (32, 32));
    assert!(!img.color().has_color());

    let o = drfn(&["sr", "--model", p(&x4_checkpoint(dir.path(), true)), "--input", p(&input), "--output", p(&out)]);
    assert_eq!(code(&o), 0);
    let zero = load_image(&out).unwrap();
    assert!(zero.luma.values().iter().all(|&v| v == 0.0));
}

#[test]
fn sr_color_keeps_color() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.png");
    image::RgbImage::from_fn(6, 5, |x, y| image::Rgb([(x * 40) as u8, (y * 50) as u8, 90]))
        .save(&input)
        .unwrap();
    let out = dir.path().join("out.png");
    let o = drfn(&["sr", "--model", p(&x4_checkpoint(dir.path(), false)), "--input", p(&input), "--output", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let img = image::open(&out).unwrap();
    assert_eq!((img.width(), img.height()), (24, 20));
    assert!(img.color().has_color());
}

#[test]
fn sr_errors() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.png");
    save_luminance(&texture(8, 8, 0.0), &input).unwrap();
    let ckpt = x4_checkpoint(dir.path(), false);
    let bytes = fs::read(&ckpt).unwrap();
    let cut = dir.path().join("cut.drfn");
    fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
    let out = dir.path().join("o.png");
    assert_eq!(code(&drfn(&["sr", "--model", p(&cut), "--input", p(&input), "--output", p(&out)])), 2);
    let missing = dir.path().join("missing.png");
    assert_eq!(code(&drfn(&["sr", "--model", p(&ckpt), "--input", p(&missing), "--output", p(&out)])), 2);
    assert_eq!(encode_checkpoint(&load_checkpoint(&ckpt).unwrap()), bytes);
}

#[test]
fn sr_then_eval_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (gt, lr, sr) = (dir.path().join("gt"), dir.path().join("lr"), dir.path().join("sr"));
    for d in [&gt, &lr, &sr] {
        fs::create_dir_all(d).unwrap();
    }
    for (i, name) in ["a.png", "b.png"].iter().enumerate() {
        let img = texture(48, 48, i as f32);
        save_luminance(&img, gt.join(name)).unwrap();
        let small = drfn_core::data::bicubic_resize(&img, 12, 12).unwrap();
        save_luminance(&small, lr.join(name)).unwrap();
    }
    let ckpt = x4_checkpoint(dir.path(), false);
    let run = || {
        for name in ["a.png", "b.png"] {
            let o = drfn(&["--deterministic", "sr", "--model", p(&ckpt), "--input", p(&lr.join(name)), "--output", p(&sr.join(name))]);
            assert_eq!(code(&o), 0);
        }
        let csv = dir.path().join("r.csv");
        let o = drfn(&["eval", "--sr-dir", p(&sr), "--gt-dir", p(&gt), "--scale", "4", "--csv", p(&csv)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        fs::read_to_string(csv).unwrap()
    };
    let first = run();
    assert_eq!(first, run());
    assert!(first.starts_with("name,psnr,ssim\na.png,"));
}

#[test]
fn eval_identity_and_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt");
    fs::create_dir_all(&gt).unwrap();
    for name in ["x.png", "y.png"] {
        save_luminance(&texture(30, 30, 0.5), gt.join(name)).unwrap();
    }
    let o = drfn(&["eval", "--sr-dir", p(&gt), "--gt-dir", p(&gt), "--scale", "2"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("MEAN"));
    assert!(stdout(&o).contains("inf"));

    let sr = dir.path().join("sr");
    fs::create_dir_all(&sr).unwrap();
    fs::copy(gt.join("x.png"), sr.join("x.png")).unwrap();
    let o = drfn(&["eval", "--sr-dir", p(&sr), "--gt-dir", p(&gt), "--scale", "2"]);
    assert_eq!(code(&o), 2);
    assert!(stdout(&o).contains("y.png  FAILED"));
}

#[test]
fn config_file_values_are_used_and_overridden() {
    let dir = tempfile::tempdir().unwrap();
    let hr = hr_dir(dir.path());
    let out = dir.path().join("a.drfp");
    let cfg = dir.path().join("prep.cfg");
    fs::write(&cfg, format!("hr_dir={}\nout={}\nscale=4\nlr_patch=8\nstride=8\n", p(&hr), p(&out))).unwrap();
    let o = drfn(&["--config", p(&cfg), "prepare", "--hr-dir", p(&hr), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("4 pairs"));
    let o = drfn(&["--config", p(&cfg), "prepare", "--hr-dir", p(&hr), "--out", p(&out), "--stride", "4"]);
    assert!(stdout(&o).contains("9 pairs"));
}

#[test]
fn selftest_subset_passes() {
    let o = drfn(&["selftest", "--filter", "params/"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("PASS params/savings_identity"));
    assert_eq!(code(&drfn(&["selftest", "--filter", "nothing-matches"])), 1);
}
