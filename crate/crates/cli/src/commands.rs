//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use drfn_core::data::{
    bicubic_resize, list_images, load_archive, load_image, save_archive, save_color, save_luminance, ImageY,
    PatchArchive, YCbCr,
};
use drfn_core::metrics::evaluate_dataset;
use drfn_core::model::{load_checkpoint, save_checkpoint, DrfnModel, ModelConfig};
use drfn_core::selftest::{default_checks, run_checks};
use drfn_core::train::{format_loss_log, train_loop, Progress, TrainConfig};

use crate::args::{EvalArgs, PrepareArgs, SelftestArgs, SrArgs, TrainArgs};
use crate::Failure;

fn print_config(title: &str, entries: &[(&str, String)]) {
    println!("[{title}]");
    for (k, v) in entries {
        println!("  {k} = {v}");
    }
}

fn show(p: &Path) -> String {
    p.display().to_string()
}

pub fn default_lr_patch(scale: u32) -> usize {
    if scale == 8 {
        16
    } else {
        32
    }
}

pub fn prepare(a: &PrepareArgs, seed: u64) -> Result<(), Failure> {
    let lr_patch = a.lr_patch.unwrap_or_else(|| default_lr_patch(a.scale));
    print_config(
        "prepare",
        &[
            ("hr_dir", show(&a.hr_dir)),
            ("out", show(&a.out)),
            ("scale", a.scale.to_string()),
            ("lr_patch", lr_patch.to_string()),
            ("stride", a.stride.to_string()),
            ("augment", a.augment.to_string()),
            ("seed", seed.to_string()),
        ],
    );
    if ModelConfig::with_scale(a.scale).validate().is_err() {
        return Err(Failure::usage(anyhow!("unsupported scale {}", a.scale)));
    }
    let files = list_images(&a.hr_dir).map_err(Failure::data)?;
    let mut images = Vec::new();
    for f in &files {
        match load_image(f) {
            Ok(img) => images.push(img.luma),
            Err(e) => eprintln!("warning: skipping {}: {e}", f.display()),
        }
    }
    if images.is_empty() {
        return Err(Failure::data(anyhow!("no decodable images in {}", a.hr_dir.display())));
    }
    let archive = PatchArchive::from_images(&images, a.scale as usize, lr_patch, a.stride, a.augment).map_err(Failure::data)?;
    save_archive(&archive, &a.out).map_err(Failure::data)?;
    println!("{} pairs from {} images written to {}", archive.len(), images.len(), a.out.display());
    Ok(())
}

fn epoch_checkpoint_path(out: &Path, epoch: usize) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".epoch{:03}", epoch + 1));
    out.with_file_name(name)
}

pub fn train(a: &TrainArgs, seed: u64) -> Result<(), Failure> {
    let archive = load_archive(&a.archive)
        .with_context(|| format!("loading {}", a.archive.display()))
        .map_err(Failure::data)?;
    let model_cfg = ModelConfig {
        scale: archive.scale() as u32,
        channels: a.channels,
        cycles: a.cycles,
        blocks: 2,
        levels: a.levels,
    };
    let cfg = TrainConfig {
        batch: a.batch,
        momentum: a.momentum,
        weight_decay: a.weight_decay,
        lr_initial: a.lr,
        lr_decay: a.lr_decay,
        lr_step_epochs: a.lr_step_epochs,
        clip_a: a.clip_a,
        epochs: a.epochs,
        seed,
        max_iterations: a.max_iterations,
        plateau_epochs: a.plateau_epochs,
    };
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut n = a.out.as_os_str().to_os_string();
        n.push(".loss.csv");
        PathBuf::from(n)
    });
    print_config(
        "train",
        &[
            ("archive", show(&a.archive)),
            ("pairs", archive.len().to_string()),
            ("lr_patch", archive.lr_patch().to_string()),
            ("model", model_cfg.to_string()),
            ("batch", cfg.batch.to_string()),
            ("momentum", cfg.momentum.to_string()),
            ("weight_decay", cfg.weight_decay.to_string()),
            ("lr", cfg.lr_initial.to_string()),
            ("lr_decay", cfg.lr_decay.to_string()),
            ("lr_step_epochs", cfg.lr_step_epochs.to_string()),
            ("clip_a", cfg.clip_a.to_string()),
            ("epochs", cfg.epochs.to_string()),
            ("max_iterations", format!("{:?}", cfg.max_iterations)),
            ("plateau_epochs", cfg.plateau_epochs.to_string()),
            ("seed", seed.to_string()),
            ("out", show(&a.out)),
            ("log", show(&log_path)),
        ],
    );
    cfg.validate().map_err(Failure::usage)?;
    let mut model = DrfnModel::build(model_cfg, seed).map_err(Failure::usage)?;
    println!("parameters: {}", model.param_count());

    let report = train_loop(&mut model, &archive, &cfg, |p| {
        match p {
            Progress::Iteration(r) => {
                if r.iteration % 100 == 0 {
                    println!("iter {:>7}  epoch {:>3}  lr {:.2e}  loss {:.6}", r.iteration, r.epoch, r.lr, r.loss);
                }
            }
            Progress::EpochEnd { epoch, mean_loss, model } => {
                println!("epoch {:>3} done, mean loss {mean_loss:.6}", epoch + 1);
                if !a.no_epoch_checkpoints {
                    save_checkpoint(model, epoch_checkpoint_path(&a.out, epoch))?;
                }
            }
        }
        Ok(())
    })
    .map_err(Failure::data)?;

    save_checkpoint(&model, &a.out).map_err(Failure::data)?;
    fs::write(&log_path, format_loss_log(&report.history))
        .with_context(|| format!("writing {}", log_path.display()))
        .map_err(Failure::data)?;
    if let (Some(first), Some(last)) = (report.history.first(), report.history.last()) {
        println!(
            "{} iterations, {} epochs{}; loss {:.6} -> {:.6}",
            report.history.len(),
            report.epochs_completed,
            if report.stopped_on_plateau { " (plateau)" } else { "" },
            first.loss,
            last.loss
        );
    }
    println!("checkpoint written to {}", a.out.display());
    Ok(())
}

pub fn sr(a: &SrArgs) -> Result<(), Failure> {
    let mut model = load_checkpoint(&a.model)
        .with_context(|| format!("loading {}", a.model.display()))
        .map_err(Failure::data)?;
    if let Some(c) = a.cycles {
        model.set_cycles(c).map_err(Failure::usage)?;
    }
    let cfg = model.config();
    print_config(
        "sr",
        &[
            ("model", show(&a.model)),
            ("config", cfg.to_string()),
            ("input", show(&a.input)),
            ("output", show(&a.output)),
        ],
    );
    let img = load_image(&a.input)
        .with_context(|| format!("loading {}", a.input.display()))
        .map_err(Failure::data)?;
    let s = cfg.scale as usize;
    let (h, w) = (s * img.luma.height(), s * img.luma.width());
    let out = model.predict(&img.luma.to_tensor()).map_err(Failure::data)?;
    let y = ImageY::from_tensor(&out, 0).map_err(Failure::data)?;
    match img.chroma {
        None => save_luminance(&y, &a.output).map_err(Failure::data)?,
        Some((cb, cr)) => {
            let cb = bicubic_resize(&cb, h, w).map_err(Failure::data)?;
            let cr = bicubic_resize(&cr, h, w).map_err(Failure::data)?;
            save_color(&YCbCr { y, cb, cr }, &a.output).map_err(Failure::data)?;
        }
    }
    println!("{}x{} -> {}x{} written to {}", img.luma.width(), img.luma.height(), w, h, a.output.display());
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<(), Failure> {
    print_config(
        "eval",
        &[
            ("sr_dir", show(&a.sr_dir)),
            ("gt_dir", show(&a.gt_dir)),
            ("scale", a.scale.to_string()),
            ("shave", a.scale.to_string()),
            ("csv", a.csv.as_deref().map(show).unwrap_or_else(|| "-".into())),
        ],
    );
    if a.scale == 0 {
        return Err(Failure::usage(anyhow!("scale must be >= 1")));
    }
    let report = evaluate_dataset(&a.sr_dir, &a.gt_dir, a.scale).map_err(Failure::data)?;
    print!("{}", report.to_text());
    if let Some(p) = &a.csv {
        fs::write(p, report.to_csv())
            .with_context(|| format!("writing {}", p.display()))
            .map_err(Failure::data)?;
    }
    if report.is_complete() {
        Ok(())
    } else if report.per_image.is_empty() && report.failures.is_empty() {
        Err(Failure::data(anyhow!("no ground-truth images in {}", a.gt_dir.display())))
    } else {
        Err(Failure::data(anyhow!("{} image(s) could not be scored", report.failures.len())))
    }
}

pub fn selftest(a: &SelftestArgs) -> Result<(), Failure> {
    print_config("selftest", &[("filter", a.filter.clone().unwrap_or_else(|| "-".into()))]);
    let checks: Vec<_> = default_checks()
        .into_iter()
        .filter(|c| a.filter.as_ref().is_none_or(|f| c.name.contains(f.as_str())))
        .collect();
    if checks.is_empty() {
        return Err(Failure::usage(anyhow!("no checks match the filter")));
    }
    let report = run_checks(&checks, |o| {
        println!(
            "{} {:<32} {:>7.2}s  {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.elapsed.as_secs_f64(),
            o.detail
        );
    });
    if report.passed() {
        println!("all {} checks passed", report.outcomes.len());
        Ok(())
    } else {
        Err(Failure::check(anyhow!("failed checks: {}", report.failures().join(", "))))
    }
}
