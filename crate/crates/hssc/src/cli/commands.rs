//! Implementations of the subcommands.
//!
//! Each command resolves its settings in the same way: an explicit flag
//! wins, otherwise the config file's key of the same name applies, otherwise
//! a built-in default; settings without a default are required. Results go
//! to the paths the user named, warnings to stderr, and a short summary of
//! key numbers to stdout as `name value` lines.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::cli::{CodecArgs, EvalArgs, KvFile, Manifest, RdArgs, SynthArgs, TrainArgs};
use crate::codec::{compress, decompress, BitstreamFile};
use crate::error::{Error, Result};
use crate::evalio::{
    bpp, psnr, read_cube, ssim, synth_dataset, write_cube, BppMode, RangePolicy, RdPoint, RdTable,
};
use crate::networks::{load_checkpoint, ModelBundle, ModelConfig};
use crate::tensor::Tensor;
use crate::training::{metrics_csv, LossWeights, TrainOptions, Trainer};

fn pick<T>(flag: Option<T>, cfg: &KvFile, key: &str) -> Result<Option<T>>
where
    T: FromStr,
    T::Err: fmt::Display,
{
    if flag.is_some() {
        return Ok(flag);
    }
    match cfg.get(key) {
        None => Ok(None),
        Some(raw) => raw.parse().map(Some).map_err(|e| {
            Error::usage(format!("config key {key} = {raw:?} does not parse: {e}"))
        }),
    }
}

fn pick_flag(flag: bool, cfg: &KvFile, key: &str) -> Result<bool> {
    if flag {
        return Ok(true);
    }
    match cfg.get(key) {
        None => Ok(false),
        Some("true" | "1") => Ok(true),
        Some("false" | "0") => Ok(false),
        Some(other) => Err(Error::usage(format!(
            "config key {key} = {other:?} is not a boolean"
        ))),
    }
}

fn need<T>(value: Option<T>, key: &str) -> Result<T> {
    value.ok_or_else(|| {
        Error::usage(format!("--{key} is required (as a flag or a config key)"))
    })
}

fn policy(clamp: bool) -> RangePolicy {
    if clamp {
        RangePolicy::Clamp
    } else {
        RangePolicy::Reject
    }
}

fn load_cube(path: &Path, clamp: bool) -> Result<Tensor> {
    let loaded = read_cube(path, policy(clamp))?;
    if loaded.clamped > 0 {
        eprintln!(
            "warning: {}: clamped {} out-of-range samples into [0, 1]",
            path.display(),
            loaded.clamped
        );
    }
    Ok(loaded.cube)
}

fn load_named(base: &Path, names: &[String], clamp: bool) -> Result<Vec<Tensor>> {
    names.iter().map(|n| load_cube(&base.join(n), clamp)).collect()
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn cmd_synth(args: &SynthArgs, cfg: &KvFile) -> Result<()> {
    let n = need(pick(args.n, cfg, "n")?, "n")?;
    let bands = pick(args.bands, cfg, "bands")?.unwrap_or(8);
    let size = pick(args.size, cfg, "size")?.unwrap_or(32);
    let seed = pick(args.seed, cfg, "seed")?.unwrap_or(0);
    let out_dir = need(pick(args.out_dir.clone(), cfg, "out-dir")?, "out-dir")?;

    let ds = synth_dataset(n, bands, size, size, seed)?;
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let width = n.saturating_sub(1).to_string().len().max(4);
    let name_of = |i: usize| format!("cube_{i:0width$}.hssc");
    for (i, cube) in ds.cubes.iter().enumerate() {
        write_cube(out_dir.join(name_of(i)), cube)?;
    }
    let names = |ids: &[usize]| ids.iter().map(|&i| name_of(i)).collect();
    let manifest = Manifest {
        train: names(&ds.split.train),
        val: names(&ds.split.val),
        test: names(&ds.split.test),
    };
    manifest.write(&out_dir)?;
    println!(
        "wrote {n} cubes of {bands}x{size}x{size} ({} train / {} val / {} test) to {}",
        ds.split.train.len(),
        ds.split.val.len(),
        ds.split.test.len(),
        out_dir.display()
    );
    Ok(())
}

pub fn cmd_train(args: &TrainArgs, cfg: &KvFile) -> Result<()> {
    let resume = pick_flag(args.resume, cfg, "resume")?;
    let rt = pick(args.rt, cfg, "rt")?.unwrap_or(0.6);
    let lambda_a = pick(args.lambda_a, cfg, "lambda-a")?;
    let width_scale = pick(args.width_scale, cfg, "width-scale")?.unwrap_or(0.125);
    let steps_pretrain = pick(args.steps_pretrain, cfg, "steps-pretrain")?.unwrap_or(200);
    let steps_gan = pick(args.steps_gan, cfg, "steps-gan")?.unwrap_or(200);
    let batch = pick(args.batch, cfg, "batch")?.unwrap_or(8);
    let lr = pick(args.lr, cfg, "lr")?.unwrap_or(1e-4);
    let data = need(pick(args.data.clone(), cfg, "data")?, "data")?;
    let seed = pick(args.seed, cfg, "seed")?.unwrap_or(0);
    let out = need(pick(args.out.clone(), cfg, "out")?, "out")?;
    let clamp = pick_flag(args.clamp, cfg, "clamp")?;

    // An explicit strong lambda installs a one-entry table at this target,
    // which is how targets outside the built-in table become trainable.
    let mut weights = LossWeights::default();
    if let Some(l) = lambda_a {
        weights.lambda_table = vec![(rt, l)];
    }
    weights.validate()?;
    let strong = weights.lambda_a(rt)?;
    println!("rate target {rt} maps to strong lambda {strong}");

    let (manifest, base) = Manifest::read(&data)?;
    if manifest.train.is_empty() {
        return Err(Error::usage("train split is empty"));
    }
    let cubes = load_named(&base, &manifest.train, clamp)?;
    let bands = cubes[0].shape()[0];
    for (name, cube) in manifest.train.iter().zip(&cubes) {
        if cube.shape()[0] != bands {
            return Err(Error::format(format!(
                "training cubes disagree on band count: {name} has {}, {} has {bands}",
                cube.shape()[0],
                manifest.train[0]
            )));
        }
    }

    std::fs::create_dir_all(&out).map_err(|e| Error::io(out.display().to_string(), e))?;
    let ckpt_path = out.join("model.ckpt");
    let opts = TrainOptions {
        steps_pretrain,
        steps_gan,
        r_t: rt,
        batch_size: batch,
        lr,
        snapshot_every: 25,
        checkpoint: Some(ckpt_path.clone()),
    };

    let mut trainer = if resume {
        Trainer::from_checkpoint_file(&ckpt_path, weights, opts)?
    } else {
        if ckpt_path.exists() {
            return Err(Error::usage(format!(
                "{} already exists; pass --resume to continue it or pick another --out",
                ckpt_path.display()
            )));
        }
        let variant = need(pick(args.variant, cfg, "variant")?, "variant")?;
        let mut config = ModelConfig::new(variant, bands);
        config.width_scale = width_scale;
        config.seed = seed;
        Trainer::new(ModelBundle::build(&config)?, weights, opts, seed)?
    };
    let resumed_from = trainer.completed_steps();
    let rows = trainer.run(&cubes)?;

    let metrics_path = out.join("metrics.csv");
    let csv = metrics_csv(&rows);
    if resumed_from > 0 && metrics_path.exists() {
        let mut text = std::fs::read_to_string(&metrics_path)
            .map_err(|e| Error::io(metrics_path.display().to_string(), e))?;
        text.push_str(csv.split_once('\n').map(|(_, body)| body).unwrap_or(""));
        write_bytes(&metrics_path, text.as_bytes())?;
    } else {
        write_bytes(&metrics_path, csv.as_bytes())?;
    }

    let config = &trainer.bundle().config;
    let mut meta = KvFile::new();
    meta.insert("variant", config.variant);
    meta.insert("bands", bands);
    meta.insert("rt", rt);
    if let Some(l) = lambda_a {
        meta.insert("lambda-a", l);
    }
    meta.insert("width-scale", config.width_scale);
    meta.insert("steps-pretrain", steps_pretrain);
    meta.insert("steps-gan", steps_gan);
    meta.insert("batch", batch);
    meta.insert("lr", lr);
    meta.insert("seed", seed);
    meta.write(out.join("train.meta"))?;

    println!(
        "trained {} steps ({} total), checkpoint at {}",
        rows.len(),
        trainer.completed_steps(),
        ckpt_path.display()
    );
    Ok(())
}

pub fn cmd_compress(args: &CodecArgs, cfg: &KvFile) -> Result<()> {
    let ckpt = need(pick(args.ckpt.clone(), cfg, "ckpt")?, "ckpt")?;
    let input = need(pick(args.input.clone(), cfg, "in")?, "in")?;
    let out = need(pick(args.out.clone(), cfg, "out")?, "out")?;
    let clamp = pick_flag(args.clamp, cfg, "clamp")?;

    let (bundle, _) = load_checkpoint(&ckpt)?;
    let cube = load_cube(&input, clamp)?;
    let outcome = compress(&bundle, &cube)?;
    if outcome.saturated > 0 {
        eprintln!(
            "warning: {} latents saturated the quantizer range",
            outcome.saturated
        );
    }
    let bytes = outcome.file.to_bytes();
    write_bytes(&out, &bytes)?;

    let back = decompress(&bundle, &outcome.file)?;
    let s = cube.shape();
    let rate = bpp(8 * bytes.len() as u64, [s[0], s[1], s[2]], BppMode::PerBandPixel)?;
    println!("wrote {} ({} bytes)", out.display(), bytes.len());
    println!("bpp {rate}");
    println!("psnr_db {}", psnr(&cube, &back.cube)?.db);
    if s[1] >= 11 && s[2] >= 11 {
        println!("ssim {}", ssim(&cube, &back.cube)?);
    } else {
        println!("ssim n/a (needs at least 11x11)");
    }
    Ok(())
}

pub fn cmd_decompress(args: &CodecArgs, cfg: &KvFile) -> Result<()> {
    let ckpt = need(pick(args.ckpt.clone(), cfg, "ckpt")?, "ckpt")?;
    let input = need(pick(args.input.clone(), cfg, "in")?, "in")?;
    let out = need(pick(args.out.clone(), cfg, "out")?, "out")?;

    let (bundle, _) = load_checkpoint(&ckpt)?;
    let bytes =
        std::fs::read(&input).map_err(|e| Error::io(input.display().to_string(), e))?;
    let file = BitstreamFile::from_bytes(&bytes)?;
    let outcome = decompress(&bundle, &file)?;
    write_cube(&out, &outcome.cube)?;
    let s = outcome.cube.shape();
    println!("wrote {} ({}x{}x{} cube)", out.display(), s[0], s[1], s[2]);
    Ok(())
}

struct Scores {
    /// `(file, bpp, psnr_db, ssim)` per cube, in manifest order.
    rows: Vec<(String, f64, f64, f64)>,
    mean_bpp: f64,
    mean_psnr: f64,
    mean_ssim: f64,
}

fn score_split(
    bundle: &ModelBundle,
    base: &Path,
    names: &[String],
    clamp: bool,
) -> Result<Scores> {
    let mut rows = Vec::new();
    for name in names {
        let cube = load_cube(&base.join(name), clamp)?;
        let outcome = compress(bundle, &cube)?;
        let bytes = outcome.file.to_bytes();
        let back = decompress(bundle, &outcome.file)?;
        let s = cube.shape();
        rows.push((
            name.clone(),
            bpp(8 * bytes.len() as u64, [s[0], s[1], s[2]], BppMode::PerBandPixel)?,
            psnr(&cube, &back.cube)?.db,
            ssim(&cube, &back.cube)?,
        ));
    }
    let n = rows.len() as f64;
    let mean = |f: fn(&(String, f64, f64, f64)) -> f64| rows.iter().map(f).sum::<f64>() / n;
    Ok(Scores {
        mean_bpp: mean(|r| r.1),
        mean_psnr: mean(|r| r.2),
        mean_ssim: mean(|r| r.3),
        rows,
    })
}

pub fn cmd_eval(args: &EvalArgs, cfg: &KvFile) -> Result<()> {
    let ckpt = need(pick(args.ckpt.clone(), cfg, "ckpt")?, "ckpt")?;
    let data = need(pick(args.data.clone(), cfg, "data")?, "data")?;
    let out_csv = need(pick(args.out_csv.clone(), cfg, "out-csv")?, "out-csv")?;
    let clamp = pick_flag(args.clamp, cfg, "clamp")?;

    let (manifest, base) = Manifest::read(&data)?;
    if manifest.test.is_empty() {
        return Err(Error::usage("test split is empty"));
    }
    let (bundle, _) = load_checkpoint(&ckpt)?;
    let scores = score_split(&bundle, &base, &manifest.test, clamp)?;

    let mut csv = String::from("file,bpp,psnr_db,ssim\n");
    for (name, b, p, s) in &scores.rows {
        csv.push_str(&format!("{name},{b},{p},{s}\n"));
    }
    csv.push_str(&format!(
        "mean,{},{},{}\n",
        scores.mean_bpp, scores.mean_psnr, scores.mean_ssim
    ));
    write_bytes(&out_csv, csv.as_bytes())?;

    println!("evaluated {} test cubes", scores.rows.len());
    println!("bpp {}", scores.mean_bpp);
    println!("psnr_db {}", scores.mean_psnr);
    println!("ssim {}", scores.mean_ssim);
    Ok(())
}

pub fn cmd_rd(args: &RdArgs, cfg: &KvFile) -> Result<()> {
    let ckpt_dir = need(pick(args.ckpt_dir.clone(), cfg, "ckpt-dir")?, "ckpt-dir")?;
    let data = need(pick(args.data.clone(), cfg, "data")?, "data")?;
    let out_csv = need(pick(args.out_csv.clone(), cfg, "out-csv")?, "out-csv")?;
    let clamp = pick_flag(args.clamp, cfg, "clamp")?;

    let (manifest, base) = Manifest::read(&data)?;
    if manifest.test.is_empty() {
        return Err(Error::usage("test split is empty"));
    }

    // The sweep directory either is a training output itself or holds one
    // training output per subdirectory.
    let mut runs: Vec<PathBuf> = Vec::new();
    if ckpt_dir.join("model.ckpt").is_file() {
        runs.push(ckpt_dir.clone());
    } else {
        let entries = std::fs::read_dir(&ckpt_dir)
            .map_err(|e| Error::io(ckpt_dir.display().to_string(), e))?;
        runs = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("model.ckpt").is_file())
            .collect();
        runs.sort();
    }
    if runs.is_empty() {
        return Err(Error::usage(format!(
            "no model.ckpt under {}",
            ckpt_dir.display()
        )));
    }

    let mut points = Vec::new();
    for run in &runs {
        let (bundle, _) = load_checkpoint(run.join("model.ckpt"))?;
        let meta = KvFile::read(run.join("train.meta"))?;
        let rt: f64 = meta
            .get("rt")
            .ok_or_else(|| {
                Error::format(format!("{}: train.meta has no rt key", run.display()))
            })?
            .parse()
            .map_err(|e| Error::format(format!("{}: rt does not parse: {e}", run.display())))?;
        let scores = score_split(&bundle, &base, &manifest.test, clamp)?;
        points.push(RdPoint {
            variant: bundle.config.variant.to_string(),
            r_t: rt,
            bpp: scores.mean_bpp,
            psnr_db: scores.mean_psnr,
            ssim: scores.mean_ssim,
        });
    }
    let table = RdTable::new(points)?;
    write_bytes(&out_csv, table.csv().as_bytes())?;
    println!("wrote {} points to {}", runs.len(), out_csv.display());
    for dip in table.non_monotone() {
        println!(
            "non-monotone segment in {}: psnr drops from r_t {} to r_t {}",
            dip.variant, dip.from_rt, dip.to_rt
        );
    }
    Ok(())
}
