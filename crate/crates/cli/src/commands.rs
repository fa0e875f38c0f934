//! Subcommand implementations over the core library.

use crate::UsageError;
use anyhow::{bail, Context, Result};
use starcycle::config::{derive_seed, derive_seed_indexed};
use starcycle::dataset::{
    build_manifest, crop_and_pad, load_catalog, netpbm, BBox, DegradeRecipe, Domain, Image, Split,
    SplitRatios, StarFieldSpec,
};
use starcycle::metrics::{self, FeatureExtractorSpec};
use starcycle::model::{self, checkpoint, BnUse, FusionMode, GeneratorParams};
use starcycle::survey::{Client, FetchMode};
use starcycle::training::{
    self, AdamParams, LoopConfig, LossWeights, TrainState,
};
use starcycle::RunConfig;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Every run directory starts with the resolved config snapshot.
pub fn write_run_snapshot(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out)
        .with_context(|| format!("creating output directory {}", cfg.out.display()))?;
    std::fs::write(cfg.out.join("config.txt"), cfg.snapshot())
        .with_context(|| "writing config snapshot")?;
    Ok(())
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    if cfg.synth_count == 0 {
        bail!(UsageError("synth --count must be at least 1".into()));
    }
    let gt_dir = cfg.out.join("synth").join("gt");
    let mobil_dir = cfg.out.join("synth").join("mobil");
    std::fs::create_dir_all(&gt_dir)?;
    std::fs::create_dir_all(&mobil_dir)?;
    for i in 0..cfg.synth_count {
        let spec = StarFieldSpec {
            side: cfg.side,
            star_count: cfg.synth_stars,
            psf_sigma: (cfg.synth_psf_min, cfg.synth_psf_max),
            mag_range: (cfg.synth_mag_min, cfg.synth_mag_max),
            background: cfg.synth_background,
            recipe: DegradeRecipe {
                blur_sigma: cfg.degrade_blur,
                noise_sigma: cfg.degrade_noise,
                downscale: cfg.degrade_downscale,
            },
            seed: derive_seed_indexed(cfg.seed, "synth", i as u64),
        };
        let (clean, degraded) = starcycle::dataset::synth_starfield(&spec)?;
        netpbm::write(&gt_dir.join(format!("{i:04}.pgm")), &clean)?;
        netpbm::write(&mobil_dir.join(format!("{i:04}.pgm")), &degraded)?;
    }
    // The layout must immediately support manifest building.
    let (manifest, issues) = build_manifest(
        &cfg.out,
        &[],
        cfg.seed,
        SplitRatios {
            train: cfg.split_train,
            val: cfg.split_val,
        },
    )?;
    for issue in &issues {
        eprintln!("manifest: {}: {}", issue.path.display(), issue.message);
    }
    eprintln!(
        "synth: wrote {} pairs under {} ({} manifest entries)",
        cfg.synth_count,
        cfg.out.display(),
        manifest.len()
    );
    Ok(())
}

pub fn fetch(cfg: &RunConfig) -> Result<()> {
    let catalog = load_catalog(&cfg.catalog)
        .map_err(|e| UsageError(format!("catalog {}: {e}", cfg.catalog.display())))?;
    if catalog.is_empty() {
        bail!(UsageError(format!(
            "catalog {} lists no objects",
            cfg.catalog.display()
        )));
    }
    let mode = if cfg.offline {
        FetchMode::Offline
    } else {
        FetchMode::Live
    };
    let client = Client::new(&cfg.survey_base_url, mode, cfg.out.join("cache"));
    let mut object_failures = 0;
    for entry in &catalog {
        let gt_dir = cfg.out.join(&entry.name).join("gt");
        match client.fetch_object_references(entry, &cfg.surveys, cfg.fov_deg, cfg.cutout_px, &gt_dir)
        {
            Ok((written, failures)) => {
                eprintln!(
                    "fetch: {}: {} references, {} survey failures",
                    entry.name,
                    written.len(),
                    failures.len()
                );
                for (survey, err) in failures {
                    eprintln!("fetch: {}: {survey}: {err}", entry.name);
                }
            }
            Err(e) => {
                eprintln!("fetch: {}: {e}", entry.name);
                object_failures += 1;
            }
        }
    }
    if object_failures == catalog.len() {
        bail!("every object failed to fetch");
    }
    Ok(())
}

pub fn preprocess(cfg: &RunConfig, data: &Path) -> Result<()> {
    if !data.is_dir() {
        bail!(UsageError(format!(
            "input directory does not exist: {}",
            data.display()
        )));
    }
    let mut objects: Vec<PathBuf> = std::fs::read_dir(data)?
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    objects.sort();
    let mut total = 0usize;
    for obj_dir in objects {
        let object = obj_dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let mobil = obj_dir.join("mobil");
        if !mobil.is_dir() {
            continue;
        }
        let sidecar = obj_dir.join(format!("{object}.bbox"));
        let out_dir = cfg.out.join(&object).join("mobil");
        std::fs::create_dir_all(&out_dir)?;
        let mut files: Vec<PathBuf> = std::fs::read_dir(&mobil)?
            .flatten()
            .map(|e| e.path())
            .filter(|p| {
                matches!(p.extension().and_then(|e| e.to_str()), Some("ppm") | Some("pgm"))
            })
            .collect();
        files.sort();
        for path in files {
            let img = netpbm::read(&path)?;
            // Sidecar bbox when annotated, otherwise the full frame.
            let bbox = if sidecar.exists() {
                BBox::parse(&std::fs::read_to_string(&sidecar)?)?
            } else {
                BBox {
                    x: 0,
                    y: 0,
                    width: img.width() as u32,
                    height: img.height() as u32,
                }
            };
            let cropped = crop_and_pad(&img, bbox, cfg.preprocess_target)?;
            netpbm::write(&out_dir.join(path.file_name().unwrap_or_default()), &cropped)?;
            total += 1;
        }
    }
    eprintln!("preprocess: wrote {total} crops under {}", cfg.out.display());
    Ok(())
}

fn collect_images(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let Ok(rd) = std::fs::read_dir(&dir) else {
            continue;
        };
        for entry in rd.flatten() {
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else if matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("ppm") | Some("pgm")
            ) {
                let stem = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                if !stem.ends_with("_nir") {
                    out.push(p);
                }
            }
        }
    }
    out.sort();
    out
}

pub fn augment(cfg: &RunConfig, input: &Path) -> Result<()> {
    if !input.is_dir() {
        bail!(UsageError(format!(
            "input directory does not exist: {}",
            input.display()
        )));
    }
    let files = collect_images(input);
    if files.is_empty() {
        bail!(UsageError(format!(
            "no .ppm/.pgm images under {}",
            input.display()
        )));
    }
    let brightness = starcycle::augment::BrightnessParams {
        base_mean: cfg.brightness_mean,
        jitter_sigma: cfg.brightness_jitter,
    };
    let mut written = 0usize;
    for path in &files {
        let rel = path.strip_prefix(input).unwrap_or(path);
        let img = netpbm::read(path)?;
        let plan = starcycle::augment::AugmentPlan::build(
            derive_seed(cfg.seed, &format!("augment/{}", rel.display())),
            cfg.blur_sigma,
            cfg.glow_sigma,
            &brightness,
        )?;
        let variants = starcycle::augment::augment_all(&img, &plan)?;
        let stem = rel.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let parent = cfg.out.join(rel.parent().unwrap_or(Path::new("")));
        std::fs::create_dir_all(&parent)?;
        let ext = if img.channels() == 1 { "pgm" } else { "ppm" };
        for (i, v) in variants.iter().enumerate() {
            netpbm::write(&parent.join(format!("{stem}_v{i:02}.{ext}")), v)?;
            written += 1;
        }
    }
    eprintln!(
        "augment: {} sources -> {written} variants under {}",
        files.len(),
        cfg.out.display()
    );
    Ok(())
}

fn loop_config(cfg: &RunConfig) -> LoopConfig {
    LoopConfig {
        epochs: cfg.epochs,
        batch: cfg.batch,
        seed: cfg.seed,
        weights: LossWeights {
            adv: cfg.lambda_adv,
            cyc: cfg.lambda_cyc,
            astro: cfg.lambda_astro,
            idt: cfg.lambda_idt,
            paired: cfg.lambda_paired,
        },
        adam: AdamParams {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
        },
        checkpoint_cadence: cfg.checkpoint_cadence,
        log_cadence: cfg.log_cadence,
        out_dir: cfg.out.clone(),
    }
}

pub fn train(cfg: &RunConfig, data: &Path, resume: Option<&Path>) -> Result<()> {
    if !data.is_dir() {
        bail!(UsageError(format!(
            "data directory does not exist: {}",
            data.display()
        )));
    }
    let catalog = if cfg.catalog.exists() {
        load_catalog(&cfg.catalog)?
    } else {
        Vec::new()
    };
    let (manifest, issues) = build_manifest(
        data,
        &catalog,
        cfg.seed,
        SplitRatios {
            train: cfg.split_train,
            val: cfg.split_val,
        },
    )?;
    for issue in &issues {
        eprintln!("manifest: {}: {}", issue.path.display(), issue.message);
    }
    let train_data = training::load_train_data(&manifest, Split::Train, cfg.side, cfg.fusion)?;
    eprintln!(
        "train: {} LR, {} HR images ({} pairs) in the train split",
        train_data.lr.len(),
        train_data.hr.len(),
        train_data.pairs.len()
    );

    let lcfg = loop_config(cfg);
    let mut state = match resume {
        Some(path) => {
            let s = TrainState::load(path, lcfg.adam)?;
            eprintln!("train: resumed from {} at step {}", path.display(), s.step);
            s
        }
        None => TrainState::fresh(cfg.seed, cfg.fusion, lcfg.adam),
    };
    let started = Instant::now();
    let records = training::train_loop(&mut state, &train_data, &lcfg, |r| {
        eprintln!(
            "step={} g_total={:.4} cyc={:.4} d_hr={:.4} d_lr={:.4} elapsed={:.1}s",
            r.step,
            r.g_total,
            r.cyc,
            r.d_hr,
            r.d_lr,
            started.elapsed().as_secs_f64()
        );
    })?;
    eprintln!(
        "train: {} steps in {:.1}s, checkpoints under {}",
        records.len(),
        started.elapsed().as_secs_f64(),
        cfg.out.display()
    );
    Ok(())
}

/// Pad to a square multiple of 8, run the generator, crop back.
fn enhance_one(params: &GeneratorParams, img: &Image) -> Result<Image> {
    let (h, w) = (img.height(), img.width());
    let side = h.max(w).div_ceil(8) * 8;
    let padded = crop_and_pad(
        img,
        BBox {
            x: 0,
            y: 0,
            width: w as u32,
            height: h as u32,
        },
        side,
    )?;
    let model_in = padded.normalize(Domain::Model);
    let mut p = params.clone();
    let out = model::generator_forward(&mut p, &model_in, BnUse::Eval)?;
    // Undo the centering offset of crop_and_pad.
    let dy = side / 2 - h / 2;
    let dx = side / 2 - w / 2;
    let mut restored = Image::zeros(out.channels(), h, w, out.domain());
    for c in 0..out.channels() {
        for y in 0..h {
            for x in 0..w {
                restored.set(c, y, x, out.get(c, y + dy, x + dx));
            }
        }
    }
    Ok(restored.normalize(Domain::Raw255))
}

pub fn infer(cfg: &RunConfig, ckpt: &Path, input: &Path) -> Result<()> {
    if !input.is_dir() {
        bail!(UsageError(format!(
            "input directory does not exist: {}",
            input.display()
        )));
    }
    let sections = checkpoint::read_container(ckpt)
        .map_err(|e| UsageError(format!("checkpoint {}: {e}", ckpt.display())))?;
    let meta = checkpoint::read_sidecar(ckpt).unwrap_or_default();
    let fusion = meta
        .iter()
        .find(|(k, _)| k == "fusion")
        .and_then(|(_, v)| FusionMode::parse(v))
        .unwrap_or(cfg.fusion);
    let mut params = GeneratorParams::init(0, fusion);
    checkpoint::load_generator("g_lr2hr", &sections, &mut params)
        .map_err(|e| UsageError(format!("checkpoint {}: {e}", ckpt.display())))?;

    let files = collect_images(input);
    if files.is_empty() {
        bail!(UsageError(format!(
            "no .ppm/.pgm images under {}",
            input.display()
        )));
    }
    let mut written = 0usize;
    for path in &files {
        let rel = path.strip_prefix(input).unwrap_or(path);
        let img = if fusion.in_channels() == 4 {
            netpbm::read_with_nir(path)?
        } else {
            netpbm::read(path)?
        };
        let img = training::adapt_channels(&img, fusion.in_channels());
        let enhanced = enhance_one(&params, &img)?;
        let out_path = cfg.out.join(rel).with_extension("ppm");
        std::fs::create_dir_all(out_path.parent().unwrap_or(Path::new("")))?;
        netpbm::write(&out_path, &enhanced)?;
        written += 1;
    }
    eprintln!("infer: enhanced {written} images under {}", cfg.out.display());
    Ok(())
}

fn split_of(rel: &Path) -> &'static str {
    match rel.components().next().and_then(|c| c.as_os_str().to_str()) {
        Some("train") => "train",
        Some("val") => "val",
        Some("test") => "test",
        _ => "all",
    }
}

pub fn evaluate(cfg: &RunConfig, generated: &Path, reference: &Path, tag: &str) -> Result<()> {
    for dir in [generated, reference] {
        if !dir.is_dir() {
            bail!(UsageError(format!(
                "directory does not exist: {}",
                dir.display()
            )));
        }
    }
    let gen_files = collect_images(generated);
    if gen_files.is_empty() {
        bail!(UsageError(format!(
            "no images under {}",
            generated.display()
        )));
    }

    // Pair by relative path; group rows by split directory when present.
    let mut by_split: BTreeMap<&'static str, Vec<(Image, Image)>> = BTreeMap::new();
    for gpath in &gen_files {
        let rel = gpath.strip_prefix(generated).unwrap_or(gpath);
        let mut rpath = reference.join(rel);
        if !rpath.exists() {
            for ext in ["ppm", "pgm"] {
                let alt = rpath.with_extension(ext);
                if alt.exists() {
                    rpath = alt;
                    break;
                }
            }
        }
        if !rpath.exists() {
            eprintln!("evaluate: no reference for {}", rel.display());
            continue;
        }
        // Gray references compare against color output on equal footing.
        let g = training::adapt_channels(&netpbm::read(gpath)?, 3);
        let r = training::adapt_channels(&netpbm::read(&rpath)?, 3);
        if (g.height(), g.width()) != (r.height(), r.width()) {
            eprintln!(
                "evaluate: size mismatch for {} ({}x{} vs {}x{}), skipped",
                rel.display(),
                g.height(),
                g.width(),
                r.height(),
                r.width()
            );
            continue;
        }
        by_split.entry(split_of(rel)).or_default().push((g, r));
    }
    if by_split.is_empty() {
        bail!("no comparable image pairs");
    }

    let mut report = String::from("model,split,fid,psnr_mean,peak_count_delta\n");
    for (split, pairs) in &by_split {
        let row = evaluate_split(cfg, pairs)?;
        report.push_str(&format!(
            "{tag},{split},{},{},{}\n",
            row.0, row.1, row.2
        ));
        eprintln!(
            "evaluate: {split}: {} pairs, fid={} psnr={} peak_delta={}",
            pairs.len(),
            row.0,
            row.1,
            row.2
        );
    }
    let path = cfg.out.join("report.csv");
    std::fs::write(&path, report)?;
    eprintln!("evaluate: wrote {}", path.display());
    Ok(())
}

fn evaluate_split(cfg: &RunConfig, pairs: &[(Image, Image)]) -> Result<(f64, f64, f64)> {
    // FID over the dominant shape; 3-channel expansion unifies gray/color.
    let to3 = |img: &Image| training::adapt_channels(img, 3);
    let shape = (pairs[0].0.height(), pairs[0].0.width());
    let gen_set: Vec<Image> = pairs
        .iter()
        .filter(|(g, _)| (g.height(), g.width()) == shape)
        .map(|(g, _)| to3(g))
        .collect();
    let ref_set: Vec<Image> = pairs
        .iter()
        .filter(|(g, _)| (g.height(), g.width()) == shape)
        .map(|(_, r)| to3(r))
        .collect();
    let spec = FeatureExtractorSpec::pixel_stats(derive_seed(cfg.seed, "fid"));
    let fid = if gen_set.len() >= 2 {
        let gf = metrics::extract_features(&gen_set, &spec)?;
        let rf = metrics::extract_features(&ref_set, &spec)?;
        metrics::fid(&metrics::fit_stats(&gf)?, &metrics::fit_stats(&rf)?)?
    } else {
        f64::NAN
    };
    let mut psnr_sum = 0.0;
    let mut delta_sum = 0.0;
    for (g, r) in pairs {
        psnr_sum += metrics::psnr(r, g)?;
        let pg = metrics::morphology(g)?.peaks.len() as f64;
        let pr = metrics::morphology(r)?.peaks.len() as f64;
        delta_sum += pg - pr;
    }
    Ok((
        fid,
        psnr_sum / pairs.len() as f64,
        delta_sum / pairs.len() as f64,
    ))
}
