//! Subcommand implementations. Every command works inside one run
//! directory (`--out`): `synth`/`ingest` create the dataset there, the other
//! commands read it and add their artifacts next to it.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use specmae_core::cube::{
    channel_min_max, drop_sentinel_channels, read_hsc, tile_scene, write_hsc, Dataset, Manifest,
    Split,
};
use specmae_core::grouping::{
    group_hac, group_kmeans, group_sci, group_soil_reflectance, group_vnir_swir,
    silhouette_score, FeatureMatrix, GroupingResult, Strategy,
};
use specmae_core::loss::LossWeights;
use specmae_core::masking::{make_patch_grid, sample_mask};
use specmae_core::model::ModelConfig;
use specmae_core::stats::{compute_channel_stats, mean_reflectance, sci_matrix, EPSILON};
use specmae_core::synth::{generate_synthetic, split_dataset};
use specmae_core::trainer::{
    evaluate, init_state, load_checkpoint, resume_state, save_checkpoint, train_epochs,
    train_loop, EpochMetrics, TrainState,
};
use specmae_core::{Error, Result};

use crate::config::{GroupingSection, RunConfig};
use crate::out::{csv_f64, eval_json, json_f64, write_json, write_text};

pub const METRICS_HEADER: &str = "epoch,eta,lambda,mu,train_total,train_mae,train_ssim_n,\
                                  train_sid_n,eval_mae,eval_psnr,eval_ssim,seconds";

/// Resolved invocation: parsed config, run directory, effective seed.
pub struct Ctx {
    pub config: RunConfig,
    pub out: PathBuf,
    pub seed: u64,
}

impl Ctx {
    pub fn new(config: RunConfig, out: PathBuf, seed_override: Option<u64>) -> Ctx {
        let seed = seed_override.unwrap_or(config.train.seed);
        Ctx { config, out, seed }
    }

    fn manifest_path(&self) -> PathBuf {
        self.out.join("manifest.json")
    }

    fn load_manifest(&self) -> Result<Manifest> {
        let path = self.manifest_path();
        Manifest::load(&path).map_err(|e| match e {
            Error::Io(io) => Error::Format(format!(
                "cannot read {} ({io}); run synth or ingest first",
                path.display()
            )),
            other => other,
        })
    }

    fn load_split(&self, manifest: &Manifest, split: Split) -> Result<Dataset> {
        manifest.load_split(&self.manifest_path(), split)
    }

    fn config_echo(&self) -> Value {
        serde_json::to_value(&self.config).expect("config serializes")
    }
}

// ---- dataset creation -------------------------------------------------------

pub fn cmd_synth(ctx: &Ctx) -> Result<()> {
    let (spec, s) = ctx.config.synthetic_spec()?;
    let (ds, truth) = generate_synthetic(&spec, s.tiles, s.size, ctx.seed)?;
    let (train, val, test) =
        split_dataset(&ds, ctx.config.data.train_frac, ctx.config.data.val_frac)?;

    fs::create_dir_all(ctx.out.join("tiles"))?;
    let mut manifest = Manifest {
        tile_shape: [s.size, s.size, s.channels],
        wavelengths: ds.tiles[0].wavelengths.clone(),
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        // tiles are stored already normalized; identity pairs keep load_split exact
        normalization: vec![[0.0, 1.0]; s.channels],
    };
    for (name, part) in [("train", &train), ("val", &val), ("test", &test)] {
        for (i, tile) in part.tiles.iter().enumerate() {
            let rel = format!("tiles/{name}_{i:05}.hsc");
            write_hsc(tile, &ctx.out.join(&rel))?;
            match name {
                "train" => manifest.train.push(rel),
                "val" => manifest.val.push(rel),
                _ => manifest.test.push(rel),
            }
        }
    }
    manifest.save(&ctx.manifest_path())?;

    let k = truth.iter().max().map_or(0, |&m| m + 1);
    let mut sizes = vec![0usize; k];
    for &g in &truth {
        sizes[g] += 1;
    }
    write_json(
        &ctx.out.join("truth_grouping.json"),
        &json!({
            "strategy": "TRUTH",
            "num_groups": k,
            "assignment": truth,
            "group_sizes": sizes,
        }),
    )?;
    println!(
        "synth: {} tiles {}x{}x{} -> {}/{}/{} train/val/test",
        s.tiles,
        s.size,
        s.size,
        s.channels,
        train.tiles.len(),
        val.tiles.len(),
        test.tiles.len()
    );
    Ok(())
}

pub fn cmd_ingest(ctx: &Ctx) -> Result<()> {
    let d = &ctx.config.data;
    if d.paths.is_empty() {
        return Err(Error::config("/data/paths", "ingest needs at least one scene file"));
    }
    let mut tiles = Vec::new();
    for p in &d.paths {
        let scene = read_hsc(Path::new(p))?;
        let clean = drop_sentinel_channels(&scene, d.sentinel)?;
        tiles.extend(tile_scene(&clean, d.tile)?);
    }
    let all = Dataset::new(tiles, Split::Train)?;
    let (train, val, test) = split_dataset(&all, d.train_frac, d.val_frac)?;
    // train-split statistics define the normalization; fail now if degenerate
    let pairs = channel_min_max(&train)?;
    let (h, w, c) = all.tile_shape();

    fs::create_dir_all(ctx.out.join("tiles"))?;
    let mut manifest = Manifest {
        tile_shape: [h, w, c],
        wavelengths: all.tiles[0].wavelengths.clone(),
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        normalization: pairs.iter().map(|&(lo, hi)| [lo, hi]).collect(),
    };
    for (name, part) in [("train", &train), ("val", &val), ("test", &test)] {
        for (i, tile) in part.tiles.iter().enumerate() {
            let rel = format!("tiles/{name}_{i:05}.hsc");
            write_hsc(tile, &ctx.out.join(&rel))?;
            match name {
                "train" => manifest.train.push(rel),
                "val" => manifest.val.push(rel),
                _ => manifest.test.push(rel),
            }
        }
    }
    manifest.save(&ctx.manifest_path())?;
    println!(
        "ingest: {} scenes -> {} tiles {h}x{w}x{c} ({}/{}/{})",
        d.paths.len(),
        all.tiles.len(),
        train.tiles.len(),
        val.tiles.len(),
        test.tiles.len()
    );
    Ok(())
}

// ---- grouping ---------------------------------------------------------------

fn dataset_wavelengths(ds: &Dataset) -> Vec<f64> {
    ds.tiles
        .first()
        .and_then(|t| t.wavelengths.as_ref())
        .map(|w| w.iter().map(|&v| v as f64).collect())
        .unwrap_or_default()
}

/// Run one strategy on the (normalized) train split.
pub fn compute_grouping(
    strategy: Strategy,
    train: &Dataset,
    section: &GroupingSection,
    seed: u64,
) -> Result<GroupingResult> {
    match strategy {
        Strategy::Sci => {
            let stack = mean_reflectance(train)?;
            let m = sci_matrix(&stack, EPSILON);
            group_sci(&m, section.num_groups)
        }
        Strategy::Kmeans => {
            let f = FeatureMatrix::from_stats(&compute_channel_stats(train)?);
            group_kmeans(&f, section.num_groups, seed, section.kmeans_restarts)
        }
        Strategy::Hac => {
            let f = FeatureMatrix::from_stats(&compute_channel_stats(train)?);
            group_hac(&f, section.num_groups)
        }
        Strategy::VnirSwir => {
            group_vnir_swir(&dataset_wavelengths(train), section.vnir_boundary)
        }
        Strategy::SoilReflectance => {
            group_soil_reflectance(&dataset_wavelengths(train), &section.sr_boundaries)
        }
    }
}

fn grouping_file(out: &Path, r: &GroupingResult) -> Result<PathBuf> {
    let path = out.join(format!("grouping_{}.json", r.strategy.name().to_lowercase()));
    write_json(&path, &serde_json::to_value(r).expect("grouping serializes"))?;
    Ok(path)
}

pub fn cmd_group(ctx: &Ctx) -> Result<()> {
    let manifest = ctx.load_manifest()?;
    let train = ctx.load_split(&manifest, Split::Train)?;
    let features = FeatureMatrix::from_stats(&compute_channel_stats(&train)?);

    let mut rows = Vec::new();
    for strategy in ctx.config.grouping.strategy.list() {
        if strategy == Strategy::Sci {
            let stack = mean_reflectance(&train)?;
            let m = sci_matrix(&stack, EPSILON);
            write_text(&ctx.out.join("sci_matrix.csv"), &m.to_csv())?;
        }
        let r = compute_grouping(strategy, &train, &ctx.config.grouping, ctx.seed)?;
        for w in &r.warnings {
            eprintln!("warning: {w}");
        }
        let silhouette = match silhouette_score(&features, &r) {
            Ok(v) => csv_f64(v),
            Err(Error::UndefinedScore) => "nan".to_string(),
            Err(e) => return Err(e),
        };
        grouping_file(&ctx.out, &r)?;
        rows.push(format!("{},{},{}", r.strategy.name(), r.num_groups, silhouette));
        println!("group[{}]: {} groups, silhouette {}", r.strategy.name(), r.num_groups, silhouette);
    }
    let mut csv = String::from("strategy,num_groups,silhouette\n");
    for row in &rows {
        csv.push_str(row);
        csv.push('\n');
    }
    write_text(&ctx.out.join("silhouette.csv"), &csv)?;
    Ok(())
}

// ---- masking preview ---------------------------------------------------------

fn preview_side(ctx: &Ctx) -> Result<usize> {
    let mpath = ctx.manifest_path();
    if mpath.exists() {
        return Ok(Manifest::load(&mpath)?.tile_shape[0]);
    }
    if let Some(s) = ctx.config.data.synthetic {
        return Ok(s.size);
    }
    Ok(ctx.config.data.tile)
}

pub fn cmd_mask_preview(ctx: &Ctx) -> Result<()> {
    let side = preview_side(ctx)?;
    let grid = make_patch_grid(side, side, ctx.config.masking.patch)?;
    let plan =
        sample_mask(&grid, ctx.config.grouping.num_groups, ctx.config.masking.ratio, ctx.seed);
    // the plan's own JSON plus grid/config context; extra keys are ignored
    // by the plan parser, so the file stays loadable as a plain MaskPlan
    let mut doc: Value = serde_json::from_str(&plan.to_json()).expect("plan serializes");
    let obj = doc.as_object_mut().expect("plan is an object");
    obj.insert(
        "grid".to_string(),
        json!({
            "h": side,
            "w": side,
            "patch": ctx.config.masking.patch,
            "patches": grid.num_patches,
        }),
    );
    obj.insert("config".to_string(), ctx.config_echo());
    write_json(&ctx.out.join("mask_preview.json"), &doc)?;
    println!(
        "mask-preview: {} groups x {} patches at ratio {}",
        plan.groups.len(),
        grid.num_patches,
        plan.ratio
    );
    Ok(())
}

// ---- training and evaluation --------------------------------------------------

fn single_strategy(ctx: &Ctx) -> Result<Strategy> {
    ctx.config
        .grouping
        .strategy
        .single()
        .ok_or_else(|| Error::config("/grouping/strategy", "this command needs a single strategy, not ALL"))
}

fn metrics_row(row: &EpochMetrics) -> String {
    let opt = |v: Option<f64>| v.map(csv_f64).unwrap_or_default();
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}",
        row.epoch,
        csv_f64(row.weights.eta),
        csv_f64(row.weights.lambda),
        csv_f64(row.weights.mu),
        opt(row.train_total),
        opt(row.train_mae),
        opt(row.train_ssim_n),
        opt(row.train_sid_n),
        csv_f64(row.eval.masked_mae),
        csv_f64(row.eval.masked_psnr),
        csv_f64(row.eval.composite_ssim),
        csv_f64(row.seconds),
    )
}

fn epoch_json(row: &EpochMetrics) -> Value {
    let opt = |v: Option<f64>| v.map(json_f64).unwrap_or(Value::Null);
    json!({
        "epoch": row.epoch,
        "weights": {
            "eta": json_f64(row.weights.eta),
            "lambda": json_f64(row.weights.lambda),
            "mu": json_f64(row.weights.mu),
        },
        "lr": json_f64(row.lr),
        "train_total": opt(row.train_total),
        "train_mae": opt(row.train_mae),
        "train_ssim_n": opt(row.train_ssim_n),
        "train_sid_n": opt(row.train_sid_n),
        "eval": eval_json(&row.eval),
        "seconds": json_f64(row.seconds),
    })
}

pub fn cmd_train(ctx: &Ctx, resume: bool, stop_after: Option<usize>) -> Result<()> {
    let manifest = ctx.load_manifest()?;
    let train = ctx.load_split(&manifest, Split::Train)?;
    let val = ctx.load_split(&manifest, Split::Val)?;

    let strategy = single_strategy(ctx)?;
    let grouping = compute_grouping(strategy, &train, &ctx.config.grouping, ctx.seed)?;
    for w in &grouping.warnings {
        eprintln!("warning: {w}");
    }
    grouping_file(&ctx.out, &grouping)?;

    let model = ctx.config.model_config(grouping.num_groups);
    model.validate()?;
    let tcfg = ctx.config.train_config(ctx.seed);
    let ckpt_path = ctx.out.join("model.ckpt");
    let csv_path = ctx.out.join("metrics.csv");
    let echo = ctx.config_echo();

    let mut state = if resume {
        resume_state(load_checkpoint(&ckpt_path)?, &model, &grouping, &tcfg)?
    } else {
        init_state(&model, &grouping, &tcfg)?
    };

    let mut csv = if resume && csv_path.exists() {
        fs::OpenOptions::new().append(true).open(&csv_path)?
    } else {
        let mut f = fs::File::create(&csv_path)?;
        writeln!(f, "{METRICS_HEADER}")?;
        f
    };

    let upto = stop_after.unwrap_or(tcfg.epochs).min(tcfg.epochs);
    if tcfg.epochs == 0 {
        train_loop(&mut state, &train, &val, &grouping, &model, &tcfg)?;
        writeln!(csv, "{}", metrics_row(&state.history[0]))?;
        save_checkpoint(&state, &ckpt_path, &echo)?;
    } else {
        // checkpoint at every epoch boundary so an interrupted run resumes
        // onto the identical trajectory
        for e in state.epoch..upto {
            train_epochs(&mut state, &train, &val, &grouping, &model, &tcfg, e + 1)?;
            let row = state.history.last().expect("one row per epoch");
            writeln!(csv, "{}", metrics_row(row))?;
            save_checkpoint(&state, &ckpt_path, &echo)?;
        }
    }

    let final_json = match state.history.last() {
        Some(row) => epoch_json(row),
        None => {
            // resume of an already-finished run: re-evaluate for the summary
            let eval_ds = if val.tiles.is_empty() { &train } else { &val };
            let m = evaluate(eval_ds, &grouping, &model, &state.params, &tcfg.ssim, state.run_seed)?;
            json!({ "epoch": state.epoch, "eval": eval_json(&m) })
        }
    };
    write_json(
        &ctx.out.join("metrics.json"),
        &json!({
            "config": echo,
            "seed": ctx.seed,
            "grouping": { "strategy": grouping.strategy.name(), "num_groups": grouping.num_groups },
            "epochs_completed": state.epoch,
            "final": final_json,
        }),
    )?;
    let last_mae = final_json
        .pointer("/eval/masked_mae")
        .and_then(Value::as_f64)
        .unwrap_or(f64::NAN);
    println!("train: {} epochs done, eval masked MAE {last_mae:.6}", state.epoch);
    Ok(())
}

pub fn cmd_eval(ctx: &Ctx) -> Result<()> {
    let manifest = ctx.load_manifest()?;
    // held-out preference: test, else val, else train
    let (split_name, ds) = {
        let test = ctx.load_split(&manifest, Split::Test)?;
        if !test.tiles.is_empty() {
            ("test", test)
        } else {
            let val = ctx.load_split(&manifest, Split::Val)?;
            if !val.tiles.is_empty() {
                ("val", val)
            } else {
                ("train", ctx.load_split(&manifest, Split::Train)?)
            }
        }
    };
    let train = ctx.load_split(&manifest, Split::Train)?;
    let strategy = single_strategy(ctx)?;
    let grouping = compute_grouping(strategy, &train, &ctx.config.grouping, ctx.seed)?;

    let model = ctx.config.model_config(grouping.num_groups);
    model.validate()?;
    let tcfg = ctx.config.train_config(ctx.seed);
    let state = resume_state(load_checkpoint(&ctx.out.join("model.ckpt"))?, &model, &grouping, &tcfg)?;
    // masks derive from the checkpointed run seed, matching training-time eval
    let m = evaluate(&ds, &grouping, &model, &state.params, &tcfg.ssim, state.run_seed)?;
    write_json(
        &ctx.out.join("eval.json"),
        &json!({
            "config": ctx.config_echo(),
            "seed": ctx.seed,
            "split": split_name,
            "epoch": state.epoch,
            "grouping": { "strategy": grouping.strategy.name(), "num_groups": grouping.num_groups },
            "metrics": eval_json(&m),
        }),
    )?;
    println!(
        "eval[{split_name}]: masked MAE {:.6}, PSNR {:.2}, SSIM {:.4}",
        m.masked_mae, m.masked_psnr, m.composite_ssim
    );
    Ok(())
}

// ---- ablation -----------------------------------------------------------------

struct Cell {
    state: TrainState,
    seconds_per_epoch: f64,
}

fn run_cell(
    train: &Dataset,
    val: &Dataset,
    grouping: &GroupingResult,
    model: &ModelConfig,
    tcfg: &specmae_core::trainer::TrainConfig,
) -> Result<Cell> {
    let mut state = init_state(model, grouping, tcfg)?;
    train_loop(&mut state, train, val, grouping, model, tcfg)?;
    let n = state.history.len().max(1) as f64;
    let seconds_per_epoch = state.history.iter().map(|r| r.seconds).sum::<f64>() / n;
    Ok(Cell { state, seconds_per_epoch })
}

fn last_eval(cell: &Cell) -> specmae_core::trainer::EvalMetrics {
    cell.state.history.last().expect("trained at least one row").eval
}

pub fn cmd_ablate(ctx: &Ctx, axis: &str) -> Result<()> {
    let manifest = ctx.load_manifest()?;
    let train = ctx.load_split(&manifest, Split::Train)?;
    let val = ctx.load_split(&manifest, Split::Val)?;
    let tcfg = ctx.config.train_config(ctx.seed);

    let csv = match axis {
        "mask_ratio" => {
            let strategy = single_strategy(ctx)?;
            let grouping = compute_grouping(strategy, &train, &ctx.config.grouping, ctx.seed)?;
            let mut csv = String::from(
                "mask_ratio,eval_mae_own,eval_psnr_own,eval_ssim_own,eval_mae_75,eval_psnr_75,eval_ssim_75\n",
            );
            for ratio in [0.6, 0.75, 0.85] {
                let model = ModelConfig {
                    mask_ratio: ratio,
                    ..ctx.config.model_config(grouping.num_groups)
                };
                model.validate()?;
                let cell = run_cell(&train, &val, &grouping, &model, &tcfg)?;
                let own = last_eval(&cell);
                // fixed-ratio column: same weights, masks re-drawn at 75%
                let at75 = ModelConfig { mask_ratio: 0.75, ..model };
                let eval_ds = if val.tiles.is_empty() { &train } else { &val };
                let m75 = evaluate(
                    eval_ds,
                    &grouping,
                    &at75,
                    &cell.state.params,
                    &tcfg.ssim,
                    cell.state.run_seed,
                )?;
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    csv_f64(ratio),
                    csv_f64(own.masked_mae),
                    csv_f64(own.masked_psnr),
                    csv_f64(own.composite_ssim),
                    csv_f64(m75.masked_mae),
                    csv_f64(m75.masked_psnr),
                    csv_f64(m75.composite_ssim),
                ));
            }
            csv
        }
        "num_groups" => {
            let strategy = single_strategy(ctx)?;
            let mut counts = vec![1usize];
            if ctx.config.grouping.num_groups > 1 {
                counts.push(ctx.config.grouping.num_groups);
            }
            let mut csv =
                String::from("num_groups,eval_mae,eval_psnr,eval_ssim,seconds_per_epoch\n");
            for g in counts {
                let grouping = if g == 1 {
                    GroupingResult::single_group(train.channels(), strategy)
                } else {
                    compute_grouping(strategy, &train, &ctx.config.grouping, ctx.seed)?
                };
                let model = ctx.config.model_config(grouping.num_groups);
                model.validate()?;
                let cell = run_cell(&train, &val, &grouping, &model, &tcfg)?;
                let m = last_eval(&cell);
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    g,
                    csv_f64(m.masked_mae),
                    csv_f64(m.masked_psnr),
                    csv_f64(m.composite_ssim),
                    csv_f64(cell.seconds_per_epoch),
                ));
            }
            csv
        }
        "grouping_strategy" => {
            let features = FeatureMatrix::from_stats(&compute_channel_stats(&train)?);
            let mut csv =
                String::from("strategy,num_groups,silhouette,eval_mae,eval_psnr,eval_ssim\n");
            for strategy in Strategy::ALL {
                let grouping = compute_grouping(strategy, &train, &ctx.config.grouping, ctx.seed)?;
                let silhouette = match silhouette_score(&features, &grouping) {
                    Ok(v) => csv_f64(v),
                    Err(Error::UndefinedScore) => "nan".to_string(),
                    Err(e) => return Err(e),
                };
                let model = ctx.config.model_config(grouping.num_groups);
                model.validate()?;
                let cell = run_cell(&train, &val, &grouping, &model, &tcfg)?;
                let m = last_eval(&cell);
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    grouping.strategy.name(),
                    grouping.num_groups,
                    silhouette,
                    csv_f64(m.masked_mae),
                    csv_f64(m.masked_psnr),
                    csv_f64(m.composite_ssim),
                ));
            }
            csv
        }
        "loss_combo" => {
            let strategy = single_strategy(ctx)?;
            let grouping = compute_grouping(strategy, &train, &ctx.config.grouping, ctx.seed)?;
            let model = ctx.config.model_config(grouping.num_groups);
            model.validate()?;
            let combos: [(&str, LossWeights); 4] = [
                ("MAE", LossWeights { eta: 1.0, lambda: 0.0, mu: 0.0 }),
                ("MAE+SSIM", LossWeights { eta: 0.85, lambda: 0.15, mu: 0.0 }),
                ("MAE+SID", LossWeights { eta: 0.85, lambda: 0.0, mu: 0.15 }),
                ("MAE+SSIM+SID", LossWeights { eta: 0.7, lambda: 0.15, mu: 0.15 }),
            ];
            let mut csv = String::from("combo,eta,lambda,mu,eval_mae,eval_psnr,eval_ssim\n");
            for (name, target) in combos {
                let mut cfg = tcfg.clone();
                cfg.weights_target = target;
                let cell = run_cell(&train, &val, &grouping, &model, &cfg)?;
                let m = last_eval(&cell);
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    name,
                    csv_f64(target.eta),
                    csv_f64(target.lambda),
                    csv_f64(target.mu),
                    csv_f64(m.masked_mae),
                    csv_f64(m.masked_psnr),
                    csv_f64(m.composite_ssim),
                ));
            }
            csv
        }
        other => {
            return Err(Error::config(
                "/ablate/axis",
                format!("unknown axis {other:?}; expected mask_ratio, num_groups, grouping_strategy, or loss_combo"),
            ))
        }
    };
    let path = ctx.out.join(format!("ablate_{axis}.csv"));
    write_text(&path, &csv)?;
    println!("ablate[{axis}]: wrote {}", path.display());
    Ok(())
}

// ---- report ---------------------------------------------------------------------

fn load_json(path: &Path) -> Option<Value> {
    let text = fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

pub fn cmd_report(ctx: &Ctx) -> Result<()> {
    let mut groupings = Vec::new();
    let mut ablations = Vec::new();
    if let Ok(entries) = fs::read_dir(&ctx.out) {
        for entry in entries.flatten() {
            let name = entry.file_name().to_string_lossy().to_string();
            if name.starts_with("grouping_") && name.ends_with(".json") {
                groupings.push(name);
            } else if name.starts_with("ablate_") && name.ends_with(".csv") {
                ablations.push(name);
            }
        }
    }
    groupings.sort();
    ablations.sort();

    let metrics = load_json(&ctx.out.join("metrics.json"));
    let eval = load_json(&ctx.out.join("eval.json"));
    let report = json!({
        "config": ctx.config_echo(),
        "seed": ctx.seed,
        "artifacts": {
            "manifest": ctx.manifest_path().exists(),
            "checkpoint": ctx.out.join("model.ckpt").exists(),
            "groupings": groupings,
            "ablations": ablations,
            "silhouette_csv": ctx.out.join("silhouette.csv").exists(),
            "mask_preview": ctx.out.join("mask_preview.json").exists(),
            "train": metrics.and_then(|m| m.get("final").cloned()).unwrap_or(Value::Null),
            "eval": eval.and_then(|e| e.get("metrics").cloned()).unwrap_or(Value::Null),
        },
    });
    write_json(&ctx.out.join("report.json"), &report)?;
    println!("report: wrote {}", ctx.out.join("report.json").display());
    Ok(())
}
