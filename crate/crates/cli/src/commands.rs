use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use gendistill::checkpoint::{CheckpointMeta, GeneratorCheckpoint, Stage};
use gendistill::data::{load_dataset, DatasetHandle, Split};
use gendistill::deploy::{export_distilled, import_distilled, Deployer, ExportFormat};
use gendistill::distill::{distill, DistillRecord};
use gendistill::evalharness::{
    ablate_local_weight, benchmark, cross_architecture, read_repeats_csv, write_repeats_csv, write_summary_csv, EvalReport,
};
use gendistill::gantrain::{pretrain_gan, GanLossRecord};
use gendistill::report::{render_ablation, render_grid, render_tables, GridLayout};
use gendistill::Error;

use crate::cli::Command;
use crate::config::{Budget, Config};
use crate::manifest::RunManifest;

pub const CHECKPOINT_FILE: &str = "generator.ckpt";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Where a command's manifest goes: inside its output directory, or beside
/// its output file.
pub fn manifest_path(cmd: &Command) -> Option<PathBuf> {
    let out = cmd.out()?;
    Some(match cmd {
        Command::Grid { .. } | Command::Tables { .. } | Command::Plot { .. } => out.with_extension("manifest.json"),
        _ => out.join(MANIFEST_FILE),
    })
}

/// Accepts a checkpoint file or a run directory containing one.
pub fn checkpoint_file(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(CHECKPOINT_FILE)
    } else {
        path.to_path_buf()
    }
}

fn meta(cfg: &Config) -> Result<CheckpointMeta> {
    let created_unix = if cfg.deterministic { 0 } else { SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0) };
    Ok(CheckpointMeta {
        dataset: cfg.dataset.clone(),
        config_hash: cfg.hash(),
        created_unix,
        config: serde_json::to_value(cfg)?,
        ..Default::default()
    })
}

fn load_split(cfg: &Config, split: Split) -> Result<DatasetHandle> {
    let h = load_dataset(&cfg.dataset, split, &cfg.data_dir)?;
    log::info!("loaded {} {} ({} images)", cfg.dataset, split.as_str(), h.len());
    Ok(h)
}

fn load_checkpoint(path: &Path, m: &mut RunManifest) -> Result<GeneratorCheckpoint> {
    let file = checkpoint_file(path);
    let ck = GeneratorCheckpoint::load(&file)?;
    m.input(&file)?;
    Ok(ck)
}

fn check_dataset(ck: &GeneratorCheckpoint, cfg: &Config) -> Result<()> {
    if !ck.meta.dataset.is_empty() && ck.meta.dataset != cfg.dataset {
        return Err(Error::Config {
            field: "dataset".into(),
            msg: format!("checkpoint was trained on {}, config names {}", ck.meta.dataset, cfg.dataset),
        }
        .into());
    }
    Ok(())
}

fn write_reports(out: &Path, stem: &str, reports: &[EvalReport], m: &mut RunManifest) -> Result<()> {
    let repeats = out.join(format!("{stem}repeats.csv"));
    let summary = out.join(format!("{stem}summary.csv"));
    let tables = out.join(format!("{stem}tables.md"));
    write_repeats_csv(reports, &repeats)?;
    write_summary_csv(reports, &summary)?;
    render_tables(reports, &tables)?;
    for p in [&repeats, &summary, &tables] {
        m.output(p)?;
    }
    for r in reports {
        println!("{} ipc={} {}{}: {}", r.dataset, r.ipc, r.arch, r.omega_l.map(|w| format!(" omega_l={w}")).unwrap_or_default(), gendistill::report::format_cell(r.mean, r.std));
    }
    Ok(())
}

/// Runs one command with an already resolved configuration.
pub fn execute(cmd: &Command, cfg: &Config, budget: Option<Budget>) -> Result<RunManifest> {
    let mut m = RunManifest::new(cmd.clone(), budget, cfg.clone());
    match cmd {
        Command::Pretrain { out } => {
            fs::create_dir_all(out)?;
            let train = load_split(cfg, Split::Train)?;
            let loss_path = out.join("gan_loss.csv");
            let mut w = csv::Writer::from_path(&loss_path)?;
            let mut write_err = None;
            let mut on_record = |r: &GanLossRecord| {
                if let Err(e) = w.serialize(r) {
                    write_err.get_or_insert(e);
                }
                if r.iter % 50 == 0 {
                    log::info!("gan epoch {} iter {}: d {:.4} g {:.4}", r.epoch, r.iter, r.d_loss, r.g_loss);
                }
            };
            let outcome = pretrain_gan(&train, &cfg.gan_train()?, &cfg.gan_arch()?, meta(cfg)?, Some(&out.join("last_good.ckpt")), &mut on_record);
            w.flush()?;
            if let Some(e) = write_err {
                return Err(e.into());
            }
            let outcome = outcome?;
            let ck_path = out.join(CHECKPOINT_FILE);
            outcome.checkpoint.save(&ck_path)?;
            m.training_steps = 2 * outcome.records.len() as u64;
            m.output(&ck_path)?;
            m.output(&loss_path)?;
            println!("stage-1 checkpoint {} ({} iterations)", ck_path.display(), outcome.records.len());
        }
        Command::Distill { ckpt, out } => {
            let ck = load_checkpoint(ckpt, &mut m)?;
            check_dataset(&ck, cfg)?;
            if ck.stage != Stage::Pretrained {
                return Err(Error::Usage(format!("{} is a {:?} checkpoint; distill starts from a pretrained one", ckpt.display(), ck.stage)).into());
            }
            fs::create_dir_all(out)?;
            let train = load_split(cfg, Split::Train)?;
            let loss_path = out.join("distill_loss.csv");
            let mut w = csv::Writer::from_path(&loss_path)?;
            let mut write_err = None;
            let mut on_record = |r: &DistillRecord| {
                if let Err(e) = w.serialize(r) {
                    write_err.get_or_insert(e);
                }
                if r.iter % 10 == 0 {
                    log::info!(
                        "distill epoch {} iter {} [{}]: global {:.3} local {:.3} cgan {:.4} total {:.4}",
                        r.epoch, r.iter, r.arch, r.global, r.local, r.cgan, r.total
                    );
                }
            };
            let outcome = distill(&ck, &train, &cfg.model_pool()?, &cfg.distill()?, meta(cfg)?, Some(&out.join("last_good.ckpt")), &mut on_record);
            w.flush()?;
            if let Some(e) = write_err {
                return Err(e.into());
            }
            let outcome = outcome?;
            let ck_path = out.join(CHECKPOINT_FILE);
            outcome.checkpoint.save(&ck_path)?;
            m.training_steps = 2 * outcome.records.len() as u64;
            m.output(&ck_path)?;
            m.output(&loss_path)?;
            println!("stage-2 checkpoint {} ({} iterations)", ck_path.display(), outcome.records.len());
        }
        Command::Generate { ckpt, out, format } => {
            let format: ExportFormat = format.parse()?;
            let ck = load_checkpoint(ckpt, &mut m)?;
            let dep = Deployer::new(&ck)?;
            let before = dep.parameter_hash();
            let ds = dep.generate(cfg.ipc, cfg.seed)?;
            let after = dep.parameter_hash();
            let path = out.join(format!("distilled_ipc{}_seed{}.gds", cfg.ipc, cfg.seed));
            for p in export_distilled(&ds, &path, format)? {
                m.output(&p)?;
            }
            m.training_steps = 0;
            m.notes.insert("parameter_hash_before".into(), before);
            m.notes.insert("parameter_hash_after".into(), after);
            println!("{} images ({} per class) -> {}", ds.len(), cfg.ipc, path.display());
        }
        Command::Evaluate { ckpt, out } => {
            let ck = load_checkpoint(ckpt, &mut m)?;
            check_dataset(&ck, cfg)?;
            let test = load_split(cfg, Split::Test)?;
            let report = benchmark(&ck, &test, cfg.ipc, &cfg.eval()?)?;
            write_reports(out, "", &[report], &mut m)?;
        }
        Command::Crossarch { ckpt, out } => {
            let ck = load_checkpoint(ckpt, &mut m)?;
            check_dataset(&ck, cfg)?;
            let archs = cfg.cross_archs()?;
            let test = load_split(cfg, Split::Test)?;
            let reports = cross_architecture(&ck, &test, cfg.ipc, &archs, &cfg.eval()?)?;
            write_reports(out, "", &reports, &mut m)?;
        }
        Command::Ablate { ckpt, out } => {
            let ck = load_checkpoint(ckpt, &mut m)?;
            check_dataset(&ck, cfg)?;
            if ck.stage != Stage::Pretrained {
                return Err(Error::Usage("ablate starts from a pretrained checkpoint".into()).into());
            }
            let values = cfg.omega_l_list()?;
            let train = load_split(cfg, Split::Train)?;
            let test = load_split(cfg, Split::Test)?;
            let dcfg = cfg.distill()?;
            let results = ablate_local_weight(&ck, &train, &test, cfg.ipc, &values, &dcfg, &cfg.model_pool()?, &cfg.eval()?, &meta(cfg)?)?;
            m.training_steps = 2 * (dcfg.epochs * dcfg.iters * values.len()) as u64;
            let reports: Vec<EvalReport> = results.iter().map(|r| r.report.clone()).collect();
            fs::create_dir_all(out)?;
            write_reports(out, "ablation_", &reports, &mut m)?;
            if reports.len() >= 2 {
                let svg = out.join("ablation.svg");
                let pairs: Vec<(f64, EvalReport)> = reports.iter().map(|r| (r.omega_l.unwrap_or_default(), r.clone())).collect();
                render_ablation(&pairs, &svg)?;
                m.output(&svg)?;
            }
        }
        Command::Grid { archive, ckpt, cols, scale, out } => {
            let ds = match (archive, ckpt) {
                (Some(a), _) => {
                    m.input(a)?;
                    import_distilled(a)?
                }
                (None, Some(c)) => Deployer::new(&load_checkpoint(c, &mut m)?)?.generate(cfg.ipc, cfg.seed)?,
                (None, None) => return Err(Error::Usage("grid needs --archive or --ckpt".into()).into()),
            };
            let layout = GridLayout { cols: cols.unwrap_or(ds.ipc().min(10)), scale: *scale, ..GridLayout::full(&ds) };
            render_grid(&ds, &layout, out)?;
            m.output(out)?;
            println!("grid {} ({} classes x {} columns)", out.display(), ds.num_classes, layout.cols);
        }
        Command::Tables { csv, out } => {
            let mut reports = Vec::new();
            for p in csv {
                m.input(p)?;
                reports.extend(read_repeats_csv(p)?);
            }
            render_tables(&reports, out)?;
            m.output(out)?;
        }
        Command::Plot { csv, out } => {
            m.input(csv)?;
            let pairs: Vec<(f64, EvalReport)> = read_repeats_csv(csv)?
                .into_iter()
                .map(|r| r.omega_l.map(|w| (w, r)).ok_or_else(|| Error::Usage(format!("{} has rows without omega_l", csv.display()))))
                .collect::<std::result::Result<_, _>>()?;
            render_ablation(&pairs, out)?;
            m.output(out)?;
        }
        Command::Run { .. } => unreachable!("replays are expanded by the caller"),
    }
    if let Some(path) = manifest_path(cmd) {
        m.save(&path).with_context(|| "writing run manifest")?;
    }
    Ok(m)
}
