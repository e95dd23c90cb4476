//! Subcommand implementations.

use std::path::{Path, PathBuf};

use splatspa::io::{self, checkpoint};
use splatspa::train::{self, PruneCriterion, SparsifyScore, TrainConfig, TrainMode, Trainer};
use splatspa::{loss, Image, LossConfig};

use crate::config::{RunArgs, RunConfig};
use crate::{csv, CliError};

fn read_target(cfg: &RunConfig) -> Result<Image, CliError> {
    let path = cfg.target()?;
    io::read_image(path).map_err(|e| CliError::input(format!("cannot read target image {}: {e}", path.display())))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

fn train_config(cfg: &RunConfig) -> TrainConfig {
    TrainConfig {
        background: cfg.background,
        ..TrainConfig::default()
    }
}

/// Builds a fresh trainer, or restores one from `--resume`.
fn make_trainer(args: &RunArgs, cfg: &RunConfig, gt: Image, build: impl FnOnce(Image) -> Result<Trainer, CliError>) -> Result<Trainer, CliError> {
    match &args.resume {
        Some(path) => {
            let model = checkpoint::load_checkpoint(path).map_err(|e| CliError::input(format!("cannot resume from {}: {e}", path.display())))?;
            let mut trainer = Trainer::from_checkpoint(model, gt)?;
            // A resumed run may be extended, but its milestones stay as recorded.
            if cfg.iters > trainer.schedule.total_iters {
                trainer.schedule.total_iters = cfg.iters;
                trainer.finished = false;
            }
            Ok(trainer)
        }
        None => build(gt),
    }
}

fn run_with_checkpoints(trainer: &mut Trainer, cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let ckpt = out.join("checkpoint.ckpt");
    if let Some(every) = cfg.checkpoint_every {
        while trainer.iter < trainer.schedule.total_iters {
            let next = (trainer.iter / every + 1) * every;
            trainer.run_until(next)?;
            checkpoint::save_checkpoint(&trainer.checkpoint(), &ckpt).map_err(CliError::from_runtime)?;
        }
    }
    trainer.run()?;
    checkpoint::save_checkpoint(&trainer.checkpoint(), &ckpt).map_err(CliError::from_runtime)?;
    Ok(())
}

fn prepare_out(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(&cfg.out).map_err(|e| CliError::runtime(format!("{}: {e}", cfg.out.display())))?;
    Ok(cfg.out.clone())
}

fn write_common(trainer: &Trainer, out: &Path) -> Result<(), CliError> {
    write(&out.join("metrics.csv"), csv::metrics(&trainer.log))?;
    io::write_image(&trainer.render()?, out.join("final.png")).map_err(CliError::from_runtime)?;
    io::write_splat_ply(&io::cloud_to_splat_ply(&trainer.cloud), out.join("cloud.ply")).map_err(CliError::from_runtime)?;
    Ok(())
}

fn write_prune_outputs(trainer: &Trainer, out: &Path) -> Result<(), CliError> {
    write(&out.join("events.csv"), csv::events(&trainer.log))?;
    if let Some(snap) = &trainer.prune_snapshot {
        io::write_image(&snap.image_before, out.join("pre_prune.png")).map_err(CliError::from_runtime)?;
        io::write_image(&snap.image_after, out.join("post_prune.png")).map_err(CliError::from_runtime)?;
    }
    Ok(())
}

fn summary(trainer: &Trainer) {
    if let Some(r) = trainer.log.final_metrics() {
        println!(
            "iter={} gaussians={} loss={:.6} psnr={:.4} ssim={:.4}",
            r.iter,
            trainer.cloud.alive_count(),
            r.loss,
            r.psnr,
            r.ssim
        );
    }
}

pub fn fit(args: &RunArgs) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(args)?;
    cfg.validate_common()?;
    let gt = read_target(&cfg)?;
    let out = prepare_out(&cfg)?;
    let mut trainer = make_trainer(args, &cfg, gt, |gt| {
        let cloud = train::init_cloud(&gt, cfg.gaussians, cfg.seed)?;
        let schedule = cfg.dense_schedule(gt.width, gt.height);
        Ok(Trainer::new(cloud, gt, train_config(&cfg), schedule, TrainMode::Dense)?)
    })?;
    run_with_checkpoints(&mut trainer, &cfg, &out)?;
    write_common(&trainer, &out)?;
    summary(&trainer);
    Ok(())
}

pub fn sparsify(args: &RunArgs, hit_count: bool) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(args)?;
    cfg.validate_sparsify()?;
    let gt = read_target(&cfg)?;
    let out = prepare_out(&cfg)?;
    let mut trainer = make_trainer(args, &cfg, gt, |gt| {
        let cloud = train::init_cloud(&gt, cfg.gaussians, cfg.seed)?;
        let schedule = cfg.schedule(gt.width, gt.height);
        let mode = TrainMode::GaussianSpa {
            sparsifier: cfg.sparsifier(),
            score: if hit_count { SparsifyScore::HitCount } else { SparsifyScore::Magnitude },
        };
        Ok(Trainer::new(cloud, gt, train_config(&cfg), schedule, mode)?)
    })?;
    run_with_checkpoints(&mut trainer, &cfg, &out)?;
    write_common(&trainer, &out)?;
    write(&out.join("residual.csv"), csv::residuals(&trainer.log))?;
    write(&out.join("opacity_hist.csv"), csv::histograms(&trainer.log))?;
    write_prune_outputs(&trainer, &out)?;
    if let Some(t) = trainer.log.termination {
        println!("sparsifier stopped after {} steps: {t:?}", trainer.outer);
    }
    summary(&trainer);
    Ok(())
}

pub fn baseline(args: &RunArgs, criterion: PruneCriterion, keep_fraction: f64) -> Result<(), CliError> {
    if !(keep_fraction > 0.0 && keep_fraction < 1.0) {
        return Err(CliError::input(format!("keep_fraction must lie in (0, 1), got {keep_fraction}")));
    }
    let cfg = RunConfig::resolve(args)?;
    cfg.validate_common()?;
    cfg.validate_milestones()?;
    let gt = read_target(&cfg)?;
    let out = prepare_out(&cfg)?;
    let mut trainer = make_trainer(args, &cfg, gt, |gt| {
        let cloud = train::init_cloud(&gt, cfg.gaussians, cfg.seed)?;
        let schedule = cfg.schedule(gt.width, gt.height);
        let mode = TrainMode::OneShot { criterion, keep_fraction };
        Ok(Trainer::new(cloud, gt, train_config(&cfg), schedule, mode)?)
    })?;
    run_with_checkpoints(&mut trainer, &cfg, &out)?;
    write_common(&trainer, &out)?;
    write_prune_outputs(&trainer, &out)?;
    summary(&trainer);
    Ok(())
}

pub fn prune_ply(input: &Path, output: &Path, kappa: usize, scores: Option<&Path>) -> Result<(), CliError> {
    let record = io::read_splat_ply(input).map_err(|e| CliError::input(format!("{}: {e}", input.display())))?;
    let score = match scores {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
            let values = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(|l| l.parse::<f64>().map_err(|e| CliError::input(format!("{}: bad score `{l}`: {e}", path.display()))))
                .collect::<Result<Vec<_>, _>>()?;
            io::PlyScore::External(values)
        }
        None => io::PlyScore::Opacity,
    };
    let simplified = io::simplify_splat_ply(&record, kappa, &score)?;
    io::write_splat_ply(&simplified, output).map_err(CliError::from_runtime)?;
    let total_mass: f64 = record.opacities()?.iter().sum();
    let kept_mass: f64 = simplified.opacities()?.iter().sum();
    let fraction = if total_mass > 0.0 { kept_mass / total_mass } else { 0.0 };
    println!("retained={} total={} opacity_mass={fraction:.4}", simplified.count, record.count);
    Ok(())
}

pub fn eval(image: &Path, gt: &Path) -> Result<(), CliError> {
    let read = |p: &Path| io::read_image(p).map_err(|e| CliError::input(format!("{}: {e}", p.display())));
    let (a, b) = (read(image)?, read(gt)?);
    if !a.same_shape(&b) {
        return Err(CliError::input(format!(
            "image is {}x{} but reference is {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let psnr = loss::psnr(&a, &b)?;
    let ssim = loss::ssim(&a, &b, &LossConfig::default())?;
    println!("psnr={psnr:.4} ssim={ssim:.4}");
    Ok(())
}
