//! Training loop: dense fitting, optimizing-sparsifying training with a
//! budgeted prune, and one-shot pruning baselines.
//!
//! Iteration `k` renders the current cloud, logs metrics for that render when
//! due, back-propagates, and applies one Adam step. Milestones fire at the start
//! of their iteration: the sparsifier is initialized at `sparsify_start_iter` and
//! Gaussians are removed at `prune_iter`, so the metrics row for `prune_iter`
//! already describes the pruned model. After `total_iters` steps a final row
//! evaluates the finished cloud.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{CloudGrad, GaussianCloud, ParamGroup};
use crate::error::{Error, Result};
use crate::gaussian::{logit, sigmoid, Gaussian2D};
use crate::image::Image;
use crate::loss::{self, LossConfig};
use crate::optim::{AdamConfig, LearningRates, OptimizerState};
use crate::render::{self, RenderSettings};
use crate::sparsify::{self, ProjectionCriterion, SparsifierConfig, SparsifierState};

pub const HIST_BINS: usize = 32;

/// Initial activated opacity of every Gaussian.
pub const INIT_OPACITY: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub total_iters: usize,
    /// Sparsification is disabled when this is at or past `total_iters`.
    pub sparsify_start_iter: usize,
    pub prune_iter: usize,
    pub lr: LearningRates,
    pub rng_seed: u64,
    pub eval_every: usize,
}

impl TrainSchedule {
    /// Desk-scale milestones: 3K warmup, prune at 6K, tune to 8K.
    pub fn toy(width: usize, height: usize) -> Self {
        TrainSchedule {
            total_iters: 8000,
            sparsify_start_iter: 3000,
            prune_iter: 6000,
            lr: LearningRates::for_image(width, height),
            rng_seed: 0,
            eval_every: 100,
        }
    }

    /// Plain fitting for `iters` iterations with no milestones.
    pub fn dense(width: usize, height: usize, iters: usize) -> Self {
        TrainSchedule {
            total_iters: iters,
            sparsify_start_iter: iters,
            prune_iter: iters,
            lr: LearningRates::for_image(width, height),
            rng_seed: 0,
            eval_every: 100,
        }
    }

    pub fn sparsify_enabled(&self) -> bool {
        self.sparsify_start_iter < self.total_iters
    }

    pub fn validate(&self) -> Result<()> {
        self.lr.validate()?;
        if self.eval_every == 0 {
            return Err(Error::InvalidSchedule("eval_every must be at least 1".into()));
        }
        if self.sparsify_enabled() && !(self.sparsify_start_iter < self.prune_iter && self.prune_iter <= self.total_iters) {
            return Err(Error::InvalidSchedule(format!(
                "need sparsify_start_iter < prune_iter <= total_iters, got {} / {} / {}",
                self.sparsify_start_iter, self.prune_iter, self.total_iters
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub adam: AdamConfig,
    pub background: [f64; 3],
    pub tile_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossConfig::default(),
            adam: AdamConfig::default(),
            background: [0.0; 3],
            tile_size: 16,
        }
    }
}

impl TrainConfig {
    pub fn render_settings(&self, width: usize, height: usize) -> RenderSettings {
        RenderSettings {
            tile_size: self.tile_size,
            ..RenderSettings::new(width, height).with_background(self.background)
        }
    }
}

/// Which Gaussians survive a prune.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PruneCriterion {
    /// Keep the support of the sparse auxiliary variable `z`.
    ZeroZ,
    /// Keep the highest activated opacities.
    OpacityMagnitude,
    /// Keep the highest accumulated blend weights.
    HitCount,
}

/// Ranking used by the sparsifying projection during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SparsifyScore {
    Magnitude,
    /// Hit counts of the current cloud, recomputed at every sparsifying step.
    HitCount,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TrainMode {
    Dense,
    GaussianSpa {
        sparsifier: SparsifierConfig,
        score: SparsifyScore,
    },
    OneShot {
        criterion: PruneCriterion,
        keep_fraction: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub iter: usize,
    pub loss: f64,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub iter: usize,
    pub outer: usize,
    pub residual: f64,
    /// Loss of the iteration's render plus `δ/2 ‖a − z + λ‖²`.
    pub lagrangian: f64,
    /// As `lagrangian`, plus `δ/2 ‖λ‖²`.
    pub lagrangian_full: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistRow {
    pub iter: usize,
    pub counts: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneEvent {
    pub iter: usize,
    pub alive_before: usize,
    pub alive_after: usize,
    pub psnr_before: f64,
    pub psnr_after: f64,
}

/// How the optimizing-sparsifying loop ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    /// `‖a − z‖² ≤ ε` after the last sparsifying step.
    Converged,
    /// Outer count exceeded `T`.
    OuterCap,
    /// The prune milestone cut the loop off before either exit: every step in
    /// the sparsifying window was taken and the residual is still above `ε`.
    WindowClosed,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub metrics: Vec<MetricRow>,
    pub residuals: Vec<ResidualRow>,
    pub histograms: Vec<HistRow>,
    pub prune: Option<PruneEvent>,
    pub termination: Option<Termination>,
    /// `‖a − z‖²` when the loop ended: on convergence, at the outer cap, or at the prune.
    pub termination_residual: Option<f64>,
}

impl TrainLog {
    pub fn final_metrics(&self) -> Option<&MetricRow> {
        self.metrics.last()
    }

    pub fn metric_at(&self, iter: usize) -> Option<&MetricRow> {
        self.metrics.iter().find(|r| r.iter == iter)
    }
}

/// State captured around the prune event, kept in memory only.
#[derive(Clone, Debug)]
pub struct PruneSnapshot {
    pub iter: usize,
    pub opacities_before: Vec<f64>,
    pub image_before: Image,
    pub image_after: Image,
}

/// Histogram of activated opacities of alive Gaussians over [0, 1].
pub fn opacity_histogram(cloud: &GaussianCloud) -> Vec<u32> {
    let mut counts = vec![0u32; HIST_BINS];
    for (l, &alive) in cloud.opacity_logit.iter().zip(&cloud.alive) {
        if alive {
            let bin = ((sigmoid(*l) * HIST_BINS as f64) as usize).min(HIST_BINS - 1);
            counts[bin] += 1;
        }
    }
    counts
}

/// Random cloud over the image: uniform positions, colors sampled from `gt`,
/// isotropic scale `sqrt(W·H / n) / 2`, opacity 0.1, random order keys.
pub fn init_cloud(gt: &Image, n: usize, seed: u64) -> Result<GaussianCloud> {
    if n == 0 {
        return Err(Error::InvalidArgument("init_cloud needs n >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (gt.width as f64, gt.height as f64);
    let log_s = ((w * h / n as f64).sqrt() / 2.0).ln();
    let opacity_logit = logit(INIT_OPACITY);
    let mut cloud = GaussianCloud::new();
    for _ in 0..n {
        let x: f64 = rng.random_range(0.0..w);
        let y: f64 = rng.random_range(0.0..h);
        let color = gt.pixel((x as usize).min(gt.width - 1), (y as usize).min(gt.height - 1));
        cloud.push(Gaussian2D {
            mu: [x, y],
            theta: rng.random_range(0.0..std::f64::consts::PI),
            log_s: [log_s, log_s],
            opacity_logit,
            color,
            order_key: rng.random(),
        });
    }
    Ok(cloud)
}

/// Sum of per-Gaussian blend weights over all views.
pub fn hit_count_scores(cloud: &GaussianCloud, views: &[RenderSettings]) -> Result<Vec<f64>> {
    let mut scores = vec![0.0; cloud.len()];
    for view in views {
        for (s, w) in scores.iter_mut().zip(render::blend_weights(cloud, view)?) {
            *s += w;
        }
    }
    Ok(scores)
}

/// Objective value and full parameter gradient at the current cloud:
/// `loss(render(cloud), gt)` plus, when a sparsifier is supplied, the coupling
/// penalty `δ/2 ‖a − z + λ‖²` with its gradient chained through the sigmoid.
pub struct Evaluation {
    pub image: Image,
    pub loss: loss::LossValue,
    pub penalty: f64,
    pub grad: CloudGrad,
}

pub fn evaluate(
    cloud: &GaussianCloud,
    gt: &Image,
    settings: &RenderSettings,
    loss_cfg: &LossConfig,
    sparsifier: Option<&SparsifierState>,
) -> Result<Evaluation> {
    let image = render::render(cloud, settings)?;
    let lv = loss::loss(&image, gt, loss_cfg)?;
    let mut grad = render::render_backward(cloud, settings, &lv.grad)?;
    let mut penalty = 0.0;
    if let Some(state) = sparsifier {
        let a = cloud.opacities();
        let coupling = sparsify::coupling_gradient(&a, state)?;
        for ((g, c), a) in grad.opacity_logit.iter_mut().zip(coupling).zip(&a) {
            *g += c * a * (1.0 - a);
        }
        penalty = sparsify::penalty_terms(&a, state)?.0;
    }
    Ok(Evaluation {
        image,
        loss: lv,
        penalty,
        grad,
    })
}

fn first_non_finite(cloud: &GaussianCloud) -> Option<&'static str> {
    ParamGroup::ALL
        .into_iter()
        .find(|&g| cloud.column(g).iter().any(|v| !v.is_finite()))
        .map(ParamGroup::name)
}

fn first_non_finite_grad(grad: &CloudGrad) -> Option<&'static str> {
    ParamGroup::ALL
        .into_iter()
        .find(|&g| grad.column(g).iter().any(|v| !v.is_finite()))
        .map(ParamGroup::name)
}

/// A resumable training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub cloud: GaussianCloud,
    pub gt: Image,
    pub config: TrainConfig,
    pub schedule: TrainSchedule,
    pub mode: TrainMode,
    pub optimizer: OptimizerState,
    pub sparsifier: Option<SparsifierState>,
    /// Completed sparsifying steps.
    pub outer: usize,
    /// Set once the outer cap `T` is exceeded; `z` and `λ` are frozen from then on.
    pub sparsify_done: bool,
    /// Next iteration to run.
    pub iter: usize,
    pub finished: bool,
    pub log: TrainLog,
    pub prune_snapshot: Option<PruneSnapshot>,
}

impl Trainer {
    pub fn new(cloud: GaussianCloud, gt: Image, config: TrainConfig, schedule: TrainSchedule, mode: TrainMode) -> Result<Self> {
        schedule.validate()?;
        config.loss.validate()?;
        cloud.check_columns()?;
        config.render_settings(gt.width, gt.height).validate()?;
        match &mode {
            TrainMode::Dense => {}
            TrainMode::GaussianSpa { sparsifier, .. } => {
                sparsifier.validate()?;
                let alive = cloud.alive_count();
                if sparsifier.kappa >= alive {
                    return Err(Error::BudgetInfeasible {
                        kappa: sparsifier.kappa,
                        alive,
                    });
                }
            }
            TrainMode::OneShot { keep_fraction, .. } => {
                if !(*keep_fraction > 0.0 && *keep_fraction < 1.0) {
                    return Err(Error::InvalidArgument(format!("keep_fraction must lie in (0, 1), got {keep_fraction}")));
                }
                if !(schedule.prune_iter <= schedule.total_iters) {
                    return Err(Error::InvalidSchedule(format!(
                        "prune_iter {} is past total_iters {}",
                        schedule.prune_iter, schedule.total_iters
                    )));
                }
            }
        }
        let optimizer = OptimizerState::new(&cloud, config.adam.clone());
        Ok(Trainer {
            cloud,
            gt,
            config,
            schedule,
            mode,
            optimizer,
            sparsifier: None,
            outer: 0,
            sparsify_done: false,
            iter: 0,
            finished: false,
            log: TrainLog::default(),
            prune_snapshot: None,
        })
    }

    pub fn settings(&self) -> RenderSettings {
        self.config.render_settings(self.gt.width, self.gt.height)
    }

    /// Iteration at which Gaussians are removed in this run, if any.
    fn prune_at(&self) -> Option<usize> {
        match self.mode {
            TrainMode::Dense => None,
            TrainMode::GaussianSpa { .. } if !self.schedule.sparsify_enabled() => None,
            _ if self.schedule.prune_iter < self.schedule.total_iters => Some(self.schedule.prune_iter),
            _ => None,
        }
    }

    fn metrics_due(&self, it: usize) -> bool {
        if it % self.schedule.eval_every == 0 {
            return true;
        }
        matches!(self.prune_at(), Some(p) if it + 1 == p || it == p || it == p + 1)
    }

    fn hist_due(&self, it: usize) -> bool {
        match self.prune_at() {
            Some(p) if it > p => false,
            Some(p) if it == p => true,
            _ => {
                it % self.schedule.eval_every == 0
                    || matches!(self.mode, TrainMode::GaussianSpa { .. } if it == self.schedule.sparsify_start_iter)
            }
        }
    }

    /// Sparsifier coupling is active from `sparsify_start_iter` until the prune.
    fn coupling_active(&self, it: usize) -> bool {
        matches!(self.mode, TrainMode::GaussianSpa { .. })
            && self.schedule.sparsify_enabled()
            && it >= self.schedule.sparsify_start_iter
            && it < self.schedule.prune_iter
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_until(self.schedule.total_iters)?;
        self.finish()
    }

    /// Runs iterations until `self.iter == target` (capped at `total_iters`).
    pub fn run_until(&mut self, target: usize) -> Result<()> {
        let target = target.min(self.schedule.total_iters);
        while self.iter < target {
            self.step()?;
        }
        Ok(())
    }

    pub fn step(&mut self) -> Result<()> {
        let it = self.iter;
        if it >= self.schedule.total_iters {
            return Err(Error::InvalidArgument(format!("training already reached total_iters = {}", self.schedule.total_iters)));
        }
        let settings = self.settings();

        if self.hist_due(it) {
            self.log.histograms.push(HistRow {
                iter: it,
                counts: opacity_histogram(&self.cloud),
            });
        }
        if let TrainMode::GaussianSpa { sparsifier, .. } = &self.mode {
            if self.schedule.sparsify_enabled() && it == self.schedule.sparsify_start_iter {
                let alive = self.cloud.alive_count();
                if sparsifier.kappa >= alive {
                    return Err(Error::BudgetInfeasible {
                        kappa: sparsifier.kappa,
                        alive,
                    });
                }
                self.sparsifier = Some(sparsify::init_state(&self.cloud.opacities(), sparsifier)?);
            }
        }
        if self.prune_at() == Some(it) {
            self.prune(&settings)?;
        }

        let coupling = self.coupling_active(it);
        let eval = evaluate(
            &self.cloud,
            &self.gt,
            &settings,
            &self.config.loss,
            if coupling { self.sparsifier.as_ref() } else { None },
        )?;
        if !eval.loss.value.is_finite() {
            return Err(Error::NonFinite {
                iter: it,
                column: first_non_finite(&self.cloud).unwrap_or("loss"),
            });
        }
        if let Some(column) = first_non_finite_grad(&eval.grad) {
            return Err(Error::NonFinite { iter: it, column });
        }
        if self.metrics_due(it) {
            self.log.metrics.push(MetricRow {
                iter: it,
                loss: eval.loss.value,
                psnr: loss::psnr(&eval.image, &self.gt)?,
                ssim: eval.loss.ssim,
            });
        }

        self.optimizer.step(&mut self.cloud, &eval.grad, &self.schedule.lr)?;
        for c in self.cloud.color.iter_mut().flatten() {
            *c = c.clamp(0.0, 1.0);
        }
        if let Some(column) = first_non_finite(&self.cloud) {
            return Err(Error::NonFinite { iter: it, column });
        }

        if coupling && !self.sparsify_done {
            let interval = self.sparsifier.as_ref().map_or(1, |s| s.interval);
            if (it - self.schedule.sparsify_start_iter) % interval == 0 {
                self.sparsifying_step(it, eval.loss.value, &settings)?;
            }
        }

        self.iter += 1;
        Ok(())
    }

    fn sparsifying_step(&mut self, it: usize, loss_value: f64, settings: &RenderSettings) -> Result<()> {
        let score = match &self.mode {
            TrainMode::GaussianSpa { score, .. } => *score,
            _ => return Ok(()),
        };
        let criterion = match score {
            SparsifyScore::Magnitude => ProjectionCriterion::Magnitude,
            SparsifyScore::HitCount => ProjectionCriterion::ExternalScore(hit_count_scores(&self.cloud, std::slice::from_ref(settings))?),
        };
        let a = self.cloud.opacities();
        let state = self.sparsifier.as_mut().expect("sparsifier initialized at sparsify_start_iter");
        sparsify::sparsify_step(&a, state, &criterion)?;
        sparsify::multiplier_update(&a, state)?;
        self.outer += 1;
        let residual = sparsify::residual(&a, state)?;
        let (pen, pen_full) = sparsify::penalty_terms(&a, state)?;
        self.log.residuals.push(ResidualRow {
            iter: it,
            outer: self.outer,
            residual,
            lagrangian: loss_value + pen,
            lagrangian_full: loss_value + pen_full,
        });
        // Past the loop exit `z` and `λ` stay frozen; the coupling still acts until the prune.
        if residual <= state.epsilon {
            self.sparsify_done = true;
            self.log.termination = Some(Termination::Converged);
            self.log.termination_residual = Some(residual);
        } else if self.outer > state.max_outer {
            self.sparsify_done = true;
            self.log.termination = Some(Termination::OuterCap);
            self.log.termination_residual = Some(residual);
        }
        Ok(())
    }

    fn prune(&mut self, settings: &RenderSettings) -> Result<()> {
        let alive_before = self.cloud.alive_count();
        let keep = match &self.mode {
            TrainMode::GaussianSpa { .. } => {
                let state = self
                    .sparsifier
                    .as_ref()
                    .ok_or_else(|| Error::InvalidSchedule("prune reached before the sparsifier started".into()))?;
                if !self.sparsify_done {
                    let residual = sparsify::residual(&self.cloud.opacities(), state)?;
                    self.sparsify_done = true;
                    self.log.termination = Some(Termination::WindowClosed);
                    self.log.termination_residual = Some(residual);
                }
                state.support()
            }
            TrainMode::OneShot { criterion, keep_fraction } => {
                let count = ((keep_fraction * alive_before as f64).round() as usize).clamp(1, alive_before);
                let mut scores = match criterion {
                    PruneCriterion::OpacityMagnitude => self.cloud.opacities(),
                    PruneCriterion::HitCount => hit_count_scores(&self.cloud, std::slice::from_ref(settings))?,
                    PruneCriterion::ZeroZ => {
                        return Err(Error::InvalidArgument("the zero-z criterion needs a sparsifier".into()));
                    }
                };
                for (s, &alive) in scores.iter_mut().zip(&self.cloud.alive) {
                    if !alive {
                        *s = f64::NEG_INFINITY;
                    }
                }
                sparsify::top_k_mask(&scores, count)
            }
            TrainMode::Dense => return Ok(()),
        };

        let image_before = render::render(&self.cloud, settings)?;
        let opacities_before = self.cloud.opacities();
        self.cloud.prune_mask(&keep);
        let kept = self.cloud.compact();
        self.optimizer.compact(&kept);
        if let Some(state) = self.sparsifier.as_mut() {
            state.compact(&kept);
        }
        let image_after = render::render(&self.cloud, settings)?;
        self.log.prune = Some(PruneEvent {
            iter: self.iter,
            alive_before,
            alive_after: self.cloud.alive_count(),
            psnr_before: loss::psnr(&image_before, &self.gt)?,
            psnr_after: loss::psnr(&image_after, &self.gt)?,
        });
        self.prune_snapshot = Some(PruneSnapshot {
            iter: self.iter,
            opacities_before,
            image_before,
            image_after,
        });
        Ok(())
    }

    /// Appends the metrics row for the finished cloud. Idempotent.
    pub fn finish(&mut self) -> Result<()> {
        if self.finished {
            return Ok(());
        }
        if self.iter < self.schedule.total_iters {
            return Err(Error::InvalidArgument(format!(
                "cannot finish at iteration {} of {}",
                self.iter, self.schedule.total_iters
            )));
        }
        let settings = self.settings();
        let image = render::render(&self.cloud, &settings)?;
        let lv = loss::loss(&image, &self.gt, &self.config.loss)?;
        if !lv.value.is_finite() {
            return Err(Error::NonFinite {
                iter: self.iter,
                column: first_non_finite(&self.cloud).unwrap_or("loss"),
            });
        }
        self.log.metrics.push(MetricRow {
            iter: self.iter,
            loss: lv.value,
            psnr: loss::psnr(&image, &self.gt)?,
            ssim: lv.ssim,
        });
        self.finished = true;
        Ok(())
    }

    pub fn render(&self) -> Result<Image> {
        render::render(&self.cloud, &self.settings())
    }
}

/// Result of a complete run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub cloud: GaussianCloud,
    pub log: TrainLog,
    pub prune_snapshot: Option<PruneSnapshot>,
}

impl From<Trainer> for TrainOutcome {
    fn from(t: Trainer) -> Self {
        TrainOutcome {
            cloud: t.cloud,
            log: t.log,
            prune_snapshot: t.prune_snapshot,
        }
    }
}

fn run_mode(cloud: GaussianCloud, gt: &Image, schedule: &TrainSchedule, cfg: &TrainConfig, mode: TrainMode) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cloud, gt.clone(), cfg.clone(), schedule.clone(), mode)?;
    trainer.run()?;
    Ok(trainer.into())
}

/// Plain fitting; sparsification milestones in `schedule` are ignored.
pub fn train_dense(cloud: GaussianCloud, gt: &Image, schedule: &TrainSchedule, cfg: &TrainConfig) -> Result<TrainOutcome> {
    run_mode(cloud, gt, schedule, cfg, TrainMode::Dense)
}

/// Warmup, optimizing-sparsifying until `prune_iter`, removal of every Gaussian
/// outside the support of `z`, then light tuning with the sparsifier off.
pub fn train_gaussianspa(
    cloud: GaussianCloud,
    gt: &Image,
    schedule: &TrainSchedule,
    cfg: &TrainConfig,
    sparsifier: &SparsifierConfig,
) -> Result<TrainOutcome> {
    run_mode(
        cloud,
        gt,
        schedule,
        cfg,
        TrainMode::GaussianSpa {
            sparsifier: sparsifier.clone(),
            score: SparsifyScore::Magnitude,
        },
    )
}

/// Dense training to `prune_iter`, a single prune keeping `keep_fraction` of the
/// Gaussians by `criterion`, then fine-tuning to `total_iters`.
pub fn oneshot_prune_baseline(
    cloud: GaussianCloud,
    gt: &Image,
    schedule: &TrainSchedule,
    cfg: &TrainConfig,
    criterion: PruneCriterion,
    keep_fraction: f64,
) -> Result<TrainOutcome> {
    run_mode(cloud, gt, schedule, cfg, TrainMode::OneShot { criterion, keep_fraction })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene;

    fn small_schedule(total: usize, start: usize, prune: usize) -> TrainSchedule {
        TrainSchedule {
            total_iters: total,
            sparsify_start_iter: start,
            prune_iter: prune,
            eval_every: 10,
            ..TrainSchedule::toy(32, 32)
        }
    }

    #[test]
    fn init_single_gaussian_takes_image_color() {
        let gt = Image::filled(16, 16, [1.0, 0.0, 0.0]);
        let cloud = init_cloud(&gt, 1, 3).unwrap();
        assert_eq!(cloud.len(), 1);
        assert_eq!(cloud.color[0], [1.0, 0.0, 0.0]);
        assert!((cloud.opacities()[0] - INIT_OPACITY).abs() < 1e-12);
    }

    #[test]
    fn init_is_deterministic() {
        let gt = scene::toy_scene(32, 32);
        assert_eq!(init_cloud(&gt, 50, 9).unwrap(), init_cloud(&gt, 50, 9).unwrap());
        assert_ne!(init_cloud(&gt, 50, 9).unwrap(), init_cloud(&gt, 50, 10).unwrap());
    }

    #[test]
    fn init_scale_covers_image() {
        let gt = scene::toy_scene(128, 128);
        let cloud = init_cloud(&gt, 1000, 1).unwrap();
        let mean: f64 = cloud.log_s.iter().map(|s| (s[0].exp() + s[1].exp()) / 2.0).sum::<f64>() / 1000.0;
        // sqrt(128·128/1000)/2 = 2.0239
        let expected = 2.0238577025077627;
        assert!((mean / expected - 1.0).abs() < 0.2, "{mean}");
    }

    #[test]
    fn init_rejects_empty() {
        assert!(init_cloud(&Image::new(4, 4), 0, 0).is_err());
    }

    #[test]
    fn zero_iterations_leave_cloud_unchanged() {
        let gt = scene::toy_scene(16, 16);
        let cloud = init_cloud(&gt, 20, 1).unwrap();
        let out = train_dense(cloud.clone(), &gt, &TrainSchedule::dense(16, 16, 0), &TrainConfig::default()).unwrap();
        assert_eq!(out.cloud, cloud);
        assert_eq!(out.log.metrics.len(), 1);
    }

    #[test]
    fn zero_learning_rates_leave_cloud_unchanged() {
        let gt = scene::toy_scene(16, 16);
        let cloud = init_cloud(&gt, 20, 1).unwrap();
        let mut schedule = TrainSchedule::dense(16, 16, 1);
        schedule.lr = LearningRates::zero();
        let out = train_dense(cloud.clone(), &gt, &schedule, &TrainConfig::default()).unwrap();
        assert_eq!(out.cloud, cloud);
    }

    #[test]
    fn schedule_validation() {
        assert!(small_schedule(100, 50, 50).validate().is_err());
        assert!(small_schedule(100, 50, 101).validate().is_err());
        assert!(small_schedule(100, 50, 100).validate().is_ok());
        // Sparsification disabled: milestones are not checked.
        assert!(small_schedule(100, 100, 0).validate().is_ok());
    }

    #[test]
    fn gaussianspa_rejects_vacuous_budget() {
        let gt = scene::toy_scene(16, 16);
        let cloud = init_cloud(&gt, 10, 1).unwrap();
        let err = train_gaussianspa(cloud, &gt, &small_schedule(20, 5, 10), &TrainConfig::default(), &SparsifierConfig::for_budget(10)).unwrap_err();
        assert!(matches!(err, Error::BudgetInfeasible { kappa: 10, alive: 10 }));
    }

    #[test]
    fn oneshot_rejects_bad_fraction() {
        let gt = scene::toy_scene(16, 16);
        let cloud = init_cloud(&gt, 10, 1).unwrap();
        for f in [0.0, 1.0, -0.5, 1.5] {
            assert!(oneshot_prune_baseline(cloud.clone(), &gt, &small_schedule(20, 20, 10), &TrainConfig::default(), PruneCriterion::OpacityMagnitude, f).is_err());
        }
    }

    #[test]
    fn gaussianspa_prunes_to_exact_budget() {
        let gt = scene::toy_scene(32, 32);
        let cloud = init_cloud(&gt, 60, 2).unwrap();
        let mut sp = SparsifierConfig::for_budget(15);
        sp.interval = 5;
        let out = train_gaussianspa(cloud, &gt, &small_schedule(120, 40, 100), &TrainConfig::default(), &sp).unwrap();
        assert_eq!(out.cloud.len(), 15);
        assert_eq!(out.cloud.alive_count(), 15);
        let event = out.log.prune.unwrap();
        assert_eq!((event.iter, event.alive_before, event.alive_after), (100, 60, 15));
        assert!(out.log.termination.is_some());
        assert!(!out.log.residuals.is_empty());
        assert_eq!(out.log.histograms.last().unwrap().iter, 100);
        assert_eq!(out.log.metrics.last().unwrap().iter, 120);
    }

    #[test]
    fn hit_count_single_opaque_gaussian() {
        let s = RenderSettings::new(32, 32);
        let cloud = GaussianCloud::from_gaussians(&[Gaussian2D {
            opacity_logit: 60.0,
            ..Gaussian2D::isotropic([16.0, 16.0], 2.0)
        }]);
        // Opaque core: every pixel center inside the cutoff ellipse with α ≈ 1 counts once.
        let scores = hit_count_scores(&cloud, &[s]).unwrap();
        let mass: f64 = (0..32)
            .flat_map(|y| (0..32).map(move |x| (x, y)))
            .map(|(x, y): (usize, usize)| {
                let d2 = ((x as f64 + 0.5 - 16.0).powi(2) + (y as f64 + 0.5 - 16.0).powi(2)) / (2.0f64).exp().powi(2);
                if d2 <= 18.0 { (-0.5 * d2).exp() } else { 0.0 }
            })
            .sum();
        assert!((scores[0] - mass).abs() < 1e-9);
    }

    #[test]
    fn non_finite_parameters_abort_with_column() {
        let gt = scene::toy_scene(16, 16);
        let mut cloud = init_cloud(&gt, 5, 1).unwrap();
        cloud.color[2][1] = f64::NAN;
        let err = train_dense(cloud, &gt, &TrainSchedule::dense(16, 16, 3), &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFinite { iter: 0, column: "color" } | Error::NonFinite { iter: 0, column: "loss" }), "{err}");
    }
}
