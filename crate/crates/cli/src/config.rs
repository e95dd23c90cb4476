//! Run configuration: a flat TOML file with command-line overrides.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::Deserialize;
use splatspa::optim::LearningRates;
use splatspa::sparsify::SparsifierConfig;
use splatspa::train::TrainSchedule;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Target image (PNG or binary PPM).
    pub target: Option<PathBuf>,
    /// Initial number of Gaussians N.
    pub gaussians: usize,
    /// Gaussian budget κ; defaults to a quarter of N.
    pub kappa: Option<usize>,
    pub delta: f64,
    /// Feasibility tolerance on ‖a − z‖²; defaults to 1e-4·κ.
    pub epsilon: Option<f64>,
    pub max_outer: usize,
    pub interval: usize,
    pub iters: usize,
    pub sparsify_start: usize,
    pub prune_iter: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub background: [f64; 3],
    /// Write `checkpoint.ckpt` every this many iterations as well as at the end.
    pub checkpoint_every: Option<usize>,
    pub lr_position: Option<f64>,
    pub lr_rotation: Option<f64>,
    pub lr_scale: Option<f64>,
    pub lr_opacity: Option<f64>,
    pub lr_color: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            target: None,
            gaussians: 500,
            kappa: None,
            delta: 1e-2,
            epsilon: None,
            max_outer: 1000,
            interval: 50,
            iters: 8000,
            sparsify_start: 3000,
            prune_iter: 6000,
            eval_every: 100,
            seed: 0,
            out: PathBuf::from("out"),
            background: [0.0; 3],
            checkpoint_every: None,
            lr_position: None,
            lr_rotation: None,
            lr_scale: None,
            lr_opacity: None,
            lr_color: None,
        }
    }
}

/// Flags shared by the training subcommands; each overrides the config file.
#[derive(Args, Clone, Debug, Default)]
pub struct RunArgs {
    /// TOML config file with RunConfig keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Initial number of Gaussians.
    #[arg(long, short = 'n')]
    pub gaussians: Option<usize>,
    #[arg(long)]
    pub kappa: Option<usize>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub max_outer: Option<usize>,
    #[arg(long)]
    pub interval: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub sparsify_start: Option<usize>,
    #[arg(long)]
    pub prune_iter: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::input(format!("{}: {e}", origin.display())))
    }

    /// Loads the config file named in `args` (if any) and applies the flag overrides.
    pub fn resolve(args: &RunArgs) -> Result<Self, CliError> {
        let mut cfg = match &args.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
                RunConfig::from_toml(&text, path)?
            }
            None => RunConfig::default(),
        };
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = &args.$field {
                    cfg.$field = v.clone().into();
                })*
            };
        }
        apply!(target, kappa, epsilon, checkpoint_every);
        apply!(gaussians, delta, max_outer, interval, iters, sparsify_start, prune_iter, eval_every, seed, out);
        Ok(cfg)
    }

    pub fn target(&self) -> Result<&Path, CliError> {
        self.target
            .as_deref()
            .ok_or_else(|| CliError::input("no target image: pass --target or set `target` in the config"))
    }

    pub fn kappa(&self) -> usize {
        self.kappa.unwrap_or(self.gaussians / 4)
    }

    pub fn validate_common(&self) -> Result<(), CliError> {
        self.target()?;
        if self.gaussians == 0 {
            return Err(CliError::input("gaussians must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(CliError::input("eval_every must be at least 1"));
        }
        if self.checkpoint_every == Some(0) {
            return Err(CliError::input("checkpoint_every must be at least 1"));
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(CliError::input(format!("background {:?} must lie in [0, 1]", self.background)));
        }
        Ok(())
    }

    pub fn validate_sparsify(&self) -> Result<(), CliError> {
        self.validate_common()?;
        let kappa = self.kappa();
        if kappa >= self.gaussians {
            return Err(CliError::input(format!(
                "kappa ({kappa}) must be smaller than gaussians ({})",
                self.gaussians
            )));
        }
        self.validate_milestones()?;
        if self.sparsify_start >= self.prune_iter {
            return Err(CliError::input(format!(
                "prune_iter ({}) must be greater than sparsify_start ({})",
                self.prune_iter, self.sparsify_start
            )));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(CliError::input(format!("delta must be positive, got {}", self.delta)));
        }
        if self.interval == 0 {
            return Err(CliError::input("interval must be at least 1"));
        }
        if let Some(eps) = self.epsilon {
            if !(eps >= 0.0) {
                return Err(CliError::input(format!("epsilon must be non-negative, got {eps}")));
            }
        }
        Ok(())
    }

    pub fn validate_milestones(&self) -> Result<(), CliError> {
        if self.prune_iter > self.iters {
            return Err(CliError::input(format!(
                "prune_iter ({}) must not exceed iters ({})",
                self.prune_iter, self.iters
            )));
        }
        Ok(())
    }

    pub fn learning_rates(&self, width: usize, height: usize) -> LearningRates {
        let mut lr = LearningRates::for_image(width, height);
        lr.position = self.lr_position.unwrap_or(lr.position);
        lr.rotation = self.lr_rotation.unwrap_or(lr.rotation);
        lr.scale = self.lr_scale.unwrap_or(lr.scale);
        lr.opacity = self.lr_opacity.unwrap_or(lr.opacity);
        lr.color = self.lr_color.unwrap_or(lr.color);
        lr
    }

    /// Schedule with the configured milestones.
    pub fn schedule(&self, width: usize, height: usize) -> TrainSchedule {
        TrainSchedule {
            total_iters: self.iters,
            sparsify_start_iter: self.sparsify_start,
            prune_iter: self.prune_iter,
            lr: self.learning_rates(width, height),
            rng_seed: self.seed,
            eval_every: self.eval_every,
        }
    }

    /// Schedule for plain fitting: no milestones.
    pub fn dense_schedule(&self, width: usize, height: usize) -> TrainSchedule {
        TrainSchedule {
            sparsify_start_iter: self.iters,
            prune_iter: self.iters,
            ..self.schedule(width, height)
        }
    }

    pub fn sparsifier(&self) -> SparsifierConfig {
        let kappa = self.kappa();
        SparsifierConfig {
            delta: self.delta,
            kappa,
            epsilon: self.epsilon.unwrap_or(1e-4 * kappa as f64),
            max_outer: self.max_outer,
            interval: self.interval,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_keys_and_overrides() {
        let cfg = RunConfig::from_toml("target = \"a.png\"\ngaussians = 40\nkappa = 10\ndelta = 0.1\n", Path::new("x.toml")).unwrap();
        assert_eq!(cfg.gaussians, 40);
        assert_eq!(cfg.kappa(), 10);
        assert_eq!(cfg.delta, 0.1);
        assert_eq!(cfg.iters, 8000);
        assert_eq!(cfg.sparsifier().epsilon, 1e-3);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = RunConfig::from_toml("gausians = 3\n", Path::new("x.toml")).unwrap_err();
        assert_eq!(err.code, 2);
        assert!(err.message.contains("gausians"), "{}", err.message);
    }

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "gaussians = 40\nseed = 3\n").unwrap();
        let args = RunArgs {
            config: Some(path),
            seed: Some(9),
            kappa: Some(5),
            ..RunArgs::default()
        };
        let cfg = RunConfig::resolve(&args).unwrap();
        assert_eq!((cfg.gaussians, cfg.seed, cfg.kappa), (40, 9, Some(5)));
    }

    #[test]
    fn budget_message_names_fields() {
        let cfg = RunConfig {
            target: Some("t.png".into()),
            gaussians: 10,
            kappa: Some(10),
            ..RunConfig::default()
        };
        let err = cfg.validate_sparsify().unwrap_err();
        assert!(err.message.contains("kappa (10)") && err.message.contains("gaussians (10)"), "{}", err.message);
    }

    #[test]
    fn milestone_order_checked() {
        let cfg = RunConfig {
            target: Some("t.png".into()),
            sparsify_start: 600,
            prune_iter: 600,
            ..RunConfig::default()
        };
        let err = cfg.validate_sparsify().unwrap_err();
        assert!(err.message.contains("prune_iter") && err.message.contains("sparsify_start"));
    }
}
