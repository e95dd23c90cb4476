//! Structure-of-arrays storage for a set of 2D Gaussians.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{sigmoid, Gaussian2D};

/// Optimizable parameter groups. Each group is a contiguous `f64` column.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamGroup {
    Position,
    Rotation,
    Scale,
    Opacity,
    Color,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] = [
        ParamGroup::Position,
        ParamGroup::Rotation,
        ParamGroup::Scale,
        ParamGroup::Opacity,
        ParamGroup::Color,
    ];

    /// Scalars per Gaussian in this group.
    pub fn width(self) -> usize {
        match self {
            ParamGroup::Position | ParamGroup::Scale => 2,
            ParamGroup::Rotation | ParamGroup::Opacity => 1,
            ParamGroup::Color => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Position => "mu",
            ParamGroup::Rotation => "theta",
            ParamGroup::Scale => "log_s",
            ParamGroup::Opacity => "opacity_logit",
            ParamGroup::Color => "color",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaussianCloud {
    pub mu: Vec<[f64; 2]>,
    pub theta: Vec<f64>,
    pub log_s: Vec<[f64; 2]>,
    pub opacity_logit: Vec<f64>,
    pub color: Vec<[f64; 3]>,
    pub order_key: Vec<f64>,
    pub alive: Vec<bool>,
}

impl GaussianCloud {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_gaussians(gaussians: &[Gaussian2D]) -> Self {
        let mut cloud = Self::default();
        for g in gaussians {
            cloud.push(*g);
        }
        cloud
    }

    pub fn push(&mut self, g: Gaussian2D) {
        self.mu.push(g.mu);
        self.theta.push(g.theta);
        self.log_s.push(g.log_s);
        self.opacity_logit.push(g.opacity_logit);
        self.color.push(g.color);
        self.order_key.push(g.order_key);
        self.alive.push(true);
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn alive_count(&self) -> usize {
        self.alive.iter().filter(|&&a| a).count()
    }

    pub fn get(&self, i: usize) -> Gaussian2D {
        Gaussian2D {
            mu: self.mu[i],
            theta: self.theta[i],
            log_s: self.log_s[i],
            opacity_logit: self.opacity_logit[i],
            color: self.color[i],
            order_key: self.order_key[i],
        }
    }

    /// Activated opacities `a = sigmoid(logit)`.
    pub fn opacities(&self) -> Vec<f64> {
        self.opacity_logit.iter().map(|&l| sigmoid(l)).collect()
    }

    pub fn check_columns(&self) -> Result<()> {
        let n = self.len();
        let lens = [
            self.theta.len(),
            self.log_s.len(),
            self.opacity_logit.len(),
            self.color.len(),
            self.order_key.len(),
            self.alive.len(),
        ];
        if lens.iter().any(|&l| l != n) {
            return Err(Error::InvalidArgument(format!("cloud columns have unequal lengths: n={n}, others={lens:?}")));
        }
        Ok(())
    }

    pub fn column(&self, group: ParamGroup) -> &[f64] {
        match group {
            ParamGroup::Position => self.mu.as_flattened(),
            ParamGroup::Rotation => &self.theta,
            ParamGroup::Scale => self.log_s.as_flattened(),
            ParamGroup::Opacity => &self.opacity_logit,
            ParamGroup::Color => self.color.as_flattened(),
        }
    }

    pub fn column_mut(&mut self, group: ParamGroup) -> &mut [f64] {
        match group {
            ParamGroup::Position => self.mu.as_flattened_mut(),
            ParamGroup::Rotation => &mut self.theta,
            ParamGroup::Scale => self.log_s.as_flattened_mut(),
            ParamGroup::Opacity => &mut self.opacity_logit,
            ParamGroup::Color => self.color.as_flattened_mut(),
        }
    }

    /// Indices sorted front to back: ascending order key, ties by index.
    pub fn compositing_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.order_key[a].total_cmp(&self.order_key[b]).then(a.cmp(&b)));
        idx
    }

    /// Marks every Gaussian outside `keep` as removed. Returns the number removed.
    pub fn prune_mask(&mut self, keep: &[bool]) -> usize {
        let mut removed = 0;
        for (alive, &k) in self.alive.iter_mut().zip(keep) {
            if *alive && !k {
                *alive = false;
                removed += 1;
            }
        }
        removed
    }

    /// Physically drops removed Gaussians. Returns the indices that survived, in order,
    /// so companion per-Gaussian state can be compacted with the same mapping.
    pub fn compact(&mut self) -> Vec<usize> {
        let kept: Vec<usize> = (0..self.len()).filter(|&i| self.alive[i]).collect();
        self.mu = gather(&self.mu, &kept);
        self.theta = gather(&self.theta, &kept);
        self.log_s = gather(&self.log_s, &kept);
        self.opacity_logit = gather(&self.opacity_logit, &kept);
        self.color = gather(&self.color, &kept);
        self.order_key = gather(&self.order_key, &kept);
        self.alive = vec![true; kept.len()];
        kept
    }
}

/// Per-parameter gradient columns, same layout as [`GaussianCloud`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CloudGrad {
    pub mu: Vec<[f64; 2]>,
    pub theta: Vec<f64>,
    pub log_s: Vec<[f64; 2]>,
    pub opacity_logit: Vec<f64>,
    pub color: Vec<[f64; 3]>,
}

impl CloudGrad {
    pub fn zeros(n: usize) -> Self {
        CloudGrad {
            mu: vec![[0.0; 2]; n],
            theta: vec![0.0; n],
            log_s: vec![[0.0; 2]; n],
            opacity_logit: vec![0.0; n],
            color: vec![[0.0; 3]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn column(&self, group: ParamGroup) -> &[f64] {
        match group {
            ParamGroup::Position => self.mu.as_flattened(),
            ParamGroup::Rotation => &self.theta,
            ParamGroup::Scale => self.log_s.as_flattened(),
            ParamGroup::Opacity => &self.opacity_logit,
            ParamGroup::Color => self.color.as_flattened(),
        }
    }
}

pub(crate) fn gather<T: Copy>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i]).collect()
}
