//! Ordered alpha compositing of 2D Gaussians and its analytic backward pass.
//!
//! Per pixel, with Gaussians sorted front to back,
//!
//! ```text
//! C = Σᵢ cᵢ αᵢ Tᵢ + bg · T_end,   Tᵢ = Πⱼ<ᵢ (1 − αⱼ),   αᵢ = aᵢ · Gᵢ(pixel center)
//! ```
//!
//! Compositing for a pixel stops right after the Gaussian that pushes the
//! transmittance below `transmittance_floor`. The image is split into square
//! tiles that are processed independently; per-Gaussian gradient sums are
//! accumulated per tile and merged in tile order, so results do not depend on
//! the number of worker threads.

use rayon::prelude::*;

use crate::cloud::{CloudGrad, GaussianCloud};
use crate::error::{Error, Result};
use crate::gaussian::{build_covariance, sigmoid, Conic, DEFAULT_CUTOFF_SQ};
use crate::image::Image;

#[derive(Clone, Debug, PartialEq)]
pub struct RenderSettings {
    pub width: usize,
    pub height: usize,
    pub background: [f64; 3],
    /// Tile edge in pixels; a power of two.
    pub tile_size: usize,
    pub transmittance_floor: f64,
    /// Squared Mahalanobis radius past which a Gaussian contributes nothing.
    pub cutoff_sq: f64,
}

impl RenderSettings {
    pub fn new(width: usize, height: usize) -> Self {
        RenderSettings {
            width,
            height,
            background: [0.0; 3],
            tile_size: 16,
            transmittance_floor: 1e-4,
            cutoff_sq: DEFAULT_CUTOFF_SQ,
        }
    }

    pub fn with_background(mut self, background: [f64; 3]) -> Self {
        self.background = background;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument(format!(
                "render size must be at least 1x1, got {}x{}",
                self.width, self.height
            )));
        }
        if !self.tile_size.is_power_of_two() {
            return Err(Error::InvalidArgument(format!("tile_size {} is not a power of two", self.tile_size)));
        }
        if !(self.transmittance_floor > 0.0 && self.transmittance_floor < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "transmittance_floor must lie in (0, 1), got {}",
                self.transmittance_floor
            )));
        }
        if !(self.cutoff_sq > 0.0) {
            return Err(Error::InvalidArgument(format!("cutoff_sq must be positive, got {}", self.cutoff_sq)));
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidArgument(format!("background {:?} outside [0,1]", self.background)));
        }
        Ok(())
    }

    fn tiles_x(&self) -> usize {
        self.width.div_ceil(self.tile_size)
    }

    fn tiles_y(&self) -> usize {
        self.height.div_ceil(self.tile_size)
    }
}

/// A Gaussian ready for rasterization.
struct Splat {
    index: usize,
    /// Inclusive pixel range touched by the cutoff ellipse.
    x_range: [usize; 2],
    y_range: [usize; 2],
    mu: [f64; 2],
    conic: Conic,
    opacity: f64,
    color: [f64; 3],
}

struct Binned {
    splats: Vec<Splat>,
    /// Per tile, indices into `splats` in front-to-back order.
    tiles: Vec<Vec<u32>>,
}

fn bin(cloud: &GaussianCloud, settings: &RenderSettings) -> Result<Binned> {
    settings.validate()?;
    cloud.check_columns()?;
    let tiles_x = settings.tiles_x();
    let tiles_y = settings.tiles_y();
    let ts = settings.tile_size as f64;
    let mut splats = Vec::new();
    let mut tiles = vec![Vec::new(); tiles_x * tiles_y];

    for i in cloud.compositing_order() {
        if !cloud.alive[i] {
            continue;
        }
        let mu = cloud.mu[i];
        let cov = build_covariance(cloud.theta[i], cloud.log_s[i])?;
        if !mu[0].is_finite() || !mu[1].is_finite() {
            return Err(Error::InvalidParameter(format!("Gaussian {i} has non-finite position {mu:?}")));
        }
        // Axis-aligned extent of the cutoff ellipse; sample points are pixel centers.
        let rx = (settings.cutoff_sq * cov[0][0]).sqrt();
        let ry = (settings.cutoff_sq * cov[1][1]).sqrt();
        let x0 = (mu[0] - rx - 0.5).ceil().max(0.0);
        let x1 = (mu[0] + rx - 0.5).floor().min(settings.width as f64 - 1.0);
        let y0 = (mu[1] - ry - 0.5).ceil().max(0.0);
        let y1 = (mu[1] + ry - 0.5).floor().min(settings.height as f64 - 1.0);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        let slot = splats.len() as u32;
        splats.push(Splat {
            index: i,
            x_range: [x0 as usize, x1 as usize],
            y_range: [y0 as usize, y1 as usize],
            mu,
            conic: Conic::new(cloud.theta[i], cloud.log_s[i]),
            opacity: sigmoid(cloud.opacity_logit[i]),
            color: cloud.color[i],
        });
        let (tx0, tx1) = ((x0 / ts) as usize, (x1 / ts) as usize);
        let (ty0, ty1) = ((y0 / ts) as usize, (y1 / ts) as usize);
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                tiles[ty * tiles_x + tx].push(slot);
            }
        }
    }
    Ok(Binned { splats, tiles })
}

fn tile_bounds(settings: &RenderSettings, tile: usize) -> ([usize; 2], [usize; 2]) {
    let tiles_x = settings.tiles_x();
    let (tx, ty) = (tile % tiles_x, tile / tiles_x);
    let x0 = tx * settings.tile_size;
    let y0 = ty * settings.tile_size;
    let x1 = (x0 + settings.tile_size).min(settings.width);
    let y1 = (y0 + settings.tile_size).min(settings.height);
    ([x0, x1], [y0, y1])
}

fn tile_pixels(settings: &RenderSettings, tile: usize) -> impl Iterator<Item = (usize, usize)> {
    let ([x0, x1], [y0, y1]) = tile_bounds(settings, tile);
    (y0..y1).flat_map(move |y| (x0..x1).map(move |x| (x, y)))
}

/// Visits every pixel of a tile with the tile-list positions of the splats
/// whose vertical extent covers the pixel's row, in compositing order.
fn for_each_tile_pixel(binned: &Binned, settings: &RenderSettings, tile: usize, mut f: impl FnMut(usize, usize, &[u32])) {
    let ([x0, x1], [y0, y1]) = tile_bounds(settings, tile);
    let list = &binned.tiles[tile];
    let mut row = Vec::with_capacity(list.len());
    for y in y0..y1 {
        row.clear();
        row.extend((0..list.len() as u32).filter(|&pos| {
            let r = binned.splats[list[pos as usize] as usize].y_range;
            r[0] <= y && y <= r[1]
        }));
        for x in x0..x1 {
            f(x, y, &row);
        }
    }
}

/// One Gaussian's participation in a pixel blend.
#[derive(Clone, Copy)]
struct Contribution {
    /// Position in the tile list.
    pos: usize,
    density: f64,
    alpha: f64,
    transmittance: f64,
    dx: f64,
    dy: f64,
}

/// Front-to-back blend of one pixel. Calls `visit` for every contributing Gaussian
/// and returns the unclamped color together with the residual transmittance.
#[inline]
fn blend_pixel(
    binned: &Binned,
    list: &[u32],
    row: &[u32],
    settings: &RenderSettings,
    x: usize,
    y: usize,
    mut visit: impl FnMut(Contribution),
) -> ([f64; 3], f64) {
    let px = x as f64 + 0.5;
    let py = y as f64 + 0.5;
    let mut color = [0.0; 3];
    let mut t = 1.0;
    for &pos in row {
        let pos = pos as usize;
        let s = &binned.splats[list[pos] as usize];
        if x < s.x_range[0] || x > s.x_range[1] {
            continue;
        }
        let dx = px - s.mu[0];
        let dy = py - s.mu[1];
        let d2 = s.conic.mahalanobis_sq(dx, dy);
        if d2 > settings.cutoff_sq {
            continue;
        }
        let density = (-0.5 * d2).exp();
        let alpha = s.opacity * density;
        let w = alpha * t;
        for c in 0..3 {
            color[c] += s.color[c] * w;
        }
        visit(Contribution {
            pos,
            density,
            alpha,
            transmittance: t,
            dx,
            dy,
        });
        t *= 1.0 - alpha;
        if t < settings.transmittance_floor {
            break;
        }
    }
    for c in 0..3 {
        color[c] += settings.background[c] * t;
    }
    (color, t)
}

/// Renders the alive Gaussians of `cloud`. Output values are clamped to [0, 1].
pub fn render(cloud: &GaussianCloud, settings: &RenderSettings) -> Result<Image> {
    let binned = bin(cloud, settings)?;
    let tiles: Vec<Vec<[f64; 3]>> = (0..binned.tiles.len())
        .into_par_iter()
        .map(|tile| {
            let list = &binned.tiles[tile];
            let mut colors = Vec::new();
            for_each_tile_pixel(&binned, settings, tile, |x, y, row| {
                colors.push(blend_pixel(&binned, list, row, settings, x, y, |_| {}).0);
            });
            colors
        })
        .collect();

    let mut image = Image::new(settings.width, settings.height);
    for (tile, colors) in tiles.into_iter().enumerate() {
        for ((x, y), rgb) in tile_pixels(settings, tile).zip(colors) {
            image.set_pixel(x, y, rgb.map(|v| v.clamp(0.0, 1.0)));
        }
    }
    Ok(image)
}

/// Per-Gaussian accumulated blend weight `Σ_pixels αᵢ Tᵢ`; zero for removed Gaussians.
pub fn blend_weights(cloud: &GaussianCloud, settings: &RenderSettings) -> Result<Vec<f64>> {
    let binned = bin(cloud, settings)?;
    let partials: Vec<Vec<f64>> = (0..binned.tiles.len())
        .into_par_iter()
        .map(|tile| {
            let list = &binned.tiles[tile];
            let mut local = vec![0.0; list.len()];
            for_each_tile_pixel(&binned, settings, tile, |x, y, row| {
                blend_pixel(&binned, list, row, settings, x, y, |c| {
                    local[c.pos] += c.alpha * c.transmittance;
                });
            });
            local
        })
        .collect();

    let mut weights = vec![0.0; cloud.len()];
    for (list, local) in binned.tiles.iter().zip(partials) {
        for (&slot, w) in list.iter().zip(local) {
            weights[binned.splats[slot as usize].index] += w;
        }
    }
    Ok(weights)
}

#[derive(Clone, Copy, Default)]
struct SplatGrad {
    d_mu: [f64; 2],
    d_conic: [f64; 3],
    d_opacity: f64,
    d_color: [f64; 3],
}

impl SplatGrad {
    fn add(&mut self, other: &SplatGrad) {
        for k in 0..2 {
            self.d_mu[k] += other.d_mu[k];
        }
        for k in 0..3 {
            self.d_conic[k] += other.d_conic[k];
            self.d_color[k] += other.d_color[k];
        }
        self.d_opacity += other.d_opacity;
    }
}

/// Gradient of `loss(render(cloud))` with respect to every parameter column,
/// given `d_image = dloss/dimage`. Removed Gaussians get zero gradients.
pub fn render_backward(cloud: &GaussianCloud, settings: &RenderSettings, d_image: &Image) -> Result<CloudGrad> {
    if d_image.width != settings.width || d_image.height != settings.height || d_image.data.len() != settings.width * settings.height * 3 {
        return Err(Error::InvalidArgument(format!(
            "upstream gradient is {}x{}, render target is {}x{}",
            d_image.width, d_image.height, settings.width, settings.height
        )));
    }
    let binned = bin(cloud, settings)?;

    let partials: Vec<Vec<SplatGrad>> = (0..binned.tiles.len())
        .into_par_iter()
        .map(|tile| {
            let list = &binned.tiles[tile];
            let mut local = vec![SplatGrad::default(); list.len()];
            let mut stack: Vec<Contribution> = Vec::with_capacity(list.len());
            for_each_tile_pixel(&binned, settings, tile, |x, y, row| {
                let upstream = d_image.pixel(x, y);
                if upstream == [0.0; 3] {
                    return;
                }
                stack.clear();
                let (raw, _) = blend_pixel(&binned, list, row, settings, x, y, |c| stack.push(c));
                // The output clamp is the identity inside [0, 1].
                let g = [0, 1, 2].map(|c| if (0.0..=1.0).contains(&raw[c]) { upstream[c] } else { 0.0 });

                // `rest` is the color seen behind the current Gaussian: everything
                // composited after it plus the background, renormalized to its transmittance.
                let mut rest = settings.background;
                for c in stack.iter().rev() {
                    let s = &binned.splats[list[c.pos] as usize];
                    let acc = &mut local[c.pos];
                    let w = c.alpha * c.transmittance;
                    let mut d_alpha = 0.0;
                    for k in 0..3 {
                        acc.d_color[k] += g[k] * w;
                        d_alpha += g[k] * c.transmittance * (s.color[k] - rest[k]);
                    }
                    acc.d_opacity += d_alpha * c.density;
                    let d_density = d_alpha * s.opacity;
                    // G = exp(-½ d²):  dG/dconic = -½ G (dx², 2 dx dy, dy²),  dG/dμ = G Σ⁻¹ d.
                    let half = -0.5 * d_density * c.density;
                    acc.d_conic[0] += half * c.dx * c.dx;
                    acc.d_conic[1] += half * 2.0 * c.dx * c.dy;
                    acc.d_conic[2] += half * c.dy * c.dy;
                    let q = d_density * c.density;
                    acc.d_mu[0] += q * (s.conic.xx * c.dx + s.conic.xy * c.dy);
                    acc.d_mu[1] += q * (s.conic.xy * c.dx + s.conic.yy * c.dy);
                    for k in 0..3 {
                        rest[k] = s.color[k] * c.alpha + (1.0 - c.alpha) * rest[k];
                    }
                }
            });
            local
        })
        .collect();

    let mut per_splat = vec![SplatGrad::default(); binned.splats.len()];
    for (list, local) in binned.tiles.iter().zip(partials) {
        for (&slot, g) in list.iter().zip(local.iter()) {
            per_splat[slot as usize].add(g);
        }
    }

    let mut grad = CloudGrad::zeros(cloud.len());
    for (s, g) in binned.splats.iter().zip(per_splat) {
        let i = s.index;
        let (d_theta, d_log_s) = Conic::backprop(cloud.theta[i], cloud.log_s[i], g.d_conic);
        grad.mu[i] = g.d_mu;
        grad.theta[i] = d_theta;
        grad.log_s[i] = d_log_s;
        grad.opacity_logit[i] = g.d_opacity * s.opacity * (1.0 - s.opacity);
        grad.color[i] = g.d_color;
    }
    Ok(grad)
}
