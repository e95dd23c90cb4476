//! Training loss `(1 − ρ)·L1 + ρ·D-SSIM` and the PSNR / SSIM metrics.
//!
//! SSIM uses a Gaussian window truncated at the image border and renormalized
//! over the pixels it still covers, so a constant image has exactly zero local
//! variance everywhere, borders included.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// PSNR reported when the mean squared error is (numerically) zero.
pub const PSNR_CAP_DB: f64 = 99.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the D-SSIM term.
    pub rho: f64,
    pub ssim_window: usize,
    pub ssim_sigma: f64,
    pub ssim_c1: f64,
    pub ssim_c2: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            rho: 0.2,
            ssim_window: 11,
            ssim_sigma: 1.5,
            ssim_c1: 0.01 * 0.01,
            ssim_c2: 0.03 * 0.03,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::InvalidArgument(format!("rho must lie in [0,1], got {}", self.rho)));
        }
        if self.ssim_window < 3 || self.ssim_window % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "ssim_window must be odd and at least 3, got {}",
                self.ssim_window
            )));
        }
        if !(self.ssim_sigma > 0.0 && self.ssim_c1 > 0.0 && self.ssim_c2 > 0.0) {
            return Err(Error::InvalidArgument("ssim sigma and constants must be positive".into()));
        }
        Ok(())
    }
}

/// Separable, border-renormalized Gaussian filter for one image plane.
struct Window {
    kernel: Vec<f64>,
    radius: usize,
    width: usize,
    height: usize,
    /// `1 / Σ kernel` over the taps that land inside the image, per column and row.
    inv_norm_x: Vec<f64>,
    inv_norm_y: Vec<f64>,
}

impl Window {
    fn new(cfg: &LossConfig, width: usize, height: usize) -> Self {
        let radius = cfg.ssim_window / 2;
        let kernel: Vec<f64> = (0..cfg.ssim_window)
            .map(|i| {
                let d = i as f64 - radius as f64;
                (-d * d / (2.0 * cfg.ssim_sigma * cfg.ssim_sigma)).exp()
            })
            .collect();
        let norms = |len: usize| -> Vec<f64> {
            (0..len)
                .map(|p| {
                    let lo = p.saturating_sub(radius);
                    let hi = (p + radius).min(len - 1);
                    1.0 / (lo..=hi).map(|q| kernel[q + radius - p]).sum::<f64>()
                })
                .collect()
        };
        Window {
            inv_norm_x: norms(width),
            inv_norm_y: norms(height),
            kernel,
            radius,
            width,
            height,
        }
    }

    /// Unnormalized truncated convolution along x, optionally scaling inputs
    /// (`pre`) or outputs (`post`) by the per-column inverse norm.
    fn pass_x(&self, src: &[f64], pre: bool, post: bool) -> Vec<f64> {
        let (w, r) = (self.width, self.radius);
        let mut out = vec![0.0; src.len()];
        let mut scaled = vec![0.0; w];
        for y in 0..self.height {
            let mut row = &src[y * w..(y + 1) * w];
            if pre {
                for ((s, v), inv) in scaled.iter_mut().zip(row).zip(&self.inv_norm_x) {
                    *s = v * inv;
                }
                row = &scaled;
            }
            let dst = &mut out[y * w..(y + 1) * w];
            // Interior pixels see every tap: accumulate tap by tap so the inner
            // loop vectorizes. The summation order matches the border loop.
            if w > 2 * r {
                for (k, &tap) in self.kernel.iter().enumerate() {
                    for (d, v) in dst[r..w - r].iter_mut().zip(&row[k..w - 2 * r + k]) {
                        *d += tap * v;
                    }
                }
            }
            for x in (0..w).filter(|&x| x < r || x + r >= w) {
                let lo = x.saturating_sub(r);
                let hi = (x + r).min(w - 1);
                let taps = &self.kernel[lo + r - x..=hi + r - x];
                dst[x] = row[lo..=hi].iter().zip(taps).map(|(v, k)| v * k).sum();
            }
            if post {
                for (d, inv) in dst.iter_mut().zip(&self.inv_norm_x) {
                    *d *= inv;
                }
            }
        }
        out
    }

    fn pass_y(&self, src: &[f64], pre: bool, post: bool) -> Vec<f64> {
        let (w, h, r) = (self.width, self.height, self.radius);
        let mut out = vec![0.0; src.len()];
        for y in 0..h {
            let lo = y.saturating_sub(r);
            let hi = (y + r).min(h - 1);
            for q in lo..=hi {
                let k = self.kernel[q + r - y];
                let scale = if pre { k * self.inv_norm_y[q] } else { k };
                let row = &src[q * w..(q + 1) * w];
                let dst = &mut out[y * w..(y + 1) * w];
                for (d, s) in dst.iter_mut().zip(row) {
                    *d += scale * s;
                }
            }
            if post {
                let inv = self.inv_norm_y[y];
                out[y * w..(y + 1) * w].iter_mut().for_each(|d| *d *= inv);
            }
        }
        out
    }

    /// Local weighted mean.
    fn apply(&self, src: &[f64]) -> Vec<f64> {
        self.pass_y(&self.pass_x(src, false, true), false, true)
    }

    /// Adjoint of [`Window::apply`].
    fn apply_transpose(&self, src: &[f64]) -> Vec<f64> {
        self.pass_y(&self.pass_x(src, true, false), true, false)
    }
}

struct SsimPlane {
    mean: f64,
    /// d(mean local SSIM of this plane)/d(pred), if requested.
    grad: Option<Vec<f64>>,
}

fn ssim_plane(win: &Window, x: &[f64], y: &[f64], cfg: &LossConfig, want_grad: bool) -> SsimPlane {
    let n = x.len();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mx = win.apply(x);
    let my = win.apply(y);
    let exx = win.apply(&xx);
    let eyy = win.apply(&yy);
    let exy = win.apply(&xy);

    let (c1, c2) = (cfg.ssim_c1, cfg.ssim_c2);
    let mut total = 0.0;
    let (mut ga, mut gb, mut gc) = if want_grad {
        (vec![0.0; n], vec![0.0; n], vec![0.0; n])
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    for p in 0..n {
        let (mux, muy) = (mx[p], my[p]);
        let vx = exx[p] - mux * mux;
        let vy = eyy[p] - muy * muy;
        let cov = exy[p] - mux * muy;
        let lum = 2.0 * mux * muy + c1;
        let cs = 2.0 * cov + c2;
        let lum_den = mux * mux + muy * muy + c1;
        let cs_den = vx + vy + c2;
        let den = lum_den * cs_den;
        let s = lum * cs / den;
        total += s;
        if want_grad {
            // Partials with respect to the local moments E[x], E[x²], E[xy].
            ga[p] = (2.0 * muy * cs - 2.0 * muy * lum - s * (2.0 * mux * cs_den - 2.0 * mux * lum_den)) / den;
            gb[p] = -s / cs_den;
            gc[p] = 2.0 * lum / den;
        }
    }

    let grad = want_grad.then(|| {
        let ta = win.apply_transpose(&ga);
        let tb = win.apply_transpose(&gb);
        let tc = win.apply_transpose(&gc);
        (0..n).map(|q| ta[q] + 2.0 * x[q] * tb[q] + y[q] * tc[q]).collect()
    });
    SsimPlane {
        mean: total / n as f64,
        grad,
    }
}

fn ssim_impl(pred: &Image, gt: &Image, cfg: &LossConfig, want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
    pred.check_shape(gt)?;
    cfg.validate()?;
    let win = Window::new(cfg, pred.width, pred.height);
    let mut sum = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; pred.data.len()]);
    for c in 0..3 {
        let plane = ssim_plane(&win, &pred.channel(c), &gt.channel(c), cfg, want_grad);
        sum += plane.mean;
        if let (Some(g), Some(pg)) = (grad.as_mut(), plane.grad) {
            // Mean over channels and pixels: each plane carries weight 1/(3·P).
            let scale = 1.0 / (3.0 * pg.len() as f64);
            for (i, v) in pg.into_iter().enumerate() {
                g[i * 3 + c] = v * scale;
            }
        }
    }
    Ok((sum / 3.0, grad))
}

/// Mean local SSIM over all pixels and channels.
pub fn ssim(pred: &Image, gt: &Image, cfg: &LossConfig) -> Result<f64> {
    Ok(ssim_impl(pred, gt, cfg, false)?.0)
}

/// Peak signal-to-noise ratio in dB for a peak value of 1.
pub fn psnr(pred: &Image, gt: &Image) -> Result<f64> {
    pred.check_shape(gt)?;
    let mse = pred.data.iter().zip(&gt.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / pred.data.len() as f64;
    Ok(if mse < 1e-12 { PSNR_CAP_DB } else { -10.0 * mse.log10() })
}

#[derive(Clone, Debug)]
pub struct LossValue {
    pub value: f64,
    pub l1: f64,
    pub ssim: f64,
    pub grad: Image,
}

/// `(1 − ρ)·mean|pred − gt| + ρ·(1 − SSIM)/2` and its gradient with respect to `pred`.
pub fn loss(pred: &Image, gt: &Image, cfg: &LossConfig) -> Result<LossValue> {
    pred.check_shape(gt)?;
    cfg.validate()?;
    let m = pred.data.len() as f64;
    let l1 = pred.data.iter().zip(&gt.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / m;
    let w1 = (1.0 - cfg.rho) / m;
    let mut grad: Vec<f64> = pred
        .data
        .iter()
        .zip(&gt.data)
        .map(|(a, b)| match a.partial_cmp(b) {
            Some(std::cmp::Ordering::Greater) => w1,
            Some(std::cmp::Ordering::Less) => -w1,
            _ => 0.0,
        })
        .collect();

    let (ssim_value, ssim_grad) = if cfg.rho > 0.0 {
        let (s, g) = ssim_impl(pred, gt, cfg, true)?;
        (s, g)
    } else {
        (ssim_impl(pred, gt, cfg, false)?.0, None)
    };
    if let Some(sg) = ssim_grad {
        for (g, s) in grad.iter_mut().zip(sg) {
            *g -= 0.5 * cfg.rho * s;
        }
    }
    // At pred == gt both terms are exactly zero.
    let value = (1.0 - cfg.rho) * l1 + cfg.rho * (1.0 - ssim_value) / 2.0;
    Ok(LossValue {
        value,
        l1,
        ssim: ssim_value,
        grad: Image::from_raw(pred.width, pred.height, grad)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_image(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    /// Direct per-window SSIM with explicitly renormalized truncated weights.
    fn naive_ssim(a: &Image, b: &Image, cfg: &LossConfig) -> f64 {
        let r = (cfg.ssim_window / 2) as isize;
        let mut total = 0.0;
        for c in 0..3 {
            for py in 0..a.height as isize {
                for px in 0..a.width as isize {
                    let mut wsum = 0.0;
                    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for qy in (py - r)..=(py + r) {
                        for qx in (px - r)..=(px + r) {
                            if qx < 0 || qy < 0 || qx >= a.width as isize || qy >= a.height as isize {
                                continue;
                            }
                            let d2 = ((qx - px).pow(2) + (qy - py).pow(2)) as f64;
                            let w = (-d2 / (2.0 * cfg.ssim_sigma * cfg.ssim_sigma)).exp();
                            let va = a.pixel(qx as usize, qy as usize)[c];
                            let vb = b.pixel(qx as usize, qy as usize)[c];
                            wsum += w;
                            sx += w * va;
                            sy += w * vb;
                            sxx += w * va * va;
                            syy += w * vb * vb;
                            sxy += w * va * vb;
                        }
                    }
                    let (mx, my) = (sx / wsum, sy / wsum);
                    let vx = sxx / wsum - mx * mx;
                    let vy = syy / wsum - my * my;
                    let cov = sxy / wsum - mx * my;
                    total += (2.0 * mx * my + cfg.ssim_c1) * (2.0 * cov + cfg.ssim_c2)
                        / ((mx * mx + my * my + cfg.ssim_c1) * (vx + vy + cfg.ssim_c2));
                }
            }
        }
        total / (3 * a.width * a.height) as f64
    }

    #[test]
    fn identical_images() {
        let img = random_image(13, 9, 1);
        let cfg = LossConfig::default();
        assert_eq!(ssim(&img, &img, &cfg).unwrap(), 1.0);
        assert_eq!(psnr(&img, &img).unwrap(), PSNR_CAP_DB);
        let l = loss(&img, &img, &cfg).unwrap();
        assert_eq!(l.value, 0.0);
        // SSIM's gradient vanishes at equality up to roundoff in the filter adjoint.
        assert!(l.grad.data.iter().all(|&g| g.abs() < 1e-12));
    }

    #[test]
    fn uniform_error_psnr_is_20db() {
        let a = Image::filled(7, 5, [0.3; 3]);
        let b = Image::filled(7, 5, [0.4; 3]);
        let p = psnr(&a, &b).unwrap();
        assert!((p - 20.0).abs() < 1e-9, "{p}");
        assert_eq!(format!("{p:.4}"), "20.0000");
    }

    #[test]
    fn psnr_matches_double_loop_mse() {
        let a = random_image(10, 6, 2);
        let b = random_image(10, 6, 3);
        let mut sum = 0.0;
        for y in 0..6 {
            for x in 0..10 {
                for c in 0..3 {
                    let d = a.pixel(x, y)[c] - b.pixel(x, y)[c];
                    sum += d * d;
                }
            }
        }
        let mse = sum / 180.0;
        assert!((psnr(&a, &b).unwrap() - 10.0 * (1.0 / mse).log10()).abs() < 1e-12);
    }

    #[test]
    fn ssim_constant_images_reduce_to_luminance() {
        let cfg = LossConfig::default();
        let (u, v) = (0.25, 0.75);
        let a = Image::filled(12, 12, [u; 3]);
        let b = Image::filled(12, 12, [v; 3]);
        let expected = (2.0 * u * v + cfg.ssim_c1) / (u * u + v * v + cfg.ssim_c1);
        assert!((ssim(&a, &b, &cfg).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn ssim_matches_naive_windows() {
        let cfg = LossConfig::default();
        let a = random_image(17, 14, 4);
        let b = random_image(17, 14, 5);
        let fast = ssim(&a, &b, &cfg).unwrap();
        let slow = naive_ssim(&a, &b, &cfg);
        assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
    }

    #[test]
    fn rho_zero_is_mean_absolute_error() {
        let cfg = LossConfig { rho: 0.0, ..LossConfig::default() };
        let a = random_image(8, 8, 6);
        let b = random_image(8, 8, 7);
        let mae = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.data.len() as f64;
        assert_eq!(loss(&a, &b, &cfg).unwrap().value, mae);
    }

    #[test]
    fn l1_gradient_entries_are_signed_constants() {
        let cfg = LossConfig { rho: 0.0, ..LossConfig::default() };
        let a = random_image(6, 6, 8);
        let mut b = random_image(6, 6, 9);
        b.data[0] = a.data[0];
        let m = a.data.len() as f64;
        let l = loss(&a, &b, &cfg).unwrap();
        for g in l.grad.data {
            assert!(g == 0.0 || g == (1.0 - cfg.rho) / m || g == -(1.0 - cfg.rho) / m);
        }
    }

    fn check_loss_gradient(cfg: &LossConfig, seed: u64) {
        let a = random_image(16, 16, seed);
        let b = random_image(16, 16, seed + 100);
        let l = loss(&a, &b, cfg).unwrap();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in (0..a.data.len()).step_by(7) {
            let mut p = a.clone();
            p.data[i] += h;
            let mut m = a.clone();
            m.data[i] -= h;
            let fd = (loss(&p, &b, cfg).unwrap().value - loss(&m, &b, cfg).unwrap().value) / (2.0 * h);
            let g = l.grad.data[i];
            worst = worst.max((g - fd).abs() / g.abs().max(fd.abs()));
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        check_loss_gradient(&LossConfig::default(), 10);
    }

    #[test]
    fn dssim_gradient_matches_finite_differences() {
        check_loss_gradient(&LossConfig { rho: 1.0, ..LossConfig::default() }, 11);
    }

    #[test]
    fn shape_mismatch() {
        let cfg = LossConfig::default();
        let a = Image::new(4, 4);
        let b = Image::new(4, 5);
        assert!(psnr(&a, &b).is_err());
        assert!(ssim(&a, &b, &cfg).is_err());
        assert!(loss(&a, &b, &cfg).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig { rho: 1.5, ..LossConfig::default() }.validate().is_err());
        assert!(LossConfig { ssim_window: 4, ..LossConfig::default() }.validate().is_err());
        assert!(LossConfig { ssim_window: 1, ..LossConfig::default() }.validate().is_err());
    }

    proptest::proptest! {
        #[test]
        fn metrics_are_symmetric(seed in 0u64..1000) {
            let cfg = LossConfig::default();
            let a = random_image(9, 7, seed);
            let b = random_image(9, 7, seed + 5000);
            proptest::prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
            let (s1, s2) = (ssim(&a, &b, &cfg).unwrap(), ssim(&b, &a, &cfg).unwrap());
            proptest::prop_assert!((s1 - s2).abs() < 1e-12);
            proptest::prop_assert!(loss(&a, &b, &cfg).unwrap().value >= 0.0);
        }
    }
}
