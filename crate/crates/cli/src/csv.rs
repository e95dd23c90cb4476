//! CSV logs: comma-separated, header row, LF line endings, floats at six decimals.
//!
//! | file              | columns                                                       |
//! |-------------------|---------------------------------------------------------------|
//! | metrics.csv       | iter,loss,psnr,ssim                                           |
//! | residual.csv      | iter,outer,residual,lagrangian,lagrangian_full                |
//! | opacity_hist.csv  | iter,bin_00,...,bin_31                                        |
//! | events.csv        | iter,event,alive_before,alive_after,psnr_before,psnr_after    |

use splatspa::train::{TrainLog, HIST_BINS};

pub const METRICS_HEADER: &str = "iter,loss,psnr,ssim";
pub const RESIDUAL_HEADER: &str = "iter,outer,residual,lagrangian,lagrangian_full";
pub const EVENTS_HEADER: &str = "iter,event,alive_before,alive_after,psnr_before,psnr_after";

fn f(v: f64) -> String {
    format!("{v:.6}")
}

pub fn metrics(log: &TrainLog) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in &log.metrics {
        out.push_str(&format!("{},{},{},{}\n", r.iter, f(r.loss), f(r.psnr), f(r.ssim)));
    }
    out
}

pub fn residuals(log: &TrainLog) -> String {
    let mut out = format!("{RESIDUAL_HEADER}\n");
    for r in &log.residuals {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.iter,
            r.outer,
            f(r.residual),
            f(r.lagrangian),
            f(r.lagrangian_full)
        ));
    }
    out
}

pub fn hist_header() -> String {
    let bins: Vec<String> = (0..HIST_BINS).map(|b| format!("bin_{b:02}")).collect();
    format!("iter,{}", bins.join(","))
}

pub fn histograms(log: &TrainLog) -> String {
    let mut out = hist_header() + "\n";
    for r in &log.histograms {
        let counts: Vec<String> = r.counts.iter().map(u32::to_string).collect();
        out.push_str(&format!("{},{}\n", r.iter, counts.join(",")));
    }
    out
}

pub fn events(log: &TrainLog) -> String {
    let mut out = format!("{EVENTS_HEADER}\n");
    if let Some(p) = &log.prune {
        out.push_str(&format!(
            "{},prune,{},{},{},{}\n",
            p.iter,
            p.alive_before,
            p.alive_after,
            f(p.psnr_before),
            f(p.psnr_after)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use splatspa::train::{HistRow, MetricRow};

    #[test]
    fn fixed_decimals() {
        let log = TrainLog {
            metrics: vec![MetricRow {
                iter: 3,
                loss: 0.5,
                psnr: 20.0,
                ssim: 1.0 / 3.0,
            }],
            histograms: vec![HistRow {
                iter: 0,
                counts: vec![1; HIST_BINS],
            }],
            ..TrainLog::default()
        };
        assert_eq!(metrics(&log), "iter,loss,psnr,ssim\n3,0.500000,20.000000,0.333333\n");
        let hist = histograms(&log);
        assert!(hist.starts_with("iter,bin_00,bin_01,"));
        assert!(hist.lines().all(|l| l.split(',').count() == HIST_BINS + 1));
        assert_eq!(events(&log), format!("{EVENTS_HEADER}\n"));
    }
}
