use std::fs::OpenOptions;
use std::path::Path;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossReport;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub mse: f64,
    pub mae: f64,
    pub psnr: f64,
}

/// `10 log10(peak^2 / mse)`; `+inf` when `mse == 0`.
pub fn psnr(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

pub fn compute_metrics(y_hat: &Array2<f64>, y: &Array2<f64>, peak: f64) -> Result<ImageMetrics> {
    if y_hat.dim() != y.dim() {
        return Err(Error::Shape(format!("metrics: {:?} vs {:?}", y_hat.dim(), y.dim())));
    }
    if !(peak > 0.0) {
        return Err(Error::Config(format!("peak must be positive, got {peak}")));
    }
    let n = y.len() as f64;
    let (se, ae) = Zip::from(y_hat)
        .and(y)
        .fold((0.0, 0.0), |(s, a), p, t| (s + (p - t) * (p - t), a + (p - t).abs()));
    let mse = se / n;
    Ok(ImageMetrics {
        mse,
        mae: ae / n,
        psnr: psnr(mse, peak),
    })
}

/// Metrics pooled over several images: squared and absolute errors are
/// averaged over all pixels before the PSNR is taken.
pub fn pooled_metrics<'a>(pairs: impl IntoIterator<Item = (&'a Array2<f64>, &'a Array2<f64>)>, peak: f64) -> Result<ImageMetrics> {
    let (mut se, mut ae, mut n) = (0.0, 0.0, 0usize);
    for (p, t) in pairs {
        let m = compute_metrics(p, t, peak)?;
        se += m.mse * t.len() as f64;
        ae += m.mae * t.len() as f64;
        n += t.len();
    }
    if n == 0 {
        return Err(Error::Shape("no images to score".into()));
    }
    let mse = se / n as f64;
    Ok(ImageMetrics {
        mse,
        mae: ae / n as f64,
        psnr: psnr(mse, peak),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: u64,
    pub step: u64,
    pub rec: f64,
    pub kl: f64,
    pub perceptual: f64,
    pub tv: f64,
    pub total: f64,
    pub mse: f64,
    pub mae: f64,
    pub psnr: f64,
}

impl MetricsRow {
    pub fn new(epoch: u64, step: u64, loss: &LossReport, m: &ImageMetrics) -> Self {
        Self {
            epoch,
            step,
            rec: loss.rec,
            kl: loss.kl,
            perceptual: loss.perceptual,
            tv: loss.tv,
            total: loss.total,
            mse: m.mse,
            mae: m.mae,
            psnr: m.psnr,
        }
    }
}

/// Append rows to a CSV file, writing the header only when the file is new
/// or empty.
pub fn append_rows(path: impl AsRef<Path>, rows: &[MetricsRow]) -> Result<()> {
    let path = path.as_ref();
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_rows(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
