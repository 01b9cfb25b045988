//! Image-quality metrics and paired difference reporting.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean squared elementwise difference.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("mse", a.shape(), b.shape()));
    }
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.numel() as f64)
}

/// `10 * log10(peak^2 / mse)` in dB; +infinity for identical images (never NaN).
pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for i in -r..=r {
        for j in -r..=r {
            w.push((-((i * i + j * j) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
        }
    }
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    w
}

/// Mean structural similarity with an 11x11 Gaussian window (sigma 1.5),
/// K1 = 0.01, K2 = 0.03, dynamic range 1.0, averaged over channels. Windows
/// are fully inside the image, so H and W must be at least 11.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("ssim", a.shape(), b.shape()));
    }
    let s = a.shape();
    if s.len() != 3 {
        return Err(Error::invalid_shape("ssim", format!("expected [C,H,W], got {s:?}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid_shape(
            "ssim",
            format!("image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        ));
    }
    let win = gaussian_window();
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let mut channel_mean = 0.0;
    for ch in 0..c {
        let pa = &a.data()[ch * h * w..(ch + 1) * h * w];
        let pb = &b.data()[ch * h * w..(ch + 1) * h * w];
        let mut acc = 0.0;
        let mut count = 0usize;
        for y in 0..=h - SSIM_WINDOW {
            for x in 0..=w - SSIM_WINDOW {
                let (mut ma, mut mb, mut maa, mut mbb, mut mab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..SSIM_WINDOW {
                    for j in 0..SSIM_WINDOW {
                        let wt = win[i * SSIM_WINDOW + j];
                        let va = pa[(y + i) * w + (x + j)];
                        let vb = pb[(y + i) * w + (x + j)];
                        ma += wt * va;
                        mb += wt * vb;
                        maa += wt * va * va;
                        mbb += wt * vb * vb;
                        mab += wt * va * vb;
                    }
                }
                let var_a = maa - ma * ma;
                let var_b = mbb - mb * mb;
                let cov = mab - ma * mb;
                let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
                let den = (ma * ma + mb * mb + c1) * (var_a + var_b + c2);
                acc += num / den;
                count += 1;
            }
        }
        channel_mean += acc / count as f64;
    }
    Ok(channel_mean / c as f64)
}

/// One-sided sign test: probability of at least the observed number of
/// positive differences among the nonzero ones under a fair coin.
pub fn sign_test_p(diffs: &[f64]) -> f64 {
    let nonzero: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    let n = nonzero.len();
    if n == 0 {
        return 1.0;
    }
    let wins = nonzero.iter().filter(|d| **d > 0.0).count();
    // Exact binomial tail via log-factorials.
    let mut ln_fact = vec![0.0f64; n + 1];
    for k in 1..=n {
        ln_fact[k] = ln_fact[k - 1] + (k as f64).ln();
    }
    let ln2 = std::f64::consts::LN_2;
    (wins..=n)
        .map(|k| (ln_fact[n] - ln_fact[k] - ln_fact[n - k] - n as f64 * ln2).exp())
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Up,
    Down,
    Flat,
}

impl Direction {
    fn of(v: f64) -> Self {
        if v > 0.0 {
            Direction::Up
        } else if v < 0.0 {
            Direction::Down
        } else {
            Direction::Flat
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::Flat => "flat",
        }
    }
}

/// One victim attacked by both methods, plus the ground truth.
pub struct PairedCase<'a> {
    pub victim_id: u64,
    pub prior_id: Option<u64>,
    pub restart_id: u32,
    pub ours: &'a Tensor,
    pub baseline: &'a Tensor,
    pub ground_truth: &'a Tensor,
}

#[derive(Clone, Debug)]
pub struct DiffRow {
    pub victim_id: u64,
    pub prior_id: Option<u64>,
    pub restart_id: u32,
    pub mse_ours: f64,
    pub mse_base: f64,
    pub psnr_ours: f64,
    pub psnr_base: f64,
    pub ssim_ours: f64,
    pub ssim_base: f64,
    pub d_mse: f64,
    pub d_psnr: f64,
    pub d_ssim: f64,
}

/// Per-victim metric differences (ours - baseline) with mean and best-case
/// aggregates per metric.
#[derive(Clone, Debug)]
pub struct DiffReport {
    pub rows: Vec<DiffRow>,
    pub mean_d_mse: f64,
    pub mean_d_psnr: f64,
    pub mean_d_ssim: f64,
    /// Extreme difference in the improvement direction (lowest for MSE,
    /// highest for PSNR/SSIM).
    pub max_d_mse: f64,
    pub max_d_psnr: f64,
    pub max_d_ssim: f64,
}

/// Difference of possibly-infinite PSNR values; two perfect reconstructions
/// count as a tie rather than NaN.
fn psnr_diff(ours: f64, base: f64) -> f64 {
    if ours.is_infinite() && base.is_infinite() {
        0.0
    } else {
        ours - base
    }
}

pub fn paired_report(cases: &[PairedCase<'_>]) -> Result<DiffReport> {
    if cases.is_empty() {
        return Err(Error::Invalid("paired_report requires at least one case".into()));
    }
    let mut rows = Vec::with_capacity(cases.len());
    for case in cases {
        let mse_ours = mse(case.ours, case.ground_truth)?;
        let mse_base = mse(case.baseline, case.ground_truth)?;
        let psnr_ours = psnr(case.ours, case.ground_truth, 1.0)?;
        let psnr_base = psnr(case.baseline, case.ground_truth, 1.0)?;
        let ssim_ours = ssim(case.ours, case.ground_truth)?;
        let ssim_base = ssim(case.baseline, case.ground_truth)?;
        rows.push(DiffRow {
            victim_id: case.victim_id,
            prior_id: case.prior_id,
            restart_id: case.restart_id,
            mse_ours,
            mse_base,
            psnr_ours,
            psnr_base,
            ssim_ours,
            ssim_base,
            d_mse: mse_ours - mse_base,
            d_psnr: psnr_diff(psnr_ours, psnr_base),
            d_ssim: ssim_ours - ssim_base,
        });
    }
    let n = rows.len() as f64;
    Ok(DiffReport {
        mean_d_mse: rows.iter().map(|r| r.d_mse).sum::<f64>() / n,
        mean_d_psnr: rows.iter().map(|r| r.d_psnr).sum::<f64>() / n,
        mean_d_ssim: rows.iter().map(|r| r.d_ssim).sum::<f64>() / n,
        max_d_mse: rows.iter().map(|r| r.d_mse).fold(f64::INFINITY, f64::min),
        max_d_psnr: rows.iter().map(|r| r.d_psnr).fold(f64::NEG_INFINITY, f64::max),
        max_d_ssim: rows.iter().map(|r| r.d_ssim).fold(f64::NEG_INFINITY, f64::max),
        rows,
    })
}

fn fmt_prior(p: Option<u64>) -> String {
    p.map(|v| v.to_string()).unwrap_or_default()
}

impl DiffReport {
    /// Per-victim rows; floats use the shortest round-trip representation.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "victim_id,prior_id,restart_id,mse_ours,mse_base,psnr_ours,psnr_base,ssim_ours,ssim_base,d_mse,d_psnr,d_ssim\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.victim_id,
                fmt_prior(r.prior_id),
                r.restart_id,
                r.mse_ours,
                r.mse_base,
                r.psnr_ours,
                r.psnr_base,
                r.ssim_ours,
                r.ssim_base,
                r.d_mse,
                r.d_psnr,
                r.d_ssim
            ));
        }
        out
    }

    /// Mean/best differences per metric with direction flags.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("metric,mean_diff,best_diff,direction\n");
        out.push_str(&format!(
            "mse,{},{},{}\n",
            self.mean_d_mse,
            self.max_d_mse,
            Direction::of(self.mean_d_mse).as_str()
        ));
        out.push_str(&format!(
            "psnr,{},{},{}\n",
            self.mean_d_psnr,
            self.max_d_psnr,
            Direction::of(self.mean_d_psnr).as_str()
        ));
        out.push_str(&format!(
            "ssim,{},{},{}\n",
            self.mean_d_ssim,
            self.max_d_ssim,
            Direction::of(self.mean_d_ssim).as_str()
        ));
        out
    }
}
