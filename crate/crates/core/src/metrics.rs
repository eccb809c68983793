//! Salient object detection measures: MAE, maximum F-measure, S-measure and
//! maximum E-measure, plus dataset aggregation.
//!
//! Threshold sweeps quantise predictions to `q = round(255·p)` and binarise
//! with `q > t` for `t ∈ {0, …, 255}`, so the last threshold predicts nothing.

use thiserror::Error;

use crate::tensor::Tensor;

pub const N_THRESHOLDS: usize = 256;
pub const BETA2: f64 = 0.3;
const EPS: f64 = f64::EPSILON;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("shape mismatch: pred {pred:?}, gt {gt:?}")]
    Shape { pred: Vec<usize>, gt: Vec<usize> },
    #[error("maps must be 2-D, got {0:?}")]
    Rank(Vec<usize>),
    #[error("ground truth is not binary")]
    NonBinary,
    #[error("empty dataset")]
    Empty,
}

fn check(pred: &Tensor<f64>, gt: &Tensor<f64>) -> Result<(usize, usize), MetricError> {
    if pred.shape() != gt.shape() {
        return Err(MetricError::Shape {
            pred: pred.shape().to_vec(),
            gt: gt.shape().to_vec(),
        });
    }
    let [h, w] = pred.shape()[..] else {
        return Err(MetricError::Rank(pred.shape().to_vec()));
    };
    if gt.data().iter().any(|&g| g != 0.0 && g != 1.0) {
        return Err(MetricError::NonBinary);
    }
    Ok((h, w))
}

fn quantize(p: f64) -> usize {
    (p.clamp(0.0, 1.0) * 255.0).round() as usize
}

/// Mean absolute error.
pub fn mae(pred: &Tensor<f64>, gt: &Tensor<f64>) -> Result<f64, MetricError> {
    check(pred, gt)?;
    let sum: f64 = pred.data().iter().zip(gt.data()).map(|(p, g)| (p - g).abs()).sum();
    Ok(sum / pred.len() as f64)
}

/// Per-threshold counts: `above[t]` pixels with `q > t`, split by GT.
struct Sweep {
    tp: [usize; N_THRESHOLDS],
    fp: [usize; N_THRESHOLDS],
    n_fg: usize,
    n: usize,
}

fn sweep(pred: &Tensor<f64>, gt: &Tensor<f64>) -> Sweep {
    let mut hist_fg = [0usize; N_THRESHOLDS];
    let mut hist_bg = [0usize; N_THRESHOLDS];
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        if g == 1.0 {
            hist_fg[quantize(p)] += 1;
        } else {
            hist_bg[quantize(p)] += 1;
        }
    }
    let (mut tp, mut fp) = ([0; N_THRESHOLDS], [0; N_THRESHOLDS]);
    let (mut acc_fg, mut acc_bg) = (0, 0);
    for t in (0..N_THRESHOLDS).rev() {
        tp[t] = acc_fg;
        fp[t] = acc_bg;
        acc_fg += hist_fg[t];
        acc_bg += hist_bg[t];
    }
    Sweep {
        tp,
        fp,
        n_fg: acc_fg,
        n: acc_fg + acc_bg,
    }
}

/// Precision and recall at every threshold. Precision is 0 when nothing is
/// predicted; recall is 0 when the GT is empty.
pub fn pr_curve(pred: &Tensor<f64>, gt: &Tensor<f64>) -> Result<Vec<(f64, f64)>, MetricError> {
    check(pred, gt)?;
    let s = sweep(pred, gt);
    Ok((0..N_THRESHOLDS)
        .map(|t| {
            let predicted = s.tp[t] + s.fp[t];
            let p = if predicted == 0 { 0.0 } else { s.tp[t] as f64 / predicted as f64 };
            let r = if s.n_fg == 0 { 0.0 } else { s.tp[t] as f64 / s.n_fg as f64 };
            (p, r)
        })
        .collect())
}

fn f_beta(p: f64, r: f64) -> f64 {
    let den = BETA2 * p + r;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + BETA2) * p * r / den
    }
}

/// Maximum F-measure over thresholds of the dataset-mean precision and
/// recall curves.
pub fn max_f(pairs: &[(&Tensor<f64>, &Tensor<f64>)]) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut mean = vec![(0.0, 0.0); N_THRESHOLDS];
    for (pred, gt) in pairs {
        for (m, (p, r)) in mean.iter_mut().zip(pr_curve(pred, gt)?) {
            m.0 += p;
            m.1 += r;
        }
    }
    let n = pairs.len() as f64;
    Ok(mean
        .into_iter()
        .map(|(p, r)| f_beta(p / n, r / n))
        .fold(0.0, f64::max))
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn s_object(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let (x, sigma) = mean_std(values);
    2.0 * x / (x * x + 1.0 + sigma + EPS)
}

fn object_score(pred: &Tensor<f64>, gt: &Tensor<f64>) -> f64 {
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        if g == 1.0 {
            fg.push(p);
        } else {
            bg.push(1.0 - p);
        }
    }
    let u = fg.len() as f64 / pred.len() as f64;
    u * s_object(&fg) + (1.0 - u) * s_object(&bg)
}

fn ssim_block(pred: &[f64], gt: &[f64]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let n = pred.len() as f64;
    let x = pred.iter().sum::<f64>() / n;
    let y = gt.iter().sum::<f64>() / n;
    let denom = if pred.len() > 1 { n - 1.0 } else { 1.0 };
    let (mut sx, mut sy, mut sxy) = (0.0, 0.0, 0.0);
    for (p, g) in pred.iter().zip(gt) {
        sx += (p - x) * (p - x);
        sy += (g - y) * (g - y);
        sxy += (p - x) * (g - y);
    }
    let (sx, sy, sxy) = (sx / denom, sy / denom, sxy / denom);
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx + sy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// GT centroid as 1-based `(col, row)`, rounding half to even.
fn centroid(gt: &Tensor<f64>, h: usize, w: usize) -> (usize, usize) {
    let (mut sy, mut sx, mut n) = (0.0, 0.0, 0usize);
    for (i, &g) in gt.data().iter().enumerate() {
        if g == 1.0 {
            sy += (i / w) as f64;
            sx += (i % w) as f64;
            n += 1;
        }
    }
    if n == 0 {
        return (
            (w as f64 / 2.0).round_ties_even() as usize + 1,
            (h as f64 / 2.0).round_ties_even() as usize + 1,
        );
    }
    let x = (sx / n as f64).round_ties_even() as usize;
    let y = (sy / n as f64).round_ties_even() as usize;
    (x + 1, y + 1)
}

fn region_score(pred: &Tensor<f64>, gt: &Tensor<f64>, h: usize, w: usize) -> f64 {
    let (x, y) = centroid(gt, h, w);
    let (x, y) = (x.min(w), y.min(h));
    let area = (h * w) as f64;
    let block = |r0: usize, r1: usize, c0: usize, c1: usize| {
        let mut p = Vec::new();
        let mut g = Vec::new();
        for r in r0..r1 {
            p.extend_from_slice(&pred.data()[r * w + c0..r * w + c1]);
            g.extend_from_slice(&gt.data()[r * w + c0..r * w + c1]);
        }
        ssim_block(&p, &g)
    };
    let w1 = (x * y) as f64 / area;
    let w2 = (y * (w - x)) as f64 / area;
    let w3 = ((h - y) * x) as f64 / area;
    let w4 = 1.0 - w1 - w2 - w3;
    w1 * block(0, y, 0, x) + w2 * block(0, y, x, w) + w3 * block(y, h, 0, x) + w4 * block(y, h, x, w)
}

/// Structure measure `α·S_object + (1−α)·S_region`, clamped at 0. An
/// all-background GT scores `1 − mean(pred)`, an all-foreground GT
/// `mean(pred)`.
pub fn s_measure_alpha(pred: &Tensor<f64>, gt: &Tensor<f64>, alpha: f64) -> Result<f64, MetricError> {
    let (h, w) = check(pred, gt)?;
    let fg = gt.data().iter().sum::<f64>() / gt.len() as f64;
    let mean_pred = pred.data().iter().sum::<f64>() / pred.len() as f64;
    if fg == 0.0 {
        return Ok(1.0 - mean_pred);
    }
    if fg == 1.0 {
        return Ok(mean_pred);
    }
    let s = alpha * object_score(pred, gt) + (1.0 - alpha) * region_score(pred, gt, h, w);
    Ok(s.max(0.0))
}

pub fn s_measure(pred: &Tensor<f64>, gt: &Tensor<f64>) -> Result<f64, MetricError> {
    s_measure_alpha(pred, gt, 0.5)
}

/// Enhanced-alignment value at every threshold. Both maps are demeaned,
/// `φ = 2ab/(a²+b²)` with `0/0 = 1`, and the score is `mean((1+φ)²/4)`.
pub fn e_measure_curve(pred: &Tensor<f64>, gt: &Tensor<f64>) -> Result<Vec<f64>, MetricError> {
    check(pred, gt)?;
    let s = sweep(pred, gt);
    let n = s.n as f64;
    let mu_g = s.n_fg as f64 / n;
    let enhanced = |a: f64, b: f64| {
        let den = a * a + b * b;
        let phi = if den == 0.0 { 1.0 } else { 2.0 * a * b / den };
        (1.0 + phi) * (1.0 + phi) / 4.0
    };
    Ok((0..N_THRESHOLDS)
        .map(|t| {
            let (tp, fp) = (s.tp[t], s.fp[t]);
            let fn_ = s.n_fg - tp;
            let tn = s.n - s.n_fg - fp;
            let mu_f = (tp + fp) as f64 / n;
            let sum = tp as f64 * enhanced(1.0 - mu_f, 1.0 - mu_g)
                + fp as f64 * enhanced(1.0 - mu_f, -mu_g)
                + fn_ as f64 * enhanced(-mu_f, 1.0 - mu_g)
                + tn as f64 * enhanced(-mu_f, -mu_g);
            sum / n
        })
        .collect())
}

pub fn e_measure_max(pred: &Tensor<f64>, gt: &Tensor<f64>) -> Result<f64, MetricError> {
    Ok(e_measure_curve(pred, gt)?.into_iter().fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scores {
    pub s: f64,
    pub max_f: f64,
    pub e_max: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub images: Vec<(String, Scores)>,
    /// Dataset values: mean S, E and MAE; maxF from the mean PR curves.
    pub mean: Scores,
    pub thresholds: usize,
    pub skipped: Vec<String>,
}

/// Scores every named `(pred, gt)` pair and aggregates.
pub fn evaluate(pairs: &[(String, Tensor<f64>, Tensor<f64>)]) -> Result<EvalReport, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut images = Vec::with_capacity(pairs.len());
    for (name, pred, gt) in pairs {
        images.push((
            name.clone(),
            Scores {
                s: s_measure(pred, gt)?,
                max_f: max_f(&[(pred, gt)])?,
                e_max: e_measure_max(pred, gt)?,
                mae: mae(pred, gt)?,
            },
        ));
    }
    let n = images.len() as f64;
    let avg = |f: fn(&Scores) -> f64| images.iter().map(|(_, s)| f(s)).sum::<f64>() / n;
    let refs: Vec<_> = pairs.iter().map(|(_, p, g)| (p, g)).collect();
    let mean = Scores {
        s: avg(|s| s.s),
        max_f: max_f(&refs)?,
        e_max: avg(|s| s.e_max),
        mae: avg(|s| s.mae),
    };
    Ok(EvalReport {
        images,
        mean,
        thresholds: N_THRESHOLDS,
        skipped: Vec::new(),
    })
}

impl EvalReport {
    /// `image,S,maxF,Emax,MAE` rows followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image,S,maxF,Emax,MAE\n");
        let row = |name: &str, s: &Scores| format!("{name},{:.6},{:.6},{:.6},{:.6}\n", s.s, s.max_f, s.e_max, s.mae);
        for (name, s) in &self.images {
            out.push_str(&row(name, s));
        }
        out.push_str(&row("mean", &self.mean));
        out
    }

    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<10} {:>8} {:>8} {:>8} {:>8}\n",
            "images", "S_m", "maxF", "E_max", "MAE"
        );
        out.push_str(&format!(
            "{:<10} {:>8.4} {:>8.4} {:>8.4} {:>8.4}\n",
            self.images.len(),
            self.mean.s,
            self.mean.max_f,
            self.mean.e_max,
            self.mean.mae
        ));
        out
    }
}
