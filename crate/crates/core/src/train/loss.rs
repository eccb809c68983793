//! Binary cross-entropy and the deep-supervision objective.

use crate::autodiff::Var;
use crate::data::{binarize, sobel_boundary};
use crate::model::{MapLogits, SaliencyOutput};
use crate::tensor::{Float, Tensor, TensorError};

/// Probability clamp used by [`bce_loss`].
pub const PROB_CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy of probabilities `pred` against `gt`, with
/// `pred` clamped to `[1e-7, 1 − 1e-7]`.
pub fn bce_loss<T: Float>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<f64, TensorError> {
    if pred.shape() != gt.shape() {
        return Err(TensorError::shape("bce_loss", pred.shape(), gt.shape()));
    }
    let sum: f64 = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(p, g)| {
            let p = p.as_f64().clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            let g = g.as_f64();
            -(g * p.ln() + (1.0 - g) * (1.0 - p).ln())
        })
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Average-pools an `h×w` map onto a `gh×gw` grid whose cell size divides
/// the map exactly.
pub fn avg_pool<T: Float>(map: &Tensor<T>, gh: usize, gw: usize) -> Result<Tensor<T>, TensorError> {
    let (h, w) = map.dims2("avg_pool")?;
    if gh == 0 || gw == 0 || h % gh != 0 || w % gw != 0 {
        return Err(TensorError::contract(
            "avg_pool",
            format!("{h}x{w} does not tile onto {gh}x{gw}"),
        ));
    }
    let (fy, fx) = (h / gh, w / gw);
    let inv = 1.0 / (fy * fx) as f64;
    Ok(Tensor::from_fn(&[gh, gw], |i| {
        let (gy, gx) = (i / gw, i % gw);
        let mut s = 0.0;
        for y in gy * fy..(gy + 1) * fy {
            for x in gx * fx..(gx + 1) * fx {
                s += map.data()[y * w + x].as_f64();
            }
        }
        T::from_f64(s * inv)
    }))
}

/// Saliency and boundary ground truth on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelTarget<T> {
    pub saliency: Tensor<T>,
    pub boundary: Tensor<T>,
}

/// Ground truth for every supervised output: the full-resolution maps and
/// one target per auxiliary grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets<T> {
    pub full: LevelTarget<T>,
    pub aux: Vec<LevelTarget<T>>,
}

impl<T: Float> Targets<T> {
    /// Auxiliary targets are the mask average-pooled to each grid,
    /// re-binarised at 0.5, with the boundary recomputed at that grid.
    pub fn new(mask: &Tensor<T>, boundary: &Tensor<T>, grids: &[(usize, usize)]) -> Result<Self, TensorError> {
        let aux = grids
            .iter()
            .map(|&(gh, gw)| {
                let saliency = binarize(&avg_pool(mask, gh, gw)?);
                Ok(LevelTarget {
                    boundary: sobel_boundary(&saliency),
                    saliency,
                })
            })
            .collect::<Result<_, TensorError>>()?;
        Ok(Targets {
            full: LevelTarget {
                saliency: mask.clone(),
                boundary: boundary.clone(),
            },
            aux,
        })
    }
}

/// The summed objective and its saliency/boundary split.
pub struct LossParts<'t, T: Float> {
    pub total: Var<'t, T>,
    pub saliency: f64,
    pub boundary: f64,
}

fn level_terms<'t, T: Float>(
    m: &MapLogits<'t, T>,
    t: &LevelTarget<T>,
) -> Result<(Var<'t, T>, Var<'t, T>), TensorError> {
    Ok((m.saliency.bce_with_logits(&t.saliency)?, m.boundary.bce_with_logits(&t.boundary)?))
}

/// Unit-weighted sum of saliency and boundary BCE over the final output and
/// every auxiliary level.
pub fn total_loss<'t, T: Float>(
    out: &SaliencyOutput<'t, T>,
    targets: &Targets<T>,
) -> Result<LossParts<'t, T>, TensorError> {
    if out.aux.len() != targets.aux.len() {
        return Err(TensorError::contract(
            "total_loss",
            format!("{} aux outputs, {} aux targets", out.aux.len(), targets.aux.len()),
        ));
    }
    let (s, b) = level_terms(&out.final_maps, &targets.full)?;
    let (mut sal, mut bnd) = (s.value().item().as_f64(), b.value().item().as_f64());
    let mut total = s.add(&b)?;
    for (m, t) in out.aux.iter().zip(&targets.aux) {
        let (s, b) = level_terms(m, t)?;
        sal += s.value().item().as_f64();
        bnd += b.value().item().as_f64();
        total = total.add(&s)?.add(&b)?;
    }
    Ok(LossParts {
        total,
        saliency: sal,
        boundary: bnd,
    })
}
