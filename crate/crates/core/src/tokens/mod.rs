//! Spatial token machinery: soft split, fold, the tokens-to-token module, the
//! reverse tokens-to-token upsampler and 2-D sinusoidal position embeddings.

pub mod split;

use crate::autodiff::Var;
use crate::nn::{Bound, LayerParams, Linear};
use crate::tensor::{Float, Tensor, TensorError};

pub use split::{output_len, SplitGeometry, SplitSpec};

/// An `l×dim` token matrix laid out row-major over a `grid_h×grid_w` grid.
#[derive(Clone, Debug)]
pub struct TokenSeq<'t, T: Float> {
    tokens: Var<'t, T>,
    grid_h: usize,
    grid_w: usize,
}

impl<'t, T: Float> TokenSeq<'t, T> {
    pub fn new(tokens: Var<'t, T>, grid_h: usize, grid_w: usize) -> Result<Self, TensorError> {
        let (l, _) = tokens.value().dims2("token_seq")?;
        if l != grid_h * grid_w {
            return Err(TensorError::contract(
                "token_seq",
                format!("{l} tokens do not fill a {grid_h}x{grid_w} grid"),
            ));
        }
        Ok(TokenSeq {
            tokens,
            grid_h,
            grid_w,
        })
    }

    /// Views an `h×w×c` image as `h·w` tokens of dimension `c`.
    pub fn from_image(img: &Var<'t, T>) -> Result<Self, TensorError> {
        let [h, w, c] = img.shape()[..] else {
            return Err(TensorError::contract(
                "token_seq",
                format!("expected an h×w×c image, got {:?}", img.shape()),
            ));
        };
        TokenSeq::new(img.reshape(&[h * w, c])?, h, w)
    }

    pub fn tokens(&self) -> &Var<'t, T> {
        &self.tokens
    }

    pub fn into_tokens(self) -> Var<'t, T> {
        self.tokens
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.grid_h, self.grid_w)
    }

    pub fn len(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.tokens.shape()[1]
    }

    /// Replaces the token values, keeping the grid.
    pub fn with_tokens(&self, tokens: Var<'t, T>) -> Result<Self, TensorError> {
        TokenSeq::new(tokens, self.grid_h, self.grid_w)
    }

    /// Reshapes back to an `h×w×dim` image.
    pub fn to_image(&self) -> Result<Var<'t, T>, TensorError> {
        self.tokens.reshape(&[self.grid_h, self.grid_w, self.dim()])
    }
}

/// Unfolds an `h×w×c` image into overlapping `k×k×c` patch tokens.
pub fn soft_split<'t, T: Float>(
    img: &Var<'t, T>,
    spec: &SplitSpec,
) -> Result<TokenSeq<'t, T>, TensorError> {
    let [h, w, c] = img.shape()[..] else {
        return Err(TensorError::contract(
            "soft_split",
            format!("expected an h×w×c image, got {:?}", img.shape()),
        ));
    };
    let geom = SplitGeometry::new(h, w, c, *spec)?;
    TokenSeq::new(img.soft_split(&geom)?, geom.grid_h, geom.grid_w)
}

/// Folds `c·k²`-dimensional tokens onto a `target_h×target_w×c` image,
/// summing overlaps and cropping the `p`-pixel padding border.
pub fn fold<'t, T: Float>(
    tok: &TokenSeq<'t, T>,
    spec: &SplitSpec,
    target_h: usize,
    target_w: usize,
) -> Result<Var<'t, T>, TensorError> {
    let geom = fold_geometry(tok, spec, target_h, target_w)?;
    tok.tokens.fold(&geom)
}

fn fold_geometry<T: Float>(
    tok: &TokenSeq<'_, T>,
    spec: &SplitSpec,
    target_h: usize,
    target_w: usize,
) -> Result<SplitGeometry, TensorError> {
    spec.validate()?;
    let kk = spec.k * spec.k;
    if tok.dim() % kk != 0 {
        return Err(TensorError::Spec(format!(
            "{spec}: token dim {} is not a multiple of k² = {kk}",
            tok.dim()
        )));
    }
    let geom = SplitGeometry::new(target_h, target_w, tok.dim() / kk, *spec)?;
    if (geom.grid_h, geom.grid_w) != tok.grid() {
        return Err(TensorError::Spec(format!(
            "{spec}: target {target_h}x{target_w} splits into a {}x{} grid, tokens form {}x{}",
            geom.grid_h, geom.grid_w, tok.grid_h, tok.grid_w
        )));
    }
    Ok(geom)
}

/// One tokens-to-token step: re-structurize with `layer`, reshape to an image,
/// soft split with `spec`. Returns `(restructured, split)` so that callers can
/// keep the intermediate multi-level tokens.
pub fn t2t_module<'t, T: Float>(
    tok: &TokenSeq<'t, T>,
    layer: &LayerParams,
    params: &Bound<'t, T>,
    spec: &SplitSpec,
) -> Result<(TokenSeq<'t, T>, TokenSeq<'t, T>), TensorError> {
    let restructured = tok.with_tokens(layer.forward(params, tok.tokens())?)?;
    let split = soft_split(&restructured.to_image()?, spec)?;
    Ok((restructured, split))
}

/// Reverse tokens-to-token upsampling: project `d → c`, expand `c → c·k²`,
/// fold onto the target grid with overlap summation.
pub fn rt2t<'t, T: Float>(
    tok: &TokenSeq<'t, T>,
    spec: &SplitSpec,
    target_h: usize,
    target_w: usize,
    proj_in: &Linear,
    proj_expand: &Linear,
    params: &Bound<'t, T>,
) -> Result<TokenSeq<'t, T>, TensorError> {
    let reduced = proj_in.forward(params, tok.tokens())?;
    let expanded = tok.with_tokens(proj_expand.forward(params, &reduced)?)?;
    let img = fold(&expanded, spec, target_h, target_w)?;
    TokenSeq::from_image(&img)
}

/// Fixed 2-D sinusoidal position embedding of shape `(grid_h·grid_w)×d`.
///
/// The first `d/2` channels encode the row index and the last `d/2` the
/// column index. Within each half, channel pair `(2i, 2i+1)` holds
/// `(sin, cos)(pos / 10000^(2i/(d/2)))`.
pub fn sinusoidal_pos_embed<T: Float>(
    grid_h: usize,
    grid_w: usize,
    d: usize,
) -> Result<Tensor<T>, TensorError> {
    if d == 0 || d % 4 != 0 {
        return Err(TensorError::contract(
            "sinusoidal_pos_embed",
            format!("embedding dim {d} must be a positive multiple of 4"),
        ));
    }
    let half = d / 2;
    let freqs: Vec<f64> = (0..half / 2)
        .map(|i| 1.0 / 10000f64.powf(2.0 * i as f64 / half as f64))
        .collect();
    let mut out = Vec::with_capacity(grid_h * grid_w * d);
    for r in 0..grid_h {
        for c in 0..grid_w {
            for pos in [r, c] {
                for &f in &freqs {
                    let a = pos as f64 * f;
                    out.push(T::from_f64(a.sin()));
                    out.push(T::from_f64(a.cos()));
                }
            }
        }
    }
    Tensor::new(&[grid_h * grid_w, d], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn identity_split_is_per_pixel() {
        let tape = Tape::<f64>::no_grad();
        let img = tape.constant(Tensor::from_fn(&[3, 4, 2], |i| i as f64));
        let toks = soft_split(&img, &SplitSpec::new(1, 0, 0)).unwrap();
        assert_eq!(toks.grid(), (3, 4));
        assert_eq!(toks.tokens().value().data(), img.value().data());
        let back = fold(&toks, &SplitSpec::new(1, 0, 0), 3, 4).unwrap();
        assert_eq!(back.value(), img.value());
    }

    #[test]
    fn zero_image_splits_to_zero_tokens() {
        let tape = Tape::<f64>::no_grad();
        let img = tape.constant(Tensor::zeros(&[5, 5, 3]));
        let toks = soft_split(&img, &SplitSpec::new(3, 1, 1)).unwrap();
        assert!(toks.tokens().value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fold_rejects_inconsistent_target() {
        let tape = Tape::<f64>::no_grad();
        let toks = TokenSeq::new(tape.constant(Tensor::zeros(&[4, 9])), 2, 2).unwrap();
        assert!(fold(&toks, &SplitSpec::new(3, 1, 1), 4, 4).is_ok());
        assert!(matches!(
            fold(&toks, &SplitSpec::new(3, 1, 1), 6, 4),
            Err(TensorError::Spec(_))
        ));
        let bad_dim = TokenSeq::new(tape.constant(Tensor::zeros(&[4, 8])), 2, 2).unwrap();
        assert!(fold(&bad_dim, &SplitSpec::new(3, 1, 1), 4, 4).is_err());
    }

    #[test]
    fn token_seq_checks_grid() {
        let tape = Tape::<f64>::no_grad();
        assert!(TokenSeq::new(tape.constant(Tensor::zeros(&[5, 2])), 2, 2).is_err());
    }

    #[test]
    fn pos_embed_basics() {
        let pe = sinusoidal_pos_embed::<f64>(14, 14, 64).unwrap();
        assert_eq!(pe.shape(), &[196, 64]);
        let origin = &pe.data()[..64];
        for pair in origin.chunks(2) {
            assert_eq!(pair, &[0.0, 1.0]);
        }
        assert!(pe.data().iter().all(|v| v.abs() <= 1.0));
        // Same row, different column: row channels agree.
        let a = &pe.data()[(3 * 14 + 2) * 64..(3 * 14 + 2) * 64 + 32];
        let b = &pe.data()[(3 * 14 + 9) * 64..(3 * 14 + 9) * 64 + 32];
        assert_eq!(a, b);
        assert!(sinusoidal_pos_embed::<f64>(2, 2, 6).is_err());
    }

    #[test]
    fn pos_embed_transpose_swaps_halves() {
        let (h, w, d) = (3, 5, 16);
        let pe = sinusoidal_pos_embed::<f64>(h, w, d).unwrap();
        let pt = sinusoidal_pos_embed::<f64>(w, h, d).unwrap();
        for r in 0..h {
            for c in 0..w {
                let a = &pe.data()[(r * w + c) * d..(r * w + c + 1) * d];
                let b = &pt.data()[(c * h + r) * d..(c * h + r + 1) * d];
                assert_eq!(&a[..d / 2], &b[d / 2..]);
                assert_eq!(&a[d / 2..], &b[..d / 2]);
            }
        }
        assert_eq!(pe, sinusoidal_pos_embed::<f64>(h, w, d).unwrap());
    }
}
