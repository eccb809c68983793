//! Overlapping patch geometry: sequence-length arithmetic plus the raw
//! unfold (soft split) and fold kernels.
//!
//! Images are `h×w×c` row-major with channels innermost. A token holds its
//! `k×k×c` patch flattened in `(row, column, channel)` order, so element
//! `(dy, dx, ch)` sits at offset `(dy·k + dx)·c + ch`. Tokens are ordered
//! row-major over the output grid. Window `(oy, ox)` covers padded-image rows
//! `oy·(k−s) .. oy·(k−s)+k`, i.e. source rows shifted up by `p`.

use serde::{Deserialize, Serialize};

use crate::tensor::{Float, TensorError};

/// Patch size `k`, overlap `s` and zero padding `p`, all in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SplitSpec {
    pub k: usize,
    pub s: usize,
    pub p: usize,
}

impl SplitSpec {
    pub const fn new(k: usize, s: usize, p: usize) -> Self {
        SplitSpec { k, s, p }
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        if self.k == 0 {
            return Err(TensorError::Spec(format!("{self}: patch size must be >= 1")));
        }
        if self.s >= self.k {
            return Err(TensorError::Spec(format!(
                "{self}: stride k-s must be >= 1"
            )));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.k - self.s
    }
}

impl std::fmt::Display for SplitSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(k={}, s={}, p={})", self.k, self.s, self.p)
    }
}

fn output_len_1d(n: usize, spec: &SplitSpec, axis: &str) -> Result<usize, TensorError> {
    let padded = n + 2 * spec.p;
    if padded < spec.k {
        return Err(TensorError::Spec(format!(
            "{spec}: window larger than padded {axis} extent {padded}"
        )));
    }
    Ok((padded - spec.k) / spec.stride() + 1)
}

/// Output grid `(h_o, w_o)` of a soft split over an `h×w` image.
pub fn output_len(h: usize, w: usize, spec: &SplitSpec) -> Result<(usize, usize), TensorError> {
    spec.validate()?;
    Ok((output_len_1d(h, spec, "height")?, output_len_1d(w, spec, "width")?))
}

/// Image/grid extents of one split, shared by the unfold and fold kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitGeometry {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub spec: SplitSpec,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl SplitGeometry {
    pub fn new(h: usize, w: usize, c: usize, spec: SplitSpec) -> Result<Self, TensorError> {
        let (grid_h, grid_w) = output_len(h, w, &spec)?;
        Ok(SplitGeometry {
            h,
            w,
            c,
            spec,
            grid_h,
            grid_w,
        })
    }

    pub fn token_dim(&self) -> usize {
        self.spec.k * self.spec.k * self.c
    }

    pub fn n_tokens(&self) -> usize {
        self.grid_h * self.grid_w
    }

    /// Visits every in-bounds contiguous run shared by a token row segment and
    /// an image row: `(token_offset, image_offset, run_len)` in elements.
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize)) {
        let SplitSpec { k, p, .. } = self.spec;
        let stride = self.spec.stride() as isize;
        let (c, dim) = (self.c, self.token_dim());
        for oy in 0..self.grid_h {
            for ox in 0..self.grid_w {
                let tok_base = (oy * self.grid_w + ox) * dim;
                let x0 = ox as isize * stride - p as isize;
                // Clip the window's column range to the image.
                let dx_lo = (-x0).max(0) as usize;
                let dx_hi = ((self.w as isize - x0).min(k as isize)).max(0) as usize;
                if dx_lo >= dx_hi {
                    continue;
                }
                for dy in 0..k {
                    let y = oy as isize * stride + dy as isize - p as isize;
                    if y < 0 || y >= self.h as isize {
                        continue;
                    }
                    let x = (x0 + dx_lo as isize) as usize;
                    let img_off = (y as usize * self.w + x) * c;
                    let tok_off = tok_base + (dy * k + dx_lo) * c;
                    f(tok_off, img_off, (dx_hi - dx_lo) * c);
                }
            }
        }
    }

    /// Unfolds `img` (`h·w·c` values) into `n_tokens × token_dim` values.
    pub fn unfold<T: Float>(&self, img: &[T]) -> Vec<T> {
        debug_assert_eq!(img.len(), self.h * self.w * self.c);
        let mut out = vec![T::zero(); self.n_tokens() * self.token_dim()];
        self.for_each_run(|t, i, n| out[t..t + n].copy_from_slice(&img[i..i + n]));
        out
    }

    /// Adjoint of [`unfold`](Self::unfold): overlapping contributions sum and
    /// anything landing in the padding border is dropped.
    pub fn fold<T: Float>(&self, tokens: &[T]) -> Vec<T> {
        debug_assert_eq!(tokens.len(), self.n_tokens() * self.token_dim());
        let mut out = vec![T::zero(); self.h * self.w * self.c];
        self.for_each_run(|t, i, n| {
            for (o, &v) in out[i..i + n].iter_mut().zip(&tokens[t..t + n]) {
                *o += v;
            }
        });
        out
    }
}
