//! Resize, crop, flip and Sobel boundary extraction.
//!
//! Bilinear resizing uses the half-pixel (align-corners-false) convention:
//! output pixel `o` samples source coordinate `(o + 0.5)·in/out − 0.5`,
//! clamped to `[0, in − 1]`, interpolating between its floor and the next
//! pixel (also clamped).

use rand::Rng;

use crate::tensor::{Float, Tensor};

use super::{DataError, Sample};

fn hwc(t: &Tensor<impl Float>) -> (usize, usize, usize) {
    let s = t.shape();
    (s[0], s[1], s.get(2).copied().unwrap_or(1))
}

fn axis_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = src.floor() as usize;
            (i0, (i0 + 1).min(n_in - 1), src - i0 as f64)
        })
        .collect()
}

/// Bilinear resize of an `h×w` or `h×w×c` tensor.
pub fn resize_bilinear<T: Float>(t: &Tensor<T>, out_h: usize, out_w: usize) -> Tensor<T> {
    let (h, w, c) = hwc(t);
    let mut shape = vec![out_h, out_w];
    if t.rank() == 3 {
        shape.push(c);
    }
    let ys = axis_taps(h, out_h);
    let xs = axis_taps(w, out_w);
    let at = |y: usize, x: usize, ch: usize| t.data()[(y * w + x) * c + ch].as_f64();
    Tensor::from_fn(&shape, |i| {
        let (ch, px) = (i % c, i / c);
        let (y0, y1, fy) = ys[px / out_w];
        let (x0, x1, fx) = xs[px % out_w];
        let top = at(y0, x0, ch) * (1.0 - fx) + at(y0, x1, ch) * fx;
        let bottom = at(y1, x0, ch) * (1.0 - fx) + at(y1, x1, ch) * fx;
        T::from_f64(top * (1.0 - fy) + bottom * fy)
    })
}

/// Crops a `ch×cw` window at `(top, left)`.
pub fn crop<T: Float>(t: &Tensor<T>, top: usize, left: usize, ch: usize, cw: usize) -> Tensor<T> {
    let (h, w, c) = hwc(t);
    assert!(top + ch <= h && left + cw <= w, "crop window out of bounds");
    let mut shape = vec![ch, cw];
    if t.rank() == 3 {
        shape.push(c);
    }
    let mut out = Vec::with_capacity(ch * cw * c);
    for y in top..top + ch {
        let row = (y * w + left) * c;
        out.extend_from_slice(&t.data()[row..row + cw * c]);
    }
    Tensor::new(&shape, out).expect("crop shape")
}

pub fn center_crop<T: Float>(t: &Tensor<T>, ch: usize, cw: usize) -> Tensor<T> {
    let (h, w, _) = hwc(t);
    crop(t, (h - ch) / 2, (w - cw) / 2, ch, cw)
}

/// Mirrors columns.
pub fn flip_horizontal<T: Float>(t: &Tensor<T>) -> Tensor<T> {
    let (_, w, c) = hwc(t);
    Tensor::from_fn(t.shape(), |i| {
        let (px, ch) = (i / c, i % c);
        let (y, x) = (px / w, px % w);
        t.data()[(y * w + (w - 1 - x)) * c + ch]
    })
}

/// `1` where `v >= 0.5`, else `0`.
pub fn binarize<T: Float>(t: &Tensor<T>) -> Tensor<T> {
    t.map(|v| if v.as_f64() >= 0.5 { T::one() } else { T::zero() })
}

/// Binary boundary of an `h×w` mask: 3×3 Sobel with replicated borders,
/// `1` wherever the gradient magnitude is nonzero.
pub fn sobel_boundary<T: Float>(mask: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (mask.shape()[0], mask.shape()[1]);
    let at = |y: isize, x: isize| {
        let y = y.clamp(0, h as isize - 1) as usize;
        let x = x.clamp(0, w as isize - 1) as usize;
        mask.data()[y * w + x].as_f64()
    };
    Tensor::from_fn(&[h, w], |i| {
        let (y, x) = ((i / w) as isize, (i % w) as isize);
        let gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
            - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
        let gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
            - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
        if gx * gx + gy * gy > 0.0 {
            T::one()
        } else {
            T::zero()
        }
    })
}

/// Resize-then-crop preprocessing. Inputs are resized to `resize×resize`;
/// training draws a uniform crop offset and a horizontal flip, evaluation
/// takes the center crop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Preprocessor {
    pub resize: usize,
    pub crop_h: usize,
    pub crop_w: usize,
}

impl Preprocessor {
    pub fn new(resize: usize, crop_h: usize, crop_w: usize) -> Result<Self, DataError> {
        if resize == 0 || crop_h == 0 || crop_w == 0 {
            return Err(DataError::Config("sizes must be positive".into()));
        }
        if crop_h > resize || crop_w > resize {
            return Err(DataError::Config(format!(
                "crop {crop_h}x{crop_w} is larger than the resize target {resize}"
            )));
        }
        Ok(Preprocessor {
            resize,
            crop_h,
            crop_w,
        })
    }

    /// Resizes every map; the mask is re-binarised and the boundary
    /// recomputed.
    pub fn resize<T: Float>(&self, s: &Sample<T>) -> Sample<T> {
        let r = self.resize;
        let mask = binarize(&resize_bilinear(&s.mask, r, r));
        Sample {
            image: resize_bilinear(&s.image, r, r),
            depth: s.depth.as_ref().map(|d| resize_bilinear(d, r, r)),
            boundary: sobel_boundary(&mask),
            mask,
        }
    }

    /// Applies the crop/flip step to an already resized sample. With `rng`
    /// the draws are, in order: crop top, crop left, flip.
    pub fn crop_flip<T: Float, R: Rng>(&self, s: &Sample<T>, rng: Option<&mut R>) -> Sample<T> {
        let (h, w) = s.hw();
        let (ch, cw) = (self.crop_h, self.crop_w);
        let (top, left, flip) = match rng {
            Some(rng) => (
                rng.random_range(0..=h - ch),
                rng.random_range(0..=w - cw),
                rng.random_bool(0.5),
            ),
            None => ((h - ch) / 2, (w - cw) / 2, false),
        };
        let geo = |t: &Tensor<T>| {
            let c = crop(t, top, left, ch, cw);
            if flip {
                flip_horizontal(&c)
            } else {
                c
            }
        };
        let mask = geo(&s.mask);
        Sample {
            image: geo(&s.image),
            depth: s.depth.as_ref().map(geo),
            boundary: sobel_boundary(&mask),
            mask,
        }
    }

    /// Full preprocessing: resize, then random (train) or center (eval) crop.
    pub fn apply<T: Float, R: Rng>(&self, s: &Sample<T>, rng: Option<&mut R>) -> Sample<T> {
        self.crop_flip(&self.resize(s), rng)
    }

    /// Eval-mode transform of a bare image or depth map: resize, center crop.
    pub fn input<T: Float>(&self, t: &Tensor<T>) -> Tensor<T> {
        center_crop(&resize_bilinear(t, self.resize, self.resize), self.crop_h, self.crop_w)
    }

    pub fn eval<T: Float>(&self, s: &Sample<T>) -> Sample<T> {
        self.apply::<T, rand_chacha::ChaCha8Rng>(s, None)
    }
}
