mod common;

use common::{coverage_oracle, dot, random_store, rng, soft_split_oracle, uniform, window_count};
use proptest::prelude::*;
use vst::autodiff::Tape;
use vst::nn::{LayerParams, Linear, ParamRegistry};
use vst::tokens::{fold, output_len, rt2t, sinusoidal_pos_embed, soft_split, t2t_module};
use vst::tokens::{SplitGeometry, SplitSpec, TokenSeq};
use vst::Tensor;

const ENCODER: [SplitSpec; 3] = [SplitSpec::new(7, 3, 2), SplitSpec::new(3, 1, 1), SplitSpec::new(3, 1, 1)];
const K3: SplitSpec = SplitSpec::new(3, 1, 1);

#[test]
fn exhaustive_grid_matches_oracle_and_adjoint() {
    let n = common::exhaustive_split_sweep().unwrap();
    assert!(n > 5000);
}

#[test]
fn output_len_examples() {
    assert_eq!(output_len(224, 224, &ENCODER[0]).unwrap(), (56, 56));
    assert_eq!(output_len(56, 56, &K3).unwrap(), (28, 28));
    assert_eq!(output_len(28, 28, &K3).unwrap(), (14, 14));
    assert_eq!(output_len(4, 4, &K3).unwrap(), (2, 2));
    assert!(output_len(2, 2, &SplitSpec::new(7, 3, 2)).is_err());
    assert!(output_len(8, 8, &SplitSpec::new(3, 3, 1)).is_err());
}

#[test]
fn ramp_image_matches_index_oracle() {
    let img = Tensor::from_fn(&[4, 4, 1], |i| i as f64);
    let tape = Tape::no_grad();
    let tok = soft_split(&tape.constant(img.clone()), &K3).unwrap();
    assert_eq!(tok.grid(), (2, 2));
    assert_eq!(tok.dim(), 9);
    let (_, _, expect) = soft_split_oracle(img.data(), 4, 4, 1, K3);
    assert_eq!(tok.tokens().value().data(), &expect[..]);
    // First window: top-left corner with one row and column of padding.
    assert_eq!(&expect[..9], &[0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 4.0, 5.0]);
}

#[test]
fn unit_split_is_identity_and_folds_back() {
    let mut r = rng(1);
    let img = uniform(&mut r, &[5, 7, 3], -1.0, 1.0);
    let spec = SplitSpec::new(1, 0, 0);
    let tape = Tape::no_grad();
    let tok = soft_split(&tape.constant(img.clone()), &spec).unwrap();
    assert_eq!(tok.len(), 35);
    assert_eq!(tok.tokens().value().data(), img.data());
    assert_eq!(fold(&tok, &spec, 5, 7).unwrap().value(), &img);
}

#[test]
fn zero_image_gives_zero_tokens() {
    let tape = Tape::no_grad();
    let tok = soft_split(&tape.constant(Tensor::<f64>::zeros(&[9, 6, 2])), &ENCODER[0]).unwrap();
    assert!(tok.tokens().value().data().iter().all(|&v| v == 0.0));
}

#[test]
fn ones_fold_to_coverage_count() {
    let tape = Tape::no_grad();
    let tok = TokenSeq::new(tape.constant(Tensor::<f64>::ones(&[4, 9])), 2, 2).unwrap();
    let img = fold(&tok, &K3, 4, 4).unwrap();
    let expect = coverage_oracle(4, 4, K3);
    assert_eq!(img.value().data(), &expect[..]);
    // Windows cover source rows -1..=1 and 1..=3: only row 1 is shared.
    assert_eq!(&expect[..4], &[1.0, 2.0, 1.0, 1.0]);
    assert_eq!(&expect[4..8], &[2.0, 4.0, 2.0, 2.0]);
}

#[test]
fn identity_layer_t2t_is_plain_split() {
    let mut reg = ParamRegistry::new();
    let layer = LayerParams::new(&mut reg, "t2t", 6, 1, 1.0);
    let mut store = random_store(&reg, &mut rng(2));
    layer.zero_residual(&mut store);
    let mut r = rng(3);
    let x = uniform(&mut r, &[20, 6], -1.0, 1.0);
    let tape = Tape::no_grad();
    let bound = store.bind(&tape);
    let tok = TokenSeq::new(tape.constant(x.clone()), 4, 5).unwrap();
    let (restructured, split) = t2t_module(&tok, &layer, &bound, &K3).unwrap();
    assert_eq!(restructured.tokens().value(), &x);
    let direct = soft_split(&tape.constant(x.reshape(&[4, 5, 6]).unwrap()), &K3).unwrap();
    assert_eq!(split.grid(), (2, 3));
    assert_eq!(split.tokens().value(), direct.tokens().value());
}

fn encoder_chain(h: usize, w: usize) -> Vec<(usize, usize)> {
    let mut grid = (h, w);
    ENCODER
        .iter()
        .map(|s| {
            grid = output_len(grid.0, grid.1, s).unwrap();
            grid
        })
        .collect()
}

#[test]
fn encoder_chains() {
    assert_eq!(encoder_chain(64, 64), [(16, 16), (8, 8), (4, 4)]);
    assert_eq!(encoder_chain(224, 224), [(56, 56), (28, 28), (14, 14)]);
}

fn upsampler(d: usize, c: usize, k: usize) -> (ParamRegistry, Linear, Linear) {
    let mut reg = ParamRegistry::new();
    let proj_in = Linear::new(&mut reg, "in", d, c, true);
    let expand = Linear::new(&mut reg, "expand", c, c * k * k, true);
    (reg, proj_in, expand)
}

#[test]
fn rt2t_upsamples_14_to_28() {
    let (reg, pi, pe) = upsampler(8, 4, 3);
    let store = random_store(&reg, &mut rng(5));
    let tape = Tape::no_grad();
    let bound = store.bind(&tape);
    let tok = TokenSeq::new(tape.constant(uniform(&mut rng(6), &[196, 8], -1.0, 1.0)), 14, 14).unwrap();
    let up = rt2t(&tok, &K3, 28, 28, &pi, &pe, &bound).unwrap();
    assert_eq!(up.len(), 784);
    assert_eq!((up.grid(), up.dim()), ((28, 28), 4));
}

#[test]
fn rt2t_zero_tokens_stay_zero() {
    let (reg, pi, pe) = upsampler(8, 4, 3);
    let mut store = random_store(&reg, &mut rng(7));
    for b in [pi.b, pe.b].into_iter().flatten() {
        store.fill(b, 0.0);
    }
    let tape = Tape::no_grad();
    let bound = store.bind(&tape);
    let tok = TokenSeq::new(tape.constant(Tensor::zeros(&[16, 8])), 4, 4).unwrap();
    let up = rt2t(&tok, &K3, 8, 8, &pi, &pe, &bound).unwrap();
    assert!(up.tokens().value().data().iter().all(|&v| v == 0.0));
}

#[test]
fn rt2t_single_token_is_window_crop() {
    let (d, c, k) = (6, 2, 7);
    let spec = SplitSpec::new(k, 3, 3);
    let (reg, pi, pe) = upsampler(d, c, k);
    let store = random_store(&reg, &mut rng(8));
    let x = uniform(&mut rng(9), &[1, d], -1.0, 1.0);
    let tape = Tape::no_grad();
    let bound = store.bind(&tape);
    let tok = TokenSeq::new(tape.constant(x.clone()), 1, 1).unwrap();
    let up = rt2t(&tok, &spec, 4, 4, &pi, &pe, &bound).unwrap();

    let affine = |v: &[f64], l: &Linear| -> Vec<f64> {
        let w = store.get(l.w);
        let b = store.get(l.b.unwrap());
        (0..l.dout)
            .map(|j| (0..l.din).map(|i| v[i] * w.at2(i, j)).sum::<f64>() + b.data()[j])
            .collect()
    };
    let expanded = affine(&affine(x.data(), &pi), &pe);
    // The only window starts at padded row/col 0, so source pixel (y, x)
    // sits at window offset (y + 3, x + 3).
    for y in 0..4 {
        for xx in 0..4 {
            for ch in 0..c {
                let got = up.tokens().value().at2(y * 4 + xx, ch);
                let want = expanded[((y + 3) * k + xx + 3) * c + ch];
                assert!((got - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn pos_embed_examples() {
    let pe = sinusoidal_pos_embed::<f64>(14, 14, 64).unwrap();
    assert!(pe.data().iter().all(|v| v.abs() <= 1.0));
    for ch in 0..64 {
        assert_eq!(pe.at2(0, ch), if ch % 2 == 0 { 0.0 } else { 1.0 });
    }
    // (3, 2) and (3, 9) share every row channel.
    for ch in 0..32 {
        assert_eq!(pe.at2(3 * 14 + 2, ch), pe.at2(3 * 14 + 9, ch));
    }
    assert!(sinusoidal_pos_embed::<f64>(2, 2, 6).is_err());
}

fn geometry() -> impl Strategy<Value = (usize, usize, usize, SplitSpec)> {
    (3usize..=12, 3usize..=12, 1usize..=3, 1usize..=5)
        .prop_flat_map(|(h, w, c, k)| (Just(h), Just(w), Just(c), Just(k), 0..k, 0usize..=3))
        .prop_filter("window fits", |(h, w, _, k, _, p)| h + 2 * p >= *k && w + 2 * p >= *k)
        .prop_map(|(h, w, c, k, s, p)| (h, w, c, SplitSpec::new(k, s, p)))
}

proptest! {
    #[test]
    fn raw_kernels_match_oracle((h, w, c, spec) in geometry(), seed in any::<u64>()) {
        let img = uniform(&mut rng(seed), &[h, w, c], -1.0, 1.0);
        let g = SplitGeometry::new(h, w, c, spec).unwrap();
        let (gh, gw, expect) = soft_split_oracle(img.data(), h, w, c, spec);
        prop_assert_eq!((g.grid_h, g.grid_w), (gh, gw));
        prop_assert_eq!(g.unfold(img.data()), expect.clone());
        let y = uniform(&mut rng(seed ^ 1), &[g.n_tokens(), g.token_dim()], -1.0, 1.0);
        let lhs = dot(&g.fold(y.data()), img.data());
        prop_assert!((lhs - dot(y.data(), &expect)).abs() < 1e-10);
    }

    #[test]
    fn split_then_fold_scales_by_coverage((h, w, c, spec) in geometry(), seed in any::<u64>()) {
        let img = uniform(&mut rng(seed), &[h, w, c], -1.0, 1.0);
        let tape = Tape::no_grad();
        let tok = soft_split(&tape.constant(img.clone()), &spec).unwrap();
        let back = fold(&tok, &spec, h, w).unwrap();
        let cov = coverage_oracle(h, w, spec);
        for (i, (&b, &x)) in back.value().data().iter().zip(img.data()).enumerate() {
            prop_assert!((b - x * cov[i / c]).abs() < 1e-12);
        }
    }

    #[test]
    fn output_len_agrees_with_window_count(n in 1usize..200, m in 1usize..200, k in 1usize..8, s in 0usize..8, p in 0usize..4) {
        prop_assume!(s < k && n + 2 * p >= k && m + 2 * p >= k);
        let spec = SplitSpec::new(k, s, p);
        prop_assert_eq!(output_len(n, m, &spec).unwrap(), (window_count(n, k, s, p), window_count(m, k, s, p)));
    }

    #[test]
    fn encoder_chain_quarters(a in 1usize..20, b in 1usize..20) {
        let (h, w) = (16 * a, 16 * b);
        prop_assert_eq!(encoder_chain(h, w), vec![(h / 4, w / 4), (h / 8, w / 8), (h / 16, w / 16)]);
        // Each decoder target splits back onto the grid it upsamples from.
        prop_assert_eq!(output_len(h / 8, w / 8, &K3).unwrap(), (h / 16, w / 16));
        prop_assert_eq!(output_len(h / 4, w / 4, &K3).unwrap(), (h / 8, w / 8));
        prop_assert_eq!(output_len(h, w, &SplitSpec::new(7, 3, 3)).unwrap(), (h / 4, w / 4));
    }

    #[test]
    fn rt2t_grows_the_sequence(gh in 1usize..6, gw in 1usize..6, k in 2usize..6, seed in any::<u64>()) {
        let spec = SplitSpec::new(k, k - 2, (k - 1) / 2);
        let stride = 2;
        // Largest target that still splits onto the source grid.
        let (th, tw) = ((gh - 1) * stride + k - 2 * spec.p, (gw - 1) * stride + k - 2 * spec.p);
        prop_assume!(th * tw > gh * gw);
        prop_assume!(output_len(th, tw, &spec).map(|g| g == (gh, gw)).unwrap_or(false));
        let (reg, pi, pe) = upsampler(4, 2, k);
        let store = random_store(&reg, &mut rng(seed));
        let tape = Tape::no_grad();
        let bound = store.bind(&tape);
        let tok = TokenSeq::new(tape.constant(uniform(&mut rng(seed ^ 2), &[gh * gw, 4], -1.0, 1.0)), gh, gw).unwrap();
        let up = rt2t(&tok, &spec, th, tw, &pi, &pe, &bound).unwrap();
        prop_assert!(up.len() > tok.len());
    }

    #[test]
    fn pos_embed_transpose_swaps_halves(gh in 1usize..10, gw in 1usize..10, q in 1usize..8) {
        let d = 4 * q;
        let a = sinusoidal_pos_embed::<f64>(gh, gw, d).unwrap();
        prop_assert_eq!(&a, &sinusoidal_pos_embed::<f64>(gh, gw, d).unwrap());
        let t = sinusoidal_pos_embed::<f64>(gw, gh, d).unwrap();
        for r in 0..gh {
            for c in 0..gw {
                for ch in 0..d {
                    let swapped = (ch + d / 2) % d;
                    prop_assert_eq!(a.at2(r * gw + c, ch), t.at2(c * gh + r, swapped));
                }
            }
        }
    }
}
