//! Dense colorization: evaluates the network at every pixel to produce the
//! raw RGB estimate.
//!
//! [`colorize_raw`] is the reference: one patch extraction and one forward
//! pass per pixel. [`colorize_raw_fast`] runs every branch once over its
//! whole (mirror-padded) pyramid level; each 2x2 pooling layer splits the
//! running map into four phase fragments, so a branch with `n_p` pools ends
//! in `4^n_p = gap^2` fragments whose pixels are interleaved back onto the
//! full-resolution grid with spacing `gap`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{conv_forward, fc_forward, maxpool2_at, relu_inplace, Tensor};
use crate::preprocess::{extract_patch, BypassSource, DecomposeParams, DecomposedPyramid};
use crate::topology::{BranchOp, Model, TopologySpec};

#[derive(Debug, Clone)]
pub struct RawEstimate {
    /// Three-channel raw estimate, same size as the input.
    pub image: Image,
    pub spec: TopologySpec,
    /// Coherence gap `2^n_p`.
    pub gap: usize,
    /// Number of interleaved phase fragments per branch (1 for the
    /// per-pixel reference path).
    pub passes: usize,
}

fn prepare(model: &Model<f32>, nir: &Image, params: DecomposeParams) -> Result<DecomposedPyramid> {
    if nir.channels() != 1 {
        return Err(Error::shape(format!(
            "colorization input must be single-channel, got {} channels",
            nir.channels()
        )));
    }
    model.check_shapes()?;
    if model.window != 0 && model.window != params.window {
        return Err(Error::shape(format!(
            "model was trained with window {}, got {}",
            model.window, params.window
        )));
    }
    DecomposedPyramid::new(nir, model.spec.n_levels, params)
}

/// Per-pixel sliding-window evaluation (reference path).
pub fn colorize_raw(model: &Model<f32>, nir: &Image, params: DecomposeParams) -> Result<RawEstimate> {
    let pyr = prepare(model, nir, params)?;
    let (w, h) = (nir.width(), nir.height());
    let roi = model.spec.roi();
    let rows: Vec<Vec<f32>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut row = Vec::with_capacity(w * 3);
            for x in 0..w {
                let patch = extract_patch(&pyr, (x, y), roi, model.bypass_source);
                row.extend_from_slice(&model.forward(&patch)?);
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    Ok(RawEstimate {
        image: Image::new(w, h, 3, rows.concat())?,
        spec: model.spec,
        gap: model.spec.coherence_gap(),
        passes: 1,
    })
}

/// Output of one phase fragment: map values for centers
/// `phase + gap * index` along each axis.
struct Fragment {
    phase: (usize, usize),
    map: Tensor<f32>,
}

fn run_ops(
    model: &Model<f32>,
    level: usize,
    ops: &[BranchOp],
    mut x: Tensor<f32>,
    phase: (usize, usize),
    stride: usize,
) -> Result<Vec<Fragment>> {
    for (i, op) in ops.iter().enumerate() {
        match *op {
            BranchOp::Conv(l) => {
                x = conv_forward(&x, &model.branches[level][l])?;
                relu_inplace(&mut x);
            }
            BranchOp::Pool => {
                let rest = &ops[i + 1..];
                let children: Vec<Result<Vec<Fragment>>> = [(0, 0), (1, 0), (0, 1), (1, 1)]
                    .into_par_iter()
                    .map(|(ox, oy)| {
                        let pooled = maxpool2_at(&x, ox, oy);
                        let p = (phase.0 + ox * stride, phase.1 + oy * stride);
                        run_ops(model, level, rest, pooled, p, stride * 2)
                    })
                    .collect();
                let mut out = Vec::new();
                for c in children {
                    out.extend(c?);
                }
                return Ok(out);
            }
        }
    }
    Ok(vec![Fragment { phase, map: x }])
}

/// Dense branch features for one level: `(features, h, w)` plus the
/// fragment count.
fn dense_branch(model: &Model<f32>, pyr: &DecomposedPyramid, level: usize) -> Result<(Tensor<f32>, usize)> {
    let spec = &model.spec;
    let tex = &pyr.levels[level].texture;
    let (w, h) = (tex.width(), tex.height());
    let roi = spec.roi();
    let gap = spec.coherence_gap();
    let half = (roi / 2) as isize;
    let (qw, qh) = (w.div_ceil(gap), h.div_ceil(gap));
    // With (roi - 1 + gap * q) samples, every fragment yields exactly q outputs.
    let (pw, ph) = (roi - 1 + gap * qw, roi - 1 + gap * qh);
    let mut padded = Vec::with_capacity(pw * ph);
    for y in 0..ph {
        for x in 0..pw {
            padded.push(tex.get_reflect(x as isize - half, y as isize - half, 0));
        }
    }
    let input = Tensor::new(1, ph, pw, padded)?;
    let fragments = run_ops(model, level, &spec.branch_ops(), input, (0, 0), 1)?;
    let feat = spec.branch_features();
    let mut out = Tensor::zeros(feat, h, w);
    for frag in &fragments {
        let m = &frag.map;
        if m.dims() != (feat, qh, qw) {
            return Err(Error::shape(format!(
                "fragment {:?} has shape {:?}, expected {:?}",
                frag.phase,
                m.dims(),
                (feat, qh, qw)
            )));
        }
        for j in 0..qh {
            let v = frag.phase.1 + gap * j;
            if v >= h {
                continue;
            }
            for i in 0..qw {
                let u = frag.phase.0 + gap * i;
                if u >= w {
                    continue;
                }
                for c in 0..feat {
                    out.data[(c * h + v) * w + u] = m.at(c, j, i);
                }
            }
        }
    }
    Ok((out, fragments.len()))
}

/// Fragment-interleaved dense evaluation; matches [`colorize_raw`].
pub fn colorize_raw_fast(model: &Model<f32>, nir: &Image, params: DecomposeParams) -> Result<RawEstimate> {
    let pyr = prepare(model, nir, params)?;
    let spec = model.spec;
    let branches: Vec<(Tensor<f32>, usize)> = (0..spec.n_levels)
        .into_par_iter()
        .map(|l| dense_branch(model, &pyr, l))
        .collect::<Result<_>>()?;
    let passes = branches[0].1;
    let (w, h) = (nir.width(), nir.height());
    let feat = spec.branch_features();
    let rows: Vec<Vec<f32>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut row = Vec::with_capacity(w * 3);
            let mut features: Vec<Vec<f32>> = vec![vec![0.0; feat]; spec.n_levels];
            let mut bypass = vec![0.0f32; spec.n_levels];
            for x in 0..w {
                for (l, (map, _)) in branches.iter().enumerate() {
                    let (u, v) = (x >> l, y >> l);
                    let (lw, lh) = (map.width, map.height);
                    for (c, f) in features[l].iter_mut().enumerate() {
                        *f = map.data[(c * lh + v) * lw + u];
                    }
                    bypass[l] = match model.bypass_source {
                        BypassSource::AllLevels => pyr.levels[l].mean.get(u, v, 0),
                        BypassSource::Level0 => pyr.levels[0].mean.get(x, y, 0),
                    };
                }
                let refs: Vec<&[f32]> = features.iter().map(|f| f.as_slice()).collect();
                row.extend(fc_forward(&model.fusion_input(&refs, &bypass), &model.fusion)?);
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    Ok(RawEstimate {
        image: Image::new(w, h, 3, rows.concat())?,
        spec,
        gap: spec.coherence_gap(),
        passes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::InitScheme;
    use crate::topology::build_model;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn textured(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * h).map(|_| rng.random::<f32>()).collect();
        Image::new(w, h, 1, data).unwrap()
    }

    fn params() -> DecomposeParams {
        DecomposeParams { window: 5, epsilon: 1e-4 }
    }

    fn max_diff(a: &Image, b: &Image) -> f32 {
        a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
    }

    #[test]
    fn bias_only_model_is_constant_on_both_paths() {
        let spec = TopologySpec::new(1, 2, 1, true).unwrap();
        let mut m = Model::<f32>::zeros(spec, 5).unwrap();
        m.fusion.bias = vec![0.25, 0.5, 0.75];
        let nir = textured(12, 10, 1);
        for est in [
            colorize_raw(&m, &nir, params()).unwrap(),
            colorize_raw_fast(&m, &nir, params()).unwrap(),
        ] {
            assert_eq!((est.image.width(), est.image.height()), (12, 10));
            for px in est.image.data().chunks(3) {
                assert_eq!(px, &[0.25, 0.5, 0.75]);
            }
        }
    }

    #[test]
    fn small_multiscale_paths_agree() {
        let spec = TopologySpec::new(2, 4, 1, true).unwrap();
        let m: Model<f32> = build_model(spec, 5, InitScheme::He, 3).unwrap();
        let nir = textured(22, 14, 2);
        let a = colorize_raw(&m, &nir, params()).unwrap();
        let b = colorize_raw_fast(&m, &nir, params()).unwrap();
        assert_eq!(b.passes, 4);
        assert_eq!(b.gap, 2);
        assert!(max_diff(&a.image, &b.image) < 1e-5);
    }

    #[test]
    fn pass_count_is_gap_squared() {
        let spec = TopologySpec {
            first_filters: 1,
            ..TopologySpec::new(1, 4, 3, false).unwrap()
        };
        let m: Model<f32> = build_model(spec, 5, InitScheme::He, 3).unwrap();
        let est = colorize_raw_fast(&m, &textured(16, 16, 4), params()).unwrap();
        assert_eq!(est.gap, 8);
        assert_eq!(est.passes, 64);
    }

    #[test]
    fn shift_by_gap_translates_interior() {
        let spec = TopologySpec {
            first_filters: 4,
            ..TopologySpec::new(1, 4, 1, false).unwrap()
        };
        let m: Model<f32> = build_model(spec, 5, InitScheme::He, 9).unwrap();
        let n = 64;
        let base = textured(n, n, 7);
        let g = spec.coherence_gap();
        let shifted = Image::from_fn_gray(n, n, |x, y| base.get((x + n - g) % n, y, 0));
        let a = colorize_raw_fast(&m, &base, params()).unwrap().image;
        let b = colorize_raw_fast(&m, &shifted, params()).unwrap().image;
        let margin = spec.roi() + 5;
        for y in margin..n - margin {
            for x in margin..n - margin - g {
                for c in 0..3 {
                    assert!((a.get(x, y, c) - b.get(x + g, y, c)).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let spec = TopologySpec::new(2, 2, 1, false).unwrap();
        let m = Model::<f32>::zeros(spec, 5).unwrap();
        assert!(colorize_raw_fast(&m, &textured(11, 10, 1), params()).is_err());
        let rgb = Image::zeros(10, 10, 3).unwrap();
        assert!(colorize_raw(&m, &rgb, params()).is_err());
        let wrong_window = DecomposeParams { window: 7, epsilon: 1e-4 };
        assert!(colorize_raw(&m, &textured(10, 10, 1), wrong_window).is_err());
    }
}
