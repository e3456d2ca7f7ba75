//! Gaussian and Laplacian pyramids over [`GrayPlane`]s.
//!
//! Reduction uses the separable binomial kernel `[1, 4, 6, 4, 1] / 16` with
//! replicated edges followed by keeping every second sample from index 0, so
//! a `w x h` level reduces to `ceil(w/2) x ceil(h/2)`. Expansion is the
//! matching interpolation: the source is edge-replicated, zero-interleaved
//! and filtered with the same kernel scaled by 2 per axis. Both preserve
//! constants exactly.

use thiserror::Error;

use crate::frame::GrayPlane;

const KERNEL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Largest supported number of reduction steps.
pub const MAX_LEVELS: usize = 6;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PyramidError {
    #[error("plane {width}x{height} is too small to reduce (needs at least 2x2)")]
    TooSmall { width: usize, height: usize },
    #[error("cannot expand {src_w}x{src_h} to {dst_w}x{dst_h}: target does not halve to the source")]
    DimensionMismatch {
        src_w: usize,
        src_h: usize,
        dst_w: usize,
        dst_h: usize,
    },
    #[error("{levels} levels requested for a {width}x{height} plane")]
    TooManyLevels { levels: usize, width: usize, height: usize },
    #[error("band {index} is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    Malformed {
        index: usize,
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
}

fn half(n: usize) -> usize {
    n.div_ceil(2)
}

/// Blurs with the binomial kernel and decimates by two on both axes.
pub fn blur_downsample(plane: &GrayPlane) -> Result<GrayPlane, PyramidError> {
    let (w, h) = plane.dims();
    if w < 2 || h < 2 {
        return Err(PyramidError::TooSmall { width: w, height: h });
    }
    let (ow, oh) = (half(w), half(h));
    let src = plane.values();

    // Horizontal pass, only at the even columns that survive decimation.
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for ox in 0..ow {
            let cx = (ox * 2) as isize;
            let mut acc = 0.0;
            for (k, &kv) in KERNEL.iter().enumerate() {
                let sx = (cx + k as isize - 2).clamp(0, w as isize - 1) as usize;
                acc += kv * row[sx];
            }
            tmp[y * ow + ox] = acc;
        }
    }

    let mut out = vec![0.0; ow * oh];
    for oy in 0..oh {
        let cy = (oy * 2) as isize;
        for (k, &kv) in KERNEL.iter().enumerate() {
            let sy = (cy + k as isize - 2).clamp(0, h as isize - 1) as usize;
            let row = &tmp[sy * ow..(sy + 1) * ow];
            for (o, &v) in out[oy * ow..(oy + 1) * ow].iter_mut().zip(row) {
                *o += kv * v;
            }
        }
    }
    Ok(GrayPlane::from_parts(ow, oh, out))
}

/// Expands `plane` to `target_w x target_h`, which must reduce back to the
/// plane's own size.
pub fn upsample(plane: &GrayPlane, target_w: usize, target_h: usize) -> Result<GrayPlane, PyramidError> {
    let (w, h) = plane.dims();
    if target_w == 0 || target_h == 0 || half(target_w) != w || half(target_h) != h {
        return Err(PyramidError::DimensionMismatch {
            src_w: w,
            src_h: h,
            dst_w: target_w,
            dst_h: target_h,
        });
    }
    let src = plane.values();

    // Output sample t receives source j with weight 2 * KERNEL[t - 2j + 2]
    // for |t - 2j| <= 2. Even t: j = t/2 - 1, t/2, t/2 + 1 with taps
    // 1, 6, 1 (/8). Odd t: j = (t-1)/2, (t+1)/2 with taps 4, 4 (/8).
    // Out-of-range j replicate the nearest edge sample.
    let taps = |t: usize, len: usize| -> ([usize; 3], [f64; 3]) {
        let last = len as isize - 1;
        let c = |j: isize| j.clamp(0, last) as usize;
        let t = t as isize;
        if t % 2 == 0 {
            let j = t / 2;
            (
                [c(j - 1), c(j), c(j + 1)],
                [2.0 * KERNEL[0], 2.0 * KERNEL[2], 2.0 * KERNEL[4]],
            )
        } else {
            let j = (t - 1) / 2;
            ([c(j), c(j + 1), c(j)], [2.0 * KERNEL[1], 2.0 * KERNEL[3], 0.0])
        }
    };

    let mut tmp = vec![0.0; target_w * h];
    let col_taps: Vec<_> = (0..target_w).map(|t| taps(t, w)).collect();
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        let out = &mut tmp[y * target_w..(y + 1) * target_w];
        for (o, (idx, wts)) in out.iter_mut().zip(&col_taps) {
            *o = wts[0] * row[idx[0]] + wts[1] * row[idx[1]] + wts[2] * row[idx[2]];
        }
    }

    let mut out = vec![0.0; target_w * target_h];
    for ty in 0..target_h {
        let (idx, wts) = taps(ty, h);
        let dst = &mut out[ty * target_w..(ty + 1) * target_w];
        for (k, &wt) in wts.iter().enumerate() {
            if wt == 0.0 {
                continue;
            }
            let row = &tmp[idx[k] * target_w..(idx[k] + 1) * target_w];
            for (o, &v) in dst.iter_mut().zip(row) {
                *o += wt * v;
            }
        }
    }
    Ok(GrayPlane::from_parts(target_w, target_h, out))
}

/// Successive reductions of a plane; level 0 is the input.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPyramid {
    levels: Vec<GrayPlane>,
}

impl GaussianPyramid {
    /// Builds `levels` reductions (so `levels + 1` planes). The coarsest
    /// plane must be at least 2x2.
    pub fn build(plane: &GrayPlane, levels: usize) -> Result<Self, PyramidError> {
        check_levels(plane, levels)?;
        let mut out = Vec::with_capacity(levels + 1);
        out.push(plane.clone());
        for _ in 0..levels {
            let next = blur_downsample(out.last().expect("non-empty"))?;
            out.push(next);
        }
        Ok(Self { levels: out })
    }

    pub fn levels(&self) -> &[GrayPlane] {
        &self.levels
    }

    pub fn level(&self, k: usize) -> &GrayPlane {
        &self.levels[k]
    }

    pub fn coarsest(&self) -> &GrayPlane {
        self.levels.last().expect("at least one level")
    }

    pub fn into_levels(self) -> Vec<GrayPlane> {
        self.levels
    }
}

fn check_levels(plane: &GrayPlane, levels: usize) -> Result<(), PyramidError> {
    let (mut w, mut h) = plane.dims();
    let err = PyramidError::TooManyLevels {
        levels,
        width: w,
        height: h,
    };
    if levels > MAX_LEVELS {
        return Err(err);
    }
    for _ in 0..levels {
        if w < 2 || h < 2 {
            return Err(err);
        }
        w = half(w);
        h = half(h);
    }
    if levels > 0 && (w < 2 || h < 2) {
        return Err(err);
    }
    Ok(())
}

/// Band-pass difference images plus a low-pass residual.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianPyramid {
    bands: Vec<GrayPlane>,
    residual: GrayPlane,
}

impl LaplacianPyramid {
    /// Assembles a pyramid from parts, checking that every band halves into
    /// the next and the last band halves into the residual.
    pub fn from_parts(bands: Vec<GrayPlane>, residual: GrayPlane) -> Result<Self, PyramidError> {
        let mut expect: Option<(usize, usize)> = None;
        for (i, b) in bands.iter().chain(std::iter::once(&residual)).enumerate() {
            if let Some((ew, eh)) = expect {
                if b.dims() != (ew, eh) {
                    return Err(PyramidError::Malformed {
                        index: i,
                        got_w: b.width(),
                        got_h: b.height(),
                        want_w: ew,
                        want_h: eh,
                    });
                }
            }
            expect = Some((half(b.width()), half(b.height())));
        }
        Ok(Self { bands, residual })
    }

    pub fn bands(&self) -> &[GrayPlane] {
        &self.bands
    }

    pub fn residual(&self) -> &GrayPlane {
        &self.residual
    }

    pub fn levels(&self) -> usize {
        self.bands.len()
    }

    pub fn into_parts(self) -> (Vec<GrayPlane>, GrayPlane) {
        (self.bands, self.residual)
    }
}

/// `bands[k] = gaussian[k] - upsample(gaussian[k + 1])`, residual is the
/// coarsest gaussian level.
pub fn build_laplacian(plane: &GrayPlane, levels: usize) -> Result<LaplacianPyramid, PyramidError> {
    if levels == 0 {
        return Err(PyramidError::TooManyLevels {
            levels,
            width: plane.width(),
            height: plane.height(),
        });
    }
    let mut gauss = GaussianPyramid::build(plane, levels)?.into_levels();
    let residual = gauss.pop().expect("levels >= 1");
    let mut bands = Vec::with_capacity(levels);
    for (k, finer) in gauss.iter().enumerate() {
        let coarser = gauss.get(k + 1).unwrap_or(&residual);
        let up = upsample(coarser, finer.width(), finer.height())?;
        bands.push(finer.sub(&up));
    }
    Ok(LaplacianPyramid { bands, residual })
}

/// Folds from the residual upward: `acc = band_k + upsample(acc)`.
pub fn collapse_laplacian(pyr: &LaplacianPyramid) -> GrayPlane {
    let mut acc = pyr.residual.clone();
    for band in pyr.bands.iter().rev() {
        let up = upsample(&acc, band.width(), band.height()).expect("pyramid structure validated on construction");
        acc = band.add(&up);
    }
    acc
}
