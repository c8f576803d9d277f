//! Deterministic image operations applied before depth inference: specular
//! highlight masking and harmonic inpainting, channel statistics transfer,
//! tiled histogram matching, brightness attenuation, and the step count of
//! a truncated diffusion inversion.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Planar multi-channel image with values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFrame {
    channels: usize,
    width: usize,
    height: usize,
    /// `data[c * width * height + row * width + col]`
    data: Vec<f64>,
    mask: Option<Grid<bool>>,
}

impl ImageFrame {
    pub fn new(channels: usize, width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if data.len() != channels * width * height {
            return Err(Error::invalid("image data length does not match dimensions"));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("image"));
        }
        Ok(Self {
            channels,
            width,
            height,
            data,
            mask: None,
        })
    }

    pub fn from_gray(grid: &Grid<f64>) -> Result<Self> {
        Self::new(1, grid.width(), grid.height(), grid.as_slice().to_vec())
    }

    pub fn filled(channels: usize, width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(channels, width, height, vec![value; channels * width * height])
    }

    pub fn with_mask(mut self, mask: Grid<bool>) -> Result<Self> {
        if mask.width() != self.width || mask.height() != self.height {
            return Err(Error::invalid("mask dimensions differ from image"));
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn mask(&self) -> Option<&Grid<bool>> {
        self.mask.as_ref()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn plane_len(&self) -> usize {
        self.width * self.height
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, col: usize, row: usize) -> f64 {
        self.data[c * self.plane_len() + row * self.width + col]
    }

    /// Channel mean per pixel.
    pub fn luminance(&self) -> Vec<f64> {
        if self.channels == 1 {
            return self.data.clone();
        }
        let n = self.plane_len();
        let c = self.channels as f64;
        (0..n)
            .map(|i| (0..self.channels).map(|ch| self.data[ch * n + i]).sum::<f64>() / c)
            .collect()
    }

    fn same_dims(&self, other: &ImageFrame) -> bool {
        self.width == other.width && self.height == other.height
    }
}

pub const DEFAULT_PATCH: usize = 16;
pub const DEFAULT_SIGMA_K: f64 = 3.0;

/// Flags pixels brighter than `mean + sigma_k * std` of their block.
///
/// The image is cut into non-overlapping `patch x patch` blocks anchored at
/// the top-left corner (blocks on the right and bottom edges may be
/// smaller). Statistics use the channel-mean luminance and the population
/// standard deviation.
pub fn specular_mask(img: &ImageFrame, patch: usize, sigma_k: f64) -> Result<Grid<bool>> {
    if patch < 2 {
        return Err(Error::invalid("specular patch size must be at least 2"));
    }
    if !sigma_k.is_finite() {
        return Err(Error::NonFinite("sigma_k"));
    }
    let lum = img.luminance();
    let (w, h) = (img.width, img.height);
    let mut mask = Grid::filled(w, h, false);
    for by in (0..h).step_by(patch) {
        for bx in (0..w).step_by(patch) {
            let rows = by..(by + patch).min(h);
            let cols = bx..(bx + patch).min(w);
            let n = (rows.len() * cols.len()) as f64;
            let mut sum = 0.0;
            for r in rows.clone() {
                for c in cols.clone() {
                    sum += lum[r * w + c];
                }
            }
            let mean = sum / n;
            let mut ss = 0.0;
            for r in rows.clone() {
                for c in cols.clone() {
                    let d = lum[r * w + c] - mean;
                    ss += d * d;
                }
            }
            let std = (ss / n).sqrt();
            if std == 0.0 {
                continue;
            }
            let threshold = mean + sigma_k * std;
            for r in rows.clone() {
                for c in cols.clone() {
                    if lum[r * w + c] > threshold {
                        mask.set(c, r, true);
                    }
                }
            }
        }
    }
    Ok(mask)
}

pub const INPAINT_TOLERANCE: f64 = 1e-6;
const INPAINT_MAX_SWEEPS: usize = 200_000;

/// Replaces masked pixels with the discrete harmonic interpolant of the
/// surrounding unmasked values, channel by channel.
///
/// The 5-point Laplace equation is solved with successive over-relaxation
/// until the largest update residual drops below 1e-6. Image borders are
/// treated as reflecting: a pixel averages only its in-image neighbors.
pub fn inpaint_masked(img: &ImageFrame, mask: &Grid<bool>) -> Result<ImageFrame> {
    if mask.width() != img.width || mask.height() != img.height {
        return Err(Error::invalid("mask dimensions differ from image"));
    }
    let masked: Vec<usize> = (0..mask.len()).filter(|&i| mask.as_slice()[i]).collect();
    if masked.is_empty() {
        return Ok(img.clone());
    }
    if masked.len() == mask.len() {
        return Err(Error::invalid("cannot inpaint a fully masked image"));
    }
    let (w, h) = (img.width, img.height);
    let m = mask.as_slice();
    let neighbors = |i: usize| {
        let (c, r) = (i % w, i / w);
        let mut out = [usize::MAX; 4];
        if c > 0 {
            out[0] = i - 1;
        }
        if c + 1 < w {
            out[1] = i + 1;
        }
        if r > 0 {
            out[2] = i - w;
        }
        if r + 1 < h {
            out[3] = i + w;
        }
        out
    };
    // Unmasked pixels touching the hole bound the solution.
    let boundary: Vec<usize> = (0..m.len())
        .filter(|&i| !m[i] && neighbors(i).iter().any(|&j| j != usize::MAX && m[j]))
        .collect();
    let omega = 2.0 / (1.0 + (std::f64::consts::PI / w.max(h) as f64).sin());

    let mut out = img.clone();
    out.data
        .par_chunks_mut(w * h)
        .try_for_each(|plane| -> Result<()> {
            let (lo, hi) = boundary
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| (lo.min(plane[i]), hi.max(plane[i])));
            let start = boundary.iter().map(|&i| plane[i]).sum::<f64>() / boundary.len() as f64;
            for &i in &masked {
                plane[i] = start;
            }
            let mut converged = false;
            for _ in 0..INPAINT_MAX_SWEEPS {
                let mut max_residual = 0.0f64;
                for &i in &masked {
                    let mut sum = 0.0;
                    let mut k = 0.0;
                    for j in neighbors(i) {
                        if j != usize::MAX {
                            sum += plane[j];
                            k += 1.0;
                        }
                    }
                    let residual = sum / k - plane[i];
                    max_residual = max_residual.max(residual.abs());
                    plane[i] += omega * residual;
                }
                if max_residual < INPAINT_TOLERANCE {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::Numerical("harmonic inpainting did not converge".into()));
            }
            for &i in &masked {
                plane[i] = plane[i].clamp(lo, hi);
            }
            Ok(())
        })?;
    Ok(out)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Adaptive instance normalization: gives every channel of `content` the
/// mean and population standard deviation of the matching `style` channel.
/// A constant content channel becomes the style mean.
pub fn adain(content: &ImageFrame, style: &ImageFrame) -> Result<ImageFrame> {
    if content.channels != style.channels {
        return Err(Error::invalid("content and style channel counts differ"));
    }
    let mut out = content.clone();
    for c in 0..content.channels {
        let (mc, sc) = mean_std(content.channel(c));
        let (ms, ss) = mean_std(style.channel(c));
        for x in out.channel_mut(c) {
            *x = if sc == 0.0 { ms } else { ss * (*x - mc) / sc + ms };
        }
    }
    Ok(out)
}

pub const HIST_BINS: usize = 256;
pub const DEFAULT_TILE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistMatchConfig {
    pub tile: usize,
    /// Interpolate bilinearly between the mappings of the four nearest tile
    /// centers instead of using each pixel's own tile mapping.
    pub blend: bool,
}

impl Default for HistMatchConfig {
    fn default() -> Self {
        Self {
            tile: DEFAULT_TILE,
            blend: true,
        }
    }
}

fn quantize(x: f64) -> usize {
    (x.clamp(0.0, 1.0) * (HIST_BINS - 1) as f64).round() as usize
}

/// Inverse of the empirical CDF with Hazen plotting positions
/// (`k`-th of `n` sorted samples sits at probability `(k + 0.5) / n`).
fn hazen_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let pos = (p * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let t = pos - lo as f64;
    sorted[lo] + t * (sorted[hi] - sorted[lo])
}

/// Bin-to-value lookup table taking `source` onto the distribution of
/// `reference`. Occupied bins use mid-rank CDF values, so a bin maps inside
/// the range of reference samples of the same rank. Empty bins map to their
/// own center clamped between the reference values on either side of that
/// rank, which keeps the table monotone and makes it the identity (to
/// within a bin) when `reference` equals `source`.
fn quantile_map(source: &[f64], reference: &mut [f64]) -> [f64; HIST_BINS] {
    let mut hist = [0usize; HIST_BINS];
    for &x in source {
        hist[quantize(x)] += 1;
    }
    reference.sort_by(f64::total_cmp);
    let n = source.len() as f64;
    let mut below = 0usize;
    let mut map = [0.0; HIST_BINS];
    for (b, &count) in hist.iter().enumerate() {
        map[b] = if count > 0 {
            hazen_quantile(reference, (below as f64 + count as f64 / 2.0) / n)
        } else {
            let center = b as f64 / (HIST_BINS - 1) as f64;
            let lo = if below > 0 {
                hazen_quantile(reference, (below as f64 - 0.5) / n)
            } else {
                f64::NEG_INFINITY
            };
            let hi = if below < source.len() {
                hazen_quantile(reference, (below as f64 + 0.5) / n)
            } else {
                f64::INFINITY
            };
            center.clamp(lo, hi)
        };
        below += count;
    }
    map
}

fn tile_ranges(len: usize, tile: usize) -> Vec<(usize, usize)> {
    (0..len).step_by(tile).map(|s| (s, (s + tile).min(len))).collect()
}

/// Tile-wise histogram matching of `img` onto the co-located tiles of
/// `reference`, per channel.
pub fn local_hist_match(img: &ImageFrame, reference: &ImageFrame, config: &HistMatchConfig) -> Result<ImageFrame> {
    if config.tile < 8 {
        return Err(Error::invalid("histogram tile must be at least 8 px"));
    }
    if !img.same_dims(reference) || img.channels != reference.channels {
        return Err(Error::invalid("image and reference dimensions differ"));
    }
    let (w, h) = (img.width, img.height);
    let xs = tile_ranges(w, config.tile);
    let ys = tile_ranges(h, config.tile);
    let mut out = img.clone();
    for c in 0..img.channels {
        let src = img.channel(c);
        let refc = reference.channel(c);
        let maps: Vec<Vec<[f64; HIST_BINS]>> = ys
            .par_iter()
            .map(|&(y0, y1)| {
                xs.iter()
                    .map(|&(x0, x1)| {
                        let mut s = Vec::with_capacity((y1 - y0) * (x1 - x0));
                        let mut r = Vec::with_capacity(s.capacity());
                        for row in y0..y1 {
                            s.extend_from_slice(&src[row * w + x0..row * w + x1]);
                            r.extend_from_slice(&refc[row * w + x0..row * w + x1]);
                        }
                        quantile_map(&s, &mut r)
                    })
                    .collect()
            })
            .collect();
        let centers = |ranges: &[(usize, usize)]| -> Vec<f64> {
            ranges.iter().map(|&(a, b)| (a + b - 1) as f64 / 2.0).collect()
        };
        let cx = centers(&xs);
        let cy = centers(&ys);
        // Neighboring tile indices and the weight of the second one.
        let locate = |centers: &[f64], p: f64| -> (usize, usize, f64) {
            if p <= centers[0] {
                return (0, 0, 0.0);
            }
            let last = centers.len() - 1;
            if p >= centers[last] {
                return (last, last, 0.0);
            }
            let k = centers.partition_point(|&m| m <= p) - 1;
            (k, k + 1, (p - centers[k]) / (centers[k + 1] - centers[k]))
        };
        let plane = out.channel_mut(c);
        for row in 0..h {
            let own_y = row / config.tile;
            let (ya, yb, ty) = locate(&cy, row as f64);
            for col in 0..w {
                let q = quantize(src[row * w + col]);
                plane[row * w + col] = if config.blend {
                    let (xa, xb, tx) = locate(&cx, col as f64);
                    let top = maps[ya][xa][q] * (1.0 - tx) + maps[ya][xb][q] * tx;
                    let bottom = maps[yb][xa][q] * (1.0 - tx) + maps[yb][xb][q] * tx;
                    top * (1.0 - ty) + bottom * ty
                } else {
                    maps[own_y][col / config.tile][q]
                };
            }
        }
    }
    Ok(out)
}

/// Scales intensities by `factor` in `(0, 1]` and clamps to `[0, 1]`.
pub fn attenuate(img: &ImageFrame, factor: f64) -> Result<ImageFrame> {
    if !(factor > 0.0 && factor <= 1.0) {
        return Err(Error::invalid(format!("attenuation factor {factor} outside (0, 1]")));
    }
    let mut out = img.clone();
    for x in &mut out.data {
        *x = (*x * factor).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Number of steps kept when an inversion of `total` steps is truncated at
/// fraction `alpha`: `floor(alpha * total)`, at least 1.
pub fn truncated_steps(total: usize, alpha: f64) -> Result<usize> {
    if total < 1 {
        return Err(Error::invalid("total step count must be at least 1"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha {alpha} outside (0, 1)")));
    }
    // The epsilon keeps products like 0.6 * 50 = 29.999... at 30.
    let steps = (alpha * total as f64 + 1e-9).floor() as usize;
    Ok(steps.max(1))
}

/// Style source for [`preprocess_frame`].
#[derive(Debug, Clone, Copy)]
pub enum StyleReference<'a> {
    Adain(&'a ImageFrame),
    HistMatch(&'a ImageFrame, HistMatchConfig),
}

/// Which steps [`preprocess_frame`] applies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocessSteps {
    /// Compute the specular mask with this `(patch, sigma_k)`.
    pub specular: Option<(usize, f64)>,
    /// Fill the specular mask by harmonic inpainting. Computes the mask
    /// with default parameters if `specular` is unset.
    pub inpaint: bool,
    pub attenuation: Option<f64>,
}

/// Specular masking, inpainting, style matching and attenuation, in that
/// order. Returns the image and the specular mask if one was computed.
pub fn preprocess_frame(
    img: &ImageFrame,
    steps: &PreprocessSteps,
    style: Option<StyleReference<'_>>,
) -> Result<(ImageFrame, Option<Grid<bool>>)> {
    let mask = match (steps.specular, steps.inpaint) {
        (Some((patch, k)), _) => Some(specular_mask(img, patch, k)?),
        (None, true) => Some(specular_mask(img, DEFAULT_PATCH, DEFAULT_SIGMA_K)?),
        (None, false) => None,
    };
    let mut out = match (&mask, steps.inpaint) {
        (Some(m), true) if m.as_slice().iter().any(|&x| x) => inpaint_masked(img, m)?,
        _ => img.clone(),
    };
    out = match style {
        Some(StyleReference::Adain(s)) => adain(&out, s)?,
        Some(StyleReference::HistMatch(r, cfg)) => local_hist_match(&out, r, &cfg)?,
        None => out,
    };
    if let Some(f) = steps.attenuation {
        out = attenuate(&out, f)?;
    }
    Ok((out, mask))
}
