//! Trajectory-global scale/shift alignment and depth error metrics.
//!
//! A prediction sequence is aligned to ground truth with a single affine map
//! `alpha * x_hat + beta` fitted by least squares over every jointly valid
//! pixel of the whole sequence, either on depth or on disparity (`1/depth`).
//! Metrics follow the usual monocular-depth conventions:
//!
//! ```text
//! AbsRel = mean(|d' - d| / d)
//! SqRel  = mean((d' - d)^2 / d)
//! RMSE   = sqrt(mean((d' - d)^2))
//! delta1 = fraction of pixels with max(d'/d, d/d') < 1.25   (strict)
//! ```
//!
//! Confidence intervals come from percentile bootstrap over frames (or
//! pixels, see [`ResampleUnit`]).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::scalar::{CompensatedSum, Real};

pub const DELTA1_THRESHOLD: f64 = 1.25;

/// Per-pixel depth (mm) with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthFrame<T> {
    values: Grid<T>,
    mask: Grid<bool>,
}

impl<T: Real> DepthFrame<T> {
    /// Masked-in values must be finite and positive.
    pub fn new(values: Grid<T>, mask: Grid<bool>) -> Result<Self> {
        if !values.same_shape(&mask) {
            return Err(Error::invalid("depth values and mask dimensions differ"));
        }
        let bad = values
            .as_slice()
            .iter()
            .zip(mask.as_slice())
            .any(|(d, &m)| m && !(d.is_finite() && *d > T::zero()));
        if bad {
            return Err(Error::invalid("masked-in depth must be finite and positive"));
        }
        Ok(Self { values, mask })
    }

    /// Builds the mask from the values: valid where finite and positive.
    pub fn from_values(values: Grid<T>) -> Self {
        let mask = values.map(|d| d.is_finite() && *d > T::zero());
        Self { values, mask }
    }

    pub fn width(&self) -> usize {
        self.values.width()
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }

    pub fn values(&self) -> &Grid<T> {
        &self.values
    }

    pub fn mask(&self) -> &Grid<bool> {
        &self.mask
    }

    /// Depth at `(col, row)` if the pixel is valid.
    #[inline]
    pub fn depth(&self, col: usize, row: usize) -> Option<T> {
        let i = self.values.index_of(col, row);
        self.mask.as_slice()[i].then(|| self.values.as_slice()[i])
    }

    pub fn valid_count(&self) -> usize {
        self.mask.as_slice().iter().filter(|&&m| m).count()
    }

    pub fn cast<U: Real>(&self) -> DepthFrame<U> {
        DepthFrame {
            values: self.values.map(|x| U::lit(x.as_f64())),
            mask: self.mask.clone(),
        }
    }

    fn joint_pixels<'a>(&'a self, other: &'a DepthFrame<T>) -> impl Iterator<Item = (T, T)> + 'a {
        self.values
            .as_slice()
            .iter()
            .zip(self.mask.as_slice())
            .zip(other.values.as_slice().iter().zip(other.mask.as_slice()))
            .filter_map(|((&a, &ma), (&b, &mb))| (ma && mb).then_some((a, b)))
    }
}

/// Nonempty sequence of equally sized depth frames.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthSequence<T> {
    frames: Vec<DepthFrame<T>>,
}

impl<T: Real> DepthSequence<T> {
    pub fn new(frames: Vec<DepthFrame<T>>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::invalid("depth sequence is empty"))?;
        let (w, h) = (first.width(), first.height());
        if frames.iter().any(|f| f.width() != w || f.height() != h) {
            return Err(Error::invalid("depth frames have differing dimensions"));
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[DepthFrame<T>] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn cast<U: Real>(&self) -> DepthSequence<U> {
        DepthSequence {
            frames: self.frames.iter().map(DepthFrame::cast).collect(),
        }
    }

    fn check_same_shape(&self, other: &DepthSequence<T>) -> Result<()> {
        if self.len() != other.len()
            || self.width() != other.width()
            || self.height() != other.height()
        {
            return Err(Error::invalid(format!(
                "sequence shapes differ: {}x{}x{} vs {}x{}x{}",
                self.len(),
                self.height(),
                self.width(),
                other.len(),
                other.height(),
                other.width()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignmentDomain {
    Depth,
    Disparity,
}

impl std::str::FromStr for AlignmentDomain {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "depth" => Ok(Self::Depth),
            "disparity" => Ok(Self::Disparity),
            other => Err(Error::invalid(format!("unknown alignment domain '{other}'"))),
        }
    }
}

impl AlignmentDomain {
    #[inline]
    fn to_domain(self, depth: f64) -> f64 {
        match self {
            Self::Depth => depth,
            Self::Disparity => 1.0 / depth,
        }
    }
}

/// Affine alignment `alpha * x_hat + beta` in the chosen domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentParams {
    pub alpha: f64,
    pub beta: f64,
    pub domain: AlignmentDomain,
    /// Set when the prediction had zero variance and only a shift was fit.
    pub degenerate: bool,
    pub n_pixels: u64,
}

impl AlignmentParams {
    pub fn identity(domain: AlignmentDomain) -> Self {
        Self {
            alpha: 1.0,
            beta: 0.0,
            domain,
            degenerate: false,
            n_pixels: 0,
        }
    }

    /// Least-squares objective `sum (alpha x_hat + beta - x)^2` for these
    /// parameters.
    pub fn objective<T: Real>(&self, pred: &DepthSequence<T>, gt: &DepthSequence<T>) -> Result<f64> {
        pred.check_same_shape(gt)?;
        let dom = self.domain;
        let mut acc = CompensatedSum::new();
        for (p, g) in pred.frames.iter().zip(&gt.frames) {
            for (a, b) in p.joint_pixels(g) {
                let r = self.alpha * dom.to_domain(a.as_f64()) + self.beta - dom.to_domain(b.as_f64());
                acc.add(r * r);
            }
        }
        Ok(acc.value())
    }
}

#[derive(Default, Clone, Copy)]
struct MomentSums {
    n: u64,
    a: CompensatedSum,
    b: CompensatedSum,
}

#[derive(Default, Clone, Copy)]
struct CrossSums {
    ab: CompensatedSum,
    aa: CompensatedSum,
}

/// Fits the single trajectory-wide `(alpha, beta)` minimizing
/// `sum_p (alpha * x_hat(p) + beta - x(p))^2` over all jointly valid pixels,
/// with `x = depth` or `x = 1/depth`.
///
/// When the prediction is constant over the joint mask the problem is rank
/// deficient; `alpha = 1` and `beta = mean(x - x_hat)` are returned with
/// `degenerate = true`.
pub fn align_scale_shift<T: Real>(
    pred: &DepthSequence<T>,
    gt: &DepthSequence<T>,
    domain: AlignmentDomain,
) -> Result<AlignmentParams> {
    pred.check_same_shape(gt)?;

    // Two passes (means, then centered moments) with compensated sums; per
    // frame partials are reduced in frame order so the result is bit-stable.
    let moments: Vec<MomentSums> = pred
        .frames
        .par_iter()
        .zip(&gt.frames)
        .map(|(p, g)| {
            let mut m = MomentSums::default();
            for (a, b) in p.joint_pixels(g) {
                m.n += 1;
                m.a.add(domain.to_domain(a.as_f64()));
                m.b.add(domain.to_domain(b.as_f64()));
            }
            m
        })
        .collect();
    let mut total = MomentSums::default();
    for m in &moments {
        total.n += m.n;
        total.a.merge(&m.a);
        total.b.merge(&m.b);
    }
    if total.n == 0 {
        return Err(Error::EmptyMask);
    }
    let n = total.n as f64;
    let mean_a = total.a.value() / n;
    let mean_b = total.b.value() / n;

    let cross: Vec<CrossSums> = pred
        .frames
        .par_iter()
        .zip(&gt.frames)
        .map(|(p, g)| {
            let mut c = CrossSums::default();
            for (a, b) in p.joint_pixels(g) {
                let da = domain.to_domain(a.as_f64()) - mean_a;
                let db = domain.to_domain(b.as_f64()) - mean_b;
                c.ab.add(da * db);
                c.aa.add(da * da);
            }
            c
        })
        .collect();
    let mut sums = CrossSums::default();
    for c in &cross {
        sums.ab.merge(&c.ab);
        sums.aa.merge(&c.aa);
    }
    let s_ab = sums.ab.value();
    let s_aa = sums.aa.value();

    let var_a = s_aa / n;
    if !(var_a > 1e-24 * mean_a * mean_a) || var_a == 0.0 {
        log::warn!("prediction has no variance over the joint mask; fitting shift only");
        return Ok(AlignmentParams {
            alpha: 1.0,
            beta: mean_b - mean_a,
            domain,
            degenerate: true,
            n_pixels: total.n,
        });
    }
    let alpha = s_ab / s_aa;
    let beta = mean_b - alpha * mean_a;
    if alpha <= 0.0 {
        log::warn!("fitted scale is non-positive (alpha = {alpha}); alignment inverts depth order");
    }
    Ok(AlignmentParams {
        alpha,
        beta,
        domain,
        degenerate: false,
        n_pixels: total.n,
    })
}

/// Output of [`apply_alignment`].
#[derive(Debug, Clone)]
pub struct AlignedSequence<T> {
    pub depth: DepthSequence<T>,
    /// Pixels that were valid in the prediction but whose aligned depth is
    /// not positive (they are masked out).
    pub n_nonpositive: u64,
}

/// Applies `params` and converts back to depth.
///
/// Depth domain: `d' = alpha d_hat + beta`. Disparity domain:
/// `d' = 1 / (alpha / d_hat + beta)`. Non-positive results are masked out.
pub fn apply_alignment<T: Real>(pred: &DepthSequence<T>, params: &AlignmentParams) -> Result<AlignedSequence<T>> {
    if !(params.alpha.is_finite() && params.beta.is_finite()) {
        return Err(Error::NonFinite("alignment parameters"));
    }
    let mut n_nonpositive = 0;
    let mut frames = Vec::with_capacity(pred.len());
    for f in &pred.frames {
        let mut values = f.values.clone();
        let mut mask = f.mask.clone();
        for (d, m) in values.as_mut_slice().iter_mut().zip(mask.as_mut_slice()) {
            if !*m {
                continue;
            }
            let x = d.as_f64();
            let aligned = match params.domain {
                AlignmentDomain::Depth => params.alpha * x + params.beta,
                AlignmentDomain::Disparity => {
                    let disp = params.alpha / x + params.beta;
                    if disp > 0.0 {
                        1.0 / disp
                    } else {
                        -1.0
                    }
                }
            };
            let cast = T::lit(aligned);
            if aligned > 0.0 && aligned.is_finite() && cast > T::zero() && cast.is_finite() {
                *d = cast;
            } else {
                *d = T::zero();
                *m = false;
                n_nonpositive += 1;
            }
        }
        frames.push(DepthFrame { values, mask });
    }
    Ok(AlignedSequence {
        depth: DepthSequence { frames },
        n_nonpositive,
    })
}

/// A metric value with its bootstrap interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Metric {
    fn point(value: f64) -> Self {
        Self {
            value,
            ci_low: value,
            ci_high: value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub delta1: Metric,
    pub abs_rel: Metric,
    pub sq_rel: Metric,
    pub rmse_mm: Metric,
    pub n_pixels: u64,
    pub n_frames: usize,
    /// Zero for point estimates.
    pub n_resamples: usize,
    /// The interval is not informative (for example a single frame).
    pub degenerate_ci: bool,
}

/// Sufficient statistics of the four metrics over a set of pixels.
#[derive(Debug, Default, Clone, Copy)]
struct ErrorSums {
    n: u64,
    hits: u64,
    abs_rel: CompensatedSum,
    sq_rel: CompensatedSum,
    sq_err: CompensatedSum,
}

impl ErrorSums {
    #[inline]
    fn add_pixel(&mut self, pred: f64, gt: f64) {
        let e = pred - gt;
        self.n += 1;
        self.abs_rel.add(e.abs() / gt);
        self.sq_rel.add(e * e / gt);
        self.sq_err.add(e * e);
        if (pred / gt).max(gt / pred) < DELTA1_THRESHOLD {
            self.hits += 1;
        }
    }

    fn merge(&mut self, o: &ErrorSums) {
        self.n += o.n;
        self.hits += o.hits;
        self.abs_rel.merge(&o.abs_rel);
        self.sq_rel.merge(&o.sq_rel);
        self.sq_err.merge(&o.sq_err);
    }

    /// `[delta1, abs_rel, sq_rel, rmse]`
    fn metrics(&self) -> [f64; 4] {
        let n = self.n as f64;
        [
            self.hits as f64 / n,
            self.abs_rel.value() / n,
            self.sq_rel.value() / n,
            (self.sq_err.value() / n).max(0.0).sqrt(),
        ]
    }
}

fn frame_sums<T: Real>(pred: &DepthSequence<T>, gt: &DepthSequence<T>) -> Vec<ErrorSums> {
    pred.frames
        .par_iter()
        .zip(&gt.frames)
        .map(|(p, g)| {
            let mut s = ErrorSums::default();
            for (a, b) in p.joint_pixels(g) {
                s.add_pixel(a.as_f64(), b.as_f64());
            }
            s
        })
        .collect()
}

/// Point values of delta1, AbsRel, SqRel and RMSE over jointly valid pixels.
pub fn compute_metrics<T: Real>(pred_aligned: &DepthSequence<T>, gt: &DepthSequence<T>) -> Result<MetricReport> {
    pred_aligned.check_same_shape(gt)?;
    let mut total = ErrorSums::default();
    for s in frame_sums(pred_aligned, gt) {
        total.merge(&s);
    }
    if total.n == 0 {
        return Err(Error::EmptyMask);
    }
    let [d1, ar, sr, rmse] = total.metrics();
    Ok(MetricReport {
        delta1: Metric::point(d1),
        abs_rel: Metric::point(ar),
        sq_rel: Metric::point(sr),
        rmse_mm: Metric::point(rmse),
        n_pixels: total.n,
        n_frames: gt.len(),
        n_resamples: 0,
        degenerate_ci: false,
    })
}

/// What gets drawn with replacement in each bootstrap resample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResampleUnit {
    /// Whole frames. Pixels inside a frame are strongly correlated, so this
    /// is the default.
    #[default]
    Frame,
    Pixel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub n_resamples: usize,
    pub seed: u64,
    pub unit: ResampleUnit,
    /// Two-sided confidence level.
    pub level: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            n_resamples: 1000,
            seed: 0,
            unit: ResampleUnit::Frame,
            level: 0.95,
        }
    }
}

/// Linear-interpolated quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Percentile bootstrap intervals for every metric.
///
/// Intervals are widened if needed so they always contain the point value.
/// Deterministic for a fixed seed.
pub fn bootstrap_ci<T: Real>(
    pred_aligned: &DepthSequence<T>,
    gt: &DepthSequence<T>,
    config: &BootstrapConfig,
) -> Result<MetricReport> {
    if config.n_resamples < 1 {
        return Err(Error::invalid("n_resamples must be at least 1"));
    }
    if !(config.level > 0.0 && config.level < 1.0) {
        return Err(Error::invalid("confidence level must lie in (0, 1)"));
    }
    let mut report = compute_metrics(pred_aligned, gt)?;
    report.n_resamples = config.n_resamples;

    let units: Vec<ErrorSums> = match config.unit {
        ResampleUnit::Frame => frame_sums(pred_aligned, gt),
        ResampleUnit::Pixel => pred_aligned
            .frames
            .iter()
            .zip(&gt.frames)
            .flat_map(|(p, g)| {
                p.joint_pixels(g).map(|(a, b)| {
                    let mut s = ErrorSums::default();
                    s.add_pixel(a.as_f64(), b.as_f64());
                    s
                })
            })
            .collect(),
    };
    if units.len() < 2 {
        log::warn!("bootstrap over a single {:?}; interval is degenerate", config.unit);
        report.degenerate_ci = true;
        return Ok(report);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut samples: [Vec<f64>; 4] = Default::default();
    for _ in 0..config.n_resamples {
        let mut acc = ErrorSums::default();
        for _ in 0..units.len() {
            acc.merge(&units[rng.random_range(0..units.len())]);
        }
        if acc.n == 0 {
            continue;
        }
        for (store, m) in samples.iter_mut().zip(acc.metrics()) {
            store.push(m);
        }
    }
    if samples[0].is_empty() {
        report.degenerate_ci = true;
        return Ok(report);
    }

    let tail = (1.0 - config.level) / 2.0;
    let metrics = [
        &mut report.delta1,
        &mut report.abs_rel,
        &mut report.sq_rel,
        &mut report.rmse_mm,
    ];
    for (metric, mut values) in metrics.into_iter().zip(samples) {
        values.sort_by(f64::total_cmp);
        metric.ci_low = quantile_sorted(&values, tail).min(metric.value);
        metric.ci_high = quantile_sorted(&values, 1.0 - tail).max(metric.value);
    }
    Ok(report)
}

/// Alignment, metrics and intervals for one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub alignment: AlignmentParams,
    pub aligned_nonpositive: u64,
    pub metrics: MetricReport,
}

/// Full evaluation protocol: align in `domain`, convert to depth, score.
/// With `bootstrap = None` only point values are reported.
pub fn evaluate<T: Real>(
    pred: &DepthSequence<T>,
    gt: &DepthSequence<T>,
    domain: AlignmentDomain,
    bootstrap: Option<&BootstrapConfig>,
) -> Result<EvaluationReport> {
    let alignment = align_scale_shift(pred, gt, domain)?;
    let aligned = apply_alignment(pred, &alignment)?;
    let metrics = match bootstrap {
        Some(cfg) => bootstrap_ci(&aligned.depth, gt, cfg)?,
        None => compute_metrics(&aligned.depth, gt)?,
    };
    Ok(EvaluationReport {
        alignment,
        aligned_nonpositive: aligned.n_nonpositive,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(frames: &[&[f64]], w: usize) -> DepthSequence<f64> {
        DepthSequence::new(
            frames
                .iter()
                .map(|f| DepthFrame::from_values(Grid::from_vec(w, f.len() / w, f.to_vec()).unwrap()))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn frame_invariants() {
        let v = Grid::from_vec(2, 1, vec![1.0, -1.0]).unwrap();
        assert!(DepthFrame::new(v.clone(), Grid::filled(2, 1, true)).is_err());
        assert!(DepthFrame::new(v.clone(), Grid::from_vec(2, 1, vec![true, false]).unwrap()).is_ok());
        assert!(DepthFrame::new(v, Grid::filled(1, 2, true)).is_err());
        assert!(DepthSequence::<f64>::new(vec![]).is_err());
        let a = DepthFrame::from_values(Grid::filled(2, 2, 1.0));
        let b = DepthFrame::from_values(Grid::filled(3, 2, 1.0));
        assert!(DepthSequence::new(vec![a, b]).is_err());
    }

    #[test]
    fn identity_alignment() {
        let gt = seq(&[&[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0, 7.0, 9.0]], 2);
        let p = align_scale_shift(&gt, &gt, AlignmentDomain::Depth).unwrap();
        assert!((p.alpha - 1.0).abs() < 1e-12 && p.beta.abs() < 1e-12);
        let unchanged = apply_alignment(&gt, &AlignmentParams::identity(AlignmentDomain::Depth)).unwrap();
        assert_eq!(unchanged.depth, gt);
    }

    #[test]
    fn affine_case_recovered() {
        let gt = seq(&[&[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0, 7.0, 9.0]], 2);
        let pred = seq(&[&[5.0, 7.0, 9.0, 11.0], &[13.0, 15.0, 17.0, 21.0]], 2);
        let p = align_scale_shift(&pred, &gt, AlignmentDomain::Depth).unwrap();
        assert!((p.alpha - 0.5).abs() < 1e-12);
        assert!((p.beta + 1.5).abs() < 1e-12);
        let aligned = apply_alignment(&pred, &p).unwrap();
        for (a, b) in aligned.depth.frames()[1].values().as_slice().iter().zip(gt.frames()[1].values().as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_prediction_fits_shift_only() {
        let gt = seq(&[&[1.0, 2.0, 3.0, 6.0]], 2);
        let pred = seq(&[&[4.0, 4.0, 4.0, 4.0]], 2);
        let p = align_scale_shift(&pred, &gt, AlignmentDomain::Depth).unwrap();
        assert!(p.degenerate);
        assert_eq!(p.alpha, 1.0);
        assert_eq!(p.beta, 3.0 - 4.0);
    }

    #[test]
    fn empty_joint_mask_is_an_error() {
        let gt = seq(&[&[0.0, 0.0]], 2);
        let pred = seq(&[&[1.0, 1.0]], 2);
        assert!(matches!(align_scale_shift(&pred, &gt, AlignmentDomain::Depth), Err(Error::EmptyMask)));
        assert!(matches!(compute_metrics(&pred, &gt), Err(Error::EmptyMask)));
    }

    #[test]
    fn single_pixel_metrics() {
        // ratio 5/4 = 1.25 is not strictly below the threshold
        let gt = seq(&[&[4.0]], 1);
        let pred = seq(&[&[5.0]], 1);
        let m = compute_metrics(&pred, &gt).unwrap();
        assert_eq!(m.abs_rel.value, 0.25);
        assert_eq!(m.sq_rel.value, 0.25);
        assert_eq!(m.rmse_mm.value, 1.0);
        assert_eq!(m.delta1.value, 0.0);
    }

    #[test]
    fn perfect_prediction_scores() {
        let gt = seq(&[&[1.0, 2.5, 3.0, 40.0]], 2);
        let m = compute_metrics(&gt, &gt).unwrap();
        assert_eq!(
            [m.delta1.value, m.abs_rel.value, m.sq_rel.value, m.rmse_mm.value],
            [1.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn disparity_nonpositive_pixels_are_masked() {
        let pred = seq(&[&[1.0, 2.0, 4.0, 8.0]], 2);
        // disparity' = 1/d - 0.3 -> negative for d = 4, 8
        let params = AlignmentParams {
            alpha: 1.0,
            beta: -0.3,
            domain: AlignmentDomain::Disparity,
            degenerate: false,
            n_pixels: 4,
        };
        let out = apply_alignment(&pred, &params).unwrap();
        assert_eq!(out.n_nonpositive, 2);
        assert_eq!(out.depth.frames()[0].valid_count(), 2);
        assert!((out.depth.frames()[0].depth(0, 0).unwrap() - 1.0 / 0.7).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_constant_and_single_frame() {
        let gt = seq(&[&[2.0, 2.0], &[2.0, 2.0], &[2.0, 2.0]], 2);
        let pred = seq(&[&[2.2, 2.2], &[2.2, 2.2], &[2.2, 2.2]], 2);
        let r = bootstrap_ci(&pred, &gt, &BootstrapConfig { n_resamples: 200, ..Default::default() }).unwrap();
        for m in [r.delta1, r.abs_rel, r.sq_rel, r.rmse_mm] {
            assert_eq!(m.ci_low, m.value);
            assert_eq!(m.ci_high, m.value);
        }
        assert!(!r.degenerate_ci);

        let one = seq(&[&[2.0, 3.0]], 2);
        let r = bootstrap_ci(&one, &one, &BootstrapConfig::default()).unwrap();
        assert!(r.degenerate_ci);
        assert!(bootstrap_ci(&one, &one, &BootstrapConfig { n_resamples: 0, ..Default::default() }).is_err());
    }

    #[test]
    fn pixel_resampling_unit() {
        let gt = seq(&[&[2.0, 3.0, 4.0, 5.0]], 2);
        let pred = seq(&[&[2.1, 3.5, 4.0, 4.0]], 2);
        let cfg = BootstrapConfig {
            n_resamples: 300,
            unit: ResampleUnit::Pixel,
            ..Default::default()
        };
        let r = bootstrap_ci(&pred, &gt, &cfg).unwrap();
        assert!(!r.degenerate_ci);
        assert!(r.abs_rel.ci_low < r.abs_rel.ci_high);
    }

    #[test]
    fn quantile_interpolates() {
        let s = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&s, 0.5), 2.0);
        assert_eq!(quantile_sorted(&s, 0.125), 0.5);
        assert_eq!(quantile_sorted(&s, 1.0), 4.0);
    }

    #[test]
    fn single_precision_sequences() {
        let gt = DepthSequence::new(vec![DepthFrame::from_values(
            Grid::from_vec(2, 2, vec![1.0f32, 2.0, 3.0, 4.0]).unwrap(),
        )])
        .unwrap();
        let pred = DepthSequence::new(vec![DepthFrame::from_values(
            Grid::from_vec(2, 2, vec![5.0f32, 7.0, 9.0, 11.0]).unwrap(),
        )])
        .unwrap();
        let r = evaluate(&pred, &gt, AlignmentDomain::Depth, None).unwrap();
        assert!((r.alignment.alpha - 0.5).abs() < 1e-9);
        assert!(r.metrics.rmse_mm.value < 1e-6);
    }
}
