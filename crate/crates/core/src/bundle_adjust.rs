//! Windowed pose estimation from depth-augmented feature tracks.
//!
//! For every ordered pair of frames `(i, j)` that co-observe a track, the
//! observation in `i` is lifted with its depth, carried into camera `j` and
//! compared against the observation there:
//!
//! ```text
//! r_ij = pi_Kj( W_j^-1 W_i pi_Ki^-1 [p_i, d_i] ) - [p_j, d_j]
//! ```
//!
//! The depth component is multiplied by `depth_weight` (px per mm) so the
//! three residual components share a unit. Poses map camera to world; the
//! first pose of a window is pinned to the identity. The cost is minimized
//! with Levenberg-Marquardt on left-multiplied twist increments.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3x6, Vector3, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{backproject_unchecked, hat, nearest_rotation, se3_exp, CameraIntrinsics, Pose};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackObservation<T> {
    #[serde(rename = "f")]
    pub frame: usize,
    pub u: T,
    pub v: T,
    #[serde(rename = "d")]
    pub depth: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track<T> {
    pub id: u64,
    #[serde(rename = "obs")]
    pub observations: Vec<TrackObservation<T>>,
}

/// Feature tracks over a set of frames.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrackSet<T> {
    tracks: Vec<Track<T>>,
}

impl<T: Real> TrackSet<T> {
    /// Each track needs at least two observations in distinct frames, all
    /// with finite coordinates and positive depth.
    pub fn new(tracks: Vec<Track<T>>) -> Result<Self> {
        for t in &tracks {
            if t.observations.len() < 2 {
                return Err(Error::invalid(format!("track {} has fewer than 2 observations", t.id)));
            }
            let mut frames: Vec<usize> = t.observations.iter().map(|o| o.frame).collect();
            frames.sort_unstable();
            if frames.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::invalid(format!("track {} observes a frame twice", t.id)));
            }
            for o in &t.observations {
                if !(o.u.is_finite() && o.v.is_finite() && o.depth.is_finite()) {
                    return Err(Error::NonFinite("track observation"));
                }
                if o.depth <= T::zero() {
                    return Err(Error::invalid(format!("track {} has non-positive depth", t.id)));
                }
            }
        }
        Ok(Self { tracks })
    }

    pub fn tracks(&self) -> &[Track<T>] {
        &self.tracks
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn max_frame(&self) -> Option<usize> {
        self.tracks
            .iter()
            .flat_map(|t| t.observations.iter().map(|o| o.frame))
            .max()
    }

    /// Observations inside `[start, start + len)`, re-indexed from zero.
    /// Tracks left with fewer than two observations are dropped.
    pub fn window(&self, start: usize, len: usize) -> TrackSet<T> {
        let tracks = self
            .tracks
            .iter()
            .filter_map(|t| {
                let observations: Vec<_> = t
                    .observations
                    .iter()
                    .filter(|o| o.frame >= start && o.frame < start + len)
                    .map(|o| TrackObservation {
                        frame: o.frame - start,
                        ..*o
                    })
                    .collect();
                (observations.len() >= 2).then(|| Track { id: t.id, observations })
            })
            .collect();
        TrackSet { tracks }
    }

    pub fn cast<U: Real>(&self) -> TrackSet<U> {
        TrackSet {
            tracks: self
                .tracks
                .iter()
                .map(|t| Track {
                    id: t.id,
                    observations: t
                        .observations
                        .iter()
                        .map(|o| TrackObservation {
                            frame: o.frame,
                            u: U::lit(o.u.as_f64()),
                            v: U::lit(o.v.as_f64()),
                            depth: U::lit(o.depth.as_f64()),
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

/// One ordered frame pair of one track.
#[derive(Debug, Clone, Copy)]
struct PairTerm<T: Real> {
    frame_i: usize,
    frame_j: usize,
    /// Observation `i` lifted into camera `i`.
    point_i: Vector3<T>,
    target: Vector3<T>,
}

/// Residual magnitude (per component) used for clamping and for points that
/// land behind camera `j`.
pub const DEFAULT_RESIDUAL_CAP: f64 = 1e3;

/// Cameras closer than this (mm) count as behind.
const MIN_POSITIVE_DEPTH: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct BaProblem<T: Real> {
    tracks: TrackSet<T>,
    intrinsics: Vec<CameraIntrinsics<T>>,
    depth_weight: T,
    huber_delta: Option<T>,
    residual_cap: T,
    terms: Vec<PairTerm<T>>,
}

impl<T: Real> BaProblem<T> {
    /// `intrinsics` holds one entry per frame; its length is the window
    /// size. `depth_weight` is in px/mm.
    pub fn new(
        tracks: TrackSet<T>,
        intrinsics: Vec<CameraIntrinsics<T>>,
        depth_weight: T,
        huber_delta: Option<T>,
    ) -> Result<Self> {
        let window = intrinsics.len();
        if window < 2 {
            return Err(Error::invalid("window size must be at least 2"));
        }
        if !(depth_weight > T::zero() && depth_weight.is_finite()) {
            return Err(Error::invalid("depth weight must be positive"));
        }
        if let Some(d) = huber_delta {
            if !(d > T::zero()) {
                return Err(Error::invalid("huber delta must be positive"));
            }
        }
        for k in &intrinsics {
            k.validate()?;
        }
        let mut terms = Vec::new();
        for t in tracks.tracks() {
            for o in &t.observations {
                let k = intrinsics.get(o.frame).ok_or_else(|| {
                    Error::invalid(format!("track {} observes frame {} outside the window of {window}", t.id, o.frame))
                })?;
                if !k.contains(o.u, o.v) {
                    return Err(Error::invalid(format!("track {} observation lies outside frame {}", t.id, o.frame)));
                }
            }
            for a in &t.observations {
                let point_i = backproject_unchecked(a.u, a.v, a.depth, &intrinsics[a.frame]);
                for b in &t.observations {
                    if a.frame == b.frame {
                        continue;
                    }
                    terms.push(PairTerm {
                        frame_i: a.frame,
                        frame_j: b.frame,
                        point_i,
                        target: Vector3::new(b.u, b.v, b.depth),
                    });
                }
            }
        }
        Ok(Self {
            tracks,
            intrinsics,
            depth_weight,
            huber_delta,
            residual_cap: T::lit(DEFAULT_RESIDUAL_CAP),
            terms,
        })
    }

    pub fn with_residual_cap(mut self, cap: T) -> Self {
        self.residual_cap = cap;
        self
    }

    pub fn window_size(&self) -> usize {
        self.intrinsics.len()
    }

    pub fn tracks(&self) -> &TrackSet<T> {
        &self.tracks
    }

    pub fn intrinsics(&self) -> &[CameraIntrinsics<T>] {
        &self.intrinsics
    }

    pub fn depth_weight(&self) -> T {
        self.depth_weight
    }

    /// Number of residual blocks (ordered frame pairs over all tracks).
    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    fn check_poses(&self, poses: &[Pose<T>]) -> Result<()> {
        if poses.len() != self.window_size() {
            return Err(Error::invalid(format!(
                "expected {} poses, got {}",
                self.window_size(),
                poses.len()
            )));
        }
        for p in poses {
            if p.rotation().iter().chain(p.translation().iter()).any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("pose"));
            }
        }
        Ok(())
    }

    /// Residual of one term given `W_i` and `W_j^-1`. The flag is set when the
    /// point lands behind camera `j`.
    #[inline]
    fn block(&self, term: &PairTerm<T>, pose_i: &Pose<T>, inv_j: &Pose<T>) -> (Vector3<T>, bool) {
        let x = inv_j.transform(&pose_i.transform(&term.point_i));
        self.block_from_point(term, &x)
    }

    #[inline]
    fn block_from_point(&self, term: &PairTerm<T>, x: &Vector3<T>) -> (Vector3<T>, bool) {
        let cap = self.residual_cap;
        let dz = (self.depth_weight * (x.z - term.target.z)).clamp(-cap, cap);
        if x.z <= T::lit(MIN_POSITIVE_DEPTH) {
            return (Vector3::new(cap, cap, dz), true);
        }
        let k = &self.intrinsics[term.frame_j];
        let u = k.fx * x.x / x.z + k.cx;
        let v = k.fy * x.y / x.z + k.cy;
        (
            Vector3::new(
                (u - term.target.x).clamp(-cap, cap),
                (v - term.target.y).clamp(-cap, cap),
                dz,
            ),
            false,
        )
    }

    /// Stacked residual vector, three entries per ordered frame pair.
    pub fn residual(&self, poses: &[Pose<T>]) -> Result<Residuals<T>> {
        self.check_poses(poses)?;
        let inverses: Vec<Pose<T>> = poses.iter().map(Pose::inverse).collect();
        let blocks: Vec<(Vector3<T>, bool)> = self
            .terms
            .par_iter()
            .map(|t| self.block(t, &poses[t.frame_i], &inverses[t.frame_j]))
            .collect();
        let behind_camera = blocks.iter().filter(|b| b.1).count();
        let values = blocks.iter().flat_map(|(r, _)| r.iter().copied()).collect();
        Ok(Residuals {
            values,
            behind_camera,
        })
    }

    /// Robustified cost `sum rho(|r_b|^2)` over residual blocks.
    pub fn cost(&self, poses: &[Pose<T>]) -> Result<T> {
        self.check_poses(poses)?;
        Ok(self.cost_unchecked(poses))
    }

    fn cost_unchecked(&self, poses: &[Pose<T>]) -> T {
        let inverses: Vec<Pose<T>> = poses.iter().map(Pose::inverse).collect();
        let per_term: Vec<T> = self
            .terms
            .par_iter()
            .map(|t| self.robust(self.block(t, &poses[t.frame_i], &inverses[t.frame_j]).0.norm_squared()).0)
            .collect();
        per_term.into_iter().fold(T::zero(), |a, b| a + b)
    }

    /// `(rho(s^2), irls weight)` for the Huber kernel (plain squares when
    /// disabled).
    #[inline]
    fn robust(&self, sq: T) -> (T, T) {
        match self.huber_delta {
            Some(delta) if sq > delta * delta => {
                let s = sq.sqrt();
                (T::lit(2.0) * delta * s - delta * delta, delta / s)
            }
            _ => (sq, T::one()),
        }
    }

    /// Analytic Jacobians of one block with respect to left twist increments
    /// of `W_i` and `W_j`.
    fn analytic_jacobian(&self, term: &PairTerm<T>, pose_i: &Pose<T>, pose_j: &Pose<T>) -> (Matrix3x6<T>, Matrix3x6<T>) {
        let pw = pose_i.transform(&term.point_i);
        let rjt = pose_j.rotation().transpose();
        let x = rjt * (pw - pose_j.translation());
        let cap = self.residual_cap;
        let zero = (Matrix3x6::zeros(), Matrix3x6::zeros());
        if x.z <= T::lit(MIN_POSITIVE_DEPTH) {
            return zero;
        }
        let k = &self.intrinsics[term.frame_j];
        let (r, _) = self.block_from_point(term, &x);
        let inv_z = T::one() / x.z;
        let mut dp = Matrix3::new(
            k.fx * inv_z,
            T::zero(),
            -k.fx * x.x * inv_z * inv_z,
            T::zero(),
            k.fy * inv_z,
            -k.fy * x.y * inv_z * inv_z,
            T::zero(),
            T::zero(),
            self.depth_weight,
        );
        // Clamped components are flat.
        for c in 0..3 {
            if r[c].abs() >= cap {
                dp.row_mut(c).fill(T::zero());
            }
        }
        let mut lever = Matrix3x6::zeros();
        lever.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
        lever.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-hat(&pw)));
        let ji = dp * rjt * lever;
        (ji, -ji)
    }
}

/// Stacked residuals and the count of blocks that landed behind a camera.
#[derive(Debug, Clone)]
pub struct Residuals<T> {
    pub values: Vec<T>,
    pub behind_camera: usize,
}

impl<T: Real> Residuals<T> {
    pub fn rms(&self) -> T {
        if self.values.is_empty() {
            return T::zero();
        }
        let ss = self.values.iter().fold(T::zero(), |a, &r| a + r * r);
        (ss / T::lit(self.values.len() as f64)).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMode {
    /// Central differences on twist increments.
    #[default]
    FiniteDifference,
    Analytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Stop when an accepted step lowers the cost by less than this fraction.
    pub relative_cost_tolerance: f64,
    pub step_tolerance: f64,
    pub fd_step: f64,
    pub jacobian: JacobianMode,
    /// Initial damping relative to the largest diagonal entry of `J^T J`.
    pub initial_damping: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            relative_cost_tolerance: 1e-10,
            step_tolerance: 1e-10,
            fd_step: 1e-6,
            jacobian: JacobianMode::FiniteDifference,
            initial_damping: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BaSolution<T: Real> {
    /// One pose per frame; `poses[0]` is the identity.
    pub poses: Vec<Pose<T>>,
    pub initial_cost: T,
    pub final_cost: T,
    /// LM iterations attempted (accepted and rejected).
    pub iterations: usize,
    pub converged: bool,
    /// Cost after each accepted step, starting with the initial cost.
    pub cost_history: Vec<T>,
    /// The damped normal equations failed to factor at least once.
    pub rank_deficient: bool,
}

/// Per-block linearization: residual, weight, and Jacobians w.r.t. frames
/// `i` and `j`.
struct Linearized<T: Real> {
    frame_i: usize,
    frame_j: usize,
    r: Vector3<T>,
    weight: T,
    ji: Matrix3x6<T>,
    jj: Matrix3x6<T>,
}

/// Left-multiplied perturbations `exp(+-h e_m) W` of one pose, with inverses.
struct Perturbed<T: Real> {
    plus: [Pose<T>; 6],
    minus: [Pose<T>; 6],
    plus_inv: [Pose<T>; 6],
    minus_inv: [Pose<T>; 6],
}

impl<T: Real> Perturbed<T> {
    fn new(pose: &Pose<T>, h: T) -> Self {
        let mk = |sign: T| {
            std::array::from_fn(|m| {
                let mut xi = Vector6::zeros();
                xi[m] = sign * h;
                se3_exp(&xi).compose(pose)
            })
        };
        let plus: [Pose<T>; 6] = mk(T::one());
        let minus: [Pose<T>; 6] = mk(-T::one());
        Self {
            plus_inv: std::array::from_fn(|m| plus[m].inverse()),
            minus_inv: std::array::from_fn(|m| minus[m].inverse()),
            plus,
            minus,
        }
    }
}

impl<T: Real> BaProblem<T> {
    /// Central-difference Jacobians of one block.
    fn fd_jacobian(
        &self,
        term: &PairTerm<T>,
        poses: &[Pose<T>],
        inverses: &[Pose<T>],
        perturbed: &[Perturbed<T>],
        h: T,
    ) -> (Matrix3x6<T>, Matrix3x6<T>) {
        let (i, j) = (term.frame_i, term.frame_j);
        let two_h = T::lit(2.0) * h;
        let mut ji = Matrix3x6::zeros();
        let mut jj = Matrix3x6::zeros();
        for m in 0..6 {
            let rp = self.block(term, &perturbed[i].plus[m], &inverses[j]).0;
            let rm = self.block(term, &perturbed[i].minus[m], &inverses[j]).0;
            ji.set_column(m, &((rp - rm) / two_h));
            let rp = self.block(term, &poses[i], &perturbed[j].plus_inv[m]).0;
            let rm = self.block(term, &poses[i], &perturbed[j].minus_inv[m]).0;
            jj.set_column(m, &((rp - rm) / two_h));
        }
        (ji, jj)
    }

    fn linearize(&self, poses: &[Pose<T>], config: &SolverConfig) -> Vec<Linearized<T>> {
        let inverses: Vec<Pose<T>> = poses.iter().map(Pose::inverse).collect();
        let h = T::lit(config.fd_step);
        let perturbed: Vec<Perturbed<T>> = match config.jacobian {
            JacobianMode::FiniteDifference => poses.iter().map(|p| Perturbed::new(p, h)).collect(),
            JacobianMode::Analytic => Vec::new(),
        };
        self.terms
            .par_iter()
            .map(|t| {
                let (r, _) = self.block(t, &poses[t.frame_i], &inverses[t.frame_j]);
                let (_, weight) = self.robust(r.norm_squared());
                let (ji, jj) = match config.jacobian {
                    JacobianMode::FiniteDifference => self.fd_jacobian(t, poses, &inverses, &perturbed, h),
                    JacobianMode::Analytic => self.analytic_jacobian(t, &poses[t.frame_i], &poses[t.frame_j]),
                };
                Linearized {
                    frame_i: t.frame_i,
                    frame_j: t.frame_j,
                    r,
                    weight,
                    ji,
                    jj,
                }
            })
            .collect()
    }

    /// Jacobian blocks for every term at `poses`, for cross-checking the
    /// analytic and finite-difference routes. Each entry is
    /// `(frame_i, frame_j, d r / d xi_i, d r / d xi_j)`.
    pub fn jacobian_blocks(
        &self,
        poses: &[Pose<T>],
        mode: JacobianMode,
    ) -> Result<Vec<(usize, usize, Matrix3x6<T>, Matrix3x6<T>)>> {
        self.check_poses(poses)?;
        let cfg = SolverConfig {
            jacobian: mode,
            ..SolverConfig::default()
        };
        Ok(self
            .linearize(poses, &cfg)
            .into_iter()
            .map(|l| (l.frame_i, l.frame_j, l.ji, l.jj))
            .collect())
    }

    /// Gauss-Newton normal equations over frames `1..T`, accumulated in term
    /// order.
    fn normal_equations(&self, lin: &[Linearized<T>]) -> (DMatrix<T>, DVector<T>) {
        let n = 6 * (self.window_size() - 1);
        let mut h = DMatrix::zeros(n, n);
        let mut g = DVector::zeros(n);
        for l in lin {
            let blocks = [(l.frame_i, &l.ji), (l.frame_j, &l.jj)];
            for &(fa, ja) in &blocks {
                if fa == 0 {
                    continue;
                }
                let oa = 6 * (fa - 1);
                let jtr = ja.transpose() * l.r * l.weight;
                let mut gs = g.fixed_rows_mut::<6>(oa);
                gs += jtr;
                for &(fb, jb) in &blocks {
                    if fb == 0 {
                        continue;
                    }
                    let ob = 6 * (fb - 1);
                    let jtj = ja.transpose() * jb * l.weight;
                    let mut hs = h.fixed_view_mut::<6, 6>(oa, ob);
                    hs += jtj;
                }
            }
        }
        (h, g)
    }
}

/// Minimizes the pairwise reprojection-plus-depth cost over `W_2..W_T`.
///
/// `init` defaults to all identities; its first pose is replaced by the
/// identity after re-expressing the others relative to it.
pub fn solve<T: Real>(problem: &BaProblem<T>, init: Option<&[Pose<T>]>, config: &SolverConfig) -> Result<BaSolution<T>> {
    let t = problem.window_size();
    let mut poses: Vec<Pose<T>> = match init {
        Some(p) => {
            problem.check_poses(p)?;
            let anchor = p[0].inverse();
            p.iter().map(|w| anchor.compose(w)).collect()
        }
        None => vec![Pose::identity(); t],
    };
    poses[0] = Pose::identity();

    let mut cost = problem.cost_unchecked(&poses);
    let initial_cost = cost;
    let mut history = vec![cost];
    let mut mu = T::zero();
    let mut nu = T::lit(2.0);
    let mut iterations = 0;
    let mut converged = false;
    let mut rank_deficient = false;
    let mut relinearize = true;
    let mut normal = (DMatrix::zeros(0, 0), DVector::zeros(0));

    while iterations < config.max_iterations {
        if cost == T::zero() {
            converged = true;
            break;
        }
        if relinearize {
            let lin = problem.linearize(&poses, config);
            normal = problem.normal_equations(&lin);
            relinearize = false;
            if normal.1.amax() <= T::lit(1e-300) {
                converged = true;
                break;
            }
            if mu == T::zero() {
                let max_diag = normal.0.diagonal().amax();
                mu = T::lit(config.initial_damping) * max_diag.max(T::lit(1e-12));
            }
        }
        iterations += 1;
        let (h, g) = &normal;
        let mut damped = h.clone();
        for d in 0..damped.nrows() {
            damped[(d, d)] += mu;
        }
        let Some(chol) = damped.cholesky() else {
            rank_deficient = true;
            mu *= nu;
            nu *= T::lit(2.0);
            if mu.as_f64() > 1e32 {
                break;
            }
            continue;
        };
        let step = chol.solve(&(-g));
        let step_norm = step.norm();

        let mut candidate = poses.clone();
        for (k, pose) in candidate.iter_mut().enumerate().skip(1) {
            let xi = Vector6::from_iterator(step.rows(6 * (k - 1), 6).iter().copied());
            *pose = se3_exp(&xi).compose(pose);
        }
        let new_cost = problem.cost_unchecked(&candidate);
        let predicted = -(g.dot(&step) * T::lit(2.0)) - (h * &step).dot(&step);

        if new_cost < cost && new_cost.is_finite() {
            let decrease = cost - new_cost;
            let rho = if predicted > T::zero() { decrease / predicted } else { T::one() };
            let two = T::lit(2.0);
            let factor = T::one() - (two * rho - T::one()).powi(3);
            mu *= factor.max(T::lit(1.0 / 3.0));
            nu = two;
            poses = candidate;
            let relative = decrease / cost;
            cost = new_cost;
            history.push(cost);
            relinearize = true;
            if relative.as_f64() < config.relative_cost_tolerance
                || step_norm.as_f64() < config.step_tolerance
            {
                converged = true;
                break;
            }
        } else {
            if step_norm.as_f64() < config.step_tolerance {
                converged = true;
                break;
            }
            mu *= nu;
            nu *= T::lit(2.0);
            if mu.as_f64() > 1e32 {
                break;
            }
        }
    }

    // Re-project rotations onto SO(3) to remove drift from repeated updates.
    let poses = poses.iter().map(Pose::orthonormalized).collect();
    Ok(BaSolution {
        poses,
        initial_cost,
        final_cost: cost,
        iterations,
        converged,
        cost_history: history,
        rank_deficient,
    })
}

/// Rigid `G` minimizing `sum_s |G A_s - B_s|^2` over rotations and camera
/// centers of corresponding poses.
fn align_pose_sets<T: Real>(a: &[Pose<T>], b: &[Pose<T>]) -> Pose<T> {
    let n = T::lit(a.len() as f64);
    let ca = a.iter().fold(Vector3::zeros(), |acc, p| acc + p.translation()) / n;
    let cb = b.iter().fold(Vector3::zeros(), |acc, p| acc + p.translation()) / n;
    let mut m = Matrix3::zeros();
    for (pa, pb) in a.iter().zip(b) {
        m += pb.rotation() * pa.rotation().transpose();
        m += (pb.translation() - cb) * (pa.translation() - ca).transpose();
    }
    let r = nearest_rotation(&m);
    Pose::from_parts(r, cb - r * ca)
}

/// Stitches per-window pose lists into one trajectory.
///
/// Consecutive windows share `overlap` frames: the last `overlap` frames of
/// window `k` are the first `overlap` frames of window `k + 1`. Each window
/// is rigidly re-anchored so the shared frames agree in least squares; the
/// earlier window's poses are kept for shared frames.
pub fn chain_windows<T: Real>(windows: &[Vec<Pose<T>>], overlap: usize) -> Result<Vec<Pose<T>>> {
    if overlap == 0 {
        return Err(Error::invalid("windows must overlap by at least one frame"));
    }
    let Some(first) = windows.first() else {
        return Ok(Vec::new());
    };
    let mut out = first.clone();
    for w in &windows[1..] {
        if w.len() <= overlap || out.len() < overlap {
            return Err(Error::invalid(format!(
                "window of {} frames cannot overlap {} frames with its predecessor",
                w.len(),
                overlap
            )));
        }
        let shared_global = &out[out.len() - overlap..];
        let g = align_pose_sets(&w[..overlap], shared_global);
        out.extend(w[overlap..].iter().map(|p| g.compose(p)));
    }
    Ok(out)
}

/// Frames covered by each window: `(start, len)`.
pub fn window_layout(n_frames: usize, window: usize, overlap: usize) -> Result<Vec<(usize, usize)>> {
    if window < 2 {
        return Err(Error::invalid("window size must be at least 2"));
    }
    if overlap == 0 || overlap >= window {
        return Err(Error::invalid("overlap must be in [1, window)"));
    }
    if n_frames < 2 {
        return Err(Error::invalid("need at least two frames"));
    }
    let step = window - overlap;
    let mut out = Vec::new();
    let mut start = 0;
    loop {
        let len = window.min(n_frames - start);
        out.push((start, len));
        if start + len >= n_frames {
            break;
        }
        start += step;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSummary {
    pub start: usize,
    pub len: usize,
    pub n_tracks: usize,
    pub iterations: usize,
    pub converged: bool,
    pub initial_cost: f64,
    pub final_cost: f64,
}

#[derive(Debug, Clone)]
pub struct TrajectoryEstimate<T: Real> {
    pub poses: Vec<Pose<T>>,
    pub windows: Vec<WindowSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectoryConfig {
    pub window: usize,
    pub overlap: usize,
    pub depth_weight: f64,
    pub huber_delta: Option<f64>,
    pub solver: SolverConfig,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            window: 16,
            overlap: 4,
            depth_weight: 1.0,
            huber_delta: Some(2.0),
            solver: SolverConfig::default(),
        }
    }
}

/// Solves every window of a long sequence and chains the results.
/// `intrinsics` holds one entry per frame.
pub fn estimate_trajectory<T: Real>(
    tracks: &TrackSet<T>,
    intrinsics: &[CameraIntrinsics<T>],
    config: &TrajectoryConfig,
) -> Result<TrajectoryEstimate<T>> {
    let n_frames = intrinsics.len();
    if let Some(max) = tracks.max_frame() {
        if max >= n_frames {
            return Err(Error::invalid(format!("tracks reference frame {max} but only {n_frames} frames exist")));
        }
    }
    let layout = window_layout(n_frames, config.window, config.overlap)?;
    let mut solutions = Vec::with_capacity(layout.len());
    let mut windows = Vec::with_capacity(layout.len());
    for &(start, len) in &layout {
        let sub = tracks.window(start, len);
        if sub.is_empty() {
            return Err(Error::Numerical(format!("no tracks in window starting at frame {start}")));
        }
        let n_tracks = sub.len();
        let problem = BaProblem::new(
            sub,
            intrinsics[start..start + len].to_vec(),
            T::lit(config.depth_weight),
            config.huber_delta.map(T::lit),
        )?;
        let sol = solve(&problem, None, &config.solver)?;
        log::info!(
            "window {start}..{}: cost {:.3e} -> {:.3e} in {} iterations (converged: {})",
            start + len,
            sol.initial_cost.as_f64(),
            sol.final_cost.as_f64(),
            sol.iterations,
            sol.converged
        );
        windows.push(WindowSummary {
            start,
            len,
            n_tracks,
            iterations: sol.iterations,
            converged: sol.converged,
            initial_cost: sol.initial_cost.as_f64(),
            final_cost: sol.final_cost.as_f64(),
        });
        solutions.push(sol.poses);
    }
    let poses = chain_windows(&solutions, config.overlap)?;
    Ok(TrajectoryEstimate { poses, windows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k() -> CameraIntrinsics<f64> {
        CameraIntrinsics::from_fov(128, 128, 90f64.to_radians()).unwrap()
    }

    fn random_twist(rng: &mut ChaCha8Rng, t: f64, r: f64) -> Vector6<f64> {
        Vector6::from_fn(|i, _| {
            let s = if i < 3 { t } else { r };
            rng.random_range(-s..s)
        })
    }

    /// Points in a slab in front of the first camera, observed by every
    /// camera that sees them.
    fn synthetic(poses: &[Pose<f64>], n_points: usize, seed: u64) -> TrackSet<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = k();
        let mut tracks = Vec::new();
        for id in 0..n_points {
            let pw = Vector3::new(
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
                rng.random_range(30.0..60.0),
            );
            let mut observations = Vec::new();
            for (f, w) in poses.iter().enumerate() {
                let x = w.inverse().transform(&pw);
                if let Ok(o) = crate::geometry::project(&x, &k) {
                    if k.contains(o.u, o.v) {
                        observations.push(TrackObservation { frame: f, u: o.u, v: o.v, depth: o.depth });
                    }
                }
            }
            if observations.len() >= 2 {
                tracks.push(Track { id: id as u64, observations });
            }
        }
        TrackSet::new(tracks).unwrap()
    }

    fn trajectory(n: usize, seed: u64) -> Vec<Pose<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut poses = vec![Pose::identity()];
        for _ in 1..n {
            let step = se3_exp(&(random_twist(&mut rng, 0.8, 0.02) + Vector6::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0)));
            poses.push(poses.last().unwrap().compose(&step));
        }
        poses
    }

    /// Independent residual: plain matrix products on homogeneous 4x4
    /// transforms, no shared helpers.
    fn oracle_residual(problem: &BaProblem<f64>, poses: &[Pose<f64>]) -> Vec<f64> {
        use nalgebra::{Matrix4, Vector4};
        let to_h = |p: &Pose<f64>| {
            let mut m = Matrix4::identity();
            m.fixed_view_mut::<3, 3>(0, 0).copy_from(p.rotation());
            m.fixed_view_mut::<3, 1>(0, 3).copy_from(p.translation());
            m
        };
        let mut out = Vec::new();
        for t in problem.tracks().tracks() {
            for a in &t.observations {
                for b in &t.observations {
                    if a.frame == b.frame {
                        continue;
                    }
                    let ki = problem.intrinsics()[a.frame];
                    let kj = problem.intrinsics()[b.frame];
                    let xi = Vector4::new((a.u - ki.cx) / ki.fx * a.depth, (a.v - ki.cy) / ki.fy * a.depth, a.depth, 1.0);
                    let m = to_h(&poses[b.frame]).try_inverse().unwrap() * to_h(&poses[a.frame]);
                    let xj = m * xi;
                    out.push(kj.fx * xj.x / xj.z + kj.cx - b.u);
                    out.push(kj.fy * xj.y / xj.z + kj.cy - b.v);
                    out.push(problem.depth_weight() * (xj.z - b.depth));
                }
            }
        }
        out
    }

    #[test]
    fn track_validation() {
        let o = |f| TrackObservation { frame: f, u: 1.0, v: 1.0, depth: 1.0 };
        assert!(TrackSet::new(vec![Track { id: 0, observations: vec![o(0)] }]).is_err());
        assert!(TrackSet::new(vec![Track { id: 0, observations: vec![o(0), o(0)] }]).is_err());
        let mut bad = o(1);
        bad.depth = -1.0;
        assert!(TrackSet::new(vec![Track { id: 0, observations: vec![o(0), bad] }]).is_err());
        let ok = TrackSet::new(vec![Track { id: 0, observations: vec![o(0), o(3)] }]).unwrap();
        assert!(BaProblem::new(ok.clone(), vec![k(); 3], 1.0, None).is_err(), "frame 3 outside window");
        assert!(BaProblem::new(ok.clone(), vec![k(); 4], 0.0, None).is_err());
        assert!(BaProblem::new(ok, vec![k(); 1], 1.0, None).is_err());
    }

    #[test]
    fn identity_poses_matching_observations() {
        let o = |f| TrackObservation { frame: f, u: 40.0, v: 70.0, depth: 12.0 };
        let ts = TrackSet::new(vec![Track { id: 0, observations: vec![o(0), o(1)] }]).unwrap();
        let p = BaProblem::new(ts, vec![k(); 2], 1.0, None).unwrap();
        let r = p.residual(&[Pose::identity(); 2]).unwrap();
        assert_eq!(r.values.len(), 6);
        assert!(r.values.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn residual_matches_oracle_and_vanishes_at_truth() {
        let gt = trajectory(6, 5);
        let tracks = synthetic(&gt, 40, 6);
        let p = BaProblem::new(tracks, vec![k(); 6], 1.0, None).unwrap();
        assert!(p.residual(&gt).unwrap().values.iter().all(|r| r.abs() < 1e-9));

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let poses: Vec<_> = gt.iter().map(|w| se3_exp(&random_twist(&mut rng, 1.0, 0.05)).compose(w)).collect();
            let ours = p.residual(&poses).unwrap();
            assert_eq!(ours.behind_camera, 0);
            let oracle = oracle_residual(&p, &poses);
            assert_eq!(ours.values.len(), oracle.len());
            for (a, b) in ours.values.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
        assert!(p.residual(&gt[..3]).is_err());
    }

    #[test]
    fn behind_camera_is_capped_and_flagged() {
        let o = |f| TrackObservation { frame: f, u: 64.0, v: 64.0, depth: 10.0 };
        let ts = TrackSet::new(vec![Track { id: 0, observations: vec![o(0), o(1)] }]).unwrap();
        let p = BaProblem::new(ts, vec![k(); 2], 1.0, None).unwrap();
        let ahead = Pose::from_translation(Vector3::new(0.0, 0.0, 30.0));
        let r = p.residual(&[Pose::identity(), ahead]).unwrap();
        assert_eq!(r.behind_camera, 1);
        assert!(r.values.iter().all(|x| x.abs() <= DEFAULT_RESIDUAL_CAP));
    }

    #[test]
    fn analytic_matches_finite_differences() {
        let gt = trajectory(5, 11);
        let tracks = synthetic(&gt, 30, 12);
        let p = BaProblem::new(tracks, vec![k(); 5], 1.0, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let poses: Vec<_> = gt.iter().map(|w| se3_exp(&random_twist(&mut rng, 0.5, 0.03)).compose(w)).collect();
            let fd = p.jacobian_blocks(&poses, JacobianMode::FiniteDifference).unwrap();
            let an = p.jacobian_blocks(&poses, JacobianMode::Analytic).unwrap();
            for ((_, _, fi, fj), (_, _, ai, aj)) in fd.iter().zip(&an) {
                for (f, a) in fi.iter().chain(fj.iter()).zip(ai.iter().chain(aj.iter())) {
                    assert!((f - a).abs() <= 1e-4 * a.abs().max(1.0), "fd {f} vs analytic {a}");
                }
            }
        }
    }

    #[test]
    fn solve_recovers_small_window() {
        let gt = trajectory(5, 21);
        let tracks = synthetic(&gt, 40, 22);
        let p = BaProblem::new(tracks, vec![k(); 5], 1.0, None).unwrap();
        for mode in [JacobianMode::FiniteDifference, JacobianMode::Analytic] {
            let cfg = SolverConfig { jacobian: mode, ..Default::default() };
            let sol = solve(&p, None, &cfg).unwrap();
            assert!(sol.converged);
            assert!(sol.final_cost <= sol.initial_cost);
            assert!(sol.cost_history.windows(2).all(|w| w[1] <= w[0]));
            for (a, b) in sol.poses.iter().zip(&gt) {
                let (dr, dt) = a.distance_to(b);
                assert!(dr < 1e-6 && dt < 1e-6, "rotation {dr}, translation {dt}");
            }
        }
    }

    #[test]
    fn optimal_init_terminates_immediately() {
        let gt = trajectory(4, 31);
        let tracks = synthetic(&gt, 30, 32);
        let p = BaProblem::new(tracks, vec![k(); 4], 1.0, None).unwrap();
        let before = p.cost(&gt).unwrap();
        let sol = solve(&p, Some(&gt), &SolverConfig::default()).unwrap();
        assert!(sol.iterations <= 1);
        assert!(sol.converged);
        assert!((sol.final_cost - before).abs() <= 1e-18);
    }

    #[test]
    fn huber_downweights_outliers() {
        let gt = trajectory(5, 41);
        let mut tracks = synthetic(&gt, 60, 42).tracks().to_vec();
        // Corrupt a few observations badly.
        for t in tracks.iter_mut().take(4) {
            t.observations[1].u = (t.observations[1].u + 25.0).min(127.0);
        }
        let ts = TrackSet::new(tracks).unwrap();
        let robust = BaProblem::new(ts.clone(), vec![k(); 5], 1.0, Some(2.0)).unwrap();
        let plain = BaProblem::new(ts, vec![k(); 5], 1.0, None).unwrap();
        let cfg = SolverConfig { jacobian: JacobianMode::Analytic, ..Default::default() };
        let err = |sol: &BaSolution<f64>| {
            sol.poses.iter().zip(&gt).map(|(a, b)| a.distance_to(b).1).fold(0.0, f64::max)
        };
        let e_robust = err(&solve(&robust, None, &cfg).unwrap());
        let e_plain = err(&solve(&plain, None, &cfg).unwrap());
        assert!(e_robust < e_plain, "robust {e_robust} plain {e_plain}");
    }

    #[test]
    fn window_layout_covers_all_frames() {
        assert_eq!(window_layout(16, 16, 4).unwrap(), vec![(0, 16)]);
        assert_eq!(window_layout(40, 16, 4).unwrap(), vec![(0, 16), (12, 16), (24, 16)]);
        assert_eq!(window_layout(30, 16, 4).unwrap(), vec![(0, 16), (12, 16), (24, 6)]);
        assert!(window_layout(30, 16, 0).is_err());
        assert!(window_layout(30, 16, 16).is_err());
    }

    #[test]
    fn chaining() {
        let gt = trajectory(10, 51);
        assert_eq!(chain_windows(&[gt.clone()], 2).unwrap(), gt);
        assert!(chain_windows(&[gt.clone(), gt.clone()], 0).is_err());

        // Windows expressed in their own gauge.
        let rebase = |ps: &[Pose<f64>]| -> Vec<Pose<f64>> {
            let a = ps[0].inverse();
            ps.iter().map(|p| a.compose(p)).collect()
        };
        let w0 = gt[0..6].to_vec();
        let w1 = rebase(&gt[3..10]);
        let chained = chain_windows(&[w0, w1], 3).unwrap();
        assert_eq!(chained.len(), 10);
        for (a, b) in chained.iter().zip(&gt) {
            let (dr, dt) = a.distance_to(b);
            assert!(dr < 1e-9 && dt < 1e-9);
        }

        // A window chained with itself over its full length minus one.
        let self_chain = chain_windows(&[gt.clone(), rebase(&gt)], 9).unwrap();
        assert_eq!(self_chain.len(), 11);
        for (a, b) in self_chain.iter().zip(&gt) {
            let (dr, dt) = a.distance_to(b);
            assert!(dr < 1e-9 && dt < 1e-9);
        }
    }
}
