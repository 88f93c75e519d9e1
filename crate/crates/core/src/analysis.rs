//! Lyapunov, passivity and convergence checks, plus trajectory metrics.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::controllers::sign;
use crate::error::{Error, Result};
use crate::model::{AnalysisReport, DecayFit, DecayModel, PolyFit, State, Trajectory};

/// `x2^2/2 + k x1^2/2`.
pub fn lyapunov(state: State, k: f64) -> f64 {
    0.5 * (state.x2 * state.x2 + k * state.x1 * state.x1)
}

/// Rate of the Lyapunov value along the unsaturated nonlinear loop,
/// `-|x2|^3 / max(|x1|, eps)`.
pub fn lyapunov_rate(state: State, epsilon_reg: f64) -> f64 {
    -dissipation(state, epsilon_reg)
}

fn dissipation(state: State, epsilon_reg: f64) -> f64 {
    let a = state.x2.abs();
    a * a * a / state.x1.abs().max(epsilon_reg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PassivityClass {
    Passive,
    NonPassive,
    Boundary,
}

impl fmt::Display for PassivityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PassivityClass::Passive => "Passive",
            PassivityClass::NonPassive => "NonPassive",
            PassivityClass::Boundary => "Boundary",
        })
    }
}

impl std::str::FromStr for PassivityClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Passive" => Ok(PassivityClass::Passive),
            "NonPassive" => Ok(PassivityClass::NonPassive),
            "Boundary" => Ok(PassivityClass::Boundary),
            other => Err(Error::Domain(format!("unknown passivity class `{other}`"))),
        }
    }
}

/// Compares `|x2|/|x1|` against `sign(x2) sign(x1)`.
///
/// On the `x2` axis the ratio is unbounded, so those states are passive; on
/// the `x1` axis both sides are zero and the state is on the boundary.
pub fn classify_passivity(state: State) -> Result<PassivityClass> {
    if state.is_origin() {
        return Err(Error::Domain("passivity is undefined at the origin".into()));
    }
    if state.x1 == 0.0 {
        return Ok(PassivityClass::Passive);
    }
    let ratio = state.x2.abs() / state.x1.abs();
    let rhs = sign(state.x2) * sign(state.x1);
    Ok(if ratio > rhs {
        PassivityClass::Passive
    } else if ratio < rhs {
        PassivityClass::NonPassive
    } else {
        PassivityClass::Boundary
    })
}

/// Rectangular phase-plane grid evaluated at cell centers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x1_range: (f64, f64),
    pub x2_range: (f64, f64),
    pub x1_cells: usize,
    pub x2_cells: usize,
}

impl GridSpec {
    pub fn new(
        x1_range: (f64, f64),
        x2_range: (f64, f64),
        x1_cells: usize,
        x2_cells: usize,
    ) -> Result<Self> {
        let g = GridSpec {
            x1_range,
            x2_range,
            x1_cells,
            x2_cells,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn square(half_width: f64, cells: usize) -> Result<Self> {
        Self::new(
            (-half_width, half_width),
            (-half_width, half_width),
            cells,
            cells,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo < hi;
        if !ordered(self.x1_range) || !ordered(self.x2_range) {
            return Err(Error::invalid(
                "grid",
                "ranges must be finite and strictly ordered",
            ));
        }
        if self.x1_cells == 0 || self.x2_cells == 0 {
            return Err(Error::invalid(
                "grid",
                "resolution must be at least one cell per axis",
            ));
        }
        Ok(())
    }

    fn center(range: (f64, f64), cells: usize, i: usize) -> f64 {
        // offset from the midpoint keeps symmetric grids exactly antisymmetric
        let width = (range.1 - range.0) / cells as f64;
        let mid = 0.5 * (range.0 + range.1);
        mid + (i as f64 + 0.5 - 0.5 * cells as f64) * width
    }

    pub fn x1_center(&self, i: usize) -> f64 {
        Self::center(self.x1_range, self.x1_cells, i)
    }

    pub fn x2_center(&self, j: usize) -> f64 {
        Self::center(self.x2_range, self.x2_cells, j)
    }

    pub fn cell_width(&self) -> (f64, f64) {
        (
            (self.x1_range.1 - self.x1_range.0) / self.x1_cells as f64,
            (self.x2_range.1 - self.x2_range.0) / self.x2_cells as f64,
        )
    }

    /// True when the origin lies strictly inside cell `(i, j)`.
    pub fn contains_origin(&self, i: usize, j: usize) -> bool {
        let (w1, w2) = self.cell_width();
        self.x1_center(i).abs() < 0.5 * w1 && self.x2_center(j).abs() < 0.5 * w2
    }

    pub fn len(&self) -> usize {
        self.x1_cells * self.x2_cells
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cell centers in storage order: `x1` varies fastest.
    pub fn centers(&self) -> impl Iterator<Item = (usize, usize, State)> + '_ {
        (0..self.x2_cells).flat_map(move |j| {
            (0..self.x1_cells).map(move |i| {
                (
                    i,
                    j,
                    State {
                        x1: self.x1_center(i),
                        x2: self.x2_center(j),
                    },
                )
            })
        })
    }

    fn build<T>(&self, mut f: impl FnMut(usize, usize, State) -> T) -> GridMap<T> {
        let cells = self.centers().map(|(i, j, s)| f(i, j, s)).collect();
        GridMap { grid: *self, cells }
    }
}

/// Per-cell values over a [`GridSpec`], `x1` index varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMap<T> {
    pub grid: GridSpec,
    pub cells: Vec<T>,
}

pub type RegionMask = GridMap<bool>;

impl<T> GridMap<T> {
    pub fn get(&self, i: usize, j: usize) -> &T {
        &self.cells[j * self.grid.x1_cells + i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (State, &T)> + '_ {
        self.grid
            .centers()
            .map(move |(i, j, s)| (s, self.get(i, j)))
    }
}

/// Passivity class at every cell center; a cell holding the origin is
/// marked [`PassivityClass::Boundary`].
pub fn passivity_map(grid: &GridSpec) -> Result<GridMap<PassivityClass>> {
    grid.validate()?;
    Ok(grid.build(|i, j, s| {
        if grid.contains_origin(i, j) || s.is_origin() {
            PassivityClass::Boundary
        } else {
            classify_passivity(s).expect("origin handled above")
        }
    }))
}

/// Slope `-sqrt(k)` of the line `x2 + sqrt(k) x1 = 0`.
pub fn attractor_slope(k: f64) -> Result<f64> {
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::Domain(format!(
            "attractor slope needs k > 0, got {k}"
        )));
    }
    Ok(-k.sqrt())
}

/// Whether `V' + alpha V^(1/2) <= 0` holds at `state` for the nonlinear loop.
pub fn finite_time_condition(state: State, k: f64, alpha: f64, epsilon_reg: f64) -> bool {
    alpha * lyapunov(state, k).sqrt() <= dissipation(state, epsilon_reg)
}

/// Region where the finite-time inequality holds, with both surfaces.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteTimeRegion {
    pub mask: RegionMask,
    /// `|V'|` at each cell center.
    pub vdot_magnitude: GridMap<f64>,
    /// `alpha V^(1/2)` at each cell center.
    pub alpha_sqrt_v: GridMap<f64>,
}

/// Evaluates [`finite_time_condition`] on every cell. The cell holding the
/// origin is excluded, where the inequality degenerates to `0 <= 0`.
pub fn finite_time_region(
    grid: &GridSpec,
    k: f64,
    alpha: f64,
    epsilon_reg: f64,
) -> Result<FiniteTimeRegion> {
    grid.validate()?;
    check_alpha(alpha)?;
    if !(k > 0.0) {
        return Err(Error::Domain(format!("k must be > 0, got {k}")));
    }
    let mask = grid.build(|i, j, s| {
        !(grid.contains_origin(i, j) || s.is_origin())
            && finite_time_condition(s, k, alpha, epsilon_reg)
    });
    let vdot_magnitude = grid.build(|_, _, s| dissipation(s, epsilon_reg));
    let alpha_sqrt_v = grid.build(|_, _, s| alpha * lyapunov(s, k).sqrt());
    Ok(FiniteTimeRegion {
        mask,
        vdot_magnitude,
        alpha_sqrt_v,
    })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "alpha must be finite and > 0, got {alpha}"
        )))
    }
}

/// Upper bound `2 sqrt(V0) / alpha` on the finite convergence time.
pub fn convergence_time_bound(v0: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if !(v0 >= 0.0) {
        return Err(Error::Domain(format!("V0 must be >= 0, got {v0}")));
    }
    Ok(2.0 * v0.sqrt() / alpha)
}

/// Time after which a positively saturated trajectory from `(x1_start, x2_start)`
/// has `x2 > 0` and `x1 > 0`, so the raw control is below `+S`.
///
/// The velocity turns positive at `-X2/S`; the position
/// `X1 + X2 t + S t^2 / 2` is positive past its largest root.
pub fn saturation_exit_bound(x1_start: f64, x2_start: f64, s: f64) -> f64 {
    let velocity = -x2_start / s;
    let disc = x2_start * x2_start - 2.0 * s * x1_start;
    let position = if disc >= 0.0 {
        (-x2_start + disc.sqrt()) / s
    } else {
        0.0
    };
    velocity.max(position).max(0.0)
}

/// [`saturation_exit_bound`] for either clamp sign; the negative branch is
/// the positive one applied to the negated state.
pub fn saturation_exit_bound_signed(x1_start: f64, x2_start: f64, s: f64, sign_v: f64) -> f64 {
    if sign_v < 0.0 {
        saturation_exit_bound(-x1_start, -x2_start, s)
    } else {
        saturation_exit_bound(x1_start, x2_start, s)
    }
}

/// Number of strict sign changes of `x1`; exact zeros are skipped.
pub fn overshoot_count(trajectory: &Trajectory) -> usize {
    let mut last = 0.0;
    let mut count = 0;
    for s in &trajectory.samples {
        let sg = sign(s.state.x1);
        if sg == 0.0 {
            continue;
        }
        if last != 0.0 && sg != last {
            count += 1;
        }
        last = sg;
    }
    count
}

/// First sample time after which `|x1| <= threshold` for every later sample.
pub fn settling_time(trajectory: &Trajectory, threshold: f64) -> Option<f64> {
    let mut settled = None;
    for s in &trajectory.samples {
        if s.state.x1.abs() <= threshold {
            settled.get_or_insert(s.t);
        } else {
            settled = None;
        }
    }
    settled
}

/// Median relative deviation of `x2/x1` from `-sqrt(k)` over samples with
/// `|x1|` inside `window`.
pub fn attractor_slope_error(trajectory: &Trajectory, window: (f64, f64)) -> Option<f64> {
    let root_k = trajectory.controller.k.sqrt();
    let mut errs: Vec<f64> = trajectory
        .samples
        .iter()
        .filter(|s| {
            let a = s.state.x1.abs();
            a >= window.0 && a <= window.1
        })
        .map(|s| (s.state.x2 / s.state.x1 + root_k).abs() / root_k)
        .collect();
    median(&mut errs)
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Time of the last true-to-false transition of the saturation flag; `None`
/// if the run never saturates or is still saturated at its final sample.
pub fn saturation_exit_time(trajectory: &Trajectory) -> Option<f64> {
    if trajectory.final_sample().is_none_or(|s| s.saturated) {
        return None;
    }
    trajectory
        .samples
        .windows(2)
        .rev()
        .find(|w| w[0].saturated && !w[1].saturated)
        .map(|w| w[1].t)
}

/// A maximal run of samples saturated at one clamp sign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationEpisode {
    pub start_time: f64,
    pub start_state: State,
    /// Sign of the applied clamp, `+1` or `-1`.
    pub sign: f64,
    /// First recorded instant after the run, `None` if the run lasts to the end.
    pub exit_time: Option<f64>,
}

impl SaturationEpisode {
    /// Latest exit time allowed by [`saturation_exit_bound_signed`].
    pub fn predicted_exit_bound(&self, s: f64) -> f64 {
        self.start_time
            + saturation_exit_bound_signed(self.start_state.x1, self.start_state.x2, s, self.sign)
    }
}

pub fn saturation_episodes(trajectory: &Trajectory) -> Vec<SaturationEpisode> {
    let mut episodes = Vec::new();
    let mut current: Option<SaturationEpisode> = None;
    for s in &trajectory.samples {
        let sg = if s.saturated { sign(s.v) } else { 0.0 };
        if let Some(ep) = current.as_mut() {
            if sg == ep.sign {
                continue;
            }
            ep.exit_time = Some(s.t);
            episodes.push(current.take().expect("episode in progress"));
        }
        if sg != 0.0 {
            current = Some(SaturationEpisode {
                start_time: s.t,
                start_state: s.state,
                sign: sg,
                exit_time: None,
            });
        }
    }
    episodes.extend(current);
    episodes
}

/// Least-squares polynomial of `degree` through `(t, y)`.
fn poly_fit(t: &[f64], y: &[f64], degree: usize) -> PolyFit {
    let n = t.len() as f64;
    let mean = t.iter().sum::<f64>() / n;
    let spread = t.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    let scale = if spread > 0.0 { spread } else { 1.0 };
    let m = degree + 1;

    // normal equations in the centered, scaled abscissa
    let mut a = vec![vec![0.0; m + 1]; m];
    for (&ti, &yi) in t.iter().zip(y) {
        let u = (ti - mean) / scale;
        let mut pows = vec![1.0; 2 * m - 1];
        for p in 1..pows.len() {
            pows[p] = pows[p - 1] * u;
        }
        for r in 0..m {
            for c in 0..m {
                a[r][c] += pows[r + c];
            }
            a[r][m] += pows[r] * yi;
        }
    }
    let scaled = solve_augmented(a).unwrap_or_else(|| {
        let mut c = vec![0.0; m];
        c[0] = y.iter().sum::<f64>() / n;
        c
    });

    // expand sum_j c_j ((t - mean)/scale)^j into ascending powers of t
    let mut coefficients = vec![0.0; m];
    for (j, &cj) in scaled.iter().enumerate() {
        let factor = cj / scale.powi(j as i32);
        for i in 0..=j {
            coefficients[i] += factor * binomial(j, i) * (-mean).powi((j - i) as i32);
        }
    }

    let fit = PolyFit {
        coefficients,
        r_squared: 0.0,
    };
    let y_mean = y.iter().sum::<f64>() / n;
    let ss_tot: f64 = y.iter().map(|v| (v - y_mean).powi(2)).sum();
    let ss_res: f64 = t
        .iter()
        .zip(y)
        .map(|(&ti, &yi)| (yi - fit.eval(ti)).powi(2))
        .sum();
    let r_squared = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else {
        1.0
    };
    PolyFit { r_squared, ..fit }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Gaussian elimination with partial pivoting on an augmented matrix.
fn solve_augmented(mut a: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let m = a.len();
    for col in 0..m {
        let pivot = (col..m).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        for row in col + 1..m {
            let f = a[row][col] / a[col][col];
            for c in col..=m {
                a[row][c] -= f * a[col][c];
            }
        }
    }
    let mut x = vec![0.0; m];
    for row in (0..m).rev() {
        let s: f64 = (row + 1..m).map(|c| a[row][c] * x[c]).sum();
        x[row] = (a[row][m] - s) / a[row][row];
    }
    Some(x)
}

/// Improvement in `r^2` the quadratic fit must exceed to be preferred.
pub const QUADRATIC_PREFERENCE: f64 = 0.01;

/// Fits `log10|x1|` against `t` over the samples in `window` with first and
/// second degree polynomials.
pub fn fit_log_decay(trajectory: &Trajectory, window: (f64, f64)) -> Result<DecayFit> {
    if !(window.0 <= window.1) {
        return Err(Error::Domain(format!(
            "fit window {window:?} is not ordered"
        )));
    }
    let picked: Vec<_> = trajectory
        .samples
        .iter()
        .filter(|s| s.t >= window.0 && s.t <= window.1)
        .collect();
    if picked.len() < 3 {
        return Err(Error::Domain(format!(
            "fit window {window:?} holds {} samples, need at least 3",
            picked.len()
        )));
    }
    let first_sign = sign(picked[0].state.x1);
    if let Some(bad) = picked
        .iter()
        .find(|s| sign(s.state.x1) != first_sign || s.state.x1 == 0.0)
    {
        return Err(Error::Domain(format!(
            "x1 is zero or changes sign at t={} inside the fit window",
            bad.t
        )));
    }
    let t: Vec<f64> = picked.iter().map(|s| s.t).collect();
    let y: Vec<f64> = picked.iter().map(|s| s.state.x1.abs().log10()).collect();
    let linear = poly_fit(&t, &y, 1);
    let quadratic = poly_fit(&t, &y, 2);
    let prefer_quadratic = quadratic.r_squared - linear.r_squared > QUADRATIC_PREFERENCE;
    let (model, chosen) = if prefer_quadratic {
        (DecayModel::Quadratic, &quadratic)
    } else {
        (DecayModel::Linear, &linear)
    };
    Ok(DecayFit {
        model,
        coefficients: chosen.coefficients.clone(),
        r_squared: chosen.r_squared,
        linear: linear.clone(),
        quadratic: quadratic.clone(),
        window,
    })
}

/// Settings for [`analyze`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisOptions {
    /// Defaults to `1e-6 * max(1, |x1(0)|)`.
    pub settle_threshold: Option<f64>,
    /// Defaults to the whole trajectory.
    pub decay_window: Option<(f64, f64)>,
    pub slope_window: (f64, f64),
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            settle_threshold: None,
            decay_window: None,
            slope_window: (1e-6, 1e-4),
        }
    }
}

pub fn default_settle_threshold(initial: State) -> f64 {
    1e-6 * initial.x1.abs().max(1.0)
}

pub fn analyze(trajectory: &Trajectory, options: &AnalysisOptions) -> Result<AnalysisReport> {
    let first = trajectory
        .samples
        .first()
        .ok_or_else(|| Error::Domain("cannot analyze an empty trajectory".into()))?;
    let last = trajectory.final_sample().expect("non-empty");
    let threshold = options
        .settle_threshold
        .unwrap_or_else(|| default_settle_threshold(first.state));
    if !(threshold > 0.0) {
        return Err(Error::Domain(format!(
            "settle threshold must be > 0, got {threshold}"
        )));
    }
    let window = options.decay_window.unwrap_or((first.t, last.t));
    Ok(AnalysisReport {
        overshoot_count: overshoot_count(trajectory),
        settling_time: settling_time(trajectory, threshold),
        final_v: last.lyapunov,
        decay_fit: fit_log_decay(trajectory, window).ok(),
        attractor_slope_error: attractor_slope_error(trajectory, options.slope_window),
        saturation_exit_time: saturation_exit_time(trajectory),
    })
}
