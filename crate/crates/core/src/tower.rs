//! Finite synthetic CMZ structures.
//!
//! A model is a list of base cells. Cell `A` carries a mass `p_A`, an inner
//! return time `σ(A)` (the number of visits to the fast subset before the
//! next base visit) and one geometric return value `R(A, ℓ)` per level
//! `ℓ < σ(A)`. The full return time to the base is `h(A) = Σ_ℓ R(A, ℓ)`.
//!
//! Three tower measures appear:
//!
//! * the base measure `p_A`,
//! * the inner tower measure, `p_A / σ̄` on each level `(A, ℓ)`,
//! * the full tower measure, `p_A / h̄` on each of the `h(A)` floors of `A`.
//!
//! Two-sidedness is carried as a flag only; every quantity computed here
//! depends on forward codings alone.

use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estat::{CorrelationAccumulator, CorrelationCurve, EstatError};
use crate::fit::{self, FitError};
use crate::rv::{RegVar, RvError};
use crate::seed;

#[derive(Debug, Error)]
pub enum TowerError {
    #[error("return tail index alpha = {alpha} <= 1 is not integrable")]
    NonIntegrable { alpha: f64 },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("mass matching failed at return value {value}: residual {residual:e} (target {target:e})")]
    Construction { value: u64, residual: f64, target: f64 },
    #[error("insufficient range: {0}")]
    InsufficientRange(String),
    #[error(transparent)]
    Rv(#[from] RvError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Number of independent streams used by the Monte-Carlo routines. Fixed so
/// that results do not depend on the thread count.
pub const SHARDS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mass: f64,
    pub sigma: u32,
    /// Geometric return value of each level; length `sigma`.
    #[serde(rename = "R")]
    pub returns: Vec<u64>,
}

impl Cell {
    pub fn height(&self) -> u64 {
        self.returns.iter().sum()
    }
}

/// Partition data of the full-branch base map. Synthetic bases have
/// branchwise constant Jacobian, so the distortion constant is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsMarkovBase {
    pub masses: Vec<f64>,
    pub distortion_c: f64,
    pub distortion_theta: f64,
    /// Symbolic coding depth at which cells are separated.
    pub coding_depth: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmzModel {
    cells: Vec<Cell>,
    rho: f64,
    two_sided: bool,
    /// Inner tower mass of return values cut off by the finite value grid.
    truncated_mass: f64,
    h_bar: f64,
    sigma_bar: f64,
}

#[derive(Serialize, Deserialize)]
struct ModelJson {
    cells: Vec<Cell>,
    rho: f64,
    #[serde(default)]
    two_sided: bool,
}

impl Serialize for CmzModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        ModelJson { cells: self.cells.clone(), rho: self.rho, two_sided: self.two_sided }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for CmzModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let m = ModelJson::deserialize(d)?;
        CmzModel::from_cells(m.cells, m.rho, m.two_sided).map_err(serde::de::Error::custom)
    }
}

impl CmzModel {
    /// Validates and normalizes a hand-built model. Masses must sum to one
    /// within `1e-9`; they are then rescaled to sum to one exactly.
    pub fn from_cells(mut cells: Vec<Cell>, rho: f64, two_sided: bool) -> Result<Self, TowerError> {
        if cells.is_empty() {
            return Err(TowerError::InvalidModel("no cells".into()));
        }
        if !(rho > 0.0 && rho < 1.0) {
            return Err(TowerError::InvalidModel(format!("rho must lie in (0,1), got {rho}")));
        }
        for (i, c) in cells.iter().enumerate() {
            if !(c.mass > 0.0 && c.mass.is_finite()) {
                return Err(TowerError::InvalidModel(format!("cell {i}: mass must be positive")));
            }
            if c.sigma == 0 || c.returns.len() != c.sigma as usize {
                return Err(TowerError::InvalidModel(format!(
                    "cell {i}: sigma = {} but {} return values",
                    c.sigma,
                    c.returns.len()
                )));
            }
            if c.returns.contains(&0) {
                return Err(TowerError::InvalidModel(format!("cell {i}: return values must be >= 1")));
            }
        }
        let total: f64 = cells.iter().map(|c| c.mass).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(TowerError::InvalidModel(format!("masses sum to {total}, expected 1")));
        }
        for c in &mut cells {
            c.mass /= total;
        }
        Ok(Self::with_derived(cells, rho, two_sided, 0.0))
    }

    fn with_derived(cells: Vec<Cell>, rho: f64, two_sided: bool, truncated_mass: f64) -> Self {
        let h_bar = cells.iter().map(|c| c.mass * c.height() as f64).sum();
        let sigma_bar = cells.iter().map(|c| c.mass * c.sigma as f64).sum();
        Self { cells, rho, two_sided, truncated_mass, h_bar, sigma_bar }
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn two_sided(&self) -> bool {
        self.two_sided
    }

    pub fn truncated_mass(&self) -> f64 {
        self.truncated_mass
    }

    /// Mean full return time `Σ p_A h(A)`.
    pub fn h_bar(&self) -> f64 {
        self.h_bar
    }

    /// Mean inner return time `Σ p_A σ(A)`.
    pub fn sigma_bar(&self) -> f64 {
        self.sigma_bar
    }

    pub fn max_height(&self) -> u64 {
        self.cells.iter().map(Cell::height).max().unwrap_or(0)
    }

    pub fn max_sigma(&self) -> u32 {
        self.cells.iter().map(|c| c.sigma).max().unwrap_or(0)
    }

    pub fn base(&self) -> GibbsMarkovBase {
        GibbsMarkovBase {
            masses: self.cells.iter().map(|c| c.mass).collect(),
            distortion_c: 0.0,
            distortion_theta: 0.5,
            coding_depth: 1,
        }
    }

    /// Sorted distinct geometric return values.
    pub fn return_values(&self) -> Vec<u64> {
        let mut v: Vec<u64> = self.cells.iter().flat_map(|c| c.returns.iter().copied()).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Smallest `K` with `Σ_{σ > n} p_A <= K ρ^n` for every `n`.
    pub fn inner_tail_constant(&self) -> f64 {
        let max = self.max_sigma() as usize;
        let mut tail = vec![0.0; max + 1];
        for c in &self.cells {
            tail[c.sigma as usize] += c.mass;
        }
        // tail[n] becomes Σ_{σ > n} p_A.
        let mut acc = 0.0;
        let mut out = vec![0.0; max + 1];
        for n in (0..=max).rev() {
            out[n] = acc;
            acc += tail[n];
        }
        out.iter().enumerate().map(|(n, t)| t / self.rho.powi(n as i32)).fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }
}

/// Builds a synthetic model whose geometric return value `R` has inner tower
/// law `P(R > n) = r(n) / r(y0)` on a finite value grid, with `y0 = max(1,
/// ⌈cutoff⌉)`.
///
/// Cells are indexed by (return value `j`, inner return time `s`). Each cell
/// has one primary level with value `j`; every other level copies `j` with
/// probability `clustering` and otherwise draws a filler value `<= j` from
/// the target law. Cell masses `x_j w_s` are then solved by back
/// substitution (fillers never exceed the primary value, so the system is
/// triangular) so that the inner tower marginal of `R` equals the target law
/// exactly. `w_s ∝ ρ^(s-1)` is the inner return law, truncated at `ρ^s <=
/// 1e-6` or `√n_cells / 5` levels, whichever is smaller.
pub fn build_synthetic(
    tail: &RegVar,
    rho: f64,
    n_cells: usize,
    clustering: f64,
    seed: u64,
) -> Result<CmzModel, TowerError> {
    let alpha = tail.alpha();
    if alpha <= 1.0 {
        return Err(TowerError::NonIntegrable { alpha });
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(TowerError::InvalidModel(format!("rho must lie in (0,1), got {rho}")));
    }
    if n_cells < 10 {
        return Err(TowerError::InvalidModel(format!("n_cells must be >= 10, got {n_cells}")));
    }
    if !(0.0..=1.0).contains(&clustering) {
        return Err(TowerError::InvalidModel(format!("clustering must lie in [0,1], got {clustering}")));
    }
    let y0 = tail.cutoff().ceil().max(1.0);
    if !tail.is_non_increasing_from(y0) {
        return Err(TowerError::Rv(RvError::NotMonotone { from: y0 }));
    }
    let r0 = tail.evaluate(y0)?;
    let survival = |n: u64| -> Result<f64, RvError> {
        let x = n as f64;
        Ok(if x <= y0 { 1.0 } else { (tail.evaluate(x)? / r0).min(1.0) })
    };

    let s_needed = (1e-6f64.ln() / rho.ln()).ceil().max(1.0) as usize;
    let s_cap = (((n_cells as f64).sqrt() / 5.0).floor() as usize).max(1);
    let levels = s_needed.min(s_cap);
    let mut w: Vec<f64> = (0..levels).map(|i| (1.0 - rho) * rho.powi(i as i32)).collect();
    let wsum: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= wsum);
    let sigma_bar: f64 = w.iter().enumerate().map(|(i, x)| (i + 1) as f64 * x).sum();

    let values = value_grid(n_cells / levels);
    // P(R = j_i) = P(R >= j_i) - P(R >= j_{i+1}); the last value takes the rest.
    let mut pmf = Vec::with_capacity(values.len());
    for (i, &j) in values.iter().enumerate() {
        let upper = survival(j - 1)?;
        let lower = match values.get(i + 1) {
            Some(&next) => survival(next - 1)?,
            None => 0.0,
        };
        pmf.push((upper - lower).max(0.0));
    }
    let truncated_mass = survival(*values.last().expect("nonempty grid"))?;
    let keep: Vec<usize> = (0..values.len()).filter(|&i| pmf[i] > 0.0).collect();
    let values: Vec<u64> = keep.iter().map(|&i| values[i]).collect();
    let pmf: Vec<f64> = keep.iter().map(|&i| pmf[i]).collect();
    if values.is_empty() {
        return Err(TowerError::InvalidModel("target law has no mass on the value grid".into()));
    }
    let mut cdf = Vec::with_capacity(pmf.len());
    let mut acc = 0.0;
    for p in &pmf {
        acc += p;
        cdf.push(acc);
    }

    let mut rng = seed::shard_rng(seed, 0);
    // cells[i][s]: value indices of the levels of cell (values[i], s + 1).
    let mut layouts: Vec<Vec<Vec<usize>>> = Vec::with_capacity(values.len());
    for i in 0..values.len() {
        let mut per_s = Vec::with_capacity(levels);
        for s in 1..=levels {
            let primary = rng.random_range(0..s);
            let lv: Vec<usize> = (0..s)
                .map(|l| {
                    if l == primary || rng.random::<f64>() < clustering {
                        i
                    } else {
                        let u = rng.random::<f64>() * cdf[i];
                        cdf.partition_point(|&c| c <= u).min(i)
                    }
                })
                .collect();
            per_s.push(lv);
        }
        layouts.push(per_s);
    }

    // Triangular solve from the largest value down.
    let mut x = vec![0.0; values.len()];
    let mut filler_mass = vec![0.0; values.len()];
    for i in (0..values.len()).rev() {
        let mut diag = 0.0;
        for (s_idx, lv) in layouts[i].iter().enumerate() {
            diag += w[s_idx] * lv.iter().filter(|&&v| v == i).count() as f64 / sigma_bar;
        }
        let residual = pmf[i] - filler_mass[i];
        if residual < -1e-12 * pmf[i].max(f64::MIN_POSITIVE) {
            return Err(TowerError::Construction { value: values[i], residual, target: pmf[i] });
        }
        x[i] = residual.max(0.0) / diag;
        for (s_idx, lv) in layouts[i].iter().enumerate() {
            for &v in lv {
                if v != i {
                    filler_mass[v] += x[i] * w[s_idx] / sigma_bar;
                }
            }
        }
    }

    let mut cells = Vec::with_capacity(values.len() * levels);
    for (i, per_s) in layouts.iter().enumerate() {
        for (s_idx, lv) in per_s.iter().enumerate() {
            let mass = x[i] * w[s_idx];
            if mass > 0.0 {
                cells.push(Cell { mass, sigma: (s_idx + 1) as u32, returns: lv.iter().map(|&v| values[v]).collect() });
            }
        }
    }
    let total: f64 = cells.iter().map(|c| c.mass).sum();
    for c in &mut cells {
        c.mass /= total;
    }
    Ok(CmzModel::with_derived(cells, rho, false, truncated_mass))
}

/// `len` return values: consecutive integers from 2 up to 64, then a
/// geometric grid up to `1e5`.
fn value_grid(len: usize) -> Vec<u64> {
    const DENSE_END: u64 = 64;
    const MAX_VALUE: f64 = 1e5;
    let len = len.max(1);
    let dense = (DENSE_END - 1) as usize;
    if len <= dense {
        return (2..2 + len as u64).collect();
    }
    let mut v: Vec<u64> = (2..=DENSE_END).collect();
    let extra = len - dense;
    let ratio = (MAX_VALUE / DENSE_END as f64).powf(1.0 / extra as f64);
    for i in 1..=extra {
        let next = (DENSE_END as f64 * ratio.powi(i as i32)).round() as u64;
        let prev = *v.last().expect("nonempty");
        v.push(next.max(prev + 1));
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TailKind {
    /// Hitting time of the base from the inner tower.
    D,
    /// Geometric return value on the inner tower.
    H,
    /// Full return time on the base.
    A,
    /// Survival of an observed return-time sample.
    #[serde(rename = "R-level")]
    RLevel,
}

impl TailKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TailKind::D => "D",
            TailKind::H => "H",
            TailKind::A => "A",
            TailKind::RLevel => "R-level",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailEntry {
    pub n: u64,
    pub survival: f64,
    pub stderr: Option<f64>,
}

/// Survival function `n ↦ P(X > n)` on `n = 0, 1, ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailCurve {
    pub entries: Vec<TailEntry>,
    pub kind: TailKind,
    pub exact: bool,
}

impl TailCurve {
    /// Builds a curve from per-value weights `hist[v]` (value `v`), keeping
    /// entries for `n = 0..len`. `overflow` is weight above the histogram.
    fn from_histogram(hist: &[f64], overflow: f64, len: usize, kind: TailKind, samples: Option<f64>) -> Self {
        let total: f64 = hist.iter().sum::<f64>() + overflow;
        let mut above = vec![0.0; len];
        // above[n] = Σ_{v > n} hist[v] + overflow
        let mut acc = overflow + hist.iter().skip(len).sum::<f64>();
        for n in (0..len).rev() {
            above[n] = acc;
            if let Some(h) = hist.get(n) {
                acc += h;
            }
        }
        let entries = above
            .into_iter()
            .enumerate()
            .map(|(n, a)| {
                let p = if total > 0.0 { (a / total).clamp(0.0, 1.0) } else { 0.0 };
                TailEntry {
                    n: n as u64,
                    survival: p,
                    stderr: samples.map(|m| if m > 0.0 { (p * (1.0 - p) / m).sqrt() } else { 0.0 }),
                }
            })
            .collect();
        Self { entries, kind, exact: samples.is_none() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Survival at `n`, zero beyond the stored range of an exact curve.
    pub fn at(&self, n: u64) -> Option<f64> {
        self.entries.get(n as usize).map(|e| e.survival)
    }

    pub fn survivals(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.survival).collect()
    }

    /// Log-log regression of the survival over `[lo, hi]`, skipping zeros.
    pub fn fit_index(&self, lo: u64, hi: u64) -> Result<crate::rv::IndexEstimate, RvError> {
        let samples: Vec<(f64, f64)> = self
            .entries
            .iter()
            .filter(|e| e.n >= lo && e.n <= hi && e.survival > 0.0)
            .map(|e| (e.n as f64, e.survival))
            .collect();
        crate::rv::estimate_index(&samples, (lo as f64, hi as f64))
    }

    /// CSV with header `n,survival,stderr,kind,exact`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), TowerError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["n", "survival", "stderr", "kind", "exact"])?;
        for e in &self.entries {
            out.write_record([
                e.n.to_string(),
                format!("{:e}", e.survival),
                e.stderr.map(|s| format!("{s:e}")).unwrap_or_default(),
                self.kind.as_str().to_string(),
                self.exact.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactTails {
    pub d: TailCurve,
    pub h: TailCurve,
    pub a: TailCurve,
}

/// `D_n`, `H_n` and `A_n` for `n = 0..=n_max`, computed from the cell table.
pub fn exact_tails(model: &CmzModel, n_max: u64) -> ExactTails {
    let len = n_max as usize + 1;
    let mut d = vec![0.0; model.max_sigma() as usize + 1];
    let mut hv = vec![0.0; len + 1];
    let mut h_over = 0.0;
    let mut a = vec![0.0; len + 1];
    let mut a_over = 0.0;
    for c in &model.cells {
        // Unnormalized; `from_histogram` divides by the total, which is σ̄.
        // Keeping raw masses makes the H and A curves of a σ ≡ 1 model
        // bit-identical.
        let level_mass = c.mass;
        // Level ℓ needs σ - ℓ steps to reach the base.
        for l in 0..c.sigma {
            d[(c.sigma - l) as usize] += level_mass;
        }
        for &r in &c.returns {
            match hv.get_mut(r as usize) {
                Some(slot) => *slot += level_mass,
                None => h_over += level_mass,
            }
        }
        match a.get_mut(c.height() as usize) {
            Some(slot) => *slot += c.mass,
            None => a_over += c.mass,
        }
    }
    let d_curve = TailCurve::from_histogram(&d, 0.0, len, TailKind::D, None);
    let h_curve = TailCurve::from_histogram(&hv, h_over, len, TailKind::H, None);
    let a_curve = TailCurve::from_histogram(&a, a_over, len, TailKind::A, None);
    ExactTails { d: d_curve, h: h_curve, a: a_curve }
}

/// Monte-Carlo run of the tower map.
#[derive(Debug, Clone, PartialEq)]
pub struct TowerSummary {
    pub steps: u64,
    pub base_returns: u64,
    pub d: TailCurve,
    pub h: TailCurve,
    pub a: TailCurve,
    /// Lap number of each completed column: visits to the fast subset before
    /// the next base visit.
    pub laps: Vec<u32>,
    /// Longest excursion away from the fast subset in each completed column.
    pub excursion_max: Vec<u64>,
}

#[derive(Default)]
struct ShardCounts {
    steps: u64,
    d: Vec<f64>,
    h: Vec<f64>,
    a: Vec<f64>,
    levels: u64,
    returns: u64,
    laps: Vec<u32>,
    excursion_max: Vec<u64>,
}

fn add_at(v: &mut Vec<f64>, i: usize, w: f64) {
    if v.len() <= i {
        v.resize(i + 1, 0.0);
    }
    v[i] += w;
}

fn merge_into(acc: &mut Vec<f64>, other: &[f64]) {
    if acc.len() < other.len() {
        acc.resize(other.len(), 0.0);
    }
    for (a, b) in acc.iter_mut().zip(other) {
        *a += b;
    }
}

pub(crate) fn cell_sampler(model: &CmzModel) -> WeightedIndex<f64> {
    WeightedIndex::new(model.cells.iter().map(|c| c.mass)).expect("positive masses")
}

/// Runs `steps` iterations of the tower map split over [`SHARDS`] streams,
/// each starting on the base. Only columns completed within a shard's
/// budget are recorded.
pub fn simulate_tower(model: &CmzModel, steps: u64, seed: u64) -> TowerSummary {
    let sampler = cell_sampler(model);
    let budgets = seed::split_work(steps, SHARDS);
    let shards: Vec<ShardCounts> = budgets
        .par_iter()
        .enumerate()
        .map(|(shard, &budget)| {
            let mut rng = seed::shard_rng(seed, shard as u64);
            let mut out = ShardCounts::default();
            loop {
                let c = &model.cells[sampler.sample(&mut rng)];
                let h = c.height();
                if out.steps + h > budget {
                    break;
                }
                out.steps += h;
                out.returns += 1;
                add_at(&mut out.a, h as usize, 1.0);
                for (l, &r) in c.returns.iter().enumerate() {
                    add_at(&mut out.d, (c.sigma as usize) - l, 1.0);
                    add_at(&mut out.h, r as usize, 1.0);
                }
                out.levels += c.sigma as u64;
                out.laps.push(c.sigma);
                out.excursion_max.push(c.returns.iter().copied().max().unwrap_or(0));
            }
            out
        })
        .collect();
    let mut total = ShardCounts::default();
    for s in shards {
        total.steps += s.steps;
        total.returns += s.returns;
        total.levels += s.levels;
        merge_into(&mut total.d, &s.d);
        merge_into(&mut total.h, &s.h);
        merge_into(&mut total.a, &s.a);
        total.laps.extend(s.laps);
        total.excursion_max.extend(s.excursion_max);
    }
    let curve = |hist: &[f64], kind, m: u64| TailCurve::from_histogram(hist, 0.0, hist.len(), kind, Some(m as f64));
    TowerSummary {
        steps: total.steps,
        base_returns: total.returns,
        d: curve(&total.d, TailKind::D, total.levels),
        h: curve(&total.h, TailKind::H, total.levels),
        a: curve(&total.a, TailKind::A, total.returns),
        laps: total.laps,
        excursion_max: total.excursion_max,
    }
}

/// Position of the tower map: floor `offset` within level `level` of the
/// column over `cell`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TowerPoint {
    pub cell: usize,
    pub level: u32,
    pub offset: u64,
}

impl TowerPoint {
    pub fn on_base(&self) -> bool {
        self.level == 0 && self.offset == 0
    }

    /// Start of an excursion, i.e. a point of the inner tower.
    pub fn on_fast_subset(&self) -> bool {
        self.offset == 0
    }
}

/// Orbit of the tower map started on the base, fresh cells drawn i.i.d.
pub struct TowerWalk<'a> {
    model: &'a CmzModel,
    sampler: WeightedIndex<f64>,
    rng: ChaCha8Rng,
    point: TowerPoint,
    started: bool,
}

impl<'a> TowerWalk<'a> {
    pub fn new(model: &'a CmzModel, rng: ChaCha8Rng) -> Self {
        let sampler = cell_sampler(model);
        Self { model, sampler, rng, point: TowerPoint { cell: 0, level: 0, offset: 0 }, started: false }
    }
}

impl Iterator for TowerWalk<'_> {
    type Item = TowerPoint;

    fn next(&mut self) -> Option<TowerPoint> {
        if !self.started {
            self.started = true;
            self.point = TowerPoint { cell: self.sampler.sample(&mut self.rng), level: 0, offset: 0 };
            return Some(self.point);
        }
        let cell = &self.model.cells[self.point.cell];
        let p = &mut self.point;
        p.offset += 1;
        if p.offset == cell.returns[p.level as usize] {
            p.offset = 0;
            p.level += 1;
            if p.level == cell.sigma {
                *p = TowerPoint { cell: self.sampler.sample(&mut self.rng), level: 0, offset: 0 };
            }
        }
        Some(*p)
    }
}

/// Correlation curve of `f` and `g` along [`SHARDS`] tower orbits sharing
/// `steps` points, with the sample means of `f` and `g`. Each orbit starts
/// on the base; `batch_len` pairs form one batch.
pub fn observe_tower(
    model: &CmzModel,
    f: impl Fn(&TowerPoint) -> f64 + Sync,
    g: impl Fn(&TowerPoint) -> f64 + Sync,
    lags: &[u64],
    batch_len: u64,
    steps: u64,
    seed: u64,
) -> Result<(CorrelationCurve, f64, f64), EstatError> {
    let budgets = seed::split_work(steps, SHARDS);
    let shards: Vec<Result<(CorrelationAccumulator, f64, f64), EstatError>> = budgets
        .par_iter()
        .enumerate()
        .map(|(shard, &budget)| {
            let mut acc = CorrelationAccumulator::new(lags, batch_len)?;
            let (mut sf, mut sg) = (0.0, 0.0);
            for p in TowerWalk::new(model, seed::shard_rng(seed, shard as u64)).take(budget as usize) {
                let (a, b) = (f(&p), g(&p));
                acc.push(a, b);
                sf += a;
                sg += b;
            }
            Ok((acc, sf, sg))
        })
        .collect();
    let mut merged: Option<CorrelationAccumulator> = None;
    let (mut sf, mut sg) = (0.0, 0.0);
    for part in shards {
        let (acc, a, b) = part?;
        merged = Some(match merged {
            None => acc,
            Some(m) => m.merge(acc),
        });
        sf += a;
        sg += b;
    }
    let curve = merged.ok_or_else(|| EstatError::InsufficientData("no shards".into()))?.finish()?;
    let n = steps.max(1) as f64;
    Ok((curve, sf / n, sg / n))
}

/// Exact correlation of the base indicator under the full tower measure,
/// `C(n) = (u_n - 1/h̄) / h̄` with `u` the renewal sequence of `h`.
pub fn base_indicator_correlation(model: &CmzModel, n_max: usize) -> Vec<f64> {
    let mut ph = vec![0.0; n_max + 1];
    for c in &model.cells {
        if let Some(slot) = ph.get_mut(c.height() as usize) {
            *slot += c.mass;
        }
    }
    let mut u = vec![0.0; n_max + 1];
    u[0] = 1.0;
    for n in 1..=n_max {
        u[n] = (1..=n).map(|k| ph[k] * u[n - k]).sum();
    }
    let hb = model.h_bar;
    u.iter().map(|un| (un - 1.0 / hb) / hb).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HatPoint {
    pub k: u64,
    /// Mass of the inner tower level set `{R = k + 1}`.
    pub start_mass: f64,
    pub ratio: f64,
    /// Estimated by Monte-Carlo rather than exactly.
    pub monte_carlo: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HatRatio {
    pub points: Vec<HatPoint>,
    /// Grid values with an empty start set.
    pub skipped: Vec<u64>,
    /// `-slope` of `ln ratio` against `ln k` over points with positive ratio.
    pub delta: Option<f64>,
    pub used_monte_carlo: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct HatOptions {
    /// Exact evaluation is used while `steps * cells * max σ` stays below this.
    pub node_budget: u64,
    pub mc_samples: u64,
    pub seed: u64,
}

impl Default for HatOptions {
    fn default() -> Self {
        Self { node_budget: 2_000_000_000, mc_samples: 200_000, seed: 0 }
    }
}

/// `b = 2a / |ln ρ|`, so that `ρ^(b ln n) <= n^(-2a)`.
pub fn default_b(a: f64, rho: f64) -> f64 {
    2.0 * a / rho.ln().abs()
}

/// Conditional probability that the first-return map, started in
/// `{R = k + 1}`, visits `{R > k^q}` within `⌊b ln k⌋` steps, for each grid
/// value `k`.
pub fn hat_ratio(model: &CmzModel, b: f64, q: f64, ks: &[u64], opts: HatOptions) -> Result<HatRatio, TowerError> {
    if !(b > 0.0) || !(q > 0.0 && q < 1.0) {
        return Err(TowerError::InvalidModel(format!("need b > 0 and q in (0,1), got b = {b}, q = {q}")));
    }
    let mut points = Vec::new();
    let mut skipped = Vec::new();
    let mut used_mc = false;
    for &k in ks {
        if k < 2 {
            return Err(TowerError::InsufficientRange(format!("grid value k = {k} < 2")));
        }
        let start = k + 1;
        let start_mass: f64 =
            model.cells.iter().map(|c| c.mass * c.returns.iter().filter(|&&r| r == start).count() as f64).sum::<f64>()
                / model.sigma_bar;
        if start_mass == 0.0 {
            skipped.push(k);
            continue;
        }
        let steps = ((b * (k as f64).ln()).floor() as usize).max(1);
        let threshold = (k as f64).powf(q);
        let target = |r: u64| (r - 1) as f64 >= threshold;
        let nodes = steps as u64 * model.cells.len() as u64 * model.max_sigma() as u64;
        let (ratio, mc) = if nodes <= opts.node_budget {
            (hat_exact(model, start, steps, &target), false)
        } else {
            used_mc = true;
            (hat_monte_carlo(model, start, steps, &target, opts.mc_samples, opts.seed ^ k), true)
        };
        points.push(HatPoint { k, start_mass, ratio, monte_carlo: mc });
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = points.iter().filter(|p| p.ratio > 0.0).map(|p| (p.k as f64, p.ratio)).unzip();
    let delta = fit::loglog(&xs, &ys).ok().map(|f| -f.slope);
    Ok(HatRatio { points, skipped, delta, used_monte_carlo: used_mc })
}

fn hat_exact(model: &CmzModel, start: u64, steps: usize, target: &dyn Fn(u64) -> bool) -> f64 {
    let first_target: Vec<Option<usize>> =
        model.cells.iter().map(|c| c.returns.iter().position(|&r| target(r))).collect();
    // fresh[m]: probability that a column entered at its base level hits the
    // target within m steps, counting the base level as step 1.
    let mut fresh = vec![0.0; steps + 1];
    for m in 1..=steps {
        let mut p = 0.0;
        for (c, ft) in model.cells.iter().zip(&first_target) {
            let s = c.sigma as usize;
            if matches!(ft, Some(l) if *l < m) {
                p += c.mass;
            } else if s < m {
                p += c.mass * fresh[m - s];
            }
        }
        fresh[m] = p;
    }
    let mut hit = 0.0;
    let mut total = 0.0;
    for c in &model.cells {
        let s = c.sigma as usize;
        for (l0, _) in c.returns.iter().enumerate().filter(|(_, &r)| r == start) {
            total += c.mass;
            let within = c.returns[l0 + 1..].iter().take(steps).any(|&r| target(r));
            let left = s - 1 - l0;
            let p = if within {
                1.0
            } else if left < steps {
                fresh[steps - left]
            } else {
                0.0
            };
            hit += c.mass * p;
        }
    }
    hit / total
}

fn hat_monte_carlo(
    model: &CmzModel,
    start: u64,
    steps: usize,
    target: &(dyn Fn(u64) -> bool + Sync),
    samples: u64,
    seed_value: u64,
) -> f64 {
    let starts: Vec<(usize, usize, f64)> = model
        .cells
        .iter()
        .enumerate()
        .flat_map(|(i, c)| c.returns.iter().enumerate().filter(|(_, &r)| r == start).map(move |(l, _)| (i, l, c.mass)))
        .collect();
    let start_sampler = WeightedIndex::new(starts.iter().map(|s| s.2)).expect("nonempty start set");
    let cells = cell_sampler(model);
    let budgets = seed::split_work(samples, SHARDS);
    let hits: u64 = budgets
        .par_iter()
        .enumerate()
        .map(|(shard, &n)| {
            let mut rng = seed::shard_rng(seed_value, shard as u64);
            let mut hits = 0u64;
            for _ in 0..n {
                let (mut cell, mut level, _) = starts[start_sampler.sample(&mut rng)];
                for _ in 0..steps {
                    level += 1;
                    if level == model.cells[cell].sigma as usize {
                        cell = cells.sample(&mut rng);
                        level = 0;
                    }
                    if target(model.cells[cell].returns[level]) {
                        hits += 1;
                        break;
                    }
                }
            }
            hits
        })
        .sum();
    hits as f64 / samples as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatioBand {
    pub min: f64,
    pub max: f64,
    /// Least-squares slope of the log ratio against `ln n`.
    pub log_slope: f64,
    pub points: usize,
}

impl RatioBand {
    pub fn width(&self) -> f64 {
        self.max / self.min
    }

    fn from_pairs(ns: &[f64], ratios: &[f64]) -> Result<Self, TowerError> {
        let positive: Vec<(f64, f64)> =
            ns.iter().zip(ratios).filter(|(_, r)| **r > 0.0 && r.is_finite()).map(|(n, r)| (*n, *r)).collect();
        let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let max = ratios.iter().copied().fold(0.0, f64::max);
        let log_slope = if positive.len() >= 2 {
            let (x, y): (Vec<f64>, Vec<f64>) = positive.iter().map(|(n, r)| (n.ln(), r.ln())).unzip();
            fit::ols(&x, &y).map(|f| f.slope).unwrap_or(0.0)
        } else {
            0.0
        };
        Ok(Self { min, max, log_slope, points: ratios.len() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    /// The hypothesis of the implication is not met on the window.
    NotApplicable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepEntry {
    pub a: f64,
    /// `H_n n^a` does not decay on the window.
    pub hypothesis: bool,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MainReport {
    pub window: (u64, u64),
    pub a_over_r: RatioBand,
    pub a_over_h: RatioBand,
    pub h_over_r: RatioBand,
    /// Upper transfer: `H ≪ r` implies `A ≪ r`.
    pub verdict_a: Verdict,
    /// Lower transfer: `H ≫ n^-a` implies `A ≫ H`.
    pub verdict_b: Verdict,
    /// `A ≍ r` and `A ≍ H` with both bands narrower than `max_band`.
    pub verdict_c: Verdict,
    pub sweep: Vec<SweepEntry>,
    /// Window points where `H_n = 0` and no ratio is defined.
    pub undefined_points: usize,
}

#[derive(Debug, Clone)]
pub struct MainOptions {
    /// Defaults to `[N/10, N]`.
    pub window: Option<(u64, u64)>,
    /// Tolerance on log-slopes of ratios that should stay bounded.
    pub slope_tol: f64,
    pub max_band: f64,
    pub sweep: Vec<f64>,
}

impl Default for MainOptions {
    fn default() -> Self {
        Self { window: None, slope_tol: 0.1, max_band: 10.0, sweep: vec![0.5, 1.0, 2.0, 3.0, 4.0, 6.0] }
    }
}

/// Compares the exact full return tail `A` with a reference `r` and with the
/// geometric return tail `H` on a window of `n`.
///
/// Boundedness is judged by log-slopes: a ratio is taken to be bounded above
/// when its log-slope in `ln n` is at most `slope_tol`, and bounded below when
/// it is at least `-slope_tol`.
pub fn verify_main_theorem(
    model: &CmzModel,
    r: &RegVar,
    n_max: u64,
    a: f64,
    opts: &MainOptions,
) -> Result<MainReport, TowerError> {
    let (lo, hi) = opts.window.unwrap_or((n_max / 10, n_max));
    if lo < 1 || hi > n_max || hi < lo.saturating_mul(2) || n_max < 10 {
        return Err(TowerError::InsufficientRange(format!(
            "window [{lo}, {hi}] with N = {n_max} needs 1 <= lo, 2 lo <= hi <= N and N >= 10"
        )));
    }
    let tails = exact_tails(model, n_max);
    let mut ns = Vec::new();
    let (mut ar, mut ah, mut hr, mut hn) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut undefined = 0;
    for n in lo..=hi {
        let an = tails.a.at(n).unwrap_or(0.0);
        let h = tails.h.at(n).unwrap_or(0.0);
        let rn = r.evaluate(n as f64)?;
        if h == 0.0 {
            undefined += 1;
            continue;
        }
        ns.push(n as f64);
        ar.push(an / rn);
        ah.push(an / h);
        hr.push(h / rn);
        hn.push(h);
    }
    if ns.len() < 3 {
        return Err(TowerError::InsufficientRange(format!("only {} window points with H_n > 0", ns.len())));
    }
    let a_over_r = RatioBand::from_pairs(&ns, &ar)?;
    let a_over_h = RatioBand::from_pairs(&ns, &ah)?;
    let h_over_r = RatioBand::from_pairs(&ns, &hr)?;
    let tol = opts.slope_tol;
    let implication = |hyp: bool, concl: bool| match (hyp, concl) {
        (false, _) => Verdict::NotApplicable,
        (true, true) => Verdict::Pass,
        (true, false) => Verdict::Fail,
    };
    let verdict_a = implication(h_over_r.log_slope <= tol, a_over_r.log_slope <= tol && a_over_r.max.is_finite());
    let lower_b = |a: f64| -> Result<bool, TowerError> {
        let weighted: Vec<f64> = ns.iter().zip(&hn).map(|(n, h)| h * n.powf(a)).collect();
        Ok(RatioBand::from_pairs(&ns, &weighted)?.log_slope >= -tol)
    };
    let b_concl = a_over_h.log_slope >= -tol && a_over_h.min > 0.0;
    let verdict_b = implication(lower_b(a)?, b_concl);
    let bounded = |band: &RatioBand| band.log_slope.abs() <= tol && band.min > 0.0 && band.width() < opts.max_band;
    let verdict_c = if bounded(&a_over_r) && bounded(&a_over_h) { Verdict::Pass } else { Verdict::Fail };
    let sweep = opts
        .sweep
        .iter()
        .map(|&a| {
            let hyp = lower_b(a)?;
            Ok(SweepEntry { a, hypothesis: hyp, verdict: implication(hyp, b_concl) })
        })
        .collect::<Result<Vec<_>, TowerError>>()?;
    Ok(MainReport {
        window: (lo, hi),
        a_over_r,
        a_over_h,
        h_over_r,
        verdict_a,
        verdict_b,
        verdict_c,
        sweep,
        undefined_points: undefined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_level() -> CmzModel {
        CmzModel::from_cells(vec![Cell { mass: 1.0, sigma: 2, returns: vec![1, 5] }], 0.5, false).unwrap()
    }

    #[test]
    fn two_level_tails() {
        let m = two_level();
        assert_eq!(m.h_bar(), 6.0);
        assert_eq!(m.sigma_bar(), 2.0);
        let t = exact_tails(&m, 10);
        assert_eq!(t.a.at(5), Some(1.0));
        assert_eq!(t.a.at(6), Some(0.0));
        assert_eq!(t.h.at(4), Some(0.5));
        assert_eq!(t.h.at(5), Some(0.0));
        assert_eq!(t.d.at(1), Some(0.5));
        assert!(t.a.exact && t.h.exact && t.d.exact);
    }

    #[test]
    fn unit_tower() {
        let m = CmzModel::from_cells(vec![Cell { mass: 1.0, sigma: 1, returns: vec![1] }], 0.5, false).unwrap();
        assert_eq!(m.h_bar(), 1.0);
        let t = exact_tails(&m, 5);
        assert!(t.a.survivals()[1..].iter().all(|&x| x == 0.0));
        let s = simulate_tower(&m, 1000, 3);
        assert_eq!(s.steps, 1000);
        assert!(s.laps.iter().all(|&l| l == 1));
        assert!(s.excursion_max.iter().all(|&i| i == 1));
    }

    #[test]
    fn zero_steps_is_empty() {
        let s = simulate_tower(&two_level(), 0, 1);
        assert_eq!(s.base_returns, 0);
        assert!(s.a.is_empty() && s.h.is_empty() && s.d.is_empty());
    }

    #[test]
    fn invalid_models_rejected() {
        let bad = |cells, rho| CmzModel::from_cells(cells, rho, false).is_err();
        assert!(bad(vec![], 0.5));
        assert!(bad(vec![Cell { mass: 1.0, sigma: 2, returns: vec![1] }], 0.5));
        assert!(bad(vec![Cell { mass: 0.5, sigma: 1, returns: vec![1] }], 0.5));
        assert!(bad(vec![Cell { mass: 1.0, sigma: 1, returns: vec![0] }], 0.5));
        assert!(bad(vec![Cell { mass: 1.0, sigma: 1, returns: vec![1] }], 1.0));
    }

    #[test]
    fn value_grid_shape() {
        assert_eq!(value_grid(3), vec![2, 3, 4]);
        let g = value_grid(500);
        assert_eq!(g.len(), 500);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(g[62], 64);
        assert!((*g.last().unwrap() as f64 - 1e5).abs() < 1.0);
    }

    #[test]
    fn synthetic_matches_target_law() {
        let r = RegVar::pure_power(3.0);
        let m = build_synthetic(&r, 0.5, 2000, 0.0, 11).unwrap();
        let t = exact_tails(&m, 63);
        for n in 1..63u64 {
            let want = (n as f64).powi(-3);
            let got = t.h.at(n).unwrap();
            assert!((got - want).abs() < 1e-12 + 1e-9 * want, "n = {n}: {got} vs {want}");
        }
        assert!(m.inner_tail_constant() < 2.0);
    }

    #[test]
    fn synthetic_rejects_heavy_tail() {
        assert!(matches!(
            build_synthetic(&RegVar::pure_power(1.0), 0.5, 100, 0.0, 1),
            Err(TowerError::NonIntegrable { .. })
        ));
        assert!(build_synthetic(&RegVar::pure_power(3.0), 0.5, 5, 0.0, 1).is_err());
    }

    #[test]
    fn model_json_round_trip() {
        let m = build_synthetic(&RegVar::pure_power(2.5), 0.4, 100, 0.3, 5).unwrap();
        let back: CmzModel = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(back.cells().len(), m.cells().len());
        assert!((back.h_bar() - m.h_bar()).abs() < 1e-12 * m.h_bar());
        let v: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        assert!(v["cells"][0]["R"].is_array());
    }

    #[test]
    fn tail_csv_header() {
        let mut buf = Vec::new();
        exact_tails(&two_level(), 3).a.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("n,survival,stderr,kind,exact\n"));
        assert!(text.contains(",A,true"));
    }

    #[test]
    fn renewal_correlation_of_unit_tower_vanishes() {
        let m = CmzModel::from_cells(vec![Cell { mass: 1.0, sigma: 1, returns: vec![1] }], 0.5, false).unwrap();
        assert!(base_indicator_correlation(&m, 5).iter().all(|c| c.abs() < 1e-15));
    }

    #[test]
    fn hat_ratio_on_memoryless_model() {
        // σ ≡ 1: every step draws a fresh cell, so the hit probability is
        // 1 - (1 - P(target))^steps.
        let cells: Vec<Cell> = (2..=40u64).map(|v| Cell { mass: 1.0, sigma: 1, returns: vec![v] }).collect();
        let total = cells.len() as f64;
        let cells = cells.into_iter().map(|c| Cell { mass: 1.0 / total, ..c }).collect();
        let m = CmzModel::from_cells(cells, 0.5, false).unwrap();
        let (b, q, k) = (2.0, 0.9, 20u64);
        let hr = hat_ratio(&m, b, q, &[k], HatOptions::default()).unwrap();
        let steps = (b * (k as f64).ln()).floor() as i32;
        let thr = (k as f64).powf(q);
        let p = (2..=40u64).filter(|v| (*v - 1) as f64 >= thr).count() as f64 / total;
        let want = 1.0 - (1.0 - p).powi(steps);
        assert!((hr.points[0].ratio - want).abs() < 1e-12);
        let mc = hat_ratio(&m, b, q, &[k], HatOptions { node_budget: 0, ..Default::default() }).unwrap();
        assert!(mc.used_monte_carlo);
        let se = (want * (1.0 - want) / 200_000.0).sqrt();
        assert!((mc.points[0].ratio - want).abs() < 4.0 * se);
    }

    #[test]
    fn hat_ratio_empty_target() {
        let m = two_level();
        // Start set {R = 5} (k = 4); target R - 1 >= 4^0.99 ≈ 3.95 only at R = 5,
        // which the start level is already past.
        let hr = hat_ratio(&m, 1.0, 0.99, &[4, 7], HatOptions::default()).unwrap();
        assert_eq!(hr.skipped, vec![7]);
        assert_eq!(hr.points[0].ratio, 0.0);
    }

    #[test]
    fn main_theorem_identity_and_errors() {
        let cells = vec![
            Cell { mass: 0.5, sigma: 1, returns: vec![3] },
            Cell { mass: 0.3, sigma: 1, returns: vec![40] },
            Cell { mass: 0.2, sigma: 1, returns: vec![90] },
        ];
        let m = CmzModel::from_cells(cells, 0.5, false).unwrap();
        let r = RegVar::pure_power(3.0);
        let rep = verify_main_theorem(&m, &r, 100, 1.0, &MainOptions::default()).unwrap();
        assert_eq!(rep.a_over_h.min, 1.0);
        assert_eq!(rep.a_over_h.max, 1.0);
        assert!(matches!(
            verify_main_theorem(&m, &r, 5, 1.0, &MainOptions::default()),
            Err(TowerError::InsufficientRange(_))
        ));
    }
}
