//! Estimators and predictors for return tails, correlations and limit laws.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::fit;
use crate::rv::{self, RegVar, RvError};
use crate::tower::{TailCurve, TailEntry, TailKind};

#[derive(Debug, Error)]
pub enum EstatError {
    #[error("empty input")]
    Empty,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("correlation sum diverges for tail index alpha = {alpha} <= 1")]
    Divergent { alpha: f64 },
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error(transparent)]
    Rv(#[from] RvError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Survival curve of an integer sample with binomial standard errors.
pub fn empirical_tail(samples: &[u64]) -> Result<TailCurve, EstatError> {
    let max = *samples.iter().max().ok_or(EstatError::Empty)?;
    let mut counts = vec![0u64; max as usize + 1];
    for &s in samples {
        counts[s as usize] += 1;
    }
    Ok(tail_from_counts(&counts))
}

/// Survival curve from a histogram `counts[v] = #{samples equal to v}`.
pub fn tail_from_counts(counts: &[u64]) -> TailCurve {
    let total: u64 = counts.iter().sum();
    let m = total as f64;
    let mut above = total;
    let entries = counts
        .iter()
        .enumerate()
        .map(|(n, &c)| {
            above -= c;
            let p = if total > 0 { above as f64 / m } else { 0.0 };
            TailEntry { n: n as u64, survival: p, stderr: Some((p * (1.0 - p) / m.max(1.0)).sqrt()) }
        })
        .collect();
    TailCurve { entries, kind: TailKind::RLevel, exact: false }
}

/// Lags `0, 1, 2, 3, 5, 8, ...` up to `max`.
pub fn fibonacci_lags(max: u64) -> Vec<u64> {
    let mut lags = vec![0];
    let (mut a, mut b) = (1u64, 2u64);
    while a <= max {
        lags.push(a);
        (a, b) = (b, a + b);
    }
    lags
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationCurve {
    pub lags: Vec<u64>,
    pub estimates: Vec<f64>,
    /// Batch-means standard error.
    pub stderr: Vec<f64>,
    /// Number of `(t, t + n)` pairs behind each estimate.
    pub samples: Vec<u64>,
}

impl CorrelationCurve {
    pub fn at(&self, lag: u64) -> Option<f64> {
        self.lags.iter().position(|&l| l == lag).map(|i| self.estimates[i])
    }

    /// CSV with header `n,estimate,stderr,samples`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), EstatError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["n", "estimate", "stderr", "samples"])?;
        for i in 0..self.lags.len() {
            out.write_record([
                self.lags[i].to_string(),
                format!("{:e}", self.estimates[i]),
                format!("{:e}", self.stderr[i]),
                self.samples[i].to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct PairSums {
    fg: f64,
    f: f64,
    g: f64,
    count: u64,
}

impl PairSums {
    fn estimate(&self) -> f64 {
        let c = self.count as f64;
        self.fg / c - (self.f / c) * (self.g / c)
    }

    /// Same sums with values shifted by `df`, `dg` more.
    fn shifted(&self, df: f64, dg: f64) -> PairSums {
        let c = self.count as f64;
        PairSums {
            fg: self.fg - dg * self.f - df * self.g + c * df * dg,
            f: self.f - c * df,
            g: self.g - c * dg,
            count: self.count,
        }
    }

    fn add(&mut self, o: &PairSums) {
        self.fg += o.fg;
        self.f += o.f;
        self.g += o.g;
        self.count += o.count;
    }
}

/// Streaming estimator of `Ĉ(n) = avg(f_t g_{t+n}) - avg(f_t) avg(g_{t+n})`,
/// the averages running over the same pairs.
///
/// Values are shifted by the first observation, which leaves the estimator
/// unchanged in exact arithmetic and makes it exactly zero for constant
/// input. A pair belongs to the batch containing its later index.
#[derive(Debug, Clone)]
pub struct CorrelationAccumulator {
    lags: Vec<u64>,
    batch_len: u64,
    ring_f: Vec<f64>,
    mask: usize,
    shift: Option<(f64, f64)>,
    t: u64,
    current: Vec<PairSums>,
    batches: Vec<Vec<PairSums>>,
}

impl CorrelationAccumulator {
    pub fn new(lags: &[u64], batch_len: u64) -> Result<Self, EstatError> {
        let max_lag = *lags.iter().max().ok_or(EstatError::Empty)?;
        if batch_len < 10 * max_lag.max(1) {
            return Err(EstatError::InsufficientData(format!("batch length {batch_len} below 10 x max lag {max_lag}")));
        }
        let size = (max_lag as usize + 1).next_power_of_two();
        Ok(Self {
            lags: lags.to_vec(),
            batch_len,
            ring_f: vec![0.0; size],
            mask: size - 1,
            shift: None,
            t: 0,
            current: vec![PairSums::default(); lags.len()],
            batches: Vec::new(),
        })
    }

    #[inline]
    pub fn push(&mut self, f: f64, g: f64) {
        let (f0, g0) = *self.shift.get_or_insert((f, g));
        let (f, g) = (f - f0, g - g0);
        let t = self.t as usize;
        self.ring_f[t & self.mask] = f;
        for (lag, s) in self.lags.iter().zip(self.current.iter_mut()) {
            let lag = *lag as usize;
            if lag <= t {
                let fp = self.ring_f[(t - lag) & self.mask];
                s.fg += fp * g;
                s.f += fp;
                s.g += g;
                s.count += 1;
            }
        }
        self.t += 1;
        if self.t.is_multiple_of(self.batch_len) {
            self.batches.push(std::mem::replace(&mut self.current, vec![PairSums::default(); self.lags.len()]));
        }
    }

    pub fn len(&self) -> u64 {
        self.t
    }

    pub fn is_empty(&self) -> bool {
        self.t == 0
    }

    /// Completed batches of this stream followed by those of `other`.
    /// Trailing partial batches are discarded.
    pub fn merge(mut self, other: CorrelationAccumulator) -> Self {
        match (self.shift, other.shift) {
            (Some((f0, g0)), Some((f1, g1))) => {
                // Re-express the other stream's sums relative to our shift.
                let (df, dg) = (f0 - f1, g0 - g1);
                self.batches.extend(other.batches.into_iter().map(|b| b.iter().map(|s| s.shifted(df, dg)).collect()));
            }
            (None, _) => {
                self.shift = other.shift;
                self.batches.extend(other.batches);
            }
            (Some(_), None) => {}
        }
        self
    }

    pub fn finish(&self) -> Result<CorrelationCurve, EstatError> {
        let nb = self.batches.len();
        if nb < 2 {
            return Err(EstatError::InsufficientData(format!("{nb} complete batches, need at least 2")));
        }
        let mut estimates = Vec::with_capacity(self.lags.len());
        let mut stderr = Vec::with_capacity(self.lags.len());
        let mut samples = Vec::with_capacity(self.lags.len());
        for i in 0..self.lags.len() {
            let mut total = PairSums::default();
            let per_batch: Vec<f64> = self
                .batches
                .iter()
                .map(|b| {
                    total.add(&b[i]);
                    b[i].estimate()
                })
                .collect();
            let (_, var) = fit::mean_var(&per_batch);
            estimates.push(total.estimate());
            stderr.push((var / nb as f64).sqrt());
            samples.push(total.count);
        }
        Ok(CorrelationCurve { lags: self.lags.clone(), estimates, stderr, samples })
    }
}

/// Default number of batches for [`correlation`].
pub const DEFAULT_BATCHES: u64 = 100;

/// Correlation curve of two aligned series. `batch_len` defaults to a
/// hundredth of the series, but at least ten times the largest lag.
pub fn correlation(f: &[f64], g: &[f64], lags: &[u64], batch_len: Option<u64>) -> Result<CorrelationCurve, EstatError> {
    if f.len() != g.len() {
        return Err(EstatError::Domain(format!("series lengths differ: {} vs {}", f.len(), g.len())));
    }
    let max_lag = *lags.iter().max().ok_or(EstatError::Empty)?;
    let t = f.len() as u64;
    if t < 10 * max_lag.max(1) {
        return Err(EstatError::InsufficientData(format!("series length {t} below 10 x max lag {max_lag}")));
    }
    let batch_len = batch_len.unwrap_or((t / DEFAULT_BATCHES).max(10 * max_lag.max(1)));
    let mut acc = CorrelationAccumulator::new(lags, batch_len)?;
    for (x, y) in f.iter().zip(g) {
        acc.push(*x, *y);
    }
    acc.finish()
}

/// Source of the base return tail for [`predicted_correlation`].
pub enum TailSource<'a> {
    /// Exact finite tail; entries past the curve are zero.
    Curve(&'a TailCurve),
    /// Regularly varying proxy `A_k ≈ r(k)`.
    Proxy(&'a RegVar),
}

/// `h̄ Σ_{k>=n} A_k |∫f ∫g|`.
pub fn predicted_correlation(
    tail: TailSource<'_>,
    h_bar: f64,
    mean_f: f64,
    mean_g: f64,
    n: u64,
) -> Result<f64, EstatError> {
    let product = (mean_f * mean_g).abs();
    let sum = match tail {
        TailSource::Curve(c) => c.entries.iter().filter(|e| e.n >= n).map(|e| e.survival).sum(),
        TailSource::Proxy(r) => {
            if r.alpha() <= 1.0 {
                return Err(EstatError::Divergent { alpha: r.alpha() });
            }
            if product == 0.0 {
                return Ok(0.0);
            }
            rv::tail_sum_and_integral(r, n, rv::TailSumOptions::default())?.sum
        }
    };
    Ok(h_bar * sum * product)
}

/// Error term `ζ_a(n)` of the exact correlation asymptotics.
pub fn zeta(a: f64, n: u64) -> Result<f64, EstatError> {
    if !(a > 1.0) {
        return Err(EstatError::Domain(format!("zeta needs a > 1, got {a}")));
    }
    if n < 2 {
        return Err(EstatError::Domain(format!("zeta needs n >= 2, got {n}")));
    }
    let x = n as f64;
    Ok(if a > 2.0 {
        x.powf(-a)
    } else if a == 2.0 {
        x.powi(-2) * x.ln()
    } else {
        x.powf(-2.0 * (a - 1.0))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GreenKubo {
    /// `Ĉ(0) + 2 Σ_{1<=n<=L} Ĉ(n)`; the omitted tail is at most `tail_bound`.
    pub c2: f64,
    /// Power-law extrapolation of `2 Σ_{n>L} |Ĉ(n)|`; infinite when the
    /// fitted decay is not summable.
    pub tail_bound: f64,
    /// Whether the tail bound is below 5% of `|partial|`.
    pub tail_ok: bool,
    pub max_lag: u64,
}

/// Green-Kubo variance from a curve with lags `0, 1, ..., L`.
///
/// `mean` is the sample mean of the observable; it must be within 5% of
/// `√Ĉ(0)` of zero.
pub fn green_kubo_variance(curve: &CorrelationCurve, mean: f64) -> Result<GreenKubo, EstatError> {
    if curve.lags.is_empty() || curve.lags.iter().enumerate().any(|(i, &l)| l != i as u64) {
        return Err(EstatError::Domain("Green-Kubo needs consecutive lags 0, 1, ..., L".into()));
    }
    let c0 = curve.estimates[0];
    if mean.abs() > 0.05 * c0.max(0.0).sqrt() + 1e-12 {
        return Err(EstatError::ContractViolation(format!(
            "observable is not centered: mean {mean} vs sd {}",
            c0.max(0.0).sqrt()
        )));
    }
    let partial = c0 + 2.0 * curve.estimates[1..].iter().sum::<f64>();
    let max_lag = *curve.lags.last().expect("nonempty");
    // Fit |Ĉ(n)| ~ c n^-s over the upper half of the lags.
    let half = (max_lag / 2).max(1);
    let (xs, ys): (Vec<f64>, Vec<f64>) =
        curve.lags.iter().zip(&curve.estimates).filter(|(l, _)| **l >= half).map(|(l, e)| (*l as f64, e.abs())).unzip();
    let tail_bound = match fit::loglog(&xs, &ys) {
        Ok(f) if f.slope < -1.0 => {
            let s = -f.slope;
            2.0 * f.intercept.exp() * (max_lag as f64).powf(1.0 - s) / (s - 1.0)
        }
        Ok(_) => f64::INFINITY,
        Err(_) => 0.0,
    };
    let tail_ok = tail_bound < 0.05 * partial.abs();
    Ok(GreenKubo { c2: partial, tail_bound, tail_ok, max_lag })
}

/// Exponents `(1/β, (1+γ)/β + ε)` of the ASIP error rate.
pub fn asip_exponents(beta: f64, gamma: f64, eps: f64) -> Result<(f64, f64), EstatError> {
    if !(beta > 2.0) {
        return Err(EstatError::Domain(format!("ASIP rate needs beta > 2, got {beta}")));
    }
    if !(eps >= 0.0) {
        return Err(EstatError::Domain(format!("epsilon must be non-negative, got {eps}")));
    }
    Ok((1.0 / beta, (1.0 + gamma) / beta + eps))
}

/// `n^(1/β) (ln n)^((1+γ)/β + ε)`.
pub fn asip_rate(beta: f64, gamma: f64, eps: f64, n: f64) -> Result<f64, EstatError> {
    let (p, q) = asip_exponents(beta, gamma, eps)?;
    if !(n >= 2.0) {
        return Err(EstatError::Domain(format!("ASIP rate needs n >= 2, got {n}")));
    }
    Ok(n.powf(p) * n.ln().powf(q))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CltReport {
    pub blocks: usize,
    pub block_len: u64,
    pub skewness: f64,
    /// Excess kurtosis.
    pub kurtosis: f64,
    /// D'Agostino-Pearson omnibus statistic and its chi-square(2) p-value.
    pub k2: f64,
    pub p_value: f64,
    pub degenerate: bool,
    /// `(n, Var(S_n)/n)` for `n` = block length times 1, 2, 4, ...
    pub variance_ratio: Vec<(u64, f64)>,
}

/// Moment diagnostics of block sums `S` of length `block_len`, and the
/// variance ratio of sums over 1, 2, 4, ... consecutive blocks while at
/// least 100 aggregated blocks remain.
pub fn clt_diagnostic(block_sums: &[f64], block_len: u64) -> Result<CltReport, EstatError> {
    let n = block_sums.len();
    if n < 100 {
        return Err(EstatError::InsufficientData(format!("{n} blocks, need at least 100")));
    }
    let nf = n as f64;
    let mean = block_sums.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in block_sums {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    let mut variance_ratio = Vec::new();
    let mut group = 1usize;
    while n / group >= 100 {
        let sums: Vec<f64> = block_sums.chunks_exact(group).map(|c| c.iter().sum()).collect();
        let (_, var) = fit::mean_var(&sums);
        let len = block_len * group as u64;
        variance_ratio.push((len, var / len as f64));
        group *= 2;
    }
    if m2 <= f64::MIN_POSITIVE * mean.abs().max(1.0) || m2 == 0.0 {
        return Ok(CltReport {
            blocks: n,
            block_len,
            skewness: 0.0,
            kurtosis: 0.0,
            k2: 0.0,
            p_value: f64::NAN,
            degenerate: true,
            variance_ratio,
        });
    }
    let g1 = m3 / m2.powf(1.5);
    let b2 = m4 / (m2 * m2);
    let k2 = skewness_z(g1, nf).powi(2) + kurtosis_z(b2, nf).powi(2);
    Ok(CltReport {
        blocks: n,
        block_len,
        skewness: g1,
        kurtosis: b2 - 3.0,
        k2,
        p_value: (-k2 / 2.0).exp(),
        degenerate: false,
        variance_ratio,
    })
}

/// D'Agostino's normal approximation for the sample skewness.
fn skewness_z(g1: f64, n: f64) -> f64 {
    let y = g1 * ((n + 1.0) * (n + 3.0) / (6.0 * (n - 2.0))).sqrt();
    let beta2 =
        3.0 * (n * n + 27.0 * n - 70.0) * (n + 1.0) * (n + 3.0) / ((n - 2.0) * (n + 5.0) * (n + 7.0) * (n + 9.0));
    let w2 = -1.0 + (2.0 * (beta2 - 1.0)).sqrt();
    let delta = 1.0 / (0.5 * w2.ln()).sqrt();
    let alpha = (2.0 / (w2 - 1.0)).sqrt();
    let t = y / alpha;
    delta * (t + (t * t + 1.0).sqrt()).ln()
}

/// Anscombe-Glynn normal approximation for the sample kurtosis.
fn kurtosis_z(b2: f64, n: f64) -> f64 {
    let e = 3.0 * (n - 1.0) / (n + 1.0);
    let var = 24.0 * n * (n - 2.0) * (n - 3.0) / ((n + 1.0).powi(2) * (n + 3.0) * (n + 5.0));
    let x = (b2 - e) / var.sqrt();
    let sb1 = 6.0 * (n * n - 5.0 * n + 2.0) / ((n + 7.0) * (n + 9.0))
        * (6.0 * (n + 3.0) * (n + 5.0) / (n * (n - 2.0) * (n - 3.0))).sqrt();
    let a = 6.0 + 8.0 / sb1 * (2.0 / sb1 + (1.0 + 4.0 / (sb1 * sb1)).sqrt());
    let term = (1.0 - 2.0 / a) / (1.0 + x * (2.0 / (a - 4.0)).sqrt());
    ((1.0 - 2.0 / (9.0 * a)) - term.cbrt()) / (2.0 / (9.0 * a)).sqrt()
}

/// Where an observable may be non-zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Support {
    /// The whole phase space.
    Full,
    /// The fast subset only.
    Fast,
}

type SectionFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Bounded observable on section coordinates. The regularity fields are
/// declared metadata and are not verified.
#[derive(Clone)]
pub struct Observable {
    pub name: String,
    pub support: Support,
    pub sup_bound: f64,
    pub holder_exponent: f64,
    pub mean_zero: bool,
    /// Contraction rate of the dynamically Hölder seminorm.
    pub vartheta: Option<f64>,
    pub nominal_norm: Option<f64>,
    /// Subtracted after the support restriction.
    offset: f64,
    eval: SectionFn,
}

impl fmt::Debug for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Observable")
            .field("name", &self.name)
            .field("support", &self.support)
            .field("sup_bound", &self.sup_bound)
            .field("holder_exponent", &self.holder_exponent)
            .field("mean_zero", &self.mean_zero)
            .finish_non_exhaustive()
    }
}

impl Observable {
    pub fn new(
        name: impl Into<String>,
        support: Support,
        sup_bound: f64,
        holder_exponent: f64,
        eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            support,
            sup_bound,
            holder_exponent,
            mean_zero: false,
            vartheta: None,
            nominal_norm: None,
            offset: 0.0,
            eval: Arc::new(eval),
        }
    }

    /// Smooth bump `height · exp(1 - 1/(1 - |x - c|²/ρ²))` inside radius `ρ`.
    pub fn bump(center: Vec<f64>, radius: f64, height: f64, support: Support) -> Self {
        let name = format!("bump({center:?}, {radius})");
        Self::new(name, support, height.abs(), 1.0, move |x| {
            let d2: f64 = x.iter().zip(&center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (radius * radius);
            if d2 < 1.0 {
                height * (1.0 - 1.0 / (1.0 - d2)).exp()
            } else {
                0.0
            }
        })
    }

    /// `f - mean` on the whole space, flagged as centered.
    pub fn centered(self, mean: f64) -> Self {
        Self {
            name: format!("{} - {mean}", self.name),
            sup_bound: self.sup_bound + mean.abs(),
            mean_zero: true,
            offset: self.offset + mean,
            ..self
        }
    }

    /// Value at a section point. [`Support::Fast`] observables vanish off
    /// the fast subset before any centering offset is applied.
    #[inline]
    pub fn eval(&self, coords: &[f64], in_fast: bool) -> f64 {
        let raw = if self.support == Support::Fast && !in_fast { 0.0 } else { (self.eval)(coords) };
        raw - self.offset
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn point_mass_tail() {
        let t = empirical_tail(&[5; 10]).unwrap();
        for n in 0..5 {
            assert_eq!(t.at(n), Some(1.0));
        }
        assert_eq!(t.at(5), Some(0.0));
        assert!(empirical_tail(&[]).is_err());
    }

    #[test]
    fn fibonacci_grid() {
        assert_eq!(fibonacci_lags(30), vec![0, 1, 2, 3, 5, 8, 13, 21]);
    }

    #[test]
    fn constant_series_has_zero_correlation() {
        let f = vec![3.7; 1000];
        let c = correlation(&f, &f, &[0, 1, 5], None).unwrap();
        assert!(c.estimates.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn correlation_requires_length() {
        let f = vec![0.0; 50];
        assert!(matches!(correlation(&f, &f, &[10], None), Err(EstatError::InsufficientData(_))));
    }

    #[test]
    fn bernoulli_symbols_uncorrelated() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f: Vec<f64> = (0..200_000).map(|_| f64::from(rng.random::<bool>())).collect();
        let c = correlation(&f, &f, &[0, 1, 2, 3, 5, 8], None).unwrap();
        assert!((c.estimates[0] - 0.25).abs() < 0.01);
        for i in 1..c.lags.len() {
            assert!(c.estimates[i].abs() < 4.0 * c.stderr[i], "lag {}: {:?}", c.lags[i], c);
        }
    }

    #[test]
    fn predictor_examples() {
        let r = RegVar::pure_power(3.0);
        let p = predicted_correlation(TailSource::Proxy(&r), 2.0, 1.0, 1.0, 10).unwrap();
        // h̄ Σ_{k≥10} k^-3 with the sum taken as ζ(3) minus its first nine terms.
        let zeta3 = 1.202_056_903_159_594_2;
        let head: f64 = (1..10).map(|k| (k as f64).powi(-3)).sum();
        assert!((p - 2.0 * (zeta3 - head)).abs() < 1e-9, "{p}");
        assert_eq!(predicted_correlation(TailSource::Proxy(&r), 2.0, 0.0, 1.0, 10).unwrap(), 0.0);
        assert!(predicted_correlation(TailSource::Proxy(&RegVar::pure_power(1.0)), 2.0, 1.0, 1.0, 10).is_err());
    }

    #[test]
    fn zeta_cases() {
        assert!((zeta(3.0, 10).unwrap() - 0.001).abs() < 1e-15);
        assert!((zeta(2.0, 10).unwrap() - 0.01 * 10f64.ln()).abs() < 1e-15);
        assert!((zeta(1.5, 100).unwrap() - 0.01).abs() < 1e-15);
        assert!(zeta(1.0, 10).is_err());
    }

    fn curve(estimates: Vec<f64>) -> CorrelationCurve {
        let n = estimates.len();
        CorrelationCurve { lags: (0..n as u64).collect(), estimates, stderr: vec![0.0; n], samples: vec![1; n] }
    }

    #[test]
    fn green_kubo_examples() {
        let mut e = vec![1.0];
        e.extend(std::iter::repeat_n(0.0, 20));
        assert_eq!(green_kubo_variance(&curve(e), 0.0).unwrap().c2, 1.0);

        let e: Vec<f64> = (0..60).map(|n| (-0.5f64).powi(n)).collect();
        let gk = green_kubo_variance(&curve(e), 0.0).unwrap();
        assert!((gk.c2 - 1.0 / 3.0).abs() < 1e-9);
        assert!(gk.tail_ok);

        let e: Vec<f64> = (0..10).map(|n| if n == 0 { 1.0 } else { 0.0 }).collect();
        assert!(matches!(green_kubo_variance(&curve(e), 0.5), Err(EstatError::ContractViolation(_))));
    }

    #[test]
    fn asip_examples() {
        let v = asip_rate(3.0, 0.0, 0.0, 3f64.exp()).unwrap();
        assert!((v - 1f64.exp() * 3f64.powf(1.0 / 3.0)).abs() < 1e-12);
        assert!(asip_rate(2.0, 0.0, 0.1, 10.0).is_err());
    }

    #[test]
    fn clt_constant_is_degenerate() {
        let r = clt_diagnostic(&[2.0; 200], 10).unwrap();
        assert!(r.degenerate);
        assert!(r.variance_ratio.iter().all(|(_, v)| *v == 0.0));
        assert!(clt_diagnostic(&[1.0; 50], 10).is_err());
    }

    #[test]
    fn bump_support() {
        let b = Observable::bump(vec![0.0, 0.0], 1.0, 2.0, Support::Fast);
        assert_eq!(b.eval(&[0.0, 0.0], true), 2.0);
        assert_eq!(b.eval(&[0.0, 0.0], false), 0.0);
        assert_eq!(b.eval(&[1.0, 0.5], true), 0.0);
        let c = b.centered(0.5);
        assert!(c.mean_zero);
        assert_eq!(c.eval(&[0.0, 0.0], true), 1.5);
        // The offset is applied after the support gate.
        assert_eq!(c.eval(&[0.0, 0.0], false), -0.5);
    }
}
