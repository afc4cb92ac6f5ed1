//! Collision maps of the physical examples and their first-return streams.
//!
//! A [`System`] pairs a collision map `T` with a fast subset `M̂` (the
//! section). A [`Walker`] follows one orbit of `T` and flags section visits;
//! [`first_return_stream`] and [`return_histogram`] decompose orbits into
//! successive returns and report the return time `R` of each section point.
//!
//! Runs are split into [`SHARDS`] independent orbits seeded from
//! `(seed, shard)`, so output depends on the seed only, not on the number
//! of worker threads. Shard outputs are concatenated in shard order.

pub mod billiard;
pub mod falling_balls;
pub mod tables;

use std::collections::VecDeque;
use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estat::{CorrelationAccumulator, CorrelationCurve, EstatError, Observable};
use crate::seed::{shard_rng, split_work};
use crate::tower::{TailCurve, SHARDS};
use billiard::{BilliardTable, CollisionState, Curvature, Shape};
use falling_balls::{BallsEvent, BallsState, FallingBalls};

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate event: {0}")]
    Degenerate(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("invalid table: {0}")]
    InvalidTable(String),
    #[error("grazing collision")]
    Tangency,
    #[error("orbit left the table at {pos:?} with velocity {vel:?}")]
    Escaped { pos: [f64; 2], vel: [f64; 2] },
    #[error(transparent)]
    Estat(#[from] EstatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Fast subset of a billiard table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Selector {
    /// Every collision.
    All,
    /// Collisions on dispersing pieces and the first of each series of
    /// consecutive collisions on one focusing arc.
    FirstFocusing,
    /// Collisions farther than `radius` in arclength from the flat point of
    /// every flat piece. A radius of zero keeps everything.
    AwayFromFlat { radius: f64 },
}

impl Selector {
    pub fn selects(&self, table: &BilliardTable, prev_piece: Option<usize>, state: &CollisionState) -> bool {
        let piece = &table.pieces()[state.piece];
        match *self {
            Selector::All => true,
            Selector::FirstFocusing => match piece.curvature {
                Curvature::Focusing => prev_piece != Some(state.piece),
                _ => true,
            },
            Selector::AwayFromFlat { radius } => match &piece.shape {
                Shape::Flat(c) => (state.s - 0.5 * c.length()).abs() >= radius,
                _ => true,
            },
        }
    }
}

/// A collision map with its fast subset. Falling balls use the ball-ball
/// collisions as the section.
#[derive(Debug, Clone)]
pub enum System {
    FallingBalls(FallingBalls),
    Billiard { table: BilliardTable, selector: Selector },
}

/// A state of either system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SystemState {
    Balls(BallsState),
    Billiard(CollisionState),
}

impl SystemState {
    /// `[q1, q2, v1, v2]` for falling balls, `[global s, φ, piece, s]` for
    /// billiards.
    pub fn coords(&self, system: &System) -> [f64; 4] {
        match (self, system) {
            (SystemState::Balls(b), _) => [b.q1, b.q2, b.v1, b.v2],
            (SystemState::Billiard(c), System::Billiard { table, .. }) => {
                [table.global_s(c.piece, c.s), c.phi, c.piece as f64, c.s]
            }
            (SystemState::Billiard(c), _) => [c.s, c.phi, c.piece as f64, c.s],
        }
    }
}

/// Default number of burn-in collisions for falling balls.
pub const DEFAULT_BALLS_BURN_IN: u64 = 100_000;

/// Initial state: a Liouville sample on billiard tables, a fiducial state
/// followed by `burn_in` collisions for falling balls. Billiard samples are
/// already invariant, so `burn_in` is ignored there.
pub fn sample_invariant(system: &System, burn_in: u64, seed: u64) -> Result<SystemState, DynamicsError> {
    let mut rng = shard_rng(seed, 0);
    sample_with(system, burn_in, &mut rng).map(|(s, _)| s)
}

/// Sample plus whether its last burn-in event was a section visit.
fn sample_with<R: Rng + ?Sized>(
    system: &System,
    burn_in: u64,
    rng: &mut R,
) -> Result<(SystemState, bool), DynamicsError> {
    match system {
        System::FallingBalls(sys) => {
            let mut s = sys.fiducial(rng);
            let mut fast = false;
            for _ in 0..burn_in {
                fast = sys.step(&mut s)?.event == BallsEvent::BallBall;
            }
            Ok((SystemState::Balls(s), fast))
        }
        System::Billiard { table, selector } => {
            let c = table.sample_liouville(rng);
            Ok((SystemState::Billiard(c), selector.selects(table, None, &c)))
        }
    }
}

/// Counters of excluded or unusual events.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    /// Collisions simulated, counting each fresh sample as one.
    pub events: u64,
    pub section_visits: u64,
    pub returns: u64,
    pub tangencies: u64,
    pub escapes: u64,
    pub degeneracies: u64,
    pub restarts: u64,
    /// Falling balls: floor and ball-ball events within the tie tolerance.
    pub ties: u64,
    /// Excursions cut short by a restart.
    pub discarded_excursions: u64,
    /// Largest relative energy deviation seen (falling balls).
    pub max_energy_drift: f64,
}

impl QualityReport {
    pub fn merge(&mut self, o: &QualityReport) {
        self.events += o.events;
        self.section_visits += o.section_visits;
        self.returns += o.returns;
        self.tangencies += o.tangencies;
        self.escapes += o.escapes;
        self.degeneracies += o.degeneracies;
        self.restarts += o.restarts;
        self.ties += o.ties;
        self.discarded_excursions += o.discarded_excursions;
        self.max_energy_drift = self.max_energy_drift.max(o.max_energy_drift);
    }
}

/// One collision of a walker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub state: SystemState,
    pub in_fast: bool,
    /// The orbit was (re)started at this event; it is not the image of the
    /// previous event.
    pub restarted: bool,
}

/// One orbit of `T`, restarted from a fresh invariant sample whenever a
/// tangency or degeneracy terminates it.
pub struct Walker<'a> {
    system: &'a System,
    rng: ChaCha8Rng,
    burn_in: u64,
    state: Option<SystemState>,
    prev_piece: Option<usize>,
    energy0: f64,
    pub quality: QualityReport,
}

impl<'a> Walker<'a> {
    pub fn new(system: &'a System, burn_in: u64, rng: ChaCha8Rng) -> Self {
        Self { system, rng, burn_in, state: None, prev_piece: None, energy0: 0.0, quality: QualityReport::default() }
    }

    fn restart(&mut self) -> Event {
        loop {
            match sample_with(self.system, self.burn_in, &mut self.rng) {
                Ok((state, in_fast)) => {
                    if let (System::FallingBalls(sys), SystemState::Balls(b)) = (self.system, &state) {
                        self.energy0 = sys.energy_of(b);
                    }
                    self.state = Some(state);
                    self.prev_piece = None;
                    return Event { state, in_fast, restarted: true };
                }
                Err(_) => self.quality.degeneracies += 1,
            }
        }
    }

    fn advance(&mut self, state: SystemState) -> Result<Event, DynamicsError> {
        match (self.system, state) {
            (System::FallingBalls(sys), SystemState::Balls(mut b)) => {
                let step = sys.step(&mut b)?;
                if step.tie {
                    self.quality.ties += 1;
                }
                let drift = ((sys.energy_of(&b) - self.energy0) / self.energy0).abs();
                self.quality.max_energy_drift = self.quality.max_energy_drift.max(drift);
                let state = SystemState::Balls(b);
                Ok(Event { state, in_fast: step.event == BallsEvent::BallBall, restarted: false })
            }
            (System::Billiard { table, selector }, SystemState::Billiard(c)) => {
                let next = table.step(&c)?;
                let in_fast = selector.selects(table, Some(c.piece), &next);
                Ok(Event { state: SystemState::Billiard(next), in_fast, restarted: false })
            }
            _ => Err(DynamicsError::InvalidState("state does not belong to the system".into())),
        }
    }

    /// The next collision; the first call returns the initial sample.
    pub fn next_event(&mut self) -> Event {
        self.quality.events += 1;
        let ev = match self.state {
            None => self.restart(),
            Some(state) => match self.advance(state) {
                Ok(ev) => {
                    if let SystemState::Billiard(c) = state {
                        self.prev_piece = Some(c.piece);
                    }
                    self.state = Some(ev.state);
                    ev
                }
                Err(e) => {
                    match e {
                        DynamicsError::Tangency => self.quality.tangencies += 1,
                        DynamicsError::Escaped { .. } => self.quality.escapes += 1,
                        _ => self.quality.degeneracies += 1,
                    }
                    self.quality.restarts += 1;
                    self.restart()
                }
            },
        };
        if ev.in_fast {
            self.quality.section_visits += 1;
        }
        ev
    }
}

/// Parameters shared by the streaming runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamOptions {
    /// Total collisions over all shards.
    pub n_events: u64,
    pub burn_in: u64,
    pub seed: u64,
    /// Worker threads; `0` uses the global pool.
    pub workers: usize,
}

/// Results of `f(shard)` for `0..SHARDS`, computed on `workers` threads.
pub fn map_shards<T: Send>(workers: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    let go = || (0..SHARDS).into_par_iter().map(&f).collect::<Vec<T>>();
    if workers == 0 {
        go()
    } else {
        match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
            Ok(pool) => pool.install(go),
            Err(_) => go(),
        }
    }
}

/// Number of earlier section points kept for [`drive_shard`] sinks.
pub const HISTORY: usize = 4;

/// Follows one shard's orbit for its share of the budget and calls
/// `sink(R, section point, earlier section points)` for every completed
/// return. The history holds up to [`HISTORY`] earlier starts of the same
/// unbroken orbit, oldest first.
fn drive_shard(
    system: &System,
    opts: &StreamOptions,
    shard: usize,
    mut sink: impl FnMut(u64, &SystemState, &VecDeque<SystemState>),
) -> QualityReport {
    let budget = split_work(opts.n_events, SHARDS)[shard];
    let mut walker = Walker::new(system, opts.burn_in, shard_rng(opts.seed, shard as u64));
    let mut open: Option<SystemState> = None;
    let mut history: VecDeque<SystemState> = VecDeque::with_capacity(HISTORY + 1);
    let mut steps = 0u64;
    while walker.quality.events < budget {
        let ev = walker.next_event();
        if ev.restarted {
            history.clear();
            if open.take().is_some() {
                walker.quality.discarded_excursions += 1;
            }
        } else if open.is_some() {
            steps += 1;
        }
        if ev.in_fast {
            if let Some(start) = open {
                sink(steps, &start, &history);
                walker.quality.returns += 1;
                history.push_back(start);
                if history.len() > HISTORY {
                    history.pop_front();
                }
            }
            open = Some(ev.state);
            steps = 0;
        }
    }
    walker.quality
}

/// A section point with its return time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnRecord {
    pub worker: usize,
    pub index: u64,
    #[serde(rename = "R")]
    pub r: u64,
    pub state: SystemState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReturnStream {
    pub records: Vec<ReturnRecord>,
    pub quality: QualityReport,
    pub kac: KacCheck,
}

/// Kac identity `E[R] · μ(M̂) = 1`, with `μ(M̂)` the visit frequency of the
/// same run. The standard error is the spread of per-shard products.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KacCheck {
    pub mean_return: f64,
    pub visit_frequency: f64,
    pub product: f64,
    pub stderr: f64,
}

impl KacCheck {
    fn from_shards(shards: &[(u64, u64, QualityReport)]) -> Self {
        let per: Vec<f64> = shards
            .iter()
            .filter(|(n, _, q)| *n > 0 && q.events > 0)
            .map(|(n, sum, q)| (*sum as f64 / *n as f64) * (q.section_visits as f64 / q.events as f64))
            .collect();
        let (n, sum, visits, events) = shards
            .iter()
            .fold((0u64, 0u64, 0u64, 0u64), |a, (n, s, q)| (a.0 + n, a.1 + s, a.2 + q.section_visits, a.3 + q.events));
        let mean_return = if n > 0 { sum as f64 / n as f64 } else { f64::NAN };
        let visit_frequency = visits as f64 / events.max(1) as f64;
        let (_, var) = crate::fit::mean_var(&per);
        Self {
            mean_return,
            visit_frequency,
            product: mean_return * visit_frequency,
            stderr: (var / per.len().max(1) as f64).sqrt(),
        }
    }

    /// Whether the product is within `k` standard errors of one.
    pub fn holds(&self, k: f64) -> bool {
        (self.product - 1.0).abs() <= k * self.stderr.max(1e-12)
    }
}

/// Return times and section points of a run, ordered by shard.
pub fn first_return_stream(system: &System, opts: &StreamOptions) -> Result<ReturnStream, DynamicsError> {
    if opts.n_events == 0 {
        return Err(DynamicsError::InvalidParameter("n_events must be at least 1".into()));
    }
    let shards = map_shards(opts.workers, |shard| {
        let mut records = Vec::new();
        let mut sum = 0u64;
        let q = drive_shard(system, opts, shard, |r, s, _| {
            records.push(ReturnRecord { worker: shard, index: records.len() as u64, r, state: *s });
            sum += r;
        });
        (records, sum, q)
    });
    let mut quality = QualityReport::default();
    let mut kac_parts = Vec::with_capacity(SHARDS);
    let mut records = Vec::new();
    for (recs, sum, q) in shards {
        quality.merge(&q);
        kac_parts.push((recs.len() as u64, sum, q));
        records.extend(recs);
    }
    Ok(ReturnStream { records, quality, kac: KacCheck::from_shards(&kac_parts) })
}

impl ReturnStream {
    pub fn return_times(&self) -> Vec<u64> {
        self.records.iter().map(|r| r.r).collect()
    }

    /// CSV with header `worker,index,R,arc,s,phi` for billiards or
    /// `worker,index,R,q1,q2,v1,v2` for falling balls.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), DynamicsError> {
        let mut out = csv::Writer::from_writer(w);
        let balls = matches!(self.records.first().map(|r| r.state), Some(SystemState::Balls(_)));
        if balls {
            out.write_record(["worker", "index", "R", "q1", "q2", "v1", "v2"])?;
        } else {
            out.write_record(["worker", "index", "R", "arc", "s", "phi"])?;
        }
        for r in &self.records {
            let head = [r.worker.to_string(), r.index.to_string(), r.r.to_string()];
            let tail: Vec<String> = match r.state {
                SystemState::Balls(b) => [b.q1, b.q2, b.v1, b.v2].iter().map(|x| format!("{x:e}")).collect(),
                SystemState::Billiard(c) => vec![c.piece.to_string(), format!("{:e}", c.s), format!("{:e}", c.phi)],
            };
            out.write_record(head.iter().chain(&tail))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// A kept return with the section points that preceded it.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledReturn {
    pub worker: usize,
    pub r: u64,
    pub state: SystemState,
    /// Earlier section points of the same orbit, oldest first.
    pub history: Vec<SystemState>,
}

/// Returns whose `R` passes `keep`, at most `per_shard` of each value of
/// `R` from each shard, without storing the rest of the stream.
pub fn sample_returns(
    system: &System,
    opts: &StreamOptions,
    keep: impl Fn(u64) -> bool + Sync,
    per_shard: usize,
) -> Result<(Vec<SampledReturn>, QualityReport), DynamicsError> {
    if opts.n_events == 0 {
        return Err(DynamicsError::InvalidParameter("n_events must be at least 1".into()));
    }
    let shards = map_shards(opts.workers, |shard| {
        let mut kept = Vec::new();
        let mut taken = std::collections::HashMap::<u64, usize>::new();
        let q = drive_shard(system, opts, shard, |r, s, h| {
            if !keep(r) {
                return;
            }
            let n = taken.entry(r).or_insert(0);
            if *n < per_shard {
                *n += 1;
                kept.push(SampledReturn { worker: shard, r, state: *s, history: h.iter().copied().collect() });
            }
        });
        (kept, q)
    });
    let mut quality = QualityReport::default();
    let mut out = Vec::new();
    for (k, q) in shards {
        quality.merge(&q);
        out.extend(k);
    }
    Ok((out, quality))
}

/// Histogram of return times for runs too long to keep every record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnHistogram {
    /// `counts[r]` returns with `R = r`, for `r <= max_r`.
    pub counts: Vec<u64>,
    /// Returns with `R > max_r`.
    pub overflow: u64,
    pub quality: QualityReport,
    pub kac: KacCheck,
}

impl ReturnHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.overflow
    }

    /// Survival curve `P(R > n)` for `n <= max_r`.
    pub fn tail(&self) -> TailCurve {
        let mut counts = self.counts.clone();
        counts.push(self.overflow);
        let mut t = crate::estat::tail_from_counts(&counts);
        t.entries.truncate(self.counts.len());
        t
    }
}

pub fn return_histogram(system: &System, opts: &StreamOptions, max_r: u64) -> Result<ReturnHistogram, DynamicsError> {
    if opts.n_events == 0 {
        return Err(DynamicsError::InvalidParameter("n_events must be at least 1".into()));
    }
    let shards = map_shards(opts.workers, |shard| {
        let mut counts = vec![0u64; max_r as usize + 1];
        let mut overflow = 0u64;
        let (mut n, mut sum) = (0u64, 0u64);
        let q = drive_shard(system, opts, shard, |r, _, _| {
            match counts.get_mut(r as usize) {
                Some(c) => *c += 1,
                None => overflow += 1,
            }
            n += 1;
            sum += r;
        });
        (counts, overflow, n, sum, q)
    });
    let mut counts = vec![0u64; max_r as usize + 1];
    let mut overflow = 0;
    let mut quality = QualityReport::default();
    let mut kac_parts = Vec::with_capacity(SHARDS);
    for (c, o, n, sum, q) in shards {
        counts.iter_mut().zip(&c).for_each(|(a, b)| *a += b);
        overflow += o;
        quality.merge(&q);
        kac_parts.push((n, sum, q));
    }
    Ok(ReturnHistogram { counts, overflow, quality, kac: KacCheck::from_shards(&kac_parts) })
}

/// Correlation curve of `f` and `g` along orbits of `T`, plus sums of `f`
/// over consecutive blocks of `block_len` collisions.
#[derive(Debug, Clone)]
pub struct ObservedRun {
    pub correlation: CorrelationCurve,
    pub mean_f: f64,
    pub mean_g: f64,
    pub block_sums: Vec<f64>,
    pub block_len: u64,
    pub quality: QualityReport,
}

/// Streams `f(x_t)`, `g(x_t)` over each shard's orbit into a
/// [`CorrelationAccumulator`] with `batch_len` pairs per batch.
pub fn observe(
    system: &System,
    f: &Observable,
    g: &Observable,
    lags: &[u64],
    batch_len: u64,
    block_len: u64,
    opts: &StreamOptions,
) -> Result<ObservedRun, DynamicsError> {
    if block_len == 0 {
        return Err(DynamicsError::InvalidParameter("block length must be positive".into()));
    }
    let shards = map_shards(opts.workers, |shard| -> Result<_, DynamicsError> {
        let budget = split_work(opts.n_events, SHARDS)[shard];
        let mut walker = Walker::new(system, opts.burn_in, shard_rng(opts.seed, shard as u64));
        let mut acc = CorrelationAccumulator::new(lags, batch_len)?;
        let (mut sf, mut sg) = (0.0, 0.0);
        let mut blocks = Vec::new();
        let (mut block, mut in_block) = (0.0, 0u64);
        while walker.quality.events < budget {
            let ev = walker.next_event();
            let x = ev.state.coords(system);
            let (a, b) = (f.eval(&x, ev.in_fast), g.eval(&x, ev.in_fast));
            acc.push(a, b);
            sf += a;
            sg += b;
            block += a;
            in_block += 1;
            if in_block == block_len {
                blocks.push(block);
                block = 0.0;
                in_block = 0;
            }
        }
        Ok((acc, sf, sg, blocks, walker.quality))
    });
    let mut merged: Option<CorrelationAccumulator> = None;
    let (mut sf, mut sg) = (0.0, 0.0);
    let mut block_sums = Vec::new();
    let mut quality = QualityReport::default();
    for part in shards {
        let (acc, a, b, blocks, q) = part?;
        merged = Some(match merged {
            None => acc,
            Some(m) => m.merge(acc),
        });
        sf += a;
        sg += b;
        block_sums.extend(blocks);
        quality.merge(&q);
    }
    let n = quality.events.max(1) as f64;
    let correlation = merged.ok_or(DynamicsError::InvalidParameter("no shards".into()))?.finish()?;
    Ok(ObservedRun { correlation, mean_f: sf / n, mean_g: sg / n, block_sums, block_len, quality })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::ks_test;

    fn opts(n: u64) -> StreamOptions {
        StreamOptions { n_events: n, burn_in: 0, seed: 17, workers: 2 }
    }

    #[test]
    fn whole_space_section_gives_unit_returns() {
        let table =
            tables::flowers_table(&tables::FlowerSpec::tangent(4, 0.3, 0.8 * std::f64::consts::PI, 1.0)).unwrap();
        let system = System::Billiard { table, selector: Selector::AwayFromFlat { radius: 0.5 } };
        let s = first_return_stream(&system, &opts(20_000)).unwrap();
        assert!(s.records.iter().all(|r| r.r == 1));
    }

    #[test]
    fn zero_radius_keeps_everything() {
        let table = tables::flat_point_table(&tables::FlatPointSpec::default()).unwrap();
        let system = System::Billiard { table, selector: Selector::AwayFromFlat { radius: 0.0 } };
        let s = first_return_stream(&system, &opts(20_000)).unwrap();
        assert!(s.records.iter().all(|r| r.r == 1));
    }

    #[test]
    fn balls_kac_identity() {
        let system = System::FallingBalls(FallingBalls::default());
        let o = StreamOptions { n_events: 2_000_000, burn_in: 1000, seed: 5, workers: 0 };
        let s = first_return_stream(&system, &o).unwrap();
        assert!(s.kac.holds(3.0), "{:?}", s.kac);
        assert!(s.quality.max_energy_drift < 1e-9);
    }

    #[test]
    fn output_is_independent_of_workers() {
        let system = System::FallingBalls(FallingBalls::default());
        let a = first_return_stream(&system, &StreamOptions { workers: 1, ..opts(50_000) }).unwrap();
        let b = first_return_stream(&system, &StreamOptions { workers: 3, ..opts(50_000) }).unwrap();
        assert_eq!(a.records, b.records);
        let h = return_histogram(&system, &opts(50_000), 1000).unwrap();
        assert_eq!(h.total(), a.records.len() as u64);
    }

    #[test]
    fn burn_in_zero_returns_fiducial() {
        let sys = FallingBalls::default();
        let s = sample_invariant(&System::FallingBalls(sys), 0, 8).unwrap();
        let expected = sys.fiducial(&mut shard_rng(8, 0));
        assert_eq!(s, SystemState::Balls(expected));
    }

    #[test]
    fn liouville_angle_marginal() {
        let table = tables::flat_point_table(&tables::FlatPointSpec::default()).unwrap();
        let mut rng = shard_rng(1, 0);
        let (phis, ss): (Vec<f64>, Vec<f64>) = (0..100_000)
            .map(|_| {
                let c = table.sample_liouville(&mut rng);
                (c.phi, table.global_s(c.piece, c.s) / table.total_length())
            })
            .unzip();
        let (_, p) = ks_test(&phis, |x| (1.0 + x.sin()) / 2.0);
        assert!(p > 1e-3, "p = {p}");
        let (_, p) = ks_test(&ss, |x| x.clamp(0.0, 1.0));
        assert!(p > 1e-3, "p = {p}");
    }

    #[test]
    fn csv_headers() {
        let system = System::FallingBalls(FallingBalls::default());
        let s = first_return_stream(&system, &opts(1000)).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("worker,index,R,q1,q2,v1,v2\n"));
    }
}
