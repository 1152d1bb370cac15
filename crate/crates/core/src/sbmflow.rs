//! Coalescing flow of skew random walks: the lattice version of
//! `Y_{s,t}(x) = x + W_{s,t} + β L_{s,t}(x)`.
//!
//! Positions are integers in units of `δ = 2^-m`; times are integer ticks of
//! `Δ = δ²`. Off zero a walker copies the driving walk. At zero the step is
//! decided by a shared rule that couples the walk sign `ε` with a coin `U`
//! keyed by the tick:
//!
//! * `β ≥ 0`: up if `ε = +1`, otherwise up iff `U < β`;
//! * `β < 0`: down if `ε = −1`, otherwise down iff `U < |β|`.
//!
//! So `P(up) = (1+β)/2`, `β = 0` gives the plain walk and `β = ±1` reflection.

use serde::Serialize;
use thiserror::Error;

use crate::noise::{ChannelPath, Dyadic, NoiseError, NoiseField, StreamKey};

/// Local-time normalization: `L = LOCAL_TIME_SCALE · δ · #{ticks at 0}`.
///
/// Frozen from [`local_time_calibration`], which equals 1 to within 1e-4 for
/// every supported `δ`.
pub const LOCAL_TIME_SCALE: f64 = 1.0;

/// Default cap on `n` in [`lemma3_anchor`].
pub const DEFAULT_N_CAP: u32 = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error("beta {0} outside [-1, 1]")]
    BadBeta(f64),
    #[error("space step exponent {0} too large for the noise level {1}")]
    TooFine(u32, u32),
    #[error("time {0} is not on the lattice grid 2^-{1}")]
    OffGrid(f64, u32),
    #[error("point {0} is not on the lattice")]
    OffLattice(f64),
    #[error("tick {0} outside the driven range [{1}, {2}]")]
    OutsideHorizon(i64, i64, i64),
    #[error("interval end {1} precedes start {0}")]
    Reversed(i64, i64),
    #[error("unknown start point {0}")]
    UnknownStart(i64),
    #[error("empty selection interval ({0}, {1})")]
    EmptyInterval(f64, f64),
}

/// `β` and the space step `δ = 2^-m`; the time step is `δ²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SkewParams {
    pub beta: f64,
    pub m: u32,
}

impl SkewParams {
    pub fn new(beta: f64, m: u32) -> Result<Self, FlowError> {
        if !(-1.0..=1.0).contains(&beta) {
            return Err(FlowError::BadBeta(beta));
        }
        if 2 * m > crate::noise::MAX_LEVEL {
            return Err(FlowError::TooFine(m, crate::noise::MAX_LEVEL));
        }
        Ok(SkewParams { beta, m })
    }

    pub fn delta(&self) -> f64 {
        (-(self.m as f64)).exp2()
    }

    pub fn dt(&self) -> f64 {
        self.delta() * self.delta()
    }

    /// Time level of the tick grid, `2m`.
    pub fn level(&self) -> u32 {
        2 * self.m
    }

    pub fn ticks(&self, t: f64) -> Result<i64, FlowError> {
        Dyadic::from_f64(t)
            .and_then(|d| d.ticks_at(self.level()))
            .ok_or(FlowError::OffGrid(t, self.level()))
    }

    pub fn time(&self, tick: i64) -> f64 {
        Dyadic::from_ticks(tick, self.level()).to_f64()
    }

    /// Exact lattice site of `x`.
    pub fn site(&self, x: f64) -> Result<i64, FlowError> {
        let y = x / self.delta();
        if y.fract() != 0.0 {
            return Err(FlowError::OffLattice(x));
        }
        Ok(y as i64)
    }

    /// Nearest site, ties toward 0.
    pub fn round_site(&self, x: f64) -> i64 {
        let y = x / self.delta();
        let r = y.round();
        if (y - y.trunc()).abs() == 0.5 {
            y.trunc() as i64
        } else {
            r as i64
        }
    }

    pub fn position(&self, site: i64) -> f64 {
        site as f64 * self.delta()
    }
}

/// Decision at zero: `+1` or `−1`.
#[inline]
pub fn zero_step(beta: f64, eps: i8, u: f64) -> i8 {
    if beta >= 0.0 {
        if eps > 0 || u < beta {
            1
        } else {
            -1
        }
    } else if eps < 0 || u < -beta {
        -1
    } else {
        1
    }
}

/// One lattice step of the skew walk.
#[inline]
pub fn skew_step(beta: f64, y: i64, eps: i8, u: f64) -> i64 {
    if y != 0 {
        y + eps as i64
    } else {
        zero_step(beta, eps, u) as i64
    }
}

/// The driving lattice walk of one channel at tick level `2m`, with its zero coins.
#[derive(Clone, Debug)]
pub struct Driver {
    channel: u32,
    level: u32,
    first: i64,
    signs: Vec<i8>,
    walk: Vec<i64>,
    coin: StreamKey,
}

impl Driver {
    pub fn new(field: &NoiseField, channel: u32, m: u32) -> Result<Self, FlowError> {
        Ok(Self::from_path(field, &field.channel_path(channel), m)?)
    }

    pub fn from_path(field: &NoiseField, path: &ChannelPath, m: u32) -> Result<Self, FlowError> {
        let level = 2 * m;
        if level > path.n_max() {
            return Err(FlowError::TooFine(m, path.n_max()));
        }
        let signs = path.signs(level);
        let mut walk = Vec::with_capacity(signs.len() + 1);
        let mut acc = 0i64;
        walk.push(0);
        for &e in &signs {
            acc += e as i64;
            walk.push(acc);
        }
        Ok(Driver {
            channel: path.channel(),
            level,
            first: path.first_tick() >> (path.n_max() - level),
            signs,
            walk,
            coin: field.stream(&Self::coin_namespace(path.channel())),
        })
    }

    /// Same walk with the zero-site coin drawn from another stream.
    pub fn with_coin(&self, coin: StreamKey) -> Driver {
        Driver { coin, ..self.clone() }
    }

    pub fn coin_namespace(channel: u32) -> String {
        format!("sbm-zero/{channel}")
    }

    pub fn channel(&self) -> u32 {
        self.channel
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn first_tick(&self) -> i64 {
        self.first
    }

    /// Last tick at which positions are defined.
    pub fn last_tick(&self) -> i64 {
        self.first + self.signs.len() as i64
    }

    #[inline]
    pub fn sign(&self, tick: i64) -> i8 {
        self.signs[(tick - self.first) as usize]
    }

    #[inline]
    pub fn coin(&self, tick: i64) -> f64 {
        self.coin.uniform(Dyadic::from_ticks(tick, self.level))
    }

    /// Driving walk in sites, relative to the horizon start.
    #[inline]
    pub fn walk(&self, tick: i64) -> i64 {
        self.walk[(tick - self.first) as usize]
    }

    pub fn walk_path(&self) -> &[i64] {
        &self.walk
    }

    pub fn check(&self, s: i64, t: i64) -> Result<(), FlowError> {
        if t < s {
            return Err(FlowError::Reversed(s, t));
        }
        for k in [s, t] {
            if k < self.first || k > self.last_tick() {
                return Err(FlowError::OutsideHorizon(k, self.first, self.last_tick()));
            }
        }
        Ok(())
    }
}

/// Path of one walker from `(s, x)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SkewPath {
    pub start: i64,
    /// `values[k]` is `Y` at tick `start + k`, in sites.
    pub values: Vec<i64>,
    /// `visits[k]` counts ticks in `[start, start + k)` spent at 0.
    pub visits: Vec<u32>,
}

impl SkewPath {
    pub fn end(&self) -> i64 {
        self.start + self.values.len() as i64 - 1
    }

    pub fn at(&self, tick: i64) -> i64 {
        self.values[(tick - self.start) as usize]
    }

    pub fn local_time(&self, tick: i64, params: &SkewParams) -> f64 {
        LOCAL_TIME_SCALE * params.delta() * self.visits[(tick - self.start) as usize] as f64
    }

    /// First tick at which the path is 0.
    pub fn first_zero(&self) -> Option<i64> {
        self.values.iter().position(|&y| y == 0).map(|k| self.start + k as i64)
    }

    /// Last tick `<= tick` at which the path is 0.
    pub fn last_zero_before(&self, tick: i64) -> Option<i64> {
        let k = (tick - self.start) as usize;
        self.values[..=k].iter().rposition(|&y| y == 0).map(|j| self.start + j as i64)
    }
}

pub fn evolve(params: &SkewParams, driver: &Driver, s: i64, x: i64, t: i64) -> Result<SkewPath, FlowError> {
    driver.check(s, t)?;
    let n = (t - s) as usize;
    let mut values = Vec::with_capacity(n + 1);
    let mut visits = Vec::with_capacity(n + 1);
    let (mut y, mut v) = (x, 0u32);
    values.push(y);
    visits.push(v);
    for k in s..t {
        if y == 0 {
            v += 1;
            y = zero_step(params.beta, driver.sign(k), driver.coin(k)) as i64;
        } else {
            y += driver.sign(k) as i64;
        }
        values.push(y);
        visits.push(v);
    }
    Ok(SkewPath { start: s, values, visits })
}

/// `(Y_{s,t}(x), #visits)` without storing the path.
pub fn terminal(params: &SkewParams, driver: &Driver, s: i64, x: i64, t: i64) -> Result<(i64, u32), FlowError> {
    driver.check(s, t)?;
    let (mut y, mut v) = (x, 0u32);
    for k in s..t {
        if y == 0 {
            v += 1;
            y = zero_step(params.beta, driver.sign(k), driver.coin(k)) as i64;
        } else {
            y += driver.sign(k) as i64;
        }
    }
    Ok((y, v))
}

/// Several walkers driven by the same streams.
///
/// Within one parity class gaps are even and change only at 0, so walkers
/// never cross. Across classes a walker leaving 0 against the walk sign can
/// jump over a neighbour one site away; both are then set to the zero-site
/// value and stay merged. Such a repaired walker no longer matches its solo
/// [`evolve`] path.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlowSample {
    pub start: i64,
    /// Sorted, distinct start sites.
    pub starts: Vec<i64>,
    /// `rows[k][j]`: position of walker `j` at tick `start + k`.
    pub rows: Vec<Vec<i64>>,
    /// `visits[k][j]`: ticks spent at 0 by walker `j` before `start + k`.
    pub visits: Vec<Vec<u32>>,
}

impl FlowSample {
    pub fn end(&self) -> i64 {
        self.start + self.rows.len() as i64 - 1
    }

    pub fn index_of(&self, x: i64) -> Result<usize, FlowError> {
        self.starts.binary_search(&x).map_err(|_| FlowError::UnknownStart(x))
    }

    pub fn value(&self, x: i64, tick: i64) -> Result<i64, FlowError> {
        Ok(self.rows[(tick - self.start) as usize][self.index_of(x)?])
    }

    pub fn path(&self, x: i64) -> Result<Vec<i64>, FlowError> {
        let j = self.index_of(x)?;
        Ok(self.rows.iter().map(|r| r[j]).collect())
    }

    /// Smallest start whose walker sits with `x`'s walker at `tick`.
    pub fn coalesced_with(&self, x: i64, tick: i64) -> Result<i64, FlowError> {
        let j = self.index_of(x)?;
        let row = &self.rows[(tick - self.start) as usize];
        let i = row.iter().position(|&y| y == row[j]).unwrap();
        Ok(self.starts[i])
    }

    /// Partition of start indices into merged groups at `tick`.
    pub fn partition(&self, tick: i64) -> Vec<Vec<usize>> {
        let row = &self.rows[(tick - self.start) as usize];
        let mut out: Vec<Vec<usize>> = Vec::new();
        for (j, &y) in row.iter().enumerate() {
            match out.last_mut() {
                Some(g) if row[g[0]] == y => g.push(j),
                _ => out.push(vec![j]),
            }
        }
        out
    }
}

pub fn flow(params: &SkewParams, driver: &Driver, s: i64, starts: &[i64], t: i64) -> Result<FlowSample, FlowError> {
    driver.check(s, t)?;
    let mut xs = starts.to_vec();
    xs.sort_unstable();
    xs.dedup();
    let k = xs.len();
    let mut rows = Vec::with_capacity((t - s) as usize + 1);
    let mut visits = Vec::with_capacity((t - s) as usize + 1);
    let mut cur = xs.clone();
    let mut vis = vec![0u32; k];
    rows.push(cur.clone());
    visits.push(vis.clone());
    for tick in s..t {
        let eps = driver.sign(tick);
        let z = zero_step(params.beta, eps, driver.coin(tick)) as i64;
        let mut next: Vec<i64> = cur
            .iter()
            .map(|&y| if y == 0 { z } else { y + eps as i64 })
            .collect();
        loop {
            let mut fixed = true;
            for j in 1..k {
                if next[j - 1] > next[j] {
                    next[j - 1] = z;
                    next[j] = z;
                    fixed = false;
                }
            }
            if fixed {
                break;
            }
        }
        for (v, &y) in vis.iter_mut().zip(&cur) {
            if y == 0 {
                *v += 1;
            }
        }
        rows.push(next.clone());
        visits.push(vis.clone());
        cur = next;
    }
    Ok(FlowSample { start: s, starts: xs, rows, visits })
}

/// First tick at which the walkers from `x` and `y` coincide.
pub fn coalescence_time(sample: &FlowSample, x: i64, y: i64) -> Result<Option<i64>, FlowError> {
    let i = sample.index_of(x)?;
    let j = sample.index_of(y)?;
    Ok(sample
        .rows
        .iter()
        .position(|r| r[i] == r[j])
        .map(|k| sample.start + k as i64))
}

/// The smallest element of `D_n ∩ (u, v)` for the least `n` making it nonempty.
pub fn dyadic_select(u: f64, v: f64) -> Result<Dyadic, FlowError> {
    if !(u < v) {
        return Err(FlowError::EmptyInterval(u, v));
    }
    let mut scale = 1.0f64;
    for n in 0..=62u32 {
        let k = (u * scale).floor() + 1.0;
        if k / scale < v {
            return Ok(Dyadic::new(k as i64, n));
        }
        scale *= 2.0;
    }
    Err(FlowError::EmptyInterval(u, v))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Anchor {
    pub n: u32,
    /// Selected time and its floor on the tick grid.
    pub v: Dyadic,
    pub v_tick: i64,
    /// Selected position and its nearest site.
    pub y: Dyadic,
    pub y_site: i64,
    /// `Y_{s,t}(x)` from a joint flow with the two bracketing starters.
    pub direct: i64,
    /// `Y_{v,t}(y)`.
    pub spliced: i64,
}

/// Anchor `(n, v, y)` with `Y_{s,t}(x) = Y_{v,t}(y)`, or `None` when no `n <= n_cap` works.
pub fn lemma3_anchor(
    params: &SkewParams,
    driver: &Driver,
    s: i64,
    x: f64,
    t: i64,
    n_cap: u32,
) -> Result<Option<Anchor>, FlowError> {
    driver.check(s, t)?;
    let xs = params.round_site(x);
    for n in 1..=n_cap {
        // bracketing starters on the parity class of x's site, never past it
        let mut lo = params.round_site(x - 1.0 / n as f64);
        let mut hi = params.round_site(x + 1.0 / n as f64);
        lo += (lo - xs).rem_euclid(2);
        hi -= (hi - xs).rem_euclid(2);
        if lo == hi {
            return Ok(None);
        }
        let fl = flow(params, driver, s, &[lo, xs, hi], t)?;
        if fl.value(lo, t)? != fl.value(hi, t)? {
            continue;
        }
        let big_t = coalescence_time(&fl, lo, hi)?.expect("merged by t");
        let v = dyadic_select(params.time(s), params.time(big_t))?;
        let v_tick = (v.to_f64() / params.dt()).floor() as i64;
        let a = fl.value(lo, v_tick)?;
        let b = fl.value(hi, v_tick)?;
        let y = dyadic_select(params.position(a), params.position(b))?;
        // onto the bracketing walkers' parity class; a < y_site < b in that case
        let mut y_site = params.round_site(y.to_f64());
        y_site -= (y_site - a).rem_euclid(2);
        let (spliced, _) = terminal(params, driver, v_tick, y_site, t)?;
        return Ok(Some(Anchor { n, v, v_tick, y, y_site, direct: fl.value(xs, t)?, spliced }));
    }
    Ok(None)
}

/// Grid stopping rules evaluated forward from a lower bound.
pub enum StoppingRule<'a> {
    At(i64),
    /// First tick `>= from` at which the walker started at `(from, site)` is at 0.
    ZeroOf(i64),
    /// First tick `>= from` satisfying the predicate.
    First(Box<dyn Fn(i64) -> bool + 'a>),
}

impl StoppingRule<'_> {
    fn resolve(&self, params: &SkewParams, driver: &Driver, from: i64) -> Result<Option<i64>, FlowError> {
        let end = driver.last_tick();
        Ok(match self {
            StoppingRule::At(k) => (*k >= from && *k <= end).then_some(*k),
            StoppingRule::ZeroOf(site) => evolve(params, driver, from, *site, end)?.first_zero(),
            StoppingRule::First(p) => (from..=end).find(|&k| p(k)),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StrongFlowReport {
    pub s: Option<i64>,
    pub t: Option<i64>,
    pub checked: usize,
    /// `(start, direct, composed)` for every disagreement.
    pub mismatches: Vec<(i64, i64, i64)>,
}

/// Check `Y_{S,T+u}(x) = Y_{T,T+u}(Y_{S,T}(x))` for every start.
pub fn strong_flow_check(
    params: &SkewParams,
    driver: &Driver,
    s_rule: &StoppingRule,
    t_rule: &StoppingRule,
    u: i64,
    starts: &[i64],
) -> Result<StrongFlowReport, FlowError> {
    let mut rep = StrongFlowReport { s: None, t: None, checked: 0, mismatches: Vec::new() };
    let Some(s) = s_rule.resolve(params, driver, driver.first_tick())? else { return Ok(rep) };
    rep.s = Some(s);
    let Some(t) = t_rule.resolve(params, driver, s)? else { return Ok(rep) };
    rep.t = Some(t);
    if t + u > driver.last_tick() {
        return Ok(rep);
    }
    for &x in starts {
        let (direct, _) = terminal(params, driver, s, x, t + u)?;
        let (mid, _) = terminal(params, driver, s, x, t)?;
        let (composed, _) = terminal(params, driver, t, mid, t + u)?;
        rep.checked += 1;
        if direct != composed {
            rep.mismatches.push((x, direct, composed));
        }
    }
    Ok(rep)
}

/// `E[#visits to 0 in n steps]` for the symmetric walk from 0:
/// `Σ_{j ≤ (n-1)/2} C(2j, j) 4^-j`.
pub fn expected_zero_visits(n: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let jmax = (n - 1) / 2;
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    for j in 1..=jmax {
        term *= (2 * j - 1) as f64 / (2 * j) as f64;
        sum += term;
    }
    sum
}

/// Ratio `√(2t/π) / (δ · E[#visits])` at `β = 0`, `t = 1`.
pub fn local_time_calibration(m: u32) -> f64 {
    let delta = (-(m as f64)).exp2();
    let n = 1u64 << (2 * m);
    (2.0 / std::f64::consts::PI).sqrt() / (delta * expected_zero_visits(n))
}
