//! Seeded white noise on dyadic grids.
//!
//! Every channel is a Brownian path built per unit interval `[k, k+1)` by the
//! Lévy midpoint construction, breadth first, from a stream seeded by
//! `(seed, "w/<channel>", k)`. Increments are stored as integers in units of
//! `2^-40`, so coarse increments are exact sums of fine ones and raising
//! `n_max` only appends deeper levels without touching coarser values.
//!
//! Auxiliary randomness (zero-site coins, excursion labels) comes from
//! [`NoiseField::keyed_uniform`], a pure function of `(seed, namespace, key)`.

use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Fixed-point scale of stored increments.
pub const FIXED_SCALE: f64 = (1u64 << 40) as f64;

/// Deepest supported refinement level.
pub const MAX_LEVEL: u32 = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("time {0} lies outside the horizon [{1}, {2}]")]
    OutsideHorizon(f64, i64, i64),
    #[error("time {0} is not representable at level {1}")]
    TooFine(f64, u32),
    #[error("interval end {1} precedes start {0}")]
    Reversed(f64, f64),
    #[error("refinement level {0} exceeds the supported maximum {MAX_LEVEL}")]
    LevelTooDeep(u32),
    #[error("empty horizon [{0}, {1}]")]
    EmptyHorizon(i64, i64),
}

/// A dyadic rational `num * 2^-exp`, kept in lowest terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Dyadic {
    num: i64,
    exp: u32,
}

impl Dyadic {
    pub fn new(num: i64, exp: u32) -> Self {
        if num == 0 {
            return Dyadic { num: 0, exp: 0 };
        }
        let tz = num.trailing_zeros().min(exp);
        Dyadic { num: num >> tz, exp: exp - tz }
    }

    pub fn from_ticks(ticks: i64, level: u32) -> Self {
        Self::new(ticks, level)
    }

    pub fn integer(k: i64) -> Self {
        Dyadic { num: k, exp: 0 }
    }

    /// Exact conversion; `None` for values that are not dyadic at level <= 62.
    pub fn from_f64(x: f64) -> Option<Self> {
        if !x.is_finite() {
            return None;
        }
        let mut scale = 1.0f64;
        for exp in 0..=62u32 {
            let y = x * scale;
            if y.fract() == 0.0 && y.abs() < 9.0e18 {
                return Some(Self::new(y as i64, exp));
            }
            scale *= 2.0;
        }
        None
    }

    pub fn num(&self) -> i64 {
        self.num
    }

    /// Order of the dyadic: least `n` with `self ∈ D_n`.
    pub fn level(&self) -> u32 {
        self.exp
    }

    pub fn to_f64(&self) -> f64 {
        self.num as f64 / (1u64 << self.exp) as f64
    }

    /// Index on the grid `D_level`, if the value lies on it.
    pub fn ticks_at(&self, level: u32) -> Option<i64> {
        if self.exp > level {
            return None;
        }
        self.num.checked_mul(1i64 << (level - self.exp))
    }
}

impl std::fmt::Display for Dyadic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.exp == 0 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/2^{}", self.num, self.exp)
        }
    }
}

/// The grid `D_n` with floor and successor helpers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DyadicGrid {
    pub level: u32,
}

impl DyadicGrid {
    pub fn new(level: u32) -> Self {
        DyadicGrid { level }
    }

    /// `s_n = sup{u ∈ D_n : u <= s}`.
    pub fn floor(&self, s: Dyadic) -> Dyadic {
        if s.exp <= self.level {
            return s;
        }
        Dyadic::new(s.num >> (s.exp - self.level), self.level)
    }

    /// `s_n^+ = s_n + 2^-n`.
    pub fn next(&self, s: Dyadic) -> Dyadic {
        let f = self.floor(s);
        let t = f.ticks_at(self.level).expect("floor lies on grid");
        Dyadic::new(t + 1, self.level)
    }

    /// Floor of a tick index given at a finer level.
    pub fn floor_ticks(&self, ticks: i64, fine_level: u32) -> i64 {
        debug_assert!(fine_level >= self.level);
        let step = 1i64 << (fine_level - self.level);
        ticks.div_euclid(step) * step
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelMode {
    Shared,
    PerEdge,
}

impl ChannelMode {
    /// Channel driving edge `edge`.
    pub fn channel_of(&self, edge: usize) -> u32 {
        match self {
            ChannelMode::Shared => 0,
            ChannelMode::PerEdge => edge as u32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub seed: u64,
    pub n_max: u32,
    pub horizon: [i64; 2],
    #[serde(default = "default_channels")]
    pub channels: ChannelMode,
}

fn default_channels() -> ChannelMode {
    ChannelMode::Shared
}

pub(crate) fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// A resolved namespace: hashing the name once keeps hot loops cheap.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn uniform(&self, key: Dyadic) -> f64 {
        let mut h = mix64(self.0 ^ 0x9e37_79b9_7f4a_7c15);
        h = mix64(h ^ key.num as u64);
        h = mix64(h.wrapping_add(key.exp as u64));
        (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn sub(&self, index: i64) -> u64 {
        mix64(mix64(self.0 ^ 0x2545_f491_4f6c_dd1d) ^ index as u64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseField {
    seed: u64,
    n_max: u32,
    t_min: i64,
    t_max: i64,
    salts: BTreeMap<String, u64>,
}

impl NoiseField {
    pub fn new(seed: u64, n_max: u32, horizon: (i64, i64)) -> Result<Self, NoiseError> {
        if n_max > MAX_LEVEL {
            return Err(NoiseError::LevelTooDeep(n_max));
        }
        if horizon.0 >= horizon.1 {
            return Err(NoiseError::EmptyHorizon(horizon.0, horizon.1));
        }
        Ok(NoiseField {
            seed,
            n_max,
            t_min: horizon.0,
            t_max: horizon.1,
            salts: BTreeMap::new(),
        })
    }

    pub fn from_config(cfg: &NoiseConfig) -> Result<Self, NoiseError> {
        Self::new(cfg.seed, cfg.n_max, (cfg.horizon[0], cfg.horizon[1]))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_max(&self) -> u32 {
        self.n_max
    }

    pub fn horizon(&self) -> (i64, i64) {
        (self.t_min, self.t_max)
    }

    /// Same field with another master seed (overrides are kept).
    pub fn with_seed(&self, seed: u64) -> Self {
        NoiseField { seed, ..self.clone() }
    }

    /// Same field with one namespace re-salted; every other stream is unchanged.
    pub fn corrupted(&self, namespace: &str, salt: u64) -> Self {
        let mut f = self.clone();
        f.salts.insert(namespace.to_string(), salt);
        f
    }

    pub fn stream(&self, namespace: &str) -> StreamKey {
        let salt = self.salts.get(namespace).copied().unwrap_or(0);
        let ns = fnv1a(namespace.as_bytes()) ^ mix64(salt);
        StreamKey(mix64(mix64(self.seed) ^ ns))
    }

    pub fn keyed_uniform(&self, namespace: &str, key: Dyadic) -> f64 {
        self.stream(namespace).uniform(key)
    }

    pub fn gaussian_namespace(channel: u32) -> String {
        format!("w/{channel}")
    }

    /// Finest-level path of one channel over the whole horizon.
    pub fn channel_path(&self, channel: u32) -> ChannelPath {
        let key = self.stream(&Self::gaussian_namespace(channel));
        let per_unit = 1usize << self.n_max;
        let units = (self.t_max - self.t_min) as usize;
        let mut cum = Vec::with_capacity(units * per_unit + 1);
        cum.push(0i64);
        let mut buf = vec![0i64; per_unit];
        let mut xi = vec![0f64; per_unit / 2 + 1];
        for u in 0..units {
            let k = self.t_min + u as i64;
            levy_unit(key.sub(k), self.n_max, &mut buf, &mut xi);
            let mut acc = *cum.last().unwrap();
            for &d in &buf {
                acc += d;
                cum.push(acc);
            }
        }
        ChannelPath {
            channel,
            n_max: self.n_max,
            origin: self.t_min << self.n_max,
            cum,
        }
    }

    /// Tick index of `s` at level `n_max`, checked against the horizon.
    pub fn ticks(&self, s: Dyadic) -> Result<i64, NoiseError> {
        let x = s.to_f64();
        if x < self.t_min as f64 || x > self.t_max as f64 {
            return Err(NoiseError::OutsideHorizon(x, self.t_min, self.t_max));
        }
        s.ticks_at(self.n_max).ok_or(NoiseError::TooFine(x, self.n_max))
    }

    pub fn increment(&self, channel: u32, s: Dyadic, t: Dyadic) -> Result<f64, NoiseError> {
        let (a, b) = self.interval(s, t)?;
        Ok(self.channel_path(channel).increment(a, b))
    }

    /// Sign of the finest increment on cell `[c, c+1) * 2^-n_max`; zero maps to +1.
    pub fn rademacher(&self, channel: u32, cell: i64) -> Result<i8, NoiseError> {
        let t = Dyadic::from_ticks(cell, self.n_max);
        self.ticks(t)?;
        self.ticks(Dyadic::from_ticks(cell + 1, self.n_max))?;
        let p = self.channel_path(channel);
        Ok(if p.fixed(cell + 1) - p.fixed(cell) >= 0 { 1 } else { -1 })
    }

    pub fn event_a(&self, channels: &[u32], s: Dyadic, t: Dyadic, l: f64) -> Result<bool, NoiseError> {
        let (a, b) = self.interval(s, t)?;
        Ok(channels.iter().all(|&c| self.channel_path(c).event_a(a, b, l)))
    }

    pub fn omega_n(
        &self,
        channels: &[u32],
        s: Dyadic,
        t: Dyadic,
        l: f64,
        n: u32,
    ) -> Result<bool, NoiseError> {
        let (a, b) = self.interval(s, t)?;
        Ok(channels.iter().all(|&c| self.channel_path(c).omega_n(a, b, l, n)))
    }

    fn interval(&self, s: Dyadic, t: Dyadic) -> Result<(i64, i64), NoiseError> {
        let a = self.ticks(s)?;
        let b = self.ticks(t)?;
        if b < a {
            return Err(NoiseError::Reversed(s.to_f64(), t.to_f64()));
        }
        Ok((a, b))
    }
}

/// Fill `out` with the `2^n` finest increments of one unit interval.
fn levy_unit(seed: u64, n: u32, out: &mut [i64], xi: &mut [f64]) {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let root: f64 = rng.sample(StandardNormal);
    out[0] = (root * FIXED_SCALE).round() as i64;
    let mut len = 1usize;
    for j in 0..n {
        // bridge midpoint: left = P/2 + sqrt(h)/2 * xi, with h = 2^-j
        let sigma = FIXED_SCALE * 0.5 * (-(j as f64) * 0.5).exp2();
        for x in xi.iter_mut().take(len) {
            *x = rng.sample(StandardNormal);
        }
        for idx in (0..len).rev() {
            let p = out[idx];
            let left = (p >> 1) + (xi[idx] * sigma).round() as i64;
            out[2 * idx] = left;
            out[2 * idx + 1] = p - left;
        }
        len *= 2;
    }
}

/// A materialized channel: fixed-point values at every finest tick of the horizon.
#[derive(Clone, Debug)]
pub struct ChannelPath {
    channel: u32,
    n_max: u32,
    origin: i64,
    cum: Vec<i64>,
}

impl ChannelPath {
    pub fn channel(&self) -> u32 {
        self.channel
    }

    pub fn n_max(&self) -> u32 {
        self.n_max
    }

    pub fn first_tick(&self) -> i64 {
        self.origin
    }

    pub fn last_tick(&self) -> i64 {
        self.origin + self.cum.len() as i64 - 1
    }

    /// Fixed-point value at an absolute finest tick, relative to the horizon start.
    pub fn fixed(&self, tick: i64) -> i64 {
        self.cum[(tick - self.origin) as usize]
    }

    pub fn increment(&self, a: i64, b: i64) -> f64 {
        (self.fixed(b) - self.fixed(a)) as f64 / FIXED_SCALE
    }

    /// Signs of the increments over cells of level `level <= n_max`.
    pub fn signs(&self, level: u32) -> Vec<i8> {
        assert!(level <= self.n_max);
        let step = 1usize << (self.n_max - level);
        self.cum
            .windows(step + 1)
            .step_by(step)
            .map(|w| if w[step] - w[0] >= 0 { 1 } else { -1 })
            .collect()
    }

    pub fn event_a(&self, a: i64, b: i64, l: f64) -> bool {
        let i = (a - self.origin) as usize;
        let j = (b - self.origin) as usize;
        (oscillation(&self.cum, i, j) as f64 / FIXED_SCALE) < l
    }

    pub fn omega_n(&self, a: i64, b: i64, l: f64, n: u32) -> bool {
        let i = (a - self.origin) as usize;
        let j = (b - self.origin) as usize;
        let w = if n >= self.n_max { 1 } else { 1usize << (self.n_max - n) };
        (max_window_oscillation(&self.cum, i, j, w) as f64 / FIXED_SCALE) < l
    }
}

/// `max - min` of `path[a..=b]`.
pub fn oscillation(path: &[i64], a: usize, b: usize) -> i64 {
    let s = &path[a..=b];
    let hi = s.iter().max().unwrap();
    let lo = s.iter().min().unwrap();
    hi - lo
}

/// Largest `max - min` over windows `[u, u + w]` inside `[a, b]`.
pub fn max_window_oscillation(path: &[i64], a: usize, b: usize, w: usize) -> i64 {
    if b - a <= w {
        return oscillation(path, a, b);
    }
    let mut maxq: VecDeque<usize> = VecDeque::new();
    let mut minq: VecDeque<usize> = VecDeque::new();
    let mut best = 0;
    for v in a..=b {
        while maxq.back().is_some_and(|&k| path[k] <= path[v]) {
            maxq.pop_back();
        }
        maxq.push_back(v);
        while minq.back().is_some_and(|&k| path[k] >= path[v]) {
            minq.pop_back();
        }
        minq.push_back(v);
        let lo = v.saturating_sub(w).max(a);
        while maxq[0] < lo {
            maxq.pop_front();
        }
        while minq[0] < lo {
            minq.pop_front();
        }
        best = best.max(path[maxq[0]] - path[minq[0]]);
    }
    best
}

/// O(1) range max/min after an O(n log n) build.
#[derive(Clone, Debug)]
pub struct RangeExtrema {
    max: Vec<Vec<i64>>,
    min: Vec<Vec<i64>>,
}

impl RangeExtrema {
    pub fn new(path: &[i64]) -> Self {
        let mut max = vec![path.to_vec()];
        let mut min = vec![path.to_vec()];
        let mut span = 1;
        while 2 * span <= path.len() {
            let pm = max.last().unwrap();
            let pn = min.last().unwrap();
            let n = pm.len() - span;
            max.push((0..n).map(|i| pm[i].max(pm[i + span])).collect());
            min.push((0..n).map(|i| pn[i].min(pn[i + span])).collect());
            span *= 2;
        }
        RangeExtrema { max, min }
    }

    /// Oscillation of `path[a..=b]`.
    pub fn oscillation(&self, a: usize, b: usize) -> i64 {
        let len = b - a + 1;
        let k = (usize::BITS - 1 - len.leading_zeros()) as usize;
        let hi = self.max[k][a].max(self.max[k][b + 1 - (1 << k)]);
        let lo = self.min[k][a].min(self.min[k][b + 1 - (1 << k)]);
        hi - lo
    }
}
