//! Global stochastic flows of kernels on an oriented metric graph, assembled
//! from one star flow per vertex.
//!
//! Points are lattice points: a vertex, or an integer site (units of `δ`) in
//! the edge coordinate of an edge interior. Outgoing edges of `v` run over
//! `[0, L]` from `v`; an edge whose `to` end is a vertex has it at `L`, or at
//! `0` for an incoming infinite edge `(−∞, 0]`.
//!
//! The local kernel `K⁰_{s,t}` translates along the starting edge until the
//! first vertex hit and then follows that vertex's star flow. It is only used
//! on the lattice event `A_{s,t}`: every driving walk oscillates by less than
//! `L/δ − 2` sites over `[s, t]`. The margin covers the one-site kick at zero,
//! which can take the skew walk two sites past the driving walk's range, and
//! guarantees that star supports stay inside `G_v`.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{validate, GraphError, GraphPoint, GraphSpec, MetricGraph, StarChart};
use crate::noise::{max_window_oscillation, ChannelMode, Dyadic, NoiseConfig, NoiseError, NoiseField, RangeExtrema};
use crate::sbmflow::{evolve, Driver, FlowError};
use crate::starflow::{
    build_labeler, ComponentSpec, ExcursionLabeler, LabelMode, StarError, StarFlow, StarGraphSpec, StarKernelValue,
    StarMeasure, StarPoint, PRUNE,
};

#[derive(Debug, Error)]
pub enum GraphFlowError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Star(#[from] StarError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("invalid graph: {}", .0.join("; "))]
    InvalidGraph(Vec<String>),
    #[error("lattice: {0}")]
    Resolution(String),
    #[error("{0} is not on the lattice")]
    OffLattice(String),
    #[error("point is not in the neighbourhood of vertex {0}")]
    NotInNeighbourhood(usize),
    #[error("atom outside the chart of vertex {0}: {1}")]
    ChartDomain(usize, String),
    #[error("not a chain graph: {0}")]
    NotAChain(String),
    #[error("operation needs a single shared channel")]
    NeedsSharedChannel,
}

type Result<T> = std::result::Result<T, GraphFlowError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum LatticePoint {
    Vertex(usize),
    Interior { edge: usize, site: i64 },
}

/// A finitely supported probability measure, sorted by point.
pub type AtomMeasure = Vec<(LatticePoint, f64)>;

pub fn normalize(mu: &mut AtomMeasure) {
    mu.sort_by(|a, b| a.0.cmp(&b.0));
    let mut out: AtomMeasure = Vec::with_capacity(mu.len());
    for &(p, w) in mu.iter() {
        match out.last_mut() {
            Some(last) if last.0 == p => last.1 += w,
            _ => out.push((p, w)),
        }
    }
    out.retain(|a| a.1 >= PRUNE);
    *mu = out;
}

pub fn mass(mu: &[(LatticePoint, f64)]) -> f64 {
    mu.iter().map(|a| a.1).sum()
}

/// Same support and weights within `tol`.
pub fn measures_match<P: PartialEq>(a: &[(P, f64)], b: &[(P, f64)], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.0 == y.0 && (x.1 - y.1).abs() <= tol)
}

/// Graph, labelers and lattice resolution `δ = 2^-m`.
#[derive(Clone, Debug)]
pub struct GlobalFlowConfig {
    pub graph: MetricGraph,
    pub labelers: Vec<ExcursionLabeler>,
    pub m: u32,
    pub channels: ChannelMode,
    pub n_cap: u32,
}

impl GlobalFlowConfig {
    pub fn new(graph: MetricGraph, labelers: Vec<ExcursionLabeler>, m: u32, channels: ChannelMode) -> Result<Self> {
        let report = validate(&graph);
        if !report.is_valid() {
            return Err(GraphFlowError::InvalidGraph(
                report.violations.iter().map(|v| format!("{}: {}", v.subject, v.message)).collect(),
            ));
        }
        if labelers.len() != graph.vertices().len() {
            return Err(GraphFlowError::Resolution("one labeler per vertex required".into()));
        }
        for (v, lab) in labelers.iter().enumerate() {
            let spec = StarGraphSpec::from_chart(&graph.star_chart(v)?)?;
            let bad = crate::starflow::validate_labeler(lab, &spec);
            if !bad.is_empty() {
                return Err(StarError::InvalidLabeler(bad).into());
            }
        }
        let delta = (-(m as f64)).exp2();
        if let Some(l) = graph.min_length() {
            if delta > l / 8.0 {
                return Err(GraphFlowError::Resolution(format!("delta {delta} exceeds L/8 = {}", l / 8.0)));
            }
        }
        for e in graph.edges() {
            if let Some(l) = e.length {
                if (l / delta).fract() != 0.0 {
                    return Err(GraphFlowError::Resolution(format!("length of `{}` is not a multiple of delta", e.id)));
                }
            }
        }
        Ok(GlobalFlowConfig { graph, labelers, m, channels, n_cap: crate::sbmflow::DEFAULT_N_CAP })
    }

    /// Every vertex labeled in `mode` (mapping or wiener).
    pub fn uniform(graph: MetricGraph, mode: LabelMode, m: u32, channels: ChannelMode) -> Result<Self> {
        let labelers = (0..graph.vertices().len())
            .map(|v| {
                let spec = StarGraphSpec::from_chart(&graph.star_chart(v)?)?;
                Ok(build_labeler(mode, &[], &[], &spec)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(graph, labelers, m, channels)
    }

    pub fn delta(&self) -> f64 {
        (-(self.m as f64)).exp2()
    }

    pub fn level(&self) -> u32 {
        2 * self.m
    }

    pub fn ticks(&self, t: f64) -> Result<i64> {
        Dyadic::from_f64(t)
            .and_then(|d| d.ticks_at(self.level()))
            .ok_or(FlowError::OffGrid(t, self.level()).into())
    }

    pub fn lattice_point(&self, p: &GraphPoint) -> Result<LatticePoint> {
        if !self.graph.contains(p) {
            return Err(GraphFlowError::OffLattice(format!("{p:?} (not in the graph)")));
        }
        match *p {
            GraphPoint::Vertex(v) => Ok(LatticePoint::Vertex(v)),
            GraphPoint::Edge { edge, r } => {
                let y = r / self.delta();
                if y.fract() != 0.0 {
                    return Err(GraphFlowError::OffLattice(format!("{p:?}")));
                }
                Ok(LatticePoint::Interior { edge, site: y as i64 })
            }
        }
    }

    pub fn graph_point(&self, p: LatticePoint) -> GraphPoint {
        match p {
            LatticePoint::Vertex(v) => GraphPoint::Vertex(v),
            LatticePoint::Interior { edge, site } => GraphPoint::Edge { edge, r: site as f64 * self.delta() },
        }
    }

    pub fn realize(&self, field: &NoiseField) -> Result<GraphRealization<'_>> {
        GraphRealization::new(self, field)
    }
}

/// First tick of `K_{s,·}` reaching a vertex from an edge interior.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Tau {
    /// The start is a vertex: `τ = s` by convention.
    Start,
    Hit { tick: i64, vertex: usize },
    /// Not within the horizon.
    Never,
}

/// The flow driven by one noise realization.
pub struct GraphRealization<'a> {
    cfg: &'a GlobalFlowConfig,
    drivers: Vec<Arc<Driver>>,
    extrema: Vec<RangeExtrema>,
    edge_driver: Vec<usize>,
    stars: Vec<StarFlow>,
    charts: Vec<StarChart>,
    len_sites: Vec<Option<i64>>,
    l_sites: Option<i64>,
    /// Vertices whose star kernels were evaluated, while tracing.
    touched: RefCell<Option<BTreeSet<usize>>>,
}

impl<'a> GraphRealization<'a> {
    fn new(cfg: &'a GlobalFlowConfig, field: &NoiseField) -> Result<Self> {
        let g = &cfg.graph;
        let mut channels: Vec<u32> = (0..g.edges().len()).map(|e| cfg.channels.channel_of(e)).collect();
        let edge_channel = channels.clone();
        channels.sort_unstable();
        channels.dedup();
        let drivers = channels
            .iter()
            .map(|&c| Driver::new(field, c, cfg.m).map(Arc::new))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let extrema = drivers.iter().map(|d| RangeExtrema::new(d.walk_path())).collect();
        let edge_driver: Vec<usize> =
            edge_channel.iter().map(|c| channels.binary_search(c).unwrap()).collect();
        let mut stars = Vec::with_capacity(g.vertices().len());
        let mut charts = Vec::with_capacity(g.vertices().len());
        for (v, name) in g.vertices().iter().enumerate() {
            let chart = g.star_chart(v)?;
            let spec = StarGraphSpec::from_chart(&chart)?;
            let map = chart.edges.iter().map(|&e| edge_driver[e]).collect();
            stars.push(StarFlow::with_drivers(
                field,
                spec,
                cfg.labelers[v].clone(),
                cfg.m,
                &vertex_prefix(name),
                None,
                drivers.clone(),
                map,
            )?);
            charts.push(chart);
        }
        let delta = cfg.delta();
        let len_sites = g.edges().iter().map(|e| e.length.map(|l| (l / delta) as i64)).collect();
        let l_sites = g.min_length().map(|l| (l / delta) as i64);
        Ok(GraphRealization {
            cfg,
            drivers,
            extrema,
            edge_driver,
            stars,
            charts,
            len_sites,
            l_sites,
            touched: RefCell::new(None),
        })
    }

    pub fn config(&self) -> &GlobalFlowConfig {
        self.cfg
    }

    pub fn star(&self, v: usize) -> &StarFlow {
        &self.stars[v]
    }

    pub fn chart(&self, v: usize) -> &StarChart {
        &self.charts[v]
    }

    pub fn first_tick(&self) -> i64 {
        self.drivers[0].first_tick()
    }

    pub fn last_tick(&self) -> i64 {
        self.drivers[0].last_tick()
    }

    fn check(&self, s: i64, t: i64) -> Result<()> {
        self.drivers[0].check(s, t).map_err(Into::into)
    }

    /// Driving walk of `edge`'s channel at `tick`, in sites.
    pub fn walk(&self, edge: usize, tick: i64) -> i64 {
        self.drivers[self.edge_driver[edge]].walk(tick)
    }

    fn vertex_at(&self, edge: usize, site: i64) -> Option<usize> {
        let e = &self.cfg.graph.edges()[edge];
        if site == 0 && e.from.is_some() {
            return e.from;
        }
        let end = self.len_sites[edge].unwrap_or(0);
        if site == end && e.to.is_some() {
            return e.to;
        }
        None
    }

    /// Coordinate of `v` on `edge`, in sites.
    fn coord_sites(&self, v: usize, edge: usize) -> i64 {
        let e = &self.cfg.graph.edges()[edge];
        if e.from == Some(v) {
            0
        } else {
            self.len_sites[edge].unwrap_or(0)
        }
    }

    fn first_hit(&self, edge: usize, site: i64, s: i64, t: i64) -> Option<(i64, usize)> {
        let w0 = self.walk(edge, s);
        (s..=t).find_map(|k| self.vertex_at(edge, site + self.walk(edge, k) - w0).map(|v| (k, v)))
    }

    pub fn tau(&self, s: i64, x: LatticePoint) -> Result<Tau> {
        self.check(s, s)?;
        Ok(match x {
            LatticePoint::Vertex(_) => Tau::Start,
            LatticePoint::Interior { edge, site } => match self.first_hit(edge, site, s, self.last_tick()) {
                Some((tick, vertex)) => Tau::Hit { tick, vertex },
                None => Tau::Never,
            },
        })
    }

    fn index(&self, tick: i64) -> usize {
        (tick - self.first_tick()) as usize
    }

    /// The lattice event `A_{s,t}`; vacuous when every edge is infinite.
    pub fn event_a(&self, s: i64, t: i64) -> bool {
        let Some(l) = self.l_sites else { return true };
        let (i, j) = (self.index(s), self.index(t));
        self.extrema.iter().all(|e| e.oscillation(i, j) + 2 < l)
    }

    /// Every window of width `2^-n` inside `[s, t]` satisfies the `A` bound.
    pub fn omega_n(&self, s: i64, t: i64, n: u32) -> bool {
        let Some(l) = self.l_sites else { return true };
        let level = self.cfg.level();
        let w = if n >= level { 1 } else { 1usize << (level - n) };
        let (i, j) = (self.index(s), self.index(t));
        self.drivers.iter().all(|d| max_window_oscillation(d.walk_path(), i, j, w) + 2 < l)
    }

    /// `n_{s,t}`: least `n` with `omega_n`, or `None` (the `Ω^c` branch).
    pub fn n_st(&self, s: i64, t: i64) -> Option<u32> {
        let top = self.cfg.n_cap.min(self.cfg.level());
        (0..=top).find(|&n| self.omega_n(s, t, n))
    }

    pub fn in_neighbourhood(&self, v: usize, p: LatticePoint) -> bool {
        match p {
            LatticePoint::Vertex(w) => w == v,
            LatticePoint::Interior { edge, .. } => self.charts[v].star_edge(edge).is_some(),
        }
    }

    /// `i_v`: a point of `G_v` in the star chart of `v`.
    pub fn push_point(&self, v: usize, p: LatticePoint) -> Result<StarPoint> {
        match p {
            LatticePoint::Vertex(w) if w == v => Ok(StarPoint::Center),
            LatticePoint::Interior { edge, site } => {
                let j = self.charts[v].star_edge(edge).ok_or(GraphFlowError::NotInNeighbourhood(v))?;
                Ok(StarPoint::on_edge(j, site - self.coord_sites(v, edge)))
            }
            _ => Err(GraphFlowError::NotInNeighbourhood(v)),
        }
    }

    /// `i_v^{-1}` on the image of `G_v`.
    pub fn pull_point(&self, v: usize, p: StarPoint) -> Result<LatticePoint> {
        match p {
            StarPoint::Center => Ok(LatticePoint::Vertex(v)),
            StarPoint::Edge { edge: j, r } => {
                let chart = &self.charts[v];
                let edge = chart.edges[j];
                let site = self.coord_sites(v, edge) + chart.sign(j) as i64 * r;
                let inside = match (self.cfg.graph.edges()[edge].from, self.len_sites[edge]) {
                    (_, Some(l)) => 0 < site && site < l,
                    (Some(_), None) => site > 0,
                    (None, None) => site < 0,
                };
                if inside {
                    Ok(LatticePoint::Interior { edge, site })
                } else {
                    Err(GraphFlowError::ChartDomain(v, format!("radius {r} on star edge {j}")))
                }
            }
        }
    }

    pub fn push_measure(&self, v: usize, mu: &[(LatticePoint, f64)]) -> Result<StarMeasure> {
        let mut out = mu.iter().map(|&(p, w)| Ok((self.push_point(v, p)?, w))).collect::<Result<StarMeasure>>()?;
        crate::starflow::normalize(&mut out);
        Ok(out)
    }

    fn star_pullback(&self, v: usize, s: i64, p: StarPoint, t: i64) -> Result<AtomMeasure> {
        if let Some(set) = self.touched.borrow_mut().as_mut() {
            set.insert(v);
        }
        let k = self.stars[v].kernel(s, p, t)?;
        k.atoms.iter().map(|&(q, w)| Ok((self.pull_point(v, q)?, w))).collect()
    }

    pub fn k0(&self, s: i64, t: i64, x: LatticePoint) -> Result<AtomMeasure> {
        self.check(s, t)?;
        if s == t || !self.event_a(s, t) {
            return Ok(vec![(x, 1.0)]);
        }
        match x {
            LatticePoint::Vertex(v) => self.star_pullback(v, s, StarPoint::Center, t),
            LatticePoint::Interior { edge, site } => match self.first_hit(edge, site, s, t) {
                None => Ok(vec![(LatticePoint::Interior { edge, site: site + self.walk(edge, t) - self.walk(edge, s) }, 1.0)]),
                Some((tau, v)) if tau == t => Ok(vec![(LatticePoint::Vertex(v), 1.0)]),
                Some((_, v)) => self.star_pullback(v, s, self.push_point(v, x)?, t),
            },
        }
    }

    pub fn apply_k0(&self, mu: &[(LatticePoint, f64)], s: i64, t: i64) -> Result<AtomMeasure> {
        let mut out = AtomMeasure::new();
        for &(p, w) in mu {
            out.extend(self.k0(s, t, p)?.into_iter().map(|(q, u)| (q, w * u)));
        }
        normalize(&mut out);
        Ok(out)
    }

    /// Breakpoints `s, s⁺_n, s⁺_n + 2^-n, …, t_n, t` of the level-`n` mesh.
    pub fn mesh(&self, s: i64, t: i64, n: u32) -> Vec<i64> {
        let level = self.cfg.level();
        let h = 1i64 << (level - n.min(level));
        let up = -((-s).div_euclid(h)) * h;
        if up > t {
            return vec![s, t];
        }
        let mut out = vec![s];
        let mut k = up;
        while k <= t {
            if *out.last().unwrap() != k {
                out.push(k);
            }
            k += h;
        }
        if *out.last().unwrap() != t {
            out.push(t);
        }
        out
    }

    pub fn kn_measure(&self, mu: &[(LatticePoint, f64)], s: i64, t: i64, n: u32) -> Result<AtomMeasure> {
        self.check(s, t)?;
        let pts = self.mesh(s, t, n);
        let mut cur: AtomMeasure = mu.to_vec();
        normalize(&mut cur);
        for w in pts.windows(2) {
            cur = self.apply_k0(&cur, w[0], w[1])?;
        }
        Ok(cur)
    }

    pub fn kn(&self, s: i64, t: i64, x: LatticePoint, n: u32) -> Result<AtomMeasure> {
        self.kn_measure(&[(x, 1.0)], s, t, n)
    }

    /// `μ K_{s,t}` and the level `n_{s,t}` used (`None`: identity on `Ω^c`).
    pub fn k_measure(&self, mu: &[(LatticePoint, f64)], s: i64, t: i64) -> Result<(AtomMeasure, Option<u32>)> {
        self.check(s, t)?;
        match self.n_st(s, t) {
            Some(n) => Ok((self.kn_measure(mu, s, t, n)?, Some(n))),
            None => {
                let mut cur = mu.to_vec();
                normalize(&mut cur);
                Ok((cur, None))
            }
        }
    }

    pub fn k(&self, s: i64, t: i64, x: LatticePoint) -> Result<AtomMeasure> {
        Ok(self.k_measure(&[(x, 1.0)], s, t)?.0)
    }

    /// `K_{s,t}(x)` and the vertices whose label streams it may have read.
    pub fn k_traced(&self, s: i64, t: i64, x: LatticePoint) -> Result<(AtomMeasure, BTreeSet<usize>)> {
        *self.touched.borrow_mut() = Some(BTreeSet::new());
        let k = self.k(s, t, x);
        let set = self.touched.borrow_mut().take().unwrap_or_default();
        Ok((k?, set))
    }

    /// First tick at which `K_{s,·}(x)` puts mass outside `G_v`, by one-tick steps.
    pub fn rho(&self, s: i64, x: LatticePoint, v: usize) -> Result<Option<i64>> {
        if !self.in_neighbourhood(v, x) {
            return Err(GraphFlowError::NotInNeighbourhood(v));
        }
        let mut mu = vec![(x, 1.0)];
        for u in s..self.last_tick() {
            mu = self.apply_k0(&mu, u, u + 1)?;
            if mu.iter().any(|a| !self.in_neighbourhood(v, a.0)) {
                return Ok(Some(u + 1));
            }
        }
        Ok(None)
    }

    /// `K̂^{0,v}_{s,t}(x̂)`: the global `K⁰` seen through the chart when the free
    /// translation reaches the center on `A_{s,t}`, free translation otherwise.
    pub fn restrict_k0(&self, v: usize, s: i64, x: StarPoint, t: i64) -> Result<StarMeasure> {
        self.check(s, t)?;
        if s == t {
            return Ok(vec![(x, 1.0)]);
        }
        let (j, y0) = match x {
            StarPoint::Center => (0, 0),
            StarPoint::Edge { edge, r } => (edge, self.charts[v].sign(edge) as i64 * r),
        };
        let edge = self.charts[v].edges[j];
        let w0 = self.walk(edge, s);
        let hits = y0 == 0 || (s..=t).any(|k| y0 + self.walk(edge, k) - w0 == 0);
        if !hits {
            return Ok(vec![(StarPoint::on_edge(j, y0 + self.walk(edge, t) - w0), 1.0)]);
        }
        if !self.event_a(s, t) {
            return Ok(vec![(x, 1.0)]);
        }
        let global = self.k0(s, t, self.pull_point(v, x)?)?;
        self.push_measure(v, &global)
    }

    /// The star kernel of `v` rebuilt from the global flow, on the mesh of `k`.
    pub fn restrict_to_star(&self, v: usize, s: i64, x: StarPoint, t: i64) -> Result<StarKernelValue> {
        self.check(s, t)?;
        let mut cur: StarMeasure = vec![(x, 1.0)];
        if let Some(n) = self.n_st(s, t) {
            for w in self.mesh(s, t, n).windows(2) {
                let mut next = StarMeasure::new();
                for &(p, a) in &cur {
                    next.extend(self.restrict_k0(v, w[0], p, w[1])?.into_iter().map(|(q, b)| (q, a * b)));
                }
                crate::starflow::normalize(&mut next);
                cur = next;
            }
        }
        Ok(StarKernelValue { delta: self.cfg.delta(), atoms: cur })
    }

    /// Single-trajectory flow on a chain: translate to a vertex, follow its
    /// skew walk until the next vertex, splice, repeat.
    pub fn barrier_flow(&self, s: i64, x: LatticePoint, t: i64) -> Result<LatticePoint> {
        self.check(s, t)?;
        if self.drivers.len() != 1 {
            return Err(GraphFlowError::NeedsSharedChannel);
        }
        for (v, c) in self.charts.iter().enumerate() {
            if c.n_plus != 1 || c.n() > 2 {
                return Err(GraphFlowError::NotAChain(self.cfg.graph.vertices()[v].clone()));
            }
        }
        let (mut k, mut p) = (s, x);
        loop {
            match p {
                LatticePoint::Interior { edge, site } => match self.first_hit(edge, site, k, t) {
                    None => {
                        return Ok(LatticePoint::Interior { edge, site: site + self.walk(edge, t) - self.walk(edge, k) })
                    }
                    Some((tau, v)) => (k, p) = (tau, LatticePoint::Vertex(v)),
                },
                LatticePoint::Vertex(v) => {
                    if k == t {
                        return Ok(p);
                    }
                    let star = &self.stars[v];
                    let chart = &self.charts[v];
                    let path = evolve(star.params(), star.radial().unwrap(), k, 0, t)?;
                    let reach = |y: i64| {
                        let j = if y > 0 { 0 } else { 1 };
                        chart.edges.get(j).and_then(|&e| self.len_sites[e]).is_some_and(|l| y.abs() >= l)
                    };
                    match path.values.iter().position(|&y| reach(y)) {
                        Some(i) => {
                            let y = path.values[i];
                            let e = &self.cfg.graph.edges()[chart.edges[if y > 0 { 0 } else { 1 }]];
                            let next = if y > 0 { e.to } else { e.from };
                            (k, p) = (k + i as i64, LatticePoint::Vertex(next.unwrap()));
                        }
                        None => {
                            let y = path.at(t);
                            return if y == 0 { Ok(p) } else { self.pull_point(v, StarPoint::on_edge(if y > 0 { 0 } else { 1 }, y)) };
                        }
                    }
                }
            }
        }
    }
}

/// Label namespace prefix of vertex `name`.
pub fn vertex_prefix(name: &str) -> String {
    format!("v/{name}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelerSpec {
    pub mode: LabelMode,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub m_plus: Vec<ComponentSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub m_minus: Vec<ComponentSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PointSpec {
    Vertex { vertex: String },
    Edge { edge: String, r: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuerySpec {
    pub s: f64,
    pub t: f64,
    pub x: PointSpec,
}

/// The experiment JSON format. Vertices without a labeler use mapping mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub graph: GraphSpec,
    #[serde(default)]
    pub labelers: BTreeMap<String, LabelerSpec>,
    pub noise: NoiseConfig,
    pub delta: f64,
    #[serde(default)]
    pub queries: Vec<QuerySpec>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn m(&self) -> Result<u32> {
        let m = -self.delta.log2();
        if self.delta > 0.0 && m.fract() == 0.0 && m >= 0.0 {
            Ok(m as u32)
        } else {
            Err(GraphFlowError::Resolution(format!("delta {} is not a power 2^-m", self.delta)))
        }
    }

    pub fn build(&self) -> Result<GlobalFlowConfig> {
        let graph = MetricGraph::from_spec(&self.graph)?;
        for name in self.labelers.keys() {
            graph.vertex_id(name).ok_or_else(|| GraphError::UnknownVertex(name.clone()))?;
        }
        let labelers = graph
            .vertices()
            .iter()
            .enumerate()
            .map(|(v, name)| {
                let spec = StarGraphSpec::from_chart(&graph.star_chart(v)?)?;
                Ok(match self.labelers.get(name) {
                    Some(l) => build_labeler(l.mode, &l.m_plus, &l.m_minus, &spec)?,
                    None => ExcursionLabeler::mapping(&spec),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        GlobalFlowConfig::new(graph, labelers, self.m()?, self.noise.channels)
    }

    pub fn point(&self, cfg: &GlobalFlowConfig, p: &PointSpec) -> Result<LatticePoint> {
        let g = &cfg.graph;
        let gp = match p {
            PointSpec::Vertex { vertex } => {
                GraphPoint::Vertex(g.vertex_id(vertex).ok_or_else(|| GraphError::UnknownVertex(vertex.clone()))?)
            }
            PointSpec::Edge { edge, r } => GraphPoint::Edge {
                edge: g.edge_id(edge).ok_or_else(|| GraphFlowError::OffLattice(format!("unknown edge `{edge}`")))?,
                r: *r,
            },
        };
        cfg.lattice_point(&gp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::presets;

    fn barbell(mode: LabelMode, m: u32) -> GlobalFlowConfig {
        let g = MetricGraph::from_spec(&presets::barbell(1.0, (0.6, 0.4), (0.3, 0.7))).unwrap();
        GlobalFlowConfig::uniform(g, mode, m, ChannelMode::Shared).unwrap()
    }

    fn field(seed: u64) -> NoiseField {
        NoiseField::new(seed, 8, (0, 2)).unwrap()
    }

    fn bridge(site: i64) -> LatticePoint {
        LatticePoint::Interior { edge: 1, site }
    }

    #[test]
    fn resolution_and_lattice_checks() {
        let g = MetricGraph::from_spec(&presets::barbell(1.0, (0.6, 0.4), (0.3, 0.7))).unwrap();
        assert!(GlobalFlowConfig::uniform(g.clone(), LabelMode::Mapping, 2, ChannelMode::Shared).is_err());
        let cfg = GlobalFlowConfig::uniform(g, LabelMode::Mapping, 4, ChannelMode::Shared).unwrap();
        assert!(cfg.lattice_point(&GraphPoint::Edge { edge: 1, r: 0.3 }).is_err());
        assert_eq!(cfg.lattice_point(&GraphPoint::Edge { edge: 1, r: 0.25 }).unwrap(), bridge(4));
        assert!(cfg.lattice_point(&GraphPoint::Edge { edge: 1, r: 1.0 }).is_err());
    }

    #[test]
    fn tau_on_infinite_edge() {
        let cfg = barbell(LabelMode::Mapping, 4);
        let x = LatticePoint::Interior { edge: 0, site: -8 };
        let (mut hit, mut never) = (false, false);
        for seed in 0..200 {
            let f = NoiseField::new(seed, 8, (0, 1)).unwrap();
            let r = cfg.realize(&f).unwrap();
            match r.tau(0, x).unwrap() {
                Tau::Hit { tick, vertex } => {
                    assert!(tick >= 0);
                    assert_eq!(vertex, 0);
                    assert_eq!(-8 + r.walk(0, tick) - r.walk(0, 0), 0);
                    hit = true;
                }
                Tau::Never => never = true,
                Tau::Start => unreachable!(),
            }
            assert_eq!(r.tau(5, LatticePoint::Vertex(1)).unwrap(), Tau::Start);
        }
        assert!(hit && never);
    }

    #[test]
    fn k0_basic_cases() {
        let cfg = barbell(LabelMode::Wiener, 4);
        for seed in 0..30 {
            let r = cfg.realize(&field(seed)).unwrap();
            assert_eq!(r.k0(7, 7, bridge(3)).unwrap(), vec![(bridge(3), 1.0)]);
            for (s, t) in [(0, 16), (5, 40), (64, 80)] {
                for x in [LatticePoint::Vertex(0), bridge(2), bridge(14)] {
                    let k = r.k0(s, t, x).unwrap();
                    assert!((mass(&k) - 1.0).abs() < 1e-12);
                    if !r.event_a(s, t) {
                        assert_eq!(k, vec![(x, 1.0)]);
                        continue;
                    }
                    if x == LatticePoint::Vertex(0) {
                        let star = r.star(0).kernel(s, StarPoint::Center, t).unwrap();
                        let back: AtomMeasure = star.atoms.iter().map(|&(p, w)| (r.pull_point(0, p).unwrap(), w)).collect();
                        assert_eq!(k, back);
                    }
                    if let Tau::Hit { tick, vertex } = r.tau(s, x).unwrap() {
                        if tick < t {
                            assert!(k.iter().all(|a| r.in_neighbourhood(vertex, a.0)));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn kn_levels_and_chaining() {
        let cfg = barbell(LabelMode::Wiener, 4);
        for seed in 0..30 {
            let r = cfg.realize(&field(seed)).unwrap();
            let x = bridge(5);
            assert_eq!(r.kn(3, 11, x, 0).unwrap(), r.k0(3, 11, x).unwrap());
            let two = r.apply_k0(&r.k0(3, 256, x).unwrap(), 256, 300).unwrap();
            assert_eq!(r.kn(3, 300, x, 0).unwrap(), two);
            let (s, t) = (10, 400);
            if let Some(n) = r.n_st(s, t) {
                let base = r.kn(s, t, x, n).unwrap();
                for m in n..=8 {
                    assert!(measures_match(&r.kn(s, t, x, m).unwrap(), &base, 1e-12), "seed {seed} n {n} m {m}");
                }
            }
        }
    }

    #[test]
    fn k_flow_property_and_mass() {
        for mode in [LabelMode::Mapping, LabelMode::Wiener] {
            let cfg = barbell(mode, 4);
            for seed in 0..30 {
                let r = cfg.realize(&field(seed)).unwrap();
                for x in [LatticePoint::Vertex(1), bridge(1), LatticePoint::Interior { edge: 2, site: 3 }] {
                    let (s, t, u) = (16, 100, 300);
                    let direct = r.k(s, u, x).unwrap();
                    let composed = r.k_measure(&r.k(s, t, x).unwrap(), t, u).unwrap().0;
                    assert!(measures_match(&direct, &composed, 1e-12), "seed {seed}");
                    assert!((mass(&direct) - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn star_graph_k_is_the_star_kernel() {
        let g = MetricGraph::from_spec(&presets::star(&[0.25, 0.25, 0.5], 2)).unwrap();
        let cfg = GlobalFlowConfig::uniform(g, LabelMode::Wiener, 4, ChannelMode::Shared).unwrap();
        for seed in 0..20 {
            let r = cfg.realize(&field(seed)).unwrap();
            for x in [LatticePoint::Vertex(0), LatticePoint::Interior { edge: 2, site: -3 }] {
                let k = r.k(4, 300, x).unwrap();
                let star = r.star(0).kernel(4, r.push_point(0, x).unwrap(), 300).unwrap();
                assert_eq!(r.push_measure(0, &k).unwrap(), star.atoms);
                assert_eq!(r.rho(0, x, 0).unwrap(), None);
            }
        }
    }

    #[test]
    fn rho_and_chart_identity_on_barbell() {
        let cfg = barbell(LabelMode::Wiener, 4);
        let mut finite = 0;
        for seed in 0..40 {
            let r = cfg.realize(&field(seed)).unwrap();
            let x = bridge(4);
            let rho = r.rho(0, x, 0).unwrap();
            let end = rho.unwrap_or(r.last_tick() + 1);
            if rho.is_some() {
                finite += 1;
                let k = r.k(0, end, x).unwrap();
                assert!(k.iter().any(|a| a.0 == LatticePoint::Vertex(1)));
            }
            for t in (0..end).step_by(37) {
                let k = r.k(0, t, x).unwrap();
                let star = r.star(0).kernel(0, r.push_point(0, x).unwrap(), t).unwrap();
                assert!(measures_match(&r.push_measure(0, &k).unwrap(), &star.atoms, 1e-12));
                let back = r.restrict_to_star(0, 0, r.push_point(0, x).unwrap(), t).unwrap();
                assert!(back.matches(&star, 1e-12), "seed {seed} t {t}");
            }
        }
        assert!(finite > 0);
    }

    #[test]
    fn restrict_far_point_translates() {
        let cfg = barbell(LabelMode::Mapping, 4);
        let r = cfg.realize(&field(9)).unwrap();
        // star edge 1 of vertex a is `left`, on the negative side
        let x = StarPoint::Edge { edge: 1, r: 200 };
        let k = r.restrict_to_star(0, 0, x, 64).unwrap();
        let left = r.chart(0).edges[1];
        assert_eq!(k.atoms, vec![(StarPoint::Edge { edge: 1, r: 200 - (r.walk(left, 64) - r.walk(left, 0)) }, 1.0)]);
    }

    fn chain(alpha: &[f64]) -> GlobalFlowConfig {
        let lengths = vec![1.0; alpha.len() - 1];
        let g = MetricGraph::from_spec(&presets::chain(&lengths, alpha)).unwrap();
        GlobalFlowConfig::uniform(g, LabelMode::Mapping, 4, ChannelMode::Shared).unwrap()
    }

    #[test]
    fn barrier_single_vertex_is_evolve() {
        let cfg = chain(&[0.7]);
        for seed in 0..10 {
            let r = cfg.realize(&field(seed)).unwrap();
            let star = r.star(0);
            let path = evolve(star.params(), star.radial().unwrap(), 0, 0, 500).unwrap();
            for t in [0, 10, 200, 500] {
                let got = r.barrier_flow(0, LatticePoint::Vertex(0), t).unwrap();
                let want = r.pull_point(0, StarPoint::on_edge(if path.at(t) > 0 { 0 } else { 1 }, path.at(t))).unwrap();
                assert_eq!(got, want);
            }
        }
    }

    #[test]
    fn barrier_beta_zero_is_unrolled_walk_and_matches_k() {
        let cfg = chain(&[0.5, 0.5, 0.5]);
        for seed in 0..10 {
            let r = cfg.realize(&field(seed)).unwrap();
            // unrolled line: `in` is (−∞,0], then s0, s1 of 16 sites, then `out`
            let offset = [0i64, 0, 16, 32];
            let unroll = |p: LatticePoint| match p {
                LatticePoint::Vertex(v) => 16 * v as i64,
                LatticePoint::Interior { edge, site } => offset[edge] + site,
            };
            let x = LatticePoint::Interior { edge: 1, site: 5 };
            for t in [0, 50, 300, 512] {
                let got = r.barrier_flow(0, x, t).unwrap();
                assert_eq!(unroll(got), 5 + r.walk(0, t) - r.walk(0, 0));
            }
        }
        let cfg = chain(&[0.8, 0.3, 0.6]);
        for seed in 0..30 {
            let r = cfg.realize(&field(seed)).unwrap();
            let x = LatticePoint::Interior { edge: 2, site: 9 };
            for t in [100, 512] {
                assert_eq!(r.k(0, t, x).unwrap(), vec![(r.barrier_flow(0, x, t).unwrap(), 1.0)]);
            }
        }
    }

    #[test]
    fn experiment_json() {
        let text = r#"{
          "graph": {"vertices": ["a","b"],
            "edges": [{"id":"left","length":"inf","from":"inf","to":"a"},
                      {"id":"bridge","length":1,"from":"a","to":"b"},
                      {"id":"right","length":"inf","from":"b","to":"inf"}],
            "alpha": [{"vertex":"a","edge":"left","value":"2/5"},{"vertex":"a","edge":"bridge","value":"3/5"},
                      {"vertex":"b","edge":"bridge","value":0.5},{"vertex":"b","edge":"right","value":0.5}]},
          "labelers": {"b": {"mode": "wiener"}},
          "noise": {"seed": 3, "n_max": 8, "horizon": [0, 1]},
          "delta": 0.0625,
          "queries": [{"s": 0, "t": 0.5, "x": {"edge": "bridge", "r": 0.25}}, {"s": 0, "t": 1, "x": {"vertex": "a"}}]
        }"#;
        let exp = ExperimentConfig::from_json(text).unwrap();
        let cfg = exp.build().unwrap();
        assert_eq!(cfg.m, 4);
        assert_eq!(cfg.labelers[1].mode, LabelMode::Wiener);
        assert_eq!(exp.point(&cfg, &exp.queries[0].x).unwrap(), bridge(4));
        assert_eq!(exp.point(&cfg, &exp.queries[1].x).unwrap(), LatticePoint::Vertex(0));
        assert!(ExperimentConfig::from_json(&text.replace("0.0625", "0.1")).unwrap().build().is_err());
    }
}
