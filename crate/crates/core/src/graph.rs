//! Oriented metric graphs with transmission parameters, star charts and
//! glued test functions.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("duplicate vertex id `{0}`")]
    DuplicateVertex(String),
    #[error("duplicate edge id `{0}`")]
    DuplicateEdge(String),
    #[error("edge `{edge}` refers to unknown vertex `{vertex}`")]
    UnknownEndpoint { edge: String, vertex: String },
    #[error("alpha entry refers to unknown {kind} `{id}`")]
    UnknownAlphaTarget { kind: &'static str, id: String },
    #[error("missing alpha entry for vertex `{vertex}`, edge `{edge}`")]
    MissingAlpha { vertex: String, edge: String },
    #[error("duplicate alpha entry for vertex `{vertex}`, edge `{edge}`")]
    DuplicateAlpha { vertex: String, edge: String },
    #[error("cannot parse `{0}` as a number or p/q rational")]
    BadNumber(String),
    #[error("unknown vertex `{0}`")]
    UnknownVertex(String),
    #[error("point is not in the neighbourhood of vertex `{0}`")]
    NotInNeighbourhood(String),
    #[error("star coordinate {coord} on edge `{edge}` is outside the chart image")]
    OutsideChart { edge: String, coord: f64 },
}

/// A transmission weight: float value plus an exact form when one was given.
#[derive(Clone, Debug, PartialEq)]
pub struct Weight {
    pub value: f64,
    pub exact: Option<BigRational>,
}

impl Weight {
    pub fn float(value: f64) -> Self {
        Weight { value, exact: None }
    }

    pub fn ratio(num: i64, den: i64) -> Self {
        let r = BigRational::new(BigInt::from(num), BigInt::from(den));
        Weight { value: num as f64 / den as f64, exact: Some(r) }
    }

    /// Exact form, falling back to the shortest decimal that round-trips the float.
    pub fn exact_or_decimal(&self) -> Option<BigRational> {
        self.exact.clone().or_else(|| decimal_ratio(self.value))
    }
}

/// Parse the shortest round-trip decimal rendering of `x` as a rational.
pub fn decimal_ratio(x: f64) -> Option<BigRational> {
    if !x.is_finite() {
        return None;
    }
    parse_decimal(&format!("{x}"))
}

fn parse_decimal(s: &str) -> Option<BigRational> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    if int.is_empty() && frac.is_empty() {
        return None;
    }
    let digits = format!("{int}{frac}");
    let num = BigInt::from_str(if digits.is_empty() { "0" } else { &digits }).ok()?;
    let den = num_traits::pow(BigInt::from(10), frac.len());
    let r = BigRational::new(num, den);
    Some(if neg { -r } else { r })
}

/// A number in a config file: JSON number, or a string "p/q" / decimal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NumberSpec {
    Number(f64),
    Text(String),
}

impl NumberSpec {
    pub fn to_weight(&self) -> Result<Weight, GraphError> {
        match self {
            NumberSpec::Number(x) => Ok(Weight::float(*x)),
            NumberSpec::Text(s) => {
                let t = s.trim();
                let bad = || GraphError::BadNumber(s.clone());
                if let Some((p, q)) = t.split_once('/') {
                    let p = BigInt::from_str(p.trim()).map_err(|_| bad())?;
                    let q = BigInt::from_str(q.trim()).map_err(|_| bad())?;
                    if q.is_zero() {
                        return Err(bad());
                    }
                    let r = BigRational::new(p, q);
                    let value = ratio_to_f64(&r);
                    Ok(Weight { value, exact: Some(r) })
                } else {
                    let r = parse_decimal(t).ok_or_else(bad)?;
                    let value: f64 = t.parse().map_err(|_| bad())?;
                    Ok(Weight { value, exact: Some(r) })
                }
            }
        }
    }
}

pub(crate) fn ratio_to_f64(r: &BigRational) -> f64 {
    let n: f64 = r.numer().to_string().parse().unwrap_or(f64::NAN);
    let d: f64 = r.denom().to_string().parse().unwrap_or(f64::NAN);
    n / d
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LengthSpec {
    Number(f64),
    Text(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub id: String,
    pub length: LengthSpec,
    pub from: String,
    pub to: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaSpec {
    pub vertex: String,
    pub edge: String,
    pub value: NumberSpec,
}

/// The graph file format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub vertices: Vec<String>,
    pub edges: Vec<EdgeSpec>,
    pub alpha: Vec<AlphaSpec>,
}

const INF: &str = "inf";

#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub id: String,
    /// `None` for an infinite edge.
    pub length: Option<f64>,
    pub from: Option<usize>,
    pub to: Option<usize>,
}

impl Edge {
    /// Edge coordinate of `v` on this edge, if `v` is an endpoint.
    pub fn coord_of(&self, v: usize) -> Option<f64> {
        if self.from == Some(v) {
            Some(0.0)
        } else if self.to == Some(v) {
            Some(self.length.unwrap_or(0.0))
        } else {
            None
        }
    }

    /// Whether `r` is an interior coordinate of the edge.
    pub fn is_interior(&self, r: f64) -> bool {
        match (self.length, self.from, self.to) {
            (Some(l), _, _) => r > 0.0 && r < l,
            (None, Some(_), None) => r > 0.0,
            (None, None, Some(_)) => r < 0.0,
            _ => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricGraph {
    vertices: Vec<String>,
    edges: Vec<Edge>,
    alpha: BTreeMap<(usize, usize), Weight>,
    vertex_index: HashMap<String, usize>,
}

/// A point of the graph in real coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GraphPoint {
    Vertex(usize),
    Edge { edge: usize, r: f64 },
}

impl MetricGraph {
    pub fn from_spec(spec: &GraphSpec) -> Result<Self, GraphError> {
        let mut vertex_index = HashMap::new();
        for (i, v) in spec.vertices.iter().enumerate() {
            if vertex_index.insert(v.clone(), i).is_some() {
                return Err(GraphError::DuplicateVertex(v.clone()));
            }
        }
        let end = |edge: &str, s: &str| -> Result<Option<usize>, GraphError> {
            if s == INF {
                return Ok(None);
            }
            vertex_index.get(s).copied().map(Some).ok_or_else(|| GraphError::UnknownEndpoint {
                edge: edge.to_string(),
                vertex: s.to_string(),
            })
        };
        let mut edges = Vec::with_capacity(spec.edges.len());
        let mut edge_index = HashMap::new();
        for e in &spec.edges {
            if edge_index.insert(e.id.clone(), edges.len()).is_some() {
                return Err(GraphError::DuplicateEdge(e.id.clone()));
            }
            let length = match &e.length {
                LengthSpec::Number(x) => Some(*x),
                LengthSpec::Text(t) if t == INF => None,
                LengthSpec::Text(t) => Some(t.parse().map_err(|_| GraphError::BadNumber(t.clone()))?),
            };
            edges.push(Edge { id: e.id.clone(), length, from: end(&e.id, &e.from)?, to: end(&e.id, &e.to)? });
        }
        let mut alpha = BTreeMap::new();
        for a in &spec.alpha {
            let v = *vertex_index
                .get(&a.vertex)
                .ok_or_else(|| GraphError::UnknownAlphaTarget { kind: "vertex", id: a.vertex.clone() })?;
            let e = *edge_index
                .get(&a.edge)
                .ok_or_else(|| GraphError::UnknownAlphaTarget { kind: "edge", id: a.edge.clone() })?;
            if alpha.insert((v, e), a.value.to_weight()?).is_some() {
                return Err(GraphError::DuplicateAlpha { vertex: a.vertex.clone(), edge: a.edge.clone() });
            }
        }
        let g = MetricGraph { vertices: spec.vertices.clone(), edges, alpha, vertex_index };
        for v in 0..g.vertices.len() {
            for i in g.incident(v) {
                if !g.alpha.contains_key(&(v, i)) {
                    return Err(GraphError::MissingAlpha {
                        vertex: g.vertices[v].clone(),
                        edge: g.edges[i].id.clone(),
                    });
                }
            }
        }
        Ok(g)
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let spec: GraphSpec = serde_json::from_str(text).map_err(|e| e.to_string())?;
        Self::from_spec(&spec).map_err(|e| e.to_string())
    }

    pub fn to_spec(&self) -> GraphSpec {
        let end = |e: Option<usize>| e.map_or(INF.to_string(), |v| self.vertices[v].clone());
        GraphSpec {
            vertices: self.vertices.clone(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeSpec {
                    id: e.id.clone(),
                    length: e.length.map_or(LengthSpec::Text(INF.into()), LengthSpec::Number),
                    from: end(e.from),
                    to: end(e.to),
                })
                .collect(),
            alpha: self
                .alpha
                .iter()
                .map(|(&(v, i), w)| AlphaSpec {
                    vertex: self.vertices[v].clone(),
                    edge: self.edges[i].id.clone(),
                    value: match &w.exact {
                        Some(r) => NumberSpec::Text(r.to_string()),
                        None => NumberSpec::Number(w.value),
                    },
                })
                .collect(),
        }
    }

    pub fn vertices(&self) -> &[String] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn vertex_id(&self, name: &str) -> Option<usize> {
        self.vertex_index.get(name).copied()
    }

    pub fn edge_id(&self, name: &str) -> Option<usize> {
        self.edges.iter().position(|e| e.id == name)
    }

    /// Edges incident to `v`, outgoing (`I_v^+`) before incoming (`I_v^-`).
    pub fn incident(&self, v: usize) -> Vec<usize> {
        let mut out = self.outgoing(v);
        out.extend(self.incoming(v));
        out
    }

    pub fn outgoing(&self, v: usize) -> Vec<usize> {
        (0..self.edges.len()).filter(|&i| self.edges[i].from == Some(v)).collect()
    }

    pub fn incoming(&self, v: usize) -> Vec<usize> {
        (0..self.edges.len()).filter(|&i| self.edges[i].to == Some(v)).collect()
    }

    pub fn alpha(&self, v: usize, edge: usize) -> Option<&Weight> {
        self.alpha.get(&(v, edge))
    }

    /// `L = inf_i L_i`; `None` when every edge is infinite.
    pub fn min_length(&self) -> Option<f64> {
        self.edges.iter().filter_map(|e| e.length).reduce(f64::min)
    }

    pub fn contains(&self, p: &GraphPoint) -> bool {
        match *p {
            GraphPoint::Vertex(v) => v < self.vertices.len(),
            GraphPoint::Edge { edge, r } => edge < self.edges.len() && self.edges[edge].is_interior(r),
        }
    }

    /// Whether `p` lies in `G_v`: the vertex itself or an incident edge interior.
    pub fn in_neighbourhood(&self, v: usize, p: &GraphPoint) -> bool {
        match *p {
            GraphPoint::Vertex(w) => w == v,
            GraphPoint::Edge { edge, r } => {
                let e = &self.edges[edge];
                (e.from == Some(v) || e.to == Some(v)) && e.is_interior(r)
            }
        }
    }

    pub fn star_chart(&self, v: usize) -> Result<StarChart, GraphError> {
        if v >= self.vertices.len() {
            return Err(GraphError::UnknownVertex(v.to_string()));
        }
        let plus = self.outgoing(v);
        let minus = self.incoming(v);
        let mut edges = plus.clone();
        edges.extend(&minus);
        let alpha: Vec<Weight> = edges
            .iter()
            .map(|&i| self.alpha(v, i).cloned().unwrap_or(Weight::float(0.0)))
            .collect();
        let alpha_plus: f64 = alpha[..plus.len()].iter().map(|w| w.value).sum();
        Ok(StarChart {
            vertex: v,
            edges,
            n_plus: plus.len(),
            alpha,
            alpha_plus,
            beta: 2.0 * alpha_plus - 1.0,
        })
    }

    pub fn star_chart_by_name(&self, name: &str) -> Result<StarChart, GraphError> {
        let v = self.vertex_id(name).ok_or_else(|| GraphError::UnknownVertex(name.to_string()))?;
        self.star_chart(v)
    }

    /// Distance between two points of `G_v` through `v` or along a common edge.
    pub fn distance_to_vertex(&self, v: usize, p: &GraphPoint) -> Option<f64> {
        match *p {
            GraphPoint::Vertex(w) => (w == v).then_some(0.0),
            GraphPoint::Edge { edge, r } => self.edges[edge].coord_of(v).map(|c| (r - c).abs()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub subject: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// Shortest edge length, `None` meaning no finite bound.
    #[serde(rename = "L", serialize_with = "ser_length")]
    pub l: Option<f64>,
}

fn ser_length<S: serde::Serializer>(l: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match l {
        Some(x) => s.serialize_f64(*x),
        None => s.serialize_str(INF),
    }
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check every structural invariant; violations are returned as data.
pub fn validate(g: &MetricGraph) -> ValidationReport {
    let mut out = Vec::new();
    let mut push = |subject: String, message: String| out.push(Violation { subject, message });
    if g.vertices.is_empty() {
        push("graph".into(), "no vertices".into());
    }
    for e in &g.edges {
        let subject = format!("edge {}", e.id);
        match e.length {
            Some(l) if !(l > 0.0 && l.is_finite()) => push(subject.clone(), format!("length {l} is not a positive real")),
            Some(_) if e.from.is_none() || e.to.is_none() => {
                push(subject.clone(), "finite edge has an endpoint at infinity".into())
            }
            None if e.from.is_none() && e.to.is_none() => {
                push(subject.clone(), "both endpoints at infinity".into())
            }
            None if e.from.is_some() && e.to.is_some() => {
                push(subject.clone(), "infinite edge joins two vertices".into())
            }
            _ => {}
        }
        if e.from.is_some() && e.from == e.to {
            push(subject, "self-loop".into());
        }
    }
    for ((v, i), w) in &g.alpha {
        let e = &g.edges[*i];
        if e.from != Some(*v) && e.to != Some(*v) {
            push(format!("vertex {}", g.vertices[*v]), format!("alpha given for non-incident edge {}", e.id));
        }
        if !(w.value >= 0.0) {
            push(format!("vertex {}", g.vertices[*v]), format!("negative alpha {} on edge {}", w.value, e.id));
        }
    }
    for v in 0..g.vertices.len() {
        let inc = g.incident(v);
        let subject = format!("vertex {}", g.vertices[v]);
        if inc.is_empty() {
            push(subject, "no incident edges".into());
            continue;
        }
        let ws: Vec<&Weight> = inc.iter().filter_map(|&i| g.alpha(v, i)).collect();
        let exact: Option<Vec<BigRational>> = ws.iter().map(|w| w.exact.clone()).collect();
        let (ok, shown) = match exact {
            Some(rs) => {
                let sum = rs.into_iter().fold(BigRational::zero(), |a, b| a + b);
                (sum == BigRational::one(), ratio_to_f64(&sum))
            }
            None => {
                let sum: f64 = ws.iter().map(|w| w.value).sum();
                ((sum - 1.0).abs() <= 1e-12, sum)
            }
        };
        if !ok {
            push(subject, format!("alpha sum = {} at {}", round_for_display(shown), g.vertices[v]));
        }
    }
    let mut uf = UnionFind::<usize>::new(g.vertices.len());
    for e in &g.edges {
        if let (Some(a), Some(b)) = (e.from, e.to) {
            uf.union(a, b);
        }
    }
    if g.vertices.len() > 1 {
        let root = uf.find(0);
        for v in 1..g.vertices.len() {
            if uf.find(v) != root {
                out.push(Violation {
                    subject: format!("vertex {}", g.vertices[v]),
                    message: format!("not connected to {}", g.vertices[0]),
                });
            }
        }
    }
    ValidationReport { violations: out, l: g.min_length() }
}

fn round_for_display(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

/// The identification of `G_v` with a star graph.
///
/// Star edge `j < n_plus` is the outgoing edge `edges[j]` with coordinate
/// `+distance`; the remaining ones are incoming with coordinate `-distance`.
#[derive(Clone, Debug, PartialEq)]
pub struct StarChart {
    pub vertex: usize,
    pub edges: Vec<usize>,
    pub n_plus: usize,
    pub alpha: Vec<Weight>,
    pub alpha_plus: f64,
    pub beta: f64,
}

impl StarChart {
    pub fn n(&self) -> usize {
        self.edges.len()
    }

    pub fn star_edge(&self, graph_edge: usize) -> Option<usize> {
        self.edges.iter().position(|&e| e == graph_edge)
    }

    pub fn sign(&self, star_edge: usize) -> f64 {
        if star_edge < self.n_plus {
            1.0
        } else {
            -1.0
        }
    }

    /// `(star edge, signed coordinate)`; the vertex maps to 0 on star edge 0.
    pub fn to_star(&self, g: &MetricGraph, p: &GraphPoint) -> Result<(usize, f64), GraphError> {
        let outside = || GraphError::NotInNeighbourhood(g.vertices[self.vertex].clone());
        if !g.in_neighbourhood(self.vertex, p) {
            return Err(outside());
        }
        match *p {
            GraphPoint::Vertex(_) => Ok((0, 0.0)),
            GraphPoint::Edge { edge, r } => {
                let j = self.star_edge(edge).ok_or_else(outside)?;
                let c = g.edges[edge].coord_of(self.vertex).ok_or_else(outside)?;
                Ok((j, r - c))
            }
        }
    }

    pub fn from_star(&self, g: &MetricGraph, star_edge: usize, y: f64) -> Result<GraphPoint, GraphError> {
        if y == 0.0 {
            return Ok(GraphPoint::Vertex(self.vertex));
        }
        let edge = self.edges[star_edge];
        let e = &g.edges[edge];
        let bad = || GraphError::OutsideChart { edge: e.id.clone(), coord: y };
        if y.signum() != self.sign(star_edge) {
            return Err(bad());
        }
        let r = e.coord_of(self.vertex).ok_or_else(bad)? + y;
        if !e.is_interior(r) {
            return Err(bad());
        }
        Ok(GraphPoint::Edge { edge, r })
    }
}

/// One vertex-anchored piece `(c0 + c1 u + c2 u^2) * chi(|u|)` on an edge,
/// with `u` the signed edge coordinate measured from the anchor vertex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub edge: usize,
    pub vertex: usize,
    pub coeffs: [f64; 3],
    pub radius: f64,
}

/// `C^2` cutoff: 1 on `[0, R/2]`, 0 beyond `R`, smootherstep in between.
pub fn cutoff(d: f64, radius: f64) -> (f64, f64, f64) {
    let a = radius / 2.0;
    if d <= a {
        return (1.0, 0.0, 0.0);
    }
    if d >= radius {
        return (0.0, 0.0, 0.0);
    }
    let w = radius - a;
    let t = (d - a) / w;
    let s = t * t * t * (10.0 - 15.0 * t + 6.0 * t * t);
    let ds = 30.0 * t * t * (1.0 - t) * (1.0 - t) / w;
    let dds = 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t) / (w * w);
    (1.0 - s, -ds, -dds)
}

/// A test function: a constant plus vertex-anchored polynomial pieces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub constant: f64,
    pub pieces: Vec<Piece>,
}

impl TestFunction {
    pub fn constant(c: f64) -> Self {
        TestFunction { constant: c, pieces: Vec::new() }
    }

    /// Value at vertex `v`.
    pub fn vertex_value(&self, v: usize) -> f64 {
        self.constant + self.pieces.iter().find(|p| p.vertex == v).map_or(0.0, |p| p.coeffs[0])
    }

    /// `(f, f', f'')` with derivatives along the edge coordinate; zero at vertices.
    pub fn eval(&self, g: &MetricGraph, p: &GraphPoint) -> (f64, f64, f64) {
        match *p {
            GraphPoint::Vertex(v) => (self.vertex_value(v), 0.0, 0.0),
            GraphPoint::Edge { edge, r } => {
                let (mut f, mut df, mut ddf) = (self.constant, 0.0, 0.0);
                for pc in self.pieces.iter().filter(|pc| pc.edge == edge) {
                    let Some(c) = g.edges[edge].coord_of(pc.vertex) else { continue };
                    let u = r - c;
                    let [c0, c1, c2] = pc.coeffs;
                    let q = c0 + c1 * u + c2 * u * u;
                    let dq = c1 + 2.0 * c2 * u;
                    let ddq = 2.0 * c2;
                    let (x, dx, ddx) = cutoff(u.abs(), pc.radius);
                    let sg = u.signum();
                    f += q * x;
                    df += dq * x + q * dx * sg;
                    ddf += ddq * x + 2.0 * dq * dx * sg + q * ddx;
                }
                (f, df, ddf)
            }
        }
    }

    /// One-sided edge derivative at the vertex end of `edge`.
    fn slope_at(&self, edge: usize, v: usize) -> f64 {
        self.pieces.iter().filter(|p| p.edge == edge && p.vertex == v).map(|p| p.coeffs[1]).sum()
    }

    /// `Σ_{I+} α f'(v+) − Σ_{I−} α f'(v−)`.
    pub fn gluing_residual(&self, g: &MetricGraph, v: usize) -> f64 {
        let plus: f64 = g.outgoing(v).iter().map(|&i| g.alpha(v, i).map_or(0.0, |w| w.value) * self.slope_at(i, v)).sum();
        let minus: f64 = g.incoming(v).iter().map(|&i| g.alpha(v, i).map_or(0.0, |w| w.value) * self.slope_at(i, v)).sum();
        plus - minus
    }

    /// Violations of continuity, support and gluing.
    pub fn check(&self, g: &MetricGraph) -> Vec<String> {
        let mut out = Vec::new();
        for p in &self.pieces {
            let Some(e) = g.edges.get(p.edge) else {
                out.push(format!("piece on unknown edge {}", p.edge));
                continue;
            };
            if e.coord_of(p.vertex).is_none() {
                out.push(format!("piece anchored at vertex {} not on edge {}", p.vertex, e.id));
            }
            if !(p.radius > 0.0) || e.length.is_some_and(|l| p.radius > l) {
                out.push(format!("piece radius {} invalid on edge {}", p.radius, e.id));
            }
        }
        for v in 0..g.vertices.len() {
            let inc = g.incident(v);
            let c0: Vec<f64> = inc
                .iter()
                .map(|&i| self.pieces.iter().filter(|p| p.edge == i && p.vertex == v).map(|p| p.coeffs[0]).sum())
                .collect();
            if c0.iter().any(|&c| (c - c0[0]).abs() > 1e-12) {
                out.push(format!("discontinuous at vertex {}", g.vertices[v]));
            }
            let res = self.gluing_residual(g, v);
            if res.abs() >= 1e-12 {
                out.push(format!("gluing residual {res:e} at vertex {}", g.vertices[v]));
            }
        }
        out
    }
}

const FAMILY_RADIUS: f64 = 4.0;

fn family_radius(e: &Edge) -> f64 {
    e.length.map_or(FAMILY_RADIUS, |l| (l / 2.0).min(FAMILY_RADIUS))
}

/// Admissible test functions: the constant, glued linear germs at each vertex,
/// then one quadratic bump per (edge, endpoint).
pub fn make_glued_family(g: &MetricGraph, count: usize) -> Vec<TestFunction> {
    let mut out = vec![TestFunction::constant(1.0)];
    for v in 0..g.vertices.len() {
        let plus = g.outgoing(v);
        let minus = g.incoming(v);
        let a = |i: usize| g.alpha(v, i).map_or(0.0, |w| w.value);
        let piece = |i: usize, slope: f64| Piece {
            edge: i,
            vertex: v,
            coeffs: [0.0, slope, 0.0],
            radius: family_radius(&g.edges[i]),
        };
        let pair = match (plus.as_slice(), minus.as_slice()) {
            ([i, ..], [j, ..]) => Some((piece(*i, a(*j)), piece(*j, a(*i)))),
            ([i, j, ..], []) => Some((piece(*i, a(*j)), piece(*j, -a(*i)))),
            ([], [i, j, ..]) => Some((piece(*i, a(*j)), piece(*j, -a(*i)))),
            _ => None,
        };
        if let Some((p, q)) = pair {
            if p.coeffs[1] != 0.0 || q.coeffs[1] != 0.0 {
                out.push(TestFunction { constant: 0.0, pieces: vec![p, q] });
            }
        }
    }
    for (i, e) in g.edges.iter().enumerate() {
        for v in [e.from, e.to].into_iter().flatten() {
            out.push(TestFunction {
                constant: 0.0,
                pieces: vec![Piece { edge: i, vertex: v, coeffs: [0.0, 0.0, 1.0], radius: family_radius(e) }],
            });
        }
    }
    let base = out.len();
    let mut k = 0;
    while out.len() < count && base > 1 {
        let mut f = out[1 + k % (base - 1)].clone();
        let scale = 1.0 + (k / (base - 1)) as f64;
        for p in &mut f.pieces {
            p.coeffs[2] *= scale;
            p.coeffs[1] *= scale;
        }
        out.push(f);
        k += 1;
    }
    out.truncate(count.max(1));
    out
}

impl fmt::Display for GraphPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphPoint::Vertex(v) => write!(f, "v{v}"),
            GraphPoint::Edge { edge, r } => write!(f, "e{edge}@{r}"),
        }
    }
}

/// Ready-made graphs used by tests and examples.
pub mod presets {
    use super::*;

    fn num(x: f64) -> NumberSpec {
        NumberSpec::Number(x)
    }

    /// One vertex `v` with `alpha.len()` infinite edges, the first `n_plus` outgoing.
    pub fn star(alpha: &[f64], n_plus: usize) -> GraphSpec {
        let mut edges = Vec::new();
        let mut al = Vec::new();
        for (i, &a) in alpha.iter().enumerate() {
            let id = format!("e{}", i + 1);
            let (from, to) = if i < n_plus { ("v", INF) } else { (INF, "v") };
            edges.push(EdgeSpec { id: id.clone(), length: LengthSpec::Text(INF.into()), from: from.into(), to: to.into() });
            al.push(AlphaSpec { vertex: "v".into(), edge: id, value: num(a) });
        }
        GraphSpec { vertices: vec!["v".into()], edges, alpha: al }
    }

    /// Vertices `a`, `b` joined by `bridge` (a→b) of the given length, plus an
    /// incoming infinite edge at `a` and an outgoing one at `b`.
    ///
    /// `alpha_a = (bridge, tail)` and `alpha_b = (bridge, tail)`.
    pub fn barbell(length: f64, alpha_a: (f64, f64), alpha_b: (f64, f64)) -> GraphSpec {
        let e = |id: &str, length: LengthSpec, from: &str, to: &str| EdgeSpec {
            id: id.into(),
            length,
            from: from.into(),
            to: to.into(),
        };
        let al = |v: &str, id: &str, x: f64| AlphaSpec { vertex: v.into(), edge: id.into(), value: num(x) };
        GraphSpec {
            vertices: vec!["a".into(), "b".into()],
            edges: vec![
                e("left", LengthSpec::Text(INF.into()), INF, "a"),
                e("bridge", LengthSpec::Number(length), "a", "b"),
                e("right", LengthSpec::Text(INF.into()), "b", INF),
            ],
            alpha: vec![
                al("a", "bridge", alpha_a.0),
                al("a", "left", alpha_a.1),
                al("b", "bridge", alpha_b.0),
                al("b", "right", alpha_b.1),
            ],
        }
    }

    /// A line `inf → v0 → v1 → … → inf` with `lengths.len() + 1` vertices;
    /// `alpha_out[k]` is the weight of the outgoing edge at vertex `k`.
    pub fn chain(lengths: &[f64], alpha_out: &[f64]) -> GraphSpec {
        let n = lengths.len() + 1;
        assert_eq!(alpha_out.len(), n);
        let vs: Vec<String> = (0..n).map(|k| format!("v{k}")).collect();
        let mut edges = vec![EdgeSpec {
            id: "in".into(),
            length: LengthSpec::Text(INF.into()),
            from: INF.into(),
            to: vs[0].clone(),
        }];
        for (k, &l) in lengths.iter().enumerate() {
            edges.push(EdgeSpec {
                id: format!("s{k}"),
                length: LengthSpec::Number(l),
                from: vs[k].clone(),
                to: vs[k + 1].clone(),
            });
        }
        edges.push(EdgeSpec {
            id: "out".into(),
            length: LengthSpec::Text(INF.into()),
            from: vs[n - 1].clone(),
            to: INF.into(),
        });
        let mut alpha = Vec::new();
        for k in 0..n {
            alpha.push(AlphaSpec { vertex: vs[k].clone(), edge: edges[k + 1].id.clone(), value: num(alpha_out[k]) });
            alpha.push(AlphaSpec { vertex: vs[k].clone(), edge: edges[k].id.clone(), value: num(1.0 - alpha_out[k]) });
        }
        GraphSpec { vertices: vs, edges, alpha }
    }
}

#[cfg(test)]
mod tests {
    use super::presets::*;
    use super::*;

    fn graph(spec: &GraphSpec) -> MetricGraph {
        MetricGraph::from_spec(spec).unwrap()
    }

    #[test]
    fn star_is_valid_with_no_finite_bound() {
        let g = graph(&star(&[0.3, 0.3, 0.4], 3));
        let r = validate(&g);
        assert!(r.is_valid(), "{:?}", r.violations);
        assert_eq!(r.l, None);
    }

    #[test]
    fn alpha_sum_violation_is_reported() {
        let g = graph(&star(&[0.3, 0.3, 0.3], 3));
        let r = validate(&g);
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].message, "alpha sum = 0.9 at v");
    }

    #[test]
    fn exact_rationals_sum_exactly() {
        let mut spec = star(&[0.0, 0.0, 0.0], 3);
        for a in &mut spec.alpha {
            a.value = NumberSpec::Text("1/3".into());
        }
        assert!(validate(&graph(&spec)).is_valid());
        spec.alpha[0].value = NumberSpec::Text("0.3333333333".into());
        assert!(!validate(&graph(&spec)).is_valid());
    }

    #[test]
    fn barbell_has_l_two() {
        let g = graph(&barbell(2.0, (0.5, 0.5), (0.6, 0.4)));
        let r = validate(&g);
        assert!(r.is_valid(), "{:?}", r.violations);
        assert_eq!(r.l, Some(2.0));
    }

    #[test]
    fn structural_violations() {
        let mut spec = barbell(2.0, (0.5, 0.5), (0.6, 0.4));
        spec.edges[1].length = LengthSpec::Number(-1.0);
        spec.edges[0].from = "a".into();
        let r = validate(&graph(&spec));
        let msgs: Vec<&str> = r.violations.iter().map(|v| v.message.as_str()).collect();
        assert!(msgs.contains(&"length -1 is not a positive real"));
        assert!(msgs.contains(&"infinite edge joins two vertices") || msgs.contains(&"self-loop"));
    }

    #[test]
    fn disconnected_graph_is_flagged() {
        let mut spec = star(&[0.5, 0.5], 1);
        spec.vertices.push("w".into());
        spec.edges.push(EdgeSpec { id: "x".into(), length: LengthSpec::Text("inf".into()), from: "w".into(), to: "inf".into() });
        spec.alpha.push(AlphaSpec { vertex: "w".into(), edge: "x".into(), value: NumberSpec::Number(1.0) });
        let r = validate(&graph(&spec));
        assert!(r.violations.iter().any(|v| v.message.starts_with("not connected")));
    }

    #[test]
    fn missing_alpha_is_a_parse_error() {
        let mut spec = star(&[0.5, 0.5], 1);
        spec.alpha.pop();
        assert_eq!(
            MetricGraph::from_spec(&spec),
            Err(GraphError::MissingAlpha { vertex: "v".into(), edge: "e2".into() })
        );
    }

    #[test]
    fn chart_signs_and_beta() {
        let g = graph(&star(&[0.25, 0.25, 0.5], 2));
        let c = g.star_chart(0).unwrap();
        assert_eq!(c.alpha_plus, 0.5);
        assert_eq!(c.beta, 0.0);
        let all_out = graph(&star(&[0.5, 0.5], 2)).star_chart(0).unwrap();
        assert_eq!(all_out.beta, 1.0);
        let g3 = graph(&star(&[0.5, 0.25, 0.25], 2));
        assert_eq!(g3.star_chart(0).unwrap().beta, 0.5);
        assert!(g.star_chart(4).is_err());
    }

    #[test]
    fn to_star_sign_convention() {
        let g = graph(&barbell(2.0, (0.5, 0.5), (0.6, 0.4)));
        let a = g.star_chart(0).unwrap();
        let b = g.star_chart(1).unwrap();
        assert_eq!(a.to_star(&g, &GraphPoint::Vertex(0)).unwrap().1, 0.0);
        let p = GraphPoint::Edge { edge: 1, r: 0.7 };
        assert_eq!(a.to_star(&g, &p).unwrap(), (0, 0.7));
        let (j, y) = b.to_star(&g, &p).unwrap();
        assert!((y + 1.3).abs() < 1e-15 && j == b.star_edge(1).unwrap());
        let q = GraphPoint::Edge { edge: 0, r: -0.7 };
        assert_eq!(a.to_star(&g, &q).unwrap(), (1, -0.7));
        assert!(b.to_star(&g, &q).is_err());
        for p in [p, q, GraphPoint::Vertex(0)] {
            let (j, y) = a.to_star(&g, &p).unwrap();
            assert_eq!(a.from_star(&g, j, y).unwrap(), p);
            assert_eq!(g.distance_to_vertex(0, &p).unwrap(), y.abs());
        }
        assert!(a.from_star(&g, 0, 2.0).is_err());
    }

    #[test]
    fn eval_examples() {
        let g = graph(&star(&[0.5, 0.5], 1));
        let one = TestFunction::constant(1.0);
        assert_eq!(one.eval(&g, &GraphPoint::Edge { edge: 0, r: 3.0 }), (1.0, 0.0, 0.0));
        let sq = TestFunction {
            constant: 0.0,
            pieces: vec![Piece { edge: 0, vertex: 0, coeffs: [0.0, 0.0, 1.0], radius: 4.0 }],
        };
        assert_eq!(sq.eval(&g, &GraphPoint::Edge { edge: 0, r: 0.5 }), (0.25, 1.0, 2.0));
        assert_eq!(sq.eval(&g, &GraphPoint::Vertex(0)), (0.0, 0.0, 0.0));
        assert_eq!(sq.eval(&g, &GraphPoint::Edge { edge: 0, r: 5.0 }), (0.0, 0.0, 0.0));
    }

    #[test]
    fn cutoff_is_c2() {
        let r = 3.0;
        let h = 1e-6;
        for d in [1.6, 2.0, 2.4, 2.9] {
            let (x, dx, ddx) = cutoff(d, r);
            let (xp, dxp, _) = cutoff(d + h, r);
            let (xm, dxm, _) = cutoff(d - h, r);
            assert!(((xp - xm) / (2.0 * h) - dx).abs() < 1e-6);
            assert!(((dxp - dxm) / (2.0 * h) - ddx).abs() < 1e-5);
            assert!((0.0..=1.0).contains(&x));
        }
        assert_eq!(cutoff(1.5, r), (1.0, 0.0, 0.0));
        assert_eq!(cutoff(3.0, r), (0.0, 0.0, 0.0));
    }

    #[test]
    fn glued_family_examples() {
        let g = graph(&star(&[0.5, 0.5], 1));
        assert_eq!(make_glued_family(&g, 1), vec![TestFunction::constant(1.0)]);
        let fam = make_glued_family(&g, 6);
        let lin = fam
            .iter()
            .find(|f| f.pieces.len() == 2 && f.pieces.iter().all(|p| p.coeffs[1] != 0.0))
            .expect("linear germ");
        assert_eq!(lin.gluing_residual(&g, 0), 0.0);
        let bb = graph(&barbell(2.0, (0.3, 0.7), (0.6, 0.4)));
        for f in make_glued_family(&bb, 12) {
            assert!(f.check(&bb).is_empty(), "{:?}", f.check(&bb));
        }
    }

    #[test]
    fn family_separates_edges() {
        let bb = graph(&barbell(2.0, (0.3, 0.7), (0.6, 0.4)));
        let fam = make_glued_family(&bb, 20);
        for i in 0..bb.edges().len() {
            assert!(fam.iter().any(|f| !f.pieces.is_empty() && f.pieces.iter().all(|p| p.edge == i)));
        }
    }

    #[test]
    fn spec_round_trip() {
        let g = graph(&barbell(2.0, (0.3, 0.7), (0.6, 0.4)));
        assert_eq!(graph(&g.to_spec()), g);
        let text = serde_json::to_string(&g.to_spec()).unwrap();
        assert_eq!(MetricGraph::from_json(&text).unwrap(), g);
    }
}
