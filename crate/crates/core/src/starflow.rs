//! Flows on a star graph with `n⁺` outgoing and `n⁻` incoming edges: the
//! Walsh mapping flow, kernel flows parameterized by mixtures `(m⁺, m⁻)`,
//! and the Wiener kernel.
//!
//! The radial part is the lattice skew walk of [`crate::sbmflow`] with
//! `β = 2α⁺ − 1`. Each excursion away from the center gets a label drawn from
//! a keyed stream indexed by the tick at which the excursion leaves 0, so
//! every trajectory that leaves the center at that tick reads the same label
//! and merged trajectories stay merged.

use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, NumberSpec, StarChart, Weight};
use crate::noise::{Dyadic, NoiseField, StreamKey};
use crate::sbmflow::{zero_step, Driver, FlowError, SkewParams};

#[derive(Debug, Error)]
pub enum StarError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("invalid star: {0}")]
    BadStar(String),
    #[error("invalid labeler: {}", .0.join("; "))]
    InvalidLabeler(Vec<String>),
    #[error("operation needs {0} mode")]
    WrongMode(&'static str),
    #[error("operation needs a single driving channel")]
    MultiChannel,
    #[error("alpha+ = {0}, expected exactly 1/2")]
    NotHalf(f64),
    #[error("star edge {0} out of range")]
    BadEdge(usize),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Edges `0..n_plus` form `I₊`, the rest `I₋`.
#[derive(Clone, Debug, PartialEq)]
pub struct StarGraphSpec {
    pub n_plus: usize,
    pub alpha: Vec<Weight>,
}

impl StarGraphSpec {
    pub fn new(alpha: Vec<Weight>, n_plus: usize) -> Result<Self, StarError> {
        if alpha.is_empty() {
            return Err(StarError::BadStar("no edges".into()));
        }
        if n_plus > alpha.len() {
            return Err(StarError::BadStar(format!("n_plus {n_plus} exceeds {} edges", alpha.len())));
        }
        if let Some(a) = alpha.iter().find(|a| !(a.value >= 0.0)) {
            return Err(StarError::BadStar(format!("negative alpha {}", a.value)));
        }
        let spec = StarGraphSpec { n_plus, alpha };
        let ok = match spec.exact_alpha() {
            Some(a) => a.iter().sum::<BigRational>().is_one(),
            None => (spec.alpha.iter().map(|a| a.value).sum::<f64>() - 1.0).abs() <= 1e-12,
        };
        if !ok {
            let sum: f64 = spec.alpha.iter().map(|a| a.value).sum();
            return Err(StarError::BadStar(format!("alpha sum = {sum}")));
        }
        Ok(spec)
    }

    pub fn from_f64(alpha: &[f64], n_plus: usize) -> Result<Self, StarError> {
        Self::new(alpha.iter().map(|&a| Weight::float(a)).collect(), n_plus)
    }

    pub fn from_chart(chart: &StarChart) -> Result<Self, StarError> {
        Self::new(chart.alpha.clone(), chart.n_plus)
    }

    pub fn n(&self) -> usize {
        self.alpha.len()
    }

    pub fn n_minus(&self) -> usize {
        self.n() - self.n_plus
    }

    pub fn alpha_plus(&self) -> f64 {
        match self.exact_alpha() {
            Some(a) => crate::graph::ratio_to_f64(&a[..self.n_plus].iter().sum()),
            None => self.alpha[..self.n_plus].iter().map(|a| a.value).sum(),
        }
    }

    pub fn alpha_minus(&self) -> f64 {
        1.0 - self.alpha_plus()
    }

    pub fn beta(&self) -> f64 {
        2.0 * self.alpha_plus() - 1.0
    }

    /// `+1` on `I₊`, `−1` on `I₋`.
    pub fn side(&self, edge: usize) -> i64 {
        if edge < self.n_plus {
            1
        } else {
            -1
        }
    }

    fn exact_alpha(&self) -> Option<Vec<BigRational>> {
        self.alpha.iter().map(|a| a.exact.clone()).collect()
    }

    /// `α^i / α^±` over one side, exact when the weights are.
    fn conditional(&self, side: i64) -> Vec<Weight> {
        let range = self.side_range(side);
        let decimal: Option<Vec<BigRational>> = self.alpha.iter().map(|a| a.exact_or_decimal()).collect();
        match decimal {
            Some(a) => {
                let tot: BigRational = a[range.clone()].iter().sum();
                a[range]
                    .iter()
                    .map(|x| {
                        let r = if tot.is_zero() { BigRational::zero() } else { x / &tot };
                        Weight { value: crate::graph::ratio_to_f64(&r), exact: Some(r) }
                    })
                    .collect()
            }
            None => {
                let tot: f64 = self.alpha[range.clone()].iter().map(|a| a.value).sum();
                self.alpha[range]
                    .iter()
                    .map(|a| Weight::float(if tot == 0.0 { 0.0 } else { a.value / tot }))
                    .collect()
            }
        }
    }

    fn side_range(&self, side: i64) -> std::ops::Range<usize> {
        if side > 0 {
            0..self.n_plus
        } else {
            self.n_plus..self.n()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    Mapping,
    Kernel,
    Wiener,
}

/// One point mass of a mixture on a simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    pub point: Vec<Weight>,
    pub weight: Weight,
}

pub type Mixture = Vec<Component>;

#[derive(Clone, Debug, PartialEq)]
pub struct ExcursionLabeler {
    pub mode: LabelMode,
    pub m_plus: Mixture,
    pub m_minus: Mixture,
}

fn unit(i: usize, n: usize) -> Vec<Weight> {
    (0..n).map(|j| Weight::ratio((i == j) as i64, 1)).collect()
}

impl ExcursionLabeler {
    /// `P(γ^± = i) = α^i / α^±`.
    pub fn mapping(spec: &StarGraphSpec) -> Self {
        let side = |s: i64| {
            let w = spec.conditional(s);
            let n = w.len();
            w.into_iter().enumerate().map(|(i, weight)| Component { point: unit(i, n), weight }).collect()
        };
        ExcursionLabeler { mode: LabelMode::Mapping, m_plus: side(1), m_minus: side(-1) }
    }

    /// Point mass at `(α^i / α^±)_i`.
    pub fn wiener(spec: &StarGraphSpec) -> Self {
        let side = |s: i64| {
            let point = spec.conditional(s);
            if point.is_empty() {
                vec![]
            } else {
                vec![Component { point, weight: Weight::ratio(1, 1) }]
            }
        };
        ExcursionLabeler { mode: LabelMode::Wiener, m_plus: side(1), m_minus: side(-1) }
    }

    pub fn kernel(m_plus: Mixture, m_minus: Mixture) -> Self {
        ExcursionLabeler { mode: LabelMode::Kernel, m_plus, m_minus }
    }

    pub fn mixture(&self, side: i64) -> &Mixture {
        if side > 0 {
            &self.m_plus
        } else {
            &self.m_minus
        }
    }
}

fn exact_all(ws: &[&Weight]) -> Option<Vec<BigRational>> {
    ws.iter().map(|w| w.exact_or_decimal()).collect()
}

/// Checks the simplex and moment conditions `∫ u_i m^±(du) = α^i / α^±`.
///
/// Exact in rational arithmetic when every number has a decimal or rational
/// form (always, for finite floats), so the report is empty iff valid.
pub fn validate_labeler(labeler: &ExcursionLabeler, spec: &StarGraphSpec) -> Vec<String> {
    let mut out = Vec::new();
    for (side, name) in [(1i64, "m+"), (-1, "m-")] {
        let mix = labeler.mixture(side);
        let target = spec.conditional(side);
        let dim = target.len();
        let side_mass = if side > 0 { spec.alpha_plus() } else { spec.alpha_minus() };
        if dim == 0 || side_mass == 0.0 {
            if !mix.is_empty() {
                out.push(format!("{name}: side carries no mass but mixture is nonempty"));
            }
            continue;
        }
        if mix.is_empty() {
            out.push(format!("{name}: empty mixture"));
            continue;
        }
        let mut refs: Vec<&Weight> = target.iter().collect();
        for c in mix {
            if c.point.len() != dim {
                out.push(format!("{name}: point of dimension {} on a side of {dim} edges", c.point.len()));
                return out;
            }
            refs.push(&c.weight);
            refs.extend(c.point.iter());
        }
        let Some(q) = exact_all(&refs) else {
            out.push(format!("{name}: non-finite number"));
            continue;
        };
        let (target, rest) = q.split_at(dim);
        let mut moments = vec![BigRational::zero(); dim];
        let mut total = BigRational::zero();
        for (k, chunk) in rest.chunks(dim + 1).enumerate() {
            let (w, u) = (&chunk[0], &chunk[1..]);
            if w.is_negative() {
                out.push(format!("{name}: component {k} has negative weight"));
            }
            if u.iter().any(|x| x.is_negative()) || !u.iter().sum::<BigRational>().is_one() {
                out.push(format!("{name}: component {k} is not on the simplex"));
            }
            total += w;
            for (m, x) in moments.iter_mut().zip(u) {
                *m += w * x;
            }
        }
        if !total.is_one() {
            out.push(format!("{name}: mixture weights sum to {total}"));
        }
        for (i, (m, t)) in moments.iter().zip(target).enumerate() {
            if m != t {
                out.push(format!(
                    "{name}: moment {} = {} but alpha ratio = {}",
                    i + 1,
                    crate::graph::ratio_to_f64(m),
                    crate::graph::ratio_to_f64(t)
                ));
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub point: Vec<NumberSpec>,
    pub weight: NumberSpec,
}

/// Labeler of the given mode for `spec`, validated; mixtures are read only in kernel mode.
pub fn build_labeler(
    mode: LabelMode,
    m_plus: &[ComponentSpec],
    m_minus: &[ComponentSpec],
    spec: &StarGraphSpec,
) -> Result<ExcursionLabeler, StarError> {
    let mix = |m: &[ComponentSpec]| -> Result<Mixture, StarError> {
        m.iter()
            .map(|c| {
                Ok(Component {
                    point: c.point.iter().map(|x| x.to_weight()).collect::<Result<_, _>>()?,
                    weight: c.weight.to_weight()?,
                })
            })
            .collect()
    };
    let labeler = match mode {
        LabelMode::Mapping => ExcursionLabeler::mapping(spec),
        LabelMode::Wiener => ExcursionLabeler::wiener(spec),
        LabelMode::Kernel => ExcursionLabeler::kernel(mix(m_plus)?, mix(m_minus)?),
    };
    let report = validate_labeler(&labeler, spec);
    if !report.is_empty() {
        return Err(StarError::InvalidLabeler(report));
    }
    Ok(labeler)
}

/// The star JSON format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StarConfig {
    pub n_plus: usize,
    pub n_minus: usize,
    pub alpha: Vec<NumberSpec>,
    pub mode: LabelMode,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub m_plus: Vec<ComponentSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub m_minus: Vec<ComponentSpec>,
}

impl StarConfig {
    pub fn from_json(text: &str) -> Result<Self, StarError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Builds and validates the star and its labeler.
    pub fn build(&self) -> Result<(StarGraphSpec, ExcursionLabeler), StarError> {
        if self.alpha.len() != self.n_plus + self.n_minus {
            return Err(StarError::BadStar(format!(
                "{} alpha values for n_plus + n_minus = {}",
                self.alpha.len(),
                self.n_plus + self.n_minus
            )));
        }
        let alpha = self.alpha.iter().map(|a| a.to_weight()).collect::<Result<Vec<_>, _>>()?;
        let spec = StarGraphSpec::new(alpha, self.n_plus)?;
        let labeler = build_labeler(self.mode, &self.m_plus, &self.m_minus, &spec)?;
        Ok((spec, labeler))
    }
}

/// A lattice point of the star: the center, or `r ≥ 1` sites out on an edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum StarPoint {
    Center,
    Edge { edge: usize, r: i64 },
}

impl StarPoint {
    /// Point at signed chart coordinate `y` (sites) on `edge`'s side.
    pub fn on_edge(edge: usize, r: i64) -> Self {
        if r == 0 {
            StarPoint::Center
        } else {
            StarPoint::Edge { edge, r: r.abs() }
        }
    }

    pub fn radius(&self) -> i64 {
        match *self {
            StarPoint::Center => 0,
            StarPoint::Edge { r, .. } => r,
        }
    }

    pub fn edge(&self) -> Option<usize> {
        match *self {
            StarPoint::Center => None,
            StarPoint::Edge { edge, .. } => Some(edge),
        }
    }
}

pub type StarMeasure = Vec<(StarPoint, f64)>;

/// A finitely supported kernel value on the star, radii in sites of `delta`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StarKernelValue {
    pub delta: f64,
    pub atoms: StarMeasure,
}

impl StarKernelValue {
    pub fn mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum()
    }

    /// `(edge, distance from center, weight)`; the center has no edge.
    pub fn rows(&self) -> Vec<(Option<usize>, f64, f64)> {
        self.atoms.iter().map(|(p, w)| (p.edge(), p.radius() as f64 * self.delta, *w)).collect()
    }

    /// Same support and weights within `tol`.
    pub fn matches(&self, other: &StarKernelValue, tol: f64) -> bool {
        self.atoms.len() == other.atoms.len()
            && self
                .atoms
                .iter()
                .zip(&other.atoms)
                .all(|(a, b)| a.0 == b.0 && (a.1 - b.1).abs() <= tol)
    }
}

/// Keyed streams for excursion labels of one star.
#[derive(Clone, Debug)]
pub struct LabelStreams {
    gamma: [StreamKey; 2],
    u: [StreamKey; 2],
    side: StreamKey,
    /// Labels keyed by the bucket `floor(g / 2^-b)` instead of the tick `g`.
    bucket: Option<u32>,
}

impl LabelStreams {
    pub fn new(field: &NoiseField, prefix: &str, bucket: Option<u32>) -> Self {
        let s = |name: &str| field.stream(&format!("{prefix}/{name}"));
        LabelStreams {
            gamma: [s("gamma+"), s("gamma-")],
            u: [s("U+"), s("U-")],
            side: s("side"),
            bucket,
        }
    }

    fn label_key(&self, tick: i64, level: u32) -> Dyadic {
        match self.bucket {
            Some(b) if b < level => Dyadic::from_ticks(tick >> (level - b), b),
            _ => Dyadic::from_ticks(tick, level),
        }
    }
}

/// Per-side sampling tables built from a labeler.
#[derive(Clone, Debug)]
struct SideTable {
    cum: Vec<f64>,
    atoms: Vec<Vec<(usize, f64)>>,
}

impl SideTable {
    fn new(mix: &Mixture, offset: usize) -> Self {
        let mut acc = 0.0;
        let mut cum = Vec::with_capacity(mix.len());
        let mut atoms = Vec::with_capacity(mix.len());
        for c in mix {
            acc += c.weight.value;
            cum.push(acc);
            atoms.push(
                c.point
                    .iter()
                    .enumerate()
                    .filter(|(_, u)| u.value > 0.0)
                    .map(|(i, u)| (offset + i, u.value))
                    .collect(),
            );
        }
        SideTable { cum, atoms }
    }

    fn pick(&self, u: f64) -> &[(usize, f64)] {
        let k = self.cum.iter().position(|&c| u < c).unwrap_or_else(|| {
            // rounding left the top of [0,1) uncovered: take the last component with mass
            let mut k = self.cum.len() - 1;
            while k > 0 && self.cum[k] == self.cum[k - 1] {
                k -= 1;
            }
            k
        });
        &self.atoms[k]
    }
}

/// The star flow engine: propagates finite atom measures tick by tick.
#[derive(Clone, Debug)]
pub struct StarFlow {
    spec: StarGraphSpec,
    labeler: ExcursionLabeler,
    params: SkewParams,
    streams: LabelStreams,
    drivers: Vec<Arc<Driver>>,
    edge_driver: Vec<usize>,
    /// Single-channel radial walk with the star's own zero-site coin.
    radial: Option<Driver>,
    tables: [SideTable; 2],
    alpha_plus: f64,
}

/// Prefix of the label namespaces of a standalone star.
pub const STAR_PREFIX: &str = "star";

impl StarFlow {
    /// Standalone star driven by channel 0.
    pub fn new(field: &NoiseField, spec: StarGraphSpec, labeler: ExcursionLabeler, m: u32) -> Result<Self, StarError> {
        let driver = Arc::new(Driver::new(field, 0, m)?);
        let n = spec.n();
        Self::with_drivers(field, spec, labeler, m, STAR_PREFIX, None, vec![driver], vec![0; n])
    }

    /// Star whose edge `i` is driven by `drivers[edge_driver[i]]`.
    #[allow(clippy::too_many_arguments)]
    pub fn with_drivers(
        field: &NoiseField,
        spec: StarGraphSpec,
        labeler: ExcursionLabeler,
        m: u32,
        prefix: &str,
        bucket: Option<u32>,
        drivers: Vec<Arc<Driver>>,
        edge_driver: Vec<usize>,
    ) -> Result<Self, StarError> {
        let report = validate_labeler(&labeler, &spec);
        if !report.is_empty() {
            return Err(StarError::InvalidLabeler(report));
        }
        if edge_driver.len() != spec.n() || edge_driver.iter().any(|&d| d >= drivers.len()) {
            return Err(StarError::BadStar("edge to driver map does not fit".into()));
        }
        let params = SkewParams::new(spec.beta().clamp(-1.0, 1.0), m)?;
        let streams = LabelStreams::new(field, prefix, bucket);
        let single = edge_driver.iter().all(|&d| d == edge_driver[0]);
        let radial = single.then(|| drivers[edge_driver[0]].with_coin(streams.side));
        let tables = [SideTable::new(&labeler.m_plus, 0), SideTable::new(&labeler.m_minus, spec.n_plus)];
        let alpha_plus = spec.alpha_plus();
        Ok(StarFlow { spec, labeler, params, streams, drivers, edge_driver, radial, tables, alpha_plus })
    }

    pub fn spec(&self) -> &StarGraphSpec {
        &self.spec
    }

    pub fn labeler(&self) -> &ExcursionLabeler {
        &self.labeler
    }

    pub fn params(&self) -> &SkewParams {
        &self.params
    }

    /// The radial skew walk, when one channel drives every edge.
    pub fn radial(&self) -> Option<&Driver> {
        self.radial.as_ref()
    }

    pub fn first_tick(&self) -> i64 {
        self.drivers.iter().map(|d| d.first_tick()).max().unwrap()
    }

    pub fn last_tick(&self) -> i64 {
        self.drivers.iter().map(|d| d.last_tick()).min().unwrap()
    }

    /// Signed chart coordinate in sites.
    pub fn signed(&self, p: StarPoint) -> i64 {
        match p {
            StarPoint::Center => 0,
            StarPoint::Edge { edge, r } => self.spec.side(edge) * r,
        }
    }

    pub fn check_point(&self, p: StarPoint) -> Result<(), StarError> {
        match p {
            StarPoint::Edge { edge, r } if edge >= self.spec.n() || r < 1 => Err(StarError::BadEdge(edge)),
            _ => Ok(()),
        }
    }

    /// Side of the excursion leaving the center at `tick`.
    fn center_side(&self, tick: i64) -> i64 {
        match &self.radial {
            Some(d) => zero_step(self.params.beta, d.sign(tick), d.coin(tick)) as i64,
            None => {
                let u = self.streams.side.uniform(Dyadic::from_ticks(tick, self.params.level()));
                if u < self.alpha_plus {
                    1
                } else {
                    -1
                }
            }
        }
    }

    /// Edge weights of the excursion on `side` leaving the center at `tick`.
    pub fn label(&self, side: i64, tick: i64) -> &[(usize, f64)] {
        let i = (side < 0) as usize;
        let key = self.streams.label_key(tick, self.params.level());
        let u = match self.labeler.mode {
            LabelMode::Mapping => self.streams.gamma[i].uniform(key),
            LabelMode::Kernel => self.streams.u[i].uniform(key),
            LabelMode::Wiener => 0.0,
        };
        self.tables[i].pick(u)
    }

    fn step_point(&self, p: StarPoint, tick: i64, w: f64, out: &mut StarMeasure) {
        match p {
            StarPoint::Center => {
                let side = self.center_side(tick);
                for &(edge, u) in self.label(side, tick) {
                    out.push((StarPoint::Edge { edge, r: 1 }, w * u));
                }
            }
            StarPoint::Edge { edge, r } => {
                let eps = self.drivers[self.edge_driver[edge]].sign(tick) as i64;
                out.push((StarPoint::on_edge(edge, self.spec.side(edge) * r + eps), w));
            }
        }
    }

    /// One tick of the flow; `tick` must lie inside the driven range.
    pub fn step(&self, mu: &[(StarPoint, f64)], tick: i64) -> StarMeasure {
        let mut out = Vec::with_capacity(mu.len() + self.spec.n());
        for &(p, w) in mu {
            self.step_point(p, tick, w, &mut out);
        }
        if out.len() > 1 {
            normalize(&mut out);
        }
        out
    }

    /// Walk sign driving star edge `edge` over `[tick, tick + 1]`.
    pub fn edge_sign(&self, edge: usize, tick: i64) -> i8 {
        self.drivers[self.edge_driver[edge]].sign(tick)
    }

    /// `μ K_{s,t}` on the lattice.
    pub fn propagate(&self, mu: &[(StarPoint, f64)], s: i64, t: i64) -> Result<StarMeasure, StarError> {
        self.check_range(s, t)?;
        for &(p, _) in mu {
            self.check_point(p)?;
        }
        let mut cur: StarMeasure = mu.to_vec();
        normalize(&mut cur);
        let mut next = Vec::with_capacity(cur.len() * 2);
        for tick in s..t {
            next.clear();
            for &(p, w) in &cur {
                self.step_point(p, tick, w, &mut next);
            }
            std::mem::swap(&mut cur, &mut next);
            if cur.len() > 1 {
                normalize(&mut cur);
            }
        }
        Ok(cur)
    }

    pub fn kernel(&self, s: i64, x: StarPoint, t: i64) -> Result<StarKernelValue, StarError> {
        Ok(StarKernelValue { delta: self.params.delta(), atoms: self.propagate(&[(x, 1.0)], s, t)? })
    }

    fn check_range(&self, s: i64, t: i64) -> Result<(), StarError> {
        if t < s {
            return Err(FlowError::Reversed(s, t).into());
        }
        let (a, b) = (self.first_tick(), self.last_tick());
        for k in [s, t] {
            if k < a || k > b {
                return Err(FlowError::OutsideHorizon(k, a, b).into());
            }
        }
        Ok(())
    }

    /// The Walsh mapping `φ_{s,t}(x)`, read off the radial path: translation
    /// before the first zero, then the label of the excursion in progress.
    pub fn phi(&self, s: i64, x: StarPoint, t: i64) -> Result<StarPoint, StarError> {
        if self.labeler.mode != LabelMode::Mapping {
            return Err(StarError::WrongMode("mapping"));
        }
        let d = self.radial.as_ref().ok_or(StarError::MultiChannel)?;
        self.check_range(s, t)?;
        self.check_point(x)?;
        let mut y = self.signed(x);
        let mut last_zero = None;
        for k in s..t {
            if y == 0 {
                last_zero = Some(k);
                y = zero_step(self.params.beta, d.sign(k), d.coin(k)) as i64;
            } else {
                y += d.sign(k) as i64;
            }
        }
        Ok(match (y, last_zero) {
            (0, _) => StarPoint::Center,
            (_, None) => StarPoint::on_edge(x.edge().unwrap(), y),
            (_, Some(g)) => StarPoint::Edge { edge: self.label(y.signum(), g)[0].0, r: y.abs() },
        })
    }

    /// The Wiener kernel with radial part `x + W_{s,t}`, valid only when `α⁺ = ½`.
    pub fn half_case_kernel(&self, s: i64, x: StarPoint, t: i64) -> Result<StarKernelValue, StarError> {
        let half = match self.spec.exact_alpha() {
            Some(a) => a[..self.spec.n_plus].iter().sum::<BigRational>() == BigRational::new(BigInt::from(1), BigInt::from(2)),
            None => self.alpha_plus == 0.5,
        };
        if !half {
            return Err(StarError::NotHalf(self.alpha_plus));
        }
        let d = self.radial.as_ref().ok_or(StarError::MultiChannel)?;
        self.check_range(s, t)?;
        self.check_point(x)?;
        let y0 = self.signed(x);
        let y = y0 + d.walk(t) - d.walk(s);
        let hit = y0 == 0 || (s..t).any(|k| y0 + d.walk(k) - d.walk(s) == 0);
        let atoms = if y == 0 {
            vec![(StarPoint::Center, 1.0)]
        } else if !hit {
            vec![(StarPoint::on_edge(x.edge().unwrap(), y), 1.0)]
        } else {
            let w = ExcursionLabeler::wiener(&self.spec);
            let (mix, offset) = if y > 0 { (&w.m_plus, 0) } else { (&w.m_minus, self.spec.n_plus) };
            mix[0]
                .point
                .iter()
                .enumerate()
                .filter(|(_, u)| u.value > 0.0)
                .map(|(i, u)| (StarPoint::Edge { edge: offset + i, r: y.abs() }, u.value))
                .collect()
        };
        Ok(StarKernelValue { delta: self.params.delta(), atoms })
    }
}

/// Weights below this are floating-point dust and dropped when merging.
pub const PRUNE: f64 = 1e-15;

/// Sort by point and merge equal points, dropping dust.
pub fn normalize(mu: &mut StarMeasure) {
    mu.sort_by(|a, b| a.0.cmp(&b.0));
    let mut out: StarMeasure = Vec::with_capacity(mu.len());
    for &(p, w) in mu.iter() {
        match out.last_mut() {
            Some(last) if last.0 == p => last.1 += w,
            _ => out.push((p, w)),
        }
    }
    out.retain(|a| a.1 >= PRUNE);
    *mu = out;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sbmflow::evolve;

    fn field(seed: u64) -> NoiseField {
        NoiseField::new(seed, 10, (0, 2)).unwrap()
    }

    fn ratios(xs: &[(i64, i64)]) -> Vec<Weight> {
        xs.iter().map(|&(p, q)| Weight::ratio(p, q)).collect()
    }

    #[test]
    fn spec_derived_quantities() {
        let s = StarGraphSpec::new(ratios(&[(9, 25), (6, 25), (2, 5)]), 2).unwrap();
        assert!((s.alpha_plus() - 0.6).abs() < 1e-15);
        assert!((s.beta() - 0.2).abs() < 1e-15);
        assert_eq!(s.n_minus(), 1);
        assert!(StarGraphSpec::from_f64(&[0.5, 0.4], 1).is_err());
        assert!(StarGraphSpec::from_f64(&[1.2, -0.2], 1).is_err());
        assert!(StarGraphSpec::from_f64(&[0.5, 0.5], 3).is_err());
    }

    #[test]
    fn labeler_validation() {
        let s = StarGraphSpec::from_f64(&[0.36, 0.24, 0.4], 2).unwrap();
        assert!(validate_labeler(&ExcursionLabeler::mapping(&s), &s).is_empty());
        assert!(validate_labeler(&ExcursionLabeler::wiener(&s), &s).is_empty());
        let bad = ExcursionLabeler::kernel(
            vec![Component { point: ratios(&[(1, 1), (0, 1)]), weight: Weight::ratio(1, 1) }],
            vec![Component { point: ratios(&[(1, 1)]), weight: Weight::ratio(1, 1) }],
        );
        let rep = validate_labeler(&bad, &s);
        assert_eq!(rep.len(), 2, "{rep:?}");
        assert!(rep[0].contains("m+: moment 1 = 1 but alpha ratio = 0.6"));
        let good = ExcursionLabeler::kernel(
            vec![
                Component { point: ratios(&[(1, 1), (0, 1)]), weight: Weight::ratio(1, 5) },
                Component { point: ratios(&[(1, 2), (1, 2)]), weight: Weight::ratio(4, 5) },
            ],
            vec![Component { point: ratios(&[(1, 1)]), weight: Weight::ratio(1, 1) }],
        );
        assert!(validate_labeler(&good, &s).is_empty());
        let off_simplex = ExcursionLabeler::kernel(
            vec![Component { point: ratios(&[(6, 5), (-1, 5)]), weight: Weight::ratio(1, 2) },
                 Component { point: ratios(&[(0, 1), (1, 1)]), weight: Weight::ratio(1, 2) }],
            vec![Component { point: ratios(&[(1, 1)]), weight: Weight::ratio(1, 1) }],
        );
        assert!(validate_labeler(&off_simplex, &s).iter().any(|m| m.contains("simplex")));
    }

    #[test]
    fn json_round_trip_and_rejection() {
        let text = r#"{"n_plus":2,"n_minus":1,"alpha":["9/25","6/25","2/5"],"mode":"kernel",
            "m_plus":[{"point":[1,0],"weight":"1/5"},{"point":["1/2","1/2"],"weight":"4/5"}],
            "m_minus":[{"point":[1],"weight":1}]}"#;
        let cfg = StarConfig::from_json(text).unwrap();
        let (spec, lab) = cfg.build().unwrap();
        assert_eq!(spec.n(), 3);
        assert_eq!(lab.mode, LabelMode::Kernel);
        let again = StarConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(again, cfg);
        let bad = text.replace("\"1/5\"", "\"1/4\"");
        assert!(matches!(StarConfig::from_json(&bad).unwrap().build(), Err(StarError::InvalidLabeler(_))));
    }

    #[test]
    fn line_star_is_the_skew_walk() {
        let spec = StarGraphSpec::from_f64(&[0.7, 0.3], 1).unwrap();
        for seed in 0..10 {
            let f = field(seed);
            let sf = StarFlow::new(&f, spec.clone(), ExcursionLabeler::mapping(&spec), 4).unwrap();
            let d = sf.radial().unwrap();
            for &x in &[StarPoint::Center, StarPoint::Edge { edge: 0, r: 3 }, StarPoint::Edge { edge: 1, r: 2 }] {
                let path = evolve(sf.params(), d, 5, sf.signed(x), 500).unwrap();
                for t in [5, 50, 200, 500] {
                    let y = path.at(t);
                    let want = StarPoint::on_edge(if y > 0 { 0 } else { 1 }, y);
                    assert_eq!(sf.phi(5, x, t).unwrap(), want);
                }
            }
        }
    }

    #[test]
    fn mapping_kernel_equals_phi_and_radial_identity() {
        let spec = StarGraphSpec::from_f64(&[0.36, 0.24, 0.4], 2).unwrap();
        for seed in 0..20 {
            let f = field(seed);
            let sf = StarFlow::new(&f, spec.clone(), ExcursionLabeler::mapping(&spec), 4).unwrap();
            for &x in &[StarPoint::Center, StarPoint::Edge { edge: 2, r: 1 }, StarPoint::Edge { edge: 1, r: 4 }] {
                let path = evolve(sf.params(), sf.radial().unwrap(), 0, sf.signed(x), 512).unwrap();
                for t in [0, 1, 17, 256, 512] {
                    let k = sf.kernel(0, x, t).unwrap();
                    assert_eq!(k.atoms, vec![(sf.phi(0, x, t).unwrap(), 1.0)]);
                    assert_eq!(k.atoms[0].0.radius(), path.at(t).abs());
                    let y = path.at(t);
                    match k.atoms[0].0 {
                        StarPoint::Center => assert_eq!(y, 0),
                        StarPoint::Edge { edge, .. } => assert_eq!(spec.side(edge), y.signum()),
                    }
                }
            }
        }
    }

    #[test]
    fn translation_before_first_zero() {
        let spec = StarGraphSpec::from_f64(&[0.36, 0.24, 0.4], 2).unwrap();
        let f = field(3);
        let lab = ExcursionLabeler::wiener(&spec);
        let sf = StarFlow::new(&f, spec, lab, 4).unwrap();
        let d = sf.radial().unwrap();
        let x = StarPoint::Edge { edge: 1, r: 6 };
        for t in 0..200 {
            let y = 6 + d.walk(t) - d.walk(0);
            if y == 0 {
                break;
            }
            assert_eq!(sf.kernel(0, x, t).unwrap().atoms, vec![(StarPoint::Edge { edge: 1, r: y }, 1.0)]);
        }
    }

    #[test]
    fn wiener_weights_on_positive_side() {
        let spec = StarGraphSpec::from_f64(&[0.25, 0.25, 0.5], 2).unwrap();
        let mut seen = false;
        for seed in 0..20 {
            let sf = StarFlow::new(&field(seed), spec.clone(), ExcursionLabeler::wiener(&spec), 4).unwrap();
            let k = sf.kernel(0, StarPoint::Center, 256).unwrap();
            let r = k.atoms[0].0.radius();
            if k.atoms[0].0.edge() == Some(0) {
                assert_eq!(k.atoms, vec![(StarPoint::Edge { edge: 0, r }, 0.5), (StarPoint::Edge { edge: 1, r }, 0.5)]);
                seen = true;
            }
        }
        assert!(seen);
    }

    #[test]
    fn kernel_mode_invariants_and_flow_property() {
        let spec = StarGraphSpec::new(ratios(&[(9, 25), (6, 25), (2, 5)]), 2).unwrap();
        let lab = StarConfig::from_json(
            r#"{"n_plus":2,"n_minus":1,"alpha":["9/25","6/25","2/5"],"mode":"kernel",
            "m_plus":[{"point":[1,0],"weight":"1/5"},{"point":["1/2","1/2"],"weight":"4/5"}],
            "m_minus":[{"point":[1],"weight":1}]}"#,
        )
        .unwrap()
        .build()
        .unwrap()
        .1;
        for seed in 0..20 {
            let f = field(seed);
            let sf = StarFlow::new(&f, spec.clone(), lab.clone(), 4).unwrap();
            let mu = vec![(StarPoint::Center, 0.25), (StarPoint::Edge { edge: 1, r: 3 }, 0.75)];
            let direct = sf.propagate(&mu, 10, 400).unwrap();
            let mid = sf.propagate(&mu, 10, 123).unwrap();
            assert_eq!(sf.propagate(&mid, 123, 400).unwrap(), direct);
            let k = sf.kernel(0, StarPoint::Center, 300).unwrap();
            assert!((k.mass() - 1.0).abs() < 1e-12);
            let r = k.atoms[0].0.radius();
            assert!(k.atoms.iter().all(|a| a.0.radius() == r));
            assert!(k.atoms.len() <= spec.n());
        }
    }

    #[test]
    fn half_case_matches_wiener_engine() {
        let spec = StarGraphSpec::new(ratios(&[(1, 8), (3, 8), (1, 2)]), 2).unwrap();
        for seed in 0..20 {
            let f = field(seed);
            let sf = StarFlow::new(&f, spec.clone(), ExcursionLabeler::wiener(&spec), 4).unwrap();
            let d = sf.radial().unwrap();
            for &x in &[StarPoint::Center, StarPoint::Edge { edge: 0, r: 2 }] {
                for t in [0, 33, 512] {
                    let h = sf.half_case_kernel(0, x, t).unwrap();
                    let e = sf.kernel(0, x, t).unwrap();
                    assert!(h.matches(&e, 1e-12), "{h:?} vs {e:?}");
                    assert_eq!(h.atoms[0].0.radius(), (sf.signed(x) + d.walk(t) - d.walk(0)).abs());
                    assert!((h.mass() - 1.0).abs() < 1e-12);
                }
            }
        }
        let lop = StarGraphSpec::from_f64(&[0.6, 0.4], 1).unwrap();
        let sf = StarFlow::new(&field(0), lop.clone(), ExcursionLabeler::wiener(&lop), 4).unwrap();
        assert!(matches!(sf.half_case_kernel(0, StarPoint::Center, 5), Err(StarError::NotHalf(_))));
    }

    #[test]
    fn multichannel_sides_use_alpha_plus() {
        let spec = StarGraphSpec::from_f64(&[0.3, 0.7], 1).unwrap();
        let mut plus = 0;
        let n = 4000;
        for seed in 0..n {
            let f = NoiseField::new(seed, 4, (0, 1)).unwrap();
            let drivers = vec![Arc::new(Driver::new(&f, 0, 2).unwrap()), Arc::new(Driver::new(&f, 1, 2).unwrap())];
            let sf = StarFlow::with_drivers(&f, spec.clone(), ExcursionLabeler::mapping(&spec), 2, "v/x", None, drivers, vec![0, 1]).unwrap();
            if sf.kernel(0, StarPoint::Center, 1).unwrap().atoms[0].0.edge() == Some(0) {
                plus += 1;
            }
        }
        let p = plus as f64 / n as f64;
        assert!((p - 0.3).abs() < 3.0 * (0.21f64 / n as f64).sqrt(), "{p}");
    }
}
