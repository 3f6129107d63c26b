//! Wiring atoms, bands and annuli into one chart atlas with recorded seams.

use std::collections::{BTreeMap, VecDeque};
use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::local_models::{
    apply_boundary_surgery, elliptic_model, saddle_model, zero_annulus_model, AnnulusChart,
    AnnulusProfile, BandChart, ChartModel, ChartSign, Collar, CollarSlopes, ModelError,
    SaddleChart, SaddleParams, SegmentTrace,
};
use crate::morse_spec::{
    atom_decomposition, validate_spec, Atom, CriticalKind, MorseSpec, Side, Sign, Violations,
};

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("invalid spec: {0}")]
    Spec(#[from] Violations),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("TraceSignError: {0}")]
    TraceSign(String),
    #[error("SignMismatch: annulus levels {low} and {high} have opposite signs")]
    SignMismatch { low: f64, high: f64 },
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

/// Tunable chart defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssemblyParams {
    pub saddle: SaddleParams,
    pub elliptic_radius: f64,
    pub safety_factor: f64,
    pub slope_grid: usize,
    pub crossing_sigma: f64,
    pub zone: [f64; 2],
    pub ramp: f64,
    pub base_rate: f64,
    pub band_blend: [f64; 2],
    pub density_blend: [f64; 2],
    /// Skip slope selection and use this collar slope everywhere, without
    /// the surgery sign check.
    pub force_slope: Option<f64>,
}

impl Default for AssemblyParams {
    fn default() -> Self {
        AssemblyParams {
            saddle: SaddleParams::default(),
            elliptic_radius: 1.0,
            safety_factor: 2.0,
            slope_grid: 128,
            crossing_sigma: 0.5,
            zone: [-0.5, 0.5],
            ramp: 0.25,
            base_rate: 1.0,
            band_blend: [0.25, 0.75],
            density_blend: [0.05, 0.25],
            force_slope: None,
        }
    }
}

impl AssemblyParams {
    pub fn validate(&self) -> Result<(), AssemblyError> {
        let bad = |m: String| Err(AssemblyError::Params(m));
        self.saddle.validate()?;
        if !(self.elliptic_radius > 0.0) {
            return bad(format!("elliptic radius {}", self.elliptic_radius));
        }
        if !(self.safety_factor >= 1.0) {
            return bad(format!("safety factor {} < 1", self.safety_factor));
        }
        if self.slope_grid < 8 {
            return bad(format!("slope grid {} < 8", self.slope_grid));
        }
        if !(self.crossing_sigma > 0.0) {
            return bad(format!("crossing sigma {}", self.crossing_sigma));
        }
        let [z0, z1] = self.zone;
        if !(-1.0 < z0 && z0 < z1 && z1 < 1.0 && self.ramp > 0.0 && 2.0 * self.ramp <= z1 - z0) {
            return bad(format!("zone {:?} with ramp {}", self.zone, self.ramp));
        }
        if !(self.base_rate > 0.0) {
            return bad(format!("base rate {}", self.base_rate));
        }
        for (name, [a, b]) in [
            ("band blend", self.band_blend),
            ("density blend", self.density_blend),
        ] {
            if !(0.0 < a && a < b && b < 1.0) {
                return bad(format!("{name} [{a}, {b}]"));
            }
        }
        if let Some(s) = self.force_slope {
            if !(s >= 0.0 && s.is_finite()) {
                return bad(format!("forced slope {s}"));
            }
        }
        Ok(())
    }
}

/// Affine map between segment parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub scale: f64,
    pub offset: f64,
}

impl Affine {
    pub fn between(from: [f64; 2], to: [f64; 2]) -> Affine {
        let scale = (to[1] - to[0]) / (from[1] - from[0]);
        Affine {
            scale,
            offset: to[0] - scale * from[0],
        }
    }

    pub fn apply(&self, p: f64) -> f64 {
        self.scale * p + self.offset
    }

    pub fn inverse(&self) -> Affine {
        Affine {
            scale: 1.0 / self.scale,
            offset: -self.offset / self.scale,
        }
    }
}

/// Oriented boundary curve of a chart, parametrized over `range`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "curve", rename_all = "snake_case")]
pub enum Segment {
    /// Coordinate `axis` fixed at `value`; the other coordinate is the parameter.
    Line {
        axis: usize,
        value: f64,
        range: [f64; 2],
    },
    /// Hyperbola `4xy = offset` in a quadrant of a saddle chart, parametrized by `x`.
    Arc {
        quadrant: u8,
        offset: f64,
        range: [f64; 2],
    },
}

impl Segment {
    pub fn range(&self) -> [f64; 2] {
        match *self {
            Segment::Line { range, .. } | Segment::Arc { range, .. } => range,
        }
    }

    pub fn point(&self, param: f64) -> [f64; 2] {
        match *self {
            Segment::Line { axis, value, .. } => {
                let mut p = [param, param];
                p[axis] = value;
                p
            }
            Segment::Arc { offset, .. } => arc_point(offset, param),
        }
    }

    /// Parameter axis of a coordinate line.
    pub fn free_axis(&self) -> Option<usize> {
        match *self {
            Segment::Line { axis, .. } => Some(1 - axis),
            Segment::Arc { .. } => None,
        }
    }

    pub fn is_arc(&self) -> bool {
        matches!(self, Segment::Arc { .. })
    }

    fn lo_hi(&self) -> (f64, f64) {
        let [a, b] = self.range();
        (a.min(b), a.max(b))
    }

    /// Whether a parameter lies in the segment's range (with slack).
    pub fn covers(&self, param: f64, slack: f64) -> bool {
        let (lo, hi) = self.lo_hi();
        param >= lo - slack && param <= hi + slack
    }
}

fn ulp_step(v: f64, k: i64) -> f64 {
    if v == 0.0 || k == 0 {
        return v;
    }
    let bits = v.to_bits() as i64 + k;
    f64::from_bits(bits as u64)
}

/// Point `(x, y)` with `4.0 * x * y == offset` in floating point when such a
/// point exists within a few ulps of the true hyperbola.
pub fn arc_point(offset: f64, x: f64) -> [f64; 2] {
    let y0 = offset / (4.0 * x);
    for dx in [0i64, 1, -1, 2, -2, 3, -3] {
        let xx = ulp_step(x, dx);
        let yy = offset / (4.0 * xx);
        for dy in [0i64, 1, -1, 2, -2, 3, -3, 4, -4] {
            let y = ulp_step(yy, dy);
            if 4.0 * xx * y == offset {
                return [xx, y];
            }
        }
    }
    [x, y0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeamRef {
    pub this_chart: String,
    pub other_chart: String,
    pub this_segment: Segment,
    pub other_segment: Segment,
    /// Maps `this_segment` parameters to `other_segment` parameters.
    pub identification: Affine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chart {
    pub id: String,
    pub sign: ChartSign,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub critical_point: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge: Option<String>,
    pub model: ChartModel,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SlopeSelection {
    pub safety_factor: f64,
    /// Collar slopes per saddle chart, in `Collar::ALL` order.
    pub collars: BTreeMap<String, CollarSlopes>,
    /// Rescale exponent per same-sign annulus.
    pub annuli: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalRef {
    pub id: String,
    pub chart: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldAssembly {
    pub charts: Vec<Chart>,
    pub seams: Vec<SeamRef>,
    pub slopes: SlopeSelection,
    pub critical_points: Vec<CriticalRef>,
    pub params: AssemblyParams,
    pub provenance: String,
}

impl FieldAssembly {
    pub fn chart_index(&self, id: &str) -> Option<usize> {
        self.charts.iter().position(|c| c.id == id)
    }

    pub fn chart(&self, id: &str) -> Option<&Chart> {
        self.charts.iter().find(|c| c.id == id)
    }

    /// Seams touching a chart, oriented so that `this_chart == id`.
    pub fn seams_of(&self, id: &str) -> Vec<SeamRef> {
        let mut out = Vec::new();
        for s in &self.seams {
            if s.this_chart == id {
                out.push(s.clone());
            }
            if s.other_chart == id {
                out.push(s.reversed());
            }
        }
        out
    }
}

impl SeamRef {
    pub fn reversed(&self) -> SeamRef {
        SeamRef {
            this_chart: self.other_chart.clone(),
            other_chart: self.this_chart.clone(),
            this_segment: self.other_segment,
            other_segment: self.this_segment,
            identification: self.identification.inverse(),
        }
    }
}

pub fn elliptic_id(point: &str) -> String {
    format!("ell:{point}")
}

pub fn saddle_id(point: &str) -> String {
    format!("sad:{point}")
}

pub fn band_id(point: &str, collar: Collar) -> String {
    let tag = match collar {
        Collar::XPlus => "x+",
        Collar::XMinus => "x-",
        Collar::YPlus => "y+",
        Collar::YMinus => "y-",
    };
    format!("band:{point}:{tag}")
}

pub fn annulus_id(edge: &str) -> String {
    format!("ann:{edge}")
}

/// Slope rule: `safety × deficit + 1`.
pub fn slope_for_deficit(deficit: f64, safety_factor: f64) -> f64 {
    safety_factor * deficit.max(0.0) + 1.0
}

/// Picks collar slopes for every saddle draft and rescale exponents for every
/// same-sign annulus draft, from sampled slope-free divergences.
pub fn select_slopes(drafts: &[Chart], grid: usize, safety_factor: f64) -> SlopeSelection {
    let grid = grid.max(2);
    let mut out = SlopeSelection {
        safety_factor,
        ..Default::default()
    };
    for chart in drafts {
        match &chart.model {
            ChartModel::SaddleCross(c) => {
                let sign = c.sign.factor();
                let mut slopes = [0.0; 4];
                for collar in Collar::ALL {
                    // the model is equivariant, so collar-local samples suffice
                    let deficit = c
                        .collar_points(grid)
                        .into_iter()
                        .map(|[a, b]| -sign * c.slope_free_divergence(a, b))
                        .fold(0.0, f64::max);
                    slopes[collar.index()] = slope_for_deficit(deficit, safety_factor);
                }
                out.collars.insert(chart.id.clone(), slopes);
            }
            ChartModel::Annulus(a) => {
                if let AnnulusProfile::SameSign { zone, .. } = a.profile {
                    let base = AnnulusChart {
                        profile: with_lambda(&a.profile, 0.0),
                        ..a.clone()
                    };
                    let peak = (0..grid)
                        .map(|i| zone[0] + (zone[1] - zone[0]) * i as f64 / (grid - 1) as f64)
                        .map(|s| base.sample([0.0, s]).div.abs())
                        .fold(0.0, f64::max);
                    out.annuli
                        .insert(chart.id.clone(), slope_for_deficit(peak, safety_factor));
                }
            }
            _ => {}
        }
    }
    out
}

fn with_lambda(profile: &AnnulusProfile, lambda: f64) -> AnnulusProfile {
    match profile.clone() {
        AnnulusProfile::SameSign {
            sign,
            levels,
            zone,
            ramp,
            base_rate,
            ..
        } => AnnulusProfile::SameSign {
            sign,
            levels,
            lambda_a: lambda,
            zone,
            ramp,
            base_rate,
        },
        other => other,
    }
}

/// Where a band sits: the saddle it belongs to and the segment it attaches to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandFrame {
    pub level: f64,
    pub sign: Sign,
    pub delta: f64,
    pub orientation: f64,
    pub half_width: f64,
    pub kappa: f64,
    pub density: f64,
}

/// Band field blending the own segment trace into the partner's.
pub fn interpolate_band(
    near: SegmentTrace,
    far: SegmentTrace,
    frame: BandFrame,
    params: &AssemblyParams,
) -> Result<BandChart, AssemblyError> {
    let sign = frame.sign.factor();
    for (name, trace) in [("near", near), ("far", far)] {
        for k in 0..=64 {
            let b = frame.half_width * (2.0 * k as f64 / 64.0 - 1.0);
            // tangential value and derivative in segment-local orientation
            let (g, dg) = trace.eval(trace.orientation * b);
            let value = trace.orientation * g;
            if !(value < 0.0 && sign * dg > 0.0) {
                return Err(AssemblyError::TraceSign(format!(
                    "{name} trace at b = {b}: value {value}, derivative {dg}"
                )));
            }
        }
    }
    if !(frame.density > 0.0) {
        return Err(AssemblyError::TraceSign(format!(
            "density {}",
            frame.density
        )));
    }
    Ok(BandChart {
        level: frame.level,
        sign: frame.sign,
        delta: frame.delta,
        orientation: frame.orientation,
        half_width: frame.half_width,
        near,
        far,
        blend: params.band_blend,
        kappa: frame.kappa,
        density_near: frame.density,
        density_mid: frame.density,
        density_blend: params.density_blend,
    })
}

/// Same-sign annulus between end levels `low < high`, with density multiplier
/// `exp(σ·λ_a·∫_s p)` over the transition zone.
pub fn rescale_same_sign_annulus(
    low: f64,
    high: f64,
    lambda_a: f64,
    params: &AssemblyParams,
) -> Result<AnnulusChart, AssemblyError> {
    if low == 0.0 || high == 0.0 || Sign::of(low) != Sign::of(high) {
        return Err(AssemblyError::SignMismatch { low, high });
    }
    if !(low < high) || !(lambda_a >= 0.0) {
        return Err(AssemblyError::Params(format!(
            "annulus levels [{low}, {high}], λ_a = {lambda_a}"
        )));
    }
    Ok(AnnulusChart {
        s_range: [-1.0, 1.0],
        density_scale: 1.0,
        profile: AnnulusProfile::SameSign {
            sign: Sign::of(low),
            levels: [low, high],
            lambda_a,
            zone: params.zone,
            ramp: params.ramp,
            base_rate: params.base_rate,
        },
    })
}

/// Smallest power of two `λ ≥ m`.
fn power_of_two_at_least(m: f64) -> f64 {
    let mut l = 1.0;
    while l < m {
        l *= 2.0;
    }
    while l / 2.0 >= m {
        l /= 2.0;
    }
    l
}

/// Largest power-of-two `ℓ` with `ℓ²·reach ≤ limit`.
fn saddle_scale(params: &SaddleParams, limit: f64) -> f64 {
    let mut l = 1.0;
    while l * l * params.reach() > limit {
        l /= 2.0;
    }
    l
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Quadrant {
    Q1,
    Q2,
    Q3,
    Q4,
}

impl Quadrant {
    const ALL: [Quadrant; 4] = [Quadrant::Q1, Quadrant::Q2, Quadrant::Q3, Quadrant::Q4];

    fn number(self) -> u8 {
        self as u8 + 1
    }

    fn upper(self) -> bool {
        matches!(self, Quadrant::Q1 | Quadrant::Q3)
    }

    /// Collars at the start and end of the arc in boundary orientation.
    fn ends(self) -> (Collar, Collar) {
        match self {
            Quadrant::Q1 => (Collar::XPlus, Collar::YPlus),
            Quadrant::Q2 => (Collar::YPlus, Collar::XMinus),
            Quadrant::Q3 => (Collar::XMinus, Collar::YMinus),
            Quadrant::Q4 => (Collar::YMinus, Collar::XPlus),
        }
    }

    fn starting_at(collar: Collar) -> Quadrant {
        Quadrant::ALL
            .into_iter()
            .find(|q| q.ends().0 == collar)
            .expect("every collar starts an arc")
    }

    /// Arc `x` range in boundary orientation.
    fn x_range(self, delta: f64, zeta: f64) -> [f64; 2] {
        match self {
            Quadrant::Q1 => [delta, zeta],
            Quadrant::Q2 => [-zeta, -delta],
            Quadrant::Q3 => [-delta, -zeta],
            Quadrant::Q4 => [zeta, delta],
        }
    }
}

/// Sign of the band `z` on the side next to `quadrant`.
fn band_side(collar: Collar, quadrant: Quadrant) -> f64 {
    use Collar::*;
    use Quadrant::*;
    match (collar, quadrant) {
        (XPlus, Q1) | (XMinus, Q3) | (YPlus, Q2) | (YMinus, Q4) => 1.0,
        (XPlus, Q4) | (XMinus, Q2) | (YPlus, Q1) | (YMinus, Q3) => -1.0,
        _ => unreachable!("band {collar:?} does not touch {quadrant:?}"),
    }
}

fn partner(collar: Collar, up_edges: usize) -> Collar {
    use Collar::*;
    match (up_edges, collar) {
        (2, XPlus) => YPlus,
        (2, YPlus) => XPlus,
        (2, XMinus) => YMinus,
        (2, YMinus) => XMinus,
        (_, XPlus) => YMinus,
        (_, YMinus) => XPlus,
        (_, XMinus) => YPlus,
        (_, YPlus) => XMinus,
    }
}

/// One boundary circle of an atom in boundary orientation.
#[derive(Debug, Clone)]
struct Circle {
    level: f64,
    pieces: Vec<(usize, Segment)>,
}

fn saddle_circles(
    chart_index: usize,
    band_index: &BTreeMap<Collar, usize>,
    chart: &SaddleChart,
    up_edges: usize,
) -> Vec<(bool, Circle)> {
    let delta = chart.params.delta;
    let zeta = chart.segment_half_width();
    let offset = 4.0 * delta * zeta;
    let mut seen = Vec::new();
    let mut out = Vec::new();
    for start in Quadrant::ALL {
        if seen.contains(&start) {
            continue;
        }
        let mut pieces = Vec::new();
        let mut q = start;
        loop {
            seen.push(q);
            let arc_offset = if q.upper() { offset } else { -offset };
            pieces.push((
                chart_index,
                Segment::Arc {
                    quadrant: q.number(),
                    offset: arc_offset,
                    range: q.x_range(delta, zeta),
                },
            ));
            let end = q.ends().1;
            let z = band_side(end, q) * zeta;
            pieces.push((
                band_index[&end],
                Segment::Line {
                    axis: 1,
                    value: z,
                    range: [0.0, 1.0],
                },
            ));
            let p = partner(end, up_edges);
            pieces.push((
                band_index[&p],
                Segment::Line {
                    axis: 1,
                    value: -z,
                    range: [1.0, 0.0],
                },
            ));
            q = Quadrant::starting_at(p);
            if q == start {
                break;
            }
        }
        let level = chart.level + chart.kappa * if start.upper() { offset } else { -offset };
        out.push((start.upper(), Circle { level, pieces }));
    }
    out
}

struct AtomCharts {
    main: usize,
    /// Circles keyed by edge index.
    circles: BTreeMap<usize, Circle>,
}

/// Draft charts for every atom and annulus; collars uncut, `λ_a = 0`.
struct Drafts {
    charts: Vec<Chart>,
    atoms: Vec<Atom>,
    atom_charts: Vec<AtomCharts>,
    annuli: Vec<usize>,
}

fn build_drafts(spec: &MorseSpec, params: &AssemblyParams) -> Result<Drafts, AssemblyError> {
    let atoms = atom_decomposition(spec);
    let mut charts = Vec::new();
    let mut atom_charts = Vec::new();
    for atom in &atoms {
        let point = &spec.critical_points[atom.point_index];
        match atom.kind {
            CriticalKind::Minimum | CriticalKind::Maximum => {
                let mut model = elliptic_model(atom.value, atom.sign)?;
                model.radius = params.elliptic_radius.min((atom.epsilon / 2.0).sqrt());
                let level = model.boundary_level();
                let main = charts.len();
                charts.push(Chart {
                    id: elliptic_id(&point.id),
                    sign: atom.sign.into(),
                    critical_point: Some(point.id.clone()),
                    edge: None,
                    model: ChartModel::EllipticDisk(model.clone()),
                });
                let (edge, _) = atom.boundary_circles[0];
                let circle = Circle {
                    level,
                    pieces: vec![(
                        main,
                        Segment::Line {
                            axis: 0,
                            value: model.radius,
                            range: [0.0, TAU],
                        },
                    )],
                };
                atom_charts.push(AtomCharts {
                    main,
                    circles: BTreeMap::from([(edge, circle)]),
                });
            }
            CriticalKind::Saddle => {
                let mut model = saddle_model(atom.value, atom.sign)?;
                let scale = saddle_scale(&params.saddle, atom.epsilon / 2.0);
                model.params = params.saddle;
                model.kappa = scale * scale;
                model.params.validate()?;
                let main = charts.len();
                charts.push(Chart {
                    id: saddle_id(&point.id),
                    sign: atom.sign.into(),
                    critical_point: Some(point.id.clone()),
                    edge: None,
                    model: ChartModel::SaddleCross(model.clone()),
                });
                // band placeholders, filled once slopes are known
                let mut band_index = BTreeMap::new();
                for collar in Collar::ALL {
                    band_index.insert(collar, charts.len());
                    charts.push(Chart {
                        id: band_id(&point.id, collar),
                        sign: atom.sign.into(),
                        critical_point: None,
                        edge: None,
                        model: ChartModel::SaddleCross(model.clone()),
                    });
                }
                let up_edges = up_edge_count(atom);
                let mut upper = Vec::new();
                let mut lower = Vec::new();
                for (is_upper, circle) in saddle_circles(main, &band_index, &model, up_edges) {
                    if is_upper {
                        upper.push(circle);
                    } else {
                        lower.push(circle);
                    }
                }
                let mut circles = BTreeMap::new();
                let (mut upper, mut lower) = (upper.into_iter(), lower.into_iter());
                for &(edge, side) in &atom.boundary_circles {
                    let circle = match side {
                        Side::Upper => upper.next(),
                        Side::Lower => lower.next(),
                    }
                    .ok_or_else(|| {
                        AssemblyError::Invariant(format!(
                            "saddle {} has more edges on one side than boundary circles",
                            point.id
                        ))
                    })?;
                    circles.insert(edge, circle);
                }
                atom_charts.push(AtomCharts { main, circles });
            }
        }
    }
    let mut annuli = Vec::new();
    for (k, edge) in spec.edges.iter().enumerate() {
        let ends: Vec<(usize, f64)> = atoms
            .iter()
            .enumerate()
            .filter_map(|(i, _)| atom_charts[i].circles.get(&k).map(|c| (i, c.level)))
            .collect();
        let (low, high) = annulus_levels(&atoms, &ends, k)?;
        let model = if low < 0.0 && high > 0.0 {
            let lambda = power_of_two_at_least(low.abs().max(high.abs()));
            let mut m = zero_annulus_model(lambda, params.crossing_sigma)?;
            m.s_range = [low / lambda, high / lambda];
            m
        } else {
            rescale_same_sign_annulus(low, high, 0.0, params)?
        };
        annuli.push(charts.len());
        charts.push(Chart {
            id: annulus_id(&edge.id),
            sign: if model.is_crossing() {
                ChartSign::Crossing
            } else {
                Sign::of(low).into()
            },
            critical_point: None,
            edge: Some(edge.id.clone()),
            model: ChartModel::Annulus(model),
        });
    }
    Ok(Drafts {
        charts,
        atoms,
        atom_charts,
        annuli,
    })
}

fn annulus_levels(
    atoms: &[Atom],
    ends: &[(usize, f64)],
    edge: usize,
) -> Result<(f64, f64), AssemblyError> {
    let mut low = None;
    let mut high = None;
    for &(i, level) in ends {
        for &(e, side) in &atoms[i].boundary_circles {
            if e == edge {
                match side {
                    Side::Upper => low = Some(level),
                    Side::Lower => high = Some(level),
                }
            }
        }
    }
    match (low, high) {
        (Some(l), Some(h)) if l < h => Ok((l, h)),
        _ => Err(AssemblyError::Invariant(format!(
            "edge {edge} has end levels {low:?}, {high:?}"
        ))),
    }
}

fn spec_hash(spec: &MorseSpec, params: &AssemblyParams) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(spec).expect("spec serializes"));
    h.update(b"\n");
    h.update(serde_json::to_vec(params).expect("params serialize"));
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Density at a chart's side of an atom/annulus interface, per unit scale.
fn unit_boundary_density(model: &ChartModel) -> f64 {
    match model {
        ChartModel::EllipticDisk(c) => c.radius,
        _ => 1.0,
    }
}

fn set_density(model: &mut ChartModel, k: f64) {
    match model {
        ChartModel::EllipticDisk(c) => c.density_scale = k,
        ChartModel::SaddleCross(c) => c.density_scale = k,
        ChartModel::Band(c) => {
            c.density_near = k;
            c.density_mid = k;
        }
        ChartModel::Annulus(c) => c.density_scale = k,
    }
}

fn density_of(model: &ChartModel) -> f64 {
    match model {
        ChartModel::EllipticDisk(c) => c.density_scale,
        ChartModel::SaddleCross(c) => c.density_scale,
        ChartModel::Band(c) => c.density_near,
        ChartModel::Annulus(c) => c.density_scale,
    }
}

/// Builds the full atlas for a validated spec.
pub fn build_assembly(
    spec: &MorseSpec,
    params: &AssemblyParams,
) -> Result<FieldAssembly, AssemblyError> {
    validate_spec(spec)?;
    params.validate()?;
    let Drafts {
        mut charts,
        atoms,
        atom_charts,
        annuli,
    } = build_drafts(spec, params)?;

    let mut slopes = select_slopes(&charts, params.slope_grid, params.safety_factor);

    // saddles: surgery, then bands
    for (atom, ac) in atoms.iter().zip(&atom_charts) {
        let ChartModel::SaddleCross(draft) = charts[ac.main].model.clone() else {
            continue;
        };
        let id = charts[ac.main].id.clone();
        let chosen = match params.force_slope {
            Some(s) => {
                slopes.collars.insert(id.clone(), [s; 4]);
                SaddleChart {
                    slopes: Some([s; 4]),
                    ..draft
                }
            }
            None => apply_boundary_surgery(&draft, &slopes.collars[&id])?,
        };
        let cut_slopes = chosen.slopes.expect("surgered");
        let up_edges = up_edge_count(atom);
        for (k, collar) in Collar::ALL.into_iter().enumerate() {
            let other = partner(collar, up_edges);
            let orientation = collar.band_orientation();
            let trace = |c: Collar| SegmentTrace {
                sign: chosen.sign,
                delta: chosen.params.delta,
                slope: cut_slopes[c.index()],
                orientation,
            };
            let frame = BandFrame {
                level: chosen.level,
                sign: chosen.sign,
                delta: chosen.params.delta,
                orientation,
                half_width: chosen.segment_half_width(),
                kappa: chosen.kappa,
                density: chosen.density_scale,
            };
            let band = match params.force_slope {
                Some(_) => BandChart {
                    level: frame.level,
                    sign: frame.sign,
                    delta: frame.delta,
                    orientation,
                    half_width: frame.half_width,
                    near: trace(collar),
                    far: trace(other),
                    blend: params.band_blend,
                    kappa: frame.kappa,
                    density_near: frame.density,
                    density_mid: frame.density,
                    density_blend: params.density_blend,
                },
                None => interpolate_band(trace(collar), trace(other), frame, params)?,
            };
            charts[ac.main + 1 + k].model = ChartModel::Band(band);
        }
        charts[ac.main].model = ChartModel::SaddleCross(chosen);
    }

    // same-sign annuli: rescale exponents
    for &i in &annuli {
        let Some(&lambda) = slopes.annuli.get(&charts[i].id) else {
            continue;
        };
        if let ChartModel::Annulus(a) = &mut charts[i].model {
            a.profile = with_lambda(&a.profile, lambda);
        }
    }

    // densities: spanning tree from the lowest critical value
    assign_densities(spec, &atoms, &atom_charts, &annuli, &mut charts);

    // seams
    let mut seams = Vec::new();
    for (atom, ac) in atoms.iter().zip(&atom_charts) {
        if let ChartModel::SaddleCross(c) = &charts[ac.main].model {
            saddle_seams(ac.main, c, up_edge_count(atom), &charts, &mut seams);
        }
    }
    for (k, &ann) in annuli.iter().enumerate() {
        let ChartModel::Annulus(a) = &charts[ann].model else {
            unreachable!()
        };
        for (i, atom) in atoms.iter().enumerate() {
            for &(e, side) in &atom.boundary_circles {
                if e != k {
                    continue;
                }
                let circle = &atom_charts[i].circles[&k];
                let (s_end, increasing) = match side {
                    // lower atom's upper circle meets the annulus bottom
                    Side::Upper => (a.s_range[0], false),
                    Side::Lower => (a.s_range[1], true),
                };
                let n = circle.pieces.len();
                for (j, (chart, segment)) in circle.pieces.iter().enumerate() {
                    let t0 = TAU * j as f64 / n as f64;
                    let t1 = TAU * (j + 1) as f64 / n as f64;
                    let theta = if increasing {
                        [t0, t1]
                    } else {
                        [TAU - t0, TAU - t1]
                    };
                    seams.push(SeamRef {
                        this_chart: charts[*chart].id.clone(),
                        other_chart: charts[ann].id.clone(),
                        this_segment: *segment,
                        other_segment: Segment::Line {
                            axis: 1,
                            value: s_end,
                            range: theta,
                        },
                        identification: Affine::between(segment.range(), theta),
                    });
                }
            }
        }
    }

    let critical_points = atoms
        .iter()
        .zip(&atom_charts)
        .map(|(a, ac)| CriticalRef {
            id: a.critical_point.clone(),
            chart: charts[ac.main].id.clone(),
        })
        .collect();

    Ok(FieldAssembly {
        charts,
        seams,
        slopes,
        critical_points,
        params: params.clone(),
        provenance: spec_hash(spec, params),
    })
}

fn up_edge_count(atom: &Atom) -> usize {
    atom.boundary_circles
        .iter()
        .filter(|(_, s)| *s == Side::Upper)
        .count()
}

fn saddle_seams(
    main: usize,
    c: &SaddleChart,
    up_edges: usize,
    charts: &[Chart],
    seams: &mut Vec<SeamRef>,
) {
    let delta = c.params.delta;
    let zeta = c.segment_half_width();
    for (k, collar) in Collar::ALL.into_iter().enumerate() {
        let band = &charts[main + 1 + k];
        // cross segment parameter -> band z
        let (segment, scale) = match collar {
            Collar::XPlus => (
                Segment::Line {
                    axis: 0,
                    value: delta,
                    range: [-zeta, zeta],
                },
                1.0,
            ),
            Collar::XMinus => (
                Segment::Line {
                    axis: 0,
                    value: -delta,
                    range: [-zeta, zeta],
                },
                -1.0,
            ),
            Collar::YPlus => (
                Segment::Line {
                    axis: 1,
                    value: delta,
                    range: [-zeta, zeta],
                },
                -1.0,
            ),
            Collar::YMinus => (
                Segment::Line {
                    axis: 1,
                    value: -delta,
                    range: [-zeta, zeta],
                },
                1.0,
            ),
        };
        seams.push(SeamRef {
            this_chart: charts[main].id.clone(),
            other_chart: band.id.clone(),
            this_segment: segment,
            other_segment: Segment::Line {
                axis: 0,
                value: 0.0,
                range: [-scale * zeta, scale * zeta],
            },
            identification: Affine { scale, offset: 0.0 },
        });
        let other = partner(collar, up_edges);
        if collar.index() < other.index() {
            let far = &charts[main + 1 + other.index()];
            seams.push(SeamRef {
                this_chart: band.id.clone(),
                other_chart: far.id.clone(),
                this_segment: Segment::Line {
                    axis: 0,
                    value: 1.0,
                    range: [-zeta, zeta],
                },
                other_segment: Segment::Line {
                    axis: 0,
                    value: 1.0,
                    range: [zeta, -zeta],
                },
                identification: Affine {
                    scale: -1.0,
                    offset: 0.0,
                },
            });
        }
    }
}

fn assign_densities(
    spec: &MorseSpec,
    atoms: &[Atom],
    atom_charts: &[AtomCharts],
    annuli: &[usize],
    charts: &mut [Chart],
) {
    let n = atoms.len();
    let mut scale: Vec<Option<f64>> = vec![None; n];
    let mut annulus_done = vec![false; annuli.len()];
    // adjacency: edge -> (lower atom, upper atom)
    let mut ends = vec![(usize::MAX, usize::MAX); spec.edges.len()];
    for (i, a) in atoms.iter().enumerate() {
        for &(e, side) in &a.boundary_circles {
            match side {
                Side::Upper => ends[e].0 = i,
                Side::Lower => ends[e].1 = i,
            }
        }
    }
    let root = (0..n)
        .min_by(|&a, &b| atoms[a].value.total_cmp(&atoms[b].value))
        .expect("nonempty spec");
    scale[root] = Some(1.0);
    let mut queue = VecDeque::from([root]);
    while let Some(i) = queue.pop_front() {
        let ki = scale[i].expect("queued atoms are scaled");
        let atom_density = ki * unit_boundary_density(&charts[atom_charts[i].main].model);
        for &(e, side) in &atoms[i].boundary_circles {
            if annulus_done[e] {
                continue;
            }
            annulus_done[e] = true;
            let ann = annuli[e];
            let ChartModel::Annulus(a) = &charts[ann].model else {
                unreachable!()
            };
            let (here, there, other) = match side {
                Side::Upper => (a.s_range[0], a.s_range[1], ends[e].1),
                Side::Lower => (a.s_range[1], a.s_range[0], ends[e].0),
            };
            let unit = AnnulusChart {
                density_scale: 1.0,
                ..a.clone()
            };
            let k_ann = atom_density / unit.sample([0.0, here]).rho;
            let far_density = k_ann * unit.sample([0.0, there]).rho;
            set_density(&mut charts[ann].model, k_ann);
            if scale[other].is_none() {
                let main = atom_charts[other].main;
                let k = far_density / unit_boundary_density(&charts[main].model);
                scale[other] = Some(k);
                queue.push_back(other);
            }
        }
    }
    for (i, ac) in atom_charts.iter().enumerate() {
        let k = scale[i].unwrap_or(1.0);
        set_density(&mut charts[ac.main].model, k);
        if matches!(charts[ac.main].model, ChartModel::SaddleCross(_)) {
            for b in 1..=4 {
                set_density(&mut charts[ac.main + b].model, k);
            }
        }
    }
    debug_assert!(atom_charts
        .iter()
        .all(|ac| density_of(&charts[ac.main].model) > 0.0));
}
