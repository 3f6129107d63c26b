//! Closed-form chart fields.
//!
//! Every chart carries a function `f`, a vector field `X`, and an area
//! density `ρ` (the area form is `ρ du∧dv` in chart coordinates), together
//! with their first partial derivatives in closed form, so that
//! `div_ω X = (∂(ρX¹)/∂u + ∂(ρX²)/∂v)/ρ` is evaluated without numerical
//! differentiation.

use std::f64::consts::TAU;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::morse_spec::Sign;

/// Slack used by domain membership tests, in chart coordinates.
pub const DOMAIN_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("DomainError: cutoff interval [{a}, {b}] is empty")]
    DomainError { a: f64, b: f64 },
    #[error("SignMismatch: level {level} does not have sign {sign:?}")]
    SignMismatch { level: f64, sign: Sign },
    #[error("SlopeTooSmall: collar {collar:?} has divergence {divergence} at {point:?}")]
    SlopeTooSmall {
        collar: Collar,
        point: [f64; 2],
        divergence: f64,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

// ---------------------------------------------------------------------------
// Cutoffs

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BumpDirection {
    Rising,
    Falling,
}

fn flat_kernel(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        (-1.0 / x).exp()
    }
}

fn flat_kernel_derivative(x: f64) -> f64 {
    let k = flat_kernel(x);
    if k == 0.0 {
        0.0
    } else {
        k / (x * x)
    }
}

/// Smooth monotone step: 0 for `t ≤ 0`, 1 for `t ≥ 1`, symmetric about ½.
pub fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        let p = flat_kernel(t);
        let q = flat_kernel(1.0 - t);
        p / (p + q)
    }
}

pub fn smooth_step_derivative(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        return 0.0;
    }
    let p = flat_kernel(t);
    let q = flat_kernel(1.0 - t);
    let s = p + q;
    (flat_kernel_derivative(t) * q + p * flat_kernel_derivative(1.0 - t)) / (s * s)
}

/// A cutoff that switches between 0 and 1 on `[a, b]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cutoff {
    pub a: f64,
    pub b: f64,
    pub direction: BumpDirection,
}

impl Cutoff {
    pub fn new(a: f64, b: f64, direction: BumpDirection) -> Result<Self, ModelError> {
        if !(a < b) {
            return Err(ModelError::DomainError { a, b });
        }
        Ok(Cutoff { a, b, direction })
    }

    pub fn value(&self, x: f64) -> f64 {
        let w = self.b - self.a;
        match self.direction {
            BumpDirection::Rising => smooth_step((x - self.a) / w),
            BumpDirection::Falling => smooth_step((self.b - x) / w),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let w = self.b - self.a;
        match self.direction {
            BumpDirection::Rising => smooth_step_derivative((x - self.a) / w) / w,
            BumpDirection::Falling => -smooth_step_derivative((self.b - x) / w) / w,
        }
    }
}

pub fn bump(x: f64, a: f64, b: f64, direction: BumpDirection) -> Result<f64, ModelError> {
    Ok(Cutoff::new(a, b, direction)?.value(x))
}

pub fn bump_derivative(
    x: f64,
    a: f64,
    b: f64,
    direction: BumpDirection,
) -> Result<f64, ModelError> {
    Ok(Cutoff::new(a, b, direction)?.derivative(x))
}

fn gauss_legendre_16() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(16))
}

/// Nodes and weights on [-1, 1] by Newton iteration on `P_n`.
pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// `∫₀^τ smooth_step`, for `τ ∈ [0, 1]`.
pub fn smooth_step_integral(tau: f64) -> f64 {
    if tau <= 0.0 {
        return 0.0;
    }
    if tau >= 1.0 {
        return 0.5;
    }
    let (nodes, weights) = gauss_legendre_16();
    const PANELS: usize = 8;
    let width = tau / PANELS as f64;
    let mut total = 0.0;
    for k in 0..PANELS {
        let mid = (k as f64 + 0.5) * width;
        let half = 0.5 * width;
        for (x, w) in nodes.iter().zip(weights) {
            total += w * half * smooth_step(mid + half * x);
        }
    }
    total
}

// ---------------------------------------------------------------------------
// Samples

/// Everything a chart knows at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub f: f64,
    pub df: [f64; 2],
    pub x: [f64; 2],
    /// `dx[i][j] = ∂Xⁱ/∂uʲ`
    pub dx: [[f64; 2]; 2],
    pub rho: f64,
    pub drho: [f64; 2],
    /// Divergence from the analytic partials, simplified in closed form where
    /// the density vanishes (polar centers).
    pub div: f64,
}

impl FieldSample {
    /// `X(f)`.
    pub fn x_of_f(&self) -> f64 {
        self.x[0] * self.df[0] + self.x[1] * self.df[1]
    }

    /// The coefficient of `dt∧ω` in `α∧dα`.
    pub fn contact_density(&self) -> f64 {
        self.f * self.div - self.x_of_f()
    }

    pub fn divergence_from_partials(&self) -> f64 {
        (self.drho[0] * self.x[0]
            + self.drho[1] * self.x[1]
            + self.rho * (self.dx[0][0] + self.dx[1][1]))
            / self.rho
    }

    pub fn x_norm(&self) -> f64 {
        self.x[0].hypot(self.x[1])
    }
}

// ---------------------------------------------------------------------------
// Elliptic disk, polar coordinates (r, θ)

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipticChart {
    pub level: f64,
    pub sign: Sign,
    pub radius: f64,
    pub density_scale: f64,
}

/// `f = c ∓ r²`, `X = ±2r ∂r`, `ρ = r`.
pub fn elliptic_model(level: f64, sign: Sign) -> Result<EllipticChart, ModelError> {
    check_sign(level, sign)?;
    Ok(EllipticChart {
        level,
        sign,
        radius: 1.0,
        density_scale: 1.0,
    })
}

fn check_sign(level: f64, sign: Sign) -> Result<(), ModelError> {
    if level == 0.0 || Sign::of(level) != sign || !level.is_finite() {
        return Err(ModelError::SignMismatch { level, sign });
    }
    Ok(())
}

impl EllipticChart {
    pub fn sample(&self, p: [f64; 2]) -> FieldSample {
        let r = p[0];
        let s = self.sign.factor();
        let k = self.density_scale;
        FieldSample {
            f: self.level - s * (r * r),
            df: [-2.0 * s * r, 0.0],
            x: [2.0 * s * r, 0.0],
            dx: [[2.0 * s, 0.0], [0.0, 0.0]],
            rho: k * r,
            drho: [k, 0.0],
            // (∂r(ρ·2sr))/ρ = 4skr/(kr)
            div: 4.0 * s,
        }
    }

    pub fn boundary_level(&self) -> f64 {
        self.sample([self.radius, 0.0]).f
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= -DOMAIN_SLACK && p[0] <= self.radius + DOMAIN_SLACK
    }
}

// ---------------------------------------------------------------------------
// Saddle cross, Cartesian coordinates (x, y), f = c + 4xy

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaddleParams {
    pub delta: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta_prime: f64,
}

impl Default for SaddleParams {
    fn default() -> Self {
        SaddleParams {
            delta: 1.0,
            delta1: 0.4,
            delta2: 0.7,
            delta_prime: 0.05,
        }
    }
}

impl SaddleParams {
    pub fn scaled(&self, factor: f64) -> SaddleParams {
        SaddleParams {
            delta: self.delta * factor,
            delta1: self.delta1 * factor,
            delta2: self.delta2 * factor,
            delta_prime: self.delta_prime * factor,
        }
    }

    /// Level offset of the boundary arcs: `|f - c| ≤ δ·δ₁`.
    pub fn reach(&self) -> f64 {
        self.delta * self.delta1
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let SaddleParams {
            delta,
            delta1,
            delta2,
            delta_prime,
        } = *self;
        if !(0.0 < delta1 && delta1 < delta2 && delta2 < delta) {
            return Err(ModelError::InvalidParameter(format!(
                "need 0 < δ₁ < δ₂ < δ, got {delta1}, {delta2}, {delta}"
            )));
        }
        if !(0.0 < delta_prime && delta_prime < delta - delta2) {
            return Err(ModelError::InvalidParameter(format!(
                "need 0 < δ' < δ - δ₂, got {delta_prime}"
            )));
        }
        // collars {|x| ≥ δ₁} and {|y| ≥ δ₁} are disjoint on the clipped domain
        if !(4.0 * delta1 > delta) {
            return Err(ModelError::InvalidParameter(format!(
                "need 4δ₁ > δ for disjoint collars, got δ₁ = {delta1}, δ = {delta}"
            )));
        }
        Ok(())
    }
}

/// The four collars next to the straight boundary segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Collar {
    XPlus,
    XMinus,
    YPlus,
    YMinus,
}

impl Collar {
    pub const ALL: [Collar; 4] = [Collar::XPlus, Collar::XMinus, Collar::YPlus, Collar::YMinus];

    pub fn index(self) -> usize {
        match self {
            Collar::XPlus => 0,
            Collar::XMinus => 1,
            Collar::YPlus => 2,
            Collar::YMinus => 3,
        }
    }

    /// Involution taking chart coordinates to collar-local `(a, b)`, where `a`
    /// is the inward distance coordinate and `b` runs along the segment.
    pub fn apply(self, p: [f64; 2]) -> [f64; 2] {
        match self {
            Collar::XPlus => p,
            Collar::XMinus => [-p[0], -p[1]],
            Collar::YPlus => [p[1], p[0]],
            Collar::YMinus => [-p[1], -p[0]],
        }
    }

    fn conjugate(self, m: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
        match self {
            Collar::XPlus | Collar::XMinus => m,
            Collar::YPlus | Collar::YMinus => [[m[1][1], m[1][0]], [m[0][1], m[0][0]]],
        }
    }

    /// Orientation of the attached band's `z` relative to the local `b`.
    pub fn band_orientation(self) -> f64 {
        match self {
            Collar::XPlus | Collar::XMinus => 1.0,
            Collar::YPlus | Collar::YMinus => -1.0,
        }
    }
}

/// Collar cutoff slopes `u′` (magnitudes) in `Collar::index` order.
pub type CollarSlopes = [f64; 4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddleChart {
    pub level: f64,
    pub sign: Sign,
    pub params: SaddleParams,
    /// `None` for the uncut linear model.
    pub slopes: Option<CollarSlopes>,
    pub density_scale: f64,
    /// Level scale: `f = c + κ·4xy`. With `κ = ℓ²` this is the unit model in
    /// coordinates dilated by `ℓ`, without steepening the cutoffs.
    #[serde(default = "unit")]
    pub kappa: f64,
}

/// Uncut hyperbolic model: `f = c + 4xy`, `X = (x - 3y, y - 3x)` (div 2) for
/// positive atoms and `X = (-x - 3y, -3x - y)` (div -2) for negative ones.
pub fn saddle_model(level: f64, sign: Sign) -> Result<SaddleChart, ModelError> {
    check_sign(level, sign)?;
    Ok(SaddleChart {
        level,
        sign,
        params: SaddleParams::default(),
        slopes: None,
        density_scale: 1.0,
        kappa: 1.0,
    })
}

/// Base hyperbolic field `(g, h)` and its Jacobian in collar-local or chart
/// coordinates (the model is equivariant under every `Collar` involution).
fn hyperbolic(sign: Sign, a: f64, b: f64) -> ([f64; 2], [[f64; 2]; 2]) {
    match sign {
        Sign::Positive => ([a - 3.0 * b, b - 3.0 * a], [[1.0, -3.0], [-3.0, 1.0]]),
        Sign::Negative => ([-a - 3.0 * b, -3.0 * a - b], [[-1.0, -3.0], [-3.0, -1.0]]),
    }
}

/// Affine collar function `u(b)`, nonpositive on `[-δ, δ]`, with derivative
/// `±slope` according to the atom sign.
fn collar_shift(sign: Sign, delta: f64, slope: f64, b: f64) -> (f64, f64) {
    match sign {
        Sign::Positive => (slope * (b - delta), slope),
        Sign::Negative => (-slope * (b + delta), -slope),
    }
}

/// Tangential component of the surgered field on the outer segment `a = δ`,
/// as a function of the along-segment coordinate `b`. Shared with bands so
/// traces agree bit for bit.
pub fn segment_trace(sign: Sign, delta: f64, slope: f64, b: f64) -> (f64, f64) {
    let (field, jac) = hyperbolic(sign, delta, b);
    let (u, du) = collar_shift(sign, delta, slope, b);
    (field[1] + 1.0 * u, jac[1][1] + du)
}

impl SaddleChart {
    pub fn reach(&self) -> f64 {
        self.params.reach()
    }

    pub fn phi1(&self) -> Cutoff {
        Cutoff {
            a: self.params.delta1,
            b: self.params.delta2,
            direction: BumpDirection::Rising,
        }
    }

    pub fn phi2(&self) -> Cutoff {
        Cutoff {
            a: self.params.delta2,
            b: self.params.delta - self.params.delta_prime,
            direction: BumpDirection::Falling,
        }
    }

    pub fn collar_at(&self, p: [f64; 2]) -> Option<Collar> {
        let d1 = self.params.delta1;
        if p[0] >= d1 {
            Some(Collar::XPlus)
        } else if p[0] <= -d1 {
            Some(Collar::XMinus)
        } else if p[1] >= d1 {
            Some(Collar::YPlus)
        } else if p[1] <= -d1 {
            Some(Collar::YMinus)
        } else {
            None
        }
    }

    /// Surgered field in collar-local coordinates with an explicit slope.
    /// Returns `(Y, ∂Y)`.
    pub fn collar_field(&self, a: f64, b: f64, slope: f64) -> ([f64; 2], [[f64; 2]; 2]) {
        let ([g, h], base) = hyperbolic(self.sign, a, b);
        let (phi1, dphi1) = (self.phi1().value(a), self.phi1().derivative(a));
        let (phi2, dphi2) = (self.phi2().value(a), self.phi2().derivative(a));
        let (u, du) = collar_shift(self.sign, self.params.delta, slope, b);
        let y = [phi2 * g, h + phi1 * u];
        let jac = [
            [dphi2 * g + phi2 * base[0][0], phi2 * base[0][1]],
            [base[1][0] + dphi1 * u, base[1][1] + phi1 * du],
        ];
        (y, jac)
    }

    /// Divergence of the collar field with the slope term removed.
    pub fn slope_free_divergence(&self, a: f64, b: f64) -> f64 {
        let (_, jac) = self.collar_field(a, b, 0.0);
        jac[0][0] + jac[1][1]
    }

    pub fn sample(&self, p: [f64; 2]) -> FieldSample {
        let [x, y] = p;
        let k = self.density_scale;
        let (field, jac) = match (self.slopes, self.collar_at(p)) {
            (Some(slopes), Some(collar)) => {
                let [a, b] = collar.apply(p);
                let (local, ljac) = self.collar_field(a, b, slopes[collar.index()]);
                (collar.apply(local), collar.conjugate(ljac))
            }
            _ => hyperbolic(self.sign, x, y),
        };
        FieldSample {
            f: self.level + self.kappa * (4.0 * x * y),
            df: [4.0 * self.kappa * y, 4.0 * self.kappa * x],
            x: field,
            dx: jac,
            rho: k,
            drho: [0.0, 0.0],
            div: jac[0][0] + jac[1][1],
        }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        let d = self.params.delta + DOMAIN_SLACK;
        p[0].abs() <= d
            && p[1].abs() <= d
            && (4.0 * p[0] * p[1]).abs() <= self.reach() * (1.0 + 1e-12) + DOMAIN_SLACK
    }

    /// Half-length of the straight boundary segments: `reach / (4δ)`.
    pub fn segment_half_width(&self) -> f64 {
        self.reach() / (4.0 * self.params.delta)
    }

    /// Collar-local sample window `a ∈ [δ₁, δ]`, `|b| ≤ reach/(4a)`.
    pub fn collar_points(&self, n: usize) -> Vec<[f64; 2]> {
        let p = self.params;
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            let a = lerp(p.delta1, p.delta, i as f64 / (n - 1) as f64);
            let half = self.reach() / (4.0 * a);
            for j in 0..n {
                let b = lerp(-half, half, j as f64 / (n - 1) as f64);
                out.push([a, b]);
            }
        }
        out
    }
}

/// Surgery near the four straight boundary segments. Outside the collars the
/// field is unchanged; inside, the transverse component is cut off and the
/// tangential one is shifted by `φ₁(a)·u(b)`. Fails if a sampled divergence
/// has the wrong sign.
pub fn apply_boundary_surgery(
    chart: &SaddleChart,
    slopes: &CollarSlopes,
) -> Result<SaddleChart, ModelError> {
    chart.params.validate()?;
    if slopes.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(ModelError::InvalidParameter(format!("slopes {slopes:?}")));
    }
    let out = SaddleChart {
        slopes: Some(*slopes),
        ..chart.clone()
    };
    let sign = chart.sign.factor();
    for collar in Collar::ALL {
        for [a, b] in out.collar_points(64) {
            let (_, jac) = out.collar_field(a, b, slopes[collar.index()]);
            let divergence = jac[0][0] + jac[1][1];
            if !(sign * divergence > 0.0) {
                return Err(ModelError::SlopeTooSmall {
                    collar,
                    point: collar.apply([a, b]),
                    divergence,
                });
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Half bands, coordinates (t, z) ∈ [0, 1] × [-ζ, ζ]

/// Tangential trace of a saddle segment as seen in a band's `z` coordinate:
/// `g(z) = o · T(o·z)` with `T` the segment trace and `o` the orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentTrace {
    pub sign: Sign,
    pub delta: f64,
    pub slope: f64,
    pub orientation: f64,
}

impl SegmentTrace {
    pub fn eval(&self, z: f64) -> (f64, f64) {
        let o = self.orientation;
        let (t, dt) = segment_trace(self.sign, self.delta, self.slope, o * z);
        (o * t, dt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandChart {
    pub level: f64,
    pub sign: Sign,
    /// Position `δ` of the attaching segment; `f = c + 4δ·(o·z)`.
    pub delta: f64,
    pub orientation: f64,
    pub half_width: f64,
    /// Trace of the own segment (at `t = 0`).
    pub near: SegmentTrace,
    /// Trace of the partner segment, expressed in this band's `z`.
    pub far: SegmentTrace,
    /// Tangential blend `w(t) = ½·step` rises on this interval; `w = ½` near
    /// `t = 1`, where the band meets its partner.
    pub blend: [f64; 2],
    #[serde(default = "unit")]
    pub kappa: f64,
    pub density_near: f64,
    pub density_mid: f64,
    /// Density cutoff `ρ = ρ_near·φ(t) + ρ_mid·(1 - φ(t))`, φ falling here.
    pub density_blend: [f64; 2],
}

impl BandChart {
    fn weight(&self) -> Cutoff {
        Cutoff {
            a: self.blend[0],
            b: self.blend[1],
            direction: BumpDirection::Rising,
        }
    }

    fn density_cutoff(&self) -> Cutoff {
        Cutoff {
            a: self.density_blend[0],
            b: self.density_blend[1],
            direction: BumpDirection::Falling,
        }
    }

    pub fn sample(&self, p: [f64; 2]) -> FieldSample {
        let [t, z] = p;
        let w = 0.5 * self.weight().value(t);
        let dw = 0.5 * self.weight().derivative(t);
        let (g0, dg0) = self.near.eval(z);
        let (g1, dg1) = self.far.eval(z);
        let g = g0 + w * (g1 - g0);
        let dgdz = dg0 + w * (dg1 - dg0);
        let phi = self.density_cutoff().value(t);
        let dphi = self.density_cutoff().derivative(t);
        let rho = self.density_near * phi + self.density_mid * (1.0 - phi);
        FieldSample {
            f: self.level + self.kappa * (4.0 * self.delta * (self.orientation * z)),
            df: [0.0, 4.0 * self.kappa * self.delta * self.orientation],
            x: [0.0, g],
            dx: [[0.0, 0.0], [dw * (g1 - g0), dgdz]],
            rho,
            drho: [dphi * (self.density_near - self.density_mid), 0.0],
            // X has no t-component and ρ does not depend on z
            div: dgdz,
        }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= -DOMAIN_SLACK
            && p[0] <= 1.0 + DOMAIN_SLACK
            && p[1].abs() <= self.half_width + DOMAIN_SLACK
    }
}

// ---------------------------------------------------------------------------
// Annuli, coordinates (θ, s)

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case")]
pub enum AnnulusProfile {
    /// `f = λs`, `ρ ∝ exp(-s²/σ²)`, `div = 2s/σ²`.
    Crossing { lambda: f64, sigma: f64 },
    /// `f` affine between the end levels; `ρ ∝ exp(-σ·d₀·s)·G(s)` with
    /// `-G′/G = σ·λ_a·p(s)` for a plateau profile `p` on the zone.
    SameSign {
        sign: Sign,
        levels: [f64; 2],
        lambda_a: f64,
        zone: [f64; 2],
        ramp: f64,
        base_rate: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnulusChart {
    pub s_range: [f64; 2],
    pub density_scale: f64,
    #[serde(flatten)]
    pub profile: AnnulusProfile,
}

/// Zero-crossing annulus on `s ∈ [-1, 1]`: `f = λs`, `X = -∂s`,
/// `ρ = exp(-s²/σ²)`, so `div = 2s/σ²` vanishes exactly on `s = 0`.
pub fn zero_annulus_model(lambda: f64, sigma: f64) -> Result<AnnulusChart, ModelError> {
    if !(lambda > 0.0 && sigma > 0.0 && lambda.is_finite() && sigma.is_finite()) {
        return Err(ModelError::InvalidParameter(format!(
            "λ = {lambda}, σ = {sigma} must be positive"
        )));
    }
    Ok(AnnulusChart {
        s_range: [-1.0, 1.0],
        density_scale: 1.0,
        profile: AnnulusProfile::Crossing { lambda, sigma },
    })
}

/// `exp(λ·width)`: the density ratio across a transition zone of effective
/// width `width` at mean rate `λ`.
pub fn rescale_factor(lambda: f64, width: f64) -> f64 {
    (lambda * width).exp()
}

/// Plateau profile: rises on `[z0, z0 + r]`, 1 in between, falls on `[z1 - r, z1]`.
fn plateau(zone: [f64; 2], ramp: f64, s: f64) -> f64 {
    let [z0, z1] = zone;
    if s <= z0 || s >= z1 {
        0.0
    } else if s < z0 + ramp {
        smooth_step((s - z0) / ramp)
    } else if s > z1 - ramp {
        smooth_step((z1 - s) / ramp)
    } else {
        1.0
    }
}

/// `∫_s^{z1} plateau`.
fn plateau_tail(zone: [f64; 2], ramp: f64, s: f64) -> f64 {
    let [z0, z1] = zone;
    let core = (z1 - ramp) - (z0 + ramp);
    if s >= z1 {
        0.0
    } else if s >= z1 - ramp {
        ramp * smooth_step_integral((z1 - s) / ramp)
    } else if s >= z0 + ramp {
        (z1 - ramp - s) + 0.5 * ramp
    } else if s >= z0 {
        ramp * (0.5 - smooth_step_integral((s - z0) / ramp)) + core + 0.5 * ramp
    } else {
        core + ramp
    }
}

/// Effective width `∫ plateau` of a zone.
pub fn zone_width(zone: [f64; 2], ramp: f64) -> f64 {
    (zone[1] - zone[0]) - ramp
}

impl AnnulusChart {
    pub fn sample(&self, p: [f64; 2]) -> FieldSample {
        let s = p[1];
        let k = self.density_scale;
        match self.profile {
            AnnulusProfile::Crossing { lambda, sigma } => {
                let rho = k * (-(s * s) / (sigma * sigma)).exp();
                let div = 2.0 * s / (sigma * sigma);
                FieldSample {
                    f: lambda * s,
                    df: [0.0, lambda],
                    x: [0.0, -1.0],
                    dx: [[0.0; 2]; 2],
                    rho,
                    drho: [0.0, -rho * div],
                    div,
                }
            }
            AnnulusProfile::SameSign {
                sign,
                levels: [lo, hi],
                lambda_a,
                zone,
                ramp,
                base_rate,
            } => {
                let sg = sign.factor();
                let exponent = -sg * base_rate * s + sg * lambda_a * plateau_tail(zone, ramp, s);
                let rho = k * exponent.exp();
                let div = sg * (base_rate + lambda_a * plateau(zone, ramp, s));
                FieldSample {
                    f: lo * ((1.0 - s) / 2.0) + hi * ((1.0 + s) / 2.0),
                    df: [0.0, (hi - lo) / 2.0],
                    x: [0.0, -1.0],
                    dx: [[0.0; 2]; 2],
                    rho,
                    drho: [0.0, -rho * div],
                    div,
                }
            }
        }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[1] >= self.s_range[0] - DOMAIN_SLACK && p[1] <= self.s_range[1] + DOMAIN_SLACK
    }

    pub fn is_crossing(&self) -> bool {
        matches!(self.profile, AnnulusProfile::Crossing { .. })
    }
}

// ---------------------------------------------------------------------------
// Dispatch

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChartKind {
    EllipticDisk,
    SaddleCross,
    Band,
    Annulus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChartSign {
    Positive,
    Negative,
    Crossing,
}

impl From<Sign> for ChartSign {
    fn from(s: Sign) -> Self {
        match s {
            Sign::Positive => ChartSign::Positive,
            Sign::Negative => ChartSign::Negative,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ChartModel {
    EllipticDisk(EllipticChart),
    SaddleCross(SaddleChart),
    Band(BandChart),
    Annulus(AnnulusChart),
}

impl ChartModel {
    pub fn kind(&self) -> ChartKind {
        match self {
            ChartModel::EllipticDisk(_) => ChartKind::EllipticDisk,
            ChartModel::SaddleCross(_) => ChartKind::SaddleCross,
            ChartModel::Band(_) => ChartKind::Band,
            ChartModel::Annulus(_) => ChartKind::Annulus,
        }
    }

    pub fn sign(&self) -> ChartSign {
        match self {
            ChartModel::EllipticDisk(c) => c.sign.into(),
            ChartModel::SaddleCross(c) => c.sign.into(),
            ChartModel::Band(c) => c.sign.into(),
            ChartModel::Annulus(c) => match c.profile {
                AnnulusProfile::Crossing { .. } => ChartSign::Crossing,
                AnnulusProfile::SameSign { sign, .. } => sign.into(),
            },
        }
    }

    pub fn sample(&self, p: [f64; 2]) -> FieldSample {
        match self {
            ChartModel::EllipticDisk(c) => c.sample(p),
            ChartModel::SaddleCross(c) => c.sample(p),
            ChartModel::Band(c) => c.sample(p),
            ChartModel::Annulus(c) => c.sample(p),
        }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        match self {
            ChartModel::EllipticDisk(c) => c.contains(p),
            ChartModel::SaddleCross(c) => c.contains(p),
            ChartModel::Band(c) => c.contains(p),
            ChartModel::Annulus(c) => c.contains(p),
        }
    }

    /// The zero of `X` in this chart, if any.
    pub fn singular_point(&self) -> Option<[f64; 2]> {
        match self {
            ChartModel::EllipticDisk(_) => Some([0.0, 0.0]),
            ChartModel::SaddleCross(_) => Some([0.0, 0.0]),
            _ => None,
        }
    }

    /// Distance to the singular point in chart coordinates.
    pub fn singular_distance(&self, p: [f64; 2]) -> Option<f64> {
        match self {
            ChartModel::EllipticDisk(_) => Some(p[0].abs()),
            ChartModel::SaddleCross(_) => Some(p[0].hypot(p[1])),
            _ => None,
        }
    }

    /// Periodic coordinate, if any: (axis, period).
    pub fn periodic_axis(&self) -> Option<(usize, f64)> {
        match self {
            ChartModel::EllipticDisk(_) => Some((1, TAU)),
            ChartModel::Annulus(_) => Some((0, TAU)),
            _ => None,
        }
    }

    pub fn wrap(&self, mut p: [f64; 2]) -> [f64; 2] {
        if let Some((axis, period)) = self.periodic_axis() {
            p[axis] = p[axis].rem_euclid(period);
        }
        p
    }

    /// Deterministic tensor grid over the chart domain (points outside the
    /// clipped saddle domain dropped), plus the chart's critical loci.
    pub fn sample_points(&self, n: usize) -> Vec<[f64; 2]> {
        let n = n.max(2);
        let unit = |i: usize| i as f64 / (n - 1) as f64;
        let angle = |j: usize| TAU * j as f64 / n as f64;
        let mut out = Vec::new();
        match self {
            ChartModel::EllipticDisk(c) => {
                for i in 0..n {
                    for j in 0..n {
                        out.push([c.radius * unit(i), angle(j)]);
                    }
                }
            }
            ChartModel::SaddleCross(c) => {
                let d = c.params.delta;
                for i in 0..n {
                    for j in 0..n {
                        let p = [lerp(-d, d, unit(i)), lerp(-d, d, unit(j))];
                        if c.contains(p) {
                            out.push(p);
                        }
                    }
                }
                out.push([0.0, 0.0]);
                // collar boundaries and the outer segments
                let pr = c.params;
                for a in [pr.delta1, pr.delta2, pr.delta - pr.delta_prime, pr.delta] {
                    let half = c.reach() / (4.0 * a);
                    for j in 0..n {
                        let b = lerp(-half, half, unit(j));
                        for collar in Collar::ALL {
                            out.push(collar.apply([a, b]));
                        }
                    }
                }
                // level arcs
                let z = c.segment_half_width();
                for j in 0..n {
                    let x = lerp(z, d, unit(j));
                    let y = c.reach() / (4.0 * x);
                    for q in [[x, y], [-x, -y], [x, -y], [-x, y]] {
                        out.push(q);
                    }
                }
            }
            ChartModel::Band(c) => {
                for i in 0..n {
                    for j in 0..n {
                        out.push([unit(i), lerp(-c.half_width, c.half_width, unit(j))]);
                    }
                }
            }
            ChartModel::Annulus(c) => {
                for j in 0..n {
                    for i in 0..n {
                        out.push([angle(j), lerp(c.s_range[0], c.s_range[1], unit(i))]);
                    }
                    if c.is_crossing() {
                        out.push([angle(j), 0.0]);
                    }
                }
            }
        }
        out
    }
}

fn unit() -> f64 {
    1.0
}

pub(crate) fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t >= 1.0 {
        b
    } else {
        a + (b - a) * t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FD_STEP: f64 = 1e-4;

    /// Central-difference divergence `(∂(ρX¹)/∂u + ∂(ρX²)/∂v)/ρ`.
    fn fd_divergence(model: &ChartModel, p: [f64; 2]) -> f64 {
        let flux = |q: [f64; 2], i: usize| {
            let s = model.sample(q);
            s.rho * s.x[i]
        };
        let mut total = 0.0;
        for i in 0..2 {
            let mut hi = p;
            let mut lo = p;
            hi[i] += FD_STEP;
            lo[i] -= FD_STEP;
            total += (flux(hi, i) - flux(lo, i)) / (2.0 * FD_STEP);
        }
        total / model.sample(p).rho
    }

    fn quasi_random(k: usize) -> [f64; 2] {
        // R2 low-discrepancy sequence
        const G: f64 = 1.324_717_957_244_746;
        let a1 = 1.0 / G;
        let a2 = 1.0 / (G * G);
        [(0.5 + a1 * k as f64).fract(), (0.5 + a2 * k as f64).fract()]
    }

    fn surgered(sign: Sign, slope: f64) -> SaddleChart {
        let level = sign.factor();
        apply_boundary_surgery(&saddle_model(level, sign).unwrap(), &[slope; 4]).unwrap()
    }

    fn map_unit(model: &ChartModel, q: [f64; 2]) -> Option<[f64; 2]> {
        let inset = 2.0 * FD_STEP;
        let p = match model {
            ChartModel::EllipticDisk(c) => [lerp(inset, c.radius - inset, q[0]), TAU * q[1]],
            ChartModel::SaddleCross(c) => {
                let d = c.params.delta - inset;
                [lerp(-d, d, q[0]), lerp(-d, d, q[1])]
            }
            ChartModel::Band(c) => [q[0], lerp(-c.half_width, c.half_width, q[1])],
            ChartModel::Annulus(c) => [TAU * q[0], lerp(c.s_range[0], c.s_range[1], q[1])],
        };
        model.contains(p).then_some(p)
    }

    #[test]
    fn bump_boundary_values() {
        let (a, b) = (0.3, 1.1);
        assert_eq!(bump(a, a, b, BumpDirection::Rising).unwrap(), 0.0);
        assert_eq!(bump(b, a, b, BumpDirection::Rising).unwrap(), 1.0);
        assert_eq!(bump(a, a, b, BumpDirection::Falling).unwrap(), 1.0);
        assert_eq!(bump(b, a, b, BumpDirection::Falling).unwrap(), 0.0);
        assert_eq!(bump(-5.0, a, b, BumpDirection::Rising).unwrap(), 0.0);
        assert_eq!(bump(5.0, a, b, BumpDirection::Rising).unwrap(), 1.0);
    }

    #[test]
    fn bump_midpoint_is_half() {
        let v = bump(0.7, 0.3, 1.1, BumpDirection::Rising).unwrap();
        assert!((v - 0.5).abs() < 1e-15, "{v}");
    }

    #[test]
    fn bump_flat_ends_and_domain_error() {
        for x in [0.3, 1.1] {
            let d = bump_derivative(x, 0.3, 1.1, BumpDirection::Rising).unwrap();
            assert!(d.abs() < 1e-300);
        }
        assert!(matches!(
            bump(0.0, 1.0, 1.0, BumpDirection::Rising),
            Err(ModelError::DomainError { .. })
        ));
    }

    #[test]
    fn bump_derivative_matches_finite_differences() {
        let c = Cutoff::new(-0.2, 0.9, BumpDirection::Falling).unwrap();
        let h = 1e-6;
        for k in 0..200 {
            let x = -0.3 + 1.3 * k as f64 / 199.0;
            let fd = (c.value(x + h) - c.value(x - h)) / (2.0 * h);
            assert!((fd - c.derivative(x)).abs() < 1e-6, "x = {x}");
        }
    }

    #[test]
    fn smooth_step_integral_matches_symmetry_and_trapezoid() {
        assert!((smooth_step_integral(0.999_999_999) - 0.5).abs() < 1e-9);
        // independent oracle: fine trapezoid rule
        let n = 200_000;
        let tau = 0.37;
        let h = tau / n as f64;
        let mut t = 0.5 * (smooth_step(0.0) + smooth_step(tau));
        for i in 1..n {
            t += smooth_step(i as f64 * h);
        }
        assert!((smooth_step_integral(tau) - t * h).abs() < 1e-10);
    }

    #[test]
    fn elliptic_positive_values() {
        let c = elliptic_model(1.0, Sign::Positive).unwrap();
        let s = c.sample([0.5, 1.0]);
        assert_eq!(s.f, 0.75);
        assert_eq!(s.x, [1.0, 0.0]);
        assert_eq!(s.div, 4.0);
        assert_eq!(s.contact_density(), 4.0);
        assert!((s.divergence_from_partials() - 4.0).abs() < 1e-15);
        assert_eq!(c.sample([0.0, 0.3]).x, [0.0, 0.0]);
    }

    #[test]
    fn elliptic_contact_density_is_four_c() {
        let c = elliptic_model(1.0, Sign::Positive).unwrap();
        for k in 0..50 {
            let r = k as f64 / 49.0;
            assert!((c.sample([r, 0.0]).contact_density() - 4.0).abs() < 1e-14);
        }
        let c = elliptic_model(-0.5, Sign::Negative).unwrap();
        let s = c.sample([0.3, 0.0]);
        assert_eq!(s.div, -4.0);
        assert!((s.contact_density() - 2.0).abs() < 1e-14);
        assert!(s.x_of_f() < 0.0);
    }

    #[test]
    fn sign_mismatch_rejected() {
        assert!(matches!(
            elliptic_model(-1.0, Sign::Positive),
            Err(ModelError::SignMismatch { .. })
        ));
        assert!(matches!(
            saddle_model(1.0, Sign::Negative),
            Err(ModelError::SignMismatch { .. })
        ));
    }

    #[test]
    fn saddle_values() {
        let c = saddle_model(1.0, Sign::Positive).unwrap();
        assert_eq!(c.sample([1.0, 0.0]).x, [1.0, -3.0]);
        assert_eq!(c.sample([0.0, 0.0]).x, [0.0, 0.0]);
        let s = c.sample([1.0, 1.0]);
        assert_eq!(s.x_of_f(), -16.0);
        assert_eq!(s.div, 2.0);
        assert_eq!(c.sample([0.0, 0.0]).contact_density(), 2.0);
        let n = saddle_model(-1.0, Sign::Negative).unwrap();
        assert_eq!(n.sample([0.2, -0.1]).div, -2.0);
        assert_eq!(n.sample([1.0, 0.0]).x, [-1.0, -3.0]);
    }

    #[test]
    fn surgery_identity_outside_collars() {
        let base = saddle_model(1.0, Sign::Positive).unwrap();
        let cut = surgered(Sign::Positive, 20.0);
        for k in 0..2000 {
            let q = quasi_random(k);
            let p = [lerp(-0.4, 0.4, q[0]), lerp(-0.4, 0.4, q[1])];
            assert_eq!(base.sample(p), cut.sample(p));
        }
    }

    #[test]
    fn surgery_boundary_parallel_and_monotone() {
        for sign in [Sign::Positive, Sign::Negative] {
            let c = surgered(sign, 20.0);
            let z = c.segment_half_width();
            for j in 0..33 {
                let b = lerp(-z, z, j as f64 / 32.0);
                for collar in Collar::ALL {
                    let p = collar.apply([1.0, b]);
                    let s = c.sample(p);
                    let local = collar.apply(s.x);
                    assert_eq!(local[0].abs(), 0.0);
                    // tangential component negative with derivative of the atom sign
                    assert!(local[1] < 0.0);
                    let (_, d) = segment_trace(sign, 1.0, 20.0, b);
                    assert!(sign.factor() * d > 0.0);
                    assert_eq!(local[1], segment_trace(sign, 1.0, 20.0, b).0);
                }
            }
        }
    }

    #[test]
    fn collar_divergence_in_uncut_strip() {
        // x ∈ [δ₁, δ₂]: div = 2 + φ₁ u′
        let c = surgered(Sign::Positive, 20.0);
        for k in 0..100 {
            let a = lerp(0.4, 0.7, k as f64 / 99.0);
            let s = c.sample([a, 0.01]);
            let expected = 2.0 + c.phi1().value(a) * 20.0;
            assert!((s.div - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_slope_fails_surgery() {
        let base = saddle_model(1.0, Sign::Positive).unwrap();
        let deficit = Collar::ALL
            .iter()
            .flat_map(|_| base.collar_points(64))
            .map(|[a, b]| base.slope_free_divergence(a, b))
            .fold(f64::INFINITY, f64::min);
        assert!(deficit < 0.0, "uncut divergence deficit should be negative");
        let err = apply_boundary_surgery(&base, &[0.0; 4]).unwrap_err();
        match err {
            ModelError::SlopeTooSmall { point, .. } => {
                let a = point[0].abs().max(point[1].abs());
                assert!(a >= 0.7 - 1e-12, "worst point {point:?}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_annulus_values() {
        let c = zero_annulus_model(1.0, 0.5).unwrap();
        let s = c.sample([0.0, 0.0]);
        assert_eq!(s.div, 0.0);
        assert_eq!(s.x_of_f(), -1.0);
        assert_eq!(s.contact_density(), 1.0);
        let s = c.sample([1.0, 0.5]);
        assert!((s.div - 2.0 / 0.5).abs() < 1e-15);
        assert!(s.f > 0.0);
        let c = zero_annulus_model(0.7, 0.3).unwrap();
        for k in 0..101 {
            let s = c.sample([0.0, lerp(-1.0, 1.0, k as f64 / 100.0)]);
            assert!(s.contact_density() >= 0.7 - 1e-15);
        }
        assert!(zero_annulus_model(0.0, 1.0).is_err());
    }

    #[test]
    fn rescale_factor_closed_form() {
        assert!((rescale_factor(3.0, 0.5) - 4.481_689_070_338_065).abs() < 1e-12);
        assert_eq!(rescale_factor(0.0, 0.5), 1.0);
    }

    fn all_models() -> Vec<ChartModel> {
        let band = BandChart {
            level: 1.0,
            sign: Sign::Positive,
            delta: 1.0,
            orientation: -1.0,
            half_width: 0.1,
            near: SegmentTrace {
                sign: Sign::Positive,
                delta: 1.0,
                slope: 15.0,
                orientation: -1.0,
            },
            far: SegmentTrace {
                sign: Sign::Positive,
                delta: 1.0,
                slope: 9.0,
                orientation: -1.0,
            },
            blend: [0.25, 0.75],
            kappa: 0.25,
            density_near: 2.0,
            density_mid: 1.0,
            density_blend: [0.05, 0.25],
        };
        let same = AnnulusChart {
            s_range: [-1.0, 1.0],
            density_scale: 1.0,
            profile: AnnulusProfile::SameSign {
                sign: Sign::Negative,
                levels: [-3.0, -2.0],
                lambda_a: 3.0,
                zone: [-0.5, 0.5],
                ramp: 0.25,
                base_rate: 1.0,
            },
        };
        vec![
            ChartModel::EllipticDisk(elliptic_model(1.0, Sign::Positive).unwrap()),
            ChartModel::EllipticDisk(elliptic_model(-2.0, Sign::Negative).unwrap()),
            ChartModel::SaddleCross(surgered(Sign::Positive, 20.0)),
            ChartModel::SaddleCross(surgered(Sign::Negative, 20.0)),
            ChartModel::Band(band),
            ChartModel::Annulus(zero_annulus_model(0.5, 0.5).unwrap()),
            ChartModel::Annulus(same),
        ]
    }

    #[test]
    fn analytic_divergence_matches_finite_differences() {
        for model in all_models() {
            let mut checked = 0;
            for k in 0..10_000 {
                let Some(p) = map_unit(&model, quasi_random(k)) else {
                    continue;
                };
                let s = model.sample(p);
                let fd = fd_divergence(&model, p);
                assert!(
                    (s.div - fd).abs() <= 1e-6 * (1.0 + s.div.abs()),
                    "{:?} at {p:?}: {} vs {fd}",
                    model.kind(),
                    s.div
                );
                assert!(
                    (s.div - s.divergence_from_partials()).abs() <= 1e-12 * (1.0 + s.div.abs())
                );
                checked += 1;
            }
            assert!(checked > 1000);
        }
    }

    #[test]
    fn gradient_like_and_sign_law_on_models() {
        for model in all_models() {
            for p in model.sample_points(64) {
                let s = model.sample(p);
                let singular = model.singular_distance(p).is_some_and(|d| d <= 1e-12);
                if singular {
                    assert_eq!(s.x_norm(), 0.0);
                } else {
                    assert!(s.x_of_f() < 0.0, "{:?} at {p:?}", model.kind());
                }
                match model.sign() {
                    ChartSign::Crossing => assert_eq!(s.div.signum(), p[1].signum()),
                    sign => {
                        let want = if sign == ChartSign::Positive {
                            1.0
                        } else {
                            -1.0
                        };
                        assert!(want * s.div > 0.0, "{:?} at {p:?}: {}", model.kind(), s.div);
                    }
                }
            }
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(16);
        let integral: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(30)).sum();
        assert!((integral - 2.0 / 31.0).abs() < 1e-14);
    }
}
