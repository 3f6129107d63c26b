//! Sampled certification of an assembled atlas.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{FieldAssembly, SeamRef};
use crate::local_models::{AnnulusProfile, ChartModel, ChartSign, FieldSample};

#[derive(Debug, Error, PartialEq)]
pub enum VerifyError {
    #[error("unknown chart {0}")]
    UnknownChart(String),
    #[error("OutOfDomain: {point:?} is outside chart {chart}")]
    OutOfDomain { chart: String, point: [f64; 2] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Contact density must exceed this.
    pub contact_margin: f64,
    pub singular_radius: f64,
    pub seam_f: f64,
    pub seam_tangential: f64,
    pub seam_density: f64,
    pub seam_samples: usize,
    pub fd_step: f64,
    pub fd_relative: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            contact_margin: 0.0,
            singular_radius: 1e-12,
            seam_f: 0.0,
            seam_tangential: 1e-12,
            seam_density: 1e-12,
            seam_samples: 257,
            fd_step: 1e-4,
            fd_relative: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub check: String,
    pub chart: String,
    pub grid: usize,
    pub min_margin: f64,
    pub worst_point: [f64; 2],
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub provenance: String,
    pub grid: usize,
    pub records: Vec<CheckRecord>,
    pub pass: bool,
    pub tolerances: Tolerances,
}

impl VerificationReport {
    /// Smallest margin over all records of a check, if any.
    pub fn margin(&self, check: &str) -> Option<f64> {
        self.records
            .iter()
            .filter(|r| r.check == check)
            .map(|r| r.min_margin)
            .reduce(f64::min)
    }

    pub fn contact_margin(&self) -> f64 {
        self.margin(CONTACT).unwrap_or(f64::NAN)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckRecord> {
        self.records.iter().filter(|r| !r.pass)
    }
}

pub const CONTACT: &str = "contact";
pub const GRADIENT: &str = "gradient_like";
pub const SIGN_LAW: &str = "divergence_sign";
pub const DIVIDING: &str = "dividing_transverse";
pub const ZERO_SET: &str = "zero_set";
pub const SEAM_F: &str = "seam_f";
pub const SEAM_TANGENTIAL: &str = "seam_tangential";
pub const SEAM_DENSITY: &str = "seam_density";
pub const SEAM_IDENTIFICATION: &str = "seam_identification";
pub const FINITE_DIFFERENCE: &str = "finite_difference";
pub const CRITICAL_SET: &str = "critical_set";

/// `f·div_ω X - X(f)` at a chart point.
pub fn contact_density(
    assembly: &FieldAssembly,
    chart: &str,
    point: [f64; 2],
) -> Result<f64, VerifyError> {
    let c = assembly
        .chart(chart)
        .ok_or_else(|| VerifyError::UnknownChart(chart.to_string()))?;
    if !c.model.contains(point) {
        return Err(VerifyError::OutOfDomain {
            chart: chart.to_string(),
            point,
        });
    }
    Ok(c.model.sample(point).contact_density())
}

/// Running minimum with its location.
#[derive(Clone, Copy)]
struct Worst {
    margin: f64,
    point: [f64; 2],
}

impl Worst {
    fn new() -> Self {
        Worst {
            margin: f64::INFINITY,
            point: [f64::NAN, f64::NAN],
        }
    }

    fn push(&mut self, margin: f64, point: [f64; 2]) {
        // NaN margins count as failures
        if margin < self.margin || margin.is_nan() && !self.margin.is_nan() {
            self.margin = margin;
            self.point = point;
        }
    }

    fn record(
        self,
        check: &str,
        chart: &str,
        grid: usize,
        pass: impl Fn(f64) -> bool,
    ) -> CheckRecord {
        CheckRecord {
            check: check.into(),
            chart: chart.into(),
            grid,
            min_margin: self.margin,
            worst_point: self.point,
            pass: pass(self.margin),
        }
    }
}

/// Central-difference divergence `(∂(ρX¹)/∂u + ∂(ρX²)/∂v)/ρ`.
pub fn finite_difference_divergence(model: &ChartModel, p: [f64; 2], h: f64) -> f64 {
    let flux = |q: [f64; 2], i: usize| {
        let s = model.sample(q);
        s.rho * s.x[i]
    };
    let mut total = 0.0;
    for i in 0..2 {
        let mut hi = p;
        let mut lo = p;
        hi[i] += h;
        lo[i] -= h;
        total += (flux(hi, i) - flux(lo, i)) / (2.0 * h);
    }
    total / model.sample(p).rho
}

fn chart_checks(model: &ChartModel, id: &str, grid: usize, tol: &Tolerances) -> Vec<CheckRecord> {
    let points = model.sample_points(grid);
    let samples: Vec<([f64; 2], FieldSample)> =
        points.iter().map(|&p| (p, model.sample(p))).collect();
    let singular = |p: [f64; 2]| {
        model
            .singular_distance(p)
            .is_some_and(|d| d <= tol.singular_radius)
    };

    let mut contact = Worst::new();
    let mut gradient = Worst::new();
    let mut sign_law = Worst::new();
    let mut zero_set = Worst::new();
    let mut fd = Worst::new();
    for &(p, s) in &samples {
        contact.push(s.contact_density(), p);

        if singular(p) {
            // X must vanish exactly; any residual is a failure of size |X|
            gradient.push(if s.x_norm() == 0.0 { 1.0 } else { -s.x_norm() }, p);
        } else {
            let denom = s.x_norm() * s.df[0].hypot(s.df[1]);
            let cosine = if denom > 0.0 {
                -s.x_of_f() / denom
            } else {
                0.0
            };
            gradient.push(cosine, p);
        }

        if s.f != 0.0 {
            sign_law.push(s.f.signum() * s.div, p);
        }

        let zero_margin = match model.sign() {
            ChartSign::Positive => s.f,
            ChartSign::Negative => -s.f,
            ChartSign::Crossing => {
                if p[1] == 0.0 {
                    // the zero circle itself: f must vanish there
                    if s.f == 0.0 {
                        f64::INFINITY
                    } else {
                        -s.f.abs()
                    }
                } else {
                    p[1].signum() * s.f / p[1].abs()
                }
            }
        };
        zero_set.push(zero_margin, p);

        if !singular(p) && s.rho > 0.0 {
            let numeric = finite_difference_divergence(model, p, tol.fd_step);
            let err = (numeric - s.div).abs() / (1.0 + s.div.abs());
            fd.push(tol.fd_relative - err, p);
        }
    }

    let mut out = vec![
        contact.record(CONTACT, id, grid, |m| m > tol.contact_margin),
        gradient.record(GRADIENT, id, grid, |m| m > 0.0),
        sign_law.record(SIGN_LAW, id, grid, |m| m > 0.0),
        zero_set.record(ZERO_SET, id, grid, |m| m > 0.0),
        fd.record(FINITE_DIFFERENCE, id, grid, |m| m >= 0.0),
    ];

    if let ChartModel::Annulus(a) = model {
        if let AnnulusProfile::Crossing { lambda, .. } = a.profile {
            let mut transverse = Worst::new();
            for j in 0..grid {
                let p = [std::f64::consts::TAU * j as f64 / grid as f64, 0.0];
                let s = model.sample(p);
                // X^s < 0 points out of the positive side; X(f) ≤ -λ
                let m = (-s.x[1]).min(-s.x_of_f() / lambda - (1.0 - 1e-12));
                transverse.push(m, p);
            }
            out.push(transverse.record(DIVIDING, id, grid, |m| m >= 0.0));
        }
    }
    out
}

fn seam_checks(seam: &SeamRef, assembly: &FieldAssembly, tol: &Tolerances) -> Vec<CheckRecord> {
    let name = format!("{}|{}", seam.this_chart, seam.other_chart);
    let n = tol.seam_samples.max(2);
    let (Some(a), Some(b)) = (
        assembly.chart(&seam.this_chart),
        assembly.chart(&seam.other_chart),
    ) else {
        return vec![CheckRecord {
            check: SEAM_IDENTIFICATION.into(),
            chart: name,
            grid: n,
            min_margin: f64::NEG_INFINITY,
            worst_point: [f64::NAN; 2],
            pass: false,
        }];
    };
    let [r0, r1] = seam.this_segment.range();
    let inverse = seam.identification.inverse();

    let mut f_err = Worst::new();
    let mut tan = Worst::new();
    let mut ident = Worst::new();
    let mut ratios = Vec::with_capacity(n);
    let mut ratio_points = Vec::with_capacity(n);
    for k in 0..n {
        let t = k as f64 / (n - 1) as f64;
        let param = if k == n - 1 { r1 } else { r0 + (r1 - r0) * t };
        let other_param = seam.identification.apply(param);
        let pa = seam.this_segment.point(param);
        let pb = seam.other_segment.point(other_param);

        let back = inverse.apply(other_param);
        let in_domain = a.model.contains(pa)
            && b.model.contains(pb)
            && seam.other_segment.covers(other_param, 1e-9);
        let round_trip = (back - param).abs() / (1.0 + param.abs());
        ident.push(if in_domain { 1e-12 - round_trip } else { -1.0 }, pa);

        let sa = a.model.sample(pa);
        let sb = b.model.sample(pb);
        f_err.push(tol.seam_f - (sa.f - sb.f).abs(), pa);

        if let (Some(ia), Some(ib)) = (
            seam.this_segment.free_axis(),
            seam.other_segment.free_axis(),
        ) {
            let expected = seam.identification.scale * sa.x[ia];
            let scale = 1.0 + sa.x_norm().max(sb.x_norm());
            tan.push(
                tol.seam_tangential - (sb.x[ib] - expected).abs() / scale,
                pa,
            );
        }
        ratios.push(sb.rho / sa.rho);
        ratio_points.push(pa);
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let mut density = Worst::new();
    for (r, p) in ratios.iter().zip(&ratio_points) {
        density.push(tol.seam_density - ((r - mean) / mean).abs(), *p);
    }

    let mut out = vec![
        ident.record(SEAM_IDENTIFICATION, &name, n, |m| m >= 0.0),
        f_err.record(SEAM_F, &name, n, |m| m >= 0.0),
        density.record(SEAM_DENSITY, &name, n, |m| m >= 0.0),
    ];
    if !seam.this_segment.is_arc() && !seam.other_segment.is_arc() {
        out.push(tan.record(SEAM_TANGENTIAL, &name, n, |m| m >= 0.0));
    }
    out
}

/// Every critical point owns exactly one chart with a singular point, and
/// every such chart is owned.
fn critical_set_check(assembly: &FieldAssembly) -> CheckRecord {
    let with_center: Vec<&str> = assembly
        .charts
        .iter()
        .filter(|c| c.model.singular_point().is_some())
        .map(|c| c.id.as_str())
        .collect();
    let mut referenced: Vec<&str> = assembly
        .critical_points
        .iter()
        .map(|c| c.chart.as_str())
        .collect();
    referenced.sort_unstable();
    let mut centers = with_center.clone();
    centers.sort_unstable();
    let ok = referenced == centers && {
        let mut d = referenced.clone();
        d.dedup();
        d.len() == referenced.len()
    };
    CheckRecord {
        check: CRITICAL_SET.into(),
        chart: "*".into(),
        grid: 0,
        min_margin: if ok { 1.0 } else { -1.0 },
        worst_point: [0.0, 0.0],
        pass: ok,
    }
}

/// Runs `f` on a pool capped by `CONVEXFORM_THREADS` when that is set.
pub fn with_thread_cap<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    let cap = std::env::var("CONVEXFORM_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0);
    match cap.and_then(|n| rayon::ThreadPoolBuilder::new().num_threads(n).build().ok()) {
        Some(pool) => pool.install(f),
        None => f(),
    }
}

pub fn verify(assembly: &FieldAssembly, grid: usize, tol: &Tolerances) -> VerificationReport {
    let grid = grid.max(8);
    let records = with_thread_cap(|| {
        let mut records: Vec<CheckRecord> = assembly
            .charts
            .par_iter()
            .map(|c| chart_checks(&c.model, &c.id, grid, tol))
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect();
        records.extend(
            assembly
                .seams
                .par_iter()
                .map(|s| seam_checks(s, assembly, tol))
                .collect::<Vec<_>>()
                .into_iter()
                .flatten(),
        );
        records
    });
    let mut records = records;
    records.push(critical_set_check(assembly));
    let pass = records.iter().all(|r| r.pass);
    VerificationReport {
        provenance: assembly.provenance.clone(),
        grid,
        records,
        pass,
        tolerances: tol.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{build_assembly, AssemblyParams};
    use crate::morse_spec::{CriticalKind, CriticalPoint, MorseSpec, ReebEdge};

    fn sphere() -> MorseSpec {
        MorseSpec {
            critical_points: vec![
                CriticalPoint {
                    id: "min".into(),
                    kind: CriticalKind::Minimum,
                    value: -1.0,
                },
                CriticalPoint {
                    id: "max".into(),
                    kind: CriticalKind::Maximum,
                    value: 1.0,
                },
            ],
            edges: vec![ReebEdge {
                id: "e".into(),
                endpoints: ["min".into(), "max".into()],
                value_interval: None,
            }],
        }
    }

    #[test]
    fn contact_density_point_values() {
        let a = build_assembly(&sphere(), &AssemblyParams::default()).unwrap();
        assert_eq!(contact_density(&a, "ell:max", [0.3, 1.0]).unwrap(), 4.0);
        assert!(matches!(
            contact_density(&a, "ell:max", [3.0, 0.0]),
            Err(VerifyError::OutOfDomain { .. })
        ));
        assert!(matches!(
            contact_density(&a, "nope", [0.0, 0.0]),
            Err(VerifyError::UnknownChart(_))
        ));
        // crossing annulus with λ = 1 at s = 0
        assert_eq!(contact_density(&a, "ann:e", [0.5, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn sphere_passes_with_margin() {
        let a = build_assembly(&sphere(), &AssemblyParams::default()).unwrap();
        let r = verify(&a, 64, &Tolerances::default());
        let failures: Vec<_> = r.failures().collect();
        assert!(r.pass, "{failures:#?}");
        assert!(r.contact_margin() >= 0.5);
    }

    #[test]
    fn report_is_deterministic() {
        let a = build_assembly(&sphere(), &AssemblyParams::default()).unwrap();
        let r1 = verify(&a, 32, &Tolerances::default());
        let r2 = verify(&a, 32, &Tolerances::default());
        assert_eq!(
            serde_json::to_string(&r1).unwrap(),
            serde_json::to_string(&r2).unwrap()
        );
    }
}
