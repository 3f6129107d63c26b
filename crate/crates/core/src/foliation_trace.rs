//! Trajectories of `X` across the atlas.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{FieldAssembly, SeamRef, Segment};
use crate::local_models::{ChartKind, ChartModel};

#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error("unknown chart {0}")]
    UnknownChart(String),
    #[error("OutOfDomain: {point:?} is outside chart {chart}")]
    OutOfDomain { chart: String, point: [f64; 2] },
    #[error("NotASaddle: chart {0} is not a saddle cross")]
    NotASaddle(String),
    #[error("step must be positive and finite, got {0}")]
    InvalidStep(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    SingularPoint,
    Boundary,
    StepLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub chart: String,
    pub point: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<TracePoint>,
    pub termination: Termination,
}

/// Largest distance from a seam for an exit point to be matched to it.
const SEAM_CAPTURE: f64 = 1e-6;
const BISECTION_TOLERANCE: f64 = 1e-10;

fn velocity(model: &ChartModel, p: [f64; 2], sign: f64) -> [f64; 2] {
    let x = model.sample(p).x;
    [sign * x[0], sign * x[1]]
}

/// One classical fourth-order step.
pub fn rk4_step(model: &ChartModel, p: [f64; 2], h: f64, sign: f64) -> [f64; 2] {
    let add = |a: [f64; 2], k: [f64; 2], s: f64| [a[0] + s * k[0], a[1] + s * k[1]];
    let k1 = velocity(model, p, sign);
    let k2 = velocity(model, add(p, k1, h / 2.0), sign);
    let k3 = velocity(model, add(p, k2, h / 2.0), sign);
    let k4 = velocity(model, add(p, k3, h), sign);
    [
        p[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        p[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

/// Distance from `p` to a seam curve and the curve parameter of the nearest point.
fn locate(segment: &Segment, model: &ChartModel, p: [f64; 2]) -> Option<(f64, f64)> {
    match *segment {
        Segment::Line { axis, value, .. } => {
            let free = 1 - axis;
            let dist = (p[axis] - value).abs();
            let param = p[free];
            let candidates = match model.periodic_axis() {
                Some((a, period)) if a == free => vec![param, param + period, param - period],
                _ => vec![param],
            };
            candidates
                .into_iter()
                .find(|&t| segment.covers(t, 1e-12))
                .map(|t| (dist, t))
        }
        Segment::Arc { offset, .. } => {
            let level = 4.0 * p[0] * p[1];
            let grad = 4.0 * p[0].hypot(p[1]);
            let dist = (level - offset).abs() / grad;
            segment.covers(p[0], 1e-12).then_some((dist, p[0]))
        }
    }
}

fn find_exit(seams: &[SeamRef], model: &ChartModel, p: [f64; 2]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64, f64)> = None;
    for (i, s) in seams.iter().enumerate() {
        if let Some((dist, param)) = locate(&s.this_segment, model, p) {
            if dist <= SEAM_CAPTURE && best.is_none_or(|b| dist < b.2) {
                best = Some((i, param, dist));
            }
        }
    }
    best.map(|(i, param, _)| (i, param))
}

/// Fixed-step integration of `X` (or `-X`) starting in a chart, crossing
/// seams through their affine identifications.
pub fn integrate(
    assembly: &FieldAssembly,
    chart: &str,
    start: [f64; 2],
    direction: Direction,
    step: f64,
    max_steps: usize,
) -> Result<Trajectory, TraceError> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(TraceError::InvalidStep(step));
    }
    let mut current = assembly
        .chart(chart)
        .ok_or_else(|| TraceError::UnknownChart(chart.to_string()))?;
    if !current.model.contains(start) {
        return Err(TraceError::OutOfDomain {
            chart: chart.to_string(),
            point: start,
        });
    }
    let sign = match direction {
        Direction::Forward => 1.0,
        Direction::Backward => -1.0,
    };
    let mut p = current.model.wrap(start);
    if current.model.sample(p).x_norm() == 0.0 {
        return Ok(Trajectory {
            points: Vec::new(),
            termination: Termination::SingularPoint,
        });
    }
    let mut points = vec![TracePoint {
        chart: current.id.clone(),
        point: p,
    }];
    let mut seams = assembly.seams_of(&current.id);
    let mut entry_point = p;

    for _ in 0..max_steps {
        let model = &current.model;
        if model.sample(p).x_norm() == 0.0 {
            return Ok(Trajectory {
                points,
                termination: Termination::SingularPoint,
            });
        }
        let q = rk4_step(model, p, step, sign);
        if model.contains(q) {
            let q = model.wrap(q);
            if let (Some(d0), Some(d1)) = (model.singular_distance(p), model.singular_distance(q)) {
                // a seed next to a saddle may dip inward before leaving; only a
                // real approach halves the distance it entered the chart with
                let entered = model
                    .singular_distance(entry_point)
                    .unwrap_or(f64::INFINITY);
                if d1 < d0 && d1 <= 10.0 * step && d1 <= 0.5 * entered {
                    points.push(TracePoint {
                        chart: current.id.clone(),
                        point: q,
                    });
                    return Ok(Trajectory {
                        points,
                        termination: Termination::SingularPoint,
                    });
                }
            }
            p = q;
            points.push(TracePoint {
                chart: current.id.clone(),
                point: p,
            });
            continue;
        }

        // bisect the step fraction to the boundary
        let (mut lo, mut hi) = (0.0, 1.0);
        while hi - lo > BISECTION_TOLERANCE {
            let mid = 0.5 * (lo + hi);
            if model.contains(rk4_step(model, p, mid * step, sign)) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let exit = model.wrap(rk4_step(model, p, lo * step, sign));
        let Some((k, param)) = find_exit(&seams, model, exit) else {
            points.push(TracePoint {
                chart: current.id.clone(),
                point: exit,
            });
            return Ok(Trajectory {
                points,
                termination: Termination::Boundary,
            });
        };
        let seam = &seams[k];
        let entry_param = seam.identification.apply(param);
        let next = assembly
            .chart(&seam.other_chart)
            .ok_or_else(|| TraceError::UnknownChart(seam.other_chart.clone()))?;
        let entry = next.model.wrap(seam.other_segment.point(entry_param));
        if exit != p {
            points.push(TracePoint {
                chart: current.id.clone(),
                point: exit,
            });
        }
        points.push(TracePoint {
            chart: next.id.clone(),
            point: entry,
        });
        current = next;
        p = entry;
        entry_point = entry;
        seams = assembly.seams_of(&current.id);
    }
    Ok(Trajectory {
        points,
        termination: Termination::StepLimit,
    })
}

/// Forward trajectories from the four axis points at distance `offset` from a
/// saddle center.
pub fn separatrices_with(
    assembly: &FieldAssembly,
    chart: &str,
    offset: f64,
    step: f64,
    max_steps: usize,
) -> Result<Vec<Trajectory>, TraceError> {
    let c = assembly
        .chart(chart)
        .ok_or_else(|| TraceError::UnknownChart(chart.to_string()))?;
    if c.model.kind() != ChartKind::SaddleCross {
        return Err(TraceError::NotASaddle(chart.to_string()));
    }
    [[offset, 0.0], [-offset, 0.0], [0.0, offset], [0.0, -offset]]
        .into_iter()
        .map(|seed| integrate(assembly, chart, seed, Direction::Forward, step, max_steps))
        .collect()
}

pub fn separatrices(assembly: &FieldAssembly, chart: &str) -> Result<Vec<Trajectory>, TraceError> {
    separatrices_with(assembly, chart, 1e-6, 1e-3, 20_000)
}

/// Endpoint of a pure in-chart integration over `steps` steps of size `h`.
pub fn chart_flow(model: &ChartModel, start: [f64; 2], h: f64, steps: usize) -> [f64; 2] {
    let mut p = start;
    for _ in 0..steps {
        p = rk4_step(model, p, h, 1.0);
    }
    p
}

/// Richardson ratio `|P(h) - P(h/2)| / |P(h/2) - P(h/4)|` over a fixed time
/// span; about 16 for a fourth-order method. `None` when the finest path
/// leaves the chart, since the extended formulas are meaningless there.
pub fn convergence_ratio(model: &ChartModel, start: [f64; 2], h: f64, steps: usize) -> Option<f64> {
    let mut p = start;
    for _ in 0..4 * steps {
        p = rk4_step(model, p, h / 4.0, 1.0);
        if !model.contains(p) {
            return None;
        }
    }
    let a = chart_flow(model, start, h, steps);
    let b = chart_flow(model, start, h / 2.0, 2 * steps);
    let c = chart_flow(model, start, h / 4.0, 4 * steps);
    let e1 = (a[0] - b[0]).hypot(a[1] - b[1]);
    let e2 = (b[0] - c[0]).hypot(b[1] - c[1]);
    Some(e1 / e2)
}

/// CSV polylines: `chart_id,u,v,f,Xu,Xv,density`, one blank-line separated
/// block per trajectory.
pub fn trajectories_csv(assembly: &FieldAssembly, trajectories: &[Trajectory]) -> String {
    let mut out = String::from("chart_id,u,v,f,Xu,Xv,density\n");
    for (i, t) in trajectories.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for tp in &t.points {
            let Some(c) = assembly.chart(&tp.chart) else {
                continue;
            };
            let s = c.model.sample(tp.point);
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                tp.chart, tp.point[0], tp.point[1], s.f, s.x[0], s.x[1], s.rho
            );
        }
    }
    out
}

/// `f` along a trajectory, in order.
pub fn levels(assembly: &FieldAssembly, t: &Trajectory) -> Vec<f64> {
    t.points
        .iter()
        .filter_map(|tp| {
            assembly
                .chart(&tp.chart)
                .map(|c| c.model.sample(tp.point).f)
        })
        .collect()
}
