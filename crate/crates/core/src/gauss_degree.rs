//! Singularity counts of the standard embedding and the Gauss-map degree.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::morse_spec::{spec_from_dividing_set, CriticalKind, DividingSetSpec, PairingError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DegreeError {
    #[error(transparent)]
    Pairing(#[from] PairingError),
    #[error("GenusMismatch: surfaces of genus {0} and {1}")]
    GenusMismatch(u32, u32),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegreeReport {
    pub e_plus: u64,
    pub e_minus: u64,
    pub h_plus: u64,
    pub h_minus: u64,
    pub g_plus: u64,
    pub g_minus: u64,
    pub chi_plus: i64,
    pub chi_minus: i64,
    pub degree_formula: i64,
    pub degree_localsum: i64,
    pub euler_class: i64,
}

/// Local degree of the Gauss map summed over the hyperbolic points of one
/// side. Each component of genus `g` with `k` boundary circles carries
/// `k - 1 + 2g` saddles, of which `g` of the handle saddles miss the
/// regular value; the rest count `-1` on the positive side and `+1` on the
/// negative side.
fn side_local_degree(components: &[crate::morse_spec::Component], sign: i64) -> i64 {
    let mut total = 0;
    for c in components {
        let k = c.boundary_circles.len() as i64;
        let g = c.genus as i64;
        let saddles = k - 1 + 2 * g;
        let counted = saddles - g;
        total += -sign * counted;
    }
    total
}

pub fn degree_report(dspec: &DividingSetSpec) -> Result<DegreeReport, DegreeError> {
    dspec.validate()?;
    let spec = spec_from_dividing_set(dspec)?;

    // counts from the Morse function of the standard embedding
    let mut e = [0u64; 2];
    let mut h = [0u64; 2];
    for p in &spec.critical_points {
        let side = usize::from(p.value < 0.0);
        match p.kind {
            CriticalKind::Maximum | CriticalKind::Minimum => e[side] += 1,
            CriticalKind::Saddle => h[side] += 1,
        }
    }

    let g_plus: u64 = dspec
        .positive_components
        .iter()
        .map(|c| c.genus as u64)
        .sum();
    let g_minus: u64 = dspec
        .negative_components
        .iter()
        .map(|c| c.genus as u64)
        .sum();
    let circles = dspec.circles().len() as u64;
    let formula_h = |n: usize, g: u64| circles + 2 * g - n as u64;
    let (np, nn) = (
        dspec.positive_components.len(),
        dspec.negative_components.len(),
    );
    if e != [np as u64, nn as u64] || h != [formula_h(np, g_plus), formula_h(nn, g_minus)] {
        return Err(DegreeError::Invariant(format!(
            "Morse counts e = {e:?}, h = {h:?} disagree with component counts"
        )));
    }

    let chi_plus = e[0] as i64 - h[0] as i64;
    let chi_minus = e[1] as i64 - h[1] as i64;
    if chi_plus != dspec.chi_plus() || chi_minus != dspec.chi_minus() {
        return Err(DegreeError::Invariant(format!(
            "χ from counts ({chi_plus}, {chi_minus}) differs from component sum ({}, {})",
            dspec.chi_plus(),
            dspec.chi_minus()
        )));
    }
    let difference = chi_plus - chi_minus;
    if difference % 2 != 0 {
        return Err(DegreeError::Invariant(format!(
            "χ₊ - χ₋ = {difference} is odd"
        )));
    }
    let localsum = side_local_degree(&dspec.positive_components, 1)
        + side_local_degree(&dspec.negative_components, -1);

    Ok(DegreeReport {
        e_plus: e[0],
        e_minus: e[1],
        h_plus: h[0],
        h_minus: h[1],
        g_plus,
        g_minus,
        chi_plus,
        chi_minus,
        degree_formula: difference / 2,
        degree_localsum: localsum,
        euler_class: difference,
    })
}

/// Whether two dividing sets on the same surface give homotopic plane fields.
pub fn homotopy_equivalent(a: &DividingSetSpec, b: &DividingSetSpec) -> Result<bool, DegreeError> {
    let ra = degree_report(a)?;
    let rb = degree_report(b)?;
    let genus = |r: &DegreeReport| ((2 - r.chi_plus - r.chi_minus) / 2) as u32;
    if genus(&ra) != genus(&rb) {
        return Err(DegreeError::GenusMismatch(genus(&ra), genus(&rb)));
    }
    Ok(ra.degree_formula == rb.degree_formula)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::morse_spec::Component;

    fn comp(genus: u32, circles: &[&str]) -> Component {
        Component {
            genus,
            boundary_circles: circles.iter().map(|c| c.to_string()).collect(),
        }
    }

    fn dset(pos: Vec<Component>, neg: Vec<Component>) -> DividingSetSpec {
        DividingSetSpec {
            positive_components: pos,
            negative_components: neg,
            pairing: vec![],
        }
    }

    fn sphere_one() -> DividingSetSpec {
        dset(vec![comp(0, &["g"])], vec![comp(0, &["g"])])
    }

    fn sphere_two() -> DividingSetSpec {
        dset(
            vec![comp(0, &["a"]), comp(0, &["b"])],
            vec![comp(0, &["a", "b"])],
        )
    }

    #[test]
    fn sphere_one_circle() {
        let r = degree_report(&sphere_one()).unwrap();
        assert_eq!((r.chi_plus, r.chi_minus), (1, 1));
        assert_eq!(r.degree_formula, 0);
        assert_eq!(r.euler_class, 0);
    }

    #[test]
    fn sphere_two_circles() {
        let r = degree_report(&sphere_two()).unwrap();
        assert_eq!((r.chi_plus, r.chi_minus), (2, 0));
        assert_eq!((r.h_minus, r.h_plus), (1, 0));
        assert_eq!(r.degree_formula, 1);
        assert_eq!(r.degree_localsum, 1);
    }

    #[test]
    fn torus_parallel() {
        let r = degree_report(&dset(
            vec![comp(0, &["a", "b"])],
            vec![comp(0, &["a", "b"])],
        ))
        .unwrap();
        assert_eq!((r.chi_plus, r.chi_minus), (0, 0));
        assert_eq!(r.degree_formula, 0);
        assert_eq!(r.euler_class, 0);
    }

    #[test]
    fn three_curve_genus_two() {
        let d = dset(
            vec![comp(0, &["g1"]), comp(0, &["g2", "g3"])],
            vec![comp(1, &["g1", "g2", "g3"])],
        );
        let r = degree_report(&d).unwrap();
        assert_eq!((r.e_plus, r.h_plus, r.e_minus, r.h_minus), (2, 1, 1, 4));
        assert_eq!((r.chi_plus, r.chi_minus), (1, -3));
        assert_eq!(r.degree_formula, 2);
        assert_eq!(r.degree_localsum, 2);
        assert_eq!(r.euler_class, 4);
    }

    #[test]
    fn homotopy_examples() {
        assert!(homotopy_equivalent(&sphere_one(), &sphere_one().swapped()).unwrap());
        assert!(!homotopy_equivalent(&sphere_two(), &sphere_one()).unwrap());
        assert!(homotopy_equivalent(&sphere_two(), &sphere_two()).unwrap());
        let torus = dset(vec![comp(0, &["a", "b"])], vec![comp(0, &["a", "b"])]);
        assert_eq!(
            homotopy_equivalent(&torus, &sphere_one()),
            Err(DegreeError::GenusMismatch(1, 0))
        );
    }

    #[test]
    fn invalid_pairing_propagates() {
        let d = dset(vec![comp(0, &["a"])], vec![comp(0, &["b"])]);
        assert!(matches!(degree_report(&d), Err(DegreeError::Pairing(_))));
    }
}
