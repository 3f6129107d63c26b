//! Spec inputs: file loading, the bundled examples, and seeded random
//! dividing sets.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::morse_spec::{
    spec_from_dividing_set, Component, DividingSetSpec, MorseSpec, PairingError,
};

/// Either kind of input accepted by `validate` and `build`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpecInput {
    Morse(MorseSpec),
    Dividing(DividingSetSpec),
}

impl SpecInput {
    pub fn from_json(text: &str) -> Result<SpecInput, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_morse(&self) -> Result<MorseSpec, PairingError> {
        match self {
            SpecInput::Morse(m) => Ok(m.clone()),
            SpecInput::Dividing(d) => spec_from_dividing_set(d),
        }
    }
}

const CANONICAL: [(&str, &str); 6] = [
    ("sphere_min", include_str!("../corpus/sphere_min.json")),
    (
        "sphere_two_circles",
        include_str!("../corpus/sphere_two_circles.json"),
    ),
    (
        "torus_standard",
        include_str!("../corpus/torus_standard.json"),
    ),
    (
        "torus_parallel",
        include_str!("../corpus/torus_parallel.json"),
    ),
    (
        "genus2_three_curves",
        include_str!("../corpus/genus2_three_curves.json"),
    ),
    (
        "genus2_separating",
        include_str!("../corpus/genus2_separating.json"),
    ),
];

/// The six bundled specs, by name.
pub fn canonical() -> Vec<(&'static str, SpecInput)> {
    CANONICAL
        .iter()
        .map(|(name, text)| {
            (
                *name,
                SpecInput::from_json(text).expect("bundled spec parses"),
            )
        })
        .collect()
}

/// Random valid dividing set on a surface of genus at most `max_genus`:
/// a random bipartite spanning tree of components plus a few extra circles.
pub fn random_dividing_set<R: Rng>(rng: &mut R, max_genus: u32) -> DividingSetSpec {
    loop {
        let np = rng.gen_range(1..=3usize);
        let nn = rng.gen_range(1..=3usize);
        let mut pos: Vec<Component> = (0..np).map(|_| empty_component(rng)).collect();
        let mut neg: Vec<Component> = (0..nn).map(|_| empty_component(rng)).collect();
        let mut circles = 0usize;
        let mut link = |p: usize, n: usize, pos: &mut Vec<Component>, neg: &mut Vec<Component>| {
            circles += 1;
            let id = format!("g{circles}");
            pos[p].boundary_circles.push(id.clone());
            neg[n].boundary_circles.push(id);
        };

        // spanning tree: attach components in random order to the opposite side
        let mut order: Vec<(bool, usize)> = (0..np)
            .map(|i| (true, i))
            .chain((0..nn).map(|i| (false, i)))
            .collect();
        order.shuffle(rng);
        let first_pos = order
            .iter()
            .position(|o| o.0)
            .expect("a positive component");
        let first_neg = order
            .iter()
            .position(|o| !o.0)
            .expect("a negative component");
        let (p0, n0) = (order[first_pos].1, order[first_neg].1);
        link(p0, n0, &mut pos, &mut neg);
        let mut in_pos = vec![p0];
        let mut in_neg = vec![n0];
        for (positive, i) in order {
            if positive && !in_pos.contains(&i) {
                let n = *in_neg.choose(rng).expect("nonempty");
                link(i, n, &mut pos, &mut neg);
                in_pos.push(i);
            } else if !positive && !in_neg.contains(&i) {
                let p = *in_pos.choose(rng).expect("nonempty");
                link(p, i, &mut pos, &mut neg);
                in_neg.push(i);
            }
        }
        for _ in 0..rng.gen_range(0..=2) {
            let p = rng.gen_range(0..np);
            let n = rng.gen_range(0..nn);
            link(p, n, &mut pos, &mut neg);
        }
        let d = DividingSetSpec {
            positive_components: pos,
            negative_components: neg,
            pairing: Vec::new(),
        };
        if d.surface_genus() <= max_genus {
            return d;
        }
    }
}

fn empty_component<R: Rng>(rng: &mut R) -> Component {
    Component {
        genus: if rng.gen_bool(0.2) { 1 } else { 0 },
        boundary_circles: Vec::new(),
    }
}

/// `count` random dividing sets from a fixed seed.
pub fn random_corpus(seed: u64, count: usize, max_genus: u32) -> Vec<DividingSetSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| random_dividing_set(&mut rng, max_genus))
        .collect()
}
