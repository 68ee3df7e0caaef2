//! Toy 3D coordinates for assembled molecules.
//!
//! Targets are weighted shortest-path distances over idealized bond lengths;
//! a localized stress-majorization sweep places atoms, then a short relaxation
//! pushes apart non-bonded contacts and restores bond lengths.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Deserialize;
use thiserror::Error;

use crate::graph::AtomGraph;
use crate::vocabulary::{BondOrder, Element};

/// Bond length tolerance used by the post-embedding check.
pub const BOND_TOLERANCE: f64 = 0.2;
/// Minimum separation of non-bonded atoms, Å.
pub const MIN_NONBONDED: f64 = 0.8;

const MAX_ATTEMPTS: usize = 8;
const STRESS_SWEEPS: usize = 300;
const RELAX_SWEEPS: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("embedding did not converge after {0} attempts")]
    NoConvergence(usize),
}

#[derive(Debug, Deserialize)]
struct LengthTable {
    radii: BTreeMap<String, f64>,
    order_factor: BTreeMap<String, f64>,
}

struct Lengths {
    radii: [f64; 8],
    factor: [f64; 4],
}

fn lengths() -> &'static Lengths {
    static TABLE: OnceLock<Lengths> = OnceLock::new();
    TABLE.get_or_init(|| {
        let raw: LengthTable =
            toml::from_str(include_str!("../data/bond_lengths.toml")).expect("bundled bond length table parses");
        let mut radii = [0.0; 8];
        for e in Element::ALL {
            radii[e.index()] = raw.radii[e.symbol()];
        }
        let mut factor = [0.0; 4];
        for (o, key) in BondOrder::ALL.iter().zip(["single", "double", "triple", "aromatic"]) {
            factor[o.index()] = raw.order_factor[key];
        }
        Lengths { radii, factor }
    })
}

/// Idealized length of a bond between two elements.
pub fn ideal_bond_length(a: Element, b: Element, order: BondOrder) -> f64 {
    let t = lengths();
    (t.radii[a.index()] + t.radii[b.index()]) * t.factor[order.index()]
}

pub fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Checks bond lengths within ±20% and non-bonded pairs at least 0.8 Å apart.
pub fn check_geometry(g: &AtomGraph, coords: &[[f64; 3]]) -> bool {
    let n = g.atoms().len();
    let mut bonded = vec![false; n * n];
    for &(a, b, o) in g.bonds() {
        bonded[a * n + b] = true;
        bonded[b * n + a] = true;
        let l = ideal_bond_length(g.atoms()[a].spec.element, g.atoms()[b].spec.element, o);
        let d = distance(&coords[a], &coords[b]);
        if (d - l).abs() > BOND_TOLERANCE * l {
            return false;
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            if !bonded[i * n + j] && distance(&coords[i], &coords[j]) < MIN_NONBONDED {
                return false;
            }
        }
    }
    true
}

/// Embeds the atom graph; deterministic for a given RNG state.
pub fn embed_coordinates<R: Rng + ?Sized>(g: &AtomGraph, rng: &mut R) -> Result<Vec<[f64; 3]>, EmbedError> {
    let n = g.atoms().len();
    if n == 1 {
        return Ok(vec![[0.0; 3]]);
    }
    let (target, bonded) = target_distances(g);
    for _ in 0..MAX_ATTEMPTS {
        let scale = (n as f64).cbrt() * 1.5;
        let mut x: Vec<[f64; 3]> = (0..n)
            .map(|_| {
                [
                    scale * rng.sample::<f64, _>(StandardNormal),
                    scale * rng.sample::<f64, _>(StandardNormal),
                    scale * rng.sample::<f64, _>(StandardNormal),
                ]
            })
            .collect();
        stress_majorize(&mut x, &target, n);
        relax(&mut x, &target, &bonded, n);
        if check_geometry(g, &x) {
            return Ok(x);
        }
    }
    Err(EmbedError::NoConvergence(MAX_ATTEMPTS))
}

fn target_distances(g: &AtomGraph) -> (Vec<f64>, Vec<bool>) {
    let n = g.atoms().len();
    let mut d = vec![f64::INFINITY; n * n];
    let mut hops = vec![usize::MAX; n * n];
    let mut bonded = vec![false; n * n];
    for i in 0..n {
        d[i * n + i] = 0.0;
        hops[i * n + i] = 0;
    }
    for &(a, b, o) in g.bonds() {
        let l = ideal_bond_length(g.atoms()[a].spec.element, g.atoms()[b].spec.element, o);
        d[a * n + b] = l;
        d[b * n + a] = l;
        hops[a * n + b] = 1;
        hops[b * n + a] = 1;
        bonded[a * n + b] = true;
        bonded[b * n + a] = true;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[i * n + k] + d[k * n + j];
                if via < d[i * n + j] {
                    d[i * n + j] = via;
                    hops[i * n + j] = hops[i * n + k].saturating_add(hops[k * n + j]);
                }
            }
        }
    }
    // Bond angles shorten paths relative to their summed lengths.
    for (v, h) in d.iter_mut().zip(&hops) {
        if *h >= 2 {
            *v *= if *h == 2 { 0.82 } else { 0.78 };
        }
    }
    (d, bonded)
}

fn stress_majorize(x: &mut [[f64; 3]], target: &[f64], n: usize) {
    for _ in 0..STRESS_SWEEPS {
        for i in 0..n {
            let mut num = [0.0; 3];
            let mut den = 0.0;
            for j in 0..n {
                if i == j {
                    continue;
                }
                let t = target[i * n + j];
                let w = 1.0 / (t * t);
                let mut dir = [x[i][0] - x[j][0], x[i][1] - x[j][1], x[i][2] - x[j][2]];
                let len = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
                if len > 1e-12 {
                    for v in &mut dir {
                        *v /= len;
                    }
                } else {
                    dir = [1.0, 0.0, 0.0];
                }
                for k in 0..3 {
                    num[k] += w * (x[j][k] + t * dir[k]);
                }
                den += w;
            }
            for k in 0..3 {
                x[i][k] = num[k] / den;
            }
        }
    }
}

fn relax(x: &mut [[f64; 3]], target: &[f64], bonded: &[bool], n: usize) {
    let min_sep = 1.2;
    for _ in 0..RELAX_SWEEPS {
        let mut moved = false;
        for i in 0..n {
            for j in i + 1..n {
                let d = distance(&x[i], &x[j]);
                let goal = if bonded[i * n + j] {
                    target[i * n + j]
                } else if d < min_sep {
                    min_sep
                } else {
                    continue;
                };
                if (d - goal).abs() < 1e-4 {
                    continue;
                }
                moved = true;
                let dir = if d > 1e-12 {
                    [
                        (x[i][0] - x[j][0]) / d,
                        (x[i][1] - x[j][1]) / d,
                        (x[i][2] - x[j][2]) / d,
                    ]
                } else {
                    [1.0, 0.0, 0.0]
                };
                let shift = 0.5 * (goal - d);
                for k in 0..3 {
                    x[i][k] += 0.5 * shift * dir[k];
                    x[j][k] -= 0.5 * shift * dir[k];
                }
            }
        }
        if !moved {
            break;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocabulary::Vocabulary;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn table_values() {
        assert!((ideal_bond_length(Element::C, Element::C, BondOrder::Single) - 1.54).abs() < 1e-12);
        assert!((ideal_bond_length(Element::C, Element::C, BondOrder::Double) - 1.3398).abs() < 1e-4);
    }

    #[test]
    fn two_carbons_within_band() {
        let v = Vocabulary::from_toml_str(
            r#"
            [[blocks]]
            id = 0
            atoms = [["C", false], ["C", false]]
            bonds = [[0, 1, "single"]]
            "#,
        )
        .unwrap();
        let g = AtomGraph::seed(v.block(0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = embed_coordinates(&g, &mut rng).unwrap();
        let d = distance(&x[0], &x[1]);
        assert!((1.23..=1.85).contains(&d), "{d}");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(x, embed_coordinates(&g, &mut rng).unwrap());
    }
}
