//! Bond lengths, bond angles and dihedrals keyed by hybridization-annotated
//! element labels.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::distance::{Topology, PERIOD};
use crate::graph::AtomGraph;
use crate::vocabulary::{BondOrder, Element};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryKind {
    BondLength,
    BondAngle,
    Dihedral,
}

impl GeometryKind {
    pub fn topology(self) -> Topology {
        match self {
            GeometryKind::BondLength => Topology::Linear,
            _ => Topology::Circular,
        }
    }
}

impl fmt::Display for GeometryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GeometryKind::BondLength => "bond_length",
            GeometryKind::BondAngle => "bond_angle",
            GeometryKind::Dihedral => "dihedral",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Hybridization {
    Sp,
    Sp2,
    Sp3,
}

impl Hybridization {
    fn label(self) -> &'static str {
        match self {
            Hybridization::Sp => "sp",
            Hybridization::Sp2 => "sp2",
            Hybridization::Sp3 => "sp3",
        }
    }
}

/// Samples grouped by `(kind, key)`; keys look like `C.sp3-N.sp2`.
pub type GeometrySamples = BTreeMap<(GeometryKind, String), Vec<f64>>;

/// sp3 iff every bond is single; sp with a triple or two doubles; sp2 otherwise.
pub fn hybridization(orders: &[BondOrder]) -> Hybridization {
    let doubles = orders.iter().filter(|o| **o == BondOrder::Double).count();
    if orders.contains(&BondOrder::Triple) || doubles >= 2 {
        Hybridization::Sp
    } else if orders.iter().all(|o| *o == BondOrder::Single) {
        Hybridization::Sp3
    } else {
        Hybridization::Sp2
    }
}

pub fn extract_geometry(g: &AtomGraph, coords: &[[f64; 3]]) -> GeometrySamples {
    let elements: Vec<Element> = g.atoms().iter().map(|a| a.spec.element).collect();
    extract_geometry_parts(&elements, g.bonds(), coords)
}

/// Geometry samples from a bare element list and bond list.
pub fn extract_geometry_parts(
    elements: &[Element],
    bonds: &[(usize, usize, BondOrder)],
    coords: &[[f64; 3]],
) -> GeometrySamples {
    assert_eq!(elements.len(), coords.len(), "coordinates must cover all atoms");
    let n = elements.len();
    let mut adj: Vec<Vec<(usize, BondOrder)>> = vec![Vec::new(); n];
    for &(a, b, o) in bonds {
        adj[a].push((b, o));
        adj[b].push((a, o));
    }
    for row in &mut adj {
        row.sort();
    }
    let labels: Vec<String> = (0..n)
        .map(|v| {
            let orders: Vec<BondOrder> = adj[v].iter().map(|x| x.1).collect();
            format!("{}.{}", elements[v], hybridization(&orders).label())
        })
        .collect();
    let key = |idx: &[usize]| {
        let fwd: Vec<&str> = idx.iter().map(|&v| labels[v].as_str()).collect();
        let rev: Vec<&str> = fwd.iter().rev().copied().collect();
        fwd.min(rev).join("-")
    };
    let mut out = GeometrySamples::new();
    let mut push = |kind, k: String, v: f64| out.entry((kind, k)).or_default().push(v);

    for &(a, b, _) in bonds {
        push(GeometryKind::BondLength, key(&[a, b]), norm(sub(coords[b], coords[a])));
    }
    for v in 0..n {
        for (x, &(a, _)) in adj[v].iter().enumerate() {
            for &(c, _) in &adj[v][x + 1..] {
                let deg = angle(coords[a], coords[v], coords[c]).rem_euclid(PERIOD);
                push(GeometryKind::BondAngle, key(&[a, v, c]), deg);
            }
        }
    }
    for &(b, c, _) in bonds {
        for &(a, _) in &adj[b] {
            if a == c {
                continue;
            }
            for &(d, _) in &adj[c] {
                if d == b || d == a {
                    continue;
                }
                let deg = dihedral(coords[a], coords[b], coords[c], coords[d]).rem_euclid(PERIOD);
                push(GeometryKind::Dihedral, key(&[a, b, c, d]), deg);
            }
        }
    }
    out
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

/// Angle at `b` in degrees.
fn angle(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    let (u, v) = (sub(a, b), sub(c, b));
    cross(u, v)
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .atan2(dot(u, v))
        .to_degrees()
}

/// Signed torsion a-b-c-d in degrees.
fn dihedral(a: [f64; 3], b: [f64; 3], c: [f64; 3], d: [f64; 3]) -> f64 {
    let (b1, b2, b3) = (sub(b, a), sub(c, b), sub(d, c));
    let n1 = cross(b1, b2);
    let n2 = cross(b2, b3);
    let m = cross(n1, b2);
    let x = dot(n1, n2) * norm(b2);
    let y = dot(m, n2);
    y.atan2(x).to_degrees()
}

#[cfg(test)]
mod tests {
    use super::*;
    use BondOrder::*;

    #[test]
    fn right_angle_chain() {
        let s = extract_geometry_parts(
            &[Element::C, Element::C, Element::O],
            &[(0, 1, Single), (1, 2, Single)],
            &[[1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 2.0, 0.0]],
        );
        let angles = &s[&(GeometryKind::BondAngle, "C.sp3-C.sp3-O.sp3".to_string())];
        assert_eq!(angles.len(), 1);
        assert!((angles[0] - 90.0).abs() < 1e-12);
        assert_eq!(s[&(GeometryKind::BondLength, "C.sp3-O.sp3".to_string())], vec![2.0]);
        assert!(!s.keys().any(|k| k.0 == GeometryKind::Dihedral));
    }

    #[test]
    fn ethane_like_dihedrals() {
        // H-like substituents on each carbon, staggered at 60° steps.
        let mut coords = vec![[0.0, 0.0, 0.0], [0.0, 0.0, 1.5]];
        let mut elements = vec![Element::C, Element::C];
        let mut bonds = vec![(0, 1, Single)];
        for (end, z, offset) in [(0usize, -0.5, 0.0f64), (1, 2.0, 60.0)] {
            for k in 0..3 {
                let phi = (offset + 120.0 * k as f64).to_radians();
                coords.push([phi.cos(), phi.sin(), z]);
                elements.push(Element::F);
                bonds.push((end, coords.len() - 1, Single));
            }
        }
        let s = extract_geometry_parts(&elements, &bonds, &coords);
        let mut d = s[&(GeometryKind::Dihedral, "F.sp3-C.sp3-C.sp3-F.sp3".to_string())].clone();
        d.sort_by(f64::total_cmp);
        // Front angles 0,120,240 against back 60,180,300: every difference is
        // an odd multiple of 60.
        let mut expect = Vec::new();
        for front in [0.0, 120.0, 240.0] {
            for back in [60.0, 180.0, 300.0] {
                expect.push(f64::rem_euclid(back - front, 360.0));
            }
        }
        expect.sort_by(f64::total_cmp);
        assert_eq!(d.len(), 9);
        for (a, b) in d.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn hybridization_rules() {
        assert_eq!(hybridization(&[Single, Single]), Hybridization::Sp3);
        assert_eq!(hybridization(&[]), Hybridization::Sp3);
        assert_eq!(hybridization(&[Single, Double]), Hybridization::Sp2);
        assert_eq!(hybridization(&[Aromatic, Aromatic]), Hybridization::Sp2);
        assert_eq!(hybridization(&[Double, Double]), Hybridization::Sp);
        assert_eq!(hybridization(&[Single, Triple]), Hybridization::Sp);
    }
}
