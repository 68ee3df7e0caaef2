use proptest::prelude::*;

use synthgen::flow::aligned_rmsd;
use synthgen::metrics::{cov_mat, jsd, wasserstein1, Topology};

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..n {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

/// Optimal transport between equal-size uniform samples by enumerating matchings.
fn brute_w1(a: &[f64], b: &[f64], dist: impl Fn(f64, f64) -> f64) -> f64 {
    permutations(a.len())
        .iter()
        .map(|p| p.iter().enumerate().map(|(i, &j)| dist(a[i], b[j])).sum::<f64>() / a.len() as f64)
        .fold(f64::INFINITY, f64::min)
}

fn arc(x: f64, y: f64) -> f64 {
    let d = (x - y).rem_euclid(360.0);
    d.min(360.0 - d)
}

fn pairs(max: usize, lo: f64, hi: f64) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1..=max).prop_flat_map(move |n| (prop::collection::vec(lo..hi, n), prop::collection::vec(lo..hi, n)))
}

fn rotate(points: &[[f64; 3]], angle: f64, shift: [f64; 3]) -> Vec<[f64; 3]> {
    let (s, c) = angle.sin_cos();
    points
        .iter()
        .map(|p| {
            [
                c * p[0] - s * p[1] + shift[0],
                s * p[0] + c * p[1] + shift[1],
                p[2] + shift[2],
            ]
        })
        .collect()
}

proptest! {
    #[test]
    fn linear_w1_matches_brute_force((a, b) in pairs(5, -10.0, 10.0)) {
        let got = wasserstein1(&a, &b, Topology::Linear).unwrap();
        let want = brute_w1(&a, &b, |x, y| (x - y).abs());
        prop_assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn circular_w1_matches_brute_force((a, b) in pairs(5, 0.0, 360.0)) {
        let got = wasserstein1(&a, &b, Topology::Circular).unwrap();
        let want = brute_w1(&a, &b, arc);
        prop_assert!((got - want).abs() < 1e-8, "{got} vs {want}");
    }

    #[test]
    fn circular_w1_is_rotation_invariant((a, b) in pairs(8, 0.0, 360.0), shift in 0.0f64..360.0) {
        let turn = |v: &[f64]| v.iter().map(|x| (x + shift).rem_euclid(360.0)).collect::<Vec<_>>();
        let w = wasserstein1(&a, &b, Topology::Circular).unwrap();
        let wr = wasserstein1(&turn(&a), &turn(&b), Topology::Circular).unwrap();
        prop_assert!((w - wr).abs() < 1e-8);
        prop_assert!(w <= 180.0 + 1e-9);
    }

    #[test]
    fn w1_is_a_metric(
        a in prop::collection::vec(0.0f64..360.0, 1..12),
        b in prop::collection::vec(0.0f64..360.0, 1..12),
        c in prop::collection::vec(0.0f64..360.0, 1..12),
    ) {
        for t in [Topology::Linear, Topology::Circular] {
            let ab = wasserstein1(&a, &b, t).unwrap();
            let ba = wasserstein1(&b, &a, t).unwrap();
            let ac = wasserstein1(&a, &c, t).unwrap();
            let cb = wasserstein1(&c, &b, t).unwrap();
            prop_assert!((ab - ba).abs() < 1e-9);
            prop_assert!(ab <= ac + cb + 1e-9);
            prop_assert!(wasserstein1(&a, &a, t).unwrap().abs() < 1e-9);
        }
    }

    #[test]
    fn jsd_matches_direct_formula(
        p in prop::collection::vec(0.0f64..5.0, 6),
        q in prop::collection::vec(0.0f64..5.0, 6),
    ) {
        prop_assume!(p.iter().sum::<f64>() > 1e-6 && q.iter().sum::<f64>() > 1e-6);
        let norm = |v: &[f64]| { let s: f64 = v.iter().sum(); v.iter().map(|x| x / s).collect::<Vec<_>>() };
        let (pn, qn) = (norm(&p), norm(&q));
        let kl = |x: &[f64], m: &[f64]| x.iter().zip(m).filter(|(a, _)| **a > 0.0).map(|(a, b)| a * (a / b).ln()).sum::<f64>();
        let m: Vec<f64> = pn.iter().zip(&qn).map(|(a, b)| 0.5 * (a + b)).collect();
        let want = 0.5 * kl(&pn, &m) + 0.5 * kl(&qn, &m);
        let got = jsd(&p, &q).unwrap();
        prop_assert!((got - want).abs() < 1e-12);
        prop_assert!((0.0..=std::f64::consts::LN_2).contains(&got));
        prop_assert!((got - jsd(&q, &p).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn cov_mat_matches_double_loop(
        atoms in 3usize..7,
        seed in prop::collection::vec(-3.0f64..3.0, 3 * 7 * 8),
        ng in 1usize..4,
        nr in 1usize..4,
        tau in 0.1f64..2.0,
    ) {
        let mut it = seed.chunks(3);
        let mut conf = || (0..atoms).map(|_| { let c = it.next().unwrap(); [c[0], c[1], c[2]] }).collect::<Vec<_>>();
        let g: Vec<Vec<[f64; 3]>> = (0..ng).map(|_| conf()).collect();
        let r: Vec<Vec<[f64; 3]>> = (0..nr).map(|_| conf()).collect();
        let d: Vec<Vec<f64>> = g.iter().map(|x| r.iter().map(|y| aligned_rmsd(x, y)).collect()).collect();
        let mut cov = 0.0;
        let mut mat = 0.0;
        for row in &d {
            let best = row.iter().copied().fold(f64::INFINITY, f64::min);
            cov += (best <= tau) as u8 as f64 / ng as f64;
            mat += best / ng as f64;
        }
        let mut cov_ref = 0.0;
        let mut mat_ref = 0.0;
        for j in 0..nr {
            let best = d.iter().map(|row| row[j]).fold(f64::INFINITY, f64::min);
            cov_ref += (best <= tau) as u8 as f64 / nr as f64;
            mat_ref += best / nr as f64;
        }
        let got = cov_mat(&g, &r, tau).unwrap();
        prop_assert!((got.cov - cov).abs() < 1e-12);
        prop_assert!((got.mat - mat).abs() < 1e-12);
        prop_assert!((got.cov_ref - cov_ref).abs() < 1e-12);
        prop_assert!((got.mat_ref - mat_ref).abs() < 1e-12);
    }

    #[test]
    fn rmsd_ignores_rigid_motion(
        pts in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0), 3..10),
        angle in 0.0f64..std::f64::consts::TAU,
        sx in -5.0f64..5.0,
    ) {
        let p: Vec<[f64; 3]> = pts.iter().map(|&(x, y, z)| [x, y, z]).collect();
        let q = rotate(&p, angle, [sx, -sx, 0.5]);
        prop_assert!(aligned_rmsd(&p, &q) < 1e-6);
        let r = cov_mat(std::slice::from_ref(&q), std::slice::from_ref(&p), 0.01).unwrap();
        prop_assert_eq!(r.cov, 1.0);
    }
}
