use lattice_inverse::bvp::Potential;
use lattice_inverse::error::Error;
use lattice_inverse::io::GreenCache;
use lattice_inverse::scattering::{
    exterior_dirichlet, green_at, green_key, perturbed_resolvent_kernel, scattering_amplitude, FermiGrid, GreenKernel,
    GreenOptions, Interface, Side,
};
use lattice_inverse::{LatticeKind, VertexId};
use num_complex::Complex64;
use std::f64::consts::TAU;

/// Periodic sum on an `l × l` torus; converges exponentially when `z` is off the spectrum.
fn torus_resolvent(kind: LatticeKind, z: Complex64, a: VertexId, b: VertexId, l: usize) -> Complex64 {
    let subs = kind.sublattices() as usize;
    let rules: Vec<Vec<(u8, i32, i32)>> = (1..=subs as u8).map(|s| kind.edge_rules(s).unwrap()).collect();
    let mut total = Complex64::new(0.0, 0.0);
    for k1 in 0..l {
        for k2 in 0..l {
            let x = [TAU * k1 as f64 / l as f64, TAU * k2 as f64 / l as f64];
            let mut h = [[Complex64::new(0.0, 0.0); 2]; 2];
            for (i, list) in rules.iter().enumerate() {
                let w = -1.0 / list.len() as f64;
                for &(j, m1, m2) in list {
                    h[i][j as usize - 1] += Complex64::from_polar(w, -(m1 as f64 * x[0] + m2 as f64 * x[1]));
                }
            }
            let r = if subs == 1 {
                [[(h[0][0] - z).inv(), Complex64::new(0.0, 0.0)], [Complex64::new(0.0, 0.0); 2]]
            } else {
                let (p, q, s, t) = (h[0][0] - z, h[0][1], h[1][0], h[1][1] - z);
                let det = p * t - q * s;
                [[t / det, -q / det], [-s / det, p / det]]
            };
            let phase = -((a.n1 - b.n1) as f64 * x[0] + (a.n2 - b.n2) as f64 * x[1]);
            total += r[a.sub as usize - 1][b.sub as usize - 1] * Complex64::from_polar(1.0, phase);
        }
    }
    total / (l * l) as f64
}

#[test]
fn resolvent_off_the_real_axis_matches_a_torus_sum() {
    let z = Complex64::new(0.4, 0.7);
    for kind in [LatticeKind::Square, LatticeKind::Hexagonal] {
        let pairs = [
            (VertexId::new(1, 0, 0), VertexId::new(1, 0, 0)),
            (VertexId::new(1, 2, -1), VertexId::new(kind.sublattices(), 0, 1)),
            (VertexId::new(kind.sublattices(), -1, 3), VertexId::new(1, 1, 0)),
        ];
        let keys: Vec<_> = pairs.iter().map(|&(a, b)| green_key(a, b)).collect();
        let values = green_at(kind, z, &keys, 1e-12).unwrap();
        for (&(a, b), value) in pairs.iter().zip(values) {
            let oracle = torus_resolvent(kind, z, a, b, 96);
            assert!((value - oracle).norm() < 1e-9, "{kind:?} {a}->{b}: {value} vs {oracle}");
        }
    }
}

#[test]
fn limiting_resolvent_is_symmetric_with_positive_local_density() {
    for (kind, lambda) in [(LatticeKind::Hexagonal, 0.6), (LatticeKind::Square, 0.3)] {
        let a = VertexId::new(1, 0, 0);
        let b = VertexId::new(kind.sublattices(), 2, -1);
        let kernel = GreenKernel::compute(kind, lambda, &[(a, b), (b, a), (a, a)], GreenOptions::default()).unwrap();
        let (ab, ba, aa) = (kernel.get(a, b).unwrap(), kernel.get(b, a).unwrap(), kernel.get(a, a).unwrap());
        assert!((ab - ba).norm() < 1e-7, "{kind:?}: {ab} vs {ba}");
        assert!(aa.im > 0.0, "{kind:?}: local density {}", aa.im);
        assert!(kernel.residual <= kernel.options.tolerance);
    }
}

#[test]
fn energies_at_thresholds_or_outside_the_spectrum_are_refused() {
    let near = GreenKernel::new(LatticeKind::Hexagonal, 1.0 / 3.0 + 1e-3, GreenOptions::default());
    assert!(matches!(near, Err(Error::NearThreshold { .. })));
    assert!(GreenKernel::new(LatticeKind::Square, 1.5, GreenOptions::default()).is_err());
    assert!(GreenKernel::new(LatticeKind::Custom, 0.3, GreenOptions::default()).is_err());
    assert!(green_at(LatticeKind::Square, Complex64::new(0.3, 0.0), &[], 1e-10).is_err());
}

#[test]
fn single_site_resolvent_obeys_sherman_morrison() {
    let lambda = 0.6;
    let site = VertexId::new(1, 0, 0);
    let other = VertexId::new(2, 1, -1);
    let strength = 0.45;
    let potential = Potential::new([(site, strength)].into_iter().collect());
    let mut green = GreenKernel::new(LatticeKind::Hexagonal, lambda, GreenOptions::default()).unwrap();
    let rows = [site, other];
    let perturbed = perturbed_resolvent_kernel(&mut green, &potential, &rows, &rows, Side::Outgoing).unwrap();
    let g = |a, b| green.get(a, b).unwrap();
    let denominator = 1.0 + strength * g(site, site);
    for (i, &a) in rows.iter().enumerate() {
        for (j, &b) in rows.iter().enumerate() {
            let expect = g(a, b) - strength * g(a, site) * g(site, b) / denominator;
            assert!((perturbed[(i, j)] - expect).norm() < 1e-12);
        }
    }
    let outgoing = g(site, other);
    let free = perturbed_resolvent_kernel(&mut green, &Potential::zero(), &rows, &rows, Side::Incoming).unwrap();
    assert!((free[(0, 1)] - outgoing.conj()).norm() < 1e-14);
}

#[test]
fn exterior_dirichlet_reproduces_its_data() {
    let iface = Interface::hexagon(0, 0).unwrap();
    let mut green = GreenKernel::new(LatticeKind::Hexagonal, 0.6, GreenOptions::default()).unwrap();
    let f: Vec<Complex64> = (0..iface.sigma.len()).map(|k| Complex64::new(k as f64 - 2.0, 0.5)).collect();
    let u = exterior_dirichlet(&mut green, &iface.sigma, &f, &iface.sigma, Side::Outgoing).unwrap();
    for (a, b) in u.iter().zip(&f) {
        assert!((a - b).norm() < 1e-10);
    }
    assert!(exterior_dirichlet(&mut green, &iface.sigma, &f[1..], &iface.sigma, Side::Outgoing).is_err());
}

#[test]
fn free_scattering_matrix_is_the_identity() {
    let mut green = GreenKernel::new(LatticeKind::Hexagonal, 0.6, GreenOptions::default()).unwrap();
    let grid = FermiGrid::new(LatticeKind::Hexagonal, 0.6, 16).unwrap();
    let amplitude = scattering_amplitude(&mut green, &Potential::zero(), &grid).unwrap();
    assert!(amplitude.kernel.iter().all(|x| x.norm() == 0.0));
    assert!(amplitude.unitarity_defect() < 1e-12);
}

#[test]
fn green_cache_round_trips_through_json() {
    let a = VertexId::new(1, 0, 0);
    let b = VertexId::new(2, 0, 1);
    let kernel = GreenKernel::compute(LatticeKind::Hexagonal, 0.6, &[(a, b), (a, a)], GreenOptions::default()).unwrap();
    let cache = GreenCache::of(&kernel);
    let text = serde_json::to_string(&cache).unwrap();
    let back: GreenCache = serde_json::from_str(&text).unwrap();
    assert!(back.matches(LatticeKind::Hexagonal, 0.6, &GreenOptions::default()));
    let restored = back.restore(GreenOptions::default()).unwrap();
    assert_eq!(restored.get(a, b), kernel.get(a, b));
    assert_eq!(restored.entries().len(), 2);
    let stricter = GreenOptions { tolerance: 1e-9, ..GreenOptions::default() };
    assert!(back.restore(stricter).is_err());
}
