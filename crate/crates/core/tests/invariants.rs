use std::sync::Arc;

use isolab::manifold::{BoundaryMode, ConformalGrid};
use isolab::perimeter::{l1_distance, perimeter, IndicatorSet, PerimeterStencil};
use isolab::profile::{envelope_value, lower_convex_envelope};
use proptest::prelude::*;

const W: usize = 7;
const H: usize = 6;

fn grid_from(phi: &[f64], mode: BoundaryMode) -> Arc<ConformalGrid> {
    let g = ConformalGrid::from_fn(W, H, 0.5, mode, |x, y| phi[(y % H) * W + (x % W)]).unwrap();
    Arc::new(g)
}

fn phis() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.5f64..2.0, W * H)
}

fn masks() -> impl Strategy<Value = Vec<bool>> {
    prop::collection::vec(any::<bool>(), W * H)
}

fn modes() -> impl Strategy<Value = BoundaryMode> {
    prop_oneof![Just(BoundaryMode::Open), Just(BoundaryMode::Periodic)]
}

fn stencils() -> impl Strategy<Value = PerimeterStencil> {
    prop_oneof![
        Just(PerimeterStencil::cut4()),
        Just(PerimeterStencil::cut8()),
        Just(PerimeterStencil::crofton16()),
    ]
}

fn cell() -> impl Strategy<Value = (usize, usize)> {
    (0..W, 0..H)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn geodesic_distance_is_a_metric(phi in phis(), mode in modes(), p in cell(), q in cell(), r in cell()) {
        let g = grid_from(&phi, mode);
        let d = |a, b| g.geodesic_distance(a, b).unwrap();
        prop_assert_eq!(d(p, p), 0.0);
        prop_assert!((d(p, q) - d(q, p)).abs() <= 1e-12 * (1.0 + d(p, q)));
        prop_assert!(d(p, r) <= d(p, q) + d(q, r) + 1e-9);
        if p != q {
            prop_assert!(d(p, q) > 0.0);
        }
    }

    #[test]
    fn metric_balls_grow_with_radius(phi in phis(), mode in modes(), p in cell(), r1 in 0.0f64..3.0, dr in 0.0f64..3.0) {
        let g = grid_from(&phi, mode);
        let small = g.metric_ball(p, r1).unwrap();
        let large = g.metric_ball(p, r1 + dr).unwrap();
        prop_assert!(small.iter().all(|c| large.contains(c)));
        prop_assert!(small.contains(&g.index(p)));
    }

    #[test]
    fn volume_is_additive(phi in phis(), mode in modes(), a in masks(), b in masks()) {
        let g = grid_from(&phi, mode);
        let a = IndicatorSet::new(&g, a).unwrap();
        let b = IndicatorSet::new(&g, b).unwrap();
        let lhs = a.union(&b).unwrap().volume() + a.intersection(&b).unwrap().volume();
        let rhs = a.volume() + b.volume();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs));
        let sym = l1_distance(&a, &b).unwrap();
        let diff = a.difference(&b).unwrap().volume() + b.difference(&a).unwrap().volume();
        prop_assert!((sym - diff).abs() <= 1e-9 * (1.0 + diff));
    }

    #[test]
    fn perimeter_is_submodular(phi in phis(), mode in modes(), st in stencils(), a in masks(), b in masks()) {
        let g = grid_from(&phi, mode);
        let a = IndicatorSet::new(&g, a).unwrap();
        let b = IndicatorSet::new(&g, b).unwrap();
        let lhs = perimeter(&a.union(&b).unwrap(), &st) + perimeter(&a.intersection(&b).unwrap(), &st);
        let rhs = perimeter(&a, &st) + perimeter(&b, &st);
        prop_assert!(lhs <= rhs + 1e-9 * (1.0 + rhs));
    }

    #[test]
    fn periodic_perimeter_is_complement_symmetric(phi in phis(), st in stencils(), a in masks()) {
        let g = grid_from(&phi, BoundaryMode::Periodic);
        let a = IndicatorSet::new(&g, a).unwrap();
        let p = perimeter(&a, &st);
        let q = perimeter(&a.complement(), &st);
        prop_assert!((p - q).abs() <= 1e-9 * (1.0 + p));
    }

    #[test]
    fn open_perimeter_counts_walls(phi in phis(), st in stencils()) {
        let g = grid_from(&phi, BoundaryMode::Open);
        prop_assert_eq!(perimeter(&IndicatorSet::empty(&g), &st), 0.0);
        prop_assert!(perimeter(&IndicatorSet::full(&g), &st) > 0.0);
        let t = grid_from(&phi, BoundaryMode::Periodic);
        prop_assert_eq!(perimeter(&IndicatorSet::full(&t), &st), 0.0);
    }

    #[test]
    fn sets_round_trip_through_json(phi in phis(), mode in modes(), a in masks()) {
        let g = grid_from(&phi, mode);
        let a = IndicatorSet::new(&g, a).unwrap();
        let back = IndicatorSet::from_json(&g, &a.to_json()).unwrap();
        prop_assert_eq!(back.mask(), a.mask());
        let g2 = ConformalGrid::from_json(&g.to_json()).unwrap();
        prop_assert_eq!(g2.id(), g.id());
        prop_assert_eq!(g2.phi(), g.phi());
    }

    #[test]
    fn convex_envelope_lies_below_points(pts in prop::collection::vec((0u32..40, 0.0f64..50.0), 2..30)) {
        let pts: Vec<(f64, f64)> = pts.into_iter().map(|(v, i)| (v as f64, i)).collect();
        let hull = lower_convex_envelope(&pts);
        for &(v, i) in &pts {
            let e = envelope_value(&hull, v).unwrap();
            prop_assert!(e <= i + 1e-9);
        }
        for w in hull.windows(3) {
            let s1 = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
            let s2 = (w[2].1 - w[1].1) / (w[2].0 - w[1].0);
            prop_assert!(s1 <= s2 + 1e-9);
        }
    }
}

#[test]
fn block_perimeter_matches_face_count() {
    // cut4 on a flat grid counts unit faces: a w x h block has 2 (w + h) of them
    let g = Arc::new(ConformalGrid::flat(20, 20, 0.25, BoundaryMode::Open).unwrap());
    let st = PerimeterStencil::cut4();
    for (w, h) in [(1, 1), (3, 2), (5, 7)] {
        let b = IndicatorSet::block(&g, (4, 4), w, h).unwrap();
        let want = 2.0 * (w + h) as f64 * 0.25;
        assert!((perimeter(&b, &st) - want).abs() < 1e-12);
        assert!((b.volume() - (w * h) as f64 * 0.0625).abs() < 1e-12);
    }
}

#[test]
fn torus_band_perimeter_is_two_rows() {
    let g = Arc::new(ConformalGrid::flat(6, 5, 1.0, BoundaryMode::Periodic).unwrap());
    let band = IndicatorSet::from_cells(&g, (0..6).flat_map(|x| [(x, 1), (x, 2)])).unwrap();
    assert_eq!(perimeter(&band, &PerimeterStencil::cut4()), 12.0);
}
