use std::f64::consts::PI;
use std::sync::Arc;

use isolab::concentration::{decompose, DecomposeParams};
use isolab::generators::{diverging_blocks, static_block, DivergingBlocks, StaticBlock};
use isolab::limits::{assemble_generalized_region, detect_limits, LimitParams, ManifoldRef, PieceAssignment};
use isolab::manifold::{build_plane_with_caps, BoundaryMode, CapSpec, ConformalGrid};
use isolab::perimeter::{perimeter, IndicatorSet, PerimeterStencil};
use isolab::profile::{annealed_profile_point, brute_force_profile, lagrangian_cut_profile, AnnealSchedule};
use isolab::scenario::{run_scenario, ScenarioConfig, BUNDLED};

#[test]
fn static_block_is_one_base_piece() {
    let st = PerimeterStencil::crofton16();
    let g = static_block(&StaticBlock::default(), 1.0, &st).unwrap();
    let dec = decompose(&g.sequence, &DecomposeParams::default()).unwrap();
    assert_eq!(dec.piece_count(), 1);
    assert_eq!(dec.pieces[0].v_i, 9.0);
    assert_eq!(dec.leftover_volume, 0.0);
    let detected = detect_limits(&g.sequence, &dec, 4.0, &LimitParams::default()).unwrap();
    assert_eq!(detected.assignments, vec![PieceAssignment::Base]);
}

#[test]
fn diverging_blocks_split_into_two_limits() {
    let st = PerimeterStencil::crofton16();
    let g = diverging_blocks(&DivergingBlocks::default(), 1.0, &st).unwrap();
    let dec = decompose(&g.sequence, &DecomposeParams::default()).unwrap();
    assert_eq!(dec.piece_count(), 2);
    for p in &dec.pieces {
        assert_eq!(p.v_i, 9.0);
        assert_eq!(p.tail_std, 0.0);
    }
    let detected = detect_limits(&g.sequence, &dec, 4.0, &LimitParams::default()).unwrap();
    assert_eq!(detected.limits.len(), 2);
    let region = assemble_generalized_region(&g.sequence, &dec, &detected).unwrap();
    assert!(region
        .components
        .iter()
        .all(|c| matches!(c.manifold, ManifoldRef::Limit(_))));
    assert_eq!(region.total_volume, 18.0);
    // a 3x3 block on a flat chart, far from its walls
    let block = perimeter(&region.components[0].set, &st);
    assert!((region.total_perimeter - 2.0 * block).abs() < 1e-12);
}

#[test]
fn torus_profile_small_volumes() {
    // cut4 on a flat 3x3 torus: one cell has 4 faces, a full row wraps and
    // keeps only its top and bottom faces
    let g = Arc::new(ConformalGrid::flat(3, 3, 1.0, BoundaryMode::Periodic).unwrap());
    let st = PerimeterStencil::cut4();
    let curve = brute_force_profile(&g, &[0.0, 1.0, 2.0, 3.0, 9.0], &st).unwrap();
    let vals: Vec<f64> = curve.values().into_iter().map(|p| p.1).collect();
    assert_eq!(vals, vec![0.0, 4.0, 6.0, 6.0, 0.0]);
}

#[test]
fn cut_sweep_endpoints() {
    let g = Arc::new(ConformalGrid::flat(5, 4, 1.0, BoundaryMode::Periodic).unwrap());
    let st = PerimeterStencil::cut4();
    let curve = lagrangian_cut_profile(&g, &[0.0, 100.0], &st).unwrap();
    let vals = curve.values();
    assert_eq!(vals.first(), Some(&(0.0, 0.0)));
    assert_eq!(vals.last(), Some(&(20.0, 0.0)));
}

#[test]
fn bundled_scenarios_parse_and_round_trip() {
    for (name, text) in BUNDLED {
        let c = ScenarioConfig::parse(text).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(&c.name, name);
        let again = ScenarioConfig::parse(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(again, c);
    }
}

#[test]
fn validation_names_the_field() {
    let text = BUNDLED[0].1.replace("\"h\": 1.0", "\"h\": 0.0");
    let e = ScenarioConfig::parse(&text).unwrap_err();
    assert_eq!(e.field.as_deref(), Some("manifold.h"));
    assert_eq!(e.line, Some(5));
    let text = BUNDLED[0]
        .1
        .replace("\"stencil\": \"crofton16\"", "\"stencil\": \"hex\"");
    let e = ScenarioConfig::parse(&text).unwrap_err();
    assert_eq!(e.line, Some(6));
}

#[test]
fn sharpness_scenario_hits_the_bound() {
    let (_, text) = BUNDLED.iter().find(|(n, _)| *n == "sharpness-N").unwrap();
    let c = ScenarioConfig::parse(text).unwrap();
    let out = run_scenario(&c, None).unwrap();
    let bound = out.checks.iter().find(|k| k.name == "piece-count-bound").unwrap();
    assert!(bound.passed);
    assert_eq!(bound.value, bound.limit);
}

#[test]
fn annealed_disk_area_is_near_the_round_disk() {
    let g = Arc::new(ConformalGrid::flat(64, 64, 1.0, BoundaryMode::Open).unwrap());
    let r = 10.0;
    let p = annealed_profile_point(
        &g,
        PI * r * r,
        &PerimeterStencil::crofton16(),
        &AnnealSchedule::default(),
        9,
    )
    .unwrap();
    assert!((p.i_v - 2.0 * PI * r).abs() <= 0.06 * 2.0 * PI * r, "{}", p.i_v);
    assert!(p.achieved);
}

#[test]
fn a_cap_beats_the_flat_grid_at_its_own_volume() {
    let st = PerimeterStencil::crofton16();
    let cap =
        Arc::new(build_plane_with_caps(48, 48, 1.0, BoundaryMode::Open, &CapSpec::single((24, 24), 1.0, 8.0)).unwrap());
    let flat = Arc::new(ConformalGrid::flat(48, 48, 1.0, BoundaryMode::Open).unwrap());
    // cells whose centers lie inside the cap support
    let disk = IndicatorSet::from_indices(
        &cap,
        (0..cap.cell_count()).filter(|&i| {
            let (x, y) = cap.cell_at(i);
            (x as f64 + 0.5 - 24.0).hypot(y as f64 + 0.5 - 24.0) < 8.0
        }),
    )
    .unwrap();
    let v = disk.volume();
    let schedule = AnnealSchedule::default();
    let on_cap = annealed_profile_point(&cap, v, &st, &schedule, 1).unwrap();
    let on_flat = annealed_profile_point(&flat, v, &st, &schedule, 1).unwrap();
    assert!(on_cap.i_v < on_flat.i_v, "{} vs {}", on_cap.i_v, on_flat.i_v);
    let inside = on_cap.achiever.unwrap();
    let captured = inside.intersection(&disk).unwrap().volume();
    assert!(captured > 0.5 * v);
}
