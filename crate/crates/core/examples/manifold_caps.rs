//! Builds a plane with two caps and prints curvature, distances and balls.

use isolab::manifold::{build_plane_with_caps, verify_bounded_geometry, BoundaryMode, Cap, CapSpec};

fn main() -> isolab::Result<()> {
    let caps = CapSpec::new(vec![
        Cap {
            center: (16, 16),
            amplitude: 0.5,
            radius: 4.0,
        },
        Cap {
            center: (40, 16),
            amplitude: 1.0,
            radius: 6.0,
        },
    ]);
    let grid = build_plane_with_caps(56, 32, 1.0, BoundaryMode::Open, &caps)?;
    for v in [(16, 16), (40, 16), (28, 16)] {
        let k = grid.gauss_curvature(v)?;
        println!("K{v:?} = {:.4}", k.value);
    }
    println!("d((2,16), (54,16)) = {:.3}", grid.geodesic_distance((2, 16), (54, 16))?);
    for r in [2.0, 4.0, 8.0] {
        let ball = grid.metric_ball((40, 16), r)?;
        println!("|B((40,16), {r})| = {} cells", ball.len());
    }
    let report = verify_bounded_geometry(&grid, -10.0, 0.5);
    println!(
        "min K = {:.4}, min unit ball = {:.4}",
        report.min_curvature, report.min_unit_ball_volume
    );
    Ok(())
}
