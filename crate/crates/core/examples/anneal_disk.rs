//! Annealed profile on an open flat grid, compared with the round disk.

use std::f64::consts::PI;
use std::sync::Arc;

use isolab::manifold::{BoundaryMode, ConformalGrid};
use isolab::perimeter::PerimeterStencil;
use isolab::profile::{annealed_profile, profile_continuity_report, AnnealSchedule};

fn main() -> isolab::Result<()> {
    let grid = Arc::new(ConformalGrid::flat(48, 48, 1.0, BoundaryMode::Open)?);
    let volumes: Vec<f64> = (1..=12).map(|k| (k * 10) as f64).collect();
    let curve = annealed_profile(
        &grid,
        &volumes,
        &PerimeterStencil::crofton16(),
        &AnnealSchedule::default(),
        42,
    )?;
    for p in &curve.points {
        println!(
            "v = {:5.1}  I = {:7.3}  disk = {:7.3}",
            p.v,
            p.i_v,
            2.0 * (PI * p.v).sqrt()
        );
    }
    let report = profile_continuity_report(&curve.values(), 40.0)?;
    println!("max jump {:.3} over steps of 10", report.max_jump);
    Ok(())
}
