//! Exact profile of a 4x4 torus by enumeration, next to the cut sweep.

use std::sync::Arc;

use isolab::manifold::{BoundaryMode, ConformalGrid};
use isolab::perimeter::PerimeterStencil;
use isolab::profile::{brute_force_profile, lagrangian_cut_profile, lower_convex_envelope};

fn main() -> isolab::Result<()> {
    let grid = Arc::new(ConformalGrid::flat(4, 4, 1.0, BoundaryMode::Periodic)?);
    let st = PerimeterStencil::cut4();
    let volumes: Vec<f64> = (0..=16).map(f64::from).collect();
    let exact = brute_force_profile(&grid, &volumes, &st)?;
    print!("{}", exact.to_csv());
    let lambdas: Vec<f64> = (0..=64).map(|k| k as f64 / 8.0).collect();
    let sweep = lagrangian_cut_profile(&grid, &lambdas, &st)?;
    println!("cut sweep: {:?}", sweep.values());
    println!("envelope:  {:?}", lower_convex_envelope(&exact.values()));
    Ok(())
}
