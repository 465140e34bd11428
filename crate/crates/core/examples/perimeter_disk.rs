//! Discrete perimeter of digital disks under each stencil against 2 pi r.

use std::f64::consts::PI;
use std::sync::Arc;

use isolab::manifold::{BoundaryMode, ConformalGrid};
use isolab::perimeter::{perimeter, IndicatorSet, PerimeterStencil};

fn main() -> isolab::Result<()> {
    let grid = Arc::new(ConformalGrid::flat(80, 80, 1.0, BoundaryMode::Open)?);
    let stencils = [
        PerimeterStencil::cut4(),
        PerimeterStencil::cut8(),
        PerimeterStencil::crofton16(),
    ];
    println!("r      2pi r    cut4     cut8     crofton16");
    for r in [5.0, 10.0, 20.0, 30.0] {
        let disk = IndicatorSet::digital_disk(&grid, (40.0, 40.0), r);
        let p: Vec<String> = stencils
            .iter()
            .map(|s| format!("{:8.3}", perimeter(&disk, s)))
            .collect();
        println!("{r:<6} {:8.3} {}", 2.0 * PI * r, p.join(" "));
    }
    Ok(())
}
