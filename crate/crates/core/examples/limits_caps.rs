//! A disk riding drifting caps: limit chart, generalized region, convergence.

use isolab::concentration::{decompose, DecomposeParams};
use isolab::generators::{caps_family, CapsFamily};
use isolab::limits::{assemble_generalized_region, check_multipointed_convergence, detect_limits, LimitParams};
use isolab::perimeter::PerimeterStencil;

fn main() -> isolab::Result<()> {
    let g = caps_family(&CapsFamily::default(), 1.0, &PerimeterStencil::crofton16())?;
    let seq = &g.sequence;
    let dec = decompose(seq, &DecomposeParams::default())?;
    let detected = detect_limits(seq, &dec, 4.0, &LimitParams::default())?;
    println!("assignments {:?}", detected.assignments);
    for l in &detected.limits {
        println!(
            "limit of pieces {:?}: {}x{} chart, residuals {:?}",
            l.pieces,
            l.chart.width(),
            l.chart.height(),
            l.c0_residuals
        );
    }
    let region = assemble_generalized_region(seq, &dec, &detected)?;
    println!(
        "region: V = {:.4}, P = {:.4}",
        region.total_volume, region.total_perimeter
    );
    let report = check_multipointed_convergence(seq, &dec, &region, 1e-9, 1e-9, 2)?;
    println!("converges: {}", report.passes);
    Ok(())
}
