//! Concentration decomposition of two blocks drifting apart.

use isolab::concentration::{decompose, DecomposeParams};
use isolab::generators::{diverging_blocks, DivergingBlocks};
use isolab::perimeter::PerimeterStencil;

fn main() -> isolab::Result<()> {
    let g = diverging_blocks(&DivergingBlocks::default(), 1.0, &PerimeterStencil::crofton16())?;
    let dec = decompose(&g.sequence, &DecomposeParams::default())?;
    println!("retained indices {:?}", dec.subsequence);
    for (i, p) in dec.pieces.iter().enumerate() {
        println!("piece {i}: v = {}, A = {:.3}, centers {:?}", p.v_i, p.a_i, p.centers);
    }
    println!(
        "v_bar = {}, A_bar = {:.3}, slack = {:.3}",
        dec.v_bar, dec.a_bar, dec.slack
    );
    let report = dec.report(&g.sequence);
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    Ok(())
}
