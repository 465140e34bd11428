//! Acceptance suite. Runs every criterion in order and prints one line per
//! criterion; exits nonzero when any fails.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use isolab::concentration::{calibrate_c_cal, decompose, mean_std, DecomposeParams, Decomposition, SetSequence};
use isolab::generators::{caps_family, caps_sharpness, random_corpus, CapDecay, CapsFamily, CapsSharpness, Generated};
use isolab::limits::{
    assemble_generalized_region, check_multipointed_convergence, check_piece_count_bound, detect_limit_manifold,
    detect_limits, profile_union_equality, LimitParams,
};
use isolab::manifold::{build_plane_with_caps, BoundaryMode, CapSpec, ConformalGrid};
use isolab::perimeter::{perimeter, IndicatorSet, PerimeterStencil};
use isolab::profile::{
    annealed_profile, brute_force_profile, lagrangian_minimizer, lower_convex_envelope, profile_continuity_report,
    refine_with_translated_unions, AnnealSchedule,
};
use isolab::scenario::{bundled, run_scenario, ScenarioConfig, BUNDLED};

type Verdict = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn torus(w: usize, h: usize) -> Arc<ConformalGrid> {
    Arc::new(ConformalGrid::flat(w, h, 1.0, BoundaryMode::Periodic).unwrap())
}

fn sweep_volumes(grid: &ConformalGrid) -> Vec<f64> {
    (0..=grid.cell_count()).map(|v| v as f64).collect()
}

// 1. Cut sweep and annealer against exhaustive enumeration on tiny tori.
fn oracle_equivalence() -> Verdict {
    let st = PerimeterStencil::cut4();
    let mut swept = 0;
    let mut annealed = 0;
    for (w, h) in [(4, 4), (3, 5)] {
        let grid = torus(w, h);
        let vols = sweep_volumes(&grid);
        let oracle = brute_force_profile(&grid, &vols, &st).map_err(err)?;
        let exact: BTreeMap<u64, f64> = oracle.values().into_iter().map(|(v, i)| (v as u64, i)).collect();

        // dyadic multipliers keep P - lambda V exact
        let lambdas: Vec<f64> = (0..=8 * 1024).map(|k| k as f64 / 1024.0).collect();
        let mut sweep_points = BTreeMap::new();
        for &lambda in &lambdas {
            let set = lagrangian_minimizer(&grid, lambda, &st).map_err(err)?;
            let (v, p) = (set.volume(), perimeter(&set, &st));
            let i_v = exact[&(v as u64)];
            ensure(p == i_v, || format!("{w}x{h}: cut point v={v} has P={p}, oracle {i_v}"))?;
            for (&u, &iu) in &exact {
                let lhs = p - lambda * v;
                let rhs = iu - lambda * u as f64;
                ensure(lhs <= rhs, || {
                    format!("{w}x{h}: cut point v={v} not on the envelope at lambda={lambda}")
                })?;
            }
            sweep_points.insert(v as u64, p);
        }
        let hull = lower_convex_envelope(&oracle.values());
        for (v, i) in hull {
            ensure(sweep_points.get(&(v as u64)) == Some(&i), || {
                format!("{w}x{h}: envelope vertex ({v}, {i}) missed by the sweep")
            })?;
        }
        swept += sweep_points.len();

        let inner: Vec<f64> = vols[1..vols.len() - 1].to_vec();
        let curve = annealed_profile(&grid, &inner, &st, &AnnealSchedule::default(), 0).map_err(err)?;
        for p in &curve.points {
            let want = exact[&(p.v as u64)];
            ensure(p.i_v == want, || {
                format!("{w}x{h}: annealed I({}) = {}, oracle {want}", p.v, p.i_v)
            })?;
            annealed += 1;
        }
    }
    Ok(format!(
        "{swept} envelope points exact, {annealed} annealed points exact"
    ))
}

// 2. Crofton perimeter and volume of digital disks against 2 pi r and pi r^2.
fn continuum_accuracy() -> Verdict {
    let st = PerimeterStencil::crofton16();
    let mut worst_p: f64 = 0.0;
    let mut worst_v: f64 = 0.0;
    for h in [1.0, 0.5] {
        let n = (2.0 * 25.0 + 10.0) as usize;
        let grid = Arc::new(ConformalGrid::flat(n, n, h, BoundaryMode::Open).unwrap());
        let c = n as f64 / 2.0;
        for k in 15..=25 {
            let r = k as f64 * h;
            let disk = IndicatorSet::digital_disk(&grid, (c, c), r);
            let ep = (perimeter(&disk, &st) - 2.0 * PI * r).abs() / (2.0 * PI * r);
            let ev = (disk.volume() - PI * r * r).abs() / (PI * r * r);
            worst_p = worst_p.max(ep);
            worst_v = worst_v.max(ev);
        }
    }
    ensure(worst_p <= 0.03, || format!("perimeter error {worst_p:.4} > 0.03"))?;
    ensure(worst_v <= 0.02, || format!("volume error {worst_v:.4} > 0.02"))?;
    Ok(format!(
        "max perimeter error {worst_p:.4}, max volume error {worst_v:.4}"
    ))
}

fn corpus() -> Vec<Generated> {
    random_corpus(60, 2024, &PerimeterStencil::crofton16()).unwrap()
}

/// Recomputes the partition cell by cell: traces pairwise disjoint and,
/// with the leftover, covering exactly the term.
fn partition_defect(seq: &SetSequence, dec: &Decomposition) -> f64 {
    let mut defect = 0.0;
    for (k, &j) in dec.subsequence.iter().enumerate() {
        let term = &seq.terms()[j];
        let grid = term.grid();
        for idx in 0..grid.cell_count() {
            let covers = dec.pieces.iter().filter(|p| p.trace[k].contains(idx)).count()
                + usize::from(dec.leftover[k].contains(idx));
            let want = usize::from(term.contains(idx));
            if covers != want {
                defect += grid.cell_phi(idx).powi(2) * grid.h().powi(2);
            }
        }
    }
    defect
}

// 3. Decomposition invariants on a randomized corpus.
fn decomposition_suite(corpus: &[Generated], decs: &[Decomposition]) -> Verdict {
    let (mut constant, mut pieces, mut dust) = (0, 0, 0);
    for (s, (g, dec)) in corpus.iter().zip(decs).enumerate() {
        let seq = &g.sequence;
        let defect = partition_defect(seq, dec);
        ensure(defect == 0.0, || format!("sequence {s}: partition defect {defect}"))?;
        if g.constant_volume {
            constant += 1;
            let gap = seq.volume_bound() - dec.v_bar;
            ensure(gap <= dec.stop_threshold, || {
                format!("sequence {s}: v - v_bar = {gap} > {}", dec.stop_threshold)
            })?;
        }
        let a_sum: f64 = dec.pieces.iter().map(|p| p.a_i).sum();
        let a = seq.perimeter_bound();
        ensure(a_sum <= (a + dec.slack) * (1.0 + 1e-12), || {
            format!("sequence {s}: sum A_i = {a_sum} > A + slack = {}", a + dec.slack)
        })?;
        for (i, w) in dec.pieces.windows(2).enumerate() {
            let allowed = w[0].v_i + w[0].tail_std + w[1].tail_std;
            ensure(w[1].v_i <= allowed, || {
                format!("sequence {s}: v_{} = {} exceeds v_{i} = {}", i + 1, w[1].v_i, w[0].v_i)
            })?;
        }
        pieces += dec.piece_count();
        dust += usize::from(s % 3 == 2);
    }
    ensure(corpus.len() >= 50, || "corpus too small".into())?;
    Ok(format!(
        "{} sequences ({dust} with dust, {constant} constant-volume), {pieces} pieces",
        corpus.len()
    ))
}

// 4. Calibrated non-evanescence floor on every extracted piece.
fn nonevanescence(corpus: &[Generated], decs: &[Decomposition]) -> Verdict {
    let st = PerimeterStencil::crofton16();
    let c_cal = calibrate_c_cal(corpus.iter().flat_map(|g| g.sequence.terms()), &st)
        .ok_or_else(|| "calibration found no nonempty set".to_string())?;
    ensure(c_cal > 0.0, || format!("c_cal = {c_cal}"))?;
    let mut audited = 0;
    for (s, dec) in decs.iter().enumerate() {
        for (i, p) in dec.pieces.iter().enumerate() {
            let v = p.residual_volume;
            let floor = c_cal * v * v / (p.residual_perimeter.powi(2) + 1.0);
            ensure(p.v_i >= floor, || {
                format!("sequence {s} piece {i}: v_i = {} < floor {floor}", p.v_i)
            })?;
            audited += 1;
        }
    }
    Ok(format!("c_cal = {c_cal:.4}, {audited} pieces above the floor"))
}

fn sharpness_run(p: &CapsSharpness) -> Result<(usize, f64, f64, Vec<f64>), String> {
    let g = caps_sharpness(p, 1.0, &PerimeterStencil::crofton16()).map_err(err)?;
    let params = DecomposeParams {
        working_radius: Some(10.0),
        ..DecomposeParams::default()
    };
    let dec = decompose(&g.sequence, &params).map_err(err)?;
    let v_star = g.cap_capacity.ok_or("no cap capacity")?;
    let vols = dec.pieces.iter().map(|p| p.v_i).collect();
    Ok((dec.piece_count(), g.sequence.volume_bound(), v_star, vols))
}

// 5. Piece count against floor(v / v*) + 1 on the cap sharpness family.
fn piece_count() -> Verdict {
    let base = CapsSharpness::default();
    let (n, v, v_star, vols) = sharpness_run(&base)?;
    let sharp = check_piece_count_bound(n, v, v_star, Some(&vols)).map_err(err)?;
    ensure(sharp.n == sharp.bound, || {
        format!("engineered case: N = {n}, bound {}", sharp.bound)
    })?;
    let mut cases = 0;
    for full in 0..=3 {
        for fraction in [0.25, 0.75] {
            let p = CapsSharpness {
                full,
                fraction,
                terms: 5,
                ..base
            };
            let (n, v, v_star, vols) = sharpness_run(&p)?;
            let r = check_piece_count_bound(n, v, v_star, Some(&vols)).map_err(err)?;
            ensure(r.passes, || {
                format!("full={full} fraction={fraction}: N = {n} > bound {}", r.bound)
            })?;
            cases += 1;
        }
    }
    Ok(format!(
        "engineered N = {n} = floor({v:.2}/{v_star:.2}) + 1; bound holds on {cases} cases"
    ))
}

fn caps_limits(p: &CapsFamily, tol: f64) -> Result<(Generated, isolab::limits::DetectedLimits), String> {
    let g = caps_family(p, 1.0, &PerimeterStencil::crofton16()).map_err(err)?;
    let params = DecomposeParams::default();
    let dec = decompose(&g.sequence, &params).map_err(err)?;
    let rw = params.working_radius_for(g.sequence.terms()[0].grid());
    let lp = LimitParams {
        tolerance: tol,
        ..LimitParams::default()
    };
    let detected = detect_limits(&g.sequence, &dec, rw, &lp).map_err(err)?;
    if let Some((pieces, e)) = detected.failures.first() {
        return Err(format!("pieces {pieces:?}: {e}"));
    }
    Ok((g, detected))
}

// 6. Identical caps give an exact one-cap chart; decaying caps give flat.
fn limit_detection() -> Verdict {
    let same = CapsFamily::default();
    let (_, detected) = caps_limits(&same, 1e-9)?;
    ensure(detected.limits.len() == 1, || {
        format!("{} limits, expected 1", detected.limits.len())
    })?;
    let lim = &detected.limits[0];
    ensure(lim.c0_residuals.iter().all(|&r| r == 0.0), || {
        format!("residuals {:?}", lim.c0_residuals)
    })?;
    let last = same.terms - 1;
    let track = *lim.track.last().unwrap();
    let cap = same.cap_center(last);
    let c = 64usize;
    let canon = build_plane_with_caps(
        2 * c,
        2 * c,
        1.0,
        BoundaryMode::Open,
        &CapSpec::single((c, c), same.amplitude, same.cap_radius),
    )
    .map_err(err)?;
    let center = ((c + track.0) - cap.0, (c + track.1) - cap.1);
    let window = canon.extract_window(center, lim.window_steps).map_err(err)?;
    ensure(window.phi() == lim.chart.phi() && window.id() == lim.chart.id(), || {
        "limit chart differs from the one-cap window".into()
    })?;

    let decay = CapsFamily {
        terms: 15,
        decay: CapDecay::Geometric,
        ..CapsFamily::default()
    };
    let (_, detected) = caps_limits(&decay, 1e-3)?;
    ensure(detected.limits.len() == 1, || {
        format!("{} decaying limits", detected.limits.len())
    })?;
    let lim = &detected.limits[0];
    let tail = lim.c0_residuals.last().copied().unwrap_or(0.0);
    let flat_dev = lim.chart.phi().iter().map(|f| (f - 1.0).abs()).fold(0.0, f64::max);
    ensure(tail <= 1e-3 && flat_dev <= 1e-3, || {
        format!("tail residual {tail}, chart deviation {flat_dev}")
    })?;

    // recentered on the cap vertices, consecutive harmonic caps differ by
    // exactly a / (j + 1) - a / (j + 2) at the bump peak
    let harmonic = CapsFamily {
        decay: CapDecay::Harmonic,
        ..CapsFamily::default()
    };
    let grids: Vec<Arc<ConformalGrid>> = (3..harmonic.terms)
        .map(|k| Arc::new(harmonic.grid(k, 1.0).unwrap()))
        .collect();
    let track: Vec<_> = (3..harmonic.terms).map(|k| harmonic.cap_center(k)).collect();
    let hl = detect_limit_manifold(&grids, &track, 6.0, 0.1).map_err(err)?;
    for (r, j) in hl.c0_residuals.iter().zip(3..) {
        let a = harmonic.amplitude;
        let want = a / (j + 1) as f64 - a / (j + 2) as f64;
        ensure((r - want).abs() <= 1e-12, || {
            format!("harmonic residual {r}, expected {want}")
        })?;
    }
    Ok(format!(
        "identical caps: residual 0, chart bit-equal; decaying: tail {tail:.2e}, flat within {flat_dev:.2e}"
    ))
}

// 7. Generalized region on the two main scenarios.
fn generalized_region() -> Verdict {
    let mut lines = Vec::new();
    for name in ["two-diverging-blocks", "caps-family"] {
        let config = ScenarioConfig::parse(bundled(name).unwrap()).map_err(err)?;
        let st = PerimeterStencil::from_kind(config.stencil);
        let g = match config.sequence.as_ref().unwrap() {
            isolab::scenario::SequenceSpec::DivergingBlocks(p) => isolab::generators::diverging_blocks(p, 1.0, &st),
            isolab::scenario::SequenceSpec::CapsFamily(p) => caps_family(p, 1.0, &st),
            _ => unreachable!(),
        }
        .map_err(err)?;
        let seq = &g.sequence;
        let dec = decompose(seq, &config.decompose).map_err(err)?;
        let rw = config.decompose.working_radius_for(seq.terms()[0].grid());
        let detected = detect_limits(seq, &dec, rw, &config.limits).map_err(err)?;
        let region = assemble_generalized_region(seq, &dec, &detected).map_err(err)?;
        let v_sum: f64 = dec.pieces.iter().map(|p| p.v_i).sum();
        ensure((region.total_volume - v_sum).abs() <= 1e-12 * v_sum, || {
            format!("{name}: region volume {} vs sum v_i {v_sum}", region.total_volume)
        })?;
        let a_sum: f64 = dec.pieces.iter().map(|p| p.a_i).sum();
        let a_tol: f64 = dec.pieces.iter().map(|p| mean_std(&p.perimeters).1).sum::<f64>() + 1e-12 * a_sum;
        ensure((region.total_perimeter - a_sum).abs() <= a_tol, || {
            format!("{name}: region perimeter {} vs sum A_i {a_sum}", region.total_perimeter)
        })?;
        let report = check_multipointed_convergence(seq, &dec, &region, 1e-9, 1e-9, 2).map_err(err)?;
        ensure(report.passes, || format!("{name}: convergence report fails"))?;
        let liminf = dec
            .subsequence
            .iter()
            .map(|&j| perimeter(&seq.terms()[j], &st))
            .fold(f64::INFINITY, f64::min);
        ensure(region.total_perimeter <= liminf + 1e-9, || {
            format!(
                "{name}: P(region) = {} > liminf {liminf} + 1e-9",
                region.total_perimeter
            )
        })?;
        lines.push(format!("{name}: {} components", region.components.len()));
    }
    Ok(lines.join("; "))
}

// 8. Adjacent jumps of profile curves; a synthetic jump must be flagged.
fn profile_continuity() -> Verdict {
    let grid = torus(4, 4);
    let oracle = brute_force_profile(&grid, &sweep_volumes(&grid), &PerimeterStencil::cut4()).map_err(err)?;
    let r = profile_continuity_report(&oracle.values(), 4.0).map_err(err)?;
    ensure(r.passes(), || format!("oracle max jump {}", r.max_jump))?;

    let grid = Arc::new(ConformalGrid::flat(64, 64, 1.0, BoundaryMode::Open).unwrap());
    let vols: Vec<f64> = (1..=48).map(f64::from).collect();
    let curve = annealed_profile(
        &grid,
        &vols,
        &PerimeterStencil::crofton16(),
        &AnnealSchedule::default(),
        1,
    )
    .map_err(err)?;
    let mut pts = vec![(0.0, 0.0)];
    pts.extend(curve.values());
    let a = profile_continuity_report(&pts, 4.0).map_err(err)?;
    ensure(a.passes(), || {
        format!("annealed max jump {} at {}", a.max_jump, a.max_jump_at)
    })?;

    let mut bad: Vec<(f64, f64)> = (0..20).map(|v| (v as f64, 2.0 * (PI * v as f64).sqrt())).collect();
    bad[10].1 += 12.0;
    let neg = profile_continuity_report(&bad, 4.0).map_err(err)?;
    ensure(!neg.passes(), || "synthetic jump not flagged".into())?;
    Ok(format!(
        "oracle max jump {:.3}, annealed max jump {:.3}, synthetic jump flagged",
        r.max_jump, a.max_jump
    ))
}

// 9. Base profile against the union with the limit chart.
fn union_profile() -> Verdict {
    let p = CapsFamily::default();
    let (_, detected) = caps_limits(&p, 1e-9)?;
    let chart = detected.limits[0].chart.clone();
    let base = Arc::new(p.grid(2, 1.0).map_err(err)?);
    let st = PerimeterStencil::crofton16();
    let n = 24;
    let mesh: Vec<f64> = (0..=n).map(f64::from).collect();
    let schedule = AnnealSchedule::default();
    let base_curve = annealed_profile(&base, &mesh, &st, &schedule, 3).map_err(err)?;
    let spacing = p.spacing as i64;
    let base_curve = refine_with_translated_unions(
        &base,
        &base_curve,
        &st,
        &[(spacing, 0), (2 * spacing, 0), (-spacing, 0), (-2 * spacing, 0)],
    )
    .map_err(err)?;
    let chart_curve = annealed_profile(&chart, &mesh, &st, &schedule, 3).map_err(err)?;
    let report = profile_union_equality(&base_curve, &[chart_curve], 1.0, n as usize, 0.06).map_err(err)?;
    let worst = report.points.iter().map(|p| p.relative_gap).fold(0.0, f64::max);
    ensure(report.passes, || format!("relative gap {worst:.4} > 0.06"))?;
    Ok(format!(
        "max relative gap {worst:.4} over {} mesh points",
        report.points.len()
    ))
}

// 10. Every bundled scenario twice, compared byte for byte on disk.
fn determinism() -> Verdict {
    let mut files = 0;
    for (name, text) in BUNDLED {
        let config = ScenarioConfig::parse(text).map_err(err)?;
        let dirs = [tempfile::tempdir().map_err(err)?, tempfile::tempdir().map_err(err)?];
        for d in &dirs {
            run_scenario(&config, None)
                .map_err(err)?
                .write_to(d.path())
                .map_err(err)?;
        }
        let a = read_tree(dirs[0].path());
        let b = read_tree(dirs[1].path());
        ensure(a == b, || format!("{name}: artifact trees differ"))?;
        files += a.len();
    }
    Ok(format!("{} scenarios, {files} files identical", BUNDLED.len()))
}

fn read_tree(root: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn main() {
    let total = Instant::now();
    let corpus = corpus();
    let params = DecomposeParams::default();
    let decs: Vec<Decomposition> = corpus
        .iter()
        .map(|g| decompose(&g.sequence, &params).expect("corpus decomposes"))
        .collect();
    let criteria: Vec<(&str, Box<dyn Fn() -> Verdict + '_>)> = vec![
        ("oracle equivalence", Box::new(oracle_equivalence)),
        ("continuum accuracy", Box::new(continuum_accuracy)),
        (
            "decomposition invariants",
            Box::new(|| decomposition_suite(&corpus, &decs)),
        ),
        ("non-evanescence audit", Box::new(|| nonevanescence(&corpus, &decs))),
        ("piece-count bound", Box::new(piece_count)),
        ("limit detection", Box::new(limit_detection)),
        ("generalized region", Box::new(generalized_region)),
        ("profile continuity", Box::new(profile_continuity)),
        ("union profile equality", Box::new(union_profile)),
        ("determinism", Box::new(determinism)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let verdict = run();
        let secs = start.elapsed().as_secs_f64();
        match verdict {
            Ok(detail) => println!("criterion {:>2} PASS {name} ({secs:.1} s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name} ({secs:.1} s): {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1} s",
        criteria.len() - failed,
        total.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
