//! Scenario configuration and the pipelines behind the command line.
//!
//! A scenario is one JSON document naming a base manifold, an optional
//! sequence generator, an optional profile request, engine parameters and
//! tolerances. Running it produces an in-memory artifact tree (path to
//! bytes) which the caller writes out; the same config and seed always
//! produce the same bytes.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::concentration::{
    audit_partition, calibrate_c_cal, decompose, nonevanescence_lower_bound, DecomposeParams, Decomposition,
};
use crate::error::Error;
use crate::generators::{
    caps_family, caps_sharpness, diverging_blocks, random_clusters, static_block, CapsFamily, CapsSharpness,
    DivergingBlocks, Generated, RandomClusters, StaticBlock,
};
use crate::limits::{
    assemble_generalized_region, check_multipointed_convergence, check_piece_count_bound, detect_limits,
    volume_continuity_gap, LimitParams, ManifoldRef,
};
use crate::manifold::{build_plane_with_caps, verify_bounded_geometry, BoundaryMode, Cap, CapSpec, ConformalGrid};
use crate::perimeter::{perimeter, PerimeterStencil, StencilKind};
use crate::profile::{
    annealed_profile, brute_force_profile, lagrangian_cut_profile, profile_continuity_report, AnnealSchedule,
    ProfileCurve,
};

/// Bundled scenarios: name and JSON text.
pub const BUNDLED: &[(&str, &str)] = &[
    ("static-block", include_str!("../scenarios/static-block.json")),
    (
        "two-diverging-blocks",
        include_str!("../scenarios/two-diverging-blocks.json"),
    ),
    ("caps-family", include_str!("../scenarios/caps-family.json")),
    ("profile-torus", include_str!("../scenarios/profile-torus.json")),
    ("sharpness-N", include_str!("../scenarios/sharpness-N.json")),
    ("random-clusters", include_str!("../scenarios/random-clusters.json")),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    Profile,
    Decompose,
    VerifyGeometry,
    VerifyLimits,
    All,
}

impl Pipeline {
    fn includes(self, other: Pipeline) -> bool {
        self == Pipeline::All || self == other
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldSpec {
    pub width: usize,
    pub height: usize,
    pub h: f64,
    #[serde(default = "open_mode")]
    pub boundary: BoundaryMode,
    #[serde(default)]
    pub caps: Vec<Cap>,
}

fn open_mode() -> BoundaryMode {
    BoundaryMode::Open
}

impl ManifoldSpec {
    pub fn build(&self) -> crate::Result<ConformalGrid> {
        build_plane_with_caps(
            self.width,
            self.height,
            self.h,
            self.boundary,
            &CapSpec::new(self.caps.clone()),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SequenceSpec {
    StaticBlock(StaticBlock),
    DivergingBlocks(DivergingBlocks),
    CapsFamily(CapsFamily),
    CapsSharpness(CapsSharpness),
    RandomClusters(RandomClusters),
}

impl SequenceSpec {
    fn stochastic(&self) -> bool {
        matches!(self, SequenceSpec::RandomClusters(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileSolver {
    Oracle,
    Lagrangian,
    Anneal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSpec {
    pub method: ProfileSolver,
    /// Explicit target volumes; otherwise `0, step, .., max_volume`.
    #[serde(default)]
    pub volumes: Option<Vec<f64>>,
    #[serde(default)]
    pub volume_step: Option<f64>,
    #[serde(default)]
    pub max_volume: Option<f64>,
    /// Lagrange multipliers for the cut solver; defaults to 201 evenly
    /// spaced values up to the point where the full grid wins.
    #[serde(default)]
    pub lambdas: Option<Vec<f64>>,
    #[serde(default)]
    pub schedule: AnnealSchedule,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// L1 residual allowed at the tail of a convergence report.
    pub l1: f64,
    /// C0 metric residual allowed at the tail of a convergence report.
    pub c0: f64,
    /// Slack in `P(region) <= liminf P(Omega_k) + lsc`.
    pub lsc: f64,
    /// Profile continuity: allowed jump per cell-volume step, in units of
    /// `h * max phi`.
    pub continuity: f64,
    /// Lower curvature bound `-k` for the geometry check.
    pub curvature: f64,
    /// Lower bound on unit-ball volumes for the geometry check.
    pub unit_ball: f64,
    /// Relative slack on additivity and monotonicity audits.
    pub audit: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            l1: 1e-9,
            c0: 1e-9,
            lsc: 1e-9,
            continuity: 4.0,
            curvature: 10.0,
            unit_ball: 0.5,
            audit: 1e-9,
        }
    }
}

impl Tolerances {
    /// Sets one tolerance by name (as used by `--tol NAME=VAL`).
    pub fn set(&mut self, name: &str, value: f64) -> Result<(), ConfigError> {
        if !(value > 0.0 && value.is_finite()) {
            return Err(ConfigError::field(
                format!("tolerances.{name}"),
                format!("must be > 0, got {value}"),
            ));
        }
        let slot = match name {
            "l1" => &mut self.l1,
            "c0" => &mut self.c0,
            "lsc" => &mut self.lsc,
            "continuity" => &mut self.continuity,
            "curvature" => &mut self.curvature,
            "unit_ball" => &mut self.unit_ball,
            "audit" => &mut self.audit,
            _ => {
                return Err(ConfigError::field(
                    format!("tolerances.{name}"),
                    "unknown tolerance".into(),
                ))
            }
        };
        *slot = value;
        Ok(())
    }

    fn entries(&self) -> [(&'static str, f64); 7] {
        [
            ("l1", self.l1),
            ("c0", self.c0),
            ("lsc", self.lsc),
            ("continuity", self.continuity),
            ("curvature", self.curvature),
            ("unit_ball", self.unit_ball),
            ("audit", self.audit),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "all_pipelines")]
    pub pipeline: Pipeline,
    pub manifold: ManifoldSpec,
    #[serde(default = "default_stencil")]
    pub stencil: StencilKind,
    #[serde(default)]
    pub sequence: Option<SequenceSpec>,
    #[serde(default)]
    pub profile: Option<ProfileSpec>,
    #[serde(default)]
    pub decompose: DecomposeParams,
    #[serde(default)]
    pub limits: LimitParams,
    /// Volume `v*` for the piece-count bound; defaults to the generator's
    /// cap capacity when it has one.
    #[serde(default)]
    pub v_star: Option<f64>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output: Option<String>,
}

fn all_pipelines() -> Pipeline {
    Pipeline::All
}

fn default_stencil() -> StencilKind {
    StencilKind::Crofton16
}

/// Invalid configuration, anchored to a line of the source when known.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub field: Option<String>,
    pub message: String,
}

impl ConfigError {
    fn field(field: String, message: String) -> Self {
        Self {
            line: None,
            field: Some(field),
            message,
        }
    }

    /// Attaches the line of the field's key in `text`, if it can be found.
    fn anchor(mut self, text: &str) -> Self {
        if self.line.is_none() {
            if let Some(field) = &self.field {
                let key = format!("\"{}\"", field.rsplit('.').next().unwrap_or(field));
                self.line = text.lines().position(|l| l.contains(&key)).map(|i| i + 1);
            }
        }
        self
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(line) = self.line {
            write!(f, "line {line}: ")?;
        }
        if let Some(field) = &self.field {
            write!(f, "field `{field}`: ")?;
        }
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for ConfigError {}

fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::field(
            field.into(),
            format!("must be a finite number > 0, got {v}"),
        ))
    }
}

impl ScenarioConfig {
    /// Parses and validates; every error carries a line number when one
    /// can be determined.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::parse_with(text, &Overrides::default())
    }

    /// Parses, applies command-line overrides, then validates.
    pub fn parse_with(text: &str, overrides: &Overrides) -> Result<Self, ConfigError> {
        let mut config: ScenarioConfig = serde_json::from_str(text).map_err(|e| ConfigError {
            line: Some(e.line()),
            field: None,
            message: e.to_string(),
        })?;
        if let Some(seed) = overrides.seed {
            config.seed = Some(seed);
        }
        for (name, value) in &overrides.tolerances {
            config.tolerances.set(name, *value)?;
        }
        config.validate().map_err(|e| e.anchor(text))?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        positive("manifold.h", self.manifold.h)?;
        if self.manifold.width < 2 || self.manifold.height < 2 {
            return Err(ConfigError::field(
                "manifold.width".into(),
                "grid needs at least 2x2 cells".into(),
            ));
        }
        for (name, v) in self.tolerances.entries() {
            positive(&format!("tolerances.{name}"), v)?;
        }
        if let Some(r) = self.decompose.working_radius {
            positive("decompose.working_radius", r)?;
        }
        if let Some(v) = self.v_star {
            positive("v_star", v)?;
        }
        if let Some(p) = &self.profile {
            if let Some(s) = p.volume_step {
                positive("profile.volume_step", s)?;
            }
            if p.volumes.is_none() && (p.volume_step.is_none() || p.max_volume.is_none()) {
                return Err(ConfigError::field(
                    "profile.volumes".into(),
                    "give either `volumes` or both `volume_step` and `max_volume`".into(),
                ));
            }
        }
        let stochastic = self.sequence.as_ref().is_some_and(SequenceSpec::stochastic)
            || self.profile.as_ref().is_some_and(|p| p.method == ProfileSolver::Anneal);
        if stochastic && self.seed.is_none() {
            return Err(ConfigError::field(
                "seed".into(),
                "required by a stochastic pipeline".into(),
            ));
        }
        self.check_pipeline(self.pipeline)
    }

    /// Fails when `pipeline` needs a section this config lacks.
    pub fn check_pipeline(&self, pipeline: Pipeline) -> Result<(), ConfigError> {
        let needs_sequence = matches!(pipeline, Pipeline::Decompose | Pipeline::VerifyLimits);
        if needs_sequence && self.sequence.is_none() {
            return Err(ConfigError::field(
                "sequence".into(),
                "required by this pipeline".into(),
            ));
        }
        if pipeline == Pipeline::Profile && self.profile.is_none() {
            return Err(ConfigError::field("profile".into(), "required by this pipeline".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub tolerances: Vec<(String, f64)>,
}

/// Parses `NAME=VAL` as given to `--tol`.
pub fn parse_tolerance(arg: &str) -> Result<(String, f64), ConfigError> {
    let (name, value) = arg
        .split_once('=')
        .ok_or_else(|| ConfigError::field("tolerances".into(), format!("expected NAME=VAL, got `{arg}`")))?;
    let value: f64 = value
        .trim()
        .parse()
        .map_err(|_| ConfigError::field(format!("tolerances.{name}"), format!("not a number: `{value}`")))?;
    Ok((name.trim().to_string(), value))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CatalogEntry {
    pub name: String,
    pub description: String,
    /// `None` for bundled scenarios.
    pub path: Option<std::path::PathBuf>,
}

/// A config file that failed to parse or validate.
pub type Rejected = (std::path::PathBuf, ConfigError);

/// Bundled scenarios followed by every valid `*.json` in `dir`, sorted by
/// file name. Invalid files are returned separately.
pub fn catalog(dir: Option<&std::path::Path>) -> std::io::Result<(Vec<CatalogEntry>, Vec<Rejected>)> {
    let mut entries: Vec<CatalogEntry> = BUNDLED
        .iter()
        .map(|(name, text)| CatalogEntry {
            name: name.to_string(),
            description: ScenarioConfig::parse(text).map(|c| c.description).unwrap_or_default(),
            path: None,
        })
        .collect();
    let mut rejected = Vec::new();
    if let Some(dir) = dir {
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for path in paths {
            let text = std::fs::read_to_string(&path)?;
            match ScenarioConfig::parse(&text) {
                Ok(c) => entries.push(CatalogEntry {
                    name: c.name,
                    description: c.description,
                    path: Some(path),
                }),
                Err(e) => rejected.push((path, e)),
            }
        }
    }
    Ok((entries, rejected))
}

/// Looks a scenario up among the bundled ones.
pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

/// One named pass/fail line of the summary, with the report it comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub limit: f64,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub checks: Vec<Check>,
    /// Relative path to file contents.
    pub artifacts: BTreeMap<String, Vec<u8>>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    /// Writes every artifact below `dir`.
    pub fn write_to(&self, dir: &std::path::Path) -> std::io::Result<()> {
        for (path, bytes) in &self.artifacts {
            let full = dir.join(path);
            if let Some(parent) = full.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(full, bytes)?;
        }
        Ok(())
    }
}

struct Runner<'a> {
    config: &'a ScenarioConfig,
    stencil: PerimeterStencil,
    checks: Vec<Check>,
    artifacts: BTreeMap<String, Vec<u8>>,
}

fn pretty(value: &impl Serialize) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

impl Runner<'_> {
    fn check(&mut self, name: &str, passed: bool, value: f64, limit: f64, source: &str) {
        self.checks.push(Check {
            name: name.into(),
            passed,
            value: value + 0.0,
            limit: limit + 0.0,
            source: source.into(),
        });
    }

    fn put(&mut self, path: &str, bytes: Vec<u8>) {
        self.artifacts.insert(path.into(), bytes);
    }

    fn generate(&self) -> crate::Result<Option<Generated>> {
        let h = self.config.manifold.h;
        let st = &self.stencil;
        let seed = self.config.seed.unwrap_or(0);
        self.config
            .sequence
            .as_ref()
            .map(|spec| match spec {
                SequenceSpec::StaticBlock(p) => {
                    let p = StaticBlock {
                        width: self.config.manifold.width,
                        height: self.config.manifold.height,
                        ..*p
                    };
                    static_block(&p, h, st)
                }
                SequenceSpec::DivergingBlocks(p) => diverging_blocks(p, h, st),
                SequenceSpec::CapsFamily(p) => caps_family(p, h, st),
                SequenceSpec::CapsSharpness(p) => caps_sharpness(p, h, st),
                SequenceSpec::RandomClusters(p) => random_clusters(p, h, st, seed),
            })
            .transpose()
    }

    fn profile(&mut self, grid: &Arc<ConformalGrid>, spec: &ProfileSpec) -> crate::Result<()> {
        let volumes = match &spec.volumes {
            Some(v) => v.clone(),
            None => {
                let step = spec.volume_step.expect("validated");
                let max = spec.max_volume.expect("validated");
                let n = (max / step + 1e-9).floor() as usize;
                (0..=n).map(|m| m as f64 * step).collect()
            }
        };
        let seed = self.config.seed.unwrap_or(0);
        let curve: ProfileCurve = match spec.method {
            ProfileSolver::Oracle => brute_force_profile(grid, &volumes, &self.stencil)?,
            ProfileSolver::Lagrangian => {
                let lambdas = spec.lambdas.clone().unwrap_or_else(|| {
                    let top = 2.0 * self.stencil.max_cell_perimeter(grid) / grid.min_cell_volume();
                    (0..=200).map(|i| top * i as f64 / 200.0).collect()
                });
                lagrangian_cut_profile(grid, &lambdas, &self.stencil)?
            }
            ProfileSolver::Anneal => {
                let reachable: Vec<f64> = volumes.iter().copied().filter(|&v| v < grid.total_volume()).collect();
                annealed_profile(grid, &reachable, &self.stencil, &spec.schedule, seed)?
            }
        };
        self.put("profile.csv", curve.to_csv().into_bytes());
        let finite: Vec<(f64, f64)> = curve.values().into_iter().filter(|p| p.1.is_finite()).collect();
        if finite.len() >= 3 {
            let max_phi = grid.phi().iter().copied().fold(0.0, f64::max);
            let max_step = finite.windows(2).map(|w| w[1].0 - w[0].0).fold(0.0, f64::max);
            let steps = (max_step / grid.min_cell_volume()).ceil().max(1.0);
            let tol = self.config.tolerances.continuity * grid.h() * max_phi * steps;
            let report = profile_continuity_report(&finite, tol)?;
            self.check(
                "profile-continuity",
                report.passes(),
                report.max_jump,
                tol,
                "profile_continuity.json",
            );
            self.put("profile_continuity.json", pretty(&report));
        }
        Ok(())
    }

    fn geometry(&mut self, base: &ConformalGrid, generated: Option<&Generated>) {
        let tol = self.config.tolerances;
        let mut reports = vec![(
            "base".to_string(),
            verify_bounded_geometry(base, -tol.curvature, tol.unit_ball),
        )];
        if let Some(g) = generated {
            let seq = &g.sequence;
            for (term, &label) in seq.terms().iter().zip(seq.labels()) {
                let r = verify_bounded_geometry(term.grid(), -tol.curvature, tol.unit_ball);
                reports.push((format!("term_{label}"), r));
            }
        }
        let worst_k = reports
            .iter()
            .map(|(_, r)| r.min_curvature)
            .fold(f64::INFINITY, f64::min);
        let worst_v = reports
            .iter()
            .map(|(_, r)| r.min_unit_ball_volume)
            .fold(f64::INFINITY, f64::min);
        let ok_k = reports.iter().all(|(_, r)| r.passes.curvature);
        let ok_v = reports.iter().all(|(_, r)| r.passes.ball);
        self.check("curvature-lower-bound", ok_k, worst_k, -tol.curvature, "geometry.json");
        self.check("unit-ball-volume", ok_v, worst_v, tol.unit_ball, "geometry.json");
        let doc: BTreeMap<String, _> = reports.into_iter().collect();
        self.put("geometry.json", pretty(&doc));
    }

    fn decompose(&mut self, g: &Generated) -> crate::Result<Decomposition> {
        let seq = &g.sequence;
        let params = self.config.decompose;
        let mut dec = decompose(seq, &params)?;
        let retained: Vec<_> = dec.subsequence.iter().map(|&j| &seq.terms()[j]).collect();
        let c_cal = calibrate_c_cal(retained.iter().copied(), seq.stencil());
        dec.c_cal = c_cal;
        let audit = self.config.tolerances.audit;

        let defect = audit_partition(seq, &dec)?;
        let scale = seq.volume_bound().max(1.0);
        self.check(
            "partition-exact",
            defect <= audit * scale,
            defect,
            audit * scale,
            "decomposition.json",
        );
        self.check(
            "decomposition-complete",
            !dec.incomplete,
            dec.leftover_volume,
            dec.stop_threshold,
            "decomposition.json",
        );
        let perimeter_gap = dec.a_bar - seq.perimeter_bound() - dec.slack;
        self.check(
            "perimeter-budget",
            perimeter_gap <= audit * seq.perimeter_bound().max(1.0),
            perimeter_gap,
            0.0,
            "decomposition.json",
        );
        let v_gap = seq.volume_bound() - dec.v_bar;
        if g.constant_volume {
            self.check(
                "volume-capture",
                v_gap <= dec.stop_threshold,
                v_gap,
                dec.stop_threshold,
                "decomposition.json",
            );
        }
        let monotone_excess = dec
            .pieces
            .windows(2)
            .map(|w| w[1].v_i - w[0].v_i - w[0].tail_std - w[1].tail_std)
            .fold(0.0, f64::max);
        self.check(
            "monotone-capture",
            monotone_excess <= audit * scale,
            monotone_excess,
            0.0,
            "decomposition.json",
        );
        if let Some(c) = c_cal {
            let worst = dec
                .pieces
                .iter()
                .map(|p| nonevanescence_lower_bound(p.residual_volume, p.residual_perimeter, c) - p.v_i)
                .fold(f64::NEG_INFINITY, f64::max);
            self.check("nonevanescence", worst <= 0.0, worst, 0.0, "decomposition.json");
        }

        self.put("decomposition.json", pretty(&dec.report(seq)));
        for (i, piece) in dec.pieces.iter().enumerate() {
            let last = piece.trace.len() - 1;
            self.put(&format!("masks/piece_{i}.pgm"), piece.trace[last].to_pgm().into_bytes());
        }
        for (k, &j) in dec.subsequence.iter().enumerate() {
            self.put(&format!("sets/term_{j}.json"), seq.terms()[j].to_json().into_bytes());
            self.put(&format!("sets/term_{j}.pgm"), seq.terms()[j].to_pgm().into_bytes());
            self.put(
                &format!("masks/leftover_{j}.pgm"),
                dec.leftover[k].to_pgm().into_bytes(),
            );
        }
        Ok(dec)
    }

    fn limits(&mut self, g: &Generated, dec: &Decomposition) -> crate::Result<()> {
        let seq = &g.sequence;
        let tol = self.config.tolerances;
        let rw = self.config.decompose.working_radius_for(seq.terms()[0].grid());
        let detected = detect_limits(seq, dec, rw, &self.config.limits)?;
        let failures: Vec<_> = detected
            .failures
            .iter()
            .map(|(pieces, e)| json!({"pieces": pieces, "error": e.to_string()}))
            .collect();
        let region = match assemble_generalized_region(seq, dec, &detected) {
            Ok(r) => r,
            Err(e @ Error::OrphanPiece(_)) => {
                self.check(
                    "limit-assignment",
                    false,
                    failures.len() as f64,
                    0.0,
                    "convergence.json",
                );
                self.put(
                    "convergence.json",
                    pretty(&json!({"error": e.to_string(), "failures": failures})),
                );
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        let report = check_multipointed_convergence(seq, dec, &region, tol.l1, tol.c0, 2)?;
        let worst = report
            .tracks
            .iter()
            .flat_map(|t| t.l1_residuals.iter().chain(&t.c0_residuals))
            .copied()
            .fold(0.0, f64::max);
        self.check(
            "multipointed-convergence",
            report.passes,
            worst,
            tol.l1.max(tol.c0),
            "convergence.json",
        );

        let perimeters: Vec<f64> = dec
            .subsequence
            .iter()
            .map(|&j| perimeter(&seq.terms()[j], seq.stencil()))
            .collect();
        let liminf = perimeters.iter().copied().fold(f64::INFINITY, f64::min);
        let lsc_gap = region.total_perimeter - liminf;
        self.check(
            "lower-semicontinuity",
            lsc_gap <= tol.lsc,
            lsc_gap,
            tol.lsc,
            "bounds.json",
        );
        let vol_gap = volume_continuity_gap(seq, dec, &region);
        let vol_tol = dec.pieces.iter().map(|p| p.tail_std).sum::<f64>() + dec.leftover_volume + tol.audit;
        self.check("volume-continuity", vol_gap <= vol_tol, vol_gap, vol_tol, "bounds.json");
        let v_sum: f64 = dec.pieces.iter().map(|p| p.v_i).sum();
        let v_tol = dec.pieces.iter().map(|p| p.tail_std).sum::<f64>() + tol.audit * v_sum.max(1.0);
        let v_add = (region.total_volume - v_sum).abs();
        self.check("volume-additivity", v_add <= v_tol, v_add, v_tol, "convergence.json");
        let a_sum: f64 = dec.pieces.iter().map(|p| p.a_i).sum();
        let a_std: f64 = dec
            .pieces
            .iter()
            .map(|p| crate::concentration::mean_std(&p.perimeters).1)
            .sum();
        let a_tol = a_std + tol.audit * a_sum.max(1.0);
        let a_add = (region.total_perimeter - a_sum).abs();
        self.check("perimeter-additivity", a_add <= a_tol, a_add, a_tol, "convergence.json");

        let v_star = self.config.v_star.or(g.cap_capacity);
        let mut bounds = json!({
            "liminf_perimeter": liminf,
            "region_perimeter": region.total_perimeter,
            "lsc_gap": lsc_gap,
            "volume_continuity_gap": vol_gap,
            "volume_bound": seq.volume_bound(),
            "perimeter_bound": seq.perimeter_bound(),
        });
        if let Some(v_star) = v_star {
            let vols: Vec<f64> = dec.pieces.iter().map(|p| p.v_i).collect();
            let r = check_piece_count_bound(dec.piece_count(), seq.volume_bound(), v_star, Some(&vols))?;
            self.check("piece-count-bound", r.passes, r.n as f64, r.bound as f64, "bounds.json");
            bounds["piece_count"] = serde_json::to_value(&r)?;
            bounds["v_star_source"] = json!(if self.config.v_star.is_some() {
                "config"
            } else {
                "measured cap capacity"
            });
        }
        self.put("bounds.json", pretty(&bounds));

        let components: Vec<_> = region
            .components
            .iter()
            .map(|c| {
                json!({
                    "manifold": c.manifold,
                    "pieces": c.pieces,
                    "volume": c.set.volume(),
                    "perimeter": perimeter(&c.set, seq.stencil()),
                    "grid_id": c.set.grid_id().to_string(),
                })
            })
            .collect();
        let limits: Vec<_> = region
            .limits
            .iter()
            .map(|l| {
                json!({
                    "pieces": l.pieces,
                    "window_steps": l.window_steps,
                    "c0_residuals": l.c0_residuals,
                    "positions": l.positions,
                    "tolerance": l.tolerance,
                    "chart_id": l.chart.id().to_string(),
                })
            })
            .collect();
        self.put(
            "convergence.json",
            pretty(&json!({
                "report": report,
                "region": {
                    "components": components,
                    "total_volume": region.total_volume,
                    "total_perimeter": region.total_perimeter,
                },
                "limits": limits,
                "track_kinds": detected.kinds,
                "failures": failures,
            })),
        );
        for (i, c) in region.components.iter().enumerate() {
            let tag = match c.manifold {
                ManifoldRef::Base => "base".to_string(),
                ManifoldRef::Limit(l) => format!("limit_{l}"),
            };
            self.put(&format!("masks/component_{i}_{tag}.pgm"), c.set.to_pgm().into_bytes());
        }
        for (i, l) in region.limits.iter().enumerate() {
            self.put(&format!("charts/limit_{i}.json"), l.chart.to_json().into_bytes());
        }
        Ok(())
    }
}

/// Runs `pipeline` (or the config's own) and collects checks and artifacts.
/// Engine errors (as opposed to failed checks) are returned as `Err`.
pub fn run_scenario(config: &ScenarioConfig, pipeline: Option<Pipeline>) -> crate::Result<Outcome> {
    let pipeline = pipeline.unwrap_or(config.pipeline);
    let mut runner = Runner {
        config,
        stencil: PerimeterStencil::from_kind(config.stencil),
        checks: Vec::new(),
        artifacts: BTreeMap::new(),
    };
    let base = Arc::new(config.manifold.build()?);
    runner.put("grid.json", base.to_json().into_bytes());
    let generated = runner.generate()?;

    if pipeline.includes(Pipeline::Profile) {
        if let Some(spec) = &config.profile {
            runner.profile(&base, spec)?;
        }
    }
    if pipeline.includes(Pipeline::VerifyGeometry) {
        runner.geometry(&base, generated.as_ref());
    }
    let wants_dec = pipeline.includes(Pipeline::Decompose) || pipeline.includes(Pipeline::VerifyLimits);
    if let (true, Some(g)) = (wants_dec, generated.as_ref()) {
        let dec = runner.decompose(g)?;
        if pipeline.includes(Pipeline::VerifyLimits) {
            runner.limits(g, &dec)?;
        }
        runner.check(
            "piece-count",
            true,
            dec.piece_count() as f64,
            config.decompose.piece_cap as f64,
            "decomposition.json",
        );
    }

    let summary = json!({
        "scenario": config.name,
        "seed": config.seed,
        "pipeline": pipeline,
        "passed": runner.checks.iter().all(|c| c.passed),
        "checks": runner.checks,
    });
    runner.put("summary.json", pretty(&summary));
    Ok(Outcome {
        checks: runner.checks,
        artifacts: runner.artifacts,
    })
}
