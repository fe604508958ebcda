//! JSON scenarios: a family, a grid and an ordered list of checks, run into a report.
//!
//! Member indices in configs and reports are 1-based; complex numbers are
//! `[re, im]` pairs. Mollifier radii are given in grid cells.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analytic::{AnalyticFamily, ComplexPolynomial, Rect, C64};
use crate::curves::{boundary_graph, restrict_curve, BoundaryGraph, TraceParams};
use crate::error::FamilyError;
use crate::field::{classify_grid, half_plane_labeling, sector_swap_labeling, GridWindow, PAField, RegionLabeling};
use crate::measure::{
    atom_bound, flux_from_dbar, mollified_dbar, mollified_laplacian, positivity_of, reconstruction_residual,
    sample_test_points, subharmonic_verdict, BoundaryMeasure, FieldSamples, Mollifier,
};
use crate::point::genericity_report;
use crate::reach::{
    descent_reachable, limit_coverage_test, monotonicity_along, random_descent_path, smoothed_indicator,
};

/// Scenarios shipped with the binary: `(name, text)`.
pub const BUNDLED: &[(&str, &str)] = &[
    ("diagonal_pair", include_str!("../scenarios/diagonal_pair.json")),
    ("cusp_triple", include_str!("../scenarios/cusp_triple.json")),
    ("quarter_plane", include_str!("../scenarios/quarter_plane.json")),
];

pub fn bundled(name: &str) -> Option<&'static str> {
    let name = name.strip_suffix(".json").unwrap_or(name);
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

fn default_epsilon() -> f64 {
    6.0
}

fn default_fit_degree() -> usize {
    4
}

fn default_true() -> bool {
    true
}

fn default_one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    /// Coefficients of each `A_i`, ascending degree.
    pub members: Vec<Vec<C64>>,
    #[serde(default)]
    pub base_point: C64,
    pub window: Rect,
    /// Cells along the window width.
    pub grid: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum LabelingSpec {
    /// Argmax of the potentials.
    #[default]
    Max,
    /// Argmax with `removed` excluded above the base point.
    SectorSwap { removed: usize },
    /// Two members split by a line; `normal` points into `inside`.
    HalfPlane {
        through: C64,
        normal: C64,
        inside: usize,
        outside: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum SequenceSpec {
    Points(Vec<C64>),
    /// `z_n = p + (from - p) / n` for `n = 1..=count`.
    Harmonic {
        from: C64,
        count: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Command {
    AnalyzePoint {
        point: C64,
        #[serde(default)]
        active: Option<Vec<usize>>,
        #[serde(default = "default_true")]
        closure_evidence: bool,
        /// Expected flag values, e.g. `{"thm15_ii": false}`.
        #[serde(default)]
        expect: Option<BTreeMap<String, bool>>,
    },
    Classify {
        #[serde(default)]
        output: Option<String>,
    },
    TraceBoundary {
        #[serde(default)]
        output: Option<String>,
        /// Each curve is written to `<prefix><k>.csv`.
        #[serde(default)]
        curve_prefix: Option<String>,
    },
    VerifyPositivity {
        #[serde(default)]
        labeling: LabelingSpec,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
        #[serde(default)]
        output: Option<String>,
        #[serde(default)]
        expect: Option<bool>,
    },
    VerifySubharmonic {
        #[serde(default)]
        labeling: LabelingSpec,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
        #[serde(default)]
        output: Option<String>,
        #[serde(default)]
        expect: Option<bool>,
    },
    FluxCheck {
        #[serde(default = "default_epsilon")]
        epsilon: f64,
        /// Tube half-width in cells; defaults to `epsilon + 2`.
        #[serde(default)]
        band: Option<f64>,
        #[serde(default)]
        clip: Option<Rect>,
        /// Curve portions closer than this to a corner are left out; defaults to four tube widths.
        #[serde(default)]
        exclude_radius: Option<f64>,
        #[serde(default)]
        tolerance: Option<f64>,
    },
    ReconstructCauchy {
        #[serde(default)]
        center: Option<C64>,
        #[serde(default)]
        radius: Option<f64>,
        #[serde(default)]
        points: Option<usize>,
        #[serde(default = "default_fit_degree")]
        fit_degree: usize,
        /// Test points keep this distance from the support.
        #[serde(default)]
        exclusion: Option<f64>,
        /// Allowed residual relative to the largest `|Phi|` at the test points.
        #[serde(default)]
        tolerance: Option<f64>,
    },
    Reachability {
        source: C64,
        #[serde(default = "default_one")]
        baseline: usize,
        #[serde(default)]
        output: Option<String>,
    },
    Coverage {
        p: C64,
        target: Rect,
        sequence: SequenceSpec,
        #[serde(default = "default_one")]
        baseline: usize,
        /// Record the outcome without a verdict.
        #[serde(default)]
        informational: bool,
    },
    Counterexample {
        #[serde(default = "default_one")]
        removed: usize,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
        #[serde(default)]
        output: Option<String>,
    },
    Monotonicity {
        #[serde(default = "default_one")]
        baseline: usize,
        #[serde(default)]
        labeling: LabelingSpec,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
        #[serde(default)]
        paths: Option<usize>,
        #[serde(default)]
        steps: Option<usize>,
        #[serde(default)]
        expect: Option<bool>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::AnalyzePoint { .. } => "analyze-point",
            Self::Classify { .. } => "classify",
            Self::TraceBoundary { .. } => "trace-boundary",
            Self::VerifyPositivity { .. } => "verify-positivity",
            Self::VerifySubharmonic { .. } => "verify-subharmonic",
            Self::FluxCheck { .. } => "flux-check",
            Self::ReconstructCauchy { .. } => "reconstruct-cauchy",
            Self::Reachability { .. } => "reachability",
            Self::Coverage { .. } => "coverage",
            Self::Counterexample { .. } => "counterexample",
            Self::Monotonicity { .. } => "monotonicity",
        }
    }

    fn outputs(&self) -> Vec<(&'static str, &str)> {
        let mut out = Vec::new();
        match self {
            Self::Classify { output }
            | Self::VerifyPositivity { output, .. }
            | Self::VerifySubharmonic { output, .. }
            | Self::Reachability { output, .. }
            | Self::Counterexample { output, .. } => {
                if let Some(o) = output {
                    out.push(("output", o.as_str()));
                }
            }
            Self::TraceBoundary { output, curve_prefix } => {
                if let Some(o) = output {
                    out.push(("output", o.as_str()));
                }
                if let Some(p) = curve_prefix {
                    out.push(("curve_prefix", p.as_str()));
                }
            }
            _ => {}
        }
        out
    }

    /// 1-based member indices with their field names.
    fn member_refs(&self) -> Vec<(String, usize)> {
        let labeling_refs = |l: &LabelingSpec| match l {
            LabelingSpec::Max => vec![],
            LabelingSpec::SectorSwap { removed } => vec![("labeling/sector-swap/removed".to_string(), *removed)],
            LabelingSpec::HalfPlane { inside, outside, .. } => vec![
                ("labeling/half-plane/inside".to_string(), *inside),
                ("labeling/half-plane/outside".to_string(), *outside),
            ],
        };
        match self {
            Self::AnalyzePoint { active: Some(a), .. } => {
                a.iter().enumerate().map(|(k, &i)| (format!("active/{k}"), i)).collect()
            }
            Self::VerifyPositivity { labeling, .. } | Self::VerifySubharmonic { labeling, .. } => {
                labeling_refs(labeling)
            }
            Self::Reachability { baseline, .. } | Self::Coverage { baseline, .. } => {
                vec![("baseline".into(), *baseline)]
            }
            Self::Counterexample { removed, .. } => vec![("removed".into(), *removed)],
            Self::Monotonicity { baseline, labeling, .. } => {
                let mut v = labeling_refs(labeling);
                v.push(("baseline".into(), *baseline));
                v
            }
            _ => vec![],
        }
    }

    fn epsilon(&self) -> Option<f64> {
        match self {
            Self::VerifyPositivity { epsilon, .. }
            | Self::VerifySubharmonic { epsilon, .. }
            | Self::FluxCheck { epsilon, .. }
            | Self::Counterexample { epsilon, .. }
            | Self::Monotonicity { epsilon, .. } => Some(*epsilon),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub description: Option<String>,
    pub family: FamilySpec,
    #[serde(default)]
    pub tie_tolerance: f64,
    /// Seed of the randomized checks.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub commands: Vec<Command>,
}

impl Scenario {
    pub fn build_family(&self) -> Result<AnalyticFamily, FamilyError> {
        let members = self
            .family
            .members
            .iter()
            .map(|c| ComplexPolynomial::new(c.clone()))
            .collect();
        AnalyticFamily::new(members, self.family.base_point, self.family.window)
    }

    pub fn grid(&self) -> Result<GridWindow, crate::error::FieldError> {
        GridWindow::over(self.family.window, self.family.grid)
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum ConfigError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{pointer}: {message}")]
    Invalid { pointer: String, message: String },
}

fn invalid(pointer: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        pointer: pointer.into(),
        message: message.into(),
    }
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            Segment::Enum { variant } => out.push_str(&format!("/{variant}")),
            Segment::Unknown => {}
        }
    }
    out
}

/// Parses a scenario, fills defaults and checks it against the family.
pub fn validate_config(raw: &str) -> Result<Scenario, ConfigError> {
    let value: Value = serde_json::from_str(raw).map_err(|e| ConfigError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let scenario: Scenario = serde_path_to_error::deserialize(value).map_err(|e| {
        let pointer = json_pointer(e.path());
        invalid(
            if pointer.is_empty() { "/".into() } else { pointer },
            e.inner().to_string(),
        )
    })?;
    check_semantics(&scenario)?;
    Ok(scenario)
}

fn check_semantics(s: &Scenario) -> Result<(), ConfigError> {
    let r = s.family.members.len();
    s.build_family().map_err(|e| match e {
        FamilyError::TooFewMembers(_) => invalid("/family/members", "a family needs r >= 2 members"),
        FamilyError::TooManyMembers(_) => invalid("/family/members", e.to_string()),
        FamilyError::DuplicateMembers(i, j) => invalid(
            format!("/family/members/{j}"),
            format!("members {} and {} are the same polynomial", i + 1, j + 1),
        ),
        FamilyError::NonFinite(i) => invalid(format!("/family/members/{i}"), e.to_string()),
        FamilyError::EmptyWindow => invalid("/family/window", e.to_string()),
        FamilyError::BaseOutsideWindow => invalid("/family/base_point", e.to_string()),
        FamilyError::IndexOutOfRange { .. } => invalid("/family", e.to_string()),
    })?;
    let grid = s.grid().map_err(|e| invalid("/family/grid", e.to_string()))?;
    if !(s.tie_tolerance >= 0.0) {
        return Err(invalid("/tie_tolerance", "must be nonnegative"));
    }
    let mut seen: HashMap<&str, String> = HashMap::new();
    for (k, cmd) in s.commands.iter().enumerate() {
        let base = format!("/commands/{k}");
        for (field, i) in cmd.member_refs() {
            if i == 0 || i > r {
                return Err(invalid(
                    format!("{base}/{field}"),
                    format!("member {i} is not in 1..={r}"),
                ));
            }
        }
        if let Some(e) = cmd.epsilon() {
            if !(e >= 3.0) {
                return Err(invalid(
                    format!("{base}/epsilon"),
                    "mollifier radius must be at least 3 cells",
                ));
            }
        }
        for (field, path) in cmd.outputs() {
            let here = format!("{base}/{field}");
            if let Some(prev) = seen.insert(path, here.clone()) {
                return Err(invalid(here, format!("output path {path:?} already used at {prev}")));
            }
        }
        match cmd {
            Command::Reachability { source, .. } if grid.cell_of(*source).is_none() => {
                return Err(invalid(format!("{base}/source"), "source lies outside the grid"));
            }
            Command::Coverage { target, sequence, .. } => {
                if !target.is_valid() {
                    return Err(invalid(format!("{base}/target"), "empty target rectangle"));
                }
                let empty = match sequence {
                    SequenceSpec::Points(p) => p.is_empty(),
                    SequenceSpec::Harmonic { count, .. } => *count == 0,
                };
                if empty {
                    return Err(invalid(format!("{base}/sequence"), "sequence is empty"));
                }
            }
            _ => {}
        }
        if let Command::VerifyPositivity {
            labeling: LabelingSpec::HalfPlane { normal, .. },
            ..
        }
        | Command::VerifySubharmonic {
            labeling: LabelingSpec::HalfPlane { normal, .. },
            ..
        }
        | Command::Monotonicity {
            labeling: LabelingSpec::HalfPlane { normal, .. },
            ..
        } = cmd
        {
            if !(normal.norm() > 0.0) {
                return Err(invalid(
                    format!("{base}/labeling/half-plane/normal"),
                    "normal must be nonzero",
                ));
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Error,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CommandReport {
    /// 1-based position in the scenario.
    pub index: usize,
    pub command: &'static str,
    pub status: Status,
    pub verdict: Option<bool>,
    pub result: Value,
    pub files: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub config_sha256: String,
    pub seed: u64,
    pub grid: GridWindow,
    pub h: f64,
    pub tie_tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Timings {
    pub total_ms: f64,
    pub commands_ms: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub provenance: Provenance,
    pub commands: Vec<CommandReport>,
    pub timings: Timings,
}

impl Report {
    /// 0 when every command succeeded with no false verdict, 1 on a false verdict, 3 on an error.
    pub fn exit_code(&self) -> i32 {
        if self.commands.iter().any(|c| c.status == Status::Error) {
            3
        } else if self.commands.iter().any(|c| c.verdict == Some(false)) {
            1
        } else {
            0
        }
    }

    /// The report without the timing block, for comparing runs.
    pub fn deterministic_json(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("report serializes");
        v.as_object_mut().unwrap().remove("timings");
        v
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Directory for CSV/JSON artifacts; nothing is written when absent.
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
}

pub fn config_hash(raw: &str) -> String {
    Sha256::digest(raw.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

struct Outcome {
    verdict: Option<bool>,
    result: Value,
    files: Vec<String>,
}

struct Context<'a> {
    family: AnalyticFamily,
    grid: GridWindow,
    tie_tolerance: f64,
    seed: u64,
    out_dir: Option<&'a Path>,
    max_labeling: Option<RegionLabeling>,
    graph: Option<Result<BoundaryGraph, String>>,
}

type CmdResult = Result<Outcome, String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn one_based(v: &[usize]) -> Vec<usize> {
    v.iter().map(|i| i + 1).collect()
}

impl Context<'_> {
    fn write(
        &self,
        name: &Option<String>,
        files: &mut Vec<String>,
        f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    ) -> Result<(), String> {
        let Some(name) = name else { return Ok(()) };
        files.push(name.clone());
        let Some(dir) = self.out_dir else { return Ok(()) };
        let mut buf = Vec::new();
        f(&mut buf).map_err(err)?;
        let path = dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| format!("{}: {e}", parent.display()))?;
        }
        fs::write(&path, buf).map_err(|e| format!("{}: {e}", path.display()))
    }

    fn max_labeling(&mut self) -> Result<RegionLabeling, String> {
        if self.max_labeling.is_none() {
            self.max_labeling = Some(classify_grid(&self.family, self.grid, self.tie_tolerance).map_err(err)?);
        }
        Ok(self.max_labeling.clone().unwrap())
    }

    fn labeling(&mut self, spec: &LabelingSpec) -> Result<RegionLabeling, String> {
        match spec {
            LabelingSpec::Max => self.max_labeling(),
            LabelingSpec::SectorSwap { removed } => {
                sector_swap_labeling(&self.family, self.grid, self.tie_tolerance, removed - 1).map_err(err)
            }
            LabelingSpec::HalfPlane {
                through,
                normal,
                inside,
                outside,
            } => Ok(half_plane_labeling(
                self.grid,
                self.family.len(),
                *through,
                normal / normal.norm(),
                inside - 1,
                outside - 1,
            )),
        }
    }

    fn mollifier(&self, epsilon: f64) -> Result<Mollifier, String> {
        Mollifier::cells(epsilon, &self.grid).map_err(err)
    }

    fn graph(&self) -> Result<&BoundaryGraph, String> {
        match &self.graph {
            Some(Ok(g)) => Ok(g),
            Some(Err(_)) => Err("skipped: trace-boundary failed".into()),
            None => Err("skipped: requires an earlier trace-boundary".into()),
        }
    }

    fn run(&mut self, index: usize, cmd: &Command) -> CmdResult {
        let h = self.grid.h();
        match cmd {
            Command::AnalyzePoint {
                point,
                active,
                closure_evidence,
                expect,
            } => {
                let active: Vec<usize> = match active {
                    Some(a) => a.iter().map(|i| i - 1).collect(),
                    None => (0..self.family.len()).collect(),
                };
                let profile = genericity_report(&self.family, *point, &active, *closure_evidence).map_err(err)?;
                let flags = serde_json::to_value(profile.flags).map_err(err)?;
                let verdict = match expect {
                    None => None,
                    Some(map) => {
                        let mut ok = true;
                        for (name, want) in map {
                            match flags.get(name).and_then(Value::as_bool) {
                                Some(got) => ok &= got == *want,
                                None => return Err(format!("unknown flag {name:?}")),
                            }
                        }
                        Some(ok)
                    }
                };
                let cones: Vec<Value> = profile
                    .cones
                    .iter()
                    .map(|(i, cone)| json!({"member": i + 1, "cone": cone}))
                    .collect();
                let residuals = if self.family.len() >= 3 {
                    let mut v = Vec::new();
                    for i in 0..self.family.len() {
                        for j in i + 1..self.family.len() {
                            for k in j + 1..self.family.len() {
                                let r = crate::point::critical_residual(&self.family, *point, i, j, k).map_err(err)?;
                                v.push(json!({"triple": [i + 1, j + 1, k + 1], "residual": r}));
                            }
                        }
                    }
                    v
                } else {
                    vec![]
                };
                Ok(Outcome {
                    verdict,
                    result: json!({
                        "point": profile.point,
                        "values": profile.values,
                        "active": one_based(&profile.active),
                        "convention": profile.convention,
                        "hull": {
                            "vertices": profile.hull.vertices,
                            "extreme": one_based(&profile.hull.extreme),
                            "boundary_non_extreme": one_based(&profile.hull.boundary_non_extreme),
                            "interior": one_based(&profile.hull.interior),
                            "segment": profile.hull.segment,
                        },
                        "cones": cones,
                        "critical_residuals": residuals,
                        "flags": flags,
                        "all_generic": profile.flags.all(),
                    }),
                    files: vec![],
                })
            }
            Command::Classify { output } => {
                let lab = self.max_labeling()?;
                let mut files = Vec::new();
                self.write(output, &mut files, |b| lab.write_csv(b))?;
                let counts: Vec<usize> = (0..self.family.len()).map(|i| lab.count(i)).collect();
                Ok(Outcome {
                    verdict: None,
                    result: json!({"cells": lab.labels().len(), "counts": counts, "ties": lab.tie_count()}),
                    files,
                })
            }
            Command::TraceBoundary { output, curve_prefix } => {
                let lab = self.max_labeling()?;
                let params = TraceParams::for_grid(&self.family, &self.grid);
                let graph = boundary_graph(&self.family, &lab, params);
                let graph = match graph {
                    Ok(g) => g,
                    Err(e) => {
                        self.graph = Some(Err(e.to_string()));
                        return Err(e.to_string());
                    }
                };
                let mut files = Vec::new();
                let manifest = graph.manifest();
                self.write(output, &mut files, |b| {
                    serde_json::to_writer_pretty(b, &manifest).map_err(std::io::Error::from)
                })?;
                if let Some(prefix) = curve_prefix {
                    for (k, curve) in graph.curves.iter().enumerate() {
                        self.write(&Some(format!("{prefix}{}.csv", k + 1)), &mut files, |b| {
                            curve.write_csv(b)
                        })?;
                    }
                }
                let result = json!({
                    "curves": graph.curves.len(),
                    "corners": graph.corners,
                    "total_mass": BoundaryMeasure::from_graph(&graph).total_mass,
                    "trace": params,
                    "manifest": manifest["curves"],
                });
                self.graph = Some(Ok(graph));
                Ok(Outcome {
                    verdict: None,
                    result,
                    files,
                })
            }
            Command::VerifyPositivity {
                labeling,
                epsilon,
                output,
                expect,
            } => {
                let lab = self.labeling(labeling)?;
                let field = PAField::new(self.family.clone(), lab).map_err(err)?;
                let m = self.mollifier(*epsilon)?;
                let dbar = mollified_dbar(&FieldSamples::from_field(&field), &m).map_err(err)?;
                let v = positivity_of(&dbar, &m);
                let mut files = Vec::new();
                self.write(output, &mut files, |b| dbar.write_csv(b))?;
                Ok(Outcome {
                    verdict: Some(expect.map_or(v.verdict, |e| e == v.verdict)),
                    result: json!({"positivity": v, "expected": expect}),
                    files,
                })
            }
            Command::VerifySubharmonic {
                labeling,
                epsilon,
                output,
                expect,
            } => {
                let m = self.mollifier(*epsilon)?;
                let samples = match labeling {
                    LabelingSpec::Max => FieldSamples::max_potential(&self.family, self.grid).map_err(err)?,
                    other => {
                        let lab = self.labeling(other)?;
                        FieldSamples::potential(&PAField::new(self.family.clone(), lab).map_err(err)?)
                    }
                };
                let v = subharmonic_verdict(&samples, &m).map_err(err)?;
                let mut files = Vec::new();
                if output.is_some() {
                    let lap = mollified_laplacian(&samples, &m).map_err(err)?;
                    self.write(output, &mut files, |b| lap.write_csv(b))?;
                }
                Ok(Outcome {
                    verdict: Some(expect.map_or(v.verdict, |e| e == v.verdict)),
                    result: json!({"subharmonic": v, "expected": expect}),
                    files,
                })
            }
            Command::FluxCheck {
                epsilon,
                band,
                clip,
                exclude_radius,
                tolerance,
            } => {
                let graph = self.graph()?.clone();
                let m = self.mollifier(*epsilon)?;
                let band = band.unwrap_or(epsilon + 2.0) * h;
                let tolerance = tolerance.unwrap_or(0.02);
                let exclude = exclude_radius.unwrap_or(4.0 * (band + m.radius()));
                let lab = self.max_labeling()?;
                let field = PAField::new(self.family.clone(), lab).map_err(err)?;
                let dbar = mollified_dbar(&FieldSamples::from_field(&field), &m).map_err(err)?;
                let inset = band + m.radius() + h;
                let window = self.grid.rect();
                let mut inner = Rect::new(window.min + C64::new(inset, inset), window.max - C64::new(inset, inset));
                if let Some(c) = clip {
                    inner = Rect::new(
                        C64::new(inner.min.re.max(c.min.re), inner.min.im.max(c.min.im)),
                        C64::new(inner.max.re.min(c.max.re), inner.max.im.min(c.max.im)),
                    );
                }
                let params = TraceParams::for_grid(&self.family, &self.grid);
                let corners = graph.corners.clone();
                let keep = |z: C64| {
                    corners
                        .iter()
                        .map(|c| (z - c).norm() - exclude)
                        .fold(inner.clearance(z), f64::min)
                };
                let mut checks = Vec::new();
                let mut ok = true;
                for (k, curve) in graph.curves.iter().enumerate() {
                    for piece in restrict_curve(&self.family, curve, params, &keep) {
                        if piece.length() < 2.0 * band {
                            continue;
                        }
                        let f = flux_from_dbar(&dbar, &m, &piece, band).map_err(err)?;
                        ok &= (f.ratio - 1.0).abs() <= tolerance;
                        checks.push(json!({
                            "curve": k + 1,
                            "pair": [curve.pair.0 + 1, curve.pair.1 + 1],
                            "start": piece.vertices[0],
                            "end": piece.vertices.last(),
                            "flux": f,
                        }));
                    }
                }
                let verdict = if checks.is_empty() { None } else { Some(ok) };
                // shrinking disks around each corner bound a point mass there
                let measure = BoundaryMeasure::from_graph(&graph);
                let radii: Vec<f64> = [3.0, 2.0, 1.0].iter().map(|k| k * (band + m.radius())).collect();
                let atoms: Vec<_> = corners
                    .iter()
                    .filter(|&&c| window.clearance(c) >= radii[0] + m.radius() + h)
                    .map(|&c| atom_bound(&dbar, &measure, c, &radii))
                    .collect();
                Ok(Outcome {
                    verdict,
                    result: json!({
                        "epsilon": m.radius(),
                        "band": band,
                        "exclude_radius": exclude,
                        "tolerance": tolerance,
                        "checks": checks,
                        "corner_excess": atoms,
                    }),
                    files: vec![],
                })
            }
            Command::ReconstructCauchy {
                center,
                radius,
                points,
                fit_degree,
                exclusion,
                tolerance,
            } => {
                let graph = self.graph()?.clone();
                let measure = BoundaryMeasure::from_graph(&graph);
                let lab = self.max_labeling()?;
                let field = PAField::new(self.family.clone(), lab).map_err(err)?;
                let center = center.unwrap_or(self.family.base_point());
                let radius = radius.unwrap_or(0.5);
                let count = points.unwrap_or(200);
                let exclusion = exclusion.unwrap_or(0.1);
                let tolerance = tolerance.unwrap_or(1e-2);
                let min_vertex = 3.0 * measure.max_spacing();
                let window = self.grid.rect();
                let pts = sample_test_points(self.seed.wrapping_add(index as u64), center, radius, count, |z| {
                    window.clearance(z) > 0.0
                        && measure.curves.iter().all(|c| c.distance(z) >= exclusion)
                        && measure.vertex_distance(z) >= min_vertex
                        && field.value(z).is_ok()
                });
                let fit = reconstruction_residual(&field, &measure, &pts, *fit_degree).map_err(err)?;
                Ok(Outcome {
                    verdict: Some(fit.residual <= tolerance * fit.scale),
                    result: json!({
                        "fit": fit,
                        "tolerance": tolerance,
                        "center": center,
                        "radius": radius,
                        "exclusion": exclusion,
                        "total_mass": measure.total_mass,
                    }),
                    files: vec![],
                })
            }
            Command::Reachability {
                source,
                baseline,
                output,
            } => {
                let r = descent_reachable(&self.family, *source, self.grid, baseline - 1).map_err(err)?;
                let mut files = Vec::new();
                self.write(output, &mut files, |b| r.write_csv(b))?;
                Ok(Outcome {
                    verdict: None,
                    result: json!({
                        "source_cell": self.grid.center(r.source_cell),
                        "reachable": r.count(),
                        "fraction": r.count() as f64 / self.grid.len() as f64,
                    }),
                    files,
                })
            }
            Command::Coverage {
                p,
                target,
                sequence,
                baseline,
                informational,
            } => {
                let cells: Vec<usize> = (0..self.grid.len())
                    .filter(|&i| target.contains(self.grid.center(i)))
                    .collect();
                let seq: Vec<C64> = match sequence {
                    SequenceSpec::Points(v) => v.clone(),
                    SequenceSpec::Harmonic { from, count } => (1..=*count).map(|n| p + (from - p) / n as f64).collect(),
                };
                let report =
                    limit_coverage_test(&self.family, *p, &cells, &seq, self.grid, baseline - 1).map_err(err)?;
                Ok(Outcome {
                    verdict: (!informational).then_some(report.n0.is_some()),
                    result: serde_json::to_value(&report).map_err(err)?,
                    files: vec![],
                })
            }
            Command::Counterexample {
                removed,
                epsilon,
                output,
            } => {
                let max_lab = self.max_labeling()?;
                let swap =
                    sector_swap_labeling(&self.family, self.grid, self.tie_tolerance, removed - 1).map_err(err)?;
                let fraction = max_lab.difference_fraction(&swap).map_err(err)?;
                let m = self.mollifier(*epsilon)?;
                let max_v =
                    subharmonic_verdict(&FieldSamples::max_potential(&self.family, self.grid).map_err(err)?, &m)
                        .map_err(err)?;
                let swap_field = PAField::new(self.family.clone(), swap.clone()).map_err(err)?;
                let swap_v = subharmonic_verdict(&FieldSamples::potential(&swap_field), &m).map_err(err)?;
                let mut files = Vec::new();
                self.write(output, &mut files, |b| swap.write_csv(b))?;
                Ok(Outcome {
                    verdict: Some(fraction > 0.0 && max_v.verdict && swap_v.verdict),
                    result: json!({
                        "difference_fraction": fraction,
                        "differing_cells": (fraction * self.grid.len() as f64).round() as usize,
                        "max_subharmonic": max_v,
                        "swap_subharmonic": swap_v,
                    }),
                    files,
                })
            }
            Command::Monotonicity {
                baseline,
                labeling,
                epsilon,
                paths,
                steps,
                expect,
            } => {
                let b = baseline - 1;
                let lab = self.labeling(labeling)?;
                let field = PAField::new(self.family.clone(), lab).map_err(err)?;
                let m = self.mollifier(*epsilon)?;
                let smoothed = smoothed_indicator(&field, b, &m).map_err(err)?;
                let count = paths.unwrap_or(100);
                let steps = steps.unwrap_or(64);
                let margin = smoothed.margin + 1;
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(index as u64));
                let starts: Vec<usize> = (0..self.grid.len())
                    .filter(|&i| self.grid.edge_distance(i) >= margin)
                    .collect();
                let mut holds = true;
                let mut worst = f64::INFINITY;
                let mut checked = 0;
                let mut attempts = 0;
                while checked < count && attempts < 20 * count.max(1) {
                    attempts += 1;
                    let Some(&start) = starts.choose(&mut rng) else { break };
                    let path = random_descent_path(&self.family, &self.grid, b, start, steps, margin, &mut rng);
                    if path.len() < 2 {
                        continue;
                    }
                    let c = monotonicity_along(&self.family, &smoothed, b, &path).map_err(err)?;
                    holds &= c.holds;
                    worst = worst.min(c.worst_violation);
                    checked += 1;
                }
                if checked == 0 {
                    return Err("no admissible path found".into());
                }
                Ok(Outcome {
                    verdict: Some(expect.map_or(holds, |e| e == holds)),
                    result: json!({
                        "holds": holds,
                        "worst_violation": worst,
                        "paths": checked,
                        "steps": steps,
                        "epsilon": m.radius(),
                        "slack": crate::reach::MONOTONICITY_SLACK,
                        "expected": expect,
                    }),
                    files: vec![],
                })
            }
        }
    }
}

/// Runs every command in order. Commands needing an earlier trace-boundary are skipped when it is missing or failed.
pub fn run_scenario(scenario: &Scenario, config_sha256: &str, options: &RunOptions) -> Result<Report, ConfigError> {
    check_semantics(scenario)?;
    let family = scenario.build_family().map_err(|e| invalid("/family", e.to_string()))?;
    let grid = scenario.grid().map_err(|e| invalid("/family/grid", e.to_string()))?;
    let seed = options.seed.unwrap_or(scenario.seed);
    let started = Instant::now();
    let mut ctx = Context {
        family,
        grid,
        tie_tolerance: scenario.tie_tolerance,
        seed,
        out_dir: options.out_dir.as_deref(),
        max_labeling: None,
        graph: None,
    };
    let mut commands = Vec::new();
    let mut commands_ms = Vec::new();
    for (k, cmd) in scenario.commands.iter().enumerate() {
        let t = Instant::now();
        let (status, outcome, message) = match ctx.run(k + 1, cmd) {
            Ok(o) => (Status::Ok, o, None),
            Err(msg) if msg.starts_with("skipped: ") => (
                Status::Skipped,
                Outcome {
                    verdict: None,
                    result: Value::Null,
                    files: vec![],
                },
                Some(msg["skipped: ".len()..].to_string()),
            ),
            Err(msg) => (
                Status::Error,
                Outcome {
                    verdict: None,
                    result: Value::Null,
                    files: vec![],
                },
                Some(msg),
            ),
        };
        commands_ms.push(t.elapsed().as_secs_f64() * 1e3);
        commands.push(CommandReport {
            index: k + 1,
            command: cmd.name(),
            status,
            verdict: outcome.verdict,
            result: outcome.result,
            files: outcome.files,
            message,
        });
    }
    Ok(Report {
        provenance: Provenance {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            config_sha256: config_sha256.to_string(),
            seed,
            grid,
            h: grid.h(),
            tie_tolerance: scenario.tie_tolerance,
        },
        commands,
        timings: Timings {
            total_ms: started.elapsed().as_secs_f64() * 1e3,
            commands_ms,
        },
    })
}
