//! Config-driven command surface: constants, Green's scans, mu solves,
//! ansatz construction, landscape search, Newton verification, and the
//! lift identity, each emitting plot-ready CSV/JSON artifacts plus a
//! deterministic `report.json`.

use crate::ansatz::build_ansatz;
use crate::bubble;
use crate::energy::{
    energy_expansion, energy_quadrature, find_critical_clustered, find_critical_separated,
    CriticalKind, SeparatedObjective,
};
use crate::fem::{build_mesh, MeshedOperator, WeightField};
use crate::geometry::DomainGeometry;
use crate::greens::{robin_function, GreenCache, SourceKind};
use crate::mu::{mu_limit, mu_residual, solve_mu, MuInputs, SpikeConfig, SpikePoint};
use crate::vec2::Vec2;
use crate::verify::{continuation_in_p, lift_identity_check};
use crate::{Error, Result};
use clap::{Args, Parser, Subcommand};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

// ---------------------------------------------------------------------------
// deterministic serialization

/// Formats a float at 15 significant digits; reruns must be byte-identical,
/// so every float that reaches an artifact goes through here.
pub fn fmt_f(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.14e}")
    } else {
        "null".into()
    }
}

/// Minimal JSON value with insertion-ordered objects and fixed float
/// formatting (serde_json would reformat floats at shortest round-trip).
#[derive(Debug, Clone)]
pub enum Json {
    Bool(bool),
    Int(i64),
    Num(f64),
    Str(String),
    Arr(Vec<Json>),
    Obj(Vec<(String, Json)>),
}

impl Json {
    pub fn render(&self) -> String {
        let mut s = String::new();
        self.write(&mut s, 0);
        s.push('\n');
        s
    }

    fn write(&self, out: &mut String, indent: usize) {
        let pad = "  ".repeat(indent);
        match self {
            Json::Bool(b) => {
                let _ = write!(out, "{b}");
            }
            Json::Int(i) => {
                let _ = write!(out, "{i}");
            }
            Json::Num(x) => {
                let _ = write!(out, "{}", fmt_f(*x));
            }
            Json::Str(s) => {
                out.push('"');
                for ch in s.chars() {
                    match ch {
                        '"' => out.push_str("\\\""),
                        '\\' => out.push_str("\\\\"),
                        '\n' => out.push_str("\\n"),
                        c if (c as u32) < 0x20 => {
                            let _ = write!(out, "\\u{:04x}", c as u32);
                        }
                        c => out.push(c),
                    }
                }
                out.push('"');
            }
            Json::Arr(items) => {
                if items.is_empty() {
                    out.push_str("[]");
                    return;
                }
                out.push_str("[\n");
                for (i, item) in items.iter().enumerate() {
                    let _ = write!(out, "{pad}  ");
                    item.write(out, indent + 1);
                    out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
                }
                let _ = write!(out, "{pad}]");
            }
            Json::Obj(fields) => {
                if fields.is_empty() {
                    out.push_str("{}");
                    return;
                }
                out.push_str("{\n");
                for (i, (k, v)) in fields.iter().enumerate() {
                    let _ = write!(out, "{pad}  \"{k}\": ");
                    v.write(out, indent + 1);
                    out.push_str(if i + 1 < fields.len() { ",\n" } else { "\n" });
                }
                let _ = write!(out, "{pad}}}");
            }
        }
    }
}

fn num_arr(xs: &[f64]) -> Json {
    Json::Arr(xs.iter().map(|&x| Json::Num(x)).collect())
}

fn point_json(x: Vec2) -> Json {
    Json::Arr(vec![Json::Num(x.x), Json::Num(x.y)])
}

fn write_csv(path: &Path, header: &str, rows: &[Vec<String>]) -> Result<()> {
    let mut s = String::with_capacity(rows.len() * 48 + header.len() + 1);
    s.push_str(header);
    s.push('\n');
    for row in rows {
        s.push_str(&row.join(","));
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// experiment configuration

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DomainSpec {
    kind: String,
    center: Option<[f64; 2]>,
    radius: Option<f64>,
    a: Option<f64>,
    b: Option<f64>,
    half_width: Option<f64>,
    half_height: Option<f64>,
    corner_radius: Option<f64>,
    points: Option<Vec<[f64; 2]>>,
    translate: Option<[f64; 2]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightSpec {
    kind: String,
    value: Option<f64>,
    k1: Option<u32>,
    k2: Option<u32>,
    base: Option<f64>,
    amp: Option<f64>,
    center: Option<[f64; 2]>,
    width: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpikesSpec {
    /// Number of interior spikes; the first `l` points are interior,
    /// the rest sit on the boundary (snapped to it).
    l: usize,
    points: Vec<[f64; 2]>,
    /// Boundary parameter of the cluster anchor (clustered regime);
    /// defaults to the boundary point nearest the weight's bump center.
    cluster_anchor: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeshSpec {
    h: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    regime: Option<String>,
    p: Option<f64>,
    p_schedule: Option<Vec<f64>>,
    scan_points: Option<usize>,
    output_dir: Option<String>,
    domain: DomainSpec,
    weight: WeightSpec,
    spikes: SpikesSpec,
    mesh: Option<MeshSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Separated,
    Clustered,
}

/// Validated, resolved experiment description.
#[derive(Debug)]
pub struct Experiment {
    pub dom: DomainGeometry,
    pub weight: WeightField,
    pub points: Vec<SpikePoint>,
    pub l: usize,
    pub p_schedule: Vec<f64>,
    pub h: f64,
    pub regime: Regime,
    pub seed: u64,
    pub scan_points: usize,
    pub cluster_anchor: Option<f64>,
    pub output_dir: PathBuf,
}

fn cfg_err(field: &str, msg: impl AsRef<str>) -> Error {
    Error::Config(format!("{field}: {}", msg.as_ref()))
}

fn require<T: Copy>(v: Option<T>, field: &str) -> Result<T> {
    v.ok_or_else(|| cfg_err(field, "missing required field"))
}

impl Experiment {
    pub fn from_toml(text: &str) -> Result<Experiment> {
        let raw: RawConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("parse: {e}")))?;
        Experiment::resolve(raw)
    }

    fn resolve(raw: RawConfig) -> Result<Experiment> {
        let d = &raw.domain;
        let shift = d.translate.map(|t| Vec2::new(t[0], t[1])).unwrap_or(Vec2::ZERO);
        let center = d.center.map(|c| Vec2::new(c[0], c[1])).unwrap_or(Vec2::ZERO) + shift;
        let dom = match d.kind.as_str() {
            "disk" => DomainGeometry::disk(center, require(d.radius, "domain.radius")?),
            "ellipse" => DomainGeometry::ellipse(
                center,
                require(d.a, "domain.a")?,
                require(d.b, "domain.b")?,
            ),
            "smoothed_rect" => DomainGeometry::smoothed_rect(
                center,
                require(d.half_width, "domain.half_width")?,
                require(d.half_height, "domain.half_height")?,
                require(d.corner_radius, "domain.corner_radius")?,
            ),
            "spline" => {
                let pts = d
                    .points
                    .as_ref()
                    .ok_or_else(|| cfg_err("domain.points", "missing required field"))?
                    .iter()
                    .map(|q| Vec2::new(q[0], q[1]) + shift)
                    .collect();
                DomainGeometry::spline(pts)
            }
            other => Err(cfg_err(
                "domain.kind",
                format!("unknown kind {other:?} (disk | ellipse | smoothed_rect | spline)"),
            ))?,
        }
        .map_err(|e| cfg_err("domain", e.to_string()))?;

        let w = &raw.weight;
        let weight = match w.kind.as_str() {
            "constant" => WeightField::Constant(w.value.unwrap_or(1.0)),
            "monomial" => WeightField::Monomial {
                k1: require(w.k1, "weight.k1")?,
                k2: require(w.k2, "weight.k2")?,
            },
            "boundary_bump" => {
                let c = require(w.center, "weight.center")?;
                WeightField::BoundaryBump {
                    base: require(w.base, "weight.base")?,
                    amp: require(w.amp, "weight.amp")?,
                    center: Vec2::new(c[0], c[1]),
                    width: require(w.width, "weight.width")?,
                }
            }
            other => Err(cfg_err(
                "weight.kind",
                format!("unknown kind {other:?} (constant | monomial | boundary_bump)"),
            ))?,
        };
        if matches!(weight, WeightField::Monomial { .. }) && !dom.in_positive_quadrant() {
            return Err(cfg_err(
                "weight",
                "monomial weight requires the domain closure in the open positive \
                 quadrant; set domain.translate",
            ));
        }

        let s = &raw.spikes;
        let m = s.points.len();
        if m == 0 {
            return Err(cfg_err("spikes.points", "at least one spike is required"));
        }
        if s.l > m {
            return Err(cfg_err(
                "spikes.l",
                format!("interior count l={} exceeds the spike count m={m}; l <= m required", s.l),
            ));
        }
        let mut points = Vec::with_capacity(m);
        for (i, q) in s.points.iter().enumerate() {
            let x = Vec2::new(q[0], q[1]);
            if i < s.l {
                if !dom.contains(x) {
                    return Err(cfg_err(
                        &format!("spikes.points[{i}]"),
                        "interior spike must lie inside the domain",
                    ));
                }
                points.push(SpikePoint { position: x, kind: SourceKind::Interior });
            } else {
                // boundary spikes are snapped onto the boundary curve
                let (s, _) = crate::fem::nearest_boundary_param(&dom, x);
                points.push(SpikePoint {
                    position: dom.boundary_point(s).position,
                    kind: SourceKind::Boundary,
                });
            }
        }

        let p_schedule = match (raw.p, raw.p_schedule) {
            (Some(_), Some(_)) => {
                return Err(cfg_err("p", "give either p or p_schedule, not both"))
            }
            (Some(p), None) => vec![p],
            (None, Some(sched)) => sched,
            (None, None) => return Err(cfg_err("p", "missing required field (p or p_schedule)")),
        };
        if p_schedule.is_empty() {
            return Err(cfg_err("p_schedule", "must be non-empty"));
        }
        for &p in &p_schedule {
            if !(p > 1.0) {
                return Err(cfg_err("p", format!("exponent must exceed 1, got {p}")));
            }
        }
        if p_schedule.windows(2).any(|w| w[1] <= w[0]) {
            return Err(cfg_err("p_schedule", "must be strictly increasing"));
        }

        let regime = match raw.regime.as_deref().unwrap_or("separated") {
            "separated" => Regime::Separated,
            "clustered" => Regime::Clustered,
            other => {
                return Err(cfg_err(
                    "regime",
                    format!("unknown regime {other:?} (separated | clustered)"),
                ))
            }
        };

        let h = raw.mesh.map(|ms| ms.h).unwrap_or(0.08);
        if !(h > 0.0) {
            return Err(cfg_err("mesh.h", "must be positive"));
        }

        Ok(Experiment {
            dom,
            weight,
            points,
            l: s.l,
            p_schedule,
            h,
            regime,
            seed: raw.seed.unwrap_or(0),
            scan_points: raw.scan_points.unwrap_or(12),
            cluster_anchor: s.cluster_anchor,
            output_dir: PathBuf::from(raw.output_dir.unwrap_or_else(|| "out".into())),
        })
    }

    fn p_final(&self) -> f64 {
        *self.p_schedule.last().unwrap()
    }
}

// ---------------------------------------------------------------------------
// presets

pub const PRESETS: &[(&str, &str)] = &[
    (
        "disk-boundary-spike",
        r#"
seed = 0
p_schedule = [20.0, 30.0, 45.0, 67.0, 100.0]
[domain]
kind = "disk"
radius = 1.0
[weight]
kind = "constant"
[spikes]
l = 0
points = [[1.0, 0.0]]
[mesh]
h = 0.08
"#,
    ),
    (
        "disk-interior-spike",
        r#"
seed = 0
p_schedule = [20.0, 30.0, 45.0, 67.0, 100.0]
[domain]
kind = "disk"
radius = 1.0
[weight]
kind = "constant"
[spikes]
l = 1
points = [[0.0, 0.0]]
[mesh]
h = 0.08
"#,
    ),
    (
        "monomial-disk",
        r#"
seed = 0
p = 40.0
[domain]
kind = "disk"
radius = 1.0
translate = [3.0, 1.5]
[weight]
kind = "monomial"
k1 = 1
k2 = 0
[spikes]
l = 1
points = [[3.9, 1.5]]
[mesh]
h = 0.1
"#,
    ),
    (
        "clustered-bump",
        r#"
seed = 0
regime = "clustered"
p_schedule = [30.0, 60.0, 120.0]
[domain]
kind = "disk"
radius = 1.0
[weight]
kind = "boundary_bump"
base = 1.0
amp = 1.0
center = [0.0, 1.0]
width = 0.7
[spikes]
l = 1
cluster_anchor = 0.25
points = [[0.0, 0.9], [0.1, 0.99]]
[mesh]
h = 0.1
"#,
    ),
];

fn preset_toml(name: &str) -> Result<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| {
            let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            Error::Config(format!("unknown preset {name:?}; available: {}", names.join(", ")))
        })
}

// ---------------------------------------------------------------------------
// argument surface

#[derive(Debug, Parser)]
#[command(name = "spikelab", about = "Multi-spike asymptotics laboratory", version)]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in experiment preset name.
    #[arg(long)]
    pub preset: Option<String>,
    /// Output directory (overrides the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// RNG seed (overrides the config).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Exponent p (overrides the config schedule with a single value).
    #[arg(long)]
    pub p: Option<f64>,
    /// Target mesh size (overrides the config).
    #[arg(long)]
    pub mesh_h: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Bubble constants and the radial correction tables.
    Constants {
        #[command(flatten)]
        common: Common,
    },
    /// Green's function and Robin scans for the configured spikes.
    Greens {
        #[command(flatten)]
        common: Common,
    },
    /// Concentration-parameter system solve.
    Mu {
        #[command(flatten)]
        common: Common,
    },
    /// Spike ansatz field and mesh export.
    Ansatz {
        #[command(flatten)]
        common: Common,
    },
    /// Reduced-energy landscape scan and critical points.
    Landscape {
        #[command(flatten)]
        common: Common,
    },
    /// Newton verification: continuation branch in p.
    Verify {
        #[command(flatten)]
        common: Common,
    },
    /// Dimensional-lift operator identity residuals.
    LiftCheck {
        #[command(flatten)]
        common: Common,
    },
    /// Full pipeline: greens, mu, ansatz, landscape, verify.
    Run {
        #[command(flatten)]
        common: Common,
    },
}

impl Common {
    fn load(&self) -> Result<Experiment> {
        let text = match (&self.config, &self.preset) {
            (Some(path), None) => std::fs::read_to_string(path)?,
            (None, Some(name)) => preset_toml(name)?.to_string(),
            (None, None) => {
                return Err(Error::Config("either --config or --preset is required".into()))
            }
            (Some(_), Some(_)) => {
                return Err(Error::Config("--config and --preset are mutually exclusive".into()))
            }
        };
        let mut exp = Experiment::from_toml(&text)?;
        if let Some(out) = &self.out {
            exp.output_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            exp.seed = seed;
        }
        if let Some(p) = self.p {
            if !(p > 1.0) {
                return Err(cfg_err("--p", "exponent must exceed 1"));
            }
            exp.p_schedule = vec![p];
        }
        if let Some(h) = self.mesh_h {
            if !(h > 0.0) {
                return Err(cfg_err("--mesh-h", "must be positive"));
            }
            exp.h = h;
        }
        std::fs::create_dir_all(&exp.output_dir)?;
        Ok(exp)
    }
}

// ---------------------------------------------------------------------------
// stages

struct StageReport {
    name: &'static str,
    status: Result<Vec<String>>, // artifact file names on success
}

fn probe_operator(exp: &Experiment) -> Result<MeshedOperator> {
    let centers: Vec<(Vec2, f64)> = exp.points.iter().map(|s| (s.position, 1e-4)).collect();
    let mesh = build_mesh(&exp.dom, exp.h, &centers)?;
    MeshedOperator::assemble(&exp.dom, mesh, exp.weight.clone())
}

fn stage_constants(out: &Path) -> Result<Vec<String>> {
    let c = bubble::compute_constants()?;
    let json = Json::Obj(vec![
        ("C1".into(), Json::Num(c.c1)),
        ("C2".into(), Json::Num(c.c2)),
        ("K".into(), Json::Num(c.k)),
        ("bubble_mass".into(), Json::Num(c.bubble_mass)),
    ]);
    std::fs::write(out.join("constants.json"), json.render())?;

    // radial correction tables on a log grid
    let omega2 = bubble::omega2();
    let mut rows = Vec::new();
    for i in 0..=240 {
        let r = 10f64.powf(-2.0 + 4.0 * i as f64 / 240.0);
        rows.push(vec![fmt_f(r), fmt_f(bubble::omega1(r)), fmt_f(omega2.eval(r))]);
    }
    write_csv(&out.join("omega.csv"), "r,omega1,omega2", &rows)?;
    Ok(vec!["constants.json".into(), "omega.csv".into()])
}

fn stage_greens(exp: &Experiment, op: &MeshedOperator, out: &Path) -> Result<Vec<String>> {
    let mut rows = Vec::new();
    for (i, sp) in exp.points.iter().enumerate() {
        let g = crate::greens::regular_part(op, sp.position, sp.kind)?;
        for (j, &x) in op.mesh.nodes.iter().enumerate() {
            rows.push(vec![
                format!("g{i}"),
                fmt_f(x.x),
                fmt_f(x.y),
                fmt_f(g.green_at_node(&op.mesh, j)),
            ]);
            rows.push(vec![format!("h{i}"), fmt_f(x.x), fmt_f(x.y), fmt_f(g.h_field[j])]);
        }
        // Robin scan along the inward normal ray at the spike's anchor
        let (s_anchor, _) = crate::fem::nearest_boundary_param(&exp.dom, sp.position);
        let bp = exp.dom.boundary_point(s_anchor);
        for &depth in &[0.2, 0.1, 0.05, 0.025] {
            let y = bp.position - depth * bp.normal;
            let robin = robin_function(op, y, SourceKind::Interior)?;
            rows.push(vec![format!("robin{i}"), fmt_f(y.x), fmt_f(y.y), fmt_f(robin)]);
        }
    }
    write_csv(&out.join("greens.csv"), "series,x1,x2,value", &rows)?;
    Ok(vec!["greens.csv".into()])
}

fn mu_pipeline(exp: &Experiment, op: &MeshedOperator, p: f64) -> Result<(MuInputs, SpikeConfig)> {
    let mut cache = GreenCache::new(op);
    let inputs = MuInputs::gather(&mut cache, &exp.points)?;
    let mu = solve_mu(p, &inputs)?;
    let cfg = SpikeConfig { p, points: exp.points.clone(), l: exp.l, mu };
    Ok((inputs, cfg))
}

fn stage_mu(exp: &Experiment, op: &MeshedOperator, out: &Path) -> Result<Vec<String>> {
    let p = exp.p_final();
    let (inputs, cfg) = mu_pipeline(exp, op, p)?;
    let res = mu_residual(p, &inputs, &cfg.mu);
    let res_norm = res.iter().fold(0.0f64, |a, &r| a.max(r.abs()));
    let json = Json::Obj(vec![
        ("p".into(), Json::Num(p)),
        ("points".into(), Json::Arr(exp.points.iter().map(|s| point_json(s.position)).collect())),
        ("c".into(), num_arr(&inputs.c)),
        ("robin".into(), num_arr(&inputs.robin)),
        (
            "green".into(),
            Json::Arr(inputs.green.iter().map(|row| num_arr(row)).collect()),
        ),
        ("mu".into(), num_arr(&cfg.mu)),
        ("mu_limit".into(), num_arr(&mu_limit(&inputs))),
        ("residual_sup".into(), Json::Num(res_norm)),
        ("delta".into(), num_arr(&(0..cfg.m()).map(|i| cfg.delta(i)).collect::<Vec<_>>())),
    ]);
    std::fs::write(out.join("mu.json"), json.render())?;
    Ok(vec!["mu.json".into()])
}

fn stage_ansatz(exp: &Experiment, out: &Path) -> Result<Vec<String>> {
    let p = exp.p_final();
    let probe = probe_operator(exp)?;
    let (_, cfg) = mu_pipeline(exp, &probe, p)?;
    // re-grade at the core scale before building the ansatz
    let delta_min = (0..cfg.m()).map(|i| cfg.delta(i)).fold(f64::INFINITY, f64::min);
    let h_min = (delta_min / 2.5).clamp(crate::fem::H_MIN_FLOOR, exp.h);
    let centers: Vec<(Vec2, f64)> = exp.points.iter().map(|s| (s.position, h_min)).collect();
    let mesh = build_mesh(&exp.dom, exp.h, &centers)?;
    let op = MeshedOperator::assemble(&exp.dom, mesh, exp.weight.clone())?;
    let af = build_ansatz(&op, &cfg)?;
    let rows: Vec<Vec<String>> = op
        .mesh
        .nodes
        .iter()
        .zip(&af.nodal)
        .map(|(x, &u)| vec![fmt_f(x.x), fmt_f(x.y), fmt_f(u)])
        .collect();
    write_csv(&out.join("ansatz.csv"), "x1,x2,value", &rows)?;
    std::fs::write(out.join("mesh.txt"), op.mesh.export_text())?;
    Ok(vec!["ansatz.csv".into(), "mesh.txt".into()])
}

fn kind_name(k: CriticalKind) -> &'static str {
    match k {
        CriticalKind::Maximum => "maximum",
        CriticalKind::Minimum => "minimum",
        CriticalKind::Saddle => "saddle",
        CriticalKind::Degenerate => "degenerate",
    }
}

fn stage_landscape(exp: &Experiment, out: &Path) -> Result<Vec<String>> {
    let p = exp.p_final();
    let mut artifacts = Vec::new();

    // scan: move spike 0 along the boundary (and inward for interior
    // spikes), others fixed; emit both energy routes per configuration
    let (s0, dist0) = crate::fem::nearest_boundary_param(&exp.dom, exp.points[0].position);
    let t0 = if exp.points[0].kind == SourceKind::Interior { dist0.max(1e-3) } else { 0.0 };
    let n_scan = exp.scan_points.max(2);
    let scan_pos: Vec<(f64, Vec2)> = (0..n_scan)
        .map(|i| {
            let s = (s0 - 0.15 + 0.3 * i as f64 / (n_scan - 1) as f64).rem_euclid(1.0);
            let bp = exp.dom.boundary_point(s);
            (s, bp.position - t0 * bp.normal)
        })
        .collect();
    // grade the Green probe mesh along the scan arc, at the fixed
    // spikes, and at the cluster anchor
    let mut centers: Vec<(Vec2, f64)> =
        scan_pos.iter().map(|&(_, pos)| (pos, 1e-4)).collect();
    centers.extend(exp.points.iter().map(|q| (q.position, 1e-4)));
    if exp.regime == Regime::Clustered {
        let anchor = exp.cluster_anchor.map(Ok).unwrap_or_else(|| bump_anchor(exp))?;
        centers.push((exp.dom.boundary_point(anchor).position, 1e-4));
    }
    let mesh = build_mesh(&exp.dom, exp.h, &centers)?;
    let op = MeshedOperator::assemble(&exp.dom, mesh, exp.weight.clone())?;
    let op = &op;
    let mut cache = GreenCache::new(op);
    let mut rows = Vec::new();
    for &(s, pos) in &scan_pos {
        let mut pts = exp.points.clone();
        pts[0].position = pos;
        let inputs = MuInputs::gather(&mut cache, &pts)?;
        let a_at: Vec<f64> = pts.iter().map(|q| op.weight.eval(q.position)).collect();
        let f_exp = energy_expansion(p, &inputs, &a_at);
        // quadrature route: graded mesh + ansatz + weighted integral
        let mu = solve_mu(p, &inputs)?;
        let cfg = SpikeConfig { p, points: pts.clone(), l: exp.l, mu };
        let delta_min = (0..cfg.m()).map(|k| cfg.delta(k)).fold(f64::INFINITY, f64::min);
        let h_min = (delta_min / 2.5).clamp(crate::fem::H_MIN_FLOOR, exp.h);
        let centers: Vec<(Vec2, f64)> = pts.iter().map(|q| (q.position, h_min)).collect();
        let f_quad = build_mesh(&exp.dom, exp.h, &centers)
            .and_then(|mesh| MeshedOperator::assemble(&exp.dom, mesh, exp.weight.clone()))
            .and_then(|scan_op| {
                let af = build_ansatz(&scan_op, &cfg)?;
                energy_quadrature(&scan_op, &af)
            });
        rows.push(vec![
            fmt_f(s),
            fmt_f(t0),
            fmt_f(pos.x),
            fmt_f(pos.y),
            fmt_f(f_exp),
            match f_quad {
                Ok(v) => fmt_f(v),
                Err(_) => "null".into(),
            },
        ]);
    }
    write_csv(&out.join("landscape.csv"), "s,t,x1,x2,f_expansion,f_quadrature", &rows)?;
    artifacts.push("landscape.csv".into());

    // critical points
    let entries = match exp.regime {
        Regime::Separated => {
            let obj = SeparatedObjective {
                dom: &exp.dom,
                weight: &exp.weight,
                m: exp.points.len(),
                l: exp.l,
                p,
            };
            let n = exp.points.len();
            let mut seeds = Vec::new();
            for k in 0..8 {
                let base = k as f64 / 8.0;
                let s: Vec<f64> = (0..n).map(|j| (base + j as f64 / n as f64).rem_euclid(1.0)).collect();
                let t: Vec<f64> = s
                    .iter()
                    .take(exp.l)
                    .map(|&sj| obj.t_star(sj).unwrap_or(1.0))
                    .collect();
                seeds.push((s, t));
            }
            let found = find_critical_separated(&obj, &seeds, None);
            found
                .iter()
                .map(|cp| {
                    let pos = obj.positions(&cp.s, &cp.t);
                    Json::Obj(vec![
                        ("s".into(), num_arr(&cp.s)),
                        ("t".into(), num_arr(&cp.t)),
                        (
                            "locations".into(),
                            Json::Arr(pos.iter().map(|q| point_json(q.position)).collect()),
                        ),
                        ("value".into(), Json::Num(cp.value)),
                        ("grad_norm".into(), Json::Num(cp.grad_norm)),
                        ("hess_eigs".into(), num_arr(&cp.hess_eigs)),
                        ("kind".into(), Json::Str(kind_name(cp.kind).into())),
                        ("converged".into(), Json::Bool(cp.converged)),
                        ("admissible".into(), Json::Bool(cp.admissible)),
                    ])
                })
                .collect::<Vec<_>>()
        }
        Regime::Clustered => {
            let anchor = match exp.cluster_anchor {
                Some(s) => s,
                None => bump_anchor(exp)?,
            };
            let mut entries = Vec::new();
            for &pk in &exp.p_schedule {
                let res = find_critical_clustered(
                    op,
                    &exp.dom,
                    exp.points.len(),
                    exp.l,
                    pk,
                    anchor,
                    exp.seed,
                )?;
                entries.push(Json::Obj(vec![
                    ("p".into(), Json::Num(pk)),
                    (
                        "locations".into(),
                        Json::Arr(res.points.iter().map(|q| point_json(q.position)).collect()),
                    ),
                    ("value".into(), Json::Num(res.value)),
                    ("boundary_trapped".into(), Json::Bool(res.boundary_trapped)),
                    (
                        "hypothesis_warning".into(),
                        match &res.hypothesis_warning {
                            Some(w) => Json::Str(w.clone()),
                            None => Json::Str(String::new()),
                        },
                    ),
                ]));
            }
            entries
        }
    };
    let json = Json::Obj(vec![
        ("p".into(), Json::Num(p)),
        ("seed".into(), Json::Int(exp.seed as i64)),
        ("critical_points".into(), Json::Arr(entries)),
    ]);
    std::fs::write(out.join("critical_points.json"), json.render())?;
    artifacts.push("critical_points.json".into());
    Ok(artifacts)
}

/// Boundary parameter of the weight's bump center (clustered anchor).
fn bump_anchor(exp: &Experiment) -> Result<f64> {
    if let WeightField::BoundaryBump { center, .. } = exp.weight {
        Ok(crate::fem::nearest_boundary_param(&exp.dom, center).0)
    } else {
        Err(cfg_err(
            "spikes.cluster_anchor",
            "required for the clustered regime unless the weight is a boundary bump",
        ))
    }
}

fn stage_verify(exp: &Experiment, out: &Path) -> Result<Vec<String>> {
    let stages = continuation_in_p(
        &exp.dom,
        exp.weight.clone(),
        exp.points.clone(),
        exp.l,
        &exp.p_schedule,
        exp.h,
    )?;
    let entries: Vec<Json> = stages
        .iter()
        .map(|st| {
            Json::Obj(vec![
                ("p".into(), Json::Num(st.p)),
                ("converged".into(), Json::Bool(st.sol.converged)),
                ("newton_iters".into(), Json::Int(st.sol.newton_iters as i64)),
                ("residual".into(), Json::Num(st.sol.residual_norm)),
                ("mu".into(), num_arr(&st.mu)),
                ("delta_min".into(), Json::Num(st.delta_min)),
                (
                    "spikes".into(),
                    Json::Arr(
                        st.sol
                            .spikes
                            .iter()
                            .map(|sp| {
                                Json::Obj(vec![
                                    ("location".into(), point_json(sp.location)),
                                    ("peak".into(), Json::Num(sp.peak)),
                                    ("mass".into(), Json::Num(sp.mass)),
                                ])
                            })
                            .collect(),
                    ),
                ),
                ("outside_sup".into(), Json::Num(st.sol.outside_sup)),
            ])
        })
        .collect();
    let json = Json::Obj(vec![("branch".into(), Json::Arr(entries))]);
    std::fs::write(out.join("branch.json"), json.render())?;

    let mut artifacts = vec!["branch.json".into()];
    if let Some(last) = stages.iter().rev().find(|st| st.sol.converged) {
        let rows: Vec<Vec<String>> = last
            .mesh_nodes
            .iter()
            .zip(&last.sol.u)
            .map(|(x, &u)| vec![fmt_f(x.x), fmt_f(x.y), fmt_f(u)])
            .collect();
        write_csv(&out.join("solution.csv"), "x1,x2,u", &rows)?;
        artifacts.push("solution.csv".into());
    }
    Ok(artifacts)
}

fn stage_lift_check(exp: &Experiment, out: &Path) -> Result<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(exp.seed);
    let p = exp.p_final();
    let fields: [(&str, &dyn Fn(Vec2) -> f64); 3] = [
        ("x1*x2", &|x: Vec2| x.x * x.y),
        ("sin(x1)*cos(x2)", &|x: Vec2| x.x.sin() * x.y.cos()),
        ("exp(-|x|^2/4)", &|x: Vec2| (-x.norm2() / 4.0).exp()),
    ];
    let mut entries = Vec::new();
    for &(k1, k2) in &[(1u32, 0u32), (1, 1), (2, 3)] {
        for (fname, f) in &fields {
            let mut worst = 0.0f64;
            for _ in 0..100 {
                let x = Vec2::new(rng.random_range(0.1..2.0), rng.random_range(0.1..2.0));
                worst = worst.max(lift_identity_check(k1, k2, f, p, x)?);
            }
            entries.push(Json::Obj(vec![
                ("k1".into(), Json::Int(k1 as i64)),
                ("k2".into(), Json::Int(k2 as i64)),
                ("field".into(), Json::Str((*fname).into())),
                ("max_residual".into(), Json::Num(worst)),
            ]));
        }
    }
    let json = Json::Obj(vec![
        ("p".into(), Json::Num(p)),
        ("seed".into(), Json::Int(exp.seed as i64)),
        ("samples_per_case".into(), Json::Int(100)),
        ("cases".into(), Json::Arr(entries)),
    ]);
    std::fs::write(out.join("lift.json"), json.render())?;
    Ok(vec!["lift.json".into()])
}

// ---------------------------------------------------------------------------
// dispatch

fn write_report(
    out: &Path,
    command: &str,
    seed: Option<u64>,
    stages: &[StageReport],
) -> Result<()> {
    let mut stage_entries = Vec::new();
    let mut artifacts = Vec::new();
    for st in stages {
        let (status, message) = match &st.status {
            Ok(files) => {
                artifacts.extend(files.iter().cloned());
                ("ok".to_string(), String::new())
            }
            Err(e) => ("error".to_string(), e.to_string()),
        };
        stage_entries.push(Json::Obj(vec![
            ("name".into(), Json::Str(st.name.into())),
            ("status".into(), Json::Str(status)),
            ("message".into(), Json::Str(message)),
        ]));
    }
    let mut fields = vec![("command".into(), Json::Str(command.into()))];
    if let Some(s) = seed {
        fields.push(("seed".into(), Json::Int(s as i64)));
    }
    fields.push(("stages".into(), Json::Arr(stage_entries)));
    fields.push((
        "artifacts".into(),
        Json::Arr(artifacts.into_iter().map(Json::Str).collect()),
    ));
    std::fs::write(out.join("report.json"), Json::Obj(fields).render())?;
    Ok(())
}

/// Runs one parsed command; returns the process exit code.
pub fn execute(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(all_ok) => {
            if all_ok {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn dispatch(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Constants { common } => {
            // constants need no experiment config
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
            std::fs::create_dir_all(&out)?;
            let st = StageReport { name: "constants", status: stage_constants(&out) };
            let ok = st.status.is_ok();
            write_report(&out, "constants", None, &[st])?;
            print_summary(&out)?;
            Ok(ok)
        }
        Cmd::Greens { common } => single_stage(common, "greens", |exp, out| {
            let op = probe_operator(exp)?;
            stage_greens(exp, &op, out)
        }),
        Cmd::Mu { common } => single_stage(common, "mu", |exp, out| {
            let op = probe_operator(exp)?;
            stage_mu(exp, &op, out)
        }),
        Cmd::Ansatz { common } => single_stage(common, "ansatz", stage_ansatz),
        Cmd::Landscape { common } => single_stage(common, "landscape", stage_landscape),
        Cmd::Verify { common } => single_stage(common, "verify", stage_verify),
        Cmd::LiftCheck { common } => single_stage(common, "lift-check", stage_lift_check),
        Cmd::Run { common } => {
            let exp = common.load()?;
            let out = exp.output_dir.clone();
            let mut stages = Vec::new();
            let op = probe_operator(&exp);
            match &op {
                Ok(op) => {
                    stages.push(StageReport { name: "greens", status: stage_greens(&exp, op, &out) });
                    stages.push(StageReport { name: "mu", status: stage_mu(&exp, op, &out) });
                    stages.push(StageReport { name: "ansatz", status: stage_ansatz(&exp, &out) });
                    stages.push(StageReport {
                        name: "landscape",
                        status: stage_landscape(&exp, &out),
                    });
                    stages.push(StageReport { name: "verify", status: stage_verify(&exp, &out) });
                }
                Err(e) => stages.push(StageReport {
                    name: "mesh",
                    status: Err(Error::Mesh(e.to_string())),
                }),
            }
            let ok = stages.iter().all(|s| s.status.is_ok());
            write_report(&out, "run", Some(exp.seed), &stages)?;
            print_summary(&out)?;
            Ok(ok)
        }
    }
}

fn single_stage(
    common: Common,
    name: &'static str,
    f: impl FnOnce(&Experiment, &Path) -> Result<Vec<String>>,
) -> Result<bool> {
    let exp = common.load()?;
    let out = exp.output_dir.clone();
    let st = StageReport { name, status: f(&exp, &out) };
    let ok = st.status.is_ok();
    write_report(&out, name, Some(exp.seed), &[st])?;
    print_summary(&out)?;
    Ok(ok)
}

fn print_summary(out: &Path) -> Result<()> {
    let report = std::fs::read_to_string(out.join("report.json"))?;
    print!("{report}");
    Ok(())
}

/// Entry point for the binary: parse argv, run, map to an exit code.
pub fn main_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(cli),
        Err(e) => {
            // clap handles --help/--version printing through the error path
            let _ = e.print();
            if e.use_stderr() {
                2
            } else {
                0
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_is_fifteen_digits() {
        assert_eq!(fmt_f(3.0), "3.00000000000000e0");
        assert_eq!(fmt_f(-0.000123456789012345), "-1.23456789012345e-4");
        assert_eq!(fmt_f(f64::NAN), "null");
    }

    #[test]
    fn json_renders_deterministically() {
        let j = Json::Obj(vec![
            ("b".into(), Json::Num(1.5)),
            ("a".into(), Json::Arr(vec![Json::Int(1), Json::Bool(true)])),
        ]);
        let r1 = j.render();
        let r2 = j.render();
        assert_eq!(r1, r2);
        // insertion order, not alphabetical
        assert!(r1.find("\"b\"").unwrap() < r1.find("\"a\"").unwrap());
    }

    #[test]
    fn presets_all_parse_and_validate() {
        for (name, text) in PRESETS {
            let exp = Experiment::from_toml(text).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(!exp.p_schedule.is_empty(), "{name}");
        }
    }

    #[test]
    fn interior_count_exceeding_spikes_is_rejected() {
        let text = r#"
p = 30.0
[domain]
kind = "disk"
radius = 1.0
[weight]
kind = "constant"
[spikes]
l = 2
points = [[1.0, 0.0]]
"#;
        let e = Experiment::from_toml(text).unwrap_err();
        assert!(e.to_string().contains("l <= m"), "{e}");
    }

    #[test]
    fn monomial_weight_outside_quadrant_is_rejected() {
        let text = r#"
p = 30.0
[domain]
kind = "disk"
radius = 1.0
[weight]
kind = "monomial"
k1 = 1
k2 = 0
[spikes]
l = 0
points = [[1.0, 0.0]]
"#;
        let e = Experiment::from_toml(text).unwrap_err();
        assert!(e.to_string().contains("positive quadrant"), "{e}");
    }

    #[test]
    fn exponent_at_most_one_is_rejected() {
        let text = r#"
p = 1.0
[domain]
kind = "disk"
radius = 1.0
[weight]
kind = "constant"
[spikes]
l = 0
points = [[1.0, 0.0]]
"#;
        let e = Experiment::from_toml(text).unwrap_err();
        assert!(e.to_string().contains("exceed 1"), "{e}");
    }

    #[test]
    fn boundary_spikes_are_snapped() {
        let text = r#"
p = 30.0
[domain]
kind = "disk"
radius = 1.0
[weight]
kind = "constant"
[spikes]
l = 0
points = [[1.05, 0.0]]
"#;
        let exp = Experiment::from_toml(text).unwrap();
        assert!((exp.points[0].position.norm() - 1.0).abs() < 1e-9);
    }
}
