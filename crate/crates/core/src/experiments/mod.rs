//! Config-driven experiments. Each run returns fixed-schema [`ResultRow`]s
//! plus named [`Check`]s that the summary file reports as pass/flag/fail.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{GridSpec, ScalarField};
use crate::group::GroupSpec;
use crate::heat::{box_inradius, FieldSubset, StencilOrder};
use crate::kernels::{LPCutoff, OmegaPreset, SphereFunction};
use crate::operators::{rho_spacing, OperatorConfig, RieszHandle};
use crate::polar::{SphereQuadrature, DEFAULT_SHELL};

mod basic;
mod decay;
mod hormander;
mod shape;
mod sparse_run;

pub use basic::{group_check, sphere_checks};
pub use decay::{decay_window, run_decay};
pub use hormander::run_hormander;
pub use shape::{run_unweighted, run_weighted};
pub use sparse_run::{cz_batch, run_sparse, CZ_GRIDS};

/// Experiments reachable from the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    GroupCheck,
    Sphere,
    Decay,
    Hormander,
    Unweighted,
    Weighted,
    Sparse,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Self::GroupCheck,
        Self::Sphere,
        Self::Decay,
        Self::Hormander,
        Self::Unweighted,
        Self::Weighted,
        Self::Sparse,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::GroupCheck => "group-check",
            Self::Sphere => "sphere",
            Self::Decay => "decay",
            Self::Hormander => "hormander",
            Self::Unweighted => "unweighted",
            Self::Weighted => "weighted",
            Self::Sparse => "sparse",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment {s}")))
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Grid for one group: `m` nodes per axis on `[−R^{a_j}, R^{a_j}]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    /// One or more resolutions; two-resolution checks use the first two.
    pub m: Vec<usize>,
    pub radius: f64,
}

impl GridConfig {
    pub fn build(&self, g: &GroupSpec, m: usize) -> Result<GridSpec> {
        GridSpec::for_group(g, self.radius, m)
    }
}

/// Index windows. Unset bounds are derived from the grid.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub j: Option<[i32; 2]>,
    pub k: Option<[i32; 2]>,
    pub max_gap: i32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpConfig {
    /// Outer support radius of the base bump `φ`.
    pub outer: f64,
    pub smoothness: u32,
}

/// Everything an experiment reads. Missing keys take the per-experiment
/// defaults of [`ExperimentConfig::defaults`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub groups: Vec<String>,
    pub seed: u64,
    /// Random fields per parameter tuple.
    pub samples: usize,
    pub alpha: f64,
    pub p: Vec<f64>,
    pub q: f64,
    pub omega: Vec<String>,
    /// Weight family (`power` sweeps the admissible exponent range).
    pub weight: String,
    /// Points of the weight-exponent grid.
    pub betas: usize,
    pub kinds: Vec<String>,
    pub orders: Vec<String>,
    /// Parameter `t` of the parametrized and shell pieces.
    pub t: f64,
    pub sphere_resolution: usize,
    /// Stopping ratio of sparse families.
    pub lambda: f64,
    /// Random fields in the Calderón–Zygmund batch of the sparse run (0 skips it).
    pub cz_fields: usize,
    pub grids: BTreeMap<String, GridConfig>,
    pub window: WindowConfig,
    pub lp: LpConfig,
}

fn default_grids() -> BTreeMap<String, GridConfig> {
    let mut m = BTreeMap::new();
    m.insert("euclidean2".into(), GridConfig { m: vec![256], radius: 4.0 });
    m.insert("euclidean3".into(), GridConfig { m: vec![64], radius: 2.5 });
    m.insert("heisenberg".into(), GridConfig { m: vec![48], radius: 2.0 });
    m
}

impl ExperimentConfig {
    /// Desk-scale defaults for one experiment.
    pub fn defaults(e: Experiment) -> Self {
        let mut c = Self {
            experiment: e,
            groups: vec!["euclidean2".into()],
            seed: 7,
            samples: 8,
            alpha: 0.5,
            p: vec![2.0],
            q: f64::INFINITY,
            cz_fields: 100,
            omega: vec!["first-coordinate".into()],
            weight: "power".into(),
            betas: 7,
            kinds: vec!["sharp_Bj".into(), "surface_shell".into()],
            orders: vec!["psi_first".into(), "psi_last".into()],
            t: 1.5,
            sphere_resolution: 128,
            lambda: 4.0,
            grids: default_grids(),
            window: WindowConfig {
                j: None,
                k: None,
                max_gap: 4,
            },
            lp: LpConfig {
                outer: 1.0,
                smoothness: 1,
            },
        };
        match e {
            Experiment::GroupCheck => {
                c.groups = vec!["euclidean1".into(), "euclidean2".into(), "euclidean3".into(), "heisenberg".into()];
                c.samples = 10_000;
            }
            Experiment::Sphere => {
                c.groups = vec!["euclidean2".into(), "heisenberg".into()];
                c.sphere_resolution = 512;
                c.p = vec![];
            }
            Experiment::Decay => {
                c.groups = vec!["euclidean2".into(), "heisenberg".into()];
                // centres the band response on j = k (see `decay_window`)
                c.lp.outer = 8.0;
                c.kinds = ["smooth_Aj", "sharp_Bj", "parametrized_Bjt", "surface_shell"].map(String::from).to_vec();
            }
            Experiment::Hormander => {
                c.grids.insert("euclidean2".into(), GridConfig { m: vec![257], radius: 2.0 });
                c.window.j = Some([0, 3]);
                c.kinds = vec!["parametrized_Bjt".into()];
            }
            Experiment::Unweighted => {
                c.samples = 16;
                c.p = vec![1.5, 2.0, 3.0];
                c.omega = vec![
                    "first-coordinate".into(),
                    "zonal-harmonic(3)".into(),
                    "constant-balanced".into(),
                    "rough-random(11, 4)".into(),
                ];
                c.grids.insert("euclidean2".into(), GridConfig { m: vec![128, 256], radius: 2.0 });
            }
            Experiment::Weighted => {
                c.groups = vec!["euclidean2".into(), "heisenberg".into()];
                c.grids.insert("euclidean2".into(), GridConfig { m: vec![128], radius: 2.0 });
                c.grids.insert("heisenberg".into(), GridConfig { m: vec![24], radius: 2.0 });
                c.sphere_resolution = 48;
            }
            Experiment::Sparse => {
                c.alpha = 0.0;
                c.samples = 4;
                c.grids.insert("euclidean2".into(), GridConfig { m: vec![128, 256], radius: 2.0 });
            }
        }
        c
    }

    /// Parse a TOML config; keys override the defaults of the named experiment.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let name = user
            .get("experiment")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::Config("missing key `experiment`".into()))?;
        let base = Self::defaults(Experiment::parse(name)?);
        let mut merged = toml::Value::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut merged, user);
        let cfg: Self = merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Config of experiment `e` from a file that may name it or not. A table
    /// `[<name>]` replaces the top level; tables of other experiments are ignored.
    pub fn from_toml_for(e: Experiment, text: &str) -> Result<Self> {
        let mut user: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(section) = user.get(e.name()).filter(|v| v.is_table()).cloned() {
            user = section;
        }
        let table = user
            .as_table_mut()
            .ok_or_else(|| Error::Config("config must be a table".into()))?;
        for other in Experiment::ALL {
            table.remove(other.name());
        }
        match table.get("experiment").and_then(|v| v.as_str()) {
            Some(name) if name != e.name() => {
                return Err(Error::Config(format!("config is for {name}, not {}", e.name())));
            }
            _ => {
                table.insert("experiment".into(), toml::Value::String(e.name().into()));
            }
        }
        Self::from_toml_str(&toml::to_string(&user).map_err(|e| Error::Config(e.to_string()))?)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::Config("no groups listed".into()));
        }
        for id in &self.groups {
            let g = GroupSpec::builtin(id)?;
            if !(self.alpha >= 0.0 && self.alpha < g.q_hom()) {
                return Err(Error::Config(format!("alpha {} outside [0, Q) for {id}", self.alpha)));
            }
        }
        if self.p.iter().any(|p| !(*p >= 1.0)) {
            return Err(Error::Config("exponents p must be at least 1".into()));
        }
        if !(self.lambda > 1.0) {
            return Err(Error::Config("stopping ratio must exceed 1".into()));
        }
        if self.samples == 0 {
            return Err(Error::Config("samples must be positive".into()));
        }
        for o in &self.omega {
            OmegaPreset::parse(o)?;
        }
        Ok(())
    }

    pub fn grid_for(&self, id: &str) -> GridConfig {
        self.grids
            .get(id)
            .cloned()
            .unwrap_or(GridConfig { m: vec![32], radius: 2.0 })
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// One CSV line. The header is the same for every experiment:
/// `experiment,group,resolution,params,quantity,value,slope,intercept,r2,clipping,boundary_flux,quad_error,flag`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub group: String,
    pub resolution: usize,
    /// `key=value` pairs separated by `;`.
    pub params: String,
    pub quantity: String,
    pub value: f64,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub r2: Option<f64>,
    /// Share of the relevant kernel or output mass in the boundary layer.
    pub clipping: Option<f64>,
    pub boundary_flux: Option<f64>,
    pub quad_error: Option<f64>,
    /// `ok`, `inconclusive`, `clipped`, `flux` or `unresolved`.
    pub flag: String,
}

pub const CSV_HEADER: &str =
    "experiment,group,resolution,params,quantity,value,slope,intercept,r2,clipping,boundary_flux,quad_error,flag";

impl ResultRow {
    pub fn new(e: Experiment, group: &str, resolution: usize, params: String, quantity: &str, value: f64) -> Self {
        Self {
            experiment: e.name().into(),
            group: group.into(),
            resolution,
            params,
            quantity: quantity.into(),
            value,
            flag: "ok".into(),
            ..Self::default()
        }
    }

    pub fn with_fit(mut self, fit: Option<crate::numerics::LineFit>) -> Self {
        if let Some(f) = fit {
            self.slope = Some(f.slope);
            self.intercept = Some(f.intercept);
            self.r2 = Some(f.r2);
            if !f.conclusive() {
                self.flag = "inconclusive".into();
            }
        } else {
            self.flag = "inconclusive".into();
        }
        self
    }

    /// Record clipping; above 5% the row is flagged, never dropped.
    pub fn with_clipping(mut self, c: f64) -> Self {
        self.clipping = Some(c);
        if c > 0.05 && self.flag == "ok" {
            self.flag = "clipped".into();
        }
        self
    }

    pub fn with_flux(mut self, f: f64) -> Self {
        self.boundary_flux = Some(f);
        if f > 0.02 && self.flag == "ok" {
            self.flag = "flux".into();
        }
        self
    }

    pub fn with_quad_error(mut self, e: f64) -> Self {
        self.quad_error = Some(e);
        self
    }
}

/// Params column helper: `params!("alpha" => 0.5, "kind" => "sharp")`.
#[macro_export]
macro_rules! params {
    ($($k:expr => $v:expr),* $(,)?) => {{
        let parts: Vec<String> = vec![$(format!("{}={}", $k, $v)),*];
        parts.join(";")
    }};
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Flag,
    Fail,
}

impl Status {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Self::Pass
        } else {
            Self::Fail
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Pass => "PASS",
            Self::Flag => "FLAG",
            Self::Fail => "FAIL",
        })
    }
}

/// A named acceptance item evaluated inside a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub criterion: String,
    pub status: Status,
    pub detail: String,
}

impl Check {
    pub fn new(criterion: impl Into<String>, status: Status, detail: impl Into<String>) -> Self {
        Self {
            criterion: criterion.into(),
            status,
            detail: detail.into(),
        }
    }

    pub fn fail(criterion: impl Into<String>, err: &Error) -> Self {
        Self::new(criterion, Status::Fail, err.to_string())
    }
}

#[derive(Clone, Debug, Default)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub checks: Vec<Check>,
}

impl ExperimentOutput {
    pub fn extend(&mut self, other: ExperimentOutput) {
        self.rows.extend(other.rows);
        self.checks.extend(other.checks);
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != Status::Fail)
    }

    pub fn check(&self, prefix: &str) -> Vec<&Check> {
        self.checks.iter().filter(|c| c.criterion.starts_with(prefix)).collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        w.write_record(CSV_HEADER.split(','))?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// `<dir>/<name>.csv` and `<dir>/<name>_summary.json`.
    pub fn write(&self, dir: &Path, e: Experiment, cfg: &ExperimentConfig) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.write_csv(fs::File::create(dir.join(format!("{}.csv", e.name())))?)?;
        let summary = Summary {
            experiment: e.name().into(),
            seed: cfg.seed,
            rows: self.rows.len(),
            flagged: self.rows.iter().filter(|r| r.flag != "ok").count(),
            checks: self.checks.clone(),
        };
        let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(dir.join(format!("{}_summary.json", e.name())), text)?;
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Summary {
    pub experiment: String,
    pub seed: u64,
    pub rows: usize,
    pub flagged: usize,
    pub checks: Vec<Check>,
}

/// Run one experiment from its config.
pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    match cfg.experiment {
        Experiment::GroupCheck => group_check(cfg),
        Experiment::Sphere => sphere_checks(cfg),
        Experiment::Decay => run_decay(cfg),
        Experiment::Hormander => run_hormander(cfg),
        Experiment::Unweighted => run_unweighted(cfg),
        Experiment::Weighted => run_weighted(cfg),
        Experiment::Sparse => run_sparse(cfg),
    }
}

// ---------------------------------------------------------------------------
// Shared setup

/// Group, grid, sphere quadrature and operator configuration for one run.
pub(crate) struct Setup {
    pub g: GroupSpec,
    pub grid: GridSpec,
    pub quad: SphereQuadrature,
    pub op: OperatorConfig,
}

impl Setup {
    pub fn new(cfg: &ExperimentConfig, id: &str, m: usize, omega: &str, alpha: f64) -> Result<Self> {
        let g = GroupSpec::builtin(id)?;
        let grid = cfg.grid_for(id).build(&g, m)?;
        let quad = SphereQuadrature::build(&g, cfg.sphere_resolution.min(sphere_cap(&g)), DEFAULT_SHELL)?;
        let op = operator(&g, &quad, cfg, omega, alpha)?;
        Ok(Self { g, grid, quad, op })
    }

    pub fn riesz(&self) -> Result<RieszHandle> {
        RieszHandle::new(&self.g, &self.grid, &default_subset(&self.g), StencilOrder::Second)
    }

    pub fn with_omega(&self, cfg: &ExperimentConfig, omega: &str) -> Result<OperatorConfig> {
        operator(&self.g, &self.quad, cfg, omega, self.op.alpha)
    }
}

/// Sphere quadratures in three dimensions get expensive fast.
fn sphere_cap(g: &GroupSpec) -> usize {
    if g.dim() >= 3 {
        64
    } else {
        1024
    }
}

fn operator(g: &GroupSpec, quad: &SphereQuadrature, cfg: &ExperimentConfig, omega: &str, alpha: f64) -> Result<OperatorConfig> {
    let preset = OmegaPreset::parse(omega)?;
    let m = if preset == OmegaPreset::Zero { -1 } else { alpha.floor() as i32 };
    let om = Arc::new(SphereFunction::build(g, quad, preset, m, true)?);
    let lp = LPCutoff::with_outer(g, quad, cfg.lp.smoothness, cfg.lp.outer)?;
    OperatorConfig::new(g, om, alpha, lp)
}

/// Homogeneous sub-Laplacian for stratified groups, full Laplacian otherwise.
pub(crate) fn default_subset(g: &GroupSpec) -> FieldSubset {
    if g.is_abelian() {
        FieldSubset::All
    } else {
        FieldSubset::FirstStratum
    }
}

/// Sum of 3–6 smooth bumps `a·b(|δ_{1/s}(c^{-1}x)|)` with `b(r) = e^{1 − 1/(1−r²)}`,
/// scales log-uniform in `[4h_ρ, inradius/4]`, supports inside the box.
pub fn random_bumps(g: &GroupSpec, grid: &GridSpec, seed: u64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inr = box_inradius(g, grid);
    let lo = (4.0 * rho_spacing(g, grid)).min(inr / 4.0);
    let hi = inr / 4.0;
    let n = rng.gen_range(3..=6);
    let bumps: Vec<(Vec<f64>, f64, f64)> = (0..n)
        .map(|_| {
            let s = if hi > lo { (rng.gen_range(lo.ln()..hi.ln())).exp() } else { hi };
            let c: Vec<f64> = g
                .exponents()
                .iter()
                .map(|a| {
                    let reach = (0.5 * inr).powf(*a);
                    rng.gen_range(-reach..reach)
                })
                .collect();
            let amp = rng.gen_range(0.5..1.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            (g.inverse(&c).expect("dimension matches"), s, amp)
        })
        .collect();
    let dil = g.dilations().clone();
    let gg = g.clone();
    ScalarField::from_fn(grid, move |x| {
        let mut z = vec![0.0; x.len()];
        let mut y = vec![0.0; x.len()];
        bumps
            .iter()
            .map(|(cinv, s, amp)| {
                gg.mul_into(cinv, x, &mut z);
                dil.dilate_into(1.0 / s, &z, &mut y);
                let r2: f64 = y.iter().map(|v| v * v).sum();
                if r2 < 1.0 {
                    amp * (1.0 - 1.0 / (1.0 - r2)).exp()
                } else {
                    0.0
                }
            })
            .sum()
    })
}

/// Seed of sample `i` in stream `stream`, independent of the grid.
pub(crate) fn sample_seed(cfg: &ExperimentConfig, stream: u64, i: usize) -> u64 {
    cfg.seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(i as u64)
}
