//! Batch front-end: JSON experiment configs, validation, orchestration over
//! the numerical modules, and CSV + manifest output.
//!
//! A config is a JSON object with a `kind`, a master `seed`, an optional
//! `output` directory and the kind's own fields. Numeric content lives only
//! in the config; command-line flags choose paths, threads and verbosity.

use crate::anderson_lab::{
    self, interval_a, interval_s, limit_transfer_partial, limit_transfer_stretched, log_points,
    moment_bound_check, transfer_from_abd, well_balanced_check, DisorderSpec, LimitSource, LimitTransfer,
    PartialAntitreeSpec, Realization, SizeLaw, StretchedAntitreeSpec,
};
use crate::greens_weyl::{limit_point_diagnostic, m_function, weyl_circles, GreenData, MMethod, Mode};
use crate::io::{self, Manifest, OutputDir, Versions};
use crate::model_core::{
    assemble_dense, jacobi_half, materialize, Geometry, OneChannelOperator, RandomShells, ShellData,
};
use crate::spectral_estimator::{
    ac_criterion, detect_point_masses, finite_eigenfunctions, fullline_density, halfline_density, uniform_grid,
};
use crate::transfer_engine::{transfer_products, Cocycle};
use crate::{c64, CMat, CVec, OcsError, Result, C64};
use nalgebra::{DMatrix, Matrix2};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// A real number or a `[re, im]` pair.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Num {
    Real(f64),
    Complex([f64; 2]),
}

impl Num {
    pub fn c(self) -> C64 {
        match self {
            Num::Real(x) => c64(x, 0.0),
            Num::Complex([a, b]) => c64(a, b),
        }
    }
}

/// Shell matrix: a scalar or a list of rows.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum MatSpec {
    Scalar(Num),
    Rows(Vec<Vec<Num>>),
}

/// One explicit shell; modes default to `(1)` for scalar shells and are
/// normalized on load.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShellSpec {
    pub v: MatSpec,
    #[serde(default)]
    pub phi: Option<Vec<Num>>,
    #[serde(default)]
    pub upsilon: Option<Vec<Num>>,
}

impl ShellSpec {
    fn build(&self, index: i64, a: f64, path: &str) -> Result<ShellData> {
        let v = match &self.v {
            MatSpec::Scalar(x) => CMat::from_element(1, 1, x.c()),
            MatSpec::Rows(rows) => {
                let n = rows.len();
                if n == 0 || rows.iter().any(|r| r.len() != n) {
                    return Err(OcsError::config(format!("{path}.v"), "shell matrix must be square and nonempty"));
                }
                CMat::from_fn(n, n, |i, j| rows[i][j].c())
            }
        };
        let s = v.nrows();
        let vec = |x: &Option<Vec<Num>>, name: &str| -> Result<CVec> {
            match x {
                Some(x) if x.len() == s => Ok(CVec::from_iterator(s, x.iter().map(|e| e.c()))),
                Some(_) => Err(OcsError::config(format!("{path}.{name}"), format!("expected {s} entries"))),
                None if s == 1 => Ok(CVec::from_element(1, c64(1.0, 0.0))),
                None => Err(OcsError::config(format!("{path}.{name}"), "required for shells larger than 1×1")),
            }
        };
        let phi = vec(&self.phi, "phi")?;
        let ups = vec(&self.upsilon, "upsilon")?;
        ShellData::normalized(index, v, a, phi, ups).map_err(|e| OcsError::config(path, e.to_string()))
    }
}

/// Stretched or partial antitree family parameters.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilySpec {
    Stretched {
        sizes: SizeLaw,
        disorder: DisorderSpec,
    },
    Partial {
        k: [usize; 3],
        /// Symmetric `k×k` pattern `M`; alternatively give `o` and `a`.
        #[serde(default)]
        pattern: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        o: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        a: Option<Vec<f64>>,
        #[serde(default = "default_sizes")]
        sizes: SizeLaw,
        disorder: DisorderSpec,
    },
}

fn default_sizes() -> SizeLaw {
    SizeLaw::Const(1)
}

/// Either family after validation.
#[derive(Debug, Clone)]
pub enum Family {
    Stretched(StretchedAntitreeSpec),
    Partial(PartialAntitreeSpec),
}

impl FamilySpec {
    pub fn build(&self, path: &str) -> Result<Family> {
        let wrap = |e: OcsError| OcsError::config(path, e.to_string());
        match self {
            FamilySpec::Stretched { sizes, disorder } => {
                disorder.validate().map_err(wrap)?;
                Ok(Family::Stretched(StretchedAntitreeSpec { sizes: sizes.clone(), disorder: disorder.clone() }))
            }
            FamilySpec::Partial { k, pattern, o, a, sizes, disorder } => {
                disorder.validate().map_err(wrap)?;
                let spec = match (pattern, o, a) {
                    (Some(p), None, None) => {
                        let n = p.len();
                        if p.iter().any(|r| r.len() != n) {
                            return Err(OcsError::config(format!("{path}.pattern"), "pattern must be square"));
                        }
                        let m = DMatrix::from_fn(n, n, |i, j| p[i][j]);
                        PartialAntitreeSpec::from_pattern(*k, &m, sizes.clone(), disorder.clone()).map_err(wrap)?
                    }
                    (None, Some(o), Some(a)) => {
                        let s = PartialAntitreeSpec {
                            k: *k,
                            o: o.clone(),
                            a_diag: a.clone(),
                            sizes: sizes.clone(),
                            disorder: disorder.clone(),
                        };
                        s.validate().map_err(wrap)?;
                        s
                    }
                    _ => return Err(OcsError::config(path, "give either `pattern` or both `o` and `a`")),
                };
                Ok(Family::Partial(spec))
            }
        }
    }
}

impl Family {
    fn realization(&self, seed: u64, n: usize) -> Realization {
        match self {
            Family::Stretched(s) => Realization::stretched(s.clone(), seed, n),
            Family::Partial(p) => Realization::partial(p.clone(), seed, n),
        }
    }

    fn limit(&self, lambda: f64) -> Result<LimitTransfer> {
        match self {
            Family::Stretched(s) => limit_transfer_stretched(&s.disorder, lambda),
            Family::Partial(p) => limit_transfer_partial(p, lambda),
        }
    }

    /// Random real transfer matrix of shell `n` at `λ`.
    fn sample_transfer(&self, n: usize, lambda: f64, rng: &mut ChaCha8Rng) -> Result<Matrix2<f64>> {
        let (g, _) = match self {
            Family::Stretched(s) => anderson_lab::sample_shell_stretched(s, n, lambda, rng)?,
            Family::Partial(p) => anderson_lab::sample_shell_partial(p, n, lambda, rng)?,
        };
        Ok(transfer_from_abd(g.alpha.re, g.beta.re, g.delta.re))
    }

    fn with_sizes(&self, sizes: SizeLaw) -> Family {
        match self {
            Family::Stretched(s) => Family::Stretched(StretchedAntitreeSpec { sizes, ..s.clone() }),
            Family::Partial(p) => Family::Partial(PartialAntitreeSpec { sizes, ..p.clone() }),
        }
    }
}

/// Operator description.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// Scalar shells; `v` is padded with `0` and `a` with `-1` up to `n`.
    Jacobi {
        n: usize,
        #[serde(default)]
        v: Vec<f64>,
        #[serde(default)]
        a: Vec<f64>,
        #[serde(default)]
        geometry: Geometry,
        #[serde(default)]
        n_left: usize,
        #[serde(default)]
        v_left: Vec<f64>,
        #[serde(default)]
        a_left: Vec<f64>,
    },
    /// Random Hermitian shells drawn from `(seed, n)`; the seed defaults to
    /// the experiment seed.
    Random {
        n: usize,
        max_size: usize,
        #[serde(default = "one")]
        min_size: usize,
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default)]
        fixed_a: Option<f64>,
        #[serde(default)]
        geometry: Geometry,
        #[serde(default)]
        n_left: usize,
    },
    /// Explicit shells and couplings (`a[k]` belongs to `shells[k]`).
    Custom {
        shells: Vec<ShellSpec>,
        a: Vec<f64>,
        #[serde(default)]
        geometry: Geometry,
        /// Shells `0, -1, …` for full-line geometry.
        #[serde(default)]
        left_shells: Vec<ShellSpec>,
        #[serde(default)]
        left_a: Vec<f64>,
    },
    /// A fixed realization of a random antitree (half line).
    StretchedAntitree {
        sizes: SizeLaw,
        disorder: DisorderSpec,
        n: usize,
    },
    PartialAntitree {
        k: [usize; 3],
        #[serde(default)]
        pattern: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        o: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        a: Option<Vec<f64>>,
        sizes: SizeLaw,
        disorder: DisorderSpec,
        n: usize,
    },
}

fn one() -> usize {
    1
}

/// Inline model or path to a model file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum ModelRef {
    File(PathBuf),
    Inline(ModelSpec),
}

/// A model ready for computation.
pub enum Model {
    Operator(OneChannelOperator),
    Antitree(Realization, Family),
}

impl Model {
    fn cocycle(&self) -> &dyn Cocycle {
        match self {
            Model::Operator(op) => op,
            Model::Antitree(r, _) => r,
        }
    }

    fn n_max(&self) -> i64 {
        match self {
            Model::Operator(op) => op.n_max(),
            Model::Antitree(r, _) => r.n_max() as i64,
        }
    }

    fn n_min(&self) -> i64 {
        match self {
            Model::Operator(op) => op.n_min(),
            Model::Antitree(..) => 1,
        }
    }

    /// Explicit operator; antitree shells are materialized.
    fn operator(&self) -> Result<OneChannelOperator> {
        match self {
            Model::Operator(op) => Ok(op.clone()),
            Model::Antitree(r, _) => r.operator(r.n_max()),
        }
    }
}

fn pad(v: &[f64], n: usize, fill: f64) -> Vec<f64> {
    (0..n).map(|k| v.get(k).copied().unwrap_or(fill)).collect()
}

impl ModelSpec {
    pub fn build(&self, seed: u64, path: &str) -> Result<Model> {
        let wrap = |e: OcsError| OcsError::config(path, e.to_string());
        match self {
            ModelSpec::Jacobi { n, v, a, geometry, n_left, v_left, a_left } => {
                if *n == 0 || v.len() > *n || a.len() > *n {
                    return Err(OcsError::config(path, "need n ≥ 1 and at most n entries in v and a"));
                }
                let right = jacobi_half(&pad(v, *n, 0.0), &pad(a, *n, -1.0)).map_err(wrap)?;
                match geometry {
                    Geometry::Half => Ok(Model::Operator(right)),
                    Geometry::Full => {
                        if *n_left == 0 {
                            return Err(OcsError::config(format!("{path}.n_left"), "full line needs n_left ≥ 1"));
                        }
                        let left = jacobi_half(&pad(v_left, *n_left, 0.0), &pad(a_left, *n_left, -1.0)).map_err(wrap)?;
                        let op = OneChannelOperator::full(left.right_shells().to_vec(), right.right_shells().to_vec())
                            .map_err(wrap)?;
                        Ok(Model::Operator(op))
                    }
                }
            }
            ModelSpec::Random { n, max_size, min_size, seed: s, fixed_a, geometry, n_left } => {
                if *n == 0 || *max_size == 0 || min_size > max_size {
                    return Err(OcsError::config(path, "need n ≥ 1 and 1 ≤ min_size ≤ max_size"));
                }
                if *geometry == Geometry::Full && *n_left == 0 {
                    return Err(OcsError::config(format!("{path}.n_left"), "full line needs n_left ≥ 1"));
                }
                let src = RandomShells { seed: s.unwrap_or(seed), min_size: *min_size, max_size: *max_size, fixed_a: *fixed_a };
                Ok(Model::Operator(materialize(&src, *geometry, *n, *n_left).map_err(wrap)?))
            }
            ModelSpec::Custom { shells, a, geometry, left_shells, left_a } => {
                if shells.is_empty() || shells.len() != a.len() {
                    return Err(OcsError::config(path, "shells and a must be nonempty with equal lengths"));
                }
                let right = shells
                    .iter()
                    .zip(a)
                    .enumerate()
                    .map(|(k, (s, &a))| s.build(k as i64 + 1, a, &format!("{path}.shells[{k}]")))
                    .collect::<Result<Vec<_>>>()?;
                let op = match geometry {
                    Geometry::Half => OneChannelOperator::half(right),
                    Geometry::Full => {
                        if left_shells.is_empty() || left_shells.len() != left_a.len() {
                            return Err(OcsError::config(path, "full line needs left_shells and left_a of equal length"));
                        }
                        let left = left_shells
                            .iter()
                            .zip(left_a)
                            .enumerate()
                            .map(|(k, (s, &a))| s.build(-(k as i64), a, &format!("{path}.left_shells[{k}]")))
                            .collect::<Result<Vec<_>>>()?;
                        OneChannelOperator::full(left, right)
                    }
                }
                .map_err(wrap)?;
                Ok(Model::Operator(op))
            }
            ModelSpec::StretchedAntitree { sizes, disorder, n } => {
                let fam = FamilySpec::Stretched { sizes: sizes.clone(), disorder: disorder.clone() }.build(path)?;
                if *n == 0 {
                    return Err(OcsError::config(format!("{path}.n"), "need n ≥ 1"));
                }
                Ok(Model::Antitree(fam.realization(seed, *n), fam))
            }
            ModelSpec::PartialAntitree { k, pattern, o, a, sizes, disorder, n } => {
                let fam = FamilySpec::Partial {
                    k: *k,
                    pattern: pattern.clone(),
                    o: o.clone(),
                    a: a.clone(),
                    sizes: sizes.clone(),
                    disorder: disorder.clone(),
                }
                .build(path)?;
                if *n == 0 {
                    return Err(OcsError::config(format!("{path}.n"), "need n ≥ 1"));
                }
                Ok(Model::Antitree(fam.realization(seed, *n), fam))
            }
        }
    }
}

/// Energy grid: `{lo, hi, n}` (uniform, inclusive) or an explicit list.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Range { lo: f64, hi: f64, n: usize },
    List(Vec<f64>),
}

impl GridSpec {
    pub fn points(&self, path: &str) -> Result<Vec<f64>> {
        let pts = match self {
            GridSpec::Range { lo, hi, n } => {
                if !(lo < hi) || *n < 2 {
                    return Err(OcsError::config(path, "range grid needs lo < hi and n ≥ 2"));
                }
                uniform_grid(*lo, *hi, *n)
            }
            GridSpec::List(v) => v.clone(),
        };
        if pts.is_empty() || pts.iter().any(|x| !x.is_finite()) {
            return Err(OcsError::config(path, "grid must be nonempty and finite"));
        }
        if let Some(i) = pts.windows(2).position(|w| w[0] >= w[1]) {
            return Err(OcsError::config(format!("{path}[{}]", i + 1), "grid must be strictly increasing"));
        }
        Ok(pts)
    }
}

/// Which reduced quantity a well-balanced check samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantity {
    Alpha,
    Beta,
    Delta,
}

fn default_c() -> f64 {
    0.0
}
fn default_tol() -> f64 {
    1e-8
}
fn default_nodes() -> usize {
    64
}
fn default_points() -> usize {
    12
}
fn default_k() -> usize {
    2
}
fn default_methods() -> Vec<MMethod> {
    vec![MMethod::Transfer]
}
fn default_cs() -> Vec<f64> {
    vec![0.0]
}

/// Experiment parameters, tagged by `kind`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Experiment {
    /// Resolvent blocks and scalar overlaps from transfer data against dense
    /// inversion of the truncation.
    GreenOracle {
        model: ModelRef,
        z: Vec<[f64; 2]>,
        #[serde(default = "default_c")]
        c: f64,
        #[serde(default = "default_tol")]
        tol: f64,
        #[serde(default)]
        export_dense: bool,
    },
    MSweep {
        model: ModelRef,
        z: Vec<[f64; 2]>,
        n_list: Vec<usize>,
        #[serde(default = "default_cs")]
        c: Vec<f64>,
        #[serde(default = "default_methods")]
        methods: Vec<MMethod>,
    },
    Weyl {
        model: ModelRef,
        z: [f64; 2],
        n_max: i64,
    },
    DensityHalfline {
        model: ModelRef,
        grid: GridSpec,
        window: [i64; 2],
        #[serde(default)]
        point_masses: bool,
    },
    DensityFullline {
        model: ModelRef,
        grid: GridSpec,
        m_window: [i64; 2],
        n_window: [i64; 2],
        #[serde(default = "default_nodes")]
        nodes: usize,
    },
    AcCriterion {
        model: ModelRef,
        p: f64,
        interval: [f64; 2],
        n_list: Vec<i64>,
        #[serde(default = "default_nodes")]
        nodes: usize,
    },
    #[serde(rename = "interval_S")]
    IntervalS {
        disorder: DisorderSpec,
        grid: GridSpec,
    },
    #[serde(rename = "interval_A")]
    IntervalA {
        family: FamilySpec,
        grid: GridSpec,
    },
    MomentBound {
        family: FamilySpec,
        lambda: f64,
        n_max: usize,
        #[serde(default = "default_points")]
        n_points: usize,
        trials: usize,
    },
    WellBalanced {
        family: FamilySpec,
        lambda: f64,
        quantity: Quantity,
        sizes: Vec<usize>,
        #[serde(default = "default_k")]
        k_max: usize,
        trials: usize,
    },
    FiniteEigenfunctions {
        model: ModelRef,
        shell_lo: i64,
        shell_hi: i64,
    },
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::GreenOracle { .. } => "green_oracle",
            Experiment::MSweep { .. } => "m_sweep",
            Experiment::Weyl { .. } => "weyl",
            Experiment::DensityHalfline { .. } => "density_halfline",
            Experiment::DensityFullline { .. } => "density_fullline",
            Experiment::AcCriterion { .. } => "ac_criterion",
            Experiment::IntervalS { .. } => "interval_S",
            Experiment::IntervalA { .. } => "interval_A",
            Experiment::MomentBound { .. } => "moment_bound",
            Experiment::WellBalanced { .. } => "well_balanced",
            Experiment::FiniteEigenfunctions { .. } => "finite_eigenfunctions",
        }
    }

    fn model_ref(&self) -> Option<&ModelRef> {
        match self {
            Experiment::GreenOracle { model, .. }
            | Experiment::MSweep { model, .. }
            | Experiment::Weyl { model, .. }
            | Experiment::DensityHalfline { model, .. }
            | Experiment::DensityFullline { model, .. }
            | Experiment::AcCriterion { model, .. }
            | Experiment::FiniteEigenfunctions { model, .. } => Some(model),
            _ => None,
        }
    }
}

/// A parsed experiment config.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(flatten)]
    pub experiment: Experiment,
}

/// Parses config JSON, reporting the field path of the first error.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        OcsError::config(if path.is_empty() { ".".into() } else { path }, e.into_inner().to_string())
    })
}

/// A config with its model loaded and every field checked.
pub struct Prepared {
    pub config: ExperimentConfig,
    pub model: Option<Model>,
    pub inputs_hash: String,
}

/// Loads referenced files, builds the model and validates all fields.
/// Nothing is written.
pub fn prepare(text: &str, base_dir: &Path) -> Result<Prepared> {
    let config = parse_config(text)?;
    let mut hashed = text.as_bytes().to_vec();
    let model = match config.experiment.model_ref() {
        None => None,
        Some(ModelRef::Inline(m)) => Some(m.build(config.seed, "model")?),
        Some(ModelRef::File(p)) => {
            let path = if p.is_absolute() { p.clone() } else { base_dir.join(p) };
            let bytes = std::fs::read(&path)
                .map_err(|e| OcsError::config("model", format!("cannot read {}: {e}", path.display())))?;
            hashed.extend_from_slice(&bytes);
            let de = &mut serde_json::Deserializer::from_slice(&bytes);
            let spec: ModelSpec = serde_path_to_error::deserialize(de)
                .map_err(|e| OcsError::config(format!("model:{}", e.path()), e.into_inner().to_string()))?;
            Some(spec.build(config.seed, "model")?)
        }
    };
    validate(&config.experiment, model.as_ref())?;
    Ok(Prepared { config, model, inputs_hash: io::sha256_hex(&hashed) })
}

fn need(cond: bool, path: &str, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(OcsError::config(path, msg))
    }
}

fn validate(exp: &Experiment, model: Option<&Model>) -> Result<()> {
    let n_max = model.map_or(0, |m| m.n_max());
    let is_op = matches!(model, Some(Model::Operator(_)));
    match exp {
        Experiment::GreenOracle { z, tol, .. } => {
            need(!z.is_empty(), "z", "need at least one z")?;
            need(z.iter().all(|z| z[1] != 0.0), "z", "z must be non-real")?;
            need(*tol > 0.0, "tol", "tol must be positive")?;
            need(n_max <= 400, "model", "dense oracle limited to 400 shells")?;
        }
        Experiment::MSweep { z, n_list, .. } => {
            need(!z.is_empty(), "z", "need at least one z")?;
            need(!n_list.is_empty(), "n_list", "need at least one N")?;
            need(n_list.windows(2).all(|w| w[0] < w[1]), "n_list", "must be strictly increasing")?;
            need(n_list.iter().all(|&n| n >= 1 && n as i64 <= n_max), "n_list", "N outside the model's shells")?;
        }
        Experiment::Weyl { z, n_max: nm, .. } => {
            need(z[1] != 0.0, "z", "z must be non-real")?;
            need(*nm >= 1 && *nm <= n_max, "n_max", "n_max outside the model's shells")?;
        }
        Experiment::DensityHalfline { grid, window, point_masses, .. } => {
            grid.points("grid")?;
            need(window[0] >= 1 && window[0] <= window[1] && window[1] <= n_max, "window", "need 1 ≤ lo ≤ hi ≤ N")?;
            need(!point_masses || is_op, "point_masses", "point masses need an explicit operator model")?;
            if let Some(Model::Operator(op)) = model {
                need(op.geometry() == Geometry::Half, "model.geometry", "half-line density needs a half-line model")?;
            }
        }
        Experiment::DensityFullline { grid, m_window, n_window, nodes, .. } => {
            grid.points("grid")?;
            let n_min = model.map_or(1, |m| m.n_min());
            need(matches!(model, Some(Model::Operator(op)) if op.geometry() == Geometry::Full), "model.geometry", "full-line density needs a full-line model")?;
            need(m_window[0] >= 0 && m_window[0] <= m_window[1] && -m_window[1] >= n_min, "m_window", "need 0 ≤ lo ≤ hi with -hi within the left shells")?;
            need(n_window[0] >= 0 && n_window[0] <= n_window[1] && n_window[1] <= n_max, "n_window", "need 0 ≤ lo ≤ hi ≤ N")?;
            need(*nodes >= 1, "nodes", "need at least one node")?;
        }
        Experiment::AcCriterion { p, interval, n_list, nodes, .. } => {
            need(*p > 2.0, "p", "p must exceed 2")?;
            need(interval[0] < interval[1], "interval", "need lo < hi")?;
            need(!n_list.is_empty() && n_list.windows(2).all(|w| w[0] < w[1]), "n_list", "must be nonempty and strictly increasing")?;
            need(n_list.iter().all(|&n| n >= 1 && n <= n_max), "n_list", "n outside the model's shells")?;
            need(*nodes >= 1, "nodes", "need at least one node")?;
        }
        Experiment::IntervalS { disorder, grid } => {
            disorder.validate().map_err(|e| OcsError::config("disorder", e.to_string()))?;
            grid.points("grid")?;
        }
        Experiment::IntervalA { family, grid } => {
            need(matches!(family, FamilySpec::Partial { .. }), "family", "interval_A needs a partial family")?;
            family.build("family")?;
            grid.points("grid")?;
        }
        Experiment::MomentBound { family, lambda, n_max, n_points, trials } => {
            let fam = family.build("family")?;
            need(*n_max >= 1, "n_max", "need n_max ≥ 1")?;
            need(*n_points >= 1, "n_points", "need n_points ≥ 1")?;
            need(*trials >= 1, "trials", "trials must be ≥ 1")?;
            let lim = fam.limit(*lambda).map_err(|e| OcsError::config("lambda", e.to_string()))?;
            need(lim.elliptic, "lambda", "the limit transfer matrix is not elliptic at this energy")?;
        }
        Experiment::WellBalanced { family, lambda, sizes, k_max, trials, .. } => {
            let fam = family.build("family")?;
            need(sizes.len() >= 2 && sizes.windows(2).all(|w| w[0] < w[1]) && sizes[0] >= 1, "sizes", "need ≥ 2 strictly increasing positive sizes")?;
            need(*k_max >= 1, "k_max", "need k_max ≥ 1")?;
            need(*trials >= 1, "trials", "trials must be ≥ 1")?;
            fam.limit(*lambda).map_err(|e| OcsError::config("lambda", e.to_string()))?;
        }
        Experiment::FiniteEigenfunctions { shell_lo, shell_hi, .. } => {
            need(is_op, "model", "finite eigenfunctions need an explicit operator model")?;
            need(*shell_lo >= 1 && shell_lo <= shell_hi && *shell_hi <= n_max, "shell_lo", "need 1 ≤ shell_lo ≤ shell_hi ≤ N")?;
        }
    }
    Ok(())
}

/// Writes the artifacts of one experiment; returns the JSON summary.
fn execute(exp: &Experiment, model: Option<&Model>, seed: u64, out: &mut OutputDir) -> Result<serde_json::Value> {
    match exp {
        Experiment::GreenOracle { z, c, tol, export_dense, .. } => {
            let op = model.expect("validated").operator()?;
            run_green_oracle(&op, z, *c, *tol, *export_dense, out)
        }
        Experiment::MSweep { z, n_list, c, methods, .. } => {
            let op = model.expect("validated").operator()?;
            let mut cells = Vec::new();
            for zz in z {
                for &n in n_list {
                    for &cc in c {
                        for &m in methods {
                            cells.push((c64(zz[0], zz[1]), n, cc, m));
                        }
                    }
                }
            }
            let rows = cells
                .par_iter()
                .map(|&(z, n, c, m)| m_function(&op, n, c64(c, 0.0), z, m).map(|s| io::m_sweep_row(&s)))
                .collect::<Result<Vec<_>>>()?;
            out.csv("m_sweep.csv", &[], &rows)?;
            Ok(json!({ "rows": rows.len() }))
        }
        Experiment::Weyl { z, n_max, .. } => {
            let op = model.expect("validated").operator()?;
            let z = c64(z[0], z[1]);
            let circles = weyl_circles(&op, z, *n_max)?;
            let rows: Vec<_> = circles.iter().map(io::weyl_row).collect();
            out.csv("weyl.csv", &[], &rows)?;
            let products = transfer_products(&op, z, 0, *n_max)?;
            let trows: Vec<_> = products.iter().skip(1).map(io::transfer_row).collect();
            out.csv("transfer.csv", &[], &trows)?;
            let diag = limit_point_diagnostic(&op, z, *n_max)?;
            Ok(json!({ "verdict": diag.verdict, "first_below": diag.first_below, "final_radius": diag.radii.last() }))
        }
        Experiment::DensityHalfline { grid, window, point_masses, .. } => {
            let model = model.expect("validated");
            let grid = grid.points("grid")?;
            let mut est = halfline_density(model.cocycle(), &grid, (window[0], window[1]))?;
            let mut atoms = 0;
            if *point_masses {
                let op = model.operator()?;
                atoms = detect_point_masses(&op, &mut est, window[1])?.len();
            }
            out.csv("density.csv", io::DENSITY_HEADER, &io::density_rows(&est))?;
            out.csv("point_masses.csv", io::POINT_MASS_HEADER, &io::point_mass_rows(&est.point_masses))?;
            let (lo, hi) = (grid[0], grid[grid.len() - 1]);
            Ok(json!({
                "density_mass": est.density_mass(lo, hi),
                "atom_mass": est.total_atom_mass(),
                "masked": est.masked.iter().filter(|&&m| m).count(),
                "eigenfunctions": atoms,
            }))
        }
        Experiment::DensityFullline { grid, m_window, n_window, nodes, .. } => {
            let grid = grid.points("grid")?;
            let est = fullline_density(
                model.expect("validated").cocycle(),
                &grid,
                (m_window[0], m_window[1]),
                (n_window[0], n_window[1]),
                *nodes,
            )?;
            out.csv("density.csv", io::DENSITY_HEADER, &io::density_rows(&est))?;
            let (lo, hi) = (grid[0], grid[grid.len() - 1]);
            Ok(json!({ "density_mass": est.density_mass(lo, hi), "masked": est.masked.iter().filter(|&&m| m).count() }))
        }
        Experiment::AcCriterion { p, interval, n_list, nodes, .. } => {
            let r = ac_criterion(model.expect("validated").cocycle(), *p, (interval[0], interval[1]), n_list, *nodes)?;
            #[derive(Serialize)]
            struct Row {
                n: i64,
                log_integral: f64,
            }
            let rows: Vec<Row> =
                r.n_list.iter().zip(&r.log_integrals).map(|(&n, &l)| Row { n, log_integral: l }).collect();
            out.csv("ac_criterion.csv", &["n", "log_integral"], &rows)?;
            Ok(json!({
                "verdict": r.verdict,
                "log_liminf_proxy": r.log_liminf_proxy,
                "log_reference_min": r.log_reference_min,
                "masked": r.masked.len(),
            }))
        }
        Experiment::IntervalS { disorder, grid } => {
            let grid = grid.points("grid")?;
            let report = interval_s(disorder, &grid);
            let traces: Vec<Option<f64>> =
                grid.par_iter().map(|&l| limit_transfer_stretched(disorder, l).ok().map(|t| t.trace)).collect();
            write_interval(out, "interval_S.csv", &report, &traces)
        }
        Experiment::IntervalA { family, grid } => {
            let Family::Partial(spec) = family.build("family")? else { unreachable!() };
            let grid = grid.points("grid")?;
            let report = interval_a(&spec, &grid);
            let traces: Vec<Option<f64>> =
                grid.par_iter().map(|&l| limit_transfer_partial(&spec, l).ok().map(|t| t.trace)).collect();
            write_interval(out, "interval_A.csv", &report, &traces)
        }
        Experiment::MomentBound { family, lambda, n_max, n_points, trials } => {
            let fam = family.build("family")?;
            let lim = fam.limit(*lambda)?;
            let t = Matrix2::new(lim.matrix[0][0], lim.matrix[0][1], lim.matrix[1][0], lim.matrix[1][1]);
            let ns = log_points(*n_max, *n_points);
            let label = match fam {
                Family::Stretched(_) => "stretched",
                Family::Partial(_) => "partial",
            };
            let r = moment_bound_check(&t, |n, rng| fam.sample_transfer(n, *lambda, rng), label, *n_max, &ns, *trials, seed)?;
            #[derive(Serialize)]
            struct Row {
                n: usize,
                estimate: f64,
                stderr: f64,
                bound: f64,
            }
            let rows: Vec<Row> = r
                .ns
                .iter()
                .zip(&r.estimates)
                .zip(&r.stderr)
                .map(|((&n, &e), &s)| Row { n, estimate: e, stderr: s, bound: r.bound })
                .collect();
            out.csv("moment_bound.csv", &["n", "estimate", "stderr", "bound"], &rows)?;
            let summary = json!({
                "bound": r.bound,
                "max_estimate": r.max_estimate,
                "pass": r.pass,
                "c": r.c,
                "f": r.f,
                "trace": r.trace,
                "bound_conjugated": r.bound_conjugated,
            });
            out.json("summary.json", &summary)?;
            if !r.pass {
                return Err(OcsError::Acceptance(format!(
                    "moment estimate {} (+3σ) exceeds bound {}",
                    r.max_estimate, r.bound
                )));
            }
            Ok(summary)
        }
        Experiment::WellBalanced { family, lambda, quantity, sizes, k_max, trials } => {
            let fam = family.build("family")?;
            let lim = fam.limit(*lambda)?;
            let limit = match (lim.source, quantity) {
                (LimitSource::Stretched { alpha, .. }, Quantity::Alpha | Quantity::Delta) => alpha,
                (LimitSource::Stretched { beta, .. }, Quantity::Beta) => beta,
                (LimitSource::Partial { alpha, .. }, Quantity::Alpha) => alpha,
                (LimitSource::Partial { beta, .. }, Quantity::Beta) => beta,
                (LimitSource::Partial { delta, .. }, Quantity::Delta) => delta,
            };
            let sampler = |s: usize, rng: &mut ChaCha8Rng| {
                let f = fam.with_sizes(SizeLaw::Const(s));
                let g = match &f {
                    Family::Stretched(sp) => anderson_lab::sample_shell_stretched(sp, 1, *lambda, rng),
                    Family::Partial(sp) => anderson_lab::sample_shell_partial(sp, 1, *lambda, rng),
                }
                .map(|(g, _)| g);
                match g {
                    Ok(g) => match quantity {
                        Quantity::Alpha => g.alpha.re,
                        Quantity::Beta => g.beta.re,
                        Quantity::Delta => g.delta.re,
                    },
                    Err(_) => f64::NAN,
                }
            };
            let r = well_balanced_check(sampler, limit, sizes, *k_max, *trials, seed);
            if r.moments.iter().flatten().any(|x| !x.is_finite()) {
                return Err(OcsError::DenominatorBlowup { value: 0.0 });
            }
            #[derive(Serialize)]
            struct Row {
                size: usize,
                k: usize,
                moment: f64,
                mean_deviation: f64,
                mean_stderr: f64,
            }
            let mut rows = Vec::new();
            for (i, &s) in r.sizes.iter().enumerate() {
                for k in 0..r.moments.len() {
                    rows.push(Row {
                        size: s,
                        k: k + 1,
                        moment: r.moments[k][i],
                        mean_deviation: r.mean_deviation[i],
                        mean_stderr: r.mean_stderr[i],
                    });
                }
            }
            out.csv("well_balanced.csv", &["size", "k", "moment", "mean_deviation", "mean_stderr"], &rows)?;
            let summary = json!({
                "limit": limit,
                "moment_slopes": r.moment_slopes,
                "mean_slope": r.mean_slope,
                "mean_below_noise": r.mean_below_noise,
                "pass": r.pass,
            });
            out.json("summary.json", &summary)?;
            if !r.pass {
                return Err(OcsError::Acceptance(format!("moment slopes {:?} off the expected rates", r.moment_slopes)));
            }
            Ok(summary)
        }
        Experiment::FiniteEigenfunctions { shell_lo, shell_hi, .. } => {
            let op = model.expect("validated").operator()?;
            let efs = finite_eigenfunctions(&op, *shell_lo, *shell_hi)?;
            #[derive(Serialize)]
            struct Row {
                lambda: f64,
                shell_l: i64,
                shell_m: i64,
                case_tag: String,
                weight: f64,
                residual: f64,
                cross: f64,
            }
            let rows = efs
                .iter()
                .map(|e| {
                    Ok(Row {
                        lambda: e.lambda,
                        shell_l: e.first,
                        shell_m: e.last,
                        case_tag: e.case_tag(),
                        weight: e.upsilon1_weight(&op)?,
                        residual: e.residual,
                        cross: e.cross,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            out.csv(
                "finite_eigenfunctions.csv",
                &["lambda", "shell_l", "shell_m", "case_tag", "weight", "residual", "cross"],
                &rows,
            )?;
            Ok(json!({ "count": rows.len() }))
        }
    }
}

fn write_interval(
    out: &mut OutputDir,
    name: &str,
    report: &anderson_lab::IntervalReport,
    traces: &[Option<f64>],
) -> Result<serde_json::Value> {
    #[derive(Serialize)]
    struct Row {
        lambda: f64,
        trace: Option<f64>,
        in_domain: bool,
        elliptic: bool,
    }
    let rows: Vec<Row> = report
        .grid
        .iter()
        .zip(traces)
        .zip(&report.mask)
        .map(|((&lambda, &trace), &elliptic)| Row { lambda, trace, in_domain: trace.is_some(), elliptic })
        .collect();
    out.csv(name, &["lambda", "trace", "in_domain", "elliptic"], &rows)?;
    #[derive(Serialize)]
    struct Iv {
        lo: f64,
        hi: f64,
    }
    let ivs: Vec<Iv> = report.intervals.iter().map(|&(lo, hi)| Iv { lo, hi }).collect();
    out.csv("intervals.csv", &["lo", "hi"], &ivs)?;
    Ok(json!({ "intervals": report.intervals }))
}

fn run_green_oracle(
    op: &OneChannelOperator,
    zs: &[[f64; 2]],
    c: f64,
    tol: f64,
    export_dense: bool,
    out: &mut OutputDir,
) -> Result<serde_json::Value> {
    let n = op.n_max() as usize;
    let c = c64(c, 0.0);
    let trunc = assemble_dense(op, n, c, None)?;
    #[derive(Serialize)]
    struct Row {
        re_z: f64,
        im_z: f64,
        m: i64,
        n: i64,
        quantity: &'static str,
        rel_error: f64,
    }
    let mut rows = Vec::new();
    for (iz, zz) in zs.iter().enumerate() {
        let z = c64(zz[0], zz[1]);
        let dense = trunc.resolvent(z)?;
        if export_dense && iz == 0 {
            out.dense("resolvent.csv", &dense)?;
        }
        let green = GreenData::new(op, n, c, z)?;
        let cells: Vec<(i64, i64)> = (1..=n as i64).flat_map(|m| (1..=n as i64).map(move |k| (m, k))).collect();
        let part = cells
            .par_iter()
            .map(|&(m, k)| -> Result<Vec<Row>> {
                let rm = trunc.block_range(m);
                let rk = trunc.block_range(k);
                let d = dense.view((rm.start, rk.start), (rm.len(), rk.len())).into_owned();
                let b = green.block(op, m, k)?;
                let rel = |x: C64, y: C64| (x - y).norm() / y.norm().max(1e-300);
                let mut v = vec![Row {
                    re_z: z.re,
                    im_z: z.im,
                    m,
                    n: k,
                    quantity: "block",
                    rel_error: (&b - &d).norm() / d.norm().max(1e-300),
                }];
                let (sm, sk) = (op.shell(m)?, op.shell(k)?);
                for (lm, ln, name, xm, yk) in [
                    (Mode::Upsilon, Mode::Upsilon, "ups_ups", &sm.upsilon, &sk.upsilon),
                    (Mode::Upsilon, Mode::Phi, "ups_phi", &sm.upsilon, &sk.phi),
                    (Mode::Phi, Mode::Upsilon, "phi_ups", &sm.phi, &sk.upsilon),
                    (Mode::Phi, Mode::Phi, "phi_phi", &sm.phi, &sk.phi),
                ] {
                    let want = xm.dotc(&(&d * yk));
                    let got = green.overlap(op, lm, m, ln, k)?;
                    v.push(Row { re_z: z.re, im_z: z.im, m, n: k, quantity: name, rel_error: rel(got, want) });
                }
                Ok(v)
            })
            .collect::<Result<Vec<_>>>()?;
        rows.extend(part.into_iter().flatten());
    }
    let max = rows.iter().map(|r| r.rel_error).fold(0.0, f64::max);
    out.csv("green_oracle.csv", &["re_z", "im_z", "m", "n", "quantity", "rel_error"], &rows)?;
    let pass = max <= tol;
    let summary = json!({ "max_rel_error": max, "tol": tol, "pass": pass });
    if !pass {
        return Err(OcsError::Acceptance(format!("green oracle error {max:.3e} above {tol:.1e}")));
    }
    Ok(summary)
}

/// Options supplied on the command line.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
}

/// Outcome of a successful run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
}

/// Runs the config at `path`. Validation happens before anything is written;
/// a numerical or acceptance failure keeps the artifacts completed so far and
/// still writes the manifest.
pub fn run(path: &Path, opts: &RunOptions) -> Result<RunOutcome> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| OcsError::config(".", format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    run_text(&text, base, opts)
}

/// [`run`] on config text; relative model paths resolve against `base_dir`.
pub fn run_text(text: &str, base_dir: &Path, opts: &RunOptions) -> Result<RunOutcome> {
    let start = Instant::now();
    let prepared = prepare(text, base_dir)?;
    let cfg = &prepared.config;
    let kind = cfg.experiment.kind();
    let out_dir = opts
        .out
        .clone()
        .or_else(|| cfg.output.as_ref().map(|o| if o.is_absolute() { o.clone() } else { base_dir.join(o) }))
        .unwrap_or_else(|| PathBuf::from("out").join(kind));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads.unwrap_or(0))
        .build()
        .map_err(|e| OcsError::config("--threads", e.to_string()))?;
    let mut out = OutputDir::create(&out_dir)?;
    log::info!("running {kind} into {}", out_dir.display());
    let result = pool.install(|| execute(&cfg.experiment, prepared.model.as_ref(), cfg.seed, &mut out));
    let summary = match &result {
        Ok(s) => s.clone(),
        Err(e) => json!({ "error": e.to_string() }),
    };
    let manifest = Manifest {
        kind: kind.to_string(),
        inputs_hash: prepared.inputs_hash.clone(),
        seed: cfg.seed,
        versions: Versions::current(),
        wall_time_s: start.elapsed().as_secs_f64(),
        artifacts: out.artifacts.clone(),
        summary,
    };
    out.finish(&manifest)?;
    result?;
    Ok(RunOutcome { out_dir, manifest })
}

/// Registry entry for one experiment kind.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentInfo {
    pub kind: &'static str,
    pub description: &'static str,
    pub required: Vec<&'static str>,
    pub defaults: Vec<(&'static str, &'static str)>,
    pub outputs: Vec<&'static str>,
    pub example: serde_json::Value,
}

/// All experiment kinds with their fields and a runnable example config.
pub fn list_experiments() -> Vec<ExperimentInfo> {
    let free = json!({ "model": "jacobi", "n": 400 });
    let random = json!({ "model": "random", "n": 5, "max_size": 4 });
    let two_point = json!({ "type": "discrete", "points": [-0.2, 0.2], "weights": [0.5, 0.5] });
    let hat = json!({
        "family": "partial", "k": [2, 2, 2],
        "pattern": [[0,0,1,0,0,0],[0,0,0,1,0,0],[1,0,0,0,1,0],[0,1,0,0,0,1],[0,0,1,0,0,0],[0,0,0,1,0,0]],
        "disorder": { "type": "discrete", "points": [0.0], "weights": [1.0] }
    });
    let stretched = json!({ "family": "stretched", "sizes": "poly:d=3", "disorder": two_point });
    vec![
        ExperimentInfo {
            kind: "green_oracle",
            description: "Resolvent blocks and the four scalar overlaps from transfer data, compared with dense inversion",
            required: vec!["model", "z"],
            defaults: vec![("c", "0"), ("tol", "1e-8"), ("export_dense", "false")],
            outputs: vec!["green_oracle.csv", "resolvent.csv (optional)"],
            example: json!({ "kind": "green_oracle", "seed": 1, "model": random, "z": [[0.3, 0.5], [-1.0, 1.5]] }),
        },
        ExperimentInfo {
            kind: "m_sweep",
            description: "m-function of the truncations over z, N and boundary condition c",
            required: vec!["model", "z", "n_list"],
            defaults: vec![("c", "[0]"), ("methods", "[\"transfer\"]")],
            outputs: vec!["m_sweep.csv"],
            example: json!({ "kind": "m_sweep", "seed": 1, "model": { "model": "jacobi", "n": 200 },
                "z": [[0.0, 1.0]], "n_list": [10, 50, 200], "methods": ["transfer", "dense"] }),
        },
        ExperimentInfo {
            kind: "weyl",
            description: "Weyl circle radii and centres with a limit-point verdict, plus transfer products",
            required: vec!["model", "z", "n_max"],
            defaults: vec![],
            outputs: vec!["weyl.csv", "transfer.csv"],
            example: json!({ "kind": "weyl", "seed": 1, "model": { "model": "jacobi", "n": 200 }, "z": [0.0, 1.0], "n_max": 200 }),
        },
        ExperimentInfo {
            kind: "density_halfline",
            description: "Transfer-matrix density of the half-line spectral measure, optionally with point masses",
            required: vec!["model", "grid", "window"],
            defaults: vec![("point_masses", "false")],
            outputs: vec!["density.csv", "point_masses.csv"],
            example: json!({ "kind": "density_halfline", "seed": 1, "model": free,
                "grid": { "lo": -2.5, "hi": 2.5, "n": 501 }, "window": [200, 400] }),
        },
        ExperimentInfo {
            kind: "density_fullline",
            description: "Full-line density from both half-line transfer products",
            required: vec!["model", "grid", "m_window", "n_window"],
            defaults: vec![("nodes", "64")],
            outputs: vec!["density.csv"],
            example: json!({ "kind": "density_fullline", "seed": 1,
                "model": { "model": "jacobi", "n": 200, "geometry": "full", "n_left": 201 },
                "grid": { "lo": -1.9, "hi": 1.9, "n": 39 }, "m_window": [100, 200], "n_window": [100, 200] }),
        },
        ExperimentInfo {
            kind: "ac_criterion",
            description: "Integrals of ‖T_{λ,0,n}‖^p over an energy interval",
            required: vec!["model", "p", "interval", "n_list"],
            defaults: vec![("nodes", "64")],
            outputs: vec!["ac_criterion.csv"],
            example: json!({ "kind": "ac_criterion", "seed": 1, "model": { "model": "jacobi", "n": 300 },
                "p": 4.0, "interval": [-1.0, 1.0], "n_list": [1, 3, 10, 30, 100, 300] }),
        },
        ExperimentInfo {
            kind: "interval_S",
            description: "Energies where the stretched-antitree limit transfer matrix is elliptic",
            required: vec!["disorder", "grid"],
            defaults: vec![],
            outputs: vec!["interval_S.csv", "intervals.csv"],
            example: json!({ "kind": "interval_S", "seed": 1, "disorder": two_point,
                "grid": { "lo": -2.5, "hi": 2.5, "n": 501 } }),
        },
        ExperimentInfo {
            kind: "interval_A",
            description: "Energies where the partial-antitree limit transfer matrix is elliptic",
            required: vec!["family", "grid"],
            defaults: vec![("family.sizes", "const:1")],
            outputs: vec!["interval_A.csv", "intervals.csv"],
            example: json!({ "kind": "interval_A", "seed": 1, "family": hat, "grid": { "lo": -2.5, "hi": 2.5, "n": 501 } }),
        },
        ExperimentInfo {
            kind: "moment_bound",
            description: "Monte-Carlo fourth moment of random cocycle products against the analytic bound",
            required: vec!["family", "lambda", "n_max", "trials"],
            defaults: vec![("n_points", "12")],
            outputs: vec!["moment_bound.csv", "summary.json"],
            example: json!({ "kind": "moment_bound", "seed": 1, "family": stretched, "lambda": 0.5,
                "n_max": 100, "trials": 1000 }),
        },
        ExperimentInfo {
            kind: "well_balanced",
            description: "Convergence rates of sampled shell data to the deterministic limit",
            required: vec!["family", "lambda", "quantity", "sizes", "trials"],
            defaults: vec![("k_max", "2")],
            outputs: vec!["well_balanced.csv", "summary.json"],
            example: json!({ "kind": "well_balanced", "seed": 1,
                "family": { "family": "stretched", "sizes": "const:1", "disorder": two_point },
                "lambda": 0.5, "quantity": "beta", "sizes": [100, 1000, 10000], "trials": 2000 }),
        },
        ExperimentInfo {
            kind: "finite_eigenfunctions",
            description: "Compactly supported eigenfunctions built from matching boundary data",
            required: vec!["model", "shell_lo", "shell_hi"],
            defaults: vec![],
            outputs: vec!["finite_eigenfunctions.csv"],
            example: json!({ "kind": "finite_eigenfunctions", "seed": 1,
                "model": { "model": "custom", "a": [-1, -1, -1, -1, -1],
                    "shells": [
                        { "v": 0.3 },
                        { "v": [[1, 0], [0, -2]], "phi": [1, 1], "upsilon": [1, 2] },
                        { "v": 0.05 },
                        { "v": [[1, 0], [0, -2]], "phi": [1, 1], "upsilon": [1, 2] },
                        { "v": 0.7 }
                    ] },
                "shell_lo": 1, "shell_hi": 5 }),
        },
    ]
}

/// Process exit code for an error.
pub fn exit_code(e: &OcsError) -> i32 {
    match e {
        OcsError::Config { .. } | OcsError::InvalidInput(_) | OcsError::Json(_) => 2,
        OcsError::Acceptance(_) => 4,
        e if e.is_numerical_guard() => 3,
        _ => 1,
    }
}
