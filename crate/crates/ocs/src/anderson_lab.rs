//! Anderson models on stretched and partial antitrees: disorder
//! distributions, exact shell reductions, deterministic limit transfer
//! matrices, the energy windows where those limits are elliptic, and Monte
//! Carlo checks of the convergence rates and of the fourth-moment bound on
//! random cocycle products.
//!
//! All families use `a_n = -1`, so with real energies every transfer matrix
//! is real with determinant `γ/β = 1`.

use crate::model_core::{OneChannelOperator, ShellData};
use crate::rng::stream;
use crate::transfer_engine::{Cocycle, GMatrix, TransferMatrix, M2};
use crate::{c64, CMat, CVec, OcsError, Result, C64};
use nalgebra::{DMatrix, DVector, Matrix2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

/// Smallest admissible `|(ω-λ)(ω'-λ) - 1|` in the stretched reduction.
pub const DENOM_GUARD: f64 = 1e-6;
/// Margin on `|Υ^*(D - λ + M)^{-1}Φ|` and on the distance to `spec(D + M)`.
pub const I0_MARGIN: f64 = 1e-6;
/// Padding of the excluded eigenvalue branches `[μ + σ-, μ + σ+]`.
pub const BRANCH_TOL: f64 = 1e-12;
/// Accuracy of refined interval endpoints.
pub const ENDPOINT_TOL: f64 = 1e-10;
/// Trials per work unit in Monte-Carlo loops. Partial sums are formed per
/// chunk and combined in chunk order, so results do not depend on the pool size.
const CHUNK: usize = 256;

fn chunks(trials: usize) -> Vec<std::ops::Range<usize>> {
    (0..trials).step_by(CHUNK).map(|lo| lo..(lo + CHUNK).min(trials)).collect()
}

/// Shell-size sequence `n ↦ s_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SizeLaw {
    /// `s_n = max(1, round(c·n^d))`.
    Poly { c: f64, d: f64 },
    Const(usize),
    /// Explicit sizes for `n = 1, 2, …`; the last entry repeats.
    List(Vec<usize>),
}

impl SizeLaw {
    pub fn size(&self, n: usize) -> usize {
        match self {
            SizeLaw::Poly { c, d } => ((c * (n as f64).powf(*d)).round() as usize).max(1),
            SizeLaw::Const(s) => (*s).max(1),
            SizeLaw::List(v) => v.get(n.saturating_sub(1)).or(v.last()).copied().unwrap_or(1).max(1),
        }
    }
}

impl FromStr for SizeLaw {
    type Err = String;

    /// Parses `poly:d=3`, `poly:c=2,d=1.5`, `const:10` or `list:1,4,9`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (kind, rest) = s.split_once(':').ok_or_else(|| format!("size law '{s}' lacks a ':'"))?;
        match kind {
            "poly" => {
                let (mut c, mut d) = (1.0, None);
                for part in rest.split(',') {
                    let (k, v) = part.split_once('=').ok_or_else(|| format!("bad poly parameter '{part}'"))?;
                    let v: f64 = v.trim().parse().map_err(|_| format!("bad number '{v}'"))?;
                    match k.trim() {
                        "c" => c = v,
                        "d" => d = Some(v),
                        other => return Err(format!("unknown poly parameter '{other}'")),
                    }
                }
                let d = d.ok_or("poly law needs d")?;
                if !(c > 0.0) || !d.is_finite() || d < 0.0 {
                    return Err("poly law needs c > 0 and d ≥ 0".into());
                }
                Ok(SizeLaw::Poly { c, d })
            }
            "const" => rest.trim().parse().map(SizeLaw::Const).map_err(|_| format!("bad size '{rest}'")),
            "list" => {
                let v = rest
                    .split(',')
                    .map(|x| x.trim().parse::<usize>().map_err(|_| format!("bad size '{x}'")))
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                if v.is_empty() || v.contains(&0) {
                    return Err("list law needs positive sizes".into());
                }
                Ok(SizeLaw::List(v))
            }
            other => Err(format!("unknown size law '{other}'")),
        }
    }
}

impl TryFrom<String> for SizeLaw {
    type Error = String;
    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl fmt::Display for SizeLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SizeLaw::Poly { c, d } => write!(f, "poly:c={c},d={d}"),
            SizeLaw::Const(s) => write!(f, "const:{s}"),
            SizeLaw::List(v) => {
                let s: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                write!(f, "list:{}", s.join(","))
            }
        }
    }
}

impl From<SizeLaw> for String {
    fn from(s: SizeLaw) -> String {
        s.to_string()
    }
}

/// Single-site distribution `ν`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DisorderSpec {
    Discrete { points: Vec<f64>, weights: Vec<f64> },
    Uniform { lo: f64, hi: f64 },
    /// Nodes and weights standing in for a continuous law; sampled as discrete.
    Quadrature { nodes: Vec<f64>, weights: Vec<f64> },
}

/// Values with multiplicities; a sample of `Σ counts` draws.
pub type Counts<T> = Vec<(T, u64)>;

fn multinomial(rng: &mut ChaCha8Rng, n: u64, weights: &[f64]) -> Vec<u64> {
    let mut left = n;
    let mut mass = 1.0;
    let mut out = Vec::with_capacity(weights.len());
    for (i, &w) in weights.iter().enumerate() {
        if i + 1 == weights.len() || left == 0 {
            out.push(left);
            left = 0;
            continue;
        }
        let p = (w / mass).clamp(0.0, 1.0);
        let c = Binomial::new(left, p).map(|b| b.sample(rng)).unwrap_or(0);
        out.push(c);
        left -= c;
        mass -= w;
    }
    out
}

impl DisorderSpec {
    pub fn point(x: f64) -> Self {
        DisorderSpec::Discrete { points: vec![x], weights: vec![1.0] }
    }

    /// `½(δ_{-σ} + δ_σ)`.
    pub fn two_point(sigma: f64) -> Self {
        DisorderSpec::Discrete { points: vec![-sigma, sigma], weights: vec![0.5, 0.5] }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DisorderSpec::Discrete { points, weights } | DisorderSpec::Quadrature { nodes: points, weights } => {
                if points.is_empty() || points.len() != weights.len() {
                    return Err(OcsError::InvalidInput("disorder points and weights must match and be nonempty".into()));
                }
                if weights.iter().any(|&w| !(w >= 0.0)) || points.iter().any(|x| !x.is_finite()) {
                    return Err(OcsError::InvalidInput("disorder weights must be nonnegative, points finite".into()));
                }
                let s: f64 = weights.iter().sum();
                if (s - 1.0).abs() > 1e-12 {
                    return Err(OcsError::InvalidInput(format!("disorder weights sum to {s}, not 1")));
                }
                Ok(())
            }
            DisorderSpec::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(OcsError::InvalidInput("uniform disorder needs lo < hi".into()));
                }
                Ok(())
            }
        }
    }

    fn atoms(&self) -> Option<(&[f64], &[f64])> {
        match self {
            DisorderSpec::Discrete { points, weights } | DisorderSpec::Quadrature { nodes: points, weights } => {
                Some((points, weights))
            }
            DisorderSpec::Uniform { .. } => None,
        }
    }

    /// Convex hull `[σ-, σ+]` of the support.
    pub fn hull(&self) -> (f64, f64) {
        match self.atoms() {
            Some((p, w)) => {
                let sup = p.iter().zip(w).filter(|(_, &w)| w > 0.0).map(|(&x, _)| x);
                let lo = sup.clone().fold(f64::INFINITY, f64::min);
                (lo, sup.fold(f64::NEG_INFINITY, f64::max))
            }
            None => match self {
                DisorderSpec::Uniform { lo, hi } => (*lo, *hi),
                _ => unreachable!(),
            },
        }
    }

    /// `max(|σ-|, |σ+|)`.
    pub fn sigma(&self) -> f64 {
        let (a, b) = self.hull();
        a.abs().max(b.abs())
    }

    /// `∫ f dν`: exact sum for atoms, double-exponential quadrature otherwise.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        match self.atoms() {
            Some((p, w)) => p.iter().zip(w).map(|(&x, &w)| w * f(x)).sum(),
            None => {
                let (lo, hi) = self.hull();
                quadrature::integrate(&f, lo, hi, 1e-12).integral / (hi - lo)
            }
        }
    }

    /// `∫∫ f(x, x') dν(x) dν(x')`.
    pub fn expect2(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        self.expect(|x| self.expect(|y| f(x, y)))
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self.atoms() {
            Some((p, w)) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (&x, &w) in p.iter().zip(w) {
                    acc += w;
                    if u < acc {
                        return x;
                    }
                }
                p[p.len() - 1]
            }
            None => {
                let (lo, hi) = self.hull();
                rng.random_range(lo..hi)
            }
        }
    }

    /// `n` draws as value counts: multinomial for atoms, individual draws
    /// otherwise.
    pub fn sample_counts(&self, rng: &mut ChaCha8Rng, n: u64) -> Counts<f64> {
        match self.atoms() {
            Some((p, w)) => p.iter().copied().zip(multinomial(rng, n, w)).filter(|(_, c)| *c > 0).collect(),
            None => (0..n).map(|_| (self.sample(rng), 1)).collect(),
        }
    }

    /// `n` iid pairs `(ω, ω')` as counts.
    pub fn sample_pair_counts(&self, rng: &mut ChaCha8Rng, n: u64) -> Counts<(f64, f64)> {
        match self.atoms() {
            Some((p, w)) => {
                let mut cats = Vec::with_capacity(p.len() * p.len());
                let mut probs = Vec::with_capacity(p.len() * p.len());
                for (i, &x) in p.iter().enumerate() {
                    for (j, &y) in p.iter().enumerate() {
                        cats.push((x, y));
                        probs.push(w[i] * w[j]);
                    }
                }
                cats.into_iter().zip(multinomial(rng, n, &probs)).filter(|(_, c)| *c > 0).collect()
            }
            None => (0..n).map(|_| ((self.sample(rng), self.sample(rng)), 1)).collect(),
        }
    }

    /// Harmonic mean `h_λ = (∫(x-λ)^{-1}dν)^{-1}` for `λ` outside the hull.
    pub fn harmonic_mean(&self, lambda: f64) -> Result<f64> {
        let (lo, hi) = self.hull();
        if lambda >= lo && lambda <= hi {
            return Err(OcsError::SupportViolation { lambda });
        }
        let m = match self {
            DisorderSpec::Uniform { lo, hi } => ((hi - lambda).abs() / (lo - lambda).abs()).ln() / (hi - lo),
            _ => self.expect(|x| 1.0 / (x - lambda)),
        };
        Ok(1.0 / m)
    }
}

/// Stretched antitree: shell `n` holds `s_n` pairs `(ω, ω')` joined by an edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StretchedAntitreeSpec {
    pub sizes: SizeLaw,
    pub disorder: DisorderSpec,
}

/// Partial antitree with homogeneous connecting modes. Every class
/// `R_{n,i}` holds `m_n = sizes(n)` vertices, so the three parts of shell `n`
/// have `k_1 m_n`, `k_2 m_n` and `k_3 m_n` vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialAntitreeSpec {
    pub k: [usize; 3],
    /// Orthogonal `k×k` matrix, row-major.
    pub o: Vec<Vec<f64>>,
    pub a_diag: Vec<f64>,
    pub sizes: SizeLaw,
    pub disorder: DisorderSpec,
}

impl PartialAntitreeSpec {
    pub fn dim(&self) -> usize {
        self.k.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        self.disorder.validate()?;
        let k = self.dim();
        if self.k[0] == 0 || self.k[2] == 0 {
            return Err(OcsError::InvalidInput("k_1 and k_3 must be positive".into()));
        }
        if self.o.len() != k || self.o.iter().any(|r| r.len() != k) || self.a_diag.len() != k {
            return Err(OcsError::InvalidInput(format!("O must be {k}×{k} and a must have {k} entries")));
        }
        let o = self.o_matrix();
        let err = (o.transpose() * &o - DMatrix::identity(k, k)).amax();
        if err > 1e-12 {
            return Err(OcsError::InvalidInput(format!("O is not orthogonal (error {err:.2e})")));
        }
        Ok(())
    }

    pub fn o_matrix(&self) -> DMatrix<f64> {
        let k = self.dim();
        DMatrix::from_fn(k, k, |i, j| self.o[i][j])
    }

    /// Pattern matrix `M = O𝐚O^*`.
    pub fn pattern(&self) -> DMatrix<f64> {
        let o = self.o_matrix();
        &o * DMatrix::from_diagonal(&DVector::from_vec(self.a_diag.clone())) * o.transpose()
    }

    /// Builds `O`, `𝐚` from a symmetric pattern matrix `M`.
    pub fn from_pattern(k: [usize; 3], m: &DMatrix<f64>, sizes: SizeLaw, disorder: DisorderSpec) -> Result<Self> {
        let n = k.iter().sum::<usize>();
        if m.nrows() != n || m.ncols() != n || (m - m.transpose()).amax() > 1e-14 {
            return Err(OcsError::InvalidInput("pattern must be a symmetric k×k matrix".into()));
        }
        let eig = m.clone().symmetric_eigen();
        let o = (0..n).map(|i| (0..n).map(|j| eig.eigenvectors[(i, j)]).collect()).collect();
        let spec = PartialAntitreeSpec { k, o, a_diag: eig.eigenvalues.iter().copied().collect(), sizes, disorder };
        spec.validate()?;
        Ok(spec)
    }

    /// The pattern with `k = (2,2,2)` and `M = P_3 ⊗ 1_2` (path on three
    /// parts, each pair of matching classes joined).
    pub fn hat(sizes: SizeLaw, disorder: DisorderSpec) -> Self {
        let mut m = DMatrix::zeros(6, 6);
        for i in 0..2 {
            for (p, q) in [(0, 2), (2, 4)] {
                m[(p + i, q + i)] = 1.0;
                m[(q + i, p + i)] = 1.0;
            }
        }
        PartialAntitreeSpec::from_pattern([2, 2, 2], &m, sizes, disorder).expect("valid pattern")
    }

    /// Unit pattern vectors `Υ` (first part) and `Φ` (third part) in `ℂ^k`.
    pub fn modes(&self) -> (DVector<f64>, DVector<f64>) {
        let k = self.dim();
        let [k1, k2, k3] = self.k;
        let ups = DVector::from_fn(k, |j, _| if j < k1 { 1.0 / (k1 as f64).sqrt() } else { 0.0 });
        let phi = DVector::from_fn(k, |j, _| if j >= k1 + k2 { 1.0 / (k3 as f64).sqrt() } else { 0.0 });
        (ups, phi)
    }
}

/// Where a limit transfer matrix came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LimitSource {
    Stretched { alpha: f64, beta: f64 },
    Partial { alpha: f64, beta: f64, delta: f64 },
}

/// Deterministic limit `T(λ)` of the random shell transfer matrices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LimitTransfer {
    pub lambda: f64,
    pub matrix: [[f64; 2]; 2],
    pub trace: f64,
    pub det: f64,
    pub elliptic: bool,
    pub source: LimitSource,
}

impl LimitTransfer {
    pub fn m2(&self) -> M2 {
        real_to_m2(&Matrix2::new(self.matrix[0][0], self.matrix[0][1], self.matrix[1][0], self.matrix[1][1]))
    }
}

fn real_to_m2(m: &Matrix2<f64>) -> M2 {
    m.map(|x| c64(x, 0.0))
}

/// `T` for real `α, β = γ, δ` and `a = -1`.
pub fn transfer_from_abd(alpha: f64, beta: f64, delta: f64) -> Matrix2<f64> {
    Matrix2::new(-1.0 / beta, alpha / beta, -delta / beta, -(beta - delta * alpha / beta))
}

fn limit_from(lambda: f64, alpha: f64, beta: f64, delta: f64, source: LimitSource) -> LimitTransfer {
    let t = transfer_from_abd(alpha, beta, delta);
    let trace = t.trace();
    LimitTransfer {
        lambda,
        matrix: [[t[(0, 0)], t[(0, 1)]], [t[(1, 0)], t[(1, 1)]]],
        trace,
        det: t.determinant(),
        elliptic: trace.abs() < 2.0,
        source,
    }
}

/// `λ ∈ I_- ∪ I_+`, checked against the support hull: `|λ - x| < 1` for all
/// `x` in the hull, or `|λ - x| > 1` with `λ` outside the hull.
pub fn in_stretched_domain(disorder: &DisorderSpec, lambda: f64) -> bool {
    let (lo, hi) = disorder.hull();
    let inner = lambda > hi - 1.0 && lambda < lo + 1.0;
    let outer = lambda < lo - 1.0 || lambda > hi + 1.0;
    inner || outer
}

/// Limit data of the stretched family: `α^S = ∫∫(x'-λ)/((x'-λ)(x-λ)-1)`,
/// `β^S = -∫∫1/((x'-λ)(x-λ)-1)` (the sign produced by the shell resolvent).
pub fn limit_transfer_stretched(disorder: &DisorderSpec, lambda: f64) -> Result<LimitTransfer> {
    if !in_stretched_domain(disorder, lambda) {
        return Err(OcsError::DomainViolation { lambda });
    }
    let den = |x: f64, y: f64| (y - lambda) * (x - lambda) - 1.0;
    let alpha = disorder.expect2(|x, y| (y - lambda) / den(x, y));
    let beta = -disorder.expect2(|x, y| 1.0 / den(x, y));
    Ok(limit_from(lambda, alpha, beta, alpha, LimitSource::Stretched { alpha, beta }))
}

/// Checks `λ ∈ I_0`: outside the hull, off `spec(D + M)` for every
/// diagonal `σ- ≤ D ≤ σ+` (exact, by monotonicity of ordered eigenvalues in
/// `D`), and `|Υ^*(D - λ + M)^{-1}Φ| > margin` on all corner diagonals plus
/// `n_random` random diagonals.
pub fn check_i0(spec: &PartialAntitreeSpec, lambda: f64, n_random: usize, seed: u64) -> Result<()> {
    let (lo, hi) = spec.disorder.hull();
    if lambda >= lo && lambda <= hi {
        return Err(OcsError::SupportViolation { lambda });
    }
    let m = spec.pattern();
    let k = spec.dim();
    let mu = m.clone().symmetric_eigen().eigenvalues;
    for &e in mu.iter() {
        if lambda >= e + lo - BRANCH_TOL && lambda <= e + hi + BRANCH_TOL {
            let d = if (lambda - e - lo).abs() < (lambda - e - hi).abs() { lo } else { hi };
            return Err(OcsError::I0Violation { lambda, witness: vec![d; k] });
        }
    }
    let (ups, phi) = spec.modes();
    let test = |d: &[f64]| -> Result<()> {
        let mut a = m.clone();
        for i in 0..k {
            a[(i, i)] += d[i] - lambda;
        }
        let beta = a.lu().solve(&phi).map(|x| ups.dot(&x));
        match beta {
            Some(b) if b.abs() > I0_MARGIN => Ok(()),
            _ => Err(OcsError::I0Violation { lambda, witness: d.to_vec() }),
        }
    };
    let corners = if k <= 12 { 1usize << k } else { 4096 };
    let mut rng = stream(seed, "i0-check", &[]);
    for c in 0..corners {
        let d: Vec<f64> = if k <= 12 {
            (0..k).map(|i| if (c >> i) & 1 == 1 { hi } else { lo }).collect()
        } else {
            (0..k).map(|_| if rng.random::<bool>() { hi } else { lo }).collect()
        };
        test(&d)?;
    }
    for _ in 0..n_random {
        let d: Vec<f64> = (0..k).map(|_| if hi > lo { rng.random_range(lo..=hi) } else { lo }).collect();
        test(&d)?;
    }
    Ok(())
}

/// Limit data of the partial family:
/// `(α β; β δ) = (Υ^*; Φ^*)(h_λ + O𝐚O^*)^{-1}(Υ Φ)`.
pub fn limit_transfer_partial(spec: &PartialAntitreeSpec, lambda: f64) -> Result<LimitTransfer> {
    check_i0(spec, lambda, 100, 0)?;
    let h = spec.disorder.harmonic_mean(lambda)?;
    let k = spec.dim();
    let mut a = spec.pattern();
    for i in 0..k {
        a[(i, i)] += h;
    }
    let inv = a.try_inverse().ok_or(OcsError::I0Violation { lambda, witness: vec![h; k] })?;
    let (ups, phi) = spec.modes();
    let alpha = ups.dot(&(&inv * &ups));
    let beta = ups.dot(&(&inv * &phi));
    let delta = phi.dot(&(&inv * &phi));
    if beta.abs() <= I0_MARGIN {
        return Err(OcsError::I0Violation { lambda, witness: vec![h; k] });
    }
    Ok(limit_from(lambda, alpha, beta, delta, LimitSource::Partial { alpha, beta, delta }))
}

/// Energy windows where a limit transfer matrix is elliptic.
#[derive(Debug, Clone, Serialize)]
pub struct IntervalReport {
    pub grid: Vec<f64>,
    pub mask: Vec<bool>,
    /// Maximal open intervals; endpoints refined to [`ENDPOINT_TOL`] except at
    /// the ends of the grid.
    pub intervals: Vec<(f64, f64)>,
}

fn golden_min(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

fn bisect_boundary(member: &dyn Fn(f64) -> bool, mut inside: f64, mut outside: f64) -> f64 {
    while (inside - outside).abs() > ENDPOINT_TOL {
        let mid = 0.5 * (inside + outside);
        if member(mid) {
            inside = mid;
        } else {
            outside = mid;
        }
    }
    0.5 * (inside + outside)
}

/// Runs of `margin(λ) > 0` on the grid, split at `critical` points (always
/// excluded), with boundaries refined by bisection and tangential zeros of the
/// margin located by golden-section search.
pub fn elliptic_intervals(margin: &(dyn Fn(f64) -> Option<f64> + Sync), grid: &[f64], critical: &[f64]) -> IntervalReport {
    let mut grid_sorted = grid.to_vec();
    grid_sorted.sort_by(f64::total_cmp);
    if grid_sorted.is_empty() {
        return IntervalReport { grid: Vec::new(), mask: Vec::new(), intervals: Vec::new() };
    }
    let (g0, g1) = (grid_sorted[0], grid_sorted[grid_sorted.len() - 1]);
    let mut pts: Vec<(f64, bool)> = grid_sorted.iter().map(|&x| (x, false)).collect();
    pts.extend(critical.iter().filter(|&&c| c >= g0 && c <= g1).map(|&c| (c, true)));
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let values: Vec<Option<f64>> = pts.par_iter().map(|&(x, crit)| if crit { None } else { margin(x) }).collect();
    let member = |x: f64| margin(x).is_some_and(|g| g > 0.0);
    let inside: Vec<bool> = values.iter().map(|v| v.is_some_and(|g| g > 0.0)).collect();
    let g = |x: f64| margin(x).unwrap_or(f64::NEG_INFINITY);
    let mut intervals = Vec::new();
    let mut i = 0;
    while i < pts.len() {
        if !inside[i] {
            i += 1;
            continue;
        }
        let mut j = i;
        while j + 1 < pts.len() && inside[j + 1] {
            j += 1;
        }
        let left = if i == 0 { pts[0].0 } else { bisect_boundary(&member, pts[i].0, pts[i - 1].0) };
        let right = if j + 1 == pts.len() { pts[j].0 } else { bisect_boundary(&member, pts[j].0, pts[j + 1].0) };
        let mut cuts = Vec::new();
        for t in i + 1..j {
            let (a, b, c) = (values[t - 1].unwrap(), values[t].unwrap(), values[t + 1].unwrap());
            if b <= a && b <= c {
                let (x, v) = golden_min(&g, pts[t - 1].0, pts[t + 1].0, ENDPOINT_TOL);
                if v < 1e-9 {
                    cuts.push(x);
                }
            }
        }
        cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-8);
        let mut lo = left;
        for c in cuts {
            intervals.push((lo, c));
            lo = c;
        }
        intervals.push((lo, right));
        i = j + 1;
    }
    let mask = grid.iter().map(|&x| !critical.iter().any(|&c| c == x) && member(x)).collect();
    IntervalReport { grid: grid.to_vec(), mask, intervals }
}

/// `I_{S,ν}` on a grid: `λ ∈ I_±` with `|tr T(λ)| < 2`.
pub fn interval_s(disorder: &DisorderSpec, grid: &[f64]) -> IntervalReport {
    let (lo, hi) = disorder.hull();
    let critical = [lo - 1.0, hi + 1.0, hi - 1.0, lo + 1.0];
    let margin = |l: f64| limit_transfer_stretched(disorder, l).ok().map(|t| 2.0 - t.trace.abs());
    elliptic_intervals(&margin, grid, &critical)
}

/// `I_{A,ν}` on a grid: `λ ∈ I_0` with `|tr T(λ)| < 2`.
pub fn interval_a(spec: &PartialAntitreeSpec, grid: &[f64]) -> IntervalReport {
    let (lo, hi) = spec.disorder.hull();
    let mut critical = vec![lo, hi];
    let mu = spec.pattern().symmetric_eigen().eigenvalues;
    for &e in mu.iter() {
        critical.push(e + lo);
        critical.push(e + hi);
    }
    let margin = |l: f64| limit_transfer_partial(spec, l).ok().map(|t| 2.0 - t.trace.abs());
    elliptic_intervals(&margin, grid, &critical)
}

/// Reduced `(α, β, γ, δ)` of a stretched shell from its pairs `(ω, ω')`.
pub fn reduce_stretched(pairs: &Counts<(f64, f64)>, z: C64, n: i64) -> Result<GMatrix> {
    let total: u64 = pairs.iter().map(|p| p.1).sum();
    if total == 0 {
        return Err(OcsError::InvalidInput("empty stretched shell".into()));
    }
    let mut alpha = c64(0.0, 0.0);
    let mut beta = c64(0.0, 0.0);
    let mut delta = c64(0.0, 0.0);
    for &((w, wp), c) in pairs {
        let p = c64(w, 0.0) - z;
        let q = c64(wp, 0.0) - z;
        let den = p * q - 1.0;
        if den.norm() < DENOM_GUARD {
            return Err(OcsError::DenominatorBlowup { value: den.norm() });
        }
        let c = c64(c as f64, 0.0);
        alpha += c * q / den;
        beta -= c / den;
        delta += c * p / den;
    }
    let s = c64(total as f64, 0.0);
    Ok(GMatrix { alpha: alpha / s, beta: beta / s, gamma: beta / s, delta: delta / s, z, n })
}

/// Explicit shell `V = [[diag ω, 1], [1, diag ω']]`, `Υ = (φ, 0)`, `Φ = (0, φ)`.
pub fn stretched_shell(pairs: &Counts<(f64, f64)>, index: i64) -> Result<ShellData> {
    let list: Vec<(f64, f64)> = pairs.iter().flat_map(|&(p, c)| std::iter::repeat_n(p, c as usize)).collect();
    let s = list.len();
    let mut v = CMat::zeros(2 * s, 2 * s);
    for (j, &(w, wp)) in list.iter().enumerate() {
        v[(j, j)] = c64(w, 0.0);
        v[(s + j, s + j)] = c64(wp, 0.0);
        v[(j, s + j)] = c64(1.0, 0.0);
        v[(s + j, j)] = c64(1.0, 0.0);
    }
    let f = c64(1.0 / (s as f64).sqrt(), 0.0);
    let ups = CVec::from_fn(2 * s, |i, _| if i < s { f } else { c64(0.0, 0.0) });
    let phi = CVec::from_fn(2 * s, |i, _| if i >= s { f } else { c64(0.0, 0.0) });
    ShellData::new(index, v, -1.0, phi, ups)
}

/// Draws the pairs of stretched shell `n` from the stream `(seed, n)`.
pub fn stretched_pairs(spec: &StretchedAntitreeSpec, n: usize, rng: &mut ChaCha8Rng) -> Counts<(f64, f64)> {
    spec.disorder.sample_pair_counts(rng, spec.sizes.size(n) as u64)
}

/// One random stretched shell at real `λ`: reduced data and transfer matrix.
pub fn sample_shell_stretched(
    spec: &StretchedAntitreeSpec,
    n: usize,
    lambda: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(GMatrix, TransferMatrix)> {
    if !in_stretched_domain(&spec.disorder, lambda) {
        return Err(OcsError::DomainViolation { lambda });
    }
    let pairs = stretched_pairs(spec, n, rng);
    let g = reduce_stretched(&pairs, c64(lambda, 0.0), n as i64)?;
    let t = TransferMatrix::from_matrix(g.transfer(-1.0), g.z, (n as i64 - 1, n as i64));
    Ok((g, t))
}

/// Potentials of a partial-antitree shell, one count list per class.
pub type ClassDraws = Vec<Counts<f64>>;

/// Draws `m_n` potentials for each of the `k` classes of shell `n`.
pub fn partial_draws(spec: &PartialAntitreeSpec, n: usize, rng: &mut ChaCha8Rng) -> ClassDraws {
    let m = spec.sizes.size(n) as u64;
    (0..spec.dim()).map(|_| spec.disorder.sample_counts(rng, m)).collect()
}

/// Reduced `(α, β, γ, δ)` of a partial shell via the `k×k` system
/// `(V̂_z + O𝐚O^*)^{-1}` with `V̂_z^{-1} = diag(mean 1/(ω - z))` per class.
pub fn reduce_partial(spec: &PartialAntitreeSpec, draws: &ClassDraws, z: C64, n: i64) -> Result<GMatrix> {
    let k = spec.dim();
    let mut a = spec.pattern().map(|x| c64(x, 0.0));
    for (j, cls) in draws.iter().enumerate() {
        let total: u64 = cls.iter().map(|p| p.1).sum();
        let mut acc = c64(0.0, 0.0);
        for &(w, c) in cls {
            let d = c64(w, 0.0) - z;
            if d.norm() < DENOM_GUARD {
                return Err(OcsError::DenominatorBlowup { value: d.norm() });
            }
            acc += c64(c as f64, 0.0) / d;
        }
        let mean = acc / c64(total as f64, 0.0);
        if mean.norm() < DENOM_GUARD {
            return Err(OcsError::DenominatorBlowup { value: mean.norm() });
        }
        a[(j, j)] += c64(1.0, 0.0) / mean;
    }
    let (ups, phi) = spec.modes();
    let ups = ups.map(|x| c64(x, 0.0));
    let phi = phi.map(|x| c64(x, 0.0));
    let lu = a.lu();
    let xu = lu.solve(&ups).ok_or(OcsError::DenseFailure(format!("k×k system singular on shell {n}")))?;
    let xp = lu.solve(&phi).ok_or(OcsError::DenseFailure(format!("k×k system singular on shell {n}")))?;
    let _ = k;
    Ok(GMatrix {
        alpha: ups.dot(&xu),
        beta: ups.dot(&xp),
        gamma: phi.dot(&xu),
        delta: phi.dot(&xp),
        z,
        n,
    })
}

/// Explicit shell `V = O_n𝐚O_n^* + diag(ω)` of size `k m_n` with
/// `(O_n)_{x,j} = O_{class(x), j}/√m_n`, `Υ_n` uniform on the first part and
/// `Φ_n` uniform on the third.
pub fn partial_shell(spec: &PartialAntitreeSpec, draws: &ClassDraws, index: i64) -> Result<ShellData> {
    let k = spec.dim();
    let mut class_of = Vec::new();
    let mut pot = Vec::new();
    for (j, cls) in draws.iter().enumerate() {
        for &(w, c) in cls {
            for _ in 0..c {
                class_of.push(j);
                pot.push(w);
            }
        }
    }
    let size = pot.len();
    let counts: Vec<usize> = (0..k).map(|j| class_of.iter().filter(|&&c| c == j).count()).collect();
    let o = spec.o_matrix();
    let on = DMatrix::from_fn(size, k, |x, j| o[(class_of[x], j)] / (counts[class_of[x]] as f64).sqrt());
    let a = DMatrix::from_diagonal(&DVector::from_vec(spec.a_diag.clone()));
    let mut v = &on * a * on.transpose();
    for x in 0..size {
        v[(x, x)] += pot[x];
    }
    let [k1, k2, _] = spec.k;
    let part = |x: usize| {
        let c = class_of[x];
        if c < k1 {
            0
        } else if c < k1 + k2 {
            1
        } else {
            2
        }
    };
    let r1 = (0..size).filter(|&x| part(x) == 0).count() as f64;
    let r3 = (0..size).filter(|&x| part(x) == 2).count() as f64;
    let ups = CVec::from_fn(size, |x, _| if part(x) == 0 { c64(1.0 / r1.sqrt(), 0.0) } else { c64(0.0, 0.0) });
    let phi = CVec::from_fn(size, |x, _| if part(x) == 2 { c64(1.0 / r3.sqrt(), 0.0) } else { c64(0.0, 0.0) });
    ShellData::new(index, v.map(|x| c64(x, 0.0)), -1.0, phi, ups)
}

/// One random partial-antitree shell at real `λ`.
pub fn sample_shell_partial(
    spec: &PartialAntitreeSpec,
    n: usize,
    lambda: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(GMatrix, TransferMatrix)> {
    let (lo, hi) = spec.disorder.hull();
    if lambda >= lo && lambda <= hi {
        return Err(OcsError::SupportViolation { lambda });
    }
    let draws = partial_draws(spec, n, rng);
    let g = reduce_partial(spec, &draws, c64(lambda, 0.0), n as i64)?;
    let t = TransferMatrix::from_matrix(g.transfer(-1.0), g.z, (n as i64 - 1, n as i64));
    Ok((g, t))
}

/// A fixed realization of a random antitree, usable as a cocycle. Shell
/// potentials come from the stream `(seed, family, n)` and are cached.
pub struct Realization {
    family: Family,
    seed: u64,
    shells: Vec<OnceLock<ShellDraw>>,
}

#[derive(Debug, Clone)]
enum Family {
    Stretched(StretchedAntitreeSpec),
    Partial(PartialAntitreeSpec),
}

#[derive(Debug, Clone)]
enum ShellDraw {
    Pairs(Counts<(f64, f64)>),
    Classes(ClassDraws),
}

impl Realization {
    pub fn stretched(spec: StretchedAntitreeSpec, seed: u64, n_max: usize) -> Self {
        Realization { family: Family::Stretched(spec), seed, shells: (0..n_max).map(|_| OnceLock::new()).collect() }
    }

    pub fn partial(spec: PartialAntitreeSpec, seed: u64, n_max: usize) -> Self {
        Realization { family: Family::Partial(spec), seed, shells: (0..n_max).map(|_| OnceLock::new()).collect() }
    }

    pub fn n_max(&self) -> usize {
        self.shells.len()
    }

    fn draw(&self, n: i64) -> Result<&ShellDraw> {
        if n < 1 || n as usize > self.shells.len() {
            return Err(OcsError::InvalidInput(format!("shell {n} outside the realization 1..={}", self.shells.len())));
        }
        Ok(self.shells[n as usize - 1].get_or_init(|| match &self.family {
            Family::Stretched(s) => {
                let mut rng = stream(self.seed, "stretched-shell", &[n as u64]);
                ShellDraw::Pairs(stretched_pairs(s, n as usize, &mut rng))
            }
            Family::Partial(p) => {
                let mut rng = stream(self.seed, "partial-shell", &[n as u64]);
                ShellDraw::Classes(partial_draws(p, n as usize, &mut rng))
            }
        }))
    }

    /// Reduced data of shell `n` at `z`.
    pub fn g_matrix(&self, n: i64, z: C64) -> Result<GMatrix> {
        match (self.draw(n)?, &self.family) {
            (ShellDraw::Pairs(p), _) => reduce_stretched(p, z, n),
            (ShellDraw::Classes(c), Family::Partial(spec)) => reduce_partial(spec, c, z, n),
            _ => unreachable!(),
        }
    }

    /// Explicit shell `n` (size `2s_n` or `k m_n`).
    pub fn shell(&self, n: i64) -> Result<ShellData> {
        match (self.draw(n)?, &self.family) {
            (ShellDraw::Pairs(p), _) => stretched_shell(p, n),
            (ShellDraw::Classes(c), Family::Partial(spec)) => partial_shell(spec, c, n),
            _ => unreachable!(),
        }
    }

    /// Explicit half-line operator on shells `1..=n`.
    pub fn operator(&self, n: usize) -> Result<OneChannelOperator> {
        OneChannelOperator::half((1..=n as i64).map(|k| self.shell(k)).collect::<Result<Vec<_>>>()?)
    }
}

impl Cocycle for Realization {
    fn transfer(&self, n: i64, z: C64) -> Result<TransferMatrix> {
        let g = self.g_matrix(n, z)?;
        if g.beta.norm() < 1e-300 {
            return Err(OcsError::ChannelSingular { shell: n, kind: crate::error::SingularKind::BetaZero, z });
        }
        Ok(TransferMatrix::from_matrix(g.transfer(-1.0), z, (n - 1, n)))
    }

    fn coupling(&self, _n: i64) -> Result<f64> {
        Ok(-1.0)
    }
}

/// Outcome of a well-balanced convergence check.
#[derive(Debug, Clone, Serialize)]
pub struct WellBalancedReport {
    pub sizes: Vec<usize>,
    /// `moments[k-1][i] = E|X_n - X|^k` at `sizes[i]`.
    pub moments: Vec<Vec<f64>>,
    pub mean_deviation: Vec<f64>,
    pub mean_stderr: Vec<f64>,
    /// Fitted slopes of `ln E|X_n - X|^k` against `ln s_n`.
    pub moment_slopes: Vec<Option<f64>>,
    pub mean_slope: Option<f64>,
    /// Mean deviations all within three standard errors of zero.
    pub mean_below_noise: bool,
    pub pass: bool,
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Monte-Carlo moments of `X_n - X` for `X_n = sampler(s, rng)` at each size,
/// with trial `t` using the stream `(seed, label, [size, t])`. Passes when the
/// slope of `ln E|X_n - X|^k` in `ln s` is within 0.15 of `-k/2` for
/// `k = 1..2K` and the mean deviation decays with slope `-1 ± 0.3` or stays
/// below the Monte-Carlo noise floor.
pub fn well_balanced_check<F>(
    sampler: F,
    limit: f64,
    sizes: &[usize],
    k_max: usize,
    trials: usize,
    seed: u64,
) -> WellBalancedReport
where
    F: Fn(usize, &mut ChaCha8Rng) -> f64 + Sync,
{
    let kk = 2 * k_max;
    let mut moments = vec![Vec::with_capacity(sizes.len()); kk];
    let mut mean_deviation = Vec::new();
    let mut mean_stderr = Vec::new();
    for &s in sizes {
        let add = |(mut a, x): (Vec<f64>, f64), (b, y): (Vec<f64>, f64)| {
            for (p, q) in a.iter_mut().zip(&b) {
                *p += q;
            }
            (a, x + y)
        };
        let zero = || (vec![0.0; kk + 1], 0.0);
        let (sums, sq) = chunks(trials)
            .into_par_iter()
            .map(|range| {
                range
                    .map(|t| {
                        let mut rng = stream(seed, "well-balanced", &[s as u64, t as u64]);
                        let d = sampler(s, &mut rng) - limit;
                        let mut v = vec![0.0; kk + 1];
                        v[0] = d;
                        for k in 1..=kk {
                            v[k] = d.abs().powi(k as i32);
                        }
                        (v, d * d)
                    })
                    .fold(zero(), add)
            })
            .collect::<Vec<_>>()
            .into_iter()
            .fold(zero(), add);
        let tr = trials as f64;
        let mean = sums[0] / tr;
        for k in 1..=kk {
            moments[k - 1].push(sums[k] / tr);
        }
        let var = (sq / tr - mean * mean).max(0.0);
        mean_deviation.push(mean.abs());
        mean_stderr.push((var / tr).sqrt());
    }
    let lx: Vec<f64> = sizes.iter().map(|&s| (s as f64).ln()).collect();
    let slope_of = |ys: &[f64]| {
        if ys.iter().all(|&y| y > 0.0) && sizes.len() >= 2 {
            Some(fit_slope(&lx, &ys.iter().map(|y| y.ln()).collect::<Vec<_>>()))
        } else {
            None
        }
    };
    let moment_slopes: Vec<Option<f64>> = moments.iter().map(|m| slope_of(m)).collect();
    let mean_slope = slope_of(&mean_deviation);
    let mean_below_noise = mean_deviation.iter().zip(&mean_stderr).all(|(m, e)| *m <= 3.0 * e);
    let all_zero = moments.iter().all(|m| m.iter().all(|&x| x == 0.0));
    let moments_ok = moment_slopes
        .iter()
        .enumerate()
        .all(|(i, s)| s.is_some_and(|s| (s + (i + 1) as f64 / 2.0).abs() <= 0.15));
    let mean_ok = mean_below_noise || mean_slope.is_some_and(|s| (s + 1.0).abs() <= 0.3);
    WellBalancedReport {
        sizes: sizes.to_vec(),
        moments,
        mean_deviation,
        mean_stderr,
        moment_slopes,
        mean_slope,
        mean_below_noise,
        pass: all_zero || (moments_ok && mean_ok),
    }
}

/// Conjugation `B^{-1}TB ∈ SO(2)` of an elliptic `T ∈ e^{iℝ}SL(2,ℝ)` with
/// `det B = 1`, and `f(T) = ‖B‖‖B^{-1}‖`.
pub fn elliptic_conjugation(t: &M2) -> Result<(Matrix2<f64>, f64)> {
    let det = t.determinant();
    if det.norm() == 0.0 {
        return Err(OcsError::NotElliptic { trace: f64::NAN });
    }
    let phase = (det / c64(det.norm(), 0.0)).sqrt();
    let tn = t / (phase * c64(det.norm().sqrt(), 0.0));
    let scale = tn.iter().fold(0.0_f64, |a, x| a.max(x.norm()));
    if tn.iter().any(|x| x.im.abs() > 1e-10 * scale.max(1.0)) {
        let tn2 = -tn;
        if tn2.iter().any(|x| x.im.abs() > 1e-10 * scale.max(1.0)) {
            return Err(OcsError::NotElliptic { trace: tn.trace().re });
        }
    }
    let r = tn.map(|x| x.re);
    let tr = r.trace();
    if tr.abs() >= 2.0 {
        return Err(OcsError::NotElliptic { trace: tr });
    }
    let theta = (tr / 2.0).acos();
    let (s, c) = theta.sin_cos();
    // eigenvector of e^{iθ}: (T - e^{iθ})v = 0 with v = (b, e^{iθ} - t00)
    let (x, y) = if r[(0, 1)].abs() >= r[(1, 0)].abs() {
        ([r[(0, 1)], c - r[(0, 0)]], [0.0, s])
    } else {
        ([c - r[(1, 1)], r[(1, 0)]], [s, 0.0])
    };
    let mut b = Matrix2::new(x[0], y[0], x[1], y[1]);
    if b.determinant() < 0.0 {
        b.set_column(1, &(-b.column(1)));
    }
    if b[(0, 0)] < 0.0 || (b[(0, 0)] == 0.0 && b[(1, 0)] < 0.0) {
        b = -b;
    }
    let d = b.determinant();
    b /= d.sqrt();
    let binv = b.try_inverse().ok_or(OcsError::NotElliptic { trace: tr })?;
    let norm = |m: &Matrix2<f64>| m.svd(false, false).singular_values[0];
    Ok((b, norm(&b) * norm(&binv)))
}

/// Monte-Carlo test of `sup_n E‖∏(T + W_k)‖⁴ < (2f)⁴exp(8fC)`.
#[derive(Debug, Clone, Serialize)]
pub struct MomentBoundReport {
    pub t: [[f64; 2]; 2],
    pub trace: f64,
    pub noise: String,
    /// `Σ_n (‖E W_n‖ + E(‖W_n‖² + ‖W_n‖⁴))`, estimated from the trials.
    pub c: f64,
    pub f: f64,
    pub bound: f64,
    /// `C` for the conjugated noise `B^{-1}W_nB`.
    pub c_conjugated: f64,
    /// `f⁴·2⁴·exp(8C_conj)`, which follows from the conjugated argument.
    pub bound_conjugated: f64,
    pub ns: Vec<usize>,
    pub estimates: Vec<f64>,
    pub stderr: Vec<f64>,
    pub max_estimate: f64,
    pub pass: bool,
}

fn opnorm(m: &Matrix2<f64>) -> f64 {
    let f = m.iter().map(|x| x * x).sum::<f64>();
    let d = m.determinant().powi(2);
    (0.5 * (f + (f * f - 4.0 * d).max(0.0).sqrt())).sqrt()
}

/// `log_points(n_max, k)`: about `k` log-spaced integers in `1..=n_max`.
pub fn log_points(n_max: usize, k: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..k)
        .map(|i| ((n_max as f64).powf(i as f64 / (k.max(2) - 1) as f64)).round() as usize)
        .map(|x| x.clamp(1, n_max))
        .collect();
    v.dedup();
    v
}

/// Runs `trials` products `∏_{k≤n}(T + W_k)` with `T + W_k = sample(k, rng)`
/// drawn from the stream `(seed, "moment", [trial, k])`, estimating
/// `E‖·‖⁴` at the sizes `ns` and the noise constant `C` over `k ≤ n_max`.
pub fn moment_bound_check<F>(
    t: &Matrix2<f64>,
    sample: F,
    noise: &str,
    n_max: usize,
    ns: &[usize],
    trials: usize,
    seed: u64,
) -> Result<MomentBoundReport>
where
    F: Fn(usize, &mut ChaCha8Rng) -> Result<Matrix2<f64>> + Sync,
{
    let (b, f) = elliptic_conjugation(&real_to_m2(t))?;
    let binv = b.try_inverse().ok_or(OcsError::NotElliptic { trace: t.trace() })?;
    #[derive(Clone)]
    struct Acc {
        mean_w: Vec<Matrix2<f64>>,
        mean_wc: Vec<Matrix2<f64>>,
        m2: Vec<f64>,
        m4: Vec<f64>,
        m2c: Vec<f64>,
        m4c: Vec<f64>,
        p4: Vec<f64>,
        p8: Vec<f64>,
    }
    let zero = Acc {
        mean_w: vec![Matrix2::zeros(); n_max],
        mean_wc: vec![Matrix2::zeros(); n_max],
        m2: vec![0.0; n_max],
        m4: vec![0.0; n_max],
        m2c: vec![0.0; n_max],
        m4c: vec![0.0; n_max],
        p4: vec![0.0; ns.len()],
        p8: vec![0.0; ns.len()],
    };
    let add = |mut x: Acc, y: Acc| -> Acc {
        for k in 0..n_max {
            x.mean_w[k] += y.mean_w[k];
            x.mean_wc[k] += y.mean_wc[k];
            x.m2[k] += y.m2[k];
            x.m4[k] += y.m4[k];
            x.m2c[k] += y.m2c[k];
            x.m4c[k] += y.m4c[k];
        }
        for i in 0..x.p4.len() {
            x.p4[i] += y.p4[i];
            x.p8[i] += y.p8[i];
        }
        x
    };
    let trial = |tr: usize| -> Result<Acc> {
        let mut a = zero.clone();
        let mut p = Matrix2::identity();
        let mut next = 0;
        for k in 1..=n_max {
            let mut rng = stream(seed, "moment", &[tr as u64, k as u64]);
            let tk = sample(k, &mut rng)?;
            let w = tk - t;
            let wc = binv * w * b;
            a.mean_w[k - 1] += w;
            a.mean_wc[k - 1] += wc;
            let (nw, nwc) = (opnorm(&w), opnorm(&wc));
            a.m2[k - 1] += nw * nw;
            a.m4[k - 1] += nw.powi(4);
            a.m2c[k - 1] += nwc * nwc;
            a.m4c[k - 1] += nwc.powi(4);
            p = tk * p;
            while next < ns.len() && ns[next] == k {
                let q = opnorm(&p).powi(4);
                a.p4[next] += q;
                a.p8[next] += q * q;
                next += 1;
            }
        }
        Ok(a)
    };
    let acc = chunks(trials)
        .into_par_iter()
        .map(|range| range.map(trial).try_fold(zero.clone(), |x, y| y.map(|y| add(x, y))))
        .collect::<Result<Vec<Acc>>>()?
        .into_iter()
        .fold(zero.clone(), add);
    let tr = trials as f64;
    let c: f64 = (0..n_max).map(|k| opnorm(&(acc.mean_w[k] / tr)) + (acc.m2[k] + acc.m4[k]) / tr).sum();
    let cc: f64 = (0..n_max).map(|k| opnorm(&(acc.mean_wc[k] / tr)) + (acc.m2c[k] + acc.m4c[k]) / tr).sum();
    let estimates: Vec<f64> = acc.p4.iter().map(|x| x / tr).collect();
    let stderr: Vec<f64> = acc
        .p8
        .iter()
        .zip(&estimates)
        .map(|(x, m)| ((x / tr - m * m).max(0.0) / tr).sqrt())
        .collect();
    let bound = (2.0 * f).powi(4) * (8.0 * f * c).exp();
    let bound_conjugated = f.powi(4) * 16.0 * (8.0 * cc).exp();
    let pass = estimates.iter().zip(&stderr).all(|(m, e)| m + 3.0 * e < bound);
    Ok(MomentBoundReport {
        t: [[t[(0, 0)], t[(0, 1)]], [t[(1, 0)], t[(1, 1)]]],
        trace: t.trace(),
        noise: noise.to_string(),
        c,
        f,
        bound,
        c_conjugated: cc,
        bound_conjugated,
        ns: ns.to_vec(),
        max_estimate: estimates.iter().copied().fold(0.0, f64::max),
        estimates,
        stderr,
        pass,
    })
}

/// Random shell transfer matrix of the stretched family at real `λ` as a real
/// matrix, for [`moment_bound_check`].
pub fn stretched_transfer_sample(spec: &StretchedAntitreeSpec, n: usize, lambda: f64, rng: &mut ChaCha8Rng) -> Result<Matrix2<f64>> {
    let (g, _) = sample_shell_stretched(spec, n, lambda, rng)?;
    Ok(transfer_from_abd(g.alpha.re, g.beta.re, g.delta.re))
}
