//! Spectral-measure estimates from transfer-matrix norms, dense eigenvalue
//! histograms, the integral criterion for absolutely continuous spectrum and
//! compactly supported eigenfunctions.
//!
//! Densities are Cesàro averages over a window of shells `[n_lo, n_hi]` of the
//! inverse squared transfer norms. Energies where a transfer matrix is
//! undefined are masked rather than reported as errors.

use crate::model_core::{assemble_window, CyclicSubspaces, DenseTruncation, Geometry, OneChannelOperator, ShellData};
use crate::transfer_engine::{
    boundary_vectors, propagate_states, singular_set, solution_vector, special_states, transfer_products, Cocycle,
    SpecialSolution, TransferState, C2, ON_SPECTRUM_TOL,
};
use crate::{c64, CVec, OcsError, Result, C64};
use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Cross-product tolerance for the colinearity test of boundary data.
pub const COLINEAR_TOL: f64 = 1e-8;
/// Residual bound for a returned eigenfunction, relative to its norm.
pub const RESIDUAL_TOL: f64 = 1e-8;
/// Default number of midpoint nodes for the angular integral.
pub const THETA_NODES: usize = 64;

/// Origin of a [`SpectralEstimate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    TransferHalfline,
    TransferFullline,
    EigenHistogram,
}

/// An atom of a spectral measure.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointMass {
    pub lambda: f64,
    pub weight: f64,
    /// Support of the generating eigenfunction, when it comes from one.
    pub shell_l: Option<i64>,
    pub shell_m: Option<i64>,
    pub case_tag: Option<String>,
}

/// Density samples on an energy grid plus a list of point masses.
#[derive(Debug, Clone, Serialize)]
pub struct SpectralEstimate {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub masked: Vec<bool>,
    /// Windowed variance over mean of the averaged samples, per grid point.
    pub oscillation: Vec<f64>,
    pub point_masses: Vec<PointMass>,
    pub window: (i64, i64),
    pub provenance: Provenance,
}

impl SpectralEstimate {
    fn empty(provenance: Provenance, window: (i64, i64)) -> Self {
        SpectralEstimate {
            grid: Vec::new(),
            density: Vec::new(),
            masked: Vec::new(),
            oscillation: Vec::new(),
            point_masses: Vec::new(),
            window,
            provenance,
        }
    }

    /// Grid energies that could not be evaluated.
    pub fn masked_points(&self) -> Vec<f64> {
        self.grid.iter().zip(&self.masked).filter(|(_, &m)| m).map(|(&x, _)| x).collect()
    }

    /// Density with masked samples replaced by the mean of their unmasked
    /// neighbours.
    fn filled_density(&self) -> Vec<f64> {
        let n = self.grid.len();
        (0..n)
            .map(|i| {
                if !self.masked[i] {
                    return self.density[i];
                }
                let left = (0..i).rev().find(|&j| !self.masked[j]).map(|j| self.density[j]);
                let right = (i + 1..n).find(|&j| !self.masked[j]).map(|j| self.density[j]);
                match (left, right) {
                    (Some(a), Some(b)) => 0.5 * (a + b),
                    (Some(a), None) | (None, Some(a)) => a,
                    (None, None) => 0.0,
                }
            })
            .collect()
    }

    /// Mass of the density (trapezoid rule on the grid) over `[a, b]`.
    pub fn density_mass(&self, a: f64, b: f64) -> f64 {
        let d = self.filled_density();
        let f = |x: f64| -> f64 {
            let g = &self.grid;
            match g.binary_search_by(|p| p.total_cmp(&x)) {
                Ok(i) => d[i],
                Err(0) => d[0],
                Err(i) if i == g.len() => d[g.len() - 1],
                Err(i) => {
                    let t = (x - g[i - 1]) / (g[i] - g[i - 1]);
                    d[i - 1] * (1.0 - t) + d[i] * t
                }
            }
        };
        if self.grid.is_empty() || b <= a {
            return 0.0;
        }
        let mut nodes = vec![a];
        nodes.extend(self.grid.iter().copied().filter(|&x| x > a && x < b));
        nodes.push(b);
        nodes.windows(2).map(|w| 0.5 * (w[1] - w[0]) * (f(w[0]) + f(w[1]))).sum()
    }

    /// Total weight of the point masses in `[a, b)`.
    pub fn atom_mass(&self, a: f64, b: f64) -> f64 {
        self.point_masses.iter().filter(|p| p.lambda >= a && p.lambda < b).map(|p| p.weight).sum()
    }

    /// Measure of `[a, b)`: density plus atoms.
    pub fn mass(&self, a: f64, b: f64) -> f64 {
        self.density_mass(a, b) + self.atom_mass(a, b)
    }

    pub fn total_atom_mass(&self) -> f64 {
        self.point_masses.iter().map(|p| p.weight).sum()
    }
}

/// Uniform grid of `n` points on `[a, b]`.
pub fn uniform_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (a + b)],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

fn mean_and_oscillation(samples: &[f64]) -> (f64, f64) {
    let k = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / k;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / k;
    (mean, if mean > 0.0 { var / mean } else { 0.0 })
}

/// Cesàro samples `‖T_{λ,0,n}(1,0)‖^{-2}` for `n ∈ window`, or `None` when a
/// transfer matrix is undefined along the way.
fn halfline_samples<C: Cocycle + ?Sized>(cocycle: &C, lambda: f64, window: (i64, i64)) -> Option<Vec<f64>> {
    let z = c64(lambda, 0.0);
    let mut s = TransferState::new(C2::new(c64(1.0, 0.0), c64(0.0, 0.0)), 0);
    let mut out = Vec::with_capacity((window.1 - window.0 + 1).max(0) as usize);
    for n in 1..=window.1 {
        let t = cocycle.transfer(n, z).ok()?;
        s = s.step(&t);
        if n >= window.0 {
            let ln = s.vec.norm().ln() + s.log_scale;
            out.push((-2.0 * ln).exp());
        }
    }
    Some(out)
}

/// Density of the half-line measure `μ^+_{Υ_1}` as the Cesàro average over
/// `n ∈ window` of `π^{-1}‖T_{λ,0,n}(1,0)‖^{-2} / a_1²`.
pub fn halfline_density<C: Cocycle + ?Sized>(cocycle: &C, grid: &[f64], window: (i64, i64)) -> Result<SpectralEstimate> {
    if window.0 < 0 || window.1 < window.0 {
        return Err(OcsError::InvalidInput(format!("bad Cesàro window {window:?}")));
    }
    let a1 = cocycle.coupling(1)?;
    let rows: Vec<Option<(f64, f64)>> = grid
        .par_iter()
        .map(|&l| halfline_samples(cocycle, l, window).map(|s| mean_and_oscillation(&s)))
        .collect();
    let mut est = SpectralEstimate::empty(Provenance::TransferHalfline, window);
    est.grid = grid.to_vec();
    for r in rows {
        let (d, o) = r.unwrap_or((0.0, 0.0));
        est.density.push(d / (PI * a1 * a1));
        est.oscillation.push(o);
        est.masked.push(r.is_none());
    }
    Ok(est)
}

/// Log-norms `ln ‖T_{λ,0,n}(cos θ, sin θ)‖` for `n` in `window` (negative
/// indices propagate to the left).
fn angular_log_norms<C: Cocycle + ?Sized>(
    cocycle: &C,
    z: C64,
    window: (i64, i64),
    left: bool,
    angles: &[f64],
) -> Option<Vec<f64>> {
    let end = if left { -window.1 } else { window.1 };
    let prods = transfer_products(cocycle, z, 0, end).ok()?;
    let mut acc = vec![0.0; angles.len()];
    let count = (window.1 - window.0 + 1) as f64;
    for k in window.0..=window.1 {
        let t = &prods[k as usize];
        for (i, &th) in angles.iter().enumerate() {
            let v = C2::new(c64(th.cos(), 0.0), c64(th.sin(), 0.0));
            acc[i] += (-2.0 * t.log_norm_apply(&v)).exp() / count;
        }
    }
    Some(acc)
}

/// Density of `a_1²μ_{Υ_1} + μ_{Φ_0}` on the full line: `π^{-2}` times the
/// midpoint rule in `θ` of the Cesàro-averaged inverse squared norms of
/// `T_{λ,0,-m}` and `T_{λ,0,n}` applied to `(cos θ, sin θ)`.
pub fn fullline_density<C: Cocycle + ?Sized>(
    cocycle: &C,
    grid: &[f64],
    m_window: (i64, i64),
    n_window: (i64, i64),
    nodes: usize,
) -> Result<SpectralEstimate> {
    if nodes == 0 || m_window.0 < 0 || m_window.1 < m_window.0 || n_window.0 < 0 || n_window.1 < n_window.0 {
        return Err(OcsError::InvalidInput("bad full-line windows or quadrature".into()));
    }
    let h = PI / nodes as f64;
    let angles: Vec<f64> = (0..nodes).map(|i| (i as f64 + 0.5) * h).collect();
    let rows: Vec<Option<f64>> = grid
        .par_iter()
        .map(|&l| {
            let z = c64(l, 0.0);
            let f = angular_log_norms(cocycle, z, m_window, true, &angles)?;
            let g = angular_log_norms(cocycle, z, n_window, false, &angles)?;
            Some(f.iter().zip(&g).map(|(x, y)| x * y).sum::<f64>() * h / (PI * PI))
        })
        .collect();
    let mut est = SpectralEstimate::empty(Provenance::TransferFullline, n_window);
    est.grid = grid.to_vec();
    for r in rows {
        est.density.push(r.unwrap_or(0.0));
        est.oscillation.push(0.0);
        est.masked.push(r.is_none());
    }
    Ok(est)
}

/// Spectral measure of `weight` for the dense truncation: atoms
/// `|⟨weight, ψ_j⟩|²` at the eigenvalues. Total mass equals `‖weight‖²`.
pub fn eigen_histogram_dense(trunc: &DenseTruncation, weights: &[CVec]) -> Result<Vec<SpectralEstimate>> {
    let (vals, vecs) = trunc.eigen()?;
    weights
        .iter()
        .map(|w| {
            if w.len() != trunc.dim() {
                return Err(OcsError::InvalidInput("weight vector has wrong dimension".into()));
            }
            let mut est = SpectralEstimate::empty(Provenance::EigenHistogram, (trunc.first, trunc.last));
            est.point_masses = vals
                .iter()
                .enumerate()
                .map(|(j, &l)| PointMass {
                    lambda: l,
                    weight: vecs.column(j).dotc(w).norm_sqr(),
                    shell_l: None,
                    shell_m: None,
                    case_tag: None,
                })
                .collect();
            Ok(est)
        })
        .collect()
}

/// Eigenvalue histogram of `ℋ_{N,c}` for a weight vector on shells `1..=N`.
pub fn eigen_histogram(op: &OneChannelOperator, n: usize, c: f64, weight: &CVec) -> Result<SpectralEstimate> {
    let trunc = assemble_window(op, 1, n as i64, c64(c, 0.0))?;
    Ok(eigen_histogram_dense(&trunc, std::slice::from_ref(weight))?.remove(0))
}

/// Weight vector `P_n φ` on a dense truncation.
pub fn shell_vector(trunc: &DenseTruncation, n: i64, phi: &CVec) -> CVec {
    trunc.embed(n, phi)
}

/// Verdict of the integral criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcVerdict {
    BoundedLike,
    Growing,
}

/// Integrals `I_n = ∫_a^b ‖T_{λ,0,n}‖^p dλ` for a list of `n`.
#[derive(Debug, Clone, Serialize)]
pub struct AcCriterion {
    pub p: f64,
    pub interval: (f64, f64),
    pub n_list: Vec<i64>,
    pub log_integrals: Vec<f64>,
    /// `ln` of the minimum of `I_n` over the last decade of `n`.
    pub log_liminf_proxy: f64,
    /// `ln` of the minimum over the preceding decade.
    pub log_reference_min: f64,
    pub masked: Vec<f64>,
    pub verdict: AcVerdict,
}

fn log_sum_exp(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Integral criterion over `interval`: `I_n` by the midpoint rule with
/// `nodes` energies. Bounded-like when the minimum of `I_n` over the last
/// decade of `n` is at most twice the minimum over the preceding decade.
pub fn ac_criterion<C: Cocycle + ?Sized>(
    cocycle: &C,
    p: f64,
    interval: (f64, f64),
    n_list: &[i64],
    nodes: usize,
) -> Result<AcCriterion> {
    if p <= 2.0 {
        return Err(OcsError::InvalidInput(format!("p = {p} must exceed 2")));
    }
    if n_list.is_empty() || nodes == 0 || interval.1 <= interval.0 {
        return Err(OcsError::InvalidInput("empty n list, quadrature or interval".into()));
    }
    let mut ns = n_list.to_vec();
    ns.sort_unstable();
    ns.dedup();
    let n_max = *ns.last().unwrap();
    let h = (interval.1 - interval.0) / nodes as f64;
    let lambdas: Vec<f64> = (0..nodes).map(|i| interval.0 + (i as f64 + 0.5) * h).collect();
    let rows: Vec<Option<Vec<f64>>> = lambdas
        .par_iter()
        .map(|&l| {
            let prods = transfer_products(cocycle, c64(l, 0.0), 0, n_max).ok()?;
            Some(ns.iter().map(|&n| p * prods[n as usize].log_norm()).collect())
        })
        .collect();
    let masked: Vec<f64> = lambdas.iter().zip(&rows).filter(|(_, r)| r.is_none()).map(|(&l, _)| l).collect();
    let good: Vec<&Vec<f64>> = rows.iter().flatten().collect();
    if good.is_empty() {
        return Err(OcsError::InvalidInput("every quadrature energy is masked".into()));
    }
    let log_integrals: Vec<f64> =
        (0..ns.len()).map(|k| log_sum_exp(good.iter().map(|r| r[k])) + h.ln()).collect();
    let tail_start = n_max as f64 / 10.0;
    let prev_start = n_max as f64 / 100.0;
    let min_where = |pred: &dyn Fn(f64) -> bool| {
        ns.iter()
            .zip(&log_integrals)
            .filter(|(&n, _)| pred(n as f64))
            .map(|(_, &v)| v)
            .fold(f64::INFINITY, f64::min)
    };
    let tail = min_where(&|n| n >= tail_start);
    let mut reference = min_where(&|n| n >= prev_start && n < tail_start);
    if !reference.is_finite() {
        reference = min_where(&|n| n < tail_start);
    }
    if !reference.is_finite() {
        reference = log_integrals[0];
    }
    let verdict = if tail <= reference + 2f64.ln() { AcVerdict::BoundedLike } else { AcVerdict::Growing };
    Ok(AcCriterion {
        p,
        interval,
        n_list: ns,
        log_integrals,
        log_liminf_proxy: tail,
        log_reference_min: reference,
        masked,
        verdict,
    })
}

/// An eigenfunction supported on finitely many shells.
#[derive(Debug, Clone)]
pub struct FiniteEigenfunction {
    pub lambda: f64,
    /// First and last shell of the support; blocks outside vanish.
    pub first: i64,
    pub last: i64,
    /// Unit-norm blocks `Ψ_first, …, Ψ_last`.
    pub blocks: Vec<CVec>,
    /// Edge case labels (1–4); `None` on the left for a Dirichlet wall.
    pub left_case: Option<u8>,
    pub right_case: u8,
    /// Relative cross product of the matched boundary data.
    pub cross: f64,
    /// `‖HΨ - λΨ‖` on the dense window around the support.
    pub residual: f64,
}

impl FiniteEigenfunction {
    pub fn block(&self, n: i64) -> Option<&CVec> {
        if n < self.first || n > self.last {
            return None;
        }
        self.blocks.get((n - self.first) as usize)
    }

    /// Label such as `3/1` (left/right) or `wall/1`.
    pub fn case_tag(&self) -> String {
        match self.left_case {
            Some(l) => format!("{l}/{}", self.right_case),
            None => format!("wall/{}", self.right_case),
        }
    }

    /// `|Υ_1^*Ψ_1|²`, the atom this eigenfunction carries in `μ_{Υ_1}`.
    pub fn upsilon1_weight(&self, op: &OneChannelOperator) -> Result<f64> {
        match self.block(1) {
            Some(b) => Ok(op.shell(1)?.upsilon.dotc(b).norm_sqr()),
            None => Ok(0.0),
        }
    }
}

#[derive(Clone, Copy)]
enum EdgeSide {
    /// `(V - λ)Ψ = c Φ`, `Υ^*Ψ = 0`, `Φ^*Ψ = target`.
    Left,
    /// `(V - λ)Ψ = c Υ`, `Υ^*Ψ = target`, `Φ^*Ψ = 0`.
    Right,
}

/// Edge block of a finite eigenfunction: the particular solution on the
/// complement of the `λ`-eigenspace plus the eigenspace component in
/// `span(PΥ, PΦ)` that fixes both mode overlaps.
fn edge_block(shell: &ShellData, lambda: f64, side: EdgeSide, coef: C64, target: C64) -> CVec {
    let sp = shell.spectrum();
    let s = sp.evals.len();
    let tol = ON_SPECTRUM_TOL * lambda.abs().max(1.0);
    let in_kernel: Vec<bool> = sp.evals.iter().map(|&e| (e - lambda).abs() <= tol).collect();
    let mode: &[C64] = match side {
        EdgeSide::Left => &sp.phi,
        EdgeSide::Right => &sp.ups,
    };
    let mut base = CVec::zeros(s);
    for j in (0..s).filter(|&j| !in_kernel[j]) {
        let f = coef * mode[j] / c64(sp.evals[j] - lambda, 0.0);
        base.axpy(f, &sp.evecs.column(j), c64(1.0, 0.0));
    }
    let mut p_ups = CVec::zeros(s);
    let mut p_phi = CVec::zeros(s);
    for j in (0..s).filter(|&j| in_kernel[j]) {
        p_ups.axpy(sp.ups[j], &sp.evecs.column(j), c64(1.0, 0.0));
        p_phi.axpy(sp.phi[j], &sp.evecs.column(j), c64(1.0, 0.0));
    }
    let (t_ups, t_phi) = match side {
        EdgeSide::Left => (c64(0.0, 0.0), target),
        EdgeSide::Right => (target, c64(0.0, 0.0)),
    };
    let rhs = Vector2::new(t_ups - shell.upsilon.dotc(&base), t_phi - shell.phi.dotc(&base));
    let g = Matrix2::new(
        shell.upsilon.dotc(&p_ups),
        shell.upsilon.dotc(&p_phi),
        shell.phi.dotc(&p_ups),
        shell.phi.dotc(&p_phi),
    );
    let smax = g.iter().fold(0.0_f64, |m, x| m.max(x.norm()));
    if smax > 0.0 {
        if let Ok(pq) = g.svd(true, true).solve(&rhs, 1e-10 * smax) {
            base += p_ups * pq[0] + p_phi * pq[1];
        }
    }
    base
}

fn cross_rel(u: &C2, v: &C2) -> f64 {
    let d = u.norm() * v.norm();
    if d == 0.0 {
        return f64::INFINITY;
    }
    (u[0] * v[1] - u[1] * v[0]).norm() / d
}

/// Normalizes the blocks and checks `HΨ = λΨ` on the dense window extending
/// one shell beyond the support where possible.
fn validate(op: &OneChannelOperator, lambda: f64, first: i64, blocks: &mut [CVec]) -> Result<f64> {
    let norm = blocks.iter().map(|b| b.norm_squared()).sum::<f64>().sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(OcsError::DenseFailure("eigenfunction candidate vanishes".into()));
    }
    for b in blocks.iter_mut() {
        *b /= c64(norm, 0.0);
    }
    let last = first + blocks.len() as i64 - 1;
    let wf = (first - 1).max(op.n_min());
    let wl = (last + 1).min(op.n_max());
    let trunc = assemble_window(op, wf, wl, c64(0.0, 0.0))?;
    let mut psi = CVec::zeros(trunc.dim());
    for (k, b) in blocks.iter().enumerate() {
        psi += trunc.embed(first + k as i64, b);
    }
    let r = (&trunc.h * &psi - &psi * c64(lambda, 0.0)).norm();
    if r > RESIDUAL_TOL {
        return Err(OcsError::DenseFailure(format!("eigenfunction residual {r:.3e} at λ = {lambda}")));
    }
    Ok(r)
}

/// Eigenfunction supported on shells `l..=m+1` at `λ ∈ A_l ∩ A_{m+1}`, built
/// from the boundary vectors when `T_{λ,l,m}x^{(+)}_l` is colinear with
/// `x^{(-)}_{m+1}`.
pub fn finite_eigenfunction(op: &OneChannelOperator, l: i64, m: i64, lambda: f64) -> Result<FiniteEigenfunction> {
    if m < l {
        return Err(OcsError::InvalidInput(format!("empty interior {l}..{m}")));
    }
    let left = op.shell(l)?;
    let right = op.shell(m + 1)?;
    let bl = boundary_vectors(left, lambda)?;
    let br = boundary_vectors(right, lambda)?;
    let z = c64(lambda, 0.0);
    let states = propagate_states(op, z, bl.x_plus, l, m)?;
    let sm = states[states.len() - 1];
    let cross = cross_rel(&sm, &br.x_minus);
    if !(cross <= COLINEAR_TOL) {
        return Err(OcsError::ColinearityFailed { l, m, lambda, cross });
    }
    let mut blocks = Vec::with_capacity((m - l + 2) as usize);
    let s_l = states[0];
    blocks.push(edge_block(left, lambda, EdgeSide::Left, s_l[0], s_l[1]));
    for n in l + 1..=m {
        let k = (n - l) as usize;
        blocks.push(solution_vector(op.shell(n)?, z, &states[k - 1], &states[k])?);
    }
    blocks.push(right_edge(right, lambda, &sm));
    let residual = validate(op, lambda, l, &mut blocks)?;
    Ok(FiniteEigenfunction {
        lambda,
        first: l,
        last: m + 1,
        blocks,
        left_case: Some(bl.case_tag()),
        right_case: br.case_tag(),
        cross,
        residual,
    })
}

fn right_edge(shell: &ShellData, lambda: f64, sm: &C2) -> CVec {
    let a = c64(shell.a, 0.0);
    edge_block(shell, lambda, EdgeSide::Right, a * sm[1], sm[0] / a)
}

/// Half-line eigenfunction against the Dirichlet wall at shell 0, supported
/// on shells `1..=m+1`, when `T_{λ,0,m}(a_1, 0)` is colinear with
/// `x^{(-)}_{m+1}`.
pub fn finite_eigenfunction_wall(op: &OneChannelOperator, m: i64, lambda: f64) -> Result<FiniteEigenfunction> {
    if op.geometry() != Geometry::Half || m < 0 {
        return Err(OcsError::InvalidInput("wall eigenfunctions need a half-line operator and m ≥ 0".into()));
    }
    let right = op.shell(m + 1)?;
    let br = boundary_vectors(right, lambda)?;
    let z = c64(lambda, 0.0);
    let init = C2::new(c64(op.shell(1)?.a, 0.0), c64(0.0, 0.0));
    let states = propagate_states(op, z, init, 0, m)?;
    let sm = states[m as usize];
    let cross = cross_rel(&sm, &br.x_minus);
    if !(cross <= COLINEAR_TOL) {
        return Err(OcsError::ColinearityFailed { l: 0, m, lambda, cross });
    }
    let mut blocks = Vec::with_capacity(m as usize + 1);
    for n in 1..=m {
        let k = n as usize;
        blocks.push(solution_vector(op.shell(n)?, z, &states[k - 1], &states[k])?);
    }
    blocks.push(right_edge(right, lambda, &sm));
    let residual = validate(op, lambda, 1, &mut blocks)?;
    Ok(FiniteEigenfunction { lambda, first: 1, last: m + 1, blocks, left_case: None, right_case: br.case_tag(), cross, residual })
}

/// Real exceptional energies of the shells `lo..=hi`, as `(shell, λ)`.
pub fn real_singular_energies(op: &OneChannelOperator, lo: i64, hi: i64) -> Result<Vec<(i64, f64)>> {
    let mut out = Vec::new();
    for n in lo..=hi {
        let s = op.shell(n)?;
        for l in singular_set(s, None).real_points(1e-8) {
            out.push((n, l));
        }
    }
    Ok(out)
}

/// Every finite eigenfunction whose edge shells lie in `lo..=hi`: each
/// exceptional energy of a shell is paired with the next shell sharing it, and
/// in half-line geometry the first occurrence is also tried against the wall.
/// Pairs failing the colinearity test or the residual check are skipped.
pub fn finite_eigenfunctions(op: &OneChannelOperator, lo: i64, hi: i64) -> Result<Vec<FiniteEigenfunction>> {
    let pts = real_singular_energies(op, lo, hi)?;
    let same = |a: f64, b: f64| (a - b).abs() <= 1e-8 * a.abs().max(1.0);
    let mut jobs: Vec<(Option<i64>, i64, f64)> = Vec::new();
    for (i, &(n, l)) in pts.iter().enumerate() {
        let earlier = pts[..i].iter().any(|&(k, x)| k < n && same(x, l));
        if !earlier && op.geometry() == Geometry::Half {
            jobs.push((None, n, l));
        }
        if let Some(&(k, x)) = pts[i + 1..].iter().find(|&&(k, x)| k > n && same(x, l)) {
            jobs.push((Some(n), k, 0.5 * (l + x)));
        }
    }
    let hits = jobs
        .par_iter()
        .filter_map(|&(left, right, l)| match left {
            Some(ln) => finite_eigenfunction(op, ln, right - 1, l).ok(),
            None => finite_eigenfunction_wall(op, right - 1, l).ok(),
        })
        .collect();
    Ok(hits)
}

/// Point masses of `μ^+_{Υ_1}` from finite eigenfunctions on shells
/// `1..=n_hi`, appended to `est`. Returns the eigenfunctions found together
/// with a flag telling whether the density shows a spike (above ten times the
/// local median) at the nearest grid point.
pub fn detect_point_masses(
    op: &OneChannelOperator,
    est: &mut SpectralEstimate,
    n_hi: i64,
) -> Result<Vec<(FiniteEigenfunction, bool)>> {
    let hits = finite_eigenfunctions(op, 1, n_hi)?;
    let mut out = Vec::new();
    for ef in hits {
        let w = ef.upsilon1_weight(op)?;
        if w > 1e-14 {
            est.point_masses.push(PointMass {
                lambda: ef.lambda,
                weight: w,
                shell_l: Some(ef.first),
                shell_m: Some(ef.last),
                case_tag: Some(ef.case_tag()),
            });
        }
        let spike = density_spike(est, ef.lambda);
        out.push((ef, spike));
    }
    est.point_masses.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    Ok(out)
}

fn density_spike(est: &SpectralEstimate, lambda: f64) -> bool {
    if est.grid.is_empty() {
        return false;
    }
    let i = est
        .grid
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - lambda).abs().total_cmp(&(b.1 - lambda).abs()))
        .map(|(i, _)| i)
        .unwrap();
    let lo = i.saturating_sub(10);
    let hi = (i + 11).min(est.grid.len());
    let mut local: Vec<f64> = (lo..hi).filter(|&j| !est.masked[j]).map(|j| est.density[j]).collect();
    if local.is_empty() || est.masked[i] {
        return false;
    }
    local.sort_by(f64::total_cmp);
    est.density[i] > 10.0 * local[local.len() / 2]
}

/// One interval of a Radon–Nikodym comparison.
#[derive(Debug, Clone, Serialize)]
pub struct RadonNikodymSample {
    pub interval: (f64, f64),
    /// `μ_{P_nφ}(I)`.
    pub measured: f64,
    /// Integral of the predicted derivative against the reference measure.
    pub predicted: f64,
    /// Eigenvalues in `I` skipped because a solution was undefined there.
    pub skipped: usize,
}

fn project_to_vspan(shell: &ShellData, phi: &CVec) -> CVec {
    let cs = CyclicSubspaces::of_shell(shell, 1e-10);
    &cs.vspan * (cs.vspan.adjoint() * phi)
}

/// Half-line comparison of `μ_{P_nφ}(I)` with `∫_I |φ^*Ψ^u_{λ,n}|² dμ_{Υ_1}`
/// on `ℋ_{N,c}` (both sides equal for `φ ∈ 𝕍_n`, `n < N`). `φ` is projected
/// onto `𝕍_n` first.
pub fn radon_nikodym_halfline(
    op: &OneChannelOperator,
    n_dense: usize,
    c: f64,
    n: i64,
    phi: &CVec,
    intervals: &[(f64, f64)],
) -> Result<Vec<RadonNikodymSample>> {
    if n < 1 || n >= n_dense as i64 {
        return Err(OcsError::InvalidInput(format!("shell {n} must lie in 1..{n_dense}")));
    }
    let phi = project_to_vspan(op.shell(n)?, phi);
    let trunc = assemble_window(op, 1, n_dense as i64, c64(c, 0.0))?;
    let (vals, vecs) = trunc.eigen()?;
    let ups1 = trunc.embed(1, &op.shell(1)?.upsilon);
    let pphi = trunc.embed(n, &phi);
    intervals
        .iter()
        .map(|&(a, b)| {
            let mut s = RadonNikodymSample { interval: (a, b), measured: 0.0, predicted: 0.0, skipped: 0 };
            for (j, &l) in vals.iter().enumerate().filter(|(_, &l)| l >= a && l < b) {
                let col = vecs.column(j);
                s.measured += col.dotc(&pphi).norm_sqr();
                match psi_special(op, l, n, SpecialSolution::U) {
                    Ok(u) => s.predicted += col.dotc(&ups1).norm_sqr() * phi.dotc(&u).norm_sqr(),
                    Err(_) => s.skipped += 1,
                }
            }
            Ok(s)
        })
        .collect()
}

fn psi_special(op: &OneChannelOperator, lambda: f64, n: i64, kind: SpecialSolution) -> Result<CVec> {
    let z = c64(lambda, 0.0);
    let st = special_states(op, z, kind, n)?;
    solution_vector(op.shell(n)?, z, &st[(n - 1) as usize], &st[n as usize])
}

/// Full-line comparison of `μ_{P_nφ}(I)` with the bound
/// `∫_I (|φ^*Ψ^u_{λ,n}|² + |φ^*Ψ^w_{λ,n}|²) d(μ_{Υ_1} + a_1²μ_{Φ_0})` on the
/// dense window `first..=last` (which must contain shells `0`, `1` and `n ≥ 1`).
pub fn radon_nikodym_fullline(
    op: &OneChannelOperator,
    first: i64,
    last: i64,
    n: i64,
    phi: &CVec,
    intervals: &[(f64, f64)],
) -> Result<Vec<RadonNikodymSample>> {
    if !(first <= 0 && n >= 1 && n < last) {
        return Err(OcsError::InvalidInput("window must contain shells 0, 1 and n".into()));
    }
    let phi = project_to_vspan(op.shell(n)?, phi);
    let trunc = assemble_window(op, first, last, c64(0.0, 0.0))?;
    let (vals, vecs) = trunc.eigen()?;
    let s1 = op.shell(1)?;
    let ups1 = trunc.embed(1, &s1.upsilon);
    let phi0 = trunc.embed(0, &op.shell(0)?.phi);
    let pphi = trunc.embed(n, &phi);
    let a1sq = s1.a * s1.a;
    intervals
        .iter()
        .map(|&(a, b)| {
            let mut s = RadonNikodymSample { interval: (a, b), measured: 0.0, predicted: 0.0, skipped: 0 };
            for (j, &l) in vals.iter().enumerate().filter(|(_, &l)| l >= a && l < b) {
                let col = vecs.column(j);
                s.measured += col.dotc(&pphi).norm_sqr();
                let reference = col.dotc(&ups1).norm_sqr() + a1sq * col.dotc(&phi0).norm_sqr();
                match (psi_special(op, l, n, SpecialSolution::U), psi_special(op, l, n, SpecialSolution::W)) {
                    (Ok(u), Ok(w)) => {
                        s.predicted += reference * (phi.dotc(&u).norm_sqr() + phi.dotc(&w).norm_sqr());
                    }
                    _ => s.skipped += 1,
                }
            }
            Ok(s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_core::{free_jacobi_full, free_jacobi_half, materialize, RandomShells};
    use crate::CMat;

    fn real_mat(rows: usize, cols: usize, data: &[f64]) -> CMat {
        CMat::from_row_slice(rows, cols, &data.iter().map(|&x| c64(x, 0.0)).collect::<Vec<_>>())
    }

    fn vecr(d: &[f64]) -> CVec {
        CVec::from_vec(d.iter().map(|&x| c64(x, 0.0)).collect())
    }

    /// Shell with `β(0) = 0`, `α(0) = -1/5`, `δ(0) = 1/4`.
    fn matched_shell(index: i64) -> ShellData {
        let h = 0.5f64.sqrt();
        let r5 = 5f64.sqrt();
        ShellData::new(index, real_mat(2, 2, &[1.0, 0.0, 0.0, -2.0]), -1.0, vecr(&[h, h]), vecr(&[1.0 / r5, 2.0 / r5]))
            .unwrap()
    }

    fn three_shell_instance() -> OneChannelOperator {
        OneChannelOperator::half(vec![
            ShellData::scalar(1, 0.3, -1.0).unwrap(),
            matched_shell(2),
            ShellData::scalar(3, 0.05, -1.0).unwrap(),
            matched_shell(4),
            ShellData::scalar(5, 0.7, -1.0).unwrap(),
        ])
        .unwrap()
    }

    fn semicircle_cdf(x: f64) -> f64 {
        let x = x.clamp(-2.0, 2.0);
        (x * (4.0 - x * x).sqrt() / 2.0 + 2.0 * (x / 2.0).asin()) / (2.0 * PI) + 0.5
    }

    #[test]
    fn halfline_free_jacobi_cdf() {
        let op = free_jacobi_half(400);
        let grid = uniform_grid(-1.0, 1.0, 401);
        let est = halfline_density(&op, &grid, (200, 400)).unwrap();
        let m = est.mass(-1.0, 1.0);
        assert!((m - 0.6090).abs() < 0.02 * 0.6090, "mass {m}");
        assert!((est.density[200] - 1.0 / PI).abs() < 0.02);
        assert!(est.masked.iter().all(|&m| !m));
    }

    #[test]
    fn halfline_density_vanishes_outside_band() {
        let op = free_jacobi_half(200);
        let est = halfline_density(&op, &[2.5, 3.0], (100, 200)).unwrap();
        assert!(est.density.iter().all(|&d| d < 1e-30));
    }

    #[test]
    fn eigen_histogram_examples() {
        let op = OneChannelOperator::half(vec![ShellData::scalar(1, 0.4, -1.0).unwrap()]).unwrap();
        let e = eigen_histogram(&op, 1, 0.0, &vecr(&[1.0])).unwrap();
        assert_eq!(e.point_masses.len(), 1);
        assert!((e.point_masses[0].lambda - 0.4).abs() < 1e-14);
        assert!((e.point_masses[0].weight - 1.0).abs() < 1e-14);

        let op = free_jacobi_half(400);
        let mut w = CVec::zeros(400);
        w[0] = c64(1.0, 0.0);
        let e = eigen_histogram(&op, 400, 0.0, &w).unwrap();
        assert!((e.total_atom_mass() - 1.0).abs() < 1e-10);
        for k in 0..=10 {
            let x = -1.5 + 0.3 * k as f64;
            let cdf = e.atom_mass(-3.0, x);
            assert!((cdf - semicircle_cdf(x)).abs() < 0.01, "x {x}: {cdf}");
        }
    }

    #[test]
    fn fullline_free_jacobi_symmetric_and_converged() {
        let op = free_jacobi_full(200, 200);
        let grid = [-0.7, -0.3, 0.3, 0.7];
        let e64 = fullline_density(&op, &grid, (100, 200), (100, 200), 64).unwrap();
        let e128 = fullline_density(&op, &grid, (100, 200), (100, 200), 128).unwrap();
        for i in 0..4 {
            let exact = 2.0 / (PI * (4.0 - grid[i] * grid[i]).sqrt());
            assert!((e64.density[i] - exact).abs() < 0.03 * exact, "{} vs {exact}", e64.density[i]);
            assert!((e64.density[i] - e128.density[i]).abs() < 1e-3 * e128.density[i]);
        }
        assert!((e64.density[0] - e64.density[3]).abs() < 1e-8);
        assert!((e64.density[1] - e64.density[2]).abs() < 1e-8);
    }

    #[test]
    fn ac_criterion_free_jacobi() {
        let op = free_jacobi_half(400);
        let ns: Vec<i64> = (1..=40).map(|k| 10 * k).collect();
        let inside = ac_criterion(&op, 4.0, (-1.0, 1.0), &ns, 200).unwrap();
        assert_eq!(inside.verdict, AcVerdict::BoundedLike);
        let outside = ac_criterion(&op, 4.0, (2.5, 3.0), &ns, 50).unwrap();
        assert_eq!(outside.verdict, AcVerdict::Growing);
        assert!(outside.log_integrals[39] - outside.log_integrals[9] > 100.0);
    }

    #[test]
    fn three_shell_eigenfunction_matches_dense() {
        let op = three_shell_instance();
        let ef = finite_eigenfunction(&op, 2, 3, 0.0).unwrap();
        assert_eq!((ef.first, ef.last), (2, 4));
        assert!(ef.residual < 1e-9);
        assert_eq!(ef.case_tag(), "1/1");
        let trunc = assemble_window(&op, 1, 5, c64(0.0, 0.0)).unwrap();
        let (vals, vecs) = trunc.eigen().unwrap();
        let at_zero: Vec<usize> = (0..vals.len()).filter(|&j| vals[j].abs() < 1e-9).collect();
        assert_eq!(at_zero.len(), 1);
        let mut psi = CVec::zeros(trunc.dim());
        for n in 2..=4 {
            psi += trunc.embed(n, ef.block(n).unwrap());
        }
        assert!((vecs.column(at_zero[0]).dotc(&psi).norm() - 1.0).abs() < 1e-9);
        let all = finite_eigenfunctions(&op, 1, 5).unwrap();
        assert_eq!(all.iter().filter(|e| e.lambda.abs() < 1e-9).count(), 1);
    }

    #[test]
    fn wall_eigenfunction_gives_point_mass() {
        let mut shells = vec![ShellData::scalar(1, -0.2, 1.0).unwrap(), matched_shell(2)];
        let rnd = materialize(&RandomShells::new(5, 3), Geometry::Half, 6, 0).unwrap();
        for (k, s) in rnd.right_shells()[2..].iter().enumerate() {
            let mut s = s.clone();
            s.index = 3 + k as i64;
            shells.push(s);
        }
        let op = OneChannelOperator::half(shells).unwrap();
        let ef = finite_eigenfunction_wall(&op, 1, 0.0).unwrap();
        assert_eq!((ef.first, ef.last), (1, 2));
        assert!(ef.residual < 1e-9);
        let mut est = SpectralEstimate::empty(Provenance::TransferHalfline, (1, 6));
        detect_point_masses(&op, &mut est, 6).unwrap();
        let pm = est.point_masses.iter().find(|p| p.lambda.abs() < 1e-9).expect("atom at 0");
        let trunc = assemble_window(&op, 1, 6, c64(0.0, 0.0)).unwrap();
        let w = trunc.embed(1, &op.shell(1).unwrap().upsilon);
        let h = eigen_histogram_dense(&trunc, &[w]).unwrap().remove(0);
        let dense: f64 = h.point_masses.iter().filter(|p| p.lambda.abs() < 1e-9).map(|p| p.weight).sum();
        assert!((pm.weight - dense).abs() < 1e-9, "{} vs {dense}", pm.weight);
    }

    fn random_real_shell(index: i64, seed: u64) -> ShellData {
        use rand::Rng;
        let mut rng = crate::rng::stream(seed, "test-shell", &[index as u64]);
        let s = 3;
        let mut v = CMat::zeros(s, s);
        for i in 0..s {
            for j in i..s {
                let x = c64(rng.random_range(-1.0..1.0), 0.0);
                v[(i, j)] = x;
                v[(j, i)] = x;
            }
        }
        let phi = CVec::from_fn(s, |_, _| c64(rng.random_range(-1.0..1.0), 0.0));
        let ups = CVec::from_fn(s, |_, _| c64(rng.random_range(-1.0..1.0), 0.0));
        ShellData::normalized(index, v, -1.0, phi, ups).unwrap()
    }

    #[test]
    fn random_instances_fail_colinearity() {
        let special = random_real_shell(0, 99);
        let shells: Vec<ShellData> = (1..=8)
            .map(|n| if n == 2 || n == 5 || n == 7 { special.clone() } else { random_real_shell(n, 7) })
            .collect();
        let op = OneChannelOperator::half(shells).unwrap();
        let energies = real_singular_energies(&op, 2, 2).unwrap();
        assert!(!energies.is_empty());
        for &(_, l) in &energies {
            for (left, right) in [(2, 5), (5, 7)] {
                let r = finite_eigenfunction(&op, left, right - 1, l);
                assert!(matches!(r, Err(OcsError::ColinearityFailed { .. })), "{left}..{right} at {l}: {r:?}");
            }
            let r = finite_eigenfunction_wall(&op, 1, l);
            assert!(matches!(r, Err(OcsError::ColinearityFailed { .. })), "wall at {l}: {r:?}");
        }
        assert!(finite_eigenfunctions(&op, 1, 8).unwrap().is_empty());
    }

    #[test]
    fn radon_nikodym_halfline_equality() {
        let op = materialize(&RandomShells::new(3, 3), Geometry::Half, 10, 0).unwrap().with_first_shell_convention();
        let s = op.shell(4).unwrap().size();
        let phi = CVec::from_fn(s, |i, _| c64(0.3 + i as f64, -0.2 * i as f64));
        let ivs: Vec<(f64, f64)> = (0..8).map(|k| (-6.0 + 1.5 * k as f64, -4.5 + 1.5 * k as f64)).collect();
        for smp in radon_nikodym_halfline(&op, 10, 0.3, 4, &phi, &ivs).unwrap() {
            assert_eq!(smp.skipped, 0);
            assert!((smp.measured - smp.predicted).abs() <= 1e-8 * smp.measured.max(1.0), "{smp:?}");
        }
    }

    #[test]
    fn radon_nikodym_fullline_bound() {
        let op = materialize(&RandomShells::new(8, 3), Geometry::Full, 6, 5).unwrap();
        let s = op.shell(3).unwrap().size();
        let phi = CVec::from_fn(s, |i, _| c64(1.0 - 0.4 * i as f64, 0.1 * i as f64));
        let ivs: Vec<(f64, f64)> = (0..8).map(|k| (-6.0 + 1.5 * k as f64, -4.5 + 1.5 * k as f64)).collect();
        for smp in radon_nikodym_fullline(&op, -4, 6, 3, &phi, &ivs).unwrap() {
            assert!(smp.measured <= smp.predicted * (1.0 + 1e-9) + 1e-12, "{smp:?}");
        }
    }
}
