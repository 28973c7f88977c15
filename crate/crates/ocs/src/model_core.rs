//! Shell data, operator containers, dense truncations and graph partitioning.
//!
//! A one-channel operator acts blockwise as
//! `(HΨ)_n = -a_{n+1} Φ_n Υ_{n+1}^* Ψ_{n+1} - a_n Υ_n Φ_{n-1}^* Ψ_{n-1} + V_n Ψ_n`,
//! so it is fully described by the per-shell quadruples `(V_n, a_n, Φ_n, Υ_n)`.

use crate::{c64, rng, CMat, CVec, OcsError, Result, C64};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::ops::Range;
use std::sync::OnceLock;

/// Default relative rank tolerance for factorizations and Krylov cut-offs.
pub const RANK_TOL: f64 = 1e-10;
const STRUCT_TOL: f64 = 1e-12;
/// Squared overlap below which an eigenvector is treated as invisible to a mode.
pub(crate) const OVERLAP_TOL_SQ: f64 = 1e-20;

/// Eigenvalues of `V_n` that coincide up to the clustering tolerance.
#[derive(Debug, Clone)]
pub struct Cluster {
    pub value: f64,
    pub members: Vec<usize>,
    /// `‖P Υ‖²` for the spectral projection `P` of the cluster.
    pub ups_norm_sq: f64,
    /// `‖P Φ‖²`.
    pub phi_norm_sq: f64,
    /// `Υ^* P Φ`.
    pub cross: C64,
}

impl Cluster {
    pub fn sees_upsilon(&self) -> bool {
        self.ups_norm_sq > OVERLAP_TOL_SQ
    }

    pub fn sees_phi(&self) -> bool {
        self.phi_norm_sq > OVERLAP_TOL_SQ
    }

    /// `PΥ` and `PΦ` are both nonzero and parallel, i.e. the cluster meets
    /// `𝕎 ∩ 𝕎̃` in a line and contributes nothing to the quotient spectrum.
    pub fn modes_parallel(&self) -> bool {
        self.sees_upsilon()
            && self.sees_phi()
            && self.cross.norm_sqr() >= (1.0 - 1e-8) * self.ups_norm_sq * self.phi_norm_sq
    }

    /// Dimension of `span(PΥ, PΦ)`, the part of `𝕍_n` in this eigenspace.
    pub fn vspan_dim(&self) -> usize {
        match (self.sees_upsilon(), self.sees_phi()) {
            (false, false) => 0,
            (true, true) if !self.modes_parallel() => 2,
            _ => 1,
        }
    }

    /// Part of the quotient spectrum `spec(V|𝕍/(𝕎∩𝕎̃))`.
    pub fn in_quotient_spectrum(&self) -> bool {
        self.vspan_dim() > 0 && !self.modes_parallel()
    }
}

/// Eigendecomposition of `V_n` together with the mode overlaps `e_j^*Υ`, `e_j^*Φ`.
#[derive(Debug, Clone)]
pub struct ShellSpectrum {
    pub evals: Vec<f64>,
    pub evecs: CMat,
    pub ups: Vec<C64>,
    pub phi: Vec<C64>,
    pub clusters: Vec<Cluster>,
}

impl ShellSpectrum {
    fn compute(v: &CMat, phi: &CVec, ups: &CVec) -> Self {
        let s = v.nrows();
        let (evals, evecs) = if s == 1 {
            (vec![v[(0, 0)].re], CMat::from_element(1, 1, c64(1.0, 0.0)))
        } else {
            let eig = v.clone().symmetric_eigen();
            let mut idx: Vec<usize> = (0..s).collect();
            idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
            let evals: Vec<f64> = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
            let evecs = CMat::from_fn(s, s, |r, c| eig.eigenvectors[(r, idx[c])]);
            (evals, evecs)
        };
        let ups: Vec<C64> = (0..s).map(|j| evecs.column(j).dotc(ups)).collect();
        let phi: Vec<C64> = (0..s).map(|j| evecs.column(j).dotc(phi)).collect();
        let scale = evals.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
        let mut clusters: Vec<Cluster> = Vec::new();
        for j in 0..s {
            let join = clusters
                .last()
                .map(|c| (evals[j] - evals[*c.members.last().unwrap()]).abs() <= RANK_TOL * scale)
                .unwrap_or(false);
            if !join {
                clusters.push(Cluster {
                    value: evals[j],
                    members: Vec::new(),
                    ups_norm_sq: 0.0,
                    phi_norm_sq: 0.0,
                    cross: C64::new(0.0, 0.0),
                });
            }
            let c = clusters.last_mut().unwrap();
            c.members.push(j);
            c.ups_norm_sq += ups[j].norm_sqr();
            c.phi_norm_sq += phi[j].norm_sqr();
            c.cross += ups[j].conj() * phi[j];
        }
        for c in clusters.iter_mut() {
            c.value = c.members.iter().map(|&j| evals[j]).sum::<f64>() / c.members.len() as f64;
        }
        ShellSpectrum { evals, evecs, ups, phi, clusters }
    }

    /// Coefficients `e_j^* x`.
    pub fn coeffs(&self, x: &CVec) -> Vec<C64> {
        (0..self.evals.len()).map(|j| self.evecs.column(j).dotc(x)).collect()
    }

    /// `Σ_j e_j c_j / (λ_j - z)`, skipping components with `|c_j|` below `skip`.
    pub fn resolve_coeffs(&self, z: C64, coeffs: &[C64], skip: f64) -> CVec {
        let s = self.evals.len();
        let mut out = CVec::zeros(s);
        for j in 0..s {
            if coeffs[j].norm() <= skip {
                continue;
            }
            let f = coeffs[j] / (c64(self.evals[j], 0.0) - z);
            out.axpy(f, &self.evecs.column(j), c64(1.0, 0.0));
        }
        out
    }

    /// Cluster containing the eigenvalue closest to `x`, with its distance.
    pub fn nearest_cluster(&self, x: f64) -> Option<(&Cluster, f64)> {
        self.clusters
            .iter()
            .map(|c| (c, (c.value - x).abs()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// One shell of a one-channel operator: `V_n`, the coupling `a_n` to the
/// previous shell, the forward mode `Φ_n` and the backward mode `Υ_n`.
#[derive(Debug, Clone)]
pub struct ShellData {
    pub index: i64,
    pub v: CMat,
    pub a: f64,
    pub phi: CVec,
    pub upsilon: CVec,
    spectrum: OnceLock<ShellSpectrum>,
}

impl ShellData {
    /// Validating constructor: `V` Hermitian, unit modes, `a ≠ 0`.
    pub fn new(index: i64, v: CMat, a: f64, phi: CVec, upsilon: CVec) -> Result<Self> {
        let s = v.nrows();
        if s == 0 || v.ncols() != s {
            return Err(OcsError::InvalidInput(format!("shell {index}: V must be square and nonempty")));
        }
        if phi.len() != s || upsilon.len() != s {
            return Err(OcsError::InvalidInput(format!("shell {index}: mode length differs from V size {s}")));
        }
        if !(a.is_finite() && a != 0.0) {
            return Err(OcsError::InvalidInput(format!("shell {index}: coupling a must be finite and nonzero")));
        }
        let scale = v.iter().fold(1.0_f64, |m, x| m.max(x.norm()));
        for r in 0..s {
            for c in 0..s {
                if (v[(r, c)] - v[(c, r)].conj()).norm() > STRUCT_TOL * scale {
                    return Err(OcsError::InvalidInput(format!("shell {index}: V is not Hermitian")));
                }
            }
        }
        for (name, x) in [("Phi", &phi), ("Upsilon", &upsilon)] {
            if (x.norm() - 1.0).abs() > STRUCT_TOL {
                return Err(OcsError::InvalidInput(format!("shell {index}: {name} is not a unit vector")));
            }
        }
        Ok(ShellData { index, v, a, phi, upsilon, spectrum: OnceLock::new() })
    }

    /// Like [`ShellData::new`] but rescales the modes to unit length first.
    pub fn normalized(index: i64, v: CMat, a: f64, phi: CVec, upsilon: CVec) -> Result<Self> {
        let (np, nu) = (phi.norm(), upsilon.norm());
        if np == 0.0 || nu == 0.0 {
            return Err(OcsError::InvalidInput(format!("shell {index}: zero mode vector")));
        }
        Self::new(index, v, a, phi.unscale(np), upsilon.unscale(nu))
    }

    /// Scalar shell `V = (v)`, `Φ = Υ = 1`.
    pub fn scalar(index: i64, v: f64, a: f64) -> Result<Self> {
        let one = CVec::from_element(1, c64(1.0, 0.0));
        Self::new(index, CMat::from_element(1, 1, c64(v, 0.0)), a, one.clone(), one)
    }

    pub fn size(&self) -> usize {
        self.v.nrows()
    }

    /// Cached eigendecomposition of `V_n`.
    pub fn spectrum(&self) -> &ShellSpectrum {
        self.spectrum
            .get_or_init(|| ShellSpectrum::compute(&self.v, &self.phi, &self.upsilon))
    }

    fn with_index(mut self, index: i64) -> Self {
        self.index = index;
        self
    }

    /// `β_{z,n}` vanishes identically: no eigenspace couples `Υ_n` to `Φ_n`.
    pub fn channel_broken(&self) -> bool {
        self.spectrum().clusters.iter().all(|c| c.cross.norm() <= 1e-10)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Geometry {
    #[default]
    Half,
    Full,
}

/// Materialized window of a one-channel operator.
///
/// Shells `1..=N` are stored on the right; in full-line geometry the shells
/// `0, -1, …, -M+1` are stored on the left.
#[derive(Debug, Clone)]
pub struct OneChannelOperator {
    right: Vec<ShellData>,
    left: Vec<ShellData>,
    geometry: Geometry,
}

impl OneChannelOperator {
    /// Half-line operator with shells `1..=shells.len()`; indices are reassigned.
    pub fn half(shells: Vec<ShellData>) -> Result<Self> {
        if shells.is_empty() {
            return Err(OcsError::InvalidInput("operator needs at least one shell".into()));
        }
        let right = shells.into_iter().enumerate().map(|(k, s)| s.with_index(k as i64 + 1)).collect();
        Ok(OneChannelOperator { right, left: Vec::new(), geometry: Geometry::Half })
    }

    /// Full-line operator; `left[k]` becomes shell `-k`, `right[k]` shell `k+1`.
    pub fn full(left: Vec<ShellData>, right: Vec<ShellData>) -> Result<Self> {
        if left.is_empty() || right.is_empty() {
            return Err(OcsError::InvalidInput("full-line operator needs shells on both sides".into()));
        }
        let right = right.into_iter().enumerate().map(|(k, s)| s.with_index(k as i64 + 1)).collect();
        let left = left.into_iter().enumerate().map(|(k, s)| s.with_index(-(k as i64))).collect();
        Ok(OneChannelOperator { right, left, geometry: Geometry::Full })
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    /// Largest materialized shell index.
    pub fn n_max(&self) -> i64 {
        self.right.len() as i64
    }

    /// Smallest materialized shell index (1 on the half-line).
    pub fn n_min(&self) -> i64 {
        if self.left.is_empty() {
            1
        } else {
            -(self.left.len() as i64) + 1
        }
    }

    pub fn shell(&self, n: i64) -> Result<&ShellData> {
        let found = if n >= 1 {
            self.right.get((n - 1) as usize)
        } else {
            self.left.get((-n) as usize)
        };
        found.ok_or_else(|| OcsError::InvalidInput(format!("shell {n} is not materialized")))
    }

    /// Shells `1..=N`.
    pub fn right_shells(&self) -> &[ShellData] {
        &self.right
    }

    /// Shells `0, -1, …`.
    pub fn left_shells(&self) -> &[ShellData] {
        &self.left
    }

    /// Indices of shells whose channel is broken.
    pub fn broken_channels(&self) -> Vec<i64> {
        self.left
            .iter()
            .chain(self.right.iter())
            .filter(|s| s.channel_broken())
            .map(|s| s.index)
            .collect()
    }

    /// Applies the first-shell convention `a_1 = 1`, `Υ_1 = Φ_1`, which leaves
    /// the half-line operator unchanged.
    pub fn with_first_shell_convention(mut self) -> Self {
        if self.geometry == Geometry::Half {
            let s = &self.right[0];
            self.right[0] = ShellData::new(1, s.v.clone(), 1.0, s.phi.clone(), s.phi.clone())
                .expect("shell already validated");
        }
        self
    }
}

/// Lazily generated shells, a pure function of the shell index.
pub trait ShellSource: Sync {
    fn shell(&self, n: i64) -> Result<ShellData>;
}

/// Materializes shells `1..=n_right` (and `0..=-(n_left-1)` for full line).
pub fn materialize(
    src: &dyn ShellSource,
    geometry: Geometry,
    n_right: usize,
    n_left: usize,
) -> Result<OneChannelOperator> {
    let right = (1..=n_right as i64).map(|n| src.shell(n)).collect::<Result<Vec<_>>>()?;
    match geometry {
        Geometry::Half => OneChannelOperator::half(right),
        Geometry::Full => {
            let left = (0..n_left as i64).map(|k| src.shell(-k)).collect::<Result<Vec<_>>>()?;
            OneChannelOperator::full(left, right)
        }
    }
}

/// Random shells with sizes in `min_size..=max_size`, Hermitian `V` with
/// entries of unit scale, random complex modes and `|a| ∈ [0.5, 1.5]`.
#[derive(Debug, Clone)]
pub struct RandomShells {
    pub seed: u64,
    pub min_size: usize,
    pub max_size: usize,
    /// When set, every coupling equals this value.
    pub fixed_a: Option<f64>,
}

impl RandomShells {
    pub fn new(seed: u64, max_size: usize) -> Self {
        RandomShells { seed, min_size: 1, max_size, fixed_a: None }
    }
}

impl ShellSource for RandomShells {
    fn shell(&self, n: i64) -> Result<ShellData> {
        let mut r = rng::stream(self.seed, "random_shell", &[rng::signed_coord(n)]);
        let s = r.random_range(self.min_size..=self.max_size.max(self.min_size));
        let mut v = CMat::zeros(s, s);
        for i in 0..s {
            v[(i, i)] = c64(r.random_range(-1.0..1.0), 0.0);
            for j in 0..i {
                let x = c64(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
                v[(i, j)] = x;
                v[(j, i)] = x.conj();
            }
        }
        let draw = |r: &mut rand_chacha::ChaCha8Rng| {
            CVec::from_fn(s, |_, _| c64(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
        };
        let phi = draw(&mut r);
        let ups = draw(&mut r);
        let a = match self.fixed_a {
            Some(a) => a,
            None => {
                let m: f64 = r.random_range(0.5..1.5);
                if r.random_bool(0.5) { m } else { -m }
            }
        };
        ShellData::normalized(n, v, a, phi, ups)
    }
}

/// Half-line Jacobi operator with diagonal `v[n-1]` and couplings `a[n-1]`.
pub fn jacobi_half(v: &[f64], a: &[f64]) -> Result<OneChannelOperator> {
    if v.len() != a.len() {
        return Err(OcsError::InvalidInput("jacobi: v and a lengths differ".into()));
    }
    let shells = v
        .iter()
        .zip(a)
        .enumerate()
        .map(|(k, (&v, &a))| ShellData::scalar(k as i64 + 1, v, a))
        .collect::<Result<Vec<_>>>()?;
    OneChannelOperator::half(shells)
}

/// Free half-line Jacobi operator: zero diagonal, unit off-diagonal (`a_n = -1`).
pub fn free_jacobi_half(n: usize) -> OneChannelOperator {
    jacobi_half(&vec![0.0; n], &vec![-1.0; n]).expect("valid free Jacobi data")
}

/// Free full-line Jacobi operator on shells `-(n_left-1)..=n_right`.
pub fn free_jacobi_full(n_left: usize, n_right: usize) -> OneChannelOperator {
    let mk = |k: usize| ShellData::scalar(0, 0.0, -1.0).map(|s| s.with_index(k as i64));
    let left = (0..n_left).map(mk).collect::<Result<Vec<_>>>().unwrap();
    let right = (0..n_right).map(mk).collect::<Result<Vec<_>>>().unwrap();
    OneChannelOperator::full(left, right).unwrap()
}

/// Dense truncation `ℋ_{N,c}` (optionally `ℋ_{b,N,c}`) of a half-line operator,
/// or of an arbitrary shell window.
#[derive(Debug, Clone)]
pub struct DenseTruncation {
    /// First and last shell index of the window.
    pub first: i64,
    pub last: i64,
    pub c: C64,
    pub b: Option<f64>,
    pub h: CMat,
    /// Starting global index of each shell in the window.
    pub offsets: Vec<usize>,
    pub hermitian: bool,
}

impl DenseTruncation {
    pub fn n_shells(&self) -> usize {
        self.offsets.len()
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    /// Global index range of shell `n`.
    pub fn block_range(&self, n: i64) -> Range<usize> {
        let k = (n - self.first) as usize;
        let start = self.offsets[k];
        let end = self.offsets.get(k + 1).copied().unwrap_or(self.dim());
        start..end
    }

    /// Embeds a shell-local vector (`P_n x`).
    pub fn embed(&self, n: i64, x: &CVec) -> CVec {
        let mut out = CVec::zeros(self.dim());
        out.rows_mut(self.block_range(n).start, x.len()).copy_from(x);
        out
    }

    /// Restriction `P_n^* x`.
    pub fn restrict(&self, n: i64, x: &CVec) -> CVec {
        let r = self.block_range(n);
        x.rows(r.start, r.len()).into_owned()
    }

    /// `(H - z)^{-1} rhs` by LU.
    pub fn solve(&self, z: C64, rhs: &CVec) -> Result<CVec> {
        let mut m = self.h.clone();
        for i in 0..m.nrows() {
            m[(i, i)] -= z;
        }
        m.lu()
            .solve(rhs)
            .ok_or_else(|| OcsError::DenseFailure(format!("H - z singular at z = {z}")))
    }

    /// Full resolvent `(H - z)^{-1}`.
    pub fn resolvent(&self, z: C64) -> Result<CMat> {
        let mut m = self.h.clone();
        for i in 0..m.nrows() {
            m[(i, i)] -= z;
        }
        m.try_inverse()
            .ok_or_else(|| OcsError::DenseFailure(format!("H - z singular at z = {z}")))
    }

    /// Eigenpairs of the (Hermitian) truncation, ascending.
    pub fn eigen(&self) -> Result<(Vec<f64>, CMat)> {
        if !self.hermitian {
            return Err(OcsError::DenseFailure("eigen-solve requires a Hermitian truncation".into()));
        }
        let eig = self.h.clone().symmetric_eigen();
        let n = self.dim();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vecs = CMat::from_fn(n, n, |r, c| eig.eigenvectors[(r, idx[c])]);
        Ok((vals, vecs))
    }
}

/// Coupling block `D_n = -a_n Υ_n Φ_{n-1}^*` of shape `s_n × s_{n-1}`.
pub fn coupling_block(prev: &ShellData, cur: &ShellData) -> CMat {
    (&cur.upsilon * prev.phi.adjoint()) * c64(-cur.a, 0.0)
}

/// Dense `ℋ_{N,c}` on shells `1..=N` with Dirichlet condition at 0; with `b`
/// the first block gets `-b a_1² Υ_1Υ_1^*`.
pub fn assemble_dense(op: &OneChannelOperator, n: usize, c: C64, b: Option<f64>) -> Result<DenseTruncation> {
    let mut t = assemble_window(op, 1, n as i64, c)?;
    if let Some(b) = b {
        let s1 = op.shell(1)?;
        let r = t.block_range(1);
        let corr = (&s1.upsilon * s1.upsilon.adjoint()) * c64(-b * s1.a * s1.a, 0.0);
        let mut blk = t.h.view_mut((r.start, r.start), (r.len(), r.len()));
        blk += corr;
        t.b = Some(b);
    }
    Ok(t)
}

/// Dense restriction to shells `first..=last` with Dirichlet conditions at
/// both ends and `-c Φ_last Φ_last^*` added to the last block.
pub fn assemble_window(op: &OneChannelOperator, first: i64, last: i64, c: C64) -> Result<DenseTruncation> {
    if last < first {
        return Err(OcsError::InvalidInput("empty shell window".into()));
    }
    let shells = (first..=last).map(|n| op.shell(n)).collect::<Result<Vec<_>>>()?;
    let mut offsets = Vec::with_capacity(shells.len());
    let mut dim = 0;
    for s in &shells {
        offsets.push(dim);
        dim += s.size();
    }
    let mut h = CMat::zeros(dim, dim);
    for (k, s) in shells.iter().enumerate() {
        let o = offsets[k];
        h.view_mut((o, o), (s.size(), s.size())).copy_from(&s.v);
        if k > 0 {
            let p = shells[k - 1];
            let d = coupling_block(p, s);
            let po = offsets[k - 1];
            h.view_mut((o, po), (s.size(), p.size())).copy_from(&d);
            h.view_mut((po, o), (p.size(), s.size())).copy_from(&d.adjoint());
        }
    }
    let lastshell = shells[shells.len() - 1];
    let o = offsets[shells.len() - 1];
    let corr = (&lastshell.phi * lastshell.phi.adjoint()) * (-c);
    let mut blk = h.view_mut((o, o), (lastshell.size(), lastshell.size()));
    blk += corr;
    Ok(DenseTruncation { first, last, c, b: None, h, offsets, hermitian: c.im == 0.0 })
}

/// Blockwise application of the operator to `Ψ` supported on shells
/// `first, first+1, …` (half-line: `first = 1`, `Ψ_0 = 0`).
pub fn apply_operator(op: &OneChannelOperator, first: i64, psi: &[CVec]) -> Result<Vec<CVec>> {
    let n = psi.len();
    let shells = (0..n).map(|k| op.shell(first + k as i64)).collect::<Result<Vec<_>>>()?;
    for (k, s) in shells.iter().enumerate() {
        if psi[k].len() != s.size() {
            return Err(OcsError::InvalidInput(format!("block {} has wrong length", s.index)));
        }
    }
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let s = shells[k];
        let mut y = &s.v * &psi[k];
        if k + 1 < n {
            let next = shells[k + 1];
            let x_next = next.upsilon.dotc(&psi[k + 1]);
            y.axpy(c64(-next.a, 0.0) * x_next, &s.phi, c64(1.0, 0.0));
        }
        if k > 0 {
            let xt_prev = shells[k - 1].phi.dotc(&psi[k - 1]);
            y.axpy(c64(-s.a, 0.0) * xt_prev, &s.upsilon, c64(1.0, 0.0));
        }
        out.push(y);
    }
    Ok(out)
}

/// Result of the summability test on `Σ |a_n|^{-1}`.
#[derive(Debug, Clone, Serialize)]
pub struct SelfAdjointnessDiagnostic {
    pub sum_plus: f64,
    pub sum_minus: Option<f64>,
    /// Growth of the partial sums per unit of `ln n` over the last decade.
    pub slope_plus: f64,
    pub verdict: SaVerdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SaVerdict {
    SufficientConditionMet,
    NotMet,
}

/// Partial sum above which divergence is presumed.
pub const SA_SUM_THRESHOLD: f64 = 50.0;
/// Minimal growth of the partial sums per unit of `ln n`.
pub const SA_SLOPE_THRESHOLD: f64 = 0.5;

/// Advisory check of the sufficient condition `Σ_{n≥2} |a_n|^{-1} = ∞` for
/// unique self-adjointness, on coefficients `a_1, …, a_{N}` of the right half
/// and optionally `a_0, a_{-1}, …` of the left half.
pub fn check_self_adjointness_coeffs(a_plus: &[f64], a_minus: Option<&[f64]>) -> SelfAdjointnessDiagnostic {
    let partial = |a: &[f64], upto: usize| a.iter().take(upto).map(|x| 1.0 / x.abs()).sum::<f64>();
    let tail = if a_plus.len() > 1 { &a_plus[1..] } else { &[][..] };
    let n = tail.len();
    let sum_plus = partial(tail, n);
    let slope_plus = if n >= 10 { (sum_plus - partial(tail, n / 10)) / 10f64.ln() } else { 0.0 };
    let sum_minus = a_minus.map(|a| partial(a, a.len()));
    let side_ok = |sum: f64, slope: f64| sum >= SA_SUM_THRESHOLD || slope >= SA_SLOPE_THRESHOLD;
    let mut ok = side_ok(sum_plus, slope_plus);
    if let Some(am) = a_minus {
        let m = am.len();
        let s = sum_minus.unwrap();
        let sl = if m >= 10 { (s - partial(am, m / 10)) / 10f64.ln() } else { 0.0 };
        ok &= side_ok(s, sl);
    }
    SelfAdjointnessDiagnostic {
        sum_plus,
        sum_minus,
        slope_plus,
        verdict: if ok { SaVerdict::SufficientConditionMet } else { SaVerdict::NotMet },
    }
}

/// [`check_self_adjointness_coeffs`] on the couplings of a materialized operator.
pub fn check_self_adjointness(op: &OneChannelOperator, n_max: usize) -> Result<SelfAdjointnessDiagnostic> {
    let a_plus = (1..=n_max as i64).map(|n| op.shell(n).map(|s| s.a)).collect::<Result<Vec<_>>>()?;
    let a_minus: Option<Vec<f64>> = match op.geometry() {
        Geometry::Half => None,
        Geometry::Full => Some(op.left_shells().iter().map(|s| s.a).collect()),
    };
    Ok(check_self_adjointness_coeffs(&a_plus, a_minus.as_deref()))
}

/// Orthonormal basis (as columns) of the `V`-cyclic subspace generated by `vec`.
pub fn cyclic_subspaces(v: &CMat, vec: &CVec, tol: f64) -> CMat {
    let s = v.nrows();
    let vnorm = v.iter().fold(0.0_f64, |m, x| m.max(x.norm())) * (s as f64).sqrt();
    let cut = tol * vnorm.max(1.0);
    let mut basis: Vec<CVec> = vec![vec.unscale(vec.norm())];
    while basis.len() < s {
        let mut w = v * basis.last().unwrap();
        for _ in 0..2 {
            for q in &basis {
                let p = q.dotc(&w);
                w.axpy(-p, q, c64(1.0, 0.0));
            }
        }
        let nw = w.norm();
        if nw <= cut {
            break;
        }
        basis.push(w.unscale(nw));
    }
    CMat::from_columns(&basis)
}

/// Orthonormal basis of the span of the given columns with rank cut-off.
pub fn orth(cols: &[CVec], tol: f64) -> CMat {
    let dim = cols.first().map(|c| c.len()).unwrap_or(0);
    let mut basis: Vec<CVec> = Vec::new();
    for c in cols {
        let mut w = c.clone();
        for _ in 0..2 {
            for q in &basis {
                let p = q.dotc(&w);
                w.axpy(-p, q, c64(1.0, 0.0));
            }
        }
        let nw = w.norm();
        if nw > tol * c.norm().max(1e-300) && nw > 0.0 {
            basis.push(w.unscale(nw));
        }
    }
    if basis.is_empty() {
        CMat::zeros(dim, 0)
    } else {
        CMat::from_columns(&basis)
    }
}

/// Cyclic spaces `𝕎_n` (of `Υ_n`), `𝕎̃_n` (of `Φ_n`) and `𝕍_n = 𝕎_n + 𝕎̃_n`.
#[derive(Debug, Clone)]
pub struct CyclicSubspaces {
    pub w: CMat,
    pub wt: CMat,
    pub vspan: CMat,
    pub tol: f64,
}

impl CyclicSubspaces {
    pub fn of_shell(shell: &ShellData, tol: f64) -> Self {
        let w = cyclic_subspaces(&shell.v, &shell.upsilon, tol);
        let wt = cyclic_subspaces(&shell.v, &shell.phi, tol);
        let cols: Vec<CVec> = w.column_iter().chain(wt.column_iter()).map(|c| c.into_owned()).collect();
        let vspan = orth(&cols, 1e-8);
        CyclicSubspaces { w, wt, vspan, tol }
    }

    /// Component of `x` orthogonal to `𝕍_n`.
    pub fn perp_part(&self, x: &CVec) -> CVec {
        x - &self.vspan * (self.vspan.adjoint() * x)
    }
}

/// Rank-one factorization `D = -a Υ Φ^*` with `a < 0` and the largest entry of
/// `Φ` made positive real.
pub fn factor_rank_one(d: &CMat, tol: f64) -> Result<(f64, CVec, CVec)> {
    let svd = d.clone().svd(true, true);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let s1 = svd.singular_values[order[0]];
    if s1 == 0.0 {
        return Err(OcsError::InvalidInput("coupling block is zero".into()));
    }
    let s2 = order.get(1).map(|&i| svd.singular_values[i]).unwrap_or(0.0);
    if s2 > tol * s1 {
        return Err(OcsError::NotOneChannel { ratio: s2 / s1 });
    }
    let u = svd.u.as_ref().unwrap().column(order[0]).into_owned();
    let v = svd.v_t.as_ref().unwrap().row(order[0]).adjoint();
    // First entry of maximal modulus, ties resolved towards the lower index.
    let vmax = v.iter().fold(0.0_f64, |m, x| m.max(x.norm()));
    let k = v.iter().position(|x| x.norm() >= vmax * (1.0 - 1e-12)).unwrap_or(0);
    let phase = v[k] / v[k].norm();
    let phi = v.map(|x| x * phase.conj());
    let ups = u.map(|x| x * phase.conj());
    Ok((-s1, ups, phi))
}

/// Weighted undirected graph given by adjacency lists.
#[derive(Debug, Clone)]
pub struct Graph {
    pub adj: Vec<Vec<(usize, f64)>>,
}

impl Graph {
    /// Builds the graph from undirected edges `(x, y, weight)`.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut adj = vec![Vec::new(); n];
        for &(x, y, w) in edges {
            if x >= n || y >= n {
                return Err(OcsError::InvalidInput(format!("edge ({x},{y}) out of range")));
            }
            adj[x].push((y, w));
            if x != y {
                adj[y].push((x, w));
            }
        }
        Ok(Graph { adj })
    }

    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    pub fn weight(&self, x: usize, y: usize) -> f64 {
        self.adj[x].iter().filter(|(t, _)| *t == y).map(|(_, w)| w).sum()
    }
}

/// Breadth-first shells: `S_1` is the seed set and `S_n` holds the vertices at
/// graph distance `n-1` from it.
pub fn build_partition(g: &Graph, seeds: &[usize]) -> Result<Vec<Vec<usize>>> {
    if seeds.is_empty() {
        return Err(OcsError::InvalidInput("seed set is empty".into()));
    }
    let mut dist = vec![usize::MAX; g.len()];
    let mut shells: Vec<Vec<usize>> = vec![Vec::new()];
    for &s in seeds {
        if s >= g.len() {
            return Err(OcsError::InvalidInput(format!("seed {s} out of range")));
        }
        if dist[s] == usize::MAX {
            dist[s] = 0;
            shells[0].push(s);
        }
    }
    loop {
        let cur = shells.last().unwrap();
        let d = shells.len();
        let mut next = Vec::new();
        for &x in cur {
            for &(y, _) in &g.adj[x] {
                if dist[y] == usize::MAX {
                    dist[y] = d;
                    next.push(y);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        next.sort_unstable();
        shells.push(next);
    }
    let lost: Vec<usize> = (0..g.len()).filter(|&x| dist[x] == usize::MAX).collect();
    if !lost.is_empty() {
        return Err(OcsError::DanglingComponent { vertices: lost });
    }
    Ok(shells)
}

/// Merges consecutive shells into groups of the given lengths (a user-supplied
/// grouping; no automatic grouping is attempted).
pub fn merge_shells(partition: &[Vec<usize>], group_sizes: &[usize]) -> Result<Vec<Vec<usize>>> {
    if group_sizes.iter().sum::<usize>() != partition.len() || group_sizes.contains(&0) {
        return Err(OcsError::InvalidInput("group sizes must be positive and cover all shells".into()));
    }
    let mut out = Vec::new();
    let mut k = 0;
    for &g in group_sizes {
        let mut merged: Vec<usize> = partition[k..k + g].iter().flatten().copied().collect();
        merged.sort_unstable();
        out.push(merged);
        k += g;
    }
    Ok(out)
}

/// No edge joins shells whose indices differ by two or more.
pub fn is_quasi_spherical(g: &Graph, partition: &[Vec<usize>]) -> bool {
    let mut shell_of = vec![usize::MAX; g.len()];
    for (k, s) in partition.iter().enumerate() {
        for &x in s {
            shell_of[x] = k;
        }
    }
    (0..g.len()).all(|x| {
        g.adj[x]
            .iter()
            .all(|&(y, _)| shell_of[x].abs_diff(shell_of[y]) <= 1)
    })
}

/// One-channel operator `A + diag(potential)` on a quasi-spherical partition.
/// Every inter-shell block is factored with [`factor_rank_one`]; the first
/// shell follows the `a_1 = 1`, `Υ_1 = Φ_1` convention and the last shell uses
/// `Φ_N = Υ_N`.
pub fn operator_from_graph(
    g: &Graph,
    potential: &[f64],
    partition: &[Vec<usize>],
    tol: f64,
) -> Result<OneChannelOperator> {
    if potential.len() != g.len() {
        return Err(OcsError::InvalidInput("potential length differs from vertex count".into()));
    }
    if !is_quasi_spherical(g, partition) {
        return Err(OcsError::InvalidInput("partition is not quasi-spherical".into()));
    }
    let n = partition.len();
    let block = |p: &[usize], q: &[usize]| {
        DMatrix::from_fn(p.len(), q.len(), |i, j| c64(g.weight(p[i], q[j]), 0.0))
    };
    let mut couplings = Vec::with_capacity(n);
    for k in 1..n {
        couplings.push(factor_rank_one(&block(&partition[k], &partition[k - 1]), tol)?);
    }
    let mut shells = Vec::with_capacity(n);
    for k in 0..n {
        let p = &partition[k];
        let mut v = block(p, p);
        for (i, &x) in p.iter().enumerate() {
            v[(i, i)] += c64(potential[x], 0.0);
        }
        let phi = if k + 1 < n { couplings[k].2.clone() } else { DVector::zeros(0) };
        let (a, ups) = if k > 0 {
            (couplings[k - 1].0, couplings[k - 1].1.clone())
        } else {
            (1.0, DVector::zeros(0))
        };
        let (phi, ups) = match (phi.len(), ups.len()) {
            (0, 0) => {
                let e = CVec::from_fn(p.len(), |i, _| if i == 0 { c64(1.0, 0.0) } else { c64(0.0, 0.0) });
                (e.clone(), e)
            }
            (0, _) => (ups.clone(), ups),
            (_, 0) => (phi.clone(), phi),
            _ => (phi, ups),
        };
        shells.push(ShellData::new(k as i64 + 1, v, a, phi, ups)?);
    }
    OneChannelOperator::half(shells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn real_mat(rows: usize, cols: usize, data: &[f64]) -> CMat {
        CMat::from_row_slice(rows, cols, &data.iter().map(|&x| c64(x, 0.0)).collect::<Vec<_>>())
    }

    fn unit(s: usize, i: usize) -> CVec {
        CVec::from_fn(s, |r, _| if r == i { c64(1.0, 0.0) } else { c64(0.0, 0.0) })
    }

    #[test]
    fn shell_validation() {
        let v = real_mat(2, 2, &[0.0, 1.0, 2.0, 0.0]);
        assert!(ShellData::new(1, v, -1.0, unit(2, 0), unit(2, 1)).is_err());
        let v = real_mat(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(ShellData::new(1, v.clone(), 0.0, unit(2, 0), unit(2, 1)).is_err());
        assert!(ShellData::new(1, v.clone(), -1.0, unit(2, 0) * c64(2.0, 0.0), unit(2, 1)).is_err());
        assert!(ShellData::new(1, v, -1.0, unit(2, 0), unit(2, 1)).is_ok());
    }

    #[test]
    fn dense_jacobi_examples() {
        let op = free_jacobi_half(2);
        let t = assemble_dense(&op, 2, c64(0.0, 0.0), None).unwrap();
        assert_eq!(t.h, real_mat(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        let t = assemble_dense(&op, 2, c64(1.0, 0.0), None).unwrap();
        assert_eq!(t.h, real_mat(2, 2, &[0.0, 1.0, 1.0, -1.0]));
    }

    #[test]
    fn left_boundary_parameter() {
        let op = jacobi_half(&[0.5, 0.0], &[2.0, -1.0]).unwrap();
        let t = assemble_dense(&op, 2, c64(0.0, 0.0), Some(0.25)).unwrap();
        assert_relative_eq!(t.h[(0, 0)].re, 0.5 - 0.25 * 4.0);
    }

    #[test]
    fn apply_jacobi_delta() {
        let op = free_jacobi_half(3);
        let psi: Vec<CVec> = (0..3).map(|k| CVec::from_element(1, c64(if k == 0 { 1.0 } else { 0.0 }, 0.0))).collect();
        let out = apply_operator(&op, 1, &psi).unwrap();
        assert_eq!(out[0][0], c64(0.0, 0.0));
        assert_eq!(out[1][0], c64(1.0, 0.0));
        assert_eq!(out[2][0], c64(0.0, 0.0));
    }

    #[test]
    fn apply_on_invisible_eigenvector() {
        let v = real_mat(3, 3, &[1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 3.0]);
        let s = ShellData::new(1, v, -1.0, unit(3, 0), unit(3, 1)).unwrap();
        let op = OneChannelOperator::half(vec![s, ShellData::scalar(2, 0.0, -1.0).unwrap()]).unwrap();
        let psi = vec![unit(3, 2), CVec::zeros(1)];
        let out = apply_operator(&op, 1, &psi).unwrap();
        assert_eq!(out[0], unit(3, 2) * c64(3.0, 0.0));
        assert_eq!(out[1][0], c64(0.0, 0.0));
    }

    #[test]
    fn dense_matches_matrix_free() {
        let op = materialize(&RandomShells::new(11, 4), Geometry::Half, 4, 0).unwrap();
        let t = assemble_dense(&op, 4, c64(0.0, 0.0), None).unwrap();
        for i in 0..t.dim() {
            let e = CVec::from_fn(t.dim(), |r, _| if r == i { c64(1.0, 0.0) } else { c64(0.0, 0.0) });
            let blocks: Vec<CVec> = (1..=4).map(|n| t.restrict(n, &e)).collect();
            let y = apply_operator(&op, 1, &blocks).unwrap();
            let dense = &t.h * &e;
            for n in 1..=4i64 {
                let d = t.restrict(n, &dense);
                assert!((d - &y[(n - 1) as usize]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn self_adjointness_examples() {
        let d = check_self_adjointness_coeffs(&vec![-1.0; 100], None);
        assert_relative_eq!(d.sum_plus, 99.0);
        assert_eq!(d.verdict, SaVerdict::SufficientConditionMet);
        let geo: Vec<f64> = (1..=100).map(|n| -(2f64).powi(n.min(1000))).collect();
        let d = check_self_adjointness_coeffs(&geo, None);
        assert!(d.sum_plus < 1.0);
        assert_eq!(d.verdict, SaVerdict::NotMet);
        let harm: Vec<f64> = (1..=100).map(|n| -(n as f64)).collect();
        let d = check_self_adjointness_coeffs(&harm, None);
        let h: f64 = (2..=100).map(|n| 1.0 / n as f64).sum();
        assert_relative_eq!(d.sum_plus, h, epsilon = 1e-12);
        assert!(d.sum_plus < SA_SUM_THRESHOLD);
        assert_eq!(d.verdict, SaVerdict::SufficientConditionMet);
    }

    #[test]
    fn krylov_examples() {
        let v = real_mat(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        assert_eq!(cyclic_subspaces(&v, &unit(2, 0), RANK_TOL).ncols(), 1);
        let v = real_mat(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(cyclic_subspaces(&v, &unit(2, 0), RANK_TOL).ncols(), 2);
    }

    #[test]
    fn krylov_dimension_counts_distinct_visible_eigenvalues() {
        // V = Q diag(1, 1, 2, 3, 5) Q^* with a generic unitary Q.
        let mut r = rng::stream(3, "test", &[]);
        let raw = CMat::from_fn(5, 5, |_, _| c64(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)));
        let q = raw.qr().q();
        let d = CMat::from_diagonal(&CVec::from_vec(
            [1.0, 1.0, 2.0, 3.0, 5.0].iter().map(|&x| c64(x, 0.0)).collect(),
        ));
        let v = &q * d * q.adjoint();
        let v = (&v + v.adjoint()) * c64(0.5, 0.0);
        let vec = CVec::from_fn(5, |_, _| c64(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)));
        let vec = vec.unscale(vec.norm());
        let basis = cyclic_subspaces(&v, &vec, RANK_TOL);
        // Oracle: eigen-decomposition, counting distinct eigenvalues with overlap.
        let eig = v.clone().symmetric_eigen();
        let mut vals: Vec<f64> = Vec::new();
        for j in 0..5 {
            let ov = eig.eigenvectors.column(j).dotc(&vec).norm();
            let l = eig.eigenvalues[j];
            if ov > 1e-8 && !vals.iter().any(|x| (x - l).abs() < 1e-8) {
                vals.push(l);
            }
        }
        assert_eq!(basis.ncols(), vals.len());
        assert_eq!(basis.ncols(), 4);
        let resid = &v * &basis - &basis * (basis.adjoint() * &v * &basis);
        assert!(resid.norm() < 1e-8);
    }

    #[test]
    fn factor_examples() {
        let (a, u, p) = factor_rank_one(&real_mat(1, 1, &[-1.0]), RANK_TOL).unwrap();
        assert_relative_eq!(a, -1.0);
        assert_relative_eq!(p[0].re, 1.0);
        assert_relative_eq!(u[0].re, -1.0);

        let ups = CVec::from_vec(vec![c64(1.0, 0.0), c64(1.0, 0.0)]).unscale(2f64.sqrt());
        let phi = unit(3, 0);
        let d = (&ups * phi.adjoint()) * c64(-3.0, 0.0);
        let (a, u, p) = factor_rank_one(&d, RANK_TOL).unwrap();
        assert_relative_eq!(a, -3.0, epsilon = 1e-12);
        assert!((p - &phi).norm() < 1e-12);
        assert!((u + &ups).norm() < 1e-12);

        let d = real_mat(2, 2, &[1.0, 0.0, 0.0, 1e-13]);
        let (a, u, p) = factor_rank_one(&d, RANK_TOL).unwrap();
        assert_relative_eq!(a, -1.0, epsilon = 1e-12);
        assert!((u - unit(2, 0)).norm() < 1e-12);
        assert!((p - unit(2, 0)).norm() < 1e-12);

        let d = real_mat(2, 2, &[1.0, 0.0, 0.0, 1e-3]);
        assert!(matches!(factor_rank_one(&d, RANK_TOL), Err(OcsError::NotOneChannel { .. })));
    }

    #[test]
    fn partition_examples() {
        let path = Graph::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        assert_eq!(build_partition(&path, &[0]).unwrap(), vec![vec![0], vec![1], vec![2]]);
        let star = Graph::from_edges(4, &[(0, 1, 1.0), (0, 2, 1.0), (0, 3, 1.0)]).unwrap();
        assert_eq!(build_partition(&star, &[0]).unwrap(), vec![vec![0], vec![1, 2, 3]]);
        let split = Graph::from_edges(3, &[(0, 1, 1.0)]).unwrap();
        assert!(matches!(build_partition(&split, &[0]), Err(OcsError::DanglingComponent { .. })));
    }

    #[test]
    fn cyclic_spaces_contain_modes() {
        let op = materialize(&RandomShells::new(5, 6), Geometry::Half, 3, 0).unwrap();
        for s in op.right_shells() {
            let cs = CyclicSubspaces::of_shell(s, RANK_TOL);
            let proj = |b: &CMat, x: &CVec| x - b * (b.adjoint() * x);
            assert!(proj(&cs.w, &s.upsilon).norm() < 1e-10);
            assert!(proj(&cs.wt, &s.phi).norm() < 1e-10);
            assert!(proj(&cs.w, &(&s.v * cs.w.column(0))).norm() < 1e-8);
        }
    }

    #[test]
    fn lazy_shells_are_stable_under_extension() {
        let src = RandomShells::new(9, 5);
        let a = materialize(&src, Geometry::Half, 3, 0).unwrap();
        let b = materialize(&src, Geometry::Half, 6, 0).unwrap();
        for n in 1..=3 {
            assert_eq!(a.shell(n).unwrap().v, b.shell(n).unwrap().v);
        }
    }
}
