//! Optimal transport between gradient features.
//!
//! A feature vector is cut into contiguous blocks of `b` coordinates; each
//! block is a point in `R^b` carrying mass `1/m`. Two such clouds are compared
//! by the minimum-cost coupling under the Euclidean ground cost:
//!
//! ```text
//! OT(a, b) = min_{γ ∈ Γ(a, b)} Σ_ij γ_ij ‖p_i - q_j‖₂
//! ```
//!
//! | Solver | Method | Use |
//! |--------|--------|-----|
//! | [`ot_exact`] | transportation simplex (MODI potentials) | `m·n ≤ 65536` |
//! | [`ot_sinkhorn`] | log-domain Sinkhorn with ε-scaling | larger problems |

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradfeat::GradientFeature;
use crate::num::{l2_distance, log_sum_exp, Scalar};

/// Largest `m·n` solved exactly under [`OtSolver::Auto`].
pub const EXACT_CELL_LIMIT: usize = 65_536;
pub const DEFAULT_BLOCK_SIZE: usize = 16;
/// Sinkhorn ε as a fraction of the mean ground cost when none is given.
pub const DEFAULT_RELATIVE_EPSILON: f64 = 0.01;

/// Weighted points in `R^dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<T> {
    dim: usize,
    /// Row-major `m × dim`.
    coords: Vec<T>,
    masses: Vec<T>,
    /// Zero coordinates appended to fill the last block.
    padding: usize,
}

impl<T: Scalar> PointCloud<T> {
    pub fn new(points: Vec<Vec<T>>, masses: Vec<T>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("point cloud needs at least one point".into()));
        }
        if points.len() != masses.len() {
            return Err(Error::dim(points.len(), masses.len(), "masses per point"));
        }
        let dim = points[0].len();
        if dim == 0 {
            return Err(Error::InvalidArgument("points must have positive dimension".into()));
        }
        if let Some(p) = points.iter().find(|p| p.len() != dim) {
            return Err(Error::dim(dim, p.len(), "point"));
        }
        if masses.iter().any(|&w| !(w.is_finite() && w >= T::zero())) {
            return Err(Error::InvalidArgument("masses must be finite and nonnegative".into()));
        }
        let total: T = masses.iter().copied().sum();
        if (total - T::one()).abs() > T::lit(1e-9).max(T::epsilon() * T::lit(16.0)) {
            return Err(Error::InvalidArgument(format!("masses sum to {total}, expected 1")));
        }
        let coords: Vec<T> = points.into_iter().flatten().collect();
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("point coordinates".into()));
        }
        Ok(Self {
            dim,
            coords,
            masses,
            padding: 0,
        })
    }

    pub fn uniform(points: Vec<Vec<T>>) -> Result<Self> {
        let m = points.len().max(1);
        let w = T::one() / T::lit(m as f64);
        let masses = vec![w; points.len()];
        Self::new(points, masses)
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[T] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn masses(&self) -> &[T] {
        &self.masses
    }

    pub fn padding(&self) -> usize {
        self.padding
    }
}

/// Cuts `g` into `ceil(k/b)` blocks of `b` coordinates with uniform masses.
/// The last block is zero-padded when `b` does not divide `k`.
pub fn featurize_values<T: Scalar>(g: &[T], block: usize) -> Result<PointCloud<T>> {
    if block == 0 {
        return Err(Error::InvalidBlockSize);
    }
    if g.is_empty() {
        return Err(Error::InvalidArgument("cannot featurize an empty vector".into()));
    }
    let m = g.len().div_ceil(block);
    let padding = m * block - g.len();
    let mut coords = g.to_vec();
    coords.resize(m * block, T::zero());
    Ok(PointCloud {
        dim: block,
        coords,
        masses: vec![T::one() / T::lit(m as f64); m],
        padding,
    })
}

pub fn featurize<T: Scalar>(g: &GradientFeature<T>, block: usize) -> Result<PointCloud<T>> {
    featurize_values(&g.values, block)
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                data.push(self.get(i, j));
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    pub fn mean(&self) -> T {
        self.data.iter().copied().sum::<T>() / T::lit(self.data.len() as f64)
    }
}

/// `C_ij = ‖a_i - b_j‖₂`.
pub fn cost_matrix<T: Scalar>(a: &PointCloud<T>, b: &PointCloud<T>) -> Result<Matrix<T>> {
    if a.dim() != b.dim() {
        return Err(Error::dim(a.dim(), b.dim(), "point dimension"));
    }
    let mut data = Vec::with_capacity(a.len() * b.len());
    for i in 0..a.len() {
        for j in 0..b.len() {
            data.push(l2_distance(a.point(i), b.point(j)));
        }
    }
    Ok(Matrix {
        rows: a.len(),
        cols: b.len(),
        data,
    })
}

/// A coupling between two discrete measures and its cost.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan<T> {
    pub gamma: Matrix<T>,
    pub cost: Matrix<T>,
    /// `Σ γ_ij C_ij`.
    pub total_cost: T,
    pub iterations: usize,
    /// `Σ_i |Σ_j γ_ij - a_i| + Σ_j |Σ_i γ_ij - b_j|`.
    pub marginal_error: T,
    /// Always true for the exact solver.
    pub converged: bool,
}

impl<T: Scalar> TransportPlan<T> {
    fn assemble(gamma: Matrix<T>, cost: Matrix<T>, a: &[T], b: &[T], iterations: usize, converged: bool) -> Self {
        let total_cost = gamma.data.iter().zip(&cost.data).map(|(&g, &c)| g * c).sum();
        let marginal_error = marginal_error(&gamma, a, b);
        Self {
            gamma,
            cost,
            total_cost,
            iterations,
            marginal_error,
            converged,
        }
    }

    /// Plain sum of all coupling entries (1 for any feasible plan).
    pub fn coupling_mass(&self) -> T {
        self.gamma.data.iter().copied().sum()
    }

    pub fn row_sums(&self) -> Vec<T> {
        (0..self.gamma.rows).map(|i| self.gamma.row(i).iter().copied().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.gamma.cols];
        for i in 0..self.gamma.rows {
            for (o, &g) in out.iter_mut().zip(self.gamma.row(i)) {
                *o += g;
            }
        }
        out
    }

    /// Fails with [`Error::NotConverged`] if the solver stopped early.
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged {
                iterations: self.iterations,
                marginal_error: self.marginal_error.to_f64_lossy(),
            })
        }
    }

    /// Diagnostic record `{m, n, gamma, total_cost}` as one JSON line.
    pub fn dump(&self) -> String {
        #[derive(Serialize)]
        struct Dump {
            m: usize,
            n: usize,
            gamma: Vec<Vec<f64>>,
            total_cost: f64,
        }
        let gamma = (0..self.gamma.rows)
            .map(|i| self.gamma.row(i).iter().map(|v| v.to_f64_lossy()).collect())
            .collect();
        serde_json::to_string(&Dump {
            m: self.gamma.rows,
            n: self.gamma.cols,
            gamma,
            total_cost: self.total_cost.to_f64_lossy(),
        })
        .expect("plan serializes")
    }
}

fn marginal_error<T: Scalar>(gamma: &Matrix<T>, a: &[T], b: &[T]) -> T {
    let mut err = T::zero();
    let mut cols = vec![T::zero(); gamma.cols];
    for (i, &ai) in a.iter().enumerate() {
        let row = gamma.row(i);
        err += (row.iter().copied().sum::<T>() - ai).abs();
        for (c, &g) in cols.iter_mut().zip(row) {
            *c += g;
        }
    }
    err + cols.iter().zip(b).map(|(&c, &bj)| (c - bj).abs()).sum::<T>()
}

pub fn ot_exact<T: Scalar>(a: &PointCloud<T>, b: &PointCloud<T>) -> Result<TransportPlan<T>> {
    let cost = cost_matrix(a, b)?;
    transport_simplex(a.masses(), b.masses(), cost)
}

/// Exact transportation problem on explicit masses and costs.
///
/// Starts from the north-west corner basis and pivots on the most negative
/// reduced cost (switching to Bland's rule after a run of degenerate pivots)
/// until every reduced cost is nonnegative.
pub fn transport_simplex<T: Scalar>(a: &[T], b: &[T], cost: Matrix<T>) -> Result<TransportPlan<T>> {
    let (m, n) = (a.len(), b.len());
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument("transport problem needs nonempty marginals".into()));
    }
    if cost.rows != m || cost.cols != n {
        return Err(Error::dim(m * n, cost.rows * cost.cols, "cost matrix shape"));
    }
    let (sa, sb): (T, T) = (a.iter().copied().sum(), b.iter().copied().sum());
    if (sa - sb).abs() > T::lit(1e-7) * sa.max(sb).max(T::one()) {
        return Err(Error::SolverFailure(format!("unbalanced marginals: {sa} vs {sb}")));
    }

    let mut basis = Basis::north_west(a, b);
    let cmax = cost.data.iter().copied().fold(T::zero(), |x, c| x.max(c.abs()));
    let tol = T::epsilon() * T::lit(64.0) * cmax.max(T::one());
    let max_iter = 50 * m * n + 1000;
    let mut degenerate_run = 0usize;
    let mut iterations = 0;

    loop {
        if iterations >= max_iter {
            return Err(Error::SolverFailure(format!("no optimum after {iterations} pivots")));
        }
        let (u, v) = basis.potentials(&cost);
        let bland = degenerate_run > m + n;
        let mut entering: Option<(usize, usize, T)> = None;
        'scan: for i in 0..m {
            for j in 0..n {
                if basis.is_basic(i, j) {
                    continue;
                }
                let rc = cost.get(i, j) - u[i] - v[j];
                if rc < -tol {
                    match entering {
                        Some((_, _, best)) if rc >= best => {}
                        _ => entering = Some((i, j, rc)),
                    }
                    if bland {
                        break 'scan;
                    }
                }
            }
        }
        let Some((ei, ej, _)) = entering else { break };
        let theta = basis.pivot(ei, ej);
        degenerate_run = if theta == T::zero() { degenerate_run + 1 } else { 0 };
        iterations += 1;
    }

    let mut gamma = vec![T::zero(); m * n];
    for cell in &basis.cells {
        gamma[cell.i * n + cell.j] += cell.flow;
    }
    let gamma = Matrix { rows: m, cols: n, data: gamma };
    Ok(TransportPlan::assemble(gamma, cost, a, b, iterations, true))
}

#[derive(Debug, Clone, Copy)]
struct Cell<T> {
    i: usize,
    j: usize,
    flow: T,
}

/// Spanning tree of `m + n - 1` basic cells over row nodes `0..m` and
/// column nodes `m..m+n`.
struct Basis<T> {
    m: usize,
    n: usize,
    cells: Vec<Cell<T>>,
    /// Index into `cells` for each basic `(i, j)`, or `usize::MAX`.
    lookup: Vec<usize>,
}

impl<T: Scalar> Basis<T> {
    fn north_west(a: &[T], b: &[T]) -> Self {
        let (m, n) = (a.len(), b.len());
        let mut ra = a.to_vec();
        let mut rb = b.to_vec();
        let mut cells = Vec::with_capacity(m + n - 1);
        let (mut i, mut j) = (0, 0);
        loop {
            let f = ra[i].min(rb[j]).max(T::zero());
            cells.push(Cell { i, j, flow: f });
            ra[i] -= f;
            rb[j] -= f;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if i == m - 1 {
                j += 1;
            } else if j == n - 1 || ra[i] <= rb[j] {
                i += 1;
            } else {
                j += 1;
            }
        }
        let mut basis = Self {
            m,
            n,
            cells,
            lookup: vec![usize::MAX; m * n],
        };
        basis.reindex();
        basis
    }

    fn reindex(&mut self) {
        self.lookup.iter_mut().for_each(|x| *x = usize::MAX);
        for (k, c) in self.cells.iter().enumerate() {
            self.lookup[c.i * self.n + c.j] = k;
        }
    }

    fn is_basic(&self, i: usize, j: usize) -> bool {
        self.lookup[i * self.n + j] != usize::MAX
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.m + self.n];
        for (k, c) in self.cells.iter().enumerate() {
            adj[c.i].push(k);
            adj[self.m + c.j].push(k);
        }
        adj
    }

    /// Dual potentials with `u_0 = 0` and `u_i + v_j = C_ij` on basic cells.
    fn potentials(&self, cost: &Matrix<T>) -> (Vec<T>, Vec<T>) {
        let adj = self.adjacency();
        let mut pot = vec![T::zero(); self.m + self.n];
        let mut seen = vec![false; self.m + self.n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(node) = stack.pop() {
            for &k in &adj[node] {
                let c = self.cells[k];
                let (row, col) = (c.i, self.m + c.j);
                let other = if node == row { col } else { row };
                if !seen[other] {
                    seen[other] = true;
                    // u_i + v_j = C_ij
                    pot[other] = cost.get(c.i, c.j) - pot[node];
                    stack.push(other);
                }
            }
        }
        let v = pot.split_off(self.m);
        (pot, v)
    }

    /// Basic cells on the tree path from row node `i` to column node `m + j`,
    /// ordered from `i`.
    fn path(&self, i: usize, j: usize) -> Vec<usize> {
        let adj = self.adjacency();
        let target = self.m + j;
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; self.m + self.n];
        let mut seen = vec![false; self.m + self.n];
        let mut queue = std::collections::VecDeque::from([i]);
        seen[i] = true;
        while let Some(node) = queue.pop_front() {
            if node == target {
                break;
            }
            for &k in &adj[node] {
                let c = self.cells[k];
                let other = if node == c.i { self.m + c.j } else { c.i };
                if !seen[other] {
                    seen[other] = true;
                    parent[other] = Some((node, k));
                    queue.push_back(other);
                }
            }
        }
        let mut edges = Vec::new();
        let mut node = target;
        while let Some((prev, k)) = parent[node] {
            edges.push(k);
            node = prev;
        }
        edges.reverse();
        edges
    }

    /// Brings `(i, j)` into the basis; returns the flow moved around the cycle.
    fn pivot(&mut self, i: usize, j: usize) -> T {
        let path = self.path(i, j);
        // Cycle: (i, j) gains flow, then path edges alternate -, +, -, ...
        // starting from the edge at row i.
        let mut theta = T::infinity();
        let mut leaving = usize::MAX;
        for (t, &k) in path.iter().enumerate() {
            if t % 2 == 0 {
                let f = self.cells[k].flow;
                let c = self.cells[k];
                let better = f < theta
                    || (f == theta && leaving != usize::MAX && {
                        let l = self.cells[leaving];
                        (c.i, c.j) < (l.i, l.j)
                    });
                if better {
                    theta = f;
                    leaving = k;
                }
            }
        }
        for (t, &k) in path.iter().enumerate() {
            if t % 2 == 0 {
                self.cells[k].flow = (self.cells[k].flow - theta).max(T::zero());
            } else {
                self.cells[k].flow += theta;
            }
        }
        self.cells[leaving] = Cell { i, j, flow: theta };
        self.reindex();
        theta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornParams {
    /// Entropic regularization, in cost units.
    pub epsilon: f64,
    pub max_iter: usize,
    /// Target L1 marginal violation.
    pub tol: f64,
}

impl Default for SinkhornParams {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            max_iter: 100_000,
            tol: 1e-7,
        }
    }
}

pub fn ot_sinkhorn<T: Scalar>(a: &PointCloud<T>, b: &PointCloud<T>, params: SinkhornParams) -> Result<TransportPlan<T>> {
    let cost = cost_matrix(a, b)?;
    sinkhorn_log(a.masses(), b.masses(), cost, params)
}

/// Log-domain Sinkhorn on explicit masses and costs.
///
/// ε is annealed geometrically from the largest cost down to the target,
/// warm-starting the dual potentials at each level. The returned plan has
/// `converged == false` when `max_iter` ran out first.
pub fn sinkhorn_log<T: Scalar>(a: &[T], b: &[T], cost: Matrix<T>, params: SinkhornParams) -> Result<TransportPlan<T>> {
    let (m, n) = (a.len(), b.len());
    if !(params.epsilon > 0.0 && params.epsilon.is_finite()) {
        return Err(Error::InvalidArgument("sinkhorn epsilon must be positive".into()));
    }
    if cost.rows != m || cost.cols != n {
        return Err(Error::dim(m * n, cost.rows * cost.cols, "cost matrix shape"));
    }
    let log_a: Vec<T> = a.iter().map(|&x| x.ln()).collect();
    let log_b: Vec<T> = b.iter().map(|&x| x.ln()).collect();
    let mut f = vec![T::zero(); m];
    let mut g = vec![T::zero(); n];
    let mut buf_n = vec![T::zero(); n];
    let mut buf_m = vec![T::zero(); m];

    let target = T::lit(params.epsilon);
    let cmax = cost.data.iter().copied().fold(T::zero(), T::max);
    let mut eps = cmax.max(target);
    let tol = T::lit(params.tol);
    let mut iterations = 0;
    let mut converged = false;

    loop {
        let last_level = eps <= target;
        let level_tol = if last_level { tol } else { tol.max(T::lit(1e-3)) };
        loop {
            for i in 0..m {
                if log_a[i] == T::neg_infinity() {
                    f[i] = T::neg_infinity();
                    continue;
                }
                for j in 0..n {
                    buf_n[j] = (g[j] - cost.get(i, j)) / eps;
                }
                f[i] = eps * (log_a[i] - log_sum_exp(&buf_n));
            }
            for j in 0..n {
                if log_b[j] == T::neg_infinity() {
                    g[j] = T::neg_infinity();
                    continue;
                }
                for i in 0..m {
                    buf_m[i] = (f[i] - cost.get(i, j)) / eps;
                }
                g[j] = eps * (log_b[j] - log_sum_exp(&buf_m));
            }
            iterations += 1;
            // Columns are exact after the g-update; check rows.
            let mut err = T::zero();
            for i in 0..m {
                let row: T = (0..n)
                    .map(|j| plan_entry(f[i], g[j], cost.get(i, j), eps))
                    .sum();
                err += (row - a[i]).abs();
            }
            if err <= level_tol {
                if last_level {
                    converged = true;
                }
                break;
            }
            if iterations >= params.max_iter {
                break;
            }
        }
        if last_level || iterations >= params.max_iter {
            break;
        }
        eps = (eps * T::lit(0.5)).max(target);
    }

    let mut gamma = Vec::with_capacity(m * n);
    for i in 0..m {
        for j in 0..n {
            gamma.push(plan_entry(f[i], g[j], cost.get(i, j), eps));
        }
    }
    let gamma = Matrix { rows: m, cols: n, data: gamma };
    Ok(TransportPlan::assemble(gamma, cost, a, b, iterations, converged))
}

fn plan_entry<T: Scalar>(f: T, g: T, c: T, eps: T) -> T {
    if f == T::neg_infinity() || g == T::neg_infinity() {
        T::zero()
    } else {
        ((f + g - c) / eps).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OtSolver {
    Exact,
    Sinkhorn,
    /// Exact up to [`EXACT_CELL_LIMIT`] cells, Sinkhorn above.
    Auto,
}

impl std::str::FromStr for OtSolver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(OtSolver::Exact),
            "sinkhorn" => Ok(OtSolver::Sinkhorn),
            "auto" => Ok(OtSolver::Auto),
            other => Err(Error::InvalidArgument(format!("unknown OT solver {other:?}"))),
        }
    }
}

/// Which number of the solved coupling is reported as the distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceReading {
    /// `Σ γ_ij C_ij`.
    #[default]
    TransportCost,
    /// `Σ γ_ij`, kept for diagnostics only: it is 1 for every feasible plan.
    CouplingMass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OtConfig {
    pub block_size: usize,
    pub solver: OtSolver,
    /// Absolute Sinkhorn ε; `None` means 1% of the mean ground cost.
    pub epsilon: Option<f64>,
    pub max_iter: usize,
    pub tol: f64,
    pub reading: DistanceReading,
}

impl Default for OtConfig {
    fn default() -> Self {
        Self {
            block_size: DEFAULT_BLOCK_SIZE,
            solver: OtSolver::Auto,
            epsilon: None,
            max_iter: 10_000,
            tol: 1e-7,
            reading: DistanceReading::TransportCost,
        }
    }
}

impl OtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block_size == 0 {
            return Err(Error::InvalidBlockSize);
        }
        if let Some(e) = self.epsilon {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::InvalidArgument("ot epsilon must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn solve<T: Scalar>(&self, a: &PointCloud<T>, b: &PointCloud<T>) -> Result<TransportPlan<T>> {
        let cost = cost_matrix(a, b)?;
        let exact = match self.solver {
            OtSolver::Exact => true,
            OtSolver::Sinkhorn => false,
            OtSolver::Auto => cost.rows * cost.cols <= EXACT_CELL_LIMIT,
        };
        if exact {
            transport_simplex(a.masses(), b.masses(), cost)
        } else {
            let epsilon = self
                .epsilon
                .unwrap_or_else(|| DEFAULT_RELATIVE_EPSILON * cost.mean().to_f64_lossy())
                .max(f64::MIN_POSITIVE);
            let params = SinkhornParams {
                epsilon,
                max_iter: self.max_iter,
                tol: self.tol,
            };
            sinkhorn_log(a.masses(), b.masses(), cost, params)
        }
    }

    /// Distance between two already-featurized clouds.
    pub fn distance<T: Scalar>(&self, a: &PointCloud<T>, b: &PointCloud<T>) -> Result<T> {
        let plan = self.solve(a, b)?;
        Ok(match self.reading {
            DistanceReading::TransportCost => plan.total_cost,
            DistanceReading::CouplingMass => plan.coupling_mass(),
        })
    }

    pub fn feature_distance<T: Scalar>(&self, a: &GradientFeature<T>, b: &GradientFeature<T>) -> Result<T> {
        let pa = featurize(a, self.block_size)?;
        let pb = featurize(b, self.block_size)?;
        self.distance(&pa, &pb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(points: &[&[f64]]) -> PointCloud<f64> {
        PointCloud::uniform(points.iter().map(|p| p.to_vec()).collect()).unwrap()
    }

    #[test]
    fn featurize_blocks() {
        let c = featurize_values(&[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.point(0), &[1.0, 2.0]);
        assert_eq!(c.point(1), &[3.0, 4.0]);
        assert_eq!(c.masses(), &[0.5, 0.5]);

        let c = featurize_values(&[1.0, 2.0, 3.0, 4.0], 4).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.masses(), &[1.0]);

        let c = featurize_values(&[1.0, 2.0, 3.0], 2).unwrap();
        assert_eq!(c.point(1), &[3.0, 0.0]);
        assert_eq!(c.padding(), 1);

        assert!(matches!(featurize_values(&[1.0f64], 0), Err(Error::InvalidBlockSize)));
    }

    #[test]
    fn cost_matrix_cases() {
        let a = cloud(&[&[0.0, 0.0]]);
        assert_eq!(cost_matrix(&a, &a).unwrap().data, vec![0.0]);
        let b = cloud(&[&[3.0, 4.0]]);
        assert_eq!(cost_matrix(&a, &b).unwrap().data, vec![5.0]);
        let c = cloud(&[&[1.0, 2.0, 3.0]]);
        assert!(matches!(cost_matrix(&a, &c), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn cost_matrix_transposes_under_swap() {
        let a = cloud(&[&[0.0, 1.0], &[2.0, -1.0], &[0.5, 0.5]]);
        let b = cloud(&[&[1.0, 1.0], &[-3.0, 0.0]]);
        let ab = cost_matrix(&a, &b).unwrap();
        let ba = cost_matrix(&b, &a).unwrap();
        assert_eq!(ab.transpose(), ba);
        for i in 0..3 {
            for j in 0..2 {
                let d: f64 = a.point(i).iter().zip(b.point(j)).map(|(x, y)| (x - y).powi(2)).sum();
                assert!((ab.get(i, j) - d.sqrt()).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn exact_identity_is_zero() {
        let a = cloud(&[&[0.0, 1.0], &[2.0, -1.0], &[0.5, 0.5], &[0.5, 0.5]]);
        let p = ot_exact(&a, &a).unwrap();
        assert_eq!(p.total_cost, 0.0);
    }

    #[test]
    fn exact_line_matching() {
        // 0→1, 2→3 costs (1 + 1)/2 = 1; the crossed matching costs (3 + 1)/2 = 2.
        let a = cloud(&[&[0.0, 0.0], &[2.0, 0.0]]);
        let b = cloud(&[&[1.0, 0.0], &[3.0, 0.0]]);
        let p = ot_exact(&a, &b).unwrap();
        assert!((p.total_cost - 1.0).abs() < 1e-12);
        assert_eq!(p.gamma.data, vec![0.5, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn exact_plan_marginals() {
        let a = PointCloud::<f64>::new(vec![vec![0.0], vec![1.0], vec![5.0]], vec![0.5, 0.25, 0.25]).unwrap();
        let b = PointCloud::new(vec![vec![0.5], vec![4.0]], vec![0.625, 0.375]).unwrap();
        let p = ot_exact(&a, &b).unwrap();
        for (r, w) in p.row_sums().iter().zip(a.masses()) {
            assert!((r - w).abs() < 1e-12f64);
        }
        for (c, w) in p.col_sums().iter().zip(b.masses()) {
            assert!((c - w).abs() < 1e-12f64);
        }
        // 1-D: optimal cost equals ∫|F_a - F_b|.
        // Segments [0,.5) [.5,1) [1,4) [4,5) with |F_a - F_b| = .5, .125, .125, .25.
        let w1: f64 = 0.5 * 0.5 + 0.5 * 0.125 + 3.0 * 0.125 + 1.0 * 0.25;
        assert!((p.total_cost - w1).abs() < 1e-12, "{} vs {w1}", p.total_cost);
    }

    #[test]
    fn sinkhorn_close_to_exact() {
        let a = cloud(&[&[0.0, 0.0], &[2.0, 0.0]]);
        let b = cloud(&[&[1.0, 0.0], &[3.0, 0.0]]);
        let params = SinkhornParams { epsilon: 1e-3, ..Default::default() };
        let p = ot_sinkhorn(&a, &b, params).unwrap().require_converged().unwrap();
        assert!((p.total_cost - 1.0).abs() < 0.01);
        let same = ot_sinkhorn(&a, &a, params).unwrap();
        assert!(same.total_cost < 1e-6);
    }

    #[test]
    fn sinkhorn_reports_non_convergence() {
        let a = cloud(&[&[0.0], &[1.0], &[2.5]]);
        let b = cloud(&[&[0.2], &[3.0]]);
        let params = SinkhornParams { epsilon: 1e-4, max_iter: 3, tol: 1e-14 };
        let p = ot_sinkhorn(&a, &b, params).unwrap();
        assert!(!p.converged);
        assert!(matches!(p.require_converged(), Err(Error::NotConverged { .. })));
        let bad = SinkhornParams { epsilon: 0.0, ..Default::default() };
        assert!(ot_sinkhorn(&a, &b, bad).is_err());
    }

    #[test]
    fn coupling_mass_reading_is_one() {
        let a = cloud(&[&[0.0, 0.0], &[2.0, 0.0]]);
        let b = cloud(&[&[1.0, 0.0], &[3.0, 0.0], &[9.0, 9.0]]);
        let cfg = OtConfig { reading: DistanceReading::CouplingMass, ..Default::default() };
        assert!((cfg.distance(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn plan_dump_is_json() {
        let a = cloud(&[&[0.0], &[1.0]]);
        let p = ot_exact(&a, &a).unwrap();
        let v: serde_json::Value = serde_json::from_str(&p.dump()).unwrap();
        assert_eq!(v["m"], 2);
        assert_eq!(v["total_cost"], 0.0);
    }

    #[test]
    fn rejects_invalid_clouds() {
        assert!(PointCloud::<f64>::new(vec![], vec![]).is_err());
        assert!(PointCloud::new(vec![vec![0.0]], vec![0.5]).is_err());
        assert!(PointCloud::new(vec![vec![0.0], vec![1.0]], vec![1.5, -0.5]).is_err());
    }
}
