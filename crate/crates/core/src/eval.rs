//! Entropic optimal-transport distance between uniform empirical measures,
//! and an exact assignment solver for small instances.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::{sq_dist, SampleMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OTConfig {
    /// Entropic penalty.
    pub reg: f64,
    pub max_iters: usize,
    /// Stop once both marginals are within this L1 distance of uniform.
    pub marginal_tol: f64,
    /// Use `|a - b|^2` instead of `|a - b|` as the ground cost.
    pub squared_cost: bool,
}

impl Default for OTConfig {
    fn default() -> Self {
        OTConfig {
            reg: 1e-2,
            max_iters: 10_000,
            marginal_tol: 1e-6,
            squared_cost: false,
        }
    }
}

impl OTConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.reg > 0.0 && self.reg.is_finite()) {
            return Err(Error::invalid(format!("reg must be positive, got {}", self.reg)));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if !(self.marginal_tol > 0.0) {
            return Err(Error::invalid("marginal_tol must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OTReport {
    /// `<plan, cost matrix>`, without the entropy term.
    pub cost: f64,
    pub iters: usize,
    /// Largest L1 violation of the two marginals.
    pub residual: f64,
    pub reg: f64,
    pub converged: bool,
}

/// Scalings are folded into the potentials once they leave `[1/TAU, TAU]`.
const TAU: f64 = 1e30;
/// Each annealing stage divides the penalty by this factor.
const ANNEAL: f64 = 4.0;
/// Over-relaxation exponent for the scaling updates; 1 is plain Sinkhorn.
const OMEGA: f64 = 1.8;

fn cost_matrix(a: &SampleMatrix, b: &SampleMatrix, squared: bool) -> Array2<f64> {
    let mut c = Array2::zeros((a.count(), b.count()));
    c.axis_iter_mut(ndarray::Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut row)| {
            let ai = a.row(i);
            for (j, v) in row.iter_mut().enumerate() {
                let s = sq_dist(ai, b.row(j));
                *v = if squared { s } else { s.sqrt() };
            }
        });
    c
}

fn relax(old: f64, fresh: f64, omega: f64) -> f64 {
    if omega == 1.0 {
        fresh
    } else {
        old.powf(1.0 - omega) * fresh.powf(omega)
    }
}

/// Log-domain stabilized Sinkhorn state: plan = diag(u) exp((f + g - C)/reg) diag(v).
struct Solver<'a> {
    c: &'a Array2<f64>,
    reg: f64,
    a: f64,
    b: f64,
    f: Vec<f64>,
    g: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
    kernel: Array2<f64>,
    omega: f64,
}

impl<'a> Solver<'a> {
    fn new(c: &'a Array2<f64>, reg: f64) -> Self {
        let (n, m) = c.dim();
        let mut s = Solver {
            c,
            reg,
            a: 1.0 / n as f64,
            b: 1.0 / m as f64,
            f: vec![0.0; n],
            g: vec![0.0; m],
            u: vec![1.0; n],
            v: vec![1.0; m],
            kernel: Array2::zeros((n, m)),
            omega: OMEGA,
        };
        s.rebuild();
        s
    }

    fn absorb(&mut self) {
        for (f, u) in self.f.iter_mut().zip(self.u.iter_mut()) {
            *f += self.reg * u.ln();
            *u = 1.0;
        }
        for (g, v) in self.g.iter_mut().zip(self.v.iter_mut()) {
            *g += self.reg * v.ln();
            *v = 1.0;
        }
    }

    fn rebuild(&mut self) {
        let (f, g, c, reg) = (&self.f, &self.g, self.c, self.reg);
        self.kernel
            .axis_iter_mut(ndarray::Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(i, mut row)| {
                let fi = f[i];
                for (j, k) in row.iter_mut().enumerate() {
                    *k = ((fi + g[j] - c[[i, j]]) / reg).exp();
                }
            });
    }

    /// Exact log-sum-exp update of `f`, used when the scaled kernel under- or overflows.
    fn log_update_f(&mut self) {
        let (g, c, reg, la) = (&self.g, self.c, self.reg, self.a.ln());
        let n = self.f.len();
        let fresh: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                let row = c.row(i);
                let mx = g
                    .iter()
                    .zip(row.iter())
                    .map(|(gj, cij)| (gj - cij) / reg)
                    .fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = g
                    .iter()
                    .zip(row.iter())
                    .map(|(gj, cij)| ((gj - cij) / reg - mx).exp())
                    .sum();
                reg * (la - mx - s.ln())
            })
            .collect();
        self.f = fresh;
        self.u.iter_mut().for_each(|u| *u = 1.0);
    }

    fn log_update_g(&mut self) {
        let (f, c, reg, lb) = (&self.f, self.c, self.reg, self.b.ln());
        let n = f.len();
        let m = self.g.len();
        let fresh: Vec<f64> = (0..m)
            .into_par_iter()
            .map(|j| {
                let mx = (0..n)
                    .map(|i| (f[i] - c[[i, j]]) / reg)
                    .fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = (0..n).map(|i| ((f[i] - c[[i, j]]) / reg - mx).exp()).sum();
                reg * (lb - mx - s.ln())
            })
            .collect();
        self.g = fresh;
        self.v.iter_mut().for_each(|v| *v = 1.0);
    }

    fn kv(&self) -> Vec<f64> {
        self.kernel
            .axis_iter(ndarray::Axis(0))
            .into_par_iter()
            .map(|row| row.iter().zip(self.v.iter()).map(|(k, v)| k * v).sum())
            .collect()
    }

    fn ktu(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.g.len()];
        for (row, &u) in self.kernel.axis_iter(ndarray::Axis(0)).zip(self.u.iter()) {
            for (o, k) in out.iter_mut().zip(row.iter()) {
                *o += k * u;
            }
        }
        out
    }

    /// One full sweep. Returns the L1 violation of the row marginal measured
    /// before the row update.
    fn sweep(&mut self) -> f64 {
        let kv = self.kv();
        let mut residual = 0.0;
        let mut bad = false;
        for (u, &k) in self.u.iter_mut().zip(kv.iter()) {
            residual += (*u * k - self.a).abs();
            *u = relax(*u, self.a / k, self.omega);
            bad |= !u.is_finite() || *u == 0.0;
        }
        if bad {
            self.absorb_finite_v();
            self.log_update_f();
            self.rebuild();
        }
        let ktu = self.ktu();
        let mut bad = false;
        for (v, &k) in self.v.iter_mut().zip(ktu.iter()) {
            *v = relax(*v, self.b / k, self.omega);
            bad |= !v.is_finite() || *v == 0.0;
        }
        if bad {
            self.absorb_finite_u();
            self.log_update_g();
            self.rebuild();
        }
        let big = |x: &f64| *x > TAU || *x < 1.0 / TAU;
        if self.u.iter().any(big) || self.v.iter().any(big) {
            self.absorb();
            self.rebuild();
        }
        if residual.is_finite() {
            residual
        } else {
            f64::INFINITY
        }
    }

    fn absorb_finite_v(&mut self) {
        for (g, v) in self.g.iter_mut().zip(self.v.iter_mut()) {
            *g += self.reg * v.ln();
            *v = 1.0;
        }
    }

    fn absorb_finite_u(&mut self) {
        for (f, u) in self.f.iter_mut().zip(self.u.iter_mut()) {
            *f += self.reg * u.ln();
            *u = 1.0;
        }
    }

    fn set_reg(&mut self, reg: f64) {
        self.absorb();
        self.reg = reg;
        self.rebuild();
    }

    fn column_residual(&self) -> f64 {
        self.ktu()
            .iter()
            .zip(self.v.iter())
            .map(|(k, v)| (k * v - self.b).abs())
            .sum()
    }

    fn row_residual(&self) -> f64 {
        self.kv()
            .iter()
            .zip(self.u.iter())
            .map(|(k, u)| (k * u - self.a).abs())
            .sum()
    }

    fn transport_cost(&self) -> f64 {
        self.kernel
            .axis_iter(ndarray::Axis(0))
            .into_par_iter()
            .enumerate()
            .map(|(i, row)| {
                let ui = self.u[i];
                row.iter()
                    .zip(self.v.iter())
                    .zip(self.c.row(i).iter())
                    .map(|((k, v), c)| ui * k * v * c)
                    .sum::<f64>()
            })
            .sum()
    }
}

/// Entropic OT between the uniform measures on `a` and `b`.
///
/// The penalty is annealed geometrically from the cost scale down to
/// `cfg.reg`; only the final stage is run to `cfg.marginal_tol`.
pub fn sinkhorn_distance(a: &SampleMatrix, b: &SampleMatrix, cfg: &OTConfig) -> Result<OTReport> {
    cfg.validate()?;
    a.ensure_same_dim(b, "OT inputs")?;
    let c = cost_matrix(a, b, cfg.squared_cost);
    let c_max = c.iter().cloned().fold(0.0, f64::max);

    let mut schedule = Vec::new();
    let mut r = cfg.reg;
    while r < c_max {
        schedule.push(r);
        r *= ANNEAL;
    }
    schedule.reverse();
    if schedule.is_empty() {
        schedule.push(cfg.reg);
    }

    let mut solver = Solver::new(&c, schedule[0]);
    let mut iters = 0;
    let last = schedule.len() - 1;
    for (stage, &reg) in schedule.iter().enumerate() {
        if stage > 0 {
            solver.set_reg(reg);
        }
        let tol = if stage == last {
            cfg.marginal_tol
        } else {
            cfg.marginal_tol.max(1e-3)
        };
        let mut best = f64::INFINITY;
        loop {
            if iters >= cfg.max_iters {
                break;
            }
            let residual = solver.sweep();
            iters += 1;
            if residual < tol {
                break;
            }
            // Over-relaxation is only locally convergent; fall back if it stalls.
            if solver.omega != 1.0 && !(residual < 10.0 * best) {
                solver.omega = 1.0;
            }
            best = best.min(residual);
        }
        if iters >= cfg.max_iters {
            break;
        }
    }
    // Plain sweeps leave the column marginal exact; the last one can push the
    // rows back over the tolerance, so repeat while budget remains.
    solver.omega = 1.0;
    let residual = loop {
        solver.sweep();
        iters += 1;
        let r = solver.row_residual().max(solver.column_residual());
        if r <= cfg.marginal_tol || iters >= cfg.max_iters {
            break r;
        }
    };
    let cost = solver.transport_cost();
    if !cost.is_finite() {
        return Err(Error::Divergence { iteration: iters });
    }
    Ok(OTReport {
        cost,
        iters,
        residual,
        reg: cfg.reg,
        converged: residual <= cfg.marginal_tol,
    })
}

/// Exact optimal assignment cost (mean distance per matched pair) for equal-size sets.
pub fn exact_ot_small(a: &SampleMatrix, b: &SampleMatrix) -> Result<f64> {
    a.ensure_same_dim(b, "OT inputs")?;
    let n = a.count();
    if n != b.count() {
        return Err(Error::invalid(format!(
            "exact OT needs equal counts, got {} and {}",
            n,
            b.count()
        )));
    }
    if n > 64 {
        return Err(Error::invalid("exact OT is limited to 64 points per side"));
    }
    let c = cost_matrix(a, b, false);
    let assignment = hungarian(&c);
    let total: f64 = assignment.iter().enumerate().map(|(i, &j)| c[[i, j]]).sum();
    Ok(total / n as f64)
}

/// Minimum-cost perfect matching on a square matrix (shortest augmenting paths
/// with potentials). Returns the column assigned to each row.
fn hungarian(c: &Array2<f64>) -> Vec<usize> {
    let n = c.nrows();
    // 1-based arrays; index 0 is a virtual column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = c[[i0 - 1, j - 1]] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    assignment
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn col(v: &[f64]) -> SampleMatrix {
        SampleMatrix::from_column(v).unwrap()
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> SampleMatrix {
        SampleMatrix::new(Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))).unwrap()
    }

    /// Every permutation, for tiny sets.
    fn brute_force_assignment(a: &SampleMatrix, b: &SampleMatrix) -> f64 {
        fn rec(c: &Array2<f64>, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if row == c.nrows() {
                *best = best.min(acc);
                return;
            }
            for j in 0..c.ncols() {
                if !used[j] {
                    used[j] = true;
                    rec(c, row + 1, used, acc + c[[row, j]], best);
                    used[j] = false;
                }
            }
        }
        let c = cost_matrix(a, b, false);
        let mut best = f64::INFINITY;
        rec(&c, 0, &mut vec![false; c.ncols()], 0.0, &mut best);
        best / a.count() as f64
    }

    #[test]
    fn hungarian_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let n = rng.random_range(1..=7);
            let a = random_points(&mut rng, n, 2);
            let b = random_points(&mut rng, n, 2);
            let exact = exact_ot_small(&a, &b).unwrap();
            assert!((exact - brute_force_assignment(&a, &b)).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_small_examples() {
        assert_eq!(exact_ot_small(&col(&[0.0, 1.0]), &col(&[1.0, 2.0])).unwrap(), 1.0);
        assert_eq!(exact_ot_small(&col(&[0.3, -1.0]), &col(&[0.3, -1.0])).unwrap(), 0.0);
        assert!(exact_ot_small(&col(&[0.0]), &col(&[0.0, 1.0])).is_err());
    }

    #[test]
    fn singletons_cost_their_distance() {
        for reg in [1e-3, 1e-1, 10.0] {
            let cfg = OTConfig { reg, ..OTConfig::default() };
            let r = sinkhorn_distance(&col(&[0.0]), &col(&[1.0]), &cfg).unwrap();
            assert!((r.cost - 1.0).abs() < 1e-12);
            assert!(r.converged);
        }
    }

    #[test]
    fn identical_sets_cost_little() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_points(&mut rng, 50, 2);
        let r = sinkhorn_distance(&a, &a, &OTConfig::default()).unwrap();
        assert!(r.cost < 5.0 * 1e-2, "{}", r.cost);
    }

    #[test]
    fn matches_exact_ot_within_ten_reg() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cfg = OTConfig { reg: 1e-3, ..OTConfig::default() };
        for _ in 0..20 {
            let n = rng.random_range(1..=10);
            let a = random_points(&mut rng, n, 2);
            let b = random_points(&mut rng, n, 2);
            let r = sinkhorn_distance(&a, &b, &cfg).unwrap();
            let exact = exact_ot_small(&a, &b).unwrap();
            assert!((r.cost - exact).abs() <= 10.0 * cfg.reg, "{} vs {exact}", r.cost);
        }
    }

    #[test]
    fn stays_finite_at_small_reg_and_large_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = SampleMatrix::new(random_points(&mut rng, 30, 3).into_inner() * 500.0).unwrap();
        let b = SampleMatrix::new(random_points(&mut rng, 20, 3).into_inner() * 500.0).unwrap();
        let cfg = OTConfig { reg: 1e-4, max_iters: 2000, ..OTConfig::default() };
        let r = sinkhorn_distance(&a, &b, &cfg).unwrap();
        assert!(r.cost.is_finite() && r.residual.is_finite());
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = OTConfig { reg: 0.0, ..OTConfig::default() };
        assert!(sinkhorn_distance(&col(&[0.0]), &col(&[1.0]), &cfg).is_err());
    }
}
