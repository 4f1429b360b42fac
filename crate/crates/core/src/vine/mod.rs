//! Regular-vine copulas: structure, Dissmann selection, density and
//! inverse-Rosenblatt simulation.
//!
//! Edges are stored tree by tree. A first-tree edge joins two variables; an
//! edge of tree `t ≥ 1` joins two edges of tree `t − 1` (its children). Each
//! edge has an ordered conditioned pair `(first, second)` and a conditioning
//! set; the bivariate copula of the edge is evaluated at
//! `(F(first | conditioning), F(second | conditioning))`.

pub mod bicop;

use std::collections::BTreeSet;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{default_site_ids, CopulaMatrix};
use crate::depstats::kendall_tau;
use crate::error::{check_dim, Error, Result};
use crate::rng::rng_from;

pub use bicop::{fit_bicop, fit_bicop_family, BicopFit, BivCopula, Family, Rotation};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VineEdge {
    pub first: usize,
    pub second: usize,
    pub conditioning: Vec<usize>,
    /// Indices into the previous tree; `None` in the first tree.
    pub children: Option<(usize, usize)>,
}

impl VineEdge {
    fn all_vars(&self) -> BTreeSet<usize> {
        let mut s: BTreeSet<usize> = self.conditioning.iter().copied().collect();
        s.insert(self.first);
        s.insert(self.second);
        s
    }

    fn has_conditioned(&self, var: usize) -> bool {
        self.first == var || self.second == var
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RVineStructure {
    d: usize,
    trees: Vec<Vec<VineEdge>>,
}

impl RVineStructure {
    /// Builds a structure from index pairs: tree 0 pairs are variables,
    /// later pairs are edge indices of the previous tree. The first element
    /// of each pair supplies the edge's first conditioned variable.
    pub fn from_pairs(d: usize, pairs: &[Vec<(usize, usize)>]) -> Result<Self> {
        if d < 2 {
            return Err(Error::Argument("a vine needs at least two variables".into()));
        }
        if pairs.len() != d - 1 {
            return Err(Error::Argument(format!("expected {} trees, got {}", d - 1, pairs.len())));
        }
        let mut trees: Vec<Vec<VineEdge>> = Vec::with_capacity(d - 1);
        for (t, level) in pairs.iter().enumerate() {
            let mut edges = Vec::with_capacity(level.len());
            for &(a, b) in level {
                let edge = if t == 0 {
                    if a >= d || b >= d || a == b {
                        return Err(Error::Argument(format!("invalid first-tree edge ({a}, {b})")));
                    }
                    VineEdge {
                        first: a,
                        second: b,
                        conditioning: Vec::new(),
                        children: None,
                    }
                } else {
                    let prev = &trees[t - 1];
                    if a >= prev.len() || b >= prev.len() || a == b {
                        return Err(Error::Argument(format!("invalid edge ({a}, {b}) in tree {t}")));
                    }
                    join_edges(prev, a, b)?
                };
                edges.push(edge);
            }
            trees.push(edges);
        }
        let s = Self { d, trees };
        s.check()?;
        Ok(s)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn trees(&self) -> &[Vec<VineEdge>] {
        &self.trees
    }

    pub fn n_edges(&self) -> usize {
        self.trees.iter().map(Vec::len).sum()
    }

    /// Verifies that every tree is a spanning tree on the previous tree's
    /// edges and that the proximity condition holds.
    pub fn check(&self) -> Result<()> {
        let d = self.d;
        if self.trees.len() != d - 1 {
            return Err(Error::Format(format!("expected {} trees", d - 1)));
        }
        for (t, level) in self.trees.iter().enumerate() {
            let n_nodes = d - t;
            if level.len() != n_nodes - 1 {
                return Err(Error::Format(format!(
                    "tree {t} has {} edges, expected {}",
                    level.len(),
                    n_nodes - 1
                )));
            }
            let mut parent: Vec<usize> = (0..n_nodes).collect();
            for e in level {
                if e.conditioning.len() != t {
                    return Err(Error::Format(format!("edge in tree {t} has conditioning set of size {}", e.conditioning.len())));
                }
                let (a, b) = match (t, e.children) {
                    (0, None) => (e.first, e.second),
                    (0, Some(_)) => return Err(Error::Format("first-tree edge with children".into())),
                    (_, Some((a, b))) => {
                        let prev = &self.trees[t - 1];
                        let expect = join_edges(prev, a, b)?;
                        if expect.all_vars() != e.all_vars() || expect.conditioning != e.conditioning {
                            return Err(Error::Format(format!("edge labels in tree {t} are inconsistent")));
                        }
                        (a, b)
                    }
                    (_, None) => return Err(Error::Format(format!("edge in tree {t} lacks children"))),
                };
                if a >= n_nodes || b >= n_nodes {
                    return Err(Error::Format(format!("edge in tree {t} refers to a missing node")));
                }
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra == rb {
                    return Err(Error::Format(format!("tree {t} contains a cycle")));
                }
                parent[ra] = rb;
            }
        }
        Ok(())
    }

    /// Sampling order and, for each sampled variable after the first, the
    /// edges that carry it as a conditioned variable from the deepest tree
    /// down to the first.
    fn sampling_plan(&self) -> Result<Vec<(usize, Vec<(usize, usize)>)>> {
        let mut active: Vec<Vec<bool>> = self.trees.iter().map(|l| vec![true; l.len()]).collect();
        let mut removed = Vec::with_capacity(self.d);
        for m in (2..=self.d).rev() {
            let top = m - 2;
            let top_idx: Vec<usize> = (0..self.trees[top].len()).filter(|&i| active[top][i]).collect();
            if top_idx.len() != 1 {
                return Err(Error::Format("vine structure cannot be decomposed for sampling".into()));
            }
            let var = self.trees[top][top_idx[0]].first;
            let mut column = Vec::with_capacity(m - 1);
            for t in (0..=top).rev() {
                let hits: Vec<usize> = (0..self.trees[t].len())
                    .filter(|&i| active[t][i] && self.trees[t][i].has_conditioned(var))
                    .collect();
                if hits.len() != 1 {
                    return Err(Error::Format("vine structure cannot be decomposed for sampling".into()));
                }
                active[t][hits[0]] = false;
                column.push((t, hits[0]));
            }
            removed.push((var, column));
        }
        let done: BTreeSet<usize> = removed.iter().map(|(v, _)| *v).collect();
        let last = (0..self.d).find(|v| !done.contains(v)).expect("one variable remains");
        removed.push((last, Vec::new()));
        removed.reverse();
        Ok(removed)
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Edge joining edges `a` and `b` of `prev`, which must share a node.
fn join_edges(prev: &[VineEdge], a: usize, b: usize) -> Result<VineEdge> {
    let (ea, eb) = (&prev[a], &prev[b]);
    let shares = match (ea.children, eb.children) {
        (None, None) => ea.has_conditioned(eb.first) || ea.has_conditioned(eb.second),
        (Some((a1, a2)), Some((b1, b2))) => a1 == b1 || a1 == b2 || a2 == b1 || a2 == b2,
        _ => false,
    };
    if !shares {
        return Err(Error::Format(format!("edges {a} and {b} violate the proximity condition")));
    }
    let (ua, ub) = (ea.all_vars(), eb.all_vars());
    let only_a: Vec<usize> = ua.difference(&ub).copied().collect();
    let only_b: Vec<usize> = ub.difference(&ua).copied().collect();
    if only_a.len() != 1 || only_b.len() != 1 {
        return Err(Error::Format(format!("edges {a} and {b} do not form a vine edge")));
    }
    Ok(VineEdge {
        first: only_a[0],
        second: only_b[0],
        conditioning: ua.intersection(&ub).copied().collect(),
        children: Some((a, b)),
    })
}

/// Output of an edge for one of its conditioned variables.
#[inline]
fn edge_output(e: &VineEdge, out: [f64; 2], var: usize) -> f64 {
    if e.first == var {
        out[0]
    } else {
        out[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RVineModel {
    structure: RVineStructure,
    copulas: Vec<Vec<BivCopula>>,
}

impl RVineModel {
    pub fn new(structure: RVineStructure, copulas: Vec<Vec<BivCopula>>) -> Result<Self> {
        structure.check()?;
        if copulas.len() != structure.trees.len()
            || copulas.iter().zip(&structure.trees).any(|(c, t)| c.len() != t.len())
        {
            return Err(Error::Format("one copula per vine edge is required".into()));
        }
        Ok(Self { structure, copulas })
    }

    pub fn independence(structure: RVineStructure) -> Self {
        let copulas = structure.trees.iter().map(|t| vec![BivCopula::independence(); t.len()]).collect();
        Self { structure, copulas }
    }

    pub fn structure(&self) -> &RVineStructure {
        &self.structure
    }

    pub fn copulas(&self) -> &[Vec<BivCopula>] {
        &self.copulas
    }

    pub fn d(&self) -> usize {
        self.structure.d
    }

    /// Arguments of edge `(t, i)` given the outputs of tree `t − 1` (or the
    /// point itself for `t = 0`).
    #[inline]
    fn edge_args(&self, t: usize, i: usize, u: &[f64], prev: &[[f64; 2]]) -> (f64, f64) {
        let e = &self.structure.trees[t][i];
        match e.children {
            None => (u[e.first], u[e.second]),
            Some((a, b)) => {
                let prev_edges = &self.structure.trees[t - 1];
                (edge_output(&prev_edges[a], prev[a], e.first), edge_output(&prev_edges[b], prev[b], e.second))
            }
        }
    }

    fn logpdf_raw(&self, u: &[f64], buf: &mut [Vec<[f64; 2]>]) -> f64 {
        let mut total = 0.0;
        for t in 0..self.structure.trees.len() {
            let (done, rest) = buf.split_at_mut(t);
            let prev: &[[f64; 2]] = if t == 0 { &[] } else { &done[t - 1] };
            for i in 0..self.structure.trees[t].len() {
                let (a, b) = self.edge_args(t, i, u, prev);
                let c = &self.copulas[t][i];
                total += c.log_pdf_raw(a, b);
                rest[0][i] = [c.h1_raw(a, b), c.h2_raw(a, b)];
            }
        }
        total
    }

    fn buffers(&self) -> Vec<Vec<[f64; 2]>> {
        self.structure.trees.iter().map(|t| vec![[0.0; 2]; t.len()]).collect()
    }

    pub fn n_params(&self) -> usize {
        self.copulas.iter().flatten().map(|c| c.family.n_params()).sum()
    }
}

/// Log copula density at an interior point.
pub fn rvine_logpdf(m: &RVineModel, u: &[f64]) -> Result<f64> {
    check_dim(m.d(), u.len())?;
    if let Some(x) = u.iter().find(|&&x| !(x > 0.0 && x < 1.0)) {
        return Err(Error::Domain(format!("copula argument {x} is not in (0, 1)")));
    }
    Ok(m.logpdf_raw(u, &mut m.buffers()))
}

/// Sum of log copula densities over the rows of `u`.
pub fn rvine_loglik(m: &RVineModel, u: &CopulaMatrix) -> Result<f64> {
    check_dim(m.d(), u.n_site())?;
    let mut buf = m.buffers();
    Ok(u.rows().map(|r| m.logpdf_raw(r, &mut buf)).sum())
}

/// Inverse-Rosenblatt simulation.
pub fn rvine_sample(m: &RVineModel, n: usize, seed: u64) -> Result<CopulaMatrix> {
    if n == 0 {
        return Err(Error::Argument("sample size must be at least 1".into()));
    }
    let d = m.d();
    let plan = m.structure.sampling_plan()?;
    let trees = &m.structure.trees;
    // edges that become computable once each planned variable is known
    let mut ready: Vec<Vec<(usize, usize)>> = Vec::with_capacity(d);
    let mut known = BTreeSet::new();
    let mut assigned: Vec<Vec<bool>> = trees.iter().map(|l| vec![false; l.len()]).collect();
    for (var, _) in &plan {
        known.insert(*var);
        let mut now = Vec::new();
        for (t, level) in trees.iter().enumerate() {
            for (i, e) in level.iter().enumerate() {
                if !assigned[t][i] && e.all_vars().is_subset(&known) {
                    assigned[t][i] = true;
                    now.push((t, i));
                }
            }
        }
        ready.push(now);
    }
    let mut rng = rng_from(seed);
    let mut out = vec![0.0; d];
    let mut buf = m.buffers();
    let mut values = Vec::with_capacity(n * d);
    for _ in 0..n {
        for (k, (var, column)) in plan.iter().enumerate() {
            let mut w: f64 = rng.random::<f64>();
            while w <= 0.0 {
                w = rng.random::<f64>();
            }
            for &(t, i) in column {
                let e = &trees[t][i];
                let c = &m.copulas[t][i];
                let prev: &[[f64; 2]] = if t == 0 { &[] } else { &buf[t - 1] };
                let (a, b) = m.edge_args(t, i, &out, prev);
                w = if e.first == *var { c.h1_inv_raw(w, b) } else { c.h2_inv_raw(w, a) };
            }
            out[*var] = w;
            for &(t, i) in &ready[k] {
                let (a, b) = {
                    let prev: &[[f64; 2]] = if t == 0 { &[] } else { &buf[t - 1] };
                    m.edge_args(t, i, &out, prev)
                };
                let c = &m.copulas[t][i];
                buf[t][i] = [c.h1_raw(a, b), c.h2_raw(a, b)];
            }
        }
        values.extend_from_slice(&out);
    }
    CopulaMatrix::new(values, n, default_site_ids(d))
}

/// Fitted vine plus bookkeeping from the per-edge fits.
#[derive(Debug, Clone, PartialEq)]
pub struct RVineFit {
    pub model: RVineModel,
    pub log_likelihood: f64,
    /// Edges whose likelihood search fell back to the tau-inversion start.
    pub fallbacks: usize,
}

/// Kruskal maximum spanning tree over `n_nodes` with candidate edges
/// `(weight, a, b)`; ties broken by the lexicographic label `(a, b)`.
fn max_spanning_tree(n_nodes: usize, mut cands: Vec<(f64, usize, usize)>) -> Vec<(usize, usize)> {
    cands.sort_by(|x, y| y.0.total_cmp(&x.0).then((x.1, x.2).cmp(&(y.1, y.2))));
    let mut parent: Vec<usize> = (0..n_nodes).collect();
    let mut out = Vec::with_capacity(n_nodes.saturating_sub(1));
    for (_, a, b) in cands {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
            out.push((a, b));
        }
    }
    out
}

/// Dissmann's sequential selection: each tree is a maximum spanning tree on
/// |Kendall's tau| among proximity-admissible pairs, and each edge gets the
/// AIC-best family.
pub fn fit_rvine(u: &CopulaMatrix) -> Result<RVineFit> {
    fit_rvine_impl(u, None)
}

/// Re-estimates every edge parameter of `model` on `u`, keeping its
/// structure, families and rotations.
pub fn refit_parameters(model: &RVineModel, u: &CopulaMatrix) -> Result<RVineFit> {
    fit_rvine_impl(u, Some(model))
}

/// Structure selection alone.
pub fn select_structure(u: &CopulaMatrix) -> Result<RVineStructure> {
    Ok(fit_rvine(u)?.model.structure)
}

fn fit_rvine_impl(u: &CopulaMatrix, fixed: Option<&RVineModel>) -> Result<RVineFit> {
    let d = u.n_site();
    if d < 2 {
        return Err(Error::Argument("a vine needs at least two variables".into()));
    }
    if let Some(m) = fixed {
        check_dim(m.d(), d)?;
    }
    let columns: Vec<Vec<f64>> = (0..d).map(|c| u.column(c)).collect();
    let mut pairs: Vec<Vec<(usize, usize)>> = Vec::with_capacity(d - 1);
    let mut trees: Vec<Vec<VineEdge>> = Vec::with_capacity(d - 1);
    let mut copulas: Vec<Vec<BivCopula>> = Vec::with_capacity(d - 1);
    let mut outputs: Vec<Vec<[Vec<f64>; 2]>> = Vec::with_capacity(d - 1);
    let mut total_ll = 0.0;
    let mut fallbacks = 0;
    for t in 0..d - 1 {
        // candidate edges and their argument columns
        let level_pairs: Vec<(usize, usize)> = match fixed {
            Some(m) => m.structure.trees[t]
                .iter()
                .map(|e| e.children.unwrap_or((e.first, e.second)))
                .collect(),
            None => {
                let mut cands = Vec::new();
                let n_nodes = d - t;
                for a in 0..n_nodes {
                    for b in a + 1..n_nodes {
                        let edge = if t == 0 {
                            VineEdge {
                                first: a,
                                second: b,
                                conditioning: Vec::new(),
                                children: None,
                            }
                        } else {
                            match join_edges(&trees[t - 1], a, b) {
                                Ok(e) => e,
                                Err(_) => continue,
                            }
                        };
                        let (x, y) = edge_columns(&edge, t, &columns, &trees, &outputs);
                        cands.push((kendall_tau(x, y)?.abs(), a, b));
                    }
                }
                max_spanning_tree(n_nodes, cands)
            }
        };
        let mut level = Vec::with_capacity(level_pairs.len());
        let mut level_cops = Vec::with_capacity(level_pairs.len());
        let mut level_out = Vec::with_capacity(level_pairs.len());
        for (k, &(a, b)) in level_pairs.iter().enumerate() {
            let edge = if t == 0 {
                VineEdge {
                    first: a,
                    second: b,
                    conditioning: Vec::new(),
                    children: None,
                }
            } else {
                join_edges(&trees[t - 1], a, b)?
            };
            let (x, y) = edge_columns(&edge, t, &columns, &trees, &outputs);
            let fit = match fixed {
                None => fit_bicop(x, y)?,
                Some(m) => {
                    let c = m.copulas[t][k];
                    let tau = kendall_tau(x, y)?;
                    bicop::fit_bicop_family(x, y, c.family, c.rotation, tau)?
                }
            };
            total_ll += fit.log_likelihood;
            fallbacks += usize::from(fit.fallback);
            let c = fit.copula;
            let h1: Vec<f64> = x.iter().zip(y).map(|(&p, &q)| c.h1_raw(p, q)).collect();
            let h2: Vec<f64> = x.iter().zip(y).map(|(&p, &q)| c.h2_raw(p, q)).collect();
            level.push(edge);
            level_cops.push(c);
            level_out.push([h1, h2]);
        }
        pairs.push(level_pairs);
        trees.push(level);
        copulas.push(level_cops);
        outputs.push(level_out);
    }
    let structure = RVineStructure { d, trees };
    structure.check()?;
    Ok(RVineFit {
        model: RVineModel::new(structure, copulas)?,
        log_likelihood: total_ll,
        fallbacks,
    })
}

fn edge_columns<'a>(
    edge: &VineEdge,
    t: usize,
    columns: &'a [Vec<f64>],
    trees: &[Vec<VineEdge>],
    outputs: &'a [Vec<[Vec<f64>; 2]>],
) -> (&'a [f64], &'a [f64]) {
    match edge.children {
        None => (&columns[edge.first], &columns[edge.second]),
        Some((a, b)) => {
            let prev = &trees[t - 1];
            let pick = |idx: usize, var: usize| -> &'a [f64] {
                let o = &outputs[t - 1][idx];
                if prev[idx].first == var {
                    &o[0]
                } else {
                    &o[1]
                }
            };
            (pick(a, edge.first), pick(b, edge.second))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depstats::{tail_dep_empirical, TailCorner};
    use crate::special::{ks_statistic, norm_cdf, norm_pdf, norm_quantile_unchecked};

    fn cvine4() -> RVineStructure {
        RVineStructure::from_pairs(4, &[vec![(0, 1), (0, 2), (0, 3)], vec![(0, 1), (0, 2)], vec![(0, 1)]]).unwrap()
    }

    fn gauss(r: f64) -> BivCopula {
        BivCopula::new(Family::Gaussian, Rotation::R0, r).unwrap()
    }

    #[test]
    fn structure_labels() {
        let s = cvine4();
        let t1 = &s.trees()[1];
        assert_eq!((t1[0].first, t1[0].second, t1[0].conditioning.clone()), (1, 2, vec![0]));
        assert_eq!((t1[1].first, t1[1].second), (1, 3));
        let top = &s.trees()[2][0];
        assert_eq!((top.first, top.second, top.conditioning.clone()), (2, 3, vec![0, 1]));
        assert_eq!(s.n_edges(), 6);
    }

    #[test]
    fn invalid_structures_are_rejected() {
        // cycle in the first tree
        assert!(RVineStructure::from_pairs(3, &[vec![(0, 1), (1, 0)], vec![(0, 1)]]).is_err());
        // proximity: edges (0,1) and (2,3) share no variable
        assert!(RVineStructure::from_pairs(4, &[vec![(0, 1), (2, 3), (1, 2)], vec![(0, 1), (1, 2)], vec![(0, 1)]]).is_err());
        assert!(RVineStructure::from_pairs(1, &[]).is_err());
    }

    #[test]
    fn independence_density_is_zero() {
        let m = RVineModel::independence(cvine4());
        assert_eq!(rvine_logpdf(&m, &[0.1, 0.5, 0.7, 0.99]).unwrap(), 0.0);
        assert!(rvine_logpdf(&m, &[0.0, 0.5, 0.7, 0.9]).is_err());
        assert!(rvine_logpdf(&m, &[0.5, 0.7, 0.9]).is_err());
    }

    #[test]
    fn three_dim_gaussian_vine_matches_gaussian_copula() {
        // D-vine 0-1-2 with ρ01 = ρ12 = ρ and partial correlation ρ02;1 = ρ
        let rho = 0.6;
        let s = RVineStructure::from_pairs(3, &[vec![(0, 1), (1, 2)], vec![(0, 1)]]).unwrap();
        let m = RVineModel::new(s, vec![vec![gauss(rho), gauss(rho)], vec![gauss(rho)]]).unwrap();
        let r02 = rho * rho + rho * (1.0 - rho * rho);
        let corr = nalgebra::Matrix3::new(1.0, rho, r02, rho, 1.0, rho, r02, rho, 1.0);
        let inv = corr.try_inverse().unwrap();
        let det = corr.determinant();
        let mut rng = rng_from(1);
        for _ in 0..100 {
            let u: Vec<f64> = (0..3).map(|_| rng.random_range(0.01..0.99)).collect();
            let x = nalgebra::Vector3::from_iterator(u.iter().map(|&p| norm_quantile_unchecked(p)));
            let q = (x.transpose() * (inv - nalgebra::Matrix3::identity()) * x)[(0, 0)];
            let oracle = -0.5 * det.ln() - 0.5 * q;
            assert!((rvine_logpdf(&m, &u).unwrap() - oracle).abs() < 1e-6);
        }
    }

    #[test]
    fn density_integrates_to_one() {
        let s = RVineStructure::from_pairs(3, &[vec![(0, 1), (0, 2)], vec![(0, 1)]]).unwrap();
        let m = RVineModel::new(
            s,
            vec![
                vec![
                    BivCopula::new(Family::Clayton, Rotation::R0, 1.2).unwrap(),
                    BivCopula::new(Family::Gumbel, Rotation::R90, 1.5).unwrap(),
                ],
                vec![BivCopula::new(Family::Frank, Rotation::R0, 3.0).unwrap()],
            ],
        )
        .unwrap();
        let n = 80;
        let (a, b) = (-7.0, 7.0);
        let h = (b - a) / n as f64;
        let w = |i: usize| if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        let mut total = 0.0;
        for i in 0..=n {
            for j in 0..=n {
                for k in 0..=n {
                    let x = [a + i as f64 * h, a + j as f64 * h, a + k as f64 * h];
                    let u: Vec<f64> = x.iter().map(|&v| norm_cdf(v)).collect();
                    if u.iter().any(|&p| p <= 0.0 || p >= 1.0) {
                        continue;
                    }
                    let dens = rvine_logpdf(&m, &u).unwrap().exp() * x.iter().map(|&v| norm_pdf(v)).product::<f64>();
                    total += w(i) * w(j) * w(k) * dens;
                }
            }
        }
        total *= (h / 3.0).powi(3);
        assert!((total - 1.0).abs() < 1e-3, "{total}");
    }

    #[test]
    fn independence_samples_are_uniform() {
        let m = RVineModel::independence(cvine4());
        let n = 20_000;
        let s = rvine_sample(&m, n, 3).unwrap();
        for c in 0..4 {
            assert!(ks_statistic(&s.column(c), |x| x.clamp(0.0, 1.0)) < 2.0 / (n as f64).sqrt());
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let m = RVineModel::new(cvine4(), vec![vec![gauss(0.5); 3], vec![gauss(0.2); 2], vec![gauss(0.1)]]).unwrap();
        assert_eq!(rvine_sample(&m, 10, 1).unwrap(), rvine_sample(&m, 10, 1).unwrap());
    }

    #[test]
    fn sampled_vine_recovers_first_tree_correlations() {
        let m = RVineModel::new(cvine4(), vec![vec![gauss(0.7), gauss(-0.4), gauss(0.5)], vec![gauss(0.3), gauss(0.0)], vec![gauss(0.2)]]).unwrap();
        let s = rvine_sample(&m, 20_000, 5).unwrap();
        for (j, want) in [(1, 0.7), (2, -0.4), (3, 0.5)] {
            let x: Vec<f64> = s.column(0).iter().map(|&p| norm_quantile_unchecked(p)).collect();
            let y: Vec<f64> = s.column(j).iter().map(|&p| norm_quantile_unchecked(p)).collect();
            let n = x.len() as f64;
            let r = x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / n;
            assert!((r - want).abs() < 0.03, "{j}: {r}");
        }
    }

    #[test]
    fn rotations_move_the_tail() {
        let expected = [
            (Rotation::R0, TailCorner::UU),
            (Rotation::R90, TailCorner::LU),
            (Rotation::R180, TailCorner::LL),
            (Rotation::R270, TailCorner::UL),
        ];
        let s = RVineStructure::from_pairs(2, &[vec![(0, 1)]]).unwrap();
        for (rot, corner) in expected {
            let c = BivCopula::new(Family::Gumbel, rot, 2.0).unwrap();
            let m = RVineModel::new(s.clone(), vec![vec![c]]).unwrap();
            let u = rvine_sample(&m, 200_000, 7).unwrap();
            for other in TailCorner::ALL {
                let l = tail_dep_empirical(&u, 0, 1, 0.99, other).unwrap();
                if other == corner {
                    assert!(l > 0.4, "{rot:?} {other}: {l}");
                } else {
                    assert!(l < 0.2, "{rot:?} {other}: {l}");
                }
            }
        }
    }

    #[test]
    fn two_dim_structure_is_forced() {
        let s = RVineStructure::from_pairs(2, &[vec![(0, 1)]]).unwrap();
        let m = RVineModel::new(s, vec![vec![gauss(0.5)]]).unwrap();
        let u = rvine_sample(&m, 500, 2).unwrap();
        let fit = fit_rvine(&u).unwrap();
        assert_eq!(fit.model.structure().n_edges(), 1);
    }

    #[test]
    fn spanning_tree_tie_break() {
        let t = max_spanning_tree(3, vec![(0.5, 1, 2), (0.5, 0, 1), (0.5, 0, 2)]);
        assert_eq!(t, vec![(0, 1), (0, 2)]);
    }

    #[test]
    fn serde_roundtrip() {
        let m = RVineModel::new(cvine4(), vec![vec![gauss(0.5); 3], vec![gauss(0.2); 2], vec![gauss(0.1)]]).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<RVineModel>(&text).unwrap(), m);
    }
}
