//! Identity discovery over the embedding space.
//!
//! A diagonal-covariance Gaussian mixture is fitted by EM; its components
//! are read as candidate identities. A labelled reference set then scores
//! every (cluster, identity) pair by overlap `C / L` (the share of an
//! identity's images that fall in the cluster), which ranks identities per
//! cluster for Top-N evaluation and annotation suggestions.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::IdentityId;

pub const DEFAULT_EM_ITERATIONS: usize = 200;
pub const DEFAULT_TOLERANCE: f64 = 1e-7;
pub const VARIANCE_FLOOR: f64 = 1e-6;
/// Components whose soft count drops below this are re-seeded.
const EMPTY_COMPONENT: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmConfig {
    pub k: usize,
    pub max_iter: usize,
    /// Stop once the mean per-sample log-likelihood improves by less than this.
    pub tol: f64,
    pub var_floor: f64,
    pub rng_seed: u64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            k: 1,
            max_iter: DEFAULT_EM_ITERATIONS,
            tol: DEFAULT_TOLERANCE,
            var_floor: VARIANCE_FLOOR,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reseed {
    pub iteration: usize,
    pub component: usize,
    pub point: usize,
}

/// Fitted mixture with diagonal covariances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub k: usize,
    pub dim: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    /// Mean per-sample log-likelihood evaluated before each M-step, plus a
    /// final evaluation of the returned parameters.
    pub log_likelihood_trace: Vec<f64>,
    pub converged: bool,
    pub reseeds: Vec<Reseed>,
}

fn check_matrix(x: &[Vec<f64>]) -> Result<usize> {
    let dim = x.first().map(Vec::len).unwrap_or(0);
    if dim == 0 {
        return Err(Error::InsufficientData("no data points".into()));
    }
    if x.iter().any(|r| r.len() != dim) {
        return Err(Error::invalid("data rows have differing dimensions"));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("data contains non-finite values"));
    }
    Ok(dim)
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Greedy k-means++ seeding: each new centre is the best of a few
/// D²-weighted candidates by resulting potential.
fn kmeans_pp(x: &[Vec<f64>], k: usize, rng: &mut seed::Rng) -> Vec<Vec<f64>> {
    let n = x.len();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centres = vec![x[rng.random_range(0..n)].clone()];
    let mut closest: Vec<f64> = x.iter().map(|p| sq_dist(p, &centres[0])).collect();
    while centres.len() < k {
        let total: f64 = closest.iter().sum();
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let idx = if total > 0.0 {
                let mut target = rng.random::<f64>() * total;
                let mut pick = n - 1;
                for (i, d) in closest.iter().enumerate() {
                    target -= d;
                    if target <= 0.0 {
                        pick = i;
                        break;
                    }
                }
                pick
            } else {
                rng.random_range(0..n)
            };
            let cand: Vec<f64> = x
                .iter()
                .zip(&closest)
                .map(|(p, &d)| d.min(sq_dist(p, &x[idx])))
                .collect();
            let potential: f64 = cand.iter().sum();
            if best.as_ref().is_none_or(|(b, _, _)| potential < *b) {
                best = Some((potential, idx, cand));
            }
        }
        let (_, idx, cand) = best.expect("at least one trial");
        centres.push(x[idx].clone());
        closest = cand;
    }
    centres
}

fn column_variance(x: &[Vec<f64>], floor: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let dim = x[0].len();
    let mut mean = vec![0.0; dim];
    for row in x {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for row in x {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s = (*s / n).max(floor));
    var
}

impl GmmModel {
    /// Per-component `log(w_j) + log N(x | mu_j, diag var_j)`.
    fn weighted_log_densities(&self, x: &[f64], out: &mut [f64]) {
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        for j in 0..self.k {
            let mut acc = 0.0;
            for ((xi, mi), vi) in x.iter().zip(&self.means[j]).zip(&self.variances[j]) {
                let d = xi - mi;
                acc += ln_2pi + vi.ln() + d * d / vi;
            }
            out[j] = self.weights[j].ln() - 0.5 * acc;
        }
    }

    /// Responsibilities of one point and its log-likelihood.
    pub fn responsibilities(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let mut lp = vec![0.0; self.k];
        self.weighted_log_densities(x, &mut lp);
        let ll = log_sum_exp(&lp);
        let resp = lp.iter().map(|v| (v - ll).exp()).collect();
        (resp, ll)
    }

    pub fn mean_log_likelihood(&self, x: &[Vec<f64>]) -> f64 {
        x.iter().map(|p| self.responsibilities(p).1).sum::<f64>() / x.len() as f64
    }
}

/// Fits a `k`-component diagonal GMM by EM with k-means++ seeded means.
pub fn fit_gmm(x: &[Vec<f64>], k: usize, iters: usize, rng_seed: u64) -> Result<GmmModel> {
    fit_gmm_with(
        x,
        &GmmConfig {
            k,
            max_iter: iters,
            rng_seed,
            ..Default::default()
        },
    )
}

pub fn fit_gmm_with(x: &[Vec<f64>], cfg: &GmmConfig) -> Result<GmmModel> {
    let dim = check_matrix(x)?;
    let n = x.len();
    let k = cfg.k;
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if n < k {
        return Err(Error::InsufficientData(format!("{n} points cannot fill {k} components")));
    }
    let mut rng = seed::rng(cfg.rng_seed, &[0x6A4]);
    let global_var = column_variance(x, cfg.var_floor);
    let mut model = GmmModel {
        k,
        dim,
        weights: vec![1.0 / k as f64; k],
        means: kmeans_pp(x, k, &mut rng),
        variances: vec![global_var.clone(); k],
        log_likelihood_trace: Vec::new(),
        converged: false,
        reseeds: Vec::new(),
    };

    let mut resp = vec![vec![0.0; k]; n];
    let mut point_ll = vec![0.0; n];
    let e_step = |model: &GmmModel, resp: &mut [Vec<f64>], point_ll: &mut [f64]| -> f64 {
        let mut lp = vec![0.0; k];
        for (i, p) in x.iter().enumerate() {
            model.weighted_log_densities(p, &mut lp);
            let ll = log_sum_exp(&lp);
            for (r, v) in resp[i].iter_mut().zip(&lp) {
                *r = (v - ll).exp();
            }
            point_ll[i] = ll;
        }
        point_ll.iter().sum::<f64>() / n as f64
    };

    for iteration in 0..cfg.max_iter {
        let ll = e_step(&model, &mut resp, &mut point_ll);
        if let Some(&prev) = model.log_likelihood_trace.last() {
            model.log_likelihood_trace.push(ll);
            if ll - prev < cfg.tol {
                model.converged = true;
                return Ok(model);
            }
        } else {
            model.log_likelihood_trace.push(ll);
        }

        // M-step, accumulated in point order.
        for j in 0..k {
            let nk: f64 = resp.iter().map(|r| r[j]).sum();
            if nk < EMPTY_COMPONENT {
                let point = farthest_point(x, &model.means);
                model.means[j] = x[point].clone();
                model.variances[j] = global_var.clone();
                model.weights[j] = 1.0 / n as f64;
                model.reseeds.push(Reseed {
                    iteration,
                    component: j,
                    point,
                });
                continue;
            }
            let mut mean = vec![0.0; dim];
            for (p, r) in x.iter().zip(&resp) {
                let w = r[j];
                for (m, v) in mean.iter_mut().zip(p) {
                    *m += w * v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= nk);
            let mut var = vec![0.0; dim];
            for (p, r) in x.iter().zip(&resp) {
                let w = r[j];
                for ((s, v), m) in var.iter_mut().zip(p).zip(&mean) {
                    *s += w * (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|s| *s = (*s / nk).max(cfg.var_floor));
            model.means[j] = mean;
            model.variances[j] = var;
            model.weights[j] = nk / n as f64;
        }
        let total: f64 = model.weights.iter().sum();
        model.weights.iter_mut().for_each(|w| *w /= total);
    }
    let ll = e_step(&model, &mut resp, &mut point_ll);
    model.log_likelihood_trace.push(ll);
    Ok(model)
}

fn farthest_point(x: &[Vec<f64>], means: &[Vec<f64>]) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, p) in x.iter().enumerate() {
        let d = means
            .iter()
            .map(|m| sq_dist(p, m))
            .fold(f64::INFINITY, f64::min);
        if d > best.1 {
            best = (i, d);
        }
    }
    best.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub clusters: Vec<usize>,
    pub responsibilities: Vec<Vec<f64>>,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn assign_one(gmm: &GmmModel, x: &[f64]) -> (usize, Vec<f64>) {
    let (resp, _) = gmm.responsibilities(x);
    (argmax(&resp), resp)
}

/// Hard (argmax) and soft cluster membership for every row of `x`.
pub fn assign(gmm: &GmmModel, x: &[Vec<f64>]) -> Result<ClusterAssignment> {
    if x.iter().any(|r| r.len() != gmm.dim) {
        return Err(Error::invalid(format!("expected {}-dimensional points", gmm.dim)));
    }
    let mut clusters = Vec::with_capacity(x.len());
    let mut responsibilities = Vec::with_capacity(x.len());
    for p in x {
        let (c, r) = assign_one(gmm, p);
        clusters.push(c);
        responsibilities.push(r);
    }
    Ok(ClusterAssignment {
        clusters,
        responsibilities,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapScore {
    pub cluster: usize,
    pub identity: IdentityId,
    /// Images of the identity inside the cluster.
    pub count: usize,
    /// All images of the identity.
    pub total: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapTable {
    /// Non-zero overlaps, ordered by (cluster, identity).
    pub scores: Vec<OverlapScore>,
    pub totals: BTreeMap<IdentityId, usize>,
}

impl OverlapTable {
    pub fn value(&self, cluster: usize, identity: IdentityId) -> f64 {
        self.scores
            .iter()
            .find(|s| s.cluster == cluster && s.identity == identity)
            .map_or(0.0, |s| s.value)
    }
}

/// Overlap `C / L` of every identity with every cluster it reaches.
pub fn overlap_scores(clusters: &[usize], labels: &[IdentityId]) -> Result<OverlapTable> {
    if clusters.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} cluster assignments for {} labels",
            clusters.len(),
            labels.len()
        )));
    }
    let mut counts: BTreeMap<(usize, IdentityId), usize> = BTreeMap::new();
    let mut totals: BTreeMap<IdentityId, usize> = BTreeMap::new();
    for (&c, &l) in clusters.iter().zip(labels) {
        *counts.entry((c, l)).or_default() += 1;
        *totals.entry(l).or_default() += 1;
    }
    let scores = counts
        .into_iter()
        .map(|((cluster, identity), count)| {
            let total = totals[&identity];
            OverlapScore {
                cluster,
                identity,
                count,
                total,
                value: count as f64 / total as f64,
            }
        })
        .collect();
    Ok(OverlapTable { scores, totals })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedIdentity {
    pub identity: IdentityId,
    pub overlap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRanking {
    pub cluster: usize,
    /// Positive overlaps by descending value (ties by label), then the
    /// zero-overlap identities in seeded random order.
    pub identities: Vec<RankedIdentity>,
}

impl ClusterRanking {
    /// The identity the cluster is assigned to.
    pub fn assigned(&self) -> Option<IdentityId> {
        self.identities.first().map(|r| r.identity)
    }

    /// 1-based rank of `identity`, if listed.
    pub fn rank_of(&self, identity: IdentityId) -> Option<usize> {
        self.identities
            .iter()
            .position(|r| r.identity == identity)
            .map(|p| p + 1)
    }
}

/// Ranks `identities` for each of `n_clusters` clusters.
pub fn rank_clusters(
    table: &OverlapTable,
    n_clusters: usize,
    identities: &[IdentityId],
    rng_seed: u64,
) -> Vec<ClusterRanking> {
    let mut all: Vec<IdentityId> = identities.to_vec();
    all.sort_unstable();
    all.dedup();
    (0..n_clusters)
        .map(|cluster| {
            let mut positive: Vec<RankedIdentity> = table
                .scores
                .iter()
                .filter(|s| s.cluster == cluster && s.value > 0.0 && all.binary_search(&s.identity).is_ok())
                .map(|s| RankedIdentity {
                    identity: s.identity,
                    overlap: s.value,
                })
                .collect();
            positive.sort_by(|a, b| b.overlap.total_cmp(&a.overlap).then(a.identity.cmp(&b.identity)));
            let mut tail: Vec<RankedIdentity> = all
                .iter()
                .filter(|id| !positive.iter().any(|p| p.identity == **id))
                .map(|&identity| RankedIdentity {
                    identity,
                    overlap: 0.0,
                })
                .collect();
            let mut rng = seed::rng(rng_seed, &[0x7A11, cluster as u64]);
            tail.shuffle(&mut rng);
            positive.extend(tail);
            ClusterRanking {
                cluster,
                identities: positive,
            }
        })
        .collect()
}

/// Share of points whose true identity is among the first `n` entries of
/// their cluster's ranking. `n` is clamped to the ranking length.
pub fn top_n_accuracy(
    rankings: &[ClusterRanking],
    clusters: &[usize],
    gt_labels: &[IdentityId],
    n: usize,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("N must be at least 1"));
    }
    if clusters.len() != gt_labels.len() {
        return Err(Error::invalid("cluster and label counts differ"));
    }
    if clusters.is_empty() {
        return Err(Error::InsufficientData("no points to evaluate".into()));
    }
    let mut hits = 0usize;
    for (&c, &gt) in clusters.iter().zip(gt_labels) {
        let ranking = rankings
            .iter()
            .find(|r| r.cluster == c)
            .ok_or_else(|| Error::invalid(format!("no ranking for cluster {c}")))?;
        let limit = n.min(ranking.identities.len());
        if ranking.identities[..limit].iter().any(|r| r.identity == gt) {
            hits += 1;
        }
    }
    Ok(hits as f64 / clusters.len() as f64)
}

fn choose2(n: u64) -> f64 {
    (n as f64) * (n.saturating_sub(1) as f64) / 2.0
}

/// Hubert–Arabie adjusted Rand index between two labelings.
pub fn adjusted_rand_index<A, B>(part_a: &[A], part_b: &[B]) -> Result<f64>
where
    A: Eq + Hash,
    B: Eq + Hash,
{
    if part_a.len() != part_b.len() {
        return Err(Error::invalid("partitions must label the same points"));
    }
    let n = part_a.len();
    if n < 2 {
        return Err(Error::InsufficientData("ARI needs at least two points".into()));
    }
    let mut ids_a: HashMap<&A, usize> = HashMap::new();
    let mut ids_b: HashMap<&B, usize> = HashMap::new();
    let mut cells: HashMap<(usize, usize), u64> = HashMap::new();
    for (a, b) in part_a.iter().zip(part_b) {
        let na = ids_a.len();
        let ia = *ids_a.entry(a).or_insert(na);
        let nb = ids_b.len();
        let ib = *ids_b.entry(b).or_insert(nb);
        *cells.entry((ia, ib)).or_default() += 1;
    }
    let mut rows = vec![0u64; ids_a.len()];
    let mut cols = vec![0u64; ids_b.len()];
    for (&(i, j), &c) in &cells {
        rows[i] += c;
        cols[j] += c;
    }
    let index: f64 = cells.values().map(|&c| choose2(c)).sum();
    let sum_a: f64 = rows.iter().map(|&c| choose2(c)).sum();
    let sum_b: f64 = cols.iter().map(|&c| choose2(c)).sum();
    let expected = sum_a * sum_b / choose2(n as u64);
    let max_index = 0.5 * (sum_a + sum_b);
    let denom = max_index - expected;
    if denom == 0.0 {
        // Only reachable when both partitions are all-singletons or both a
        // single block, i.e. identical.
        return Ok(1.0);
    }
    Ok((index - expected) / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn cloud(center: &[f64], spread: f64, n: usize, rng: &mut seed::Rng) -> Vec<Vec<f64>> {
        let normal = Normal::new(0.0, spread).unwrap();
        (0..n)
            .map(|_| center.iter().map(|c| c + normal.sample(rng)).collect())
            .collect()
    }

    #[test]
    fn single_component_is_the_mle() {
        let mut rng = seed::rng(1, &[]);
        let x = cloud(&[1.0, -2.0, 0.5], 0.7, 300, &mut rng);
        let g = fit_gmm(&x, 1, 200, 3).unwrap();
        let n = x.len() as f64;
        for d in 0..3 {
            let mean = x.iter().map(|r| r[d]).sum::<f64>() / n;
            let var = x.iter().map(|r| (r[d] - mean).powi(2)).sum::<f64>() / n;
            assert!((g.means[0][d] - mean).abs() < 1e-9);
            assert!((g.variances[0][d] - var).abs() < 1e-9);
        }
        assert_eq!(g.weights, vec![1.0]);
    }

    #[test]
    fn two_separated_clouds_are_recovered() {
        let mut rng = seed::rng(2, &[]);
        let a = cloud(&[0.0, 0.0], 0.1, 200, &mut rng);
        let b = cloud(&[10.0, 5.0], 0.1, 200, &mut rng);
        let x: Vec<Vec<f64>> = a.iter().chain(&b).cloned().collect();
        let g = fit_gmm(&x, 2, 200, 9).unwrap();
        for c in [&a, &b] {
            let centroid: Vec<f64> = (0..2)
                .map(|d| c.iter().map(|r| r[d]).sum::<f64>() / c.len() as f64)
                .collect();
            let nearest = g
                .means
                .iter()
                .map(|m| sq_dist(m, &centroid).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(nearest < 0.01, "mean off by {nearest}");
        }
        let asg = assign(&g, &x).unwrap();
        for r in &asg.responsibilities {
            assert!(r.iter().cloned().fold(0.0, f64::max) > 0.999);
        }
        assert_ne!(asg.clusters[0], asg.clusters[200]);
    }

    #[test]
    fn log_likelihood_never_decreases() {
        let mut rng = seed::rng(3, &[]);
        let mut x = cloud(&[0.0, 0.0, 0.0], 1.0, 100, &mut rng);
        x.extend(cloud(&[2.0, 1.0, 0.0], 0.5, 100, &mut rng));
        let g = fit_gmm(&x, 4, 200, 5).unwrap();
        for w in g.log_likelihood_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9);
        }
        assert!((g.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fit_rejects_too_few_points() {
        let x = vec![vec![0.0], vec![1.0]];
        assert!(fit_gmm(&x, 3, 10, 0).is_err());
        assert!(fit_gmm(&[], 1, 10, 0).is_err());
        assert!(fit_gmm(&x, 0, 10, 0).is_err());
    }

    #[test]
    fn symmetric_midpoint_is_split_evenly() {
        let g = GmmModel {
            k: 2,
            dim: 2,
            weights: vec![0.5, 0.5],
            means: vec![vec![-1.0, 0.0], vec![1.0, 0.0]],
            variances: vec![vec![0.3, 0.3], vec![0.3, 0.3]],
            log_likelihood_trace: vec![],
            converged: true,
            reseeds: vec![],
        };
        let (_, r) = assign_one(&g, &[0.0, 0.0]);
        assert!((r[0] - 0.5).abs() < 1e-6 && (r[1] - 0.5).abs() < 1e-6);
        assert_eq!(assign_one(&g, &[1.0, 0.0]).0, 1);
        let pts = vec![vec![0.3, 0.1], vec![-2.0, 1.0], vec![5.0, 0.0]];
        let batch = assign(&g, &pts).unwrap();
        for (i, p) in pts.iter().enumerate() {
            let (c, r) = assign_one(&g, p);
            assert_eq!(batch.clusters[i], c);
            assert_eq!(batch.responsibilities[i], r);
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(assign(&g, &[vec![0.0]]).is_err());
    }

    #[test]
    fn overlap_counting() {
        // Identity 7: 3 in cluster 0, 1 in cluster 1. Identity 8 all in cluster 1.
        let clusters = [0, 0, 0, 1, 1, 1];
        let labels = [7, 7, 7, 7, 8, 8];
        let t = overlap_scores(&clusters, &labels).unwrap();
        assert_eq!(t.value(0, 7), 0.75);
        assert_eq!(t.value(1, 7), 0.25);
        assert_eq!(t.value(1, 8), 1.0);
        assert_eq!(t.value(0, 8), 0.0);
        assert_eq!(t.totals[&7], 4);

        let mut c = vec![0; 40];
        c[..10].iter_mut().for_each(|v| *v = 1);
        let l = vec![3; 40];
        let t = overlap_scores(&c, &l).unwrap();
        assert_eq!(t.value(1, 3), 0.25);
        assert!(overlap_scores(&[0], &[]).is_err());
    }

    #[test]
    fn ranking_order_and_tail() {
        let t = overlap_scores(&[0, 0, 1, 1], &[5, 6, 5, 6]).unwrap();
        let r = rank_clusters(&t, 3, &[1, 2, 3, 4, 5, 6], 0);
        // Equal overlaps in cluster 0: lower label first.
        assert_eq!(r[0].identities[0].identity, 5);
        assert_eq!(r[0].identities[1].identity, 6);
        for cr in &r {
            let mut ids: Vec<_> = cr.identities.iter().map(|x| x.identity).collect();
            ids.sort();
            assert_eq!(ids, vec![1, 2, 3, 4, 5, 6]);
        }
        // Cluster 2 has no overlap at all: pure tail.
        assert!(r[2].identities.iter().all(|x| x.overlap == 0.0));
        assert_eq!(rank_clusters(&t, 3, &[1, 2, 3, 4, 5, 6], 0), r);
        assert_eq!(r[0].rank_of(6), Some(2));
        assert_eq!(r[0].assigned(), Some(5));
    }

    #[test]
    fn top_n_perfect_and_full() {
        let clusters = [0, 0, 1, 2];
        let labels = [10, 10, 11, 12];
        let t = overlap_scores(&clusters, &labels).unwrap();
        let r = rank_clusters(&t, 3, &[10, 11, 12], 1);
        assert_eq!(top_n_accuracy(&r, &clusters, &labels, 1).unwrap(), 1.0);
        assert_eq!(top_n_accuracy(&r, &clusters, &labels, 99).unwrap(), 1.0);
        assert!(top_n_accuracy(&r, &clusters, &labels, 0).is_err());
    }

    #[test]
    fn ari_reference_values() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[5, 5, 9, 9]).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&[0, 0, 0, 0], &[0, 1, 2, 3]).unwrap(), 0.0);
        // sklearn: adjusted_rand_score([0,0,1,1],[0,0,1,2]) = 0.5714285714285715
        let v = adjusted_rand_index(&[0, 0, 1, 1], &[0, 0, 1, 2]).unwrap();
        assert!((v - 4.0 / 7.0).abs() < 1e-15);
        assert!(adjusted_rand_index(&[0], &[0]).is_err());
        assert!(adjusted_rand_index(&[0, 1], &[0]).is_err());
    }
}
