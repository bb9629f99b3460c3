//! Complete-linkage agglomerative clustering over a distance matrix.
//!
//! Leaves are the matrix indices `0..d`. Step `i` joins the closest pair of
//! active nodes `(a, b)`, records `⟨a, b, δ(a, b)⟩`, and introduces node
//! `d + i` whose distance to every remaining node `x` is
//! `max(δ(a, x), δ(b, x))`. Ties go to the lexicographically smallest
//! `(a, b)` with `a < b`.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::accumulation::AccumulationImage;
use crate::error::{Error, Result};
use crate::io;

/// How an asymmetric distance matrix becomes a symmetric dissimilarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymmetrizeMode {
    /// `½(D_ab + D_ba)`
    #[default]
    Mean,
    /// `|½(D_ab + D_ba)|`
    AbsMean,
    /// `max(D_ab, D_ba)`
    Max,
}

impl std::str::FromStr for SymmetrizeMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "mean" => Ok(SymmetrizeMode::Mean),
            "abs_mean" | "absmean" => Ok(SymmetrizeMode::AbsMean),
            "max" => Ok(SymmetrizeMode::Max),
            other => Err(format!("unknown symmetrize mode `{other}`")),
        }
    }
}

impl std::fmt::Display for SymmetrizeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SymmetrizeMode::Mean => "mean",
            SymmetrizeMode::AbsMean => "abs_mean",
            SymmetrizeMode::Max => "max",
        })
    }
}

/// Symmetric dissimilarity with a zero diagonal, stored densely.
#[derive(Debug, Clone, PartialEq)]
pub struct Dissimilarity {
    n: usize,
    values: Vec<f64>,
}

impl Dissimilarity {
    /// Builds `δ(a, b) = f(a, b)` for `a < b`, mirrored, with `δ(a, a) = 0`.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = vec![0.0; n * n];
        for a in 0..n {
            for b in (a + 1)..n {
                let v = f(a, b);
                if !v.is_finite() {
                    return Err(Error::NonFinite);
                }
                values[a * n + b] = v;
                values[b * n + a] = v;
            }
        }
        Ok(Dissimilarity { n, values })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values[a * self.n + b]
    }
}

pub fn symmetrize(d: &DMatrix<f64>, mode: SymmetrizeMode) -> Result<Dissimilarity> {
    if !d.is_square() {
        return Err(Error::NotSquare(format!("{}x{}", d.nrows(), d.ncols())));
    }
    Dissimilarity::from_fn(d.nrows(), |a, b| {
        let (x, y) = (d[(a, b)], d[(b, a)]);
        match mode {
            SymmetrizeMode::Mean => 0.5 * (x + y),
            SymmetrizeMode::AbsMean => (0.5 * (x + y)).abs(),
            SymmetrizeMode::Max => x.max(y),
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub distance: f64,
    pub new_node: usize,
}

/// Stepwise dendrogram: `leaf_count − 1` merges in order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    pub leaf_count: usize,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    /// Merge distances never decrease.
    pub fn is_monotone(&self) -> bool {
        self.merges.windows(2).all(|w| w[0].distance <= w[1].distance)
    }

    /// Checks the structural invariants: `d − 1` merges, node labels
    /// `d + i`, every node consumed at most once and only after it exists.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let d = self.leaf_count;
        if self.merges.len() + 1 != d {
            return Err(format!("{} merges for {} leaves", self.merges.len(), d));
        }
        let mut used = vec![false; 2 * d - 1];
        for (i, m) in self.merges.iter().enumerate() {
            if m.new_node != d + i {
                return Err(format!("merge {i} creates node {}", m.new_node));
            }
            for child in [m.a, m.b] {
                if child >= d + i {
                    return Err(format!("merge {i} uses node {child} before it exists"));
                }
                if std::mem::replace(&mut used[child], true) {
                    return Err(format!("node {child} merged twice"));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, &self.merges)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let merges: Vec<Merge> = io::read_json(path)?;
        let dn = Dendrogram { leaf_count: merges.len() + 1, merges };
        dn.validate().map_err(|reason| Error::MalformedFile { path: path.to_path_buf(), reason })?;
        Ok(dn)
    }
}

/// Algorithm 1 as a full rescan: every step scans all active pairs.
/// `O(d³)` time, `O(d²)` memory.
pub fn agglomerate(delta: &Dissimilarity) -> Result<Dendrogram> {
    let d = delta.len();
    if d < 2 {
        return Err(Error::TooFewLeaves(d));
    }
    let mut dist = delta.values.clone();
    // (label, slot) pairs in ascending label order.
    let mut active: Vec<(usize, usize)> = (0..d).map(|k| (k, k)).collect();
    let mut merges = Vec::with_capacity(d - 1);

    for step in 0..d - 1 {
        let mut best = (f64::INFINITY, 0, 1);
        let mut found = false;
        for x in 0..active.len() {
            let row = active[x].1 * d;
            for y in (x + 1)..active.len() {
                let v = dist[row + active[y].1];
                if !found || v < best.0 {
                    best = (v, x, y);
                    found = true;
                }
            }
        }
        let (distance, x, y) = best;
        let (label_a, slot_a) = active[x];
        let (label_b, slot_b) = active[y];
        let new_node = d + step;
        merges.push(Merge { a: label_a, b: label_b, distance, new_node });

        active.remove(y);
        active.remove(x);
        for &(_, slot) in &active {
            let v = dist[slot_a * d + slot].max(dist[slot_b * d + slot]);
            dist[slot_a * d + slot] = v;
            dist[slot * d + slot_a] = v;
        }
        active.push((new_node, slot_a));
    }
    Ok(Dendrogram { leaf_count: d, merges })
}

/// Same output as [`agglomerate`], with each node caching its nearest
/// higher-labelled neighbour so most steps cost `O(d)`.
pub fn agglomerate_fast(delta: &Dissimilarity) -> Result<Dendrogram> {
    let d = delta.len();
    if d < 2 {
        return Err(Error::TooFewLeaves(d));
    }
    let total = 2 * d - 1;
    let mut dist = delta.values.clone();
    let mut slot: Vec<usize> = (0..total).map(|k| if k < d { k } else { usize::MAX }).collect();
    let mut active: Vec<usize> = (0..d).collect();
    // best[label] = nearest active partner with a larger label.
    let mut best: Vec<Option<(f64, usize)>> = vec![None; total];

    let row_best = |label: usize, active: &[usize], slot: &[usize], dist: &[f64]| {
        let row = slot[label] * d;
        let mut out: Option<(f64, usize)> = None;
        for &other in active.iter().filter(|&&o| o > label) {
            let v = dist[row + slot[other]];
            if out.is_none_or(|(bv, _)| v < bv) {
                out = Some((v, other));
            }
        }
        out
    };
    for &label in &active {
        best[label] = row_best(label, &active, &slot, &dist);
    }

    let mut merges = Vec::with_capacity(d - 1);
    for step in 0..d - 1 {
        let mut pick: Option<(f64, usize, usize)> = None;
        for &label in &active {
            if let Some((v, partner)) = best[label] {
                if pick.is_none_or(|(pv, _, _)| v < pv) {
                    pick = Some((v, label, partner));
                }
            }
        }
        let (distance, a, b) = pick.expect("at least two active nodes");
        let new_node = d + step;
        merges.push(Merge { a, b, distance, new_node });

        active.retain(|&l| l != a && l != b);
        let new_slot = slot[a];
        for &x in &active {
            let sx = slot[x];
            let v = dist[slot[a] * d + sx].max(dist[slot[b] * d + sx]);
            dist[new_slot * d + sx] = v;
            dist[sx * d + new_slot] = v;
        }
        slot[new_node] = new_slot;
        active.push(new_node);

        for &x in &active[..active.len() - 1] {
            match best[x] {
                Some((_, partner)) if partner == a || partner == b => {
                    best[x] = row_best(x, &active, &slot, &dist);
                }
                current => {
                    let v = dist[slot[x] * d + new_slot];
                    if current.is_none_or(|(bv, _)| v < bv) {
                        best[x] = Some((v, new_node));
                    }
                }
            }
        }
        best[new_node] = None;
    }
    Ok(Dendrogram { leaf_count: d, merges })
}

/// Exhaustive reference: clusters are explicit leaf sets and the linkage
/// between two clusters is the largest original dissimilarity across them.
/// Shares nothing with the update-rule implementations above.
pub fn reference_complete_linkage(delta: &Dissimilarity) -> Result<Dendrogram> {
    let d = delta.len();
    if d < 2 {
        return Err(Error::TooFewLeaves(d));
    }
    let mut clusters: Vec<(usize, Vec<usize>)> = (0..d).map(|k| (k, vec![k])).collect();
    let mut merges = Vec::new();
    for step in 0..d - 1 {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..clusters.len() {
            for j in 0..clusters.len() {
                if clusters[i].0 >= clusters[j].0 {
                    continue;
                }
                let link = clusters[i]
                    .1
                    .iter()
                    .flat_map(|&u| clusters[j].1.iter().map(move |&v| delta.get(u, v)))
                    .fold(f64::NEG_INFINITY, f64::max);
                let better = match best {
                    None => true,
                    Some((bv, bi, bj)) => {
                        link < bv || (link == bv && (clusters[i].0, clusters[j].0) < (clusters[bi].0, clusters[bj].0))
                    }
                };
                if better {
                    best = Some((link, i, j));
                }
            }
        }
        let (distance, i, j) = best.expect("two clusters remain");
        let (a, b) = (clusters[i].0, clusters[j].0);
        let mut members = clusters[i].1.clone();
        members.extend_from_slice(&clusters[j].1);
        clusters.retain(|c| c.0 != a && c.0 != b);
        clusters.push((d + step, members));
        merges.push(Merge { a, b, distance, new_node: d + step });
    }
    Ok(Dendrogram { leaf_count: d, merges })
}

/// Flat clustering: one label per leaf, numbered by first occurrence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterLabeling {
    pub k: usize,
    pub labels: Vec<usize>,
}

fn label_after(dn: &Dendrogram, applied: usize) -> ClusterLabeling {
    let d = dn.leaf_count;
    let mut parent: Vec<usize> = (0..2 * d - 1).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for m in &dn.merges[..applied] {
        let ra = find(&mut parent, m.a);
        let rb = find(&mut parent, m.b);
        parent[ra] = m.new_node;
        parent[rb] = m.new_node;
    }
    let mut canon = vec![usize::MAX; 2 * d - 1];
    let mut next = 0;
    let labels = (0..d)
        .map(|leaf| {
            let root = find(&mut parent, leaf);
            if canon[root] == usize::MAX {
                canon[root] = next;
                next += 1;
            }
            canon[root]
        })
        .collect();
    ClusterLabeling { k: next, labels }
}

/// `k` clusters: undo the last `k − 1` merges.
pub fn cut(dn: &Dendrogram, k: usize) -> Result<ClusterLabeling> {
    let d = dn.leaf_count;
    if k == 0 || k > d {
        return Err(Error::KOutOfRange { k, leaves: d });
    }
    Ok(label_after(dn, d - k))
}

/// Keeps the leading merges whose distance is at most `t`.
pub fn cut_at_threshold(dn: &Dendrogram, t: f64) -> ClusterLabeling {
    let applied = dn.merges.iter().take_while(|m| m.distance <= t).count();
    label_after(dn, applied)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LegendEntry {
    pub label: usize,
    /// 0 for the cluster with the largest mean accumulation.
    pub rank: usize,
    pub mean_phi: f64,
    pub pixel_count: usize,
}

/// Cluster labels laid onto the image grid, with clusters ranked by their
/// mean accumulated distance.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelImage {
    pub side: usize,
    pub labels: Vec<usize>,
    pub legend: Vec<LegendEntry>,
}

pub fn label_image(c: &ClusterLabeling, acc: &AccumulationImage) -> Result<LabelImage> {
    let pixels = acc.side * acc.side;
    if c.labels.len() != pixels {
        return Err(Error::SizeMismatch { labels: c.labels.len(), pixels });
    }
    let mut sums = vec![0.0; c.k];
    let mut counts = vec![0usize; c.k];
    for (&l, &v) in c.labels.iter().zip(&acc.values) {
        sums[l] += v;
        counts[l] += 1;
    }
    let mut legend: Vec<LegendEntry> = (0..c.k)
        .map(|label| LegendEntry { label, rank: 0, mean_phi: sums[label] / counts[label] as f64, pixel_count: counts[label] })
        .collect();
    legend.sort_by(|x, y| y.mean_phi.total_cmp(&x.mean_phi).then(x.label.cmp(&y.label)));
    for (rank, e) in legend.iter_mut().enumerate() {
        e.rank = rank;
    }
    Ok(LabelImage { side: acc.side, labels: c.labels.clone(), legend })
}

impl LabelImage {
    pub fn rank_of(&self, label: usize) -> usize {
        self.legend.iter().find(|e| e.label == label).map(|e| e.rank).unwrap_or(0)
    }

    /// Writes `<stem>.pgm` (label index per pixel), `<stem>.legend.json` and a
    /// colour rendering `<stem>.ppm` where higher-ranked clusters are brighter.
    pub fn export(&self, stem: &Path) -> Result<()> {
        let with = |suffix: &str| io::sibling(stem, suffix);
        let k = self.legend.len();
        let px: Vec<u16> = self.labels.iter().map(|&l| l as u16).collect();
        io::write_pgm(&with(".pgm"), self.side, self.side, (k.saturating_sub(1)).max(1) as u16, &px)?;
        io::write_json(&with(".legend.json"), &self.legend)?;
        let colours: Vec<[u8; 3]> = self
            .labels
            .iter()
            .map(|&l| {
                let rank = self.rank_of(l);
                let t = if k > 1 { 1.0 - rank as f64 / (k - 1) as f64 } else { 1.0 };
                io::ramp_color(t)
            })
            .collect();
        io::write_ppm(&with(".ppm"), self.side, self.side, &colours)
    }
}
