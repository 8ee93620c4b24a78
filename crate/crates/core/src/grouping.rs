//! Channel grouping strategies: SCI-similarity clustering, k-means and HAC
//! on statistical features, and the two wavelength-rule splits, plus
//! silhouette scoring and partition comparison.

use serde::{Deserialize, Serialize};

use crate::rng::{derive, Xoshiro256};
use crate::stats::{ChannelStats, SciMatrix};
use crate::{Error, Result};

pub const DEFAULT_VNIR_BOUNDARY_NM: f64 = 1000.0;
pub const DEFAULT_SR_BOUNDARIES_NM: [f64; 4] = [550.0, 700.0, 1000.0, 1800.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Strategy {
    Sci,
    Kmeans,
    Hac,
    VnirSwir,
    SoilReflectance,
}

impl Strategy {
    pub const ALL: [Strategy; 5] =
        [Strategy::Sci, Strategy::Kmeans, Strategy::Hac, Strategy::VnirSwir, Strategy::SoilReflectance];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Sci => "SCI",
            Strategy::Kmeans => "KMEANS",
            Strategy::Hac => "HAC",
            Strategy::VnirSwir => "VNIR_SWIR",
            Strategy::SoilReflectance => "SOIL_REFLECTANCE",
        }
    }
}

/// A total partition of the C bands into `num_groups` nonempty groups.
/// Group indices are canonical: sorted by ascending lowest member band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupingResult {
    pub strategy: Strategy,
    pub num_groups: usize,
    pub assignment: Vec<usize>,
    pub group_sizes: Vec<usize>,
    #[serde(skip)]
    pub warnings: Vec<String>,
}

impl GroupingResult {
    /// Degenerate single-group partition (no grouping baseline).
    pub fn single_group(channels: usize, strategy: Strategy) -> Self {
        GroupingResult {
            strategy,
            num_groups: 1,
            assignment: vec![0; channels],
            group_sizes: vec![channels],
            warnings: Vec::new(),
        }
    }

    pub fn channels(&self) -> usize {
        self.assignment.len()
    }

    /// Band indices of group g, ascending.
    pub fn members(&self, g: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter_map(|(b, &gg)| (gg == g).then_some(b))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.assignment.is_empty() || self.num_groups == 0 {
            return Err(Error::InvalidGroupCount { g: self.num_groups, c: self.assignment.len() });
        }
        let mut sizes = vec![0usize; self.num_groups];
        for &g in &self.assignment {
            if g >= self.num_groups {
                return Err(Error::Shape(format!("assignment label {g} out of range")));
            }
            sizes[g] += 1;
        }
        if sizes.iter().any(|&s| s == 0) || sizes != self.group_sizes {
            return Err(Error::Shape("group sizes inconsistent with assignment".into()));
        }
        Ok(())
    }
}

/// Relabel arbitrary (possibly sparse) labels so groups are indexed by
/// ascending lowest member band; drops empty labels.
fn canonicalize(raw: &[usize], strategy: Strategy, warnings: Vec<String>) -> GroupingResult {
    let max_label = raw.iter().copied().max().unwrap_or(0);
    let mut lowest = vec![usize::MAX; max_label + 1];
    for (band, &g) in raw.iter().enumerate() {
        if lowest[g] == usize::MAX {
            lowest[g] = band;
        }
    }
    let mut order: Vec<usize> = (0..=max_label).filter(|&g| lowest[g] != usize::MAX).collect();
    order.sort_by_key(|&g| lowest[g]);
    let mut relabel = vec![usize::MAX; max_label + 1];
    for (new, &old) in order.iter().enumerate() {
        relabel[old] = new;
    }
    let assignment: Vec<usize> = raw.iter().map(|&g| relabel[g]).collect();
    let num_groups = order.len();
    let mut group_sizes = vec![0usize; num_groups];
    for &g in &assignment {
        group_sizes[g] += 1;
    }
    GroupingResult { strategy, num_groups, assignment, group_sizes, warnings }
}

// ---- agglomerative engine (average linkage) --------------------------------

/// Average-linkage agglomerative clustering on a full n×n distance matrix,
/// cut at `g` clusters. Merge ties are broken by the lexicographically
/// smallest slot pair; a cluster's slot is its smallest member band, so the
/// tie rule is stable under the canonical relabeling.
fn agglomerative(dist: &[f64], n: usize, g: usize) -> Vec<usize> {
    debug_assert_eq!(dist.len(), n * n);
    let mut d = dist.to_vec();
    let mut alive: Vec<bool> = vec![true; n];
    let mut size: Vec<usize> = vec![1; n];
    let mut label: Vec<usize> = (0..n).collect();
    let mut remaining = n;
    while remaining > g {
        let mut best = (f64::INFINITY, usize::MAX, usize::MAX);
        for i in 0..n {
            if !alive[i] {
                continue;
            }
            for j in (i + 1)..n {
                if !alive[j] {
                    continue;
                }
                let dij = d[i * n + j];
                if dij < best.0 {
                    best = (dij, i, j);
                }
            }
        }
        let (_, i, j) = best;
        // Lance-Williams update for average linkage; merged cluster keeps slot i
        let (si, sj) = (size[i] as f64, size[j] as f64);
        for k in 0..n {
            if !alive[k] || k == i || k == j {
                continue;
            }
            let dk = (si * d[k * n + i] + sj * d[k * n + j]) / (si + sj);
            d[k * n + i] = dk;
            d[i * n + k] = dk;
        }
        size[i] += size[j];
        alive[j] = false;
        for l in label.iter_mut() {
            if *l == j {
                *l = i;
            }
        }
        remaining -= 1;
    }
    label
}

fn check_group_count(g: usize, c: usize) -> Result<()> {
    if g == 0 || g > c {
        return Err(Error::InvalidGroupCount { g, c });
    }
    Ok(())
}

/// Cluster bands on SCI product similarity: average-linkage agglomerative
/// over distance 1 - score, cut at g.
pub fn group_sci(m: &SciMatrix, g: usize) -> Result<GroupingResult> {
    let c = m.channels;
    check_group_count(g, c)?;
    let mut dist = vec![0.0f64; c * c];
    for i in 0..c {
        for j in 0..c {
            dist[i * c + j] = (1.0 - m.get(i, j)).max(0.0);
        }
    }
    let raw = agglomerative(&dist, c, g);
    Ok(canonicalize(&raw, Strategy::Sci, Vec::new()))
}

// ---- feature space ----------------------------------------------------------

pub const FEATURE_NAMES: [&str; 5] =
    ["mean", "std", "dynamic_range", "coeff_variation", "self_correlation"];

/// C×5 z-score standardized feature rows (mean, std, dynamic range,
/// coefficient of variation, self-correlation). A raw column with zero
/// variance becomes all-zero and is flagged.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    pub channels: usize,
    pub rows: Vec<[f64; 5]>,
    pub constant_columns: [bool; 5],
}

impl FeatureMatrix {
    pub fn from_stats(stats: &ChannelStats) -> Self {
        let c = stats.channels();
        let columns: [&[f64]; 5] = [
            &stats.mean,
            &stats.std,
            &stats.dynamic_range,
            &stats.coeff_variation,
            &stats.self_correlation,
        ];
        let mut rows = vec![[0.0f64; 5]; c];
        let mut constant_columns = [false; 5];
        for (k, col) in columns.iter().enumerate() {
            let n = c as f64;
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let std = var.sqrt();
            if std <= 1e-12 * (1.0 + mean.abs()) {
                constant_columns[k] = true;
                continue;
            }
            for (row, &v) in rows.iter_mut().zip(col.iter()) {
                row[k] = (v - mean) / std;
            }
        }
        FeatureMatrix { channels: c, rows, constant_columns }
    }
}

#[inline]
fn sqdist(a: &[f64; 5], b: &[f64; 5]) -> f64 {
    let mut s = 0.0;
    for k in 0..5 {
        let d = a[k] - b[k];
        s += d * d;
    }
    s
}

/// Average-linkage HAC with Euclidean distance on feature rows.
pub fn group_hac(f: &FeatureMatrix, g: usize) -> Result<GroupingResult> {
    let c = f.channels;
    check_group_count(g, c)?;
    let mut dist = vec![0.0f64; c * c];
    for i in 0..c {
        for j in (i + 1)..c {
            let d = sqdist(&f.rows[i], &f.rows[j]).sqrt();
            dist[i * c + j] = d;
            dist[j * c + i] = d;
        }
    }
    let raw = agglomerative(&dist, c, g);
    Ok(canonicalize(&raw, Strategy::Hac, Vec::new()))
}

/// Lloyd's k-means with k-means++ seeding, squared Euclidean distance,
/// at most 300 iterations or centroid shift below 1e-6, best of `restarts`
/// runs by within-cluster sum of squares (ties: lexicographically smallest
/// canonical assignment). Empty clusters claim the point farthest from its
/// centroid.
pub fn group_kmeans(f: &FeatureMatrix, g: usize, seed: u64, restarts: usize) -> Result<GroupingResult> {
    let c = f.channels;
    check_group_count(g, c)?;
    if restarts == 0 {
        return Err(Error::config("/grouping/kmeans_restarts", "must be at least 1"));
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for r in 0..restarts {
        let mut rng = Xoshiro256::seeded(derive(seed, r as u64));
        let (assignment, wcss) = kmeans_once(f, g, &mut rng);
        let canon = canonicalize(&assignment, Strategy::Kmeans, Vec::new()).assignment;
        let better = match &best {
            None => true,
            Some((bw, ba)) => wcss < *bw || (wcss == *bw && canon < *ba),
        };
        if better {
            best = Some((wcss, canon));
        }
    }
    let (_, assignment) = best.unwrap();
    Ok(canonicalize(&assignment, Strategy::Kmeans, Vec::new()))
}

fn kmeans_once(f: &FeatureMatrix, g: usize, rng: &mut Xoshiro256) -> (Vec<usize>, f64) {
    let n = f.channels;
    // k-means++ seeding
    let mut centroids: Vec<[f64; 5]> = Vec::with_capacity(g);
    let mut chosen = vec![false; n];
    let first = rng.below(n as u64) as usize;
    centroids.push(f.rows[first]);
    chosen[first] = true;
    let mut d2: Vec<f64> = f.rows.iter().map(|r| sqdist(r, &centroids[0])).collect();
    while centroids.len() < g {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.next_f64() * total;
            let mut cum = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                cum += w;
                if cum > target {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            // all remaining points coincide with a centroid; take the
            // smallest unchosen index
            (0..n).find(|&i| !chosen[i]).unwrap_or(0)
        };
        chosen[pick] = true;
        centroids.push(f.rows[pick]);
        for (i, row) in f.rows.iter().enumerate() {
            d2[i] = d2[i].min(sqdist(row, &centroids[centroids.len() - 1]));
        }
    }

    let mut assignment = vec![0usize; n];
    for _iter in 0..300 {
        // assignment step; ties to the lowest centroid index
        for (i, row) in f.rows.iter().enumerate() {
            let mut best = (f64::INFINITY, 0usize);
            for (k, cen) in centroids.iter().enumerate() {
                let d = sqdist(row, cen);
                if d < best.0 {
                    best = (d, k);
                }
            }
            assignment[i] = best.1;
        }
        // empty-cluster repair: claim the point farthest from its centroid
        loop {
            let mut counts = vec![0usize; g];
            for &a in &assignment {
                counts[a] += 1;
            }
            let Some(empty) = counts.iter().position(|&ct| ct == 0) else { break };
            let mut far = (f64::NEG_INFINITY, 0usize);
            for (i, row) in f.rows.iter().enumerate() {
                if counts[assignment[i]] <= 1 {
                    continue; // keep donor clusters nonempty
                }
                let d = sqdist(row, &centroids[assignment[i]]);
                if d > far.0 {
                    far = (d, i);
                }
            }
            assignment[far.1] = empty;
            centroids[empty] = f.rows[far.1];
        }
        // update step
        let mut next = vec![[0.0f64; 5]; g];
        let mut counts = vec![0usize; g];
        for (i, row) in f.rows.iter().enumerate() {
            let k = assignment[i];
            counts[k] += 1;
            for dim in 0..5 {
                next[k][dim] += row[dim];
            }
        }
        let mut shift: f64 = 0.0;
        for k in 0..g {
            for dim in 0..5 {
                next[k][dim] /= counts[k] as f64;
            }
            shift = shift.max(sqdist(&next[k], &centroids[k]).sqrt());
        }
        centroids = next;
        if shift < 1e-6 {
            break;
        }
    }
    // final assignment against converged centroids
    for (i, row) in f.rows.iter().enumerate() {
        let mut best = (f64::INFINITY, 0usize);
        for (k, cen) in centroids.iter().enumerate() {
            let d = sqdist(row, cen);
            if d < best.0 {
                best = (d, k);
            }
        }
        assignment[i] = best.1;
    }
    let wcss: f64 = f.rows.iter().enumerate().map(|(i, r)| sqdist(r, &centroids[assignment[i]])).sum();
    (assignment, wcss)
}

// ---- wavelength rules -------------------------------------------------------

/// Two groups split at `boundary` nm: below vs at-or-above. If every band
/// falls on one side the single-group partition is returned with a warning.
pub fn group_vnir_swir(wavelengths: &[f64], boundary: f64) -> Result<GroupingResult> {
    if wavelengths.is_empty() {
        return Err(Error::MissingWavelengths);
    }
    let raw: Vec<usize> = wavelengths.iter().map(|&wl| usize::from(wl >= boundary)).collect();
    let mut warnings = Vec::new();
    if raw.iter().all(|&g| g == raw[0]) {
        warnings.push(format!("all bands on one side of the {boundary} nm boundary"));
    }
    Ok(canonicalize(&raw, Strategy::VnirSwir, warnings))
}

/// Buckets bands by half-open wavelength ranges [lo, hi) delimited by
/// `boundaries` (a wavelength exactly on a boundary joins the higher range).
/// Empty ranges are dropped with a warning.
pub fn group_soil_reflectance(wavelengths: &[f64], boundaries: &[f64]) -> Result<GroupingResult> {
    if wavelengths.is_empty() {
        return Err(Error::MissingWavelengths);
    }
    if boundaries.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config("/grouping/sr_boundaries", "must be strictly increasing"));
    }
    let raw: Vec<usize> =
        wavelengths.iter().map(|&wl| boundaries.iter().take_while(|&&b| wl >= b).count()).collect();
    let buckets = boundaries.len() + 1;
    let mut present = vec![false; buckets];
    for &g in &raw {
        present[g] = true;
    }
    let mut warnings = Vec::new();
    for (g, &p) in present.iter().enumerate() {
        if !p {
            warnings.push(format!("wavelength range {g} is empty and was dropped"));
        }
    }
    Ok(canonicalize(&raw, Strategy::SoilReflectance, warnings))
}

// ---- scoring ----------------------------------------------------------------

/// Mean silhouette s = (b - a) / max(a, b) over bands with Euclidean feature
/// distance; singleton bands score 0.
pub fn silhouette_score(f: &FeatureMatrix, r: &GroupingResult) -> Result<f64> {
    if r.num_groups < 2 {
        return Err(Error::UndefinedScore);
    }
    r.validate()?;
    let n = f.channels;
    let mut total = 0.0;
    for i in 0..n {
        let own = r.assignment[i];
        if r.group_sizes[own] == 1 {
            continue; // s = 0
        }
        let mut sum = vec![0.0f64; r.num_groups];
        for j in 0..n {
            if j != i {
                sum[r.assignment[j]] += sqdist(&f.rows[i], &f.rows[j]).sqrt();
            }
        }
        let a = sum[own] / (r.group_sizes[own] - 1) as f64;
        let b = (0..r.num_groups)
            .filter(|&g| g != own)
            .map(|g| sum[g] / r.group_sizes[g] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

/// Adjusted Rand Index between two labelings of the same bands; 1.0 for
/// identical partitions, about 0 for independent ones.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let ka = a.iter().copied().max().map_or(0, |m| m + 1);
    let kb = b.iter().copied().max().map_or(0, |m| m + 1);
    let mut table = vec![0u64; ka * kb];
    let mut rows = vec![0u64; ka];
    let mut cols = vec![0u64; kb];
    for i in 0..n {
        table[a[i] * kb + b[i]] += 1;
        rows[a[i]] += 1;
        cols[b[i]] += 1;
    }
    let comb2 = |x: u64| (x * x.saturating_sub(1)) as f64 / 2.0;
    let sum_ij: f64 = table.iter().map(|&x| comb2(x)).sum();
    let sum_a: f64 = rows.iter().map(|&x| comb2(x)).sum();
    let sum_b: f64 = cols.iter().map(|&x| comb2(x)).sum();
    let total = comb2(n as u64);
    let expected = sum_a * sum_b / total;
    let max_index = 0.5 * (sum_a + sum_b);
    if (max_index - expected).abs() < 1e-12 {
        return 1.0;
    }
    (sum_ij - expected) / (max_index - expected)
}
