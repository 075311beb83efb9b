//! CART trees with Gini impurity, bagged into a random forest.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Column-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    columns: Vec<Vec<f64>>,
    rows: usize,
}

impl Samples {
    pub fn from_rows(rows: &[Vec<f64>], arity: usize) -> Self {
        let mut columns = vec![Vec::with_capacity(rows.len()); arity];
        for r in rows {
            assert_eq!(r.len(), arity, "row arity");
            for (c, v) in columns.iter_mut().zip(r) {
                c.push(*v);
            }
        }
        Self {
            columns,
            rows: rows.len(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn arity(&self) -> usize {
        self.columns.len()
    }

    fn get(&self, row: usize, feature: usize) -> f64 {
        self.columns[feature][row]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Per-label sample weight, indexed like the label set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_weights: Option<Vec<f64>>,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            min_leaf: 2,
            class_weights: None,
        }
    }
}

/// A tree stored as parallel node arrays. `feature[i] < 0` marks a leaf
/// whose prediction is `label[i]`; otherwise rows with
/// `x[feature] <= threshold` go to `left[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tree {
    pub feature: Vec<i32>,
    pub threshold: Vec<f64>,
    pub left: Vec<u32>,
    pub right: Vec<u32>,
    pub label: Vec<u16>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> usize {
        let mut i = 0usize;
        loop {
            let f = self.feature[i];
            if f < 0 {
                return self.label[i] as usize;
            }
            i = if x[f as usize] <= self.threshold[i] {
                self.left[i] as usize
            } else {
                self.right[i] as usize
            };
        }
    }

    pub fn node_count(&self) -> usize {
        self.feature.len()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            if t.feature[i] < 0 {
                0
            } else {
                1 + go(t, t.left[i] as usize).max(go(t, t.right[i] as usize))
            }
        }
        go(self, 0)
    }

    fn push_leaf(&mut self, label: usize) -> usize {
        self.feature.push(-1);
        self.threshold.push(0.0);
        self.left.push(0);
        self.right.push(0);
        self.label.push(label as u16);
        self.feature.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Forest {
    pub n_features: usize,
    pub n_labels: usize,
    pub trees: Vec<Tree>,
}

impl Forest {
    /// Per-label vote counts.
    pub fn votes(&self, x: &[f64]) -> Vec<u32> {
        let mut v = vec![0u32; self.n_labels];
        for t in &self.trees {
            v[t.predict(x)] += 1;
        }
        v
    }

    /// Majority label (ties to the lower index) and its vote fraction.
    pub fn predict(&self, x: &[f64]) -> (usize, f64) {
        let v = self.votes(x);
        let best = argmax_u32(&v);
        (best, v[best] as f64 / self.trees.len().max(1) as f64)
    }
}

fn argmax_u32(v: &[u32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn argmax_f64(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a path of indices into a seed.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ p))
}

/// Trains `params.n_trees` trees in parallel. Tree `t` draws from a seed
/// derived from `(seed, t)` only, so the result is independent of thread
/// scheduling.
pub fn train_forest(x: &Samples, y: &[usize], n_labels: usize, params: &ForestParams, seed: u64) -> Forest {
    assert_eq!(x.rows(), y.len());
    assert!(x.rows() > 0 && n_labels > 0);
    let weights: Vec<f64> = match &params.class_weights {
        Some(w) => y.iter().map(|&l| w.get(l).copied().unwrap_or(1.0)).collect(),
        None => vec![1.0; y.len()],
    };
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[t as u64]));
            let n = x.rows();
            let mut counts = vec![0u32; n];
            for _ in 0..n {
                counts[rng.gen_range(0..n)] += 1;
            }
            let members: Vec<usize> = (0..n).filter(|&i| counts[i] > 0).collect();
            let mut builder = Builder {
                x,
                y,
                n_labels,
                counts: &counts,
                weights: &weights,
                params,
                rng,
                tree: Tree {
                    feature: Vec::new(),
                    threshold: Vec::new(),
                    left: Vec::new(),
                    right: Vec::new(),
                    label: Vec::new(),
                },
            };
            builder.grow(members, 0);
            builder.tree
        })
        .collect();
    Forest {
        n_features: x.arity(),
        n_labels,
        trees,
    }
}

struct Builder<'a> {
    x: &'a Samples,
    y: &'a [usize],
    n_labels: usize,
    counts: &'a [u32],
    weights: &'a [f64],
    params: &'a ForestParams,
    rng: ChaCha8Rng,
    tree: Tree,
}

struct Split {
    feature: usize,
    threshold: f64,
    score: f64,
}

fn gini_sum(dist: &[f64], total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    let sq: f64 = dist.iter().map(|d| d * d).sum();
    total - sq / total
}

impl Builder<'_> {
    fn distribution(&self, members: &[usize]) -> (Vec<f64>, u32) {
        let mut dist = vec![0.0; self.n_labels];
        let mut n = 0;
        for &i in members {
            dist[self.y[i]] += self.counts[i] as f64 * self.weights[i];
            n += self.counts[i];
        }
        (dist, n)
    }

    fn grow(&mut self, members: Vec<usize>, depth: usize) -> usize {
        let (dist, n) = self.distribution(&members);
        let total: f64 = dist.iter().sum();
        let pure = dist.iter().filter(|&&d| d > 0.0).count() <= 1;
        let depth_capped = self.params.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_capped || (n as usize) < 2 * self.params.min_leaf.max(1) {
            return self.tree.push_leaf(argmax_f64(&dist));
        }
        let Some(split) = self.best_split(&members, &dist, total) else {
            return self.tree.push_leaf(argmax_f64(&dist));
        };
        let (l, r): (Vec<usize>, Vec<usize>) = members
            .into_iter()
            .partition(|&i| self.x.get(i, split.feature) <= split.threshold);
        let node = self.tree.push_leaf(0);
        self.tree.feature[node] = split.feature as i32;
        self.tree.threshold[node] = split.threshold;
        let li = self.grow(l, depth + 1);
        let ri = self.grow(r, depth + 1);
        self.tree.left[node] = li as u32;
        self.tree.right[node] = ri as u32;
        node
    }

    /// Searches `⌈√F⌉` random features; if none of them admits a split that
    /// lowers impurity, the remaining features are tried in random order.
    fn best_split(&mut self, members: &[usize], dist: &[f64], total: f64) -> Option<Split> {
        let arity = self.x.arity();
        let mtry = ((arity as f64).sqrt().ceil() as usize).clamp(1, arity);
        let mut order: Vec<usize> = (0..arity).collect();
        order.shuffle(&mut self.rng);
        let parent = gini_sum(dist, total);
        let mut best: Option<Split> = None;
        let mut sorted: Vec<(f64, usize)> = Vec::with_capacity(members.len());
        for (k, &f) in order.iter().enumerate() {
            if k >= mtry && best.is_some() {
                break;
            }
            sorted.clear();
            sorted.extend(members.iter().map(|&i| (self.x.get(i, f), i)));
            sorted.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            if let Some(s) = self.scan(f, &sorted, dist, total, parent) {
                if best.as_ref().is_none_or(|b| s.score < b.score) {
                    best = Some(s);
                }
            }
        }
        best
    }

    fn scan(&self, feature: usize, sorted: &[(f64, usize)], dist: &[f64], total: f64, parent: f64) -> Option<Split> {
        let n_total: u32 = sorted.iter().map(|&(_, i)| self.counts[i]).sum();
        let min_leaf = self.params.min_leaf.max(1) as u32;
        let mut left = vec![0.0; self.n_labels];
        let mut left_total = 0.0;
        let mut left_n = 0u32;
        let mut right = dist.to_vec();
        let mut best: Option<Split> = None;
        for k in 0..sorted.len() - 1 {
            let (v, i) = sorted[k];
            let w = self.counts[i] as f64 * self.weights[i];
            left[self.y[i]] += w;
            right[self.y[i]] -= w;
            left_total += w;
            left_n += self.counts[i];
            let next = sorted[k + 1].0;
            if next <= v {
                continue;
            }
            if left_n < min_leaf || n_total - left_n < min_leaf {
                continue;
            }
            let score = gini_sum(&left, left_total) + gini_sum(&right, total - left_total);
            if score < parent - 1e-12 && best.as_ref().is_none_or(|b| score < b.score) {
                let mut threshold = v + (next - v) / 2.0;
                if threshold >= next {
                    threshold = v;
                }
                best = Some(Split {
                    feature,
                    threshold,
                    score,
                });
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let label = i % 2;
            let a: f64 = if label == 0 {
                rng.gen_range(0.0..0.45)
            } else {
                rng.gen_range(0.55..1.0)
            };
            let noise: f64 = rng.gen_range(0.0..1.0);
            x.push(vec![noise, a, rng.gen_range(0.0..1.0)]);
            y.push(label);
        }
        (x, y)
    }

    /// Exhaustive depth-1 search: best training accuracy of any single
    /// threshold on any feature, either orientation.
    fn stump_oracle(x: &[Vec<f64>], y: &[usize]) -> f64 {
        let mut best = 0.0f64;
        for f in 0..x[0].len() {
            let mut vals: Vec<f64> = x.iter().map(|r| r[f]).collect();
            vals.sort_by(f64::total_cmp);
            for t in vals {
                let hits = x.iter().zip(y).filter(|(r, &l)| (r[f] <= t) == (l == 0)).count();
                let acc = hits.max(x.len() - hits) as f64 / x.len() as f64;
                best = best.max(acc);
            }
        }
        best
    }

    #[test]
    fn separable_toy_set_is_fit_exactly() {
        let (x, y) = separable(200, 7);
        assert_eq!(stump_oracle(&x, &y), 1.0);
        let forest = train_forest(&Samples::from_rows(&x, 3), &y, 2, &ForestParams::default(), 1);
        let acc = x.iter().zip(&y).filter(|(r, &l)| forest.predict(r).0 == l).count();
        assert_eq!(acc, 200);
    }

    #[test]
    fn single_label_predicts_it_with_full_confidence() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, (i * 7 % 5) as f64]).collect();
        let y = vec![2; 30];
        let forest = train_forest(&Samples::from_rows(&x, 2), &y, 3, &ForestParams::default(), 9);
        for r in &x {
            assert_eq!(forest.predict(r), (2, 1.0));
        }
        assert!(forest.trees.iter().all(|t| t.node_count() == 1));
    }

    #[test]
    fn same_seed_same_forest() {
        let (x, y) = separable(120, 3);
        let s = Samples::from_rows(&x, 3);
        let p = ForestParams {
            n_trees: 10,
            ..ForestParams::default()
        };
        let a = serde_json::to_string(&train_forest(&s, &y, 2, &p, 5)).unwrap();
        let b = serde_json::to_string(&train_forest(&s, &y, 2, &p, 5)).unwrap();
        let c = serde_json::to_string(&train_forest(&s, &y, 2, &p, 6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn depth_cap_and_min_leaf() {
        let (x, y) = separable(100, 11);
        let s = Samples::from_rows(&x, 3);
        let p = ForestParams {
            n_trees: 5,
            max_depth: Some(1),
            ..ForestParams::default()
        };
        let f = train_forest(&s, &y, 2, &p, 1);
        assert!(f.trees.iter().all(|t| t.depth() <= 1));
    }

    #[test]
    fn vote_ties_go_to_lower_label() {
        let leaf = |l: u16| Tree {
            feature: vec![-1],
            threshold: vec![0.0],
            left: vec![0],
            right: vec![0],
            label: vec![l],
        };
        let f = Forest {
            n_features: 1,
            n_labels: 3,
            trees: vec![leaf(2), leaf(1), leaf(1), leaf(2)],
        };
        assert_eq!(f.predict(&[0.0]), (1, 0.5));
    }

    #[test]
    fn class_weights_shift_leaf_majority() {
        // Identical points with mixed labels cannot be split; the weighted
        // majority decides the leaf.
        let x = vec![vec![1.0]; 6];
        let y = vec![0, 0, 0, 0, 1, 1];
        let s = Samples::from_rows(&x, 1);
        let plain = train_forest(
            &s,
            &y,
            2,
            &ForestParams {
                n_trees: 1,
                ..Default::default()
            },
            4,
        );
        let weighted = train_forest(
            &s,
            &y,
            2,
            &ForestParams {
                n_trees: 1,
                class_weights: Some(vec![1.0, 100.0]),
                ..Default::default()
            },
            4,
        );
        assert_eq!(plain.predict(&[1.0]).0, 0);
        assert_eq!(weighted.predict(&[1.0]).0, 1);
    }
}
