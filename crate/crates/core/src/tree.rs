//! CART decision tree over raw pixel features with Gini impurity.
//!
//! Text format, one node per line in depth-first preorder:
//!
//! ```text
//! I <feature> <threshold>
//! L <class> <c0> <c1> <c2> <c3> <c4> <c5> <c6>
//! ```
//!
//! An internal node is followed by its left subtree (`feature <= threshold`)
//! and then its right subtree.

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::seed;
use crate::NUM_CLASSES;

pub type ClassCounts = [usize; NUM_CLASSES];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Internal {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        class_counts: ClassCounts,
        predicted_class: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub min_samples_split: usize,
    pub max_depth: Option<usize>,
    /// Number of features drawn (without replacement) at each node. `None`
    /// scans every feature.
    pub feature_subsample: Option<usize>,
    pub seed: u64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig { min_samples_split: 40, max_depth: None, feature_subsample: None, seed: 42 }
    }
}

impl TreeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_samples_split < 2 {
            return Err(Error::InvalidConfig("min_samples_split must be >= 2".into()));
        }
        if self.feature_subsample == Some(0) {
            return Err(Error::InvalidConfig("feature subsample must be >= 1".into()));
        }
        Ok(())
    }
}

/// Gini impurity `1 - sum(p_i^2)`.
pub fn gini(counts: &ClassCounts) -> Result<f64> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::EmptyInput("class counts"));
    }
    let n = total as f64;
    Ok(1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>())
}

/// Lowest class index among the maxima.
pub fn majority(counts: &ClassCounts) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

/// `sum(c^2) / n`, the quantity whose weighted child sum a split maximizes.
fn purity(counts: &ClassCounts, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    counts.iter().map(|&c| (c as f64) * (c as f64)).sum::<f64>() / n as f64
}

#[derive(Debug, Clone, Copy)]
struct Split {
    feature: usize,
    threshold: f64,
    score: f64,
}

struct Fitter<'a> {
    /// Column-major: `columns[f * n + i]`.
    columns: Vec<u8>,
    labels: &'a [u8],
    n: usize,
    features: usize,
    cfg: &'a TreeConfig,
    nodes_built: u64,
}

impl Fitter<'_> {
    fn counts(&self, idx: &[u32]) -> ClassCounts {
        let mut counts = [0; NUM_CLASSES];
        for &i in idx {
            counts[self.labels[i as usize] as usize] += 1;
        }
        counts
    }

    fn best_for_feature(&self, f: usize, idx: &[u32], hist: &mut [[u32; NUM_CLASSES]; 256], total: &ClassCounts) -> Option<Split> {
        let col = &self.columns[f * self.n..(f + 1) * self.n];
        let mut seen = [false; 256];
        let mut values: Vec<u8> = Vec::new();
        for &i in idx {
            let v = col[i as usize];
            if !seen[v as usize] {
                seen[v as usize] = true;
                values.push(v);
            }
            hist[v as usize][self.labels[i as usize] as usize] += 1;
        }
        values.sort_unstable();
        let mut best: Option<Split> = None;
        let mut left = [0usize; NUM_CLASSES];
        let mut nl = 0usize;
        let n = idx.len();
        for pair in values.windows(2) {
            for (c, &h) in hist[pair[0] as usize].iter().enumerate() {
                left[c] += h as usize;
                nl += h as usize;
            }
            let mut right = *total;
            for c in 0..NUM_CLASSES {
                right[c] -= left[c];
            }
            let score = purity(&left, nl) + purity(&right, n - nl);
            if best.is_none_or(|b| score > b.score) {
                best = Some(Split {
                    feature: f,
                    threshold: (pair[0] as f64 + pair[1] as f64) / 2.0,
                    score,
                });
            }
        }
        for &v in &values {
            hist[v as usize] = [0; NUM_CLASSES];
        }
        best
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let node = self.nodes_built;
        self.nodes_built += 1;
        match self.cfg.feature_subsample {
            Some(k) if k < self.features => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(self.cfg.seed, node));
                let mut picked = sample(&mut rng, self.features, k).into_vec();
                picked.sort_unstable();
                picked
            }
            _ => (0..self.features).collect(),
        }
    }

    fn grow(&mut self, idx: &mut [u32], depth: usize) -> TreeNode {
        let counts = self.counts(idx);
        let leaf = TreeNode::Leaf { class_counts: counts, predicted_class: majority(&counts) };
        let n = idx.len();
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if n < self.cfg.min_samples_split || pure || self.cfg.max_depth.is_some_and(|d| depth >= d) {
            return leaf;
        }
        let features = self.candidate_features();
        let this = &*self;
        let shared: &[u32] = idx;
        let best = features
            .par_iter()
            .map_init(
                || Box::new([[0u32; NUM_CLASSES]; 256]),
                |hist, &f| this.best_for_feature(f, shared, hist, &counts),
            )
            .flatten()
            .reduce_with(|a, b| {
                if b.score > a.score || (b.score == a.score && b.feature < a.feature) {
                    b
                } else {
                    a
                }
            });
        let parent = purity(&counts, n);
        let Some(split) = best.filter(|s| s.score > parent * (1.0 + 1e-12)) else {
            return leaf;
        };
        let col = &self.columns[split.feature * self.n..(split.feature + 1) * self.n];
        let (mut lo, mut hi): (Vec<u32>, Vec<u32>) = idx.iter().partition(|&&i| (col[i as usize] as f64) <= split.threshold);
        let left = self.grow(&mut lo, depth + 1);
        let right = self.grow(&mut hi, depth + 1);
        TreeNode::Internal {
            feature: split.feature,
            threshold: split.threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }
}

/// Grow a tree greedily, choosing at each node the split with the lowest
/// weighted child Gini. Candidates are scanned in (feature, threshold) order
/// and the first best wins.
pub fn fit_tree(dataset: &LabeledDataset, cfg: &TreeConfig) -> Result<TreeNode> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    let n = dataset.len();
    let (h, w) = dataset.image_dims();
    let features = h * w;
    let mut columns = vec![0u8; features * n];
    for i in 0..n {
        for (f, &v) in dataset.pixels(i).iter().enumerate() {
            columns[f * n + i] = v;
        }
    }
    let labels: Vec<u8> = dataset.labels().map(|l| l as u8).collect();
    let mut fitter = Fitter { columns, labels: &labels, n, features, cfg, nodes_built: 0 };
    let mut idx: Vec<u32> = (0..n as u32).collect();
    Ok(fitter.grow(&mut idx, 0))
}

pub fn predict_tree(root: &TreeNode, pixels: &[u8]) -> usize {
    leaf(root, pixels).1
}

/// The leaf `pixels` falls into.
fn leaf<'a>(root: &'a TreeNode, pixels: &[u8]) -> (&'a ClassCounts, usize) {
    let mut node = root;
    loop {
        match node {
            TreeNode::Leaf { class_counts, predicted_class } => return (class_counts, *predicted_class),
            TreeNode::Internal { feature, threshold, left, right } => {
                node = if (pixels[*feature] as f64) <= *threshold { left } else { right };
            }
        }
    }
}

/// Leaf class frequencies as a probability vector.
pub fn predict_proba(root: &TreeNode, pixels: &[u8]) -> [f32; NUM_CLASSES] {
    let (counts, _) = leaf(root, pixels);
    let total: usize = counts.iter().sum::<usize>().max(1);
    counts.map(|c| c as f32 / total as f32)
}

pub fn predict_dataset(root: &TreeNode, dataset: &LabeledDataset) -> Vec<usize> {
    (0..dataset.len()).map(|i| predict_tree(root, dataset.pixels(i))).collect()
}

impl TreeNode {
    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Internal { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Internal { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Internal { left, right, .. } => 1 + left.node_count() + right.node_count(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut stack = vec![self];
        while let Some(node) = stack.pop() {
            match node {
                TreeNode::Internal { feature, threshold, left, right } => {
                    let _ = writeln!(out, "I {feature} {threshold}");
                    stack.push(right);
                    stack.push(left);
                }
                TreeNode::Leaf { class_counts, predicted_class } => {
                    let _ = write!(out, "L {predicted_class}");
                    for c in class_counts {
                        let _ = write!(out, " {c}");
                    }
                    out.push('\n');
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<TreeNode> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let root = parse_node(&mut lines, 0)?;
        if let Some((i, _)) = lines.next() {
            return Err(Error::TreeFormat { line: i + 1, msg: "trailing nodes after complete tree".into() });
        }
        Ok(root)
    }
}

fn parse_node<'a>(lines: &mut impl Iterator<Item = (usize, &'a str)>, depth: usize) -> Result<TreeNode> {
    const MAX_DEPTH: usize = 100_000;
    let Some((i, line)) = lines.next() else {
        return Err(Error::TreeFormat { line: 0, msg: "unexpected end of tree".into() });
    };
    let line_no = i + 1;
    let err = |msg: &str| Error::TreeFormat { line: line_no, msg: msg.to_string() };
    if depth > MAX_DEPTH {
        return Err(err("tree too deep"));
    }
    let mut parts = line.split_whitespace();
    match parts.next() {
        Some("I") => {
            let feature = parts.next().and_then(|s| s.parse::<usize>().ok()).ok_or_else(|| err("bad feature index"))?;
            let threshold = parts
                .next()
                .and_then(|s| s.parse::<f64>().ok())
                .filter(|t| t.is_finite())
                .ok_or_else(|| err("bad threshold"))?;
            if parts.next().is_some() {
                return Err(err("extra fields"));
            }
            let left = parse_node(lines, depth + 1)?;
            let right = parse_node(lines, depth + 1)?;
            Ok(TreeNode::Internal { feature, threshold, left: Box::new(left), right: Box::new(right) })
        }
        Some("L") => {
            let fields: Vec<usize> = parts
                .map(|s| s.parse::<usize>().map_err(|_| err("bad integer")))
                .collect::<Result<_>>()?;
            if fields.len() != 1 + NUM_CLASSES {
                return Err(err("leaf needs a class and 7 counts"));
            }
            let predicted_class = fields[0];
            if predicted_class >= NUM_CLASSES {
                return Err(err("class out of range"));
            }
            let mut class_counts = [0; NUM_CLASSES];
            class_counts.copy_from_slice(&fields[1..]);
            Ok(TreeNode::Leaf { class_counts, predicted_class })
        }
        _ => Err(err("expected `I` or `L`")),
    }
}
