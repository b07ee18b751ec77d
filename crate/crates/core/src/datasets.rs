//! The noisy binary-tree dataset and hypernymy edge lists.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::Rng;

pub const MAX_TREE_DEPTH: usize = 12;
pub const DEFAULT_THETA_MAX: f64 = std::f64::consts::FRAC_PI_4;

/// A complete binary tree in heap order: node `i` has children `2i+1`, `2i+2`.
/// The code of node `i` has ones at `i` and at every ancestor of `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryTree {
    depth: usize,
    codes: Vec<Vec<f64>>,
}

impl BinaryTree {
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn code(&self, i: usize) -> &[f64] {
        &self.codes[i]
    }

    pub fn codes(&self) -> &[Vec<f64>] {
        &self.codes
    }

    pub fn parent(i: usize) -> Option<usize> {
        (i > 0).then(|| (i - 1) / 2)
    }

    /// Root depth is 0.
    pub fn node_depth(i: usize) -> usize {
        (usize::BITS - 1 - (i + 1).leading_zeros()) as usize
    }

    pub fn lca(mut a: usize, mut b: usize) -> usize {
        while a != b {
            if a > b {
                a = (a - 1) / 2;
            } else {
                b = (b - 1) / 2;
            }
        }
        a
    }

    /// Tree-path length between nodes, which equals the Hamming distance of
    /// their codes.
    pub fn path_length(a: usize, b: usize) -> usize {
        let l = Self::node_depth(Self::lca(a, b));
        Self::node_depth(a) + Self::node_depth(b) - 2 * l
    }
}

pub fn gen_binary_tree(depth: usize) -> Result<BinaryTree> {
    if !(1..=MAX_TREE_DEPTH).contains(&depth) {
        return Err(Error::Config(format!("tree depth must be in 1..={MAX_TREE_DEPTH}, got {depth}")));
    }
    let n = (1usize << depth) - 1;
    let mut codes: Vec<Vec<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut c = match BinaryTree::parent(i) {
            Some(p) => codes[p].clone(),
            None => vec![0.0; n],
        };
        c[i] = 1.0;
        codes.push(c);
    }
    Ok(BinaryTree { depth, codes })
}

pub fn hamming(a: &[f64], b: &[f64]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeSample {
    pub id: usize,
    pub base: usize,
    pub depth: usize,
    pub theta: f64,
    pub split: Split,
    pub x: Vec<f64>,
}

/// Rotates `code − root` by an angle `θ ∼ U[0, θ_max]` toward a random
/// direction orthogonal to it, keeping the distance to the root. Root samples
/// are the root code itself.
pub fn add_spherical_noise(
    tree: &BinaryTree,
    samples_per_node: usize,
    theta_max: f64,
    rng: &mut Rng,
) -> Result<Vec<TreeSample>> {
    if samples_per_node == 0 {
        return Err(Error::Config("samples_per_node must be at least 1".into()));
    }
    if !(0.0..=std::f64::consts::PI).contains(&theta_max) {
        return Err(Error::Config(format!("theta_max must be in [0, π], got {theta_max}")));
    }
    let root = tree.code(0);
    let dim = root.len();
    let mut out = Vec::with_capacity(tree.len() * samples_per_node);
    for node in 0..tree.len() {
        let code = tree.code(node);
        let d: Vec<f64> = code.iter().zip(root).map(|(c, r)| c - r).collect();
        let dn = linalg::norm(&d);
        for _ in 0..samples_per_node {
            let (theta, x) = if dn == 0.0 {
                (0.0, code.to_vec())
            } else {
                let theta = rng.random::<f64>() * theta_max;
                let w = orthogonal_direction(&d, dn, dim, rng);
                let (c, s) = (theta.cos(), theta.sin());
                let x = (0..dim).map(|i| root[i] + d[i] * c + dn * w[i] * s).collect();
                (theta, x)
            };
            out.push(TreeSample {
                id: out.len(),
                base: node,
                depth: BinaryTree::node_depth(node),
                theta,
                split: Split::Train,
                x,
            });
        }
    }
    Ok(out)
}

fn orthogonal_direction(d: &[f64], dn: f64, dim: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let mut g: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let p = linalg::dot(&g, d) / (dn * dn);
        g.iter_mut().zip(d).for_each(|(gi, di)| *gi -= p * di);
        let gn = linalg::norm(&g);
        if gn > 1e-8 {
            g.iter_mut().for_each(|gi| *gi /= gn);
            return g;
        }
    }
}

/// Marks `round(test_fraction · N)` samples as test, chosen by a seeded shuffle.
pub fn assign_split(samples: &mut [TreeSample], test_fraction: f64, rng: &mut Rng) -> Result<()> {
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(Error::Config(format!("test fraction must be in [0, 1], got {test_fraction}")));
    }
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    idx.shuffle(rng);
    let n_test = (test_fraction * samples.len() as f64).round() as usize;
    for s in samples.iter_mut() {
        s.split = Split::Train;
    }
    for &i in &idx[..n_test] {
        samples[i].split = Split::Test;
    }
    Ok(())
}

/// Generation settings, echoed as metadata next to an exported dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub depth: usize,
    pub samples_per_node: usize,
    pub theta_max: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self { depth: 4, samples_per_node: 50, theta_max: DEFAULT_THETA_MAX, test_fraction: 0.1, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct TreeDataset {
    pub config: TreeConfig,
    pub tree: BinaryTree,
    pub samples: Vec<TreeSample>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeMetadata {
    pub schema_version: u32,
    #[serde(flatten)]
    pub config: TreeConfig,
    pub nodes: usize,
    pub samples: usize,
    pub train: usize,
    pub test: usize,
    pub rng: String,
}

impl TreeConfig {
    pub fn validate(&self) -> Result<()> {
        gen_binary_tree(self.depth)?;
        if self.samples_per_node == 0 {
            return Err(Error::Config("samples_per_node must be at least 1".into()));
        }
        if !(0.0..=std::f64::consts::PI).contains(&self.theta_max) {
            return Err(Error::Config(format!("theta_max must be in [0, π], got {}", self.theta_max)));
        }
        if !(0.0..=1.0).contains(&self.test_fraction) {
            return Err(Error::Config(format!("test fraction must be in [0, 1], got {}", self.test_fraction)));
        }
        Ok(())
    }
}

impl TreeDataset {
    pub fn generate(config: TreeConfig) -> Result<Self> {
        config.validate()?;
        let tree = gen_binary_tree(config.depth)?;
        let mut rng = crate::seeded_rng(config.seed);
        let mut samples = add_spherical_noise(&tree, config.samples_per_node, config.theta_max, &mut rng)?;
        assign_split(&mut samples, config.test_fraction, &mut rng)?;
        Ok(Self { config, tree, samples })
    }

    pub fn dim(&self) -> usize {
        self.tree.len()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &TreeSample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn metadata(&self) -> TreeMetadata {
        let test = self.split(Split::Test).count();
        TreeMetadata {
            schema_version: 1,
            config: self.config.clone(),
            nodes: self.tree.len(),
            samples: self.samples.len(),
            train: self.samples.len() - test,
            test,
            rng: crate::RNG_NAME.into(),
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "sample_id,base_node,depth,theta,split")?;
        for i in 0..self.dim() {
            write!(w, ",x_{i}")?;
        }
        writeln!(w)?;
        for s in &self.samples {
            write!(w, "{},{},{},{},{}", s.id, s.base, s.depth, s.theta, s.split.as_str())?;
            for v in &s.x {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn save(&self, csv_path: &Path, meta_path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(csv_path)?);
        self.write_csv(&mut f)?;
        f.flush()?;
        let meta = serde_json::to_string_pretty(&self.metadata())?;
        std::fs::write(meta_path, meta + "\n")?;
        Ok(())
    }

    /// Reads a dataset written by [`TreeDataset::write_csv`]. The tree depth
    /// is inferred from the number of coordinates.
    pub fn read_csv<R: BufRead>(r: R, config: Option<TreeConfig>) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse { line: 1, msg: "empty dataset".into() })?;
        let header = header?;
        let ncols = header.split(',').count();
        if ncols < 6 || !header.starts_with("sample_id,base_node,depth,theta,split,x_0") {
            return Err(Error::Parse { line: 1, msg: "unexpected header".into() });
        }
        let dim = ncols - 5;
        let depth = (dim + 1).trailing_zeros() as usize;
        if (1usize << depth) - 1 != dim {
            return Err(Error::Parse { line: 1, msg: format!("{dim} coordinates is not 2^d - 1") });
        }
        let tree = gen_binary_tree(depth)?;
        let mut samples = Vec::new();
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::Parse { line: i + 1, msg: msg.to_string() };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != ncols {
                return Err(bad("wrong number of fields"));
            }
            let split = match f[4] {
                "train" => Split::Train,
                "test" => Split::Test,
                _ => return Err(bad("split must be train or test")),
            };
            let x: std::result::Result<Vec<f64>, _> = f[5..].iter().map(|v| v.parse()).collect();
            samples.push(TreeSample {
                id: f[0].parse().map_err(|_| bad("bad sample_id"))?,
                base: f[1].parse().map_err(|_| bad("bad base_node"))?,
                depth: f[2].parse().map_err(|_| bad("bad depth"))?,
                theta: f[3].parse().map_err(|_| bad("bad theta"))?,
                split,
                x: x.map_err(|_| bad("bad coordinate"))?,
            });
        }
        let mut config = config.unwrap_or_default();
        config.depth = depth;
        Ok(Self { config, tree, samples })
    }
}

/// Words and `child → parent` hypernymy edges.
#[derive(Debug, Clone, Default)]
pub struct HypernymyGraph {
    words: Vec<String>,
    index: HashMap<String, usize>,
    edges: Vec<(usize, usize)>,
    /// Per word: every word it is related to in either direction.
    related: Vec<HashSet<usize>>,
    /// Per word: its hypernyms.
    targets: Vec<Vec<usize>>,
}

impl HypernymyGraph {
    fn intern(&mut self, w: &str) -> usize {
        if let Some(&i) = self.index.get(w) {
            return i;
        }
        let i = self.words.len();
        self.words.push(w.to_string());
        self.index.insert(w.to_string(), i);
        self.related.push(HashSet::new());
        self.targets.push(Vec::new());
        i
    }

    /// Adds an edge; self-loops and duplicates are ignored. Returns whether
    /// the edge was new.
    pub fn add_edge(&mut self, child: &str, parent: &str) -> bool {
        let (c, p) = (self.intern(child), self.intern(parent));
        if c == p || !self.related[c].insert(p) {
            return false;
        }
        self.related[p].insert(c);
        self.targets[c].push(p);
        self.edges.push((c, p));
        true
    }

    pub fn from_edges<'a>(edges: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let mut g = Self::default();
        for (c, p) in edges {
            g.add_edge(c, p);
        }
        g
    }

    pub fn num_words(&self) -> usize {
        self.words.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, i: usize) -> &str {
        &self.words[i]
    }

    pub fn index_of(&self, w: &str) -> Option<usize> {
        self.index.get(w).copied()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Hypernyms of `s`.
    pub fn targets(&self, s: usize) -> &[usize] {
        &self.targets[s]
    }

    /// Whether `a` and `b` are related in either direction.
    pub fn related(&self, a: usize, b: usize) -> bool {
        self.related[a].contains(&b)
    }

    /// Words that are neither `s` nor related to `s`.
    pub fn num_unrelated(&self, s: usize) -> usize {
        self.words.len() - 1 - self.related[s].len()
    }

    /// The word with no hypernyms and the most hyponyms.
    pub fn root(&self) -> Option<usize> {
        (0..self.words.len())
            .filter(|&i| self.targets[i].is_empty())
            .max_by_key(|&i| (self.related[i].len(), std::cmp::Reverse(i)))
    }

    /// Adds every implied `child → ancestor` edge.
    pub fn transitive_closure(&self) -> Self {
        let mut g = Self::default();
        for w in &self.words {
            g.intern(w);
        }
        for s in 0..self.words.len() {
            let mut seen = HashSet::new();
            let mut stack: Vec<usize> = self.targets[s].clone();
            let mut order = Vec::new();
            while let Some(t) = stack.pop() {
                if seen.insert(t) {
                    order.push(t);
                    stack.extend(self.targets[t].iter().copied());
                }
            }
            order.sort_unstable();
            for t in order {
                let (c, p) = (self.words[s].clone(), self.words[t].clone());
                g.add_edge(&c, &p);
            }
        }
        g
    }

    pub fn parse<R: BufRead>(r: R) -> Result<Self> {
        let mut g = Self::default();
        let mut seen_line = false;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let t = line.trim_end_matches(['\r', '\n']);
            if t.trim().is_empty() || t.trim_start().starts_with('#') {
                continue;
            }
            seen_line = true;
            let mut parts = t.split('\t');
            let (c, p) = match (parts.next(), parts.next(), parts.next()) {
                (Some(c), Some(p), None) if !c.trim().is_empty() && !p.trim().is_empty() => {
                    (c.trim(), p.trim())
                }
                _ => {
                    return Err(Error::Parse {
                        line: i + 1,
                        msg: "expected `child<TAB>parent`".into(),
                    })
                }
            };
            g.add_edge(c, p);
        }
        if !seen_line {
            return Err(Error::Parse { line: 0, msg: "edge list is empty".into() });
        }
        if g.edges.is_empty() {
            return Err(Error::Parse { line: 0, msg: "edge list has no usable edges".into() });
        }
        Ok(g)
    }
}

pub fn load_hypernymy(path: &Path) -> Result<HypernymyGraph> {
    let f = std::fs::File::open(path)?;
    HypernymyGraph::parse(std::io::BufReader::new(f))
}

/// `k` words drawn uniformly from those unrelated to `s`, by rejection.
/// Returns an empty list (and logs a warning) when there are none.
pub fn negative_sample(graph: &HypernymyGraph, s: usize, k: usize, rng: &mut Rng) -> Vec<usize> {
    if graph.num_unrelated(s) == 0 {
        log::warn!("word `{}` is related to every other word; no negatives", graph.word(s));
        return Vec::new();
    }
    let v = graph.num_words();
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        let t = rng.random_range(0..v);
        if t != s && !graph.related(s, t) {
            out.push(t);
        }
    }
    out
}
