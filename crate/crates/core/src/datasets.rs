//! MovieLens ingestion, item-similarity graphs and regression tasks.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_shift_from_adjacency, Graph, GraphSignal, Matrix, Normalization};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub user: u32,
    pub item: u32,
    pub rating: f64,
    pub timestamp: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatingsTable {
    pub entries: Vec<Rating>,
    pub user_count: usize,
    pub item_count: usize,
}

impl RatingsTable {
    pub fn new(entries: Vec<Rating>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        let mut users = HashSet::new();
        let mut items = HashSet::new();
        for (k, r) in entries.iter().enumerate() {
            if !(1.0..=5.0).contains(&r.rating) {
                return Err(Error::Parse {
                    line: k + 1,
                    message: format!("rating {} outside [1, 5]", r.rating),
                });
            }
            if !seen.insert((r.user, r.item)) {
                return Err(Error::Parse {
                    line: k + 1,
                    message: format!("duplicate rating for user {} item {}", r.user, r.item),
                });
            }
            users.insert(r.user);
            items.insert(r.item);
        }
        Ok(Self {
            entries,
            user_count: users.len(),
            item_count: items.len(),
        })
    }

    /// `user -> rating` for one item.
    pub fn item_ratings(&self, item: u32) -> BTreeMap<u32, f64> {
        self.entries
            .iter()
            .filter(|r| r.item == item)
            .map(|r| (r.user, r.rating))
            .collect()
    }

    /// Items ordered by number of ratings, most-rated first (ties by id).
    pub fn most_rated_items(&self, k: usize) -> Vec<u32> {
        let mut counts: HashMap<u32, usize> = HashMap::new();
        for r in &self.entries {
            *counts.entry(r.item).or_default() += 1;
        }
        let mut items: Vec<(u32, usize)> = counts.into_iter().collect();
        items.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        items.into_iter().take(k).map(|(i, _)| i).collect()
    }

    /// Serializes in the tab-separated `u.data` format.
    pub fn to_udata(&self) -> String {
        let mut out = String::new();
        for r in &self.entries {
            out.push_str(&format!("{}\t{}\t{}\t{}\n", r.user, r.item, r.rating, r.timestamp));
        }
        out
    }
}

/// Parses `user item rating timestamp` lines; fields are tab or space separated.
pub fn parse_movielens_str(text: &str) -> Result<RatingsTable> {
    let mut entries = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let lineno = k + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = |message: String| Error::Parse { line: lineno, message };
        if fields.len() != 4 {
            return Err(bad(format!("expected 4 fields, found {}", fields.len())));
        }
        let user = fields[0].parse().map_err(|_| bad(format!("bad user id {:?}", fields[0])))?;
        let item = fields[1].parse().map_err(|_| bad(format!("bad item id {:?}", fields[1])))?;
        let rating: f64 = fields[2].parse().map_err(|_| bad(format!("bad rating {:?}", fields[2])))?;
        let timestamp = fields[3]
            .parse()
            .map_err(|_| bad(format!("bad timestamp {:?}", fields[3])))?;
        if !(1.0..=5.0).contains(&rating) {
            return Err(bad(format!("rating {rating} outside [1, 5]")));
        }
        entries.push(Rating {
            user,
            item,
            rating,
            timestamp,
        });
    }
    RatingsTable::new(entries).map_err(|e| match e {
        // re-map entry index to the physical line
        Error::Parse { line, message } => Error::Parse {
            line: nth_data_line(text, line),
            message,
        },
        other => other,
    })
}

fn nth_data_line(text: &str, n: usize) -> usize {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .nth(n - 1)
        .map_or(n, |(k, _)| k + 1)
}

pub fn parse_movielens(path: impl AsRef<Path>) -> Result<RatingsTable> {
    parse_movielens_str(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativePolicy {
    Zero,
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityGraphConfig {
    pub min_common: usize,
    pub top_k: Option<usize>,
    pub negative_policy: NegativePolicy,
}

impl Default for SimilarityGraphConfig {
    fn default() -> Self {
        Self {
            min_common: 2,
            top_k: Some(40),
            negative_policy: NegativePolicy::Zero,
        }
    }
}

impl SimilarityGraphConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_common < 2 {
            return Err(Error::param("min_common must be >= 2"));
        }
        if self.top_k == Some(0) {
            return Err(Error::param("top_k must be >= 1"));
        }
        Ok(())
    }
}

/// Pearson correlation of two equally long samples; `None` if either is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Item-item graph weighted by Pearson correlation over common raters.
///
/// Node `i` is `movies[i]` and carries its id as label. Pairs with fewer than
/// `min_common` co-raters, or with a constant co-rating vector, get weight 0.
pub fn pearson_similarity_graph(table: &RatingsTable, movies: &[u32], cfg: &SimilarityGraphConfig) -> Result<Graph> {
    cfg.validate()?;
    if movies.is_empty() {
        return Err(Error::param("movie list is empty"));
    }
    let ratings: Vec<BTreeMap<u32, f64>> = movies.iter().map(|&m| table.item_ratings(m)).collect();
    if let Some(k) = ratings.iter().position(BTreeMap::is_empty) {
        return Err(Error::Data(format!("movie {} has no ratings", movies[k])));
    }
    let n = movies.len();
    let mut w = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let (mut a, mut b) = (Vec::new(), Vec::new());
            for (user, ri) in &ratings[i] {
                if let Some(rj) = ratings[j].get(user) {
                    a.push(*ri);
                    b.push(*rj);
                }
            }
            if a.len() < cfg.min_common {
                continue;
            }
            let weight = match (pearson(&a, &b), cfg.negative_policy) {
                (None, _) => 0.0,
                (Some(r), NegativePolicy::Zero) => r.max(0.0),
                (Some(r), NegativePolicy::Absolute) => r.abs(),
            };
            w[(i, j)] = weight;
            w[(j, i)] = weight;
        }
    }
    if let Some(k) = cfg.top_k {
        w = keep_top_k(&w, k);
    }
    let g = build_shift_from_adjacency(&w, Normalization::None)?;
    Graph::new(g.shift().clone(), Some(movies.iter().map(u32::to_string).collect()))
}

/// Keeps each row's `k` largest weights, then symmetrizes by max.
fn keep_top_k(w: &Matrix, k: usize) -> Matrix {
    let n = w.nrows();
    let mut kept = Matrix::zeros(n, n);
    for i in 0..n {
        let mut cols: Vec<usize> = (0..n).filter(|&j| j != i && w[(i, j)] > 0.0).collect();
        cols.sort_by(|&a, &b| w[(i, b)].total_cmp(&w[(i, a)]).then(a.cmp(&b)));
        for &j in cols.iter().take(k) {
            kept[(i, j)] = w[(i, j)];
        }
    }
    Matrix::from_fn(n, n, |i, j| kept[(i, j)].max(kept[(j, i)]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub input: GraphSignal,
    pub target: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTask {
    pub graph: Graph,
    pub samples: Vec<Sample>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl RegressionTask {
    pub fn new(graph: Graph, samples: Vec<Sample>, train: Vec<usize>, test: Vec<usize>) -> Result<Self> {
        let task = Self {
            graph,
            samples,
            train,
            test,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.graph.n();
        if let Some(k) = self.samples.iter().position(|s| s.input.len() != n) {
            return Err(Error::dim(format!("sample {k} has length != {n}")));
        }
        let mut seen = vec![false; self.samples.len()];
        for &k in self.train.iter().chain(&self.test) {
            if k >= seen.len() || std::mem::replace(&mut seen[k], true) {
                return Err(Error::Data(format!("split index {k} invalid or repeated")));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Data("splits do not cover every sample".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let task: Self = serde_json::from_str(s)?;
        task.validate()?;
        Ok(task)
    }

    pub fn train_samples(&self) -> impl Iterator<Item = &Sample> {
        self.train.iter().map(|&k| &self.samples[k])
    }

    pub fn test_samples(&self) -> impl Iterator<Item = &Sample> {
        self.test.iter().map(|&k| &self.samples[k])
    }
}

/// Seeded 90/10 split: `floor(n / 10)` test samples, the rest train.
pub fn split_90_10(count: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..count).collect();
    idx.shuffle(&mut rng::seeded(seed));
    let test = idx.split_off(count - count / 10);
    (idx, test)
}

/// One sample per user who rated `target_item`: the input holds that user's
/// ratings on the graph's movies (0 where unrated, target zeroed) and the
/// target is their rating of `target_item`.
///
/// Users with fewer than `min_ratings_per_user` ratings on the other movies
/// are skipped.
pub fn build_rating_task(
    table: &RatingsTable,
    graph: &Graph,
    target_item: u32,
    min_ratings_per_user: usize,
    seed: u64,
) -> Result<RegressionTask> {
    let labels = graph
        .labels()
        .ok_or_else(|| Error::Data("graph nodes carry no item ids".into()))?;
    let node_of: HashMap<u32, usize> = labels
        .iter()
        .enumerate()
        .filter_map(|(i, l)| l.parse::<u32>().ok().map(|id| (id, i)))
        .collect();
    let target_node = *node_of
        .get(&target_item)
        .ok_or_else(|| Error::Data(format!("target item {target_item} is not a graph node")))?;
    let mut by_user: BTreeMap<u32, Vec<(usize, f64)>> = BTreeMap::new();
    for r in &table.entries {
        if let Some(&i) = node_of.get(&r.item) {
            by_user.entry(r.user).or_default().push((i, r.rating));
        }
    }
    let n = graph.n();
    let mut samples = Vec::new();
    for ratings in by_user.values() {
        let Some(&(_, target)) = ratings.iter().find(|(i, _)| *i == target_node) else {
            continue;
        };
        let others = ratings.len() - 1;
        if others < min_ratings_per_user {
            continue;
        }
        let mut input = vec![0.0; n];
        let mut mask = BTreeSet::new();
        for &(i, v) in ratings {
            if i != target_node {
                input[i] = v;
                mask.insert(i);
            }
        }
        samples.push(Sample {
            input: GraphSignal(input),
            target,
            mask: Some(mask.into_iter().collect()),
        });
    }
    if samples.is_empty() {
        return Err(Error::Data(format!("no qualifying user rated item {target_item}")));
    }
    let (train, test) = split_90_10(samples.len(), seed);
    RegressionTask::new(graph.clone(), samples, train, test)
}

/// Source localization: input `S^t δ_s` for a random source `s` and random
/// `t <= diffusion_steps`; the target is `s` as a real number.
pub fn synthetic_source_localization(graph: &Graph, diffusion_steps: usize, samples: usize, seed: u64) -> Result<RegressionTask> {
    if samples == 0 {
        return Err(Error::param("samples must be >= 1"));
    }
    let n = graph.n();
    let s = graph.shift();
    let mut rng = rng::seeded(seed);
    let mut out = Vec::with_capacity(samples);
    for _ in 0..samples {
        let source = rng.random_range(0..n);
        let steps = rng.random_range(0..=diffusion_steps);
        let mut x = nalgebra::DVector::zeros(n);
        x[source] = 1.0;
        for _ in 0..steps {
            x = s * x;
        }
        out.push(Sample {
            input: GraphSignal(x.iter().copied().collect()),
            target: source as f64,
            mask: None,
        });
    }
    let (train, test) = split_90_10(samples, rng::derive_seed(seed, &[1]));
    RegressionTask::new(graph.clone(), out, train, test)
}
