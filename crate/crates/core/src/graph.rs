//! Graphs, shift operators, spectral tools and perturbation realization.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub type Matrix = DMatrix<f64>;

/// Absolute tolerance for symmetry of constructed shifts.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Largest absolute entry of `m - m^T`.
pub fn asymmetry(m: &Matrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

fn check_square(m: &Matrix) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(())
}

fn check_finite(m: &Matrix, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn check_symmetric(m: &Matrix, tol: f64) -> Result<()> {
    let deviation = asymmetry(m);
    if deviation > tol {
        return Err(Error::Asymmetric { deviation });
    }
    Ok(())
}

/// A graph represented by its dense symmetric shift operator.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    shift: Matrix,
    labels: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct GraphDoc {
    n: usize,
    shift: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<String>>,
}

impl Graph {
    pub fn new(shift: Matrix, labels: Option<Vec<String>>) -> Result<Self> {
        check_square(&shift)?;
        if shift.nrows() == 0 {
            return Err(Error::param("graph must have at least one node"));
        }
        check_finite(&shift, "shift operator")?;
        check_symmetric(&shift, SYMMETRY_TOL)?;
        if let Some(l) = &labels {
            if l.len() != shift.nrows() {
                return Err(Error::dim(format!(
                    "{} labels for {} nodes",
                    l.len(),
                    shift.nrows()
                )));
            }
        }
        Ok(Self { shift, labels })
    }

    pub fn n(&self) -> usize {
        self.shift.nrows()
    }

    pub fn shift(&self) -> &Matrix {
        &self.shift
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    /// Index of the node carrying `label`.
    pub fn node_of(&self, label: &str) -> Option<usize> {
        self.labels.as_ref()?.iter().position(|l| l == label)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_doc())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: GraphDoc = serde_json::from_str(s)?;
        Self::from_doc(doc)
    }

    fn to_doc(&self) -> GraphDoc {
        GraphDoc {
            n: self.n(),
            shift: matrix_to_rows(&self.shift),
            labels: self.labels.clone(),
        }
    }

    fn from_doc(doc: GraphDoc) -> Result<Self> {
        if doc.shift.len() != doc.n {
            return Err(Error::dim(format!(
                "declared n={} but shift has {} rows",
                doc.n,
                doc.shift.len()
            )));
        }
        Self::new(matrix_from_rows(&doc.shift)?, doc.labels)
    }
}

impl Serialize for Graph {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_doc().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Graph {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = GraphDoc::deserialize(d)?;
        Graph::from_doc(doc).map_err(serde::de::Error::custom)
    }
}

/// Row-major nested vectors.
pub fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::dim("ragged matrix rows"));
    }
    Ok(Matrix::from_fn(n, m, |i, j| rows[i][j]))
}

/// A real signal with one value per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GraphSignal(pub Vec<f64>);

impl GraphSignal {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("graph signal"));
        }
        Ok(Self(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    None,
    SymmetricDegree,
}

/// Builds a graph from a nonnegative symmetric adjacency with zero diagonal.
///
/// With [`Normalization::SymmetricDegree`] the shift is `D^{-1/2} W D^{-1/2}`;
/// isolated nodes keep an all-zero row.
pub fn build_shift_from_adjacency(w: &Matrix, normalization: Normalization) -> Result<Graph> {
    check_square(w)?;
    check_finite(w, "adjacency")?;
    check_symmetric(w, SYMMETRY_TOL)?;
    for i in 0..w.nrows() {
        for j in 0..w.ncols() {
            let v = w[(i, j)];
            if v < 0.0 {
                return Err(Error::NegativeWeight {
                    row: i,
                    col: j,
                    value: v,
                });
            }
        }
        if w[(i, i)] != 0.0 {
            return Err(Error::param(format!("nonzero diagonal at node {i}")));
        }
    }
    let shift = match normalization {
        Normalization::None => w.clone(),
        Normalization::SymmetricDegree => {
            let inv_sqrt: Vec<f64> = w
                .row_iter()
                .map(|r| {
                    let d = r.sum();
                    if d > 0.0 {
                        1.0 / d.sqrt()
                    } else {
                        0.0
                    }
                })
                .collect();
            Matrix::from_fn(w.nrows(), w.ncols(), |i, j| {
                inv_sqrt[i] * w[(i, j)] * inv_sqrt[j]
            })
        }
    };
    Graph::new(shift, None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum RandomGraphModel {
    ErdosRenyi { p: f64 },
    Sbm { blocks: usize, p_in: f64, p_out: f64 },
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::param(format!("{name}={p} outside [0, 1]")));
    }
    Ok(())
}

/// Samples an unweighted undirected graph; identical inputs give identical graphs.
pub fn random_graph(model: &RandomGraphModel, n: usize, seed: u64) -> Result<Graph> {
    if n == 0 {
        return Err(Error::param("n must be at least 1"));
    }
    let block_of: Box<dyn Fn(usize) -> usize> = match *model {
        RandomGraphModel::ErdosRenyi { p } => {
            check_probability("p", p)?;
            Box::new(|_| 0)
        }
        RandomGraphModel::Sbm {
            blocks,
            p_in,
            p_out,
        } => {
            check_probability("p_in", p_in)?;
            check_probability("p_out", p_out)?;
            if blocks == 0 {
                return Err(Error::param("sbm needs at least one block"));
            }
            Box::new(move |i| i * blocks / n)
        }
    };
    let prob = |i: usize, j: usize| match *model {
        RandomGraphModel::ErdosRenyi { p } => p,
        RandomGraphModel::Sbm { p_in, p_out, .. } => {
            if block_of(i) == block_of(j) {
                p_in
            } else {
                p_out
            }
        }
    };
    let mut rng = rng::seeded(seed);
    let mut w = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let u: f64 = rng.random();
            if u < prob(i, j) {
                w[(i, j)] = 1.0;
                w[(j, i)] = 1.0;
            }
        }
    }
    Graph::new(w, None)
}

/// Largest singular value.
pub fn spectral_norm(m: &Matrix) -> Result<f64> {
    check_finite(m, "spectral_norm input")?;
    if m.is_empty() {
        return Ok(0.0);
    }
    if m.is_square() && asymmetry(m) == 0.0 {
        let eig = SymmetricEigen::new(m.clone());
        return Ok(eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs())));
    }
    let svd = m.clone().svd(false, false);
    Ok(svd.singular_values.iter().fold(0.0f64, |a, &v| a.max(v)))
}

/// Largest eigenvalue modulus of a general square matrix.
pub fn spectral_radius(m: &Matrix) -> Result<f64> {
    check_square(m)?;
    check_finite(m, "spectral_radius input")?;
    if asymmetry(m) == 0.0 {
        return spectral_norm(m);
    }
    let eigs = m.clone().complex_eigenvalues();
    Ok(eigs.iter().fold(0.0f64, |a, z| a.max(z.norm())))
}

/// `S = V diag(eigenvalues) V^T` with eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: Matrix,
}

impl SpectralDecomposition {
    pub fn reconstruct(&self) -> Matrix {
        &self.eigenvectors
            * Matrix::from_diagonal(&self.eigenvalues)
            * self.eigenvectors.transpose()
    }
}

pub fn eigendecompose_symmetric(s: &Matrix) -> Result<SpectralDecomposition> {
    check_square(s)?;
    check_finite(s, "eigendecomposition input")?;
    check_symmetric(s, 1e-10)?;
    let sym = (s + s.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let n = s.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let eigenvectors = Matrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(SpectralDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    Additive,
    Multiplicative,
    Mixed,
}

impl PerturbationKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PerturbationKind::Additive => "additive",
            PerturbationKind::Multiplicative => "multiplicative",
            PerturbationKind::Mixed => "mixed",
        }
    }

    /// Splits a total size `epsilon` into `(||T0||, ||T1||)` targets.
    pub fn split(&self, epsilon: f64) -> (f64, f64) {
        match self {
            PerturbationKind::Additive => (epsilon, 0.0),
            PerturbationKind::Multiplicative => (0.0, epsilon),
            PerturbationKind::Mixed => (epsilon / 2.0, epsilon / 2.0),
        }
    }
}

impl std::str::FromStr for PerturbationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "additive" => Ok(Self::Additive),
            "multiplicative" => Ok(Self::Multiplicative),
            "mixed" => Ok(Self::Mixed),
            other => Err(Error::param(format!("unknown perturbation kind {other:?}"))),
        }
    }
}

/// Target sizes for `T(S) = T0 + T1 S`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    pub t0_norm: f64,
    pub t1_norm: f64,
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn new(kind: PerturbationKind, t0_norm: f64, t1_norm: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            kind,
            t0_norm,
            t1_norm,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_epsilon(kind: PerturbationKind, epsilon: f64, seed: u64) -> Result<Self> {
        let (t0, t1) = kind.split(epsilon);
        Self::new(kind, t0, t1, seed)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("t0_norm", self.t0_norm), ("t1_norm", self.t1_norm)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::param(format!("{name}={v} must be finite and >= 0")));
            }
        }
        match self.kind {
            PerturbationKind::Additive if self.t1_norm != 0.0 => {
                Err(Error::param("additive perturbation requires t1_norm = 0"))
            }
            PerturbationKind::Multiplicative if self.t0_norm != 0.0 => {
                Err(Error::param("multiplicative perturbation requires t0_norm = 0"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PerturbationRealization {
    pub t0: Matrix,
    pub t1: Matrix,
    pub perturbed_shift: Matrix,
}

fn symmetric_gaussian(n: usize, target: f64, rng: &mut rng::Rng) -> Result<Matrix> {
    let g = Matrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    if target == 0.0 {
        return Ok(Matrix::zeros(n, n));
    }
    let mut sym = Matrix::from_fn(n, n, |i, j| 0.5 * (g[(i, j)] + g[(j, i)]));
    let norm = spectral_norm(&sym)?;
    if norm == 0.0 {
        return Err(Error::Data("degenerate perturbation draw".into()));
    }
    sym *= target / norm;
    Ok(sym)
}

/// Draws symmetric Gaussian `T0`, `T1` rescaled to their target spectral norms.
pub fn realize_perturbation(spec: &PerturbationSpec, g: &Graph) -> Result<PerturbationRealization> {
    spec.validate()?;
    let n = g.n();
    let mut rng = rng::seeded(spec.seed);
    // Both draws always consume the stream so T1 does not depend on t0_norm.
    let t0 = symmetric_gaussian(n, spec.t0_norm, &mut rng)?;
    let t1 = symmetric_gaussian(n, spec.t1_norm, &mut rng)?;
    let perturbed_shift = apply_perturbation(g.shift(), &t0, &t1)?;
    Ok(PerturbationRealization {
        t0,
        t1,
        perturbed_shift,
    })
}

/// `S + T0 + T1 S`.
pub fn apply_perturbation(s: &Matrix, t0: &Matrix, t1: &Matrix) -> Result<Matrix> {
    check_square(s)?;
    if t0.shape() != s.shape() || t1.shape() != s.shape() {
        return Err(Error::dim(format!(
            "shift {:?}, t0 {:?}, t1 {:?}",
            s.shape(),
            t0.shape(),
            t1.shape()
        )));
    }
    Ok(s + t0 + t1 * s)
}

/// Shift of the path graph on `n` nodes.
pub fn path_graph(n: usize) -> Graph {
    let w = Matrix::from_fn(n, n, |i, j| if i.abs_diff(j) == 1 { 1.0 } else { 0.0 });
    Graph::new(w, None).expect("path adjacency is valid")
}
