//! Polynomial spectral filters and their stability certificates.
//!
//! A filter `f(λ) = Σ h_k λ^k` used in the first CNN layer acts on each node's
//! diffusion sequence through a circulant matrix. Output position `m` of that
//! layer is the graph filter `p_m(S)` whose coefficients are the cyclic shift
//! `h_{(k-m) mod (a+1)}`, so stability constants are taken over every `p_m`.

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{eigendecompose_symmetric, Matrix};

/// Default number of subintervals of the spectral grid.
pub const DEFAULT_GRID: usize = 2048;
/// Default relative widening of the spectral domain beyond `||S||`.
pub const DEFAULT_OMEGA_MARGIN: f64 = 0.05;
/// Relative eigenvalue gap under which divided differences fall back to `f'`.
pub const TIE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PolyFilter {
    coeffs: Vec<f64>,
}

impl PolyFilter {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::param("filter needs at least one coefficient"));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("filter coefficients"));
        }
        Ok(Self { coeffs })
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Polynomial order `a` (number of taps minus one).
    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn taps(&self) -> usize {
        self.coeffs.len()
    }

    /// Zero-pads to `len` taps.
    pub fn padded(&self, len: usize) -> Result<Self> {
        if len < self.coeffs.len() {
            return Err(Error::param(format!(
                "{} taps do not fit in length {len}",
                self.coeffs.len()
            )));
        }
        let mut coeffs = self.coeffs.clone();
        coeffs.resize(len, 0.0);
        Ok(Self { coeffs })
    }

    pub fn eval(&self, lambda: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &h| acc * lambda + h)
    }

    pub fn eval_complex(&self, z: Complex64) -> Complex64 {
        self.coeffs
            .iter()
            .rev()
            .fold(Complex64::new(0.0, 0.0), |acc, &h| acc * z + h)
    }

    /// `f'(λ)` from the coefficients.
    pub fn derivative(&self, lambda: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (k, &h)| acc * lambda + k as f64 * h)
    }

    /// `Σ h_k S^k` by iterated multiplication.
    pub fn eval_matrix(&self, s: &Matrix) -> Result<Matrix> {
        if !s.is_square() {
            return Err(Error::NotSquare {
                rows: s.nrows(),
                cols: s.ncols(),
            });
        }
        let n = s.nrows();
        let mut power = Matrix::identity(n, n);
        let mut out = Matrix::zeros(n, n);
        for (k, &h) in self.coeffs.iter().enumerate() {
            if k > 0 {
                power = &power * s;
            }
            out += &power * h;
        }
        Ok(out)
    }

    /// Cyclic coefficient shift: `h'_k = h_{(k-m) mod (a+1)}`.
    pub fn cyclic_shift(&self, m: usize) -> Self {
        let len = self.coeffs.len();
        let m = m % len;
        let coeffs = (0..len).map(|k| self.coeffs[(k + len - m) % len]).collect();
        Self { coeffs }
    }

    /// All shifts `p_0 .. p_a`.
    pub fn shifts(&self) -> impl Iterator<Item = PolyFilter> + '_ {
        (0..self.taps()).map(move |m| self.cyclic_shift(m))
    }

    /// The closed-form shift polynomial exactly as it is commonly printed,
    /// `λ^m f(λ) - (λ^{a+1} - 1) Σ_{r=0}^{m} h_{a-r} λ^{m-r}`.
    ///
    /// Diagnostic only: it disagrees with [`PolyFilter::cyclic_shift`] (it does
    /// not reduce to `f` at `m = 0`) and is never used for certification.
    pub fn printed_shift_form(&self, m: usize) -> Self {
        let a = self.order();
        let mut out = vec![0.0; a + m + 2];
        for (k, &h) in self.coeffs.iter().enumerate() {
            out[k + m] += h;
        }
        for r in 0..=m.min(a) {
            let h = self.coeffs[a - r];
            let deg = m - r;
            out[deg + a + 1] -= h;
            out[deg] += h;
        }
        while out.len() > 1 && out.last() == Some(&0.0) {
            out.pop();
        }
        Self { coeffs: out }
    }
}

/// A closed real interval of candidate eigenvalues, sampled on a uniform grid.
///
/// `grid_points` is the number of equal subintervals; evaluation happens at
/// the `grid_points + 1` nodes including both endpoints, so doubling it
/// refines the previous grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Omega {
    pub lo: f64,
    pub hi: f64,
    pub grid_points: usize,
}

impl Omega {
    pub fn new(lo: f64, hi: f64, grid_points: usize) -> Result<Self> {
        let omega = Self { lo, hi, grid_points };
        omega.validate()?;
        Ok(omega)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite()) || self.lo >= self.hi {
            return Err(Error::param(format!(
                "omega [{}, {}] must satisfy lo < hi",
                self.lo, self.hi
            )));
        }
        if self.grid_points < 2 {
            return Err(Error::param("omega needs grid_points >= 2"));
        }
        Ok(())
    }

    /// `[-(1+margin) r, (1+margin) r]`, or `[-1, 1]` when `r = 0`.
    pub fn covering(radius: f64, margin: f64, grid_points: usize) -> Result<Self> {
        let half = if radius > 0.0 {
            (1.0 + margin) * radius
        } else {
            1.0
        };
        Self::new(-half, half, grid_points)
    }

    pub fn covers(&self, radius: f64) -> bool {
        self.lo <= -radius && radius <= self.hi
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        let g = self.grid_points;
        let width = self.hi - self.lo;
        (0..=g).map(move |j| {
            if j == g {
                self.hi
            } else {
                self.lo + width * (j as f64 / g as f64)
            }
        })
    }

    pub fn node_count(&self) -> usize {
        self.grid_points + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    #[serde(rename = "L0")]
    pub l0: f64,
    #[serde(rename = "L1")]
    pub l1: f64,
    pub grid_points: usize,
}

impl LipschitzEstimate {
    /// Elementwise maximum of two estimates.
    pub fn max(self, other: Self) -> Self {
        Self {
            l0: self.l0.max(other.l0),
            l1: self.l1.max(other.l1),
            grid_points: self.grid_points.max(other.grid_points),
        }
    }
}

/// Grid estimate of `sup |p_m'(λ)|` and `sup |λ p_m'(λ)|` over `omega`.
pub fn estimate_lipschitz(f: &PolyFilter, omega: &Omega, include_shifts: bool) -> LipschitzEstimate {
    let shifts = if include_shifts { f.taps() } else { 1 };
    let mut l0 = 0.0f64;
    let mut l1 = 0.0f64;
    for m in 0..shifts {
        let p = f.cyclic_shift(m);
        for lambda in omega.nodes() {
            let d = p.derivative(lambda).abs();
            l0 = l0.max(d);
            l1 = l1.max((lambda * p.derivative(lambda)).abs());
        }
    }
    LipschitzEstimate {
        l0,
        l1,
        grid_points: omega.grid_points,
    }
}

/// Estimate over a bank of filters, each padded to `len` taps.
pub fn estimate_bank(filters: &[PolyFilter], len: usize, omega: &Omega) -> Result<LipschitzEstimate> {
    let mut est = LipschitzEstimate {
        l0: 0.0,
        l1: 0.0,
        grid_points: omega.grid_points,
    };
    for f in filters {
        est = est.max(estimate_lipschitz(&f.padded(len)?, omega, true));
    }
    Ok(est)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certification {
    pub pass: bool,
    pub estimate: LipschitzEstimate,
}

/// Passes when every cyclic shift stays under both targets on the grid.
pub fn certify_filter(f: &PolyFilter, omega: &Omega, l0_max: f64, l1_max: f64) -> Result<Certification> {
    if !(l0_max >= 0.0 && l1_max >= 0.0) {
        return Err(Error::param("certification targets must be >= 0"));
    }
    let estimate = estimate_lipschitz(f, omega, true);
    Ok(Certification {
        pass: estimate.l0 <= l0_max && estimate.l1 <= l1_max,
        estimate,
    })
}

/// JSON form of a certification result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    #[serde(rename = "L0")]
    pub l0: f64,
    #[serde(rename = "L1")]
    pub l1: f64,
    pub pass: bool,
    pub omega: [f64; 2],
}

impl CertificationReport {
    pub fn new(cert: &Certification, omega: &Omega) -> Self {
        Self {
            l0: cert.estimate.l0,
            l1: cert.estimate.l1,
            pass: cert.pass,
            omega: [omega.lo, omega.hi],
        }
    }
}

/// `Σ h_k C^k` with `C e_i = e_{i+1 mod (a+1)}`; entry `(r, c)` is
/// `h_{(r-c) mod (a+1)}`, so column `m` holds the coefficients of `p_m`.
pub fn circulant_from_coeffs(f: &PolyFilter) -> Matrix {
    let len = f.taps();
    let h = f.coeffs();
    Matrix::from_fn(len, len, |r, c| h[(r + len - c) % len])
}

/// `f(ω^k)` for `ω = exp(2πi/(a+1))`, the spectrum of [`circulant_from_coeffs`].
pub fn circulant_eigenvalues(f: &PolyFilter) -> Vec<Complex64> {
    let len = f.taps();
    (0..len)
        .map(|k| {
            let theta = 2.0 * std::f64::consts::PI * k as f64 / len as f64;
            f.eval_complex(Complex64::from_polar(1.0, theta))
        })
        .collect()
}

/// Fréchet derivative of `S ↦ f(S)` at symmetric `S` in direction `xi`, via
/// divided differences of the eigenvalues.
pub fn frechet_derivative_poly(f: &PolyFilter, s: &Matrix, xi: &Matrix) -> Result<Matrix> {
    if xi.shape() != s.shape() {
        return Err(Error::dim(format!(
            "direction {:?} vs shift {:?}",
            xi.shape(),
            s.shape()
        )));
    }
    let dec = eigendecompose_symmetric(s)?;
    let lam = &dec.eigenvalues;
    let v = &dec.eigenvectors;
    let n = lam.len();
    let fl: DVector<f64> = lam.map(|l| f.eval(l));
    let z = Matrix::from_fn(n, n, |r, c| {
        let (lr, lc) = (lam[r], lam[c]);
        if (lr - lc).abs() <= TIE_TOL * (1.0 + lr.abs()) {
            f.derivative(0.5 * (lr + lc))
        } else {
            (fl[r] - fl[c]) / (lr - lc)
        }
    });
    let rotated = v.transpose() * xi * v;
    Ok(v * z.component_mul(&rotated) * v.transpose())
}

/// Central difference `(f(S + tΞ) - f(S - tΞ)) / 2t`.
pub fn frechet_fd_oracle(f: &PolyFilter, s: &Matrix, xi: &Matrix, t: f64) -> Result<Matrix> {
    if !(t > 0.0) {
        return Err(Error::param("finite-difference step must be > 0"));
    }
    if xi.shape() != s.shape() {
        return Err(Error::dim("direction and shift differ in shape"));
    }
    let plus = f.eval_matrix(&(s + xi * t))?;
    let minus = f.eval_matrix(&(s - xi * t))?;
    Ok((plus - minus) / (2.0 * t))
}

/// First-order stability bound `C0 ||T0|| + C1 ||T1||` with
/// `C_i = N sqrt(a+1) L_i`, optionally scaled by deeper-layer norms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityBound {
    pub c0: f64,
    pub c1: f64,
    pub total: f64,
    pub layer_product: f64,
}

pub fn stability_bound(n: usize, a: usize, l0: f64, l1: f64, t0_norm: f64, t1_norm: f64) -> Result<StabilityBound> {
    if n == 0 {
        return Err(Error::param("node count must be >= 1"));
    }
    for (name, v) in [("L0", l0), ("L1", l1), ("t0_norm", t0_norm), ("t1_norm", t1_norm)] {
        if !(v >= 0.0) {
            return Err(Error::param(format!("{name}={v} must be >= 0")));
        }
    }
    let scale = n as f64 * ((a + 1) as f64).sqrt();
    let c0 = scale * l0;
    let c1 = scale * l1;
    Ok(StabilityBound {
        c0,
        c1,
        total: c0 * t0_norm + c1 * t1_norm,
        layer_product: 1.0,
    })
}

/// Scales a first-layer bound by the product of deeper-layer operator norms.
pub fn multilayer_bound(base: &StabilityBound, layer_norms: &[f64]) -> Result<StabilityBound> {
    if let Some(bad) = layer_norms.iter().find(|b| !(**b >= 0.0)) {
        return Err(Error::param(format!("layer norm {bad} must be >= 0")));
    }
    let product: f64 = layer_norms.iter().product();
    Ok(StabilityBound {
        total: base.total * product,
        layer_product: base.layer_product * product,
        ..*base
    })
}
