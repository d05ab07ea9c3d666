//! Hypersphere embeddings and temperature-scaled similarities.
//!
//! Embeddings are stored with unit norm. The temperature is applied when two
//! embeddings are compared, so a [`Similarity`] of unit vectors `a`, `b` is
//! `a.b / t`, and every exponent `f(x).f(x')` in the losses is
//! `similarity(f(x), f(x'), t)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norms below this are treated as zero.
pub const ZERO_NORM: f64 = 1e-300;

/// Tolerance on the unit-norm invariant.
pub const UNIT_TOLERANCE: f64 = 1e-12;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `self^T v`
    pub fn matvec_transposed(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        debug_assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                for (o, &b) in out.row_mut(i).iter_mut().zip(orow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    /// `self += scale * u v^T`
    pub fn add_outer(&mut self, scale: f64, u: &[f64], v: &[f64]) {
        for (i, &ui) in u.iter().enumerate() {
            let s = scale * ui;
            if s == 0.0 {
                continue;
            }
            for (o, &vj) in self.row_mut(i).iter_mut().zip(v) {
                *o += s * vj;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    // scaled to avoid overflow/underflow for extreme magnitudes
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    scale * v.iter().map(|x| (x / scale) * (x / scale)).sum::<f64>().sqrt()
}

/// A point on the unit hypersphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct UnitEmbedding(Vec<f64>);

impl UnitEmbedding {
    /// Wraps coordinates that are already unit-norm.
    pub fn from_unit(coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::Dimension(coords.len()));
        }
        let n = norm(&coords);
        if (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "coordinates have norm {n}, expected 1"
            )));
        }
        Ok(Self(coords))
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Applies a linear map and renormalises; used for rotations.
    pub fn transformed(&self, m: &Matrix) -> Result<Self> {
        normalize(&m.matvec(&self.0))
    }
}

impl TryFrom<Vec<f64>> for UnitEmbedding {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::from_unit(v)
    }
}

impl From<UnitEmbedding> for Vec<f64> {
    fn from(e: UnitEmbedding) -> Self {
        e.0
    }
}

/// Temperature-scaled cosine similarity, in `[-1/t, 1/t]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Similarity(f64);

impl Similarity {
    /// Raw exponent value; callers are trusted to respect the `1/t` range.
    pub fn new(value: f64) -> Self {
        Similarity(value)
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

pub fn normalize(v: &[f64]) -> Result<UnitEmbedding> {
    if v.len() < 2 {
        return Err(Error::Dimension(v.len()));
    }
    let n = norm(v);
    if !(n >= ZERO_NORM) || !n.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok(UnitEmbedding(v.iter().map(|x| x / n).collect()))
}

/// Jacobian of `v -> v / |v|`, which is `(I - v̂ v̂^T) / |v|`.
pub fn normalize_jacobian(v: &[f64]) -> Result<Matrix> {
    let unit = normalize(v)?;
    let n = norm(v);
    let d = v.len();
    let mut j = Matrix::identity(d);
    j.add_outer(-1.0, unit.coords(), unit.coords());
    for x in j.as_mut_slice() {
        *x /= n;
    }
    Ok(j)
}

/// `J^T g` for the normalisation Jacobian without forming `J`.
///
/// `J` is symmetric, so this is also `J g`: `(g - v̂ (v̂.g)) / |v|`.
pub fn normalize_backward(v: &[f64], unit: &[f64], grad: &[f64]) -> Vec<f64> {
    let n = norm(v);
    let proj = dot(unit, grad);
    grad.iter()
        .zip(unit)
        .map(|(g, u)| (g - u * proj) / n)
        .collect()
}

pub fn similarity(a: &UnitEmbedding, b: &UnitEmbedding, t: f64) -> Similarity {
    debug_assert!(t > 0.0);
    Similarity(dot(a.coords(), b.coords()) / t)
}

/// Embeddings of a finite point set at a shared temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    embeddings: Vec<UnitEmbedding>,
    temperature: f64,
}

impl EmbeddingTable {
    pub fn new(embeddings: Vec<UnitEmbedding>, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        let d = embeddings.first().map_or(0, UnitEmbedding::dim);
        if let Some(bad) = embeddings.iter().find(|e| e.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: bad.dim(),
            });
        }
        Ok(Self {
            embeddings,
            temperature,
        })
    }

    /// Every point mapped to the same vector.
    pub fn constant(points: usize, dim: usize, temperature: f64) -> Result<Self> {
        let mut v = vec![0.0; dim];
        v[0] = 1.0;
        let e = normalize(&v)?;
        Self::new(vec![e; points], temperature)
    }

    /// Independent uniform draws on the unit sphere.
    pub fn random(points: usize, dim: usize, temperature: f64, rng: &mut crate::rng::StreamRng) -> Result<Self> {
        use rand_distr::{Distribution, StandardNormal};
        if dim < 2 {
            return Err(Error::Dimension(dim));
        }
        let e = (0..points)
            .map(|_| {
                let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
                normalize(&v)
            })
            .collect::<Result<_>>()?;
        Self::new(e, temperature)
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.first().map_or(0, UnitEmbedding::dim)
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn get(&self, i: usize) -> &UnitEmbedding {
        &self.embeddings[i]
    }

    pub fn embeddings(&self) -> &[UnitEmbedding] {
        &self.embeddings
    }

    pub fn similarity(&self, i: usize, j: usize) -> Similarity {
        similarity(&self.embeddings[i], &self.embeddings[j], self.temperature)
    }

    /// Full `S x S` matrix of similarities.
    pub fn similarity_matrix(&self) -> Matrix {
        let s = self.len();
        let mut m = Matrix::zeros(s, s);
        for i in 0..s {
            for j in 0..s {
                m[(i, j)] = self.similarity(i, j).value();
            }
        }
        m
    }

    /// Same table after applying `rotation` to every embedding.
    pub fn rotated(&self, rotation: &Matrix) -> Result<Self> {
        let embeddings = self
            .embeddings
            .iter()
            .map(|e| e.transformed(rotation))
            .collect::<Result<Vec<_>>>()?;
        Self::new(embeddings, self.temperature)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn normalize_examples() {
        assert_close(normalize(&[3.0, 4.0]).unwrap().coords(), &[0.6, 0.8], 1e-15);
        assert_close(
            normalize(&[1.0, 0.0, 0.0]).unwrap().coords(),
            &[1.0, 0.0, 0.0],
            0.0,
        );
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_close(normalize(&[1.0, 1.0]).unwrap().coords(), &[h, h], 1e-15);
    }

    #[test]
    fn normalize_rejects_zero_and_one_dimensional() {
        assert_eq!(normalize(&[0.0, 0.0]), Err(Error::ZeroVector));
        assert_eq!(normalize(&[1e-301, 0.0]), Err(Error::ZeroVector));
        assert_eq!(normalize(&[1.0]), Err(Error::Dimension(1)));
    }

    #[test]
    fn jacobian_examples() {
        let j = normalize_jacobian(&[1.0, 0.0]).unwrap();
        assert_close(&j.matvec(&[1.0, 0.0]), &[0.0, 0.0], 0.0);
        let j = normalize_jacobian(&[2.0, 0.0]).unwrap();
        assert_close(j.as_slice(), &[0.0, 0.0, 0.0, 0.5], 1e-15);
        assert_eq!(normalize_jacobian(&[0.0, 0.0]), Err(Error::ZeroVector));
    }

    #[test]
    fn similarity_examples() {
        let a = normalize(&[1.0, 0.0]).unwrap();
        let b = normalize(&[0.0, 1.0]).unwrap();
        let neg = normalize(&[-1.0, 0.0]).unwrap();
        assert_eq!(similarity(&a, &a, 1.0).value(), 1.0);
        assert_eq!(similarity(&a, &neg, 0.5).value(), -2.0);
        assert_eq!(similarity(&a, &b, 1.0).value(), 0.0);
    }

    /// Central differences of `normalize`, independent of the closed form.
    fn fd_jacobian(v: &[f64], h: f64) -> Matrix {
        let d = v.len();
        let mut j = Matrix::zeros(d, d);
        for k in 0..d {
            let mut plus = v.to_vec();
            let mut minus = v.to_vec();
            plus[k] += h;
            minus[k] -= h;
            let fp = normalize(&plus).unwrap();
            let fm = normalize(&minus).unwrap();
            for i in 0..d {
                j[(i, k)] = (fp.coords()[i] - fm.coords()[i]) / (2.0 * h);
            }
        }
        j
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        use rand::Rng;
        let mut rng = crate::rng::substream(11, 0);
        for &d in &[2usize, 8, 64] {
            for _ in 0..100 {
                let v: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
                let analytic = normalize_jacobian(&v).unwrap();
                let numeric = fd_jacobian(&v, 1e-6);
                let mut diff = 0.0f64;
                for (a, n) in analytic.as_slice().iter().zip(numeric.as_slice()) {
                    diff = diff.max((a - n).abs());
                }
                let rel = diff / (numeric.max_abs() + 1e-12);
                assert!(rel <= 1e-6, "d={d} rel={rel}");
                assert!((analytic.clone().transpose().as_slice().iter())
                    .zip(analytic.as_slice())
                    .all(|(a, b)| a == b));
            }
        }
    }

    #[test]
    fn backward_matches_explicit_jacobian() {
        let v = [0.3, -1.2, 2.0];
        let g = [1.0, 0.5, -0.25];
        let unit = normalize(&v).unwrap();
        let explicit = normalize_jacobian(&v).unwrap().matvec(&g);
        assert_close(&normalize_backward(&v, unit.coords(), &g), &explicit, 1e-15);
    }

    pub(crate) fn random_rotation(d: usize, seed: u64) -> Matrix {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = crate::rng::substream(seed, 99);
        let mut basis: Vec<Vec<f64>> = Vec::new();
        while basis.len() < d {
            let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            for b in &basis {
                let p = dot(&v, b);
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= p * y;
                }
            }
            let n = norm(&v);
            if n > 1e-6 {
                basis.push(v.iter().map(|x| x / n).collect());
            }
        }
        Matrix::from_rows(&basis).unwrap()
    }

    proptest! {
        #[test]
        fn normalize_is_scale_invariant(
            v in proptest::collection::vec(-10.0f64..10.0, 2..16),
            c in 1e-3f64..1e3,
        ) {
            prop_assume!(norm(&v) > 1e-6);
            let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
            let a = normalize(&v).unwrap();
            let b = normalize(&scaled).unwrap();
            for (x, y) in a.coords().iter().zip(b.coords()) {
                prop_assert!((x - y).abs() <= 1e-14);
            }
            let again = normalize(a.coords()).unwrap();
            for (x, y) in a.coords().iter().zip(again.coords()) {
                prop_assert!((x - y).abs() <= 1e-15);
            }
            prop_assert!((norm(a.coords()) - 1.0).abs() <= UNIT_TOLERANCE);
        }

        #[test]
        fn similarity_is_rotation_invariant(
            a in proptest::collection::vec(-1.0f64..1.0, 6),
            b in proptest::collection::vec(-1.0f64..1.0, 6),
            seed in 0u64..1000,
            t in 0.1f64..2.0,
        ) {
            prop_assume!(norm(&a) > 1e-3 && norm(&b) > 1e-3);
            let r = random_rotation(6, seed);
            let ea = normalize(&a).unwrap();
            let eb = normalize(&b).unwrap();
            let before = similarity(&ea, &eb, t).value();
            let after = similarity(&ea.transformed(&r).unwrap(), &eb.transformed(&r).unwrap(), t).value();
            prop_assert!((before - after).abs() <= 1e-12 / t.min(1.0));
            prop_assert!((similarity(&ea, &eb, t).value() - similarity(&eb, &ea, t).value()).abs() == 0.0);
            prop_assert!(before.abs() <= 1.0 / t + 1e-12);
        }
    }
}
