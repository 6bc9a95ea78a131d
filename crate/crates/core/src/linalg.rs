//! Dense float64 matrices/vectors, the duplication and partition operators
//! used by all widening math, and a seeded, counter-based RNG.
//!
//! Matrices are row-major `Vec<f64>`. Vectors are plain `&[f64]` slices.
//! Shape mismatches in the hot-path methods are programmer errors and panic;
//! the fallible constructors and samplers return [`Result`].

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `scale * (self @ x)`.
    pub fn matvec_scaled(&self, x: &[f64], scale: f64) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec shape mismatch");
        (0..self.rows).map(|i| scale * dot(self.row(i), x)).collect()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        self.matvec_scaled(x, 1.0)
    }

    /// `scale * (self^T @ x)`, accumulated row by row to stay cache-friendly.
    pub fn matvec_t_scaled(&self, x: &[f64], scale: f64) -> Vec<f64> {
        assert_eq!(x.len(), self.rows, "matvec_t shape mismatch");
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let xi = scale * x[i];
            if xi == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(self.row(i)) {
                *o += xi * w;
            }
        }
        out
    }

    pub fn matvec_t(&self, x: &[f64]) -> Vec<f64> {
        self.matvec_t_scaled(x, 1.0)
    }

    /// `self += scale * (a outer b)`; used for rank-one gradient updates.
    pub fn add_outer_scaled(&mut self, a: &[f64], b: &[f64], scale: f64) {
        assert_eq!(a.len(), self.rows);
        assert_eq!(b.len(), self.cols);
        for i in 0..self.rows {
            let s = scale * a[i];
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for (w, bj) in row.iter_mut().zip(b) {
                *w += s * bj;
            }
        }
    }

    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn rms(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `v ⊗ 1_k`: each coordinate repeated in a contiguous block of length `k`.
pub fn dup_vec(v: &[f64], k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::InvalidMultiplier);
    }
    let mut out = Vec::with_capacity(v.len() * k);
    for &x in v {
        out.extend(std::iter::repeat_n(x, k));
    }
    Ok(out)
}

/// `scale * (W ⊗ 1_{k_out} 1_{k_in}^T)`: each entry becomes a constant
/// `k_out × k_in` block.
pub fn dup_mat(w: &Mat, k_out: usize, k_in: usize, scale: f64) -> Result<Mat> {
    if k_out == 0 || k_in == 0 {
        return Err(Error::InvalidMultiplier);
    }
    let mut out = Mat::zeros(w.rows * k_out, w.cols * k_in);
    for i in 0..w.rows {
        for j in 0..w.cols {
            let v = scale * w.get(i, j);
            for bi in 0..k_out {
                for bj in 0..k_in {
                    out.set(i * k_out + bi, j * k_in + bj, v);
                }
            }
        }
    }
    Ok(out)
}

/// Strided sub-vector `(v_i, v_{i+k}, v_{i+2k}, ...)` with 0-based `i in 0..k`.
///
/// This is the accessor that inverts [`dup_vec`]'s contiguous-block layout:
/// every stride of a block-duplicated vector recovers the original.
pub fn partition_vec_strided(v: &[f64], k: usize, i: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::InvalidMultiplier);
    }
    if !v.len().is_multiple_of(k) {
        return Err(Error::ShapeMismatch(format!(
            "length {} not divisible by {}",
            v.len(),
            k
        )));
    }
    if i >= k {
        return Err(Error::InvalidParameter(format!("stride index {i} >= {k}")));
    }
    Ok(v.iter().skip(i).step_by(k).copied().collect())
}

/// Contiguous chunk `i` of `v` split into `k` equal pieces, 0-based.
pub fn partition_vec_block(v: &[f64], k: usize, i: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::InvalidMultiplier);
    }
    if !v.len().is_multiple_of(k) {
        return Err(Error::ShapeMismatch(format!(
            "length {} not divisible by {}",
            v.len(),
            k
        )));
    }
    if i >= k {
        return Err(Error::InvalidParameter(format!("block index {i} >= {k}")));
    }
    let n = v.len() / k;
    Ok(v[i * n..(i + 1) * n].to_vec())
}

/// Strided sub-matrix: rows `i, i+k_out, ...` and columns `j, j+k_in, ...`.
pub fn partition_mat_strided(w: &Mat, k_out: usize, k_in: usize, i: usize, j: usize) -> Result<Mat> {
    if k_out == 0 || k_in == 0 {
        return Err(Error::InvalidMultiplier);
    }
    if !w.rows.is_multiple_of(k_out) || !w.cols.is_multiple_of(k_in) {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} not divisible by {}x{}",
            w.rows, w.cols, k_out, k_in
        )));
    }
    let (r, c) = (w.rows / k_out, w.cols / k_in);
    let mut out = Mat::zeros(r, c);
    for a in 0..r {
        for b in 0..c {
            out.set(a, b, w.get(i + a * k_out, j + b * k_in));
        }
    }
    Ok(out)
}

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    z
}

/// Natural log built from exact bit operations plus a fixed-coefficient
/// series, so the gaussian stream does not depend on the platform libm.
fn portable_ln(x: f64) -> f64 {
    debug_assert!(x > 0.0 && x.is_finite());
    const LN2: f64 = std::f64::consts::LN_2;
    let bits = x.to_bits();
    let mut e = ((bits >> 52) & 0x7FF) as i64 - 1023;
    let mut m = f64::from_bits((bits & 0x000F_FFFF_FFFF_FFFF) | 0x3FF0_0000_0000_0000);
    // keep the mantissa in [1, sqrt(2)] so the series argument stays small
    if m > std::f64::consts::SQRT_2 {
        m *= 0.5;
        e += 1;
    }
    let s = (m - 1.0) / (m + 1.0);
    let s2 = s * s;
    // atanh series: ln m = 2 (s + s^3/3 + s^5/5 + ...)
    let mut term = s;
    let mut sum = s;
    for n in 1..=10 {
        term *= s2;
        sum += term / (2 * n + 1) as f64;
    }
    e as f64 * LN2 + 2.0 * sum
}

/// Counter-based, splittable pseudo-random generator (SplitMix64 core).
///
/// The `state` advances by a fixed increment per draw, so the stream position
/// is just a counter — identical seeds give identical sequences on every
/// platform. Gaussians come from the polar method on top of the uniform
/// stream with a portable log, see docs/FORMATS.md for the exact algorithm.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    state: u64,
    cached_gauss: Option<f64>,
}

impl Rng {
    pub fn from_seed(seed: u64) -> Self {
        Rng { seed, state: seed, cached_gauss: None }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derive an independent child stream; used to split work (per-seed
    /// Monte-Carlo runs, noise vs data-order streams) deterministically.
    pub fn child(&self, index: u64) -> Rng {
        Rng::from_seed(mix64(self.seed ^ mix64(index.wrapping_add(1).wrapping_mul(GAMMA))))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        mix64(self.state)
    }

    /// Uniform in [0, 1).
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in (-1, 1).
    #[inline]
    fn next_signed(&mut self) -> f64 {
        2.0 * self.next_f64() - 1.0
    }

    /// Standard normal via the polar (Marsaglia) method. Pairs are generated
    /// together and the second value cached.
    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(g) = self.cached_gauss.take() {
            return g;
        }
        loop {
            let u = self.next_signed();
            let v = self.next_signed();
            let s = u * u + v * v;
            if s >= 1.0 || s == 0.0 {
                continue;
            }
            let r = (-2.0 * portable_ln(s) / s).sqrt();
            self.cached_gauss = Some(v * r);
            return u * r;
        }
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        // Fisher-Yates
        for i in (1..xs.len()).rev() {
            let j = (self.next_u64() % (i as u64 + 1)) as usize;
            xs.swap(i, j);
        }
    }
}

/// I.i.d. `N(0, std^2)` matrix; `std = 0` yields the zero matrix.
pub fn gauss_mat(rng: &mut Rng, rows: usize, cols: usize, std: f64) -> Result<Mat> {
    if std < 0.0 {
        return Err(Error::InvalidParameter(format!("negative std {std}")));
    }
    let mut m = Mat::zeros(rows, cols);
    if std > 0.0 {
        for v in m.data.iter_mut() {
            *v = std * rng.next_gaussian();
        }
    }
    Ok(m)
}

pub fn gauss_vec(rng: &mut Rng, len: usize, std: f64) -> Result<Vec<f64>> {
    Ok(gauss_mat(rng, len, 1, std)?.data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    // the explicit import beats the glob: proptest's prelude re-exports a
    // `Rng` trait that would otherwise shadow ours
    use crate::linalg::Rng;

    #[test]
    fn dup_vec_basic() {
        assert_eq!(dup_vec(&[3.0, 5.0], 2).unwrap(), vec![3.0, 3.0, 5.0, 5.0]);
        assert_eq!(dup_vec(&[7.0], 1).unwrap(), vec![7.0]);
        assert!(matches!(dup_vec(&[1.0], 0), Err(Error::InvalidMultiplier)));
    }

    #[test]
    fn dup_vec_blocks_constant() {
        let mut rng = Rng::from_seed(7);
        let v: Vec<f64> = (0..4).map(|_| rng.next_gaussian()).collect();
        let d = dup_vec(&v, 3).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                assert_eq!(d[i * 3 + j], v[i]);
            }
        }
        // strided partition inverts contiguous-block duplication, bitwise
        for i in 0..3 {
            assert_eq!(partition_vec_strided(&d, 3, i).unwrap(), v);
        }
    }

    #[test]
    fn dup_mat_single_entry() {
        let w = Mat::from_rows(&[vec![2.0]]);
        let d = dup_mat(&w, 2, 2, 0.5).unwrap();
        assert_eq!(d.data, vec![1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn dup_mat_identity() {
        let mut rng = Rng::from_seed(3);
        let w = gauss_mat(&mut rng, 3, 4, 1.0).unwrap();
        assert_eq!(dup_mat(&w, 1, 1, 1.0).unwrap(), w);
    }

    #[test]
    fn dup_mat_vs_quadruple_loop() {
        let mut rng = Rng::from_seed(11);
        let w = gauss_mat(&mut rng, 2, 3, 1.0).unwrap();
        let (k_out, k_in, scale) = (2, 3, 1.0 / 3.0);
        let d = dup_mat(&w, k_out, k_in, scale).unwrap();
        for i in 0..w.rows {
            for j in 0..w.cols {
                for bi in 0..k_out {
                    for bj in 0..k_in {
                        assert_eq!(d.get(i * k_out + bi, j * k_in + bj), scale * w.get(i, j));
                    }
                }
            }
        }
    }

    #[test]
    fn partition_strided_examples() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(partition_vec_strided(&v, 2, 0).unwrap(), vec![1.0, 3.0]);
        assert_eq!(partition_vec_strided(&v, 2, 1).unwrap(), vec![2.0, 4.0]);
        assert_eq!(partition_vec_block(&v, 2, 0).unwrap(), vec![1.0, 2.0]);
        assert!(partition_vec_strided(&v, 3, 0).is_err());
        assert!(matches!(
            partition_vec_strided(&v, 2, 2),
            Err(Error::InvalidParameter(_))
        ));
        assert!(partition_vec_block(&v, 2, 5).is_err());
    }

    #[test]
    fn partition_mat_strided_recovers_block_dup() {
        let mut rng = Rng::from_seed(5);
        let w = gauss_mat(&mut rng, 2, 3, 1.0).unwrap();
        let d = dup_mat(&w, 2, 2, 1.0).unwrap();
        // block duplication puts copies at contiguous offsets, so strided
        // partitions all equal the original
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(partition_mat_strided(&d, 2, 2, i, j).unwrap(), w);
            }
        }
    }

    #[test]
    fn gauss_zero_std_is_zero() {
        let mut rng = Rng::from_seed(1);
        let m = gauss_mat(&mut rng, 2, 2, 0.0).unwrap();
        assert!(m.data.iter().all(|&v| v == 0.0));
        assert!(gauss_mat(&mut rng, 1, 1, -1.0).is_err());
    }

    #[test]
    fn gauss_moments() {
        let mut rng = Rng::from_seed(99);
        let m = gauss_mat(&mut rng, 1000, 1000, 1.0).unwrap();
        let n = m.data.len() as f64;
        let mean = m.data.iter().sum::<f64>() / n;
        let var = m.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 4.0 / n.sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn rng_reproducible() {
        let mut a = Rng::from_seed(42);
        let mut b = Rng::from_seed(42);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let ga: Vec<f64> = (0..100).map(|_| a.next_gaussian()).collect();
        let gb: Vec<f64> = (0..100).map(|_| b.next_gaussian()).collect();
        assert_eq!(ga, gb);
        let m1 = gauss_mat(&mut Rng::from_seed(7), 8, 8, 1.0).unwrap();
        let m2 = gauss_mat(&mut Rng::from_seed(7), 8, 8, 1.0).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn child_streams_differ() {
        let root = Rng::from_seed(13);
        let mut c0 = root.child(0);
        let mut c1 = root.child(1);
        let first = c0.next_u64();
        assert_ne!(first, c1.next_u64());
        // same child index is reproducible
        let mut c0b = root.child(0);
        assert_eq!(first, c0b.next_u64());
        assert_eq!(c0.next_u64(), c0b.next_u64());
    }

    #[test]
    fn portable_ln_matches_std() {
        for &x in &[1e-300, 1e-12, 0.003, 0.25, 0.5, 0.9999, 1.0, 1.5, 2.0, 1e4, 1e250] {
            let err = (portable_ln(x) - x.ln()).abs();
            let tol = 1e-14 * x.ln().abs().max(1.0);
            assert!(err <= tol, "ln({x}): {err}");
        }
    }

    proptest! {
        #[test]
        fn mixed_product_identity(
            rows in 1usize..5, cols in 1usize..5,
            k_out in 1usize..4, k_in in 1usize..4,
            seed in 0u64..1000, scale in 0.1f64..3.0,
        ) {
            let mut rng = Rng::from_seed(seed);
            let w = gauss_mat(&mut rng, rows, cols, 1.0).unwrap();
            let v: Vec<f64> = (0..cols).map(|_| rng.next_gaussian()).collect();
            // dup_mat(W) . dup_vec(v) = dup_vec(k_in * scale * W v)
            let lhs = dup_mat(&w, k_out, k_in, scale).unwrap()
                .matvec(&dup_vec(&v, k_in).unwrap());
            let wv = w.matvec_scaled(&v, k_in as f64 * scale);
            let rhs = dup_vec(&wv, k_out).unwrap();
            let denom = rhs.iter().fold(1.0f64, |a, b| a.max(b.abs()));
            prop_assert!(max_abs_diff(&lhs, &rhs) <= 1e-12 * denom);
        }

        #[test]
        fn dup_partition_round_trip(len in 1usize..8, k in 1usize..5, seed in 0u64..1000) {
            let mut rng = Rng::from_seed(seed);
            let v: Vec<f64> = (0..len).map(|_| rng.next_gaussian()).collect();
            let d = dup_vec(&v, k).unwrap();
            for i in 0..k {
                prop_assert_eq!(partition_vec_strided(&d, k, i).unwrap(), v.clone());
            }
        }
    }
}
