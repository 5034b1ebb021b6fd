//! Backbone embedding sets per water type, distances between them, and a
//! deterministic 2-D PCA projection for plotting.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::image::Image;
use crate::model::Model;
use crate::tensor::{covariance, Tensor};

const CHUNK: usize = 32;
pub const PCA_ITERS: usize = 200;
pub const PCA_TOL: f64 = 1e-9;

/// Row-major `n x d` matrix of pooled backbone features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f64>,
    pub tag: String,
    pub checkpoint: String,
}

impl EmbeddingSet {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>, tag: impl Into<String>, checkpoint: impl Into<String>) -> Result<Self> {
        if rows * dim != data.len() {
            return shape_err(format!("{} values for a {rows}x{dim} set", data.len()));
        }
        if rows < 2 {
            return invalid(format!("an embedding set needs at least 2 rows, got {rows}"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return invalid("embedding set holds non-finite values");
        }
        Ok(EmbeddingSet { rows, dim, data, tag: tag.into(), checkpoint: checkpoint.into() })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for i in 0..self.rows {
            for (a, v) in m.iter_mut().zip(self.row(i)) {
                *a += v;
            }
        }
        m.iter_mut().for_each(|v| *v /= self.rows as f64);
        m
    }

    fn covariance(&self) -> Vec<f64> {
        let t = Tensor::new(vec![self.rows, self.dim], self.data.clone()).expect("validated shape");
        covariance(&t).expect("at least two rows").into_data()
    }
}

/// One embedding row per image.
pub fn collect_embeddings(model: &Model, images: &[&Image], tag: &str, checkpoint: &str) -> Result<EmbeddingSet> {
    let dim = model.config().embedding_dim();
    let mut data = Vec::with_capacity(images.len() * dim);
    for chunk in images.chunks(CHUNK) {
        data.extend(model.embeddings(chunk)?.data().iter().map(|&v| v as f64));
    }
    EmbeddingSet::new(images.len(), dim, data, tag, checkpoint)
}

/// `|mean(A) - mean(B)|^2 / d + |C(A) - C(B)|_F^2`.
pub fn domain_gap(a: &EmbeddingSet, b: &EmbeddingSet) -> Result<f64> {
    if a.dim != b.dim {
        return shape_err(format!("embedding widths differ: {} vs {}", a.dim, b.dim));
    }
    let mean_term: f64 = a.mean().iter().zip(b.mean()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.dim as f64;
    let cov_term: f64 = a.covariance().iter().zip(b.covariance()).map(|(x, y)| (x - y).powi(2)).sum();
    Ok(mean_term + cov_term)
}

/// Symmetric gap matrix over `sets`, keyed by tag.
pub fn gap_matrix(sets: &[EmbeddingSet]) -> Result<BTreeMap<String, BTreeMap<String, f64>>> {
    let mut out: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for a in sets {
        for b in sets {
            out.entry(a.tag.clone()).or_default().insert(b.tag.clone(), domain_gap(a, b)?);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    /// Row-major `n x k` coordinates.
    pub coords: Vec<f64>,
    /// Row-major `k x d` unit components.
    pub components: Vec<f64>,
    /// Variance captured by each component.
    pub variances: Vec<f64>,
    pub k: usize,
    /// True when fewer than `k` components carry variance.
    pub rank_deficient: bool,
}

/// Projection of centred `x` (`n x d`) onto its top-`k` principal axes.
///
/// Power iteration with deflation, a fixed start vector and a sign
/// convention (largest-magnitude coordinate positive) keep the result
/// deterministic.
pub fn pca_project(x: &[f64], n: usize, d: usize, k: usize) -> Result<Projection> {
    if x.len() != n * d {
        return shape_err(format!("{} values for a {n}x{d} matrix", x.len()));
    }
    if n <= k || k == 0 || k > d {
        return invalid(format!("pca needs n > k and 0 < k <= d, got n={n} d={d} k={k}"));
    }
    let t = Tensor::new(vec![n, d], x.to_vec())?;
    let mut cov = covariance(&t)?.into_data();
    let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    let floor = 1e-12 * trace.max(f64::MIN_POSITIVE);
    let mut components = Vec::with_capacity(k * d);
    let mut variances = Vec::with_capacity(k);
    let mut rank_deficient = false;
    for _ in 0..k {
        let mut v: Vec<f64> = (0..d).map(|i| 1.0 / ((i + 1) as f64).sqrt()).collect();
        normalize(&mut v);
        let mut lambda = 0.0;
        for _ in 0..PCA_ITERS {
            let mut w = matvec(&cov, &v, d);
            let norm = normalize(&mut w);
            let delta: f64 = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            v = w;
            lambda = norm;
            if norm == 0.0 || delta < PCA_TOL {
                break;
            }
        }
        if lambda <= floor {
            rank_deficient = true;
            v = vec![0.0; d];
            lambda = 0.0;
        } else {
            let big = v.iter().copied().fold(0.0f64, |m, a| if a.abs() > m.abs() { a } else { m });
            if big < 0.0 {
                v.iter_mut().for_each(|a| *a = -*a);
            }
            for i in 0..d {
                for j in 0..d {
                    cov[i * d + j] -= lambda * v[i] * v[j];
                }
            }
        }
        components.extend_from_slice(&v);
        variances.push(lambda);
    }
    let mean: Vec<f64> = (0..d).map(|j| (0..n).map(|i| x[i * d + j]).sum::<f64>() / n as f64).collect();
    let mut coords = vec![0.0; n * k];
    for i in 0..n {
        for c in 0..k {
            coords[i * k + c] = (0..d).map(|j| (x[i * d + j] - mean[j]) * components[c * d + j]).sum();
        }
    }
    Ok(Projection { coords, components, variances, k, rank_deficient })
}

fn matvec(m: &[f64], v: &[f64], d: usize) -> Vec<f64> {
    (0..d).map(|i| m[i * d..(i + 1) * d].iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|a| *a /= n);
    }
    n
}

/// Joint 2-D projection of several sets, as CSV `tag,checkpoint,x,y`.
pub fn projection_csv(sets: &[EmbeddingSet]) -> Result<String> {
    let Some(first) = sets.first() else {
        return invalid("no embedding sets to project");
    };
    let d = first.dim;
    if sets.iter().any(|s| s.dim != d) {
        return shape_err("embedding sets differ in width");
    }
    let all: Vec<f64> = sets.iter().flat_map(|s| s.data.iter().copied()).collect();
    let n = all.len() / d;
    let p = pca_project(&all, n, d, 2)?;
    let mut out = String::from("tag,checkpoint,x,y\n");
    let mut row = 0;
    for s in sets {
        for _ in 0..s.rows {
            writeln!(out, "{},{},{:.6e},{:.6e}", s.tag, s.checkpoint, p.coords[row * 2], p.coords[row * 2 + 1]).expect("string write");
            row += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(seed: u64, n: usize, d: usize, tag: &str) -> EmbeddingSet {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        EmbeddingSet::new(n, d, (0..n * d).map(|_| r.random_range(-1.0..1.0)).collect(), tag, "x").unwrap()
    }

    fn gap_oracle(a: &EmbeddingSet, b: &EmbeddingSet) -> f64 {
        let d = a.dim;
        let stats = |s: &EmbeddingSet| {
            let mean: Vec<f64> = (0..d).map(|j| (0..s.rows).map(|i| s.data[i * d + j]).sum::<f64>() / s.rows as f64).collect();
            let mut c = vec![0.0; d * d];
            for p in 0..d {
                for q in 0..d {
                    let mut acc = 0.0;
                    for i in 0..s.rows {
                        acc += (s.data[i * d + p] - mean[p]) * (s.data[i * d + q] - mean[q]);
                    }
                    c[p * d + q] = acc / (s.rows - 1) as f64;
                }
            }
            (mean, c)
        };
        let (ma, ca) = stats(a);
        let (mb, cb) = stats(b);
        let m: f64 = ma.iter().zip(&mb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / d as f64;
        m + ca.iter().zip(&cb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
    }

    #[test]
    fn gap_properties() {
        let a = random_set(1, 10, 6, "a");
        assert_eq!(domain_gap(&a, &a).unwrap(), 0.0);
        let shift = [0.5, -1.0, 0.0, 2.0, 0.25, 1.0];
        let mut b = a.clone();
        for i in 0..b.rows {
            for (j, s) in shift.iter().enumerate() {
                b.data[i * 6 + j] += s;
            }
        }
        let want = shift.iter().map(|s| s * s).sum::<f64>() / 6.0;
        assert!((domain_gap(&a, &b).unwrap() - want).abs() < 1e-9);
        for seed in 0..20 {
            let (x, y) = (random_set(seed, 7, 5, "x"), random_set(seed + 100, 12, 5, "y"));
            let g = domain_gap(&x, &y).unwrap();
            assert!((g - gap_oracle(&x, &y)).abs() < 1e-6);
            assert!((g - domain_gap(&y, &x).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn too_few_rows_rejected() {
        assert!(EmbeddingSet::new(1, 3, vec![0.0; 3], "a", "b").is_err());
    }

    #[test]
    fn pca_on_a_line_has_one_component() {
        let dir = [0.6, 0.0, -0.8];
        let x: Vec<f64> = (0..20).flat_map(|i| dir.map(|v| v * (i as f64 - 7.0) + 1.0)).collect();
        let p = pca_project(&x, 20, 3, 2).unwrap();
        let var2 = (0..20).map(|i| p.coords[i * 2 + 1].powi(2)).sum::<f64>() / 19.0;
        assert!(var2 < 1e-9);
        assert!(p.rank_deficient);
    }

    #[test]
    fn pca_with_full_width_preserves_distances() {
        let s = random_set(3, 15, 2, "a");
        let p = pca_project(&s.data, 15, 2, 2).unwrap();
        for i in 0..15 {
            for j in 0..15 {
                let orig = ((s.row(i)[0] - s.row(j)[0]).powi(2) + (s.row(i)[1] - s.row(j)[1]).powi(2)).sqrt();
                let proj = ((p.coords[i * 2] - p.coords[j * 2]).powi(2) + (p.coords[i * 2 + 1] - p.coords[j * 2 + 1]).powi(2)).sqrt();
                assert!((orig - proj).abs() < 1e-6, "{orig} {proj}");
            }
        }
    }

    #[test]
    fn pca_components_are_orthogonal_and_deterministic() {
        let s = random_set(4, 40, 8, "a");
        let p = pca_project(&s.data, 40, 8, 2).unwrap();
        let dot: f64 = (0..8).map(|j| p.components[j] * p.components[8 + j]).sum();
        assert!(dot.abs() < 1e-6);
        assert_eq!(p, pca_project(&s.data, 40, 8, 2).unwrap());
        assert!(p.variances[0] >= p.variances[1]);
    }

    #[test]
    fn csv_has_four_columns() {
        let sets = [random_set(5, 4, 3, "greenish"), random_set(6, 5, 3, "bluish")];
        let csv = projection_csv(&sets).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 10);
        assert!(lines.iter().all(|l| l.split(',').count() == 4));
    }
}
