use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protoagg::kmeans_plus_plus;
use crate::seeding::{self, tag};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceType {
    #[default]
    Diagonal,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmConfig {
    /// Stop once the mean per-sample log-likelihood improves by less than this.
    pub tol: f64,
    pub max_iter: usize,
    /// Lower bound on diagonal variances; added to the diagonal for full
    /// covariances.
    pub var_floor: f64,
    pub covariance: CovarianceType,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            max_iter: 200,
            var_floor: 1e-6,
            covariance: CovarianceType::Diagonal,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Covariances {
    /// `K x d` per-component variances.
    Diagonal(Array2<f64>),
    /// One `d x d` matrix per component.
    Full(Vec<Array2<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub weights: Array1<f64>,
    /// `K x d`.
    pub means: Array2<f64>,
    pub covariances: Covariances,
    /// Total log-likelihood of the training data under the returned parameters.
    pub log_likelihood: f64,
    /// Total log-likelihood after every E-step, in order.
    pub trace: Vec<f64>,
    pub converged: bool,
}

impl GmmModel {
    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dims(&self) -> usize {
        self.means.ncols()
    }

    pub fn covariance_type(&self) -> CovarianceType {
        match self.covariances {
            Covariances::Diagonal(_) => CovarianceType::Diagonal,
            Covariances::Full(_) => CovarianceType::Full,
        }
    }

    /// Per-sample log densities, `n x K`, including the log weights.
    fn weighted_log_densities(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let (n, d) = x.dim();
        let k = self.n_components();
        let mut out = Array2::zeros((n, k));
        match &self.covariances {
            Covariances::Diagonal(var) => {
                for j in 0..k {
                    let mu = self.means.row(j);
                    let v = var.row(j);
                    let log_norm = -0.5 * (d as f64 * LN_2PI + v.iter().map(|s| s.ln()).sum::<f64>());
                    let log_w = self.weights[j].ln();
                    for (i, xi) in x.outer_iter().enumerate() {
                        let mut q = 0.0;
                        for t in 0..d {
                            let diff = xi[t] - mu[t];
                            q += diff * diff / v[t];
                        }
                        out[[i, j]] = log_w + log_norm - 0.5 * q;
                    }
                }
            }
            Covariances::Full(covs) => {
                for (j, cov) in covs.iter().enumerate() {
                    let chol = cholesky(cov)?;
                    let log_det: f64 = 2.0 * chol.diag().iter().map(|l| l.ln()).sum::<f64>();
                    let log_norm = -0.5 * (d as f64 * LN_2PI + log_det);
                    let log_w = self.weights[j].ln();
                    let mu = self.means.row(j);
                    for (i, xi) in x.outer_iter().enumerate() {
                        let diff = &xi - &mu;
                        let z = forward_substitute(&chol, diff.view());
                        out[[i, j]] = log_w + log_norm - 0.5 * z.dot(&z);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Responsibilities (`n x K`, rows sum to 1) and total log-likelihood.
    pub fn responsibilities(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, f64)> {
        let mut logp = self.weighted_log_densities(x)?;
        let mut total = 0.0;
        for mut row in logp.outer_iter_mut() {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
            total += lse;
            row.mapv_inplace(|v| (v - lse).exp());
        }
        Ok((logp, total))
    }
}

fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::invalid("covariance matrix is not positive definite"));
                }
                l[[i, i]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// Solve `L z = b` for lower-triangular `L`.
fn forward_substitute(l: &Array2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let n = b.len();
    let mut z = Array1::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * z[k];
        }
        z[i] = s / l[[i, i]];
    }
    z
}

/// Free parameters of a `k`-component mixture in `d` dimensions.
pub fn free_parameters(k: usize, d: usize, cov: CovarianceType) -> usize {
    let per_cov = match cov {
        CovarianceType::Diagonal => d,
        CovarianceType::Full => d * (d + 1) / 2,
    };
    (k - 1) + k * d + k * per_cov
}

/// `p * ln(n) - 2 * ln(L)`; lower is better.
pub fn bic(model: &GmmModel, n: usize) -> f64 {
    let p = free_parameters(model.n_components(), model.dims(), model.covariance_type());
    p as f64 * (n as f64).ln() - 2.0 * model.log_likelihood
}

fn m_step(x: ArrayView2<f64>, resp: &Array2<f64>, cfg: &EmConfig) -> (Array1<f64>, Array2<f64>, Covariances) {
    let (n, d) = x.dim();
    let k = resp.ncols();
    // guards against a component losing all mass
    let nk = resp.sum_axis(Axis(0)).mapv(|v| v.max(10.0 * f64::EPSILON));
    let weights = &nk / nk.sum();
    let mut means = resp.t().dot(&x);
    for (mut row, &w) in means.outer_iter_mut().zip(&nk) {
        row /= w;
    }
    let covariances = match cfg.covariance {
        CovarianceType::Diagonal => {
            let mut var = Array2::<f64>::zeros((k, d));
            for j in 0..k {
                for i in 0..n {
                    let r = resp[[i, j]];
                    for t in 0..d {
                        let diff = x[[i, t]] - means[[j, t]];
                        var[[j, t]] += r * diff * diff;
                    }
                }
                for t in 0..d {
                    var[[j, t]] = (var[[j, t]] / nk[j]).max(cfg.var_floor);
                }
            }
            Covariances::Diagonal(var)
        }
        CovarianceType::Full => Covariances::Full(
            (0..k)
                .map(|j| {
                    let centered = &x - &means.row(j);
                    let weighted = &centered * &resp.column(j).insert_axis(Axis(1));
                    let mut cov = weighted.t().dot(&centered) / nk[j];
                    for t in 0..d {
                        cov[[t, t]] += cfg.var_floor;
                    }
                    cov
                })
                .collect(),
        ),
    };
    (weights, means, covariances)
}

/// Fit a `k`-component mixture to the rows of `x` by EM.
///
/// Means start from k-means++ seeding, weights uniform, variances (or the
/// covariance) from the pooled data. Iteration stops when the mean
/// per-sample log-likelihood gain drops below `cfg.tol`, or after
/// `cfg.max_iter` M-steps.
pub fn em_fit(x: ArrayView2<f64>, k: usize, seed: u64, cfg: &EmConfig) -> Result<GmmModel> {
    let (n, d) = x.dim();
    if k < 1 {
        return Err(Error::invalid("a mixture needs at least one component"));
    }
    if k > n {
        return Err(Error::invalid(format!("cannot fit {k} components to {n} samples")));
    }
    if d == 0 {
        return Err(Error::invalid("cannot fit a mixture to zero-dimensional data"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("mixture input contains non-finite values"));
    }

    let mut rng = seeding::rng_for(seed, &[tag::GMM]);
    let means = kmeans_plus_plus(x, k, &mut rng);
    let mean = x.mean_axis(Axis(0)).expect("n >= 1");
    let covariances = match cfg.covariance {
        CovarianceType::Diagonal => {
            let var = x.var_axis(Axis(0), 0.0).mapv(|v| v.max(cfg.var_floor));
            Covariances::Diagonal(Array2::from_shape_fn((k, d), |(_, t)| var[t]))
        }
        CovarianceType::Full => {
            let centered = &x - &mean;
            let mut cov = centered.t().dot(&centered) / n as f64;
            for t in 0..d {
                cov[[t, t]] += cfg.var_floor;
            }
            Covariances::Full(vec![cov; k])
        }
    };
    let mut model = GmmModel {
        weights: Array1::from_elem(k, 1.0 / k as f64),
        means,
        covariances,
        log_likelihood: f64::NEG_INFINITY,
        trace: Vec::new(),
        converged: false,
    };

    let mut iters = 0;
    loop {
        let (resp, ll) = model.responsibilities(x)?;
        model.trace.push(ll);
        model.log_likelihood = ll;
        if let [.., prev, last] = model.trace[..] {
            if (last - prev) / (n as f64) < cfg.tol {
                model.converged = true;
                break;
            }
        }
        if iters == cfg.max_iter {
            break;
        }
        let (weights, means, covariances) = m_step(x, &resp, cfg);
        model.weights = weights;
        model.means = means;
        model.covariances = covariances;
        iters += 1;
    }
    Ok(model)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BicSelection {
    pub k: usize,
    pub model: GmmModel,
    /// `(k, bic)` for every candidate that was fitted.
    pub table: Vec<(usize, f64)>,
}

/// Fit `K = 1..=min(k_max, n)` and keep the lowest BIC, preferring the
/// smaller `K` on ties. Fewer than two samples force `K = 1`.
pub fn select_k_bic(x: ArrayView2<f64>, k_max: usize, seed: u64, cfg: &EmConfig) -> Result<BicSelection> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::EmptyDataset("BIC selection needs at least one sample"));
    }
    if k_max < 1 {
        return Err(Error::invalid("k_max must be >= 1"));
    }
    let k_hi = if n < 2 { 1 } else { k_max.min(n) };
    let mut best: Option<(usize, GmmModel, f64)> = None;
    let mut table = Vec::with_capacity(k_hi);
    for k in 1..=k_hi {
        let model = em_fit(x, k, seeding::derive(seed, &[k as u64]), cfg)?;
        let score = bic(&model, n);
        table.push((k, score));
        if best.as_ref().is_none_or(|(_, _, b)| score < *b) {
            best = Some((k, model, score));
        }
    }
    let (k, model, _) = best.expect("at least K = 1 was fitted");
    Ok(BicSelection { k, model, table })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn blobs(centers: &[[f64; 2]], per: usize, spread: f64, seed: u64) -> Array2<f64> {
        let mut rng = seeding::rng(seed);
        let noise = Normal::new(0.0, spread).unwrap();
        let mut x = Array2::zeros((centers.len() * per, 2));
        for (c, center) in centers.iter().enumerate() {
            for i in 0..per {
                for t in 0..2 {
                    x[[c * per + i, t]] = center[t] + noise.sample(&mut rng);
                }
            }
        }
        x
    }

    #[test]
    fn single_component_closed_form() {
        let x = array![[1.0, 2.0], [3.0, 2.0], [2.0, 8.0], [6.0, 0.0]];
        let m = em_fit(x.view(), 1, 0, &EmConfig::default()).unwrap();
        assert_eq!(m.weights.to_vec(), vec![1.0]);
        assert!((m.means[[0, 0]] - 3.0).abs() < 1e-12);
        assert!((m.means[[0, 1]] - 3.0).abs() < 1e-12);
        let Covariances::Diagonal(v) = &m.covariances else { panic!() };
        // biased variances: x0 -> (4+0+1+9)/4, x1 -> (1+1+25+9)/4
        assert!((v[[0, 0]] - 3.5).abs() < 1e-12);
        assert!((v[[0, 1]] - 9.0).abs() < 1e-12);
    }

    #[test]
    fn constant_data_hits_the_floor() {
        let x = array![[1.0], [1.0], [1.0]];
        let m = em_fit(x.view(), 1, 0, &EmConfig::default()).unwrap();
        let Covariances::Diagonal(v) = &m.covariances else { panic!() };
        assert_eq!(v[[0, 0]], 1e-6);
    }

    #[test]
    fn separated_blobs_recover_centers() {
        let centers = [[0.0, 0.0], [5.0, 5.0]];
        let per = 200;
        let spread = 0.1;
        let x = blobs(&centers, per, spread, 3);
        let m = em_fit(x.view(), 2, 1, &EmConfig::default()).unwrap();
        let tol = 3.0 * spread / (per as f64).sqrt();
        for c in centers {
            let hit = m.means.outer_iter().any(|mu| (mu[0] - c[0]).abs() <= tol && (mu[1] - c[1]).abs() <= tol);
            assert!(hit, "no mean within {tol} of {c:?}: {:?}", m.means);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let x = blobs(&[[0.0, 0.0], [1.0, 1.0], [0.0, 2.0]], 50, 0.3, 9);
        let a = em_fit(x.view(), 3, 4, &EmConfig::default()).unwrap();
        let b = em_fit(x.view(), 3, 4, &EmConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn monotone_and_normalized() {
        for seed in 0..10 {
            let mut rng = seeding::rng(seed);
            let x = Array2::from_shape_fn((60, 3), |_| rng.random::<f64>());
            let cfg = EmConfig {
                tol: 0.0,
                max_iter: 50,
                ..EmConfig::default()
            };
            let m = em_fit(x.view(), 3, seed, &cfg).unwrap();
            for w in m.trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-8, "seed {seed}: {} -> {}", w[0], w[1]);
            }
            let (resp, _) = m.responsibilities(x.view()).unwrap();
            for row in resp.outer_iter() {
                assert!((row.sum() - 1.0).abs() < 1e-9);
            }
            assert!((m.weights.sum() - 1.0).abs() < 1e-9);
            assert!(m.weights.iter().all(|&w| w > 0.0));
        }
    }

    #[test]
    fn full_covariance_fits_correlated_data() {
        let mut rng = seeding::rng(2);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let x = Array2::from_shape_fn((400, 2), |_| 0.0);
        let x = {
            let mut x = x;
            for mut row in x.outer_iter_mut() {
                let a: f64 = noise.sample(&mut rng);
                let b: f64 = noise.sample(&mut rng);
                row[0] = a;
                row[1] = 0.9 * a + 0.1 * b;
            }
            x
        };
        let cfg = EmConfig {
            covariance: CovarianceType::Full,
            ..EmConfig::default()
        };
        let full = em_fit(x.view(), 1, 0, &cfg).unwrap();
        let diag = em_fit(x.view(), 1, 0, &EmConfig::default()).unwrap();
        assert!(full.log_likelihood > diag.log_likelihood);
        let Covariances::Full(c) = &full.covariances else { panic!() };
        assert!(c[0][[0, 1]] > 0.5);
    }

    #[test]
    fn errors() {
        let x = array![[1.0], [2.0]];
        assert!(em_fit(x.view(), 3, 0, &EmConfig::default()).is_err());
        let bad = array![[1.0], [f64::NAN]];
        assert!(em_fit(bad.view(), 1, 0, &EmConfig::default()).is_err());
        let empty = Array2::<f64>::zeros((0, 2));
        assert!(select_k_bic(empty.view(), 3, 0, &EmConfig::default()).is_err());
    }

    #[test]
    fn single_sample_forces_k1() {
        let x = array![[0.5, 0.5]];
        let sel = select_k_bic(x.view(), 5, 0, &EmConfig::default()).unwrap();
        assert_eq!(sel.k, 1);
        assert_eq!(sel.table.len(), 1);
    }

    #[test]
    fn bic_picks_blob_count() {
        let one = blobs(&[[0.5, 0.5]], 500, 0.05, 1);
        assert_eq!(select_k_bic(one.view(), 5, 0, &EmConfig::default()).unwrap().k, 1);
        let three = blobs(&[[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]], 200, 0.1, 2);
        assert_eq!(select_k_bic(three.view(), 5, 0, &EmConfig::default()).unwrap().k, 3);
    }
}
