//! Streaming K-component Gaussian mixture estimate of the score
//! distribution. One E/M pass per training batch, blended into the running
//! state with damping so the fit tracks the continually-updated projection
//! without forgetting history.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::util::normal_cdf;

pub const VAR_FLOOR: f64 = 1e-4;
pub const EMPTY_RESP: f64 = 1e-8;
pub const STEADY_TOL: f64 = 1e-3;
pub const STEADY_RUN: u32 = 50;
pub const DEFAULT_K: usize = 3;
pub const DEFAULT_ETA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GmmState {
    /// mixture weights, simplex
    pub weights: Vec<f64>,
    /// component means, stored ascending
    pub means: Vec<f64>,
    /// component variances, floored at [`VAR_FLOOR`]
    pub variances: Vec<f64>,
    pub iterations_seen: u64,
    pub steady: bool,
    /// consecutive damped updates with max parameter change below tolerance
    pub stable_run: u32,
}

/// Posterior membership probabilities, one row per sample.
#[derive(Debug, Clone)]
pub struct Responsibilities {
    pub alpha: Array2<f64>,
}

pub fn init_gmm(k: usize) -> Result<GmmState> {
    if k < 1 {
        return Err(Error::InvalidConfig("gmm needs at least one component".into()));
    }
    Ok(GmmState {
        weights: vec![1.0 / k as f64; k],
        means: (0..k).map(|i| (i as f64 + 0.5) / k as f64).collect(),
        variances: vec![0.05; k],
        iterations_seen: 0,
        steady: false,
        stable_run: 0,
    })
}

fn log_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - d * d / (2.0 * var)
}

impl GmmState {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn sort_components(&mut self) {
        let mut idx: Vec<usize> = (0..self.k()).collect();
        idx.sort_by(|&a, &b| self.means[a].partial_cmp(&self.means[b]).unwrap());
        self.weights = idx.iter().map(|&i| self.weights[i]).collect();
        self.means = idx.iter().map(|&i| self.means[i]).collect();
        self.variances = idx.iter().map(|&i| self.variances[i]).collect();
    }

    /// Posterior of each sample under each component, row-normalized in
    /// log space.
    pub fn e_step(&self, samples: &[f64]) -> Responsibilities {
        assert!(!samples.is_empty(), "e_step on empty sample set");
        let k = self.k();
        let mut alpha = Array2::<f64>::zeros((samples.len(), k));
        for (i, &m) in samples.iter().enumerate() {
            let mut logs = vec![0.0f64; k];
            let mut max = f64::NEG_INFINITY;
            for j in 0..k {
                let lw = if self.weights[j] > 0.0 { self.weights[j].ln() } else { f64::NEG_INFINITY };
                logs[j] = lw + log_normal_pdf(m, self.means[j], self.variances[j]);
                max = max.max(logs[j]);
            }
            if max == f64::NEG_INFINITY {
                for j in 0..k {
                    alpha[[i, j]] = 1.0 / k as f64;
                }
                continue;
            }
            let mut z = 0.0;
            for j in 0..k {
                let e = (logs[j] - max).exp();
                alpha[[i, j]] = e;
                z += e;
            }
            for j in 0..k {
                alpha[[i, j]] /= z;
            }
        }
        Responsibilities { alpha }
    }

    /// Closed-form maximization on the current batch. Components with
    /// negligible responsibility mass keep their previous parameters.
    pub fn m_step(&self, resp: &Responsibilities, samples: &[f64]) -> GmmState {
        let n = samples.len();
        assert_eq!(resp.alpha.nrows(), n, "responsibilities/samples length mismatch");
        let k = self.k();
        let mut weights = vec![0.0f64; k];
        let mut means = vec![0.0f64; k];
        let mut variances = vec![0.0f64; k];
        for j in 0..k {
            let mut nk = 0.0;
            let mut sum = 0.0;
            for i in 0..n {
                nk += resp.alpha[[i, j]];
                sum += resp.alpha[[i, j]] * samples[i];
            }
            if nk < EMPTY_RESP {
                weights[j] = self.weights[j];
                means[j] = self.means[j];
                variances[j] = self.variances[j];
                continue;
            }
            let mu = sum / nk;
            let mut sq = 0.0;
            for i in 0..n {
                let d = samples[i] - mu;
                sq += resp.alpha[[i, j]] * d * d;
            }
            weights[j] = nk / n as f64;
            means[j] = mu;
            variances[j] = (sq / nk).max(VAR_FLOOR);
        }
        let wsum: f64 = weights.iter().sum();
        for w in weights.iter_mut() {
            *w /= wsum;
        }
        let mut out = GmmState {
            weights,
            means,
            variances,
            iterations_seen: self.iterations_seen,
            steady: false,
            stable_run: 0,
        };
        out.sort_components();
        out
    }

    /// Blend a batch estimate into the running state:
    /// `theta <- (1 - eta) * theta_old + eta * theta_batch`, components
    /// matched by sorted means. Tracks the steady-state flag.
    pub fn damped_update(&self, batch: &GmmState, eta: f64) -> Result<GmmState> {
        if batch.k() != self.k() {
            return Err(Error::DimensionMismatch(format!(
                "component count mismatch {} vs {}",
                self.k(),
                batch.k()
            )));
        }
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::InvalidConfig(format!("eta must be in (0, 1], got {eta}")));
        }
        let k = self.k();
        let (mut weights, mut means, mut variances);
        if eta == 1.0 {
            weights = batch.weights.clone();
            means = batch.means.clone();
            variances = batch.variances.clone();
        } else {
            weights = vec![0.0; k];
            means = vec![0.0; k];
            variances = vec![0.0; k];
            for j in 0..k {
                weights[j] = (1.0 - eta) * self.weights[j] + eta * batch.weights[j];
                means[j] = (1.0 - eta) * self.means[j] + eta * batch.means[j];
                variances[j] = ((1.0 - eta) * self.variances[j] + eta * batch.variances[j]).max(VAR_FLOOR);
            }
            let wsum: f64 = weights.iter().sum();
            for w in weights.iter_mut() {
                *w /= wsum;
            }
        }
        let mut out = GmmState {
            weights,
            means,
            variances,
            iterations_seen: self.iterations_seen + 1,
            steady: false,
            stable_run: 0,
        };
        out.sort_components();

        let mut max_change = 0.0f64;
        for j in 0..k {
            max_change = max_change
                .max((out.weights[j] - self.weights[j]).abs())
                .max((out.means[j] - self.means[j]).abs())
                .max((out.variances[j] - self.variances[j]).abs());
        }
        out.stable_run = if max_change < STEADY_TOL { self.stable_run + 1 } else { 0 };
        out.steady = self.steady || out.stable_run >= STEADY_RUN;
        Ok(out)
    }

    /// Mixture density.
    pub fn pdf(&self, x: f64) -> f64 {
        let mut p = 0.0;
        for j in 0..self.k() {
            p += self.weights[j] * log_normal_pdf(x, self.means[j], self.variances[j]).exp();
        }
        p
    }

    /// Mixture CDF.
    pub fn cdf(&self, x: f64) -> f64 {
        let mut p = 0.0;
        for j in 0..self.k() {
            p += self.weights[j] * normal_cdf((x - self.means[j]) / self.variances[j].sqrt());
        }
        p
    }

    /// Batch mean log-likelihood.
    pub fn log_likelihood(&self, samples: &[f64]) -> f64 {
        let k = self.k();
        let mut total = 0.0;
        for &m in samples {
            let mut max = f64::NEG_INFINITY;
            let mut logs = vec![0.0f64; k];
            for j in 0..k {
                let lw = if self.weights[j] > 0.0 { self.weights[j].ln() } else { f64::NEG_INFINITY };
                logs[j] = lw + log_normal_pdf(m, self.means[j], self.variances[j]);
                max = max.max(logs[j]);
            }
            let z: f64 = logs.iter().map(|&l| (l - max).exp()).sum();
            total += max + z.ln();
        }
        total / samples.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::{rng_for, Role};
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn init_values() {
        let g = init_gmm(3).unwrap();
        assert!((g.means[0] - 1.0 / 6.0).abs() < 1e-12);
        assert!((g.means[1] - 0.5).abs() < 1e-12);
        assert!((g.means[2] - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(g.weights, vec![1.0 / 3.0; 3]);
        assert_eq!(g.variances, vec![0.05; 3]);
        assert!(!g.steady);

        let g1 = init_gmm(1).unwrap();
        assert_eq!(g1.means, vec![0.5]);
        assert_eq!(g1.weights, vec![1.0]);

        assert!(init_gmm(0).is_err());
    }

    #[test]
    fn e_step_single_component_is_one() {
        let g = init_gmm(1).unwrap();
        let resp = g.e_step(&[0.1, 0.5, 0.9]);
        for i in 0..3 {
            assert_eq!(resp.alpha[[i, 0]], 1.0);
        }
    }

    #[test]
    fn e_step_sample_at_mean_of_separated_component() {
        let g = GmmState {
            weights: vec![0.5, 0.5],
            means: vec![0.2, 0.8],
            variances: vec![0.001, 0.001],
            iterations_seen: 0,
            steady: false,
            stable_run: 0,
        };
        let resp = g.e_step(&[0.2]);
        assert!(resp.alpha[[0, 0]] > 0.99, "alpha {}", resp.alpha[[0, 0]]);
    }

    #[test]
    fn e_step_rows_sum_to_one() {
        let g = init_gmm(3).unwrap();
        let mut rng = rng_for(1, 0, Role::Other(20));
        let samples: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
        let resp = g.e_step(&samples);
        for i in 0..samples.len() {
            let s: f64 = (0..3).map(|j| resp.alpha[[i, j]]).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn m_step_single_component_closed_form() {
        let g = init_gmm(1).unwrap();
        let samples = [0.1, 0.4, 0.7, 0.2];
        let resp = g.e_step(&samples);
        let est = g.m_step(&resp, &samples);
        let mean = samples.iter().sum::<f64>() / 4.0;
        let var = samples.iter().map(|&s| (s - mean) * (s - mean)).sum::<f64>() / 4.0;
        assert!((est.means[0] - mean).abs() < 1e-12);
        assert!((est.variances[0] - var).abs() < 1e-12);
        assert_eq!(est.weights[0], 1.0);
    }

    #[test]
    fn m_step_hard_labels_match_group_by_oracle() {
        let g = init_gmm(2).unwrap();
        let samples = [0.1, 0.12, 0.14, 0.8, 0.9];
        let mut alpha = Array2::<f64>::zeros((5, 2));
        for i in 0..3 {
            alpha[[i, 0]] = 1.0;
        }
        for i in 3..5 {
            alpha[[i, 1]] = 1.0;
        }
        let est = g.m_step(&Responsibilities { alpha }, &samples);
        let g0: Vec<f64> = samples[..3].to_vec();
        let g1: Vec<f64> = samples[3..].to_vec();
        let (m0, v0) = crate::util::mean_var(&g0);
        let (m1, v1) = crate::util::mean_var(&g1);
        assert!((est.means[0] - m0).abs() < 1e-12);
        assert!((est.means[1] - m1).abs() < 1e-12);
        assert!((est.variances[0] - v0.max(VAR_FLOOR)).abs() < 1e-12);
        assert!((est.variances[1] - v1.max(VAR_FLOOR)).abs() < 1e-12);
        assert!((est.weights[0] - 0.6).abs() < 1e-12);
    }

    /// Plain direct-space EM reference, no log-space tricks.
    fn reference_em_step(g: &GmmState, samples: &[f64]) -> GmmState {
        let k = g.k();
        let n = samples.len();
        let mut alpha = vec![vec![0.0f64; k]; n];
        for (i, &m) in samples.iter().enumerate() {
            let mut z = 0.0;
            for j in 0..k {
                let var = g.variances[j];
                let p = g.weights[j] * (1.0 / (2.0 * std::f64::consts::PI * var).sqrt())
                    * (-(m - g.means[j]) * (m - g.means[j]) / (2.0 * var)).exp();
                alpha[i][j] = p;
                z += p;
            }
            for j in 0..k {
                alpha[i][j] /= z;
            }
        }
        let mut weights = vec![0.0; k];
        let mut means = vec![0.0; k];
        let mut variances = vec![0.0; k];
        for j in 0..k {
            let nk: f64 = (0..n).map(|i| alpha[i][j]).sum();
            let mu: f64 = (0..n).map(|i| alpha[i][j] * samples[i]).sum::<f64>() / nk;
            let var: f64 = (0..n).map(|i| alpha[i][j] * (samples[i] - mu) * (samples[i] - mu)).sum::<f64>() / nk;
            weights[j] = nk / n as f64;
            means[j] = mu;
            variances[j] = var.max(VAR_FLOOR);
        }
        let mut out = GmmState { weights, means, variances, iterations_seen: 0, steady: false, stable_run: 0 };
        out.sort_components();
        out
    }

    #[test]
    fn one_em_step_matches_reference() {
        let mut rng = rng_for(42, 0, Role::Other(21));
        let g = init_gmm(3).unwrap();
        for _ in 0..5 {
            let samples: Vec<f64> = (0..500).map(|_| rng.random::<f64>()).collect();
            let resp = g.e_step(&samples);
            let ours = g.m_step(&resp, &samples);
            let reference = reference_em_step(&g, &samples);
            for j in 0..3 {
                assert!((ours.means[j] - reference.means[j]).abs() < 1e-8);
                assert!((ours.variances[j] - reference.variances[j]).abs() < 1e-8);
                assert!((ours.weights[j] - reference.weights[j]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn em_step_never_decreases_likelihood() {
        let mut rng = rng_for(7, 0, Role::Other(22));
        let normal = Normal::new(0.4f64, 0.15).unwrap();
        for trial in 0..5 {
            let samples: Vec<f64> = (0..800)
                .map(|_| normal.sample(&mut rng).clamp(0.0, 1.0))
                .collect();
            let mut g = init_gmm(3).unwrap();
            let mut prev = g.log_likelihood(&samples);
            for _ in 0..10 {
                let resp = g.e_step(&samples);
                let est = g.m_step(&resp, &samples);
                g = g.damped_update(&est, 1.0).unwrap();
                let ll = g.log_likelihood(&samples);
                assert!(ll >= prev - 1e-10, "trial {trial}: {ll} < {prev}");
                prev = ll;
            }
        }
    }

    #[test]
    fn damped_update_endpoints() {
        let old = init_gmm(3).unwrap();
        let mut rng = rng_for(9, 0, Role::Other(23));
        let samples: Vec<f64> = (0..300).map(|_| rng.random::<f64>()).collect();
        let resp = old.e_step(&samples);
        let batch = old.m_step(&resp, &samples);

        let full = old.damped_update(&batch, 1.0).unwrap();
        assert_eq!(full.means, batch.means);
        assert_eq!(full.variances, batch.variances);
        assert_eq!(full.weights, batch.weights);

        // eta = 0 is rejected (frozen state is expressed by not updating);
        // a tiny eta stays near the old state instead
        assert!(old.damped_update(&batch, 0.0).is_err());
        let tiny = old.damped_update(&batch, 1e-12).unwrap();
        for j in 0..3 {
            assert!((tiny.means[j] - old.means[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn invariants_after_updates() {
        let mut rng = rng_for(11, 0, Role::Other(24));
        let mut g = init_gmm(3).unwrap();
        for _ in 0..200 {
            let samples: Vec<f64> = (0..256).map(|_| rng.random::<f64>()).collect();
            let resp = g.e_step(&samples);
            let est = g.m_step(&resp, &samples);
            g = g.damped_update(&est, 0.05).unwrap();
            let ws: f64 = g.weights.iter().sum();
            assert!((ws - 1.0).abs() < 1e-9);
            for j in 0..3 {
                assert!(g.variances[j] >= VAR_FLOOR);
                if j > 0 {
                    assert!(g.means[j] >= g.means[j - 1]);
                }
            }
        }
    }

    #[test]
    fn streaming_fit_recovers_mixture() {
        let mut rng = rng_for(5, 0, Role::Other(25));
        let true_w = [0.3, 0.7];
        let true_mu = [0.25, 0.75];
        let true_sd = [0.05, 0.06];
        let mut g = init_gmm(2).unwrap();
        for _ in 0..600 {
            let samples: Vec<f64> = (0..1024)
                .map(|_| {
                    let u: f64 = rng.random();
                    let c = if u < true_w[0] { 0 } else { 1 };
                    let n = Normal::new(true_mu[c], true_sd[c]).unwrap();
                    let x: f64 = n.sample(&mut rng);
                    x.clamp(0.0, 1.0)
                })
                .collect();
            let resp = g.e_step(&samples);
            let est = g.m_step(&resp, &samples);
            g = g.damped_update(&est, 0.05).unwrap();
        }
        for j in 0..2 {
            assert!((g.means[j] - true_mu[j]).abs() < 0.03, "mean {} vs {}", g.means[j], true_mu[j]);
            assert!((g.weights[j] - true_w[j]).abs() < 0.05, "weight {} vs {}", g.weights[j], true_w[j]);
        }
    }

    #[test]
    fn steady_flag_on_repeated_batch() {
        // feeding the same batch makes the damped state converge
        // geometrically, so the change eventually stays under tolerance
        // for the required run length
        let mut rng = rng_for(6, 0, Role::Other(26));
        let samples: Vec<f64> = (0..512).map(|_| rng.random::<f64>()).collect();
        let mut g = init_gmm(3).unwrap();
        let mut steady_at = None;
        for it in 0..500 {
            let resp = g.e_step(&samples);
            let est = g.m_step(&resp, &samples);
            g = g.damped_update(&est, 0.05).unwrap();
            if g.steady && steady_at.is_none() {
                steady_at = Some(it);
            }
        }
        let at = steady_at.expect("steady state never reached");
        assert!(at >= STEADY_RUN as usize - 1, "steady too early at {at}");
    }

    #[test]
    fn pdf_reference_and_quadrature() {
        let g = GmmState {
            weights: vec![1.0],
            means: vec![0.0],
            variances: vec![1.0],
            iterations_seen: 0,
            steady: false,
            stable_run: 0,
        };
        assert!((g.pdf(0.0) - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12);

        let g3 = GmmState {
            weights: vec![0.2, 0.5, 0.3],
            means: vec![0.2, 0.5, 0.8],
            variances: vec![0.01, 0.02, 0.01],
            iterations_seen: 0,
            steady: false,
            stable_run: 0,
        };
        // trapezoid over [-5, 6]
        let n = 200_000;
        let (a, b) = (-5.0, 6.0);
        let h = (b - a) / n as f64;
        let mut integral = 0.5 * (g3.pdf(a) + g3.pdf(b));
        for i in 1..n {
            let x = a + i as f64 * h;
            let p = g3.pdf(x);
            assert!(p >= 0.0);
            integral += p;
        }
        integral *= h;
        assert!((integral - 1.0).abs() < 1e-3, "integral {integral}");
    }
}
