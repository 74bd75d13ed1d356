//! Goodness-of-fit metrics against ground-truth interventional samples.

use idens_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, CoreError, Result};

/// Mean log-density over a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogProb {
    pub value: f64,
    /// Set when some point had zero or negative density; `value` is then
    /// negative infinity.
    pub degenerate: bool,
}

/// `density` maps the `[m, d]` sample to log-densities in original units.
pub fn avg_log_prob(
    log_density: impl Fn(&Tensor) -> Result<Vec<f64>>,
    sample: &Tensor,
) -> Result<LogProb> {
    if sample.rows() == 0 {
        return Err(invalid("average log-probability of an empty sample"));
    }
    let lp = log_density(sample)?;
    if lp.iter().any(|v| v.is_nan()) {
        return Err(invalid("log-density evaluated to NaN"));
    }
    if lp.contains(&f64::NEG_INFINITY) {
        return Ok(LogProb {
            value: f64::NEG_INFINITY,
            degenerate: true,
        });
    }
    Ok(LogProb {
        value: lp.iter().sum::<f64>() / lp.len() as f64,
        degenerate: false,
    })
}

/// Log of possibly non-positive density values; non-positive maps to -inf.
pub fn log_density_values(d: &[f64]) -> Vec<f64> {
    d.iter()
        .map(|&v| if v > 0.0 { v.ln() } else { f64::NEG_INFINITY })
        .collect()
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Empirical Wasserstein-1 distance: the integral over `q in (0, 1)` of
/// `|F1^{-1}(q) - F2^{-1}(q)|` with right-continuous empirical quantiles.
pub fn empirical_wasserstein(s1: &[f64], s2: &[f64]) -> Result<f64> {
    if s1.is_empty() || s2.is_empty() {
        return Err(invalid("Wasserstein distance needs nonempty samples"));
    }
    if s1.iter().chain(s2).any(|v| !v.is_finite()) {
        return Err(invalid("Wasserstein distance of non-finite values"));
    }
    let (a, b) = (sorted(s1), sorted(s2));
    if a.len() == b.len() {
        return Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64);
    }
    // merge the quantile breakpoints i/n and j/m
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut q = 0.0;
    let mut total = 0.0;
    while i < n && j < m {
        let next_a = (i + 1) as f64 / n as f64;
        let next_b = (j + 1) as f64 / m as f64;
        let next = next_a.min(next_b);
        total += (next - q) * (a[i] - b[j]).abs();
        q = next;
        // integer comparison avoids float drift at shared breakpoints
        match ((i + 1) * m).cmp(&((j + 1) * n)) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
    }
    Ok(total)
}

/// Wasserstein-1 between the single column of two sample tensors.
pub fn empirical_wasserstein_tensor(s1: &Tensor, s2: &Tensor) -> Result<f64> {
    if s1.cols() != 1 || s2.cols() != 1 {
        return Err(CoreError::Unsupported(
            "Wasserstein distance is implemented for one-dimensional outcomes only".into(),
        ));
    }
    empirical_wasserstein(s1.values(), s2.values())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bandwidth {
    pub h: f64,
    /// All points coincide and `h` is zero.
    pub degenerate: bool,
}

/// Median heuristic `h = sqrt(median_{i<j} |Y_i - Y_j|^2 / 2)` over the rows
/// of `sample`. Even pair counts take the lower median.
pub fn median_bandwidth(sample: &Tensor) -> Result<Bandwidth> {
    let n = sample.rows();
    if n < 2 {
        return Err(invalid("median heuristic needs at least two points"));
    }
    let mut d2 = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (sample.row_slice(i), sample.row_slice(j));
            d2.push(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>());
        }
    }
    let k = (d2.len() - 1) / 2;
    let (_, med, _) = d2.select_nth_unstable_by(k, f64::total_cmp);
    let h = (0.5 * *med).sqrt();
    Ok(Bandwidth {
        h,
        degenerate: h == 0.0,
    })
}

/// Per-arm evaluation results for one method, seed and fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub seed: u64,
    pub fold: usize,
    pub log_prob_in: [f64; 2],
    pub log_prob_out: [f64; 2],
    /// Present when a sampler and one-dimensional outcomes are available.
    pub wasserstein_in: Option<[f64; 2]>,
    pub wasserstein_out: Option<[f64; 2]>,
    pub runtime_secs: f64,
}

impl MetricReport {
    pub const CSV_HEADER: [&'static str; 12] = [
        "method",
        "seed",
        "fold",
        "log_prob_in_0",
        "log_prob_in_1",
        "log_prob_out_0",
        "log_prob_out_1",
        "wasserstein_in_0",
        "wasserstein_in_1",
        "wasserstein_out_0",
        "wasserstein_out_1",
        "runtime_secs",
    ];

    pub fn validate(&self) -> Result<()> {
        for w in self
            .wasserstein_in
            .iter()
            .chain(&self.wasserstein_out)
            .flatten()
        {
            if !(*w >= 0.0) {
                return Err(invalid("Wasserstein distance must be nonnegative"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Flat row matching [`Self::CSV_HEADER`]; absent values are empty.
    pub fn csv_row(&self) -> Vec<String> {
        let opt = |w: Option<[f64; 2]>, i: usize| w.map(|v| v[i].to_string()).unwrap_or_default();
        vec![
            self.method.clone(),
            self.seed.to_string(),
            self.fold.to_string(),
            self.log_prob_in[0].to_string(),
            self.log_prob_in[1].to_string(),
            self.log_prob_out[0].to_string(),
            self.log_prob_out[1].to_string(),
            opt(self.wasserstein_in, 0),
            opt(self.wasserstein_in, 1),
            opt(self.wasserstein_out, 0),
            opt(self.wasserstein_out, 1),
            self.runtime_secs.to_string(),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::normal_log_pdf;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn wasserstein_hand_cases() {
        assert_eq!(empirical_wasserstein(&[0.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(
            empirical_wasserstein(&[0.0, 1.0], &[1.0, 2.0]).unwrap(),
            1.0
        );
        assert_eq!(
            empirical_wasserstein(&[3.0, 1.0], &[1.0, 3.0]).unwrap(),
            0.0
        );
        // {0} vs {0, 1}: quantiles differ by 1 on half the unit interval
        assert!((empirical_wasserstein(&[0.0], &[0.0, 1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(empirical_wasserstein(&[], &[1.0]).is_err());
    }

    #[test]
    fn wasserstein_rejects_two_dimensional() {
        let t = Tensor::zeros([3, 2]);
        assert!(matches!(
            empirical_wasserstein_tensor(&t, &t),
            Err(CoreError::Unsupported(_))
        ));
    }

    #[test]
    fn avg_log_prob_flags_zero_density() {
        let sample = Tensor::column(vec![0.0, 1.0]);
        let r = avg_log_prob(
            |s| {
                Ok(log_density_values(
                    &vec![0.5; s.rows() - 1]
                        .into_iter()
                        .chain([0.0])
                        .collect::<Vec<_>>(),
                ))
            },
            &sample,
        )
        .unwrap();
        assert!(r.degenerate && r.value == f64::NEG_INFINITY);
        let one = avg_log_prob(|_| Ok(vec![-1.0]), &Tensor::column(vec![4.0])).unwrap();
        assert_eq!(
            one,
            LogProb {
                value: -1.0,
                degenerate: false
            }
        );
        assert!(avg_log_prob(|_| Ok(vec![]), &Tensor::zeros([0, 1])).is_err());
    }

    #[test]
    fn true_density_scores_best() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s: Vec<f64> = (0..10_000)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let t = Tensor::column(s);
        let score = |mean: f64, sd: f64| {
            avg_log_prob(
                |y| {
                    Ok(y.values()
                        .iter()
                        .map(|&v| normal_log_pdf(v, mean, sd))
                        .collect())
                },
                &t,
            )
            .unwrap()
            .value
        };
        let truth = score(0.0, 1.0);
        assert!(truth > score(1.0, 1.0) && truth > score(0.0, 2.0));
        // negative entropy of N(0, 1) is -1.4189
        assert!((truth + 1.418_938_5).abs() < 3.0 * 0.71 / 100.0);
    }

    #[test]
    fn median_bandwidth_cases() {
        let h = median_bandwidth(&Tensor::column(vec![0.0, 1.0, 2.0])).unwrap();
        assert!((h.h - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9 && !h.degenerate);
        let c = median_bandwidth(&Tensor::column(vec![2.0; 4])).unwrap();
        assert!(c.degenerate && c.h == 0.0);
        assert!(median_bandwidth(&Tensor::column(vec![1.0])).is_err());
    }

    fn brute_force_bandwidth(v: &[f64]) -> f64 {
        let mut d = Vec::new();
        for i in 0..v.len() {
            for j in 0..v.len() {
                if i < j {
                    d.push((v[i] - v[j]).powi(2));
                }
            }
        }
        d.sort_by(f64::total_cmp);
        (0.5 * d[(d.len() - 1) / 2]).sqrt()
    }

    proptest! {
        #[test]
        fn median_bandwidth_matches_brute_force(v in prop::collection::vec(-50.0f64..50.0, 2..200)) {
            let h = median_bandwidth(&Tensor::column(v.clone())).unwrap().h;
            prop_assert_eq!(h, brute_force_bandwidth(&v));
        }

        #[test]
        fn median_bandwidth_scale_equivariant(v in prop::collection::vec(-5.0f64..5.0, 2..40), c in -4.0f64..4.0) {
            let h = median_bandwidth(&Tensor::column(v.clone())).unwrap().h;
            let hc = median_bandwidth(&Tensor::column(v.iter().map(|x| c * x).collect())).unwrap().h;
            prop_assert!((hc - c.abs() * h).abs() <= 1e-9 * (1.0 + hc));
        }

        #[test]
        fn wasserstein_metric_axioms(
            a in prop::collection::vec(-10.0f64..10.0, 1..30),
            b in prop::collection::vec(-10.0f64..10.0, 1..30),
        ) {
            let n = a.len().min(b.len());
            let c: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
            let (a, b) = (&a[..n], &b[..n]);
            let ab = empirical_wasserstein(a, b).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - empirical_wasserstein(b, a).unwrap()).abs() < 1e-12);
            prop_assert!(ab <= empirical_wasserstein(a, &c).unwrap() + empirical_wasserstein(&c, b).unwrap() + 1e-9);
            prop_assert_eq!(empirical_wasserstein(a, a).unwrap(), 0.0);
        }

        #[test]
        fn unequal_sizes_match_replicated_equal_sizes(
            a in prop::collection::vec(-10.0f64..10.0, 1..8),
            b in prop::collection::vec(-10.0f64..10.0, 1..8),
        ) {
            // replicating each point makes the sizes equal without changing
            // the empirical distributions
            let rep = |v: &[f64], k: usize| v.iter().flat_map(|&x| std::iter::repeat_n(x, k)).collect::<Vec<_>>();
            let direct = empirical_wasserstein(&a, &b).unwrap();
            let equal = empirical_wasserstein(&rep(&a, b.len()), &rep(&b, a.len())).unwrap();
            prop_assert!((direct - equal).abs() < 1e-9);
        }
    }

    #[test]
    fn report_rows() {
        let r = MetricReport {
            method: "infs".into(),
            seed: 1,
            fold: 0,
            log_prob_in: [-1.0, -2.0],
            log_prob_out: [-1.5, -2.5],
            wasserstein_in: None,
            wasserstein_out: Some([0.1, 0.2]),
            runtime_secs: 3.0,
        };
        let row = r.csv_row();
        assert_eq!(row.len(), MetricReport::CSV_HEADER.len());
        assert_eq!(row[7], "");
        assert_eq!(row[9], "0.1");
        let back: MetricReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        let bad = MetricReport {
            wasserstein_out: Some([-0.1, 0.0]),
            ..r
        };
        assert!(bad.validate().is_err());
    }
}
