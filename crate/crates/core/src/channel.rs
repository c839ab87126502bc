//! Synthetic fluid-antenna channel.
//!
//! Each port carries a complex gain whose in-phase and quadrature parts follow
//! an AR(1) Gauss-Markov recursion in time,
//! `h_t = rho_t * h_{t-1} + sqrt(1 - rho_t^2) * w_t`,
//! with innovations that are exponentially correlated across ports
//! (`corr(i, j) = rho_s^|i-j|`). Supervised samples are windows of port
//! magnitudes labelled with the strongest port one step after the window.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{AedError, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub n_ports: usize,
    /// History length K, in time steps.
    pub window: usize,
    pub rho_t: f64,
    pub rho_s: f64,
    /// Length of the training trace.
    pub trace_len: usize,
    /// Length of the held-out digital-twin trace used for policy validation.
    pub dt_len: usize,
    /// Length of the live evaluation trace scored at the end of every epoch.
    pub eval_len: usize,
    /// Std of the Gaussian measurement noise added to magnitudes.
    pub noise_floor: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            n_ports: 8,
            window: 4,
            rho_t: 0.98,
            rho_s: 0.7,
            trace_len: 24_000,
            dt_len: 6_000,
            eval_len: 3_500,
            noise_floor: 0.01,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_ports < 2 {
            return Err(AedError::config("env.n_ports", "must be at least 2"));
        }
        if self.window < 1 {
            return Err(AedError::config("env.window", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.rho_t) {
            return Err(AedError::config("env.rho_t", "must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.rho_s) {
            return Err(AedError::config("env.rho_s", "must lie in [0, 1)"));
        }
        for (field, len) in [
            ("env.trace_len", self.trace_len),
            ("env.dt_len", self.dt_len),
            ("env.eval_len", self.eval_len),
        ] {
            if len <= self.window + 1 {
                return Err(AedError::config(field, "must exceed window + 1"));
            }
        }
        if !(self.noise_floor >= 0.0 && self.noise_floor.is_finite()) {
            return Err(AedError::config(
                "env.noise_floor",
                "must be a finite nonnegative value",
            ));
        }
        Ok(())
    }

    /// Same process, different trace length.
    pub fn with_len(&self, trace_len: usize) -> Self {
        Self {
            trace_len,
            ..self.clone()
        }
    }

    pub fn n_features(&self) -> usize {
        self.window * self.n_ports
    }
}

/// Time-indexed per-port gains, stored row-major (`t * n_ports + p`).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTrace {
    pub n_ports: usize,
    pub gains: Vec<Complex64>,
    pub mags: Vec<f64>,
    pub seed: u64,
}

impl ChannelTrace {
    pub fn len(&self) -> usize {
        self.mags.len() / self.n_ports
    }

    pub fn is_empty(&self) -> bool {
        self.mags.is_empty()
    }

    pub fn gains_row(&self, t: usize) -> &[Complex64] {
        &self.gains[t * self.n_ports..(t + 1) * self.n_ports]
    }

    pub fn mags_row(&self, t: usize) -> &[f64] {
        &self.mags[t * self.n_ports..(t + 1) * self.n_ports]
    }
}

/// Supervised port-prediction samples, features stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n_features: usize,
    pub n_classes: usize,
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(n_features: usize, n_classes: usize, features: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if features.len() != n_features * labels.len() {
            return Err(AedError::argument(format!(
                "feature buffer holds {} values, expected {} x {}",
                features.len(),
                labels.len(),
                n_features
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(AedError::argument(format!(
                "label {bad} out of range for {n_classes} classes"
            )));
        }
        Ok(Self {
            n_features,
            n_classes,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    /// Evenly strided subset of at most `max` samples, in original order.
    pub fn subsample(&self, max: usize) -> Dataset {
        if max == 0 || max >= self.len() {
            return self.clone();
        }
        let mut features = Vec::with_capacity(max * self.n_features);
        let mut labels = Vec::with_capacity(max);
        for j in 0..max {
            let i = j * self.len() / max;
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            n_features: self.n_features,
            n_classes: self.n_classes,
            features,
            labels,
        }
    }

    /// Share of the most frequent label; the accuracy of a constant predictor.
    pub fn majority_share(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let mut counts = vec![0usize; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        *counts.iter().max().unwrap() as f64 / self.len() as f64
    }
}

/// Draws one vector of unit-variance noise with `corr(i, j) = rho_s^|i-j|`.
fn correlated_noise<R: Rng>(rng: &mut R, rho_s: f64, out: &mut [f64]) {
    let innov = (1.0 - rho_s * rho_s).sqrt();
    let mut prev: f64 = rng.sample(StandardNormal);
    out[0] = prev;
    for v in out.iter_mut().skip(1) {
        let z: f64 = rng.sample(StandardNormal);
        prev = rho_s * prev + innov * z;
        *v = prev;
    }
}

pub fn generate_trace(cfg: &EnvConfig, seed: u64) -> Result<ChannelTrace> {
    cfg.validate()?;
    let n = cfg.n_ports;
    let t_len = cfg.trace_len;
    let mut rng = seed::rng(seed);
    let innov = (1.0 - cfg.rho_t * cfg.rho_t).max(0.0).sqrt();

    let mut gains = Vec::with_capacity(t_len * n);
    let mut w_i = vec![0.0; n];
    let mut w_q = vec![0.0; n];

    // Stationary start: the marginal of the recursion is the innovation law itself.
    correlated_noise(&mut rng, cfg.rho_s, &mut w_i);
    correlated_noise(&mut rng, cfg.rho_s, &mut w_q);
    gains.extend(w_i.iter().zip(&w_q).map(|(&i, &q)| Complex64::new(i, q)));

    for t in 1..t_len {
        correlated_noise(&mut rng, cfg.rho_s, &mut w_i);
        correlated_noise(&mut rng, cfg.rho_s, &mut w_q);
        for p in 0..n {
            let prev = gains[(t - 1) * n + p];
            gains.push(Complex64::new(
                cfg.rho_t * prev.re + innov * w_i[p],
                cfg.rho_t * prev.im + innov * w_q[p],
            ));
        }
    }

    let mags = gains
        .iter()
        .map(|g| {
            let m = (g.re * g.re + g.im * g.im).sqrt();
            if cfg.noise_floor > 0.0 {
                let e: f64 = rng.sample(StandardNormal);
                (m + cfg.noise_floor * e).max(0.0)
            } else {
                m
            }
        })
        .collect();

    Ok(ChannelTrace {
        n_ports: n,
        gains,
        mags,
        seed,
    })
}

/// Index of the largest magnitude; ties go to the lowest index.
pub fn best_port(mags_row: &[f64]) -> Result<usize> {
    if mags_row.is_empty() {
        return Err(AedError::argument("best_port of an empty row"));
    }
    let mut best = 0;
    for (i, &v) in mags_row.iter().enumerate().skip(1) {
        if v > mags_row[best] {
            best = i;
        }
    }
    Ok(best)
}

pub fn make_dataset(trace: &ChannelTrace, window: usize) -> Result<Dataset> {
    let t_len = trace.len();
    if window == 0 || t_len <= window {
        return Err(AedError::argument(format!(
            "trace of length {t_len} is too short for window {window}"
        )));
    }
    let n = trace.n_ports;
    let m = t_len - window;
    let mut features = Vec::with_capacity(m * window * n);
    let mut labels = Vec::with_capacity(m);
    for i in 0..m {
        features.extend_from_slice(&trace.mags[i * n..(i + window) * n]);
        labels.push(best_port(trace.mags_row(i + window))?);
    }
    Dataset::new(window * n, n, features, labels)
}

/// Conditional mean of the gains `horizon` steps past the end of the trace.
pub fn dt_forecast(trace: &ChannelTrace, cfg: &EnvConfig, horizon: u32) -> Result<Vec<Complex64>> {
    if trace.is_empty() || trace.n_ports != cfg.n_ports {
        return Err(AedError::argument("trace does not match the environment config"));
    }
    let decay = cfg.rho_t.powi(horizon as i32);
    Ok(trace.gains_row(trace.len() - 1).iter().map(|g| g * decay).collect())
}

/// Per-dimension z-score transform fitted on clean training features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(data: &Dataset) -> Result<Self> {
        if data.is_empty() {
            return Err(AedError::argument("cannot standardize an empty dataset"));
        }
        let d = data.n_features;
        let count = data.len() as f64;
        let mut mean = vec![0.0; d];
        for i in 0..data.len() {
            for (m, &x) in mean.iter_mut().zip(data.row(i)) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; d];
        for i in 0..data.len() {
            for ((v, &x), &m) in var.iter_mut().zip(data.row(i)).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var.iter().map(|v| (v / count).sqrt().max(1e-9)).collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, data: &Dataset) -> Dataset {
        let d = data.n_features;
        let features = data
            .features
            .iter()
            .enumerate()
            .map(|(k, &x)| (x - self.mean[k % d]) / self.std[k % d])
            .collect();
        Dataset {
            features,
            ..data.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn small_cfg(len: usize) -> EnvConfig {
        EnvConfig {
            trace_len: len,
            ..EnvConfig::default()
        }
    }

    fn lag1_autocorr(xs: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
        let cov: f64 = xs.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
        cov / var
    }

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    fn column(trace: &ChannelTrace, p: usize, f: impl Fn(Complex64) -> f64) -> Vec<f64> {
        (0..trace.len()).map(|t| f(trace.gains_row(t)[p])).collect()
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small_cfg(500);
        assert_eq!(generate_trace(&cfg, 9).unwrap(), generate_trace(&cfg, 9).unwrap());
        assert_ne!(
            generate_trace(&cfg, 9).unwrap().gains,
            generate_trace(&cfg, 10).unwrap().gains
        );
    }

    #[test]
    fn memoryless_process_has_no_lag1_correlation() {
        let cfg = EnvConfig {
            rho_t: 0.0,
            ..small_cfg(100_000)
        };
        let trace = generate_trace(&cfg, 3).unwrap();
        for p in 0..cfg.n_ports {
            let r = lag1_autocorr(&column(&trace, p, |g| g.re));
            assert!(r.abs() <= 0.02, "port {p}: lag-1 autocorrelation {r}");
        }
    }

    #[test]
    fn unit_correlation_freezes_the_gains() {
        let cfg = EnvConfig {
            rho_t: 1.0,
            noise_floor: 0.0,
            ..small_cfg(50)
        };
        let trace = generate_trace(&cfg, 5).unwrap();
        for t in 1..trace.len() {
            assert_eq!(trace.gains_row(t), trace.gains_row(0));
        }
    }

    #[test]
    fn stationary_variance_and_spatial_correlation() {
        // Moderate temporal correlation keeps the effective sample size large
        // enough for a 5% variance band.
        let cfg = EnvConfig {
            noise_floor: 0.0,
            rho_t: 0.5,
            ..small_cfg(200_000)
        };
        let trace = generate_trace(&cfg, 11).unwrap();
        for p in 0..cfg.n_ports {
            for part in [|g: Complex64| g.re, |g: Complex64| g.im] {
                let xs = column(&trace, p, part);
                let n = xs.len() as f64;
                let mean = xs.iter().sum::<f64>() / n;
                let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                assert!((var - 1.0).abs() <= 0.05, "port {p}: variance {var}");
            }
        }
        for p in 0..cfg.n_ports - 1 {
            let c = corr(&column(&trace, p, |g| g.re), &column(&trace, p + 1, |g| g.re));
            assert!((c - cfg.rho_s).abs() <= 0.05, "ports {p},{}: corr {c}", p + 1);
        }
    }

    #[test]
    fn noiseless_mags_are_gain_moduli() {
        let cfg = EnvConfig {
            noise_floor: 0.0,
            ..small_cfg(200)
        };
        let trace = generate_trace(&cfg, 1).unwrap();
        for (g, m) in trace.gains.iter().zip(&trace.mags) {
            assert_eq!(*m, (g.re * g.re + g.im * g.im).sqrt());
        }
    }

    #[test]
    fn invalid_config_names_the_field() {
        let cfg = EnvConfig {
            rho_s: 1.0,
            ..EnvConfig::default()
        };
        match generate_trace(&cfg, 0) {
            Err(AedError::Config { field, .. }) => assert_eq!(field, "env.rho_s"),
            other => panic!("unexpected {other:?}"),
        }
        let cfg = EnvConfig {
            n_ports: 1,
            ..EnvConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(AedError::Config { field, .. }) if field == "env.n_ports"));
    }

    #[test]
    fn best_port_examples() {
        assert_eq!(best_port(&[0.1, 0.9, 0.3]).unwrap(), 1);
        assert_eq!(best_port(&[0.5, 0.5]).unwrap(), 0);
        assert!(best_port(&[]).is_err());

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let row: Vec<f64> = (0..8).map(|_| rng.random_range(0..4) as f64).collect();
            let mut expect = 0;
            for i in 0..row.len() {
                if row.iter().all(|&v| v <= row[i]) {
                    expect = i;
                    break;
                }
            }
            assert_eq!(best_port(&row).unwrap(), expect);
        }
    }

    fn hand_trace(mags: &[f64], n_ports: usize) -> ChannelTrace {
        ChannelTrace {
            n_ports,
            gains: mags.iter().map(|&m| Complex64::new(m, 0.0)).collect(),
            mags: mags.to_vec(),
            seed: 0,
        }
    }

    #[test]
    fn dataset_windowing() {
        // 3 steps, 2 ports, K = 2.
        let trace = hand_trace(&[0.2, 0.4, 0.5, 0.1, 0.3, 0.9], 2);
        let ds = make_dataset(&trace, 2).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.row(0), &[0.2, 0.4, 0.5, 0.1]);
        assert_eq!(ds.labels, vec![1]);

        let trace = generate_trace(&small_cfg(100), 2).unwrap();
        let ds = make_dataset(&trace, 4).unwrap();
        assert_eq!(ds.len(), 96);
        for i in 0..ds.len() {
            let expect: Vec<f64> = (i..i + 4).flat_map(|t| trace.mags_row(t).to_vec()).collect();
            assert_eq!(ds.row(i), expect.as_slice());
            assert!(ds.labels[i] < 8);
        }

        let short = generate_trace(&small_cfg(6), 2).unwrap();
        assert_eq!(make_dataset(&short, 5).unwrap().len(), 1);
        assert!(make_dataset(&short, 6).is_err());
    }

    #[test]
    fn forecast_examples() {
        let cfg = EnvConfig {
            rho_t: 0.0,
            ..small_cfg(20)
        };
        let trace = generate_trace(&cfg, 4).unwrap();
        assert_eq!(dt_forecast(&trace, &cfg, 0).unwrap(), trace.gains_row(19));
        assert!(dt_forecast(&trace, &cfg, 1).unwrap().iter().all(|g| g.norm() == 0.0));
    }

    #[test]
    fn forecast_matches_monte_carlo_mean() {
        let cfg = EnvConfig {
            rho_t: 0.9,
            ..small_cfg(30)
        };
        let trace = generate_trace(&cfg, 8).unwrap();
        let horizon = 3;
        let forecast = dt_forecast(&trace, &cfg, horizon).unwrap();

        // Independent continuation of the recursion from the last observed state.
        let runs = 100_000;
        let innov = (1.0f64 - 0.81).sqrt();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let start = trace.gains_row(trace.len() - 1).to_vec();
        let mut sum = vec![Complex64::new(0.0, 0.0); cfg.n_ports];
        let mut wi = vec![0.0; cfg.n_ports];
        let mut wq = vec![0.0; cfg.n_ports];
        for _ in 0..runs {
            let mut h = start.clone();
            for _ in 0..horizon {
                correlated_noise(&mut rng, cfg.rho_s, &mut wi);
                correlated_noise(&mut rng, cfg.rho_s, &mut wq);
                for p in 0..cfg.n_ports {
                    h[p] = h[p] * 0.9 + Complex64::new(innov * wi[p], innov * wq[p]);
                }
            }
            for p in 0..cfg.n_ports {
                sum[p] += h[p];
            }
        }
        let sd = (1.0 - 0.9f64.powi(6)).sqrt();
        let band = 2.576 * sd / (runs as f64).sqrt();
        for p in 0..cfg.n_ports {
            let mc = sum[p] / runs as f64;
            assert!((mc.re - forecast[p].re).abs() <= band, "port {p} re");
            assert!((mc.im - forecast[p].im).abs() <= band, "port {p} im");
        }
    }

    #[test]
    fn subsample_and_standardize() {
        let trace = generate_trace(&small_cfg(400), 6).unwrap();
        let ds = make_dataset(&trace, 4).unwrap();
        let sub = ds.subsample(100);
        assert_eq!(sub.len(), 100);
        assert_eq!(sub.row(1), ds.row(3));

        let z = Standardizer::fit(&ds).unwrap();
        let norm = z.apply(&ds);
        let refit = Standardizer::fit(&norm).unwrap();
        assert!(refit.mean.iter().all(|m| m.abs() < 1e-9));
        assert!(refit.std.iter().all(|s| (s - 1.0).abs() < 1e-9));
    }
}
