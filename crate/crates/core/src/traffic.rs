//! Per-tunnel offered traffic: clipped noisy sinusoids with per-tunnel phase
//! shifts, evaluated as a pure function of `(seed, tunnel, t)`.

use std::f64::consts::TAU;
use std::io::{Read, Write};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

const TRAFFIC_STREAM: u64 = 0x7261_6666_6963;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficConfig {
    /// Mean offered rate, Mbps.
    pub base: f64,
    /// Sinusoid amplitude, Mbps.
    pub amplitude: f64,
    /// Steps per cycle.
    pub period: u64,
    /// Standard deviation of the additive Gaussian noise, Mbps.
    pub noise_sd: f64,
    /// Per-tunnel phase in radians. `None` spreads phases evenly:
    /// `2*pi*k/K`.
    pub phases: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            base: 2.5,
            amplitude: 2.0,
            period: 500,
            noise_sd: 0.2,
            phases: None,
            seed: 0,
        }
    }
}

impl TrafficConfig {
    pub fn validate(&self, n_tunnels: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.base.is_finite() && self.base >= 0.0) {
            return bad(format!("traffic base {} must be >= 0", self.base));
        }
        if !(self.amplitude.is_finite() && self.amplitude >= 0.0) {
            return bad(format!("traffic amplitude {} must be >= 0", self.amplitude));
        }
        if self.period == 0 {
            return bad("traffic period must be >= 1".into());
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return bad(format!("traffic noise_sd {} must be >= 0", self.noise_sd));
        }
        if let Some(p) = &self.phases {
            if p.len() != n_tunnels {
                return Err(Error::DimensionMismatch {
                    context: "traffic phases",
                    expected: n_tunnels,
                    actual: p.len(),
                });
            }
        }
        Ok(())
    }

    pub fn phase(&self, k: usize, n_tunnels: usize) -> f64 {
        match &self.phases {
            Some(p) => p[k],
            None => TAU * k as f64 / n_tunnels as f64,
        }
    }

    /// Offered rate of tunnel `k` at step `t`.
    pub fn demand(&self, k: usize, n_tunnels: usize, t: u64) -> f64 {
        // Reducing t modulo the period keeps noise-free traces bitwise periodic.
        let cycle = (t % self.period) as f64 / self.period as f64;
        let mut d = self.base + self.amplitude * (TAU * cycle + self.phase(k, n_tunnels)).sin();
        if self.noise_sd > 0.0 {
            let noise = Normal::new(0.0, self.noise_sd).expect("noise_sd validated");
            d += noise.sample(&mut rng::keyed(&[TRAFFIC_STREAM, self.seed, k as u64, t]));
        }
        d.max(0.0)
    }
}

/// Offered traffic per tunnel at one step; this is the agent's observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemandVector {
    pub t: u64,
    /// Mbps, one entry per tunnel.
    pub demands: Vec<f64>,
}

impl DemandVector {
    pub fn new(t: u64, demands: Vec<f64>) -> Result<Self> {
        if let Some(bad) = demands.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
            return Err(Error::Parse(format!("demand {bad} at t={t} is not a finite non-negative rate")));
        }
        Ok(Self { t, demands })
    }

    pub fn zeros(t: u64, n_tunnels: usize) -> Self {
        Self {
            t,
            demands: vec![0.0; n_tunnels],
        }
    }

    pub fn len(&self) -> usize {
        self.demands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demands.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.demands.iter().sum()
    }
}

pub fn generate(cfg: &TrafficConfig, n_tunnels: usize, t: u64) -> DemandVector {
    DemandVector {
        t,
        demands: (0..n_tunnels).map(|k| cfg.demand(k, n_tunnels, t)).collect(),
    }
}

pub fn generate_trace(cfg: &TrafficConfig, n_tunnels: usize, t0: u64, len: usize) -> Vec<DemandVector> {
    (0..len as u64).map(|i| generate(cfg, n_tunnels, t0 + i)).collect()
}

/// Writes a trace as CSV with columns `t, tunnel_0 .. tunnel_{K-1}`.
pub fn write_trace_csv<W: Write>(trace: &[DemandVector], out: W) -> Result<()> {
    let k = trace.first().map_or(0, DemandVector::len);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((0..k).map(|i| format!("tunnel_{i}")));
    w.write_record(&header)?;
    for dv in trace {
        if dv.len() != k {
            return Err(Error::DimensionMismatch {
                context: "trace row",
                expected: k,
                actual: dv.len(),
            });
        }
        let mut row = vec![dv.t.to_string()];
        row.extend(dv.demands.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_csv<R: Read>(input: R) -> Result<Vec<DemandVector>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.get(0) != Some("t") {
        return Err(Error::Parse("trace CSV must start with a `t` column".into()));
    }
    for (i, name) in header.iter().skip(1).enumerate() {
        if name != format!("tunnel_{i}") {
            return Err(Error::Parse(format!("unexpected trace column `{name}`")));
        }
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let t = rec[0]
            .parse()
            .map_err(|e| Error::Parse(format!("bad step `{}`: {e}", &rec[0])))?;
        let demands = rec
            .iter()
            .skip(1)
            .map(|s| s.parse::<f64>().map_err(|e| Error::Parse(format!("bad demand `{s}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        out.push(DemandVector::new(t, demands)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_when_flat_and_noiseless() {
        let cfg = TrafficConfig {
            amplitude: 0.0,
            noise_sd: 0.0,
            base: 2.5,
            ..Default::default()
        };
        for t in [0, 1, 17, 499, 500, 123_456] {
            assert!(generate(&cfg, 6, t).demands.iter().all(|&d| d == 2.5));
        }
    }

    #[test]
    fn sine_peak_at_quarter_period() {
        let cfg = TrafficConfig {
            base: 2.5,
            amplitude: 2.0,
            noise_sd: 0.0,
            phases: Some(vec![0.0]),
            ..Default::default()
        };
        assert_eq!(generate(&cfg, 1, cfg.period / 4).demands[0], 4.5);
    }

    #[test]
    fn default_trace_statistics() {
        let cfg = TrafficConfig::default();
        let trace = generate_trace(&cfg, 6, 0, 1000);
        for k in 0..6 {
            let col: Vec<f64> = trace.iter().map(|d| d.demands[k]).collect();
            let min = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            assert!(min >= 0.0);
            assert!((mean - cfg.base).abs() <= 0.05 * cfg.base, "tunnel {k} mean {mean}");
        }
    }

    #[test]
    fn trace_of_100() {
        let cfg = TrafficConfig::default();
        assert_eq!(generate_trace(&cfg, 6, 40, 100).len(), 100);
        let single = generate_trace(&cfg, 6, 77, 1);
        assert_eq!(single, vec![generate(&cfg, 6, 77)]);
    }

    #[test]
    fn traces_are_bitwise_reproducible() {
        let cfg = TrafficConfig {
            seed: 42,
            ..Default::default()
        };
        let a = generate_trace(&cfg, 6, 0, 300);
        let b = generate_trace(&cfg, 6, 0, 300);
        let bits = |tr: &[DemandVector]| -> Vec<u64> {
            tr.iter().flat_map(|d| d.demands.iter().map(|x| x.to_bits())).collect()
        };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn phase_count_mismatch_rejected() {
        let cfg = TrafficConfig {
            phases: Some(vec![0.0; 3]),
            ..Default::default()
        };
        assert!(cfg.validate(6).is_err());
        assert!(cfg.validate(3).is_ok());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let cfg = TrafficConfig {
            seed: 9,
            ..Default::default()
        };
        let trace = generate_trace(&cfg, 4, 10, 25);
        let mut buf = Vec::new();
        write_trace_csv(&trace, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,tunnel_0,tunnel_1,tunnel_2,tunnel_3\n"));
        assert_eq!(read_trace_csv(buf.as_slice()).unwrap(), trace);
    }

    #[test]
    fn negative_csv_demand_rejected() {
        let text = "t,tunnel_0\n0,-1.0\n";
        assert!(read_trace_csv(text.as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn chunking_and_order_do_not_matter(seed in any::<u64>(), t0 in 0u64..10_000, len in 1usize..40, split in 0usize..40) {
            let cfg = TrafficConfig { seed, ..Default::default() };
            let whole = generate_trace(&cfg, 6, t0, len);
            let split = split.min(len);
            let mut parts = generate_trace(&cfg, 6, t0 + split as u64, len - split);
            let mut head = generate_trace(&cfg, 6, t0, split);
            head.append(&mut parts);
            prop_assert_eq!(&whole, &head);
            for (i, dv) in whole.iter().enumerate().rev() {
                prop_assert_eq!(dv, &generate(&cfg, 6, t0 + i as u64));
                prop_assert!(dv.demands.iter().all(|&d| d >= 0.0));
            }
        }

        #[test]
        fn noiseless_is_periodic(t in 0u64..100_000, period in 1u64..1000, amp in 0.0f64..5.0, base in 0.0f64..5.0) {
            let cfg = TrafficConfig { base, amplitude: amp, period, noise_sd: 0.0, ..Default::default() };
            prop_assert_eq!(generate(&cfg, 5, t).demands, generate(&cfg, 5, t + period).demands);
        }
    }
}
