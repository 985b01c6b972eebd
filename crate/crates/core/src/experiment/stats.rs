use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::RunRecord;

/// Two-sided 90% normal quantile.
pub const Z90: f64 = 1.645;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStat {
    pub step: u32,
    pub mean: f64,
    pub lo90: f64,
    pub hi90: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantitySeries {
    pub name: String,
    pub points: Vec<StepStat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub series: Vec<QuantitySeries>,
    /// Fraction of all worlds with a tracked-ego crash at or before step `i + 1`.
    pub crash_curve: Vec<f64>,
}

impl AggregateStats {
    pub fn get(&self, name: &str) -> Option<&QuantitySeries> {
        self.series.iter().find(|s| s.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Interval {
    Normal,
    /// Percentile bootstrap of the mean, seeded.
    Bootstrap { resamples: usize, seed: u64 },
}

/// Mean taken relative to the first sample, so constant inputs come back exactly.
pub fn mean(xs: &[f64]) -> f64 {
    let Some(&first) = xs.first() else { return f64::NAN };
    first + xs.iter().map(|x| x - first).sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Mean with a 90% interval.
pub fn summarize(step: u32, xs: &[f64], interval: Interval) -> StepStat {
    let m = mean(xs);
    let (lo, hi) = match interval {
        Interval::Normal => {
            let half = Z90 * sample_std(xs) / (xs.len() as f64).sqrt();
            (m - half, m + half)
        }
        Interval::Bootstrap { resamples, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ u64::from(step).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut means: Vec<f64> = (0..resamples)
                .map(|_| (0..xs.len()).map(|_| xs[rng.random_range(0..xs.len())]).sum::<f64>() / xs.len() as f64)
                .collect();
            means.sort_by(f64::total_cmp);
            let at = |q: f64| means[((q * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
            (at(0.05).min(m), at(0.95).max(m))
        }
    };
    StepStat {
        step,
        mean: m,
        lo90: lo,
        hi90: hi,
        n: xs.len(),
    }
}

/// Names of the emitted quantities, in output order.
pub const QUANTITIES: [&str; 7] = ["R_D", "R_S", "Loss", "Crashed", "Fraction Defensive", "E[Energy]", "Risk"];

/// Per-step statistics over the worlds still running at each step. The crash
/// indicator is carried forward after termination and averaged over all worlds.
pub fn aggregate(records: &[RunRecord], interval: Interval) -> Result<AggregateStats> {
    if records.is_empty() {
        return Err(Error::domain("cannot aggregate zero records"));
    }
    let horizon = records.iter().map(RunRecord::len).max().unwrap_or(0);

    let alive = |pick: fn(&RunRecord) -> &Vec<f64>| -> Vec<StepStat> {
        (0..horizon)
            .filter_map(|i| {
                let xs: Vec<f64> = records.iter().filter_map(|r| pick(r).get(i).copied()).collect();
                (!xs.is_empty()).then(|| summarize(i as u32 + 1, &xs, interval))
            })
            .collect()
    };

    let crashed_at = |r: &RunRecord, i: usize| -> f64 {
        match r.crashed.get(i) {
            Some(&c) => c,
            None => r.crashed.last().copied().unwrap_or(0.0),
        }
    };
    let mut crash_curve = Vec::with_capacity(horizon);
    let mut crashed_points = Vec::with_capacity(horizon);
    for i in 0..horizon {
        let xs: Vec<f64> = records.iter().map(|r| crashed_at(r, i)).collect();
        let stat = summarize(i as u32 + 1, &xs, interval);
        crash_curve.push(stat.mean);
        crashed_points.push(stat);
    }

    let mut eval_steps: Vec<u32> = records.iter().flat_map(|r| r.risk.iter().map(|p| p.step)).collect();
    eval_steps.sort_unstable();
    eval_steps.dedup();
    let at_eval = |pick: fn(&super::RiskPoint) -> f64| -> Vec<StepStat> {
        eval_steps
            .iter()
            .map(|&step| {
                let xs: Vec<f64> = records
                    .iter()
                    .filter_map(|r| r.risk.iter().find(|p| p.step == step).map(pick))
                    .collect();
                summarize(step, &xs, interval)
            })
            .collect()
    };

    let series = vec![
        ("R_D", alive(|r| &r.r_defensive)),
        ("R_S", alive(|r| &r.r_speed)),
        ("Loss", alive(|r| &r.loss)),
        ("Crashed", crashed_points),
        ("Fraction Defensive", alive(|r| &r.defensive_fraction)),
        ("E[Energy]", at_eval(|p| p.energy)),
        ("Risk", at_eval(|p| p.risk)),
    ]
    .into_iter()
    .map(|(name, points)| QuantitySeries {
        name: name.to_string(),
        points,
    })
    .collect();
    Ok(AggregateStats { series, crash_curve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::RiskPoint;
    use crate::world::{Termination, TerminationReason};
    use approx::assert_abs_diff_eq;

    fn record(loss: &[f64], crash_at: Option<usize>) -> RunRecord {
        let n = loss.len();
        let crashed = (0..n)
            .map(|i| if crash_at.is_some_and(|c| i + 1 >= c) { 1.0 } else { 0.0 })
            .collect();
        RunRecord {
            world_index: 0,
            seed: 0,
            termination: Termination {
                reason: TerminationReason::HorizonReached,
                step: n as u32,
            },
            r_speed: vec![0.5; n],
            r_defensive: vec![0.5; n],
            loss: loss.to_vec(),
            crashed,
            defensive_fraction: vec![0.0; n],
            risk: vec![RiskPoint {
                step: 0,
                risk: 1.0,
                energy: 0.1,
            }],
            gatekeeper_evaluations: 1,
            policy_switches: 0,
        }
    }

    #[test]
    fn two_point_interval() {
        let stats = aggregate(&[record(&[1.0], None), record(&[3.0], None)], Interval::Normal).unwrap();
        let p = stats.get("Loss").unwrap().points[0];
        assert_eq!(p.mean, 2.0);
        // sample std √2, n = 2
        assert_abs_diff_eq!(p.hi90 - p.mean, 1.645, epsilon = 1e-12);
        assert_abs_diff_eq!(p.mean - p.lo90, 1.645, epsilon = 1e-12);
        assert_eq!(p.n, 2);
    }

    #[test]
    fn identical_records_have_zero_width() {
        let r = record(&[0.3, -0.2, 0.1], None);
        let stats = aggregate(&[r.clone(), r.clone(), r], Interval::Normal).unwrap();
        for s in &stats.series {
            for p in &s.points {
                assert_eq!((p.lo90, p.hi90), (p.mean, p.mean), "{}", s.name);
            }
        }
    }

    #[test]
    fn crash_curve_steps_up() {
        let crashed = record(&[0.0; 10], Some(10));
        let others: Vec<RunRecord> = (0..3).map(|_| record(&[0.0; 20], None)).collect();
        let mut all = vec![crashed];
        all.extend(others);
        let stats = aggregate(&all, Interval::Normal).unwrap();
        for (i, &c) in stats.crash_curve.iter().enumerate() {
            let expected = if i + 1 >= 10 { 0.25 } else { 0.0 };
            assert_eq!(c, expected, "step {}", i + 1);
        }
    }

    #[test]
    fn alive_only_means() {
        let stats = aggregate(&[record(&[1.0, 1.0], None), record(&[3.0], None)], Interval::Normal).unwrap();
        let loss = &stats.get("Loss").unwrap().points;
        assert_eq!((loss[0].mean, loss[0].n), (2.0, 2));
        assert_eq!((loss[1].mean, loss[1].n), (1.0, 1));
    }

    #[test]
    fn empty_is_an_error() {
        assert!(matches!(aggregate(&[], Interval::Normal), Err(Error::Domain(_))));
    }

    #[test]
    fn bootstrap_brackets_the_mean() {
        let records: Vec<RunRecord> = (0..20).map(|i| record(&[i as f64], None)).collect();
        let interval = Interval::Bootstrap {
            resamples: 500,
            seed: 1,
        };
        let a = aggregate(&records, interval).unwrap();
        let p = a.get("Loss").unwrap().points[0];
        assert!(p.lo90 < p.mean && p.mean < p.hi90);
        assert_eq!(a, aggregate(&records, interval).unwrap());
    }
}
