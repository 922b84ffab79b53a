//! Sweep statistics and report emission.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::workload::ResourceSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub spec: ResourceSpec,
    pub total_cycles: u64,
}

/// One (kernel, preset, policy) sweep over resource specifications.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepResult {
    pub kernel: String,
    pub arch: String,
    pub policy: String,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::invalid("sweep has no points"));
        }
        if self.points.iter().any(|p| p.total_cycles == 0) {
            return Err(Error::invalid("sweep point with zero cycles"));
        }
        let specs: BTreeSet<_> = self.points.iter().map(|p| p.spec).collect();
        if specs.len() != self.points.len() {
            return Err(Error::invalid("sweep specs must be distinct"));
        }
        Ok(())
    }

    pub fn best_cycles(&self) -> u64 {
        self.points
            .iter()
            .map(|p| p.total_cycles)
            .min()
            .unwrap_or(0)
    }

    pub fn worst_cycles(&self) -> u64 {
        self.points
            .iter()
            .map(|p| p.total_cycles)
            .max()
            .unwrap_or(0)
    }

    /// Best point's cycles over each point's cycles, in point order.
    pub fn normalized_performance(&self) -> Vec<f64> {
        let best = self.best_cycles() as f64;
        self.points
            .iter()
            .map(|p| best / p.total_cycles as f64)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Tukey box statistics. Quartiles interpolate linearly at `p * (n - 1)`;
/// whiskers reach the most extreme samples within 1.5 IQR of the box but
/// never retreat inside it.
pub fn tukey_stats(samples: &[f64]) -> Result<BoxStats> {
    if samples.is_empty() {
        return Err(Error::invalid("tukey_stats needs at least one sample"));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("tukey_stats samples must be finite"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile(&sorted, 0.25);
    let median = quantile(&sorted, 0.5);
    let q3 = quantile(&sorted, 0.75);
    let iqr = q3 - q1;
    let lo_fence = q1 - 1.5 * iqr;
    let hi_fence = q3 + 1.5 * iqr;
    let whisker_low = sorted
        .iter()
        .copied()
        .find(|&x| x >= lo_fence)
        .unwrap_or(q1)
        .min(q1);
    let whisker_high = sorted
        .iter()
        .rev()
        .copied()
        .find(|&x| x <= hi_fence)
        .unwrap_or(q3)
        .max(q3);
    let outliers = sorted
        .iter()
        .copied()
        .filter(|&x| x < lo_fence || x > hi_fence)
        .collect();
    Ok(BoxStats {
        min: sorted[0],
        q1,
        median,
        q3,
        max: sorted[sorted.len() - 1],
        mean: samples.iter().sum::<f64>() / samples.len() as f64,
        whisker_low,
        whisker_high,
        outliers,
    })
}

/// Performance lost by the worst point relative to the best:
/// `1 - min_cycles / max_cycles`.
pub fn performance_range(sweep: &SweepResult) -> f64 {
    let worst = sweep.worst_cycles();
    if worst == 0 {
        return 0.0;
    }
    1.0 - sweep.best_cycles() as f64 / worst as f64
}

/// Worst point-to-point drop on `target` among the specifications that were
/// within `margin` of the best on `source`.
pub fn porting_loss(source: &SweepResult, target: &SweepResult, margin: f64) -> Result<f64> {
    source.validate()?;
    target.validate()?;
    let target_cycles: BTreeMap<ResourceSpec, u64> = target
        .points
        .iter()
        .map(|p| (p.spec, p.total_cycles))
        .collect();
    if target_cycles.len() != source.points.len()
        || source
            .points
            .iter()
            .any(|p| !target_cycles.contains_key(&p.spec))
    {
        return Err(Error::invalid(format!(
            "porting {} from {} to {}: sweeps cover different specifications",
            source.kernel, source.arch, target.arch
        )));
    }
    let best_source = source.best_cycles() as f64;
    let best_target = target.best_cycles() as f64;
    let worst = source
        .points
        .iter()
        .filter(|p| best_source / p.total_cycles as f64 >= 1.0 - margin)
        .map(|p| best_target / target_cycles[&p.spec] as f64)
        .fold(f64::INFINITY, f64::min);
    Ok(1.0 - worst)
}

/// Largest relative cycle increase between neighbouring block sizes.
pub fn max_adjacent_cliff(sweep: &SweepResult) -> f64 {
    let mut points = sweep.points.clone();
    points.sort_by_key(|p| p.spec.threads_per_block);
    points
        .windows(2)
        .map(|w| {
            let prev = w[0].total_cycles as f64;
            (w[1].total_cycles as f64 - prev) / prev
        })
        .fold(0.0, f64::max)
}

/// One CSV row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub kernel: String,
    pub arch: String,
    pub policy: String,
    pub threads_per_block: u32,
    pub regs_per_thread: u32,
    pub smem_per_block: u32,
    pub total_cycles: u64,
    #[serde(serialize_with = "fixed6")]
    pub issue_util: f64,
    pub swap_stall_cycles: u64,
}

fn fixed6<S: serde::Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&format!("{v:.6}"))
}

impl ResultRow {
    pub fn spec(&self) -> ResourceSpec {
        ResourceSpec {
            threads_per_block: self.threads_per_block,
            regs_per_thread: self.regs_per_thread,
            smem_per_block: self.smem_per_block,
        }
    }

    fn sort_key(&self) -> (&str, &str, &str, u32) {
        (
            &self.kernel,
            &self.arch,
            &self.policy,
            self.threads_per_block,
        )
    }
}

pub fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
}

pub fn write_csv<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io("csv output", e))?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

/// Groups rows into sweeps keyed by (kernel, arch, policy).
pub fn sweeps_from_rows(rows: &[ResultRow]) -> Vec<SweepResult> {
    let mut map: BTreeMap<(String, String, String), Vec<SweepPoint>> = BTreeMap::new();
    for row in rows {
        map.entry((row.kernel.clone(), row.arch.clone(), row.policy.clone()))
            .or_default()
            .push(SweepPoint {
                spec: row.spec(),
                total_cycles: row.total_cycles,
            });
    }
    map.into_iter()
        .map(|((kernel, arch, policy), mut points)| {
            points.sort_by_key(|p| p.spec.threads_per_block);
            SweepResult {
                kernel,
                arch,
                policy,
                points,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub kernel: String,
    pub arch: String,
    pub policy: String,
    /// Over normalized performance (best cycles / cycles).
    pub box_stats: BoxStats,
    pub performance_range: f64,
    pub max_adjacent_cliff: f64,
    pub best_cycles: u64,
    pub best_threads_per_block: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PortingEntry {
    pub kernel: String,
    pub policy: String,
    pub source: String,
    pub target: String,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PortingMax {
    pub kernel: String,
    pub policy: String,
    pub max_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyAggregate {
    pub policy: String,
    /// Mean performance range over (kernel, arch) sweeps.
    pub mean_performance_range: f64,
    pub mean_max_adjacent_cliff: f64,
    pub mean_max_porting_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub margin: f64,
    pub sweeps: Vec<SweepSummary>,
    pub porting: Vec<PortingEntry>,
    pub porting_max: Vec<PortingMax>,
    pub policies: Vec<PolicyAggregate>,
}

impl Summary {
    pub fn sweep(&self, kernel: &str, arch: &str, policy: &str) -> Option<&SweepSummary> {
        self.sweeps
            .iter()
            .find(|s| s.kernel == kernel && s.arch == arch && s.policy == policy)
    }

    pub fn porting_max(&self, kernel: &str, policy: &str) -> Option<f64> {
        self.porting_max
            .iter()
            .find(|p| p.kernel == kernel && p.policy == policy)
            .map(|p| p.max_loss)
    }

    pub fn policy(&self, policy: &str) -> Option<&PolicyAggregate> {
        self.policies.iter().find(|p| p.policy == policy)
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Derives every statistic of the report from the sweeps.
pub fn summarize(sweeps: &[SweepResult], margin: f64) -> Result<Summary> {
    let mut summaries = Vec::new();
    for s in sweeps {
        s.validate()?;
        let best = s
            .points
            .iter()
            .min_by_key(|p| (p.total_cycles, p.spec.threads_per_block))
            .expect("validated");
        summaries.push(SweepSummary {
            kernel: s.kernel.clone(),
            arch: s.arch.clone(),
            policy: s.policy.clone(),
            box_stats: tukey_stats(&s.normalized_performance())?,
            performance_range: performance_range(s),
            max_adjacent_cliff: max_adjacent_cliff(s),
            best_cycles: best.total_cycles,
            best_threads_per_block: best.spec.threads_per_block,
        });
    }

    let mut groups: BTreeMap<(&str, &str), Vec<&SweepResult>> = BTreeMap::new();
    for s in sweeps {
        groups.entry((&s.kernel, &s.policy)).or_default().push(s);
    }
    let mut porting = Vec::new();
    let mut porting_max = Vec::new();
    for ((kernel, policy), group) in &groups {
        if group.len() < 2 {
            continue;
        }
        let mut max_loss = f64::NEG_INFINITY;
        for src in group {
            for dst in group {
                if src.arch == dst.arch {
                    continue;
                }
                let loss = porting_loss(src, dst, margin)?;
                max_loss = max_loss.max(loss);
                porting.push(PortingEntry {
                    kernel: kernel.to_string(),
                    policy: policy.to_string(),
                    source: src.arch.clone(),
                    target: dst.arch.clone(),
                    loss,
                });
            }
        }
        porting_max.push(PortingMax {
            kernel: kernel.to_string(),
            policy: policy.to_string(),
            max_loss,
        });
    }

    let policies: BTreeSet<&str> = sweeps.iter().map(|s| s.policy.as_str()).collect();
    let aggregates = policies
        .into_iter()
        .map(|policy| {
            let of: Vec<&SweepSummary> = summaries.iter().filter(|s| s.policy == policy).collect();
            let ranges: Vec<f64> = of.iter().map(|s| s.performance_range).collect();
            let cliffs: Vec<f64> = of.iter().map(|s| s.max_adjacent_cliff).collect();
            let losses: Vec<f64> = porting_max
                .iter()
                .filter(|p| p.policy == policy)
                .map(|p| p.max_loss)
                .collect();
            PolicyAggregate {
                policy: policy.to_string(),
                mean_performance_range: mean(&ranges),
                mean_max_adjacent_cliff: mean(&cliffs),
                mean_max_porting_loss: (!losses.is_empty()).then(|| mean(&losses)),
            }
        })
        .collect();

    Ok(Summary {
        margin,
        sweeps: summaries,
        porting,
        porting_max,
        policies: aggregates,
    })
}

/// Renders the CSV table and the JSON summary.
pub fn emit_report(rows: &[ResultRow], summary: &Summary) -> Result<(String, String)> {
    let mut csv = Vec::new();
    write_csv(rows, &mut csv)?;
    let csv = String::from_utf8(csv).expect("csv output is utf-8");
    let mut json = serde_json::to_string_pretty(summary)?;
    json.push('\n');
    Ok((csv, json))
}
