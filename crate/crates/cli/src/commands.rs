use std::ops::RangeInclusive;

use rayon::prelude::*;
use vagg_core::packets::{sizing_table, PacketKind};
use vagg_core::sim::experiments::{mean_std, table2};
use vagg_core::sim::{baseline_run, run, AttackKind, Metrics, RunOutput, SimConfig, SimError};
use vagg_core::verify::{prob_at_least_two, verification_probability};

use crate::CliError;

/// Bumped whenever a column is added, removed or reordered.
pub const SCHEMA: &str = "v1";

pub const PROB_N_LIMITS: RangeInclusive<usize> = 2..=200;

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String, CliError> {
    let bytes = w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Runtime(e.to_string()))
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Runtime(e.to_string())
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        String::new()
    }
}

/// `k,n,p,P_at_least_two` for every `k` and every `n` in the range.
pub fn analyze_prob(ks: &[u32], n: RangeInclusive<usize>) -> Result<String, CliError> {
    if n.is_empty() || !PROB_N_LIMITS.contains(n.start()) || !PROB_N_LIMITS.contains(n.end()) {
        return Err(CliError::Usage(format!(
            "n range {}..{} must lie within {}..{}",
            n.start(),
            n.end(),
            PROB_N_LIMITS.start(),
            PROB_N_LIMITS.end()
        )));
    }
    if ks.is_empty() || ks.contains(&0) {
        return Err(CliError::Usage("k values must be positive".into()));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["k", "n", "p", "P_at_least_two"]).map_err(csv_err)?;
    for &k in ks {
        for n in n.clone() {
            let p = verification_probability(n, k).map_err(|e| CliError::Runtime(e.to_string()))?;
            let at_least_two = prob_at_least_two(n, p).map_err(|e| CliError::Runtime(e.to_string()))?;
            w.write_record([k.to_string(), n.to_string(), format!("{p:.6}"), format!("{at_least_two:.8}")])
                .map_err(csv_err)?;
        }
    }
    finish(w)
}

pub fn analyze_sizing() -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["hash", "packet_size", "signature_area", "max_signatures"])
        .map_err(csv_err)?;
    for row in sizing_table() {
        w.write_record([
            row.algo.name().to_string(),
            row.packet_size.to_string(),
            row.signature_area.to_string(),
            row.max_signatures.to_string(),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

const RUN_HEADER: [&str; 23] = [
    "schema",
    "node_count",
    "seed",
    "mode",
    "packets_total",
    "packets_w",
    "packets_r",
    "packets_s",
    "packets_a",
    "suppressed",
    "receptions",
    "delivered",
    "lost",
    "in_flight",
    "warned_nodes",
    "warn_coverage_ms",
    "verifications",
    "mean_checked",
    "true_reliable",
    "false_reliable",
    "attack_injected",
    "attack_detected",
    "attack_accepted",
];

fn run_record(m: &Metrics) -> Vec<String> {
    let attacks = m.attacks.values();
    let (injected, detected, accepted) = attacks.fold((0, 0, 0), |(i, d, a), s| {
        (i + s.injected, d + s.detected, a + s.accepted)
    });
    vec![
        SCHEMA.to_string(),
        m.node_count.to_string(),
        m.seed.to_string(),
        if m.aggregation { "aggregated" } else { "baseline" }.to_string(),
        m.total_packets().to_string(),
        m.packets_of(PacketKind::W).to_string(),
        m.packets_of(PacketKind::R).to_string(),
        m.packets_of(PacketKind::S).to_string(),
        m.packets_of(PacketKind::A).to_string(),
        m.suppressed.to_string(),
        m.receptions.to_string(),
        m.delivered.to_string(),
        m.lost.to_string(),
        m.in_flight.to_string(),
        m.warned_nodes.to_string(),
        opt(m.warn_coverage_ms),
        m.verifications().to_string(),
        m.mean_checked().map(float).unwrap_or_default(),
        m.true_reliable.to_string(),
        m.false_reliable.to_string(),
        injected.to_string(),
        detected.to_string(),
        accepted.to_string(),
    ]
}

/// Per-run metrics as CSV, one row per run in the given order.
pub fn runs_csv<'a>(metrics: impl IntoIterator<Item = &'a Metrics>) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RUN_HEADER).map_err(csv_err)?;
    for m in metrics {
        w.write_record(run_record(m)).map_err(csv_err)?;
    }
    finish(w)
}

pub fn sim_run(config: &SimConfig) -> Result<RunOutput, CliError> {
    run(config).map_err(CliError::from)
}

/// Both modes of one seed.
#[derive(Debug, Clone)]
pub struct SweepRun {
    pub node_count: usize,
    pub seed: u64,
    pub aggregated: Metrics,
    pub baseline: Metrics,
}

/// Runs seeds `seed..seed + runs` for every node count, with and without
/// aggregation, in parallel. The result is sorted by (node_count, seed).
pub fn sweep(base: &SimConfig, node_counts: &[usize], runs: usize) -> Result<Vec<SweepRun>, SimError> {
    let jobs: Vec<(usize, u64)> = node_counts
        .iter()
        .flat_map(|&n| (0..runs as u64).map(move |i| (n, base.seed.wrapping_add(i))))
        .collect();
    let mut out = jobs
        .par_iter()
        .map(|&(node_count, seed)| {
            let config = SimConfig {
                node_count,
                seed,
                aggregation_enabled: true,
                ..base.clone()
            };
            Ok(SweepRun {
                node_count,
                seed,
                aggregated: run(&config)?.metrics,
                baseline: baseline_run(&config)?.metrics,
            })
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    out.sort_by_key(|r| (r.node_count, r.seed));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Fig12,
    Fig13,
    Table2,
}

impl Preset {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "fig12" => Some(Preset::Fig12),
            "fig13" => Some(Preset::Fig13),
            "table2" => Some(Preset::Table2),
            _ => None,
        }
    }
}

fn stats(xs: impl Iterator<Item = f64>) -> (f64, f64, usize) {
    let v: Vec<f64> = xs.collect();
    let (m, s) = mean_std(&v);
    (m, s, v.len())
}

fn detection_rate(runs: &[&SweepRun], kind: AttackKind) -> f64 {
    let (inj, det) = runs.iter().fold((0u64, 0u64), |(i, d), r| {
        let s = r.aggregated.attack(kind);
        (i + s.injected, d + s.detected)
    });
    if inj == 0 {
        f64::NAN
    } else {
        det as f64 / inj as f64
    }
}

/// Per-node-count means and standard deviations. The preset picks the columns.
pub fn sweep_summary(runs: &[SweepRun], preset: Option<Preset>) -> Result<String, CliError> {
    let mut counts: Vec<usize> = runs.iter().map(|r| r.node_count).collect();
    counts.dedup();
    let packets = matches!(preset, None | Some(Preset::Fig12));
    let coverage = matches!(preset, None | Some(Preset::Fig13));
    let extra = preset.is_none();
    let mut header = vec!["schema", "node_count", "runs"];
    if packets {
        header.extend([
            "packets_aggregated_mean",
            "packets_aggregated_std",
            "packets_baseline_mean",
            "packets_baseline_std",
            "packet_ratio",
        ]);
    }
    if coverage {
        header.extend([
            "coverage_aggregated_mean_ms",
            "coverage_aggregated_std_ms",
            "coverage_aggregated_runs",
            "coverage_baseline_mean_ms",
            "coverage_baseline_std_ms",
            "coverage_baseline_runs",
        ]);
    }
    let kinds: Vec<AttackKind> = AttackKind::ALL
        .into_iter()
        .filter(|k| runs.iter().any(|r| r.aggregated.attack(*k).injected > 0))
        .collect();
    let detection_headers: Vec<String> = kinds.iter().map(|k| format!("detection_{k}")).collect();
    if extra {
        header.push("mean_checked");
        header.extend(detection_headers.iter().map(String::as_str));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).map_err(csv_err)?;
    for n in counts {
        let group: Vec<&SweepRun> = runs.iter().filter(|r| r.node_count == n).collect();
        let mut row = vec![SCHEMA.to_string(), n.to_string(), group.len().to_string()];
        if packets {
            let (am, asd, _) = stats(group.iter().map(|r| r.aggregated.total_packets() as f64));
            let (bm, bsd, _) = stats(group.iter().map(|r| r.baseline.total_packets() as f64));
            row.extend([float(am), float(asd), float(bm), float(bsd), float(am / bm)]);
        }
        if coverage {
            for pick in [|r: &SweepRun| r.aggregated.warn_coverage_ms, |r: &SweepRun| r.baseline.warn_coverage_ms] {
                let (m, s, k) = stats(group.iter().filter_map(|r| pick(r)).map(|t| t as f64));
                row.extend([float(m), float(s), k.to_string()]);
            }
        }
        if extra {
            let checked = group.iter().flat_map(|r| r.aggregated.checked_histogram.iter());
            let (sum, cnt) = checked.fold((0.0, 0u64), |(s, c), (k, v)| (s + (*k as f64) * (*v as f64), c + v));
            row.push(float(if cnt == 0 { f64::NAN } else { sum / cnt as f64 }));
            row.extend(kinds.iter().map(|k| float(detection_rate(&group, *k))));
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    finish(w)
}

/// The verified-signature count for every packet budget and digest class.
pub fn table2_csv(runs: usize, seed: u64) -> Result<String, CliError> {
    let rows = table2(runs, seed)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "schema",
        "hash",
        "packet_size",
        "signatures",
        "runs",
        "mean_checked",
        "std_checked",
    ])
    .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            SCHEMA.to_string(),
            r.digest.name().to_string(),
            r.packet_size.to_string(),
            r.signatures.to_string(),
            r.runs.to_string(),
            float(r.mean_checked),
            float(r.std_checked),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}
