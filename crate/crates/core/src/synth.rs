//! Labeled synthetic multi-system log corpora.
//!
//! Normal traffic interleaves per-component template streams. Anomalies are
//! injected as contiguous bursts of one anomaly template, so an anomaly is
//! recognizable from its text and from its neighbours. Words are mutated
//! with a small probability to imitate evolving log statements.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample as sample_indices;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{LogEvent, LogSplit, NORMAL_LABEL};
use crate::seed::{rng_for, Stream};
use crate::tasks::SplitProfile;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("{system}: anomaly rate {rate} with bursts of {min}..={max} events cannot be met in {n} events")]
    InfeasibleRate {
        system: String,
        rate: f64,
        min: usize,
        max: usize,
        n: usize,
    },
    #[error("invalid profile {system}: {reason}")]
    InvalidProfile { system: String, reason: String },
    #[error("profile parse error: {0}")]
    Parse(#[from] toml::de::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub name: String,
    /// Levels drawn uniformly for this component's normal events.
    pub levels: Vec<String>,
    /// Message templates with `{n}`, `{ip}`, `{hex}`, `{path}`, `{mac}`
    /// placeholders.
    pub templates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnomalyTemplate {
    /// Identity used when comparing template sets across systems; also the
    /// dataset-style alert label of generated events.
    pub id: String,
    pub levels: Vec<String>,
    pub template: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemProfile {
    pub system_id: String,
    pub components: Vec<ComponentSpec>,
    pub anomaly_templates: Vec<AnomalyTemplate>,
    pub anomaly_rate: f64,
    /// Inclusive (min, max) burst length.
    pub cluster_length: (usize, usize),
    /// Per-word mutation probability.
    #[serde(default = "default_noise")]
    pub template_noise: f64,
    pub seed: u64,
}

fn default_noise() -> f64 {
    0.05
}

impl SystemProfile {
    pub fn from_toml(s: &str) -> Result<Self, SynthError> {
        let p: SystemProfile = toml::from_str(s)?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("profile serializes")
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |reason: &str| {
            Err(SynthError::InvalidProfile {
                system: self.system_id.clone(),
                reason: reason.to_string(),
            })
        };
        if self.system_id.trim().is_empty() {
            return bad("empty system_id");
        }
        if i64::try_from(self.seed).is_err() {
            return bad("seed must be at most 2^63 - 1");
        }
        if !(0.0..=1.0).contains(&self.anomaly_rate) {
            return bad("anomaly_rate outside [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.template_noise) {
            return bad("template_noise outside [0, 1]");
        }
        let (lo, hi) = self.cluster_length;
        if lo < 1 || hi < lo {
            return bad("cluster_length must satisfy 1 <= min <= max");
        }
        if self.components.is_empty() {
            return bad("empty component lexicon");
        }
        for c in &self.components {
            if c.name.trim().is_empty() || c.levels.is_empty() || c.templates.is_empty() {
                return bad("every component needs a name, levels and templates");
            }
        }
        if self.anomaly_rate > 0.0 && self.anomaly_templates.is_empty() {
            return bad("positive anomaly_rate without anomaly templates");
        }
        if self.anomaly_templates.iter().any(|t| t.levels.is_empty()) {
            return bad("anomaly template without levels");
        }
        Ok(())
    }

    pub fn component_names(&self) -> BTreeSet<&str> {
        self.components.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn anomaly_template_ids(&self) -> BTreeSet<&str> {
        self.anomaly_templates.iter().map(|t| t.id.as_str()).collect()
    }
}

/// Burst lengths whose total lies within ±10% of `rate * n`, or `None`.
fn plan_bursts(rng: &mut ChaCha8Rng, rate: f64, (min, max): (usize, usize), n: usize) -> Option<Vec<usize>> {
    let target = rate * n as f64;
    if target == 0.0 {
        return Some(Vec::new());
    }
    let lo = (0.9 * target).ceil().max(1.0) as usize;
    let hi = (1.1 * target).floor() as usize;
    // Feasible (total, burst count) pairs: bursts fit the length bounds and
    // sit at distinct insertion points between normal events.
    let feasible: Vec<(usize, usize)> = (lo..=hi.min(n))
        .filter_map(|total| {
            let b_lo = total.div_ceil(max);
            let b_hi = total / min;
            let b = (b_lo..=b_hi).find(|&b| b <= n - total + 1)?;
            Some((total, b))
        })
        .collect();
    let &(total, _) = feasible.choose(rng)?;
    let b_lo = total.div_ceil(max);
    let b_hi = (total / min).min(n - total + 1);
    let bursts = rng.gen_range(b_lo..=b_hi);
    let mut lens = vec![min; bursts];
    let mut rest = total - bursts * min;
    while rest > 0 {
        let i = rng.gen_range(0..bursts);
        if lens[i] < max {
            lens[i] += 1;
            rest -= 1;
        }
    }
    Some(lens)
}

const SUFFIXES: [&str; 4] = ["s", "ed", "ing", "er"];

fn mutate(word: &str, rng: &mut ChaCha8Rng) -> String {
    let chars: Vec<char> = word.chars().collect();
    if chars.len() > 3 && rng.gen_bool(0.5) {
        let drop = rng.gen_range(1..chars.len());
        chars.iter().enumerate().filter(|&(i, _)| i != drop).map(|(_, c)| *c).collect()
    } else {
        format!("{word}{}", SUFFIXES[rng.gen_range(0..SUFFIXES.len())])
    }
}

const PATH_PARTS: [&str; 8] = ["var", "opt", "scratch", "home", "tmp", "lib", "spool", "data"];

fn fill(template: &str, noise: f64, rng: &mut ChaCha8Rng) -> String {
    let mut out = Vec::new();
    for word in template.split_whitespace() {
        let rendered = match word {
            "{n}" => rng.gen_range(0..100_000u32).to_string(),
            "{ip}" => format!(
                "10.{}.{}.{}",
                rng.gen_range(0..256u32),
                rng.gen_range(0..256u32),
                rng.gen_range(1..255u32)
            ),
            "{hex}" => format!("0x{:08x}", rng.gen::<u32>()),
            "{path}" => format!(
                "/{}/{}/f{}",
                PATH_PARTS[rng.gen_range(0..PATH_PARTS.len())],
                PATH_PARTS[rng.gen_range(0..PATH_PARTS.len())],
                rng.gen_range(0..1000u32)
            ),
            "{mac}" => (0..6)
                .map(|_| format!("{:02x}", rng.gen::<u8>()))
                .collect::<Vec<_>>()
                .join(":"),
            w if noise > 0.0 && w.chars().all(|c| c.is_ascii_alphabetic()) && rng.gen_bool(noise) => mutate(w, rng),
            w => w.to_string(),
        };
        out.push(rendered);
    }
    out.join(" ")
}

/// Generates `n_events` events for `profile`, deterministic in its seed.
pub fn generate_corpus(profile: &SystemProfile, n_events: usize) -> Result<LogSplit, SynthError> {
    profile.validate()?;
    if n_events == 0 {
        return Err(SynthError::InvalidProfile {
            system: profile.system_id.clone(),
            reason: "n_events must be at least 1".into(),
        });
    }
    let mut rng = rng_for(profile.seed, Stream::Generator, 0);
    let bursts =
        plan_bursts(&mut rng, profile.anomaly_rate, profile.cluster_length, n_events).ok_or_else(|| {
            SynthError::InfeasibleRate {
                system: profile.system_id.clone(),
                rate: profile.anomaly_rate,
                min: profile.cluster_length.0,
                max: profile.cluster_length.1,
                n: n_events,
            }
        })?;
    let n_anomalous: usize = bursts.iter().sum();
    let n_normal = n_events - n_anomalous;
    let mut slots = sample_indices(&mut rng, n_normal + 1, bursts.len()).into_vec();
    slots.sort_unstable();

    let mut events = Vec::with_capacity(n_events);
    let mut ts: i64 = 1_100_000_000 + rng.gen_range(0..10_000_000);
    let mut push = |events: &mut Vec<LogEvent>, rng: &mut ChaCha8Rng, label: &str, comp: &str, level: &str, msg: String| {
        ts += rng.gen_range(1..4);
        events.push(LogEvent::new(events.len() as u64, ts, label, comp, level, &msg));
    };
    let mut next_burst = 0;
    for i in 0..=n_normal {
        while next_burst < slots.len() && slots[next_burst] == i {
            let tmpl = profile.anomaly_templates.choose(&mut rng).expect("validated");
            let comp = &profile.components.choose(&mut rng).expect("validated").name;
            for _ in 0..bursts[next_burst] {
                let level = tmpl.levels.choose(&mut rng).expect("validated").clone();
                let msg = fill(&tmpl.template, profile.template_noise, &mut rng);
                push(&mut events, &mut rng, &tmpl.id, comp, &level, msg);
            }
            next_burst += 1;
        }
        if i == n_normal {
            break;
        }
        let comp = profile.components.choose(&mut rng).expect("validated");
        let level = comp.levels.choose(&mut rng).expect("validated").clone();
        let tmpl = comp.templates.choose(&mut rng).expect("validated");
        let msg = fill(tmpl, profile.template_noise, &mut rng);
        push(&mut events, &mut rng, NORMAL_LABEL, &comp.name, &level, msg);
    }
    Ok(LogSplit::new(profile.system_id.clone(), events))
}

/// Lengths of maximal runs of anomalous events.
pub fn anomaly_runs(labels: &[bool]) -> Vec<usize> {
    let mut runs = Vec::new();
    let mut cur = 0;
    for &l in labels {
        if l {
            cur += 1;
        } else if cur > 0 {
            runs.push(cur);
            cur = 0;
        }
    }
    if cur > 0 {
        runs.push(cur);
    }
    runs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Source,
    Target,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSystem {
    pub profile: SystemProfile,
    pub role: Role,
    pub n_events: usize,
    /// Task split preset for this system.
    pub split_profile: SplitProfile,
}

fn comp(name: &str, levels: &[&str], templates: &[&str]) -> ComponentSpec {
    ComponentSpec {
        name: name.into(),
        levels: levels.iter().map(|s| s.to_string()).collect(),
        templates: templates.iter().map(|s| s.to_string()).collect(),
    }
}

fn anomaly(id: &str, levels: &[&str], template: &str) -> AnomalyTemplate {
    AnomalyTemplate {
        id: id.into(),
        levels: levels.iter().map(|s| s.to_string()).collect(),
        template: template.into(),
    }
}

/// Normal message templates shared by every system; all systems draw their
/// components' messages from this pool plus a few of their own.
const COMMON: &[&str] = &[
    "connection established with {ip}",
    "request {n} completed in {n} ms",
    "heartbeat received from node {n}",
    "job {n} started on partition {n}",
    "job {n} finished with status ok",
    "cache flush completed for {path}",
    "session opened for user {n}",
    "session closed for user {n}",
    "configuration reloaded from {path}",
    "scheduled task {n} queued",
    "link status up on port {n}",
    "checkpoint written to {path}",
    "interrupt coalescing set to {n} us",
    "retrying request {n} after transient error",
    "temperature reading {n} within limits",
    "memory usage at {n} percent",
];

fn normal_components(
    names: &[&str],
    own: &[&str],
    rng: &mut ChaCha8Rng,
) -> Vec<ComponentSpec> {
    const LEVEL_SETS: [&[&str]; 3] = [&["INFO"], &["INFO", "WARNING"], &["INFO", "ERROR", "WARNING"]];
    names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let mut templates: Vec<&str> = COMMON.choose_multiple(rng, 4).copied().collect();
            templates.push(own[i % own.len()]);
            comp(name, LEVEL_SETS[i % LEVEL_SETS.len()], &templates)
        })
        .collect()
}

/// The shared anomaly families: the first three and last three are the
/// two halves each source system specializes in.
pub fn shared_anomalies() -> Vec<AnomalyTemplate> {
    vec![
        anomaly("PARITY", &["INFO", "ERROR"], "instruction cache parity error corrected"),
        anomaly("MCHK", &["FATAL", "ERROR"], "machine check interrupt on cpu {n} bank {n}"),
        anomaly("DTLB", &["FATAL"], "data tlb error interrupt at {hex}"),
        anomaly("PANIC", &["FATAL", "WARNING"], "kernel panic not syncing fatal exception in interrupt"),
        anomaly("LUSTRE", &["ERROR"], "lustre mount failed for {path} with code {n}"),
        anomaly("RPCTMO", &["ERROR", "WARNING"], "rpc timeout waiting for response from {ip}"),
    ]
}

/// Default generator seed for the benchmark corpora.
pub const BENCHMARK_SEED: u64 = 7;

/// Four-system analog of a two-source, two-target cross-system setup.
/// Component lexicons are pairwise disjoint; every target anomaly family
/// is covered only by the union of both sources.
pub fn make_benchmark(seed: u64) -> Vec<BenchmarkSystem> {
    let shared = shared_anomalies();
    let pick = |ids: &[usize]| ids.iter().map(|&i| shared[i].clone()).collect::<Vec<_>>();
    let mut rng = rng_for(seed, Stream::Generator, u64::MAX);
    let mut system = |id: &str,
                      index: u64,
                      names: &[&str],
                      own: &[&str],
                      anomalies: Vec<AnomalyTemplate>,
                      rate: f64,
                      role: Role,
                      n_events: usize,
                      split_profile: SplitProfile| BenchmarkSystem {
        profile: SystemProfile {
            system_id: id.into(),
            components: normal_components(names, own, &mut rng),
            anomaly_templates: anomalies,
            anomaly_rate: rate,
            cluster_length: (2, 4),
            template_noise: default_noise(),
            // TOML integers are signed.
            seed: crate::seed::derive(seed, Stream::Generator, index) & i64::MAX as u64,
        },
        role,
        n_events,
        split_profile,
    };

    vec![
        system(
            "syn-bgl",
            1,
            &["KERNEL", "APP", "MMCS", "DISCOVERY", "MONITOR", "LINKCARD"],
            &[
                "generating core {n}",
                "ddr error count {n} below threshold",
                "idoproxy communication ready",
                "node card vpd check passed",
            ],
            pick(&[0, 1, 2]),
            0.003,
            Role::Source,
            100_000,
            SplitProfile::Source,
        ),
        system(
            "syn-liberty",
            2,
            &["sshd", "crond", "pbs_server", "ntpd", "syslogd", "xinetd"],
            &[
                "accepted publickey for user {n}",
                "clock synchronized to {ip}",
                "queue batch has {n} jobs",
                "restart signal handled",
            ],
            pick(&[3, 4, 5]),
            0.004,
            Role::Source,
            100_000,
            SplitProfile::Source,
        ),
        system(
            "syn-tbird",
            3,
            &["dhcpd", "kernel.tb", "postfix", "smartd", "ib_sm", "portmap"],
            &[
                "dhcpack on {ip} to {mac}",
                "device sda passed health check",
                "subnet sweep found {n} ports",
                "mail queue run finished",
            ],
            pick(&[0, 1, 3, 4]),
            0.0025,
            Role::Target,
            360_000,
            SplitProfile::Tbird,
        ),
        system(
            "syn-spirit",
            4,
            &["gmetad", "kernel.sp", "automount", "rpc.statd", "named", "ypbind"],
            &[
                "metric collection round {n} done",
                "mounted {path} on demand",
                "zone transfer of {n} records",
                "binding to domain server {ip}",
            ],
            pick(&[1, 2, 4, 5]),
            0.004,
            Role::Target,
            360_000,
            SplitProfile::Spirit,
        ),
    ]
}

/// Generates every benchmark corpus, in benchmark order.
pub fn generate_benchmark(systems: &[BenchmarkSystem]) -> Result<Vec<LogSplit>, SynthError> {
    systems
        .par_iter()
        .map(|s| generate_corpus(&s.profile, s.n_events))
        .collect()
}

/// Fraction of distinct anomaly template ids that occur in at least two
/// systems.
pub fn shared_template_fraction(profiles: &[&SystemProfile]) -> f64 {
    let mut owners: BTreeMap<&str, usize> = BTreeMap::new();
    for p in profiles {
        for id in p.anomaly_template_ids() {
            *owners.entry(id).or_default() += 1;
        }
    }
    if owners.is_empty() {
        return 0.0;
    }
    owners.values().filter(|&&c| c >= 2).count() as f64 / owners.len() as f64
}
