use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::fmt::sig9;
use crate::model::{LearnerKind, RewardKind};

use super::train::write_file;
use super::{create_dir, EvalRecord, HarnessError, RunIdentity};

/// Flat CSV form of an [`EvalRecord`].
#[derive(Debug, Serialize, Deserialize)]
struct RecordRow {
    n_bodyguards: usize,
    reward_kind: RewardKind,
    learner_kind: LearnerKind,
    communication_enabled: bool,
    seed: u64,
    episode_index: usize,
    eval_episode: usize,
    total_threat: String,
    mean_reward: String,
    utterance_rate: String,
}

fn parse_f64(path: &Path, field: &str, s: &str) -> Result<f64, HarnessError> {
    s.parse().map_err(|_| HarnessError::csv(path, format!("bad {field} value `{s}`")))
}

pub fn write_records_csv(path: &Path, records: &[EvalRecord]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::csv(path, e))?;
    if records.is_empty() {
        // serde only emits the header with the first row
        w.write_record([
            "n_bodyguards",
            "reward_kind",
            "learner_kind",
            "communication_enabled",
            "seed",
            "episode_index",
            "eval_episode",
            "total_threat",
            "mean_reward",
            "utterance_rate",
        ])
        .map_err(|e| HarnessError::csv(path, e))?;
    }
    for r in records {
        w.serialize(RecordRow {
            n_bodyguards: r.run.n_bodyguards,
            reward_kind: r.run.reward_kind,
            learner_kind: r.run.learner_kind,
            communication_enabled: r.run.communication_enabled,
            seed: r.run.seed,
            episode_index: r.episode_index,
            eval_episode: r.eval_episode,
            total_threat: sig9(r.total_threat),
            mean_reward: sig9(r.mean_reward),
            utterance_rate: sig9(r.utterance_rate),
        })
        .map_err(|e| HarnessError::csv(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn read_records_csv(path: &Path) -> Result<Vec<EvalRecord>, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::csv(path, e))?;
    r.deserialize::<RecordRow>()
        .map(|row| {
            let row = row.map_err(|e| HarnessError::csv(path, e))?;
            Ok(EvalRecord {
                run: RunIdentity {
                    n_bodyguards: row.n_bodyguards,
                    reward_kind: row.reward_kind,
                    learner_kind: row.learner_kind,
                    communication_enabled: row.communication_enabled,
                    seed: row.seed,
                },
                episode_index: row.episode_index,
                eval_episode: row.eval_episode,
                total_threat: parse_f64(path, "total_threat", &row.total_threat)?,
                mean_reward: parse_f64(path, "mean_reward", &row.mean_reward)?,
                utterance_rate: parse_f64(path, "utterance_rate", &row.utterance_rate)?,
            })
        })
        .collect()
}

/// Every `records.csv` below `dir`, in path order.
pub fn read_records_dir(dir: &Path) -> Result<Vec<EvalRecord>, HarnessError> {
    let mut paths: Vec<PathBuf> = WalkDir::new(dir)
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file() && e.file_name() == "records.csv")
        .map(|e| e.into_path())
        .collect();
    paths.sort();
    let mut all = Vec::new();
    for p in paths {
        all.extend(read_records_csv(&p)?);
    }
    Ok(all)
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per seed of one axis combination: evaluation means keyed by training episode.
struct SeedCurve {
    threat: BTreeMap<usize, Vec<f64>>,
    utterance: BTreeMap<usize, Vec<f64>>,
    reward: BTreeMap<usize, Vec<f64>>,
}

impl SeedCurve {
    fn mean_at(map: &BTreeMap<usize, Vec<f64>>, ep: usize) -> f64 {
        mean_std(&map[&ep]).0
    }

    fn first(&self) -> usize {
        *self.threat.keys().next().expect("non-empty curve")
    }

    fn last(&self) -> usize {
        *self.threat.keys().next_back().expect("non-empty curve")
    }
}

fn group(records: &[EvalRecord]) -> BTreeMap<RunIdentity, BTreeMap<u64, SeedCurve>> {
    let mut out: BTreeMap<RunIdentity, BTreeMap<u64, SeedCurve>> = BTreeMap::new();
    for r in records {
        let c = out.entry(r.run.combination()).or_default().entry(r.run.seed).or_insert_with(|| SeedCurve {
            threat: BTreeMap::new(),
            utterance: BTreeMap::new(),
            reward: BTreeMap::new(),
        });
        c.threat.entry(r.episode_index).or_default().push(r.total_threat);
        c.utterance.entry(r.episode_index).or_default().push(r.utterance_rate);
        c.reward.entry(r.episode_index).or_default().push(r.mean_reward);
    }
    out
}

/// One axis combination aggregated over seeds. Each seed contributes the
/// mean over its evaluation episodes; `final` is each seed's last evaluation
/// and `baseline` its first (the untrained policy).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub n_bodyguards: usize,
    pub reward_kind: RewardKind,
    pub learner_kind: LearnerKind,
    pub communication_enabled: bool,
    pub n_seeds: usize,
    pub final_episode: usize,
    pub mean_total_threat: f64,
    pub std_total_threat: f64,
    pub baseline_mean_total_threat: f64,
    pub baseline_std_total_threat: f64,
    pub mean_reward: f64,
    pub utterance_rate: f64,
    /// Per-seed final values, in seed order.
    pub per_seed: Vec<(u64, f64)>,
}

pub fn summarize(records: &[EvalRecord]) -> Vec<SummaryRow> {
    group(records)
        .into_iter()
        .map(|(id, seeds)| {
            let finals: Vec<f64> = seeds.values().map(|c| SeedCurve::mean_at(&c.threat, c.last())).collect();
            let baselines: Vec<f64> = seeds.values().map(|c| SeedCurve::mean_at(&c.threat, c.first())).collect();
            let rewards: Vec<f64> = seeds.values().map(|c| SeedCurve::mean_at(&c.reward, c.last())).collect();
            let rates: Vec<f64> = seeds.values().map(|c| SeedCurve::mean_at(&c.utterance, c.last())).collect();
            let (mean, std) = mean_std(&finals);
            let (bmean, bstd) = mean_std(&baselines);
            SummaryRow {
                n_bodyguards: id.n_bodyguards,
                reward_kind: id.reward_kind,
                learner_kind: id.learner_kind,
                communication_enabled: id.communication_enabled,
                n_seeds: seeds.len(),
                final_episode: seeds.values().map(SeedCurve::last).max().unwrap_or(0),
                mean_total_threat: mean,
                std_total_threat: std,
                baseline_mean_total_threat: bmean,
                baseline_std_total_threat: bstd,
                mean_reward: mean_std(&rewards).0,
                utterance_rate: mean_std(&rates).0,
                per_seed: seeds.keys().copied().zip(finals).collect(),
            }
        })
        .collect()
}

/// Reward functions compared within one (team size, learner, channel) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub n_bodyguards: usize,
    pub learner_kind: LearnerKind,
    pub communication_enabled: bool,
    /// `(reward kind, mean final total threat)`, lowest threat first.
    pub ranking: Vec<(RewardKind, f64)>,
    /// Whether comm-penalty's mean threat is <= threat-only's; `None` unless both ran.
    pub comm_penalty_le_threat_only: Option<bool>,
}

pub fn compare_rewards(summary: &[SummaryRow]) -> Vec<ComparisonRow> {
    let mut groups: BTreeMap<(usize, LearnerKind, bool), Vec<(RewardKind, f64)>> = BTreeMap::new();
    for s in summary {
        groups
            .entry((s.n_bodyguards, s.learner_kind, s.communication_enabled))
            .or_default()
            .push((s.reward_kind, s.mean_total_threat));
    }
    groups
        .into_iter()
        .map(|((n, learner, comm), mut ranking)| {
            ranking.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            let find = |k: RewardKind| ranking.iter().find(|r| r.0 == k).map(|r| r.1);
            let flag = match (find(RewardKind::CommPenalty), find(RewardKind::ThreatOnly)) {
                (Some(c), Some(t)) => Some(c <= t),
                _ => None,
            };
            ComparisonRow {
                n_bodyguards: n,
                learner_kind: learner,
                communication_enabled: comm,
                ranking,
                comm_penalty_le_threat_only: flag,
            }
        })
        .collect()
}

/// Paths written by [`emit_report`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFiles {
    pub raw: PathBuf,
    pub summary: PathBuf,
    pub curves: PathBuf,
    pub comparison: PathBuf,
    pub appendix: PathBuf,
}

struct Table {
    path: PathBuf,
    w: csv::Writer<std::fs::File>,
}

impl Table {
    fn create(path: PathBuf, header: &[&str]) -> Result<Self, HarnessError> {
        let mut w = csv::Writer::from_path(&path).map_err(|e| HarnessError::csv(&path, e))?;
        w.write_record(header).map_err(|e| HarnessError::csv(&path, e))?;
        Ok(Table { path, w })
    }

    fn row(&mut self, fields: Vec<String>) -> Result<(), HarnessError> {
        self.w.write_record(&fields).map_err(|e| HarnessError::csv(&self.path, e))
    }

    fn finish(mut self) -> Result<PathBuf, HarnessError> {
        self.w.flush().map_err(|e| HarnessError::io(&self.path, e))?;
        Ok(self.path)
    }
}

fn team_words(n: usize) -> String {
    match n {
        1 => "One Agent".into(),
        2 => "Two Agents".into(),
        3 => "Three Agents".into(),
        4 => "Four Agents".into(),
        _ => format!("{n} Agents"),
    }
}

fn reward_title(k: RewardKind) -> &'static str {
    match k {
        RewardKind::ThreatOnly => "Threat-Only",
        RewardKind::BinaryThreat => "Binary Threat",
        RewardKind::Composite => "Composite",
        RewardKind::CommPenalty => "Communication Penalty",
    }
}

/// Markdown tables with one column per (team size, channel) and one row per
/// seed, one table per (learner, reward function).
fn appendix_markdown(summary: &[SummaryRow]) -> String {
    let mut tables: BTreeMap<(LearnerKind, RewardKind), Vec<&SummaryRow>> = BTreeMap::new();
    for s in summary {
        tables.entry((s.learner_kind, s.reward_kind)).or_default().push(s);
    }
    let mut out = String::new();
    for ((learner, reward), cols) in tables {
        let learner = match learner {
            LearnerKind::Ddpg => "DDPG",
            LearnerKind::Maddpg => "MADDPG",
        };
        out.push_str(&format!("### {learner} {} Reward Function\n\n", reward_title(reward)));
        let headers: Vec<String> = cols
            .iter()
            .map(|c| {
                format!("{} Communication {}", team_words(c.n_bodyguards), if c.communication_enabled { "On" } else { "Off" })
            })
            .collect();
        out.push_str(&format!("| run | {} |\n", headers.join(" | ")));
        out.push_str(&format!("|---|{}\n", "---|".repeat(headers.len())));
        let rows = cols.iter().map(|c| c.per_seed.len()).max().unwrap_or(0);
        for k in 0..rows {
            let cells: Vec<String> =
                cols.iter().map(|c| c.per_seed.get(k).map(|v| format!("{:.2}", v.1)).unwrap_or_default()).collect();
            out.push_str(&format!("| {} | {} |\n", k + 1, cells.join(" | ")));
        }
        let means: Vec<String> =
            cols.iter().map(|c| format!("{:.2} ± {:.2}", c.mean_total_threat, c.std_total_threat)).collect();
        out.push_str(&format!("| mean ± std | {} |\n\n", means.join(" | ")));
    }
    out
}

/// Writes the raw records and every derived table into `out_dir`:
///
/// * `raw_records.csv`: all records
/// * `summary.csv`: mean ± std of total threat over seeds per axis combination
/// * `curves.csv`: evaluation total threat vs training episode per combination
/// * `comparison.csv`: reward functions ranked per group, with the
///   comm-penalty <= threat-only flag
/// * `appendix.md`: per-seed tables
///
/// Aggregates are computed from the raw CSV as written (9 significant
/// digits), so recomputing them from that file reproduces them exactly.
pub fn emit_report(records: &[EvalRecord], out_dir: &Path) -> Result<ReportFiles, HarnessError> {
    if records.is_empty() {
        return Err(HarnessError::NoRecords);
    }
    create_dir(out_dir)?;
    let raw = out_dir.join("raw_records.csv");
    write_records_csv(&raw, records)?;
    let records = read_records_csv(&raw)?;
    let summary = summarize(&records);

    let mut t = Table::create(
        out_dir.join("summary.csv"),
        &[
            "n_bodyguards",
            "reward_kind",
            "learner_kind",
            "communication_enabled",
            "n_seeds",
            "final_episode",
            "mean_total_threat",
            "std_total_threat",
            "baseline_mean_total_threat",
            "baseline_std_total_threat",
            "mean_reward",
            "utterance_rate",
        ],
    )?;
    for s in &summary {
        t.row(vec![
            s.n_bodyguards.to_string(),
            s.reward_kind.to_string(),
            s.learner_kind.to_string(),
            s.communication_enabled.to_string(),
            s.n_seeds.to_string(),
            s.final_episode.to_string(),
            sig9(s.mean_total_threat),
            sig9(s.std_total_threat),
            sig9(s.baseline_mean_total_threat),
            sig9(s.baseline_std_total_threat),
            sig9(s.mean_reward),
            sig9(s.utterance_rate),
        ])?;
    }
    let summary_path = t.finish()?;

    let mut t = Table::create(
        out_dir.join("curves.csv"),
        &[
            "n_bodyguards",
            "reward_kind",
            "learner_kind",
            "communication_enabled",
            "episode_index",
            "n_seeds",
            "mean_total_threat",
            "std_total_threat",
        ],
    )?;
    for (id, seeds) in group(&records) {
        let mut by_episode: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for c in seeds.values() {
            for ep in c.threat.keys() {
                by_episode.entry(*ep).or_default().push(SeedCurve::mean_at(&c.threat, *ep));
            }
        }
        for (ep, vals) in by_episode {
            let (m, s) = mean_std(&vals);
            t.row(vec![
                id.n_bodyguards.to_string(),
                id.reward_kind.to_string(),
                id.learner_kind.to_string(),
                id.communication_enabled.to_string(),
                ep.to_string(),
                vals.len().to_string(),
                sig9(m),
                sig9(s),
            ])?;
        }
    }
    let curves = t.finish()?;

    let mut t = Table::create(
        out_dir.join("comparison.csv"),
        &[
            "n_bodyguards",
            "learner_kind",
            "communication_enabled",
            "rank",
            "reward_kind",
            "mean_total_threat",
            "comm_penalty_le_threat_only",
        ],
    )?;
    for c in compare_rewards(&summary) {
        let flag = c.comm_penalty_le_threat_only.map_or("n/a".to_string(), |b| b.to_string());
        for (rank, (kind, mean)) in c.ranking.iter().enumerate() {
            t.row(vec![
                c.n_bodyguards.to_string(),
                c.learner_kind.to_string(),
                c.communication_enabled.to_string(),
                (rank + 1).to_string(),
                kind.to_string(),
                sig9(*mean),
                flag.clone(),
            ])?;
        }
    }
    let comparison = t.finish()?;

    let appendix = out_dir.join("appendix.md");
    write_file(&appendix, appendix_markdown(&summary).as_bytes())?;
    Ok(ReportFiles { raw, summary: summary_path, curves, comparison, appendix })
}
