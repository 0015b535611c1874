use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::acnet::Losses;
use crate::sim_env::EpisodeStatus;

pub const METRICS_HEADER: &str = "episode,map,outcome,total_reward,steps,policy_loss,value_loss,entropy,wall_ms";
const UPDATES_HEADER: &str = "update,samples,policy_loss,value_loss,entropy,total_loss";

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: u64,
    pub map: String,
    pub outcome: EpisodeStatus,
    pub total_reward: f64,
    pub steps: usize,
    /// Losses of the most recent update when the episode ended.
    pub losses: Option<Losses>,
    /// Milliseconds since the run started; 0 when wall-clock logging is off.
    pub wall_ms: u64,
}

impl EpisodeRecord {
    pub fn csv_line(&self) -> String {
        let (p, v, e) = match self.losses {
            Some(l) => (l.policy.to_string(), l.value.to_string(), l.entropy.to_string()),
            None => Default::default(),
        };
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.episode,
            self.map.replace([',', '\n'], "_"),
            self.outcome,
            self.total_reward,
            self.steps,
            p,
            v,
            e,
            self.wall_ms
        )
    }

    fn parse(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return None;
        }
        let outcome = match f[2] {
            "goal" => EpisodeStatus::GoalReached,
            "collision" => EpisodeStatus::Collided,
            "timeout" => EpisodeStatus::TimedOut,
            _ => return None,
        };
        let losses = if f[5].is_empty() {
            None
        } else {
            let policy = f[5].parse().ok()?;
            let value = f[6].parse().ok()?;
            let entropy = f[7].parse().ok()?;
            Some(Losses {
                policy,
                value,
                entropy,
                total: f64::NAN,
            })
        };
        Some(Self {
            episode: f[0].parse().ok()?,
            map: f[1].to_string(),
            outcome,
            total_reward: f[3].parse().ok()?,
            steps: f[4].parse().ok()?,
            losses,
            wall_ms: f[8].parse().ok()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateRecord {
    pub update: u64,
    pub samples: usize,
    pub losses: Losses,
}

/// Append-only CSV logs of episodes and updates.
pub struct MetricsWriter {
    episodes: BufWriter<File>,
    updates: BufWriter<File>,
}

fn open_append(path: &Path, header: &str) -> io::Result<BufWriter<File>> {
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut out = BufWriter::new(file);
    if out.get_ref().metadata()?.len() == 0 {
        writeln!(out, "{header}")?;
    }
    Ok(out)
}

impl MetricsWriter {
    pub fn open(episodes: &Path, updates: &Path) -> io::Result<Self> {
        Ok(Self {
            episodes: open_append(episodes, METRICS_HEADER)?,
            updates: open_append(updates, UPDATES_HEADER)?,
        })
    }

    pub fn episode(&mut self, record: &EpisodeRecord) -> io::Result<()> {
        writeln!(self.episodes, "{}", record.csv_line())
    }

    pub fn update(&mut self, record: &UpdateRecord) -> io::Result<()> {
        let l = &record.losses;
        writeln!(
            self.updates,
            "{},{},{},{},{},{}",
            record.update, record.samples, l.policy, l.value, l.entropy, l.total
        )
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.episodes.flush()?;
        self.updates.flush()
    }
}

/// Reads a metrics CSV written by [`MetricsWriter`].
pub fn read_metrics(path: &Path) -> io::Result<Vec<EpisodeRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line.trim() != METRICS_HEADER {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidData,
                    "not a metrics CSV (unexpected header)",
                ));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let record = EpisodeRecord::parse(&line).ok_or_else(|| {
            io::Error::new(
                io::ErrorKind::InvalidData,
                format!("line {}: malformed metrics row", i + 1),
            )
        })?;
        out.push(record);
    }
    Ok(out)
}

fn python_string(s: &str) -> String {
    let mut out = String::from("'");
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\'' => out.push_str("\\'"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('\'');
    out
}

/// Matplotlib script drawing score and episode length over training, each as
/// raw points plus a moving average over `window` episodes.
pub fn plot_script(metrics_csv: &str, image: &str, window: usize) -> String {
    format!(
        r#"# Score and steps per episode. Run with: python3 <this file>
import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

METRICS = {csv}
IMAGE = {image}
WINDOW = {window}


def moving_average(values, n):
    out, total = [], 0.0
    for i, v in enumerate(values):
        total += v
        if i >= n:
            total -= values[i - n]
        out.append(total / min(i + 1, n))
    return out


with open(METRICS, newline="") as f:
    rows = list(csv.DictReader(f))
episode = [int(r["episode"]) for r in rows]
score = [float(r["total_reward"]) for r in rows]
steps = [int(r["steps"]) for r in rows]

fig, (top, bottom) = plt.subplots(2, 1, sharex=True, figsize=(10, 7))
top.plot(episode, score, ".", color="0.7", markersize=2, label="episode")
top.plot(episode, moving_average(score, WINDOW), lw=2, label=f"mean of {{WINDOW}}")
top.set_ylabel("score (total reward)")
top.legend(loc="upper left")
top.grid(True)
bottom.plot(episode, steps, ".", color="0.7", markersize=2, label="episode")
bottom.plot(episode, moving_average(steps, WINDOW), lw=2, label=f"mean of {{WINDOW}}")
bottom.set_ylabel("steps")
bottom.set_xlabel("episode")
bottom.grid(True)
fig.tight_layout()
fig.savefig(IMAGE, dpi=100)
"#,
        csv = python_string(metrics_csv),
        image = python_string(image),
        window = window.max(1),
    )
}
