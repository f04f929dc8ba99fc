//! On-disk artifacts: CSV tables, the run manifest and the SVG trajectory
//! panels. Every CSV starts with a `# seed=…,config_hash=…` line.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::agent::RunRecord;
use crate::env::{POSITION_MAX, POSITION_MIN};
use crate::error::{Error, Result};
use crate::genmodel::Episode;
use crate::planner::BranchEvaluation;

/// Identity stamped on every artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stamp {
    pub seed: u64,
    pub config_hash: String,
}

impl Stamp {
    fn comment(&self) -> String {
        format!("# seed={},config_hash={}\n", self.seed, self.config_hash)
    }
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn csv_table(stamp: &Stamp, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut buf = stamp.comment().into_bytes();
    {
        let mut wr = csv::Writer::from_writer(&mut buf);
        let fail = |e: csv::Error| Error::Contract(format!("csv encoding: {e}"));
        wr.write_record(header).map_err(fail)?;
        for r in rows {
            wr.write_record(&r).map_err(fail)?;
        }
        wr.flush().map_err(|e| Error::Contract(format!("csv encoding: {e}")))?;
    }
    Ok(buf)
}

pub fn episode_csv(stamp: &Stamp, ep: &Episode) -> Result<Vec<u8>> {
    let mut buf = stamp.comment().into_bytes();
    ep.write_csv(&mut buf)?;
    Ok(buf)
}

pub fn read_episode(path: &Path) -> Result<Episode> {
    let text = read_file(path)?;
    Episode::read_csv(text.as_bytes()).map_err(|e| match e {
        Error::Format { message, .. } => Error::Format {
            path: path.into(),
            message,
        },
        other => other,
    })
}

/// Episode files in `dir`, sorted by name.
pub fn episode_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    Ok(files)
}

pub fn loss_csv(stamp: &Stamp, losses: &[f64]) -> Result<Vec<u8>> {
    csv_table(
        stamp,
        &["epoch", "loss"],
        losses.iter().enumerate().map(|(i, l)| vec![(i + 1).to_string(), l.to_string()]),
    )
}

fn policy_string(b: &BranchEvaluation) -> String {
    b.policy_sequence.iter().map(|a| a.symbol()).collect()
}

/// `node_g` holds the recursive score of every node on the path, root first,
/// separated by `;`.
pub fn branches_csv(stamp: &Stamp, branches: &[BranchEvaluation]) -> Result<Vec<u8>> {
    csv_table(
        stamp,
        &[
            "branch_id",
            "policy_sequence",
            "kl_total",
            "entropy_total",
            "g_value",
            "selected_flag",
            "node_g",
        ],
        branches.iter().map(|b| {
            vec![
                b.branch_id.to_string(),
                policy_string(b),
                b.kl_total.to_string(),
                b.entropy_total.to_string(),
                b.g_value.to_string(),
                u8::from(b.selected).to_string(),
                b.node_g.iter().map(f64::to_string).collect::<Vec<_>>().join(";"),
            ]
        }),
    )
}

/// Long format: one row per branch, particle and step.
pub fn trajectories_csv(stamp: &Stamp, branches: &[BranchEvaluation]) -> Result<Vec<u8>> {
    let rows = branches.iter().flat_map(|b| {
        b.sampled_positions.iter().enumerate().flat_map(move |(p, traj)| {
            traj.iter()
                .enumerate()
                .map(move |(t, x)| vec![b.branch_id.to_string(), p.to_string(), (t + 1).to_string(), x.to_string()])
        })
    });
    csv_table(stamp, &["branch_id", "particle", "t", "position"], rows)
}

pub fn run_csv(stamp: &Stamp, rec: &RunRecord) -> Result<Vec<u8>> {
    csv_table(
        stamp,
        &["t", "true_pos", "true_vel", "obs", "action", "replan_flag"],
        rec.steps.iter().map(|s| {
            vec![
                s.t.to_string(),
                s.true_position.to_string(),
                s.true_velocity.to_string(),
                s.obs.to_string(),
                s.action.map(|a| a.symbol().to_string()).unwrap_or_default(),
                u8::from(s.replan).to_string(),
            ]
        }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub goal_reached: bool,
    pub steps: usize,
    pub seed: u64,
    pub first_action: Option<String>,
    pub config_hash: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub seed: u64,
    pub config_hash: String,
    pub timestamp_unix: u64,
    pub files: Vec<String>,
}

/// `manifest.json`: the last invocation of every command. The only artifact
/// carrying a timestamp.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub commands: BTreeMap<String, ManifestEntry>,
}

impl Manifest {
    pub fn record(dir: &Path, command: &str, stamp: &Stamp, files: Vec<String>) -> Result<()> {
        let path = dir.join("manifest.json");
        let mut manifest: Manifest = if path.exists() {
            serde_json::from_str(&read_file(&path)?).map_err(|e| Error::Format {
                path: path.clone(),
                message: e.to_string(),
            })?
        } else {
            Manifest::default()
        };
        let timestamp_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        manifest.commands.insert(
            command.to_string(),
            ManifestEntry {
                seed: stamp.seed,
                config_hash: stamp.config_hash.clone(),
                timestamp_unix,
                files,
            },
        );
        write_file(&path, to_json(&manifest).as_bytes())
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifact serializes");
    s.push('\n');
    s
}

const PANEL_W: f64 = 240.0;
const PANEL_H: f64 = 160.0;
const MARGIN: f64 = 28.0;
const COLUMNS: usize = 4;

/// One panel per branch with every particle's predicted position.
pub fn branches_svg(stamp: &Stamp, branches: &[BranchEvaluation], goal: f64) -> String {
    let rows = branches.len().div_ceil(COLUMNS).max(1);
    let width = COLUMNS as f64 * (PANEL_W + MARGIN) + MARGIN;
    let height = rows as f64 * (PANEL_H + 2.0 * MARGIN) + MARGIN;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, "<!-- seed={} config_hash={} -->", stamp.seed, stamp.config_hash);
    let y_of = |x: f64| PANEL_H * (POSITION_MAX - x.clamp(POSITION_MIN, POSITION_MAX)) / (POSITION_MAX - POSITION_MIN);
    for (i, b) in branches.iter().enumerate() {
        let ox = MARGIN + (i % COLUMNS) as f64 * (PANEL_W + MARGIN);
        let oy = MARGIN + (i / COLUMNS) as f64 * (PANEL_H + 2.0 * MARGIN);
        let steps = b.sampled_positions.first().map_or(1, Vec::len).max(2);
        let x_of = |t: usize| PANEL_W * t as f64 / (steps - 1) as f64;
        let _ = writeln!(s, r#"<g transform="translate({ox},{oy})">"#);
        let _ = writeln!(
            s,
            r#"<text x="0" y="-8">{} KL={:.1} H={:.1} G={:.1}{}</text>"#,
            policy_string(b),
            b.kl_total,
            b.entropy_total,
            b.g_value,
            if b.selected { " *" } else { "" }
        );
        let _ = writeln!(
            s,
            r#"<rect width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="black"/>"#
        );
        let gy = y_of(goal);
        let _ = writeln!(
            s,
            r##"<line x1="0" y1="{gy:.2}" x2="{PANEL_W}" y2="{gy:.2}" stroke="#2a2" stroke-dasharray="4 3"/>"##
        );
        for traj in &b.sampled_positions {
            let pts: Vec<String> = traj
                .iter()
                .enumerate()
                .map(|(t, x)| format!("{:.2},{:.2}", x_of(t), y_of(*x)))
                .collect();
            let _ = writeln!(
                s,
                r##"<polyline points="{}" fill="none" stroke="#1f4e9c" stroke-opacity="0.15"/>"##,
                pts.join(" ")
            );
        }
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    s
}
