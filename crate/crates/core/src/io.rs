//! CSV and JSON artifacts.
//!
//! Every CSV file starts with `#` comment lines (config hash, grid, clip
//! counts) followed by a fixed column header. Floats are written with 17
//! significant digits so a parse/write cycle reproduces the file exactly.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hjb::{FlagSummary, SolverGrid, ValueSurface};
use crate::sim::ChainRecord;

pub const SURFACE_COLUMNS: &str = "theta,t,x,u,flag";
pub const UBAR_COLUMNS: &str = "t,ubar";
const CHAIN_COLUMNS: &str = "seed,quit_count,payoff,terminal_gap";

pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Provenance lines written at the top of every artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunHeader {
    pub command: String,
    pub config_hash: String,
    pub grid: String,
    pub flags: String,
}

impl RunHeader {
    pub fn new(command: &str, config_hash: &str, grid: &SolverGrid, sim_steps: Option<usize>, flags: &FlagSummary) -> Self {
        let mut g = format!(
            "n_time={} n_space={} x_min_depth={} stepping={:?}",
            grid.n_time, grid.n_space, grid.x_min_depth, grid.stepping
        );
        if let Some(s) = sim_steps {
            let _ = write!(g, " sim_steps={s}");
        }
        Self {
            command: command.into(),
            config_hash: config_hash.into(),
            grid: g,
            flags: format!(
                "z_unbounded={} z_clipped={} eta_clipped={} boundary={} terminal_layer={}",
                flags.z_unbounded, flags.z_clipped, flags.eta_clipped, flags.boundary, flags.terminal_layer
            ),
        }
    }

    pub fn lines(&self) -> Vec<String> {
        vec![
            format!("command: {}", self.command),
            format!("config_sha256: {}", self.config_hash),
            format!("grid: {}", self.grid),
            format!("flags: {}", self.flags),
        ]
    }
}

fn write_comments(out: &mut String, lines: &[String]) {
    for l in lines {
        out.push_str("# ");
        out.push_str(l);
        out.push('\n');
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceRow {
    pub theta: f64,
    pub t: f64,
    pub x: f64,
    pub u: f64,
    pub flag: u8,
}

/// Parsed form of a surface CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceTable {
    pub comments: Vec<String>,
    pub rows: Vec<SurfaceRow>,
}

impl SurfaceTable {
    pub fn from_surfaces(comments: Vec<String>, surfaces: &[ValueSurface]) -> Self {
        let mut rows = Vec::new();
        for s in surfaces {
            for k in 0..s.times.len() {
                for i in 0..s.n_space {
                    rows.push(SurfaceRow {
                        theta: s.theta,
                        t: s.times[k],
                        x: s.x(k, i),
                        u: s.value(k, i),
                        flag: s.flag(k, i).bits(),
                    });
                }
            }
        }
        Self { comments, rows }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.rows.len() * 96);
        write_comments(&mut out, &self.comments);
        out.push_str(SURFACE_COLUMNS);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{}", fmt_num(r.theta), fmt_num(r.t), fmt_num(r.x), fmt_num(r.u), r.flag);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut comments = Vec::new();
        let mut lines = text.lines().enumerate();
        let mut header_seen = false;
        for (_, line) in lines.by_ref() {
            if let Some(c) = line.strip_prefix("# ") {
                comments.push(c.to_string());
            } else if line == SURFACE_COLUMNS {
                header_seen = true;
                break;
            } else {
                return Err(Error::Parse(format!("expected `{SURFACE_COLUMNS}`, found `{line}`")));
            }
        }
        if !header_seen {
            return Err(Error::Parse("missing surface column header".into()));
        }
        let mut rows = Vec::new();
        for (n, line) in lines {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(Error::Parse(format!("line {}: expected 5 fields, found {}", n + 1, f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("line {}: `{s}`: {e}", n + 1)));
            rows.push(SurfaceRow {
                theta: num(f[0])?,
                t: num(f[1])?,
                x: num(f[2])?,
                u: num(f[3])?,
                flag: f[4].parse().map_err(|e| Error::Parse(format!("line {}: flag `{}`: {e}", n + 1, f[4])))?,
            });
        }
        Ok(Self { comments, rows })
    }
}

pub fn ubar_csv(comments: &[String], times: &[f64], ubar: &[f64]) -> String {
    let mut out = String::new();
    write_comments(&mut out, comments);
    out.push_str(UBAR_COLUMNS);
    out.push('\n');
    for (t, u) in times.iter().zip(ubar) {
        let _ = writeln!(out, "{},{}", fmt_num(*t), fmt_num(*u));
    }
    out
}

/// One row per chain, in stream order; quit times fill `tau_1..tau_k` and
/// shorter rows leave the trailing fields empty.
pub fn chains_csv(comments: &[String], records: &[ChainRecord]) -> String {
    let k = records.iter().map(|r| r.quit_times.len()).max().unwrap_or(0);
    let mut out = String::new();
    write_comments(&mut out, comments);
    out.push_str(CHAIN_COLUMNS);
    for j in 1..=k {
        let _ = write!(out, ",tau_{j}");
    }
    out.push('\n');
    for r in records {
        let _ = write!(out, "{},{},{},{}", r.seed, r.quit_count, fmt_num(r.payoff), fmt_num(r.terminal_gap));
        for j in 0..k {
            out.push(',');
            if let Some(tau) = r.quit_times.get(j) {
                out.push_str(&fmt_num(*tau));
            }
        }
        out.push('\n');
    }
    out
}

/// Plain two-or-more column table with a comment block.
pub fn table_csv(comments: &[String], columns: &[&str], rows: &[Vec<f64>]) -> String {
    let mut out = String::new();
    write_comments(&mut out, comments);
    out.push_str(&columns.join(","));
    out.push('\n');
    for r in rows {
        let cells: Vec<String> = r.iter().map(|v| fmt_num(*v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(format!("json: {e}")))?;
    s.push('\n');
    Ok(s)
}

pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), contents)?;
    Ok(())
}
