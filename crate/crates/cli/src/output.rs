//! CSV tables, run manifests and gnuplot scripts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use crate::config::ConfigError;

/// Formats `v` with at most 12 significant digits, shortest form.
pub fn num(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    let rounded: f64 = format!("{v:.11e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

pub struct Table {
    pub file: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
    /// Columns for the optional gnuplot script, `(x, y)`.
    pub plot: Option<(&'static str, &'static str)>,
}

impl Table {
    pub fn new(file: impl Into<String>, header: &[&'static str]) -> Self {
        Table {
            file: file.into(),
            header: header.to_vec(),
            rows: Vec::new(),
            plot: None,
        }
    }

    pub fn plot(mut self, x: &'static str, y: &'static str) -> Self {
        self.plot = Some((x, y));
        self
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self, digest: &str) -> String {
        let mut s = format!("# manifest: {digest}\n{}\n", self.header.join(","));
        for row in &self.rows {
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub scenario: PathBuf,
    pub command: String,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub version: &'static str,
    pub config_digest: String,
    pub files: Vec<String>,
}

pub struct Output {
    pub dir: PathBuf,
    pub force: bool,
    pub plot: bool,
}

fn gnuplot(table: &Table, x: &str, y: &str) -> String {
    let mut s = String::new();
    let stem = table.file.trim_end_matches(".csv");
    writeln!(s, "set datafile separator ','").unwrap();
    writeln!(s, "set key autotitle columnhead").unwrap();
    writeln!(s, "set xlabel '{x}'\nset ylabel '{y}'").unwrap();
    writeln!(s, "set terminal pngcairo size 800,600\nset output '{stem}.png'").unwrap();
    writeln!(s, "plot '{}' using '{x}':'{y}' with linespoints", table.file).unwrap();
    s
}

impl Output {
    fn target(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes every table plus `manifest.json`. Nothing is written when any
    /// target already exists and `force` is off.
    pub fn write(&self, tables: &[Table], mut manifest: RunManifest, extra: &[PathBuf]) -> Result<Vec<PathBuf>> {
        let mut files: Vec<(String, String)> = Vec::new();
        for t in tables {
            files.push((t.file.clone(), t.render(&manifest.config_digest)));
            if let (true, Some((x, y))) = (self.plot, t.plot) {
                files.push((format!("{}.gp", t.file.trim_end_matches(".csv")), gnuplot(t, x, y)));
            }
        }
        manifest.files = files.iter().map(|(n, _)| n.clone()).collect();
        let body = serde_json::to_string_pretty(&manifest)? + "\n";
        files.push(("manifest.json".into(), body));

        if !self.force {
            let clash = files
                .iter()
                .map(|(n, _)| self.target(n))
                .chain(extra.iter().cloned())
                .find(|p| p.exists());
            if let Some(p) = clash {
                bail!(ConfigError(format!("{} exists; pass --force to overwrite", p.display())));
            }
        }
        fs::create_dir_all(&self.dir).with_context(|| format!("creating {}", self.dir.display()))?;
        let mut written = Vec::new();
        for (name, body) in files {
            let path = self.target(&name);
            fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
            written.push(path);
        }
        Ok(written)
    }
}

pub fn exists_check(path: &Path, force: bool) -> Result<()> {
    if !force && path.exists() {
        bail!(ConfigError(format!("{} exists; pass --force to overwrite", path.display())));
    }
    Ok(())
}
