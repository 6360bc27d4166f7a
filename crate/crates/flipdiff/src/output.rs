//! CSV tables, JSON artifacts, the hashed manifest and the timestamp sidecar.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Shortest decimal that parses back to the same `f64`.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        String::from("NaN")
    } else if v.is_infinite() {
        String::from(if v > 0.0 { "inf" } else { "-inf" })
    } else {
        ryu::Buffer::new().format_finite(v).to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(i64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Float(v) => format_float(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
            Cell::Text(s) => s.clone(),
        }
    }
}

/// A header row plus data rows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::render).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Parses a file written by [`Table::to_csv`]; numeric cells become floats.
    pub fn parse_csv(text: &str) -> Result<Self, String> {
        let mut lines = text.lines().filter(|l| !l.is_empty());
        let header: Vec<String> = lines.next().ok_or("empty table")?.split(',').map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let cells: Vec<Cell> = line
                .split(',')
                .map(|c| match c.parse::<f64>() {
                    Ok(v) => Cell::Float(v),
                    Err(_) => Cell::Text(c.to_string()),
                })
                .collect();
            if cells.len() != header.len() {
                return Err(format!("row {} has {} cells, header has {}", i + 1, cells.len(), header.len()));
            }
            rows.push(cells);
        }
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.header.iter().position(|h| h == name)?;
        self.rows
            .iter()
            .map(|r| match &r[idx] {
                Cell::Float(v) => Some(*v),
                Cell::Int(v) => Some(*v as f64),
                Cell::Text(_) => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub command: String,
    pub master_seed: u64,
    pub seed_derivation: &'static str,
    pub files: Vec<ManifestEntry>,
}

pub const SEED_DERIVATION: &str = "trajectory i uses derive(master, i) with derive(p, k) = splitmix64(p ^ splitmix64(k + 0x5851f42d4c957f2d)); \
     each site stream uses ChaCha8 seeded by derive(trajectory seed, 0x666c6970) on the stream keyed by the hashed site coordinates";

/// Collects the files of one run and writes the manifest and sidecar last.
pub struct Artifacts {
    dir: PathBuf,
    entries: Vec<ManifestEntry>,
    started: u64,
}

fn unix_seconds() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl Artifacts {
    pub fn create(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), entries: Vec::new(), started: unix_seconds() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, body: &[u8]) -> io::Result<()> {
        fs::write(self.dir.join(name), body)?;
        let digest = Sha256::digest(body);
        let sha256 = digest.iter().map(|b| format!("{b:02x}")).collect();
        self.entries.retain(|e| e.path != name);
        self.entries.push(ManifestEntry { path: name.to_string(), sha256, bytes: body.len() });
        Ok(())
    }

    pub fn csv(&mut self, name: &str, table: &Table) -> io::Result<()> {
        self.write(name, table.to_csv().as_bytes())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> io::Result<()> {
        let mut body = serde_json::to_vec_pretty(value).map_err(io::Error::other)?;
        body.push(b'\n');
        self.write(name, &body)
    }

    /// Writes the timestamp sidecar, then the manifest listing every file.
    pub fn finish(mut self, command: &str, master_seed: u64) -> io::Result<Vec<ManifestEntry>> {
        #[derive(Serialize)]
        struct Sidecar {
            command: String,
            started_unix: u64,
            finished_unix: u64,
        }
        let sidecar = Sidecar { command: command.to_string(), started_unix: self.started, finished_unix: unix_seconds() };
        self.json("timestamps.json", &sidecar)?;
        let manifest = Manifest {
            schema_version: crate::config::SCHEMA_VERSION,
            command: command.to_string(),
            master_seed,
            seed_derivation: SEED_DERIVATION,
            files: self.entries.clone(),
        };
        let mut body = serde_json::to_vec_pretty(&manifest).map_err(io::Error::other)?;
        body.push(b'\n');
        fs::write(self.dir.join("manifest.json"), body)?;
        Ok(self.entries)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_through_csv() {
        for v in [0.1, 1.0 / 3.0, 1e-300, 123456789.125, -2.5e-7, 0.0] {
            let s = format_float(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        }
        assert_eq!(format_float(0.1), "0.1");
        assert_eq!(format_float(1e-10), "1e-10");
    }

    #[test]
    fn table_round_trip() {
        let mut t = Table::new(["a", "b"]);
        t.push(vec![Cell::from(0.3), Cell::from(7usize)]);
        t.push(vec![Cell::from(-1e-12), Cell::from(2usize)]);
        let back = Table::parse_csv(&t.to_csv()).unwrap();
        assert_eq!(back.column("a").unwrap(), vec![0.3, -1e-12]);
        assert_eq!(back.column("b").unwrap(), vec![7.0, 2.0]);
    }

    #[test]
    fn manifest_lists_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = Artifacts::create(dir.path()).unwrap();
        a.write("x.txt", b"abc").unwrap();
        let entries = a.finish("test", 3).unwrap();
        assert_eq!(entries[0].sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert!(entries.iter().any(|e| e.path == "timestamps.json"));
        let manifest = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
        assert!(manifest.contains("\"master_seed\": 3"));
    }
}
