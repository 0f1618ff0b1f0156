//! Artifact files: CSV, JSON, 16-bit portable graymaps, and the manifest
//! that hashes every one of them.

use std::fs;
use std::io;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub files: Vec<ManifestEntry>,
}

/// Shortest representation that reads back to the same `f64`.
pub fn num(x: f64) -> String {
    format!("{x}")
}

/// Named axis of a 2D map.
#[derive(Debug, Clone, Serialize)]
pub struct MapAxis {
    pub name: String,
    pub unit: String,
    pub values: Vec<f64>,
}

impl MapAxis {
    pub fn new(name: &str, unit: &str, values: Vec<f64>) -> Self {
        MapAxis {
            name: name.into(),
            unit: unit.into(),
            values,
        }
    }
}

#[derive(Serialize)]
struct Sidecar<'a> {
    image: &'a str,
    quantity: &'a str,
    width: usize,
    height: usize,
    maxval: u16,
    /// Gray level g maps to value_min + g/maxval·(value_max − value_min).
    value_min: f64,
    value_max: f64,
    row_order: &'static str,
    x: &'a MapAxis,
    y: &'a MapAxis,
}

/// Binary P5 image, 16 bits per pixel, big-endian, linear from the map's
/// minimum to its maximum. Row 0 of `data` becomes the first image row.
pub fn pgm_bytes(width: usize, height: usize, data: &[f64]) -> (Vec<u8>, f64, f64) {
    let finite = data.iter().copied().filter(|v| v.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 0.0) };
    let span = hi - lo;
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    out.reserve(2 * data.len());
    for v in data {
        let g = if span > 0.0 && v.is_finite() {
            ((v - lo) / span * 65535.0).round().clamp(0.0, 65535.0) as u16
        } else {
            0
        };
        out.extend_from_slice(&g.to_be_bytes());
    }
    (out, lo, hi)
}

/// Writes into one directory and records what it wrote.
pub struct Emitter {
    dir: PathBuf,
    files: Vec<ManifestEntry>,
}

impl Emitter {
    /// Creates `dir` and removes the files listed by a manifest left there
    /// by an earlier run, so the new manifest describes the whole directory.
    pub fn new(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        let old = dir.join(MANIFEST);
        if let Ok(text) = fs::read_to_string(&old) {
            if let Ok(m) = serde_json::from_str::<Manifest>(&text) {
                for f in m.files {
                    let p = Path::new(&f.path);
                    if p.components().all(|c| matches!(c, Component::Normal(_))) {
                        let _ = fs::remove_file(dir.join(p));
                    }
                }
            }
            fs::remove_file(&old)?;
        }
        Ok(Emitter {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> io::Result<()> {
        fs::write(self.dir.join(name), bytes)?;
        self.record(name.to_string(), bytes);
        Ok(())
    }

    /// Writes a file outside the output directory; it is listed under the
    /// path it was written to.
    pub fn write_external(&mut self, path: &Path, bytes: &[u8]) -> io::Result<()> {
        fs::write(path, bytes)?;
        self.record(path.display().to_string(), bytes);
        Ok(())
    }

    fn record(&mut self, path: String, bytes: &[u8]) {
        self.files.retain(|f| f.path != path);
        self.files.push(ManifestEntry {
            path,
            bytes: bytes.len() as u64,
            sha256: hex::encode(Sha256::digest(bytes)),
        });
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> io::Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// One header line, then one line per row.
    pub fn csv<I>(&mut self, name: &str, header: &[&str], rows: I) -> io::Result<()>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let mut text = header.join(",");
        text.push('\n');
        for row in rows {
            text.push_str(&row.join(","));
            text.push('\n');
        }
        self.write(name, text.as_bytes())
    }

    /// `stem.pgm` plus `stem.json` giving the axes and the gray scale.
    /// `data[j·x.len() + i]` is the value at (x[i], y[j]).
    pub fn pgm(
        &mut self,
        stem: &str,
        quantity: &str,
        x: &MapAxis,
        y: &MapAxis,
        data: &[f64],
    ) -> io::Result<()> {
        let (w, h) = (x.values.len(), y.values.len());
        assert_eq!(w * h, data.len(), "map does not match its axes");
        let (bytes, lo, hi) = pgm_bytes(w, h, data);
        let image = format!("{stem}.pgm");
        self.write(&image, &bytes)?;
        self.json(
            &format!("{stem}.json"),
            &Sidecar {
                image: &image,
                quantity,
                width: w,
                height: h,
                maxval: u16::MAX,
                value_min: lo,
                value_max: hi,
                row_order: "row 0 is the first y value",
                x,
                y,
            },
        )
    }

    pub fn files(&self) -> &[ManifestEntry] {
        &self.files
    }

    /// Writes `manifest.json`, entries sorted by path.
    pub fn finish(mut self, command: &str) -> io::Result<PathBuf> {
        self.files.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = Manifest {
            command: command.into(),
            files: self.files,
        };
        let path = self.dir.join(MANIFEST);
        let mut text = serde_json::to_string_pretty(&manifest).map_err(io::Error::other)?;
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }
}
