//! On-disk datasets: one `GTCK` file per sequence plus a text manifest.
//!
//! ```text
//! format = rsp-dataset 1
//! config_hash = 3f9a...
//! grid = 48 48 0.5 10
//! channels = 1
//! frames = 12
//! seq 0 7000000 seq_00000.gtck
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rsp_core::sim::{generate_sequence, GridFrame};

use crate::config::ExperimentConfig;
use crate::error::{format_err, io_err, Error, Result};
use crate::gtck::{read_file, write_file, Record};

pub const MANIFEST: &str = "manifest.txt";
const FORMAT: &str = "rsp-dataset 1";

/// Seed of the `index`-th sequence generated under `base`.
pub fn sequence_seed(base: u64, index: usize) -> u64 {
    base.wrapping_mul(1_000_000).wrapping_add(index as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub index: usize,
    pub seed: u64,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub config_hash: String,
    pub grid: (usize, usize, f64, f64),
    pub channels: usize,
    pub frames: usize,
    pub sequences: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let (x, y, res, fr) = self.grid;
        let mut s = format!(
            "format = {FORMAT}\nconfig_hash = {}\ngrid = {x} {y} {res} {fr}\nchannels = {}\nframes = {}\n",
            self.config_hash, self.channels, self.frames
        );
        for e in &self.sequences {
            let _ = writeln!(s, "seq {} {} {}", e.index, e.seed, e.file);
        }
        s
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        let bad = |m: &str| format_err(&path, m.to_string());
        let mut m = Manifest {
            config_hash: String::new(),
            grid: (0, 0, 0.0, 0.0),
            channels: 0,
            frames: 0,
            sequences: Vec::new(),
        };
        let mut format_seen = false;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if let Some(rest) = line.strip_prefix("seq ") {
                let f: Vec<&str> = rest.split_whitespace().collect();
                let [index, seed, file] = f[..] else {
                    return Err(bad("malformed seq line"));
                };
                m.sequences.push(ManifestEntry {
                    index: index.parse().map_err(|_| bad("bad sequence index"))?,
                    seed: seed.parse().map_err(|_| bad("bad sequence seed"))?,
                    file: file.to_string(),
                });
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| bad("expected key = value"))?;
            let v = v.trim();
            match k.trim() {
                "format" if v == FORMAT => format_seen = true,
                "format" => return Err(bad("unsupported dataset format")),
                "config_hash" => m.config_hash = v.to_string(),
                "grid" => {
                    let f: Vec<&str> = v.split_whitespace().collect();
                    let [x, y, res, fr] = f[..] else {
                        return Err(bad("grid needs four values"));
                    };
                    let e = || bad("bad grid value");
                    m.grid = (
                        x.parse().map_err(|_| e())?,
                        y.parse().map_err(|_| e())?,
                        res.parse().map_err(|_| e())?,
                        fr.parse().map_err(|_| e())?,
                    );
                }
                "channels" => m.channels = v.parse().map_err(|_| bad("bad channel count"))?,
                "frames" => m.frames = v.parse().map_err(|_| bad("bad frame count"))?,
                _ => return Err(bad("unknown manifest key")),
            }
        }
        if !format_seen {
            return Err(bad("missing format line"));
        }
        Ok(m)
    }

    /// Fails unless the dataset was rendered for the grid and sensor of
    /// `config`.
    pub fn check_compatible(&self, config: &ExperimentConfig) -> Result<()> {
        let g = config.geometry();
        if self.grid != (g.x, g.y, g.cell_size, g.frame_rate) || self.channels != config.model.s {
            return Err(Error::Config(format!(
                "dataset grid {:?} with {} channel(s) does not match config grid {:?} with {}",
                self.grid,
                self.channels,
                (g.x, g.y, g.cell_size, g.frame_rate),
                config.model.s
            )));
        }
        if self.config_hash != config.data_hash() {
            log::warn!("dataset was generated with different simulator settings");
        }
        Ok(())
    }
}

pub fn frames_to_records(frames: &[GridFrame]) -> Vec<Record> {
    let mut out = Vec::with_capacity(4 * frames.len());
    for (t, f) in frames.iter().enumerate() {
        out.push(Record::new(format!("frame{t:03}.input"), &[f.x, f.y, f.channels], f.input.clone()));
        out.push(Record::new(
            format!("frame{t:03}.gt_class"),
            &[f.x, f.y],
            f.gt_class.iter().map(|&c| c as f32).collect(),
        ));
        out.push(Record::new(format!("frame{t:03}.gt_velocity"), &[f.x, f.y, 2], f.gt_velocity.clone()));
        out.push(Record::new(format!("frame{t:03}.observability"), &[f.x, f.y], f.observability.clone()));
    }
    out
}

pub fn records_to_frames(path: &Path, records: Vec<Record>) -> Result<Vec<GridFrame>> {
    let bad = |m: String| format_err(path, m);
    if records.len() % 4 != 0 || records.is_empty() {
        return Err(bad("a sequence holds four records per frame".into()));
    }
    let mut frames = Vec::with_capacity(records.len() / 4);
    let mut it = records.into_iter();
    let mut t = 0;
    while let (Some(input), Some(class), Some(vel), Some(obs)) = (it.next(), it.next(), it.next(), it.next()) {
        let prefix = format!("frame{t:03}.");
        for (r, kind) in [(&input, "input"), (&class, "gt_class"), (&vel, "gt_velocity"), (&obs, "observability")] {
            if r.name != format!("{prefix}{kind}") {
                return Err(bad(format!("expected record {prefix}{kind}, found {}", r.name)));
            }
        }
        let [x, y, channels] = input.shape[..] else {
            return Err(bad(format!("{}: expected rank 3", input.name)));
        };
        if class.shape != [x, y] || obs.shape != [x, y] || vel.shape != [x, y, 2] {
            return Err(bad(format!("frame {t}: inconsistent record shapes")));
        }
        if class.data.iter().any(|&c| !(c == 0.0 || c == 1.0 || c == 2.0 || c == 3.0)) {
            return Err(bad(format!("frame {t}: class labels must be 0..3")));
        }
        frames.push(GridFrame {
            x,
            y,
            channels,
            input: input.data,
            gt_class: class.data.iter().map(|&c| c as u8).collect(),
            gt_velocity: vel.data,
            observability: obs.data,
        });
        t += 1;
    }
    Ok(frames)
}

pub fn sequence_file(index: usize) -> String {
    format!("seq_{index:05}.gtck")
}

pub fn write_sequence(path: &Path, frames: &[GridFrame]) -> Result<()> {
    write_file(path, &frames_to_records(frames))
}

pub fn read_sequence(path: &Path) -> Result<Vec<GridFrame>> {
    records_to_frames(path, read_file(path)?)
}

/// Renders `count` sequences into `dir`, spreading seeds over `threads`
/// workers. The output does not depend on the thread count.
pub fn generate(config: &ExperimentConfig, count: usize, dir: &Path, threads: usize) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let geom = config.geometry();
    let threads = threads.clamp(1, count.max(1));
    let work = |index: usize| -> Result<ManifestEntry> {
        let seed = sequence_seed(config.seed, index);
        let frames = generate_sequence(&config.sim, &geom, seed)?;
        let file = sequence_file(index);
        write_sequence(&dir.join(&file), &frames)?;
        Ok(ManifestEntry { index, seed, file })
    };
    let mut sequences: Vec<ManifestEntry> = if threads == 1 {
        (0..count).map(work).collect::<Result<_>>()?
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads)
                .map(|w| {
                    let work = &work;
                    s.spawn(move || (w..count).step_by(threads).map(work).collect::<Result<Vec<_>>>())
                })
                .collect();
            let mut all = Vec::with_capacity(count);
            for h in handles {
                all.extend(h.join().expect("generator thread panicked")?);
            }
            Ok::<_, Error>(all)
        })?
    };
    sequences.sort_by_key(|e| e.index);
    let manifest = Manifest {
        config_hash: config.data_hash(),
        grid: (geom.x, geom.y, geom.cell_size, geom.frame_rate),
        channels: config.model.s,
        frames: config.sim.seq_len,
        sequences,
    };
    let path = dir.join(MANIFEST);
    std::fs::write(&path, manifest.to_text()).map_err(io_err(&path))?;
    Ok(manifest)
}

/// Which part of a dataset to load.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Heldout,
    All,
}

impl Split {
    /// Every `every`-th sequence (by manifest index) is held out.
    pub fn contains(self, index: usize, every: usize) -> bool {
        let held = index % every == every - 1;
        match self {
            Split::Train => !held,
            Split::Heldout => held,
            Split::All => true,
        }
    }
}

pub fn load_split(dir: &Path, config: &ExperimentConfig, split: Split) -> Result<Vec<Vec<GridFrame>>> {
    let manifest = Manifest::read(dir)?;
    manifest.check_compatible(config)?;
    manifest
        .sequences
        .iter()
        .filter(|e| split.contains(e.index, config.heldout_every))
        .map(|e| read_sequence(&dir.join(&e.file)))
        .collect()
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(MANIFEST)
}
