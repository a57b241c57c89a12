//! On-disk frame corpora: one directory per video holding `meta`, dense
//! `f000001.ppm …` frames and an optional `phases.tsv`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use gsvit_tensor::Tensor;

use crate::error::{Error, Result};
use crate::io::ppm;

pub const PHASES: usize = 7;

#[derive(Debug, Clone)]
pub struct Video {
    pub name: String,
    pub dir: PathBuf,
    pub fps: f64,
    pub procedure: String,
    /// `[3, H, W]` frames in [0, 1], in frame order.
    pub frames: Vec<Tensor<f32>>,
    /// Per-frame phase, present when the video ships `phases.tsv`.
    pub labels: Option<Vec<Option<usize>>>,
}

impl Video {
    pub fn frame_name(index: usize) -> String {
        format!("f{:06}.ppm", index + 1)
    }

    pub fn frame_path(&self, index: usize) -> PathBuf {
        self.dir.join(Self::frame_name(index))
    }

    pub fn labeled(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.labels.iter().flat_map(|l| l.iter().enumerate().filter_map(|(i, p)| p.map(|p| (i, p))))
    }
}

#[derive(Debug, Clone, Default)]
pub struct FrameCorpus {
    pub root: PathBuf,
    pub videos: Vec<Video>,
}

impl FrameCorpus {
    pub fn procedures(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut m: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, v) in self.videos.iter().enumerate() {
            m.entry(v.procedure.as_str()).or_default().push(i);
        }
        m
    }

    /// Videos tagged with `procedure`.
    pub fn filter_procedure(&self, procedure: &str) -> FrameCorpus {
        FrameCorpus {
            root: self.root.clone(),
            videos: self.videos.iter().filter(|v| v.procedure == procedure).cloned().collect(),
        }
    }

    pub fn frame_count(&self) -> usize {
        self.videos.iter().map(|v| v.frames.len()).sum()
    }
}

fn data_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Data(format!("{}: {msg}", path.display()))
}

fn parse_meta(path: &Path) -> Result<(f64, String)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (mut fps, mut procedure) = (None, None);
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| data_err(path, format!("malformed line '{line}'")))?;
        match k.trim() {
            "fps" => {
                let f: f64 = v.trim().parse().map_err(|_| data_err(path, format!("invalid fps '{}'", v.trim())))?;
                if !(f.is_finite() && f > 0.0) {
                    return Err(data_err(path, format!("fps must be positive, got {f}")));
                }
                fps = Some(f);
            }
            "procedure" => {
                let p = v.trim();
                if p.is_empty() {
                    return Err(data_err(path, "empty procedure tag"));
                }
                procedure = Some(p.to_string());
            }
            other => return Err(data_err(path, format!("unknown key '{other}'"))),
        }
    }
    let fps = fps.ok_or_else(|| data_err(path, "missing fps"))?;
    let procedure = procedure.ok_or_else(|| data_err(path, "missing procedure"))?;
    Ok((fps, procedure))
}

fn frame_number(name: &str) -> Option<usize> {
    let digits = name.strip_prefix('f')?.strip_suffix(".ppm")?;
    if digits.len() != 6 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok().filter(|&n| n > 0)
}

fn parse_phases(path: &Path, dir: &Path, frames: usize) -> Result<Vec<Option<usize>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut labels = vec![None; frames];
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || data_err(path, format!("line {}: expected 'frame_index<TAB>phase_id', got '{line}'", ln + 1));
        let (f, p) = line.split_once('\t').ok_or_else(bad)?;
        let f: usize = f.trim().parse().map_err(|_| bad())?;
        let p: i64 = p.trim().parse().map_err(|_| bad())?;
        if f == 0 || f > frames {
            return Err(data_err(path, format!("line {}: frame index {f} outside 1..={frames}", ln + 1)));
        }
        let frame = dir.join(Video::frame_name(f - 1));
        if !(0..PHASES as i64).contains(&p) {
            return Err(data_err(&frame, format!("phase id {p} outside [0, {PHASES})")));
        }
        if labels[f - 1].replace(p as usize).is_some() {
            return Err(data_err(&frame, "labeled more than once"));
        }
    }
    Ok(labels)
}

pub fn load_video(dir: &Path) -> Result<Video> {
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let mut numbers = Vec::new();
    let (mut has_meta, mut has_phases) = (false, false);
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let fname = entry.file_name().to_string_lossy().into_owned();
        let is_file = entry.file_type().map_err(|e| Error::io(entry.path(), e))?.is_file();
        match fname.as_str() {
            "meta" if is_file => has_meta = true,
            "phases.tsv" if is_file => has_phases = true,
            _ => match frame_number(&fname).filter(|_| is_file) {
                Some(n) => numbers.push(n),
                None => return Err(data_err(&entry.path(), "unexpected entry in video directory")),
            },
        }
    }
    if !has_meta {
        return Err(data_err(&dir.join("meta"), "missing"));
    }
    let (fps, procedure) = parse_meta(&dir.join("meta"))?;
    numbers.sort_unstable();
    if numbers.is_empty() {
        return Err(data_err(dir, "video has no frames"));
    }
    for (i, &n) in numbers.iter().enumerate() {
        if n != i + 1 {
            return Err(data_err(dir, format!("missing {}", Video::frame_name(i))));
        }
    }
    let mut frames = Vec::with_capacity(numbers.len());
    for i in 0..numbers.len() {
        let path = dir.join(Video::frame_name(i));
        let f = ppm::read(&path)?;
        if let Some(first) = frames.first() {
            let first: &Tensor<f32> = first;
            if first.shape() != f.shape() {
                return Err(data_err(&path, format!("frame shape {:?} differs from {:?}", f.shape(), first.shape())));
            }
        }
        frames.push(f);
    }
    let labels = if has_phases { Some(parse_phases(&dir.join("phases.tsv"), dir, frames.len())?) } else { None };
    Ok(Video { name, dir: dir.to_path_buf(), fps, procedure, frames, labels })
}

/// Loads and validates every video directory under `root`, ordered by name.
pub fn load_corpus(root: &Path) -> Result<FrameCorpus> {
    let mut dirs = Vec::new();
    for entry in std::fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        if !entry.file_type().map_err(|e| Error::io(entry.path(), e))?.is_dir() {
            return Err(data_err(&entry.path(), "unexpected non-directory entry in corpus root"));
        }
        dirs.push(entry.path());
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(data_err(root, "corpus contains no videos"));
    }
    let videos = dirs.iter().map(|d| load_video(d)).collect::<Result<_>>()?;
    Ok(FrameCorpus { root: root.to_path_buf(), videos })
}

/// Writes a video directory in the corpus layout.
pub fn write_video(
    dir: &Path,
    fps: f64,
    procedure: &str,
    frames: &[Tensor<f32>],
    labels: Option<&[usize]>,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = dir.join("meta");
    std::fs::write(&meta, format!("fps={fps}\nprocedure={procedure}\n")).map_err(|e| Error::io(&meta, e))?;
    for (i, f) in frames.iter().enumerate() {
        ppm::write(&dir.join(Video::frame_name(i)), f)?;
    }
    if let Some(labels) = labels {
        let mut s = String::new();
        for (i, p) in labels.iter().enumerate() {
            writeln!(s, "{}\t{p}", i + 1).expect("string write");
        }
        let path = dir.join("phases.tsv");
        std::fs::write(&path, s).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
