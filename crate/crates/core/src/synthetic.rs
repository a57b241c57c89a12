//! Generated corpora with known structure.

use std::path::{Path, PathBuf};

use gsvit_tensor::Tensor;
use rand::Rng;

use crate::error::Result;
use crate::io::corpus::{write_video, FrameCorpus, Video, PHASES};
use crate::nn::seeded;

/// Hue-distinct phase colours.
pub const PHASE_COLORS: [[f32; 3]; PHASES] = [
    [0.90, 0.10, 0.10],
    [0.10, 0.85, 0.15],
    [0.10, 0.20, 0.90],
    [0.90, 0.90, 0.10],
    [0.10, 0.85, 0.85],
    [0.85, 0.10, 0.85],
    [0.90, 0.90, 0.90],
];

/// White `size`×`size` square on black at column `x` (wrapping) and row `y`.
pub fn square_frame(res: usize, size: usize, x: usize, y: usize) -> Tensor<f32> {
    let mut d = vec![0f32; 3 * res * res];
    for c in 0..3 {
        for dy in 0..size {
            for dx in 0..size {
                let (yy, xx) = ((y + dy) % res, (x + dx) % res);
                d[c * res * res + yy * res + xx] = 1.0;
            }
        }
    }
    Tensor::new([3, res, res], d).expect("positive shape")
}

/// Videos of a square translating 2 px per frame at 1 fps.
pub fn moving_square(videos: usize, frames: usize, res: usize, seed: u64) -> FrameCorpus {
    let mut rng = seeded(seed);
    let size = (res / 6).max(1);
    let videos = (0..videos)
        .map(|v| {
            let (x0, y) = (rng.random_range(0..res), rng.random_range(0..res - size + 1));
            Video {
                name: format!("square{v:03}"),
                dir: PathBuf::from(format!("square{v:03}")),
                fps: 1.0,
                procedure: "square".into(),
                frames: (0..frames).map(|t| square_frame(res, size, x0 + 2 * t, y)).collect(),
                labels: None,
            }
        })
        .collect();
    FrameCorpus { root: PathBuf::from("synthetic"), videos }
}

/// A noisy frame dominated by one phase colour with a grey distractor patch.
pub fn color_frame(res: usize, phase: usize, rng: &mut crate::nn::SeededRng) -> Tensor<f32> {
    let color = PHASE_COLORS[phase];
    let shade: f32 = rng.random_range(0.75..1.0);
    let mut d = vec![0f32; 3 * res * res];
    let size = res / 4;
    let (px, py) = (rng.random_range(0..res - size), rng.random_range(0..res - size));
    let gray: f32 = rng.random_range(0.2..0.8);
    for y in 0..res {
        for x in 0..res {
            let patch = (px..px + size).contains(&x) && (py..py + size).contains(&y);
            for c in 0..3 {
                let base = if patch { gray } else { color[c] * shade };
                let noise: f32 = rng.random_range(-0.1..0.1);
                d[c * res * res + y * res + x] = (base + noise).clamp(0.0, 1.0);
            }
        }
    }
    Tensor::new([3, res, res], d).expect("positive shape")
}

/// Videos whose frames step through all phases in order, each phase shown
/// by its dominant colour.
pub fn color_phases(videos: usize, frames_per_phase: usize, res: usize, seed: u64) -> FrameCorpus {
    let mut rng = seeded(seed);
    let videos = (0..videos)
        .map(|v| {
            let labels: Vec<usize> = (0..PHASES).flat_map(|p| std::iter::repeat_n(p, frames_per_phase)).collect();
            Video {
                name: format!("phases{v:03}"),
                dir: PathBuf::from(format!("phases{v:03}")),
                fps: 1.0,
                procedure: "phases".into(),
                frames: labels.iter().map(|&p| color_frame(res, p, &mut rng)).collect(),
                labels: Some(labels.into_iter().map(Some).collect()),
            }
        })
        .collect();
    FrameCorpus { root: PathBuf::from("synthetic"), videos }
}

/// Writes a corpus in the on-disk layout under `root`.
pub fn write_corpus(corpus: &FrameCorpus, root: &Path) -> Result<()> {
    for v in &corpus.videos {
        let labels: Option<Vec<usize>> = v.labels.as_ref().map(|l| l.iter().map(|p| p.unwrap_or(0)).collect());
        write_video(&root.join(&v.name), v.fps, &v.procedure, &v.frames, labels.as_deref())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_moves_two_pixels() {
        let c = moving_square(1, 3, 16, 0);
        let f = &c.videos[0].frames;
        let col = |t: &Tensor<f32>| (0..16).find(|&x| (0..16).any(|y| t.data()[y * 16 + x] == 1.0 && t.data()[y * 16 + (x + 15) % 16] == 0.0));
        let (a, b) = (col(&f[0]).unwrap(), col(&f[1]).unwrap());
        assert_eq!((a + 2) % 16, b);
    }

    #[test]
    fn colours_differ_beyond_brightness() {
        for i in 0..PHASES {
            for j in 0..i {
                let (a, b) = (PHASE_COLORS[i], PHASE_COLORS[j]);
                let na = a.iter().map(|v| v * v).sum::<f32>().sqrt();
                let nb = b.iter().map(|v| v * v).sum::<f32>().sqrt();
                let cos = a.iter().zip(b).map(|(x, y)| x * y).sum::<f32>() / (na * nb);
                assert!(cos < 0.95, "{i} {j} {cos}");
            }
        }
    }

    #[test]
    fn written_corpus_loads_back() {
        let tmp = tempfile::tempdir().unwrap();
        let c = color_phases(2, 2, 8, 1);
        write_corpus(&c, tmp.path()).unwrap();
        let back = crate::io::corpus::load_corpus(tmp.path()).unwrap();
        assert_eq!(back.videos.len(), 2);
        assert_eq!(back.videos[1].labeled().map(|l| l.1).collect::<Vec<_>>(), c.videos[1].labeled().map(|l| l.1).collect::<Vec<_>>());
    }
}
