//! Per-video accuracy and macro precision/recall, aggregated as mean ± std.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VideoMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample standard deviation (zero for fewer than two values).
pub fn mean_std(xs: &[f64]) -> MeanStd {
    if xs.is_empty() {
        return MeanStd { mean: f64::NAN, std: f64::NAN };
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() < 2 { 0.0 } else { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() };
    MeanStd { mean, std }
}

/// `confusion[truth][pred]` counts.
pub fn confusion(truth: &[usize], pred: &[usize], classes: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; classes]; classes];
    for (&t, &p) in truth.iter().zip(pred) {
        m[t][p] += 1;
    }
    m
}

/// Metrics of one video. Precision and recall are averaged over the classes
/// present in its ground truth; a class never predicted has precision 0.
pub fn video_metrics(truth: &[usize], pred: &[usize], classes: usize) -> Option<VideoMetrics> {
    if truth.is_empty() || truth.len() != pred.len() {
        return None;
    }
    let m = confusion(truth, pred, classes);
    let correct: usize = (0..classes).map(|c| m[c][c]).sum();
    let present: Vec<usize> = (0..classes).filter(|&c| m[c].iter().sum::<usize>() > 0).collect();
    let (mut p, mut r) = (0.0, 0.0);
    for &c in &present {
        let actual: usize = m[c].iter().sum();
        let predicted: usize = m.iter().map(|row| row[c]).sum();
        r += m[c][c] as f64 / actual as f64;
        p += if predicted == 0 { 0.0 } else { m[c][c] as f64 / predicted as f64 };
    }
    let k = present.len() as f64;
    Some(VideoMetrics { accuracy: correct as f64 / truth.len() as f64, precision: p / k, recall: r / k })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMetrics {
    pub per_video: Vec<(String, VideoMetrics)>,
    pub skipped: Vec<String>,
    pub accuracy: MeanStd,
    pub precision: MeanStd,
    pub recall: MeanStd,
}

pub fn aggregate(per_video: Vec<(String, VideoMetrics)>, skipped: Vec<String>) -> PhaseMetrics {
    let col = |f: fn(&VideoMetrics) -> f64| mean_std(&per_video.iter().map(|(_, m)| f(m)).collect::<Vec<_>>());
    PhaseMetrics {
        accuracy: col(|m| m.accuracy),
        precision: col(|m| m.precision),
        recall: col(|m| m.recall),
        per_video,
        skipped,
    }
}
