//! Run reports: per-condition frame accuracy and toy WER with
//! utterance-weighted averages, rendered deterministically so identical
//! runs produce byte-identical report files.

use crate::corpus::CONDITIONS;
use crate::error::{Error, Result};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ConditionCell {
    pub utterances: usize,
    pub frames: usize,
    pub correct_frames: usize,
    pub edits: usize,
    pub ref_words: usize,
}

impl ConditionCell {
    pub fn frame_accuracy(&self) -> f64 {
        if self.frames == 0 {
            0.0
        } else {
            self.correct_frames as f64 / self.frames as f64
        }
    }

    pub fn wer(&self) -> f64 {
        if self.ref_words == 0 {
            0.0
        } else {
            self.edits as f64 / self.ref_words as f64
        }
    }

    pub fn absorb(&mut self, other: &ConditionCell) {
        self.utterances += other.utterances;
        self.frames += other.frames;
        self.correct_frames += other.correct_frames;
        self.edits += other.edits;
        self.ref_words += other.ref_words;
    }
}

/// Per-condition results for one system, with the utterance-weighted
/// average over the four conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub system: String,
    pub config_hash: String,
    pub seed: u64,
    /// Cells in condition order A, B, C, D.
    pub cells: [ConditionCell; 4],
}

impl RunReport {
    pub fn new(system: impl Into<String>, config_hash: impl Into<String>, seed: u64) -> RunReport {
        RunReport {
            system: system.into(),
            config_hash: config_hash.into(),
            seed,
            cells: [ConditionCell::default(); 4],
        }
    }

    pub fn cell_mut(&mut self, condition: char) -> Result<&mut ConditionCell> {
        let idx = CONDITIONS
            .iter()
            .position(|&c| c == condition)
            .ok_or_else(|| Error::Data(format!("unknown condition '{condition}'")))?;
        Ok(&mut self.cells[idx])
    }

    /// Utterance-weighted mean over the four conditions.
    pub fn average_frame_accuracy(&self) -> f64 {
        let total: usize = self.cells.iter().map(|c| c.utterances).sum();
        if total == 0 {
            return 0.0;
        }
        self.cells
            .iter()
            .map(|c| c.utterances as f64 * c.frame_accuracy())
            .sum::<f64>()
            / total as f64
    }

    pub fn average_wer(&self) -> f64 {
        let total: usize = self.cells.iter().map(|c| c.utterances).sum();
        if total == 0 {
            return 0.0;
        }
        self.cells
            .iter()
            .map(|c| c.utterances as f64 * c.wer())
            .sum::<f64>()
            / total as f64
    }

    /// Fixed-format text table, stable across runs with equal content.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "system {}\nconfig {}\nseed {}\n",
            self.system, self.config_hash, self.seed
        ));
        out.push_str("cond   utts   frames   frame_acc        wer\n");
        for (i, cell) in self.cells.iter().enumerate() {
            out.push_str(&format!(
                "{}   {:>6}   {:>6}    {:>8.6}   {:>8.6}\n",
                CONDITIONS[i],
                cell.utterances,
                cell.frames,
                cell.frame_accuracy(),
                cell.wer()
            ));
        }
        out.push_str(&format!(
            "AVG                      {:>8.6}   {:>8.6}\n",
            self.average_frame_accuracy(),
            self.average_wer()
        ));
        out
    }
}

/// Short hash of canonicalized config text (sorted key=value lines).
pub fn config_hash(entries: &[(String, String)]) -> String {
    let mut sorted: Vec<String> = entries
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect();
    sorted.sort();
    let mut hasher = Sha256::new();
    for line in &sorted {
        hasher.update(line.as_bytes());
        hasher.update(b"\n");
    }
    let digest = hasher.finalize();
    digest[..6].iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_report() -> RunReport {
        let mut r = RunReport::new("vd6", "abc123", 7);
        for (i, cell) in r.cells.iter_mut().enumerate() {
            cell.utterances = 5 + i;
            cell.frames = 100 * (i + 1);
            cell.correct_frames = 60 * (i + 1);
            cell.edits = i;
            cell.ref_words = 40;
        }
        r
    }

    #[test]
    fn average_is_utterance_weighted() {
        let r = sample_report();
        let total: usize = r.cells.iter().map(|c| c.utterances).sum();
        let want_acc: f64 = r
            .cells
            .iter()
            .map(|c| c.utterances as f64 * c.frame_accuracy())
            .sum::<f64>()
            / total as f64;
        assert!((r.average_frame_accuracy() - want_acc).abs() < 1e-15);
        let want_wer: f64 = r
            .cells
            .iter()
            .map(|c| c.utterances as f64 * c.wer())
            .sum::<f64>()
            / total as f64;
        assert!((r.average_wer() - want_wer).abs() < 1e-15);
    }

    #[test]
    fn render_is_deterministic() {
        assert_eq!(sample_report().render(), sample_report().render());
    }

    #[test]
    fn config_hash_is_order_insensitive() {
        let a = config_hash(&[
            ("seed".into(), "1".into()),
            ("classes".into(), "8".into()),
        ]);
        let b = config_hash(&[
            ("classes".into(), "8".into()),
            ("seed".into(), "1".into()),
        ]);
        assert_eq!(a, b);
        let c = config_hash(&[("seed".into(), "2".into())]);
        assert_ne!(a, c);
    }
}
