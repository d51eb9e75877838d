//! Splitting the 3-channel feature block into time or frequency slabs.
//!
//! A time slab covers all channels and mel bins for `K` consecutive frames;
//! a frequency slab covers all channels and frames for `H` consecutive bins.
//! Slabs are flattened channel-major, then bin, then frame. Cells past the
//! end of the block are zero.

use serde::{Deserialize, Serialize};

use crate::autodiff::PAD;
use crate::dsp::EstGram;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Time,
    Freq,
}

/// Geometry of one axis split: `count` patches of `width` cells along an
/// axis of `len` cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Split {
    pub count: usize,
    pub width: usize,
    pub len: usize,
}

impl Split {
    /// `width = ceil(len / count)`, rejecting splits that leave a whole
    /// patch of padding.
    pub fn new(len: usize, count: usize, what: &str) -> Result<Self> {
        if count == 0 || len == 0 {
            return Err(Error::Config(format!("{what}: patch count and axis length must be >= 1")));
        }
        let width = len.div_ceil(count);
        if (count - 1) * width >= len {
            return Err(Error::Config(format!(
                "{what}: {count} patches of width {width} over {len} cells leave the last patch empty"
            )));
        }
        Ok(Self { count, width, len })
    }

    pub fn padded_len(&self) -> usize {
        self.count * self.width
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchGrid {
    pub mel_bins: usize,
    pub frames: usize,
    pub time: Split,
    pub freq: Split,
}

impl PatchGrid {
    pub fn new(mel_bins: usize, frames: usize, time_patches: usize, freq_patches: usize) -> Result<Self> {
        Ok(Self {
            mel_bins,
            frames,
            time: Split::new(frames, time_patches, "time patches")?,
            freq: Split::new(mel_bins, freq_patches, "frequency patches")?,
        })
    }

    pub fn split(&self, axis: Axis) -> Split {
        match axis {
            Axis::Time => self.time,
            Axis::Freq => self.freq,
        }
    }

    /// Flattened length of one patch along `axis`.
    pub fn patch_len(&self, axis: Axis) -> usize {
        match axis {
            Axis::Time => 3 * self.mel_bins * self.time.width,
            Axis::Freq => 3 * self.freq.width * self.frames,
        }
    }

    /// For every cell of the `count x patch_len` patch matrix, the index of
    /// its source in the flat 3-channel block, or [`PAD`].
    pub fn gather_index(&self, axis: Axis) -> Vec<usize> {
        let (m, n) = (self.mel_bins, self.frames);
        let split = self.split(axis);
        let mut idx = Vec::with_capacity(split.count * self.patch_len(axis));
        for p in 0..split.count {
            let start = p * split.width;
            for c in 0..3 {
                match axis {
                    Axis::Time => {
                        for f in 0..m {
                            for k in start..start + split.width {
                                idx.push(if k < n { (c * m + f) * n + k } else { PAD });
                            }
                        }
                    }
                    Axis::Freq => {
                        for f in start..start + split.width {
                            for k in 0..n {
                                idx.push(if f < m { (c * m + f) * n + k } else { PAD });
                            }
                        }
                    }
                }
            }
        }
        idx
    }

    /// Patch vectors of `est` along `axis`.
    pub fn patchify(&self, est: &EstGram, axis: Axis) -> Result<Vec<Vec<f64>>> {
        if (est.mel_bins, est.frames) != (self.mel_bins, self.frames) {
            return Err(Error::Shape(format!(
                "feature block is {} x {}, patch grid expects {} x {}",
                est.mel_bins, est.frames, self.mel_bins, self.frames
            )));
        }
        let len = self.patch_len(axis);
        let idx = self.gather_index(axis);
        Ok(idx
            .chunks(len)
            .map(|c| c.iter().map(|&i| if i == PAD { 0.0 } else { est.data[i] }).collect())
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(m: usize, n: usize) -> EstGram {
        EstGram::new(m, n, (0..3 * m * n).map(|k| k as f64 + 1.0).collect()).unwrap()
    }

    #[test]
    fn default_geometry() {
        let g = PatchGrid::new(128, 311, 12, 16).unwrap();
        assert_eq!(g.time.width, 26);
        assert_eq!(g.time.padded_len(), 312);
        assert_eq!(g.freq.width, 8);
        assert_eq!(g.freq.padded_len(), 128);

        let est = block(128, 311);
        let t = g.patchify(&est, Axis::Time).unwrap();
        assert_eq!(t.len(), 12);
        // the last slab has exactly one padded frame per (channel, bin) row
        let zeros = t[11].iter().filter(|&&v| v == 0.0).count();
        assert_eq!(zeros, 3 * 128);
        assert!(t[..11].iter().all(|p| p.iter().all(|&v| v != 0.0)));

        let f = g.patchify(&est, Axis::Freq).unwrap();
        assert_eq!(f.len(), 16);
        assert!(f.iter().all(|p| p.len() == 3 * 8 * 311 && p.iter().all(|&v| v != 0.0)));
    }

    #[test]
    fn empty_trailing_patch_is_rejected() {
        // ceil(61 / 12) = 6 and 11 * 6 = 66 >= 61
        assert!(matches!(PatchGrid::new(128, 61, 12, 16), Err(Error::Config(_))));
        assert!(PatchGrid::new(128, 61, 8, 16).is_ok());
    }

    #[test]
    fn single_patch_is_whole_block() {
        let est = block(4, 5);
        let g = PatchGrid::new(4, 5, 1, 1).unwrap();
        assert_eq!(g.patchify(&est, Axis::Time).unwrap()[0], est.data);
        assert_eq!(g.patchify(&est, Axis::Freq).unwrap()[0], est.data);
    }

    #[test]
    fn one_bin_per_frequency_patch() {
        let est = block(4, 3);
        let g = PatchGrid::new(4, 3, 1, 4).unwrap();
        let f = g.patchify(&est, Axis::Freq).unwrap();
        for (j, p) in f.iter().enumerate() {
            let want: Vec<f64> = (0..3).flat_map(|c| (0..3).map(move |k| (c, k))).map(|(c, k)| est.get(c, j, k)).collect();
            assert_eq!(p, &want);
        }
    }

    #[test]
    fn unpadded_cells_partition_the_block() {
        for (m, n, i, j) in [(6, 7, 3, 3), (5, 11, 4, 2), (8, 9, 9, 8), (3, 2, 2, 3)] {
            let est = block(m, n);
            let g = PatchGrid::new(m, n, i, j).unwrap();
            for axis in [Axis::Time, Axis::Freq] {
                let mut rebuilt = vec![f64::NAN; est.data.len()];
                let idx = g.gather_index(axis);
                let flat: Vec<f64> = g.patchify(&est, axis).unwrap().concat();
                for (&src, &v) in idx.iter().zip(&flat) {
                    if src != PAD {
                        assert!(rebuilt[src].is_nan(), "cell {src} covered twice");
                        rebuilt[src] = v;
                    }
                }
                assert_eq!(rebuilt, est.data, "{axis:?} {m}x{n}");
            }
        }
    }
}
