//! Throughput measurement for the scan kernels.

use std::hint::black_box;
use std::time::{Duration, Instant};

use rand::Rng;

use crate::error::Result;
use crate::real::Real;

use super::scan::{scan_chunked, scan_sequential, ScanInputs};

/// Random well-conditioned scan inputs: decays in (0.5, 1), the rest in (-1, 1).
pub fn random_inputs<T: Real>(seq_len: usize, d_inner: usize, d_state: usize, rng: &mut impl Rng) -> ScanInputs<T> {
    let mut inp = ScanInputs::zeros(seq_len, d_inner, d_state);
    let mut fill = |v: &mut Vec<T>, lo: f64, hi: f64| v.iter_mut().for_each(|x| *x = T::of(rng.random_range(lo..hi)));
    fill(&mut inp.a_bar, 0.5, 1.0);
    fill(&mut inp.b_x, -1.0, 1.0);
    fill(&mut inp.c, -1.0, 1.0);
    fill(&mut inp.skip, -1.0, 1.0);
    inp
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchRow {
    pub seq_len: usize,
    /// 0 for the sequential reference.
    pub chunk: usize,
    pub ns_per_token: f64,
}

pub const BENCH_HEADER: &str = "seq_len,chunk,ns_per_token";

/// Times every (seq_len, chunk) pair, repeating each until `budget` elapses.
pub fn bench_scan<T: Real>(
    seq_lens: &[usize],
    chunks: &[usize],
    d_inner: usize,
    d_state: usize,
    budget: Duration,
    rng: &mut impl Rng,
) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &seq_len in seq_lens {
        let inp = random_inputs::<T>(seq_len, d_inner, d_state, rng);
        for &chunk in chunks {
            let run = || -> Result<Vec<T>> {
                if chunk == 0 { Ok(scan_sequential(&inp)) } else { scan_chunked(&inp, chunk) }
            };
            black_box(run()?);
            let start = Instant::now();
            let mut reps = 0u64;
            while reps == 0 || start.elapsed() < budget {
                black_box(run()?);
                reps += 1;
            }
            let ns = start.elapsed().as_nanos() as f64 / (reps as f64 * seq_len as f64);
            rows.push(BenchRow {
                seq_len,
                chunk,
                ns_per_token: ns,
            });
        }
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = format!("{BENCH_HEADER}\n");
    for r in rows {
        out.push_str(&format!("{},{},{:.1}\n", r.seq_len, r.chunk, r.ns_per_token));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn one_row_per_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rows = bench_scan::<f32>(&[8, 32], &[0, 4], 4, 2, Duration::from_millis(1), &mut rng).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.ns_per_token > 0.0));
        let csv = bench_csv(&rows);
        assert!(csv.starts_with(BENCH_HEADER));
        assert_eq!(csv.lines().count(), 5);
    }
}
