//! Per-batch mask settings for dynamic right-context training, plus the
//! splitmix64 generator every seeded component draws from.

use serde::Serialize;

use crate::error::{Error, Result};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// One splitmix64 step: returns the output and the advanced state.
#[inline]
pub fn prng_next(state: u64) -> (u64, u64) {
    let next = state.wrapping_add(GOLDEN_GAMMA);
    let mut z = next;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    (z ^ (z >> 31), next)
}

/// Stateful wrapper around [`prng_next`].
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let (v, s) = prng_next(self.state);
        self.state = s;
        v
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    #[inline]
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ScheduleEntry {
    pub batch: usize,
    pub chunk: usize,
    pub rc: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    pub seed: u64,
    pub chunk_set: Vec<usize>,
    pub rc_set: Vec<usize>,
    pub entries: Vec<ScheduleEntry>,
}

impl Schedule {
    /// `batch,chunk,rc` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("batch,chunk,rc\n");
        for e in &self.entries {
            out.push_str(&format!("{},{},{}\n", e.batch, e.chunk, e.rc));
        }
        out
    }
}

fn sorted_set(values: &[usize], what: &'static str) -> Result<Vec<usize>> {
    if values.is_empty() {
        return Err(Error::EmptySet(what));
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    v.dedup();
    Ok(v)
}

/// Draws chunk size then right context for every batch, each by indexing the
/// sorted set with the generator output modulo its size.
pub fn sample_schedule(
    seed: u64,
    n_batches: usize,
    rc_set: &[usize],
    chunk_set: &[usize],
) -> Result<Schedule> {
    if n_batches == 0 {
        return Err(Error::InvalidSpec(
            "schedule needs at least one batch".into(),
        ));
    }
    let rc_set = sorted_set(rc_set, "right-context set")?;
    let chunk_set = sorted_set(chunk_set, "chunk set")?;
    let mut rng = SplitMix64::new(seed);
    let entries = (0..n_batches)
        .map(|batch| {
            let chunk = chunk_set[(rng.next_u64() % chunk_set.len() as u64) as usize];
            let rc = rc_set[(rng.next_u64() % rc_set.len() as u64) as usize];
            ScheduleEntry { batch, chunk, rc }
        })
        .collect();
    Ok(Schedule {
        seed,
        chunk_set,
        rc_set,
        entries,
    })
}

/// Constant chunk and right context for `n` batches (the fixed RC-N setups).
pub fn fixed_schedule(chunk: usize, rc: usize, n: usize) -> Result<Schedule> {
    if n == 0 {
        return Err(Error::InvalidSpec(
            "schedule needs at least one batch".into(),
        ));
    }
    Ok(Schedule {
        seed: 0,
        chunk_set: vec![chunk],
        rc_set: vec![rc],
        entries: (0..n)
            .map(|batch| ScheduleEntry { batch, chunk, rc })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_reference_vectors() {
        let (a, s) = prng_next(0);
        let (b, _) = prng_next(s);
        assert_eq!(a, 0xE220_A839_7B1D_CDAF);
        assert_eq!(b, 0x6E78_9E6A_A1B9_65F4);
    }

    #[test]
    fn singleton_sets_give_fixed_entries() {
        let s = sample_schedule(7, 5, &[64], &[32]).unwrap();
        assert!(s.entries.iter().all(|e| (e.chunk, e.rc) == (32, 64)));
    }

    #[test]
    fn fixed_schedules() {
        let s = fixed_schedule(32, 128, 3).unwrap();
        assert_eq!(s.entries.len(), 3);
        assert!(s.entries.iter().all(|e| (e.chunk, e.rc) == (32, 128)));
        let s = fixed_schedule(16, 0, 1).unwrap();
        assert_eq!((s.entries[0].chunk, s.entries[0].rc), (16, 0));
        let s = fixed_schedule(64, 256, 2).unwrap();
        assert!(s.entries.iter().all(|e| (e.chunk, e.rc) == (64, 256)));
        assert!(fixed_schedule(16, 0, 0).is_err());
    }

    #[test]
    fn errors() {
        assert!(matches!(
            sample_schedule(1, 3, &[], &[16]),
            Err(Error::EmptySet(_))
        ));
        assert!(matches!(
            sample_schedule(1, 3, &[0], &[]),
            Err(Error::EmptySet(_))
        ));
        assert!(sample_schedule(1, 0, &[0], &[16]).is_err());
    }

    #[test]
    fn csv_layout() {
        let s = fixed_schedule(16, 0, 2).unwrap();
        assert_eq!(s.to_csv(), "batch,chunk,rc\n0,16,0\n1,16,0\n");
    }
}
