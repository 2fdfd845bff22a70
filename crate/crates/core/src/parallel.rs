//! Data-parallel helpers with a sequential fallback.
//!
//! Work is always split into the same fixed chunks and results come back in
//! input order, so reductions over them are bit-identical whichever mode runs.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Sentences per gradient chunk. Fixed so that summation order never
/// depends on the thread count.
pub const GRAD_CHUNK: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parallelism {
    Sequential,
    /// Rayon thread pool; sequential when built without the `parallel` feature.
    Rayon,
}

impl Default for Parallelism {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Parallelism::Rayon
        } else {
            Parallelism::Sequential
        }
    }
}

impl Parallelism {
    pub fn from_flag(parallel: bool) -> Self {
        if parallel {
            Parallelism::Rayon
        } else {
            Parallelism::Sequential
        }
    }

    /// Ordered map over items.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Parallelism::Rayon => items.par_iter().map(f).collect(),
            _ => items.iter().map(f).collect(),
        }
    }

    /// Ordered map over fixed-size chunks.
    pub fn map_chunks<T, R, F>(self, items: &[T], chunk: usize, f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&[T]) -> R + Sync + Send,
    {
        let chunk = chunk.max(1);
        match self {
            #[cfg(feature = "parallel")]
            Parallelism::Rayon => items.par_chunks(chunk).map(f).collect(),
            _ => items.chunks(chunk).map(f).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_bitwise() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64).sin() * 1e-3).collect();
        let sum = |mode: Parallelism| -> f64 {
            mode.map_chunks(&xs, 7, |c| c.iter().sum::<f64>())
                .into_iter()
                .sum()
        };
        assert_eq!(
            sum(Parallelism::Sequential).to_bits(),
            sum(Parallelism::Rayon).to_bits()
        );
    }
}
