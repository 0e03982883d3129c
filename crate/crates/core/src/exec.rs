//! Execution strategy for the data-parallel loops (oracle strata, curve
//! grids, fit multistarts).
//!
//! With the `parallel` feature (default) `Execution::Parallel` dispatches to
//! rayon; without it every mode runs sequentially. Results are collected in
//! input order in both cases, so reductions downstream are bit-identical
//! regardless of the mode or thread count.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    pub fn map_indexed<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(f).collect()
            }
            _ => (0..n).map(f).collect(),
        }
    }

    pub fn map_slice<S, T, F>(self, items: &[S], f: F) -> Vec<T>
    where
        S: Sync,
        T: Send,
        F: Fn(&S) -> T + Sync + Send,
    {
        self.map_indexed(items.len(), |i| f(&items[i]))
    }
}

/// Size the global rayon pool once. Later calls are ignored.
pub fn init_threads(n: usize) {
    #[cfg(feature = "parallel")]
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = n;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_and_preserve_order() {
        let seq = Execution::Sequential.map_indexed(1000, |i| (i as f64).sqrt());
        let par = Execution::Parallel.map_indexed(1000, |i| (i as f64).sqrt());
        assert_eq!(seq, par);
        assert_eq!(seq[9], 3.0);
    }
}
