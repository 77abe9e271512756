//! Order-preserving data-parallel map.
//!
//! With the `parallel` feature, work runs on a rayon pool capped at the
//! requested thread count. Without it every mode runs sequentially. Output
//! order always equals input order, so results never depend on scheduling.

use std::num::NonZeroUsize;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Parallelism {
    Sequential,
    Threads(NonZeroUsize),
    /// One thread per available core.
    #[default]
    Auto,
}

impl Parallelism {
    /// `--jobs` semantics: 0 is automatic, 1 is sequential.
    pub fn from_jobs(jobs: usize) -> Self {
        match jobs {
            0 => Parallelism::Auto,
            1 => Parallelism::Sequential,
            n => Parallelism::Threads(NonZeroUsize::new(n).expect("n > 1")),
        }
    }

    pub fn threads(self) -> usize {
        match self {
            Parallelism::Sequential => 1,
            Parallelism::Threads(n) => n.get(),
            Parallelism::Auto => std::thread::available_parallelism().map_or(1, NonZeroUsize::get),
        }
    }

    pub fn is_sequential(self) -> bool {
        !cfg!(feature = "parallel") || self.threads() == 1
    }
}

pub fn par_map<T, R, F>(items: &[T], mode: Parallelism, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if mode.is_sequential() || items.len() < 2 {
        return items.iter().map(f).collect();
    }
    imp::par_map(items, mode.threads(), f)
}

#[cfg(feature = "parallel")]
mod imp {
    use rayon::prelude::*;

    pub fn par_map<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
            Err(_) => items.iter().map(f).collect(),
        }
    }
}

#[cfg(not(feature = "parallel"))]
mod imp {
    pub fn par_map<T, R, F>(items: &[T], _threads: usize, f: F) -> Vec<R>
    where
        F: Fn(&T) -> R,
    {
        items.iter().map(f).collect()
    }
}
