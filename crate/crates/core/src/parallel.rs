//! Data-parallel map over index ranges. With the `parallel` feature the work is
//! spread over rayon's pool; without it (or with [`Execution::Sequential`]) it
//! runs in a plain loop. Output order is always index order.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    #[default]
    Parallel,
    Sequential,
}

impl Execution {
    /// Whether work will actually be spread over threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

pub fn map_indices<T, F>(n: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec == Execution::Parallel {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Runs `op` with at most `jobs` worker threads. `jobs == 1` forces the
/// sequential path.
pub fn with_jobs<R, F>(jobs: usize, op: F) -> R
where
    R: Send,
    F: FnOnce(Execution) -> R + Send,
{
    if jobs <= 1 {
        return op(Execution::Sequential);
    }
    #[cfg(feature = "parallel")]
    {
        match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
            Ok(pool) => pool.install(|| op(Execution::Parallel)),
            Err(_) => op(Execution::Sequential),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        op(Execution::Sequential)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_paths_agree() {
        let seq = map_indices(1000, Execution::Sequential, |i| (i * i) as u64 % 97);
        let par = map_indices(1000, Execution::Parallel, |i| (i * i) as u64 % 97);
        assert_eq!(seq, par);
    }

    #[test]
    fn with_jobs_one_is_sequential() {
        assert_eq!(with_jobs(1, |e| e), Execution::Sequential);
    }
}
