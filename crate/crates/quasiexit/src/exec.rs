//! Thread-pool executor. Results keep index order, so outputs are independent of `workers`.

use quasiexit_core::Executor;
use rayon::prelude::*;

pub struct RayonExecutor {
    pool: rayon::ThreadPool,
}

impl RayonExecutor {
    /// `workers = 0` selects the available parallelism.
    pub fn new(workers: usize) -> Self {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("thread pool");
        Self { pool }
    }
}

impl Executor for RayonExecutor {
    fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }

    fn map_indexed<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool.install(|| (0..n).into_par_iter().map(f).collect())
    }

    fn for_each_mut<T, F>(&self, items: &mut [T], f: F)
    where
        T: Send,
        F: Fn(usize, &mut T) + Sync + Send,
    {
        // small batches are cheaper inline than through the pool
        if items.len() < 256 || self.workers() == 1 {
            for (i, item) in items.iter_mut().enumerate() {
                f(i, item);
            }
            return;
        }
        self.pool
            .install(|| items.par_iter_mut().enumerate().with_min_len(64).for_each(|(i, item)| f(i, item)));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_keeps_index_order() {
        let ex = RayonExecutor::new(4);
        let v = ex.map_indexed(1000, |i| i * i);
        assert!(v.iter().enumerate().all(|(i, x)| *x == i * i));
    }

    #[test]
    fn for_each_mut_touches_every_item_once() {
        let ex = RayonExecutor::new(3);
        let mut v = vec![0usize; 5000];
        ex.for_each_mut(&mut v, |i, x| *x += i + 1);
        assert!(v.iter().enumerate().all(|(i, x)| *x == i + 1));
    }
}
