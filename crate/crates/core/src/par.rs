//! Data-parallel helpers. With the `parallel` feature the work is spread
//! over rayon's pool; without it, or with [`Schedule::Sequential`], it runs
//! on the calling thread. Results are always returned in input order.

/// How a batch of independent work items is executed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Schedule {
    Sequential,
    /// Falls back to sequential when built without the `parallel` feature.
    #[default]
    Parallel,
}

impl Schedule {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Schedule::Parallel
    }
}

/// `items.iter().map(f).collect()`, possibly in parallel.
pub fn map<T, R, F>(schedule: Schedule, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if schedule.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = schedule;
    items.iter().map(f).collect()
}

/// Applies `f` to every element of `items` in place, possibly in parallel.
pub fn for_each_mut<T, F>(schedule: Schedule, items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if schedule.is_parallel() {
        use rayon::prelude::*;
        items.par_iter_mut().enumerate().for_each(|(i, x)| f(i, x));
        return;
    }
    let _ = schedule;
    items.iter_mut().enumerate().for_each(|(i, x)| f(i, x));
}

/// Sizes the global worker pool. Only effective before the first parallel
/// call; later calls report an error.
pub fn set_threads(n: usize) -> crate::Result<()> {
    if n == 0 {
        return Err(crate::Error::InvalidInput("thread count must be at least 1".into()));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| crate::Error::State(format!("cannot size the worker pool: {e}")))?;
    Ok(())
}

/// Number of worker threads a parallel schedule would use.
pub fn workers() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_preserved_in_both_schedules() {
        let items: Vec<u64> = (0..1000).collect();
        let seq = map(Schedule::Sequential, &items, |x| x * x);
        let par = map(Schedule::Parallel, &items, |x| x * x);
        assert_eq!(seq, par);
        assert_eq!(seq[999], 998001);
    }

    #[test]
    fn for_each_mut_sees_indices() {
        let mut v = vec![0usize; 64];
        for_each_mut(Schedule::Parallel, &mut v, |i, x| *x = i * 2);
        assert!(v.iter().enumerate().all(|(i, &x)| x == i * 2));
    }
}
