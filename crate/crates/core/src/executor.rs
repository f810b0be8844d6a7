//! In-process map/reduce with deterministic partitioning, task retry and
//! fault injection.
//!
//! Map tasks run concurrently on a [`TaskRunner`]; a task that panics or hits
//! an injected fault is rescheduled in the next round until it succeeds or
//! exhausts `max_retries`. The reduce step sees the intermediates in
//! partition-index order, so the result never depends on worker count or on
//! which attempt succeeded.

use std::collections::BTreeMap;
use std::io::Write;
use std::panic::{self, AssertUnwindSafe};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{DdrlError, Result};
use crate::rng;

pub const DEFAULT_WORKERS: usize = 4;
pub const DEFAULT_MAP_TASKS: usize = 4;
pub const DEFAULT_MAX_RETRIES: u32 = 3;

/// Task index -> number of attempts to fail before letting it run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultPlan(pub BTreeMap<usize, u32>);

impl FaultPlan {
    pub fn none() -> Self {
        FaultPlan::default()
    }

    pub fn fail(mut self, task: usize, times: u32) -> Self {
        self.0.insert(task, times);
        self
    }

    fn should_fail(&self, task: usize, attempt: u32) -> bool {
        self.0.get(&task).is_some_and(|&n| attempt < n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecutorConfig {
    /// Concurrent workers (threads).
    pub workers: usize,
    /// Retries allowed per task after its first attempt.
    pub max_retries: u32,
    pub fault_plan: FaultPlan,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        ExecutorConfig {
            workers: DEFAULT_WORKERS,
            max_retries: DEFAULT_MAX_RETRIES,
            fault_plan: FaultPlan::none(),
        }
    }
}

impl ExecutorConfig {
    pub fn with_workers(workers: usize) -> Self {
        ExecutorConfig {
            workers,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(DdrlError::config("workers must be >= 1"));
        }
        Ok(())
    }
}

/// What a map task gets besides its shard.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskContext {
    pub index: usize,
    pub attempt: u32,
    /// Derived from (job seed, partition index); identical across retries.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Injected,
    Panicked,
}

/// One line of the audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task: usize,
    pub attempt: u32,
    pub outcome: Outcome,
    pub wall_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub message: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AuditLog {
    pub records: Vec<TaskRecord>,
}

impl AuditLog {
    pub fn successes(&self, task: usize) -> usize {
        self.records
            .iter()
            .filter(|r| r.task == task && r.outcome == Outcome::Success)
            .count()
    }

    pub fn attempts(&self, task: usize) -> usize {
        self.records.iter().filter(|r| r.task == task).count()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r).map_err(|e| DdrlError::Data(e.to_string()))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn extend(&mut self, other: AuditLog) {
        self.records.extend(other.records);
    }
}

/// Result of one attempt of a type-erased task.
pub type AttemptResult = std::result::Result<(), AttemptFailure>;

#[derive(Debug, Clone, PartialEq)]
pub enum AttemptFailure {
    /// Retryable: injected fault or panic.
    Crashed(Outcome, String),
    /// Not retryable: the task itself reported an error.
    Error(String),
}

/// Backend seam: runs a batch of task indices, possibly concurrently, and
/// returns one result per index in the given order.
pub trait TaskRunner: Send + Sync {
    fn run_batch(&self, tasks: &[usize], work: &(dyn Fn(usize) -> AttemptResult + Sync)) -> Vec<AttemptResult>;

    fn name(&self) -> &'static str;
}

/// Runs tasks one after another on the calling thread.
#[derive(Debug, Default, Clone, Copy)]
pub struct SequentialRunner;

impl TaskRunner for SequentialRunner {
    fn run_batch(&self, tasks: &[usize], work: &(dyn Fn(usize) -> AttemptResult + Sync)) -> Vec<AttemptResult> {
        tasks.iter().map(|&t| work(t)).collect()
    }

    fn name(&self) -> &'static str {
        "sequential"
    }
}

/// Runs tasks on a dedicated rayon pool with a fixed number of threads.
#[cfg(feature = "parallel")]
pub struct RayonRunner {
    pool: rayon::ThreadPool,
}

#[cfg(feature = "parallel")]
impl RayonRunner {
    pub fn new(workers: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .thread_name(|i| format!("ddrl-map-{i}"))
            .build()
            .map_err(|e| DdrlError::config(format!("cannot start worker pool: {e}")))?;
        Ok(RayonRunner { pool })
    }
}

#[cfg(feature = "parallel")]
impl TaskRunner for RayonRunner {
    fn run_batch(&self, tasks: &[usize], work: &(dyn Fn(usize) -> AttemptResult + Sync)) -> Vec<AttemptResult> {
        use rayon::prelude::*;
        self.pool.install(|| tasks.par_iter().map(|&t| work(t)).collect())
    }

    fn name(&self) -> &'static str {
        "rayon"
    }
}

/// Split items into `m` contiguous, order-preserving shards whose sizes differ by at most one.
pub fn partition_shards<T: Clone>(items: &[T], m: usize) -> Vec<Vec<T>> {
    shard_ranges(items.len(), m)
        .into_iter()
        .map(|(a, b)| items[a..b].to_vec())
        .collect()
}

/// Index ranges of [`partition_shards`].
pub fn shard_ranges(len: usize, m: usize) -> Vec<(usize, usize)> {
    let m = m.max(1);
    let base = len / m;
    let extra = len % m;
    let mut out = Vec::with_capacity(m);
    let mut start = 0;
    for i in 0..m {
        let size = base + usize::from(i < extra);
        out.push((start, start + size));
        start += size;
    }
    out
}

/// A map/reduce job over ordered shards.
pub struct MapReduceJob<S, I, O, M, R>
where
    M: Fn(&S, &TaskContext) -> Result<I> + Sync,
    R: FnOnce(Vec<I>) -> Result<O>,
{
    pub partitions: Vec<S>,
    pub map_fn: M,
    pub reduce_fn: R,
    pub seed: u64,
    _out: std::marker::PhantomData<fn() -> (I, O)>,
}

impl<S, I, O, M, R> MapReduceJob<S, I, O, M, R>
where
    M: Fn(&S, &TaskContext) -> Result<I> + Sync,
    R: FnOnce(Vec<I>) -> Result<O>,
{
    pub fn new(partitions: Vec<S>, seed: u64, map_fn: M, reduce_fn: R) -> Self {
        MapReduceJob {
            partitions,
            map_fn,
            reduce_fn,
            seed,
            _out: std::marker::PhantomData,
        }
    }
}

/// Executes jobs with a configured runner, retry budget and fault plan.
pub struct Executor {
    cfg: ExecutorConfig,
    runner: Box<dyn TaskRunner>,
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Executor")
            .field("cfg", &self.cfg)
            .field("runner", &self.runner.name())
            .finish()
    }
}

impl Executor {
    /// Rayon-backed when the `parallel` feature is on and workers > 1,
    /// sequential otherwise.
    pub fn new(cfg: ExecutorConfig) -> Result<Self> {
        cfg.validate()?;
        #[cfg(feature = "parallel")]
        {
            if cfg.workers > 1 {
                let runner = RayonRunner::new(cfg.workers)?;
                return Ok(Executor {
                    cfg,
                    runner: Box::new(runner),
                });
            }
        }
        Ok(Executor {
            cfg,
            runner: Box::new(SequentialRunner),
        })
    }

    pub fn with_runner(cfg: ExecutorConfig, runner: Box<dyn TaskRunner>) -> Result<Self> {
        cfg.validate()?;
        Ok(Executor { cfg, runner })
    }

    pub fn config(&self) -> &ExecutorConfig {
        &self.cfg
    }

    pub fn runner_name(&self) -> &'static str {
        self.runner.name()
    }

    /// Run a job; returns the reduced output and the audit log.
    pub fn run<S, I, O, M, R>(&self, job: MapReduceJob<S, I, O, M, R>) -> Result<(O, AuditLog)>
    where
        S: Sync,
        I: Send,
        M: Fn(&S, &TaskContext) -> Result<I> + Sync,
        R: FnOnce(Vec<I>) -> Result<O>,
    {
        let MapReduceJob {
            partitions,
            map_fn,
            reduce_fn,
            seed,
            ..
        } = job;
        let (intermediates, log) = self.map_phase(&partitions, seed, &map_fn)?;
        Ok((reduce_fn(intermediates)?, log))
    }

    /// Map every shard; intermediates come back in partition order.
    pub fn map_phase<S, I, M>(&self, partitions: &[S], seed: u64, map_fn: &M) -> Result<(Vec<I>, AuditLog)>
    where
        S: Sync,
        I: Send,
        M: Fn(&S, &TaskContext) -> Result<I> + Sync,
    {
        let n = partitions.len();
        if n == 0 {
            return Err(DdrlError::InvalidInput("a job needs at least one partition".into()));
        }
        let slots: Vec<Mutex<Option<I>>> = (0..n).map(|_| Mutex::new(None)).collect();
        let timings: Vec<Mutex<f64>> = (0..n).map(|_| Mutex::new(0.0)).collect();
        let mut attempts = vec![0u32; n];
        let mut pending: Vec<usize> = (0..n).collect();
        let mut log = AuditLog::default();

        while !pending.is_empty() {
            let attempt_of = attempts.clone();
            let work = |t: usize| -> AttemptResult {
                let ctx = TaskContext {
                    index: t,
                    attempt: attempt_of[t],
                    seed: rng::derive_indexed(seed, t as u64),
                };
                let start = Instant::now();
                let result = if self.cfg.fault_plan.should_fail(t, ctx.attempt) {
                    Err(AttemptFailure::Crashed(Outcome::Injected, "injected fault".into()))
                } else {
                    match panic::catch_unwind(AssertUnwindSafe(|| map_fn(&partitions[t], &ctx))) {
                        Ok(Ok(v)) => {
                            *slots[t].lock().expect("slot lock") = Some(v);
                            Ok(())
                        }
                        Ok(Err(e)) => Err(AttemptFailure::Error(e.to_string())),
                        Err(p) => Err(AttemptFailure::Crashed(Outcome::Panicked, panic_message(&p))),
                    }
                };
                *timings[t].lock().expect("timing lock") = start.elapsed().as_secs_f64() * 1e3;
                result
            };
            let results = self.runner.run_batch(&pending, &work);

            let mut next = Vec::new();
            for (&t, res) in pending.iter().zip(results) {
                let wall_ms = *timings[t].lock().expect("timing lock");
                let attempt = attempts[t];
                match res {
                    Ok(()) => log.records.push(TaskRecord {
                        task: t,
                        attempt,
                        outcome: Outcome::Success,
                        wall_ms,
                        message: None,
                    }),
                    Err(AttemptFailure::Error(msg)) => {
                        return Err(DdrlError::JobFailed {
                            task: t,
                            attempts: attempt + 1,
                            reason: msg,
                        });
                    }
                    Err(AttemptFailure::Crashed(outcome, msg)) => {
                        log.records.push(TaskRecord {
                            task: t,
                            attempt,
                            outcome,
                            wall_ms,
                            message: Some(msg.clone()),
                        });
                        attempts[t] += 1;
                        if attempts[t] > self.cfg.max_retries {
                            return Err(DdrlError::JobFailed {
                                task: t,
                                attempts: attempts[t],
                                reason: msg,
                            });
                        }
                        next.push(t);
                    }
                }
            }
            pending = next;
        }

        let out = slots
            .into_iter()
            .map(|s| s.into_inner().expect("slot lock").expect("every task succeeded"))
            .collect();
        Ok((out, log))
    }
}

fn panic_message(p: &Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "task panicked".to_string()
    }
}

/// Convenience: build an executor and run a job in one call.
pub fn run<S, I, O, M, R>(job: MapReduceJob<S, I, O, M, R>, cfg: &ExecutorConfig) -> Result<(O, AuditLog)>
where
    S: Sync,
    I: Send,
    M: Fn(&S, &TaskContext) -> Result<I> + Sync,
    R: FnOnce(Vec<I>) -> Result<O>,
{
    Executor::new(cfg.clone())?.run(job)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sum_job(items: &[u64], m: usize) -> impl FnOnce(&ExecutorConfig) -> Result<(Vec<u64>, AuditLog)> + '_ {
        move |cfg| {
            let job = MapReduceJob::new(
                partition_shards(items, m),
                17,
                |shard: &Vec<u64>, ctx: &TaskContext| Ok(shard.iter().fold(0u64, |a, &b| a.wrapping_add(b)).wrapping_mul(ctx.seed)),
                |parts: Vec<u64>| Ok(parts),
            );
            run(job, cfg)
        }
    }

    #[test]
    fn shard_sizes() {
        let items: Vec<u32> = (0..10).collect();
        let sizes: Vec<usize> = partition_shards(&items, 4).iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![3, 3, 2, 2]);
        let sizes: Vec<usize> = partition_shards(&items[..3], 5).iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![1, 1, 1, 0, 0]);
        assert_eq!(partition_shards(&items, 1), vec![items.clone()]);
        assert_eq!(partition_shards(&items, 4).concat(), items);
    }

    #[test]
    fn single_worker_matches_sequential_fold() {
        let items: Vec<u64> = (1..=100).collect();
        let (out, log) = sum_job(&items, 5)(&ExecutorConfig::with_workers(1)).unwrap();
        let expected: Vec<u64> = partition_shards(&items, 5)
            .iter()
            .enumerate()
            .map(|(i, s)| s.iter().fold(0u64, |a, &b| a.wrapping_add(b)).wrapping_mul(rng::derive_indexed(17, i as u64)))
            .collect();
        assert_eq!(out, expected);
        assert!((0..5).all(|t| log.successes(t) == 1));
    }

    #[test]
    fn retried_task_gives_identical_output() {
        let items: Vec<u64> = (1..=100).collect();
        let (base, _) = sum_job(&items, 5)(&ExecutorConfig::with_workers(1)).unwrap();
        let cfg = ExecutorConfig {
            workers: 4,
            max_retries: 1,
            fault_plan: FaultPlan::none().fail(2, 1),
        };
        let (out, log) = sum_job(&items, 5)(&cfg).unwrap();
        assert_eq!(out, base);
        assert_eq!(log.attempts(2), 2);
        assert_eq!(log.successes(2), 1);
    }

    #[test]
    fn retry_exhaustion_is_job_failure() {
        let items: Vec<u64> = (1..=10).collect();
        let cfg = ExecutorConfig {
            workers: 2,
            max_retries: 2,
            fault_plan: FaultPlan::none().fail(0, 100),
        };
        match sum_job(&items, 3)(&cfg) {
            Err(DdrlError::JobFailed { task, attempts, .. }) => assert_eq!((task, attempts), (0, 3)),
            other => panic!("expected job failure, got {other:?}"),
        }
    }

    #[test]
    fn panicking_task_is_retried() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        let calls = AtomicUsize::new(0);
        let job = MapReduceJob::new(
            vec![1u32, 2, 3],
            0,
            |x: &u32, _ctx: &TaskContext| {
                if *x == 2 && calls.fetch_add(1, Ordering::SeqCst) == 0 {
                    panic!("worker lost");
                }
                Ok(*x * 10)
            },
            |v: Vec<u32>| Ok(v.iter().sum::<u32>()),
        );
        let (out, log) = run(job, &ExecutorConfig::with_workers(2)).unwrap();
        assert_eq!(out, 60);
        assert_eq!(log.records.iter().filter(|r| r.outcome == Outcome::Panicked).count(), 1);
    }

    #[test]
    fn task_errors_are_not_retried() {
        let job = MapReduceJob::new(
            vec![1u32, 2],
            0,
            |x: &u32, _: &TaskContext| {
                if *x == 2 {
                    Err(DdrlError::Data("bad shard".into()))
                } else {
                    Ok(*x)
                }
            },
            |v: Vec<u32>| Ok(v),
        );
        assert!(matches!(
            run(job, &ExecutorConfig::with_workers(1)),
            Err(DdrlError::JobFailed { task: 1, attempts: 1, .. })
        ));
    }

    #[test]
    fn audit_log_is_json_lines() {
        let items: Vec<u64> = (1..=6).collect();
        let cfg = ExecutorConfig {
            fault_plan: FaultPlan::none().fail(1, 1),
            ..ExecutorConfig::with_workers(2)
        };
        let (_, log) = sum_job(&items, 3)(&cfg).unwrap();
        let mut buf = Vec::new();
        log.write_jsonl(&mut buf).unwrap();
        let lines: Vec<serde_json::Value> = String::from_utf8(buf)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 4);
        assert!(lines.iter().any(|l| l["outcome"] == "injected" && l["task"] == 1));
        assert!(lines.iter().all(|l| l["wall_ms"].is_number() && l["attempt"].is_number()));
    }

    #[test]
    fn empty_job_is_rejected() {
        let job = MapReduceJob::new(Vec::<u32>::new(), 0, |x: &u32, _: &TaskContext| Ok(*x), |v: Vec<u32>| Ok(v));
        assert!(run(job, &ExecutorConfig::default()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn output_independent_of_workers_and_faults(
            items in proptest::collection::vec(any::<u64>(), 1..60),
            m in 1usize..8,
            workers in 1usize..6,
            faulty in proptest::collection::btree_map(0usize..8, 1u32..3, 0..3),
        ) {
            let (base, _) = sum_job(&items, m)(&ExecutorConfig::with_workers(1)).unwrap();
            let cfg = ExecutorConfig { workers, max_retries: 3, fault_plan: FaultPlan(faulty) };
            let (out, log) = sum_job(&items, m)(&cfg).unwrap();
            prop_assert_eq!(out, base);
            for t in 0..m {
                prop_assert_eq!(log.successes(t), 1);
            }
        }
    }
}
