//! What a resource monitor measures: a browser process tree, or the threads
//! an in-process mock page has registered.

use std::collections::BTreeSet;
use std::fs;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

/// Linux thread id of the calling thread.
pub fn current_tid() -> i32 {
    // SAFETY: gettid has no preconditions.
    unsafe { libc::gettid() }
}

/// Kernel clock ticks per second, for /proc CPU times.
pub fn clock_ticks() -> f64 {
    // SAFETY: sysconf has no preconditions.
    let t = unsafe { libc::sysconf(libc::_SC_CLK_TCK) };
    if t > 0 {
        t as f64
    } else {
        100.0
    }
}

/// Number of online cores.
pub fn core_count() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

/// Threads and memory belonging to the page loaded in a mock browser.
///
/// Page work runs inside the harness process, so it is attributed by thread
/// id rather than by pid, and its memory by explicit accounting.
#[derive(Debug, Default)]
pub struct PageAccounting {
    threads: Mutex<BTreeSet<i32>>,
    /// CPU ticks of threads that have already exited.
    retired_ticks: AtomicU64,
    resident_bytes: AtomicU64,
    virtual_bytes: AtomicU64,
}

impl PageAccounting {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn register_thread(&self, tid: i32) {
        self.threads.lock().unwrap().insert(tid);
    }

    /// Removes a thread, keeping its CPU time in the page's total.
    pub fn retire_thread(&self, tid: i32) {
        if let Some(t) = thread_ticks(std::process::id() as i32, tid) {
            self.retired_ticks.fetch_add(t, Ordering::Relaxed);
        }
        self.threads.lock().unwrap().remove(&tid);
    }

    pub fn threads(&self) -> Vec<i32> {
        self.threads.lock().unwrap().iter().copied().collect()
    }

    pub fn retired_ticks(&self) -> u64 {
        self.retired_ticks.load(Ordering::Relaxed)
    }

    pub fn add_memory(&self, resident: u64, reserved: u64) {
        self.resident_bytes.fetch_add(resident, Ordering::Relaxed);
        self.virtual_bytes.fetch_add(reserved.max(resident), Ordering::Relaxed);
    }

    pub fn release_memory(&self, resident: u64, reserved: u64) {
        self.resident_bytes.fetch_sub(resident, Ordering::Relaxed);
        self.virtual_bytes.fetch_sub(reserved.max(resident), Ordering::Relaxed);
    }

    pub fn memory(&self) -> (u64, u64) {
        (
            self.resident_bytes.load(Ordering::Relaxed),
            self.virtual_bytes.load(Ordering::Relaxed),
        )
    }

    /// Forgets all threads and memory, as when a page is unloaded.
    pub fn reset(&self) {
        self.threads.lock().unwrap().clear();
        self.retired_ticks.store(0, Ordering::Relaxed);
        self.resident_bytes.store(0, Ordering::Relaxed);
        self.virtual_bytes.store(0, Ordering::Relaxed);
    }
}

#[derive(Debug, Clone)]
pub enum ResourceTarget {
    /// A browser process and all its descendants.
    ProcessTree(i32),
    /// Threads registered by an in-process page.
    Page(Arc<PageAccounting>),
}

/// One thread's CPU time in ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThreadTicks {
    pub pid: i32,
    pub tid: i32,
    pub ticks: u64,
}

/// utime + stime from a stat line; the command field may contain spaces.
pub fn parse_stat_ticks(stat: &str) -> Option<u64> {
    let rest = &stat[stat.rfind(')')? + 2..];
    let fields: Vec<&str> = rest.split_whitespace().collect();
    // fields[0] is field 3 (state); utime and stime are fields 14 and 15
    let utime: u64 = fields.get(11)?.parse().ok()?;
    let stime: u64 = fields.get(12)?.parse().ok()?;
    Some(utime + stime)
}

fn parse_ppid(stat: &str) -> Option<i32> {
    let rest = &stat[stat.rfind(')')? + 2..];
    rest.split_whitespace().nth(1)?.parse().ok()
}

pub fn thread_ticks(pid: i32, tid: i32) -> Option<u64> {
    let s = fs::read_to_string(format!("/proc/{pid}/task/{tid}/stat")).ok()?;
    parse_stat_ticks(&s)
}

pub fn process_alive(pid: i32) -> bool {
    fs::metadata(format!("/proc/{pid}")).is_ok()
}

/// `root` and every live descendant.
pub fn process_tree(root: i32) -> Vec<i32> {
    let mut parents = Vec::new();
    if let Ok(dir) = fs::read_dir("/proc") {
        for entry in dir.flatten() {
            let Some(pid) = entry.file_name().to_str().and_then(|s| s.parse::<i32>().ok()) else {
                continue;
            };
            if let Some(ppid) = fs::read_to_string(format!("/proc/{pid}/stat"))
                .ok()
                .and_then(|s| parse_ppid(&s))
            {
                parents.push((pid, ppid));
            }
        }
    }
    let mut tree = vec![root];
    let mut i = 0;
    while i < tree.len() {
        let p = tree[i];
        tree.extend(parents.iter().filter(|(_, pp)| *pp == p).map(|(c, _)| *c));
        i += 1;
    }
    tree
}

/// Per-thread CPU ticks for every thread of the target.
pub fn target_threads(target: &ResourceTarget) -> Result<Vec<ThreadTicks>, TargetGone> {
    match target {
        ResourceTarget::ProcessTree(root) => {
            if !process_alive(*root) {
                return Err(TargetGone(*root));
            }
            let mut out = Vec::new();
            for pid in process_tree(*root) {
                let Ok(tasks) = fs::read_dir(format!("/proc/{pid}/task")) else {
                    continue;
                };
                for t in tasks.flatten() {
                    if let Some(tid) = t.file_name().to_str().and_then(|s| s.parse().ok()) {
                        if let Some(ticks) = thread_ticks(pid, tid) {
                            out.push(ThreadTicks { pid, tid, ticks });
                        }
                    }
                }
            }
            Ok(out)
        }
        ResourceTarget::Page(acct) => {
            let pid = std::process::id() as i32;
            Ok(acct
                .threads()
                .into_iter()
                .filter_map(|tid| thread_ticks(pid, tid).map(|ticks| ThreadTicks { pid, tid, ticks }))
                .collect())
        }
    }
}

#[derive(Debug, Clone, Copy, thiserror::Error)]
#[error("process {0} exited")]
pub struct TargetGone(pub i32);

/// (resident, virtual) bytes of the target.
pub fn target_memory(target: &ResourceTarget) -> Result<(u64, u64), TargetGone> {
    match target {
        ResourceTarget::ProcessTree(root) => {
            if !process_alive(*root) {
                return Err(TargetGone(*root));
            }
            let mut rss = 0;
            let mut vsz = 0;
            for pid in process_tree(*root) {
                if let Ok(status) = fs::read_to_string(format!("/proc/{pid}/status")) {
                    let (r, v) = parse_status_memory(&status);
                    rss += r;
                    vsz += v;
                }
            }
            Ok((rss, vsz))
        }
        ResourceTarget::Page(acct) => Ok(acct.memory()),
    }
}

/// VmRSS and VmSize in bytes from a /proc status file.
pub fn parse_status_memory(status: &str) -> (u64, u64) {
    let field = |name: &str| {
        status
            .lines()
            .find_map(|l| l.strip_prefix(name))
            .and_then(|rest| rest.split_whitespace().next())
            .and_then(|kb| kb.parse::<u64>().ok())
            .map_or(0, |kb| kb * 1024)
    };
    (field("VmRSS:"), field("VmSize:"))
}
