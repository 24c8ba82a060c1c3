//! Process-table probes (Linux `/proc`, plus `kill(pid, 0)`).

use std::fs;

/// Fields of `/proc/<pid>/stat` we care about.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProcStat {
    pub state: char,
    pub pgrp: i32,
    /// Start time in clock ticks since boot.
    pub start_time: u64,
}

pub fn parse_stat(text: &str) -> Option<ProcStat> {
    // comm may contain spaces and parens; fields resume after the last ')'
    let rest = &text[text.rfind(')')? + 1..];
    let f: Vec<&str> = rest.split_whitespace().collect();
    Some(ProcStat {
        state: f.first()?.chars().next()?,
        pgrp: f.get(2)?.parse().ok()?,
        start_time: f.get(19)?.parse().ok()?,
    })
}

pub fn stat(pid: u32) -> Option<ProcStat> {
    parse_stat(&fs::read_to_string(format!("/proc/{pid}/stat")).ok()?)
}

pub fn start_time(pid: u32) -> Option<u64> {
    stat(pid).map(|s| s.start_time)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Probe {
    Exists,
    Gone,
    /// The process exists but belongs to someone we may not signal.
    PermissionDenied,
}

/// `kill -0` semantics.
pub fn signal_zero(pid: u32) -> Probe {
    let Ok(pid) = i32::try_from(pid) else { return Probe::Gone };
    if pid <= 0 {
        return Probe::Gone;
    }
    // SAFETY: signal 0 performs only the existence and permission check.
    let r = unsafe { libc::kill(pid, 0) };
    if r == 0 {
        return Probe::Exists;
    }
    match std::io::Error::last_os_error().raw_os_error() {
        Some(libc::EPERM) => Probe::PermissionDenied,
        _ => Probe::Gone,
    }
}

/// Live (non-zombie) members of process group `pgid`.
pub fn group_members(pgid: i32) -> Vec<u32> {
    let Ok(dir) = fs::read_dir("/proc") else { return Vec::new() };
    dir.filter_map(|e| e.ok()?.file_name().to_str()?.parse::<u32>().ok())
        .filter(|pid| matches!(stat(*pid), Some(s) if s.pgrp == pgid && s.state != 'Z' && s.state != 'X'))
        .collect()
}

/// SIGKILL a whole process group. Missing groups are not an error.
pub fn kill_group(pgid: i32) {
    if pgid > 0 {
        // SAFETY: plain syscall on a positive process-group id.
        unsafe {
            libc::killpg(pgid, libc::SIGKILL);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_stat_with_awkward_comm() {
        let line = "4242 (my (odd) proc) S 1 4242 4242 0 -1 4194560 100 0 0 0 1 2 0 0 20 0 1 0 987654 1000000 200";
        let s = parse_stat(line).unwrap();
        assert_eq!(s.state, 'S');
        assert_eq!(s.pgrp, 4242);
        assert_eq!(s.start_time, 987654);
    }

    #[test]
    fn own_process_visible() {
        let me = std::process::id();
        assert_eq!(signal_zero(me), Probe::Exists);
        assert!(start_time(me).is_some());
        assert_eq!(signal_zero(0), Probe::Gone);
    }
}
