//! Process-group inspection through /proc and signal helpers.

use std::fs;

/// Non-zombie processes whose process group is `pgid`.
pub fn group_members(pgid: i32) -> Vec<i32> {
    let Ok(entries) = fs::read_dir("/proc") else {
        return Vec::new();
    };
    entries
        .filter_map(|e| e.ok()?.file_name().to_str()?.parse::<i32>().ok())
        .filter(|&pid| matches!(read_stat(pid), Some((state, pgrp)) if pgrp == pgid && state != 'Z' && state != 'X'))
        .collect()
}

pub fn group_alive(pgid: i32) -> bool {
    // SAFETY: kill with signal 0 performs only a permission/existence check.
    let rc = unsafe { libc::kill(-pgid, 0) };
    if rc != 0 && std::io::Error::last_os_error().raw_os_error() == Some(libc::ESRCH) {
        return false;
    }
    !group_members(pgid).is_empty()
}

pub fn signal_group(pgid: i32, signal: i32) {
    if pgid <= 1 {
        return;
    }
    // SAFETY: plain syscall; a stale group just yields ESRCH.
    unsafe {
        libc::kill(-pgid, signal);
    }
}

fn read_stat(pid: i32) -> Option<(char, i32)> {
    let stat = fs::read_to_string(format!("/proc/{pid}/stat")).ok()?;
    // comm may contain spaces and parens; fields resume after the last ')'.
    let rest = &stat[stat.rfind(')')? + 1..];
    let mut fields = rest.split_whitespace();
    let state = fields.next()?.chars().next()?;
    let _ppid = fields.next()?;
    let pgrp = fields.next()?.parse().ok()?;
    Some((state, pgrp))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sees_own_group() {
        // SAFETY: getpgrp has no preconditions.
        let own = unsafe { libc::getpgrp() };
        assert!(group_members(own).contains(&(std::process::id() as i32)));
        assert!(group_alive(own));
        assert!(!group_alive(i32::MAX - 7));
    }
}
