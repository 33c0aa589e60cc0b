//! Two-phase placement of inference backends onto rollout servers: same
//! host first, then round-robin for the rest.

use std::collections::{BTreeMap, BTreeSet};

/// Host part of an address, taken literally (no DNS). Accepts URLs,
/// `host:port`, `[v6]:port` and bare hosts.
pub fn host_of(address: &str) -> String {
    if address.contains("://") {
        if let Ok(url) = url::Url::parse(address) {
            if let Some(host) = url.host_str() {
                return host.trim_start_matches('[').trim_end_matches(']').to_string();
            }
        }
    }
    if let Some(rest) = address.strip_prefix('[') {
        return rest.split(']').next().unwrap_or(rest).to_string();
    }
    if address.matches(':').count() > 1 {
        // Bare IPv6 without a port.
        return address.to_string();
    }
    address.split([':', '/']).next().unwrap_or(address).to_string()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AssignmentTable {
    /// Rollout server to its backends, in assignment order.
    pub servers: BTreeMap<String, Vec<String>>,
    /// Backends placed by host match.
    pub local: BTreeSet<String>,
}

impl AssignmentTable {
    pub fn server_of(&self, backend: &str) -> Option<&str> {
        self.servers.iter().find(|(_, bs)| bs.iter().any(|b| b == backend)).map(|(s, _)| s.as_str())
    }

    /// Backends each server received by round-robin.
    pub fn remote_counts(&self) -> BTreeMap<&str, usize> {
        self.servers
            .iter()
            .map(|(s, bs)| (s.as_str(), bs.iter().filter(|b| !self.local.contains(*b)).count()))
            .collect()
    }
}

pub fn hierarchical_assign(rollout_servers: &[String], backends: &[String]) -> AssignmentTable {
    let servers: BTreeSet<&String> = rollout_servers.iter().collect();
    let mut table = AssignmentTable {
        servers: servers.iter().map(|s| ((*s).clone(), Vec::new())).collect(),
        local: BTreeSet::new(),
    };
    if servers.is_empty() {
        return table;
    }
    let mut by_host: BTreeMap<String, Vec<&String>> = BTreeMap::new();
    for s in &servers {
        by_host.entry(host_of(s)).or_default().push(s);
    }

    let mut remaining = Vec::new();
    let mut seen = BTreeSet::new();
    for b in backends {
        if !seen.insert(b) {
            continue;
        }
        match by_host.get(&host_of(b)) {
            Some(candidates) => {
                // Fewest backends so far, then address order.
                let target = candidates
                    .iter()
                    .min_by_key(|s| (table.servers[s.as_str()].len(), s.as_str()))
                    .expect("host groups are nonempty");
                table.servers.get_mut(target.as_str()).expect("known server").push(b.clone());
                table.local.insert(b.clone());
            }
            None => remaining.push(b),
        }
    }
    let order: Vec<&String> = servers.into_iter().collect();
    for (i, b) in remaining.into_iter().enumerate() {
        table.servers.get_mut(order[i % order.len()].as_str()).expect("known server").push(b.clone());
    }
    table
}
