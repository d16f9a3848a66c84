//! Overlay graph, tunnels and candidate paths.
//!
//! Nodes are implicit: only edges carry state (capacity, propagation delay),
//! and a path is an ordered list of edge ids. Tunnel paths are addressed
//! either as `(tunnel, path)` or by a flat index in tunnel-major order, which
//! is the layout used by [`crate::env::SplitAction`].

use std::collections::HashSet;
use std::fs;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TOPOLOGY_SCHEMA_VERSION: u32 = 1;

/// Capacity multiplier applied to core transport edges by the hub-spoke
/// builder, so that site ports are the bottlenecks.
pub const DEFAULT_CORE_FACTOR: f64 = 10.0;

/// Propagation delay used when none is configured, in seconds.
pub const DEFAULT_PROP_DELAY: f64 = 0.001;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub id: usize,
    /// Mbps.
    pub capacity: f64,
    /// Seconds.
    pub prop_delay: f64,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tunnel {
    pub id: usize,
    pub src_site: usize,
    pub dst_site: usize,
    /// Candidate paths, each a sequence of edge ids.
    pub paths: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OverlayNetwork {
    site_count: usize,
    edges: Vec<Edge>,
    tunnels: Vec<Tunnel>,
    offsets: Vec<usize>,
}

impl OverlayNetwork {
    /// Builds a network, rejecting it if [`validate`] reports any violation.
    pub fn new(site_count: usize, edges: Vec<Edge>, tunnels: Vec<Tunnel>) -> Result<Self> {
        let net = Self::from_parts_unchecked(site_count, edges, tunnels);
        let violations = validate(&net);
        if violations.is_empty() {
            Ok(net)
        } else {
            Err(Error::InvalidTopology(violations))
        }
    }

    /// Builds a network without checking invariants. Only [`validate`] is
    /// safe to call on the result until it has been checked.
    pub fn from_parts_unchecked(site_count: usize, edges: Vec<Edge>, tunnels: Vec<Tunnel>) -> Self {
        let mut offsets = Vec::with_capacity(tunnels.len() + 1);
        offsets.push(0);
        for t in &tunnels {
            offsets.push(offsets.last().unwrap() + t.paths.len());
        }
        Self {
            site_count,
            edges,
            tunnels,
            offsets,
        }
    }

    pub fn site_count(&self) -> usize {
        self.site_count
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn tunnels(&self) -> &[Tunnel] {
        &self.tunnels
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn tunnel_count(&self) -> usize {
        self.tunnels.len()
    }

    /// Total number of tunnel-paths.
    pub fn path_count(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Flat indexes of tunnel `k`'s paths.
    pub fn path_range(&self, k: usize) -> Range<usize> {
        self.offsets[k]..self.offsets[k + 1]
    }

    /// `offsets[k]..offsets[k+1]` delimits tunnel `k` in flat path order.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Iterates `(tunnel, flat path index, edge ids)` in flat order.
    pub fn flat_paths(&self) -> impl Iterator<Item = (usize, usize, &[usize])> + '_ {
        self.tunnels.iter().enumerate().flat_map(move |(k, t)| {
            let base = self.offsets[k];
            t.paths
                .iter()
                .enumerate()
                .map(move |(i, p)| (k, base + i, p.as_slice()))
        })
    }

    /// Number of tunnel-paths traversing each edge.
    pub fn edge_path_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.edges.len()];
        for (_, _, path) in self.flat_paths() {
            for &e in path {
                counts[e] += 1;
            }
        }
        counts
    }

    pub fn to_file(&self) -> TopologyFile {
        TopologyFile {
            schema_version: TOPOLOGY_SCHEMA_VERSION,
            site_count: self.site_count,
            edges: self.edges.clone(),
            tunnels: self.tunnels.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_file())?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: TopologyFile = serde_json::from_str(&fs::read_to_string(path)?)?;
        if file.schema_version != TOPOLOGY_SCHEMA_VERSION {
            return Err(Error::Schema {
                path: path.to_path_buf(),
                found: file.schema_version,
                expected: TOPOLOGY_SCHEMA_VERSION,
            });
        }
        Self::new(file.site_count, file.edges, file.tunnels)
    }
}

/// On-disk topology description. See `docs/formats.md`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopologyFile {
    pub schema_version: u32,
    pub site_count: usize,
    pub edges: Vec<Edge>,
    pub tunnels: Vec<Tunnel>,
}

/// Reports every violated invariant. An empty list means the network is valid.
pub fn validate(net: &OverlayNetwork) -> Vec<String> {
    let mut out = Vec::new();
    for (i, e) in net.edges.iter().enumerate() {
        if e.id != i {
            out.push(format!("edge at position {i} has id {} (ids must be dense)", e.id));
        }
        if !(e.capacity.is_finite() && e.capacity > 0.0) {
            out.push(format!("edge {i}: capacity {} must be positive", e.capacity));
        }
        if !(e.prop_delay.is_finite() && e.prop_delay >= 0.0) {
            out.push(format!("edge {i}: prop_delay {} must be non-negative", e.prop_delay));
        }
    }
    for (k, t) in net.tunnels.iter().enumerate() {
        if t.id != k {
            out.push(format!("tunnel at position {k} has id {} (ids must be dense)", t.id));
        }
        for (name, site) in [("src_site", t.src_site), ("dst_site", t.dst_site)] {
            if site >= net.site_count {
                out.push(format!("tunnel {k}: {name} {site} out of range (site_count {})", net.site_count));
            }
        }
        if t.paths.is_empty() {
            out.push(format!("tunnel {k}: no candidate paths"));
        }
        let mut seen = HashSet::new();
        for (p, path) in t.paths.iter().enumerate() {
            if path.is_empty() {
                out.push(format!("tunnel {k} path {p}: empty"));
            }
            if let Some(&bad) = path.iter().find(|&&e| e >= net.edges.len()) {
                out.push(format!(
                    "tunnel {k} path {p}: edge id {bad} does not exist ({} edges)",
                    net.edges.len()
                ));
            }
            if !seen.insert(path.as_slice()) {
                out.push(format!("tunnel {k} path {p}: duplicates an earlier path"));
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transport {
    Internet = 0,
    Mpls = 1,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PortDirection {
    Egress = 0,
    Ingress = 1,
}

/// Hub-spoke overlay: site 0 is the headquarter, sites `1..=n_branches` are
/// branches, with one tunnel per HQ/branch pair and direction.
///
/// Tunnel order is `HQ->B1 .. HQ->Bn, B1->HQ .. Bn->HQ`. Each tunnel has two
/// paths, Internet first, MPLS second. A path crosses the source site's egress
/// port, a core edge private to that tunnel and transport, and the destination
/// site's ingress port.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HubSpoke {
    pub n_branches: usize,
    pub internet_capacity: f64,
    pub mpls_capacity: f64,
    pub prop_delay: f64,
    pub core_factor: f64,
}

impl HubSpoke {
    pub fn new(n_branches: usize, internet_capacity: f64, mpls_capacity: f64, prop_delay: f64) -> Self {
        Self {
            n_branches,
            internet_capacity,
            mpls_capacity,
            prop_delay,
            core_factor: DEFAULT_CORE_FACTOR,
        }
    }

    pub fn port_edge(&self, site: usize, transport: Transport, dir: PortDirection) -> usize {
        (site * 2 + transport as usize) * 2 + dir as usize
    }

    pub fn core_edge(&self, tunnel: usize, transport: Transport) -> usize {
        4 * (self.n_branches + 1) + 2 * tunnel + transport as usize
    }

    fn capacity(&self, transport: Transport) -> f64 {
        match transport {
            Transport::Internet => self.internet_capacity,
            Transport::Mpls => self.mpls_capacity,
        }
    }

    pub fn build(&self) -> Result<OverlayNetwork> {
        if self.n_branches == 0 {
            return Err(Error::InvalidConfig("hub-spoke needs at least one branch".into()));
        }
        for (name, v) in [
            ("internet_capacity", self.internet_capacity),
            ("mpls_capacity", self.mpls_capacity),
            ("core_factor", self.core_factor),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        const TRANSPORTS: [Transport; 2] = [Transport::Internet, Transport::Mpls];

        let mut edges = Vec::new();
        for site in 0..=self.n_branches {
            for tr in TRANSPORTS {
                for dir in [PortDirection::Egress, PortDirection::Ingress] {
                    edges.push(Edge {
                        id: edges.len(),
                        capacity: self.capacity(tr),
                        prop_delay: self.prop_delay,
                        label: format!("site{site}-{}-{}", transport_name(tr), dir_name(dir)),
                    });
                }
            }
        }

        let mut pairs = Vec::with_capacity(2 * self.n_branches);
        pairs.extend((1..=self.n_branches).map(|b| (0, b)));
        pairs.extend((1..=self.n_branches).map(|b| (b, 0)));

        let mut tunnels = Vec::with_capacity(pairs.len());
        for (k, &(src, dst)) in pairs.iter().enumerate() {
            let mut paths = Vec::with_capacity(2);
            for tr in TRANSPORTS {
                let core = edges.len();
                debug_assert_eq!(core, self.core_edge(k, tr));
                edges.push(Edge {
                    id: core,
                    capacity: self.capacity(tr) * self.core_factor,
                    prop_delay: self.prop_delay,
                    label: format!("core-t{k}-{}", transport_name(tr)),
                });
                paths.push(vec![
                    self.port_edge(src, tr, PortDirection::Egress),
                    core,
                    self.port_edge(dst, tr, PortDirection::Ingress),
                ]);
            }
            tunnels.push(Tunnel {
                id: k,
                src_site: src,
                dst_site: dst,
                paths,
            });
        }
        OverlayNetwork::new(self.n_branches + 1, edges, tunnels)
    }
}

fn transport_name(t: Transport) -> &'static str {
    match t {
        Transport::Internet => "inet",
        Transport::Mpls => "mpls",
    }
}

fn dir_name(d: PortDirection) -> &'static str {
    match d {
        PortDirection::Egress => "egress",
        PortDirection::Ingress => "ingress",
    }
}

/// Hub-spoke network with the default core factor.
pub fn build_hub_spoke(
    n_branches: usize,
    internet_capacity: f64,
    mpls_capacity: f64,
    prop_delay: f64,
) -> Result<OverlayNetwork> {
    HubSpoke::new(n_branches, internet_capacity, mpls_capacity, prop_delay).build()
}
