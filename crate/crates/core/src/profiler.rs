//! Scoped wall-clock profiler with call counts and a call tree.
//!
//! Each scope reads the monotonic clock on entry and exit and adds the
//! difference into a counter owned by the call-tree node for that scope.
//! Nodes are keyed by `(parent, &'static str)`, so a name that appears under
//! two different parents is two nodes. Nothing is sampled or symbolized.
//!
//! A [`Profiler`] is single-threaded. Parallel code gives each worker its
//! own profiler and folds them back with [`Profiler::absorb`], which merges
//! nodes by name and marks the report as merged.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use crate::error::{Error, Result};

/// Scope names used by the prediction and embedding paths.
pub mod names {
    pub const APPLY_MODEL: &str = "ApplyModelMulti";
    pub const BINARIZE_FEATURES: &str = "BinarizeFeatures";
    pub const BINARIZE_FLOATS: &str = "BinarizeFloatsNonSse";
    pub const CALC_TREES: &str = "CalcTreesBlockedImpl";
    pub const CALC_INDEXES: &str = "CalcIndexesBasic";
    pub const LEAF_VALUES: &str = "CalculateLeafValues";
    pub const LEAF_VALUES_MULTI: &str = "CalculateLeafValuesMulti";
    pub const EMBEDDINGS: &str = "embeddingProcessingCollection";
    pub const L2_DISTANCE: &str = "L2SqrDistance";
}

#[derive(Debug, Clone)]
struct Node {
    name: &'static str,
    call_count: u64,
    total_ns: u64,
    children: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
struct Frame {
    node: usize,
    start: Instant,
}

#[derive(Debug, Clone)]
pub struct Profiler {
    enabled: bool,
    nodes: Vec<Node>,
    roots: Vec<usize>,
    stack: Vec<Frame>,
    nesting_error: Option<String>,
    merged: bool,
}

impl Default for Profiler {
    fn default() -> Self {
        Self::disabled()
    }
}

impl Profiler {
    pub fn new(enabled: bool) -> Self {
        Self {
            enabled,
            nodes: Vec::with_capacity(if enabled { 64 } else { 0 }),
            roots: Vec::new(),
            stack: Vec::with_capacity(if enabled { 16 } else { 0 }),
            nesting_error: None,
            merged: false,
        }
    }

    pub fn enabled() -> Self {
        Self::new(true)
    }

    pub fn disabled() -> Self {
        Self::new(false)
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    /// Runs `body` inside a scope named `name`. When disabled, only runs `body`.
    #[inline]
    pub fn scope<R>(&mut self, name: &'static str, body: impl FnOnce(&mut Self) -> R) -> R {
        if !self.enabled {
            return body(self);
        }
        self.enter(name);
        let result = body(self);
        self.exit(name);
        result
    }

    #[inline]
    pub fn enter(&mut self, name: &'static str) {
        if !self.enabled {
            return;
        }
        let node = self.child_of_current(name);
        self.stack.push(Frame {
            node,
            start: Instant::now(),
        });
    }

    /// Closes the innermost scope. A name that does not match it marks the
    /// profile invalid; the time is still charged to the innermost scope.
    #[inline]
    pub fn exit(&mut self, name: &'static str) {
        if !self.enabled {
            return;
        }
        let end = Instant::now();
        let Some(frame) = self.stack.pop() else {
            self.nesting_error
                .get_or_insert_with(|| format!("exit from '{name}' with no open scope"));
            return;
        };
        let node = &mut self.nodes[frame.node];
        node.call_count += 1;
        node.total_ns += end.duration_since(frame.start).as_nanos() as u64;
        if node.name != name {
            let open = node.name;
            self.nesting_error
                .get_or_insert_with(|| format!("exit from '{name}' while '{open}' is innermost"));
        }
    }

    fn child_of_current(&mut self, name: &'static str) -> usize {
        let siblings = match self.stack.last() {
            Some(frame) => &self.nodes[frame.node].children,
            None => &self.roots,
        };
        if let Some(&id) = siblings.iter().find(|&&id| self.nodes[id].name == name) {
            return id;
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            name,
            call_count: 0,
            total_ns: 0,
            children: Vec::new(),
        });
        match self.stack.last() {
            Some(frame) => self.nodes[frame.node].children.push(id),
            None => self.roots.push(id),
        }
        id
    }

    /// Grafts `other`'s call tree under the currently open scope, summing
    /// counts and times of same-named nodes.
    pub fn absorb(&mut self, other: Profiler) {
        if !self.enabled || !other.enabled {
            return;
        }
        if let Some(err) = other.nesting_error.clone() {
            self.nesting_error.get_or_insert(err);
        }
        if !other.stack.is_empty() {
            self.nesting_error
                .get_or_insert_with(|| "absorbed profile has open scopes".to_string());
        }
        let parent = self.stack.last().map(|f| f.node);
        for &root in &other.roots {
            self.merge_node(parent, &other, root);
        }
        self.merged = true;
    }

    fn merge_node(&mut self, parent: Option<usize>, other: &Profiler, src: usize) {
        let src_node = &other.nodes[src];
        let siblings = match parent {
            Some(p) => &self.nodes[p].children,
            None => &self.roots,
        };
        let id = match siblings
            .iter()
            .copied()
            .find(|&id| self.nodes[id].name == src_node.name)
        {
            Some(id) => id,
            None => {
                let id = self.nodes.len();
                self.nodes.push(Node {
                    name: src_node.name,
                    call_count: 0,
                    total_ns: 0,
                    children: Vec::new(),
                });
                match parent {
                    Some(p) => self.nodes[p].children.push(id),
                    None => self.roots.push(id),
                }
                id
            }
        };
        self.nodes[id].call_count += src_node.call_count;
        self.nodes[id].total_ns += src_node.total_ns;
        for &child in &src_node.children {
            self.merge_node(Some(id), other, child);
        }
    }

    pub fn report(&self) -> Result<ProfileReport> {
        if !self.stack.is_empty() {
            let open: Vec<&str> = self.stack.iter().map(|f| self.nodes[f.node].name).collect();
            return Err(Error::Profile(format!(
                "scopes still open: {}",
                open.join(" > ")
            )));
        }
        if let Some(err) = &self.nesting_error {
            return Err(Error::Profile(format!("invalid nesting: {err}")));
        }
        let roots = self.roots.iter().map(|&id| self.stats(id)).collect();
        Ok(ProfileReport::from_roots(roots, self.merged))
    }

    fn stats(&self, id: usize) -> ScopeStats {
        let node = &self.nodes[id];
        ScopeStats {
            name: node.name.to_string(),
            call_count: node.call_count,
            total_ns: node.total_ns,
            children: node.children.iter().map(|&c| self.stats(c)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScopeStats {
    pub name: String,
    pub call_count: u64,
    pub total_ns: u64,
    pub children: Vec<ScopeStats>,
}

impl ScopeStats {
    pub fn child(&self, name: &str) -> Option<&ScopeStats> {
        self.children.iter().find(|c| c.name == name)
    }

    pub fn children_total_ns(&self) -> u64 {
        self.children.iter().map(|c| c.total_ns).sum()
    }
}

pub const OTHER_ROW: &str = "Other";
pub const TOTAL_ROW: &str = "Total";

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub name: String,
    /// Slash-joined names from the root; used to join reports.
    pub path: String,
    pub depth: usize,
    /// `None` for the synthesized residual row.
    pub call_count: Option<u64>,
    pub time_ns: u64,
    pub percent: f64,
}

/// Flattened call tree. `grand_total_ns` is the summed time of the root
/// scopes; the residual `Other` row is the part of it not covered by the
/// roots' direct children.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileReport {
    pub roots: Vec<ScopeStats>,
    pub grand_total_ns: u64,
    pub rows: Vec<ReportRow>,
    pub merged: bool,
}

fn percent_of(time_ns: u64, total_ns: u64) -> f64 {
    if total_ns == 0 {
        0.0
    } else {
        100.0 * time_ns as f64 / total_ns as f64
    }
}

impl ProfileReport {
    pub fn from_roots(roots: Vec<ScopeStats>, merged: bool) -> Self {
        let grand_total_ns: u64 = roots.iter().map(|r| r.total_ns).sum();
        let mut rows = Vec::new();
        if !roots.is_empty() {
            let mut sorted: Vec<&ScopeStats> = roots.iter().collect();
            sort_by_time(&mut sorted);
            for root in sorted {
                flatten(root, "", 0, grand_total_ns, &mut rows);
            }
            let covered: u64 = roots.iter().map(ScopeStats::children_total_ns).sum();
            let other = grand_total_ns.saturating_sub(covered);
            rows.push(ReportRow {
                name: OTHER_ROW.to_string(),
                path: OTHER_ROW.to_string(),
                depth: 0,
                call_count: None,
                time_ns: other,
                percent: percent_of(other, grand_total_ns),
            });
        }
        Self {
            roots,
            grand_total_ns,
            rows,
            merged,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }

    pub fn row(&self, name: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Depth-first search for the first scope called `name`.
    pub fn find(&self, name: &str) -> Option<&ScopeStats> {
        fn walk<'a>(nodes: &'a [ScopeStats], name: &str) -> Option<&'a ScopeStats> {
            nodes
                .iter()
                .find_map(|n| (n.name == name).then_some(n).or_else(|| walk(&n.children, name)))
        }
        walk(&self.roots, name)
    }

    pub fn render(&self, format: ReportFormat) -> String {
        let header = ["function", "call_count", "time_s", "pct_total"];
        let mut body: Vec<[String; 4]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    indent_name(format, r.depth, &r.name),
                    r.call_count.map(|c| c.to_string()).unwrap_or_default(),
                    secs(r.time_ns),
                    pct(format, r.percent),
                ]
            })
            .collect();
        if !self.is_empty() {
            body.push([
                TOTAL_ROW.to_string(),
                String::new(),
                secs(self.grand_total_ns),
                pct(format, 100.0),
            ]);
        }
        render_rows(format, &header, &body)
    }
}

fn sort_by_time(nodes: &mut [&ScopeStats]) {
    nodes.sort_by(|a, b| b.total_ns.cmp(&a.total_ns).then_with(|| a.name.cmp(&b.name)));
}

fn flatten(node: &ScopeStats, prefix: &str, depth: usize, grand: u64, rows: &mut Vec<ReportRow>) {
    let path = if prefix.is_empty() {
        node.name.clone()
    } else {
        format!("{prefix}/{}", node.name)
    };
    rows.push(ReportRow {
        name: node.name.clone(),
        path: path.clone(),
        depth,
        call_count: Some(node.call_count),
        time_ns: node.total_ns,
        percent: percent_of(node.total_ns, grand),
    });
    let mut children: Vec<&ScopeStats> = node.children.iter().collect();
    sort_by_time(&mut children);
    for child in children {
        flatten(child, &path, depth + 1, grand, rows);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Table,
    Tsv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "tsv" => Ok(ReportFormat::Tsv),
            other => Err(Error::InvalidParameter(format!(
                "unknown report format '{other}', expected table or tsv"
            ))),
        }
    }
}

fn secs(ns: u64) -> String {
    format!("{:.6}", ns as f64 * 1e-9)
}

fn pct(format: ReportFormat, value: f64) -> String {
    match format {
        ReportFormat::Table => format!("{value:.2}%"),
        ReportFormat::Tsv => format!("{value:.4}"),
    }
}

fn indent_name(format: ReportFormat, depth: usize, name: &str) -> String {
    match format {
        ReportFormat::Table => format!("{}{name}", "  ".repeat(depth)),
        ReportFormat::Tsv => name.to_string(),
    }
}

fn render_rows<const N: usize>(format: ReportFormat, header: &[&str; N], body: &[[String; N]]) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Tsv => {
            out.push_str(&header.join("\t"));
            out.push('\n');
            for row in body {
                out.push_str(&row.join("\t"));
                out.push('\n');
            }
        }
        ReportFormat::Table => {
            let mut widths: [usize; N] = std::array::from_fn(|i| header[i].len());
            for row in body {
                for (w, cell) in widths.iter_mut().zip(row) {
                    *w = (*w).max(cell.len());
                }
            }
            let line = |out: &mut String, cells: &mut dyn Iterator<Item = &str>| {
                for (i, cell) in cells.enumerate() {
                    if i == 0 {
                        let _ = write!(out, "{cell:<w$}", w = widths[0]);
                    } else {
                        let _ = write!(out, "  {cell:>w$}", w = widths[i]);
                    }
                }
                out.push('\n');
            };
            line(&mut out, &mut header.iter().copied());
            let rule: usize = widths.iter().sum::<usize>() + 2 * (N - 1);
            out.push_str(&"-".repeat(rule));
            out.push('\n');
            for row in body {
                line(&mut out, &mut row.iter().map(String::as_str));
            }
        }
    }
    out
}

/// One row of a baseline-versus-optimized comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub name: String,
    pub path: String,
    pub depth: usize,
    pub call_count: Option<u64>,
    pub baseline: Option<(u64, f64)>,
    pub optimized: Option<(u64, f64)>,
    pub speedup: Option<f64>,
}

/// Two reports joined by scope path, with a trailing `Total` row.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    pub baseline_total_ns: u64,
    pub optimized_total_ns: u64,
}

impl ComparisonReport {
    pub const COLUMNS: [&'static str; 7] = [
        "function",
        "call_count",
        "baseline_time_s",
        "baseline_pct_total",
        "optimized_time_s",
        "optimized_pct_total",
        "speedup",
    ];

    pub fn join(baseline: &ProfileReport, optimized: &ProfileReport) -> Self {
        let speedup = |b: u64, o: u64| (o > 0).then(|| b as f64 / o as f64);
        let mut rows: Vec<ComparisonRow> = baseline
            .rows
            .iter()
            .map(|b| {
                let o = optimized.rows.iter().find(|o| o.path == b.path);
                ComparisonRow {
                    name: b.name.clone(),
                    path: b.path.clone(),
                    depth: b.depth,
                    call_count: b.call_count,
                    baseline: Some((b.time_ns, b.percent)),
                    optimized: o.map(|o| (o.time_ns, o.percent)),
                    speedup: match (b.call_count, o) {
                        (Some(_), Some(o)) => speedup(b.time_ns, o.time_ns),
                        _ => None,
                    },
                }
            })
            .collect();
        for o in &optimized.rows {
            if !baseline.rows.iter().any(|b| b.path == o.path) {
                rows.push(ComparisonRow {
                    name: o.name.clone(),
                    path: o.path.clone(),
                    depth: o.depth,
                    call_count: o.call_count,
                    baseline: None,
                    optimized: Some((o.time_ns, o.percent)),
                    speedup: None,
                });
            }
        }
        // Keep the residual row last, before the total.
        if let Some(pos) = rows.iter().position(|r| r.path == OTHER_ROW) {
            let other = rows.remove(pos);
            rows.push(other);
        }
        Self {
            rows,
            baseline_total_ns: baseline.grand_total_ns,
            optimized_total_ns: optimized.grand_total_ns,
        }
    }

    pub fn total_speedup(&self) -> Option<f64> {
        (self.optimized_total_ns > 0)
            .then(|| self.baseline_total_ns as f64 / self.optimized_total_ns as f64)
    }

    pub fn row(&self, name: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn render(&self, format: ReportFormat) -> String {
        let dash = || "-".to_string();
        let time_pct = |v: Option<(u64, f64)>| match v {
            Some((ns, p)) => [secs(ns), pct(format, p)],
            None => [dash(), dash()],
        };
        let ratio = |s: Option<f64>| s.map(|s| format!("{s:.2}")).unwrap_or_else(dash);
        let mut body: Vec<[String; 7]> = self
            .rows
            .iter()
            .map(|r| {
                let [bt, bp] = time_pct(r.baseline);
                let [ot, op] = time_pct(r.optimized);
                [
                    indent_name(format, r.depth, &r.name),
                    r.call_count.map(|c| c.to_string()).unwrap_or_default(),
                    bt,
                    bp,
                    ot,
                    op,
                    ratio(r.speedup),
                ]
            })
            .collect();
        body.push([
            TOTAL_ROW.to_string(),
            String::new(),
            secs(self.baseline_total_ns),
            String::new(),
            secs(self.optimized_total_ns),
            String::new(),
            ratio(self.total_speedup()),
        ]);
        render_rows(format, &Self::COLUMNS, &body)
    }
}

/// Mean wall time of one empty scope, in nanoseconds, over `iterations`.
pub fn measure_empty_scope_ns(iterations: u64) -> f64 {
    let mut profiler = Profiler::enabled();
    profiler.enter("overhead");
    let start = Instant::now();
    for _ in 0..iterations {
        profiler.scope("empty", |_| ());
    }
    let elapsed = start.elapsed();
    profiler.exit("overhead");
    elapsed.as_nanos() as f64 / iterations.max(1) as f64
}
