//! Signed correlation graphs between nodes, one per ordered quantity pair and
//! construction variant, with summary statistics and exports.
//!
//! Entry `(i, j)` of a graph is the edge from node `i` (the source quantity)
//! to node `j` (the destination quantity).

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Result};
use crate::features::{Quantity, TargetSet};
use crate::marketdata::{Cluster, InstrumentId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    Weighted,
    Unweighted,
}

/// Which axis the weighted construction normalizes over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Normalization {
    #[default]
    Row,
    Column,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GraphConfig {
    pub knn_k: usize,
    pub lag: usize,
    pub variant: Variant,
    pub source: Quantity,
    pub dest: Quantity,
    #[serde(default)]
    pub normalization: Normalization,
}

impl GraphConfig {
    pub fn new(source: Quantity, dest: Quantity, lag: usize, variant: Variant) -> Self {
        Self { knn_k: 3, lag, variant, source, dest, normalization: Normalization::Row }
    }

    pub fn validate(&self) -> Result<()> {
        if self.knn_k == 0 || self.lag > 1 {
            return Err(crate::Error::Config(format!("graph needs knn_k >= 1 and lag in {{0, 1}}, got {self:?}")));
        }
        Ok(())
    }

    /// e.g. `Return - Volatility (Lagged Unweighted)`.
    pub fn label(&self) -> String {
        format!("{} - {} ({})", self.source.label(), self.dest.label(), ChannelKind::of(self).label())
    }

    /// Filesystem-friendly label.
    pub fn slug(&self) -> String {
        format!(
            "{}_{}_{}_{}",
            self.source.label().to_lowercase(),
            self.dest.label().to_lowercase(),
            if self.lag == 0 { "contemp" } else { "lagged" },
            if self.variant == Variant::Weighted { "weighted" } else { "unweighted" }
        )
    }
}

/// The four construction variants shared by every quantity pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelKind {
    ContemporaneousWeighted,
    ContemporaneousUnweighted,
    LaggedWeighted,
    LaggedUnweighted,
}

impl ChannelKind {
    pub const ALL: [ChannelKind; 4] = [
        ChannelKind::ContemporaneousWeighted,
        ChannelKind::ContemporaneousUnweighted,
        ChannelKind::LaggedWeighted,
        ChannelKind::LaggedUnweighted,
    ];

    pub fn lag(self) -> usize {
        match self {
            ChannelKind::ContemporaneousWeighted | ChannelKind::ContemporaneousUnweighted => 0,
            _ => 1,
        }
    }

    pub fn variant(self) -> Variant {
        match self {
            ChannelKind::ContemporaneousWeighted | ChannelKind::LaggedWeighted => Variant::Weighted,
            _ => Variant::Unweighted,
        }
    }

    pub fn of(cfg: &GraphConfig) -> Self {
        match (cfg.lag, cfg.variant) {
            (0, Variant::Weighted) => ChannelKind::ContemporaneousWeighted,
            (0, Variant::Unweighted) => ChannelKind::ContemporaneousUnweighted,
            (_, Variant::Weighted) => ChannelKind::LaggedWeighted,
            (_, Variant::Unweighted) => ChannelKind::LaggedUnweighted,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ChannelKind::ContemporaneousWeighted => "Contemporaneous Weighted",
            ChannelKind::ContemporaneousUnweighted => "Contemporaneous Unweighted",
            ChannelKind::LaggedWeighted => "Lagged Weighted",
            ChannelKind::LaggedUnweighted => "Lagged Unweighted",
        }
    }
}

/// Average ranks (1-based); ties share the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman correlation over the pairs where both values are finite.
/// `None` when fewer than 3 pairs remain or either side has no rank variance.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "spearman inputs differ in length");
    let (xs, ys): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .filter(|(a, b)| a.is_finite() && b.is_finite())
        .map(|(&a, &b)| (a, b))
        .unzip();
    if xs.len() < 3 {
        return None;
    }
    pearson(&average_ranks(&xs), &average_ranks(&ys))
}

/// Correlation matrix with the entries that could not be computed flagged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrMatrix {
    pub n: usize,
    /// Row-major; undefined entries hold 0.
    pub values: Vec<f64>,
    pub defined: Vec<bool>,
}

impl CorrMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn is_defined(&self, i: usize, j: usize) -> bool {
        self.defined[i * self.n + j]
    }

    pub fn undefined_count(&self) -> usize {
        self.defined.iter().filter(|d| !**d).count()
    }

    /// Build from a dense row-major matrix where every entry is defined.
    pub fn from_dense(n: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), n * n);
        Self { n, values, defined: vec![true; n * n] }
    }

    pub fn transpose(&self) -> Self {
        let n = self.n;
        let mut out = self.clone();
        for i in 0..n {
            for j in 0..n {
                out.values[j * n + i] = self.values[i * n + j];
                out.defined[j * n + i] = self.defined[i * n + j];
            }
        }
        out
    }
}

/// Entry `(i, j)` = Spearman(source quantity of node `i` at row `r - lag`,
/// destination quantity of node `j` at row `r`), over rows `r` in `rows`
/// with `r - lag` also in `rows`. Correlations involving the volume of a
/// node without volume are left undefined.
pub fn pair_correlation_matrix(targets: &TargetSet, rows: std::ops::Range<usize>, cfg: &GraphConfig) -> CorrMatrix {
    let src = targets.quantity(cfg.source);
    let dst = targets.quantity(cfg.dest);
    let n = targets.instruments.len();
    let lag = cfg.lag;
    let start = rows.start + lag;
    let mut values = vec![0.0; n * n];
    let mut defined = vec![false; n * n];
    for i in 0..n {
        if cfg.source == Quantity::Volume && !targets.instruments[i].has_volume() {
            continue;
        }
        let x: Vec<f64> = (start..rows.end).map(|r| src[i][r - lag]).collect();
        for j in 0..n {
            if cfg.dest == Quantity::Volume && !targets.instruments[j].has_volume() {
                continue;
            }
            let y: Vec<f64> = (start..rows.end).map(|r| dst[j][r]).collect();
            if let Some(c) = spearman(&x, &y) {
                values[i * n + j] = c;
                defined[i * n + j] = true;
            }
        }
    }
    CorrMatrix { n, values, defined }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignedGraph {
    pub nodes: Vec<InstrumentId>,
    pub config: GraphConfig,
    /// Row-major `N x N`.
    pub adjacency: Vec<f64>,
    /// Quantiles (0, 25, 50, 75, 100%) of the off-diagonal defined correlations.
    pub corr_quantiles: Option<[f64; 5]>,
}

impl SignedGraph {
    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.adjacency[i * self.n() + j]
    }

    /// Nonzero entries per row, diagonal included.
    pub fn degree(&self) -> Vec<usize> {
        let n = self.n();
        (0..n).map(|i| self.adjacency[i * n..(i + 1) * n].iter().filter(|v| **v != 0.0).count()).collect()
    }

    pub fn off_diagonal_edges(&self) -> usize {
        let n = self.n();
        (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|&(i, j)| i != j && self.get(i, j) != 0.0).count()
    }

    /// The N x N identity graph (self-loops only).
    pub fn identity(nodes: Vec<InstrumentId>, config: GraphConfig) -> Self {
        let n = nodes.len();
        let mut adjacency = vec![0.0; n * n];
        for i in 0..n {
            adjacency[i * n + i] = 1.0;
        }
        Self { nodes, config, adjacency, corr_quantiles: None }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Directed graph with green (positive) and red (negative) edges.
    pub fn to_dot(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "digraph \"{}\" {{", self.config.label());
        for node in &self.nodes {
            let _ = writeln!(out, "  \"{node}\";");
        }
        let n = self.n();
        for i in 0..n {
            for j in 0..n {
                let w = self.get(i, j);
                if i == j || w == 0.0 {
                    continue;
                }
                let color = if w > 0.0 { "green" } else { "red" };
                let _ = writeln!(out, "  \"{}\" -> \"{}\" [color={color}, weight={w}];", self.nodes[i], self.nodes[j]);
            }
        }
        out.push_str("}\n");
        out
    }

    /// Adjacency as CSV with node labels on both axes.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("node");
        for node in &self.nodes {
            let _ = write!(out, ",{node}");
        }
        out.push('\n');
        for (i, node) in self.nodes.iter().enumerate() {
            let _ = write!(out, "{node}");
            for j in 0..self.n() {
                let _ = write!(out, ",{}", self.get(i, j));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Dot,
    Json,
    Csv,
}

pub fn export_graph(graph: &SignedGraph, format: ExportFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let body = match format {
        ExportFormat::Dot => graph.to_dot(),
        ExportFormat::Json => graph.to_json()?,
        ExportFormat::Csv => graph.to_csv(),
    };
    std::fs::write(path, body).map_err(io_err(path))
}

fn quantiles(mut v: Vec<f64>) -> Option<[f64; 5]> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    Some([q(0.0), q(0.25), q(0.5), q(0.75), q(1.0)])
}

fn off_diagonal_quantiles(c: &CorrMatrix) -> Option<[f64; 5]> {
    let n = c.n;
    let vals = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j && c.is_defined(i, j))
        .map(|(i, j)| c.get(i, j))
        .collect();
    quantiles(vals)
}

/// Weighted signed graph: off-diagonal positive entries are divided by the
/// sum of positive entries along the normalization axis, negative ones by the
/// absolute sum of negative entries, and the diagonal is set to 1.
pub fn weighted_adjacency(c: &CorrMatrix, nodes: Vec<InstrumentId>, config: GraphConfig) -> SignedGraph {
    let n = c.n;
    assert_eq!(nodes.len(), n);
    let at = |line: usize, k: usize| match config.normalization {
        Normalization::Row => (line, k),
        Normalization::Column => (k, line),
    };
    let mut adjacency = vec![0.0; n * n];
    for line in 0..n {
        let (mut pos, mut neg) = (0.0, 0.0);
        for k in 0..n {
            let (i, j) = at(line, k);
            if i == j || !c.is_defined(i, j) {
                continue;
            }
            let v = c.get(i, j);
            if v > 0.0 {
                pos += v;
            } else {
                neg -= v;
            }
        }
        for k in 0..n {
            let (i, j) = at(line, k);
            if i == j || !c.is_defined(i, j) {
                continue;
            }
            let v = c.get(i, j);
            adjacency[i * n + j] = if v > 0.0 {
                v / pos
            } else if v < 0.0 {
                v / neg
            } else {
                0.0
            };
        }
    }
    for i in 0..n {
        adjacency[i * n + i] = 1.0;
    }
    SignedGraph { nodes, config, adjacency, corr_quantiles: off_diagonal_quantiles(c) }
}

/// Unweighted signed K-NN graph: for each destination `j`, the `K` sources
/// `i != j` with the largest `|C_ij|` (ties to the lower index) get
/// `sign(C_ij)`; the diagonal is 1.
pub fn unweighted_adjacency(c: &CorrMatrix, k: usize, nodes: Vec<InstrumentId>, config: GraphConfig) -> SignedGraph {
    let n = c.n;
    assert_eq!(nodes.len(), n);
    let mut adjacency = vec![0.0; n * n];
    for j in 0..n {
        let mut cand: Vec<usize> = (0..n).filter(|&i| i != j && c.is_defined(i, j)).collect();
        cand.sort_by(|&a, &b| c.get(b, j).abs().total_cmp(&c.get(a, j).abs()).then(a.cmp(&b)));
        for &i in cand.iter().take(k) {
            let v = c.get(i, j);
            adjacency[i * n + j] = if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            };
        }
    }
    for i in 0..n {
        adjacency[i * n + i] = 1.0;
    }
    SignedGraph { nodes, config, adjacency, corr_quantiles: off_diagonal_quantiles(c) }
}

/// Nonzero entries per row, diagonal included.
pub fn degree_vector(graph: &SignedGraph) -> Vec<usize> {
    graph.degree()
}

pub fn build_graph(targets: &TargetSet, rows: std::ops::Range<usize>, cfg: &GraphConfig) -> SignedGraph {
    let c = pair_correlation_matrix(targets, rows, cfg);
    let nodes = targets.instruments.clone();
    match cfg.variant {
        Variant::Weighted => weighted_adjacency(&c, nodes, *cfg),
        Variant::Unweighted => unweighted_adjacency(&c, cfg.knn_k, nodes, *cfg),
    }
}

/// The channel configurations for forecasting `task`: sources Return,
/// Volatility, Volume into `task`, each in the kinds listed, pair-major.
pub fn channel_configs(task: Quantity, kinds: &[ChannelKind], knn_k: usize, normalization: Normalization) -> Vec<GraphConfig> {
    Quantity::ALL
        .iter()
        .flat_map(|&src| {
            kinds.iter().map(move |kind| GraphConfig {
                knn_k,
                lag: kind.lag(),
                variant: kind.variant(),
                source: src,
                dest: task,
                normalization,
            })
        })
        .collect()
}

/// The default 12-channel set (3 source quantities x 4 kinds) for `task`.
pub fn build_channel_set(targets: &TargetSet, rows: std::ops::Range<usize>, task: Quantity) -> Vec<SignedGraph> {
    channel_configs(task, &ChannelKind::ALL, 3, Normalization::Row)
        .iter()
        .map(|cfg| build_graph(targets, rows.clone(), cfg))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub label: String,
    pub positive_edges: usize,
    pub negative_edges: usize,
    /// Highest out-degree among positive (negative) edges, with its node.
    pub max_positive_out: Option<(usize, InstrumentId)>,
    pub max_negative_out: Option<(usize, InstrumentId)>,
    pub spx_to_spx: usize,
    pub spx_to_vix: usize,
    pub vix_to_spx: usize,
    pub vix_to_vix: usize,
    pub corr_quantiles: Option<[f64; 5]>,
}

pub fn graph_stats(graph: &SignedGraph) -> GraphStats {
    let n = graph.n();
    let mut s = GraphStats {
        label: graph.config.label(),
        positive_edges: 0,
        negative_edges: 0,
        max_positive_out: None,
        max_negative_out: None,
        spx_to_spx: 0,
        spx_to_vix: 0,
        vix_to_spx: 0,
        vix_to_vix: 0,
        corr_quantiles: graph.corr_quantiles,
    };
    let mut pos_out = vec![0usize; n];
    let mut neg_out = vec![0usize; n];
    for i in 0..n {
        for j in 0..n {
            let w = graph.get(i, j);
            if i == j || w == 0.0 {
                continue;
            }
            if w > 0.0 {
                s.positive_edges += 1;
                pos_out[i] += 1;
            } else {
                s.negative_edges += 1;
                neg_out[i] += 1;
            }
            match (graph.nodes[i].cluster(), graph.nodes[j].cluster()) {
                (Cluster::Spx, Cluster::Spx) => s.spx_to_spx += 1,
                (Cluster::Spx, Cluster::Vix) => s.spx_to_vix += 1,
                (Cluster::Vix, Cluster::Spx) => s.vix_to_spx += 1,
                (Cluster::Vix, Cluster::Vix) => s.vix_to_vix += 1,
            }
        }
    }
    let best = |out: &[usize]| {
        // First node attaining the maximum.
        let (idx, &max) = out.iter().enumerate().fold((0, &0), |acc, (i, v)| if *v > *acc.1 { (i, v) } else { acc });
        (max > 0).then(|| (max, graph.nodes[idx]))
    };
    s.max_positive_out = best(&pos_out);
    s.max_negative_out = best(&neg_out);
    s
}

pub const STATS_HEADER: [&str; 11] = [
    "graph",
    "positive_edges",
    "negative_edges",
    "highest_positive_out",
    "highest_negative_out",
    "spx_to_spx",
    "spx_to_vix",
    "vix_to_spx",
    "vix_to_vix",
    "quantiles",
    "n_nodes",
];

impl GraphStats {
    pub fn record(&self, n_nodes: usize) -> Vec<String> {
        let deg = |d: &Option<(usize, InstrumentId)>| match d {
            Some((k, node)) => format!("{k} ({node})"),
            None => "NA".into(),
        };
        let q = match self.corr_quantiles {
            Some(q) => format!("({:.2},{:.2},{:.2},{:.2},{:.2})", q[0], q[1], q[2], q[3], q[4]),
            None => "NA".into(),
        };
        vec![
            self.label.clone(),
            self.positive_edges.to_string(),
            self.negative_edges.to_string(),
            deg(&self.max_positive_out),
            deg(&self.max_negative_out),
            self.spx_to_spx.to_string(),
            self.spx_to_vix.to_string(),
            self.vix_to_spx.to_string(),
            self.vix_to_vix.to_string(),
            q,
            n_nodes.to_string(),
        ]
    }
}

pub fn write_stats_csv(graphs: &[SignedGraph], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(STATS_HEADER)?;
    for g in graphs {
        w.write_record(graph_stats(g).record(g.n()))?;
    }
    w.flush().map_err(io_err(path))
}
