//! Graph representation, file ingestion, adjacency normalization, and
//! synthetic labeled-graph generation.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{CoreError, Result};
use crate::rng::{standard_normal, stream, substream};
use crate::tensor::Tensor;

/// An undirected attributed graph with optional ground-truth labels.
///
/// The edge set is stored deduplicated with each pair ordered `(lo, hi)`;
/// self-loops are rejected (they only appear implicitly during adjacency
/// normalization).
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(u32, u32)>,
    features: Tensor,
    labels: Option<Vec<usize>>,
}

impl Graph {
    pub fn new(
        num_nodes: usize,
        edges: Vec<(u32, u32)>,
        features: Tensor,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        if num_nodes == 0 {
            return Err(CoreError::Argument("graph must have at least one node".into()));
        }
        if features.rows() != num_nodes {
            return Err(CoreError::Shape(format!(
                "feature matrix has {} rows for {} nodes",
                features.rows(),
                num_nodes
            )));
        }
        if let Some(l) = &labels {
            if l.len() != num_nodes {
                return Err(CoreError::Shape(format!(
                    "label vector has {} entries for {} nodes",
                    l.len(),
                    num_nodes
                )));
            }
        }
        let mut set = BTreeSet::new();
        for &(a, b) in &edges {
            if a == b {
                return Err(CoreError::Argument(format!("self-loop on node {a}")));
            }
            let (lo, hi) = (a.min(b), a.max(b));
            if hi as usize >= num_nodes {
                return Err(CoreError::Bounds {
                    id: hi as usize,
                    num_nodes,
                });
            }
            set.insert((lo, hi));
        }
        Ok(Graph {
            num_nodes,
            edges: set.into_iter().collect(),
            features,
            labels,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Deduplicated undirected edges, each as `(lo, hi)` in sorted order.
    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().max().map_or(0, |m| m + 1))
    }

    /// Same graph with the feature matrix replaced.
    pub fn with_features(&self, features: Tensor) -> Result<Self> {
        Graph::new(self.num_nodes, self.edges.clone(), features, self.labels.clone())
    }

    /// Same graph with the edge set replaced.
    pub fn with_edges(&self, edges: Vec<(u32, u32)>) -> Result<Self> {
        Graph::new(self.num_nodes, edges, self.features.clone(), self.labels.clone())
    }
}

/// Sparse symmetric matrix in compressed row layout holding
/// `1/sqrt(deg_i * deg_j)` for every edge of `A + I`, where degrees are
/// taken in `A + I`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// Entry (i, j), zero when outside the sparsity pattern.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        match self.col_idx[lo..hi].binary_search(&(j as u32)) {
            Ok(pos) => self.values[lo + pos],
            Err(_) => 0.0,
        }
    }

    /// Nonzero (column, value) pairs of row i, column-sorted.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi]
            .iter()
            .map(|&c| c as usize)
            .zip(self.values[lo..hi].iter().copied())
    }

    /// Dense product `self * b`.
    pub fn mul_dense(&self, b: &Tensor) -> Result<Tensor> {
        if b.rows() != self.n {
            return Err(CoreError::Shape(format!(
                "spmm: {}x{} * {}x{}",
                self.n,
                self.n,
                b.rows(),
                b.cols()
            )));
        }
        let mut out = Tensor::zeros(self.n, b.cols());
        for i in 0..self.n {
            // Split borrow: the output row cannot alias b.
            let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
            let out_row = out.row_mut(i);
            for (&c, &v) in self.col_idx[lo..hi].iter().zip(&self.values[lo..hi]) {
                let b_row = b.row(c as usize);
                for (o, x) in out_row.iter_mut().zip(b_row) {
                    *o += v * x;
                }
            }
        }
        Ok(out)
    }

    /// Dense product `self^T * b`, via row scatter so it is correct even if
    /// the stored pattern were asymmetric.
    pub fn mul_dense_transpose(&self, b: &Tensor) -> Result<Tensor> {
        if b.rows() != self.n {
            return Err(CoreError::Shape(format!(
                "spmm^T: {}x{} * {}x{}",
                self.n,
                self.n,
                b.rows(),
                b.cols()
            )));
        }
        let mut out = Tensor::zeros(self.n, b.cols());
        for i in 0..self.n {
            let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
            let b_row: Vec<f64> = b.row(i).to_vec();
            for (&c, &v) in self.col_idx[lo..hi].iter().zip(&self.values[lo..hi]) {
                let out_row = out.row_mut(c as usize);
                for (o, x) in out_row.iter_mut().zip(&b_row) {
                    *o += v * x;
                }
            }
        }
        Ok(out)
    }

    /// Max |(i,j) - (j,i)| over the stored pattern.
    pub fn symmetry_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.entry(j, i)).abs());
            }
        }
        worst
    }
}

/// Builds the renormalized adjacency `D^{-1/2} (A + I) D^{-1/2}`.
///
/// Isolated nodes are legal: their only entry is the unit self-loop.
pub fn normalize_adjacency(g: &Graph) -> NormalizedAdjacency {
    let n = g.num_nodes();
    let mut neighbors: Vec<Vec<u32>> = (0..n).map(|i| vec![i as u32]).collect();
    for &(a, b) in g.edges() {
        neighbors[a as usize].push(b);
        neighbors[b as usize].push(a);
    }
    let degrees: Vec<f64> = neighbors.iter().map(|nb| nb.len() as f64).collect();

    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    row_ptr.push(0);
    for (i, nb) in neighbors.iter_mut().enumerate() {
        nb.sort_unstable();
        for &j in nb.iter() {
            col_idx.push(j);
            values.push(1.0 / (degrees[i] * degrees[j as usize]).sqrt());
        }
        row_ptr.push(col_idx.len());
    }
    NormalizedAdjacency {
        n,
        row_ptr,
        col_idx,
        values,
    }
}

/// Parameters of the planted-partition generator used for ground-truth
/// diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct SbmSpec {
    pub block_sizes: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    /// Norm of the per-block mean offset added to the Gaussian features.
    pub feature_shift: f64,
    pub seed: u64,
}

impl SbmSpec {
    pub fn validate(&self) -> Result<()> {
        if self.block_sizes.is_empty() {
            return Err(CoreError::Argument("block list is empty".into()));
        }
        if self.block_sizes.contains(&0) {
            return Err(CoreError::Argument("block sizes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.p_out)
            || !(0.0..=1.0).contains(&self.p_in)
            || self.p_out > self.p_in
        {
            return Err(CoreError::Argument(format!(
                "need 0 <= p_out <= p_in <= 1, got p_in={} p_out={}",
                self.p_in, self.p_out
            )));
        }
        if self.feature_dim == 0 {
            return Err(CoreError::Argument("feature_dim must be positive".into()));
        }
        if self.feature_shift < 0.0 {
            return Err(CoreError::Argument("feature_shift must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.block_sizes.iter().sum()
    }
}

/// Samples a labeled graph: intra-block pairs become edges with probability
/// `p_in`, inter-block with `p_out`; features are standard normal noise plus
/// a block mean of norm `feature_shift`.
pub fn generate_sbm(spec: &SbmSpec) -> Result<Graph> {
    spec.validate()?;
    let n = spec.num_nodes();
    let labels: Vec<usize> = spec
        .block_sizes
        .iter()
        .enumerate()
        .flat_map(|(b, &size)| std::iter::repeat_n(b, size))
        .collect();

    let mut mean_rng = substream(spec.seed, stream::SBM_BLOCK_MEANS);
    let block_means: Vec<Vec<f64>> = spec
        .block_sizes
        .iter()
        .map(|_| {
            let raw: Vec<f64> = (0..spec.feature_dim)
                .map(|_| standard_normal(&mut mean_rng))
                .collect();
            let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
            if spec.feature_shift == 0.0 || norm == 0.0 {
                vec![0.0; spec.feature_dim]
            } else {
                raw.iter().map(|x| x / norm * spec.feature_shift).collect()
            }
        })
        .collect();

    let mut edge_rng = substream(spec.seed, stream::SBM_EDGES);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if labels[i] == labels[j] {
                spec.p_in
            } else {
                spec.p_out
            };
            if edge_rng.gen::<f64>() < p {
                edges.push((i as u32, j as u32));
            }
        }
    }

    let mut feat_rng = substream(spec.seed, stream::SBM_FEATURES);
    let mut data = Vec::with_capacity(n * spec.feature_dim);
    for &label in &labels {
        let mean = &block_means[label];
        for m in mean {
            data.push(m + standard_normal(&mut feat_rng));
        }
    }
    let features = Tensor::new(n, spec.feature_dim, data)?;
    Graph::new(n, edges, features, Some(labels))
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| CoreError::io(path.display().to_string(), e))
}

fn create(path: &Path) -> Result<std::fs::File> {
    std::fs::File::create(path).map_err(|e| CoreError::io(path.display().to_string(), e))
}

/// Reads an edge list: one edge per line, two whitespace-separated zero-based
/// node ids; lines starting with `#` and blank lines are ignored. Duplicate
/// and reversed lines are deduplicated; self-loop lines are rejected.
pub fn read_edge_file(path: &Path, num_nodes: usize) -> Result<Vec<(u32, u32)>> {
    let reader = BufReader::new(open(path)?);
    let display = path.display().to_string();
    let mut set = BTreeSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CoreError::io(&display, e))?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut parts = trimmed.split_whitespace();
        let parse = |tok: Option<&str>| -> Result<u32> {
            tok.ok_or_else(|| CoreError::Parse {
                path: display.clone(),
                line: lineno,
                reason: "expected two node ids".into(),
            })?
            .parse::<u32>()
            .map_err(|e| CoreError::Parse {
                path: display.clone(),
                line: lineno,
                reason: format!("bad node id: {e}"),
            })
        };
        let a = parse(parts.next())?;
        let b = parse(parts.next())?;
        if parts.next().is_some() {
            return Err(CoreError::Parse {
                path: display.clone(),
                line: lineno,
                reason: "expected exactly two node ids".into(),
            });
        }
        if a == b {
            return Err(CoreError::Parse {
                path: display.clone(),
                line: lineno,
                reason: format!("self-loop on node {a}"),
            });
        }
        let (lo, hi) = (a.min(b), a.max(b));
        if hi as usize >= num_nodes {
            return Err(CoreError::Bounds {
                id: hi as usize,
                num_nodes,
            });
        }
        set.insert((lo, hi));
    }
    Ok(set.into_iter().collect())
}

const FEATURE_BINARY_EXT: &str = "bin";

/// Reads a feature matrix. Files with extension `.bin` use the binary form
/// (two 8-byte little-endian counts, then row-major 32-bit floats); anything
/// else is text with an `N F` header followed by N rows of F reals.
pub fn read_feature_file(path: &Path) -> Result<Tensor> {
    if path.extension().and_then(|e| e.to_str()) == Some(FEATURE_BINARY_EXT) {
        read_feature_file_binary(path)
    } else {
        read_feature_file_text(path)
    }
}

fn read_feature_file_text(path: &Path) -> Result<Tensor> {
    let reader = BufReader::new(open(path)?);
    let display = path.display().to_string();
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| CoreError::Parse {
        path: display.clone(),
        line: 1,
        reason: "missing N F header".into(),
    })?;
    let header = header.map_err(|e| CoreError::io(&display, e))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| CoreError::Parse {
            path: display.clone(),
            line: 1,
            reason: format!("bad header: {e}"),
        })?;
    if dims.len() != 2 {
        return Err(CoreError::Parse {
            path: display.clone(),
            line: 1,
            reason: "header must be exactly `N F`".into(),
        });
    }
    let (n, f) = (dims[0], dims[1]);
    let mut data = Vec::with_capacity(n * f);
    let mut rows_seen = 0usize;
    for (idx, line) in lines {
        let line = line.map_err(|e| CoreError::io(&display, e))?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| CoreError::Parse {
                path: display.clone(),
                line: lineno,
                reason: format!("bad feature value: {e}"),
            })?;
        if row.len() != f {
            return Err(CoreError::Parse {
                path: display.clone(),
                line: lineno,
                reason: format!("expected {f} values, got {}", row.len()),
            });
        }
        data.extend_from_slice(&row);
        rows_seen += 1;
    }
    if rows_seen != n {
        return Err(CoreError::Shape(format!(
            "feature file {display} declares {n} rows but contains {rows_seen}"
        )));
    }
    Tensor::new(n, f, data)
}

fn read_feature_file_binary(path: &Path) -> Result<Tensor> {
    let mut reader = BufReader::new(open(path)?);
    let display = path.display().to_string();
    let mut u64buf = [0u8; 8];
    reader
        .read_exact(&mut u64buf)
        .map_err(|e| CoreError::io(&display, e))?;
    let n = u64::from_le_bytes(u64buf) as usize;
    reader
        .read_exact(&mut u64buf)
        .map_err(|e| CoreError::io(&display, e))?;
    let f = u64::from_le_bytes(u64buf) as usize;
    let mut data = Vec::with_capacity(n * f);
    let mut f32buf = [0u8; 4];
    for _ in 0..n * f {
        reader
            .read_exact(&mut f32buf)
            .map_err(|e| CoreError::io(&display, e))?;
        data.push(f32::from_le_bytes(f32buf) as f64);
    }
    Tensor::new(n, f, data)
}

/// Reads a label file: one integer per line, N lines.
pub fn read_label_file(path: &Path, num_nodes: usize) -> Result<Vec<usize>> {
    let reader = BufReader::new(open(path)?);
    let display = path.display().to_string();
    let mut labels = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CoreError::io(&display, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        labels.push(trimmed.parse::<usize>().map_err(|e| CoreError::Parse {
            path: display.clone(),
            line: idx + 1,
            reason: format!("bad label: {e}"),
        })?);
    }
    if labels.len() != num_nodes {
        return Err(CoreError::Shape(format!(
            "label file {display} has {} entries for {} nodes",
            labels.len(),
            num_nodes
        )));
    }
    Ok(labels)
}

/// Loads a graph from its component files. The node count is inferred from
/// the feature matrix.
pub fn load_graph(
    edge_path: &Path,
    feature_path: &Path,
    label_path: Option<&Path>,
) -> Result<Graph> {
    let features = read_feature_file(feature_path)?;
    let num_nodes = features.rows();
    let edges = read_edge_file(edge_path, num_nodes)?;
    let labels = label_path
        .map(|p| read_label_file(p, num_nodes))
        .transpose()?;
    Graph::new(num_nodes, edges, features, labels)
}

pub fn write_edge_file(g: &Graph, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(create(path)?);
    let display = path.display().to_string();
    writeln!(w, "# undirected edges: node_a node_b").map_err(|e| CoreError::io(&display, e))?;
    for &(a, b) in g.edges() {
        writeln!(w, "{a} {b}").map_err(|e| CoreError::io(&display, e))?;
    }
    Ok(())
}

pub fn write_feature_file_text(g: &Graph, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(create(path)?);
    let display = path.display().to_string();
    let x = g.features();
    writeln!(w, "{} {}", x.rows(), x.cols()).map_err(|e| CoreError::io(&display, e))?;
    for r in 0..x.rows() {
        let row: Vec<String> = x.row(r).iter().map(|v| format!("{v:.17e}")).collect();
        writeln!(w, "{}", row.join(" ")).map_err(|e| CoreError::io(&display, e))?;
    }
    Ok(())
}

pub fn write_feature_file_binary(g: &Graph, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(create(path)?);
    let display = path.display().to_string();
    let x = g.features();
    w.write_all(&(x.rows() as u64).to_le_bytes())
        .map_err(|e| CoreError::io(&display, e))?;
    w.write_all(&(x.cols() as u64).to_le_bytes())
        .map_err(|e| CoreError::io(&display, e))?;
    for v in x.values() {
        w.write_all(&(*v as f32).to_le_bytes())
            .map_err(|e| CoreError::io(&display, e))?;
    }
    Ok(())
}

pub fn write_label_file(labels: &[usize], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(create(path)?);
    let display = path.display().to_string();
    for l in labels {
        writeln!(w, "{l}").map_err(|e| CoreError::io(&display, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(dir: &tempfile::TempDir, name: &str, contents: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        let mut f = std::fs::File::create(&p).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        p
    }

    #[test]
    fn load_minimal_graph() {
        let dir = tempfile::tempdir().unwrap();
        let edges = write_tmp(&dir, "edges.txt", "0 1\n");
        let feats = write_tmp(&dir, "features.txt", "2 1\n1\n2\n");
        let g = load_graph(&edges, &feats, None).unwrap();
        assert_eq!(g.num_nodes(), 2);
        assert_eq!(g.edges(), &[(0, 1)]);
        assert_eq!(g.features().at(1, 0), 2.0);
    }

    #[test]
    fn reversed_duplicate_edges_collapse() {
        let dir = tempfile::tempdir().unwrap();
        let edges = write_tmp(&dir, "edges.txt", "0 1\n1 0\n# comment\n0 1\n");
        let feats = write_tmp(&dir, "features.txt", "2 1\n1\n2\n");
        let g = load_graph(&edges, &feats, None).unwrap();
        assert_eq!(g.edges(), &[(0, 1)]);
    }

    #[test]
    fn self_loop_line_is_a_parse_error_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let edges = write_tmp(&dir, "edges.txt", "0 1\n0 0\n");
        let feats = write_tmp(&dir, "features.txt", "2 1\n1\n2\n");
        match load_graph(&edges, &feats, None) {
            Err(CoreError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_bounds_endpoint_is_a_bounds_error() {
        let dir = tempfile::tempdir().unwrap();
        let edges = write_tmp(&dir, "edges.txt", "0 5\n");
        let feats = write_tmp(&dir, "features.txt", "2 1\n1\n2\n");
        assert!(matches!(
            load_graph(&edges, &feats, None),
            Err(CoreError::Bounds { id: 5, num_nodes: 2 })
        ));
    }

    #[test]
    fn label_count_mismatch_is_a_shape_error() {
        let dir = tempfile::tempdir().unwrap();
        let edges = write_tmp(&dir, "edges.txt", "0 1\n");
        let feats = write_tmp(&dir, "features.txt", "2 1\n1\n2\n");
        let labels = write_tmp(&dir, "labels.txt", "0\n1\n0\n");
        assert!(matches!(
            load_graph(&edges, &feats, Some(&labels)),
            Err(CoreError::Shape(_))
        ));
    }

    #[test]
    fn binary_feature_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let g = Graph::new(
            2,
            vec![(0, 1)],
            Tensor::new(2, 3, vec![1.0, -0.5, 2.25, 0.0, 7.5, -3.0]).unwrap(),
            None,
        )
        .unwrap();
        let path = dir.path().join("features.bin");
        write_feature_file_binary(&g, &path).unwrap();
        let back = read_feature_file(&path).unwrap();
        // Values survive the f32 narrowing exactly because they are dyadic.
        assert!(back.max_abs_diff(g.features()) == 0.0);
    }

    #[test]
    fn text_feature_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let g = Graph::new(
            2,
            vec![],
            Tensor::new(2, 2, vec![0.1, -1.0 / 3.0, std::f64::consts::PI, 1e-300]).unwrap(),
            None,
        )
        .unwrap();
        let path = dir.path().join("features.txt");
        write_feature_file_text(&g, &path).unwrap();
        let back = read_feature_file(&path).unwrap();
        assert!(back.bitwise_eq(g.features()));
    }

    #[test]
    fn normalize_single_isolated_node() {
        let g = Graph::new(1, vec![], Tensor::zeros(1, 1), None).unwrap();
        let adj = normalize_adjacency(&g);
        assert_eq!(adj.nnz(), 1);
        assert_eq!(adj.entry(0, 0), 1.0);
    }

    #[test]
    fn normalize_two_node_clique() {
        // A+I is all ones, both degrees 2, so every entry is 1/2.
        let g = Graph::new(2, vec![(0, 1)], Tensor::zeros(2, 1), None).unwrap();
        let adj = normalize_adjacency(&g);
        for i in 0..2 {
            for j in 0..2 {
                assert!((adj.entry(i, j) - 0.5).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn normalize_path_graph_off_diagonal() {
        let g = Graph::new(3, vec![(0, 1), (1, 2)], Tensor::zeros(3, 1), None).unwrap();
        let adj = normalize_adjacency(&g);
        // Degrees in A+I: (2, 3, 2); entry (0,1) = 1/sqrt(2*3).
        assert!((adj.entry(0, 1) - 1.0 / 6.0f64.sqrt()).abs() < 1e-15);
        assert_eq!(adj.entry(0, 2), 0.0);
    }

    #[test]
    fn normalized_adjacency_matches_closed_form_on_random_graphs() {
        for seed in 0..5u64 {
            let spec = SbmSpec {
                block_sizes: vec![17, 23],
                p_in: 0.3,
                p_out: 0.08,
                feature_dim: 3,
                feature_shift: 0.5,
                seed,
            };
            let g = generate_sbm(&spec).unwrap();
            let adj = normalize_adjacency(&g);
            assert!(adj.symmetry_residual() < 1e-12);
            let n = g.num_nodes();
            let mut degree = vec![1.0f64; n];
            for &(a, b) in g.edges() {
                degree[a as usize] += 1.0;
                degree[b as usize] += 1.0;
            }
            for i in 0..n {
                // Closed form on the pattern of A+I, exact zero elsewhere.
                let mut expected_cols: Vec<usize> = vec![i];
                for &(a, b) in g.edges() {
                    if a as usize == i {
                        expected_cols.push(b as usize);
                    } else if b as usize == i {
                        expected_cols.push(a as usize);
                    }
                }
                expected_cols.sort_unstable();
                let got: Vec<(usize, f64)> = adj.row(i).collect();
                assert_eq!(got.len(), expected_cols.len());
                for (col, val) in got {
                    assert!(expected_cols.contains(&col));
                    let want = 1.0 / (degree[i] * degree[col]).sqrt();
                    assert_eq!(val, want);
                }
                // Row sums against an independently computed sum.
                let independent: f64 = expected_cols
                    .iter()
                    .map(|&j| 1.0 / (degree[i] * degree[j]).sqrt())
                    .sum();
                let ones = Tensor::filled(n, 1, 1.0);
                let row_sums = adj.mul_dense(&ones).unwrap();
                assert!((row_sums.at(i, 0) - independent).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sbm_degenerate_probabilities() {
        let spec = SbmSpec {
            block_sizes: vec![2, 2],
            p_in: 1.0,
            p_out: 0.0,
            feature_dim: 2,
            feature_shift: 1.0,
            seed: 0,
        };
        let g = generate_sbm(&spec).unwrap();
        assert_eq!(g.labels().unwrap(), &[0, 0, 1, 1]);
        assert_eq!(g.edges(), &[(0, 1), (2, 3)]);

        let empty = generate_sbm(&SbmSpec {
            p_in: 0.0,
            ..spec.clone()
        })
        .unwrap();
        assert_eq!(empty.num_edges(), 0);
    }

    #[test]
    fn sbm_rejects_empty_block_list() {
        let spec = SbmSpec {
            block_sizes: vec![],
            p_in: 0.5,
            p_out: 0.1,
            feature_dim: 2,
            feature_shift: 0.0,
            seed: 0,
        };
        assert!(matches!(generate_sbm(&spec), Err(CoreError::Argument(_))));
    }

    #[test]
    fn sbm_is_deterministic_under_seed() {
        let spec = SbmSpec {
            block_sizes: vec![20, 30],
            p_in: 0.2,
            p_out: 0.05,
            feature_dim: 4,
            feature_shift: 1.5,
            seed: 42,
        };
        let a = generate_sbm(&spec).unwrap();
        let b = generate_sbm(&spec).unwrap();
        assert_eq!(a.edges(), b.edges());
        assert!(a.features().bitwise_eq(b.features()));
        assert_eq!(a.labels(), b.labels());
    }

    #[test]
    fn sbm_intra_edge_count_within_binomial_bounds() {
        let spec = SbmSpec {
            block_sizes: vec![150, 150],
            p_in: 0.1,
            p_out: 0.01,
            feature_dim: 2,
            feature_shift: 0.0,
            seed: 7,
        };
        let g = generate_sbm(&spec).unwrap();
        let labels = g.labels().unwrap();
        let intra = g
            .edges()
            .iter()
            .filter(|&&(a, b)| labels[a as usize] == labels[b as usize])
            .count() as f64;
        // 2 blocks of C(150,2) candidate pairs each.
        let trials = 2.0 * (150.0 * 149.0 / 2.0);
        let mean = spec.p_in * trials;
        let sd = (trials * spec.p_in * (1.0 - spec.p_in)).sqrt();
        assert!(
            (intra - mean).abs() <= 4.0 * sd,
            "intra={intra} mean={mean} sd={sd}"
        );
    }
}
