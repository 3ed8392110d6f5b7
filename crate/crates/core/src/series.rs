//! Snapshot sequences of undirected simple graphs and their on-disk formats.
//!
//! Two text formats are supported:
//!
//! * `matrix-text`: a header line `p=<int> n=<int>` followed by `n` blocks of
//!   `p` rows of `p` space-separated 0/1 tokens, blocks separated by a blank
//!   line. Only the upper triangle is read; it is mirrored and the diagonal is
//!   forced to zero.
//! * `edge-csv`: a comment line `# p=<int> n=<int>`, a header `t,i,j` and one
//!   row per present edge with `i < j`. Node and time indices are 1-based.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ArnetError, Result};

/// Unordered node pairs `(i, j)` with `i < j`, enumerated row by row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pairs {
    p: usize,
}

impl Pairs {
    pub fn new(p: usize) -> Self {
        Pairs { p }
    }

    pub fn count(&self) -> usize {
        self.p * (self.p - 1) / 2
    }

    /// Index of the pair `{i, j}`; argument order does not matter.
    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        debug_assert!(i != j && j < self.p);
        i * (2 * self.p - i - 1) / 2 + (j - i - 1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let p = self.p;
        (0..p).flat_map(move |i| (i + 1..p).map(move |j| (i, j)))
    }

    pub fn nodes(&self) -> Vec<(usize, usize)> {
        self.iter().collect()
    }
}

/// A single `p x p` symmetric binary adjacency matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Snapshot {
    p: usize,
    data: Vec<u8>,
}

impl Snapshot {
    pub fn empty(p: usize) -> Self {
        Snapshot {
            p,
            data: vec![0; p * p],
        }
    }

    pub fn complete(p: usize) -> Self {
        let mut s = Snapshot::empty(p);
        for i in 0..p {
            for j in i + 1..p {
                s.set(i, j, true);
            }
        }
        s
    }

    /// Builds a snapshot from a dense row-major matrix, mirroring the upper
    /// triangle and zeroing the diagonal.
    pub fn from_upper(p: usize, rows: &[Vec<u8>]) -> Result<Self> {
        if rows.len() != p || rows.iter().any(|r| r.len() != p) {
            return Err(ArnetError::InvalidArgument(format!(
                "expected a {p}x{p} matrix"
            )));
        }
        let mut s = Snapshot::empty(p);
        for i in 0..p {
            for j in i + 1..p {
                match rows[i][j] {
                    0 => {}
                    1 => s.set(i, j, true),
                    v => {
                        return Err(ArnetError::InvalidArgument(format!(
                            "entry ({i},{j}) = {v} is not binary"
                        )))
                    }
                }
            }
        }
        Ok(s)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.p + j] != 0
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize) -> u8 {
        self.data[i * self.p + j]
    }

    /// Sets edge `{i, j}` in both triangles. Self-loops are ignored.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, present: bool) {
        if i == j {
            return;
        }
        let v = present as u8;
        self.data[i * self.p + j] = v;
        self.data[j * self.p + i] = v;
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.data[i * self.p..(i + 1) * self.p]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.row(i).iter().map(|&v| v as usize).sum()
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.p).map(|i| self.degree(i)).collect()
    }

    pub fn edge_count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum::<usize>() / 2
    }

    /// Number of common neighbours of `i` and `j`.
    pub fn common_neighbours(&self, i: usize, j: usize) -> usize {
        self.row(i)
            .iter()
            .zip(self.row(j))
            .map(|(&a, &b)| (a & b) as usize)
            .sum()
    }

    /// Full common-neighbour count matrix `A^2` (diagonal holds degrees).
    pub fn common_neighbour_matrix(&self) -> Vec<u32> {
        let p = self.p;
        let mut out = vec![0u32; p * p];
        for k in 0..p {
            let row = self.row(k);
            let nbrs: Vec<usize> = (0..p).filter(|&i| row[i] != 0).collect();
            for (a, &i) in nbrs.iter().enumerate() {
                for &j in &nbrs[a..] {
                    out[i * p + j] += 1;
                    if i != j {
                        out[j * p + i] += 1;
                    }
                }
            }
        }
        out
    }

    fn is_valid(&self) -> bool {
        let p = self.p;
        (0..p).all(|i| {
            self.data[i * p + i] == 0
                && (0..p).all(|j| {
                    let v = self.data[i * p + j];
                    v <= 1 && v == self.data[j * p + i]
                })
        })
    }
}

/// Supported serialization formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeriesFormat {
    MatrixText,
    EdgeCsv,
}

impl SeriesFormat {
    /// `.csv` files are edge lists, anything else is matrix text.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => SeriesFormat::EdgeCsv,
            _ => SeriesFormat::MatrixText,
        }
    }
}

impl FromStr for SeriesFormat {
    type Err = ArnetError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "matrix-text" | "matrix_text" | "matrix" => Ok(SeriesFormat::MatrixText),
            "edge-csv" | "edge_csv" | "csv" => Ok(SeriesFormat::EdgeCsv),
            other => Err(ArnetError::InvalidArgument(format!(
                "unknown series format `{other}` (expected matrix-text or edge-csv)"
            ))),
        }
    }
}

/// Ordered sequence of `n` adjacency snapshots on `p` nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapshotSeries {
    p: usize,
    snapshots: Vec<Snapshot>,
}

impl SnapshotSeries {
    pub fn new(snapshots: Vec<Snapshot>) -> Result<Self> {
        let Some(first) = snapshots.first() else {
            return Err(ArnetError::InvalidArgument(
                "a series needs at least one snapshot".into(),
            ));
        };
        let p = first.p();
        if p < 3 {
            return Err(ArnetError::InvalidArgument(format!(
                "a series needs at least 3 nodes, got {p}"
            )));
        }
        for (t, s) in snapshots.iter().enumerate() {
            if s.p() != p {
                return Err(ArnetError::InvalidArgument(format!(
                    "snapshot {} has {} nodes, expected {p}",
                    t + 1,
                    s.p()
                )));
            }
            if !s.is_valid() {
                return Err(ArnetError::InvalidArgument(format!(
                    "snapshot {} is not a symmetric binary matrix with zero diagonal",
                    t + 1
                )));
            }
        }
        Ok(SnapshotSeries { p, snapshots })
    }

    pub fn empty(p: usize, n: usize) -> Result<Self> {
        SnapshotSeries::new(vec![Snapshot::empty(p); n])
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n(&self) -> usize {
        self.snapshots.len()
    }

    /// Snapshot at 0-based time `t`.
    pub fn get(&self, t: usize) -> &Snapshot {
        &self.snapshots[t]
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn pairs(&self) -> Pairs {
        Pairs::new(self.p)
    }

    /// Sub-series of snapshots `start..end` (0-based, end exclusive).
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n() {
            return Err(ArnetError::InvalidArgument(format!(
                "invalid slice {start}..{end} of a series with {} snapshots",
                self.n()
            )));
        }
        SnapshotSeries::new(self.snapshots[start..end].to_vec())
    }

    pub fn into_snapshots(self) -> Vec<Snapshot> {
        self.snapshots
    }

    pub fn load(path: impl AsRef<Path>, format: SeriesFormat) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| ArnetError::io(path, e))?;
        match format {
            SeriesFormat::MatrixText => parse_matrix_text(&text, path),
            SeriesFormat::EdgeCsv => parse_edge_csv(&text, path),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>, format: SeriesFormat) -> Result<()> {
        let path = path.as_ref();
        let text = match format {
            SeriesFormat::MatrixText => self.to_matrix_text(),
            SeriesFormat::EdgeCsv => self.to_edge_csv(),
        };
        fs::write(path, text).map_err(|e| ArnetError::io(path, e))
    }

    pub fn to_matrix_text(&self) -> String {
        let p = self.p;
        let mut out = String::with_capacity(self.n() * p * (2 * p + 1) + 32);
        let _ = writeln!(out, "p={} n={}", p, self.n());
        for (t, s) in self.snapshots.iter().enumerate() {
            if t > 0 {
                out.push('\n');
            }
            for i in 0..p {
                for j in 0..p {
                    if j > 0 {
                        out.push(' ');
                    }
                    out.push(if s.get(i, j) { '1' } else { '0' });
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn to_edge_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# p={} n={}", self.p, self.n());
        out.push_str("t,i,j\n");
        for (t, s) in self.snapshots.iter().enumerate() {
            for (i, j) in self.pairs().iter() {
                if s.get(i, j) {
                    let _ = writeln!(out, "{},{},{}", t + 1, i + 1, j + 1);
                }
            }
        }
        out
    }
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let mut p = None;
    let mut n = None;
    for tok in line.split_whitespace() {
        if let Some(v) = tok.strip_prefix("p=") {
            p = v.parse().ok();
        } else if let Some(v) = tok.strip_prefix("n=") {
            n = v.parse().ok();
        } else {
            return None;
        }
    }
    Some((p?, n?))
}

fn parse_matrix_text(text: &str, path: &Path) -> Result<SnapshotSeries> {
    let parse_err = |line: usize, msg: String| ArnetError::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().map(|(k, l)| (k + 1, l.trim()));
    let (hline, header) = lines
        .by_ref()
        .find(|(_, l)| !l.is_empty())
        .ok_or_else(|| parse_err(1, "missing `p=<int> n=<int>` header".into()))?;
    let (p, n) = parse_header(header)
        .ok_or_else(|| parse_err(hline, format!("bad header `{header}`")))?;
    if p < 3 || n < 1 {
        return Err(ArnetError::Dimension {
            path: path.to_path_buf(),
            line: hline,
            msg: format!("need p >= 3 and n >= 1, got p={p} n={n}"),
        });
    }

    let mut snapshots = Vec::with_capacity(n);
    let mut rows: Vec<Vec<u8>> = Vec::with_capacity(p);
    let mut last_line = hline;
    for (lineno, line) in lines {
        last_line = lineno;
        if line.is_empty() {
            if !rows.is_empty() {
                return Err(ArnetError::Dimension {
                    path: path.to_path_buf(),
                    line: lineno,
                    msg: format!("block {} has {} rows, expected {p}", snapshots.len() + 1, rows.len()),
                });
            }
            continue;
        }
        if snapshots.len() == n {
            return Err(ArnetError::Dimension {
                path: path.to_path_buf(),
                line: lineno,
                msg: format!("more than n={n} blocks"),
            });
        }
        let mut row = Vec::with_capacity(p);
        for tok in line.split_whitespace() {
            let v = match tok {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(match other.parse::<f64>() {
                        Ok(_) => ArnetError::Value {
                            path: path.to_path_buf(),
                            line: lineno,
                            msg: format!("entry `{other}` is not 0 or 1"),
                        },
                        Err(_) => parse_err(lineno, format!("malformed token `{other}`")),
                    })
                }
            };
            row.push(v);
        }
        if row.len() != p {
            return Err(ArnetError::Dimension {
                path: path.to_path_buf(),
                line: lineno,
                msg: format!("row has {} entries, expected p={p}", row.len()),
            });
        }
        rows.push(row);
        if rows.len() == p {
            let mut s = Snapshot::empty(p);
            for i in 0..p {
                for j in i + 1..p {
                    s.set(i, j, rows[i][j] == 1);
                }
            }
            snapshots.push(s);
            rows.clear();
        }
    }
    if !rows.is_empty() || snapshots.len() != n {
        return Err(ArnetError::Dimension {
            path: path.to_path_buf(),
            line: last_line,
            msg: format!("found {} complete blocks, expected n={n}", snapshots.len()),
        });
    }
    SnapshotSeries::new(snapshots)
}

fn parse_edge_csv(text: &str, path: &Path) -> Result<SnapshotSeries> {
    let parse_err = |line: usize, msg: String| ArnetError::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let index_err = |line: usize, msg: String| ArnetError::Index {
        path: path.to_path_buf(),
        line,
        msg,
    };

    let mut dims: Option<(usize, usize)> = None;
    let mut seen_header = false;
    let mut snapshots: Vec<Snapshot> = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let lineno = k + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((p, n)) = parse_header(comment.trim()) {
                if dims.is_some() {
                    return Err(parse_err(lineno, "duplicate `# p= n=` line".into()));
                }
                if p < 3 || n < 1 {
                    return Err(ArnetError::Dimension {
                        path: path.to_path_buf(),
                        line: lineno,
                        msg: format!("need p >= 3 and n >= 1, got p={p} n={n}"),
                    });
                }
                dims = Some((p, n));
                snapshots = vec![Snapshot::empty(p); n];
            }
            continue;
        }
        if !seen_header {
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols != ["t", "i", "j"] {
                return Err(parse_err(lineno, format!("expected header `t,i,j`, got `{line}`")));
            }
            seen_header = true;
            continue;
        }
        let (p, n) = dims.ok_or_else(|| {
            parse_err(lineno, "edge rows before the `# p=<int> n=<int>` line".into())
        })?;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(parse_err(lineno, format!("expected 3 fields, got {}", fields.len())));
        }
        let mut vals = [0usize; 3];
        for (v, f) in vals.iter_mut().zip(&fields) {
            *v = f
                .parse()
                .map_err(|_| parse_err(lineno, format!("malformed integer `{f}`")))?;
        }
        let [t, i, j] = vals;
        if t < 1 || t > n {
            return Err(index_err(lineno, format!("time {t} outside [1, {n}]")));
        }
        if i < 1 || i > p || j < 1 || j > p {
            return Err(index_err(lineno, format!("node id outside [1, {p}] in `{line}`")));
        }
        if i == j {
            return Err(index_err(lineno, format!("self-loop ({i},{j})")));
        }
        snapshots[t - 1].set(i - 1, j - 1, true);
    }
    if dims.is_none() {
        return Err(parse_err(1, "missing `# p=<int> n=<int>` line".into()));
    }
    if !seen_header {
        return Err(parse_err(1, "missing `t,i,j` header".into()));
    }
    SnapshotSeries::new(snapshots)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        fs::write(&path, body).unwrap();
        path
    }

    #[test]
    fn pair_index_is_dense() {
        let pairs = Pairs::new(6);
        for (k, (i, j)) in pairs.iter().enumerate() {
            assert_eq!(pairs.index(i, j), k);
            assert_eq!(pairs.index(j, i), k);
        }
        assert_eq!(pairs.count(), 15);
    }

    #[test]
    fn matrix_text_single_edge() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, "s.txt", "p=3 n=1\n0 1 0\n1 0 0\n0 0 0\n");
        let s = SnapshotSeries::load(&path, SeriesFormat::MatrixText).unwrap();
        assert_eq!((s.p(), s.n()), (3, 1));
        assert!(s.get(0).get(0, 1) && s.get(0).get(1, 0));
        assert_eq!(s.get(0).edge_count(), 1);
    }

    #[test]
    fn matrix_text_mirrors_upper_triangle() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, "s.txt", "p=3 n=1\n1 1 0\n0 0 0\n1 0 0\n");
        let s = SnapshotSeries::load(&path, SeriesFormat::MatrixText).unwrap();
        let snap = s.get(0);
        assert!(!snap.get(0, 0));
        assert!(snap.get(1, 0));
        assert!(!snap.get(0, 2));
    }

    #[test]
    fn matrix_text_errors() {
        let dir = tempfile::tempdir().unwrap();
        let bad_row = write(&dir, "a.txt", "p=3 n=1\n0 1\n1 0 0\n0 0 0\n");
        assert!(matches!(
            SnapshotSeries::load(&bad_row, SeriesFormat::MatrixText),
            Err(ArnetError::Dimension { line: 2, .. })
        ));
        let bad_val = write(&dir, "b.txt", "p=3 n=1\n0 2 0\n1 0 0\n0 0 0\n");
        assert!(matches!(
            SnapshotSeries::load(&bad_val, SeriesFormat::MatrixText),
            Err(ArnetError::Value { line: 2, .. })
        ));
        let bad_tok = write(&dir, "c.txt", "p=3 n=1\n0 x 0\n1 0 0\n0 0 0\n");
        assert!(matches!(
            SnapshotSeries::load(&bad_tok, SeriesFormat::MatrixText),
            Err(ArnetError::Parse { .. })
        ));
        let short = write(&dir, "d.txt", "p=3 n=2\n0 1 0\n1 0 0\n0 0 0\n");
        assert!(matches!(
            SnapshotSeries::load(&short, SeriesFormat::MatrixText),
            Err(ArnetError::Dimension { .. })
        ));
    }

    #[test]
    fn edge_csv_basic() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, "s.csv", "# p=3 n=2\nt,i,j\n1,1,2\n");
        let s = SnapshotSeries::load(&path, SeriesFormat::EdgeCsv).unwrap();
        assert_eq!((s.p(), s.n()), (3, 2));
        assert!(s.get(0).get(0, 1));
        assert_eq!(s.get(1).edge_count(), 0);
    }

    #[test]
    fn edge_csv_errors() {
        let dir = tempfile::tempdir().unwrap();
        let selfloop = write(&dir, "a.csv", "# p=3 n=2\nt,i,j\n1,2,2\n");
        assert!(matches!(
            SnapshotSeries::load(&selfloop, SeriesFormat::EdgeCsv),
            Err(ArnetError::Index { line: 3, .. })
        ));
        let node = write(&dir, "b.csv", "# p=3 n=2\nt,i,j\n1,1,4\n");
        assert!(matches!(
            SnapshotSeries::load(&node, SeriesFormat::EdgeCsv),
            Err(ArnetError::Index { .. })
        ));
        let time = write(&dir, "c.csv", "# p=3 n=2\nt,i,j\n3,1,2\n");
        assert!(matches!(
            SnapshotSeries::load(&time, SeriesFormat::EdgeCsv),
            Err(ArnetError::Index { .. })
        ));
        let malformed = write(&dir, "d.csv", "# p=3 n=2\nt,i,j\n1,a,2\n");
        assert!(matches!(
            SnapshotSeries::load(&malformed, SeriesFormat::EdgeCsv),
            Err(ArnetError::Parse { .. })
        ));
        let no_dims = write(&dir, "e.csv", "t,i,j\n1,1,2\n");
        assert!(matches!(
            SnapshotSeries::load(&no_dims, SeriesFormat::EdgeCsv),
            Err(ArnetError::Parse { .. })
        ));
    }

    #[test]
    fn round_trips_trivial_series() {
        let dir = tempfile::tempdir().unwrap();
        let empty = SnapshotSeries::empty(3, 2).unwrap();
        let complete = SnapshotSeries::new(vec![Snapshot::complete(4); 3]).unwrap();
        for (k, s) in [empty, complete].iter().enumerate() {
            for fmt in [SeriesFormat::MatrixText, SeriesFormat::EdgeCsv] {
                let path = dir.path().join(format!("s{k}.dat"));
                s.save(&path, fmt).unwrap();
                assert_eq!(&SnapshotSeries::load(&path, fmt).unwrap(), s);
            }
        }
    }

    #[test]
    fn common_neighbour_matrix_matches_direct_count() {
        let mut s = Snapshot::empty(5);
        for (i, j) in [(0, 1), (1, 2), (0, 2), (2, 3), (3, 4), (1, 4)] {
            s.set(i, j, true);
        }
        let c = s.common_neighbour_matrix();
        for i in 0..5 {
            for j in 0..5 {
                let expected = if i == j { s.degree(i) } else { s.common_neighbours(i, j) };
                assert_eq!(c[i * 5 + j] as usize, expected);
            }
        }
    }
}
