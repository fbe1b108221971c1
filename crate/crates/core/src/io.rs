//! Text formats for datasets.
//!
//! * Structure file: first line `N M`, then `M` lines of whitespace-separated
//!   0-based node ids.
//! * Feature file: first line `ROWS COLS`, then `ROWS` lines of `COLS` reals.
//!   Values are written in shortest round-trip form, so save/load is
//!   bit-exact.
//! * Label file: one non-negative integer per line.
//! * Manifest: `key=value` lines with keys `structure`, `node_features`,
//!   `edge_features` (optional), `labels` (optional), `n`, `m`, `dv`.
//!   Relative paths are resolved against the manifest's directory.
//!
//! Blank lines and lines starting with `#` are ignored everywhere.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::hypergraph::Hypergraph;
use crate::nn::Tensor;

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub structure: PathBuf,
    pub node_features: PathBuf,
    pub edge_features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub n: usize,
    pub m: usize,
    pub dv: usize,
}

impl DatasetManifest {
    /// Reads a manifest, resolving relative paths against its directory.
    pub fn read(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let mut kv = BTreeMap::new();
        for (line, raw) in content_lines(&text) {
            let (k, v) = raw
                .split_once('=')
                .ok_or_else(|| Error::parse(path, line, "expected key=value"))?;
            let k = k.trim();
            if ![
                "structure",
                "node_features",
                "edge_features",
                "labels",
                "n",
                "m",
                "dv",
            ]
            .contains(&k)
            {
                return Err(Error::parse(path, line, format!("unknown key `{k}`")));
            }
            kv.insert(k.to_string(), (line, v.trim().to_string()));
        }
        let file = |k: &str| kv.get(k).map(|(_, v)| base.join(v));
        let count = |k: &str| -> Result<usize> {
            let (line, v) = kv
                .get(k)
                .ok_or_else(|| Error::parse(path, 0, format!("missing key `{k}`")))?;
            v.parse()
                .map_err(|_| Error::parse(path, *line, format!("`{k}` is not a count: {v}")))
        };
        Ok(DatasetManifest {
            structure: file("structure")
                .ok_or_else(|| Error::parse(path, 0, "missing key `structure`"))?,
            node_features: file("node_features")
                .ok_or_else(|| Error::parse(path, 0, "missing key `node_features`"))?,
            edge_features: file("edge_features"),
            labels: file("labels"),
            n: count("n")?,
            m: count("m")?,
            dv: count("dv")?,
        })
    }

    /// Writes the manifest with paths relative to `dir` when possible.
    pub fn write(&self, path: &Path) -> Result<()> {
        let dir = path.parent().unwrap_or(Path::new(""));
        let rel = |p: &Path| p.strip_prefix(dir).unwrap_or(p).display().to_string();
        let mut s = String::new();
        writeln!(s, "structure={}", rel(&self.structure)).unwrap();
        writeln!(s, "node_features={}", rel(&self.node_features)).unwrap();
        if let Some(p) = &self.edge_features {
            writeln!(s, "edge_features={}", rel(p)).unwrap();
        }
        if let Some(p) = &self.labels {
            writeln!(s, "labels={}", rel(p)).unwrap();
        }
        writeln!(s, "n={}\nm={}\ndv={}", self.n, self.m, self.dv).unwrap();
        write_text(path, &s)
    }
}

pub fn load_dataset(manifest: &DatasetManifest) -> Result<Hypergraph> {
    let (n, edges) = read_structure(&manifest.structure)?;
    if n != manifest.n || edges.len() != manifest.m {
        return Err(Error::CountMismatch {
            path: manifest.structure.clone(),
            msg: format!(
                "manifest declares N={} M={}, file has N={} M={}",
                manifest.n,
                manifest.m,
                n,
                edges.len()
            ),
        });
    }
    let x = read_features(&manifest.node_features)?;
    if x.rows() != manifest.n || x.cols() != manifest.dv {
        return Err(Error::CountMismatch {
            path: manifest.node_features.clone(),
            msg: format!(
                "manifest declares {}×{}, file has {}×{}",
                manifest.n,
                manifest.dv,
                x.rows(),
                x.cols()
            ),
        });
    }
    let xe = match &manifest.edge_features {
        Some(p) => {
            let t = read_features(p)?;
            if t.rows() != manifest.m {
                return Err(Error::CountMismatch {
                    path: p.clone(),
                    msg: format!("{} rows for {} edges", t.rows(), manifest.m),
                });
            }
            Some(t)
        }
        None => None,
    };
    let y = match &manifest.labels {
        Some(p) => {
            let y = read_labels(p)?;
            if y.len() != manifest.n {
                return Err(Error::CountMismatch {
                    path: p.clone(),
                    msg: format!("{} labels for {} nodes", y.len(), manifest.n),
                });
            }
            Some(y)
        }
        None => None,
    };
    Hypergraph::new(n, edges, x, xe, y)
}

/// Loads the dataset described by `dir/manifest.txt`.
pub fn load_dataset_dir(dir: &Path) -> Result<Hypergraph> {
    load_dataset(&DatasetManifest::read(&dir.join(MANIFEST_FILE))?)
}

/// Writes every component of `h` into `dir` (created if needed) and returns
/// the manifest, which is also written as `dir/manifest.txt`.
pub fn save_dataset(h: &Hypergraph, dir: &Path) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = DatasetManifest {
        structure: dir.join("structure.txt"),
        node_features: dir.join("node_features.txt"),
        edge_features: h.edge_features().map(|_| dir.join("edge_features.txt")),
        labels: h.labels().map(|_| dir.join("labels.txt")),
        n: h.num_nodes(),
        m: h.num_edges(),
        dv: h.node_features().cols(),
    };
    write_structure(&manifest.structure, h)?;
    write_features(&manifest.node_features, h.node_features())?;
    if let (Some(p), Some(t)) = (&manifest.edge_features, h.edge_features()) {
        write_features(p, t)?;
    }
    if let (Some(p), Some(y)) = (&manifest.labels, h.labels()) {
        write_labels(p, y)?;
    }
    manifest.write(&dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

pub fn read_structure(path: &Path) -> Result<(usize, Vec<Vec<usize>>)> {
    let text = read_text(path)?;
    let mut lines = content_lines(&text);
    let (hl, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "missing `N M` header"))?;
    let nums = parse_counts(path, hl, header)?;
    let [n, m] = nums[..] else {
        return Err(Error::parse(path, hl, "header must be `N M`"));
    };
    let mut edges = Vec::with_capacity(m);
    for (line, raw) in lines {
        if edges.len() == m {
            return Err(Error::CountMismatch {
                path: path.to_path_buf(),
                msg: format!("more than the declared {m} edges (line {line})"),
            });
        }
        let mut e = parse_counts(path, line, raw)?;
        if let Some(&v) = e.iter().find(|&&v| v >= n) {
            return Err(Error::parse(
                path,
                line,
                format!("node id {v} out of range for N={n}"),
            ));
        }
        e.sort_unstable();
        let before = e.len();
        e.dedup();
        if e.is_empty() || e.len() != before {
            return Err(Error::parse(
                path,
                line,
                "edge must be non-empty and duplicate-free",
            ));
        }
        edges.push(e);
    }
    if edges.len() != m {
        return Err(Error::CountMismatch {
            path: path.to_path_buf(),
            msg: format!("header declares {m} edges, file has {}", edges.len()),
        });
    }
    Ok((n, edges))
}

pub fn write_structure(path: &Path, h: &Hypergraph) -> Result<()> {
    let mut s = format!("{} {}\n", h.num_nodes(), h.num_edges());
    for e in h.edges() {
        let line: Vec<String> = e.iter().map(usize::to_string).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    write_text(path, &s)
}

pub fn read_features(path: &Path) -> Result<Tensor> {
    let text = read_text(path)?;
    let mut lines = content_lines(&text);
    let (hl, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "missing `ROWS COLS` header"))?;
    let nums = parse_counts(path, hl, header)?;
    let [rows, cols] = nums[..] else {
        return Err(Error::parse(path, hl, "header must be `ROWS COLS`"));
    };
    let mut data = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for (line, raw) in lines {
        seen += 1;
        if seen > rows {
            return Err(Error::CountMismatch {
                path: path.to_path_buf(),
                msg: format!("more than the declared {rows} rows (line {line})"),
            });
        }
        let before = data.len();
        for tok in raw.split_whitespace() {
            data.push(
                tok.parse::<f64>().map_err(|_| {
                    Error::parse(path, line, format!("`{tok}` is not a real number"))
                })?,
            );
        }
        if data.len() - before != cols {
            return Err(Error::parse(
                path,
                line,
                format!("expected {cols} values, found {}", data.len() - before),
            ));
        }
    }
    // A zero-column matrix has rows with nothing on them, which are blank.
    if cols == 0 {
        seen = rows;
    }
    if seen != rows {
        return Err(Error::CountMismatch {
            path: path.to_path_buf(),
            msg: format!("header declares {rows} rows, file has {seen}"),
        });
    }
    Tensor::from_vec(rows, cols, data)
}

pub fn write_features(path: &Path, t: &Tensor) -> Result<()> {
    let mut s = String::with_capacity(t.len() * 20);
    writeln!(s, "{} {}", t.rows(), t.cols()).unwrap();
    for r in 0..t.rows() {
        for (j, v) in t.row(r).iter().enumerate() {
            if j > 0 {
                s.push(' ');
            }
            write!(s, "{v}").unwrap();
        }
        s.push('\n');
    }
    write_text(path, &s)
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = read_text(path)?;
    content_lines(&text)
        .map(|(line, raw)| {
            raw.parse()
                .map_err(|_| Error::parse(path, line, format!("`{raw}` is not a class id")))
        })
        .collect()
}

pub fn write_labels(path: &Path, y: &[usize]) -> Result<()> {
    let mut s = String::with_capacity(y.len() * 3);
    for v in y {
        writeln!(s, "{v}").unwrap();
    }
    write_text(path, &s)
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_text(path: &Path, s: &str) -> Result<()> {
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Non-blank, non-comment lines with 1-based line numbers, trimmed.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_counts(path: &Path, line: usize, raw: &str) -> Result<Vec<usize>> {
    raw.split_whitespace()
        .map(|t| {
            t.parse().map_err(|_| {
                Error::parse(path, line, format!("`{t}` is not a non-negative integer"))
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Hypergraph {
        let x = Tensor::from_rows(&[
            vec![0.1, -0.0],
            vec![1e-300, f64::MAX],
            vec![std::f64::consts::PI, -2.5],
        ])
        .unwrap();
        Hypergraph::new(
            3,
            vec![vec![0, 1], vec![1, 2]],
            x,
            None,
            Some(vec![0, 0, 1]),
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let h = toy().ensure_edge_features();
        let manifest = save_dataset(&h, dir.path()).unwrap();
        let back = load_dataset(&manifest).unwrap();
        assert_eq!(back, h);
        for (a, b) in back
            .node_features()
            .data()
            .iter()
            .zip(h.node_features().data())
        {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(load_dataset_dir(dir.path()).unwrap(), h);
    }

    #[test]
    fn feature_row_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = save_dataset(&toy(), dir.path()).unwrap();
        std::fs::write(&manifest.node_features, "2 2\n1 2\n3 4\n").unwrap();
        assert!(matches!(
            load_dataset(&manifest),
            Err(Error::CountMismatch { .. })
        ));
    }

    #[test]
    fn out_of_range_node_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.txt");
        std::fs::write(&p, "3 1\n0 5\n").unwrap();
        match read_structure(&p) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("out of range"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_lines_report_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.txt");
        std::fs::write(&p, "2 2\n1 2\n3 x\n").unwrap();
        assert!(matches!(
            read_features(&p),
            Err(Error::Parse { line: 3, .. })
        ));
        std::fs::write(&p, "2 2\n1 2\n3\n").unwrap();
        assert!(matches!(
            read_features(&p),
            Err(Error::Parse { line: 3, .. })
        ));
        let l = dir.path().join("l.txt");
        std::fs::write(&l, "0\n-1\n").unwrap();
        assert!(matches!(read_labels(&l), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn manifest_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(MANIFEST_FILE);
        std::fs::write(
            &p,
            "structure=s\nnode_features=x\nn=1\nm=0\ndv=0\ncolour=red\n",
        )
        .unwrap();
        assert!(matches!(
            DatasetManifest::read(&p),
            Err(Error::Parse { line: 6, .. })
        ));
    }
}
