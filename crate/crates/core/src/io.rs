//! On-disk formats: feature files (binary and CSV), taxonomy and partition
//! text files, score and ROC CSVs.
//!
//! Binary feature file, all integers little-endian:
//!
//! ```text
//! "OODF" | version: u32 = 1 | N: u64 | D: u32 | C: u32
//! N × ( label: u32 | D × f32 )
//! ```

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;

use crate::data::{FeatureDataset, GroupPartition, LabelSpace};
use crate::error::{Error, Result};
use crate::metrics::RocCurve;
use crate::scoring::ScoreVector;

pub const FEATURE_MAGIC: &[u8; 4] = b"OODF";
pub const FEATURE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureFormat {
    Binary,
    Csv,
}

impl FeatureFormat {
    /// `.csv` is CSV, anything else binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => FeatureFormat::Csv,
            _ => FeatureFormat::Binary,
        }
    }
}

impl FromStr for FeatureFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" | "bin" => Ok(FeatureFormat::Binary),
            "csv" => Ok(FeatureFormat::Csv),
            _ => Err(Error::Config(format!("unknown feature format {s:?}"))),
        }
    }
}

pub fn load_features(path: impl AsRef<Path>, format: FeatureFormat) -> Result<FeatureDataset> {
    let path = path.as_ref();
    match format {
        FeatureFormat::Binary => load_binary(path),
        FeatureFormat::Csv => load_csv(path),
    }
}

pub fn save_features(path: impl AsRef<Path>, dataset: &FeatureDataset, format: FeatureFormat) -> Result<()> {
    match format {
        FeatureFormat::Binary => save_binary(path.as_ref(), dataset),
        FeatureFormat::Csv => save_csv(path.as_ref(), dataset),
    }
}

fn read_array<const N: usize>(r: &mut impl Read, path: &Path, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::load(path, format!("truncated {what}: {e}")))?;
    Ok(buf)
}

fn load_binary(path: &Path) -> Result<FeatureDataset> {
    let mut r = BufReader::new(File::open(path)?);
    let magic: [u8; 4] = read_array(&mut r, path, "header")?;
    if &magic != FEATURE_MAGIC {
        return Err(Error::load(path, "bad magic, expected OODF"));
    }
    let version = u32::from_le_bytes(read_array(&mut r, path, "header")?);
    if version != FEATURE_VERSION {
        return Err(Error::load(path, format!("unsupported version {version}")));
    }
    let n = u64::from_le_bytes(read_array(&mut r, path, "header")?) as usize;
    let d = u32::from_le_bytes(read_array(&mut r, path, "header")?) as usize;
    let c = u32::from_le_bytes(read_array(&mut r, path, "header")?) as usize;
    if n == 0 || d == 0 {
        return Err(Error::load(path, format!("malformed header: N={n}, D={d}")));
    }
    let label_space = LabelSpace::indexed(c).map_err(|e| Error::load(path, format!("malformed header: {e}")))?;

    let mut features = Array2::<f64>::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    let mut record = vec![0u8; 4 + 4 * d];
    for row in 0..n {
        r.read_exact(&mut record)
            .map_err(|_| Error::load(path, format!("row {row}: truncated record")))?;
        let label = u32::from_le_bytes(record[..4].try_into().unwrap()) as usize;
        if label >= c {
            return Err(Error::load(path, format!("row {row}: label {label} out of range for {c} classes")));
        }
        labels.push(label);
        for (j, chunk) in record[4..].chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::load(path, format!("row {row}: non-finite value in column {j}")));
            }
            features[[row, j]] = v as f64;
        }
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::load(path, "trailing bytes after last record"));
    }
    FeatureDataset::new(features, labels, label_space).map_err(|e| Error::load(path, e.to_string()))
}

fn save_binary(path: &Path, dataset: &FeatureDataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&FEATURE_VERSION.to_le_bytes())?;
    w.write_all(&(dataset.len() as u64).to_le_bytes())?;
    w.write_all(&(dataset.dim() as u32).to_le_bytes())?;
    w.write_all(&(dataset.num_classes() as u32).to_le_bytes())?;
    for (row, &label) in dataset.features().rows().into_iter().zip(dataset.labels()) {
        w.write_all(&(label as u32).to_le_bytes())?;
        for &v in row {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// CSV files carry no class count; it is taken as `max(label) + 1`, at least 2.
fn load_csv(path: &Path) -> Result<FeatureDataset> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::load(path, "empty file"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 2 || cols[0] != "label" || cols[1..].iter().enumerate().any(|(j, c)| *c != format!("f{j}")) {
        return Err(Error::load(path, "malformed header, expected label,f0,f1,..."));
    }
    let d = cols.len() - 1;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (row, (_, line)) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != d + 1 {
            return Err(Error::load(path, format!("row {row}: expected {} fields, found {}", d + 1, fields.len())));
        }
        let label: usize = fields[0]
            .parse()
            .map_err(|_| Error::load(path, format!("row {row}: bad label {:?}", fields[0])))?;
        labels.push(label);
        for f in &fields[1..] {
            let v: f64 = f
                .parse()
                .map_err(|_| Error::load(path, format!("row {row}: bad value {f:?}")))?;
            if !v.is_finite() {
                return Err(Error::load(path, format!("row {row}: non-finite value {f:?}")));
            }
            values.push(v);
        }
    }
    if labels.is_empty() {
        return Err(Error::load(path, "no data rows"));
    }
    let c = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    let features = Array2::from_shape_vec((labels.len(), d), values).expect("row lengths checked");
    FeatureDataset::new(features, labels, LabelSpace::indexed(c)?).map_err(|e| Error::load(path, e.to_string()))
}

fn save_csv(path: &Path, dataset: &FeatureDataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "label")?;
    for j in 0..dataset.dim() {
        write!(w, ",f{j}")?;
    }
    writeln!(w)?;
    for (row, &label) in dataset.features().rows().into_iter().zip(dataset.labels()) {
        write!(w, "{label}")?;
        for v in row {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `class_name<TAB>group_name` lines in file order.
pub fn read_taxonomy(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (class, group) = line
            .split_once('\t')
            .ok_or_else(|| Error::load(path, format!("line {}: expected class<TAB>group", lineno + 1)))?;
        if class.is_empty() || group.is_empty() || group.contains('\t') {
            return Err(Error::load(path, format!("line {}: expected class<TAB>group", lineno + 1)));
        }
        entries.push((class.to_string(), group.to_string()));
    }
    if entries.is_empty() {
        return Err(Error::load(path, "empty taxonomy"));
    }
    Ok(entries)
}

/// Writes `K=<k>` then one `group<TAB>class_name` line per class, in class
/// index order.
pub fn write_partition(path: impl AsRef<Path>, partition: &GroupPartition, label_space: &LabelSpace) -> Result<()> {
    fs::write(path, partition_to_string(partition, label_space))?;
    Ok(())
}

pub fn partition_to_string(partition: &GroupPartition, label_space: &LabelSpace) -> String {
    let mut out = format!("K={}\n", partition.num_groups());
    for c in 0..partition.num_classes() {
        out.push_str(&format!("{}\t{}\n", partition.group_of(c), label_space.name(c)));
    }
    out
}

/// Reads a partition file. Class names are resolved against `label_space`;
/// per-group class order follows file order. The file does not carry group
/// names, so groups come back as `group_<k>`.
pub fn read_partition(path: impl AsRef<Path>, label_space: &LabelSpace) -> Result<GroupPartition> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::load(path, "empty partition file"))?;
    let k: usize = header
        .trim()
        .strip_prefix("K=")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::load(path, "malformed header, expected K=<k>"))?;
    let mut groups = vec![Vec::new(); k];
    for line in lines {
        let (g, name) = line
            .split_once('\t')
            .ok_or_else(|| Error::load(path, format!("malformed line {line:?}")))?;
        let g: usize = g.parse().map_err(|_| Error::load(path, format!("bad group index {g:?}")))?;
        if g >= k {
            return Err(Error::load(path, format!("group index {g} out of range for K={k}")));
        }
        let c = label_space
            .index_of(name)
            .ok_or_else(|| Error::load(path, format!("unknown class {name:?}")))?;
        groups[g].push(c);
    }
    let names = (0..k).map(|i| format!("group_{i}")).collect();
    GroupPartition::new(names, groups, label_space.num_classes()).map_err(|e| Error::load(path, e.to_string()))
}

/// `sample_index,method,score`
pub fn write_scores(path: impl AsRef<Path>, scores: &ScoreVector) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "sample_index,method,score")?;
    for (i, v) in scores.values().iter().enumerate() {
        writeln!(w, "{i},{},{v}", scores.method())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<ScoreVector> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    if lines.next().map(str::trim) != Some("sample_index,method,score") {
        return Err(Error::load(path, "malformed header, expected sample_index,method,score"));
    }
    let mut method = None;
    let mut values = Vec::new();
    for (row, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 3 {
            return Err(Error::load(path, format!("row {row}: expected 3 fields")));
        }
        let m: crate::scoring::Method = f[1].parse().map_err(|e: Error| Error::load(path, format!("row {row}: {e}")))?;
        match method {
            None => method = Some(m),
            Some(prev) if prev != m => {
                return Err(Error::load(path, format!("row {row}: mixed methods {prev} and {m}")));
            }
            _ => {}
        }
        let v: f64 = f[2].parse().map_err(|_| Error::load(path, format!("row {row}: bad score {:?}", f[2])))?;
        values.push(v);
    }
    let method = method.ok_or_else(|| Error::load(path, "no scores"))?;
    ScoreVector::new(method, values).map_err(|e| Error::load(path, e.to_string()))
}

/// `threshold,tpr,fpr`
pub fn write_roc(path: impl AsRef<Path>, curve: &RocCurve) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "threshold,tpr,fpr")?;
    for p in curve.points() {
        writeln!(w, "{},{},{}", p.threshold, p.tpr, p.fpr)?;
    }
    w.flush()?;
    Ok(())
}
