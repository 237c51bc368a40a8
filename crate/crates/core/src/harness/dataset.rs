//! On-disk datasets and text outputs.
//!
//! A dataset directory holds `manifest.txt`, plus `features_<s>.mstn` (a
//! `[n, h, w, b]` tensor file) and `labels_<s>.csv` (`index,label`) for
//! every subject id `s` listed in the manifest.

use std::path::{Path, PathBuf};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::harness::format::{decode_tensor, encode_tensor};
use crate::signal::Recording;
use crate::synth::SubjectData;

pub const MANIFEST: &str = "manifest.txt";

/// Writes `bytes` to a temporary file beside `path`, then renames it into
/// place so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    write_atomic(path, &encode_tensor(t))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    decode_tensor(&read_bytes(path)?)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub subjects: Vec<usize>,
    pub num_classes: usize,
    pub feature_dims: (usize, usize, usize),
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let ids: Vec<String> = self.subjects.iter().map(|s| s.to_string()).collect();
        let (h, w, b) = self.feature_dims;
        format!("subjects = {}\nnum_classes = {}\nfeature_dims = {h},{w},{b}\n", ids.join(","), self.num_classes)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (mut subjects, mut classes, mut dims) = (None, None, None);
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |m: String| Error::Parse { line: i + 1, message: format!("manifest: {m}") };
            let (k, v) =
                line.split_once('=').ok_or_else(|| parse_err(format!("expected `key = value`, got `{line}`")))?;
            let list = |v: &str| -> Result<Vec<usize>> {
                v.split(',').map(|x| x.trim().parse().map_err(|_| parse_err(format!("bad integer `{x}`")))).collect()
            };
            match k.trim() {
                "subjects" => subjects = Some(list(v)?),
                "num_classes" => classes = Some(list(v)?.first().copied().unwrap_or(0)),
                "feature_dims" => match list(v)?.as_slice() {
                    &[h, w, b] => dims = Some((h, w, b)),
                    _ => return Err(parse_err("feature_dims needs three values".into())),
                },
                other => return Err(parse_err(format!("unknown key `{other}`"))),
            }
        }
        let missing = |k: &str| Error::Data(format!("manifest is missing `{k}`"));
        Ok(Manifest {
            subjects: subjects.ok_or_else(|| missing("subjects"))?,
            num_classes: classes.ok_or_else(|| missing("num_classes"))?,
            feature_dims: dims.ok_or_else(|| missing("feature_dims"))?,
        })
    }
}

fn features_path(dir: &Path, s: usize) -> PathBuf {
    dir.join(format!("features_{s}.mstn"))
}

fn labels_path(dir: &Path, s: usize) -> PathBuf {
    dir.join(format!("labels_{s}.csv"))
}

pub fn labels_csv(labels: &[usize]) -> String {
    let mut s = String::from("index,label\n");
    for (i, l) in labels.iter().enumerate() {
        s.push_str(&format!("{i},{l}\n"));
    }
    s
}

pub fn parse_labels_csv(text: &str) -> Result<Vec<usize>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| Error::Parse { line: 1, message: e.to_string() })?;
    if header.iter().collect::<Vec<_>>() != ["index", "label"] {
        return Err(Error::Parse { line: 1, message: "expected header `index,label`".into() });
    }
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let field = |j: usize| -> Result<usize> {
            rec[j].trim().parse().map_err(|_| Error::Parse { line, message: format!("bad integer `{}`", &rec[j]) })
        };
        if field(0)? != labels.len() {
            return Err(Error::Parse { line, message: format!("expected index {}", labels.len()) });
        }
        labels.push(field(1)?);
    }
    Ok(labels)
}

pub fn write_dataset(dir: &Path, subjects: &[SubjectData], num_classes: usize) -> Result<Manifest> {
    let first = subjects.first().ok_or_else(|| Error::Argument("no subjects to write".into()))?;
    let d = first.features.dims();
    if d.len() != 4 {
        return Err(Error::Shape(format!("subject features must be [n, h, w, b], got {d:?}")));
    }
    create_dir(dir)?;
    let manifest = Manifest {
        subjects: subjects.iter().map(|s| s.subject_id).collect(),
        num_classes,
        feature_dims: (d[1], d[2], d[3]),
    };
    for s in subjects {
        write_tensor(&features_path(dir, s.subject_id), &s.features)?;
        write_atomic(&labels_path(dir, s.subject_id), labels_csv(&s.labels).as_bytes())?;
    }
    write_atomic(&dir.join(MANIFEST), manifest.to_text().as_bytes())?;
    Ok(manifest)
}

pub fn read_dataset(dir: &Path) -> Result<(Manifest, Vec<SubjectData>)> {
    let text =
        String::from_utf8(read_bytes(&dir.join(MANIFEST))?).map_err(|_| Error::Data("manifest is not UTF-8".into()))?;
    let m = Manifest::parse(&text)?;
    let (h, w, b) = m.feature_dims;
    let mut subjects = Vec::with_capacity(m.subjects.len());
    for &s in &m.subjects {
        let features = read_tensor(&features_path(dir, s))?;
        if features.dims().len() != 4 || features.dims()[1..] != [h, w, b] {
            return Err(Error::Data(format!(
                "subject {s}: features {:?} disagree with manifest dims",
                features.dims()
            )));
        }
        let text = String::from_utf8(read_bytes(&labels_path(dir, s))?)
            .map_err(|_| Error::Data(format!("labels_{s}.csv is not UTF-8")))?;
        let labels = parse_labels_csv(&text)?;
        if labels.len() != features.rows() {
            return Err(Error::Data(format!("subject {s}: {} labels for {} samples", labels.len(), features.rows())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= m.num_classes) {
            return Err(Error::Data(format!("subject {s}: label {bad} outside [0, {})", m.num_classes)));
        }
        subjects.push(SubjectData { subject_id: s, features, labels });
    }
    Ok((m, subjects))
}

/// Raw signal CSV: one row per channel, the channel name first and then
/// its samples. Rows must all have the same length.
pub fn parse_raw_csv(text: &str, rate_hz: f64) -> Result<Recording> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(text.as_bytes());
    let (mut names, mut rows) = (Vec::new(), Vec::new());
    let mut width = None;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() < 2 {
            return Err(Error::Parse { line, message: "need a channel name and at least one sample".into() });
        }
        match width {
            None => width = Some(rec.len()),
            Some(w) if w != rec.len() => {
                return Err(Error::Parse { line, message: format!("row has {} fields, expected {w}", rec.len()) })
            }
            _ => {}
        }
        let samples = rec
            .iter()
            .skip(1)
            .map(|f| f.trim().parse::<f64>().map_err(|_| Error::Parse { line, message: format!("bad number `{f}`") }))
            .collect::<Result<Vec<_>>>()?;
        names.push(rec[0].trim().to_string());
        rows.push(samples);
    }
    if names.is_empty() {
        return Err(Error::Data("raw CSV has no channels".into()));
    }
    Recording::new(names, rate_hz, rows).map_err(|e| match e {
        Error::Argument(m) | Error::Shape(m) => Error::Data(m),
        other => other,
    })
}

/// `epoch,loss` rows.
pub fn ae_loss_csv(curve: &[f64]) -> String {
    let mut s = String::from("epoch,loss\n");
    for (i, l) in curve.iter().enumerate() {
        s.push_str(&format!("{i},{l}\n"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_benchmark, SynthConfig};

    #[test]
    fn dataset_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { num_subjects: 3, samples_per_class: 4, ..SynthConfig::default() };
        let subjects = generate_benchmark(&cfg).unwrap();
        let m = write_dataset(dir.path(), &subjects, cfg.num_classes).unwrap();
        assert_eq!(m.feature_dims, (4, 4, 5));
        let (m2, back) = read_dataset(dir.path()).unwrap();
        assert_eq!(m, m2);
        assert_eq!(back, subjects);
    }

    #[test]
    fn labels_csv_roundtrip_and_errors() {
        assert_eq!(parse_labels_csv(&labels_csv(&[2, 0, 1])).unwrap(), vec![2, 0, 1]);
        assert!(matches!(parse_labels_csv("index,label\n0,1\n2,0\n"), Err(Error::Parse { line: 3, .. })));
        assert!(matches!(parse_labels_csv("i,l\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn raw_csv_reports_line_numbers() {
        let r = parse_raw_csv("FZ,1,2,3\nCZ,4,5,6\n", 100.0).unwrap();
        assert_eq!(r.channel_names(), &["FZ".to_string(), "CZ".to_string()]);
        assert_eq!(r.samples()[1], vec![4.0, 5.0, 6.0]);
        assert!(matches!(parse_raw_csv("FZ,1,2,3\nCZ,4,5\n", 100.0), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_raw_csv("FZ,1,x,3\n", 100.0), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn manifest_rejects_unknown_keys() {
        assert!(matches!(Manifest::parse("subjects = 0\nshape = 1\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(Manifest::parse("subjects = 0\n"), Err(Error::Data(_))));
    }

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
