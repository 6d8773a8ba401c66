// Manifest: UTF-8 TSV, header `id\tlabel\taudio_path\ttext_path\tvideo_path`,
// paths relative to the manifest's directory. Audio/video files are CSV with
// one time step per row; text files hold whitespace-separated token ids. An
// optional `labels.txt` next to the manifest lists class names one per line;
// without it the seven emotion classes are assumed.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::MultimodalSample;
use crate::encoder::ModalitySequence;
use crate::error::{Error, Result};
use crate::model::LabelSet;

pub const MANIFEST_HEADER: &str = "id\tlabel\taudio_path\ttext_path\tvideo_path";
pub const LABELS_FILE: &str = "labels.txt";

/// Feature dimensions to enforce; `None` infers from the first sample and
/// then requires every other sample to agree.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ExpectedDims {
    pub audio: Option<usize>,
    pub video: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub samples: Vec<MultimodalSample>,
    pub labels: LabelSet,
    /// Git-style blob hash (SHA-256 of `blob <len>\0<bytes>`) of the manifest.
    pub manifest_hash: String,
}

impl Corpus {
    pub fn audio_dim(&self) -> Option<usize> {
        self.samples.first().map(|s| s.audio.dim())
    }

    pub fn video_dim(&self) -> Option<usize> {
        self.samples.first().map(|s| s.video.dim())
    }

    /// One past the largest token id seen.
    pub fn max_token(&self) -> usize {
        self.samples
            .iter()
            .flat_map(|s| s.text.iter())
            .max()
            .map_or(0, |m| m + 1)
    }

    pub fn ids(&self) -> Vec<String> {
        self.samples.iter().map(|s| s.id.clone()).collect()
    }

    /// Samples with the given ids, in the given order.
    pub fn select(&self, ids: &[String]) -> Vec<MultimodalSample> {
        let index: std::collections::HashMap<&str, &MultimodalSample> =
            self.samples.iter().map(|s| (s.id.as_str(), s)).collect();
        ids.iter()
            .filter_map(|id| index.get(id.as_str()).map(|s| (*s).clone()))
            .collect()
    }
}

pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn read_features(path: &Path) -> Result<ModalitySequence> {
    let text = read_text(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(path, i + 1, e.to_string()))?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(
                    path,
                    i + 1,
                    format!("row has {} values, expected {}", row.len(), first.len()),
                ));
            }
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(path, i + 1, "non-finite feature value"));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(path, 0, "no time steps"));
    }
    ModalitySequence::from_rows(&rows)
}

fn read_tokens(path: &Path) -> Result<Vec<usize>> {
    let text = read_text(path)?;
    let ids = text
        .split_whitespace()
        .map(str::parse::<usize>)
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| parse_err(path, 0, e.to_string()))?;
    if ids.is_empty() {
        return Err(parse_err(path, 0, "no tokens"));
    }
    Ok(ids)
}

fn check_dim(
    sample: &str,
    modality: &'static str,
    expected: &mut Option<usize>,
    found: usize,
) -> Result<()> {
    match *expected {
        Some(e) if e != found => Err(Error::FeatureDim {
            sample: sample.to_string(),
            modality,
            expected: e,
            found,
        }),
        Some(_) => Ok(()),
        None => {
            *expected = Some(found);
            Ok(())
        }
    }
}

pub fn load_corpus(manifest: &Path, dims: ExpectedDims) -> Result<Corpus> {
    let bytes = fs::read(manifest).map_err(|e| Error::io(manifest, e))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| parse_err(manifest, 0, "manifest is not UTF-8"))?;
    let base = manifest.parent().map(Path::to_path_buf).unwrap_or_default();

    let labels_path = base.join(LABELS_FILE);
    let labels = if labels_path.exists() {
        let names = read_text(&labels_path)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        LabelSet::new(names)?
    } else {
        LabelSet::emotions()
    };

    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == MANIFEST_HEADER => {}
        _ => {
            return Err(parse_err(
                manifest,
                1,
                format!("expected header {MANIFEST_HEADER:?}"),
            ))
        }
    }

    let (mut audio_dim, mut video_dim) = (dims.audio, dims.video);
    let mut samples = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(parse_err(
                manifest,
                i + 1,
                format!("expected 5 columns, found {}", cols.len()),
            ));
        }
        let id = cols[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(parse_err(manifest, i + 1, format!("duplicate id {id}")));
        }
        let label = labels
            .index_of(cols[1])
            .ok_or_else(|| Error::UnknownLabel {
                sample: id.clone(),
                label: cols[1].to_string(),
            })?;
        let audio = read_features(&base.join(cols[2]))?;
        let text = read_tokens(&base.join(cols[3]))?;
        let video = read_features(&base.join(cols[4]))?;
        check_dim(&id, "audio", &mut audio_dim, audio.dim())?;
        check_dim(&id, "video", &mut video_dim, video.dim())?;
        samples.push(MultimodalSample {
            id,
            audio,
            text,
            video,
            label,
        });
    }
    Ok(Corpus {
        samples,
        labels,
        manifest_hash: content_hash(&bytes),
    })
}

fn features_csv(seq: &ModalitySequence) -> String {
    let mut out = String::new();
    for row in seq.valid_data().chunks_exact(seq.dim()) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "sample id {id:?} is not filename-safe"
        )))
    }
}

/// Writes `samples` as a manifest plus per-sample feature files under
/// `dir`, returning the manifest path. Only valid rows are written.
pub fn write_corpus(
    dir: &Path,
    samples: &[MultimodalSample],
    labels: &LabelSet,
) -> Result<PathBuf> {
    for sub in ["audio", "text", "video"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut manifest = String::from(MANIFEST_HEADER);
    manifest.push('\n');
    for s in samples {
        check_id(&s.id)?;
        let label = labels.name(s.label).ok_or(Error::LabelOutOfRange {
            label: s.label,
            classes: labels.len(),
        })?;
        let audio = format!("audio/{}.csv", s.id);
        let text = format!("text/{}.txt", s.id);
        let video = format!("video/{}.csv", s.id);
        crate::report::write_atomic(&dir.join(&audio), features_csv(&s.audio).as_bytes())?;
        let tokens: Vec<String> = s.text.iter().map(usize::to_string).collect();
        crate::report::write_atomic(
            &dir.join(&text),
            format!("{}\n", tokens.join(" ")).as_bytes(),
        )?;
        crate::report::write_atomic(&dir.join(&video), features_csv(&s.video).as_bytes())?;
        manifest.push_str(&format!("{}\t{label}\t{audio}\t{text}\t{video}\n", s.id));
    }
    let mut label_lines = labels.names().join("\n");
    label_lines.push('\n');
    crate::report::write_atomic(&dir.join(LABELS_FILE), label_lines.as_bytes())?;
    let path = dir.join("manifest.tsv");
    crate::report::write_atomic(&path, manifest.as_bytes())?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};

    fn write(path: &Path, text: &str) {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(path, text).unwrap();
    }

    fn toy_manifest(dir: &Path, audio_cols: usize) -> PathBuf {
        let row: Vec<String> = (0..audio_cols)
            .map(|i| format!("{}", i as f64 * 0.5))
            .collect();
        let row = row.join(",");
        write(&dir.join("a1.csv"), &format!("{row}\n{row}\n{row}\n"));
        write(&dir.join("a2.csv"), &format!("{row}\n"));
        write(&dir.join("t1.txt"), "3 1 4 1 5\n");
        write(&dir.join("t2.txt"), "9 2\n");
        write(&dir.join("v1.csv"), "0.1,0.2\n0.3,0.4\n");
        write(&dir.join("v2.csv"), "1e-3,-2\n");
        let manifest = dir.join("manifest.tsv");
        write(
            &manifest,
            &format!(
                "{MANIFEST_HEADER}\nu1\tangry\ta1.csv\tt1.txt\tv1.csv\nu2\tneutral\ta2.csv\tt2.txt\tv2.csv\n"
            ),
        );
        manifest
    }

    #[test]
    fn loads_toy_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let m = toy_manifest(dir.path(), 120);
        let c = load_corpus(
            &m,
            ExpectedDims {
                audio: Some(120),
                video: None,
            },
        )
        .unwrap();
        assert_eq!(c.samples.len(), 2);
        assert_eq!(c.samples[0].audio.length(), 3);
        assert_eq!(c.samples[1].audio.length(), 1);
        assert_eq!(c.samples[0].text, vec![3, 1, 4, 1, 5]);
        assert_eq!(c.samples[1].label, 6);
        assert_eq!(c.samples[1].video.features().data(), &[1e-3, -2.0]);
        assert_eq!(c.labels, LabelSet::emotions());
        assert_eq!(c.manifest_hash.len(), 64);
    }

    #[test]
    fn wrong_audio_dim_names_sample() {
        let dir = tempfile::tempdir().unwrap();
        let m = toy_manifest(dir.path(), 119);
        let err = load_corpus(
            &m,
            ExpectedDims {
                audio: Some(120),
                video: None,
            },
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("u1") && msg.contains("120") && msg.contains("audio"),
            "{msg}"
        );
    }

    #[test]
    fn unknown_label_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let m = toy_manifest(dir.path(), 2);
        let text = fs::read_to_string(&m).unwrap().replace("angry", "fear");
        fs::write(&m, text).unwrap();
        assert!(matches!(
            load_corpus(&m, ExpectedDims::default()),
            Err(Error::UnknownLabel { .. })
        ));
        let text = fs::read_to_string(&m)
            .unwrap()
            .replace("fear\ta1.csv", "angry\tmissing.csv");
        fs::write(&m, text).unwrap();
        assert!(matches!(
            load_corpus(&m, ExpectedDims::default()),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn ragged_rows_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = toy_manifest(dir.path(), 2);
        write(&dir.path().join("v1.csv"), "0.1,0.2\n0.3\n");
        assert!(matches!(
            load_corpus(&m, ExpectedDims::default()),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn bad_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("manifest.tsv");
        write(&m, "id,label\n");
        assert!(matches!(
            load_corpus(&m, ExpectedDims::default()),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn write_then_load_is_identical() {
        let spec = SyntheticSpec {
            n_samples: 12,
            noise: 0.7,
            ..SyntheticSpec::default()
        };
        let samples = generate_synthetic(&spec).unwrap();
        let labels = LabelSet::generic(spec.n_classes).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let m = write_corpus(dir.path(), &samples, &labels).unwrap();
        let c = load_corpus(&m, ExpectedDims::default()).unwrap();
        assert_eq!(c.labels, labels);
        assert_eq!(c.samples, samples);
    }
}
