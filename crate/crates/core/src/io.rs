//! WAV and label ingestion, corpus manifests and table exports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Utterance;
use crate::dsp::AudioBuffer;
use crate::error::{Error, Result};
use crate::infotheory::LabelTrack;

/// Sample rates accepted without resampling.
pub const ACCEPTED_RATES: [u32; 2] = [16000, 8000];
/// Label frames may differ from the expected count by less than this.
pub const LABEL_TOLERANCE: usize = 2;

fn format_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

/// Reads 16-bit PCM mono; samples are scaled by `1 / 32768`.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(e) if e.kind() == std::io::ErrorKind::NotFound => Error::io(path, e),
        other => format_err(path, other.to_string()),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(format_err(
            path,
            format!("{} channels, expected mono", spec.channels),
        ));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(format_err(
            path,
            format!(
                "{}-bit {:?} samples, expected 16-bit PCM",
                spec.bits_per_sample, spec.sample_format
            ),
        ));
    }
    let expected = reader.len() as usize;
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| format_err(path, format!("truncated or unreadable data: {e}")))?;
    if samples.len() != expected {
        return Err(format_err(path, "truncated sample data"));
    }
    if samples.is_empty() {
        return Err(format_err(path, "no samples"));
    }
    AudioBuffer::new(samples, spec.sample_rate).map_err(|e| format_err(path, e.to_string()))
}

/// Writes 16-bit PCM mono, rounding `x * 32768` and clamping to the i16 range.
pub fn write_wav(path: impl AsRef<Path>, audio: &AudioBuffer) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let io_err = |e: hound::Error| match e {
        hound::Error::IoError(e) => Error::io(path, e),
        other => format_err(path, other.to_string()),
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(io_err)?;
    for &x in audio.samples() {
        let q = (x * 32768.0).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        w.write_sample(q).map_err(io_err)?;
    }
    w.finalize().map_err(io_err)
}

pub fn check_sample_rate(path: &Path, sample_rate: u32) -> Result<()> {
    if ACCEPTED_RATES.contains(&sample_rate) {
        Ok(())
    } else {
        Err(format_err(
            path,
            format!("sample rate {sample_rate} Hz is not supported (16000 or 8000)"),
        ))
    }
}

/// Whitespace-separated class ids at 100 frames per second. Counts within
/// the tolerance are trimmed, or padded by repeating the last label.
pub fn read_labels(
    path: impl AsRef<Path>,
    expected_frames: usize,
    n_classes: usize,
) -> Result<LabelTrack> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut labels = text
        .split_whitespace()
        .enumerate()
        .map(|(i, tok)| {
            let id: usize = tok
                .parse()
                .map_err(|_| format_err(path, format!("label {i} ('{tok}') is not a class id")))?;
            if id >= n_classes {
                return Err(format_err(
                    path,
                    format!("class id {id} at frame {i} is outside [0, {n_classes})"),
                ));
            }
            Ok(id)
        })
        .collect::<Result<Vec<_>>>()?;
    if labels.len().abs_diff(expected_frames) >= LABEL_TOLERANCE {
        return Err(Error::Alignment {
            utterance: path.display().to_string(),
            detail: format!("{} label frames for {expected_frames} expected", labels.len()),
        });
    }
    match labels.last().copied() {
        Some(last) => labels.resize(expected_frames, last),
        None if expected_frames == 0 => {}
        None => return Err(format_err(path, "no labels")),
    }
    LabelTrack::new(labels, n_classes, 100.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub audio: PathBuf,
    pub labels: Option<PathBuf>,
}

/// One entry per line, `audio.wav [labels.txt]`; blank lines and `#`
/// comments are skipped and relative paths resolve against the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &str| {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() > 2 {
                return Err(format_err(
                    path,
                    format!("line {}: expected 'audio [labels]'", n + 1),
                ));
            }
            entries.push(ManifestEntry {
                audio: resolve(fields[0]),
                labels: fields.get(1).map(|p| resolve(p)),
            });
        }
        let manifest = Self { entries };
        manifest.validate(path)?;
        Ok(manifest)
    }

    fn validate(&self, path: &Path) -> Result<()> {
        if self.entries.is_empty() {
            return Err(format_err(path, "manifest has no entries"));
        }
        let mut seen: Vec<&Path> = self.entries.iter().map(|e| e.audio.as_path()).collect();
        seen.sort();
        if let Some(w) = seen.windows(2).find(|w| w[0] == w[1]) {
            return Err(format_err(
                path,
                format!("duplicate audio path {}", w[0].display()),
            ));
        }
        Ok(())
    }

    /// Loads every entry with its labels, in manifest order. All files must
    /// share one accepted sample rate.
    pub fn load(&self, n_classes: usize) -> Result<Vec<Utterance>> {
        let utts = self
            .entries
            .par_iter()
            .map(|e| {
                let audio = read_wav(&e.audio)?;
                check_sample_rate(&e.audio, audio.sample_rate())?;
                let label_path = e.labels.as_ref().ok_or_else(|| {
                    format_err(&e.audio, "manifest entry has no label file")
                })?;
                let frames = (audio.duration_s() * 100.0).floor() as usize;
                let labels = read_labels(label_path, frames, n_classes)?;
                Ok(Utterance {
                    id: e.audio.display().to_string(),
                    audio,
                    labels,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let sr = utts[0].audio.sample_rate();
        if let Some(u) = utts.iter().find(|u| u.audio.sample_rate() != sr) {
            return Err(format_err(
                Path::new(&u.id),
                format!("{} Hz differs from the corpus rate {sr} Hz", u.audio.sample_rate()),
            ));
        }
        Ok(utts)
    }
}

/// Rounds to 9 significant digits; exports store this value in both formats.
pub fn round_sig9(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

/// Hex SHA-256 (first 16 digits) of a value's JSON form.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    let digest = Sha256::digest(&json);
    digest.iter().take(8).fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportMetadata {
    pub kind: String,
    pub config_hash: String,
    pub tool_version: String,
}

/// A labelled matrix written as CSV and JSON with identical values.
///
/// CSV puts `row_label` and the column values in the header row and one
/// row label per line after it. Missing values are `nan` in CSV and `null`
/// in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportTable {
    pub metadata: ExportMetadata,
    pub row_label: String,
    pub column_label: String,
    pub rows: Vec<String>,
    pub columns: Vec<f64>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl ExportTable {
    pub fn new(
        kind: &str,
        config_hash: String,
        (row_label, rows): (&str, Vec<String>),
        (column_label, columns): (&str, Vec<f64>),
        values: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if values.len() != rows.len() || values.iter().any(|r| r.len() != columns.len()) {
            return Err(Error::Dimension {
                expected: format!("{} x {} values", rows.len(), columns.len()),
                found: format!(
                    "{} rows of lengths {:?}",
                    values.len(),
                    values.iter().map(Vec::len).collect::<Vec<_>>()
                ),
            });
        }
        Ok(Self {
            metadata: ExportMetadata {
                kind: kind.to_string(),
                config_hash,
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
            },
            row_label: row_label.to_string(),
            column_label: column_label.to_string(),
            rows,
            columns: columns.into_iter().map(round_sig9).collect(),
            values: values
                .into_iter()
                .map(|r| {
                    r.into_iter()
                        .map(|v| v.is_finite().then(|| round_sig9(v)))
                        .collect()
                })
                .collect(),
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.row_label);
        for c in &self.columns {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
        for (label, row) in self.rows.iter().zip(&self.values) {
            out.push_str(label);
            for v in row {
                match v {
                    Some(v) => {
                        let _ = write!(out, ",{v}");
                    }
                    None => out.push_str(",nan"),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("table serializes");
        s.push('\n');
        s
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join(format!("{stem}.csv"));
        let json = dir.join(format!("{stem}.json"));
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        std::fs::write(&json, self.to_json()).map_err(|e| Error::io(&json, e))?;
        Ok((csv, json))
    }
}

/// Row label for a frequency, rounded like the values.
pub fn hz_label(hz: f64) -> String {
    round_sig9(hz).to_string()
}

/// Label and cells of one CSV row; `None` marks `nan`.
pub type CsvRow = (String, Vec<Option<f64>>);

/// Parses a CSV produced by [`ExportTable::to_csv`] back into columns and
/// values.
pub fn parse_csv(text: &str) -> Result<(Vec<f64>, Vec<CsvRow>)> {
    let bad = |detail: String| Error::Format {
        path: PathBuf::from("<csv>"),
        detail,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty".into()))?;
    let columns = header
        .split(',')
        .skip(1)
        .map(|c| c.parse().map_err(|_| bad(format!("bad header cell '{c}'"))))
        .collect::<Result<Vec<f64>>>()?;
    let rows = lines
        .map(|line| {
            let mut cells = line.split(',');
            let label = cells.next().unwrap_or("").to_string();
            let values = cells
                .map(|c| match c {
                    "nan" => Ok(None),
                    c => c
                        .parse()
                        .map(Some)
                        .map_err(|_| bad(format!("bad cell '{c}'"))),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((label, values))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((columns, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wav_scaling_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let audio = AudioBuffer::new(vec![-1.0, 0.0, 0.25, 0.999], 16000).unwrap();
        write_wav(&path, &audio).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.samples()[0], -1.0);
        assert_eq!(back.sample_rate(), 16000);
        for (a, b) in audio.samples().iter().zip(back.samples()) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn silence_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.wav");
        write_wav(&path, &AudioBuffer::new(vec![0.0; 16000], 16000).unwrap()).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.len(), 16000);
        assert!(back.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wav_rejections() {
        let dir = tempfile::tempdir().unwrap();
        let stereo = dir.path().join("st.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&stereo, spec).unwrap();
        for _ in 0..8 {
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        assert!(matches!(read_wav(&stereo), Err(Error::Format { .. })));

        let empty = dir.path().join("empty.wav");
        std::fs::write(&empty, b"").unwrap();
        match read_wav(&empty) {
            Err(Error::Format { path, .. }) => assert_eq!(path, empty),
            other => panic!("{other:?}"),
        }

        let good = dir.path().join("g.wav");
        write_wav(&good, &AudioBuffer::new(vec![0.1; 1000], 16000).unwrap()).unwrap();
        let bytes = std::fs::read(&good).unwrap();
        let cut = dir.path().join("cut.wav");
        std::fs::write(&cut, &bytes[..bytes.len() - 501]).unwrap();
        assert!(matches!(read_wav(&cut), Err(Error::Format { .. })));
    }

    #[test]
    fn labels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.txt");
        std::fs::write(&p, "0 0 1 1").unwrap();
        assert_eq!(read_labels(&p, 4, 48).unwrap().labels(), &[0, 0, 1, 1]);
        assert_eq!(read_labels(&p, 5, 48).unwrap().labels(), &[0, 0, 1, 1, 1]);
        assert_eq!(read_labels(&p, 3, 48).unwrap().labels(), &[0, 0, 1]);
        std::fs::write(&p, "0 48").unwrap();
        assert!(matches!(read_labels(&p, 2, 48), Err(Error::Format { .. })));
        std::fs::write(&p, "0 1 2").unwrap();
        assert!(matches!(read_labels(&p, 5, 48), Err(Error::Alignment { .. })));
    }

    #[test]
    fn manifest_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("m.txt");
        std::fs::write(&m, "# corpus\na.wav a.lab\n\n/abs/b.wav\n").unwrap();
        let man = CorpusManifest::read(&m).unwrap();
        assert_eq!(man.entries.len(), 2);
        assert_eq!(man.entries[0].audio, dir.path().join("a.wav"));
        assert_eq!(man.entries[1].labels, None);
        std::fs::write(&m, "a.wav\na.wav\n").unwrap();
        assert!(CorpusManifest::read(&m).is_err());
        std::fs::write(&m, "# nothing\n").unwrap();
        assert!(CorpusManifest::read(&m).is_err());
    }

    #[test]
    fn csv_and_json_agree() {
        let t = ExportTable::new(
            "test",
            config_hash(&1u8),
            ("band_hz", vec![hz_label(100.0 / 3.0), "average".into()]),
            ("mod_hz", vec![0.0, 2.0 / 3.0]),
            vec![vec![1.0 / 7.0, f64::NAN], vec![1e-12 / 3.0, 12345.678901234]],
        )
        .unwrap();
        let (cols, rows) = parse_csv(&t.to_csv()).unwrap();
        let back: ExportTable = serde_json::from_str(&t.to_json()).unwrap();
        assert_eq!(cols, back.columns);
        for ((label, vals), (l2, v2)) in rows.iter().zip(back.rows.iter().zip(&back.values)) {
            assert_eq!(label, l2);
            assert_eq!(vals, v2);
        }
        assert_eq!(back, t);
        assert_eq!(round_sig9(1.0 / 7.0), 0.142857143);
    }
}
