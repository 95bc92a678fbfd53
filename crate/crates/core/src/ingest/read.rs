use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use super::IngestError;
use crate::data::{ContextTone, F0Sample, F0Track, Gender, TokenRecord, TonePattern};

pub const TOKEN_COLUMNS: [&str; 12] = [
    "token_id",
    "word",
    "tone_pattern",
    "speaker",
    "gender",
    "preceding_tone",
    "following_tone",
    "speech_rate",
    "norm_utt_pos",
    "bg_prob_prev",
    "bg_prob_fol",
    "sense_type",
];

fn open(path: &Path) -> Result<csv::Reader<File>, IngestError> {
    let file = File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            IngestError::MissingFile(path.display().to_string())
        } else {
            IngestError::Io {
                path: path.display().to_string(),
                source: e,
            }
        }
    })?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file))
}

fn csv_error(e: csv::Error) -> IngestError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    IngestError::Parse {
        line,
        column: String::new(),
        reason: e.to_string(),
    }
}

fn header_index(headers: &csv::StringRecord, required: &[&str]) -> Result<Vec<usize>, IngestError> {
    required
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h.trim() == *name)
                .ok_or_else(|| IngestError::Parse {
                    line: 1,
                    column: name.to_string(),
                    reason: "missing column in header".into(),
                })
        })
        .collect()
}

fn parse_field<T: std::str::FromStr>(
    rec: &csv::StringRecord,
    idx: usize,
    column: &str,
    line: u64,
) -> Result<T, IngestError> {
    let raw = rec.get(idx).unwrap_or("").trim();
    raw.parse().map_err(|_| IngestError::Parse {
        line,
        column: column.to_string(),
        reason: format!("cannot parse {raw:?}"),
    })
}

fn parse_unit(rec: &csv::StringRecord, idx: usize, column: &str, line: u64) -> Result<f64, IngestError> {
    let v: f64 = parse_field(rec, idx, column, line)?;
    if !(0.0..=1.0).contains(&v) {
        return Err(IngestError::Parse {
            line,
            column: column.to_string(),
            reason: format!("value {v} out of range [0, 1]"),
        });
    }
    Ok(v)
}

fn parse_token_row(
    rec: &csv::StringRecord,
    cols: &[usize],
    extra_cols: &[(usize, String)],
    line: u64,
) -> Result<TokenRecord, IngestError> {
    let text = |i: usize| rec.get(cols[i]).unwrap_or("").trim().to_string();
    let nonempty = |i: usize| -> Result<String, IngestError> {
        let v = text(i);
        if v.is_empty() {
            Err(IngestError::Parse {
                line,
                column: TOKEN_COLUMNS[i].into(),
                reason: "empty value".into(),
            })
        } else {
            Ok(v)
        }
    };
    let pattern_raw = text(2);
    let tone_pattern: TonePattern = pattern_raw
        .parse()
        .map_err(|_| IngestError::UnknownTonePattern {
            line,
            value: pattern_raw.clone(),
        })?;
    let gender: Gender = parse_field(rec, cols[4], "gender", line)?;
    let preceding_tone: ContextTone = parse_field(rec, cols[5], "preceding_tone", line)?;
    let following_tone: ContextTone = parse_field(rec, cols[6], "following_tone", line)?;
    let speech_rate: f64 = parse_field(rec, cols[7], "speech_rate", line)?;
    if !(speech_rate > 0.0) || !speech_rate.is_finite() {
        return Err(IngestError::Parse {
            line,
            column: "speech_rate".into(),
            reason: format!("speech rate {speech_rate} must be positive"),
        });
    }
    let sense = text(11);
    Ok(TokenRecord {
        token_id: nonempty(0)?,
        word: nonempty(1)?,
        tone_pattern,
        speaker: nonempty(3)?,
        gender,
        preceding_tone,
        following_tone,
        speech_rate,
        norm_utt_pos: parse_unit(rec, cols[8], "norm_utt_pos", line)?,
        bg_prob_prev: parse_unit(rec, cols[9], "bg_prob_prev", line)?,
        bg_prob_fol: parse_unit(rec, cols[10], "bg_prob_fol", line)?,
        sense_type: if sense.is_empty() { None } else { Some(sense) },
        extra: extra_cols
            .iter()
            .map(|(i, name)| (name.clone(), rec.get(*i).unwrap_or("").trim().to_string()))
            .collect(),
    })
}

/// Parse `tokens.csv`. Every malformed row is reported.
pub fn read_tokens(path: &Path) -> Result<Vec<TokenRecord>, IngestError> {
    let mut rdr = open(path)?;
    let headers = rdr.headers().map_err(csv_error)?.clone();
    let cols = header_index(&headers, &TOKEN_COLUMNS)?;
    let extra_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| !TOKEN_COLUMNS.contains(&h.trim()))
        .map(|(i, h)| (i, h.trim().to_string()))
        .collect();
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for rec in rdr.records() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                errors.push(csv_error(e));
                continue;
            }
        };
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        match parse_token_row(&rec, &cols, &extra_cols, line) {
            Ok(t) => out.push(t),
            Err(e) => errors.push(e),
        }
    }
    match IngestError::collect(errors) {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// Parse `f0.csv` (long format) together with `durations.csv`.
///
/// Rows of one token need not be contiguous, but their times must be strictly
/// increasing in file order. Voiceless stretches are simply absent rows.
pub fn read_f0(f0_path: &Path, durations_path: &Path) -> Result<BTreeMap<String, F0Track>, IngestError> {
    let mut errors = Vec::new();

    let mut durations: BTreeMap<String, f64> = BTreeMap::new();
    let mut rdr = open(durations_path)?;
    let headers = rdr.headers().map_err(csv_error)?.clone();
    let dcols = header_index(&headers, &["token_id", "duration_ms"])?;
    for rec in rdr.records() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                errors.push(csv_error(e));
                continue;
            }
        };
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let id = rec.get(dcols[0]).unwrap_or("").trim().to_string();
        match parse_field::<f64>(&rec, dcols[1], "duration_ms", line) {
            Ok(d) if d > 0.0 && d.is_finite() => {
                durations.insert(id, d);
            }
            Ok(d) => errors.push(IngestError::Parse {
                line,
                column: "duration_ms".into(),
                reason: format!("duration {d} must be positive"),
            }),
            Err(e) => errors.push(e),
        }
    }

    let mut samples: BTreeMap<String, Vec<F0Sample>> = BTreeMap::new();
    let mut non_monotone: Vec<String> = Vec::new();
    let mut rdr = open(f0_path)?;
    let headers = rdr.headers().map_err(csv_error)?.clone();
    let cols = header_index(&headers, &["token_id", "t_ms", "f0_hz"])?;
    for rec in rdr.records() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                errors.push(csv_error(e));
                continue;
            }
        };
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let id = rec.get(cols[0]).unwrap_or("").trim().to_string();
        let t: f64 = match parse_field(&rec, cols[1], "t_ms", line) {
            Ok(t) => t,
            Err(e) => {
                errors.push(e);
                continue;
            }
        };
        let f0: f64 = match parse_field(&rec, cols[2], "f0_hz", line) {
            Ok(v) => v,
            Err(e) => {
                errors.push(e);
                continue;
            }
        };
        if !(f0 > 0.0) || !f0.is_finite() {
            errors.push(IngestError::NonPositiveF0 { line, token_id: id });
            continue;
        }
        if !(t >= 0.0) || !t.is_finite() {
            errors.push(IngestError::Parse {
                line,
                column: "t_ms".into(),
                reason: format!("time {t} must be non-negative"),
            });
            continue;
        }
        let entry = samples.entry(id.clone()).or_default();
        if let Some(last) = entry.last() {
            if t <= last.t_ms && !non_monotone.contains(&id) {
                non_monotone.push(id.clone());
            }
        }
        entry.push(F0Sample { t_ms: t, f0 });
    }
    for id in non_monotone {
        errors.push(IngestError::NonMonotoneTime(id));
    }

    let mut tracks = BTreeMap::new();
    for (id, s) in samples {
        if errors
            .iter()
            .any(|e| matches!(e, IngestError::NonMonotoneTime(t) if *t == id))
        {
            continue;
        }
        let Some(&duration) = durations.get(&id) else {
            errors.push(IngestError::MissingDuration(id));
            continue;
        };
        match F0Track::new(id.clone(), s, duration) {
            Ok(t) => {
                tracks.insert(id, t);
            }
            Err(e) => errors.push(IngestError::Parse {
                line: 0,
                column: "t_ms".into(),
                reason: e.to_string(),
            }),
        }
    }
    match IngestError::collect(errors) {
        Some(e) => Err(e),
        None => Ok(tracks),
    }
}

/// Parse `embeddings.csv`; the dimension is taken from the first row.
pub fn read_embeddings(path: &Path) -> Result<BTreeMap<String, Vec<f64>>, IngestError> {
    let mut rdr = open(path)?;
    let headers = rdr.headers().map_err(csv_error)?.clone();
    if headers.get(0).map(str::trim) != Some("token_id") {
        return Err(IngestError::Parse {
            line: 1,
            column: "token_id".into(),
            reason: "first column must be token_id".into(),
        });
    }
    let mut out = BTreeMap::new();
    let mut errors = Vec::new();
    let mut q: Option<usize> = None;
    for rec in rdr.records() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                errors.push(csv_error(e));
                continue;
            }
        };
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let id = rec.get(0).unwrap_or("").trim().to_string();
        let mut v = Vec::with_capacity(rec.len().saturating_sub(1));
        let mut bad = false;
        for j in 1..rec.len() {
            match parse_field::<f64>(&rec, j, &format!("e{}", j - 1), line) {
                Ok(x) if x.is_finite() => v.push(x),
                Ok(_) => {
                    bad = true;
                    errors.push(IngestError::Parse {
                        line,
                        column: format!("e{}", j - 1),
                        reason: "non-finite value".into(),
                    });
                }
                Err(e) => {
                    bad = true;
                    errors.push(e);
                }
            }
        }
        if bad {
            continue;
        }
        match q {
            None => q = Some(v.len()),
            Some(expected) if expected != v.len() => {
                errors.push(IngestError::EmbeddingDimMismatch {
                    line,
                    expected,
                    got: v.len(),
                });
                continue;
            }
            _ => {}
        }
        out.insert(id, v);
    }
    match IngestError::collect(errors) {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

fn create(path: &Path) -> std::io::Result<csv::Writer<File>> {
    Ok(csv::Writer::from_writer(File::create(path)?))
}

pub fn write_tokens(path: &Path, tokens: &[TokenRecord]) -> std::io::Result<()> {
    let extra: Vec<String> = {
        let mut names: Vec<String> = tokens
            .iter()
            .flat_map(|t| t.extra.keys().cloned())
            .collect();
        names.sort();
        names.dedup();
        names
    };
    let mut w = create(path)?;
    let mut header: Vec<String> = TOKEN_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(extra.iter().cloned());
    w.write_record(&header)?;
    for t in tokens {
        let mut row = vec![
            t.token_id.clone(),
            t.word.clone(),
            t.tone_pattern.to_string(),
            t.speaker.clone(),
            t.gender.to_string(),
            t.preceding_tone.to_string(),
            t.following_tone.to_string(),
            t.speech_rate.to_string(),
            t.norm_utt_pos.to_string(),
            t.bg_prob_prev.to_string(),
            t.bg_prob_fol.to_string(),
            t.sense_type.clone().unwrap_or_default(),
        ];
        for name in &extra {
            row.push(t.extra.get(name).cloned().unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.flush()
}

/// Writes f0 samples in long format. Log-scale tracks are exponentiated back to Hz.
pub fn write_f0<'a>(path: &Path, tracks: impl IntoIterator<Item = &'a F0Track>) -> std::io::Result<()> {
    let mut w = create(path)?;
    w.write_record(["token_id", "t_ms", "f0_hz"])?;
    for t in tracks {
        for s in &t.samples {
            let hz = match t.scale {
                crate::data::F0Scale::Hz => s.f0,
                crate::data::F0Scale::LogHz => s.f0.exp(),
            };
            w.write_record([t.token_id.clone(), s.t_ms.to_string(), hz.to_string()])?;
        }
    }
    w.flush()
}

pub fn write_durations<'a>(
    path: &Path,
    tracks: impl IntoIterator<Item = &'a F0Track>,
) -> std::io::Result<()> {
    let mut w = create(path)?;
    w.write_record(["token_id", "duration_ms"])?;
    for t in tracks {
        w.write_record([t.token_id.clone(), t.duration_ms.to_string()])?;
    }
    w.flush()
}

pub fn write_embeddings(path: &Path, embeddings: &BTreeMap<String, Vec<f64>>) -> std::io::Result<()> {
    let q = embeddings.values().next().map(Vec::len).unwrap_or(0);
    let mut file = std::io::BufWriter::new(File::create(path)?);
    let mut header = String::from("token_id");
    for j in 0..q {
        header.push_str(&format!(",e{j}"));
    }
    writeln!(file, "{header}")?;
    for (id, v) in embeddings {
        let mut line = id.clone();
        for x in v {
            line.push(',');
            line.push_str(&x.to_string());
        }
        writeln!(file, "{line}")?;
    }
    file.flush()
}
