//! Genomic input: FASTA ingest, window sampling, labeled CSV and synthetic
//! corpora with planted motifs.

use std::fmt;
use std::io::{BufRead, Read};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RngKey;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed FASTA at line {line}: sequence data before any '>' header")]
    MalformedFasta { line: usize },
    #[error("invalid base {byte:?} in record '{record}' at line {line}")]
    InvalidBase { record: String, byte: char, line: usize },
    #[error("empty input: no FASTA records found")]
    EmptyInput,
    #[error("labeled CSV must start with header 'sequence,label', found '{found}'")]
    MissingHeader { found: String },
    #[error("row {row}: label '{value}' is not a non-negative integer")]
    NonIntegerLabel { row: usize, value: String },
    #[error("row {row}: {message}")]
    MalformedRow { row: usize, message: String },
    #[error("invalid window parameters: {0}")]
    InvalidWindow(String),
    #[error("invalid synthetic corpus config: {0}")]
    InvalidSyntheticConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Canonical nucleotide alphabet, in id order.
pub const NUCLEOTIDES: [u8; 4] = [b'A', b'C', b'G', b'T'];

/// How bytes outside {A,C,G,T,N} are treated on ingest.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseMode {
    #[default]
    Strict,
    /// Unknown letters become `N`.
    Lenient,
}

/// A nucleotide string over {A,C,G,T,N}, uppercase.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct DnaSequence {
    id: String,
    bases: Vec<u8>,
}

#[inline]
fn normalize_base(b: u8) -> Option<u8> {
    match b.to_ascii_uppercase() {
        c @ (b'A' | b'C' | b'G' | b'T' | b'N') => Some(c),
        _ => None,
    }
}

impl DnaSequence {
    /// Builds a sequence, uppercasing input and rejecting anything outside {A,C,G,T,N}.
    pub fn new(id: impl Into<String>, bases: impl AsRef<[u8]>) -> Result<Self, CorpusError> {
        Self::with_mode(id, bases, BaseMode::Strict)
    }

    pub fn with_mode(
        id: impl Into<String>,
        bases: impl AsRef<[u8]>,
        mode: BaseMode,
    ) -> Result<Self, CorpusError> {
        let id = id.into();
        let raw = bases.as_ref();
        let mut out = Vec::with_capacity(raw.len());
        for &b in raw {
            match (normalize_base(b), mode) {
                (Some(c), _) => out.push(c),
                (None, BaseMode::Lenient) => out.push(b'N'),
                (None, BaseMode::Strict) => {
                    return Err(CorpusError::InvalidBase { record: id, byte: b as char, line: 0 })
                }
            }
        }
        Ok(DnaSequence { id, bases: out })
    }

    /// Caller guarantees `bases` is already normalized.
    pub(crate) fn from_normalized(id: String, bases: Vec<u8>) -> Self {
        debug_assert!(bases.iter().all(|b| normalize_base(*b) == Some(*b)));
        DnaSequence { id, bases }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn bases(&self) -> &[u8] {
        &self.bases
    }

    pub fn as_str(&self) -> &str {
        // ASCII by construction
        std::str::from_utf8(&self.bases).expect("ascii bases")
    }

    pub fn len(&self) -> usize {
        self.bases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bases.is_empty()
    }

    pub fn n_count(&self) -> usize {
        self.bases.iter().filter(|&&b| b == b'N').count()
    }

    pub fn n_fraction(&self) -> f64 {
        if self.bases.is_empty() {
            0.0
        } else {
            self.n_count() as f64 / self.bases.len() as f64
        }
    }
}

impl fmt::Debug for DnaSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("DnaSequence").field(&self.id).field(&self.as_str()).finish()
    }
}

/// Parses FASTA text. Record ids are the first whitespace-delimited word of
/// the header line.
pub fn parse_fasta<R: BufRead>(reader: R, mode: BaseMode) -> Result<Vec<DnaSequence>, CorpusError> {
    let mut records: Vec<DnaSequence> = Vec::new();
    let mut current: Option<(String, Vec<u8>)> = None;

    for (idx, line) in reader.split(b'\n').enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let line = line.strip_suffix(b"\r").unwrap_or(&line);
        if let Some(header) = line.strip_prefix(b">") {
            if let Some((id, bases)) = current.take() {
                records.push(DnaSequence::from_normalized(id, bases));
            }
            let header = String::from_utf8_lossy(header);
            let id = header.split_whitespace().next().unwrap_or("").to_string();
            current = Some((id, Vec::new()));
            continue;
        }
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let Some((id, bases)) = current.as_mut() else {
            return Err(CorpusError::MalformedFasta { line: lineno });
        };
        for &b in line.iter().filter(|b| !b.is_ascii_whitespace()) {
            match (normalize_base(b), mode) {
                (Some(c), _) => bases.push(c),
                (None, BaseMode::Lenient) => bases.push(b'N'),
                (None, BaseMode::Strict) => {
                    return Err(CorpusError::InvalidBase {
                        record: id.clone(),
                        byte: b as char,
                        line: lineno,
                    })
                }
            }
        }
    }
    if let Some((id, bases)) = current.take() {
        records.push(DnaSequence::from_normalized(id, bases));
    }
    if records.is_empty() {
        return Err(CorpusError::EmptyInput);
    }
    Ok(records)
}

pub fn parse_fasta_str(text: &str, mode: BaseMode) -> Result<Vec<DnaSequence>, CorpusError> {
    parse_fasta(text.as_bytes(), mode)
}

/// Reads FASTA from a file, or from standard input when `path` is `-`.
pub fn read_fasta(path: &Path, mode: BaseMode) -> Result<Vec<DnaSequence>, CorpusError> {
    if path.as_os_str() == "-" {
        let stdin = std::io::stdin();
        parse_fasta(stdin.lock(), mode)
    } else {
        let file = std::fs::File::open(path)?;
        parse_fasta(std::io::BufReader::new(file), mode)
    }
}

/// Default ceiling on the fraction of `N` bases a window may contain.
pub const DEFAULT_MAX_N_FRACTION: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WindowMode {
    /// Windows start at 0, stride, 2·stride, …
    Tiled { stride: usize },
    /// `count` windows at uniform random offsets drawn from `key`.
    Random { count: usize, key: RngKey },
}

/// Result of windowing one sequence.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Windows {
    pub windows: Vec<DnaSequence>,
    /// 1 when the window was longer than the sequence (no windows produced).
    pub too_long: usize,
    /// Windows discarded for exceeding the `N` threshold.
    pub dropped_ambiguous: usize,
}

pub fn sample_windows(
    seq: &DnaSequence,
    window_len: usize,
    mode: WindowMode,
    max_n_fraction: f64,
) -> Result<Windows, CorpusError> {
    if window_len == 0 {
        return Err(CorpusError::InvalidWindow("window_len must be >= 1".into()));
    }
    if let WindowMode::Tiled { stride: 0 } = mode {
        return Err(CorpusError::InvalidWindow("stride must be >= 1".into()));
    }
    let mut out = Windows::default();
    if window_len > seq.len() {
        out.too_long = 1;
        return Ok(out);
    }
    let last_start = seq.len() - window_len;
    let starts: Vec<usize> = match mode {
        WindowMode::Tiled { stride } => (0..=last_start).step_by(stride).collect(),
        WindowMode::Random { count, key } => {
            let mut rng = key.rng();
            (0..count).map(|_| rng.random_range(0..=last_start)).collect()
        }
    };
    for start in starts {
        let slice = &seq.bases()[start..start + window_len];
        let n = slice.iter().filter(|&&b| b == b'N').count();
        if n as f64 / window_len as f64 > max_n_fraction {
            out.dropped_ambiguous += 1;
            continue;
        }
        out.windows.push(DnaSequence::from_normalized(
            format!("{}:{}", seq.id(), start),
            slice.to_vec(),
        ));
    }
    Ok(out)
}

/// A short pattern planted into synthetic sequences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Motif {
    pub pattern: String,
    pub plant_probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticCorpusConfig {
    pub num_sequences: usize,
    pub sequence_length: usize,
    pub motifs: Vec<Motif>,
    /// Probabilities of A, C, G, T.
    pub background: [f64; 4],
    pub seed: u64,
}

impl Default for SyntheticCorpusConfig {
    fn default() -> Self {
        SyntheticCorpusConfig {
            num_sequences: 512,
            sequence_length: 512,
            motifs: vec![
                Motif { pattern: "TATAAAAGGC".into(), plant_probability: 0.5 },
                Motif { pattern: "GGGCGGGGCC".into(), plant_probability: 0.5 },
                Motif { pattern: "CCAATCAGAT".into(), plant_probability: 0.5 },
            ],
            background: [0.25; 4],
            seed: 0,
        }
    }
}

impl SyntheticCorpusConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: String| Err(CorpusError::InvalidSyntheticConfig(m));
        if self.background.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return bad("background probabilities must be finite and non-negative".into());
        }
        let total: f64 = self.background.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("background probabilities sum to {total}, expected 1"));
        }
        for m in &self.motifs {
            if !(0.0..=1.0).contains(&m.plant_probability) {
                return bad(format!("plant probability {} outside [0,1]", m.plant_probability));
            }
            let pattern = DnaSequence::new("motif", &m.pattern)?;
            if pattern.is_empty() || pattern.len() > self.sequence_length {
                return bad(format!(
                    "motif '{}' length must be in [1, sequence_length={}]",
                    m.pattern, self.sequence_length
                ));
            }
        }
        Ok(())
    }
}

/// Where a motif was written into a synthetic sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Plant {
    pub sequence: usize,
    pub motif: usize,
    pub offset: usize,
}

/// Draws the corpus, also returning every planted motif occurrence.
pub fn generate_synthetic_annotated(
    config: &SyntheticCorpusConfig,
) -> Result<(Vec<DnaSequence>, Vec<Plant>), CorpusError> {
    config.validate()?;
    let root = RngKey::new(config.seed).fork(crate::rng::domain::CORPUS);
    let patterns: Vec<Vec<u8>> = config
        .motifs
        .iter()
        .map(|m| m.pattern.bytes().map(|b| b.to_ascii_uppercase()).collect())
        .collect();
    let mut cdf = [0.0f64; 4];
    let mut acc = 0.0;
    for (slot, p) in cdf.iter_mut().zip(config.background) {
        acc += p;
        *slot = acc;
    }

    let mut sequences = Vec::with_capacity(config.num_sequences);
    let mut plants = Vec::new();
    for i in 0..config.num_sequences {
        let mut rng = root.fork(i as u64).rng();
        let mut bases: Vec<u8> = (0..config.sequence_length)
            .map(|_| {
                let u: f64 = rng.random();
                let idx = cdf.iter().position(|&c| u < c).unwrap_or(3);
                NUCLEOTIDES[idx]
            })
            .collect();
        for (mi, (motif, pattern)) in config.motifs.iter().zip(&patterns).enumerate() {
            let u: f64 = rng.random();
            if u < motif.plant_probability {
                let offset = rng.random_range(0..=config.sequence_length - pattern.len());
                bases[offset..offset + pattern.len()].copy_from_slice(pattern);
                plants.push(Plant { sequence: i, motif: mi, offset });
            }
        }
        sequences.push(DnaSequence::from_normalized(format!("syn{i}"), bases));
    }
    Ok((sequences, plants))
}

pub fn generate_synthetic(config: &SyntheticCorpusConfig) -> Result<Vec<DnaSequence>, CorpusError> {
    generate_synthetic_annotated(config).map(|(s, _)| s)
}

/// One row of a labeled classification dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledExample {
    pub sequence: DnaSequence,
    pub label: usize,
}

/// Parses `sequence,label` CSV. Returns the rows and `max(label) + 1`.
pub fn load_labeled_reader<R: Read>(reader: R) -> Result<(Vec<LabeledExample>, usize), CorpusError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = rdr.records();
    let header = match rows.next() {
        Some(r) => r.map_err(csv_err(1))?,
        None => return Err(CorpusError::MissingHeader { found: String::new() }),
    };
    let fields: Vec<&str> = header.iter().collect();
    let first = fields.first().map(|f| f.trim_start_matches('\u{feff}'));
    if fields.len() != 2 || first != Some("sequence") || fields[1] != "label" {
        return Err(CorpusError::MissingHeader { found: fields.join(",") });
    }

    let mut examples = Vec::new();
    let mut num_classes = 0usize;
    for (i, rec) in rows.enumerate() {
        let row = i + 2;
        let rec = rec.map_err(csv_err(row))?;
        if rec.len() != 2 {
            return Err(CorpusError::MalformedRow {
                row,
                message: format!("expected 2 fields, found {}", rec.len()),
            });
        }
        let label: usize = rec[1]
            .parse()
            .map_err(|_| CorpusError::NonIntegerLabel { row, value: rec[1].to_string() })?;
        let sequence = DnaSequence::new(format!("row{row}"), &rec[0]).map_err(|e| match e {
            CorpusError::InvalidBase { record, byte, .. } => {
                CorpusError::InvalidBase { record, byte, line: row }
            }
            other => other,
        })?;
        num_classes = num_classes.max(label + 1);
        examples.push(LabeledExample { sequence, label });
    }
    Ok((examples, num_classes))
}

fn csv_err(row: usize) -> impl Fn(csv::Error) -> CorpusError {
    move |e| match e.into_kind() {
        csv::ErrorKind::Io(io) => CorpusError::Io(io),
        other => CorpusError::MalformedRow { row, message: format!("{other:?}") },
    }
}

pub fn load_labeled(path: &Path) -> Result<(Vec<LabeledExample>, usize), CorpusError> {
    let file = std::fs::File::open(path)?;
    load_labeled_reader(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn strs(v: &[DnaSequence]) -> Vec<(&str, &str)> {
        v.iter().map(|s| (s.id(), s.as_str())).collect()
    }

    #[test]
    fn fasta_wrapped_records() {
        let recs = parse_fasta_str(">r1\nACGT\nAC\n>r2\nTTTT", BaseMode::Strict).unwrap();
        assert_eq!(strs(&recs), vec![("r1", "ACGTAC"), ("r2", "TTTT")]);
    }

    #[test]
    fn fasta_empty_record() {
        let recs = parse_fasta_str(">r1\n", BaseMode::Strict).unwrap();
        assert_eq!(strs(&recs), vec![("r1", "")]);
    }

    #[test]
    fn fasta_lenient_maps_to_n() {
        let recs = parse_fasta_str(">r1\nACXT", BaseMode::Lenient).unwrap();
        assert_eq!(strs(&recs), vec![("r1", "ACNT")]);
    }

    #[test]
    fn fasta_errors() {
        assert!(matches!(
            parse_fasta_str(">r1\nACXT", BaseMode::Strict),
            Err(CorpusError::InvalidBase { byte: 'X', line: 2, .. })
        ));
        assert!(matches!(
            parse_fasta_str("ACGT\n>r1\nAC", BaseMode::Strict),
            Err(CorpusError::MalformedFasta { line: 1 })
        ));
        assert!(matches!(parse_fasta_str("", BaseMode::Strict), Err(CorpusError::EmptyInput)));
        assert!(matches!(parse_fasta_str("\n\n", BaseMode::Strict), Err(CorpusError::EmptyInput)));
    }

    #[test]
    fn fasta_lowercase_crlf_and_header_words() {
        let recs = parse_fasta_str(">chr1 some description\r\nacgt\r\nnn\r\n", BaseMode::Strict).unwrap();
        assert_eq!(strs(&recs), vec![("chr1", "ACGTNN")]);
    }

    fn windows_of(s: &str, len: usize, stride: usize) -> Vec<String> {
        let seq = DnaSequence::new("s", s).unwrap();
        sample_windows(&seq, len, WindowMode::Tiled { stride }, DEFAULT_MAX_N_FRACTION)
            .unwrap()
            .windows
            .iter()
            .map(|w| w.as_str().to_string())
            .collect()
    }

    #[test]
    fn tiled_windows() {
        assert_eq!(windows_of("ACGTACGT", 4, 4), vec!["ACGT", "ACGT"]);
        assert_eq!(windows_of("ACGTAC", 6, 1), vec!["ACGTAC"]);
        assert_eq!(windows_of("ACGTACGT", 4, 2), vec!["ACGT", "GTAC", "ACGT"]);
    }

    #[test]
    fn window_too_long_is_a_warning() {
        let seq = DnaSequence::new("s", "ACG").unwrap();
        let w = sample_windows(&seq, 4, WindowMode::Tiled { stride: 1 }, 0.1).unwrap();
        assert!(w.windows.is_empty());
        assert_eq!(w.too_long, 1);
        let empty = DnaSequence::new("e", "").unwrap();
        assert_eq!(sample_windows(&empty, 1, WindowMode::Tiled { stride: 1 }, 0.1).unwrap().too_long, 1);
        assert!(sample_windows(&seq, 0, WindowMode::Tiled { stride: 1 }, 0.1).is_err());
        assert!(sample_windows(&seq, 1, WindowMode::Tiled { stride: 0 }, 0.1).is_err());
    }

    #[test]
    fn ambiguous_windows_dropped() {
        // 10 bases per window: one N (10%) is kept, two (20%) are dropped
        let seq = DnaSequence::new("s", "ACGTNACGTAACNNACGTAC").unwrap();
        let w = sample_windows(&seq, 10, WindowMode::Tiled { stride: 10 }, 0.1).unwrap();
        assert_eq!(w.windows.len(), 1);
        assert_eq!(w.windows[0].as_str(), "ACGTNACGTA");
        assert_eq!(w.dropped_ambiguous, 1);
    }

    #[test]
    fn random_windows_deterministic_and_in_bounds() {
        let seq = DnaSequence::new("s", "ACGT".repeat(50)).unwrap();
        let mode = WindowMode::Random { count: 20, key: RngKey::new(3) };
        let a = sample_windows(&seq, 17, mode, 0.1).unwrap();
        let b = sample_windows(&seq, 17, mode, 0.1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.windows.len(), 20);
        for w in &a.windows {
            let start: usize = w.id().rsplit(':').next().unwrap().parse().unwrap();
            assert!(start + 17 <= seq.len());
            assert_eq!(w.bases(), &seq.bases()[start..start + 17]);
        }
    }

    #[test]
    fn synthetic_is_deterministic() {
        let cfg = SyntheticCorpusConfig {
            num_sequences: 1,
            sequence_length: 8,
            motifs: vec![],
            background: [0.25; 4],
            seed: 7,
        };
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].len(), 8);
        assert!(a[0].bases().iter().all(|b| NUCLEOTIDES.contains(b)));
    }

    #[test]
    fn synthetic_seeds_differ() {
        let mut cfg = SyntheticCorpusConfig { num_sequences: 100, sequence_length: 64, ..Default::default() };
        let a = generate_synthetic(&cfg).unwrap();
        cfg.seed = 1;
        let b = generate_synthetic(&cfg).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn synthetic_certain_motif_always_present() {
        let cfg = SyntheticCorpusConfig {
            num_sequences: 100,
            sequence_length: 50,
            motifs: vec![Motif { pattern: "AAAAAA".into(), plant_probability: 1.0 }],
            background: [0.25; 4],
            seed: 11,
        };
        for s in generate_synthetic(&cfg).unwrap() {
            assert!(s.as_str().contains("AAAAAA"), "{s:?}");
        }
    }

    #[test]
    fn synthetic_plant_rate_binomial() {
        let cfg = SyntheticCorpusConfig {
            num_sequences: 10_000,
            sequence_length: 40,
            motifs: vec![Motif { pattern: "ACGTTGCA".into(), plant_probability: 0.5 }],
            background: [0.25; 4],
            seed: 5,
        };
        let (seqs, plants) = generate_synthetic_annotated(&cfg).unwrap();
        let frac = plants.len() as f64 / seqs.len() as f64;
        let sigma = (0.25f64 / 10_000.0).sqrt();
        assert!((frac - 0.5).abs() <= 3.0 * sigma, "planted fraction {frac}");
        for p in &plants {
            assert_eq!(&seqs[p.sequence].as_str()[p.offset..p.offset + 8], "ACGTTGCA");
        }
    }

    #[test]
    fn synthetic_config_validation() {
        let mut cfg = SyntheticCorpusConfig::default();
        cfg.background = [0.3, 0.3, 0.3, 0.3];
        assert!(cfg.validate().is_err());
        let mut cfg = SyntheticCorpusConfig::default();
        cfg.motifs[0].plant_probability = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = SyntheticCorpusConfig::default();
        cfg.sequence_length = 4;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn labeled_csv() {
        let (rows, n) = load_labeled_reader("sequence,label\nACGTAC,1\nTTTTTT,0".as_bytes()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(n, 2);
        assert_eq!(rows[0].sequence.as_str(), "ACGTAC");
        assert_eq!(rows[0].label, 1);

        let (rows, n) = load_labeled_reader("sequence,label\n".as_bytes()).unwrap();
        assert!(rows.is_empty());
        assert_eq!(n, 0);

        let (rows, _) = load_labeled_reader("sequence,label\r\nacgt,0\r\n".as_bytes()).unwrap();
        assert_eq!(rows[0].sequence.as_str(), "ACGT");
    }

    #[test]
    fn labeled_csv_errors() {
        assert!(matches!(
            load_labeled_reader("sequence,label\nACGT,-1".as_bytes()),
            Err(CorpusError::NonIntegerLabel { row: 2, .. })
        ));
        assert!(matches!(
            load_labeled_reader("seq,lab\nACGT,1".as_bytes()),
            Err(CorpusError::MissingHeader { .. })
        ));
        assert!(matches!(load_labeled_reader("".as_bytes()), Err(CorpusError::MissingHeader { .. })));
        assert!(matches!(
            load_labeled_reader("sequence,label\nACXT,1".as_bytes()),
            Err(CorpusError::InvalidBase { line: 2, .. })
        ));
        assert!(matches!(
            load_labeled_reader("sequence,label\nACGT,1.5".as_bytes()),
            Err(CorpusError::NonIntegerLabel { .. })
        ));
    }

    proptest! {
        #[test]
        fn fasta_concatenates_lines(lines in proptest::collection::vec("[ACGTNacgtn]{0,30}", 1..8)) {
            let text = format!(">rec\n{}\n", lines.join("\n"));
            let recs = parse_fasta_str(&text, BaseMode::Strict).unwrap();
            prop_assert_eq!(recs.len(), 1);
            prop_assert_eq!(recs[0].as_str(), lines.concat().to_uppercase());
        }

        #[test]
        fn tiled_full_stride_partitions_prefix(len in 1usize..200, w in 1usize..40) {
            let seq = DnaSequence::new("s", "ACGT".repeat(50).get(..len).unwrap()).unwrap();
            let out = sample_windows(&seq, w, WindowMode::Tiled { stride: w }, 1.0).unwrap();
            prop_assert_eq!(out.windows.len(), len / w);
            let joined: Vec<u8> = out.windows.iter().flat_map(|x| x.bases().to_vec()).collect();
            prop_assert_eq!(&joined[..], &seq.bases()[..w * (len / w)]);
        }
    }
}
