//! File formats: delimited-text corpora, binary model checkpoints with
//! per-block checksums, and plot-ready report exports.
//!
//! Corpus files are inspectable text: `#`-prefixed header lines carrying the
//! format version, kind and alphabet, then one comma-separated row per week
//! (or per diary day, grouped by adjacent person ids). Checkpoints are
//! binary: a JSON header describing config, alphabet, seeds and the block
//! table, followed by raw little-endian f64 blocks, each guarded by a
//! SHA-256 digest.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attention::{EncoderConfig, FeatureSpec};
use crate::autodiff::{ParamSet, Tensor};
use crate::domain::{
    AlphabetKind, DiaryCorpus, DiaryDay, DiarySample, PersonAttributes, StateAlphabet, WeekCorpus,
    WeeklySchedule, DAY_STEPS, WEEK_STEPS,
};
use crate::generator::GeneratorModel;
use crate::imputer::ImputerModel;
use crate::markov::{MarkovChain, MarkovModel};
use crate::metrics::{Autocorrelation, MetricsReport};
use crate::{Error, Result};

const CORPUS_MAGIC: &str = "#schedsynth-corpus";
const CORPUS_VERSION: u32 = 1;
const CHECKPOINT_MAGIC: &[u8; 4] = b"SSCP";
const CHECKPOINT_VERSION: u32 = 1;

/// Either corpus kind, as stored on disk.
#[derive(Debug, Clone)]
pub enum Corpus {
    Week(WeekCorpus),
    Diary(DiaryCorpus),
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::ParseError {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn alphabet_to_header(alphabet: &StateAlphabet) -> Result<String> {
    if alphabet.labels.iter().any(|l| l.contains(';') || l.contains('|')) {
        return Err(Error::InvalidArgument(
            "alphabet labels must not contain ';' or '|'".into(),
        ));
    }
    let kind = match alphabet.kind {
        AlphabetKind::Mobility => "mobility",
        AlphabetKind::Activity => "activity",
    };
    Ok(format!(
        "#alphabet {}|{}|{}",
        alphabet.name,
        kind,
        alphabet.labels.join(";")
    ))
}

fn alphabet_from_header(path: &Path, line_no: usize, line: &str) -> Result<StateAlphabet> {
    let rest = line
        .strip_prefix("#alphabet ")
        .ok_or_else(|| parse_err(path, line_no, "expected '#alphabet' header"))?;
    let mut parts = rest.splitn(3, '|');
    let name = parts
        .next()
        .ok_or_else(|| parse_err(path, line_no, "missing alphabet name"))?;
    let kind = match parts.next() {
        Some("mobility") => AlphabetKind::Mobility,
        Some("activity") => AlphabetKind::Activity,
        other => {
            return Err(parse_err(
                path,
                line_no,
                format!("unknown alphabet kind {other:?}"),
            ))
        }
    };
    let labels: Vec<String> = parts
        .next()
        .ok_or_else(|| parse_err(path, line_no, "missing alphabet labels"))?
        .split(';')
        .map(|s| s.to_string())
        .collect();
    Ok(StateAlphabet::new(name, kind, labels))
}

fn write_corpus_header(
    out: &mut impl Write,
    kind: &str,
    alphabet: &StateAlphabet,
    columns: &str,
) -> Result<()> {
    writeln!(out, "{CORPUS_MAGIC} v{CORPUS_VERSION}")?;
    writeln!(out, "#kind {kind}")?;
    writeln!(out, "#resolution 10")?;
    writeln!(out, "{}", alphabet_to_header(alphabet)?)?;
    writeln!(out, "#columns {columns}")?;
    Ok(())
}

pub fn write_week_corpus(corpus: &WeekCorpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = BufWriter::new(File::create(path)?);
    write_corpus_header(
        &mut out,
        "week",
        &corpus.alphabet,
        "person_id,age_class,occupation_class,states[1008]",
    )?;
    for week in &corpus.weeks {
        check_person_id(&week.attributes.person_id)?;
        write!(
            out,
            "{},{},{}",
            week.attributes.person_id,
            week.attributes.age_class,
            week.attributes.occupation_class
        )?;
        for &s in &week.states {
            write!(out, ",{s}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_diary_corpus(corpus: &DiaryCorpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = BufWriter::new(File::create(path)?);
    write_corpus_header(
        &mut out,
        "day",
        &corpus.alphabet,
        "person_id,age_class,occupation_class,weekday,states[144]",
    )?;
    for sample in &corpus.samples {
        check_person_id(&sample.attributes.person_id)?;
        for day in &sample.days {
            write!(
                out,
                "{},{},{},{}",
                sample.attributes.person_id,
                sample.attributes.age_class,
                sample.attributes.occupation_class,
                day.weekday
            )?;
            for &s in &day.states {
                write!(out, ",{s}")?;
            }
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn check_person_id(id: &str) -> Result<()> {
    if id.is_empty() || id.contains(',') || id.contains('\n') {
        return Err(Error::InvalidArgument(format!(
            "person id {id:?} not representable in the corpus format"
        )));
    }
    Ok(())
}

struct HeaderInfo {
    kind: String,
    alphabet: StateAlphabet,
    rows_start: usize,
}

fn read_header(path: &Path, lines: &[String]) -> Result<HeaderInfo> {
    let mut kind = None;
    let mut alphabet = None;
    let mut rows_start = lines.len();
    for (i, line) in lines.iter().enumerate() {
        if !line.starts_with('#') {
            rows_start = i;
            break;
        }
        let line_no = i + 1;
        if i == 0 {
            let expected = format!("{CORPUS_MAGIC} v{CORPUS_VERSION}");
            if line != &expected {
                if let Some(v) = line.strip_prefix(&format!("{CORPUS_MAGIC} v")) {
                    let found: u32 = v.parse().unwrap_or(0);
                    return Err(Error::VersionMismatch {
                        found,
                        expected: CORPUS_VERSION,
                    });
                }
                return Err(parse_err(path, line_no, "not a corpus file"));
            }
        } else if let Some(k) = line.strip_prefix("#kind ") {
            kind = Some(k.to_string());
        } else if line.starts_with("#alphabet ") {
            alphabet = Some(alphabet_from_header(path, line_no, line)?);
        }
    }
    Ok(HeaderInfo {
        kind: kind.ok_or_else(|| parse_err(path, 0, "missing '#kind' header"))?,
        alphabet: alphabet.ok_or_else(|| parse_err(path, 0, "missing '#alphabet' header"))?,
        rows_start,
    })
}

fn parse_row(
    path: &Path,
    line_no: usize,
    line: &str,
    alphabet: &StateAlphabet,
    fixed_cols: usize,
    state_count: usize,
) -> Result<(Vec<String>, Vec<u16>)> {
    let mut fixed = Vec::with_capacity(fixed_cols);
    let mut states = Vec::with_capacity(state_count);
    for (i, field) in line.split(',').enumerate() {
        if i < fixed_cols {
            fixed.push(field.to_string());
        } else {
            let code: u16 = field.parse().map_err(|_| {
                parse_err(path, line_no, format!("invalid state code {field:?}"))
            })?;
            if !alphabet.contains(code) {
                return Err(parse_err(
                    path,
                    line_no,
                    format!("state code {code} outside alphabet of {}", alphabet.size()),
                ));
            }
            states.push(code);
        }
    }
    if fixed.len() != fixed_cols || states.len() != state_count {
        return Err(parse_err(
            path,
            line_no,
            format!(
                "expected {} fixed columns and {} states, got {} and {}",
                fixed_cols,
                state_count,
                fixed.len(),
                states.len()
            ),
        ));
    }
    Ok((fixed, states))
}

fn parse_attrs(path: &Path, line_no: usize, fixed: &[String]) -> Result<PersonAttributes> {
    let age: u8 = fixed[1]
        .parse()
        .map_err(|_| parse_err(path, line_no, "invalid age class"))?;
    let occ: u8 = fixed[2]
        .parse()
        .map_err(|_| parse_err(path, line_no, "invalid occupation class"))?;
    PersonAttributes::new(fixed[0].clone(), age, occ)
        .map_err(|e| parse_err(path, line_no, e.to_string()))
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let lines: Vec<String> = reader.lines().collect::<std::io::Result<_>>()?;
    if lines.is_empty() {
        return Err(parse_err(path, 0, "unexpected end of file: empty corpus"));
    }
    let header = read_header(path, &lines)?;

    match header.kind.as_str() {
        "week" => {
            let mut weeks = Vec::new();
            for (i, line) in lines.iter().enumerate().skip(header.rows_start) {
                if line.is_empty() {
                    continue;
                }
                let line_no = i + 1;
                let (fixed, states) =
                    parse_row(path, line_no, line, &header.alphabet, 3, WEEK_STEPS)?;
                weeks.push(WeeklySchedule {
                    attributes: parse_attrs(path, line_no, &fixed)?,
                    states,
                });
            }
            if weeks.is_empty() {
                return Err(parse_err(path, lines.len(), "corpus has no rows"));
            }
            Ok(Corpus::Week(WeekCorpus {
                alphabet: header.alphabet,
                weeks,
            }))
        }
        "day" => {
            let mut samples: Vec<DiarySample> = Vec::new();
            for (i, line) in lines.iter().enumerate().skip(header.rows_start) {
                if line.is_empty() {
                    continue;
                }
                let line_no = i + 1;
                let (fixed, states) =
                    parse_row(path, line_no, line, &header.alphabet, 4, DAY_STEPS)?;
                let attrs = parse_attrs(path, line_no, &fixed)?;
                let weekday: u8 = fixed[3]
                    .parse()
                    .map_err(|_| parse_err(path, line_no, "invalid weekday"))?;
                if weekday > 6 {
                    return Err(parse_err(path, line_no, format!("weekday {weekday} > 6")));
                }
                let day = DiaryDay { weekday, states };
                match samples.last_mut() {
                    Some(prev) if prev.attributes == attrs && prev.days.len() < 3 => {
                        prev.days.push(day)
                    }
                    _ => samples.push(DiarySample {
                        attributes: attrs,
                        days: vec![day],
                    }),
                }
            }
            if samples.is_empty() {
                return Err(parse_err(path, lines.len(), "corpus has no rows"));
            }
            Ok(Corpus::Diary(DiaryCorpus {
                alphabet: header.alphabet,
                samples,
            }))
        }
        other => Err(parse_err(path, 0, format!("unknown corpus kind {other:?}"))),
    }
}

pub fn read_week_corpus(path: impl AsRef<Path>) -> Result<WeekCorpus> {
    match read_corpus(&path)? {
        Corpus::Week(c) => Ok(c),
        Corpus::Diary(_) => Err(Error::KindMismatch {
            found: "day".into(),
            expected: "week".into(),
        }),
    }
}

pub fn read_diary_corpus(path: impl AsRef<Path>) -> Result<DiaryCorpus> {
    match read_corpus(&path)? {
        Corpus::Diary(c) => Ok(c),
        Corpus::Week(_) => Err(Error::KindMismatch {
            found: "week".into(),
            expected: "day".into(),
        }),
    }
}

// ---------------------------------------------------------------------------
// checkpoints

/// What a checkpoint file contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Generator,
    Imputer,
    Markov,
}

impl ModelKind {
    fn code(self) -> u8 {
        match self {
            ModelKind::Generator => 1,
            ModelKind::Imputer => 2,
            ModelKind::Markov => 3,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(ModelKind::Generator),
            2 => Some(ModelKind::Imputer),
            3 => Some(ModelKind::Markov),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Generator => "generator",
            ModelKind::Imputer => "imputer",
            ModelKind::Markov => "markov",
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct BlockMeta {
    name: String,
    shape: Vec<usize>,
    sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    kind: String,
    seed: u64,
    trained: bool,
    alphabet: StateAlphabet,
    #[serde(skip_serializing_if = "Option::is_none")]
    encoder: Option<EncoderConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    features: Option<FeatureSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    attribute_pool: Option<Vec<PersonAttributes>>,
    blocks: Vec<BlockMeta>,
}

fn tensor_bytes(t: &Tensor) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(t.numel() * 8);
    for &v in t.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

fn sha_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

fn write_checkpoint(
    path: &Path,
    kind: ModelKind,
    mut header: CheckpointHeader,
    blocks: Vec<(String, Vec<usize>, Vec<u8>)>,
) -> Result<()> {
    header.blocks = blocks
        .iter()
        .map(|(name, shape, bytes)| BlockMeta {
            name: name.clone(),
            shape: shape.clone(),
            sha256: sha_hex(bytes),
        })
        .collect();
    let header_json = serde_json::to_vec(&header)?;
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&[kind.code()])?;
    out.write_all(&(header_json.len() as u32).to_le_bytes())?;
    out.write_all(&header_json)?;
    for (_, _, bytes) in &blocks {
        out.write_all(bytes)?;
    }
    out.flush()?;
    Ok(())
}

fn read_exact_or_eof(reader: &mut impl Read, buf: &mut [u8], path: &Path) -> Result<()> {
    reader.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            parse_err(path, 0, "unexpected end of file in checkpoint")
        } else {
            Error::Io(e)
        }
    })
}

fn read_checkpoint(path: &Path) -> Result<(ModelKind, CheckpointHeader, Vec<Tensor>)> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact_or_eof(&mut reader, &mut magic, path)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(parse_err(path, 0, "not a checkpoint file"));
    }
    let mut v = [0u8; 4];
    read_exact_or_eof(&mut reader, &mut v, path)?;
    let version = u32::from_le_bytes(v);
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let mut kind_byte = [0u8; 1];
    read_exact_or_eof(&mut reader, &mut kind_byte, path)?;
    let kind = ModelKind::from_code(kind_byte[0])
        .ok_or_else(|| parse_err(path, 0, format!("unknown model kind {}", kind_byte[0])))?;
    let mut len_bytes = [0u8; 4];
    read_exact_or_eof(&mut reader, &mut len_bytes, path)?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    read_exact_or_eof(&mut reader, &mut header_json, path)?;
    let header: CheckpointHeader = serde_json::from_slice(&header_json)?;

    let mut tensors = Vec::with_capacity(header.blocks.len());
    for block in &header.blocks {
        let numel: usize = block.shape.iter().product();
        let mut bytes = vec![0u8; numel * 8];
        read_exact_or_eof(&mut reader, &mut bytes, path)?;
        if sha_hex(&bytes) != block.sha256 {
            return Err(Error::ChecksumMismatch(block.name.clone()));
        }
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        tensors.push(Tensor::from_vec(&block.shape, data)?);
    }
    Ok((kind, header, tensors))
}

/// Kind stored in a checkpoint, without loading the parameters.
pub fn checkpoint_kind(path: impl AsRef<Path>) -> Result<ModelKind> {
    let path = path.as_ref();
    let mut reader = BufReader::new(File::open(path)?);
    let mut prefix = [0u8; 9];
    read_exact_or_eof(&mut reader, &mut prefix, path)?;
    if &prefix[..4] != CHECKPOINT_MAGIC {
        return Err(parse_err(path, 0, "not a checkpoint file"));
    }
    ModelKind::from_code(prefix[8])
        .ok_or_else(|| parse_err(path, 0, format!("unknown model kind {}", prefix[8])))
}

fn param_blocks(params: &ParamSet) -> Vec<(String, Vec<usize>, Vec<u8>)> {
    params
        .names()
        .iter()
        .zip(params.tensors())
        .map(|(name, t)| (name.clone(), t.shape().to_vec(), tensor_bytes(t)))
        .collect()
}

fn rebuild_params(header: &CheckpointHeader, tensors: Vec<Tensor>) -> ParamSet {
    let mut params = ParamSet::new();
    for (meta, tensor) in header.blocks.iter().zip(tensors) {
        params.push(meta.name.clone(), tensor);
    }
    params
}

pub fn save_generator(model: &GeneratorModel, path: impl AsRef<Path>) -> Result<()> {
    let header = CheckpointHeader {
        kind: ModelKind::Generator.name().into(),
        seed: model.seed,
        trained: model.trained,
        alphabet: model.alphabet.clone(),
        encoder: Some(model.encoder.clone()),
        features: Some(model.features.clone()),
        alpha: None,
        attribute_pool: None,
        blocks: Vec::new(),
    };
    write_checkpoint(
        path.as_ref(),
        ModelKind::Generator,
        header,
        param_blocks(&model.params),
    )
}

pub fn load_generator(path: impl AsRef<Path>) -> Result<GeneratorModel> {
    let (kind, header, tensors) = read_checkpoint(path.as_ref())?;
    if kind != ModelKind::Generator {
        return Err(Error::KindMismatch {
            found: kind.name().into(),
            expected: ModelKind::Generator.name().into(),
        });
    }
    let encoder = header
        .encoder
        .clone()
        .ok_or_else(|| Error::InvalidArgument("checkpoint missing encoder config".into()))?;
    let features = header
        .features
        .clone()
        .ok_or_else(|| Error::InvalidArgument("checkpoint missing feature spec".into()))?;
    let params = rebuild_params(&header, tensors);
    GeneratorModel::from_parts(
        encoder,
        features,
        header.alphabet,
        params,
        header.seed,
        header.trained,
    )
}

pub fn save_imputer(model: &ImputerModel, path: impl AsRef<Path>) -> Result<()> {
    let header = CheckpointHeader {
        kind: ModelKind::Imputer.name().into(),
        seed: model.seed,
        trained: model.trained,
        alphabet: model.alphabet.clone(),
        encoder: Some(model.encoder.clone()),
        features: Some(model.features.clone()),
        alpha: None,
        attribute_pool: None,
        blocks: Vec::new(),
    };
    write_checkpoint(
        path.as_ref(),
        ModelKind::Imputer,
        header,
        param_blocks(&model.params),
    )
}

pub fn load_imputer(path: impl AsRef<Path>) -> Result<ImputerModel> {
    let (kind, header, tensors) = read_checkpoint(path.as_ref())?;
    if kind != ModelKind::Imputer {
        return Err(Error::KindMismatch {
            found: kind.name().into(),
            expected: ModelKind::Imputer.name().into(),
        });
    }
    let encoder = header
        .encoder
        .clone()
        .ok_or_else(|| Error::InvalidArgument("checkpoint missing encoder config".into()))?;
    let features = header
        .features
        .clone()
        .ok_or_else(|| Error::InvalidArgument("checkpoint missing feature spec".into()))?;
    let params = rebuild_params(&header, tensors);
    ImputerModel::from_parts(
        encoder,
        features,
        header.alphabet,
        params,
        header.seed,
        header.trained,
    )
}

pub fn save_markov(model: &MarkovModel, path: impl AsRef<Path>) -> Result<()> {
    let mut blocks = Vec::new();
    let chain_blocks = |prefix: &str, chain: &MarkovChain, blocks: &mut Vec<(String, Vec<usize>, Vec<u8>)>| {
        let pi = Tensor::from_vec(&[chain.pi.len()], chain.pi.clone()).expect("pi shape");
        let trans =
            Tensor::from_vec(&[chain.trans.len()], chain.trans.clone()).expect("trans shape");
        blocks.push((format!("{prefix}.pi"), pi.shape().to_vec(), tensor_bytes(&pi)));
        blocks.push((
            format!("{prefix}.trans"),
            trans.shape().to_vec(),
            tensor_bytes(&trans),
        ));
    };
    chain_blocks("pooled", &model.pooled, &mut blocks);
    for ((age, occ), chain) in &model.strata {
        chain_blocks(&format!("stratum.{age}.{occ}"), chain, &mut blocks);
    }
    let header = CheckpointHeader {
        kind: ModelKind::Markov.name().into(),
        seed: 0,
        trained: true,
        alphabet: model.alphabet.clone(),
        encoder: None,
        features: None,
        alpha: Some(model.alpha),
        attribute_pool: Some(model.attribute_pool.clone()),
        blocks: Vec::new(),
    };
    write_checkpoint(path.as_ref(), ModelKind::Markov, header, blocks)
}

pub fn load_markov(path: impl AsRef<Path>) -> Result<MarkovModel> {
    let (kind, header, tensors) = read_checkpoint(path.as_ref())?;
    if kind != ModelKind::Markov {
        return Err(Error::KindMismatch {
            found: kind.name().into(),
            expected: ModelKind::Markov.name().into(),
        });
    }
    let states = header.alphabet.size();
    let mut pooled: Option<MarkovChain> = None;
    let mut strata = std::collections::BTreeMap::new();
    let mut pending: Option<(String, Vec<f64>)> = None;
    for (meta, tensor) in header.blocks.iter().zip(tensors) {
        if let Some(prefix) = meta.name.strip_suffix(".pi") {
            pending = Some((prefix.to_string(), tensor.data().to_vec()));
        } else if let Some(prefix) = meta.name.strip_suffix(".trans") {
            let (pi_prefix, pi) = pending.take().ok_or_else(|| {
                Error::InvalidArgument(format!("checkpoint block {} without pi", meta.name))
            })?;
            if pi_prefix != prefix {
                return Err(Error::InvalidArgument(format!(
                    "mismatched chain blocks {pi_prefix} vs {prefix}"
                )));
            }
            let chain = MarkovChain::from_parts(states, pi, tensor.data().to_vec())?;
            if prefix == "pooled" {
                pooled = Some(chain);
            } else {
                let mut it = prefix
                    .strip_prefix("stratum.")
                    .unwrap_or_default()
                    .split('.');
                let age: u8 = it
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::InvalidArgument("bad stratum block name".into()))?;
                let occ: u8 = it
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::InvalidArgument("bad stratum block name".into()))?;
                strata.insert((age, occ), chain);
            }
        }
    }
    Ok(MarkovModel {
        alphabet: header.alphabet,
        alpha: header
            .alpha
            .ok_or_else(|| Error::InvalidArgument("checkpoint missing alpha".into()))?,
        pooled: pooled
            .ok_or_else(|| Error::InvalidArgument("checkpoint missing pooled chain".into()))?,
        strata,
        attribute_pool: header
            .attribute_pool
            .ok_or_else(|| Error::InvalidArgument("checkpoint missing attribute pool".into()))?,
    })
}

// ---------------------------------------------------------------------------
// report exports

pub fn write_report_json(report: &MetricsReport, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    serde_json::to_writer_pretty(&mut out, report)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// Tab-separated state-probability curves: one row per step, one column per
/// state label.
pub fn write_sp_curves(
    curves: &[Vec<f64>],
    labels: &[String],
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    write!(out, "step")?;
    for label in labels {
        write!(out, "\t{label}")?;
    }
    writeln!(out)?;
    let len = curves.first().map_or(0, |c| c.len());
    for t in 0..len {
        write!(out, "{t}")?;
        for curve in curves {
            write!(out, "\t{}", curve[t])?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Tab-separated autocorrelation curves with quartiles, one block of three
/// columns per state.
pub fn write_ac_curves(
    curves: &[(String, Autocorrelation)],
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    write!(out, "lag")?;
    for (label, _) in curves {
        write!(out, "\t{label}:mean\t{label}:q25\t{label}:q75")?;
    }
    writeln!(out)?;
    let lags = curves.first().map_or(0, |(_, a)| a.mean.len());
    for lag in 0..lags {
        write!(out, "{}", lag + 1)?;
        for (_, ac) in curves {
            write!(out, "\t{}\t{}\t{}", ac.mean[lag], ac.q25[lag], ac.q75[lag])?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Tab-separated Hamming histogram: bin and count per corpus.
pub fn write_hd_histogram(
    generated: &[u64],
    reference: &[u64],
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    writeln!(out, "distance\tgenerated\treference")?;
    for (bin, (g, r)) in generated.iter().zip(reference).enumerate() {
        writeln!(out, "{bin}\t{g}\t{r}")?;
    }
    out.flush()?;
    Ok(())
}
