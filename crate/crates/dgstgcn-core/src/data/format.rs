//! On-disk formats: `SKL1` skeleton datasets and `SCR1` score files, plus
//! the little-endian primitives shared with the checkpoint format.
//!
//! SKL1 layout (all little-endian):
//!
//! ```text
//! magic "SKL1" | u32 version=1 | u32 n_samples | u16 V | u8 C | u8 M_max | u32 n_classes
//! then per sample: u32 label | u16 T | u8 M | f32 coords[M*T*V*C]
//! ```
//!
//! Class names and the bone parent list travel in an optional JSON sidecar at
//! `<path>.json`. SCR1 holds per-sample class scores with labels for
//! ensembling:
//!
//! ```text
//! magic "SCR1" | u32 n_samples | u32 n_classes | f32 scores[n*c] | u32 labels[n]
//! ```

use super::{Dataset, DatasetSpec, SkeletonSequence};
use crate::error::{Error, Result};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

/// Read adapter that tracks the byte offset for error reporting.
pub(crate) struct CountingReader<R> {
    inner: R,
    pub pos: u64,
}

impl<R: Read> CountingReader<R> {
    pub fn new(inner: R) -> Self {
        CountingReader { inner, pos: 0 }
    }

    pub fn fail(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            offset: self.pos,
            msg: msg.into(),
        }
    }
}

impl<R: Read> Read for CountingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.pos += n as u64;
        Ok(n)
    }
}

/// Check a 4-byte magic, reporting the offset and both spellings on mismatch.
pub(crate) fn expect_magic<R: Read>(r: &mut CountingReader<R>, magic: &[u8; 4]) -> Result<()> {
    let mut got = [0u8; 4];
    r.read_exact(&mut got)
        .map_err(|_| r.fail(format!("file too short for {} magic", String::from_utf8_lossy(magic))))?;
    if &got != magic {
        return Err(Error::Format {
            offset: 0,
            msg: format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&got),
                String::from_utf8_lossy(magic)
            ),
        });
    }
    Ok(())
}

pub(crate) fn read_f32_block<R: Read>(r: &mut CountingReader<R>, n: usize) -> Result<Vec<f32>> {
    let mut buf = vec![0f32; n];
    r.read_f32_into::<LittleEndian>(&mut buf)
        .map_err(|_| r.fail(format!("truncated while reading {n} f32 values")))?;
    Ok(buf)
}

/// JSON sidecar carrying what the binary header cannot.
#[derive(Debug, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class_names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parents: Option<Vec<usize>>,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    os.into()
}

const SKL_MAGIC: &[u8; 4] = b"SKL1";
const SCR_MAGIC: &[u8; 4] = b"SCR1";

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    ds.validate()?;
    let spec = &ds.spec;
    if spec.num_joints > u16::MAX as usize
        || spec.channels > u8::MAX as usize
        || spec.max_persons > u8::MAX as usize
    {
        return Err(Error::config("dataset dimensions exceed SKL1 header range"));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SKL_MAGIC)?;
    w.write_u32::<LittleEndian>(1)?;
    w.write_u32::<LittleEndian>(ds.samples.len() as u32)?;
    w.write_u16::<LittleEndian>(spec.num_joints as u16)?;
    w.write_u8(spec.channels as u8)?;
    w.write_u8(spec.max_persons as u8)?;
    w.write_u32::<LittleEndian>(spec.n_classes as u32)?;
    for s in &ds.samples {
        if s.frames > u16::MAX as usize {
            return Err(Error::data(format!("sample with {} frames exceeds u16", s.frames)));
        }
        w.write_u32::<LittleEndian>(s.label as u32)?;
        w.write_u16::<LittleEndian>(s.frames as u16)?;
        w.write_u8(s.persons as u8)?;
        for &x in &s.coords {
            w.write_f32::<LittleEndian>(x)?;
        }
    }
    w.flush()?;

    if spec.class_names.is_some() || spec.parents.is_some() {
        let side = Sidecar {
            class_names: spec.class_names.clone(),
            parents: spec.parents.clone(),
        };
        let f = File::create(sidecar_path(path))?;
        serde_json::to_writer_pretty(BufWriter::new(f), &side)?;
    }
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut r = CountingReader::new(BufReader::new(File::open(path)?));
    expect_magic(&mut r, SKL_MAGIC)?;
    let version = r
        .read_u32::<LittleEndian>()
        .map_err(|_| r.fail("truncated header"))?;
    if version != 1 {
        return Err(r.fail(format!("unsupported SKL1 version {version}")));
    }
    let n_samples = r.read_u32::<LittleEndian>().map_err(|_| r.fail("truncated header"))? as usize;
    let num_joints = r.read_u16::<LittleEndian>().map_err(|_| r.fail("truncated header"))? as usize;
    let channels = r.read_u8().map_err(|_| r.fail("truncated header"))? as usize;
    let max_persons = r.read_u8().map_err(|_| r.fail("truncated header"))? as usize;
    let n_classes = r.read_u32::<LittleEndian>().map_err(|_| r.fail("truncated header"))? as usize;

    let mut samples = Vec::with_capacity(n_samples.min(1 << 20));
    for i in 0..n_samples {
        let label = r
            .read_u32::<LittleEndian>()
            .map_err(|_| r.fail(format!("truncated at sample {i} header")))? as usize;
        let frames = r
            .read_u16::<LittleEndian>()
            .map_err(|_| r.fail(format!("truncated at sample {i} header")))? as usize;
        let persons = r
            .read_u8()
            .map_err(|_| r.fail(format!("truncated at sample {i} header")))? as usize;
        let coords = read_f32_block(&mut r, persons * frames * num_joints * channels)
            .map_err(|e| match e {
                Error::Format { offset, msg } => Error::Format {
                    offset,
                    msg: format!("sample {i}: {msg}"),
                },
                other => other,
            })?;
        samples.push(SkeletonSequence::new(label, persons, frames, coords));
    }
    // reject trailing garbage
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(r.fail("trailing bytes after last sample"));
    }

    let side = sidecar_path(path);
    let (class_names, parents) = if side.exists() {
        let f = File::open(&side)?;
        let sc: Sidecar = serde_json::from_reader(BufReader::new(f))?;
        (sc.class_names, sc.parents)
    } else {
        (None, None)
    };

    let ds = Dataset {
        spec: DatasetSpec {
            n_classes,
            num_joints,
            channels,
            max_persons,
            class_names,
            parents,
        },
        samples,
    };
    ds.validate()?;
    Ok(ds)
}

/// Per-sample class scores plus ground-truth labels, the unit of ensembling.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreFile {
    pub n_classes: usize,
    /// `[n_samples, n_classes]` row-major.
    pub scores: Vec<f32>,
    pub labels: Vec<u32>,
}

impl ScoreFile {
    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }
}

pub fn write_scores(path: &Path, sf: &ScoreFile) -> Result<()> {
    if sf.scores.len() != sf.labels.len() * sf.n_classes {
        return Err(Error::shape(
            "score matrix vs labels",
            &[sf.scores.len()],
            &[sf.labels.len() * sf.n_classes],
        ));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SCR_MAGIC)?;
    w.write_u32::<LittleEndian>(sf.labels.len() as u32)?;
    w.write_u32::<LittleEndian>(sf.n_classes as u32)?;
    for &s in &sf.scores {
        w.write_f32::<LittleEndian>(s)?;
    }
    for &l in &sf.labels {
        w.write_u32::<LittleEndian>(l)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores(path: &Path) -> Result<ScoreFile> {
    let mut r = CountingReader::new(BufReader::new(File::open(path)?));
    expect_magic(&mut r, SCR_MAGIC)?;
    let n = r.read_u32::<LittleEndian>().map_err(|_| r.fail("truncated header"))? as usize;
    let c = r.read_u32::<LittleEndian>().map_err(|_| r.fail("truncated header"))? as usize;
    if c == 0 {
        return Err(r.fail("score file with zero classes"));
    }
    let scores = read_f32_block(&mut r, n * c)?;
    let mut labels = vec![0u32; n];
    r.read_u32_into::<LittleEndian>(&mut labels)
        .map_err(|_| r.fail("truncated label block"))?;
    for (i, &l) in labels.iter().enumerate() {
        if l as usize >= c {
            return Err(Error::data(format!(
                "score file label {l} out of range for {c} classes (sample {i})"
            )));
        }
    }
    Ok(ScoreFile {
        n_classes: c,
        scores,
        labels,
    })
}
