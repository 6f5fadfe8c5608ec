//! Dataset serialization: one directory per dataset holding a JSON
//! manifest and a single packed binary file of length-prefixed records
//! (integers u32 LE, floats f32 LE, strings length-prefixed UTF-8).
//! Samples are validated before writing; loads verify the checksum and
//! structure but do not re-run the semantic validators, since the f64 to
//! f32 quantization is lossy.

use std::fs;
use std::path::{Path, PathBuf};

use mit_core::heads::Task;
use mit_core::pipeline::TaskData;
use mit_core::synth::{
    gen_cls, gen_msa, gen_seg, validate_cls, validate_msa, validate_seg, ClsSample, MsaLatent,
    MsaSample, PlacedShape, SegSample, MSA_ACOUSTIC_DIM, MSA_FACIAL_DIM, SEG_IMG,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const GENERATOR_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SAMPLES_FILE: &str = "samples.bin";

const IMG_FLOATS: usize = SEG_IMG * SEG_IMG * 3;
const MASK_FLOATS: usize = SEG_IMG * SEG_IMG;

#[derive(Debug)]
pub enum DataError {
    Io(PathBuf, std::io::Error),
    Corrupt(String),
}

impl std::fmt::Display for DataError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DataError::Io(p, e) => write!(f, "{}: {e}", p.display()),
            DataError::Corrupt(m) => write!(f, "corrupt dataset: {m}"),
        }
    }
}

impl std::error::Error for DataError {}

fn corrupt(msg: impl Into<String>) -> DataError {
    DataError::Corrupt(msg.into())
}

#[derive(Serialize, Deserialize, Clone, Debug)]
pub struct Manifest {
    pub task: String,
    pub n: usize,
    pub seed: u64,
    pub generator_version: u32,
    /// SHA-256 hex of samples.bin.
    pub checksum: String,
}

/// Generate and validate `n` samples for `task`.
pub fn generate(task: Task, n: usize, seed: u64) -> Result<TaskData, String> {
    match task {
        Task::Seg => {
            let s = gen_seg(n, seed);
            validate_seg(&s).map_err(|e| e.0)?;
            Ok(TaskData::Seg(s))
        }
        Task::Cls => {
            let s = gen_cls(n, seed);
            validate_cls(&s).map_err(|e| e.0)?;
            Ok(TaskData::Cls(s))
        }
        Task::Msa => {
            let s = gen_msa(n, seed);
            validate_msa(&s).map_err(|e| e.0)?;
            Ok(TaskData::Msa(s))
        }
    }
}

pub fn write_dataset(dir: &Path, data: &TaskData, seed: u64) -> Result<Manifest, DataError> {
    fs::create_dir_all(dir).map_err(|e| DataError::Io(dir.into(), e))?;
    let mut bin = Vec::new();
    match data {
        TaskData::Seg(samples) => {
            for s in samples {
                write_record(&mut bin, |b| {
                    put_str(b, &s.description);
                    put_u32(b, s.target as u32);
                    put_shapes(b, &s.shapes);
                    put_f32s(b, &s.image);
                    put_f32s(b, &s.mask);
                });
            }
        }
        TaskData::Cls(samples) => {
            for s in samples {
                write_record(&mut bin, |b| {
                    put_str(b, &s.text);
                    put_u32(b, s.label as u32);
                    put_shapes(b, &s.shapes);
                    put_f32s(b, &s.image);
                });
            }
        }
        TaskData::Msa(samples) => {
            for s in samples {
                write_record(&mut bin, |b| {
                    put_str(b, &s.text);
                    put_u32(b, s.steps as u32);
                    put_f32s(b, &[s.label]);
                    put_f32s(b, &[
                        s.latent.text_valence,
                        s.latent.acoustic_valence,
                        s.latent.facial_valence,
                    ]);
                    put_f32s(b, &s.acoustic);
                    put_f32s(b, &s.facial);
                });
            }
        }
    }
    let samples_path = dir.join(SAMPLES_FILE);
    fs::write(&samples_path, &bin).map_err(|e| DataError::Io(samples_path.clone(), e))?;
    let manifest = Manifest {
        task: String::from(data.task().name()),
        n: data.len(),
        seed,
        generator_version: GENERATOR_VERSION,
        checksum: sha256_hex(&bin),
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| corrupt(format!("manifest encode: {e}")))?;
    fs::write(&manifest_path, json).map_err(|e| DataError::Io(manifest_path, e))?;
    Ok(manifest)
}

pub fn read_dataset(dir: &Path) -> Result<(TaskData, Manifest), DataError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let raw = fs::read_to_string(&manifest_path)
        .map_err(|e| DataError::Io(manifest_path.clone(), e))?;
    let manifest: Manifest =
        serde_json::from_str(&raw).map_err(|e| corrupt(format!("manifest: {e}")))?;
    let task = Task::parse(&manifest.task)
        .ok_or_else(|| corrupt(format!("manifest task '{}'", manifest.task)))?;
    if manifest.generator_version != GENERATOR_VERSION {
        return Err(corrupt(format!(
            "generator_version {} (this build reads {GENERATOR_VERSION})",
            manifest.generator_version
        )));
    }
    let samples_path = dir.join(SAMPLES_FILE);
    let bin = fs::read(&samples_path).map_err(|e| DataError::Io(samples_path, e))?;
    let digest = sha256_hex(&bin);
    if digest != manifest.checksum {
        return Err(corrupt(format!(
            "checksum mismatch: manifest {} vs samples.bin {digest}",
            manifest.checksum
        )));
    }

    let mut rd = Rd { b: &bin, pos: 0 };
    let data = match task {
        Task::Seg => {
            let mut out = Vec::with_capacity(manifest.n);
            for i in 0..manifest.n {
                let mut rec = rd.record(i)?;
                out.push(SegSample {
                    description: rec.str()?,
                    target: rec.u32()? as usize,
                    shapes: rec.shapes()?,
                    image: rec.f32s(IMG_FLOATS)?,
                    mask: rec.f32s(MASK_FLOATS)?,
                });
                rec.done(i)?;
            }
            TaskData::Seg(out)
        }
        Task::Cls => {
            let mut out = Vec::with_capacity(manifest.n);
            for i in 0..manifest.n {
                let mut rec = rd.record(i)?;
                out.push(ClsSample {
                    text: rec.str()?,
                    label: rec.u32()? as usize,
                    shapes: rec.shapes()?,
                    image: rec.f32s(IMG_FLOATS)?,
                });
                rec.done(i)?;
            }
            TaskData::Cls(out)
        }
        Task::Msa => {
            let mut out = Vec::with_capacity(manifest.n);
            for i in 0..manifest.n {
                let mut rec = rd.record(i)?;
                let text = rec.str()?;
                let steps = rec.u32()? as usize;
                let label = rec.f32s(1)?[0];
                let lat = rec.f32s(3)?;
                out.push(MsaSample {
                    text,
                    steps,
                    label,
                    latent: MsaLatent {
                        text_valence: lat[0],
                        acoustic_valence: lat[1],
                        facial_valence: lat[2],
                    },
                    acoustic: rec.f32s(steps * MSA_ACOUSTIC_DIM)?,
                    facial: rec.f32s(steps * MSA_FACIAL_DIM)?,
                });
                rec.done(i)?;
            }
            TaskData::Msa(out)
        }
    };
    if rd.pos != bin.len() {
        return Err(corrupt(format!("{} trailing bytes after record {}", bin.len() - rd.pos, manifest.n)));
    }
    Ok((data, manifest))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn write_record(out: &mut Vec<u8>, fill: impl FnOnce(&mut Vec<u8>)) {
    let mut body = Vec::new();
    fill(&mut body);
    put_u32(out, body.len() as u32);
    out.extend_from_slice(&body);
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, xs: &[f64]) {
    for &x in xs {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_shapes(out: &mut Vec<u8>, shapes: &[PlacedShape]) {
    put_u32(out, shapes.len() as u32);
    for p in shapes {
        for v in [p.shape, p.color, p.cy, p.cx, p.size] {
            put_u32(out, v as u32);
        }
    }
}

struct Rd<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Rd<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        if self.pos + n > self.b.len() {
            return Err(corrupt(format!(
                "wanted {n} bytes at offset {}, file has {}",
                self.pos,
                self.b.len()
            )));
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>, DataError> {
        let raw = self.take(4 * n)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }

    fn str(&mut self) -> Result<String, DataError> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|e| corrupt(format!("string field: {e}")))
    }

    fn shapes(&mut self) -> Result<Vec<PlacedShape>, DataError> {
        let n = self.u32()? as usize;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let v: Vec<usize> = (0..5).map(|_| self.u32().map(|x| x as usize)).collect::<Result<_, _>>()?;
            out.push(PlacedShape { shape: v[0], color: v[1], cy: v[2], cx: v[3], size: v[4] });
        }
        Ok(out)
    }

    /// Length-prefixed sub-reader for one record body.
    fn record(&mut self, idx: usize) -> Result<Rd<'a>, DataError> {
        let len = self
            .u32()
            .map_err(|_| corrupt(format!("record {idx}: missing length prefix")))? as usize;
        let body = self
            .take(len)
            .map_err(|_| corrupt(format!("record {idx}: body truncated")))?;
        Ok(Rd { b: body, pos: 0 })
    }

    fn done(&self, idx: usize) -> Result<(), DataError> {
        if self.pos != self.b.len() {
            return Err(corrupt(format!(
                "record {idx}: {} unread bytes in body",
                self.b.len() - self.pos
            )));
        }
        Ok(())
    }
}
