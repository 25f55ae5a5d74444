//! Binary model persistence, format "MIPLGP-MODEL v1".
//!
//! ```text
//! magic   12 bytes  "MIPLGP-MODEL"
//! version u32 LE    1
//! header  u64 LE length, then UTF-8 JSON (label space, variant, kernel params, config)
//! count   u32 LE    number of sections
//! section 4-byte tag, u64 LE rows, u64 LE cols, rows·cols f64 LE, row-major
//! ```
//!
//! Sections: `TRNX` training inputs, `ALPH` concentrations, `YDOT` / `SDOT`
//! targets and noise, `JITR` per-block jitter (1 × width), `KPAR`
//! (1 × 2: ln ℓ, ln s²), and `SMEA` / `SSTD` standardization stats when
//! present. Loading refactorizes the GP starting from the stored jitter, which
//! reproduces the saved model's factors exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::data::{LabelSpace, Standardizer};
use crate::disambiguation::{AlphaMatrix, TransformedTargets};
use crate::error::{Error, Result};
use crate::gp::GpModel;
use crate::kernel::KernelParams;
use crate::trainer::{TrainConfig, TrainedModel, Variant};

pub const MAGIC: &[u8; 12] = b"MIPLGP-MODEL";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    label_space: LabelSpace,
    variant: Variant,
    kernel: KernelParams,
    feature_dim: usize,
    num_train: usize,
    config: TrainConfig,
}

fn write_section<W: Write>(w: &mut W, tag: &[u8; 4], m: &Mat<f64>) -> Result<()> {
    w.write_all(tag)?;
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            w.write_all(&m[(i, j)].to_le_bytes())?;
        }
    }
    Ok(())
}

fn row_mat(v: &[f64]) -> Mat<f64> {
    Mat::from_fn(1, v.len(), |_, j| v[j])
}

pub fn write_model<W: Write>(mut w: W, model: &TrainedModel) -> Result<()> {
    let header = Header {
        label_space: model.label_space,
        variant: model.variant,
        kernel: *model.gp.params(),
        feature_dim: model.feature_dim(),
        num_train: model.gp.num_train(),
        config: model.config.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;

    let p = model.gp.params();
    let mut sections: Vec<(&[u8; 4], Mat<f64>)> = vec![
        (b"KPAR", row_mat(&[p.log_lengthscale, p.log_outputscale])),
        (b"TRNX", model.gp.train_x().clone()),
        (b"ALPH", model.alpha.as_mat().clone()),
        (b"YDOT", model.gp.targets().y_dot.clone()),
        (b"SDOT", model.gp.targets().sigma_dot.clone()),
        (b"JITR", row_mat(&model.gp.jitters())),
    ];
    if let Some(s) = &model.standardizer {
        sections.push((b"SMEA", row_mat(&s.mean)));
        sections.push((b"SSTD", row_mat(&s.std)));
    }
    w.write_all(&(sections.len() as u32).to_le_bytes())?;
    for (tag, m) in &sections {
        write_section(&mut w, tag, m)?;
    }
    w.flush()?;
    Ok(())
}

fn read_exact<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::ModelFormat("truncated file".into()),
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_exact::<_, 8>(r)?))
}

/// Guard against absurd lengths in corrupted files before allocating.
const MAX_ELEMENTS: u64 = 1 << 32;

pub fn read_model<R: Read>(mut r: R) -> Result<TrainedModel> {
    if &read_exact::<_, 12>(&mut r)? != MAGIC {
        return Err(Error::ModelFormat("not a MIPLGP-MODEL file".into()));
    }
    let version = u32::from_le_bytes(read_exact::<_, 4>(&mut r)?);
    if version != MODEL_VERSION {
        return Err(Error::ModelFormat(format!("unsupported version {version}")));
    }
    let len = read_u64(&mut r)?;
    if len > MAX_ELEMENTS {
        return Err(Error::ModelFormat("header too large".into()));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json).map_err(|_| Error::ModelFormat("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&json)?;

    let count = u32::from_le_bytes(read_exact::<_, 4>(&mut r)?);
    let mut sections = std::collections::BTreeMap::new();
    for _ in 0..count {
        let tag = read_exact::<_, 4>(&mut r)?;
        let rows = read_u64(&mut r)?;
        let cols = read_u64(&mut r)?;
        if rows.saturating_mul(cols) > MAX_ELEMENTS {
            return Err(Error::ModelFormat("section too large".into()));
        }
        let (rows, cols) = (rows as usize, cols as usize);
        let mut data = vec![0.0; rows * cols];
        for v in data.iter_mut() {
            *v = f64::from_le_bytes(read_exact::<_, 8>(&mut r)?);
        }
        let m = Mat::from_fn(rows, cols, |i, j| data[i * cols + j]);
        sections.insert(String::from_utf8_lossy(&tag).into_owned(), m);
    }
    let take = |sections: &mut std::collections::BTreeMap<String, Mat<f64>>,
                tag: &str,
                rows: usize,
                cols: usize|
     -> Result<Mat<f64>> {
        let m = sections
            .remove(tag)
            .ok_or_else(|| Error::ModelFormat(format!("missing section {tag}")))?;
        if m.nrows() != rows || m.ncols() != cols {
            return Err(Error::ModelFormat(format!(
                "section {tag} is {}×{}, expected {rows}×{cols}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(m)
    };
    let (n, d, w) = (header.num_train, header.feature_dim, header.label_space.width());
    let kpar = take(&mut sections, "KPAR", 1, 2)?;
    let train_x = take(&mut sections, "TRNX", n, d)?;
    let alpha = AlphaMatrix::from_mat(take(&mut sections, "ALPH", n, w)?);
    let targets = TransformedTargets { y_dot: take(&mut sections, "YDOT", n, w)?, sigma_dot: take(&mut sections, "SDOT", n, w)? };
    let jitter = take(&mut sections, "JITR", 1, w)?;
    let standardizer = match (sections.contains_key("SMEA"), sections.contains_key("SSTD")) {
        (true, true) => {
            let mean = take(&mut sections, "SMEA", 1, d)?;
            let std = take(&mut sections, "SSTD", 1, d)?;
            Some(Standardizer {
                mean: (0..d).map(|k| mean[(0, k)]).collect(),
                std: (0..d).map(|k| std[(0, k)]).collect(),
            })
        }
        (false, false) => None,
        _ => return Err(Error::ModelFormat("incomplete standardization sections".into())),
    };

    let params = header.kernel;
    if params.log_lengthscale != kpar[(0, 0)] || params.log_outputscale != kpar[(0, 1)] {
        return Err(Error::ModelFormat("kernel parameters disagree between header and KPAR".into()));
    }
    let jitters: Vec<f64> = (0..w).map(|c| jitter[(0, c)]).collect();
    let gp = GpModel::fit_with_jitter(train_x, targets, params, &jitters)?;
    Ok(TrainedModel {
        label_space: header.label_space,
        variant: header.variant,
        standardizer,
        gp,
        alpha,
        config: header.config,
    })
}

pub fn save_model(path: impl AsRef<Path>, model: &TrainedModel) -> Result<()> {
    write_model(BufWriter::new(File::create(path)?), model)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TrainedModel> {
    read_model(BufReader::new(File::open(path)?))
}
