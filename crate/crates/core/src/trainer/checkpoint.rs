//! Binary checkpoint format.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic "CMGN" | version u32 = 1
//! num_layers u32 | per layer: in u32, out u32, activation u32 (0 id, 1 relu)
//! embed_dim u32 | num_classes u32 | flags u32 (bit 0: velocity present)
//! per layer: weights f64[out*in] row-major, biases f64[out]
//! classifier f64[embed_dim*num_classes] row-major
//! [velocity: same layout as the parameter block]
//! curriculum: t f64, momentum f64, iteration u64, statistic u32, placement u32
//! ```
//!
//! The momentum buffers ride along because a resumed run must take the very
//! same next step the uninterrupted run would have taken; without velocity
//! the two diverge at the first post-resume update.

use super::{Activation, DenseLayer, ModelParams, ParamTensors, Velocity};
use crate::curriculum::{CurriculumState, MomentumPlacement, StatisticKind};
use crate::error::{Error, Result};
use crate::numerics::{ClassifierMatrix, Matrix};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub curriculum: CurriculumState,
    pub velocity: Option<Velocity>,
}

const MAGIC: &[u8; 4] = b"CMGN";
const VERSION: u32 = 1;
const FLAG_VELOCITY: u32 = 1;
const MAX_LAYERS: u32 = 4096;
const MAX_DIM: u32 = 1_000_000;

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_tensors(buf: &mut Vec<u8>, weights: &[&Matrix], biases: &[&Vec<f64>], classifier: &Matrix) {
    for (w, b) in weights.iter().zip(biases) {
        for &v in w.as_slice() {
            push_f64(buf, v);
        }
        for &v in b.iter() {
            push_f64(buf, v);
        }
    }
    for &v in classifier.as_slice() {
        push_f64(buf, v);
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    let p = &checkpoint.params;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    push_u32(&mut buf, VERSION);
    push_u32(&mut buf, p.layers.len() as u32);
    for layer in &p.layers {
        push_u32(&mut buf, layer.input_dim() as u32);
        push_u32(&mut buf, layer.output_dim() as u32);
        push_u32(
            &mut buf,
            match layer.activation {
                Activation::Identity => 0,
                Activation::Relu => 1,
            },
        );
    }
    push_u32(&mut buf, p.embed_dim() as u32);
    push_u32(&mut buf, p.num_classes() as u32);
    push_u32(
        &mut buf,
        if checkpoint.velocity.is_some() { FLAG_VELOCITY } else { 0 },
    );

    let weights: Vec<&Matrix> = p.layers.iter().map(|l| &l.weights).collect();
    let biases: Vec<&Vec<f64>> = p.layers.iter().map(|l| &l.biases).collect();
    push_tensors(&mut buf, &weights, &biases, p.classifier.matrix());

    if let Some(v) = &checkpoint.velocity {
        let weights: Vec<&Matrix> = v.layer_weights.iter().collect();
        let biases: Vec<&Vec<f64>> = v.layer_biases.iter().collect();
        push_tensors(&mut buf, &weights, &biases, &v.classifier);
    }

    let cur = &checkpoint.curriculum;
    push_f64(&mut buf, cur.t());
    push_f64(&mut buf, cur.momentum());
    push_u64(&mut buf, cur.iteration());
    push_u32(
        &mut buf,
        match cur.statistic_kind() {
            StatisticKind::MeanPositiveCosine => 0,
            StatisticKind::ModePositiveCosine => 1,
            StatisticKind::MeanGtProbability => 2,
        },
    );
    push_u32(
        &mut buf,
        match cur.placement() {
            MomentumPlacement::OnHistory => 0,
            MomentumPlacement::OnStatistic => 1,
        },
    );

    std::fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, detail: impl Into<String>) -> Error {
        Error::CheckpointParse {
            offset: self.pos as u64,
            detail: detail.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(self.fail("unexpected end of file"));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(self.f64()?);
        }
        Ok(Matrix::from_vec(rows, cols, data).expect("sized read"))
    }

    fn vec(&mut self, len: usize) -> Result<Vec<f64>> {
        (0..len).map(|_| self.f64()).collect()
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    parse_checkpoint(&std::fs::read(path)?)
}

fn parse_checkpoint(buf: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::CheckpointParse {
            offset: 0,
            detail: "bad magic, not a checkpoint".into(),
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::CheckpointParse {
            offset: 4,
            detail: format!("unsupported version {version}"),
        });
    }
    let num_layers = r.u32()?;
    if num_layers == 0 || num_layers > MAX_LAYERS {
        return Err(r.fail(format!("implausible layer count {num_layers}")));
    }
    let mut shapes = Vec::with_capacity(num_layers as usize);
    for _ in 0..num_layers {
        let fan_in = r.u32()?;
        let fan_out = r.u32()?;
        if fan_in == 0 || fan_in > MAX_DIM || fan_out == 0 || fan_out > MAX_DIM {
            return Err(r.fail(format!("implausible layer shape {fan_in}x{fan_out}")));
        }
        let activation = match r.u32()? {
            0 => Activation::Identity,
            1 => Activation::Relu,
            other => return Err(r.fail(format!("unknown activation tag {other}"))),
        };
        shapes.push((fan_in as usize, fan_out as usize, activation));
    }
    for w in shapes.windows(2) {
        if w[0].1 != w[1].0 {
            return Err(r.fail(format!(
                "layer output {} feeds layer input {}",
                w[0].1, w[1].0
            )));
        }
    }
    let embed_dim = r.u32()? as usize;
    if embed_dim != shapes.last().unwrap().1 {
        return Err(r.fail(format!(
            "embed_dim {embed_dim} disagrees with final layer output {}",
            shapes.last().unwrap().1
        )));
    }
    let num_classes = r.u32()?;
    if num_classes < 2 || num_classes > MAX_DIM {
        return Err(r.fail(format!("implausible class count {num_classes}")));
    }
    let num_classes = num_classes as usize;
    let flags = r.u32()?;
    if flags & !FLAG_VELOCITY != 0 {
        return Err(r.fail(format!("unknown flags {flags:#x}")));
    }

    let mut layers = Vec::with_capacity(shapes.len());
    for &(fan_in, fan_out, activation) in &shapes {
        let weights = r.matrix(fan_out, fan_in)?;
        let biases = r.vec(fan_out)?;
        layers.push(DenseLayer {
            weights,
            biases,
            activation,
        });
    }
    let classifier_offset = r.pos as u64;
    let classifier_raw = r.matrix(embed_dim, num_classes)?;
    let classifier = ClassifierMatrix::new(classifier_raw).map_err(|e| Error::CheckpointParse {
        offset: classifier_offset,
        detail: format!("classifier block invalid: {e}"),
    })?;
    let params = ModelParams { layers, classifier };

    let velocity = if flags & FLAG_VELOCITY != 0 {
        let mut layer_weights = Vec::with_capacity(shapes.len());
        let mut layer_biases = Vec::with_capacity(shapes.len());
        for &(fan_in, fan_out, _) in &shapes {
            layer_weights.push(r.matrix(fan_out, fan_in)?);
            layer_biases.push(r.vec(fan_out)?);
        }
        let classifier = r.matrix(embed_dim, num_classes)?;
        Some(ParamTensors {
            layer_weights,
            layer_biases,
            classifier,
        })
    } else {
        None
    };

    let curriculum_offset = r.pos as u64;
    let t = r.f64()?;
    let momentum = r.f64()?;
    let iteration = r.u64()?;
    let statistic = match r.u32()? {
        0 => StatisticKind::MeanPositiveCosine,
        1 => StatisticKind::ModePositiveCosine,
        2 => StatisticKind::MeanGtProbability,
        other => return Err(r.fail(format!("unknown statistic tag {other}"))),
    };
    let placement = match r.u32()? {
        0 => MomentumPlacement::OnHistory,
        1 => MomentumPlacement::OnStatistic,
        other => return Err(r.fail(format!("unknown placement tag {other}"))),
    };
    let curriculum = CurriculumState::restore(t, momentum, iteration, statistic, placement)
        .map_err(|e| Error::CheckpointParse {
            offset: curriculum_offset,
            detail: format!("curriculum block invalid: {e}"),
        })?;

    if r.pos != buf.len() {
        return Err(Error::CheckpointParse {
            offset: r.pos as u64,
            detail: format!("{} trailing bytes", buf.len() - r.pos),
        });
    }

    Ok(Checkpoint {
        params,
        curriculum,
        velocity,
    })
}
