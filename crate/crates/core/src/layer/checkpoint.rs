//! Binary checkpoint: magic, eight little-endian `u32` dimensions, then
//! every tensor as little-endian `f64` in declaration order.

use std::path::Path;

use super::{LsslLayer, LsslModel, NormPlacement, Pooling, StateMatrix, TrainMode};
use crate::error::{LsslError, Result};
use crate::linalg::DenseMatrix;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LSSL0001";
const HEADER_LEN: usize = 8 + 8 * 4;

fn put(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode_checkpoint(model: &LsslModel) -> Result<Vec<u8>> {
    let first = model.layers.first().ok_or_else(|| LsslError::InvalidParameter("model has no layers".into()))?;
    let (h, n, m) = (model.features(), first.order(), first.channels());
    let mode = match first.mode() {
        TrainMode::Fixed => 0u32,
        TrainMode::Full => 1,
    };
    let norm = match model.norm {
        NormPlacement::PreNorm => 0u32,
        NormPlacement::PostNorm => 1,
    };
    let dims = [h, n, m, model.layers.len(), model.classes(), model.input_dim()];
    let mut out = CHECKPOINT_MAGIC.to_vec();
    for d in dims {
        let v = u32::try_from(d).map_err(|_| LsslError::InvalidParameter(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&mode.to_le_bytes());
    out.extend_from_slice(&norm.to_le_bytes());
    put(&mut out, model.encoder_w.as_slice());
    put(&mut out, &model.encoder_b);
    for layer in &model.layers {
        if layer.features() != h || layer.order() != n || layer.channels() != m {
            return Err(LsslError::DimensionMismatch("layers disagree on H, N or M".into()));
        }
        put(&mut out, layer.state_matrix().to_dense()?.as_slice());
        put(&mut out, layer.b().as_slice());
        for c in &layer.c {
            put(&mut out, c.as_slice());
        }
        put(&mut out, layer.d.as_slice());
        put(&mut out, layer.dt());
        put(&mut out, layer.ff_weight.as_slice());
        put(&mut out, &layer.ff_bias);
        put(&mut out, &layer.norm_gain);
        put(&mut out, &layer.norm_bias);
    }
    put(&mut out, model.decoder_w.as_slice());
    put(&mut out, &model.decoder_b);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, count: usize) -> Result<Vec<f64>> {
        let end = count
            .checked_mul(8)
            .and_then(|b| b.checked_add(self.at))
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| LsslError::Format("checkpoint truncated".into()))?;
        let vals: Vec<f64> = self.bytes[self.at..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        self.at = end;
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(LsslError::Format("non-finite parameter in checkpoint".into()));
        }
        Ok(vals)
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DenseMatrix> {
        DenseMatrix::from_vec(rows, cols, self.take(rows * cols)?)
    }
}

/// Parse a checkpoint. Pooling is not stored; the model comes back with
/// `MeanOverTime` and the caller sets the task's pooling. `A` is restored
/// as a dense matrix.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<LsslModel> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(LsslError::Format("bad checkpoint magic or header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().expect("4 bytes")) as usize;
    let (h, n, m, depth, classes, input_dim) = (word(0), word(1), word(2), word(3), word(4), word(5));
    let mode = match word(6) {
        0 => TrainMode::Fixed,
        1 => TrainMode::Full,
        v => return Err(LsslError::Format(format!("unknown mode {v}"))),
    };
    let norm = match word(7) {
        0 => NormPlacement::PreNorm,
        1 => NormPlacement::PostNorm,
        v => return Err(LsslError::Format(format!("unknown norm placement {v}"))),
    };
    if [h, n, m, depth, classes, input_dim].contains(&0) {
        return Err(LsslError::Format("zero dimension in checkpoint header".into()));
    }
    // size check before any allocation
    let per_layer = [n * n, h * n, h * m * n, h * m, h, h * h * m, h, h, h];
    let expected = (|| {
        let mut total = h.checked_mul(input_dim)?.checked_add(h)?;
        let mut layer = 0usize;
        for v in per_layer {
            layer = layer.checked_add(v)?;
        }
        total = total.checked_add(layer.checked_mul(depth)?)?;
        total = total.checked_add(classes.checked_mul(h)?)?.checked_add(classes)?;
        total.checked_mul(8)?.checked_add(HEADER_LEN)
    })();
    if expected != Some(bytes.len()) {
        return Err(LsslError::Format(format!("checkpoint size {} does not match its header", bytes.len())));
    }
    let mut r = Reader { bytes, at: HEADER_LEN };
    let encoder_w = r.matrix(h, input_dim)?;
    let encoder_b = r.take(h)?;
    let mut layers = Vec::with_capacity(depth);
    for _ in 0..depth {
        let a = r.matrix(n, n)?;
        let b = r.matrix(h, n)?;
        let c = (0..h).map(|_| r.matrix(m, n)).collect::<Result<Vec<_>>>()?;
        let d = r.matrix(h, m)?;
        let dt = r.take(h)?;
        let ff_weight = r.matrix(h, h * m)?;
        let ff_bias = r.take(h)?;
        let gain = r.take(h)?;
        let bias = r.take(h)?;
        let layer = LsslLayer::from_parts(StateMatrix::Dense(a), b, dt, c, d, ff_weight, ff_bias, gain, bias, norm, mode)
            .map_err(|e| LsslError::Format(format!("invalid layer: {e}")))?;
        layers.push(layer);
    }
    let decoder_w = r.matrix(classes, h)?;
    let decoder_b = r.take(classes)?;
    Ok(LsslModel { encoder_w, encoder_b, layers, decoder_w, decoder_b, norm, pooling: Pooling::MeanOverTime })
}

pub fn save_checkpoint(model: &LsslModel, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<LsslModel> {
    decode_checkpoint(&std::fs::read(path)?)
}
