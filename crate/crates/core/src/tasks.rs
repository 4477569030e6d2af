//! Datasets and synthetic tasks: IDX image files, the delay task, history
//! reconstruction with the scaled Legendre memory, and resampling.

use std::io::Write;
use std::path::Path;

use crate::error::{LsslError, Result};
use crate::hippo::legs_matrix;
use crate::layer::{Labels, SequenceBatch};
use crate::linalg::{DenseMatrix, Lu, RealVector};
use crate::rng;
use crate::special::legendre_normalized;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const IDX_CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Classify,
    Regress,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sequences: SequenceBatch,
    pub split: Split,
    pub task_kind: TaskKind,
    /// Number of classes for classification, output width for regression.
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Sequence length, or 0 for an empty dataset.
    pub fn seq_len(&self) -> usize {
        self.sequences.data.first().map_or(0, |d| d.rows())
    }

    /// CSV export, one row per sequence: the label, then the `L` input
    /// values. Regression sets write two rows per sequence, tagged `u` and
    /// `y`, holding the input and the first target column.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let row = |w: &mut W, tag: &str, vals: &mut dyn Iterator<Item = f64>| -> Result<()> {
            write!(w, "{tag}")?;
            for v in vals {
                write!(w, ",{}", fmt_f64(v))?;
            }
            writeln!(w)?;
            Ok(())
        };
        for (i, seq) in self.sequences.data.iter().enumerate() {
            match &self.sequences.labels {
                Labels::Classes(c) => row(&mut w, &c[i].to_string(), &mut seq.column(0).into_iter())?,
                Labels::Targets(t) => {
                    row(&mut w, "u", &mut seq.column(0).into_iter())?;
                    row(&mut w, "y", &mut t[i].column(0).into_iter())?;
                }
            }
        }
        Ok(())
    }
}

/// Decimal with 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| LsslError::Format("truncated IDX header".into()))
}

/// Parsed IDX image file: `count` images of `rows x cols` bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<Vec<u8>>,
}

/// Parse an IDX image file. At most `limit` images are materialized; the
/// full declared payload must still be present.
pub fn parse_idx_images(bytes: &[u8], limit: usize) -> Result<IdxImages> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(LsslError::Format(format!("bad IDX image magic {magic:#010x}")));
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    if rows == 0 || cols == 0 {
        return Err(LsslError::Format(format!("IDX image dims {rows}x{cols}")));
    }
    let size = rows
        .checked_mul(cols)
        .ok_or_else(|| LsslError::Format("IDX image size overflows".into()))?;
    let need = count
        .checked_mul(size)
        .and_then(|p| p.checked_add(16))
        .ok_or_else(|| LsslError::Format("IDX payload size overflows".into()))?;
    if bytes.len() != need {
        return Err(LsslError::Format(format!("IDX image file has {} bytes, header implies {need}", bytes.len())));
    }
    let take = count.min(limit);
    let pixels = (0..take).map(|i| bytes[16 + i * size..16 + (i + 1) * size].to_vec()).collect();
    Ok(IdxImages { rows, cols, pixels })
}

/// Parse an IDX label file, returning at most `limit` labels.
pub fn parse_idx_labels(bytes: &[u8], limit: usize) -> Result<(usize, Vec<u8>)> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(LsslError::Format(format!("bad IDX label magic {magic:#010x}")));
    }
    let count = be_u32(bytes, 4)? as usize;
    let need = count
        .checked_add(8)
        .ok_or_else(|| LsslError::Format("IDX payload size overflows".into()))?;
    if bytes.len() != need {
        return Err(LsslError::Format(format!("IDX label file has {} bytes, header implies {need}", bytes.len())));
    }
    Ok((count, bytes[8..8 + count.min(limit)].to_vec()))
}

/// Build a classification dataset from parsed IDX contents.
pub fn idx_dataset(images: &IdxImages, labels: &[u8], split: Split) -> Result<Dataset> {
    if images.pixels.len() != labels.len() {
        return Err(LsslError::DimensionMismatch(format!(
            "{} images with {} labels",
            images.pixels.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= IDX_CLASSES) {
        return Err(LsslError::Format(format!("label {bad} out of range")));
    }
    let len = images.rows * images.cols;
    let data = images
        .pixels
        .iter()
        .map(|p| DenseMatrix::from_vec(len, 1, p.iter().map(|&b| b as f64 / 255.0).collect()))
        .collect::<Result<Vec<_>>>()?;
    let labels = Labels::Classes(labels.iter().map(|&l| l as usize).collect());
    Ok(Dataset { sequences: SequenceBatch::new(data, labels)?, split, task_kind: TaskKind::Classify, classes: IDX_CLASSES })
}

/// Load up to `limit` image/label pairs. Each image becomes a 1-D sequence
/// of `rows * cols` pixels scaled to `[0, 1]`.
pub fn load_idx(images_path: &Path, labels_path: &Path, limit: usize) -> Result<Dataset> {
    let img_bytes = std::fs::read(images_path)?;
    let lbl_bytes = std::fs::read(labels_path)?;
    let images = parse_idx_images(&img_bytes, limit)?;
    let (count, labels) = parse_idx_labels(&lbl_bytes, limit)?;
    let declared = be_u32(&img_bytes, 4)? as usize;
    if declared != count {
        return Err(LsslError::DimensionMismatch(format!("{declared} images but {count} labels")));
    }
    idx_dataset(&images, &labels, Split::Train)
}

pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[Vec<u8>]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + pixels.len() * rows * cols);
    for v in [IDX_IMAGES_MAGIC as usize, pixels.len(), rows, cols] {
        let v = u32::try_from(v).map_err(|_| LsslError::InvalidParameter("IDX dimension exceeds u32".into()))?;
        out.extend_from_slice(&v.to_be_bytes());
    }
    for p in pixels {
        if p.len() != rows * cols {
            return Err(LsslError::DimensionMismatch(format!("image of {} bytes, expected {}", p.len(), rows * cols)));
        }
        out.extend_from_slice(p);
    }
    Ok(out)
}

pub fn encode_idx_labels(labels: &[u8]) -> Result<Vec<u8>> {
    let count = u32::try_from(labels.len()).map_err(|_| LsslError::InvalidParameter("too many labels".into()))?;
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&count.to_be_bytes());
    out.extend_from_slice(labels);
    Ok(out)
}

pub fn write_idx(images_path: &Path, labels_path: &Path, rows: usize, cols: usize, pixels: &[Vec<u8>], labels: &[u8]) -> Result<()> {
    std::fs::write(images_path, encode_idx_images(rows, cols, pixels)?)?;
    std::fs::write(labels_path, encode_idx_labels(labels)?)?;
    Ok(())
}

/// `n` white-noise sequences in `[-1, 1]` of length `len`, each paired with
/// itself shifted right by `delay` (zeros before).
pub fn make_delay_task(len: usize, delay: usize, n: usize, seed: u64) -> Result<Dataset> {
    if delay >= len {
        return Err(LsslError::InvalidParameter(format!("delay {delay} must be below length {len}")));
    }
    let mut r = rng::stream(seed, 0);
    let mut data = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let u = rng::uniform_vec(&mut r, len, -1.0, 1.0);
        let y = (0..len).map(|t| if t >= delay { u[t - delay] } else { 0.0 }).collect();
        data.push(DenseMatrix::from_vec(len, 1, u)?);
        targets.push(DenseMatrix::from_vec(len, 1, y)?);
    }
    Ok(Dataset {
        sequences: SequenceBatch::new(data, Labels::Targets(targets))?,
        split: Split::Train,
        task_kind: TaskKind::Regress,
        classes: 1,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionReport {
    pub n: usize,
    pub l2_error: f64,
    pub signal_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub x_final: RealVector,
    pub reconstruction: RealVector,
    pub report: ReconstructionReport,
}

/// Compress `u` (sampled every `dt`, first sample at `t = dt`) into `n`
/// scaled-Legendre coefficients and rebuild it from the final state.
pub fn reconstruct_history(u: &[f64], dt: f64, n: usize, signal_id: &str) -> Result<Reconstruction> {
    if n == 0 {
        return Err(LsslError::InvalidParameter("state order N must be at least 1".into()));
    }
    if u.len() < 2 {
        return Err(LsslError::InvalidParameter("need at least two samples".into()));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(LsslError::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    let sys = legs_matrix(n)?;
    let a = &sys.a;
    // b_n = sqrt((2n+1)/2): coefficients against the normalized basis
    let b2: Vec<f64> = (0..n).map(|k| 2.0 * ((2 * k + 1) as f64 / 2.0).sqrt()).collect();

    // x(t0): coefficients of the constant history u[0] on [0, t0]
    let rhs0: Vec<f64> = b2.iter().map(|b| b * u[0]).collect();
    let mut x = Lu::new(a)?.solve(&rhs0);
    let mut rhs = vec![0.0; n];
    let mut ax = vec![0.0; n];
    for k in 1..u.len() {
        let uk = 0.5 * (u[k - 1] + u[k]);
        // effective step dt/t, taken exactly: the dynamics are time-invariant in ln t
        let h = ((k + 1) as f64 / k as f64).ln();
        a.matvec_into(&x, &mut ax);
        for i in 0..n {
            rhs[i] = x[i] - 0.5 * h * ax[i] + h * b2[i] * uk;
        }
        let lhs = a.scale(0.5 * h).shifted_identity(1.0);
        x = Lu::new(&lhs)?.solve(&rhs);
    }

    let len = u.len();
    let t_end = len as f64 * dt;
    let mut recon = Vec::with_capacity(len);
    for k in 0..len {
        let s = (k + 1) as f64 * dt;
        let p = legendre_normalized(n, 2.0 * s / t_end - 1.0);
        recon.push(p.iter().zip(&x).map(|(p, x)| p * x).sum::<f64>());
    }
    let num: f64 = u.iter().zip(&recon).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let den: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let l2_error = if den > 0.0 { num / den } else { num };
    Ok(Reconstruction {
        x_final: x.into(),
        reconstruction: recon.into(),
        report: ReconstructionReport { n, l2_error, signal_id: signal_id.to_string() },
    })
}

/// Change the sampling rate by `factor`: `1` is the identity, `0.5` keeps
/// the even-indexed samples, `2` inserts linear midpoints (holding the last
/// sample) to give length `2L`.
pub fn resample_sequence(u: &[f64], factor: f64) -> Result<Vec<f64>> {
    if factor == 1.0 {
        Ok(u.to_vec())
    } else if factor == 0.5 {
        Ok(u.iter().step_by(2).copied().collect())
    } else if factor == 2.0 {
        let mut out = Vec::with_capacity(2 * u.len());
        for (i, &v) in u.iter().enumerate() {
            out.push(v);
            out.push(u.get(i + 1).map_or(v, |w| 0.5 * (v + w)));
        }
        Ok(out)
    } else {
        Err(LsslError::InvalidParameter(format!("unsupported resampling factor {factor}")))
    }
}

/// Parse a signal file: numbers separated by commas, whitespace or
/// newlines. Blank lines and `#` comments are skipped.
pub fn parse_signal_csv(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        for tok in line.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
            let v: f64 = tok
                .parse()
                .map_err(|_| LsslError::Format(format!("line {}: not a number: {tok:?}", lineno + 1)))?;
            if !v.is_finite() {
                return Err(LsslError::NonFinite(format!("line {}: {tok}", lineno + 1)));
            }
            out.push(v);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn band_limited(len: usize) -> Vec<f64> {
        (0..len)
            .map(|k| {
                let s = (k as f64 + 0.5) / len as f64;
                (2.0 * std::f64::consts::PI * 1.5 * s).sin() + 0.5 * (2.0 * std::f64::consts::PI * 3.2 * s + 0.4).cos()
            })
            .collect()
    }

    #[test]
    fn idx_round_trip_and_limit() {
        let pixels: Vec<Vec<u8>> = (0..5u8).map(|i| (0..12).map(|j| i * 40 + j).collect()).collect();
        let labels = [3u8, 1, 4, 1, 5];
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
        write_idx(&ip, &lp, 3, 4, &pixels, &labels).unwrap();
        let raw = std::fs::read(&ip).unwrap();
        assert_eq!(parse_idx_images(&raw, usize::MAX).unwrap().pixels, pixels);
        assert_eq!(encode_idx_images(3, 4, &pixels).unwrap(), raw);

        let ds = load_idx(&ip, &lp, 100).unwrap();
        assert_eq!(ds.len(), 5);
        assert_eq!(ds.seq_len(), 12);
        assert_eq!(ds.sequences.labels, Labels::Classes(vec![3, 1, 4, 1, 5]));
        assert_eq!(ds.sequences.data[1][(2, 0)], 42.0 / 255.0);

        let empty = load_idx(&ip, &lp, 0).unwrap();
        assert!(empty.is_empty());
        assert_eq!(load_idx(&ip, &lp, 2).unwrap().len(), 2);
    }

    #[test]
    fn idx_mnist_sized_header() {
        let mut bytes = Vec::new();
        for v in [0x803u32, 60000, 28, 28] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        bytes.resize(16 + 60000 * 784, 0);
        bytes[16] = 255;
        let img = parse_idx_images(&bytes, 3).unwrap();
        assert_eq!((img.rows, img.cols, img.pixels.len()), (28, 28, 3));
        let mut lbl = encode_idx_labels(&vec![0u8; 60000]).unwrap();
        lbl[8] = 7;
        let (count, labels) = parse_idx_labels(&lbl, 3).unwrap();
        assert_eq!(count, 60000);
        let ds = idx_dataset(&img, &labels, Split::Train).unwrap();
        assert_eq!(ds.sequences.labels, Labels::Classes(vec![7, 0, 0]));
        assert_eq!(ds.sequences.data[0][(0, 0)], 1.0);
        assert_eq!(ds.seq_len(), 784);
    }

    #[test]
    fn idx_rejects_corruption() {
        let good = encode_idx_images(2, 2, &[vec![1, 2, 3, 4]]).unwrap();
        let mut bad = good.clone();
        bad[3] = 0x01;
        assert!(matches!(parse_idx_images(&bad, 10), Err(LsslError::Format(_))));
        assert!(matches!(parse_idx_images(&good[..good.len() - 1], 10), Err(LsslError::Format(_))));
        assert!(matches!(parse_idx_images(&good[..7], 10), Err(LsslError::Format(_))));
        let mut huge = good.clone();
        huge[4..8].copy_from_slice(&u32::MAX.to_be_bytes());
        huge[8..16].copy_from_slice(&[0xff; 8]);
        assert!(parse_idx_images(&huge, 10).is_err());
        let mut flat = good.clone();
        flat[8..12].copy_from_slice(&0u32.to_be_bytes());
        assert!(matches!(parse_idx_images(&flat, 10), Err(LsslError::Format(_))));
        let lbl = encode_idx_labels(&[1, 2]).unwrap();
        assert!(parse_idx_labels(&good, 10).is_err());
        assert!(parse_idx_labels(&lbl[..9], 10).is_err());
        let img = parse_idx_images(&good, 10).unwrap();
        assert!(matches!(idx_dataset(&img, &[1, 2], Split::Test), Err(LsslError::DimensionMismatch(_))));
        assert!(idx_dataset(&img, &[10], Split::Test).is_err());
    }

    #[test]
    fn delay_target_is_literal_shift() {
        let ds = make_delay_task(40, 7, 3, 11).unwrap();
        let Labels::Targets(t) = &ds.sequences.labels else { panic!() };
        for (u, y) in ds.sequences.data.iter().zip(t) {
            for k in 0..40 {
                let want = if k >= 7 { u[(k - 7, 0)] } else { 0.0 };
                assert_eq!(y[(k, 0)], want);
                assert!((-1.0..=1.0).contains(&u[(k, 0)]));
            }
        }
        assert_eq!(ds, make_delay_task(40, 7, 3, 11).unwrap());
        assert_ne!(ds, make_delay_task(40, 7, 3, 12).unwrap());
    }

    #[test]
    fn delay_boundaries() {
        let ds = make_delay_task(10, 0, 2, 1).unwrap();
        let Labels::Targets(t) = &ds.sequences.labels else { panic!() };
        assert_eq!(&t[0], &ds.sequences.data[0]);
        let ds = make_delay_task(10, 9, 2, 1).unwrap();
        let Labels::Targets(t) = &ds.sequences.labels else { panic!() };
        assert!((0..9).all(|k| t[0][(k, 0)] == 0.0));
        assert_eq!(t[0][(9, 0)], ds.sequences.data[0][(0, 0)]);
        assert!(make_delay_task(10, 10, 1, 1).is_err());
    }

    #[test]
    fn constant_signal_is_reconstructed() {
        let u = vec![1.0; 1000];
        for n in [1, 4, 16, 64] {
            let r = reconstruct_history(&u, 1e-3, n, "const").unwrap();
            assert!(r.report.l2_error < 1e-3, "N={n} err={}", r.report.l2_error);
        }
    }

    #[test]
    fn error_shrinks_with_order() {
        let u = band_limited(2000);
        let errs: Vec<f64> = [4, 8, 16, 32, 64]
            .iter()
            .map(|&n| reconstruct_history(&u, 1e-3, n, "bl").unwrap().report.l2_error)
            .collect();
        for w in errs.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{errs:?}");
        }
        assert!(errs[4] < 0.1 * errs[0], "{errs:?}");

        let mut r = rng::stream(5, 0);
        let noise = rng::uniform_vec(&mut r, 1000, -1.0, 1.0);
        let e4 = reconstruct_history(&noise, 1e-3, 4, "noise").unwrap().report.l2_error;
        let e64 = reconstruct_history(&noise, 1e-3, 64, "noise").unwrap().report.l2_error;
        assert!(e64 < e4);
    }

    #[test]
    fn reconstruct_errors() {
        assert!(reconstruct_history(&[1.0, 2.0], 0.1, 0, "x").is_err());
        assert!(reconstruct_history(&[1.0], 0.1, 4, "x").is_err());
        assert!(reconstruct_history(&[1.0, 2.0], 0.0, 4, "x").is_err());
    }

    #[test]
    fn resample_cases() {
        let u = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(resample_sequence(&u, 1.0).unwrap(), u);
        assert_eq!(resample_sequence(&u, 0.5).unwrap(), vec![1.0, 3.0]);
        assert_eq!(resample_sequence(&u, 2.0).unwrap(), vec![1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.0]);
        assert!(resample_sequence(&u, 3.0).is_err());
        let smooth = band_limited(300);
        let back = resample_sequence(&resample_sequence(&smooth, 2.0).unwrap(), 0.5).unwrap();
        assert_eq!(back.len(), smooth.len());
        for (a, b) in back.iter().zip(&smooth) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn signal_csv() {
        assert_eq!(parse_signal_csv("# sig\n1, 2.5\n\n-3e-1 4\n").unwrap(), vec![1.0, 2.5, -0.3, 4.0]);
        assert!(parse_signal_csv("1,x").is_err());
        assert!(parse_signal_csv("1,inf").is_err());
        assert!(parse_signal_csv("").unwrap().is_empty());
    }

    #[test]
    fn csv_export_rows() {
        let ds = make_delay_task(3, 1, 1, 0).unwrap();
        let mut out = Vec::new();
        ds.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("u,") && lines[1].starts_with("y,0.0"));
        assert_eq!(lines[0].split(',').count(), 4);
        let back: Vec<f64> = lines[0].split(',').skip(1).map(|t| t.parse().unwrap()).collect();
        assert_eq!(back, ds.sequences.data[0].column(0));
    }
}
