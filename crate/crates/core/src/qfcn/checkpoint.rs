use std::io::{BufRead, Write};

use crate::error::{Error, Result};

use super::arch::Architecture;
use super::network::Network;
use super::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &str = "PGQN";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Writes `PGQN <version>\n<architecture>\n` followed by every stored value
/// (conv weights and biases, batch-norm scale, shift and running moments)
/// as little-endian `f32`, in layer order.
pub fn write_checkpoint<T: Scalar, W: Write>(net: &Network<T>, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}")?;
    writeln!(w, "{}", net.architecture())?;
    let mut buf = Vec::new();
    for slice in net.state_slices() {
        for v in slice {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)
}

/// Reads a checkpoint, refusing one whose architecture differs from
/// `expected`.
pub fn read_checkpoint<T: Scalar, R: BufRead>(mut r: R, expected: &Architecture) -> Result<Network<T>> {
    let mut line = String::new();
    r.read_line(&mut line)
        .map_err(|e| Error::CheckpointMismatch(format!("header: {e}")))?;
    let want = format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}");
    if line.trim_end() != want {
        return Err(Error::CheckpointMismatch(format!(
            "expected `{want}`, found `{}`",
            line.trim_end()
        )));
    }
    line.clear();
    r.read_line(&mut line)
        .map_err(|e| Error::CheckpointMismatch(format!("architecture: {e}")))?;
    let arch: Architecture = line.trim_end().parse()?;
    if &arch != expected {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint holds `{arch}`, expected `{expected}`"
        )));
    }
    let mut net = Network::<T>::init(&arch, 0)?;
    for slot in net.state_slices_mut() {
        let mut bytes = vec![0u8; 4 * slot.len()];
        r.read_exact(&mut bytes)
            .map_err(|e| Error::CheckpointMismatch(format!("truncated payload: {e}")))?;
        for (dst, b) in slot.iter_mut().zip(bytes.chunks_exact(4)) {
            *dst = T::from_f64(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64);
        }
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| Error::CheckpointMismatch(e.to_string()))? != 0 {
        return Err(Error::CheckpointMismatch("trailing bytes after payload".into()));
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qfcn::network::{Mode, Tensor};

    #[test]
    fn round_trip_is_exact() {
        let arch = Architecture::tiny();
        let mut net = Network::<f32>::init(&arch, 5).unwrap();
        let x = Tensor::new(2, 8, 8, (0..128).map(|i| (i as f32 * 0.37).sin()).collect()).unwrap();
        net.forward(&x, Mode::Train).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&net, &mut bytes).unwrap();
        let back: Network<f32> = read_checkpoint(bytes.as_slice(), &arch).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn mismatched_architecture_rejected() {
        let net = Network::<f32>::init(&Architecture::tiny(), 5).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&net, &mut bytes).unwrap();
        let err = read_checkpoint::<f32, _>(bytes.as_slice(), &Architecture::stride16());
        assert!(matches!(err, Err(Error::CheckpointMismatch(_))));
    }

    #[test]
    fn truncated_payload_rejected() {
        let arch = Architecture::tiny();
        let net = Network::<f32>::init(&arch, 5).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&net, &mut bytes).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(
            read_checkpoint::<f32, _>(bytes.as_slice(), &arch),
            Err(Error::CheckpointMismatch(_))
        ));
    }

    #[test]
    fn wrong_version_rejected() {
        let arch = Architecture::tiny();
        let text = format!("PGQN 0\n{arch}\n");
        assert!(matches!(
            read_checkpoint::<f32, _>(text.as_bytes(), &arch),
            Err(Error::CheckpointMismatch(_))
        ));
    }
}
