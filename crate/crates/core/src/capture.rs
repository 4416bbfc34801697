//! Capture files: a flat sequence of `rx_time_us(8) || frame_len(2) || frame`
//! records, big-endian.

use std::io::{self, Read, Write};

use crate::beacon::{BeaconFrame, MAX_FRAME_LEN};
use crate::wire::DecodeError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptureRecord {
    pub rx_time_us: u64,
    pub frame: Vec<u8>,
}

impl CaptureRecord {
    pub fn decode_frame(&self) -> Result<BeaconFrame, DecodeError> {
        BeaconFrame::deserialize(&self.frame)
    }
}

pub struct CaptureWriter<W: Write> {
    inner: W,
}

impl<W: Write> CaptureWriter<W> {
    pub fn new(inner: W) -> Self {
        CaptureWriter { inner }
    }

    pub fn write_record(&mut self, rx_time_us: u64, frame: &[u8]) -> io::Result<()> {
        if frame.len() > MAX_FRAME_LEN {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!("frame of {} octets exceeds {MAX_FRAME_LEN}", frame.len()),
            ));
        }
        self.inner.write_all(&rx_time_us.to_be_bytes())?;
        self.inner.write_all(&(frame.len() as u16).to_be_bytes())?;
        self.inner.write_all(frame)
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

/// Parses a whole capture held in memory.
pub fn read_capture(bytes: &[u8]) -> Result<Vec<CaptureRecord>, DecodeError> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        if bytes.len() - pos < 10 {
            return Err(DecodeError::new(pos, "truncated capture record header"));
        }
        let rx_time_us = u64::from_be_bytes(bytes[pos..pos + 8].try_into().unwrap());
        let len = u16::from_be_bytes([bytes[pos + 8], bytes[pos + 9]]) as usize;
        let start = pos + 10;
        if bytes.len() - start < len {
            return Err(DecodeError::new(start, "truncated capture record body"));
        }
        out.push(CaptureRecord {
            rx_time_us,
            frame: bytes[start..start + len].to_vec(),
        });
        pos = start + len;
    }
    Ok(out)
}

pub fn read_capture_from<R: Read>(mut r: R) -> io::Result<Vec<CaptureRecord>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    read_capture(&buf).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_truncation() {
        let mut w = CaptureWriter::new(Vec::new());
        w.write_record(10, b"abc").unwrap();
        w.write_record(20, b"").unwrap();
        let bytes = w.into_inner();
        let recs = read_capture(&bytes).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0], CaptureRecord { rx_time_us: 10, frame: b"abc".to_vec() });
        assert_eq!(recs[1].rx_time_us, 20);
        assert_eq!(read_capture(&bytes[..12]).unwrap_err().offset, 10);
        assert_eq!(read_capture(&bytes[..15]).unwrap_err().offset, 13);
        assert!(CaptureWriter::new(Vec::new()).write_record(0, &[0; 2321]).is_err());
    }
}
