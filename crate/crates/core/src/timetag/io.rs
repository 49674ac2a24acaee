use super::{StreamHeader, TimeTagError, TimeTagRecord, FIXED_HEADER_BYTES, MAGIC, RECORD_BYTES, VERSION};
use std::io::{self, BufReader, BufWriter, Read, Write};

fn encode_record(r: &TimeTagRecord) -> [u8; RECORD_BYTES] {
    let mut b = [0u8; RECORD_BYTES];
    b[0..4].copy_from_slice(&r.trial.to_le_bytes());
    b[4] = r.channel;
    b[5..13].copy_from_slice(&r.time.to_le_bytes());
    b
}

fn decode_record(b: &[u8; RECORD_BYTES]) -> TimeTagRecord {
    TimeTagRecord {
        trial: u32::from_le_bytes(b[0..4].try_into().unwrap()),
        channel: b[4],
        time: u64::from_le_bytes(b[5..13].try_into().unwrap()),
    }
}

fn write_header<W: Write>(w: &mut W, header: &StreamHeader) -> Result<(), TimeTagError> {
    let meta = header.encode_metadata()?;
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&header.trial_period_ps.to_le_bytes())?;
    w.write_all(&header.n_trials.to_le_bytes())?;
    w.write_all(&header.fingerprint)?;
    w.write_all(&(meta.len() as u32).to_le_bytes())?;
    w.write_all(&meta)?;
    Ok(())
}

/// Incremental writer: header first, then records in (trial, time) order.
pub struct StreamWriter<W: Write> {
    out: BufWriter<W>,
    last: Option<(u32, u64)>,
    written: u64,
}

impl<W: Write> StreamWriter<W> {
    pub fn new(out: W, header: &StreamHeader) -> Result<Self, TimeTagError> {
        let mut out = BufWriter::with_capacity(1 << 16, out);
        write_header(&mut out, header)?;
        Ok(Self { out, last: None, written: 0 })
    }

    pub fn append(&mut self, r: &TimeTagRecord) -> Result<(), TimeTagError> {
        if let Some(prev) = self.last {
            if r.key() < prev {
                return Err(TimeTagError::Unsorted { index: self.written });
            }
        }
        self.out.write_all(&encode_record(r))?;
        self.last = Some(r.key());
        self.written += 1;
        Ok(())
    }

    pub fn records_written(&self) -> u64 {
        self.written
    }

    /// Flushes and returns the underlying writer.
    pub fn finish(self) -> Result<W, TimeTagError> {
        self.out.into_inner().map_err(|e| TimeTagError::Io(e.into_error()))
    }
}

/// Writes a whole stream. Fails without writing any record if the input is unsorted.
pub fn write_stream<W: Write>(out: W, header: &StreamHeader, records: &[TimeTagRecord]) -> Result<(), TimeTagError> {
    if let Some(i) = records.windows(2).position(|w| w[1].key() < w[0].key()) {
        return Err(TimeTagError::Unsorted { index: i as u64 + 1 });
    }
    let mut w = StreamWriter::new(out, header)?;
    for r in records {
        w.append(r)?;
    }
    w.finish()?;
    Ok(())
}

/// Streaming reader with O(1) memory in the record count. Invariants are
/// checked record by record; iteration stops after the first error.
pub struct StreamReader<R: Read> {
    src: BufReader<R>,
    header: StreamHeader,
    offset: u64,
    last: Option<(u32, u64)>,
    done: bool,
}

fn read_exact_or_eof<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(got)
}

impl<R: Read> StreamReader<R> {
    pub fn new(src: R) -> Result<Self, TimeTagError> {
        let mut src = BufReader::with_capacity(1 << 16, src);
        let mut fixed = [0u8; FIXED_HEADER_BYTES];
        let got = read_exact_or_eof(&mut src, &mut fixed)?;
        if got >= 8 && fixed[0..8] != MAGIC {
            return Err(TimeTagError::BadMagic {
                found: fixed[0..8].try_into().unwrap(),
            });
        }
        if got < FIXED_HEADER_BYTES {
            return Err(TimeTagError::TruncatedHeader { offset: got as u64 });
        }
        let version = u16::from_le_bytes(fixed[8..10].try_into().unwrap());
        if version != VERSION {
            return Err(TimeTagError::VersionMismatch {
                found: version,
                expected: VERSION,
            });
        }
        let trial_period_ps = u64::from_le_bytes(fixed[10..18].try_into().unwrap());
        let n_trials = u64::from_le_bytes(fixed[18..26].try_into().unwrap());
        let fingerprint: [u8; 32] = fixed[26..58].try_into().unwrap();
        let meta_len = u32::from_le_bytes(fixed[58..62].try_into().unwrap()) as usize;
        let mut meta = Vec::new();
        let got = (&mut src).take(meta_len as u64).read_to_end(&mut meta)?;
        if got < meta_len {
            return Err(TimeTagError::TruncatedHeader {
                offset: (FIXED_HEADER_BYTES + got) as u64,
            });
        }
        let metadata = StreamHeader::decode_metadata(&meta)?;
        Ok(Self {
            src,
            header: StreamHeader {
                trial_period_ps,
                n_trials,
                fingerprint,
                metadata,
            },
            offset: (FIXED_HEADER_BYTES + meta_len) as u64,
            last: None,
            done: false,
        })
    }

    pub fn header(&self) -> &StreamHeader {
        &self.header
    }

    /// Byte offset of the next record.
    pub fn offset(&self) -> u64 {
        self.offset
    }

    fn next_record(&mut self) -> Result<Option<TimeTagRecord>, TimeTagError> {
        let mut buf = [0u8; RECORD_BYTES];
        let got = read_exact_or_eof(&mut self.src, &mut buf)?;
        if got == 0 {
            return Ok(None);
        }
        if got < RECORD_BYTES {
            return Err(TimeTagError::TruncatedRecord { offset: self.offset, got });
        }
        let r = decode_record(&buf);
        if let Err(reason) = self.header.check(&r) {
            return Err(TimeTagError::Invariant { offset: self.offset, reason });
        }
        if let Some(prev) = self.last {
            if r.key() < prev {
                return Err(TimeTagError::Invariant {
                    offset: self.offset,
                    reason: format!("record (trial {}, time {}) precedes its predecessor", r.trial, r.time),
                });
            }
        }
        self.last = Some(r.key());
        self.offset += RECORD_BYTES as u64;
        Ok(Some(r))
    }
}

impl<R: Read> Iterator for StreamReader<R> {
    type Item = Result<TimeTagRecord, TimeTagError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_record() {
            Ok(Some(r)) => Some(Ok(r)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

pub fn read_stream<R: Read>(src: R) -> Result<StreamReader<R>, TimeTagError> {
    StreamReader::new(src)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timetag::TimeTagStream;

    fn sample() -> TimeTagStream {
        let mut h = StreamHeader::new(5_618_000, 4).with_meta("seed", 7).with_meta("note", "a b=c");
        h.fingerprint = [0xab; 32];
        TimeTagStream::new(
            h,
            vec![
                TimeTagRecord::new(0, 1, 10),
                TimeTagRecord::new(0, 2, 10),
                TimeTagRecord::new(2, 2, 5_617_999),
                TimeTagRecord::new(3, 1, 0),
            ],
        )
    }

    #[test]
    fn round_trip() {
        let s = sample();
        let bytes = s.to_bytes().unwrap();
        assert_eq!(bytes.len(), s.header.encoded_len().unwrap() + 4 * RECORD_BYTES);
        assert_eq!(TimeTagStream::from_bytes(&bytes).unwrap(), s);
    }

    #[test]
    fn empty_stream_is_header_only() {
        let s = TimeTagStream::new(StreamHeader::new(1000, 0), vec![]);
        let bytes = s.to_bytes().unwrap();
        assert_eq!(bytes.len(), FIXED_HEADER_BYTES);
        assert_eq!(TimeTagStream::from_bytes(&bytes).unwrap(), s);
    }

    #[test]
    fn record_layout_is_bit_exact() {
        let s = TimeTagStream::new(StreamHeader::new(0x0102, 3), vec![TimeTagRecord::new(0x0a0b0c0d, 2, 0x0102)]);
        let mut s = s;
        s.header.trial_period_ps = 0x1_0000;
        let b = s.to_bytes().unwrap();
        assert_eq!(&b[0..8], b"HOMTTAG\0");
        assert_eq!(&b[8..10], &[1, 0]);
        assert_eq!(&b[62..], &[0x0d, 0x0c, 0x0b, 0x0a, 2, 0x02, 0x01, 0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn unsorted_input_rejected() {
        let mut s = sample();
        s.records.swap(0, 2);
        assert!(matches!(s.to_bytes(), Err(TimeTagError::Unsorted { index: 1 })));
    }

    #[test]
    fn truncated_record_names_offset() {
        let s = sample();
        let mut bytes = s.to_bytes().unwrap();
        bytes.truncate(bytes.len() - 5);
        let reader = StreamReader::new(&bytes[..]).unwrap();
        let start = reader.offset();
        let out: Vec<_> = reader.collect();
        assert_eq!(out.len(), 4);
        match &out[3] {
            Err(TimeTagError::TruncatedRecord { offset, got }) => {
                assert_eq!(*offset, start + 3 * RECORD_BYTES as u64);
                assert_eq!(*got, 8);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(matches!(StreamReader::new(&bytes[..]), Err(TimeTagError::BadMagic { .. })));
        let mut bytes = sample().to_bytes().unwrap();
        bytes[8] = 9;
        assert!(matches!(
            StreamReader::new(&bytes[..]),
            Err(TimeTagError::VersionMismatch { found: 9, expected: 1 })
        ));
        assert!(matches!(StreamReader::new(&b"HOMTTAG\0\x01"[..]), Err(TimeTagError::TruncatedHeader { .. })));
    }

    #[test]
    fn invariant_violations_reported_lazily() {
        let mut s = sample();
        s.records[2].time = s.header.trial_period_ps;
        let bytes = s.to_bytes().unwrap();
        let out: Vec<_> = StreamReader::new(&bytes[..]).unwrap().collect();
        assert!(out[0].is_ok() && out[1].is_ok());
        assert!(matches!(&out[2], Err(TimeTagError::Invariant { .. })));
        assert_eq!(out.len(), 3);

        let mut s = sample();
        s.records[0].channel = 3;
        let bytes = s.to_bytes().unwrap();
        assert!(StreamReader::new(&bytes[..]).unwrap().next().unwrap().is_err());

        let mut s = sample();
        s.records[3].trial = 4;
        let bytes = s.to_bytes().unwrap();
        assert!(StreamReader::new(&bytes[..]).unwrap().nth(3).unwrap().is_err());
    }

    #[test]
    fn size_arithmetic_for_ten_million() {
        let h = StreamHeader::new(1, 1);
        assert_eq!(h.encoded_len().unwrap() + RECORD_BYTES * 10_000_000, FIXED_HEADER_BYTES + 130_000_000);
    }
}
