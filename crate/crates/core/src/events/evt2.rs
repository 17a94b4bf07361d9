//! Binary event-file format.
//!
//! Layout (all little-endian):
//!
//! ```text
//! header, 16 bytes: magic "EVT2" | version u16 | width u16 | height u16 | duration u48 (ns)
//! records, 13 bytes each: t u64 (ns) | x u16 | y u16 | polarity u8
//! ```
//!
//! The 48-bit duration field covers streams up to ~78 hours. Readers validate
//! the header, record framing and the stream invariants before returning.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{Event, EventStream, Polarity, StreamError};

pub const MAGIC: [u8; 4] = *b"EVT2";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 16;
pub const RECORD_LEN: usize = 13;

const MAX_DURATION_NS: u64 = (1 << 48) - 1;

#[derive(Debug, Error)]
pub enum Evt2Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic {0:02x?}, expected \"EVT2\"")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    BadVersion(u16),
    #[error("stream duration {0} ns exceeds the 48-bit duration field")]
    DurationOverflow(u64),
    #[error("file length is not header + whole records ({trailing} trailing bytes)")]
    Truncated { trailing: usize },
    #[error("record {index} has invalid polarity byte {byte}")]
    BadPolarity { index: usize, byte: u8 },
    #[error("invalid stream: {0}")]
    Stream(#[from] StreamError),
}

pub fn write<W: Write>(mut w: W, stream: &EventStream) -> Result<(), Evt2Error> {
    if stream.duration_ns() > MAX_DURATION_NS {
        return Err(Evt2Error::DurationOverflow(stream.duration_ns()));
    }
    let mut header = [0u8; HEADER_LEN];
    header[..4].copy_from_slice(&MAGIC);
    header[4..6].copy_from_slice(&VERSION.to_le_bytes());
    header[6..8].copy_from_slice(&stream.width().to_le_bytes());
    header[8..10].copy_from_slice(&stream.height().to_le_bytes());
    header[10..16].copy_from_slice(&stream.duration_ns().to_le_bytes()[..6]);
    w.write_all(&header)?;

    let mut record = [0u8; RECORD_LEN];
    for ev in stream.events() {
        record[..8].copy_from_slice(&ev.t_ns.to_le_bytes());
        record[8..10].copy_from_slice(&ev.x.to_le_bytes());
        record[10..12].copy_from_slice(&ev.y.to_le_bytes());
        record[12] = ev.polarity.bit();
        w.write_all(&record)?;
    }
    Ok(())
}

pub fn write_file<P: AsRef<Path>>(path: P, stream: &EventStream) -> Result<(), Evt2Error> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    write(&mut w, stream)?;
    w.flush()?;
    Ok(())
}

pub fn read<R: Read>(mut r: R) -> Result<EventStream, Evt2Error> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)?;
    let magic: [u8; 4] = header[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Evt2Error::BadMagic(magic));
    }
    let version = u16::from_le_bytes(header[4..6].try_into().unwrap());
    if version != VERSION {
        return Err(Evt2Error::BadVersion(version));
    }
    let width = u16::from_le_bytes(header[6..8].try_into().unwrap());
    let height = u16::from_le_bytes(header[8..10].try_into().unwrap());
    let mut duration_bytes = [0u8; 8];
    duration_bytes[..6].copy_from_slice(&header[10..16]);
    let duration_ns = u64::from_le_bytes(duration_bytes);

    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    let trailing = body.len() % RECORD_LEN;
    if trailing != 0 {
        return Err(Evt2Error::Truncated { trailing });
    }

    let mut events = Vec::with_capacity(body.len() / RECORD_LEN);
    for (index, rec) in body.chunks_exact(RECORD_LEN).enumerate() {
        let t_ns = u64::from_le_bytes(rec[..8].try_into().unwrap());
        let x = u16::from_le_bytes(rec[8..10].try_into().unwrap());
        let y = u16::from_le_bytes(rec[10..12].try_into().unwrap());
        let polarity = Polarity::from_bit(rec[12]).ok_or(Evt2Error::BadPolarity {
            index,
            byte: rec[12],
        })?;
        events.push(Event {
            x,
            y,
            polarity,
            t_ns,
        });
    }
    Ok(EventStream::new(width, height, duration_ns, events)?)
}

pub fn read_file<P: AsRef<Path>>(path: P) -> Result<EventStream, Evt2Error> {
    let file = File::open(path)?;
    read(BufReader::new(file))
}
