//! Raw video streams: a 16-byte header (`"RVID"`, then little-endian u32
//! width, height and frame rate in millihertz) followed by frames of
//! `width * height * 3` interleaved RGB bytes. Frame `i` is stamped
//! `i * 1_000_000 / fps_mhz` milliseconds.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::frame::{Frame, FrameError, MIN_FRAME_DIM};

pub const MAGIC: &[u8; 4] = b"RVID";
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum RvidError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not an RVID stream")]
    BadMagic,
    #[error("frame rate must be positive")]
    ZeroFrameRate,
    #[error("stream ends inside frame {0}")]
    TruncatedFrame(u64),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("frame {index} is {got_w}x{got_h}, stream is {want_w}x{want_h}")]
    SizeMismatch {
        index: u64,
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RvidHeader {
    pub width: u32,
    pub height: u32,
    pub fps_mhz: u32,
}

impl RvidHeader {
    pub fn new(width: usize, height: usize, fps: f64) -> Self {
        Self {
            width: width as u32,
            height: height as u32,
            fps_mhz: (fps * 1000.0).round() as u32,
        }
    }

    pub fn fps(&self) -> f64 {
        f64::from(self.fps_mhz) / 1000.0
    }

    pub fn frame_bytes(&self) -> usize {
        self.width as usize * self.height as usize * 3
    }

    pub fn timestamp_ms(&self, index: u64) -> u64 {
        index * 1_000_000 / u64::from(self.fps_mhz)
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[..4].copy_from_slice(MAGIC);
        b[4..8].copy_from_slice(&self.width.to_le_bytes());
        b[8..12].copy_from_slice(&self.height.to_le_bytes());
        b[12..16].copy_from_slice(&self.fps_mhz.to_le_bytes());
        b
    }

    pub fn parse(b: &[u8; HEADER_LEN]) -> Result<Self, RvidError> {
        if &b[..4] != MAGIC {
            return Err(RvidError::BadMagic);
        }
        let u = |i: usize| u32::from_le_bytes(b[i..i + 4].try_into().unwrap());
        let h = Self {
            width: u(4),
            height: u(8),
            fps_mhz: u(12),
        };
        if h.fps_mhz == 0 {
            return Err(RvidError::ZeroFrameRate);
        }
        let (width, height) = (h.width as usize, h.height as usize);
        if width < MIN_FRAME_DIM || height < MIN_FRAME_DIM {
            return Err(FrameError::TooSmall { width, height }.into());
        }
        Ok(h)
    }
}

pub struct RvidWriter<W: Write> {
    inner: W,
    header: RvidHeader,
    written: u64,
}

impl<W: Write> RvidWriter<W> {
    pub fn new(mut inner: W, header: RvidHeader) -> Result<Self, RvidError> {
        if header.fps_mhz == 0 {
            return Err(RvidError::ZeroFrameRate);
        }
        inner.write_all(&header.to_bytes())?;
        Ok(Self {
            inner,
            header,
            written: 0,
        })
    }

    /// Timestamps are implied by position; the frame's own stamp is ignored.
    pub fn write_frame(&mut self, frame: &Frame) -> Result<(), RvidError> {
        let (w, h) = (self.header.width as usize, self.header.height as usize);
        if frame.width() != w || frame.height() != h {
            return Err(RvidError::SizeMismatch {
                index: self.written,
                got_w: frame.width(),
                got_h: frame.height(),
                want_w: w,
                want_h: h,
            });
        }
        self.inner.write_all(frame.pixels())?;
        self.written += 1;
        Ok(())
    }

    pub fn frames_written(&self) -> u64 {
        self.written
    }

    pub fn finish(mut self) -> Result<W, RvidError> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

pub struct RvidReader<R: Read> {
    inner: R,
    header: RvidHeader,
    index: u64,
    done: bool,
}

impl<R: Read> RvidReader<R> {
    pub fn new(mut inner: R) -> Result<Self, RvidError> {
        let mut b = [0u8; HEADER_LEN];
        read_full(&mut inner, &mut b).and_then(|n| {
            if n == HEADER_LEN {
                Ok(())
            } else {
                Err(io::Error::new(io::ErrorKind::UnexpectedEof, "short RVID header"))
            }
        })?;
        let header = RvidHeader::parse(&b)?;
        Ok(Self {
            inner,
            header,
            index: 0,
            done: false,
        })
    }

    pub fn header(&self) -> RvidHeader {
        self.header
    }
}

fn read_full(r: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(n)
}

impl<R: Read> Iterator for RvidReader<R> {
    type Item = Result<Frame, RvidError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let mut buf = vec![0u8; self.header.frame_bytes()];
        let n = match read_full(&mut self.inner, &mut buf) {
            Ok(n) => n,
            Err(e) => {
                self.done = true;
                return Some(Err(e.into()));
            }
        };
        if n == 0 {
            self.done = true;
            return None;
        }
        if n < buf.len() {
            self.done = true;
            return Some(Err(RvidError::TruncatedFrame(self.index)));
        }
        let ts = self.header.timestamp_ms(self.index);
        self.index += 1;
        Some(Frame::new(self.header.width as usize, self.header.height as usize, ts, buf).map_err(RvidError::from))
    }
}
