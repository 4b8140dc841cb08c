use std::io::{self, Read, Write};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};

/// Largest accepted frame body; room for a maximal blob plus overhead.
pub const MAX_FRAME: usize = 64 * 1024 * 1024 + 64 * 1024;

/// Writes `len || body` in a single call.
pub fn write_frame<W: Write + ?Sized>(w: &mut W, body: &[u8]) -> io::Result<Vec<u8>> {
    if body.len() > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "frame too large"));
    }
    let mut frame = Vec::with_capacity(4 + body.len());
    frame.extend_from_slice(&(body.len() as u32).to_be_bytes());
    frame.extend_from_slice(body);
    w.write_all(&frame)?;
    w.flush()?;
    Ok(frame)
}

pub fn read_frame<R: Read + ?Sized>(r: &mut R) -> io::Result<Vec<u8>> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "frame too large"));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Ok(body)
}

/// Shared log of every frame written by the channels that carry it,
/// length prefix included.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    frames: Arc<Mutex<Vec<Vec<u8>>>>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn frames(&self) -> Vec<Vec<u8>> {
        self.frames.lock().unwrap().clone()
    }

    pub fn bytes(&self) -> Vec<u8> {
        self.frames.lock().unwrap().concat()
    }

    fn record(&self, frame: Vec<u8>) {
        self.frames.lock().unwrap().push(frame);
    }
}

/// A framed byte stream, optionally recorded into a [`Trace`].
pub struct Channel<S> {
    stream: S,
    trace: Option<Trace>,
}

impl<S: Read + Write> Channel<S> {
    pub fn new(stream: S) -> Self {
        Self {
            stream,
            trace: None,
        }
    }

    pub fn traced(stream: S, trace: Trace) -> Self {
        Self {
            stream,
            trace: Some(trace),
        }
    }

    pub fn send(&mut self, body: &[u8]) -> io::Result<()> {
        let frame = write_frame(&mut self.stream, body)?;
        if let Some(t) = &self.trace {
            t.record(frame);
        }
        Ok(())
    }

    pub fn recv(&mut self) -> io::Result<Vec<u8>> {
        read_frame(&mut self.stream)
    }

    pub fn into_inner(self) -> S {
        self.stream
    }
}

/// One end of an in-process duplex byte pipe.
pub struct PipeEnd {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    pending: Vec<u8>,
    offset: usize,
}

/// Two connected pipe ends; dropping one gives the other end-of-stream.
pub fn pipe() -> (PipeEnd, PipeEnd) {
    let (a_tx, b_rx) = channel();
    let (b_tx, a_rx) = channel();
    (
        PipeEnd {
            tx: a_tx,
            rx: a_rx,
            pending: Vec::new(),
            offset: 0,
        },
        PipeEnd {
            tx: b_tx,
            rx: b_rx,
            pending: Vec::new(),
            offset: 0,
        },
    )
}

impl Read for PipeEnd {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if buf.is_empty() {
            return Ok(0);
        }
        while self.offset == self.pending.len() {
            match self.rx.recv() {
                Ok(chunk) => {
                    self.pending = chunk;
                    self.offset = 0;
                }
                Err(_) => return Ok(0),
            }
        }
        let n = buf.len().min(self.pending.len() - self.offset);
        buf[..n].copy_from_slice(&self.pending[self.offset..self.offset + n]);
        self.offset += n;
        Ok(n)
    }
}

impl Write for PipeEnd {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        if buf.is_empty() {
            return Ok(0);
        }
        self.tx
            .send(buf.to_vec())
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "peer closed"))?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_cross_a_pipe_and_are_traced() {
        let trace = Trace::new();
        let (a, b) = pipe();
        let mut a = Channel::traced(a, trace.clone());
        let mut b = Channel::new(b);
        a.send(b"one").unwrap();
        a.send(b"").unwrap();
        assert_eq!(b.recv().unwrap(), b"one");
        assert_eq!(b.recv().unwrap(), b"");
        assert_eq!(trace.frames(), vec![b"\0\0\0\x03one".to_vec(), vec![0, 0, 0, 0]]);
    }

    #[test]
    fn closed_peer_is_end_of_stream() {
        let (a, b) = pipe();
        drop(a);
        let mut b = Channel::new(b);
        assert_eq!(b.recv().unwrap_err().kind(), io::ErrorKind::UnexpectedEof);
        assert!(b.send(b"x").is_err());
    }

    #[test]
    fn oversized_length_is_rejected() {
        let mut bytes: &[u8] = &[0xff, 0xff, 0xff, 0xff];
        assert_eq!(read_frame(&mut bytes).unwrap_err().kind(), io::ErrorKind::InvalidData);
    }
}
