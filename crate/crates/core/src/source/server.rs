//! Resource serving over TCP.
//!
//! Request: `GET <uri>\n`. Responses:
//!
//! ```text
//! ok\t<version>\t<digest>\t<body-length>\n<body bytes>
//! not-found\n
//! gone\n
//! err <code>\n
//! ```

use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use super::SourceHandle;
use crate::broker::tcp::ServerHandle;
use crate::fetch::{FetchError, ResourceFetcher};
use crate::resource::ResourceVersion;
use crate::uri::{normalize_uri, NormalizedUri};

const ACCEPT_POLL: Duration = Duration::from_millis(25);

pub struct ResourceServer {
    listener: TcpListener,
    handle: SourceHandle,
}

impl ResourceServer {
    pub fn bind(addr: impl ToSocketAddrs, handle: SourceHandle) -> io::Result<Self> {
        Ok(ResourceServer {
            listener: TcpListener::bind(addr)?,
            handle,
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn serve(self, stop: Arc<AtomicBool>) -> io::Result<()> {
        self.listener.set_nonblocking(true)?;
        while !stop.load(Ordering::SeqCst) {
            match self.listener.accept() {
                Ok((stream, _)) => {
                    stream.set_nonblocking(false)?;
                    let handle = self.handle.clone();
                    thread::spawn(move || {
                        if let Err(e) = serve_connection(stream, &handle) {
                            log::debug!("resource connection ended: {e}");
                        }
                    });
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(ACCEPT_POLL),
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    pub fn spawn(self) -> io::Result<ServerHandle> {
        let addr = self.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let join = thread::Builder::new()
            .name("resource-accept".into())
            .spawn(move || self.serve(flag))?;
        Ok(ServerHandle::new(addr, stop, join))
    }
}

fn serve_connection(stream: TcpStream, handle: &SourceHandle) -> io::Result<()> {
    let reader = BufReader::new(stream.try_clone()?);
    let mut out = BufWriter::new(stream);
    for line in reader.lines() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        match line.strip_prefix("GET ") {
            Some(raw) => match normalize_uri(raw.trim()) {
                Ok(uri) => match handle.get_representation(&uri) {
                    Ok(rv) => {
                        writeln!(out, "ok\t{}\t{}\t{}", rv.version, rv.digest, rv.body.len())?;
                        out.write_all(&rv.body)?;
                    }
                    Err(FetchError::NotFound(_)) => out.write_all(b"not-found\n")?,
                    Err(FetchError::Gone(_)) => out.write_all(b"gone\n")?,
                    Err(FetchError::Unavailable(_)) => out.write_all(b"err unavailable\n")?,
                },
                Err(_) => out.write_all(b"err bad-uri\n")?,
            },
            None => out.write_all(b"err unknown-command\n")?,
        }
        out.flush()?;
    }
    Ok(())
}

struct Conn {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

/// Fetches representations from a remote [`ResourceServer`].
///
/// Holds one connection, re-established on the next call after a failure.
pub struct RemoteSource {
    addr: String,
    conn: Mutex<Option<Conn>>,
    timeout: Duration,
}

impl RemoteSource {
    pub fn new(addr: impl Into<String>) -> Self {
        RemoteSource {
            addr: addr.into(),
            conn: Mutex::new(None),
            timeout: Duration::from_secs(10),
        }
    }

    fn connect(&self) -> io::Result<Conn> {
        let stream = TcpStream::connect(&self.addr)?;
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(self.timeout))?;
        Ok(Conn {
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
        })
    }

    fn exchange(conn: &mut Conn, uri: &NormalizedUri) -> io::Result<Result<ResourceVersion, FetchError>> {
        writeln!(conn.writer, "GET {uri}")?;
        conn.writer.flush()?;
        let mut header = String::new();
        if conn.reader.read_line(&mut header)? == 0 {
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "source closed connection"));
        }
        let header = header.trim_end();
        let bad = || io::Error::new(io::ErrorKind::InvalidData, format!("bad response {header:?}"));
        match header {
            "not-found" => return Ok(Err(FetchError::NotFound(uri.clone()))),
            "gone" => return Ok(Err(FetchError::Gone(uri.clone()))),
            h if h.starts_with("err ") => return Ok(Err(FetchError::Unavailable(h[4..].to_owned()))),
            _ => {}
        }
        let fields: Vec<&str> = header.split('\t').collect();
        if fields.len() != 4 || fields[0] != "ok" {
            return Err(bad());
        }
        let version = fields[1].parse().map_err(|_| bad())?;
        let digest = fields[2].parse().map_err(|_| bad())?;
        let len: usize = fields[3].parse().map_err(|_| bad())?;
        let mut body = vec![0u8; len];
        conn.reader.read_exact(&mut body)?;
        let rv = ResourceVersion::new(uri.clone(), version, body, 0);
        if rv.digest != digest {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "body does not match digest"));
        }
        Ok(Ok(rv))
    }
}

impl ResourceFetcher for RemoteSource {
    fn fetch(&self, uri: &NormalizedUri) -> Result<ResourceVersion, FetchError> {
        let mut guard = self.conn.lock().expect("connection lock poisoned");
        if guard.is_none() {
            *guard = Some(self.connect().map_err(|e| FetchError::Unavailable(e.to_string()))?);
        }
        let conn = guard.as_mut().expect("connected above");
        match Self::exchange(conn, uri) {
            Ok(result) => result,
            Err(e) => {
                if let Some(c) = guard.take() {
                    let _ = c.writer.shutdown(Shutdown::Both);
                }
                Err(FetchError::Unavailable(e.to_string()))
            }
        }
    }
}
