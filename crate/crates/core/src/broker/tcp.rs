//! Newline-framed TCP transport for the broker.
//!
//! Client → broker commands, one per line:
//!
//! ```text
//! SUB <channel>
//! UNSUB <channel>
//! CREATE <channel>
//! PUB
//! <CN frame>
//! ```
//!
//! Every command is answered with `OK` or `ERR <code>`. Notifications for the
//! connection's subscriptions are interleaved on the same stream as CN frames;
//! clients tell them apart by the `CN` tag.

use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, RecvTimeoutError, Sender, TrySendError};

use super::{Broker, BrokerError, Publisher, Sink, SinkError, DEFAULT_SINK_CAPACITY};
use crate::channel::ChannelPath;
use crate::notification::{ChangeNotification, FRAME_TAG};

pub const ERR_BAD_CHANNEL: &str = "bad-channel";
pub const ERR_BAD_FRAME: &str = "bad-frame";
pub const ERR_UNKNOWN_CHANNEL: &str = "unknown-channel";
pub const ERR_NOT_SUBSCRIBED: &str = "not-subscribed";
pub const ERR_UNKNOWN_COMMAND: &str = "unknown-command";
pub const ERR_SINK_CLOSED: &str = "sink-closed";

const ACCEPT_POLL: Duration = Duration::from_millis(25);

/// Outbound half of one connection, used as the broker-side sink.
struct LineSink {
    tx: Mutex<Option<Sender<String>>>,
}

impl LineSink {
    fn send_line(&self, line: String) -> Result<(), SinkError> {
        let guard = self.tx.lock().expect("sink lock poisoned");
        let tx = guard.as_ref().ok_or(SinkError::Closed)?;
        tx.try_send(line).map_err(|e| match e {
            TrySendError::Full(_) => SinkError::Overflow,
            TrySendError::Disconnected(_) => SinkError::Closed,
        })
    }
}

impl Sink for LineSink {
    fn try_deliver(&self, cn: &ChangeNotification) -> Result<(), SinkError> {
        self.send_line(cn.to_line())
    }

    fn is_closed(&self) -> bool {
        self.tx.lock().expect("sink lock poisoned").is_none()
    }

    fn close(&self) {
        self.tx.lock().expect("sink lock poisoned").take();
    }
}

pub struct BrokerServer {
    listener: TcpListener,
    broker: Broker,
    sink_capacity: usize,
}

impl BrokerServer {
    pub fn bind(addr: impl ToSocketAddrs, broker: Broker) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        Ok(BrokerServer {
            listener,
            broker,
            sink_capacity: DEFAULT_SINK_CAPACITY,
        })
    }

    pub fn with_sink_capacity(mut self, capacity: usize) -> Self {
        self.sink_capacity = capacity.max(1);
        self
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn broker(&self) -> &Broker {
        &self.broker
    }

    /// Accepts connections until `stop` is set.
    pub fn serve(self, stop: Arc<AtomicBool>) -> io::Result<()> {
        self.listener.set_nonblocking(true)?;
        let next_conn = AtomicU64::new(1);
        while !stop.load(Ordering::SeqCst) {
            match self.listener.accept() {
                Ok((stream, peer)) => {
                    stream.set_nonblocking(false)?;
                    let id = next_conn.fetch_add(1, Ordering::SeqCst);
                    let broker = self.broker.clone();
                    let cap = self.sink_capacity;
                    thread::Builder::new()
                        .name(format!("broker-conn-{id}"))
                        .spawn(move || {
                            let subscriber = format!("conn-{id}@{peer}");
                            if let Err(e) = handle_connection(stream, &broker, &subscriber, cap) {
                                log::debug!("{subscriber}: {e}");
                            }
                            broker.disconnect(&subscriber);
                        })?;
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(ACCEPT_POLL),
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    /// Runs [`serve`](Self::serve) on a background thread.
    pub fn spawn(self) -> io::Result<ServerHandle> {
        let addr = self.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let join = thread::Builder::new()
            .name("broker-accept".into())
            .spawn(move || self.serve(flag))?;
        Ok(ServerHandle {
            addr,
            stop,
            join: Some(join),
        })
    }
}

/// A background server; stops when dropped.
pub struct ServerHandle {
    pub addr: SocketAddr,
    stop: Arc<AtomicBool>,
    join: Option<JoinHandle<io::Result<()>>>,
}

impl ServerHandle {
    pub fn new(addr: SocketAddr, stop: Arc<AtomicBool>, join: JoinHandle<io::Result<()>>) -> Self {
        ServerHandle {
            addr,
            stop,
            join: Some(join),
        }
    }

    pub fn stop(mut self) -> io::Result<()> {
        self.shutdown()
    }

    fn shutdown(&mut self) -> io::Result<()> {
        self.stop.store(true, Ordering::SeqCst);
        match self.join.take() {
            Some(join) => join
                .join()
                .unwrap_or_else(|_| Err(io::Error::other("server thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        let _ = self.shutdown();
    }
}

fn spawn_writer(stream: TcpStream, rx: Receiver<String>) -> JoinHandle<()> {
    thread::spawn(move || {
        let mut out = BufWriter::new(stream);
        while let Ok(line) = rx.recv() {
            let mut write = |l: &str| out.write_all(l.as_bytes()).and_then(|_| out.write_all(b"\n"));
            if write(&line).is_err() {
                return;
            }
            let mut failed = false;
            for more in rx.try_iter() {
                if write(&more).is_err() {
                    failed = true;
                    break;
                }
            }
            if failed || out.flush().is_err() {
                return;
            }
        }
        let _ = out.flush();
    })
}

fn handle_connection(stream: TcpStream, broker: &Broker, subscriber: &str, capacity: usize) -> io::Result<()> {
    let (tx, rx) = crossbeam_channel::bounded::<String>(capacity);
    let sink = Arc::new(LineSink {
        tx: Mutex::new(Some(tx)),
    });
    let writer = spawn_writer(stream.try_clone()?, rx);
    let mut lines = BufReader::new(stream.try_clone()?).lines();

    let result = (|| -> io::Result<()> {
        while let Some(line) = lines.next() {
            let line = line?;
            let line = line.trim_end_matches('\r');
            let reply = match line.split_once(' ').unwrap_or((line, "")) {
                ("", _) => continue,
                ("SUB", arg) => match arg.trim().parse::<ChannelPath>() {
                    Ok(path) => match broker.subscribe(subscriber, &path, sink.clone()) {
                        Ok(_) => "OK".to_owned(),
                        Err(_) => format!("ERR {ERR_SINK_CLOSED}"),
                    },
                    Err(_) => format!("ERR {ERR_BAD_CHANNEL}"),
                },
                ("UNSUB", arg) => match arg.trim().parse::<ChannelPath>() {
                    Ok(path) if broker.unsubscribe_path(subscriber, &path) => "OK".to_owned(),
                    Ok(_) => format!("ERR {ERR_NOT_SUBSCRIBED}"),
                    Err(_) => format!("ERR {ERR_BAD_CHANNEL}"),
                },
                ("CREATE", arg) => match arg.trim().parse::<ChannelPath>() {
                    Ok(path) => {
                        broker.create_channel(&path);
                        "OK".to_owned()
                    }
                    Err(_) => format!("ERR {ERR_BAD_CHANNEL}"),
                },
                ("PUB", _) => {
                    let frame = match lines.next() {
                        Some(l) => l?,
                        None => return Ok(()),
                    };
                    match ChangeNotification::from_line(frame.trim_end_matches('\r')) {
                        Ok(cn) => match broker.publish(&cn.channel, &cn) {
                            Ok(_) => "OK".to_owned(),
                            Err(_) => format!("ERR {ERR_UNKNOWN_CHANNEL}"),
                        },
                        Err(_) => format!("ERR {ERR_BAD_FRAME}"),
                    }
                }
                _ => format!("ERR {ERR_UNKNOWN_COMMAND}"),
            };
            if sink.send_line(reply).is_err() {
                // disconnected for overflow, or the writer died
                return Ok(());
            }
        }
        Ok(())
    })();

    broker.disconnect(subscriber);
    sink.close();
    let _ = stream.shutdown(Shutdown::Both);
    let _ = writer.join();
    result
}

type CnHandler = Arc<dyn Fn(ChangeNotification) + Send + Sync>;

/// Client connection to a remote broker.
///
/// Notifications arriving on the connection are passed to the handler given
/// at connect time, on the reader thread.
pub struct RemoteBroker {
    stream: TcpStream,
    writer: Mutex<BufWriter<TcpStream>>,
    responses: Receiver<Result<(), String>>,
    connected: Arc<AtomicBool>,
    timeout: Duration,
    reader: Option<JoinHandle<()>>,
}

impl RemoteBroker {
    pub fn connect(
        addr: impl ToSocketAddrs,
        on_cn: impl Fn(ChangeNotification) + Send + Sync + 'static,
    ) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        Self::from_stream(stream, Arc::new(on_cn))
    }

    /// Retries with exponential backoff until `deadline` has elapsed.
    pub fn connect_with_retry(
        addr: &str,
        on_cn: impl Fn(ChangeNotification) + Send + Sync + 'static,
        deadline: Duration,
    ) -> io::Result<Self> {
        let handler: CnHandler = Arc::new(on_cn);
        let start = Instant::now();
        let mut backoff = Duration::from_millis(50);
        loop {
            match TcpStream::connect(addr) {
                Ok(stream) => return Self::from_stream(stream, handler),
                Err(e) if start.elapsed() + backoff > deadline => {
                    return Err(io::Error::new(
                        e.kind(),
                        format!("could not connect to broker at {addr} within {deadline:?}: {e}"),
                    ))
                }
                Err(e) => {
                    log::info!("broker {addr} not reachable ({e}); retrying in {backoff:?}");
                    thread::sleep(backoff);
                    backoff = (backoff * 2).min(Duration::from_secs(2));
                }
            }
        }
    }

    fn from_stream(stream: TcpStream, on_cn: CnHandler) -> io::Result<Self> {
        stream.set_nodelay(true)?;
        let (resp_tx, resp_rx) = crossbeam_channel::unbounded();
        let connected = Arc::new(AtomicBool::new(true));
        let flag = Arc::clone(&connected);
        let read_half = stream.try_clone()?;
        let reader = thread::Builder::new()
            .name("broker-client-reader".into())
            .spawn(move || {
                let tag = format!("{FRAME_TAG}\t");
                for line in BufReader::new(read_half).lines() {
                    let Ok(line) = line else { break };
                    if line.starts_with(&tag) {
                        match ChangeNotification::from_line(&line) {
                            Ok(cn) => on_cn(cn),
                            Err(e) => log::warn!("dropping undecodable frame: {e}"),
                        }
                    } else if line == "OK" || line.starts_with("OK ") {
                        let _ = resp_tx.send(Ok(()));
                    } else if let Some(code) = line.strip_prefix("ERR ") {
                        let _ = resp_tx.send(Err(code.to_owned()));
                    } else if !line.is_empty() {
                        log::warn!("unexpected line from broker: {line:?}");
                    }
                }
                flag.store(false, Ordering::SeqCst);
            })?;
        Ok(RemoteBroker {
            writer: Mutex::new(BufWriter::new(stream.try_clone()?)),
            stream,
            responses: resp_rx,
            connected,
            timeout: Duration::from_secs(10),
            reader: Some(reader),
        })
    }

    pub fn is_connected(&self) -> bool {
        self.connected.load(Ordering::SeqCst)
    }

    fn request(&self, payload: &str) -> Result<(), RequestError> {
        let mut writer = self.writer.lock().expect("writer lock poisoned");
        writer
            .write_all(payload.as_bytes())
            .and_then(|_| writer.flush())
            .map_err(|e| RequestError::Transport(e.to_string()))?;
        match self.responses.recv_timeout(self.timeout) {
            Ok(Ok(())) => Ok(()),
            Ok(Err(code)) => Err(RequestError::Refused(code)),
            Err(RecvTimeoutError::Timeout) => Err(RequestError::Transport("response timeout".into())),
            Err(RecvTimeoutError::Disconnected) => Err(RequestError::Transport("connection closed".into())),
        }
    }

    pub fn subscribe(&self, path: &ChannelPath) -> Result<(), BrokerError> {
        self.request(&format!("SUB {path}\n")).map_err(|e| e.into_broker(path))
    }

    pub fn unsubscribe(&self, path: &ChannelPath) -> Result<(), BrokerError> {
        self.request(&format!("UNSUB {path}\n"))
            .map_err(|e| e.into_broker(path))
    }
}

enum RequestError {
    Transport(String),
    Refused(String),
}

impl RequestError {
    fn into_broker(self, path: &ChannelPath) -> BrokerError {
        match self {
            RequestError::Transport(msg) => BrokerError::Unavailable(msg),
            RequestError::Refused(code) if code == ERR_UNKNOWN_CHANNEL => BrokerError::UnknownChannel(path.clone()),
            RequestError::Refused(code) if code == ERR_SINK_CLOSED => BrokerError::SinkClosed,
            RequestError::Refused(code) => BrokerError::Protocol(code),
        }
    }
}

impl Publisher for RemoteBroker {
    fn create_channel(&self, path: &ChannelPath) -> Result<(), BrokerError> {
        self.request(&format!("CREATE {path}\n"))
            .map_err(|e| e.into_broker(path))
    }

    fn publish_cn(&self, cn: &ChangeNotification) -> Result<usize, BrokerError> {
        self.request(&format!("PUB\n{}\n", cn.to_line()))
            .map(|_| 0)
            .map_err(|e| e.into_broker(&cn.channel))
    }
}

impl Drop for RemoteBroker {
    fn drop(&mut self) {
        let _ = self.stream.shutdown(Shutdown::Both);
        if let Some(reader) = self.reader.take() {
            let _ = reader.join();
        }
    }
}
