//! TCP action service: newline-delimited JSON in, one greedy action per Δt
//! window out.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use evrl_core::event::{accumulate_events, Event, EventFrame, Polarity};
use evrl_core::qnet::QNetwork;
use serde::{Deserialize, Serialize};

/// Messages sent by the client.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    /// Opens a session. `t0_us` anchors window 0; otherwise the first event does.
    Hello {
        /// Sensor width.
        width: u16,
        /// Sensor height.
        height: u16,
        /// Window length in microseconds.
        dt_us: u64,
        /// Start of window 0.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        t0_us: Option<u64>,
    },
    /// A batch of `[t, x, y, p]` events, ascending in `t`.
    Events {
        /// The events.
        events: Vec<(u64, u16, u16, i8)>,
    },
    /// Closes the open window, or with `until_us` every window ending at or
    /// before that time.
    Flush {
        /// Close windows up to this time.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        until_us: Option<u64>,
    },
}

/// Messages sent by the server.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    /// Session accepted.
    Ready {
        /// Number of actions the policy chooses from.
        action_count: usize,
    },
    /// Action for window `step`.
    Action {
        /// Window index, starting at 0.
        step: u64,
        /// Greedy action index.
        action: usize,
        /// Frame conversion plus inference time.
        latency_us: u64,
    },
    /// Rejected input.
    Error {
        /// Explanation.
        message: String,
    },
}

/// Converts wire tuples to events, checking polarity and order.
pub fn parse_events(raw: &[(u64, u16, u16, i8)]) -> Result<Vec<Event>, String> {
    let mut out = Vec::with_capacity(raw.len());
    for (i, &(t, x, y, p)) in raw.iter().enumerate() {
        let polarity = Polarity::from_i8(p).ok_or_else(|| format!("event {i}: polarity {p} is not 1 or -1"))?;
        if i > 0 && t < raw[i - 1].0 {
            return Err(format!("event {i}: timestamps must be ascending within a message"));
        }
        out.push(Event::new(t, x, y, polarity));
    }
    Ok(out)
}

/// Assigns events to consecutive windows `[t0 + n·dt, t0 + (n+1)·dt)` and
/// yields one frame per closed window.
#[derive(Debug, Clone)]
pub struct WindowBucketer {
    width: usize,
    height: usize,
    dt: u64,
    t0: Option<u64>,
    window: u64,
    pending: Vec<Event>,
}

impl WindowBucketer {
    /// Bucketer for a sensor of the given size; `t0` defaults to the first event.
    pub fn new(width: usize, height: usize, dt_us: u64, t0: Option<u64>) -> Self {
        assert!(dt_us > 0, "window length must be positive");
        WindowBucketer {
            width,
            height,
            dt: dt_us,
            t0,
            window: 0,
            pending: Vec::new(),
        }
    }

    /// Index of the open window.
    pub fn window(&self) -> u64 {
        self.window
    }

    /// Start time of the open window, once anchored.
    pub fn window_start(&self) -> Option<u64> {
        self.t0.map(|t0| t0 + self.window * self.dt)
    }

    fn close(&mut self, out: &mut Vec<(u64, EventFrame)>) {
        let start = self.window_start().expect("anchored");
        let frame = accumulate_events(&self.pending, start, start + self.dt, self.width, self.height)
            .expect("pending events lie inside the window");
        self.pending.clear();
        out.push((self.window, frame));
        self.window += 1;
    }

    /// Adds ascending events, returning the windows they close. On error no
    /// event of the batch is consumed.
    pub fn push(&mut self, events: &[Event]) -> Result<Vec<(u64, EventFrame)>, String> {
        let Some(first) = events.first() else {
            return Ok(Vec::new());
        };
        let start = self.window_start().unwrap_or(first.t);
        if first.t < start {
            return Err(format!("event at t={} precedes the open window starting at {start}", first.t));
        }
        if self.pending.last().is_some_and(|p| first.t < p.t) {
            return Err("events must not go back in time across messages".into());
        }
        if let Some(e) = events
            .iter()
            .find(|e| e.x as usize >= self.width || e.y as usize >= self.height)
        {
            return Err(format!("event at ({}, {}) outside {}x{}", e.x, e.y, self.width, self.height));
        }
        self.t0.get_or_insert(first.t);
        let mut out = Vec::new();
        for e in events {
            while e.t >= self.window_start().expect("anchored") + self.dt {
                self.close(&mut out);
            }
            self.pending.push(*e);
        }
        Ok(out)
    }

    /// Closes the open window, or every window ending at or before `until`.
    /// Before anchoring there is nothing to close.
    pub fn flush(&mut self, until: Option<u64>) -> Vec<(u64, EventFrame)> {
        let mut out = Vec::new();
        if self.t0.is_none() {
            return out;
        }
        match until {
            None => self.close(&mut out),
            Some(until) => {
                while self.window_start().expect("anchored") + self.dt <= until {
                    self.close(&mut out);
                }
            }
        }
        out
    }
}

/// Greedy action per window computed without the network transport: the
/// reference the service must reproduce.
pub fn offline_actions(
    network: &QNetwork<f32>,
    events: &[Event],
    t0: u64,
    dt_us: u64,
    windows: u64,
) -> evrl_core::Result<Vec<usize>> {
    let c = network.config();
    (0..windows)
        .map(|n| {
            let start = t0 + n * dt_us;
            let lo = events.partition_point(|e| e.t < start);
            let hi = events.partition_point(|e| e.t < start + dt_us);
            let frame = accumulate_events(&events[lo..hi], start, start + dt_us, c.width, c.height)?;
            network.greedy_action(&frame)
        })
        .collect()
}

enum SessionState {
    AwaitingHello,
    Open(WindowBucketer),
}

/// What the server should do after handling a line.
#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    /// Messages to send, in order.
    pub messages: Vec<ServerMessage>,
    /// Close the connection after sending.
    pub close: bool,
}

/// Per-connection protocol state.
pub struct Session {
    network: Arc<QNetwork<f32>>,
    dt_us: u64,
    state: SessionState,
    latencies: Vec<(u64, u64)>,
}

impl Session {
    /// New session expecting a hello for the network's input size and `dt_us`.
    pub fn new(network: Arc<QNetwork<f32>>, dt_us: u64) -> Self {
        Session {
            network,
            dt_us,
            state: SessionState::AwaitingHello,
            latencies: Vec::new(),
        }
    }

    /// `(step, latency_us)` of every window answered so far.
    pub fn latencies(&self) -> &[(u64, u64)] {
        &self.latencies
    }

    fn fatal(message: String) -> Reply {
        Reply {
            messages: vec![ServerMessage::Error { message }],
            close: true,
        }
    }

    fn act(&mut self, windows: Vec<(u64, EventFrame)>, started: Instant) -> Result<Vec<ServerMessage>, String> {
        let mut out = Vec::with_capacity(windows.len());
        let mut started = Some(started);
        for (step, frame) in windows {
            let t = started.take().unwrap_or_else(Instant::now);
            let action = self.network.greedy_action(&frame).map_err(|e| e.to_string())?;
            let latency_us = t.elapsed().as_micros() as u64;
            self.latencies.push((step, latency_us));
            out.push(ServerMessage::Action {
                step,
                action,
                latency_us,
            });
        }
        Ok(out)
    }

    /// Handles one line of input.
    pub fn handle_line(&mut self, line: &str) -> Reply {
        let started = Instant::now();
        let msg: ClientMessage = match serde_json::from_str(line) {
            Ok(m) => m,
            Err(e) => return Self::fatal(format!("malformed message: {e}")),
        };
        let windows = match (&mut self.state, msg) {
            (SessionState::AwaitingHello, ClientMessage::Hello {
                width,
                height,
                dt_us,
                t0_us,
            }) => {
                let c = self.network.config();
                if (width as usize, height as usize) != (c.width, c.height) {
                    return Self::fatal(format!(
                        "sensor {width}x{height} does not match the policy input {}x{}",
                        c.width, c.height
                    ));
                }
                if dt_us != self.dt_us {
                    return Self::fatal(format!("dt_us {dt_us} does not match the server's {}", self.dt_us));
                }
                self.state = SessionState::Open(WindowBucketer::new(c.width, c.height, dt_us, t0_us));
                return Reply {
                    messages: vec![ServerMessage::Ready {
                        action_count: c.actions,
                    }],
                    close: false,
                };
            }
            (SessionState::AwaitingHello, _) => return Self::fatal("expected hello".into()),
            (SessionState::Open(_), ClientMessage::Hello { .. }) => {
                return Self::fatal("session already open".into())
            }
            (SessionState::Open(b), ClientMessage::Events { events }) => {
                match parse_events(&events).and_then(|ev| b.push(&ev)) {
                    Ok(w) => w,
                    Err(message) => {
                        return Reply {
                            messages: vec![ServerMessage::Error { message }],
                            close: false,
                        }
                    }
                }
            }
            (SessionState::Open(b), ClientMessage::Flush { until_us }) => b.flush(until_us),
        };
        match self.act(windows, started) {
            Ok(messages) => Reply {
                messages,
                close: false,
            },
            Err(message) => Self::fatal(message),
        }
    }
}

/// Sequential single-client server.
pub struct Server {
    listener: TcpListener,
    network: Arc<QNetwork<f32>>,
    dt_us: u64,
    shutdown: Arc<AtomicBool>,
}

const POLL: Duration = Duration::from_millis(20);

impl Server {
    /// Binds the listening socket.
    pub fn bind(addr: impl ToSocketAddrs, network: QNetwork<f32>, dt_us: u64) -> io::Result<Server> {
        if dt_us == 0 {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, "dt_us must be positive"));
        }
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        Ok(Server {
            listener,
            network: Arc::new(network),
            dt_us,
            shutdown: Arc::new(AtomicBool::new(false)),
        })
    }

    /// Address actually bound.
    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Setting this flag stops [`Server::run`] after the line in progress.
    pub fn shutdown_flag(&self) -> Arc<AtomicBool> {
        self.shutdown.clone()
    }

    /// Serves sessions one after another until shutdown. Each answered
    /// window is appended to `log` as a JSON line.
    pub fn run(&self, mut log: Option<&mut (dyn Write + Send)>) -> io::Result<()> {
        while !self.shutdown.load(Ordering::SeqCst) {
            match self.listener.accept() {
                Ok((stream, _)) => {
                    let session = self.session(stream)?;
                    if let Some(log) = log.as_deref_mut() {
                        for (step, latency_us) in session.latencies() {
                            writeln!(log, "{}", serde_json::json!({ "step": step, "latency_us": latency_us }))?;
                        }
                        log.flush()?;
                    }
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => std::thread::sleep(POLL),
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    fn session(&self, stream: TcpStream) -> io::Result<Session> {
        stream.set_nonblocking(false)?;
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(POLL))?;
        let mut writer = stream.try_clone()?;
        let mut reader = BufReader::new(stream);
        let mut session = Session::new(self.network.clone(), self.dt_us);
        let mut line = String::new();
        loop {
            match reader.read_line(&mut line) {
                Ok(0) if line.is_empty() => break,
                Ok(n) if n > 0 && !line.ends_with('\n') => continue,
                Ok(_) => {
                    let reply = session.handle_line(line.trim_end());
                    line.clear();
                    let mut out = Vec::new();
                    for m in &reply.messages {
                        serde_json::to_writer(&mut out, m)?;
                        out.push(b'\n');
                    }
                    if writer.write_all(&out).is_err() || reply.close {
                        break;
                    }
                }
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                    if self.shutdown.load(Ordering::SeqCst) {
                        break;
                    }
                }
                Err(e) if e.kind() == io::ErrorKind::ConnectionReset => break,
                Err(e) => return Err(e),
            }
        }
        Ok(session)
    }
}

/// Blocking client for the service protocol.
pub struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Client {
    /// Connects to a running server.
    pub fn connect(addr: impl ToSocketAddrs) -> io::Result<Client> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Client {
            writer: stream.try_clone()?,
            reader: BufReader::new(stream),
        })
    }

    /// Sends one message.
    pub fn send(&mut self, msg: &ClientMessage) -> io::Result<()> {
        let mut line = serde_json::to_vec(msg)?;
        line.push(b'\n');
        self.writer.write_all(&line)
    }

    /// Sends a raw line, e.g. to exercise error handling.
    pub fn send_raw(&mut self, line: &str) -> io::Result<()> {
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")
    }

    /// Next message, or `None` once the server closed the connection.
    pub fn recv(&mut self) -> io::Result<Option<ServerMessage>> {
        let mut line = String::new();
        if self.reader.read_line(&mut line)? == 0 {
            return Ok(None);
        }
        serde_json::from_str(&line)
            .map(Some)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }

    /// Closes the sending half so the server sees end of input.
    pub fn finish(&mut self) -> io::Result<()> {
        self.writer.shutdown(std::net::Shutdown::Write)
    }

    /// Reads messages until the server closes the connection.
    pub fn drain(&mut self) -> io::Result<Vec<ServerMessage>> {
        let mut out = Vec::new();
        while let Some(m) = self.recv()? {
            out.push(m);
        }
        Ok(out)
    }
}

/// Replays a stream through a server: hello anchored at `t0`, events in
/// batches of `batch`, then a flush closing `windows` windows. Returns the
/// actions received, in step order.
pub fn replay(
    addr: impl ToSocketAddrs,
    width: u16,
    height: u16,
    dt_us: u64,
    t0: u64,
    events: &[Event],
    windows: u64,
    batch: usize,
) -> io::Result<Vec<ServerMessage>> {
    let mut client = Client::connect(addr)?;
    client.send(&ClientMessage::Hello {
        width,
        height,
        dt_us,
        t0_us: Some(t0),
    })?;
    for chunk in events.chunks(batch.max(1)) {
        client.send(&ClientMessage::Events {
            events: chunk.iter().map(|e| (e.t, e.x, e.y, e.polarity.as_i8())).collect(),
        })?;
    }
    client.send(&ClientMessage::Flush {
        until_us: Some(t0 + windows * dt_us),
    })?;
    client.finish()?;
    client.drain()
}
