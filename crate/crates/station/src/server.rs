//! TCP front ends: the NDJSON command/event socket and a plain G-code
//! console that answers each line with the printer's reply.

use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use crate::api::{parse_request, Ack, ApiCommand, RequestOp, ServerMessage, WIRE_VERSION};
use crate::service::Station;
use crate::telemetry::{TelemetryItem, DEFAULT_CAPACITY};

type Writer = Arc<Mutex<BufWriter<TcpStream>>>;

fn send(w: &Writer, msg: &ServerMessage) -> io::Result<()> {
    let mut w = w.lock().unwrap_or_else(|p| p.into_inner());
    serde_json::to_writer(&mut *w, msg)?;
    w.write_all(b"\n")?;
    w.flush()
}

/// Accepts connections forever, one thread each.
pub fn serve(station: Station, listener: TcpListener) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let station = station.clone();
        thread::spawn(move || {
            let peer = stream.peer_addr().ok();
            if let Err(e) = handle_connection(&station, stream) {
                log::debug!("connection {peer:?} closed: {e}");
            }
        });
    }
    Ok(())
}

struct Forwarder {
    stop: Arc<AtomicBool>,
    thread: thread::JoinHandle<()>,
}

impl Forwarder {
    fn start(station: &Station, capacity: usize, writer: Writer) -> Self {
        let sub = station.subscribe(capacity);
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let thread = thread::spawn(move || {
            while !flag.load(Ordering::SeqCst) {
                let Some(item) = sub.recv_timeout(Duration::from_millis(100)) else { continue };
                let msg = match item {
                    TelemetryItem::Event { seq, event } => ServerMessage::Event {
                        v: WIRE_VERSION,
                        seq,
                        event,
                    },
                    TelemetryItem::Gap { dropped } => ServerMessage::Gap {
                        v: WIRE_VERSION,
                        dropped,
                    },
                };
                if send(&writer, &msg).is_err() {
                    break;
                }
            }
        });
        Self { stop, thread }
    }

    fn stop(self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = self.thread.join();
    }
}

fn handle_connection(station: &Station, stream: TcpStream) -> io::Result<()> {
    let writer: Writer = Arc::new(Mutex::new(BufWriter::new(stream.try_clone()?)));
    let reader = BufReader::new(stream);
    let mut forwarder: Option<Forwarder> = None;
    let result = (|| {
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let req = match parse_request(&line) {
                Ok(r) => r,
                Err(e) => {
                    send(&writer, &ServerMessage::response(None, Err(e)))?;
                    continue;
                }
            };
            let outcome = match req.op {
                RequestOp::Command { command } => station.handle(command),
                RequestOp::Subscribe { capacity } => {
                    if forwarder.is_none() {
                        let cap = capacity.unwrap_or(DEFAULT_CAPACITY);
                        forwarder = Some(Forwarder::start(station, cap, writer.clone()));
                    }
                    Ok(Ack::Done)
                }
                RequestOp::Unsubscribe => {
                    if let Some(f) = forwarder.take() {
                        f.stop();
                    }
                    Ok(Ack::Done)
                }
            };
            send(&writer, &ServerMessage::response(req.id, outcome))?;
        }
        Ok(())
    })();
    if let Some(f) = forwarder {
        f.stop();
    }
    result
}

/// Line-oriented G-code console: one reply line per request line.
pub fn serve_gcode(station: Station, listener: TcpListener) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let station = station.clone();
        thread::spawn(move || {
            let Ok(mut out) = stream.try_clone() else { return };
            for line in BufReader::new(stream).lines() {
                let Ok(line) = line else { break };
                let reply = match station.handle(ApiCommand::SendGcode { line }) {
                    Ok(Ack::Reply { line }) => line,
                    Ok(other) => format!("ok {other:?}"),
                    Err(e) => format!("Error:{e}"),
                };
                if writeln!(out, "{reply}").is_err() {
                    break;
                }
            }
        });
    }
    Ok(())
}
