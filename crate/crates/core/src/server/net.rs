use std::io::Write;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{debug, info, warn};

use super::ServerCore;
use crate::protocol::{
    encode_frame, ClassifyRequest, ErrorCode, ErrorMessage, Message, MessageReader, StreamError,
};

const POLL: Duration = Duration::from_millis(50);
const WRITE_TIMEOUT: Duration = Duration::from_secs(10);

enum Outbound {
    Frame(Vec<u8>),
    Close,
}

struct Job {
    request: ClassifyRequest,
    reply: Sender<Outbound>,
}

#[derive(Default)]
struct Counters {
    connections: AtomicU64,
    requests: AtomicU64,
    errors: AtomicU64,
}

/// A running server. Dropping it without [`ServerHandle::shutdown`]
/// leaves the threads running.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
    workers: Vec<JoinHandle<()>>,
    writers: Arc<Mutex<Vec<JoinHandle<()>>>>,
    counters: Arc<Counters>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn requests_served(&self) -> u64 {
        self.counters.requests.load(Ordering::Relaxed)
    }

    pub fn connections_accepted(&self) -> u64 {
        self.counters.connections.load(Ordering::Relaxed)
    }

    pub fn is_stopping(&self) -> bool {
        self.stop.load(Ordering::SeqCst)
    }

    /// Stops accepting, answers every request already read, then returns.
    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // unblock accept()
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_millis(200));
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
        let writers: Vec<_> = self
            .writers
            .lock()
            .expect("writer list")
            .drain(..)
            .collect();
        for w in writers {
            let _ = w.join();
        }
        info!(
            "server stopped after {} requests on {} connections",
            self.requests_served(),
            self.connections_accepted()
        );
    }

    /// Blocks until `stop` (shared with a signal handler, say) becomes true,
    /// then shuts down.
    pub fn run_until(self, stop: &AtomicBool) {
        while !stop.load(Ordering::SeqCst) {
            thread::sleep(POLL);
        }
        self.shutdown();
    }
}

/// Binds `listen` and serves `core` with `max_concurrency` compute workers.
/// Requests beyond that wait in one FIFO queue.
pub fn spawn(
    core: Arc<ServerCore>,
    listen: &str,
    max_concurrency: usize,
    compute_timeout_ms: u64,
) -> std::io::Result<ServerHandle> {
    let listener = TcpListener::bind(listen)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let counters = Arc::new(Counters::default());
    let (jobs, queue) = channel::<Job>();
    let queue = Arc::new(Mutex::new(queue));

    let workers = (0..max_concurrency.max(1))
        .map(|i| {
            let queue = Arc::clone(&queue);
            let core = Arc::clone(&core);
            let counters = Arc::clone(&counters);
            thread::Builder::new()
                .name(format!("cjade-worker-{i}"))
                .spawn(move || worker(&core, &queue, compute_timeout_ms, &counters))
                .expect("spawn worker")
        })
        .collect();

    let writers = Arc::new(Mutex::new(Vec::new()));
    let acceptor = {
        let stop = Arc::clone(&stop);
        let writers = Arc::clone(&writers);
        let counters = Arc::clone(&counters);
        let hello = encode_frame(&Message::Hello(core.hello())).expect("hello encodes");
        thread::Builder::new()
            .name("cjade-accept".into())
            .spawn(move || accept_loop(listener, jobs, hello, &stop, &writers, &counters))?
    };
    info!(
        "listening on {addr} with {} workers",
        max_concurrency.max(1)
    );
    Ok(ServerHandle {
        addr,
        stop,
        acceptor: Some(acceptor),
        workers,
        writers,
        counters,
    })
}

fn accept_loop(
    listener: TcpListener,
    jobs: Sender<Job>,
    hello: Vec<u8>,
    stop: &Arc<AtomicBool>,
    writers: &Arc<Mutex<Vec<JoinHandle<()>>>>,
    counters: &Arc<Counters>,
) {
    let mut readers = Vec::new();
    for stream in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                warn!("accept failed: {e}");
                continue;
            }
        };
        counters.connections.fetch_add(1, Ordering::Relaxed);
        let peer = stream
            .peer_addr()
            .map(|a| a.to_string())
            .unwrap_or_default();
        debug!("connection from {peer}");
        match start_connection(stream, jobs.clone(), &hello, Arc::clone(stop)) {
            Ok((reader, writer)) => {
                readers.push(reader);
                writers.lock().expect("writer list").push(writer);
            }
            Err(e) => warn!("{peer}: {e}"),
        }
        readers.retain(|r: &JoinHandle<()>| !r.is_finished());
        writers
            .lock()
            .expect("writer list")
            .retain(|w| !w.is_finished());
    }
    drop(jobs);
    for r in readers {
        let _ = r.join();
    }
}

fn start_connection(
    stream: TcpStream,
    jobs: Sender<Job>,
    hello: &[u8],
    stop: Arc<AtomicBool>,
) -> std::io::Result<(JoinHandle<()>, JoinHandle<()>)> {
    let _ = stream.set_nodelay(true);
    stream.set_read_timeout(Some(POLL))?;
    stream.set_write_timeout(Some(WRITE_TIMEOUT))?;
    let write_half = stream.try_clone()?;
    let (out, inbox) = channel::<Outbound>();
    out.send(Outbound::Frame(hello.to_vec()))
        .expect("fresh channel");
    let writer = thread::Builder::new()
        .name("cjade-write".into())
        .spawn(move || write_loop(write_half, inbox))?;
    let reader = thread::Builder::new()
        .name("cjade-read".into())
        .spawn(move || read_loop(stream, out, jobs, &stop))?;
    Ok((reader, writer))
}

fn write_loop(mut stream: TcpStream, inbox: Receiver<Outbound>) {
    for item in inbox {
        match item {
            Outbound::Frame(bytes) => {
                if stream.write_all(&bytes).is_err() {
                    break;
                }
            }
            Outbound::Close => break,
        }
    }
    let _ = stream.flush();
    let _ = stream.shutdown(Shutdown::Both);
}

fn error_frame(request_id: u64, code: ErrorCode, message: String) -> Outbound {
    let msg = Message::Error(ErrorMessage {
        request_id,
        code,
        message,
    });
    Outbound::Frame(encode_frame(&msg).expect("error frames always encode"))
}

fn read_loop(stream: TcpStream, out: Sender<Outbound>, jobs: Sender<Job>, stop: &AtomicBool) {
    let mut reader = MessageReader::new(stream);
    while !stop.load(Ordering::SeqCst) {
        match reader.read_message() {
            Ok(Some(Message::ClassifyRequest(request))) => {
                let job = Job {
                    request,
                    reply: out.clone(),
                };
                if jobs.send(job).is_err() {
                    break;
                }
            }
            Ok(Some(Message::Ping)) => {
                let _ = out.send(Outbound::Frame(encode_frame(&Message::Pong).expect("pong")));
            }
            Ok(Some(other)) => {
                let _ = out.send(error_frame(
                    0,
                    ErrorCode::BadRequest,
                    format!("clients may not send {:?}", other.msg_type()),
                ));
            }
            Ok(None) => break,
            Err(e) if e.is_timeout() => continue,
            Err(StreamError::Protocol(e)) => {
                debug!("malformed input: {e}");
                let _ = out.send(error_frame(0, ErrorCode::Malformed, e.to_string()));
                let _ = out.send(Outbound::Close);
                break;
            }
            Err(StreamError::Io(_)) => break,
        }
    }
    if stop.load(Ordering::SeqCst) {
        // stop reading; replies to queued work are still delivered
        let _ = reader.get_ref().shutdown(Shutdown::Read);
    }
}

fn worker(core: &ServerCore, queue: &Mutex<Receiver<Job>>, timeout_ms: u64, counters: &Counters) {
    loop {
        let job = match queue.lock().expect("job queue").recv() {
            Ok(j) => j,
            Err(_) => return,
        };
        let start = Instant::now();
        let id = job.request.request_id;
        let outcome = core.handle(&job.request);
        let item = if start.elapsed() > Duration::from_millis(timeout_ms) {
            counters.errors.fetch_add(1, Ordering::Relaxed);
            error_frame(
                id,
                ErrorCode::Timeout,
                format!("compute exceeded {timeout_ms} ms"),
            )
        } else {
            match outcome {
                Ok(resp) => match encode_frame(&Message::ClassifyResponse(resp)) {
                    Ok(f) => Outbound::Frame(f),
                    Err(e) => error_frame(id, ErrorCode::Internal, e.to_string()),
                },
                Err(e) => {
                    counters.errors.fetch_add(1, Ordering::Relaxed);
                    error_frame(id, e.code, e.message)
                }
            }
        };
        counters.requests.fetch_add(1, Ordering::Relaxed);
        let _ = job.reply.send(item);
    }
}
