//! TCP backend: one connection per worker, framed with [`super::wire`].
//!
//! The master accepts exactly `N` distinct registrations before iteration 0.
//! A reader thread per connection forwards reports into a single ordered
//! mailbox consumed by the master loop.

use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvError, Sender};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use nalgebra::DVector;

use crate::error::{check_dim, Error, Result};
use crate::problem::{ConsensusProblem, LocalObjective};
use crate::protocol::{
    run_to_completion, DualInit, ProtocolConfig, Report, RunOptions, WireMessage, WorkerState,
};
use crate::prox::FistaConfig;
use crate::trace::{ClockAccount, TimeUnit, Trace};

use super::wire::{self, read_frame, write_frame, MASTER_ID};
use super::Transport;

/// How long a worker keeps retrying to reach a master that is not listening yet.
const CONNECT_RETRY: Duration = Duration::from_secs(10);

/// Master endpoint with all workers registered.
pub struct TcpMaster {
    writers: Vec<TcpStream>,
    mailbox: Receiver<Result<Report>>,
    closing: Arc<AtomicBool>,
    started: Instant,
    wait: f64,
}

impl TcpMaster {
    /// Accepts connections on `listener` until `workers` distinct ids have
    /// registered. Duplicate or out-of-range ids get an error frame and are
    /// dropped; the accept loop keeps going.
    pub fn accept(listener: &TcpListener, workers: usize) -> Result<Self> {
        let mut slots: Vec<Option<TcpStream>> = (0..workers).map(|_| None).collect();
        let mut registered = 0;
        while registered < workers {
            let (mut stream, peer) = listener.accept()?;
            stream.set_nodelay(true)?;
            let reply = match read_frame(&mut stream) {
                Ok(Some((WireMessage::Register { worker }, _))) if worker >= workers => {
                    log::warn!("{peer}: rejected registration for id {worker} (N = {workers})");
                    Some(wire::ERR_ID_OUT_OF_RANGE)
                }
                Ok(Some((WireMessage::Register { worker }, _))) if slots[worker].is_some() => {
                    log::warn!("{peer}: rejected duplicate registration for id {worker}");
                    Some(wire::ERR_DUPLICATE_ID)
                }
                Ok(Some((WireMessage::Register { worker }, _))) => {
                    log::debug!("{peer}: worker {worker} registered");
                    slots[worker] = Some(stream.try_clone()?);
                    registered += 1;
                    None
                }
                Ok(_) | Err(_) => {
                    log::warn!("{peer}: connection did not open with a registration frame");
                    Some(wire::ERR_PROTOCOL)
                }
            };
            if let Some(code) = reply {
                // The peer may already be gone; nothing more to do with it.
                let _ = write_frame(&mut stream, &WireMessage::Error { code }, MASTER_ID);
            }
        }

        let (tx, mailbox) = mpsc::channel();
        let closing = Arc::new(AtomicBool::new(false));
        let mut writers = Vec::with_capacity(workers);
        for (id, slot) in slots.into_iter().enumerate() {
            let stream = slot.expect("every slot registered");
            let reader = stream.try_clone()?;
            spawn_reader(id, reader, tx.clone(), Arc::clone(&closing));
            writers.push(stream);
        }
        Ok(Self {
            writers,
            mailbox,
            closing,
            started: Instant::now(),
            wait: 0.0,
        })
    }
}

fn spawn_reader(
    id: usize,
    mut stream: TcpStream,
    tx: Sender<Result<Report>>,
    closing: Arc<AtomicBool>,
) {
    thread::spawn(move || loop {
        let item = match read_frame(&mut stream) {
            Ok(Some((WireMessage::Report(r), _))) if r.worker == id => Ok(r),
            Ok(Some((other, sender))) => Err(Error::Protocol(format!(
                "worker {id} connection carried an unexpected frame {other:?} from sender {sender}"
            ))),
            Ok(None) => {
                if closing.load(Ordering::SeqCst) {
                    return;
                }
                Err(Error::Transport(format!(
                    "connection to worker {id} closed"
                )))
            }
            Err(e) => {
                if closing.load(Ordering::SeqCst) {
                    return;
                }
                Err(e)
            }
        };
        let failed = item.is_err();
        if tx.send(item).is_err() || failed {
            return;
        }
    });
}

impl Transport for TcpMaster {
    fn try_recv(&mut self) -> Result<Option<Report>> {
        match self.mailbox.try_recv() {
            Ok(r) => r.map(Some),
            Err(mpsc::TryRecvError::Empty) => Ok(None),
            Err(mpsc::TryRecvError::Disconnected) => {
                Err(Error::Transport("all worker connections are gone".into()))
            }
        }
    }

    fn recv(&mut self) -> Result<Report> {
        let t = Instant::now();
        let got = self.mailbox.recv();
        self.wait += t.elapsed().as_secs_f64();
        match got {
            Ok(r) => r,
            Err(RecvError) => Err(Error::Transport("all worker connections are gone".into())),
        }
    }

    fn broadcast(&mut self, targets: &[usize], x0: &DVector<f64>, k: u64) -> Result<()> {
        let msg = WireMessage::Broadcast { x0: x0.clone(), k };
        let frame = wire::encode(&msg, MASTER_ID);
        for &i in targets {
            use std::io::Write;
            self.writers[i]
                .write_all(&frame)
                .map_err(|e| Error::Transport(format!("broadcast to worker {i} failed: {e}")))?;
        }
        Ok(())
    }

    fn master_computed(&mut self, _wall: Duration) -> Result<()> {
        Ok(())
    }

    fn shutdown(&mut self) -> Result<usize> {
        self.closing.store(true, Ordering::SeqCst);
        for (i, w) in self.writers.iter_mut().enumerate() {
            if let Err(e) = write_frame(w, &WireMessage::Shutdown, MASTER_ID) {
                log::warn!("could not deliver shutdown to worker {i}: {e}");
            }
        }
        Ok(self.mailbox.try_iter().filter(|r| r.is_ok()).count())
    }

    fn now(&self) -> f64 {
        self.started.elapsed().as_secs_f64()
    }

    /// Everything outside blocking receives counts as master compute.
    fn master_clock(&self) -> ClockAccount {
        let total = self.now();
        ClockAccount {
            compute: total - self.wait,
            wait: self.wait,
        }
    }

    /// Worker clocks live in the worker processes.
    fn worker_clocks(&self) -> Vec<ClockAccount> {
        Vec::new()
    }

    fn time_unit(&self) -> TimeUnit {
        TimeUnit::Wall
    }

    fn notes(&self) -> Vec<String> {
        vec!["worker clocks are reported by the worker processes, not the master".into()]
    }
}

/// Outcome of a worker process after a clean shutdown.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerSummary {
    pub id: usize,
    pub updates: u64,
    pub clock: ClockAccount,
    pub unconverged: usize,
}

fn connect_with_retry<A: ToSocketAddrs>(addr: A) -> Result<TcpStream> {
    let addrs: Vec<SocketAddr> = addr.to_socket_addrs()?.collect();
    let deadline = Instant::now() + CONNECT_RETRY;
    loop {
        match TcpStream::connect(&addrs[..]) {
            Ok(s) => return Ok(s),
            Err(e) if Instant::now() < deadline => {
                log::debug!("connect failed ({e}); retrying");
                thread::sleep(Duration::from_millis(50));
            }
            Err(e) => return Err(Error::Transport(format!("cannot reach master: {e}"))),
        }
    }
}

/// Worker loop: register as `worker_id`, answer each broadcast with one
/// report, return on `Shutdown`.
pub fn tcp_connect_worker<A: ToSocketAddrs>(
    addr: A,
    worker_id: usize,
    obj: LocalObjective,
    rho: f64,
    fista: FistaConfig,
    dual_init: DualInit,
) -> Result<WorkerSummary> {
    let mut stream = connect_with_retry(addr)?;
    stream.set_nodelay(true)?;
    write_frame(
        &mut stream,
        &WireMessage::Register { worker: worker_id },
        worker_id as u32,
    )?;
    let mut state = WorkerState::with_dual_init(worker_id, obj, dual_init)?;
    let started = Instant::now();
    let mut compute = 0.0;
    let mut unconverged = 0;
    loop {
        let frame = read_frame(&mut stream)?;
        match frame {
            None => return Err(Error::Transport("master closed the connection".into())),
            Some((WireMessage::Broadcast { x0, .. }, _)) => {
                check_dim(state.x.len(), x0.len())?;
                let t = Instant::now();
                let (report, sub) = state.step(&x0, rho, &fista)?;
                compute += t.elapsed().as_secs_f64();
                if !sub.converged {
                    unconverged += 1;
                }
                write_frame(&mut stream, &WireMessage::Report(report), worker_id as u32)?;
            }
            Some((WireMessage::Shutdown, _)) => {
                let total = started.elapsed().as_secs_f64();
                return Ok(WorkerSummary {
                    id: worker_id,
                    updates: state.k,
                    clock: ClockAccount {
                        compute,
                        wait: total - compute,
                    },
                    unconverged,
                });
            }
            Some((WireMessage::Error { code }, _)) => {
                let why = match code {
                    wire::ERR_DUPLICATE_ID => "duplicate worker id",
                    wire::ERR_ID_OUT_OF_RANGE => "worker id out of range",
                    _ => "protocol error",
                };
                return Err(Error::Rejected(format!(
                    "master rejected worker {worker_id}: {why}"
                )));
            }
            Some((other, _)) => {
                return Err(Error::Protocol(format!(
                    "worker received unexpected frame {other:?}"
                )))
            }
        }
    }
}

/// Binds `bind`, waits for all workers and runs the protocol over TCP.
pub fn tcp_serve_master<A: ToSocketAddrs>(
    p: &ConsensusProblem,
    cfg: &ProtocolConfig,
    bind: A,
    opts: RunOptions,
) -> Result<Trace> {
    let listener = TcpListener::bind(bind)?;
    log::info!("master listening on {}", listener.local_addr()?);
    let mut master = TcpMaster::accept(&listener, p.workers())?;
    run_to_completion(p, cfg, &mut master, opts)
}

/// Runs master and workers in one process over loopback TCP.
pub fn tcp_loopback_run(
    p: &ConsensusProblem,
    cfg: &ProtocolConfig,
    fista: &FistaConfig,
    opts: RunOptions,
) -> Result<(Trace, Vec<WorkerSummary>)> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let handles: Vec<_> = p
        .locals()
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let (f, rho, fista, init) = (f.clone(), cfg.rho, *fista, cfg.dual_init);
            thread::spawn(move || tcp_connect_worker(addr, i, f, rho, fista, init))
        })
        .collect();
    let mut master = TcpMaster::accept(&listener, p.workers())?;
    let trace = run_to_completion(p, cfg, &mut master, opts);
    if trace.is_err() {
        // Release the workers so the joins below cannot hang.
        let _ = master.shutdown();
    }
    let mut summaries = Vec::new();
    for h in handles {
        let s = h
            .join()
            .map_err(|_| Error::Transport("worker thread panicked".into()))?;
        if trace.is_ok() {
            summaries.push(s?);
        }
    }
    Ok((trace?, summaries))
}
