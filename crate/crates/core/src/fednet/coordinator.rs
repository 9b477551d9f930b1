//! Coordinator (target-site) side of the protocol.

use std::net::TcpListener;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::messages::{Ack, AugmentationMoments, Envelope, Message, ModelBroadcast};
use super::transcript::{Direction, Transcript, TranscriptEntry};
use super::transport::{Tcp, Transport};
use crate::eif::augmentation_row;
use crate::error::{Error, Result};
use crate::fedopt::{bootstrap_weights, cv_labels, fed_curve, CellData, FedConfig, FedCurveEstimate, SourceCell, TargetCell, WeightMethod};
use crate::nuisance::{fit_target_site, site_fold_labels, NuisanceConfig, SiteCovariateSummary, SiteNuisance};
use crate::seed::SeedStream;
use crate::survival::{Observation, TimeGrid};

#[derive(Debug, Clone)]
pub struct CoordinatorConfig {
    pub grid: Arc<TimeGrid>,
    pub nuisance: NuisanceConfig,
    pub fed: FedConfig,
    pub method: WeightMethod,
    pub seed: u64,
    pub timeout: Duration,
}

/// A connection to one source site.
pub struct SiteEndpoint {
    pub site: usize,
    pub transport: Box<dyn Transport>,
}

/// What a source site contributed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteReply {
    pub site: usize,
    pub summary: SiteCovariateSummary,
    pub moments: AugmentationMoments,
}

#[derive(Debug, Clone)]
pub struct CoordinatorOutput {
    pub fed: FedCurveEstimate,
    pub replies: Vec<SiteReply>,
    /// Sites left out, with the reason.
    pub dropped: Vec<(usize, String)>,
    pub transcript: Transcript,
    pub notes: Vec<String>,
}

/// A transport whose first incoming line was already read.
struct Replay {
    first: Option<String>,
    inner: Box<dyn Transport>,
}

impl Transport for Replay {
    fn send(&mut self, line: &str) -> Result<()> {
        self.inner.send(line)
    }

    fn recv(&mut self, timeout: Duration) -> Result<Option<String>> {
        match self.first.take() {
            Some(l) => Ok(Some(l)),
            None => self.inner.recv(timeout),
        }
    }
}

/// Accepts up to `count` site connections on `listener` until `deadline`
/// passes, identifying each by its Hello message. Connections that do not
/// say Hello in time are closed and skipped.
pub fn accept_sites(listener: &TcpListener, count: usize, deadline: Duration) -> Result<Vec<SiteEndpoint>> {
    let start = Instant::now();
    listener.set_nonblocking(true)?;
    let mut out: Vec<SiteEndpoint> = Vec::new();
    while out.len() < count && start.elapsed() < deadline {
        match listener.accept() {
            Ok((stream, addr)) => {
                stream.set_nonblocking(false)?;
                let mut t = Tcp::new(stream)?;
                let left = deadline.saturating_sub(start.elapsed());
                let hello = t.recv(left).ok().flatten().and_then(|l| Envelope::from_line(&l).ok().map(|e| (e, l)));
                match hello {
                    Some((env, line)) if matches!(env.message, Message::Hello(_)) && env.site > 0 && out.iter().all(|e| e.site != env.site) => {
                        out.push(SiteEndpoint {
                            site: env.site,
                            transport: Box::new(Replay {
                                first: Some(line),
                                inner: Box::new(t),
                            }),
                        });
                    }
                    _ => log::warn!("connection from {addr} did not identify as a new source site"),
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(5)),
            Err(e) => return Err(e.into()),
        }
    }
    listener.set_nonblocking(false)?;
    Ok(out)
}

/// Connection states of one site exchange.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Idle,
    Broadcast,
    AwaitMoments,
    Done,
}

struct Exchange<'a> {
    site: usize,
    transport: &'a mut dyn Transport,
    log: Vec<TranscriptEntry>,
    timeout: Duration,
}

impl Exchange<'_> {
    fn send(&mut self, msg: Message) -> Result<()> {
        let line = Envelope::new(self.site, msg.clone()).to_line()?;
        self.log.push(TranscriptEntry {
            site: self.site,
            seq: self.log.len(),
            direction: Direction::ToSite,
            kind: msg.kind().to_string(),
            line: line.clone(),
        });
        self.transport.send(&line)
    }

    fn recv(&mut self) -> Result<Envelope> {
        let line = self.transport.recv(self.timeout)?.ok_or(Error::SiteUnavailable(self.site))?;
        let env = Envelope::from_line(&line)?;
        self.log.push(TranscriptEntry {
            site: self.site,
            seq: self.log.len(),
            direction: Direction::FromSite,
            kind: env.message.kind().to_string(),
            line,
        });
        if env.site != self.site {
            return Err(Error::Protocol(format!("message from site {} on the connection of site {}", env.site, self.site)));
        }
        Ok(env)
    }

    fn run(&mut self, broadcast: &ModelBroadcast, expected_cells: usize) -> Result<SiteReply> {
        let mut state = State::Idle;
        let mut summary = None;
        let mut moments = None;
        loop {
            match state {
                State::Idle => match self.recv()?.message {
                    Message::Hello(h) if h.n > 0 && h.dim == broadcast.target_summary.mean.len() => state = State::Broadcast,
                    Message::Hello(h) => return Err(Error::Protocol(format!("site has n = {}, dim = {}", h.n, h.dim))),
                    other => return Err(Error::Protocol(format!("expected Hello, got {}", other.kind()))),
                },
                State::Broadcast => {
                    self.send(Message::ModelBroadcast(Box::new(broadcast.clone())))?;
                    state = State::AwaitMoments;
                }
                State::AwaitMoments => {
                    match self.recv()?.message {
                        Message::CovariateSummary(s) => summary = Some(s),
                        Message::AugmentationMoments(m) => moments = Some(m),
                        Message::Error(e) => return Err(Error::Protocol(format!("site reported: {}", e.message))),
                        other => return Err(Error::Protocol(format!("unexpected {}", other.kind()))),
                    }
                    if summary.is_some() && moments.is_some() {
                        state = State::Done;
                    }
                }
                State::Done => {
                    let summary: SiteCovariateSummary = summary.take().expect("set before Done");
                    let moments: AugmentationMoments = moments.take().expect("set before Done");
                    check_moments(&moments, expected_cells, broadcast)?;
                    summary.validate()?;
                    self.send(Message::Ack(Ack { done: true }))?;
                    return Ok(SiteReply {
                        site: self.site,
                        summary,
                        moments,
                    });
                }
            }
        }
    }
}

fn check_moments(m: &AugmentationMoments, expected_cells: usize, b: &ModelBroadcast) -> Result<()> {
    if m.n == 0 {
        return Err(Error::Protocol("moments from an empty site".into()));
    }
    if m.cells.len() != expected_cells {
        return Err(Error::Protocol(format!("expected {expected_cells} cells, got {}", m.cells.len())));
    }
    let l = b.grid.len();
    for (i, c) in m.cells.iter().enumerate() {
        if c.a as usize != i / l || c.j != i % l {
            return Err(Error::Protocol("cells out of order".into()));
        }
        if c.cell.folds.len() != b.fed.cv_folds || c.cell.boot.len() != b.fed.bootstrap {
            return Err(Error::Protocol("cell splits do not match the configuration".into()));
        }
        let all = std::iter::once(&c.cell.full).chain(&c.cell.folds).chain(&c.cell.boot);
        if all.into_iter().any(|x| !(x.n.is_finite() && x.sum.is_finite() && x.sum_sq.is_finite())) {
            return Err(Error::Protocol("non-finite moments".into()));
        }
    }
    Ok(())
}

/// Target-row cell statistics from the coordinator's own nuisances.
pub fn target_cells(rows: &[Observation], nu: &SiteNuisance, grid: &TimeGrid, fed: &FedConfig, seed: &SeedStream) -> [Vec<TargetCell>; 2] {
    let l = grid.len();
    let n = rows.len();
    let mut aug = vec![0.0; n * l];
    for (r, o) in rows.iter().enumerate() {
        let span = r * l..(r + 1) * l;
        let pa = if o.a == 1 { nu.pi1[r] } else { 1.0 - nu.pi1[r] };
        augmentation_row(
            grid.interval_index(o.y),
            o.event(),
            &nu.surv[o.a as usize][span.clone()],
            &nu.cens[span.clone()],
            1.0 / pa,
            &mut aug[span],
        );
    }
    let cv = cv_labels(n, fed.cv_folds, 0, seed);
    let boot: Vec<Vec<f64>> = (0..fed.bootstrap).map(|b| bootstrap_weights(n, 0, b, seed)).collect();
    let boot_refs: Vec<&[f64]> = boot.iter().map(Vec::as_slice).collect();
    [0u8, 1].map(|a| {
        (0..l)
            .map(|j| {
                let s: Vec<f64> = (0..n).map(|r| nu.surv[a as usize][r * l + j]).collect();
                let x: Vec<f64> = rows
                    .iter()
                    .enumerate()
                    .map(|(r, o)| if o.a == a { aug[r * l + j] } else { 0.0 })
                    .collect();
                TargetCell::compute(&s, &x, &cv, fed.cv_folds, &boot_refs)
            })
            .collect()
    })
}

/// Runs the coordinator: fits the target nuisances, exchanges messages with
/// every site concurrently, and solves the federated weights over the
/// sites that answered. A site that times out, disconnects or misbehaves
/// is dropped and logged.
pub fn coordinator_run(target: &[Observation], endpoints: Vec<SiteEndpoint>, cfg: &CoordinatorConfig) -> Result<CoordinatorOutput> {
    if target.is_empty() {
        return Err(Error::EmptyTarget);
    }
    cfg.fed.validate()?;
    let mut ids: Vec<usize> = endpoints.iter().map(|e| e.site).collect();
    ids.sort_unstable();
    if ids.first() == Some(&0) || ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid("source site ids must be distinct and at least 1"));
    }
    let seed = SeedStream::new(cfg.seed);
    let refs: Vec<&Observation> = target.iter().collect();
    let labels = site_fold_labels(target.len(), cfg.nuisance.folds, 0, &seed);
    let (nu, model) = fit_target_site(&refs, &labels, &cfg.grid, &cfg.nuisance, &seed)?;
    let x: Vec<&[f64]> = target.iter().map(|o| o.x.as_slice()).collect();
    let broadcast = ModelBroadcast {
        grid: (*cfg.grid).clone(),
        model: model.to_params(),
        target_summary: SiteCovariateSummary::from_rows(0, &x)?,
        nuisance: cfg.nuisance.clone(),
        fed: cfg.fed.clone(),
        seed: cfg.seed,
    };
    let l = cfg.grid.len();
    let mut endpoints = endpoints;
    let results: Vec<(usize, Result<SiteReply>, Vec<TranscriptEntry>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = endpoints
            .iter_mut()
            .map(|ep| {
                let b = &broadcast;
                scope.spawn(move || {
                    let mut ex = Exchange {
                        site: ep.site,
                        transport: ep.transport.as_mut(),
                        log: Vec::new(),
                        timeout: cfg.timeout,
                    };
                    let r = ex.run(b, 2 * l);
                    (ep.site, r, ex.log)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("site exchange panicked")).collect()
    });
    let mut replies = Vec::new();
    let mut dropped = Vec::new();
    let mut logs = Vec::new();
    for (site, r, log) in results {
        logs.push(log);
        match r {
            Ok(reply) => replies.push(reply),
            Err(e) => {
                log::warn!("site {site} dropped: {e}");
                dropped.push((site, e.to_string()));
            }
        }
    }
    replies.sort_by_key(|r| r.site);
    dropped.sort_by_key(|d| d.0);
    let n_sites = ids.last().map_or(1, |m| m + 1);
    let targets = target_cells(target, &nu, &cfg.grid, &cfg.fed, &seed);
    let cells: [Vec<CellData>; 2] = [0usize, 1].map(|a| {
        (0..l)
            .map(|j| {
                let mut sources: Vec<Option<&SourceCell>> = vec![None; n_sites - 1];
                for r in &replies {
                    sources[r.site - 1] = Some(&r.moments.cells[a * l + j].cell);
                }
                CellData::assemble(&targets[a][j], &sources)
            })
            .collect()
    });
    let fed = fed_curve(&cfg.grid, &cells, &cfg.fed, cfg.method)?;
    let mut notes = nu.notes.clone();
    for r in &replies {
        notes.extend(r.moments.notes.iter().cloned());
    }
    Ok(CoordinatorOutput {
        fed,
        replies,
        dropped,
        transcript: Transcript::merge(logs),
        notes,
    })
}
