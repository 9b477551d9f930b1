use std::net::TcpListener;
use std::thread;

use anyhow::{bail, Context, Result};

use fedsurv_core::fednet::{accept_sites, coordinator_run, loopback_pair, site_run, CoordinatorConfig, SiteEndpoint, Tcp};
use fedsurv_core::fedopt::WeightMethod;
use fedsurv_core::simbench::Method;
use fedsurv_core::{Dataset, Observation};

use crate::config::{RunConfig, TransportKind};
use crate::estimate::read_data;
use crate::output::{create, fallback_points, fed_curves, write_curves, write_weights};
use crate::Status;

fn rows(data: &Dataset, site: usize) -> Vec<Observation> {
    data.obs().iter().filter(|o| o.site == site).cloned().collect()
}

pub fn coordinator(cfg: &RunConfig) -> Result<Status> {
    let data = read_data(cfg)?;
    cfg.echo(&cfg.out)?;
    let ccfg = CoordinatorConfig {
        grid: cfg.grid()?,
        nuisance: cfg.nuisance(),
        fed: cfg.fed(),
        method: cfg.weight_method(),
        seed: cfg.seed(),
        timeout: cfg.timeout(),
    };
    let target = rows(&data, 0);
    let mut workers = Vec::new();
    let (endpoints, expected) = match cfg.transport {
        TransportKind::Loopback => {
            let mut endpoints = Vec::new();
            for k in (1..data.n_sites()).filter(|&k| data.site_counts()[k] > 0) {
                let (coord, mut site) = loopback_pair();
                endpoints.push(SiteEndpoint {
                    site: k,
                    transport: Box::new(coord),
                });
                let r = rows(&data, k);
                let timeout = cfg.timeout();
                workers.push(thread::spawn(move || {
                    if let Err(e) = site_run(k, &r, &mut site, timeout) {
                        log::warn!("site {k}: {e}");
                    }
                }));
            }
            let n = endpoints.len();
            (endpoints, n)
        }
        TransportKind::Tcp => {
            if data.n_sites() > 1 {
                eprintln!("note: rows of source sites in {} are ignored; sites connect over tcp", cfg.data.as_ref().unwrap().display());
            }
            let listener = TcpListener::bind(&cfg.listen).with_context(|| format!("binding {}", cfg.listen))?;
            eprintln!("listening on {} for {} sites", listener.local_addr()?, cfg.expected_sites);
            let endpoints = accept_sites(&listener, cfg.expected_sites, cfg.timeout())?;
            if endpoints.len() < cfg.expected_sites {
                eprintln!("warning: {} of {} expected sites connected", endpoints.len(), cfg.expected_sites);
            }
            (endpoints, cfg.expected_sites)
        }
    };
    let connected = endpoints.len();
    let out = coordinator_run(&target, endpoints, &ccfg).context("federated run failed")?;
    for w in workers {
        let _ = w.join();
    }
    let method = match cfg.weight_method() {
        WeightMethod::Plain => Method::Fed,
        WeightMethod::Bootstrap => Method::FedBoot,
    };
    write_curves(&cfg.out.join("curves.csv"), &fed_curves(method, &out.fed))?;
    write_weights(&cfg.out.join("weights.csv"), &out.fed)?;
    out.transcript.write_ndjson(create(&cfg.out.join("transcript.ndjson"))?)?;
    for (k, why) in &out.dropped {
        eprintln!("warning: site {k} dropped: {why}");
    }
    let fb = fallback_points(&out.fed);
    if !fb.is_empty() {
        eprintln!("warning: {} points fell back to the target-only estimate (first: {})", fb.len(), fb[0]);
    }
    for n in &out.notes {
        log::info!("{n}");
    }
    let answered = connected - out.dropped.len();
    eprintln!("{answered} of {expected} source sites contributed");
    let degraded = answered < expected || !fb.is_empty();
    Ok(if degraded { Status::Degraded } else { Status::Clean })
}

pub fn site(cfg: &RunConfig) -> Result<Status> {
    let data = read_data(cfg)?;
    let r = rows(&data, cfg.site);
    if r.is_empty() {
        bail!("{} holds no rows of site {}", cfg.data.as_ref().unwrap().display(), cfg.site);
    }
    if cfg.transport != TransportKind::Tcp {
        bail!("invalid value for `transport`: a standalone site connects over tcp");
    }
    let mut t = Tcp::connect(&cfg.connect, cfg.timeout()).with_context(|| format!("connecting to {}", cfg.connect))?;
    site_run(cfg.site, &r, &mut t, cfg.timeout()).with_context(|| format!("site {}", cfg.site))?;
    eprintln!("site {} sent its moments ({} rows)", cfg.site, r.len());
    Ok(Status::Clean)
}
