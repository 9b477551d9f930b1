//! Source-site side of the protocol.

use std::sync::Arc;
use std::time::Duration;

use super::messages::{Ack, AugmentationMoments, CellMoments, Envelope, ErrorReport, Hello, Message, ModelBroadcast};
use super::transport::Transport;
use crate::eif::augmentation_row;
use crate::error::{Error, Result};
use crate::fedopt::{bootstrap_weights, cv_labels, SourceCell};
use crate::nuisance::{fit_source_site, site_fold_labels, SiteCovariateSummary, SurvivalModel, TargetCovariates};
use crate::seed::SeedStream;
use crate::survival::Observation;

/// Per-row augmentation values over the grid for the row's own arm, laid
/// out row-major.
pub fn site_augmentation(site: usize, rows: &[Observation], b: &ModelBroadcast) -> Result<(Vec<f64>, Vec<String>)> {
    let grid = Arc::new(b.grid.clone());
    let model = SurvivalModel::from_params(&b.model, &grid)?;
    let seed = SeedStream::new(b.seed);
    let refs: Vec<&Observation> = rows.iter().collect();
    let labels = site_fold_labels(rows.len(), b.nuisance.folds, site, &seed);
    let nu = fit_source_site(
        site,
        &refs,
        &labels,
        &model,
        TargetCovariates::Summary(&b.target_summary),
        &grid,
        &b.nuisance,
        &seed,
    )?;
    let l = grid.len();
    let mut aug = vec![0.0; rows.len() * l];
    for (r, o) in rows.iter().enumerate() {
        let span = r * l..(r + 1) * l;
        let pa = if o.a == 1 { nu.pi1[r] } else { 1.0 - nu.pi1[r] };
        let scale = nu.omega[r] / pa;
        augmentation_row(
            grid.interval_index(o.y),
            o.event(),
            &nu.surv[o.a as usize][span.clone()],
            &nu.cens[span.clone()],
            scale,
            &mut aug[span],
        );
    }
    Ok((aug, nu.notes))
}

/// The covariate summary and augmentation moments a site sends back.
pub fn site_compute(site: usize, rows: &[Observation], b: &ModelBroadcast) -> Result<(SiteCovariateSummary, AugmentationMoments)> {
    if rows.is_empty() {
        return Err(Error::EmptySite(site));
    }
    b.nuisance.validate()?;
    b.fed.validate()?;
    let (aug, notes) = site_augmentation(site, rows, b)?;
    let l = b.grid.len();
    let n = rows.len();
    let seed = SeedStream::new(b.seed);
    let folds = b.fed.cv_folds;
    let cv = cv_labels(n, folds, site, &seed);
    let boot: Vec<Vec<f64>> = (0..b.fed.bootstrap).map(|r| bootstrap_weights(n, site, r, &seed)).collect();
    let boot_refs: Vec<&[f64]> = boot.iter().map(Vec::as_slice).collect();
    let mut cells = Vec::with_capacity(2 * l);
    let mut col = vec![0.0; n];
    for a in 0..2u8 {
        for j in 0..l {
            for (r, o) in rows.iter().enumerate() {
                col[r] = if o.a == a { aug[r * l + j] } else { 0.0 };
            }
            cells.push(CellMoments {
                j,
                a,
                cell: SourceCell::compute(&col, &cv, folds, &boot_refs),
            });
        }
    }
    let x: Vec<&[f64]> = rows.iter().map(|o| o.x.as_slice()).collect();
    let summary = SiteCovariateSummary::from_rows(site, &x)?;
    let empty_arm = [0u8, 1].map(|a| !rows.iter().any(|o| o.a == a));
    Ok((
        summary,
        AugmentationMoments {
            n,
            empty_arm,
            cells,
            notes,
        },
    ))
}

fn expect_message(t: &mut dyn Transport, timeout: Duration) -> Result<Envelope> {
    match t.recv(timeout)? {
        Some(line) => Envelope::from_line(&line),
        None => Err(Error::Protocol("timed out waiting for the coordinator".into())),
    }
}

/// Runs one source site: announce, wait for the broadcast, reply with
/// moments, wait for the acknowledgement.
pub fn site_run(site: usize, rows: &[Observation], transport: &mut dyn Transport, timeout: Duration) -> Result<()> {
    if site == 0 {
        return Err(Error::invalid("site 0 is the coordinator"));
    }
    let dim = rows.first().map_or(0, |o| o.x.len());
    transport.send(&Envelope::new(site, Message::Hello(Hello { n: rows.len(), dim })).to_line()?)?;
    let env = expect_message(transport, timeout)?;
    let Message::ModelBroadcast(b) = env.message else {
        return Err(Error::Protocol(format!("expected ModelBroadcast, got {}", env.message.kind())));
    };
    match site_compute(site, rows, &b) {
        Ok((summary, moments)) => {
            transport.send(&Envelope::new(site, Message::CovariateSummary(summary)).to_line()?)?;
            transport.send(&Envelope::new(site, Message::AugmentationMoments(moments)).to_line()?)?;
        }
        Err(e) => {
            let report = ErrorReport { message: e.to_string() };
            transport.send(&Envelope::new(site, Message::Error(report)).to_line()?)?;
            return Err(e);
        }
    }
    let env = expect_message(transport, timeout)?;
    match env.message {
        Message::Ack(Ack { .. }) => Ok(()),
        other => Err(Error::Protocol(format!("expected Ack, got {}", other.kind()))),
    }
}
