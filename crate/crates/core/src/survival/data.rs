use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One subject: baseline covariates, binary treatment, observed time
/// `min(T, C)`, event indicator `T <= C`, and the site it was recorded at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: Vec<f64>,
    pub a: u8,
    pub y: f64,
    pub delta: u8,
    pub site: usize,
}

impl Observation {
    pub fn new(x: Vec<f64>, a: u8, y: f64, delta: u8, site: usize) -> Result<Self> {
        let obs = Observation { x, a, y, delta, site };
        obs.validate()?;
        Ok(obs)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.y >= 0.0 && self.y.is_finite()) {
            return Err(Error::invalid(format!("observed time must be finite and >= 0, got {}", self.y)));
        }
        if self.a > 1 {
            return Err(Error::invalid(format!("treatment must be 0 or 1, got {}", self.a)));
        }
        if self.delta > 1 {
            return Err(Error::invalid(format!("event indicator must be 0 or 1, got {}", self.delta)));
        }
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("covariates must be finite"));
        }
        Ok(())
    }

    pub fn event(&self) -> bool {
        self.delta == 1
    }

    /// `(y, indicator)` for the chosen outcome; censoring flips `delta`.
    pub fn outcome(&self, outcome: Outcome) -> (f64, bool) {
        match outcome {
            Outcome::Event => (self.y, self.delta == 1),
            Outcome::Censoring => (self.y, self.delta == 0),
        }
    }
}

/// Which time a survival model describes: the event time `T` or the
/// censoring time `C`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Event,
    Censoring,
}

/// A validated multi-site sample. Site 0 is the target.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    obs: Vec<Observation>,
    dim: usize,
    n_sites: usize,
}

impl Dataset {
    /// `n_sites` defaults to one more than the largest site id present.
    pub fn new(obs: Vec<Observation>, n_sites: Option<usize>) -> Result<Self> {
        if obs.is_empty() {
            return Err(Error::invalid("dataset is empty"));
        }
        let dim = obs[0].x.len();
        let mut max_site = 0;
        for (i, o) in obs.iter().enumerate() {
            o.validate().map_err(|e| Error::Ingestion {
                row: i + 1,
                message: e.to_string(),
            })?;
            if o.x.len() != dim {
                return Err(Error::Ingestion {
                    row: i + 1,
                    message: format!("expected {dim} covariates, found {}", o.x.len()),
                });
            }
            max_site = max_site.max(o.site);
        }
        let n_sites = n_sites.unwrap_or(max_site + 1);
        if max_site >= n_sites {
            return Err(Error::invalid(format!("site id {max_site} out of range for {n_sites} sites")));
        }
        Ok(Dataset { obs, dim, n_sites })
    }

    pub fn obs(&self) -> &[Observation] {
        &self.obs
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn site_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_sites];
        for o in &self.obs {
            counts[o.site] += 1;
        }
        counts
    }

    /// Row indices of one site, in dataset order.
    pub fn site_indices(&self, site: usize) -> Vec<usize> {
        self.obs
            .iter()
            .enumerate()
            .filter(|(_, o)| o.site == site)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn sites(&self) -> Vec<usize> {
        self.obs.iter().map(|o| o.site).collect()
    }

    /// Rows of a single site as a one-site dataset labelled site 0.
    pub fn site_only(&self, site: usize) -> Result<Dataset> {
        let obs: Vec<Observation> = self
            .obs
            .iter()
            .filter(|o| o.site == site)
            .map(|o| Observation { site: 0, ..o.clone() })
            .collect();
        if obs.is_empty() {
            return Err(Error::EmptySite(site));
        }
        Dataset::new(obs, Some(1))
    }

    /// All rows relabelled as target rows (naive pooling).
    pub fn pooled_as_target(&self) -> Dataset {
        let obs = self.obs.iter().map(|o| Observation { site: 0, ..o.clone() }).collect();
        Dataset {
            obs,
            dim: self.dim,
            n_sites: 1,
        }
    }

    /// Reads the `x1,...,xd,a,y,delta,r` schema. Row numbers in errors are
    /// 1-based data rows (the header is row 0).
    pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let cols: Vec<&str> = headers.iter().collect();
        let ncol = cols.len();
        if ncol < 4 || cols[ncol - 4..] != ["a", "y", "delta", "r"] {
            return Err(Error::Ingestion {
                row: 0,
                message: "header must end with a,y,delta,r".into(),
            });
        }
        let d = ncol - 4;
        for (j, c) in cols[..d].iter().enumerate() {
            if *c != format!("x{}", j + 1) {
                return Err(Error::Ingestion {
                    row: 0,
                    message: format!("expected column x{} but found {c}", j + 1),
                });
            }
        }
        let mut obs = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 1;
            let rec = rec.map_err(|e| Error::Ingestion {
                row,
                message: e.to_string(),
            })?;
            let field = |j: usize| rec.get(j).unwrap_or("");
            let bad = |name: &str, v: &str| Error::Ingestion {
                row,
                message: format!("invalid {name} value '{v}'"),
            };
            let mut x = Vec::with_capacity(d);
            for j in 0..d {
                let v = field(j);
                x.push(v.parse::<f64>().map_err(|_| bad(cols[j], v))?);
            }
            let parse_bin = |j: usize, name: &str| -> Result<u8> {
                let v = field(j);
                match v.parse::<u8>() {
                    Ok(b) if b <= 1 => Ok(b),
                    _ => Err(bad(name, v)),
                }
            };
            let a = parse_bin(d, "a")?;
            let y = field(d + 1).parse::<f64>().map_err(|_| bad("y", field(d + 1)))?;
            let delta = parse_bin(d + 2, "delta")?;
            let site = field(d + 3).parse::<usize>().map_err(|_| bad("r", field(d + 3)))?;
            let o = Observation { x, a, y, delta, site };
            o.validate().map_err(|e| Error::Ingestion {
                row,
                message: e.to_string(),
            })?;
            obs.push(o);
        }
        Dataset::new(obs, None)
    }

    /// Writes the ingestion schema. Floats use the shortest representation
    /// that parses back to the same value, so a round trip is exact.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=self.dim).map(|j| format!("x{j}")).collect();
        header.extend(["a", "y", "delta", "r"].map(String::from));
        w.write_record(&header)?;
        for o in &self.obs {
            let mut rec: Vec<String> = o.x.iter().map(|v| v.to_string()).collect();
            rec.push(o.a.to_string());
            rec.push(o.y.to_string());
            rec.push(o.delta.to_string());
            rec.push(o.site.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
