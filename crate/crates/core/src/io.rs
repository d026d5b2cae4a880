//! File formats: performance CSV, gain CSV, ground-truth CSV and the
//! key-value model config.
//!
//! Performance files carry a header row `n,onset_p1,…` (onset mode, rows
//! `n = 0..=N`) or `n,ioi_p1,…` (IOI mode, rows `n = 1..=N`). Comment lines
//! `# units: ms|s` and, in IOI mode, `# t0: v1,…,vK` carry metadata. All
//! reals are written with 17 significant digits.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EnsembleConfig, GainIndex, GainTrajectory, IoiSeries, OnsetTimeline};
use crate::synth::GroundTruth;

/// Format a real with 17 significant digits, which round-trips any `f64`.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Units {
    Milliseconds,
    Seconds,
}

impl Units {
    fn scale(self) -> f64 {
        match self {
            Units::Milliseconds => 1.0,
            Units::Seconds => 1000.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerformanceMode {
    Onsets,
    Iois,
}

/// A parsed performance file, converted to milliseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct Performance {
    pub mode: PerformanceMode,
    pub series: IoiSeries,
    /// Non-fatal issues, e.g. a missing `# t0:` line.
    pub warnings: Vec<String>,
}

fn parse_real(field: &str, what: &str) -> Result<f64> {
    let v: f64 =
        field.trim().parse().map_err(|_| Error::Format(format!("{what}: cannot parse {field:?} as a real")))?;
    if !v.is_finite() {
        return Err(Error::Format(format!("{what}: value {field:?} is not finite")));
    }
    Ok(v)
}

pub fn read_performance(path: &Path) -> Result<Performance> {
    let file = std::fs::File::open(path).map_err(|e| Error::Format(format!("cannot open {}: {e}", path.display())))?;
    parse_performance(std::io::BufReader::new(file))
}

pub fn parse_performance(reader: impl BufRead) -> Result<Performance> {
    let mut units = None;
    let mut t0: Option<Vec<f64>> = None;
    let mut body = String::new();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::Format(format!("unreadable input: {e}")))?;
        let trimmed = line.trim();
        if let Some(comment) = trimmed.strip_prefix('#') {
            let comment = comment.trim();
            if let Some(u) = comment.strip_prefix("units:") {
                units = Some(match u.trim() {
                    "ms" => Units::Milliseconds,
                    "s" => Units::Seconds,
                    other => return Err(Error::Format(format!("unknown units {other:?} (expected ms or s)"))),
                });
            } else if let Some(v) = comment.strip_prefix("t0:") {
                let vals = v.split(',').map(|f| parse_real(f, "t0")).collect::<Result<Vec<_>>>()?;
                t0 = Some(vals);
            }
            continue;
        }
        if trimmed.is_empty() {
            continue;
        }
        body.push_str(trimmed);
        body.push('\n');
    }

    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(body.as_bytes());
    let header = rdr.headers().map_err(|e| Error::Format(format!("bad header: {e}")))?.clone();
    if header.len() < 2 || &header[0] != "n" {
        return Err(Error::Format("header must start with `n` followed by one column per performer".into()));
    }
    let k = header.len() - 1;
    let mode = if header.iter().skip(1).enumerate().all(|(p, h)| h == format!("onset_p{}", p + 1)) {
        PerformanceMode::Onsets
    } else if header.iter().skip(1).enumerate().all(|(p, h)| h == format!("ioi_p{}", p + 1)) {
        PerformanceMode::Iois
    } else {
        return Err(Error::Format(format!("header columns must be onset_p1..onset_p{k} or ioi_p1..ioi_p{k}")));
    };

    let first_n = match mode {
        PerformanceMode::Onsets => 0,
        PerformanceMode::Iois => 1,
    };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Format(format!("row {}: {e}", r + 1)))?;
        let n: usize = record[0]
            .parse()
            .map_err(|_| Error::Format(format!("row {}: step index {:?} is not an integer", r + 1, &record[0])))?;
        if n != first_n + r {
            return Err(Error::Format(format!("row {}: expected n = {}, found {n}", r + 1, first_n + r)));
        }
        let vals = record.iter().skip(1).map(|f| parse_real(f, &format!("row n = {n}"))).collect::<Result<Vec<_>>>()?;
        rows.push(vals);
    }

    let mut warnings = Vec::new();
    let scale = units
        .unwrap_or_else(|| {
            warnings.push("no `# units:` line; assuming ms".to_string());
            Units::Milliseconds
        })
        .scale();

    let series = match mode {
        PerformanceMode::Onsets => {
            if rows.is_empty() {
                return Err(Error::Format("onset file has no rows".into()));
            }
            let per_performer = (0..k).map(|p| rows.iter().map(|row| row[p] * scale).collect()).collect();
            OnsetTimeline::new(per_performer)
                .and_then(|tl| tl.to_ioi_series())
                .map_err(|e| Error::Format(e.to_string()))?
        }
        PerformanceMode::Iois => {
            let t0 = match t0 {
                Some(v) if v.len() == k => v.into_iter().map(|t| t * scale).collect(),
                Some(v) => {
                    return Err(Error::Format(format!("`# t0:` has {} values for {k} performers", v.len())));
                }
                None => {
                    warnings.push("no `# t0:` line; assuming all initial onsets are 0".to_string());
                    vec![0.0; k]
                }
            };
            let iois = rows.into_iter().map(|row| row.into_iter().map(|r| r * scale).collect()).collect();
            IoiSeries::new(iois, t0).map_err(|e| Error::Format(e.to_string()))?
        }
    };
    Ok(Performance { mode, series, warnings })
}

pub fn write_onsets(mut w: impl Write, timeline: &OnsetTimeline) -> Result<()> {
    writeln!(w, "# units: ms")?;
    let header: Vec<String> = (1..=timeline.k()).map(|p| format!("onset_p{p}")).collect();
    writeln!(w, "n,{}", header.join(","))?;
    for n in 0..=timeline.steps() {
        let vals: Vec<String> = (1..=timeline.k()).map(|i| fmt_real(timeline.onset(i, n))).collect();
        writeln!(w, "{n},{}", vals.join(","))?;
    }
    Ok(())
}

pub fn write_iois(mut w: impl Write, series: &IoiSeries) -> Result<()> {
    writeln!(w, "# units: ms")?;
    let t0: Vec<String> = series.initial_onsets().iter().map(|&t| fmt_real(t)).collect();
    writeln!(w, "# t0: {}", t0.join(","))?;
    let header: Vec<String> = (1..=series.k()).map(|p| format!("ioi_p{p}")).collect();
    writeln!(w, "n,{}", header.join(","))?;
    for (idx, row) in series.iois().iter().enumerate() {
        let vals: Vec<String> = row.iter().map(|&r| fmt_real(r)).collect();
        writeln!(w, "{},{}", idx + 1, vals.join(","))?;
    }
    Ok(())
}

pub const GAIN_HEADER: &str = "n,i,j,alpha_mean,alpha_var,beta_mean,beta_var,mode";

/// One row of a gain output file.
#[derive(Debug, Clone, PartialEq)]
pub struct GainRow {
    pub n: usize,
    pub i: usize,
    pub j: usize,
    pub alpha_mean: f64,
    pub alpha_var: f64,
    pub beta_mean: f64,
    pub beta_var: f64,
    pub mode: String,
}

pub fn write_gains(mut w: impl Write, gains: &GainTrajectory) -> Result<()> {
    writeln!(w, "{GAIN_HEADER}")?;
    let index = gains.pairs();
    for step in &gains.steps {
        for (idx, (i, j)) in index.pairs().enumerate() {
            let (a, b) = (step.alpha[idx], step.beta[idx]);
            writeln!(
                w,
                "{},{i},{j},{},{},{},{},{}",
                step.n,
                fmt_real(a.mean),
                fmt_real(a.var),
                fmt_real(b.mean),
                fmt_real(b.var),
                step.mode
            )?;
        }
    }
    Ok(())
}

pub fn read_gains(r: impl Read) -> Result<Vec<GainRow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header = rdr.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != GAIN_HEADER {
        return Err(Error::Format(format!("gain file header {header:?}, expected {GAIN_HEADER:?}")));
    }
    let mut out = Vec::new();
    for record in rdr.records() {
        let rec = record?;
        let int = |idx: usize| -> Result<usize> {
            rec[idx].parse().map_err(|_| Error::Format(format!("bad integer {:?}", &rec[idx])))
        };
        let mode = rec[7].to_string();
        if mode != "filtered" && mode != "smoothed" {
            return Err(Error::Format(format!("bad mode {mode:?}")));
        }
        out.push(GainRow {
            n: int(0)?,
            i: int(1)?,
            j: int(2)?,
            alpha_mean: parse_real(&rec[3], "alpha_mean")?,
            alpha_var: parse_real(&rec[4], "alpha_var")?,
            beta_mean: parse_real(&rec[5], "beta_mean")?,
            beta_var: parse_real(&rec[6], "beta_var")?,
            mode,
        });
    }
    Ok(out)
}

pub const TRUTH_HEADER: &str = "n,i,j,alpha,beta";

pub fn write_truth(mut w: impl Write, k: usize, truth: &GroundTruth) -> Result<()> {
    writeln!(w, "{TRUTH_HEADER}")?;
    let index = GainIndex::new(k);
    for (n, (alpha, beta)) in truth.alpha.iter().zip(&truth.beta).enumerate() {
        for (idx, (i, j)) in index.pairs().enumerate() {
            writeln!(w, "{n},{i},{j},{},{}", fmt_real(alpha[idx]), fmt_real(beta[idx]))?;
        }
    }
    Ok(())
}

/// Model configuration file. Keys mirror [`EnsembleConfig`]; every key is
/// optional and unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(rename = "K", skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(rename = "sigma_T2", skip_serializing_if = "Option::is_none")]
    pub sigma_t2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_r2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub obs_jitter: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_init: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_init: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_gain_var: Option<f64>,
    #[serde(rename = "init_Tr_var", skip_serializing_if = "Option::is_none")]
    pub init_tr_var: Option<f64>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(format!("config: {}", e.message())))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn from_config(cfg: &EnsembleConfig) -> Self {
        Self {
            k: Some(cfg.k),
            sigma_t2: Some(cfg.sigma_t2),
            sigma_r2: Some(cfg.sigma_r2),
            v_alpha: Some(cfg.v_alpha),
            rho_alpha: Some(cfg.rho_alpha),
            v_beta: Some(cfg.v_beta),
            rho_beta: Some(cfg.rho_beta),
            obs_jitter: Some(cfg.obs_jitter),
            alpha_init: Some(cfg.alpha_init),
            beta_init: Some(cfg.beta_init),
            init_gain_var: Some(cfg.init_gain_var),
            init_tr_var: Some(cfg.init_tr_var),
        }
    }

    pub fn to_text(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("config: {e}")))
    }

    /// Resolve against the defaults for `k` performers (taken from the data
    /// when the file does not name K). `init_Tr_var` follows `sigma_T2`
    /// unless set explicitly.
    pub fn resolve(&self, k: usize) -> Result<EnsembleConfig> {
        if let Some(file_k) = self.k {
            if file_k != k {
                return Err(Error::Config(format!("config has K = {file_k} but the data has K = {k}")));
            }
        }
        let mut cfg = EnsembleConfig::new(k)?;
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut cfg.sigma_t2, self.sigma_t2);
        set(&mut cfg.sigma_r2, self.sigma_r2);
        set(&mut cfg.v_alpha, self.v_alpha);
        set(&mut cfg.rho_alpha, self.rho_alpha);
        set(&mut cfg.v_beta, self.v_beta);
        set(&mut cfg.rho_beta, self.rho_beta);
        set(&mut cfg.obs_jitter, self.obs_jitter);
        set(&mut cfg.alpha_init, self.alpha_init);
        set(&mut cfg.beta_init, self.beta_init);
        set(&mut cfg.init_gain_var, self.init_gain_var);
        cfg.init_tr_var = self.init_tr_var.unwrap_or(cfg.sigma_t2);
        cfg.validate()?;
        Ok(cfg)
    }
}
