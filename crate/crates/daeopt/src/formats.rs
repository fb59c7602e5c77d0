//! Delimited-text artifacts and the surrogate checkpoint.
//!
//! Floating-point values are written with 17 significant digits so every file
//! reads back to the identical bits.

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};

use daeopt_core::integrate::Trajectory;
use daeopt_core::neural::{Affine, Mlp};
use daeopt_core::optimize::{CandidateResult, RefineMethod};
use daeopt_core::problems::MeasurementFitObjective;
use daeopt_core::surrogate::{ConstraintSurrogate, GenerationStats, Record, RecordSet, TrainingDataset};

use crate::error::{CliError, Result};

pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_num(s: &str, what: &str, line: usize) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| CliError::parse(what, line, format!("`{s}` is not a number")))
}

fn parse_int(s: &str, what: &str, line: usize) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| CliError::parse(what, line, format!("`{s}` is not a non-negative integer")))
}

fn numbered(prefix: &str, count: usize) -> impl Iterator<Item = String> + '_ {
    (1..=count).map(move |i| format!("{prefix}{i}"))
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().flexible(false).from_writer(w)
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(r)
}

/// Counts header columns named `prefix1, prefix2, …` starting at `from`.
fn count_run(header: &csv::StringRecord, from: usize, prefix: &str) -> usize {
    header
        .iter()
        .skip(from)
        .enumerate()
        .take_while(|(i, h)| *h == format!("{prefix}{}", i + 1))
        .count()
}

fn expect_header(header: &csv::StringRecord, at: usize, name: &str, what: &str) -> Result<()> {
    match header.get(at) {
        Some(h) if h == name => Ok(()),
        other => Err(CliError::parse(
            what,
            1,
            format!("expected column `{name}` at position {}, found {:?}", at + 1, other),
        )),
    }
}

// ---------------------------------------------------------------- trajectory

/// A trajectory as read back from text: times and state rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

pub fn write_trajectory<W: Write>(w: W, traj: &Trajectory) -> Result<()> {
    let mut out = csv_writer(w);
    let mut header = vec!["t".to_string()];
    header.extend(numbered("x", traj.state_dim()));
    out.write_record(&header)?;
    for (i, &t) in traj.times().iter().enumerate() {
        let mut row = vec![num(t)];
        row.extend(traj.state(i).iter().map(|&v| num(v)));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trajectory<R: Read>(r: R) -> Result<TrajectoryTable> {
    const WHAT: &str = "trajectory";
    let mut rd = csv_reader(r);
    let header = rd.headers()?.clone();
    expect_header(&header, 0, "t", WHAT)?;
    let n = count_run(&header, 1, "x");
    if n == 0 || n + 1 != header.len() {
        return Err(CliError::parse(WHAT, 1, "header must be `t,x1..xn`"));
    }
    let mut table = TrajectoryTable {
        times: Vec::new(),
        states: Vec::new(),
    };
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        table.times.push(parse_num(&rec[0], WHAT, line)?);
        table
            .states
            .push((1..=n).map(|k| parse_num(&rec[k], WHAT, line)).collect::<Result<_>>()?);
    }
    Ok(table)
}

// ---------------------------------------------------------------- dataset

pub fn write_dataset<W: Write>(w: W, data: &TrainingDataset) -> Result<()> {
    let mut out = csv_writer(w);
    let mut header = vec!["set".to_string(), "t".to_string()];
    header.extend(numbered("p", data.param_dim));
    header.extend(numbered("x", data.state_dim));
    header.push("gen".into());
    out.write_record(&header)?;
    let sets = [
        (RecordSet::Initial, &data.initial),
        (RecordSet::Collocation, &data.collocation),
        (RecordSet::Exact, &data.exact),
    ];
    for (set, records) in sets {
        for rec in records {
            let mut row = vec![set.tag().to_string(), num(rec.t)];
            row.extend(rec.p.iter().map(|&v| num(v)));
            if rec.x.is_empty() {
                row.extend(std::iter::repeat_n(String::new(), data.state_dim));
            } else {
                row.extend(rec.x.iter().map(|&v| num(v)));
            }
            row.push(rec.generation.to_string());
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(r: R) -> Result<TrainingDataset> {
    const WHAT: &str = "dataset";
    let mut rd = csv_reader(r);
    let header = rd.headers()?.clone();
    expect_header(&header, 0, "set", WHAT)?;
    expect_header(&header, 1, "t", WHAT)?;
    let m = count_run(&header, 2, "p");
    let n = count_run(&header, 2 + m, "x");
    if m == 0 || n == 0 || header.len() != 3 + m + n {
        return Err(CliError::parse(WHAT, 1, "header must be `set,t,p1..pm,x1..xn,gen`"));
    }
    expect_header(&header, 2 + m + n, "gen", WHAT)?;
    let mut data = TrainingDataset::new(m, n);
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let set = RecordSet::from_tag(&rec[0])
            .ok_or_else(|| CliError::parse(WHAT, line, format!("unknown record set `{}`", &rec[0])))?;
        let t = parse_num(&rec[1], WHAT, line)?;
        let p = (0..m)
            .map(|k| parse_num(&rec[2 + k], WHAT, line))
            .collect::<Result<Vec<_>>>()?;
        let x = if set == RecordSet::Collocation {
            Vec::new()
        } else {
            (0..n)
                .map(|k| parse_num(&rec[2 + m + k], WHAT, line))
                .collect::<Result<Vec<_>>>()?
        };
        let generation = parse_int(&rec[2 + m + n], WHAT, line)?;
        data.push(set, Record { t, p, x, generation })
            .map_err(|e| CliError::parse(WHAT, line, e.to_string()))?;
    }
    Ok(data)
}

// ---------------------------------------------------------------- checkpoint

const CHECKPOINT_MAGIC: &str = "daeopt-checkpoint 1";

fn join(values: &[f64]) -> String {
    values.iter().map(|&v| num(v)).collect::<Vec<_>>().join(" ")
}

/// Layer sizes, activation, normalization and every weight and bias, followed
/// by the `γ` and history blocks.
pub fn write_checkpoint<W: Write>(mut w: W, surr: &ConstraintSurrogate) -> Result<()> {
    let net = &surr.net;
    let sizes = net.sizes();
    writeln!(w, "{CHECKPOINT_MAGIC}")?;
    writeln!(
        w,
        "layers {}",
        sizes.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" ")
    )?;
    writeln!(w, "activation tanh")?;
    writeln!(w, "input_shift {}", join(&net.input_norm().shift))?;
    writeln!(w, "input_scale {}", join(&net.input_norm().scale))?;
    writeln!(w, "output_shift {}", join(&net.output_norm().shift))?;
    writeln!(w, "output_scale {}", join(&net.output_norm().scale))?;
    let params = net.params();
    let mut at = 0;
    for (k, pair) in sizes.windows(2).enumerate() {
        let (cols, rows) = (pair[0], pair[1]);
        writeln!(w, "weights {k} {rows} {cols}")?;
        for _ in 0..rows {
            writeln!(w, "{}", join(&params[at..at + cols]))?;
            at += cols;
        }
        writeln!(w, "bias {k} {}", join(&params[at..at + rows]))?;
        at += rows;
    }
    writeln!(w, "gamma {}", join(&surr.gamma))?;
    writeln!(w, "converged {}", surr.converged)?;
    writeln!(w, "history {}", surr.history.len())?;
    for h in &surr.history {
        writeln!(
            w,
            "{} {} {} {} {} {}",
            h.generation,
            num(h.loss),
            num(h.max_error),
            num(h.best_max_error),
            h.exact_points,
            h.population
        )?;
    }
    writeln!(w, "end")?;
    Ok(())
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    line: usize,
}

impl<R: BufRead> Lines<R> {
    fn next(&mut self) -> Result<String> {
        self.line += 1;
        match self.inner.next() {
            Some(l) => Ok(l?),
            None => Err(CliError::parse("checkpoint", self.line, "unexpected end of file")),
        }
    }

    fn keyed(&mut self, key: &str) -> Result<Vec<String>> {
        let l = self.next()?;
        let mut tokens = l.split_whitespace();
        if tokens.next() != Some(key) {
            return Err(self.err(format!("expected `{key}`")));
        }
        Ok(tokens.map(str::to_string).collect())
    }

    fn floats(&self, tokens: &[String]) -> Result<Vec<f64>> {
        tokens.iter().map(|t| parse_num(t, "checkpoint", self.line)).collect()
    }

    fn ints(&self, tokens: &[String]) -> Result<Vec<usize>> {
        tokens.iter().map(|t| parse_int(t, "checkpoint", self.line)).collect()
    }

    fn err(&self, msg: impl Into<String>) -> CliError {
        CliError::parse("checkpoint", self.line, msg)
    }
}

pub fn read_checkpoint<R: BufRead>(r: R) -> Result<ConstraintSurrogate> {
    let mut lines = Lines {
        inner: r.lines(),
        line: 0,
    };
    if lines.next()?.trim() != CHECKPOINT_MAGIC {
        return Err(lines.err("not a daeopt checkpoint"));
    }
    let tok = lines.keyed("layers")?;
    let sizes = lines.ints(&tok)?;
    let act = lines.keyed("activation")?;
    if act != ["tanh"] {
        return Err(lines.err(format!("unsupported activation {act:?}")));
    }
    let mut affine = |a: &str, b: &str| -> Result<Affine> {
        let tok = lines.keyed(a)?;
        let shift = lines.floats(&tok)?;
        let tok = lines.keyed(b)?;
        let scale = lines.floats(&tok)?;
        Ok(Affine { shift, scale })
    };
    let input_norm = affine("input_shift", "input_scale")?;
    let output_norm = affine("output_shift", "output_scale")?;
    let mut params = Vec::new();
    for (k, pair) in sizes.windows(2).enumerate() {
        let tok = lines.keyed("weights")?;
        if lines.ints(&tok)? != [k, pair[1], pair[0]] {
            return Err(lines.err(format!("weights header for layer {k} does not match the layer sizes")));
        }
        for _ in 0..pair[1] {
            let row: Vec<String> = lines.next()?.split_whitespace().map(str::to_string).collect();
            if row.len() != pair[0] {
                return Err(lines.err(format!("expected {} weights", pair[0])));
            }
            params.extend(lines.floats(&row)?);
        }
        let tok = lines.keyed("bias")?;
        if tok.first().map(String::as_str) != Some(&k.to_string()) || tok.len() != pair[1] + 1 {
            return Err(lines.err(format!("bias row for layer {k} has the wrong length")));
        }
        params.extend(lines.floats(&tok[1..])?);
    }
    let param_dim = sizes.first().copied().unwrap_or(1).saturating_sub(1);
    let net = Mlp::from_parts(sizes, params, input_norm, output_norm).map_err(|e| lines.err(e.to_string()))?;
    let mut surr = ConstraintSurrogate::new(net, param_dim).map_err(|e| lines.err(e.to_string()))?;
    let tok = lines.keyed("gamma")?;
    let gamma = lines.floats(&tok)?;
    surr.set_gamma(gamma).map_err(|e| lines.err(e.to_string()))?;
    let tok = lines.keyed("converged")?;
    surr.converged = match tok.as_slice() {
        [v] if v == "true" => true,
        [v] if v == "false" => false,
        _ => return Err(lines.err("converged must be true or false")),
    };
    let tok = lines.keyed("history")?;
    let count = lines
        .ints(&tok)?
        .first()
        .copied()
        .ok_or_else(|| lines.err("missing history length"))?;
    for _ in 0..count {
        let row: Vec<String> = lines.next()?.split_whitespace().map(str::to_string).collect();
        if row.len() != 6 {
            return Err(lines.err("history rows have 6 fields"));
        }
        let f = lines.floats(&row[1..4])?;
        let i = lines.ints(&[row[0].clone(), row[4].clone(), row[5].clone()])?;
        surr.history.push(GenerationStats {
            generation: i[0],
            loss: f[0],
            max_error: f[1],
            best_max_error: f[2],
            exact_points: i[1],
            population: i[2],
        });
    }
    if lines.next()?.trim() != "end" {
        return Err(lines.err("expected `end`"));
    }
    Ok(surr)
}

// ---------------------------------------------------------------- history

pub fn write_history<W: Write>(w: W, history: &[GenerationStats]) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["generation", "loss", "max_error"])?;
    for h in history {
        out.write_record([h.generation.to_string(), num(h.loss), num(h.max_error)])?;
    }
    out.flush()?;
    Ok(())
}

/// `(generation, loss, max_error)` rows.
pub fn read_history<R: Read>(r: R) -> Result<Vec<(usize, f64, f64)>> {
    const WHAT: &str = "history";
    let mut rd = csv_reader(r);
    let header = rd.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["generation", "loss", "max_error"] {
        return Err(CliError::parse(WHAT, 1, "header must be `generation,loss,max_error`"));
    }
    rd.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec?;
            Ok((
                parse_int(&rec[0], WHAT, i + 2)?,
                parse_num(&rec[1], WHAT, i + 2)?,
                parse_num(&rec[2], WHAT, i + 2)?,
            ))
        })
        .collect()
}

/// Training curves in log scale, one row per generation.
pub fn write_training_curves<W: Write>(w: W, history: &[GenerationStats]) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record([
        "generation",
        "log10_loss",
        "log10_max_error",
        "log10_best_max_error",
        "exact_points",
    ])?;
    for h in history {
        out.write_record([
            h.generation.to_string(),
            num(h.loss.log10()),
            num(h.max_error.log10()),
            num(h.best_max_error.log10()),
            h.exact_points.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Generator loss per iteration.
pub fn write_series<W: Write>(w: W, x_name: &str, y_name: &str, values: &[f64]) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record([x_name, y_name])?;
    for (i, &v) in values.iter().enumerate() {
        out.write_record([i.to_string(), num(v)])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_series<R: Read>(r: R) -> Result<Vec<f64>> {
    let mut rd = csv_reader(r);
    rd.records()
        .enumerate()
        .map(|(i, rec)| parse_num(&rec?[1], "series", i + 2))
        .collect()
}

// ---------------------------------------------------------------- candidates

/// Run metadata written as `#` comment lines above a candidate report.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReportMeta(pub BTreeMap<String, String>);

impl ReportMeta {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.0.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }
}

pub fn write_candidates<W: Write>(mut w: W, meta: &ReportMeta, rows: &[CandidateResult]) -> Result<()> {
    for (k, v) in &meta.0 {
        writeln!(w, "# {k} = {v}")?;
    }
    let m = rows.first().map_or(0, |c| c.p_pred.len());
    let mut out = csv_writer(w);
    let mut header = vec!["rank".to_string()];
    header.extend(numbered("p", m));
    header.push("J_pred".into());
    header.extend(numbered("p_refined", m));
    header.extend(
        [
            "J_refined",
            "method",
            "iters",
            "seconds",
            "J_pred_spread",
            "generator_iters",
            "predict_seconds",
        ]
        .map(String::from),
    );
    out.write_record(&header)?;
    for (rank, c) in rows.iter().enumerate() {
        let mut row = vec![(rank + 1).to_string()];
        row.extend(c.p_pred.iter().map(|&v| num(v)));
        row.push(num(c.j_pred));
        row.extend(c.p_refined.iter().map(|&v| num(v)));
        row.push(num(c.j_refined));
        row.push(c.method.to_string());
        row.push(c.refine_iterations.to_string());
        row.push(num(c.refine_seconds));
        row.push(num(c.j_pred_spread));
        row.push(c.generator_iterations.to_string());
        row.push(num(c.predict_seconds));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_candidates<R: BufRead>(mut r: R) -> Result<(ReportMeta, Vec<CandidateResult>)> {
    const WHAT: &str = "candidate report";
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    let mut meta = ReportMeta::default();
    for l in text.lines().take_while(|l| l.starts_with('#')) {
        if let Some((k, v)) = l.trim_start_matches('#').split_once('=') {
            meta.set(k.trim(), v.trim());
        }
    }
    let mut rd = csv_reader(text.as_bytes());
    let header = rd.headers()?.clone();
    expect_header(&header, 0, "rank", WHAT)?;
    let m = count_run(&header, 1, "p");
    expect_header(&header, 1 + m, "J_pred", WHAT)?;
    if count_run(&header, 2 + m, "p_refined") != m || header.len() != 2 * m + 9 {
        return Err(CliError::parse(WHAT, 1, "malformed candidate header"));
    }
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let f = |k: usize| parse_num(&rec[k], WHAT, line);
        let b = 2 * m + 2;
        rows.push(CandidateResult {
            p_pred: (1..=m).map(f).collect::<Result<_>>()?,
            j_pred: f(1 + m)?,
            p_refined: (2 + m..2 + 2 * m).map(f).collect::<Result<_>>()?,
            j_refined: f(b)?,
            method: rec[b + 1]
                .parse::<RefineMethod>()
                .map_err(|e| CliError::parse(WHAT, line, e.to_string()))?,
            refine_iterations: parse_int(&rec[b + 2], WHAT, line)?,
            refine_seconds: f(b + 3)?,
            j_pred_spread: f(b + 4)?,
            generator_iterations: parse_int(&rec[b + 5], WHAT, line)?,
            predict_seconds: f(b + 6)?,
        });
    }
    Ok((meta, rows))
}

// ---------------------------------------------------------------- bound

/// One certified parameter. When the linearization violates the theorem's
/// hypotheses the eigen-data columns are absent and `bound` carries the
/// empirical `γ` half-width instead.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundRow {
    pub p: Vec<f64>,
    pub a1_bar: Option<f64>,
    pub r_max: Option<f64>,
    pub p_norm: Option<f64>,
    pub delta_max: f64,
    pub hbar: f64,
    pub bound: f64,
    /// Same bound over the whole horizon `tf − t0` instead of `ℏ`.
    pub horizon: f64,
    pub bound_horizon: Option<f64>,
    /// `ok`, or `gamma-fallback: <reason>`.
    pub status: String,
}

impl BoundRow {
    pub fn is_fallback(&self) -> bool {
        self.status != "ok"
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn write_bounds<W: Write>(w: W, rows: &[BoundRow]) -> Result<()> {
    let m = rows.first().map_or(0, |r| r.p.len());
    let mut out = csv_writer(w);
    let mut header: Vec<String> = numbered("p", m).collect();
    header.extend(
        [
            "a1_bar",
            "r_max",
            "P_norm",
            "delta_max",
            "hbar",
            "bound",
            "horizon",
            "bound_horizon",
            "status",
        ]
        .map(String::from),
    );
    out.write_record(&header)?;
    for r in rows {
        let mut row: Vec<String> = r.p.iter().map(|&v| num(v)).collect();
        row.extend([
            opt(r.a1_bar),
            opt(r.r_max),
            opt(r.p_norm),
            num(r.delta_max),
            num(r.hbar),
            num(r.bound),
            num(r.horizon),
            opt(r.bound_horizon),
            r.status.clone(),
        ]);
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_bounds<R: Read>(r: R) -> Result<Vec<BoundRow>> {
    const WHAT: &str = "bound report";
    let mut rd = csv_reader(r);
    let header = rd.headers()?.clone();
    let m = count_run(&header, 0, "p");
    expect_header(&header, m, "a1_bar", WHAT)?;
    if header.len() != m + 9 {
        return Err(CliError::parse(WHAT, 1, "malformed bound header"));
    }
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let f = |k: usize| parse_num(&rec[k], WHAT, line);
        let o = |k: usize| -> Result<Option<f64>> {
            if rec[k].is_empty() {
                Ok(None)
            } else {
                f(k).map(Some)
            }
        };
        rows.push(BoundRow {
            p: (0..m).map(f).collect::<Result<_>>()?,
            a1_bar: o(m)?,
            r_max: o(m + 1)?,
            p_norm: o(m + 2)?,
            delta_max: f(m + 3)?,
            hbar: f(m + 4)?,
            bound: f(m + 5)?,
            horizon: f(m + 6)?,
            bound_horizon: o(m + 7)?,
            status: rec[m + 8].to_string(),
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------- measurements

/// One measurement: state `index` (zero-based) observed at `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub t: f64,
    pub index: usize,
    pub target: f64,
}

/// Rows `t,x_i,target`, where `x_i` is the one-based index of the observed state.
pub fn write_measurements<W: Write>(w: W, rows: &[Measurement]) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["t", "x_i", "target"])?;
    for r in rows {
        out.write_record([num(r.t), (r.index + 1).to_string(), num(r.target)])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_measurements<R: Read>(r: R) -> Result<Vec<Measurement>> {
    const WHAT: &str = "measurement file";
    let mut rd = csv_reader(r);
    let header = rd.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["t", "x_i", "target"] {
        return Err(CliError::parse(WHAT, 1, "header must be `t,x_i,target`"));
    }
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let index = parse_int(&rec[1], WHAT, line)?;
        if index == 0 {
            return Err(CliError::parse(WHAT, line, "state indices start at 1"));
        }
        rows.push(Measurement {
            t: parse_num(&rec[0], WHAT, line)?,
            index: index - 1,
            target: parse_num(&rec[2], WHAT, line)?,
        });
    }
    Ok(rows)
}

/// Groups measurements into the fit objective. Every measured state must be
/// observed at every measurement time.
pub fn measurement_objective(
    rows: &[Measurement],
    state_dim: usize,
    t_span: (f64, f64),
) -> Result<MeasurementFitObjective> {
    let mut observed: Vec<usize> = rows.iter().map(|r| r.index).collect();
    observed.sort_unstable();
    observed.dedup();
    if let Some(&bad) = observed.iter().find(|&&i| i >= state_dim) {
        return Err(CliError::InvalidConfig(format!(
            "measured state x{} does not exist (the problem has {state_dim} states)",
            bad + 1
        )));
    }
    let mut times: Vec<f64> = rows.iter().map(|r| r.t).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut targets = vec![vec![f64::NAN; observed.len()]; times.len()];
    for r in rows {
        let ti = times.partition_point(|&t| t < r.t);
        let k = observed.partition_point(|&i| i < r.index);
        targets[ti][k] = r.target;
    }
    if targets.iter().flatten().any(|v| v.is_nan()) {
        return Err(CliError::InvalidConfig(
            "every measured state must be observed at every measurement time".into(),
        ));
    }
    MeasurementFitObjective::new(times, targets, observed, t_span).map_err(|e| CliError::InvalidConfig(e.to_string()))
}

// ---------------------------------------------------------------- landscape

/// Surrogate objective over a parameter grid with its `γ` interval.
#[derive(Debug, Clone, PartialEq)]
pub struct LandscapePoint {
    pub p: Vec<f64>,
    pub j_pred: f64,
    pub spread: f64,
}

pub fn write_landscape<W: Write>(w: W, points: &[LandscapePoint]) -> Result<()> {
    let m = points.first().map_or(0, |r| r.p.len());
    let mut out = csv_writer(w);
    let mut header: Vec<String> = numbered("p", m).collect();
    header.extend(["J_pred", "J_lower", "J_upper", "J_spread"].map(String::from));
    out.write_record(&header)?;
    for pt in points {
        let mut row: Vec<String> = pt.p.iter().map(|&v| num(v)).collect();
        row.extend([
            num(pt.j_pred),
            num(pt.j_pred - pt.spread),
            num(pt.j_pred + pt.spread),
            num(pt.spread),
        ]);
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_landscape<R: Read>(r: R) -> Result<Vec<LandscapePoint>> {
    const WHAT: &str = "landscape";
    let mut rd = csv_reader(r);
    let header = rd.headers()?.clone();
    let m = count_run(&header, 0, "p");
    expect_header(&header, m, "J_pred", WHAT)?;
    expect_header(&header, m + 3, "J_spread", WHAT)?;
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let f = |k: usize| parse_num(&rec[k], WHAT, i + 2);
        let j = f(m)?;
        rows.push(LandscapePoint {
            p: (0..m).map(f).collect::<Result<_>>()?,
            j_pred: j,
            spread: f(m + 3)?,
        });
    }
    Ok(rows)
}
