//! CSV file formats.
//!
//! Every real number is written with 17 significant digits (`{:.16e}`), so a
//! value read back is bit-identical to the one written. Readers check the
//! header exactly and report the 1-based line of the first malformed record.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use safebatch_core::approx::QFunction;
use safebatch_core::approx::{FeatureMap, QKind};
use safebatch_core::learner::{RoundRecord, RunTrace};
use safebatch_core::ope::OpeRecord;
use safebatch_core::*;

use crate::error::{Error, Result};

/// Formats a real with enough digits to round-trip.
pub fn real(v: f64) -> String {
    format!("{v:.16e}")
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(r)
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(false).from_writer(w)
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn field<T: FromStr>(record: &csv::StringRecord, index: usize, name: &str) -> Result<T> {
    let raw = record.get(index).ok_or_else(|| Error::parse(line_of(record), format!("missing column {name}")))?;
    raw.parse().map_err(|_| Error::parse(line_of(record), format!("cannot parse {name} from {raw:?}")))
}

fn check_header(found: &csv::StringRecord, expected: &[String]) -> Result<()> {
    if found.len() != expected.len() || found.iter().zip(expected).any(|(a, b)| a != b) {
        return Err(Error::Format(format!(
            "expected header `{}`, found `{}`",
            expected.join(","),
            found.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(())
}

fn numbered(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}_{i}"))
}

/// Number of `prefix_i` columns starting at `from`.
fn count_numbered(header: &csv::StringRecord, from: usize, prefix: &str) -> usize {
    header.iter().skip(from).take_while(|h| h.starts_with(&format!("{prefix}_"))).count()
}

// ── Files ───────────────────────────────────────────────────────────────

pub fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

/// Creates `path` (and its parent directories) for writing.
pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Runs `write` against a fresh file at `path` and flushes it.
pub fn write_file<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    let mut out = create(path)?;
    write(&mut out)?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Resolves `--map`: `8x8` and `4x4` name the built-in maps, anything else is
/// a path to a text layout.
pub fn load_layout(spec: &str) -> Result<Layout> {
    match spec {
        "8x8" => Ok(Layout::standard_8x8()),
        "4x4" => Ok(Layout::standard_4x4()),
        path => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Ok(Layout::parse(&text)?)
        }
    }
}

// ── Datasets ────────────────────────────────────────────────────────────

fn dataset_header(m: usize) -> Vec<String> {
    let mut h: Vec<String> = ["traj_id", "t", "x", "a", "x_next", "c"].iter().map(|s| s.to_string()).collect();
    h.extend(numbered("g", m));
    h.push("done".into());
    h.push("behavior_prob".into());
    h
}

/// `traj_id,t,x,a,x_next,c,g_1..g_m,done,behavior_prob`.
pub fn write_dataset<W: Write>(w: W, dataset: &Dataset) -> Result<()> {
    let mut out = writer(w);
    out.write_record(dataset_header(dataset.num_constraints()))?;
    let mut row = Vec::with_capacity(dataset.num_constraints() + 8);
    for s in dataset.samples() {
        row.clear();
        row.extend([s.traj_id.to_string(), s.t.to_string(), s.x.to_string(), s.a.to_string(), s.x_next.to_string(), real(s.c)]);
        row.extend(s.g.iter().map(|g| real(*g)));
        row.push(if s.done { "1" } else { "0" }.to_string());
        row.push(real(s.behavior_prob));
        out.write_record(&row)?;
    }
    out.flush().map_err(|e| Error::io("<dataset>", e))
}

pub fn read_dataset<R: Read>(r: R) -> Result<Dataset> {
    let mut input = reader(r);
    let header = input.headers()?.clone();
    let m = count_numbered(&header, 6, "g");
    check_header(&header, &dataset_header(m))?;
    let mut samples = Vec::new();
    for record in input.records() {
        let record = record?;
        let done = match record.get(6 + m) {
            Some("0") => false,
            Some("1") => true,
            other => return Err(Error::parse(line_of(&record), format!("done must be 0 or 1, got {:?}", other.unwrap_or("")))),
        };
        let g = (0..m).map(|i| field(&record, 6 + i, &format!("g_{}", i + 1))).collect::<Result<Vec<f64>>>()?;
        samples.push(TransitionSample {
            traj_id: field(&record, 0, "traj_id")?,
            t: field(&record, 1, "t")?,
            x: field(&record, 2, "x")?,
            a: field(&record, 3, "a")?,
            x_next: field(&record, 4, "x_next")?,
            c: field(&record, 5, "c")?,
            g,
            done,
            behavior_prob: field(&record, 7 + m, "behavior_prob")?,
        });
    }
    Ok(Dataset::new(m, samples)?)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(open(path)?).map_err(|e| with_path(path, e))
}

pub fn save_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    write_file(path, |w| write_dataset(w, dataset))
}

fn with_path(path: &Path, e: Error) -> Error {
    match e {
        Error::Parse { line, message } => Error::Parse { line, message: format!("{}: {message}", path.display()) },
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    }
}

// ── Policies ────────────────────────────────────────────────────────────

/// `x,action`, one row per state.
pub fn write_policy<W: Write>(w: W, policy: &DeterministicPolicy) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["x", "action"])?;
    for (x, a) in policy.actions().iter().enumerate() {
        out.write_record([x.to_string(), a.to_string()])?;
    }
    out.flush().map_err(|e| Error::io("<policy>", e))
}

fn mixture_header(m: usize) -> Vec<String> {
    let mut h: Vec<String> = ["member", "count", "weight", "C_hat"].iter().map(|s| s.to_string()).collect();
    h.extend(numbered("G_hat", m));
    h.push("actions".into());
    h
}

/// `member,count,weight,C_hat,G_hat_1..G_hat_m,actions`, one row per member;
/// `actions` lists the member's action for every state, space separated.
pub fn write_mixture<W: Write>(w: W, mixture: &MixturePolicy) -> Result<()> {
    let m = mixture.member_g_hat().first().map_or(0, Vec::len);
    let mut out = writer(w);
    out.write_record(mixture_header(m))?;
    let weights = mixture.weights();
    for (i, pi) in mixture.members().iter().enumerate() {
        let mut row = vec![i.to_string(), mixture.counts()[i].to_string(), real(weights[i]), real(mixture.member_c_hat()[i])];
        row.extend(mixture.member_g_hat()[i].iter().map(|g| real(*g)));
        row.push(pi.actions().iter().map(usize::to_string).collect::<Vec<_>>().join(" "));
        out.write_record(&row)?;
    }
    out.flush().map_err(|e| Error::io("<mixture>", e))
}

/// A policy file: either a single deterministic policy or a mixture.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyFile {
    Deterministic(DeterministicPolicy),
    Mixture(MixturePolicy),
}

impl PolicyFile {
    /// The policy to use where a single deterministic policy is needed: the
    /// policy itself, or the mixture's best member under `tau`.
    pub fn representative(&self, tau: &[f64]) -> Option<&DeterministicPolicy> {
        match self {
            PolicyFile::Deterministic(p) => Some(p),
            PolicyFile::Mixture(mix) => mix.best_member(tau).map(|i| &mix.members()[i]),
        }
    }

    pub fn exact_values(&self, mdp: &TabularMdp) -> Result<PolicyValues> {
        Ok(match self {
            PolicyFile::Deterministic(p) => exact_policy_values(mdp, p)?,
            PolicyFile::Mixture(mix) => exact_policy_values(mdp, mix)?,
        })
    }
}

fn parse_actions(record: &csv::StringRecord, raw: &str, num_actions: usize) -> Result<DeterministicPolicy> {
    let actions = raw
        .split_whitespace()
        .map(|a| a.parse::<usize>().map_err(|_| Error::parse(line_of(record), format!("bad action {a:?}"))))
        .collect::<Result<Vec<_>>>()?;
    DeterministicPolicy::new(actions, num_actions).map_err(|e| Error::parse(line_of(record), e.to_string()))
}

/// Reads either policy format, telling them apart by the header. States must
/// be listed `0, 1, ..., S-1` in order; `num_actions` bounds every action.
pub fn read_policy_file<R: Read>(r: R, num_actions: usize) -> Result<PolicyFile> {
    let mut input = reader(r);
    let header = input.headers()?.clone();
    if header.get(0) == Some("member") {
        let m = count_numbered(&header, 4, "G_hat");
        check_header(&header, &mixture_header(m))?;
        let (mut members, mut counts, mut c_hat, mut g_hat) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for record in input.records() {
            let record = record?;
            let index: usize = field(&record, 0, "member")?;
            if index != members.len() {
                return Err(Error::parse(line_of(&record), format!("expected member {}, found {index}", members.len())));
            }
            counts.push(field(&record, 1, "count")?);
            c_hat.push(field(&record, 3, "C_hat")?);
            g_hat.push((0..m).map(|i| field(&record, 4 + i, "G_hat")).collect::<Result<Vec<f64>>>()?);
            members.push(parse_actions(&record, record.get(4 + m).unwrap_or(""), num_actions)?);
        }
        if members.is_empty() {
            return Err(Error::Format("mixture file has no members".into()));
        }
        if members.iter().any(|p| p.num_states() != members[0].num_states()) {
            return Err(Error::Format("mixture members cover different state counts".into()));
        }
        return Ok(PolicyFile::Mixture(MixturePolicy::from_parts(members, counts, c_hat, g_hat)?));
    }
    check_header(&header, &["x".into(), "action".into()])?;
    let mut actions = Vec::new();
    for record in input.records() {
        let record = record?;
        let x: usize = field(&record, 0, "x")?;
        if x != actions.len() {
            return Err(Error::parse(line_of(&record), format!("expected state {}, found {x}", actions.len())));
        }
        let a: usize = field(&record, 1, "action")?;
        if a >= num_actions {
            return Err(Error::parse(line_of(&record), format!("action {a} out of range for {num_actions} actions")));
        }
        actions.push(a);
    }
    if actions.is_empty() {
        return Err(Error::Format("policy file lists no states".into()));
    }
    Ok(PolicyFile::Deterministic(DeterministicPolicy::new(actions, num_actions)?))
}

pub fn load_policy_file(path: &Path, num_actions: usize) -> Result<PolicyFile> {
    read_policy_file(open(path)?, num_actions).map_err(|e| with_path(path, e))
}

// ── Q-functions ─────────────────────────────────────────────────────────

/// Tabular: `x,a,value`. Linear: `index,weight`.
pub fn write_q<W: Write>(w: W, q: &QFunction) -> Result<()> {
    let mut out = writer(w);
    match q.kind() {
        QKind::Tabular(values) => {
            out.write_record(["x", "a", "value"])?;
            let na = q.num_actions();
            for (k, v) in values.iter().enumerate() {
                out.write_record([(k / na).to_string(), (k % na).to_string(), real(*v)])?;
            }
        }
        QKind::Linear { weights, .. } => {
            out.write_record(["index", "weight"])?;
            for (i, w) in weights.iter().enumerate() {
                out.write_record([i.to_string(), real(*w)])?;
            }
        }
    }
    out.flush().map_err(|e| Error::io("<q-function>", e))
}

/// Reads either Q format. Linear weights are paired with indicator features
/// over `num_states x num_actions`.
pub fn read_q<R: Read>(r: R, num_states: usize, num_actions: usize) -> Result<QFunction> {
    let mut input = reader(r);
    let header = input.headers()?.clone();
    if header.get(0) == Some("index") {
        check_header(&header, &["index".into(), "weight".into()])?;
        let mut weights = Vec::new();
        for record in input.records() {
            let record = record?;
            let i: usize = field(&record, 0, "index")?;
            if i != weights.len() {
                return Err(Error::parse(line_of(&record), format!("expected index {}, found {i}", weights.len())));
            }
            weights.push(field(&record, 1, "weight")?);
        }
        return Ok(QFunction::linear(Arc::new(FeatureMap::one_hot(num_states, num_actions)), weights)?);
    }
    check_header(&header, &["x".into(), "a".into(), "value".into()])?;
    let mut values = Vec::new();
    for record in input.records() {
        let record = record?;
        let k = values.len();
        let (x, a): (usize, usize) = (field(&record, 0, "x")?, field(&record, 1, "a")?);
        if num_actions == 0 || (x, a) != (k / num_actions, k % num_actions) {
            return Err(Error::parse(line_of(&record), format!("rows must list (x, a) in row-major order; found ({x}, {a})")));
        }
        values.push(field(&record, 2, "value")?);
    }
    Ok(QFunction::tabular(num_states, num_actions, values)?)
}

// ── Learner output ──────────────────────────────────────────────────────

/// `round,lambda_1..lambda_k,C_hat,G_1..G_m,L_max,L_min,gap` with `k = m + 1`
/// for the simplex dual and `k = m` for the ball.
pub fn write_trace<W: Write>(w: W, trace: &RunTrace) -> Result<()> {
    let mut out = writer(w);
    let (k, m) = trace.records.first().map_or((0, 0), |r| (r.lambda.len(), r.g_hat.len()));
    let mut header = vec!["round".to_string()];
    header.extend(numbered("lambda", k));
    header.push("C_hat".into());
    header.extend(numbered("G", m));
    header.extend(["L_max", "L_min", "gap"].map(String::from));
    out.write_record(&header)?;
    for r in &trace.records {
        out.write_record(trace_row(r))?;
    }
    out.flush().map_err(|e| Error::io("<trace>", e))
}

fn trace_row(r: &RoundRecord) -> Vec<String> {
    let mut row = vec![r.round.to_string()];
    row.extend(r.lambda.iter().map(|v| real(*v)));
    row.push(real(r.c_hat));
    row.extend(r.g_hat.iter().map(|v| real(*v)));
    row.extend([real(r.l_max), real(r.l_min), real(r.gap)]);
    row
}

/// `method,fraction,trial,estimate,abs_error`.
pub fn write_ope_report<W: Write>(w: W, records: &[OpeRecord]) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["method", "fraction", "trial", "estimate", "abs_error"])?;
    for r in records {
        out.write_record([r.method.name().to_string(), real(r.fraction), r.trial.to_string(), real(r.estimate), real(r.abs_error)])?;
    }
    out.flush().map_err(|e| Error::io("<ope report>", e))
}

/// A header row followed by rows of already formatted fields.
pub fn write_table<W: Write>(w: W, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut out = writer(w);
    out.write_record(header)?;
    for row in rows {
        out.write_record(row)?;
    }
    out.flush().map_err(|e| Error::io("<table>", e))
}

// ── Flag values ─────────────────────────────────────────────────────────

/// `c`, `g:<i>` (1-based) or `scalarized:<l_1,...,l_m>`.
pub fn parse_cost(spec: &str) -> Result<CostSelector> {
    let spec = spec.trim();
    if spec == "c" {
        return Ok(CostSelector::Primary);
    }
    if let Some(i) = spec.strip_prefix("g:") {
        let i: usize = i.trim().parse().map_err(|_| Error::Usage(format!("bad constraint index in cost {spec:?}")))?;
        if i == 0 {
            return Err(Error::Usage("constraint indices start at 1".into()));
        }
        return Ok(CostSelector::Constraint(i - 1));
    }
    if let Some(list) = spec.strip_prefix("scalarized:") {
        return Ok(CostSelector::Scalarized(parse_reals(list)?));
    }
    Err(Error::Usage(format!("unknown cost {spec:?}; expected c, g:<i> or scalarized:<list>")))
}

/// A comma-separated list of reals.
pub fn parse_reals(list: &str) -> Result<Vec<f64>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| Error::Usage(format!("cannot parse {s:?} as a number"))))
        .collect()
}
