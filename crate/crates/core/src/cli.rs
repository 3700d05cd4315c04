//! Command-line front end.
//!
//! Reports are JSON, sweeps are CSV. Every file written gets a sidecar
//! `<file>.manifest.json` recording the configuration, seed and command
//! that produced it; JSON outputs also name their manifest inline.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;

use crate::evaluate::{evaluate_params, Mode};
use crate::finitekey::KeyReport;
use crate::lp::oracle::run_oracle_suite;
use crate::optimize::{
    optimize_params, sweep_distance, sweep_receive_power, Objective, OptimizeError, OptimizeOptions, SearchBox,
    SweepPoint,
};
use crate::params::{validate, ProtocolParams};
use crate::selftest::run_sandwich_suite;

pub const CSV_HEADER: [&str; 12] = [
    "x",
    "unit",
    "rate_v1_bps",
    "rate_v2_bps",
    "qber",
    "n0_low",
    "n1_low",
    "n1_up",
    "eph_up",
    "lambda_ec",
    "secure_len_v1",
    "secure_len_v2",
];

pub const EXIT_OK: i32 = 0;
pub const EXIT_SELFTEST: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ESTIMATION: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "decoy-qkd", version, about = "Finite-key decoy-state BB84 rates over a simulated fibre link")]
pub struct Cli {
    /// JSON configuration; defaults are used for anything left out.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Set a config value by dotted path, e.g. `link.length_km=100`.
    #[arg(long = "override", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Also write the full JSON result here.
    #[arg(long, global = true)]
    pub json: Option<PathBuf>,
    #[arg(long, default_value_t = 0, global = true)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Mode::Expectation, global = true)]
    pub mode: Mode,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate one session at the configured distance.
    Rate,
    /// Key rates against fibre length.
    SweepDistance {
        #[arg(long, allow_hyphen_values = true)]
        from: f64,
        #[arg(long, allow_hyphen_values = true)]
        to: f64,
        #[arg(long)]
        step: f64,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Key rate and QBER against the data channel's receive power.
    SweepPower {
        #[arg(long)]
        length_km: f64,
        #[arg(long, allow_hyphen_values = true)]
        from: f64,
        #[arg(long, allow_hyphen_values = true)]
        to: f64,
        #[arg(long)]
        step: f64,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Search intensities, selection and basis probabilities.
    Optimize(OptimizeArgs),
    /// Run the solver and estimator self-checks.
    Selftest {
        #[arg(long, value_enum, default_value_t = Suite::All)]
        suite: Suite,
    },
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    /// Signal intensity range `lo,hi` (or a single value).
    #[arg(long, value_parser = parse_interval)]
    pub u: Option<(f64, f64)>,
    #[arg(long, value_parser = parse_interval)]
    pub v: Option<(f64, f64)>,
    #[arg(long, value_parser = parse_interval)]
    pub p_u: Option<(f64, f64)>,
    #[arg(long, value_parser = parse_interval)]
    pub p_v: Option<(f64, f64)>,
    /// Z-basis probability range, applied to both ends.
    #[arg(long, value_parser = parse_interval)]
    pub qz: Option<(f64, f64)>,
    #[arg(long, value_enum, default_value_t = Objective::V2)]
    pub objective: Objective,
    #[arg(long, default_value_t = 3)]
    pub restarts: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Lp,
    Bounds,
    All,
}

fn parse_interval(s: &str) -> Result<(f64, f64), String> {
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}"));
    match s.split_once(',') {
        Some((a, b)) => Ok((num(a)?, num(b)?)),
        None => num(s).map(|x| (x, x)),
    }
}

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        Self {
            code: 1,
            message: format!("{}: {e}", path.display()),
        }
    }
}

/// Applies `key=value`; the value is read as JSON when it parses, else as
/// a string. Numeric path segments index into arrays.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<(), String> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| format!("override {spec:?} is not KEY=VALUE"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(format!("override key {key:?} has an empty segment"));
    }
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string()).or_insert(Value::Null)
            }
            Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| format!("{key:?}: {part:?} is not an index"))?;
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| format!("{key:?}: index {idx} out of range"))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(format!("{key:?}: {part:?} is not inside an object")),
        };
    }
    Ok(())
}

/// Reads the config (or defaults), applies overrides and validates.
pub fn load_params(config: Option<&Path>, overrides: &[String]) -> Result<ProtocolParams, Failure> {
    let mut root = match config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?
        }
        None => serde_json::to_value(ProtocolParams::default()).expect("defaults serialise"),
    };
    // a null mux written by defaults would swallow nested overrides
    if overrides.iter().any(|o| o.starts_with("mux.")) && root.get("mux").is_some_and(Value::is_null) {
        root["mux"] = serde_json::to_value(crate::params::MuxConfig::default()).expect("defaults serialise");
    }
    for o in overrides {
        apply_override(&mut root, o).map_err(Failure::config)?;
    }
    let params: ProtocolParams = serde_json::from_value(root).map_err(|e| Failure::config(format!("config: {e}")))?;
    validate(&params).map_err(|e| Failure::config(format!("invalid config:\n{e}")))?;
    Ok(params)
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: Vec<String>,
    pub seed: u64,
    pub mode: Mode,
    pub timestamp_unix_s: u64,
    pub outputs: Vec<PathBuf>,
    pub config: ProtocolParams,
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(OsString::from).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}

struct Outputs<'a> {
    cli: &'a Cli,
    argv: Vec<String>,
    params: &'a ProtocolParams,
}

impl Outputs<'_> {
    fn manifest_for(&self, primary: &Path) -> PathBuf {
        manifest_path(primary)
    }

    fn write_manifest(&self, files: &[PathBuf]) -> Result<(), Failure> {
        let Some(primary) = files.first() else { return Ok(()) };
        let m = RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: self.argv.clone(),
            seed: self.cli.seed,
            mode: self.cli.mode,
            timestamp_unix_s: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            outputs: files.to_vec(),
            config: self.params.clone(),
        };
        let path = self.manifest_for(primary);
        write_file(&path, &to_pretty(&m))
    }

    /// Writes `body` wrapped with a reference to the manifest.
    fn write_json<T: Serialize>(&self, path: &Path, manifest_of: &Path, body: &T) -> Result<(), Failure> {
        let mut v = serde_json::to_value(body).expect("serialisable");
        let name = self.manifest_for(manifest_of);
        let name = name.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        match &mut v {
            Value::Object(map) => {
                map.insert("manifest".into(), Value::String(name));
            }
            other => {
                *other = serde_json::json!({ "manifest": name, "result": other.take() });
            }
        }
        write_file(path, &to_pretty(&v))
    }
}

fn to_pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serialisable");
    s.push('\n');
    s
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::io(path, e))
}

#[derive(Serialize)]
struct CsvRow<'a> {
    x: f64,
    unit: &'a str,
    rate_v1_bps: f64,
    rate_v2_bps: f64,
    qber: f64,
    n0_low: f64,
    n1_low: f64,
    n1_up: f64,
    eph_up: f64,
    lambda_ec: f64,
    secure_len_v1: i64,
    secure_len_v2: i64,
}

/// Sweep table with the frozen header. Bound columns come from the
/// signal-only variant.
pub fn write_sweep_csv<W: Write>(out: W, points: &[SweepPoint]) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for p in points {
        let r = &p.report;
        let b = &r.v2.bounds;
        w.serialize(CsvRow {
            x: p.x,
            unit: p.axis.unit(),
            rate_v1_bps: r.rate_v1_bps,
            rate_v2_bps: r.rate_v2_bps,
            qber: p.qber,
            n0_low: b.n0_low,
            n1_low: b.n1_low,
            n1_up: b.n1_up,
            eph_up: b.eph_up,
            lambda_ec: r.v2.lambda_ec,
            secure_len_v1: r.secure_length_v1,
            secure_len_v2: r.secure_length_v2,
        })?;
    }
    w.flush()?;
    Ok(())
}

fn estimation_status(reports: &[&KeyReport]) -> Result<(), Failure> {
    let failed: Vec<String> = reports
        .iter()
        .flat_map(|r| [&r.v1.failure, &r.v2.failure])
        .flatten()
        .cloned()
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_ESTIMATION,
            message: failed.join("\n"),
        })
    }
}

fn optimize_failure(e: OptimizeError) -> Failure {
    Failure::config(e.to_string())
}

fn run_sweep(out: &Outputs, points: Vec<SweepPoint>, csv: Option<&PathBuf>) -> Result<(), Failure> {
    let mut files = Vec::new();
    match csv {
        Some(path) => {
            let f = fs::File::create(path).map_err(|e| Failure::io(path, e))?;
            write_sweep_csv(std::io::BufWriter::new(f), &points).map_err(|e| Failure {
                code: 1,
                message: format!("{}: {e}", path.display()),
            })?;
            files.push(path.clone());
        }
        None => write_sweep_csv(std::io::stdout().lock(), &points).map_err(|e| Failure {
            code: 1,
            message: e.to_string(),
        })?,
    }
    if let Some(json) = &out.cli.json {
        let primary = files.first().cloned().unwrap_or_else(|| json.clone());
        out.write_json(json, &primary, &serde_json::json!({ "points": points }))?;
        files.push(json.clone());
    }
    out.write_manifest(&files)?;
    estimation_status(&points.iter().map(|p| &p.report).collect::<Vec<_>>())
}

fn run_selftest(suite: Suite, seed: u64) -> Result<(), Failure> {
    let mut ok = true;
    if matches!(suite, Suite::Lp | Suite::All) {
        let s = run_oracle_suite(200, seed);
        println!("lp: {}/{} oracle matches", s.matches, s.cases);
        for f in &s.failures {
            eprintln!("lp: {f}");
        }
        ok &= s.passed();
    }
    if matches!(suite, Suite::Bounds | Suite::All) {
        let mut p = ProtocolParams::default();
        p.link.length_km = p.link.length_for_attenuation(30.0);
        let s = run_sandwich_suite(&p, 100, seed);
        println!(
            "bounds: {}/{} analytic and {}/{} lp sandwich inclusions",
            s.analytic_inclusions,
            s.cases.len(),
            s.lp_inclusions,
            s.cases.len()
        );
        for f in &s.failures {
            eprintln!("bounds: {f}");
        }
        ok &= s.passed() && s.cases.len() == 100;
    }
    if ok {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_SELFTEST,
            message: "selftest failed".into(),
        })
    }
}

fn dispatch(cli: &Cli, argv: Vec<String>) -> Result<(), Failure> {
    if let Command::Selftest { suite } = cli.command {
        return run_selftest(suite, cli.seed);
    }
    let params = load_params(cli.config.as_deref(), &cli.overrides)?;
    let out = Outputs {
        cli,
        argv,
        params: &params,
    };
    match &cli.command {
        Command::Rate => {
            let report = evaluate_params(&params, cli.mode, cli.seed);
            print!("{}", to_pretty(&report));
            if let Some(json) = &cli.json {
                out.write_json(json, json, &report)?;
                out.write_manifest(std::slice::from_ref(json))?;
            }
            estimation_status(&[&report])
        }
        Command::SweepDistance { from, to, step, csv } => {
            let points = sweep_distance(&params, *from, *to, *step, cli.mode, cli.seed).map_err(optimize_failure)?;
            run_sweep(&out, points, csv.as_ref())
        }
        Command::SweepPower {
            length_km,
            from,
            to,
            step,
            csv,
        } => {
            let points = sweep_receive_power(&params, *length_km, *from, *to, *step, cli.mode, cli.seed)
                .map_err(optimize_failure)?;
            run_sweep(&out, points, csv.as_ref())
        }
        Command::Optimize(a) => {
            let d = SearchBox::default();
            let bx = SearchBox {
                u: a.u.unwrap_or(d.u),
                v: a.v.unwrap_or(d.v),
                p_u: a.p_u.unwrap_or(d.p_u),
                p_v: a.p_v.unwrap_or(d.p_v),
                qz: a.qz.unwrap_or(d.qz),
            };
            let opts = OptimizeOptions {
                objective: a.objective,
                mode: cli.mode,
                seed: cli.seed,
                restarts: a.restarts,
                ..Default::default()
            };
            let best = optimize_params(&params, &bx, &opts).map_err(optimize_failure)?;
            print!("{}", to_pretty(&best));
            if let Some(json) = &cli.json {
                out.write_json(json, json, &best)?;
                out.write_manifest(std::slice::from_ref(json))?;
            }
            estimation_status(&[&best.report])
        }
        Command::Selftest { .. } => unreachable!("handled above"),
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let argv = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match dispatch(&cli, argv) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_set_nested_values() {
        let mut v = serde_json::json!({ "link": { "length_km": 240.0 }, "mux": null });
        apply_override(&mut v, "link.length_km=0").unwrap();
        apply_override(&mut v, "mux.filter_bandwidth_ghz=50").unwrap();
        apply_override(&mut v, "detector.note=abc").unwrap();
        assert_eq!(v["link"]["length_km"], 0);
        assert_eq!(v["mux"]["filter_bandwidth_ghz"], 50);
        assert_eq!(v["detector"]["note"], "abc");
        assert!(apply_override(&mut v, "link.length_km").is_err());
        assert!(apply_override(&mut v, "link..x=1").is_err());
        assert!(apply_override(&mut v, "link.length_km.deeper=1").is_err());
    }

    #[test]
    fn overrides_index_arrays() {
        let mut v = serde_json::json!({ "mux": { "channels": [ { "launch_power_dbm": 0.0 } ] } });
        apply_override(&mut v, "mux.channels.0.launch_power_dbm=-3.5").unwrap();
        assert_eq!(v["mux"]["channels"][0]["launch_power_dbm"], -3.5);
        assert!(apply_override(&mut v, "mux.channels.4.launch_power_dbm=1").is_err());
    }

    #[test]
    fn loading_rejects_unknown_and_invalid() {
        assert!(load_params(None, &["link.length_km=100".into()]).is_ok());
        let e = load_params(None, &["link.colour=1".into()]).unwrap_err();
        assert_eq!(e.code, EXIT_CONFIG);
        let e = load_params(None, &["intensities.v=0.6".into()]).unwrap_err();
        assert!(e.message.contains("decoy denominator"), "{}", e.message);
        let p = load_params(None, &["mux.drop_filter_loss_db=4".into()]).unwrap();
        assert_eq!(p.mux.unwrap().drop_filter_loss_db, 4.0);
    }

    #[test]
    fn intervals_parse() {
        assert_eq!(parse_interval("0.2,0.6"), Ok((0.2, 0.6)));
        assert_eq!(parse_interval("0.5"), Ok((0.5, 0.5)));
        assert!(parse_interval("a,b").is_err());
    }

    #[test]
    fn manifest_sits_next_to_output() {
        assert_eq!(manifest_path(Path::new("out/run.csv")), PathBuf::from("out/run.csv.manifest.json"));
    }

    #[test]
    fn empty_sweep_is_header_only() {
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{}\n", CSV_HEADER.join(",")));
    }
}
