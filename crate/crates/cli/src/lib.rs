//! Command-line front end: file formats, certificates and subcommands.
//!
//! Exit codes: 0 positive verdict (or success), 1 negative verdict,
//! 2 undecided, 3 input error, 4 solver failure.

pub mod cert;
pub mod error;
pub mod format;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use qmaj::approx;
use qmaj::entropy;
use qmaj::factorize::{self, FactorOptions, FactorVerdict};
use qmaj::linalg::{BipartiteState, CMatrix, FactoredDims};
use qmaj::majorize::{self, FamilyInstance, MajorizeOptions, Verdict};
use qmaj::oracle::{self, Seed};
use qmaj::tol;
use serde_json::Value;

use cert::{Certificate, Inputs, SolverInfo, WitnessRecord};
use error::{CliError, CliResult};
use format::MatrixFile;

/// `(ρ_i, σ_i)` of a family.
pub type StatePair = (CMatrix, CMatrix);

#[derive(Debug, Parser)]
#[command(name = "qmaj", version, about = "Quantum majorization: decide, certify, quantify")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Conditional min-entropy H_min(A|B) of a state.
    Hmin {
        state: PathBuf,
        #[arg(long)]
        cert: Option<PathBuf>,
    },
    /// Decide whether sigma = (id⊗Φ)(rho) for a channel Φ on one factor.
    Majorize {
        rho: PathBuf,
        sigma: PathBuf,
        #[arg(long, default_value = "B")]
        factor: String,
        /// Trace-norm tolerance for accepting a channel.
        #[arg(long, default_value_t = tol::DECISION_TOL)]
        tol: f64,
        #[arg(long)]
        cert: Option<PathBuf>,
    },
    /// Decide whether one channel maps every rho_i to sigma_i.
    ConvertFamily {
        pairs: PathBuf,
        #[arg(long)]
        cert: Option<PathBuf>,
    },
    /// Decide whether S = Φ∘T for some channel Φ.
    FactorPost {
        t: PathBuf,
        s: PathBuf,
        #[arg(long)]
        cert: Option<PathBuf>,
    },
    /// Decide whether S = T∘Φ for some channel Φ.
    FactorPre {
        t: PathBuf,
        s: PathBuf,
        #[arg(long)]
        cert: Option<PathBuf>,
    },
    /// Diamond norm of T − S.
    Diamond {
        t: PathBuf,
        s: PathBuf,
        #[arg(long)]
        cert: Option<PathBuf>,
    },
    /// Least trace-norm error of converting rho into sigma.
    ApproxConvert {
        rho: PathBuf,
        sigma: PathBuf,
        #[arg(long)]
        cert: Option<PathBuf>,
    },
    /// Least diamond-norm error of S ≈ Φ∘T.
    ApproxFactor {
        t: PathBuf,
        s: PathBuf,
        #[arg(long)]
        cert: Option<PathBuf>,
    },
    /// Re-check a certificate against its inputs.
    Verify { certificate: PathBuf, inputs: Vec<PathBuf> },
    /// Write a random instance.
    Random {
        #[command(subcommand)]
        what: RandomKind,
    },
    /// Run the randomized property suites and print a JSON report.
    Selftest {
        #[arg(long, default_value_t = 20)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Subcommand)]
pub enum RandomKind {
    /// Density on d⊗d (or d⊗dim_b).
    State {
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        dim_b: Option<usize>,
        #[arg(long)]
        rank: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// CPTP map from a Haar isometry into d_out⊗env.
    Channel {
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        d_out: Option<usize>,
        #[arg(long)]
        env: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn load(path: &Path) -> CliResult<MatrixFile> {
    MatrixFile::parse(&read(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn load_state(path: &Path) -> CliResult<BipartiteState> {
    load(path)?
        .into_state()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn load_channel(path: &Path) -> CliResult<qmaj::channel::Channel> {
    load(path)?
        .into_channel()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// `{"kind": "family", "pairs": [{"rho": M, "sigma": M}, ...], "weights": [...]}`.
pub fn load_family(path: &Path) -> CliResult<(Vec<StatePair>, Option<Vec<f64>>)> {
    let v: Value = serde_json::from_str(&read(path)?).map_err(|e| CliError::Input(format!("malformed JSON: {e}")))?;
    if v.get("kind").and_then(Value::as_str) != Some("family") {
        return Err(CliError::Input("expected kind \"family\"".into()));
    }
    let pairs = v
        .get("pairs")
        .and_then(Value::as_array)
        .ok_or_else(|| CliError::Input("\"pairs\" must be an array".into()))?
        .iter()
        .map(|p| {
            let get = |k: &str| {
                p.get(k)
                    .ok_or_else(|| CliError::Input(format!("pair lacks {k:?}")))
                    .and_then(MatrixFile::from_value)
                    .map(|m| m.data)
            };
            Ok((get("rho")?, get("sigma")?))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let weights = match v.get("weights") {
        None | Some(Value::Null) => None,
        Some(w) => Some(
            w.as_array()
                .and_then(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<_>>>())
                .ok_or_else(|| CliError::Input("\"weights\" must be numbers".into()))?,
        ),
    };
    Ok((pairs, weights))
}

fn write_cert(path: Option<&PathBuf>, c: &Certificate) -> CliResult<()> {
    if let Some(p) = path {
        std::fs::write(p, c.to_json() + "\n")?;
    }
    Ok(())
}

fn verdict_line(out: &mut dyn Write, word: &str, margin: f64) -> CliResult<()> {
    writeln!(out, "VERDICT {word} margin={margin:e}")?;
    Ok(())
}

fn verdict_code(word: &str) -> i32 {
    match word {
        "Majorized" | "Factors" | "Verified" => 0,
        "NotMajorized" | "NoFactor" | "Rejected" => 1,
        _ => 2,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Errors go to `err` as one `ERROR <class> <message>` line.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return 0;
            }
            let msg = e.to_string();
            let head: Vec<&str> = msg
                .lines()
                .take_while(|l| !l.trim().is_empty())
                .map(str::trim)
                .collect();
            let _ = writeln!(err, "ERROR input {}", head.join(" ").trim_start_matches("error: "));
            return 3;
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "{}", e.line());
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> CliResult<i32> {
    match cmd {
        Command::Hmin { state, cert } => {
            let rho = load_state(&state)?;
            let h = entropy::hmin(&rho)?;
            writeln!(out, "H_min = {:.6} bits", h.value_bits)?;
            writeln!(out, "lambda = {:.6}", h.lambda)?;
            writeln!(out, "gap = {:.3e}", h.gap)?;
            let mut c = Certificate::new("hmin", "Computed", SolverInfo::current(tol::DECISION_TOL))
                .margin("value_bits", h.value_bits)
                .margin("lambda", h.lambda)
                .margin("gap", h.gap);
            c.witness = Some(WitnessRecord::HminDual {
                omega: MatrixFile::operator(h.optimal_omega),
                dual_x: MatrixFile::bipartite_operator(h.dual_x, rho.dims()),
            });
            write_cert(cert.as_ref(), &c)?;
            Ok(0)
        }
        Command::Majorize {
            rho,
            sigma,
            factor,
            tol: dtol,
            cert,
        } => {
            let factor = cert::parse_factor(&factor)?;
            if !(dtol.is_finite() && dtol > 0.0) {
                return Err(CliError::Input(format!("--tol must be positive, got {dtol}")));
            }
            let (r, s) = (load_state(&rho)?, load_state(&sigma)?);
            let opts = MajorizeOptions {
                factor,
                decision_tol: dtol,
                ..Default::default()
            };
            let d = majorize::is_majorized(&r, &s, &opts)?;
            let word = d.kind().word();
            let mut c = Certificate::new("majorize", word, SolverInfo::current(dtol))
                .margin("feas_residual", d.feas_residual)
                .margin("witness_gap", d.witness_gap);
            c.factor = Some(cert::factor_word(factor).into());
            let margin = match &d.verdict {
                Verdict::Majorized(ch) => {
                    c.channel = Some(MatrixFile::channel(ch));
                    d.feas_residual
                }
                Verdict::NotMajorized(w) => {
                    writeln!(
                        out,
                        "witness: EB channel on {} ({} outcomes)",
                        cert::factor_word(w.acts_on),
                        w.eb_channel.ensemble().map_or(0, |e| e.povm.len())
                    )?;
                    writeln!(
                        out,
                        "H_min after witness: {:.9} vs {:.9} bits",
                        w.hmin_rho, w.hmin_sigma
                    )?;
                    c.witness = Some(cert::eb_record(w)?);
                    w.gap()
                }
                Verdict::Undecided(m) => {
                    writeln!(out, "undecided: {}", m.reason)?;
                    c = c.margin("distance_lower", m.distance_lower);
                    m.distance_lower
                }
            };
            write_cert(cert.as_ref(), &c)?;
            verdict_line(out, word, margin)?;
            Ok(verdict_code(word))
        }
        Command::ConvertFamily { pairs, cert } => {
            let (pairs, weights) = load_family(&pairs)?;
            let inst = FamilyInstance::new(pairs, weights)?;
            let fd = majorize::convert_family(&inst, &MajorizeOptions::default())?;
            let d = &fd.decision;
            let word = d.kind().word();
            let mut c = Certificate::new("convert-family", word, SolverInfo::current(tol::DECISION_TOL))
                .margin("feas_residual", d.feas_residual)
                .margin("witness_gap", d.witness_gap);
            let margin = match (&d.verdict, &fd.ensemble) {
                (Verdict::Majorized(ch), _) => {
                    c.channel = Some(MatrixFile::channel(ch));
                    d.feas_residual
                }
                (Verdict::NotMajorized(w), Some((lam, omegas))) => {
                    c.witness = Some(WitnessRecord::FamilyEnsemble {
                        weights: lam.clone(),
                        omegas: omegas.iter().cloned().map(MatrixFile::operator).collect(),
                        hmin_rho: w.hmin_rho,
                        hmin_sigma: w.hmin_sigma,
                    });
                    w.gap()
                }
                (Verdict::Undecided(m), _) => {
                    writeln!(out, "undecided: {}", m.reason)?;
                    m.distance_lower
                }
                (Verdict::NotMajorized(_), None) => {
                    return Err(CliError::Solver("family witness lacks its ensemble".into()))
                }
            };
            write_cert(cert.as_ref(), &c)?;
            verdict_line(out, word, margin)?;
            Ok(verdict_code(word))
        }
        Command::FactorPost { t, s, cert } => factor_command(out, true, &t, &s, cert.as_ref()),
        Command::FactorPre { t, s, cert } => factor_command(out, false, &t, &s, cert.as_ref()),
        Command::Diamond { t, s, cert } => {
            let (t, s) = (load_channel(&t)?, load_channel(&s)?);
            let v = approx::diamond_distance(&t, &s)?;
            writeln!(out, "diamond_norm = {v:.9}")?;
            let c = Certificate::new("diamond", "Computed", SolverInfo::current(tol::DECISION_TOL))
                .margin("diamond_norm", v);
            write_cert(cert.as_ref(), &c)?;
            Ok(0)
        }
        Command::ApproxConvert { rho, sigma, cert } => {
            let (r, s) = (load_state(&rho)?, load_state(&sigma)?);
            let a = approx::min_conversion_error(&r, &s)?;
            report_approx(out, "approx-convert", &a, cert.as_ref())
        }
        Command::ApproxFactor { t, s, cert } => {
            let (t, s) = (load_channel(&t)?, load_channel(&s)?);
            let a = approx::min_post_factor_error(&t, &s)?;
            report_approx(out, "approx-factor", &a, cert.as_ref())
        }
        Command::Verify { certificate, inputs } => {
            let c = Certificate::parse(&read(&certificate)?)?;
            let need = if c.command == "hmin" || c.command == "convert-family" {
                1
            } else {
                2
            };
            if inputs.len() != need {
                return Err(CliError::Input(format!(
                    "a {:?} certificate needs {need} input file(s), got {}",
                    c.command,
                    inputs.len()
                )));
            }
            let parsed = match c.command.as_str() {
                "hmin" => Inputs::State(load_state(&inputs[0])?),
                "convert-family" => {
                    let (p, w) = load_family(&inputs[0])?;
                    Inputs::Family(p, w)
                }
                "majorize" | "approx-convert" => Inputs::States(load_state(&inputs[0])?, load_state(&inputs[1])?),
                "factor-post" | "factor-pre" | "diamond" | "approx-factor" => {
                    Inputs::Channels(load_channel(&inputs[0])?, load_channel(&inputs[1])?)
                }
                other => return Err(CliError::Input(format!("unknown certificate command {other:?}"))),
            };
            let v = cert::verify(&c, &parsed)?;
            for n in &v.notes {
                writeln!(out, "{n}")?;
            }
            let word = match v.verified {
                Some(true) => "Verified",
                Some(false) => "Rejected",
                None => "Undecided",
            };
            verdict_line(out, word, v.margin)?;
            Ok(verdict_code(word))
        }
        Command::Random { what } => {
            let (file, dest) = match what {
                RandomKind::State {
                    dim,
                    dim_b,
                    rank,
                    seed,
                    out: dest,
                } => {
                    let dims = FactoredDims::new(dim, dim_b.unwrap_or(dim))?;
                    let rho = oracle::random_density(dims.total(), rank.unwrap_or(dims.total()), Seed(seed))?;
                    (MatrixFile::state(rho, dims), dest)
                }
                RandomKind::Channel {
                    dim,
                    d_out,
                    env,
                    seed,
                    out: dest,
                } => {
                    let d_out = d_out.unwrap_or(dim);
                    let ch = oracle::random_cptp(dim, d_out, env.unwrap_or(dim), Seed(seed))?;
                    (MatrixFile::channel(&ch), dest)
                }
            };
            match dest {
                Some(p) => std::fs::write(p, file.to_json() + "\n")?,
                None => writeln!(out, "{}", file.to_json())?,
            }
            Ok(0)
        }
        Command::Selftest { n, seed } => {
            let reports = vec![
                oracle::monotonicity_suite(n, Seed(seed))?,
                oracle::majorization_roundtrip_suite(n, Seed(seed))?,
            ];
            writeln!(
                out,
                "{}",
                serde_json::to_string_pretty(&reports).expect("report serializes")
            )?;
            Ok(if reports.iter().all(|r| r.failed == 0) { 0 } else { 1 })
        }
    }
}

fn report_approx(
    out: &mut dyn Write,
    command: &str,
    a: &approx::ApproxResult,
    path: Option<&PathBuf>,
) -> CliResult<i32> {
    writeln!(out, "delta_star = {:.9}", a.delta_star)?;
    writeln!(out, "lower = {:.9}", a.lower)?;
    let mut c = Certificate::new(command, "Computed", SolverInfo::current(tol::DECISION_TOL))
        .margin("delta_star", a.delta_star)
        .margin("lower", a.lower)
        .margin("gap", a.gap);
    c.channel = Some(MatrixFile::channel(&a.optimizer));
    write_cert(path, &c)?;
    Ok(0)
}

fn factor_command(out: &mut dyn Write, post: bool, t: &Path, s: &Path, path: Option<&PathBuf>) -> CliResult<i32> {
    let (t, s) = (load_channel(t)?, load_channel(s)?);
    let opts = FactorOptions::default();
    let d = if post {
        factorize::post_factor(&t, &s, &opts)?
    } else {
        factorize::pre_factor(&t, &s, &opts)?
    };
    let word = d.kind().word();
    let command = if post { "factor-post" } else { "factor-pre" };
    let mut c = Certificate::new(command, word, SolverInfo::current(tol::DECISION_TOL)).margin("residual", d.residual);
    let margin = match &d.verdict {
        FactorVerdict::Factors(ch) => {
            c.channel = Some(MatrixFile::channel(ch));
            d.residual
        }
        FactorVerdict::NoFactor(w) => {
            writeln!(out, "witness values: T side {:.9}, S side {:.9}", w.lhs, w.rhs)?;
            c.witness = Some(cert::factor_record(w));
            c = c.margin("witness_gap", w.gap());
            w.gap()
        }
        FactorVerdict::Undecided(reason) => {
            writeln!(out, "undecided: {reason}")?;
            d.residual
        }
    };
    write_cert(path, &c)?;
    verdict_line(out, word, margin)?;
    Ok(verdict_code(word))
}
