use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use polyflex::datagen::{self, Partition, Sample};
use polyflex::kinematics::{self, Tensor3};
use polyflex::reference_models::{ref_energy, ref_stress};
use polyflex::training::{self, TrainConfig};
use polyflex::variants::mielke_exact_network;
use polyflex::verify::{self, Check, Hyperelastic};
use polyflex::{Architecture, MaterialModel, MaterialParams, VariantKind, VariantModel};

#[derive(Parser)]
#[command(name = "polyflex", version, about = "Train and check polyconvex hyperelastic networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a reference model on a load-case grid and write a dataset CSV.
    GenerateData(GenerateArgs),
    /// Train a network variant with multiple restarts.
    Train(TrainArgs),
    /// Print the masked stress MSE of a model on each partition of a dataset.
    Evaluate(EvaluateArgs),
    /// Run property checks on a model; exits 1 if any check fails.
    Verify(VerifyArgs),
    /// Tabulate stress and energy along a load path.
    ExportCurves(CurveArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Grid {
    /// Uniaxial, equibiaxial and pure shear (52 states, incompressible).
    Classical,
    /// F11, F22 in [0.5, 2] step 0.075 (441 states, incompressible).
    IncMielke,
    /// Ordered diagonal stretches in [0.6, 2] step 0.2 (120 states).
    MielkeCompressible,
    /// Convert a Treloar stretch/stress file given with --input.
    Treloar,
}

#[derive(clap::Args)]
struct GenerateArgs {
    /// Reference model, e.g. neo-hooke, gent, inc-mielke, additive-mielke.
    #[arg(long, value_parser = MaterialModel::from_str, required_unless_present = "input")]
    model: Option<MaterialModel>,
    /// Parameter overrides as JSON text or a path to a JSON file.
    #[arg(long)]
    params_json: Option<String>,
    #[arg(long, value_enum)]
    grid: Grid,
    /// Treloar data file (columns: mode, stretch, nominal stress).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Seed of the train/val/test shuffle for Treloar data.
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Variant such as inc-cssv, rcssv, inc-ball or uinvar.
    #[arg(long, value_parser = VariantKind::from_str)]
    variant: VariantKind,
    #[arg(long)]
    data: PathBuf,
    /// `all` for the standard sweep, or a comma list such as 6-8-1,6-12-8-1.
    #[arg(long, default_value = "all")]
    archs: String,
    #[arg(long, default_value_t = 30)]
    restarts: usize,
    #[arg(long, default_value_t = 1000)]
    max_iter: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Rerun each instance with tolerances tightened 100x.
    #[arg(long)]
    fine_tune: bool,
    #[arg(long)]
    out_model: Option<PathBuf>,
    #[arg(long)]
    out_report: Option<PathBuf>,
}

#[derive(clap::Args)]
struct EvaluateArgs {
    /// Model JSON file.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(clap::Args)]
struct VerifyArgs {
    /// Model JSON file, `mielke-exact`, or a reference model name.
    #[arg(long)]
    model: String,
    /// Parameter overrides for a reference model.
    #[arg(long)]
    params_json: Option<String>,
    /// `all` or a comma list of check names.
    #[arg(long, default_value = "all", value_parser = parse_checks)]
    checks: CheckSelection,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Samples per randomized check.
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    /// Print reports as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CurveKind {
    Uniaxial,
    Biaxial,
    PureShear,
    /// Sweep lambda1 with lambda2 held fixed.
    Fixed,
}

#[derive(clap::Args)]
struct CurveArgs {
    /// Model JSON file, `mielke-exact`, or a reference model name.
    #[arg(long)]
    model: String,
    /// Reference model tabulated alongside in ref_* columns.
    #[arg(long, value_parser = MaterialModel::from_str)]
    reference: Option<MaterialModel>,
    /// Parameter overrides for the reference model(s).
    #[arg(long)]
    params_json: Option<String>,
    #[arg(long, value_enum)]
    curve: CurveKind,
    #[arg(long, default_value_t = 0.5)]
    start: f64,
    #[arg(long, default_value_t = 2.5)]
    end: f64,
    #[arg(long, default_value_t = 0.05)]
    step: f64,
    /// Fixed transverse stretch of the `fixed` sweep.
    #[arg(long, default_value_t = 1.0)]
    lambda2: f64,
    /// Third stretch of the compressible `fixed` sweep.
    #[arg(long, default_value_t = 1.0)]
    lambda3: f64,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone)]
enum CheckSelection {
    All,
    List(Vec<Check>),
}

fn parse_checks(s: &str) -> Result<CheckSelection, String> {
    if s.trim() == "all" {
        return Ok(CheckSelection::All);
    }
    s.split(',')
        .map(|name| {
            Check::parse(name).ok_or_else(|| {
                let known: Vec<&str> = Check::ALL.iter().map(|c| c.name()).collect();
                format!("unknown check `{}` (known: all, {})", name.trim(), known.join(", "))
            })
        })
        .collect::<Result<Vec<_>, _>>()
        .map(CheckSelection::List)
}

/// Errors split by exit code.
enum Failure {
    /// Bad flags or inputs that do not fit together (exit 2).
    Usage(String),
    /// A check failed or the command could not complete (exit 1).
    Failed(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Failed(e)
    }
}

impl From<polyflex::Error> for Failure {
    fn from(e: polyflex::Error) -> Self {
        Failure::Failed(e.into())
    }
}

type CmdResult = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenerateData(a) => generate(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Verify(a) => verify_cmd(a),
        Command::ExportCurves(a) => export_curves(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("Run `polyflex --help` for usage.");
            ExitCode::from(2)
        }
        Err(Failure::Failed(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn material_params(model: MaterialModel, overrides: Option<&str>) -> Result<MaterialParams, Failure> {
    let Some(text) = overrides else {
        return Ok(MaterialParams::defaults(model));
    };
    let text = if Path::new(text).is_file() {
        fs::read_to_string(text).with_context(|| format!("reading {text}"))?
    } else {
        text.to_string()
    };
    MaterialParams::from_json_overrides(model, &text).map_err(|e| usage(e.to_string()))
}

fn generate(a: GenerateArgs) -> CmdResult {
    let dataset = match a.grid {
        Grid::Treloar => {
            let input = a.input.ok_or_else(|| usage("--grid treloar needs --input"))?;
            datagen::load_treloar(&input, a.split_seed)
                .with_context(|| format!("loading {}", input.display()))?
        }
        grid => {
            let model = a.model.ok_or_else(|| usage("--model is required for this grid"))?;
            let params = material_params(model, a.params_json.as_deref())?;
            let (states, incompressible) = match grid {
                Grid::Classical => (datagen::incompressible_loadcases(), true),
                Grid::IncMielke => (datagen::inc_mielke_grid(), true),
                _ => (datagen::mielke_compressible_grid(), false),
            };
            if model.is_classical() && !incompressible {
                return Err(usage(format!("{model} is an incompressible model")));
            }
            datagen::build_dataset(&params, &states, incompressible)?
        }
    };
    datagen::write_csv(&dataset, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    println!("wrote {} {} samples to {}", dataset.len(), dataset.kind_name(), a.out.display());
    Ok(())
}

fn parse_archs(list: &str, kind: VariantKind) -> Result<Vec<Architecture>, Failure> {
    if list.trim() == "all" {
        return Ok(Architecture::standard_sweep(kind.input_size()));
    }
    list.split(',')
        .map(|s| Architecture::from_str(s.trim()).map_err(|e| usage(e.to_string())))
        .collect()
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn train(a: TrainArgs) -> CmdResult {
    let dataset = datagen::read_csv(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let config = TrainConfig {
        architectures: parse_archs(&a.archs, a.variant)?,
        restarts: a.restarts,
        max_iter: a.max_iter,
        fine_tune: a.fine_tune,
        base_seed: a.seed,
        ..TrainConfig::standard(a.variant)
    };
    config.validate(a.variant).map_err(|e| usage(e.to_string()))?;
    if a.variant.compressible == dataset.incompressible {
        return Err(usage(format!("{} does not match {} data", a.variant, dataset.kind_name())));
    }
    let result = training::multi_restart(a.variant, &dataset, &config)?;
    let best = result.best();
    match best.val_mse {
        Some(v) => println!(
            "best {} seed {}: train {:.2e}, val {:.2e}",
            best.arch, best.seed, best.train_mse, v
        ),
        None => println!("best {} seed {}: train {:.2e}", best.arch, best.seed, best.train_mse),
    }
    if let Some(path) = &a.out_model {
        write_text(path, &result.best_model.to_json())?;
    }
    if let Some(path) = &a.out_report {
        let text = serde_json::to_string_pretty(&result.report_json()).context("serializing report")?;
        write_text(path, &text)?;
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<VariantModel, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(VariantModel::from_json(&text).with_context(|| format!("parsing {}", path.display()))?)
}

fn evaluate(a: EvaluateArgs) -> CmdResult {
    let model = load_model(&a.model)?;
    let dataset = datagen::read_csv(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    if model.kind.compressible == dataset.incompressible {
        return Err(usage(format!("{} does not match {} data", model.kind, dataset.kind_name())));
    }
    for part in Partition::ALL {
        let n = dataset.count(part);
        if n > 0 {
            let mse = training::mse_loss(&model, &dataset, part)?;
            println!("{part:<5} n={n:<4} mse={mse:.2e}");
        }
    }
    Ok(())
}

enum Subject {
    Network(VariantModel),
    Reference { params: MaterialParams, incompressible: bool },
}

impl Subject {
    fn resolve(name: &str, overrides: Option<&str>) -> Result<Subject, Failure> {
        if name == "mielke-exact" {
            return Ok(Subject::Network(mielke_exact_network()));
        }
        let path = Path::new(name);
        if path.is_file() {
            return Ok(Subject::Network(load_model(path)?));
        }
        match MaterialModel::from_str(name) {
            Ok(model) => {
                let incompressible = model.is_classical() || name.trim().starts_with("inc-");
                let params = material_params(model, overrides)?;
                Ok(Subject::Reference { params, incompressible })
            }
            Err(_) => Err(usage(format!(
                "`{name}` is neither a model file, `mielke-exact`, nor a reference model"
            ))),
        }
    }

    fn incompressible(&self) -> bool {
        match self {
            Subject::Network(m) => !m.kind.compressible,
            Subject::Reference { incompressible, .. } => *incompressible,
        }
    }

    /// Energy and stress; incompressible stresses have `P33 = 0`.
    fn evaluate(&self, f: &Tensor3) -> polyflex::Result<(f64, Tensor3)> {
        match self {
            Subject::Network(m) => {
                let p = training::predicted_stress(m, &Sample::full(*f, Tensor3::zeros()))?;
                Ok((m.potential(f)?, p))
            }
            Subject::Reference { params, incompressible } => {
                Ok((ref_energy(params, f)?, ref_stress(params, f, *incompressible)?))
            }
        }
    }
}

fn verify_cmd(a: VerifyArgs) -> CmdResult {
    let subject = Subject::resolve(&a.model, a.params_json.as_deref())?;
    let (label, applicable): (String, Vec<Check>) = match &subject {
        Subject::Network(m) => (
            m.label(),
            Check::ALL
                .into_iter()
                .filter(|c| *c != Check::Monotone || m.kind.is_monotone())
                .collect(),
        ),
        Subject::Reference { params, .. } => (
            params.label(),
            // The smooth Mielke energies are not shifted to vanish at I.
            Check::ALL
                .into_iter()
                .filter(|c| !c.network_only())
                .filter(|c| *c != Check::Normalization || params.model.is_classical())
                .collect(),
        ),
    };
    let checks = match a.checks {
        CheckSelection::All => applicable.clone(),
        CheckSelection::List(list) => list,
    };
    if let Some(c) = checks.iter().find(|c| !applicable.contains(c)) {
        return Err(usage(format!("check `{}` does not apply to {label}", c.name())));
    }
    let mut reports = Vec::new();
    for check in checks {
        let report = match &subject {
            Subject::Network(m) => verify::run_model_check(m, check, a.samples, a.seed)?,
            Subject::Reference { params, .. } => verify::run_common_check(params, check, a.samples, a.seed)?,
        };
        reports.push(report);
    }
    if a.json {
        let value = serde_json::json!({
            "model": label,
            "checks": reports.iter().map(|r| r.to_json()).collect::<Vec<_>>(),
        });
        println!("{}", serde_json::to_string_pretty(&value).context("serializing reports")?);
    } else {
        println!("{label}");
        for r in &reports {
            println!("{r}");
        }
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.pass).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Failed(anyhow::anyhow!("failed checks: {}", failed.join(", "))))
    }
}

/// Stretch values `start, start + step, ...` up to `end` (inclusive within
/// rounding), computed by multiplication.
fn stretches(start: f64, end: f64, step: f64) -> Result<Vec<f64>, Failure> {
    if !(step > 0.0) || !(end >= start) || !(start > 0.0) {
        return Err(usage("curve range needs 0 < start <= end and step > 0"));
    }
    let n = ((end - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| start + k as f64 * step).collect())
}

fn curve_state(kind: CurveKind, l: f64, a: &CurveArgs, incompressible: bool) -> Tensor3 {
    use kinematics::diag;
    match (kind, incompressible) {
        (CurveKind::Uniaxial, true) => diag(l, 1.0 / l.sqrt(), 1.0 / l.sqrt()),
        (CurveKind::Uniaxial, false) => diag(l, 1.0, 1.0),
        (CurveKind::Biaxial, true) => diag(l, l, 1.0 / (l * l)),
        (CurveKind::Biaxial, false) => diag(l, l, 1.0),
        (CurveKind::PureShear, _) => diag(l, 1.0, 1.0 / l),
        (CurveKind::Fixed, true) => diag(l, a.lambda2, 1.0 / (l * a.lambda2)),
        (CurveKind::Fixed, false) => diag(l, a.lambda2, a.lambda3),
    }
}

fn export_curves(a: CurveArgs) -> CmdResult {
    let subject = Subject::resolve(&a.model, a.params_json.as_deref())?;
    let incompressible = subject.incompressible();
    let reference = match a.reference {
        Some(model) => {
            let params = material_params(model, a.params_json.as_deref())?;
            if model.is_classical() && !incompressible {
                return Err(usage(format!("{model} cannot be compared on a compressible path")));
            }
            Some(Subject::Reference { params, incompressible })
        }
        None => None,
    };
    if a.curve == CurveKind::Fixed && !(a.lambda2 > 0.0 && a.lambda3 > 0.0) {
        return Err(usage("--lambda2 and --lambda3 must be positive"));
    }
    let first = if a.curve == CurveKind::Fixed { "lambda1" } else { "lambda" };
    let mut header = vec![first, "F11", "F22", "F33", "P11", "P22", "P33", "psi"];
    if reference.is_some() {
        header.extend(["ref_P11", "ref_P22", "ref_P33", "ref_psi"]);
    }
    let mut lines = vec![header.join(",")];
    for l in stretches(a.start, a.end, a.step)? {
        let f = curve_state(a.curve, l, &a, incompressible);
        let (psi, p) = subject.evaluate(&f).with_context(|| format!("at stretch {l}"))?;
        let mut row = vec![l, f[(0, 0)], f[(1, 1)], f[(2, 2)], p[(0, 0)], p[(1, 1)], p[(2, 2)], psi];
        if let Some(r) = &reference {
            let (rpsi, rp) = r.evaluate(&f).with_context(|| format!("reference at stretch {l}"))?;
            row.extend([rp[(0, 0)], rp[(1, 1)], rp[(2, 2)], rpsi]);
        }
        lines.push(row.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(","));
    }
    let text = lines.join("\n") + "\n";
    match &a.out {
        Some(path) => write_text(path, &text)?,
        None => io::stdout().write_all(text.as_bytes()).context("writing curve")?,
    }
    Ok(())
}
