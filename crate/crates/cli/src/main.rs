//! `dce`: design, decode, simulate, estimate, wtp and serve, in the order a
//! study usually needs them.
//!
//! Exit codes: 0 success, 2 usage or validation error, 3 numerical failure.

mod output;

use std::fs;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use dce_core::codec::default_alternative_labels;
use dce_core::estimation::CONT_PRICE;
use dce_core::{
    decode_design_with_labels, export_design, fit_conditional_logit, import_design, label_design,
    recode_price_attribute, render_plain_text, simulate_choices, wtp, AttributeSpec, Coefficients,
    DesignFormat, DesignSettings, LabeledDesign, OptimizerConfig, PriorSpec, ResponseDataset,
};
use dce_service::{Server, ServiceConfig};
use serde::Deserialize;

#[derive(Parser)]
#[command(
    name = "dce",
    version,
    about = "Discrete choice experiments from the command line"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an efficient design.
    Design(DesignArgs),
    /// Print a design's choice sets with attribute and level names.
    Decode(DecodeArgs),
    /// Simulate respondents answering a design under known coefficients.
    Simulate(SimulateArgs),
    /// Fit a conditional logit model to a responses CSV.
    Estimate(EstimateArgs),
    /// Willingness to pay from a conditional logit fit.
    Wtp(WtpArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct DesignArgs {
    /// Levels per attribute, e.g. 3,2,3,3.
    #[arg(long, value_delimiter = ',', required_unless_present = "names")]
    levels: Vec<usize>,
    /// JSON file with attribute and level names; replaces --levels.
    #[arg(long)]
    names: Option<PathBuf>,
    #[arg(long)]
    alts: usize,
    #[arg(long)]
    sets: usize,
    #[arg(long)]
    opt_out: bool,
    #[arg(long)]
    bayesian: bool,
    /// Prior means, one per coded parameter.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    priors: Option<Vec<f64>>,
    /// Prior draws for the Bayesian criterion.
    #[arg(long, default_value_t = 100)]
    draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    starts: usize,
    #[arg(long)]
    out: PathBuf,
    /// json (default) or csv; csv keeps only the coded matrix.
    #[arg(long, default_value = "json")]
    format: DesignFormat,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Input format; inferred from the extension when omitted.
    #[arg(long)]
    format: Option<DesignFormat>,
    /// JSON file with attribute and level names.
    #[arg(long)]
    names: Option<PathBuf>,
    /// Alternative labels, comma separated, opt-out last.
    #[arg(long, value_delimiter = ',')]
    labels: Option<Vec<String>>,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    design: PathBuf,
    /// True coefficients in coded column order.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    beta: Vec<f64>,
    #[arg(long)]
    respondents: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DataArgs {
    /// Responses CSV: gid, respondent, alt, choice, then covariates.
    #[arg(long)]
    data: PathBuf,
    /// Covariates to fit (after price recoding); all when omitted.
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
    /// Numeric value of every price level, base first; recodes the price
    /// dummies into cont_price.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    price_levels: Option<Vec<f64>>,
    /// Attribute holding the price; defaults to the last attribute.
    #[arg(long, requires = "price_levels")]
    price_attr: Option<String>,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Also write the full result as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct WtpArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Price coefficient name.
    #[arg(long, default_value = CONT_PRICE)]
    price: String,
    /// Coefficients to express in money; all non-price ones when omitted.
    #[arg(long, value_delimiter = ',')]
    targets: Option<Vec<String>>,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "DCE_DATA_DIR", default_value = "dce-data")]
    data_dir: PathBuf,
    #[arg(long, env = "DCE_BIND", default_value = "127.0.0.1")]
    bind: IpAddr,
    /// 0 picks a free port.
    #[arg(long, env = "DCE_PORT", default_value_t = 8080)]
    port: u16,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum NamesFile {
    Wrapped { attributes: Vec<AttributeSpec> },
    Bare(Vec<AttributeSpec>),
}

fn read_names(path: &Path) -> anyhow::Result<Vec<AttributeSpec>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read names file {}", path.display()))?;
    let names: NamesFile = serde_json::from_str(&text)
        .with_context(|| format!("invalid names file {}", path.display()))?;
    Ok(match names {
        NamesFile::Wrapped { attributes } | NamesFile::Bare(attributes) => attributes,
    })
}

fn read_design(path: &Path, format: Option<DesignFormat>) -> anyhow::Result<LabeledDesign> {
    let format = match format {
        Some(f) => f,
        None => match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => DesignFormat::Csv,
            _ => DesignFormat::Json,
        },
    };
    let bytes = fs::read(path).with_context(|| format!("cannot read design {}", path.display()))?;
    Ok(import_design(&bytes, format)?)
}

fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

fn design(args: DesignArgs) -> anyhow::Result<()> {
    let attributes = match &args.names {
        Some(path) => {
            let attributes = read_names(path)?;
            if !args.levels.is_empty() {
                let from_names: Vec<usize> =
                    attributes.iter().map(AttributeSpec::n_levels).collect();
                if from_names != args.levels {
                    return Err(anyhow!(
                        "--levels {:?} disagree with the names file ({from_names:?})",
                        args.levels
                    ));
                }
            }
            attributes
        }
        None => DesignSettings::from_levels(&args.levels, args.alts, args.sets).attributes,
    };
    let mut priors = PriorSpec {
        n_draws: args.draws,
        ..PriorSpec::default()
    };
    if let Some(mean) = args.priors {
        priors.mean = mean;
    }
    let settings = DesignSettings {
        attributes,
        n_alts: args.alts,
        n_sets: args.sets,
        opt_out: args.opt_out,
        bayesian: args.bayesian,
        priors,
        seed: args.seed,
    };
    settings.validate()?;
    let config = OptimizerConfig {
        n_starts: args.starts,
        ..OptimizerConfig::for_settings(&settings)
    };
    let result = dce_core::coordinate_exchange(&settings, &config)?;
    let labeled = LabeledDesign::from_result(&result, &settings)?;
    write_file(&args.out, &export_design(&labeled, args.format))?;
    println!(
        "K={} S={} J={} {}-error={:.6} passes={} start={}",
        settings.n_params(),
        settings.n_sets,
        settings.n_alts,
        if settings.bayesian { "DB" } else { "D" },
        result.criterion_value,
        result.passes_used,
        result.start_index
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

fn decode(args: DecodeArgs) -> anyhow::Result<()> {
    let mut labeled = read_design(&args.input, args.format)?;
    if let Some(path) = &args.names {
        let attributes = read_names(path)?;
        labeled = label_design(
            &labeled.coded,
            attributes.iter().map(|a| a.name.clone()).collect(),
            attributes.iter().map(|a| a.levels.clone()).collect(),
        )?;
    }
    let labels = args
        .labels
        .unwrap_or_else(|| default_alternative_labels(&labeled.coded));
    let text = render_plain_text(&decode_design_with_labels(&labeled, &labels)?);
    match &args.out {
        Some(path) => write_file(path, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn simulate(args: SimulateArgs) -> anyhow::Result<()> {
    let labeled = read_design(&args.design, None)?;
    let beta = Coefficients::new(labeled.coded.column_names.clone(), args.beta)?;
    let data = simulate_choices(&labeled.coded, &beta, args.respondents, args.seed)?;
    let file = fs::File::create(&args.out)
        .with_context(|| format!("cannot write {}", args.out.display()))?;
    data.write_csv(file)?;
    println!(
        "simulated {} respondents, {} tasks -> {}",
        args.respondents,
        data.n_tasks(),
        args.out.display()
    );
    Ok(())
}

fn load_data(args: &DataArgs) -> anyhow::Result<(ResponseDataset, Vec<String>)> {
    let file = fs::File::open(&args.data)
        .with_context(|| format!("cannot read responses {}", args.data.display()))?;
    let mut data = ResponseDataset::read_csv(file)?;
    if let Some(values) = &args.price_levels {
        data = recode_price_attribute(&data, args.price_attr.as_deref(), values)?;
    }
    let covariates = args
        .covariates
        .clone()
        .unwrap_or_else(|| data.covariate_names.clone());
    Ok((data, covariates))
}

fn estimate(args: EstimateArgs) -> anyhow::Result<()> {
    let (data, covariates) = load_data(&args.data)?;
    let fit = fit_conditional_logit(&data, &covariates)?;
    print!("{}", output::coefficient_table(&fit));
    if let Some(path) = &args.json {
        let body = serde_json::json!({
            "estimation": fit,
            "plot": dce_core::coefficient_plot_data(&fit),
        });
        write_file(path, serde_json::to_string_pretty(&body)?.as_bytes())?;
    }
    Ok(())
}

fn willingness(args: WtpArgs) -> anyhow::Result<()> {
    let (data, covariates) = load_data(&args.data)?;
    let fit = fit_conditional_logit(&data, &covariates)?;
    let targets = args.targets.unwrap_or_else(|| {
        fit.coefficients
            .names
            .iter()
            .filter(|n| **n != args.price)
            .cloned()
            .collect()
    });
    let result = wtp(&fit, &args.price, &targets)?;
    print!("{}", output::wtp_table(&result));
    if let Some(path) = &args.json {
        let body = serde_json::json!({ "wtp": result, "estimation": fit });
        write_file(path, serde_json::to_string_pretty(&body)?.as_bytes())?;
    }
    Ok(())
}

fn serve(args: ServeArgs) -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    let config = ServiceConfig {
        data_dir: args.data_dir,
        bind: SocketAddr::new(args.bind, args.port),
    };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let server = Server::bind(&config)
            .await
            .with_context(|| format!("cannot start service in {}", config.data_dir.display()))?;
        println!("listening on {}", server.local_addr()?);
        server.run().await?;
        Ok(())
    })
}

/// 3 for numerical failures of a fit or search, 2 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<dce_core::Error>() {
        Some(e) if e.is_numerical() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Design(a) => design(a),
        Command::Decode(a) => decode(a),
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate(a),
        Command::Wtp(a) => willingness(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
