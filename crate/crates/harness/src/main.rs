use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use styleadapt_harness::annotations::{coco_to_records, format_records, parse_records};
use styleadapt_harness::config::ConfigArgs;
use styleadapt_harness::synth::{generate_stream, SyntheticDomainSpec};
use styleadapt_harness::train::load_bank;
use styleadapt_harness::{bench, inspect_bank, ocl, train, tta, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "styleadapt", version, about = "Style-bank adaptation pipelines on synthetic feature streams")]
struct Cli {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train per-level style banks on a synthetic multi-cluster stream.
    TrainBank,
    /// Adapt trained banks to an unseen stream and report projection distances.
    TtaRun {
        /// Directory holding bank_level*.sab files
        #[arg(long)]
        bank_dir: PathBuf,
    },
    /// Run gated class-query attention and the contrastive loss on a paired record.
    OclDemo {
        /// Annotation file in line format; synthetic boxes when omitted
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// Image id to use from the annotation file (first record by default)
        #[arg(long)]
        record: Option<String>,
    },
    /// Time projection and test-time observe on the reference pyramid.
    Bench,
    /// Print the header and prototypes of a bank file.
    InspectBank { path: PathBuf },
    /// Convert COCO-style JSON annotations into the line format.
    ConvertAnnotations {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Print the resolved configuration as TOML.
    ShowConfig,
}

fn print_report(r: &styleadapt_harness::Report) {
    print!("{}", r.to_text());
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg: RunConfig = cli.config.resolve()?;
    let out = cfg.out_dir.clone();
    match cli.command {
        Command::TrainBank => {
            let stream = generate_stream(&SyntheticDomainSpec::train_from_config(&cfg))?;
            let outcome = train::run_train_phase(&cfg, &stream, &out)?;
            eprintln!("wrote {} bank files to {}", outcome.banks.len(), out.display());
        }
        Command::TtaRun { bank_dir } => {
            let stream = generate_stream(&SyntheticDomainSpec::tta_from_config(&cfg))?;
            let outcome = tta::run_tta_phase(&cfg, &bank_dir, &stream, &out)?;
            eprintln!(
                "adapted {} banks over {} samples, {} replacements",
                outcome.banks.len(),
                stream.len(),
                outcome.replacements
            );
        }
        Command::OclDemo { annotations, record } => {
            let rec = match &annotations {
                Some(path) => {
                    let text = std::fs::read_to_string(path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    let records = parse_records(&text)?;
                    let found = match &record {
                        Some(id) => records.into_iter().find(|r| &r.image_id == id),
                        None => records.into_iter().next(),
                    };
                    Some(found.with_context(|| format!("no matching record in {}", path.display()))?)
                }
                None => None,
            };
            let input = ocl::synthetic_ocl_input(&cfg, rec.as_ref())?;
            let outcome = ocl::run_ocl_demo(&cfg, &input, &out)?;
            print_report(&outcome.report);
        }
        Command::Bench => {
            let outcome = bench::run_bench(&cfg, &out)?;
            print_report(&outcome.report);
        }
        Command::InspectBank { path } => print_report(&inspect_bank(&load_bank(&path)?)),
        Command::ConvertAnnotations { input, output } => {
            let json = std::fs::read_to_string(&input)
                .with_context(|| format!("reading {}", input.display()))?;
            let records = coco_to_records(&json)?;
            std::fs::write(&output, format_records(&records))
                .with_context(|| format!("writing {}", output.display()))?;
            eprintln!("converted {} images", records.len());
        }
        Command::ShowConfig => print!("{}", cfg.to_toml_string()),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
