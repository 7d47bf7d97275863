//! `emcc`: enroll, match, revoke, evaluate, and inspect cancelable
//! fingerprint templates. Thin composition of the library; exit codes are
//! 0 (success / match), 1 (non-match), 2 (any error).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use emcc::config::{Config, ConfigError, KeyStore};
use emcc::eval::{
    protocol_scores, summarize_scores, synth_dataset, template_code_frequencies,
    match_probability_bound, write_report_files, SynthNoise, SynthParams,
};
use emcc::matcher::{feature_similarity, greedy_decision_score, score_matrix, ScoreMatrix};
use emcc::minutiae::{parse_minutiae_file, MinutiaeFormat, MinutiaeRecord};
use emcc::template::{
    deserialize_template, enroll, seed_identifier, serialize_template, CancelableTemplate,
    TemplateHeader,
};
use emcc::transform::TransformKey;

#[derive(Parser)]
#[command(
    name = "emcc",
    version,
    about = "Cancelable fingerprint templates: enroll, match, revoke, evaluate, stats"
)]
struct Cli {
    /// Settings file; defaults to $EMCC_CONFIG, then ./emcc.toml
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a protected template from a minutiae file
    Enroll {
        /// Minutiae file, plain text unless --iso
        minutiae: PathBuf,
        /// Template output path
        #[arg(short, long)]
        out: PathBuf,
        /// Enrollment seed; defaults to the key file's first entry
        #[arg(long)]
        seed: Option<u64>,
        /// Treat the input as an ISO 19794-2 binary record
        #[arg(long)]
        iso: bool,
    },
    /// Score query minutiae against an enrolled template
    Match {
        /// Query minutiae file
        query: PathBuf,
        /// Enrolled template file
        template: PathBuf,
        /// Seed override; must match the template's seed identifier
        #[arg(long)]
        seed: Option<u64>,
        /// Decision threshold override
        #[arg(long)]
        threshold: Option<f64>,
        /// Treat the query as an ISO 19794-2 binary record
        #[arg(long)]
        iso: bool,
    },
    /// Re-enroll under a new seed, retiring an existing template
    Revoke {
        /// Template being revoked
        template: PathBuf,
        /// Source minutiae for re-enrollment
        minutiae: PathBuf,
        /// Replacement seed; must differ from the enrolled one
        #[arg(long)]
        new_seed: u64,
        /// Output path for the replacement template
        #[arg(short, long)]
        out: PathBuf,
        /// Treat the minutiae file as an ISO 19794-2 binary record
        #[arg(long)]
        iso: bool,
    },
    /// Run the verification protocol and write score/metric files
    Evaluate {
        /// Dataset directory of <finger>_<impression>.min files
        #[arg(long, value_name = "DIR", conflicts_with = "synthetic")]
        dataset: Option<PathBuf>,
        /// Generate a synthetic dataset of this shape instead, e.g. 20x8
        #[arg(long, value_name = "FxI")]
        synthetic: Option<String>,
        /// Generator seed for --synthetic
        #[arg(long, default_value_t = 99)]
        data_seed: u64,
        /// Output directory for analysis files
        #[arg(short, long)]
        out: PathBuf,
        /// Transform seed; defaults to the key file's first entry
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Code distribution statistics over stored templates
    Stats {
        /// Template files
        #[arg(required = true)]
        templates: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let config = Config::load_or_default(cli.config.as_deref())?;
    match cli.command {
        Command::Enroll { minutiae, out, seed, iso } => {
            let record = read_record(&minutiae, iso)?;
            let seed = enrollment_seed(&config, seed)?;
            let key = config.transform_key(seed)?;
            let template = enroll(&record, &config.mcc, &key)
                .with_context(|| format!("enrolling {}", minutiae.display()))?;
            write_template(&template, &out)?;
            println!(
                "template written: {} features, {} payload bits",
                template.header.count,
                template.payload_bits()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Match { query, template, seed, threshold, iso } => {
            let enrolled = read_template(&template)?;
            let record = read_record(&query, iso)?;
            let seed = template_seed(&config, seed, &enrolled.header)?;
            let key = key_from_header(seed, &enrolled.header)?;
            let probe = enroll(&record, &config.mcc, &key)
                .with_context(|| format!("transforming {}", query.display()))?;
            let matrix = score_matrix(&probe, &enrolled)?;
            let decision = greedy_decision_score(&matrix, &config.greedy);
            let threshold = threshold.unwrap_or(config.matching.threshold);
            println!("score: {:.4}", decision.score);
            if decision.score >= threshold {
                println!("decision: match (threshold {threshold})");
                Ok(ExitCode::SUCCESS)
            } else {
                println!("decision: non-match (threshold {threshold})");
                Ok(ExitCode::from(1))
            }
        }
        Command::Revoke { template, minutiae, new_seed, out, iso } => {
            let old = read_template(&template)?;
            if seed_identifier(new_seed) == old.header.seed_id {
                bail!("new seed equals the seed of the template being revoked");
            }
            let record = read_record(&minutiae, iso)?;
            let key = key_from_header(new_seed, &old.header)?;
            let new = enroll(&record, &config.mcc, &key)
                .with_context(|| format!("re-enrolling {}", minutiae.display()))?;
            write_template(&new, &out)?;
            let cross = cross_key_score(&old, &new, &config);
            println!(
                "replacement written: seed id {:#018x} -> {:#018x}",
                old.header.seed_id, new.header.seed_id
            );
            println!("revocability: old-vs-new score {cross:.4} (imposter-level expected)");
            Ok(ExitCode::SUCCESS)
        }
        Command::Evaluate { dataset, synthetic, data_seed, out, seed } => {
            let dataset = match (dataset, synthetic) {
                (Some(dir), None) => dir,
                (None, Some(shape)) => {
                    let (fingers, impressions) = parse_shape(&shape)?;
                    let dir = out.join("dataset");
                    synth_dataset(
                        &dir,
                        &SynthParams {
                            fingers,
                            impressions,
                            noise: SynthNoise::default(),
                            seed: data_seed,
                        },
                    )?;
                    println!("synthetic dataset: {fingers} fingers x {impressions} impressions");
                    dir
                }
                (None, None) => bail!("pass either --dataset or --synthetic"),
                (Some(_), Some(_)) => unreachable!("clap conflict"),
            };
            let seed = enrollment_seed(&config, seed)?;
            let key = config.transform_key(seed)?;
            let scores = protocol_scores(&dataset, &config.mcc, &key, &config.greedy)?;
            println!("genuine comparisons: {}", scores.genuine.len());
            println!("imposter comparisons: {}", scores.imposter.len());
            let report =
                summarize_scores(scores, config.eval.det_grid, config.eval.histogram_bins)?;
            std::fs::create_dir_all(&out)
                .with_context(|| format!("creating {}", out.display()))?;
            write_report_files(&report, &out, &config.echo())?;
            println!("EER: {:.2}%", report.eer);
            println!("FMR1000: {:.2}%", report.fmr1000);
            println!("analysis files written to {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Stats { templates } => {
            let mut loaded = Vec::new();
            for path in &templates {
                loaded.push(read_template(path)?);
            }
            let units = loaded[0].header.units;
            let features: u64 = loaded.iter().map(|t| u64::from(t.header.count)).sum();
            let freq = template_code_frequencies(&loaded).frequencies();
            println!("templates: {}", loaded.len());
            println!("features: {features}");
            println!("units per feature: {units}");
            println!(
                "code frequencies: 00 {:.4}  01 {:.4}  10 {:.4}  11 {:.4}",
                freq[0], freq[1], freq[2], freq[3]
            );
            let terms: Vec<(f64, u32)> = freq
                .iter()
                .filter(|&&f| f > 0.0)
                .map(|&f| (f, (f * f64::from(units)).round() as u32))
                .collect();
            println!(
                "chance full-agreement bound per feature: {:.3e}",
                match_probability_bound(&terms)
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn read_record(path: &Path, iso: bool) -> Result<MinutiaeRecord> {
    let format = if iso { MinutiaeFormat::IsoBinary } else { MinutiaeFormat::PlainText };
    Ok(parse_minutiae_file(path, format)?)
}

fn read_template(path: &Path) -> Result<CancelableTemplate> {
    let bytes =
        std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    deserialize_template(&bytes).with_context(|| format!("decoding {}", path.display()))
}

fn write_template(template: &CancelableTemplate, out: &Path) -> Result<()> {
    std::fs::write(out, serialize_template(template))
        .with_context(|| format!("writing {}", out.display()))
}

/// Seed for a fresh enrollment: explicit flag, else the key file's first
/// entry.
fn enrollment_seed(config: &Config, flag: Option<u64>) -> Result<u64> {
    if let Some(seed) = flag {
        return Ok(seed);
    }
    let file = config.key.file.as_ref().ok_or(ConfigError::NoKeySource)?;
    Ok(KeyStore::load(file)?.primary())
}

/// Seed for operating on an existing template: an explicit flag must agree
/// with the header's identifier; otherwise the key file is searched for it.
fn template_seed(config: &Config, flag: Option<u64>, header: &TemplateHeader) -> Result<u64> {
    if let Some(seed) = flag {
        if seed_identifier(seed) != header.seed_id {
            bail!("given seed does not match the template's seed identifier");
        }
        return Ok(seed);
    }
    let file = config.key.file.as_ref().ok_or(ConfigError::NoKeySource)?;
    Ok(KeyStore::load(file)?.resolve(header.seed_id)?)
}

/// Transform parameters always come from the template header, so matching
/// and revocation work even when the settings file has moved on.
fn key_from_header(seed: u64, header: &TemplateHeader) -> Result<TransformKey> {
    Ok(TransformKey::new(seed, header.p, header.tau(), header.depth)?)
}

/// Decision score between templates under different seeds. The regular
/// matcher refuses cross-key comparisons, which is exactly what a
/// revocability probe needs to bypass.
fn cross_key_score(a: &CancelableTemplate, b: &CancelableTemplate, config: &Config) -> f64 {
    let mut data = Vec::with_capacity(a.features.len() * b.features.len());
    for fa in &a.features {
        for fb in &b.features {
            data.push(feature_similarity(fa, fb).expect("matching unit counts"));
        }
    }
    let matrix = ScoreMatrix::from_rows(a.features.len(), b.features.len(), data);
    greedy_decision_score(&matrix, &config.greedy).score
}

fn parse_shape(shape: &str) -> Result<(usize, usize)> {
    let lower = shape.to_ascii_lowercase();
    let (f, i) = lower
        .split_once('x')
        .with_context(|| format!("expected FxI, e.g. 20x8, got {shape:?}"))?;
    let fingers = f.trim().parse().with_context(|| format!("bad finger count {f:?}"))?;
    let impressions = i.trim().parse().with_context(|| format!("bad impression count {i:?}"))?;
    Ok((fingers, impressions))
}
