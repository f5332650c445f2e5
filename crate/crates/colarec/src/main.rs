//! Command-line driver: each subcommand runs one pipeline stage against a
//! run directory, reading settings from defaults, then an optional config
//! file, then flag overrides (flags win). Progress goes to standard error;
//! machine-readable output (recommendation lists, report tables) goes to
//! standard output and the run directory.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use colarec::config::{Precision, RunConfig};
use colarec::eval::SweepAxis;
use colarec::gid::GidStrategy;
use colarec::pipeline;
use colarec::synth::{generate, write_files, SynthConfig};

#[derive(Parser)]
#[command(
    name = "colarec",
    version,
    about = "Generative recommender pipeline: prepare data, pretrain embeddings, \
             build identifiers, train, recommend, and evaluate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every stage.
#[derive(Args)]
struct Common {
    /// Run directory holding the stage artifacts.
    #[arg(long, default_value = "run")]
    run: PathBuf,
    /// Config file with `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

/// Per-key flag overrides mirroring the config file schema; any flag given
/// here replaces the file value.
#[derive(Args)]
struct Overrides {
    #[arg(long, help_heading = "Config overrides")]
    seed: Option<u64>,
    #[arg(long, help_heading = "Config overrides", value_name = "f32|f64")]
    precision: Option<Precision>,
    #[arg(long, help_heading = "Config overrides")]
    min_degree: Option<usize>,
    #[arg(long, help_heading = "Config overrides")]
    cf_dim: Option<usize>,
    #[arg(long, help_heading = "Config overrides")]
    cf_layers: Option<usize>,
    #[arg(long, help_heading = "Config overrides")]
    cf_lr: Option<f64>,
    #[arg(long, help_heading = "Config overrides")]
    cf_weight_decay: Option<f64>,
    #[arg(long, help_heading = "Config overrides")]
    cf_epochs: Option<usize>,
    #[arg(long, help_heading = "Config overrides")]
    cf_batch_size: Option<usize>,
    #[arg(
        long,
        alias = "strategy",
        help_heading = "Config overrides",
        value_name = "collaborative|content|random|iad"
    )]
    gid_strategy: Option<GidStrategy>,
    #[arg(long, help_heading = "Config overrides")]
    gid_k: Option<usize>,
    #[arg(long, help_heading = "Config overrides")]
    gid_l: Option<usize>,
    #[arg(long, help_heading = "Config overrides")]
    model_dim: Option<usize>,
    #[arg(long, help_heading = "Config overrides")]
    n_heads: Option<usize>,
    #[arg(long, help_heading = "Config overrides")]
    enc_layers: Option<usize>,
    #[arg(long, help_heading = "Config overrides")]
    dec_layers: Option<usize>,
    #[arg(long, help_heading = "Config overrides")]
    alpha: Option<f64>,
    #[arg(long, help_heading = "Config overrides")]
    lr: Option<f64>,
    #[arg(long, help_heading = "Config overrides")]
    weight_decay: Option<f64>,
    #[arg(long, help_heading = "Config overrides")]
    batch_size: Option<usize>,
    #[arg(long, help_heading = "Config overrides")]
    epochs: Option<usize>,
    #[arg(long, help_heading = "Config overrides")]
    patience: Option<usize>,
    #[arg(long, help_heading = "Config overrides")]
    max_len: Option<usize>,
    #[arg(long, help_heading = "Config overrides")]
    items_per_user: Option<usize>,
    #[arg(long, help_heading = "Config overrides")]
    eval_beam: Option<usize>,
    #[arg(long, help_heading = "Config overrides", value_name = "true|false")]
    use_content: Option<bool>,
    #[arg(long, help_heading = "Config overrides", value_name = "true|false")]
    use_index: Option<bool>,
    #[arg(long, help_heading = "Config overrides", value_name = "true|false")]
    use_bpr: Option<bool>,
    #[arg(long, help_heading = "Config overrides", value_name = "true|false")]
    use_contrastive: Option<bool>,
    #[arg(long, help_heading = "Config overrides", value_name = "N,N,...")]
    cutoffs: Option<String>,
    #[arg(long, help_heading = "Config overrides")]
    beam: Option<usize>,
    #[arg(long, help_heading = "Config overrides")]
    repeats: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest raw records + content, k-core filter, split, write run/data/.
    Prepare {
        #[command(flatten)]
        common: Common,
        /// Raw interactions, one user_key<TAB>item_key per line.
        #[arg(long)]
        records: PathBuf,
        /// Raw item content, one item_key<TAB>k=v... per line.
        #[arg(long)]
        content: PathBuf,
    },
    /// Pretrain collaborative-filtering embeddings into run/cf.ckpt.
    PretrainCf {
        #[command(flatten)]
        common: Common,
    },
    /// Build generative identifiers into run/gids.tsv.
    BuildGid {
        #[command(flatten)]
        common: Common,
    },
    /// Train the recommender into run/model.ckpt.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Print top-n recommendations for one user as rank<TAB>item<TAB>score.
    Recommend {
        #[command(flatten)]
        common: Common,
        /// User key (or numeric index) to recommend for.
        #[arg(long)]
        user: String,
        /// Number of recommendations.
        #[arg(long, default_value_t = 10)]
        topn: usize,
    },
    /// Evaluate on the test split; print and write run/report.tsv.
    Evaluate {
        #[command(flatten)]
        common: Common,
    },
    /// Retrain and evaluate every variant along one axis; print and write
    /// run/report.tsv.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// gid-length | gid-k | gid-strategy | loss-ablation
        #[arg(long)]
        axis: SweepAxis,
        /// Override the swept values on the numeric axes, e.g. 1,2,3,4.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<usize>>,
    },
    /// Generate a synthetic planted-cluster dataset as raw input files.
    MakeSynthetic {
        /// Output directory for records.tsv and content.tsv.
        #[arg(long, default_value = "synthetic")]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        n_users: usize,
        #[arg(long, default_value_t = 40)]
        n_items: usize,
        #[arg(long, default_value_t = 4)]
        n_clusters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn apply_overrides(cfg: &mut RunConfig, o: &Overrides) -> Result<(), Box<dyn std::error::Error>> {
    macro_rules! set {
        ($($field:ident),+ $(,)?) => {
            $( if let Some(v) = o.$field.clone() { cfg.$field = v; } )+
        };
    }
    set!(
        seed, precision, min_degree, cf_dim, cf_layers, cf_lr, cf_weight_decay, cf_epochs,
        cf_batch_size, gid_strategy, gid_k, gid_l, model_dim, n_heads, enc_layers, dec_layers,
        alpha, lr, weight_decay, batch_size, epochs, patience, max_len, items_per_user,
        eval_beam, use_content, use_index, use_bpr, use_contrastive, beam, repeats,
    );
    if let Some(cutoffs) = &o.cutoffs {
        cfg.apply("cutoffs", cutoffs)?;
    }
    Ok(())
}

fn resolve_config(common: &Common) -> Result<RunConfig, Box<dyn std::error::Error>> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    apply_overrides(&mut cfg, &common.overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Cap the worker-thread pool when COLAREC_THREADS is set.
fn init_threads() -> Result<(), Box<dyn std::error::Error>> {
    if let Ok(value) = std::env::var("COLAREC_THREADS") {
        let threads: usize = value
            .parse()
            .map_err(|_| format!("COLAREC_THREADS must be a positive integer, got {value:?}"))?;
        if threads == 0 {
            return Err("COLAREC_THREADS must be a positive integer".into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| format!("thread pool: {e}"))?;
    }
    Ok(())
}

fn run() -> Result<(), Box<dyn std::error::Error>> {
    init_threads()?;
    match Cli::parse().command {
        Command::Prepare {
            common,
            records,
            content,
        } => {
            let cfg = resolve_config(&common)?;
            let s = pipeline::prepare(&common.run, &records, &content, &cfg)?;
            eprintln!(
                "prepared {} users x {} items, {} interactions ({} duplicates collapsed, {} edges below the {}-core)",
                s.users, s.items, s.interactions, s.duplicates_collapsed,
                s.edges_dropped_by_core, cfg.min_degree
            );
        }
        Command::PretrainCf { common } => {
            let cfg = resolve_config(&common)?;
            let s = pipeline::pretrain_cf(&common.run, &cfg)?;
            eprintln!(
                "pretrained embeddings for {} epochs (final loss {})",
                s.epochs,
                s.final_loss.map_or("n/a".to_string(), |l| format!("{l:.6}"))
            );
        }
        Command::BuildGid { common } => {
            let cfg = resolve_config(&common)?;
            let gids = pipeline::build_gid(&common.run, &cfg)?;
            eprintln!(
                "assigned {} identifiers (strategy {}, K={}, l={})",
                gids.n_items(),
                gids.strategy,
                gids.k,
                gids.l
            );
        }
        Command::Train { common } => {
            let cfg = resolve_config(&common)?;
            let s = pipeline::train_model(&common.run, &cfg)?;
            if let Some((epoch, batch)) = s.diverged {
                eprintln!(
                    "warning: loss went non-finite at epoch {epoch} batch {batch}; kept the last good parameters"
                );
            }
            eprintln!(
                "trained {} epochs (best epoch {}, val recall {}, final train loss {:.6})",
                s.epochs,
                s.best_epoch,
                s.best_val_recall
                    .map_or("n/a".to_string(), |r| format!("{r:.4}")),
                s.final_train_loss
            );
        }
        Command::Recommend { common, user, topn } => {
            let cfg = resolve_config(&common)?;
            let (user_idx, list) = pipeline::recommend(&common.run, &cfg, &user, topn)?;
            eprintln!("top {} for user {user_idx}:", list.entries.len());
            println!("rank\titem_index\tlog_score");
            for (rank, &(item, score)) in list.entries.iter().enumerate() {
                println!("{}\t{item}\t{score:.6}", rank + 1);
            }
        }
        Command::Evaluate { common } => {
            let cfg = resolve_config(&common)?;
            let report = pipeline::evaluate_run(&common.run, &cfg)?;
            eprintln!(
                "evaluated {} users ({} head / {} tail, {} skipped)",
                report.overall.users, report.head.users, report.tail.users, report.skipped_users
            );
            print!("{}", report.to_tsv());
        }
        Command::Sweep {
            common,
            axis,
            values,
        } => {
            let cfg = resolve_config(&common)?;
            let table = pipeline::sweep_run(&common.run, &cfg, axis, values.as_deref())?;
            eprintln!("swept {} configurations on axis {}", table.rows.len(), axis.as_label());
            print!("{}", table.to_tsv());
        }
        Command::MakeSynthetic {
            out,
            n_users,
            n_items,
            n_clusters,
            seed,
        } => {
            let scfg = SynthConfig {
                n_users,
                n_items,
                n_clusters,
                seed,
                ..SynthConfig::default()
            };
            let data = generate(&scfg)?;
            let (records, content) = write_files(&out, &data)?;
            eprintln!(
                "wrote {} interactions to {} and {} item descriptions to {}",
                data.edges.len(),
                records.display(),
                data.content.len(),
                content.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
