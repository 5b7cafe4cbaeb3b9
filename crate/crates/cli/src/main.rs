use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mmkd_core::audio::patches::PatchGrid;
use mmkd_core::audio::wav::{read_wav, write_wav};
use mmkd_core::audio::{duration_report, extract_patches, resolve_tts, synthesize_text, MelExtractor};
use mmkd_core::audio::features::write_spectrogram;
use mmkd_core::audio::AudioTable;
use mmkd_core::corpus::{compute_stats, make_splits};
use mmkd_core::distill::Student;
use mmkd_core::error::StageExt;
use mmkd_core::experiment::ablation::{ablation_suite, Suite};
use mmkd_core::experiment::pipeline::{prepare_teachers, run_split, TeacherStore};
use mmkd_core::experiment::search::{default_search_dir, search_student};
use mmkd_core::experiment::{run_experiment_at, ExperimentConfig, Resources, RunSummary};
use mmkd_core::metrics::MetricsReport;
use mmkd_core::pca::{pca_spectrograms, samples_from_table, write_pca_plot};
use mmkd_core::tables::{emit_tables, TableRow};
use mmkd_core::teacher::Modality;
use mmkd_core::text_teacher::evaluate_posts;
use mmkd_core::{Error, Result};

/// Multimodal multi-teacher distillation for short-text risk classification.
///
/// Artifacts go under the config's `output_dir`, resolved against
/// $MMKD_ARTIFACT_ROOT (default `./artifacts`).
#[derive(Parser)]
#[command(name = "mmkd", version)]
struct Cli {
    /// Experiment config (TOML). `builtin:toy` selects the bundled toy setup.
    #[arg(long, short, global = true, default_value = "builtin:toy")]
    config: String,
    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Load the dataset, print statistics and write the split plan.
    Ingest,
    /// Train (or reuse) one teacher on the first split.
    TrainTeacher {
        #[arg(long)]
        modality: Modality,
    },
    /// Render every post to a WAV file.
    SynthesizeAudio {
        /// Defaults to the config's audio backend.
        #[arg(long)]
        backend: Option<String>,
    },
    /// Log-mel spectrograms and patch counts for every post.
    Featurize {
        #[arg(long)]
        patch_size: Option<usize>,
    },
    /// Train or reuse the configured teachers and write their output cache.
    CacheTeacherOutputs,
    /// Distill the student on the first split.
    TrainStudent,
    /// Score a trained student, or run the whole pipeline with `--full`.
    Evaluate {
        #[arg(long)]
        full: bool,
    },
    /// Budgeted search over the student hyperparameter space.
    Search {
        #[arg(long, default_value_t = 50)]
        budget: usize,
    },
    /// Run an ablation suite: teacher-combos, plm-swap, fusion-modes or patch-sweep.
    Ablate {
        #[arg(long)]
        suite: Suite,
    },
    /// PCA scatter of spectrograms grouped by duration.
    VizPca {
        #[arg(long, default_value_t = 10)]
        n_per_group: usize,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = if cli.config == mmkd_core::experiment::BUILTIN_TOY {
        ExperimentConfig::toy(7)
    } else {
        ExperimentConfig::load(Path::new(&cli.config)).stage("config")?
    };
    if let Some(out) = &cli.out {
        cfg.output_dir = Some(out.clone());
    }
    let cfg = cfg.resolved();
    cfg.validate().stage("config")?;
    Ok(cfg)
}

fn json(value: &impl serde::Serialize) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)?)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn audio_table(cfg: &ExperimentConfig, res: &Resources, out: &Path) -> Result<AudioTable> {
    let tts = resolve_tts(&cfg.audio.tts, cfg.audio.tts_seed)?;
    let mel = MelExtractor::new();
    let mut table = AudioTable::new();
    for p in &res.dataset.posts {
        let cached = out.join("audio").join(format!("{}.wav", p.id));
        let wav = if cached.exists() { read_wav(&cached)? } else { synthesize_text(&p.text, tts.as_ref())? };
        table.insert(p.id.clone(), mel.log_mel(&wav));
    }
    Ok(table)
}

fn print_report(label: &str, r: &MetricsReport) {
    println!("{label}: acc {:.4}  F1m {:.4}  F1w {:.4}", r.accuracy, r.macro_f1, r.weighted_f1);
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let out = cfg.output_path();
    match &cli.cmd {
        Cmd::Ingest => {
            let res = Resources::load(&cfg)?;
            let stats = compute_stats(&res.dataset).stage("ingest")?;
            print!("{}", stats.render());
            let plan = make_splits(&res.dataset, cfg.seed).stage("splits")?;
            write(&out.join("ingest/stats.json"), &json(&stats)?)?;
            write(&out.join("splits.json"), &json(&plan)?)?;
            println!("{} posts, {} split(s) -> {}", res.dataset.posts.len(), plan.splits.len(), out.display());
        }
        Cmd::TrainTeacher { modality } => {
            let res = Resources::load(&cfg)?;
            let plan = make_splits(&res.dataset, cfg.seed).stage("splits")?;
            let store = TeacherStore::new(out.join("teachers"));
            let stage = format!("{modality}_teacher");
            let (_, summary) = store.obtain(*modality, &cfg, &res, &plan.splits[0]).stage(&stage)?;
            print_report(&format!("{modality} teacher (val)"), &summary.report);
            println!("checkpoint {}", store.dir(*modality, &summary.key).display());
        }
        Cmd::SynthesizeAudio { backend } => {
            let res = Resources::load(&cfg)?;
            let name = backend.clone().unwrap_or_else(|| cfg.audio.tts.clone());
            let tts = resolve_tts(&name, cfg.audio.tts_seed).stage("synthesize")?;
            let mut csv = String::from("id,class,seconds\n");
            for p in &res.dataset.posts {
                let wav = synthesize_text(&p.text, tts.as_ref()).stage("synthesize")?;
                write_wav(&out.join("audio").join(format!("{}.wav", p.id)), &wav)?;
                csv.push_str(&format!("{},{},{}\n", p.id, res.dataset.classes[p.label], wav.duration()));
            }
            write(&out.join("audio/durations.csv"), &csv)?;
            println!("{} clips -> {}", res.dataset.posts.len(), out.join("audio").display());
        }
        Cmd::Featurize { patch_size } => {
            let res = Resources::load(&cfg)?;
            let grid = PatchGrid::for_size(patch_size.unwrap_or(cfg.audio.patch_size));
            let table = audio_table(&cfg, &res, &out).stage("featurize")?;
            let mut csv = String::from("id,frames,patches\n");
            for (id, spec) in &table {
                let n = extract_patches(spec, grid).stage("featurize")?.len();
                write_spectrogram(&out.join("features").join(format!("{id}.spec")), spec)?;
                csv.push_str(&format!("{id},{},{n}\n", spec.frames()));
            }
            write(&out.join("features/patches.csv"), &csv)?;
            let report = duration_report(&res.dataset, &table);
            write(&out.join("features/durations.json"), &json(&report)?)?;
            print!("{}", report.render());
        }
        Cmd::CacheTeacherOutputs => {
            let res = Resources::load(&cfg)?;
            let plan = make_splits(&res.dataset, cfg.seed).stage("splits")?;
            let store = TeacherStore::new(out.join("teachers"));
            let (teachers, cache) = prepare_teachers(&cfg, &res, &plan.splits[0], &store)?;
            cache.save(&out.join("teacher_cache.json"))?;
            for (m, s) in &teachers {
                println!("{m}: checksum {}", s.checksum);
            }
            println!("{} cached posts -> {}", cache.posts.len(), out.join("teacher_cache.json").display());
        }
        Cmd::TrainStudent => {
            let res = Resources::load(&cfg)?;
            let plan = make_splits(&res.dataset, cfg.seed).stage("splits")?;
            let store = TeacherStore::new(out.join("teachers"));
            write(&out.join("resolved_config.toml"), &cfg.to_toml_string()?)?;
            let o = run_split(&cfg, &res, &plan.splits[0], &out, &store)?;
            print_report("student (train)", &o.train);
            print_report("student (val)", &o.val);
        }
        Cmd::Evaluate { full: true } => match run_experiment_at(&cfg, &out)? {
            RunSummary::Holdout(o) => print_report("student", o.headline()),
            RunSummary::CrossValidated(cv) => print_report("pooled", &cv.pooled),
        },
        Cmd::Evaluate { full: false } => {
            let res = Resources::load(&cfg)?;
            let plan = make_splits(&res.dataset, cfg.seed).stage("splits")?;
            let split = &plan.splits[0];
            let store = TeacherStore::new(out.join("teachers"));
            let (_, cache) = prepare_teachers(&cfg, &res, split, &store)?;
            let student = Student::load(&out.join("student")).stage("evaluate")?;
            let ids = if split.test.is_empty() { &split.val } else { &split.test };
            let report = evaluate_posts(&res.dataset.select(ids), &res.dataset.classes, |p| student.predict_post(p, &cache))
                .stage("evaluate")?;
            write(&out.join("evaluation.json"), &json(&report)?)?;
            let t = emit_tables(&[TableRow::new(cfg.name.clone(), report)], &out, "evaluation")?;
            print!("{}", t.text);
        }
        Cmd::Search { budget } => {
            let dir = cli.out.as_ref().map(|_| out.join("search")).unwrap_or_else(|| default_search_dir(&cfg));
            let o = search_student(&cfg, *budget, &dir)?;
            let failed = o.trials.iter().filter(|t| t.objective.is_none()).count();
            println!("{} trials ({failed} failed); best #{} F1w {:.4}", o.trials.len(), o.best.index, o.best.score());
            println!("best config -> {}", dir.join("best_config.toml").display());
        }
        Cmd::Ablate { suite } => {
            let dir = out.join("ablation").join(suite.name());
            let rows = ablation_suite(&cfg, *suite, &dir)?;
            if let Ok(t) = std::fs::read_to_string(dir.join("table.txt")) {
                print!("{t}");
            }
            for r in rows.iter().filter(|r| r.error.is_some()) {
                eprintln!("{} failed: {}", r.variant, r.error.as_deref().unwrap_or_default());
            }
        }
        Cmd::VizPca { n_per_group } => {
            let res = Resources::load(&cfg)?;
            let table = audio_table(&cfg, &res, &out).stage("viz-pca")?;
            let proj = pca_spectrograms(&samples_from_table(&res.dataset, &table), *n_per_group, cfg.seed).stage("viz-pca")?;
            let svg = out.join("pca/pca.svg");
            write_pca_plot(&proj, &svg).stage("viz-pca")?;
            for p in &proj {
                println!("{}: {} samples, explained variance {:.4e} / {:.4e}", p.bin, p.ids.len(), p.explained_variance[0], p.explained_variance[1]);
            }
            println!("plot -> {}", svg.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
