mod auxgen;
mod config;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use config::LabConfig;
use std::path::{Path, PathBuf};
use vdcnn_lab::arch::{
    build_network, catalog_names, catalog_spec, derive_shapes, emit_spec, parse_spec, validate,
    ArchitectureSpec, NetFamily,
};
use vdcnn_lab::archive::{Archive, Record};
use vdcnn_lab::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use vdcnn_lab::corpus::{synth_corpus, CONDITIONS};
use vdcnn_lab::decoder::{fuse, posteriors_to_loglik, score_output, viterbi, DecodeGraph, FusionWeights};
use vdcnn_lab::frontend::{extract, UtteranceFeatures};
use vdcnn_lab::joint::{build_joint, AuxKind, AuxSource, JointSpec};
use vdcnn_lab::lstmp::{train_tbptt, LstmpStack, SgdOpts};
use vdcnn_lab::report::{ConditionCell, RunReport};
use vdcnn_lab::train::{
    evaluate_conditions, render_decode_results, train_feedforward, train_joint, DecodeResult,
    EvalUtterance, FrameDataset,
};

#[derive(Parser)]
#[command(
    name = "vdcnn-lab",
    about = "Desk-scale acoustic modeling lab: synthetic noisy-speech corpus, very deep CNN and LSTMP training, joint decoding"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize the toy corpus into a run directory named by the config hash.
    Synth {
        /// key=value config file; defaults apply for missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override single keys, e.g. --set seed=7 (repeatable).
        #[arg(long = "set")]
        sets: Vec<String>,
        /// Parent directory for run directories.
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Extract FBANK features (and optional auxiliary archives) for a run.
    Features {
        #[arg(long)]
        run: PathBuf,
        /// Comma-separated auxiliary archives to generate: mfcc,fmllr,ivector.
        #[arg(long)]
        aux: Option<String>,
        #[arg(long = "set")]
        sets: Vec<String>,
    },
    /// Train an acoustic model and evaluate it on the condition grid.
    Train {
        #[arg(long)]
        run: PathBuf,
        /// Catalog architecture name, or "lstmp" for the recurrent model.
        #[arg(long, conflicts_with = "spec")]
        arch: Option<String>,
        /// Architecture spec file instead of a catalog name.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Auxiliary feature kind for joint training (mfcc, fmllr, ivector,
        /// fmllr+ivector); for --arch lstmp, "ivector" enables
        /// speaker-aware inputs.
        #[arg(long)]
        aux_kind: Option<String>,
        /// Build even when the spec violates the very-deep-CNN rules.
        #[arg(long)]
        force: bool,
        #[arg(long = "set")]
        sets: Vec<String>,
    },
    /// Evaluate a checkpoint on the run's test conditions.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Auxiliary feature kind for joint checkpoints.
        #[arg(long)]
        aux_kind: Option<String>,
        #[arg(long = "set")]
        sets: Vec<String>,
    },
    /// Decode with two systems fused at the state level.
    DecodeJoint {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        ckpt1: PathBuf,
        #[arg(long)]
        ckpt2: PathBuf,
        #[arg(long, default_value_t = 0.6)]
        w1: f64,
        #[arg(long, default_value_t = 0.4)]
        w2: f64,
        /// Aux kind for system 1 when it is a joint model.
        #[arg(long)]
        aux_kind1: Option<String>,
        /// Aux kind for system 2 when it is a joint model.
        #[arg(long)]
        aux_kind2: Option<String>,
        #[arg(long = "set")]
        sets: Vec<String>,
    },
    /// Print the layer-by-layer shape trace of an architecture.
    Shapes {
        /// Catalog name or path to a spec file.
        target: String,
        #[arg(long, default_value_t = 16)]
        states: usize,
    },
    /// Finite-difference checks over the differentiable primitives.
    Gradcheck {
        /// One of conv, pool, fc, relu, sigmoid, softmax, chain, lstmp,
        /// joint, or "all".
        #[arg(default_value = "all")]
        scope: String,
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Emit a catalog architecture as a spec file.
    ExportSpec {
        arch: String,
        #[arg(long, default_value_t = 16)]
        states: usize,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Synth { config, sets, out } => cmd_synth(config.as_deref(), &sets, &out),
        Cmd::Features { run, aux, sets } => cmd_features(&run, aux.as_deref(), &sets),
        Cmd::Train {
            run,
            arch,
            spec,
            aux_kind,
            force,
            sets,
        } => cmd_train(&run, arch.as_deref(), spec.as_deref(), aux_kind.as_deref(), force, &sets),
        Cmd::Eval {
            run,
            ckpt,
            aux_kind,
            sets,
        } => cmd_eval(&run, &ckpt, aux_kind.as_deref(), &sets),
        Cmd::DecodeJoint {
            run,
            ckpt1,
            ckpt2,
            w1,
            w2,
            aux_kind1,
            aux_kind2,
            sets,
        } => cmd_decode_joint(
            &run,
            &ckpt1,
            &ckpt2,
            w1,
            w2,
            aux_kind1.as_deref(),
            aux_kind2.as_deref(),
            &sets,
        ),
        Cmd::Shapes { target, states } => cmd_shapes(&target, states),
        Cmd::Gradcheck {
            scope,
            instances,
            tolerance,
        } => cmd_gradcheck(&scope, instances, tolerance),
        Cmd::ExportSpec {
            arch,
            states,
            output,
        } => cmd_export_spec(&arch, states, output.as_deref()),
    }
}

fn run_config(run: &Path, sets: &[String]) -> Result<LabConfig> {
    let path = run.join("config.txt");
    if !path.exists() {
        bail!(
            "{} has no config.txt; run `vdcnn-lab synth` first",
            run.display()
        );
    }
    LabConfig::load(Some(&path), sets)
}

fn cmd_synth(config: Option<&Path>, sets: &[String], out: &Path) -> Result<()> {
    let cfg = LabConfig::load(config, sets)?;
    let corpus_cfg = cfg.corpus()?;
    let hash = cfg.hash();
    let dir = out.join(format!("run-{hash}"));
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.txt"), cfg.canonical_text())?;

    let corpus = synth_corpus(&corpus_cfg).map_err(|e| anyhow!(e))?;
    corpus.train.save(&dir.join("waves-train.arc"))?;
    for (i, cond) in CONDITIONS.iter().enumerate() {
        corpus.test[i].save(&dir.join(format!("waves-test-{cond}.arc")))?;
    }
    println!(
        "synthesized {} train and 4x{} test utterances into {}",
        corpus.train.records.len(),
        corpus.test[0].records.len(),
        dir.display()
    );
    Ok(())
}

fn splits() -> Vec<String> {
    let mut v = vec!["train".to_string()];
    v.extend(CONDITIONS.iter().map(|c| format!("test-{c}")));
    v
}

fn cmd_features(run: &Path, aux: Option<&str>, sets: &[String]) -> Result<()> {
    let cfg = run_config(run, sets)?;
    let frontend = cfg.frontend()?;
    let seed = cfg.u64("seed")?;

    let aux_kinds: Vec<&str> = aux
        .map(|a| a.split(',').map(str::trim).filter(|s| !s.is_empty()).collect())
        .unwrap_or_default();
    for kind in &aux_kinds {
        if !["mfcc", "fmllr", "ivector"].contains(kind) {
            bail!("unknown aux archive kind '{kind}' (expected mfcc, fmllr or ivector)");
        }
    }

    for split in splits() {
        let waves = Archive::load(&run.join(format!("waves-{split}.arc")))
            .with_context(|| format!("loading waves for split {split}"))?;
        let mut feats = Archive::new("fbank");
        for rec in &waves.records {
            let features = extract(&rec.id, &rec.data, rec.labels.clone(), &frontend)
                .map_err(|e| anyhow!("{}: {e}", rec.id))?;
            feats.records.push(Record::from_features(&features));
        }
        feats.save(&run.join(format!("feats-{split}.arc")))?;
        println!("features: {split} ({} utterances)", feats.records.len());

        for kind in &aux_kinds {
            let arc = match *kind {
                "mfcc" => auxgen::mfcc_archive(&waves, &frontend)?,
                "fmllr" => auxgen::fmllr_archive(&waves, &frontend, seed)?,
                "ivector" => auxgen::ivector_archive(&waves, seed, 100)?,
                _ => unreachable!(),
            };
            arc.save(&run.join(format!("aux-{kind}-{split}.arc")))?;
        }
    }
    if !aux_kinds.is_empty() {
        println!("aux archives: {}", aux_kinds.join(", "));
    }
    Ok(())
}

fn load_features(run: &Path, split: &str) -> Result<Vec<UtteranceFeatures>> {
    let arc = Archive::load(&run.join(format!("feats-{split}.arc")))
        .with_context(|| format!("loading features for split {split}; run `features` first"))?;
    arc.records
        .iter()
        .map(|r| r.to_features().map_err(|e| anyhow!(e)))
        .collect()
}

fn aux_source(run: &Path, split: &str, kind: AuxKind, context: usize) -> Result<AuxSource> {
    let load = |name: &str| -> Result<Archive> {
        Archive::load(&run.join(format!("aux-{name}-{split}.arc"))).with_context(|| {
            format!("loading aux-{name}-{split}.arc; run `features --aux {name}` first")
        })
    };
    let (frame_archive, utt_archive) = match kind {
        AuxKind::Mfcc => (Some(load("mfcc")?), None),
        AuxKind::Fmllr => (Some(load("fmllr")?), None),
        AuxKind::Ivector => (None, Some(load("ivector")?)),
        AuxKind::FmllrIvector => (Some(load("fmllr")?), Some(load("ivector")?)),
    };
    Ok(AuxSource {
        kind,
        context,
        frame_archive,
        utt_archive,
    })
}

fn aux_vectors(
    source: &AuxSource,
    utts: &[UtteranceFeatures],
) -> Result<Vec<Vec<Vec<f64>>>> {
    utts.iter()
        .map(|u| {
            source
                .vectors_for(&u.id, u.frames())
                .map_err(|e| anyhow!(e))
        })
        .collect()
}

fn resolve_arch(
    run_cfg: &LabConfig,
    arch: Option<&str>,
    spec: Option<&Path>,
    force: bool,
) -> Result<ArchitectureSpec> {
    let n_states = run_cfg.usize("n_classes")?;
    let spec = match (arch, spec) {
        (Some(name), None) => catalog_spec(name, n_states)
            .ok_or_else(|| anyhow!("unknown architecture '{name}'; known: {}", catalog_names().join(", ")))?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)?;
            let parsed = parse_spec(&text).map_err(|e| anyhow!(e))?;
            if parsed.arch.n_states != n_states {
                bail!(
                    "spec file declares {} states but the corpus has {n_states} classes",
                    parsed.arch.n_states
                );
            }
            parsed.arch
        }
        _ => bail!("exactly one of --arch or --spec is required"),
    };
    let violations = validate(&spec);
    if !violations.is_empty() && spec.family == NetFamily::Vdcnn && !force {
        for v in &violations {
            eprintln!("violation: {v}");
        }
        bail!(
            "spec '{}' violates {} structural rule(s); use --force to build anyway",
            spec.name,
            violations.len()
        );
    }
    Ok(spec)
}

fn check_input_compat(spec: &ArchitectureSpec, utts: &[UtteranceFeatures]) -> Result<()> {
    let (maps, _, f) = spec.input_shape;
    if let Some(u) = utts.first() {
        if u.n_maps() != maps || u.dims() != f {
            bail!(
                "architecture '{}' expects {maps} map(s) x {f} mels but features are {} map(s) x {} mels; \
                 adjust map_mode/n_mels in the config and re-run `features`",
                spec.name,
                u.n_maps(),
                u.dims()
            );
        }
    }
    Ok(())
}

fn estimate_graph(run: &Path, n_states: usize) -> Result<DecodeGraph> {
    let train = load_features(run, "train")?;
    let seqs: Vec<&[u32]> = train
        .iter()
        .filter_map(|u| u.frame_labels.as_deref())
        .collect();
    DecodeGraph::estimate(n_states, &seqs).map_err(|e| anyhow!(e))
}

/// Builds the per-condition evaluation sets with whatever side inputs the
/// checkpoint needs.
fn eval_sets(
    run: &Path,
    cfg: &LabConfig,
    ckpt: &Checkpoint,
    aux_kind: Option<&str>,
) -> Result<Vec<(char, Vec<EvalUtterance>)>> {
    let context = cfg.usize("context")?;
    let mut sets = Vec::new();
    for cond in CONDITIONS {
        let split = format!("test-{cond}");
        let utts = load_features(run, &split)?;
        let mut rows = Vec::with_capacity(utts.len());
        match ckpt {
            Checkpoint::Plain(_) => {
                for features in utts {
                    rows.push(EvalUtterance {
                        features,
                        aux: None,
                        ivector: None,
                    });
                }
            }
            Checkpoint::Joint(net) => {
                let kind = AuxKind::parse(aux_kind.unwrap_or("fmllr+ivector"))
                    .map_err(|e| anyhow!(e))?;
                let source = aux_source(run, &split, kind, context)?;
                let dim = source.aux_dim().map_err(|e| anyhow!(e))?;
                if dim != net.spec.aux_dim {
                    bail!(
                        "checkpoint expects {}-dim aux but kind '{}' provides {dim}; pass the right --aux-kind",
                        net.spec.aux_dim,
                        kind.name()
                    );
                }
                let vectors = aux_vectors(&source, &utts)?;
                for (features, aux) in utts.into_iter().zip(vectors) {
                    rows.push(EvalUtterance {
                        features,
                        aux: Some(aux),
                        ivector: None,
                    });
                }
            }
            Checkpoint::Lstmp { stack, .. } => {
                let needs_ivector = stack.input_dim() != cfg.usize("n_mels")?;
                let ivectors = if needs_ivector {
                    let source = aux_source(run, &split, AuxKind::Ivector, context)?;
                    Some(
                        utts.iter()
                            .map(|u| source.vectors_for(&u.id, 1).map(|mut v| v.remove(0)))
                            .collect::<vdcnn_lab::Result<Vec<_>>>()
                            .map_err(|e| anyhow!(e))?,
                    )
                } else {
                    None
                };
                for (i, features) in utts.into_iter().enumerate() {
                    rows.push(EvalUtterance {
                        features,
                        aux: None,
                        ivector: ivectors.as_ref().map(|v| v[i].clone()),
                    });
                }
            }
        }
        sets.push((cond, rows));
    }
    Ok(sets)
}

fn write_report(
    run: &Path,
    system: &str,
    cells: [ConditionCell; 4],
    cfg: &LabConfig,
    rows: &[DecodeResult],
) -> Result<RunReport> {
    let mut report = RunReport::new(system, cfg.hash(), cfg.u64("seed")?);
    report.cells = cells;
    let safe: String = system
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '-' { c } else { '-' })
        .collect();
    std::fs::write(run.join(format!("report-{safe}.txt")), report.render())?;
    std::fs::write(
        run.join(format!("decode-{safe}.tsv")),
        render_decode_results(rows),
    )?;
    print!("{}", report.render());
    Ok(report)
}

fn evaluate_checkpoint(
    run: &Path,
    cfg: &LabConfig,
    ckpt: &Checkpoint,
    aux_kind: Option<&str>,
    system: &str,
) -> Result<RunReport> {
    let graph = estimate_graph(run, ckpt.n_states())?;
    let sets = eval_sets(run, cfg, ckpt, aux_kind)?;
    let scale = cfg.f64("acoustic_scale")?;
    let (cells, rows) =
        evaluate_conditions(&ckpt.scorer(), &sets, &graph, scale).map_err(|e| anyhow!(e))?;
    write_report(run, system, cells, cfg, &rows)
}

fn cmd_train(
    run: &Path,
    arch: Option<&str>,
    spec: Option<&Path>,
    aux_kind: Option<&str>,
    force: bool,
    sets: &[String],
) -> Result<()> {
    let cfg = run_config(run, sets)?;
    let n_states = cfg.usize("n_classes")?;
    let seed = cfg.u64("seed")?;
    let train_utts = load_features(run, "train")?;

    if arch == Some("lstmp") {
        return train_lstmp(run, &cfg, aux_kind, train_utts);
    }

    let spec = resolve_arch(&cfg, arch, spec, force)?;
    check_input_compat(&spec, &train_utts)?;
    let context = spec.input_shape.1;
    let train_cfg = cfg.train()?;

    let (ckpt, system) = match aux_kind {
        None => {
            let mut net = build_network(&spec, seed).map_err(|e| anyhow!(e))?;
            let data = FrameDataset::new(train_utts, None, context).map_err(|e| anyhow!(e))?;
            let log = train_feedforward(&mut net, &data, &train_cfg).map_err(|e| anyhow!(e))?;
            print_train_log(&log);
            (Checkpoint::Plain(net), spec.name.clone())
        }
        Some(kind_str) => {
            let kind = AuxKind::parse(kind_str).map_err(|e| anyhow!(e))?;
            let source = aux_source(run, "train", kind, cfg.usize("context")?)?;
            let aux_dim = source.aux_dim().map_err(|e| anyhow!(e))?;
            let vectors = aux_vectors(&source, &train_utts)?;
            let jspec = JointSpec::new(spec.clone(), aux_dim, cfg.usize("aux_hidden")?);
            let mut net = build_joint(&jspec, seed).map_err(|e| anyhow!(e))?;
            let data = FrameDataset::new(train_utts, Some(vectors), context)
                .map_err(|e| anyhow!(e))?;
            let log = train_joint(&mut net, &data, &train_cfg).map_err(|e| anyhow!(e))?;
            print_train_log(&log);
            (
                Checkpoint::Joint(net),
                format!("{}-aux-{}", spec.name, kind.name()),
            )
        }
    };

    let safe: String = system
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '-' { c } else { '-' })
        .collect();
    let ckpt_path = run.join(format!("{safe}.ckpt"));
    save_checkpoint(&ckpt_path, &ckpt)?;
    println!("checkpoint: {}", ckpt_path.display());
    let _ = n_states;
    evaluate_checkpoint(run, &cfg, &ckpt, aux_kind, &system)?;
    Ok(())
}

fn train_lstmp(
    run: &Path,
    cfg: &LabConfig,
    aux_kind: Option<&str>,
    train_utts: Vec<UtteranceFeatures>,
) -> Result<()> {
    let n_states = cfg.usize("n_classes")?;
    let n_mels = cfg.usize("n_mels")?;
    let seed = cfg.u64("seed")?;
    let speaker_aware = match aux_kind {
        None => false,
        Some("ivector") | Some("ivec") => true,
        Some(other) => bail!("lstmp supports only --aux-kind ivector, got '{other}'"),
    };

    let ivectors = if speaker_aware {
        let source = aux_source(run, "train", AuxKind::Ivector, cfg.usize("context")?)?;
        Some(
            train_utts
                .iter()
                .map(|u| source.vectors_for(&u.id, 1).map(|mut v| v.remove(0)))
                .collect::<vdcnn_lab::Result<Vec<_>>>()
                .map_err(|e| anyhow!(e))?,
        )
    } else {
        None
    };

    // Static map rows, optionally with the i-vector appended per frame.
    let mut corpus = Vec::with_capacity(train_utts.len());
    for (i, u) in train_utts.iter().enumerate() {
        let labels = u
            .frame_labels
            .clone()
            .ok_or_else(|| anyhow!("{} has no labels", u.id))?;
        let (frames, dims) = (u.frames(), u.dims());
        let mut matrix = vdcnn_lab::tensor::Tensor::zeros(&[frames, dims]);
        matrix
            .data_mut()
            .copy_from_slice(&u.maps.data()[..frames * dims]);
        let matrix = match &ivectors {
            Some(iv) => {
                vdcnn_lab::lstmp::speaker_aware_input(&matrix, &iv[i]).map_err(|e| anyhow!(e))?
            }
            None => matrix,
        };
        corpus.push((matrix, labels));
    }

    let input_dim = if speaker_aware { n_mels + 100 } else { n_mels };
    let mut stack = LstmpStack::new(
        input_dim,
        cfg.usize("lstmp_cell")?,
        cfg.usize("lstmp_proj")?,
        cfg.usize("lstmp_layers")?,
        n_states,
        cfg.bool("lstmp_peepholes")?,
        seed,
    )
    .map_err(|e| anyhow!(e))?;
    let bptt = cfg.bptt()?;
    let sgd = SgdOpts {
        learning_rate: cfg.f64("lstmp_lr")?,
        momentum: cfg.f64("lstmp_momentum")?,
        epochs: cfg.usize("lstmp_epochs")?,
    };
    let stats = train_tbptt(&mut stack, &corpus, &bptt, &sgd).map_err(|e| anyhow!(e))?;
    for (i, ce) in stats.epoch_ce.iter().enumerate() {
        println!("epoch {i:>2}  train_ce {ce:.6}");
    }
    println!("max applied |grad| {:.6}", stats.max_applied_grad_abs);

    let system = if speaker_aware { "lstmp-ivec" } else { "lstmp" };
    let ckpt = Checkpoint::Lstmp {
        stack,
        output_delay: bptt.output_delay,
    };
    let ckpt_path = run.join(format!("{system}.ckpt"));
    save_checkpoint(&ckpt_path, &ckpt)?;
    println!("checkpoint: {}", ckpt_path.display());
    evaluate_checkpoint(run, cfg, &ckpt, aux_kind, system)?;
    Ok(())
}

fn print_train_log(log: &vdcnn_lab::train::TrainLog) {
    println!("initial train_ce {:.6}", log.initial_train_ce);
    for (i, running) in log.epoch_running_ce.iter().enumerate() {
        match log.epoch_heldout_ce.get(i) {
            Some(held) => {
                println!("epoch {:>2}  running_ce {running:.6}  heldout_ce {held:.6}", i + 1)
            }
            None => println!("epoch {:>2}  running_ce {running:.6}", i + 1),
        }
    }
    println!("final train_ce {:.6}", log.final_train_ce);
}

fn cmd_eval(run: &Path, ckpt: &Path, aux_kind: Option<&str>, sets: &[String]) -> Result<()> {
    let cfg = run_config(run, sets)?;
    let model = load_checkpoint(ckpt).map_err(|e| anyhow!(e))?;
    let system = format!(
        "eval-{}",
        ckpt.file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| model.kind_name().to_string())
    );
    evaluate_checkpoint(run, &cfg, &model, aux_kind, &system)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_decode_joint(
    run: &Path,
    ckpt1: &Path,
    ckpt2: &Path,
    w1: f64,
    w2: f64,
    aux_kind1: Option<&str>,
    aux_kind2: Option<&str>,
    sets: &[String],
) -> Result<()> {
    let cfg = run_config(run, sets)?;
    let m1 = load_checkpoint(ckpt1).map_err(|e| anyhow!(e))?;
    let m2 = load_checkpoint(ckpt2).map_err(|e| anyhow!(e))?;
    if m1.n_states() != m2.n_states() {
        bail!(
            "state-inventory mismatch: {} vs {} states; joint decoding requires the same state set",
            m1.n_states(),
            m2.n_states()
        );
    }
    let weights = FusionWeights::new(w1, w2).map_err(|e| anyhow!(e))?;
    let graph = estimate_graph(run, m1.n_states())?;
    let scale = cfg.f64("acoustic_scale")?;

    let sets1 = eval_sets(run, &cfg, &m1, aux_kind1)?;
    let sets2 = eval_sets(run, &cfg, &m2, aux_kind2)?;

    let (cells1, rows1) =
        evaluate_conditions(&m1.scorer(), &sets1, &graph, scale).map_err(|e| anyhow!(e))?;
    let (cells2, rows2) =
        evaluate_conditions(&m2.scorer(), &sets2, &graph, scale).map_err(|e| anyhow!(e))?;

    // Fused pass, utterances aligned across the two systems.
    let mut cells = [ConditionCell::default(); 4];
    let mut rows = Vec::new();
    let scorer1 = m1.scorer();
    let scorer2 = m2.scorer();
    for ((cond, utts1), (_, utts2)) in sets1.iter().zip(&sets2) {
        let idx = CONDITIONS.iter().position(|c| c == cond).unwrap();
        for (u1, u2) in utts1.iter().zip(utts2) {
            let labels = u1
                .features
                .frame_labels
                .as_ref()
                .ok_or_else(|| anyhow!("{} has no labels", u1.features.id))?;
            let p1 = scorer1.score_utterance(u1).map_err(|e| anyhow!(e))?;
            let p2 = scorer2.score_utterance(u2).map_err(|e| anyhow!(e))?;
            let l1 = posteriors_to_loglik(&p1, &graph.log_priors, scale).map_err(|e| anyhow!(e))?;
            let l2 = posteriors_to_loglik(&p2, &graph.log_priors, scale).map_err(|e| anyhow!(e))?;
            let fused = fuse(&l1, &l2, weights).map_err(|e| anyhow!(e))?;
            let (path, _) = viterbi(&fused, &graph).map_err(|e| anyhow!(e))?;
            let report = score_output(&path, labels, &graph).map_err(|e| anyhow!(e))?;
            let cell = &mut cells[idx];
            cell.utterances += 1;
            cell.frames += labels.len();
            cell.correct_frames +=
                (report.frame_accuracy * labels.len() as f64).round() as usize;
            cell.edits += report.edits;
            cell.ref_words += report.ref_words;
            rows.push(DecodeResult {
                utt_id: u1.features.id.clone(),
                condition: *cond,
                wer: report.wer,
                frame_accuracy: report.frame_accuracy,
                path,
            });
        }
    }

    println!("== system 1 ({}) ==", m1.kind_name());
    write_report(run, "joint-system1", cells1, &cfg, &rows1)?;
    println!("== system 2 ({}) ==", m2.kind_name());
    write_report(run, "joint-system2", cells2, &cfg, &rows2)?;
    println!("== fusion (w1={w1}, w2={w2}) ==");
    write_report(run, "joint-fused", cells, &cfg, &rows)?;
    Ok(())
}

fn cmd_shapes(target: &str, states: usize) -> Result<()> {
    let (spec, from_file) = if Path::new(target).exists() {
        let text = std::fs::read_to_string(target)?;
        (parse_spec(&text).map_err(|e| anyhow!(e))?.arch, true)
    } else {
        (
            catalog_spec(target, states).ok_or_else(|| {
                anyhow!(
                    "'{target}' is neither a file nor a catalog name; known: {}",
                    catalog_names().join(", ")
                )
            })?,
            false,
        )
    };
    let trace = derive_shapes(&spec).map_err(|e| anyhow!(e))?;
    println!("name: {}", spec.name);
    let (m, t, f) = spec.input_shape;
    println!("input: {m}x{t}x{f}, {} states", spec.n_states);
    print!("{}", trace.render());
    println!("convolutional layers: {}", trace.conv_layer_count());
    let violations = validate(&spec);
    if !violations.is_empty() {
        for v in &violations {
            eprintln!("violation: {v}");
        }
        if from_file {
            bail!("{} structural violation(s)", violations.len());
        }
    }
    Ok(())
}

fn cmd_gradcheck(scope: &str, instances: usize, tolerance: f64) -> Result<()> {
    let reports = if scope == "all" {
        vdcnn_lab::gradsuite::run_all(instances, tolerance).map_err(|e| anyhow!(e))?
    } else {
        vdcnn_lab::gradsuite::run_scope(scope, instances, tolerance).map_err(|e| anyhow!(e))?
    };
    let mut failures = 0;
    for r in &reports {
        println!("{}", r.line());
        if !r.passed {
            failures += 1;
        }
    }
    if failures > 0 {
        bail!("{failures} of {} gradient checks failed", reports.len());
    }
    println!("all {} gradient checks passed", reports.len());
    Ok(())
}

fn cmd_export_spec(arch: &str, states: usize, output: Option<&Path>) -> Result<()> {
    let spec = catalog_spec(arch, states).ok_or_else(|| {
        anyhow!(
            "unknown architecture '{arch}'; known: {}",
            catalog_names().join(", ")
        )
    })?;
    let text = emit_spec(&spec, None);
    match output {
        Some(path) => {
            std::fs::write(path, &text)?;
            println!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}
