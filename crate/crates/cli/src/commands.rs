use crate::config::{ModelKind, RunConfig};
use crate::error::CliError;
use coldlab::discriminator::{prefix_table, probe_cross_temperature, probe_prefix_accuracy, Discriminator};
use coldlab::metrics::{curve_plot_data, curve_table, quality_diversity_curve, QualityDiversityPoint};
use coldlab::oracle::{check_names, run_verification, sample_corpus, DataDistribution, DataSource, VerifyConfig};
use coldlab::rng::{child_seed, component, derive, derive_indexed};
use coldlab::sampling::{greedy_decode, sample};
use coldlab::seqmodel::{mle_train, read_policy, write_policy};
use coldlab::table::{fmt_f64, Table};
use coldlab::trainer::{evaluate, train as run_training, TrainLog};
use coldlab::{GeneratorPolicy, NeuralPolicy, SamplerSpec, TabularPolicy, TokenSequence};
use serde::Serialize;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

pub struct Context {
    pub output_root: PathBuf,
    pub workers: usize,
    pub seed: Option<u64>,
}

impl Context {
    fn load(&self, path: &Path) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(path)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }

    fn run_dir(&self, cfg: &RunConfig) -> PathBuf {
        self.output_root.join(&cfg.output_dir)
    }

    /// Creates `<run>/<name>` and writes the resolved config into it.
    fn stage_dir(&self, cfg: &RunConfig, name: &str) -> Result<PathBuf, CliError> {
        let dir = self.run_dir(cfg).join(name);
        fs::create_dir_all(&dir).map_err(CliError::io(format!("cannot create {}", dir.display())))?;
        write_file(&dir.join("config.toml"), &cfg.to_toml())?;
        Ok(dir)
    }

    /// Explicit checkpoint, else the run's trained generator, else its
    /// pretrained one.
    fn generator_path(&self, cfg: &RunConfig, explicit: Option<PathBuf>) -> Result<PathBuf, CliError> {
        let run = self.run_dir(cfg);
        let candidates = match explicit {
            Some(p) => vec![p],
            None => vec![run.join("train").join(FINAL_CHECKPOINT), run.join("pretrain").join(PRETRAINED)],
        };
        candidates.iter().find(|p| p.is_file()).cloned().ok_or_else(|| {
            CliError::Usage(format!("no generator checkpoint found (looked for {})", candidates[0].display()))
        })
    }
}

const PRETRAINED: &str = "generator.ckpt";
const FINAL_CHECKPOINT: &str = "generator.ckpt";

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(CliError::io(format!("cannot write {}", path.display())))
}

fn write_table(path: &Path, table: &Table) -> Result<(), CliError> {
    write_file(path, &table.to_csv())
}

fn load_generator(path: &Path, data: &DataDistribution) -> Result<GeneratorPolicy, CliError> {
    use coldlab::Policy;
    let g =
        read_policy(path).map_err(|e| CliError::Usage(format!("cannot load checkpoint {}: {e}", path.display())))?;
    if g.vocab() != data.vocab() || g.max_len() < data.max_len() {
        return Err(CliError::Usage(format!("checkpoint {} does not match the configured task", path.display())));
    }
    Ok(g)
}

fn init_generator(cfg: &RunConfig, data: &DataDistribution) -> Result<GeneratorPolicy, CliError> {
    let mut rng = derive(cfg.seed, component::INIT);
    Ok(match cfg.model.kind {
        ModelKind::Tabular => {
            let (v, l, i) = (data.vocab(), data.max_len(), data.input_max_len());
            if cfg.model.init_scale > 0.0 {
                TabularPolicy::random(v, l, i, cfg.model.init_scale, &mut rng)?.into()
            } else {
                TabularPolicy::zeros(v, l, i)?.into()
            }
        }
        ModelKind::Neural => NeuralPolicy::random(data.vocab(), data.max_len(), cfg.neural(), &mut rng)?.into(),
    })
}

pub fn pretrain(ctx: &Context, config: &Path) -> Result<(), CliError> {
    let cfg = ctx.load(config)?;
    let data = cfg.data.build()?;
    let corpus = sample_corpus(&data, cfg.pretrain.samples, &mut derive(cfg.seed, component::DATA));
    let mut policy = init_generator(&cfg, &data)?;
    let report = mle_train(&mut policy, &corpus, &cfg.pretrain.mle(child_seed(cfg.seed, component::PRETRAIN)))?;
    let dir = ctx.stage_dir(&cfg, "pretrain")?;
    let path = dir.join(PRETRAINED);
    write_policy(&policy, &path)?;
    write_table(&dir.join("nll.csv"), &report.to_table())?;
    eprintln!(
        "pretrained {} generator: best validation NLL {:.4} at epoch {}; wrote {}",
        policy.kind(),
        report.best_val_nll,
        report.best_epoch,
        path.display()
    );
    Ok(())
}

pub fn train(
    ctx: &Context,
    config: &Path,
    checkpoint: Option<PathBuf>,
    epochs: Option<usize>,
    sampler: Option<String>,
) -> Result<(), CliError> {
    let mut cfg = ctx.load(config)?;
    if let Some(e) = epochs {
        cfg.trainer.epochs = e;
    }
    if let Some(s) = sampler {
        cfg.sampler.spec = s;
    }
    let train_cfg = cfg.train_config(ctx.workers)?;
    let data = cfg.data.build()?;
    let source = checkpoint.unwrap_or_else(|| ctx.run_dir(&cfg).join("pretrain").join(PRETRAINED));
    if !source.is_file() {
        return Err(CliError::Usage(format!("checkpoint {} does not exist; run pretrain first", source.display())));
    }
    let generator = load_generator(&source, &data)?;
    let dir = ctx.stage_dir(&cfg, "train")?;
    let log_path = dir.join("log.csv");
    write_table(&log_path, &Table::new(TrainLog::HEADER))?;
    let final_path = dir.join(FINAL_CHECKPOINT);
    if train_cfg.epochs == 0 {
        fs::copy(&source, &final_path).map_err(CliError::io(format!("cannot copy {}", source.display())))?;
        eprintln!("0 epochs: copied {} to {}", source.display(), final_path.display());
        return Ok(());
    }
    let disc = Discriminator::new(
        cfg.discriminator.kind()?,
        data.vocab(),
        data.max_len(),
        data.input_max_len(),
        &mut derive_indexed(cfg.seed, component::INIT, 1),
    )?;
    let mut log = OpenOptions::new().append(true).open(&log_path).map_err(CliError::io("cannot open training log"))?;
    let mut on_epoch = |r: &coldlab::trainer::EpochRecord, g: &GeneratorPolicy, d: &Discriminator| {
        writeln!(log, "{}", TrainLog::row(r).join(","))?;
        log.flush()?;
        write_policy(g, dir.join(format!("generator_epoch_{}.ckpt", r.epoch)))?;
        d.write(dir.join(format!("discriminator_epoch_{}.ckpt", r.epoch)))?;
        eprintln!("epoch {}: oracle NLL {:.4}, mean reward {:.3}", r.epoch, r.oracle_nll, r.mean_reward);
        Ok(())
    };
    let out = run_training(generator, disc, &data, &train_cfg, &mut on_epoch)?;
    write_policy(&out.generator, &final_path)?;
    out.discriminator.write(dir.join("discriminator.ckpt"))?;
    let eval = evaluate(&out.generator, &data, &train_cfg.eval, cfg.seed)?;
    let mut t = Table::new(["oracle_nll", "bleu", "self_bleu"]);
    t.push([fmt_f64(eval.oracle_nll), fmt_f64(eval.bleu), fmt_f64(eval.self_bleu)]);
    write_table(&dir.join("eval.csv"), &t)?;
    eprintln!("final oracle NLL {:.4}; wrote {}", eval.oracle_nll, final_path.display());
    Ok(())
}

#[derive(Serialize)]
struct Summary<'a> {
    passed: bool,
    checks: Vec<SummaryCheck<'a>>,
}

#[derive(Serialize)]
struct SummaryCheck<'a> {
    name: &'a str,
    passed: bool,
    detail: &'a str,
}

pub fn verify(
    ctx: &Context,
    config: Option<PathBuf>,
    list: bool,
    budget: Option<u64>,
    corrupt: Option<f64>,
) -> Result<(), CliError> {
    let mut cfg = match &config {
        Some(path) => ctx.load(path)?,
        None => {
            let mut c = RunConfig::parse("[data]\ninstance = \"default\"\n")?;
            if let Some(seed) = ctx.seed {
                c.seed = seed;
            }
            c
        }
    };
    if let Some(b) = budget {
        cfg.verify.budget = b;
    }
    let vcfg = VerifyConfig { corrupt_is_weight: corrupt, ..cfg.verify_config(ctx.workers) };
    if list {
        for name in check_names(&vcfg) {
            println!("{name}");
        }
        return Ok(());
    }
    let data = cfg.data.build()?;
    let summary = run_verification(&data, &vcfg)?;
    let dir = ctx.stage_dir(&cfg, "verify")?;
    write_table(&dir.join("report.csv"), &summary.to_table())?;
    let json = Summary {
        passed: summary.passed(),
        checks: summary
            .checks
            .iter()
            .map(|c| SummaryCheck { name: &c.name, passed: c.passed, detail: &c.detail })
            .collect(),
    };
    write_file(&dir.join("summary.json"), &serde_json::to_string_pretty(&json).expect("summary serializes"))?;
    for c in &summary.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if summary.passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = summary.failures().map(|c| c.name.as_str()).collect();
        Err(CliError::Verification(failed.join(", ")))
    }
}

pub fn probe(
    ctx: &Context,
    name: &str,
    config: &Path,
    checkpoint: Option<PathBuf>,
    past: Option<PathBuf>,
) -> Result<(), CliError> {
    if !matches!(name, "cross-temp" | "prefix-acc") {
        return Err(CliError::Usage(format!("unknown probe `{name}`; expected cross-temp or prefix-acc")));
    }
    let cfg = ctx.load(config)?;
    let data = cfg.data.build()?;
    let generator = load_generator(&ctx.generator_path(&cfg, checkpoint)?, &data)?;
    let dir = ctx.stage_dir(&cfg, "probe")?;
    let path = if name == "cross-temp" {
        let past = match past {
            Some(p) => Some(load_generator(&p, &data)?),
            None => None,
        };
        let m = probe_cross_temperature(&generator, past.as_ref(), &data, &cfg.cross_temperature()?)?;
        let path = dir.join("cross_temp.csv");
        write_table(&path, &m.to_table())?;
        path
    } else {
        let rows = probe_prefix_accuracy(&generator, &data, &cfg.prefix_accuracy()?)?;
        let path = dir.join("prefix_acc.csv");
        write_table(&path, &prefix_table(&rows))?;
        path
    };
    eprintln!("wrote {}", path.display());
    Ok(())
}

pub fn curve(
    ctx: &Context,
    config: &Path,
    checkpoint: Option<PathBuf>,
    temps: Option<Vec<f64>>,
    series: &str,
) -> Result<(), CliError> {
    let mut cfg = ctx.load(config)?;
    if let Some(t) = temps {
        cfg.eval.temps = t;
    }
    let data = cfg.data.build()?;
    if data.input_max_len() > 0 {
        return Err(CliError::Usage("the quality-diversity curve needs an unconditional task".into()));
    }
    let generator = load_generator(&ctx.generator_path(&cfg, checkpoint)?, &data)?;
    let mut rng = derive_indexed(cfg.seed, component::EVAL, 2);
    let references: Vec<TokenSequence> =
        sample_corpus(&data, cfg.eval.references, &mut rng).into_iter().map(|(_, y)| y).collect();
    let points = quality_diversity_curve(
        &generator,
        &references,
        &cfg.eval.temps,
        cfg.eval.curve_samples,
        cfg.eval.max_n,
        &mut rng,
    )?;
    let dir = ctx.stage_dir(&cfg, "curve")?;
    write_table(&dir.join("curve.csv"), &curve_table(&points))?;
    write_table(&dir.join("plot.csv"), &curve_plot_data(&points, series))?;
    eprintln!("wrote {} points to {}", points.len(), dir.join("curve.csv").display());
    Ok(())
}

pub fn gen(
    ctx: &Context,
    config: &Path,
    checkpoint: Option<PathBuf>,
    n: usize,
    sampler: Option<String>,
    beam: Option<usize>,
) -> Result<(), CliError> {
    let cfg = ctx.load(config)?;
    let data = cfg.data.build()?;
    let generator = load_generator(&ctx.generator_path(&cfg, checkpoint)?, &data)?;
    let spec: SamplerSpec = match sampler {
        Some(s) => s.parse()?,
        None => SamplerSpec::on_policy(),
    };
    spec.validate()?;
    let mut rng = derive_indexed(cfg.seed, component::EVAL, 3);
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for _ in 0..n {
        let x = data.sample_input(&mut rng);
        let y = match beam {
            Some(b) => greedy_decode(&generator, &x, b)?,
            None => sample(&generator, &x, &spec, &mut rng)?.y,
        };
        let line = if x.is_empty() { y.to_string() } else { format!("{}\t{y}", token_string(x.tokens())) };
        writeln!(out, "{line}").map_err(CliError::io("cannot write to stdout"))?;
    }
    Ok(())
}

fn token_string(tokens: &[coldlab::Token]) -> String {
    tokens.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ")
}

fn named_path(spec: &str) -> Result<(&str, &Path), CliError> {
    spec.split_once('=')
        .filter(|(n, p)| !n.is_empty() && !p.is_empty())
        .map(|(n, p)| (n, Path::new(p)))
        .ok_or_else(|| CliError::Usage(format!("expected NAME=PATH, got `{spec}`")))
}

fn read_csv(path: &Path) -> Result<(csv::StringRecord, Vec<csv::StringRecord>), CliError> {
    let file = File::open(path).map_err(CliError::io(format!("cannot open {}", path.display())))?;
    let mut reader = csv::Reader::from_reader(file);
    let bad = |e: csv::Error| CliError::Usage(format!("malformed CSV {}: {e}", path.display()));
    let header = reader.headers().map_err(bad)?.clone();
    let rows = reader.records().collect::<Result<Vec<_>, _>>().map_err(bad)?;
    Ok((header, rows))
}

fn column(header: &csv::StringRecord, name: &str, path: &Path) -> Result<usize, CliError> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::Usage(format!("{} has no `{name}` column", path.display())))
}

fn number(s: &str, path: &Path) -> Result<f64, CliError> {
    s.parse().map_err(|_| CliError::Usage(format!("non-numeric value `{s}` in {}", path.display())))
}

pub fn plot_data(curves: &[String], logs: &[String], log_column: &str, out: Option<PathBuf>) -> Result<(), CliError> {
    if curves.is_empty() && logs.is_empty() {
        return Err(CliError::Usage("plot-data needs at least one --curve or --log input".into()));
    }
    let mut table = Table::new(["x", "y", "series"]);
    for spec in curves {
        let (name, path) = named_path(spec)?;
        let (header, rows) = read_csv(path)?;
        let (t, b, s) = (
            column(&header, "temperature", path)?,
            column(&header, "neg_bleu", path)?,
            column(&header, "self_bleu", path)?,
        );
        let mut points = Vec::new();
        for r in &rows {
            points.push(QualityDiversityPoint {
                temperature: number(&r[t], path)?,
                neg_bleu: number(&r[b], path)?,
                self_bleu: number(&r[s], path)?,
                samples: 0,
            });
        }
        table.rows.extend(curve_plot_data(&points, name).rows);
    }
    for spec in logs {
        let (name, path) = named_path(spec)?;
        let (header, rows) = read_csv(path)?;
        let (e, c) = (column(&header, "epoch", path)?, column(&header, log_column, path)?);
        for r in &rows {
            table.push([r[e].to_string(), r[c].to_string(), name.to_string()]);
        }
    }
    match out {
        Some(path) => write_table(&path, &table),
        None => {
            print!("{}", table.to_csv());
            Ok(())
        }
    }
}
