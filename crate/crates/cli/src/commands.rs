use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context};
use chebysfda_core::adapt::{adapt_run, train_source, AdaptConfig, StepReport};
use chebysfda_core::harness::{
    evaluate_denoising, evaluate_segmentation, run_ablation, sweep_gamma, DenoiseMethod, DenoiseOptions, RunResult,
    SegSummary, DEFAULT_GAMMAS,
};
use chebysfda_core::model::{load_checkpoint, save_checkpoint, Checkpoint};
use chebysfda_core::report::{fmt_opt, fmt_real, line_chart_svg, step_rows, write_csv, Series, STEP_COLUMNS};
use chebysfda_core::synthdata::{load_benchmark, save_benchmark, Benchmark, BenchmarkSpec, Role};

use crate::manifest::{input, strip_out, InputHash, RunManifest};
use crate::{
    ensure_dir, AblateArgs, AdaptArgs, CmdResult, Command, EvalDenoiseArgs, EvalSegArgs, Failure, GenDataArgs,
    ReplayArgs, SweepGammaArgs, TrainSourceArgs,
};

const SEG_COLUMNS: [&str; 6] = ["model", "dice_mean", "dice_std", "asd_mean", "asd_std", "asd_count"];

pub(crate) fn dispatch(cmd: Command, args: &[String]) -> CmdResult {
    match cmd {
        Command::GenData(a) => gen_data(a, args),
        Command::TrainSource(a) => train(a, args),
        Command::Adapt(a) => adapt(a, args),
        Command::EvalSeg(a) => eval_seg(a, args),
        Command::EvalDenoise(a) => eval_denoise(a, args),
        Command::SweepGamma(a) => sweep(a, args),
        Command::Ablate(a) => ablate(a, args),
        Command::Replay(a) => replay(a),
    }
}

/// Collects outputs and writes the manifest last.
struct Run<'a> {
    dir: &'a Path,
    command: &'static str,
    args: Vec<String>,
    config: AdaptConfig,
    inputs: Vec<InputHash>,
    outputs: Vec<String>,
}

impl<'a> Run<'a> {
    fn start(dir: &'a Path, command: &'static str, args: &[String], config: AdaptConfig) -> CmdResult<Self> {
        ensure_dir(dir)?;
        Ok(Self { dir, command, args: strip_out(args), config, inputs: Vec::new(), outputs: Vec::new() })
    }

    fn input(&mut self, role: &str, path: &Path) -> CmdResult {
        self.inputs.push(input(role, path)?);
        Ok(())
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> CmdResult {
        write_csv(self.dir.join(name), header, rows)?;
        self.outputs.push(name.into());
        Ok(())
    }

    fn text(&mut self, name: &str, text: &str) -> CmdResult {
        fs::write(self.dir.join(name), text)?;
        self.outputs.push(name.into());
        Ok(())
    }

    fn checkpoint(&mut self, name: &str, ckpt: &Checkpoint) -> CmdResult {
        save_checkpoint(ckpt, self.dir.join(name))?;
        self.outputs.push(name.into());
        Ok(())
    }

    fn finish(mut self) -> CmdResult {
        let mut cfg = self.config.to_json_pretty();
        cfg.push('\n');
        fs::write(self.dir.join("config.json"), cfg)?;
        self.outputs.push("config.json".into());
        let m = RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command.into(),
            args: self.args,
            seed: self.config.seed,
            config: self.config,
            inputs: self.inputs,
            outputs: self.outputs,
        };
        m.write(self.dir)?;
        Ok(())
    }
}

fn load_ckpt(path: &Path) -> CmdResult<Checkpoint> {
    load_checkpoint(path).with_context(|| format!("cannot load checkpoint {}", path.display())).map_err(Failure::from)
}

fn load_data(path: &Path) -> CmdResult<Benchmark> {
    load_benchmark(path).with_context(|| format!("cannot load dataset {}", path.display())).map_err(Failure::from)
}

fn seg_row(model: &str, s: &SegSummary) -> Vec<String> {
    vec![
        model.into(),
        fmt_real(s.dice_mean),
        fmt_real(s.dice_std),
        fmt_opt(s.asd_mean),
        fmt_opt(s.asd_std),
        s.asd_count.to_string(),
    ]
}

fn role(split: crate::Split) -> Role {
    match split {
        crate::Split::SourceTrain => Role::SourceTrain,
        crate::Split::TargetTrain => Role::TargetTrain,
        crate::Split::TargetTest => Role::TargetTest,
    }
}

fn gen_data(a: GenDataArgs, args: &[String]) -> CmdResult {
    let mut spec = BenchmarkSpec::default();
    if let Some(n) = a.n_source_train {
        spec.n_source_train = n;
    }
    if let Some(n) = a.n_target_train {
        spec.n_target_train = n;
    }
    if let Some(n) = a.n_target_test {
        spec.n_target_test = n;
    }
    if spec.n_source_train == 0 || spec.n_target_train == 0 || spec.n_target_test == 0 {
        return Err(Failure::Usage(anyhow!("every split needs at least one image")));
    }
    let config = AdaptConfig { seed: a.seed, ..AdaptConfig::default() };
    let mut run = Run::start(&a.out, "gen-data", args, config)?;
    let bench = Benchmark::generate(a.seed, &spec)?;
    let index = save_benchmark(&bench, &a.out)?;
    run.outputs.push("index.json".into());
    for d in &index.datasets {
        for it in &d.items {
            run.outputs.push(it.image.clone());
            run.outputs.push(it.mask.clone());
        }
    }
    run.finish()?;
    println!(
        "wrote {} source-train, {} target-train, {} target-test images to {}",
        spec.n_source_train,
        spec.n_target_train,
        spec.n_target_test,
        a.out.display()
    );
    Ok(())
}

fn train(a: TrainSourceArgs, args: &[String]) -> CmdResult {
    let cfg = a.config.resolve()?;
    let mut run = Run::start(&a.out, "train-source", args, cfg.clone())?;
    if let Some(p) = &a.config.config {
        run.input("config", p)?;
    }
    run.input("data", &a.data)?;
    let bench = load_data(&a.data)?;
    let ckpt = train_source(&bench.source_train, &cfg)?;
    run.checkpoint("source.ckpt", &ckpt)?;
    let on_source = evaluate_segmentation(&ckpt.params, &bench.source_train)?;
    let on_target = evaluate_segmentation(&ckpt.params, &bench.target_test)?;
    run.csv("eval.csv", &SEG_COLUMNS, &[seg_row("source-train", &on_source), seg_row("target-test", &on_target)])?;
    run.finish()?;
    println!("source Dice {:.4}, target-test Dice {:.4}", on_source.dice_mean, on_target.dice_mean);
    Ok(())
}

fn loss_svg(reports: &[StepReport]) -> String {
    let pick = |name: &str, f: fn(&StepReport) -> f64| Series {
        name: name.into(),
        points: reports.iter().map(|r| (r.step as f64, f(r))).collect(),
    };
    line_chart_svg(
        "Adaptation losses",
        "step",
        "loss",
        &[pick("teacher CE", |r| r.loss_te), pick("student CE", |r| r.loss_st), pick("total", |r| r.loss_total)],
    )
}

fn adapt(a: AdaptArgs, args: &[String]) -> CmdResult {
    let cfg = a.config.resolve()?;
    let mut run = Run::start(&a.out, "adapt", args, cfg.clone())?;
    if let Some(p) = &a.config.config {
        run.input("config", p)?;
    }
    run.input("source_ckpt", &a.source_ckpt)?;
    run.input("data", &a.data)?;
    let source = load_ckpt(&a.source_ckpt)?;
    let bench = load_data(&a.data)?;
    let outcome = adapt_run(&source, &bench.target_train, &cfg)?;
    run.checkpoint("adapted.ckpt", &outcome.student)?;
    run.csv("steps.csv", &STEP_COLUMNS, &step_rows(&outcome.reports))?;
    let before = evaluate_segmentation(&source.params, &bench.target_test)?;
    let after = evaluate_segmentation(&outcome.student.params, &bench.target_test)?;
    run.csv("eval.csv", &SEG_COLUMNS, &[seg_row("source-only", &before), seg_row("adapted", &after)])?;
    if a.svg {
        run.text("losses.svg", &loss_svg(&outcome.reports))?;
    }
    run.finish()?;
    println!("target-test Dice {:.4} -> {:.4}", before.dice_mean, after.dice_mean);
    Ok(())
}

fn eval_seg(a: EvalSegArgs, args: &[String]) -> CmdResult {
    let mut run = Run::start(&a.out, "eval-seg", args, AdaptConfig::default())?;
    run.input("ckpt", &a.ckpt)?;
    run.input("data", &a.data)?;
    let ckpt = load_ckpt(&a.ckpt)?;
    let bench = load_data(&a.data)?;
    let split = role(a.split);
    let s = evaluate_segmentation(&ckpt.params, bench.get(split))?;
    run.csv("seg_summary.csv", &SEG_COLUMNS, &[seg_row(split.name(), &s)])?;
    let rows: Vec<Vec<String>> = s
        .per_image
        .iter()
        .enumerate()
        .map(|(i, p)| vec![i.to_string(), fmt_real(p.dice), fmt_opt(p.asd)])
        .collect();
    run.csv("seg_per_image.csv", &["image", "dice", "asd"], &rows)?;
    run.finish()?;
    println!("{} Dice {:.4}", split.name(), s.dice_mean);
    Ok(())
}

fn eval_denoise(a: EvalDenoiseArgs, args: &[String]) -> CmdResult {
    let cfg = a.config.resolve()?;
    let mut opts = DenoiseOptions::new(a.eta.unwrap_or(cfg.eta_end));
    if !a.methods.is_empty() {
        opts.methods = a
            .methods
            .iter()
            .map(|m| DenoiseMethod::parse(m).ok_or_else(|| Failure::Usage(anyhow!("unknown method {m:?}"))))
            .collect::<CmdResult<Vec<_>>>()?;
    }
    if let Some(t) = a.entropy_threshold {
        opts.entropy_threshold = t;
    }
    if let Some(t) = a.uncertainty_threshold {
        opts.uncertainty_threshold = t;
    }
    if let Some(t) = a.chebyshev_threshold {
        opts.chebyshev_threshold = t;
    }
    if a.curve_steps == 0 {
        return Err(Failure::Usage(anyhow!("--curve-steps must be positive")));
    }
    opts.curve_thresholds = (0..=a.curve_steps).map(|i| i as f64 / a.curve_steps as f64).collect();

    let mut run = Run::start(&a.out, "eval-denoise", args, cfg.clone())?;
    if let Some(p) = &a.config.config {
        run.input("config", p)?;
    }
    run.input("source_ckpt", &a.source_ckpt)?;
    run.input("data", &a.data)?;
    let ckpt = load_ckpt(&a.source_ckpt)?;
    let bench = load_data(&a.data)?;
    let report = evaluate_denoising(&ckpt.params, bench.get(role(a.split)), &cfg, &opts)?;

    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.method.name().into(),
                fmt_opt(r.threshold),
                fmt_real(r.f1_mean),
                fmt_real(r.f1_std),
                fmt_real(r.accuracy_mean),
                fmt_real(r.accuracy_std),
                r.pooled.tp.to_string(),
                r.pooled.fp.to_string(),
                r.pooled.tn.to_string(),
                r.pooled.fn_.to_string(),
            ]
        })
        .collect();
    run.csv(
        "denoise_table.csv",
        &["method", "threshold", "f1_mean", "f1_std", "accuracy_mean", "accuracy_std", "tp", "fp", "tn", "fn"],
        &rows,
    )?;
    let mut curve_rows = Vec::new();
    for (m, c) in &report.curves {
        for p in &c.points {
            curve_rows.push(vec![
                m.name().into(),
                fmt_real(p.threshold),
                fmt_real(p.precision),
                fmt_real(p.recall),
                fmt_real(p.f1),
                fmt_real(c.area),
            ]);
        }
    }
    run.csv("pr_curves.csv", &["method", "threshold", "precision", "recall", "f1", "area"], &curve_rows)?;
    if a.svg {
        let series: Vec<Series> = report
            .curves
            .iter()
            .map(|(m, c)| Series { name: m.name().into(), points: c.points.iter().map(|p| (p.recall, p.precision)).collect() })
            .collect();
        run.text("pr_curves.svg", &line_chart_svg("Noise detection", "recall", "precision", &series))?;
    }
    run.finish()?;
    for r in &report.rows {
        println!("{:22} F1 {:.4}  accuracy {:.4}", r.method.name(), r.f1_mean, r.accuracy_mean);
    }
    Ok(())
}

const RESULT_COLUMNS: [&str; 11] = [
    "label",
    "gamma",
    "diversity",
    "student_branch",
    "confidence_weighting",
    "direct_denoise",
    "proto_denoise",
    "dice_mean",
    "dice_std",
    "asd_mean",
    "asd_std",
];

fn result_rows(results: &[RunResult]) -> Vec<Vec<String>> {
    results
        .iter()
        .map(|r| {
            let t = r.config.toggles;
            let b = |v: bool| u8::from(v).to_string();
            vec![
                r.label.clone(),
                fmt_real(r.config.gamma),
                b(t.diversity),
                b(t.student_branch),
                b(t.confidence_weighting),
                b(t.direct_denoise),
                b(t.proto_denoise),
                fmt_real(r.summary.dice_mean),
                fmt_real(r.summary.dice_std),
                fmt_opt(r.summary.asd_mean),
                fmt_opt(r.summary.asd_std),
            ]
        })
        .collect()
}

fn sweep(a: SweepGammaArgs, args: &[String]) -> CmdResult {
    let cfg = a.config.resolve()?;
    let gammas = if a.gammas.is_empty() { DEFAULT_GAMMAS.to_vec() } else { a.gammas.clone() };
    if gammas.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
        return Err(Failure::Usage(anyhow!("gammas must be finite and non-negative")));
    }
    let mut run = Run::start(&a.out, "sweep-gamma", args, cfg.clone())?;
    if let Some(p) = &a.config.config {
        run.input("config", p)?;
    }
    run.input("source_ckpt", &a.source_ckpt)?;
    run.input("data", &a.data)?;
    let source = load_ckpt(&a.source_ckpt)?;
    let bench = load_data(&a.data)?;
    let results = sweep_gamma(&source, &bench, &cfg, &gammas)?;
    run.csv("gamma_sweep.csv", &RESULT_COLUMNS, &result_rows(&results))?;
    if a.svg {
        // log-spaced gammas read better on a log axis; zero sits one decade below the smallest positive value
        let min_pos = gammas.iter().copied().filter(|g| *g > 0.0).fold(f64::INFINITY, f64::min);
        let floor = if min_pos.is_finite() { min_pos.log10() - 1.0 } else { 0.0 };
        let points =
            results.iter().map(|r| (if r.config.gamma > 0.0 { r.config.gamma.log10() } else { floor }, r.summary.dice_mean)).collect();
        let svg = line_chart_svg("Dice vs gamma", "log10 gamma", "Dice", &[Series { name: "Dice".into(), points }]);
        run.text("gamma_sweep.svg", &svg)?;
    }
    run.finish()?;
    for r in &results {
        println!("gamma {:>8}: Dice {:.4}", r.label, r.summary.dice_mean);
    }
    Ok(())
}

fn ablate(a: AblateArgs, args: &[String]) -> CmdResult {
    let cfg = a.config.resolve()?;
    let mut run = Run::start(&a.out, "ablate", args, cfg.clone())?;
    if let Some(p) = &a.config.config {
        run.input("config", p)?;
    }
    run.input("source_ckpt", &a.source_ckpt)?;
    run.input("data", &a.data)?;
    let source = load_ckpt(&a.source_ckpt)?;
    let bench = load_data(&a.data)?;
    let results = run_ablation(&source, &bench, &cfg)?;
    run.csv("ablation.csv", &RESULT_COLUMNS, &result_rows(&results))?;
    run.finish()?;
    for r in &results {
        println!("{}: Dice {:.4}", r.label, r.summary.dice_mean);
    }
    Ok(())
}

fn replay(a: ReplayArgs) -> CmdResult {
    let m = RunManifest::read(&a.manifest)?;
    m.verify_inputs()?;
    let mut argv = vec!["chebysfda".to_string()];
    argv.extend(m.args.iter().cloned());
    argv.push("--out".into());
    argv.push(a.out.to_string_lossy().into_owned());
    match crate::run_cli(argv) {
        0 => Ok(()),
        code => Err(Failure::Runtime(anyhow!("replayed command exited with {code}"))),
    }
}
