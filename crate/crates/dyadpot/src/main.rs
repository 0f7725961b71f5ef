use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dyadpot::config::{ExperimentKind, MeasureSource, RunConfig, WeightSpec};
use dyadpot::goodlambda::{
    epsilon_sweep, exp_integrability_check, good_tau_check, log_singular_measure,
    norm_comparison, Ball, ExpIntOptions, OperatorFlavor,
};
use dyadpot::grid::random_sparse_measure;
use dyadpot::potential::potential_field;
use dyadpot::sharpness::{sharpness_report, SharpExample};
use dyadpot::weight::{check_weak_ainfty, Weight};
use dyadpot::whitney::{
    dyadic_maximal_decomposition, verify_decomposition, whitney_decomposition,
};
use dyadpot::{CellSet, FieldOp, Grid, MeasureTree, PotentialParams};

#[derive(Parser)]
#[command(name = "dyadpot", about = "Dyadic potential experiment runner", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration file (sectioned key = value text).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for JSON/CSV artifacts; nothing is written when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker thread cap (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone)]
enum Command {
    /// Experiment kind taken from the config file.
    Run(Common),
    /// Potential and maximal fields as CSV, with the domination check.
    Field(Common),
    /// Good-lambda epsilon sweep with the capped exponential bound.
    Goodlambda(Common),
    /// Good-tau distributional inequality: smallest admissible c'.
    Goodtau(Common),
    /// Potential vs. maximal L^p(sigma) norm comparison.
    Norms(Common),
    /// Exponential integrability of the normalized ball potential.
    Expint(Common),
    /// The exact sharpness construction and its containment checks.
    Sharpness(Common),
    /// Whitney / dyadic-maximal decompositions with verification.
    Whitney(Common),
    /// Weak A-infinity falsifier for the configured weight.
    AinftyCheck(Common),
}

impl Command {
    fn split(self) -> (Option<ExperimentKind>, Common) {
        match self {
            Command::Run(c) => (None, c),
            Command::Field(c) => (Some(ExperimentKind::PotentialField), c),
            Command::Goodlambda(c) => (Some(ExperimentKind::GoodLambdaSweep), c),
            Command::Goodtau(c) => (Some(ExperimentKind::GoodTau), c),
            Command::Norms(c) => (Some(ExperimentKind::Norms), c),
            Command::Expint(c) => (Some(ExperimentKind::ExpInt), c),
            Command::Sharpness(c) => (Some(ExperimentKind::Sharpness), c),
            Command::Whitney(c) => (Some(ExperimentKind::Whitney), c),
            Command::AinftyCheck(c) => (Some(ExperimentKind::Ainfty), c),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Verdict {
    Pass,
    Inconclusive,
    Fail,
}

struct Runner {
    out: Option<PathBuf>,
    worst: Verdict,
}

impl Runner {
    fn new(out: Option<PathBuf>) -> Runner {
        Runner { out, worst: Verdict::Pass }
    }

    fn verdict(&mut self, check: &str, v: Verdict) {
        let word = match v {
            Verdict::Pass => "PASS",
            Verdict::Inconclusive => "INCONCLUSIVE",
            Verdict::Fail => "FAIL",
        };
        println!("{check}: {word}");
        self.worst = self.worst.max(v);
    }

    fn check(&mut self, name: &str, ok: bool) {
        self.verdict(name, if ok { Verdict::Pass } else { Verdict::Fail });
    }

    fn write(&self, name: &str, contents: &str) -> dyadpot::Result<()> {
        if let Some(dir) = &self.out {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(name), contents)?;
        }
        Ok(())
    }

    fn write_json<T: serde::Serialize>(&self, name: &str, value: &T) -> dyadpot::Result<()> {
        if self.out.is_some() {
            let text = serde_json::to_string_pretty(value)
                .map_err(|e| dyadpot::Error::InvalidParams(format!("json: {e}")))?;
            self.write(name, &text)?;
        }
        Ok(())
    }

    fn exit(&self) -> ExitCode {
        match self.worst {
            Verdict::Pass => ExitCode::from(0),
            Verdict::Fail => ExitCode::from(1),
            Verdict::Inconclusive => ExitCode::from(2),
        }
    }
}

fn build_measure(cfg: &RunConfig) -> dyadpot::Result<MeasureTree> {
    let grid = Grid::new(cfg.dim, cfg.root_level)?;
    match &cfg.measure {
        MeasureSource::Zero => MeasureTree::build(grid, &[]),
        MeasureSource::Generator { atoms } => Ok(random_sparse_measure(grid, *atoms, cfg.seed)),
        MeasureSource::File(path) => MeasureTree::load(path),
        MeasureSource::LogSingular => Ok(log_singular_measure(cfg.root_level)?.0),
    }
}

fn build_weight(cfg: &RunConfig, grid: Grid) -> dyadpot::Result<Weight> {
    match &cfg.weight {
        WeightSpec::Constant(v) => Weight::constant(grid, *v),
        WeightSpec::Power { gamma } => {
            let mid = grid.side() as f64 / 2.0;
            Weight::power(grid, *gamma, [mid, mid, mid])
        }
        WeightSpec::HalfSpace => Ok(Weight::half_space(grid)),
        WeightSpec::SingleCell(coords) => {
            let mut cell = [0u64; 3];
            for (i, &c) in coords.iter().enumerate() {
                cell[i] = c;
            }
            Weight::single_cell(grid, &cell)
        }
    }
}

fn params_of(cfg: &RunConfig) -> PotentialParams {
    let p = PotentialParams::new(cfg.alpha, cfg.q, cfg.level_min, cfg.level_max);
    if cfg.include_tail {
        p.with_tail()
    } else {
        p
    }
}

fn run(cfg: &RunConfig, r: &mut Runner) -> dyadpot::Result<()> {
    match cfg.kind {
        ExperimentKind::PotentialField => {
            let tree = build_measure(cfg)?;
            let params = params_of(cfg);
            let t = potential_field(&tree, &params, FieldOp::DyadicPotential)?;
            let m = potential_field(&tree, &params, FieldOp::MaximalDyadic)?;
            r.write("potential.csv", &t.to_csv())?;
            r.write("maximal.csv", &m.to_csv())?;
            let dominated = t
                .values()
                .iter()
                .zip(m.values())
                .all(|(tv, mv)| mv <= tv);
            r.check("maximal dominated by potential", dominated);
        }
        ExperimentKind::GoodLambdaSweep => {
            let tree = build_measure(cfg)?;
            let params = params_of(cfg);
            let weight = build_weight(cfg, *tree.grid())?;
            let rep = epsilon_sweep(
                &tree,
                &params,
                &weight,
                &cfg.eps_grid,
                cfg.tau,
                OperatorFlavor::Dyadic,
                cfg.c_cap,
            )?;
            r.write("goodlambda.csv", &rep.to_csv())?;
            r.write_json("goodlambda.json", &rep)?;
            if rep.inconclusive {
                r.verdict("good-lambda capped exponential bound", Verdict::Inconclusive);
            } else {
                r.check("good-lambda capped exponential bound", rep.capped_bound_holds);
            }
        }
        ExperimentKind::GoodTau => {
            let tree = build_measure(cfg)?;
            let params = params_of(cfg);
            let weight = build_weight(cfg, *tree.grid())?;
            let rep = good_tau_check(&tree, &params, &weight, &cfg.eps_grid, &cfg.cprime_grid)?;
            r.write_json("goodtau.json", &rep)?;
            if rep.inconclusive {
                r.verdict("good-tau admissible c'", Verdict::Inconclusive);
            } else {
                r.check(
                    "good-tau admissible c'",
                    rep.rows.iter().all(|row| row.cprime.is_some()),
                );
            }
        }
        ExperimentKind::Norms => {
            let tree = build_measure(cfg)?;
            let params = params_of(cfg);
            let weight = build_weight(cfg, *tree.grid())?;
            let mut all_trivial = true;
            let mut ok = true;
            let mut reports = Vec::new();
            for &p in &cfg.p_grid {
                let rep = norm_comparison(&tree, &params, &weight, p)?;
                all_trivial &= rep.trivial;
                ok &= !rep.violation;
                if let Some(ratio) = rep.ratio {
                    ok &= ratio.is_finite();
                }
                println!(
                    "p = {p}: lhs = {:.6e}, rhs = {:.6e}, ratio = {}",
                    rep.lhs_norm,
                    rep.rhs_norm,
                    rep.ratio.map_or("n/a".into(), |v| format!("{v:.6e}")),
                );
                reports.push(rep);
            }
            r.write_json("norms.json", &reports)?;
            if all_trivial {
                r.verdict("norm comparison finiteness", Verdict::Inconclusive);
            } else {
                r.check("norm comparison finiteness", ok);
            }
        }
        ExperimentKind::ExpInt => {
            let tree = build_measure(cfg)?;
            let grid = *tree.grid();
            let params = params_of(cfg);
            let weight = build_weight(cfg, grid)?;
            let half = grid.side() / 2;
            let ball = Ball { center: [half, half, half], radius: grid.side() / 4 };
            let mut inside = CellSet::empty(grid);
            for cell in grid.cells() {
                if ball.contains_cell(grid.dim(), &cell) {
                    inside.insert(&cell);
                }
            }
            let restricted = tree.restricted(&inside)?;
            let opts = ExpIntOptions { c_target: cfg.c_target, ..ExpIntOptions::default() };
            let (rep, t_field) =
                exp_integrability_check(&restricted, &params, &weight, &ball, &opts)?;
            r.write_json("expint.json", &rep)?;
            r.write("expint_field.csv", &t_field.to_csv())?;
            if rep.inconclusive {
                r.verdict("exponential integrability", Verdict::Inconclusive);
            } else {
                r.check("level-set containment in 2B", rep.containment_holds);
                if rep.ladder_pairs == 0 {
                    // nothing above twice the threshold at this resolution
                    r.verdict("level-set halving decay", Verdict::Inconclusive);
                } else {
                    r.check("level-set halving decay", rep.halving_holds);
                }
                r.check("exponential moment bounded", rep.best_c_test.is_some());
            }
        }
        ExperimentKind::Sharpness => {
            let ex = SharpExample::build(cfg.sharp_epsilon, cfg.dim, cfg.alpha)?;
            let rep = sharpness_report(&ex)?;
            println!(
                "epsilon = {}, delta = {:.6e}, shells = {}",
                rep.epsilon, rep.delta, rep.shells
            );
            let mut csv = String::from("annulus,value,maximal\n");
            for (k, v) in rep.per_annulus_value.iter().enumerate() {
                csv.push_str(&format!(
                    "{k},{:.16e},{:.16e}\n",
                    v,
                    ex.maximal_on_annulus(k as u32)
                ));
            }
            r.write("sharpness_annuli.csv", &csv)?;
            r.write_json("sharpness.json", &rep)?;
            r.check("core maximal bound", rep.maximal_bound_ok);
            r.check("core inside numerator set", rep.core_in_numerator_set);
            r.check("level-set ratio lower bound", rep.ratio_ok);
        }
        ExperimentKind::Whitney => {
            let grid = Grid::new(cfg.dim, cfg.root_level)?;
            let mut set = CellSet::empty(grid);
            if cfg.whitney_cells.is_empty() {
                // seeded random union of boxes
                let mut rng = dyadpot::rng::SplitMix64::new(cfg.seed);
                for _ in 0..4 {
                    let level = rng.next_below(grid.root_level() as u64) as u32;
                    let mut coords = [0u64; 3];
                    for c in coords.iter_mut().take(grid.dim()) {
                        *c = rng.next_below(grid.side() >> level);
                    }
                    let cube = dyadpot::DyadicCube { level, coords };
                    set = set.union(&CellSet::from_cube(grid, &cube));
                }
            } else {
                for coords in &cfg.whitney_cells {
                    let mut cell = [0u64; 3];
                    for (i, &c) in coords.iter().enumerate() {
                        cell[i] = c;
                    }
                    grid.check_cell(&cell)?;
                    set.insert(&cell);
                }
            }
            let dm = dyadic_maximal_decomposition(&set);
            let wh = whitney_decomposition(&set);
            let dm_rep = verify_decomposition(&dm);
            let wh_rep = verify_decomposition(&wh);
            r.write("dyadic_maximal.csv", &dm.to_csv(grid.dim()))?;
            r.write("whitney.csv", &wh.to_csv(grid.dim()))?;
            r.write_json("whitney_report.json", &(&dm_rep, &wh_rep))?;
            let overlap_cap = 1u64 << (2 * grid.dim());
            r.check("dyadic-maximal tiling", dm_rep.tiles_exactly && dm_rep.parent_maximality);
            r.check("whitney tiling", wh_rep.tiles_exactly);
            r.check(
                "double overlap bound",
                dm_rep.max_overlap_of_doubles <= overlap_cap
                    && wh_rep.max_overlap_of_doubles <= overlap_cap,
            );
        }
        ExperimentKind::Ainfty => {
            let grid = Grid::new(cfg.dim, cfg.root_level)?;
            let weight = build_weight(cfg, grid)?;
            let claimed = matches!(cfg.weight, WeightSpec::Constant(_));
            let weight = if claimed { weight.with_claim(1.0, 1.0) } else { weight };
            let rep = check_weak_ainfty(&weight, cfg.ainfty_samples, cfg.seed)?;
            r.write_json("ainfty.json", &rep)?;
            if let Some(fit) = &rep.fitted {
                println!("fitted character: theta = {:.4}, C = {:.4}", fit.theta, fit.c_sigma);
            }
            if rep.claimed.is_some() {
                r.check("weak A-infinity claim", rep.violations == 0);
            } else if let Some(w) = &rep.witness {
                println!(
                    "violation witness: level {} cube {:?}",
                    w.cube_level, w.cube_coords
                );
                r.verdict("weak A-infinity claim", Verdict::Fail);
            } else {
                r.verdict("weak A-infinity claim", Verdict::Pass);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, common) = cli.command.split();

    if let Some(threads) = common.threads {
        if rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().is_err() {
            eprintln!("warning: thread pool already initialized");
        }
    }

    let cfg = match &common.config {
        Some(path) => RunConfig::load(path, kind, common.seed),
        None => match kind {
            None => {
                eprintln!("error: `run` requires --config");
                return ExitCode::from(3);
            }
            Some(_) => RunConfig::parse("", Some(Path::new(".")), kind, common.seed),
        },
    };
    let cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    };

    let mut runner = Runner::new(common.out.clone());
    match run(&cfg, &mut runner) {
        Ok(()) => runner.exit(),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
