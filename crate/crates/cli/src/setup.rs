use std::path::Path;

use anyhow::{bail, Context, Result};
use reachavoid::neural::{MLPParams, TrainConfig};
use reachavoid::policy::ValueFunction;
use reachavoid::problem::RunFile;
use reachavoid::{builtin_benchmark, default_grid, GridSpec, Init, ProblemSpec, SolveConfig, ValueField};

use crate::args::{ProblemArgs, ValueArgs};

/// Problem, grid and any file-level solver/trainer settings.
pub struct Setup {
    pub spec: ProblemSpec,
    pub grid: GridSpec,
    pub file: Option<RunFile>,
}

impl Setup {
    pub fn load(args: &ProblemArgs) -> Result<Self> {
        let (mut spec, mut grid, file) = match (&args.benchmark, &args.config) {
            (Some(name), _) => (builtin_benchmark(name)?, default_grid(name)?, None),
            (None, Some(path)) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let file = RunFile::from_toml_str(&text).with_context(|| format!("parsing {}", path.display()))?;
                let spec = file.problem()?;
                let grid = match &file.grid {
                    Some(g) => g.clone(),
                    None if args.grid.is_empty() => bail!("{} has no [grid] section; pass --grid", path.display()),
                    None => GridSpec::uniform(spec.state_dim(), 0.0, 1.0, 2)?,
                };
                (spec, grid, Some(file))
            }
            (None, None) => bail!("one of --benchmark or --config is required"),
        };
        if let Some(g) = args.gamma {
            spec = spec.with_gamma(g);
            spec.validate()?;
        }
        if !args.grid.is_empty() {
            grid = parse_grid(&args.grid, spec.state_dim())?;
        }
        Ok(Self { spec, grid, file })
    }

    pub fn solve_config(&self, lambda: Option<f64>, tol: Option<f64>, max_iters: Option<usize>) -> Result<SolveConfig> {
        let mut cfg = SolveConfig::default();
        if let Some(s) = self.file.as_ref().and_then(|f| f.solve.as_ref()) {
            if let Some(v) = s.tolerance {
                cfg = cfg.with_tolerance(v);
            }
            if let Some(v) = s.max_iterations {
                cfg = cfg.with_max_iterations(v);
            }
            if let Some(v) = s.lambda {
                cfg = cfg.with_lambda(v);
            }
            if let Some(init) = s.init {
                cfg = cfg.with_init(match init {
                    reachavoid::problem::InitName::MinRc => Init::MinRc,
                    reachavoid::problem::InitName::Zero => Init::Zero,
                });
            }
        }
        if let Some(v) = lambda {
            cfg = cfg.with_lambda(v);
        }
        if let Some(v) = tol {
            cfg = cfg.with_tolerance(v);
        }
        if let Some(v) = max_iters {
            cfg = cfg.with_max_iterations(v);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Defaults over the grid box, then the file's `[train]` section.
    pub fn train_config(&self) -> TrainConfig {
        let mut cfg = TrainConfig::for_grid(&self.grid);
        if let Some(t) = self.file.as_ref().and_then(|f| f.train.clone()) {
            macro_rules! take {
                ($($k:ident),*) => { $( if let Some(v) = t.$k { cfg.$k = v; } )* };
            }
            take!(
                alpha,
                epochs,
                batch,
                horizon,
                lambda,
                hidden,
                capacity,
                updates_per_epoch,
                seed,
                sample_lower,
                sample_upper
            );
        }
        cfg
    }
}

pub fn parse_reals(text: &str) -> Result<Vec<f64>> {
    text.split(',').map(|s| s.trim().parse::<f64>().with_context(|| format!("`{s}` is not a number"))).collect()
}

fn parse_grid(axes: &[String], dim: usize) -> Result<GridSpec> {
    let mut parsed = Vec::with_capacity(axes.len());
    for axis in axes {
        let parts: Vec<&str> = axis.split(',').collect();
        let [lo, hi, count] = parts.as_slice() else {
            bail!("--grid expects lo,hi,count, got `{axis}`");
        };
        let lo: f64 = lo.trim().parse().with_context(|| format!("bad grid bound `{lo}`"))?;
        let hi: f64 = hi.trim().parse().with_context(|| format!("bad grid bound `{hi}`"))?;
        let count: usize = count.trim().parse().with_context(|| format!("bad node count `{count}`"))?;
        parsed.push((lo, hi, count));
    }
    if parsed.len() == 1 {
        parsed = vec![parsed[0]; dim];
    }
    if parsed.len() != dim {
        bail!("--grid given {} times but the state has {dim} axes", parsed.len());
    }
    Ok(GridSpec::new(
        parsed.iter().map(|a| a.0).collect(),
        parsed.iter().map(|a| a.1).collect(),
        parsed.iter().map(|a| a.2).collect(),
    )?)
}

pub fn read_field(path: &Path) -> Result<ValueField> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    ValueField::read_csv(std::io::BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

pub enum Source {
    Field(ValueField),
    Net(MLPParams),
}

impl ValueFunction for Source {
    fn value(&self, x: &[f64]) -> f64 {
        match self {
            Source::Field(f) => f.value(x),
            Source::Net(p) => p.value(x),
        }
    }
}

impl Source {
    pub fn load(args: &ValueArgs, spec: &ProblemSpec) -> Result<Self> {
        let (source, dim) = match (&args.field, &args.checkpoint) {
            (Some(path), _) => {
                let f = read_field(path)?;
                let dim = f.grid().dim();
                (Source::Field(f), dim)
            }
            (None, Some(path)) => {
                let p = MLPParams::load_json(path).with_context(|| format!("reading {}", path.display()))?;
                let (nu, nd) = (spec.dynamics.controls.len(), spec.dynamics.disturbances.len());
                if p.n_controls != nu || p.n_disturbances != nd {
                    bail!(
                        "checkpoint has {}x{} heads but the problem has {nu}x{nd} actions",
                        p.n_controls,
                        p.n_disturbances
                    );
                }
                p.check_finite()?;
                let dim = p.input_dim();
                (Source::Net(p), dim)
            }
            (None, None) => bail!("one of --field or --checkpoint is required"),
        };
        if dim != spec.state_dim() {
            bail!("value source has {dim} dimensions but the problem state has {}", spec.state_dim());
        }
        Ok(source)
    }
}
