//! Resolving `--group`, `--surface` and `--patch` into library objects.

use std::fs;

use hsurf::examples::{self, ExampleSurface, GraphChart};
use hsurf::variation::{PatchSpec, QuadraturePatch};
use hsurf::{CarnotGroup, ScalarField};
use serde::Serialize;

/// Errors in the user's input (exit code 2).
#[derive(Debug)]
pub struct InputError(pub String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

pub fn input<T>(msg: impl Into<String>) -> anyhow::Result<T> {
    Err(InputError(msg.into()).into())
}

/// Where the group comes from.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupSource {
    Heisenberg(usize),
    Engel,
    Abelian(usize),
    File(String),
}

impl GroupSource {
    pub fn parse(s: &str) -> Self {
        let (name, arg) = match s.split_once(':') {
            Some((a, b)) => (a, Some(b)),
            None => (s, None),
        };
        let num = |d: usize| arg.and_then(|a| a.parse().ok()).unwrap_or(d);
        match name {
            "heisenberg" | "h" if arg.map_or(true, |a| a.parse::<usize>().is_ok()) => GroupSource::Heisenberg(num(1)),
            "engel" if arg.is_none() => GroupSource::Engel,
            "abelian" | "euclidean" if arg.map_or(true, |a| a.parse::<usize>().is_ok()) => GroupSource::Abelian(num(3)),
            _ => GroupSource::File(s.to_string()),
        }
    }

    pub fn load(&self) -> anyhow::Result<CarnotGroup> {
        match self {
            GroupSource::Heisenberg(0) | GroupSource::Abelian(0) => input("group dimension must be positive"),
            GroupSource::Heisenberg(m) => Ok(CarnotGroup::heisenberg(*m)),
            GroupSource::Engel => Ok(CarnotGroup::engel()),
            GroupSource::Abelian(n) => Ok(CarnotGroup::abelian(*n)),
            GroupSource::File(path) => {
                let text = read(path)?;
                CarnotGroup::from_json(&text).map_err(|e| InputError(format!("{}: {}", path, e)).into())
            }
        }
    }
}

pub fn read(path: &str) -> anyhow::Result<String> {
    fs::read_to_string(path).map_err(|e| InputError(format!("cannot read {}: {}", path, e)).into())
}

/// A builtin reference surface or a defining function.
#[derive(Clone)]
pub enum Surface {
    Builtin(ExampleSurface),
    Expression { text: String, field: ScalarField },
}

impl Surface {
    pub fn load(text: &str, group: &CarnotGroup) -> anyhow::Result<Self> {
        match text {
            "vplane" | "nvplane" | "hparab" => examples::builtin(text, group)
                .map(Surface::Builtin)
                .or_else(|e| input(format!("surface {}: {}", text, e))),
            _ => match hsurf::expr::parse_field(text, group.dim()) {
                Ok(field) => Ok(Surface::Expression { text: text.to_string(), field }),
                Err(e) => input(format!("cannot parse surface {:?}: {}", text, e)),
            },
        }
    }

    pub fn field(&self) -> &ScalarField {
        match self {
            Surface::Builtin(s) => &s.field,
            Surface::Expression { field, .. } => field,
        }
    }

    /// Whether the Jacobi-type identities apply without being asked.
    pub fn known_cmc(&self) -> bool {
        matches!(self, Surface::Builtin(_))
    }

    /// Default patch box: away from the characteristic set for the builtin
    /// families, `[-1, 1]` otherwise; about `nodes` nodes.
    pub fn default_patch(&self, n: usize, nodes: usize) -> PatchSpec {
        let d = n - 1;
        let res = ((nodes as f64).powf(1.0 / d as f64).round() as usize).max(3);
        let (lo, hi) = match self {
            Surface::Builtin(s) => match s.id() {
                "vplane" => (0.0, 1.0),
                "nvplane" => (0.5, 1.5),
                _ => (0.1, 1.1),
            },
            Surface::Expression { .. } => (-1.0, 1.0),
        };
        let mut spec = PatchSpec::new(vec![lo; d], vec![hi; d], res);
        if let Surface::Expression { .. } = self {
            spec.axis = Some(n);
        }
        spec
    }

    pub fn chart(&self, n: usize, spec: &PatchSpec) -> anyhow::Result<GraphChart> {
        let explicit = QuadraturePatch::chart_for(self.field(), n, spec).map_err(|e| InputError(e.to_string()))?;
        match (explicit, self) {
            (Some(c), _) => Ok(c),
            (None, Surface::Builtin(s)) => Ok(s.chart.clone()),
            (None, Surface::Expression { .. }) => {
                let mut spec = spec.clone();
                spec.axis = Some(n);
                self.chart(n, &spec)
            }
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Surface::Builtin(s) => s.id().to_string(),
            Surface::Expression { text, .. } => text.clone(),
        }
    }
}

pub const DEFAULT_NODES: usize = 1024;

/// `--patch` is a path or inline JSON; without it, the surface's default
/// patch with about `nodes` nodes.
pub fn load_patch(arg: Option<&str>, surface: &Surface, n: usize, nodes: usize) -> anyhow::Result<PatchSpec> {
    let Some(arg) = arg else {
        return Ok(surface.default_patch(n, nodes));
    };
    let text = if arg.trim_start().starts_with('{') { arg.to_string() } else { read(arg)? };
    serde_json::from_str(&text).map_err(|e| InputError(format!("bad patch: {}", e)).into())
}

/// Everything a run depends on; echoed into JSON output.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub group: GroupSource,
    pub surface: Option<String>,
    pub patch: Option<PatchSpec>,
    pub tol: Option<f64>,
    pub seed: u64,
}
