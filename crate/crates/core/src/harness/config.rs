//! Experiment configuration: flat `key = value` files, overridable key by key.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::covering::DEFAULT_NET_CAP;
use crate::error::{Error, Result};
use crate::lowloc::BtSchedule;
use crate::model::LinkKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Oful,
    Lowestr,
    Lowoful,
    Lowloc,
    Lowgloc,
}

impl Algo {
    pub fn name(&self) -> &'static str {
        match self {
            Algo::Oful => "oful",
            Algo::Lowestr => "lowestr",
            Algo::Lowoful => "lowoful",
            Algo::Lowloc => "lowloc",
            Algo::Lowgloc => "lowgloc",
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "oful" => Ok(Algo::Oful),
            "lowestr" => Ok(Algo::Lowestr),
            "lowoful" => Ok(Algo::Lowoful),
            "lowloc" => Ok(Algo::Lowloc),
            "lowgloc" => Ok(Algo::Lowgloc),
            other => Err(Error::Config(format!("unknown algo `{other}`"))),
        }
    }
}

/// Stage-1 length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum T1Spec {
    Fixed(usize),
    /// `floor(100 / ω_r)`.
    Auto,
    /// `(d1+d2)^{3/2} sqrt(rT) / ω_r`, capped at `T − 1`.
    Theorem4,
}

impl fmt::Display for T1Spec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            T1Spec::Fixed(n) => write!(f, "{n}"),
            T1Spec::Auto => f.write_str("auto"),
            T1Spec::Theorem4 => f.write_str("theorem4"),
        }
    }
}

impl FromStr for T1Spec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "auto" => Ok(T1Spec::Auto),
            "theorem4" => Ok(T1Spec::Theorem4),
            n => n.parse().map(T1Spec::Fixed).map_err(|_| {
                Error::Config(format!(
                    "t1 must be an integer, `auto` or `theorem4`, got `{n}`"
                ))
            }),
        }
    }
}

/// `floor(100 / ω_r)`, guarded against representation error in `ω_r`.
pub fn auto_t1(omega_r: f64) -> usize {
    (100.0 / omega_r + 1e-9).floor() as usize
}

/// Stage-1 solver step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSpec {
    Fixed(f64),
    /// `1/L` from the sample Gram matrix.
    Lipschitz,
}

impl fmt::Display for StepSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepSpec::Fixed(s) => write!(f, "{s}"),
            StepSpec::Lipschitz => f.write_str("lipschitz"),
        }
    }
}

impl FromStr for StepSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lipschitz" | "auto" => Ok(StepSpec::Lipschitz),
            n => n.parse().map(StepSpec::Fixed).map_err(|_| {
                Error::Config(format!("step must be a number or `lipschitz`, got `{n}`"))
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub algo: Algo,
    pub d1: usize,
    pub d2: usize,
    pub rank: usize,
    pub omega_r: f64,
    pub sigma: f64,
    pub delta: f64,
    pub horizon: usize,
    pub t1: T1Spec,
    pub arms: usize,
    pub runs: usize,
    pub seed: u64,
    pub link: LinkKind,
    pub step: StepSpec,
    /// LowLOC net resolution; unset means `1/T`.
    pub eps: Option<f64>,
    pub bt: Option<BtSchedule>,
    pub net_cap: usize,
    pub radius_scale: f64,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            algo: Algo::Lowestr,
            d1: 10,
            d2: 10,
            rank: 3,
            omega_r: 0.5,
            sigma: 0.01,
            delta: 0.01,
            horizon: 3000,
            t1: T1Spec::Fixed(200),
            arms: 100,
            runs: 20,
            seed: 0,
            link: LinkKind::Identity,
            step: StepSpec::Fixed(0.01),
            eps: None,
            bt: None,
            net_cap: DEFAULT_NET_CAP,
            radius_scale: 1.0,
            out: None,
        }
    }
}

/// Keys accepted in config files and as overrides.
pub const CONFIG_KEYS: &[&str] = &[
    "algo",
    "d1",
    "d2",
    "rank",
    "omega_r",
    "sigma",
    "delta",
    "horizon",
    "t1",
    "arms",
    "runs",
    "seed",
    "link",
    "step",
    "eps",
    "bt",
    "net_cap",
    "radius_scale",
    "out",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

impl ExperimentConfig {
    /// Sets one key; `-` and `_` are interchangeable in key names.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let k = key.trim().replace('-', "_").to_ascii_lowercase();
        let v = value.trim();
        match k.as_str() {
            "algo" => self.algo = v.parse()?,
            "d1" => self.d1 = parse(&k, v)?,
            "d2" => self.d2 = parse(&k, v)?,
            "rank" | "r" => self.rank = parse(&k, v)?,
            "omega_r" => self.omega_r = parse(&k, v)?,
            "sigma" => self.sigma = parse(&k, v)?,
            "delta" => self.delta = parse(&k, v)?,
            "horizon" | "t" => self.horizon = parse(&k, v)?,
            "t1" => self.t1 = v.parse()?,
            "arms" | "n_arms" => self.arms = parse(&k, v)?,
            "runs" => self.runs = parse(&k, v)?,
            "seed" | "base_seed" => self.seed = parse(&k, v)?,
            "link" => self.link = v.parse()?,
            "step" => self.step = v.parse()?,
            "eps" => self.eps = Some(parse(&k, v)?),
            "bt" => self.bt = Some(v.parse()?),
            "net_cap" => self.net_cap = parse(&k, v)?,
            "radius_scale" => self.radius_scale = parse(&k, v)?,
            "out" | "output_dir" => self.out = Some(PathBuf::from(v)),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.parse_text(&text)?;
        Ok(cfg)
    }

    /// The config in the same `key = value` form it is read from.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        line("algo", self.algo.to_string());
        line("d1", self.d1.to_string());
        line("d2", self.d2.to_string());
        line("rank", self.rank.to_string());
        line("omega_r", self.omega_r.to_string());
        line("sigma", self.sigma.to_string());
        line("delta", self.delta.to_string());
        line("horizon", self.horizon.to_string());
        line("t1", self.t1.to_string());
        line("arms", self.arms.to_string());
        line("runs", self.runs.to_string());
        line("seed", self.seed.to_string());
        line("link", format!("{:?}", self.link).to_ascii_lowercase());
        line("step", self.step.to_string());
        if let Some(e) = self.eps {
            line("eps", e.to_string());
        }
        if let Some(b) = self.bt {
            line("bt", format!("{b:?}").to_ascii_lowercase());
        }
        line("net_cap", self.net_cap.to_string());
        line("radius_scale", self.radius_scale.to_string());
        if let Some(o) = &self.out {
            line("out", o.display().to_string());
        }
        s
    }

    /// Stage-1 length after resolving `auto` and `theorem4`.
    pub fn resolved_t1(&self) -> usize {
        match self.t1 {
            T1Spec::Fixed(n) => n,
            T1Spec::Auto => auto_t1(self.omega_r),
            T1Spec::Theorem4 => {
                let t = crate::lowoful::t1_theorem4(
                    self.d1,
                    self.d2,
                    self.rank,
                    self.horizon,
                    self.omega_r,
                );
                (t.floor() as usize).clamp(1, self.horizon.saturating_sub(1).max(1))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d1", self.d1),
            ("d2", self.d2),
            ("rank", self.rank),
            ("horizon", self.horizon),
            ("arms", self.arms),
            ("runs", self.runs),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("`{k}` must be positive")));
            }
        }
        if self.rank > self.d1.min(self.d2) {
            return Err(Error::Config(format!(
                "rank {} exceeds min(d1, d2)",
                self.rank
            )));
        }
        if !(self.omega_r > 0.0 && self.omega_r <= 0.5) {
            return Err(Error::Config(format!(
                "omega_r {} must lie in (0, 0.5]",
                self.omega_r
            )));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config("sigma must be non-negative".into()));
        }
        if !(self.delta > 0.0 && self.delta < 0.25) {
            return Err(Error::Config(format!(
                "delta {} must lie in (0, 0.25)",
                self.delta
            )));
        }
        if let StepSpec::Fixed(s) = self.step {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config("step must be positive".into()));
            }
        }
        if !(self.radius_scale > 0.0 && self.radius_scale.is_finite()) {
            return Err(Error::Config("radius_scale must be positive".into()));
        }
        if let Some(e) = self.eps {
            if !(e > 0.0 && e <= 2.0) {
                return Err(Error::Config(format!("eps {e} must lie in (0, 2]")));
            }
        }
        match self.algo {
            Algo::Lowestr => {
                let t1 = self.resolved_t1();
                if t1 == 0 || t1 >= self.horizon {
                    return Err(Error::Config(format!(
                        "t1 {t1} must lie in 1..{} for lowestr",
                        self.horizon
                    )));
                }
            }
            Algo::Lowgloc if self.link == LinkKind::Identity => {}
            Algo::Lowloc if self.link != LinkKind::Identity => {
                return Err(Error::Config(
                    "lowloc uses the identity link; use lowgloc for others".into(),
                ));
            }
            _ => {}
        }
        if matches!(self.algo, Algo::Oful | Algo::Lowestr | Algo::Lowoful)
            && self.link != LinkKind::Identity
        {
            return Err(Error::Config(format!(
                "{} supports only the identity link",
                self.algo
            )));
        }
        Ok(())
    }
}
