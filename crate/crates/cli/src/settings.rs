//! Run settings. Defaults are overlaid by a flat `key = value` file and then
//! by command-line flags.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use informal_lob::quoting::{defaults, Intensity};
use informal_lob::simulation::{FillMode, SigmaMode, SimConfig};

macro_rules! settings {
    ($($key:ident = $default:expr => $help:literal;)*) => {
        /// Per-key overrides; each flag wins over the config file.
        #[derive(Args, Debug, Default)]
        pub struct Overrides {
            $(
                #[arg(long, global = true, value_name = "VALUE", help = $help)]
                pub $key: Option<String>,
            )*
        }

        impl Overrides {
            fn pairs(&self) -> Vec<(&'static str, Option<&String>)> {
                vec![$((stringify!($key), self.$key.as_ref()),)*]
            }
        }

        /// Every recognised key with its default and description.
        pub fn keys() -> Vec<(&'static str, String, &'static str)> {
            vec![$((stringify!($key), $default.to_string(), $help),)*]
        }
    };
}

settings! {
    format = "auto" => "input format: auto, csv or jsonl";
    expiry_days = informal_lob::book::DEFAULT_EXPIRY_DAYS => "days a resting order lives";
    horizon_days = "" => "use only the first N days of input (empty for all)";
    gamma = defaults::GAMMA => "risk aversion";
    intensity = "informal" => "fill intensity model: informal or classical";
    k = defaults::K => "price impact slope K";
    alpha = defaults::ALPHA => "order size decay rate, 1/USD";
    lambda = 1.0 => "market orders per day";
    a = 1.0 => "classical intensity scale";
    kappa = 1.5 => "classical intensity decay";
    sigma = defaults::SIGMA => "volatility: a number, fixed or rolling";
    sigma_window = 30 => "rolling volatility window, days";
    fill_mode = "flow_cross" => "maker fills: flow_cross or poisson";
    dt = 1.0 / 96.0 => "poisson step, days";
    quote_size = 100.0 => "USD quoted per side";
    lot_size = 100.0 => "USD per inventory lot";
    c0 = defaults::INITIAL_CASH => "initial cash, CUP";
    q0 = defaults::INITIAL_INVENTORY => "initial inventory, lots";
    legacy_spread = false => "use the 2/gamma spread term";
    replicates = 1000 => "bootstrap replicates";
    insertion_day = 0 => "day index the maker enters, or none";
    window = 30 => "elasticity regression window, days";
    extra_days = 15 => "resampled days appended after the data";
    noise = "deterministic" => "price chain noise: deterministic or stochastic";
    xi = "" => "fixed elasticity instead of the rolling estimate";
    tau = 1 => "price impact lag, events";
    impact_bins = informal_lob::stats::DEFAULT_IMPACT_BINS => "price impact size bins";
    hist_bins = 50 => "histogram bins";
}

/// Fully resolved settings, echoed into every manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

fn normalise(key: &str) -> String {
    key.trim().replace('-', "_")
}

/// Parses a config file: one `key = value` per line, `#` starts a comment.
pub fn parse_file(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected `key = value`", i + 1))?;
        out.insert(normalise(key), value.trim().to_string());
    }
    Ok(out)
}

impl Settings {
    pub fn resolve(file: Option<&Path>, overrides: &Overrides, seed: Option<u64>) -> Result<Self> {
        let mut values: BTreeMap<String, String> =
            keys().into_iter().map(|(k, d, _)| (k.to_string(), d)).collect();
        values.insert("seed".into(), String::new());
        if let Some(path) = file {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            for (key, value) in parse_file(&text).with_context(|| format!("config {}", path.display()))? {
                if !values.contains_key(&key) {
                    bail!("config {}: unknown key `{key}`", path.display());
                }
                values.insert(key, value);
            }
        }
        for (key, value) in overrides.pairs() {
            if let Some(v) = value {
                values.insert(key.to_string(), v.clone());
            }
        }
        if let Some(s) = seed {
            values.insert("seed".into(), s.to_string());
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    pub fn str(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn set(&mut self, key: &str, value: String) {
        self.values.insert(key.into(), value);
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.str(key);
        raw.parse()
            .map_err(|e| anyhow!("invalid value `{raw}` for `{key}`: {e}"))
    }

    /// `None` when the key is empty.
    pub fn optional<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        if self.str(key).is_empty() {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }

    pub fn seed(&self) -> Result<Option<u64>> {
        self.optional("seed")
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        let intensity = match self.str("intensity") {
            "informal" => Intensity::Informal {
                lambda: self.get("lambda")?,
                alpha: self.get("alpha")?,
                k: self.get("k")?,
            },
            "classical" => Intensity::Classical {
                a: self.get("a")?,
                kappa: self.get("kappa")?,
            },
            other => bail!("invalid value `{other}` for `intensity`: expected informal or classical"),
        };
        let sigma_mode = match self.str("sigma") {
            "fixed" => SigmaMode::Fixed,
            "rolling" => SigmaMode::Rolling {
                window_days: self.get("sigma_window")?,
            },
            _ => SigmaMode::Constant {
                sigma: self.get("sigma")?,
            },
        };
        let fill_mode = match self.str("fill_mode") {
            "flow_cross" | "flow-cross" => FillMode::FlowCross,
            "poisson" => FillMode::Poisson,
            other => bail!("invalid value `{other}` for `fill_mode`: expected flow_cross or poisson"),
        };
        let config = SimConfig {
            c0: self.get("c0")?,
            q0: self.get("q0")?,
            gamma: self.get("gamma")?,
            intensity,
            sigma_mode,
            fill_mode,
            dt: self.get("dt")?,
            quote_size: self.get("quote_size")?,
            lot_size: self.get("lot_size")?,
            expiry_days: self.get("expiry_days")?,
            legacy_spread: self.get("legacy_spread")?,
            ..SimConfig::default()
        };
        config.validate()?;
        Ok(config)
    }
}
