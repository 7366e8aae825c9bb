//! Scenario files.
//!
//! TOML by default, JSON when the file name ends in `.json`. Every numeric
//! field accepts either a plain number or a string with an SI prefix and an
//! optional unit, e.g. `"2MHz"`, `"50mW"`, `"1e-9 W"`, `"50kbps"`.
//!
//! ```toml
//! seed = 7
//! num_users = 2
//!
//! [system]
//! bandwidth_per_subchannel = "2MHz"
//! num_subchannels = 4
//! circuit_power = "50mW"
//!
//! [user_defaults]
//! min_bits_rate = "50kbps"
//! max_power = "1W"
//!
//! [[users]]          # optional per-user overrides, one table per user
//! weight = 2
//!
//! [channel]
//! mean_gain = 1e-4   # or: gains = [[...], [...]]
//!
//! [solver]
//! max_outer_iters = 50
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{sample_gains, ChannelConfig, ChannelError};
use crate::model::{validate_scenario, Scenario, SystemParams, UserParams, ValidationErrors};
use crate::solver_partial::SolverConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: field `{field}`: {message}")]
    Parse { path: PathBuf, field: String, message: String },
    #[error("{path}: {source}")]
    Invalid {
        path: PathBuf,
        #[source]
        source: ValidationErrors,
    },
    #[error("{path}: {source}")]
    Channel {
        path: PathBuf,
        #[source]
        source: ChannelError,
    },
    #[error("{path}: gains given for {rows} users but {users} users configured")]
    UserCount { path: PathBuf, rows: usize, users: usize },
    #[error("{0}")]
    Argument(String),
}

/// A number written with an optional SI prefix and unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Quantity(pub f64);

const UNITS: [&str; 12] = ["bits/s", "bit/s", "b/s", "bps", "cycles/s", "Hz", "W", "J", "s", "bits", "bit", "b"];

/// Parses `"2MHz"`, `"50 mW"`, `"1e-9"`, `"3k"` into SI base units.
pub fn parse_si(text: &str) -> Result<f64, String> {
    let t = text.trim();
    let mut body = t;
    for unit in UNITS {
        if let Some(rest) = body.strip_suffix(unit) {
            body = rest.trim_end();
            break;
        }
    }
    if let Ok(v) = body.parse::<f64>() {
        return Ok(v);
    }
    let (scale, digits) = match body.chars().last() {
        Some('p') => (1e-12, &body[..body.len() - 1]),
        Some('n') => (1e-9, &body[..body.len() - 1]),
        Some('u') => (1e-6, &body[..body.len() - 1]),
        Some('µ') => (1e-6, &body[..body.len() - 'µ'.len_utf8()]),
        Some('m') => (1e-3, &body[..body.len() - 1]),
        Some('k') => (1e3, &body[..body.len() - 1]),
        Some('M') => (1e6, &body[..body.len() - 1]),
        Some('G') => (1e9, &body[..body.len() - 1]),
        Some('T') => (1e12, &body[..body.len() - 1]),
        _ => return Err(format!("cannot read `{text}` as a number")),
    };
    digits
        .trim_end()
        .parse::<f64>()
        .map(|v| v * scale)
        .map_err(|_| format!("cannot read `{text}` as a number"))
}

impl<'de> Deserialize<'de> for Quantity {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Quantity;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number or a string such as \"2MHz\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Quantity, E> {
                Ok(Quantity(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Quantity, E> {
                Ok(Quantity(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Quantity, E> {
                Ok(Quantity(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Quantity, E> {
                parse_si(v).map(Quantity).map_err(E::custom)
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidth_per_subchannel: Option<Quantity>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub block_duration: Option<Quantity>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_subchannels: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_power: Option<Quantity>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amplifier_coeff: Option<Quantity>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub circuit_power: Option<Quantity>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight: Option<Quantity>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cycles_per_bit: Option<Quantity>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chip_coeff: Option<Quantity>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_cpu_freq: Option<Quantity>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_bits_rate: Option<Quantity>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_power: Option<Quantity>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_gain: Option<Quantity>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gains: Option<Vec<Vec<Quantity>>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_users: Option<usize>,
    #[serde(default)]
    pub system: SystemSection,
    #[serde(default)]
    pub user_defaults: UserSection,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub users: Vec<UserSection>,
    #[serde(default)]
    pub channel: ChannelSection,
    #[serde(default)]
    pub solver: SolverConfig,
}

/// Default number of users when neither `num_users` nor `[[users]]` is given.
pub const DEFAULT_USERS: usize = 2;
pub const DEFAULT_SEED: u64 = 1;

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

/// Parses scenario text; `path` only selects the format and labels errors.
pub fn parse_scenario_file(text: &str, path: &Path) -> Result<ScenarioFile, ConfigError> {
    let parse_err = |field: String, message: String| ConfigError::Parse {
        path: path.to_path_buf(),
        field: if field.is_empty() || field == "." { "<root>".into() } else { field },
        message,
    };
    if is_json(path) {
        let mut de = serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(&mut de).map_err(|e| parse_err(e.path().to_string(), e.inner().to_string()))
    } else {
        let de = toml::Deserializer::parse(text).map_err(|e| parse_err(String::new(), e.to_string().trim_end().to_string()))?;
        serde_path_to_error::deserialize(de)
            .map_err(|e| parse_err(e.path().to_string(), e.inner().to_string().trim_end().to_string()))
    }
}

fn set(target: &mut f64, q: Option<Quantity>) {
    if let Some(Quantity(v)) = q {
        *target = v;
    }
}

fn apply_user(u: &mut UserParams, sec: &UserSection) {
    set(&mut u.weight, sec.weight);
    set(&mut u.cycles_per_bit, sec.cycles_per_bit);
    set(&mut u.chip_coeff, sec.chip_coeff);
    set(&mut u.max_cpu_freq, sec.max_cpu_freq);
    set(&mut u.min_bits_rate, sec.min_bits_rate);
    set(&mut u.max_power, sec.max_power);
}

impl ScenarioFile {
    /// Builds and validates the scenario. `seed_override` (from the command
    /// line) wins over the file's seed; gains are sampled from the seed
    /// unless given explicitly.
    pub fn resolve(&self, seed_override: Option<u64>, path: &Path) -> Result<Scenario, ConfigError> {
        let seed = seed_override.or(self.seed).unwrap_or(DEFAULT_SEED);
        let mut system = SystemParams::default();
        set(&mut system.bandwidth_per_subchannel, self.system.bandwidth_per_subchannel);
        set(&mut system.block_duration, self.system.block_duration);
        set(&mut system.noise_power, self.system.noise_power);
        set(&mut system.amplifier_coeff, self.system.amplifier_coeff);
        set(&mut system.circuit_power, self.system.circuit_power);
        if let Some(n) = self.system.num_subchannels {
            system.num_subchannels = n;
        }

        let k_users = if !self.users.is_empty() {
            self.users.len()
        } else if let Some(g) = &self.channel.gains {
            self.num_users.unwrap_or(g.len())
        } else {
            self.num_users.unwrap_or(DEFAULT_USERS)
        };
        let mut base = UserParams::default();
        apply_user(&mut base, &self.user_defaults);
        let users: Vec<UserParams> = (0..k_users)
            .map(|k| {
                let mut u = base.clone();
                if let Some(sec) = self.users.get(k) {
                    apply_user(&mut u, sec);
                }
                u
            })
            .collect();

        let gains = match &self.channel.gains {
            Some(g) => {
                if g.len() != k_users {
                    return Err(ConfigError::UserCount {
                        path: path.to_path_buf(),
                        rows: g.len(),
                        users: k_users,
                    });
                }
                g.iter().map(|row| row.iter().map(|q| q.0).collect()).collect()
            }
            None => {
                let mut cfg = ChannelConfig { rng_seed: seed, ..ChannelConfig::default() };
                set(&mut cfg.mean_gain, self.channel.mean_gain);
                sample_gains(&cfg, k_users, system.num_subchannels).map_err(|source| ConfigError::Channel {
                    path: path.to_path_buf(),
                    source,
                })?
            }
        };
        let scenario = Scenario {
            system,
            users,
            gains,
            rng_seed: seed,
        };
        validate_scenario(scenario).map_err(|source| ConfigError::Invalid {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Fully explicit file for `s`: every parameter written out, gains included.
    pub fn from_scenario(s: &Scenario, solver: &SolverConfig) -> Self {
        let q = |v: f64| Some(Quantity(v));
        let user = |u: &UserParams| UserSection {
            weight: q(u.weight),
            cycles_per_bit: q(u.cycles_per_bit),
            chip_coeff: q(u.chip_coeff),
            max_cpu_freq: q(u.max_cpu_freq),
            min_bits_rate: q(u.min_bits_rate),
            max_power: q(u.max_power),
        };
        Self {
            seed: Some(s.rng_seed),
            num_users: Some(s.num_users()),
            system: SystemSection {
                bandwidth_per_subchannel: q(s.system.bandwidth_per_subchannel),
                block_duration: q(s.system.block_duration),
                num_subchannels: Some(s.system.num_subchannels),
                noise_power: q(s.system.noise_power),
                amplifier_coeff: q(s.system.amplifier_coeff),
                circuit_power: q(s.system.circuit_power),
            },
            user_defaults: UserSection::default(),
            users: s.users.iter().map(user).collect(),
            channel: ChannelSection {
                mean_gain: None,
                gains: Some(s.gains.iter().map(|r| r.iter().map(|&g| Quantity(g)).collect()).collect()),
            },
            solver: solver.clone(),
        }
    }

    /// Serializes in the format implied by `path`.
    pub fn to_text(&self, path: &Path) -> String {
        if is_json(path) {
            let mut s = serde_json::to_string_pretty(self).expect("scenario serializes");
            s.push('\n');
            s
        } else {
            toml::to_string(self).expect("scenario serializes")
        }
    }
}

/// Reads and parses a scenario file.
pub fn load(path: &Path) -> Result<ScenarioFile, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scenario_file(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn si_suffixes() {
        assert_eq!(parse_si("2MHz"), Ok(2e6));
        assert!((parse_si("50mW").unwrap() - 0.05).abs() < 1e-18);
        assert_eq!(parse_si("1e-9 W"), Ok(1e-9));
        assert_eq!(parse_si("50kbps"), Ok(5e4));
        assert_eq!(parse_si("3"), Ok(3.0));
        assert_eq!(parse_si("1 s"), Ok(1.0));
        assert_eq!(parse_si("100 MHz"), Ok(1e8));
        assert!((parse_si("2.5 uW").unwrap() - 2.5e-6).abs() < 1e-21);
        assert!(parse_si("fast").is_err());
        assert!(parse_si("2 XHz").is_err());
    }

    #[test]
    fn toml_with_units() {
        let text = r#"
            seed = 9
            num_users = 3
            [system]
            bandwidth_per_subchannel = "1MHz"
            num_subchannels = 2
            circuit_power = "20mW"
            [user_defaults]
            min_bits_rate = "10kbps"
            [channel]
            mean_gain = 2e-4
            [solver]
            max_outer_iters = 30
        "#;
        let path = Path::new("s.toml");
        let f = parse_scenario_file(text, path).unwrap();
        assert_eq!(f.solver.max_outer_iters, 30);
        assert_eq!(f.solver.damping, SolverConfig::default().damping);
        let s = f.resolve(None, path).unwrap();
        assert_eq!(s.num_users(), 3);
        assert_eq!(s.system.bandwidth_per_subchannel, 1e6);
        assert!((s.system.circuit_power - 0.02).abs() < 1e-18);
        assert_eq!(s.users[2].min_bits_rate, 1e4);
        assert_eq!(s.rng_seed, 9);
        let expected = sample_gains(&ChannelConfig { mean_gain: 2e-4, rng_seed: 9 }, 3, 2).unwrap();
        assert_eq!(s.gains, expected);
        assert_eq!(f.resolve(Some(4), path).unwrap().rng_seed, 4);
    }

    #[test]
    fn empty_file_is_the_default_setup() {
        let path = Path::new("s.toml");
        let s = parse_scenario_file("", path).unwrap().resolve(None, path).unwrap();
        assert_eq!(s.system, SystemParams::default());
        assert_eq!(s.users, vec![UserParams::default(); 2]);
    }

    #[test]
    fn per_user_overrides() {
        let text = "[user_defaults]\nweight = 3\n[[users]]\n[[users]]\nweight = 0.5\n";
        let path = Path::new("s.toml");
        let s = parse_scenario_file(text, path).unwrap().resolve(None, path).unwrap();
        assert_eq!(s.users[0].weight, 3.0);
        assert_eq!(s.users[1].weight, 0.5);
    }

    #[test]
    fn bad_value_names_the_field() {
        let path = Path::new("s.toml");
        let err = parse_scenario_file("[system]\ncircuit_power = \"lots\"\n", path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("system.circuit_power"), "{msg}");
        let err = parse_scenario_file("[system]\ncircut_power = 1\n", path).unwrap_err();
        assert!(err.to_string().contains("circut_power"), "{err}");
    }

    #[test]
    fn syntax_error_reports_line() {
        let path = Path::new("s.toml");
        let err = parse_scenario_file("seed = 1\n[system\n", path).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let path = Path::new("s.json");
        let err = parse_scenario_file("{\n \"seed\": 1,\n \"system\": {\"noise_power\": \"x\"}\n}", path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("system.noise_power") && msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn invalid_values_are_all_reported() {
        let path = Path::new("s.toml");
        let text = "[system]\nnoise_power = 0\n[user_defaults]\nweight = -1\n";
        let err = parse_scenario_file(text, path).unwrap().resolve(None, path).unwrap_err();
        match err {
            ConfigError::Invalid { source, .. } => assert_eq!(source.0.len(), 3),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn explicit_round_trip() {
        for name in ["r.toml", "r.json"] {
            let path = Path::new(name);
            let s = ScenarioFile { seed: Some(5), ..ScenarioFile::default() }.resolve(None, path).unwrap();
            let file = ScenarioFile::from_scenario(&s, &SolverConfig::default());
            let text = file.to_text(path);
            let back = parse_scenario_file(&text, path).unwrap();
            assert_eq!(back, file);
            assert_eq!(back.resolve(None, path).unwrap(), s);
        }
    }
}
